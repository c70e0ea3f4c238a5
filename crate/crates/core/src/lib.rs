//! Geo-spatial smart-space infrastructure: a region hierarchy, local event
//! pipelines, a hierarchical peer-to-peer overlay that routes by region,
//! location-bound hearsay messaging, multi-level profile caching, and a
//! deterministic simulator tying them together.

pub mod gen;
pub mod geo;
pub mod hearsay;
pub mod ids;
pub mod oracle;
pub mod overlay;
pub mod pipeline;
pub mod profile_cache;
pub mod sim;
pub mod sweep;

pub use geo::{GeoPoint, Rect, Region, RegionId, WorldTree};
pub use ids::{HearsayId, NodeId, Tick, UserId};
pub use overlay::{Network, OverlayNode};
