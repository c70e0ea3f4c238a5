//! Seeded random worlds, overlays and mobility traces for property checks
//! and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

use crate::geo::{GeoPoint, Rect, RegionId, RegionRecord, WorldTree};
use crate::ids::NodeId;
use crate::overlay::{Network, NodeRecord, DEFAULT_HOP_LIMIT};

/// Shape limits for [`world`].
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_depth: usize,
    pub max_fanout: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            max_depth: 5,
            max_fanout: 4,
        }
    }
}

pub const WORLD_BOUNDS: Rect = Rect::new(-90.0, 90.0, -180.0, 180.0);

/// A random region tree over the whole globe. Children are strips of their
/// parent along its longer side, each shrunk by a random margin, so
/// siblings never overlap and may leave gaps.
pub fn world(rng: &mut impl RngCore, shape: Shape) -> WorldTree {
    let mut records = vec![RegionRecord::new("r", None, WORLD_BOUNDS)];
    let mut stack = vec![("r".to_string(), WORLD_BOUNDS, 0usize)];
    while let Some((id, b, depth)) = stack.pop() {
        if depth == shape.max_depth {
            continue;
        }
        let k = rng.random_range(0..=shape.max_fanout);
        let along_lat = (b.lat_max - b.lat_min) >= (b.lon_max - b.lon_min);
        let (lo, hi) = if along_lat { (b.lat_min, b.lat_max) } else { (b.lon_min, b.lon_max) };
        let w = (hi - lo) / k.max(1) as f64;
        for i in 0..k {
            let mut a = lo + w * i as f64;
            let mut z = if i + 1 == k { hi } else { lo + w * (i + 1) as f64 };
            if rng.random_bool(0.5) {
                let m = w * rng.random_range(0.0..0.2);
                a += m;
                z -= m;
            }
            let rect = if along_lat {
                Rect::new(a, z, b.lon_min, b.lon_max)
            } else {
                Rect::new(b.lat_min, b.lat_max, a, z)
            };
            let child = format!("{id}.{i}");
            records.push(RegionRecord::new(&child, Some(&id), rect));
            stack.push((child, rect, depth + 1));
        }
    }
    WorldTree::from_records(records).expect("generated world is valid")
}

/// One node per region with probability `own` (the root always gets one).
/// Each node's parent is the node of its nearest owned ancestor region.
pub fn topology(rng: &mut impl RngCore, world: &WorldTree, own: f64) -> Vec<NodeRecord> {
    let mut order: Vec<&RegionId> = world.regions().map(|r| &r.id).collect();
    order.sort_by_key(|id| (world.depth(id), (*id).clone()));
    let mut owner: std::collections::BTreeMap<RegionId, NodeId> = Default::default();
    let mut out = Vec::new();
    for id in order {
        if id != world.root() && !rng.random_bool(own) {
            continue;
        }
        let parent = world
            .ancestry(id)
            .expect("region exists")
            .iter()
            .rev()
            .skip(1)
            .find_map(|a| owner.get(a).cloned());
        let node = NodeId::new(format!("n-{id}"));
        out.push(NodeRecord::new(node.as_str(), id.as_str(), parent.as_ref().map(NodeId::as_str)));
        owner.insert(id.clone(), node);
    }
    out
}

/// Adds up to `count` random shortcut entries, each naming a real owner.
pub fn add_known(rng: &mut impl RngCore, records: &mut [NodeRecord], count: usize) {
    if records.is_empty() {
        return;
    }
    let owners: Vec<(RegionId, NodeId)> = records.iter().map(|r| (r.region.clone(), r.id.clone())).collect();
    for _ in 0..count {
        let i = rng.random_range(0..records.len());
        let (region, node) = owners.choose(rng).expect("non-empty").clone();
        if records[i].id != node {
            records[i].known.push((region, node));
        }
    }
}

pub fn network(rng: &mut impl RngCore, shape: Shape, own: f64) -> Network {
    let w = world(rng, shape);
    let records = topology(rng, &w, own);
    Network::new(w, records, DEFAULT_HOP_LIMIT).expect("generated topology is valid")
}

/// A random point inside `r`.
pub fn point_in(rng: &mut impl RngCore, r: &Rect) -> GeoPoint {
    GeoPoint {
        lat: rng.random_range(r.lat_min..r.lat_max),
        lon: rng.random_range(r.lon_min..r.lon_max),
    }
}

/// A walk through the world: mostly small steps, sometimes a jump to a
/// random region's interior so deep regions get visited.
pub fn trace(rng: &mut impl RngCore, world: &WorldTree, len: usize) -> Vec<GeoPoint> {
    let regions: Vec<&Rect> = world.regions().map(|r| &r.bounds).collect();
    let b = world.root_region().bounds;
    let mut out = Vec::with_capacity(len);
    let start = *regions.choose(rng).expect("world has a root");
    let mut p = point_in(rng, start);
    for _ in 0..len {
        out.push(p);
        p = if rng.random_bool(0.1) {
            let r = *regions.choose(rng).unwrap();
            point_in(rng, r)
        } else {
            let step = rng.random_range(0.01..2.0);
            GeoPoint {
                lat: (p.lat + rng.random_range(-step..step)).clamp(b.lat_min, b.lat_max - 1e-9),
                lon: (p.lon + rng.random_range(-step..step)).clamp(b.lon_min, b.lon_max - 1e-9),
            }
        };
    }
    out
}
