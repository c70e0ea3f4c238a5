//! Local architecture: typed events flowing through components linked by
//! pipes and buses.

mod assembly;
mod components;
mod event;
pub mod nmea;

pub use assembly::{assemble, gps_conduit_spec, Assembly, AssemblySpec, BusDecl, ComponentDecl, PipelineError, SinkOutput};
pub use components::{
    nmea_adapt, threshold_filter, Buffer, Component, ComponentError, ComponentRegistry, FilterDecision, NmeaAdapter,
    Params, Relay, StepContext, ThresholdFilter,
};
pub use event::{Event, EventBody, EventKind, KindSet, WireError};
