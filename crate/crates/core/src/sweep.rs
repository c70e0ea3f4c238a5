//! Batch evaluation over independent inputs.
//!
//! With the `parallel` feature (on by default) batches run on the rayon
//! pool; without it, or with [`Exec::Sequential`], they run in order on the
//! calling thread. Results always come back in input order, so both paths
//! produce identical output.

use crate::geo::{GeoError, GeoPoint, RegionId, WorldTree};
use crate::ids::NodeId;
use crate::overlay::{deliver, DeliveryTrace, MessageEnvelope, Network, RoutingError};
use crate::pipeline::EventBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub fn map_with<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_with(Exec::default(), items, f)
}

/// Per-depth transition counts for each trace.
pub fn transition_tables(exec: Exec, world: &WorldTree, traces: &[Vec<GeoPoint>]) -> Result<Vec<Vec<usize>>, GeoError> {
    map_with(exec, traces, |t| world.transition_profile(t)).into_iter().collect()
}

pub fn resolve_all(exec: Exec, world: &WorldTree, points: &[GeoPoint]) -> Vec<Result<RegionId, GeoError>> {
    map_with(exec, points, |p| world.resolve_deepest(*p))
}

/// Routes one probe envelope per (start, target) pair over a shared,
/// unchanged network.
pub fn route_all(
    exec: Exec,
    net: &Network,
    cases: &[(NodeId, RegionId)],
) -> Vec<Result<DeliveryTrace, RoutingError>> {
    map_with(exec, cases, |(start, target)| {
        let mut env = MessageEnvelope::new(
            0,
            start.clone(),
            target.clone(),
            EventBody::Generic {
                name: "probe".into(),
                attrs: Default::default(),
            },
        );
        deliver(net, start, &mut env)
    })
}
