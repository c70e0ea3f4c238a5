//! Brute-force reference answers used to cross-check the real algorithms.
//!
//! These walk every region or node instead of descending the tree, and
//! compute distances a different way, so a shared bug is unlikely.

use std::collections::{BTreeMap, VecDeque};

use crate::geo::{GeoPoint, RegionId, WorldTree};
use crate::ids::NodeId;
use crate::overlay::Network;
use crate::pipeline::nmea::EARTH_RADIUS_M;

/// Deepest region whose rectangle holds `p`, found by scanning all regions.
pub fn scan_deepest(world: &WorldTree, p: GeoPoint) -> Option<RegionId> {
    world
        .regions()
        .filter(|r| r.bounds.lat_min <= p.lat && p.lat < r.bounds.lat_max)
        .filter(|r| r.bounds.lon_min <= p.lon && p.lon < r.bounds.lon_max)
        .max_by_key(|r| r.depth)
        .map(|r| r.id.clone())
}

fn up_chain(world: &WorldTree, region: &RegionId) -> Vec<RegionId> {
    let mut out = vec![region.clone()];
    while let Some(parent) = world.region(out.last().unwrap()).and_then(|r| r.parent.clone()) {
        out.push(parent);
    }
    out
}

/// The node that should end up holding anything addressed to `region`:
/// among all nodes whose region is `region` or one of its ancestors, the
/// deepest one.
pub fn owning_node(net: &Network, region: &RegionId) -> Option<NodeId> {
    let chain = up_chain(net.world(), region);
    net.nodes()
        .filter_map(|n| chain.iter().position(|r| *r == n.managed).map(|pos| (pos, n.id.clone())))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, id)| id)
}

/// Shortest path between two nodes over parent/child links.
pub fn tree_path(net: &Network, from: &NodeId, to: &NodeId) -> Option<Vec<NodeId>> {
    let mut prev: BTreeMap<NodeId, Option<NodeId>> = BTreeMap::from([(from.clone(), None)]);
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(id) = queue.pop_front() {
        if &id == to {
            let mut path = vec![id.clone()];
            while let Some(Some(p)) = prev.get(path.last().unwrap()) {
                path.push(p.clone());
            }
            path.reverse();
            return Some(path);
        }
        let node = net.node(&id)?;
        let links = node.parent.iter().chain(node.children.values());
        for next in links {
            if !prev.contains_key(next) {
                prev.insert(next.clone(), Some(id.clone()));
                queue.push_back(next.clone());
            }
        }
    }
    None
}

/// Great-circle distance through the chord between unit vectors.
pub fn distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let v = |p: GeoPoint| {
        let (lat, lon) = (p.lat.to_radians(), p.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    };
    let (u, w) = (v(a), v(b));
    let chord = ((u[0] - w[0]).powi(2) + (u[1] - w[1]).powi(2) + (u[2] - w[2]).powi(2)).sqrt();
    2.0 * EARTH_RADIUS_M * (chord / 2.0).min(1.0).asin()
}
