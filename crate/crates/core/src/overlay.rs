//! Hierarchical peer-to-peer overlay with geo-spatial routing.
//!
//! Every node manages one region. A message names a target region and each
//! node it reaches picks one of: handle it locally, pass it to a child,
//! jump to a known node, pass it to the parent, or broadcast to its peers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::geo::{strip_comment, GeoError, GeoPoint, RegionId, WorldTree};
use crate::hearsay::HearsayStore;
use crate::ids::{NodeId, Tick, UserId};
use crate::pipeline::{EventBody, EventKind};
use crate::profile_cache::{CachePolicy, CacheStats, Profile, ProfileCache};

pub const DEFAULT_HOP_LIMIT: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("unknown target region `{0}`")]
    UnknownTargetRegion(RegionId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("expected a location event, got {0}")]
    NotALocation(EventKind),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("node `{0}` is defined more than once")]
    DuplicateNode(NodeId),
    #[error("node `{node}` manages unknown region `{region}`")]
    UnknownRegion { node: NodeId, region: RegionId },
    #[error("region `{region}` is managed by both `{first}` and `{second}`")]
    RegionOwnedTwice { region: RegionId, first: NodeId, second: NodeId },
    #[error("node `{node}` names unknown parent `{parent}`")]
    UnknownParent { node: NodeId, parent: NodeId },
    #[error("node `{child}` manages a region outside the region of its parent `{parent}`")]
    ChildOutsideParent { child: NodeId, parent: NodeId },
    #[error("node `{node}`: known entry {region}={target} does not name the node managing that region")]
    BadKnownEntry { node: NodeId, region: RegionId, target: NodeId },
    #[error("hop limit must be positive")]
    ZeroHopLimit,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One line of a topology file.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub region: RegionId,
    pub parent: Option<NodeId>,
    pub known: Vec<(RegionId, NodeId)>,
}

impl NodeRecord {
    pub fn new(id: &str, region: &str, parent: Option<&str>) -> Self {
        Self {
            id: id.into(),
            region: region.into(),
            parent: parent.map(NodeId::from),
            known: Vec::new(),
        }
    }

    pub fn knowing(mut self, region: &str, node: &str) -> Self {
        self.known.push((region.into(), node.into()));
        self
    }
}

/// Parses `node region parent [region=node,...]` lines.
pub fn parse_topology<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Vec<NodeRecord>, TopologyError> {
    let mut out = Vec::new();
    for (line, raw) in lines {
        let text = strip_comment(raw);
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(TopologyError::Parse {
                line,
                reason: "expected `node region parent [region=node,...]`".into(),
            });
        }
        let mut rec = NodeRecord::new(fields[0], fields[1], (fields[2] != "-").then_some(fields[2]));
        if let Some(list) = fields.get(3) {
            for entry in list.split(',').filter(|e| !e.is_empty()) {
                let (r, n) = entry.split_once('=').ok_or_else(|| TopologyError::Parse {
                    line,
                    reason: format!("node `{}`: known entry `{entry}` is not region=node", fields[0]),
                })?;
                rec = rec.knowing(r, n);
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayNode {
    pub id: NodeId,
    pub managed: RegionId,
    pub parent: Option<NodeId>,
    pub children: BTreeMap<RegionId, NodeId>,
    pub peers: BTreeSet<NodeId>,
    pub known: BTreeMap<RegionId, NodeId>,
    /// Where the server physically runs. Routing never looks at it.
    pub host: Option<String>,
    pub hearsay: HearsayStore,
    pub cache: ProfileCache,
    /// Authoritative profiles of users whose home is this node.
    pub profiles: BTreeMap<UserId, Profile>,
    /// Ancestor nodes holding hearsay that covers this node's region; entries
    /// seen here are forwarded to them.
    pub watchers: BTreeSet<NodeId>,
}

/// The routable unit. `target` is always a region; a sender that only
/// knows a user resolves it to the user's home region first.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub msg_id: u64,
    pub target: RegionId,
    pub payload: EventBody,
    pub hops: u32,
    pub visited: BTreeSet<NodeId>,
    pub origin: NodeId,
}

impl MessageEnvelope {
    pub fn new(msg_id: u64, origin: NodeId, target: RegionId, payload: EventBody) -> Self {
        Self {
            msg_id,
            target,
            payload,
            hops: 0,
            visited: BTreeSet::new(),
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutingDecision {
    Local,
    ToChild(NodeId),
    ToKnownPeer(NodeId),
    ToParent,
    BroadcastPeers,
}

/// Picks the next step for `env` at `node`.
///
/// Precedence is Local, ToChild, ToKnownPeer, ToParent, BroadcastPeers.
/// Nodes already in `env.visited` are never chosen. A known entry is only
/// used when its region covers the target but not the node's own region;
/// an entry covering both is reachable at least as fast through the parent.
pub fn decide(node: &OverlayNode, world: &WorldTree, env: &MessageEnvelope) -> Result<RoutingDecision, RoutingError> {
    let target = &env.target;
    if world.region(target).is_none() {
        return Err(RoutingError::UnknownTargetRegion(target.clone()));
    }
    if *target == node.managed {
        return Ok(RoutingDecision::Local);
    }
    let depth = |r: &RegionId| world.depth(r).unwrap_or(0);
    let unvisited = |n: &NodeId| !env.visited.contains(n);
    let covering = |entries: &BTreeMap<RegionId, NodeId>, extra: &dyn Fn(&RegionId) -> bool| {
        entries
            .iter()
            .filter(|(r, n)| world.is_ancestor_or_self(r, target) && extra(r) && unvisited(n))
            .max_by_key(|(r, _)| depth(r))
            .map(|(_, n)| n.clone())
    };

    if world.is_strict_descendant(target, &node.managed) {
        if let Some(child) = covering(&node.children, &|_| true) {
            return Ok(RoutingDecision::ToChild(child));
        }
        if let Some(peer) = covering(&node.known, &|r| world.is_strict_descendant(r, &node.managed)) {
            return Ok(RoutingDecision::ToKnownPeer(peer));
        }
        return Ok(RoutingDecision::Local);
    }

    if let Some(peer) = covering(&node.known, &|r| !world.is_ancestor_or_self(r, &node.managed)) {
        return Ok(RoutingDecision::ToKnownPeer(peer));
    }
    match &node.parent {
        Some(p) if unvisited(p) => Ok(RoutingDecision::ToParent),
        _ => Ok(RoutingDecision::BroadcastPeers),
    }
}

/// One node processing the envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub node: NodeId,
    pub from: Option<NodeId>,
    pub hops: u32,
    pub decision: Option<RoutingDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Undeliverable {
    HopLimit,
    /// Every branch ran out of unvisited nodes.
    NoRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryStatus {
    Delivered(NodeId),
    Undeliverable(Undeliverable),
}

/// Every node that processed a message, in processing order, and the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryTrace {
    pub msg_id: u64,
    pub steps: Vec<Step>,
    pub status: DeliveryStatus,
}

impl DeliveryTrace {
    pub fn terminal(&self) -> Option<&NodeId> {
        match &self.status {
            DeliveryStatus::Delivered(n) => Some(n),
            DeliveryStatus::Undeliverable(_) => None,
        }
    }

    pub fn is_delivered(&self) -> bool {
        self.terminal().is_some()
    }

    /// Nodes from the start to the terminal node along the delivering
    /// branch; empty when undelivered.
    pub fn path(&self) -> Vec<NodeId> {
        let Some(mut cur) = self.terminal().cloned() else {
            return Vec::new();
        };
        let by_node: BTreeMap<&NodeId, &Step> = self.steps.iter().map(|s| (&s.node, s)).collect();
        let mut path = vec![cur.clone()];
        while let Some(prev) = by_node.get(&cur).and_then(|s| s.from.clone()) {
            path.push(prev.clone());
            cur = prev;
        }
        path.reverse();
        path
    }

    /// Hops taken by the delivering branch.
    pub fn hops(&self) -> Option<u32> {
        let t = self.terminal()?;
        self.steps.iter().find(|s| &s.node == t).map(|s| s.hops)
    }

    /// One log line: `route msg=<id> status=<s> path=a,b,c visited=<n>`.
    pub fn log_line(&self) -> String {
        let status = match &self.status {
            DeliveryStatus::Delivered(n) => format!("delivered:{n}"),
            DeliveryStatus::Undeliverable(Undeliverable::HopLimit) => "undeliverable:hop-limit".to_string(),
            DeliveryStatus::Undeliverable(Undeliverable::NoRoute) => "undeliverable:no-route".to_string(),
        };
        let nodes: Vec<&str> = self.steps.iter().map(|s| s.node.as_str()).collect();
        format!("route msg={} status={status} nodes={}", self.msg_id, nodes.join(","))
    }
}

/// Observed traffic: every envelope arrival at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct HopRecord {
    pub msg_id: u64,
    pub node: NodeId,
    pub kind: EventKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRecord {
    pub msg_id: u64,
    pub kind: EventKind,
    pub delivered: bool,
    pub hops: Option<u32>,
}

/// A hearsay record evaluated against a user's profile on some node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub node: NodeId,
    pub hearsay: crate::ids::HearsayId,
    pub user: UserId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficLog {
    pub hops: Vec<HopRecord>,
    pub envelopes: Vec<EnvelopeRecord>,
    pub matches: Vec<MatchRecord>,
    pub routes: Vec<String>,
}

impl TrafficLog {
    pub fn arrivals_at(&self, node: &NodeId) -> usize {
        self.hops.iter().filter(|h| &h.node == node).count()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    world: WorldTree,
    nodes: BTreeMap<NodeId, OverlayNode>,
    region_owner: BTreeMap<RegionId, NodeId>,
    pub hop_limit: u32,
    /// Home node of every registered user.
    directory: BTreeMap<UserId, NodeId>,
    /// `None` disables profile caching.
    pub cache_policy: Option<CachePolicy>,
    pub cache_stats: CacheStats,
    pub traffic: TrafficLog,
    next_msg: u64,
}

impl Network {
    pub fn new(world: WorldTree, records: Vec<NodeRecord>, hop_limit: u32) -> Result<Self, TopologyError> {
        if hop_limit == 0 {
            return Err(TopologyError::ZeroHopLimit);
        }
        let mut nodes: BTreeMap<NodeId, OverlayNode> = BTreeMap::new();
        let mut region_owner: BTreeMap<RegionId, NodeId> = BTreeMap::new();
        for rec in &records {
            if world.region(&rec.region).is_none() {
                return Err(TopologyError::UnknownRegion {
                    node: rec.id.clone(),
                    region: rec.region.clone(),
                });
            }
            if let Some(first) = region_owner.insert(rec.region.clone(), rec.id.clone()) {
                return Err(TopologyError::RegionOwnedTwice {
                    region: rec.region.clone(),
                    first,
                    second: rec.id.clone(),
                });
            }
            let node = OverlayNode {
                id: rec.id.clone(),
                managed: rec.region.clone(),
                parent: rec.parent.clone(),
                children: BTreeMap::new(),
                peers: BTreeSet::new(),
                known: BTreeMap::new(),
                host: None,
                hearsay: HearsayStore::default(),
                cache: ProfileCache::default(),
                profiles: BTreeMap::new(),
                watchers: BTreeSet::new(),
            };
            if nodes.insert(rec.id.clone(), node).is_some() {
                return Err(TopologyError::DuplicateNode(rec.id.clone()));
            }
        }

        for rec in &records {
            if let Some(parent) = &rec.parent {
                let Some(p) = nodes.get(parent) else {
                    return Err(TopologyError::UnknownParent {
                        node: rec.id.clone(),
                        parent: parent.clone(),
                    });
                };
                if !world.is_strict_descendant(&rec.region, &p.managed) {
                    return Err(TopologyError::ChildOutsideParent {
                        child: rec.id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
            for (region, target) in &rec.known {
                if region_owner.get(region) != Some(target) {
                    return Err(TopologyError::BadKnownEntry {
                        node: rec.id.clone(),
                        region: region.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        // strict region descent along parent links rules out cycles

        let mut by_parent: BTreeMap<Option<NodeId>, BTreeSet<NodeId>> = BTreeMap::new();
        for rec in &records {
            by_parent.entry(rec.parent.clone()).or_default().insert(rec.id.clone());
        }
        for rec in &records {
            if let Some(parent) = &rec.parent {
                nodes
                    .get_mut(parent)
                    .unwrap()
                    .children
                    .insert(rec.region.clone(), rec.id.clone());
            }
            let node = nodes.get_mut(&rec.id).unwrap();
            node.peers = by_parent[&rec.parent].iter().filter(|n| **n != rec.id).cloned().collect();
            node.known = rec.known.iter().cloned().collect();
        }

        Ok(Self {
            world,
            nodes,
            region_owner,
            hop_limit,
            directory: BTreeMap::new(),
            cache_policy: Some(CachePolicy::default()),
            cache_stats: CacheStats::default(),
            traffic: TrafficLog::default(),
            next_msg: 1,
        })
    }

    pub fn world(&self) -> &WorldTree {
        &self.world
    }

    pub fn node(&self, id: &NodeId) -> Option<&OverlayNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut OverlayNode> {
        self.nodes.get_mut(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OverlayNode> {
        self.nodes.values()
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut OverlayNode> {
        self.nodes.values_mut()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn owner_of(&self, region: &RegionId) -> Option<&NodeId> {
        self.region_owner.get(region)
    }

    /// Tree depth of the region a node manages.
    pub fn node_depth(&self, id: &NodeId) -> usize {
        self.nodes
            .get(id)
            .and_then(|n| self.world.depth(&n.managed))
            .unwrap_or(0)
    }

    pub fn set_host(&mut self, node: &NodeId, host: &str) {
        if let Some(n) = self.nodes.get_mut(node) {
            n.host = Some(host.to_string());
        }
    }

    /// Replaces a node's known entries. Each entry must name the node that
    /// manages the region.
    pub fn set_known(&mut self, node: &NodeId, entries: Vec<(RegionId, NodeId)>) -> Result<(), TopologyError> {
        for (region, target) in &entries {
            if self.region_owner.get(region) != Some(target) {
                return Err(TopologyError::BadKnownEntry {
                    node: node.clone(),
                    region: region.clone(),
                    target: target.clone(),
                });
            }
        }
        let n = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| TopologyError::UnknownParent {
                node: node.clone(),
                parent: node.clone(),
            })?;
        n.known = entries.into_iter().collect();
        Ok(())
    }

    /// Stores a profile at its home node.
    pub fn register_profile(&mut self, profile: Profile) -> Result<(), crate::profile_cache::CacheError> {
        use crate::profile_cache::CacheError;
        if profile.contacts.is_empty() {
            return Err(CacheError::NoContacts(profile.user));
        }
        let home = self
            .nodes
            .get_mut(&profile.home)
            .ok_or_else(|| CacheError::UnknownHome(profile.home.clone()))?;
        self.directory.insert(profile.user.clone(), profile.home.clone());
        home.profiles.insert(profile.user.clone(), profile);
        Ok(())
    }

    pub fn home_of(&self, user: &UserId) -> Option<&NodeId> {
        self.directory.get(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.directory.keys()
    }

    pub fn next_msg_id(&mut self) -> u64 {
        let id = self.next_msg;
        self.next_msg += 1;
        id
    }

    /// Logs every arrival of a routed envelope.
    pub fn record(&mut self, env: &MessageEnvelope, trace: &DeliveryTrace) {
        let payload = env.payload.to_xml();
        for step in &trace.steps {
            self.traffic.hops.push(HopRecord {
                msg_id: env.msg_id,
                node: step.node.clone(),
                kind: env.payload.kind(),
                payload: payload.clone(),
            });
        }
        self.traffic.envelopes.push(EnvelopeRecord {
            msg_id: env.msg_id,
            kind: env.payload.kind(),
            delivered: trace.is_delivered(),
            hops: trace.hops(),
        });
        self.traffic.routes.push(trace.log_line());
    }

    /// Logs an envelope that follows a fixed node sequence (replies).
    pub fn record_path(&mut self, msg_id: u64, payload: &EventBody, path: &[NodeId]) {
        let xml = payload.to_xml();
        for node in path {
            self.traffic.hops.push(HopRecord {
                msg_id,
                node: node.clone(),
                kind: payload.kind(),
                payload: xml.clone(),
            });
        }
        self.traffic.envelopes.push(EnvelopeRecord {
            msg_id,
            kind: payload.kind(),
            delivered: true,
            hops: Some(path.len().saturating_sub(1) as u32),
        });
        let nodes: Vec<&str> = path.iter().map(NodeId::as_str).collect();
        self.traffic
            .routes
            .push(format!("route msg={msg_id} status=delivered:{} nodes={}", nodes.last().unwrap_or(&"-"), nodes.join(",")));
    }
}

/// Routes `env` from `start` until some node handles it locally.
pub fn deliver(net: &Network, start: &NodeId, env: &mut MessageEnvelope) -> Result<DeliveryTrace, RoutingError> {
    deliver_with(net, start, env, &mut |_, _| false)
}

/// Like [`deliver`], but `intercept` may answer the message at any node
/// after the first one (used for cache hits en route).
pub fn deliver_with(
    net: &Network,
    start: &NodeId,
    env: &mut MessageEnvelope,
    intercept: &mut dyn FnMut(&OverlayNode, &MessageEnvelope) -> bool,
) -> Result<DeliveryTrace, RoutingError> {
    if !net.nodes.contains_key(start) {
        return Err(RoutingError::UnknownNode(start.clone()));
    }
    if net.world.region(&env.target).is_none() {
        return Err(RoutingError::UnknownTargetRegion(env.target.clone()));
    }
    let mut steps = Vec::new();
    let mut queue = VecDeque::from([(start.clone(), None::<NodeId>, 0u32)]);
    let mut hit_limit = false;

    while let Some((id, from, hops)) = queue.pop_front() {
        // a broadcast may enqueue the same node along two branches
        if env.visited.contains(&id) {
            continue;
        }
        let node = &net.nodes[&id];
        env.visited.insert(id.clone());
        env.hops = hops;
        let mut step = Step {
            node: id.clone(),
            from,
            hops,
            decision: None,
        };
        if hops > 0 && intercept(node, env) {
            steps.push(step);
            return Ok(DeliveryTrace {
                msg_id: env.msg_id,
                steps,
                status: DeliveryStatus::Delivered(id),
            });
        }
        let decision = decide(node, &net.world, env)?;
        step.decision = Some(decision.clone());
        steps.push(step);

        let next: Vec<NodeId> = match decision {
            RoutingDecision::Local => {
                return Ok(DeliveryTrace {
                    msg_id: env.msg_id,
                    steps,
                    status: DeliveryStatus::Delivered(id),
                });
            }
            RoutingDecision::ToChild(n) | RoutingDecision::ToKnownPeer(n) => vec![n],
            RoutingDecision::ToParent => node.parent.iter().cloned().collect(),
            RoutingDecision::BroadcastPeers => node.peers.iter().filter(|p| !env.visited.contains(*p)).cloned().collect(),
        };
        if next.is_empty() {
            continue;
        }
        if hops >= net.hop_limit {
            hit_limit = true;
            continue;
        }
        for n in next {
            queue.push_back((n, Some(id.clone()), hops + 1));
        }
    }
    Ok(DeliveryTrace {
        msg_id: env.msg_id,
        steps,
        status: DeliveryStatus::Undeliverable(if hit_limit {
            Undeliverable::HopLimit
        } else {
            Undeliverable::NoRoute
        }),
    })
}

/// Wraps a location report as an entry into the deepest region containing
/// it and routes it from the gateway.
pub fn ingress(
    net: &mut Network,
    gateway: &NodeId,
    location: &EventBody,
) -> Result<(MessageEnvelope, DeliveryTrace), RoutingError> {
    let EventBody::Location { user, point, t } = location else {
        return Err(RoutingError::NotALocation(location.kind()));
    };
    if !net.nodes.contains_key(gateway) {
        return Err(RoutingError::UnknownNode(gateway.clone()));
    }
    let region = net.world.resolve_deepest(*point)?;
    let msg_id = net.next_msg_id();
    let mut env = MessageEnvelope::new(
        msg_id,
        gateway.clone(),
        region.clone(),
        EventBody::EnterWhere {
            user: user.clone(),
            region,
            t: *t,
        },
    );
    let trace = deliver(net, gateway, &mut env)?;
    net.record(&env, &trace);
    Ok((env, trace))
}

/// Convenience for callers holding a bare point.
pub fn ingress_point(
    net: &mut Network,
    gateway: &NodeId,
    user: &UserId,
    point: GeoPoint,
    t: Tick,
) -> Result<(MessageEnvelope, DeliveryTrace), RoutingError> {
    let body = EventBody::Location {
        user: user.clone(),
        point,
        t,
    };
    ingress(net, gateway, &body)
}

/// Network over the canonical test world with one node per region.
pub fn world1_network() -> Network {
    Network::new(
        crate::geo::world1(),
        vec![
            NodeRecord::new("n-world", "world", None),
            NodeRecord::new("n-france", "france", Some("n-world")),
            NodeRecord::new("n-belgium", "belgium", Some("n-world")),
            NodeRecord::new("n-paris", "paris", Some("n-france")),
            NodeRecord::new("n-rue-x", "rue-x", Some("n-paris")),
            NodeRecord::new("n-brussels", "brussels", Some("n-belgium")),
        ],
        DEFAULT_HOP_LIMIT,
    )
    .expect("fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::world1;

    fn n(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn env(target: &str) -> MessageEnvelope {
        MessageEnvelope::new(1, n("x"), target.into(), EventBody::ProfileRequest { user: "u".into() })
    }

    fn path(ids: &[&str]) -> Vec<NodeId> {
        ids.iter().map(|s| n(s)).collect()
    }

    #[test]
    fn decide_examples() {
        let net = world1_network();
        let w = net.world();
        let rue = net.node(&n("n-rue-x")).unwrap();
        assert_eq!(decide(rue, w, &env("rue-x")).unwrap(), RoutingDecision::Local);

        let mut brussels = net.node(&n("n-brussels")).unwrap().clone();
        assert_eq!(decide(&brussels, w, &env("rue-x")).unwrap(), RoutingDecision::ToParent);

        brussels.known.insert("paris".into(), n("n-paris"));
        assert_eq!(
            decide(&brussels, w, &env("rue-x")).unwrap(),
            RoutingDecision::ToKnownPeer(n("n-paris"))
        );

        brussels.known.clear();
        brussels.parent = None;
        assert_eq!(decide(&brussels, w, &env("rue-x")).unwrap(), RoutingDecision::BroadcastPeers);

        let world = net.node(&n("n-world")).unwrap();
        assert_eq!(
            decide(world, w, &env("rue-x")).unwrap(),
            RoutingDecision::ToChild(n("n-france"))
        );
        assert!(matches!(
            decide(world, w, &env("atlantis")),
            Err(RoutingError::UnknownTargetRegion(_))
        ));
    }

    #[test]
    fn decide_skips_visited_parent() {
        let net = world1_network();
        let brussels = net.node(&n("n-brussels")).unwrap();
        let mut e = env("rue-x");
        e.visited.insert(n("n-belgium"));
        assert_eq!(decide(brussels, net.world(), &e).unwrap(), RoutingDecision::BroadcastPeers);
    }

    #[test]
    fn decide_ignores_known_entry_covering_own_region() {
        // an entry for the root covers brussels too; the parent route is no worse
        let mut net = world1_network();
        net.set_known(&n("n-brussels"), vec![("world".into(), n("n-world"))]).unwrap();
        let b = net.node(&n("n-brussels")).unwrap();
        assert_eq!(decide(b, net.world(), &env("rue-x")).unwrap(), RoutingDecision::ToParent);
    }

    #[test]
    fn zero_hop_delivery() {
        let net = world1_network();
        let mut e = env("rue-x");
        let t = deliver(&net, &n("n-rue-x"), &mut e).unwrap();
        assert_eq!(t.path(), path(&["n-rue-x"]));
        assert_eq!(t.status, DeliveryStatus::Delivered(n("n-rue-x")));
        assert_eq!(e.hops, 0);
    }

    #[test]
    fn tree_path_and_shortcut() {
        let mut net = world1_network();
        let mut e = env("rue-x");
        let t = deliver(&net, &n("n-brussels"), &mut e).unwrap();
        let tree = path(&["n-brussels", "n-belgium", "n-world", "n-france", "n-paris", "n-rue-x"]);
        assert_eq!(t.path(), tree);
        assert_eq!(t.hops(), Some(5));
        assert_eq!(e.hops as usize, t.path().len() - 1);
        assert_eq!(e.visited.len(), 6);

        net.set_known(&n("n-brussels"), vec![("france".into(), n("n-france"))]).unwrap();
        let mut e = env("rue-x");
        let t = deliver(&net, &n("n-brussels"), &mut e).unwrap();
        assert_eq!(t.path(), path(&["n-brussels", "n-france", "n-paris", "n-rue-x"]));
    }

    #[test]
    fn broadcast_reaches_owner_among_root_peers() {
        // two top-level peers, no common parent
        let net = Network::new(
            world1(),
            vec![
                NodeRecord::new("fr", "france", None),
                NodeRecord::new("be", "belgium", None),
                NodeRecord::new("bx", "brussels", Some("be")),
                NodeRecord::new("pa", "paris", Some("fr")),
            ],
            DEFAULT_HOP_LIMIT,
        )
        .unwrap();
        let mut e = env("rue-x");
        let t = deliver(&net, &n("bx"), &mut e).unwrap();
        assert_eq!(t.path(), path(&["bx", "be", "fr", "pa"]));
        assert_eq!(t.steps[1].decision, Some(RoutingDecision::BroadcastPeers));

        // the root region has no node at all: nobody can take it
        let mut e = env("world");
        let t = deliver(&net, &n("bx"), &mut e).unwrap();
        assert_eq!(t.status, DeliveryStatus::Undeliverable(Undeliverable::NoRoute));
        let mut seen = BTreeSet::new();
        assert!(t.steps.iter().all(|s| seen.insert(s.node.clone())), "a node processed twice");
    }

    #[test]
    fn hop_limit_makes_undeliverable() {
        let mut net = world1_network();
        net.hop_limit = 2;
        let mut e = env("rue-x");
        let t = deliver(&net, &n("n-brussels"), &mut e).unwrap();
        assert_eq!(t.status, DeliveryStatus::Undeliverable(Undeliverable::HopLimit));
        assert_eq!(t.steps.len(), 3);
    }

    #[test]
    fn ingress_examples() {
        let mut net = world1_network();
        let bob = UserId::new("bob");
        let (env, trace) =
            ingress_point(&mut net, &n("n-brussels"), &bob, GeoPoint::planar(2.0, 2.0).unwrap(), 5).unwrap();
        assert_eq!(env.target, RegionId::new("rue-x"));
        assert_eq!(trace.terminal(), Some(&n("n-rue-x")));
        assert!(matches!(env.payload, EventBody::EnterWhere { .. }));

        let (env, trace) =
            ingress_point(&mut net, &n("n-brussels"), &bob, GeoPoint::planar(10.0, 60.0).unwrap(), 6).unwrap();
        assert_eq!(env.target, RegionId::new("france"));
        assert_eq!(trace.terminal(), Some(&n("n-france")));

        let before = net.traffic.envelopes.len();
        let err = ingress_point(&mut net, &n("n-brussels"), &bob, GeoPoint::planar(120.0, 1.0).unwrap(), 7);
        assert!(matches!(err, Err(RoutingError::Geo(GeoError::PointOutsideWorld { .. }))));
        assert_eq!(net.traffic.envelopes.len(), before);
    }

    #[test]
    fn topology_validation() {
        let w = world1();
        let mk = |recs| Network::new(w.clone(), recs, 32);
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "paris", None), NodeRecord::new("b", "paris", None)]),
            Err(TopologyError::RegionOwnedTwice { .. })
        ));
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "mars", None)]),
            Err(TopologyError::UnknownRegion { .. })
        ));
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "paris", Some("zz"))]),
            Err(TopologyError::UnknownParent { .. })
        ));
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "paris", None), NodeRecord::new("b", "belgium", Some("a"))]),
            Err(TopologyError::ChildOutsideParent { .. })
        ));
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "paris", None).knowing("france", "a")]),
            Err(TopologyError::BadKnownEntry { .. })
        ));
        assert!(matches!(
            mk(vec![NodeRecord::new("a", "paris", None), NodeRecord::new("a", "france", None)]),
            Err(TopologyError::DuplicateNode(_))
        ));
        assert!(matches!(Network::new(w.clone(), vec![], 0), Err(TopologyError::ZeroHopLimit)));
    }

    #[test]
    fn topology_parse() {
        let text = "\
n-world world -
n-belgium belgium n-world
n-brussels brussels n-belgium paris=n-paris,france=n-france
n-france france n-world
n-paris paris n-france
";
        let recs = parse_topology(text.lines().enumerate().map(|(i, l)| (i + 1, l))).unwrap();
        assert_eq!(recs[2].known.len(), 2);
        let net = Network::new(world1(), recs, 32).unwrap();
        let b = net.node(&n("n-brussels")).unwrap();
        assert_eq!(b.known.get(&RegionId::new("paris")), Some(&n("n-paris")));
        assert_eq!(net.node(&n("n-france")).unwrap().peers, BTreeSet::from([n("n-belgium")]));

        let bad = "a world - paris:b\n";
        assert!(matches!(
            parse_topology(bad.lines().enumerate().map(|(i, l)| (i + 1, l))),
            Err(TopologyError::Parse { line: 1, .. })
        ));
    }
}
