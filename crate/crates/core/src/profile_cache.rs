//! User profiles, their home nodes, and depth-dependent caching.
//!
//! A fetch that misses locally travels toward the user's home node. Any
//! node on the way holding a fresh copy answers instead. The reply walks
//! the request path backwards and leaves a copy on every node it passes,
//! each with the time-to-live configured for that node's depth.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ids::{NodeId, Tick, UserId};
use crate::overlay::{deliver_with, DeliveryStatus, DeliveryTrace, MessageEnvelope, Network, OverlayNode, RoutingError};
use crate::pipeline::EventBody;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CacheError {
    #[error("unknown user `{0}`")]
    UnknownUser(UserId),
    #[error("unknown home node `{0}`")]
    UnknownHome(NodeId),
    #[error("user `{0}` has no contact methods")]
    NoContacts(UserId),
    #[error("profile request for `{0}` was undeliverable")]
    Undeliverable(UserId),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("invalid cache policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub user: UserId,
    pub tags: BTreeSet<String>,
    /// Channel names in order of preference.
    pub contacts: Vec<String>,
    pub home: NodeId,
}

impl Profile {
    pub fn new(user: &str, tags: &[&str], contacts: &[&str], home: &str) -> Self {
        Self {
            user: user.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            contacts: contacts.iter().map(|c| c.to_string()).collect(),
            home: home.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub profile: Profile,
    pub fetched_at: Tick,
    pub ttl: u64,
}

impl CacheEntry {
    /// Fresh while `now - fetched_at <= ttl`.
    pub fn is_fresh(&self, now: Tick) -> bool {
        now.saturating_sub(self.fetched_at) <= self.ttl
    }
}

/// Time-to-live per tree depth. Lookups past the deepest configured depth
/// use the deepest entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachePolicy {
    ttl_by_depth: BTreeMap<usize, u64>,
}

impl CachePolicy {
    /// Requires an entry for depth 0, positive ttls, and ttls that never
    /// grow with depth.
    pub fn new(ttl_by_depth: BTreeMap<usize, u64>) -> Result<Self, CacheError> {
        if !ttl_by_depth.contains_key(&0) {
            return Err(CacheError::InvalidPolicy("missing depth 0".into()));
        }
        if let Some((d, _)) = ttl_by_depth.iter().find(|(_, ttl)| **ttl == 0) {
            return Err(CacheError::InvalidPolicy(format!("ttl at depth {d} must be positive")));
        }
        let ttls: Vec<_> = ttl_by_depth.iter().collect();
        if let Some(w) = ttls.windows(2).find(|w| w[1].1 > w[0].1) {
            return Err(CacheError::InvalidPolicy(format!(
                "ttl grows from depth {} to depth {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { ttl_by_depth })
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.ttl_by_depth.iter().map(|(d, t)| (*d, *t))
    }
}

impl Default for CachePolicy {
    /// One hour at the root, ten minutes one level down, two minutes at
    /// depth 2 and one minute below that (ticks are seconds).
    fn default() -> Self {
        Self::new(BTreeMap::from([(0, 3600), (1, 600), (2, 120), (3, 60)])).expect("default policy is valid")
    }
}

pub fn ttl_for(policy: &CachePolicy, depth: usize) -> u64 {
    *policy
        .ttl_by_depth
        .range(..=depth)
        .next_back()
        .expect("depth 0 is always configured")
        .1
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileCache {
    entries: BTreeMap<UserId, CacheEntry>,
}

impl ProfileCache {
    pub fn fresh(&self, user: &UserId, now: Tick) -> Option<&CacheEntry> {
        self.entries.get(user).filter(|e| e.is_fresh(now))
    }

    pub fn install(&mut self, entry: CacheEntry) {
        self.entries.insert(entry.profile.user.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    /// Drops stale entries and returns how many went.
    pub fn expire(&mut self, now: Tick) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.is_fresh(now));
        before - self.entries.len()
    }
}

pub fn expire(node: &mut OverlayNode, now: Tick) -> usize {
    node.cache.expire(now)
}

/// Cache hits and misses keyed by tree depth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: BTreeMap<usize, u64>,
    pub misses: BTreeMap<usize, u64>,
}

impl CacheStats {
    fn hit(&mut self, depth: usize) {
        *self.hits.entry(depth).or_default() += 1;
    }

    fn miss(&mut self, depth: usize) {
        *self.misses.entry(depth).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub profile: Profile,
    /// Node that supplied the profile: the requester on a local hit, an
    /// intermediate node on an en-route hit, or the home node.
    pub answered_by: NodeId,
    /// The request's routing trace; `None` when answered without messages.
    pub request: Option<DeliveryTrace>,
    /// Nodes the reply visited, from the answering node back to the requester.
    pub reply_path: Vec<NodeId>,
    /// Nodes that received a fresh cache entry.
    pub installed: Vec<NodeId>,
}

impl FetchOutcome {
    /// Request arrivals plus reply arrivals.
    pub fn envelope_arrivals(&self) -> usize {
        self.request.as_ref().map_or(0, |t| t.steps.len()) + self.reply_path.len()
    }
}

/// Obtains `user`'s profile for `requester`.
pub fn fetch(net: &mut Network, requester: &NodeId, user: &UserId, now: Tick) -> Result<FetchOutcome, CacheError> {
    let home = net.home_of(user).cloned().ok_or_else(|| CacheError::UnknownUser(user.clone()))?;
    let req_node = net
        .node(requester)
        .ok_or_else(|| RoutingError::UnknownNode(requester.clone()))?;

    if *requester == home {
        let profile = req_node.profiles.get(user).cloned().ok_or_else(|| CacheError::UnknownUser(user.clone()))?;
        return Ok(local(profile, requester));
    }
    let depth = net.node_depth(requester);
    if let Some(entry) = req_node.cache.fresh(user, now) {
        let profile = entry.profile.clone();
        net.cache_stats.hit(depth);
        return Ok(local(profile, requester));
    }
    net.cache_stats.miss(depth);

    let home_region = net.node(&home).expect("directory points at real nodes").managed.clone();
    let msg_id = net.next_msg_id();
    let mut env = MessageEnvelope::new(
        msg_id,
        requester.clone(),
        home_region,
        EventBody::ProfileRequest { user: user.clone() },
    );
    let mut probes = Vec::new();
    let trace = {
        let mut check = |node: &OverlayNode, _: &MessageEnvelope| {
            if node.id == home {
                return true;
            }
            let fresh = node.cache.fresh(user, now).is_some();
            probes.push((node.id.clone(), fresh));
            fresh
        };
        deliver_with(net, requester, &mut env, &mut check)?
    };
    net.record(&env, &trace);
    for (node, fresh) in probes {
        let d = net.node_depth(&node);
        if fresh {
            net.cache_stats.hit(d);
        } else {
            net.cache_stats.miss(d);
        }
    }

    let answered_by = match &trace.status {
        DeliveryStatus::Delivered(n) => n.clone(),
        DeliveryStatus::Undeliverable(_) => return Err(CacheError::Undeliverable(user.clone())),
    };
    let source = net.node(&answered_by).expect("trace nodes exist");
    let profile = if answered_by == home {
        source.profiles.get(user).cloned()
    } else {
        source.cache.fresh(user, now).map(|e| e.profile.clone())
    }
    .ok_or_else(|| CacheError::UnknownUser(user.clone()))?;

    let mut reply_path = trace.path();
    reply_path.reverse();
    let reply = EventBody::ProfileReply {
        user: user.clone(),
        profile: profile.clone(),
    };
    let reply_id = net.next_msg_id();
    net.record_path(reply_id, &reply, &reply_path);

    let mut installed = Vec::new();
    if let Some(policy) = net.cache_policy.clone() {
        for id in reply_path.iter().skip(1) {
            let ttl = ttl_for(&policy, net.node_depth(id));
            let node = net.node_mut(id).expect("path nodes exist");
            node.cache.install(CacheEntry {
                profile: profile.clone(),
                fetched_at: now,
                ttl,
            });
            installed.push(id.clone());
        }
    }

    Ok(FetchOutcome {
        profile,
        answered_by,
        request: Some(trace),
        reply_path,
        installed,
    })
}

fn local(profile: Profile, node: &NodeId) -> FetchOutcome {
    FetchOutcome {
        profile,
        answered_by: node.clone(),
        request: None,
        reply_path: Vec::new(),
        installed: Vec::new(),
    }
}
