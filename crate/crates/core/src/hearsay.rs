//! Location-bound messages delivered to users with matching interests.
//!
//! A record is stored on the node managing its where (or the deepest node
//! whose region contains it). Matching against the entering user's profile
//! happens on that node; only the resulting notice travels to the user.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geo::RegionId;
use crate::ids::{HearsayId, NodeId, Tick, UserId};
use crate::overlay::{deliver, DeliveryStatus, MessageEnvelope, Network, RoutingError};
use crate::pipeline::EventBody;
use crate::profile_cache::{fetch, CacheError, FetchOutcome, Profile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HearsayError {
    #[error("unknown where `{0}`")]
    UnknownWhere(RegionId),
    #[error("insertion of `{0}` was undeliverable")]
    Undeliverable(HearsayId),
    #[error("profile unavailable: {0}")]
    ProfileUnavailable(#[from] CacheError),
    #[error("every contact channel failed for `{0}`")]
    AllChannelsFailed(UserId),
    #[error("empty interest tag")]
    EmptyTag,
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
}

/// Interest tags a profile must carry. The empty set matches everyone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProfilePredicate {
    required: BTreeSet<String>,
}

impl ProfilePredicate {
    pub fn new<I, S>(tags: I) -> Result<Self, HearsayError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let required: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        if required.iter().any(|t| t.is_empty()) {
            return Err(HearsayError::EmptyTag);
        }
        Ok(Self { required })
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }
}

/// Subset test: every required tag is among the profile's tags.
pub fn profile_matches(profile: &Profile, pred: &ProfilePredicate) -> bool {
    pred.required.is_subset(&profile.tags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HearsayRecord {
    pub id: HearsayId,
    pub region: RegionId,
    pub predicate: ProfilePredicate,
    pub info: String,
    pub depositor: UserId,
    pub inserted_at: Tick,
}

/// A matched record on its way to a user.
#[derive(Debug, Clone, PartialEq)]
pub struct Notice {
    pub hearsay: HearsayId,
    pub user: UserId,
    pub info: String,
    /// Failed delivery attempts so far.
    pub retries: u32,
}

impl Notice {
    pub fn event(&self) -> EventBody {
        EventBody::HearsayNotice {
            hearsay: self.hearsay.clone(),
            info: self.info.clone(),
            user: self.user.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HearsayStore {
    records: BTreeMap<HearsayId, HearsayRecord>,
    delivered: BTreeSet<(HearsayId, UserId)>,
    pending: BTreeMap<(HearsayId, UserId), Notice>,
}

impl HearsayStore {
    pub fn get(&self, id: &HearsayId) -> Option<&HearsayRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &HearsayRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn was_matched(&self, id: &HearsayId, user: &UserId) -> bool {
        self.delivered.contains(&(id.clone(), user.clone()))
    }

    pub fn pending(&self) -> impl Iterator<Item = &Notice> {
        self.pending.values()
    }

    /// Keeps a notice whose delivery failed, bumping its retry count.
    pub fn retain_failed(&mut self, mut notice: Notice) {
        notice.retries += 1;
        self.pending.insert((notice.hearsay.clone(), notice.user.clone()), notice);
    }
}

/// Routes `record` to the node responsible for its where and stores it there.
pub fn insert(net: &mut Network, origin: &NodeId, record: HearsayRecord) -> Result<NodeId, HearsayError> {
    if net.world().region(&record.region).is_none() {
        return Err(HearsayError::UnknownWhere(record.region));
    }
    if net.node(origin).is_none() {
        return Err(HearsayError::UnknownNode(origin.clone()));
    }
    let attrs = BTreeMap::from([
        ("id".to_string(), record.id.to_string()),
        ("where".to_string(), record.region.to_string()),
        ("require".to_string(), record.predicate.required.iter().cloned().collect::<Vec<_>>().join(",")),
        ("info".to_string(), record.info.clone()),
        ("depositor".to_string(), record.depositor.to_string()),
        ("t".to_string(), record.inserted_at.to_string()),
    ]);
    let msg_id = net.next_msg_id();
    let mut env = MessageEnvelope::new(
        msg_id,
        origin.clone(),
        record.region.clone(),
        EventBody::Generic {
            name: "hearsay-insert".into(),
            attrs,
        },
    );
    let trace = deliver(net, origin, &mut env)?;
    net.record(&env, &trace);
    let DeliveryStatus::Delivered(place) = trace.status else {
        return Err(HearsayError::Undeliverable(record.id));
    };

    let world = net.world().clone();
    let node = net.node_mut(&place).expect("trace nodes exist");
    assert!(
        world.is_ancestor_or_self(&node.managed, &record.region),
        "hearsay `{}` for `{}` landed on `{}` managing `{}`",
        record.id,
        record.region,
        node.id,
        node.managed
    );
    let region = record.region.clone();
    node.hearsay.records.insert(record.id.clone(), record);

    // Nodes below the storing node whose regions lie inside the where
    // report entries back up to it.
    let mut subscribed = Vec::new();
    let mut stack: Vec<NodeId> = node.children.values().cloned().collect();
    while let Some(id) = stack.pop() {
        let n = net.node(&id).expect("child nodes exist");
        stack.extend(n.children.values().cloned());
        if world.is_ancestor_or_self(&region, &n.managed) && !n.watchers.contains(&place) {
            subscribed.push(id);
        }
    }
    subscribed.sort();
    for id in &subscribed {
        net.node_mut(id).unwrap().watchers.insert(place.clone());
    }
    if !subscribed.is_empty() {
        let watch = EventBody::Generic {
            name: "hearsay-watch".into(),
            attrs: BTreeMap::from([("where".to_string(), region.to_string()), ("node".to_string(), place.to_string())]),
        };
        let watch_id = net.next_msg_id();
        let mut path = vec![place.clone()];
        path.extend(subscribed);
        net.record_path(watch_id, &watch, &path);
    }
    Ok(place)
}

/// Result of a user entering a where at one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnterOutcome {
    /// Newly matched notices, each at most once per (hearsay, user).
    pub notices: Vec<Notice>,
    /// Earlier notices whose delivery failed and are due another try.
    pub retries: Vec<Notice>,
    pub profile: Option<Profile>,
    pub fetch: Option<FetchOutcome>,
}

/// Matches stored hearsay against a user entering `region`, on `node`.
///
/// The profile is only fetched when there is something to match or retry.
pub fn on_enter(
    net: &mut Network,
    node_id: &NodeId,
    user: &UserId,
    region: &RegionId,
    now: Tick,
) -> Result<EnterOutcome, HearsayError> {
    let world = net.world().clone();
    let node = net.node_mut(node_id).ok_or_else(|| HearsayError::UnknownNode(node_id.clone()))?;
    let candidates: Vec<HearsayRecord> = node
        .hearsay
        .records
        .values()
        .filter(|r| world.is_ancestor_or_self(&r.region, region))
        .filter(|r| !node.hearsay.delivered.contains(&(r.id.clone(), user.clone())))
        .cloned()
        .collect();
    let due: Vec<(HearsayId, UserId)> = node.hearsay.pending.keys().filter(|(_, u)| u == user).cloned().collect();
    let retries: Vec<Notice> = due.iter().filter_map(|k| node.hearsay.pending.remove(k)).collect();
    if candidates.is_empty() && retries.is_empty() {
        return Ok(EnterOutcome::default());
    }

    let fetched = match fetch(net, node_id, user, now) {
        Ok(f) => f,
        Err(e) => {
            // put the retries back untouched
            let node = net.node_mut(node_id).unwrap();
            for n in retries {
                node.hearsay.pending.insert((n.hearsay.clone(), n.user.clone()), n);
            }
            return Err(e.into());
        }
    };
    let profile = fetched.profile.clone();

    let mut notices = Vec::new();
    for r in &candidates {
        net.traffic.matches.push(crate::overlay::MatchRecord {
            node: node_id.clone(),
            hearsay: r.id.clone(),
            user: user.clone(),
        });
        if profile_matches(&profile, &r.predicate) {
            notices.push(Notice {
                hearsay: r.id.clone(),
                user: user.clone(),
                info: r.info.clone(),
                retries: 0,
            });
        }
    }
    let store = &mut net.node_mut(node_id).unwrap().hearsay;
    for n in &notices {
        store.delivered.insert((n.hearsay.clone(), user.clone()));
    }
    Ok(EnterOutcome {
        notices,
        retries,
        profile: Some(profile),
        fetch: Some(fetched),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelState {
    Up,
    Down,
    /// Each send succeeds with this probability, drawn from the seeded generator.
    Flaky(f64),
}

/// Contact channels per user. A successful send queues the notice for the
/// user's conduit.
#[derive(Debug, Clone)]
pub struct ChannelRegistry {
    states: BTreeMap<(UserId, String), ChannelState>,
    outbox: VecDeque<(UserId, String, EventBody)>,
    rng: ChaCha8Rng,
}

impl ChannelRegistry {
    pub fn new(seed: u64) -> Self {
        Self {
            states: BTreeMap::new(),
            outbox: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Makes `channel` available to `user`, initially up.
    pub fn register(&mut self, user: &UserId, channel: &str) {
        self.states.entry((user.clone(), channel.to_string())).or_insert(ChannelState::Up);
    }

    pub fn set_state(&mut self, user: &UserId, channel: &str, state: ChannelState) {
        self.states.insert((user.clone(), channel.to_string()), state);
    }

    pub fn state(&self, user: &UserId, channel: &str) -> Option<ChannelState> {
        self.states.get(&(user.clone(), channel.to_string())).copied()
    }

    /// Attempts one send; unregistered channels always fail.
    pub fn send(&mut self, user: &UserId, channel: &str, event: EventBody) -> bool {
        let ok = match self.state(user, channel) {
            Some(ChannelState::Up) => true,
            Some(ChannelState::Flaky(p)) => self.rng.random_bool(p.clamp(0.0, 1.0)),
            Some(ChannelState::Down) | None => false,
        };
        if ok {
            self.outbox.push_back((user.clone(), channel.to_string(), event));
        }
        ok
    }

    /// Takes everything sent so far, in send order.
    pub fn drain(&mut self) -> Vec<(UserId, String, EventBody)> {
        self.outbox.drain(..).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub channel: String,
}

/// Tries the profile's contact methods in order; the first that works wins.
pub fn notify(profile: &Profile, notice: &Notice, channels: &mut ChannelRegistry) -> Result<Receipt, HearsayError> {
    for channel in &profile.contacts {
        if channels.send(&profile.user, channel, notice.event()) {
            return Ok(Receipt {
                channel: channel.clone(),
            });
        }
    }
    Err(HearsayError::AllChannelsFailed(profile.user.clone()))
}
