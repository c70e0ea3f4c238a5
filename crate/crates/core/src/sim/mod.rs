//! Deterministic tick-driven simulator.
//!
//! Each tick expires stale cache entries, then feeds that tick's scheduled
//! inputs in file order. Overlay envelopes are delivered within the tick
//! that created them; their latency shows up as hop counts.

mod report;
mod scenario;

use std::collections::BTreeMap;

use thiserror::Error;

pub use report::{CacheCounts, Delivery, EnvelopeTotals, NodeArrivals, Report, ReportFormat};
pub use scenario::{ConduitDecl, Input, Scenario, ScenarioError, Scheduled};

use crate::geo::{GeoPoint, RegionId};
use crate::hearsay::{insert, notify, on_enter, ChannelRegistry, HearsayRecord, Notice};
use crate::ids::{NodeId, Tick, UserId};
use crate::overlay::{ingress, DeliveryStatus, Network};
use crate::pipeline::{assemble, Assembly, ComponentRegistry, EventBody, SinkOutput};
use crate::profile_cache::{expire, fetch, Profile};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("anna-bob", include_str!("../../scenarios/anna-bob.gloss")),
    ("repeat-fetch", include_str!("../../scenarios/repeat-fetch.gloss")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::parse(text).expect("bundled scenarios are valid"))
}

/// Loads a scenario file, or a bundled scenario if no such file exists.
pub fn load(path_or_name: &str) -> Result<Scenario, ScenarioError> {
    if !std::path::Path::new(path_or_name).exists() {
        if let Some(s) = bundled(path_or_name) {
            return Ok(s);
        }
    }
    Scenario::load(path_or_name)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub no_cache: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// XML event fragments and routing lines, in order of occurrence.
    pub trace: Vec<String>,
    /// Final network state, for inspection.
    pub network: Network,
}

struct Conduit {
    asm: Assembly,
    gateway: NodeId,
    gps: String,
    receivers: BTreeMap<String, String>,
}

struct Sim {
    net: Network,
    conduits: BTreeMap<UserId, Conduit>,
    servers: BTreeMap<NodeId, Assembly>,
    channels: ChannelRegistry,
    deliveries: Vec<Delivery>,
    notify_failed: u64,
    points: BTreeMap<UserId, Vec<GeoPoint>>,
    counters: BTreeMap<String, u64>,
    trace: Vec<String>,
    logged_envelopes: usize,
    logged_hops: usize,
}

/// Replays `scenario` to its horizon.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let seed = opts.seed.unwrap_or(scenario.seed);
    let mut sim = Sim::new(scenario, seed, opts.no_cache);
    let mut pending = scenario.schedule.iter().peekable();
    for tick in 0..=scenario.horizon {
        for node in sim.net.nodes_mut() {
            let n = expire(node, tick) as u64;
            if n > 0 {
                *sim.counters.entry("cache.expired".into()).or_default() += n;
            }
        }
        let mut marked = false;
        while let Some(s) = pending.next_if(|s| s.tick == tick) {
            if !marked {
                sim.trace.push(format!("<tick t=\"{tick}\"/>"));
                marked = true;
            }
            sim.step(tick, &s.input);
        }
    }
    let report = sim.report(scenario, seed);
    report.check().map_err(SimError::Invariant)?;
    sim.check_locality()?;
    Ok(RunOutput {
        report,
        trace: sim.trace,
        network: sim.net,
    })
}

fn first_of<'a>(asm: &'a Assembly, type_name: &'a str) -> Option<String> {
    asm.components_of_type(type_name).find(|c| asm.is_source(c)).map(str::to_string)
}

fn outputs_of<'a>(asm: &'a Assembly, outs: &'a [SinkOutput], type_name: &'a str) -> impl Iterator<Item = &'a EventBody> {
    outs.iter()
        .filter(move |o| asm.type_of(&o.sink) == Some(type_name))
        .map(|o| &o.event.body)
}

impl Sim {
    fn new(scenario: &Scenario, seed: u64, no_cache: bool) -> Self {
        let registry = ComponentRegistry::default();
        let mut net = scenario.network();
        if no_cache {
            net.cache_policy = None;
        }
        let mut channels = ChannelRegistry::new(seed);
        for p in &scenario.profiles {
            for c in &p.contacts {
                channels.register(&p.user, c);
            }
        }
        let mut conduits = BTreeMap::new();
        for c in &scenario.conduits {
            let asm = assemble(&scenario.templates[&c.template], &registry)
                .expect("validated assembly")
                .with_owner(c.user.clone());
            let gps = first_of(&asm, "gps").expect("validated gps source");
            let receivers = asm
                .components_of_type("channel-receiver")
                .filter(|r| asm.is_source(r))
                .filter_map(|r| Some((asm.param(r, "channel")?.to_string(), r.to_string())))
                .collect();
            conduits.insert(
                c.user.clone(),
                Conduit {
                    asm,
                    gateway: c.gateway.clone(),
                    gps,
                    receivers,
                },
            );
        }
        let servers = scenario
            .servers
            .iter()
            .map(|(n, t)| (n.clone(), assemble(&scenario.templates[t], &registry).expect("validated assembly")))
            .collect();
        Self {
            net,
            conduits,
            servers,
            channels,
            deliveries: Vec::new(),
            notify_failed: 0,
            points: scenario.conduits.iter().map(|c| (c.user.clone(), Vec::new())).collect(),
            counters: BTreeMap::new(),
            trace: Vec::new(),
            logged_envelopes: 0,
            logged_hops: 0,
        }
    }

    fn count(&mut self, key: impl Into<String>) {
        *self.counters.entry(key.into()).or_default() += 1;
    }

    /// Copies envelopes logged by the network since the last call into the trace.
    fn sync_trace(&mut self) {
        let traffic = &self.net.traffic;
        for i in self.logged_envelopes..traffic.envelopes.len() {
            let id = traffic.envelopes[i].msg_id;
            if let Some(h) = traffic.hops[self.logged_hops..].iter().find(|h| h.msg_id == id) {
                self.trace.push(h.payload.clone());
            }
            self.trace.push(traffic.routes[i].clone());
        }
        self.logged_envelopes = traffic.envelopes.len();
        self.logged_hops = traffic.hops.len();
    }

    /// Runs `body` through the server assembly on `node` from its `source`
    /// type to its `sink` type. Nodes without such an assembly pass it on.
    fn through_server(&mut self, node: &NodeId, source: &str, sink: &str, body: EventBody, now: Tick) -> Vec<EventBody> {
        let Some(asm) = self.servers.get_mut(node) else {
            return vec![body];
        };
        let Some(src) = first_of(asm, source) else {
            return vec![body];
        };
        match asm.inject(&src, body, now) {
            Ok(outs) => outputs_of(asm, &outs, sink).cloned().collect(),
            Err(_) => {
                self.count(format!("server.{node}.inject-error"));
                Vec::new()
            }
        }
    }

    fn step(&mut self, now: Tick, input: &Input) {
        match input {
            Input::Gps { user, sentence } => self.gps(user, sentence, now),
            Input::Hearsay {
                id,
                depositor,
                origin,
                region,
                predicate,
                info,
            } => {
                let record = HearsayRecord {
                    id: id.clone(),
                    region: region.clone(),
                    predicate: predicate.clone(),
                    info: info.clone(),
                    depositor: depositor.clone(),
                    inserted_at: now,
                };
                match insert(&mut self.net, origin, record) {
                    Ok(_) => self.count("hearsay.stored"),
                    Err(_) => self.count("hearsay.insert-failed"),
                }
                self.sync_trace();
            }
            Input::Channel { user, channel, state } => {
                self.channels.set_state(user, channel, *state);
                self.trace.push(
                    EventBody::Generic {
                        name: "channel".into(),
                        attrs: BTreeMap::from([
                            ("user".to_string(), user.to_string()),
                            ("channel".to_string(), channel.clone()),
                            ("state".to_string(), format!("{state:?}").to_lowercase()),
                        ]),
                    }
                    .to_xml(),
                );
            }
            Input::Fetch { node, user } => {
                match fetch(&mut self.net, node, user, now) {
                    Ok(_) => self.count("fetch.ok"),
                    Err(_) => self.count("fetch.failed"),
                }
                self.sync_trace();
            }
        }
    }

    fn gps(&mut self, user: &UserId, sentence: &str, now: Tick) {
        let conduit = self.conduits.get_mut(user).expect("validated conduit");
        let raw = EventBody::RawDeviceString {
            line: sentence.to_string(),
        };
        self.trace.push(raw.to_xml());
        let outs = conduit.asm.inject(&conduit.gps, raw, now).expect("gps source accepts raw lines");
        let sent: Vec<EventBody> = outputs_of(&conduit.asm, &outs, "sms-device").cloned().collect();
        let gateway = conduit.gateway.clone();
        for loc in sent {
            self.trace.push(loc.to_xml());
            for loc in self.through_server(&gateway, "sms-gateway", "p2p-out", loc, now) {
                self.ingress(&gateway, loc, now);
            }
        }
    }

    fn ingress(&mut self, gateway: &NodeId, loc: EventBody, now: Tick) {
        let EventBody::Location { user, point, .. } = &loc else {
            self.count("sim.not-a-location");
            return;
        };
        let result = ingress(&mut self.net, gateway, &loc);
        self.sync_trace();
        match result {
            Ok((env, trace)) => {
                self.points.entry(user.clone()).or_default().push(*point);
                if let DeliveryStatus::Delivered(node) = trace.status {
                    self.entered(&node, env.payload, now);
                }
            }
            Err(_) => self.count("sim.ingress-failed"),
        }
    }

    fn entered(&mut self, node: &NodeId, body: EventBody, now: Tick) {
        for ev in self.through_server(node, "p2p-in", "hearsay-service", body, now) {
            let EventBody::EnterWhere { user, region, .. } = &ev else {
                continue;
            };
            self.match_at(node, user, region, now);
            let watchers: Vec<NodeId> = self.net.node(node).map(|n| n.watchers.iter().cloned().collect()).unwrap_or_default();
            for w in watchers {
                let id = self.net.next_msg_id();
                self.net.record_path(id, &ev, &[node.clone(), w.clone()]);
                self.sync_trace();
                self.match_at(&w, user, region, now);
            }
        }
    }

    fn match_at(&mut self, node: &NodeId, user: &UserId, region: &RegionId, now: Tick) {
        let out = match on_enter(&mut self.net, node, user, region, now) {
            Ok(out) => out,
            Err(_) => {
                self.count("hearsay.match-failed");
                return;
            }
        };
        self.sync_trace();
        let Some(profile) = out.profile else { return };
        for notice in out.notices.into_iter().chain(out.retries) {
            self.send_notice(node, notice, &profile, now);
        }
    }

    fn send_notice(&mut self, node: &NodeId, notice: Notice, profile: &Profile, now: Tick) {
        let proxied = self.through_server(node, "proxy", "proxy", notice.event(), now);
        if proxied.is_empty() {
            self.count("notify.proxy-dropped");
            return;
        }
        match notify(profile, &notice, &mut self.channels) {
            Ok(receipt) => {
                self.trace.push(notice.event().to_xml());
                self.deliveries.push(Delivery {
                    tick: now,
                    user: notice.user.clone(),
                    hearsay: notice.hearsay.clone(),
                    channel: receipt.channel,
                });
            }
            Err(_) => {
                self.notify_failed += 1;
                self.net
                    .node_mut(node)
                    .expect("matching node exists")
                    .hearsay
                    .retain_failed(notice);
            }
        }
        for (user, channel, event) in self.channels.drain() {
            let Some(conduit) = self.conduits.get_mut(&user) else {
                self.count(format!("notify.no-conduit.{user}"));
                continue;
            };
            let Some(rx) = conduit.receivers.get(&channel).cloned() else {
                self.count(format!("conduit.{user}.no-receiver.{channel}"));
                continue;
            };
            match conduit.asm.inject(&rx, event, now) {
                Ok(outs) => {
                    let shown = outputs_of(&conduit.asm, &outs, "hearsay-ui")
                        .filter(|e| matches!(e, EventBody::HearsayNotice { .. }))
                        .count();
                    *self.counters.entry(format!("conduit.{user}.shown")).or_default() += shown as u64;
                }
                Err(_) => self.count(format!("conduit.{user}.inject-error")),
            }
        }
    }

    /// Profile contents must only travel inside profile replies, and
    /// matching must only happen where the record is stored.
    fn check_locality(&self) -> Result<(), SimError> {
        for h in &self.net.traffic.hops {
            if h.kind != crate::pipeline::EventKind::ProfileReply && (h.payload.contains("tags=") || h.payload.contains("contacts=")) {
                return Err(SimError::Invariant(format!("profile data inside a {} envelope", h.kind)));
            }
        }
        for m in &self.net.traffic.matches {
            let stored = self.net.node(&m.node).is_some_and(|n| n.hearsay.get(&m.hearsay).is_some());
            if !stored {
                return Err(SimError::Invariant(format!(
                    "hearsay `{}` matched on `{}`, which does not store it",
                    m.hearsay, m.node
                )));
            }
        }
        Ok(())
    }

    fn report(&self, scenario: &Scenario, seed: u64) -> Report {
        let world = self.net.world();
        let mut r = Report::empty(world.max_depth());
        r.scenario = scenario.name.clone();
        r.seed = seed;
        r.horizon = scenario.horizon;
        r.deliveries = self.deliveries.clone();
        r.notify_failed = self.notify_failed;

        for node in self.net.nodes() {
            r.by_node.insert(
                node.id.clone(),
                NodeArrivals {
                    depth: self.net.node_depth(&node.id),
                    arrivals: 0,
                },
            );
        }
        for h in &self.net.traffic.hops {
            let n = r.by_node.get_mut(&h.node).expect("hops name known nodes");
            n.arrivals += 1;
            r.by_depth[n.depth] += 1;
        }
        for e in &self.net.traffic.envelopes {
            r.envelopes.created += 1;
            match (e.delivered, e.hops) {
                (true, Some(h)) => {
                    r.envelopes.delivered += 1;
                    *r.hops.entry(h).or_default() += 1;
                }
                _ => r.envelopes.undeliverable += 1,
            }
        }
        for (d, c) in r.cache.iter_mut().enumerate() {
            c.hits = self.net.cache_stats.hits.get(&d).copied().unwrap_or(0);
            c.misses = self.net.cache_stats.misses.get(&d).copied().unwrap_or(0);
        }

        let traces: Vec<(&UserId, &Vec<GeoPoint>)> = self.points.iter().collect();
        let rows = crate::sweep::map(&traces, |(_, pts)| {
            world.transition_profile(pts).expect("ingressed points lie in the world")
        });
        r.transitions = traces.iter().map(|(u, _)| (*u).clone()).zip(rows).collect();

        r.counters = self.counters.clone();
        for (user, c) in &self.conduits {
            for (k, v) in c.asm.metrics() {
                r.counters.insert(format!("conduit.{user}.{k}"), *v);
            }
        }
        for (node, asm) in &self.servers {
            for (k, v) in asm.metrics() {
                r.counters.insert(format!("server.{node}.{k}"), *v);
            }
        }
        r.counters.insert("hearsay.matches".into(), self.net.traffic.matches.len() as u64);
        r
    }
}
