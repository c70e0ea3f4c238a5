//! Scenario files: a sectioned text format holding a world, an overlay
//! topology, user profiles, pipeline assemblies and a tick schedule.
//!
//! See `docs/scenario-format.md` for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::geo::{parse_region_lines, strip_comment, GeoError, RegionId, WorldTree};
use crate::hearsay::{ChannelState, ProfilePredicate};
use crate::ids::{HearsayId, NodeId, Tick, UserId};
use crate::overlay::{parse_topology, Network, NodeRecord, DEFAULT_HOP_LIMIT};
use crate::pipeline::{assemble, AssemblySpec, ComponentRegistry};
use crate::profile_cache::{CachePolicy, Profile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

fn parse_err(line: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        reason: reason.into(),
    }
}

fn invalid(line: usize, reason: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        line,
        reason: reason.to_string(),
    }
}

/// A user's device assembly and the node its SMS messages reach.
#[derive(Debug, Clone, PartialEq)]
pub struct ConduitDecl {
    pub user: UserId,
    pub template: String,
    pub gateway: NodeId,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// One NMEA line into the user's GPS source.
    Gps { user: UserId, sentence: String },
    Hearsay {
        id: HearsayId,
        depositor: UserId,
        origin: NodeId,
        region: RegionId,
        predicate: ProfilePredicate,
        info: String,
    },
    Channel { user: UserId, channel: String, state: ChannelState },
    /// A profile lookup issued by a node, outside any hearsay flow.
    Fetch { node: NodeId, user: UserId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled {
    pub tick: Tick,
    pub line: usize,
    pub input: Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: Tick,
    pub hop_limit: u32,
    pub cache_policy: Option<CachePolicy>,
    pub world: WorldTree,
    pub topology: Vec<NodeRecord>,
    pub profiles: Vec<Profile>,
    pub templates: BTreeMap<String, AssemblySpec>,
    pub conduits: Vec<ConduitDecl>,
    /// Server assembly template per node.
    pub servers: BTreeMap<NodeId, String>,
    pub schedule: Vec<Scheduled>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let sections = split_sections(text)?;
        let section = |name: &str| sections.get(name).cloned().unwrap_or_default();

        let mut meta = Meta::default();
        for (line, text) in section("meta") {
            meta.apply(line, text)?;
        }

        let world_lines = section("world");
        if world_lines.is_empty() {
            return Err(parse_err(1, "missing [world] section"));
        }
        let first_world_line = world_lines[0].0;
        let records = parse_region_lines(world_lines.iter().copied()).map_err(|e| match e {
            GeoError::Parse { line, reason } => parse_err(line, reason),
            other => invalid(first_world_line, other),
        })?;
        let world = WorldTree::from_records(records).map_err(|e| invalid(first_world_line, e))?;

        let topo_lines = section("topology");
        let first_topo_line = topo_lines.first().map_or(1, |l| l.0);
        let topology = parse_topology(topo_lines.iter().copied()).map_err(|e| match e {
            crate::overlay::TopologyError::Parse { line, reason } => parse_err(line, reason),
            other => invalid(first_topo_line, other),
        })?;

        let mut profiles = Vec::new();
        let mut profile_lines = Vec::new();
        for (line, text) in section("profiles") {
            profiles.push(parse_profile(line, text)?);
            profile_lines.push(line);
        }

        let (templates, template_lines, conduits, servers_raw) = parse_assemblies(&section("assemblies"))?;

        let mut schedule = Vec::new();
        for (line, text) in section("schedule") {
            schedule.push(parse_scheduled(line, text)?);
        }
        // keep file order within a tick
        schedule.sort_by_key(|s| s.tick);

        let sc = Scenario {
            name: meta.name.unwrap_or_else(|| "scenario".into()),
            seed: meta.seed,
            horizon: meta.horizon.unwrap_or_else(|| schedule.last().map_or(0, |s| s.tick)),
            hop_limit: meta.hop_limit,
            cache_policy: meta.cache_policy,
            world,
            topology,
            profiles,
            templates,
            conduits,
            servers: BTreeMap::new(),
            schedule,
        };
        sc.validate(first_topo_line, &profile_lines, &template_lines, servers_raw)
    }

    fn validate(
        mut self,
        topo_line: usize,
        profile_lines: &[usize],
        template_lines: &BTreeMap<String, usize>,
        servers_raw: Vec<(usize, String, String)>,
    ) -> Result<Self, ScenarioError> {
        let mut net = self.network_unchecked().map_err(|e| invalid(topo_line, e))?;
        for (p, &line) in self.profiles.iter().zip(profile_lines) {
            net.register_profile(p.clone()).map_err(|e| invalid(line, format!("profile `{}`: {e}", p.user)))?;
        }

        let registry = ComponentRegistry::default();
        for (name, spec) in &self.templates {
            assemble(spec, &registry).map_err(|e| invalid(template_lines[name], format!("assembly `{name}`: {e}")))?;
        }

        let users: BTreeSet<&UserId> = self.profiles.iter().map(|p| &p.user).collect();
        let mut seen = BTreeSet::new();
        for c in &self.conduits {
            if !users.contains(&c.user) {
                return Err(invalid(c.line, format!("conduit for unknown user `{}`", c.user)));
            }
            if !seen.insert(c.user.clone()) {
                return Err(invalid(c.line, format!("user `{}` has more than one conduit", c.user)));
            }
            if net.node(&c.gateway).is_none() {
                return Err(invalid(c.line, format!("unknown gateway node `{}`", c.gateway)));
            }
            let spec = self
                .templates
                .get(&c.template)
                .ok_or_else(|| invalid(c.line, format!("unknown assembly `{}`", c.template)))?;
            if !spec.components.iter().any(|d| d.type_name == "gps" && spec.sources.contains(&d.name)) {
                return Err(invalid(c.line, format!("assembly `{}` has no gps source", c.template)));
            }
        }

        for (line, node, template) in servers_raw {
            if !self.templates.contains_key(&template) {
                return Err(invalid(line, format!("unknown assembly `{template}`")));
            }
            if node == "*" {
                for n in net.nodes() {
                    self.servers.entry(n.id.clone()).or_insert_with(|| template.clone());
                }
            } else {
                let id = NodeId::new(node.as_str());
                if net.node(&id).is_none() {
                    return Err(invalid(line, format!("server on unknown node `{id}`")));
                }
                self.servers.insert(id, template);
            }
        }

        for s in &self.schedule {
            if s.tick > self.horizon {
                return Err(invalid(s.line, format!("tick {} is past the horizon {}", s.tick, self.horizon)));
            }
            match &s.input {
                Input::Gps { user, .. } => {
                    if !self.conduits.iter().any(|c| &c.user == user) {
                        return Err(invalid(s.line, format!("user `{user}` has no conduit")));
                    }
                }
                Input::Hearsay { origin, region, .. } => {
                    if net.node(origin).is_none() {
                        return Err(invalid(s.line, format!("unknown node `{origin}`")));
                    }
                    if self.world.region(region).is_none() {
                        return Err(invalid(s.line, format!("unknown region `{region}`")));
                    }
                }
                Input::Channel { user, .. } => {
                    if !users.contains(user) {
                        return Err(invalid(s.line, format!("unknown user `{user}`")));
                    }
                }
                Input::Fetch { node, user } => {
                    if net.node(node).is_none() {
                        return Err(invalid(s.line, format!("unknown node `{node}`")));
                    }
                    if !users.contains(user) {
                        return Err(invalid(s.line, format!("unknown user `{user}`")));
                    }
                }
            }
        }
        let mut ids = BTreeSet::new();
        for s in &self.schedule {
            if let Input::Hearsay { id, .. } = &s.input {
                if !ids.insert(id.clone()) {
                    return Err(invalid(s.line, format!("hearsay `{id}` is inserted twice")));
                }
            }
        }
        Ok(self)
    }

    fn network_unchecked(&self) -> Result<Network, crate::overlay::TopologyError> {
        Network::new(self.world.clone(), self.topology.clone(), self.hop_limit)
    }

    /// Fresh network with profiles registered and the scenario's cache policy.
    pub fn network(&self) -> Network {
        let mut net = self.network_unchecked().expect("validated topology");
        for p in &self.profiles {
            net.register_profile(p.clone()).expect("validated profile");
        }
        net.cache_policy = self.cache_policy.clone();
        net
    }

    pub fn profile(&self, user: &UserId) -> Option<&Profile> {
        self.profiles.iter().find(|p| &p.user == user)
    }

    pub fn profile_mut(&mut self, user: &UserId) -> Option<&mut Profile> {
        self.profiles.iter_mut().find(|p| &p.user == user)
    }
}

struct Meta {
    name: Option<String>,
    seed: u64,
    horizon: Option<Tick>,
    hop_limit: u32,
    cache_policy: Option<CachePolicy>,
}

impl Default for Meta {
    fn default() -> Self {
        Self {
            name: None,
            seed: 0,
            horizon: None,
            hop_limit: DEFAULT_HOP_LIMIT,
            cache_policy: Some(CachePolicy::default()),
        }
    }
}

impl Meta {
    fn apply(&mut self, line: usize, text: &str) -> Result<(), ScenarioError> {
        let (key, value) = text
            .split_once(char::is_whitespace)
            .map(|(k, v)| (k, v.trim()))
            .ok_or_else(|| parse_err(line, "expected `key value`"))?;
        let num = |v: &str| v.parse::<u64>().map_err(|_| parse_err(line, format!("`{key}` needs an integer")));
        match key {
            "name" => self.name = Some(value.to_string()),
            "seed" => self.seed = num(value)?,
            "horizon" => self.horizon = Some(num(value)?),
            "hop_limit" => {
                self.hop_limit = u32::try_from(num(value)?).map_err(|_| parse_err(line, "hop_limit too large"))?;
                if self.hop_limit == 0 {
                    return Err(invalid(line, "hop limit must be positive"));
                }
            }
            "cache_policy" => {
                self.cache_policy = if value == "none" {
                    None
                } else {
                    let mut map = BTreeMap::new();
                    for pair in value.split(',') {
                        let (d, t) = pair
                            .split_once('=')
                            .ok_or_else(|| parse_err(line, format!("policy entry `{pair}` is not depth=ticks")))?;
                        let d = d.trim().parse::<usize>().map_err(|_| parse_err(line, format!("bad depth `{d}`")))?;
                        map.insert(d, num(t.trim())?);
                    }
                    Some(CachePolicy::new(map).map_err(|e| invalid(line, e))?)
                };
            }
            other => return Err(parse_err(line, format!("unknown meta key `{other}`"))),
        }
        Ok(())
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::parse("[world]\nworld - -90 90 -180 180\n[topology]\nn-world world -\n").expect("minimal scenario")
    }
}

type Lines<'a> = Vec<(usize, &'a str)>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Lines<'_>>, ScenarioError> {
    const KNOWN: [&str; 6] = ["meta", "world", "topology", "profiles", "assemblies", "schedule"];
    let mut out: BTreeMap<String, Lines<'_>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = strip_comment(raw);
        if t.is_empty() {
            continue;
        }
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            if !KNOWN.contains(&name) {
                return Err(parse_err(line, format!("unknown section `[{name}]`")));
            }
            if out.contains_key(name) {
                return Err(parse_err(line, format!("section `[{name}]` appears twice")));
            }
            out.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
            continue;
        }
        let Some(sec) = &current else {
            return Err(parse_err(line, "content before the first section header"));
        };
        out.get_mut(sec).unwrap().push((line, t));
    }
    Ok(out)
}

fn list(field: &str) -> Vec<&str> {
    if field == "-" {
        Vec::new()
    } else {
        field.split(',').filter(|s| !s.is_empty()).collect()
    }
}

fn parse_profile(line: usize, text: &str) -> Result<Profile, ScenarioError> {
    let f: Vec<&str> = text.split_whitespace().collect();
    let [user, home, tags, contacts] = f[..] else {
        return Err(parse_err(line, "expected `user home tags contacts`"));
    };
    Ok(Profile::new(user, &list(tags), &list(contacts), home))
}

type Assemblies = (
    BTreeMap<String, AssemblySpec>,
    BTreeMap<String, usize>,
    Vec<ConduitDecl>,
    Vec<(usize, String, String)>,
);

fn parse_assemblies(lines: &[(usize, &str)]) -> Result<Assemblies, ScenarioError> {
    let mut templates = BTreeMap::new();
    let mut template_lines = BTreeMap::new();
    let mut conduits = Vec::new();
    let mut servers = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (line, text) = lines[i];
        let f: Vec<&str> = text.split_whitespace().collect();
        match f[0] {
            "assembly" => {
                let [_, name] = f[..] else {
                    return Err(parse_err(line, "expected `assembly <name>`"));
                };
                let start = i + 1;
                let mut end = start;
                while end < lines.len() && lines[end].1 != "end" {
                    end += 1;
                }
                if end == lines.len() {
                    return Err(parse_err(line, format!("assembly `{name}` has no `end`")));
                }
                let spec = AssemblySpec::parse_lines(lines[start..end].iter().copied()).map_err(|e| match e {
                    crate::pipeline::PipelineError::Parse { line, reason } => parse_err(line, reason),
                    other => invalid(line, format!("assembly `{name}`: {other}")),
                })?;
                if templates.insert(name.to_string(), spec).is_some() {
                    return Err(invalid(line, format!("assembly `{name}` defined twice")));
                }
                template_lines.insert(name.to_string(), line);
                i = end + 1;
                continue;
            }
            "conduit" => {
                let [_, user, template, gw] = f[..] else {
                    return Err(parse_err(line, "expected `conduit <user> <assembly> gateway=<node>`"));
                };
                let gateway = gw
                    .strip_prefix("gateway=")
                    .ok_or_else(|| parse_err(line, "expected `gateway=<node>`"))?;
                conduits.push(ConduitDecl {
                    user: user.into(),
                    template: template.to_string(),
                    gateway: gateway.into(),
                    line,
                });
            }
            "server" => {
                let [_, node, template] = f[..] else {
                    return Err(parse_err(line, "expected `server <node|*> <assembly>`"));
                };
                servers.push((line, node.to_string(), template.to_string()));
            }
            other => return Err(parse_err(line, format!("unexpected `{other}` in [assemblies]"))),
        }
        i += 1;
    }
    Ok((templates, template_lines, conduits, servers))
}

fn parse_scheduled(line: usize, text: &str) -> Result<Scheduled, ScenarioError> {
    let mut it = text.splitn(3, char::is_whitespace);
    let tick = it
        .next()
        .and_then(|t| t.parse::<Tick>().ok())
        .ok_or_else(|| parse_err(line, "schedule line must start with a tick"))?;
    let verb = it.next().ok_or_else(|| parse_err(line, "missing input kind"))?;
    let rest = it.next().unwrap_or("").trim();
    let words: Vec<&str> = rest.split_whitespace().collect();
    let input = match verb {
        "gps" => {
            let (user, sentence) = rest
                .split_once(char::is_whitespace)
                .ok_or_else(|| parse_err(line, "expected `gps <user> <sentence>`"))?;
            Input::Gps {
                user: user.into(),
                sentence: sentence.trim().to_string(),
            }
        }
        "hearsay" => {
            if words.len() < 5 {
                return Err(parse_err(line, "expected `hearsay <id> <depositor>@<node> <where> <tags|-> <info>`"));
            }
            let (depositor, origin) = words[1]
                .split_once('@')
                .ok_or_else(|| parse_err(line, "depositor must be written `user@node`"))?;
            let predicate = ProfilePredicate::new(list(words[3])).map_err(|e| invalid(line, e))?;
            // info is the remainder of the line after the tags field
            let info = rest
                .splitn(5, char::is_whitespace)
                .nth(4)
                .unwrap_or("")
                .trim()
                .to_string();
            Input::Hearsay {
                id: words[0].into(),
                depositor: depositor.into(),
                origin: origin.into(),
                region: words[2].into(),
                predicate,
                info,
            }
        }
        "channel" => {
            let state = match words.get(2..) {
                Some(["up"]) => ChannelState::Up,
                Some(["down"]) => ChannelState::Down,
                Some(["flaky", p]) => {
                    let p: f64 = p.parse().map_err(|_| parse_err(line, format!("bad probability `{p}`")))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(invalid(line, format!("probability {p} outside [0, 1]")));
                    }
                    ChannelState::Flaky(p)
                }
                _ => return Err(parse_err(line, "expected `channel <user> <channel> up|down|flaky <p>`")),
            };
            Input::Channel {
                user: words[0].into(),
                channel: words[1].to_string(),
                state,
            }
        }
        "fetch" => {
            let [node, user] = words[..] else {
                return Err(parse_err(line, "expected `fetch <node> <user>`"));
            };
            Input::Fetch {
                node: node.into(),
                user: user.into(),
            }
        }
        other => return Err(parse_err(line, format!("unknown input `{other}`"))),
    };
    Ok(Scheduled { tick, line, input })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "
[meta]
seed 7
horizon 5
[world]
world - 0 100 0 100
a world 0 50 0 100
b world 50 100 0 100
[topology]
n-world world -
n-a a n-world
n-b b n-world
[profiles]
bob n-b cafe sms
[assemblies]
assembly pda
component gps gps
component adapter nmea-adapter
component sms sms-device
pipe gps -> adapter
pipe adapter -> sms
source gps
sink sms
end
conduit bob pda gateway=n-b
[schedule]
3 fetch n-a bob
1 hearsay h1 anna@n-world a cafe free coffee # note
";

    #[test]
    fn parses_and_orders_schedule() {
        let s = Scenario::parse(SMALL).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.horizon, 5);
        assert_eq!(s.topology.len(), 3);
        assert_eq!(s.profiles.len(), 1);
        assert_eq!(s.schedule[0].tick, 1);
        let Input::Hearsay { info, origin, .. } = &s.schedule[0].input else {
            panic!()
        };
        assert_eq!(info, "free coffee");
        assert_eq!(origin.as_str(), "n-world");
        assert_eq!(s.cache_policy, Some(CachePolicy::default()));
    }

    fn err_line(text: &str) -> (usize, String) {
        match Scenario::parse(text).unwrap_err() {
            ScenarioError::Parse { line, reason } | ScenarioError::Invalid { line, reason } => (line, reason),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn overlapping_siblings_name_both() {
        let bad = SMALL.replace("b world 50 100", "b world 40 100");
        let (_, reason) = err_line(&bad);
        assert!(reason.contains("`a`") && reason.contains("`b`"), "{reason}");
    }

    #[test]
    fn unknown_home_is_invalid() {
        let (line, reason) = err_line(&SMALL.replace("bob n-b cafe sms", "bob n-nowhere cafe sms"));
        assert_eq!(line, 14);
        assert!(reason.contains("n-nowhere"), "{reason}");
    }

    #[test]
    fn other_errors_carry_positions() {
        assert_eq!(err_line(&SMALL.replace("3 fetch n-a bob", "3 teleport bob")).0, 27);
        assert!(err_line(&SMALL.replace("3 fetch", "9 fetch")).1.contains("horizon"));
        assert!(err_line(&SMALL.replace("gateway=n-b", "gateway=n-x")).1.contains("n-x"));
        assert!(err_line(&SMALL.replace("[meta]", "[metadata]")).1.contains("metadata"));
        assert!(err_line(&SMALL.replace("anna@n-world", "anna")).1.contains("user@node"));
        assert!(err_line(&SMALL.replace("seed 7", "cache_policy 0=10,1=20")).1.contains("policy"));
    }

    #[test]
    fn cache_policy_none() {
        let s = Scenario::parse(&SMALL.replace("seed 7", "cache_policy none")).unwrap();
        assert!(s.cache_policy.is_none());
        assert_eq!(s.hop_limit, DEFAULT_HOP_LIMIT);
    }

    #[test]
    fn minimal_default() {
        let s = Scenario::default();
        assert_eq!(s.horizon, 0);
        assert_eq!(s.hop_limit, DEFAULT_HOP_LIMIT);
    }
}
