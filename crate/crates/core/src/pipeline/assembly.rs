//! Assemblies: components wired together by pipes and buses.
//!
//! The text form of an assembly is a list of declarations, one per line:
//!
//! ```text
//! component <name> <type> [key=value ...]
//! bus <name> <kind>[,<kind>...] -> <subscriber> [<subscriber> ...]
//! pipe <from> -> <to>
//! source <name> [<name> ...]
//! sink <name> [<name> ...]
//! ```
//!
//! A pipe may end at a bus; a bus fans out to its subscribers in the order
//! listed. Events propagate synchronously in topological order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::components::{Component, ComponentRegistry, Params, StepContext};
use super::event::{Event, EventBody, EventKind, KindSet};
use crate::geo::strip_comment;
use crate::ids::{Tick, UserId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("component `{name}` has unknown type `{type_name}`")]
    UnknownComponentType { name: String, type_name: String },
    #[error("component `{name}`: {reason}")]
    BadParams { name: String, reason: String },
    #[error("`{0}` is declared twice")]
    Duplicate(String),
    #[error("`{0}` is not declared")]
    Undeclared(String),
    #[error("cycle detected at link {0}")]
    CycleDetected(String),
    #[error("link {0} connects incompatible kinds")]
    KindIncompatible(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("`{target}` does not accept {kind} events")]
    KindMismatch { target: String, kind: EventKind },
    #[error("component `{component}` emitted undeclared kind {kind}")]
    UndeclaredOutput { component: String, kind: EventKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDecl {
    pub name: String,
    pub type_name: String,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusDecl {
    pub name: String,
    pub kinds: KindSet,
    pub subscribers: Vec<String>,
}

/// Declarative description of an assembly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssemblySpec {
    pub components: Vec<ComponentDecl>,
    pub buses: Vec<BusDecl>,
    pub pipes: Vec<(String, String)>,
    pub sources: Vec<String>,
    pub sinks: Vec<String>,
}

impl AssemblySpec {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        Self::parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    pub fn parse_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Self, PipelineError> {
        let mut spec = Self::default();
        for (line, raw) in lines {
            let text = strip_comment(raw);
            if text.is_empty() {
                continue;
            }
            let err = |reason: &str| PipelineError::Parse {
                line,
                reason: reason.to_string(),
            };
            let words: Vec<&str> = text.split_whitespace().collect();
            match words[0] {
                "component" => {
                    if words.len() < 3 {
                        return Err(err("expected `component <name> <type> [key=value ...]`"));
                    }
                    let mut params = Params::new();
                    for kv in &words[3..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| err("parameters must be key=value"))?;
                        params.insert(k.to_string(), v.to_string());
                    }
                    spec.components.push(ComponentDecl {
                        name: words[1].to_string(),
                        type_name: words[2].to_string(),
                        params,
                    });
                }
                "bus" => {
                    if words.len() < 4 || words[3] != "->" {
                        return Err(err("expected `bus <name> <kinds> -> <subscribers...>`"));
                    }
                    let kinds = KindSet::parse(words[2]).ok_or_else(|| err("unknown event kind"))?;
                    spec.buses.push(BusDecl {
                        name: words[1].to_string(),
                        kinds,
                        subscribers: words[4..].iter().map(|s| s.to_string()).collect(),
                    });
                }
                "pipe" => {
                    if words.len() != 4 || words[2] != "->" {
                        return Err(err("expected `pipe <from> -> <to>`"));
                    }
                    spec.pipes.push((words[1].to_string(), words[3].to_string()));
                }
                "source" => spec.sources.extend(words[1..].iter().map(|s| s.to_string())),
                "sink" => spec.sinks.extend(words[1..].iter().map(|s| s.to_string())),
                other => return Err(err(&format!("unknown declaration `{other}`"))),
            }
        }
        Ok(spec)
    }
}

/// The conduit assembly carried by a GPS-equipped phone: the GPS device
/// feeds an adapter and a position threshold filter whose output goes on an
/// event bus shared by the hearsay user interface and the SMS device.
pub fn gps_conduit_spec(threshold_m: f64) -> AssemblySpec {
    AssemblySpec::parse(&format!(
        "component gps gps
         component adapter nmea-adapter
         component filter threshold-filter threshold={threshold_m}
         component ui hearsay-ui
         component sms sms-device
         bus events location -> ui sms
         pipe gps -> adapter
         pipe adapter -> filter
         pipe filter -> events
         source gps
         sink ui sms"
    ))
    .expect("built-in spec parses")
}

/// An event that reached a sink.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkOutput {
    pub sink: String,
    pub event: Event,
}

enum VertexKind {
    Component {
        type_name: String,
        params: Params,
        inner: Box<dyn Component>,
    },
    Bus {
        kinds: KindSet,
    },
}

struct Vertex {
    name: String,
    kind: VertexKind,
}

impl Vertex {
    fn accepts(&self) -> KindSet {
        match &self.kind {
            VertexKind::Component { inner, .. } => inner.inputs(),
            VertexKind::Bus { kinds } => *kinds,
        }
    }
}

/// A runnable, validated assembly.
pub struct Assembly {
    owner: Option<UserId>,
    vertices: Vec<Vertex>,
    index: BTreeMap<String, usize>,
    edges: Vec<Vec<usize>>,
    topo_pos: Vec<usize>,
    topo: Vec<usize>,
    sources: BTreeSet<usize>,
    sinks: BTreeSet<usize>,
    next_seq: u64,
    metrics: BTreeMap<String, u64>,
}

impl std::fmt::Debug for Assembly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Assembly")
            .field("owner", &self.owner)
            .field("vertices", &self.vertices.iter().map(|v| &v.name).collect::<Vec<_>>())
            .finish()
    }
}

/// Instantiates and validates an assembly.
pub fn assemble(spec: &AssemblySpec, registry: &ComponentRegistry) -> Result<Assembly, PipelineError> {
    let mut vertices = Vec::new();
    let mut index = BTreeMap::new();
    for decl in &spec.components {
        let inner = registry
            .create(&decl.type_name, &decl.params)
            .ok_or_else(|| PipelineError::UnknownComponentType {
                name: decl.name.clone(),
                type_name: decl.type_name.clone(),
            })?
            .map_err(|reason| PipelineError::BadParams {
                name: decl.name.clone(),
                reason,
            })?;
        if index.insert(decl.name.clone(), vertices.len()).is_some() {
            return Err(PipelineError::Duplicate(decl.name.clone()));
        }
        vertices.push(Vertex {
            name: decl.name.clone(),
            kind: VertexKind::Component {
                type_name: decl.type_name.clone(),
                params: decl.params.clone(),
                inner,
            },
        });
    }
    for bus in &spec.buses {
        if index.insert(bus.name.clone(), vertices.len()).is_some() {
            return Err(PipelineError::Duplicate(bus.name.clone()));
        }
        vertices.push(Vertex {
            name: bus.name.clone(),
            kind: VertexKind::Bus { kinds: bus.kinds },
        });
    }

    let lookup = |name: &str| index.get(name).copied().ok_or_else(|| PipelineError::Undeclared(name.to_string()));
    let component = |name: &str| {
        let i = lookup(name)?;
        match &vertices[i].kind {
            VertexKind::Component { inner, .. } => Ok((i, inner.inputs(), inner.outputs())),
            VertexKind::Bus { .. } => Err(PipelineError::Undeclared(format!("component {name}"))),
        }
    };

    let mut edges = vec![Vec::new(); vertices.len()];
    for (from, to) in &spec.pipes {
        let (f, _, produces) = component(from)?;
        let t = lookup(to)?;
        if !produces.intersects(vertices[t].accepts()) {
            return Err(PipelineError::KindIncompatible(format!("{from} -> {to}")));
        }
        edges[f].push(t);
    }
    for bus in &spec.buses {
        let b = index[&bus.name];
        for sub in &bus.subscribers {
            let (s, accepts, _) = component(sub)?;
            // every subscriber must take every kind the bus carries
            if !bus.kinds.is_subset(accepts) {
                return Err(PipelineError::KindIncompatible(format!("{} -> {sub}", bus.name)));
            }
            edges[b].push(s);
        }
    }

    let sources = spec
        .sources
        .iter()
        .map(|s| component(s).map(|c| c.0))
        .collect::<Result<BTreeSet<_>, _>>()?;
    let sinks = spec
        .sinks
        .iter()
        .map(|s| component(s).map(|c| c.0))
        .collect::<Result<BTreeSet<_>, _>>()?;

    // Kahn's algorithm; successors are released in link order so bus
    // subscribers run in subscription order.
    let mut indegree = vec![0usize; vertices.len()];
    for targets in &edges {
        for &t in targets {
            indegree[t] += 1;
        }
    }
    let mut ready: VecDeque<usize> = (0..vertices.len()).filter(|&v| indegree[v] == 0).collect();
    let mut topo = Vec::with_capacity(vertices.len());
    while let Some(v) = ready.pop_front() {
        topo.push(v);
        for &t in &edges[v] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.push_back(t);
            }
        }
    }
    if topo.len() != vertices.len() {
        let (from, to) = edges
            .iter()
            .enumerate()
            .flat_map(|(f, ts)| ts.iter().map(move |&t| (f, t)))
            .find(|&(f, t)| indegree[f] > 0 && indegree[t] > 0)
            .expect("a leftover vertex lies on a cycle");
        return Err(PipelineError::CycleDetected(format!(
            "{} -> {}",
            vertices[from].name, vertices[to].name
        )));
    }
    let mut topo_pos = vec![0; vertices.len()];
    for (pos, &v) in topo.iter().enumerate() {
        topo_pos[v] = pos;
    }

    Ok(Assembly {
        owner: None,
        vertices,
        index,
        edges,
        topo_pos,
        topo,
        sources,
        sinks,
        next_seq: 0,
        metrics: BTreeMap::new(),
    })
}

impl Assembly {
    pub fn with_owner(mut self, user: UserId) -> Self {
        self.owner = Some(user);
        self
    }

    pub fn owner(&self) -> Option<&UserId> {
        self.owner.as_ref()
    }

    pub fn component_count(&self) -> usize {
        self.vertices
            .iter()
            .filter(|v| matches!(v.kind, VertexKind::Component { .. }))
            .count()
    }

    pub fn bus_count(&self) -> usize {
        self.vertices.len() - self.component_count()
    }

    /// Names of components of the given type, in declaration order.
    pub fn components_of_type<'a>(&'a self, type_name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.vertices.iter().filter_map(move |v| match &v.kind {
            VertexKind::Component { type_name: t, .. } if t == type_name => Some(v.name.as_str()),
            _ => None,
        })
    }

    pub fn param(&self, component: &str, key: &str) -> Option<&str> {
        match &self.vertices[*self.index.get(component)?].kind {
            VertexKind::Component { params, .. } => params.get(key).map(String::as_str),
            VertexKind::Bus { .. } => None,
        }
    }

    pub fn is_source(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|i| self.sources.contains(i))
    }

    pub fn metrics(&self) -> &BTreeMap<String, u64> {
        &self.metrics
    }

    pub fn metric(&self, key: &str) -> u64 {
        self.metrics.get(key).copied().unwrap_or(0)
    }

    /// Sum of all component failures (`<component>.error.<code>` counters).
    pub fn error_count(&self) -> u64 {
        self.metrics
            .iter()
            .filter(|(k, _)| k.contains(".error."))
            .map(|(_, v)| v)
            .sum()
    }

    fn stamp(&mut self, mut event: Event) -> Event {
        event.seq = self.next_seq;
        self.next_seq += 1;
        event
    }

    /// Feeds an event into a source and returns everything that reaches a sink.
    pub fn inject(&mut self, source: &str, body: EventBody, now: Tick) -> Result<Vec<SinkOutput>, PipelineError> {
        let v = *self
            .index
            .get(source)
            .filter(|i| self.sources.contains(i))
            .ok_or_else(|| PipelineError::UnknownSource(source.to_string()))?;
        let kind = body.kind();
        if !self.vertices[v].accepts().contains(kind) {
            return Err(PipelineError::KindMismatch {
                target: source.to_string(),
                kind,
            });
        }
        let event = self.stamp(Event::new(body));
        self.propagate(v, vec![event], Vec::new(), now)
    }

    /// Publishes directly on a bus.
    pub fn publish(&mut self, bus: &str, body: EventBody, now: Tick) -> Result<Vec<SinkOutput>, PipelineError> {
        let v = *self
            .index
            .get(bus)
            .filter(|&&i| matches!(self.vertices[i].kind, VertexKind::Bus { .. }))
            .ok_or_else(|| PipelineError::UnknownBus(bus.to_string()))?;
        let kind = body.kind();
        if !self.vertices[v].accepts().contains(kind) {
            return Err(PipelineError::KindMismatch {
                target: bus.to_string(),
                kind,
            });
        }
        let event = self.stamp(Event::new(body));
        self.propagate(v, vec![event], Vec::new(), now)
    }

    /// Releases whatever a holding component (such as a buffer) has queued.
    pub fn flush(&mut self, component: &str, now: Tick) -> Result<Vec<SinkOutput>, PipelineError> {
        let v = *self
            .index
            .get(component)
            .ok_or_else(|| PipelineError::Undeclared(component.to_string()))?;
        let held = match &mut self.vertices[v].kind {
            VertexKind::Component { inner, .. } => inner.drain(),
            VertexKind::Bus { .. } => return Err(PipelineError::Undeclared(format!("component {component}"))),
        };
        self.propagate(v, Vec::new(), held, now)
    }

    /// Runs the graph from `start` in topological order. `inbox` is fed to
    /// `start`; `emitted` are treated as outputs already produced by `start`.
    fn propagate(
        &mut self,
        start: usize,
        inbox: Vec<Event>,
        emitted: Vec<Event>,
        now: Tick,
    ) -> Result<Vec<SinkOutput>, PipelineError> {
        let mut queues: Vec<VecDeque<Event>> = vec![VecDeque::new(); self.vertices.len()];
        queues[start].extend(inbox);
        let mut out = Vec::new();
        self.forward(start, emitted, &mut queues, &mut out)?;

        for pos in self.topo_pos[start]..self.topo.len() {
            let v = self.topo[pos];
            while let Some(event) = queues[v].pop_front() {
                let Vertex { name, kind } = &mut self.vertices[v];
                let produced = match kind {
                    VertexKind::Bus { .. } => {
                        if self.edges[v].is_empty() {
                            *self.metrics.entry(format!("{name}.dropped")).or_default() += 1;
                        }
                        for &t in &self.edges[v] {
                            queues[t].push_back(event.clone());
                        }
                        continue;
                    }
                    VertexKind::Component { inner, .. } => {
                        let kind = event.kind();
                        assert!(
                            inner.inputs().contains(kind),
                            "router delivered {kind} to `{name}` outside its input set"
                        );
                        let mut ctx = StepContext {
                            now,
                            owner: self.owner.as_ref(),
                            component: name,
                            counters: &mut self.metrics,
                        };
                        match inner.accept(event, &mut ctx) {
                            Ok(events) => events,
                            Err(e) => {
                                let key = format!("{name}.error.{}", e.code());
                                *self.metrics.entry(key).or_default() += 1;
                                Vec::new()
                            }
                        }
                    }
                };
                let produced = produced.into_iter().map(|e| self.stamp(e)).collect();
                self.forward(v, produced, &mut queues, &mut out)?;
            }
        }
        Ok(out)
    }

    fn forward(
        &mut self,
        v: usize,
        events: Vec<Event>,
        queues: &mut [VecDeque<Event>],
        out: &mut Vec<SinkOutput>,
    ) -> Result<(), PipelineError> {
        let VertexKind::Component { inner, .. } = &self.vertices[v].kind else {
            return Ok(());
        };
        let declared = inner.outputs();
        for event in events {
            let kind = event.kind();
            if !declared.contains(kind) {
                return Err(PipelineError::UndeclaredOutput {
                    component: self.vertices[v].name.clone(),
                    kind,
                });
            }
            if self.sinks.contains(&v) {
                out.push(SinkOutput {
                    sink: self.vertices[v].name.clone(),
                    event: event.clone(),
                });
            }
            for &t in &self.edges[v] {
                if self.vertices[t].accepts().contains(kind) {
                    queues[t].push_back(event.clone());
                } else {
                    let key = match self.vertices[t].kind {
                        VertexKind::Bus { .. } => format!("{}.kind-mismatch", self.vertices[t].name),
                        VertexKind::Component { .. } => format!("{}.kind-filtered", self.vertices[t].name),
                    };
                    *self.metrics.entry(key).or_default() += 1;
                }
            }
        }
        Ok(())
    }

    /// Component type of a vertex, for diagnostics.
    pub fn type_of(&self, name: &str) -> Option<&str> {
        match &self.vertices[*self.index.get(name)?].kind {
            VertexKind::Component { type_name, .. } => Some(type_name),
            VertexKind::Bus { .. } => Some("bus"),
        }
    }
}
