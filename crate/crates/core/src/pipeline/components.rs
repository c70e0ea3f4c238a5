//! Built-in pipeline components and the registry that instantiates them by
//! type name.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::event::{Event, EventBody, EventKind, KindSet};
use super::nmea::{self, NmeaError};
use crate::geo::GeoPoint;
use crate::ids::{Tick, UserId};

pub type Params = BTreeMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error(transparent)]
    Nmea(#[from] NmeaError),
    #[error("{0}")]
    Other(String),
}

impl ComponentError {
    /// Short metric name for the failure.
    pub fn code(&self) -> &'static str {
        match self {
            ComponentError::Nmea(NmeaError::ChecksumMismatch { .. }) => "checksum-mismatch",
            ComponentError::Nmea(NmeaError::Malformed(_)) => "malformed-sentence",
            ComponentError::Nmea(NmeaError::FixQualityZero) => "fix-quality-zero",
            ComponentError::Nmea(NmeaError::NotGga(_)) => "not-gga",
            ComponentError::Other(_) => "other",
        }
    }
}

/// Per-call context handed to components by the router.
pub struct StepContext<'a> {
    pub now: Tick,
    pub owner: Option<&'a UserId>,
    pub(crate) component: &'a str,
    pub(crate) counters: &'a mut BTreeMap<String, u64>,
}

impl StepContext<'_> {
    /// Bumps the counter `<component>.<what>`.
    pub fn count(&mut self, what: &str) {
        *self.counters.entry(format!("{}.{what}", self.component)).or_default() += 1;
    }
}

/// Minimum interface of a pipeline component.
pub trait Component: Send {
    fn type_name(&self) -> &str;
    fn inputs(&self) -> KindSet;
    fn outputs(&self) -> KindSet;
    fn accept(&mut self, event: Event, ctx: &mut StepContext<'_>) -> Result<Vec<Event>, ComponentError>;

    /// Releases anything the component is holding back.
    fn drain(&mut self) -> Vec<Event> {
        Vec::new()
    }
}

/// Forwards events of a fixed kind set unchanged. Device wrappers, the SMS
/// device, the user interface tool and the server-side service stubs are
/// all relays that differ only in name and kinds.
pub struct Relay {
    type_name: String,
    kinds: KindSet,
}

impl Relay {
    pub fn new(type_name: &str, kinds: KindSet) -> Self {
        Self {
            type_name: type_name.to_string(),
            kinds,
        }
    }
}

impl Component for Relay {
    fn type_name(&self) -> &str {
        &self.type_name
    }
    fn inputs(&self) -> KindSet {
        self.kinds
    }
    fn outputs(&self) -> KindSet {
        self.kinds
    }
    fn accept(&mut self, event: Event, _: &mut StepContext<'_>) -> Result<Vec<Event>, ComponentError> {
        Ok(vec![event])
    }
}

/// Turns GGA sentences into location events for one user.
pub struct NmeaAdapter {
    user: Option<UserId>,
}

/// Parses `raw` as a GGA sentence and wraps the fix as a location event.
pub fn nmea_adapt(raw: &str, user: &UserId, now: Tick) -> Result<EventBody, NmeaError> {
    let fix = nmea::parse_gga(raw)?;
    Ok(EventBody::Location {
        user: user.clone(),
        point: fix.point,
        t: now,
    })
}

impl Component for NmeaAdapter {
    fn type_name(&self) -> &str {
        "nmea-adapter"
    }
    fn inputs(&self) -> KindSet {
        KindSet::of(&[EventKind::RawDeviceString])
    }
    fn outputs(&self) -> KindSet {
        KindSet::of(&[EventKind::Location])
    }
    fn accept(&mut self, event: Event, ctx: &mut StepContext<'_>) -> Result<Vec<Event>, ComponentError> {
        let EventBody::RawDeviceString { line } = &event.body else {
            return Ok(vec![]);
        };
        let user = self
            .user
            .as_ref()
            .or(ctx.owner)
            .ok_or_else(|| ComponentError::Other("adapter has no user".into()))?
            .clone();
        match nmea_adapt(line, &user, ctx.now) {
            Ok(body) => Ok(vec![Event::new(body)]),
            Err(NmeaError::NotGga(_)) => {
                ctx.count("skipped");
                Ok(vec![])
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Outcome of feeding one location through the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Emit,
    Suppress,
}

/// Emits when there is no previous point or the great-circle distance from
/// the last emitted point exceeds `threshold_m`. Updates `last` on emit.
pub fn threshold_filter(last: &mut Option<GeoPoint>, point: GeoPoint, threshold_m: f64) -> FilterDecision {
    match last {
        Some(prev) if nmea::haversine_m(*prev, point) <= threshold_m => FilterDecision::Suppress,
        _ => {
            *last = Some(point);
            FilterDecision::Emit
        }
    }
}

/// Per-user distance threshold on location events.
pub struct ThresholdFilter {
    threshold_m: f64,
    last: BTreeMap<UserId, GeoPoint>,
}

impl ThresholdFilter {
    pub fn new(threshold_m: f64) -> Result<Self, String> {
        if !(threshold_m.is_finite() && threshold_m > 0.0) {
            return Err(format!("threshold must be positive, got {threshold_m}"));
        }
        Ok(Self {
            threshold_m,
            last: BTreeMap::new(),
        })
    }
}

impl Component for ThresholdFilter {
    fn type_name(&self) -> &str {
        "threshold-filter"
    }
    fn inputs(&self) -> KindSet {
        KindSet::of(&[EventKind::Location])
    }
    fn outputs(&self) -> KindSet {
        KindSet::of(&[EventKind::Location])
    }
    fn accept(&mut self, event: Event, ctx: &mut StepContext<'_>) -> Result<Vec<Event>, ComponentError> {
        let EventBody::Location { user, point, .. } = &event.body else {
            return Ok(vec![]);
        };
        let mut last = self.last.get(user).copied();
        match threshold_filter(&mut last, *point, self.threshold_m) {
            FilterDecision::Emit => {
                self.last.insert(user.clone(), *point);
                Ok(vec![event])
            }
            FilterDecision::Suppress => {
                ctx.count("suppressed");
                Ok(vec![])
            }
        }
    }
}

/// Bounded FIFO. Holds events until drained; when full the oldest event is
/// dropped.
pub struct Buffer {
    kinds: KindSet,
    capacity: usize,
    held: VecDeque<Event>,
}

impl Buffer {
    pub fn new(kinds: KindSet, capacity: usize) -> Result<Self, String> {
        if capacity == 0 {
            return Err("buffer capacity must be positive".into());
        }
        Ok(Self {
            kinds,
            capacity,
            held: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }
}

impl Component for Buffer {
    fn type_name(&self) -> &str {
        "buffer"
    }
    fn inputs(&self) -> KindSet {
        self.kinds
    }
    fn outputs(&self) -> KindSet {
        self.kinds
    }
    fn accept(&mut self, event: Event, ctx: &mut StepContext<'_>) -> Result<Vec<Event>, ComponentError> {
        if self.held.len() == self.capacity {
            self.held.pop_front();
            ctx.count("overflow");
        }
        self.held.push_back(event);
        Ok(vec![])
    }
    fn drain(&mut self) -> Vec<Event> {
        self.held.drain(..).collect()
    }
}

type Factory = Box<dyn Fn(&Params) -> Result<Box<dyn Component>, String> + Send + Sync>;

/// Maps component type names to constructors.
pub struct ComponentRegistry {
    factories: BTreeMap<String, Factory>,
}

fn relay_factory(type_name: &'static str, kinds: &[EventKind]) -> Factory {
    let kinds = KindSet::of(kinds);
    Box::new(move |_| Ok(Box::new(Relay::new(type_name, kinds)) as Box<dyn Component>))
}

fn param<T: std::str::FromStr>(params: &Params, key: &str) -> Result<Option<T>, String> {
    params
        .get(key)
        .map(|v| v.parse().map_err(|_| format!("bad value `{v}` for `{key}`")))
        .transpose()
}

impl ComponentRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        type_name: &str,
        factory: impl Fn(&Params) -> Result<Box<dyn Component>, String> + Send + Sync + 'static,
    ) {
        self.factories.insert(type_name.to_string(), Box::new(factory));
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.factories.contains_key(type_name)
    }

    pub fn create(&self, type_name: &str, params: &Params) -> Option<Result<Box<dyn Component>, String>> {
        self.factories.get(type_name).map(|f| f(params))
    }
}

impl Default for ComponentRegistry {
    /// All built-in component types.
    fn default() -> Self {
        use EventKind::*;
        let mut r = Self::empty();
        r.factories.insert("gps".into(), relay_factory("gps", &[RawDeviceString]));
        r.factories.insert("sms-device".into(), relay_factory("sms-device", &[Location]));
        r.factories.insert("hearsay-ui".into(), relay_factory("hearsay-ui", &[Location, HearsayNotice]));
        r.factories.insert("sms-gateway".into(), relay_factory("sms-gateway", &[Location]));
        r.factories.insert("location-service".into(), relay_factory("location-service", &[Location]));
        r.factories.insert("p2p-out".into(), relay_factory("p2p-out", &[Location]));
        r.factories.insert("p2p-in".into(), relay_factory("p2p-in", &[EnterWhere]));
        r.factories.insert("hearsay-service".into(), relay_factory("hearsay-service", &[EnterWhere]));
        r.factories.insert("proxy".into(), relay_factory("proxy", &[HearsayNotice]));
        r.register("channel-receiver", |p| {
            if !p.contains_key("channel") {
                return Err("channel-receiver needs `channel=`".into());
            }
            Ok(Box::new(Relay::new("channel-receiver", KindSet::of(&[HearsayNotice]))))
        });
        r.register("nmea-adapter", |p| {
            Ok(Box::new(NmeaAdapter {
                user: p.get("user").map(|u| UserId::new(u.as_str())),
            }))
        });
        r.register("threshold-filter", |p| {
            let threshold = param::<f64>(p, "threshold")?.ok_or("threshold-filter needs `threshold=`")?;
            Ok(Box::new(ThresholdFilter::new(threshold)?))
        });
        r.register("buffer", |p| {
            let capacity = param::<usize>(p, "capacity")?.unwrap_or(16);
            let kinds = match p.get("kinds") {
                Some(list) => KindSet::parse(list).ok_or_else(|| format!("bad kinds `{list}`"))?,
                None => KindSet::all(),
            };
            Ok(Box::new(Buffer::new(kinds, capacity)?))
        });
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let mut none = None;
        assert_eq!(threshold_filter(&mut none, p(1.0, 1.0), 100.0), FilterDecision::Emit);
        assert_eq!(none, Some(p(1.0, 1.0)));

        let mut s = Some(p(48.0, 11.0));
        assert_eq!(threshold_filter(&mut s, p(48.0005, 11.0), 100.0), FilterDecision::Suppress);
        assert_eq!(s, Some(p(48.0, 11.0)));
        assert_eq!(threshold_filter(&mut s, p(48.0010, 11.0), 100.0), FilterDecision::Emit);
        assert_eq!(s, Some(p(48.0010, 11.0)));
    }

    #[test]
    fn filter_rejects_non_positive_threshold() {
        assert!(ThresholdFilter::new(0.0).is_err());
        assert!(ThresholdFilter::new(-5.0).is_err());
        assert!(ThresholdFilter::new(f64::NAN).is_err());
    }

    #[test]
    fn adapter_direct() {
        let line = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";
        let EventBody::Location { user, point, t } = nmea_adapt(line, &"bob".into(), 12).unwrap() else {
            panic!("expected location");
        };
        assert_eq!(user, UserId::new("bob"));
        assert_eq!(t, 12);
        assert!((point.lat - 48.1173).abs() < 1e-9);
        assert!((point.lon - 11.516_667).abs() < 1e-6);
    }

    #[test]
    fn buffer_drops_oldest() {
        let mut counters = BTreeMap::new();
        let mut ctx = StepContext {
            now: 0,
            owner: None,
            component: "buf",
            counters: &mut counters,
        };
        let mut b = Buffer::new(KindSet::all(), 2).unwrap();
        for i in 0..3 {
            let e = Event::new(EventBody::ProfileRequest {
                user: UserId::new(format!("u{i}")),
            });
            assert!(b.accept(e, &mut ctx).unwrap().is_empty());
        }
        let users: Vec<_> = b
            .drain()
            .into_iter()
            .map(|e| match e.body {
                EventBody::ProfileRequest { user } => user.to_string(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(users, ["u1", "u2"]);
        assert_eq!(counters["buf.overflow"], 1);
    }

    #[test]
    fn registry_param_errors() {
        let r = ComponentRegistry::default();
        assert!(r.create("threshold-filter", &Params::new()).unwrap().is_err());
        assert!(r.create("channel-receiver", &Params::new()).unwrap().is_err());
        assert!(r.create("no-such-thing", &Params::new()).is_none());
    }
}
