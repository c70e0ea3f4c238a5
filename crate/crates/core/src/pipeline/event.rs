//! Events and their canonical XML wire form.
//!
//! Every event serializes to one self-closing element. The element name is
//! the kind and the attributes appear in a fixed order:
//!
//! | element           | attributes                        |
//! |-------------------|-----------------------------------|
//! | `raw`             | `text`                            |
//! | `location`        | `user lat lon t`                  |
//! | `enter-where`     | `user where t`                    |
//! | `hearsay-notice`  | `id user info`                    |
//! | `profile-request` | `user`                            |
//! | `profile-reply`   | `user home tags contacts`         |
//! | anything else     | generic, attributes sorted by key |
//!
//! Coordinates are printed with six decimal places. Tags are sorted and
//! comma-joined; contacts keep their preference order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::geo::{GeoPoint, RegionId};
use crate::ids::{HearsayId, NodeId, Tick, UserId};
use crate::profile_cache::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    RawDeviceString,
    Location,
    EnterWhere,
    HearsayNotice,
    ProfileRequest,
    ProfileReply,
    Generic,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::RawDeviceString,
        EventKind::Location,
        EventKind::EnterWhere,
        EventKind::HearsayNotice,
        EventKind::ProfileRequest,
        EventKind::ProfileReply,
        EventKind::Generic,
    ];

    /// Name used in assembly files and as the XML element name.
    pub fn name(self) -> &'static str {
        match self {
            EventKind::RawDeviceString => "raw",
            EventKind::Location => "location",
            EventKind::EnterWhere => "enter-where",
            EventKind::HearsayNotice => "hearsay-notice",
            EventKind::ProfileRequest => "profile-request",
            EventKind::ProfileReply => "profile-reply",
            EventKind::Generic => "generic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Small set of event kinds.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u8);

impl KindSet {
    pub const EMPTY: KindSet = KindSet(0);

    pub fn of(kinds: &[EventKind]) -> Self {
        kinds.iter().fold(Self::EMPTY, |s, k| s.with(*k))
    }

    pub fn all() -> Self {
        Self::of(&EventKind::ALL)
    }

    pub fn with(self, kind: EventKind) -> Self {
        Self(self.0 | kind.bit())
    }

    pub fn contains(self, kind: EventKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn intersects(self, other: KindSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: KindSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = EventKind> {
        EventKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    /// Parses a comma-separated list of kind names.
    pub fn parse(list: &str) -> Option<Self> {
        list.split(',')
            .map(|s| EventKind::from_name(s.trim()))
            .try_fold(Self::EMPTY, |acc, k| k.map(|k| acc.with(k)))
    }
}

impl fmt::Debug for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    RawDeviceString { line: String },
    Location { user: UserId, point: GeoPoint, t: Tick },
    EnterWhere { user: UserId, region: RegionId, t: Tick },
    HearsayNotice { hearsay: HearsayId, info: String, user: UserId },
    ProfileRequest { user: UserId },
    ProfileReply { user: UserId, profile: Profile },
    Generic { name: String, attrs: BTreeMap<String, String> },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::RawDeviceString { .. } => EventKind::RawDeviceString,
            EventBody::Location { .. } => EventKind::Location,
            EventBody::EnterWhere { .. } => EventKind::EnterWhere,
            EventBody::HearsayNotice { .. } => EventKind::HearsayNotice,
            EventBody::ProfileRequest { .. } => EventKind::ProfileRequest,
            EventBody::ProfileReply { .. } => EventKind::ProfileReply,
            EventBody::Generic { .. } => EventKind::Generic,
        }
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let (name, attrs): (&str, Vec<(&str, String)>) = match self {
            EventBody::RawDeviceString { line } => ("raw", vec![("text", line.clone())]),
            EventBody::Location { user, point, t } => (
                "location",
                vec![
                    ("user", user.to_string()),
                    ("lat", format!("{:.6}", point.lat)),
                    ("lon", format!("{:.6}", point.lon)),
                    ("t", t.to_string()),
                ],
            ),
            EventBody::EnterWhere { user, region, t } => (
                "enter-where",
                vec![("user", user.to_string()), ("where", region.to_string()), ("t", t.to_string())],
            ),
            EventBody::HearsayNotice { hearsay, info, user } => (
                "hearsay-notice",
                vec![("id", hearsay.to_string()), ("user", user.to_string()), ("info", info.clone())],
            ),
            EventBody::ProfileRequest { user } => ("profile-request", vec![("user", user.to_string())]),
            EventBody::ProfileReply { user, profile } => (
                "profile-reply",
                vec![
                    ("user", user.to_string()),
                    ("home", profile.home.to_string()),
                    ("tags", join(profile.tags.iter().map(String::as_str))),
                    ("contacts", join(profile.contacts.iter().map(String::as_str))),
                ],
            ),
            EventBody::Generic { name, attrs } => {
                out.push('<');
                out.push_str(name);
                for (k, v) in attrs {
                    push_attr(&mut out, k, v);
                }
                out.push_str("/>");
                return out;
            }
        };
        out.push('<');
        out.push_str(name);
        for (k, v) in &attrs {
            push_attr(&mut out, k, v);
        }
        out.push_str("/>");
        out
    }

    pub fn from_xml(text: &str) -> Result<Self, WireError> {
        let (name, mut attrs) = parse_element(text)?;
        let mut take = |key: &str| attrs.remove(key).ok_or_else(|| WireError::MissingAttr(key.to_string()));
        let body = match name.as_str() {
            "raw" => EventBody::RawDeviceString { line: take("text")? },
            "location" => {
                let user = UserId::new(take("user")?);
                let lat = parse_num(&take("lat")?)?;
                let lon = parse_num(&take("lon")?)?;
                let t = parse_num(&take("t")?)?;
                let point = GeoPoint::planar(lat, lon).map_err(|e| WireError::Malformed(e.to_string()))?;
                EventBody::Location { user, point, t }
            }
            "enter-where" => EventBody::EnterWhere {
                user: UserId::new(take("user")?),
                region: RegionId::new(take("where")?),
                t: parse_num(&take("t")?)?,
            },
            "hearsay-notice" => EventBody::HearsayNotice {
                hearsay: HearsayId::new(take("id")?),
                user: UserId::new(take("user")?),
                info: take("info")?,
            },
            "profile-request" => EventBody::ProfileRequest {
                user: UserId::new(take("user")?),
            },
            "profile-reply" => {
                let user = UserId::new(take("user")?);
                let home = NodeId::new(take("home")?);
                let tags: BTreeSet<String> = split(&take("tags")?).collect();
                let contacts: Vec<String> = split(&take("contacts")?).collect();
                EventBody::ProfileReply {
                    profile: Profile {
                        user: user.clone(),
                        tags,
                        contacts,
                        home,
                    },
                    user,
                }
            }
            _ => {
                return Ok(EventBody::Generic {
                    name,
                    attrs: attrs.into_iter().collect(),
                })
            }
        };
        if let Some(extra) = attrs.keys().next() {
            return Err(WireError::UnexpectedAttr(extra.clone()));
        }
        Ok(body)
    }
}

/// An event tagged with the sequence number assigned by its assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub body: EventBody,
}

impl Event {
    pub fn new(body: EventBody) -> Self {
        Self { seq: 0, body }
    }

    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn to_xml(&self) -> String {
        self.body.to_xml()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed element: {0}")]
    Malformed(String),
    #[error("missing attribute `{0}`")]
    MissingAttr(String),
    #[error("unexpected attribute `{0}`")]
    UnexpectedAttr(String),
}

fn join<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(',').filter(|t| !t.is_empty()).map(str::to_string)
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, WireError> {
    s.parse().map_err(|_| WireError::Malformed(format!("bad number `{s}`")))
}

fn push_attr(out: &mut String, key: &str, value: &str) {
    out.push(' ');
    out.push_str(key);
    out.push_str("=\"");
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn unescape(s: &str) -> Result<String, WireError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let end = rest.find(';').ok_or_else(|| WireError::Malformed("unterminated entity".into()))?;
        out.push(match &rest[..=end] {
            "&amp;" => '&',
            "&lt;" => '<',
            "&gt;" => '>',
            "&quot;" => '"',
            "&apos;" => '\'',
            other => return Err(WireError::Malformed(format!("unknown entity {other}"))),
        });
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn parse_element(text: &str) -> Result<(String, BTreeMap<String, String>), WireError> {
    let inner = text
        .trim()
        .strip_prefix('<')
        .and_then(|s| s.strip_suffix("/>"))
        .ok_or_else(|| WireError::Malformed("expected a self-closing element".into()))?;
    let name_end = inner.find(char::is_whitespace).unwrap_or(inner.len());
    let name = &inner[..name_end];
    if name.is_empty() {
        return Err(WireError::Malformed("empty element name".into()));
    }
    let mut attrs = BTreeMap::new();
    let mut rest = inner[name_end..].trim_start();
    while !rest.is_empty() {
        let eq = rest.find("=\"").ok_or_else(|| WireError::Malformed("expected key=\"value\"".into()))?;
        let key = rest[..eq].trim();
        let after = &rest[eq + 2..];
        let close = after.find('"').ok_or_else(|| WireError::Malformed("unterminated value".into()))?;
        if attrs.insert(key.to_string(), unescape(&after[..close])?).is_some() {
            return Err(WireError::Malformed(format!("duplicate attribute `{key}`")));
        }
        rest = after[close + 1..].trim_start();
    }
    Ok((name.to_string(), attrs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn location_wire_format() {
        let e = EventBody::Location {
            user: "bob".into(),
            point: GeoPoint::new(48.1173, 11.516667).unwrap(),
            t: 12,
        };
        assert_eq!(e.to_xml(), r#"<location user="bob" lat="48.117300" lon="11.516667" t="12"/>"#);
    }

    #[test]
    fn escapes_attribute_values() {
        let e = EventBody::HearsayNotice {
            hearsay: "h1".into(),
            info: r#"Café "Chez <Marie>" & co"#.into(),
            user: "bob".into(),
        };
        let xml = e.to_xml();
        assert_eq!(
            xml,
            r#"<hearsay-notice id="h1" user="bob" info="Café &quot;Chez &lt;Marie&gt;&quot; &amp; co"/>"#
        );
        assert_eq!(EventBody::from_xml(&xml).unwrap(), e);
    }

    #[test]
    fn profile_reply_round_trip() {
        let e = EventBody::ProfileReply {
            user: "bob".into(),
            profile: Profile {
                user: "bob".into(),
                tags: ["jazz".to_string(), "cafe".to_string()].into(),
                contacts: vec!["sms".into(), "gprs".into()],
                home: "n-brussels".into(),
            },
        };
        let xml = e.to_xml();
        assert_eq!(xml, r#"<profile-reply user="bob" home="n-brussels" tags="cafe,jazz" contacts="sms,gprs"/>"#);
        assert_eq!(EventBody::from_xml(&xml).unwrap(), e);
    }

    #[test]
    fn rejects_bad_elements() {
        assert!(EventBody::from_xml("<location user=\"a\"").is_err());
        assert_eq!(
            EventBody::from_xml(r#"<profile-request/>"#),
            Err(WireError::MissingAttr("user".into()))
        );
        assert_eq!(
            EventBody::from_xml(r#"<profile-request user="a" x="1"/>"#),
            Err(WireError::UnexpectedAttr("x".into()))
        );
    }

    #[test]
    fn kind_set_ops() {
        let a = KindSet::of(&[EventKind::Location, EventKind::HearsayNotice]);
        assert!(a.contains(EventKind::Location));
        assert!(!a.contains(EventKind::RawDeviceString));
        assert!(KindSet::of(&[EventKind::Location]).is_subset(a));
        assert!(!a.is_subset(KindSet::of(&[EventKind::Location])));
        assert_eq!(KindSet::parse("location,hearsay-notice"), Some(a));
        assert_eq!(KindSet::parse("location,bogus"), None);
    }

    proptest! {
        #[test]
        fn generic_round_trip(
            name in "[a-z][a-z0-9]{0,8}-x",
            attrs in proptest::collection::btree_map("[a-z]{1,6}", "[ -~]{0,12}", 0..5),
        ) {
            let e = EventBody::Generic { name, attrs };
            prop_assert_eq!(EventBody::from_xml(&e.to_xml()).unwrap(), e);
        }
    }
}
