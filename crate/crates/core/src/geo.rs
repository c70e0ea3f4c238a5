//! Hierarchical "where" model.
//!
//! A [`WorldTree`] is a recursive partition of a rectangle into smaller,
//! pairwise-disjoint child rectangles. Children need not cover their parent;
//! a point that falls in a gap resolves to the parent.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("point ({lat}, {lon}) lies outside the world")]
    PointOutsideWorld { lat: f64, lon: f64 },
    #[error("target lies outside the world")]
    TargetOutsideWorld,
    #[error("unknown region `{0}`")]
    UnknownRegion(RegionId),
    #[error("region `{0}` is defined more than once")]
    DuplicateRegion(RegionId),
    #[error("region `{region}`: {reason}")]
    InvalidBounds { region: RegionId, reason: String },
    #[error("region `{region}` names unknown parent `{parent}`")]
    UnknownParent { region: RegionId, parent: RegionId },
    #[error("world must have exactly one root region, found {0}")]
    RootCount(usize),
    #[error("region `{0}` is not reachable from the root")]
    Unreachable(RegionId),
    #[error("region `{region}` is not inside its parent `{parent}`")]
    OutsideParent { region: RegionId, parent: RegionId },
    #[error("sibling regions `{0}` and `{1}` overlap")]
    Overlap(RegionId, RegionId),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A position. Latitude first, as in every location report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// A geographic point: `lat` in `[-90, 90)`, `lon` in `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite()
            && lon.is_finite()
            && (-90.0..90.0).contains(&lat)
            && (-180.0..180.0).contains(&lon)
        {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidPoint { lat, lon })
        }
    }

    /// A point in an abstract planar world. Only finiteness is checked, so
    /// test worlds such as `[0, 100)²` can be expressed.
    pub fn planar(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidPoint { lat, lon })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(String);

impl RegionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RegionId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Axis-aligned rectangle, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Rect {
    pub const fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    pub fn contains_point(&self, p: GeoPoint) -> bool {
        self.lat_min <= p.lat && p.lat < self.lat_max && self.lon_min <= p.lon && p.lon < self.lon_max
    }

    /// Full containment of `other`.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.lat_min <= other.lat_min
            && other.lat_max <= self.lat_max
            && self.lon_min <= other.lon_min
            && other.lon_max <= self.lon_max
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.lat_min < other.lat_max
            && other.lat_min < self.lat_max
            && self.lon_min < other.lon_max
            && other.lon_min < self.lon_max
    }

    fn validate(&self) -> Result<(), String> {
        let all = [self.lat_min, self.lat_max, self.lon_min, self.lon_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("bounds must be finite".into());
        }
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err("bounds are empty (min must be below max)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: RegionId,
    pub bounds: Rect,
    pub parent: Option<RegionId>,
    pub children: Vec<RegionId>,
    pub depth: usize,
}

/// One line of a world file, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub id: RegionId,
    pub parent: Option<RegionId>,
    pub bounds: Rect,
}

impl RegionRecord {
    pub fn new(id: &str, parent: Option<&str>, bounds: Rect) -> Self {
        Self {
            id: RegionId::new(id),
            parent: parent.map(RegionId::new),
            bounds,
        }
    }
}

/// Either an existing region or an arbitrary rectangle.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Region(RegionId),
    Rect(Rect),
}

/// Immutable region hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTree {
    regions: BTreeMap<RegionId, Region>,
    root: RegionId,
    max_depth: usize,
}

impl WorldTree {
    /// Builds and validates a world. Children keep the order in which their
    /// records appear.
    pub fn from_records(records: Vec<RegionRecord>) -> Result<Self, GeoError> {
        let mut regions: BTreeMap<RegionId, Region> = BTreeMap::new();
        let mut order = Vec::with_capacity(records.len());
        for rec in records {
            rec.bounds.validate().map_err(|reason| GeoError::InvalidBounds {
                region: rec.id.clone(),
                reason,
            })?;
            if regions.contains_key(&rec.id) {
                return Err(GeoError::DuplicateRegion(rec.id));
            }
            order.push(rec.id.clone());
            regions.insert(
                rec.id.clone(),
                Region {
                    id: rec.id,
                    bounds: rec.bounds,
                    parent: rec.parent,
                    children: Vec::new(),
                    depth: 0,
                },
            );
        }

        let roots: Vec<&RegionId> = order.iter().filter(|id| regions[*id].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(GeoError::RootCount(roots.len()));
        }
        let root = roots[0].clone();

        for id in &order {
            if let Some(parent) = regions[id].parent.clone() {
                let Some(p) = regions.get_mut(&parent) else {
                    return Err(GeoError::UnknownParent {
                        region: id.clone(),
                        parent,
                    });
                };
                p.children.push(id.clone());
            }
        }

        // Depths by walking down from the root; anything left over sits on a cycle.
        let mut seen = 0usize;
        let mut stack = vec![(root.clone(), 0usize)];
        let mut max_depth = 0;
        while let Some((id, depth)) = stack.pop() {
            seen += 1;
            max_depth = max_depth.max(depth);
            let region = regions.get_mut(&id).expect("child ids were resolved above");
            region.depth = depth;
            for child in region.children.clone() {
                stack.push((child, depth + 1));
            }
        }
        if seen != regions.len() {
            let mut reachable = std::collections::BTreeSet::new();
            let mut stack = vec![root.clone()];
            while let Some(id) = stack.pop() {
                if reachable.insert(id.clone()) {
                    stack.extend(regions[&id].children.iter().cloned());
                }
            }
            let orphan = order.iter().find(|id| !reachable.contains(*id)).expect("count mismatch");
            return Err(GeoError::Unreachable(orphan.clone()));
        }

        for region in regions.values() {
            if let Some(parent) = &region.parent {
                if !regions[parent].bounds.contains_rect(&region.bounds) {
                    return Err(GeoError::OutsideParent {
                        region: region.id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
            for (i, a) in region.children.iter().enumerate() {
                for b in &region.children[i + 1..] {
                    if regions[a].bounds.intersects(&regions[b].bounds) {
                        return Err(GeoError::Overlap(a.clone(), b.clone()));
                    }
                }
            }
        }

        Ok(Self {
            regions,
            root,
            max_depth,
        })
    }

    /// Parses the world file format: one region per line,
    /// `id parent lat_min lat_max lon_min lon_max`, with `-` for the root's
    /// parent. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        Self::from_records(parse_region_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))?)
    }

    pub fn root(&self) -> &RegionId {
        &self.root
    }

    pub fn root_region(&self) -> &Region {
        &self.regions[&self.root]
    }

    pub fn region(&self, id: &RegionId) -> Option<&Region> {
        self.regions.get(id)
    }

    pub fn get(&self, id: &RegionId) -> Result<&Region, GeoError> {
        self.regions.get(id).ok_or_else(|| GeoError::UnknownRegion(id.clone()))
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Depth of the deepest region.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn depth(&self, id: &RegionId) -> Option<usize> {
        self.regions.get(id).map(|r| r.depth)
    }

    /// True when `ancestor` is `id` or lies on the path from the root to `id`.
    pub fn is_ancestor_or_self(&self, ancestor: &RegionId, id: &RegionId) -> bool {
        let mut cur = self.regions.get(id);
        while let Some(r) = cur {
            if &r.id == ancestor {
                return true;
            }
            cur = r.parent.as_ref().and_then(|p| self.regions.get(p));
        }
        false
    }

    pub fn is_strict_descendant(&self, id: &RegionId, ancestor: &RegionId) -> bool {
        id != ancestor && self.is_ancestor_or_self(ancestor, id)
    }

    /// Root-to-region chain of ids.
    pub fn ancestry(&self, id: &RegionId) -> Result<Vec<RegionId>, GeoError> {
        let mut chain = Vec::new();
        let mut cur = Some(self.get(id)?);
        while let Some(r) = cur {
            chain.push(r.id.clone());
            cur = r.parent.as_ref().map(|p| &self.regions[p]);
        }
        chain.reverse();
        Ok(chain)
    }

    /// Deepest region containing `p`.
    pub fn resolve_deepest(&self, p: GeoPoint) -> Result<RegionId, GeoError> {
        self.region_path(p).map(|mut path| path.pop().expect("path holds at least the root"))
    }

    /// Regions containing `p`, from the root down to the deepest one.
    pub fn region_path(&self, p: GeoPoint) -> Result<Vec<RegionId>, GeoError> {
        let mut cur = self.root_region();
        if !cur.bounds.contains_point(p) {
            return Err(GeoError::PointOutsideWorld { lat: p.lat, lon: p.lon });
        }
        let mut path = vec![cur.id.clone()];
        // siblings are disjoint, so at most one child matches
        while let Some(next) = cur
            .children
            .iter()
            .map(|c| &self.regions[c])
            .find(|c| c.bounds.contains_point(p))
        {
            path.push(next.id.clone());
            cur = next;
        }
        Ok(path)
    }

    /// The region itself for an id, or the deepest region fully containing a rectangle.
    pub fn deepest_container(&self, target: &Target) -> Result<RegionId, GeoError> {
        match target {
            Target::Region(id) => self.get(id).map(|r| r.id.clone()),
            Target::Rect(rect) => {
                let mut cur = self.root_region();
                if !cur.bounds.contains_rect(rect) {
                    return Err(GeoError::TargetOutsideWorld);
                }
                while let Some(next) = cur
                    .children
                    .iter()
                    .map(|c| &self.regions[c])
                    .find(|c| c.bounds.contains_rect(rect))
                {
                    cur = next;
                }
                Ok(cur.id.clone())
            }
        }
    }

    /// The depth-`depth` ancestor of the deepest region containing `p`; a
    /// shallower leaf stands for itself.
    pub fn ancestor_at(&self, p: GeoPoint, depth: usize) -> Result<RegionId, GeoError> {
        let mut path = self.region_path(p)?;
        path.truncate(depth + 1);
        Ok(path.pop().expect("non-empty"))
    }

    /// Number of consecutive pairs in `trace` whose depth-`depth` ancestors differ.
    pub fn transition_count(&self, trace: &[GeoPoint], depth: usize) -> Result<usize, GeoError> {
        let ancestors = trace
            .iter()
            .map(|p| self.ancestor_at(*p, depth))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ancestors.windows(2).filter(|w| w[0] != w[1]).count())
    }

    /// Transition counts for every depth `0..=max_depth`, resolving each point once.
    pub fn transition_profile(&self, trace: &[GeoPoint]) -> Result<Vec<usize>, GeoError> {
        let paths = trace
            .iter()
            .map(|p| self.region_path(*p))
            .collect::<Result<Vec<_>, _>>()?;
        let at = |path: &[RegionId], d: usize| path.get(d).unwrap_or_else(|| path.last().unwrap()).clone();
        Ok((0..=self.max_depth)
            .map(|d| paths.windows(2).filter(|w| at(&w[0], d) != at(&w[1], d)).count())
            .collect())
    }
}

/// `contains` as a free function over a single region.
pub fn contains(region: &Region, p: GeoPoint) -> bool {
    region.bounds.contains_point(p)
}

pub(crate) fn parse_region_lines<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Vec<RegionRecord>, GeoError> {
    let mut out = Vec::new();
    for (line, raw) in lines {
        let text = strip_comment(raw);
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(GeoError::Parse {
                line,
                reason: format!("expected 6 fields (id parent lat_min lat_max lon_min lon_max), got {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 4];
        for (slot, s) in nums.iter_mut().zip(&fields[2..]) {
            *slot = s.parse().map_err(|_| GeoError::Parse {
                line,
                reason: format!("region `{}`: bad number `{s}`", fields[0]),
            })?;
        }
        out.push(RegionRecord {
            id: RegionId::new(fields[0]),
            parent: (fields[1] != "-").then(|| RegionId::new(fields[1])),
            bounds: Rect::new(nums[0], nums[1], nums[2], nums[3]),
        });
    }
    Ok(out)
}

pub(crate) fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// The canonical six-region test world.
///
/// ```text
/// world    [0,100)  x [0,100)
/// france   [0,50)   x [0,100)   belgium  [50,100) x [0,100)
/// paris    [0,25)   x [0,50)    brussels [50,75)  x [0,50)
/// rue-x    [0,5)    x [0,5)
/// ```
pub fn world1() -> WorldTree {
    WorldTree::from_records(vec![
        RegionRecord::new("world", None, Rect::new(0.0, 100.0, 0.0, 100.0)),
        RegionRecord::new("france", Some("world"), Rect::new(0.0, 50.0, 0.0, 100.0)),
        RegionRecord::new("belgium", Some("world"), Rect::new(50.0, 100.0, 0.0, 100.0)),
        RegionRecord::new("paris", Some("france"), Rect::new(0.0, 25.0, 0.0, 50.0)),
        RegionRecord::new("rue-x", Some("paris"), Rect::new(0.0, 5.0, 0.0, 5.0)),
        RegionRecord::new("brussels", Some("belgium"), Rect::new(50.0, 75.0, 0.0, 50.0)),
    ])
    .expect("fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::planar(lat, lon).unwrap()
    }

    fn id(s: &str) -> RegionId {
        RegionId::new(s)
    }

    /// Exhaustive scan: deepest region whose bounds contain the point.
    fn scan_deepest(w: &WorldTree, p: GeoPoint) -> RegionId {
        w.regions()
            .filter(|r| r.bounds.contains_point(p))
            .max_by_key(|r| r.depth)
            .unwrap()
            .id
            .clone()
    }

    #[test]
    fn contains_half_open() {
        let w = world1();
        let france = w.region(&id("france")).unwrap();
        let belgium = w.region(&id("belgium")).unwrap();
        let rue = w.region(&id("rue-x")).unwrap();
        assert!(contains(france, pt(10.0, 10.0)));
        assert!(!contains(france, pt(50.0, 10.0)));
        assert!(contains(belgium, pt(50.0, 10.0)));
        assert!(contains(rue, pt(4.999, 4.999)));
        assert!(!contains(rue, pt(5.0, 4.999)));
    }

    #[test]
    fn resolve_examples_match_scan() {
        let w = world1();
        for (p, want) in [(pt(2.0, 2.0), "rue-x"), (pt(10.0, 60.0), "france"), (pt(99.0, 99.0), "belgium")] {
            assert_eq!(scan_deepest(&w, p), id(want));
            assert_eq!(w.resolve_deepest(p).unwrap(), id(want));
        }
    }

    #[test]
    fn resolve_outside_world() {
        let w = world1();
        assert!(matches!(w.resolve_deepest(pt(100.0, 1.0)), Err(GeoError::PointOutsideWorld { .. })));
        assert!(matches!(w.resolve_deepest(pt(-0.1, 1.0)), Err(GeoError::PointOutsideWorld { .. })));
    }

    #[test]
    fn region_path_examples() {
        let w = world1();
        let ids = |v: &[&str]| v.iter().map(|s| id(s)).collect::<Vec<_>>();
        assert_eq!(w.region_path(pt(2.0, 2.0)).unwrap(), ids(&["world", "france", "paris", "rue-x"]));
        assert_eq!(w.region_path(pt(60.0, 10.0)).unwrap(), ids(&["world", "belgium", "brussels"]));
        assert_eq!(w.region_path(pt(10.0, 60.0)).unwrap(), ids(&["world", "france"]));
    }

    #[test]
    fn deepest_container_examples() {
        let w = world1();
        assert_eq!(w.deepest_container(&Target::Region(id("rue-x"))).unwrap(), id("rue-x"));
        assert_eq!(w.deepest_container(&Target::Rect(Rect::new(1.0, 2.0, 1.0, 2.0))).unwrap(), id("rue-x"));
        assert_eq!(w.deepest_container(&Target::Rect(Rect::new(20.0, 60.0, 0.0, 10.0))).unwrap(), id("world"));
        assert_eq!(
            w.deepest_container(&Target::Rect(Rect::new(90.0, 110.0, 0.0, 10.0))),
            Err(GeoError::TargetOutsideWorld)
        );
        assert!(matches!(
            w.deepest_container(&Target::Region(id("atlantis"))),
            Err(GeoError::UnknownRegion(_))
        ));
    }

    #[test]
    fn transition_examples() {
        let w = world1();
        let still = [pt(2.0, 2.0); 3];
        for d in 0..5 {
            assert_eq!(w.transition_count(&still, d).unwrap(), 0);
        }
        let trip = [pt(2.0, 2.0), pt(10.0, 60.0), pt(60.0, 10.0)];
        // depth-1 ancestors: france, france, belgium
        assert_eq!(w.transition_count(&trip, 1).unwrap(), 1);
        assert_eq!(w.transition_count(&trip, 0).unwrap(), 0);
        // depth 3: rue-x, france, brussels
        assert_eq!(w.transition_count(&trip, 3).unwrap(), 2);
        assert_eq!(w.transition_profile(&trip).unwrap(), vec![0, 1, 2, 2]);
    }

    #[test]
    fn loader_accepts_world1_text() {
        let text = "\
# id parent lat_min lat_max lon_min lon_max
world - 0 100 0 100
france world 0 50 0 100
belgium world 50 100 0 100   # trailing comment
paris france 0 25 0 50
rue-x paris 0 5 0 5
brussels belgium 50 75 0 50
";
        assert_eq!(WorldTree::parse(text).unwrap(), world1());
    }

    #[test]
    fn loader_rejects_violations() {
        let overlap = "w - 0 10 0 10\na w 0 6 0 10\nb w 5 10 0 10\n";
        assert_eq!(WorldTree::parse(overlap), Err(GeoError::Overlap(id("a"), id("b"))));

        let outside = "w - 0 10 0 10\na w 0 11 0 10\n";
        assert_eq!(
            WorldTree::parse(outside),
            Err(GeoError::OutsideParent { region: id("a"), parent: id("w") })
        );

        let two_roots = "w - 0 10 0 10\nv - 0 10 0 10\n";
        assert_eq!(WorldTree::parse(two_roots), Err(GeoError::RootCount(2)));

        let cycle = "w - 0 10 0 10\na b 0 1 0 1\nb a 0 1 0 1\n";
        assert_eq!(WorldTree::parse(cycle), Err(GeoError::Unreachable(id("a"))));

        let dangling = "w - 0 10 0 10\na nowhere 0 1 0 1\n";
        assert!(matches!(WorldTree::parse(dangling), Err(GeoError::UnknownParent { .. })));

        let empty = "w - 0 10 0 10\na w 3 3 0 1\n";
        assert!(matches!(WorldTree::parse(empty), Err(GeoError::InvalidBounds { .. })));

        let short = "w - 0 10 0\n";
        assert!(matches!(WorldTree::parse(short), Err(GeoError::Parse { line: 1, .. })));

        let dup = "w - 0 10 0 10\na w 0 1 0 1\na w 2 3 0 1\n";
        assert_eq!(WorldTree::parse(dup), Err(GeoError::DuplicateRegion(id("a"))));
    }

    #[test]
    fn geographic_point_ranges() {
        assert!(GeoPoint::new(89.9, 179.9).is_ok());
        assert!(GeoPoint::new(90.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(GeoPoint::new(-90.0, -180.0).is_ok());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::planar(99.0, 99.0).is_ok());
    }
}
