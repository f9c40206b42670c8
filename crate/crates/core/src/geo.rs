//! Base regions, point projection through an R-tree, density vectors and
//! region entropy.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ingest::{CategoryId, DayType, MovementRecord, StaySequence};
use crate::time::TimeWindow;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters.
pub fn haversine_meters(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid region JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unable to read regions: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected a FeatureCollection")]
    NotFeatureCollection,
    #[error("duplicate region_id {0}")]
    DuplicateRegion(u32),
    #[error("no valid region polygons ({rejected} rejected)")]
    NoValidRegions { rejected: usize },
}

pub type RegionId = u32;
pub type Coord = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    /// Closed ring, first vertex repeated last, lon/lat.
    pub exterior: Vec<Coord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holes: Vec<Vec<Coord>>,
}

/// Position of a point relative to an area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

const BOUNDARY_TOL: f64 = 1e-12;

fn on_segment(p: Coord, a: Coord, b: Coord) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross.abs() > BOUNDARY_TOL * len.max(1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) - BOUNDARY_TOL
        && p[0] <= a[0].max(b[0]) + BOUNDARY_TOL
        && p[1] >= a[1].min(b[1]) - BOUNDARY_TOL
        && p[1] <= a[1].max(b[1]) + BOUNDARY_TOL
}

/// Even-odd crossing test against one closed ring.
fn locate_in_ring(p: Coord, ring: &[Coord]) -> Location {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b) {
            return Location::Boundary;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

impl Polygon {
    pub fn locate(&self, p: Coord) -> Location {
        match locate_in_ring(p, &self.exterior) {
            Location::Inside => {}
            other => return other,
        }
        for hole in &self.holes {
            match locate_in_ring(p, hole) {
                Location::Outside => {}
                Location::Boundary => return Location::Boundary,
                Location::Inside => return Location::Outside,
            }
        }
        Location::Inside
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Coord>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Shoelace area in squared degrees and the area centroid.
    fn area_centroid(&self) -> (f64, Coord) {
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (k, ring) in self.rings().enumerate() {
            let (mut a, mut x, mut y) = ring_moments(ring);
            // exterior counts positive and holes negative, whatever the winding
            if (a < 0.0) != (k > 0) {
                a = -a;
                x = -x;
                y = -y;
            }
            area += a;
            cx += x;
            cy += y;
        }
        if area.abs() < f64::EPSILON {
            return (0.0, self.exterior[0]);
        }
        (area, [cx / (6.0 * area), cy / (6.0 * area)])
    }
}

fn ring_moments(ring: &[Coord]) -> (f64, f64, f64) {
    let mut a = 0.0;
    let mut x = 0.0;
    let mut y = 0.0;
    for w in ring.windows(2) {
        let cross = w[0][0] * w[1][1] - w[1][0] * w[0][1];
        a += cross;
        x += (w[0][0] + w[1][0]) * cross;
        y += (w[0][1] + w[1][1]) * cross;
    }
    (a / 2.0, x, y)
}

fn segments_intersect(a: Coord, b: Coord, c: Coord, d: Coord) -> bool {
    fn orient(p: Coord, q: Coord, r: Coord) -> f64 {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    }
    let (o1, o2, o3, o4) = (
        orient(a, b, c),
        orient(a, b, d),
        orient(c, d, a),
        orient(c, d, b),
    );
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(c, a, b))
        || (o2 == 0.0 && on_segment(d, a, b))
        || (o3 == 0.0 && on_segment(a, c, d))
        || (o4 == 0.0 && on_segment(b, c, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonDefect {
    MissingRegionId,
    UnsupportedGeometry,
    NotClosed,
    TooFewVertices,
    ZeroArea,
    SelfIntersecting,
    InvalidCoordinate,
}

fn validate_ring(ring: &[Coord]) -> Result<(), PolygonDefect> {
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PolygonDefect::InvalidCoordinate);
    }
    if ring.len() < 4 {
        return Err(PolygonDefect::TooFewVertices);
    }
    if ring.first() != ring.last() {
        return Err(PolygonDefect::NotClosed);
    }
    let collinear = ring.windows(3).all(|w| {
        ((w[1][0] - w[0][0]) * (w[2][1] - w[0][1]) - (w[1][1] - w[0][1]) * (w[2][0] - w[0][0]))
            .abs()
            < 1e-18
    });
    if collinear {
        return Err(PolygonDefect::ZeroArea);
    }
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (a, b, c, d) = (ring[i], ring[i + 1], ring[j], ring[j + 1]);
            if adjacent {
                let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if (q != shared && on_segment(q, shared, p))
                    || (p != shared && on_segment(p, shared, q))
                {
                    return Err(PolygonDefect::SelfIntersecting);
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return Err(PolygonDefect::SelfIntersecting);
            }
        }
    }
    if ring_moments(ring).0.abs() < 1e-18 {
        return Err(PolygonDefect::ZeroArea);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: RegionId,
    pub polygons: Vec<Polygon>,
    pub centroid: Coord,
    /// Planar area in squared degrees, used for centroid weighting.
    pub area: f64,
    pub neighbors: BTreeSet<RegionId>,
}

impl Region {
    pub fn new(region_id: RegionId, polygons: Vec<Polygon>) -> Self {
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for p in &polygons {
            let (a, c) = p.area_centroid();
            let a = a.abs();
            area += a;
            cx += a * c[0];
            cy += a * c[1];
        }
        let centroid = if area > 0.0 {
            [cx / area, cy / area]
        } else {
            polygons[0].exterior[0]
        };
        Self {
            region_id,
            polygons,
            centroid,
            area,
            neighbors: BTreeSet::new(),
        }
    }

    pub fn locate(&self, p: Coord) -> Location {
        let mut best = Location::Outside;
        for poly in &self.polygons {
            match poly.locate(p) {
                Location::Inside => return Location::Inside,
                Location::Boundary => best = Location::Boundary,
                Location::Outside => {}
            }
        }
        best
    }

    pub fn bbox(&self) -> (Coord, Coord) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in self.polygons.iter().flat_map(|p| p.exterior.iter()) {
            lo = [lo[0].min(v[0]), lo[1].min(v[1])];
            hi = [hi[0].max(v[0]), hi[1].max(v[1])];
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRegion {
    /// Feature position in the collection.
    pub feature: usize,
    pub region_id: Option<RegionId>,
    pub defect: PolygonDefect,
}

/// The set of base regions, sorted by ascending `region_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    regions: Vec<Region>,
}

impl RegionSet {
    pub fn new(mut regions: Vec<Region>) -> Result<Self, GeoError> {
        regions.sort_by_key(|r| r.region_id);
        for w in regions.windows(2) {
            if w[0].region_id == w[1].region_id {
                return Err(GeoError::DuplicateRegion(w[0].region_id));
            }
        }
        Ok(Self { regions })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn get(&self, id: RegionId) -> Option<&Region> {
        self.position(id).map(|i| &self.regions[i])
    }

    pub fn position(&self, id: RegionId) -> Option<usize> {
        self.regions.binary_search_by_key(&id, |r| r.region_id).ok()
    }

    pub fn ids(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.regions.iter().map(|r| r.region_id)
    }

    /// Regions as `(lo, hi)` index pairs of the adjacency graph.
    pub fn adjacency_indices(&self) -> Vec<Vec<usize>> {
        self.regions
            .iter()
            .map(|r| {
                r.neighbors
                    .iter()
                    .filter_map(|n| self.position(*n))
                    .collect()
            })
            .collect()
    }

    /// Build a [`SpatialIndex`] over these regions.
    pub fn index(&self) -> SpatialIndex<'_> {
        SpatialIndex::new(self)
    }
}

fn parse_coord(v: &Value) -> Option<Coord> {
    let a = v.as_array()?;
    Some([a.first()?.as_f64()?, a.get(1)?.as_f64()?])
}

fn parse_ring(v: &Value) -> Option<Vec<Coord>> {
    v.as_array()?.iter().map(parse_coord).collect()
}

fn parse_polygon(v: &Value) -> Option<Polygon> {
    let rings: Vec<Vec<Coord>> = v
        .as_array()?
        .iter()
        .map(parse_ring)
        .collect::<Option<_>>()?;
    let mut it = rings.into_iter();
    let exterior = it.next()?;
    Some(Polygon {
        exterior,
        holes: it.collect(),
    })
}

fn region_id_of(feature: &Value) -> Option<RegionId> {
    let v = feature.get("properties")?.get("region_id")?;
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn feature_polygons(feature: &Value) -> Result<Vec<Polygon>, PolygonDefect> {
    let geom = feature
        .get("geometry")
        .ok_or(PolygonDefect::UnsupportedGeometry)?;
    let coords = geom
        .get("coordinates")
        .ok_or(PolygonDefect::UnsupportedGeometry)?;
    let polys = match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords).ok_or(PolygonDefect::InvalidCoordinate)?],
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or(PolygonDefect::InvalidCoordinate)?
            .iter()
            .map(parse_polygon)
            .collect::<Option<Vec<_>>>()
            .ok_or(PolygonDefect::InvalidCoordinate)?,
        _ => return Err(PolygonDefect::UnsupportedGeometry),
    };
    if polys.is_empty() {
        return Err(PolygonDefect::UnsupportedGeometry);
    }
    for p in &polys {
        for ring in p.rings() {
            validate_ring(ring)?;
        }
    }
    Ok(polys)
}

/// Load base regions from a GeoJSON FeatureCollection whose features carry a
/// `region_id` property. Invalid polygons are returned as rejects.
pub fn load_regions<R: Read>(source: R) -> Result<(RegionSet, Vec<RejectedRegion>), GeoError> {
    let doc: Value = serde_json::from_reader(source)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection);
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or(GeoError::NotFeatureCollection)?;

    let mut regions = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, f) in features.iter().enumerate() {
        let Some(id) = region_id_of(f) else {
            rejected.push(RejectedRegion {
                feature: i,
                region_id: None,
                defect: PolygonDefect::MissingRegionId,
            });
            continue;
        };
        if !seen.insert(id) {
            return Err(GeoError::DuplicateRegion(id));
        }
        match feature_polygons(f) {
            Ok(polys) => regions.push(Region::new(id, polys)),
            Err(defect) => {
                log::warn!("region {id} rejected: {defect:?}");
                rejected.push(RejectedRegion {
                    feature: i,
                    region_id: Some(id),
                    defect,
                })
            }
        }
    }
    if regions.is_empty() {
        return Err(GeoError::NoValidRegions {
            rejected: rejected.len(),
        });
    }
    Ok((RegionSet::new(regions)?, rejected))
}

/// Local equirectangular projection to meters.
#[derive(Debug, Clone, Copy)]
struct LocalMeters {
    kx: f64,
    ky: f64,
}

impl LocalMeters {
    fn around(lat0: f64) -> Self {
        let ky = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            kx: ky * lat0.to_radians().cos(),
            ky,
        }
    }

    fn project(&self, c: Coord) -> Coord {
        [c[0] * self.kx, c[1] * self.ky]
    }
}

type Segment = (Coord, Coord);

/// Length of `a` lying alongside `b`: both endpoints of `b` within `eps` of
/// the line through `a`, measured as the overlap of their projections.
fn collinear_overlap(a: Segment, b: Segment, eps: f64) -> f64 {
    let d = [a.1[0] - a.0[0], a.1[1] - a.0[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let u = [d[0] / len, d[1] / len];
    let perp = |p: Coord| ((p[0] - a.0[0]) * u[1] - (p[1] - a.0[1]) * u[0]).abs();
    if perp(b.0) > eps || perp(b.1) > eps {
        return 0.0;
    }
    let along = |p: Coord| (p[0] - a.0[0]) * u[0] + (p[1] - a.0[1]) * u[1];
    let (t0, t1) = (along(b.0), along(b.1));
    let lo = t0.min(t1).max(0.0);
    let hi = t0.max(t1).min(len);
    (hi - lo).max(0.0)
}

fn boundary_segments(region: &Region, proj: &LocalMeters) -> Vec<Segment> {
    region
        .polygons
        .iter()
        .flat_map(|p| p.rings())
        .flat_map(|ring| {
            ring.windows(2)
                .map(|w| (proj.project(w[0]), proj.project(w[1])))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Length of shared boundary between two regions in meters.
fn shared_boundary(a: &[Segment], b: &[Segment], eps: f64) -> f64 {
    let mut total = 0.0;
    for sa in a {
        for sb in b {
            total += collinear_overlap(*sa, *sb, eps).max(collinear_overlap(*sb, *sa, eps));
        }
    }
    total
}

/// Link regions whose boundaries run alongside each other within
/// `epsilon_meters` over a length greater than `epsilon_meters`. Regions that
/// touch only at a corner are not neighbors.
pub fn derive_adjacency(regions: &mut RegionSet, epsilon_meters: f64) {
    let eps = epsilon_meters.max(1e-6);
    let lat0 = regions.regions.iter().map(|r| r.centroid[1]).sum::<f64>()
        / regions.regions.len().max(1) as f64;
    let proj = LocalMeters::around(lat0);

    let segments: Vec<Vec<Segment>> = regions
        .regions
        .iter()
        .map(|r| boundary_segments(r, &proj))
        .collect();
    let boxes: Vec<GeomWithData<Rectangle<Coord>, usize>> = regions
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (lo, hi) = r.bbox();
            let (lo, hi) = (proj.project(lo), proj.project(hi));
            GeomWithData::new(
                Rectangle::from_corners([lo[0] - eps, lo[1] - eps], [hi[0] + eps, hi[1] + eps]),
                i,
            )
        })
        .collect();
    let tree = RTree::bulk_load(boxes.clone());

    for r in regions.regions.iter_mut() {
        r.neighbors.clear();
    }
    let mut pairs = Vec::new();
    for b in &boxes {
        let i = b.data;
        for c in tree.locate_in_envelope_intersecting(&b.geom().envelope()) {
            let j = c.data;
            if j <= i {
                continue;
            }
            if shared_boundary(&segments[i], &segments[j], eps) > eps {
                pairs.push((i, j));
            }
        }
    }
    for (i, j) in pairs {
        let (a, b) = (regions.regions[i].region_id, regions.regions[j].region_id);
        regions.regions[i].neighbors.insert(b);
        regions.regions[j].neighbors.insert(a);
    }
}

/// R-tree over region bounding boxes with exact polygon refinement.
pub struct SpatialIndex<'a> {
    regions: &'a RegionSet,
    tree: RTree<GeomWithData<Rectangle<Coord>, usize>>,
}

impl<'a> SpatialIndex<'a> {
    pub fn new(regions: &'a RegionSet) -> Self {
        let boxes = regions
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (lo, hi) = r.bbox();
                GeomWithData::new(Rectangle::from_corners(lo, hi), i)
            })
            .collect();
        Self {
            regions,
            tree: RTree::bulk_load(boxes),
        }
    }

    /// Region containing `(lon, lat)`. Points on a shared boundary go to the
    /// smaller `region_id`.
    pub fn lookup(&self, lon: f64, lat: f64) -> Option<RegionId> {
        let p = [lon, lat];
        self.tree
            .locate_in_envelope_intersecting(&AABB::from_point(p))
            .map(|c| &self.regions.regions[c.data])
            .filter(|r| r.locate(p) != Location::Outside)
            .map(|r| r.region_id)
            .min()
    }

    pub fn regions(&self) -> &RegionSet {
        self.regions
    }
}

/// Anything with a lon/lat position.
pub trait Located {
    fn lon_lat(&self) -> Coord;
}

impl Located for MovementRecord {
    fn lon_lat(&self) -> Coord {
        [self.lon, self.lat]
    }
}

impl Located for Poi {
    fn lon_lat(&self) -> Coord {
        [self.lon, self.lat]
    }
}

impl Located for Coord {
    fn lon_lat(&self) -> Coord {
        *self
    }
}

/// Members of each region by input position, plus points outside all regions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub by_region: BTreeMap<RegionId, Vec<usize>>,
    pub unassigned: Vec<usize>,
}

impl Assignment {
    pub fn region_of(&self) -> Vec<Option<RegionId>> {
        let n = self
            .by_region
            .values()
            .flatten()
            .chain(self.unassigned.iter())
            .map(|i| i + 1)
            .max()
            .unwrap_or(0);
        let mut out = vec![None; n];
        for (r, members) in &self.by_region {
            for &m in members {
                out[m] = Some(*r);
            }
        }
        out
    }
}

pub fn project_points<P: Located>(index: &SpatialIndex<'_>, points: &[P]) -> Assignment {
    let mut out = Assignment::default();
    for (i, p) in points.iter().enumerate() {
        let [lon, lat] = p.lon_lat();
        match index.lookup(lon, lat) {
            Some(r) => out.by_region.entry(r).or_default().push(i),
            None => out.unassigned.push(i),
        }
    }
    out
}

/// Fill `region_id` on every visit; returns the number left unassigned.
pub fn assign_visits(index: &SpatialIndex<'_>, stays: &mut [StaySequence]) -> usize {
    let mut missing = 0;
    for v in stays.iter_mut().flat_map(|s| s.visits.iter_mut()) {
        v.region_id = index.lookup(v.lon, v.lat);
        if v.region_id.is_none() {
            missing += 1;
        }
    }
    missing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub category: CategoryId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoiCatalog {
    pois: Vec<Poi>,
}

impl PoiCatalog {
    /// POIs sorted by id. Later duplicates of an id are ignored.
    pub fn new(pois: impl IntoIterator<Item = Poi>) -> Self {
        let mut map = BTreeMap::new();
        for p in pois {
            map.entry(p.poi_id.clone()).or_insert(p);
        }
        Self {
            pois: map.into_values().collect(),
        }
    }

    /// Distinct POIs seen in check-in records (first sighting wins).
    pub fn from_records(records: &[MovementRecord]) -> Self {
        Self::new(records.iter().map(|r| Poi {
            poi_id: r.poi_id.clone(),
            category: r.category,
            lat: r.lat,
            lon: r.lon,
        }))
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    PoiCount,
    AccessFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVector {
    pub values: Vec<f64>,
    pub support_count: f64,
    pub weighting: Weighting,
}

impl DensityVector {
    pub fn from_counts(counts: &[f64], weighting: Weighting) -> Self {
        let total: f64 = counts.iter().sum();
        let values = if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![0.0; counts.len()]
        };
        Self {
            values,
            support_count: total,
            weighting,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.support_count <= 0.0
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.values)
    }

    /// Index of the largest share; ties go to the earlier category.
    pub fn argmax(&self) -> Option<CategoryId> {
        if self.is_empty() {
            return None;
        }
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        Some(CategoryId(best as u16))
    }
}

/// Natural-log Shannon entropy with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// Entropy of the distribution obtained by normalizing raw counts.
pub fn entropy_of_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRef {
    pub category: CategoryId,
    /// Arrival bin in 1-minute resolution: minutes since local midnight.
    pub minute: u16,
    pub day_type: DayType,
}

/// Per-region POI counts and visit log, the input of every density query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionProfiles {
    categories: usize,
    poi_counts: BTreeMap<RegionId, Vec<f64>>,
    visits: BTreeMap<RegionId, Vec<VisitRef>>,
}

impl RegionProfiles {
    pub fn build(
        index: &SpatialIndex<'_>,
        catalog: &PoiCatalog,
        stays: &[StaySequence],
        categories: usize,
    ) -> Self {
        let mut poi_counts: BTreeMap<RegionId, Vec<f64>> = BTreeMap::new();
        let assignment = project_points(index, catalog.pois());
        for (r, members) in &assignment.by_region {
            let counts = poi_counts
                .entry(*r)
                .or_insert_with(|| vec![0.0; categories]);
            for &m in members {
                counts[catalog.pois()[m].category.index()] += 1.0;
            }
        }
        let mut visits: BTreeMap<RegionId, Vec<VisitRef>> = BTreeMap::new();
        for s in stays {
            for v in &s.visits {
                if let Some(r) = v.region_id {
                    visits.entry(r).or_default().push(VisitRef {
                        category: v.category,
                        minute: (crate::ingest::seconds_of_day(&v.arrival) / 60) as u16,
                        day_type: s.day_type,
                    });
                }
            }
        }
        Self {
            categories,
            poi_counts,
            visits,
        }
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn poi_counts(&self, region: RegionId) -> Vec<f64> {
        self.poi_counts
            .get(&region)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.categories])
    }

    /// Visit counts by category for arrivals inside `window` on `day_type`
    /// (all day types when `None`).
    pub fn access_counts(
        &self,
        region: RegionId,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> Vec<f64> {
        let mut counts = vec![0.0; self.categories];
        let width = window.bin_width_minutes;
        for v in self.visits.get(&region).into_iter().flatten() {
            if day_type.is_some_and(|d| d != v.day_type) {
                continue;
            }
            if window.contains_bin(v.minute / width) {
                counts[v.category.index()] += 1.0;
            }
        }
        counts
    }

    pub fn counts(
        &self,
        region: RegionId,
        weighting: Weighting,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> Vec<f64> {
        match weighting {
            Weighting::PoiCount => self.poi_counts(region),
            Weighting::AccessFrequency => self.access_counts(region, window, day_type),
        }
    }

    pub fn density_vector(
        &self,
        region: RegionId,
        weighting: Weighting,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> DensityVector {
        DensityVector::from_counts(&self.counts(region, weighting, window, day_type), weighting)
    }

    /// Total visits in `window` over all regions.
    pub fn total_visits(&self, window: &TimeWindow, day_type: Option<DayType>) -> usize {
        self.visits
            .values()
            .flatten()
            .filter(|v| day_type.is_none_or(|d| d == v.day_type))
            .filter(|v| window.contains_bin(v.minute / window.bin_width_minutes))
            .count()
    }

    pub fn has_visits(&self) -> bool {
        self.visits.values().any(|v| !v.is_empty())
    }

    /// Most accessed category in `window`, `None` when nothing was visited.
    pub fn dominant_category(
        &self,
        region: RegionId,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> Option<CategoryId> {
        self.density_vector(region, Weighting::AccessFrequency, window, day_type)
            .argmax()
    }
}

/// Density from raw category counts (helper for union of regions).
pub fn sum_counts<'a>(
    categories: usize,
    parts: impl IntoIterator<Item = &'a Vec<f64>>,
) -> Vec<f64> {
    let mut out = vec![0.0; categories];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}
