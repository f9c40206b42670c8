//! Synthetic datasets: grid cities, planted-pattern corpora, and a demo city
//! with time-of-day dependent behavior.

use std::io::{self, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::aggregate::ClusterId;
use crate::geo::{Coord, Polygon, Region, RegionId, RegionSet};
use crate::hon::Corpus;
use crate::ingest::DEFAULT_CATEGORIES;

/// Square cells, row-major ids starting at 0.
pub fn grid_regions(cols: u32, rows: u32, origin: Coord, cell_deg: f64) -> RegionSet {
    let mut regions = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let x = origin[0] + c as f64 * cell_deg;
            let y = origin[1] + r as f64 * cell_deg;
            let ring = vec![
                [x, y],
                [x + cell_deg, y],
                [x + cell_deg, y + cell_deg],
                [x, y + cell_deg],
                [x, y],
            ];
            regions.push(Region::new(
                r * cols + c,
                vec![Polygon {
                    exterior: ring,
                    holes: vec![],
                }],
            ));
        }
    }
    RegionSet::new(regions).expect("grid ids are unique")
}

/// GeoJSON FeatureCollection accepted by [`crate::geo::load_regions`].
pub fn regions_geojson(regions: &RegionSet) -> String {
    let features: Vec<_> = regions
        .regions()
        .iter()
        .map(|r| {
            let geometry = if r.polygons.len() == 1 {
                let p = &r.polygons[0];
                let rings: Vec<&Vec<Coord>> = p.rings().collect();
                json!({"type": "Polygon", "coordinates": rings})
            } else {
                let polys: Vec<Vec<&Vec<Coord>>> =
                    r.polygons.iter().map(|p| p.rings().collect()).collect();
                json!({"type": "MultiPolygon", "coordinates": polys})
            };
            json!({
                "type": "Feature",
                "properties": {"region_id": r.region_id},
                "geometry": geometry,
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("geojson serializes")
}

pub const CHECKIN_HEADER: &str = "user_id,poi_id,category,lat,lon,timestamp";

/// Cluster ids used by [`planted_corpus`].
pub mod planted {
    use crate::aggregate::ClusterId;
    pub const A: ClusterId = 0;
    pub const B: ClusterId = 1;
    pub const C: ClusterId = 2;
    pub const X: ClusterId = 3;
    pub const Y: ClusterId = 4;
    /// Noise walks use ids from here on.
    pub const NOISE_BASE: ClusterId = 10;
    pub const NOISE_CLUSTERS: ClusterId = 20;
}

fn noise_walks(noise: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<ClusterId>> {
    use planted::*;
    (0..noise)
        .map(|_| {
            let mut walk = vec![NOISE_BASE + rng.gen_range(0..NOISE_CLUSTERS)];
            while walk.len() < 3 {
                let next = NOISE_BASE + rng.gen_range(0..NOISE_CLUSTERS);
                if next != *walk.last().expect("non-empty") {
                    walk.push(next);
                }
            }
            walk
        })
        .collect()
}

/// `A,B,X` x90 and `C,B,Y` x90 plus `noise` random three-step walks over
/// separate clusters. `bins` gives the departure bins of the two planted
/// families.
pub fn planted_corpus(noise: usize, seed: u64, bins: (u16, u16)) -> Corpus {
    use planted::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs: Vec<(Vec<ClusterId>, Vec<u16>)> = Vec::new();
    for _ in 0..90 {
        seqs.push((vec![A, B, X], vec![bins.0; 3]));
        seqs.push((vec![C, B, Y], vec![bins.1; 3]));
    }
    for walk in noise_walks(noise, &mut rng) {
        let bin = rng.gen_range(0..24);
        seqs.push((walk, vec![bin; 3]));
    }
    Corpus::from_sequences(seqs, 60)
}

/// The planted families and noise walks as region sequences for
/// [`sequence_city`].
pub fn planted_families(noise: usize, seed: u64) -> Vec<(Vec<RegionId>, usize)> {
    use planted::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fams = vec![(vec![A, B, X], 90), (vec![C, B, Y], 90)];
    fams.extend(noise_walks(noise, &mut rng).into_iter().map(|w| (w, 1)));
    fams
}

/// Sequence families with repetition counts for the flow-versus-order
/// fixture: four heavy second-order families through a hub and an
/// eight-leaf binary tree whose outcome depends on four steps of history.
pub fn order_decline_families(dense: usize, sparse: usize) -> Vec<(Vec<ClusterId>, usize)> {
    let mut fams = Vec::new();
    let hub = 10;
    for i in 0..4 {
        fams.push((vec![1 + i, hub, 20 + i], dense));
    }
    let d = 40;
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let leaf = 50 + a * 4 + b * 2 + c;
                fams.push((vec![30 + a, 33 + b, 36 + c, d, leaf], sparse));
            }
        }
    }
    fams
}

pub fn order_decline_corpus(dense: usize, sparse: usize) -> Corpus {
    let seqs = order_decline_families(dense, sparse)
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s, n));
    Corpus::uniform_bin(seqs, 12)
}

/// A check-in dataset in which every region holds one POI at its center and
/// users walk the given region sequences, one user per repetition.
pub struct SequenceCity {
    pub regions: RegionSet,
    pub checkins_csv: String,
}

/// Lay `families` out on a grid, each region id a cell. Every trajectory
/// starts at `start` (local time, UTC-4) on a weekday and moves every
/// `step_minutes`.
pub fn sequence_city(
    families: &[(Vec<RegionId>, usize)],
    start: NaiveTime,
    step_minutes: i64,
) -> SequenceCity {
    let max_id = families
        .iter()
        .flat_map(|(s, _)| s.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let cols = 10;
    let rows = max_id / cols + 1;
    let cell = 0.002;
    let regions = grid_regions(cols, rows, [-74.0, 40.74], cell);
    let day = NaiveDate::from_ymd_opt(2013, 7, 9).expect("valid date");
    let mut out = String::from(CHECKIN_HEADER);
    out.push('\n');
    let mut user = 0usize;
    for (seq, n) in families {
        for _ in 0..*n {
            let mut t = day.and_time(start);
            for r in seq {
                let c = regions.get(*r).expect("grid covers ids").centroid;
                let cat = DEFAULT_CATEGORIES[(*r as usize) % DEFAULT_CATEGORIES.len()];
                out.push_str(&format!(
                    "u{user:06},poi{r},{cat},{:.6},{:.6},{}\n",
                    c[1],
                    c[0],
                    stamp(t)
                ));
                t += Duration::minutes(step_minutes);
            }
            user += 1;
        }
    }
    SequenceCity {
        regions,
        checkins_csv: out,
    }
}

fn stamp(t: NaiveDateTime) -> String {
    format!("{}-04:00", t.format("%Y-%m-%dT%H:%M:%S"))
}

/// Demo city parameters.
#[derive(Debug, Clone)]
pub struct DemoParams {
    pub users: usize,
    pub days: u32,
    pub seed: u64,
    /// Stop once this many records were written (whole user-days only).
    pub max_records: Option<usize>,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            users: 300,
            days: 14,
            seed: 7,
            max_records: None,
        }
    }
}

const DEMO_COLS: u32 = 10;
const DEMO_ROWS: u32 = 10;
const DEMO_CELL: f64 = 0.002;
const DEMO_ORIGIN: Coord = [-74.0, 40.74];

/// Category indices into the default taxonomy.
mod cat {
    pub const ARTS: usize = 0;
    pub const COLLEGE: usize = 1;
    pub const FOOD: usize = 2;
    pub const OUTDOORS: usize = 3;
    pub const NIGHTLIFE: usize = 4;
    pub const PROFESSIONAL: usize = 5;
    pub const RESIDENCE: usize = 6;
    pub const SHOP: usize = 7;
    pub const TRANSPORT: usize = 8;
}

#[derive(Debug, Clone)]
struct DemoPoi {
    id: String,
    category: usize,
    lon: f64,
    lat: f64,
}

fn zone_mix(col: u32, row: u32) -> Vec<usize> {
    use cat::*;
    match col {
        0..=2 => vec![RESIDENCE, RESIDENCE, RESIDENCE, RESIDENCE, FOOD, SHOP],
        3 if row.is_multiple_of(2) => vec![FOOD, FOOD, FOOD, FOOD, FOOD, TRANSPORT, SHOP],
        3 => vec![PROFESSIONAL, PROFESSIONAL, FOOD, FOOD],
        4 | 5 => vec![
            PROFESSIONAL,
            PROFESSIONAL,
            PROFESSIONAL,
            PROFESSIONAL,
            FOOD,
            COLLEGE,
        ],
        6 | 7 => vec![NIGHTLIFE, NIGHTLIFE, NIGHTLIFE, FOOD, FOOD, ARTS],
        _ => vec![OUTDOORS, OUTDOORS, ARTS, ARTS, SHOP, SHOP],
    }
}

fn demo_pois(rng: &mut ChaCha8Rng) -> Vec<Vec<DemoPoi>> {
    let mut cells = Vec::new();
    for row in 0..DEMO_ROWS {
        for col in 0..DEMO_COLS {
            let id = row * DEMO_COLS + col;
            let x0 = DEMO_ORIGIN[0] + col as f64 * DEMO_CELL;
            let y0 = DEMO_ORIGIN[1] + row as f64 * DEMO_CELL;
            let pois = zone_mix(col, row)
                .into_iter()
                .enumerate()
                .map(|(k, category)| DemoPoi {
                    id: format!("r{id}p{k}"),
                    category,
                    lon: x0 + DEMO_CELL * rng.gen_range(0.1..0.9),
                    lat: y0 + DEMO_CELL * rng.gen_range(0.1..0.9),
                })
                .collect();
            cells.push(pois);
        }
    }
    cells
}

pub fn demo_regions() -> RegionSet {
    grid_regions(DEMO_COLS, DEMO_ROWS, DEMO_ORIGIN, DEMO_CELL)
}

/// Holiday calendar shipped with the demo city.
pub const DEMO_HOLIDAYS: &str = "2013-07-04\n";

struct Persona {
    home: DemoPoi,
    hub: DemoPoi,
    work: DemoPoi,
    lunch: Vec<DemoPoi>,
    night: Vec<DemoPoi>,
    leisure: Vec<DemoPoi>,
    out_rate: f64,
}

fn pick(
    cells: &[Vec<DemoPoi>],
    cols: std::ops::RangeInclusive<u32>,
    category: usize,
    rng: &mut ChaCha8Rng,
    row_pred: impl Fn(u32) -> bool,
) -> DemoPoi {
    let candidates: Vec<&DemoPoi> = (0..DEMO_ROWS)
        .filter(|r| row_pred(*r))
        .flat_map(|r| cols.clone().map(move |c| (r * DEMO_COLS + c) as usize))
        .flat_map(|i| cells[i].iter())
        .filter(|p| p.category == category)
        .collect();
    (*candidates.choose(rng).expect("zone has category")).clone()
}

fn jitter(rng: &mut ChaCha8Rng, base: i64, spread: i64) -> i64 {
    base + rng.gen_range(-spread..=spread)
}

/// Write demo check-ins as CSV; returns the number of records written.
///
/// Weekday mornings run home, transit hub, office; lunch near work; some
/// evenings go out to the nightlife strip. Weekends and the July 4 holiday
/// shift activity toward shops, parks and late-day outings.
pub fn write_demo_checkins<W: Write>(mut w: W, params: &DemoParams) -> io::Result<usize> {
    use cat::*;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cells = demo_pois(&mut rng);
    let personas: Vec<Persona> = (0..params.users)
        .map(|_| {
            let band = rng.gen_range(0..DEMO_ROWS / 2);
            let home = pick(&cells, 0..=2, RESIDENCE, &mut rng, |r| r / 2 == band);
            let hub = pick(&cells, 3..=3, TRANSPORT, &mut rng, |r| r / 2 == band);
            let work = pick(&cells, 4..=5, PROFESSIONAL, &mut rng, |r| {
                r / 2 == (band + 1) % 5
            });
            let lunch = (0..2)
                .map(|_| pick(&cells, 3..=5, FOOD, &mut rng, |_| true))
                .collect();
            let night = (0..2)
                .map(|_| pick(&cells, 6..=7, NIGHTLIFE, &mut rng, |_| true))
                .collect();
            let leisure = vec![
                pick(&cells, 8..=9, SHOP, &mut rng, |_| true),
                pick(&cells, 8..=9, OUTDOORS, &mut rng, |_| true),
                pick(&cells, 6..=7, FOOD, &mut rng, |_| true),
            ];
            Persona {
                home,
                hub,
                work,
                lunch,
                night,
                leisure,
                out_rate: rng.gen_range(0.2..0.7),
            }
        })
        .collect();

    writeln!(w, "{CHECKIN_HEADER}")?;
    let start = NaiveDate::from_ymd_opt(2013, 7, 1).expect("valid date");
    let holiday = NaiveDate::from_ymd_opt(2013, 7, 4).expect("valid date");
    let mut written = 0usize;
    let mut day_index = 0u32;
    loop {
        if params.max_records.is_none() && day_index >= params.days {
            break;
        }
        let day = start + Duration::days(day_index as i64);
        day_index += 1;
        let weekend = matches!(
            chrono::Datelike::weekday(&day),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        );
        for (u, p) in personas.iter().enumerate() {
            if !rng.gen_bool(0.8) {
                continue;
            }
            let mut plan: Vec<(&DemoPoi, i64)> = Vec::new();
            if day == holiday {
                plan.push((&p.home, jitter(&mut rng, 13 * 60, 20)));
                plan.push((&p.leisure[1], jitter(&mut rng, 15 * 60, 20)));
                plan.push((&p.leisure[2], jitter(&mut rng, 17 * 60 + 30, 20)));
                plan.push((&p.night[0], jitter(&mut rng, 20 * 60 + 30, 20)));
            } else if weekend {
                plan.push((&p.home, jitter(&mut rng, 10 * 60, 30)));
                plan.push((&p.leisure[0], jitter(&mut rng, 11 * 60 + 30, 20)));
                plan.push((&p.leisure[1], jitter(&mut rng, 14 * 60, 30)));
                plan.push((&p.leisure[2], jitter(&mut rng, 18 * 60, 30)));
                plan.push((&p.night[1], jitter(&mut rng, 21 * 60, 30)));
            } else {
                plan.push((&p.home, jitter(&mut rng, 7 * 60, 15)));
                plan.push((&p.hub, jitter(&mut rng, 7 * 60 + 50, 10)));
                plan.push((&p.work, jitter(&mut rng, 8 * 60 + 45, 10)));
                let lunch = &p.lunch[rng.gen_range(0..p.lunch.len())];
                plan.push((lunch, jitter(&mut rng, 12 * 60 + 15, 15)));
                plan.push((&p.work, jitter(&mut rng, 13 * 60 + 30, 10)));
                if rng.gen_bool(p.out_rate) {
                    let night = &p.night[rng.gen_range(0..p.night.len())];
                    plan.push((night, jitter(&mut rng, 19 * 60 + 30, 30)));
                }
                plan.push((&p.home, jitter(&mut rng, 22 * 60 + 30, 20)));
            }
            for (poi, minute) in plan {
                let t = day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(minute);
                writeln!(
                    w,
                    "d{u:05},{},{},{:.6},{:.6},{}",
                    poi.id,
                    DEFAULT_CATEGORIES[poi.category],
                    poi.lat,
                    poi.lon,
                    stamp(t)
                )?;
                written += 1;
            }
            if params.max_records.is_some_and(|m| written >= m) {
                return Ok(written);
            }
        }
    }
    Ok(written)
}

pub fn demo_checkins(params: &DemoParams) -> String {
    let mut buf = Vec::new();
    write_demo_checkins(&mut buf, params).expect("in-memory write");
    String::from_utf8(buf).expect("ascii csv")
}
