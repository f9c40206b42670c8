use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, FixedOffset};
use proptest::prelude::*;

use hoflow_core::aggregate::{build_hierarchy, AggregationConfig, Hierarchy};
use hoflow_core::fixture::grid_regions;
use hoflow_core::geo::{derive_adjacency, entropy, project_points, Coord, RegionSet};
use hoflow_core::hon::{grow_rules, Corpus};
use hoflow_core::ingest::{
    build_trajectories, estimate_stays, CategoryId, DayType, MovementRecord, StraightLineProvider,
};
use hoflow_core::time::TimeWindow;
use hoflow_core::Weighting;

fn t0() -> DateTime<FixedOffset> {
    DateTime::parse_from_rfc3339("2013-07-08T06:00:00-04:00").unwrap()
}

fn record(poi: usize, lat: f64, lon: f64, offset_s: i64) -> MovementRecord {
    MovementRecord {
        user_id: "u".into(),
        poi_id: format!("p{poi}"),
        category: CategoryId(0),
        lat,
        lon,
        timestamp: t0() + Duration::seconds(offset_s),
    }
}

fn arb_day() -> impl Strategy<Value = Vec<MovementRecord>> {
    prop::collection::vec((0usize..5, 0.0f64..0.05, 0.0f64..0.05, 1i64..7200), 2..12).prop_map(
        |steps| {
            let mut t = 0;
            steps
                .into_iter()
                .map(|(poi, dlat, dlon, dt)| {
                    t += dt;
                    record(poi, 40.7 + dlat, -74.0 + dlon, t)
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn stays_never_overlap_next_arrival(records in arb_day()) {
        let trajs = build_trajectories(&records, 6 * 3600);
        let provider = StraightLineProvider::default();
        for traj in &trajs {
            let s = estimate_stays(traj, &provider, 1800.0, DayType::Weekday);
            prop_assert_eq!(s.visits.len(), traj.records.len());
            for w in s.visits.windows(2) {
                prop_assert!(w[0].stay_seconds >= 0.0);
                prop_assert!(w[0].departure() <= w[1].arrival);
            }
            prop_assert_eq!(s.visits.last().unwrap().stay_seconds, 1800.0);
        }
    }

    #[test]
    fn entropy_is_bounded_and_permutation_invariant(
        v in prop::collection::vec(0.0f64..100.0, 1..16),
        seed in any::<u64>(),
    ) {
        let total: f64 = v.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = v.iter().map(|x| x / total).collect();
        let h = entropy(&p);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        let mut q = p.clone();
        let k = (seed as usize) % q.len();
        q.rotate_left(k);
        q.reverse();
        prop_assert!((entropy(&q) - h).abs() < 1e-12);
    }
}

/// Winding number of `ring` around `p`; non-zero means inside.
fn winding_number(p: Coord, ring: &[Coord]) -> i32 {
    let mut wn = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        let side = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && side > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn brute_force_region(regions: &RegionSet, p: Coord) -> Option<u32> {
    regions
        .regions()
        .iter()
        .find(|r| {
            r.polygons.iter().any(|poly| {
                winding_number(p, &poly.exterior) != 0
                    && poly.holes.iter().all(|h| winding_number(p, h) == 0)
            })
        })
        .map(|r| r.region_id)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_matches_brute_force(
        cols in 1u32..8,
        rows in 1u32..8,
        pts in prop::collection::vec((-0.01f64..0.09, -0.01f64..0.09), 1..200),
    ) {
        let grid = grid_regions(cols, rows, [0.0, 0.0], 0.01);
        let pts: Vec<Coord> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let assignment = project_points(&grid.index(), &pts);
        let got = assignment.region_of();
        for (i, p) in pts.iter().enumerate() {
            prop_assert_eq!(got.get(i).copied().flatten(), brute_force_region(&grid, *p));
        }
    }
}

fn adjacency(regions: &RegionSet) -> BTreeMap<u32, BTreeSet<u32>> {
    regions
        .regions()
        .iter()
        .map(|r| (r.region_id, r.neighbors.clone()))
        .collect()
}

fn is_connected(members: &[u32], adj: &BTreeMap<u32, BTreeSet<u32>>) -> bool {
    let set: BTreeSet<u32> = members.iter().copied().collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut stack = vec![members[0]];
    while let Some(u) = stack.pop() {
        for v in &adj[&u] {
            if set.contains(v) && seen.insert(*v) {
                stack.push(*v);
            }
        }
    }
    seen.len() == set.len()
}

/// Partition, connectivity, nesting, beta bounds and monotone coarsening.
fn check_hierarchy(
    h: &Hierarchy,
    regions: &RegionSet,
    bmin: usize,
    bmax: usize,
) -> Result<(), String> {
    let adj = adjacency(regions);
    let all: BTreeSet<u32> = regions.ids().collect();
    let mut prev_labels: Option<BTreeMap<u32, u32>> = None;
    let mut prev_count = usize::MAX;
    for lvl in &h.levels {
        let mut seen = BTreeSet::new();
        for c in &lvl.clusters {
            for m in &c.members {
                if !seen.insert(*m) {
                    return Err(format!("level {}: region {m} in two clusters", lvl.level));
                }
            }
            if !is_connected(&c.members, &adj) {
                return Err(format!(
                    "level {}: cluster {} disconnected",
                    lvl.level, c.cluster_id
                ));
            }
            if c.members.len() > bmax || c.members.len() < bmin {
                return Err(format!(
                    "level {}: cluster {} has {} members",
                    lvl.level,
                    c.cluster_id,
                    c.members.len()
                ));
            }
        }
        if seen != all {
            return Err(format!("level {}: not a partition", lvl.level));
        }
        let labels = lvl.labels();
        if let Some(prev) = &prev_labels {
            // every lower cluster maps into a single upper cluster
            let mut up: BTreeMap<u32, u32> = BTreeMap::new();
            for (r, lower) in prev {
                let upper = labels[r];
                if *up.entry(*lower).or_insert(upper) != upper {
                    return Err(format!("level {}: lower cluster {lower} split", lvl.level));
                }
            }
        }
        if lvl.clusters.len() > prev_count {
            return Err(format!("level {}: cluster count increased", lvl.level));
        }
        prev_count = lvl.clusters.len();
        prev_labels = Some(labels);
    }
    Ok(())
}

fn arb_counts(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => 1.0f64..40.0], 9),
        n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregation_invariants_hold(
        (cols, rows, counts) in (2u32..9, 2u32..9).prop_flat_map(|(c, r)| {
            (Just(c), Just(r), arb_counts((c * r) as usize))
        }),
        alpha in prop::sample::select(vec![1.0, 1.9, 2.2, 2.5]),
        beta in prop::sample::select(vec![(3usize, 5usize), (3, 7), (3, 9), (5, 9)]),
    ) {
        let mut grid = grid_regions(cols, rows, [-74.0, 40.7], 0.002);
        derive_adjacency(&mut grid, 1.0);
        prop_assume!(grid.len() >= beta.0);
        let config = AggregationConfig {
            alpha: vec![alpha],
            beta_min: beta.0,
            beta_max: beta.1,
            levels: 3,
        };
        let h = build_hierarchy(&grid, &counts, &config, Weighting::PoiCount);
        prop_assert_eq!(h.depth(), 3);
        if let Err(e) = check_hierarchy(&h, &grid, beta.0, beta.1) {
            return Err(TestCaseError::fail(e));
        }
        let again = build_hierarchy(&grid, &counts, &config, Weighting::PoiCount);
        prop_assert_eq!(h, again);
    }
}

/// Order-`k` conditional probabilities by direct enumeration over every
/// position of every track.
fn brute_force_probability(corpus: &Corpus, path: &[u32], window: &TimeWindow) -> f64 {
    let k = path.len() - 1;
    let (mut hits, mut total) = (0u64, 0u64);
    for t in &corpus.tracks {
        for i in 0..t.clusters.len() {
            if i + k >= t.clusters.len() || !window.contains_bin(t.depart_bins[i + k - 1]) {
                continue;
            }
            if t.clusters[i..i + k] == path[..k] {
                total += 1;
                if t.clusters[i + k] == path[k] {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 / total as f64
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(prop::collection::vec((0u32..5, 0u16..24), 2..8), 1..60).prop_map(
        |tracks| {
            Corpus::from_sequences(
                tracks.into_iter().map(|steps| steps.into_iter().unzip()),
                60,
            )
        },
    )
}

fn arb_window() -> impl Strategy<Value = TimeWindow> {
    (0u16..24, 1u16..=24).prop_map(|(a, len)| {
        let end = (a + len).min(24);
        TimeWindow::hours(a, end)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn rule_probabilities_match_enumeration(corpus in arb_corpus(), window in arb_window()) {
        let rules = grow_rules(&corpus, &window, 2, 3);
        let mut per_context: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for r in &rules.rules {
            prop_assert!(r.order >= 1 && r.order <= 3);
            let expect = brute_force_probability(&corpus, &r.path(), &window);
            prop_assert!((r.probability - expect).abs() < 1e-9, "{:?}: {} vs {}", r.path(), r.probability, expect);
            if r.order >= 2 {
                prop_assert!(r.support >= 2);
            }
            *per_context.entry(r.context.clone()).or_default() += r.probability;
        }
        for (ctx, total) in per_context {
            prop_assert!((total - 1.0).abs() < 1e-9, "{:?} sums to {}", ctx, total);
        }
    }

    #[test]
    fn raising_min_support_only_removes_rules(corpus in arb_corpus(), window in arb_window(), s in 1u64..6) {
        let loose = grow_rules(&corpus, &window, s, 3);
        let strict = grow_rules(&corpus, &window, s + 1, 3);
        let loose_keys: BTreeSet<_> = loose.rules.iter().map(|r| (r.context.clone(), r.next)).collect();
        for r in &strict.rules {
            prop_assert!(loose_keys.contains(&(r.context.clone(), r.next)));
        }
    }

    #[test]
    fn narrower_window_never_adds_first_order_support(corpus in arb_corpus(), a in 0u16..12, b in 12u16..=24) {
        let wide = grow_rules(&corpus, &TimeWindow::hours(0, 24), 5, 1);
        let narrow = grow_rules(&corpus, &TimeWindow::hours(a, b), 5, 1);
        let wide_counts: BTreeMap<_, _> = wide.rules.iter().map(|r| ((r.context.clone(), r.next), r.count)).collect();
        for r in &narrow.rules {
            prop_assert!(r.count <= wide_counts[&(r.context.clone(), r.next)]);
        }
    }

    #[test]
    fn rule_growth_is_deterministic(corpus in arb_corpus(), window in arb_window()) {
        prop_assert_eq!(grow_rules(&corpus, &window, 2, 3), grow_rules(&corpus, &window, 2, 3));
    }
}
