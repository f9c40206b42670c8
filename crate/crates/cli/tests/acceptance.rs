//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hoflow_core::aggregate::{build_hierarchy, AggregationConfig, Hierarchy, ALPHA_PRESET};
use hoflow_core::fixture::{grid_regions, planted, planted_corpus};
use hoflow_core::geo::{derive_adjacency, entropy, project_points, Coord, RegionSet, Weighting};
use hoflow_core::hon::{first_order_prob, grow_rules, Corpus, HonConfig, TransitionGraph};
use hoflow_core::time::TimeWindow;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hoflow(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hoflow"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "hoflow {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------------------

fn entropy_correctness() -> Outcome {
    let uniform = vec![1.0 / 9.0; 9];
    let h = entropy(&uniform);
    ensure((h - 9f64.ln()).abs() < 1e-9, || format!("uniform: {h}"))?;
    let mut one_hot = vec![0.0; 9];
    one_hot[4] = 1.0;
    ensure(entropy(&one_hot) == 0.0, || "one-hot is not 0".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let d = rng.gen_range(1..=20);
        let raw: Vec<f64> = (0..d)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            continue;
        }
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let h = entropy(&p);
        ensure(h >= 0.0 && h <= (d as f64).ln() + 1e-12, || {
            format!("vector {i}: H={h}, d={d}")
        })?;
    }
    Ok("ln 9, one-hot and 10k random bounds".into())
}

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

fn projection_oracle() -> Outcome {
    let grid = grid_regions(10, 10, [-74.0, 40.7], 0.002);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Coord> = (0..1000)
        .map(|_| {
            [
                rng.gen_range(-74.002..-73.978),
                rng.gen_range(40.698..40.722),
            ]
        })
        .collect();
    let got = project_points(&grid.index(), &pts).region_of();
    let mut inside = 0;
    for (i, p) in pts.iter().enumerate() {
        let expect = grid
            .regions()
            .iter()
            .find(|r| {
                r.polygons
                    .iter()
                    .any(|poly| winding_number(*p, &poly.exterior) != 0)
            })
            .map(|r| r.region_id);
        let actual = got.get(i).copied().flatten();
        ensure(actual == expect, || {
            format!("point {p:?}: {actual:?} vs {expect:?}")
        })?;
        inside += expect.is_some() as usize;
    }
    Ok(format!("1000 points agree ({inside} inside the grid)"))
}

fn connected(members: &[u32], regions: &RegionSet) -> bool {
    let set: BTreeSet<u32> = members.iter().copied().collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut stack = vec![members[0]];
    while let Some(u) = stack.pop() {
        for v in &regions.get(u).expect("member exists").neighbors {
            if set.contains(v) && seen.insert(*v) {
                stack.push(*v);
            }
        }
    }
    seen.len() == set.len()
}

fn check_levels(
    h: &Hierarchy,
    regions: &RegionSet,
    bmin: usize,
    bmax: usize,
) -> Result<Vec<usize>, String> {
    let all: BTreeSet<u32> = regions.ids().collect();
    let mut counts = Vec::new();
    let mut prev: Option<BTreeMap<u32, u32>> = None;
    for lvl in &h.levels {
        let mut seen = BTreeSet::new();
        for c in &lvl.clusters {
            for m in &c.members {
                ensure(seen.insert(*m), || {
                    format!("level {}: {m} twice", lvl.level)
                })?;
            }
            ensure(connected(&c.members, regions), || {
                format!("level {}: cluster {} disconnected", lvl.level, c.cluster_id)
            })?;
            ensure((bmin..=bmax).contains(&c.members.len()), || {
                format!(
                    "level {}: cluster {} size {}",
                    lvl.level,
                    c.cluster_id,
                    c.members.len()
                )
            })?;
        }
        ensure(seen == all, || {
            format!("level {}: not a partition", lvl.level)
        })?;
        let labels = lvl.labels();
        if let Some(prev) = &prev {
            let mut up = BTreeMap::new();
            for (r, lower) in prev {
                let upper = labels[r];
                ensure(*up.entry(*lower).or_insert(upper) == upper, || {
                    format!("level {}: lower cluster {lower} split", lvl.level)
                })?;
            }
        }
        if let Some(last) = counts.last() {
            ensure(lvl.clusters.len() <= *last, || {
                format!("level {}: count grew", lvl.level)
            })?;
        }
        counts.push(lvl.clusters.len());
        prev = Some(labels);
    }
    Ok(counts)
}

fn aggregation_invariants() -> Outcome {
    let mut grid = grid_regions(10, 10, [-74.0, 40.7], 0.002);
    derive_adjacency(&mut grid, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // zoned synthetic mix: a dominant category per 5x5 quadrant plus noise
    let counts: Vec<Vec<f64>> = (0..100u32)
        .map(|i| {
            let (r, c) = (i / 10, i % 10);
            let zone = ((r / 5) * 2 + c / 5) as usize * 2;
            (0..9)
                .map(|k| {
                    let base = if k == zone { 30.0 } else { 0.0 };
                    base + if rng.gen_bool(0.3) {
                        rng.gen_range(0.0..8.0f64).floor()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut schedules: Vec<Vec<f64>> = [1.0, 1.9, 2.2, 2.5].iter().map(|a| vec![*a]).collect();
    schedules.push(ALPHA_PRESET.to_vec());
    let mut summary = Vec::new();
    for alpha in schedules {
        let cfg = AggregationConfig {
            alpha: alpha.clone(),
            beta_min: 3,
            beta_max: 9,
            levels: 3,
        };
        let h = build_hierarchy(&grid, &counts, &cfg, Weighting::PoiCount);
        let c = check_levels(&h, &grid, 3, 9).map_err(|e| format!("alpha {alpha:?}: {e}"))?;
        summary.push(format!("{alpha:?}->{c:?}"));
    }
    Ok(summary.join(" "))
}

fn brute_force(corpus: &Corpus, path: &[u32], window: &TimeWindow) -> f64 {
    let k = path.len() - 1;
    let (mut hit, mut all) = (0u64, 0u64);
    for t in &corpus.tracks {
        for i in 0..t.clusters.len() {
            if i + k >= t.clusters.len() || !window.contains_bin(t.depart_bins[i + k - 1]) {
                continue;
            }
            if t.clusters[i..i + k] == path[..k] {
                all += 1;
                hit += (t.clusters[i + k] == path[k]) as u64;
            }
        }
    }
    hit as f64 / all as f64
}

fn hon_oracle() -> Outcome {
    use planted::*;
    let corpus = planted_corpus(50, 4, (8, 8));
    let cfg = HonConfig::default();
    let window = TimeWindow::whole_day(60);
    let rules = grow_rules(&corpus, &window, cfg.min_support, cfg.max_order);
    let order2: BTreeSet<(Vec<u32>, u32)> = rules
        .rules
        .iter()
        .filter(|r| r.order == 2)
        .map(|r| (r.context.clone(), r.next))
        .collect();
    let want = BTreeSet::from([(vec![B, A], X), (vec![B, C], Y)]);
    ensure(order2 == want, || format!("order-2 rules {order2:?}"))?;
    let max_order = rules.rules.iter().map(|r| r.order).max().unwrap_or(0);
    ensure(max_order <= 3, || format!("order {max_order} rule emitted"))?;
    for r in &rules.rules {
        let expect = brute_force(&corpus, &r.path(), &window);
        ensure((r.probability - expect).abs() < 1e-9, || {
            format!("{:?}: {} vs {expect}", r.path(), r.probability)
        })?;
    }
    Ok(format!(
        "{} rules, order-2 = {{[X|B,A], [Y|B,C]}}",
        rules.rules.len()
    ))
}

fn graph_of(corpus: &Corpus) -> TransitionGraph {
    let mut edges = BTreeMap::new();
    let mut vertices = BTreeMap::new();
    for t in &corpus.tracks {
        for i in 0..t.clusters.len() {
            vertices.insert(t.clusters[i], [0.0, 0.0]);
            if i + 1 < t.clusters.len() {
                *edges
                    .entry((t.clusters[i], t.clusters[i + 1], t.depart_bins[i]))
                    .or_insert(0) += 1;
            }
        }
    }
    TransitionGraph {
        level: 1,
        day_type: None,
        bin_width_minutes: corpus.bin_width_minutes,
        vertices,
        edges,
        self_transitions: BTreeMap::new(),
    }
}

fn temporal_constraint() -> Outcome {
    let corpus = planted_corpus(50, 5, (8, 18));
    let morning = TimeWindow::hours(6, 12);
    let evening = TimeWindow::hours(15, 21);
    let key = |w: &TimeWindow| -> BTreeSet<(Vec<u32>, u32)> {
        let planted_only = Corpus {
            tracks: corpus
                .tracks
                .iter()
                .filter(|t| t.clusters.iter().all(|c| *c < planted::NOISE_BASE))
                .cloned()
                .collect(),
            bin_width_minutes: 60,
        };
        grow_rules(&planted_only, w, 5, 3)
            .rules
            .iter()
            .map(|r| (r.context.clone(), r.next))
            .collect()
    };
    let (am, pm) = (key(&morning), key(&evening));
    ensure(!am.is_empty() && !pm.is_empty(), || "empty rule set".into())?;
    ensure(am.is_disjoint(&pm), || {
        format!(
            "shared rules {:?}",
            am.intersection(&pm).collect::<Vec<_>>()
        )
    })?;

    let graph = graph_of(&corpus);
    let mut checked = 0;
    for w in [morning, evening, TimeWindow::whole_day(60)] {
        for src in graph.vertices.keys() {
            let d = first_order_prob(&graph, *src, &w);
            if d.is_empty() {
                continue;
            }
            let total: f64 = d.probs.values().sum();
            ensure((total - 1.0).abs() < 1e-9, || {
                format!("source {src} in {w}: {total}")
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{} vs {} rules disjoint; {checked} source distributions sum to 1",
        am.len(),
        pm.len()
    ))
}

fn flow_vs_order() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = dir.path().join("orders");
    let data = dir.path().join("data");
    let cfg = fx.join("config.toml");
    hoflow(&["gen-fixture", "orders", "--out", path(&fx)])?;
    hoflow(&[
        "--config",
        path(&cfg),
        "ingest",
        "--checkins",
        path(&fx.join("checkins.csv")),
        "--regions",
        path(&fx.join("regions.geojson")),
        "--out",
        path(&data),
    ])?;
    let csv = hoflow(&[
        "--config",
        path(&cfg),
        "sweep-order",
        "--data",
        path(&data),
        "--max-order",
        "4",
        "--windows",
        "0-24",
    ])?;
    let mut rdr = csv::Reader::from_reader(csv.as_slice());
    let mut mean = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let order: usize = row[1].parse().map_err(|_| "order column".to_string())?;
        let flow: f64 = row[3].parse().map_err(|_| "mean_flow column".to_string())?;
        mean.insert(order, flow);
    }
    let (two, four) = match (mean.get(&2), mean.get(&4)) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(format!("missing orders in {mean:?}")),
    };
    ensure(four < 0.5 * two, || {
        format!("order 4 {four} vs order 2 {two}")
    })?;
    Ok(format!(
        "mean flow order 2 = {two}, order 4 = {four} ({:.0}%)",
        100.0 * four / two
    ))
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let fx = dir.join("fx");
    let data = dir.join("data");
    hoflow(&[
        "gen-fixture",
        "demo",
        "--out",
        path(&fx),
        "--users",
        "150",
        "--days",
        "7",
    ])?;
    hoflow(&[
        "ingest",
        "--checkins",
        path(&fx.join("checkins.csv")),
        "--regions",
        path(&fx.join("regions.geojson")),
        "--holidays",
        path(&fx.join("holidays.txt")),
        "--out",
        path(&data),
        "--dataset-id",
        "demo",
    ])?;
    let dataset = std::fs::read(data.join("dataset.json")).map_err(|e| e.to_string())?;
    let hierarchy = hoflow(&["aggregate", "--data", path(&data), "--window", "7-10"])?;
    let patterns = hoflow(&[
        "extract",
        "--data",
        path(&data),
        "--window",
        "7-10",
        "--day-type",
        "weekday",
    ])?;
    Ok(vec![dataset, hierarchy, patterns])
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    for (name, (x, y)) in ["dataset", "hierarchy", "patterns"]
        .iter()
        .zip(first.iter().zip(&second))
    {
        ensure(x == y, || format!("{name} export differs"))?;
    }
    let patterns: serde_json::Value =
        serde_json::from_slice(&first[2]).map_err(|e| e.to_string())?;
    let n = patterns["patterns"].as_array().map_or(0, Vec::len);
    ensure(n > 0, || "no patterns extracted".into())?;
    Ok(format!("3 exports byte-identical ({n} patterns)"))
}

fn scale_smoke() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = dir.path().join("fx");
    let data = dir.path().join("data");
    hoflow(&[
        "gen-fixture",
        "scale",
        "--out",
        path(&fx),
        "--users",
        "5000",
        "--records",
        "1000000",
    ])?;
    let start = Instant::now();
    let report = hoflow(&[
        "ingest",
        "--checkins",
        path(&fx.join("checkins.csv")),
        "--regions",
        path(&fx.join("regions.geojson")),
        "--holidays",
        path(&fx.join("holidays.txt")),
        "--out",
        path(&data),
    ])?;
    let ingest = start.elapsed();
    hoflow(&["aggregate", "--data", path(&data), "--window", "7-10"])?;
    let total = start.elapsed();
    let report: serde_json::Value = serde_json::from_slice(&report).map_err(|e| e.to_string())?;
    let rows = report["accepted_rows"].as_u64().unwrap_or(0);
    ensure(rows >= 1_000_000, || format!("only {rows} rows accepted"))?;
    ensure(total < Duration::from_secs(300), || {
        format!("took {total:?}")
    })?;
    Ok(format!(
        "{rows} records: ingest {ingest:.1?}, ingest+aggregate {total:.1?}"
    ))
}

fn main() {
    // honor `cargo test -- <filter>` loosely: run only matching criteria
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 8] = [
        (
            "entropy correctness",
            entropy_correctness,
            Duration::from_secs(1),
        ),
        (
            "projection oracle",
            projection_oracle,
            Duration::from_secs(5),
        ),
        (
            "aggregation invariants",
            aggregation_invariants,
            Duration::from_secs(10),
        ),
        ("hon oracle equivalence", hon_oracle, Duration::from_secs(5)),
        ("temporal constraint", temporal_constraint, Duration::MAX),
        ("flow vs order", flow_vs_order, Duration::from_secs(30)),
        ("determinism", determinism, Duration::MAX),
        ("scale smoke test", scale_smoke, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {elapsed:>9.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {elapsed:>9.2?}  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
