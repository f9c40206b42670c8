//! Time-binned transition graphs and variable-order movement rules.
//!
//! A rule `[next | c1, c2, ...]` gives the distribution of the next cluster
//! given the current cluster `c1`, the one before it `c2`, and so on (most
//! recent first). Only transitions whose departure bin lies in the analysis
//! window are counted. Rules start at first order and are extended one step
//! back in history while the extended distribution diverges from its parent
//! by more than `order / log2(1 + support)` bits.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::aggregate::{ClusterId, ClusterLevel};
use crate::geo::{Coord, RegionId};
use crate::ingest::{DayType, StaySequence};
use crate::time::{bin_of, TimeWindow, DEFAULT_BIN_MINUTES};

/// One trajectory at cluster resolution. Consecutive entries are distinct;
/// `depart_bins[i]` is the bin in which the stay at `clusters[i]` ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub clusters: Vec<ClusterId>,
    pub depart_bins: Vec<u16>,
}

impl Track {
    /// Build from raw steps, merging runs of the same cluster. The merged
    /// stay keeps the departure of its last step.
    pub fn collapsed(steps: impl IntoIterator<Item = (ClusterId, u16)>) -> Self {
        let mut clusters: Vec<ClusterId> = Vec::new();
        let mut depart_bins = Vec::new();
        for (c, b) in steps {
            if clusters.last() == Some(&c) {
                *depart_bins.last_mut().expect("parallel vectors") = b;
            } else {
                clusters.push(c);
                depart_bins.push(b);
            }
        }
        Self {
            clusters,
            depart_bins,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub tracks: Vec<Track>,
    pub bin_width_minutes: u16,
}

impl Corpus {
    /// Project stay sequences onto the clusters of one level. Sequences on
    /// other day types are skipped and visits outside every region split
    /// the sequence. Tracks shorter than two clusters are dropped.
    pub fn from_stays(
        stays: &[StaySequence],
        labels: &BTreeMap<RegionId, ClusterId>,
        day_type: Option<DayType>,
        bin_width_minutes: u16,
    ) -> Self {
        let mut tracks = Vec::new();
        for s in stays {
            if day_type.is_some_and(|d| d != s.day_type) {
                continue;
            }
            let mut run: Vec<(ClusterId, u16)> = Vec::new();
            for v in &s.visits {
                match v.region_id.and_then(|r| labels.get(&r)) {
                    Some(&c) => run.push((c, bin_of(&v.departure(), bin_width_minutes))),
                    None => push_track(&mut tracks, std::mem::take(&mut run)),
                }
            }
            push_track(&mut tracks, run);
        }
        Self {
            tracks,
            bin_width_minutes,
        }
    }

    /// Corpus from explicit `(clusters, departure bins)` pairs.
    pub fn from_sequences<I>(seqs: I, bin_width_minutes: u16) -> Self
    where
        I: IntoIterator<Item = (Vec<ClusterId>, Vec<u16>)>,
    {
        let mut tracks = Vec::new();
        for (c, b) in seqs {
            assert_eq!(c.len(), b.len(), "clusters and bins must align");
            push_track(&mut tracks, c.into_iter().zip(b).collect());
        }
        Self {
            tracks,
            bin_width_minutes,
        }
    }

    /// Every transition departs in the same bin.
    pub fn uniform_bin<I>(seqs: I, bin: u16) -> Self
    where
        I: IntoIterator<Item = Vec<ClusterId>>,
    {
        Self::from_sequences(
            seqs.into_iter().map(|s| {
                let n = s.len();
                (s, vec![bin; n])
            }),
            DEFAULT_BIN_MINUTES,
        )
    }

    /// Rename clusters and re-merge runs that became identical.
    pub fn relabel(&self, map: impl Fn(ClusterId) -> ClusterId) -> Self {
        let mut tracks = Vec::new();
        for t in &self.tracks {
            let steps = t
                .clusters
                .iter()
                .zip(&t.depart_bins)
                .map(|(c, b)| (map(*c), *b))
                .collect();
            push_track(&mut tracks, steps);
        }
        Self {
            tracks,
            bin_width_minutes: self.bin_width_minutes,
        }
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn full_day(&self) -> TimeWindow {
        TimeWindow::whole_day(self.bin_width_minutes)
    }
}

fn push_track(tracks: &mut Vec<Track>, steps: Vec<(ClusterId, u16)>) {
    let t = Track::collapsed(steps);
    if t.len() >= 2 {
        tracks.push(t);
    }
}

/// Directed flow counts between clusters per departure bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionGraph {
    pub level: usize,
    pub day_type: Option<DayType>,
    pub bin_width_minutes: u16,
    pub vertices: BTreeMap<ClusterId, Coord>,
    pub edges: BTreeMap<(ClusterId, ClusterId, u16), u64>,
    /// Moves that stay inside one cluster, per departure bin.
    pub self_transitions: BTreeMap<(ClusterId, u16), u64>,
}

impl TransitionGraph {
    pub fn edge_weight(&self, src: ClusterId, dst: ClusterId, window: &TimeWindow) -> u64 {
        self.edges
            .range((src, dst, 0)..=(src, dst, u16::MAX))
            .filter(|((_, _, b), _)| window.contains_bin(*b))
            .map(|(_, w)| *w)
            .sum()
    }

    pub fn total_edges(&self) -> u64 {
        self.edges.values().sum()
    }

    pub fn total_self_transitions(&self) -> u64 {
        self.self_transitions.values().sum()
    }
}

pub fn build_transition_graph(
    stays: &[StaySequence],
    level: &ClusterLevel,
    day_type: Option<DayType>,
    bin_width_minutes: u16,
) -> TransitionGraph {
    let labels = level.labels();
    let mut edges = BTreeMap::new();
    let mut self_transitions = BTreeMap::new();
    for s in stays {
        if day_type.is_some_and(|d| d != s.day_type) {
            continue;
        }
        for pair in s.visits.windows(2) {
            let (Some(a), Some(b)) = (
                pair[0].region_id.and_then(|r| labels.get(&r)),
                pair[1].region_id.and_then(|r| labels.get(&r)),
            ) else {
                continue;
            };
            let bin = bin_of(&pair[0].departure(), bin_width_minutes);
            if a == b {
                *self_transitions.entry((*a, bin)).or_insert(0) += 1;
            } else {
                *edges.entry((*a, *b, bin)).or_insert(0) += 1;
            }
        }
    }
    TransitionGraph {
        level: level.level,
        day_type,
        bin_width_minutes,
        vertices: level
            .clusters
            .iter()
            .map(|c| (c.cluster_id, c.centroid))
            .collect(),
        edges,
        self_transitions,
    }
}

/// Next-step distribution with the number of transitions behind it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub probs: BTreeMap<ClusterId, f64>,
    pub support: u64,
}

impl Distribution {
    pub fn from_counts(counts: &BTreeMap<ClusterId, u64>) -> Self {
        let support: u64 = counts.values().sum();
        if support == 0 {
            return Self::default();
        }
        Self {
            probs: counts
                .iter()
                .filter(|(_, c)| **c > 0)
                .map(|(k, c)| (*k, *c as f64 / support as f64))
                .collect(),
            support,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, next: ClusterId) -> f64 {
        self.probs.get(&next).copied().unwrap_or(0.0)
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.probs
            .values()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.log2())
            .sum::<f64>()
            .max(0.0)
    }
}

/// `P(dst | src)` from in-window edge weights.
pub fn first_order_prob(
    graph: &TransitionGraph,
    source: ClusterId,
    window: &TimeWindow,
) -> Distribution {
    let mut counts = BTreeMap::new();
    for ((_, dst, bin), w) in graph
        .edges
        .range((source, 0, 0)..=(source, ClusterId::MAX, u16::MAX))
    {
        if window.contains_bin(*bin) {
            *counts.entry(*dst).or_insert(0) += *w;
        }
    }
    Distribution::from_counts(&counts)
}

/// Distribution of the cluster following `context` (most recent first),
/// over transitions departing inside `window`.
pub fn conditional_distribution(
    corpus: &Corpus,
    context: &[ClusterId],
    window: &TimeWindow,
) -> Distribution {
    assert!(!context.is_empty(), "context must not be empty");
    let k = context.len();
    let mut counts = BTreeMap::new();
    for t in &corpus.tracks {
        for i in (k - 1)..t.len().saturating_sub(1) {
            if !window.contains_bin(t.depart_bins[i]) {
                continue;
            }
            if (0..k).all(|j| t.clusters[i - j] == context[j]) {
                *counts.entry(t.clusters[i + 1]).or_insert(0u64) += 1;
            }
        }
    }
    Distribution::from_counts(&counts)
}

/// Smoothing mass for `Q(x) = 0` cells.
pub const KLD_EPSILON: f64 = 1e-12;

/// `sum P(x) log2(P(x) / Q(x))` over the support of `P`.
pub fn kld(p: &Distribution, q: &Distribution) -> f64 {
    p.probs
        .iter()
        .filter(|(_, px)| **px > 0.0)
        .map(|(x, px)| {
            let qx = q.get(*x).max(KLD_EPSILON);
            px * (px / qx).log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Divergence an order-`order` extension must exceed to be kept.
pub fn growth_threshold(order: usize, support: u64) -> f64 {
    order as f64 / (1.0 + support as f64).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HonConfig {
    pub bin_width_minutes: u16,
    pub min_support: u64,
    pub max_order: usize,
    /// Longest pattern path, in clusters.
    pub max_path_len: usize,
    pub top_n: usize,
}

impl Default for HonConfig {
    fn default() -> Self {
        Self {
            bin_width_minutes: DEFAULT_BIN_MINUTES,
            min_support: 5,
            max_order: 3,
            max_path_len: 4,
            top_n: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonRule {
    /// Most recent first.
    pub context: Vec<ClusterId>,
    pub next: ClusterId,
    pub probability: f64,
    /// Transitions observed after `context` in the window.
    pub support: u64,
    /// Of which went to `next`.
    pub count: u64,
    pub order: usize,
    pub window: TimeWindow,
}

impl HonRule {
    /// Context oldest first, then `next`.
    pub fn path(&self) -> Vec<ClusterId> {
        let mut p: Vec<ClusterId> = self.context.iter().rev().copied().collect();
        p.push(self.next);
        p
    }
}

/// Rules grown for one window, with the distribution of every accepted context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub window: TimeWindow,
    pub rules: Vec<HonRule>,
    #[serde(skip)]
    pub distributions: BTreeMap<Vec<ClusterId>, Distribution>,
}

impl RuleSet {
    pub fn higher_order(&self) -> impl Iterator<Item = &HonRule> {
        self.rules.iter().filter(|r| r.order >= 2)
    }

    pub fn distribution(&self, context: &[ClusterId]) -> Option<&Distribution> {
        self.distributions.get(context)
    }
}

type ContextTable = BTreeMap<Vec<ClusterId>, BTreeMap<ClusterId, u64>>;

/// Next-step counts for every context up to `max_order` in one pass.
fn context_table(corpus: &Corpus, window: &TimeWindow, max_order: usize) -> ContextTable {
    let mut table: ContextTable = BTreeMap::new();
    for t in &corpus.tracks {
        for i in 0..t.len().saturating_sub(1) {
            if !window.contains_bin(t.depart_bins[i]) {
                continue;
            }
            let next = t.clusters[i + 1];
            let mut ctx = Vec::with_capacity(max_order);
            for j in 0..max_order.min(i + 1) {
                ctx.push(t.clusters[i - j]);
                *table
                    .entry(ctx.clone())
                    .or_default()
                    .entry(next)
                    .or_insert(0) += 1;
            }
        }
    }
    table
}

fn emit(
    rules: &mut Vec<HonRule>,
    context: &[ClusterId],
    counts: &BTreeMap<ClusterId, u64>,
    dist: &Distribution,
    window: &TimeWindow,
) {
    for (next, c) in counts {
        rules.push(HonRule {
            context: context.to_vec(),
            next: *next,
            probability: dist.get(*next),
            support: dist.support,
            count: *c,
            order: context.len(),
            window: *window,
        });
    }
}

/// First-order rules for every source plus accepted higher-order extensions.
pub fn grow_rules(
    corpus: &Corpus,
    window: &TimeWindow,
    min_support: u64,
    max_order: usize,
) -> RuleSet {
    let max_order = max_order.max(1);
    let table = context_table(corpus, window, max_order);
    let mut rules = Vec::new();
    let mut distributions = BTreeMap::new();
    let mut accepted: Vec<Vec<ClusterId>> = Vec::new();

    for (ctx, counts) in table.iter().filter(|(c, _)| c.len() == 1) {
        let dist = Distribution::from_counts(counts);
        emit(&mut rules, ctx, counts, &dist, window);
        distributions.insert(ctx.clone(), dist);
        accepted.push(ctx.clone());
    }

    let mut cursor = 0;
    while cursor < accepted.len() {
        let parent = accepted[cursor].clone();
        cursor += 1;
        if parent.len() >= max_order {
            continue;
        }
        let parent_dist = distributions[&parent].clone();
        let order = parent.len() + 1;
        // all extensions of `parent` sort directly after it
        for (ctx, counts) in table
            .range(parent.clone()..)
            .take_while(|(c, _)| c.starts_with(&parent))
            .filter(|(c, _)| c.len() == order)
        {
            let dist = Distribution::from_counts(counts);
            if dist.support < min_support {
                continue;
            }
            if kld(&dist, &parent_dist) > growth_threshold(order, dist.support) {
                emit(&mut rules, ctx, counts, &dist, window);
                distributions.insert(ctx.clone(), dist);
                accepted.push(ctx.clone());
            }
        }
    }

    rules.sort_by(|a, b| {
        a.order
            .cmp(&b.order)
            .then_with(|| a.context.cmp(&b.context))
            .then(a.next.cmp(&b.next))
    });
    RuleSet {
        window: *window,
        rules,
        distributions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    Linear,
    Annular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub path: Vec<ClusterId>,
    /// Trajectories traversing the whole path with its last move in the window.
    pub flow: u64,
    pub window: TimeWindow,
    pub entropy_rate: f64,
    pub mode: PatternMode,
    pub order: usize,
    pub probability: f64,
    /// Per edge, departures per day bin over the counted traversals.
    pub edge_histograms: Vec<Vec<u64>>,
}

impl Pattern {
    /// First and last day bin with any departure on the final edge.
    pub fn active_bins(&self) -> Option<(u16, u16)> {
        let last = self.edge_histograms.last()?;
        let first = last.iter().position(|c| *c > 0)?;
        let end = last.iter().rposition(|c| *c > 0)?;
        Some((first as u16, end as u16))
    }
}

pub fn pattern_mode(path: &[ClusterId]) -> PatternMode {
    let distinct: BTreeSet<_> = path.iter().collect();
    if distinct.len() < path.len() {
        PatternMode::Annular
    } else {
        PatternMode::Linear
    }
}

/// Normalized uncertainty of the next step after the rule's context:
/// entropy in bits over `log2` of the number of observed alternatives.
pub fn pattern_entropy_rate(rule: &HonRule, rules: &RuleSet) -> f64 {
    let Some(dist) = rules.distribution(&rule.context) else {
        return 0.0;
    };
    let n = dist.probs.len();
    if n <= 1 {
        return 0.0;
    }
    (dist.entropy_bits() / (n as f64).log2()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
struct PathAcc {
    flow: u64,
    last_track: usize,
    hist: Vec<Vec<u64>>,
}

/// Trajectory flow and per-edge histograms for each requested path.
///
/// A track counts once per path, at its first occurrence whose final move
/// departs inside `window`.
pub fn path_flows(
    corpus: &Corpus,
    paths: &BTreeSet<Vec<ClusterId>>,
    window: &TimeWindow,
) -> BTreeMap<Vec<ClusterId>, (u64, Vec<Vec<u64>>)> {
    let bins = window.bins_per_day() as usize;
    let mut acc: HashMap<Vec<ClusterId>, PathAcc> = paths
        .iter()
        .map(|p| {
            (
                p.clone(),
                PathAcc {
                    flow: 0,
                    last_track: usize::MAX,
                    hist: vec![vec![0; bins]; p.len().saturating_sub(1)],
                },
            )
        })
        .collect();
    let lengths: BTreeSet<usize> = paths.iter().map(Vec::len).filter(|l| *l >= 2).collect();

    for (ti, t) in corpus.tracks.iter().enumerate() {
        for end in 1..t.len() {
            if !window.contains_bin(t.depart_bins[end - 1]) {
                continue;
            }
            for &len in &lengths {
                if end + 1 < len {
                    break;
                }
                let start = end + 1 - len;
                let Some(a) = acc.get_mut(&t.clusters[start..=end]) else {
                    continue;
                };
                if a.last_track == ti {
                    continue;
                }
                a.last_track = ti;
                a.flow += 1;
                for e in 0..len - 1 {
                    let b = t.depart_bins[start + e] as usize;
                    if b < bins {
                        a.hist[e][b] += 1;
                    }
                }
            }
        }
    }
    acc.into_iter()
        .map(|(p, a)| (p, (a.flow, a.hist)))
        .collect()
}

/// Departures per bin on one edge of a pattern, over the traversals that
/// make up its flow.
pub fn edge_flow_histogram(corpus: &Corpus, pattern: &Pattern, edge_index: usize) -> Vec<u64> {
    assert!(
        edge_index + 1 < pattern.path.len(),
        "edge index out of range"
    );
    let paths = BTreeSet::from([pattern.path.clone()]);
    let mut flows = path_flows(corpus, &paths, &pattern.window);
    let (_, mut hist) = flows.remove(&pattern.path).expect("requested path");
    hist.swap_remove(edge_index)
}

/// Materialize higher-order rules as patterns, keeping those with
/// `flow >= min_flow` and at most `max_path_len` clusters. Sorted by flow
/// descending, then path.
pub fn materialize_patterns(
    corpus: &Corpus,
    rules: &RuleSet,
    min_flow: u64,
    max_path_len: usize,
) -> Vec<Pattern> {
    let candidates: Vec<&HonRule> = rules
        .higher_order()
        .filter(|r| r.order < max_path_len)
        .collect();
    let paths: BTreeSet<Vec<ClusterId>> = candidates.iter().map(|r| r.path()).collect();
    let flows = path_flows(corpus, &paths, &rules.window);
    let mut out: Vec<Pattern> = candidates
        .into_iter()
        .filter_map(|r| {
            let path = r.path();
            let (flow, hist) = flows.get(&path)?.clone();
            (flow >= min_flow.max(1)).then(|| Pattern {
                mode: pattern_mode(&path),
                entropy_rate: pattern_entropy_rate(r, rules),
                order: r.order,
                probability: r.probability,
                path,
                flow,
                window: rules.window,
                edge_histograms: hist,
            })
        })
        .collect();
    sort_patterns(&mut out);
    out
}

pub fn sort_patterns(patterns: &mut [Pattern]) {
    patterns.sort_by(|a, b| b.flow.cmp(&a.flow).then_with(|| a.path.cmp(&b.path)));
}

/// City-wide patterns for a window, highest flow first.
pub fn assemble_global_patterns(
    corpus: &Corpus,
    rules: &RuleSet,
    config: &HonConfig,
    top_n: usize,
) -> Vec<Pattern> {
    let mut p = materialize_patterns(corpus, rules, config.min_support, config.max_path_len);
    p.truncate(top_n);
    p
}

/// Patterns touching any of `selection`. A multi-cluster selection is
/// treated as one node labelled with its smallest id, so moves between
/// selected clusters disappear from paths.
pub fn local_patterns(
    corpus: &Corpus,
    selection: &BTreeSet<ClusterId>,
    window: &TimeWindow,
    min_flow: u64,
    config: &HonConfig,
) -> Vec<Pattern> {
    let Some(&merged) = selection.iter().next() else {
        return Vec::new();
    };
    let relabeled;
    let corpus = if selection.len() > 1 {
        relabeled = corpus.relabel(|c| if selection.contains(&c) { merged } else { c });
        &relabeled
    } else {
        corpus
    };
    let rules = grow_rules(corpus, window, config.min_support, config.max_order);
    materialize_patterns(
        corpus,
        &rules,
        config.min_support.max(min_flow),
        config.max_path_len,
    )
    .into_iter()
    .filter(|p| p.path.contains(&merged))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFlow {
    pub window: TimeWindow,
    pub order: usize,
    pub patterns: usize,
    pub mean_flow: f64,
}

/// Mean pattern flow per order for each window. Orders without any accepted
/// pattern are omitted.
pub fn flow_by_order_stats(
    corpus: &Corpus,
    windows: &[TimeWindow],
    max_order: usize,
    min_support: u64,
) -> Vec<OrderFlow> {
    let mut out = Vec::new();
    if max_order < 2 {
        return out;
    }
    for w in windows {
        let rules = grow_rules(corpus, w, min_support, max_order);
        let patterns = materialize_patterns(corpus, &rules, min_support, max_order + 1);
        let mut by_order: BTreeMap<usize, (usize, u64)> = BTreeMap::new();
        for p in &patterns {
            let e = by_order.entry(p.order).or_insert((0, 0));
            e.0 += 1;
            e.1 += p.flow;
        }
        for (order, (n, total)) in by_order {
            out.push(OrderFlow {
                window: *w,
                order,
                patterns: n,
                mean_flow: total as f64 / n as f64,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: ClusterId = 0;
    const B: ClusterId = 1;
    const C: ClusterId = 2;
    const X: ClusterId = 3;
    const Y: ClusterId = 4;

    fn planted() -> Corpus {
        let mut seqs = Vec::new();
        for _ in 0..90 {
            seqs.push(vec![A, B, X]);
            seqs.push(vec![C, B, Y]);
        }
        Corpus::uniform_bin(seqs, 8)
    }

    #[test]
    fn collapse_merges_runs() {
        let t = Track::collapsed([(A, 1), (A, 2), (B, 3)]);
        assert_eq!(t.clusters, vec![A, B]);
        assert_eq!(t.depart_bins, vec![2, 3]);
    }

    #[test]
    fn conditional_counts() {
        let c = planted();
        let w = c.full_day();
        let d = conditional_distribution(&c, &[B, A], &w);
        assert_eq!(d.probs, BTreeMap::from([(X, 1.0)]));
        assert_eq!(d.support, 90);
        let d = conditional_distribution(&c, &[B], &w);
        assert_eq!(d.probs, BTreeMap::from([(X, 0.5), (Y, 0.5)]));
        let d = conditional_distribution(&c, &[X, Y], &w);
        assert!(d.is_empty());
        assert_eq!(d.support, 0);
    }

    #[test]
    fn kld_values() {
        let p = Distribution {
            probs: BTreeMap::from([(X, 1.0)]),
            support: 1,
        };
        let q = Distribution {
            probs: BTreeMap::from([(X, 0.5), (Y, 0.5)]),
            support: 2,
        };
        assert_eq!(kld(&q, &q), 0.0);
        assert!((kld(&p, &q) - 1.0).abs() < 1e-12);
        // missing mass in Q is smoothed, not infinite
        assert!(kld(&q, &p).is_finite());
    }

    #[test]
    fn planted_rules_accepted_at_order_two() {
        let c = planted();
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        let higher: Vec<_> = rs
            .higher_order()
            .map(|r| (r.context.clone(), r.next, r.probability))
            .collect();
        assert_eq!(higher, vec![(vec![B, A], X, 1.0), (vec![B, C], Y, 1.0)]);
        assert!(1.0 > growth_threshold(2, 90));
    }

    #[test]
    fn independent_history_stays_first_order() {
        let mut seqs = Vec::new();
        for _ in 0..50 {
            seqs.push(vec![A, B, X]);
            seqs.push(vec![A, B, Y]);
            seqs.push(vec![C, B, X]);
            seqs.push(vec![C, B, Y]);
        }
        let c = Corpus::uniform_bin(seqs, 8);
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        assert_eq!(rs.higher_order().count(), 0);
    }

    #[test]
    fn max_order_one_is_first_order_prob() {
        let c = planted();
        let w = c.full_day();
        let rs = grow_rules(&c, &w, 5, 1);
        let stays: Vec<StaySequence> = Vec::new();
        let _ = stays;
        for r in &rs.rules {
            assert_eq!(r.order, 1);
            let d = conditional_distribution(&c, &r.context, &w);
            assert_eq!(d.get(r.next), r.probability);
        }
        assert_eq!(rs.rules.len(), 4);
    }

    #[test]
    fn global_patterns_ordered() {
        let mut seqs = Vec::new();
        for _ in 0..90 {
            seqs.push(vec![A, B, X]);
        }
        for _ in 0..40 {
            seqs.push(vec![C, B, Y]);
        }
        let c = Corpus::uniform_bin(seqs, 8);
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        let p = assemble_global_patterns(&c, &rs, &HonConfig::default(), 10);
        let flows: Vec<u64> = p.iter().map(|p| p.flow).collect();
        assert_eq!(flows, vec![90, 40]);
        let p = assemble_global_patterns(&c, &rs, &HonConfig::default(), 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].path, vec![A, B, X]);
    }

    #[test]
    fn planted_patterns_tie_break_by_path() {
        let c = planted();
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        let p = assemble_global_patterns(&c, &rs, &HonConfig::default(), 10);
        let paths: Vec<_> = p.iter().map(|p| (p.path.clone(), p.flow)).collect();
        assert_eq!(paths, vec![(vec![A, B, X], 90), (vec![C, B, Y], 90)]);
        assert!(p
            .iter()
            .all(|p| p.mode == PatternMode::Linear && p.entropy_rate == 0.0));
    }

    #[test]
    fn local_selection() {
        let c = planted();
        let cfg = HonConfig::default();
        let w = c.full_day();
        assert_eq!(
            local_patterns(&c, &BTreeSet::from([B]), &w, 1, &cfg).len(),
            2
        );
        assert!(local_patterns(&c, &BTreeSet::from([B]), &w, 1000, &cfg).is_empty());
        assert!(local_patterns(&c, &BTreeSet::new(), &w, 1, &cfg).is_empty());
        // merging A and B removes the A->B move from every path
        let merged = local_patterns(&c, &BTreeSet::from([A, B]), &w, 1, &cfg);
        for p in &merged {
            assert!(p.path.windows(2).all(|e| e[0] != e[1]));
        }
    }

    #[test]
    fn entropy_rate_values() {
        let mut seqs = Vec::new();
        for _ in 0..30 {
            seqs.push(vec![A, B, X]);
        }
        for _ in 0..10 {
            seqs.push(vec![A, B, Y]);
        }
        for _ in 0..40 {
            seqs.push(vec![C, B, Y]);
        }
        let c = Corpus::uniform_bin(seqs, 8);
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        let rule = rs
            .higher_order()
            .find(|r| r.context == vec![B, A] && r.next == X)
            .unwrap();
        // H(0.75, 0.25) in bits over log2(2)
        let oracle = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((pattern_entropy_rate(rule, &rs) - oracle).abs() < 1e-12);
        assert!((oracle - 0.811).abs() < 1e-3);
    }

    #[test]
    fn annular_mode() {
        assert_eq!(pattern_mode(&[A, B, A]), PatternMode::Annular);
        assert_eq!(pattern_mode(&[A, B, C]), PatternMode::Linear);
    }

    #[test]
    fn histogram_one_hot_and_conserved() {
        let c = planted();
        let rs = grow_rules(&c, &c.full_day(), 5, 3);
        let p = &assemble_global_patterns(&c, &rs, &HonConfig::default(), 10)[0];
        for e in 0..2 {
            let h = edge_flow_histogram(&c, p, e);
            assert_eq!(h[8], 90);
            assert_eq!(h.iter().sum::<u64>(), p.flow);
            assert_eq!(h, p.edge_histograms[e]);
        }
        assert_eq!(p.active_bins(), Some((8, 8)));
    }

    #[test]
    fn flow_table_edge_cases() {
        let empty = Corpus::uniform_bin(Vec::<Vec<ClusterId>>::new(), 0);
        assert!(flow_by_order_stats(&empty, &[TimeWindow::whole_day(60)], 5, 5).is_empty());
        assert!(flow_by_order_stats(&planted(), &[TimeWindow::whole_day(60)], 1, 5).is_empty());
    }
}
