//! Entropy-driven region merging and the multi-scale cluster hierarchy.
//!
//! A cluster grows from a seed region by breadth-first expansion over the
//! adjacency graph. A neighbor `j` joins cluster `i` when
//!
//! ```text
//! (H(i) + H(j)) / 2 >= alpha * H(i + j)
//! ```
//!
//! where `H(i + j)` is the entropy of the pooled category counts. Each
//! candidate is tested once per cluster, the first time the frontier reaches
//! it, and a cluster never grows past `beta_max` base regions. Clusters left
//! with fewer than `beta_min` base regions are then folded into a neighbor.
//!
//! Level `k + 1` of the hierarchy reruns the same procedure with the level-`k`
//! clusters as indivisible units, so every coarse cluster is a union of whole
//! finer clusters.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{entropy_of_counts, Coord, RegionId, RegionProfiles, RegionSet, Weighting};
use crate::ingest::{CategoryId, DayType};
use crate::time::TimeWindow;

pub type ClusterId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("alpha must be positive, got {0}")]
    Alpha(f64),
    #[error("beta range {min}-{max} is invalid")]
    Beta { min: usize, max: usize },
    #[error("at least one level is required")]
    Levels,
}

/// Merge threshold schedule and cluster size bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    /// Threshold per level; the last entry repeats for deeper levels.
    pub alpha: Vec<f64>,
    pub beta_min: usize,
    pub beta_max: usize,
    pub levels: usize,
}

/// Threshold schedule shipped as a preset for multi-level runs.
pub const ALPHA_PRESET: [f64; 3] = [1.9, 2.2, 2.5];

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            alpha: vec![ALPHA_PRESET[0]],
            beta_min: 3,
            beta_max: 9,
            levels: 3,
        }
    }
}

impl AggregationConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.alpha.is_empty() {
            return Err(ConfigError::Alpha(f64::NAN));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0)) {
            return Err(ConfigError::Alpha(*a));
        }
        if self.beta_min == 0 || self.beta_min > self.beta_max {
            return Err(ConfigError::Beta {
                min: self.beta_min,
                max: self.beta_max,
            });
        }
        if self.levels == 0 {
            return Err(ConfigError::Levels);
        }
        Ok(())
    }

    /// Threshold used at 1-based `level`.
    pub fn alpha_at(&self, level: usize) -> f64 {
        let i = level.saturating_sub(1).min(self.alpha.len() - 1);
        self.alpha[i]
    }

    pub fn single_level(alpha: f64, beta_min: usize, beta_max: usize) -> Self {
        Self {
            alpha: vec![alpha],
            beta_min,
            beta_max,
            levels: 1,
        }
    }
}

/// `true` when two units may merge at threshold `alpha`.
///
/// An infinite `alpha` never merges.
pub fn merge_condition(h_i: f64, h_j: f64, h_merged: f64, alpha: f64) -> bool {
    if alpha.is_infinite() {
        return false;
    }
    0.5 * (h_i + h_j) >= alpha * h_merged
}

/// Indivisible aggregation unit: a base region at level 1, a cluster above.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub members: Vec<RegionId>,
    pub counts: Vec<f64>,
    pub neighbors: BTreeSet<usize>,
}

impl Unit {
    fn size(&self) -> usize {
        self.members.len()
    }
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

fn pooled(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Debug, Clone)]
struct Group {
    units: Vec<usize>,
    size: usize,
    counts: Vec<f64>,
}

/// Partition units into groups; returns unit indices per group.
///
/// Units are visited as seeds in index order, which callers keep equal to
/// ascending id order.
pub fn group_units(
    units: &[Unit],
    alpha: f64,
    beta_min: usize,
    beta_max: usize,
) -> Vec<Vec<usize>> {
    let n = units.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Group> = Vec::new();

    for seed in 0..n {
        if owner[seed].is_some() {
            continue;
        }
        let gid = groups.len();
        owner[seed] = Some(gid);
        let mut g = Group {
            units: vec![seed],
            size: units[seed].size(),
            counts: units[seed].counts.clone(),
        };
        let mut seen: BTreeSet<usize> = BTreeSet::from([seed]);
        let mut frontier: VecDeque<usize> = VecDeque::new();
        for &nb in &units[seed].neighbors {
            if seen.insert(nb) {
                frontier.push_back(nb);
            }
        }
        while let Some(j) = frontier.pop_front() {
            if g.size >= beta_max {
                break;
            }
            if owner[j].is_some() || g.size + units[j].size() > beta_max {
                continue;
            }
            let h_i = entropy_of_counts(&g.counts);
            let h_j = entropy_of_counts(&units[j].counts);
            let merged = pooled(&g.counts, &units[j].counts);
            if merge_condition(h_i, h_j, entropy_of_counts(&merged), alpha) {
                owner[j] = Some(gid);
                g.units.push(j);
                g.size += units[j].size();
                g.counts = merged;
                for &nb in &units[j].neighbors {
                    if seen.insert(nb) {
                        frontier.push_back(nb);
                    }
                }
            }
        }
        groups.push(g);
    }

    let owner: Vec<usize> = owner.into_iter().map(|o| o.expect("assigned")).collect();
    sweep_undersized(units, groups, owner, beta_min, beta_max)
}

fn group_neighbors(units: &[Unit], owner: &[usize], g: &Group, gid: usize) -> BTreeSet<usize> {
    g.units
        .iter()
        .flat_map(|&u| units[u].neighbors.iter())
        .map(|&nb| owner[nb])
        .filter(|&o| o != gid)
        .collect()
}

/// Whether `units` minus `removed` stays connected.
fn connected_without(units: &[Unit], members: &[usize], removed: usize) -> bool {
    let rest: BTreeSet<usize> = members.iter().copied().filter(|&u| u != removed).collect();
    let Some(&start) = rest.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for nb in &units[u].neighbors {
            if rest.contains(nb) && seen.insert(*nb) {
                stack.push(*nb);
            }
        }
    }
    seen.len() == rest.len()
}

/// Fold groups smaller than `beta_min` into neighboring groups.
///
/// The smallest undersized group goes first. It joins the neighbor that
/// raises that neighbor's entropy the least without exceeding `beta_max`;
/// when no neighbor has room it takes over single border units from
/// neighbors that can spare them, and only as a last resort overflows.
fn sweep_undersized(
    units: &[Unit],
    mut groups: Vec<Group>,
    mut owner: Vec<usize>,
    beta_min: usize,
    beta_max: usize,
) -> Vec<Vec<usize>> {
    let mut alive: Vec<bool> = vec![true; groups.len()];
    let mut stuck: BTreeSet<usize> = BTreeSet::new();
    loop {
        let pick = (0..groups.len())
            .filter(|&g| alive[g] && groups[g].size < beta_min && !stuck.contains(&g))
            .min_by_key(|&g| (groups[g].size, g));
        let Some(small) = pick else { break };
        let nbrs = group_neighbors(units, &owner, &groups[small], small);
        if nbrs.is_empty() {
            // whole connected component below beta_min
            stuck.insert(small);
            continue;
        }

        let cost = |target: usize| {
            let merged = pooled(&groups[target].counts, &groups[small].counts);
            entropy_of_counts(&merged) - entropy_of_counts(&groups[target].counts)
        };
        let best_fit = nbrs
            .iter()
            .copied()
            .filter(|&t| groups[t].size + groups[small].size <= beta_max)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)));

        if let Some(target) = best_fit {
            merge_groups(&mut groups, &mut owner, &mut alive, small, target);
            continue;
        }

        // borrow one border unit from a neighbor with spare members
        let mut steal: Option<(f64, usize, usize)> = None;
        for &t in &nbrs {
            for &u in &groups[t].units {
                let touches = units[u].neighbors.iter().any(|nb| owner[*nb] == small);
                if !touches
                    || groups[t].size - units[u].size() < beta_min
                    || groups[small].size + units[u].size() > beta_max
                    || !connected_without(units, &groups[t].units, u)
                {
                    continue;
                }
                let c = entropy_of_counts(&pooled(&groups[small].counts, &units[u].counts));
                let better = match steal {
                    None => true,
                    Some((bc, bt, bu)) => c.total_cmp(&bc).then((t, u).cmp(&(bt, bu))).is_lt(),
                };
                if better {
                    steal = Some((c, t, u));
                }
            }
        }
        if let Some((_, t, u)) = steal {
            groups[t].units.retain(|&x| x != u);
            groups[t].size -= units[u].size();
            for (a, b) in groups[t].counts.iter_mut().zip(&units[u].counts) {
                *a -= b;
            }
            groups[small].units.push(u);
            groups[small].size += units[u].size();
            add_into(&mut groups[small].counts, &units[u].counts);
            owner[u] = small;
            continue;
        }

        let target = nbrs
            .iter()
            .copied()
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
            .expect("non-empty");
        log::warn!(
            "cluster of {} units exceeds beta_max after forced merge",
            groups[target].size + groups[small].size
        );
        merge_groups(&mut groups, &mut owner, &mut alive, small, target);
    }

    let mut out: Vec<Vec<usize>> = groups
        .into_iter()
        .zip(alive)
        .filter(|(_, a)| *a)
        .map(|(mut g, _)| {
            g.units.sort_unstable();
            g.units
        })
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

fn merge_groups(
    groups: &mut [Group],
    owner: &mut [usize],
    alive: &mut [bool],
    from: usize,
    into: usize,
) {
    let moved = std::mem::take(&mut groups[from].units);
    for &u in &moved {
        owner[u] = into;
    }
    let counts = std::mem::take(&mut groups[from].counts);
    add_into(&mut groups[into].counts, &counts);
    groups[into].size += groups[from].size;
    groups[into].units.extend(moved);
    alive[from] = false;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: ClusterId,
    /// Base regions, ascending.
    pub members: Vec<RegionId>,
    pub centroid: Coord,
    pub entropy: f64,
    #[serde(skip)]
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevel {
    pub level: usize,
    pub clusters: Vec<Cluster>,
    /// Cluster count straight after BFS merging, before the undersize sweep.
    pub clusters_before_sweep: usize,
}

impl ClusterLevel {
    /// Base region to cluster lookup.
    pub fn labels(&self) -> BTreeMap<RegionId, ClusterId> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (*m, c.cluster_id)))
            .collect()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters
            .get(id as usize)
            .filter(|c| c.cluster_id == id)
    }
}

fn base_units(regions: &RegionSet, counts: &[Vec<f64>]) -> Vec<Unit> {
    let adj = regions.adjacency_indices();
    regions
        .regions()
        .iter()
        .zip(adj)
        .zip(counts)
        .map(|((r, nb), c)| Unit {
            members: vec![r.region_id],
            counts: c.clone(),
            neighbors: nb.into_iter().collect(),
        })
        .collect()
}

fn level_from_groups(
    level: usize,
    regions: &RegionSet,
    units: &[Unit],
    groups: &[Vec<usize>],
    clusters_before_sweep: usize,
) -> ClusterLevel {
    let clusters = groups
        .iter()
        .enumerate()
        .map(|(cid, g)| {
            let mut members: Vec<RegionId> = g
                .iter()
                .flat_map(|&u| units[u].members.iter().copied())
                .collect();
            members.sort_unstable();
            let mut counts = vec![0.0; units.first().map_or(0, |u| u.counts.len())];
            for &u in g {
                add_into(&mut counts, &units[u].counts);
            }
            Cluster {
                cluster_id: cid as ClusterId,
                centroid: area_centroid(regions, &members),
                entropy: entropy_of_counts(&counts),
                members,
                counts,
            }
        })
        .collect();
    ClusterLevel {
        level,
        clusters,
        clusters_before_sweep,
    }
}

/// Area-weighted mean of member centroids.
pub fn area_centroid(regions: &RegionSet, members: &[RegionId]) -> Coord {
    let mut w = 0.0;
    let mut c = [0.0; 2];
    for r in members.iter().filter_map(|m| regions.get(*m)) {
        let a = if r.area > 0.0 {
            r.area
        } else {
            f64::MIN_POSITIVE
        };
        w += a;
        c[0] += a * r.centroid[0];
        c[1] += a * r.centroid[1];
    }
    if w > 0.0 {
        [c[0] / w, c[1] / w]
    } else {
        [f64::NAN, f64::NAN]
    }
}

fn pre_sweep_count(units: &[Unit], alpha: f64, beta_max: usize) -> usize {
    // beta_min = 1 disables the sweep
    group_units(units, alpha, 1, beta_max).len()
}

/// One aggregation pass over base regions. `counts[i]` are the category
/// counts of `regions.regions()[i]`; seeds follow ascending region id.
pub fn bfs_aggregate(
    regions: &RegionSet,
    counts: &[Vec<f64>],
    alpha: f64,
    beta_min: usize,
    beta_max: usize,
) -> ClusterLevel {
    let units = base_units(regions, counts);
    let groups = group_units(&units, alpha, beta_min, beta_max);
    let before = pre_sweep_count(&units, alpha, beta_max);
    level_from_groups(1, regions, &units, &groups, before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub levels: Vec<ClusterLevel>,
    /// Density source used for entropies.
    pub weighting: Weighting,
    /// Set when access weighting was requested but the window had no visits.
    pub fell_back_to_poi_counts: bool,
}

impl Hierarchy {
    /// 1-based level lookup.
    pub fn level(&self, level: usize) -> Option<&ClusterLevel> {
        level.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn lift_units(prev: &ClusterLevel, units: &[Unit], groups: &[Vec<usize>]) -> Vec<Unit> {
    let mut owner = vec![0usize; units.len()];
    for (g, members) in groups.iter().enumerate() {
        for &u in members {
            owner[u] = g;
        }
    }
    groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let neighbors = members
                .iter()
                .flat_map(|&u| units[u].neighbors.iter())
                .map(|&nb| owner[nb])
                .filter(|&o| o != g)
                .collect();
            Unit {
                members: prev.clusters[g].members.clone(),
                counts: prev.clusters[g].counts.clone(),
                neighbors,
            }
        })
        .collect()
}

/// Stack aggregation levels; level `k + 1` merges whole level-`k` clusters.
pub fn build_hierarchy(
    regions: &RegionSet,
    counts: &[Vec<f64>],
    config: &AggregationConfig,
    weighting: Weighting,
) -> Hierarchy {
    let mut units = base_units(regions, counts);
    let mut levels: Vec<ClusterLevel> = Vec::with_capacity(config.levels);
    for level in 1..=config.levels {
        let alpha = config.alpha_at(level);
        let groups = group_units(&units, alpha, config.beta_min, config.beta_max);
        let before = pre_sweep_count(&units, alpha, config.beta_max);
        let built = level_from_groups(level, regions, &units, &groups, before);
        let next_units = lift_units(&built, &units, &groups);
        levels.push(built);
        units = next_units;
    }
    Hierarchy {
        levels,
        weighting,
        fell_back_to_poi_counts: false,
    }
}

/// Which density drives aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingPolicy {
    /// Access frequency when visits exist in the window, POI counts otherwise.
    Auto,
    PoiCount,
    AccessFrequency,
}

/// Per-region counts for a window, with the weighting actually used.
pub fn window_counts(
    regions: &RegionSet,
    profiles: &RegionProfiles,
    policy: WeightingPolicy,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> (Vec<Vec<f64>>, Weighting, bool) {
    let want = match policy {
        WeightingPolicy::PoiCount => Weighting::PoiCount,
        WeightingPolicy::Auto | WeightingPolicy::AccessFrequency => Weighting::AccessFrequency,
    };
    let (weighting, fell_back) = match want {
        Weighting::AccessFrequency if profiles.total_visits(window, day_type) == 0 => {
            (Weighting::PoiCount, true)
        }
        w => (w, false),
    };
    let counts = regions
        .ids()
        .map(|id| profiles.counts(id, weighting, window, day_type))
        .collect();
    (counts, weighting, fell_back)
}

/// Hierarchy over densities restricted to `window` and `day_type`.
pub fn recompute_for_window(
    regions: &RegionSet,
    profiles: &RegionProfiles,
    config: &AggregationConfig,
    policy: WeightingPolicy,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> Hierarchy {
    let (counts, weighting, fell_back) = window_counts(regions, profiles, policy, window, day_type);
    if fell_back {
        log::info!("window {window} has no visits, aggregating on POI counts");
    }
    let mut h = build_hierarchy(regions, &counts, config, weighting);
    h.fell_back_to_poi_counts = fell_back;
    h
}

/// Stable digest of an aggregation configuration.
pub fn config_hash(config: &AggregationConfig, policy: WeightingPolicy) -> String {
    let bytes = serde_json::to_vec(&(config, policy)).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HierarchyKey {
    pub window: TimeWindow,
    pub day_type: Option<DayType>,
    pub config_hash: String,
}

/// Memoized [`recompute_for_window`] results. Each key is computed once.
#[derive(Debug, Default)]
pub struct HierarchyCache {
    entries: Mutex<HashMap<HierarchyKey, Arc<std::sync::OnceLock<Arc<Hierarchy>>>>>,
}

impl HierarchyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &self,
        regions: &RegionSet,
        profiles: &RegionProfiles,
        config: &AggregationConfig,
        policy: WeightingPolicy,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> Arc<Hierarchy> {
        let key = HierarchyKey {
            window: *window,
            day_type,
            config_hash: config_hash(config, policy),
        };
        let cell = {
            let mut map = self.entries.lock().expect("cache lock");
            map.entry(key).or_default().clone()
        };
        cell.get_or_init(|| {
            Arc::new(recompute_for_window(
                regions, profiles, config, policy, window, day_type,
            ))
        })
        .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dominant accessed category per cluster of a level.
pub fn dominant_categories(
    level: &ClusterLevel,
    profiles: &RegionProfiles,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> Vec<Option<CategoryId>> {
    level
        .clusters
        .iter()
        .map(|c| {
            let mut counts = vec![0.0; profiles.categories()];
            for m in &c.members {
                add_into(&mut counts, &profiles.access_counts(*m, window, day_type));
            }
            crate::geo::DensityVector::from_counts(&counts, Weighting::AccessFrequency).argmax()
        })
        .collect()
}
