//! Response payloads, computed from a snapshot without any HTTP concerns.

use std::collections::{BTreeMap, BTreeSet};

use hoflow_core::aggregate::{area_centroid, dominant_categories, ClusterLevel};
use hoflow_core::export::PatternRecord;
use hoflow_core::geo::{Coord, DensityVector, Weighting};
use hoflow_core::hon::{local_patterns, Pattern};
use hoflow_core::ingest::{CategoryId, DayType};
use hoflow_core::time::{bin_of, TimeWindow};
use hoflow_core::{ClusterId, Workspace};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;

fn level_of(h: &hoflow_core::Hierarchy, level: usize) -> Result<&ClusterLevel, ApiError> {
    h.level(level).ok_or_else(|| {
        ApiError::not_found(format!(
            "level {level} does not exist; hierarchy has {} levels",
            h.depth()
        ))
    })
}

fn check_clusters(level: &ClusterLevel, ids: &BTreeSet<ClusterId>) -> Result<(), ApiError> {
    match ids.iter().find(|id| level.cluster(**id).is_none()) {
        Some(id) => Err(ApiError::not_found(format!(
            "cluster {id} does not exist at level {}",
            level.level
        ))),
        None => Ok(()),
    }
}

fn category_name(ws: &Workspace, c: Option<CategoryId>) -> Option<String> {
    c.map(|c| ws.dataset.taxonomy.name(c).to_string())
}

/// Clusters of one level as a GeoJSON FeatureCollection.
pub fn regions(
    ws: &Workspace,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> Result<Value, ApiError> {
    let h = ws.hierarchy(window, day_type);
    let lvl = level_of(&h, level)?;
    let dominant = dominant_categories(lvl, &ws.profiles, window, day_type);
    let features: Vec<Value> = lvl
        .clusters
        .iter()
        .zip(dominant)
        .map(|(c, d)| {
            let polygons: Vec<Vec<&Vec<Coord>>> = c
                .members
                .iter()
                .filter_map(|m| ws.dataset.regions.get(*m))
                .flat_map(|r| r.polygons.iter().map(|p| p.rings().collect()))
                .collect();
            json!({
                "type": "Feature",
                "id": c.cluster_id,
                "geometry": {"type": "MultiPolygon", "coordinates": polygons},
                "properties": {
                    "cluster_id": c.cluster_id,
                    "level": lvl.level,
                    "members": c.members,
                    "entropy": c.entropy,
                    "dominant_category": category_name(ws, d),
                    "centroid": c.centroid,
                },
            })
        })
        .collect();
    Ok(json!({
        "type": "FeatureCollection",
        "level": lvl.level,
        "window": window.to_string(),
        "day_type": day_type,
        "weighting": h.weighting,
        "fell_back_to_poi_counts": h.fell_back_to_poi_counts,
        "features": features,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBin {
    pub count: u64,
    pub dominant_category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub day_type: Option<DayType>,
    pub bin_width_minutes: u16,
    pub level: usize,
    pub window: String,
    pub selection: Vec<ClusterId>,
    pub total_transitions: u64,
    /// Moves per departure bin.
    pub active: Vec<u64>,
    /// Moves into the selection per departure bin; empty without selection.
    pub inflow: Vec<FlowBin>,
    /// Moves out of the selection per departure bin; empty without selection.
    pub outflow: Vec<FlowBin>,
}

/// Daily movement histogram, optionally split into flow entering and
/// leaving a cluster selection. Selection ids refer to the clusters of
/// `level` aggregated over `window`.
pub fn timeline(
    ws: &Workspace,
    selection: &BTreeSet<ClusterId>,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> Result<Timeline, ApiError> {
    let width = ws.config.hon.bin_width_minutes;
    let bins = (1440 / width) as usize;
    let cats = ws.dataset.taxonomy.len();
    let mut active = vec![0u64; bins];
    let mut inflow = vec![(0u64, vec![0.0; cats]); bins];
    let mut outflow = vec![(0u64, vec![0.0; cats]); bins];
    let labels = if selection.is_empty() {
        BTreeMap::new()
    } else {
        let h = ws.hierarchy(window, day_type);
        let lvl = level_of(&h, level)?;
        check_clusters(lvl, selection)?;
        lvl.labels()
    };
    let inside = |r: Option<u32>| {
        r.and_then(|r| labels.get(&r))
            .is_some_and(|c| selection.contains(c))
    };
    let mut total = 0;
    for s in &ws.dataset.stays {
        if day_type.is_some_and(|d| d != s.day_type) {
            continue;
        }
        for pair in s.visits.windows(2) {
            let (from, to) = (&pair[0], &pair[1]);
            let bin = bin_of(&from.departure(), width) as usize % bins;
            active[bin] += 1;
            total += 1;
            if selection.is_empty() {
                continue;
            }
            let (a, b) = (inside(from.region_id), inside(to.region_id));
            let slot = match (a, b) {
                (false, true) => &mut inflow[bin],
                (true, false) => &mut outflow[bin],
                _ => continue,
            };
            slot.0 += 1;
            slot.1[to.category.index()] += 1.0;
        }
    }
    let finish = |v: Vec<(u64, Vec<f64>)>| -> Vec<FlowBin> {
        if selection.is_empty() {
            return Vec::new();
        }
        v.into_iter()
            .map(|(count, c)| FlowBin {
                count,
                dominant_category: category_name(
                    ws,
                    DensityVector::from_counts(&c, Weighting::AccessFrequency).argmax(),
                ),
            })
            .collect()
    };
    Ok(Timeline {
        day_type,
        bin_width_minutes: width,
        level,
        window: window.to_string(),
        selection: selection.iter().copied().collect(),
        total_transitions: total,
        active,
        inflow: finish(inflow),
        outflow: finish(outflow),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    #[serde(flatten)]
    pub pattern: PatternRecord,
    /// Centroid of every cluster on the path, for drawing.
    pub centroids: Vec<Coord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternList {
    pub level: usize,
    pub window: String,
    pub day_type: Option<DayType>,
    pub selection: Vec<ClusterId>,
    pub patterns: Vec<PatternRow>,
}

fn rows(patterns: &[Pattern], centroid: impl Fn(ClusterId) -> Coord) -> Vec<PatternRow> {
    patterns
        .iter()
        .map(|p| PatternRow {
            pattern: PatternRecord::from(p),
            centroids: p.path.iter().map(|c| centroid(*c)).collect(),
        })
        .collect()
}

fn cluster_centroid(level: &ClusterLevel, id: ClusterId) -> Coord {
    level
        .cluster(id)
        .map(|c| c.centroid)
        .unwrap_or([f64::NAN, f64::NAN])
}

/// City-wide patterns, highest flow first.
pub fn global_patterns(
    ws: &Workspace,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
    top_n: usize,
) -> Result<PatternList, ApiError> {
    let h = ws.hierarchy(window, day_type);
    let lvl = level_of(&h, level)?;
    let patterns = ws
        .global_patterns(level, window, day_type, top_n)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(PatternList {
        level,
        window: window.to_string(),
        day_type,
        selection: Vec::new(),
        patterns: rows(&patterns, |c| cluster_centroid(lvl, c)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalRequest {
    pub cluster_ids: Vec<ClusterId>,
    #[serde(default)]
    pub window: Option<String>,
    #[serde(default)]
    pub min_flow: Option<u64>,
    #[serde(default)]
    pub level: Option<usize>,
    #[serde(default)]
    pub day_type: Option<String>,
}

/// Patterns passing through a selection; several selected clusters act as
/// one node carrying the smallest selected id.
pub fn local(
    ws: &Workspace,
    selection: &BTreeSet<ClusterId>,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
    min_flow: u64,
) -> Result<PatternList, ApiError> {
    let Some(&merged) = selection.iter().next() else {
        return Err(ApiError::bad_request("cluster_ids must not be empty"));
    };
    let h = ws.hierarchy(window, day_type);
    let lvl = level_of(&h, level)?;
    check_clusters(lvl, selection)?;
    let corpus = ws.corpus(lvl, day_type);
    let patterns = local_patterns(&corpus, selection, window, min_flow, &ws.config.hon);
    let members: Vec<u32> = selection
        .iter()
        .filter_map(|id| lvl.cluster(*id))
        .flat_map(|c| c.members.iter().copied())
        .collect();
    let merged_centroid = area_centroid(&ws.dataset.regions, &members);
    Ok(PatternList {
        level,
        window: window.to_string(),
        day_type,
        selection: selection.iter().copied().collect(),
        patterns: rows(&patterns, |c| {
            if c == merged {
                merged_centroid
            } else {
                cluster_centroid(lvl, c)
            }
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub cluster_id: ClusterId,
    pub level: usize,
    pub window: String,
    pub day_type: Option<DayType>,
    pub categories: Vec<String>,
    pub poi_total: f64,
    pub access_total: f64,
    /// POI counts per category, normalized; all zero when the cluster has no POIs.
    pub poi_share: Vec<f64>,
    /// Visits per category in the window, normalized; all zero without visits.
    pub access_share: Vec<f64>,
    /// Set when no visit falls in the window.
    pub zero_support: bool,
    /// Category names by descending POI share, ties in taxonomy order.
    pub poi_order: Vec<String>,
    /// Category names by descending access share, ties in taxonomy order.
    pub access_order: Vec<String>,
}

fn normalize(counts: &[f64]) -> (f64, Vec<f64>) {
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        (total, counts.iter().map(|c| c / total).collect())
    } else {
        (0.0, vec![0.0; counts.len()])
    }
}

fn order_by(share: &[f64], names: &[String]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..share.len()).collect();
    idx.sort_by(|&a, &b| share[b].total_cmp(&share[a]).then(a.cmp(&b)));
    idx.into_iter().map(|i| names[i].clone()).collect()
}

/// POI and access composition of one cluster.
pub fn region_stats(
    ws: &Workspace,
    cluster_id: ClusterId,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> Result<RegionStats, ApiError> {
    let h = ws.hierarchy(window, day_type);
    let lvl = level_of(&h, level)?;
    check_clusters(lvl, &BTreeSet::from([cluster_id]))?;
    let cluster = lvl.cluster(cluster_id).expect("checked");
    let cats = ws.dataset.taxonomy.len();
    let mut pois = vec![0.0; cats];
    let mut access = vec![0.0; cats];
    for m in &cluster.members {
        for (a, b) in pois.iter_mut().zip(ws.profiles.poi_counts(*m)) {
            *a += b;
        }
        for (a, b) in access
            .iter_mut()
            .zip(ws.profiles.access_counts(*m, window, day_type))
        {
            *a += b;
        }
    }
    let (poi_total, poi_share) = normalize(&pois);
    let (access_total, access_share) = normalize(&access);
    let names = ws.dataset.taxonomy.names();
    Ok(RegionStats {
        cluster_id,
        level,
        window: window.to_string(),
        day_type,
        categories: names.to_vec(),
        poi_total,
        access_total,
        poi_order: order_by(&poi_share, names),
        access_order: order_by(&access_share, names),
        poi_share,
        access_share,
        zero_support: access_total == 0.0,
    })
}
