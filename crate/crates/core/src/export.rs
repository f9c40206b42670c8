//! JSON export documents. Field order is part of the format.

use serde::{Deserialize, Serialize};

use crate::aggregate::{dominant_categories, ClusterId, Hierarchy};
use crate::geo::{Coord, RegionId, RegionProfiles, Weighting};
use crate::hon::{Pattern, PatternMode};
use crate::ingest::{CategoryTaxonomy, DayType};
use crate::time::TimeWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExport {
    pub cluster_id: ClusterId,
    pub members: Vec<RegionId>,
    pub centroid: Coord,
    pub entropy: f64,
    pub dominant_category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelExport {
    pub level: usize,
    pub alpha: f64,
    pub clusters_before_sweep: usize,
    pub clusters: Vec<ClusterExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyExport {
    pub dataset_id: String,
    pub config_hash: String,
    pub window: String,
    pub day_type: Option<DayType>,
    pub weighting: Weighting,
    pub fell_back_to_poi_counts: bool,
    pub levels: Vec<LevelExport>,
}

#[allow(clippy::too_many_arguments)]
pub fn export_hierarchy(
    dataset_id: &str,
    config_hash: &str,
    alphas: impl Fn(usize) -> f64,
    hierarchy: &Hierarchy,
    profiles: &RegionProfiles,
    taxonomy: &CategoryTaxonomy,
    window: &TimeWindow,
    day_type: Option<DayType>,
) -> HierarchyExport {
    let levels = hierarchy
        .levels
        .iter()
        .map(|lvl| {
            let dominant = dominant_categories(lvl, profiles, window, day_type);
            LevelExport {
                level: lvl.level,
                alpha: alphas(lvl.level),
                clusters_before_sweep: lvl.clusters_before_sweep,
                clusters: lvl
                    .clusters
                    .iter()
                    .zip(dominant)
                    .map(|(c, d)| ClusterExport {
                        cluster_id: c.cluster_id,
                        members: c.members.clone(),
                        centroid: c.centroid,
                        entropy: c.entropy,
                        dominant_category: d.map(|d| taxonomy.name(d).to_string()),
                    })
                    .collect(),
            }
        })
        .collect();
    HierarchyExport {
        dataset_id: dataset_id.to_string(),
        config_hash: config_hash.to_string(),
        window: window.to_string(),
        day_type,
        weighting: hierarchy.weighting,
        fell_back_to_poi_counts: hierarchy.fell_back_to_poi_counts,
        levels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub path: Vec<ClusterId>,
    pub flow: u64,
    pub window: String,
    pub entropy_rate: f64,
    pub mode: PatternMode,
    pub order: usize,
    pub probability: f64,
    pub active_bins: Option<(u16, u16)>,
    pub edge_histograms: Vec<Vec<u64>>,
}

impl From<&Pattern> for PatternRecord {
    fn from(p: &Pattern) -> Self {
        Self {
            path: p.path.clone(),
            flow: p.flow,
            window: p.window.to_string(),
            entropy_rate: p.entropy_rate,
            mode: p.mode,
            order: p.order,
            probability: p.probability,
            active_bins: p.active_bins(),
            edge_histograms: p.edge_histograms.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternExport {
    pub dataset_id: String,
    pub level: usize,
    pub window: String,
    pub day_type: Option<DayType>,
    pub patterns: Vec<PatternRecord>,
}

pub fn export_patterns(
    dataset_id: &str,
    level: usize,
    window: &TimeWindow,
    day_type: Option<DayType>,
    patterns: &[Pattern],
) -> PatternExport {
    PatternExport {
        dataset_id: dataset_id.to_string(),
        level,
        window: window.to_string(),
        day_type,
        patterns: patterns.iter().map(PatternRecord::from).collect(),
    }
}
