//! Ingested dataset bundle and the end-to-end pipeline over it.

use std::io::{BufRead, Read};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{recompute_for_window, ClusterLevel, Hierarchy, HierarchyCache};
use crate::config::RunConfig;
use crate::geo::{
    assign_visits, derive_adjacency, load_regions, GeoError, PoiCatalog, RegionProfiles, RegionSet,
    RejectedRegion,
};
use crate::hon::{assemble_global_patterns, grow_rules, Corpus, Pattern};
use crate::ingest::{
    parse_checkins, stay_sequences, CategoryTaxonomy, DayType, HolidayCalendar, IngestError,
    RejectReason, StaySequence, StraightLineProvider,
};
use crate::time::TimeWindow;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("dataset file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("hierarchy level {level} does not exist (depth {depth})")]
    UnknownLevel { level: usize, depth: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: usize,
    pub accepted_rows: usize,
    pub rejected_rows: std::collections::BTreeMap<RejectReason, usize>,
    pub warnings: Vec<String>,
    pub regions: usize,
    pub rejected_regions: Vec<RejectedRegion>,
    pub pois: usize,
    pub trajectories: usize,
    pub visits: usize,
    pub unassigned_visits: usize,
    pub fallback_travel_visits: usize,
}

/// Everything later stages need, persisted as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub taxonomy: CategoryTaxonomy,
    pub calendar: HolidayCalendar,
    pub regions: RegionSet,
    pub pois: PoiCatalog,
    pub stays: Vec<StaySequence>,
    pub report: IngestReport,
}

pub struct IngestInputs<C, R, H> {
    pub checkins: C,
    pub regions: R,
    pub calendar: Option<H>,
    pub taxonomy: CategoryTaxonomy,
}

/// Parse, segment, estimate stays, and project onto regions.
pub fn ingest_dataset<C: Read, R: Read, H: BufRead>(
    dataset_id: &str,
    inputs: IngestInputs<C, R, H>,
    config: &RunConfig,
) -> Result<Dataset, DatasetError> {
    let (records, parse) = parse_checkins(
        inputs.checkins,
        &inputs.taxonomy,
        config.ingest.max_reject_ratio,
    )?;
    let calendar = match inputs.calendar {
        Some(h) => HolidayCalendar::parse(h)?,
        None => HolidayCalendar::default(),
    };
    let (mut regions, rejected_regions) = load_regions(inputs.regions)?;
    derive_adjacency(&mut regions, config.geo.adjacency_epsilon_m);

    let provider = StraightLineProvider {
        speed_kmh: config.ingest.speed_kmh,
    };
    let mut stays = stay_sequences(&records, &config.ingest.stay_config(), &provider, &calendar);
    let pois = PoiCatalog::from_records(&records);
    let unassigned = assign_visits(&regions.index(), &mut stays);

    let report = IngestReport {
        total_rows: parse.total_rows,
        accepted_rows: parse.accepted,
        rejected_rows: parse.reject_counts(),
        warnings: parse.warnings,
        regions: regions.len(),
        rejected_regions,
        pois: pois.len(),
        trajectories: stays.len(),
        visits: stays.iter().map(|s| s.visits.len()).sum(),
        unassigned_visits: unassigned,
        fallback_travel_visits: stays
            .iter()
            .flat_map(|s| &s.visits)
            .filter(|v| v.fallback_travel)
            .count(),
    };
    Ok(Dataset {
        dataset_id: dataset_id.to_string(),
        taxonomy: inputs.taxonomy,
        calendar,
        regions,
        pois,
        stays,
        report,
    })
}

impl Dataset {
    pub fn from_json<R: Read>(reader: R) -> Result<Self, DatasetError> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>, DatasetError> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn profiles(&self) -> RegionProfiles {
        RegionProfiles::build(
            &self.regions.index(),
            &self.pois,
            &self.stays,
            self.taxonomy.len(),
        )
    }
}

/// A dataset with derived per-region profiles, ready for queries.
pub struct Workspace {
    pub dataset: Dataset,
    pub profiles: RegionProfiles,
    pub config: RunConfig,
    pub hierarchies: HierarchyCache,
}

impl Workspace {
    pub fn new(dataset: Dataset, config: RunConfig) -> Self {
        let profiles = dataset.profiles();
        Self {
            dataset,
            profiles,
            config,
            hierarchies: HierarchyCache::new(),
        }
    }

    pub fn hierarchy(&self, window: &TimeWindow, day_type: Option<DayType>) -> Arc<Hierarchy> {
        self.hierarchies.get_or_compute(
            &self.dataset.regions,
            &self.profiles,
            &self.config.aggregate,
            self.config.geo.weighting,
            window,
            day_type,
        )
    }

    /// Uncached hierarchy, for parameter sweeps.
    pub fn hierarchy_with(
        &self,
        config: &crate::aggregate::AggregationConfig,
        window: &TimeWindow,
        day_type: Option<DayType>,
    ) -> Hierarchy {
        recompute_for_window(
            &self.dataset.regions,
            &self.profiles,
            config,
            self.config.geo.weighting,
            window,
            day_type,
        )
    }

    pub fn level<'h>(
        &self,
        hierarchy: &'h Hierarchy,
        level: usize,
    ) -> Result<&'h ClusterLevel, DatasetError> {
        hierarchy.level(level).ok_or(DatasetError::UnknownLevel {
            level,
            depth: hierarchy.depth(),
        })
    }

    pub fn corpus(&self, level: &ClusterLevel, day_type: Option<DayType>) -> Corpus {
        Corpus::from_stays(
            &self.dataset.stays,
            &level.labels(),
            day_type,
            self.config.hon.bin_width_minutes,
        )
    }

    /// Global patterns at `level` for the clusters aggregated over `window`.
    pub fn global_patterns(
        &self,
        level: usize,
        window: &TimeWindow,
        day_type: Option<DayType>,
        top_n: usize,
    ) -> Result<Vec<Pattern>, DatasetError> {
        let h = self.hierarchy(window, day_type);
        let lvl = self.level(&h, level)?;
        let corpus = self.corpus(lvl, day_type);
        let rules = grow_rules(
            &corpus,
            window,
            self.config.hon.min_support,
            self.config.hon.max_order,
        );
        Ok(assemble_global_patterns(
            &corpus,
            &rules,
            &self.config.hon,
            top_n,
        ))
    }
}
