//! Entropy-driven urban region hierarchies and temporally constrained
//! higher-order movement patterns.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`]: parse check-ins, split them into per-day sub-trajectories
//!    and estimate how long each visit lasted.
//! 2. [`geo`]: project POIs and visits into base regions and measure each
//!    region's category mix by its Shannon entropy.
//! 3. [`aggregate`]: merge neighboring regions whose pooled mix stays
//!    low-entropy into a nested multi-level hierarchy.
//! 4. [`hon`]: count time-binned moves between clusters, grow variable-order
//!    rules with a divergence test, and assemble them into flow patterns.

pub mod aggregate;
pub mod config;
pub mod dataset;
pub mod export;
pub mod fixture;
pub mod geo;
pub mod hon;
pub mod ingest;
pub mod time;

pub use aggregate::{
    bfs_aggregate, build_hierarchy, merge_condition, recompute_for_window, AggregationConfig,
    Cluster, ClusterId, ClusterLevel, Hierarchy, HierarchyCache, WeightingPolicy,
};
pub use config::RunConfig;
pub use dataset::{ingest_dataset, Dataset, DatasetError, IngestInputs, IngestReport, Workspace};
pub use geo::{
    derive_adjacency, entropy, load_regions, project_points, DensityVector, PoiCatalog, Region,
    RegionId, RegionProfiles, RegionSet, SpatialIndex, Weighting,
};
pub use hon::{
    assemble_global_patterns, build_transition_graph, conditional_distribution, first_order_prob,
    flow_by_order_stats, grow_rules, kld, local_patterns, Corpus, Distribution, HonConfig, HonRule,
    Pattern, PatternMode, RuleSet, TransitionGraph,
};
pub use ingest::{
    build_trajectories, classify_day, estimate_stays, parse_checkins, CategoryId, CategoryTaxonomy,
    DayType, HolidayCalendar, MovementRecord, StaySequence, StayVisit, Trajectory,
    TravelTimeProvider,
};
pub use time::TimeWindow;
