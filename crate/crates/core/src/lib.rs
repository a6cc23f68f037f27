//! Probabilistic time-to-first-hard-freeze forecasts from multi-model
//! ensemble temperature hindcasts.
//!
//! The pipeline runs: ensemble members are post-processed member by member
//! against leave-one-year-out climatologies ([`postprocess`]); the first day
//! below the freeze threshold is extracted from every member and turned into
//! a Kaplan-Meier survival curve ([`survival`]); curves are verified against
//! observations with standardized ranks, Brier scores and integrated Brier
//! skill scores ([`verification`]). [`synthetic`] provides a controllable
//! stand-in for real observation and hindcast archives.

pub mod data;
pub mod error;
pub mod grid;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod survival;
pub mod synthetic;
pub mod verification;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{
    pooled_members, DailySeries, EnsembleMemberSeries, EnsembleStore, ForecastWindow, LoadReport,
    MemberKey, ObservationSet, SubdailySeries,
};
pub use error::{Error, Result};
pub use grid::{haversine_km, match_grids, snap_to_whole_degree, Location, LocationSet};
pub use postprocess::{
    forecast_climatology, obs_climatology, postprocess_ensemble, postprocess_store,
    restandardize_member, standardize_member, ClimSource, ClimatologyStats, PostprocessConfig,
    PostprocessedMember,
};
pub use survival::{
    climatology_curve, forecast_curve, km_estimator, observed_curve, time_to_event, CurveModel,
    CurveTable, EventObservation, SurvivalCurve, FREEZE_THRESHOLD,
};
pub use verification::{
    brier_t, crps_event_day, integrated_brier, rank_summary, read_rank_records, skill_score,
    standardized_rank, write_rank_records, LeadGroup, RankRecord, RankSummary, ScoreReport, Skill,
};
