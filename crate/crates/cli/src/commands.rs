//! The pipeline stages. Every stage writes into the configuration's
//! run-stamped directory and records itself in the manifest; later stages
//! read earlier stages' files from there unless the configuration points
//! elsewhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use freezecast::synthetic::{generate, scenario_paperlike, SyntheticConfig};
use freezecast::verification::{
    chi_square_uniformity, event_time_rank_records, rank_histogram, rank_summaries_by_location,
    temperature_rank_records, write_rank_summaries,
};
use freezecast::{
    pipeline, postprocess_store, read_rank_records, write_rank_records, CurveModel, CurveTable,
    EnsembleStore, ObservationSet, RankRecord, ScoreReport, Skill,
};
use log::{info, warn};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::{plot, CliError};

pub const OBSERVATIONS: &str = "observations.csv";
pub const ENSEMBLE: &str = "ensemble.csv";
pub const LOCATIONS: &str = "locations.csv";
pub const ENSEMBLE_PP: &str = "ensemble_pp.csv";
pub const PP_SUMMARY: &str = "postprocess_summary.csv";
pub const CURVES: &str = "curves.csv";
pub const SCORES: &str = "scores.csv";
pub const BRIER: &str = "brier.csv";
pub const YEAR_SCORES: &str = "year_scores.csv";
pub const RANK_SUMMARY_RAW: &str = "rank_summary_raw.csv";
pub const RANK_SUMMARY_PP: &str = "rank_summary_pp.csv";
pub const RANKS_RAW: &str = "ranks_raw.csv";
pub const RANKS_PP: &str = "ranks_pp.csv";
pub const RANK_TESTS: &str = "rank_tests.csv";
pub const SKILL_VS_DAYS: &str = "skill_vs_mean_days.csv";
pub const CURVE_PANELS: &str = "curve_panels.csv";
pub const RANK_HISTOGRAMS: &str = "rank_histograms.csv";
pub const BRIER_CURVES: &str = "brier_curves.csv";
pub const SKILL_SVG: &str = "skill_vs_mean_days.svg";
pub const BRIER_SVG: &str = "brier_curves.svg";

/// Scored forecast models, climatology included so its zero skill is visible.
const SCORED: [CurveModel; 3] = [
    CurveModel::Climatology,
    CurveModel::Raw,
    CurveModel::Postprocessed,
];

struct Stage<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<String>,
    extra: BTreeMap<String, Value>,
}

impl<'a> Stage<'a> {
    fn begin(cfg: &'a RunConfig) -> Result<Self, CliError> {
        let dir = cfg.run_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Stage {
            cfg,
            dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: BTreeMap::new(),
        })
    }

    fn input(&mut self, label: &str, configured: Option<&PathBuf>, default: &str) -> PathBuf {
        let path = configured
            .cloned()
            .unwrap_or_else(|| self.dir.join(default));
        self.inputs.push((label.to_string(), path.clone()));
        path
    }

    /// Renders into memory first so a failed render leaves no partial file.
    fn write(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.dir.join(name);
        std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self, name: &str) -> Result<PathBuf, CliError> {
        let mut m = Manifest::open(&self.dir, self.cfg)?;
        m.record(name, &self.inputs, &self.outputs, self.extra)?;
        m.save()?;
        info!(
            "{name}: wrote {} file(s) to {}",
            self.outputs.len(),
            self.dir.display()
        );
        Ok(self.dir)
    }
}

fn load_obs(cfg: &RunConfig, path: &Path) -> Result<ObservationSet, CliError> {
    let (obs, report) = ObservationSet::load(path, cfg.window)?;
    if report.rejected > 0 {
        warn!(
            "{}: {} of {} rows outside the forecast window",
            path.display(),
            report.rejected,
            report.rows
        );
    }
    Ok(obs)
}

fn load_store(cfg: &RunConfig, path: &Path) -> Result<EnsembleStore, CliError> {
    let (store, report) = EnsembleStore::load(path, cfg.window)?;
    if report.rejected > 0 {
        warn!(
            "{}: {} of {} rows rejected",
            path.display(),
            report.rejected,
            report.rows
        );
    }
    Ok(store)
}

/// The synthetic scenario named in the configuration, with the window and
/// size overrides applied.
pub fn scenario(cfg: &RunConfig) -> Result<SyntheticConfig, CliError> {
    let mut sc = match cfg.scenario.as_str() {
        "paperlike" => scenario_paperlike(cfg.seed),
        other => return Err(CliError::Config(format!("unknown scenario {other:?}"))),
    };
    sc.window = cfg.window;
    if let Some(n) = cfg.years {
        sc.n_years = n;
    }
    if let Some(n) = cfg.locations {
        sc.locations.truncate(n);
    }
    Ok(sc)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let sc = scenario(cfg)?;
    let data = generate(&sc)?;
    let mut stage = Stage::begin(cfg)?;
    stage.write(OBSERVATIONS, |w| Ok(data.obs.write_csv(w)?))?;
    stage.write(ENSEMBLE, |w| Ok(data.store.write_csv(w)?))?;
    stage.write(LOCATIONS, |w| Ok(data.locations.write_csv(w)?))?;
    stage.extra.insert("scenario".into(), json!(cfg.scenario));
    stage.finish("synth")
}

pub fn cmd_postprocess(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut stage = Stage::begin(cfg)?;
    let obs = load_obs(cfg, &stage.input("obs", cfg.obs.as_ref(), OBSERVATIONS))?;
    let raw = load_store(
        cfg,
        &stage.input("ensemble", cfg.ensemble.as_ref(), ENSEMBLE),
    )?;
    let (pp, skipped) = postprocess_store(&raw, &obs, &cfg.postprocess)?;
    for loc in &skipped {
        warn!("{loc}: no observation climatology, members left unprocessed");
    }
    let raw_counts = raw.availability();
    let pp_counts = pp.availability();
    for ((system, year), n) in &raw_counts {
        let done = pp_counts.get(&(
            format!("{system}{}", freezecast::postprocess::PP_SUFFIX),
            *year,
        ));
        info!(
            "{system} {year}: {n} raw, {} post-processed",
            done.copied().unwrap_or(0)
        );
    }
    stage.write(ENSEMBLE_PP, |w| Ok(pp.write_csv(w)?))?;
    stage.write(PP_SUMMARY, |w| write_pp_summary(&raw_counts, &pp_counts, w))?;
    stage
        .extra
        .insert("skipped_locations".into(), json!(skipped));
    stage.finish("postprocess")
}

/// `system,year,raw_members,pp_members`, keyed by the raw system name.
fn write_pp_summary(
    raw: &BTreeMap<(String, i32), usize>,
    pp: &BTreeMap<(String, i32), usize>,
    out: &mut Vec<u8>,
) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["system", "year", "raw_members", "pp_members"])?;
    for ((system, year), n) in raw {
        let key = (
            format!("{system}{}", freezecast::postprocess::PP_SUFFIX),
            *year,
        );
        let done = pp.get(&key).copied().unwrap_or(0);
        w.write_record([
            system.as_str(),
            &year.to_string(),
            &n.to_string(),
            &done.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn cmd_forecast(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut stage = Stage::begin(cfg)?;
    let obs = load_obs(cfg, &stage.input("obs", cfg.obs.as_ref(), OBSERVATIONS))?;
    let raw = load_store(
        cfg,
        &stage.input("ensemble", cfg.ensemble.as_ref(), ENSEMBLE),
    )?;
    let pp = load_store(cfg, &stage.input("ensemble_pp", None, ENSEMBLE_PP))?;
    let curves = pipeline::build_curves(&obs, &raw, &pp, cfg.threshold)?;
    stage.write(CURVES, |w| Ok(curves.write_csv(w)?))?;
    stage.finish("forecast")
}

/// Checks the score bounds that must hold for any valid curve table.
pub fn check_report(report: &ScoreReport) -> Result<(), CliError> {
    let bad = |what: String| Err(CliError::Invariant(what));
    for s in &report.locations {
        let who = format!("{} {}", s.location_id, s.model);
        if let Some(b) = s.brier.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("{who}: BS(t) = {b} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&s.ibs) {
            return bad(format!("{who}: IBS = {} outside [0, 1]", s.ibs));
        }
        if let Skill::Value(v) = s.ibss {
            if v.is_nan() || v > 1.0 {
                return bad(format!("{who}: IBSS = {v} above 1"));
            }
        }
    }
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut stage = Stage::begin(cfg)?;
    let curves = CurveTable::load(&stage.input("curves", None, CURVES))?;
    let obs = load_obs(cfg, &stage.input("obs", cfg.obs.as_ref(), OBSERVATIONS))?;
    let raw = load_store(
        cfg,
        &stage.input("ensemble", cfg.ensemble.as_ref(), ENSEMBLE),
    )?;
    let pp = load_store(cfg, &stage.input("ensemble_pp", None, ENSEMBLE_PP))?;

    let report = ScoreReport::from_curves(&curves, &SCORED)?;
    check_report(&report)?;
    stage.write(SCORES, |w| Ok(report.write_scores(w)?))?;
    stage.write(BRIER, |w| Ok(report.write_brier(w)?))?;
    stage.write(YEAR_SCORES, |w| Ok(report.write_year_scores(w)?))?;

    let mut tests = Vec::new();
    for (label, store, records_file, summary_file) in [
        ("R", &raw, RANKS_RAW, RANK_SUMMARY_RAW),
        ("P", &pp, RANKS_PP, RANK_SUMMARY_PP),
    ] {
        let mut records = temperature_rank_records(&obs, store, &cfg.lead_groups, cfg.seed);
        let events = event_time_rank_records(&obs, store, cfg.threshold, cfg.seed)?;
        let counts = rank_histogram(&events, cfg.bins);
        let (stat, p) = chi_square_uniformity(&counts);
        tests.push((label, events.len(), stat, p));
        records.extend(events);
        if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.r)) {
            return Err(CliError::Invariant(format!("rank {} outside [0, 1]", r.r)));
        }
        let summaries = rank_summaries_by_location(&records);
        stage.write(records_file, |w| Ok(write_rank_records(&records, w)?))?;
        stage.write(summary_file, |w| Ok(write_rank_summaries(&summaries, w)?))?;
    }
    stage.write(RANK_TESTS, |out| {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["model", "lead_group", "count", "chi2", "p_value"])?;
        for (label, n, stat, p) in &tests {
            w.write_record([
                label,
                "event",
                &n.to_string(),
                &stat.to_string(),
                &p.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    })?;
    stage
        .extra
        .insert("seeds".into(), json!({ "rank_jitter": cfg.seed }));
    stage.finish("verify")
}

pub fn cmd_plotdata(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut stage = Stage::begin(cfg)?;
    let curves = CurveTable::load(&stage.input("curves", None, CURVES))?;
    let mut ranks: Vec<(&str, Vec<RankRecord>)> = Vec::new();
    for (label, file) in [("R", RANKS_RAW), ("P", RANKS_PP)] {
        let path = stage.input(&format!("ranks_{label}"), None, file);
        let f = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        ranks.push((label, read_rank_records(f, &path.display().to_string())?));
    }
    let report = ScoreReport::from_curves(&curves, &SCORED)?;
    check_report(&report)?;
    let sets: Vec<(&str, &[RankRecord])> = ranks.iter().map(|(l, r)| (*l, r.as_slice())).collect();
    write_plot_tables(&mut stage, &report, &curves, &sets)?;
    if cfg.svg {
        let horizon = cfg.window.horizon();
        stage.write(SKILL_SVG, |w| {
            w.extend_from_slice(plot::skill_svg(&report, horizon).as_bytes());
            Ok(())
        })?;
        stage.write(BRIER_SVG, |w| {
            w.extend_from_slice(plot::brier_svg(&report).as_bytes());
            Ok(())
        })?;
    }
    stage.finish("plotdata")
}

fn write_plot_tables(
    stage: &mut Stage<'_>,
    report: &ScoreReport,
    curves: &CurveTable,
    ranks: &[(&str, &[RankRecord])],
) -> Result<(), CliError> {
    let bins = stage.cfg.bins;
    stage.write(SKILL_VS_DAYS, |w| plot::write_skill_vs_mean_days(report, w))?;
    stage.write(CURVE_PANELS, |w| plot::write_curve_panels(curves, w))?;
    stage.write(RANK_HISTOGRAMS, |w| {
        plot::write_rank_histograms(ranks, bins, w)
    })?;
    stage.write(BRIER_CURVES, |w| plot::write_brier_curves(report, w))?;
    Ok(())
}

/// Every stage in order. Synthetic data is generated only when no
/// observation file is configured.
pub fn cmd_run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    if cfg.obs.is_none() && cfg.ensemble.is_none() {
        cmd_synth(cfg)?;
    } else if cfg.obs.is_none() || cfg.ensemble.is_none() {
        return Err(CliError::Config(
            "obs and ensemble must be given together".into(),
        ));
    }
    cmd_postprocess(cfg)?;
    cmd_forecast(cfg)?;
    cmd_verify(cfg)?;
    cmd_plotdata(cfg)
}
