//! Calibration diagnostics (standardized ranks and their summaries) and
//! proper-score evaluation of survival-curve forecasts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{
    check_header, csv_reader, csv_writer, field, pooled_members, schema, EnsembleStore,
    ObservationSet,
};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::survival::{time_to_event, CurveModel, CurveTable, EventObservation, SurvivalCurve};

/// Inclusive range of lead days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeadGroup {
    pub first: usize,
    pub last: usize,
}

impl LeadGroup {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::Config(format!("invalid lead group {first}-{last}")));
        }
        Ok(LeadGroup { first, last })
    }

    pub fn days(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parses a comma-separated list such as `1-14,15-28,75-90`.
    pub fn parse_list(text: &str) -> Result<Vec<LeadGroup>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for LeadGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl FromStr for LeadGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad lead group {s:?}"));
        match s.split_once('-') {
            Some((a, b)) => LeadGroup::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let d = s.trim().parse().map_err(|_| bad())?;
                LeadGroup::new(d, d)
            }
        }
    }
}

/// Label written for event-time rank records.
pub const EVENT_GROUP_LABEL: &str = "event";

#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    pub location_id: String,
    pub year: i32,
    /// `None` for event-time ranks.
    pub lead_group: Option<LeadGroup>,
    /// Standardized rank in [0, 1].
    pub r: f64,
}

impl RankRecord {
    pub fn group_label(&self) -> String {
        self.lead_group
            .map(|g| g.to_string())
            .unwrap_or_else(|| EVENT_GROUP_LABEL.to_string())
    }
}

/// Rank of `obs` among `ensemble`, shifted to start at 0 and divided by the
/// ensemble size. Ties with members are broken uniformly at random.
pub fn standardized_rank<R: Rng + ?Sized>(obs: f64, ensemble: &[f64], rng: &mut R) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let below = ensemble.iter().filter(|&&m| m < obs).count();
    let ties = ensemble.iter().filter(|&&m| m == obs).count();
    let offset = if ties > 0 {
        rng.random_range(0..=ties)
    } else {
        0
    };
    Ok((below + offset) as f64 / ensemble.len() as f64)
}

/// Standardized ranks of observed daily temperatures within the pooled
/// ensemble, one record per (location, year, day in group). Days where the
/// observation or every member is missing are skipped.
pub fn temperature_rank_records(
    obs: &ObservationSet,
    ensembles: &EnsembleStore,
    lead_groups: &[LeadGroup],
    seed: u64,
) -> Vec<RankRecord> {
    let slots: Vec<(String, i32)> = obs
        .iter()
        .map(|s| (s.location_id.clone(), s.year))
        .collect();
    slots
        .par_iter()
        .flat_map_iter(|(loc, year)| {
            let series = obs.get(loc, *year).expect("slot taken from obs");
            let members = pooled_members(ensembles, *year, loc);
            let mut rng = StreamKey::new(seed)
                .with_str("temperature")
                .with_str(loc)
                .with_int(*year as i64)
                .rng();
            let mut out = Vec::new();
            if members.is_empty() {
                return out;
            }
            let mut values = Vec::with_capacity(members.len());
            for group in lead_groups {
                for t in group.days().filter(|&t| t <= series.horizon()) {
                    let Some(o) = series.at(t) else { continue };
                    values.clear();
                    values.extend(members.iter().filter_map(|m| m.series.at(t)));
                    if let Ok(r) = standardized_rank(o, &values, &mut rng) {
                        out.push(RankRecord {
                            location_id: loc.clone(),
                            year: *year,
                            lead_group: Some(*group),
                            r,
                        });
                    }
                }
            }
            out
        })
        .collect()
}

/// Event day on the continuous jitter scale: `T + U(0,1)`, with censored
/// pairs placed at `H + 1 + U(0,1)` so they rank above every in-window event.
fn jittered_day<R: Rng + ?Sized>(e: EventObservation, horizon: usize, rng: &mut R) -> f64 {
    let day = if e.event { e.time } else { horizon + 1 };
    day as f64 + rng.random::<f64>()
}

/// Standardized rank of an observed event day among member event days after
/// independent U(0,1) jitter on every value.
pub fn event_time_rank<R: Rng + ?Sized>(
    obs: EventObservation,
    members: &[EventObservation],
    horizon: usize,
    rng: &mut R,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let o = jittered_day(obs, horizon, rng);
    let m: Vec<f64> = members
        .iter()
        .map(|&e| jittered_day(e, horizon, rng))
        .collect();
    standardized_rank(o, &m, rng)
}

/// One event-time rank per (location, year) where both the observation and
/// at least one member yield an event pair.
pub fn event_time_rank_records(
    obs: &ObservationSet,
    ensembles: &EnsembleStore,
    threshold: f64,
    seed: u64,
) -> Result<Vec<RankRecord>> {
    let horizon = obs.window().horizon();
    let slots: Vec<(String, i32)> = obs
        .iter()
        .map(|s| (s.location_id.clone(), s.year))
        .collect();
    let records: Vec<Option<RankRecord>> = slots
        .par_iter()
        .map(|(loc, year)| {
            let members = pooled_members(ensembles, *year, loc);
            if members.is_empty() {
                return Ok(None);
            }
            let o = time_to_event(obs.get(loc, *year).expect("slot taken from obs"), threshold)?;
            let m = members
                .iter()
                .map(|m| time_to_event(&m.series, threshold))
                .collect::<Result<Vec<_>>>()?;
            let mut rng = StreamKey::new(seed)
                .with_str("event")
                .with_str(loc)
                .with_int(*year as i64)
                .rng();
            Ok(Some(RankRecord {
                location_id: loc.clone(),
                year: *year,
                lead_group: None,
                r: event_time_rank(o, &m, horizon, &mut rng)?,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(records.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSummary {
    pub mean_rank: f64,
    /// Mean of `|r - 0.5|`; 0.25 for a flat histogram.
    pub mean_abs_dev: f64,
    pub count: usize,
}

pub fn rank_summary<'a>(records: impl IntoIterator<Item = &'a RankRecord>) -> Result<RankSummary> {
    let (mut n, mut sum, mut dev) = (0usize, 0.0, 0.0);
    for rec in records {
        n += 1;
        sum += rec.r;
        dev += (rec.r - 0.5).abs();
    }
    if n == 0 {
        return Err(Error::NoRecords);
    }
    Ok(RankSummary {
        mean_rank: sum / n as f64,
        mean_abs_dev: dev / n as f64,
        count: n,
    })
}

/// Summaries per (location, group label), plus a pooled `ALL` row per group.
pub fn rank_summaries_by_location(
    records: &[RankRecord],
) -> BTreeMap<(String, String), RankSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&RankRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.location_id.clone(), r.group_label()))
            .or_default()
            .push(r);
        groups
            .entry(("ALL".to_string(), r.group_label()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let s = rank_summary(v).expect("groups are non-empty");
            (k, s)
        })
        .collect()
}

pub fn write_rank_summaries<W: Write>(
    summaries: &BTreeMap<(String, String), RankSummary>,
    writer: W,
) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["location_id", "lead_group", "mean_rank", "mean_abs_dev"])?;
    for ((loc, group), s) in summaries {
        w.write_record([
            loc.as_str(),
            group,
            &s.mean_rank.to_string(),
            &s.mean_abs_dev.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `location_id,year,lead_group,r`; event-time records carry the `event` label.
pub fn write_rank_records<W: Write>(records: &[RankRecord], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["location_id", "year", "lead_group", "r"])?;
    for r in records {
        w.write_record([
            r.location_id.as_str(),
            &r.year.to_string(),
            &r.group_label(),
            &r.r.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_rank_records<R: Read>(reader: R, source: &str) -> Result<Vec<RankRecord>> {
    let mut rdr = csv_reader(reader);
    check_header(
        &mut rdr,
        &["location_id", "year", "lead_group", "r"],
        source,
    )?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| schema(source, line, e.to_string()))?;
        let year = field(&rec, 1)
            .parse()
            .map_err(|_| schema(source, line, "unparseable year".into()))?;
        let lead_group = match field(&rec, 2) {
            EVENT_GROUP_LABEL => None,
            g => Some(
                g.parse()
                    .map_err(|e: Error| schema(source, line, e.to_string()))?,
            ),
        };
        let r: f64 = field(&rec, 3)
            .parse()
            .map_err(|_| schema(source, line, "unparseable rank".into()))?;
        if !(0.0..=1.0).contains(&r) {
            return Err(schema(source, line, format!("rank {r} outside [0, 1]")));
        }
        out.push(RankRecord {
            location_id: field(&rec, 0).to_string(),
            year,
            lead_group,
            r,
        });
    }
    Ok(out)
}

/// Counts of ranks in `bins` equal-width bins on [0, 1]; r = 1 falls in the last bin.
pub fn rank_histogram<'a>(
    records: impl IntoIterator<Item = &'a RankRecord>,
    bins: usize,
) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for rec in records {
        let b = ((rec.r * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Pearson chi-square statistic against a flat histogram and its upper-tail
/// p-value with `bins - 1` degrees of freedom.
pub fn chi_square_uniformity(counts: &[usize]) -> (f64, f64) {
    let n: usize = counts.iter().sum();
    let k = counts.len();
    if n == 0 || k < 2 {
        return (0.0, 1.0);
    }
    let expected = n as f64 / k as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("k >= 2");
    (stat, dist.sf(stat))
}

/// Mean over years of `(S_obs(t) - S_pred(t))^2`. Pairs are `(pred, obs)`.
pub fn brier_t(pairs: &[(&SurvivalCurve, &SurvivalCurve)], t: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoObservations);
    }
    let sum: f64 = pairs
        .iter()
        .map(|(pred, obs)| (obs.at(t) - pred.at(t)).powi(2))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// `BS(t)` for `t = 1..=H` (index 0 holds t = 1).
pub fn brier_curve(pairs: &[(&SurvivalCurve, &SurvivalCurve)]) -> Result<Vec<f64>> {
    let horizon = check_pairs(pairs)?;
    (1..=horizon).map(|t| brier_t(pairs, t)).collect()
}

/// `(1/H) * sum_{t=1}^{H} BS(t)`; t = 0 is excluded since every curve is 1 there.
pub fn integrated_brier(pairs: &[(&SurvivalCurve, &SurvivalCurve)]) -> Result<f64> {
    let bs = brier_curve(pairs)?;
    Ok(bs.iter().sum::<f64>() / bs.len() as f64)
}

fn check_pairs(pairs: &[(&SurvivalCurve, &SurvivalCurve)]) -> Result<usize> {
    let horizon = pairs.first().ok_or(Error::NoObservations)?.0.horizon();
    for (p, o) in pairs {
        if p.horizon() != horizon || o.horizon() != horizon {
            return Err(Error::LengthMismatch {
                expected: horizon,
                got: p.horizon().max(o.horizon()),
            });
        }
    }
    Ok(horizon)
}

/// Integrated Brier skill score relative to climatology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skill {
    Value(f64),
    /// Climatology scored 0, so no model can be compared against it.
    Undefined,
}

impl Skill {
    pub fn value(self) -> Option<f64> {
        match self {
            Skill::Value(v) => Some(v),
            Skill::Undefined => None,
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Skill::Value(v) => write!(f, "{v}"),
            Skill::Undefined => f.write_str("undefined (degenerate climatology)"),
        }
    }
}

/// `(IBS_C - IBS_M) / IBS_C`.
pub fn skill_score(ibs_model: f64, ibs_clim: f64) -> Skill {
    if ibs_clim > 0.0 {
        Skill::Value((ibs_clim - ibs_model) / ibs_clim)
    } else {
        Skill::Undefined
    }
}

/// Curves for one location in one year: forecast, verifying observation and
/// the climatological reference.
#[derive(Debug, Clone, Copy)]
pub struct YearCase<'a> {
    pub pred: &'a SurvivalCurve,
    pub obs: &'a SurvivalCurve,
    pub clim: &'a SurvivalCurve,
}

/// Year-specific skill: IBS averaged over locations rather than years.
pub fn year_skill(cases: &[YearCase<'_>]) -> Result<Skill> {
    let model: Vec<_> = cases.iter().map(|c| (c.pred, c.obs)).collect();
    let clim: Vec<_> = cases.iter().map(|c| (c.clim, c.obs)).collect();
    Ok(skill_score(
        integrated_brier(&model)?,
        integrated_brier(&clim)?,
    ))
}

/// CRPS of the event-day distribution `F = 1 - S` against the observed pair,
/// averaged over `t = 1..=H`.
pub fn crps_event_day(pred: &SurvivalCurve, obs: EventObservation) -> f64 {
    let h = pred.horizon();
    let sum: f64 = (1..=h)
        .map(|t| {
            let f = 1.0 - pred.at(t);
            let hit = if obs.event && obs.time <= t { 1.0 } else { 0.0 };
            (f - hit).powi(2)
        })
        .sum();
    sum / h as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationScore {
    pub location_id: String,
    pub model: CurveModel,
    /// Years with both a forecast and an observed curve.
    pub years: usize,
    /// `BS(t)` for t = 1..=H.
    pub brier: Vec<f64>,
    pub ibs: f64,
    /// Against climatology over the same years.
    pub ibss: Skill,
    /// Mean over years of the forecast curves' restricted mean event day.
    pub mean_days: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearScore {
    pub year: i32,
    pub model: CurveModel,
    pub locations: usize,
    pub ibs: f64,
    pub ibss: Skill,
}

/// Location- and year-specific scores for a set of forecast models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreReport {
    pub locations: Vec<LocationScore>,
    pub years: Vec<YearScore>,
}

impl ScoreReport {
    /// Scores every model in `models` against the `Observed` curves, using the
    /// `Climatology` curves as the skill reference. Years lacking a forecast
    /// or climatology curve are skipped per (location, model).
    pub fn from_curves(table: &CurveTable, models: &[CurveModel]) -> Result<Self> {
        let locations = table.locations();
        let per_location: Vec<Vec<LocationScore>> = locations
            .par_iter()
            .map(|loc| {
                let years = table.years(loc);
                let mut out = Vec::new();
                for &model in models {
                    let mut model_pairs = Vec::new();
                    let mut clim_pairs = Vec::new();
                    for &y in &years {
                        let obs = table.get(loc, y, CurveModel::Observed);
                        let pred = table.get(loc, y, model);
                        let clim = table.get(loc, y, CurveModel::Climatology);
                        if let (Some(o), Some(p), Some(c)) = (obs, pred, clim) {
                            model_pairs.push((p, o));
                            clim_pairs.push((c, o));
                        }
                    }
                    if model_pairs.is_empty() {
                        continue;
                    }
                    let brier = brier_curve(&model_pairs)?;
                    let ibs = brier.iter().sum::<f64>() / brier.len() as f64;
                    let ibs_clim = integrated_brier(&clim_pairs)?;
                    let mean_days = model_pairs
                        .iter()
                        .map(|(p, _)| p.restricted_mean())
                        .sum::<f64>()
                        / model_pairs.len() as f64;
                    out.push(LocationScore {
                        location_id: loc.clone(),
                        model,
                        years: model_pairs.len(),
                        brier,
                        ibs,
                        ibss: skill_score(ibs, ibs_clim),
                        mean_days,
                    });
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        let mut by_year: BTreeMap<(i32, CurveModel), Vec<YearCase<'_>>> = BTreeMap::new();
        for ((loc, y, model), pred) in table.iter() {
            if !models.contains(model) {
                continue;
            }
            let obs = table.get(loc, *y, CurveModel::Observed);
            let clim = table.get(loc, *y, CurveModel::Climatology);
            if let (Some(obs), Some(clim)) = (obs, clim) {
                by_year
                    .entry((*y, *model))
                    .or_default()
                    .push(YearCase { pred, obs, clim });
            }
        }
        let mut years = Vec::new();
        for ((year, model), cases) in by_year {
            let model_pairs: Vec<_> = cases.iter().map(|c| (c.pred, c.obs)).collect();
            years.push(YearScore {
                year,
                model,
                locations: cases.len(),
                ibs: integrated_brier(&model_pairs)?,
                ibss: year_skill(&cases)?,
            });
        }
        years.sort_by_key(|s| (s.model, s.year));

        Ok(ScoreReport {
            locations: per_location.into_iter().flatten().collect(),
            years,
        })
    }

    pub fn get(&self, location: &str, model: CurveModel) -> Option<&LocationScore> {
        self.locations
            .iter()
            .find(|s| s.location_id == location && s.model == model)
    }

    /// `location_id,model,ibs,ibss`
    pub fn write_scores<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["location_id", "model", "ibs", "ibss"])?;
        for s in &self.locations {
            w.write_record([
                s.location_id.as_str(),
                s.model.label(),
                &s.ibs.to_string(),
                &skill_field(s.ibss),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// `location_id,model,t,bs`
    pub fn write_brier<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["location_id", "model", "t", "bs"])?;
        for s in &self.locations {
            for (i, bs) in s.brier.iter().enumerate() {
                w.write_record([
                    s.location_id.as_str(),
                    s.model.label(),
                    &(i + 1).to_string(),
                    &bs.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// `year,model,ibs,ibss`
    pub fn write_year_scores<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["year", "model", "ibs", "ibss"])?;
        for s in &self.years {
            w.write_record([
                &s.year.to_string(),
                s.model.label(),
                &s.ibs.to_string(),
                &skill_field(s.ibss),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// CSV field for a skill score; undefined scores are written as `undefined`.
pub fn skill_field(s: Skill) -> String {
    match s {
        Skill::Value(v) => v.to_string(),
        Skill::Undefined => "undefined".to_string(),
    }
}
