//! Time-to-event extraction and Kaplan-Meier survival curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::data::{
    check_header, csv_reader, csv_writer, field, schema, DailySeries, ObservationSet,
};
use crate::error::{Error, Result};

/// Default hard-freeze threshold in °C. A day counts only if strictly below.
pub const FREEZE_THRESHOLD: f64 = 0.0;

/// `(T, d)`: day of the first event, or `(H, false)` when censored at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventObservation {
    pub time: usize,
    pub event: bool,
}

impl EventObservation {
    pub fn event(time: usize) -> Self {
        EventObservation { time, event: true }
    }

    pub fn censored(horizon: usize) -> Self {
        EventObservation {
            time: horizon,
            event: false,
        }
    }
}

/// Monotone non-increasing step function on `t = 0..=H` with `S[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    values: Vec<f64>,
}

impl SurvivalCurve {
    /// Validates the curve invariants on `values[0..=H]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidCurve(format!(
                "need H >= 1, got {} points",
                values.len()
            )));
        }
        if values[0] != 1.0 {
            return Err(Error::InvalidCurve(format!("S(0) = {} != 1", values[0])));
        }
        if let Some(t) = values.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidCurve(format!(
                "S({t}) = {} outside [0, 1]",
                values[t]
            )));
        }
        if let Some(t) = values.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidCurve(format!("S increases at t = {}", t + 1)));
        }
        Ok(SurvivalCurve { values })
    }

    /// Constant curve at 1 (no event by the horizon).
    pub fn flat(horizon: usize) -> Self {
        SurvivalCurve {
            values: vec![1.0; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, t: usize) -> f64 {
        self.values[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sum_{t=0}^{H-1} S(t)`: the expected event day with censored mass
    /// counted at H.
    pub fn restricted_mean(&self) -> f64 {
        self.values[..self.horizon()].iter().sum()
    }
}

/// First day strictly below `threshold`, or censored at the horizon.
pub fn time_to_event(series: &DailySeries, threshold: f64) -> Result<EventObservation> {
    for (i, v) in series.values().iter().enumerate() {
        match v {
            None => return Err(Error::GapBeforeEvent { day: i + 1 }),
            Some(x) if *x < threshold => return Ok(EventObservation::event(i + 1)),
            Some(_) => {}
        }
    }
    Ok(EventObservation::censored(series.horizon()))
}

/// Kaplan-Meier product-limit estimate on `t = 0..=H`.
///
/// With `n_t = #{T_i >= t}` and `e_t = #{T_i = t, d_i = 1}`,
/// `S(t) = prod_{l <= t} (1 - e_l / n_l)`, taking the hazard as 0 where the
/// risk set is empty.
pub fn km_estimator(data: &[EventObservation], horizon: usize) -> Result<SurvivalCurve> {
    if data.is_empty() {
        return Err(Error::NoObservations);
    }
    // exits[t]: observations whose last time at risk is t
    let mut exits = vec![0usize; horizon + 1];
    let mut events = vec![0usize; horizon + 1];
    for obs in data {
        if obs.time == 0 || obs.time > horizon {
            return Err(Error::EventOutOfRange {
                time: obs.time,
                horizon,
            });
        }
        exits[obs.time] += 1;
        if obs.event {
            events[obs.time] += 1;
        }
    }
    let mut at_risk = data.len();
    let mut s = 1.0;
    let mut values = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if at_risk > 0 && events[t] > 0 {
            s *= 1.0 - events[t] as f64 / at_risk as f64;
        }
        values.push(s);
        at_risk -= exits[t];
    }
    Ok(SurvivalCurve { values })
}

/// Leave-one-year-out climatological curve from one observed pair per year.
pub fn climatology_curve(
    obs: &ObservationSet,
    location: &str,
    exclude_year: Option<i32>,
    threshold: f64,
) -> Result<SurvivalCurve> {
    let events = obs
        .for_location(location)
        .filter(|s| Some(s.year) != exclude_year)
        .map(|s| time_to_event(s, threshold))
        .collect::<Result<Vec<_>>>()?;
    km_estimator(&events, obs.window().horizon())
}

/// KM curve with one pair per ensemble member.
pub fn forecast_curve<'a>(
    members: impl IntoIterator<Item = &'a DailySeries>,
    threshold: f64,
) -> Result<SurvivalCurve> {
    let mut horizon = None;
    let events = members
        .into_iter()
        .map(|s| {
            horizon.get_or_insert(s.horizon());
            time_to_event(s, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    km_estimator(&events, horizon.ok_or(Error::NoObservations)?)
}

/// Step curve of a single realized series: 1 before the event, 0 from it on.
pub fn observed_curve(series: &DailySeries, threshold: f64) -> Result<SurvivalCurve> {
    Ok(event_curve(
        time_to_event(series, threshold)?,
        series.horizon(),
    ))
}

pub fn event_curve(obs: EventObservation, horizon: usize) -> SurvivalCurve {
    let values = (0..=horizon)
        .map(|t| if obs.event && t >= obs.time { 0.0 } else { 1.0 })
        .collect();
    SurvivalCurve { values }
}

/// Which forecast (or the verifying observation) a curve represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CurveModel {
    Climatology,
    Raw,
    Postprocessed,
    Observed,
}

impl CurveModel {
    pub const ALL: [CurveModel; 4] = [
        CurveModel::Climatology,
        CurveModel::Raw,
        CurveModel::Postprocessed,
        CurveModel::Observed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CurveModel::Climatology => "C",
            CurveModel::Raw => "R",
            CurveModel::Postprocessed => "P",
            CurveModel::Observed => "obs",
        }
    }
}

impl fmt::Display for CurveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CurveModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CurveModel::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidCurve(format!("unknown model {s:?}")))
    }
}

/// Curves keyed by (location, year, model), serialized long-form as
/// `location_id,year,model,t,S`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveTable {
    curves: BTreeMap<(String, i32, CurveModel), SurvivalCurve>,
}

impl CurveTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, location: &str, year: i32, model: CurveModel, curve: SurvivalCurve) {
        self.curves
            .insert((location.to_string(), year, model), curve);
    }

    pub fn get(&self, location: &str, year: i32, model: CurveModel) -> Option<&SurvivalCurve> {
        self.curves.get(&(location.to_string(), year, model))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, i32, CurveModel), &SurvivalCurve)> {
        self.curves.iter()
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn locations(&self) -> Vec<String> {
        let mut l: Vec<String> = self.curves.keys().map(|k| k.0.clone()).collect();
        l.dedup();
        l
    }

    pub fn years(&self, location: &str) -> Vec<i32> {
        let mut y: Vec<i32> = self
            .curves
            .keys()
            .filter(|k| k.0 == location)
            .map(|k| k.1)
            .collect();
        y.dedup();
        y
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["location_id", "year", "model", "t", "S"])?;
        for ((loc, year, model), curve) in &self.curves {
            let year = year.to_string();
            for (t, s) in curve.values().iter().enumerate() {
                w.write_record([
                    loc.as_str(),
                    &year,
                    model.label(),
                    &t.to_string(),
                    &s.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Parses and re-validates every curve; any broken invariant is an
    /// `InvalidCurve` error.
    pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        check_header(
            &mut rdr,
            &["location_id", "year", "model", "t", "S"],
            source,
        )?;
        let mut raw: BTreeMap<(String, i32, CurveModel), Vec<f64>> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| schema(source, line, e.to_string()))?;
            let year: i32 = field(&rec, 1)
                .parse()
                .map_err(|_| schema(source, line, "unparseable year".into()))?;
            let model: CurveModel = field(&rec, 2)
                .parse()
                .map_err(|e: Error| schema(source, line, e.to_string()))?;
            let t: usize = field(&rec, 3)
                .parse()
                .map_err(|_| schema(source, line, "unparseable t".into()))?;
            let s: f64 = field(&rec, 4)
                .parse()
                .map_err(|_| schema(source, line, "unparseable S".into()))?;
            let v = raw
                .entry((field(&rec, 0).to_string(), year, model))
                .or_default();
            if t != v.len() {
                return Err(schema(
                    source,
                    line,
                    format!("expected t = {}, got {t}", v.len()),
                ));
            }
            v.push(s);
        }
        let mut table = CurveTable::new();
        for ((loc, year, model), values) in raw {
            let curve = SurvivalCurve::from_values(values)
                .map_err(|e| Error::InvalidCurve(format!("{loc} {year} {model}: {e}")))?;
            table.curves.insert((loc, year, model), curve);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, &path.display().to_string())
    }
}
