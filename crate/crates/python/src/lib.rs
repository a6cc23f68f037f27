//! Python bindings for the freezecast survival-forecast pipeline.

use std::path::PathBuf;

use freezecast::synthetic::{generate, scenario_paperlike};
use freezecast::{
    self as fc, ClimSource, ClimatologyStats, CurveModel, DailySeries, EnsembleMemberSeries,
    EnsembleStore, EventObservation, ForecastWindow, ObservationSet, RankRecord, Skill,
    SubdailySeries,
};
use pyo3::exceptions::{PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: fc::Error) -> PyErr {
    match e {
        fc::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for fc::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "Location", frozen, from_py_object)]
#[derive(Clone)]
struct PyLocation {
    inner: fc::Location,
}

#[pymethods]
impl PyLocation {
    #[new]
    fn new(id: String, lon: f64, lat: f64, elevation: f64) -> PyResult<Self> {
        Ok(PyLocation {
            inner: fc::Location::new(id, lon, lat, elevation).or_py()?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn lon(&self) -> f64 {
        self.inner.lon
    }

    #[getter]
    fn lat(&self) -> f64 {
        self.inner.lat
    }

    #[getter]
    fn elevation(&self) -> f64 {
        self.inner.elevation
    }

    fn __repr__(&self) -> String {
        let l = &self.inner;
        format!(
            "Location({:?}, lon={}, lat={}, elevation={})",
            l.id, l.lon, l.lat, l.elevation
        )
    }
}

#[pyfunction]
fn haversine_km(a: PyRef<'_, PyLocation>, b: PyRef<'_, PyLocation>) -> f64 {
    fc::haversine_km(&a.inner, &b.inner)
}

#[pyfunction]
fn snap_to_whole_degree(p: PyRef<'_, PyLocation>) -> PyLocation {
    PyLocation {
        inner: fc::snap_to_whole_degree(&p.inner),
    }
}

/// Nearest forecast point for every observation point within `max_km`.
#[pyfunction]
fn match_grids(
    obs: Vec<PyLocation>,
    forecast: Vec<PyLocation>,
    max_km: f64,
) -> PyResult<Vec<(String, String)>> {
    let a = fc::LocationSet::new(obs.into_iter().map(|l| l.inner)).or_py()?;
    let b = fc::LocationSet::new(forecast.into_iter().map(|l| l.inner)).or_py()?;
    fc::match_grids(&a, &b, max_km).or_py()
}

fn window(horizon: usize) -> PyResult<ForecastWindow> {
    ForecastWindow::new(10, 1, horizon).or_py()
}

/// Daily means from `per_day` readings per day; a day with any `None` is `None`.
#[pyfunction]
fn daily_mean(values: Vec<Option<f64>>, per_day: usize) -> PyResult<Vec<Option<f64>>> {
    if per_day == 0 || !values.len().is_multiple_of(per_day) || values.is_empty() {
        return Err(PyValueError::new_err(format!(
            "{} readings do not split into days of {per_day}",
            values.len()
        )));
    }
    let sub = SubdailySeries {
        location_id: String::new(),
        year: 2000,
        window: window(values.len() / per_day)?,
        per_day,
        values,
    };
    Ok(sub.daily_mean().or_py()?.values().to_vec())
}

/// `(time, event)` for a daily series; censored series give `(H, False)`.
#[pyfunction]
#[pyo3(signature = (values, threshold = fc::FREEZE_THRESHOLD))]
fn time_to_event(values: Vec<Option<f64>>, threshold: f64) -> PyResult<(usize, bool)> {
    let series = DailySeries::new("", 2000, window(values.len())?, values).or_py()?;
    let e = fc::time_to_event(&series, threshold).or_py()?;
    Ok((e.time, e.event))
}

fn events(pairs: &[(usize, bool)], horizon: usize) -> PyResult<Vec<EventObservation>> {
    pairs
        .iter()
        .map(|&(time, event)| {
            if time == 0 || time > horizon || (!event && time != horizon) {
                Err(PyValueError::new_err(format!(
                    "({time}, {event}) is not a valid pair for horizon {horizon}"
                )))
            } else {
                Ok(EventObservation { time, event })
            }
        })
        .collect()
}

#[pyclass(name = "SurvivalCurve", frozen, from_py_object)]
#[derive(Clone)]
struct PyCurve {
    inner: fc::SurvivalCurve,
}

#[pymethods]
impl PyCurve {
    /// `values[t]` for t = 0..=H; must start at 1 and never increase.
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        Ok(PyCurve {
            inner: fc::SurvivalCurve::from_values(values).or_py()?,
        })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn at(&self, t: usize) -> PyResult<f64> {
        if t > self.inner.horizon() {
            return Err(PyIndexError::new_err(format!(
                "t = {t} beyond horizon {}",
                self.inner.horizon()
            )));
        }
        Ok(self.inner.at(t))
    }

    /// Expected event day truncated at the horizon.
    fn restricted_mean(&self) -> f64 {
        self.inner.restricted_mean()
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }

    fn __repr__(&self) -> String {
        format!("SurvivalCurve(horizon={})", self.inner.horizon())
    }
}

#[pyfunction]
fn km_estimator(pairs: Vec<(usize, bool)>, horizon: usize) -> PyResult<PyCurve> {
    let data = events(&pairs, horizon)?;
    Ok(PyCurve {
        inner: fc::km_estimator(&data, horizon).or_py()?,
    })
}

/// Step curve of a realized event pair.
#[pyfunction]
fn event_curve(time: usize, event: bool, horizon: usize) -> PyResult<PyCurve> {
    let e = events(&[(time, event)], horizon)?[0];
    Ok(PyCurve {
        inner: fc::survival::event_curve(e, horizon),
    })
}

fn pairs<'a>(
    pred: &'a [PyCurve],
    obs: &'a [PyCurve],
) -> PyResult<Vec<(&'a fc::SurvivalCurve, &'a fc::SurvivalCurve)>> {
    if pred.len() != obs.len() {
        return Err(PyValueError::new_err(
            "pred and obs must have one curve per year",
        ));
    }
    if pred
        .iter()
        .chain(obs)
        .any(|c| c.inner.horizon() != pred[0].inner.horizon())
    {
        return Err(PyValueError::new_err("all curves must share one horizon"));
    }
    Ok(pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (&p.inner, &o.inner))
        .collect())
}

/// `BS(t)` for t = 1..=H over paired yearly curves.
#[pyfunction]
fn brier_curve(pred: Vec<PyCurve>, obs: Vec<PyCurve>) -> PyResult<Vec<f64>> {
    fc::verification::brier_curve(&pairs(&pred, &obs)?).or_py()
}

#[pyfunction]
fn integrated_brier(pred: Vec<PyCurve>, obs: Vec<PyCurve>) -> PyResult<f64> {
    fc::integrated_brier(&pairs(&pred, &obs)?).or_py()
}

/// `1 - IBS_model / IBS_clim`, or `None` when the climatology is perfect.
#[pyfunction]
fn skill_score(ibs_model: f64, ibs_clim: f64) -> Option<f64> {
    fc::skill_score(ibs_model, ibs_clim).value()
}

#[pyfunction]
fn crps_event_day(pred: PyRef<'_, PyCurve>, time: usize, event: bool) -> PyResult<f64> {
    let e = events(&[(time, event)], pred.inner.horizon())?[0];
    Ok(fc::crps_event_day(&pred.inner, e))
}

#[pyfunction]
#[pyo3(signature = (obs, ensemble, seed = 0))]
fn standardized_rank(obs: f64, ensemble: Vec<f64>, seed: u64) -> PyResult<f64> {
    let mut rng = fc::rng::StreamKey::new(seed).rng();
    fc::standardized_rank(obs, &ensemble, &mut rng).or_py()
}

/// `(mean_rank, mean_abs_dev, count)`.
#[pyfunction]
fn rank_summary(ranks: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let records: Vec<RankRecord> = ranks
        .into_iter()
        .map(|r| RankRecord {
            location_id: String::new(),
            year: 0,
            lead_group: None,
            r,
        })
        .collect();
    let s = fc::rank_summary(&records).or_py()?;
    Ok((s.mean_rank, s.mean_abs_dev, s.count))
}

fn clim(source: ClimSource, mean: Vec<f64>, sd: Vec<f64>) -> PyResult<ClimatologyStats> {
    if mean.len() != sd.len() {
        return Err(PyValueError::new_err("mean and sd lengths differ"));
    }
    let n = mean.len();
    Ok(ClimatologyStats {
        location_id: String::new(),
        source,
        excluded_year: None,
        exclusion_applied: false,
        mean,
        sd,
        sample_count: vec![0; n],
    })
}

/// `(f - mean) / sd` per day.
#[pyfunction]
#[pyo3(signature = (values, mean, sd, sigma_min = 1e-6))]
fn standardize(
    values: Vec<Option<f64>>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    sigma_min: f64,
) -> PyResult<Vec<Option<f64>>> {
    let member = EnsembleMemberSeries {
        system: "s".into(),
        member: 0,
        series: DailySeries::new("", 2000, window(values.len())?, values).or_py()?,
    };
    let c = clim(ClimSource::Forecast("s".into()), mean, sd)?;
    Ok(fc::standardize_member(&member, &c, sigma_min)
        .or_py()?
        .values)
}

/// `anomaly * sd + mean` per day.
#[pyfunction]
fn restandardize(
    anomalies: Vec<Option<f64>>,
    mean: Vec<f64>,
    sd: Vec<f64>,
) -> PyResult<Vec<Option<f64>>> {
    let w = window(anomalies.len())?;
    let anom = fc::postprocess::AnomalySeries {
        raw: EnsembleMemberSeries {
            system: "s".into(),
            member: 0,
            series: DailySeries::empty("", 2000, w),
        }
        .key(),
        window: w,
        values: anomalies,
    };
    let c = clim(ClimSource::Observations, mean, sd)?;
    Ok(fc::restandardize_member(&anom, &c)
        .or_py()?
        .series
        .values()
        .to_vec())
}

/// `(system, member, values)`.
type MemberRow = (String, u32, Vec<Option<f64>>);

/// Observations plus raw (and, once computed, post-processed) ensembles.
#[pyclass(name = "Dataset")]
struct PyDataset {
    obs: ObservationSet,
    raw: EnsembleStore,
    pp: Option<EnsembleStore>,
}

fn model_label(m: CurveModel) -> &'static str {
    m.label()
}

#[pymethods]
impl PyDataset {
    /// The synthetic standing scenario, optionally cut down.
    #[staticmethod]
    #[pyo3(signature = (seed, locations = None, years = None, horizon = None))]
    fn paperlike(
        seed: u64,
        locations: Option<usize>,
        years: Option<usize>,
        horizon: Option<usize>,
    ) -> PyResult<Self> {
        let mut cfg = scenario_paperlike(seed);
        if let Some(n) = locations {
            cfg.locations.truncate(n);
        }
        if let Some(n) = years {
            cfg.n_years = n;
        }
        if let Some(h) = horizon {
            cfg.window = window(h)?;
        }
        let data = generate(&cfg).or_py()?;
        Ok(PyDataset {
            obs: data.obs,
            raw: data.store,
            pp: None,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (obs_csv, ensemble_csv, init_date = "10-01", horizon = 92))]
    fn load(
        obs_csv: PathBuf,
        ensemble_csv: PathBuf,
        init_date: &str,
        horizon: usize,
    ) -> PyResult<Self> {
        let w = ForecastWindow::parse_init(init_date, horizon).or_py()?;
        let (obs, _) = ObservationSet::load(&obs_csv, w).or_py()?;
        let (raw, _) = EnsembleStore::load(&ensemble_csv, w).or_py()?;
        Ok(PyDataset { obs, raw, pp: None })
    }

    fn locations(&self) -> Vec<String> {
        self.obs.locations()
    }

    fn years(&self) -> Vec<i32> {
        self.obs.years()
    }

    fn systems(&self) -> Vec<String> {
        self.raw.systems()
    }

    fn observation(&self, location: &str, year: i32) -> PyResult<Vec<Option<f64>>> {
        self.obs
            .get(location, year)
            .map(|s| s.values().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no observation for {location} {year}")))
    }

    /// `(system, member, values)` for every raw member of the slot, or the
    /// post-processed members when `postprocessed` is true.
    #[pyo3(signature = (location, year, postprocessed = false))]
    fn members(&self, location: &str, year: i32, postprocessed: bool) -> PyResult<Vec<MemberRow>> {
        let store = if postprocessed {
            self.pp
                .as_ref()
                .ok_or_else(|| PyValueError::new_err("call postprocess() first"))?
        } else {
            &self.raw
        };
        Ok(fc::pooled_members(store, year, location)
            .into_iter()
            .map(|m| (m.system.clone(), m.member, m.series.values().to_vec()))
            .collect())
    }

    /// Runs member-by-member post-processing; returns locations skipped for
    /// lack of an observed climatology.
    #[pyo3(signature = (sigma_min = 1e-6, window_halfwidth = 0))]
    fn postprocess(
        &mut self,
        py: Python<'_>,
        sigma_min: f64,
        window_halfwidth: usize,
    ) -> PyResult<Vec<String>> {
        let cfg = fc::PostprocessConfig {
            sigma_min,
            window_halfwidth,
        };
        let (pp, skipped) = py
            .detach(|| fc::postprocess_store(&self.raw, &self.obs, &cfg))
            .or_py()?;
        self.pp = Some(pp);
        Ok(skipped)
    }

    /// Survival curves keyed by `(location, year, model)` with models
    /// `C`, `R`, `P` (after postprocess()) and `obs`.
    #[pyo3(signature = (threshold = fc::FREEZE_THRESHOLD))]
    fn curves<'py>(&self, py: Python<'py>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
        let empty = EnsembleStore::new(self.obs.window());
        let pp = self.pp.as_ref().unwrap_or(&empty);
        let table = fc::pipeline::build_curves(&self.obs, &self.raw, pp, threshold).or_py()?;
        let out = PyDict::new(py);
        for ((loc, year, model), c) in table.iter() {
            out.set_item(
                (loc.as_str(), *year, model_label(*model)),
                PyCurve { inner: c.clone() },
            )?;
        }
        Ok(out)
    }

    /// One dict per (location, model) with `ibs`, `ibss` (None if undefined)
    /// and `mean_days`.
    #[pyo3(signature = (threshold = fc::FREEZE_THRESHOLD))]
    fn scores<'py>(&self, py: Python<'py>, threshold: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let empty = EnsembleStore::new(self.obs.window());
        let pp = self.pp.as_ref().unwrap_or(&empty);
        let report = py
            .detach(|| {
                let table = fc::pipeline::build_curves(&self.obs, &self.raw, pp, threshold)?;
                fc::ScoreReport::from_curves(
                    &table,
                    &[
                        CurveModel::Climatology,
                        CurveModel::Raw,
                        CurveModel::Postprocessed,
                    ],
                )
            })
            .or_py()?;
        report
            .locations
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("location", &s.location_id)?;
                d.set_item("model", model_label(s.model))?;
                d.set_item("years", s.years)?;
                d.set_item("ibs", s.ibs)?;
                d.set_item(
                    "ibss",
                    match s.ibss {
                        Skill::Value(v) => Some(v),
                        Skill::Undefined => None,
                    },
                )?;
                d.set_item("mean_days", s.mean_days)?;
                Ok(d)
            })
            .collect()
    }

    /// Writes `observations.csv`, `ensemble.csv` and, if present,
    /// `ensemble_pp.csv` into `directory`.
    fn write(&self, directory: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&directory).map_err(|e| PyOSError::new_err(e.to_string()))?;
        let create = |name: &str| {
            std::fs::File::create(directory.join(name))
                .map_err(|e| PyOSError::new_err(format!("{name}: {e}")))
        };
        self.obs.write_csv(create("observations.csv")?).or_py()?;
        self.raw.write_csv(create("ensemble.csv")?).or_py()?;
        if let Some(pp) = &self.pp {
            pp.write_csv(create("ensemble_pp.csv")?).or_py()?;
        }
        Ok(())
    }
}

#[pymodule]
fn freezecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FREEZE_THRESHOLD", fc::FREEZE_THRESHOLD)?;
    m.add("__version__", fc::VERSION)?;
    m.add_class::<PyLocation>()?;
    m.add_class::<PyCurve>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(snap_to_whole_degree, m)?)?;
    m.add_function(wrap_pyfunction!(match_grids, m)?)?;
    m.add_function(wrap_pyfunction!(daily_mean, m)?)?;
    m.add_function(wrap_pyfunction!(time_to_event, m)?)?;
    m.add_function(wrap_pyfunction!(km_estimator, m)?)?;
    m.add_function(wrap_pyfunction!(event_curve, m)?)?;
    m.add_function(wrap_pyfunction!(brier_curve, m)?)?;
    m.add_function(wrap_pyfunction!(integrated_brier, m)?)?;
    m.add_function(wrap_pyfunction!(skill_score, m)?)?;
    m.add_function(wrap_pyfunction!(crps_event_day, m)?)?;
    m.add_function(wrap_pyfunction!(standardized_rank, m)?)?;
    m.add_function(wrap_pyfunction!(rank_summary, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(restandardize, m)?)?;
    Ok(())
}
