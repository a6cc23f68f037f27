//! Synthetic truth and multi-system ensembles with known bias and dispersion.
//!
//! Daily temperature at a location is a linear seasonal cooling trend plus a
//! year anomaly plus a stationary AR(1) process. Truth and every ensemble
//! member of a (location, year) share the trend, the year anomaly and the
//! AR(1) state on the initialization day (day 0); each then evolves with its
//! own innovations. Members add their system's bias and scale innovations by
//! its dispersion factor, so with bias 0 and dispersion 1 truth and members
//! are exchangeable.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{
    DailySeries, EnsembleMemberSeries, EnsembleStore, ForecastWindow, ObservationSet,
};
use crate::error::{Error, Result};
use crate::grid::{Location, LocationSet};
use crate::rng::{StreamKey, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct LocationClimate {
    pub location: Location,
    /// Trend temperature on day 1 (°C).
    pub baseline: f64,
    /// Trend decline per day (°C/day).
    pub cooling_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    /// Constant additive bias (°C).
    pub bias: f64,
    /// Multiplier on the innovation sd.
    pub dispersion: f64,
    pub members: usize,
    /// Member count used from this year on, if it changes.
    pub members_from: Option<(i32, usize)>,
    pub missing_years: Vec<i32>,
}

impl SystemSpec {
    pub fn new(name: &str, bias: f64, dispersion: f64, members: usize) -> Self {
        SystemSpec {
            name: name.to_string(),
            bias,
            dispersion,
            members,
            members_from: None,
            missing_years: Vec::new(),
        }
    }

    pub fn members_in(&self, year: i32) -> usize {
        if self.missing_years.contains(&year) {
            return 0;
        }
        match self.members_from {
            Some((from, n)) if year >= from => n,
            _ => self.members,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub locations: Vec<LocationClimate>,
    pub first_year: i32,
    pub n_years: usize,
    pub window: ForecastWindow,
    /// AR(1) coefficient in [0, 1).
    pub ar_coef: f64,
    /// AR(1) innovation sd (°C); the stationary sd is `noise_sd / sqrt(1 - ar_coef^2)`.
    pub noise_sd: f64,
    /// Sd of the per-(location, year) anomaly shared by truth and members (°C).
    pub year_signal_sd: f64,
    pub systems: Vec<SystemSpec>,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_years == 0 {
            return fail("scenario needs at least one year".into());
        }
        if self.locations.is_empty() {
            return fail("scenario needs at least one location".into());
        }
        if !(0.0..1.0).contains(&self.ar_coef) {
            return fail(format!("AR coefficient {} outside [0, 1)", self.ar_coef));
        }
        if self.noise_sd.is_nan() || self.noise_sd <= 0.0 {
            return fail("noise sd must be positive".into());
        }
        if self.year_signal_sd.is_nan() || self.year_signal_sd < 0.0 {
            return fail("year signal sd must be non-negative".into());
        }
        for s in &self.systems {
            if s.dispersion.is_nan() || s.dispersion <= 0.0 {
                return fail(format!("system {}: dispersion must be positive", s.name));
            }
        }
        Ok(())
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first_year..self.first_year + self.n_years as i32
    }

    pub fn stationary_sd(&self) -> f64 {
        self.noise_sd / (1.0 - self.ar_coef * self.ar_coef).sqrt()
    }

    fn key(&self) -> StreamKey {
        StreamKey::new(self.seed)
    }
}

/// AR(1) path `x_t = rho * x_{t-1} + sd * e_t` for t = 1..=n, from `x_0 = start`.
pub fn ar1_path<R: Rng + ?Sized>(rng: &mut R, start: f64, rho: f64, sd: f64, n: usize) -> Vec<f64> {
    let mut x = start;
    (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            x = rho * x + sd * e;
            x
        })
        .collect()
}

/// State shared by truth and members of one (location, year).
struct SharedState {
    year_anomaly: f64,
    initial: f64,
}

fn shared_state(cfg: &SyntheticConfig, loc: &str, year: i32) -> SharedState {
    let mut rng = cfg
        .key()
        .with_str("shared")
        .with_str(loc)
        .with_int(year as i64)
        .rng();
    let a: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    SharedState {
        year_anomaly: cfg.year_signal_sd * a,
        initial: cfg.stationary_sd() * z,
    }
}

fn series_from(
    cfg: &SyntheticConfig,
    clim: &LocationClimate,
    year: i32,
    shared: &SharedState,
    rng: &mut StreamRng,
    offset: f64,
    dispersion: f64,
) -> DailySeries {
    let h = cfg.window.horizon();
    let anomaly = ar1_path(
        rng,
        shared.initial,
        cfg.ar_coef,
        cfg.noise_sd * dispersion,
        h,
    );
    let values: Vec<f64> = anomaly
        .iter()
        .enumerate()
        .map(|(i, x)| {
            clim.baseline - clim.cooling_rate * i as f64 + shared.year_anomaly + x + offset
        })
        .collect();
    DailySeries::complete(clim.location.id.clone(), year, cfg.window, &values).expect("length is H")
}

fn climate<'a>(cfg: &'a SyntheticConfig, location: &str) -> Result<&'a LocationClimate> {
    cfg.locations
        .iter()
        .find(|c| c.location.id == location)
        .ok_or_else(|| Error::Config(format!("unknown synthetic location {location}")))
}

/// Observed ("true") series for one location and year.
pub fn gen_truth(cfg: &SyntheticConfig, location: &str, year: i32) -> Result<DailySeries> {
    let clim = climate(cfg, location)?;
    let shared = shared_state(cfg, location, year);
    let mut rng = cfg
        .key()
        .with_str("truth")
        .with_str(location)
        .with_int(year as i64)
        .rng();
    Ok(series_from(cfg, clim, year, &shared, &mut rng, 0.0, 1.0))
}

/// All members of all systems for one location and year, in (system, member) order.
pub fn gen_ensemble(
    cfg: &SyntheticConfig,
    location: &str,
    year: i32,
) -> Result<Vec<EnsembleMemberSeries>> {
    let clim = climate(cfg, location)?;
    let shared = shared_state(cfg, location, year);
    let mut out = Vec::new();
    for sys in &cfg.systems {
        for m in 0..sys.members_in(year) {
            let mut rng = cfg
                .key()
                .with_str("member")
                .with_str(&sys.name)
                .with_int(m as i64)
                .with_str(location)
                .with_int(year as i64)
                .rng();
            out.push(EnsembleMemberSeries {
                system: sys.name.clone(),
                member: m as u32,
                series: series_from(cfg, clim, year, &shared, &mut rng, sys.bias, sys.dispersion),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub locations: LocationSet,
    pub obs: ObservationSet,
    pub store: EnsembleStore,
}

/// Generates the full observation set and ensemble store for `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let locations = LocationSet::new(cfg.locations.iter().map(|c| c.location.clone()))?;
    let slots: Vec<(&str, i32)> = cfg
        .locations
        .iter()
        .flat_map(|c| cfg.years().map(move |y| (c.location.id.as_str(), y)))
        .collect();
    let generated: Vec<(DailySeries, Vec<EnsembleMemberSeries>)> = slots
        .par_iter()
        .map(|&(loc, y)| Ok((gen_truth(cfg, loc, y)?, gen_ensemble(cfg, loc, y)?)))
        .collect::<Result<_>>()?;
    let mut obs = ObservationSet::new(cfg.window);
    let mut store = EnsembleStore::new(cfg.window);
    for (truth, members) in generated {
        obs.insert(truth)?;
        for m in members {
            store.insert(m)?;
        }
    }
    Ok(SyntheticData {
        locations,
        obs,
        store,
    })
}

pub const PAPERLIKE_LOCATIONS: usize = 30;

/// The standing desk-scale scenario: 30 locations ranging from early to late
/// first freeze, 1993-2020, four warm-biased systems with 25/40/25/7 members.
/// Three systems lack 2017-2019 and the first switches to 51 members from 2017.
pub fn scenario_paperlike(seed: u64) -> SyntheticConfig {
    let n = PAPERLIKE_LOCATIONS;
    let locations = (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            let id = format!("loc{:02}", i + 1);
            // spread over a Scandinavia-sized box; later-freezing sites sit further south-west
            let lon = 28.0 - 23.0 * f + ((i * 7) % 5) as f64 * 0.37;
            let lat = 70.0 - 11.5 * f + ((i * 3) % 4) as f64 * 0.21;
            let elevation = 900.0 * (1.0 - f) * (0.5 + 0.5 * ((i % 3) as f64 / 2.0));
            LocationClimate {
                location: Location::new(id, lon, lat, elevation.round())
                    .expect("coordinates in range"),
                baseline: 2.6 + 12.4 * f,
                cooling_rate: 0.2,
            }
        })
        .collect();
    let late = [2017, 2018, 2019];
    let mut a = SystemSpec::new("sysA", 2.0, 1.0, 25);
    a.members_from = Some((2017, 51));
    let mut b = SystemSpec::new("sysB", 1.5, 0.9, 40);
    b.missing_years = late.to_vec();
    let mut c = SystemSpec::new("sysC", 2.5, 1.1, 25);
    c.missing_years = late.to_vec();
    let mut d = SystemSpec::new("sysD", 2.0, 1.0, 7);
    d.missing_years = late.to_vec();
    SyntheticConfig {
        locations,
        first_year: 1993,
        n_years: 28,
        window: ForecastWindow::default(),
        ar_coef: 0.9,
        noise_sd: 0.8,
        year_signal_sd: 2.0,
        systems: vec![a, b, c, d],
        seed,
    }
}
