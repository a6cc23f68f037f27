//! Member-by-member post-processing: each raw member is standardized against
//! its own system's hindcast climatology, then mapped onto the observed
//! climatology of the target location. Both climatologies leave the target
//! year out.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::data::{
    pooled_members, DailySeries, EnsembleMemberSeries, EnsembleStore, ForecastWindow, MemberKey,
    ObservationSet,
};
use crate::error::{Error, Result};

/// Suffix appended to the system name of post-processed members on output.
pub const PP_SUFFIX: &str = ":pp";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    /// Climatological sd at or below this value is rejected as degenerate.
    pub sigma_min: f64,
    /// Half-width of the centred day window pooled into each day's
    /// statistics; 0 means strictly per-day.
    pub window_halfwidth: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            sigma_min: 1e-6,
            window_halfwidth: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClimSource {
    Forecast(String),
    Observations,
}

impl fmt::Display for ClimSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClimSource::Forecast(s) => write!(f, "forecast system {s}"),
            ClimSource::Observations => f.write_str("observations"),
        }
    }
}

/// Per-day mean and sample sd for one location and source.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimatologyStats {
    pub location_id: String,
    pub source: ClimSource,
    pub excluded_year: Option<i32>,
    /// False when `excluded_year` was requested but had no data.
    pub exclusion_applied: bool,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub sample_count: Vec<usize>,
}

impl ClimatologyStats {
    pub fn horizon(&self) -> usize {
        self.mean.len()
    }
}

/// Per-day count, mean and sum of squared deviations of one year's samples.
#[derive(Debug, Clone)]
struct YearMoments {
    year: i32,
    n: Vec<usize>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl YearMoments {
    fn new(year: i32, series: &[&[Option<f64>]], horizon: usize, halfwidth: usize) -> Self {
        let mut n = Vec::with_capacity(horizon);
        let mut mean = Vec::with_capacity(horizon);
        let mut m2 = Vec::with_capacity(horizon);
        for day in 0..horizon {
            let lo = day.saturating_sub(halfwidth);
            let hi = (day + halfwidth).min(horizon - 1);
            let samples = || {
                series
                    .iter()
                    .flat_map(|v| v[lo..=hi].iter().flatten().copied())
            };
            let count = samples().count();
            let m = if count > 0 {
                samples().sum::<f64>() / count as f64
            } else {
                0.0
            };
            n.push(count);
            mean.push(m);
            m2.push(samples().map(|x| (x - m) * (x - m)).sum());
        }
        YearMoments { year, n, mean, m2 }
    }
}

/// Per-year moments for one (location, source), from which leave-one-year-out
/// statistics are combined without revisiting the raw samples.
#[derive(Debug, Clone)]
pub struct ClimatologyBuilder {
    location_id: String,
    source: ClimSource,
    horizon: usize,
    years: Vec<YearMoments>,
}

impl ClimatologyBuilder {
    fn from_groups<'a>(
        location_id: &str,
        source: ClimSource,
        horizon: usize,
        halfwidth: usize,
        groups: impl IntoIterator<Item = (i32, Vec<&'a [Option<f64>]>)>,
    ) -> Self {
        let years = groups
            .into_iter()
            .map(|(y, series)| YearMoments::new(y, &series, horizon, halfwidth))
            .collect();
        ClimatologyBuilder {
            location_id: location_id.to_string(),
            source,
            horizon,
            years,
        }
    }

    /// Hindcast samples of one system at one location, grouped by year.
    pub fn for_system(
        store: &EnsembleStore,
        system: &str,
        location: &str,
        cfg: &PostprocessConfig,
    ) -> Self {
        let groups = store.years().into_iter().filter_map(|y| {
            let series: Vec<_> = store
                .slot(location, y)
                .filter(|m| m.system == system)
                .map(|m| m.series.values())
                .collect();
            (!series.is_empty()).then_some((y, series))
        });
        Self::from_groups(
            location,
            ClimSource::Forecast(system.to_string()),
            store.window().horizon(),
            cfg.window_halfwidth,
            groups,
        )
    }

    pub fn for_observations(obs: &ObservationSet, location: &str, cfg: &PostprocessConfig) -> Self {
        let groups = obs
            .for_location(location)
            .map(|s| (s.year, vec![s.values()]));
        Self::from_groups(
            location,
            ClimSource::Observations,
            obs.window().horizon(),
            cfg.window_halfwidth,
            groups,
        )
    }

    /// Mean and sample (n - 1) sd per day over every year except `exclude_year`.
    pub fn stats(&self, exclude_year: Option<i32>) -> Result<ClimatologyStats> {
        let applied = exclude_year.is_some_and(|y| self.years.iter().any(|m| m.year == y));
        if exclude_year.is_some() && !applied {
            log::warn!(
                "{} at {}: excluded year {exclude_year:?} not present",
                self.source,
                self.location_id
            );
        }
        let kept: Vec<&YearMoments> = self
            .years
            .iter()
            .filter(|m| Some(m.year) != exclude_year)
            .collect();
        let mut mean = Vec::with_capacity(self.horizon);
        let mut sd = Vec::with_capacity(self.horizon);
        let mut sample_count = Vec::with_capacity(self.horizon);
        for day in 0..self.horizon {
            let n: usize = kept.iter().map(|m| m.n[day]).sum();
            if n < 2 {
                return Err(Error::InsufficientSamples {
                    day: day + 1,
                    count: n,
                });
            }
            let m = kept
                .iter()
                .map(|g| g.n[day] as f64 * g.mean[day])
                .sum::<f64>()
                / n as f64;
            // pooled sum of squares: within-year part plus between-year part
            let m2: f64 = kept
                .iter()
                .map(|g| g.m2[day] + g.n[day] as f64 * (g.mean[day] - m).powi(2))
                .sum();
            mean.push(m);
            sd.push((m2 / (n - 1) as f64).sqrt());
            sample_count.push(n);
        }
        Ok(ClimatologyStats {
            location_id: self.location_id.clone(),
            source: self.source.clone(),
            excluded_year: exclude_year,
            exclusion_applied: applied,
            mean,
            sd,
            sample_count,
        })
    }
}

/// Hindcast climatology of one system at one location, pooled jointly over
/// members and years other than `exclude_year`.
pub fn forecast_climatology(
    store: &EnsembleStore,
    system: &str,
    location: &str,
    exclude_year: Option<i32>,
    cfg: &PostprocessConfig,
) -> Result<ClimatologyStats> {
    ClimatologyBuilder::for_system(store, system, location, cfg).stats(exclude_year)
}

/// Observed climatology at one location over years other than `exclude_year`.
pub fn obs_climatology(
    obs: &ObservationSet,
    location: &str,
    exclude_year: Option<i32>,
    cfg: &PostprocessConfig,
) -> Result<ClimatologyStats> {
    ClimatologyBuilder::for_observations(obs, location, cfg).stats(exclude_year)
}

/// Standardized anomalies of one member, tagged with the member's identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    pub raw: MemberKey,
    pub window: ForecastWindow,
    pub values: Vec<Option<f64>>,
}

/// A post-processed member, linked back to the raw member it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessedMember {
    pub raw: MemberKey,
    pub series: DailySeries,
}

impl PostprocessedMember {
    /// The member as it appears in a post-processed store (system + `:pp`).
    pub fn to_member_series(&self) -> EnsembleMemberSeries {
        EnsembleMemberSeries {
            system: format!("{}{PP_SUFFIX}", self.raw.system),
            member: self.raw.member,
            series: self.series.clone(),
        }
    }
}

/// `(f - mean) / sd` per day against the member's own system climatology.
pub fn standardize_member(
    raw: &EnsembleMemberSeries,
    clim: &ClimatologyStats,
    sigma_min: f64,
) -> Result<AnomalySeries> {
    let expected = ClimSource::Forecast(raw.system.clone());
    if clim.source != expected {
        return Err(Error::SourceMismatch {
            expected: expected.to_string(),
            got: clim.source.to_string(),
        });
    }
    if clim.horizon() != raw.series.horizon() {
        return Err(Error::LengthMismatch {
            expected: raw.series.horizon(),
            got: clim.horizon(),
        });
    }
    if let Some(day) = clim.sd.iter().position(|&s| s <= sigma_min) {
        return Err(Error::DegenerateSd { day: day + 1 });
    }
    let values = raw
        .series
        .values()
        .iter()
        .zip(clim.mean.iter().zip(&clim.sd))
        .map(|(v, (m, s))| v.map(|x| (x - m) / s))
        .collect();
    Ok(AnomalySeries {
        raw: raw.key(),
        window: raw.series.window,
        values,
    })
}

/// `anomaly * sd + mean` per day against the observed climatology.
pub fn restandardize_member(
    anom: &AnomalySeries,
    obs_clim: &ClimatologyStats,
) -> Result<PostprocessedMember> {
    if obs_clim.source != ClimSource::Observations {
        return Err(Error::SourceMismatch {
            expected: ClimSource::Observations.to_string(),
            got: obs_clim.source.to_string(),
        });
    }
    if obs_clim.horizon() != anom.values.len() {
        return Err(Error::LengthMismatch {
            expected: anom.values.len(),
            got: obs_clim.horizon(),
        });
    }
    let values = anom
        .values
        .iter()
        .zip(obs_clim.mean.iter().zip(&obs_clim.sd))
        .map(|(a, (m, s))| a.map(|x| x * s + m))
        .collect();
    Ok(PostprocessedMember {
        raw: anom.raw.clone(),
        series: DailySeries::new(
            anom.raw.location.clone(),
            anom.raw.year,
            anom.window,
            values,
        )?,
    })
}

/// Post-processes every member available for (year, location), keeping the
/// raw member order. Climatologies leave `year` out.
pub fn postprocess_ensemble(
    store: &EnsembleStore,
    obs: &ObservationSet,
    year: i32,
    location: &str,
    cfg: &PostprocessConfig,
) -> Result<Vec<PostprocessedMember>> {
    let obs_builder = ClimatologyBuilder::for_observations(obs, location, cfg);
    let mut builders = BTreeMap::new();
    postprocess_slot(store, &obs_builder, &mut builders, year, location, cfg)
}

fn postprocess_slot(
    store: &EnsembleStore,
    obs_builder: &ClimatologyBuilder,
    builders: &mut BTreeMap<String, ClimatologyBuilder>,
    year: i32,
    location: &str,
    cfg: &PostprocessConfig,
) -> Result<Vec<PostprocessedMember>> {
    let members = pooled_members(store, year, location);
    if members.is_empty() {
        return Ok(Vec::new());
    }
    let obs_clim = obs_builder.stats(Some(year))?;
    let mut system_clim: BTreeMap<&str, ClimatologyStats> = BTreeMap::new();
    let mut out = Vec::with_capacity(members.len());
    for m in members {
        if !system_clim.contains_key(m.system.as_str()) {
            let builder = builders
                .entry(m.system.clone())
                .or_insert_with(|| ClimatologyBuilder::for_system(store, &m.system, location, cfg));
            system_clim.insert(&m.system, builder.stats(Some(year))?);
        }
        let anom = standardize_member(m, &system_clim[m.system.as_str()], cfg.sigma_min)?;
        out.push(restandardize_member(&anom, &obs_clim)?);
    }
    Ok(out)
}

/// Post-processes every (location, year) slot of the store. Output systems
/// carry the `:pp` suffix. Locations without observations are skipped and
/// returned in the second element.
pub fn postprocess_store(
    store: &EnsembleStore,
    obs: &ObservationSet,
    cfg: &PostprocessConfig,
) -> Result<(EnsembleStore, Vec<String>)> {
    let obs_locations = obs.locations();
    let (with_obs, skipped): (Vec<String>, Vec<String>) = store
        .locations()
        .into_iter()
        .partition(|l| obs_locations.binary_search(l).is_ok());
    let years = store.years();
    let processed: Vec<Vec<PostprocessedMember>> = with_obs
        .par_iter()
        .map(|loc| {
            let obs_builder = ClimatologyBuilder::for_observations(obs, loc, cfg);
            let mut builders = BTreeMap::new();
            let mut out = Vec::new();
            for &y in &years {
                out.extend(postprocess_slot(
                    store,
                    &obs_builder,
                    &mut builders,
                    y,
                    loc,
                    cfg,
                )?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut out = EnsembleStore::new(store.window());
    for m in processed.into_iter().flatten() {
        out.insert(m.to_member_series())?;
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(h: usize) -> ForecastWindow {
        ForecastWindow::new(10, 1, h).unwrap()
    }

    fn member(sys: &str, m: u32, year: i32, vals: &[f64]) -> EnsembleMemberSeries {
        EnsembleMemberSeries {
            system: sys.into(),
            member: m,
            series: DailySeries::complete("x", year, w(vals.len()), vals).unwrap(),
        }
    }

    fn cfg() -> PostprocessConfig {
        PostprocessConfig::default()
    }

    #[test]
    fn forecast_climatology_examples() {
        let mut store = EnsembleStore::new(w(3));
        store.insert(member("k", 0, 1, &[1.0; 3])).unwrap();
        store.insert(member("k", 0, 2, &[3.0; 3])).unwrap();
        let c = forecast_climatology(&store, "k", "x", None, &cfg()).unwrap();
        for t in 0..3 {
            assert_eq!(c.mean[t], 2.0);
            assert!((c.sd[t] - 2f64.sqrt()).abs() < 1e-15);
            assert_eq!(c.sample_count[t], 2);
        }
        assert!(matches!(
            forecast_climatology(&store, "k", "x", Some(2), &cfg()),
            Err(Error::InsufficientSamples { day: 1, count: 1 })
        ));

        let mut flat = EnsembleStore::new(w(3));
        for y in 1..=3 {
            for m in 0..2 {
                flat.insert(member("k", m, y, &[5.0; 3])).unwrap();
            }
        }
        let c = forecast_climatology(&flat, "k", "x", None, &cfg()).unwrap();
        assert_eq!(c.mean, vec![5.0; 3]);
        assert_eq!(c.sd, vec![0.0; 3]);
    }

    fn obs_set(years: &[(i32, f64)], h: usize) -> ObservationSet {
        let mut obs = ObservationSet::new(w(h));
        for &(y, v) in years {
            obs.insert(DailySeries::complete("x", y, w(h), &vec![v; h]).unwrap())
                .unwrap();
        }
        obs
    }

    #[test]
    fn obs_climatology_examples() {
        let obs = obs_set(&[(1, 0.0), (2, 2.0), (3, 4.0)], 2);
        let c = obs_climatology(&obs, "x", Some(2), &cfg()).unwrap();
        assert_eq!(c.mean, vec![2.0, 2.0]);
        // sample variance of {0, 4} is 8
        assert!((c.sd[0] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert!(c.exclusion_applied);

        let c = obs_climatology(&obs, "x", Some(1999), &cfg()).unwrap();
        assert!(!c.exclusion_applied);
        assert_eq!(c.sample_count, vec![3, 3]);
        assert_eq!(c.mean, vec![2.0, 2.0]);

        let two = obs_set(&[(1, 0.0), (2, 2.0)], 2);
        assert!(obs_climatology(&two, "x", Some(1), &cfg()).is_err());
    }

    #[test]
    fn missing_values_reduce_sample_count() {
        let mut obs = obs_set(&[(1, 0.0), (2, 2.0), (3, 4.0)], 2);
        let mut s = obs.get("x", 3).unwrap().clone();
        s.set(2, None);
        obs.insert(s).unwrap();
        let c = obs_climatology(&obs, "x", None, &cfg()).unwrap();
        assert_eq!(c.sample_count, vec![3, 2]);
        assert_eq!(c.mean, vec![2.0, 1.0]);
    }

    #[test]
    fn pooling_window_widens_samples() {
        let mut obs = ObservationSet::new(w(3));
        obs.insert(DailySeries::complete("x", 1, w(3), &[0.0, 1.0, 2.0]).unwrap())
            .unwrap();
        obs.insert(DailySeries::complete("x", 2, w(3), &[2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let c = obs_climatology(
            &obs,
            "x",
            None,
            &PostprocessConfig {
                window_halfwidth: 1,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(c.sample_count, vec![4, 6, 4]);
        assert_eq!(c.mean, vec![1.5, 2.0, 2.5]);
    }

    fn clim(source: ClimSource, mean: &[f64], sd: &[f64]) -> ClimatologyStats {
        ClimatologyStats {
            location_id: "x".into(),
            source,
            excluded_year: None,
            exclusion_applied: false,
            mean: mean.to_vec(),
            sd: sd.to_vec(),
            sample_count: vec![10; mean.len()],
        }
    }

    #[test]
    fn standardize_examples() {
        let k = ClimSource::Forecast("k".into());
        let c = clim(k.clone(), &[1.0, 1.0], &[2.0, 4.0]);
        let a = standardize_member(&member("k", 0, 1, &[3.0, 5.0]), &c, 1e-6).unwrap();
        assert_eq!(a.values, vec![Some(1.0), Some(1.0)]);
        let a = standardize_member(&member("k", 0, 1, &[1.0, 1.0]), &c, 1e-6).unwrap();
        assert_eq!(a.values, vec![Some(0.0), Some(0.0)]);
        let a = standardize_member(&member("k", 0, 1, &[3.0, 5.0]), &c, 1e-6).unwrap();
        assert_eq!(a.values, vec![Some(1.0); 2]);

        let degenerate = clim(k, &[1.0, 1.0], &[2.0, 0.0]);
        assert!(matches!(
            standardize_member(&member("k", 0, 1, &[3.0, 5.0]), &degenerate, 1e-6),
            Err(Error::DegenerateSd { day: 2 })
        ));
        let wrong = clim(ClimSource::Forecast("j".into()), &[1.0, 1.0], &[2.0, 4.0]);
        assert!(matches!(
            standardize_member(&member("k", 0, 1, &[3.0, 5.0]), &wrong, 1e-6),
            Err(Error::SourceMismatch { .. })
        ));
    }

    #[test]
    fn restandardize_examples() {
        let o = clim(ClimSource::Observations, &[0.0, 0.0], &[2.0, 3.0]);
        let anom = AnomalySeries {
            raw: member("k", 0, 1, &[0.0, 0.0]).key(),
            window: w(2),
            values: vec![Some(1.0), Some(-1.0)],
        };
        let pp = restandardize_member(&anom, &o).unwrap();
        assert_eq!(pp.series.values(), &[Some(2.0), Some(-3.0)]);
        assert_eq!(pp.to_member_series().system, "k:pp");

        let zero = AnomalySeries {
            values: vec![Some(0.0); 2],
            ..anom.clone()
        };
        let om = clim(ClimSource::Observations, &[1.5, -2.0], &[2.0, 3.0]);
        assert_eq!(
            restandardize_member(&zero, &om).unwrap().series.values(),
            &[Some(1.5), Some(-2.0)]
        );

        let short = clim(ClimSource::Observations, &[0.0], &[1.0]);
        assert!(matches!(
            restandardize_member(&anom, &short),
            Err(Error::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn standardize_then_restandardize_is_identity(
            vals in prop::collection::vec(-20.0f64..20.0, 5),
            mean in prop::collection::vec(-10.0f64..10.0, 5),
            sd in prop::collection::vec(0.1f64..6.0, 5),
        ) {
            let raw = member("k", 0, 1, &vals);
            let fc = clim(ClimSource::Forecast("k".into()), &mean, &sd);
            let ob = clim(ClimSource::Observations, &mean, &sd);
            let pp = restandardize_member(&standardize_member(&raw, &fc, 1e-6).unwrap(), &ob).unwrap();
            for (a, b) in pp.series.values().iter().zip(&vals) {
                prop_assert!((a.unwrap() - b).abs() <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn leave_one_out_matches_direct_two_pass(
            data in prop::collection::vec(prop::collection::vec(-15.0f64..15.0, 3 * 3), 3..7),
            exclude in 0usize..7,
        ) {
            let mut store = EnsembleStore::new(w(3));
            for (y, vals) in data.iter().enumerate() {
                for m in 0..3 {
                    store.insert(member("k", m as u32, y as i32, &vals[m * 3..m * 3 + 3])).unwrap();
                }
            }
            let excl = exclude as i32;
            let c = forecast_climatology(&store, "k", "x", Some(excl), &cfg()).unwrap();
            for t in 0..3 {
                let xs: Vec<f64> = data
                    .iter()
                    .enumerate()
                    .filter(|(y, _)| *y as i32 != excl)
                    .flat_map(|(_, v)| (0..3).map(move |m| v[m * 3 + t]))
                    .collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((c.mean[t] - mean).abs() < 1e-12);
                prop_assert!((c.sd[t] - var.sqrt()).abs() < 1e-12);
                prop_assert_eq!(c.sample_count[t], xs.len());
            }
        }
    }

    #[test]
    fn empty_slot_gives_empty_output() {
        let store = EnsembleStore::new(w(2));
        let obs = obs_set(&[(1, 0.0), (2, 2.0), (3, 4.0)], 2);
        assert!(postprocess_ensemble(&store, &obs, 2, "x", &cfg())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn year_data_does_not_leak_into_its_own_climatology() {
        let mut store = EnsembleStore::new(w(2));
        for y in 1..=4 {
            for m in 0..3 {
                store
                    .insert(member("k", m, y, &[y as f64 + m as f64, 0.5 * y as f64]))
                    .unwrap();
            }
        }
        let base = forecast_climatology(&store, "k", "x", Some(4), &cfg()).unwrap();
        let mut perturbed = EnsembleStore::new(w(2));
        for m in store.iter() {
            let mut m = m.clone();
            if m.series.year == 4 {
                m.series = DailySeries::complete("x", 4, w(2), &[100.0, -100.0]).unwrap();
            }
            perturbed.insert(m).unwrap();
        }
        assert_eq!(
            forecast_climatology(&perturbed, "k", "x", Some(4), &cfg()).unwrap(),
            base
        );
    }
}
