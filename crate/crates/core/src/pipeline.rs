//! Survival forecasts for every (location, year): the leave-one-year-out
//! climatology, the raw and post-processed ensemble curves, and the
//! verifying observed curve.

use rayon::prelude::*;

use crate::data::{pooled_members, EnsembleStore, ObservationSet};
use crate::error::Result;
use crate::survival::{
    climatology_curve, forecast_curve, observed_curve, CurveModel, CurveTable, SurvivalCurve,
};

/// Builds all curves for the locations and years present in `obs`. Raw and
/// post-processed curves are omitted for years without members.
pub fn build_curves(
    obs: &ObservationSet,
    raw: &EnsembleStore,
    postprocessed: &EnsembleStore,
    threshold: f64,
) -> Result<CurveTable> {
    let slots: Vec<(String, i32)> = obs
        .iter()
        .map(|s| (s.location_id.clone(), s.year))
        .collect();
    let curves: Vec<Vec<(String, i32, CurveModel, SurvivalCurve)>> = slots
        .par_iter()
        .map(|(loc, year)| {
            let series = obs.get(loc, *year).expect("slot taken from obs");
            let mut out = vec![
                (
                    loc.clone(),
                    *year,
                    CurveModel::Observed,
                    observed_curve(series, threshold)?,
                ),
                (
                    loc.clone(),
                    *year,
                    CurveModel::Climatology,
                    climatology_curve(obs, loc, Some(*year), threshold)?,
                ),
            ];
            for (model, store) in [
                (CurveModel::Raw, raw),
                (CurveModel::Postprocessed, postprocessed),
            ] {
                let members = pooled_members(store, *year, loc);
                if !members.is_empty() {
                    let curve = forecast_curve(members.iter().map(|m| &m.series), threshold)?;
                    out.push((loc.clone(), *year, model, curve));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut table = CurveTable::new();
    for (loc, year, model, curve) in curves.into_iter().flatten() {
        table.insert(&loc, year, model, curve);
    }
    Ok(table)
}
