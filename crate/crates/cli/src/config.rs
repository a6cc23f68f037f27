//! Run configuration: a flat `key = value` file layered under command-line
//! overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use freezecast::{ForecastWindow, LeadGroup, PostprocessConfig};
use sha2::{Digest, Sha256};

use crate::CliError;

const KEYS: &[&str] = &[
    "bins",
    "ensemble",
    "horizon",
    "init_date",
    "lead_groups",
    "locations",
    "obs",
    "out",
    "scenario",
    "seed",
    "sigma_min",
    "svg",
    "threshold",
    "window_halfwidth",
    "years",
];

const DEFAULT_GROUPS: [(usize, usize); 3] = [(1, 14), (15, 28), (75, 90)];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Observation CSV; the run directory's `observations.csv` when unset.
    pub obs: Option<PathBuf>,
    /// Raw ensemble CSV; the run directory's `ensemble.csv` when unset.
    pub ensemble: Option<PathBuf>,
    /// Root under which the run-stamped directory is created.
    pub out: PathBuf,
    pub window: ForecastWindow,
    /// Hard-freeze threshold in °C; an event is a daily mean strictly below it.
    pub threshold: f64,
    pub lead_groups: Vec<LeadGroup>,
    pub postprocess: PostprocessConfig,
    /// Master seed for synthetic data and rank tie-breaking jitter.
    pub seed: u64,
    pub scenario: String,
    /// Overrides the scenario's number of years.
    pub years: Option<usize>,
    /// Keeps only the first `n` scenario locations.
    pub locations: Option<usize>,
    /// Rank-histogram bins.
    pub bins: usize,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let window = ForecastWindow::default();
        RunConfig {
            obs: None,
            ensemble: None,
            out: PathBuf::from("out"),
            window,
            threshold: freezecast::FREEZE_THRESHOLD,
            lead_groups: default_groups(window.horizon()),
            postprocess: PostprocessConfig::default(),
            seed: 42,
            scenario: "paperlike".into(),
            years: None,
            locations: None,
            bins: 20,
            svg: false,
        }
    }
}

/// The 1-14, 15-28 and 75-90 day groups, clipped to the horizon.
fn default_groups(horizon: usize) -> Vec<LeadGroup> {
    let groups: Vec<LeadGroup> = DEFAULT_GROUPS
        .iter()
        .filter(|(a, _)| *a <= horizon)
        .map(|&(a, b)| LeadGroup::new(a, b.min(horizon)).expect("a <= b"))
        .collect();
    groups
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, source: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "{source}:{}: expected key = value",
                i + 1
            )));
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CliError::Config(format!(
                "{source}:{}: unknown key {k:?}",
                i + 1
            )));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_pairs(&text, &path.display().to_string())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Builds a config from resolved key/value pairs, filling defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, CliError> {
        if let Some(k) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        let get = |k: &str| pairs.get(k).map(String::as_str).filter(|v| !v.is_empty());
        let mut cfg = RunConfig::default();
        let horizon = match get("horizon") {
            Some(v) => parse("horizon", v)?,
            None => cfg.window.horizon(),
        };
        cfg.window = ForecastWindow::parse_init(get("init_date").unwrap_or("10-01"), horizon)?;
        cfg.obs = get("obs").map(PathBuf::from);
        cfg.ensemble = get("ensemble").map(PathBuf::from);
        if let Some(v) = get("out") {
            cfg.out = PathBuf::from(v);
        }
        if let Some(v) = get("threshold") {
            cfg.threshold = parse("threshold", v)?;
            if !cfg.threshold.is_finite() {
                return Err(CliError::Config("threshold must be finite".into()));
            }
        }
        cfg.lead_groups = match get("lead_groups") {
            Some(v) => LeadGroup::parse_list(v)?,
            None => default_groups(horizon),
        };
        if let Some(v) = get("sigma_min") {
            cfg.postprocess.sigma_min = parse("sigma_min", v)?;
            if cfg.postprocess.sigma_min.is_nan() || cfg.postprocess.sigma_min <= 0.0 {
                return Err(CliError::Config("sigma_min must be positive".into()));
            }
        }
        if let Some(v) = get("window_halfwidth") {
            cfg.postprocess.window_halfwidth = parse("window_halfwidth", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse("seed", v)?;
        }
        if let Some(v) = get("scenario") {
            cfg.scenario = v.to_string();
        }
        cfg.years = get("years").map(|v| parse("years", v)).transpose()?;
        cfg.locations = get("locations")
            .map(|v| parse("locations", v))
            .transpose()?;
        if let Some(v) = get("bins") {
            cfg.bins = parse("bins", v)?;
            if cfg.bins == 0 {
                return Err(CliError::Config("bins must be at least 1".into()));
            }
        }
        if let Some(v) = get("svg") {
            cfg.svg = parse("svg", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let h = self.window.horizon();
        let mut sorted = self.lead_groups.clone();
        sorted.sort();
        for g in &sorted {
            if g.last > h {
                return Err(CliError::Config(format!(
                    "lead group {g} extends past horizon {h}"
                )));
            }
        }
        if let Some(w) = sorted.windows(2).find(|w| w[1].first <= w[0].last) {
            return Err(CliError::Config(format!(
                "lead groups {} and {} overlap",
                w[0], w[1]
            )));
        }
        Ok(())
    }

    /// Every setting except `out`, as sorted `key = value` lines. Identical
    /// configurations give identical text.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("bins", self.bins.to_string());
        put(
            "ensemble",
            self.ensemble
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("horizon", self.window.horizon().to_string());
        put(
            "init_date",
            format!(
                "{:02}-{:02}",
                self.window.init_month(),
                self.window.init_day()
            ),
        );
        put(
            "lead_groups",
            self.lead_groups
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "locations",
            self.locations.map(|n| n.to_string()).unwrap_or_default(),
        );
        put(
            "obs",
            self.obs
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("scenario", self.scenario.clone());
        put("seed", self.seed.to_string());
        put("sigma_min", self.postprocess.sigma_min.to_string());
        put("svg", self.svg.to_string());
        put("threshold", self.threshold.to_string());
        put(
            "window_halfwidth",
            self.postprocess.window_halfwidth.to_string(),
        );
        put(
            "years",
            self.years.map(|n| n.to_string()).unwrap_or_default(),
        );
        m
    }

    /// Short hash of the canonical configuration.
    pub fn stamp(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(format!("{k}={v}\n"));
        }
        let digest = format!("{:x}", h.finalize());
        digest[..12].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!("run-{}", self.stamp()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> BTreeMap<String, String> {
        parse_pairs(text, "test").unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_pairs(&BTreeMap::new()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lead_groups.len(), 3);
        assert_eq!(cfg.window.horizon(), 92);
    }

    #[test]
    fn comments_and_blank_lines() {
        let p = pairs("# header\n\nhorizon = 30 # trailing\nseed=7\n");
        let cfg = RunConfig::from_pairs(&p).unwrap();
        assert_eq!(cfg.window.horizon(), 30);
        assert_eq!(cfg.seed, 7);
        // 75-90 no longer fits
        assert_eq!(
            cfg.lead_groups,
            LeadGroup::parse_list("1-14,15-28").unwrap()
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_pairs("nonsense", "t").is_err());
        assert!(parse_pairs("colour = red", "t").is_err());
        for bad in [
            "horizon = 0",
            "horizon = x",
            "init_date = 02-29",
            "lead_groups = 1-10,5-20",
            "lead_groups = 80-100",
            "sigma_min = 0",
            "threshold = nan",
        ] {
            assert!(RunConfig::from_pairs(&pairs(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn stamp_ignores_out_only() {
        let a = RunConfig::from_pairs(&pairs("out = a")).unwrap();
        let b = RunConfig::from_pairs(&pairs("out = b")).unwrap();
        let c = RunConfig::from_pairs(&pairs("out = a\nseed = 1")).unwrap();
        assert_eq!(a.stamp(), b.stamp());
        assert_ne!(a.stamp(), c.stamp());
        assert_ne!(a.run_dir(), b.run_dir());
    }
}
