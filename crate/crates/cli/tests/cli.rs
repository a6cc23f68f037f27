use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use freezecast::synthetic::scenario_paperlike;
use freezecast::{
    read_rank_records, CurveModel, CurveTable, DailySeries, EnsembleMemberSeries, EnsembleStore,
    ForecastWindow, LocationSet, ObservationSet, RankRecord, ScoreReport,
};
use freezecast_cli::commands::*;
use freezecast_cli::{plot, CliError, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(out: &Path, extra: &[(&str, &str)]) -> RunConfig {
    let mut pairs: BTreeMap<String, String> = [("locations", "2"), ("years", "5")]
        .iter()
        .chain(extra)
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    pairs.insert("out".into(), out.display().to_string());
    RunConfig::from_pairs(&pairs).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_freezecast"))
}

#[test]
fn synth_is_reproducible_and_seed_dependent() {
    let tmp = tempfile::tempdir().unwrap();
    let a = cmd_synth(&config(&tmp.path().join("a"), &[])).unwrap();
    let b = cmd_synth(&config(&tmp.path().join("b"), &[])).unwrap();
    let c = cmd_synth(&config(&tmp.path().join("c"), &[("seed", "43")])).unwrap();
    for f in [OBSERVATIONS, ENSEMBLE, LOCATIONS, "manifest.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, OBSERVATIONS), read(&c, OBSERVATIONS));
    assert_ne!(read(&a, ENSEMBLE), read(&c, ENSEMBLE));
}

#[test]
fn zero_year_scenario_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cmd_synth(&config(tmp.path(), &[("years", "0")])).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn missing_observation_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere").join("obs.csv");
    let cfg = config(
        tmp.path(),
        &[
            ("obs", missing.to_str().unwrap()),
            ("ensemble", "also-missing.csv"),
        ],
    );
    let err = cmd_postprocess(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains(missing.to_str().unwrap()), "{err}");
}

/// One member per year that repeats the observation, so forecast and
/// observed climatologies coincide and post-processing is the identity.
fn identity_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let window = ForecastWindow::default();
    let h = window.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut obs = ObservationSet::new(window);
    let mut store = EnsembleStore::new(window);
    for loc in ["north", "south"] {
        for year in 2000..2006 {
            let base = if loc == "north" { 4.0 } else { 9.0 };
            let v: Vec<f64> = (0..h)
                .map(|i| base - 0.15 * i as f64 + rng.random_range(-3.0..3.0))
                .collect();
            let series = DailySeries::complete(loc, year, window, &v).unwrap();
            obs.insert(series.clone()).unwrap();
            store
                .insert(EnsembleMemberSeries {
                    system: "mirror".into(),
                    member: 0,
                    series,
                })
                .unwrap();
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    let (o, e) = (dir.join("obs.csv"), dir.join("ens.csv"));
    obs.write_csv(std::fs::File::create(&o).unwrap()).unwrap();
    store.write_csv(std::fs::File::create(&e).unwrap()).unwrap();
    (o, e)
}

#[test]
fn identity_climatology_leaves_members_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, e) = identity_fixture(&tmp.path().join("in"));
    let cfg = config(
        &tmp.path().join("out"),
        &[
            ("obs", o.to_str().unwrap()),
            ("ensemble", e.to_str().unwrap()),
        ],
    );
    let dir = cmd_postprocess(&cfg).unwrap();
    let window = cfg.window;
    let (raw, _) = EnsembleStore::load(&e, window).unwrap();
    let (pp, _) = EnsembleStore::load(&dir.join(ENSEMBLE_PP), window).unwrap();
    assert_eq!(raw.len(), pp.len());
    for m in pp.iter() {
        assert_eq!(m.system, "mirror:pp");
        let r = raw
            .slot(&m.series.location_id, m.series.year)
            .next()
            .unwrap();
        for (a, b) in m.series.values().iter().zip(r.series.values()) {
            assert!((a.unwrap() - b.unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn perfect_and_climatological_forecasts_score_one_and_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, e) = identity_fixture(&tmp.path().join("in"));
    let cfg = config(
        &tmp.path().join("out"),
        &[
            ("obs", o.to_str().unwrap()),
            ("ensemble", e.to_str().unwrap()),
        ],
    );
    let dir = cmd_run(&cfg).unwrap();
    let scores = read(&dir, SCORES);
    let mut seen = 0;
    for line in scores.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        match f[1] {
            "R" => assert_eq!(f[3], "1", "{line}"),
            "C" => assert_eq!(f[3], "0", "{line}"),
            _ => continue,
        }
        seen += 1;
    }
    assert_eq!(seen, 4);
}

#[test]
fn partial_availability_is_summarized() {
    let tmp = tempfile::tempdir().unwrap();
    // 1993 + 26 years runs through 2018, two years into the sysA-only period
    let cfg = config(
        tmp.path(),
        &[("years", "26"), ("locations", "1"), ("horizon", "20")],
    );
    cmd_synth(&cfg).unwrap();
    let dir = cmd_postprocess(&cfg).unwrap();
    let (raw, _) = EnsembleStore::load(&dir.join(ENSEMBLE), cfg.window).unwrap();
    let summary = read(&dir, PP_SUMMARY);
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let avail = raw.availability();
    assert_eq!(rows.len(), avail.len());
    for r in &rows {
        let n = avail[&(r[0].to_string(), r[1].parse().unwrap())];
        assert_eq!(r[2], n.to_string());
        assert_eq!(r[3], r[2]);
    }
    assert!(rows
        .iter()
        .any(|r| r[0] == "sysA" && r[1] == "2018" && r[2] == "51"));
    assert!(!rows.iter().any(|r| r[0] == "sysB" && r[1] == "2018"));
}

#[test]
fn empty_inputs_give_header_only_plot_tables() {
    let report = ScoreReport::default();
    let curves = CurveTable::new();
    let mut outs = vec![Vec::new(); 4];
    plot::write_skill_vs_mean_days(&report, &mut outs[0]).unwrap();
    plot::write_curve_panels(&curves, &mut outs[1]).unwrap();
    plot::write_rank_histograms(&[], 20, &mut outs[2]).unwrap();
    plot::write_brier_curves(&report, &mut outs[3]).unwrap();
    for o in outs {
        let text = String::from_utf8(o).unwrap();
        assert_eq!(text.lines().count(), 1, "{text}");
        assert!(text.ends_with('\n'));
    }
}

fn full_run(tmp: &Path) -> PathBuf {
    cmd_run(&config(tmp, &[("svg", "true")])).unwrap()
}

#[test]
fn plot_tables_agree_with_their_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = full_run(tmp.path());
    assert_eq!(read(&dir, CURVE_PANELS), read(&dir, CURVES));

    let mut expected: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (model, file) in [("R", RANKS_RAW), ("P", RANKS_PP)] {
        let recs = read_rank_records(read(&dir, file).as_bytes(), file).unwrap();
        for r in recs {
            *expected
                .entry((model.to_string(), r.group_label()))
                .or_default() += 1;
        }
    }
    let mut binned: BTreeMap<(String, String), usize> = BTreeMap::new();
    for line in read(&dir, RANK_HISTOGRAMS).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *binned
            .entry((f[0].to_string(), f[1].to_string()))
            .or_default() += f[5].parse::<usize>().unwrap();
    }
    assert_eq!(binned, expected);
    assert!(read(&dir, SKILL_SVG).starts_with("<svg"));
    assert!(read(&dir, BRIER_SVG).trim_end().ends_with("</svg>"));
}

#[test]
fn every_output_reparses() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = full_run(tmp.path());
    let window = ForecastWindow::default();
    let (obs, _) = ObservationSet::load(&dir.join(OBSERVATIONS), window).unwrap();
    let mut buf = Vec::new();
    obs.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), read(&dir, OBSERVATIONS));
    for f in [ENSEMBLE, ENSEMBLE_PP] {
        let (store, report) = EnsembleStore::load(&dir.join(f), window).unwrap();
        assert_eq!(report.rejected, 0);
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), read(&dir, f), "{f}");
    }
    assert_eq!(LocationSet::load(&dir.join(LOCATIONS)).unwrap().len(), 2);
    let curves = CurveTable::load(&dir.join(CURVES)).unwrap();
    assert!(curves.iter().any(|(k, _)| k.2 == CurveModel::Postprocessed));
    for f in [RANKS_RAW, RANKS_PP] {
        let recs: Vec<RankRecord> = read_rank_records(read(&dir, f).as_bytes(), f).unwrap();
        assert!(!recs.is_empty());
    }
    for (f, header) in [
        (SCORES, "location_id,model,ibs,ibss"),
        (BRIER, "location_id,model,t,bs"),
        (YEAR_SCORES, "year,model,ibs,ibss"),
        (
            RANK_SUMMARY_RAW,
            "location_id,lead_group,mean_rank,mean_abs_dev",
        ),
        (
            RANK_SUMMARY_PP,
            "location_id,lead_group,mean_rank,mean_abs_dev",
        ),
        (SKILL_VS_DAYS, "location_id,model,mean_days,ibss"),
        (BRIER_CURVES, "location_id,model,t,bs"),
    ] {
        let text = read(&dir, f);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(header), "{f}");
        let width = header.split(',').count();
        for l in lines {
            let fields: Vec<&str> = l.split(',').collect();
            assert_eq!(fields.len(), width, "{f}: {l}");
            let last = fields[width - 1];
            assert!(
                last == "undefined" || last.parse::<f64>().is_ok(),
                "{f}: {l}"
            );
        }
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir, "manifest.json")).unwrap();
    for stage in ["synth", "postprocess", "forecast", "verify", "plotdata"] {
        let outputs = manifest["stages"][stage]["outputs"].as_object().unwrap();
        for (name, sha) in outputs {
            let bytes = std::fs::read(dir.join(name)).unwrap();
            assert_eq!(
                sha.as_str().unwrap(),
                freezecast_cli::manifest::sha256_hex(&bytes),
                "{name}"
            );
        }
    }
}

#[test]
fn corrupted_curves_fail_verification_with_invariant_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        &[("years", "3"), ("horizon", "10"), ("locations", "1")],
    );
    cmd_synth(&cfg).unwrap();
    cmd_postprocess(&cfg).unwrap();
    let dir = cmd_forecast(&cfg).unwrap();
    let text = read(&dir, CURVES);
    // make S rise between two consecutive days of the first curve
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let f: Vec<&str> = lines[3].split(',').collect();
    lines[3] = format!("{},{},{},{},1", f[0], f[1], f[2], f[3]);
    let g: Vec<&str> = lines[2].split(',').collect();
    lines[2] = format!("{},{},{},{},0.5", g[0], g[1], g[2], g[3]);
    std::fs::write(dir.join(CURVES), lines.join("\n") + "\n").unwrap();
    let err = cmd_verify(&cfg).unwrap_err();
    assert!(
        matches!(err, CliError::Data(freezecast::Error::InvalidCurve(_))),
        "{err}"
    );
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn scenario_sizes_follow_config() {
    let cfg = config(Path::new("unused"), &[("years", "3"), ("locations", "4")]);
    let sc = scenario(&cfg).unwrap();
    assert_eq!(sc.n_years, 3);
    assert_eq!(sc.locations.len(), 4);
    assert_eq!(sc.systems, scenario_paperlike(cfg.seed).systems);
}

#[test]
fn binary_layers_flags_over_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("run.conf");
    std::fs::write(
        &conf,
        "# small run\nlocations = 1\nyears = 2\nhorizon = 15\nseed = 1\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args([
            "synth",
            "--config",
            conf.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let dir = PathBuf::from(String::from_utf8(status.stdout).unwrap().trim());
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir, "manifest.json")).unwrap();
    assert_eq!(manifest["seeds"]["master"], 5);
    assert_eq!(manifest["config"]["horizon"], "15");
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(code(&["synth", "--horizon", "0", "--out", out]), Some(2));
    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "colour = blue\n").unwrap();
    assert_eq!(
        code(&["synth", "--config", conf.to_str().unwrap(), "--out", out]),
        Some(2)
    );
    // nothing has been synthesized into this run directory yet
    assert_eq!(code(&["forecast", "--out", out, "--seed", "99"]), Some(3));
}
