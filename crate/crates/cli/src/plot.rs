//! Tidy plot tables and minimal static SVG renderings of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use freezecast::verification::rank_histogram;
use freezecast::{CurveModel, CurveTable, RankRecord, ScoreReport, Skill};

use crate::CliError;

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// `location_id,model,mean_days,ibss`; rows with undefined skill are dropped.
pub fn write_skill_vs_mean_days<W: Write>(report: &ScoreReport, out: W) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record(["location_id", "model", "mean_days", "ibss"])?;
    for s in report
        .locations
        .iter()
        .filter(|s| s.model != CurveModel::Climatology)
    {
        if let Skill::Value(v) = s.ibss {
            w.write_record([
                s.location_id.as_str(),
                s.model.label(),
                &s.mean_days.to_string(),
                &v.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Survival-curve panels in the curve table's own long format.
pub fn write_curve_panels<W: Write>(curves: &CurveTable, out: W) -> Result<(), CliError> {
    curves.write_csv(out)?;
    Ok(())
}

/// `model,lead_group,bin,lower,upper,count`: one histogram per (model, group),
/// pooled over locations and years.
pub fn write_rank_histograms<W: Write>(
    sets: &[(&str, &[RankRecord])],
    bins: usize,
    out: W,
) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record(["model", "lead_group", "bin", "lower", "upper", "count"])?;
    for (model, records) in sets {
        let mut groups: BTreeMap<String, Vec<&RankRecord>> = BTreeMap::new();
        for r in records.iter() {
            groups.entry(r.group_label()).or_default().push(r);
        }
        for (group, recs) in groups {
            for (b, count) in rank_histogram(recs, bins).into_iter().enumerate() {
                w.write_record([
                    model,
                    group.as_str(),
                    &b.to_string(),
                    &(b as f64 / bins as f64).to_string(),
                    &((b + 1) as f64 / bins as f64).to_string(),
                    &count.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean `BS(t)` over locations for each model.
pub fn mean_brier(report: &ScoreReport) -> BTreeMap<CurveModel, Vec<f64>> {
    let mut sums: BTreeMap<CurveModel, (Vec<f64>, usize)> = BTreeMap::new();
    for s in &report.locations {
        let e = sums
            .entry(s.model)
            .or_insert_with(|| (vec![0.0; s.brier.len()], 0));
        for (acc, b) in e.0.iter_mut().zip(&s.brier) {
            *acc += b;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(m, (v, n))| (m, v.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

/// `location_id,model,t,bs` per location plus `ALL` rows holding the mean
/// over locations.
pub fn write_brier_curves<W: Write>(report: &ScoreReport, out: W) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record(["location_id", "model", "t", "bs"])?;
    let mean = mean_brier(report);
    let rows = report
        .locations
        .iter()
        .map(|s| (s.location_id.as_str(), s.model, &s.brier))
        .chain(mean.iter().map(|(m, v)| ("ALL", *m, v)));
    for (loc, model, brier) in rows {
        for (i, bs) in brier.iter().enumerate() {
            w.write_record([loc, model.label(), &(i + 1).to_string(), &bs.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn colour(model: CurveModel) -> &'static str {
    match model {
        CurveModel::Climatology => "#777777",
        CurveModel::Raw => "#d95f02",
        CurveModel::Postprocessed => "#1b9e77",
        CurveModel::Observed => "#000000",
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#,
            WIDTH / 2.0
        );
        let (x0, x1, y0, y1) = (
            self.px(self.x.0),
            self.px(self.x.1),
            self.py(self.y.0),
            self.py(self.y.1),
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{x0:.1},{y1:.1} {x0:.1},{y0:.1} {x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.0}</text>"#,
                self.px(fx),
                y0 + 15.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.2}</text>"#,
                x0 - 5.0,
                self.py(fy) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{ylabel}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0
        );
        s
    }

    fn legend(&self, s: &mut String, models: &[CurveModel]) {
        for (i, m) in models.iter().enumerate() {
            let y = MARGIN + 14.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                WIDTH - MARGIN - 60.0,
                y - 9.0,
                colour(*m),
                WIDTH - MARGIN - 45.0,
                y,
                m.label()
            );
        }
    }
}

/// Scatter of IBSS against mean predicted days, IBSS clipped to [-1, 1].
pub fn skill_svg(report: &ScoreReport, horizon: usize) -> String {
    let frame = Frame {
        x: (0.0, horizon as f64),
        y: (-1.0, 1.0),
    };
    let mut s = frame.open(
        "Skill against mean predicted days",
        "mean predicted days",
        "IBSS",
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
        frame.px(0.0),
        frame.py(0.0),
        frame.px(horizon as f64),
        frame.py(0.0)
    );
    for p in &report.locations {
        if p.model == CurveModel::Climatology {
            continue;
        }
        if let Skill::Value(v) = p.ibss {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                frame.px(p.mean_days.clamp(0.0, horizon as f64)),
                frame.py(v.clamp(-1.0, 1.0)),
                colour(p.model)
            );
        }
    }
    frame.legend(&mut s, &[CurveModel::Raw, CurveModel::Postprocessed]);
    s.push_str("</svg>\n");
    s
}

/// Location-mean `BS(t)` per model.
pub fn brier_svg(report: &ScoreReport) -> String {
    let mean = mean_brier(report);
    let horizon = mean.values().map(Vec::len).max().unwrap_or(1).max(1);
    let top = mean.values().flatten().fold(0.0f64, |a, &b| a.max(b));
    let frame = Frame {
        x: (0.0, horizon as f64),
        y: (0.0, if top > 0.0 { top * 1.1 } else { 1.0 }),
    };
    let mut s = frame.open("Mean Brier score by lead time", "lead day", "BS(t)");
    for (model, v) in &mean {
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .map(|(i, b)| format!("{:.1},{:.1}", frame.px((i + 1) as f64), frame.py(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            colour(*model)
        );
    }
    let models: Vec<CurveModel> = mean.keys().copied().collect();
    frame.legend(&mut s, &models);
    s.push_str("</svg>\n");
    s
}
