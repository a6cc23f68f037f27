//! Observation and ensemble containers, the forecast-window day index, and
//! the CSV formats they travel in.
//!
//! Day indices run `t = 1..=H` with `t = 1` on the initialization date.
//! Missing values are `None` in memory and an empty field on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};

use crate::error::{Error, Result};

/// Seasonal initialization day (month/day) and horizon `H` in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ForecastWindow {
    init_month: u32,
    init_day: u32,
    horizon: usize,
}

impl Default for ForecastWindow {
    /// October 1 with H = 92, so day 92 is December 31.
    fn default() -> Self {
        ForecastWindow {
            init_month: 10,
            init_day: 1,
            horizon: 92,
        }
    }
}

impl ForecastWindow {
    pub fn new(init_month: u32, init_day: u32, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if horizon > 365 {
            return Err(Error::Config(
                "horizon longer than a year is ambiguous".into(),
            ));
        }
        // 2001 is not a leap year, which also rules out Feb 29 initializations
        if NaiveDate::from_ymd_opt(2001, init_month, init_day).is_none() {
            return Err(Error::Config(format!(
                "invalid initialization day {init_month:02}-{init_day:02}"
            )));
        }
        Ok(ForecastWindow {
            init_month,
            init_day,
            horizon,
        })
    }

    /// Parses `MM-DD` or `YYYY-MM-DD` (the year is ignored).
    pub fn parse_init(text: &str, horizon: usize) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split('-').collect();
        let (m, d) = match parts.as_slice() {
            [m, d] | [_, m, d] => (m.parse::<u32>(), d.parse::<u32>()),
            _ => return Err(Error::Config(format!("bad init date {text:?}"))),
        };
        match (m, d) {
            (Ok(m), Ok(d)) => Self::new(m, d, horizon),
            _ => Err(Error::Config(format!("bad init date {text:?}"))),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn init_month(&self) -> u32 {
        self.init_month
    }

    pub fn init_day(&self) -> u32 {
        self.init_day
    }

    pub fn init_date(&self, year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, self.init_month, self.init_day)
            .expect("validated at construction")
    }

    /// Calendar date of day `t` (1-based) in `year`'s window.
    pub fn date_of(&self, year: i32, t: usize) -> NaiveDate {
        self.init_date(year) + Duration::days(t as i64 - 1)
    }

    /// Day index of `date` within the window initialized in `year`.
    pub fn day_index(&self, year: i32, date: NaiveDate) -> Option<usize> {
        let t = (date - self.init_date(year)).num_days() + 1;
        (1..=self.horizon as i64).contains(&t).then_some(t as usize)
    }

    /// The (year, t) whose window contains `date`, if any.
    pub fn locate(&self, date: NaiveDate) -> Option<(i32, usize)> {
        [date.year(), date.year() - 1]
            .into_iter()
            .find_map(|y| self.day_index(y, date).map(|t| (y, t)))
    }
}

/// One year's daily mean temperatures (°C) over the forecast window.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub location_id: String,
    pub year: i32,
    pub window: ForecastWindow,
    values: Vec<Option<f64>>,
}

impl DailySeries {
    pub fn new(
        location_id: impl Into<String>,
        year: i32,
        window: ForecastWindow,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if values.len() != window.horizon() {
            return Err(Error::LengthMismatch {
                expected: window.horizon(),
                got: values.len(),
            });
        }
        Ok(DailySeries {
            location_id: location_id.into(),
            year,
            window,
            values,
        })
    }

    /// Builds a complete series; the window horizon is taken from `values`.
    pub fn complete(
        location_id: impl Into<String>,
        year: i32,
        window: ForecastWindow,
        values: &[f64],
    ) -> Result<Self> {
        Self::new(
            location_id,
            year,
            window,
            values.iter().copied().map(Some).collect(),
        )
    }

    pub fn empty(location_id: impl Into<String>, year: i32, window: ForecastWindow) -> Self {
        DailySeries {
            location_id: location_id.into(),
            year,
            window,
            values: vec![None; window.horizon()],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    /// Value on day `t` (1-based).
    pub fn at(&self, t: usize) -> Option<f64> {
        self.values.get(t.checked_sub(1)?).copied().flatten()
    }

    pub fn set(&mut self, t: usize, value: Option<f64>) {
        self.values[t - 1] = value;
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Values as plain floats, `None` if any day is missing.
    pub fn to_complete(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }
}

/// Sub-daily temperatures, `per_day` regular readings for each of H days.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdailySeries {
    pub location_id: String,
    pub year: i32,
    pub window: ForecastWindow,
    pub per_day: usize,
    pub values: Vec<Option<f64>>,
}

impl SubdailySeries {
    /// Arithmetic mean per day; a day with any missing reading is missing.
    pub fn daily_mean(&self) -> Result<DailySeries> {
        let expected = self.window.horizon() * self.per_day;
        if self.per_day == 0 || self.values.len() != expected {
            return Err(Error::MalformedSubdaily {
                expected,
                got: self.values.len(),
            });
        }
        let q = self.per_day as f64;
        let means = self
            .values
            .chunks(self.per_day)
            .map(|day| day.iter().copied().sum::<Option<f64>>().map(|s| s / q))
            .collect();
        DailySeries::new(self.location_id.clone(), self.year, self.window, means)
    }
}

/// Rows read vs. rows dropped for falling outside the forecast window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub rejected: usize,
}

/// Observed daily series keyed by (location, year).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    window: ForecastWindow,
    series: BTreeMap<(String, i32), DailySeries>,
}

impl ObservationSet {
    pub fn new(window: ForecastWindow) -> Self {
        ObservationSet {
            window,
            series: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> ForecastWindow {
        self.window
    }

    pub fn insert(&mut self, series: DailySeries) -> Result<()> {
        if series.window != self.window {
            return Err(Error::Config(
                "series window differs from observation set".into(),
            ));
        }
        self.series
            .insert((series.location_id.clone(), series.year), series);
        Ok(())
    }

    pub fn get(&self, location: &str, year: i32) -> Option<&DailySeries> {
        self.series.get(&(location.to_string(), year))
    }

    /// All years for one location, ascending.
    pub fn for_location<'a>(
        &'a self,
        location: &'a str,
    ) -> impl Iterator<Item = &'a DailySeries> + 'a {
        self.series
            .range((location.to_string(), i32::MIN)..=(location.to_string(), i32::MAX))
            .map(|(_, s)| s)
    }

    pub fn locations(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.series.keys().map(|(l, _)| l).collect();
        set.into_iter().cloned().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.series.keys().map(|(_, y)| *y).collect();
        set.into_iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DailySeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Reads `location_id,date,tmean`.
    pub fn read_csv<R: Read>(
        reader: R,
        window: ForecastWindow,
        source: &str,
    ) -> Result<(Self, LoadReport)> {
        let mut rdr = csv_reader(reader);
        check_header(&mut rdr, &["location_id", "date", "tmean"], source)?;
        let mut obs = ObservationSet::new(window);
        let mut seen = BTreeSet::new();
        let mut report = LoadReport::default();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| schema(source, line, e.to_string()))?;
            report.rows += 1;
            let loc = field(&rec, 0);
            let date = parse_date(field(&rec, 1), source, line)?;
            let value = parse_value(field(&rec, 2), source, line)?;
            if !seen.insert((loc.to_string(), date)) {
                return Err(schema(
                    source,
                    line,
                    format!("duplicate row for {loc} on {date}"),
                ));
            }
            let Some((year, t)) = window.locate(date) else {
                report.rejected += 1;
                continue;
            };
            obs.series
                .entry((loc.to_string(), year))
                .or_insert_with(|| DailySeries::empty(loc, year, window))
                .set(t, value);
        }
        Ok((obs, report))
    }

    pub fn load(path: &Path, window: ForecastWindow) -> Result<(Self, LoadReport)> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, window, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["location_id", "date", "tmean"])?;
        for s in self.series.values() {
            for (i, v) in s.values.iter().enumerate() {
                let date = self.window.date_of(s.year, i + 1);
                w.write_record([s.location_id.as_str(), &date.to_string(), &format_value(*v)])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Identity of one ensemble member trajectory. Field order gives the store's
/// iteration order: system, member, year, location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemberKey {
    pub system: String,
    pub member: u32,
    pub year: i32,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMemberSeries {
    pub system: String,
    pub member: u32,
    pub series: DailySeries,
}

impl EnsembleMemberSeries {
    pub fn key(&self) -> MemberKey {
        MemberKey {
            system: self.system.clone(),
            member: self.member,
            year: self.series.year,
            location: self.series.location_id.clone(),
        }
    }
}

/// Frozen-after-build collection of ensemble members with a
/// (system, year) → member-count availability index.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStore {
    window: ForecastWindow,
    members: BTreeMap<MemberKey, EnsembleMemberSeries>,
    by_slot: BTreeMap<(String, i32), Vec<MemberKey>>,
    availability: BTreeMap<(String, i32), BTreeSet<u32>>,
}

impl EnsembleStore {
    pub fn new(window: ForecastWindow) -> Self {
        EnsembleStore {
            window,
            members: BTreeMap::new(),
            by_slot: BTreeMap::new(),
            availability: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> ForecastWindow {
        self.window
    }

    /// Inserts a member; an existing entry with the same key is an error.
    pub fn insert(&mut self, member: EnsembleMemberSeries) -> Result<()> {
        if member.series.window != self.window {
            return Err(Error::Config("member window differs from store".into()));
        }
        let key = member.key();
        if self.members.contains_key(&key) {
            return Err(Error::Config(format!(
                "duplicate member {}/{} for {} {}",
                key.system, key.member, key.location, key.year
            )));
        }
        self.availability
            .entry((key.system.clone(), key.year))
            .or_default()
            .insert(key.member);
        let slot = self
            .by_slot
            .entry((key.location.clone(), key.year))
            .or_default();
        let pos = slot.binary_search(&key).unwrap_or_else(|p| p);
        slot.insert(pos, key.clone());
        self.members.insert(key, member);
        Ok(())
    }

    pub fn get(&self, key: &MemberKey) -> Option<&EnsembleMemberSeries> {
        self.members.get(key)
    }

    /// Members in (system, member, year, location) order.
    pub fn iter(&self) -> impl Iterator<Item = &EnsembleMemberSeries> {
        self.members.values()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Distinct member count per (system, year).
    pub fn availability(&self) -> BTreeMap<(String, i32), usize> {
        self.availability
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    pub fn systems(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.availability.keys().map(|(s, _)| s).collect();
        set.into_iter().cloned().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.availability.keys().map(|(_, y)| *y).collect();
        set.into_iter().collect()
    }

    pub fn locations(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.by_slot.keys().map(|(l, _)| l).collect();
        set.into_iter().cloned().collect()
    }

    /// All members of every system for (location, year), in (system, member) order.
    pub fn slot(&self, location: &str, year: i32) -> impl Iterator<Item = &EnsembleMemberSeries> {
        self.by_slot
            .get(&(location.to_string(), year))
            .into_iter()
            .flatten()
            .map(|k| &self.members[k])
    }

    /// Copy restricted to the systems accepted by `keep`.
    pub fn subset(&self, mut keep: impl FnMut(&str) -> bool) -> EnsembleStore {
        let mut out = EnsembleStore::new(self.window);
        for m in self.members.values().filter(|m| keep(&m.system)) {
            out.insert(m.clone())
                .expect("keys are unique in the source store");
        }
        out
    }

    /// Reads `system,member,init_date,valid_date,location_id,tmean`.
    ///
    /// Rows whose init date is not the window's initialization day, or whose
    /// valid date falls outside the window, are dropped and counted.
    pub fn read_csv<R: Read>(
        reader: R,
        window: ForecastWindow,
        source: &str,
    ) -> Result<(Self, LoadReport)> {
        let mut rdr = csv_reader(reader);
        check_header(
            &mut rdr,
            &[
                "system",
                "member",
                "init_date",
                "valid_date",
                "location_id",
                "tmean",
            ],
            source,
        )?;
        let mut report = LoadReport::default();
        let mut series: BTreeMap<MemberKey, DailySeries> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| schema(source, line, e.to_string()))?;
            report.rows += 1;
            let system = field(&rec, 0);
            if system.is_empty() {
                return Err(schema(source, line, "empty system".into()));
            }
            let member: u32 = field(&rec, 1)
                .parse()
                .map_err(|_| schema(source, line, "unparseable member".into()))?;
            let init = parse_date(field(&rec, 2), source, line)?;
            let valid = parse_date(field(&rec, 3), source, line)?;
            let location = field(&rec, 4);
            let value = parse_value(field(&rec, 5), source, line)?;
            if !seen.insert((
                system.to_string(),
                member,
                init,
                valid,
                location.to_string(),
            )) {
                return Err(schema(
                    source,
                    line,
                    format!("duplicate row for {system}/{member} at {location} valid {valid}"),
                ));
            }
            let year = init.year();
            let t = match window.day_index(year, valid) {
                Some(t) if window.init_date(year) == init => t,
                _ => {
                    report.rejected += 1;
                    continue;
                }
            };
            let key = MemberKey {
                system: system.to_string(),
                member,
                year,
                location: location.to_string(),
            };
            series
                .entry(key)
                .or_insert_with(|| DailySeries::empty(location, year, window))
                .set(t, value);
        }
        let mut store = EnsembleStore::new(window);
        for (key, s) in series {
            store.insert(EnsembleMemberSeries {
                system: key.system,
                member: key.member,
                series: s,
            })?;
        }
        Ok((store, report))
    }

    pub fn load(path: &Path, window: ForecastWindow) -> Result<(Self, LoadReport)> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, window, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record([
            "system",
            "member",
            "init_date",
            "valid_date",
            "location_id",
            "tmean",
        ])?;
        for m in self.members.values() {
            let s = &m.series;
            let init = self.window.init_date(s.year).to_string();
            let member = m.member.to_string();
            for (i, v) in s.values.iter().enumerate() {
                let valid = self.window.date_of(s.year, i + 1).to_string();
                w.write_record([
                    m.system.as_str(),
                    &member,
                    &init,
                    &valid,
                    &s.location_id,
                    &format_value(*v),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Every member of every system available for (year, location), ordered by
/// (system, member).
pub fn pooled_members<'a>(
    store: &'a EnsembleStore,
    year: i32,
    location: &str,
) -> Vec<&'a EnsembleMemberSeries> {
    store.slot(location, year).collect()
}

/// Shortest representation that parses back to the identical f64.
pub(crate) fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader)
}

pub(crate) fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

pub(crate) fn check_header<R: Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    source: &str,
) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| schema(source, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(schema(
            source,
            1,
            format!(
                "bad header {:?}, expected {:?}",
                got.join(","),
                expected.join(",")
            ),
        ));
    }
    Ok(())
}

pub(crate) fn schema(source: &str, line: u64, reason: String) -> Error {
    Error::Schema {
        path: source.to_string(),
        line,
        reason,
    }
}

pub(crate) fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

fn parse_date(text: &str, source: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| schema(source, line, format!("unparseable date {text:?}")))
}

fn parse_value(text: &str, source: &str, line: u64) -> Result<Option<f64>> {
    if text.is_empty() {
        return Ok(None);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(schema(source, line, format!("unparseable number {text:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(h: usize) -> ForecastWindow {
        ForecastWindow::new(10, 1, h).unwrap()
    }

    #[test]
    fn default_window_ends_on_new_years_eve() {
        let win = ForecastWindow::default();
        assert_eq!(win.horizon(), 92);
        assert_eq!(
            win.date_of(2020, 1),
            NaiveDate::from_ymd_opt(2020, 10, 1).unwrap()
        );
        assert_eq!(
            win.date_of(2020, 92),
            NaiveDate::from_ymd_opt(2020, 12, 31).unwrap()
        );
        assert_eq!(
            win.locate(NaiveDate::from_ymd_opt(2020, 12, 31).unwrap()),
            Some((2020, 92))
        );
        assert_eq!(
            win.locate(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()),
            None
        );
        assert_eq!(
            win.locate(NaiveDate::from_ymd_opt(2020, 9, 30).unwrap()),
            None
        );
    }

    #[test]
    fn window_across_new_year() {
        let win = ForecastWindow::parse_init("2000-11-15", 120).unwrap();
        assert_eq!(
            win.locate(NaiveDate::from_ymd_opt(2001, 1, 10).unwrap()),
            Some((2000, 57))
        );
        assert!(ForecastWindow::parse_init("02-29", 10).is_err());
        assert!(ForecastWindow::parse_init("10-01", 0).is_err());
        assert!(ForecastWindow::parse_init("nonsense", 10).is_err());
    }

    #[test]
    fn daily_mean_examples() {
        let sub = |h: usize, vals: Vec<f64>| SubdailySeries {
            location_id: "a".into(),
            year: 2000,
            window: w(h),
            per_day: 4,
            values: vals.into_iter().map(Some).collect(),
        };
        assert_eq!(
            sub(1, vec![0.0; 4]).daily_mean().unwrap().values(),
            &[Some(0.0)]
        );
        assert_eq!(
            sub(1, vec![-2.0, 0.0, 2.0, 4.0])
                .daily_mean()
                .unwrap()
                .values(),
            &[Some(1.0)]
        );
        assert_eq!(
            sub(2, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -3.0])
                .daily_mean()
                .unwrap()
                .values(),
            &[Some(1.0), Some(-1.5)]
        );
        assert!(matches!(
            sub(2, vec![0.0; 7]).daily_mean(),
            Err(Error::MalformedSubdaily {
                expected: 8,
                got: 7
            })
        ));
    }

    #[test]
    fn missing_reading_poisons_day() {
        let s = SubdailySeries {
            location_id: "a".into(),
            year: 2000,
            window: w(2),
            per_day: 2,
            values: vec![Some(1.0), None, Some(2.0), Some(4.0)],
        };
        assert_eq!(s.daily_mean().unwrap().values(), &[None, Some(3.0)]);
    }

    proptest! {
        #[test]
        fn daily_mean_is_affine(
            vals in prop::collection::vec(-30.0f64..30.0, 12),
            a in -3.0f64..3.0,
            b in -10.0f64..10.0,
        ) {
            let mk = |v: Vec<f64>| SubdailySeries {
                location_id: "a".into(), year: 2000, window: w(3), per_day: 4,
                values: v.into_iter().map(Some).collect(),
            };
            let base = mk(vals.clone()).daily_mean().unwrap();
            let moved = mk(vals.iter().map(|x| a * x + b).collect()).daily_mean().unwrap();
            for t in 1..=3 {
                let expect = a * base.at(t).unwrap() + b;
                prop_assert!((moved.at(t).unwrap() - expect).abs() < 1e-9);
            }
        }
    }

    const HEADER: &str = "system,member,init_date,valid_date,location_id,tmean\n";

    #[test]
    fn empty_ensemble_file() {
        let (store, report) = EnsembleStore::read_csv(HEADER.as_bytes(), w(3), "mem").unwrap();
        assert!(store.is_empty());
        assert_eq!(report, LoadReport::default());
        assert!(store.availability().is_empty());
    }

    #[test]
    fn single_member_file() {
        let text = format!(
            "{HEADER}s1,0,2001-10-01,2001-10-01,a,1.5\ns1,0,2001-10-01,2001-10-02,a,-0.5\ns1,0,2001-10-01,2001-10-03,a,\ns1,0,2001-10-01,2001-10-04,a,9\n"
        );
        let (store, report) = EnsembleStore::read_csv(text.as_bytes(), w(3), "mem").unwrap();
        assert_eq!(
            report,
            LoadReport {
                rows: 4,
                rejected: 1
            }
        );
        assert_eq!(store.len(), 1);
        assert_eq!(
            store.availability(),
            BTreeMap::from([(("s1".to_string(), 2001), 1)])
        );
        let m = store.iter().next().unwrap();
        assert_eq!(m.series.values(), &[Some(1.5), Some(-0.5), None]);
    }

    #[test]
    fn duplicate_row_reports_line() {
        let text = format!(
            "{HEADER}s1,0,2001-10-01,2001-10-01,a,1\ns1,0,2001-10-01,2001-10-02,a,1\ns1,0,2001-10-01,2001-10-01,a,2\n"
        );
        match EnsembleStore::read_csv(text.as_bytes(), w(3), "mem") {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let bad_header = "system,member,valid_date,init_date,location_id,tmean\n";
        assert!(EnsembleStore::read_csv(bad_header.as_bytes(), w(3), "mem").is_err());
        let bad_num = format!("{HEADER}s1,0,2001-10-01,2001-10-01,a,warm\n");
        match EnsembleStore::read_csv(bad_num.as_bytes(), w(3), "mem") {
            Err(Error::Schema { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("unparseable number"));
            }
            other => panic!("{other:?}"),
        }
        let bad_member = format!("{HEADER}s1,x,2001-10-01,2001-10-01,a,1\n");
        assert!(EnsembleStore::read_csv(bad_member.as_bytes(), w(3), "mem").is_err());
    }

    #[test]
    fn observations_csv() {
        let text = "location_id,date,tmean\na,2001-10-02,3.25\na,2001-10-01,1\nb,2001-10-01,\na,2001-09-30,7\n";
        let (obs, report) = ObservationSet::read_csv(text.as_bytes(), w(2), "mem").unwrap();
        assert_eq!(
            report,
            LoadReport {
                rows: 4,
                rejected: 1
            }
        );
        assert_eq!(
            obs.get("a", 2001).unwrap().values(),
            &[Some(1.0), Some(3.25)]
        );
        assert_eq!(obs.get("b", 2001).unwrap().values(), &[None, None]);
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let (again, _) = ObservationSet::read_csv(buf.as_slice(), w(2), "mem").unwrap();
        assert_eq!(obs, again);

        let dup = "location_id,date,tmean\na,2001-10-01,1\na,2001-10-01,2\n";
        assert!(ObservationSet::read_csv(dup.as_bytes(), w(2), "mem").is_err());
    }

    fn member(system: &str, m: u32, year: i32, loc: &str, h: usize) -> EnsembleMemberSeries {
        EnsembleMemberSeries {
            system: system.into(),
            member: m,
            series: DailySeries::complete(loc, year, w(h), &vec![m as f64; h]).unwrap(),
        }
    }

    #[test]
    fn pooling_follows_availability() {
        let mut store = EnsembleStore::new(w(2));
        let layout = [
            ("A", 25, true),
            ("B", 40, false),
            ("C", 25, false),
            ("D", 7, false),
        ];
        for &(sys, n, all_years) in &layout {
            for year in [2016, 2018] {
                let count = if year == 2018 && sys == "A" { 51 } else { n };
                if year == 2018 && !all_years {
                    continue;
                }
                for m in 0..count {
                    store.insert(member(sys, m, year, "x", 2)).unwrap();
                }
            }
        }
        assert_eq!(pooled_members(&store, 2016, "x").len(), 97);
        assert_eq!(pooled_members(&store, 2018, "x").len(), 51);
        assert!(pooled_members(&store, 2017, "x").is_empty());
        assert!(pooled_members(&EnsembleStore::new(w(2)), 2016, "x").is_empty());
        let avail = store.availability();
        for year in [2016, 2018] {
            let total: usize = avail
                .iter()
                .filter(|((_, y), _)| *y == year)
                .map(|(_, n)| n)
                .sum();
            assert_eq!(total, pooled_members(&store, year, "x").len());
        }
        assert!(store.insert(member("A", 0, 2016, "x", 2)).is_err());
    }

    proptest! {
        #[test]
        fn ensemble_csv_round_trip(
            vals in prop::collection::vec(prop::option::weighted(0.9, prop::num::f64::NORMAL), 2 * 3 * 2),
        ) {
            let mut store = EnsembleStore::new(w(2));
            let mut it = vals.into_iter();
            for (sys, m, year) in [("s1", 0, 2000), ("s1", 1, 2000), ("s2", 0, 2001)] {
                for loc in ["a", "b"] {
                    let v: Vec<Option<f64>> = it.by_ref().take(2).collect();
                    store.insert(EnsembleMemberSeries {
                        system: sys.into(), member: m,
                        series: DailySeries::new(loc, year, w(2), v).unwrap(),
                    }).unwrap();
                }
            }
            let mut buf = Vec::new();
            store.write_csv(&mut buf).unwrap();
            let (again, report) = EnsembleStore::read_csv(buf.as_slice(), w(2), "mem").unwrap();
            prop_assert_eq!(report.rejected, 0);
            prop_assert_eq!(&again, &store);
            for (a, b) in store.iter().zip(again.iter()) {
                for (x, y) in a.series.values().iter().zip(b.series.values()) {
                    prop_assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
                }
            }
        }
    }
}
