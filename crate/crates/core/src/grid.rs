//! Study locations and nearest-neighbour matching of forecast grid points
//! onto the observation grid.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: String,
    /// Degrees east.
    pub lon: f64,
    /// Degrees north.
    pub lat: f64,
    /// Metres above sea level.
    pub elevation: f64,
}

impl Location {
    pub fn new(id: impl Into<String>, lon: f64, lat: f64, elevation: f64) -> Result<Self> {
        let id = id.into();
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidLocation {
                id,
                reason: format!("longitude {lon} outside [-180, 180]"),
            });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidLocation {
                id,
                reason: format!("latitude {lat} outside [-90, 90]"),
            });
        }
        Ok(Location {
            id,
            lon,
            lat,
            elevation,
        })
    }
}

/// Locations kept sorted by id, ids unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocationSet {
    items: Vec<Location>,
}

impl LocationSet {
    pub fn new(locations: impl IntoIterator<Item = Location>) -> Result<Self> {
        let mut items: Vec<Location> = locations.into_iter().collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = items.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateLocation(w[0].id.clone()));
        }
        Ok(LocationSet { items })
    }

    pub fn get(&self, id: &str) -> Option<&Location> {
        self.items
            .binary_search_by(|l| l.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Location> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|l| l.id.as_str())
    }

    /// Reads `id,lon,lat,elevation` CSV.
    pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["id", "lon", "lat", "elevation"] {
            return Err(Error::Schema {
                path: source.to_string(),
                line: 1,
                reason: format!("bad header {:?}", header.iter().collect::<Vec<_>>()),
            });
        }
        let mut seen = BTreeMap::new();
        let mut locations = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec?;
            let schema = |reason: String| Error::Schema {
                path: source.to_string(),
                line,
                reason,
            };
            let num = |idx: usize, name: &str| -> Result<f64> {
                rec.get(idx)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| schema(format!("unparseable {name}")))
            };
            let id = rec.get(0).unwrap_or("").to_string();
            let loc = Location::new(
                id.clone(),
                num(1, "lon")?,
                num(2, "lat")?,
                num(3, "elevation")?,
            )
            .map_err(|e| schema(e.to_string()))?;
            if seen.insert(id.clone(), line).is_some() {
                return Err(schema(format!("duplicate location id {id}")));
            }
            locations.push(loc);
        }
        LocationSet::new(locations)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["id", "lon", "lat", "elevation"])?;
        for l in &self.items {
            w.write_record([
                l.id.clone(),
                l.lon.to_string(),
                l.lat.to_string(),
                l.elevation.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a LocationSet {
    type Item = &'a Location;
    type IntoIter = std::slice::Iter<'a, Location>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &Location, b: &Location) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Rounds lon/lat to the nearest whole degree, exact halves to even.
pub fn snap_to_whole_degree(p: &Location) -> Location {
    Location {
        id: p.id.clone(),
        lon: p.lon.round_ties_even(),
        lat: p.lat.round_ties_even(),
        elevation: p.elevation,
    }
}

/// Pairs each forecast point with its nearest observation point when the
/// distance is at most `max_km`. Equidistant candidates resolve to the
/// smaller obs id.
pub fn match_grids(
    forecast_points: &LocationSet,
    obs_points: &LocationSet,
    max_km: f64,
) -> Result<Vec<(String, String)>> {
    if forecast_points.is_empty() || obs_points.is_empty() {
        return Err(Error::EmptyLocationSet);
    }
    let mut pairs = Vec::new();
    for f in forecast_points {
        // obs_points iterates in id order, so strict `<` keeps the smallest id on ties
        let mut best: Option<(&Location, f64)> = None;
        for o in obs_points {
            let d = haversine_km(f, o);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((o, d));
            }
        }
        if let Some((o, d)) = best {
            if d <= max_km {
                pairs.push((f.id.clone(), o.id.clone()));
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loc(id: &str, lon: f64, lat: f64) -> Location {
        Location::new(id, lon, lat, 0.0).unwrap()
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(
            haversine_km(&loc("a", 5.0, 60.0), &loc("b", 5.0, 60.0)),
            0.0
        );
        let quarter = haversine_km(&loc("a", 0.0, 0.0), &loc("b", 0.0, 90.0));
        // pi/2 * 6371
        assert!((quarter - 10007.543).abs() < 0.5, "{quarter}");
        let small = haversine_km(&loc("a", 10.0, 60.0), &loc("b", 10.01, 60.0));
        let approx = EARTH_RADIUS_KM * 0.01f64.to_radians() * 60f64.to_radians().cos();
        assert!((small - approx).abs() < 0.01);
        assert!((small - 0.556).abs() < 0.01);
    }

    #[test]
    fn snapping() {
        let s = snap_to_whole_degree(&loc("a", 4.5, 60.5));
        assert_eq!((s.lon, s.lat), (4.0, 60.0));
        let s = snap_to_whole_degree(&loc("a", 11.0, 64.0));
        assert_eq!((s.lon, s.lat), (11.0, 64.0));
        let s = snap_to_whole_degree(&loc("a", 17.5, 68.5));
        assert_eq!((s.lon, s.lat), (18.0, 68.0));
        let s = snap_to_whole_degree(&loc("a", -3.5, -0.5));
        assert_eq!((s.lon, s.lat), (-4.0, 0.0));
    }

    #[test]
    fn matching_examples() {
        let f = LocationSet::new([loc("f", 0.0, 0.0)]).unwrap();
        let o = LocationSet::new([loc("o", 0.0, 0.0)]).unwrap();
        assert_eq!(
            match_grids(&f, &o, 10.0).unwrap(),
            vec![("f".into(), "o".into())]
        );

        let far = LocationSet::new([loc("o", 1.0, 0.0)]).unwrap();
        assert!(match_grids(&f, &far, 10.0).unwrap().is_empty());

        let two = LocationSet::new([loc("o2", 0.06, 0.0), loc("o1", 0.05, 0.0)]).unwrap();
        assert_eq!(
            match_grids(&f, &two, 10.0).unwrap(),
            vec![("f".into(), "o1".into())]
        );
    }

    #[test]
    fn tie_goes_to_smaller_obs_id() {
        let f = LocationSet::new([loc("f", 0.0, 0.0)]).unwrap();
        let o = LocationSet::new([loc("zz", 0.01, 0.0), loc("aa", -0.01, 0.0)]).unwrap();
        assert_eq!(match_grids(&f, &o, 10.0).unwrap()[0].1, "aa");
    }

    #[test]
    fn empty_sets_rejected() {
        let f = LocationSet::new([loc("f", 0.0, 0.0)]).unwrap();
        let empty = LocationSet::default();
        assert!(matches!(
            match_grids(&f, &empty, 10.0),
            Err(Error::EmptyLocationSet)
        ));
        assert!(matches!(
            match_grids(&empty, &f, 10.0),
            Err(Error::EmptyLocationSet)
        ));
    }

    #[test]
    fn location_validation_and_duplicates() {
        assert!(Location::new("x", 181.0, 0.0, 0.0).is_err());
        assert!(Location::new("x", 0.0, -90.5, 0.0).is_err());
        assert!(matches!(
            LocationSet::new([loc("a", 0.0, 0.0), loc("a", 1.0, 1.0)]),
            Err(Error::DuplicateLocation(_))
        ));
        let set = LocationSet::new([loc("b", 0.0, 0.0), loc("a", 1.0, 1.0)]).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(set.get("b").unwrap().lon, 0.0);
        assert!(set.get("c").is_none());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "id,lon,lat,elevation\nb,10.5,60.25,120\na,-3,45,0\n";
        let set = LocationSet::read_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!(set.len(), 2);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let again = LocationSet::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(set, again);

        let bad = "id,lat,lon,elevation\n";
        assert!(LocationSet::read_csv(bad.as_bytes(), "mem").is_err());
        let dup = "id,lon,lat,elevation\na,0,0,0\na,1,1,1\n";
        match LocationSet::read_csv(dup.as_bytes(), "mem") {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let nan = "id,lon,lat,elevation\na,x,0,0\n";
        assert!(LocationSet::read_csv(nan.as_bytes(), "mem").is_err());
    }

    fn arb_loc() -> impl Strategy<Value = Location> {
        (-180.0f64..=180.0, -90.0f64..=90.0).prop_map(|(lon, lat)| loc("p", lon, lat))
    }

    proptest! {
        #[test]
        fn haversine_metric_properties(a in arb_loc(), b in arb_loc(), c in arb_loc()) {
            let ab = haversine_km(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, haversine_km(&b, &a));
            prop_assert_eq!(haversine_km(&a, &a), 0.0);
            let ac = haversine_km(&a, &c);
            let cb = haversine_km(&c, &b);
            prop_assert!(ab <= (ac + cb) * (1.0 + 1e-9) + 1e-9);
        }

        #[test]
        fn snapping_is_idempotent(a in arb_loc()) {
            let once = snap_to_whole_degree(&a);
            prop_assert_eq!(snap_to_whole_degree(&once), once);
        }

        #[test]
        fn matches_agree_with_exhaustive_scan(
            fs in prop::collection::vec((4.0f64..6.0, 59.0f64..61.0), 1..6),
            os in prop::collection::vec((4.0f64..6.0, 59.0f64..61.0), 1..12),
            max_km in 1.0f64..80.0,
        ) {
            let fset = LocationSet::new(fs.iter().enumerate().map(|(i, &(x, y))| loc(&format!("f{i:02}"), x, y))).unwrap();
            let oset = LocationSet::new(os.iter().enumerate().map(|(i, &(x, y))| loc(&format!("o{i:02}"), x, y))).unwrap();
            let pairs = match_grids(&fset, &oset, max_km).unwrap();
            for (fid, oid) in &pairs {
                let f = fset.get(fid).unwrap();
                let d = haversine_km(f, oset.get(oid).unwrap());
                prop_assert!(d <= max_km);
                let min = oset.iter().map(|o| haversine_km(f, o)).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(d, min);
            }
            let mut fids: Vec<_> = pairs.iter().map(|p| &p.0).collect();
            fids.dedup();
            prop_assert_eq!(fids.len(), pairs.len());
        }
    }
}
