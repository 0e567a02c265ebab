//! CSV readers and writers for CGM, activity and manifest files.
//!
//! All writers emit `\n` line endings and Rust's shortest round-trip float
//! formatting, so anything written here reads back bit-for-bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use super::{format_timestamp, parse_timestamp, Cohort, SubjectRecord};
use crate::error::{Error, Result};

pub const CGM_HEADER: [&str; 2] = ["timestamp", "glucose_mg_dl"];
pub const STEPS_HEADER: [&str; 2] = ["timestamp", "steps"];
pub const MANIFEST_HEADER: [&str; 4] = ["subject_id", "cohort", "cgm_path", "activity_path"];

/// Valid glucose readings lie strictly inside this range (mg/dL).
pub const GLUCOSE_RANGE: (f64, f64) = (20.0, 600.0);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedSeries {
    pub points: Vec<(DateTime<Utc>, f64)>,
    /// Rows dropped because the value was outside the valid range.
    pub dropped_out_of_range: usize,
    /// Rows discarded because a later row had the same timestamp.
    pub duplicates_collapsed: usize,
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    if file.metadata().map_err(|e| Error::io(path, e))?.len() == 0 {
        return Err(Error::EmptySeries(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let found = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header '{}', found '{}'",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(rdr)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a two-column `timestamp,<value>` file, sorted with last-wins
/// duplicate collapse. `accept` decides which values are kept.
fn load_series(path: &Path, header: &[&str], allow_empty: bool, accept: impl Fn(f64) -> bool) -> Result<LoadedSeries> {
    let mut rdr = reader(path, header)?;
    let mut by_time: BTreeMap<DateTime<Utc>, f64> = BTreeMap::new();
    let mut out = LoadedSeries::default();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0]).map_err(|e| parse_err(path, line, e.to_string()))?;
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad number '{}'", &rec[1])))?;
        if !value.is_finite() {
            return Err(parse_err(path, line, format!("non-finite value '{}'", &rec[1])));
        }
        rows += 1;
        if !accept(value) {
            out.dropped_out_of_range += 1;
            continue;
        }
        if by_time.insert(ts, value).is_some() {
            out.duplicates_collapsed += 1;
        }
    }
    if rows == 0 && !allow_empty {
        return Err(Error::EmptySeries(path.to_path_buf()));
    }
    out.points = by_time.into_iter().collect();
    Ok(out)
}

/// Loads `timestamp,glucose_mg_dl`. Readings outside (20, 600) mg/dL are
/// dropped and counted.
pub fn load_cgm_csv(path: impl AsRef<Path>) -> Result<LoadedSeries> {
    let (lo, hi) = GLUCOSE_RANGE;
    load_series(path.as_ref(), &CGM_HEADER, false, |v| v > lo && v < hi)
}

/// Loads `timestamp,steps`. Negative counts are dropped and counted. A
/// header-only file is a subject who never walked.
pub fn load_steps_csv(path: impl AsRef<Path>) -> Result<LoadedSeries> {
    load_series(path.as_ref(), &STEPS_HEADER, true, |v| v >= 0.0)
}

fn write_series(path: &Path, header: &[&str], points: &[(DateTime<Utc>, f64)]) -> Result<()> {
    let mut buf = String::with_capacity(points.len() * 32);
    buf.push_str(&header.join(","));
    buf.push('\n');
    for (t, v) in points {
        buf.push_str(&format_timestamp(t));
        buf.push(',');
        buf.push_str(&v.to_string());
        buf.push('\n');
    }
    write_file(path, buf.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_cgm_csv(path: impl AsRef<Path>, points: &[(DateTime<Utc>, f64)]) -> Result<()> {
    write_series(path.as_ref(), &CGM_HEADER, points)
}

pub fn write_steps_csv(path: impl AsRef<Path>, points: &[(DateTime<Utc>, f64)]) -> Result<()> {
    write_series(path.as_ref(), &STEPS_HEADER, points)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub cohort: Cohort,
    /// Resolved against the manifest's directory.
    pub cgm_path: PathBuf,
    pub activity_path: PathBuf,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = reader(path, &MANIFEST_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let cohort = rec[1]
            .parse()
            .map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        out.push(ManifestEntry {
            subject_id: rec[0].to_string(),
            cohort,
            cgm_path: base.join(&rec[2]),
            activity_path: base.join(&rec[3]),
        });
    }
    Ok(out)
}

/// Writes a manifest; paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[(String, Cohort, String, String)]) -> Result<()> {
    let mut buf = MANIFEST_HEADER.join(",");
    buf.push('\n');
    for (id, cohort, cgm, act) in rows {
        buf.push_str(&format!("{id},{cohort},{cgm},{act}\n"));
    }
    write_file(path.as_ref(), buf.as_bytes())
}

/// Reads both series of a manifest entry.
pub fn load_subject(entry: &ManifestEntry) -> Result<SubjectRecord> {
    let cgm = load_cgm_csv(&entry.cgm_path)?;
    let steps = load_steps_csv(&entry.activity_path)?;
    Ok(SubjectRecord {
        subject_id: entry.subject_id.clone(),
        cohort: entry.cohort,
        cgm: cgm.points,
        steps: steps.points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_two_rows() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "a.csv",
            "timestamp,glucose_mg_dl\n2024-01-01T00:00:00Z,100\n2024-01-01T00:05:00Z,104.5\n",
        );
        let s = load_cgm_csv(&p).unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.points[1].1, 104.5);
    }

    #[test]
    fn duplicate_keeps_last() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "a.csv",
            "timestamp,glucose_mg_dl\n2024-01-01T00:00:00Z,100\n2024-01-01T00:00:00Z,120\n",
        );
        let s = load_cgm_csv(&p).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].1, 120.0);
        assert_eq!(s.duplicates_collapsed, 1);
    }

    #[test]
    fn sorts_and_drops_out_of_range() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "a.csv",
            "timestamp,glucose_mg_dl\n2024-01-01T00:10:00Z,700\n2024-01-01T00:05:00Z,90\n2024-01-01T00:00:00Z,80\n",
        );
        let s = load_cgm_csv(&p).unwrap();
        assert_eq!(s.dropped_out_of_range, 1);
        assert_eq!(s.points.iter().map(|p| p.1).collect::<Vec<_>>(), vec![80.0, 90.0]);
    }

    #[test]
    fn bad_row_reports_line() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "a.csv",
            "timestamp,glucose_mg_dl\n2024-01-01T00:00:00Z,100\n2024-01-01T00:05:00Z,abc\n",
        );
        match load_cgm_csv(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_file_is_error() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", "timestamp,glucose_mg_dl\n");
        assert!(matches!(load_cgm_csv(&p), Err(Error::EmptySeries(_))));
        let p = write(d.path(), "b.csv", "");
        assert!(matches!(load_cgm_csv(&p), Err(Error::EmptySeries(_))));
    }

    #[test]
    fn wrong_header_is_error() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", "time,value\n2024-01-01T00:00:00Z,100\n");
        assert!(matches!(load_cgm_csv(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let d = tempfile::tempdir().unwrap();
        let rows = vec![(
            "s1".to_string(),
            Cohort::Oral,
            "cgm/s1.csv".to_string(),
            "activity/s1.csv".to_string(),
        )];
        let p = d.path().join("manifest.csv");
        write_manifest(&p, &rows).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m[0].cohort, Cohort::Oral);
        assert_eq!(m[0].cgm_path, d.path().join("cgm/s1.csv"));
    }
}
