//! Plain CSV report tables.

use std::fs;
use std::path::Path;

use attengluco_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell `name` of row `r`.
    pub fn get(&self, r: usize, name: &str) -> Option<&str> {
        Some(self.rows.get(r)?.get(self.column(name)?)?.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let parse_err = |e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        };
        let header = r.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()).map_err(parse_err))
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    /// Fixed-width text rendering for terminals.
    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.header);
        for r in &self.rows {
            out.push('\n');
            out.push_str(&line(r));
        }
        out
    }
}

/// Shortest round-trip form, in exponent notation for very large or small
/// magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x".into(), num(0.1 + 0.2)]);
        t.push(vec!["y,z".into(), num(-1e-300)]);
        let p = d.path().join("t.csv");
        t.write(&p).unwrap();
        assert_eq!(Table::read(&p).unwrap(), t);
        assert!(!fs::read_to_string(&p).unwrap().contains('\r'));
        assert_eq!(t.get(1, "b"), Some("-1e-300"));
    }

    #[test]
    fn header_only_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let t = Table::new(&["a"]);
        let p = d.path().join("t.csv");
        t.write(&p).unwrap();
        assert_eq!(Table::read(&p).unwrap(), t);
    }
}
