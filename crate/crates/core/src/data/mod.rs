//! CGM and activity ingestion, grid alignment, feature derivation and
//! windowing.

pub mod csv_io;
pub mod grid;
pub mod synth;
pub mod window;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

pub use csv_io::{load_cgm_csv, load_manifest, load_steps_csv, load_subject, ManifestEntry};
pub use grid::{align_to_grid, derive_walking_intervals, interpolate_missing, GridChannels};
pub use window::{
    make_windows, prepare_all, prepare_subject, split_train_test, NormStats, PipelineConfig, SubjectData, WindowSample,
};

/// Grid spacing of every channel.
pub const GRID_MINUTES: i64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cohort {
    Healthy,
    PreT2dm,
    Oral,
    Insulin,
}

impl Cohort {
    /// Processing order used by every sequential protocol.
    pub const ALL: [Cohort; 4] = [Cohort::Healthy, Cohort::PreT2dm, Cohort::Oral, Cohort::Insulin];

    pub fn name(self) -> &'static str {
        match self {
            Cohort::Healthy => "healthy",
            Cohort::PreT2dm => "pre_t2dm",
            Cohort::Oral => "oral",
            Cohort::Insulin => "insulin",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cohort::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            Error::Data(format!(
                "unknown cohort '{s}' (expected healthy, pre_t2dm, oral or insulin)"
            ))
        })
    }
}

/// One participant's raw series. Timestamps are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub cohort: Cohort,
    /// `(time, glucose mg/dL)`.
    pub cgm: Vec<(DateTime<Utc>, f64)>,
    /// `(time, steps counted in the interval ending at that time)`.
    pub steps: Vec<(DateTime<Utc>, f64)>,
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Data(format!("bad timestamp '{s}': {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_names_round_trip() {
        for c in Cohort::ALL {
            assert_eq!(c.name().parse::<Cohort>().unwrap(), c);
        }
        assert!("t1dm".parse::<Cohort>().is_err());
    }

    #[test]
    fn timestamps_round_trip() {
        let t = parse_timestamp("2024-03-01T08:05:00Z").unwrap();
        assert_eq!(format_timestamp(&t), "2024-03-01T08:05:00Z");
        let off = parse_timestamp("2024-03-01T09:05:00+01:00").unwrap();
        assert_eq!(off, t);
    }
}
