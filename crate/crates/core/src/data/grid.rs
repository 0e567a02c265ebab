//! Uniform 5-minute grid alignment, walking-interval derivation and gap
//! interpolation.

use std::ops::Range;

use chrono::{DateTime, Duration, Utc};

use super::{SubjectRecord, GRID_MINUTES};
use crate::error::{contract, Result};

const GRID_SECONDS: i64 = GRID_MINUTES * 60;

/// Channels of one subject on the shared grid `origin + 5·k minutes`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridChannels {
    pub origin: DateTime<Utc>,
    /// `None` where no reading snapped to the grid point.
    pub glucose: Vec<Option<f64>>,
    /// Steps counted in `[origin + 5k, origin + 5(k+1))` minutes.
    pub steps: Vec<f64>,
}

impl GridChannels {
    pub fn len(&self) -> usize {
        self.glucose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glucose.is_empty()
    }

    pub fn time_at(&self, k: usize) -> DateTime<Utc> {
        self.origin + Duration::minutes(GRID_MINUTES * k as i64)
    }
}

/// Places the subject's series on a uniform grid spanning the CGM range,
/// `⌊span / 5 min⌋ + 1` points starting at the first reading. Glucose snaps
/// to the nearest grid point (later readings win a collision); step counts
/// are summed into 5-minute bins, and bins without events hold 0.
pub fn align_to_grid(record: &SubjectRecord) -> Result<GridChannels> {
    contract!(
        !record.cgm.is_empty(),
        "subject {} has no CGM readings",
        record.subject_id
    );
    let origin = record.cgm[0].0;
    let span = (record.cgm[record.cgm.len() - 1].0 - origin).num_seconds();
    let len = (span / GRID_SECONDS) as usize + 1;

    let mut glucose = vec![None; len];
    for (t, v) in &record.cgm {
        let offset = (*t - origin).num_seconds();
        // round half up to the nearest grid point
        let k = ((offset + GRID_SECONDS / 2).div_euclid(GRID_SECONDS)) as usize;
        glucose[k.min(len - 1)] = Some(*v);
    }

    let mut steps = vec![0.0; len];
    for (t, v) in &record.steps {
        let offset = (*t - origin).num_seconds();
        if offset < 0 {
            continue;
        }
        let k = (offset / GRID_SECONDS) as usize;
        if k < len {
            steps[k] += v;
        }
    }
    Ok(GridChannels { origin, glucose, steps })
}

/// Minutes since the most recent bin with steps, 0 in a walking bin, and
/// `cap_minutes` before any walking has been seen. Elapsed time is capped
/// at `cap_minutes` throughout.
pub fn derive_walking_intervals(steps: &[f64], cap_minutes: f64) -> Vec<f64> {
    let mut last: Option<usize> = None;
    steps
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if s > 0.0 {
                last = Some(k);
            }
            match last {
                Some(l) => (((k - l) as i64 * GRID_MINUTES) as f64).min(cap_minutes),
                None => cap_minutes,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GapReport {
    pub gaps_filled: usize,
    pub points_filled: usize,
    /// Interior gaps longer than the limit, each of which splits a segment.
    pub gaps_split: usize,
    pub longest_gap_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interpolated {
    pub values: Vec<Option<f64>>,
    /// Maximal runs of present values after filling.
    pub segments: Vec<Range<usize>>,
    pub report: GapReport,
}

/// Linearly fills interior gaps lasting at most `max_gap_minutes`
/// (`missing samples × 5 min`). Longer gaps, and missing values before the
/// first or after the last reading, are left empty and bound segments.
pub fn interpolate_missing(values: &[Option<f64>], max_gap_minutes: f64) -> Interpolated {
    let mut out = values.to_vec();
    let mut report = GapReport::default();
    let mut prev: Option<usize> = None;
    for (k, v) in values.iter().enumerate() {
        let Some(cur) = *v else { continue };
        if let Some(p) = prev {
            let missing = k - p - 1;
            if missing > 0 {
                report.longest_gap_samples = report.longest_gap_samples.max(missing);
                if (missing as i64 * GRID_MINUTES) as f64 <= max_gap_minutes {
                    let start = values[p].expect("previous present");
                    for (j, slot) in out.iter_mut().enumerate().take(k).skip(p + 1) {
                        let frac = (j - p) as f64 / (k - p) as f64;
                        *slot = Some(start + (cur - start) * frac);
                    }
                    report.gaps_filled += 1;
                    report.points_filled += missing;
                } else {
                    report.gaps_split += 1;
                }
            }
        }
        prev = Some(k);
    }

    let mut segments = Vec::new();
    let mut start = None;
    for (k, v) in out.iter().enumerate() {
        match (v.is_some(), start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                segments.push(s..k);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push(s..out.len());
    }
    Interpolated {
        values: out,
        segments,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cohort;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn record(cgm: &[(i64, f64)], steps: &[(i64, f64)]) -> SubjectRecord {
        let at = |s: i64| t0() + Duration::seconds(s);
        SubjectRecord {
            subject_id: "x".into(),
            cohort: Cohort::Healthy,
            cgm: cgm.iter().map(|&(s, v)| (at(s), v)).collect(),
            steps: steps.iter().map(|&(s, v)| (at(s), v)).collect(),
        }
    }

    #[test]
    fn on_grid_cgm_unchanged() {
        let r = record(&[(0, 100.), (300, 110.), (600, 120.)], &[]);
        let g = align_to_grid(&r).unwrap();
        assert_eq!(g.glucose, vec![Some(100.), Some(110.), Some(120.)]);
        assert_eq!(g.steps, vec![0.0; 3]);
    }

    #[test]
    fn steps_sum_within_bin() {
        let r = record(&[(0, 100.), (600, 100.)], &[(310, 30.), (540, 70.), (30, 5.)]);
        let g = align_to_grid(&r).unwrap();
        assert_eq!(g.steps, vec![5., 100., 0.]);
    }

    #[test]
    fn grid_length_is_floor_span_plus_one() {
        // span 17 min -> floor(17/5) + 1 = 4
        let r = record(&[(0, 100.), (17 * 60, 100.)], &[]);
        let g = align_to_grid(&r).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.time_at(3), t0() + Duration::minutes(15));
    }

    #[test]
    fn jittered_readings_snap_to_nearest() {
        let r = record(&[(0, 100.), (290, 101.), (640, 102.), (1210, 103.)], &[]);
        let g = align_to_grid(&r).unwrap();
        assert_eq!(g.glucose, vec![Some(100.), Some(101.), Some(102.), None, Some(103.)]);
        // 899 s rounds to index 3 but the grid has 3 points: clamped, last wins
        let r = record(&[(0, 100.), (300, 101.), (600, 102.), (899, 103.)], &[]);
        assert_eq!(
            align_to_grid(&r).unwrap().glucose,
            vec![Some(100.), Some(101.), Some(103.)]
        );
    }

    #[test]
    fn walking_intervals_examples() {
        assert_eq!(
            derive_walking_intervals(&[10., 0., 0., 5.], 720.),
            vec![0., 5., 10., 0.]
        );
        assert_eq!(derive_walking_intervals(&[0., 0., 0.], 720.), vec![720.; 3]);
        assert_eq!(derive_walking_intervals(&[3., 1., 9.], 720.), vec![0.; 3]);
        assert_eq!(derive_walking_intervals(&[1., 0., 0., 0.], 10.), vec![0., 5., 10., 10.]);
    }

    #[test]
    fn interpolation_fills_midpoint() {
        let r = interpolate_missing(&[Some(100.), None, Some(110.)], 60.);
        assert_eq!(r.values, vec![Some(100.), Some(105.), Some(110.)]);
        assert_eq!(r.segments, vec![0..3]);
        assert_eq!(r.report.points_filled, 1);
    }

    #[test]
    fn long_gap_splits_segment() {
        let mut v = vec![Some(100.)];
        v.extend(std::iter::repeat_n(None, 13));
        v.push(Some(120.));
        let r = interpolate_missing(&v, 60.);
        assert_eq!(r.segments, vec![0..1, 14..15]);
        assert_eq!(r.report.gaps_split, 1);
        assert!(r.values[1..14].iter().all(Option::is_none));

        // 12 missing samples (60 min) is still filled
        let mut v = vec![Some(100.)];
        v.extend(std::iter::repeat_n(None, 12));
        v.push(Some(126.));
        let r = interpolate_missing(&v, 60.);
        assert_eq!(r.segments, vec![0..14]);
        assert_eq!(r.values[6], Some(112.));
    }

    #[test]
    fn no_gaps_is_identity() {
        let v = vec![Some(1.), Some(2.), Some(3.)];
        let r = interpolate_missing(&v, 60.);
        assert_eq!(r.values, v);
        assert_eq!(r.report, GapReport::default());
    }

    #[test]
    fn edges_are_not_extrapolated() {
        let r = interpolate_missing(&[None, Some(1.), Some(2.), None], 60.);
        assert_eq!(r.segments, vec![1..3]);
    }
}
