//! Normalisation, sliding windows and the chronological train/test split.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};

use super::grid::{align_to_grid, derive_walking_intervals, interpolate_missing, GapReport};
use super::{Cohort, SubjectRecord, GRID_MINUTES};
use crate::error::{contract, Error, Result};
use crate::model::ModelInput;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub max_gap_minutes: f64,
    pub interval_cap_minutes: f64,
    /// Samples between consecutive window starts.
    pub stride: usize,
    pub train_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_gap_minutes: 60.0,
            interval_cap_minutes: 720.0,
            stride: 1,
            train_fraction: 0.85,
        }
    }
}

/// Input channels, in model order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Glucose = 0,
    Steps = 1,
    Intervals = 2,
}

/// Per-channel z-score statistics, fitted on training data only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Channels whose fitted deviation was zero; their std is set to 1.
    pub degenerate: [bool; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
            degenerate: [false; 3],
        }
    }

    /// Population mean and deviation of each channel over `rows`.
    pub fn fit<I: IntoIterator<Item = [f64; 3]>>(rows: I) -> Result<Self> {
        let rows: Vec<[f64; 3]> = rows.into_iter().collect();
        contract!(!rows.is_empty(), "cannot fit normalisation on zero samples");
        let n = rows.len() as f64;
        let mut stats = NormStats::identity();
        for c in 0..3 {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            stats.mean[c] = mean;
            let sd = var.sqrt();
            if sd > 1e-12 {
                stats.std[c] = sd;
            } else {
                stats.degenerate[c] = true;
            }
        }
        Ok(stats)
    }

    pub fn normalize(&self, ch: Channel, v: f64) -> f64 {
        (v - self.mean[ch as usize]) / self.std[ch as usize]
    }

    pub fn denormalize(&self, ch: Channel, z: f64) -> f64 {
        z * self.std[ch as usize] + self.mean[ch as usize]
    }
}

/// One contiguous, gap-free stretch of a subject's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentChannels {
    pub start: DateTime<Utc>,
    pub glucose: Vec<f64>,
    pub steps: Vec<f64>,
    pub intervals: Vec<f64>,
}

impl SegmentChannels {
    pub fn len(&self) -> usize {
        self.glucose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glucose.is_empty()
    }
}

/// One training example: `window` normalised samples per channel plus the
/// next `horizon` glucose readings in mg/dL.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub subject_id: String,
    /// Time of the first input sample.
    pub start: DateTime<Utc>,
    pub x_g: Vec<f64>,
    pub x_ws: Vec<f64>,
    pub x_wi: Vec<f64>,
    pub target: Vec<f64>,
}

impl WindowSample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            glucose: &self.x_g,
            steps: &self.x_ws,
            intervals: &self.x_wi,
        }
    }

    /// Grid time of input sample `k` (shared by all three channels).
    pub fn time_at(&self, k: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(GRID_MINUTES * k as i64)
    }
}

/// Slides a `window + horizon` frame over the segment every `stride`
/// samples. Too-short segments produce no windows.
pub fn make_windows(
    seg: &SegmentChannels,
    subject_id: &str,
    window: usize,
    horizon: usize,
    stride: usize,
    stats: &NormStats,
) -> Vec<WindowSample> {
    let need = window + horizon;
    if stride == 0 || seg.len() < need {
        return Vec::new();
    }
    let norm = |ch: Channel, xs: &[f64]| -> Vec<f64> { xs.iter().map(|&v| stats.normalize(ch, v)).collect() };
    (0..=seg.len() - need)
        .step_by(stride)
        .map(|s| WindowSample {
            subject_id: subject_id.to_string(),
            start: seg.start + Duration::minutes(GRID_MINUTES * s as i64),
            x_g: norm(Channel::Glucose, &seg.glucose[s..s + window]),
            x_ws: norm(Channel::Steps, &seg.steps[s..s + window]),
            x_wi: norm(Channel::Intervals, &seg.intervals[s..s + window]),
            target: seg.glucose[s + window..s + need].to_vec(),
        })
        .collect()
}

/// Chronological split: the first `⌊fraction·n⌋` windows train, the rest test.
/// Both sides keep at least one window.
pub fn split_train_test(
    mut windows: Vec<WindowSample>,
    fraction: f64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    let n = windows.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 windows to split, have {n}")));
    }
    contract!(
        fraction > 0.0 && fraction < 1.0,
        "train fraction must lie in (0, 1), got {fraction}"
    );
    windows.sort_by_key(|w| w.start);
    let n_train = ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let test = windows.split_off(n_train);
    Ok((windows, test))
}

/// Grid-aligned, interpolated segments of a subject with walking intervals.
pub fn segments(record: &SubjectRecord, cfg: &PipelineConfig) -> Result<(Vec<SegmentChannels>, GapReport)> {
    let grid = align_to_grid(record)?;
    let intervals = derive_walking_intervals(&grid.steps, cfg.interval_cap_minutes);
    let filled = interpolate_missing(&grid.glucose, cfg.max_gap_minutes);
    let segs = filled
        .segments
        .iter()
        .map(|r| SegmentChannels {
            start: grid.time_at(r.start),
            glucose: filled.values[r.clone()]
                .iter()
                .map(|v| v.expect("segment values present"))
                .collect(),
            steps: grid.steps[r.clone()].to_vec(),
            intervals: intervals[r.clone()].to_vec(),
        })
        .collect();
    Ok((segs, filled.report))
}

/// A subject ready for training: normalised train and test windows and the
/// statistics fitted on the training side.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub cohort: Cohort,
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub stats: NormStats,
    pub gaps: GapReport,
}

/// Full pipeline for one subject. Statistics come from the grid samples
/// covered by training-window inputs only.
pub fn prepare_subject(
    record: &SubjectRecord,
    cfg: &PipelineConfig,
    window: usize,
    horizon: usize,
) -> Result<SubjectData> {
    let (segs, gaps) = segments(record, cfg)?;
    let raw_stats = NormStats::identity();
    let raw: Vec<WindowSample> = segs
        .iter()
        .flat_map(|s| make_windows(s, &record.subject_id, window, horizon, cfg.stride, &raw_stats))
        .collect();
    let (train_raw, _) = split_train_test(raw, cfg.train_fraction)
        .map_err(|e| Error::Data(format!("subject {}: {e}", record.subject_id)))?;
    let cutoff = train_raw.last().expect("non-empty train split").start;

    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for w in &train_raw {
        for k in 0..window {
            if seen.insert(w.time_at(k)) {
                rows.push([w.x_g[k], w.x_ws[k], w.x_wi[k]]);
            }
        }
    }
    let stats = NormStats::fit(rows)?;

    let windows: Vec<WindowSample> = segs
        .iter()
        .flat_map(|s| make_windows(s, &record.subject_id, window, horizon, cfg.stride, &stats))
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = windows.into_iter().partition(|w| w.start <= cutoff);
    Ok(SubjectData {
        subject_id: record.subject_id.clone(),
        cohort: record.cohort,
        train,
        test,
        stats,
        gaps,
    })
}

/// Prepares every subject, setting aside those the pipeline cannot use
/// (too few windows) together with the reason.
pub fn prepare_all(
    records: &[SubjectRecord],
    cfg: &PipelineConfig,
    window: usize,
    horizon: usize,
) -> (Vec<SubjectData>, Vec<String>) {
    let mut ready = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for r in records {
        match prepare_subject(r, cfg, window, horizon) {
            Ok(d) => ready.push(d),
            Err(e) => skipped.push(e.to_string()),
        }
    }
    (ready, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn seg(n: usize) -> SegmentChannels {
        SegmentChannels {
            start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            glucose: (0..n).map(|i| 100.0 + i as f64).collect(),
            steps: vec![0.0; n],
            intervals: vec![720.0; n],
        }
    }

    #[test]
    fn window_counts() {
        let id = NormStats::identity();
        assert_eq!(make_windows(&seg(86), "s", 80, 6, 1, &id).len(), 1);
        assert_eq!(make_windows(&seg(90), "s", 80, 6, 1, &id).len(), 5);
        assert_eq!(make_windows(&seg(85), "s", 80, 6, 1, &id).len(), 0);
        assert_eq!(make_windows(&seg(90), "s", 80, 6, 2, &id).len(), 3);
    }

    #[test]
    fn window_contents_and_targets() {
        let w = &make_windows(&seg(10), "s", 4, 2, 3, &NormStats::identity())[1];
        assert_eq!(w.x_g, vec![103., 104., 105., 106.]);
        assert_eq!(w.target, vec![107., 108.]);
        assert_eq!(w.start, seg(1).start + Duration::minutes(15));
    }

    fn dummy(n: usize) -> Vec<WindowSample> {
        make_windows(&seg(n + 5), "s", 4, 2, 1, &NormStats::identity())
    }

    #[test]
    fn split_counts() {
        let (a, b) = split_train_test(dummy(100), 0.85).unwrap();
        assert_eq!((a.len(), b.len()), (85, 15));
        let (a, b) = split_train_test(dummy(20), 0.85).unwrap();
        assert_eq!((a.len(), b.len()), (17, 3));
        assert!(a.last().unwrap().start < b[0].start);
        assert!(split_train_test(dummy(1), 0.85).is_err());
    }

    #[test]
    fn degenerate_channel_gets_unit_std() {
        let s = NormStats::fit([[1.0, 0.0, 5.0], [3.0, 0.0, 5.0]]).unwrap();
        assert_eq!(s.mean, [2.0, 0.0, 5.0]);
        assert_eq!(s.std, [1.0, 1.0, 1.0]);
        assert_eq!(s.degenerate, [false, true, true]);
    }
}
