//! Deterministic synthetic CGM + step-count subjects.
//!
//! Glucose is a cohort-dependent baseline plus three meal responses a day
//! (lognormal amplitudes, gamma-shaped rises, a post-meal dip in treated
//! cohorts), glucose drops that follow
//! walking bouts after a 20–40 minute lag, a mild circadian swing and AR(1)
//! sensor noise. Readings are rounded to whole mg/dL, clamped to the
//! sensor's 40–400 range, jittered by a few seconds off the 5-minute grid,
//! and thinned by random dropouts and occasional multi-hour gaps. Steps are
//! reported per minute during walking bouts plus sparse incidental steps.
//! Every subject is a pure function of `(seed, subject index)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::csv_io::{write_cgm_csv, write_manifest, write_steps_csv};
use super::{Cohort, SubjectRecord};
use crate::error::{contract, Result};
use crate::seeds::{derive, Purpose};

/// Generator parameters per cohort. These shape the synthetic data only.
#[derive(Clone, Copy, Debug)]
pub struct CohortProfile {
    pub baseline: f64,
    pub meal_median: f64,
    pub meal_peak_minutes: f64,
    /// Depth of the post-meal dip below baseline, as a fraction of the peak.
    pub meal_undershoot: f64,
    pub activity_drop: f64,
    pub noise_sd: f64,
    /// Lag-1 autocorrelation of the sensor noise.
    pub noise_ar: f64,
}

pub fn profile(cohort: Cohort) -> CohortProfile {
    match cohort {
        Cohort::Healthy => CohortProfile {
            baseline: 92.0,
            meal_median: 28.0,
            meal_peak_minutes: 30.0,
            meal_undershoot: 0.0,
            activity_drop: 10.0,
            noise_sd: 2.0,
            noise_ar: 0.5,
        },
        Cohort::PreT2dm => CohortProfile {
            baseline: 108.0,
            meal_median: 38.0,
            meal_peak_minutes: 45.0,
            meal_undershoot: 0.1,
            activity_drop: 13.0,
            noise_sd: 2.5,
            noise_ar: 0.65,
        },
        Cohort::Oral => CohortProfile {
            baseline: 132.0,
            meal_median: 52.0,
            meal_peak_minutes: 65.0,
            meal_undershoot: 0.25,
            activity_drop: 17.0,
            noise_sd: 3.0,
            noise_ar: 0.8,
        },
        Cohort::Insulin => CohortProfile {
            baseline: 152.0,
            meal_median: 66.0,
            meal_peak_minutes: 90.0,
            meal_undershoot: 0.5,
            activity_drop: 20.0,
            noise_sd: 3.5,
            noise_ar: 0.9,
        },
    }
}

const MINUTES_PER_DAY: i64 = 24 * 60;
const SENSOR_RANGE: (f64, f64) = (40.0, 400.0);

struct Meal {
    at: f64,
    amplitude: f64,
}

struct Bout {
    start: f64,
    duration: f64,
    cadence: f64,
    lag: f64,
}

fn gamma_bump(tau: f64, peak: f64) -> f64 {
    if tau <= 0.0 || tau > 10.0 * peak {
        return 0.0;
    }
    let x = tau / peak;
    x * (1.0 - x).exp()
}

/// Rise peaking at `peak` minutes, then a slower dip of relative depth
/// `undershoot` peaking three times later.
fn meal_response(tau: f64, peak: f64, undershoot: f64) -> f64 {
    gamma_bump(tau, peak) - undershoot * gamma_bump(tau - peak, 2.0 * peak)
}

fn bout_response(tau: f64, duration: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let rise = |t: f64| 1.0 - (-t / 15.0).exp();
    if tau <= duration {
        rise(tau)
    } else {
        rise(duration) * (-(tau - duration) / 40.0).exp()
    }
}

fn circadian(minute_of_day: f64) -> f64 {
    // dawn rise peaking around 06:00
    5.0 * (2.0 * PI * (minute_of_day - 2.0 * 60.0) / MINUTES_PER_DAY as f64)
        .sin()
        .max(0.0)
}

/// Generates one subject. `index` is its position in the generated set.
pub fn synth_subject(seed: u64, index: usize, cohort: Cohort, days: u32) -> SubjectRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Purpose::Synth, index as u64, 0));
    let p = profile(cohort);
    let epoch = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let start = epoch + Duration::seconds(rng.random_range(0..MINUTES_PER_DAY * 60));
    let start_minute_of_day = ((start - epoch).num_seconds() as f64 / 60.0) % MINUTES_PER_DAY as f64;

    let baseline = p.baseline + rng.random_range(-8.0..8.0);
    let meal_scale = rng.random_range(0.8..1.2);
    let amp = LogNormal::new((p.meal_median * meal_scale).ln(), 0.35).expect("valid lognormal");

    let total_minutes = days as f64 * MINUTES_PER_DAY as f64;
    // events are laid out on the subject's clock, day 0 starting at local midnight
    // before `start`, so times are shifted by the start's time of day
    let mut meals = Vec::new();
    let mut bouts = Vec::new();
    for day in 0..=days as i64 {
        let midnight = (day * MINUTES_PER_DAY) as f64 - start_minute_of_day;
        for centre in [7.5 * 60.0, 12.5 * 60.0, 18.75 * 60.0] {
            meals.push(Meal {
                at: midnight + centre + rng.random_range(-40.0..40.0),
                amplitude: amp.sample(&mut rng),
            });
        }
        for _ in 0..rng.random_range(1..=3) {
            bouts.push(Bout {
                start: midnight + rng.random_range(7.0 * 60.0..21.0 * 60.0),
                duration: rng.random_range(10.0..60.0f64).round(),
                cadence: rng.random_range(70.0..120.0),
                lag: rng.random_range(20.0..40.0),
            });
        }
    }

    // steps: one row per minute with a nonzero count
    let mut steps: BTreeMap<i64, f64> = BTreeMap::new();
    for b in &bouts {
        let first = b.start.round() as i64;
        for m in first..first + b.duration as i64 {
            let count = (b.cadence + rng.random_range(-10.0..10.0)).round().max(1.0);
            *steps.entry(m).or_default() += count;
        }
    }
    for m in 0..total_minutes as i64 {
        let minute_of_day = (start_minute_of_day + m as f64) % MINUTES_PER_DAY as f64;
        let awake = (7.0 * 60.0..23.0 * 60.0).contains(&minute_of_day);
        if awake && rng.random_bool(0.02) {
            *steps.entry(m).or_default() += rng.random_range(5..=40) as f64;
        }
    }
    let steps: Vec<(DateTime<Utc>, f64)> = steps
        .into_iter()
        .filter(|(m, _)| *m >= 0 && (*m as f64) < total_minutes)
        .map(|(m, v)| (start + Duration::minutes(m), v))
        .collect();

    let n = days as usize * (MINUTES_PER_DAY as usize / 5);
    let noise = Normal::new(0.0, p.noise_sd * (1.0 - p.noise_ar * p.noise_ar).sqrt()).expect("valid normal");
    let mut ar = 0.0;
    let mut skip_until = 0usize;
    let mut cgm = Vec::with_capacity(n);
    for k in 0..n {
        let minute = 5.0 * k as f64;
        ar = p.noise_ar * ar + noise.sample(&mut rng);
        let mut g = baseline + circadian((start_minute_of_day + minute) % MINUTES_PER_DAY as f64) + ar;
        for m in &meals {
            g += m.amplitude * meal_response(minute - m.at, p.meal_peak_minutes, p.meal_undershoot);
        }
        for b in &bouts {
            g -= p.activity_drop * (b.cadence / 100.0) * bout_response(minute - b.start - b.lag, b.duration);
        }

        // dropouts: keep the first and last reading so the span is `days`
        let edge = k == 0 || k + 1 == n;
        if !edge {
            if k < skip_until {
                continue;
            }
            if rng.random_bool(0.001) {
                // sensor warm-up / charging: 70 to 150 minutes
                skip_until = k + rng.random_range(14..=30);
                continue;
            }
            if rng.random_bool(0.004) {
                skip_until = k + rng.random_range(2..=8);
                continue;
            }
            if rng.random_bool(0.01) {
                continue;
            }
        }
        let jitter = if k == 0 { 0 } else { rng.random_range(0..=20) };
        let t = start + Duration::minutes(5 * k as i64) + Duration::seconds(jitter);
        cgm.push((t, g.round().clamp(SENSOR_RANGE.0, SENSOR_RANGE.1)));
    }

    SubjectRecord {
        subject_id: format!("{}-{:03}", cohort.name(), index),
        cohort,
        cgm,
        steps,
    }
}

/// `n_per_cohort` subjects of each cohort, in cohort order.
pub fn synth_generate(seed: u64, n_per_cohort: usize, days: u32) -> Result<Vec<SubjectRecord>> {
    contract!(days >= 1, "days must be >= 1");
    let mut out = Vec::with_capacity(4 * n_per_cohort);
    for cohort in Cohort::ALL {
        for _ in 0..n_per_cohort {
            let index = out.len();
            out.push(synth_subject(seed, index, cohort, days));
        }
    }
    Ok(out)
}

/// Writes `cgm/<id>.csv`, `activity/<id>.csv` and `manifest.csv` under `dir`.
pub fn write_dataset(dir: &Path, subjects: &[SubjectRecord]) -> Result<()> {
    let mut rows = Vec::with_capacity(subjects.len());
    for s in subjects {
        let cgm = format!("cgm/{}.csv", s.subject_id);
        let act = format!("activity/{}.csv", s.subject_id);
        write_cgm_csv(dir.join(&cgm), &s.cgm)?;
        write_steps_csv(dir.join(&act), &s.steps)?;
        rows.push((s.subject_id.clone(), s.cohort, cgm, act));
    }
    write_manifest(dir.join("manifest.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_output() {
        let a = synth_generate(5, 1, 2).unwrap();
        let b = synth_generate(5, 1, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_generate(6, 1, 2).unwrap());
    }

    #[test]
    fn glucose_in_range_and_timestamps_increasing() {
        for s in synth_generate(11, 2, 3).unwrap() {
            assert!(s.cgm.iter().all(|(_, g)| *g > 20.0 && *g < 600.0));
            assert!(s.cgm.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(s.steps.windows(2).all(|w| w[0].0 < w[1].0));
            let span = s.cgm.last().unwrap().0 - s.cgm[0].0;
            assert!(span >= Duration::days(3) - Duration::minutes(6));
        }
    }

    #[test]
    fn rejects_zero_days() {
        assert!(synth_generate(1, 1, 0).is_err());
    }
}
