use attengluco_core::data::synth::{synth_generate, write_dataset};
use attengluco_core::data::window::{segments, Channel};
use attengluco_core::data::{
    align_to_grid, load_manifest, load_subject, prepare_subject, Cohort, PipelineConfig, GRID_MINUTES,
};

#[test]
fn synthetic_data_survives_csv_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let subjects = synth_generate(13, 2, 2).unwrap();
    write_dataset(dir.path(), &subjects).unwrap();
    let manifest = load_manifest(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), 8);
    for (orig, entry) in subjects.iter().zip(&manifest) {
        let loaded = load_subject(entry).unwrap();
        assert_eq!(&loaded, orig);
        let (a, b) = (align_to_grid(orig).unwrap(), align_to_grid(&loaded).unwrap());
        assert_eq!(a.origin, b.origin);
        assert!(a
            .glucose
            .iter()
            .zip(&b.glucose)
            .all(|(x, y)| x.map(f64::to_bits) == y.map(f64::to_bits)));
        assert!(a.steps.iter().zip(&b.steps).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn windows_stay_inside_segments_with_aligned_channels() {
    let cfg = PipelineConfig {
        stride: 3,
        ..PipelineConfig::default()
    };
    let (window, horizon) = (24, 6);
    for rec in synth_generate(17, 2, 3).unwrap() {
        let (segs, _) = segments(&rec, &cfg).unwrap();
        let data = prepare_subject(&rec, &cfg, window, horizon).unwrap();
        for w in data.train.iter().chain(&data.test) {
            let seg = segs
                .iter()
                .find(|s| {
                    let offset = (w.start - s.start).num_minutes();
                    offset >= 0 && (offset / GRID_MINUTES) as usize + window + horizon <= s.len()
                })
                .expect("window inside one segment");
            let at = ((w.start - seg.start).num_minutes() / GRID_MINUTES) as usize;
            for k in 0..window {
                let z = [w.x_g[k], w.x_ws[k], w.x_wi[k]];
                let raw = [seg.glucose[at + k], seg.steps[at + k], seg.intervals[at + k]];
                for (ch, (zv, rv)) in [Channel::Glucose, Channel::Steps, Channel::Intervals]
                    .into_iter()
                    .zip(z.iter().zip(raw))
                {
                    assert!((data.stats.denormalize(ch, *zv) - rv).abs() < 1e-9);
                }
            }
            assert_eq!(w.target, seg.glucose[at + window..at + window + horizon]);
        }
    }
}

#[test]
fn split_is_chronological_on_every_subject() {
    for rec in synth_generate(19, 3, 2).unwrap() {
        let data = prepare_subject(&rec, &PipelineConfig::default(), 24, 6).unwrap();
        let n = data.train.len() + data.test.len();
        assert_eq!(data.train.len(), (0.85 * n as f64 + 1e-9).floor() as usize);
        let train_max = data.train.iter().map(|w| w.start).max().unwrap();
        let test_min = data.test.iter().map(|w| w.start).min().unwrap();
        assert!(train_max < test_min, "{}", rec.subject_id);
    }
}

#[test]
fn cohort_glucose_means_follow_severity() {
    let subjects = synth_generate(23, 10, 2).unwrap();
    let means: Vec<f64> = Cohort::ALL
        .iter()
        .map(|&c| {
            let v: Vec<f64> = subjects
                .iter()
                .filter(|s| s.cohort == c)
                .flat_map(|s| s.cgm.iter().map(|p| p.1))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}
