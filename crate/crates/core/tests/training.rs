use attengluco_core::data::synth::synth_generate;
use attengluco_core::data::{prepare_all, PipelineConfig, SubjectData};
use attengluco_core::model::BaselineConfig;
use attengluco_core::training::scenarios::{scenario_cohort_finetune, scenario_forgetting, scenario_isolated};
use attengluco_core::training::{adam_step, train, AdamState, TrainConfig};
use attengluco_core::{ModelConfig, ModelSpec, ParamSet, Tensor};

const WINDOW: usize = 12;
const HORIZON: usize = 2;

fn subjects(n_per_cohort: usize) -> Vec<SubjectData> {
    let records = synth_generate(31, n_per_cohort, 2).unwrap();
    let cfg = PipelineConfig {
        stride: 12,
        ..PipelineConfig::default()
    };
    let (ready, skipped) = prepare_all(&records, &cfg, WINDOW, HORIZON);
    assert!(skipped.is_empty(), "{skipped:?}");
    ready
}

fn spec() -> ModelSpec {
    ModelSpec::AttenGluco(ModelConfig::new(WINDOW, HORIZON, 4, 2))
}

fn quick(epochs: usize, finetune_epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        finetune_epochs,
        repetitions: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_is_deterministic() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::matrix(2, 2, vec![0.5, -0.2, 0.1, 0.9]).unwrap());
    let grads = vec![vec![0.3, -0.1, 0.0, 2.0]];
    let run = || {
        let mut q = p.clone();
        let mut s = AdamState::new(&q);
        for _ in 0..5 {
            adam_step(&mut q, &grads, &mut s, 1e-3).unwrap();
        }
        q
    };
    assert_eq!(run(), run());
    assert_ne!(run(), p);
}

#[test]
fn training_contract() {
    let data = &subjects(1)[0];
    let cfg = quick(3, 3);
    let stats_before = data.stats.clone();
    let windows_before = data.train.clone();
    let fresh = spec().build(4).unwrap();

    let mut a = fresh.clone();
    let curve_a = train(&mut a, &data.train, &data.stats, &cfg, 3, 9).unwrap();
    let mut b = fresh.clone();
    let curve_b = train(&mut b, &data.train, &data.stats, &cfg, 3, 9).unwrap();
    assert_eq!(curve_a.len(), 3);
    assert_eq!(curve_a, curve_b);
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), fresh.params());
    assert_eq!(data.stats, stats_before);
    assert_eq!(data.train, windows_before);

    let mut c = fresh.clone();
    train(&mut c, &data.train, &data.stats, &cfg, 3, 10).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn training_rejects_mismatched_windows() {
    let data = &subjects(1)[0];
    let mut m = ModelSpec::Baseline(BaselineConfig {
        window: WINDOW + 1,
        horizon: HORIZON,
    })
    .build(0)
    .unwrap();
    assert!(train(&mut m, &data.train, &data.stats, &quick(1, 1), 1, 0).is_err());
    assert!(train(&mut m, &[], &data.stats, &quick(1, 1), 1, 0).is_err());
}

#[test]
fn single_subject_cohorts_make_finetune_match_isolated() {
    let s = subjects(1);
    let cfg = quick(2, 5);
    let iso = scenario_isolated(&s, &spec(), &cfg, 3).unwrap();
    let ft = scenario_cohort_finetune(&s, &spec(), &cfg, 3).unwrap();
    assert_eq!(iso.per_subject.len(), 4);
    for (a, b) in iso.per_subject.iter().zip(&ft.per_subject) {
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn finetune_reports_every_subject_in_order() {
    let s = subjects(2);
    let r = scenario_cohort_finetune(&s, &spec(), &quick(1, 1), 0).unwrap();
    assert_eq!(r.per_subject.len(), s.len());
    for (res, subj) in r.per_subject.iter().zip(&s) {
        assert_eq!(res.subject_id, subj.subject_id);
    }
    assert_eq!(
        r.per_subject.iter().map(|p| p.position).collect::<Vec<_>>(),
        [1, 2, 1, 2, 1, 2, 1, 2]
    );
}

#[test]
fn forgetting_fills_lower_triangle_and_needs_every_cohort() {
    let s = subjects(1);
    let r = scenario_forgetting(&s, &spec(), &quick(1, 1), 0).unwrap();
    let m = r.forgetting.as_ref().unwrap();
    assert_eq!(m.iter().count(), 10);
    for (j, i, _) in m.iter() {
        assert!(i.index() <= j.index());
    }
    for (c, rep) in &r.by_cohort {
        assert_eq!(Some(rep), m.get(*c, *c));
    }
    assert!(scenario_forgetting(&s[..3], &spec(), &quick(1, 1), 0).is_err());
}
