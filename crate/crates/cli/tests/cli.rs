use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use attengluco_cli::experiment::{FORGETTING_MATRIX, METRICS_BY_COHORT, RMSE_BY_HORIZON, RMSE_BY_SUBJECT};
use attengluco_cli::Table;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attengluco"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, n: &str) -> Output {
    bin(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "4",
        "--n-per-cohort",
        n,
        "--days",
        "2",
    ])
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const QUICK: &str = "\
# small run for tests
data.manifest = data/manifest.csv
data.stride = 12
model.window = 12
model.d_model = 8
model.heads = 2
experiment.ph_minutes = 5,30
train.epochs = 2
train.finetune_epochs = 1
train.repetitions = 1
output.dir = out
";

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert!(synth(&a, "2").status.success());
    assert!(synth(&b, "2").status.success());
    let manifest = Table::read(&a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.rows.len(), 8);
    for sub in ["manifest.csv", "cgm/healthy-000.csv", "activity/insulin-007.csv"] {
        assert_eq!(fs::read(a.join(sub)).unwrap(), fs::read(b.join(sub)).unwrap(), "{sub}");
    }
}

#[test]
fn experiment_with_both_models_then_eval_reproduces_metrics() {
    let d = tempfile::tempdir().unwrap();
    assert!(synth(&d.path().join("data"), "1").status.success());
    let cfg = write_config(
        d.path(),
        &format!("{QUICK}model.kind = both\nexperiment.scenario = forgetting\n"),
    );
    let run = bin(&["experiment", "--config", &cfg]);
    assert!(run.status.success(), "{}", stderr(&run));

    let out = d.path().join("out");
    for f in [METRICS_BY_COHORT, RMSE_BY_SUBJECT, RMSE_BY_HORIZON, FORGETTING_MATRIX] {
        let t = Table::read(&out.join(f)).unwrap();
        assert!(!t.rows.is_empty(), "{f}");
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(t.to_csv(), text, "{f} round trip");
    }
    let cohorts = Table::read(&out.join(METRICS_BY_COHORT)).unwrap();
    let models: Vec<&str> = (0..cohorts.rows.len())
        .map(|r| cohorts.get(r, "model").unwrap())
        .collect();
    assert!(models.contains(&"attengluco") && models.contains(&"baseline"));
    assert_eq!(cohorts.rows.len(), 2 * 2 * 4);

    // the final forgetting row is the model after every cohort, scored on test splits
    let forget = Table::read(&out.join(FORGETTING_MATRIX)).unwrap();
    let ckpt = out.join("checkpoints/attengluco_ph30.ckpt");
    let manifest = d.path().join("data/manifest.csv");
    let eval = bin(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--ph-minutes",
        "30",
    ]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let eval_path = d.path().join("eval.csv");
    fs::write(&eval_path, stdout(&eval)).unwrap();
    let eval = Table::read(&eval_path).unwrap();
    for cohort in ["healthy", "pre_t2dm", "oral", "insulin"] {
        let expected = (0..forget.rows.len())
            .find(|&r| {
                forget.get(r, "model") == Some("attengluco")
                    && forget.get(r, "ph_minutes") == Some("30")
                    && forget.get(r, "trained_through") == Some("insulin")
                    && forget.get(r, "evaluated_on") == Some(cohort)
            })
            .map(|r| forget.get(r, "rmse").unwrap().parse::<f64>().unwrap())
            .unwrap();
        let got = (0..eval.rows.len())
            .find(|&r| eval.get(r, "level") == Some("cohort") && eval.get(r, "cohort") == Some(cohort))
            .map(|r| eval.get(r, "rmse").unwrap().parse::<f64>().unwrap())
            .unwrap();
        assert_eq!(got.to_bits(), expected.to_bits(), "{cohort}");
    }

    let wrong = bin(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--ph-minutes",
        "60",
    ]);
    assert_eq!(wrong.status.code(), Some(2));
    assert!(stderr(&wrong).contains("m=6"), "{}", stderr(&wrong));
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), QUICK);
    let o = bin(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest.csv"), "{}", stderr(&o));
}

#[test]
fn config_errors_are_reported_together() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        "model.window = -3\nmodel.colour = blue\ntrain.epochs = many\nnonsense\n",
    );
    let o = bin(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["model.window", "model.colour", "train.epochs", "nonsense"] {
        assert!(err.contains(needle), "{needle} missing from: {err}");
    }
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(bin(&["experiment"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn empty_split_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    assert!(synth(&d.path().join("data"), "1").status.success());
    let cfg = write_config(d.path(), &format!("{QUICK}model.kind = baseline\n"));
    assert!(bin(&["experiment", "--config", &cfg]).status.success());

    // one subject with an hour of readings: too short for any window
    let short = d.path().join("short");
    fs::create_dir_all(&short).unwrap();
    let cgm: String = (0..12)
        .map(|k| format!("2024-01-01T00:{:02}:00Z,110\n", 5 * k))
        .collect();
    fs::write(short.join("cgm.csv"), format!("timestamp,glucose_mg_dl\n{cgm}")).unwrap();
    fs::write(short.join("steps.csv"), "timestamp,steps\n").unwrap();
    fs::write(
        short.join("manifest.csv"),
        "subject_id,cohort,cgm_path,activity_path\ns1,healthy,cgm.csv,steps.csv\n",
    )
    .unwrap();
    let o = bin(&[
        "eval",
        "--checkpoint",
        d.path().join("out/checkpoints/baseline_ph5.ckpt").to_str().unwrap(),
        "--manifest",
        short.join("manifest.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stderr(&o).contains("no windows"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = bin(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("softmax_rows"));
    let bad = bin(&["gradcheck", "--inject-fault", "softmax_rows"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}
