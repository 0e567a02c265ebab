use std::path::Path;

use attengluco_cli::config::TEMPLATE;
use attengluco_cli::RunConfig;

fn repo(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn default_config_matches_template_and_defaults() {
    let text = std::fs::read_to_string(repo("configs/default.conf")).unwrap();
    assert_eq!(text, TEMPLATE);
    let cfg = RunConfig::load(repo("configs/default.conf")).unwrap();
    let base = RunConfig::default();
    assert_eq!(cfg.train, base.train);
    assert_eq!(cfg.pipeline, base.pipeline);
    assert_eq!(
        (cfg.window, cfg.d_model, cfg.heads),
        (base.window, base.d_model, base.heads)
    );
}

#[test]
fn shipped_configs_parse() {
    let cfg = RunConfig::load(repo("configs/desk.conf")).unwrap();
    assert_eq!(cfg.ph_minutes, [5, 30, 60]);
    assert!(cfg.manifest.ends_with("data/manifest.csv"));
}
