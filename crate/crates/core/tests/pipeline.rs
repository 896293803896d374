mod common;

use std::fs;

use npmp_core::pipeline::{
    run_pipeline, stage_hashes, validate_config, ExperimentConfig, Preset, RunOptions, Stage, MANIFEST_FILE,
    OUTPUT_ROOT_ENV,
};
use npmp_core::Error;

fn fig3(dir: &std::path::Path) -> ExperimentConfig {
    let mut c = common::tiny(Preset::Fig3, dir);
    c.npmp.modes.truncate(1);
    c.npmp.betas.truncate(1);
    c
}

#[test]
fn rerun_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = fig3(dir.path());
    let first = run_pipeline(&config, None, RunOptions::default()).unwrap();
    assert!(first.stages.iter().all(|s| !s.skipped));
    assert!(dir.path().join(MANIFEST_FILE).exists());
    let csv = fs::read_to_string(dir.path().join("evaluate/relative_performance.csv")).unwrap();
    let hash = &stage_hashes(&config)[&Stage::Evaluate];
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash: {hash}"));

    let second = run_pipeline(&config, None, RunOptions::default()).unwrap();
    assert!(second.stages.iter().all(|s| s.skipped));
    assert_eq!(
        first.stages.iter().map(|s| &s.files).collect::<Vec<_>>(),
        second.stages.iter().map(|s| &s.files).collect::<Vec<_>>()
    );
}

#[test]
fn changed_config_is_stale_until_forced() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fig3(dir.path());
    run_pipeline(&config, None, RunOptions::default()).unwrap();

    config.npmp.base.steps += 1;
    let before = stage_hashes(&fig3(dir.path()));
    let after = stage_hashes(&config);
    assert_eq!(before[&Stage::Trace], after[&Stage::Trace]);
    assert_ne!(before[&Stage::TrainNpmp], after[&Stage::TrainNpmp]);
    assert_ne!(before[&Stage::Evaluate], after[&Stage::Evaluate]);

    let err = run_pipeline(&config, None, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::StaleOutput { ref stage, .. } if stage == "train-npmp"), "{err}");

    let forced = run_pipeline(
        &config,
        None,
        RunOptions {
            force: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let skipped: Vec<bool> = forced.stages.iter().map(|s| s.skipped).collect();
    assert_eq!(skipped, vec![true, true, true, true, false, false]);
}

#[test]
fn tampered_output_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let config = fig3(dir.path());
    run_pipeline(&config, None, RunOptions::default()).unwrap();
    let path = dir.path().join("evaluate/relative_performance.csv");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("# config_hash: ", "# config_hash: x", 1)).unwrap();
    let rerun = run_pipeline(&config, None, RunOptions::default()).unwrap();
    assert!(!rerun.stages.last().unwrap().skipped);
    assert_eq!(fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn stage_subset_must_be_configured() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::tiny(Preset::Fig2, dir.path());
    let err = run_pipeline(&config, Some(&[Stage::Reuse]), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Argument(_)));
}

#[test]
fn later_stage_needs_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = fig3(dir.path());
    let err = run_pipeline(&config, Some(&[Stage::Evaluate]), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
}

#[test]
fn presets_roundtrip_through_toml() {
    for preset in [Preset::Fig2, Preset::Fig3, Preset::Fig4, Preset::Fig5] {
        let c = preset.config();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn validate_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut c = Preset::Fig3.config();
    c.npmp.betas = vec![0.0, 0.1];
    c.clips.heldout_prefix = c.clips.train_prefix.clone();
    fs::write(&path, c.to_toml_string().unwrap()).unwrap();
    match validate_config(&path) {
        Err(Error::Config(list)) => {
            assert!(list.iter().any(|e| e.starts_with("clips.heldout_prefix")), "{list:?}");
            assert!(list.iter().any(|e| e.contains("beta0_") && e.contains("beta must be positive")), "{list:?}");
        }
        other => panic!("expected config errors, got {other:?}"),
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let text = "name = \"x\"\nbogus = 1\n";
    assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))));
}

#[test]
fn relative_output_dir_uses_output_root() {
    let root = tempfile::tempdir().unwrap();
    std::env::set_var(OUTPUT_ROOT_ENV, root.path());
    let mut c = Preset::Fig2.config();
    c.output_dir = "runs/x".into();
    assert_eq!(c.resolved_output_dir(), root.path().join("runs/x"));
    std::env::remove_var(OUTPUT_ROOT_ENV);
}
