//! Checks against the official split files. Skipped unless
//! `CODEMIX_HASOC_DIR` points at a directory holding
//! `{tanglish,manglish}_{train,test}.tsv`; the svm score check also needs
//! `CODEMIX_MODEL_DIR`.

mod common;

use common::checks;

#[test]
fn split_counts() {
    let Some(dir) = checks::env_dir(checks::HASOC_ENV) else {
        eprintln!("skipped: {} not set", checks::HASOC_ENV);
        return;
    };
    checks::hasoc_counts(&dir).unwrap();
}

#[test]
fn tanglish_prep_keeps_every_row() {
    let Some(dir) = checks::env_dir(checks::HASOC_ENV) else {
        eprintln!("skipped: {} not set", checks::HASOC_ENV);
        return;
    };
    let out = tempfile::tempdir().unwrap();
    let mut config = codemix::pipeline::PipelineConfig { out_dir: out.path().to_path_buf(), ..Default::default() };
    config.dataset.train = checks::hasoc_file(&dir, "tanglish", "train");
    let written = codemix::pipeline::cmd_prep(&config).unwrap();
    let rows = codemix::pipeline::read_clean(&written[0].0, codemix::pipeline::Stage::Prep).unwrap();
    assert_eq!(rows.len(), 4000);
}

#[test]
fn manglish_svm_score() {
    let (Some(data), Some(model)) = (checks::env_dir(checks::HASOC_ENV), checks::env_dir(checks::MODEL_ENV)) else {
        eprintln!("skipped: set {} and {}", checks::HASOC_ENV, checks::MODEL_ENV);
        return;
    };
    // Non-gating: the outcome is printed, never asserted.
    match checks::manglish_svm(&data, &model) {
        Ok(detail) => eprintln!("within band: {detail}"),
        Err(reason) => eprintln!("outside band: {reason}"),
    }
}
