#![allow(dead_code)]

use std::path::PathBuf;

use mortsynth_core::{ContingencyTable, DimensionSpec, MarginalConstraint, TableKind};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn dim(name: &str, n: usize) -> DimensionSpec {
    DimensionSpec::new(name, (0..n).map(|i| format!("{name}{i}"))).unwrap()
}

pub fn table(dims: Vec<DimensionSpec>, values: Vec<f64>) -> ContingencyTable {
    ContingencyTable::new(dims, values, TableKind::Count).unwrap()
}

pub fn marginal(name: &str, values: Vec<f64>) -> MarginalConstraint {
    let d = dim(name, values.len());
    MarginalConstraint::new(table(vec![d], values)).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Copies the bundled data directory into a fresh temporary directory so a
/// test can edit inputs without touching the originals.
pub fn scratch_data() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    copy_dir(&data_dir(), tmp.path());
    tmp
}

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Rewrites the German smoker prevalence so female shares sum to 90%.
pub fn corrupt_smoker_prevalence(root: &std::path::Path) {
    let p = root.join("germany/smoker_gender.csv");
    let text = std::fs::read_to_string(&p).unwrap();
    let edited = text.replace("yes,F,20.8", "yes,F,10.8");
    assert_ne!(text, edited, "fixture layout changed");
    std::fs::write(p, edited).unwrap();
}

pub fn load_spec(config: &std::path::Path) -> mortsynth_core::pipelines::ScenarioSpec {
    let cfg = mortsynth_core::io::ScenarioConfig::load(config).unwrap();
    let seed = cfg.simulation.seed.unwrap_or(42);
    mortsynth_core::pipelines::ScenarioSpec::from_config(&cfg, seed).unwrap()
}
