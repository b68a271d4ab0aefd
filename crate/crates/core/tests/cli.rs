mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use common::{corrupt_smoker_prevalence, data_dir, scratch_data};

fn mortsynth(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mortsynth"))
        .args(args)
        .env_remove("MORTSYNTH_SEED")
        .output()
        .unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn config(name: &str) -> String {
    data_dir().join(format!("{name}.toml")).to_string_lossy().into_owned()
}

#[test]
fn scenario_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = mortsynth(&[
            "scenario", "2", "--config", &config("italy"), "--replicates", "300",
            "--out", dir.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key("ci.csv") && ta.contains_key("manifest.json") && ta.contains_key("split_rates.csv"));
    assert!(ta.contains_key("plots/aggregated.svg") && ta.contains_key("plots/Lombardia.svg"));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs between runs");
    }

    // a different seed changes the simulation but not the deterministic tables
    let c = tmp.path().join("c");
    let o = mortsynth(&[
        "scenario", "2", "--config", &config("italy"), "--replicates", "300", "--seed", "7",
        "--out", c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let tc = tree(&c);
    assert_ne!(tc["ci.csv"], ta["ci.csv"]);
    assert_eq!(tc["rates.csv"], ta["rates.csv"]);
}

#[test]
fn ipf_honours_the_tolerance_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mortsynth(&["ipf", "--config", &config("germany"), "--tol", "1e-10", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("ipf.json")).unwrap()).unwrap();
    assert!(report["converged"].as_bool().unwrap());
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-10);
    assert_eq!(report["tolerance"].as_f64().unwrap(), 1e-10);
    assert!(tmp.path().join("joint.meta.toml").exists());
}

#[test]
fn validate_exit_codes() {
    let ok = mortsynth(&["validate", "--config", &config("italy"), "--replicates", "200"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let tmp = scratch_data();
    corrupt_smoker_prevalence(tmp.path());
    let out = tmp.path().join("report");
    let bad = mortsynth(&[
        "validate", "--config", tmp.path().join("germany.toml").to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let report = std::fs::read_to_string(out.join("validation_report.json")).unwrap();
    assert!(report.contains("prevalence-sum") && report.contains("gender=F"));
}

#[test]
fn usage_and_input_errors() {
    assert_eq!(mortsynth(&["--help"]).status.code(), Some(0));
    assert_eq!(mortsynth(&["--version"]).status.code(), Some(0));
    assert_eq!(mortsynth(&["ipf", "--bogus"]).status.code(), Some(2));
    assert_eq!(mortsynth(&["scenario", "4", "--config", &config("italy")]).status.code(), Some(2));
    assert_eq!(mortsynth(&["ipf", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(2));
    let o = mortsynth(&["fit", "--config", &config("italy")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[source]"));
}

#[test]
fn fit_and_split_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let fit = tmp.path().join("fit");
    let o = mortsynth(&["fit", "--config", &config("switzerland"), "--out", fit.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(fit.join("gam_model.txt")).unwrap();
    assert!(mortsynth_core::gam::GamModel::from_text(&text).is_ok());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fit.join("fit.json")).unwrap()).unwrap();
    assert!(report["training_log_rmse"].as_f64().unwrap() <= 0.05);

    let split = tmp.path().join("split");
    let o = mortsynth(&["split", "--config", &config("italy"), "--replicates", "100", "--out", split.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(split.join("split_rates.csv").exists() && split.join("split_exposure.meta.toml").exists());
}
