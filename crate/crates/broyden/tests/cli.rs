//! End-to-end checks of the `broyden-lab` command-line interface.

use std::path::PathBuf;
use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_broyden-lab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("broyden-cli-{}-{}", std::process::id(), name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_problem_emits_parseable_document() {
    let dir = scratch("gen");
    let path = dir.join("problem.json");
    let out = Command::new(exe())
        .args([
            "gen-problem",
            "--problem",
            "chandrasekhar",
            "--c",
            "0.9",
            "--n",
            "12",
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let doc: broyden::problems::ProblemJson = serde_json::from_str(&text).unwrap();
    assert_eq!(doc.kind, "chandrasekhar");
    assert_eq!(doc.dim, 12);
    let problem = broyden::problems::ProblemInstance::from_json(&doc).unwrap();
    assert_eq!(broyden::problems::Problem::dim(&problem), 12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_flags_override_config_file() {
    let dir = scratch("cfg");
    let config = broyden::harness::ExperimentConfig {
        problem: broyden::harness::ProblemSpec::Logsumexp {
            n: 5,
            m: 7,
            gamma: 1.0,
            seed: 2,
        },
        s_grid: vec![1.0],
        schemes: vec![broyden::diagnostics::Scheme::Good],
        master_seed: 6,
        lipschitz_samples: 40,
        ..broyden::harness::ExperimentConfig::default()
    };
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let out_dir = dir.join("out");
    let out = Command::new(exe())
        .args(["compare", "--config"])
        .arg(&cfg_path)
        .args(["--s", "0.5", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // The flag replaced the config's grid: only the s = 0.5 run exists.
    assert!(out_dir.join("logsumexp_good_s0.5.csv").exists());
    assert!(!out_dir.join("logsumexp_good_s1.csv").exists());

    // The rest of the config (problem shape, scheme list) came through.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 1);
    assert_eq!(summary["config"]["problem"]["n"], 5);
    assert_eq!(summary["config"]["master_seed"], 6);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_problem_kind_fails_cleanly() {
    let out = Command::new(exe())
        .args(["solve", "--problem", "rosenbrock"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown problem kind"), "stderr: {stderr}");
}
