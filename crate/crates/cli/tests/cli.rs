use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gradiform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradiform"))
        .args(args)
        .env_remove("GRADIFORM_SEED")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn classify_verdicts() {
    let sym = json_of(&gradiform(&[
        "classify",
        "--set",
        "system={\"name\":\"quadratic\",\"params\":{\"dim\":2,\"q_1_2\":0.5,\"q_2_1\":0.5}}",
    ]));
    assert_eq!(sym["schema"], "gradiform/1");
    assert_eq!(sym["results"]["verdict"], "Closed");

    let lorenz = json_of(&gradiform(&["classify"]));
    assert_eq!(lorenz["results"]["verdict"], "NonIntegrable");
    let loops = lorenz["results"]["closedness"]["loop_integrals"].as_array().unwrap();
    assert_eq!(loops.len(), 3);

    let jj = json_of(&gradiform(&["classify", "--set", "system.name=jj_circuit"]));
    assert_ne!(jj["results"]["verdict"], "Closed");
}

#[test]
fn decompose_reconstructs() {
    for name in ["lorenz", "rotation", "jj_circuit"] {
        let v = json_of(&gradiform(&["decompose", "--set", &format!("system.name={name}")]));
        let s = &v["results"]["summary"];
        assert!(s["max_reconstruction_residual"].as_f64().unwrap() < 1e-8, "{name}");
        assert!(s["max_radial_violation"].as_f64().unwrap() < 1e-10, "{name}");
    }
}

#[test]
fn gradientize_examples() {
    let v = json_of(&gradiform(&[
        "gradientize",
        "--set",
        "system={\"name\":\"quadratic\",\"params\":{\"dim\":2,\"q_1_1\":-1,\"q_1_2\":2,\"q_2_2\":-3}}",
    ]));
    assert_eq!(v["results"]["verdict"], "gradientized");
    assert!(v["results"]["potential"]["values"].as_array().is_some_and(|a| !a.is_empty()));

    let rot = json_of(&gradiform(&["gradientize", "--set", "system.name=rotation"]));
    assert_eq!(rot["results"]["symmetrizer"]["verdict"], "infeasible");
    assert_eq!(rot["results"]["consistency_equation"]["verdict"], "consistency_only_solution");
}

#[test]
fn simulate_requires_a_potential_source() {
    let out = gradiform(&["simulate", "--set", "system.name=double_well"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("potential"));
}

#[test]
fn config_errors_exit_2() {
    let out = gradiform(&["classify", "--set", "system.name=nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gradiform(&["classify", "--set", "bogus.key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gradiform(&["classify", "--config", "/nonexistent/config.json"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn divergence_exits_3() {
    let out = gradiform(&[
        "simulate",
        "--set",
        "system={\"name\":\"quadratic\",\"params\":{\"dim\":1,\"q_1_1\":1000}}",
        "--set",
        "potential_source=analytic",
        "--set",
        "simulation.dt=1",
        "--set",
        "simulation.steps=500",
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_trajectories_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj");
    let report = dir.path().join("out/report.json");
    let out = gradiform(&[
        "simulate",
        "--set",
        "system.name=double_well",
        "--set",
        "potential_source=analytic",
        "--set",
        "simulation.trajectories=3",
        "--set",
        "simulation.steps=200",
        "--traj-dir",
        traj.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["results"]["summary"]["all_monotone"], true);
    let mut files: Vec<_> = std::fs::read_dir(&traj).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 3);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert!(text.starts_with("t,x_1\n"));
    assert_eq!(text.lines().count(), 202);
    // Only the report remains in its directory: no temporary leftovers.
    assert_eq!(std::fs::read_dir(report.parent().unwrap()).unwrap().count(), 1);
}

fn graham(extra: &[&str]) -> Value {
    let mut args = vec![
        "graham",
        "--set",
        "system.name=double_well",
        "--set",
        "simulation.eps=[0.1,0.2]",
        "--set",
        "simulation.ensemble_size=4",
        "--set",
        "simulation.sde_steps=4000",
    ];
    args.extend_from_slice(extra);
    json_of(&gradiform(&args))
}

#[test]
fn graham_emits_one_block_per_noise_level() {
    let v = graham(&[]);
    let blocks = v["results"]["estimates"].as_array().unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0]["eps"], 0.1);
    assert_eq!(blocks[1]["eps"], 0.2);
}

#[test]
fn seeds_control_reproducibility() {
    let a = without_timings(graham(&[]));
    let b = without_timings(graham(&[]));
    assert_eq!(a, b);
    let c = without_timings(graham(&["--set", "simulation.master_seed=5"]));
    assert_ne!(a["results"], c["results"]);

    let out = Command::new(env!("CARGO_BIN_EXE_gradiform"))
        .args([
            "graham",
            "--set",
            "system.name=double_well",
            "--set",
            "simulation.eps=[0.1,0.2]",
            "--set",
            "simulation.ensemble_size=4",
            "--set",
            "simulation.sde_steps=4000",
        ])
        .env("GRADIFORM_SEED", "5")
        .output()
        .unwrap();
    let d = without_timings(json_of(&out));
    assert_eq!(d["config"]["simulation"]["master_seed"], 5);
    assert_eq!(c["results"], d["results"]);
}

#[test]
fn reports_are_byte_identical_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..2).map(|k| dir.path().join(format!("r{k}.json"))).collect();
    for p in &paths {
        let out = gradiform(&["gradientize", "--set", "system.name=jj_circuit_linear", "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
    }
    let strip = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        serde_json::to_string(&without_timings(v)).unwrap()
    };
    assert_eq!(strip(&paths[0]), strip(&paths[1]));
}

#[test]
fn zoo_list_names_every_system() {
    let v = json_of(&gradiform(&["zoo-list"]));
    let text = v["results"].to_string();
    for name in ["lorenz", "jj_circuit", "jj_circuit_linear", "quadratic", "rotation", "double_well", "ou"] {
        assert!(text.contains(&format!("\"{name}\"")), "{name}");
    }
}
