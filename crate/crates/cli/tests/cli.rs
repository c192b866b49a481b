use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fracstable::{registry, KernelSpec, StableParams};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracstable"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn registry_file(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    let o = run(&[
        "registry",
        "--name",
        name,
        "--alpha",
        "1.6",
        "--H",
        "0.5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn registry_files_round_trip() {
    let dir = TempDir::new().unwrap();
    for name in registry::NAMES {
        let path = registry_file(dir.path(), name);
        let loaded = KernelSpec::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
        let built = registry::build(name, StableParams::new(1.6, 0.5).unwrap()).unwrap();
        assert_eq!(loaded.label, built.label);
        assert_eq!(loaded.params, built.params);
        assert_eq!(loaded.atoms, built.atoms, "{name}");
    }
}

#[test]
fn check_reports_a_well_defined_tent() {
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let o = run(&["check", "--spec", tent.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["well_defined"], true);
    assert_eq!(v["sufficient_conditions"]["sufficient"], true);
    assert_eq!(v["sufficient_conditions"]["atoms"][0]["s1"], "pass");
    assert_eq!(v["norm"]["converged"], true);
}

#[test]
fn check_reports_a_divergent_kernel() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("lin.json");
    let o = run(&[
        "registry",
        "--name",
        "linear",
        "--alpha",
        "1.6",
        "--H",
        "0.8",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let o = run(&["check", "--spec", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["well_defined"], false);
    assert_eq!(v["norm"]["value"], "+inf");
}

#[test]
fn norm_charfn_selfsim_and_flow_reports() {
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let spec = tent.to_str().unwrap();

    let v = json(&run(&["norm", "--spec", spec, "--t", "1.0"]));
    assert!((v["value"].as_f64().unwrap() - 0.873_89).abs() < 1e-4, "{v}");
    let v = json(&run(&["norm", "--spec", spec, "--cq", "--rel-tol", "1e-4"]));
    assert!((v["value"].as_f64().unwrap() - 0.873_89).abs() < 1e-3, "{v}");

    let o = run(&[
        "charfn",
        "--spec",
        spec,
        "--t",
        "0.5,1",
        "--theta",
        "1,-1",
        "--rel-tol",
        "1e-4",
    ]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert!(v["entries"][0]["psi"].as_f64().unwrap() > 0.0);

    let o = run(&["selfsim", "--spec", spec, "--a", "2", "--rel-tol", "1e-4"]);
    assert_eq!(code(&o), 0);
    assert!(json(&o)["residual"]["residual"].as_f64().unwrap() <= 1e-3);

    let o = run(&["verify-flow", "--spec", spec, "--samples", "2000", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    for key in ["flow_identity", "cocycle", "semi_additive_1", "semi_additive_2"] {
        assert!(v[key].as_f64().unwrap() <= 1e-12, "{key}: {v}");
    }
    assert!(v["generation"]["residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn classify_tent_is_cfsm() {
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let out = dir.path().join("report.json");
    let o = run(&[
        "classify",
        "--spec",
        tent.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["verdict"], "CFSM");
    assert_eq!(v["atoms"][0]["verdict"], "CYCLIC");
}

#[test]
fn simulate_writes_csv_reproducibly() {
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let spec = tent.to_str().unwrap();
    let csv = |threads: &str, seed: &str| {
        let o = run(&[
            "simulate",
            "--spec",
            spec,
            "--t",
            "0:0.25:1",
            "--reps",
            "20",
            "--seed",
            seed,
            "--threads",
            threads,
            "--u-cells",
            "300",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = csv("1", "42");
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "rep,t,value");
    assert_eq!(lines.len(), 1 + 20 * 5);
    assert_eq!(lines[1], "0,0,0");
    assert!(lines[5].starts_with("0,1,"));
    assert_eq!(a, csv("2", "42"));
    assert_ne!(a, csv("1", "43"));
}

#[test]
fn inconclusive_verdict_exits_with_three() {
    // two half-weight copies of the tent atom: not a single-atom comparison,
    // so a perfect fit cannot certify identity
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let mut split = KernelSpec::from_json(&std::fs::read_to_string(&tent).unwrap()).unwrap();
    split.atoms[0].weight = 0.5;
    split.atoms.push(split.atoms[0].clone());
    let split = write(dir.path(), "split.json", &split.to_json());
    let o = run(&[
        "unique",
        "--spec-a",
        tent.to_str().unwrap(),
        "--spec-b",
        split.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(json(&o)["verdict"], "inconclusive");
}

#[test]
fn malformed_spec_exits_with_two_and_a_field_path() {
    let dir = TempDir::new().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"label":"x","alpha":1.6,"H":0.5,"atoms":[{"weight":1,"q":"one"}]}"#,
    );
    let unknown = write(
        dir.path(),
        "unknown.json",
        &std::fs::read_to_string(registry_file(dir.path(), "tent"))
            .unwrap()
            .replacen("\"s\"", "\"speed\"", 1),
    );
    let range = write(
        dir.path(),
        "range.json",
        &std::fs::read_to_string(registry_file(dir.path(), "tent"))
            .unwrap()
            .replacen("\"q\": 1.0", "\"q\": -1.0", 1),
    );
    let cases: [(&Path, &str); 3] = [(&bad, "atoms[0].q"), (&unknown, "atoms[0]"), (&range, "atoms[0].q")];
    for (file, path) in cases {
        for sub in ["check", "norm", "classify", "verify-flow"] {
            let o = run(&[sub, "--spec", file.to_str().unwrap()]);
            assert_eq!(code(&o), 2, "{sub}");
            assert!(stderr(&o).contains(path), "{sub}: {}", stderr(&o));
        }
    }
    let o = run(&[
        "unique",
        "--spec-a",
        bad.to_str().unwrap(),
        "--spec-b",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let o = run(&["simulate", "--spec", bad.to_str().unwrap(), "--t", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn argument_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let tent = registry_file(dir.path(), "tent");
    let spec = tent.to_str().unwrap();
    let missing = dir.path().join("missing.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["check", "--spec", missing.to_str().unwrap()],
        vec!["registry", "--name", "nope", "--alpha", "1.6", "--H", "0.5"],
        vec!["registry", "--name", "tent", "--alpha", "2.5", "--H", "0.5"],
        vec!["norm", "--spec", spec, "--rel-tol", "-1"],
        vec!["charfn", "--spec", spec, "--t", "1,2", "--theta", "1"],
        vec!["charfn", "--spec", spec, "--t", "1,x", "--theta", "1,1"],
        vec!["selfsim", "--spec", spec, "--a", "-2"],
        vec!["simulate", "--spec", spec, "--t", "1,0.5"],
        vec!["simulate", "--spec", spec, "--t", "1:-0.1:2"],
        vec!["simulate", "--spec", spec, "--t", "1", "--v-cells", "0"],
        vec!["verify-flow", "--spec", spec, "--threads", "0"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}
