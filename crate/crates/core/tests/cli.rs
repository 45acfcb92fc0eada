use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fracpot::experiment::ReconstructionReport;

fn fracpot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracpot")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_owned).collect()
}

const SMALL: &str = r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "linear", "max_it": 50}"#;

#[test]
fn forward_writes_expected_row_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("fwd");
    let res = fracpot(&["forward", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["forward_neumann.csv", "forward_dirichlet.csv"] {
        assert_eq!(data_rows(&out.join(name)).len(), 13 * 9, "{name}");
    }
    assert_eq!(data_rows(&out.join("boundary.csv")).len(), 2 * 9);
}

#[test]
fn zero_excitation_gives_zero_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"n_cells": 8, "n_steps": 4, "alpha": 0.3, "q_true": "exp-cos", "neumann_expr": "0"}"#,
    );
    let out = tmp.path().join("fwd");
    assert!(fracpot(&["forward", &cfg, "--out", out.to_str().unwrap()]).status.success());
    for row in data_rows(&out.join("forward_neumann.csv")) {
        let u: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(u, 0.0);
    }
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let cases = [
        ("malformed.json", r#"{"n_cells": 12,"#),
        ("unknown.json", r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "linear", "bogus": 1}"#),
        ("alpha.json", r#"{"n_cells": 12, "n_steps": 8, "alpha": 1.5, "q_true": "linear"}"#),
        ("target.json", r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "nonsense("}"#),
        ("nan.json", r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "linear", "neumann_expr": "sqrt(-1)*t"}"#),
    ];
    for (name, json) in cases {
        let cfg = write_config(tmp.path(), name, json);
        for cmd in ["forward", "invert"] {
            let res = fracpot(&[cmd, &cfg, "--out", out]);
            assert_eq!(res.status.code(), Some(2), "{cmd} {name}");
            assert!(!res.stderr.is_empty());
        }
    }
    let missing = tmp.path().join("absent.json");
    assert_eq!(fracpot(&["invert", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn overflow_exits_three_with_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "linear", "neumann_expr": "1e200*t"}"#,
    );
    let out = tmp.path().join("inv");
    let res = fracpot(&["invert", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("SolverFailure"));
    let report: ReconstructionReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.status.is_failure());
}

#[test]
fn invert_from_the_exact_potential_stops_immediately() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "1+x", "q0": "1+x", "rho": 0.0}"#,
    );
    for method in ["kv", "ls"] {
        let out = tmp.path().join(method);
        let res = fracpot(&["invert", &cfg, "--out", out.to_str().unwrap(), "--method", method]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let report: ReconstructionReport =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert!(report.iterations <= 1, "{method}: {} iterations", report.iterations);
        assert!(report.final_error < 1e-12);
        for name in ["history.csv", "potential.csv", "boundary.csv"] {
            assert!(out.join(name).exists());
        }
        assert_eq!(data_rows(&out.join("potential.csv")).len(), 13);
    }
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("sw");
    let res = fracpot(&["sweep", &cfg, "--param", "epsilon", "--values", "0,0.01,0.05", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let dirs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 3);
    assert_eq!(data_rows(&out.join("summary.csv")).len(), 3);
    let seeds: Vec<u64> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .map(|p| {
            let r: ReconstructionReport = serde_json::from_str(&fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
            r.config.seed
        })
        .collect();
    assert!(seeds.iter().all(|&s| s == 42));
}

#[test]
fn seed_flag_overrides_config_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"n_cells": 12, "n_steps": 8, "alpha": 0.5, "q_true": "linear", "epsilon": 0.01, "seed": 5, "max_it": 5}"#,
    );
    let run = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        assert!(fracpot(&["--seed", seed, "invert", &cfg, "--out", out.to_str().unwrap()]).status.success());
        let mut r: ReconstructionReport =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        r.wall_time_s = 0.0;
        r
    };
    let a = run("7", "a");
    let b = run("7", "b");
    let c = run("8", "c");
    assert_eq!(a.config.seed, 7);
    assert_eq!(a, b);
    assert_ne!(a.boundary.observed, c.boundary.observed);
    assert_eq!(
        fs::read(tmp.path().join("a/history.csv")).unwrap(),
        fs::read(tmp.path().join("b/history.csv")).unwrap()
    );
}
