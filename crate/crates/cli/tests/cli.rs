use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stokes-cem")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"schema":1,"nx":16,"Nx":[2,4],"ell":3,"k":1}"#;

#[test]
fn missing_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", "/nonexistent/config.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "Io");
}

#[test]
fn invalid_config_writes_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema":1,"nx":16,"Nx":[3]}"#);
    let out = dir.path().join("out");
    let o = run(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"], "IncompatibleRefinement");
}

#[test]
fn solver_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema":1,"nx":16,"Nx":[4],"ell":1}"#);
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"], "ZeroLambda");
}

#[test]
fn solve_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.json", "velocity.csv", "pressure.csv", "eigen.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["H", "h", "ell", "k", "err_u_a", "err_u_rel", "err_p", "err_p_rel", "lambda_min_excluded", "gamma", "n_ms", "timings"] {
        assert!(m.get(key).is_some(), "{key}");
    }
    assert_eq!(m["seed"], 9);
    assert_eq!(m["n_ms"], 12);
    assert!(fs::read_to_string(out.join("velocity.csv")).unwrap().starts_with("x,y,ux_h,uy_h,ux_ms,uy_ms\n"));
}

#[test]
fn commands_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for cmd in ["convergence", "decay", "eigreport"] {
        let mut outputs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{cmd}-{threads}"));
            let o = run(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                .collect();
            files.sort();
            assert!(!files.is_empty());
            outputs.push(files);
        }
        assert_eq!(outputs[0], outputs[1], "{cmd}");
    }
}

#[test]
fn convergence_and_decay_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema":1,"nx":16,"Nx":[2,4],"shapes":"none","k":"global","decay":{"blocks":[[1,1]]}}"#);
    let out = dir.path().join("out");
    assert!(run(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][..6], ["H", "Nx", "k", "n_ms", "err_u_a", "rate"]);
    assert_eq!(rows[1][5], "");
    assert_eq!(rows[2][2], "global");
    let rate: f64 = rows[2][5].parse().unwrap();
    assert_eq!(rows[2][5], format!("{rate:.2}"));

    assert!(run(&["decay", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out.join("decay.csv")).unwrap();
    let mut last = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e: f64 = f[6].parse().unwrap();
        let key = (f[0].to_string(), f[4].to_string());
        if let Some(&prev) = last.get(&key) {
            assert!(e <= prev * (1.0 + 1e-12));
        }
        last.insert(key, e);
    }
    assert!(last.values().all(|&e| e.abs() < 1e-20));

    assert!(run(&["eigreport", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out.join("eigen_N4.csv")).unwrap();
    let lambda_rows: Vec<(usize, f64)> = csv
        .lines()
        .filter(|l| l.contains(",lambda,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[4].parse().unwrap(), f[5].parse().unwrap())
        })
        .collect();
    let big_lambda: f64 = csv.lines().find(|l| l.contains("Lambda")).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    let min_excluded = lambda_rows.iter().filter(|(j, _)| *j == 4).map(|r| r.1).fold(f64::INFINITY, f64::min);
    assert!((big_lambda - min_excluded).abs() <= 1e-12 * min_excluded);
}
