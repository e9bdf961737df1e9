use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vsiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsiv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Report rows without the provenance header.
fn body(text: &str) -> Vec<String> {
    text.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn d4(dir: &Path) -> String {
    write(dir, "d4.csv", "y,d,z\n1,1,z1\n2,0,z1\n1,1,z2\n3,1,z2\n")
}

#[test]
fn falsify_reports_each_pair() {
    let dir = tempfile::tempdir().unwrap();
    let input = d4(dir.path());
    let out = vsiv(&["falsify", "--input", &input]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# vsiv "));
    let rows = body(&text);
    assert_eq!(rows.len(), 3);
    let stat = |row: &str| row.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!(rows[1].starts_with("\"(z1, z2)\""));
    assert_eq!(stat(&rows[1]), 0.0);
    assert!((stat(&rows[2]) - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn estimate_and_test_on_d4() {
    let dir = tempfile::tempdir().unwrap();
    let input = d4(dir.path());
    let out = vsiv(&["estimate", "--input", &input, "--tau", "1"]);
    assert!(out.status.success());
    let rows = body(&stdout(&out));
    let beta: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(beta, vec![1.0, 0.0]);

    let report = dir.path().join("est.csv");
    let out = vsiv(&["estimate", "--input", &input, "--tau", "4", "--out", report.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("selected"));
    assert_eq!(body(&fs::read_to_string(&report).unwrap()).len(), 3);

    let hyp = write(dir.path(), "h.txt", "pairs\nz1,z2\nA\n1\nb\n1\n");
    let out = vsiv(&["test", "--input", &input, "--hypothesis", &hyp, "--tau", "1"]);
    assert!(out.status.success());
    let rows = body(&stdout(&out));
    assert_eq!(rows[0], "ts1,ts2,critical,df,alpha,reject");
    assert!(rows[1].starts_with("1,0,"));
}

#[test]
fn simulate_is_reproducible() {
    let args = ["simulate", "--family", "section5:2", "--n", "600", "--reps", "20", "--tau-grid", "3:4:0.5", "--seed", "7"];
    let (a, b) = (vsiv(&args), vsiv(&args));
    assert!(a.status.success());
    assert_eq!(body(&stdout(&a)), body(&stdout(&b)));
    assert_eq!(body(&stdout(&a)).len(), 4);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let input = d4(dir.path());
    let cfg = write(dir.path(), "run.cfg", &format!("# defaults\ninput = {input}\ntau = 1\n"));
    let from_file = vsiv(&["estimate", "--config", &cfg]);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));
    assert!(stdout(&from_file).contains("# tau: 1\n"));
    let overridden = vsiv(&["estimate", "--config", &cfg, "--tau", "4"]);
    assert!(stdout(&overridden).contains("# tau: 4\n"));
}

#[test]
fn errors_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = d4(dir.path());
    for args in [
        vec!["falsify", "--input", "/nonexistent.csv"],
        vec!["falsify", "--input", input.as_str(), "--bogus"],
        vec!["estimate", "--input", input.as_str(), "--mode", "unordered"],
        vec!["tune-tau", "--input", input.as_str(), "--tau-grid", "0,1"],
        vec!["simulate", "--family", "custom"],
        vec!["launch"],
    ] {
        let out = vsiv(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("vsiv: "));
    }
}

#[test]
fn unordered_estimate_uses_response_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("y,d,z\n");
    for i in 0..60 {
        let z = i % 2;
        let d = match (i / 2) % 3 {
            0 => 0,
            1 => z,
            _ => 1,
        };
        csv.push_str(&format!("{},{},{}\n", (i % 7) as f64 + d as f64, d, z));
    }
    let input = write(dir.path(), "u.csv", &csv);
    let rm = write(dir.path(), "r.csv", "0,0,1\n0,1,1\n");
    let out = vsiv(&["estimate", "--input", &input, "--mode", "unordered", "--response-matrix", &rm, "--tau", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = body(&stdout(&out));
    assert_eq!(rows[0], "pair,d,d_alt,t,t_alt,effect,identified");
    assert!(rows.iter().any(|r| r.ends_with(",true")));
}
