use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcvx::output::SolutionFile;
use lcvx::pipeline;
use lcvx::scenario::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lcvx"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn run(name: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(scenario(name))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn p4_landing_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p4");
    let o = run("landing2d_p4", &out, &["--dump-program"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "solution.json", "timeseries.csv", "program.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let rep = report(&out);
    assert_eq!(rep["status"], "optimal");
    assert_eq!(rep["exit_code"], 0);
    let obj = rep["objective"].as_f64().unwrap();
    assert!((obj - 62.2745526314217).abs() <= 1e-6 * 62.2745526314217);

    let mut rdr = csv::Reader::from_path(out.join("timeseries.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "repaired_u1"));
    assert_eq!(rdr.records().count(), 49);
}

#[test]
fn pointing_landing_in_2d_is_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p3");
    let o = run("landing2d_p3", &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(&out);
    assert_eq!(rep["status"], "primal_infeasible");
    assert_eq!(rep["certificate"]["kind"], "primal_infeasible");
    assert!(!out.join("solution.json").exists());
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("landing3d_p4", &a, &[]).status.code(), Some(0));
    assert_eq!(run("landing3d_p4", &b, &[]).status.code(), Some(0));
    for f in ["solution.json", "timeseries.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn solution_file_reclassifies_to_same_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pen");
    assert_eq!(run("landing3d_p4_pen10", &out, &[]).status.code(), Some(0));
    let rep = report(&out);
    let expected: Vec<usize> = rep["report"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let sc = Scenario::load(&scenario("landing3d_p4_pen10")).unwrap();
    let sol = SolutionFile::load(&out.join("solution.json")).unwrap();
    assert_eq!(pipeline::reclassify(&sc, &sol).unwrap(), expected);
}

#[test]
fn no_repair_omits_repaired_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nr");
    assert_eq!(run("landing2d_p4", &out, &["--no-repair"]).status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.join("timeseries.csv")).unwrap();
    assert!(!rdr.headers().unwrap().iter().any(|h| h.starts_with("repaired")));
}

#[test]
fn empty_sweep_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["sweep"])
        .arg(scenario("landing2d_p4"))
        .args(["--param", "N", "--values", "", "--out"])
        .arg(tmp.path().join("s"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("s").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    let o = bin()
        .args(["sweep"])
        .arg(scenario("landing2d_p4"))
        .args(["--param", "N", "--values", "25,49", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[2] == "optimal"));
    assert!(dir.join("N_25").join("report.json").is_file());
    assert!(dir.join("N_49").join("timeseries.csv").is_file());
}

#[test]
fn malformed_scenario_exits_64() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("landing2d_p4")).unwrap().replace("rho_max = 1.6", "rho_max = 1.0");
    std::fs::write(&bad, text).unwrap();
    let o = bin().arg("run").arg(&bad).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(64));

    std::fs::write(&bad, "name = \"x\"\nmode = \"P5\"\n").unwrap();
    let o = bin().arg("check").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn check_reports_the_pointing_rank_deficiency() {
    let o = bin().arg("check").arg(scenario("landing2d_p3")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["controllability"]["passed"], false);

    let o = bin().arg("check").arg(scenario("landing3d_p4")).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["equality_rank"]["passed"], true);
    assert_eq!(v["interior_point"]["passed"], true);
    assert_eq!(o.status.code(), Some(0));
}
