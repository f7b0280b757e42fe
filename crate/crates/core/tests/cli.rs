use std::path::{Path, PathBuf};
use std::process::Command;

use qsrnet::cli::{run, EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_OK};
use qsrnet::linalg::Mat;
use qsrnet::model::{NetworkModel, NewSubsystemFile, SupplyTarget, supply_preset};
use qsrnet::pipeline::CertificationReport;
use qsrnet::fixtures;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).to_string_lossy().into_owned()
}

fn out(dir: &TempDir, sub: &str) -> String {
    dir.path().join(sub).to_string_lossy().into_owned()
}

fn qsrnet(args: &[&str]) -> i32 {
    let mut full = vec!["qsrnet"];
    full.extend_from_slice(args);
    run(full)
}

fn report(dir: &str) -> CertificationReport {
    CertificationReport::load(PathBuf::from(dir).join("report.json")).unwrap()
}

#[test]
fn analyze_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let o = out(&tmp, "t3");
    assert_eq!(qsrnet(&["analyze", &fixture("t3_passive.json"), "--sequence", "sigma1,sigma2,sigma3", "--out", &o]), EXIT_NOT_CERTIFIED);
    assert!(!report(&o).certified);
    assert_eq!(qsrnet(&["analyze", &fixture("decoupled.json"), "--out", &out(&tmp, "dec")]), EXIT_OK);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ \"subsystems\": [").unwrap();
    assert_eq!(qsrnet(&["analyze", bad.to_str().unwrap(), "--out", &out(&tmp, "bad")]), EXIT_ERROR);
}

#[test]
fn synthesize_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let o = out(&tmp, "t3");
    assert_eq!(qsrnet(&["synthesize", &fixture("t3_passive.json"), "--out", &o]), EXIT_OK);
    let r = report(&o);
    assert!(r.gains.iter().all(|g| g.row != 2 && g.column != 2));
    assert!(PathBuf::from(&o).join("gains.json").exists());

    for (k, seq) in ["sigma1,sigma2,sigma3,sigma4", "sigma3,sigma2,sigma1,sigma4", "sigma3,sigma4,sigma1,sigma2"].iter().enumerate() {
        let o = out(&tmp, &format!("t4_{k}"));
        assert_eq!(qsrnet(&["synthesize", &fixture("t4_passive.json"), "--sequence", seq, "--out", &o]), EXIT_OK, "{seq}");
    }

    let o = out(&tmp, "rank");
    assert_eq!(qsrnet(&["synthesize", &fixture("rank_deficient.json"), "--out", &o]), EXIT_NOT_CERTIFIED);
    assert!(!report(&o).steps[0].detail.is_empty());
}

#[test]
fn bad_flags_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(qsrnet(&["analyze", &fixture("decoupled.json"), "--eps=-1", "--out", &out(&tmp, "a")]), EXIT_ERROR);
    assert_eq!(qsrnet(&["analyze", &fixture("decoupled.json"), "--sequence", "node0,ghost", "--out", &out(&tmp, "b")]), EXIT_ERROR);
    assert_eq!(qsrnet(&["analyze", &fixture("decoupled.json"), "--sequence", "0,0,1", "--out", &out(&tmp, "c")]), EXIT_ERROR);
}

#[test]
fn compose_keeps_prior_gains_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let base = out(&tmp, "base");
    assert_eq!(qsrnet(&["synthesize", &fixture("t3_passive.json"), "--out", &base]), EXIT_OK);
    let base_report = format!("{base}/report.json");
    let ext = out(&tmp, "ext");
    assert_eq!(qsrnet(&["compose", &fixture("t3_passive.json"), "--report", &base_report, "--add", &fixture("sigma4.json"), "--out", &ext]), EXIT_OK);
    let before = report(&base);
    let after = report(&ext);
    assert_eq!(after.solved, vec![3]);
    for g in &before.gains {
        let same = after.gains.iter().find(|h| h.row == g.row && h.column == g.column).unwrap();
        assert_eq!(serde_json::to_string(g).unwrap(), serde_json::to_string(same).unwrap());
    }
    for (a, b) in before.steps.iter().zip(&after.steps) {
        assert_eq!(serde_json::to_string(a).unwrap(), serde_json::to_string(b).unwrap());
    }
    assert!(NetworkModel::load(format!("{ext}/network.json")).unwrap().len() == 4);
}

#[test]
fn compose_disconnected_passive_addition_needs_no_gains() {
    let tmp = TempDir::new().unwrap();
    let base = out(&tmp, "base");
    assert_eq!(qsrnet(&["synthesize", &fixture("t3_passive.json"), "--out", &base]), EXIT_OK);
    let add = NewSubsystemFile {
        subsystem: fixtures::stable_scalar("island", -2.0),
        coupling: vec![],
        supply: SupplyTarget::Fixed(supply_preset("passive", &[], 1, 1).unwrap()),
        comment: None,
    };
    let add_path = tmp.path().join("island.json");
    std::fs::write(&add_path, add.to_json_string()).unwrap();
    let ext = out(&tmp, "ext");
    assert_eq!(
        qsrnet(&["compose", &fixture("t3_passive.json"), "--report", &format!("{base}/report.json"), "--add", add_path.to_str().unwrap(), "--out", &ext]),
        EXIT_OK
    );
    let r = report(&ext);
    assert!(r.gains.iter().all(|g| g.row != 3 && g.column != 3));
}

#[test]
fn compose_rejects_stale_report() {
    let tmp = TempDir::new().unwrap();
    let base = out(&tmp, "base");
    assert_eq!(qsrnet(&["synthesize", &fixture("t3_passive.json"), "--out", &base]), EXIT_OK);
    let mut net = NetworkModel::load(fixture("t3_passive.json")).unwrap();
    net.subsystems[2].modes[0].a = Mat::from_element(1, 1, -1.5);
    let edited = tmp.path().join("edited.json");
    net.save(&edited).unwrap();
    assert_eq!(
        qsrnet(&["compose", edited.to_str().unwrap(), "--report", &format!("{base}/report.json"), "--add", &fixture("sigma4.json"), "--out", &out(&tmp, "ext")]),
        EXIT_ERROR
    );
}

#[test]
fn simulate_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let mg = out(&tmp, "mg");
    assert_eq!(qsrnet(&["synthesize", &fixture("microgrid.json"), "--out", &mg]), EXIT_OK);
    let sim = out(&tmp, "mg_sim");
    assert_eq!(
        qsrnet(&["simulate", &fixture("microgrid.json"), "--report", &format!("{mg}/report.json"), "--scenario", &fixture("microgrid_plug.json"), "--out", &sim]),
        EXIT_OK
    );
    let csv = std::fs::read_to_string(format!("{sim}/trajectory.csv")).unwrap();
    let rows = csv.lines().count();
    assert_eq!(rows, 1 + 4001);
    let max = csv
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).take(12).map(|v| v.parse::<f64>().unwrap().abs()))
        .fold(0.0_f64, f64::max);
    assert!(max.is_finite() && max < 1.0, "{max}");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{sim}/trajectory.json")).unwrap()).unwrap();
    assert_eq!(meta["schedule"].as_array().unwrap().len(), 2);
    assert_eq!(meta["audit"]["pass"], true);

    assert_eq!(
        qsrnet(&["simulate", &fixture("t3_passive.json"), "--report", &fixture("t3_sign_flipped_report.json"), "--scenario", &fixture("random_steps.json"), "--out", &out(&tmp, "flip")]),
        EXIT_NOT_CERTIFIED
    );
    assert_eq!(
        qsrnet(&["simulate", &fixture("microgrid.json"), "--report", &format!("{mg}/report.json"), "--scenario", &fixture("zero_horizon.json"), "--out", &out(&tmp, "zero")]),
        EXIT_ERROR
    );
    assert_eq!(
        qsrnet(&["simulate", &fixture("t4_passive.json"), "--report", &format!("{mg}/report.json"), "--scenario", &fixture("random_steps.json"), "--out", &out(&tmp, "stale")]),
        EXIT_ERROR
    );
}

#[test]
fn outputs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (out(&tmp, "a"), out(&tmp, "b"));
    for o in [&a, &b] {
        assert_eq!(qsrnet(&["synthesize", &fixture("t4_passive.json"), "--out", o]), EXIT_OK);
        assert_eq!(
            qsrnet(&["simulate", &fixture("t4_passive.json"), "--report", &format!("{o}/report.json"), "--scenario", &fixture("random_steps.json"), "--seed", "7", "--out", &format!("{o}/sim")]),
            EXIT_OK
        );
    }
    for f in ["report.json", "gains.json", "sim/trajectory.csv", "sim/trajectory.json"] {
        assert_eq!(std::fs::read(format!("{a}/{f}")).unwrap(), std::fs::read(format!("{b}/{f}")).unwrap(), "{f}");
    }
}

#[test]
fn binary_reports_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_qsrnet");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["analyze", &fixture("decoupled.json"), "--out", &out(&tmp, "a")]), 0);
    assert_eq!(code(&["analyze", &fixture("t3_passive.json"), "--out", &out(&tmp, "b")]), 2);
    assert_eq!(code(&["analyze", "/nonexistent.json"]), 1);
}
