use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_analog-lp"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("analog-lp-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const BOARD: &str = r#"{"c":[-1,0],"a_ineq":[[0.4166666666666667,-1],[2.5,1],[-1,0],[0,1]],"b_ineq":[2.9166666666666665,17.5,5,5]}"#;

#[test]
fn solve_prints_optimum_and_gap() {
    let dir = scratch("solve");
    let lp = dir.join("board.json");
    fs::write(&lp, BOARD).unwrap();
    let out = run(bin().arg("solve").arg(&lp));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let x: Vec<f64> = serde_json::from_value(v["x"].clone()).unwrap();
    assert!((x[0] - 7.0).abs() < 1e-6 && x[1].abs() < 1e-6, "{x:?}");
    assert!(v["gap"].as_f64().unwrap() <= 1e-9);
    assert!(v["u_crit"].as_f64().is_some());
}

#[test]
fn randlp_is_reproducible_and_verifies() {
    let dir = scratch("randlp");
    let a = run(bin().args(["randlp", "--n", "8", "--p", "3", "--q", "10", "--seed", "5"])).stdout;
    let b = run(bin().args(["randlp", "--n", "8", "--p", "3", "--q", "10", "--seed", "5"])).stdout;
    assert_eq!(a, b);
    let files: Vec<PathBuf> = (0..4)
        .map(|s| {
            let p = dir.join(format!("lp{s}.json"));
            run(bin()
                .args(["randlp", "--n", "9", "--p", "2", "--q", "12", "--seed", &s.to_string(), "--out"])
                .arg(&p));
            p
        })
        .collect();
    let out = run(bin().args(["verify", "--batch"]).args(&files).env("ANALOG_LP_THREADS", "3"));
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.len(), 4);
    for (r, f) in reports.iter().zip(&files) {
        assert_eq!(r["file"].as_str().unwrap(), f.display().to_string());
        assert_eq!(r["passed"], true);
    }
}

#[test]
fn transient_and_netlist_outputs() {
    let dir = scratch("transient");
    let lp = dir.join("board.json");
    fs::write(&lp, BOARD).unwrap();
    let csv = dir.join("traj.csv");
    run(bin()
        .arg("transient")
        .arg(&lp)
        .args(["--l", "100e-9", "--horizon", "2e-6", "--out"])
        .arg(&csv));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,V1,V2,V3,V4,cost,d1,d2,d3,d4\n"));
    assert_eq!(text.lines().count(), 2001);

    let deck = run(bin().arg("netlist").arg(&lp).args(["--ucost", "-20"])).stdout;
    let deck = String::from_utf8(deck).unwrap();
    assert!(deck.contains("VCOST U0 0 DC -2e1"));
    assert_eq!(deck.lines().filter(|l| l.starts_with("RN")).count(), 6);
}

#[test]
fn mpc_is_reproducible_per_seed() {
    let dir = scratch("mpc");
    let sc = dir.join("scenario.json");
    fs::write(&sc, r#"{"horizon_n":4,"delta":0.1,"x_ref":[1,1,1,1,0,0,0,0],"duration":0.8}"#).unwrap();
    let a = run(bin().arg("mpc").arg(&sc).args(["--sigma", "0.01", "--seed", "7"])).stdout;
    let b = run(bin().arg("mpc").arg(&sc).args(["--sigma", "0.01", "--seed", "7"])).stdout;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,x,u,cost\n"));
    assert_eq!(text.lines().count(), 9);
    let oracle = run(bin().arg("mpc").arg(&sc).args(["--solver", "oracle"])).stdout;
    assert_eq!(String::from_utf8(oracle).unwrap().lines().count(), 9);
}

#[test]
fn failures_exit_nonzero() {
    let out = bin().args(["ucrit", "/definitely/not/here.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading"));
    let out = bin().args(["randlp", "--n", "4", "--p", "4", "--q", "5"]).output().unwrap();
    assert!(!out.status.success());
}
