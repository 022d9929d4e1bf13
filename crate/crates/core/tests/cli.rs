use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polymerlab"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).env_remove("POLYMERLAB_THREADS").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn json_of(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn hbeta_at_beta_zero_is_all_ones_csv() {
    let (code, out, _) = run(&["hbeta", "--beta", "0", "--format", "csv", "--solver.m", "16"]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "radius,value");
    assert_eq!(rows.len(), 18);
    for r in &rows[1..] {
        let v: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 1.0);
    }
    assert!(out.contains("# build_hash="));
    assert!(out.contains("# config={"));
}

#[test]
fn betal2_with_converging_bracket_is_a_validation_error() {
    let (code, _, err) = run(&["betal2", "--betal2.bracket", "[0, 0.05]"]);
    assert_eq!(code, 2);
    assert!(err.contains("invalid bracket"), "{err}");
    assert!(err.contains("functionals::beta_L2_estimate"));
}

#[test]
fn supercritical_beta_is_a_numerical_error() {
    let (code, _, err) = run(&["hbeta", "--beta", "6"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn strict_config_and_bad_values() {
    assert_eq!(run(&["hbeta", "--mc.replicaz", "3"]).0, 2);
    assert_eq!(run(&["hbeta", "--grid.dt", "-1"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"beta": 0.1, "extra": 1}"#).unwrap();
    assert_eq!(run(&["gamma", "--config", p.to_str().unwrap()]).0, 2);
}

#[test]
fn outputs_embed_config_and_hash() {
    let (code, out, _) = run(&["gamma", "--beta", "0.3", "--mc.inner_paths", "500", "--mc.horizon", "8"]);
    assert_eq!(code, 0);
    let v = json_of(&out);
    assert_eq!(v["command"], "gamma");
    assert_eq!(v["config"]["beta"], 0.3);
    assert_eq!(v["build_hash"].as_str().unwrap(), polymerlab::BUILD_HASH);
    assert!(v["result"]["gamma2_quadrature"].as_f64().unwrap() > 0.0);
}

#[test]
fn partition_seed_reproduces_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |p: &Path, threads: &str| {
        let out = bin()
            .args(["partition", "--seed", "7", "--mc.inner_paths", "300", "--out", p.to_str().unwrap(), "--threads", threads])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    args(&a, "1");
    std::fs::rename(&a, &b).unwrap();
    args(&a, "3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v = json_of(&std::fs::read_to_string(&a).unwrap());
    for k in ["value", "std_error", "n", "method", "params"] {
        assert!(v["result"].get(k).is_some(), "{k}");
    }
}

#[test]
fn threads_env_fallback_is_validated() {
    let out = bin().args(["hbeta", "--beta", "0", "--solver.m", "2"]).env("POLYMERLAB_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fluct_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ens.csv");
    let (code, _, err) = run(&[
        "fluct", "--format", "csv", "--out", p.to_str().unwrap(), "--beta", "0.2", "--t_scale", "2", "--mc.t_max_factor", "4",
        "--mc.inner_paths", "32", "--mc.replicas", "3", "--grid.dt", "0.125",
        "--points", r#"[{"x":[0,0,0],"t":1},{"x":[1,0,0],"t":0.5}]"#,
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(&p).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "replica,point,value");
    assert_eq!(rows.len(), 1 + 3 * 2);
    let side = json_of(&std::fs::read_to_string(dir.path().join("ens.csv.json")).unwrap());
    assert_eq!(side["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(side["reference"]["cov_u"].as_array().unwrap().len(), 2);
}

#[test]
fn kernel_csv_is_the_radial_table() {
    let (code, out, _) = run(&["kernel", "--format", "csv"]);
    assert_eq!(code, 0);
    assert!(out.lines().any(|l| l == "radius,phi,R"), "{}", &out[..200.min(out.len())]);
}

#[test]
fn report_is_byte_identical_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("acceptance.json");
    std::fs::write(&cfg, r#"{"seed": 5, "acceptance": {"criteria": [1, 4, 11]}}"#).unwrap();
    let mut outs = Vec::new();
    let p = dir.path().join("report.json");
    for _ in 0..2 {
        let (code, _, err) = run(&["report", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(err.lines().filter(|l| l.starts_with("PASS")).count(), 3);
        outs.push(std::fs::read(&p).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let (code, _, _) = run(&["report", "--acceptance.criteria", "[99]"]);
    assert_eq!(code, 4);
}
