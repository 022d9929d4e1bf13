//! Command-line entry point. Every subcommand reads one JSON config, applies flag overrides and
//! writes a single artifact that embeds the resolved config and the build hash.

use crate::acceptance;
use crate::config::{EnsembleChoice, ExperimentConfig, Format};
use crate::error::{Error, Result};
use crate::fluctuations::{self, build_averaged_ensemble, build_paired, cov_u_reference, EnsembleKind, SpaceTimePoint};
use crate::functionals as fun;
use crate::mollifier::KernelSpec;
use crate::noise::NoiseBox;
use crate::polymer::{self, McOptions, PathSource};
use crate::stats::{self, purpose, RngStream, TestReport};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Exit code of a failed acceptance or distributional test.
pub const EXIT_TEST_FAILED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "polymerlab", version, about = "Monte-Carlo and quadrature laboratory for the mollified directed polymer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// H_{T,∞} kernel at the `pair` points (CSV: radial table of φ and R).
    Kernel(Common),
    /// Fixed-point solution of the 𝔥_β equation.
    Hbeta(Common),
    /// γ(β)² by quadrature and by nested Monte Carlo.
    Gamma(Common),
    /// Bracket for β_{L²} by bisection on fixed-point convergence.
    Betal2(Common),
    /// Bridge exponential functional A_β(a, b, T).
    Bridge(Common),
    /// Partition function estimate on one noise realization.
    Partition(Common),
    /// Fluctuation ensemble (CSV plus JSON sidecar).
    Fluct(Common),
    /// L² decomposition error over the T ladder.
    L2error(Common),
    /// KS test of an ensemble against its Gaussian reference over seed families.
    TestGauss(Common),
    /// Runs the acceptance suite and writes a pass/fail table.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to POLYMERLAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_parser = ["json", "csv"])]
    format: Option<String>,
    /// Dotted config overrides, e.g. `--mc.replicas 256 --beta 0.1`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config { op: "cli::run", msg: msg.into() }
}

/// Splits trailing `--key value` pairs into config overrides. Named flags that appear after the
/// first override land here too and are mapped back.
fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| cfg_err(format!("expected --key, found '{flag}'")))?;
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (key.to_string(), it.next().ok_or_else(|| cfg_err(format!("--{key} needs a value")))?.clone()),
        };
        let (k, v) = match k.as_str() {
            "out" => ("output".to_string(), serde_json::to_string(&v).expect("string serializes")),
            _ => (k, v),
        };
        out.push((k, v));
    }
    Ok(out)
}

fn take_named(c: &mut Common) -> Result<()> {
    let mut rest = Vec::new();
    let mut it = std::mem::take(&mut c.overrides).into_iter();
    while let Some(flag) = it.next() {
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.clone(), None),
        };
        if name == "--config" || name == "--threads" {
            let v = match inline {
                Some(v) => v,
                None => it.next().ok_or_else(|| cfg_err(format!("{name} needs a value")))?,
            };
            if name == "--config" {
                c.config = Some(PathBuf::from(v));
            } else {
                c.threads = Some(v.parse().map_err(|_| cfg_err(format!("--threads '{v}' is not a count")))?);
            }
        } else {
            rest.push(flag);
        }
    }
    c.overrides = rest;
    Ok(())
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let text = match &c.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io { op: "cli::run", msg: format!("{}: {e}", p.display()) })?),
        None => None,
    };
    let mut ov = parse_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        ov.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = &c.out {
        ov.push(("output".into(), serde_json::to_string(o).expect("string serializes")));
    }
    if let Some(f) = &c.format {
        ov.push(("format".into(), f.clone()));
    }
    ExperimentConfig::resolve(text.as_deref(), &ov)
}

fn set_threads(n: Option<usize>) -> Result<()> {
    let n = match n {
        Some(n) => Some(n),
        None => match std::env::var("POLYMERLAB_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| cfg_err(format!("POLYMERLAB_THREADS = '{s}' is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(cfg_err("thread count must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Writes `contents` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { op: "cli::write_atomic", msg: format!("{}: {e}", path.display()) };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn emit(cfg: &ExperimentConfig, contents: &str) -> Result<()> {
    match &cfg.output {
        Some(p) => write_atomic(Path::new(p), contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::Io { op: "cli::run", msg: e.to_string() })
        }
    }
}

fn envelope(command: &str, cfg: &ExperimentConfig, result: Value) -> String {
    let doc = json!({ "command": command, "build_hash": crate::BUILD_HASH, "config": cfg.to_json(), "result": result });
    serde_json::to_string_pretty(&doc).expect("output serializes") + "\n"
}

fn csv_header(command: &str, cfg: &ExperimentConfig) -> String {
    format!("# command={command}\n# build_hash={}\n# config={}\n", crate::BUILD_HASH, cfg.to_json())
}

fn hsol(spec: &KernelSpec, cfg: &ExperimentConfig) -> Result<fun::HBetaSolution> {
    fun::h_beta_fixed_point(spec, cfg.beta, cfg.solver.r_max, cfg.solver.m, &cfg.solver.options)
}

fn stream(cfg: &ExperimentConfig, p: u64) -> RngStream {
    RngStream::new(cfg.seed).child(p)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(mut cmd: Cmd) -> Result<i32> {
    let (name, common) = match &mut cmd {
        Cmd::Kernel(c) => ("kernel", c),
        Cmd::Hbeta(c) => ("hbeta", c),
        Cmd::Gamma(c) => ("gamma", c),
        Cmd::Betal2(c) => ("betal2", c),
        Cmd::Bridge(c) => ("bridge", c),
        Cmd::Partition(c) => ("partition", c),
        Cmd::Fluct(c) => ("fluct", c),
        Cmd::L2error(c) => ("l2error", c),
        Cmd::TestGauss(c) => ("test-gauss", c),
        Cmd::Report(c) => ("report", c),
    };
    take_named(common)?;
    let cfg = resolve(common)?;
    set_threads(common.threads)?;
    let spec = cfg.kernel_spec()?;
    match name {
        "kernel" => kernel(&cfg, &spec),
        "hbeta" => hbeta(&cfg, &spec),
        "gamma" => gamma(&cfg, &spec),
        "betal2" => betal2(&cfg, &spec),
        "bridge" => bridge(&cfg, &spec),
        "partition" => partition(&cfg, &spec),
        "fluct" => fluct(&cfg, &spec),
        "l2error" => l2error(&cfg, &spec),
        "test-gauss" => test_gauss(&cfg, &spec),
        _ => report(&cfg),
    }
}

fn kernel(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    if cfg.format == Format::Csv {
        emit(cfg, &(csv_header("kernel", cfg) + &spec.radial_table_csv()))?;
        return Ok(0);
    }
    let h = hsol(spec, cfg)?;
    let p = &cfg.pair;
    let mut eval = fun::kernel_h_t_inf(cfg.beta, p.t, &p.x1, &p.x2, &h)?;
    if p.with_h_0_t {
        let e = fun::kernel_h_0_t(spec, cfg.beta, p.t, &p.x1, &p.x2, cfg.grid.dt, cfg.mc.inner_paths, &stream(cfg, purpose::PATHS))?;
        eval.h_0_t = e.h_0_t;
    }
    let limit = fun::kernel_h_t_inf_limit(spec, &p.x1, &p.x2, &h)?;
    emit(cfg, &envelope("kernel", cfg, json!({ "eval": eval, "h_t_inf_limit": limit, "r0": spec.r0() })))?;
    Ok(0)
}

fn hbeta(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let h = hsol(spec, cfg)?;
    if cfg.format == Format::Csv {
        emit(cfg, &(csv_header("hbeta", cfg) + &h.to_csv()))?;
    } else {
        emit(cfg, &envelope("hbeta", cfg, serde_json::to_value(&h).expect("solution serializes")))?;
    }
    Ok(0)
}

fn gamma(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let h = hsol(spec, cfg)?;
    let q = fun::gamma_squared(spec, &h);
    let mc = fun::gamma_squared_mc(spec, cfg.beta, cfg.mc.horizon, cfg.grid.dt, cfg.mc.inner_paths, &stream(cfg, purpose::PATHS))?;
    emit(cfg, &envelope("gamma", cfg, json!({ "beta": cfg.beta, "gamma2_quadrature": q, "gamma2_mc": mc })))?;
    Ok(0)
}

fn betal2(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let [lo, hi] = cfg.betal2.bracket;
    let b = fun::beta_l2_estimate(spec, (lo, hi), cfg.betal2.tol, &cfg.solver.options)?;
    emit(cfg, &envelope("betal2", cfg, serde_json::to_value(b).expect("interval serializes")))?;
    Ok(0)
}

fn bridge(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let b = &cfg.bridge;
    let e = fun::bridge_functional(spec, cfg.beta, &b.a, &b.b, b.t, cfg.grid.dt, cfg.mc.inner_paths, &stream(cfg, purpose::PATHS))?;
    emit(cfg, &envelope("bridge", cfg, json!({ "estimate": e, "params": b })))?;
    Ok(0)
}

fn partition(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let p = &cfg.partition;
    let nb = NoiseBox::for_paths(stream(cfg, purpose::NOISE).key(), spec, cfg.grid.dx, cfg.grid.dt, &[p.x.clone()], p.t)?;
    let e = polymer::partition_mc(cfg.beta, p.t, &p.x, &nb.view(), spec, PathSource::Sampler { n_paths: cfg.mc.inner_paths, stream: &stream(cfg, purpose::PATHS) }, &McOptions::default())?;
    let mut v = serde_json::to_value(&e).expect("estimate serializes");
    v["params"] = json!({ "beta": cfg.beta, "T": p.t, "x": p.x, "dx": cfg.grid.dx, "dt": cfg.grid.dt, "noise_seed": nb.seed() });
    emit(cfg, &envelope("partition", cfg, v))?;
    Ok(0)
}

fn t_m(points: &[SpaceTimePoint]) -> f64 {
    points.iter().map(|p| p.t).fold(0.0, f64::max)
}

fn fluct(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let base = if cfg.ensemble == EnsembleChoice::Pf { EnsembleKind::Pf } else { EnsembleKind::Fe };
    let seed = stream(cfg, purpose::REPLICA).key();
    let h = hsol(spec, cfg)?;
    let g2 = fun::gamma_squared(spec, &h);
    let (ens, reference) = match &cfg.test_function {
        Some(f) => {
            let t = cfg.points.first().map(|p| p.t).unwrap_or(1.0);
            let e = build_averaged_ensemble(base, f, t, spec, &cfg.ensemble_params(t, seed))?;
            let v = fluctuations::averaged_variance_reference(cfg.dimension, f, t, g2)?;
            (e, json!({ "gamma2": g2, "variance": v }))
        }
        None => {
            let (pf, fe) = build_paired(spec, &cfg.points, &cfg.ensemble_params(t_m(&cfg.points), seed))?;
            let r = cov_u_reference(cfg.dimension, &cfg.points, g2)?;
            (if base == EnsembleKind::Pf { pf } else { fe }, serde_json::to_value(r).expect("reference serializes"))
        }
    };
    let mut side = ens.sidecar();
    side["reference"] = reference;
    side["build_hash"] = json!(crate::BUILD_HASH);
    side["config"] = cfg.to_json();
    match cfg.format {
        Format::Csv => {
            emit(cfg, &(csv_header("fluct", cfg) + &ens.to_csv()))?;
            if let Some(p) = &cfg.output {
                write_atomic(Path::new(&format!("{p}.json")), &(serde_json::to_string_pretty(&side).expect("sidecar serializes") + "\n"))?;
            }
        }
        Format::Json => {
            side["samples"] = json!(ens.samples);
            emit(cfg, &envelope("fluct", cfg, side))?;
        }
    }
    Ok(0)
}

fn l2error(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let h = hsol(spec, cfg)?;
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    for (i, &t) in cfg.t_ladder.iter().enumerate() {
        let e = fun::l2_error_formula(spec, cfg.beta, t, cfg.grid.dt, cfg.mc.inner_paths, &stream(cfg, purpose::PATHS).child(i as u64), &h)?;
        vals.push(e.pair());
        rows.push(json!({ "T": t, "estimate": e }));
    }
    let trend = if vals.len() >= 3 { Some(stats::trend_decreasing(&vals)?) } else { None };
    if cfg.format == Format::Csv {
        let mut s = csv_header("l2error", cfg) + "T,value,std_error\n";
        for (t, (v, se)) in cfg.t_ladder.iter().zip(&vals) {
            s.push_str(&format!("{t},{v:.17e},{se:.17e}\n"));
        }
        emit(cfg, &s)?;
    } else {
        emit(cfg, &envelope("l2error", cfg, json!({ "ladder": rows, "trend": trend })))?;
    }
    Ok(0)
}

fn test_gauss(cfg: &ExperimentConfig, spec: &KernelSpec) -> Result<i32> {
    let g = &cfg.test_gauss;
    let pt = cfg.points.first().cloned().ok_or_else(|| cfg_err("test-gauss needs one point"))?;
    let h = hsol(spec, cfg)?;
    let target = fluctuations::cov_u_entry(cfg.dimension, fun::gamma_squared(spec, &h), &pt, &pt);
    let mut reports = Vec::new();
    let mut passes = 0;
    let mut pooled = Vec::new();
    for f in 0..g.families {
        let seed = stream(cfg, purpose::REPLICA).child(f as u64).key();
        let (pf, fe) = build_paired(spec, std::slice::from_ref(&pt), &cfg.ensemble_params(pt.t, seed))?;
        let s = if cfg.ensemble == EnsembleChoice::Pf { pf.column(0) } else { fe.column(0) };
        let ks = stats::ks_test_normal(&s, 0.0, target)?;
        let pass = ks.p_value > g.p_threshold;
        passes += pass as usize;
        pooled.extend(s);
        reports.push(TestReport { test: format!("ks-family-{f}"), params: json!({ "base_seed": seed, "n": ks.n }), statistic: ks.statistic, p_value: Some(ks.p_value), pass });
    }
    let var = stats::moments(&pooled)?.var;
    let var_ok = (var / target - 1.0).abs() < g.variance_rel_tol;
    let pass = passes >= g.min_passes && var_ok;
    reports.push(TestReport { test: "variance".into(), params: json!({ "target": target, "rel_tol": g.variance_rel_tol }), statistic: var, p_value: None, pass: var_ok });
    emit(cfg, &envelope("test-gauss", cfg, json!({ "reports": reports, "families_passed": passes, "pass": pass })))?;
    Ok(if pass { 0 } else { EXIT_TEST_FAILED })
}

fn report(cfg: &ExperimentConfig) -> Result<i32> {
    let full = cfg.acceptance.full || std::env::var("POLYMERLAB_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let criteria = if cfg.acceptance.criteria.is_empty() { acceptance::ALL.to_vec() } else { cfg.acceptance.criteria.clone() };
    let settings = acceptance::Settings { seed: cfg.seed, full, criteria };
    let results = acceptance::run(&settings, |r| eprintln!("{}", r.line()));
    let cfgv = cfg.to_json();
    let text = match cfg.format {
        Format::Json => acceptance::render_report(&cfgv, &results),
        Format::Csv => acceptance::render_report_csv(&cfgv, &results),
    };
    emit(cfg, &text)?;
    Ok(if results.iter().all(|r| r.pass) { 0 } else { EXIT_TEST_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse() {
        let v = parse_overrides(&["--mc.replicas".into(), "256".into(), "--beta=0.1".into()]).unwrap();
        assert_eq!(v, vec![("mc.replicas".into(), "256".into()), ("beta".into(), "0.1".into())]);
        assert!(parse_overrides(&["beta".into()]).is_err());
        assert!(parse_overrides(&["--beta".into()]).is_err());
        assert_eq!(parse_overrides(&["--out".into(), "a.json".into()]).unwrap(), vec![("output".into(), "\"a.json\"".into())]);
    }

    #[test]
    fn clap_accepts_dotted_flags() {
        let cli = Cli::try_parse_from(["polymerlab", "hbeta", "--seed", "3", "--beta", "0", "--mc.replicas", "4"]).unwrap();
        let Cmd::Hbeta(c) = cli.cmd else { panic!() };
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.overrides, vec!["--beta", "0", "--mc.replicas", "4"]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
