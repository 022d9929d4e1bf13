//! Brownian paths and bridges, and Monte-Carlo partition functions in a fixed noise.

use crate::error::{invalid, Error, Result};
use crate::mollifier::KernelSpec;
use crate::noise::{Cell, DenseField, NoiseField, NoiseView, SlotBoxes};
use crate::stats::RngStream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mc,
    Quadrature,
    FixedPoint,
}

/// A Monte-Carlo or deterministic result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tail_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl Estimate {
    pub fn exact(value: f64, method: Method) -> Self {
        Estimate { value, std_error: 0.0, n_samples: 1, method, tail_bound: None, warning: None }
    }

    pub fn mc(value: f64, std_error: f64, n: usize) -> Self {
        Estimate { value, std_error, n_samples: n, method: Method::Mc, tail_bound: None, warning: None }
    }

    /// Sample mean and sd/√n of a slice.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        Estimate::mc(mean, (var / nf).sqrt(), n)
    }

    pub fn pair(&self) -> (f64, f64) {
        (self.value, self.std_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Free,
    Bridge { endpoint: Vec<f64> },
    Restricted { rho: f64 },
}

/// Trajectories on the grid t_k = kΔt, k = 0..=K, stored flat (point-major).
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub start: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub kind: PathKind,
    pub trajectories: Vec<Vec<f64>>,
    /// Proposals drawn; differs from `trajectories.len()` only for restricted bundles.
    pub n_proposed: usize,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.start.len()
    }
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
    pub fn acceptance(&self) -> f64 {
        self.trajectories.len() as f64 / self.n_proposed as f64
    }
}

pub(crate) fn steps_for(op: &'static str, t: f64, dt: f64) -> Result<usize> {
    if !(t > 0.0 && dt > 0.0 && t.is_finite()) {
        return Err(invalid(op, format!("need T > 0 and dt > 0, got T = {t}, dt = {dt}")));
    }
    let k = (t / dt).round();
    if k < 1.0 || (k * dt - t).abs() > 1e-9 * t {
        return Err(invalid(op, format!("dt = {dt} does not divide T = {t}")));
    }
    Ok(k as usize)
}

/// Free Brownian path from `start`, `steps` increments of variance Δt per axis.
#[inline]
pub(crate) fn fill_free(start: &[f64], steps: usize, dt: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let d = start.len();
    let s = dt.sqrt();
    out.clear();
    out.extend_from_slice(start);
    for k in 0..steps {
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let v = out[k * d + i] + s * z;
            out.push(v);
        }
    }
}

/// a + W(u) − (u/T)(W(T) − (b − a)) applied in place to a free path W from 0.
#[inline]
pub(crate) fn bridge_from_free(w: &mut [f64], a: &[f64], b: &[f64], steps: usize) {
    let d = a.len();
    let mut wt = [0.0f64; crate::noise::MAX_DIM];
    wt[..d].copy_from_slice(&w[steps * d..(steps + 1) * d]);
    for k in 0..=steps {
        let f = k as f64 / steps as f64;
        for i in 0..d {
            w[k * d + i] = a[i] + w[k * d + i] - f * (wt[i] - (b[i] - a[i]));
        }
    }
    w[steps * d..(steps + 1) * d].copy_from_slice(b);
}

#[inline]
fn sup_dev_within(path: &[f64], start: &[f64], upto: usize, rho: f64) -> bool {
    let d = start.len();
    let r2 = rho * rho;
    (0..=upto).all(|k| {
        let mut s = 0.0;
        for i in 0..d {
            let v = path[k * d + i] - start[i];
            s += v * v;
        }
        s <= r2
    })
}

/// Samples `n` paths; path i draws from `stream.child(i)`. Restricted paths are proposed until
/// `n` are retained.
pub fn sample_paths(start: &[f64], t: f64, dt: f64, n: usize, kind: PathKind, stream: &RngStream) -> Result<PathBundle> {
    const OP: &str = "polymer::sample_paths";
    let steps = steps_for(OP, t, dt)?;
    if n == 0 {
        return Err(invalid(OP, "n must be >= 1"));
    }
    let d = start.len();
    match &kind {
        PathKind::Bridge { endpoint } if endpoint.len() != d => return Err(invalid(OP, "bridge endpoint dimension mismatch")),
        PathKind::Restricted { rho } if !(*rho > 0.0) => return Err(invalid(OP, "rho must be positive")),
        _ => {}
    }
    let zero = vec![0.0; d];
    let gen = |i: usize| {
        let mut rng = stream.child(i as u64).rng();
        let mut p = Vec::with_capacity((steps + 1) * d);
        match &kind {
            PathKind::Bridge { endpoint } => {
                fill_free(&zero, steps, dt, &mut rng, &mut p);
                bridge_from_free(&mut p, start, endpoint, steps);
            }
            _ => fill_free(start, steps, dt, &mut rng, &mut p),
        }
        p
    };
    match &kind {
        PathKind::Restricted { rho } => {
            let mut kept = Vec::with_capacity(n);
            let mut proposed = 0usize;
            let batch = n.max(64);
            while kept.len() < n {
                let got: Vec<Vec<f64>> = (proposed..proposed + batch).into_par_iter().map(gen).collect();
                proposed += batch;
                for p in got {
                    if kept.len() < n && sup_dev_within(&p, start, steps, *rho) {
                        kept.push(p);
                    }
                }
                if proposed > 1000 * n + 100_000 && kept.len() * 1000 < proposed {
                    return Err(invalid(OP, "restriction acceptance below 1e-3"));
                }
            }
            Ok(PathBundle { start: start.to_vec(), dt, steps, kind, trajectories: kept, n_proposed: proposed })
        }
        _ => {
            let trajectories: Vec<Vec<f64>> = (0..n).into_par_iter().map(gen).collect();
            Ok(PathBundle { start: start.to_vec(), dt, steps, kind, trajectories, n_proposed: n })
        }
    }
}

/// Paths given explicitly or regenerated on demand from a stream.
#[derive(Debug, Clone, Copy)]
pub enum PathSource<'b> {
    Bundle(&'b PathBundle),
    Sampler { n_paths: usize, stream: &'b RngStream },
}

impl PathSource<'_> {
    fn len(&self) -> usize {
        match self {
            PathSource::Bundle(b) => b.trajectories.len(),
            PathSource::Sampler { n_paths, .. } => *n_paths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub cache: CachePolicy,
    /// Largest dense cache, in cells.
    pub max_cached_cells: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { cache: CachePolicy::Auto, max_cached_cells: 40_000_000 }
    }
}

/// Per-path log-weights β·I − β²V/2 at each checkpoint; −∞ marks a restricted-out path.
struct LogWeights {
    by_checkpoint: Vec<Vec<f64>>,
}

struct RunSpec<'a> {
    beta: f64,
    x: &'a [f64],
    dt: f64,
    checkpoints: &'a [usize],
    first_slot: usize,
    restrict: Option<(f64, usize)>,
}

fn with_path<R>(src: &PathSource<'_>, i: usize, x: &[f64], steps: usize, dt: f64, buf: &mut Vec<f64>, f: impl FnOnce(&[f64]) -> R) -> R {
    match src {
        PathSource::Bundle(b) => f(&b.trajectories[i]),
        PathSource::Sampler { stream, .. } => {
            let mut rng = stream.child(i as u64).rng();
            fill_free(x, steps, dt, &mut rng, buf);
            f(buf)
        }
    }
}

fn run_paths(op: &'static str, rs: &RunSpec<'_>, view: &NoiseView<'_>, spec: &KernelSpec, src: PathSource<'_>, opts: &McOptions, touched: Option<&mut HashSet<Cell>>) -> Result<LogWeights> {
    let n = src.len();
    let steps = rs.checkpoints.iter().copied().max().unwrap_or(0);
    let d = rs.x.len();
    if d != view.dim() || d != spec.dim() {
        return Err(invalid(op, "dimension mismatch between start point, noise and kernel"));
    }
    if (view.dt() - rs.dt).abs() > 1e-12 * rs.dt {
        return Err(invalid(op, format!("path dt {} differs from noise dt {}", rs.dt, view.dt())));
    }
    if let PathSource::Bundle(b) = &src {
        if b.steps < steps || (b.dt - rs.dt).abs() > 1e-12 * rs.dt {
            return Err(invalid(op, "path bundle does not cover the requested horizon"));
        }
        if b.start.iter().zip(rs.x).any(|(a, c)| (a - c).abs() > 1e-12) {
            return Err(invalid(op, "paths do not start at x"));
        }
    }
    if rs.beta == 0.0 && touched.is_none() {
        // weights are identically 1; only the restriction matters
        let mut base = vec![0.0; n];
        if let Some((rho, upto)) = rs.restrict {
            base = (0..n)
                .into_par_iter()
                .map_init(Vec::new, |buf, i| {
                    with_path(&src, i, rs.x, steps.max(upto), rs.dt, buf, |p| if sup_dev_within(p, rs.x, upto, rho) { 0.0 } else { f64::NEG_INFINITY })
                })
                .collect();
        }
        return Ok(LogWeights { by_checkpoint: rs.checkpoints.iter().map(|_| base.clone()).collect() });
    }
    let r = spec.support_radius();
    let dx = view.dx();
    let use_dense = match opts.cache {
        CachePolicy::Never => false,
        CachePolicy::Always | CachePolicy::Auto => true,
    } && touched.is_none();
    let field = if use_dense {
        let boxes = (0..n)
            .into_par_iter()
            .fold(
                || (SlotBoxes::new(d, rs.first_slot + steps), Vec::new()),
                |(mut bx, mut buf), i| {
                    with_path(&src, i, rs.x, steps, rs.dt, &mut buf, |p| {
                        let keep = rs.restrict.map_or(true, |(rho, upto)| sup_dev_within(p, rs.x, upto, rho));
                        if keep {
                            bx.add_path(p, steps, rs.first_slot, r, dx);
                        }
                    });
                    (bx, buf)
                },
            )
            .map(|(b, _)| b)
            .reduce(|| SlotBoxes::new(d, rs.first_slot + steps), |mut a, b| {
                a.merge(&b);
                a
            });
        let volume = boxes.volume();
        let balls = (n * steps) as f64 * ball_cells(d, r, dx);
        let worth = opts.cache == CachePolicy::Always || (volume as f64) < 0.5 * balls;
        if worth && volume <= opts.max_cached_cells {
            NoiseField::Dense(*view, DenseField::build(view, &boxes)?)
        } else {
            NoiseField::Virtual(*view)
        }
    } else {
        NoiseField::Virtual(*view)
    };
    let eval = |p: &[f64], t: Option<&mut HashSet<Cell>>| -> Result<Vec<f64>> {
        if let Some((rho, upto)) = rs.restrict {
            if !sup_dev_within(p, rs.x, upto, rho) {
                return Ok(vec![f64::NEG_INFINITY; rs.checkpoints.len()]);
            }
        }
        let li = field.line_integral_checkpoints(spec, p, rs.first_slot, rs.checkpoints, t)?;
        Ok(li.iter().map(|l| rs.beta * l.value - 0.5 * rs.beta * rs.beta * l.self_variance).collect())
    };
    let per_path: Vec<Vec<f64>> = if let Some(t) = touched {
        let mut out = Vec::with_capacity(n);
        let mut buf = Vec::new();
        for i in 0..n {
            out.push(with_path(&src, i, rs.x, steps, rs.dt, &mut buf, |p| eval(p, Some(&mut *t)))?);
        }
        out
    } else {
        (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| with_path(&src, i, rs.x, steps, rs.dt, buf, |p| eval(p, None)))
            .collect::<Result<Vec<_>>>()?
    };
    let mut by_checkpoint = vec![Vec::with_capacity(n); rs.checkpoints.len()];
    for w in per_path {
        for (c, v) in w.into_iter().enumerate() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::NumericalOverflow { op, msg: format!("non-finite log-weight {v}; beta = {} is too large for dt = {}", rs.beta, rs.dt) });
            }
            by_checkpoint[c].push(v);
        }
    }
    Ok(LogWeights { by_checkpoint })
}

fn ball_cells(d: usize, r: f64, dx: f64) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h + 1.0) * (r / dx).powi(d as i32)
}

/// Mean of exp(l_i) with a max shift. Returns (mean, se, log mean).
pub(crate) fn shifted_mean(op: &'static str, logw: &[f64]) -> Result<(f64, f64, f64)> {
    let n = logw.len() as f64;
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok((0.0, 0.0, f64::NEG_INFINITY));
    }
    let mut s = 0.0;
    let mut s2 = 0.0;
    for &l in logw {
        let w = (l - m).exp();
        s += w;
        s2 += w * w;
    }
    let mean_s = s / n;
    let var_s = if n > 1.0 { ((s2 - s * mean_s) / (n - 1.0)).max(0.0) } else { 0.0 };
    let scale = m.exp();
    if !scale.is_finite() {
        return Err(Error::NumericalOverflow { op, msg: format!("partition estimate exceeds f64 range (log max weight {m})") });
    }
    Ok((scale * mean_s, scale * (var_s / n).sqrt(), m + mean_s.ln()))
}

fn estimate_of(op: &'static str, logw: &[f64]) -> Result<Estimate> {
    let (v, se, _) = shifted_mean(op, logw)?;
    Ok(Estimate::mc(v, se, logw.len()))
}

/// Ẑ_T(x) = mean over paths of exp(β∫ξ₁(B,s)ds − β²V/2), V the exact discrete variance of the
/// line integral (≈ R(0)T).
pub fn partition_mc(beta: f64, t: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, paths: PathSource<'_>, opts: &McOptions) -> Result<Estimate> {
    const OP: &str = "polymer::partition_mc";
    check_beta(OP, beta)?;
    let steps = steps_for(OP, t, view.dt())?;
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints: &[steps], first_slot: 0, restrict: None };
    let lw = run_paths(OP, &rs, view, spec, paths, opts, None)?;
    estimate_of(OP, &lw.by_checkpoint[0])
}

/// Same as [`partition_mc`] also returning ln Ẑ computed in log space.
pub fn partition_mc_log(beta: f64, t: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, paths: PathSource<'_>, opts: &McOptions) -> Result<(Estimate, f64)> {
    const OP: &str = "polymer::partition_mc";
    check_beta(OP, beta)?;
    let steps = steps_for(OP, t, view.dt())?;
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints: &[steps], first_slot: 0, restrict: None };
    let lw = run_paths(OP, &rs, view, spec, paths, opts, None)?;
    let (v, se, l) = shifted_mean(OP, &lw.by_checkpoint[0])?;
    Ok((Estimate::mc(v, se, lw.by_checkpoint[0].len()), l))
}

fn check_beta(op: &'static str, beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(op, format!("beta = {beta} must be finite and >= 0")));
    }
    Ok(())
}

/// Ẑ_{T_short} and Ẑ_{T_long} on one path set and one noise, with the per-path difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledEstimate {
    pub short: Estimate,
    pub long: Estimate,
    pub difference: Estimate,
    pub log_short: f64,
    pub log_long: f64,
}

pub fn partition_mc_coupled(beta: f64, t_short: f64, t_long: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, n_paths: usize, stream: &RngStream, opts: &McOptions) -> Result<CoupledEstimate> {
    const OP: &str = "polymer::partition_mc_coupled";
    check_beta(OP, beta)?;
    if t_short > t_long {
        return Err(invalid(OP, format!("T_short = {t_short} exceeds T_long = {t_long}")));
    }
    let ks = steps_for(OP, t_short, view.dt())?;
    let kl = steps_for(OP, t_long, view.dt())?;
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints: &[ks, kl], first_slot: 0, restrict: None };
    let lw = run_paths(OP, &rs, view, spec, PathSource::Sampler { n_paths, stream }, opts, None)?;
    coupled_from(OP, &lw.by_checkpoint[0], &lw.by_checkpoint[1])
}

fn coupled_from(op: &'static str, ls: &[f64], ll: &[f64]) -> Result<CoupledEstimate> {
    let (vs, ses, log_s) = shifted_mean(op, ls)?;
    let (vl, sel, log_l) = shifted_mean(op, ll)?;
    let m = ls.iter().chain(ll).copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = m.exp();
    let diffs: Vec<f64> = ls.iter().zip(ll).map(|(a, b)| (b - m).exp() - (a - m).exp()).collect();
    let de = Estimate::from_samples(&diffs);
    let n = ls.len();
    Ok(CoupledEstimate {
        short: Estimate::mc(vs, ses, n),
        long: Estimate::mc(vl, sel, n),
        difference: Estimate::mc(vl - vs, scale * de.std_error, n),
        log_short: log_s,
        log_long: log_l,
    })
}

/// Coupled estimates for several horizons at once (checkpoint times on one path set).
pub(crate) fn partition_mc_checkpoints(op: &'static str, beta: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, checkpoints: &[usize], n_paths: usize, stream: &RngStream, opts: &McOptions) -> Result<Vec<Vec<f64>>> {
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints, first_slot: 0, restrict: None };
    Ok(run_paths(op, &rs, view, spec, PathSource::Sampler { n_paths, stream }, opts, None)?.by_checkpoint)
}

/// Partition function over [0, τ] where paths leaving the ball of radius ρ about x weigh 0.
pub fn restricted_partition_mc(beta: f64, tau: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, rho: f64, n_paths: usize, stream: &RngStream) -> Result<Estimate> {
    restricted_inner(beta, tau, x, view, spec, rho, n_paths, stream, None)
}

/// As [`restricted_partition_mc`], also returning the base noise cells the weights depend on.
pub fn restricted_partition_touched(beta: f64, tau: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, rho: f64, n_paths: usize, stream: &RngStream) -> Result<(Estimate, HashSet<Cell>)> {
    let mut set = HashSet::new();
    let e = restricted_inner(beta, tau, x, view, spec, rho, n_paths, stream, Some(&mut set))?;
    Ok((e, set))
}

#[allow(clippy::too_many_arguments)]
fn restricted_inner(beta: f64, tau: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, rho: f64, n_paths: usize, stream: &RngStream, touched: Option<&mut HashSet<Cell>>) -> Result<Estimate> {
    const OP: &str = "polymer::restricted_partition_mc";
    check_beta(OP, beta)?;
    if !(rho > 0.0) {
        return Err(invalid(OP, format!("rho = {rho} must be positive")));
    }
    let steps = steps_for(OP, tau, view.dt())?;
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints: &[steps], first_slot: 0, restrict: Some((rho, steps)) };
    let lw = run_paths(OP, &rs, view, spec, PathSource::Sampler { n_paths, stream }, &McOptions::default(), touched)?;
    estimate_of(OP, &lw.by_checkpoint[0])
}

/// Unrestricted and restricted estimates on the same paths and noise.
pub fn restricted_pair(beta: f64, tau: f64, x: &[f64], view: &NoiseView<'_>, spec: &KernelSpec, rho: f64, n_paths: usize, stream: &RngStream) -> Result<(Estimate, Estimate, Estimate)> {
    const OP: &str = "polymer::restricted_partition_mc";
    let steps = steps_for(OP, tau, view.dt())?;
    let rs = RunSpec { beta, x, dt: view.dt(), checkpoints: &[steps], first_slot: 0, restrict: None };
    let full = run_paths(OP, &rs, view, spec, PathSource::Sampler { n_paths, stream }, &McOptions::default(), None)?;
    let lw = &full.by_checkpoint[0];
    let d = x.len();
    let keep: Vec<bool> = (0..n_paths)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut rng = stream.child(i as u64).rng();
            fill_free(x, steps, view.dt(), &mut rng, buf);
            debug_assert_eq!(buf.len(), (steps + 1) * d);
            sup_dev_within(buf, x, steps, rho)
        })
        .collect();
    let restricted: Vec<f64> = lw.iter().zip(&keep).map(|(l, k)| if *k { *l } else { f64::NEG_INFINITY }).collect();
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = lw.iter().zip(&keep).map(|(l, k)| if *k { 0.0 } else { (l - m).exp() }).collect();
    let g = Estimate::from_samples(&gaps);
    let s = m.exp();
    Ok((estimate_of(OP, lw)?, estimate_of(OP, &restricted)?, Estimate::mc(s * g.value, s * g.std_error, n_paths)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{ForcedCells, NoiseBox};
    use crate::stats::moments;
    use std::sync::OnceLock;

    fn bump() -> &'static KernelSpec {
        static K: OnceLock<KernelSpec> = OnceLock::new();
        K.get_or_init(KernelSpec::default_bump)
    }

    #[test]
    fn bridge_ends_exactly() {
        let s = RngStream::new(1);
        let b = sample_paths(&[0.0; 3], 2.0, 0.1, 50, PathKind::Bridge { endpoint: vec![0.0; 3] }, &s).unwrap();
        for p in &b.trajectories {
            assert_eq!(&p[20 * 3..], &[0.0, 0.0, 0.0]);
        }
        let b = sample_paths(&[1.0, 0.0, 0.0], 2.0, 0.1, 5, PathKind::Bridge { endpoint: vec![0.3, -2.0, 0.5] }, &s).unwrap();
        for p in &b.trajectories {
            assert_eq!(&p[..3], &[1.0, 0.0, 0.0]);
            assert_eq!(&p[60..], &[0.3, -2.0, 0.5]);
        }
    }

    #[test]
    fn free_endpoint_variance() {
        let b = sample_paths(&[0.0; 3], 1.5, 0.5, 100_000, PathKind::Free, &RngStream::new(2)).unwrap();
        let xs: Vec<f64> = b.trajectories.iter().map(|p| p[3 * 3]).collect();
        let m = moments(&xs).unwrap();
        assert!((m.var - 1.5).abs() < 3.0 * m.se_var);
        // increments
        let inc: Vec<f64> = b.trajectories.iter().take(20_000).map(|p| p[4] - p[1]).collect();
        let m = moments(&inc).unwrap();
        assert!((m.var - 0.5).abs() < 3.0 * m.se_var);
    }

    #[test]
    fn restricted_acceptance_matches_fine_grid_rejection() {
        // oracle: rejection with dt/8 on an independent stream
        let (t, rho) = (1.0, 1.5);
        let b = sample_paths(&[0.0; 3], t, 0.05, 4000, PathKind::Restricted { rho }, &RngStream::new(3)).unwrap();
        for p in &b.trajectories {
            assert!(sup_dev_within(p, &[0.0; 3], b.steps, rho));
        }
        let fine = sample_paths(&[0.0; 3], t, 0.05 / 8.0, 20_000, PathKind::Free, &RngStream::new(4)).unwrap();
        let hits = fine.trajectories.iter().filter(|p| sup_dev_within(p, &[0.0; 3], fine.steps, rho)).count();
        let p_fine = hits as f64 / 20_000.0;
        let p = b.acceptance();
        let se = (p * (1.0 - p) / b.n_proposed as f64 + p_fine * (1.0 - p_fine) / 20_000.0).sqrt();
        // the coarse grid misses excursions between points, so it may only over-accept
        assert!(p >= p_fine - 3.0 * se && p - p_fine < 0.08, "{p} vs {p_fine}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = RngStream::new(5);
        let a = sample_paths(&[0.0; 3], 1.0, 0.25, 10, PathKind::Free, &s).unwrap();
        let b = sample_paths(&[0.0; 3], 1.0, 0.25, 10, PathKind::Free, &s).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert!(sample_paths(&[0.0; 3], 1.0, 0.3, 10, PathKind::Free, &s).is_err());
    }

    fn noise(seed: u64, t: f64) -> NoiseBox {
        NoiseBox::for_paths(seed, bump(), 0.25, 0.0625, &[vec![0.0; 3]], t).unwrap()
    }

    #[test]
    fn beta_zero_is_exactly_one() {
        let nb = noise(1, 2.0);
        let s = RngStream::new(1);
        let e = partition_mc(0.0, 2.0, &[0.0; 3], &nb.view(), bump(), PathSource::Sampler { n_paths: 64, stream: &s }, &McOptions::default()).unwrap();
        assert_eq!((e.value, e.std_error), (1.0, 0.0));
        let c = partition_mc_coupled(0.0, 1.0, 2.0, &[0.0; 3], &nb.view(), bump(), 64, &s, &McOptions::default()).unwrap();
        assert_eq!((c.short.value, c.long.value, c.difference.value), (1.0, 1.0, 0.0));
    }

    #[test]
    fn equal_horizons_give_zero_difference() {
        let nb = noise(2, 2.0);
        let s = RngStream::new(2);
        let c = partition_mc_coupled(0.3, 2.0, 2.0, &[0.0; 3], &nb.view(), bump(), 64, &s, &McOptions::default()).unwrap();
        assert_eq!(c.difference.value, 0.0);
        assert_eq!(c.short.value, c.long.value);
    }

    #[test]
    fn dense_and_virtual_agree_bitwise() {
        let nb = noise(3, 2.0);
        let s = RngStream::new(3);
        let src = PathSource::Sampler { n_paths: 32, stream: &s };
        let a = partition_mc(0.4, 2.0, &[0.0; 3], &nb.view(), bump(), src, &McOptions { cache: CachePolicy::Always, ..Default::default() }).unwrap();
        let b = partition_mc(0.4, 2.0, &[0.0; 3], &nb.view(), bump(), src, &McOptions { cache: CachePolicy::Never, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let bundle = sample_paths(&[0.0; 3], 2.0, 0.0625, 32, PathKind::Free, &s).unwrap();
        let c = partition_mc(0.4, 2.0, &[0.0; 3], &nb.view(), bump(), PathSource::Bundle(&bundle), &McOptions::default()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn zero_noise_weight_is_deterministic_renormalization() {
        let nb = noise(4, 1.0).with_forced(&ForcedCells::zeros()).unwrap();
        let s = RngStream::new(4);
        let e = partition_mc(0.5, 1.0, &[0.0; 3], &nb.view(), bump(), PathSource::Sampler { n_paths: 16, stream: &s }, &McOptions::default()).unwrap();
        // exp(−β²V/2) with V ≈ R(0)T
        let want = (-0.125 * bump().r0()).exp();
        assert!((e.value - want).abs() < 0.01 * want);
        assert!(e.value > 0.0);
    }

    #[test]
    fn martingale_mean_one() {
        // mean over noise replicas of Ẑ_T at T ∈ {1, 2, 4}
        for t in [1.0, 2.0, 4.0] {
            let reps = 500;
            let vals: Vec<f64> = (0..reps)
                .map(|r| {
                    let nb = noise(10_000 + r, t);
                    let s = RngStream::new(77).child(r);
                    partition_mc(0.2, t, &[0.0; 3], &nb.view(), bump(), PathSource::Sampler { n_paths: 32, stream: &s }, &McOptions::default()).unwrap().value
                })
                .collect();
            let m = moments(&vals).unwrap();
            assert!((m.mean - 1.0).abs() < 3.0 * m.se_mean, "T={t}: {} ± {}", m.mean, m.se_mean);
        }
    }

    #[test]
    fn coupled_increment_is_centered() {
        let reps = 500;
        let d: Vec<f64> = (0..reps)
            .map(|r| {
                let nb = noise(20_000 + r, 8.0);
                let s = RngStream::new(78).child(r);
                partition_mc_coupled(0.2, 2.0, 8.0, &[0.0; 3], &nb.view(), bump(), 16, &s, &McOptions::default()).unwrap().difference.value
            })
            .collect();
        let m = moments(&d).unwrap();
        assert!(m.mean.abs() < 3.0 * m.se_mean, "{} ± {}", m.mean, m.se_mean);
    }

    #[test]
    fn restricted_limits() {
        let nb = noise(5, 2.0);
        let s = RngStream::new(5);
        let v = nb.view();
        let big = restricted_partition_mc(0.3, 2.0, &[0.0; 3], &v, bump(), 1e6, 64, &s).unwrap();
        let full = partition_mc(0.3, 2.0, &[0.0; 3], &v, bump(), PathSource::Sampler { n_paths: 64, stream: &s }, &McOptions::default()).unwrap();
        assert_eq!(big.value, full.value);
        let p0 = restricted_partition_mc(0.0, 2.0, &[0.0; 3], &v, bump(), 1.5, 4000, &s).unwrap();
        let kept = sample_paths(&[0.0; 3], 2.0, 0.0625, 4000, PathKind::Free, &s)
            .unwrap()
            .trajectories
            .iter()
            .filter(|p| sup_dev_within(p, &[0.0; 3], 32, 1.5))
            .count();
        assert_eq!(p0.value, kept as f64 / 4000.0);
        let (f, r, gap) = restricted_pair(0.3, 2.0, &[0.0; 3], &v, bump(), 1.5, 64, &s).unwrap();
        assert_eq!(f.value, full.value);
        assert!((f.value - r.value - gap.value).abs() < 1e-12);
    }

    #[test]
    fn touched_cells_lie_near_start() {
        let nb = NoiseBox::new(6, 3, 0.25, 0.0625, 20.0, 2.0).unwrap();
        let s = RngStream::new(6);
        let (_, cells) = restricted_partition_touched(0.2, 2.0, &[5.0, 0.0, 0.0], &nb.view(), bump(), 1.5, 64, &s).unwrap();
        assert!(!cells.is_empty());
        for c in &cells {
            let d2: f64 = c.lattice.iter().zip([5.0, 0.0, 0.0]).map(|(&l, x)| (l as f64 * 0.25 - x).powi(2)).sum();
            assert!(d2.sqrt() < 1.5 + 1.0 + 1e-9);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn partition_is_positive(seed in 0u64..1000, beta in 0.0f64..1.5) {
            let nb = noise(seed, 1.0);
            let s = RngStream::new(seed);
            let e = partition_mc(beta, 1.0, &[0.0; 3], &nb.view(), bump(), PathSource::Sampler { n_paths: 8, stream: &s }, &McOptions::default()).unwrap();
            proptest::prop_assert!(e.value > 0.0 && e.std_error >= 0.0);
        }

        #[test]
        fn beta_zero_any_grid(seed in 0u64..1000, dtk in 1usize..4, t in 1usize..4) {
            let dt = 0.25 / dtk as f64;
            let nb = NoiseBox::for_paths(seed, bump(), 0.25, dt, &[vec![0.0; 3]], t as f64).unwrap();
            let s = RngStream::new(seed);
            let e = partition_mc(0.0, t as f64, &[0.0; 3], &nb.view(), bump(), PathSource::Sampler { n_paths: 4, stream: &s }, &McOptions::default()).unwrap();
            proptest::prop_assert_eq!((e.value, e.std_error), (1.0, 0.0));
        }
    }
}
