//! Ensembles of rescaled fluctuations F^PF, F^FE over independent noise replicas, and the
//! Gaussian reference covariances.

use crate::error::{invalid, Error, Result};
use crate::mollifier::{norm, KernelSpec};
use crate::noise::NoiseBox;
use crate::polymer::{partition_mc_checkpoints, shifted_mean, steps_for, Estimate, McOptions};
use crate::quad::{gauss_hermite, gauss_legendre, heat_time_tail};
use crate::stats::{purpose, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EnsembleKind {
    Pf,
    Fe,
    Averaged { base: Box<EnsembleKind>, f: TestFunction },
}

/// Test functions whose spatial integrals are taken on declared quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", deny_unknown_fields)]
pub enum TestFunction {
    /// Σ w_i N(mean_i, sd_i² I), Gauss–Hermite nodes per component.
    GaussianMixture { components: Vec<GaussianComponent>, nodes_per_axis: usize },
    /// Indicator of [lower, upper], Gauss–Legendre nodes.
    Box { lower: Vec<f64>, upper: Vec<f64>, nodes_per_axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl TestFunction {
    /// Quadrature (node, weight) pairs for ∫f(x)g(x)dx ≈ Σ w g(node).
    pub fn nodes(&self, dim: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        const OP: &str = "fluctuations::TestFunction::nodes";
        let product = |rule: &[(f64, f64)], map: &dyn Fn(usize, f64) -> f64, scale: f64| -> Vec<(Vec<f64>, f64)> {
            let m = rule.len();
            let total = m.pow(dim as u32);
            (0..total)
                .map(|mut idx| {
                    let mut x = vec![0.0; dim];
                    let mut w = scale;
                    for (i, xi) in x.iter_mut().enumerate() {
                        let (t, wt) = rule[idx % m];
                        idx /= m;
                        *xi = map(i, t);
                        w *= wt;
                    }
                    (x, w)
                })
                .collect()
        };
        match self {
            TestFunction::GaussianMixture { components, nodes_per_axis } => {
                if *nodes_per_axis < 2 {
                    return Err(invalid(OP, "need at least 2 nodes per axis"));
                }
                let rule = gauss_hermite(*nodes_per_axis);
                let mut out = Vec::new();
                for c in components {
                    if c.mean.len() != dim || !(c.sd > 0.0) {
                        return Err(invalid(OP, "component mean dimension or sd invalid"));
                    }
                    let s = c.sd;
                    let map = |i: usize, t: f64| c.mean[i] + std::f64::consts::SQRT_2 * s * t;
                    out.extend(product(&rule, &map, c.weight * std::f64::consts::PI.powf(-(dim as f64) / 2.0)));
                }
                Ok(out)
            }
            TestFunction::Box { lower, upper, nodes_per_axis } => {
                if lower.len() != dim || upper.len() != dim || lower.iter().zip(upper).any(|(a, b)| !(b > a)) || *nodes_per_axis < 2 {
                    return Err(invalid(OP, "box bounds or node count invalid"));
                }
                let rule = gauss_legendre(*nodes_per_axis);
                let vol: f64 = lower.iter().zip(upper).map(|(a, b)| 0.5 * (b - a)).product();
                let map = |i: usize, t: f64| lower[i] + 0.5 * (upper[i] - lower[i]) * (t + 1.0);
                Ok(product(&rule, &map, vol))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub beta: f64,
    /// Scale T.
    pub t_scale: f64,
    /// ∞-surrogate horizon.
    pub t_max: f64,
    pub inner_n: usize,
    pub replicas: usize,
    pub base_seed: u64,
    pub dx: f64,
    pub dt: f64,
}

/// Samples over replicas (rows) and points (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationEnsemble {
    pub points: Vec<SpaceTimePoint>,
    pub kind: EnsembleKind,
    pub params: EnsembleParams,
    pub samples: Vec<Vec<f64>>,
    /// Replica index of each row.
    pub replica_ids: Vec<usize>,
    /// Inner paths per estimate for each row (after any doubling).
    pub inner_mc: Vec<usize>,
    /// Noise seed of each row.
    pub seeds: Vec<u64>,
    pub invalid: usize,
    pub doubled: usize,
    /// RMS over rows of T^{(d−2)/4}(Ẑ_{T_max} − Ẑ_{T_max/2}) per point.
    pub bias_proxy: Vec<f64>,
    /// Largest inner relative s.e. seen on any retained row.
    pub max_inner_rel_se: f64,
}

impl FluctuationEnsemble {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("replica,point,value\n");
        for (row, id) in self.samples.iter().zip(&self.replica_ids) {
            for (j, v) in row.iter().enumerate() {
                s.push_str(&format!("{id},{j},{v:.17e}\n"));
            }
        }
        s
    }

    /// Parameters and per-replica seeds for exact replay.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "points": self.points,
            "kind": self.kind,
            "params": self.params,
            "replica_ids": self.replica_ids,
            "inner_mc": self.inner_mc,
            "seeds": self.seeds,
            "invalid": self.invalid,
            "doubled": self.doubled,
            "bias_proxy": self.bias_proxy,
            "max_inner_rel_se": self.max_inner_rel_se,
        })
    }
}

/// Inner relative s.e. above which a replica is redrawn with doubled inner paths.
pub const INNER_REL_SE_MAX: f64 = 0.10;
/// Fraction of invalid replicas that aborts a build.
pub const INVALID_FRACTION_MAX: f64 = 0.05;

/// Noise seed of replica r.
pub fn replica_noise_seed(base_seed: u64, r: usize) -> u64 {
    RngStream::new(base_seed).child(purpose::REPLICA).child(r as u64).child(purpose::NOISE).key()
}

fn replica_paths(base_seed: u64, r: usize, attempt: usize) -> RngStream {
    RngStream::new(base_seed).child(purpose::REPLICA).child(r as u64).child(purpose::PATHS).child(attempt as u64)
}

fn check_params(op: &'static str, spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams) -> Result<()> {
    if points.is_empty() {
        return Err(invalid(op, "no points"));
    }
    for pt in points {
        if pt.x.len() != spec.dim() || !(pt.t > 0.0) {
            return Err(invalid(op, "point dimension mismatch or t <= 0"));
        }
    }
    for i in 0..points.len() {
        for j in 0..i {
            if points[i] == points[j] {
                return Err(invalid(op, format!("points {j} and {i} coincide")));
            }
        }
    }
    let t_m = points.iter().map(|p| p.t).fold(0.0, f64::max);
    if !(p.beta >= 0.0) || !(p.t_scale > 0.0) || !(p.t_max > t_m * p.t_scale) {
        return Err(invalid(op, format!("need beta >= 0, T > 0 and T_max > t_M·T (T_max = {}, t_M·T = {})", p.t_max, t_m * p.t_scale)));
    }
    if p.inner_n < 2 || p.replicas < 1 {
        return Err(invalid(op, "need inner_n >= 2 and replicas >= 1"));
    }
    Ok(())
}

/// Per-replica estimates at every point: (Ẑ_{t_jT}, Ẑ_{T_max/2}, Ẑ_{T_max}) values, logs and
/// the worst relative s.e.
struct ReplicaRow {
    short: Vec<f64>,
    half: Vec<f64>,
    long: Vec<f64>,
    log_short: Vec<f64>,
    log_long: Vec<f64>,
    worst_rel_se: f64,
}

fn replica_row(spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams, noise: &NoiseBox, paths: &RngStream, inner_n: usize) -> Result<ReplicaRow> {
    const OP: &str = "fluctuations::build_ensemble";
    let t_m = points.iter().map(|q| q.t).fold(0.0, f64::max);
    let sq = p.t_scale.sqrt();
    let mut row = ReplicaRow { short: vec![], half: vec![], long: vec![], log_short: vec![], log_long: vec![], worst_rel_se: 0.0 };
    let k_max = steps_for(OP, p.t_max, p.dt)?;
    for (j, pt) in points.iter().enumerate() {
        let delta = (t_m - pt.t) * p.t_scale;
        let view = noise.view().shift_time(delta)?;
        let k_short = steps_for(OP, pt.t * p.t_scale, p.dt)?;
        let k_half = k_max / 2;
        let x: Vec<f64> = pt.x.iter().map(|v| v * sq).collect();
        let lw = partition_mc_checkpoints(OP, p.beta, &x, &view, spec, &[k_short, k_half.max(1), k_max], inner_n, &paths.child(j as u64), &McOptions::default())?;
        let s = shifted_mean(OP, &lw[0])?;
        let h = shifted_mean(OP, &lw[1])?;
        let l = shifted_mean(OP, &lw[2])?;
        for e in [s, l] {
            let rel = if e.0 > 0.0 { e.1 / e.0 } else { f64::INFINITY };
            row.worst_rel_se = row.worst_rel_se.max(rel);
        }
        row.short.push(s.0);
        row.half.push(h.0);
        row.long.push(l.0);
        row.log_short.push(s.2);
        row.log_long.push(l.2);
    }
    Ok(row)
}

fn noise_for(spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams, r: usize) -> Result<NoiseBox> {
    let t_m = points.iter().map(|q| q.t).fold(0.0, f64::max);
    let t_1 = points.iter().map(|q| q.t).fold(f64::INFINITY, f64::min);
    let sq = p.t_scale.sqrt();
    let starts: Vec<Vec<f64>> = points.iter().map(|q| q.x.iter().map(|v| v * sq).collect()).collect();
    NoiseBox::for_paths(replica_noise_seed(p.base_seed, r), spec, p.dx, p.dt, &starts, (t_m - t_1) * p.t_scale + p.t_max)
}

/// Worst inner relative s.e. of one replica at a fixed inner size, with no retry.
pub(crate) fn pilot_replica(spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams, r: usize, inner_n: usize) -> Result<f64> {
    check_params("fluctuations::build_ensemble", spec, points, p)?;
    let noise = noise_for(spec, points, p, r)?;
    Ok(replica_row(spec, points, p, &noise, &replica_paths(p.base_seed, r, 0), inner_n)?.worst_rel_se)
}

/// PF and FE ensembles from one run (same replicas, noises and paths).
pub fn build_paired(spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams) -> Result<(FluctuationEnsemble, FluctuationEnsemble)> {
    const OP: &str = "fluctuations::build_ensemble";
    check_params(OP, spec, points, p)?;
    let d = spec.dim() as f64;
    let scale = p.t_scale.powf((d - 2.0) / 4.0);
    let mut pf = Vec::new();
    let mut fe = Vec::new();
    let mut ids = Vec::new();
    let mut inner = Vec::new();
    let mut seeds = Vec::new();
    let mut invalid_rows = 0;
    let mut doubled = 0;
    let mut max_rel: f64 = 0.0;
    let mut proxy = vec![0.0; points.len()];
    for r in 0..p.replicas {
        let noise = noise_for(spec, points, p, r)?;
        let mut n = p.inner_n;
        let mut row = replica_row(spec, points, p, &noise, &replica_paths(p.base_seed, r, 0), n)?;
        if row.worst_rel_se > INNER_REL_SE_MAX {
            doubled += 1;
            n *= 2;
            row = replica_row(spec, points, p, &noise, &replica_paths(p.base_seed, r, 1), n)?;
        }
        let ok = row.worst_rel_se <= INNER_REL_SE_MAX && row.short.iter().chain(&row.long).all(|v| *v > 0.0);
        if !ok {
            invalid_rows += 1;
            if invalid_rows as f64 > INVALID_FRACTION_MAX * p.replicas as f64 {
                return Err(Error::InnerMcDegenerate {
                    op: OP,
                    msg: format!(
                        "{invalid_rows} of {} replicas have inner relative s.e. above {INNER_REL_SE_MAX} after doubling (latest {:.3} at inner n = {n})",
                        p.replicas, row.worst_rel_se
                    ),
                });
            }
            continue;
        }
        max_rel = max_rel.max(row.worst_rel_se);
        pf.push(row.long.iter().zip(&row.short).map(|(l, s)| scale * (l - s)).collect::<Vec<_>>());
        fe.push(row.log_long.iter().zip(&row.log_short).map(|(l, s)| scale * (l - s)).collect::<Vec<_>>());
        for (j, v) in proxy.iter_mut().enumerate() {
            *v += (scale * (row.long[j] - row.half[j])).powi(2);
        }
        ids.push(r);
        inner.push(n);
        seeds.push(noise.seed());
    }
    let rows = ids.len().max(1) as f64;
    let proxy: Vec<f64> = proxy.iter().map(|v| (v / rows).sqrt()).collect();
    let make = |kind: EnsembleKind, samples: Vec<Vec<f64>>| FluctuationEnsemble {
        points: points.to_vec(),
        kind,
        params: *p,
        samples,
        replica_ids: ids.clone(),
        inner_mc: inner.clone(),
        seeds: seeds.clone(),
        invalid: invalid_rows,
        doubled,
        bias_proxy: proxy.clone(),
        max_inner_rel_se: max_rel,
    };
    Ok((make(EnsembleKind::Pf, pf), make(EnsembleKind::Fe, fe)))
}

/// samples[r][j] = T^{(d−2)/4}(Ẑ_{T_max} − Ẑ_{t_jT}) (PF) or the log version (FE), each point on
/// the noise shifted by (t_M − t_j)T.
pub fn build_ensemble(kind: EnsembleKind, spec: &KernelSpec, points: &[SpaceTimePoint], p: &EnsembleParams) -> Result<FluctuationEnsemble> {
    let (pf, fe) = build_paired(spec, points, p)?;
    match kind {
        EnsembleKind::Pf => Ok(pf),
        EnsembleKind::Fe => Ok(fe),
        EnsembleKind::Averaged { .. } => Err(invalid("fluctuations::build_ensemble", "use build_averaged_ensemble for averaged kinds")),
    }
}

/// ∫f(x)F(x,t)dx over the quadrature nodes of f, all nodes sharing one noise per replica.
pub fn build_averaged_ensemble(base: EnsembleKind, f: &TestFunction, t: f64, spec: &KernelSpec, p: &EnsembleParams) -> Result<FluctuationEnsemble> {
    const OP: &str = "fluctuations::build_averaged_ensemble";
    if matches!(base, EnsembleKind::Averaged { .. }) {
        return Err(invalid(OP, "base kind must be PF or FE"));
    }
    let nodes = f.nodes(spec.dim())?;
    let kind = EnsembleKind::Averaged { base: Box::new(base.clone()), f: f.clone() };
    let live: Vec<&(Vec<f64>, f64)> = nodes.iter().filter(|n| n.1 != 0.0).collect();
    if live.is_empty() {
        let points = vec![SpaceTimePoint { x: vec![0.0; spec.dim()], t }];
        check_params(OP, spec, &points, p)?;
        return Ok(FluctuationEnsemble {
            points,
            kind,
            params: *p,
            samples: vec![vec![0.0]; p.replicas],
            replica_ids: (0..p.replicas).collect(),
            inner_mc: vec![p.inner_n; p.replicas],
            seeds: (0..p.replicas).map(|r| replica_noise_seed(p.base_seed, r)).collect(),
            invalid: 0,
            doubled: 0,
            bias_proxy: vec![0.0],
            max_inner_rel_se: 0.0,
        });
    }
    let points: Vec<SpaceTimePoint> = live.iter().map(|n| SpaceTimePoint { x: n.0.clone(), t }).collect();
    let (pf, fe) = build_paired(spec, &points, p)?;
    let src = if base == EnsembleKind::Pf { pf } else { fe };
    let weights: Vec<f64> = live.iter().map(|n| n.1).collect();
    let samples = src.samples.iter().map(|row| vec![row.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>()]).collect();
    let bias = src.bias_proxy.iter().zip(&weights).map(|(b, w)| b * w.abs()).sum::<f64>();
    Ok(FluctuationEnsemble { points: vec![SpaceTimePoint { x: vec![0.0; spec.dim()], t }], kind, samples, bias_proxy: vec![bias], ..src })
}

/// Reference covariances of the limiting field U.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReference {
    pub gamma2: f64,
    pub cov_u: Vec<Vec<f64>>,
    pub var_zinf: Option<f64>,
    pub kind: String,
    pub min_eigenvalue: f64,
}

/// Cov(U(x_i,t_i), U(x_j,t_j)) = γ²∫₀^∞G_{t_i+t_j+2s}(x_i − x_j)ds = (γ²/2)∫_{t_i+t_j}^∞G_u du.
pub fn cov_u_entry(dim: usize, gamma2: f64, a: &SpaceTimePoint, b: &SpaceTimePoint) -> f64 {
    if gamma2 == 0.0 {
        return 0.0;
    }
    let r = norm(&a.x.iter().zip(&b.x).map(|(p, q)| p - q).collect::<Vec<_>>());
    0.5 * gamma2 * heat_time_tail(dim, r, a.t + b.t)
}

pub fn cov_u_reference(dim: usize, points: &[SpaceTimePoint], gamma2: f64) -> Result<LimitReference> {
    const OP: &str = "fluctuations::cov_U_reference";
    if !(gamma2 >= 0.0) {
        return Err(Error::InvalidReference { op: OP, msg: format!("gamma2 = {gamma2} must be >= 0") });
    }
    if points.iter().any(|p| p.x.len() != dim || !(p.t > 0.0)) {
        return Err(invalid(OP, "point dimension mismatch or t <= 0"));
    }
    let m = points.len();
    let cov: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| cov_u_entry(dim, gamma2, &points[i], &points[j])).collect()).collect();
    let min_eig = if m == 0 {
        0.0
    } else {
        let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| cov[i][j]);
        mat.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    };
    if min_eig < -1e-10 {
        return Err(Error::InvalidReference { op: OP, msg: format!("covariance not positive semidefinite (eigenvalue {min_eig:e})") });
    }
    Ok(LimitReference { gamma2, cov_u: cov, var_zinf: None, kind: "U".into(), min_eigenvalue: min_eig })
}

/// γ²∬f(x)f(y)∫₀^∞G_{2t+2s}(x−y)ds dxdy on the quadrature nodes of f.
pub fn averaged_variance_reference(dim: usize, f: &TestFunction, t: f64, gamma2: f64) -> Result<f64> {
    let nodes = f.nodes(dim)?;
    let mut acc = 0.0;
    for (x, w) in &nodes {
        for (y, v) in &nodes {
            acc += w * v * cov_u_entry(dim, gamma2, &SpaceTimePoint { x: x.clone(), t }, &SpaceTimePoint { x: y.clone(), t });
        }
    }
    Ok(acc)
}

/// Unbiased estimate of E[(F^PF − Ẑ_{tT}·T^{(d−2)/4}∫G_t(x−y)(Ẑ_∞(y√T; ξ(·,·+tT)) − 1)dy)²].
///
/// Per replica two independent inner halves give residuals D₁, D₂ with E[D_i | ξ] equal to the
/// residual, and the statistic averages D₁D₂. Within a half, Ẑ_{tT} and the y-integral use
/// separate path sets of `inner_n` paths each.
pub fn decomposition_residual_stat(spec: &KernelSpec, point: &SpaceTimePoint, p: &EnsembleParams) -> Result<Estimate> {
    const OP: &str = "fluctuations::decomposition_residual_stat";
    check_params(OP, spec, std::slice::from_ref(point), p)?;
    if p.beta == 0.0 {
        return Ok(Estimate { n_samples: p.replicas, ..Estimate::exact(0.0, crate::polymer::Method::Mc) });
    }
    let d = spec.dim();
    let scale = p.t_scale.powf((d as f64 - 2.0) / 4.0);
    let sq = p.t_scale.sqrt();
    let t_short = point.t * p.t_scale;
    let k_short = steps_for(OP, t_short, p.dt)?;
    let k_max = steps_for(OP, p.t_max, p.dt)?;
    let k_rest = k_max - k_short;
    let x: Vec<f64> = point.x.iter().map(|v| v * sq).collect();
    let mut prods = Vec::with_capacity(p.replicas);
    for r in 0..p.replicas {
        let noise = noise_for(spec, std::slice::from_ref(point), p, r)?;
        let view = noise.view();
        let later = view.shift_slots(k_short as i64);
        let root = replica_paths(p.base_seed, r, 0);
        let mut halves = [0.0; 2];
        for (h, out) in halves.iter_mut().enumerate() {
            let hs = root.child(h as u64);
            let lw = partition_mc_checkpoints(OP, p.beta, &x, &view, spec, &[k_short, k_max], p.inner_n, &hs.child(0), &McOptions::default())?;
            let z_short = shifted_mean(OP, &lw[0])?.0;
            let z_long = shifted_mean(OP, &lw[1])?.0;
            // y ~ G_t(x − ·), one path of horizon T_max − tT from y√T on the later noise each
            let ys = hs.child(1);
            let mut acc = 0.0;
            for i in 0..p.inner_n {
                let mut rng = ys.child(i as u64).child(purpose::SPATIAL).rng();
                let y: Vec<f64> = (0..d).map(|k| sq * (point.x[k] + point.t.sqrt() * rng.sample::<f64, _>(StandardNormal))).collect();
                let one = RngStream::new(ys.child(i as u64).key());
                let lw = partition_mc_checkpoints(OP, p.beta, &y, &later, spec, &[k_rest], 1, &one, &McOptions { cache: crate::polymer::CachePolicy::Never, ..Default::default() })?;
                acc += lw[0][0].exp() - 1.0;
            }
            let integral = acc / p.inner_n as f64;
            *out = scale * ((z_long - z_short) - z_short * integral);
        }
        prods.push(halves[0] * halves[1]);
    }
    Ok(Estimate::from_samples(&prods))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::moments;
    use std::sync::OnceLock;

    fn bump() -> &'static KernelSpec {
        static K: OnceLock<KernelSpec> = OnceLock::new();
        K.get_or_init(KernelSpec::default_bump)
    }

    fn pt(x: f64, t: f64) -> SpaceTimePoint {
        SpaceTimePoint { x: vec![x, 0.0, 0.0], t }
    }

    fn params(beta: f64, t: f64, t_max: f64, inner: usize, reps: usize) -> EnsembleParams {
        EnsembleParams { beta, t_scale: t, t_max, inner_n: inner, replicas: reps, base_seed: 11, dx: 0.25, dt: 0.125 }
    }

    #[test]
    fn beta_zero_ensembles_are_zero() {
        let p = params(0.0, 2.0, 8.0, 8, 3);
        let (pf, fe) = build_paired(bump(), &[pt(0.0, 1.0), pt(1.0, 0.5)], &p).unwrap();
        assert!(pf.samples.iter().flatten().all(|&v| v == 0.0));
        assert!(fe.samples.iter().flatten().all(|&v| v == 0.0));
        let f = TestFunction::GaussianMixture { components: vec![GaussianComponent { weight: 1.0, mean: vec![0.0; 3], sd: 1.0 }], nodes_per_axis: 2 };
        let a = build_averaged_ensemble(EnsembleKind::Fe, &f, 1.0, bump(), &p).unwrap();
        assert!(a.samples.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(decomposition_residual_stat(bump(), &pt(0.0, 1.0), &p).unwrap().value, 0.0);
    }

    #[test]
    fn zero_test_function_is_zero() {
        let f = TestFunction::GaussianMixture { components: vec![GaussianComponent { weight: 0.0, mean: vec![0.0; 3], sd: 1.0 }], nodes_per_axis: 2 };
        let a = build_averaged_ensemble(EnsembleKind::Pf, &f, 1.0, bump(), &params(0.3, 2.0, 8.0, 8, 4)).unwrap();
        assert_eq!(a.samples, vec![vec![0.0]; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params(0.1, 2.0, 2.0, 8, 2);
        assert!(build_paired(bump(), &[pt(0.0, 1.0)], &p).is_err());
        let p = params(0.1, 2.0, 8.0, 8, 2);
        assert!(build_paired(bump(), &[pt(0.0, 1.0), pt(0.0, 1.0)], &p).is_err());
    }

    #[test]
    fn ensemble_is_reproducible_and_replayable() {
        let p = params(0.3, 2.0, 4.0, 16, 3);
        let a = build_ensemble(EnsembleKind::Pf, bump(), &[pt(0.0, 1.0), pt(0.5, 0.5)], &p).unwrap();
        let b = build_ensemble(EnsembleKind::Pf, bump(), &[pt(0.0, 1.0), pt(0.5, 0.5)], &p).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.seeds[1], replica_noise_seed(11, 1));
        assert!(a.samples.iter().flatten().all(|v| v.is_finite()));
        let side = a.sidecar();
        assert_eq!(side["seeds"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn pf_mean_is_centered() {
        let p = params(0.3, 2.0, 8.0, 64, 300);
        let e = build_ensemble(EnsembleKind::Pf, bump(), &[pt(0.0, 1.0)], &p).unwrap();
        let m = moments(&e.column(0)).unwrap();
        assert!(m.mean.abs() < 3.0 * m.se_mean, "{} ± {}", m.mean, m.se_mean);
    }

    #[test]
    fn fe_tracks_pf_over_z() {
        // FE = T^{(d−2)/4} log(Z_max/Z_T) ≈ PF/Z_T at small β
        let p = params(0.1, 4.0, 16.0, 32, 40);
        let (pf, fe) = build_paired(bump(), &[pt(0.0, 1.0)], &p).unwrap();
        let mut gaps: Vec<f64> = Vec::new();
        for (r, id) in pf.replica_ids.iter().enumerate() {
            let noise = noise_for(bump(), &[pt(0.0, 1.0)], &p, *id).unwrap();
            let row = replica_row(bump(), &[pt(0.0, 1.0)], &p, &noise, &replica_paths(11, *id, 0), 32).unwrap();
            assert_eq!(fe.samples[r][0], 2f64.powf(0.5) * (row.log_long[0] - row.log_short[0]));
            let approx = pf.samples[r][0] / row.short[0];
            gaps.push(((fe.samples[r][0] - approx) / fe.samples[r][0]).abs());
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(gaps[gaps.len() / 2] < 0.1);
    }

    #[test]
    fn cov_u_closed_form_and_psd() {
        let g2 = 0.7;
        let r = cov_u_reference(3, &[pt(0.0, 1.0), pt(1.0, 1.0), pt(0.0, 2.0)], g2).unwrap();
        // (γ²/2)∫_2^∞(2πu)^{-3/2}du = (γ²/2)(2π)^{-3/2}·2·2^{-1/2}
        let want = 0.5 * g2 * (2.0 * std::f64::consts::PI).powf(-1.5) * 2.0 * 2f64.powf(-0.5);
        assert!((r.cov_u[0][0] - want).abs() < 1e-13);
        assert!(r.min_eigenvalue >= -1e-10);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.cov_u[i][j], r.cov_u[j][i]);
                assert!(r.cov_u[i][j] <= (r.cov_u[i][i] * r.cov_u[j][j]).sqrt() + 1e-15);
            }
        }
        let z = cov_u_reference(3, &[pt(0.0, 1.0), pt(1.0, 1.0)], 0.0).unwrap();
        assert!(z.cov_u.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn cov_u_semigroup_against_double_quadrature() {
        // ∬G_{t_i}(x_i−y)G_{t_j}(x_j−y′)·γ²∫₀^∞G_{2s}(y−y′)ds dy dy′; with y − y′ = w the inner
        // pair integral reduces to ∫G_{t_i+t_j}(x_i − x_j − w)·γ²·½∫₀^∞G_u(w)du dw, done here by
        // radial quadrature in w with the Green function 1/(2π|w|) handled in spherical coordinates.
        let (ti, tj) = (0.7f64, 1.3f64);
        let sep = 0.8f64;
        let g2 = 1.0;
        let s = ti + tj;
        // radial-angular quadrature of ∫G_s(a − w)·½𝒢⁰(w)dw, |a| = sep
        let gl = gauss_legendre(80);
        let rmax = sep + 12.0 * s.sqrt();
        let mut acc = 0.0;
        let panels = 40;
        for p in 0..panels {
            for &(t, w) in &gl {
                let r = (p as f64 + 0.5 * (t + 1.0)) * rmax / panels as f64;
                let wr = 0.5 * rmax / panels as f64 * w;
                // ∫_{S²} G_s(a − rω)dω = 2π∫_{-1}^{1} G_s(√(a²+r²−2arc)) dc, closed form
                let ang = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * s).powf(-1.5) * s / (sep * r)
                    * ((-(sep - r).powi(2) / (2.0 * s)).exp() - (-(sep + r).powi(2) / (2.0 * s)).exp());
                acc += wr * r * r * ang * 0.5 / (2.0 * std::f64::consts::PI * r);
            }
        }
        let direct = g2 * acc;
        let formula = cov_u_entry(3, g2, &pt(0.0, ti), &pt(sep, tj));
        assert!((direct - formula).abs() < 1e-9 * formula, "{direct} {formula}");
    }

    #[test]
    fn averaged_reference_matches_point_for_narrow_f() {
        let f = TestFunction::GaussianMixture { components: vec![GaussianComponent { weight: 1.0, mean: vec![0.0; 3], sd: 1e-4 }], nodes_per_axis: 3 };
        let v = averaged_variance_reference(3, &f, 1.0, 0.5).unwrap();
        let p = cov_u_entry(3, 0.5, &pt(0.0, 1.0), &pt(0.0, 1.0));
        assert!((v - p).abs() < 1e-6 * p);
        let b = TestFunction::Box { lower: vec![-1.0; 3], upper: vec![1.0; 3], nodes_per_axis: 3 };
        let w: f64 = b.nodes(3).unwrap().iter().map(|n| n.1).sum();
        assert!((w - 8.0).abs() < 1e-12);
    }

    #[test]
    fn residual_stat_is_finite() {
        let p = params(0.3, 1.0, 2.0, 8, 6);
        let e = decomposition_residual_stat(bump(), &pt(0.0, 1.0), &p).unwrap();
        assert!(e.value.is_finite() && e.std_error.is_finite());
    }

    #[test]
    fn degenerate_inner_mc_aborts() {
        let p = EnsembleParams { beta: 2.5, t_scale: 2.0, t_max: 16.0, inner_n: 4, replicas: 4, base_seed: 1, dx: 0.25, dt: 0.125 };
        assert!(matches!(build_paired(bump(), &[pt(0.0, 1.0)], &p), Err(Error::InnerMcDegenerate { .. })));
    }
}
