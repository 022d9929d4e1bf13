//! Noise-free quantities: exponential functionals of Brownian motion and bridges, the 𝔥_β
//! fixed point, γ(β)², β_{L²}, the kernels H_{β;(0,T)} and H_{β;(T,∞)}, the L² error formula
//! and C_∞.

use crate::error::{invalid, Error, Result};
use crate::mollifier::{chi, norm, norm2, yukawa_radial, KernelSpec};
use crate::polymer::{steps_for, Estimate, Method};
use crate::quad::{gauss_legendre, heat_time_tail, sphere_area};
use crate::stats::RngStream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointOptions {
    /// Intervals of the solve grid on the support of R(√2·).
    pub inner_intervals: usize,
    pub tol: f64,
    pub n_max: usize,
    pub cap: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { inner_intervals: 4096, tol: 1e-8, n_max: 10_000, cap: 1e8 }
    }
}

/// Radial solution of 𝔥 = 1 + K_β𝔥.
#[derive(Debug, Clone, Serialize)]
pub struct HBetaSolution {
    pub beta: f64,
    pub dim: usize,
    pub radial_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// β²∫R(√2x)𝔥_β(x)dx; 𝔥_β(r) − 1 = 𝒢⁰(r)·this for r outside the support.
    pub pair_constant: f64,
    #[serde(skip)]
    support: f64,
    #[serde(skip)]
    inner: Vec<f64>,
    #[serde(skip)]
    dr: f64,
}

impl HBetaSolution {
    /// 𝔥_β at radius r; linear interpolation inside the support, the exact Yukawa tail outside.
    pub fn value_at(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= self.support {
            if self.pair_constant == 0.0 {
                return 1.0;
            }
            return 1.0 + yukawa_radial(self.dim, r) * self.pair_constant;
        }
        let u = r / self.dr;
        let i = (u as usize).min(self.inner.len() - 2);
        let f = u - i as f64;
        self.inner[i] * (1.0 - f) + self.inner[i + 1] * f
    }

    pub fn value_at_point(&self, z: &[f64]) -> f64 {
        self.value_at(norm(z))
    }

    /// Radius beyond which R(√2·) vanishes.
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,value\n");
        for (r, v) in self.radial_grid.iter().zip(&self.values) {
            s.push_str(&format!("{r:.10e},{v:.17e}\n"));
        }
        s
    }
}

/// Cumulative trapezoid sums of the two ring integrals on a uniform grid.
struct RingOperator {
    dim: usize,
    dr: f64,
    /// ρ^{d−1}R(√2ρ) and ρR(√2ρ) on the nodes.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// r^{2−d}, with 0 at r = 0.
    pow: Vec<f64>,
    /// β²χ_d|S^{d−1}|
    coef: f64,
}

impl RingOperator {
    fn new(spec: &KernelSpec, beta: f64, intervals: usize) -> Self {
        let d = spec.dim();
        let support = spec.r_support() / std::f64::consts::SQRT_2;
        let dr = support / intervals as f64;
        let n = intervals + 1;
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut pow = Vec::with_capacity(n);
        for i in 0..n {
            let rho = i as f64 * dr;
            let g = if i == intervals { 0.0 } else { spec.kernel_r_radial(std::f64::consts::SQRT_2 * rho) };
            lower.push(rho.powi(d as i32 - 1) * g);
            upper.push(rho * g);
            pow.push(if i == 0 { 0.0 } else { rho.powi(2 - d as i32) });
        }
        RingOperator { dim: d, dr, lower, upper, pow, coef: beta * beta * chi(d) * sphere_area(d) }
    }

    /// out = K h; also returns β²|S^{d−1}|∫ρ^{d−1}R(√2ρ)h dρ.
    fn apply(&self, h: &[f64], out: &mut [f64]) -> f64 {
        let n = h.len();
        let half = 0.5 * self.dr;
        // upper tail sums from the right
        let mut up = 0.0;
        out[n - 1] = 0.0;
        for i in (0..n - 1).rev() {
            up += half * (self.upper[i] * h[i] + self.upper[i + 1] * h[i + 1]);
            out[i] = up;
        }
        let mut low = 0.0;
        for i in 1..n {
            low += half * (self.lower[i - 1] * h[i - 1] + self.lower[i] * h[i]);
            out[i] += self.pow[i] * low;
        }
        for v in out.iter_mut() {
            *v *= self.coef;
        }
        self.coef / chi(self.dim) * low
    }
}

/// Iterates 𝔥^{(n+1)} = 1 + K_β𝔥^{(n)} from 𝔥^{(0)} ≡ 1, reporting on `m + 1` radii of [0, r_max].
pub fn h_beta_fixed_point(spec: &KernelSpec, beta: f64, r_max: f64, m: usize, opts: &FixedPointOptions) -> Result<HBetaSolution> {
    const OP: &str = "functionals::h_beta_fixed_point";
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(OP, format!("beta = {beta} must be finite and >= 0")));
    }
    if !(r_max > 0.0) || m < 1 || opts.inner_intervals < 8 {
        return Err(invalid(OP, "need r_max > 0, m >= 1 and at least 8 inner intervals"));
    }
    let op = RingOperator::new(spec, beta, opts.inner_intervals);
    let n = opts.inner_intervals + 1;
    let mut h = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut prev_update = f64::INFINITY;
    let (residual, grew) = loop {
        op.apply(&h, &mut next);
        iterations += 1;
        let mut upd: f64 = 0.0;
        let mut top: f64 = 0.0;
        for (a, b) in h.iter_mut().zip(&next) {
            let v = 1.0 + b;
            upd = upd.max((v - *a).abs());
            top = top.max(v);
            *a = v;
        }
        if !top.is_finite() || top > opts.cap {
            return Err(Error::SupercriticalBeta { op: OP, msg: format!("iterate exceeded {:e} after {iterations} steps at beta = {beta}", opts.cap) });
        }
        if upd < opts.tol || iterations >= opts.n_max {
            break (upd, upd >= prev_update);
        }
        prev_update = upd;
    };
    if residual >= opts.tol && grew {
        return Err(Error::SupercriticalBeta { op: OP, msg: format!("updates still growing after {iterations} steps at beta = {beta}") });
    }
    let constant = op.apply(&h, &mut next);
    let mut sol = HBetaSolution {
        beta,
        dim: spec.dim(),
        radial_grid: Vec::new(),
        values: Vec::new(),
        iterations,
        residual,
        converged: residual < opts.tol,
        pair_constant: constant,
        support: spec.r_support() / std::f64::consts::SQRT_2,
        inner: h,
        dr: op.dr,
    };
    sol.radial_grid = (0..=m).map(|i| r_max * i as f64 / m as f64).collect();
    sol.values = sol.radial_grid.iter().map(|&r| sol.value_at(r)).collect();
    Ok(sol)
}

/// Series term 𝔥_{β;k}(z) = (K_β^k 1)(z) for k ≤ 3.
pub fn h_series_term(spec: &KernelSpec, beta: f64, k: usize, z: &[f64], opts: &FixedPointOptions) -> Result<f64> {
    const OP: &str = "functionals::h_series_term";
    if k > 3 {
        return Err(Error::UnsupportedOrder { op: OP, msg: format!("order {k} > 3") });
    }
    if k == 0 {
        return Ok(1.0);
    }
    let op = RingOperator::new(spec, beta, opts.inner_intervals);
    let n = opts.inner_intervals + 1;
    let mut h = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut c = 0.0;
    for _ in 0..k {
        c = op.apply(&h, &mut next);
        std::mem::swap(&mut h, &mut next);
    }
    let r = norm(z);
    let support = spec.r_support() / std::f64::consts::SQRT_2;
    if r >= support {
        return Ok(yukawa_radial(spec.dim(), r) * c);
    }
    let u = r / op.dr;
    let i = (u as usize).min(n - 2);
    let f = u - i as f64;
    Ok(h[i] * (1.0 - f) + h[i + 1] * f)
}

/// γ(β)² = β²∫R(x)𝔥_β(x/√2)dx by radial Gauss–Legendre on the support of R.
pub fn gamma_squared(spec: &KernelSpec, hsol: &HBetaSolution) -> f64 {
    let beta = hsol.beta;
    if beta == 0.0 {
        return 0.0;
    }
    let d = spec.dim();
    let top = spec.r_support();
    let rule = gauss_legendre(64);
    let panels = 16;
    let w = top / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        for &(t, wt) in &rule {
            let s = (p as f64 + 0.5 * (t + 1.0)) * w;
            acc += 0.5 * w * wt * s.powi(d as i32 - 1) * spec.kernel_r_radial(s) * hsol.value_at(s / std::f64::consts::SQRT_2);
        }
    }
    beta * beta * sphere_area(d) * acc
}

/// Exponent β²Δt·Σ_{k<K} R(√2 B_k) along a free path from z, drawn step by step.
#[inline]
fn free_exponent(spec: &KernelSpec, z: &[f64], steps: usize, half: usize, dt: f64, rng: &mut ChaCha8Rng) -> (f64, f64, [f64; crate::noise::MAX_DIM]) {
    let d = z.len();
    let mut b = [0.0f64; crate::noise::MAX_DIM];
    b[..d].copy_from_slice(z);
    let s = dt.sqrt();
    let mut acc = 0.0;
    let mut at_half = 0.0;
    for k in 0..steps {
        if k == half {
            at_half = acc;
        }
        let r2: f64 = b[..d].iter().map(|v| v * v).sum();
        acc += spec.kernel_r_sq(2.0 * r2);
        for v in b[..d].iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += s * g;
        }
    }
    if half >= steps {
        at_half = acc;
    }
    (acc, at_half, b)
}

/// Trapezoid sum Σ_k w_k R(√2 X_k), w_0 = w_K = ½, for the bridge X_k = W_k − (k/K)(W_K − b)
/// built from a free path W.
#[inline]
fn bridge_sum(spec: &KernelSpec, w: &[f64], b: &[f64], steps: usize) -> f64 {
    let d = b.len();
    let mut shift = [0.0f64; crate::noise::MAX_DIM];
    for i in 0..d {
        shift[i] = w[steps * d + i] - b[i];
    }
    let mut acc = 0.0;
    for k in 0..=steps {
        let f = k as f64 / steps as f64;
        let mut r2 = 0.0;
        for i in 0..d {
            let v = w[k * d + i] - f * shift[i];
            r2 += v * v;
        }
        let wk = if k == 0 || k == steps { 0.5 } else { 1.0 };
        acc += wk * spec.kernel_r_sq(2.0 * r2);
    }
    acc
}

fn check_common(op: &'static str, spec: &KernelSpec, beta: f64, z: &[f64], n: usize) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(op, format!("beta = {beta} must be finite and >= 0")));
    }
    if z.len() != spec.dim() {
        return Err(invalid(op, "point dimension differs from kernel dimension"));
    }
    if n < 2 {
        return Err(invalid(op, "need at least 2 samples"));
    }
    Ok(())
}

fn overflow_guard(op: &'static str, e: Estimate) -> Result<Estimate> {
    if !e.value.is_finite() || !e.std_error.is_finite() {
        return Err(Error::NumericalOverflow { op, msg: "exponential functional overflowed".into() });
    }
    Ok(e)
}

/// E_z[exp(β²∫₀^T R(√2B))], left-endpoint sum with step dt. Path i draws from `stream.child(i)`.
pub fn pair_functional(spec: &KernelSpec, beta: f64, t: f64, z: &[f64], dt: f64, n: usize, stream: &RngStream) -> Result<Estimate> {
    const OP: &str = "functionals::pair_functional";
    check_common(OP, spec, beta, z, n)?;
    let steps = steps_for(OP, t, dt)?;
    if beta == 0.0 {
        return Ok(Estimate { n_samples: n, ..Estimate::exact(1.0, Method::Mc) });
    }
    let c = beta * beta * dt;
    let xs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            (c * free_exponent(spec, z, steps, steps, dt, &mut rng).0).exp()
        })
        .collect();
    overflow_guard(OP, Estimate::from_samples(&xs))
}

/// 𝔥_β(z) by Monte Carlo over free paths truncated at `horizon`.
///
/// `tail_bound` is the estimated probability that a path re-enters the support of R(√2·) after
/// the horizon. A warning is attached when the second half of the horizon still adds a
/// significant share of 𝔥 − 1.
pub fn h_beta_mc(spec: &KernelSpec, beta: f64, z: &[f64], horizon: f64, dt: f64, n: usize, stream: &RngStream) -> Result<Estimate> {
    const OP: &str = "functionals::h_beta_mc";
    check_common(OP, spec, beta, z, n)?;
    let steps = steps_for(OP, horizon, dt)?;
    let d = spec.dim();
    let support = spec.r_support() / std::f64::consts::SQRT_2;
    let c = beta * beta * dt;
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let (full, half, end) = free_exponent(spec, z, steps, steps / 2, dt, &mut rng);
            let r = norm(&end[..d]);
            let back = if r <= support { 1.0 } else { (support / r).powi(d as i32 - 2) };
            ((c * full).exp(), (c * full).exp() - (c * half).exp(), back)
        })
        .collect();
    let w: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut e = overflow_guard(OP, Estimate::from_samples(&w))?;
    if beta == 0.0 {
        e.value = 1.0;
        e.std_error = 0.0;
    }
    let growth = Estimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    e.tail_bound = Some(rows.iter().map(|r| r.2).sum::<f64>() / n as f64);
    if beta > 0.0 && growth.value > 3.0 * growth.std_error && growth.value > 0.05 * (e.value - 1.0).abs() {
        e.warning = Some(format!(
            "horizon-too-small: the second half of H = {horizon} adds {:.3e} of {:.3e}",
            growth.value,
            e.value - 1.0
        ));
    }
    Ok(e)
}

/// A_β(a, b, T): the exponential functional along a bridge from a to b, trapezoid rule in time.
pub fn bridge_functional(spec: &KernelSpec, beta: f64, a: &[f64], b: &[f64], t: f64, dt: f64, n: usize, stream: &RngStream) -> Result<Estimate> {
    const OP: &str = "functionals::bridge_functional";
    check_common(OP, spec, beta, a, n)?;
    if b.len() != a.len() {
        return Err(invalid(OP, "endpoint dimension mismatch"));
    }
    let steps = steps_for(OP, t, dt)?;
    if beta == 0.0 {
        return Ok(Estimate { n_samples: n, ..Estimate::exact(1.0, Method::Mc) });
    }
    let d = a.len();
    let zero = vec![0.0; d];
    let c = beta * beta * dt;
    let xs: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut rng = stream.child(i as u64).rng();
            crate::polymer::fill_free(&zero, steps, dt, &mut rng, buf);
            // a + W_k − (k/K)(W_K − (b − a)) is the bridge built from W + a
            for (k, v) in buf.iter_mut().enumerate() {
                *v += a[k % d];
            }
            (c * bridge_sum(spec, buf, b, steps)).exp()
        })
        .collect();
    overflow_guard(OP, Estimate::from_samples(&xs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEval {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_0_t: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_t_inf: Option<f64>,
}

fn separation(op: &'static str, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(invalid(op, "point dimension mismatch"));
    }
    let r = norm2(&x1.iter().zip(x2).map(|(a, b)| b - a).collect::<Vec<_>>()).sqrt();
    if r == 0.0 {
        return Err(Error::Singularity { op, msg: "x1 = x2".into() });
    }
    Ok(r)
}

fn check_hsol(op: &'static str, beta: f64, hsol: &HBetaSolution) -> Result<()> {
    if hsol.beta != beta {
        return Err(invalid(op, format!("solution computed at beta = {}, requested {beta}", hsol.beta)));
    }
    Ok(())
}

/// H_{β;(T,∞)}(x₁,x₂) = T^{(d−2)/2}(𝔥_β(√T(x₂−x₁)/√2) − 1).
pub fn kernel_h_t_inf(beta: f64, t: f64, x1: &[f64], x2: &[f64], hsol: &HBetaSolution) -> Result<KernelEval> {
    const OP: &str = "functionals::kernel_H_T_inf";
    check_hsol(OP, beta, hsol)?;
    if !(t > 0.0) {
        return Err(invalid(OP, format!("T = {t} must be positive")));
    }
    let r = separation(OP, x1, x2)?;
    let d = hsol.dim as f64;
    let v = t.powf((d - 2.0) / 2.0) * (hsol.value_at(t.sqrt() * r / std::f64::consts::SQRT_2) - 1.0);
    Ok(KernelEval { t, x1: x1.to_vec(), x2: x2.to_vec(), h_0_t: None, h_t_inf: Some(v) })
}

/// Large-T limit of H_{β;(T,∞)}: 𝒢⁰((x₂−x₁)/√2)·β²∫R(√2x)𝔥_β(x)dx, the integral by radial
/// Gauss–Legendre on the support.
pub fn kernel_h_t_inf_limit(spec: &KernelSpec, x1: &[f64], x2: &[f64], hsol: &HBetaSolution) -> Result<f64> {
    const OP: &str = "functionals::kernel_H_T_inf";
    let r = separation(OP, x1, x2)?;
    Ok(yukawa_radial(spec.dim(), r / std::f64::consts::SQRT_2) * pair_constant_quadrature(spec, hsol))
}

/// β²∫R(√2x)𝔥_β(x)dx, independent of the solver's own trapezoid sum.
pub fn pair_constant_quadrature(spec: &KernelSpec, hsol: &HBetaSolution) -> f64 {
    let d = spec.dim();
    let top = hsol.support();
    let rule = gauss_legendre(64);
    let panels = 16;
    let w = top / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        for &(t, wt) in &rule {
            let s = (p as f64 + 0.5 * (t + 1.0)) * w;
            acc += 0.5 * w * wt * s.powi(d as i32 - 1) * spec.kernel_r_radial(std::f64::consts::SQRT_2 * s) * hsol.value_at(s);
        }
    }
    hsol.beta * hsol.beta * sphere_area(d) * acc
}

/// One sample of H_{β;(0,T)}(x₁,x₂) on a shared free path, via the one-motion reduction:
/// free − bridge(x₂, y₁) − bridge(y₂, x₁) + bridge(x₂, x₁) with endpoints √T(·−·)/√2.
fn h0t_sample(spec: &KernelSpec, c: f64, t: f64, x1: &[f64], x2: &[f64], y1: &[f64], y2: &[f64], steps: usize, w: &[f64]) -> f64 {
    let d = x1.len();
    let s = (t / 2.0).sqrt();
    let end = |p: &[f64], q: &[f64]| -> [f64; crate::noise::MAX_DIM] {
        let mut e = [0.0; crate::noise::MAX_DIM];
        for i in 0..d {
            e[i] = s * (p[i] - q[i]);
        }
        e
    };
    let mut free = 0.0;
    for k in 0..=steps {
        let wk = if k == 0 || k == steps { 0.5 } else { 1.0 };
        free += wk * spec.kernel_r_sq(2.0 * norm2(&w[k * d..(k + 1) * d]));
    }
    let b2 = bridge_sum(spec, w, &end(x2, y1)[..d], steps);
    let b3 = bridge_sum(spec, w, &end(y2, x1)[..d], steps);
    let b4 = bridge_sum(spec, w, &end(x2, x1)[..d], steps);
    (c * free).exp() - (c * b2).exp() - (c * b3).exp() + (c * b4).exp()
}

fn std_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// H_{β;(0,T)}(x₁,x₂) by Monte Carlo; sample i draws y₁, y₂ ~ G₁ and one free path.
pub fn kernel_h_0_t(spec: &KernelSpec, beta: f64, t: f64, x1: &[f64], x2: &[f64], dt: f64, n: usize, stream: &RngStream) -> Result<KernelEval> {
    const OP: &str = "functionals::kernel_H_0_T";
    check_common(OP, spec, beta, x1, n)?;
    separation(OP, x1, x2)?;
    let steps = steps_for(OP, t, dt)?;
    let d = spec.dim();
    let c = beta * beta * dt;
    let zero = vec![0.0; d];
    let xs: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut rng = stream.child(i as u64).rng();
            let y1 = std_normal_vec(&mut rng, d);
            let y2 = std_normal_vec(&mut rng, d);
            crate::polymer::fill_free(&zero, steps, dt, &mut rng, buf);
            if beta == 0.0 {
                0.0
            } else {
                h0t_sample(spec, c, t, x1, x2, &y1, &y2, steps, buf)
            }
        })
        .collect();
    let e = overflow_guard(OP, Estimate::from_samples(&xs))?;
    Ok(KernelEval { t, x1: x1.to_vec(), x2: x2.to_vec(), h_0_t: Some(e), h_t_inf: None })
}

/// ∬G₁(x₁)G₁(x₂)H_{β;(0,T)}(x₁,x₂)H_{β;(T,∞)}(x₁,x₂)dx₁dx₂ by Monte Carlo over x₁, x₂ ~ G₁.
pub fn l2_error_formula(spec: &KernelSpec, beta: f64, t: f64, dt: f64, n: usize, stream: &RngStream, hsol: &HBetaSolution) -> Result<Estimate> {
    const OP: &str = "functionals::l2_error_formula";
    check_hsol(OP, beta, hsol)?;
    let d = spec.dim();
    check_common(OP, spec, beta, &vec![0.0; d], n)?;
    let steps = steps_for(OP, t, dt)?;
    if beta == 0.0 {
        return Ok(Estimate { n_samples: n, ..Estimate::exact(0.0, Method::Mc) });
    }
    let c = beta * beta * dt;
    let zero = vec![0.0; d];
    let scale = t.powf((d as f64 - 2.0) / 2.0);
    let xs: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut rng = stream.child(i as u64).rng();
            let x1 = std_normal_vec(&mut rng, d);
            let x2 = std_normal_vec(&mut rng, d);
            let y1 = std_normal_vec(&mut rng, d);
            let y2 = std_normal_vec(&mut rng, d);
            crate::polymer::fill_free(&zero, steps, dt, &mut rng, buf);
            let r = norm(&x1.iter().zip(&x2).map(|(a, b)| b - a).collect::<Vec<_>>());
            let tail = scale * (hsol.value_at(t.sqrt() * r / std::f64::consts::SQRT_2) - 1.0);
            h0t_sample(spec, c, t, &x1, &x2, &y1, &y2, steps, buf) * tail
        })
        .collect();
    overflow_guard(OP, Estimate::from_samples(&xs))
}

/// C_∞(j,j′) = γ(β)²∫₀^∞G_{2s+2}(x_j − x_{j′})ds = γ²·½∫₂^∞G_u du.
pub fn c_infty(spec: &KernelSpec, xj: &[f64], xj2: &[f64], hsol: &HBetaSolution) -> Result<f64> {
    const OP: &str = "functionals::c_infty";
    if xj.len() != spec.dim() || xj2.len() != spec.dim() {
        return Err(invalid(OP, "point dimension differs from kernel dimension"));
    }
    let g2 = gamma_squared(spec, hsol);
    if g2 == 0.0 {
        return Ok(0.0);
    }
    let r = norm(&xj.iter().zip(xj2).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(g2 * 0.5 * heat_time_tail(spec.dim(), r, 2.0))
}

/// γ(β)² by nested Monte Carlo: x ~ R/∫R, then one free path from x/√2 per sample.
pub fn gamma_squared_mc(spec: &KernelSpec, beta: f64, horizon: f64, dt: f64, n: usize, stream: &RngStream) -> Result<Estimate> {
    const OP: &str = "functionals::gamma_squared_mc";
    let d = spec.dim();
    check_common(OP, spec, beta, &vec![0.0; d], n)?;
    let steps = steps_for(OP, horizon, dt)?;
    if beta == 0.0 {
        return Ok(Estimate { n_samples: n, ..Estimate::exact(0.0, Method::Mc) });
    }
    let c = beta * beta * dt;
    let pre = beta * beta * spec.r_integral();
    let xs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let radius = spec.sample_r_radius(rng.gen::<f64>());
            let mut dir = std_normal_vec(&mut rng, d);
            let len = norm(&dir);
            for v in dir.iter_mut() {
                *v *= radius / len / std::f64::consts::SQRT_2;
            }
            pre * (c * free_exponent(spec, &dir, steps, steps, dt, &mut rng).0).exp()
        })
        .collect();
    overflow_guard(OP, Estimate::from_samples(&xs))
}

/// Bracketing interval for β_{L²}: the fixed point converges at the lower end and diverges at
/// the upper end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaInterval {
    pub lo: f64,
    pub hi: f64,
    pub bisections: usize,
}

fn subcritical(spec: &KernelSpec, beta: f64, opts: &FixedPointOptions) -> Result<bool> {
    match h_beta_fixed_point(spec, beta, 1.0, 1, opts) {
        Ok(_) => Ok(true),
        Err(Error::SupercriticalBeta { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn beta_l2_estimate(spec: &KernelSpec, bracket: (f64, f64), tol: f64, opts: &FixedPointOptions) -> Result<BetaInterval> {
    const OP: &str = "functionals::beta_L2_estimate";
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo && tol > 0.0) {
        return Err(invalid(OP, format!("need 0 <= lo < hi and tol > 0, got ({lo}, {hi}), {tol}")));
    }
    if !subcritical(spec, lo, opts)? {
        return Err(Error::InvalidBracket { op: OP, msg: format!("fixed point diverges at the lower end {lo}") });
    }
    if subcritical(spec, hi, opts)? {
        return Err(Error::InvalidBracket { op: OP, msg: format!("fixed point converges at the upper end {hi}") });
    }
    let mut bisections = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if subcritical(spec, mid, opts)? {
            lo = mid;
        } else {
            hi = mid;
        }
        bisections += 1;
    }
    Ok(BetaInterval { lo, hi, bisections })
}
