//! Mollifier φ, correlation kernel R = φ*φ, heat kernel and Yukawa potential.

use crate::error::{invalid, Error, Result};
use crate::quad::{gauss_legendre, sphere_area};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Number of radial table intervals on [0, r_φ].
pub const TABLE_INTERVALS: usize = 512;
const PHI_Q_INTERVALS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// c·exp(−1/(1−|x/r_φ|²)) on the open ball of radius r_φ.
    Bump,
    /// R = 1_{|x| ≤ r_φ}; φ itself is not available.
    DirectRIndicator,
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    dim: usize,
    profile: Profile,
    support_radius: f64,
    norm: f64,
    h_r: f64,
    phi_table: Vec<f64>,
    r_table: Vec<f64>,
    // φ as a function of q = |x|²/r_φ², for the noise inner loop
    phi_q: Vec<f64>,
    // normalized radial CDF of R, same grid as r_table
    r_cdf: Vec<f64>,
    r_integral: f64,
}

fn bump_shape(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

impl KernelSpec {
    pub fn new(dim: usize, profile: Profile, support_radius: f64) -> Result<Self> {
        const OP: &str = "mollifier::KernelSpec::new";
        if dim < 3 {
            return Err(invalid(OP, format!("dimension {dim} < 3")));
        }
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(invalid(OP, format!("support radius {support_radius} not positive")));
        }
        let r = support_radius;
        let h_r = r / TABLE_INTERVALS as f64;
        let area = sphere_area(dim);
        let df = dim as f64;
        match profile {
            Profile::Bump => {
                let gl = gauss_legendre(200);
                let raw: f64 = gl
                    .iter()
                    .map(|&(t, w)| {
                        let rho = 0.5 * r * (t + 1.0);
                        0.5 * r * w * area * rho.powf(df - 1.0) * bump_shape(rho / r)
                    })
                    .sum();
                let norm = 1.0 / raw;
                let phi_table: Vec<f64> = (0..=TABLE_INTERVALS)
                    .map(|i| norm * bump_shape(i as f64 * h_r / r))
                    .collect();
                let phi_q: Vec<f64> = (0..=PHI_Q_INTERVALS)
                    .map(|i| norm * bump_shape((i as f64 / PHI_Q_INTERVALS as f64).sqrt()))
                    .collect();
                let r_table = convolve_radial(dim, r, norm);
                let mut spec = KernelSpec {
                    dim,
                    profile,
                    support_radius: r,
                    norm,
                    h_r,
                    phi_table,
                    r_table,
                    phi_q,
                    r_cdf: Vec::new(),
                    r_integral: 0.0,
                };
                spec.build_cdf();
                Ok(spec)
            }
            Profile::DirectRIndicator => {
                let r_table: Vec<f64> = (0..=2 * TABLE_INTERVALS)
                    .map(|i| if i <= TABLE_INTERVALS { 1.0 } else { 0.0 })
                    .collect();
                let mut spec = KernelSpec {
                    dim,
                    profile,
                    support_radius: r,
                    norm: f64::NAN,
                    h_r,
                    phi_table: Vec::new(),
                    r_table,
                    phi_q: Vec::new(),
                    r_cdf: Vec::new(),
                    r_integral: 0.0,
                };
                spec.build_cdf();
                Ok(spec)
            }
        }
    }

    /// d=3 bump with r_φ = 1.
    pub fn default_bump() -> Self {
        Self::new(3, Profile::Bump, 1.0).expect("default kernel")
    }

    fn build_cdf(&mut self) {
        // trapezoid in radius of |S^{d-1}| s^{d-1} R(s); the indicator edge is the single kink
        let area = sphere_area(self.dim);
        let df = self.dim as f64;
        let n = self.r_table.len();
        let mut cdf = vec![0.0; n];
        let mut acc = 0.0;
        for i in 1..n {
            let s0 = (i - 1) as f64 * self.h_r;
            let s1 = i as f64 * self.h_r;
            let f0 = area * s0.powf(df - 1.0) * self.r_table[i - 1];
            let f1 = area * s1.powf(df - 1.0) * self.r_table[i];
            acc += 0.5 * self.h_r * (f0 + f1);
            cdf[i] = acc;
        }
        if self.profile == Profile::DirectRIndicator {
            // exact ball volume so that the sampler weight matches ∫R
            acc = area * self.support_radius.powf(df) / df;
            for (i, c) in cdf.iter_mut().enumerate() {
                let s = (i as f64 * self.h_r).min(self.support_radius);
                *c = area * s.powf(df) / df;
            }
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        self.r_integral = acc;
        self.r_cdf = cdf;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn profile(&self) -> Profile {
        self.profile
    }
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }
    /// Radial table step h_r = r_φ/512.
    pub fn table_step(&self) -> f64 {
        self.h_r
    }
    /// Radius beyond which R vanishes.
    pub fn r_support(&self) -> f64 {
        match self.profile {
            Profile::Bump => 2.0 * self.support_radius,
            Profile::DirectRIndicator => self.support_radius,
        }
    }

    fn require_phi(&self, op: &'static str) -> Result<()> {
        match self.profile {
            Profile::Bump => Ok(()),
            Profile::DirectRIndicator => Err(Error::UnsupportedMode {
                op,
                msg: "φ is undefined when R is given directly".into(),
            }),
        }
    }

    /// Normalization constant c of the bump.
    pub fn bump_constant(&self) -> Result<f64> {
        self.require_phi("mollifier::bump_constant")?;
        Ok(self.norm)
    }

    /// φ at radius `rho`, exact formula.
    pub fn phi_radial(&self, rho: f64) -> Result<f64> {
        self.require_phi("mollifier::phi")?;
        Ok(self.norm * bump_shape(rho.abs() / self.support_radius))
    }

    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        self.phi_radial(norm(x))
    }

    /// φ as a function of |x|²; linear interpolation in |x|²/r_φ². Used by the noise inner loop.
    #[inline]
    pub(crate) fn phi_of_r2(&self, r2: f64) -> f64 {
        let q = r2 / (self.support_radius * self.support_radius) * PHI_Q_INTERVALS as f64;
        if q >= PHI_Q_INTERVALS as f64 {
            return 0.0;
        }
        let i = q as usize;
        let f = q - i as f64;
        self.phi_q[i] * (1.0 - f) + self.phi_q[i + 1] * f
    }

    pub fn has_phi(&self) -> bool {
        self.profile == Profile::Bump
    }

    /// R at radius `s`, linearly interpolated from the radial table.
    #[inline]
    pub fn kernel_r_radial(&self, s: f64) -> f64 {
        let u = s.abs() / self.h_r;
        let n = self.r_table.len() - 1;
        if u >= n as f64 {
            return 0.0;
        }
        if self.profile == Profile::DirectRIndicator {
            return if s.abs() <= self.support_radius { 1.0 } else { 0.0 };
        }
        let i = u as usize;
        let f = u - i as f64;
        self.r_table[i] * (1.0 - f) + self.r_table[i + 1] * f
    }

    /// R as a function of |x|²; avoids nothing but keeps call sites uniform.
    #[inline]
    pub fn kernel_r_sq(&self, r2: f64) -> f64 {
        let lim = self.r_support();
        if r2 >= lim * lim {
            return 0.0;
        }
        self.kernel_r_radial(r2.sqrt())
    }

    pub fn kernel_r(&self, x: &[f64]) -> f64 {
        self.kernel_r_radial(norm(x))
    }

    /// R(0) = ‖φ‖₂² (1 in direct-R mode).
    pub fn r0(&self) -> f64 {
        self.r_table[0]
    }

    /// ∫R over ℝ^d (1 for the bump up to table error, the ball volume for the indicator).
    pub fn r_integral(&self) -> f64 {
        self.r_integral
    }

    /// Radial samples (radius, φ, R) on the table grid.
    pub fn radial_table(&self) -> Vec<(f64, f64, f64)> {
        (0..self.r_table.len())
            .map(|i| {
                let phi = self.phi_table.get(i).copied().unwrap_or(if self.has_phi() { 0.0 } else { f64::NAN });
                (i as f64 * self.h_r, phi, self.r_table[i])
            })
            .collect()
    }

    pub fn radial_table_csv(&self) -> String {
        let mut s = String::from("radius,phi,R\n");
        for (r, p, k) in self.radial_table() {
            if p.is_nan() {
                s.push_str(&format!("{r:.10e},,{k:.17e}\n"));
            } else {
                s.push_str(&format!("{r:.10e},{p:.17e},{k:.17e}\n"));
            }
        }
        s
    }

    /// Draws a radius from the density ∝ s^{d-1}R(s) given a uniform `u` in [0,1).
    pub fn sample_r_radius(&self, u: f64) -> f64 {
        let c = &self.r_cdf;
        let i = c.partition_point(|&v| v <= u).clamp(1, c.len() - 1);
        let (c0, c1) = (c[i - 1], c[i]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        ((i - 1) as f64 + f) * self.h_r
    }
}

/// Radial table of R = φ*φ on [0, 2r] in (ρ, θ) coordinates, θ restricted to where φ(x−y) > 0.
fn convolve_radial(dim: usize, r: f64, norm: f64) -> Vec<f64> {
    let df = dim as f64;
    let h_r = r / TABLE_INTERVALS as f64;
    let rule = gauss_legendre(64);
    let ring = sphere_area(dim - 1);
    let phi = |rho: f64| norm * bump_shape(rho / r);
    let r0 = {
        let gl = gauss_legendre(200);
        gl.iter()
            .map(|&(t, w)| {
                let rho = 0.5 * r * (t + 1.0);
                0.5 * r * w * sphere_area(dim) * rho.powf(df - 1.0) * phi(rho).powi(2)
            })
            .sum::<f64>()
    };
    let mut out = vec![0.0; 2 * TABLE_INTERVALS + 1];
    out[0] = r0;
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        let s = i as f64 * h_r;
        if s >= 2.0 * r {
            break;
        }
        let lo = (s - r).max(0.0);
        let mut acc = 0.0;
        for &(tr, wr) in &rule {
            let rho = lo + 0.5 * (r - lo) * (tr + 1.0);
            let wrho = 0.5 * (r - lo) * wr;
            let c0 = ((s * s + rho * rho - r * r) / (2.0 * s * rho)).clamp(-1.0, 1.0);
            let th_max = c0.acos();
            if th_max <= 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for &(tt, wt) in &rule {
                let th = 0.5 * th_max * (tt + 1.0);
                let u2 = s * s + rho * rho - 2.0 * s * rho * th.cos();
                inner += 0.5 * th_max * wt * phi(u2.max(0.0).sqrt()) * th.sin().powf(df - 2.0);
            }
            acc += wrho * rho.powf(df - 1.0) * phi(rho) * inner;
        }
        *slot = ring * acc;
    }
    out
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    norm2(x).sqrt()
}

/// φ_ε(x) = ε^{-d} φ(x/ε).
pub fn phi_eps(spec: &KernelSpec, eps: f64, x: &[f64]) -> Result<f64> {
    const OP: &str = "mollifier::phi_eps";
    if !(eps > 0.0) {
        return Err(invalid(OP, format!("eps = {eps} must be positive")));
    }
    spec.require_phi(OP)?;
    let r = norm(x) / eps;
    Ok(eps.powi(-(spec.dim as i32)) * spec.phi_radial(r)?)
}

/// R_ε(x) = ε^{-d} R(x/ε).
pub fn kernel_r_eps(spec: &KernelSpec, eps: f64, x: &[f64]) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("mollifier::kernel_R_eps", format!("eps = {eps} must be positive")));
    }
    Ok(eps.powi(-(spec.dim as i32)) * spec.kernel_r_radial(norm(x) / eps))
}

pub fn kernel_r(spec: &KernelSpec, x: &[f64]) -> f64 {
    spec.kernel_r(x)
}

/// G_t(x) = (2πt)^{-d/2} exp(−|x|²/2t).
pub fn heat_kernel(d: usize, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("mollifier::heat_kernel", format!("t = {t} must be positive")));
    }
    Ok(heat_kernel_r2(d, t, norm2(x)))
}

#[inline]
pub fn heat_kernel_r2(d: usize, t: f64, r2: f64) -> f64 {
    (2.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
}

/// χ_d with 𝒢⁰(z) = χ_d/|z|^{d-2}.
pub fn chi(d: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let t = TABLE.get_or_init(|| {
        (0..=64)
            .map(|d| {
                if d < 3 {
                    f64::NAN
                } else {
                    let h = d as f64 / 2.0;
                    statrs::function::gamma::gamma(h - 1.0) / (2.0 * std::f64::consts::PI.powf(h))
                }
            })
            .collect()
    });
    t.get(d).copied().unwrap_or_else(|| {
        let h = d as f64 / 2.0;
        statrs::function::gamma::gamma(h - 1.0) / (2.0 * std::f64::consts::PI.powf(h))
    })
}

/// Yukawa potential 𝒢⁰(z) = ∫₀^∞ G_t(z) dt.
pub fn yukawa(d: usize, z: &[f64]) -> Result<f64> {
    const OP: &str = "mollifier::yukawa";
    if d < 3 {
        return Err(invalid(OP, format!("dimension {d} < 3")));
    }
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::Singularity { op: OP, msg: "z = 0".into() });
    }
    Ok(yukawa_radial(d, r))
}

#[inline]
pub fn yukawa_radial(d: usize, r: f64) -> f64 {
    chi(d) / r.powi(d as i32 - 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bump() -> &'static KernelSpec {
        static K: OnceLock<KernelSpec> = OnceLock::new();
        K.get_or_init(KernelSpec::default_bump)
    }

    // scipy adaptive quadrature on the normalized bump, d=3, r_φ=1
    const PHI0: f64 = 0.8340256392375336;
    const R_AT: [(f64, f64); 6] = [
        (0.0, 0.49395046820666716),
        (0.25, 0.43720550739584263),
        (0.5, 0.3116207137303464),
        (1.0, 0.07671329231237399),
        (1.5, 0.0018635334099411647),
        (1.9, 1.5600403022389809e-12),
    ];

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn bump_value_at_origin() {
        let k = KernelSpec::default_bump();
        assert!((k.phi(&[0.0; 3]).unwrap() - PHI0).abs() < 1e-12);
        assert!((phi_eps(&k, 0.5, &[0.0; 3]).unwrap() - 8.0 * PHI0).abs() < 1e-11);
        assert_eq!(k.phi(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(phi_eps(&k, 1.0, &[0.6, 0.9, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn phi_integrates_to_one() {
        for d in [3usize, 4, 5] {
            let k = KernelSpec::new(d, Profile::Bump, 1.3).unwrap();
            let a = sphere_area(d);
            let v = simpson(|r| a * r.powi(d as i32 - 1) * k.phi_radial(r).unwrap(), 0.0, 1.3, 20000);
            assert!((v - 1.0).abs() < 1e-6, "d={d}: {v}");
        }
    }

    #[test]
    fn r_table_matches_reference() {
        let k = KernelSpec::default_bump();
        for (s, want) in R_AT {
            let got = k.kernel_r_radial(s);
            assert!((got - want).abs() < 1e-9 + 1e-7 * want, "R({s}) = {got}, want {want}");
        }
        assert_eq!(k.kernel_r(&[2.0, 0.0, 0.0]), 0.0);
        assert_eq!(k.kernel_r(&[1.5, 1.5, 0.0]), 0.0);
    }

    #[test]
    fn r_at_zero_is_phi_norm() {
        let k = KernelSpec::default_bump();
        let v = simpson(|r| 4.0 * std::f64::consts::PI * r * r * k.phi_radial(r).unwrap().powi(2), 0.0, 1.0, 20000);
        assert!((k.r0() - v).abs() < 1e-9);
    }

    #[test]
    fn r_integrates_to_one() {
        for d in [3usize, 4] {
            let k = KernelSpec::new(d, Profile::Bump, 1.0).unwrap();
            let a = sphere_area(d);
            let h = k.table_step();
            // Simpson on the table nodes checks the tabulated values
            let nodes = simpson(|s| a * s.powi(d as i32 - 1) * k.kernel_r_radial(s), 0.0, 2.0, 1024);
            assert!((nodes - 1.0).abs() < 1e-8, "d={d}: {nodes}");
            // the linear interpolant carries an O(h²) bias
            let interp = simpson(|s| a * s.powi(d as i32 - 1) * k.kernel_r_radial(s), 0.0, 2.0, 16384);
            assert!((interp - 1.0).abs() < 2.0 * h * h * 10.0, "d={d}: {interp}");
            assert!((k.r_integral() - 1.0).abs() < 2.0 * h * h * 10.0);
        }
    }

    #[test]
    fn tables_monotone() {
        let k = KernelSpec::default_bump();
        let t = k.radial_table();
        for w in t.windows(2) {
            assert!(w[1].2 <= w[0].2 + 1e-15);
            if w[1].0 <= 1.0 {
                assert!(w[1].1 <= w[0].1);
            }
        }
    }

    #[test]
    fn direct_r_mode() {
        let k = KernelSpec::new(3, Profile::DirectRIndicator, 1.0).unwrap();
        assert_eq!(k.kernel_r(&[0.5, 0.0, 0.0]), 1.0);
        assert_eq!(k.kernel_r(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(k.kernel_r(&[1.01, 0.0, 0.0]), 0.0);
        assert_eq!(k.r0(), 1.0);
        assert!(matches!(phi_eps(&k, 1.0, &[0.0; 3]), Err(Error::UnsupportedMode { .. })));
        let vol = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((k.r_integral() - vol).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_values() {
        let g0 = heat_kernel(3, 1.0, &[0.0; 3]).unwrap();
        assert!((g0 - (2.0 * std::f64::consts::PI).powf(-1.5)).abs() < 1e-15);
        let t = 0.7;
        let r = (2.0 * t * 2f64.ln()).sqrt();
        let g = heat_kernel(3, t, &[r, 0.0, 0.0]).unwrap();
        assert!((g - heat_kernel(3, t, &[0.0; 3]).unwrap() / 2.0).abs() < 1e-14);
        assert!(heat_kernel(3, 0.0, &[0.0; 3]).is_err());
        for t in [0.1f64, 1.0, 7.5] {
            let m = 12.0 * t.sqrt();
            let v = simpson(|r| 4.0 * std::f64::consts::PI * r * r * heat_kernel_r2(3, t, r * r), 0.0, m, 4000);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        // ∫ G_s(x−y) G_t(y) dy in d=3 via cylindrical coordinates around the x axis
        for &(s, t, x) in &[(0.5, 1.0, 0.3), (1.0, 2.0, 1.5), (0.2, 0.3, 0.8)] {
            let l = 10.0 * (s + t as f64).sqrt() + x;
            let v = simpson(
                |y1| {
                    simpson(
                        |rho| {
                            let a = (x - y1) * (x - y1) + rho * rho;
                            let b = y1 * y1 + rho * rho;
                            2.0 * std::f64::consts::PI * rho * heat_kernel_r2(3, s, a) * heat_kernel_r2(3, t, b)
                        },
                        0.0,
                        l,
                        400,
                    )
                },
                -l,
                l,
                800,
            );
            let want = heat_kernel_r2(3, s + t, x * x);
            assert!((v - want).abs() < 1e-4 * want, "{v} vs {want}");
        }
    }

    #[test]
    fn yukawa_matches_time_integral() {
        // ∫₀^1 G_t(z) dt directly, ∫₁^∞ with t = 1/w²
        for d in [3usize, 4, 5] {
            let head = simpson(|t| if t > 0.0 { heat_kernel_r2(d, t, 1.0) } else { 0.0 }, 0.0, 1.0, 20000);
            let tail = simpson(
                |w| 2.0 * (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * w.powi(d as i32 - 3) * (-w * w / 2.0).exp(),
                0.0,
                1.0,
                20000,
            );
            let q = head + tail;
            assert!((yukawa(d, &[1.0, 0.0, 0.0, 0.0, 0.0][..d]).unwrap() - q).abs() < 1e-10 * q, "d={d}");
        }
        assert!((chi(3) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let a = yukawa(3, &[1.0, 0.0, 0.0]).unwrap();
        let b = yukawa(3, &[0.0, 2.0, 0.0]).unwrap();
        assert!((a / b - 2.0).abs() < 1e-14);
        let a = yukawa(4, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = yukawa(4, &[0.0, 0.0, 3.0, 0.0]).unwrap();
        assert!((a / b - 9.0).abs() < 1e-12);
        assert!(matches!(yukawa(3, &[0.0; 3]), Err(Error::Singularity { .. })));
        for r in [0.5, 1.0, 2.0, 5.0] {
            assert!((yukawa_radial(3, r) * r - chi(3)).abs() < 1e-8);
        }
    }

    #[test]
    fn phi_q_table_close_to_exact() {
        let k = KernelSpec::default_bump();
        for i in 0..200 {
            let r = i as f64 / 200.0;
            let e = k.phi_radial(r).unwrap();
            assert!((k.phi_of_r2(r * r) - e).abs() < 1e-6, "r={r}");
        }
    }

    #[test]
    fn radius_sampler_inverts_cdf() {
        let k = KernelSpec::default_bump();
        assert_eq!(k.sample_r_radius(0.0), 0.0);
        assert!(k.sample_r_radius(0.999999) < 2.0);
        let med = k.sample_r_radius(0.5);
        let a = simpson(|s| 4.0 * std::f64::consts::PI * s * s * k.kernel_r_radial(s), 0.0, med, 4000);
        assert!((a - 0.5).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn eps_scaling(eps in 0.2f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let k = bump();
            let p = [x, y, 0.3];
            let want = eps.powi(-3) * k.phi(&[x / eps, y / eps, 0.3 / eps]).unwrap();
            prop_assert!((phi_eps(&k, eps, &p).unwrap() - want).abs() < 1e-12);
            let rw = eps.powi(-3) * k.kernel_r(&[x / eps, y / eps, 0.3 / eps]);
            prop_assert!((kernel_r_eps(&k, eps, &p).unwrap() - rw).abs() < 1e-12);
            prop_assert!(phi_eps(&k, eps, &p).unwrap() >= 0.0);
        }

        #[test]
        fn phi_eps_mass_is_one(eps in 0.3f64..2.0) {
            let k = bump();
            let v = simpson(|r| 4.0 * std::f64::consts::PI * r * r * phi_eps(&k, eps, &[r, 0.0, 0.0]).unwrap(), 0.0, eps, 4000);
            prop_assert!((v - 1.0).abs() < 1e-6);
        }

        #[test]
        fn r_symmetric_decreasing(a in 0.0f64..2.5, b in 0.0f64..2.5) {
            let k = bump();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.kernel_r_radial(hi) <= k.kernel_r_radial(lo));
            prop_assert_eq!(k.kernel_r(&[a, 0.0, 0.0]), k.kernel_r(&[0.0, 0.0, -a]));
        }
    }
}
