//! Moments, Kolmogorov–Smirnov test, trend checks and RNG streams.

use crate::error::{invalid, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal quantile, Wichura's AS241 (PPND16), relative accuracy about 1e-16.
#[inline]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r + 45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r + 133.14166789178437745) * r + 3.387132872796366608;
        let den = ((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r + 21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r + 42.313330701600911252) * r + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r + 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r + 4.6303378461565452959) * r + 1.42343711074968357734;
        let den = ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r + 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r + 2.05319162663775882187) * r + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r + 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r + 5.4637849111641143699) * r + 6.6579046435011037772;
        let den = ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r + 0.59983220655588793769) * r + 1.0;
        num / den
    };
    if q < 0.0 { -v } else { v }
}

/// Named substream: a seed plus a path of integers (replica, path, purpose, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub path: Vec<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, path: Vec::new() }
    }

    pub fn child(&self, i: u64) -> Self {
        let mut path = self.path.clone();
        path.push(i);
        RngStream { seed: self.seed, path }
    }

    /// 64-bit digest of (seed, path); also used to derive noise seeds.
    pub fn key(&self) -> u64 {
        let mut h = splitmix64(self.seed ^ 0x5EED_0F_F00D);
        for (depth, &p) in self.path.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut h = self.key();
        for chunk in seed.chunks_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Stream purposes, so that unrelated consumers of one seed never collide.
pub mod purpose {
    pub const PATHS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const ENDPOINTS: u64 = 3;
    pub const SPATIAL: u64 = 4;
    pub const REPLICA: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub se_skew: f64,
    pub se_kurtosis: f64,
}

/// Unbiased mean and variance, sample skewness and excess kurtosis with their usual standard errors.
pub fn moments(samples: &[f64]) -> Result<Moments> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("stats::moments", format!("need n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let var = m2 * nf / (nf - 1.0);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let se_mean = (var / nf).sqrt();
    let se_var = if var > 0.0 {
        ((m4 - m2 * m2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0).sqrt()
    } else {
        0.0
    };
    let se_skew = if n > 3 {
        (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt()
    } else {
        f64::NAN
    };
    let se_kurtosis = if n > 3 {
        2.0 * se_skew * ((nf * nf - 1.0) / ((nf - 3.0) * (nf + 5.0))).sqrt()
    } else {
        f64::NAN
    };
    Ok(Moments { n, mean, var, skew, excess_kurtosis: kurt, se_mean, se_var, se_skew, se_kurtosis })
}

pub fn covariance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("stats::covariance", "need equal lengths >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    Ok(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0))
}

/// Sample correlation and its large-sample standard error (1 − r²)/√n.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let c = covariance(a, b)?;
    let va = covariance(a, a)?;
    let vb = covariance(b, b)?;
    if va <= 0.0 || vb <= 0.0 {
        return Err(invalid("stats::correlation", "degenerate sample"));
    }
    let r = c / (va * vb).sqrt();
    Ok((r, (1.0 - r * r) / (a.len() as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub reference_mean: f64,
    pub reference_variance: f64,
}

/// Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-λ form via the Jacobi theta identity; the alternating series converges slowly here
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut s = 0.0;
        let mut k = 1.0f64;
        loop {
            let term = y.powf(k * k);
            s += term;
            if term < 1e-17 {
                break;
            }
            k += 2.0;
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test against N(mean, variance), asymptotic p-value.
pub fn ks_test_normal(samples: &[f64], mean: f64, variance: f64) -> Result<KsResult> {
    const OP: &str = "stats::ks_test_normal";
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidReference { op: OP, msg: format!("variance {variance} must be positive") });
    }
    let n = samples.len();
    if n < 50 {
        return Err(invalid(OP, format!("n = {n} < 50")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid(OP, "non-finite sample"));
    }
    let law = Normal::new(mean, variance.sqrt()).map_err(|e| Error::InvalidReference { op: OP, msg: e.to_string() })?;
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = law.cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult { statistic: d, p_value: p, n, reference_mean: mean, reference_variance: variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub decreasing: bool,
    /// Worst (largest) consecutive difference divided by its combined standard error.
    pub margin: f64,
}

/// True iff every consecutive difference is below +2 combined standard errors.
pub fn trend_decreasing(values: &[(f64, f64)]) -> Result<Trend> {
    trend_decreasing_tol(values, 0.0)
}

/// As [`trend_decreasing`], with an absolute tolerance added to each bound for deterministic inputs.
pub fn trend_decreasing_tol(values: &[(f64, f64)], atol: f64) -> Result<Trend> {
    if values.len() < 3 {
        return Err(invalid("stats::trend_decreasing", format!("need >= 3 values, got {}", values.len())));
    }
    let mut ok = true;
    let mut margin = f64::NEG_INFINITY;
    for w in values.windows(2) {
        let diff = w[1].0 - w[0].0;
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        if !(diff < 2.0 * se + atol) {
            ok = false;
        }
        let m = if se > 0.0 {
            diff / se
        } else if diff > 0.0 {
            f64::INFINITY
        } else if diff < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        margin = margin.max(m);
    }
    Ok(Trend { decreasing: ok, margin })
}

/// Noise variance of a two-level estimator: the spread of the per-replica estimates minus the
/// mean inner variance of those estimates. Returns (value, standard error).
pub fn two_level_variance(estimates: &[f64], inner_var_of_mean: &[f64]) -> Result<(f64, f64)> {
    let n = estimates.len();
    if n < 3 || inner_var_of_mean.len() != n {
        return Err(invalid("stats::two_level_variance", "need >= 3 paired replicas"));
    }
    let nf = n as f64;
    let m = estimates.iter().sum::<f64>() / nf;
    let v: Vec<f64> = estimates
        .iter()
        .zip(inner_var_of_mean)
        .map(|(z, s2)| (z - m).powi(2) * nf / (nf - 1.0) - s2)
        .collect();
    let mean_v = v.iter().sum::<f64>() / nf;
    let var_v = v.iter().map(|x| (x - mean_v).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean_v, (var_v / nf).sqrt()))
}

/// |a − b| in units of the combined standard error.
pub fn z_gap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    let d = (a.0 - b.0).abs();
    if se > 0.0 {
        d / se
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub params: serde_json::Value,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn as241_matches_statrs() {
        let law = Normal::new(0.0, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..200_000u64 {
            let u = ((splitmix64(i) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            let (a, b) = (inverse_normal_cdf(u), law.inverse_cdf(u));
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        for u in [1e-300, 1e-20, 0.075, 0.5, 0.925, 1.0 - 1e-12] {
            let (a, b) = (inverse_normal_cdf(u), law.inverse_cdf(u));
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        assert!(worst < 1e-14, "{worst}");
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn moments_small_cases() {
        let m = moments(&[3.0; 10]).unwrap();
        assert_eq!((m.var, m.se_mean, m.se_var), (0.0, 0.0, 0.0));
        let m = moments(&[-1.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.var, 2.0);
        assert!(moments(&[1.0]).is_err());
    }

    #[test]
    fn normal_draws_have_zero_excess_kurtosis() {
        let mut rng = RngStream::new(11).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = moments(&xs).unwrap();
        assert!(m.excess_kurtosis.abs() < 3.0 * m.se_kurtosis);
        assert!(m.skew.abs() < 3.0 * m.se_skew);
        assert!((m.var - 1.0).abs() < 3.0 * m.se_var);
    }

    #[test]
    fn kolmogorov_q_branches_agree() {
        // both series are valid near the switch point
        for &l in &[0.9, 1.0, 1.18, 1.3] {
            let y = (-std::f64::consts::PI.powi(2) / (8.0 * l * l)).exp();
            let theta: f64 = (0..50).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum::<f64>();
            let small = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * theta;
            let large: f64 = 2.0 * (1..100).map(|k| (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * (k * k) as f64 * l * l).exp()).sum::<f64>();
            assert!((small - large).abs() < 1e-12);
            assert!((kolmogorov_q(l) - large).abs() < 1e-12);
        }
        // classical critical values
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_null_calibration() {
        let mut passes = 0;
        for seed in 0..100u64 {
            let mut rng = RngStream::new(1000 + seed).rng();
            let xs: Vec<f64> = (0..10_000).map(|_| 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            if ks_test_normal(&xs, 2.0, 0.25).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 98, "{passes}");
    }

    #[test]
    fn ks_detects_constant_and_shift() {
        let r = ks_test_normal(&vec![0.0; 200], 0.0, 1.0).unwrap();
        assert!(r.statistic >= 0.5 && r.p_value < 1e-10);
        let mut rng = RngStream::new(5).rng();
        let xs: Vec<f64> = (0..1000).map(|_| 3.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = ks_test_normal(&xs, 0.0, 1.0).unwrap();
        // direct CDF distance: most of the shifted mass lies beyond Φ(3)
        let law = Normal::new(0.0, 1.0).unwrap();
        let frac_below = xs.iter().filter(|&&x| x < 1.5).count() as f64 / 1000.0;
        assert!(r.statistic >= law.cdf(1.5) - frac_below - 1e-12);
        assert!(r.p_value < 1e-6);
        assert!(matches!(ks_test_normal(&xs, 0.0, 0.0), Err(Error::InvalidReference { .. })));
        assert!(ks_test_normal(&xs[..20], 0.0, 1.0).is_err());
    }

    #[test]
    fn trend_contract() {
        assert!(trend_decreasing(&[(3.0, 0.0), (2.0, 0.0), (1.0, 0.0)]).unwrap().decreasing);
        assert!(!trend_decreasing(&[(1.0, 0.1), (2.0, 0.1), (3.0, 0.1)]).unwrap().decreasing);
        assert!(trend_decreasing(&[(1.0, 0.1), (1.05, 0.1), (1.02, 0.1)]).unwrap().decreasing);
        assert!(trend_decreasing(&[(1.0, 0.1), (1.0, 0.1)]).is_err());
        assert!(trend_decreasing_tol(&[(1e-15, 0.0), (2e-15, 0.0), (1e-15, 0.0)], 1e-12).unwrap().decreasing);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let base = RngStream::new(42);
        let a: Vec<u64> = (0..8).map(|_| base.child(1).rng().gen()).collect();
        let b: Vec<u64> = (0..8).map(|_| base.child(1).rng().gen()).collect();
        assert_eq!(a, b);
        let n = 20_000;
        let mut r1 = base.child(1).rng();
        let mut r2 = base.child(2).rng();
        let x: Vec<f64> = (0..n).map(|_| r1.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| r2.gen::<f64>()).collect();
        let (c, _) = correlation(&x, &y).unwrap();
        assert!(c.abs() < 3.0 / (n as f64).sqrt());
        assert_ne!(base.child(1).child(2).key(), base.child(2).child(1).key());
        assert_ne!(RngStream::new(1).key(), RngStream::new(2).key());
    }

    #[test]
    fn two_level_variance_removes_inner_noise() {
        // Z_r = 1 + s·g_r exactly, inner error e_r with known variance v
        let mut rng = RngStream::new(9).rng();
        let (s, v) = (0.3f64, 0.04f64);
        let n = 20_000;
        let z: Vec<f64> = (0..n)
            .map(|_| 1.0 + s * rng.sample::<f64, _>(StandardNormal) + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (est, se) = two_level_variance(&z, &vec![v; n]).unwrap();
        assert!((est - s * s).abs() < 3.0 * se, "{est} ± {se}");
    }

    proptest! {
        #[test]
        fn ks_p_monotone_in_statistic(a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(kolmogorov_q(10.0 * hi) <= kolmogorov_q(10.0 * lo) + 1e-15);
        }

        #[test]
        fn ks_statistic_in_unit_interval(xs in proptest::collection::vec(-5.0f64..5.0, 50..200), m in -1.0f64..1.0, v in 0.1f64..4.0) {
            let r = ks_test_normal(&xs, m, v).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.statistic));
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn moments_shift_invariant(xs in proptest::collection::vec(-10.0f64..10.0, 2..100), c in -100.0f64..100.0) {
            let a = moments(&xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = moments(&ys).unwrap();
            prop_assert!((a.var - b.var).abs() <= 1e-8 * (1.0 + a.var));
            prop_assert!(a.var >= 0.0);
        }
    }
}
