//! Quadrature helpers shared by the deterministic routines.

use gauss_quad::{GaussHermite, GaussLegendre};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Gauss–Legendre (node, weight) pairs on [−1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Vec<(f64, f64)>>>> = OnceLock::new();
    let m = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut g = m.lock().unwrap();
    g.entry(n)
        .or_insert_with(|| {
            GaussLegendre::new(n)
                .expect("Gauss-Legendre degree >= 2")
                .as_node_weight_pairs()
                .to_vec()
        })
        .clone()
}

/// Gauss–Hermite pairs for the weight e^{−x²}.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    GaussHermite::new(n)
        .expect("Gauss-Hermite degree >= 2")
        .as_node_weight_pairs()
        .to_vec()
}

/// Surface area of the unit sphere S^{d−1} in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// ∫_a^∞ G_u(z) du with |z| = r, a > 0.
///
/// With u = a/s² the integrand becomes 2a(2πa)^{−d/2} s^{d−3} exp(−r²s²/2a) on (0, 1].
pub fn heat_time_tail(d: usize, r: f64, a: f64) -> f64 {
    let df = d as f64;
    let pre = 2.0 * a * (2.0 * std::f64::consts::PI * a).powf(-df / 2.0);
    let k = r * r / (2.0 * a);
    let rule = gauss_legendre(64);
    // split the unit interval so that the Gaussian in s is resolved for large r²/a
    let panels = 1 + (k.sqrt() * 2.0).ceil() as usize;
    let h = 1.0 / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = p as f64 * h;
        for &(t, w) in &rule {
            let s = lo + 0.5 * h * (t + 1.0);
            acc += 0.5 * h * w * s.powf(df - 3.0) * (-k * s * s).exp();
        }
    }
    pre * acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        assert!((sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn heat_tail_closed_form_at_origin() {
        for d in [3usize, 4, 6] {
            let df = d as f64;
            for a in [0.5f64, 2.0, 9.0] {
                let want = (2.0 * std::f64::consts::PI).powf(-df / 2.0) * a.powf(1.0 - df / 2.0) / (df / 2.0 - 1.0);
                assert!((heat_time_tail(d, 0.0, a) - want).abs() < 1e-13 * want.max(1.0));
            }
        }
    }

    #[test]
    fn heat_tail_against_reference() {
        // 30-digit adaptive quadrature of ∫_a^∞ (2πu)^{-3/2} e^{-r²/2u} du
        let cases = [
            (0.5, 2.0, 0.087957421804029230876),
            (1.0, 2.0, 0.082840128432673896504),
            (3.0, 0.5, 0.053050475760034216945),
            (10.0, 2.0, 0.015915494309165063248),
        ];
        for (r, a, want) in cases {
            let got = heat_time_tail(3, r, a);
            assert!((got - want).abs() < 1e-13, "{r} {a}: {got} {want}");
        }
    }
}
