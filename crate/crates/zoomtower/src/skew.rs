//! Viana-type skew products `(s, x) -> (d s mod 1, a0 + alpha sin(2 pi s) - x^2)`.
//!
//! Two-dimensional, so only orbit statistics are offered: the expansion
//! channel `log ||Df^-1||^-1` and the distance to the critical line `x = 0`.

use serde::{Deserialize, Serialize};

use crate::dynamics::truncate;
use crate::error::{Error, Result};

/// Parameter where `0` is pre-periodic for `x -> a - x^2` (it lands on the
/// fixed point after three steps).
pub const MISIUREWICZ: f64 = 1.543_689_012_692_076_4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewProduct {
    /// Expansion of the base circle map.
    pub d: u32,
    pub a0: f64,
    pub alpha: f64,
}

impl Default for SkewProduct {
    fn default() -> Self {
        Self { d: 16, a0: MISIUREWICZ, alpha: 0.01 }
    }
}

impl SkewProduct {
    pub fn apply(&self, (s, x): (f64, f64)) -> (f64, f64) {
        let t = self.d as f64 * s;
        let fib = self.a0 + self.alpha * (std::f64::consts::TAU * s).sin() - x * x;
        (t - t.floor(), fib)
    }

    /// `||Df(s, x)^-1||^-1`: the smallest singular value of the Jacobian.
    pub fn conorm(&self, (s, x): (f64, f64)) -> f64 {
        let a = self.d as f64;
        let c = self.alpha * std::f64::consts::TAU * (std::f64::consts::TAU * s).cos();
        let e = -2.0 * x;
        // singular values of [[a, 0], [c, e]]
        let tr = a * a + c * c + e * e;
        let det = (a * e).abs();
        let disc = (tr * tr - 4.0 * det * det).max(0.0).sqrt();
        // the small root via the product, to avoid cancellation
        let big = ((tr + disc) / 2.0).sqrt();
        if big == 0.0 {
            0.0
        } else {
            det / big
        }
    }

    /// Half-width `b = a_max` of the forward-invariant fibre interval `[-b, b]`.
    pub fn fibre_bound(&self) -> f64 {
        self.a0 + self.alpha.abs()
    }
}

/// Orbit channels of the skew product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewOrbit {
    pub points: Vec<(f64, f64)>,
    /// `log ||Df(f^j z)^-1||^-1`.
    pub log_conorm: Vec<f64>,
    /// `|x_j|`, the distance to the critical line.
    pub crit_dist: Vec<f64>,
}

impl SkewOrbit {
    /// `(1/n) sum_{j<n} log ||Df^-1||^-1`.
    pub fn expansion(&self) -> f64 {
        self.log_conorm.iter().sum::<f64>() / self.log_conorm.len().max(1) as f64
    }

    /// `(1/n) sum_{j<n} -log dist_delta(f^j z, C)`.
    pub fn slow_approximation(&self, delta: f64) -> f64 {
        let n = self.crit_dist.len().max(1) as f64;
        self.crit_dist.iter().map(|&d| -truncate(d, delta).ln()).sum::<f64>() / n
    }
}

pub fn iterate_skew(map: &SkewProduct, z: (f64, f64), n: usize) -> Result<SkewOrbit> {
    let mut points = Vec::with_capacity(n + 1);
    let mut log_conorm = Vec::with_capacity(n);
    let mut crit_dist = Vec::with_capacity(n);
    let mut p = z;
    points.push(p);
    for j in 0..n {
        let m = map.conorm(p);
        if m == 0.0 {
            return Err(Error::UndefinedDerivative(j));
        }
        log_conorm.push(m.ln());
        crit_dist.push(p.1.abs());
        p = map.apply(p);
        if !p.1.is_finite() || p.1.abs() > 2.0 * map.fibre_bound() {
            return Err(Error::InvalidArgument(format!("orbit left the fibre interval at step {}", j + 1)));
        }
        points.push(p);
    }
    Ok(SkewOrbit { points, log_conorm, crit_dist })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conorm_of_diagonal_jacobian() {
        let m = SkewProduct { d: 16, a0: 1.5, alpha: 0.0 };
        assert!((m.conorm((0.3, 0.25)) - 0.5).abs() < 1e-15);
        assert!((m.conorm((0.3, 10.0)) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn misiurewicz_orbit_is_preperiodic() {
        let a = MISIUREWICZ;
        let q = |x: f64| a - x * x;
        let p = q(q(q(0.0)));
        assert!((q(p) - p).abs() < 1e-12);
    }

    #[test]
    fn orbit_stays_bounded() {
        let o = iterate_skew(&SkewProduct::default(), (0.1234, 0.3), 20_000).unwrap();
        assert!(o.points.iter().all(|p| p.1.abs() <= 2.0));
        assert!(o.expansion().is_finite());
    }
}
