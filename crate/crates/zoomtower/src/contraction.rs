//! Zooming contractions: sequences `alpha_n` of maps `r -> alpha_n(r)` with
//! `alpha_n(r) < r`, `alpha_n . alpha_m <= alpha_{n+m}` and a summable supremum.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZoomingContraction<T> {
    /// `e^{-lambda n / 8} r`.
    Exponential { lambda: T },
    /// `c^n r` with `0 < c < 1`.
    Power { c: T },
    /// `r / (1 + s n sqrt(r))^2`; `s = 1` is the shift-metric family.
    Polynomial { scale: T },
    /// `factors[n-1] * r` for `n <= factors.len()`, then geometric with `ratio`.
    Tabulated { factors: Vec<T>, ratio: T },
}

impl<T: Real> ZoomingContraction<T> {
    pub fn power(c: T) -> Self {
        assert!(c > T::zero() && c < T::one(), "power contraction needs 0 < c < 1");
        Self::Power { c }
    }

    pub fn exponential(lambda: T) -> Self {
        assert!(lambda > T::zero(), "exponential contraction needs lambda > 0");
        Self::Exponential { lambda }
    }

    pub fn polynomial() -> Self {
        Self::Polynomial { scale: T::one() }
    }

    /// Backward contraction guaranteed at a hyperbolic time with base `sigma`:
    /// `sigma^{n/2} r`.
    pub fn hyperbolic(sigma: T) -> Self {
        Self::power(sigma.sqrt())
    }

    pub fn tabulated(factors: Vec<T>, ratio: T) -> Self {
        assert!(!factors.is_empty(), "tabulated contraction needs at least one factor");
        assert!(ratio > T::zero() && ratio < T::one(), "tail ratio must lie in (0, 1)");
        Self::Tabulated { factors, ratio }
    }

    /// `alpha_n(r)`; `alpha_0` is the identity.
    pub fn eval(&self, n: usize, r: T) -> T {
        if n == 0 {
            return r;
        }
        match self {
            Self::Exponential { lambda } => (-*lambda * T::from_usize_lossy(n) / T::lit(8.0)).exp() * r,
            Self::Power { c } => c.powi(n as i32) * r,
            Self::Polynomial { scale } => {
                let d = T::one() + *scale * T::from_usize_lossy(n) * r.sqrt();
                r / (d * d)
            }
            Self::Tabulated { factors, ratio } => {
                let k = factors.len();
                if n <= k {
                    factors[n - 1] * r
                } else {
                    factors[k - 1] * ratio.powi((n - k) as i32) * r
                }
            }
        }
    }

    /// `sum_{n=1}^{N} alpha_n(r)`.
    pub fn partial_sum(&self, n_max: usize, r: T) -> T {
        let mut s = crate::scalar::KahanSum::new();
        for n in 1..=n_max {
            s.add(self.eval(n, r));
        }
        s.value()
    }

    /// Closed-form upper bound for `sum_{n > N} alpha_n(r)`.
    pub fn tail_bound(&self, n_max: usize, r: T) -> T {
        let geometric = |q: T, first: T| first / (T::one() - q);
        match self {
            Self::Exponential { lambda } => {
                let q = (-*lambda / T::lit(8.0)).exp();
                geometric(q, self.eval(n_max + 1, r))
            }
            Self::Power { c } => geometric(*c, self.eval(n_max + 1, r)),
            Self::Polynomial { scale } => {
                // integral comparison: sum_{n>N} <= int_N^inf r/(1+s x sqrt r)^2 dx
                let sr = r.sqrt();
                if sr == T::zero() {
                    return T::zero();
                }
                sr / (*scale * (T::one() + *scale * T::from_usize_lossy(n_max) * sr))
            }
            Self::Tabulated { factors, ratio } => {
                let k = factors.len();
                let mut s = T::zero();
                for n in (n_max + 1)..=k {
                    s += factors[n - 1] * r;
                }
                let start = (n_max + 1).max(k + 1);
                s + geometric(*ratio, self.eval(start, r))
            }
        }
    }

    /// Upper bound for the full series `sum_{n >= 1} alpha_n(r)`.
    pub fn total_bound(&self, r: T) -> T {
        // a short explicit prefix keeps the polynomial bound reasonably tight
        let n = 64;
        self.partial_sum(n, r) + self.tail_bound(n, r)
    }

    /// Contraction for the iterate `f^ell`: `k -> alpha_{ell k}`.
    pub fn every(&self, ell: usize) -> Self {
        assert!(ell >= 1);
        let l = T::from_usize_lossy(ell);
        match self {
            Self::Exponential { lambda } => Self::Exponential { lambda: *lambda * l },
            Self::Power { c } => Self::Power { c: c.powi(ell as i32) },
            Self::Polynomial { scale } => Self::Polynomial { scale: *scale * l },
            Self::Tabulated { .. } => {
                let factors = (1..=64).map(|k| self.eval(ell * k, T::one())).collect();
                let ratio = match self {
                    Self::Tabulated { ratio, .. } => ratio.powi(ell as i32),
                    _ => unreachable!(),
                };
                Self::Tabulated { factors, ratio }
            }
        }
    }

    /// Whether this contraction is linear in `r` (`alpha_n(r) = a_n r`).
    pub fn is_linear(&self) -> bool {
        !matches!(self, Self::Polynomial { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Self::Exponential { lambda } => format!("exponential({lambda})"),
            Self::Power { c } => format!("power({c})"),
            Self::Polynomial { scale } if *scale == T::one() => "polynomial".into(),
            Self::Polynomial { scale } => format!("polynomial(scale={scale})"),
            Self::Tabulated { factors, ratio } => format!("tabulated({} factors, ratio {ratio})", factors.len()),
        }
    }
}

/// Checks the three axioms on the grid `r = k/grid`, `n, m = 1..n_max`.
/// Returns the worst violation found (0 when all hold).
pub fn axiom_violation<T: Real>(alpha: &ZoomingContraction<T>, grid: usize, n_max: usize) -> T {
    let mut worst = T::zero();
    for k in 1..=grid {
        let r = T::from_usize_lossy(k) / T::from_usize_lossy(grid);
        for n in 1..=n_max {
            let a = alpha.eval(n, r);
            if a >= r {
                worst = worst.max(a - r + T::epsilon());
            }
            for m in 1..=n_max.saturating_sub(n) {
                let lhs = alpha.eval(n, alpha.eval(m, r));
                let rhs = alpha.eval(n + m, r);
                let slack = T::lit(8.0) * T::epsilon() * rhs;
                if lhs > rhs + slack {
                    worst = worst.max(lhs - rhs);
                }
            }
        }
    }
    worst
}
