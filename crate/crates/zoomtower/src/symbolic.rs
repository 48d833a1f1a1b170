//! One-sided shifts on finite alphabets with the standard and polynomial metrics.

use serde::{Deserialize, Serialize};

use crate::scalar::Exact;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// `sum_n |x_n - y_n| / 2^n`.
    Standard,
    /// `phi(x, y)^{-2}` with `phi` the first index (from 1) where the words differ.
    Polynomial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicSystem {
    pub alphabet_size: u8,
    pub metric: MetricKind,
    pub word_cap: usize,
}

impl SymbolicSystem {
    pub fn new(alphabet_size: u8, metric: MetricKind, word_cap: usize) -> Self {
        assert!(alphabet_size >= 2, "alphabet needs at least two symbols");
        assert!(word_cap >= 2 && word_cap <= 60, "word_cap must lie in 2..=60");
        Self { alphabet_size, metric, word_cap }
    }

    pub fn full_shift(metric: MetricKind) -> Self {
        Self::new(2, metric, 48)
    }

    fn check(&self, w: &[u8]) {
        assert!(w.len() <= self.word_cap, "word longer than word_cap");
        debug_assert!(w.iter().all(|&s| s < self.alphabet_size));
    }
}

/// `min{n >= 1 : x_n != y_n}`, or `None` if the words agree.
pub fn first_difference(x: &[u8], y: &[u8]) -> Option<usize> {
    x.iter().zip(y).position(|(a, b)| a != b).map(|i| i + 1)
}

/// `sigma^j` on a finite word.
pub fn shift(w: &[u8], j: usize) -> &[u8] {
    &w[j.min(w.len())..]
}

pub fn symbolic_distance<E: Exact>(sys: &SymbolicSystem, x: &[u8], y: &[u8]) -> E {
    sys.check(x);
    sys.check(y);
    assert_eq!(x.len(), y.len(), "words must have equal length");
    match sys.metric {
        MetricKind::Polynomial => match first_difference(x, y) {
            None => E::zero(),
            Some(phi) => {
                let p = E::from_u64(phi as u64);
                E::one() / (p.clone() * p)
            }
        },
        MetricKind::Standard => {
            let mut s = E::zero();
            let mut scale = E::one();
            let two = E::from_u64(2);
            for (a, b) in x.iter().zip(y) {
                scale = scale / two.clone();
                let diff = (*a as i64 - *b as i64).unsigned_abs();
                if diff != 0 {
                    s = s + E::from_u64(diff) * scale.clone();
                }
            }
            s
        }
    }
}

/// Limit of `d(sigma x, sigma y) / d(x, y)` as `y -> x`.
///
/// Nearby words differ from `x` at one of the last three positions below
/// `word_cap`; the ratios are extrapolated to `h = 1/(phi - 1) = 0` with a
/// three-point Neville scheme, exact for both metrics.
pub fn conformal_derivative<E: Exact>(sys: &SymbolicSystem, x: &[u8]) -> E {
    assert!(x.len() >= 2, "conformal derivative needs a word of length >= 2");
    let cap = sys.word_cap;
    let mut base = x.to_vec();
    base.resize(cap, 0);
    let ratio_at = |phi: usize| -> (E, E) {
        let mut y = base.clone();
        y[phi - 1] = (y[phi - 1] + 1) % sys.alphabet_size;
        let num: E = symbolic_distance(sys, shift(&base, 1), shift(&y, 1));
        let den: E = symbolic_distance(sys, &base, &y);
        let h = E::one() / E::from_u64((phi - 1) as u64);
        (h, num / den)
    };
    let pts: Vec<(E, E)> = [cap, cap - 1, cap - 2].iter().map(|&p| ratio_at(p)).collect();
    neville_at_zero(&pts)
}

fn neville_at_zero<E: Exact>(pts: &[(E, E)]) -> E {
    let mut p: Vec<E> = pts.iter().map(|(_, v)| v.clone()).collect();
    let n = p.len();
    for k in 1..n {
        for i in 0..n - k {
            let (hi, hk) = (pts[i].0.clone(), pts[i + k].0.clone());
            // P_{i..i+k}(0) = (h_{i+k} P_{i..i+k-1} - h_i P_{i+1..i+k}) / (h_{i+k} - h_i)
            p[i] = (hk.clone() * p[i].clone() - hi.clone() * p[i + 1].clone()) / (hk - hi);
        }
    }
    p[0].clone()
}

/// Both sides of `d(sigma^j x, sigma^j y) = alpha_{n-j}(d(sigma^n x, sigma^n y))`
/// for the polynomial metric and `alpha_k(r) = r / (1 + k sqrt r)^2`.
///
/// Words must agree on their first `n` symbols.  Returns `None` when the
/// square root is not representable in `E`.
pub fn shift_identity_sides<E: Exact>(x: &[u8], y: &[u8], n: usize, j: usize) -> Option<(E, E)> {
    assert!(j <= n && n <= x.len() && x.len() == y.len());
    assert!(x[..n] == y[..n], "words must share a cylinder of length n");
    let sys = SymbolicSystem { alphabet_size: u8::MAX, metric: MetricKind::Polynomial, word_cap: x.len().max(2) };
    let lhs: E = symbolic_distance(&sys, shift(x, j), shift(y, j));
    let r: E = symbolic_distance(&sys, shift(x, n), shift(y, n));
    let root = r.sqrt_exact()?;
    let d = E::one() + E::from_u64((n - j) as u64) * root;
    let rhs = r / (d.clone() * d);
    Some((lhs, rhs))
}

/// Zooming times of a word for the polynomial metric: `n` is flagged when the
/// cylinder `C_n(x)` satisfies the backward contraction condition for every
/// pair inside it and `sigma^n` maps it onto the whole space (the unit ball).
pub fn cylinder_zooming_times(sys: &SymbolicSystem, x: &[u8], n_max: usize) -> Vec<bool> {
    use num_rational::Ratio;
    assert_eq!(sys.metric, MetricKind::Polynomial);
    let cap = sys.word_cap;
    let mut flags = vec![false; n_max + 1];
    for (n, flag) in flags.iter_mut().enumerate().skip(1) {
        if n >= cap {
            break;
        }
        // pairs in C_n(x) differ first at some phi in n+1..=cap; distances
        // depend on phi only, so one representative per phi is exhaustive
        let mut ok = true;
        for phi in (n + 1)..=cap {
            let mut a = x.to_vec();
            a.resize(cap, 0);
            let mut b = a.clone();
            b[phi - 1] = (b[phi - 1] + 1) % sys.alphabet_size;
            for j in 0..=n {
                match shift_identity_sides::<Ratio<i64>>(&a, &b, n, j) {
                    Some((l, r)) if l <= r => {}
                    _ => ok = false,
                }
            }
        }
        *flag = ok;
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    #[test]
    fn polynomial_distances() {
        let s = SymbolicSystem::full_shift(MetricKind::Polynomial);
        let d: Q = symbolic_distance(&s, &[0, 1, 1, 1], &[1, 0, 0, 0]);
        assert_eq!(d, Q::from_integer(1));
        let d: Q = symbolic_distance(&s, &[0, 1, 1, 0, 1], &[0, 1, 1, 1, 1]);
        assert_eq!(d, Q::new(1, 16));
        let d: Q = symbolic_distance(&s, &[0, 1], &[0, 1]);
        assert_eq!(d, Q::from_integer(0));
    }

    #[test]
    fn standard_distance_by_summation() {
        let s = SymbolicSystem::full_shift(MetricKind::Standard);
        let d: Q = symbolic_distance(&s, &[0, 1, 1, 0, 1, 0], &[0, 1, 1, 1, 0, 0]);
        assert_eq!(d, Q::new(1, 16) + Q::new(1, 32));
        assert!(d <= Q::new(1, 8));
    }

    #[test]
    fn conformal_derivatives() {
        let std = SymbolicSystem::full_shift(MetricKind::Standard);
        let pol = SymbolicSystem::new(2, MetricKind::Polynomial, 20);
        let w = [1u8, 0, 1, 1, 0];
        assert_eq!(conformal_derivative::<Q>(&std, &w), Q::from_integer(2));
        assert_eq!(conformal_derivative::<Q>(&pol, &w), Q::from_integer(1));
        assert!((conformal_derivative::<f64>(&pol, &w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_at_fixed_phi() {
        let s = SymbolicSystem::new(2, MetricKind::Polynomial, 20);
        let x = [0u8, 0, 0, 0, 0, 0];
        let y = [0u8, 0, 0, 0, 1, 0];
        let num: Q = symbolic_distance(&s, shift(&x, 1), shift(&y, 1));
        let den: Q = symbolic_distance(&s, &x, &y);
        assert_eq!(num / den, Q::new(25, 16));
    }

    #[test]
    fn cylinders_are_preballs() {
        let s = SymbolicSystem::new(2, MetricKind::Polynomial, 12);
        let flags = cylinder_zooming_times(&s, &[1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0], 11);
        assert!(flags[1..].iter().all(|&f| f));
    }
}
