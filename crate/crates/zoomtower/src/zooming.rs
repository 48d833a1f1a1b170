//! Hyperbolic and zooming times along orbits, their frequencies, and the
//! expansion / recurrence statistics that drive them.

use serde::{Deserialize, Serialize};

use crate::contraction::ZoomingContraction;
use crate::dynamics::{iterate, truncate, MapSystem, OrbitRecord};
use crate::error::{Error, Result};
use crate::preballs::{build_preball_on, preimages};
use crate::region::Interval;
use crate::scalar::{KahanSum, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicParams<T> {
    pub sigma: T,
    pub epsilon: T,
    pub b: T,
    pub lambda: T,
    pub delta: T,
    pub theta: T,
}

impl<T: Real> HyperbolicParams<T> {
    /// `b` defaults to `0.4 min{1, 1/beta}`.
    pub fn new(sigma: T, epsilon: T, beta: T) -> Self {
        let cap = if beta > T::one() { T::one() / beta } else { T::one() };
        Self { sigma, epsilon, b: T::lit(0.4) * cap, lambda: T::zero(), delta: T::lit(0.1), theta: T::lit(0.1) }
    }

    pub fn validate(&self, beta: T) -> Result<()> {
        let half = T::lit(0.5) * if beta > T::one() { T::one() / beta } else { T::one() };
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.sigma > T::zero() && self.sigma < T::one()) {
            return bad("sigma must lie in (0, 1)");
        }
        if !(self.epsilon > T::zero()) {
            return bad("epsilon must be positive");
        }
        if !(self.b > T::zero() && self.b < half) {
            return bad("b must lie in (0, min{1, 1/beta}/2)");
        }
        if !(self.delta > T::zero()) || !(self.theta >= T::zero() && self.theta <= T::one()) {
            return bad("delta must be positive and theta in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagKind {
    Hyperbolic,
    Zooming,
}

/// Per-index flags (index 0 is never flagged) with running counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFlags {
    pub kind: FlagKind,
    pub flags: Vec<bool>,
    pub counts: Vec<usize>,
}

impl TimeFlags {
    pub fn new(kind: FlagKind, mut flags: Vec<bool>) -> Self {
        if let Some(f) = flags.first_mut() {
            *f = false;
        }
        let mut c = 0;
        let counts = flags
            .iter()
            .map(|&f| {
                c += f as usize;
                c
            })
            .collect();
        Self { kind, flags, counts }
    }

    pub fn horizon(&self) -> usize {
        self.flags.len().saturating_sub(1)
    }

    pub fn is_set(&self, n: usize) -> bool {
        self.flags.get(n).copied().unwrap_or(false)
    }

    /// `(1/n) #{1 <= j <= n : flagged}`.
    pub fn frequency(&self, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.counts[n] as f64 / n as f64
    }

    pub fn first(&self) -> Option<usize> {
        self.flags.iter().position(|&f| f)
    }
}

/// Hyperbolic-time test for index `n` from the first `n` log-derivatives and
/// critical distances: for every `1 <= k <= n`,
/// `sum_{j=n-k}^{n-1} -log|f'| <= k log sigma` and `dist_eps(f^{n-k} x) >= sigma^{b k}`.
pub fn is_hyperbolic_time<T: Real>(logs: &[T], dists: &[T], n: usize, p: &HyperbolicParams<T>) -> bool {
    let ls = p.sigma.ln();
    let tol = T::LOG_SLACK;
    let mut tail = KahanSum::new();
    for k in 1..=n {
        let j = n - k;
        tail.add(logs[j] + ls);
        if tail.value() < -tol * (T::one() + T::from_usize_lossy(k)) {
            return false;
        }
        let d = truncate(dists[j], p.epsilon);
        if d.ln() < p.b * T::from_usize_lossy(k) * ls - tol {
            return false;
        }
    }
    true
}

/// Flags every `n <= horizon` that is a hyperbolic time for the orbit's start.
///
/// Runs in linear time: with `S_m = sum_{j<m} (log|f'(z_j)| + log sigma)` the
/// first condition is `S_n >= max_{m<n} S_m`, and the second is
/// `min_{m<n} (log dist_eps(z_m) + b m log sigma) >= b n log sigma`.
pub fn detect_hyperbolic_times<T: Real>(orbit: &OrbitRecord<T>, p: &HyperbolicParams<T>) -> Result<TimeFlags> {
    let n_max = orbit.horizon();
    let ls = p.sigma.ln();
    let tol = T::LOG_SLACK;
    let mut flags = vec![false; n_max + 1];
    let mut s = KahanSum::new();
    let mut s_max = T::zero(); // max over m < n of S_m, starting with S_0 = 0
    let mut g_min = T::infinity();
    for n in 1..=n_max {
        let j = n - 1;
        let l = orbit.log_inv_deriv[j];
        if !l.is_finite() {
            return Err(Error::UndefinedDerivative(j));
        }
        s.add(l + ls);
        let d = truncate(orbit.crit_dist[j], p.epsilon);
        g_min = g_min.min(d.ln() + p.b * T::from_usize_lossy(j) * ls);
        let sn = s.value();
        let scale = T::one() + sn.abs().max(s_max.abs());
        let c1 = sn >= s_max - tol * scale;
        let c2 = g_min >= p.b * T::from_usize_lossy(n) * ls - tol * (T::one() + g_min.abs());
        flags[n] = c1 && c2;
        s_max = s_max.max(sn);
    }
    Ok(TimeFlags::new(FlagKind::Hyperbolic, flags))
}

/// Flags `n = 1..=n_max` for which a certified pre-ball of order `n` exists at `x`.
pub fn detect_zooming_times<T: Real>(
    map: &MapSystem<T>,
    x: T,
    alpha: &ZoomingContraction<T>,
    delta: T,
    n_max: usize,
) -> Result<TimeFlags> {
    detect_zooming_times_at(map, x, alpha, delta, n_max, |_| true)
}

/// [`detect_zooming_times`] restricted to the orders accepted by `which`.
pub fn detect_zooming_times_at<T: Real>(
    map: &MapSystem<T>,
    x: T,
    alpha: &ZoomingContraction<T>,
    delta: T,
    n_max: usize,
    which: impl Fn(usize) -> bool,
) -> Result<TimeFlags> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let orbit = iterate(map, x, n_max)?;
    let mut flags = vec![false; n_max + 1];
    for n in 1..=n_max {
        if !which(n) {
            continue;
        }
        match build_preball_on(map, &orbit.points[..=n], &orbit.itinerary[..n], delta, alpha) {
            Ok(_) => flags[n] = true,
            Err(Error::NotAZoomingTime { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(TimeFlags::new(FlagKind::Zooming, flags))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Largest prefix frequency `(1/n) count(n)`.
    pub max_prefix: f64,
    /// `{n : count(n) >= theta n}`.
    pub qualifying: Vec<usize>,
    /// Lower estimate of `limsup (1/n) count(n)`: the maximum over the
    /// geometric grid `floor(1.25^k)` restricted to `n >= N/8`.
    pub limsup_estimate: f64,
    pub final_frequency: f64,
}

pub fn frequency_stats(flags: &TimeFlags, theta: f64) -> FrequencyReport {
    let n = flags.horizon();
    let mut max_prefix: f64 = 0.0;
    let mut qualifying = Vec::new();
    for k in 1..=n {
        let f = flags.frequency(k);
        max_prefix = max_prefix.max(f);
        if flags.counts[k] as f64 >= theta * k as f64 {
            qualifying.push(k);
        }
    }
    let mut limsup: f64 = 0.0;
    let mut g = 1.0f64;
    let floor = (n / 8).max(1);
    while (g as usize) <= n {
        let k = g as usize;
        if k >= floor {
            limsup = limsup.max(flags.frequency(k));
        }
        g *= 1.25;
    }
    if n >= 1 {
        limsup = limsup.max(flags.frequency(n));
    }
    FrequencyReport { max_prefix, qualifying, limsup_estimate: limsup, final_frequency: flags.frequency(n) }
}

/// `s_n = (1/n) sum_{j<n} -log dist_delta(f^j x, C)` for `n = 1..=len`.
pub fn slow_approximation_stat<T: Real>(orbit: &OrbitRecord<T>, delta: T) -> Vec<T> {
    let mut out = Vec::with_capacity(orbit.len());
    let mut acc = KahanSum::new();
    for (j, &d) in orbit.crit_dist.iter().enumerate() {
        acc.add(-truncate(d, delta).ln());
        out.push(acc.value() / T::from_usize_lossy(j + 1));
    }
    out
}

/// `e_n = (1/n) sum_{i<n} log|f'(f^i x)|` for `n = 1..=len`, as a running mean.
pub fn expansion_stat<T: Real>(orbit: &OrbitRecord<T>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(orbit.len());
    let mut m = T::zero();
    for (i, &l) in orbit.log_inv_deriv.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::UndefinedDerivative(i));
        }
        m += (l - m) / T::from_usize_lossy(i + 1);
        out.push(m);
    }
    Ok(out)
}

/// First `j >= 1` with expansion average at least `lambda` and truncated
/// recurrence average at most `r`; `None` stands for "unbounded within the orbit".
pub fn first_expanding_moment<T: Real>(orbit: &OrbitRecord<T>, lambda: T, r: T, epsilon: T) -> Option<usize> {
    let e = expansion_stat(orbit).ok()?;
    let s = slow_approximation_stat(orbit, epsilon);
    let tol = T::LOG_SLACK;
    (0..e.len()).find(|&i| e[i] >= lambda - tol && s[i] <= r + tol).map(|i| i + 1)
}

/// `bigcup_{j<m} f^{-j}(C)` by pulling the critical points back through branches.
pub fn critical_preimages<T: Real>(map: &MapSystem<T>, m: usize, cap: usize) -> Result<Vec<T>> {
    let mut all: Vec<T> = map.critical.clone();
    let mut layer: Vec<T> = map.critical.clone();
    for _ in 1..m {
        let mut next = Vec::new();
        for &c in &layer {
            let pts = preimages(map, &Interval::new(c, c));
            next.extend(pts.into_iter().map(|p| map.normalize(p.lo)));
            if next.len() + all.len() > cap {
                return Err(Error::PrecisionLoss { level: m });
            }
        }
        all.extend_from_slice(&next);
        layer = next;
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    all.dedup_by(|a, b| (*a - *b).abs() < T::SNAP);
    Ok(all)
}

/// Both sides of the transport inequality for `F = f^m`, per prefix `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportReport<T> {
    pub lhs: Vec<T>,
    pub rhs: Vec<T>,
    pub holds: bool,
}

/// `sum_{j<n} -log dist_{delta/K^m}(F^j x, C_F) <= 2 sum_{j<mn} -log dist_delta(f^j x, C)`
/// for all prefixes available in the orbit.
pub fn check_transport_inequality<T: Real>(
    map: &MapSystem<T>,
    orbit: &OrbitRecord<T>,
    m: usize,
    delta: T,
    k_sup: T,
) -> Result<TransportReport<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if !(delta < k_sup.powi(-(m as i32))) {
        return Err(Error::InvalidArgument("delta must be below K^-m".into()));
    }
    let cf = critical_preimages(map, m, 1 << 16)?;
    let dist_cf = |x: T| cf.iter().fold(T::infinity(), |a, &c| a.min(map.dist(x, c)));
    let small = delta / k_sup.powi(m as i32);
    let blocks = orbit.len() / m;
    let (mut l, mut r) = (KahanSum::new(), KahanSum::new());
    let (mut lhs, mut rhs) = (Vec::with_capacity(blocks), Vec::with_capacity(blocks));
    let mut holds = true;
    for j in 0..blocks {
        l.add(-truncate(dist_cf(orbit.points[j * m]), small).ln());
        for i in 0..m {
            r.add(-truncate(orbit.crit_dist[j * m + i], delta).ln());
        }
        let (a, b) = (l.value(), T::lit(2.0) * r.value());
        if a > b + T::LOG_SLACK * (T::one() + b.abs()) {
            holds = false;
        }
        lhs.push(a);
        rhs.push(b);
    }
    Ok(TransportReport { lhs, rhs, holds })
}

/// `min{k in N : k >= 16 log 3 / lambda}`.
pub fn compute_ell(lambda: f64) -> usize {
    assert!(lambda > 0.0, "lambda must be positive");
    let q = 16.0 * 3f64.ln() / lambda;
    let k = q.ceil();
    // guard the exact-threshold case against rounding in the division
    let k = if k - 1.0 >= 1.0 && (k - 1.0) * lambda >= 16.0 * 3f64.ln() { k - 1.0 } else { k };
    (k as usize).max(1)
}

/// `sum_{n>=1} e^{-lambda ell n / 8}`, to compare against `1/8`.
pub fn ell_series(lambda: f64, ell: usize) -> f64 {
    let q = (-lambda * ell as f64 / 8.0).exp();
    q / (1.0 - q)
}

/// `min{k : sum_j alpha_{k j}(r) <= r / 8 for every r in radii}` (scan up to `k_max`).
pub fn ell_scan<T: Real>(alpha: &ZoomingContraction<T>, radii: &[T], k_max: usize) -> Option<usize> {
    (1..=k_max).find(|&k| {
        let a = alpha.every(k);
        radii.iter().all(|&r| a.total_bound(r) <= r / T::lit(8.0))
    })
}

/// Flags for `f^ell`: index `n` set iff index `ell n` was set.
pub fn sub_collection_filter(flags: &TimeFlags, ell: usize) -> TimeFlags {
    assert!(ell >= 1);
    let n = flags.horizon() / ell;
    let out = (0..=n).map(|k| flags.is_set(k * ell)).collect();
    TimeFlags::new(flags.kind, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::maps::*;

    #[test]
    fn doubling_hyperbolic_times() {
        let d = doubling::<f64>();
        let o = iterate(&d, 0.123, 40).unwrap();
        let p = HyperbolicParams::new(0.5, 0.1, 0.0);
        let f = detect_hyperbolic_times(&o, &p).unwrap();
        assert!(f.flags[1..].iter().all(|&b| b));
        let p = HyperbolicParams::new(0.4, 0.1, 0.0);
        let f = detect_hyperbolic_times(&o, &p).unwrap();
        assert!(f.flags.iter().all(|&b| !b));
    }

    #[test]
    fn neutral_point_is_never_hyperbolic() {
        let m = neutral_circle::<f64>();
        let o = iterate(&m, 0.0, 30).unwrap();
        let f = detect_hyperbolic_times(&o, &HyperbolicParams::new(0.99, 0.1, 0.0)).unwrap();
        assert_eq!(f.first(), None);
    }

    #[test]
    fn ell_values() {
        assert_eq!(compute_ell(16.0 * 3f64.ln()), 1);
        assert_eq!(compute_ell(2f64.ln()), 26);
        for &l in &[0.1, 0.3, 2f64.ln(), 1.7, 5.0] {
            assert!(ell_series(l, compute_ell(l)) <= 0.125 + 1e-15);
        }
        assert_eq!(ell_scan(&ZoomingContraction::power(0.5f64), &[0.1, 0.4], 64), Some(4));
    }

    #[test]
    fn filter_subsamples() {
        let f = TimeFlags::new(FlagKind::Zooming, (0..=20).map(|n| n % 2 == 0).collect());
        let g = sub_collection_filter(&f, 2);
        assert!(g.flags[1..].iter().all(|&b| b));
        assert_eq!(g.horizon(), 10);
    }

    #[test]
    fn doubling_statistics() {
        let d = doubling::<f64>();
        let o = iterate(&d, 0.3, 50).unwrap();
        assert!(expansion_stat(&o).unwrap().iter().all(|&e| e == 2f64.ln()));
        assert!(slow_approximation_stat(&o, 0.1).iter().all(|&s| s == 0.0));
        assert_eq!(first_expanding_moment(&o, 2f64.ln(), 0.0, 0.1), Some(1));
        assert_eq!(first_expanding_moment(&o, 0.8, 1.0, 0.1), None);
    }

    #[test]
    fn frequency_extremes() {
        let all = TimeFlags::new(FlagKind::Zooming, vec![true; 101]);
        let r = frequency_stats(&all, 1.0);
        assert_eq!(r.qualifying.len(), 100);
        assert_eq!(r.limsup_estimate, 1.0);
        let none = TimeFlags::new(FlagKind::Zooming, vec![false; 101]);
        let r = frequency_stats(&none, 0.1);
        assert!(r.qualifying.is_empty() && r.limsup_estimate == 0.0);
    }

    #[test]
    fn critical_preimages_of_logistic() {
        let l = logistic::<f64>(4.0);
        let c = critical_preimages(&l, 2, 100).unwrap();
        assert_eq!(c.len(), 3);
        let s = 0.5f64.sqrt();
        assert!((c[0] - (1.0 - s) / 2.0).abs() < 1e-14 && (c[2] - (1.0 + s) / 2.0).abs() < 1e-14);
    }
}
