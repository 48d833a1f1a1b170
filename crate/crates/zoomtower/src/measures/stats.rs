//! Monte-Carlo statistics along orbits: correlations and their decay fits,
//! Lyapunov exponents, and a central-limit diagnostic.
//!
//! Orbits are perturbed by uniform noise of a configurable size after every
//! step.  Maps with integer slopes otherwise shed one mantissa bit per step
//! and every double-precision orbit of `2x mod 1` reaches 0 within 53 steps.

use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::error::{Error, Result};
use crate::rng::{par_draw, par_fold, uniform, SplitMix64};

/// Observables from the shipped library.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observable {
    Constant { c: f64 },
    /// `cos(2 pi k x)`.
    Cos { k: f64 },
    /// Piecewise-linear hat of half-width `width` at `center` (circular if the map is).
    Bump { center: f64, width: f64 },
    /// `psi o f - psi`.
    Coboundary { inner: Box<Observable> },
}

impl Observable {
    pub fn cos2pi() -> Self {
        Self::Cos { k: 1.0 }
    }

    pub fn eval(&self, map: &MapSystem<f64>, x: f64) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::Cos { k } => (2.0 * std::f64::consts::PI * k * x).cos(),
            Self::Bump { center, width } => {
                let d = if map.is_circle() {
                    let d = (x - center).abs();
                    d.min(1.0 - d)
                } else {
                    (x - center).abs()
                };
                (1.0 - d / width).max(0.0)
            }
            Self::Coboundary { inner } => inner.eval(map, map.apply(x)) - inner.eval(map, x),
        }
    }

    /// Sup norm bound.
    pub fn sup(&self) -> f64 {
        match self {
            Self::Constant { c } => c.abs(),
            Self::Cos { .. } | Self::Bump { .. } => 1.0,
            Self::Coboundary { inner } => 2.0 * inner.sup(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant { c } => format!("const({c})"),
            Self::Cos { k } => format!("cos(2pi*{k}x)"),
            Self::Bump { center, width } => format!("bump({center},{width})"),
            Self::Coboundary { inner } => format!("cob[{}]", inner.label()),
        }
    }
}

/// Draws points of an invariant measure.
pub trait PointSampler: Sync {
    fn sample(&self, rng: &mut SplitMix64) -> Result<f64>;
}

/// Uniform on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uniform {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Uniform {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl PointSampler for Uniform {
    fn sample(&self, rng: &mut SplitMix64) -> Result<f64> {
        Ok(self.lo + (self.hi - self.lo) * uniform(rng))
    }
}

/// Piecewise-constant density on equal cells of `[0, 1]`, by inverse CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    cdf: Vec<f64>,
}

impl Histogram {
    pub fn new(cells: &[f64]) -> Result<Self> {
        let total: f64 = cells.iter().sum();
        if cells.is_empty() || !(total > 0.0) || cells.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidArgument("histogram needs non-negative cells of positive mass".into()));
        }
        let mut acc = 0.0;
        let cdf = cells
            .iter()
            .map(|c| {
                acc += c / total;
                acc
            })
            .collect();
        Ok(Self { cdf })
    }
}

impl PointSampler for Histogram {
    fn sample(&self, rng: &mut SplitMix64) -> Result<f64> {
        let u = uniform(rng);
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let lo = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        let frac = if self.cdf[k] > lo { (u - lo) / (self.cdf[k] - lo) } else { 0.5 };
        Ok((k as f64 + frac) / self.cdf.len() as f64)
    }
}

/// Samples of the projection of a product measure on a tower.
pub struct ProjectedBernoulli<'a> {
    pub map: &'a MapSystem<f64>,
    pub tower: &'a crate::tower::InducedMarkovMap,
    pub measure: &'a super::bernoulli::BernoulliMeasure,
}

impl PointSampler for ProjectedBernoulli<'_> {
    fn sample(&self, rng: &mut SplitMix64) -> Result<f64> {
        self.measure.sample_projected(self.map, self.tower, rng)
    }
}

/// One orbit step with uniform noise in `[-noise/2, noise/2)`.
#[inline]
pub fn noisy_step(map: &MapSystem<f64>, x: f64, noise: f64, rng: &mut SplitMix64) -> f64 {
    let y = map.apply(x);
    if noise == 0.0 {
        y
    } else {
        map.normalize(y + noise * (uniform(rng) - 0.5))
    }
}

/// Options shared by the Monte-Carlo estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    /// Per-step orbit noise.
    pub noise: f64,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, noise: f64::EPSILON }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Exponential,
    Polynomial,
    Stretched,
}

/// Least-squares fit of `log |Cor(n)|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kind: FitKind,
    /// Exponential: `log|C| = a - rate n`; polynomial: `a - rate log n`;
    /// stretched: `a - rate n^gamma`.
    pub intercept: f64,
    pub rate: f64,
    pub gamma: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub phi: String,
    pub psi: String,
    /// Signed `int phi . psi o f^n - int phi int psi`, `n = 0..=n_max`.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub fits: Vec<DecayFit>,
    /// Index into `fits` of the highest `R^2`.
    pub best: Option<usize>,
}

impl CorrelationSeries {
    pub fn best_fit(&self) -> Option<&DecayFit> {
        self.best.map(|i| &self.fits[i])
    }

    pub fn fit(&self, kind: FitKind) -> Option<&DecayFit> {
        self.fits.iter().find(|f| f.kind == kind)
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

/// Fits the three decay classes to `|values[n]|` over `n in [n_max/4, n_max]`,
/// `n >= 1`, skipping exact zeros.
pub fn fit_decay(values: &[f64]) -> Vec<DecayFit> {
    let n_max = values.len().saturating_sub(1);
    let (ns, ls): (Vec<f64>, Vec<f64>) = ((n_max / 4).max(1)..=n_max)
        .filter(|&n| values[n] != 0.0 && values[n].is_finite())
        .map(|n| (n as f64, values[n].abs().ln()))
        .unzip();
    if ns.len() < 3 {
        return Vec::new();
    }
    let mk = |kind, xs: &[f64], gamma| {
        let (a, b, r2) = linear_fit(xs, &ls);
        DecayFit { kind, intercept: a, rate: -b, gamma, r2, points: xs.len() }
    };
    let mut fits = vec![mk(FitKind::Exponential, &ns, 1.0)];
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    fits.push(mk(FitKind::Polynomial, &logs, 0.0));
    // gamma by grid search over (0, 1); gamma = 1 is the exponential fit
    let mut best: Option<DecayFit> = None;
    for k in 1..100 {
        let g = k as f64 / 100.0;
        let xs: Vec<f64> = ns.iter().map(|n| n.powf(g)).collect();
        let f = mk(FitKind::Stretched, &xs, g);
        if best.as_ref().is_none_or(|b| f.r2 > b.r2) {
            best = Some(f);
        }
    }
    fits.extend(best);
    fits
}

/// `Cor(phi, psi o f^n)` for `n = 0..=n_max` under the sampler's measure.
pub fn correlation(
    map: &MapSystem<f64>,
    sampler: &dyn PointSampler,
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
    mc: &McOptions,
) -> Result<CorrelationSeries> {
    // one orbit per sample; both passes replay the same streams
    let orbit = |rng: &mut SplitMix64, out: &mut Vec<f64>| -> Result<f64> {
        let mut x = sampler.sample(rng)?;
        let a = phi.eval(map, x);
        out.clear();
        for n in 0..=n_max {
            out.push(psi.eval(map, x));
            if n < n_max {
                x = noisy_step(map, x, mc.noise, rng);
            }
        }
        Ok(a)
    };
    type Acc = (Result<()>, f64, Vec<f64>, Vec<f64>);
    let init = || -> Acc { (Ok(()), 0.0, vec![0.0; n_max + 1], vec![0.0; n_max + 1]) };
    let first = par_fold(mc.seed, mc.samples, init, |acc, rng, _| {
        let mut b = Vec::with_capacity(n_max + 1);
        match orbit(rng, &mut b) {
            Ok(a) => {
                acc.1 += a;
                acc.2.iter_mut().zip(&b).for_each(|(s, v)| *s += v);
            }
            Err(e) => acc.0 = Err(e),
        }
    });
    let m = mc.samples.max(1) as f64;
    let mut mean_a = 0.0;
    let mut mean_b = vec![0.0; n_max + 1];
    for (r, a, b, _) in first {
        r?;
        mean_a += a / m;
        mean_b.iter_mut().zip(&b).for_each(|(s, v)| *s += v / m);
    }
    let second = par_fold(mc.seed, mc.samples, init, |acc, rng, _| {
        let mut b = Vec::with_capacity(n_max + 1);
        if let Ok(a) = orbit(rng, &mut b) {
            for n in 0..=n_max {
                let u = (a - mean_a) * (b[n] - mean_b[n]);
                acc.2[n] += u;
                acc.3[n] += u * u;
            }
        }
    });
    let mut su = vec![0.0; n_max + 1];
    let mut su2 = vec![0.0; n_max + 1];
    for (_, _, s1, s2) in second {
        su.iter_mut().zip(&s1).for_each(|(s, v)| *s += v);
        su2.iter_mut().zip(&s2).for_each(|(s, v)| *s += v);
    }
    let values: Vec<f64> = su.iter().map(|s| s / m).collect();
    let std_errors: Vec<f64> =
        su2.iter().zip(&values).map(|(q, mu)| ((q / m - mu * mu).max(0.0) / (m - 1.0).max(1.0)).sqrt()).collect();
    let fits = fit_decay(&values);
    // ties go to the simpler class, listed first
    let best = (0..fits.len()).fold(None, |b: Option<usize>, i| match b {
        Some(j) if fits[i].r2 <= fits[j].r2 + 1e-9 => Some(j),
        _ => Some(i),
    });
    Ok(CorrelationSeries { phi: phi.label(), psi: psi.label(), values, std_errors, fits, best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub n: usize,
    /// Mean of `(1/n) log |(f^n)'(x)|` over the samples.
    pub mean: f64,
    /// Half-width of a 95% interval.
    pub ci95: f64,
    pub values: Vec<f64>,
}

/// Finite-time Lyapunov exponents `e_n(x)`; orbits that hit a critical
/// point are dropped.
pub fn lyapunov(map: &MapSystem<f64>, sampler: &dyn PointSampler, n: usize, mc: &McOptions) -> Result<LyapunovEstimate> {
    let vals: Vec<Result<Option<f64>>> = par_draw(mc.seed, mc.samples, |rng, _| {
        let mut x = sampler.sample(rng)?;
        let mut s = crate::scalar::KahanSum::new();
        for _ in 0..n {
            let d = map.derivative(x).abs();
            if d == 0.0 {
                return Ok(None);
            }
            s.add(d.ln());
            x = noisy_step(map, x, mc.noise, rng);
        }
        Ok(Some(s.value() / n as f64))
    });
    let values: Vec<f64> = vals.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let m = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok(LyapunovEstimate { n, mean, ci95: 1.96 * (var / m).sqrt(), values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: usize,
    pub samples: usize,
    /// Estimated `int phi`.
    pub mean: f64,
    /// Sample variance of the normalised sums.
    pub variance: f64,
    /// Kolmogorov-Smirnov distance to the fitted normal.
    pub ks: f64,
    /// All sums (numerically) zero.
    pub degenerate: bool,
}

/// Distribution of `n^{-1/2} sum_{j<n} (phi(f^j x) - int phi)`.
pub fn clt_diagnostic(
    map: &MapSystem<f64>,
    sampler: &dyn PointSampler,
    phi: &Observable,
    n: usize,
    mc: &McOptions,
) -> Result<CltReport> {
    let sums: Vec<Result<f64>> = par_draw(mc.seed, mc.samples, |rng, _| {
        let mut x = sampler.sample(rng)?;
        let mut s = crate::scalar::KahanSum::new();
        for _ in 0..n {
            s.add(phi.eval(map, x));
            x = noisy_step(map, x, mc.noise, rng);
        }
        Ok(s.value())
    });
    let sums: Vec<f64> = sums.into_iter().collect::<Result<_>>()?;
    let m = sums.len().max(1) as f64;
    let mean = sums.iter().sum::<f64>() / (m * n as f64);
    let mut z: Vec<f64> = sums.iter().map(|s| (s - mean * n as f64) / (n as f64).sqrt()).collect();
    let zm = z.iter().sum::<f64>() / m;
    let variance = z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let scale = phi.sup().max(1.0);
    if variance.sqrt() <= 1e-12 * scale {
        return Ok(CltReport { n, samples: sums.len(), mean, variance, ks: 0.0, degenerate: true });
    }
    z.sort_by(f64::total_cmp);
    let sd = variance.sqrt();
    let mut ks: f64 = 0.0;
    for (i, &v) in z.iter().enumerate() {
        let c = 0.5 * libm::erfc(-(v - zm) / (sd * std::f64::consts::SQRT_2));
        ks = ks.max((c - i as f64 / m).abs()).max(((i + 1) as f64 / m - c).abs());
    }
    Ok(CltReport { n, samples: sums.len(), mean, variance, ks, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_is_fitted() {
        let v: Vec<f64> = (0..=40).map(|n| 3.0 * (-0.25 * n as f64).exp()).collect();
        let f = fit_decay(&v);
        let e = f.iter().find(|f| f.kind == FitKind::Exponential).unwrap();
        assert!((e.rate - 0.25).abs() < 1e-12 && e.r2 > 1.0 - 1e-12);
    }

    #[test]
    fn constant_observable_has_no_correlation() {
        let m = crate::dynamics::maps::doubling::<f64>();
        let c = correlation(&m, &Uniform::default(), &Observable::Constant { c: 2.0 }, &Observable::cos2pi(), 5, &McOptions::new(2000, 3))
            .unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 1e-12));
    }
}
