//! Invariant densities of local towers and their projection to invariant
//! measures of the underlying map.
//!
//! The transfer operator of `F` is discretised by collocation at
//! Chebyshev-Lobatto nodes of the base: the density is a polynomial
//! interpolant, and one operator step evaluates `sum_P g(psi_P y) / J(psi_P y)`
//! at the nodes through the inverse branches of the atoms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::error::{Error, Result};
use crate::region::Interval;
use crate::scalar::KahanSum;
use crate::tower::{BaseKind, InducedMarkovMap};

/// Reference measure on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReferenceMeasure {
    Lebesgue,
    /// Piecewise-linear density with `values[k]` at `k / (len - 1)`.
    Grid { values: Vec<f64> },
}

impl ReferenceMeasure {
    pub fn density(&self, x: f64) -> f64 {
        match self {
            Self::Lebesgue => 1.0,
            Self::Grid { values } => {
                let m = values.len() - 1;
                let t = (x.clamp(0.0, 1.0) * m as f64).min(m as f64);
                let k = (t.floor() as usize).min(m - 1);
                let s = t - k as f64;
                values[k] * (1.0 - s) + values[k + 1] * s
            }
        }
    }

    /// Non-negative and of unit mass under the trapezoid rule.
    pub fn validate(&self) -> Result<()> {
        if let Self::Grid { values } = self {
            if values.len() < 2 || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("grid density needs >= 2 finite non-negative values".into()));
            }
            let m = (values.len() - 1) as f64;
            let mass = values.windows(2).map(|w| (w[0] + w[1]) / (2.0 * m)).sum::<f64>();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("grid density integrates to {mass}")));
            }
        }
        Ok(())
    }
}

/// Polynomial interpolation and quadrature at Chebyshev-Lobatto nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collocation {
    pub interval: Interval<f64>,
    pub nodes: Vec<f64>,
    bary: Vec<f64>,
    /// Clenshaw-Curtis weights, summing to the interval length.
    pub quad: Vec<f64>,
}

impl Collocation {
    pub fn new(interval: Interval<f64>, degree: usize) -> Self {
        let n = degree.max(2);
        let (c, h) = (interval.center(), interval.len() / 2.0);
        let pi = std::f64::consts::PI;
        let nodes = (0..=n).map(|j| c + h * (pi * j as f64 / n as f64).cos()).collect();
        let bary = (0..=n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n {
                    s / 2.0
                } else {
                    s
                }
            })
            .collect();
        let quad = (0..=n)
            .map(|k| {
                let th = pi * k as f64 / n as f64;
                let mut s = 0.0;
                for j in 1..=n / 2 {
                    let b = if 2 * j == n { 1.0 } else { 2.0 };
                    s += b / (4.0 * (j * j) as f64 - 1.0) * (2.0 * j as f64 * th).cos();
                }
                let ck = if k == 0 || k == n { 1.0 } else { 2.0 };
                ck / n as f64 * (1.0 - s) * h
            })
            .collect();
        Self { interval, nodes, bary, quad }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Lagrange basis values at `x`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        if let Some(k) = self.nodes.iter().position(|&t| t == x) {
            out[k] = 1.0;
            return out;
        }
        let mut den = 0.0;
        for (k, (&t, &w)) in self.nodes.iter().zip(&self.bary).enumerate() {
            let q = w / (x - t);
            out[k] = q;
            den += q;
        }
        for v in &mut out {
            *v /= den;
        }
        out
    }

    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        self.basis(x).iter().zip(values).map(|(b, v)| b * v).sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.quad.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Polynomial degree of the collocation.
    pub degree: usize,
    /// Stop once one operator step moves the density by less than this in L1.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { degree: 64, tol: 1e-9, max_iter: 10_000 }
    }
}

/// An `F`-invariant probability `nu` on the base of a local tower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerMeasure {
    pub base: Interval<f64>,
    pub reference: ReferenceMeasure,
    pub grid: Collocation,
    /// `d nu / d mu` at the nodes.
    pub values: Vec<f64>,
    pub returns: Vec<usize>,
    /// `nu(P)` per atom.
    pub atom_mass: Vec<f64>,
    /// `int R d nu`.
    pub mean_return: f64,
    /// Mass one operator step sends to undiscovered atoms (renormalised away).
    pub defect: f64,
    pub iterations: usize,
    /// L1 change of the last operator step.
    pub residual: f64,
    /// `sup / inf` of the density over the nodes.
    pub distortion: f64,
    /// Bound on that ratio from the sampled distortion of the branches.
    pub distortion_bound: f64,
}

impl TowerMeasure {
    /// `d nu / d mu` at `x` in the base.
    pub fn density(&self, x: f64) -> f64 {
        self.grid.eval(&self.values, x)
    }

    /// Density against normalised Lebesgue measure on the base.
    pub fn relative_density(&self, x: f64) -> f64 {
        self.density(x) * self.reference.density(x) * self.base.len()
    }

    /// `nu(E) - nu(F^{-1} E)` for `E` an interval of the base, by quadrature.
    pub fn invariance_defect(&self, map: &MapSystem<f64>, tower: &InducedMarkovMap, e: Interval<f64>) -> Result<f64> {
        let sub = Collocation::new(e, self.grid.len() - 1);
        let dens: Vec<f64> = sub.nodes.iter().map(|&x| self.density(x) * self.reference.density(x)).collect();
        let direct = sub.integrate(&dens);
        let mut pulled = KahanSum::new();
        for i in 0..tower.atoms.len() {
            for ((x, lj), q) in tower.inverse_branch(map, i, &sub.nodes)?.into_iter().zip(&sub.quad) {
                let x = self.base.lift(tower.domain, x);
                pulled.add(q * self.density(x) * self.reference.density(x) * (-lj).exp());
            }
        }
        Ok(direct - pulled.value() / (1.0 - self.defect))
    }
}

/// One row block of the discretised operator.
struct AtomRows {
    /// `rows[i][k]`: weight of node `k` in `(L g)(y_i)`.
    rows: Vec<Vec<f64>>,
    /// `mass[k]`: weight of node `k` in `nu(P)`.
    mass: Vec<f64>,
    lip: f64,
    contraction: f64,
}

fn atom_rows(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    grid: &Collocation,
    mu: &ReferenceMeasure,
    i: usize,
) -> Result<AtomRows> {
    let pre = tower.inverse_branch(map, i, &grid.nodes)?;
    let n = grid.len();
    let mut rows = vec![vec![0.0; n]; n];
    let mut mass = vec![0.0; n];
    let mut lip: f64 = 0.0;
    let mut contraction: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (r, &(x, ld)) in pre.iter().enumerate() {
        let x = tower.base.lift(tower.domain, x);
        let y = grid.nodes[r];
        // log of the Jacobian of F against mu
        let lj = ld + mu.density(y).ln() - mu.density(x).ln();
        let c = (-lj).exp();
        let b = grid.basis(x);
        for k in 0..n {
            rows[r][k] = c * b[k];
            mass[k] += grid.quad[r] * mu.density(y) * c * b[k];
        }
        if let Some((py, pl)) = prev {
            lip = lip.max(((lj - pl) / (y - py)).abs());
        }
        prev = Some((y, lj));
        contraction = contraction.max((-ld).exp());
    }
    Ok(AtomRows { rows, mass, lip, contraction })
}

/// The `F`-invariant probability absolutely continuous with respect to `mu`.
pub fn invariant_density(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    mu: &ReferenceMeasure,
    opts: &DensityOptions,
) -> Result<TowerMeasure> {
    if tower.kind != BaseKind::Local {
        return Err(Error::InvalidArgument("invariant densities need a local tower".into()));
    }
    if tower.atoms.is_empty() {
        return Err(Error::InvalidArgument("tower has no atoms".into()));
    }
    mu.validate()?;
    let grid = Collocation::new(tower.base, opts.degree);
    let n = grid.len();
    let blocks: Vec<AtomRows> =
        (0..tower.atoms.len()).into_par_iter().map(|i| atom_rows(map, tower, &grid, mu, i)).collect::<Result<_>>()?;
    let mut op = vec![vec![0.0; n]; n];
    for b in &blocks {
        for (row, add) in op.iter_mut().zip(&b.rows) {
            for (o, a) in row.iter_mut().zip(add) {
                *o += a;
            }
        }
    }
    let lip = blocks.iter().map(|b| b.lip).fold(0.0, f64::max);
    let theta = blocks.iter().map(|b| b.contraction).fold(0.0, f64::max);
    if !lip.is_finite() || theta >= 1.0 {
        return Err(Error::DistortionUnbounded(format!("branch log-Jacobian Lipschitz {lip}, contraction {theta}")));
    }
    let bound = (lip * tower.base.len() / (1.0 - theta)).exp();

    let h: Vec<f64> = grid.nodes.iter().map(|&y| mu.density(y)).collect();
    let mass_of = |v: &[f64]| grid.quad.iter().zip(v).zip(&h).map(|((q, a), w)| q * a * w).sum::<f64>();
    let mut v = vec![1.0; n];
    let m0 = mass_of(&v);
    v.iter_mut().for_each(|a| *a /= m0);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut w: Vec<f64> = op.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let m = mass_of(&w);
        w.iter_mut().for_each(|a| *a /= m);
        let diff: Vec<f64> = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).collect();
        residual = mass_of(&diff);
        v = w;
        if residual < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(Error::NoConvergence(opts.max_iter));
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(0.0, f64::max);
    if !(lo > 0.0) {
        return Err(Error::DistortionUnbounded(format!("density reaches {lo}")));
    }
    let distortion = hi / lo;
    if distortion > bound * (1.0 + 1e-9) {
        return Err(Error::DistortionUnbounded(format!("density ratio {distortion} exceeds {bound}")));
    }
    let atom_mass: Vec<f64> = blocks.iter().map(|b| b.mass.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
    let covered: f64 = atom_mass.iter().sum();
    let returns: Vec<usize> = tower.atoms.iter().map(|a| a.ret).collect();
    // nu is renormalised over the discovered atoms
    let atom_mass: Vec<f64> = atom_mass.iter().map(|m| m / covered).collect();
    let mean_return = atom_mass.iter().zip(&returns).map(|(m, &r)| m * r as f64).sum();
    Ok(TowerMeasure {
        base: tower.base,
        reference: mu.clone(),
        grid,
        values: v,
        returns,
        atom_mass,
        mean_return,
        defect: 1.0 - covered,
        iterations,
        residual,
        distortion,
        distortion_bound: bound,
    })
}

/// `eta = sum_P sum_{j < R(P)} f^j_* (nu|_P)` as weighted points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMeasure {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Total mass before normalisation.
    pub total_mass: f64,
    /// `int R d nu` of the measure that was projected.
    pub mean_return: f64,
}

impl ProjectedMeasure {
    /// `|total mass - int R d nu|`.
    pub fn mass_defect(&self) -> f64 {
        (self.total_mass - self.mean_return).abs()
    }

    /// `int phi d eta / eta(M)`.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        let mut s = KahanSum::new();
        for (&x, &w) in self.points.iter().zip(&self.weights) {
            s.add(w * phi(x));
        }
        s.value() / self.total_mass
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.integrate(|x| x.powi(k))
    }

    /// Normalised density on `bins` equal cells of `[0, 1]`.
    pub fn histogram(&self, bins: usize) -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for (&x, &w) in self.points.iter().zip(&self.weights) {
            let k = ((x * bins as f64) as usize).min(bins - 1);
            h[k] += w;
        }
        h.iter().map(|v| v * bins as f64 / self.total_mass).collect()
    }

    /// `|int phi o f d eta - int phi d eta|`, normalised.
    pub fn invariance_defect(&self, map: &MapSystem<f64>, phi: impl Fn(f64) -> f64) -> f64 {
        let pushed = self.integrate(|x| phi(map.apply(x)));
        (pushed - self.integrate(&phi)).abs()
    }
}

/// Pushes `nu` forward along each atom's return block.  `resolution` points
/// per atom, at the images under the inverse branch of equally spaced
/// points of the base.
pub fn project(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    tm: &TowerMeasure,
    resolution: usize,
) -> Result<ProjectedMeasure> {
    if !tm.mean_return.is_finite() || tm.atom_mass.is_empty() {
        return Err(Error::InfiniteMeanReturn);
    }
    let base = tm.base;
    let ys: Vec<f64> = (0..resolution).map(|q| base.lo + base.len() * (q as f64 + 0.5) / resolution as f64).collect();
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..tower.atoms.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let pre = tower.inverse_branch(map, i, &ys)?;
            let mut xs = Vec::with_capacity(resolution);
            let mut ws = Vec::with_capacity(resolution);
            for &(x, ld) in &pre {
                let x = base.lift(tower.domain, x);
                xs.push(x);
                ws.push(tm.density(x) * tm.reference.density(x) * (-ld).exp());
            }
            let s: f64 = ws.iter().sum();
            // quadrature weights rescaled to the exact atom mass
            ws.iter_mut().for_each(|w| *w *= tm.atom_mass[i] / s);
            let r = tower.atoms[i].ret;
            let mut pts = Vec::with_capacity(resolution * r);
            let mut wts = Vec::with_capacity(resolution * r);
            for (&x, &w) in xs.iter().zip(&ws) {
                let mut z = map.normalize(x);
                for _ in 0..r {
                    pts.push(z);
                    wts.push(w);
                    z = map.apply(z);
                }
            }
            Ok((pts, wts))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut total = KahanSum::new();
    for (p, w) in per {
        for &v in &w {
            total.add(v);
        }
        points.extend(p);
        weights.extend(w);
    }
    Ok(ProjectedMeasure { points, weights, total_mass: total.value(), mean_return: tm.mean_return })
}
