//! Product measures on the atoms of a tower: `nu` gives the cylinder
//! `P_1 .. P_s` mass `a_{P_1} .. a_{P_s}`, so `J_nu F = 1 / a_P` on `P`.

use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::error::{Error, Result};
use crate::rng::{uniform, SplitMix64};
use crate::tower::{BaseKind, InducedMarkovMap};

/// How weights are put on the discovered atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum WeightRule {
    /// Equal weights.
    Uniform,
    /// `a_P` proportional to `z^{R(P)}`.
    Exponential { z: f64 },
    /// `nu{R = n} = (1 - z) z^{n - n_0}` for `n >= n_0`, the smallest return
    /// time, shared equally by the atoms with that return time; the tail
    /// `nu{R > n}` then decays at rate exactly `z`.  Levels without
    /// discovered atoms count against the weight mass.
    Geometric { z: f64 },
    /// Given weights, one per atom.
    Explicit { weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliMeasure {
    /// `a_P`, summing to 1.
    pub weights: Vec<f64>,
    pub returns: Vec<usize>,
    /// Weight mass that the rule assigned to discovered atoms before renormalising.
    pub discovered_mass: f64,
    /// `int R d nu = sum a_P R(P)`.
    pub mean_return: f64,
    /// Anchor orbits of the atoms (for the inverse branches).
    anchors: Vec<Vec<f64>>,
    cdf: Vec<f64>,
    /// Cylinder depth used when realising points.
    pub depth: usize,
}

/// Builds the product measure.  Fails with `WeightMass` when less than
/// `1 - 1e-3` of the rule's mass lands on discovered atoms.
pub fn bernoulli_tower_measure(map: &MapSystem<f64>, tower: &InducedMarkovMap, rule: &WeightRule) -> Result<BernoulliMeasure> {
    if tower.kind != BaseKind::Local {
        return Err(Error::InvalidArgument("product measures need a local tower".into()));
    }
    let returns: Vec<usize> = tower.atoms.iter().map(|a| a.ret).collect();
    if returns.is_empty() {
        return Err(Error::WeightMass(0.0));
    }
    let raw: Vec<f64> = match rule {
        WeightRule::Uniform => vec![1.0 / returns.len() as f64; returns.len()],
        WeightRule::Exponential { z } => {
            check_rate(*z)?;
            let w: Vec<f64> = returns.iter().map(|&r| z.powi(r as i32)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        }
        WeightRule::Geometric { z } => {
            check_rate(*z)?;
            let n0 = *returns.iter().min().unwrap();
            let mut per_level = std::collections::BTreeMap::new();
            for &r in &returns {
                *per_level.entry(r).or_insert(0usize) += 1;
            }
            returns.iter().map(|&r| (1.0 - z) * z.powi((r - n0) as i32) / per_level[&r] as f64).collect()
        }
        WeightRule::Explicit { weights } => {
            if weights.len() != returns.len() {
                return Err(Error::InvalidArgument(format!("{} weights for {} atoms", weights.len(), returns.len())));
            }
            if weights.iter().any(|&w| !(w > 0.0 && w < 1.0) && returns.len() > 1) {
                return Err(Error::InvalidArgument("weights must lie in (0, 1)".into()));
            }
            weights.clone()
        }
    };
    let mass: f64 = raw.iter().sum();
    if mass < 1.0 - 1e-3 {
        return Err(Error::WeightMass(mass));
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / mass).collect();
    let mean_return = weights.iter().zip(&returns).map(|(a, &r)| a * r as f64).sum();
    let anchors = (0..returns.len()).map(|i| tower.anchors(map, i)).collect::<Result<Vec<_>>>()?;
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cdf.push(acc);
    }
    // enough levels that the cylinder is below double resolution
    let min_log = (0..returns.len())
        .map(|i| {
            let a = &tower.atoms[i];
            (tower.base.len() / a.interval.len()).ln()
        })
        .fold(f64::INFINITY, f64::min);
    let depth = ((40.0 / min_log.max(1e-3)).ceil() as usize).clamp(1, 64);
    Ok(BernoulliMeasure { weights, returns, discovered_mass: mass, mean_return, anchors, cdf, depth })
}

fn check_rate(z: f64) -> Result<()> {
    if z > 0.0 && z < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rate {z} must lie in (0, 1)")))
    }
}

/// A point drawn from `nu` with its atom sequence and per-block expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSample {
    pub x: f64,
    /// `P_0, P_1, ..`: the atoms of `x, F x, ..`.
    pub atoms: Vec<usize>,
    /// `log |(f^{R(P_k)})'(F^k x)|` per block.
    pub block_logs: Vec<f64>,
}

impl BernoulliMeasure {
    /// `nu` of the cylinder with the given atom sequence.
    pub fn cylinder(&self, seq: &[usize]) -> f64 {
        seq.iter().map(|&i| self.weights[i]).product()
    }

    /// `nu(F C) / nu(C)` for the cylinder `C = seq`: the Jacobian on `seq[0]`.
    pub fn jacobian(&self, seq: &[usize]) -> f64 {
        self.cylinder(&seq[1..]) / self.cylinder(seq)
    }

    /// `nu{R > n}`.
    pub fn tail(&self, n: usize) -> f64 {
        self.weights.iter().zip(&self.returns).filter(|(_, &r)| r > n).map(|(a, _)| a).sum()
    }

    pub fn draw_atom(&self, rng: &mut SplitMix64) -> usize {
        let u = uniform(rng);
        self.cdf.partition_point(|&c| c <= u).min(self.weights.len() - 1)
    }

    /// Realises `x` in the cylinder of `seq` by nested pullback of a
    /// uniform point of the base.
    pub fn realise(
        &self,
        map: &MapSystem<f64>,
        tower: &InducedMarkovMap,
        seq: &[usize],
        rng: &mut SplitMix64,
    ) -> Result<BernoulliSample> {
        let mut y = tower.base.lo + tower.base.len() * uniform(rng);
        let mut logs = vec![0.0; seq.len()];
        for (k, &i) in seq.iter().enumerate().rev() {
            let (x, ld) = tower.inverse_branch_on(map, &self.anchors[i], &[y])?[0];
            logs[k] = ld;
            y = tower.base.lift(tower.domain, x);
        }
        Ok(BernoulliSample { x: map.normalize(y), atoms: seq.to_vec(), block_logs: logs })
    }

    /// A `nu`-distributed point with `depth` blocks of its `F`-orbit.
    pub fn sample(&self, map: &MapSystem<f64>, tower: &InducedMarkovMap, rng: &mut SplitMix64) -> Result<BernoulliSample> {
        let seq: Vec<usize> = (0..self.depth).map(|_| self.draw_atom(rng)).collect();
        self.realise(map, tower, &seq, rng)
    }

    /// A point of the projected `f`-invariant probability: atom `P` with
    /// probability proportional to `a_P R(P)`, level `j < R(P)` uniformly,
    /// then `f^j` of a `nu|_P` point.
    pub fn sample_projected(&self, map: &MapSystem<f64>, tower: &InducedMarkovMap, rng: &mut SplitMix64) -> Result<f64> {
        let u = uniform(rng) * self.mean_return;
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, (a, &r)) in self.weights.iter().zip(&self.returns).enumerate() {
            acc += a * r as f64;
            if u < acc {
                pick = i;
                break;
            }
        }
        let j = (uniform(rng) * self.returns[pick] as f64) as usize;
        let mut seq = vec![pick];
        seq.extend((1..self.depth).map(|_| self.draw_atom(rng)));
        let mut x = self.realise(map, tower, &seq, rng)?.x;
        for _ in 0..j.min(self.returns[pick] - 1) {
            x = map.apply(x);
        }
        Ok(x)
    }
}
