//! Return frequencies of an orbit to its own induced orbit, and the
//! counting bound that controls them.

use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::error::{Error, Result};
use crate::tower::InducedMarkovMap;

/// Both sides of the return-frequency identity along one orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftabilityReport {
    /// `n` up to which the `F`-orbit is known (less than requested if it
    /// fell into an undiscovered part of the base).
    pub horizon: usize,
    pub escaped: bool,
    /// `membership[n] = #{0 <= j < n : f^j x in O_F^+(x)}`, by direct scan.
    pub membership: Vec<usize>,
    /// `cumulative[n] = #{j >= 0 : R(x) + .. + R(F^j x) < n}`.
    pub cumulative: Vec<usize>,
    /// `membership[n] == cumulative[n] + 1` for every `1 <= n <= horizon`.
    pub identity_holds: bool,
    /// `membership[horizon] / horizon`.
    pub frequency: f64,
    /// `(n, membership[n] / n)` on a doubling grid of `n`.
    pub profile: Vec<(usize, f64)>,
}

/// Runs the `f`-orbit of `x` for `n_max` steps and the `F`-orbit alongside.
///
/// `F^k x` is produced by iterating `f` exactly `R` times, so orbit points
/// are bitwise comparable and the membership side is a set lookup.
pub fn liftability_frequency(map: &MapSystem<f64>, tower: &InducedMarkovMap, x: f64, n_max: usize) -> Result<LiftabilityReport> {
    if tower.atom_at(x).is_none() {
        return Err(Error::InvalidArgument(format!("{x} is not in a tower atom")));
    }
    // returns along the F-orbit until the partial sums pass n_max
    let mut lifted = std::collections::HashSet::new();
    let mut rets = Vec::new();
    let mut y = x;
    let mut total = 0;
    let mut escaped = false;
    loop {
        lifted.insert(y.to_bits());
        if total >= n_max {
            break;
        }
        match tower.apply(map, y) {
            Some((i, z)) => {
                rets.push(tower.atoms[i].ret);
                total += tower.atoms[i].ret;
                y = z;
            }
            None => {
                escaped = true;
                break;
            }
        }
    }
    // past the last known return, membership is undecided
    let horizon = if escaped { total.min(n_max) } else { n_max };
    let mut membership = vec![0; horizon + 1];
    let mut z = x;
    for j in 0..horizon {
        membership[j + 1] = membership[j] + usize::from(lifted.contains(&z.to_bits()));
        z = map.apply(z);
    }
    let mut cumulative = vec![0; horizon + 1];
    for (n, c) in cumulative.iter_mut().enumerate() {
        let mut s = 0;
        for &r in &rets {
            s += r;
            if s < n {
                *c += 1;
            } else {
                break;
            }
        }
    }
    let identity_holds = (1..=horizon).all(|n| membership[n] == cumulative[n] + 1);
    let mut profile = Vec::new();
    let mut n = 1;
    while n <= horizon {
        profile.push((n, membership[n] as f64 / n as f64));
        n *= 2;
    }
    let frequency = if horizon > 0 { membership[horizon] as f64 / horizon as f64 } else { 0.0 };
    Ok(LiftabilityReport { horizon, escaped, membership, cumulative, identity_holds, frequency, profile })
}

/// An orbit `x_0 = x, x_1, .., x_N` described by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingScenario {
    /// `in_g[i][j]`: `x_i` lies in `G_j` (`j = 0..=N - i`).
    pub in_g: Vec<Vec<bool>>,
    /// `in_b[i]`: `x_i` lies in `B`.
    pub in_b: Vec<bool>,
    /// `g(x_i)` for the points visited by `T`, keyed by position.
    pub g: Vec<Option<usize>>,
}

impl CountingScenario {
    pub fn horizon(&self) -> usize {
        self.in_b.len() - 1
    }

    fn g_at(&self, i: usize, j: usize) -> bool {
        self.in_g.get(i).and_then(|r| r.get(j)).copied().unwrap_or(false)
    }

    /// The nesting hypothesis, the range of `g`, and that `T` stays in `B`.
    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        if self.in_g.len() != n + 1 || self.g.len() != n + 1 || !self.in_b[0] {
            return Err(Error::InvalidScenario("shape mismatch or x outside B".into()));
        }
        for i in 0..=n {
            for m in 0..=n - i {
                if self.g_at(i, m) {
                    for j in 0..m {
                        if !self.g_at(i + j, m - j) {
                            return Err(Error::InvalidScenario(format!(
                                "x_{i} in G_{m} but x_{} not in G_{}",
                                i + j,
                                m - j
                            )));
                        }
                    }
                }
            }
        }
        let mut i = 0;
        while let Some(g) = self.g[i] {
            let bound = (1..=n - i).find(|&j| self.g_at(i, j) && self.in_b[i + j]);
            if g == 0 || bound.is_some_and(|b| g > b) {
                return Err(Error::InvalidScenario(format!("g(x_{i}) = {g} outside [1, {bound:?}]")));
            }
            if i + g > n {
                break;
            }
            if !self.in_b[i + g] {
                return Err(Error::InvalidScenario(format!("T leaves B at x_{}", i + g)));
            }
            i += g;
        }
        Ok(())
    }

    /// `#Gamma_n = #{1 <= j <= n : x in G_j, x_j in B}`.
    pub fn gamma(&self, n: usize) -> usize {
        (1..=n).filter(|&j| self.g_at(0, j) && self.in_b[j]).count()
    }

    /// `#Sigma_n = #{j >= 0 : g(x) + .. + g(T^j x) <= n}`.
    pub fn sigma(&self, n: usize) -> usize {
        let mut i = 0;
        let mut s = 0;
        let mut count = 0;
        while let Some(g) = self.g.get(i).copied().flatten() {
            s += g;
            if s > n {
                break;
            }
            count += 1;
            i += g;
        }
        count
    }
}

/// `#Gamma_n <= #Sigma_n` for every `n <= n_max`.
pub fn counting_inequality_check(s: &CountingScenario, n_max: usize) -> Result<bool> {
    s.validate()?;
    let n_max = n_max.min(s.horizon());
    Ok((0..=n_max).all(|n| s.gamma(n) <= s.sigma(n)))
}

/// A random scenario satisfying the hypotheses: `G` sets are closed under
/// the nesting rule, and `g` is drawn in its admissible range.
pub fn random_scenario(rng: &mut crate::rng::SplitMix64, n: usize, p_g: f64, p_b: f64) -> CountingScenario {
    use crate::rng::uniform;
    let mut in_g: Vec<Vec<bool>> = (0..=n).map(|i| vec![false; n - i + 1]).collect();
    for i in 0..=n {
        for m in 1..=n - i {
            if uniform(rng) < p_g {
                for j in 0..m {
                    in_g[i + j][m - j] = true;
                }
            }
        }
    }
    let mut in_b: Vec<bool> = (0..=n).map(|_| uniform(rng) < p_b).collect();
    in_b[0] = true;
    let mut g = vec![None; n + 1];
    let mut i = 0;
    loop {
        let bound = (1..=n - i).find(|&j| in_g[i][j] && in_b[i + j]);
        // with no admissible time, T jumps to the next point of B
        let next_b = (i + 1..=n).find(|&k| in_b[k]).map(|k| k - i);
        let step = match (bound, next_b) {
            (Some(b), _) => {
                // any value up to the bound that still lands in B
                let opts: Vec<usize> = (1..=b).filter(|&j| in_b[i + j]).collect();
                opts[(uniform(rng) * opts.len() as f64) as usize % opts.len()]
            }
            (None, Some(k)) => k,
            (None, None) => break,
        };
        g[i] = Some(step);
        i += step;
    }
    CountingScenario { in_g, in_b, g }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_case() {
        let n = 12;
        let s = CountingScenario {
            in_g: (0..=n).map(|i| vec![true; n - i + 1]).collect(),
            in_b: vec![true; n + 1],
            g: (0..=n).map(|i| (i < n).then_some(1)).collect(),
        };
        assert!(counting_inequality_check(&s, n).unwrap());
        assert!((0..=n).all(|k| s.gamma(k) == k && s.sigma(k) == k));
    }

    #[test]
    fn broken_nesting_is_rejected() {
        let n = 4;
        let mut in_g: Vec<Vec<bool>> = (0..=n).map(|i| vec![false; n - i + 1]).collect();
        in_g[0][3] = true;
        let s = CountingScenario { in_g, in_b: vec![true; n + 1], g: vec![None; n + 1] };
        assert!(matches!(counting_inequality_check(&s, n), Err(Error::InvalidScenario(_))));
    }
}
