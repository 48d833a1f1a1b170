//! Periodic repellers as fixed points of inverse-branch compositions.

use serde::{Deserialize, Serialize};

use crate::dynamics::MapSystem;
use crate::error::{Error, Result};
use crate::preballs::invert_branch;
use crate::region::Interval;

/// Cap on the number of itineraries tried per period.
const WORD_CAP: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    /// `q, f(q), ..`; `points[0]` lies in the search region.
    pub points: Vec<f64>,
    /// Branch of each orbit point.
    pub itinerary: Vec<usize>,
    /// `|(f^period)'(q)|`.
    pub multiplier: f64,
    /// Largest distance from a reference point to the orbit.
    pub density_eps: f64,
    /// The composed inverse branch maps the region into itself.
    pub self_mapped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepellerSearch {
    pub min_period: usize,
    pub max_period: usize,
    /// Accept only orbits at most this far from every reference point.
    pub eps_dense: Option<f64>,
    /// Points of the support used for the density test.
    pub reference: Vec<f64>,
}

impl RepellerSearch {
    pub fn period(p: usize) -> Self {
        Self { min_period: p, max_period: p, eps_dense: None, reference: Vec::new() }
    }
}

fn compose(map: &MapSystem<f64>, word: &[usize], y: f64) -> Option<f64> {
    let mut z = y;
    for &b in word.iter().rev() {
        z = invert_branch(&map.branches[b], z)?;
    }
    Some(z)
}

fn words(nb: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = nb.checked_pow(k as u32).unwrap_or(usize::MAX).min(WORD_CAP);
    (0..total).map(move |mut c| {
        let mut w = vec![0; k];
        for slot in w.iter_mut().rev() {
            *slot = c % nb;
            c /= nb;
        }
        w
    })
}

/// First periodic repeller (by period, then itinerary) with a point in
/// `region`, minimal period in range, multiplier above 1 and, if asked,
/// `eps`-dense against the reference sample.
pub fn find_periodic_repeller(map: &MapSystem<f64>, region: Interval<f64>, search: &RepellerSearch) -> Result<PeriodicOrbit> {
    let nb = map.branches.len();
    for k in search.min_period.max(1)..=search.max_period {
        for word in words(nb, k) {
            let ends = (compose(map, &word, region.lo), compose(map, &word, region.hi));
            let self_mapped = matches!(ends, (Some(a), Some(b))
                if region.contains(map.domain, a) && region.contains(map.domain, b));
            let mut q = region.center();
            let mut converged = false;
            for _ in 0..10_000 {
                let Some(next) = compose(map, &word, q) else { break };
                let step = map.dist(next, q);
                q = next;
                if step <= 1e-15 {
                    converged = true;
                    break;
                }
            }
            // settle into the last bits
            for _ in 0..64 {
                match compose(map, &word, q) {
                    Some(next) if next != q => q = next,
                    _ => break,
                }
            }
            if !converged || !region.contains(map.domain, q) {
                continue;
            }
            let mut points = vec![map.normalize(q)];
            let mut mult = 1.0;
            let mut z = q;
            for _ in 0..k {
                mult *= map.derivative(z).abs();
                z = map.apply(z);
                points.push(z);
            }
            if map.dist(z, q) > 1e-9 || !(mult > 1.0 + 1e-9) {
                continue;
            }
            points.pop();
            let minimal = (1..k).all(|d| k % d != 0 || map.dist(points[d], points[0]) > 1e-9);
            if !minimal {
                continue;
            }
            let density_eps = search
                .reference
                .iter()
                .map(|&r| points.iter().map(|&p| map.dist(p, r)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            if search.eps_dense.is_some_and(|e| density_eps > e) {
                continue;
            }
            let itinerary = points.iter().map(|&p| map.locate(p)).collect();
            return Ok(PeriodicOrbit { period: k, points, itinerary, multiplier: mult, density_eps, self_mapped });
        }
    }
    Err(Error::NotFound(format!(
        "no repelling orbit of period {}..={} in {:?}",
        search.min_period, search.max_period, region
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::maps::*;

    #[test]
    fn doubling_fixed_point() {
        let m = doubling::<f64>();
        let o = find_periodic_repeller(&m, Interval::new(0.0, 1.0), &RepellerSearch::period(1)).unwrap();
        assert!(o.points.len() == 1 && o.points[0].abs() < 1e-12);
        assert_eq!(o.multiplier, 2.0);
    }

    #[test]
    fn doubling_period_two() {
        let m = doubling::<f64>();
        let o = find_periodic_repeller(&m, Interval::new(0.0, 1.0), &RepellerSearch::period(2)).unwrap();
        let mut p = o.points.clone();
        p.sort_by(f64::total_cmp);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(o.multiplier, 4.0);
    }
}
