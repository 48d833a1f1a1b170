//! Chains of pre-images, nested balls and the finite partition built from a
//! nested cover of the whole domain.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DomainKind, MapSystem};
use crate::error::{Error, Result};
use crate::preballs::{preimages, Admissibility, TimeSource};
use crate::region::{is_linked, Interval, Region, LINK_TOL};

/// Margin used when deciding that an orbit point lies inside a target.
pub const LANDING_MARGIN: f64 = 1e-12;

/// A pre-image found while closing chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainElement {
    pub interval: Interval<f64>,
    pub order: usize,
    /// Index of the target it maps onto.
    pub target: usize,
    /// Index of the element it is linked with (`None`: the anchor).
    pub parent: Option<usize>,
}

/// A chain read back from the element log: anchor first, orders increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub anchor: Interval<f64>,
    pub elements: Vec<ChainElement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainClosure {
    pub anchor: Interval<f64>,
    /// `A★` in the anchor's lifted coordinates.
    pub region: Region<f64>,
    pub elements: Vec<ChainElement>,
    pub order_cap: usize,
    /// `sum_{n > cap} alpha_n(2r)` over admissible orders.
    pub tail_bound: f64,
}

impl ChainClosure {
    /// Chains ending at each element, reconstructed through parent links.
    pub fn chains(&self) -> Vec<Chain> {
        (0..self.elements.len())
            .map(|mut i| {
                let mut v = vec![self.elements[i].clone()];
                while let Some(p) = self.elements[i].parent {
                    v.push(self.elements[p].clone());
                    i = p;
                }
                v.reverse();
                Chain { anchor: self.anchor, elements: v }
            })
            .collect()
    }
}

/// Orbit `z_0..z_k` of `x`, stopping early at a critical hit.
pub(crate) fn orbit_points(map: &MapSystem<f64>, x: f64, n: usize) -> Vec<f64> {
    let mut pts = Vec::with_capacity(n + 1);
    let mut z = map.normalize(x);
    for _ in 0..=n {
        let zs = map.snap(z);
        if map.crit_dist(zs) <= f64::EPSILON * 4.0 {
            break;
        }
        pts.push(zs);
        z = map.step(zs).next;
    }
    pts
}

/// Tail of the contraction over admissible orders beyond `cap`.
pub fn admissible_tail(adm: &Admissibility<f64>, cap: usize, r: f64) -> f64 {
    match adm.times {
        TimeSource::Multiples { ell } => adm.alpha.every(ell).tail_bound(cap / ell, r),
        _ => adm.alpha.tail_bound(cap, r),
    }
}

/// Sum of the contraction over admissible orders (the nested-ball hypothesis).
pub fn admissible_sum(adm: &Admissibility<f64>, r: f64) -> f64 {
    match adm.times {
        TimeSource::Multiples { ell } => adm.alpha.every(ell).total_bound(r),
        _ => adm.alpha.total_bound(r),
    }
}

/// Smallest cap with admissible tail `< 1e-6 r` at radius `2r`.
pub fn default_order_cap(adm: &Admissibility<f64>, r: f64) -> usize {
    (1..=4096).find(|&n| admissible_tail(adm, n, 2.0 * r) < 1e-6 * r).unwrap_or(4096)
}

/// Admissible pre-images of one of `targets` that contain the point `e`
/// in their interior, of orders in `(min_order, cap]`.
fn preimages_through(
    map: &MapSystem<f64>,
    e: f64,
    targets: &[Interval<f64>],
    adm: &Admissibility<f64>,
    min_order: usize,
    cap: usize,
) -> Result<Vec<(usize, usize, Interval<f64>)>> {
    let dom = map.domain;
    let pts = orbit_points(map, e, cap);
    let mut out = Vec::new();
    for n in (min_order + 1)..pts.len() {
        if !adm.order_allowed(n) {
            continue;
        }
        let y = pts[n];
        for (j, t) in targets.iter().enumerate() {
            if !t.contains_interior(dom, y, LANDING_MARGIN) {
                continue;
            }
            if let Some(c) = adm.check(map, &pts[..=n], t)? {
                let v = match dom {
                    DomainKind::Circle => Interval::on(dom, e + c.lo, e + c.hi),
                    DomainKind::Interval => Interval::new((e + c.lo).max(0.0), (e + c.hi).min(1.0)),
                };
                out.push((n, j, v));
            }
        }
    }
    Ok(out)
}

fn key(order: usize, v: &Interval<f64>) -> (usize, i64, i64) {
    (order, (v.lo * 1e11).round() as i64, (v.hi * 1e11).round() as i64)
}

/// Chain closure of `targets[anchor]` against pre-images of all `targets`.
///
/// A pre-image linked with an interval `U` must contain an endpoint of `U`
/// in its interior, so it is found by following the orbits of `U`'s
/// endpoints; the closure therefore only ever iterates endpoints.
pub fn enumerate_chain_closure(
    map: &MapSystem<f64>,
    targets: &[Interval<f64>],
    anchor: usize,
    adm: &Admissibility<f64>,
    cap: usize,
) -> Result<ChainClosure> {
    let dom = map.domain;
    let a = targets[anchor];
    let r = a.len() / 2.0;
    let shifts: &[f64] = if dom == DomainKind::Circle { &[-1.0, 0.0, 1.0] } else { &[0.0] };
    let mut elements: Vec<ChainElement> = Vec::new();
    let mut seen = BTreeSet::new();
    // union of removed closures, in A's lift
    let mut removed: Region<f64> = Region::new();
    let mut queue: VecDeque<(Option<usize>, Interval<f64>, usize)> = VecDeque::new();
    queue.push_back((None, a, 0));
    while let Some((parent, u, m)) = queue.pop_front() {
        for e in [u.lo, u.hi] {
            for (n, j, v) in preimages_through(map, e, targets, adm, m, cap)? {
                if !is_linked(dom, &v, &u) {
                    continue;
                }
                if v.within(dom, &a, -LINK_TOL) && v.len() >= a.len() {
                    return Err(Error::HypothesisFail("anchor lies inside one of its pre-images".into()));
                }
                if !seen.insert(key(n, &v)) {
                    continue;
                }
                // later chain links stay within `reach` of v
                let reach = admissible_tail(adm, n, 2.0 * r);
                let lifts: Vec<Interval<f64>> = shifts
                    .iter()
                    .map(|s| Interval::new(v.lo + s, v.hi + s))
                    .filter(|w| w.hi + reach > a.lo && w.lo - reach < a.hi)
                    .collect();
                if lifts.is_empty() {
                    continue;
                }
                let covered = lifts.iter().all(|w| {
                    removed.component(w.lo - reach).is_some_and(|c| c.hi >= w.hi + reach)
                });
                if covered {
                    continue;
                }
                for w in &lifts {
                    removed.insert(*w, 0.0);
                }
                elements.push(ChainElement { interval: v, order: n, target: j, parent });
                if elements.len() > 200_000 {
                    return Err(Error::CapExceeded("more than 2e5 chain elements".into()));
                }
                queue.push_back((Some(elements.len() - 1), v, n));
            }
        }
    }
    // A★ = A minus the closure of every element
    let mut region = Region::from_interval(a);
    for p in removed.parts() {
        region.remove(*p);
    }
    let tail = admissible_tail(adm, cap, 2.0 * r);
    if elements.iter().any(|e| e.order + chain_step(adm) > cap) && tail > 1e-6 * r {
        return Err(Error::CapExceeded(format!("additions continue at order {cap}; tail bound {tail:e}")));
    }
    Ok(ChainClosure { anchor: a, region, elements, order_cap: cap, tail_bound: tail })
}

fn chain_step(adm: &Admissibility<f64>) -> usize {
    match adm.times {
        TimeSource::Multiples { ell } => ell,
        _ => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedBall {
    pub center: f64,
    pub radius: f64,
    /// Component of `A★` containing the centre.
    pub core: Interval<f64>,
    pub order_cap: usize,
    pub tail_bound: f64,
    /// `sum_n alpha_n(r)` over admissible orders; below `r/4` by construction.
    pub contraction_sum: f64,
    pub contains_half_ball: bool,
    pub chain_elements: usize,
}

/// `B★_r(p)`: the component of `A★` containing `p`, for `A = B_r(p)`.
pub fn build_nested_ball(
    map: &MapSystem<f64>,
    p: f64,
    r: f64,
    adm: &Admissibility<f64>,
    cap: Option<usize>,
) -> Result<NestedBall> {
    let sum = admissible_sum(adm, r);
    if !(sum < r / 4.0) {
        return Err(Error::HypothesisFail(format!("sum of contractions {sum:e} is not below r/4 = {:e}", r / 4.0)));
    }
    if r > adm.radius * (1.0 + 1e-12) {
        return Err(Error::HypothesisFail(format!("radius {r} exceeds the admissibility radius {}", adm.radius)));
    }
    let cap = cap.unwrap_or_else(|| default_order_cap(adm, r));
    let a = Interval::ball(map.domain, p, r);
    let cl = enumerate_chain_closure(map, &[a], 0, adm, cap)?;
    let pl = a.lift(map.domain, p);
    let core = cl
        .region
        .component(pl)
        .ok_or_else(|| Error::HypothesisFail("the centre is covered by the chain closure".into()))?;
    let contains_half_ball = core.lo <= pl - r / 2.0 + 1e-12 && core.hi >= pl + r / 2.0 - 1e-12;
    Ok(NestedBall {
        center: p,
        radius: r,
        core,
        order_cap: cap,
        tail_bound: cl.tail_bound,
        contraction_sum: sum,
        contains_half_ball,
        chain_elements: cl.elements.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NestedReport {
    pub nested: bool,
    /// Linked pre-images found, as `(order, interval)`.
    pub linked: Vec<(usize, Interval<f64>)>,
    /// Pairs of intersecting pre-images that are not nested or share an order.
    pub corollary_violations: usize,
    pub preimages_checked: usize,
}

/// Whether no pre-image of `v` of order `1..=n_check` is linked with `v`.
///
/// Without `adm` every homeomorphic pre-image counts and the backward tree
/// is enumerated in full, which also checks that intersecting pre-images are
/// nested with distinct orders.  With `adm` only admissible pre-images count.
pub fn verify_nested(
    map: &MapSystem<f64>,
    v: &Interval<f64>,
    n_check: usize,
    adm: Option<&Admissibility<f64>>,
) -> Result<NestedReport> {
    let dom = map.domain;
    let mut rep = NestedReport { nested: true, ..Default::default() };
    if let Some(adm) = adm {
        for e in [v.lo, v.hi] {
            for (n, _, p) in preimages_through(map, e, std::slice::from_ref(v), adm, 0, n_check)? {
                rep.preimages_checked += 1;
                if v.within(dom, &p, 0.0) && p.len() > v.len() {
                    return Err(Error::HypothesisFail("interval lies inside one of its pre-images".into()));
                }
                if is_linked(dom, &p, v) {
                    rep.nested = false;
                    rep.linked.push((n, p));
                }
            }
        }
        return Ok(rep);
    }
    let mut all: Vec<(usize, Interval<f64>)> = Vec::new();
    let mut layer = vec![*v];
    for n in 1..=n_check {
        let mut next = Vec::new();
        for t in &layer {
            next.extend(preimages(map, t));
        }
        if next.len() > 1 << 22 {
            return Err(Error::CapExceeded(format!("more than 2^22 pre-images at order {n}")));
        }
        for p in &next {
            if v.within(dom, p, 0.0) && p.len() > v.len() {
                return Err(Error::HypothesisFail("interval lies inside one of its pre-images".into()));
            }
            if is_linked(dom, p, v) {
                rep.nested = false;
                rep.linked.push((n, *p));
            }
            all.push((n, *p));
        }
        layer = next;
    }
    rep.preimages_checked = all.len();
    rep.corollary_violations = nesting_violations(dom, &mut all);
    Ok(rep)
}

/// Intersecting pairs that are neither nested nor of distinct orders.
fn nesting_violations(dom: DomainKind, all: &mut Vec<(usize, Interval<f64>)>) -> usize {
    if dom == DomainKind::Circle {
        let extra: Vec<_> =
            all.iter().filter(|(_, p)| p.hi > 1.0).map(|(n, p)| (*n, Interval::new(p.lo - 1.0, p.hi - 1.0))).collect();
        all.extend(extra);
    }
    all.sort_by(|a, b| a.1.lo.total_cmp(&b.1.lo));
    let tol = LINK_TOL;
    let mut bad = 0;
    for i in 0..all.len() {
        let (ni, pi) = all[i];
        for &(nj, pj) in &all[i + 1..] {
            if pj.lo >= pi.hi - tol {
                break;
            }
            let nested = pj.within(DomainKind::Interval, &pi, tol) || pi.within(DomainKind::Interval, &pj, tol);
            if !nested || ni == nj {
                bad += 1;
            }
        }
    }
    bad
}

/// Greedy maximal `r/2`-separated set scanned from 0 on a grid of step `r/64`.
pub fn separated_centers(dom: DomainKind, r: f64) -> Vec<f64> {
    let step = r / 64.0;
    let sep = r / 2.0;
    let steps = (1.0 / step).floor() as usize;
    let dist = |a: f64, b: f64| {
        let d = (a - b).abs();
        match dom {
            DomainKind::Circle => d.min(1.0 - d),
            DomainKind::Interval => d,
        }
    };
    let mut c: Vec<f64> = Vec::new();
    for k in 0..=steps {
        let x = k as f64 * step;
        if dom == DomainKind::Circle && x >= 1.0 {
            break;
        }
        if c.iter().all(|&q| dist(q, x) > sep) {
            c.push(x);
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalAtom {
    /// Open interval (lifted on the circle).
    pub interval: Interval<f64>,
    /// Indices `i` of the cover elements containing the atom.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalPartition {
    pub domain: DomainKind,
    pub r: f64,
    pub centers: Vec<f64>,
    /// `Delta_i`: component of `A_i★` containing `q_i` (lifted near `q_i`).
    pub cover: Vec<Interval<f64>>,
    pub atoms: Vec<GlobalAtom>,
    pub ell: usize,
    pub order_cap: usize,
    pub tail_bound: f64,
    /// Membership sets that occur on more than one interval; such sets are
    /// split into one atom per interval.
    pub split_sets: usize,
}

impl GlobalPartition {
    /// Index of the atom whose interior contains `x` with margin `m`.
    pub fn atom_of(&self, x: f64, m: f64) -> Option<usize> {
        // atoms are sorted by lo; a linear scan is fine for tens of atoms
        self.atoms.iter().position(|a| a.interval.contains_interior(self.domain, x, m))
    }
}

/// Finite partition from the nested cover of a maximal `r/2`-separated set.
pub fn build_global_partition(map: &MapSystem<f64>, r: f64, adm: &Admissibility<f64>, cap: Option<usize>) -> Result<GlobalPartition> {
    let dom = map.domain;
    let ell = chain_step(adm);
    for rt in [r, 4.0 * r] {
        let s = admissible_sum(adm, rt);
        if !(s <= rt / 8.0 * (1.0 + 1e-12)) {
            return Err(Error::HypothesisFail(format!("sum of contractions at {rt} is {s:e}, above {:e}", rt / 8.0)));
        }
    }
    if r > adm.radius * (1.0 + 1e-12) {
        return Err(Error::HypothesisFail(format!("radius {r} exceeds the admissibility radius {}", adm.radius)));
    }
    let cap = cap.unwrap_or_else(|| default_order_cap(adm, r));
    let centers = separated_centers(dom, r);
    let balls: Vec<Interval<f64>> = centers.iter().map(|&q| Interval::ball(dom, q, r)).collect();
    let mut cover = Vec::with_capacity(centers.len());
    let mut tail: f64 = 0.0;
    for (i, &q) in centers.iter().enumerate() {
        let cl = enumerate_chain_closure(map, &balls, i, adm, cap)?;
        tail = tail.max(cl.tail_bound);
        let ql = balls[i].lift(dom, q);
        let comp = cl
            .region
            .component(ql)
            .ok_or_else(|| Error::HypothesisFail(format!("centre {q} is covered by its chain closure")))?;
        cover.push(comp);
    }
    let (atoms, split_sets) = membership_atoms(dom, &cover);
    Ok(GlobalPartition { domain: dom, r, centers, cover, atoms, ell, order_cap: cap, tail_bound: tail, split_sets })
}

/// Atoms `P^S`: points whose membership set in the cover is exactly `S`.
fn membership_atoms(dom: DomainKind, cover: &[Interval<f64>]) -> (Vec<GlobalAtom>, usize) {
    let norm = |x: f64| match dom {
        DomainKind::Circle => x - x.floor(),
        DomainKind::Interval => x,
    };
    let mut cuts: Vec<f64> = cover.iter().flat_map(|c| [norm(c.lo), norm(c.hi)]).collect();
    if dom == DomainKind::Interval {
        cuts.push(0.0);
        cuts.push(1.0);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let members_at = |x: f64| -> Vec<usize> {
        cover.iter().enumerate().filter(|(_, c)| c.contains_interior(dom, x, 0.0)).map(|(i, _)| i).collect()
    };
    let mut pieces: Vec<(Interval<f64>, Vec<usize>)> = Vec::new();
    let k = cuts.len();
    let count = if dom == DomainKind::Circle { k } else { k - 1 };
    for i in 0..count {
        let lo = cuts[i];
        let hi = if i + 1 < k { cuts[i + 1] } else { cuts[0] + 1.0 };
        let m = members_at(norm((lo + hi) / 2.0));
        // merge with the previous piece when membership is unchanged
        if let Some(last) = pieces.last_mut() {
            if last.1 == m && (last.0.hi - lo).abs() < 1e-13 {
                last.0.hi = hi;
                continue;
            }
        }
        pieces.push((Interval::new(lo, hi), m));
    }
    if dom == DomainKind::Circle && pieces.len() > 1 {
        let first = pieces[0].clone();
        let last = pieces.last().unwrap().clone();
        if first.1 == last.1 && (last.0.hi - 1.0 - first.0.lo).abs() < 1e-13 {
            pieces.pop();
            pieces[0].0 = Interval::new(last.0.lo, first.0.hi + 1.0);
        }
    }
    let mut sets: Vec<&Vec<usize>> = pieces.iter().map(|p| &p.1).collect();
    sets.sort();
    let total = sets.len();
    sets.dedup();
    let split = total - sets.len();
    let mut atoms: Vec<GlobalAtom> = pieces
        .into_iter()
        .map(|(iv, members)| GlobalAtom { interval: Interval::on(dom, iv.lo, iv.hi), members })
        .collect();
    atoms.sort_by(|a, b| a.interval.lo.total_cmp(&b.interval.lo));
    (atoms, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::ZoomingContraction;
    use crate::dynamics::maps::*;

    fn doubling_cubed(radius: f64) -> Admissibility<f64> {
        Admissibility { alpha: ZoomingContraction::power(0.5), radius, times: TimeSource::Multiples { ell: 3 } }
    }

    #[test]
    fn nice_interval_is_nested() {
        let d = doubling::<f64>();
        let rep = verify_nested(&d, &Interval::new(1.0 / 3.0, 2.0 / 3.0), 12, None).unwrap();
        assert!(rep.nested, "{:?}", &rep.linked[..rep.linked.len().min(3)]);
        assert_eq!(rep.corollary_violations, 0);
        let rep = verify_nested(&d, &Interval::new(0.3, 0.6), 12, None).unwrap();
        assert!(!rep.nested);
    }

    #[test]
    fn doubling_nested_ball_contains_half_ball() {
        let d = doubling::<f64>();
        let nb = build_nested_ball(&d, 0.5, 0.05, &doubling_cubed(0.05), Some(15)).unwrap();
        assert!(nb.core.lo <= 0.475 && nb.core.hi >= 0.525, "{:?}", nb.core);
        assert!(nb.contains_half_ball);
    }

    #[test]
    fn closure_length_bound() {
        let d = doubling::<f64>();
        let a = Interval::ball(DomainKind::Circle, 0.5, 0.1);
        let cl = enumerate_chain_closure(&d, &[a], 0, &doubling_cubed(0.1), 20).unwrap();
        let removed: f64 = cl.elements.iter().map(|e| e.interval.len()).sum();
        assert!(removed <= 2.0 * 0.2 / 7.0 + 1e-12, "{removed}");
        // below the first admissible order nothing is removed
        let cl = enumerate_chain_closure(&d, &[a], 0, &doubling_cubed(0.1), 2).unwrap();
        assert!(cl.elements.is_empty());
    }

    #[test]
    fn separated_set_on_circle() {
        let c = separated_centers(DomainKind::Circle, 0.1);
        assert!((10..=20).contains(&c.len()), "{}", c.len());
    }
}
