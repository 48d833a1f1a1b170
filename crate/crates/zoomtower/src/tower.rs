//! Induced Markov maps: first-return towers over a nested interval and the
//! global induced map over a finite partition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DomainKind, MapSystem};
use crate::error::{Error, Result};
use crate::nested::{orbit_points, verify_nested, GlobalPartition, LANDING_MARGIN};
use crate::preballs::{pull_back_samples, Admissibility, AnchoredLap, TimeSource};
use crate::region::Interval;
use crate::zooming::{detect_hyperbolic_times, is_hyperbolic_time, HyperbolicParams};

/// How often a gap is halved after its seed finds no return.
const DEAD_SPLITS: usize = 3;

/// Absolute slack for comparing atom endpoints found from different seeds.
pub const ENDPOINT_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Local,
    Global,
}

/// A return found from a point: the pre-image of `targets[target]` of
/// order `ret` containing the point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Return {
    pub ret: usize,
    pub target: usize,
    pub interval: Interval<f64>,
    pub itinerary: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerAtom {
    pub interval: Interval<f64>,
    /// Return time in steps of `f`.
    pub ret: usize,
    /// Index into the tower's image list.
    pub image: usize,
    pub itinerary: Vec<usize>,
    /// Point of the atom whose orbit anchors the branch.
    pub seed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerCaps {
    pub r_max: usize,
    /// Uniform seeds in the first round.
    pub seeds: usize,
    /// Gap seeding stops once the unresolved mass is below this.
    pub mass_target: f64,
    pub max_atoms: usize,
    pub max_rounds: usize,
}

impl Default for TowerCaps {
    fn default() -> Self {
        Self { r_max: 30, seeds: 1 << 12, mass_target: 1e-4, max_atoms: 1 << 20, max_rounds: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedMarkovMap {
    pub kind: BaseKind,
    pub domain: DomainKind,
    /// Where atoms live: the nested interval, or the whole domain.
    pub base: Interval<f64>,
    /// Possible images `F(P)`: `[Delta]` for local towers, the partition atoms otherwise.
    pub images: Vec<Interval<f64>>,
    /// Atoms sorted by left end.
    pub atoms: Vec<TowerAtom>,
    pub ell: usize,
    pub r_max: usize,
    pub admissibility: Admissibility<f64>,
    /// Lebesgue mass of the part of `base` not covered by discovered atoms.
    pub unresolved_mass: f64,
    /// Found atoms overlapping an earlier one (dropped).
    pub conflicts: usize,
    /// Atoms whose interior meets more than one image element.
    pub straddles: usize,
    pub seeds_tried: usize,
}

impl InducedMarkovMap {
    /// Index of the atom containing `x` (closed, first match).
    pub fn atom_at(&self, x: f64) -> Option<usize> {
        let xs: &[f64] = match self.domain {
            DomainKind::Circle => &[x - x.floor(), x - x.floor() + 1.0, x - x.floor() - 1.0],
            DomainKind::Interval => &[x],
        };
        for &y in xs {
            let k = self.atoms.partition_point(|a| a.interval.lo <= y);
            // candidates: the atom starting at or before y
            for i in k.saturating_sub(2)..k {
                let iv = self.atoms[i].interval;
                if iv.lo <= y && y <= iv.hi {
                    return Some(i);
                }
            }
        }
        None
    }

    /// `F(x) = f^R(x)` computed by plain iteration, with the atom index.
    pub fn apply(&self, map: &MapSystem<f64>, x: f64) -> Option<(usize, f64)> {
        let i = self.atom_at(x)?;
        let mut z = x;
        for _ in 0..self.atoms[i].ret {
            z = map.apply(z);
        }
        Some((i, z))
    }

    pub fn covered_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.interval.len()).sum()
    }

    /// `sum |P| R(P) / sum |P|`.
    pub fn mean_return_lebesgue(&self) -> f64 {
        let m = self.covered_mass();
        self.atoms.iter().map(|a| a.interval.len() * a.ret as f64).sum::<f64>() / m
    }

    pub fn max_return(&self) -> usize {
        self.atoms.iter().map(|a| a.ret).max().unwrap_or(0)
    }

    /// Anchor orbit `z_0..z_R` of an atom.
    pub fn anchors(&self, map: &MapSystem<f64>, i: usize) -> Result<Vec<f64>> {
        let a = &self.atoms[i];
        let pts = orbit_points(map, a.seed, a.ret);
        if pts.len() != a.ret + 1 {
            return Err(Error::Dynamics(crate::dynamics::DynamicsError::CriticalHit {
                index: pts.len(),
                point: pts.last().copied().unwrap_or(a.seed),
            }));
        }
        Ok(pts)
    }

    /// Inverse branch of atom `i` at points `ys` of its image: the points
    /// `x` with `F(x) = y`, and `log |(f^R)'(x)|`.
    pub fn inverse_branch(&self, map: &MapSystem<f64>, i: usize, ys: &[f64]) -> Result<Vec<(f64, f64)>> {
        let anchors = self.anchors(map, i)?;
        self.inverse_branch_on(map, &anchors, ys)
    }

    pub fn inverse_branch_on(&self, map: &MapSystem<f64>, anchors: &[f64], ys: &[f64]) -> Result<Vec<(f64, f64)>> {
        let n = anchors.len() - 1;
        let zn = anchors[n];
        let offs: Vec<f64> = ys.iter().map(|&y| lift_offset(self.domain, y - zn)).collect();
        let pb = pull_back_samples(map, anchors, &offs)?;
        let mut out = Vec::with_capacity(ys.len());
        for s in 0..ys.len() {
            let mut lj = 0.0;
            for k in 0..n {
                let lap = AnchoredLap::new(map, anchors[k]);
                lj += lap.log_slope(pb.levels[k][s]).ok_or(Error::PrecisionLoss { level: k })?;
            }
            out.push((anchors[0] + pb.levels[0][s], lj));
        }
        Ok(out)
    }

    /// Offset-precise `F` at points of atom `i`: returns `f^R(x)` unreduced
    /// relative to the image's lift.
    pub fn forward_on(&self, map: &MapSystem<f64>, anchors: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
        let n = anchors.len() - 1;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut e = lift_offset(self.domain, x - anchors[0]);
            for (k, &z) in anchors[..n].iter().enumerate() {
                e = AnchoredLap::new(map, z).delta(e).ok_or(Error::PrecisionLoss { level: k })?;
            }
            out.push(anchors[n] + e);
        }
        Ok(out)
    }
}

#[inline]
fn lift_offset(dom: DomainKind, d: f64) -> f64 {
    match dom {
        DomainKind::Circle => d - (d + 0.5).floor(),
        DomainKind::Interval => d,
    }
}

/// Where an orbit point falls relative to the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Landing {
    Inside(usize),
    /// Within the landing margin of a target boundary.
    Edge,
    Outside,
}

/// Scans `n = 1..=r_max` for the first admissible return of `x` to one of
/// `targets`; `locate` classifies each landing point.  A landing on a target
/// boundary ends the scan without a return: past it the float orbit only
/// follows rounding drift along the boundary orbit.
pub fn scan_return(
    map: &MapSystem<f64>,
    x: f64,
    targets: &[Interval<f64>],
    locate: &(dyn Fn(f64) -> Landing + Sync),
    adm: &Admissibility<f64>,
    r_max: usize,
    inside: Option<&Interval<f64>>,
) -> Result<Option<Return>> {
    let pts = orbit_points(map, x, r_max);
    let dom = map.domain;
    for n in 1..pts.len() {
        if !adm.order_allowed(n) {
            continue;
        }
        let j = match locate(pts[n]) {
            Landing::Inside(j) => j,
            Landing::Edge => return Ok(None),
            Landing::Outside => continue,
        };
        let Some(c) = adm.check(map, &pts[..=n], &targets[j])? else { continue };
        let v = match dom {
            DomainKind::Circle => Interval::on(dom, pts[0] + c.lo, pts[0] + c.hi),
            DomainKind::Interval => Interval::new((pts[0] + c.lo).max(0.0), (pts[0] + c.hi).min(1.0)),
        };
        if let Some(d) = inside {
            if !v.within(dom, d, 1e-12) {
                continue;
            }
        }
        if !v.contains_interior(dom, x, 0.0) {
            return Ok(None);
        }
        let itinerary = pts[..n].iter().map(|&z| map.locate(z)).collect();
        return Ok(Some(Return { ret: n, target: j, interval: v, itinerary }));
    }
    Ok(None)
}

/// First admissible return of `x` to the nested interval `delta`.
pub fn first_return_time(
    map: &MapSystem<f64>,
    x: f64,
    delta: &Interval<f64>,
    adm: &Admissibility<f64>,
    r_max: usize,
) -> Result<Return> {
    if !delta.contains(map.domain, x) {
        return Err(Error::InvalidArgument(format!("{x} is not in the base interval")));
    }
    let dom = map.domain;
    let d = *delta;
    let locate = move |y: f64| {
        if d.contains_interior(dom, y, LANDING_MARGIN) {
            Landing::Inside(0)
        } else if d.contains_interior(dom, y, -LANDING_MARGIN) {
            Landing::Edge
        } else {
            Landing::Outside
        }
    };
    scan_return(map, x, std::slice::from_ref(delta), &locate, adm, r_max, Some(delta))?.ok_or(Error::NoReturn(r_max))
}

/// First admissible return of `x` to an atom of the partition, at orders
/// that are multiples of the partition's `ell`.
pub fn global_return(
    map: &MapSystem<f64>,
    x: f64,
    p0: &GlobalPartition,
    adm: &Admissibility<f64>,
    r_max: usize,
) -> Result<Return> {
    let targets: Vec<Interval<f64>> = p0.atoms.iter().map(|a| a.interval).collect();
    let locate = |y: f64| match p0.atom_of(y, LANDING_MARGIN) {
        Some(j) => Landing::Inside(j),
        None => Landing::Edge,
    };
    scan_return(map, x, &targets, &locate, adm, r_max, None)?.ok_or(Error::NoReturn(r_max))
}

struct Discovery {
    atoms: Vec<TowerAtom>,
    unresolved: f64,
    conflicts: usize,
    seeds_tried: usize,
}

/// Pieces of `base` not covered by `atoms` (sorted by `lo`), at least `min_len` long.
fn gaps_of(dom: DomainKind, base: &Interval<f64>, atoms: &[TowerAtom], min_len: f64) -> Vec<Interval<f64>> {
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(atoms.len() + 8);
    for a in atoms {
        let (lo, hi) = (a.interval.lo, a.interval.hi);
        pieces.push((lo, hi));
        if dom == DomainKind::Circle {
            pieces.push((lo - 1.0, hi - 1.0));
            pieces.push((lo + 1.0, hi + 1.0));
        }
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut cur = base.lo;
    for (lo, hi) in pieces {
        if hi <= cur {
            continue;
        }
        if lo > cur {
            let end = lo.min(base.hi);
            if end - cur >= min_len {
                gaps.push(Interval::new(cur, end));
            }
        }
        cur = cur.max(hi);
        if cur >= base.hi {
            break;
        }
    }
    if base.hi - cur >= min_len {
        gaps.push(Interval::new(cur, base.hi));
    }
    gaps
}

/// Inserts `new` atoms into the sorted registry; returns the conflict count.
fn merge_atoms(dom: DomainKind, reg: &mut Vec<TowerAtom>, new: Vec<TowerAtom>) -> usize {
    let mut all = std::mem::take(reg);
    all.extend(new);
    all.sort_by(|a, b| a.interval.lo.total_cmp(&b.interval.lo).then(a.ret.cmp(&b.ret)));
    let mut conflicts = 0;
    let mut out: Vec<TowerAtom> = Vec::with_capacity(all.len());
    for a in all {
        if let Some(last) = out.last() {
            // endpoints pulled back past a turning point carry ~1e-12 error
            let tol = 1e-9 * a.interval.len().max(last.interval.len()) + ENDPOINT_TOL;
            let same = last.ret == a.ret
                && (last.interval.lo - a.interval.lo).abs() <= tol
                && (last.interval.hi - a.interval.hi).abs() <= tol;
            if same {
                continue;
            }
            if a.interval.lo < last.interval.hi - tol {
                conflicts += 1;
                continue;
            }
        }
        out.push(a);
    }
    // a wrapping last atom may cover the start of the circle
    if dom == DomainKind::Circle && out.len() > 1 {
        let wrap = out.last().unwrap().interval.hi - 1.0;
        let tol = 1e-12;
        let before = out.len();
        let last_idx = out.len() - 1;
        let mut keep = Vec::with_capacity(out.len());
        for (i, a) in out.into_iter().enumerate() {
            if i != last_idx && a.interval.lo < wrap - tol {
                continue;
            }
            keep.push(a);
        }
        conflicts += before - keep.len();
        out = keep;
    }
    *reg = out;
    conflicts
}

fn discover(
    dom: DomainKind,
    base: &Interval<f64>,
    caps: &TowerCaps,
    find: &(dyn Fn(f64) -> Result<Option<(Return, usize)>> + Sync),
) -> Result<Discovery> {
    let mk = |x: f64, r: Return, image: usize| TowerAtom {
        interval: r.interval,
        ret: r.ret,
        image,
        itinerary: r.itinerary,
        seed: x,
    };
    let seeds: Vec<f64> =
        (0..caps.seeds).map(|k| base.lo + base.len() * (k as f64 + 0.5) / caps.seeds as f64).collect();
    let found: Vec<Option<TowerAtom>> = seeds
        .par_iter()
        .map(|&x| find(x).map(|o| o.map(|(r, img)| mk(x, r, img))))
        .collect::<Result<_>>()?;
    let mut seeds_tried = seeds.len();
    let mut atoms = Vec::new();
    let mut conflicts = merge_atoms(dom, &mut atoms, found.into_iter().flatten().collect());
    let min_len = 1e-13 * base.len().max(1e-3);
    // gaps carry how often a seed inside them found no return
    let mut gaps: Vec<(Interval<f64>, usize)> = gaps_of(dom, base, &atoms, min_len).into_iter().map(|g| (g, 0)).collect();
    let mut settled: Vec<Interval<f64>> = Vec::new();
    let mut idle = 0;
    for _ in 0..caps.max_rounds {
        let mass: f64 = gaps.iter().map(|g| g.0.len()).sum();
        if mass < caps.mass_target || atoms.len() >= caps.max_atoms || gaps.is_empty() {
            break;
        }
        gaps.sort_by(|a, b| b.0.len().total_cmp(&a.0.len()).then(a.0.lo.total_cmp(&b.0.lo)));
        let mut take = 0;
        let mut acc = 0.0;
        while take < gaps.len() && take < 1 << 16 && acc < 0.9 * mass {
            acc += gaps[take].0.len();
            take += 1;
        }
        let work: Vec<(Interval<f64>, usize)> = gaps.drain(..take).collect();
        let results: Vec<Option<TowerAtom>> = work
            .par_iter()
            .map(|(g, _)| {
                let x = g.center();
                find(x).map(|o| o.map(|(r, img)| mk(x, r, img)))
            })
            .collect::<Result<_>>()?;
        seeds_tried += work.len();
        let mut new = Vec::new();
        for ((g, dead), r) in work.into_iter().zip(results) {
            match r {
                Some(a) => {
                    if a.interval.lo - g.lo >= min_len {
                        gaps.push((Interval::new(g.lo, a.interval.lo.min(g.hi)), dead));
                    }
                    if g.hi - a.interval.hi >= min_len {
                        gaps.push((Interval::new(a.interval.hi.max(g.lo), g.hi), dead));
                    }
                    new.push(a);
                }
                // no return by r_max: look a little to either side, then give up
                None if dead < DEAD_SPLITS && g.len() / 2.0 >= min_len => {
                    let c = g.center();
                    gaps.push((Interval::new(g.lo, c), dead + 1));
                    gaps.push((Interval::new(c, g.hi), dead + 1));
                }
                None => settled.push(g),
            }
        }
        let before = atoms.len();
        conflicts += merge_atoms(dom, &mut atoms, new);
        idle = if atoms.len() == before { idle + 1 } else { 0 };
        if idle >= 3 {
            break;
        }
    }
    let unresolved = gaps_of(dom, base, &atoms, 0.0).iter().map(|g| g.len()).sum();
    Ok(Discovery { atoms, unresolved, conflicts, seeds_tried })
}

/// Full-branch first-return tower over the nested interval `delta`.
pub fn build_local_tower(
    map: &MapSystem<f64>,
    delta: &Interval<f64>,
    adm: &Admissibility<f64>,
    caps: &TowerCaps,
) -> Result<InducedMarkovMap> {
    if delta.len() / 2.0 > adm.radius * (1.0 + 1e-12) {
        return Err(Error::HypothesisFail(format!(
            "base of length {} is wider than the admissibility ball of radius {}",
            delta.len(),
            adm.radius
        )));
    }
    let rep = verify_nested(map, delta, caps.r_max.min(15), Some(adm))?;
    if !rep.nested {
        return Err(Error::HypothesisFail(format!("base is linked with {} of its pre-images", rep.linked.len())));
    }
    let find = |x: f64| -> Result<Option<(Return, usize)>> {
        match first_return_time(map, x, delta, adm, caps.r_max) {
            Ok(r) => Ok(Some((r, 0))),
            Err(Error::NoReturn(_)) | Err(Error::Dynamics(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let d = discover(map.domain, delta, caps, &find)?;
    let ell = match adm.times {
        TimeSource::Multiples { ell } => ell,
        _ => 1,
    };
    Ok(InducedMarkovMap {
        kind: BaseKind::Local,
        domain: map.domain,
        base: *delta,
        images: vec![*delta],
        atoms: d.atoms,
        ell,
        r_max: caps.r_max,
        admissibility: adm.clone(),
        unresolved_mass: d.unresolved,
        conflicts: d.conflicts,
        straddles: 0,
        seeds_tried: d.seeds_tried,
    })
}

/// Global induced Markov map over the partition `p0`.
pub fn build_global_tower(
    map: &MapSystem<f64>,
    p0: &GlobalPartition,
    adm: &Admissibility<f64>,
    caps: &TowerCaps,
) -> Result<InducedMarkovMap> {
    let ell = match adm.times {
        TimeSource::Multiples { ell } => ell,
        _ => 1,
    };
    if ell != p0.ell {
        return Err(Error::InvalidArgument(format!("partition built for ell = {}, tower asked for {ell}", p0.ell)));
    }
    let base = Interval::new(0.0, 1.0);
    let find = |x: f64| -> Result<Option<(Return, usize)>> {
        if p0.atom_of(x, 0.0).is_none() {
            return Ok(None);
        }
        match global_return(map, x, p0, adm, caps.r_max) {
            Ok(r) => {
                let t = r.target;
                Ok(Some((r, t)))
            }
            Err(Error::NoReturn(_)) | Err(Error::Dynamics(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let d = discover(map.domain, &base, caps, &find)?;
    let images: Vec<Interval<f64>> = p0.atoms.iter().map(|a| a.interval).collect();
    let straddles = d
        .atoms
        .iter()
        .filter(|a| !images.iter().any(|q| a.interval.within(map.domain, q, 1e-12)))
        .count();
    Ok(InducedMarkovMap {
        kind: BaseKind::Global,
        domain: map.domain,
        base,
        images,
        atoms: d.atoms,
        ell,
        r_max: caps.r_max,
        admissibility: adm.clone(),
        unresolved_mass: d.unresolved,
        conflicts: d.conflicts,
        straddles,
        seeds_tried: d.seeds_tried,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub pass: bool,
    /// Worst-case residual (meaning depends on the condition).
    pub residual: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub conditions: Vec<ConditionResult>,
    /// Largest cylinder diameters of generations 1..=4.
    pub cylinder_diameters: Vec<f64>,
}

impl MarkovReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<usize> {
        self.conditions.iter().enumerate().filter(|(_, c)| !c.pass).map(|(i, _)| i + 1).collect()
    }
}

fn circ_gap(dom: DomainKind, a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    match dom {
        DomainKind::Circle => d.min((d - 1.0).abs()),
        DomainKind::Interval => d,
    }
}

/// Checks the five Markov-partition conditions on the stored atoms.
pub fn verify_markov(map: &MapSystem<f64>, tower: &InducedMarkovMap, tol: f64) -> MarkovReport {
    let dom = tower.domain;
    let atoms = &tower.atoms;
    // 1. disjoint interiors
    let mut overlap: f64 = 0.0;
    for w in atoms.windows(2) {
        overlap = overlap.max(w[0].interval.hi - w[1].interval.lo);
    }
    if dom == DomainKind::Circle && atoms.len() > 1 {
        overlap = overlap.max(atoms.last().unwrap().interval.hi - 1.0 - atoms[0].interval.lo);
    }
    let c1 = ConditionResult {
        name: "disjoint interiors".into(),
        pass: overlap <= tol,
        residual: overlap.max(0.0),
        detail: format!("{} atoms", atoms.len()),
    };

    // 2. F(P) is exactly an image element; 4. monotone homeomorphism on the closure
    let per_atom: Vec<(f64, f64, bool)> = atoms
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let Ok(anchors) = tower.anchors(map, i) else { return (f64::INFINITY, f64::INFINITY, false) };
            let n = 9;
            let xs: Vec<f64> = (0..n)
                .map(|k| a.interval.lo + a.interval.len() * k as f64 / (n - 1) as f64)
                .collect();
            let Ok(ys) = tower.forward_on(map, &anchors, &xs) else { return (f64::INFINITY, f64::INFINITY, false) };
            let img = tower.images[a.image];
            let (f_lo, f_hi) = (ys[0].min(ys[n - 1]), ys[0].max(ys[n - 1]));
            let end = circ_gap(dom, f_lo, img.lo).max(circ_gap(dom, f_hi, img.hi));
            let inc = ys.windows(2).all(|w| w[1] > w[0]);
            let dec = ys.windows(2).all(|w| w[1] < w[0]);
            // no critical point strictly inside any level
            let crit_free = (0..a.ret).all(|k| {
                let zk = anchors[k];
                let lap = AnchoredLap::new(map, zk);
                let e0 = lift_offset(dom, a.interval.lo - anchors[0]);
                let e1 = lift_offset(dom, a.interval.hi - anchors[0]);
                // level-k offsets of the atom ends, pushed through k laps
                let mut lo = e0;
                let mut hi = e1;
                for &z in &anchors[..k] {
                    let l = AnchoredLap::new(map, z);
                    lo = l.delta(lo).unwrap_or(f64::NAN);
                    hi = l.delta(hi).unwrap_or(f64::NAN);
                }
                let (lo, hi) = (lo.min(hi), lo.max(hi));
                lo >= lap.e_lo - 1e-15 && hi <= lap.e_hi + 1e-15
            });
            (end, 0.0, (inc || dec) && crit_free)
        })
        .collect();
    let end_res = per_atom.iter().map(|p| p.0).fold(0.0, f64::max);
    let homeo_ok = per_atom.iter().all(|p| p.2);
    // images must be unions of atoms: no atom straddles an image boundary
    let straddles = if tower.kind == BaseKind::Global {
        atoms.iter().filter(|a| !tower.images.iter().any(|q| a.interval.within(dom, q, tol))).count()
    } else {
        atoms.iter().filter(|a| !a.interval.within(dom, &tower.base, tol)).count()
    };
    let c2 = ConditionResult {
        name: "image onto".into(),
        pass: end_res <= tol && straddles == 0,
        residual: end_res,
        detail: format!("{straddles} atoms straddle an image boundary"),
    };
    let mut distinct: Vec<usize> = atoms.iter().map(|a| a.image).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let c3 = ConditionResult {
        name: "finitely many images".into(),
        pass: distinct.len() <= tower.images.len(),
        residual: distinct.len() as f64,
        detail: format!("{} distinct images of {} candidates", distinct.len(), tower.images.len()),
    };
    let c4 = ConditionResult {
        name: "homeomorphic extension".into(),
        pass: homeo_ok && end_res <= tol,
        residual: end_res,
        detail: format!("{} atoms not monotone or crossing a turning point", per_atom.iter().filter(|p| !p.2).count()),
    };
    let diams = cylinder_diameters(map, tower, 4, 32);
    let decays = diams.windows(2).all(|w| w[1] < w[0]) && diams.len() == 4;
    let c5 = ConditionResult {
        name: "cylinder diameters shrink".into(),
        pass: decays,
        residual: if diams.is_empty() { f64::INFINITY } else { diams[diams.len() - 1] / diams[0] },
        detail: format!("max diameters by generation: {diams:?}"),
    };
    MarkovReport { conditions: vec![c1, c2, c3, c4, c5], cylinder_diameters: diams }
}

/// Largest cylinder diameter per generation, searched over the `k` largest
/// atoms and the `k` largest cylinders of the previous generation.
pub fn cylinder_diameters(map: &MapSystem<f64>, tower: &InducedMarkovMap, gens: usize, k: usize) -> Vec<f64> {
    let dom = tower.domain;
    let mut idx: Vec<usize> = (0..tower.atoms.len()).collect();
    idx.sort_by(|&a, &b| tower.atoms[b].interval.len().total_cmp(&tower.atoms[a].interval.len()));
    idx.truncate(k);
    let mut cur: Vec<Interval<f64>> = idx.iter().map(|&i| tower.atoms[i].interval).collect();
    let mut out = Vec::new();
    if cur.is_empty() {
        return out;
    }
    out.push(cur[0].len());
    for _ in 1..gens {
        let mut next: Vec<Interval<f64>> = idx
            .par_iter()
            .flat_map_iter(|&i| {
                let img = tower.images[tower.atoms[i].image];
                let inside: Vec<Interval<f64>> = cur.iter().copied().filter(|c| c.within(dom, &img, 1e-12)).collect();
                let res: Vec<Interval<f64>> = match tower.anchors(map, i) {
                    Ok(anchors) => inside
                        .iter()
                        .filter_map(|c| {
                            let v = tower.inverse_branch_on(map, &anchors, &[c.lo, c.hi]).ok()?;
                            let (a, b) = (v[0].0.min(v[1].0), v[0].0.max(v[1].0));
                            Some(Interval::new(a, b))
                        })
                        .collect(),
                    Err(_) => Vec::new(),
                };
                res
            })
            .collect();
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| b.len().total_cmp(&a.len()));
        next.truncate(k);
        out.push(next[0].len());
        cur = next;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailViolation {
    pub x: f64,
    pub ret: Option<usize>,
    pub first_flag: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub n_max: usize,
    pub samples: usize,
    /// `counts[n]`: fraction of samples with `R > n`, `n = 0..=n_max`.
    pub counts: Vec<f64>,
    /// Fraction with no flagged time among `ell, 2 ell, .. <= n`.
    pub zoom_tail: Vec<f64>,
    /// Fraction whose first hyperbolic time exceeds `n` (when requested).
    pub h_tail: Option<Vec<f64>>,
    pub violations: Vec<TailViolation>,
}

/// Return time of a sample for either tower kind (`None`: no return by `r_max`).
fn pointwise_return(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    p0: Option<&GlobalPartition>,
    x: f64,
    r_max: usize,
) -> Result<Option<usize>> {
    let adm = &tower.admissibility;
    let r = match (tower.kind, p0) {
        (BaseKind::Local, _) => first_return_time(map, x, &tower.base, adm, r_max),
        (BaseKind::Global, Some(p)) => global_return(map, x, p, adm, r_max),
        (BaseKind::Global, None) => return Err(Error::InvalidArgument("global tower needs its partition".into())),
    };
    match r {
        Ok(r) => Ok(Some(r.ret)),
        Err(Error::NoReturn(_)) | Err(Error::Dynamics(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// First flagged zooming time of `x` among multiples of `ell` (for local
/// towers: at which the orbit is inside the base), up to `n_max`.
fn first_flag(map: &MapSystem<f64>, tower: &InducedMarkovMap, x: f64, n_max: usize) -> Result<Option<usize>> {
    let adm = &tower.admissibility;
    let delta = 2.0 * adm.radius;
    let pts = orbit_points(map, x, n_max);
    for n in 1..pts.len() {
        if n % tower.ell != 0 {
            continue;
        }
        if tower.kind == BaseKind::Local && !tower.base.contains_interior(map.domain, pts[n], LANDING_MARGIN) {
            continue;
        }
        let itin: Vec<usize> = pts[..n].iter().map(|&z| map.locate(z)).collect();
        match crate::preballs::build_preball_on(map, &pts[..=n], &itin, delta, &adm.alpha) {
            Ok(_) => {
                if let TimeSource::Hyperbolic { params } = &adm.times {
                    if !hyperbolic_at(map, &pts[..=n], params) {
                        continue;
                    }
                }
                return Ok(Some(n));
            }
            Err(Error::NotAZoomingTime { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn hyperbolic_at(map: &MapSystem<f64>, pts: &[f64], p: &HyperbolicParams<f64>) -> bool {
    let n = pts.len() - 1;
    let logs: Vec<f64> = pts[..n].iter().map(|&z| map.derivative(z).abs().ln()).collect();
    let dists: Vec<f64> = pts[..n].iter().map(|&z| map.crit_dist(z)).collect();
    is_hyperbolic_time(&logs, &dists, n, p)
}

/// Empirical tails of `R` and of the flagged times, with the per-sample
/// check that `R(x) > n` forces no flagged time `<= n`.
pub fn tail_statistics(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    p0: Option<&GlobalPartition>,
    samples: &[f64],
    n_max: usize,
    hyperbolic: Option<&HyperbolicParams<f64>>,
) -> Result<TailStats> {
    let per: Vec<(Option<usize>, Option<usize>, Option<usize>)> = samples
        .par_iter()
        .map(|&x| -> Result<_> {
            // returns are searched as far as flags, not just to the tower's cap
            let horizon = n_max.max(tower.r_max);
            let r = pointwise_return(map, tower, p0, x, horizon)?;
            let flag = first_flag(map, tower, x, horizon)?;
            let h = match hyperbolic {
                Some(p) => match crate::dynamics::iterate(map, x, n_max) {
                    Ok(o) => detect_hyperbolic_times(&o, p)?.first(),
                    Err(_) => None,
                },
                None => None,
            };
            Ok((r, flag, h))
        })
        .collect::<Result<_>>()?;
    let m = samples.len().max(1) as f64;
    let mut counts = vec![0usize; n_max + 1];
    let mut zoom = vec![0usize; n_max + 1];
    let mut hyp = hyperbolic.map(|_| vec![0usize; n_max + 1]);
    let mut violations = Vec::new();
    for (&x, &(r, f, h)) in samples.iter().zip(&per) {
        let rv = r.unwrap_or(usize::MAX);
        let fv = f.unwrap_or(usize::MAX);
        for n in 0..=n_max {
            counts[n] += usize::from(rv > n);
            zoom[n] += usize::from(fv > n);
        }
        if let Some(ht) = hyp.as_mut() {
            let hv = h.unwrap_or(usize::MAX);
            for (n, c) in ht.iter_mut().enumerate() {
                *c += usize::from(hv > n);
            }
        }
        if let Some(fv) = f {
            if rv > fv {
                violations.push(TailViolation { x, ret: r, first_flag: fv });
            }
        }
    }
    let frac = |v: Vec<usize>| v.into_iter().map(|c| c as f64 / m).collect::<Vec<f64>>();
    let (counts, zoom_tail, h_tail) = (frac(counts), frac(zoom), hyp.map(frac));
    Ok(TailStats { n_max, samples: samples.len(), counts, zoom_tail, h_tail, violations })
}

/// Fraction of samples whose `f^ell`-orbit stays where `R` is defined for
/// `j = 0..=j_max` (a lower bound for the mass of the invariant domain).
pub fn invariance_domain(
    map: &MapSystem<f64>,
    tower: &InducedMarkovMap,
    p0: Option<&GlobalPartition>,
    samples: &[f64],
    j_max: usize,
) -> Result<f64> {
    let ok: Vec<bool> = samples
        .par_iter()
        .map(|&x| -> Result<bool> {
            let mut z = x;
            for j in 0..=j_max {
                if pointwise_return(map, tower, p0, z, tower.r_max)?.is_none() {
                    return Ok(false);
                }
                if j < j_max {
                    for _ in 0..tower.ell {
                        if map.crit_dist(z) == 0.0 {
                            return Ok(false);
                        }
                        z = map.apply(z);
                    }
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(ok.iter().filter(|&&b| b).count() as f64 / samples.len().max(1) as f64)
}
