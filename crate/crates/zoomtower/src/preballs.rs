//! Inverse-branch pullbacks, pre-balls and their contraction certificates.
//!
//! Pullbacks along an orbit are computed in *anchored* form: every interval
//! at level `k` is stored as offsets from the orbit point `z_k`.  The map is
//! walked across branch boundaries whenever consecutive branches join into
//! one monotone lap, so a target straddling a branch boundary on the circle
//! (or at a smooth join on the interval) pulls back as a single piece.
//! Offsets stay accurate far below the spacing of absolute floats near `z_k`.

use serde::{Deserialize, Serialize};

use crate::contraction::ZoomingContraction;
use crate::dynamics::{iterate, DomainKind, MapSystem};
use crate::error::{Error, Result};
use crate::region::Interval;
use crate::scalar::{KahanSum, Real};
use crate::zooming::HyperbolicParams;

/// Number of equally spaced sample points over a target ball.
pub const CERT_POINTS: usize = 17;

/// Offsets below this use Simpson's rule on the derivative instead of
/// differencing the branch values.
const SIMPSON_SPAN: f64 = 1e-3;

/// Branch indices visited by `x, f(x), ..., f^{n-1}(x)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InverseBranchPath {
    pub itinerary: Vec<usize>,
}

impl InverseBranchPath {
    pub fn new(itinerary: Vec<usize>) -> Self {
        Self { itinerary }
    }

    pub fn order(&self) -> usize {
        self.itinerary.len()
    }
}

/// Location of a lifted point: branch index and integer x-shift.
#[derive(Clone, Copy, Debug)]
struct Spot<T> {
    branch: usize,
    xs: T,
}

/// Walks from branch `i0` (unshifted) to the branch holding lifted `y`.
/// `None` when `y` lies beyond the end of the lap.
fn walk<T: Real>(map: &MapSystem<T>, i0: usize, y: T) -> Option<Spot<T>> {
    let nb = map.branches.len();
    let circle = map.domain == DomainKind::Circle;
    let mut s = Spot { branch: i0, xs: T::zero() };
    for _ in 0..(4 * nb + 8) {
        let b = &map.branches[s.branch];
        let u = y - s.xs;
        if u > b.right {
            map.join_shift(s.branch)?;
            s.branch += 1;
            if s.branch == nb {
                if !circle {
                    return None;
                }
                s.branch = 0;
                s.xs += T::one();
            }
        } else if u < b.left {
            let prev = if s.branch == 0 {
                if !circle {
                    return None;
                }
                s.xs -= T::one();
                nb - 1
            } else {
                s.branch - 1
            };
            map.join_shift(prev)?;
            s.branch = prev;
        } else {
            return Some(s);
        }
    }
    None
}

/// Monotone lap through branch `i0`, as lifted x-extent `[lo, hi]` (the
/// extent is clipped to one turn on fully joined circle maps).
fn lap_extent<T: Real>(map: &MapSystem<T>, i0: usize) -> (T, T) {
    let nb = map.branches.len();
    let circle = map.is_circle();
    let b0 = &map.branches[i0];
    let (mut lo, mut hi) = (b0.left, b0.right);
    let (mut i, mut xs) = (i0, T::zero());
    for _ in 0..nb {
        if map.join_shift(i).is_none() {
            break;
        }
        i += 1;
        if i == nb {
            if !circle {
                break;
            }
            i = 0;
            xs += T::one();
        }
        hi = map.branches[i].right + xs;
    }
    let (mut i, mut xs) = (i0, T::zero());
    for _ in 0..nb {
        let prev = if i == 0 {
            if !circle {
                break;
            }
            nb - 1
        } else {
            i - 1
        };
        if map.join_shift(prev).is_none() {
            break;
        }
        if i == 0 {
            xs -= T::one();
        }
        i = prev;
        lo = map.branches[i].left + xs;
    }
    if circle && hi - lo > T::one() {
        // one full turn is enough: targets are shorter than a turn
        let z = (b0.left + b0.right) / T::lit(2.0);
        (lo.max(z - T::one()), hi.min(z + T::one()))
    } else {
        (lo, hi)
    }
}

/// A lap anchored at `z`: evaluates `F(z + e) - F(z)` and its derivative in
/// the lap's lifted coordinates.
pub struct AnchoredLap<'a, T> {
    map: &'a MapSystem<T>,
    z: T,
    i0: usize,
    /// Offset extent of the lap.
    pub e_lo: T,
    pub e_hi: T,
    increasing: bool,
}

impl<'a, T: Real> AnchoredLap<'a, T> {
    pub fn new(map: &'a MapSystem<T>, z: T) -> Self {
        let i0 = map.locate(z);
        let (lo, hi) = lap_extent(map, i0);
        let increasing = map.branches[i0].increasing();
        Self { map, z, i0, e_lo: lo - z, e_hi: hi - z, increasing }
    }

    /// Anchor at a lap boundary point `z` (e.g. a branch's left end) without snapping.
    fn at_branch(map: &'a MapSystem<T>, i0: usize) -> Self {
        let (lo, hi) = lap_extent(map, i0);
        let z = map.branches[i0].left;
        Self { map, z, i0, e_lo: lo - z, e_hi: hi - z, increasing: map.branches[i0].increasing() }
    }

    pub fn increasing(&self) -> bool {
        self.increasing
    }

    #[inline]
    fn slope_at(&self, e: T) -> Option<T> {
        let y = self.z + e;
        let s = walk(self.map, self.i0, y)?;
        Some(self.map.branches[s.branch].slope(y - s.xs))
    }

    /// `log |f'(z + e)|`.
    pub fn log_slope(&self, e: T) -> Option<T> {
        self.slope_at(e).map(|d| d.abs().ln())
    }

    /// Absolute (unlifted) position of `z + e` in the domain.
    pub fn point(&self, e: T) -> T {
        self.map.normalize(self.z + e)
    }

    /// `F(z + e) - F(z)` along the lap.
    pub fn delta(&self, e: T) -> Option<T> {
        if e == T::zero() {
            return Some(T::zero());
        }
        let (a, b) = if e > T::zero() { (T::zero(), e) } else { (e, T::zero()) };
        let sign = if e > T::zero() { T::one() } else { -T::one() };
        // split [a, b] at branch boundaries, integrate piecewise; branches
        // are stepped by index so inexact boundaries cannot stall the walk
        let nb = self.map.branches.len();
        let mut acc = KahanSum::new();
        let mut cur = a;
        let mut spot = walk(self.map, self.i0, self.z + a)?;
        for _ in 0..4 * nb + 8 {
            let br = &self.map.branches[spot.branch];
            let seg_end_e = (br.right + spot.xs - self.z).min(b);
            if seg_end_e > cur {
                let (u0, u1) = (self.z + cur - spot.xs, self.z + seg_end_e - spot.xs);
                let h = seg_end_e - cur;
                if h.abs() <= T::lit(SIMPSON_SPAN) {
                    let mid = self.z + (cur + seg_end_e) / T::lit(2.0) - spot.xs;
                    acc.add(h / T::lit(6.0) * (br.slope(u0) + T::lit(4.0) * br.slope(mid) + br.slope(u1)));
                } else {
                    acc.add(br.value(u1) - br.value(u0));
                }
                cur = seg_end_e;
            }
            if cur >= b {
                return Some(sign * acc.value());
            }
            self.map.join_shift(spot.branch)?;
            spot.branch += 1;
            if spot.branch == nb {
                if !self.map.is_circle() {
                    return None;
                }
                spot.branch = 0;
                spot.xs += T::one();
            }
        }
        None
    }

    /// Offset image `[Delta(e_lo), Delta(e_hi)]`, sorted.
    pub fn image(&self) -> Option<(T, T)> {
        let a = self.delta(self.e_lo)?;
        let b = self.delta(self.e_hi)?;
        Some(if a <= b { (a, b) } else { (b, a) })
    }

    /// Solves `Delta(e) = t` on the lap by safeguarded Newton.
    pub fn solve(&self, t: T) -> Option<T> {
        if t == T::zero() {
            return Some(T::zero());
        }
        let sgn = if self.increasing { T::one() } else { -T::one() };
        // g(e) = sgn * (Delta(e) - t) is increasing
        let g = |e: T| self.delta(e).map(|d| sgn * (d - t));
        let (mut a, mut b) = (self.e_lo, self.e_hi);
        let d0 = self.slope_at(T::zero()).filter(|d| *d != T::zero() && d.is_finite());
        let mut e = match d0 {
            Some(d) => (t / d).max(a).min(b),
            None => (a + b) / T::lit(2.0),
        };
        let mut last = T::nan();
        for _ in 0..300 {
            let ge = g(e)?;
            last = ge;
            if ge == T::zero() {
                return Some(e);
            }
            if ge < T::zero() {
                a = e;
            } else {
                b = e;
            }
            let d = self.slope_at(e).map(|d| sgn * d).unwrap_or(T::zero());
            let mut next = if d > T::zero() && d.is_finite() { e - ge / d } else { T::nan() };
            if !(next > a && next < b) {
                next = a + (b - a) / T::lit(2.0);
            }
            let step = (next - e).abs();
            let scale = e.abs().max(next.abs());
            e = next;
            // rounding plateaus make Newton crawl by single ulps
            if step <= T::lit(8.0) * T::epsilon() * scale || b - a <= T::lit(4.0) * T::epsilon() * scale {
                return Some(e);
            }
        }
        if last.abs() <= T::lit(64.0) * T::epsilon() * (T::one() + t.abs()) {
            return Some(e);
        }
        None
    }
}

/// Equally spaced offsets covering `target` (relative to `z`).
pub fn sample_offsets<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(count - 1)
            }
        })
        .collect()
}

#[inline]
fn dom_dist<T: Real>(dom: DomainKind, d: T) -> T {
    let d = d.abs();
    match dom {
        DomainKind::Circle => d.min(T::one() - d),
        DomainKind::Interval => d,
    }
}

/// A pre-ball `V_n(x)`: an interval mapped by `f^n` homeomorphically onto
/// the ball around `f^n(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreBall<T> {
    pub base: T,
    pub order: usize,
    /// Offsets of `V` relative to `base` (precise even when `V` is tiny).
    pub offset_lo: T,
    pub offset_hi: T,
    pub interval: Interval<T>,
    pub image: Interval<T>,
    pub itinerary: Vec<usize>,
    pub contraction_cert: T,
    /// The certificate checks sampled pairs only.
    pub sampled: bool,
}

impl<T: Real> PreBall<T> {
    pub fn len(&self) -> T {
        self.offset_hi - self.offset_lo
    }
}

/// Sample points pulled back along an anchored orbit.
#[derive(Clone, Debug)]
pub struct Pullback<T> {
    /// `levels[k][i]`: offset at level `k` of the sample that is `i` at level `n`.
    pub levels: Vec<Vec<T>>,
}

/// Pulls level-`n` offsets (relative to `z_n`) back along the anchor orbit
/// `z_0..z_n`; every level must stay inside one monotone lap.  Sample
/// identity is kept: `levels[k][i]` is the preimage of `targets[i]`.
pub fn pull_back_samples<T: Real>(map: &MapSystem<T>, anchors: &[T], targets: &[T]) -> Result<Pullback<T>> {
    let n = anchors.len() - 1;
    let m = targets.len();
    let mut levels = vec![Vec::new(); n + 1];
    levels[n] = targets.to_vec();
    let (mut tmin, mut tmax) = targets.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &t| (a.min(t), b.max(t)));
    for k in (0..n).rev() {
        let lap = AnchoredLap::new(map, anchors[k]);
        let (ilo, ihi) = lap.image().ok_or(Error::PrecisionLoss { level: k })?;
        let tol = T::lit(4.0) * T::epsilon() * (T::one() + ihi.abs().max(ilo.abs()));
        if tmin < ilo - tol || tmax > ihi + tol {
            return Err(Error::BranchEscape { level: k });
        }
        let mut cur = Vec::with_capacity(m);
        for &t in &levels[k + 1] {
            cur.push(lap.solve(t.max(ilo).min(ihi)).ok_or(Error::PrecisionLoss { level: k })?);
        }
        tmin = cur.iter().fold(T::infinity(), |a, &b| a.min(b));
        tmax = cur.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        levels[k] = cur;
    }
    Ok(Pullback { levels })
}

/// Worst ratio `dist(f^j a, f^j b) / alpha_{n-j}(dist(f^n a, f^n b))` over
/// all sample pairs and levels `j < n`.
pub fn contraction_certificate<T: Real>(dom: DomainKind, tr: &Pullback<T>, alpha: &ZoomingContraction<T>) -> T {
    let n = tr.levels.len() - 1;
    let top = &tr.levels[n];
    let m = top.len();
    let mut worst = T::zero();
    for a in 0..m {
        for b in (a + 1)..m {
            let dn = dom_dist(dom, top[b] - top[a]);
            if dn == T::zero() {
                continue;
            }
            for j in 0..n {
                let dj = dom_dist(dom, tr.levels[j][b] - tr.levels[j][a]);
                let q = dj / alpha.eval(n - j, dn);
                if q > worst {
                    worst = q;
                }
            }
        }
    }
    worst
}

/// Target offsets of `[c - rho, c + rho]` relative to `z`, clipped to the domain.
pub(crate) fn ball_offsets<T: Real>(map: &MapSystem<T>, z: T, c: T, rho: T) -> (T, T) {
    match map.domain {
        DomainKind::Circle => {
            let rho = rho.min(T::lit(0.5));
            // lift c near z
            let mut d = c - z;
            d = d - (d + T::lit(0.5)).floor();
            (d - rho, d + rho)
        }
        DomainKind::Interval => ((c - rho).max(T::zero()) - z, (c + rho).min(T::one()) - z),
    }
}

fn interval_from_offsets<T: Real>(map: &MapSystem<T>, base: T, lo: T, hi: T) -> Interval<T> {
    match map.domain {
        DomainKind::Circle => Interval::on(DomainKind::Circle, base + lo, base + hi),
        DomainKind::Interval => Interval::new((base + lo).max(T::zero()), (base + hi).min(T::one())),
    }
}

/// Lattice samples of `[z + lo, z + hi]`: the points `k h` inside it, as
/// offsets from `z`.  Nested balls get nested sample sets, which keeps
/// certificates monotone under shrinking the ball.
pub fn lattice_offsets<T: Real>(z: T, lo: T, hi: T, h: T) -> Vec<T> {
    let k0 = ((z + lo) / h).ceil();
    let k1 = ((z + hi) / h).floor();
    let mut out = Vec::new();
    let mut k = k0;
    while k <= k1 {
        out.push(k * h - z);
        k += T::one();
    }
    out
}

/// Builds and certifies the pre-ball of order `n` at `x` for the ball of
/// radius `delta` around `f^n(x)`.
pub fn build_preball<T: Real>(
    map: &MapSystem<T>,
    x: T,
    n: usize,
    delta: T,
    alpha: &ZoomingContraction<T>,
) -> Result<PreBall<T>> {
    if delta <= T::zero() {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let orbit = iterate(map, x, n)?;
    build_preball_on(map, &orbit.points, &orbit.itinerary[..n], delta, alpha)
}

/// [`build_preball`] on a precomputed orbit `z_0..z_n`.  Certificate samples
/// sit on the lattice of step `delta / (CERT_POINTS - 1)`.
pub fn build_preball_on<T: Real>(
    map: &MapSystem<T>,
    anchors: &[T],
    itinerary: &[usize],
    delta: T,
    alpha: &ZoomingContraction<T>,
) -> Result<PreBall<T>> {
    let n = anchors.len() - 1;
    let zn = anchors[n];
    let (lo, hi) = ball_offsets(map, zn, zn, delta);
    let h = delta / T::from_usize_lossy(CERT_POINTS - 1);
    let mut targets = lattice_offsets(zn, lo, hi, h);
    let m = targets.len();
    targets.push(lo);
    targets.push(hi);
    let tr = pull_back_samples(map, anchors, &targets).map_err(|e| match e {
        Error::BranchEscape { level } => {
            Error::NotAZoomingTime { order: n, reason: format!("pullback leaves a lap at level {level}") }
        }
        other => other,
    })?;
    let cert_part = Pullback { levels: tr.levels.iter().map(|l| l[..m].to_vec()).collect() };
    let cert = contraction_certificate(map.domain, &cert_part, alpha);
    if !(cert <= T::one() + T::CERT_SLACK) {
        return Err(Error::NotAZoomingTime { order: n, reason: format!("contraction certificate {cert}") });
    }
    let l0 = &tr.levels[0];
    let (olo, ohi) = (l0[m].min(l0[m + 1]), l0[m].max(l0[m + 1]));
    let base = anchors[0];
    Ok(PreBall {
        base,
        order: n,
        offset_lo: olo,
        offset_hi: ohi,
        interval: interval_from_offsets(map, base, olo, ohi),
        image: interval_from_offsets(map, zn, lo, hi),
        itinerary: itinerary.to_vec(),
        contraction_cert: cert,
        sampled: true,
    })
}

/// Strict in-branch inverse: the unique interval `W` with `f^n(W) = target`
/// following `path`, each level inside the closed branch interval.
pub fn pull_back<T: Real>(map: &MapSystem<T>, path: &InverseBranchPath, target: Interval<T>) -> Result<Interval<T>> {
    let (mut lo, mut hi) = (target.lo, target.hi);
    for (level, &bi) in path.itinerary.iter().enumerate().rev() {
        let b = map.branches.get(bi).ok_or_else(|| Error::InvalidArgument(format!("no branch {bi}")))?;
        let (v0, v1) = b.end_values();
        let (ilo, ihi) = (v0.min(v1), v0.max(v1));
        let tol = T::SNAP;
        // on the circle the target may need an integer shift to sit in the image
        let mut placed = None;
        let shifts: &[f64] = if map.is_circle() { &[0.0, -1.0, 1.0] } else { &[0.0] };
        for &s in shifts {
            let (a, c) = (lo + T::lit(s), hi + T::lit(s));
            if a >= ilo - tol && c <= ihi + tol {
                placed = Some((a.max(ilo), c.min(ihi)));
                break;
            }
        }
        let (a, c) = placed.ok_or(Error::BranchEscape { level })?;
        let xa = invert_branch(b, a).ok_or(Error::PrecisionLoss { level })?;
        let xc = invert_branch(b, c).ok_or(Error::PrecisionLoss { level })?;
        lo = xa.min(xc);
        hi = xa.max(xc);
    }
    Ok(Interval::new(lo, hi))
}

/// `x` in the branch interval with `branch(x) = y`, by bisection then Newton polish.
pub fn invert_branch<T: Real>(b: &crate::dynamics::Branch<T>, y: T) -> Option<T> {
    let inc = b.increasing();
    let g = |x: T| if inc { b.value(x) - y } else { y - b.value(x) };
    let (mut a, mut c) = (b.left, b.right);
    if g(a) > T::zero() {
        return (g(a) <= T::SNAP).then_some(a);
    }
    if g(c) < T::zero() {
        return (-g(c) <= T::SNAP).then_some(c);
    }
    for _ in 0..200 {
        if c - a <= T::BISECT {
            break;
        }
        let m = a + (c - a) / T::lit(2.0);
        if g(m) < T::zero() {
            a = m;
        } else {
            c = m;
        }
    }
    let mut x = a + (c - a) / T::lit(2.0);
    for _ in 0..4 {
        let d = b.slope(x);
        if d == T::zero() || !d.is_finite() {
            break;
        }
        let nx = x - (b.value(x) - y) / d;
        if !(nx >= b.left && nx <= b.right) {
            break;
        }
        x = nx;
    }
    Some(x)
}

/// Worst sampled `|log J f^n(p) - log J f^n(q)| / dist(f^n p, f^n q)` on the
/// pre-ball, for Lebesgue (`J = |f'|`).
pub fn distortion_estimate<T: Real>(map: &MapSystem<T>, pre: &PreBall<T>, points: usize) -> Result<T> {
    let orbit = iterate(map, pre.base, pre.order)?;
    let zn = orbit.points[pre.order];
    let (lo, hi) = (pre.image.lo - zn, pre.image.hi - zn);
    let (lo, hi) = match map.domain {
        DomainKind::Circle => {
            let mut d = lo;
            d = d - (d + T::lit(0.5)).floor();
            (d, d + (hi - lo))
        }
        DomainKind::Interval => (lo, hi),
    };
    let targets = sample_offsets(lo, hi, points.max(2));
    let tr = pull_back_samples(map, &orbit.points, &targets)?;
    let mut logj = vec![KahanSum::new(); targets.len()];
    for k in 0..pre.order {
        let lap = AnchoredLap::new(map, orbit.points[k]);
        for (i, s) in logj.iter_mut().enumerate() {
            let l = lap.log_slope(tr.levels[k][i]).ok_or(Error::PrecisionLoss { level: k })?;
            if !l.is_finite() {
                return Err(Error::DistortionUnbounded(format!("vanishing derivative at level {k}")));
            }
            s.add(l);
        }
    }
    let mut worst = T::zero();
    for a in 0..targets.len() {
        for b in (a + 1)..targets.len() {
            let d = dom_dist(map.domain, targets[b] - targets[a]);
            if d > T::zero() {
                worst = worst.max((logj[a].value() - logj[b].value()).abs() / d);
            }
        }
    }
    Ok(worst)
}

/// Canonical admissibility of a return candidate.
///
/// A pre-image `V` of order `n` of a target `T` (radius at most `radius`) is
/// accepted when the ball of radius `radius` around the centre of `T` pulls
/// back along `V`'s laps and meets the contraction certificate, and when `n`
/// is allowed by the time source.  The decision depends on `(n, V)` only, so
/// every point of `V` sees the same verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility<T> {
    pub alpha: ZoomingContraction<T>,
    pub radius: T,
    pub times: TimeSource<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum TimeSource<T> {
    /// Every order that yields a certified pre-ball.
    All,
    /// Additionally require a hyperbolic time at the pulled-back centre.
    Hyperbolic { params: HyperbolicParams<T> },
    /// Orders restricted to multiples of `ell`.
    Multiples { ell: usize },
}

/// Outcome of an admissibility check for a candidate return.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate<T> {
    /// Offsets of the pulled-back target relative to `z_0`.
    pub lo: T,
    pub hi: T,
    pub cert: T,
}

impl<T: Real> Admissibility<T> {
    pub fn order_allowed(&self, n: usize) -> bool {
        match &self.times {
            TimeSource::Multiples { ell } => n % ell == 0,
            _ => true,
        }
    }

    /// Checks the candidate given by pulling `target` back along `anchors`
    /// (`z_0..z_n`, an orbit through the candidate pre-image).  `Ok(None)` when
    /// the candidate is not admissible.
    pub fn check(&self, map: &MapSystem<T>, anchors: &[T], target: &Interval<T>) -> Result<Option<Candidate<T>>> {
        let n = anchors.len() - 1;
        if n == 0 || !self.order_allowed(n) {
            return Ok(None);
        }
        let zn = anchors[n];
        let c = target.center();
        let (blo, bhi) = ball_offsets(map, zn, c, self.radius);
        // same lattice as a pre-ball of radius 2 * radius
        let h = self.radius * T::lit(2.0) / T::from_usize_lossy(CERT_POINTS - 1);
        let mut samples = lattice_offsets(zn, blo, bhi, h);
        let m = samples.len();
        // target endpoints ride along so V comes out of the same pass
        let (tlo, thi) = {
            let lo = match map.domain {
                DomainKind::Circle => {
                    let mut d = target.lo - zn;
                    d = d - (d + T::lit(0.5)).floor();
                    d
                }
                DomainKind::Interval => target.lo - zn,
            };
            (lo, lo + target.len())
        };
        if tlo < blo - T::CERT_SLACK || thi > bhi + T::CERT_SLACK {
            return Err(Error::HypothesisFail(format!(
                "target {:?} is not inside the admissibility ball of radius {}",
                target.as_f64(),
                self.radius
            )));
        }
        samples.push(tlo.max(blo));
        samples.push(thi.min(bhi));
        let tr = match pull_back_samples(map, anchors, &samples) {
            Ok(t) => t,
            Err(Error::BranchEscape { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let cert_part = Pullback { levels: tr.levels.iter().map(|l| l[..m].to_vec()).collect() };
        let cert = contraction_certificate(map.domain, &cert_part, &self.alpha);
        if !(cert <= T::one() + T::CERT_SLACK) {
            return Ok(None);
        }
        if let TimeSource::Hyperbolic { params } = &self.times {
            // witness: the pulled-back centre of the ball
            let mid = m / 2;
            let mut logs = Vec::with_capacity(n);
            let mut dists = Vec::with_capacity(n);
            for k in 0..n {
                let lap = AnchoredLap::new(map, anchors[k]);
                let e = tr.levels[k][mid];
                logs.push(lap.log_slope(e).ok_or(Error::PrecisionLoss { level: k })?);
                dists.push(map.crit_dist(lap.point(e)));
            }
            if !crate::zooming::is_hyperbolic_time(&logs, &dists, n, params) {
                return Ok(None);
            }
        }
        let l0 = &tr.levels[0];
        let (a, b) = (l0[m], l0[m + 1]);
        Ok(Some(Candidate { lo: a.min(b), hi: a.max(b), cert }))
    }
}

/// All components of `f^{-1}(target)` mapped homeomorphically onto `target`.
pub fn preimages<T: Real>(map: &MapSystem<T>, target: &Interval<T>) -> Vec<Interval<T>> {
    let nb = map.branches.len();
    let circle = map.is_circle();
    let mut out = Vec::new();
    // lap starts: branches not entered from a joined predecessor
    let mut starts: Vec<usize> = (0..nb)
        .filter(|&i| {
            let prev = if i == 0 {
                if !circle {
                    return true;
                }
                nb - 1
            } else {
                i - 1
            };
            map.join_shift(prev).is_none()
        })
        .collect();
    let cyclic = starts.is_empty();
    if cyclic {
        starts.push(0);
    }
    for &s in &starts {
        let lap = AnchoredLap::at_branch(map, s);
        let (e_lo, e_hi) = if cyclic { (T::zero(), T::one()) } else { (lap.e_lo, lap.e_hi) };
        let (Some(d_lo), Some(d_hi)) = (lap.delta(e_lo), lap.delta(e_hi)) else { continue };
        let f0 = map.branches[s].value(lap.z);
        let (ilo, ihi) = (f0 + d_lo.min(d_hi), f0 + d_lo.max(d_hi));
        let tol = T::lit(1e-13);
        let ks: Vec<T> = if circle {
            let k0 = (ilo - target.hi).floor() - T::one();
            let k1 = (ihi - target.lo).ceil() + T::one();
            let mut v = Vec::new();
            let mut k = k0;
            while k <= k1 {
                v.push(k);
                k += T::one();
            }
            v
        } else {
            vec![T::zero()]
        };
        for k in ks {
            let (a, b) = (target.lo + k, target.hi + k);
            let ok = if cyclic {
                // periodic lift: accept each wrap once, by the position of `a`
                a >= ilo - tol && a < ihi - tol
            } else {
                a >= ilo - tol && b <= ihi + tol
            };
            if !ok {
                continue;
            }
            let solve = |v: T| -> Option<T> {
                let t = v - f0;
                if cyclic {
                    // extend past one turn via periodicity of the lift
                    let deg = (d_hi - d_lo).abs();
                    let turns = ((t - d_lo.min(d_hi)) / deg).floor();
                    let e = lap.solve(t - turns * deg * if lap.increasing() { T::one() } else { -T::one() })?;
                    Some(e + turns)
                } else {
                    lap.solve(t.max(ilo - f0).min(ihi - f0))
                }
            };
            let (Some(ea), Some(eb)) = (solve(a), solve(b)) else { continue };
            let (lo, hi) = (lap.z + ea.min(eb), lap.z + ea.max(eb));
            out.push(match map.domain {
                DomainKind::Circle => Interval::on(DomainKind::Circle, lo, hi),
                DomainKind::Interval => Interval::new(lo.max(T::zero()), hi.min(T::one())),
            });
        }
    }
    out.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap_or(std::cmp::Ordering::Equal));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::maps::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn strict_pullbacks() {
        let d = doubling::<f64>();
        let w = pull_back(&d, &InverseBranchPath::new(vec![0, 0]), Interval::new(0.0, 0.25)).unwrap();
        assert_eq!(w, Interval::new(0.0, 0.0625));
        let t = tent::<f64>();
        let w = pull_back(&t, &InverseBranchPath::new(vec![1]), Interval::new(0.2, 0.4)).unwrap();
        assert!(close(w.lo, 0.8, 1e-13) && close(w.hi, 0.9, 1e-13));
        let e = pull_back(&d, &InverseBranchPath::new(vec![0]), Interval::new(0.5, 1.5));
        assert!(matches!(e, Err(Error::BranchEscape { level: 0 })));
    }

    #[test]
    fn anchored_delta_and_solve() {
        let l = logistic::<f64>(4.0);
        let lap = AnchoredLap::new(&l, 0.3);
        let e = 1e-9;
        let exact = 4.0 * (1.0 - 2.0 * 0.3 - e) * e;
        assert!(close(lap.delta(e).unwrap(), exact, 1e-24));
        let s = lap.solve(exact).unwrap();
        assert!(close(s, e, 1e-22));
        // across the doubling seam the lap continues
        let d = doubling::<f64>();
        let lap = AnchoredLap::new(&d, 0.49);
        assert!(close(lap.delta(0.02).unwrap(), 0.04, 1e-15));
        assert!(close(lap.solve(0.3).unwrap(), 0.15, 1e-15));
        // seams at 1/3 and 2/3 are not exact in f64
        let t = tripling::<f64>();
        let lap = AnchoredLap::new(&t, 0.0);
        let (lo, hi) = lap.image().unwrap();
        assert!(close(hi - lo, 3.0 * (lap.e_hi - lap.e_lo), 1e-12));
    }

    #[test]
    fn doubling_preball_length() {
        let d = doubling::<f64>();
        let a = ZoomingContraction::power(0.5);
        for &x in &[0.1, 0.37, 0.9] {
            let p = build_preball(&d, x, 3, 0.2, &a).unwrap();
            assert!(close(p.len(), 0.05, 1e-14));
            assert!(p.contraction_cert <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn neutral_point_has_no_preballs() {
        let m = neutral_circle::<f64>();
        for n in 1..6 {
            let r = build_preball(&m, 0.0, n, 0.1, &ZoomingContraction::power(0.9));
            assert!(matches!(r, Err(Error::NotAZoomingTime { .. })), "n = {n}");
        }
    }

    #[test]
    fn one_step_preimages() {
        let d = doubling::<f64>();
        let p = preimages(&d, &Interval::new(0.9, 1.1));
        assert_eq!(p.len(), 2);
        assert!(close(p[0].lo, 0.45, 1e-15) && close(p[0].hi, 0.55, 1e-15));
        assert!(close(p[1].lo, 0.95, 1e-15) && close(p[1].hi, 1.05, 1e-15));
        let l = logistic::<f64>(4.0);
        let p = preimages(&l, &Interval::new(0.3, 0.5));
        assert_eq!(p.len(), 2);
        let r = |y: f64| (1.0 - (1.0 - y).sqrt()) / 2.0;
        assert!(close(p[0].lo, r(0.3), 1e-14) && close(p[0].hi, r(0.5), 1e-14));
        let t = tent::<f64>();
        let p = preimages(&t, &Interval::new(0.2, 0.4));
        assert_eq!(p.len(), 2);
        assert!(close(p[1].lo, 0.8, 1e-14) && close(p[1].hi, 0.9, 1e-14));
    }

    #[test]
    fn affine_distortion_vanishes() {
        let d = doubling::<f64>();
        let p = build_preball(&d, 0.3, 5, 0.2, &ZoomingContraction::power(0.5)).unwrap();
        assert_eq!(distortion_estimate(&d, &p, 17).unwrap(), 0.0);
    }
}
