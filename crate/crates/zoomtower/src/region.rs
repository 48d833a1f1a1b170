//! Intervals, circle arcs and finite unions of intervals.

use serde::{Deserialize, Serialize};

use crate::dynamics::DomainKind;
use crate::scalar::Real;

/// Absolute tolerance for linking and containment decisions.
pub const LINK_TOL: f64 = 1e-10;

/// A closed interval `[lo, hi]` in lifted coordinates.  On the circle `lo`
/// lies in `[0, 1)` and `hi - lo <= 1`; `hi` may exceed 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        debug_assert!(lo <= hi, "interval endpoints out of order: {lo} > {hi}");
        Self { lo, hi }
    }

    /// Normalised arc: `lo` moved into `[0, 1)` on the circle.
    pub fn on(dom: DomainKind, lo: T, hi: T) -> Self {
        match dom {
            DomainKind::Interval => Self::new(lo, hi),
            DomainKind::Circle => {
                let k = lo.floor();
                Self::new(lo - k, hi - k)
            }
        }
    }

    /// `B_r(c)`, clipped to `[0, 1]` on the interval domain.
    pub fn ball(dom: DomainKind, c: T, r: T) -> Self {
        match dom {
            DomainKind::Interval => Self::new((c - r).max(T::zero()), (c + r).min(T::one())),
            DomainKind::Circle => {
                let r = r.min(T::lit(0.5));
                Self::on(dom, c - r, c + r)
            }
        }
    }

    #[inline]
    pub fn len(&self) -> T {
        self.hi - self.lo
    }

    #[inline]
    pub fn center(&self) -> T {
        (self.lo + self.hi) / T::lit(2.0)
    }

    /// `x` lifted to the representative in `[lo, lo + 1)` (identity on the interval).
    #[inline]
    pub fn lift(&self, dom: DomainKind, x: T) -> T {
        match dom {
            DomainKind::Interval => x,
            DomainKind::Circle => {
                let d = x - self.lo;
                self.lo + (d - d.floor())
            }
        }
    }

    /// Lift with a tolerance window: points just left of `lo` stay there.
    #[inline]
    pub fn lift_tol(&self, dom: DomainKind, x: T, tol: T) -> T {
        match dom {
            DomainKind::Interval => x,
            DomainKind::Circle => {
                let d = x - (self.lo - tol);
                self.lo - tol + (d - d.floor())
            }
        }
    }

    /// Closed containment.
    pub fn contains(&self, dom: DomainKind, x: T) -> bool {
        let y = self.lift_tol(dom, x, T::zero());
        y >= self.lo && y <= self.hi
    }

    /// `x` in the interior with margin `m` from both ends.
    pub fn contains_interior(&self, dom: DomainKind, x: T, m: T) -> bool {
        let y = self.lift(dom, x);
        y > self.lo + m && y < self.hi - m
    }

    /// `other` shifted by an integer so that its `lo` is lifted near `self`.
    fn align(&self, dom: DomainKind, other: &Self, tol: T) -> Self {
        let lo = self.lift_tol(dom, other.lo, tol);
        Self { lo, hi: lo + other.len() }
    }

    /// `self ⊆ other` up to `tol`.
    pub fn within(&self, dom: DomainKind, other: &Self, tol: T) -> bool {
        if dom == DomainKind::Circle && other.len() >= T::one() - tol {
            return true;
        }
        let a = other.align(dom, self, tol);
        a.lo >= other.lo - tol && a.hi <= other.hi + tol
    }

    /// Interiors meet (beyond `tol`).
    pub fn meets(&self, dom: DomainKind, other: &Self, tol: T) -> bool {
        let a = self.align(dom, other, tol);
        let direct = a.lo < self.hi - tol && a.hi > self.lo + tol;
        match dom {
            DomainKind::Interval => direct,
            // an arc that wraps past lo + 1 can meet self again from the left
            DomainKind::Circle => direct || a.hi - T::one() > self.lo + tol,
        }
    }

    /// Linked: the interiors meet and neither set contains the other.
    pub fn linked(&self, dom: DomainKind, other: &Self, tol: T) -> bool {
        self.meets(dom, other, tol) && !self.within(dom, other, tol) && !other.within(dom, self, tol)
    }

    pub fn as_f64(&self) -> Interval<f64> {
        Interval { lo: self.lo.as_f64(), hi: self.hi.as_f64() }
    }
}

/// `is_linked` with the default tolerance.
pub fn is_linked<T: Real>(dom: DomainKind, a: &Interval<T>, b: &Interval<T>) -> bool {
    a.linked(dom, b, T::lit(LINK_TOL))
}

/// Sorted, pairwise disjoint union of closed intervals on the real line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    parts: Vec<Interval<T>>,
}

impl<T: Real> Region<T> {
    pub fn new() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn from_interval(i: Interval<T>) -> Self {
        Self { parts: vec![i] }
    }

    pub fn parts(&self) -> &[Interval<T>] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> T {
        self.parts.iter().fold(T::zero(), |s, p| s + p.len())
    }

    /// Union with `i`; pieces closer than `merge_tol` are fused.
    pub fn insert(&mut self, i: Interval<T>, merge_tol: T) {
        let mut lo = i.lo;
        let mut hi = i.hi;
        let mut out = Vec::with_capacity(self.parts.len() + 1);
        let mut placed = false;
        for p in self.parts.drain(..) {
            if p.hi < lo - merge_tol {
                out.push(p);
            } else if p.lo > hi + merge_tol {
                if !placed {
                    out.push(Interval::new(lo, hi));
                    placed = true;
                }
                out.push(p);
            } else {
                lo = lo.min(p.lo);
                hi = hi.max(p.hi);
            }
        }
        if !placed {
            out.push(Interval::new(lo, hi));
        }
        self.parts = out;
    }

    /// `self ∖ i` (open removal of the closed interval `i` keeps endpoints out).
    pub fn remove(&mut self, i: Interval<T>) {
        let mut out = Vec::with_capacity(self.parts.len() + 1);
        for p in self.parts.drain(..) {
            if p.hi <= i.lo || p.lo >= i.hi {
                out.push(p);
                continue;
            }
            if p.lo < i.lo {
                out.push(Interval::new(p.lo, i.lo));
            }
            if p.hi > i.hi {
                out.push(Interval::new(i.hi, p.hi));
            }
        }
        self.parts = out;
    }

    /// Component containing `x`.
    pub fn component(&self, x: T) -> Option<Interval<T>> {
        self.parts.iter().copied().find(|p| p.lo <= x && x <= p.hi)
    }

    pub fn contains(&self, x: T) -> bool {
        self.component(x).is_some()
    }
}
