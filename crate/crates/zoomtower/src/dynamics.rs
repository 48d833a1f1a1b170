//! Piecewise-monotone maps of the circle and the interval, and their orbits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Document};
use crate::expr::Expr;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    /// `R / Z` with representatives in `[0, 1)`.
    Circle,
    /// `[0, 1]`.
    Interval,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("orbit hits the critical set at index {index} (point {point})")]
    CriticalHit { index: usize, point: f64 },
    #[error("point {0} lies outside the domain")]
    OutOfDomain(f64),
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

/// One monotone piece of the map.  `eval` returns values in `[0, 1]`; on the
/// circle the point is the value mod 1.
#[derive(Clone, Debug)]
pub struct Branch<T> {
    pub left: T,
    pub right: T,
    pub eval: Expr,
    pub deriv: Expr,
    pub deriv2: Option<Expr>,
    increasing: bool,
}

impl<T: Real> Branch<T> {
    pub fn new(left: T, right: T, eval: Expr, deriv: Expr, deriv2: Option<Expr>) -> Self {
        let mid = (left + right) / T::lit(2.0);
        let increasing = deriv.eval(mid) > T::zero();
        Self { left, right, eval, deriv, deriv2, increasing }
    }

    #[inline]
    pub fn value(&self, x: T) -> T {
        self.eval.eval(x)
    }

    #[inline]
    pub fn slope(&self, x: T) -> T {
        self.deriv.eval(x)
    }

    pub fn curvature(&self, x: T) -> Option<T> {
        self.deriv2.as_ref().map(|e| e.eval(x))
    }

    #[inline]
    pub fn increasing(&self) -> bool {
        self.increasing
    }

    /// Branch values at the left and right endpoints.
    pub fn end_values(&self) -> (T, T) {
        (self.value(self.left), self.value(self.right))
    }
}

#[derive(Clone, Debug)]
pub struct MapSystem<T> {
    pub name: String,
    pub domain: DomainKind,
    pub branches: Vec<Branch<T>>,
    pub critical: Vec<T>,
    pub beta: T,
    pub b_const: T,
    /// `joins[i]`: branch `i` continues monotonically into the next one
    /// (cyclically on the circle), with the lift shift to add to the next
    /// branch's values.
    joins: Vec<Option<T>>,
}

/// Result of a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step<T> {
    pub next: T,
    pub deriv: T,
    pub branch: usize,
}

impl<T: Real> MapSystem<T> {
    pub fn new(
        name: impl Into<String>,
        domain: DomainKind,
        branches: Vec<Branch<T>>,
        critical: Vec<T>,
        beta: T,
        b_const: T,
    ) -> Result<Self, DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidMap(m));
        if branches.is_empty() {
            return bad("no branches".into());
        }
        let tol = T::lit(1e-12).max(T::SNAP);
        if branches[0].left.abs() > tol || (branches[branches.len() - 1].right - T::one()).abs() > tol {
            return bad("branches must cover [0, 1]".into());
        }
        for w in branches.windows(2) {
            if (w[0].right - w[1].left).abs() > tol {
                return bad(format!("gap or overlap at {}", w[0].right));
            }
        }
        for (i, b) in branches.iter().enumerate() {
            if b.right <= b.left {
                return bad(format!("branch {i} has an empty interval"));
            }
            let (a, c) = b.end_values();
            let lo = a.min(c);
            let hi = a.max(c);
            if lo < -tol || hi > T::one() + tol {
                return bad(format!("branch {i} leaves [0, 1]"));
            }
            // sign constancy on a coarse interior sample
            for k in 1..16 {
                let x = b.left + (b.right - b.left) * T::lit(k as f64 / 16.0);
                let d = b.slope(x);
                if d == T::zero() || (d > T::zero()) != b.increasing {
                    return bad(format!("branch {i} is not strictly monotone near {x}"));
                }
            }
        }
        for &c in &critical {
            if c < T::zero() || c > T::one() {
                return bad(format!("critical point {c} outside [0, 1]"));
            }
        }
        let joins = (0..branches.len())
            .map(|i| {
                let j = (i + 1) % branches.len();
                if j == 0 && domain == DomainKind::Interval {
                    return None;
                }
                let (a, b) = (&branches[i], &branches[j]);
                if a.increasing != b.increasing {
                    return None;
                }
                let shift = a.value(a.right) - b.value(b.left);
                match domain {
                    DomainKind::Interval => (shift.abs() <= tol).then_some(T::zero()),
                    DomainKind::Circle => {
                        let r = shift.round();
                        ((shift - r).abs() <= tol).then_some(r)
                    }
                }
            })
            .collect();
        Ok(Self { name: name.into(), domain, branches, critical, beta, b_const, joins })
    }

    /// Lift shift to apply when walking from branch `i` into its successor, if
    /// the two branches form one monotone lap.
    pub fn join_shift(&self, i: usize) -> Option<T> {
        self.joins[i]
    }

    pub fn is_circle(&self) -> bool {
        self.domain == DomainKind::Circle
    }

    /// Representative in the domain (`[0,1)` on the circle, clamped on the interval).
    #[inline]
    pub fn normalize(&self, x: T) -> T {
        match self.domain {
            DomainKind::Circle => {
                let y = x - x.floor();
                if y >= T::one() {
                    T::zero()
                } else {
                    y
                }
            }
            DomainKind::Interval => x.max(T::zero()).min(T::one()),
        }
    }

    /// Snap onto a branch endpoint when within `T::SNAP`.
    #[inline]
    pub fn snap(&self, x: T) -> T {
        let i = self.raw_locate(x);
        let b = &self.branches[i];
        if (x - b.left).abs() < T::SNAP {
            b.left
        } else if (b.right - x).abs() < T::SNAP {
            if self.is_circle() && i + 1 == self.branches.len() {
                T::zero()
            } else {
                b.right
            }
        } else {
            x
        }
    }

    fn raw_locate(&self, x: T) -> usize {
        // branches are few; a linear scan beats binary search here
        let n = self.branches.len();
        for (i, b) in self.branches.iter().enumerate() {
            if x < b.right || i + 1 == n {
                return i;
            }
        }
        n - 1
    }

    /// Branch index owning `x` (intervals are closed on the left).
    #[inline]
    pub fn locate(&self, x: T) -> usize {
        self.raw_locate(self.snap(x))
    }

    #[inline]
    pub fn step(&self, x: T) -> Step<T> {
        let x = self.snap(x);
        let i = self.raw_locate(x);
        let b = &self.branches[i];
        Step { next: self.normalize(b.value(x)), deriv: b.slope(x), branch: i }
    }

    #[inline]
    pub fn apply(&self, x: T) -> T {
        self.step(x).next
    }

    #[inline]
    pub fn derivative(&self, x: T) -> T {
        self.step(x).deriv
    }

    /// Distance on the domain (arc length on the circle).
    #[inline]
    pub fn dist(&self, x: T, y: T) -> T {
        let d = (x - y).abs();
        match self.domain {
            DomainKind::Circle => {
                let d = d - d.floor();
                d.min(T::one() - d)
            }
            DomainKind::Interval => d,
        }
    }

    /// `dist(x, C)`; `+inf` when the critical set is empty.
    #[inline]
    pub fn crit_dist(&self, x: T) -> T {
        self.critical.iter().fold(T::infinity(), |m, &c| m.min(self.dist(x, c)))
    }

    /// `sup |f'|` estimated on a fine grid of each branch.
    pub fn max_derivative(&self) -> T {
        let mut m = T::zero();
        for b in &self.branches {
            for k in 0..=256 {
                let x = b.left + (b.right - b.left) * T::lit(k as f64 / 256.0);
                m = m.max(b.slope(x).abs());
            }
        }
        m
    }

    pub fn from_config_str(src: &str) -> Result<Self, ConfigError> {
        let doc = Document::parse(src)?;
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &Document) -> Result<Self, ConfigError> {
        let map = doc.section("map").ok_or_else(|| ConfigError::field("map", None, "missing [map] section"))?;
        let name = map.str("name").unwrap_or("user-map").to_string();
        let domain = match map.str("domain").unwrap_or("interval") {
            "circle" => DomainKind::Circle,
            "interval" => DomainKind::Interval,
            other => {
                return Err(ConfigError::field(
                    "domain",
                    map.get("domain").map(|e| e.line),
                    format!("expected 'circle' or 'interval', got '{other}'"),
                ))
            }
        };
        let reserved = ["name", "domain", "beta", "B"];
        let mut params = BTreeMap::new();
        for e in &map.entries {
            if !reserved.contains(&e.key.as_str()) {
                let v = crate::config::parse_number(&e.value).map_err(|m| ConfigError::field(&e.key, Some(e.line), m))?;
                params.insert(e.key.clone(), v);
            }
        }
        let beta = map.f64("beta")?.unwrap_or(0.0);
        let b_const = map.f64("B")?.unwrap_or(1.0);

        let mut indexed: Vec<(usize, &crate::config::Section)> = Vec::new();
        for s in &doc.sections {
            if let Some(idx) = s.name.strip_prefix("branch.") {
                let i: usize = idx.parse().map_err(|_| ConfigError::at(s.line, "branch index must be an integer"))?;
                indexed.push((i, s));
            }
        }
        indexed.sort_by_key(|(i, _)| *i);
        for (k, (i, s)) in indexed.iter().enumerate() {
            if *i != k {
                return Err(ConfigError::at(s.line, format!("branch indices must be 0..n, found {i}")));
            }
        }
        if indexed.is_empty() {
            return Err(ConfigError::field("branch.0", None, "at least one [branch.i] section is required"));
        }
        let mut branches = Vec::new();
        for (_, s) in &indexed {
            let iv = s
                .f64_list("interval")?
                .ok_or_else(|| ConfigError::field("interval", Some(s.line), format!("missing in [{}]", s.name)))?;
            if iv.len() != 2 {
                return Err(ConfigError::field("interval", s.get("interval").map(|e| e.line), "expected 'left, right'"));
            }
            let parse = |key: &str, required: bool| -> Result<Option<Expr>, ConfigError> {
                match s.get(key) {
                    Some(e) => Expr::parse_with(&e.value, &params)
                        .map(Some)
                        .map_err(|pe| ConfigError::field(key, Some(e.line), pe.to_string())),
                    None if required => Err(ConfigError::field(key, Some(s.line), format!("missing in [{}]", s.name))),
                    None => Ok(None),
                }
            };
            let f = parse("f", true)?.unwrap_or(Expr::Var);
            let df = parse("df", true)?.unwrap_or(Expr::Num(1.0));
            let d2f = parse("d2f", false)?;
            branches.push(Branch::new(T::lit(iv[0]), T::lit(iv[1]), f, df, d2f));
        }
        let critical = match doc.section("critical") {
            Some(c) => c.f64_list("points")?.unwrap_or_default().into_iter().map(T::lit).collect(),
            None => Vec::new(),
        };
        Self::new(name, domain, branches, critical, T::lit(beta), T::lit(b_const))
            .map_err(|e| ConfigError::field("branch", None, e.to_string()))
    }
}

/// Orbit channels of `x, f(x), ..., f^n(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitRecord<T> {
    pub start: T,
    pub points: Vec<T>,
    /// `log |f'(f^j x)|`, i.e. `log ||Df(f^j x)^{-1}||^{-1}`.
    pub log_inv_deriv: Vec<T>,
    pub crit_dist: Vec<T>,
    pub itinerary: Vec<usize>,
}

impl<T: Real> OrbitRecord<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the last point (the `n` of `iterate(.., n)`).
    pub fn horizon(&self) -> usize {
        self.points.len().saturating_sub(1)
    }
}

/// `x, f(x), ..., f^n(x)` with derivative, critical-distance and itinerary channels.
pub fn iterate<T: Real>(map: &MapSystem<T>, x: T, n: usize) -> Result<OrbitRecord<T>, DynamicsError> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(DynamicsError::OutOfDomain(x.as_f64()));
    }
    let mut rec = OrbitRecord {
        start: x,
        points: Vec::with_capacity(n + 1),
        log_inv_deriv: Vec::with_capacity(n + 1),
        crit_dist: Vec::with_capacity(n + 1),
        itinerary: Vec::with_capacity(n + 1),
    };
    let mut z = map.normalize(x);
    for j in 0..=n {
        let z_s = map.snap(z);
        let cd = map.crit_dist(z_s);
        if cd <= T::CRIT_HIT {
            return Err(DynamicsError::CriticalHit { index: j, point: z_s.as_f64() });
        }
        let st = map.step(z_s);
        rec.points.push(z_s);
        rec.log_inv_deriv.push(st.deriv.abs().ln());
        rec.crit_dist.push(cd);
        rec.itinerary.push(st.branch);
        z = st.next;
    }
    Ok(rec)
}

/// `dist_delta(x, C)`: the distance when at most `delta`, else exactly 1.
pub fn truncated_distance<T: Real>(map: &MapSystem<T>, x: T, delta: T) -> T {
    truncate(map.crit_dist(x), delta)
}

#[inline]
pub fn truncate<T: Real>(d: T, delta: T) -> T {
    if d <= delta {
        d
    } else {
        T::one()
    }
}

/// Shipped example maps.
pub mod maps {
    use super::*;

    fn br<T: Real>(l: f64, r: f64, f: &str, df: &str, d2f: &str) -> Branch<T> {
        Branch::new(
            T::lit(l),
            T::lit(r),
            Expr::parse(f).expect("shipped formula"),
            Expr::parse(df).expect("shipped formula"),
            Some(Expr::parse(d2f).expect("shipped formula")),
        )
    }

    /// `x -> 2x mod 1`.
    pub fn doubling<T: Real>() -> MapSystem<T> {
        let b = vec![br(0.0, 0.5, "2*x", "2", "0"), br(0.5, 1.0, "2*x - 1", "2", "0")];
        MapSystem::new("doubling", DomainKind::Circle, b, vec![], T::zero(), T::lit(2.0)).expect("valid")
    }

    /// `x -> 3x mod 1`.
    pub fn tripling<T: Real>() -> MapSystem<T> {
        let b = vec![
            br(0.0, 1.0 / 3.0, "3*x", "3", "0"),
            br(1.0 / 3.0, 2.0 / 3.0, "3*x - 1", "3", "0"),
            br(2.0 / 3.0, 1.0, "3*x - 2", "3", "0"),
        ];
        MapSystem::new("tripling", DomainKind::Circle, b, vec![], T::zero(), T::lit(3.0)).expect("valid")
    }

    /// Full tent map on `[0, 1]`.
    pub fn tent<T: Real>() -> MapSystem<T> {
        let b = vec![br(0.0, 0.5, "2*x", "2", "0"), br(0.5, 1.0, "2 - 2*x", "-2", "0")];
        MapSystem::new("tent", DomainKind::Interval, b, vec![], T::zero(), T::lit(2.0)).expect("valid")
    }

    /// `x -> a x (1 - x)` with the critical point at 1/2, `beta = 1`, `B = 2a`.
    pub fn logistic<T: Real>(a: f64) -> MapSystem<T> {
        assert!(a > 0.0 && a <= 4.0, "logistic parameter must lie in (0, 4]");
        let f = format!("{a}*x*(1 - x)");
        let df = format!("{a}*(1 - 2*x)");
        let d2f = format!("-2*{a}");
        let b = vec![br(0.0, 0.5, &f, &df, &d2f), br(0.5, 1.0, &f, &df, &d2f)];
        MapSystem::new(format!("logistic({a})"), DomainKind::Interval, b, vec![T::lit(0.5)], T::one(), T::lit(2.0 * a))
            .expect("valid")
    }

    /// Circle map `g(x) = x + 2x^2` on `[0, 1/2)`, `1 - g(1 - x)` on `[1/2, 1)`;
    /// neutral fixed point at 0, topologically conjugate to doubling.
    pub fn neutral_circle<T: Real>() -> MapSystem<T> {
        let b = vec![
            br(0.0, 0.5, "x + 2*x^2", "1 + 4*x", "4"),
            br(0.5, 1.0, "1 - ((1 - x) + 2*(1 - x)^2)", "1 + 4*(1 - x)", "-4"),
        ];
        MapSystem::new("neutral-circle", DomainKind::Circle, b, vec![], T::zero(), T::lit(3.0)).expect("valid")
    }

    /// Look a shipped map up by name (`logistic` accepts `logistic:<a>`).
    pub fn by_name<T: Real>(name: &str) -> Option<MapSystem<T>> {
        match name {
            "doubling" => Some(doubling()),
            "tripling" | "times3" => Some(tripling()),
            "tent" => Some(tent()),
            "logistic" => Some(logistic(4.0)),
            "neutral-circle" | "neutral_circle" => Some(neutral_circle()),
            _ => {
                let a: f64 = name.strip_prefix("logistic:")?.parse().ok()?;
                (a > 0.0 && a <= 4.0).then(|| logistic(a))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::maps::*;
    use super::*;

    #[test]
    fn doubling_orbit_is_exact() {
        let o = iterate(&doubling::<f64>(), 0.1, 3).unwrap();
        assert_eq!(o.points, vec![0.1, 0.2, 0.4, 0.8]);
        assert!(o.log_inv_deriv.iter().all(|&l| l == 2f64.ln()));
        assert!(o.crit_dist.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn logistic_critical_hit() {
        let e = iterate(&logistic::<f64>(4.0), 0.5, 1).unwrap_err();
        assert_eq!(e, DynamicsError::CriticalHit { index: 0, point: 0.5 });
    }

    #[test]
    fn neutral_fixed_point() {
        let o = iterate(&neutral_circle::<f64>(), 0.0, 10).unwrap();
        assert!(o.points.iter().all(|&p| p == 0.0));
        assert!(o.log_inv_deriv.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn truncation_rule() {
        let m = logistic::<f64>(4.0);
        assert_eq!(truncated_distance(&m, 0.45, 0.1), 0.04999999999999999);
        assert_eq!(truncated_distance(&m, 0.0, 0.1), 1.0);
        assert_eq!(truncated_distance(&doubling::<f64>(), 0.3, 0.1), 1.0);
    }

    #[test]
    fn laps_join_across_the_seam() {
        let d = doubling::<f64>();
        assert_eq!(d.join_shift(0), Some(1.0));
        assert_eq!(d.join_shift(1), Some(1.0));
        let l = logistic::<f64>(4.0);
        assert_eq!(l.join_shift(0), None);
        assert_eq!(l.join_shift(1), None);
        let t = tent::<f64>();
        assert_eq!(t.join_shift(0), None);
    }

    #[test]
    fn snapping_makes_itineraries_deterministic() {
        let d = doubling::<f64>();
        assert_eq!(d.locate(0.5 - 1e-14), 1);
        assert_eq!(d.locate(0.5 - 1e-12), 0);
        assert_eq!(d.apply(1.0 - 1e-15), 0.0);
    }

    #[test]
    fn config_round_trip() {
        let src = "[map]\nname = lg\ndomain = interval\nbeta = 1\nB = 8\na = 4\n\
                   [branch.0]\ninterval = 0, 0.5\nf = a*x*(1-x)\ndf = a*(1-2*x)\n\
                   [branch.1]\ninterval = 0.5, 1\nf = a*x*(1-x)\ndf = a*(1-2*x)\n\
                   [critical]\npoints = 0.5\n";
        let m = MapSystem::<f64>::from_config_str(src).unwrap();
        assert_eq!(m.apply(0.25), 0.75);
        assert_eq!(m.critical, vec![0.5]);
        let bad = src.replace("df = a*(1-2*x)\n[branch.1]", "df = a*(1-2*y)\n[branch.1]");
        let err = MapSystem::<f64>::from_config_str(&bad).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("df"));
    }

    #[test]
    fn f32_orbits_work() {
        let o = iterate(&tent::<f32>(), 0.1f32, 4).unwrap();
        assert!((o.points[4] - 0.4).abs() < 1e-5);
    }
}
