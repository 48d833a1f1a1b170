//! Scalar abstractions.
//!
//! Geometry and orbit code is written against [`Real`], implemented for `f32`
//! and `f64`.  Tolerances are attached to the scalar so that an `f32` run does
//! not ask for `1e-13` accuracy it cannot deliver.  Symbolic metrics use
//! [`Exact`], which additionally admits `Ratio<i64>` / `Ratio<i128>`.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, Num, NumAssign, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Points closer than this to a branch endpoint are snapped onto it.
    const SNAP: Self;
    /// Orbit points closer than this to the critical set count as a hit.
    const CRIT_HIT: Self;
    /// Bracket width at which monotone bisection stops (absolute).
    const BISECT: Self;
    /// Slack on contraction certificates and endpoint matching.
    const CERT_SLACK: Self;
    /// Slack on partial-sum comparisons in log space.
    const LOG_SLACK: Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::infinity)
    }
}

impl Real for f64 {
    const SNAP: f64 = 1e-13;
    const CRIT_HIT: f64 = 4.0 * f64::EPSILON;
    const BISECT: f64 = 1e-13;
    const CERT_SLACK: f64 = 1e-9;
    const LOG_SLACK: f64 = 1e-12;
}

impl Real for f32 {
    const SNAP: f32 = 1e-6;
    const CRIT_HIT: f32 = 4.0 * f32::EPSILON;
    const BISECT: f32 = 1e-6;
    const CERT_SLACK: f32 = 1e-4;
    const LOG_SLACK: f32 = 1e-5;
}

/// Field-like scalar in which the symbolic distances can be represented
/// exactly (rationals) or to machine precision (floats).
pub trait Exact: Num + Clone + PartialOrd + Debug {
    fn from_u64(n: u64) -> Self;
    /// Square root when it is representable; floats always succeed.
    fn sqrt_exact(&self) -> Option<Self>;
    fn to_f64(&self) -> f64;
    /// Whether `==` on this type is exact arithmetic.
    fn is_exact() -> bool;
}

macro_rules! exact_float {
    ($t:ty) => {
        impl Exact for $t {
            fn from_u64(n: u64) -> Self {
                n as $t
            }
            fn sqrt_exact(&self) -> Option<Self> {
                Some(self.sqrt())
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn is_exact() -> bool {
                false
            }
        }
    };
}
exact_float!(f32);
exact_float!(f64);

macro_rules! exact_ratio {
    ($i:ty) => {
        impl Exact for Ratio<$i> {
            fn from_u64(n: u64) -> Self {
                Ratio::from_integer(n as $i)
            }
            fn sqrt_exact(&self) -> Option<Self> {
                let n = isqrt_exact(*self.numer() as i128)?;
                let d = isqrt_exact(*self.denom() as i128)?;
                Some(Ratio::new(n as $i, d as $i))
            }
            fn to_f64(&self) -> f64 {
                *self.numer() as f64 / *self.denom() as f64
            }
            fn is_exact() -> bool {
                true
            }
        }
    };
}
exact_ratio!(i64);
exact_ratio!(i128);

fn isqrt_exact(v: i128) -> Option<i128> {
    if v < 0 {
        return None;
    }
    let mut r = (v as f64).sqrt() as i128;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    (r * r == v).then_some(r)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), comp: T::zero() }
    }

    pub fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_square_roots() {
        let q = Ratio::new(9i64, 49);
        assert_eq!(q.sqrt_exact(), Some(Ratio::new(3, 7)));
        assert_eq!(Ratio::new(2i64, 1).sqrt_exact(), None);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = KahanSum::<f64>::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }
}
