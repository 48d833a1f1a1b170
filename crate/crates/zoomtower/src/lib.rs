//! Induced Markov maps for non-uniformly expanding maps of the interval and
//! the circle, built from zooming pre-balls and nested sets, together with
//! the invariant measures and statistics they give access to.
//!
//! The geometric core is generic over [`scalar::Real`] (`f32`, `f64`);
//! symbolic metrics run over [`scalar::Exact`] so they can be evaluated in
//! rationals.  Tower construction and the measure layer work in `f64`.

pub mod config;
pub mod contraction;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod measures;
pub mod nested;
pub mod preballs;
pub mod region;
pub mod rng;
pub mod scalar;
pub mod skew;
pub mod symbolic;
pub mod tower;
pub mod zooming;

pub use error::{Error, Result};

pub type Map = dynamics::MapSystem<f64>;
pub type Map32 = dynamics::MapSystem<f32>;
pub type Contraction = contraction::ZoomingContraction<f64>;
pub type Interval = region::Interval<f64>;
pub type PreBall = preballs::PreBall<f64>;
pub type Rational = num_rational::Ratio<i64>;
