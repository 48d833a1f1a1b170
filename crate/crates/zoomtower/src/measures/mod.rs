//! Invariant measures of induced maps and the statistics built on them.

pub mod bernoulli;
pub mod density;
pub mod liftability;
pub mod repeller;
pub mod stats;

pub use bernoulli::{bernoulli_tower_measure, BernoulliMeasure, BernoulliSample, WeightRule};
pub use density::{invariant_density, project, Collocation, DensityOptions, ProjectedMeasure, ReferenceMeasure, TowerMeasure};
pub use liftability::{counting_inequality_check, liftability_frequency, random_scenario, CountingScenario, LiftabilityReport};
pub use repeller::{find_periodic_repeller, PeriodicOrbit, RepellerSearch};
pub use stats::{
    clt_diagnostic, correlation, fit_decay, lyapunov, CltReport, CorrelationSeries, DecayFit, FitKind, Histogram, LyapunovEstimate,
    McOptions, Observable, PointSampler, ProjectedBernoulli, Uniform,
};
