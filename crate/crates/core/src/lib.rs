//! Seasonal within-host and spatial models of coffee berry anthracnose, with
//! nonlinear state observers that reconstruct the unmeasured inhibition
//! rate from berry volume and rot measurements.
//!
//! Everything is generic over the floating-point type through [`Real`];
//! the aliases at the bottom of this file fix it to `f64`.

// Negated comparisons such as `!(x > 0)` are used to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forcing;
pub mod integrate;
pub mod metrics;
pub mod ode;
pub mod pde;
pub mod scalar;

pub use error::{Error, Result};
pub use forcing::{
    gen_anisotropy, gen_anisotropy_stream, seasonal_factor, BaseRate, EtaMode, Hypothesis, ParameterSet, PointForcing,
    Seasonal, Severity, SiteWeights, SpatialParameterSet, SquareMatrix, ValidationReport, Violation, VolumeWeight,
};
pub use integrate::{simulate, simulate_with, OdeSystem, RunStats, Scheme, SimulationOptions, Stepper, Trajectory};
pub use ode::{
    check_conditions, make_measurement, model_rhs, observer_rhs, phi1, phi2, phi3, run_observer, ConditionReport,
    CoupledSystem, Measurement, MeasurementMode, ModelState, ObserverState, OdeSample, OdeTrajectory,
};
pub use metrics::{
    analytic_envelope, envelope_check, envelope_series, fit_decay_rate, l2_envelope, relative_abs_error, Aggregates,
    DecayFit, EnvelopeCheck, ErrorSeries,
};
pub use pde::{
    check_conditions_spatial, laplacian_neumann, run_spatial_observer, spatial_aggregates, spatial_model_rhs,
    spatial_observer_rhs, Field, Grid, SpatialModel, SpatialSnapshot, SpatialSummary, SpatialSystemState,
};
pub use scalar::Real;

pub type Parameters = ParameterSet<f64>;
pub type SpatialParameters = SpatialParameterSet<f64>;
pub type State = ModelState<f64>;
pub type Observer = ObserverState<f64>;
pub type Report = ConditionReport<f64>;
