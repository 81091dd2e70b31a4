// Negated float guards like `!(t > 0.0)` are deliberate: they reject NaN,
// which the suggested `partial_cmp` rewrites would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

//! Numerical laboratory for a semilinear dissipative stochastic heat equation
//! on (0,π)^d with additive Q-Wiener noise.
//!
//! The crate simulates the truncated mild equation with exact per-mode noise
//! increments, regularizes monotone drifts through resolvents and mollifiers,
//! computes Malliavin derivative norms by matched forward/adjoint linear
//! solves along stored paths, and estimates the law of u(t,x) by Monte Carlo
//! with density, small-ball, and negative-moment diagnostics.

pub mod density;
pub mod drift;
pub mod malliavin;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod tolerances;

pub use density::{
    kde, negative_moment, weakened_condition_check, run_ensemble, small_ball_curve, DensityError,
    DensityEstimate, Ensemble, Probe,
};
pub use drift::{DriftError, DriftFunction, Mollifier, NewtonSettings, RegularizedDrift};
pub use malliavin::{
    evolution_kernel, malliavin_derivative_forward, malliavin_fd_check, malliavin_norm_adjoint,
    second_malliavin_norm, CoefficientPath, EvolutionKernelMatrix, MalliavinError,
};
pub use rng::NoiseStreams;
pub use solver::{
    covariance_selftest, g_closed_form, g_lower_bound_check, solve_path, DriftSpec, DriftVariant,
    InitialData, NoiseModel, SolverConfig, SolverError, Trajectory,
};
pub use spectral::{MultiIndex, SineBasis, SpectralError, SpectralField, TransformPlan};
