//! Nonlinear function-on-function regression with nested
//! reproducing-kernel Hilbert spaces.
//!
//! The covariate and response curves live in first-layer RKHSs on `[0, 1]`,
//! recovered from irregular samples by kernel ridge interpolation. A
//! second-layer Gaussian kernel on the covariate space turns the problem
//! into a regularized linear operator regression whose sample solution is a
//! pair of `n x n` ridge systems. On top of the point predictions the crate
//! provides pointwise confidence intervals, simultaneous confidence bands
//! via Gaussian path simulation, and a seeded Monte Carlo harness for
//! replicated prediction-error and coverage studies.
//!
//! ```
//! use nlffr::{fit, FitConfig, KernelFamily, ObservedCurve};
//!
//! let times = vec![0.1, 0.4, 0.7, 1.0];
//! let mut xs = Vec::new();
//! let mut ys = Vec::new();
//! for i in 0..6 {
//!     let shift = i as f64 / 6.0;
//!     let xv: Vec<f64> = times.iter().map(|t| (t + shift).sin()).collect();
//!     let yv: Vec<f64> = times.iter().map(|t| (t + shift).cos()).collect();
//!     xs.push(ObservedCurve::new(format!("s{i}"), times.clone(), xv).unwrap());
//!     ys.push(ObservedCurve::new(format!("s{i}"), times.clone(), yv).unwrap());
//! }
//! let model = fit(&xs, &ys, &FitConfig::gcv(KernelFamily::Grb, KernelFamily::Grb)).unwrap();
//! let grid: Vec<f64> = (0..=10).map(|g| g as f64 / 10.0).collect();
//! let yhat = model.predict(&xs[0], &grid).unwrap();
//! assert_eq!(yhat.len(), grid.len());
//! ```
//!
//! Dense inner loops (Gram assembly, GCV grids, Gaussian paths, simulation
//! replications) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential execution without it; results are identical
//! either way.

pub mod error;
pub mod exec;
pub mod funcdata;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod regression;
pub mod sim;

#[cfg(test)]
pub(crate) mod testsupport;

pub use error::{Error, Result};
pub use exec::with_threads;
pub use funcdata::{
    gcv_smoothing, recover, recover_all, rkhs_gram, rkhs_inner, rkhs_inner_many, ObservedCurve,
    RecoveredCurve, SmoothingChoice,
};
pub use inference::{
    eigen_system, phi_at, pointwise_ci, pointwise_sigma, residual_model, s_n_hat,
    simulate_c_alpha, simultaneous_band, BandResult, EigenSystem, ResidualModel,
    DEFAULT_EIGEN_TOL,
};
pub use kernels::{
    cross_gram, time_gram, KernelFamily, SecondLayerKernel, TimeKernel,
};
pub use regression::{
    default_gamma_x_grid, fit, gcv_regression, ise, ChosenParam, FitConfig, FittedModel,
    GridPredictor, ModelParts, PredictionWeights, Provenance, Tuning, TuningSummary,
    DEFAULT_EPS_T_GRID, DEFAULT_EPS_X_GRID, DEFAULT_GAMMA_T_GRID,
};
pub use sim::{
    apply_design, brownian_path, gen_response_values, gen_x, gen_x_bmc, gen_x_grb, master_grid,
    rho, run_scenario, true_coefficient, true_mean_on, CoverageSettings, Design, RepOutcome,
    ResponseModel, ScenarioConfig, ScenarioResult, ScenarioSummary, XGen, XSample,
};
