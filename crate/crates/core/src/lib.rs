//! Numerical toolkit for nonautonomous linear systems with nonuniform
//! contraction: certificate fitting, dichotomy-spectrum estimation, Lyapunov
//! evaluators, and two constructions of linearizing homeomorphisms between a
//! linear system and its Lipschitz perturbation.
//!
//! Modules, bottom up:
//!
//! - [`expr`]: the expression language for time-dependent coefficients.
//! - [`ode`]: adaptive Runge-Kutta integration with dense output.
//! - [`flow`]: systems, perturbations, transition matrices, solvers.
//! - [`catalog`]: built-in example systems with analytic oracles.
//! - [`dichotomy`]: growth/contraction certificates, verdicts, spectrum.
//! - [`lyapunov`]: strict and quadratic evaluators plus verification.
//! - [`crossing`]: level-set crossing-time homeomorphism pair.
//! - [`picard`]: fixed-point linearization for bounded-offset perturbations.
//! - [`kinematics`]: coordinate transforms and Lipschitz transfer.
//! - [`io`]: JSON wire schemas.

pub mod catalog;
pub mod crossing;
pub mod dichotomy;
pub mod expr;
pub mod flow;
pub mod io;
pub mod kinematics;
pub mod lyapunov;
pub mod ode;
pub mod picard;

pub use catalog::{catalog, CatalogEntry};
pub use dichotomy::{
    estimate_spectrum, fit_bounded_growth, fit_contraction, test_dichotomy,
    ContractionCertificate, DichotomyVerdict, SpectrumEstimate,
};
pub use expr::{EvalContext, Expression};
pub use flow::{
    solve_linear, solve_perturbed, transition_matrix, LinearSystem, NonlinearPerturbation,
    PerturbationClass, TransitionMatrix,
};
pub use kinematics::{transform_linear, transform_nonlinearity, KinematicTransform};
pub use lyapunov::{build_quadratic, build_strict, LyapunovFunction};
pub use ode::{OdeOptions, Trajectory};
pub use picard::{reduce_f0, ParamPoint, PLHomeomorphism};
