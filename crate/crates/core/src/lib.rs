//! Desk-scale toolkit for training neural proxies of parametric optimization
//! problems with derivative supervision.
//!
//! The pipeline: define a parametric problem ([`problems`]), solve instances
//! with an interior-point method ([`solver`]), differentiate the KKT system to
//! get exact solution sensitivities ([`sensitivity`]), pack solutions and
//! masked sensitivity entries into datasets ([`datagen`]), train a small MLP
//! proxy whose loss supervises both values and masked Jacobian entries
//! ([`proxy`], [`training`]), and evaluate proxies and the uniform error
//! bounds that justify the derivative term ([`eval`]).

pub mod autodiff;
pub mod datagen;
pub mod eval;
pub mod jsonfmt;
pub mod problems;
pub mod proxy;
pub mod sensitivity;
pub mod solver;
pub mod training;

pub use problems::{ParametricProblem, ProblemInstance};
pub use solver::{solve, SolveOptions, SolverResult, SolverStatus};
