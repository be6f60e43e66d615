//! Manifold polynomial chaos surrogates for the Brusselator
//! reaction-diffusion system.
//!
//! The crate covers the whole pipeline: random initial fields from a
//! truncated Karhunen-Loève expansion ([`grf`]), a finite-difference
//! integrator ([`solver`]), kernel PCA with a learned inverse ([`kpca`]),
//! total-degree polynomial chaos ([`pce`]), the dual-embedding surrogate
//! that composes them ([`mpce`]), a language-neutral on-disk container
//! ([`io`]) and the experiment harness ([`harness`]).

pub mod error;
pub mod grf;
pub mod harness;
pub mod io;
pub mod kpca;
pub mod model;
pub mod mpce;
pub mod pce;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    Boundary, CaseLabel, Dataset, GenerationConfig, Grid2D, Regime, ScalarField, Scheme,
    SolverParams, Trajectory,
};
