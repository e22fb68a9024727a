//! Spectral data of matrix Sturm-Liouville operators `-y'' + V y` on `[0, 1]`
//! with Dirichlet conditions, and explicit isospectral transforms of `V`.

pub mod config;
pub mod darboux;
pub mod error;
pub mod matrix;
pub mod potential;
pub mod propagator;
pub mod report;
pub mod spectral_data;
pub mod spectrum;
pub mod verify;

pub use config::SolverConfig;
pub use darboux::{build_transform, compose, transform, transformed_phi, validate_target, DarbouxPotential, TransformSpec};
pub use error::{Error, Result, TargetCondition};
pub use matrix::{CMatrix, SubspaceBasis, C64};
pub use potential::{MatrixPotential, Potential};
pub use propagator::{propagate, MatrixSolution};
pub use spectral_data::{attach_group_data, m_residue, spectral_data, weyl_m, GroupData, WeylSample};
pub use spectrum::{compute_spectrum, EigenGroup, Spectrum};
pub use verify::{run_suite, CheckReport, SuiteOptions};
