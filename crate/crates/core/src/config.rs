use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{check_steps, DEFAULT_STEPS};

/// Numerical knobs shared by the solver, spectral data and transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// RK4 steps on `[0, 1]`; also the transform cache grid.
    pub steps: usize,
    /// Finite-difference mesh for initial eigenvalue guesses.
    pub fd_mesh: usize,
    /// Relative singular-value threshold deciding kernel membership.
    pub sv_tol: f64,
    /// Relative gap below which eigenvalue guesses are merged.
    pub cluster_tol: f64,
    /// Guesses are computed up to `lambda_max * lambda_margin`.
    pub lambda_margin: f64,
    pub contour_nodes: usize,
    /// Contour radius as a fraction of the nearest spectral gap.
    pub contour_radius_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps: DEFAULT_STEPS,
            fd_mesh: 512,
            sv_tol: 1e-6,
            cluster_tol: 1e-6,
            lambda_margin: 1.2,
            contour_nodes: 64,
            contour_radius_factor: 0.25,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_steps(self.steps)?;
        if self.fd_mesh < 64 {
            return Err(Error::contract(format!("fd_mesh must be >= 64, got {}", self.fd_mesh)));
        }
        for (name, v) in [
            ("sv_tol", self.sv_tol),
            ("cluster_tol", self.cluster_tol),
            ("contour_radius_factor", self.contour_radius_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda_margin < 1.0 {
            return Err(Error::contract("lambda_margin must be >= 1"));
        }
        if self.contour_nodes < 32 {
            return Err(Error::contract("contour_nodes must be >= 32"));
        }
        Ok(())
    }
}
