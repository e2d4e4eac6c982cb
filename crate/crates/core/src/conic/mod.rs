//! Sparse conic programs and an interior-point solver for them.
//!
//! Programs have the standard form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b
//!             h − G x = s,  s ∈ K
//! ```
//!
//! where `K` is a product of nonnegative orthants and second-order cones.
//! Equality multipliers `y` enter the Lagrangian as `cᵀx + yᵀ(Ax − b) + zᵀ(Gx − h)`,
//! so the optimal value moves by `−yᵀδ` when `b` moves by `δ`.

mod cones;
pub mod dump;
mod ipm;
mod kkt;
pub mod program;

use serde::Serialize;

pub use program::{Affine, Cone, ConeKind, ConicProgram, EqBlock, ProgramBuilder, RowBlock, SparseMatrix};

use crate::error::{LcvxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::DualInfeasible => "dual_infeasible",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Farkas-type evidence returned with an infeasibility status.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// `Aᵀy + Gᵀz ≈ 0`, `z ∈ K`, `bᵀy + hᵀz = −1`.
    Primal { y: Vec<f64>, z: Vec<f64>, residual: f64 },
    /// `Ax ≈ 0`, `Gx + s ≈ 0`, `s ∈ K`, `cᵀx = −1`.
    Dual { x: Vec<f64>, residual: f64 },
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Residuals {
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub duality_gap: f64,
    pub relative_gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Equality multipliers.
    pub y: Vec<f64>,
    /// Cone multipliers.
    pub z: Vec<f64>,
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
    pub message: Option<String>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Equality multipliers restricted to one labelled row block.
    pub fn eq_duals(&self, prog: &ConicProgram, label: EqBlock) -> Option<&[f64]> {
        prog.block(label).map(|b| &self.y[b.start..b.start + b.len])
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub eps_feas: f64,
    pub eps_gap_abs: f64,
    pub eps_gap_rel: f64,
    pub eps_infeas: f64,
    pub step_fraction: f64,
    pub static_regularization: f64,
    pub refinement_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: 200,
            eps_feas: 1e-8,
            eps_gap_abs: 1e-8,
            eps_gap_rel: 1e-8,
            eps_infeas: 1e-8,
            step_fraction: 0.99,
            static_regularization: 1e-8,
            refinement_steps: 10,
        }
    }
}

pub trait ConicSolver {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution>;
}

/// Primal-dual interior-point method on the homogeneous self-dual embedding.
#[derive(Debug, Clone, Default)]
pub struct InteriorPointSolver {
    pub settings: SolverSettings,
}

impl InteriorPointSolver {
    pub fn new(settings: SolverSettings) -> Self {
        InteriorPointSolver { settings }
    }
}

impl ConicSolver for InteriorPointSolver {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution> {
        prog.validate()?;
        if prog.num_vars() == 0 {
            return Err(LcvxError::InvalidInput("program has no variables".into()));
        }
        Ok(ipm::solve(prog, &self.settings))
    }
}

/// Multipliers `η_1 … η_N` of the dynamics blocks, in grid order.
pub fn extract_dynamics_duals(sol: &ConicSolution, prog: &ConicProgram) -> Result<Vec<Vec<f64>>> {
    if !sol.is_optimal() {
        return Err(LcvxError::NotOptimal(format!("no multipliers for a solve with status {}", sol.status)));
    }
    let mut blocks: Vec<(usize, RowBlock)> = prog
        .eq_blocks
        .iter()
        .filter_map(|b| match b.label {
            EqBlock::Dynamics(i) => Some((i, *b)),
            _ => None,
        })
        .collect();
    blocks.sort_by_key(|(i, _)| *i);
    Ok(blocks.into_iter().map(|(_, b)| sol.y[b.start..b.start + b.len].to_vec()).collect())
}
