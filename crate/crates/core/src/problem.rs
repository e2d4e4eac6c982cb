//! Nonconvex pointing problems and their convex relaxations.
//!
//! The decision vector is laid out as
//!
//! ```text
//! (x₁ … x_{N+1}, u₁ … u_N, σ₁ … σ_N [, τ₁ … τ_N])
//! ```
//!
//! and every step contributes
//!
//! | constraint            | pointing (P1 → P3)      | dual mode (P2 → P4)         |
//! |-----------------------|-------------------------|-----------------------------|
//! | magnitude interval    | `ρ_min ≤ σ ≤ ρ_max`     | `ρ_min ≤ σ ≤ ρ_max`         |
//! | norm cone             | `‖u‖ ≤ σ`               | `‖u‖ ≤ σ`                   |
//! | pointing              | `ξᵀu − γσ ≥ 0`          | `‖u‖ ≤ ξᵀu / γ`             |
//! | penalty (weight > 0)  | `‖u‖ ≤ τ`               | `‖u‖ ≤ τ`                   |

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{
    Affine, ConeKind, ConicProgram, ConicSolver, EqBlock, ProgramBuilder, SolveStatus,
};
use crate::dynamics::{DiscreteModel, PointingGeometry};
use crate::error::{LcvxError, Result};
use crate::linalg::{self, row_rank_pivoted_qr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formulation {
    /// Annulus intersected with a pointing cone; relaxed with a halfspace.
    #[serde(rename = "P3")]
    Pointing,
    /// Engine on inside the sector annulus, or off; relaxed with a second-order cone.
    #[serde(rename = "P4")]
    DualMode,
}

impl Formulation {
    pub fn label(&self) -> &'static str {
        match self {
            Formulation::Pointing => "P3",
            Formulation::DualMode => "P4",
        }
    }
}

/// Terminal cost `m(x_{N+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCost {
    Zero,
    Affine(Vec<f64>),
}

/// Terminal manifold `G x_{N+1} + g = 0` and terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    pub g_matrix: DMatrix<f64>,
    pub g_offset: DVector<f64>,
    pub cost: TerminalCost,
}

impl TerminalSpec {
    /// Pins the final state to `target`.
    pub fn fixed(target: &[f64]) -> Self {
        let n = target.len();
        TerminalSpec {
            g_matrix: DMatrix::identity(n, n),
            g_offset: -DVector::from_column_slice(target),
            cost: TerminalCost::Zero,
        }
    }

    /// No terminal constraint.
    pub fn free(nx: usize) -> Self {
        TerminalSpec {
            g_matrix: DMatrix::zeros(0, nx),
            g_offset: DVector::zeros(0),
            cost: TerminalCost::Zero,
        }
    }

    pub fn rows(&self) -> usize {
        self.g_matrix.nrows()
    }
}

/// Stage costs `l_i(σ) = c_i σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCostSpec {
    pub weights: Vec<f64>,
}

impl StageCostSpec {
    pub fn uniform(steps: usize, weight: f64) -> Self {
        StageCostSpec {
            weights: vec![weight; steps],
        }
    }
}

/// Thresholds used to read the engine mode off a relaxed control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTolerances {
    pub eps_off: f64,
    pub eps_rel: f64,
    pub eps_abs: f64,
}

impl ModeTolerances {
    pub fn for_bounds(rho_max: f64) -> Self {
        ModeTolerances {
            eps_off: 1e-6 * rho_max,
            eps_rel: 1e-6,
            eps_abs: 1e-8 * rho_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointingProblem {
    pub formulation: Formulation,
    pub dm: DiscreteModel,
    pub geom: PointingGeometry,
    pub rho_min: f64,
    pub rho_max: f64,
    pub x_init: Vec<f64>,
    pub terminal: TerminalSpec,
    pub stage_cost: StageCostSpec,
    /// Weight of the `Σ ‖u_i‖` penalty; zero disables it.
    pub penalty_weight: f64,
}

impl PointingProblem {
    /// Checks the invariants every downstream routine relies on.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu, n) = (self.dm.nx(), self.dm.nu(), self.dm.steps);
        if self.geom.nu() != nu {
            return Err(LcvxError::Dimension(format!(
                "pointing direction has {} components, model has {nu} inputs",
                self.geom.nu()
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max.is_finite()) {
            return Err(LcvxError::InvalidInput(format!(
                "need 0 < rho_min <= rho_max, got {} and {}",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.geom.gamma > 0.0 && self.geom.gamma < 1.0) {
            return Err(LcvxError::InvalidInput(format!("gamma must lie in (0, 1), got {}", self.geom.gamma)));
        }
        if self.x_init.len() != nx {
            return Err(LcvxError::Dimension(format!(
                "initial state has {} entries, expected {nx}",
                self.x_init.len()
            )));
        }
        if self.terminal.g_matrix.ncols() != nx || self.terminal.g_offset.len() != self.terminal.rows() {
            return Err(LcvxError::Dimension("terminal map does not match the state size".into()));
        }
        if let TerminalCost::Affine(c) = &self.terminal.cost {
            if c.len() != nx {
                return Err(LcvxError::Dimension("terminal cost gradient has the wrong size".into()));
            }
        }
        if self.stage_cost.weights.len() != n {
            return Err(LcvxError::Dimension(format!(
                "{} stage weights for {n} steps",
                self.stage_cost.weights.len()
            )));
        }
        if self.stage_cost.weights.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(LcvxError::InvalidInput("stage cost weights must be positive".into()));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(LcvxError::InvalidInput("penalty weight must be nonnegative".into()));
        }
        if nu < 2 {
            return Err(LcvxError::Dimension("pointing constraints need at least two inputs".into()));
        }
        let data_ok = self.x_init.iter().all(|v| v.is_finite())
            && self.dm.a.iter().chain(self.dm.b.iter()).chain(self.dm.z.iter()).all(|v| v.is_finite());
        if !data_ok {
            return Err(LcvxError::NonFinite("problem data".into()));
        }
        Ok(())
    }

    /// Dual-mode problems with more than two inputs carry no violation bound.
    pub fn is_heuristic(&self) -> bool {
        self.formulation == Formulation::DualMode && self.dm.nu() != 2
    }

    pub fn tolerances(&self) -> ModeTolerances {
        ModeTolerances::for_bounds(self.rho_max)
    }
}

/// Column offsets of the variable groups in the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VariableLayout {
    pub nx: usize,
    pub nu: usize,
    pub steps: usize,
    pub x_start: usize,
    pub u_start: usize,
    pub sigma_start: usize,
    pub tau_start: Option<usize>,
}

impl VariableLayout {
    /// First column of state `i`, `i = 0..=N`.
    pub fn x(&self, i: usize) -> usize {
        self.x_start + i * self.nx
    }

    pub fn u(&self, i: usize) -> usize {
        self.u_start + i * self.nu
    }

    pub fn sigma(&self, i: usize) -> usize {
        self.sigma_start + i
    }

    pub fn tau(&self, i: usize) -> Option<usize> {
        self.tau_start.map(|t| t + i)
    }

    pub fn split(&self, y: &[f64]) -> Trajectory {
        Trajectory {
            states: (0..=self.steps).map(|i| y[self.x(i)..self.x(i) + self.nx].to_vec()).collect(),
            controls: (0..self.steps).map(|i| y[self.u(i)..self.u(i) + self.nu].to_vec()).collect(),
            sigmas: (0..self.steps).map(|i| y[self.sigma(i)]).collect(),
        }
    }
}

/// States, controls and slack magnitudes read off a decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RelaxedProgram {
    pub formulation: Formulation,
    pub program: ConicProgram,
    pub layout: VariableLayout,
    /// Terminal rows dropped as exact duplicates (indices into the terminal map).
    pub dropped_terminal_rows: Vec<usize>,
}

impl RelaxedProgram {
    /// Objective value at a decision vector.
    pub fn objective(&self, y: &[f64]) -> f64 {
        linalg::dot(&self.program.c, y)
    }
}

/// Indices of rows of `[G | g]` that repeat an earlier row exactly.
fn duplicate_rows(t: &TerminalSpec) -> Vec<usize> {
    let mut dup = Vec::new();
    for r in 0..t.rows() {
        let same = |q: usize| {
            t.g_offset[q] == t.g_offset[r] && (0..t.g_matrix.ncols()).all(|c| t.g_matrix[(q, c)] == t.g_matrix[(r, c)])
        };
        if (0..r).any(same) {
            dup.push(r);
        }
    }
    dup
}

fn add_dynamics_and_boundary(pb: &mut ProgramBuilder, p: &PointingProblem, lay: &VariableLayout, skip: &[usize]) {
    let (nx, nu) = (lay.nx, lay.nu);
    let dm = &p.dm;
    for i in 0..lay.steps {
        let rows = (0..nx)
            .map(|r| {
                let mut e = Affine::term(lay.x(i + 1) + r, -1.0).offset(dm.z[r]);
                for c in 0..nx {
                    if dm.a[(r, c)] != 0.0 {
                        e = e.plus(lay.x(i) + c, dm.a[(r, c)]);
                    }
                }
                for c in 0..nu {
                    if dm.b[(r, c)] != 0.0 {
                        e = e.plus(lay.u(i) + c, dm.b[(r, c)]);
                    }
                }
                e
            })
            .collect();
        pb.add_eq_block(EqBlock::Dynamics(i + 1), rows);
    }
    let init = (0..nx).map(|r| Affine::var(lay.x(0) + r).offset(-p.x_init[r])).collect();
    pb.add_eq_block(EqBlock::Initial, init);
    let t = &p.terminal;
    let rows: Vec<Affine> = (0..t.rows())
        .filter(|r| !skip.contains(r))
        .map(|r| {
            let mut e = Affine::constant(t.g_offset[r]);
            for c in 0..nx {
                if t.g_matrix[(r, c)] != 0.0 {
                    e = e.plus(lay.x(lay.steps) + c, t.g_matrix[(r, c)]);
                }
            }
            e
        })
        .collect();
    if !rows.is_empty() {
        pb.add_eq_block(EqBlock::Terminal, rows);
    }
}

fn layout_for(pb: &mut ProgramBuilder, p: &PointingProblem, with_tau: bool) -> VariableLayout {
    let (nx, nu, n) = (p.dm.nx(), p.dm.nu(), p.dm.steps);
    let x_start = pb.add_vars((n + 1) * nx);
    let u_start = pb.add_vars(n * nu);
    let sigma_start = pb.add_vars(n);
    let tau_start = with_tau.then(|| pb.add_vars(n));
    VariableLayout {
        nx,
        nu,
        steps: n,
        x_start,
        u_start,
        sigma_start,
        tau_start,
    }
}

fn norm_cone(head: Affine, lay: &VariableLayout, i: usize) -> Vec<Affine> {
    let mut v = vec![head];
    v.extend((0..lay.nu).map(|k| Affine::var(lay.u(i) + k)));
    v
}

/// `ξᵀu_i − shift` as an affine expression.
fn xi_dot_u(geom: &PointingGeometry, lay: &VariableLayout, i: usize, scale: f64) -> Affine {
    let mut e = Affine::default();
    for (k, &x) in geom.xi.iter().enumerate() {
        if x != 0.0 {
            e = e.plus(lay.u(i) + k, x * scale);
        }
    }
    e
}

/// Builds the convex relaxation: P3 for the pointing problem, P4 for the dual-mode problem.
pub fn relax(p: &PointingProblem) -> Result<RelaxedProgram> {
    p.validate()?;
    let dup = duplicate_rows(&p.terminal);
    if !dup.is_empty() {
        warn!("dropping {} duplicated terminal row(s): {:?}", dup.len(), dup);
    }
    let mut pb = ProgramBuilder::new();
    let penalized = p.penalty_weight > 0.0;
    let lay = layout_for(&mut pb, p, penalized);
    add_dynamics_and_boundary(&mut pb, p, &lay, &dup);

    let gamma = p.geom.gamma;
    for i in 0..lay.steps {
        let s = lay.sigma(i);
        pb.add_cost(s, p.stage_cost.weights[i]);
        pb.add_cone(
            ConeKind::Nonnegative,
            vec![Affine::var(s).offset(-p.rho_min), Affine::term(s, -1.0).offset(p.rho_max)],
        );
        pb.add_cone(ConeKind::SecondOrder, norm_cone(Affine::var(s), &lay, i));
        match p.formulation {
            Formulation::Pointing => {
                pb.add_cone(ConeKind::Nonnegative, vec![xi_dot_u(&p.geom, &lay, i, 1.0).plus(s, -gamma)]);
            }
            Formulation::DualMode => {
                pb.add_cone(ConeKind::SecondOrder, norm_cone(xi_dot_u(&p.geom, &lay, i, 1.0 / gamma), &lay, i));
            }
        }
        if let Some(t) = lay.tau(i) {
            pb.add_cost(t, p.penalty_weight);
            pb.add_cone(ConeKind::SecondOrder, norm_cone(Affine::var(t), &lay, i));
        }
    }
    if let TerminalCost::Affine(c) = &p.terminal.cost {
        for (k, &v) in c.iter().enumerate() {
            pb.add_cost(lay.x(lay.steps) + k, v);
        }
    }
    Ok(RelaxedProgram {
        formulation: p.formulation,
        program: pb.build(),
        layout: lay,
        dropped_terminal_rows: dup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualityRankReport {
    pub passed: bool,
    pub rows: usize,
    pub rank: usize,
    pub duplicates_removed: usize,
    /// Result without removing duplicates.
    pub passed_before_dedup: bool,
}

fn equality_rank(p: &PointingProblem, skip: &[usize]) -> (usize, usize) {
    let mut pb = ProgramBuilder::new();
    let lay = layout_for(&mut pb, p, false);
    add_dynamics_and_boundary(&mut pb, p, &lay, skip);
    let prog = pb.build();
    let dense = prog.a.to_dense();
    (dense.nrows(), row_rank_pivoted_qr(&dense))
}

/// Full row rank of the stacked dynamics, initial and terminal equations.
pub fn check_assumption1(p: &PointingProblem) -> Result<EqualityRankReport> {
    p.validate()?;
    let dup = duplicate_rows(&p.terminal);
    let (rows, rank) = equality_rank(p, &dup);
    let passed_before_dedup = if dup.is_empty() {
        rank == rows
    } else {
        warn!("terminal map repeats {} row(s); checking rank after removing them", dup.len());
        let (r0, k0) = equality_rank(p, &[]);
        r0 == k0
    };
    Ok(EqualityRankReport {
        passed: rank == rows,
        rows,
        rank,
        duplicates_removed: dup.len(),
        passed_before_dedup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlaterReport {
    pub passed: bool,
    /// Optimal interior margin `s*`; absent when the auxiliary program is infeasible.
    pub margin: Option<f64>,
    pub status: SolveStatus,
}

/// Largest margin by which the relaxed constraint set can be satisfied strictly.
pub fn check_assumption2(p: &PointingProblem, solver: &dyn ConicSolver) -> Result<SlaterReport> {
    p.validate()?;
    let dup = duplicate_rows(&p.terminal);
    let mut pb = ProgramBuilder::new();
    let lay = layout_for(&mut pb, p, false);
    add_dynamics_and_boundary(&mut pb, p, &lay, &dup);
    let m = pb.add_vars(1);
    pb.add_cost(m, -1.0);
    pb.add_cone(ConeKind::Nonnegative, vec![Affine::var(m)]);
    let gamma = p.geom.gamma;
    for i in 0..lay.steps {
        let s = lay.sigma(i);
        pb.add_cone(
            ConeKind::Nonnegative,
            vec![
                Affine::var(s).plus(m, -1.0).offset(-p.rho_min),
                Affine::term(s, -1.0).plus(m, -1.0).offset(p.rho_max),
            ],
        );
        pb.add_cone(ConeKind::SecondOrder, norm_cone(Affine::var(s).plus(m, -1.0), &lay, i));
        match p.formulation {
            Formulation::Pointing => {
                let e = xi_dot_u(&p.geom, &lay, i, 1.0).plus(s, -gamma).plus(m, -1.0);
                pb.add_cone(ConeKind::Nonnegative, vec![e]);
            }
            Formulation::DualMode => {
                let head = xi_dot_u(&p.geom, &lay, i, 1.0 / gamma).plus(m, -1.0 / gamma);
                pb.add_cone(ConeKind::SecondOrder, norm_cone(head, &lay, i));
            }
        }
    }
    let sol = solver.solve(&pb.build())?;
    let report = match sol.status {
        SolveStatus::Optimal => {
            let margin = sol.x[m];
            SlaterReport {
                // solver noise around a zero margin is not strict feasibility
                passed: margin > 1e-6 * p.rho_max,
                margin: Some(margin),
                status: sol.status,
            }
        }
        SolveStatus::PrimalInfeasible => SlaterReport {
            passed: false,
            margin: None,
            status: sol.status,
        },
        other => {
            // inconclusive: the assumption is reported as not verified
            log::warn!("interior-margin program ended with status {other}");
            SlaterReport {
                passed: false,
                margin: None,
                status: other,
            }
        }
    };
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    On,
    Off,
    Violating,
}

/// Reads `θ_i` off a relaxed dual-mode control.
pub fn recover_theta(
    u: &[f64],
    geom: &PointingGeometry,
    rho_min: f64,
    rho_max: f64,
    tol: &ModeTolerances,
) -> EngineMode {
    let mag = linalg::norm(u);
    if mag <= tol.eps_off {
        return EngineMode::Off;
    }
    let in_band = mag >= rho_min * (1.0 - tol.eps_rel) && mag <= rho_max * (1.0 + tol.eps_rel);
    let pointing = linalg::dot(&geom.xi, u) >= geom.gamma * mag - tol.eps_abs;
    if in_band && pointing {
        EngineMode::On
    } else {
        EngineMode::Violating
    }
}
