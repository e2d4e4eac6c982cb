//! Per-grid-point validity of a relaxed solution, dual diagnostics,
//! violation bounds and projection repair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControllabilityReport, PointingGeometry, SubsetAudit};
use crate::error::{LcvxError, Result};
use crate::linalg::{cross_norm, dot, norm};
use crate::problem::{
    recover_theta, EngineMode, EqualityRankReport, Formulation, ModeTolerances, PointingProblem,
    SlaterReport, TerminalCost, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    InteriorOfV,
    OnCapBase,
    OnSectorSideOa,
    OnSectorSideOb,
    /// Dual-mode violation on the pointing cone boundary (three or more inputs).
    OnConeBoundary,
    BelowRhoMin,
    SatisfiesP1,
    ModeOn,
    ModeOff,
}

impl Reason {
    pub fn is_valid(&self) -> bool {
        matches!(self, Reason::SatisfiesP1 | Reason::ModeOn | Reason::ModeOff)
    }
}

/// Classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    pub gap: f64,
    pub sigma: f64,
    /// Slack allowed when checking that the input is relaxed-feasible.
    pub feasibility: f64,
    pub mode: ModeTolerances,
}

impl ClassifyTolerances {
    pub fn new(rho_min: f64, rho_max: f64) -> Self {
        ClassifyTolerances {
            gap: 1e-6 * rho_max,
            sigma: 1e-6 * (rho_max - rho_min),
            feasibility: 1e-5 * rho_max,
            mode: ModeTolerances::for_bounds(rho_max),
        }
    }

    pub fn for_problem(p: &PointingProblem) -> Self {
        Self::new(p.rho_min, p.rho_max)
    }
}

/// A cross-product metric, raw and divided by `‖v‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossMetric {
    pub raw: f64,
    pub normalized: f64,
}

/// Alignment of `v = −Bᵀη_i` with the reference and side normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeMetrics {
    pub v: Vec<f64>,
    pub v_norm: f64,
    /// `‖v × ξ‖`.
    pub xi: CrossMetric,
    /// `‖v × ξ₁‖`, planar geometry only.
    pub xi1: Option<CrossMetric>,
    /// `‖v × ξ₂‖`, planar geometry only.
    pub xi2: Option<CrossMetric>,
    /// Set when `v = 0`; normalized metrics are then reported as 0.
    pub eta_zero: bool,
}

fn metric(v: &[f64], v_norm: f64, w: &[f64]) -> CrossMetric {
    let raw = cross_norm(v, w);
    CrossMetric {
        raw,
        normalized: if v_norm > 0.0 { raw / v_norm } else { 0.0 },
    }
}

pub fn cone_metrics(eta: &[f64], b: &DMatrix<f64>, geom: &PointingGeometry) -> ConeMetrics {
    let v: Vec<f64> = (-(b.transpose() * DVector::from_column_slice(eta))).as_slice().to_vec();
    let v_norm = norm(&v);
    let planar = geom.planar.as_ref();
    ConeMetrics {
        xi: metric(&v, v_norm, &geom.xi),
        xi1: planar.map(|p| metric(&v, v_norm, &p.xi1)),
        xi2: planar.map(|p| metric(&v, v_norm, &p.xi2)),
        eta_zero: v_norm == 0.0,
        v_norm,
        v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridClassification {
    pub index: usize,
    pub time: f64,
    pub u: Vec<f64>,
    pub sigma: f64,
    pub u_norm: f64,
    pub valid: bool,
    pub reason: Reason,
    /// `σ − ‖u‖`.
    pub gap: f64,
    /// `ξᵀu − γσ` for the pointing relaxation, `ξᵀu − γ‖u‖` for the dual-mode one.
    pub pointing_slack: f64,
    pub metrics: Option<ConeMetrics>,
}

fn check_relaxed_feasible(u_norm: f64, sigma: f64, rho: (f64, f64), tol: &ClassifyTolerances) -> Result<()> {
    let f = tol.feasibility;
    if sigma < rho.0 - f || sigma > rho.1 + f || u_norm > sigma + f || !sigma.is_finite() || !u_norm.is_finite() {
        return Err(LcvxError::InvalidInput(format!(
            "point (‖u‖ = {u_norm}, σ = {sigma}) is outside the relaxed set"
        )));
    }
    Ok(())
}

fn base(index: usize, time: f64, u: &[f64], sigma: f64, slack: f64, reason: Reason) -> GridClassification {
    let u_norm = norm(u);
    GridClassification {
        index,
        time,
        u: u.to_vec(),
        sigma,
        u_norm,
        valid: reason.is_valid(),
        reason,
        gap: sigma - u_norm,
        pointing_slack: slack,
        metrics: None,
    }
}

/// Validity of one step of a pointing-relaxation solution.
pub fn classify_p3(
    index: usize,
    time: f64,
    u: &[f64],
    sigma: f64,
    p: &PointingProblem,
    tol: &ClassifyTolerances,
) -> Result<GridClassification> {
    let u_norm = norm(u);
    check_relaxed_feasible(u_norm, sigma, (p.rho_min, p.rho_max), tol)?;
    let slack = dot(&p.geom.xi, u) - p.geom.gamma * sigma;
    let reason = if sigma - u_norm <= tol.gap {
        Reason::SatisfiesP1
    } else if slack.abs() <= tol.gap {
        Reason::OnCapBase
    } else {
        Reason::InteriorOfV
    };
    Ok(base(index, time, u, sigma, slack, reason))
}

/// Validity of one step of a dual-mode-relaxation solution.
pub fn classify_p4(
    index: usize,
    time: f64,
    u: &[f64],
    sigma: f64,
    p: &PointingProblem,
    tol: &ClassifyTolerances,
) -> Result<GridClassification> {
    let u_norm = norm(u);
    check_relaxed_feasible(u_norm, sigma, (p.rho_min, p.rho_max), tol)?;
    let geom = &p.geom;
    let slack = dot(&geom.xi, u) - geom.gamma * u_norm;
    if slack < -tol.feasibility {
        return Err(LcvxError::InvalidInput(format!("control leaves the pointing cone by {}", -slack)));
    }
    let reason = match recover_theta(u, geom, p.rho_min, p.rho_max, &tol.mode) {
        EngineMode::Off => Reason::ModeOff,
        EngineMode::On => Reason::ModeOn,
        EngineMode::Violating => match &geom.planar {
            Some(pl) => {
                let a = dot(&pl.xi1, u).abs();
                let b = dot(&pl.xi2, u).abs();
                if a.min(b) <= tol.gap {
                    if a <= b {
                        Reason::OnSectorSideOa
                    } else {
                        Reason::OnSectorSideOb
                    }
                } else if sigma - u_norm > tol.gap {
                    Reason::InteriorOfV
                } else {
                    Reason::BelowRhoMin
                }
            }
            None => {
                if slack <= tol.mode.eps_abs.max(tol.gap) {
                    Reason::OnConeBoundary
                } else if sigma - u_norm > tol.gap {
                    Reason::InteriorOfV
                } else {
                    Reason::BelowRhoMin
                }
            }
        },
    };
    Ok(base(index, time, u, sigma, slack, reason))
}

/// Classifies every step of a trajectory, attaching dual metrics when multipliers are given.
pub fn classify_trajectory(
    traj: &Trajectory,
    p: &PointingProblem,
    etas: Option<&[Vec<f64>]>,
) -> Result<Vec<GridClassification>> {
    let tol = ClassifyTolerances::for_problem(p);
    let mut out = Vec::with_capacity(traj.controls.len());
    for (i, (u, &sigma)) in traj.controls.iter().zip(&traj.sigmas).enumerate() {
        let t = p.dm.time(i);
        let mut c = match p.formulation {
            Formulation::Pointing => classify_p3(i, t, u, sigma, p, &tol)?,
            Formulation::DualMode => classify_p4(i, t, u, sigma, p, &tol)?,
        };
        if let Some(etas) = etas {
            c.metrics = Some(cone_metrics(&etas[i], &p.dm.b, &p.geom));
        }
        out.push(c);
    }
    Ok(out)
}

/// `max_i ‖η_i − Aᵀη_{i+1}‖ / max(1, ‖η_N‖)`.
pub fn dual_recursion_residual(etas: &[Vec<f64>], a: &DMatrix<f64>) -> f64 {
    let Some(last) = etas.last() else {
        return 0.0;
    };
    let at = a.transpose();
    let mut worst = 0.0f64;
    for w in etas.windows(2) {
        let pred = &at * DVector::from_column_slice(&w[1]);
        let diff = DVector::from_column_slice(&w[0]) - pred;
        worst = worst.max(diff.norm());
    }
    worst / norm(last).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalityReport {
    pub passed: bool,
    /// Some `σ_i` sits strictly above `ρ_min`.
    pub sigma_clause: bool,
    /// The terminal cost varies along the terminal manifold.
    pub terminal_clause: bool,
    pub eta_n_norm: f64,
    /// The check failed although the solver returned `η_N ≠ 0`.
    pub discrepancy: bool,
}

pub fn check_transversality(traj: &Trajectory, p: &PointingProblem, eta_n: &[f64], tol_sigma: f64) -> TransversalityReport {
    let sigma_clause = traj.sigmas.iter().any(|s| s - p.rho_min > tol_sigma);
    let terminal_clause = match &p.terminal.cost {
        TerminalCost::Zero => false,
        TerminalCost::Affine(c) => {
            let c = DVector::from_column_slice(c);
            let g = &p.terminal.g_matrix;
            let proj = if g.nrows() == 0 {
                c.clone()
            } else {
                let gg = g * g.transpose();
                let pinv = gg.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(g.nrows(), g.nrows()));
                &c - g.transpose() * (pinv * (g * &c))
            };
            proj.norm() > 1e-12 * c.norm().max(1.0)
        }
    };
    let passed = sigma_clause || terminal_clause;
    let eta_n_norm = norm(eta_n);
    TransversalityReport {
        passed,
        sigma_clause,
        terminal_clause,
        eta_n_norm,
        discrepancy: !passed && eta_n_norm > 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ViolationBound {
    Finite(usize),
    /// No certified bound: dual-mode controls outside the plane.
    Heuristic,
}

impl ViolationBound {
    pub fn for_problem(p: &PointingProblem) -> Self {
        let nx = p.dm.nx();
        match p.formulation {
            Formulation::Pointing => ViolationBound::Finite(nx - 1),
            Formulation::DualMode if p.dm.nu() == 2 => ViolationBound::Finite(2 * nx - 2),
            Formulation::DualMode => ViolationBound::Heuristic,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AssumptionResults {
    pub equality_rank: Option<EqualityRankReport>,
    pub interior_point: Option<SlaterReport>,
    pub controllability: Option<ControllabilityReport>,
    pub transversality: Option<TransversalityReport>,
    /// Randomized audit; it can refute but never prove the condition.
    pub subset_audit: Option<SubsetAudit>,
}

impl AssumptionResults {
    /// Every assumption was evaluated, applies, and passed.
    pub fn all_pass(&self) -> bool {
        self.equality_rank.as_ref().is_some_and(|r| r.passed)
            && self.interior_point.as_ref().is_some_and(|r| r.passed)
            && self.controllability.as_ref().is_some_and(|r| r.applicable && r.passed)
            && self.transversality.as_ref().is_some_and(|r| r.passed)
            && self.subset_audit.as_ref().is_some_and(|r| r.applicable && r.passed)
    }

    /// Names of assumptions that were evaluated, apply, and failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.equality_rank.as_ref().is_some_and(|r| !r.passed) {
            out.push("equality_rank");
        }
        if self.interior_point.as_ref().is_some_and(|r| !r.passed) {
            out.push("interior_point");
        }
        if self.controllability.as_ref().is_some_and(|r| r.applicable && !r.passed) {
            out.push("controllability");
        }
        if self.transversality.as_ref().is_some_and(|r| !r.passed) {
            out.push("transversality");
        }
        if self.subset_audit.as_ref().is_some_and(|r| r.applicable && !r.passed) {
            out.push("subset_audit");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairedPoint {
    pub index: usize,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub controls: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    /// Terminal residual `‖G x_{N+1} + g‖` of the relaxed controls, re-propagated.
    pub final_state_error_before: f64,
    pub final_state_error_after: f64,
    pub repaired: Vec<RepairedPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LcvxReport {
    pub formulation: Formulation,
    pub heuristic: bool,
    pub classifications: Vec<GridClassification>,
    pub violations: Vec<usize>,
    pub violation_count: usize,
    pub bound: ViolationBound,
    pub assumptions: AssumptionResults,
    pub dual_recursion_residual: Option<f64>,
    pub eta_n_norm: Option<f64>,
    /// `η_N` is numerically zero, so the dual metrics carry no information.
    pub dual_inconclusive: bool,
    /// At least one of the last `n_x` grid points is valid.
    pub last_nx_has_valid: bool,
    pub repair: Option<RepairOutcome>,
}

impl LcvxReport {
    /// Count exceeds a finite bound although every assumption holds.
    pub fn theory_violation(&self) -> bool {
        match self.bound {
            ViolationBound::Finite(b) => self.assumptions.all_pass() && self.violation_count > b,
            ViolationBound::Heuristic => false,
        }
    }

    pub fn check_bound(&self) -> Result<()> {
        if self.theory_violation() {
            if let ViolationBound::Finite(bound) = self.bound {
                return Err(LcvxError::TheoryViolation {
                    count: self.violation_count,
                    bound,
                });
            }
        }
        Ok(())
    }
}

pub struct ReportInputs<'a> {
    pub problem: &'a PointingProblem,
    pub classifications: Vec<GridClassification>,
    pub etas: Option<&'a [Vec<f64>]>,
    pub assumptions: AssumptionResults,
    /// Magnitude used to decide whether `η_N` is numerically zero.
    pub scale: f64,
    pub repair: Option<RepairOutcome>,
}

/// Assembles the report without asserting the bound.
pub fn summarize(inputs: ReportInputs<'_>) -> LcvxReport {
    let p = inputs.problem;
    let violations: Vec<usize> = inputs.classifications.iter().filter(|c| !c.valid).map(|c| c.index).collect();
    let nx = p.dm.nx();
    let n = inputs.classifications.len();
    let last_nx_has_valid = inputs.classifications[n.saturating_sub(nx)..].iter().any(|c| c.valid);
    let eta_n_norm = inputs.etas.and_then(|e| e.last()).map(|v| norm(v));
    let dual_inconclusive = eta_n_norm.is_some_and(|v| v <= 1e-9 * inputs.scale.max(1.0));
    LcvxReport {
        formulation: p.formulation,
        heuristic: p.is_heuristic(),
        violation_count: violations.len(),
        violations,
        bound: ViolationBound::for_problem(p),
        dual_recursion_residual: inputs.etas.map(|e| dual_recursion_residual(e, &p.dm.a)),
        eta_n_norm,
        dual_inconclusive,
        last_nx_has_valid,
        classifications: inputs.classifications,
        assumptions: inputs.assumptions,
        repair: inputs.repair,
    }
}

/// Assembles the report and fails if a finite bound is exceeded under passing assumptions.
pub fn count_and_bound(inputs: ReportInputs<'_>) -> Result<LcvxReport> {
    let report = summarize(inputs);
    report.check_bound()?;
    Ok(report)
}

/// Nearest point of `{ρ_min ≤ ‖u‖ ≤ ρ_max, ξᵀu ≥ γ‖u‖}`.
pub fn project_pointing_set(u: &[f64], geom: &PointingGeometry, rho_min: f64, rho_max: f64) -> Vec<f64> {
    let xi = &geom.xi;
    let mag = norm(u);
    let along = dot(xi, u);
    let dir: Vec<f64> = if mag > 0.0 && along >= geom.gamma * mag {
        u.iter().map(|v| v / mag).collect()
    } else {
        let mut perp: Vec<f64> = u.iter().zip(xi).map(|(v, x)| v - along * x).collect();
        let mut pn = norm(&perp);
        if pn <= 1e-15 * mag.max(1.0) {
            // u on the axis (or zero): every boundary direction is equally close
            perp = geom.m.column(0).iter().copied().collect();
            pn = norm(&perp);
        }
        let s = (1.0 - geom.gamma * geom.gamma).sqrt();
        if mag == 0.0 {
            xi.clone()
        } else {
            xi.iter().zip(&perp).map(|(x, q)| geom.gamma * x + s * q / pn).collect()
        }
    };
    let r = dot(u, &dir).clamp(rho_min, rho_max);
    dir.iter().map(|d| r * d).collect()
}

/// Nearest point of `{0} ∪ {ρ_min ≤ ‖u‖ ≤ ρ_max, ξᵀu ≥ γ‖u‖}`; ties go to 0.
pub fn project_dual_mode_set(u: &[f64], geom: &PointingGeometry, rho_min: f64, rho_max: f64) -> Vec<f64> {
    let on = project_pointing_set(u, geom, rho_min, rho_max);
    let d_on: f64 = norm(&u.iter().zip(&on).map(|(a, b)| a - b).collect::<Vec<_>>());
    if norm(u) <= d_on {
        vec![0.0; u.len()]
    } else {
        on
    }
}

fn terminal_residual(p: &PointingProblem, x: &[f64]) -> f64 {
    let t = &p.terminal;
    if t.rows() == 0 {
        return 0.0;
    }
    (&t.g_matrix * DVector::from_column_slice(x) + &t.g_offset).norm()
}

/// Replaces violating controls by their projections and re-propagates.
pub fn project_repair(traj: &Trajectory, p: &PointingProblem, classes: &[GridClassification]) -> RepairOutcome {
    let before_states = p.dm.propagate(&p.x_init, &traj.controls);
    let mut controls = traj.controls.clone();
    let mut repaired = Vec::new();
    for c in classes.iter().filter(|c| !c.valid) {
        let u = &traj.controls[c.index];
        let proj = match p.formulation {
            Formulation::Pointing => project_pointing_set(u, &p.geom, p.rho_min, p.rho_max),
            Formulation::DualMode => project_dual_mode_set(u, &p.geom, p.rho_min, p.rho_max),
        };
        let distance = norm(&u.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
        repaired.push(RepairedPoint {
            index: c.index,
            before: u.clone(),
            after: proj.clone(),
            distance,
        });
        controls[c.index] = proj;
    }
    let states = p.dm.propagate(&p.x_init, &controls);
    RepairOutcome {
        final_state_error_before: terminal_residual(p, before_states.last().unwrap()),
        final_state_error_after: terminal_residual(p, states.last().unwrap()),
        controls,
        states,
        repaired,
    }
}

/// Re-reads a repaired control sequence as a relaxed solution with `σ_i = max(‖u_i‖, ρ_min)`.
pub fn as_trajectory(p: &PointingProblem, controls: &[Vec<f64>]) -> Trajectory {
    Trajectory {
        states: p.dm.propagate(&p.x_init, controls),
        controls: controls.to_vec(),
        sigmas: controls.iter().map(|u| norm(u).max(p.rho_min)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{discretize, sector_geometry, ContinuousModel};
    use crate::problem::{StageCostSpec, TerminalSpec};
    use proptest::prelude::*;

    fn problem(formulation: Formulation) -> PointingProblem {
        let cm = ContinuousModel::drag_point_mass(0.05, &[0.0, -1.0], 4.7, 8).unwrap();
        PointingProblem {
            formulation,
            dm: discretize(&cm).unwrap().with_perturbed_a(1e-5),
            geom: sector_geometry(&[0.0, 1.0], 55f64.to_radians().cos(), 3).unwrap(),
            rho_min: 1.2,
            rho_max: 1.6,
            x_init: vec![0.5, 1.0, -1.6, 0.6],
            terminal: TerminalSpec::fixed(&[0.0; 4]),
            stage_cost: StageCostSpec::uniform(8, 1.0),
            penalty_weight: 0.0,
        }
    }

    fn tol() -> ClassifyTolerances {
        ClassifyTolerances::new(1.2, 1.6)
    }

    #[test]
    fn p3_cases() {
        let p = problem(Formulation::Pointing);
        let c = classify_p3(0, 0.0, &[0.0, 1.2], 1.2, &p, &tol()).unwrap();
        assert!(c.valid && c.reason == Reason::SatisfiesP1);
        let c = classify_p3(0, 0.0, &[0.0, 0.0], 1.6, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::InteriorOfV);
        assert!(!c.valid);
        // a point on the chord AB of the cap: ξᵀu = γσ with ‖u‖ < σ
        let g = p.geom.gamma;
        let u = [0.3, g * 1.2];
        assert!(norm(&u) < 1.2);
        let c = classify_p3(0, 0.0, &u, 1.2, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::OnCapBase);
        assert!(classify_p3(0, 0.0, &[0.0, 1.0], 2.0, &p, &tol()).is_err());
    }

    #[test]
    fn p4_cases() {
        let p = problem(Formulation::DualMode);
        let c = classify_p4(0, 0.0, &[0.0, 0.0], 1.2, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::ModeOff);
        let oa = p.geom.planar.as_ref().unwrap().oa;
        let u = [0.6 * oa[0], 0.6 * oa[1]];
        let c = classify_p4(0, 0.0, &u, 1.2, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::OnSectorSideOa);
        let ob = p.geom.planar.as_ref().unwrap().ob;
        let c = classify_p4(0, 0.0, &[0.6 * ob[0], 0.6 * ob[1]], 1.2, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::OnSectorSideOb);
        let c = classify_p4(0, 0.0, &[0.0, 0.6], 1.2, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::InteriorOfV);
        let c = classify_p4(0, 0.0, &[0.0, 1.5], 1.5, &p, &tol()).unwrap();
        assert_eq!(c.reason, Reason::ModeOn);
        assert!(classify_p4(0, 0.0, &[1.3, 0.0], 1.3, &p, &tol()).is_err());
    }

    #[test]
    fn cone_metric_cases() {
        let p = problem(Formulation::DualMode);
        let pl = p.geom.planar.clone().unwrap();
        let eye = DMatrix::identity(2, 2);
        // v = −η; choose η so that v ∥ ξ
        let m = cone_metrics(&[0.0, -2.0], &eye, &p.geom);
        assert_eq!(m.xi.raw, 0.0);
        let m = cone_metrics(&[-pl.xi1[0], -pl.xi1[1]], &eye, &p.geom);
        assert!(m.xi1.unwrap().raw.abs() < 1e-15);
        let sin = (1.0 - dot(&pl.xi1, &pl.xi2).powi(2)).sqrt();
        assert!((m.xi2.unwrap().raw - sin).abs() < 1e-15);
        let m = cone_metrics(&[0.0, 0.0], &eye, &p.geom);
        assert!(m.eta_zero && m.xi.normalized == 0.0);
    }

    #[test]
    fn recursion_residual_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.9]);
        assert_eq!(dual_recursion_residual(&[vec![1.0, 2.0]], &a), 0.0);
        let mut etas = vec![vec![0.3, -1.7]];
        for _ in 0..20 {
            let next = a.transpose() * DVector::from_column_slice(etas.last().unwrap());
            etas.push(next.as_slice().to_vec());
        }
        etas.reverse();
        assert!(dual_recursion_residual(&etas, &a) < 1e-14);
        etas[3][0] += 1.0;
        assert!(dual_recursion_residual(&etas, &a) > 0.1);
    }

    #[test]
    fn transversality_cases() {
        let p = problem(Formulation::DualMode);
        let flat = Trajectory {
            states: vec![],
            controls: vec![],
            sigmas: vec![1.2; 8],
        };
        let rep = check_transversality(&flat, &p, &[0.0; 4], 1e-6);
        assert!(!rep.passed && !rep.discrepancy);
        let rep = check_transversality(&flat, &p, &[0.0, 1.0, 0.0, 0.0], 1e-6);
        assert!(rep.discrepancy);
        let busy = Trajectory {
            sigmas: vec![1.2, 1.6, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2],
            ..flat.clone()
        };
        assert!(check_transversality(&busy, &p, &[0.0; 4], 1e-6).passed);
        // a terminal cost that is constant on the fixed terminal point does not help
        let mut q = p.clone();
        q.terminal.cost = TerminalCost::Affine(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!check_transversality(&flat, &q, &[0.0; 4], 1e-6).passed);
        q.terminal = TerminalSpec::free(4);
        q.terminal.cost = TerminalCost::Affine(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(check_transversality(&flat, &q, &[0.0; 4], 1e-6).terminal_clause);
    }

    #[test]
    fn bounds_per_mode() {
        let p = problem(Formulation::DualMode);
        assert_eq!(ViolationBound::for_problem(&p), ViolationBound::Finite(6));
        assert_eq!(ViolationBound::for_problem(&problem(Formulation::Pointing)), ViolationBound::Finite(3));
    }

    #[test]
    fn dual_mode_projection_tie_goes_to_zero() {
        let p = problem(Formulation::DualMode);
        assert_eq!(project_dual_mode_set(&[0.0, 0.6], &p.geom, 1.2, 1.6), vec![0.0, 0.0]);
        assert_eq!(project_dual_mode_set(&[0.0, 0.59], &p.geom, 1.2, 1.6), vec![0.0, 0.0]);
        let q = project_dual_mode_set(&[0.0, 0.61], &p.geom, 1.2, 1.6);
        assert!((q[1] - 1.2).abs() < 1e-15 && q[0] == 0.0);
        assert_eq!(project_dual_mode_set(&[0.0, 1.4], &p.geom, 1.2, 1.6), vec![0.0, 1.4]);
    }

    #[test]
    fn repair_leaves_valid_controls_alone() {
        let p = problem(Formulation::DualMode);
        let controls = vec![vec![0.0, 1.4]; 8];
        let traj = as_trajectory(&p, &controls);
        let classes = classify_trajectory(&traj, &p, None).unwrap();
        let out = project_repair(&traj, &p, &classes);
        assert!(out.repaired.is_empty());
        assert_eq!(out.controls, controls);
        assert_eq!(out.final_state_error_before, out.final_state_error_after);
    }

    fn brute_force_distance(u: [f64; 2], geom: &PointingGeometry, rho: (f64, f64)) -> f64 {
        let half = geom.half_angle();
        let axis = geom.xi[1].atan2(geom.xi[0]);
        let dist = |a: f64, r: f64| ((u[0] - r * a.cos()).powi(2) + (u[1] - r * a.sin()).powi(2)).sqrt();
        let (mut best, mut ba, mut br) = (f64::INFINITY, 0.0, 0.0);
        for i in 0..100 {
            for j in 0..100 {
                let a = axis - half + 2.0 * half * i as f64 / 99.0;
                let r = rho.0 + (rho.1 - rho.0) * j as f64 / 99.0;
                let d = dist(a, r);
                if d < best {
                    (best, ba, br) = (d, a, r);
                }
            }
        }
        // coordinate-wise golden-section polish around the best grid cell
        let da = 2.0 * half / 99.0;
        let dr = (rho.1 - rho.0) / 99.0;
        let golden = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| {
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            0.5 * (a + b)
        };
        for _ in 0..30 {
            let r0 = br;
            ba = golden(&|a| dist(a, r0), (ba - da).max(axis - half), (ba + da).min(axis + half));
            let a0 = ba;
            br = golden(&|r| dist(a0, r), (br - dr).max(rho.0), (br + dr).min(rho.1));
        }
        best.min(dist(ba, br))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pointing_projection_matches_search(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let p = problem(Formulation::Pointing);
            let proj = project_pointing_set(&[x, y], &p.geom, 1.2, 1.6);
            let d = ((x - proj[0]).powi(2) + (y - proj[1]).powi(2)).sqrt();
            let oracle = brute_force_distance([x, y], &p.geom, (1.2, 1.6));
            prop_assert!((d - oracle).abs() <= 1e-8, "projection {d} vs search {oracle}");
        }

        #[test]
        fn repair_is_idempotent(
            raw in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 8),
            dual_mode in any::<bool>(),
        ) {
            let p = problem(if dual_mode { Formulation::DualMode } else { Formulation::Pointing });
            let controls: Vec<Vec<f64>> = raw.iter().map(|&(a, b)| vec![a, b]).collect();
            // treat every step as violating on the first pass
            let traj = as_trajectory(&p, &controls);
            let all: Vec<GridClassification> = (0..8)
                .map(|i| base(i, 0.0, &controls[i], traj.sigmas[i], 0.0, Reason::InteriorOfV))
                .collect();
            let once = project_repair(&traj, &p, &all);
            let again_traj = as_trajectory(&p, &once.controls);
            let classes = classify_trajectory(&again_traj, &p, None).unwrap();
            let twice = project_repair(&again_traj, &p, &classes);
            prop_assert!(twice.repaired.is_empty(), "{:?}", twice.repaired);
            prop_assert_eq!(twice.controls, once.controls);
        }
    }
}
