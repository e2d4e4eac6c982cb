//! discretize → relax → solve → certify → repair, and parameter sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::certify::{
    check_transversality, classify_trajectory, project_repair, summarize, AssumptionResults,
    ClassifyTolerances, LcvxReport, ReportInputs,
};
use crate::conic::{
    dump, extract_dynamics_duals, Certificate, ConicSolver, InteriorPointSolver, Residuals, SolveStatus,
};
use crate::dynamics::{check_assumption3, check_assumption5};
use crate::error::{LcvxError, Result};
use crate::output;
use crate::problem::{check_assumption1, check_assumption2, relax, Formulation, PointingProblem, Trajectory};
use crate::scenario::{Scenario, SweepParam};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INFEASIBLE: i32 = 2;
    pub const ASSUMPTION_FAILURE: i32 = 3;
    pub const SOLVER_FAILURE: i32 = 4;
    pub const THEORY_VIOLATION: i32 = 5;
    pub const MALFORMED_SCENARIO: i32 = 64;
    pub const IO: i32 = 74;
}

/// Exit code for an error that aborted a run.
pub fn exit_code_for(err: &LcvxError) -> i32 {
    match err {
        LcvxError::Scenario { .. }
        | LcvxError::InvalidInput(_)
        | LcvxError::Dimension(_)
        | LcvxError::NonFinite(_) => exit::MALFORMED_SCENARIO,
        LcvxError::Numerical(_) | LcvxError::NotOptimal(_) => exit::SOLVER_FAILURE,
        LcvxError::TheoryViolation { .. } => exit::THEORY_VIOLATION,
        LcvxError::Io { .. } | LcvxError::Serialization(_) => exit::IO,
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub repair: bool,
    /// Also write the conic program in the plain-text dump format.
    pub dump_program: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            repair: true,
            dump_program: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub kind: &'static str,
    pub residual: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub scenario: String,
    pub formulation: Formulation,
    pub dimension: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub residuals: Residuals,
    pub certificate: Option<CertificateSummary>,
    pub assumptions: AssumptionResults,
    pub report: Option<LcvxReport>,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub taus: Option<Vec<f64>>,
    #[serde(skip)]
    pub etas: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub program_dump: Option<String>,
}

impl RunResult {
    pub fn violation_count(&self) -> Option<usize> {
        self.report.as_ref().map(|r| r.violation_count)
    }

    pub fn final_error_after_repair(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.repair.as_ref()).map(|r| r.final_state_error_after)
    }
}

fn precedence(status: SolveStatus, theory: bool, assumption_failures: &[&str]) -> i32 {
    match status {
        SolveStatus::PrimalInfeasible => exit::INFEASIBLE,
        SolveStatus::Optimal if theory => exit::THEORY_VIOLATION,
        SolveStatus::Optimal if !assumption_failures.is_empty() => exit::ASSUMPTION_FAILURE,
        SolveStatus::Optimal => exit::OK,
        _ => exit::SOLVER_FAILURE,
    }
}

/// Assumptions that can be checked before solving.
pub fn check_assumptions(p: &PointingProblem, solver: &dyn ConicSolver, trials: usize, seed: u64) -> Result<AssumptionResults> {
    let mut out = AssumptionResults {
        equality_rank: Some(check_assumption1(p)?),
        interior_point: Some(check_assumption2(p, solver)?),
        controllability: Some(check_assumption3(&p.dm, &p.geom, p.formulation)?),
        ..Default::default()
    };
    if p.dm.steps >= p.dm.nx() {
        out.subset_audit = Some(check_assumption5(&p.dm, &p.geom, p.formulation, trials, seed)?);
    } else {
        warn!("horizon shorter than the state dimension; skipping the subset audit");
    }
    Ok(out)
}

/// Pre-solve assumption report for `check`; exit code 0 or 3.
pub fn check(scenario: &Scenario, seed: Option<u64>) -> Result<(AssumptionResults, i32)> {
    let seed = seed.or(scenario.seed).unwrap_or(0);
    let p = scenario.to_problem(seed)?;
    let solver = InteriorPointSolver::new(scenario.solver_settings());
    let a = check_assumptions(&p, &solver, scenario.checks.subset_trials, seed)?;
    let code = if a.failures().is_empty() {
        exit::OK
    } else {
        exit::ASSUMPTION_FAILURE
    };
    Ok((a, code))
}

pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult> {
    let seed = opts.seed.or(scenario.seed).unwrap_or(0);
    let p = scenario.to_problem(seed)?;
    let solver = InteriorPointSolver::new(scenario.solver_settings());
    let started = Instant::now();
    let mut assumptions = check_assumptions(&p, &solver, scenario.checks.subset_trials, seed)?;

    let rp = relax(&p)?;
    let sol = solver.solve(&rp.program)?;
    info!(
        "{}: {} after {} iterations, objective {:.10}",
        scenario.name, sol.status, sol.iterations, sol.objective
    );
    let certificate = sol.certificate.as_ref().map(|c| match c {
        Certificate::Primal { residual, .. } => CertificateSummary {
            kind: "primal_infeasible",
            residual: *residual,
        },
        Certificate::Dual { residual, .. } => CertificateSummary {
            kind: "dual_infeasible",
            residual: *residual,
        },
    });

    let mut result = RunResult {
        scenario: scenario.name.clone(),
        formulation: p.formulation,
        dimension: p.dm.nu(),
        steps: p.dm.steps,
        dt: p.dm.dt,
        seed,
        status: sol.status,
        objective: sol.is_optimal().then_some(sol.objective),
        iterations: sol.iterations,
        residuals: sol.residuals,
        certificate,
        assumptions: AssumptionResults::default(),
        report: None,
        exit_code: exit::OK,
        message: String::new(),
        trajectory: None,
        taus: None,
        etas: None,
        program_dump: opts.dump_program.then(|| dump::write_program(&rp.program)),
    };

    if !sol.is_optimal() {
        let failures = assumptions.failures();
        result.assumptions = assumptions;
        result.exit_code = precedence(sol.status, false, &failures);
        result.message = match sol.status {
            SolveStatus::PrimalInfeasible => format!(
                "the {} relaxation is infeasible (certificate residual {:.2e})",
                p.formulation.label(),
                result.certificate.as_ref().map(|c| c.residual).unwrap_or(f64::NAN)
            ),
            other => format!("solver stopped with status {other}"),
        };
        return Ok(result);
    }

    let traj = rp.layout.split(&sol.x);
    let etas = extract_dynamics_duals(&sol, &rp.program)?;
    let tol = ClassifyTolerances::for_problem(&p);
    assumptions.transversality = Some(check_transversality(&traj, &p, etas.last().unwrap(), tol.sigma));
    let classes = classify_trajectory(&traj, &p, Some(&etas))?;
    let repair = opts.repair.then(|| project_repair(&traj, &p, &classes));
    let report = summarize(ReportInputs {
        problem: &p,
        classifications: classes,
        etas: Some(&etas),
        assumptions: assumptions.clone(),
        scale: sol.objective.abs(),
        repair,
    });
    let theory = report.theory_violation();
    let failures = assumptions.failures();
    result.exit_code = precedence(sol.status, theory, &failures);
    result.message = if theory {
        report.check_bound().unwrap_err().to_string()
    } else if !failures.is_empty() {
        format!("assumption check failed: {}", failures.join(", "))
    } else if p.is_heuristic() {
        format!("{} violation(s); heuristic, no violation bound", report.violation_count)
    } else {
        format!("{} violation(s)", report.violation_count)
    };
    result.taus = rp
        .layout
        .tau_start
        .map(|t| sol.x[t..t + p.dm.steps].to_vec());
    result.assumptions = assumptions;
    result.report = Some(report);
    result.trajectory = Some(traj);
    result.etas = Some(etas);
    info!("{}: pipeline finished in {:.3} s", scenario.name, started.elapsed().as_secs_f64());
    Ok(result)
}

/// Runs the pipeline and writes report.json, solution.json and timeseries.csv into `out`.
pub fn run_to_dir(scenario: &Scenario, opts: &RunOptions, out: &Path) -> Result<RunResult> {
    let result = run(scenario, opts)?;
    output::write_run(&result, out)?;
    Ok(result)
}

/// Violation indices recomputed from a stored solution.
pub fn reclassify(scenario: &Scenario, solution: &output::SolutionFile) -> Result<Vec<usize>> {
    let p = scenario.to_problem(solution.seed)?;
    let traj = Trajectory {
        states: solution.x.clone(),
        controls: solution.u.clone(),
        sigmas: solution.sigma.clone(),
    };
    let classes = classify_trajectory(&traj, &p, None)?;
    Ok(classes.iter().filter(|c| !c.valid).map(|c| c.index).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub objective: Option<f64>,
    pub violations: Option<usize>,
    pub final_error_after_repair: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub exit_code: i32,
}

fn run_dir(out: &Path, param: SweepParam, value: f64) -> PathBuf {
    out.join(format!("{param}_{value}"))
}

/// Runs the pipeline once per value on a bounded worker pool.
pub fn sweep(scenario: &Scenario, param: SweepParam, values: &[f64], opts: &RunOptions, out: Option<&Path>) -> Result<SweepResult> {
    if values.is_empty() {
        return Ok(SweepResult {
            param,
            rows: Vec::new(),
            exit_code: exit::OK,
        });
    }
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(values.len());
    let mut rows: Vec<Option<SweepRow>> = vec![None; values.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = std::sync::mpsc::channel::<(usize, SweepRow)>();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= values.len() {
                    break;
                }
                let value = values[k];
                let outcome = scenario.with_param(param, value).and_then(|sc| match out {
                    Some(dir) => run_to_dir(&sc, opts, &run_dir(dir, param, value)),
                    None => run(&sc, opts),
                });
                let row = match outcome {
                    Ok(r) => SweepRow {
                        value,
                        status: r.status.to_string(),
                        objective: r.objective,
                        violations: r.violation_count(),
                        final_error_after_repair: r.final_error_after_repair(),
                    },
                    Err(e) => {
                        warn!("sweep value {value}: {e}");
                        SweepRow {
                            value,
                            status: format!("error: {e}"),
                            objective: None,
                            violations: None,
                            final_error_after_repair: None,
                        }
                    }
                };
                let _ = tx.send((k, row));
            });
        }
        drop(tx);
        for (k, row) in rx {
            rows[k] = Some(row);
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every sweep value reports")).collect();
    if let Some(dir) = out {
        output::write_sweep_csv(&rows, param, &dir.join("sweep.csv"))?;
    }
    let all_failed = rows.iter().all(|r| r.status != SolveStatus::Optimal.as_str());
    Ok(SweepResult {
        param,
        rows,
        exit_code: if all_failed { exit::SOLVER_FAILURE } else { exit::OK },
    })
}
