//! Homogeneous self-dual interior-point method for linear/second-order cone programs.
//!
//! The embedding
//!
//! ```text
//! [0]   [  0   Aᵀ   Gᵀ   c ] [x]   [0]
//! [0] = [ −A   0    0    b ] [y] − [0]
//! [s]   [ −G   0    0    h ] [z]   [s]
//! [κ]   [ −cᵀ −bᵀ  −hᵀ   0 ] [τ]   [κ]
//! ```
//!
//! with `s, z ∈ K` and `τ, κ ≥ 0` is driven to complementarity by
//! Mehrotra predictor-corrector steps in Nesterov–Todd scaled coordinates.
//! At the limit either `τ > 0` (optimal pair `x/τ, (y, z)/τ`) or `κ > 0`
//! (a Farkas ray certifying primal or dual infeasibility).

use log::{debug, trace};

use super::cones::{self, BlockScaling};
use super::kkt::{KktSettings, KktSolver};
use super::program::{Cone, ConicProgram};
use super::{Certificate, ConicSolution, Residuals, SolveStatus, SolverSettings};

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    cones::dot(a, b)
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct Workspace<'a> {
    prog: &'a ConicProgram,
    cone_starts: Vec<usize>,
}

impl<'a> Workspace<'a> {
    fn blocks<'v>(&self, v: &'v [f64]) -> impl Iterator<Item = (Cone, &'v [f64])> + '_
    where
        'v: 'a,
    {
        self.prog
            .cones
            .iter()
            .zip(&self.cone_starts)
            .map(move |(&c, &st)| (c, &v[st..st + c.dim()]))
    }

    fn for_each_block(&self, mut f: impl FnMut(usize, Cone, usize)) {
        for (k, (&c, &st)) in self.prog.cones.iter().zip(&self.cone_starts).enumerate() {
            f(k, c, st);
        }
    }

    /// `v + α e` with `α` chosen to push `v` strictly inside the cone.
    fn shift_into_cone(&self, v: &mut [f64]) {
        let mut worst = f64::NEG_INFINITY;
        self.for_each_block(|_, c, st| {
            worst = worst.max(-cones::min_eigenvalue(c, &v[st..st + c.dim()]));
        });
        let scale = norm2(v).max(1.0);
        if worst >= -1e-8 * scale {
            let alpha = 1.0 + worst.max(0.0);
            self.for_each_block(|_, c, st| cones::add_identity(c, alpha, &mut v[st..st + c.dim()]));
        }
    }

    fn max_step(&self, v: &[f64], d: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        self.for_each_block(|_, c, st| {
            let span = st..st + c.dim();
            alpha = alpha.min(cones::max_step(c, &v[span.clone()], &d[span]));
        });
        alpha
    }

    fn scale_apply(
        &self,
        scaling: &[BlockScaling],
        v: &[f64],
        op: impl Fn(&BlockScaling, &[f64], &mut [f64]),
    ) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.for_each_block(|k, c, st| {
            let span = st..st + c.dim();
            op(&scaling[k], &v[span.clone()], &mut out[span]);
        });
        out
    }
}

pub(crate) fn solve(prog: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    let n = prog.num_vars();
    let p = prog.num_eq();
    let m = prog.num_cone_rows();
    let mut cone_starts = Vec::with_capacity(prog.cones.len());
    let mut acc = 0;
    for c in &prog.cones {
        cone_starts.push(acc);
        acc += c.dim();
    }
    let ws = Workspace { prog, cone_starts };
    let degree = prog.degree() as f64;

    let kkt_settings = KktSettings {
        static_reg: settings.static_regularization,
        dynamic_eps: 1e-13,
        dynamic_delta: 2e-7,
        refine_steps: settings.refinement_steps,
        refine_tol: 1e-13,
    };
    let mut kkt = KktSolver::new(prog, kkt_settings);

    let norm_b = norm2(&prog.b).max(1.0);
    let norm_h = norm2(&prog.h).max(1.0);
    let norm_c = norm2(&prog.c).max(1.0);

    // --- starting point -------------------------------------------------
    let identity: Vec<BlockScaling> = prog.cones.iter().map(|&c| BlockScaling::identity(c)).collect();
    if !kkt.factor(&identity) {
        return failed(n, p, m, 0, "initial factorization produced non-finite pivots");
    }
    let mut rhs = vec![0.0; n + p + m];
    rhs[n..n + p].copy_from_slice(&prog.b);
    rhs[n + p..].copy_from_slice(&prog.h);
    let primal = kkt.solve(prog, &identity, &rhs);
    let mut rhs = vec![0.0; n + p + m];
    for k in 0..n {
        rhs[k] = -prog.c[k];
    }
    let dual = kkt.solve(prog, &identity, &rhs);

    let mut it = Iterate {
        x: primal[..n].to_vec(),
        y: dual[n..n + p].to_vec(),
        z: dual[n + p..].to_vec(),
        s: primal[n + p..].iter().map(|v| -v).collect(),
        tau: 1.0,
        kappa: 1.0,
    };
    ws.shift_into_cone(&mut it.s);
    ws.shift_into_cone(&mut it.z);

    let mut residuals = Residuals::default();
    let mut status = SolveStatus::MaxIterations;
    let mut certificate = None;
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        // --- residuals ---------------------------------------------------
        let aty = prog.a.tmul_vec(&it.y);
        let gtz = prog.g.tmul_vec(&it.z);
        let ax = prog.a.mul_vec(&it.x);
        let gx = prog.g.mul_vec(&it.x);
        let cx = dot(&prog.c, &it.x);
        let by = dot(&prog.b, &it.y);
        let hz = dot(&prog.h, &it.z);

        let dual_ray: Vec<f64> = aty.iter().zip(&gtz).map(|(a, g)| a + g).collect();
        let rx: Vec<f64> = dual_ray.iter().zip(&prog.c).map(|(d, c)| d + c * it.tau).collect();
        let ry: Vec<f64> = ax.iter().zip(&prog.b).map(|(a, b)| -a + b * it.tau).collect();
        let rz: Vec<f64> = (0..m).map(|k| -gx[k] + prog.h[k] * it.tau - it.s[k]).collect();
        let rtau = -cx - by - hz - it.kappa;

        let sz = dot(&it.s, &it.z);
        let mu = (sz + it.tau * it.kappa) / (degree + 1.0);

        let pcost = cx / it.tau;
        let dcost = -(by + hz) / it.tau;
        let gap = sz / (it.tau * it.tau);
        let pres = (norm2(&ry) / norm_b).max(norm2(&rz) / norm_h) / it.tau;
        let dres = norm2(&rx) / norm_c / it.tau;
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };
        residuals = Residuals {
            primal_feas: pres,
            dual_feas: dres,
            duality_gap: gap,
            relative_gap: relgap,
            primal_objective: pcost,
            dual_objective: dcost,
        };
        trace!(
            "iter {iter:3} pcost {pcost:+.9e} dcost {dcost:+.9e} gap {gap:.2e} pres {pres:.2e} dres {dres:.2e} tau {:.2e} kappa {:.2e}",
            it.tau,
            it.kappa
        );

        if !(pcost.is_finite() && dcost.is_finite() && mu.is_finite()) {
            debug!("ipm: non-finite objective or complementarity at iteration {iter}");
            status = SolveStatus::NumericalFailure;
            break;
        }

        if pres <= settings.eps_feas
            && dres <= settings.eps_feas
            && (gap <= settings.eps_gap_abs || relgap <= settings.eps_gap_rel)
        {
            status = SolveStatus::Optimal;
            break;
        }

        // infeasibility certificates: normalized rays
        if by + hz < 0.0 {
            let q = -(by + hz);
            let ray_res = norm2(&dual_ray) / q;
            if ray_res <= settings.eps_infeas {
                status = SolveStatus::PrimalInfeasible;
                certificate = Some(Certificate::Primal {
                    y: it.y.iter().map(|v| v / q).collect(),
                    z: it.z.iter().map(|v| v / q).collect(),
                    residual: ray_res,
                });
                break;
            }
        }
        if cx < 0.0 {
            let q = -cx;
            let gxs: Vec<f64> = gx.iter().zip(&it.s).map(|(g, s)| g + s).collect();
            let ray_res = norm2(&ax).max(norm2(&gxs)) / q;
            if ray_res <= settings.eps_infeas {
                status = SolveStatus::DualInfeasible;
                certificate = Some(Certificate::Dual {
                    x: it.x.iter().map(|v| v / q).collect(),
                    residual: ray_res,
                });
                break;
            }
        }

        if iter == settings.max_iter {
            break;
        }

        // --- scaling and factorization -------------------------------------
        let scaling: Vec<BlockScaling> = ws
            .blocks(&it.s)
            .zip(ws.blocks(&it.z))
            .map(|((c, s), (_, z))| BlockScaling::nesterov_todd(c, s, z))
            .collect();
        let lambda = ws.scale_apply(&scaling, &it.z, BlockScaling::apply_w);
        if log::log_enabled!(log::Level::Trace) {
            let mut smin = f64::INFINITY;
            let mut zmin = f64::INFINITY;
            ws.for_each_block(|_, c, st| {
                smin = smin.min(cones::min_eigenvalue(c, &it.s[st..st + c.dim()]));
                zmin = zmin.min(cones::min_eigenvalue(c, &it.z[st..st + c.dim()]));
            });
            trace!("min eig s {smin:.2e} z {zmin:.2e}");
        }
        if !kkt.factor(&scaling) {
            debug!("ipm: KKT factorization failed at iteration {iter}");
            status = SolveStatus::NumericalFailure;
            break;
        }

        let mut rhs1 = vec![0.0; n + p + m];
        for k in 0..n {
            rhs1[k] = -prog.c[k];
        }
        rhs1[n..n + p].copy_from_slice(&prog.b);
        rhs1[n + p..].copy_from_slice(&prog.h);
        let v1 = kkt.solve(prog, &scaling, &rhs1);
        let (x1, rest) = v1.split_at(n);
        let (y1, z1) = rest.split_at(p);
        let denom_base = -dot(&prog.c, x1) - dot(&prog.b, y1) - dot(&prog.h, z1);

        let direction = |sigma: f64, rc: &[f64], rkappa: f64| -> Direction {
            let keep = 1.0 - sigma;
            // λ ⧵ rc, then W(λ ⧵ rc)
            let mut t = vec![0.0; m];
            ws.for_each_block(|_, c, st| {
                let span = st..st + c.dim();
                cones::jordan_divide(c, &lambda[span.clone()], &rc[span.clone()], &mut t[span]);
            });
            let wt = ws.scale_apply(&scaling, &t, BlockScaling::apply_w);

            let mut rhs2 = vec![0.0; n + p + m];
            for k in 0..n {
                rhs2[k] = -keep * rx[k];
            }
            for k in 0..p {
                rhs2[n + k] = keep * ry[k];
            }
            for k in 0..m {
                rhs2[n + p + k] = keep * rz[k] - wt[k];
            }
            let v2 = kkt.solve(prog, &scaling, &rhs2);
            let (x2, rest) = v2.split_at(n);
            let (y2, z2) = rest.split_at(p);
            let dtau = (-keep * rtau + rkappa / it.tau + dot(&prog.c, x2) + dot(&prog.b, y2) + dot(&prog.h, z2))
                / (it.kappa / it.tau + denom_base);
            let mut dx = x2.to_vec();
            axpy(dtau, x1, &mut dx);
            let mut dy = y2.to_vec();
            axpy(dtau, y1, &mut dy);
            let mut dz = z2.to_vec();
            axpy(dtau, z1, &mut dz);
            let w2dz = ws.scale_apply(&scaling, &dz, BlockScaling::apply_w2);
            let ds: Vec<f64> = wt.iter().zip(&w2dz).map(|(a, b)| a - b).collect();
            let dkappa = (rkappa - it.kappa * dtau) / it.tau;
            Direction {
                x: dx,
                y: dy,
                z: dz,
                s: ds,
                tau: dtau,
                kappa: dkappa,
            }
        };

        let step_length = |d: &Direction| -> f64 {
            let mut a = ws.max_step(&it.s, &d.s).min(ws.max_step(&it.z, &d.z));
            if d.tau < 0.0 {
                a = a.min(-it.tau / d.tau);
            }
            if d.kappa < 0.0 {
                a = a.min(-it.kappa / d.kappa);
            }
            a
        };

        // --- predictor ----------------------------------------------------
        let mut lam_sq = vec![0.0; m];
        ws.for_each_block(|_, c, st| {
            let span = st..st + c.dim();
            cones::jordan_product(c, &lambda[span.clone()], &lambda[span.clone()], &mut lam_sq[span]);
        });
        let rc_aff: Vec<f64> = lam_sq.iter().map(|v| -v).collect();
        let aff = direction(0.0, &rc_aff, -it.tau * it.kappa);
        let alpha_aff = step_length(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // --- corrector ----------------------------------------------------
        let winv_ds = ws.scale_apply(&scaling, &aff.s, BlockScaling::apply_winv);
        let w_dz = ws.scale_apply(&scaling, &aff.z, BlockScaling::apply_w);
        let mut second_order = vec![0.0; m];
        ws.for_each_block(|_, c, st| {
            let span = st..st + c.dim();
            cones::jordan_product(c, &winv_ds[span.clone()], &w_dz[span.clone()], &mut second_order[span]);
        });
        let mut rc = vec![0.0; m];
        for k in 0..m {
            rc[k] = -lam_sq[k] - second_order[k];
        }
        ws.for_each_block(|_, c, st| cones::add_identity(c, sigma * mu, &mut rc[st..st + c.dim()]));
        let rkappa = -it.tau * it.kappa + sigma * mu - aff.tau * aff.kappa;
        let dir = direction(sigma, &rc, rkappa);
        let alpha = (settings.step_fraction * step_length(&dir)).min(1.0);

        if !(alpha.is_finite() && dir.tau.is_finite()) {
            debug!("ipm: non-finite step at iteration {iter}");
            status = SolveStatus::NumericalFailure;
            break;
        }
        if alpha < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                debug!("ipm: step length stalled at iteration {iter}");
                status = SolveStatus::NumericalFailure;
                break;
            }
        } else {
            stalls = 0;
        }

        axpy(alpha, &dir.x, &mut it.x);
        axpy(alpha, &dir.y, &mut it.y);
        axpy(alpha, &dir.z, &mut it.z);
        axpy(alpha, &dir.s, &mut it.s);
        it.tau += alpha * dir.tau;
        it.kappa += alpha * dir.kappa;

        // keep the homogeneous iterate bounded
        let scale = it.tau.max(it.kappa);
        if scale > 1e8 || scale < 1e-8 {
            for v in it.x.iter_mut().chain(&mut it.y).chain(&mut it.z).chain(&mut it.s) {
                *v /= scale;
            }
            it.tau /= scale;
            it.kappa /= scale;
        }
    }

    debug!(
        "ipm finished: {:?} after {} iterations (pres {:.2e}, dres {:.2e}, gap {:.2e})",
        status, iterations, residuals.primal_feas, residuals.dual_feas, residuals.duality_gap
    );

    let inv_tau = if status == SolveStatus::Optimal || status == SolveStatus::MaxIterations {
        1.0 / it.tau
    } else {
        1.0
    };
    let scaled = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * inv_tau).collect() };
    let x = scaled(&it.x);
    let objective = dot(&prog.c, &x);
    ConicSolution {
        status,
        x,
        s: scaled(&it.s),
        y: scaled(&it.y),
        z: scaled(&it.z),
        objective,
        residuals,
        iterations,
        certificate,
        message: None,
    }
}

fn failed(n: usize, p: usize, m: usize, iterations: usize, msg: &str) -> ConicSolution {
    ConicSolution {
        status: SolveStatus::NumericalFailure,
        x: vec![f64::NAN; n],
        s: vec![f64::NAN; m],
        y: vec![f64::NAN; p],
        z: vec![f64::NAN; m],
        objective: f64::NAN,
        residuals: Residuals::default(),
        iterations,
        certificate: None,
        message: Some(msg.to_string()),
    }
}
