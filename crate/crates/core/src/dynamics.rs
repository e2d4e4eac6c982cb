//! Zero-order-hold discretization, controllability tests and pointing-cone geometry.
//!
//! The continuous plant `ẋ = A_c x + B_c u + z_c` is sampled with a piecewise
//! constant control over `N` intervals of length `dt = t_f / N`. All three
//! discrete blocks come out of one exponential of an augmented generator, so
//! `B` and `z` stay consistent with `A` to machine precision:
//!
//! ```text
//! exp(dt · [A_c  B_c  z_c])   [A  B  z]
//!          [ 0    0    0 ]  = [0  I  0]
//!          [ 0    0    0 ]    [0  0  1]
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LcvxError, Result};
use crate::linalg::{self, expm, numerical_rank};
use crate::problem::Formulation;

/// Continuous-time LTI plant together with the sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub ac: DMatrix<f64>,
    pub bc: DMatrix<f64>,
    pub zc: DVector<f64>,
    /// Time of flight.
    pub tf: f64,
    /// Number of control intervals; the state grid has `steps + 1` points.
    pub steps: usize,
}

impl ContinuousModel {
    pub fn new(
        ac: DMatrix<f64>,
        bc: DMatrix<f64>,
        zc: DVector<f64>,
        tf: f64,
        steps: usize,
    ) -> Result<Self> {
        let nx = ac.nrows();
        if !ac.is_square() {
            return Err(LcvxError::Dimension("A_c must be square".into()));
        }
        if bc.nrows() != nx || zc.len() != nx {
            return Err(LcvxError::Dimension(format!(
                "A_c is {nx}x{nx} but B_c has {} rows and z_c has {} entries",
                bc.nrows(),
                zc.len()
            )));
        }
        if !(tf.is_finite() && tf > 0.0) {
            return Err(LcvxError::InvalidInput(format!("time of flight must be positive, got {tf}")));
        }
        if steps == 0 {
            return Err(LcvxError::InvalidInput("need at least one control interval".into()));
        }
        Ok(Self { ac, bc, zc, tf, steps })
    }

    /// Point mass with linear drag under constant gravity, controlled in
    /// acceleration. State is `[position; velocity]`.
    pub fn drag_point_mass(kd: f64, gravity: &[f64], tf: f64, steps: usize) -> Result<Self> {
        let d = gravity.len();
        let mut ac = DMatrix::zeros(2 * d, 2 * d);
        let mut bc = DMatrix::zeros(2 * d, d);
        let mut zc = DVector::zeros(2 * d);
        for k in 0..d {
            ac[(k, d + k)] = 1.0;
            ac[(d + k, d + k)] = -kd;
            bc[(d + k, k)] = 1.0;
            zc[d + k] = gravity[k];
        }
        Self::new(ac, bc, zc, tf, steps)
    }

    pub fn nx(&self) -> usize {
        self.ac.nrows()
    }

    pub fn nu(&self) -> usize {
        self.bc.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.tf / self.steps as f64
    }
}

/// Discrete dynamics `x_{i+1} = A x_i + B u_i + z`, shared by every step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub z: DVector<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl DiscreteModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, z: DVector<f64>, dt: f64, steps: usize) -> Result<Self> {
        let nx = a.nrows();
        if !a.is_square() || b.nrows() != nx || z.len() != nx {
            return Err(LcvxError::Dimension(format!(
                "discrete model blocks disagree: A {}x{}, B {}x{}, z {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                z.len()
            )));
        }
        if steps == 0 {
            return Err(LcvxError::InvalidInput("need at least one control interval".into()));
        }
        Ok(Self { a, b, z, dt, steps })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// Same model with `eps` added to the strictly upper triangular part of `A`.
    pub fn with_perturbed_a(&self, eps: f64) -> Self {
        Self {
            a: perturb_upper_triangular(&self.a, eps),
            ..self.clone()
        }
    }

    /// Grid time of state/control index `i` (zero based).
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Forward propagation from `x0` under the controls `u` (one slice per step).
    pub fn propagate(&self, x0: &[f64], controls: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut x = DVector::from_column_slice(x0);
        states.push(x.as_slice().to_vec());
        for u in controls {
            x = &self.a * &x + &self.b * DVector::from_column_slice(u) + &self.z;
            states.push(x.as_slice().to_vec());
        }
        states
    }
}

/// Exact zero-order-hold sampling through the augmented matrix exponential.
pub fn discretize(model: &ContinuousModel) -> Result<DiscreteModel> {
    let nx = model.nx();
    let nu = model.nu();
    let dt = model.dt();
    let size = nx + nu + 1;
    let mut aug = DMatrix::zeros(size, size);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&model.ac);
    aug.view_mut((0, nx), (nx, nu)).copy_from(&model.bc);
    aug.view_mut((0, nx + nu), (nx, 1)).copy_from(&model.zc);
    let e = expm(&(aug * dt))?;
    let a = e.view((0, 0), (nx, nx)).into_owned();
    let b = e.view((0, nx), (nx, nu)).into_owned();
    let z = DVector::from_iterator(nx, e.view((0, nx + nu), (nx, 1)).iter().copied());
    DiscreteModel::new(a, b, z, dt, model.steps)
}

/// `[B, AB, …, A^{n−1}B]` for an `n × n` matrix `A`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(LcvxError::Dimension(format!(
            "controllability pair has A {}x{} and B {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    Ok(out)
}

pub fn perturb_upper_triangular(a: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for r in 0..a.nrows() {
        for c in (r + 1)..a.ncols() {
            out[(r, c)] += eps;
        }
    }
    out
}

/// Extra geometry available when the control lives in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarSector {
    /// Boundary ray obtained by rotating `ξ` counter-clockwise.
    pub oa: [f64; 2],
    /// Boundary ray obtained by rotating `ξ` clockwise.
    pub ob: [f64; 2],
    /// Unit normal of `OA` pointing away from `ξ`.
    pub xi1: [f64; 2],
    /// Unit normal of `OB` pointing away from `ξ`.
    pub xi2: [f64; 2],
    pub w1: [f64; 2],
    pub w2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointingGeometry {
    pub xi: Vec<f64>,
    pub gamma: f64,
    /// Orthonormal basis of the complement of `ξ`, one column per direction.
    pub m: DMatrix<f64>,
    pub planar: Option<PlanarSector>,
}

impl PointingGeometry {
    pub fn nu(&self) -> usize {
        self.xi.len()
    }

    /// Half-angle of the pointing cone in radians.
    pub fn half_angle(&self) -> f64 {
        self.gamma.acos()
    }
}

/// Tolerance on `‖ξ‖ = 1` when validating user input.
const UNIT_TOL: f64 = 1e-12;

/// Builds the pointing-cone geometry for reference direction `xi` and cosine
/// bound `gamma`. `seed` fixes the random completion used for `M`.
pub fn sector_geometry(xi: &[f64], gamma: f64, seed: u64) -> Result<PointingGeometry> {
    let nu = xi.len();
    if nu < 2 {
        return Err(LcvxError::Dimension("pointing direction needs at least two components".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(LcvxError::InvalidInput(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let n = linalg::norm(xi);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(LcvxError::InvalidInput(format!("xi must be a unit vector, |xi| = {n}")));
    }

    let m = orthonormal_complement(xi, seed);

    let planar = (nu == 2).then(|| {
        let (s, c) = gamma.acos().sin_cos();
        let rot = |sign: f64| [c * xi[0] - sign * s * xi[1], sign * s * xi[0] + c * xi[1]];
        let oa = rot(1.0);
        let ob = rot(-1.0);
        let xi1 = away_normal(oa, xi);
        let xi2 = away_normal(ob, xi);
        PlanarSector {
            oa,
            ob,
            xi1,
            xi2,
            w1: oa,
            w2: ob,
        }
    });

    Ok(PointingGeometry {
        xi: xi.to_vec(),
        gamma,
        m,
        planar,
    })
}

fn away_normal(ray: [f64; 2], xi: &[f64]) -> [f64; 2] {
    let n = [-ray[1], ray[0]];
    if n[0] * xi[0] + n[1] * xi[1] < 0.0 {
        n
    } else {
        [-n[0], -n[1]]
    }
}

/// QR of `[ξ | Gaussian columns]`; the trailing columns of `Q` span `ξ^⊥`.
fn orthonormal_complement(xi: &[f64], seed: u64) -> DMatrix<f64> {
    let nu = xi.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = DMatrix::zeros(nu, nu);
    for r in 0..nu {
        basis[(r, 0)] = xi[r];
    }
    for c in 1..nu {
        for r in 0..nu {
            basis[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let q = basis.qr().q();
    q.columns(1, nu - 1).into_owned()
}

/// Rank summary for one reduced input pair `(A, B̄)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRank {
    pub label: String,
    pub rank: usize,
    pub required: usize,
    pub smallest_singular_value: f64,
    pub tolerance: f64,
}

impl PairRank {
    pub fn passed(&self) -> bool {
        self.rank >= self.required
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub passed: bool,
    /// `false` when the formulation carries no finite-dimensional condition
    /// (dual-mode controls outside the plane).
    pub applicable: bool,
    pub pairs: Vec<PairRank>,
}

impl ControllabilityReport {
    /// First pair whose rank falls short.
    pub fn deficient(&self) -> Option<&PairRank> {
        self.pairs.iter().find(|p| !p.passed())
    }
}

/// Reduced input matrices `B̄` of the controllability conditions: `BM` for the
/// pointing relaxation, `Bw₁` and `Bw₂` for the planar dual-mode relaxation.
pub fn reduced_inputs(
    dm: &DiscreteModel,
    geom: &PointingGeometry,
    formulation: Formulation,
) -> Vec<(String, DMatrix<f64>)> {
    match formulation {
        Formulation::Pointing => vec![("BM".to_string(), &dm.b * &geom.m)],
        Formulation::DualMode => match &geom.planar {
            Some(p) => vec![
                ("Bw1".to_string(), &dm.b * DMatrix::from_column_slice(2, 1, &p.w1)),
                ("Bw2".to_string(), &dm.b * DMatrix::from_column_slice(2, 1, &p.w2)),
            ],
            None => Vec::new(),
        },
    }
}

fn pair_rank(label: &str, mat: &DMatrix<f64>, required: usize) -> PairRank {
    let info = numerical_rank(mat);
    PairRank {
        label: label.to_string(),
        rank: info.rank,
        required,
        smallest_singular_value: info.singular_values.iter().copied().fold(f64::INFINITY, f64::min),
        tolerance: info.tolerance,
    }
}

/// Controllability of the reduced pairs.
pub fn check_assumption3(
    dm: &DiscreteModel,
    geom: &PointingGeometry,
    formulation: Formulation,
) -> Result<ControllabilityReport> {
    if geom.nu() != dm.nu() {
        return Err(LcvxError::Dimension(format!(
            "geometry has {} control components, model has {}",
            geom.nu(),
            dm.nu()
        )));
    }
    let inputs = reduced_inputs(dm, geom, formulation);
    if inputs.is_empty() {
        return Ok(ControllabilityReport {
            passed: true,
            applicable: false,
            pairs: Vec::new(),
        });
    }
    let mut pairs = Vec::new();
    for (label, bbar) in &inputs {
        let c = controllability_matrix(&dm.a, bbar)?;
        pairs.push(pair_rank(label, &c, dm.nx()));
    }
    Ok(ControllabilityReport {
        passed: pairs.iter().all(PairRank::passed),
        applicable: true,
        pairs,
    })
}

/// One failing index set of the multi-step controllability audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFailure {
    pub label: String,
    /// One-based grid indices.
    pub subset: Vec<usize>,
    pub rank: usize,
}

/// Randomized audit of the multi-step controllability condition. Passing it
/// does not prove the condition over every subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAudit {
    pub passed: bool,
    pub applicable: bool,
    pub subsets_checked: usize,
    pub failures: Vec<SubsetFailure>,
    pub seed: u64,
}

pub fn check_assumption5(
    dm: &DiscreteModel,
    geom: &PointingGeometry,
    formulation: Formulation,
    trials: usize,
    seed: u64,
) -> Result<SubsetAudit> {
    let nx = dm.nx();
    let n = dm.steps;
    if n < nx {
        return Err(LcvxError::InvalidInput(format!(
            "multi-step controllability needs N >= n_x, got N = {n}, n_x = {nx}"
        )));
    }
    let inputs = reduced_inputs(dm, geom, formulation);
    if inputs.is_empty() {
        return Ok(SubsetAudit {
            passed: true,
            applicable: false,
            subsets_checked: 0,
            failures: Vec::new(),
            seed,
        });
    }

    // A^k for k = 0..N-1
    let mut powers = Vec::with_capacity(n);
    powers.push(DMatrix::<f64>::identity(nx, nx));
    for k in 1..n {
        let next = &dm.a * &powers[k - 1];
        powers.push(next);
    }

    let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(trials + 1);
    subsets.push(((n - nx + 1)..=n).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut s: Vec<usize> = rand::seq::index::sample(&mut rng, n, nx).into_iter().map(|i| i + 1).collect();
        s.sort_unstable();
        subsets.push(s);
    }

    let mut failures = Vec::new();
    for (label, bbar) in &inputs {
        let w = bbar.ncols();
        for subset in &subsets {
            let mut mat = DMatrix::zeros(nx, nx * w);
            for (k, &p) in subset.iter().enumerate() {
                let block = &powers[n - p] * bbar;
                mat.view_mut((0, k * w), (nx, w)).copy_from(&block);
            }
            let rank = numerical_rank(&mat).rank;
            if rank < nx {
                failures.push(SubsetFailure {
                    label: label.clone(),
                    subset: subset.clone(),
                    rank,
                });
            }
        }
    }

    Ok(SubsetAudit {
        passed: failures.is_empty(),
        applicable: true,
        subsets_checked: subsets.len() * inputs.len(),
        failures,
        seed,
    })
}
