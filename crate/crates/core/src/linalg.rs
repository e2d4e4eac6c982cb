//! Small dense linear-algebra helpers shared by the modeling and analysis code.

use nalgebra::{DMatrix, DVector};

use crate::error::LcvxError;

/// Padé coefficients for the degree-13 approximant of `exp`.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled degree-13 approximant is accurate to
/// double precision.
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring around a degree-13 Padé core.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LcvxError> {
    if !m.is_square() {
        return Err(LcvxError::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LcvxError::NonFinite("expm input".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let norm1 = one_norm(m);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| LcvxError::Numerical("singular Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Singular-value threshold below which a direction counts as rank deficient.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON
}

/// Result of a singular-value rank computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// Numerical rank from the singular values with [`rank_tolerance`].
pub fn numerical_rank(m: &DMatrix<f64>) -> RankInfo {
    if m.nrows() == 0 || m.ncols() == 0 {
        return RankInfo {
            rank: 0,
            singular_values: Vec::new(),
            tolerance: 0.0,
        };
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let tolerance = rank_tolerance(m.nrows(), m.ncols(), sigma_max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > tolerance).count()
    };
    RankInfo {
        rank,
        singular_values: sv,
        tolerance,
    }
}

/// Row rank by Householder QR with column pivoting applied to `mᵀ`.
pub fn row_rank_pivoted_qr(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let qr = m.transpose().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let lead = diag.iter().copied().fold(0.0, f64::max);
    if lead == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), lead);
    diag.iter().filter(|&&d| d > tol).count()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `‖a × b‖` generalized to any dimension through Lagrange's identity.
pub fn cross_norm(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 2 {
        return (a[0] * b[1] - a[1] * b[0]).abs();
    }
    if a.len() == 3 {
        let c = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        return norm(&c);
    }
    let ab = dot(a, b);
    (dot(a, a) * dot(b, b) - ab * ab).max(0.0).sqrt()
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
