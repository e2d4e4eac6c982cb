use serde::{Deserialize, Serialize};

use crate::error::{LcvxError, Result};

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; nrows + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let keep: Vec<bool> = vals.iter().map(|v| *v != 0.0).collect();
        let mut fr = Vec::new();
        let mut fc = Vec::new();
        let mut fv = Vec::new();
        for k in 0..vals.len() {
            if keep[k] {
                fr.push(rows[k]);
                fc.push(cols[k]);
                fv.push(vals[k]);
            }
        }
        for &r in &fr {
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            cols: fc,
            vals: fv,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, &[])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `y = M x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `y = Mᵀ x`
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }
}

/// A cone acting on a contiguous block of slack rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `s ≥ 0` componentwise.
    Nonnegative(usize),
    /// `s₀ ≥ ‖s₁..‖`.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }

    /// Contribution to the barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) => d,
            Cone::SecondOrder(_) => 1,
        }
    }
}

/// What an equality row block encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EqBlock {
    /// `−x_{i+1} + A x_i + B u_i = −z_i`, with `i` one-based.
    Dynamics(usize),
    Initial,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlock {
    pub label: EqBlock,
    pub start: usize,
    pub len: usize,
}

/// ```text
/// minimize    cᵀy
/// subject to  A y = b
///             h − G y ∈ K₁ × … × K_k
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub g: SparseMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Names the equality rows so multipliers can be mapped back.
    pub eq_blocks: Vec<RowBlock>,
}

impl ConicProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_cone_rows(&self) -> usize {
        self.h.len()
    }

    pub fn degree(&self) -> usize {
        self.cones.iter().map(Cone::degree).sum()
    }

    pub fn count_cones(&self, pred: impl Fn(&Cone) -> bool) -> usize {
        self.cones.iter().filter(|c| pred(c)).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.a.ncols() != n || self.g.ncols() != n {
            return Err(LcvxError::Dimension(format!(
                "program has {n} variables but A has {} columns and G has {}",
                self.a.ncols(),
                self.g.ncols()
            )));
        }
        if self.a.nrows() != self.b.len() || self.g.nrows() != self.h.len() {
            return Err(LcvxError::Dimension("row counts of A/b or G/h disagree".into()));
        }
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        if cone_rows != self.h.len() {
            return Err(LcvxError::Dimension(format!(
                "cones cover {cone_rows} rows, G has {}",
                self.h.len()
            )));
        }
        if self.cones.iter().any(|c| c.dim() == 0) {
            return Err(LcvxError::Dimension("empty cone".into()));
        }
        let finite = self.c.iter().chain(&self.b).chain(&self.h).all(|v| v.is_finite())
            && self.a.triplets().chain(self.g.triplets()).all(|(_, _, v)| v.is_finite());
        if !finite {
            return Err(LcvxError::NonFinite("conic program data".into()));
        }
        Ok(())
    }

    /// Largest equality residual `|Ay − b|` and largest cone violation of
    /// `h − Gy` (negative smallest eigenvalue, 0 when inside) at a point.
    pub fn primal_violation(&self, y: &[f64]) -> (f64, f64) {
        let ay = self.a.mul_vec(y);
        let eq = ay.iter().zip(&self.b).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
        let gy = self.g.mul_vec(y);
        let slack: Vec<f64> = self.h.iter().zip(&gy).map(|(h, g)| h - g).collect();
        let mut cone = 0.0f64;
        let mut st = 0;
        for &c in &self.cones {
            cone = cone.max(-super::cones::min_eigenvalue(c, &slack[st..st + c.dim()]));
            st += c.dim();
        }
        (eq, cone)
    }

    /// Slice of `y` holding the multipliers of an equality block.
    pub fn block(&self, label: EqBlock) -> Option<RowBlock> {
        self.eq_blocks.iter().copied().find(|b| b.label == label)
    }
}

/// Affine expression `Σ coef·y_col + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(col: usize) -> Self {
        Self::term(col, 1.0)
    }

    pub fn term(col: usize, coef: f64) -> Self {
        Self {
            terms: vec![(col, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn plus(mut self, col: usize, coef: f64) -> Self {
        self.terms.push((col, coef));
        self
    }

    pub fn offset(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }
}

/// Incremental assembly of a [`ConicProgram`].
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    c: Vec<f64>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    cones: Vec<Cone>,
    eq_blocks: Vec<RowBlock>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `count` variables with zero cost, returning the first index.
    pub fn add_vars(&mut self, count: usize) -> usize {
        let start = self.c.len();
        self.c.resize(start + count, 0.0);
        start
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_cost(&mut self, col: usize, coef: f64) {
        self.c[col] += coef;
    }

    /// Adds the rows `expr = 0` as one labeled block.
    pub fn add_eq_block(&mut self, label: EqBlock, rows: Vec<Affine>) {
        let start = self.b.len();
        let len = rows.len();
        for row in rows {
            let r = self.b.len();
            for (c, v) in row.terms {
                self.a.push((r, c, v));
            }
            self.b.push(-row.constant);
        }
        self.eq_blocks.push(RowBlock { label, start, len });
    }

    /// Requires the stacked expressions to lie in `cone`.
    pub fn add_cone(&mut self, kind: ConeKind, exprs: Vec<Affine>) {
        let cone = match kind {
            ConeKind::Nonnegative => Cone::Nonnegative(exprs.len()),
            ConeKind::SecondOrder => Cone::SecondOrder(exprs.len()),
        };
        for e in exprs {
            let r = self.h.len();
            for (c, v) in e.terms {
                self.g.push((r, c, -v));
            }
            self.h.push(e.constant);
        }
        // merge adjacent orthant blocks to keep the cone list short
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Nonnegative(d)), Cone::Nonnegative(k)) => *d += k,
            _ => self.cones.push(cone),
        }
    }

    pub fn build(self) -> ConicProgram {
        let n = self.c.len();
        ConicProgram {
            a: SparseMatrix::from_triplets(self.b.len(), n, &self.a),
            g: SparseMatrix::from_triplets(self.h.len(), n, &self.g),
            c: self.c,
            b: self.b,
            h: self.h,
            cones: self.cones,
            eq_blocks: self.eq_blocks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Nonnegative,
    SecondOrder,
}
