//! Quasi-definite KKT system of the interior-point iteration.
//!
//! ```text
//! K = [ δI   Aᵀ    Gᵀ      ]
//!     [ A   −δI    0       ]
//!     [ G    0   −(W² + δI) ]
//! ```
//!
//! The matrix is reordered once with reverse Cuthill–McKee and factored as
//! `L D Lᵀ` inside its envelope. For the trajectory programs the envelope is a
//! narrow band, so a factorization costs `O(dim · band²)`. Pivots with the
//! wrong sign are bumped (dynamic regularization) and the regularized solve is
//! polished by iterative refinement against the unregularized matrix.

use std::collections::VecDeque;

use super::cones::BlockScaling;
use super::program::{Cone, ConicProgram};

#[derive(Debug, Clone, Copy)]
pub(crate) struct KktSettings {
    pub static_reg: f64,
    pub dynamic_eps: f64,
    pub dynamic_delta: f64,
    pub refine_steps: usize,
    pub refine_tol: f64,
}

pub(crate) struct KktSolver {
    n: usize,
    p: usize,
    dim: usize,
    /// old index -> new index
    iperm: Vec<usize>,
    /// new index -> old index
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
    /// Expected pivot sign in the new ordering.
    sign: Vec<f64>,
    /// Constant off-diagonal entries (A and G) in new coordinates, lower part.
    constant: Vec<(usize, usize, f64)>,
    cone_starts: Vec<usize>,
    cones: Vec<Cone>,
    settings: KktSettings,
    pub(crate) bumped_pivots: usize,
}

impl KktSolver {
    pub(crate) fn new(prog: &ConicProgram, settings: KktSettings) -> Self {
        let n = prog.num_vars();
        let p = prog.num_eq();
        let m = prog.num_cone_rows();
        let dim = n + p + m;

        let mut lower: Vec<(usize, usize, f64)> = Vec::with_capacity(prog.a.nnz() + prog.g.nnz());
        for (r, c, v) in prog.a.triplets() {
            lower.push((n + r, c, v));
        }
        for (r, c, v) in prog.g.triplets() {
            lower.push((n + p + r, c, v));
        }

        let mut cone_starts = Vec::with_capacity(prog.cones.len());
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for &(r, c, _) in &lower {
            adjacency[r].push(c);
            adjacency[c].push(r);
        }
        let mut start = 0;
        for cone in &prog.cones {
            cone_starts.push(start);
            if let Cone::SecondOrder(d) = cone {
                for a in 0..*d {
                    for b in 0..a {
                        let (i, j) = (n + p + start + a, n + p + start + b);
                        adjacency[i].push(j);
                        adjacency[j].push(i);
                    }
                }
            }
            start += cone.dim();
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }

        let perm = reverse_cuthill_mckee(&adjacency);
        let mut iperm = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut first: Vec<usize> = (0..dim).collect();
        for old in 0..dim {
            let i = iperm[old];
            for &nb in &adjacency[old] {
                let j = iperm[nb];
                if j < i && j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut offset = vec![0; dim + 1];
        for i in 0..dim {
            offset[i + 1] = offset[i] + (i - first[i]);
        }

        let constant = lower
            .iter()
            .map(|&(r, c, v)| {
                let (i, j) = (iperm[r], iperm[c]);
                if i > j {
                    (i, j, v)
                } else {
                    (j, i, v)
                }
            })
            .collect();

        let sign = (0..dim).map(|i| if perm[i] < n { 1.0 } else { -1.0 }).collect();

        Self {
            n,
            p,
            dim,
            iperm,
            perm,
            first,
            values: vec![0.0; offset[dim]],
            offset,
            diag: vec![0.0; dim],
            sign,
            constant,
            cone_starts,
            cones: prog.cones.clone(),
            settings,
            bumped_pivots: 0,
        }
    }

    #[cfg(test)]
    pub(crate) fn envelope_size(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j < i && j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// Loads the matrix for the given scaling and factors it.
    pub(crate) fn factor(&mut self, scaling: &[BlockScaling]) -> bool {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        let reg = self.settings.static_reg;
        for old in 0..self.dim {
            let i = self.iperm[old];
            self.diag[i] = if old < self.n { reg } else { -reg };
        }
        for k in 0..self.constant.len() {
            let (i, j, v) = self.constant[k];
            let s = self.slot(i, j);
            self.values[s] += v;
        }
        let base = self.n + self.p;
        for (cone_idx, sc) in scaling.iter().enumerate() {
            let start = self.cone_starts[cone_idx];
            let d = self.cones[cone_idx].dim();
            for a in 0..d {
                let ia = self.iperm[base + start + a];
                self.diag[ia] -= sc.w2_entry(a, a);
                if matches!(self.cones[cone_idx], Cone::SecondOrder(_)) {
                    for b in 0..a {
                        let ib = self.iperm[base + start + b];
                        let (hi, lo) = if ia > ib { (ia, ib) } else { (ib, ia) };
                        let s = self.slot(hi, lo);
                        self.values[s] -= sc.w2_entry(a, b);
                    }
                }
            }
        }
        self.factor_in_place()
    }

    fn factor_in_place(&mut self) -> bool {
        self.bumped_pivots = 0;
        let eps = self.settings.dynamic_eps;
        let delta = self.settings.dynamic_delta;
        let mut work = vec![0.0; self.dim];
        for i in 0..self.dim {
            let fi = self.first[i];
            // work[j] = (L D)_ij for fi <= j < i
            for j in fi..i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                let mut acc = self.values[self.offset[i] + (j - fi)];
                let row_j = self.offset[j];
                for k in lo..j {
                    acc -= work[k] * self.values[row_j + (k - fj)];
                }
                work[j] = acc;
            }
            let mut d = self.diag[i];
            for j in fi..i {
                let l = work[j] / self.diag[j];
                self.values[self.offset[i] + (j - fi)] = l;
                d -= work[j] * l;
            }
            if !d.is_finite() {
                return false;
            }
            if d * self.sign[i] <= eps {
                d = self.sign[i] * delta;
                self.bumped_pivots += 1;
            }
            self.diag[i] = d;
        }
        true
    }

    fn solve_factored(&self, rhs: &mut [f64]) {
        for i in 0..self.dim {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let mut acc = rhs[i];
            for (k, l) in row.iter().enumerate() {
                acc -= l * rhs[fi + k];
            }
            rhs[i] = acc;
        }
        for i in 0..self.dim {
            rhs[i] /= self.diag[i];
        }
        for i in (0..self.dim).rev() {
            let fi = self.first[i];
            let xi = rhs[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            for (k, l) in row.iter().enumerate() {
                rhs[fi + k] -= l * xi;
            }
        }
    }

    /// Unregularized `K v` in the original ordering.
    fn multiply(&self, prog: &ConicProgram, scaling: &[BlockScaling], v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let (x, rest) = v.split_at(n);
        let (y, z) = rest.split_at(p);
        let mut out = vec![0.0; self.dim];
        let aty = prog.a.tmul_vec(y);
        let gtz = prog.g.tmul_vec(z);
        for k in 0..n {
            out[k] = aty[k] + gtz[k];
        }
        let ax = prog.a.mul_vec(x);
        out[n..n + p].copy_from_slice(&ax);
        let gx = prog.g.mul_vec(x);
        for (cone_idx, sc) in scaling.iter().enumerate() {
            let start = self.cone_starts[cone_idx];
            let d = self.cones[cone_idx].dim();
            let mut w2z = vec![0.0; d];
            sc.apply_w2(&z[start..start + d], &mut w2z);
            for a in 0..d {
                out[n + p + start + a] = gx[start + a] - w2z[a];
            }
        }
        out
    }

    /// Solves `K v = rhs` (original ordering), refining against the exact matrix.
    pub(crate) fn solve(&self, prog: &ConicProgram, scaling: &[BlockScaling], rhs: &[f64]) -> Vec<f64> {
        let permute = |v: &[f64]| -> Vec<f64> { self.perm.iter().map(|&old| v[old]).collect() };
        let unpermute = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; self.dim];
            for (new, &old) in self.perm.iter().enumerate() {
                out[old] = v[new];
            }
            out
        };

        let mut work = permute(rhs);
        self.solve_factored(&mut work);
        let mut sol = unpermute(&work);

        let rhs_norm = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = self.settings.refine_tol * (1.0 + rhs_norm);
        let residual = |sol: &[f64]| -> Vec<f64> {
            let kv = self.multiply(prog, scaling, sol);
            rhs.iter().zip(&kv).map(|(r, k)| r - k).collect()
        };
        let mut res = residual(&sol);
        let mut res_norm = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for _ in 0..self.settings.refine_steps {
            if res_norm <= tol {
                break;
            }
            let mut corr = permute(&res);
            self.solve_factored(&mut corr);
            let corr = unpermute(&corr);
            let trial: Vec<f64> = sol.iter().zip(&corr).map(|(s, c)| s + c).collect();
            let trial_res = residual(&trial);
            let trial_norm = trial_res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(trial_norm < res_norm) {
                break;
            }
            sol = trial;
            res = trial_res;
            res_norm = trial_norm;
        }
        log::trace!("kkt solve: residual {res_norm:.2e} (rhs {rhs_norm:.2e}), bumped pivots {}", self.bumped_pivots);
        sol
    }

    #[cfg(test)]
    pub(crate) fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.dim - self.n - self.p)
    }
}

/// Reverse Cuthill–McKee ordering (new position -> old index).
fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let dim = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; dim];
    let mut order = Vec::with_capacity(dim);

    let bfs_levels = |root: usize, visited_outer: &[bool]| -> (usize, usize) {
        // returns (farthest node with minimum degree in last level, depth)
        let mut seen = visited_outer.to_vec();
        let mut queue = VecDeque::from([(root, 0usize)]);
        seen[root] = true;
        let mut last = (root, 0);
        while let Some((v, lvl)) = queue.pop_front() {
            if lvl > last.1 || (lvl == last.1 && degree[v] < degree[last.0]) {
                last = (v, lvl);
            }
            for &nb in &adjacency[v] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back((nb, lvl + 1));
                }
            }
        }
        last
    };

    while order.len() < dim {
        // start from a pseudo-peripheral node of the next component
        let mut root = (0..dim)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| degree[v])
            .unwrap();
        let mut depth = 0;
        for _ in 0..4 {
            let (far, d) = bfs_levels(root, &visited);
            if d <= depth {
                break;
            }
            depth = d;
            root = far;
        }

        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbs: Vec<usize> = adjacency[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbs.sort_by_key(|&u| (degree[u], u));
            for u in nbs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}
