//! Cone arithmetic: Jordan products, Nesterov–Todd scaling and step lengths.

use super::program::Cone;

/// NT scaling of one cone block. `W` is symmetric, so `WᵀW = W²`.
#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    Orthant {
        w: Vec<f64>,
    },
    SecondOrder {
        dim: usize,
        w: Vec<f64>,
        winv: Vec<f64>,
        w2: Vec<f64>,
    },
}

fn dense_mul(mat: &[f64], dim: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..dim {
        out[r] = (0..dim).map(|c| mat[r * dim + c] * v[c]).sum();
    }
}

impl BlockScaling {
    pub(crate) fn identity(cone: Cone) -> Self {
        match cone {
            Cone::Nonnegative(d) => BlockScaling::Orthant { w: vec![1.0; d] },
            Cone::SecondOrder(d) => {
                let mut eye = vec![0.0; d * d];
                for k in 0..d {
                    eye[k * d + k] = 1.0;
                }
                BlockScaling::SecondOrder {
                    dim: d,
                    w: eye.clone(),
                    winv: eye.clone(),
                    w2: eye,
                }
            }
        }
    }

    /// Scaling point of `s` and `z`, both strictly inside the cone.
    pub(crate) fn nesterov_todd(cone: Cone, s: &[f64], z: &[f64]) -> Self {
        match cone {
            Cone::Nonnegative(_) => BlockScaling::Orthant {
                w: s.iter().zip(z).map(|(si, zi)| (si / zi).sqrt()).collect(),
            },
            Cone::SecondOrder(d) => {
                let sn = soc_residual(s).max(f64::MIN_POSITIVE).sqrt();
                let zn = soc_residual(z).max(f64::MIN_POSITIVE).sqrt();
                let sbar: Vec<f64> = s.iter().map(|v| v / sn).collect();
                let zbar: Vec<f64> = z.iter().map(|v| v / zn).collect();
                let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                let mut wbar = vec![0.0; d];
                wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                for k in 1..d {
                    wbar[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
                }
                let eta = (sn / zn).sqrt();
                let w0 = wbar[0];
                let mut w = vec![0.0; d * d];
                let mut winv = vec![0.0; d * d];
                w[0] = eta * w0;
                winv[0] = w0 / eta;
                for k in 1..d {
                    w[k] = eta * wbar[k];
                    w[k * d] = eta * wbar[k];
                    winv[k] = -wbar[k] / eta;
                    winv[k * d] = -wbar[k] / eta;
                    for l in 1..d {
                        let base = if k == l { 1.0 } else { 0.0 } + wbar[k] * wbar[l] / (1.0 + w0);
                        w[k * d + l] = eta * base;
                        winv[k * d + l] = base / eta;
                    }
                }
                let mut w2 = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        w2[r * d + c] = (0..d).map(|k| w[r * d + k] * w[k * d + c]).sum();
                    }
                }
                BlockScaling::SecondOrder { dim: d, w, winv, w2 }
            }
        }
    }

    pub(crate) fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        match self {
            BlockScaling::Orthant { w } => {
                for k in 0..w.len() {
                    out[k] = w[k] * v[k];
                }
            }
            BlockScaling::SecondOrder { dim, w, .. } => dense_mul(w, *dim, v, out),
        }
    }

    pub(crate) fn apply_winv(&self, v: &[f64], out: &mut [f64]) {
        match self {
            BlockScaling::Orthant { w } => {
                for k in 0..w.len() {
                    out[k] = v[k] / w[k];
                }
            }
            BlockScaling::SecondOrder { dim, winv, .. } => dense_mul(winv, *dim, v, out),
        }
    }

    pub(crate) fn apply_w2(&self, v: &[f64], out: &mut [f64]) {
        match self {
            BlockScaling::Orthant { w } => {
                for k in 0..w.len() {
                    out[k] = w[k] * w[k] * v[k];
                }
            }
            BlockScaling::SecondOrder { dim, w2, .. } => dense_mul(w2, *dim, v, out),
        }
    }

    /// Entry `(r, c)` of `W²` within the block.
    pub(crate) fn w2_entry(&self, r: usize, c: usize) -> f64 {
        match self {
            BlockScaling::Orthant { w } => {
                if r == c {
                    w[r] * w[r]
                } else {
                    0.0
                }
            }
            BlockScaling::SecondOrder { dim, w2, .. } => w2[r * dim + c],
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v₀² − ‖v₁‖²`
pub(crate) fn soc_residual(v: &[f64]) -> f64 {
    let tail: f64 = v[1..].iter().map(|x| x * x).sum();
    (v[0] - tail.sqrt()) * (v[0] + tail.sqrt())
}

/// Jordan product `u ∘ v`.
pub(crate) fn jordan_product(cone: Cone, u: &[f64], v: &[f64], out: &mut [f64]) {
    match cone {
        Cone::Nonnegative(d) => {
            for k in 0..d {
                out[k] = u[k] * v[k];
            }
        }
        Cone::SecondOrder(d) => {
            out[0] = dot(u, v);
            for k in 1..d {
                out[k] = u[0] * v[k] + v[0] * u[k];
            }
        }
    }
}

/// Solves `λ ∘ x = r` for `x`.
pub(crate) fn jordan_divide(cone: Cone, lambda: &[f64], r: &[f64], out: &mut [f64]) {
    match cone {
        Cone::Nonnegative(d) => {
            for k in 0..d {
                out[k] = r[k] / lambda[k];
            }
        }
        Cone::SecondOrder(d) => {
            let l0 = lambda[0];
            let det = soc_residual(lambda);
            let l1r1: f64 = (1..d).map(|k| lambda[k] * r[k]).sum();
            let x0 = (l0 * r[0] - l1r1) / det;
            out[0] = x0;
            for k in 1..d {
                out[k] = (r[k] - x0 * lambda[k]) / l0;
            }
        }
    }
}

/// Adds `alpha · e` to the block.
pub(crate) fn add_identity(cone: Cone, alpha: f64, v: &mut [f64]) {
    match cone {
        Cone::Nonnegative(_) => v.iter_mut().for_each(|x| *x += alpha),
        Cone::SecondOrder(_) => v[0] += alpha,
    }
}

/// Smallest eigenvalue of the block in the Jordan algebra.
pub(crate) fn min_eigenvalue(cone: Cone, v: &[f64]) -> f64 {
    match cone {
        Cone::Nonnegative(_) => v.iter().copied().fold(f64::INFINITY, f64::min),
        Cone::SecondOrder(_) => {
            let tail: f64 = v[1..].iter().map(|x| x * x).sum();
            v[0] - tail.sqrt()
        }
    }
}

/// Largest `α ≥ 0` with `x + α d` still in the cone (may be infinite).
pub(crate) fn max_step(cone: Cone, x: &[f64], d: &[f64]) -> f64 {
    match cone {
        Cone::Nonnegative(_) => x
            .iter()
            .zip(d)
            .filter(|(_, di)| **di < 0.0)
            .map(|(xi, di)| -xi / di)
            .fold(f64::INFINITY, f64::min),
        Cone::SecondOrder(_) => {
            let linear = if d[0] < 0.0 { -x[0] / d[0] } else { f64::INFINITY };
            let a = soc_residual(d);
            let b = 2.0 * (x[0] * d[0] - dot(&x[1..], &d[1..]));
            let c = soc_residual(x).max(0.0);
            let quad = smallest_positive_root(a, b, c);
            linear.min(quad).max(0.0)
        }
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let t = -0.5 * (b + b.signum() * disc.sqrt());
    let mut best = f64::INFINITY;
    for r in [t / a, if t != 0.0 { c / t } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}
