//! Plain-text dump of a [`ConicProgram`] for audits with external solvers.
//!
//! ```text
//! dims <n> <p> <m>
//! c <count>
//! <index> <value>
//! A <count>
//! <row> <col> <value>
//! b <count>
//! ...
//! G <count>
//! h <count>
//! cones <count>
//! l <dim> | q <dim>
//! ```
//!
//! Indices are 0-based, vectors are stored sparsely and all values are
//! written with 17 significant digits so a round trip is exact.

use std::fmt::Write as _;

use super::program::{Cone, ConicProgram, SparseMatrix};
use crate::error::{LcvxError, Result};

pub fn write_program(prog: &ConicProgram) -> String {
    let mut out = String::new();
    let (n, p, m) = (prog.num_vars(), prog.num_eq(), prog.num_cone_rows());
    let _ = writeln!(out, "dims {n} {p} {m}");
    write_vec(&mut out, "c", &prog.c);
    write_mat(&mut out, "A", &prog.a);
    write_vec(&mut out, "b", &prog.b);
    write_mat(&mut out, "G", &prog.g);
    write_vec(&mut out, "h", &prog.h);
    let _ = writeln!(out, "cones {}", prog.cones.len());
    for c in &prog.cones {
        match c {
            Cone::Nonnegative(d) => {
                let _ = writeln!(out, "l {d}");
            }
            Cone::SecondOrder(d) => {
                let _ = writeln!(out, "q {d}");
            }
        }
    }
    out
}

fn write_vec(out: &mut String, name: &str, v: &[f64]) {
    let nz: Vec<_> = v.iter().enumerate().filter(|(_, x)| **x != 0.0).collect();
    let _ = writeln!(out, "{name} {}", nz.len());
    for (k, x) in nz {
        let _ = writeln!(out, "{k} {x:.16e}");
    }
}

fn write_mat(out: &mut String, name: &str, a: &SparseMatrix) {
    let _ = writeln!(out, "{name} {}", a.nnz());
    for (r, c, v) in a.triplets() {
        let _ = writeln!(out, "{r} {c} {v:.16e}");
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (no, line) in self.inner.by_ref() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok((no + 1, line.split_whitespace().collect()));
        }
        Err(LcvxError::InvalidInput("unexpected end of program dump".into()))
    }

    fn header(&mut self, name: &str) -> Result<usize> {
        let (no, tok) = self.next_tokens()?;
        if tok.len() != 2 || tok[0] != name {
            return Err(bad(no, &format!("expected section `{name} <count>`")));
        }
        tok[1].parse().map_err(|_| bad(no, "bad count"))
    }
}

fn bad(line: usize, msg: &str) -> LcvxError {
    LcvxError::InvalidInput(format!("program dump line {line}: {msg}"))
}

fn parse<T: std::str::FromStr>(no: usize, tok: &str) -> Result<T> {
    tok.parse().map_err(|_| bad(no, &format!("cannot parse `{tok}`")))
}

pub fn read_program(text: &str) -> Result<ConicProgram> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (no, tok) = lines.next_tokens()?;
    if tok.len() != 4 || tok[0] != "dims" {
        return Err(bad(no, "expected `dims <n> <p> <m>`"));
    }
    let n: usize = parse(no, tok[1])?;
    let p: usize = parse(no, tok[2])?;
    let m: usize = parse(no, tok[3])?;

    let read_vec = |lines: &mut Lines, name: &str, len: usize| -> Result<Vec<f64>> {
        let count = lines.header(name)?;
        let mut v = vec![0.0; len];
        for _ in 0..count {
            let (no, tok) = lines.next_tokens()?;
            if tok.len() != 2 {
                return Err(bad(no, "expected `<index> <value>`"));
            }
            let k: usize = parse(no, tok[0])?;
            if k >= len {
                return Err(bad(no, "index out of range"));
            }
            v[k] = parse(no, tok[1])?;
        }
        Ok(v)
    };
    let read_mat = |lines: &mut Lines, name: &str, rows: usize| -> Result<SparseMatrix> {
        let count = lines.header(name)?;
        let mut trip = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, tok) = lines.next_tokens()?;
            if tok.len() != 3 {
                return Err(bad(no, "expected `<row> <col> <value>`"));
            }
            let r: usize = parse(no, tok[0])?;
            let c: usize = parse(no, tok[1])?;
            if r >= rows || c >= n {
                return Err(bad(no, "index out of range"));
            }
            trip.push((r, c, parse(no, tok[2])?));
        }
        Ok(SparseMatrix::from_triplets(rows, n, &trip))
    };

    let c = read_vec(&mut lines, "c", n)?;
    let a = read_mat(&mut lines, "A", p)?;
    let b = read_vec(&mut lines, "b", p)?;
    let g = read_mat(&mut lines, "G", m)?;
    let h = read_vec(&mut lines, "h", m)?;
    let count = lines.header("cones")?;
    let mut cones = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, tok) = lines.next_tokens()?;
        if tok.len() != 2 {
            return Err(bad(no, "expected `l <dim>` or `q <dim>`"));
        }
        let d: usize = parse(no, tok[1])?;
        cones.push(match tok[0] {
            "l" => Cone::Nonnegative(d),
            "q" => Cone::SecondOrder(d),
            other => return Err(bad(no, &format!("unknown cone `{other}`"))),
        });
    }
    let prog = ConicProgram {
        c,
        a,
        b,
        g,
        h,
        cones,
        eq_blocks: Vec::new(),
    };
    prog.validate()?;
    Ok(prog)
}
