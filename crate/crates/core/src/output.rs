//! report.json, solution.json, timeseries.csv and sweep.csv writers.
//!
//! Every float is written with 17 significant digits so files round-trip bit for bit.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::{LcvxError, Result};
use crate::pipeline::{RunResult, SweepRow};
use crate::problem::Formulation;
use crate::scenario::SweepParam;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// JSON formatter writing floats with 17 significant digits.
struct FullPrecision<'a>(serde_json::ser::PrettyFormatter<'a>);

impl Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision(serde_json::ser::PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| LcvxError::Serialization(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| LcvxError::Serialization(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| LcvxError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> LcvxError + '_ {
    move |source| LcvxError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Decision variables and multipliers of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub scenario: String,
    pub formulation: Formulation,
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
    pub objective: f64,
    /// States `x_1 … x_{N+1}`.
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub tau: Option<Vec<f64>>,
    /// Dynamics multipliers `η_1 … η_N`.
    pub eta: Vec<Vec<f64>>,
    #[serde(default)]
    pub repaired_u: Option<Vec<Vec<f64>>>,
}

impl SolutionFile {
    pub fn from_run(r: &RunResult) -> Option<Self> {
        let traj = r.trajectory.as_ref()?;
        Some(SolutionFile {
            scenario: r.scenario.clone(),
            formulation: r.formulation,
            seed: r.seed,
            steps: r.steps,
            dt: r.dt,
            objective: r.objective?,
            x: traj.states.clone(),
            u: traj.controls.clone(),
            sigma: traj.sigmas.clone(),
            tau: r.taus.clone(),
            eta: r.etas.clone()?,
            repaired_u: r.report.as_ref().and_then(|rep| rep.repair.as_ref()).map(|rep| rep.controls.clone()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| LcvxError::Serialization(e.to_string()))
    }
}

fn timeseries_csv(r: &RunResult) -> Result<Option<String>> {
    let (Some(report), Some(traj)) = (r.report.as_ref(), r.trajectory.as_ref()) else {
        return Ok(None);
    };
    let nu = traj.controls.first().map(Vec::len).unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "t".to_string()];
    header.extend((1..=nu).map(|k| format!("u{k}")));
    header.extend(
        [
            "u_norm",
            "sigma",
            "pointing_slack",
            "cross_xi",
            "cross_xi1",
            "cross_xi2",
            "valid",
            "mode",
        ]
        .map(String::from),
    );
    if report.repair.is_some() {
        header.extend((1..=nu).map(|k| format!("repaired_u{k}")));
    }
    w.write_record(&header).map_err(|e| LcvxError::Serialization(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for c in &report.classifications {
        let mut row = vec![c.index.to_string(), fmt_f64(c.time)];
        row.extend(c.u.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(c.u_norm));
        row.push(fmt_f64(c.sigma));
        row.push(fmt_f64(c.pointing_slack));
        let m = c.metrics.as_ref();
        row.push(opt(m.map(|m| m.xi.normalized)));
        row.push(opt(m.and_then(|m| m.xi1).map(|x| x.normalized)));
        row.push(opt(m.and_then(|m| m.xi2).map(|x| x.normalized)));
        row.push(c.valid.to_string());
        row.push(
            serde_json::to_value(c.reason)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
        );
        if let Some(rep) = &report.repair {
            row.extend(rep.controls[c.index].iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&row).map_err(|e| LcvxError::Serialization(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LcvxError::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map(Some).map_err(|e| LcvxError::Serialization(e.to_string()))
}

/// Writes report.json always, solution.json and timeseries.csv when the solve was optimal,
/// and program.txt when a dump was requested.
pub fn write_run(r: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("report.json"), &to_json(r)?)?;
    if let Some(sol) = SolutionFile::from_run(r) {
        write_file(&dir.join("solution.json"), &to_json(&sol)?)?;
    }
    if let Some(csv) = timeseries_csv(r)? {
        write_file(&dir.join("timeseries.csv"), &csv)?;
    }
    if let Some(dump) = &r.program_dump {
        write_file(&dir.join("program.txt"), dump)?;
    }
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], param: SweepParam, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| LcvxError::Serialization(e.to_string());
    w.write_record(["param", "value", "status", "objective", "violations", "final_error_after_repair"])
        .map_err(ser)?;
    for r in rows {
        w.write_record([
            param.to_string(),
            fmt_f64(r.value),
            r.status.clone(),
            r.objective.map(fmt_f64).unwrap_or_default(),
            r.violations.map(|v| v.to_string()).unwrap_or_default(),
            r.final_error_after_repair.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| LcvxError::Serialization(e.to_string()))?;
    write_file(path, &String::from_utf8_lossy(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = vec![0.1, 1.0 / 3.0, -2.5e-300, 62.27455263598784];
        let text = to_json(&v).unwrap();
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json(&f64::NAN).unwrap().trim(), "null");
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
