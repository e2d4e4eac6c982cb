//! Scenario files: a TOML description of one landing problem.
//!
//! ```toml
//! name = "landing2d_p4"
//! mode = "P4"
//! dimension = 2
//! penalty_weight = 0.0
//! perturbation_eps = 1e-5
//!
//! [dynamics]
//! kd = 0.05
//! gravity = [0.0, -1.0]
//! tf = 4.7
//! N = 49
//!
//! [boundary]
//! r0 = [0.5, 1.0]
//! v0 = [-1.6, 0.6]
//! rf = [0.0, 0.0]
//! vf = [0.0, 0.0]
//!
//! [control]
//! rho_min = 1.2
//! rho_max = 1.6
//! phi_max_degrees = 55.0
//! xi = [0.0, 1.0]
//! ```
//!
//! Optional: `seed` (top level), `gamma` instead of `phi_max_degrees`,
//! a `[solver]` table (`max_iter`, `eps_feas`, `eps_gap_abs`, `eps_gap_rel`,
//! `eps_infeas`, `static_regularization`) and a `[checks]` table
//! (`subset_trials`). Unknown keys are rejected.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::conic::SolverSettings;
use crate::dynamics::{discretize, sector_geometry, ContinuousModel};
use crate::error::{LcvxError, Result};
use crate::problem::{Formulation, PointingProblem, StageCostSpec, TerminalSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Spanned<Formulation>,
    pub dimension: Spanned<usize>,
    #[serde(default)]
    pub penalty_weight: Option<Spanned<f64>>,
    #[serde(default)]
    pub perturbation_eps: Option<Spanned<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub dynamics: Dynamics,
    pub boundary: Boundary,
    pub control: Control,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub checks: Checks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    pub kd: Spanned<f64>,
    pub gravity: Spanned<Vec<f64>>,
    pub tf: Spanned<f64>,
    #[serde(rename = "N")]
    pub steps: Spanned<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub r0: Spanned<Vec<f64>>,
    pub v0: Spanned<Vec<f64>>,
    pub rf: Spanned<Vec<f64>>,
    pub vf: Spanned<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub rho_min: Spanned<f64>,
    pub rho_max: Spanned<f64>,
    #[serde(default)]
    pub phi_max_degrees: Option<Spanned<f64>>,
    #[serde(default)]
    pub gamma: Option<Spanned<f64>>,
    pub xi: Spanned<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_iter: Option<usize>,
    pub eps_feas: Option<f64>,
    pub eps_gap_abs: Option<f64>,
    pub eps_gap_rel: Option<f64>,
    pub eps_infeas: Option<f64>,
    pub static_regularization: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "default_trials")]
    pub subset_trials: usize,
}

fn default_trials() -> usize {
    200
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            subset_trials: default_trials(),
        }
    }
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "N")]
    Steps,
    #[serde(rename = "penalty_weight")]
    PenaltyWeight,
    #[serde(rename = "rho_min")]
    RhoMin,
    #[serde(rename = "tf")]
    Tf,
}

impl std::str::FromStr for SweepParam {
    type Err = LcvxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" => Ok(SweepParam::Steps),
            "penalty_weight" => Ok(SweepParam::PenaltyWeight),
            "rho_min" => Ok(SweepParam::RhoMin),
            "tf" => Ok(SweepParam::Tf),
            other => Err(LcvxError::InvalidInput(format!(
                "unknown sweep parameter `{other}` (expected N, penalty_weight, rho_min or tf)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Steps => "N",
            SweepParam::PenaltyWeight => "penalty_weight",
            SweepParam::RhoMin => "rho_min",
            SweepParam::Tf => "tf",
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Scenario error anchored at a byte span of the source.
struct Located<'a> {
    text: &'a str,
}

impl Located<'_> {
    fn err(&self, span: Range<usize>, message: impl Into<String>) -> LcvxError {
        LcvxError::Scenario {
            line: line_of(self.text, span.start),
            message: message.into(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| LcvxError::Scenario {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().trim().to_string(),
        })?;
        sc.validate(&Located { text })?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| LcvxError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn validate(&self, loc: &Located<'_>) -> Result<()> {
        let dim = *self.dimension.get_ref();
        if dim != 2 && dim != 3 {
            return Err(loc.err(self.dimension.span(), format!("dimension must be 2 or 3, got {dim}")));
        }
        let vectors = [
            ("gravity", &self.dynamics.gravity),
            ("r0", &self.boundary.r0),
            ("v0", &self.boundary.v0),
            ("rf", &self.boundary.rf),
            ("vf", &self.boundary.vf),
            ("xi", &self.control.xi),
        ];
        for (name, v) in vectors {
            if v.get_ref().len() != dim {
                return Err(loc.err(
                    v.span(),
                    format!("`{name}` has {} entries but dimension is {dim}", v.get_ref().len()),
                ));
            }
            if v.get_ref().iter().any(|x| !x.is_finite()) {
                return Err(loc.err(v.span(), format!("`{name}` must be finite")));
            }
        }
        let c = &self.control;
        match (&c.phi_max_degrees, &c.gamma) {
            (Some(_), Some(g)) => {
                return Err(loc.err(g.span(), "give exactly one of `phi_max_degrees` and `gamma`"));
            }
            (None, None) => {
                return Err(loc.err(c.xi.span(), "`[control]` needs `phi_max_degrees` or `gamma`"));
            }
            (Some(phi), None) => {
                let v = *phi.get_ref();
                if !(v > 0.0 && v < 90.0) {
                    return Err(loc.err(phi.span(), format!("phi_max_degrees must lie in (0, 90), got {v}")));
                }
            }
            (None, Some(g)) => {
                let v = *g.get_ref();
                if !(v > 0.0 && v < 1.0) {
                    return Err(loc.err(g.span(), format!("gamma must lie in (0, 1), got {v}")));
                }
            }
        }
        let (lo, hi) = (*c.rho_min.get_ref(), *c.rho_max.get_ref());
        if !(lo > 0.0 && lo.is_finite()) {
            return Err(loc.err(c.rho_min.span(), format!("rho_min must be positive, got {lo}")));
        }
        if !(hi >= lo && hi.is_finite()) {
            return Err(loc.err(c.rho_max.span(), format!("rho_max must be at least rho_min, got {hi}")));
        }
        let xi_norm = c.xi.get_ref().iter().map(|x| x * x).sum::<f64>().sqrt();
        if (xi_norm - 1.0).abs() > 1e-12 {
            return Err(loc.err(c.xi.span(), format!("xi must have unit length, got norm {xi_norm}")));
        }
        let d = &self.dynamics;
        if !(*d.tf.get_ref() > 0.0 && d.tf.get_ref().is_finite()) {
            return Err(loc.err(d.tf.span(), "tf must be positive"));
        }
        if *d.steps.get_ref() == 0 {
            return Err(loc.err(d.steps.span(), "N must be at least 1"));
        }
        if !(d.kd.get_ref().is_finite() && *d.kd.get_ref() >= 0.0) {
            return Err(loc.err(d.kd.span(), "kd must be nonnegative"));
        }
        if let Some(w) = &self.penalty_weight {
            if !(*w.get_ref() >= 0.0 && w.get_ref().is_finite()) {
                return Err(loc.err(w.span(), "penalty_weight must be nonnegative"));
            }
        }
        if let Some(e) = &self.perturbation_eps {
            if !(*e.get_ref() >= 0.0 && e.get_ref().is_finite()) {
                return Err(loc.err(e.span(), "perturbation_eps must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn formulation(&self) -> Formulation {
        *self.mode.get_ref()
    }

    pub fn steps(&self) -> usize {
        *self.dynamics.steps.get_ref()
    }

    pub fn penalty_weight(&self) -> f64 {
        self.penalty_weight.as_ref().map(|w| *w.get_ref()).unwrap_or(0.0)
    }

    pub fn perturbation_eps(&self) -> f64 {
        self.perturbation_eps.as_ref().map(|w| *w.get_ref()).unwrap_or(0.0)
    }

    pub fn gamma(&self) -> f64 {
        match (&self.control.gamma, &self.control.phi_max_degrees) {
            (Some(g), _) => *g.get_ref(),
            (None, Some(phi)) => phi.get_ref().to_radians().cos(),
            (None, None) => unreachable!("validated at load time"),
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        let o = &self.solver;
        if let Some(v) = o.max_iter {
            s.max_iter = v;
        }
        if let Some(v) = o.eps_feas {
            s.eps_feas = v;
        }
        if let Some(v) = o.eps_gap_abs {
            s.eps_gap_abs = v;
        }
        if let Some(v) = o.eps_gap_rel {
            s.eps_gap_rel = v;
        }
        if let Some(v) = o.eps_infeas {
            s.eps_infeas = v;
        }
        if let Some(v) = o.static_regularization {
            s.static_regularization = v;
        }
        s
    }

    /// Copy of the scenario with one parameter replaced.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let mut sc = self.clone();
        let bad = |msg: String| LcvxError::InvalidInput(msg);
        match param {
            SweepParam::Steps => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(bad(format!("N must be a positive integer, got {value}")));
                }
                *sc.dynamics.steps.get_mut() = value as usize;
            }
            SweepParam::PenaltyWeight => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(bad(format!("penalty_weight must be nonnegative, got {value}")));
                }
                match &mut sc.penalty_weight {
                    Some(w) => *w.get_mut() = value,
                    None => sc.penalty_weight = Some(Spanned::new(0..0, value)),
                }
            }
            SweepParam::RhoMin => {
                if !(value > 0.0 && value <= *sc.control.rho_max.get_ref()) {
                    return Err(bad(format!("rho_min must lie in (0, rho_max], got {value}")));
                }
                *sc.control.rho_min.get_mut() = value;
            }
            SweepParam::Tf => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(bad(format!("tf must be positive, got {value}")));
                }
                *sc.dynamics.tf.get_mut() = value;
            }
        }
        Ok(sc)
    }

    /// Builds the discretized problem; `seed` fixes the complement basis.
    pub fn to_problem(&self, seed: u64) -> Result<PointingProblem> {
        let d = &self.dynamics;
        let n = self.steps();
        let cm = ContinuousModel::drag_point_mass(*d.kd.get_ref(), d.gravity.get_ref(), *d.tf.get_ref(), n)?;
        let dm = discretize(&cm)?.with_perturbed_a(self.perturbation_eps());
        let geom = sector_geometry(self.control.xi.get_ref(), self.gamma(), seed)?;
        let b = &self.boundary;
        let x_init: Vec<f64> = b.r0.get_ref().iter().chain(b.v0.get_ref()).copied().collect();
        let target: Vec<f64> = b.rf.get_ref().iter().chain(b.vf.get_ref()).copied().collect();
        let p = PointingProblem {
            formulation: self.formulation(),
            dm,
            geom,
            rho_min: *self.control.rho_min.get_ref(),
            rho_max: *self.control.rho_max.get_ref(),
            x_init,
            terminal: TerminalSpec::fixed(&target),
            stage_cost: StageCostSpec::uniform(n, 1.0),
            penalty_weight: self.penalty_weight(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"name = "t"
mode = "P4"
dimension = 2
perturbation_eps = 1e-5

[dynamics]
kd = 0.05
gravity = [0.0, -1.0]
tf = 4.7
N = 49

[boundary]
r0 = [0.5, 1.0]
v0 = [-1.6, 0.6]
rf = [0.0, 0.0]
vf = [0.0, 0.0]

[control]
rho_min = 1.2
rho_max = 1.6
phi_max_degrees = 55.0
xi = [0.0, 1.0]
"#;

    fn line_error(text: &str) -> (usize, String) {
        match Scenario::from_toml(text).unwrap_err() {
            LcvxError::Scenario { line, message } => (line, message),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parses_landing() {
        let sc = Scenario::from_toml(BASE).unwrap();
        assert_eq!(sc.steps(), 49);
        assert_eq!(sc.formulation(), Formulation::DualMode);
        assert!((sc.gamma() - 55f64.to_radians().cos()).abs() < 1e-16);
        let p = sc.to_problem(0).unwrap();
        assert_eq!(p.x_init, vec![0.5, 1.0, -1.6, 0.6]);
        assert_eq!(p.dm.steps, 49);
        assert_eq!(p.penalty_weight, 0.0);
        assert_eq!(sc.checks.subset_trials, 200);
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let (line, msg) = line_error(&BASE.replace("xi = [0.0, 1.0]", "xi = [0.0, 1.0, 0.0]"));
        assert_eq!(line, 22);
        assert!(msg.contains("dimension"), "{msg}");

        let (line, _) = line_error(&BASE.replace("tf = 4.7", "tf = \"long\""));
        assert_eq!(line, 9);

        let (line, msg) = line_error(&BASE.replace("kd = 0.05", "kd = 0.05\ndrag = 1.0"));
        assert_eq!(line, 8);
        assert!(msg.contains("drag"), "{msg}");

        let (line, msg) = line_error(&BASE.replace("phi_max_degrees = 55.0", "phi_max_degrees = 55.0\ngamma = 0.5"));
        assert_eq!(line, 22);
        assert!(msg.contains("exactly one"));

        let (line, _) = line_error(&BASE.replace("xi = [0.0, 1.0]", "xi = [0.0, 2.0]"));
        assert_eq!(line, 22);

        let (line, _) = line_error(&BASE.replace("rho_max = 1.6", "rho_max = 1.0"));
        assert_eq!(line, 20);

        let (line, _) = line_error("name = \"x\"\nmode = \"P5\"\n");
        assert_eq!(line, 2);
    }

    #[test]
    fn sweep_parameters() {
        let sc = Scenario::from_toml(BASE).unwrap();
        assert_eq!(sc.with_param(SweepParam::Steps, 99.0).unwrap().steps(), 99);
        assert!(sc.with_param(SweepParam::Steps, 9.5).is_err());
        assert_eq!(sc.with_param(SweepParam::PenaltyWeight, 10.0).unwrap().penalty_weight(), 10.0);
        assert!(sc.with_param(SweepParam::RhoMin, 2.0).is_err());
        let t = sc.with_param(SweepParam::Tf, 5.0).unwrap();
        assert_eq!(*t.dynamics.tf.get_ref(), 5.0);
        assert_eq!("penalty_weight".parse::<SweepParam>().unwrap(), SweepParam::PenaltyWeight);
        assert!("kd".parse::<SweepParam>().is_err());
    }
}
