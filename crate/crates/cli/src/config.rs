//! Run configuration: an optional JSON or TOML file overlaid by flags.

use std::path::{Path, PathBuf};

use ddlpv::linalg::{Mat, ParamBox};
use ddlpv::lmi::SolverSettings;
use ddlpv::synthesis::{GammaMode, Mode, SynthesisRequest};
use ddlpv::system::PerfWeights;
use ddlpv::{Error, Result};
use serde::{Deserialize, Serialize};

/// Diagonal or full weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl WeightSpec {
    /// `"1,2,3"` is a diagonal; rows separated by `;` give a full matrix.
    pub fn parse(s: &str) -> Result<Self> {
        let row = |r: &str| -> Result<Vec<f64>> {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad number {v:?} in weight {s:?}"))))
                .collect()
        };
        if s.contains(';') {
            Ok(WeightSpec::Full(s.split(';').map(row).collect::<Result<_>>()?))
        } else {
            Ok(WeightSpec::Diag(row(s)?))
        }
    }

    pub fn matrix(&self) -> Result<Mat> {
        match self {
            WeightSpec::Diag(d) => Ok(Mat::from_diagonal(&nalgebra_vec(d))),
            WeightSpec::Full(rows) => ddlpv::linalg::mat_from_rows(rows),
        }
    }
}

fn nalgebra_vec(d: &[f64]) -> ddlpv::linalg::Vector {
    ddlpv::linalg::Vector::from_column_slice(d)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_feas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Every knob a command may read. Absent fields take command defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<WeightSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<WeightSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimize_gamma: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Plant used for verification and simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant: Option<PathBuf>,
    /// Controller document, or a synthesis report holding one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pset: Option<BoxConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_GRID_POINTS: usize = 16;

impl RunConfig {
    /// Reads a config file; `.toml` files are TOML, anything else JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {}", path.display(), e.message())))
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                column: e.column(),
                msg: format!("{}: {e}", path.display()),
            })
        }
    }

    /// Fields set in `top` replace those here.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$( if top.$f.is_some() { self.$f = top.$f; } )*};
        }
        take!(
            data, mode, q, r, gamma, minimize_gamma, robust, lambda, trace_min, trace_max, seed, out, plant, controller,
            horizon, x0, grid_points, pset
        );
        if let Some(s) = top.solver {
            let base = self.solver.get_or_insert_with(SolverConfig::default);
            macro_rules! take_s {
                ($($f:ident),*) => {$( if s.$f.is_some() { base.$f = s.$f; } )*};
            }
            take_s!(margin, delta, tol_gap, tol_feas, max_iter);
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.as_deref().ok_or_else(|| Error::Invalid("--mode is required".into()))?.parse()
    }

    pub fn settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        if let Some(c) = &self.solver {
            s.margin = c.margin.unwrap_or(s.margin);
            s.delta = c.delta.unwrap_or(s.delta);
            s.tol_gap = c.tol_gap.unwrap_or(s.tol_gap);
            s.tol_feas = c.tol_feas.unwrap_or(s.tol_feas);
            s.max_iter = c.max_iter.unwrap_or(s.max_iter);
        }
        s
    }

    /// Configured box, or `[-1, 1]^n_p`.
    pub fn pset(&self, n_p: usize) -> Result<ParamBox> {
        match &self.pset {
            Some(b) => {
                let b = ParamBox::new(b.lower.clone(), b.upper.clone())?;
                if b.dim() != n_p {
                    return Err(Error::InvalidBox(format!("box has {} components, data has {n_p}", b.dim())));
                }
                Ok(b)
            }
            None => Ok(ParamBox::symmetric(n_p, 1.0)),
        }
    }

    /// Weights, defaulting to identities of the given sizes when the mode
    /// needs them and none were given.
    pub fn weights(&self, n_x: usize, n_u: usize) -> Result<PerfWeights> {
        let q = match &self.q {
            Some(w) => w.matrix()?,
            None => Mat::identity(n_x, n_x),
        };
        let r = match &self.r {
            Some(w) => w.matrix()?,
            None => Mat::identity(n_u, n_u),
        };
        if q.shape() != (n_x, n_x) || r.shape() != (n_u, n_u) {
            return Err(Error::DimMismatch(format!("Q must be {n_x}×{n_x} and R {n_u}×{n_u}")));
        }
        PerfWeights::new(q, r)
    }

    pub fn request(&self, mode: Mode, n_x: usize, n_u: usize) -> Result<SynthesisRequest> {
        let mut req = SynthesisRequest::new(mode);
        if mode.needs_weights() {
            req.weights = Some(self.weights(n_x, n_u)?);
        }
        req.gamma_mode = match (self.gamma, self.minimize_gamma.unwrap_or(false)) {
            (Some(_), true) => return Err(Error::Invalid("--gamma and --minimize-gamma are exclusive".into())),
            (Some(g), false) => GammaMode::Fixed(g),
            (None, _) => GammaMode::Minimize,
        };
        req.robust = self.robust.unwrap_or(false);
        req.reg_lambda = self.lambda.unwrap_or(0.0);
        req.trace_box = match (self.trace_min, self.trace_max) {
            (None, None) => None,
            (lo, Some(hi)) => Some((lo.unwrap_or(0.0), hi)),
            (Some(_), None) => return Err(Error::Invalid("--trace-min needs --trace-max".into())),
        };
        req.settings = self.settings();
        req.validate()?;
        Ok(req)
    }

    pub fn require<'a>(&self, v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        v.as_deref().ok_or_else(|| Error::Invalid(format!("{flag} is required")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_syntax() {
        assert_eq!(WeightSpec::parse("1, 2").unwrap(), WeightSpec::Diag(vec![1.0, 2.0]));
        assert_eq!(WeightSpec::parse("1,0;0,2").unwrap(), WeightSpec::Full(vec![vec![1.0, 0.0], vec![0.0, 2.0]]));
        assert!(WeightSpec::parse("1,x").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"mode":"h2","gama":3}"#).is_err());
        assert!(toml::from_str::<RunConfig>("mode = \"h2\"\n[solver]\nmargn = 1.0\n").is_err());
        let c: RunConfig = toml::from_str("mode = \"l2\"\nq = [8.0, 0.1]\n[solver]\nmargin = 1e-6\n").unwrap();
        assert_eq!(c.settings().margin, 1e-6);
    }

    #[test]
    fn flags_win() {
        let file = RunConfig { mode: Some("h2".into()), seed: Some(4), ..Default::default() };
        let flags = RunConfig { mode: Some("l2".into()), ..Default::default() };
        let c = file.overlay(flags);
        assert_eq!(c.mode.as_deref(), Some("l2"));
        assert_eq!(c.seed(), 4);
    }

    #[test]
    fn gamma_flags_exclusive() {
        let c = RunConfig { gamma: Some(2.0), minimize_gamma: Some(true), ..Default::default() };
        assert!(c.request(Mode::L2, 1, 1).is_err());
    }
}
