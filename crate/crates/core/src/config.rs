//! JSON run configuration: model, signals, constraints, numerics and study
//! settings, with dotted-path overrides.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::density::{Density, DensityFamily, Mixture, TruncatedGaussian, Uniform};
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, LinearConstraint, Model, ModelParams, Numerics};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub signals: SignalSection,
    pub constraints: ConstraintSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Generator matrix `Q` of the hidden chain, `d x d`, rows summing to zero.
    pub generator: Vec<Vec<f64>>,
    /// Drift matrix `M`, `n x d`; column `k` is the drift in state `k`.
    pub drift: Vec<Vec<f64>>,
    /// Volatility `sigma`, `n x n`, nonsingular.
    pub sigma: Vec<Vec<f64>>,
    /// Arrival intensity of expert opinions.
    pub lambda: f64,
    /// Power utility parameter, `theta < 1`, `theta != 0`.
    pub theta: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub x0: f64,
    /// Initial law of the hidden state.
    pub prior: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// One density per hidden state.
    pub densities: Vec<DensitySpec>,
    /// Probe points per dimension for the density bounds.
    #[serde(default)]
    pub probe_resolution: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    TruncatedGaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// `(1 - eps_mix) base / mass(base) + eps_mix / |Z|`.
    Mixture { eps_mix: f64, base: Box<DensitySpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowSpec {
    pub psi: Vec<f64>,
    pub nu: f64,
}

/// Either `short_limit` and `leverage` (each `h_i >= short_limit`,
/// `sum h <= leverage`), or explicit `rows` `psi . h <= nu` with a Slater point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<RowSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_point: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    /// Simulation step.
    pub dt: f64,
    pub paths: usize,
    pub taper_eps: Option<f64>,
    pub quadrature_nodes: Option<usize>,
    pub jump_nodes: Option<usize>,
    /// Cells per unit length of the HJB grid.
    pub grid_cells: usize,
    pub time_steps: Option<usize>,
    pub cfl: f64,
    /// Leading paths written out by `simulate`.
    pub export_paths: usize,
    /// Random probe points for the density bound check.
    pub probe_samples: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            paths: 10_000,
            taper_eps: None,
            quadrature_nodes: None,
            jump_nodes: None,
            grid_cells: 64,
            time_steps: None,
            cfl: 0.9,
            export_paths: 10,
            probe_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Start time of evaluations.
    pub t: f64,
    /// Start state (restricted coordinates); defaults to the prior.
    pub pi: Option<Vec<f64>>,
    /// Regularization levels for the pathwise convergence study.
    pub m_list: Vec<f64>,
    /// Regularization levels for the value and reward studies.
    pub value_m_list: Vec<f64>,
    /// Constant strategies probed by the convergence studies; defaults to
    /// three points spread over `K`.
    pub strategies: Option<Vec<Vec<f64>>>,
    /// Horizons for the moment estimates; defaults to `T 2^-k`, `k = 3..8`.
    pub delta_list: Option<Vec<f64>>,
    /// Second start state for the paired-start estimate.
    pub paired_pi: Option<Vec<f64>>,
    pub dpp_t: f64,
    pub dpp_delta: f64,
    /// Policy used by `evaluate`: `grid`, `myopic`, or a constant via `strategy`.
    pub policy: String,
    pub strategy: Option<Vec<f64>>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            t: 0.0,
            pi: None,
            m_list: vec![10.0, 100.0, 1000.0, 10000.0],
            value_m_list: vec![10.0, 100.0, 1000.0],
            strategies: None,
            delta_list: None,
            paired_pi: None,
            dpp_t: 0.5,
            dpp_delta: 0.1,
            policy: "grid".into(),
            strategy: None,
        }
    }
}

/// Sets `root.a.b.c = value`, creating objects along the way; numeric
/// segments index into arrays.
pub fn apply_override(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("`{path}`: `{part}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("`{path}`: index {idx} out of range ({len})")))?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert(if last {
                Value::Null
            } else {
                Value::Object(Default::default())
            }),
            _ => return Err(Error::Config(format!("`{path}`: `{part}` is not inside an object or array"))),
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    unreachable!("path has at least one segment")
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn matrix<T: Real>(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 {
        return Err(Error::Config(format!("{field}: matrix is empty")));
    }
    if let Some(i) = rows.iter().position(|x| x.len() != c) {
        return Err(Error::Config(format!(
            "{field}: row {} has {} entries, expected {c}",
            i + 1,
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| T::lit(rows[i][j])))
}

fn lits<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

fn density<T: Real>(spec: &DensitySpec, lower: &[T], upper: &[T], field: &str) -> Result<Arc<dyn Density<T>>> {
    let wrap = |e: Error| Error::Config(format!("{field}: {e}"));
    Ok(match spec {
        DensitySpec::Uniform => Arc::new(Uniform::new(lower, upper)),
        DensitySpec::TruncatedGaussian { mean, sd } => {
            Arc::new(TruncatedGaussian::new(lits(mean), lits(sd), lower, upper).map_err(wrap)?)
        }
        DensitySpec::Mixture { eps_mix, base } => {
            let b = density(base, lower, upper, field)?;
            Arc::new(Mixture::new(b, lower, upper, T::lit(*eps_mix)).map_err(wrap)?)
        }
    })
}

impl Config {
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut v: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            let (k, val) = parse_override(o)?;
            apply_override(&mut v, &k, val)?;
        }
        Self::from_value(v)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn constraint_set<T: Real>(&self) -> Result<ConstraintSet<T>> {
        let c = &self.constraints;
        let n = self.model.sigma.len();
        match (c.short_limit, c.leverage, &c.rows) {
            (Some(s), Some(l), None) => ConstraintSet::short_leverage(n, T::lit(s), T::lit(l)),
            (None, None, Some(rows)) => {
                let slater = c
                    .slater_point
                    .as_ref()
                    .ok_or_else(|| Error::Config("constraints.slater_point is required with rows".into()))?;
                let rows = rows
                    .iter()
                    .map(|r| LinearConstraint {
                        psi: lits(&r.psi),
                        nu: T::lit(r.nu),
                    })
                    .collect();
                ConstraintSet::new(rows, lits(slater))
            }
            _ => Err(Error::Config(
                "constraints: give either short_limit and leverage, or rows and slater_point".into(),
            )),
        }
    }

    pub fn density_family<T: Real>(&self) -> Result<DensityFamily<T>> {
        let s = &self.signals;
        let (lower, upper) = (lits::<T>(&s.lower), lits::<T>(&s.upper));
        let comps = s
            .densities
            .iter()
            .enumerate()
            .map(|(k, d)| density(d, &lower, &upper, &format!("signals.densities[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let res = s
            .probe_resolution
            .unwrap_or_else(|| DensityFamily::<T>::default_resolution(lower.len()));
        DensityFamily::with_resolution(lower, upper, comps, res)
    }

    pub fn model_params<T: Real>(&self) -> Result<ModelParams<T>> {
        let m = &self.model;
        Ok(ModelParams {
            generator: matrix("model.generator", &m.generator)?,
            drift: matrix("model.drift", &m.drift)?,
            sigma: matrix("model.sigma", &m.sigma)?,
            lambda: T::lit(m.lambda),
            theta: T::lit(m.theta),
            horizon: T::lit(m.horizon),
            x0: T::lit(m.x0),
            prior: lits(&m.prior),
            densities: self.density_family()?,
        })
    }

    pub fn numerics<T: Real>(&self) -> Numerics<T> {
        let n = &self.numerics;
        Numerics {
            taper_eps: n.taper_eps.map(T::lit),
            quadrature_nodes: n.quadrature_nodes,
            jump_nodes: n.jump_nodes,
        }
    }

    /// Builds and validates the model.
    pub fn build<T: Real>(&self) -> Result<Model<T>> {
        Model::new(self.model_params()?, self.constraint_set()?, &self.numerics())
    }

    /// Evaluation start state in restricted coordinates.
    pub fn start_state(&self) -> Vec<f64> {
        match &self.study.pi {
            Some(pi) => pi.clone(),
            None => {
                let p = &self.model.prior;
                p[..p.len().saturating_sub(1)].to_vec()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn overrides_walk_dotted_paths() {
        let mut v = json!({"model": {"sigma": [[0.5]]}, "numerics": {}});
        apply_override(&mut v, "numerics.dt", json!(0.01)).unwrap();
        apply_override(&mut v, "model.sigma.0.0", json!(0.3)).unwrap();
        apply_override(&mut v, "study.policy", json!("myopic")).unwrap();
        assert_eq!(v["numerics"]["dt"], json!(0.01));
        assert_eq!(v["model"]["sigma"][0][0], json!(0.3));
        assert_eq!(v["study"]["policy"], json!("myopic"));
        assert!(apply_override(&mut v, "model.sigma.3", json!(1)).is_err());
    }

    #[test]
    fn override_values_parse_as_json_first() {
        assert_eq!(parse_override("a.b=2").unwrap(), ("a.b".into(), json!(2)));
        assert_eq!(parse_override("a=[1,2]").unwrap().1, json!([1, 2]));
        assert_eq!(parse_override("p=grid").unwrap().1, json!("grid"));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn ragged_matrix_names_the_field() {
        let e = matrix::<f64>("model.drift", &[vec![1.0, 2.0], vec![1.0]]).unwrap_err();
        assert!(e.to_string().contains("model.drift"));
    }
}
