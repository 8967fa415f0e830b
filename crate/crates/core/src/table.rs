//! Coefficient tables: how a control variate is stored and evaluated.
//!
//! The control variate attached to a simulated path is
//!
//! ```text
//! M = sum_{j=1..J} sum_t  a_{j,t}(X_{j-1})  factor_t(increment_j)
//! ```
//!
//! and a table is whatever produces the coefficient functions `a_{j,t}`:
//!
//! * **oracle** — exact coefficients from the enumeration oracle, computed
//!   on demand and memoised (never serialisable: the table is a procedure,
//!   not data);
//! * **regression** — per-step linear combinations of basis functions of
//!   the standardised state, with optional per-weight-class clamping of the
//!   evaluated coefficient (the "truncated" estimator clamps to
//!   `a_tilde * delta^min(w, 3/2)`, which caps how much damage a badly
//!   fitted coefficient can do without touching unbiasedness);
//! * **zero** — every coefficient zero, so estimating with this table is
//!   plain Monte Carlo (useful as a differential test).
//!
//! Regression and zero tables round-trip through a versioned JSON format.

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::Functional;
use crate::models;
use crate::oracle::ExactOracle;
use crate::scheme::{GridSpec, Increment, Scheme, SimulatedPath};
use crate::terms::{validate_terms, TermIndex};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Per-step affine standardisation `z = (x - mean) / scale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Standardisation {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardisation {
    pub fn identity(dim: usize) -> Self {
        Standardisation {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }
}

/// Clamp threshold scale for one weight class; the evaluated coefficient is
/// clamped to `|a| <= a_tilde * delta^min(class/2, 3/2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassClamp {
    pub weight_class: u32,
    pub a_tilde: f64,
}

/// Provenance and conditioning facts recorded while training.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub n_train: usize,
    pub seed: u64,
    pub user_ridge: f64,
    /// Gram condition estimate per step (`None` where not meaningful, e.g.
    /// a constant design).
    pub condition: Vec<Option<f64>>,
    /// Steps where the automatic ridge fallback had to kick in.
    pub ridge_fallback_steps: Vec<usize>,
    /// Steps fitted as a constant (all training states identical, as always
    /// happens at step 1 with a deterministic initial state).
    pub constant_design_steps: Vec<usize>,
}

/// Serialisable payload of a regression-trained table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressionData {
    pub basis: BasisSpec,
    /// One entry per step `j = 1..J`.
    pub standardisation: Vec<Standardisation>,
    /// `weights[j-1][t * Q + i]`: weight of basis element `i` for term `t`.
    pub weights: Vec<Vec<f64>>,
    /// Present when the table is truncated/clamped.
    pub clamps: Option<Vec<ClassClamp>>,
    pub metadata: TrainMetadata,
}

impl RegressionData {
    fn validate(&self, j_steps: usize, dim: usize, n_terms: usize) -> Result<()> {
        self.basis.validate().map_err(|e| Error::TableMismatch(e.to_string()))?;
        if self.basis.dim != dim {
            return Err(Error::TableMismatch(format!(
                "basis dimension {} does not match state dimension {dim}",
                self.basis.dim
            )));
        }
        if self.standardisation.len() != j_steps || self.weights.len() != j_steps {
            return Err(Error::TableMismatch(format!(
                "table holds {} steps of weights / {} of standardisation, grid has {j_steps}",
                self.weights.len(),
                self.standardisation.len()
            )));
        }
        let q = self.basis.size();
        for (j, (s, w)) in self.standardisation.iter().zip(&self.weights).enumerate() {
            if s.mean.len() != dim || s.scale.len() != dim {
                return Err(Error::TableMismatch(format!(
                    "standardisation at step {} has wrong dimension",
                    j + 1
                )));
            }
            if s.scale.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::TableMismatch(format!(
                    "standardisation scale at step {} must be positive and finite",
                    j + 1
                )));
            }
            if w.len() != n_terms * q {
                return Err(Error::TableMismatch(format!(
                    "weights at step {} hold {} values, expected {} terms x {} basis elements",
                    j + 1,
                    w.len(),
                    n_terms,
                    q
                )));
            }
        }
        if let Some(clamps) = &self.clamps {
            if clamps.iter().any(|c| !(c.a_tilde >= 0.0) || !c.a_tilde.is_finite()) {
                return Err(Error::TableMismatch(
                    "clamp scales must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

enum TableKind {
    Oracle(Arc<ExactOracle>),
    Regression(RegressionData),
    Zero,
}

/// A fully specified control variate for one (model, scheme, grid).
pub struct CoefficientTable {
    model_name: String,
    functional: Functional,
    scheme: Scheme,
    grid: GridSpec,
    terms: Vec<TermIndex>,
    kind: TableKind,
    /// Per-term clamp thresholds (infinite when unclamped), precomputed
    /// from the clamps and the fixed step size.
    clamp_by_term: Vec<f64>,
}

fn clamp_thresholds(
    terms: &[TermIndex],
    clamps: Option<&[ClassClamp]>,
    delta: f64,
) -> Vec<f64> {
    match clamps {
        None => vec![f64::INFINITY; terms.len()],
        Some(clamps) => terms
            .iter()
            .map(|t| {
                let wc = t.weight_class();
                clamps
                    .iter()
                    .find(|c| c.weight_class == wc)
                    .map_or(f64::INFINITY, |c| {
                        c.a_tilde * delta.powf((wc as f64 / 2.0).min(1.5))
                    })
            })
            .collect(),
    }
}

impl CoefficientTable {
    /// The all-zero table: the attached control variate vanishes.
    pub fn zero(
        model_name: &str,
        functional: &Functional,
        scheme: Scheme,
        grid: GridSpec,
        terms: Vec<TermIndex>,
    ) -> CoefficientTable {
        let clamp_by_term = vec![f64::INFINITY; terms.len()];
        CoefficientTable {
            model_name: model_name.to_string(),
            functional: functional.clone(),
            scheme,
            grid,
            terms,
            kind: TableKind::Zero,
            clamp_by_term,
        }
    }

    /// Wrap an exact oracle; coefficients are computed on demand.
    pub fn from_oracle(model_name: &str, functional: &Functional, oracle: Arc<ExactOracle>) -> CoefficientTable {
        let terms = oracle.terms().to_vec();
        let clamp_by_term = vec![f64::INFINITY; terms.len()];
        CoefficientTable {
            model_name: model_name.to_string(),
            functional: functional.clone(),
            scheme: oracle.scheme(),
            grid: oracle.grid(),
            terms,
            kind: TableKind::Oracle(oracle),
            clamp_by_term,
        }
    }

    /// Wrap regression output after validating its shape.
    pub fn from_regression(
        model_name: &str,
        functional: &Functional,
        scheme: Scheme,
        grid: GridSpec,
        terms: Vec<TermIndex>,
        data: RegressionData,
    ) -> Result<CoefficientTable> {
        data.validate(grid.steps(), data.basis.dim, terms.len())?;
        if data.basis.uses_gradient() && !functional.has_gradient() {
            return Err(Error::TableMismatch(format!(
                "table basis uses payoff partials but functional '{}' has no gradient",
                functional.name()
            )));
        }
        let clamp_by_term = clamp_thresholds(&terms, data.clamps.as_deref(), grid.delta());
        Ok(CoefficientTable {
            model_name: model_name.to_string(),
            functional: functional.clone(),
            scheme,
            grid,
            terms,
            kind: TableKind::Regression(data),
            clamp_by_term,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn terms(&self) -> &[TermIndex] {
        &self.terms
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    /// The payoff this table's coefficients were built for.
    pub fn functional(&self) -> &Functional {
        &self.functional
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TableKind::Oracle(_) => "oracle",
            TableKind::Regression(_) => "regression",
            TableKind::Zero => "zero",
        }
    }

    /// Basis size for regression tables, 0 otherwise.
    pub fn basis_size(&self) -> usize {
        match &self.kind {
            TableKind::Regression(d) => d.basis.size(),
            _ => 0,
        }
    }

    /// Training metadata for regression tables.
    pub fn metadata(&self) -> Option<&TrainMetadata> {
        match &self.kind {
            TableKind::Regression(d) => Some(&d.metadata),
            _ => None,
        }
    }

    pub fn is_clamped(&self) -> bool {
        matches!(&self.kind, TableKind::Regression(d) if d.clamps.is_some())
    }

    /// Evaluate all coefficients of step `j` (1-based) at the state `x`
    /// reached after `j - 1` steps.
    pub fn coefficients_at(&self, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.terms.len()];
        let mut scratch = Vec::new();
        self.coefficients_into(j, x, &mut out, &mut scratch)?;
        Ok(out)
    }

    fn coefficients_into(
        &self,
        j: usize,
        x: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        if j == 0 || j > self.grid.steps() {
            return Err(Error::InvalidConfig(format!(
                "coefficient step {j} out of range 1..={}",
                self.grid.steps()
            )));
        }
        match &self.kind {
            TableKind::Zero => out.fill(0.0),
            TableKind::Oracle(oracle) => {
                let coeffs = oracle.coefficients(j, x)?;
                out.copy_from_slice(&coeffs);
            }
            TableKind::Regression(data) => {
                let d = data.basis.dim;
                let q = data.basis.size();
                let g = if data.basis.uses_gradient() { d } else { 0 };
                scratch.clear();
                scratch.resize(d + g + q, 0.0);
                let (z, rest) = scratch.split_at_mut(d);
                let (grad, phi) = rest.split_at_mut(g);
                let st = &data.standardisation[j - 1];
                for i in 0..d {
                    z[i] = (x[i] - st.mean[i]) / st.scale[i];
                }
                let fx = if data.basis.uses_functional() {
                    self.functional.eval(x)
                } else {
                    0.0
                };
                if data.basis.uses_gradient() {
                    let gf = self
                        .functional
                        .gradient_fn()
                        .expect("gradient availability checked when the table was built");
                    gf(x, grad);
                }
                data.basis.eval_into(z, fx, grad, phi);
                let w = &data.weights[j - 1];
                for (t, o) in out.iter_mut().enumerate() {
                    let row = &w[t * q..(t + 1) * q];
                    let mut acc = 0.0;
                    for (wi, pi) in row.iter().zip(phi.iter()) {
                        acc += wi * pi;
                    }
                    let cap = self.clamp_by_term[t];
                    *o = acc.clamp(-cap, cap);
                }
            }
        }
        Ok(())
    }

    fn check_path_shape(&self, dim_state: usize, increments: &[Increment]) -> Result<()> {
        if increments.len() != self.grid.steps() {
            return Err(Error::TableMismatch(format!(
                "path has {} steps, table was built for {}",
                increments.len(),
                self.grid.steps()
            )));
        }
        if let Some(inc) = increments.first() {
            if inc.scheme() != self.scheme {
                return Err(Error::TableMismatch(format!(
                    "path increments are for scheme '{}', table for '{}'",
                    inc.scheme().tag(),
                    self.scheme.tag()
                )));
            }
        }
        match &self.kind {
            TableKind::Regression(data) if data.basis.dim != dim_state => {
                Err(Error::TableMismatch(format!(
                    "path state dimension {} does not match table basis dimension {}",
                    dim_state, data.basis.dim
                )))
            }
            _ => Ok(()),
        }
    }

    /// The control variate value of one path:
    /// `sum_j sum_t a_{j,t}(X_{j-1}) factor_t(increment_j)`.
    pub fn control_variate(&self, path: &SimulatedPath) -> Result<f64> {
        self.control_variate_parts(path.dim_state, &path.states, &path.increments)
    }

    /// Same as [`CoefficientTable::control_variate`] on raw buffers, so hot
    /// loops can reuse allocations.
    pub fn control_variate_parts(
        &self,
        dim_state: usize,
        states: &[f64],
        increments: &[Increment],
    ) -> Result<f64> {
        self.check_path_shape(dim_state, increments)?;
        if matches!(self.kind, TableKind::Zero) {
            return Ok(0.0);
        }
        let mut coeffs = vec![0.0; self.terms.len()];
        let mut scratch = Vec::new();
        let mut total = 0.0;
        for (j, inc) in increments.iter().enumerate() {
            let x = &states[j * dim_state..(j + 1) * dim_state];
            self.coefficients_into(j + 1, x, &mut coeffs, &mut scratch)?;
            for (a, t) in coeffs.iter().zip(&self.terms) {
                if *a != 0.0 {
                    total += a * t.factor(inc);
                }
            }
        }
        Ok(total)
    }

    /// Serialise to versioned JSON. Oracle tables are procedural and cannot
    /// be written out; train a regression table against the oracle instead.
    pub fn to_json(&self) -> Result<String> {
        let (kind, regression) = match &self.kind {
            TableKind::Zero => ("zero", None),
            TableKind::Regression(d) => ("regression", Some(d.clone())),
            TableKind::Oracle(_) => {
                return Err(Error::TableMismatch(
                    "oracle tables are evaluated on demand and cannot be serialised".into(),
                ))
            }
        };
        let file = TableFile {
            version: TABLE_FORMAT_VERSION,
            model: self.model_name.clone(),
            scheme: self.scheme,
            horizon: self.grid.delta() * self.grid.steps() as f64,
            steps: self.grid.steps(),
            terms: self.terms.clone(),
            kind: kind.to_string(),
            regression,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Serialisation(e.to_string()))
    }

    /// Load a table from JSON, resolving the model through the built-in
    /// registry.
    pub fn from_json(text: &str) -> Result<CoefficientTable> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| Error::Serialisation(e.to_string()))?;
        if file.version != TABLE_FORMAT_VERSION {
            return Err(Error::Serialisation(format!(
                "unsupported table format version {} (this build reads {})",
                file.version, TABLE_FORMAT_VERSION
            )));
        }
        let (model, functional) = models::by_name(&file.model)?;
        if (model.horizon() - file.horizon).abs() > 1e-12 * model.horizon().abs() {
            return Err(Error::TableMismatch(format!(
                "table was built for horizon {}, model '{}' has {}",
                file.horizon,
                file.model,
                model.horizon()
            )));
        }
        // Rebuild the grid from the registry model's horizon: the file's
        // horizon is a consistency check, not the source of truth, so the
        // loaded grid is bit-identical to the one the table was built on.
        let grid = GridSpec::new(model.horizon(), file.steps)?;
        validate_terms(&file.terms, file.scheme, model.dim_noise())?;
        match (file.kind.as_str(), file.regression) {
            ("zero", _) => Ok(CoefficientTable::zero(
                &file.model,
                &functional,
                file.scheme,
                grid,
                file.terms,
            )),
            ("regression", Some(data)) => CoefficientTable::from_regression(
                &file.model,
                &functional,
                file.scheme,
                grid,
                file.terms,
                data,
            ),
            ("regression", None) => Err(Error::Serialisation(
                "regression table without a regression payload".into(),
            )),
            (other, _) => Err(Error::Serialisation(format!(
                "unknown table kind '{other}'"
            ))),
        }
    }
}

impl std::fmt::Debug for CoefficientTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientTable")
            .field("model", &self.model_name)
            .field("scheme", &self.scheme)
            .field("steps", &self.grid.steps())
            .field("terms", &self.terms.len())
            .field("kind", &self.kind_name())
            .finish()
    }
}

const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TableFile {
    version: u32,
    model: String,
    scheme: Scheme,
    horizon: f64,
    steps: usize,
    terms: Vec<TermIndex>,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regression: Option<RegressionData>,
}
