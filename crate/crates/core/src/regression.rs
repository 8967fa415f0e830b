//! Regression training of control-variate coefficients.
//!
//! For every step `j` the optimal coefficient of term `t` is the conditional
//! expectation `a_{j,t}(x) = E[ f(X_J) factor_t(increment_j) | X_{j-1} = x ]`,
//! so it can be fitted by least squares: simulate training paths, form the
//! responses
//!
//! ```text
//! zeta_{t,i} = f(X_J^(i)) * factor_t(increment_j^(i))
//! ```
//!
//! and regress them on basis functions of the standardised state
//! `X_{j-1}^(i)`. One Gram matrix `B = (1/N) sum phi phi^T` per step serves
//! every term; only the right-hand sides differ. The fitted martingale has
//! exactly zero mean by construction — whatever the regression error, the
//! estimator built from it stays unbiased.
//!
//! Numerical policy, in order:
//! * a step whose training states are all identical (step 1 with a
//!   deterministic start) is fitted exactly as a constant;
//! * with no user ridge, a Gram whose smallest eigenvalue falls below
//!   `1e-13 * lambda_max` is treated as structurally rank-deficient and
//!   training fails loudly with the step and condition number — that means
//!   two basis elements coincide on the training distribution and silently
//!   regularising would hide a modelling bug;
//! * a Cholesky failure on a Gram that is *not* structurally singular gets
//!   one automatic ridge retry with `lambda = 1e-10 tr(B)/Q`, recorded in
//!   the table metadata.
//!
//! The structural check also fires on configurations whose basis genuinely
//! collapses on the training states — see the [`crate::basis`] docs for the
//! two common cases (two-valued Euler states one step after a deterministic
//! start, and polynomial payoffs inside the monomial span). The fix is a
//! configuration change (degree-1 basis, dropping the payoff element, or the
//! second-order scheme's three-point states), or an explicit ridge when
//! approximate fits are acceptable.

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::{Functional, SdeModel};
use crate::parallel;
use crate::rng::{domain_seed, SeedDomain};
use crate::scheme::{simulate_paths, GridSpec, Scheme, SimulatedPath};
use crate::table::{
    ClassClamp, CoefficientTable, RegressionData, Standardisation, TrainMetadata,
};
use crate::terms::{validate_terms, TermIndex};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Whether (and how) to clamp the fitted coefficients at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// Use the raw least-squares fit.
    Off,
    /// Clamp the evaluated coefficient of a weight-`w` term to
    /// `a_tilde * delta^min(w, 3/2)`. With `a_tilde: None` the scale is
    /// calibrated from the training responses per weight class:
    /// `a_tilde = 2 max |zeta| / delta^min(w, 3/2)`, i.e. the clamp binds
    /// only well outside anything the training data supports.
    On { a_tilde: Option<f64> },
}

#[derive(Clone, Debug)]
pub struct RegressionConfig {
    /// Basis of the per-step regressions; default quadratic polynomials in
    /// the standardised state plus the payoff element.
    pub basis: Option<BasisSpec>,
    /// Ridge added to the Gram diagonal up front (0 = plain least squares).
    pub ridge: f64,
    pub truncation: Truncation,
    /// Standardise states per step before applying the basis (recommended;
    /// turning it off is useful only for debugging).
    pub standardize: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            basis: None,
            ridge: 0.0,
            truncation: Truncation::Off,
            standardize: true,
        }
    }
}

/// Relative eigenvalue threshold below which a Gram matrix is declared
/// structurally rank-deficient.
const STRUCTURAL_RANK_TOL: f64 = 1e-13;

/// Automatic ridge used for one retry after a borderline Cholesky failure.
const FALLBACK_RIDGE_FACTOR: f64 = 1e-10;

struct StepAccumulator {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    max_resp: Vec<f64>,
    all_const: bool,
}

impl StepAccumulator {
    fn new(q: usize, n_terms: usize, n_classes: usize) -> Self {
        StepAccumulator {
            gram: vec![0.0; q * q],
            rhs: vec![0.0; n_terms * q],
            max_resp: vec![0.0; n_classes],
            all_const: true,
        }
    }

    fn merge(mut self, other: StepAccumulator) -> StepAccumulator {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += b;
        }
        for (a, b) in self.max_resp.iter_mut().zip(&other.max_resp) {
            *a = a.max(*b);
        }
        self.all_const &= other.all_const;
        self
    }
}

/// Train a coefficient table by per-step least squares on `n_train` freshly
/// simulated paths. `seed` is the master seed; training draws from its
/// dedicated stream, disjoint from estimation and probing.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &SdeModel,
    functional: &Functional,
    scheme: Scheme,
    grid: GridSpec,
    terms: &[TermIndex],
    n_train: usize,
    seed: u64,
    config: &RegressionConfig,
) -> Result<CoefficientTable> {
    let d = model.dim_state();
    validate_terms(terms, scheme, model.dim_noise())?;
    if terms.is_empty() {
        return Err(Error::InvalidConfig("cannot train an empty term family".into()));
    }
    if n_train < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs at least 2 paths, got {n_train}"
        )));
    }
    if !(config.ridge >= 0.0) || !config.ridge.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "ridge must be finite and nonnegative, got {}",
            config.ridge
        )));
    }
    let basis = config
        .basis
        .clone()
        .unwrap_or_else(|| BasisSpec::quadratic_with_functional(d));
    basis.validate()?;
    if basis.dim != d {
        return Err(Error::InvalidConfig(format!(
            "basis dimension {} does not match state dimension {d}",
            basis.dim
        )));
    }
    if basis.uses_gradient() && !functional.has_gradient() {
        return Err(Error::InvalidConfig(format!(
            "basis asks for payoff partials but functional '{}' has no gradient",
            functional.name()
        )));
    }
    let q = basis.size();
    let n_terms = terms.len();

    // Weight classes present, and each term's index into them.
    let mut classes: Vec<u32> = terms.iter().map(TermIndex::weight_class).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_of_term: Vec<usize> = terms
        .iter()
        .map(|t| classes.binary_search(&t.weight_class()).unwrap())
        .collect();

    let paths = simulate_paths(model, scheme, grid, n_train, domain_seed(seed, SeedDomain::Train))?;
    let fx: Vec<f64> = paths
        .iter()
        .map(|p| functional.eval(p.terminal_state()))
        .collect();
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "training payoffs" });
    }

    let mut standardisation = Vec::with_capacity(grid.steps());
    let mut weights = Vec::with_capacity(grid.steps());
    let mut metadata = TrainMetadata {
        n_train,
        seed,
        user_ridge: config.ridge,
        ..TrainMetadata::default()
    };
    let mut max_resp_global = vec![0.0f64; classes.len()];

    for j in 1..=grid.steps() {
        let st = step_standardisation(&paths, j, d, config.standardize);

        let acc = parallel::map_reduce_chunks(
            paths.len(),
            |range| {
                let mut acc = StepAccumulator::new(q, n_terms, classes.len());
                let mut z = vec![0.0; d];
                let mut phi = vec![0.0; q];
                let mut grad = vec![0.0; if basis.uses_gradient() { d } else { 0 }];
                let grad_fn = basis.uses_gradient().then(|| {
                    functional
                        .gradient_fn()
                        .expect("gradient availability checked before training")
                });
                let x_ref = paths[0].state(j - 1);
                for i in range {
                    let p = &paths[i];
                    let x = p.state(j - 1);
                    acc.all_const &= x == x_ref;
                    for k in 0..d {
                        z[k] = (x[k] - st.mean[k]) / st.scale[k];
                    }
                    let f_here = if basis.uses_functional() {
                        functional.eval(x)
                    } else {
                        0.0
                    };
                    if let Some(g) = grad_fn {
                        g(x, &mut grad);
                    }
                    basis.eval_into(&z, f_here, &grad, &mut phi);
                    for r in 0..q {
                        let pr = phi[r];
                        for c in r..q {
                            acc.gram[r * q + c] += pr * phi[c];
                        }
                    }
                    let inc = &p.increments[j - 1];
                    for (t, term) in terms.iter().enumerate() {
                        let zeta = fx[i] * term.factor(inc);
                        let m = &mut acc.max_resp[class_of_term[t]];
                        *m = m.max(zeta.abs());
                        let row = &mut acc.rhs[t * q..(t + 1) * q];
                        for (rv, pv) in row.iter_mut().zip(phi.iter()) {
                            *rv += zeta * pv;
                        }
                    }
                }
                acc
            },
            StepAccumulator::merge,
        )
        .expect("n_train >= 2 guarantees at least one chunk");

        for (g, a) in max_resp_global.iter_mut().zip(&acc.max_resp) {
            *g = g.max(*a);
        }

        let n_f = n_train as f64;
        let mut step_weights = vec![0.0; n_terms * q];
        if acc.all_const {
            // Every training state identical: the best (and only
            // identifiable) fit is the response mean on the constant element.
            for t in 0..n_terms {
                step_weights[t * q] = acc.rhs[t * q] / n_f;
            }
            metadata.constant_design_steps.push(j);
            metadata.condition.push(None);
        } else {
            let gram = DMatrix::from_fn(q, q, |r, c| {
                let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
                acc.gram[lo * q + hi] / n_f
            });
            let eig = SymmetricEigen::new(gram.clone());
            let lmax = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
            metadata.condition.push(if cond.is_finite() { Some(cond) } else { None });
            if config.ridge == 0.0 && lmin < STRUCTURAL_RANK_TOL * lmax {
                return Err(Error::SingularGram { step: j, cond });
            }
            let mut ridged = gram.clone();
            for i in 0..q {
                ridged[(i, i)] += config.ridge;
            }
            let chol = match Cholesky::new(ridged) {
                Some(c) => c,
                None => {
                    // Borderline: not structurally singular, but rounding
                    // defeated the factorisation. One calibrated retry.
                    let fallback = FALLBACK_RIDGE_FACTOR * gram.trace() / q as f64;
                    let mut retry = gram.clone();
                    for i in 0..q {
                        retry[(i, i)] += config.ridge + fallback;
                    }
                    metadata.ridge_fallback_steps.push(j);
                    Cholesky::new(retry).ok_or(Error::SingularGram { step: j, cond })?
                }
            };
            for t in 0..n_terms {
                let rhs = DVector::from_fn(q, |r, _| acc.rhs[t * q + r] / n_f);
                let sol = chol.solve(&rhs);
                step_weights[t * q..(t + 1) * q].copy_from_slice(sol.as_slice());
            }
        }
        standardisation.push(st);
        weights.push(step_weights);
    }

    let clamps = match config.truncation {
        Truncation::Off => None,
        Truncation::On { a_tilde } => Some(
            classes
                .iter()
                .zip(&max_resp_global)
                .map(|(&wc, &max_resp)| ClassClamp {
                    weight_class: wc,
                    a_tilde: a_tilde.unwrap_or_else(|| {
                        let exponent = (wc as f64 / 2.0).min(1.5);
                        2.0 * max_resp / grid.delta().powf(exponent)
                    }),
                })
                .collect(),
        ),
    };

    let data = RegressionData {
        basis,
        standardisation,
        weights,
        clamps,
        metadata,
    };
    CoefficientTable::from_regression(model.name(), functional, scheme, grid, terms.to_vec(), data)
}

fn step_standardisation(
    paths: &[SimulatedPath],
    j: usize,
    d: usize,
    standardize: bool,
) -> Standardisation {
    if !standardize {
        return Standardisation::identity(d);
    }
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for k in 0..d {
        let mv = parallel::mean_var_over(paths.len(), |i| paths[i].state(j - 1)[k]);
        mean[k] = mv.mean();
        let sd = mv.variance().sqrt();
        scale[k] = if sd.is_finite() && sd > 0.0 { sd } else { 1.0 };
    }
    Standardisation { mean, scale }
}
