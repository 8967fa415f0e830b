//! Regression basis: polynomials in the standardised state, plus the payoff
//! itself — and optionally its gradient — as extra elements.
//!
//! For a `d`-dimensional state the degree-2 basis evaluated at
//! `(z, f(x), grad f(x))` is
//!
//! ```text
//! [ 1,  z_0 .. z_{d-1},  z_i z_j (i <= j, lexicographic),  f(x),
//!   df/dx^0 .. df/dx^{d-1} ]
//! ```
//!
//! with `z` the per-step standardised state and `f` evaluated on the raw
//! state. Without the gradient block that is `C(d+2, 2) + 1` elements (22 for
//! `d = 5`). [`BasisSpec::payoff_first`] flips the two halves to
//! `[1, f, df/dx^0 .., z_0 .., z_i z_j ..]`, which matters only under a size
//! cap: a capped basis keeps a prefix, and the payoff block is the part worth
//! keeping. Including `f` makes the family exact for conditional
//! expectations whose state dependence is carried by the payoff itself, which
//! is what the optimal coefficients look like near the terminal step. The
//! gradient block serves the steps before that: the variance-optimal
//! coefficient for a linear noise element is `sqrt(dt) (sigma^T grad q_j)_k`
//! where `q_j` is the conditional expectation of the payoff, and `q_J = f`
//! exactly — so for payoffs whose shape propagates backwards (smooth trig
//! payoffs under mild drift), the payoff partials are much closer to the
//! truth than any low-degree polynomial.
//!
//! Identifiability facts that decide which variant fits a job:
//!
//! * when the training states take only two distinct values per coordinate
//!   (the sign-driven Euler scheme one step after a deterministic start),
//!   every `z_i^2` column is exactly collinear with `[1, z_i]` — use
//!   `degree = 1` there;
//! * when the payoff is itself a polynomial of degree <= 2, the `f` element
//!   is exactly collinear with the monomials — drop it;
//! * when the payoff gradient components are proportional to each other
//!   everywhere (e.g. `f = cos(x^0 + 2 x^1)`), the gradient block is rank 1 —
//!   keep at most one of them (or skip the block) for such payoffs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub dim: usize,
    /// Polynomial degree in the standardised state: 1 or 2.
    pub degree: u8,
    pub include_functional: bool,
    /// Append the payoff's partial derivatives after the payoff element.
    /// Requires the functional to carry an analytic gradient.
    #[serde(default)]
    pub include_gradient: bool,
    /// Put the payoff block (`f`, then its partials) directly after the
    /// constant, ahead of the monomials. The payoff elements are the most
    /// informative ones (see the module docs), so under a size cap this
    /// ordering keeps them while the default ordering would cut them first.
    #[serde(default)]
    pub functional_first: bool,
    /// Keep only the first `cap` elements of the canonical order
    /// `[1, linear, quadratic, f, gradient]` (or `[1, f, gradient, linear,
    /// quadratic]` with [`BasisSpec::functional_first`]). Benchmark schedules
    /// prescribe a basis *size*; capping realises it inside the structured
    /// family.
    #[serde(default)]
    pub cap: Option<usize>,
}

impl BasisSpec {
    /// The default basis: quadratic in `z` plus the payoff element.
    pub fn quadratic_with_functional(dim: usize) -> Self {
        BasisSpec {
            dim,
            degree: 2,
            include_functional: true,
            include_gradient: false,
            functional_first: false,
            cap: None,
        }
    }

    /// Quadratic in `z` only.
    pub fn quadratic(dim: usize) -> Self {
        BasisSpec {
            dim,
            degree: 2,
            include_functional: false,
            include_gradient: false,
            functional_first: false,
            cap: None,
        }
    }

    /// Affine in `z` plus the payoff element.
    pub fn linear_with_functional(dim: usize) -> Self {
        BasisSpec {
            dim,
            degree: 1,
            include_functional: true,
            include_gradient: false,
            functional_first: false,
            cap: None,
        }
    }

    /// The same family with the payoff's partial derivatives appended.
    pub fn with_payoff_gradient(mut self) -> Self {
        self.include_gradient = true;
        self
    }

    /// The same family with the payoff block moved ahead of the monomials.
    pub fn payoff_first(mut self) -> Self {
        self.functional_first = true;
        self
    }

    /// The same family cut to its first `cap` elements.
    pub fn capped(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("basis needs a positive dimension".into()));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::InvalidConfig(format!(
                "basis degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if self.cap == Some(0) {
            return Err(Error::InvalidConfig("basis cap must be at least 1".into()));
        }
        Ok(())
    }

    fn uncapped_size(&self) -> usize {
        let d = self.dim;
        let quad = if self.degree >= 2 { d * (d + 1) / 2 } else { 0 };
        1 + d
            + quad
            + usize::from(self.include_functional)
            + if self.include_gradient { d } else { 0 }
    }

    /// Number of basis elements `Q`.
    pub fn size(&self) -> usize {
        let full = self.uncapped_size();
        self.cap.map_or(full, |c| c.min(full))
    }

    /// Index the payoff element would occupy: right after the constant when
    /// the payoff block leads, right after the monomials otherwise.
    fn functional_index(&self) -> usize {
        if self.functional_first {
            return 1;
        }
        let d = self.dim;
        let quad = if self.degree >= 2 { d * (d + 1) / 2 } else { 0 };
        1 + d + quad
    }

    /// Whether the payoff element survives the cap.
    pub fn uses_functional(&self) -> bool {
        self.include_functional && self.size() > self.functional_index()
    }

    /// Whether any gradient component survives the cap (the gradient block
    /// sits directly after the payoff element in either ordering).
    pub fn uses_gradient(&self) -> bool {
        let start = self.functional_index() + usize::from(self.include_functional);
        self.include_gradient && self.size() > start
    }

    fn write_monomials(&self, z: &[f64], out: &mut [f64], idx: &mut usize) {
        let n = out.len();
        let d = self.dim;
        for k in 0..d {
            if *idx == n {
                return;
            }
            out[*idx] = z[k];
            *idx += 1;
        }
        if self.degree >= 2 {
            for i in 0..d {
                for j in i..d {
                    if *idx == n {
                        return;
                    }
                    out[*idx] = z[i] * z[j];
                    *idx += 1;
                }
            }
        }
    }

    fn write_payoff_block(&self, fx: f64, grad: &[f64], out: &mut [f64], idx: &mut usize) {
        let n = out.len();
        if self.include_functional {
            if *idx == n {
                return;
            }
            out[*idx] = fx;
            *idx += 1;
        }
        if self.include_gradient {
            for k in 0..self.dim {
                if *idx == n {
                    return;
                }
                out[*idx] = grad[k];
                *idx += 1;
            }
        }
    }

    /// Evaluate into `out` (length [`BasisSpec::size`]): the constant, then
    /// the monomial block (linear, and for degree 2 the quadratic monomials
    /// in `z`) and the payoff block (`fx`, then the payoff partials) in the
    /// order the spec selects, stopping at the cap. `grad` must have length
    /// `dim` whenever [`BasisSpec::uses_gradient`] holds; otherwise it may be
    /// empty.
    pub fn eval_into(&self, z: &[f64], fx: f64, grad: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        debug_assert_eq!(out.len(), self.size());
        debug_assert!(!self.uses_gradient() || grad.len() == self.dim);
        out[0] = 1.0;
        let mut idx = 1;
        if self.functional_first {
            self.write_payoff_block(fx, grad, out, &mut idx);
            self.write_monomials(z, out, &mut idx);
        } else {
            self.write_monomials(z, out, &mut idx);
            self.write_payoff_block(fx, grad, out, &mut idx);
        }
    }

    /// Human-readable element names in evaluation order.
    pub fn element_names(&self) -> Vec<String> {
        let d = self.dim;
        let mut monomials: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
        if self.degree >= 2 {
            for i in 0..d {
                for j in i..d {
                    monomials.push(if i == j {
                        format!("z{i}^2")
                    } else {
                        format!("z{i}*z{j}")
                    });
                }
            }
        }
        let mut payoff = Vec::new();
        if self.include_functional {
            payoff.push("f".to_string());
        }
        if self.include_gradient {
            payoff.extend((0..d).map(|i| format!("df{i}")));
        }
        let mut names = vec!["1".to_string()];
        if self.functional_first {
            names.extend(payoff);
            names.extend(monomials);
        } else {
            names.extend(monomials);
            names.extend(payoff);
        }
        names.truncate(self.size());
        names
    }
}
