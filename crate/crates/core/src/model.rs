//! SDE model description.
//!
//! A model is the autonomous Ito system
//!
//! ```text
//! dX_t = mu(X_t) dt + sigma(X_t) dW_t,     X_0 = x0,   t in [0, T]
//! ```
//!
//! with state dimension `d`, noise dimension `m`, drift `mu: R^d -> R^d` and
//! diffusion `sigma: R^d -> R^(d x m)`. Models are plain records of callbacks,
//! so user models and the built-in examples go through exactly the same code
//! paths.
//!
//! Second-order schemes additionally need the operators
//!
//! ```text
//! L0 g = sum_k mu^k dg/dx^k + 1/2 sum_{k,l} (sigma sigma^T)^{kl} d2g/dx^l dx^k
//! Lr g = sum_k sigma^{kr} dg/dx^k                       (r = 1..m)
//! ```
//!
//! applied to the components of `mu` and `sigma`. A model may supply these
//! analytically through [`DerivativeOps`]; otherwise
//! [`SdeModel::resolved_derivative_ops`] builds them by central finite
//! differences of the drift and diffusion callbacks.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Vector-valued model callback: reads the state, fills a caller-provided
/// output buffer (drift: length `d`; diffusion: length `d*m`, row-major).
pub type StateFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Scalar functional of the terminal state, optionally with its gradient.
///
/// The gradient callback fills `out[i] = df/dx^i` (length `d`). Supplying it
/// unlocks gradient-augmented regression bases; everything else works without
/// it.
#[derive(Clone)]
pub struct Functional {
    name: String,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Option<StateFn>,
}

impl Functional {
    pub fn new(name: &str, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Functional {
            name: name.to_string(),
            eval: Arc::new(eval),
            gradient: None,
        }
    }

    /// Build a functional together with its analytic gradient.
    pub fn with_gradient(
        name: &str,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Functional {
            name: name.to_string(),
            eval: Arc::new(eval),
            gradient: Some(Arc::new(gradient)),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Whether an analytic gradient was supplied.
    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// The gradient callback, if supplied.
    pub fn gradient_fn(&self) -> Option<&(dyn Fn(&[f64], &mut [f64]) + Send + Sync)> {
        self.gradient.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Functional")
            .field("name", &self.name)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Analytic derivative operators of a model, used by the second-order scheme.
///
/// All callbacks fill flat row-major buffers over 0-based indices:
///
/// ```text
/// lk_sigma: out[(r*m + k)*m + l] = Lk sigma^{rl}(x)    (length d*m*m)
/// l0_sigma: out[r*m + k]         = L0 sigma^{rk}(x)    (length d*m)
/// lk_mu:    out[r*m + k]         = Lk mu^r(x)          (length d*m)
/// l0_mu:    out[r]               = L0 mu^r(x)          (length d)
/// ```
#[derive(Clone)]
pub struct DerivativeOps {
    pub lk_sigma: StateFn,
    pub l0_sigma: StateFn,
    pub lk_mu: StateFn,
    pub l0_mu: StateFn,
}

/// An SDE model: dimensions, callbacks, initial state and horizon.
#[derive(Clone)]
pub struct SdeModel {
    dim_state: usize,
    dim_noise: usize,
    drift: StateFn,
    diffusion: StateFn,
    x0: Vec<f64>,
    horizon: f64,
    derivative_ops: Option<DerivativeOps>,
    diagonal_lk_sigma: bool,
    name: String,
}

impl SdeModel {
    /// Build and validate a model. The callbacks are probed at `x0`; all
    /// outputs must be finite.
    pub fn new(
        name: &str,
        dim_state: usize,
        dim_noise: usize,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        x0: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let model = SdeModel {
            dim_state,
            dim_noise,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            x0,
            horizon,
            derivative_ops: None,
            diagonal_lk_sigma: false,
            name: name.to_string(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Attach analytic derivative operators.
    pub fn with_derivative_ops(mut self, ops: DerivativeOps) -> Self {
        self.derivative_ops = Some(ops);
        self
    }

    /// Certify that `Lk sigma^{rl} == 0` whenever `k != l`. Term enumeration
    /// may then drop the cross-noise (V-matrix) control-variate terms, whose
    /// coefficients vanish for such models.
    pub fn with_diagonal_lk_sigma(mut self) -> Self {
        self.diagonal_lk_sigma = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dim_state == 0 || self.dim_noise == 0 {
            return Err(Error::InvalidModel(format!(
                "dimensions must be positive (d={}, m={})",
                self.dim_state, self.dim_noise
            )));
        }
        if self.x0.len() != self.dim_state {
            return Err(Error::InvalidModel(format!(
                "x0 has length {}, expected d={}",
                self.x0.len(),
                self.dim_state
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidModel(format!(
                "horizon must be finite and positive, got {}",
                self.horizon
            )));
        }
        let mut mu = vec![0.0; self.dim_state];
        (self.drift)(&self.x0, &mut mu);
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("drift(x0) is not finite".into()));
        }
        let mut sig = vec![0.0; self.dim_state * self.dim_noise];
        (self.diffusion)(&self.x0, &mut sig);
        if sig.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("diffusion(x0) is not finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    #[inline]
    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_state);
        (self.drift)(x, out);
    }

    #[inline]
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_state * self.dim_noise);
        (self.diffusion)(x, out);
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn certifies_diagonal_lk_sigma(&self) -> bool {
        self.diagonal_lk_sigma
    }

    pub fn has_analytic_derivative_ops(&self) -> bool {
        self.derivative_ops.is_some()
    }

    /// The model's derivative operators: the analytic ones when supplied,
    /// otherwise the central finite-difference fallback.
    pub fn resolved_derivative_ops(&self) -> DerivativeOps {
        match &self.derivative_ops {
            Some(ops) => ops.clone(),
            None => finite_difference_derivative_ops(self),
        }
    }
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("horizon", &self.horizon)
            .field("analytic_ops", &self.derivative_ops.is_some())
            .finish()
    }
}

/// First-difference step: `h = max(1e-5, 1e-7 |x|)`.
fn fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (1e-7 * norm).max(1e-5)
}

/// Second-difference step. Second central differences lose half the working
/// precision to cancellation, so the step is the fourth root of machine
/// epsilon in scale rather than the first-difference step.
fn fd_step2(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (1e-6 * norm).max(1e-4)
}

/// Evaluate `f` (output length `p`) at `x` with one coordinate shifted.
fn eval_shifted(f: &StateFn, x: &[f64], i: usize, dx: f64, p: usize, buf: &mut Vec<f64>) -> Vec<f64> {
    buf.clear();
    buf.extend_from_slice(x);
    buf[i] += dx;
    let mut out = vec![0.0; p];
    f(buf, &mut out);
    out
}

/// Central-difference derivative operators built from the drift and diffusion
/// callbacks. Accuracy is O(h^2) for the first-order operators and a few
/// parts in 1e8 for the second-order ones; well inside the 1e-6 agreement
/// required of analytic operators.
pub fn finite_difference_derivative_ops(model: &SdeModel) -> DerivativeOps {
    let d = model.dim_state;
    let m = model.dim_noise;
    let drift = model.drift.clone();
    let diffusion = model.diffusion.clone();

    // Gradient of a vector-valued callback: grad[q*d + i] = d f^q / dx^i.
    let gradient = move |f: &StateFn, x: &[f64], p: usize| -> Vec<f64> {
        let h = fd_step(x);
        let mut buf = Vec::with_capacity(x.len());
        let mut grad = vec![0.0; p * d];
        for i in 0..d {
            let plus = eval_shifted(f, x, i, h, p, &mut buf);
            let minus = eval_shifted(f, x, i, -h, p, &mut buf);
            for q in 0..p {
                grad[q * d + i] = (plus[q] - minus[q]) / (2.0 * h);
            }
        }
        grad
    };

    // Hessian of a vector-valued callback: hess[(q*d + i)*d + l] = d2 f^q / dx^i dx^l.
    let hessian = move |f: &StateFn, x: &[f64], p: usize| -> Vec<f64> {
        let h = fd_step2(x);
        let mut buf = Vec::with_capacity(x.len());
        let mut center = vec![0.0; p];
        f(x, &mut center);
        let mut hess = vec![0.0; p * d * d];
        for i in 0..d {
            let plus = eval_shifted(f, x, i, h, p, &mut buf);
            let minus = eval_shifted(f, x, i, -h, p, &mut buf);
            for q in 0..p {
                hess[(q * d + i) * d + i] = (plus[q] - 2.0 * center[q] + minus[q]) / (h * h);
            }
        }
        for i in 0..d {
            for l in (i + 1)..d {
                let shifted = |si: f64, sl: f64, buf: &mut Vec<f64>| -> Vec<f64> {
                    buf.clear();
                    buf.extend_from_slice(x);
                    buf[i] += si * h;
                    buf[l] += sl * h;
                    let mut out = vec![0.0; p];
                    f(buf, &mut out);
                    out
                };
                let pp = shifted(1.0, 1.0, &mut buf);
                let pm = shifted(1.0, -1.0, &mut buf);
                let mp = shifted(-1.0, 1.0, &mut buf);
                let mm = shifted(-1.0, -1.0, &mut buf);
                for q in 0..p {
                    let v = (pp[q] - pm[q] - mp[q] + mm[q]) / (4.0 * h * h);
                    hess[(q * d + i) * d + l] = v;
                    hess[(q * d + l) * d + i] = v;
                }
            }
        }
        hess
    };

    // Shared evaluation of mu, sigma and Sigma = sigma sigma^T at x.
    let local = {
        let drift = drift.clone();
        let diffusion = diffusion.clone();
        move |x: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut mu = vec![0.0; d];
            drift(x, &mut mu);
            let mut sig = vec![0.0; d * m];
            diffusion(x, &mut sig);
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                for l in 0..d {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += sig[i * m + k] * sig[l * m + k];
                    }
                    cov[i * d + l] = acc;
                }
            }
            (mu, sig, cov)
        }
    };

    // Lk g^q = sum_i sigma^{ik} dg^q/dx^i, for all q and k at once.
    let apply_lk = move |grad: &[f64], sig: &[f64], p: usize| -> Vec<f64> {
        let mut out = vec![0.0; p * m];
        for q in 0..p {
            for k in 0..m {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += sig[i * m + k] * grad[q * d + i];
                }
                out[q * m + k] = acc;
            }
        }
        out
    };

    // L0 g^q = sum_i mu^i dg^q/dx^i + 1/2 sum_{i,l} Sigma^{il} d2g^q/dx^i dx^l.
    let apply_l0 = move |grad: &[f64], hess: &[f64], mu: &[f64], cov: &[f64], p: usize| -> Vec<f64> {
        let mut out = vec![0.0; p];
        for q in 0..p {
            let mut acc = 0.0;
            for i in 0..d {
                acc += mu[i] * grad[q * d + i];
            }
            for i in 0..d {
                for l in 0..d {
                    acc += 0.5 * cov[i * d + l] * hess[(q * d + i) * d + l];
                }
            }
            out[q] = acc;
        }
        out
    };

    let lk_sigma: StateFn = {
        let (gradient, apply_lk, local, diffusion) =
            (gradient.clone(), apply_lk.clone(), local.clone(), diffusion.clone());
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (_, sig, _) = local(x);
            // grad over p = d*m components of sigma; component q = r*m + l.
            let grad = gradient(&diffusion, x, d * m);
            let lk = apply_lk(&grad, &sig, d * m);
            // lk[(r*m + l)*m + k] -> out[(r*m + k)*m + l]
            for r in 0..d {
                for l in 0..m {
                    for k in 0..m {
                        out[(r * m + k) * m + l] = lk[(r * m + l) * m + k];
                    }
                }
            }
        })
    };

    let l0_sigma: StateFn = {
        let (gradient, hessian, apply_l0, local, diffusion) = (
            gradient.clone(),
            hessian.clone(),
            apply_l0.clone(),
            local.clone(),
            diffusion.clone(),
        );
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (mu, _, cov) = local(x);
            let grad = gradient(&diffusion, x, d * m);
            let hess = hessian(&diffusion, x, d * m);
            let v = apply_l0(&grad, &hess, &mu, &cov, d * m);
            out.copy_from_slice(&v);
        })
    };

    let lk_mu: StateFn = {
        let (gradient, apply_lk, local, drift) =
            (gradient.clone(), apply_lk.clone(), local.clone(), drift.clone());
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (_, sig, _) = local(x);
            let grad = gradient(&drift, x, d);
            let v = apply_lk(&grad, &sig, d);
            out.copy_from_slice(&v);
        })
    };

    let l0_mu: StateFn = {
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (mu, _, cov) = local(x);
            let grad = gradient(&drift, x, d);
            let hess = hessian(&drift, x, d);
            let v = apply_l0(&grad, &hess, &mu, &cov, d);
            out.copy_from_slice(&v);
        })
    };

    DerivativeOps {
        lk_sigma,
        l0_sigma,
        lk_mu,
        l0_mu,
    }
}
