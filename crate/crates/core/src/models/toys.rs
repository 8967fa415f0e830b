//! Small test models.
//!
//! The `toy*` models have genuinely state-dependent coefficients and exercise
//! the full scheme machinery; they rely on the finite-difference fallback for
//! their derivative operators. The `const*` models have constant
//! coefficients, which keeps every exact-enumeration state on a lattice (the
//! memoised oracle then collapses the outcome tree) and makes conditional
//! expectations of polynomial functionals exactly representable in a
//! quadratic basis.

use crate::model::{DerivativeOps, Functional, SdeModel};
use std::sync::Arc;

/// Zero derivative operators for constant-coefficient models.
fn zero_ops(d: usize, m: usize) -> DerivativeOps {
    let zs: crate::model::StateFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
    let _ = (d, m);
    DerivativeOps {
        lk_sigma: zs.clone(),
        l0_sigma: zs.clone(),
        lk_mu: zs.clone(),
        l0_mu: zs,
    }
}

/// 1-d model with smooth, bounded, state-dependent coefficients:
/// `mu = 0.3 cos x`, `sigma = 0.8 + 0.4 sin x`, `x0 = 0.2`, `T = 1`.
pub fn toy_1d() -> (SdeModel, Functional) {
    let model = SdeModel::new(
        "toy1d",
        1,
        1,
        |x, out| out[0] = 0.3 * x[0].cos(),
        |x, out| out[0] = 0.8 + 0.4 * x[0].sin(),
        vec![0.2],
        1.0,
    )
    .expect("built-in model is valid");
    let functional = Functional::with_gradient(
        "cos-minus-20-sin",
        |x: &[f64]| x[0].cos() - 20.0 * x[0].sin(),
        |x: &[f64], out: &mut [f64]| out[0] = -x[0].sin() - 20.0 * x[0].cos(),
    );
    (model, functional)
}

/// 2-d model with a full (non-diagonal) state-dependent diffusion matrix.
pub fn toy_2d() -> (SdeModel, Functional) {
    let model = SdeModel::new(
        "toy2d",
        2,
        2,
        |x, out| {
            out[0] = 0.2 * x[1].cos();
            out[1] = -0.1 * x[0].sin();
        },
        |x, out| {
            out[0] = 0.8 + 0.2 * x[1].cos();
            out[1] = 0.3 * x[0].sin();
            out[2] = 0.1 * (x[0] + x[1]).sin();
            out[3] = 0.9 + 0.1 * x[0].sin();
        },
        vec![0.1, -0.3],
        1.0,
    )
    .expect("built-in model is valid");
    let functional = Functional::with_gradient(
        "cos-sum-minus-20-sin",
        |x: &[f64]| (x[0] + x[1]).cos() - 20.0 * x[0].sin(),
        |x: &[f64], out: &mut [f64]| {
            let s = (x[0] + x[1]).sin();
            out[0] = -s - 20.0 * x[0].cos();
            out[1] = -s;
        },
    );
    (model, functional)
}

/// 1-d constant-coefficient model, `mu = 0.1`, `sigma = 0.5`, with the
/// quadratic functional `f(x) = x^2`. Conditional expectations of `f` under
/// either scheme are quadratic polynomials of the state, so regression with a
/// quadratic basis has zero approximation bias.
pub fn const_1d() -> (SdeModel, Functional) {
    let model = SdeModel::new(
        "const1d",
        1,
        1,
        |_x, out| out[0] = 0.1,
        |_x, out| out[0] = 0.5,
        vec![0.4],
        1.0,
    )
    .expect("built-in model is valid")
    .with_derivative_ops(zero_ops(1, 1))
    .with_diagonal_lk_sigma();
    let functional = Functional::with_gradient(
        "square",
        |x: &[f64]| x[0] * x[0],
        |x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0],
    );
    (model, functional)
}

/// 2-d driftless model with constant diagonal diffusion `diag(1, 0.5)` and the
/// smooth bounded functional `f = cos(x^1 + 2 x^2)`. States reachable by
/// either scheme live on a near-exact lattice, so the memoised exact oracle
/// stays cheap even at 32 steps.
pub fn const_2d() -> (SdeModel, Functional) {
    let model = SdeModel::new(
        "const2d",
        2,
        2,
        |_x, out| out.fill(0.0),
        |_x, out| {
            out[0] = 1.0;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = 0.5;
        },
        vec![0.0, 0.0],
        1.0,
    )
    .expect("built-in model is valid")
    .with_derivative_ops(zero_ops(2, 2))
    .with_diagonal_lk_sigma();
    // Note: the two gradient components are proportional everywhere
    // (both multiples of sin(x^0 + 2 x^1)), so a basis using *both* is
    // structurally rank-deficient on this model — use at most one.
    let functional = Functional::with_gradient(
        "cos-weighted-sum",
        |x: &[f64]| (x[0] + 2.0 * x[1]).cos(),
        |x: &[f64], out: &mut [f64]| {
            let s = (x[0] + 2.0 * x[1]).sin();
            out[0] = -s;
            out[1] = -2.0 * s;
        },
    );
    (model, functional)
}
