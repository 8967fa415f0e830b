//! Built-in models: the 5-dimensional benchmark example and small toy
//! systems used by tests and the command-line tools.

mod example5d;
mod toys;

pub use example5d::{example_5d, reference_expectation, trig_cosine_factor};
pub use toys::{const_1d, const_2d, toy_1d, toy_2d};

use crate::error::{Error, Result};
use crate::model::{Functional, SdeModel};

/// Names accepted by [`by_name`].
pub const MODEL_NAMES: [&str; 5] = ["example5d", "toy1d", "toy2d", "const1d", "const2d"];

/// Look up a built-in model and its functional by name.
pub fn by_name(name: &str) -> Result<(SdeModel, Functional)> {
    match name {
        "example5d" => Ok(example_5d()),
        "toy1d" => Ok(toy_1d()),
        "toy2d" => Ok(toy_2d()),
        "const1d" => Ok(const_1d()),
        "const2d" => Ok(const_2d()),
        other => Err(Error::InvalidConfig(format!(
            "unknown model '{other}'; available: {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

/// Continuous-time reference value `E f(X_T)` for models that have one:
/// `example5d` via adaptive quadrature, the constant-coefficient toys in
/// closed form. The state-dependent toys have no tractable reference and
/// return `None`.
pub fn reference_value(name: &str) -> Result<Option<f64>> {
    match name {
        "example5d" => Ok(Some(reference_expectation(1e-9, 4_000_000)?)),
        "const1d" => {
            // X_T ~ Normal(x0 + mu T, sigma^2 T); E X^2 = mean^2 + variance.
            let t = const_1d().0.horizon();
            let mean = 0.4 + 0.1 * t;
            Ok(Some(mean * mean + 0.25 * t))
        }
        "const2d" => {
            // x1 + 2 x2 ~ Normal(0, (1 + 4/4) T), so E cos = exp(-T).
            let t = const_2d().0.horizon();
            Ok(Some((-t).exp()))
        }
        "toy1d" | "toy2d" => Ok(None),
        other => Err(Error::InvalidConfig(format!(
            "unknown model '{other}'; available: {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}
