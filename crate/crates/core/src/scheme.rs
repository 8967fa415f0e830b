//! Weak discretisation schemes and path simulation.
//!
//! Two schemes are implemented on a uniform grid with step `delta = T/J`:
//!
//! **Weak Euler.** With iid signs `P(y^k = +-1) = 1/2`,
//!
//! ```text
//! X_j^r = X_{j-1}^r + mu^r dt + sum_k sigma^{rk} y^k sqrt(dt)
//! ```
//!
//! **Second-order weak Taylor** (simplified). With iid three-point variables
//! `P(xi = +-sqrt 3) = 1/6`, `P(xi = 0) = 2/3` and an antisymmetric matrix
//! `V` whose strictly upper entries are iid signs, `V^{ll} = -1`,
//! `V^{lk} = -V^{kl}`,
//!
//! ```text
//! X_j^r = X_{j-1}^r + sum_k sigma^{rk} xi^k sqrt(dt)
//!       + [ mu^r + 1/2 sum_{k,l} Lk sigma^{rl} (xi^k xi^l + V^{kl}) ] dt
//!       + 1/2 sum_k [ L0 sigma^{rk} + Lk mu^r ] xi^k dt^(3/2)
//!       + 1/2 L0 mu^r dt^2
//! ```
//!
//! Both schemes match the moments of Brownian increments to the order their
//! weak convergence rate requires (order 1 and order 2 respectively).
//!
//! Increments are sampled through the keyed counter RNG, so a path is a pure
//! function of `(seed, path_id)` and simulation parallelises without any
//! shared state. Component layout of the keys: Euler uses components
//! `0..m`; the second-order scheme uses `0..m` for the xi draws and
//! `m + pair_index(i,l)` for the upper V entries.

use crate::error::{Error, Result};
use crate::model::{DerivativeOps, SdeModel};
use crate::parallel;
use crate::rng;
use serde::{Deserialize, Serialize};

/// Discretisation scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Weak Euler, order 1.
    #[serde(rename = "euler")]
    Euler,
    /// Simplified second-order weak Taylor.
    #[serde(rename = "order2")]
    SecondOrder,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::SecondOrder => "order2",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "euler" => Ok(Scheme::Euler),
            "order2" => Ok(Scheme::SecondOrder),
            other => Err(Error::InvalidConfig(format!(
                "unknown scheme '{other}' (expected 'euler' or 'order2')"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Uniform time grid: `steps` intervals of length `delta` covering `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    steps: usize,
    delta: f64,
}

impl GridSpec {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("grid needs at least one step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(GridSpec {
            steps,
            delta: horizon / steps as f64,
        })
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

pub const SQRT_3: f64 = 1.732050807568877293527446341505872367_f64;

/// Lexicographic index of the pair `(i, l)`, `i < l`, among the
/// `m (m-1) / 2` strictly-upper positions.
#[inline]
pub fn pair_index(i: usize, l: usize, m: usize) -> usize {
    debug_assert!(i < l && l < m);
    i * m - i * (i + 1) / 2 + (l - i - 1)
}

/// One step's worth of discrete noise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Increment {
    /// Euler signs, each -1 or +1.
    Euler { signs: Vec<i8> },
    /// Three-point codes (`xi = code * sqrt 3`) and upper V signs in
    /// [`pair_index`] order.
    SecondOrder { xi: Vec<i8>, v_upper: Vec<i8> },
}

impl Increment {
    /// Number of noise components the increment was sampled for.
    pub fn dim_noise(&self) -> usize {
        match self {
            Increment::Euler { signs } => signs.len(),
            Increment::SecondOrder { xi, .. } => xi.len(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            Increment::Euler { .. } => Scheme::Euler,
            Increment::SecondOrder { .. } => Scheme::SecondOrder,
        }
    }

    /// The noise value `y^k` entering the diffusion term.
    #[inline]
    pub fn y(&self, k: usize) -> f64 {
        match self {
            Increment::Euler { signs } => signs[k] as f64,
            Increment::SecondOrder { xi, .. } => xi[k] as f64 * SQRT_3,
        }
    }

    /// Entry `V^{il}` of the antisymmetric matrix (second-order only):
    /// diagonal -1, upper entries the stored signs, lower their negatives.
    #[inline]
    pub fn v_entry(&self, i: usize, l: usize) -> f64 {
        match self {
            Increment::Euler { .. } => panic!("V matrix only exists for the second-order scheme"),
            Increment::SecondOrder { xi, v_upper } => {
                let m = xi.len();
                if i == l {
                    -1.0
                } else if i < l {
                    v_upper[pair_index(i, l, m)] as f64
                } else {
                    -(v_upper[pair_index(l, i, m)] as f64)
                }
            }
        }
    }
}

/// Draw the increment for `(seed, path_id, step)`.
pub fn sample_increment(scheme: Scheme, seed: u64, path_id: u64, step: u32, m: usize) -> Increment {
    match scheme {
        Scheme::Euler => {
            let signs = (0..m)
                .map(|k| rng::sign_from_uniform(rng::uniform(seed, path_id, step, k as u32)))
                .collect();
            Increment::Euler { signs }
        }
        Scheme::SecondOrder => {
            let xi = (0..m)
                .map(|k| rng::three_point_from_uniform(rng::uniform(seed, path_id, step, k as u32)))
                .collect();
            let v_upper = (0..m * (m - 1) / 2)
                .map(|p| rng::sign_from_uniform(rng::uniform(seed, path_id, step, (m + p) as u32)))
                .collect();
            Increment::SecondOrder { xi, v_upper }
        }
    }
}

/// Scratch space reused across steps of one worker.
pub(crate) struct StepBufs {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    lk_sigma: Vec<f64>,
    l0_sigma: Vec<f64>,
    lk_mu: Vec<f64>,
    l0_mu: Vec<f64>,
}

impl StepBufs {
    pub(crate) fn new(d: usize, m: usize) -> Self {
        StepBufs {
            mu: vec![0.0; d],
            sigma: vec![0.0; d * m],
            lk_sigma: vec![0.0; d * m * m],
            l0_sigma: vec![0.0; d * m],
            lk_mu: vec![0.0; d * m],
            l0_mu: vec![0.0; d],
        }
    }
}

pub(crate) fn euler_step_into(
    model: &SdeModel,
    x: &[f64],
    inc: &Increment,
    delta: f64,
    out: &mut [f64],
    bufs: &mut StepBufs,
) {
    let d = model.dim_state();
    let m = model.dim_noise();
    let sqrt_dt = delta.sqrt();
    model.drift(x, &mut bufs.mu);
    model.diffusion(x, &mut bufs.sigma);
    for r in 0..d {
        let mut acc = 0.0;
        for k in 0..m {
            acc += bufs.sigma[r * m + k] * inc.y(k);
        }
        out[r] = x[r] + bufs.mu[r] * delta + acc * sqrt_dt;
    }
}

pub(crate) fn second_order_step_into(
    model: &SdeModel,
    ops: &DerivativeOps,
    x: &[f64],
    inc: &Increment,
    delta: f64,
    out: &mut [f64],
    bufs: &mut StepBufs,
) {
    let d = model.dim_state();
    let m = model.dim_noise();
    let sqrt_dt = delta.sqrt();
    let dt_32 = delta * sqrt_dt;
    model.drift(x, &mut bufs.mu);
    model.diffusion(x, &mut bufs.sigma);
    (ops.lk_sigma)(x, &mut bufs.lk_sigma);
    (ops.l0_sigma)(x, &mut bufs.l0_sigma);
    (ops.lk_mu)(x, &mut bufs.lk_mu);
    (ops.l0_mu)(x, &mut bufs.l0_mu);
    for r in 0..d {
        let mut diff = 0.0;
        for k in 0..m {
            diff += bufs.sigma[r * m + k] * inc.y(k);
        }
        let mut curv = 0.0;
        for k in 0..m {
            let yk = inc.y(k);
            for l in 0..m {
                let c = bufs.lk_sigma[(r * m + k) * m + l];
                if c != 0.0 {
                    curv += c * (yk * inc.y(l) + inc.v_entry(k, l));
                }
            }
        }
        let mut mixed = 0.0;
        for k in 0..m {
            mixed += (bufs.l0_sigma[r * m + k] + bufs.lk_mu[r * m + k]) * inc.y(k);
        }
        out[r] = x[r]
            + diff * sqrt_dt
            + (bufs.mu[r] + 0.5 * curv) * delta
            + 0.5 * mixed * dt_32
            + 0.5 * bufs.l0_mu[r] * delta * delta;
    }
}

/// One weak Euler step (allocating convenience wrapper).
pub fn euler_step(model: &SdeModel, x: &[f64], inc: &Increment, delta: f64) -> Vec<f64> {
    let mut out = vec![0.0; model.dim_state()];
    let mut bufs = StepBufs::new(model.dim_state(), model.dim_noise());
    euler_step_into(model, x, inc, delta, &mut out, &mut bufs);
    out
}

/// One second-order weak Taylor step (allocating convenience wrapper). Uses
/// the model's analytic derivative operators when present, otherwise the
/// finite-difference fallback.
pub fn second_order_step(model: &SdeModel, x: &[f64], inc: &Increment, delta: f64) -> Vec<f64> {
    let ops = model.resolved_derivative_ops();
    let mut out = vec![0.0; model.dim_state()];
    let mut bufs = StepBufs::new(model.dim_state(), model.dim_noise());
    second_order_step_into(model, &ops, x, inc, delta, &mut out, &mut bufs);
    out
}

/// Apply one step of `scheme`.
pub(crate) fn step(
    model: &SdeModel,
    ops: Option<&DerivativeOps>,
    scheme: Scheme,
    x: &[f64],
    inc: &Increment,
    delta: f64,
    out: &mut [f64],
    bufs: &mut StepBufs,
) {
    match scheme {
        Scheme::Euler => euler_step_into(model, x, inc, delta, out, bufs),
        Scheme::SecondOrder => {
            let ops = ops.expect("second-order stepping needs derivative operators");
            second_order_step_into(model, ops, x, inc, delta, out, bufs);
        }
    }
}

/// One possible realisation of a single step's noise together with its
/// probability, both as a double and as an exact fraction `num / den`.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub increment: Increment,
    pub weight: f64,
    pub weight_num: u64,
    pub weight_den: u64,
}

/// Enumerate every outcome of one step's noise with its probability.
///
/// Euler: `2^m` sign vectors, each with probability `2^-m` (exact in f64).
/// Second order: `3^m * 2^(m(m-1)/2)` combinations of three-point codes and
/// upper V signs, with probability `4^z / (6^m 2^(m(m-1)/2))` where `z` is
/// the number of zero codes. Component `k` of outcome index `i` is bit/digit
/// `k`, so the order is deterministic and documented.
pub fn step_outcomes(scheme: Scheme, m: usize) -> Vec<StepOutcome> {
    match scheme {
        Scheme::Euler => {
            let count = 1usize << m;
            let den = count as u64;
            (0..count)
                .map(|i| {
                    let signs = (0..m)
                        .map(|k| if (i >> k) & 1 == 1 { 1i8 } else { -1i8 })
                        .collect();
                    StepOutcome {
                        increment: Increment::Euler { signs },
                        weight: 1.0 / den as f64,
                        weight_num: 1,
                        weight_den: den,
                    }
                })
                .collect()
        }
        Scheme::SecondOrder => {
            let pairs = m * (m - 1) / 2;
            let pow3 = 3usize.pow(m as u32);
            let pow2 = 1usize << pairs;
            let den = 6u64.pow(m as u32) * (1u64 << pairs);
            let mut out = Vec::with_capacity(pow3 * pow2);
            for t in 0..pow3 {
                let mut codes = Vec::with_capacity(m);
                let mut zeros = 0u32;
                let mut rest = t;
                for _ in 0..m {
                    let digit = (rest % 3) as i8 - 1;
                    rest /= 3;
                    if digit == 0 {
                        zeros += 1;
                    }
                    codes.push(digit);
                }
                let num = 4u64.pow(zeros);
                let weight = num as f64 / den as f64;
                for b in 0..pow2 {
                    let v_upper = (0..pairs)
                        .map(|p| if (b >> p) & 1 == 1 { 1i8 } else { -1i8 })
                        .collect();
                    out.push(StepOutcome {
                        increment: Increment::SecondOrder {
                            xi: codes.clone(),
                            v_upper,
                        },
                        weight,
                        weight_num: num,
                        weight_den: den,
                    });
                }
            }
            out
        }
    }
}

/// A simulated path: states `X_0..X_J` (row-major, `states[j*d..][..d]`) and
/// the increments that produced them.
#[derive(Clone, Debug)]
pub struct SimulatedPath {
    pub path_id: u64,
    pub dim_state: usize,
    pub states: Vec<f64>,
    pub increments: Vec<Increment>,
}

impl SimulatedPath {
    /// State after `j` steps (`j = 0` is the initial state).
    #[inline]
    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim_state..(j + 1) * self.dim_state]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.increments.len())
    }
}

/// Simulate `n_paths` paths. Randomness is a pure function of
/// `(seed, path_id, step, component)`, so the result is bit-identical for
/// any worker count, and path `i` of a run with `n_paths = a` equals path
/// `i` of a run with `n_paths = b` whenever `i < min(a, b)`.
pub fn simulate_paths(
    model: &SdeModel,
    scheme: Scheme,
    grid: GridSpec,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SimulatedPath>> {
    let ops = match scheme {
        Scheme::SecondOrder => Some(model.resolved_derivative_ops()),
        Scheme::Euler => None,
    };

    let chunks = parallel::map_chunks(n_paths, |range| {
        simulate_range(model, ops.as_ref(), scheme, grid, seed, range)
    });

    let paths: Vec<SimulatedPath> = chunks.into_iter().flatten().collect();
    for p in &paths {
        if p.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "simulate_paths",
            });
        }
    }
    Ok(paths)
}

/// Simulate the paths with ids in `range`. Shared by [`simulate_paths`] and
/// the streaming estimators, so both see bit-identical paths for a given
/// `(seed, path_id)`. Finiteness is *not* checked here; callers own that.
pub(crate) fn simulate_range(
    model: &SdeModel,
    ops: Option<&crate::model::DerivativeOps>,
    scheme: Scheme,
    grid: GridSpec,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Vec<SimulatedPath> {
    let d = model.dim_state();
    let m = model.dim_noise();
    let j_steps = grid.steps();
    let mut bufs = StepBufs::new(d, m);
    let mut out = Vec::with_capacity(range.len());
    let mut next = vec![0.0; d];
    for path_id in range {
        let mut states = Vec::with_capacity((j_steps + 1) * d);
        states.extend_from_slice(model.x0());
        let mut increments = Vec::with_capacity(j_steps);
        for s in 0..j_steps {
            let inc = sample_increment(scheme, seed, path_id as u64, s as u32, m);
            {
                let x = &states[s * d..(s + 1) * d];
                step(model, ops, scheme, x, &inc, grid.delta(), &mut next, &mut bufs);
            }
            states.extend_from_slice(&next);
            increments.push(inc);
        }
        out.push(SimulatedPath {
            path_id: path_id as u64,
            dim_state: d,
            states,
            increments,
        });
    }
    out
}

/// Dump paths as CSV: one row per `(path_id, j)` holding the state
/// coordinates and the raw increment that produced the state (empty fields
/// at `j = 0`). Euler rows carry the signs; second-order rows carry the
/// three-point codes followed by the upper V signs.
pub fn write_paths_csv<W: std::io::Write>(paths: &[SimulatedPath], m: usize, mut w: W) -> std::io::Result<()> {
    let d = paths.first().map_or(0, |p| p.dim_state);
    let scheme = paths.first().and_then(|p| p.increments.first()).map(Increment::scheme);
    let mut header = String::from("path_id,j");
    for r in 0..d {
        header.push_str(&format!(",x{r}"));
    }
    match scheme {
        Some(Scheme::Euler) | None => {
            for k in 0..m {
                header.push_str(&format!(",sign{k}"));
            }
        }
        Some(Scheme::SecondOrder) => {
            for k in 0..m {
                header.push_str(&format!(",xi{k}"));
            }
            for i in 0..m {
                for l in (i + 1)..m {
                    header.push_str(&format!(",v{i}{l}"));
                }
            }
        }
    }
    writeln!(w, "{header}")?;
    for p in paths {
        for j in 0..=p.increments.len() {
            let mut row = format!("{},{}", p.path_id, j);
            for v in p.state(j) {
                row.push_str(&format!(",{v}"));
            }
            if j == 0 {
                let blanks = match scheme {
                    Some(Scheme::SecondOrder) => m + m * (m - 1) / 2,
                    _ => m,
                };
                for _ in 0..blanks {
                    row.push(',');
                }
            } else {
                match &p.increments[j - 1] {
                    Increment::Euler { signs } => {
                        for s in signs {
                            row.push_str(&format!(",{s}"));
                        }
                    }
                    Increment::SecondOrder { xi, v_upper } => {
                        for c in xi {
                            row.push_str(&format!(",{c}"));
                        }
                        for v in v_upper {
                            row.push_str(&format!(",{v}"));
                        }
                    }
                }
            }
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(GridSpec::new(1.0, 0).is_err());
        assert!(GridSpec::new(0.0, 4).is_err());
        assert!(GridSpec::new(f64::NAN, 4).is_err());
        let g = GridSpec::new(1.0, 4).unwrap();
        assert_eq!(g.delta(), 0.25);
    }

    #[test]
    fn pair_index_is_lexicographic() {
        // m = 4: (0,1)(0,2)(0,3)(1,2)(1,3)(2,3)
        let idx: Vec<usize> = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            .into_iter()
            .map(|(i, l)| pair_index(i, l, 4))
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn v_matrix_is_antisymmetric_with_minus_one_diagonal() {
        let inc = sample_increment(Scheme::SecondOrder, 7, 11, 3, 4);
        for i in 0..4 {
            assert_eq!(inc.v_entry(i, i), -1.0);
            for l in 0..4 {
                if i != l {
                    assert_eq!(inc.v_entry(i, l), -inc.v_entry(l, i));
                    assert!(inc.v_entry(i, l).abs() == 1.0);
                }
            }
        }
    }

    /// Euler step on the 5-d example at the origin with unit step and all
    /// signs positive: sigma(0) has unit diagonal and a row of ones, so the
    /// new state is exactly (1, 1, 1, 1, 5).
    #[test]
    fn euler_step_hand_value_on_example_model() {
        let (model, _) = models::example_5d();
        let inc = Increment::Euler { signs: vec![1; 5] };
        let out = euler_step(&model, &[0.0; 5], &inc, 1.0);
        assert_eq!(out, vec![1.0, 1.0, 1.0, 1.0, 5.0]);
    }

    /// Second-order step hand value: 1-d, mu = 0, sigma = x, so
    /// L1 sigma = x and everything else vanishes. At x = 1, xi = +sqrt 3,
    /// dt = 0.01 the update is 1 + sqrt(3)/10 + (xi^2 - 1)/2 * 0.01.
    #[test]
    fn second_order_step_hand_value() {
        let model = SdeModel::new(
            "linear-noise",
            1,
            1,
            |_x, out| out[0] = 0.0,
            |x, out| out[0] = x[0],
            vec![1.0],
            1.0,
        )
        .unwrap()
        .with_derivative_ops(crate::model::DerivativeOps {
            lk_sigma: std::sync::Arc::new(|x, out| out[0] = x[0]),
            l0_sigma: std::sync::Arc::new(|_x, out| out[0] = 0.0),
            lk_mu: std::sync::Arc::new(|_x, out| out[0] = 0.0),
            l0_mu: std::sync::Arc::new(|_x, out| out[0] = 0.0),
        });
        let inc = Increment::SecondOrder {
            xi: vec![1],
            v_upper: vec![],
        };
        let out = second_order_step(&model, &[1.0], &inc, 0.01);
        assert!((out[0] - 1.1832050807568877).abs() < 2e-15, "{}", out[0]);
    }

    /// The second-order scheme with zero derivative operators degenerates to
    /// Euler driven by the three-point noise.
    #[test]
    fn second_order_with_zero_ops_is_three_point_euler() {
        let (model, _) = models::const_2d();
        let inc = sample_increment(Scheme::SecondOrder, 3, 5, 0, 2);
        let out = second_order_step(&model, &[0.2, -0.1], &inc, 0.25);
        let manual = [
            0.2 + 1.0 * inc.y(0) * 0.5,
            -0.1 + 0.5 * inc.y(1) * 0.5,
        ];
        assert_eq!(out[0].to_bits(), manual[0].to_bits());
        assert_eq!(out[1].to_bits(), manual[1].to_bits());
    }

    #[test]
    fn paths_are_deterministic_and_start_at_x0() {
        let (model, _) = models::toy_2d();
        let grid = GridSpec::new(1.0, 6).unwrap();
        let a = simulate_paths(&model, Scheme::Euler, grid, 64, 99).unwrap();
        let b = simulate_paths(&model, Scheme::Euler, grid, 64, 99).unwrap();
        assert_eq!(a.len(), 64);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.states.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       pb.states.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(pa.state(0), model.x0());
            assert_eq!(pa.increments.len(), 6);
        }
        // A longer run extends, never changes, the shorter run's paths.
        let c = simulate_paths(&model, Scheme::Euler, grid, 128, 99).unwrap();
        assert_eq!(c[10].states, a[10].states);
    }

    /// Empirical moments of the sampled increments inside 4-sigma bands:
    /// signs are centred, xi has variance 1 and fourth moment 3.
    #[test]
    fn increment_moments_within_clt_bands() {
        let n = 200_000;
        let mut sum_sign = 0.0;
        let mut sum_xi = 0.0;
        let mut sum_xi2 = 0.0;
        let mut sum_xi4 = 0.0;
        let mut sum_v = 0.0;
        for i in 0..n {
            let e = sample_increment(Scheme::Euler, 0xabc, i, 0, 2);
            let s = sample_increment(Scheme::SecondOrder, 0xdef, i, 0, 2);
            if let Increment::Euler { signs } = &e {
                sum_sign += signs[0] as f64;
            }
            let x = s.y(0);
            sum_xi += x;
            sum_xi2 += x * x;
            sum_xi4 += x * x * x * x;
            sum_v += s.v_entry(0, 1);
        }
        let nf = n as f64;
        let band = 4.0 / nf.sqrt();
        assert!((sum_sign / nf).abs() < band);
        assert!((sum_v / nf).abs() < band);
        // sd(xi) = 1, sd(xi^2) = sqrt(E xi^4 - 1) = sqrt 2, sd(xi^4) = sqrt(E xi^8 - 9) = sqrt(27-9)
        assert!((sum_xi / nf).abs() < band);
        assert!((sum_xi2 / nf - 1.0).abs() < band * 2.0f64.sqrt());
        assert!((sum_xi4 / nf - 3.0).abs() < band * 18.0f64.sqrt());
    }

    /// Flipping the uniform stream u -> 1-u negates Euler signs away from
    /// the half threshold.
    #[test]
    fn sign_symmetry_under_uniform_flip() {
        for i in 0..10_000u64 {
            let u = crate::rng::uniform(0x51, i, 0, 0);
            if u != 0.5 && u != 0.0 {
                assert_eq!(
                    crate::rng::sign_from_uniform(u),
                    -crate::rng::sign_from_uniform(1.0 - u)
                );
                let a = crate::rng::three_point_from_uniform(u);
                let b = crate::rng::three_point_from_uniform(1.0 - u);
                if u != 1.0 / 6.0 && u != 5.0 / 6.0 {
                    assert_eq!(a, -b);
                }
            }
        }
    }

    #[test]
    fn step_outcome_weights_sum_to_one() {
        for m in 1..=3 {
            let eu = step_outcomes(Scheme::Euler, m);
            assert_eq!(eu.len(), 1 << m);
            assert_eq!(eu.iter().map(|o| o.weight).sum::<f64>(), 1.0);

            let so = step_outcomes(Scheme::SecondOrder, m);
            assert_eq!(so.len(), 3usize.pow(m as u32) << (m * (m - 1) / 2));
            assert!((so.iter().map(|o| o.weight).sum::<f64>() - 1.0).abs() < 1e-12);
            // Exact fraction bookkeeping: numerators over the common
            // denominator must sum to exactly one.
            let den = so[0].weight_den as u128;
            assert!(so.iter().all(|o| o.weight_den as u128 == den));
            let num: u128 = so.iter().map(|o| o.weight_num as u128).sum();
            assert_eq!(num, den);
        }
    }

    #[test]
    fn csv_dump_has_expected_shape() {
        let (model, _) = models::toy_1d();
        let grid = GridSpec::new(1.0, 2).unwrap();
        let paths = simulate_paths(&model, Scheme::Euler, grid, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&paths, model.dim_noise(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,j,x0,sign0");
        assert_eq!(lines.len(), 1 + 3 * 3);
    }
}
