//! Library behind the `weakcv` command-line tool: parameter schedules for
//! target accuracies, end-to-end benchmark sweeps, CSV emission, and
//! complexity-slope fitting.

use serde::{Deserialize, Serialize};
use std::time::Instant;
use weakcv::basis::BasisSpec;
use weakcv::error::{Error, Result};
use weakcv::estimator::{estimate_smc, estimate_with_cv};
use weakcv::models;
use weakcv::regression::{train, RegressionConfig, Truncation};
use weakcv::rng::rep_seed;
use weakcv::scheme::{GridSpec, Scheme};
use weakcv::stats::{ols_slope_with_ci, SlopeFit};
use weakcv::terms::{enumerate_terms, TermSet};

/// Default stability factor multiplying both sample-size power laws.
pub const DEFAULT_STABILITY_FACTOR: usize = 512;

/// Stability factor the source experiments used for the stratified variant
/// of the estimator; recorded for schedule fidelity, unused by the methods
/// implemented here.
pub const STRATIFIED_STABILITY_FACTOR: usize = 2048;

/// How the schedule picks the regression basis size `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QMode {
    /// `Q = ceil(eps^{-5/(4 kappa + 4)})` from the complexity analysis.
    Theorem,
    /// A caller-chosen size.
    Fixed(usize),
}

/// Parameter schedule for one target accuracy `epsilon`.
///
/// `kappa > 1` is the basis approximation-power exponent: the squared best
/// approximation error of the coefficient functions by the first `Q` basis
/// elements is assumed to decay like `Q^{-kappa}`. The exponents below are
/// not optimal for `kappa <= 1`, so such values are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub epsilon: f64,
    pub kappa: f64,
    /// Time steps: `ceil(eps^{-1/2})`.
    #[serde(rename = "J")]
    pub j_steps: usize,
    /// Training paths: `c_train * ceil(eps^{-5/4})`.
    #[serde(rename = "N")]
    pub n_train: usize,
    /// Testing paths: `c_test * ceil(eps^{-(5 kappa + 10)/(4 kappa + 4)})`.
    #[serde(rename = "N0")]
    pub n_test: usize,
    /// Basis size per the chosen [`QMode`].
    #[serde(rename = "Q")]
    pub q: usize,
    pub c_train: usize,
    pub c_test: usize,
}

/// `ceil` that first snaps to the nearest integer when the argument is
/// within relative 1e-9 of it. The schedule exponents often produce exact
/// powers of two, and `powf` may land a few ulps above them; a raw `ceil`
/// would then overshoot a whole integer.
fn ceil_snapped(x: f64) -> usize {
    let r = x.round();
    let snapped = if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    snapped as usize
}

impl Schedule {
    pub fn for_epsilon(
        epsilon: f64,
        kappa: f64,
        q_mode: QMode,
        factors: (usize, usize),
    ) -> Result<Schedule> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target accuracy must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(kappa > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "kappa must exceed 1 — the schedule exponents are not optimal \
                 for kappa <= 1 — got {kappa}"
            )));
        }
        let (c_train, c_test) = factors;
        if c_train == 0 || c_test == 0 {
            return Err(Error::InvalidConfig(
                "stability factors must be positive".into(),
            ));
        }
        let q = match q_mode {
            QMode::Theorem => ceil_snapped(epsilon.powf(-5.0 / (4.0 * kappa + 4.0))),
            QMode::Fixed(q) => {
                if q == 0 {
                    return Err(Error::InvalidConfig("fixed Q must be positive".into()));
                }
                q
            }
        };
        Ok(Schedule {
            epsilon,
            kappa,
            j_steps: ceil_snapped(epsilon.powf(-0.5)),
            n_train: c_train * ceil_snapped(epsilon.powf(-1.25)),
            n_test: c_test
                * ceil_snapped(epsilon.powf(-(5.0 * kappa + 10.0) / (4.0 * kappa + 4.0))),
            q,
            c_train,
            c_test,
        })
    }
}

/// Estimation methods the benchmark can sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Plain Monte Carlo.
    Smc,
    /// Regression control variate over the full term family (V-terms
    /// structurally dropped to keep the family linear in `m` memory-wise).
    RcvFull,
    /// Truncated regression control variate with calibrated clamps.
    Trcv,
}

impl Method {
    /// Label used in CSV rows; matches the estimator's `method` field.
    pub fn label(self) -> &'static str {
        match self {
            Method::Smc => "smc",
            Method::RcvFull => "rcv",
            Method::Trcv => "trcv",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim() {
            "smc" => Ok(Method::Smc),
            "rcv" | "rcv_full" | "rcv-full" => Ok(Method::RcvFull),
            "trcv" => Ok(Method::Trcv),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}'; available: smc, rcv, trcv"
            ))),
        }
    }
}

/// One benchmark CSV row: a `(method, epsilon)` cell aggregated over all its
/// repetitions. `estimate` is the mean of the per-repetition estimates,
/// `rmse` the root mean square of their deviations from the reference, and
/// `wall_time_s` the total train+test wall time across repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub scheme: String,
    pub epsilon: f64,
    #[serde(rename = "J")]
    pub j_steps: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "N")]
    pub n_train: usize,
    #[serde(rename = "N0")]
    pub n_test: usize,
    pub seed: u64,
    pub estimate: f64,
    pub rmse: f64,
    pub wall_time_s: f64,
    pub repetitions: usize,
}

/// A benchmark row plus diagnostics that do not belong in the CSV contract.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub row: BenchRow,
    /// Mean over repetitions of the per-path sample variance.
    pub var_per_path: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub model: String,
    pub scheme: Scheme,
    pub methods: Vec<Method>,
    pub eps_list: Vec<f64>,
    pub kappa: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub q_mode: QMode,
    pub stability_factors: (usize, usize),
    /// Continuous-time reference; defaults to the model's registry value.
    pub reference: Option<f64>,
    /// Ridge passed through to training (0 = plain least squares).
    pub ridge: f64,
}

impl BenchmarkConfig {
    /// Desk-scale defaults: `eps in {2^-2, 2^-3, 2^-4}`, 20 repetitions,
    /// `kappa = 1.2`, basis size from the theorem schedule.
    pub fn desk_scale(model: &str, scheme: Scheme, methods: Vec<Method>, seed: u64) -> Self {
        BenchmarkConfig {
            model: model.to_string(),
            scheme,
            methods,
            eps_list: vec![0.25, 0.125, 0.0625],
            kappa: 1.2,
            repetitions: 20,
            seed,
            q_mode: QMode::Theorem,
            stability_factors: (DEFAULT_STABILITY_FACTOR, DEFAULT_STABILITY_FACTOR),
            reference: None,
            ridge: 0.0,
        }
    }
}

/// The capped basis family the benchmark trains with. The payoff block leads
/// (`[1, f, df.., z.., z_i z_j..]`) because schedule-driven caps are small —
/// a theorem-mode `Q` of 3 to 5 at desk scale — and the payoff element and
/// its partials approximate the per-step conditional expectations far better
/// than low-degree monomials, so they are the elements worth keeping. All
/// bundled models carry analytic payoff gradients; if the cap stops before
/// the gradient block, no gradient is ever requested.
fn benchmark_basis(dim: usize, q: usize) -> BasisSpec {
    BasisSpec::quadratic_with_functional(dim)
        .with_payoff_gradient()
        .payoff_first()
        .capped(q)
}

/// Run the benchmark sweep: one row per `(epsilon, method)`. Repetition
/// seeds are derived per `(epsilon, repetition)` and shared across methods,
/// so methods see identical test paths and differ only by their control
/// variates. Everything but `wall_time_s` is bit-reproducible.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchOutcome>> {
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("benchmark needs at least one method".into()));
    }
    if config.eps_list.is_empty() {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one target accuracy".into(),
        ));
    }
    if config.repetitions < 2 {
        return Err(Error::InvalidConfig(format!(
            "benchmark needs at least 2 repetitions, got {}",
            config.repetitions
        )));
    }
    let (model, functional) = models::by_name(&config.model)?;
    let reference = match config.reference {
        Some(r) if r.is_finite() => r,
        Some(r) => {
            return Err(Error::InvalidConfig(format!(
                "reference value must be finite, got {r}"
            )))
        }
        None => models::reference_value(&config.model)?.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "model '{}' has no known reference value; pass one explicitly",
                config.model
            ))
        })?,
    };

    let mut outcomes = Vec::new();
    for (ei, &eps) in config.eps_list.iter().enumerate() {
        let schedule =
            Schedule::for_epsilon(eps, config.kappa, config.q_mode, config.stability_factors)?;
        let grid = GridSpec::new(model.horizon(), schedule.j_steps)?;
        let eps_seed = rep_seed(config.seed, ei as u64);
        for &method in &config.methods {
            let mut sq_err = 0.0;
            let mut mean_est = 0.0;
            let mut mean_var = 0.0;
            let mut wall = 0.0;
            let mut q_used = 0usize;
            let mut n_train_used = 0usize;
            for r in 0..config.repetitions {
                let run_seed = rep_seed(eps_seed, r as u64);
                let t0 = Instant::now();
                let report = match method {
                    Method::Smc => estimate_smc(
                        &model,
                        &functional,
                        config.scheme,
                        grid,
                        schedule.n_test,
                        run_seed,
                    )?,
                    Method::RcvFull | Method::Trcv => {
                        let (set, drop_v, truncation) = match method {
                            Method::RcvFull => (TermSet::Full, true, Truncation::Off),
                            _ => (TermSet::Truncated, false, Truncation::On { a_tilde: None }),
                        };
                        let terms =
                            enumerate_terms(config.scheme, model.dim_noise(), set, drop_v);
                        let rc = RegressionConfig {
                            basis: Some(benchmark_basis(model.dim_state(), schedule.q)),
                            ridge: config.ridge,
                            truncation,
                            standardize: true,
                        };
                        let table = train(
                            &model,
                            &functional,
                            config.scheme,
                            grid,
                            &terms,
                            schedule.n_train,
                            run_seed,
                            &rc,
                        )?;
                        estimate_with_cv(&model, &table, schedule.n_test, run_seed)?
                    }
                };
                wall += t0.elapsed().as_secs_f64();
                let dev = report.estimate - reference;
                sq_err += dev * dev;
                mean_est += report.estimate;
                mean_var += report.var_per_path;
                q_used = report.basis_size;
                n_train_used = report.n_train;
            }
            let reps = config.repetitions as f64;
            outcomes.push(BenchOutcome {
                row: BenchRow {
                    method: method.label().to_string(),
                    scheme: config.scheme.tag().to_string(),
                    epsilon: eps,
                    j_steps: schedule.j_steps,
                    q: q_used,
                    n_train: n_train_used,
                    n_test: schedule.n_test,
                    seed: config.seed,
                    estimate: mean_est / reps,
                    rmse: (sq_err / reps).sqrt(),
                    wall_time_s: wall,
                    repetitions: config.repetitions,
                },
                var_per_path: mean_var / reps,
            });
        }
    }
    Ok(outcomes)
}

/// Exact CSV header for [`BenchRow`] files.
pub const BENCH_CSV_HEADER: &str =
    "method,scheme,epsilon,J,Q,N,N0,seed,estimate,rmse,wall_time_s,repetitions";

pub fn write_rows_csv<W: std::io::Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Serialisation(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Serialisation(e.to_string()))?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(r: R) -> Result<Vec<BenchRow>> {
    let mut reader = csv::Reader::from_reader(r);
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::Serialisation(e.to_string())))
        .collect()
}

/// OLS fit of `log wall_time_s` against `log rmse` over the rows of one
/// method: the complexity slope. Needs at least three rows; invariant to row
/// order, and a time-unit rescale only shifts the intercept.
pub fn fit_complexity_slope(rows: &[BenchRow], method: &str) -> Result<SlopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in rows.iter().filter(|r| r.method == method) {
        if !(row.rmse > 0.0) || !(row.wall_time_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "complexity fit needs positive rmse and wall time; row at \
                 epsilon {} has rmse {} and wall time {}",
                row.epsilon, row.rmse, row.wall_time_s
            )));
        }
        xs.push(row.rmse.ln());
        ys.push(row.wall_time_s.ln());
    }
    if xs.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "complexity fit needs at least 3 rows for method '{method}', found {}",
            xs.len()
        )));
    }
    Ok(ols_slope_with_ci(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_match_the_frozen_desk_scale_values() {
        let factors = (512, 512);
        let cases = [
            (0.25, 2usize, 3072usize, 6656usize),
            (0.125, 3, 7168, 22528),
            (0.0625, 4, 16384, 79360),
        ];
        for (eps, j, n, n0) in cases {
            let s = Schedule::for_epsilon(eps, 1.2, QMode::Fixed(22), factors).unwrap();
            assert_eq!((s.j_steps, s.n_train, s.n_test), (j, n, n0), "eps {eps}");
            assert_eq!(s.q, 22);
        }
        // Theorem-mode basis sizes at kappa = 1.2.
        let qs: Vec<usize> = [0.25, 0.125, 0.0625]
            .iter()
            .map(|&e| {
                Schedule::for_epsilon(e, 1.2, QMode::Theorem, factors)
                    .unwrap()
                    .q
            })
            .collect();
        assert_eq!(qs, vec![3, 4, 5]);
    }

    #[test]
    fn schedule_rejects_invalid_regions() {
        assert!(Schedule::for_epsilon(0.25, 1.0, QMode::Theorem, (512, 512)).is_err());
        assert!(Schedule::for_epsilon(0.25, 0.5, QMode::Theorem, (512, 512)).is_err());
        assert!(Schedule::for_epsilon(1.0, 1.2, QMode::Theorem, (512, 512)).is_err());
        assert!(Schedule::for_epsilon(0.0, 1.2, QMode::Theorem, (512, 512)).is_err());
        assert!(Schedule::for_epsilon(-0.1, 1.2, QMode::Theorem, (512, 512)).is_err());
        assert!(Schedule::for_epsilon(0.25, 1.2, QMode::Fixed(0), (512, 512)).is_err());
        assert!(Schedule::for_epsilon(0.25, 1.2, QMode::Theorem, (0, 512)).is_err());
    }

    #[test]
    fn schedules_are_monotone_in_accuracy() {
        let mut prev: Option<Schedule> = None;
        for &eps in &[0.5, 0.25, 0.125, 0.0625, 0.03125] {
            let s = Schedule::for_epsilon(eps, 1.2, QMode::Theorem, (512, 512)).unwrap();
            if let Some(p) = prev {
                assert!(s.j_steps >= p.j_steps);
                assert!(s.n_train >= p.n_train);
                assert!(s.n_test >= p.n_test);
                assert!(s.q >= p.q);
            }
            prev = Some(s);
        }
    }

    fn sample_rows() -> Vec<BenchRow> {
        [(0.25, 0.08), (0.125, 0.04), (0.0625, 0.02)]
            .iter()
            .map(|&(eps, rmse)| BenchRow {
                method: "smc".into(),
                scheme: "order2".into(),
                epsilon: eps,
                j_steps: 2,
                q: 0,
                n_train: 0,
                n_test: 6656,
                seed: 7,
                estimate: 0.36,
                rmse,
                wall_time_s: rmse_to_time(rmse),
                repetitions: 20,
            })
            .collect()
    }

    fn rmse_to_time(rmse: f64) -> f64 {
        rmse.powi(-2)
    }

    #[test]
    fn csv_rows_round_trip_with_the_exact_header() {
        let rows = sample_rows();
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCH_CSV_HEADER);
        let back = read_rows_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn synthetic_complexity_slope_is_exact() {
        let fit = fit_complexity_slope(&sample_rows(), "smc").unwrap();
        assert!((fit.slope - (-2.0)).abs() < 1e-9, "slope {}", fit.slope);
    }

    #[test]
    fn slope_is_order_invariant_and_unit_covariant() {
        let rows = sample_rows();
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = fit_complexity_slope(&rows, "smc").unwrap();
        let b = fit_complexity_slope(&reversed, "smc").unwrap();
        assert_eq!(a.slope.to_bits(), b.slope.to_bits());
        let mut rescaled = rows.clone();
        for r in &mut rescaled {
            r.wall_time_s *= 1000.0; // seconds -> milliseconds
        }
        let c = fit_complexity_slope(&rescaled, "smc").unwrap();
        assert!((a.slope - c.slope).abs() < 1e-12);
        assert!((c.intercept - a.intercept - 1000f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn slope_needs_three_positive_rows() {
        let rows = sample_rows();
        assert!(fit_complexity_slope(&rows[..2], "smc").is_err());
        assert!(fit_complexity_slope(&rows, "trcv").is_err());
        let mut bad = rows.clone();
        bad[0].rmse = 0.0;
        assert!(fit_complexity_slope(&bad, "smc").is_err());
    }

    #[test]
    fn method_labels_parse_and_print() {
        assert_eq!(Method::parse("smc").unwrap(), Method::Smc);
        assert_eq!(Method::parse("rcv").unwrap(), Method::RcvFull);
        assert_eq!(Method::parse("rcv_full").unwrap(), Method::RcvFull);
        assert_eq!(Method::parse("trcv").unwrap(), Method::Trcv);
        assert!(Method::parse("mlmc").is_err());
        assert_eq!(Method::Trcv.label(), "trcv");
    }

    #[test]
    fn smoke_benchmark_produces_one_finite_row() {
        let mut config = BenchmarkConfig::desk_scale(
            "const2d",
            Scheme::SecondOrder,
            vec![Method::Smc],
            99,
        );
        config.eps_list = vec![0.25];
        config.repetitions = 2;
        let outcomes = run_benchmark(&config).unwrap();
        assert_eq!(outcomes.len(), 1);
        let row = &outcomes[0].row;
        assert_eq!(row.method, "smc");
        assert_eq!(row.j_steps, 2);
        assert_eq!(row.n_test, 6656);
        assert_eq!(row.n_train, 0);
        assert_eq!(row.q, 0);
        assert!(row.rmse.is_finite() && row.rmse > 0.0);
        assert!(row.wall_time_s > 0.0);
    }

    #[test]
    fn benchmark_control_variate_cuts_variance_on_the_lattice_toy() {
        let mut config = BenchmarkConfig::desk_scale(
            "const2d",
            Scheme::SecondOrder,
            vec![Method::Smc, Method::Trcv],
            5,
        );
        config.eps_list = vec![0.25];
        config.repetitions = 2;
        let outcomes = run_benchmark(&config).unwrap();
        assert_eq!(outcomes.len(), 2);
        let smc = &outcomes[0];
        let trcv = &outcomes[1];
        assert_eq!(smc.row.method, "smc");
        assert_eq!(trcv.row.method, "trcv");
        assert!(trcv.var_per_path < 0.5 * smc.var_per_path);
        assert_eq!(trcv.row.n_train, 3072);
        assert!(trcv.row.q >= 1);
    }

    #[test]
    fn benchmark_estimates_are_reproducible() {
        let mut config = BenchmarkConfig::desk_scale(
            "const2d",
            Scheme::SecondOrder,
            vec![Method::Smc],
            41,
        );
        config.eps_list = vec![0.25];
        config.repetitions = 2;
        let a = run_benchmark(&config).unwrap();
        let b = run_benchmark(&config).unwrap();
        assert_eq!(a[0].row.estimate.to_bits(), b[0].row.estimate.to_bits());
        assert_eq!(a[0].row.rmse.to_bits(), b[0].row.rmse.to_bits());
    }

    #[test]
    fn benchmark_rejects_degenerate_configs() {
        let base = BenchmarkConfig::desk_scale("const2d", Scheme::SecondOrder, vec![], 1);
        assert!(run_benchmark(&base).is_err());
        let mut one_rep =
            BenchmarkConfig::desk_scale("const2d", Scheme::SecondOrder, vec![Method::Smc], 1);
        one_rep.repetitions = 1;
        assert!(run_benchmark(&one_rep).is_err());
        let no_reference =
            BenchmarkConfig::desk_scale("toy1d", Scheme::SecondOrder, vec![Method::Smc], 1);
        assert!(run_benchmark(&no_reference).is_err());
        let mut no_eps =
            BenchmarkConfig::desk_scale("const2d", Scheme::SecondOrder, vec![Method::Smc], 1);
        no_eps.eps_list.clear();
        assert!(run_benchmark(&no_eps).is_err());
    }
}
