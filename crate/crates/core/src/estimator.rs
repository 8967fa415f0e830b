//! Monte Carlo estimators — plain and control-variate corrected — plus the
//! weak-bias diagnostic built on top of them.
//!
//! Every estimator streams paths in fixed-size chunks: a path is simulated,
//! reduced to its contribution, and dropped, so memory stays flat in the
//! number of paths. Estimation draws from the seed's test stream, disjoint
//! from the training and probing streams, and two estimators called with the
//! same `(model, scheme, grid, n_paths, seed)` consume *the same paths*, so
//! their difference is exactly the sample mean of the control variate.
//!
//! Subtracting a coefficient-table martingale never biases the estimate:
//! each term has conditional mean zero given the state it is anchored at,
//! whatever the table's coefficients — only the variance depends on how
//! close the fit is.

use crate::error::{Error, Result};
use crate::model::{Functional, SdeModel};
use crate::parallel::{self, MeanVar};
use crate::regression::{self, RegressionConfig};
use crate::rng::{domain_seed, rep_seed, SeedDomain};
use crate::scheme::{simulate_range, GridSpec, Scheme};
use crate::stats::{ols_slope_with_ci, SlopeFit};
use crate::table::CoefficientTable;
use crate::terms::{enumerate_terms, TermSet};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One estimation run, in the shape the benchmark CSV and the JSON reports
/// are built from. `bias` and `rmse` are filled by
/// [`rmse_against_reference`] when a reference value is known and stay
/// `null` otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// `smc`, `rcv`, `trcv`, or `oracle-cv`.
    pub method: String,
    pub scheme: String,
    pub estimate: f64,
    /// Sample variance of the per-path values (after any control variate).
    pub var_per_path: f64,
    /// Number of paths this estimate consumed (same as `N0`).
    pub n_paths: usize,
    pub std_error: f64,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub wall_time_s: f64,
    /// Number of time steps.
    #[serde(rename = "J")]
    pub j_steps: usize,
    /// Regression basis size (0 when no regression table is involved).
    #[serde(rename = "Q")]
    pub basis_size: usize,
    /// Training-sample size behind the table (0 when none). The `N`/`N0`
    /// pair follows the schedule convention: N trains, N0 tests.
    #[serde(rename = "N")]
    pub n_train: usize,
    /// Testing-sample size; always equals `n_paths`.
    #[serde(rename = "N0")]
    pub n_test: usize,
    pub seed: u64,
}

struct StreamAcc {
    stats: MeanVar,
    error: Option<Error>,
}

impl StreamAcc {
    fn new() -> Self {
        StreamAcc {
            stats: MeanVar::default(),
            error: None,
        }
    }

    fn merge(mut self, other: StreamAcc) -> StreamAcc {
        self.stats = self.stats.merge(other.stats);
        if self.error.is_none() {
            self.error = other.error;
        }
        self
    }
}

/// Stream `n_paths` test-domain paths and accumulate `f(X_J) - M` where `M`
/// comes from `table` (`None` = plain Monte Carlo).
fn stream_estimate(
    model: &SdeModel,
    functional: &Functional,
    scheme: Scheme,
    grid: GridSpec,
    table: Option<&CoefficientTable>,
    n_paths: usize,
    seed: u64,
) -> Result<MeanVar> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("estimation needs at least one path".into()));
    }
    let ops = match scheme {
        Scheme::SecondOrder => Some(model.resolved_derivative_ops()),
        Scheme::Euler => None,
    };
    let path_seed = domain_seed(seed, SeedDomain::Test);

    let acc = parallel::map_reduce_chunks(
        n_paths,
        |range| {
            let mut acc = StreamAcc::new();
            let paths = simulate_range(model, ops.as_ref(), scheme, grid, path_seed, range);
            for p in &paths {
                if acc.error.is_some() {
                    break;
                }
                let mut y = functional.eval(p.terminal_state());
                if let Some(t) = table {
                    match t.control_variate(p) {
                        Ok(m) => y -= m,
                        Err(e) => {
                            acc.error = Some(e);
                            break;
                        }
                    }
                }
                if !y.is_finite() {
                    acc.error = Some(Error::NonFinite {
                        context: "estimation per-path values",
                    });
                    break;
                }
                acc.stats.push(y);
            }
            acc
        },
        StreamAcc::merge,
    )
    .expect("n_paths >= 1 guarantees at least one chunk");

    match acc.error {
        Some(e) => Err(e),
        None => Ok(acc.stats),
    }
}

fn report_from_stats(
    stats: &MeanVar,
    method: &str,
    scheme: Scheme,
    j_steps: usize,
    basis_size: usize,
    n_paths: usize,
    n_train: usize,
    seed: u64,
    wall_time_s: f64,
) -> EstimatorReport {
    let var = stats.variance();
    EstimatorReport {
        method: method.to_string(),
        scheme: scheme.tag().to_string(),
        estimate: stats.mean(),
        var_per_path: var,
        n_paths,
        std_error: (var / n_paths as f64).sqrt(),
        bias: None,
        rmse: None,
        wall_time_s,
        j_steps,
        basis_size,
        n_train,
        n_test: n_paths,
        seed,
    }
}

/// Plain (single-level) Monte Carlo over `n_paths` paths.
pub fn estimate_smc(
    model: &SdeModel,
    functional: &Functional,
    scheme: Scheme,
    grid: GridSpec,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    let t0 = Instant::now();
    let stats = stream_estimate(model, functional, scheme, grid, None, n_paths, seed)?;
    Ok(report_from_stats(
        &stats,
        "smc",
        scheme,
        grid.steps(),
        0,
        n_paths,
        0,
        seed,
        t0.elapsed().as_secs_f64(),
    ))
}

/// Monte Carlo with the table's martingale subtracted from every path. The
/// payoff, scheme, and grid all come from the table itself. Method label:
/// `rcv` for an unclamped regression table, `trcv` for a clamped one,
/// `oracle-cv` for exact-enumeration coefficients, and `smc` for a zero
/// table (which this reproduces bit for bit).
pub fn estimate_with_cv(
    model: &SdeModel,
    table: &CoefficientTable,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if model.name() != table.model_name() {
        return Err(Error::TableMismatch(format!(
            "table was built for model '{}', estimation asked for '{}'",
            table.model_name(),
            model.name()
        )));
    }
    let scheme = table.scheme();
    let grid = table.grid();
    let method = match table.kind_name() {
        "zero" => "smc",
        "oracle" => "oracle-cv",
        _ if table.is_clamped() => "trcv",
        _ => "rcv",
    };
    let t0 = Instant::now();
    let stats = stream_estimate(
        model,
        table.functional(),
        scheme,
        grid,
        Some(table),
        n_paths,
        seed,
    )?;
    Ok(report_from_stats(
        &stats,
        method,
        scheme,
        grid.steps(),
        table.basis_size(),
        n_paths,
        table.metadata().map_or(0, |m| m.n_train),
        seed,
        t0.elapsed().as_secs_f64(),
    ))
}

/// Fill in `bias = estimate - reference` and
/// `rmse = sqrt(bias^2 + std_error^2)`.
pub fn rmse_against_reference(mut report: EstimatorReport, reference: f64) -> EstimatorReport {
    let bias = report.estimate - reference;
    report.bias = Some(bias);
    report.rmse = Some((bias * bias + report.std_error * report.std_error).sqrt());
    report
}

/// Optional variance reduction for [`weak_bias_study`]: train a coefficient
/// table per step count and estimate with it. The martingale has exactly
/// zero mean whatever the fitted coefficients, so this sharpens the bias
/// measurement without touching what is being measured.
#[derive(Clone, Debug)]
pub struct BiasVarianceReduction {
    pub n_train: usize,
    pub term_set: TermSet,
    pub drop_v: bool,
    pub config: RegressionConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasPoint {
    pub j_steps: usize,
    pub delta: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bias: f64,
}

/// Weak-error diagnostic: estimated bias at each step count, plus the OLS
/// slope of `log |bias|` against `log delta` with its 95% half-width.
#[derive(Clone, Debug, Serialize)]
pub struct BiasStudy {
    pub scheme: String,
    pub reference: f64,
    pub points: Vec<BiasPoint>,
    pub fit: SlopeFit,
}

/// Estimate `E f(X_J)` for each `J` in `j_list` against a known `reference`
/// value of the continuous-time expectation, and fit the weak-error order.
/// Each `J` uses its own derived seed, so the points are independent.
pub fn weak_bias_study(
    model: &SdeModel,
    functional: &Functional,
    scheme: Scheme,
    j_list: &[usize],
    n_paths: usize,
    seed: u64,
    reference: f64,
    variance_reduction: Option<&BiasVarianceReduction>,
) -> Result<BiasStudy> {
    if j_list.len() < 2 {
        return Err(Error::InvalidConfig(
            "a bias study needs at least two step counts".into(),
        ));
    }
    let mut points = Vec::with_capacity(j_list.len());
    for &j_steps in j_list {
        let grid = GridSpec::new(model.horizon(), j_steps)?;
        let run_seed = rep_seed(seed, j_steps as u64);
        let report = match variance_reduction {
            Some(vr) => {
                let terms = enumerate_terms(scheme, model.dim_noise(), vr.term_set, vr.drop_v);
                let table = regression::train(
                    model,
                    functional,
                    scheme,
                    grid,
                    &terms,
                    vr.n_train,
                    run_seed,
                    &vr.config,
                )?;
                estimate_with_cv(model, &table, n_paths, run_seed)?
            }
            None => estimate_smc(model, functional, scheme, grid, n_paths, run_seed)?,
        };
        points.push(BiasPoint {
            j_steps,
            delta: grid.delta(),
            estimate: report.estimate,
            std_error: report.std_error,
            bias: report.estimate - reference,
        });
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &points {
        if p.bias.abs() > 0.0 {
            xs.push(p.delta.ln());
            ys.push(p.bias.abs().ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidConfig(
            "bias indistinguishable from zero at almost every step count; \
             no slope can be fitted"
                .into(),
        ));
    }
    let fit = ols_slope_with_ci(&xs, &ys);
    Ok(BiasStudy {
        scheme: scheme.tag().to_string(),
        reference,
        points,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::oracle::{EnumerationBudget, ExactOracle};
    use crate::terms::enumerate_terms;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn zero_table_reproduces_plain_monte_carlo_bitwise() {
        let (model, f) = models::by_name("const2d").unwrap();
        let grid = GridSpec::new(model.horizon(), 4).unwrap();
        let terms = enumerate_terms(Scheme::Euler, 2, TermSet::Truncated, false);
        let zero = CoefficientTable::zero(model.name(), &f, Scheme::Euler, grid, terms);
        let plain = estimate_smc(&model, &f, Scheme::Euler, grid, 2048, 77).unwrap();
        let via_table = estimate_with_cv(&model, &zero, 2048, 77).unwrap();
        assert_eq!(plain.estimate.to_bits(), via_table.estimate.to_bits());
        assert_eq!(plain.var_per_path.to_bits(), via_table.var_per_path.to_bits());
        assert_eq!(via_table.method, "smc");
        assert_eq!(plain.basis_size, 0);
    }

    #[test]
    fn reports_serialise_with_the_documented_keys() {
        let (model, f) = models::by_name("const1d").unwrap();
        let grid = GridSpec::new(model.horizon(), 2).unwrap();
        let report = estimate_smc(&model, &f, Scheme::Euler, grid, 256, 5).unwrap();
        let value = serde_json::to_value(rmse_against_reference(report, 0.5)).unwrap();
        let keys: BTreeSet<String> = value.as_object().unwrap().keys().cloned().collect();
        let expected: BTreeSet<String> = [
            "estimate",
            "var_per_path",
            "n_paths",
            "std_error",
            "bias",
            "rmse",
            "wall_time_s",
            "method",
            "scheme",
            "J",
            "Q",
            "N",
            "N0",
            "seed",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(keys, expected);
        assert!(value["bias"].is_f64());
        assert!(value["rmse"].is_f64());
        assert_eq!(value["n_paths"], value["N0"]);
    }

    #[test]
    fn estimation_is_deterministic() {
        let (model, f) = models::by_name("toy2d").unwrap();
        let grid = GridSpec::new(model.horizon(), 3).unwrap();
        let a = estimate_smc(&model, &f, Scheme::SecondOrder, grid, 1024, 9).unwrap();
        let b = estimate_smc(&model, &f, Scheme::SecondOrder, grid, 1024, 9).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn oracle_table_with_the_full_family_kills_all_variance() {
        let (model, f) = models::by_name("const1d").unwrap();
        let grid = GridSpec::new(model.horizon(), 3).unwrap();
        let terms = enumerate_terms(Scheme::Euler, 1, TermSet::Full, false);
        let oracle = Arc::new(
            ExactOracle::new(
                &model,
                Scheme::Euler,
                grid,
                terms,
                &f,
                EnumerationBudget::default(),
            )
            .unwrap(),
        );
        let exact = oracle.expectation().unwrap();
        let table = CoefficientTable::from_oracle(model.name(), &f, oracle);
        let report = estimate_with_cv(&model, &table, 512, 123).unwrap();
        assert_eq!(report.method, "oracle-cv");
        assert!(report.var_per_path < 1e-16, "variance {}", report.var_per_path);
        assert!((report.estimate - exact).abs() < 1e-10);
    }

    #[test]
    fn control_variate_agrees_with_plain_monte_carlo_and_cuts_variance() {
        let (model, f) = models::by_name("const2d").unwrap();
        let grid = GridSpec::new(model.horizon(), 4).unwrap();
        let terms = enumerate_terms(Scheme::SecondOrder, 2, TermSet::Truncated, false);
        let table = regression::train(
            &model,
            &f,
            Scheme::SecondOrder,
            grid,
            &terms,
            8192,
            31,
            &RegressionConfig::default(),
        )
        .unwrap();
        let plain = estimate_smc(&model, &f, Scheme::SecondOrder, grid, 8192, 31).unwrap();
        let cv = estimate_with_cv(&model, &table, 8192, 31).unwrap();
        assert_eq!(cv.method, "rcv");
        assert_eq!(cv.basis_size, 7);
        assert_eq!(cv.n_train, 8192);
        // Same seed means the same test paths: the difference is the mean of
        // the zero-mean martingale over those paths.
        let tol = 4.0 * (plain.std_error + cv.std_error);
        assert!(
            (plain.estimate - cv.estimate).abs() < tol,
            "smc {} cv {}",
            plain.estimate,
            cv.estimate
        );
        assert!(
            cv.var_per_path < 0.5 * plain.var_per_path,
            "cv {} plain {}",
            cv.var_per_path,
            plain.var_per_path
        );
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let (model, f) = models::by_name("const1d").unwrap();
        let (other, _) = models::by_name("toy1d").unwrap();
        let grid = GridSpec::new(model.horizon(), 2).unwrap();
        let terms = enumerate_terms(Scheme::Euler, 1, TermSet::Full, false);
        let zero = CoefficientTable::zero(model.name(), &f, Scheme::Euler, grid, terms);
        assert!(matches!(
            estimate_with_cv(&other, &zero, 64, 0),
            Err(Error::TableMismatch(_))
        ));
    }

    #[test]
    fn rmse_combines_bias_and_statistical_error() {
        let (model, f) = models::by_name("const1d").unwrap();
        let grid = GridSpec::new(model.horizon(), 2).unwrap();
        let report = estimate_smc(&model, &f, Scheme::Euler, grid, 512, 3).unwrap();
        let with_ref = rmse_against_reference(report.clone(), 0.25);
        let bias = with_ref.bias.unwrap();
        assert_eq!(bias, report.estimate - 0.25);
        let expected = (bias * bias + report.std_error * report.std_error).sqrt();
        assert_eq!(with_ref.rmse.unwrap(), expected);
    }

    #[test]
    fn bias_study_recovers_the_first_order_euler_rate() {
        // Constant coefficients: the Euler terminal state is x0 + mu T plus
        // a scaled sum of iid signs, so for a smooth payoff the weak error
        // is the Edgeworth kurtosis correction, exactly order delta. For
        // cos(x1 + 2 x2) with independent Brownian coordinates the
        // continuous-time value is exp(-Var/2) with Var = 1^2*1 + (2*0.5)^2.
        let (model, f) = models::by_name("const2d").unwrap();
        let reference = (-1.0f64).exp();
        let study = weak_bias_study(
            &model,
            &f,
            Scheme::Euler,
            &[2, 3, 4, 6],
            131072,
            17,
            reference,
            None,
        )
        .unwrap();
        assert_eq!(study.points.len(), 4);
        for w in study.points.windows(2) {
            assert!(
                w[0].bias.abs() > w[1].bias.abs(),
                "bias must shrink with J: {} then {}",
                w[0].bias,
                w[1].bias
            );
        }
        assert!(
            (study.fit.slope - 1.0).abs() < 0.3,
            "slope {} +- {}",
            study.fit.slope,
            study.fit.half_width_95
        );
    }

    #[test]
    fn variance_reduction_sharpens_the_bias_study_without_moving_it() {
        let (model, f) = models::by_name("const2d").unwrap();
        let reference = (-1.0f64).exp();
        let vr = BiasVarianceReduction {
            n_train: 4096,
            term_set: TermSet::Truncated,
            drop_v: false,
            config: RegressionConfig::default(),
        };
        let plain = weak_bias_study(
            &model,
            &f,
            Scheme::SecondOrder,
            &[2, 4],
            16384,
            23,
            reference,
            None,
        )
        .unwrap();
        let sharp = weak_bias_study(
            &model,
            &f,
            Scheme::SecondOrder,
            &[2, 4],
            16384,
            23,
            reference,
            Some(&vr),
        )
        .unwrap();
        for (p, s) in plain.points.iter().zip(&sharp.points) {
            assert!(
                s.std_error < 0.5 * p.std_error,
                "J={}: vr se {} plain se {}",
                p.j_steps,
                s.std_error,
                p.std_error
            );
            // Same seed, same test paths: the estimates differ by the mean
            // of a zero-mean martingale.
            let tol = 4.0 * (p.std_error + s.std_error);
            assert!(
                (p.estimate - s.estimate).abs() < tol,
                "J={}: plain {} vr {}",
                p.j_steps,
                p.estimate,
                s.estimate
            );
        }
    }

    #[test]
    fn degenerate_studies_are_rejected() {
        let (model, f) = models::by_name("const1d").unwrap();
        assert!(weak_bias_study(&model, &f, Scheme::Euler, &[4], 128, 0, 0.5, None).is_err());
        let grid = GridSpec::new(model.horizon(), 2).unwrap();
        assert!(estimate_smc(&model, &f, Scheme::Euler, grid, 0, 0).is_err());
    }
}
