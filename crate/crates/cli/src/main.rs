//! `weakcv` — Monte Carlo estimation of `E f(X_T)` for weak SDE
//! discretisations, with regression-fitted martingale control variates and
//! an exact-enumeration oracle for validation.
//!
//! Exit codes: 0 success; 2 configuration or I/O problem; 3 numerical
//! failure (singular regression, non-convergent quadrature, non-finite
//! values); 4 enumeration work budget exceeded.

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use weakcv::basis::BasisSpec;
use weakcv::error::{Error, Result};
use weakcv::estimator::{estimate_smc, estimate_with_cv, rmse_against_reference};
use weakcv::models;
use weakcv::oracle::{EnumerationBudget, ExactOracle};
use weakcv::regression::{train, RegressionConfig, Truncation};
use weakcv::rng::{domain_seed, SeedDomain};
use weakcv::scheme::{simulate_paths, write_paths_csv, GridSpec, Scheme};
use weakcv::table::CoefficientTable;
use weakcv::terms::{enumerate_terms, TermSet};
use weakcv_cli::{
    fit_complexity_slope, read_rows_csv, run_benchmark, write_rows_csv, BenchmarkConfig, Method,
    QMode,
};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    /// Weak Euler (order 1)
    Euler,
    /// Simplified second-order weak Taylor
    Order2,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Order2 => Scheme::SecondOrder,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TermSetArg {
    /// Every martingale term of the scheme's one-step family
    Full,
    /// Only terms of weight class at most the scheme order
    Truncated,
}

impl From<TermSetArg> for TermSet {
    fn from(s: TermSetArg) -> TermSet {
        match s {
            TermSetArg::Full => TermSet::Full,
            TermSetArg::Truncated => TermSet::Truncated,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum QModeArg {
    /// Basis size from the complexity analysis: ceil(eps^{-5/(4 kappa + 4)})
    Theorem,
    /// Caller-chosen basis size (requires --q)
    Fixed,
}

/// Extra knobs accepted via `--json-config`; command-line flags win over
/// file values, which win over the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonConfig {
    /// Ridge added to the regression normal equations.
    ridge: Option<f64>,
    /// Polynomial degree of the regression basis (1 or 2).
    basis_degree: Option<u8>,
    /// Include the payoff as a basis element.
    basis_functional: Option<bool>,
    /// Append the payoff's partial derivatives as basis elements (requires a
    /// model whose payoff carries an analytic gradient).
    basis_gradient: Option<bool>,
    /// Put the payoff block ahead of the monomials so a `basis_cap` keeps it.
    basis_payoff_first: Option<bool>,
    /// Keep only the first `basis_cap` elements of the basis.
    basis_cap: Option<usize>,
    /// Clamp fitted coefficients (truncated regression control variate).
    truncate: Option<bool>,
    /// Clamp scale; omitted means calibrate from the training responses.
    a_tilde: Option<f64>,
    /// Work budget for exact enumeration.
    budget: Option<u64>,
}

#[derive(Parser)]
#[command(
    name = "weakcv",
    version,
    about = "Monte Carlo estimation of E f(X_T) for weak SDE discretisations, \
             with regression-fitted martingale control variates"
)]
struct Cli {
    /// Worker threads for path generation (set once, before any work)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with extra knobs (ridge, basis_degree, basis_functional,
    /// basis_cap, truncate, a_tilde, budget)
    #[arg(long, global = true, value_name = "PATH")]
    json_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate discretised paths and write them as CSV
    Simulate {
        /// Model name (try --model help to list them)
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SchemeArg::Order2)]
        scheme: SchemeArg,
        /// Number of time steps J
        #[arg(long, default_value_t = 4)]
        steps: usize,
        /// Number of paths
        #[arg(long, default_value_t = 8)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Fit control-variate coefficients by least squares and save the table
    Train {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SchemeArg::Order2)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        /// Which martingale terms to fit
        #[arg(long, value_enum, default_value_t = TermSetArg::Truncated)]
        term_set: TermSetArg,
        /// Drop the antisymmetric V terms from the family
        #[arg(long)]
        drop_v: bool,
        /// Training sample size N
        #[arg(long, default_value_t = 4096)]
        n_train: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ridge added to the normal equations (0 = plain least squares)
        #[arg(long)]
        ridge: Option<f64>,
        /// Clamp the fitted coefficients with calibrated thresholds
        #[arg(long)]
        truncate: bool,
        /// Where to write the coefficient table (JSON)
        #[arg(long)]
        out: PathBuf,
    },

    /// Estimate E f(X_T) by Monte Carlo, optionally with a trained table
    Estimate {
        /// Model name (taken from the table when --table is given)
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value_t = SchemeArg::Order2)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        /// Coefficient table (JSON) to subtract as a control variate
        #[arg(long)]
        table: Option<PathBuf>,
        /// Testing sample size N0
        #[arg(long, default_value_t = 4096)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reference expectation for bias/rmse (defaults to the model's
        /// known value where one exists)
        #[arg(long)]
        reference: Option<f64>,
        /// Output file for the JSON report (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Exact enumeration: expectation and the pathwise zero-variance identity
    OracleCheck {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 2)]
        steps: usize,
        /// Term family; the pathwise identity needs the full one
        #[arg(long, value_enum, default_value_t = TermSetArg::Full)]
        term_set: TermSetArg,
        #[arg(long)]
        drop_v: bool,
        /// Sampled paths probed for the pathwise identity
        #[arg(long, default_value_t = 64)]
        probes: usize,
        /// Work budget for the enumeration
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Sweep target accuracies and write benchmark rows as CSV
    Benchmark {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SchemeArg::Order2)]
        scheme: SchemeArg,
        /// Comma-separated subset of smc, rcv, trcv
        #[arg(long, default_value = "smc,trcv", value_delimiter = ',')]
        methods: Vec<String>,
        /// Comma-separated target accuracies in (0, 1)
        #[arg(long, default_value = "0.25,0.125,0.0625", value_delimiter = ',')]
        eps_list: Vec<f64>,
        /// Basis approximation-power exponent (must exceed 1)
        #[arg(long, default_value_t = 1.2)]
        kappa: f64,
        /// Repetitions per (method, accuracy) cell
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, value_enum, default_value_t = QModeArg::Theorem)]
        q_mode: QModeArg,
        /// Basis size for --q-mode fixed
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reference expectation (defaults to the model's known value)
        #[arg(long)]
        reference: Option<f64>,
        /// Output CSV file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Fit the log-log complexity slope from a benchmark CSV
    Slope {
        /// Benchmark CSV produced by the benchmark subcommand
        #[arg(long)]
        csv: PathBuf,
        /// Method column value to fit
        #[arg(long, default_value = "smc")]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(msg) = weakcv::parallel::set_thread_count(n) {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    }
    let json_config = match load_json_config(cli.json_config.as_deref()) {
        Ok(jc) => jc,
        Err(e) => return fail(&e),
    };
    match dispatch(cli.command, &json_config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let code = match e {
        Error::BudgetExceeded { .. } => 4,
        Error::SingularGram { .. }
        | Error::QuadratureNoConvergence { .. }
        | Error::NonFinite { .. } => 3,
        Error::InvalidModel(_)
        | Error::InvalidConfig(_)
        | Error::TableMismatch(_)
        | Error::Serialisation(_) => 2,
    };
    ExitCode::from(code)
}

fn load_json_config(path: Option<&Path>) -> Result<JsonConfig> {
    match path {
        None => Ok(JsonConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| {
                Error::InvalidConfig(format!("bad json config {}: {e}", p.display()))
            })
        }
    }
}

/// Open `--out` for writing, or stdout when it is omitted.
fn out_writer(out: Option<&Path>) -> Result<Box<dyn std::io::Write>> {
    match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| {
                Error::Serialisation(format!("cannot create {}: {e}", p.display()))
            })?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn basis_from(jc: &JsonConfig, dim: usize) -> Result<Option<BasisSpec>> {
    if jc.basis_degree.is_none()
        && jc.basis_functional.is_none()
        && jc.basis_gradient.is_none()
        && jc.basis_payoff_first.is_none()
        && jc.basis_cap.is_none()
    {
        return Ok(None); // library default: quadratic plus the payoff
    }
    let spec = BasisSpec {
        dim,
        degree: jc.basis_degree.unwrap_or(2),
        include_functional: jc.basis_functional.unwrap_or(true),
        include_gradient: jc.basis_gradient.unwrap_or(false),
        functional_first: jc.basis_payoff_first.unwrap_or(false),
        cap: jc.basis_cap,
    };
    spec.validate()?;
    Ok(Some(spec))
}

fn dispatch(command: Command, jc: &JsonConfig) -> Result<()> {
    match command {
        Command::Simulate {
            model,
            scheme,
            steps,
            paths,
            seed,
            out,
        } => {
            let (model, _functional) = models::by_name(&model)?;
            let grid = GridSpec::new(model.horizon(), steps)?;
            let sims = simulate_paths(&model, scheme.into(), grid, paths, seed)?;
            let writer = out_writer(out.as_deref())?;
            write_paths_csv(&sims, model.dim_noise(), writer)
                .map_err(|e| Error::Serialisation(format!("writing paths: {e}")))?;
            Ok(())
        }

        Command::Train {
            model,
            scheme,
            steps,
            term_set,
            drop_v,
            n_train,
            seed,
            ridge,
            truncate,
            out,
        } => {
            let (model, functional) = models::by_name(&model)?;
            let scheme: Scheme = scheme.into();
            let grid = GridSpec::new(model.horizon(), steps)?;
            let terms = enumerate_terms(scheme, model.dim_noise(), term_set.into(), drop_v);
            let truncation = if truncate || jc.truncate == Some(true) {
                Truncation::On { a_tilde: jc.a_tilde }
            } else {
                Truncation::Off
            };
            let config = RegressionConfig {
                basis: basis_from(jc, model.dim_state())?,
                ridge: ridge.or(jc.ridge).unwrap_or(0.0),
                truncation,
                standardize: true,
            };
            let table = train(
                &model,
                &functional,
                scheme,
                grid,
                &terms,
                n_train,
                seed,
                &config,
            )?;
            let text = table.to_json()?;
            fs::write(&out, text).map_err(|e| {
                Error::Serialisation(format!("cannot write {}: {e}", out.display()))
            })?;
            println!(
                "wrote {} ({} terms, basis size {}, {} steps, scheme {})",
                out.display(),
                table.terms().len(),
                table.basis_size(),
                table.grid().steps(),
                table.scheme()
            );
            Ok(())
        }

        Command::Estimate {
            model,
            scheme,
            steps,
            table,
            paths,
            seed,
            reference,
            out,
        } => {
            let (report, model_name) = match table {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| {
                        Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
                    })?;
                    let table = CoefficientTable::from_json(&text)?;
                    if let Some(name) = &model {
                        if name != table.model_name() {
                            return Err(Error::TableMismatch(format!(
                                "--model {} does not match the table's model '{}'",
                                name,
                                table.model_name()
                            )));
                        }
                    }
                    let name = table.model_name().to_string();
                    let (model, _) = models::by_name(&name)?;
                    (estimate_with_cv(&model, &table, paths, seed)?, name)
                }
                None => {
                    let name = model.ok_or_else(|| {
                        Error::InvalidConfig("estimate needs --model or --table".into())
                    })?;
                    let (model, functional) = models::by_name(&name)?;
                    let grid = GridSpec::new(model.horizon(), steps)?;
                    (
                        estimate_smc(&model, &functional, scheme.into(), grid, paths, seed)?,
                        name,
                    )
                }
            };
            let reference = match reference {
                Some(r) => Some(r),
                None => models::reference_value(&model_name)?,
            };
            let report = match reference {
                Some(r) => rmse_against_reference(report, r),
                None => report,
            };
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Serialisation(e.to_string()))?;
            let mut writer = out_writer(out.as_deref())?;
            writeln!(writer, "{text}").map_err(|e| Error::Serialisation(e.to_string()))?;
            Ok(())
        }

        Command::OracleCheck {
            model,
            scheme,
            steps,
            term_set,
            drop_v,
            probes,
            budget,
            seed,
            out,
        } => {
            let (model, functional) = models::by_name(&model)?;
            let scheme: Scheme = scheme.into();
            let grid = GridSpec::new(model.horizon(), steps)?;
            let set: TermSet = term_set.into();
            let terms = enumerate_terms(scheme, model.dim_noise(), set, drop_v);
            let n_terms = terms.len();
            let budget = EnumerationBudget {
                max_work: budget.or(jc.budget).unwrap_or(EnumerationBudget::default().max_work),
            };
            let oracle = Arc::new(ExactOracle::new(
                &model,
                scheme,
                grid,
                terms,
                &functional,
                budget,
            )?);
            let expectation = oracle.expectation()?;
            // With every term of the one-step family present, payoff minus
            // martingale is the expectation exactly, path by path.
            let full_family = set == TermSet::Full && !drop_v;
            let max_deviation = if full_family && probes > 0 {
                let table =
                    CoefficientTable::from_oracle(model.name(), &functional, oracle.clone());
                let paths = simulate_paths(
                    &model,
                    scheme,
                    grid,
                    probes,
                    domain_seed(seed, SeedDomain::Probe),
                )?;
                let mut max_dev = 0.0f64;
                for path in &paths {
                    let residual = functional.eval(path.terminal_state())
                        - table.control_variate(path)?
                        - expectation;
                    max_dev = max_dev.max(residual.abs());
                }
                Some(max_dev)
            } else {
                None
            };
            let summary = serde_json::json!({
                "model": model.name(),
                "scheme": scheme.tag(),
                "steps": grid.steps(),
                "terms": n_terms,
                "expectation": expectation,
                "work_used": oracle.work_used(),
                "probes": if full_family { probes } else { 0 },
                "max_pathwise_deviation": max_deviation,
                "zero_variance_family": full_family,
            });
            let mut writer = out_writer(out.as_deref())?;
            writeln!(
                writer,
                "{}",
                serde_json::to_string_pretty(&summary)
                    .map_err(|e| Error::Serialisation(e.to_string()))?
            )
            .map_err(|e| Error::Serialisation(e.to_string()))?;
            Ok(())
        }

        Command::Benchmark {
            model,
            scheme,
            methods,
            eps_list,
            kappa,
            reps,
            q_mode,
            q,
            seed,
            reference,
            out,
        } => {
            let methods = methods
                .iter()
                .map(|s| Method::parse(s))
                .collect::<Result<Vec<_>>>()?;
            let q_mode = match (q_mode, q) {
                (QModeArg::Theorem, None) => QMode::Theorem,
                (QModeArg::Theorem, Some(_)) => {
                    return Err(Error::InvalidConfig(
                        "--q only applies to --q-mode fixed".into(),
                    ))
                }
                (QModeArg::Fixed, Some(q)) => QMode::Fixed(q),
                (QModeArg::Fixed, None) => {
                    return Err(Error::InvalidConfig("--q-mode fixed needs --q".into()))
                }
            };
            let config = BenchmarkConfig {
                model,
                scheme: scheme.into(),
                methods,
                eps_list,
                kappa,
                repetitions: reps,
                seed,
                q_mode,
                stability_factors: (
                    weakcv_cli::DEFAULT_STABILITY_FACTOR,
                    weakcv_cli::DEFAULT_STABILITY_FACTOR,
                ),
                reference,
                ridge: jc.ridge.unwrap_or(0.0),
            };
            let outcomes = run_benchmark(&config)?;
            let rows: Vec<_> = outcomes.into_iter().map(|o| o.row).collect();
            let writer = out_writer(out.as_deref())?;
            write_rows_csv(&rows, writer)?;
            if let Some(p) = out {
                println!("wrote {} rows to {}", rows.len(), p.display());
            }
            Ok(())
        }

        Command::Slope { csv, method, out } => {
            let text = fs::read_to_string(&csv).map_err(|e| {
                Error::InvalidConfig(format!("cannot read {}: {e}", csv.display()))
            })?;
            let rows = read_rows_csv(text.as_bytes())?;
            let fit = fit_complexity_slope(&rows, &method)?;
            let summary = serde_json::json!({
                "method": method,
                "points": rows.iter().filter(|r| r.method == method).count(),
                "slope": fit.slope,
                "intercept": fit.intercept,
                "half_width_95": fit.half_width_95,
                "residual_sd": fit.residual_sd,
            });
            let mut writer = out_writer(out.as_deref())?;
            writeln!(
                writer,
                "{}",
                serde_json::to_string_pretty(&summary)
                    .map_err(|e| Error::Serialisation(e.to_string()))?
            )
            .map_err(|e| Error::Serialisation(e.to_string()))?;
            Ok(())
        }
    }
}
