//! Command-line front end. Every subcommand reads one JSON problem file
//! (except `check`), writes one JSON report, and exits with:
//!
//! * `0` — the computation finished (for `check`: all probes passed),
//! * `1` — a domain failure (divergence, infeasibility, non-Markov input,
//!   inadmissible values),
//! * `2` — a malformed input file or bad usage.

mod check;
mod report;
mod spec;

pub use check::{run_battery, CheckResults, CheckRow};
pub use report::{digest_bytes, Num, Report, REPORT_VERSION};
pub use spec::{load, ProblemSpec};

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::block::DIVERGENCE_THRESHOLD;
use crate::conditioning::{cond_expect, cond_expect_block};
use crate::entropy::{
    default_block_w, dual_maximize, rel_entropy, rel_entropy_w, rel_entropy_w_block, WFunction,
};
use crate::error::MeasureError;
use crate::extnn::ExtNonNeg;
use crate::pathspace::{
    check_markov, check_markov_at, markov_factorization, markov_factorization_block,
    state_label_at, MARKOV_TOL,
};
use crate::schrodinger::{solve_bridge, SinkhornOptions};

#[derive(Debug)]
pub enum CliError {
    /// Malformed input or usage; exit code 2.
    Schema(String),
    /// A well-formed problem the library rejects; exit code 1.
    Domain(MeasureError),
}

impl From<MeasureError> for CliError {
    fn from(err: MeasureError) -> CliError {
        CliError::Domain(err)
    }
}

#[derive(Parser)]
#[command(
    name = "pathmeasure",
    version,
    about = "Measures on discrete path spaces: entropy, conditioning, \
             Markov diagnostics, and entropic bridges"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Convergence tolerance (entropy dual, bridge fitting).
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    /// Iteration budget for iterative solvers.
    #[arg(long, global = true, default_value_t = 100_000)]
    max_iters: usize,
    /// Truncation depth for block sequences.
    #[arg(long, global = true, default_value_t = crate::block::DEFAULT_TRUNCATION_DEPTH)]
    depth: usize,
    /// Partial-sum divergence threshold for block conditioning.
    #[arg(long, global = true, default_value_t = DIVERGENCE_THRESHOLD)]
    threshold: f64,
    /// Seed for the `check` battery.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Relative entropy of `measure` against `reference` or `blocks`.
    Entropy { input: PathBuf },
    /// Conditional expectation of `function` given `map`.
    Condition { input: PathBuf },
    /// Markov diagnostics for a path measure.
    Markov { input: PathBuf },
    /// Conditional factorization of past and future observables.
    Factorize { input: PathBuf },
    /// Entropic bridge between two endpoint laws.
    Bridge { input: PathBuf },
    /// Seeded internal-consistency battery.
    Check,
}

struct Context {
    tol: f64,
    max_iters: usize,
    depth: usize,
    threshold: f64,
    seed: u64,
}

impl Context {
    fn resolve(cli: &Cli) -> Result<Context, String> {
        if !cli.tol.is_finite() || cli.tol <= 0.0 {
            return Err(format!("--tol must be positive and finite, got {}", cli.tol));
        }
        if cli.max_iters == 0 {
            return Err("--max-iters must be at least 1".into());
        }
        if cli.depth == 0 {
            return Err("--depth must be at least 1".into());
        }
        if !cli.threshold.is_finite() || cli.threshold <= 0.0 {
            return Err(format!(
                "--threshold must be positive and finite, got {}",
                cli.threshold
            ));
        }
        Ok(Context {
            tol: cli.tol,
            max_iters: cli.max_iters,
            depth: cli.depth,
            threshold: cli.threshold,
            seed: cli.seed,
        })
    }

    fn options(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("tol".to_string(), format!("{:e}", self.tol)),
            ("max_iters".to_string(), self.max_iters.to_string()),
            ("depth".to_string(), self.depth.to_string()),
            ("threshold".to_string(), format!("{:e}", self.threshold)),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let ctx = match Context::resolve(&cli) {
        Ok(ctx) => ctx,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let outcome = match &cli.command {
        Command::Entropy { input } => cmd_entropy(input, &ctx),
        Command::Condition { input } => cmd_condition(input, &ctx),
        Command::Markov { input } => cmd_markov(input, &ctx),
        Command::Factorize { input } => cmd_factorize(input, &ctx),
        Command::Bridge { input } => cmd_bridge(input, &ctx),
        Command::Check => cmd_check(&ctx),
    };
    match outcome {
        Ok((rendered, code)) => {
            if let Some(path) = &cli.output {
                if let Err(e) = std::fs::write(path, &rendered) {
                    eprintln!("error: {}: {e}", path.display());
                    return 2;
                }
            } else {
                print!("{rendered}");
            }
            code
        }
        Err(CliError::Schema(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Domain(err)) => {
            eprintln!("error: {err}");
            1
        }
    }
}

type CommandOutcome = Result<(String, i32), CliError>;

#[derive(Serialize)]
struct TiltedResults {
    entropy: Num,
    normalizer: Num,
    residual: Num,
}

#[derive(Serialize)]
struct DualResults {
    value: Num,
    gap: Num,
    iterations: usize,
}

#[derive(Serialize)]
struct EntropyResults {
    route: &'static str,
    entropy: Num,
    finite: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    tilted: Option<TiltedResults>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dual: Option<DualResults>,
}

fn cmd_entropy(input: &PathBuf, ctx: &Context) -> CommandOutcome {
    let (spec, digest) = load(input)?;
    let space = spec.space()?;
    let p = spec.measure_on(&space)?;
    if spec.blocks.is_some() && spec.reference.is_some() {
        return Err(CliError::Schema(
            "give either `reference` or `blocks`, not both".into(),
        ));
    }
    let results = if spec.blocks.is_some() {
        if spec.dual.unwrap_or(false) {
            return Err(CliError::Schema(
                "`dual` needs a finite `reference`".into(),
            ));
        }
        let blocks = spec.block_measure(&space)?.with_depth(ctx.depth)?;
        let h = match spec.w_on(&space)? {
            Some(w) => {
                let lookup = space.clone();
                rel_entropy_w_block(&p, &blocks, move |label| {
                    w[lookup.index_of(label).expect("blocks live on `space`")]
                })?
            }
            None => {
                let table: std::collections::HashMap<String, f64> =
                    default_block_w(&blocks).into_iter().collect();
                rel_entropy_w_block(&p, &blocks, move |label| {
                    table.get(label).copied().unwrap_or(0.0)
                })?
            }
        };
        EntropyResults {
            route: "block",
            entropy: h.into(),
            finite: h.is_finite(),
            tilted: None,
            dual: None,
        }
    } else {
        let r = spec.reference_on(&space)?;
        let h = rel_entropy(&p, &r)?;
        let tilted = match spec.w_on(&space)? {
            Some(w) => {
                let wf = WFunction::new(space.clone(), w)?;
                let (_, z) = wf.tilt(&r)?;
                let h_w = rel_entropy_w(&p, &r, &wf)?;
                Some(TiltedResults {
                    entropy: h_w.into(),
                    normalizer: Num(z),
                    residual: Num(h.abs_diff(h_w)),
                })
            }
            None => None,
        };
        let dual = if spec.dual.unwrap_or(false) {
            let solution = dual_maximize(&p, &r, ctx.max_iters, ctx.tol)?;
            Some(DualResults {
                value: Num(solution.value),
                gap: Num(solution.gap),
                iterations: solution.iterations,
            })
        } else {
            None
        };
        EntropyResults {
            route: "finite",
            entropy: h.into(),
            finite: h.is_finite(),
            tilted,
            dual,
        }
    };
    let report = Report::new("entropy", digest, ctx.options(), results);
    Ok((report.render(), 0))
}

#[derive(Serialize)]
struct ConditionRow {
    label: String,
    /// Absent (null) when the fiber carries no mass.
    value: Option<Num>,
    mass: Num,
}

#[derive(Serialize)]
struct ConditionResults {
    route: &'static str,
    rows: Vec<ConditionRow>,
}

fn cmd_condition(input: &PathBuf, ctx: &Context) -> CommandOutcome {
    let (spec, digest) = load(input)?;
    let space = spec.space()?;
    let map = spec.map_on(&space)?;
    let f = spec.function_on(&space)?;
    if spec.blocks.is_some() && spec.measure.is_some() {
        return Err(CliError::Schema(
            "give either `measure` or `blocks`, not both".into(),
        ));
    }
    let results = if spec.blocks.is_some() {
        let blocks = spec.block_measure(&space)?.with_depth(ctx.depth)?;
        let phi = {
            let space = space.clone();
            let map = map.clone();
            move |label: &str| {
                let i = space.index_of(label).expect("blocks live on `space`");
                map.target().label(map.apply(i)).to_string()
            }
        };
        let integrand = {
            let space = space.clone();
            let f = f.clone();
            move |label: &str| f[space.index_of(label).expect("blocks live on `space`")]
        };
        let cond = cond_expect_block(&blocks, phi.clone(), integrand, ctx.threshold)?;
        let image = blocks.pushforward(phi).truncate();
        let rows = cond
            .space()
            .labels()
            .iter()
            .enumerate()
            .map(|(z, label)| ConditionRow {
                label: label.clone(),
                value: cond.value(z).map(Num),
                mass: Num(image.weight_of(label).unwrap_or(0.0)),
            })
            .collect();
        ConditionResults {
            route: "block",
            rows,
        }
    } else {
        let mu = spec.measure_on(&space)?;
        let cond = cond_expect(&mu, &map, &f)?;
        let image = mu.pushforward(&map)?;
        let rows = map
            .target()
            .labels()
            .iter()
            .enumerate()
            .map(|(z, label)| ConditionRow {
                label: label.clone(),
                value: cond.value(z).map(Num),
                mass: Num(image.weight(z)),
            })
            .collect();
        ConditionResults {
            route: "finite",
            rows,
        }
    };
    let report = Report::new("condition", digest, ctx.options(), results);
    Ok((report.render(), 0))
}

#[derive(Serialize)]
struct MarkovResults {
    times: Vec<usize>,
    deviations: Vec<Num>,
    max_deviation: Num,
    tolerance: Num,
    is_markov: bool,
}

#[derive(Serialize)]
struct MarkovAtResults {
    time: usize,
    deviation: Num,
    tolerance: Num,
    is_markov: bool,
}

fn cmd_markov(input: &PathBuf, ctx: &Context) -> CommandOutcome {
    let (spec, digest) = load(input)?;
    let pm = spec.path_measure()?;
    let rendered = match spec.time {
        Some(t) => {
            let deviation = check_markov_at(&pm, t)?;
            let results = MarkovAtResults {
                time: t,
                deviation: Num(deviation),
                tolerance: Num(MARKOV_TOL),
                is_markov: deviation <= MARKOV_TOL,
            };
            Report::new("markov", digest, ctx.options(), results).render()
        }
        None => {
            let outcome = check_markov(&pm);
            let results = MarkovResults {
                times: pm.grid().times().collect(),
                deviations: outcome.deviations.iter().map(|&d| Num(d)).collect(),
                max_deviation: Num(outcome.max_deviation),
                tolerance: Num(MARKOV_TOL),
                is_markov: outcome.is_markov,
            };
            Report::new("markov", digest, ctx.options(), results).render()
        }
    };
    Ok((rendered, 0))
}

#[derive(Serialize)]
struct FactorRowOut {
    state: String,
    lhs: Num,
    e_alpha: Num,
    e_beta: Num,
    rhs: Num,
    deviation: Num,
}

#[derive(Serialize)]
struct FactorizeResults {
    route: &'static str,
    time: usize,
    rows: Vec<FactorRowOut>,
    max_deviation: Num,
}

#[derive(Serialize)]
struct BlockFactorRowOut {
    state: String,
    lhs: Num,
    e_alpha: Num,
    e_beta: Num,
    guarded_rhs: Num,
    guard_tripped: bool,
    deviation: Num,
}

#[derive(Serialize)]
struct BlockFactorizeResults {
    route: &'static str,
    time: usize,
    rows: Vec<BlockFactorRowOut>,
    max_deviation: Num,
}

fn cmd_factorize(input: &PathBuf, ctx: &Context) -> CommandOutcome {
    let (spec, digest) = load(input)?;
    let factorize = spec.factorize_spec()?;
    let rendered = if spec.blocks.is_some() {
        let states = spec.space()?;
        let blocks = spec.block_paths(&states, ctx.depth)?;
        let steps = blocks.grid().steps();
        factorize.alpha.checked(&states, steps, "alpha")?;
        factorize.beta.checked(&states, steps, "beta")?;
        factorize.alpha.nonneg("alpha")?;
        factorize.beta.nonneg("beta")?;
        let on_labels = |values: Vec<f64>, coordinate: usize| {
            let states = states.clone();
            move |label: &str| {
                let state = state_label_at(label, coordinate);
                ExtNonNeg::new(values[states.index_of(state).expect("state labels")])
                    .expect("validated nonnegative")
            }
        };
        let alpha = on_labels(factorize.alpha.values.clone(), factorize.alpha.coordinate);
        let beta = on_labels(factorize.beta.values.clone(), factorize.beta.coordinate);
        let outcome =
            markov_factorization_block(&blocks, alpha, beta, factorize.t, ctx.threshold)?;
        let results = BlockFactorizeResults {
            route: "block",
            time: outcome.time,
            rows: outcome
                .rows
                .iter()
                .map(|row| BlockFactorRowOut {
                    state: row.state.clone(),
                    lhs: row.lhs.into(),
                    e_alpha: row.e_alpha.into(),
                    e_beta: row.e_beta.into(),
                    guarded_rhs: row.guarded_rhs.into(),
                    guard_tripped: row.guard_tripped,
                    deviation: Num(row.deviation),
                })
                .collect(),
            max_deviation: Num(outcome.max_deviation),
        };
        Report::new("factorize", digest, ctx.options(), results).render()
    } else {
        let pm = spec.path_measure()?;
        let steps = pm.grid().steps();
        factorize.alpha.checked(pm.states(), steps, "alpha")?;
        factorize.beta.checked(pm.states(), steps, "beta")?;
        let alpha = factorize.alpha.on_digits();
        let beta = factorize.beta.on_digits();
        let outcome = markov_factorization(&pm, alpha, beta, factorize.t)?;
        let results = FactorizeResults {
            route: "finite",
            time: outcome.time,
            rows: outcome
                .rows
                .iter()
                .map(|row| FactorRowOut {
                    state: row.state.clone(),
                    lhs: Num(row.lhs),
                    e_alpha: Num(row.e_alpha),
                    e_beta: Num(row.e_beta),
                    rhs: Num(row.rhs),
                    deviation: Num(row.deviation),
                })
                .collect(),
            max_deviation: Num(outcome.max_deviation),
        };
        Report::new("factorize", digest, ctx.options(), results).render()
    };
    Ok((rendered, 0))
}

#[derive(Serialize)]
struct BridgeResults {
    entropy: Num,
    iterations: usize,
    marginal_errors: [Num; 2],
    bridge_deviation: Num,
    conditional_term: Num,
    f: Vec<Num>,
    g: Vec<Num>,
    coupling: Vec<Vec<Num>>,
}

fn cmd_bridge(input: &PathBuf, ctx: &Context) -> CommandOutcome {
    let (spec, digest) = load(input)?;
    let reference = spec.path_measure()?;
    let (mu0, mu1) = spec.marginals_on(reference.states())?;
    let options = SinkhornOptions {
        tol: ctx.tol,
        max_iters: ctx.max_iters,
        init_g: None,
    };
    let solution = solve_bridge(&reference, &mu0, &mu1, &options)?;
    let n = reference.states().len();
    let coupling = (0..n)
        .map(|i| (0..n).map(|j| Num(solution.coupling.weight(i, j))).collect())
        .collect();
    let results = BridgeResults {
        entropy: solution.entropy.into(),
        iterations: solution.diagnostics.iterations,
        marginal_errors: [
            Num(solution.diagnostics.marginal_errors.0),
            Num(solution.diagnostics.marginal_errors.1),
        ],
        bridge_deviation: Num(solution.diagnostics.bridge_deviation),
        conditional_term: Num(solution.diagnostics.conditional_term),
        f: solution.f.iter().map(|&v| Num(v)).collect(),
        g: solution.g.iter().map(|&v| Num(v)).collect(),
        coupling,
    };
    let report = Report::new("bridge", digest, ctx.options(), results);
    Ok((report.render(), 0))
}

fn cmd_check(ctx: &Context) -> CommandOutcome {
    let results = run_battery(ctx.seed);
    let code = if results.failed == 0 { 0 } else { 1 };
    let digest = digest_bytes(format!("check:{}", ctx.seed).as_bytes());
    let report = Report::new("check", digest, ctx.options(), results);
    Ok((report.render(), code))
}
