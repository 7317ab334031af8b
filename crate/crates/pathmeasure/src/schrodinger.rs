//! Entropic bridge problems: minimize `H(P | R)` over path measures `P`
//! with prescribed initial and final state laws.
//!
//! For a Markov reference the problem collapses onto the endpoints: every
//! admissible `P` decomposes into its endpoint coupling and its bridge
//! kernels, the bridge part of the entropy is minimized (to zero) by
//! keeping the reference bridges, and what remains is a static problem
//! over couplings of the two marginals. Its solution has the product form
//! `pi(x, y) = f(x) R01(x, y) g(y)`, found here by alternating scaling in
//! log space. The optimal path measure is then `f(X_0) g(X_N) R`.

use crate::conditioning::{disintegrate, Kernel};
use crate::entropy::{entropy_decompose, EntropyValue};
use crate::error::MeasureError;
use crate::extnn::ExtNonNeg;
use crate::measure::{FiniteMeasure, FiniteSpace, PROBABILITY_TOL};
use crate::pathspace::{check_markov, PathMeasure};

/// Default sup-norm tolerance on the fitted marginals.
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-10;
/// Default iteration budget for the alternating scaling loop.
pub const DEFAULT_SINKHORN_MAX_ITERS: usize = 100_000;
/// The fitting loop declares the constraints infeasible when the marginal
/// error improves by less than this over [`PLATEAU_WINDOW`] iterations
/// while still above tolerance.
pub const PLATEAU_EPS: f64 = 1e-14;
pub const PLATEAU_WINDOW: usize = 50;

/// A finite measure on a product of two state spaces, stored x-major.
#[derive(Clone, Debug)]
pub struct EndpointMeasure {
    x: FiniteSpace,
    y: FiniteSpace,
    space: FiniteSpace,
    weights: Vec<f64>,
}

impl EndpointMeasure {
    pub fn new(
        x: FiniteSpace,
        y: FiniteSpace,
        weights: Vec<f64>,
    ) -> Result<EndpointMeasure, MeasureError> {
        let space = FiniteSpace::product(&x, &y);
        if weights.len() != space.len() {
            return Err(MeasureError::invalid(format!(
                "{} weights for a {}x{} product",
                weights.len(),
                x.len(),
                y.len()
            )));
        }
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(MeasureError::InvalidWeight { value: w });
            }
        }
        Ok(EndpointMeasure {
            x,
            y,
            space,
            weights,
        })
    }

    pub fn from_rows(
        x: FiniteSpace,
        y: FiniteSpace,
        rows: &[Vec<f64>],
    ) -> Result<EndpointMeasure, MeasureError> {
        if rows.len() != x.len() || rows.iter().any(|r| r.len() != y.len()) {
            return Err(MeasureError::invalid(format!(
                "expected a {}x{} matrix",
                x.len(),
                y.len()
            )));
        }
        EndpointMeasure::new(x, y, rows.concat())
    }

    pub fn x_space(&self) -> &FiniteSpace {
        &self.x
    }

    pub fn y_space(&self) -> &FiniteSpace {
        &self.y
    }

    /// The product space `(x,y)`, x-major.
    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.y.len() + j]
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn as_measure(&self) -> FiniteMeasure {
        FiniteMeasure::new(self.space.clone(), self.weights.clone())
            .expect("validated at construction")
    }

    pub fn x_marginal(&self) -> FiniteMeasure {
        let ny = self.y.len();
        let weights = (0..self.x.len())
            .map(|i| self.weights[i * ny..(i + 1) * ny].iter().sum())
            .collect();
        FiniteMeasure::new(self.x.clone(), weights).expect("sums of valid weights")
    }

    pub fn y_marginal(&self) -> FiniteMeasure {
        let ny = self.y.len();
        let weights = (0..ny)
            .map(|j| (0..self.x.len()).map(|i| self.weights[i * ny + j]).sum())
            .collect();
        FiniteMeasure::new(self.y.clone(), weights).expect("sums of valid weights")
    }
}

/// The endpoint law of a path measure together with its bridges (the
/// conditional path laws given both endpoints).
#[derive(Clone, Debug)]
pub struct StaticReduction {
    pub endpoints: EndpointMeasure,
    pub bridges: Kernel,
}

pub fn static_reduce(r: &PathMeasure) -> Result<StaticReduction, MeasureError> {
    let proj = r.endpoint_projection();
    let (marginal, bridges) = disintegrate(r.measure(), &proj)?;
    let endpoints = EndpointMeasure::new(
        r.states().clone(),
        r.states().clone(),
        marginal.weights().to_vec(),
    )?;
    Ok(StaticReduction { endpoints, bridges })
}

/// Reweights a path measure by `f(X_0) g(X_N)`.
pub fn fg_transform(
    r: &PathMeasure,
    f: &[f64],
    g: &[f64],
) -> Result<PathMeasure, MeasureError> {
    let n = r.states().len();
    if f.len() != n || g.len() != n {
        return Err(MeasureError::invalid(format!(
            "endpoint weights need length {n}, got {} and {}",
            f.len(),
            g.len()
        )));
    }
    for &v in f.iter().chain(g) {
        if !v.is_finite() || v < 0.0 {
            return Err(MeasureError::InvalidWeight { value: v });
        }
    }
    let steps = r.grid().steps();
    let weights: Vec<f64> = (0..r.path_count())
        .map(|idx| {
            let digits = r.decode(idx);
            r.measure().weight(idx) * f[digits[0]] * g[digits[steps]]
        })
        .collect();
    if weights.iter().sum::<f64>() == 0.0 {
        return Err(MeasureError::DegenerateTransform);
    }
    PathMeasure::new(r.states().clone(), r.grid(), weights)
}

/// The marginals of the product-form coupling `f R01 g`, in `[0, inf]`
/// arithmetic: `mu0(x) = f(x) sum_y R01(x,y) g(y)` and symmetrically.
pub fn fg_marginals(
    r01: &EndpointMeasure,
    f: &[ExtNonNeg],
    g: &[ExtNonNeg],
) -> Result<(Vec<ExtNonNeg>, Vec<ExtNonNeg>), MeasureError> {
    let (nx, ny) = (r01.x_space().len(), r01.y_space().len());
    if f.len() != nx || g.len() != ny {
        return Err(MeasureError::invalid(format!(
            "endpoint weights need lengths {nx} and {ny}, got {} and {}",
            f.len(),
            g.len()
        )));
    }
    let mu0 = (0..nx)
        .map(|i| {
            let row: ExtNonNeg = (0..ny)
                .map(|j| ExtNonNeg::from_checked(r01.weight(i, j)) * g[j])
                .sum();
            f[i] * row
        })
        .collect();
    let mu1 = (0..ny)
        .map(|j| {
            let col: ExtNonNeg = (0..nx)
                .map(|i| ExtNonNeg::from_checked(r01.weight(i, j)) * f[i])
                .sum();
            g[j] * col
        })
        .collect();
    Ok((mu0, mu1))
}

#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    /// Sup-norm tolerance on both fitted marginals.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial `g` (positive); ones when absent. The converged coupling
    /// does not depend on it.
    pub init_g: Option<Vec<f64>>,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: DEFAULT_SINKHORN_TOL,
            max_iters: DEFAULT_SINKHORN_MAX_ITERS,
            init_g: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    /// Gauge-fixed so that `max f = 1`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub coupling: EndpointMeasure,
    pub iterations: usize,
    /// Final sup-norm errors against (`mu0`, `mu1`).
    pub marginal_errors: (f64, f64),
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let peak = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let acc: f64 = terms.map(|t| (t - peak).exp()).sum();
    peak + acc.ln()
}

/// Alternating scaling in log space for the static bridge problem:
/// find `pi = f R01 g` with the prescribed marginals.
///
/// Fails with [`MeasureError::Infeasible`] when a constrained atom has no
/// support at all, or when the marginal error plateaus (improvement below
/// [`PLATEAU_EPS`] across [`PLATEAU_WINDOW`] iterations) while still above
/// tolerance, which is how support-feasible but jointly unsatisfiable
/// constraints surface.
pub fn sinkhorn(
    r01: &EndpointMeasure,
    mu0: &FiniteMeasure,
    mu1: &FiniteMeasure,
    options: &SinkhornOptions,
) -> Result<SinkhornSolution, MeasureError> {
    let (nx, ny) = (r01.x_space().len(), r01.y_space().len());
    if *mu0.space() != *r01.x_space() || *mu1.space() != *r01.y_space() {
        return Err(MeasureError::SpaceMismatch {
            expected: format!(
                "{:?} and {:?}",
                r01.x_space().labels(),
                r01.y_space().labels()
            ),
            got: format!("{:?} and {:?}", mu0.space().labels(), mu1.space().labels()),
        });
    }
    mu0.require_probability(PROBABILITY_TOL)?;
    mu1.require_probability(PROBABILITY_TOL)?;
    if options.tol <= 0.0 {
        return Err(MeasureError::invalid("tolerance must be positive"));
    }
    // support feasibility: a constrained atom needs somewhere to put its mass
    let rx = r01.x_marginal();
    for i in 0..nx {
        if mu0.weight(i) > 0.0 && rx.weight(i) == 0.0 {
            return Err(MeasureError::Infeasible {
                context: format!(
                    "initial marginal charges `{}` but the reference endpoint law does not",
                    r01.x_space().label(i)
                ),
            });
        }
    }
    let ry = r01.y_marginal();
    for j in 0..ny {
        if mu1.weight(j) > 0.0 && ry.weight(j) == 0.0 {
            return Err(MeasureError::Infeasible {
                context: format!(
                    "final marginal charges `{}` but the reference endpoint law does not",
                    r01.y_space().label(j)
                ),
            });
        }
    }
    let logk: Vec<f64> = r01
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut lf = vec![f64::NEG_INFINITY; nx];
    let mut lg = match &options.init_g {
        Some(g0) => {
            if g0.len() != ny {
                return Err(MeasureError::invalid(format!(
                    "initial g needs length {ny}, got {}",
                    g0.len()
                )));
            }
            g0.iter()
                .map(|&v| {
                    if v.is_finite() && v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(MeasureError::invalid(format!(
                            "initial g must be positive, got {v}"
                        )))
                    }
                })
                .collect::<Result<Vec<f64>, _>>()?
        }
        None => vec![0.0; ny],
    };
    let mut history: Vec<f64> = Vec::new();
    for iter in 1..=options.max_iters {
        for i in 0..nx {
            if mu0.weight(i) == 0.0 {
                lf[i] = f64::NEG_INFINITY;
                continue;
            }
            let lse = log_sum_exp((0..ny).map(|j| logk[i * ny + j] + lg[j]));
            if lse == f64::NEG_INFINITY {
                return Err(MeasureError::Infeasible {
                    context: format!(
                        "no admissible transition out of `{}`",
                        r01.x_space().label(i)
                    ),
                });
            }
            lf[i] = mu0.weight(i).ln() - lse;
        }
        for j in 0..ny {
            if mu1.weight(j) == 0.0 {
                lg[j] = f64::NEG_INFINITY;
                continue;
            }
            let lse = log_sum_exp((0..nx).map(|i| logk[i * ny + j] + lf[i]));
            if lse == f64::NEG_INFINITY {
                return Err(MeasureError::Infeasible {
                    context: format!(
                        "no admissible transition into `{}`",
                        r01.y_space().label(j)
                    ),
                });
            }
            lg[j] = mu1.weight(j).ln() - lse;
        }
        let pi: Vec<f64> = (0..nx * ny)
            .map(|idx| {
                let (i, j) = (idx / ny, idx % ny);
                let l = lf[i] + logk[idx] + lg[j];
                if l == f64::NEG_INFINITY { 0.0 } else { l.exp() }
            })
            .collect();
        let mut err0 = 0.0f64;
        for i in 0..nx {
            let row: f64 = pi[i * ny..(i + 1) * ny].iter().sum();
            err0 = err0.max((row - mu0.weight(i)).abs());
        }
        let mut err1 = 0.0f64;
        for j in 0..ny {
            let col: f64 = (0..nx).map(|i| pi[i * ny + j]).sum();
            err1 = err1.max((col - mu1.weight(j)).abs());
        }
        let err = err0.max(err1);
        if err <= options.tol {
            // gauge: max f = 1
            let shift = lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let f: Vec<f64> = lf
                .iter()
                .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - shift).exp() })
                .collect();
            let g: Vec<f64> = lg
                .iter()
                .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l + shift).exp() })
                .collect();
            let coupling =
                EndpointMeasure::new(r01.x_space().clone(), r01.y_space().clone(), pi)?;
            return Ok(SinkhornSolution {
                f,
                g,
                coupling,
                iterations: iter,
                marginal_errors: (err0, err1),
            });
        }
        history.push(err);
        if history.len() >= PLATEAU_WINDOW {
            let before = history[history.len() - PLATEAU_WINDOW];
            if before - err < PLATEAU_EPS {
                return Err(MeasureError::Infeasible {
                    context: format!(
                        "marginal fitting stalled at error {err:.3e} after {iter} iterations"
                    ),
                });
            }
        }
    }
    Err(MeasureError::MaxIterations {
        iterations: options.max_iters,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[derive(Clone, Debug)]
pub struct BridgeDiagnostics {
    pub iterations: usize,
    /// Sup-norm errors of the solution's endpoint marginals.
    pub marginal_errors: (f64, f64),
    /// Largest total-variation distance between the solution's bridges and
    /// the reference bridges over charged endpoint pairs.
    pub bridge_deviation: f64,
    /// Fiber part of the entropy decomposition over endpoints; zero for an
    /// exact solution.
    pub conditional_term: f64,
}

#[derive(Clone, Debug)]
pub struct SchrodingerSolution {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub coupling: EndpointMeasure,
    pub path_measure: PathMeasure,
    pub entropy: EntropyValue,
    pub diagnostics: BridgeDiagnostics,
}

/// Solves the dynamic problem for a Markov reference: fits the endpoint
/// coupling, lifts it along the reference bridges via the endpoint
/// reweighting, and reports how exactly the solution kept the bridges.
pub fn solve_bridge(
    r: &PathMeasure,
    mu0: &FiniteMeasure,
    mu1: &FiniteMeasure,
    options: &SinkhornOptions,
) -> Result<SchrodingerSolution, MeasureError> {
    let markov = check_markov(r);
    if !markov.is_markov {
        let t = markov
            .deviations
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(t, _)| t)
            .unwrap_or(0);
        return Err(MeasureError::NotMarkov {
            time: t,
            deviation: markov.max_deviation,
        });
    }
    let reduction = static_reduce(r)?;
    let fit = sinkhorn(&reduction.endpoints, mu0, mu1, options)?;
    let path_measure = fg_transform(r, &fit.f, &fit.g)?;
    let proj = path_measure.endpoint_projection();
    let decomposition = entropy_decompose(path_measure.measure(), r.measure(), &proj)?;
    let (_, solution_bridges) = disintegrate(path_measure.measure(), &proj)?;
    let mut bridge_deviation = 0.0f64;
    for z in 0..proj.target().len() {
        if let (Some(ours), Some(reference)) =
            (solution_bridges.row(z), reduction.bridges.row(z))
        {
            bridge_deviation = bridge_deviation.max(ours.total_variation(reference)?);
        }
    }
    Ok(SchrodingerSolution {
        f: fit.f,
        g: fit.g,
        coupling: fit.coupling,
        path_measure,
        entropy: decomposition.total,
        diagnostics: BridgeDiagnostics {
            iterations: fit.iterations,
            marginal_errors: fit.marginal_errors,
            bridge_deviation,
            conditional_term: decomposition.conditional.value(),
        },
    })
}
