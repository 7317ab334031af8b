//! Python bindings: a `Measure` class plus free functions covering
//! conditioning, entropy, Markov checks, the divergence probe, and the
//! bridge solver. Built as `pathmeasure_py`; see `python/smoke_test.py`
//! at the repository root for a usage walkthrough.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pathmeasure::block::{BlockMeasure, ProbeOutcome};
use pathmeasure::conditioning::{cond_expect, disintegrate};
use pathmeasure::entropy::{
    dual_maximize, entropy_decompose, rel_entropy as core_rel_entropy,
};
use pathmeasure::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};
use pathmeasure::pathspace::{check_markov as core_check_markov, PathMeasure, TimeGrid};
use pathmeasure::schrodinger::{solve_bridge as core_solve_bridge, SinkhornOptions};
use pathmeasure::MeasureError;

fn domain_err(e: MeasureError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A nonnegative measure on a finite labelled space.
#[pyclass(frozen)]
struct Measure {
    inner: FiniteMeasure,
}

impl Measure {
    fn wrap(inner: FiniteMeasure) -> Measure {
        Measure { inner }
    }
}

#[pymethods]
impl Measure {
    #[new]
    fn new(labels: Vec<String>, weights: Vec<f64>) -> PyResult<Measure> {
        let space = FiniteSpace::new(labels).map_err(domain_err)?;
        Ok(Measure::wrap(
            FiniteMeasure::new(space, weights).map_err(domain_err)?,
        ))
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.space().labels().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn weight_of(&self, label: &str) -> PyResult<f64> {
        let idx = self
            .inner
            .space()
            .index_of(label)
            .ok_or_else(|| PyValueError::new_err(format!("unknown label `{label}`")))?;
        Ok(self.inner.weight(idx))
    }

    fn normalized(&self) -> PyResult<Measure> {
        Ok(Measure::wrap(self.inner.normalized().map_err(domain_err)?))
    }

    fn scale(&self, c: f64) -> PyResult<Measure> {
        Ok(Measure::wrap(self.inner.scale(c).map_err(domain_err)?))
    }

    fn add(&self, other: &Measure) -> PyResult<Measure> {
        Ok(Measure::wrap(
            self.inner.add(&other.inner).map_err(domain_err)?,
        ))
    }

    fn total_variation(&self, other: &Measure) -> PyResult<f64> {
        self.inner.total_variation(&other.inner).map_err(domain_err)
    }

    /// Density of `self` against `reference`; fails when mass escapes the
    /// reference's support.
    fn density_wrt(&self, reference: &Measure) -> PyResult<Vec<f64>> {
        self.inner.density_wrt(&reference.inner).map_err(domain_err)
    }

    /// Image measure under the map `label -> target_labels[assign[i]]`.
    fn pushforward(
        &self,
        target_labels: Vec<String>,
        assign: Vec<usize>,
    ) -> PyResult<Measure> {
        let map = build_map(self.inner.space(), target_labels, assign)?;
        Ok(Measure::wrap(
            self.inner.pushforward(&map).map_err(domain_err)?,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Measure(labels={:?}, weights={:?})",
            self.inner.space().labels(),
            self.inner.weights()
        )
    }
}

fn build_map(
    source: &FiniteSpace,
    target_labels: Vec<String>,
    assign: Vec<usize>,
) -> PyResult<MeasurableMap> {
    let target = FiniteSpace::new(target_labels).map_err(domain_err)?;
    MeasurableMap::new(source.clone(), target, assign).map_err(domain_err)
}

/// `H(p | r)`: relative entropy, `inf` when `p` escapes `r`'s support.
#[pyfunction]
fn rel_entropy(p: &Measure, r: &Measure) -> PyResult<f64> {
    Ok(core_rel_entropy(&p.inner, &r.inner)
        .map_err(domain_err)?
        .value())
}

/// `(marginal, conditional, total)` parts of the entropy split along the
/// map; `total` always equals `rel_entropy(p, r)`.
#[pyfunction]
fn entropy_split(
    p: &Measure,
    r: &Measure,
    target_labels: Vec<String>,
    assign: Vec<usize>,
) -> PyResult<(f64, f64, f64)> {
    let map = build_map(p.inner.space(), target_labels, assign)?;
    let d = entropy_decompose(&p.inner, &r.inner, &map).map_err(domain_err)?;
    Ok((d.marginal.value(), d.conditional.value(), d.total.value()))
}

/// Conditional expectation of `f` given the map, as `{cell: value}`;
/// cells with no mass are absent.
#[pyfunction]
fn cond_expectation(
    r: &Measure,
    target_labels: Vec<String>,
    assign: Vec<usize>,
    f: Vec<f64>,
) -> PyResult<std::collections::HashMap<String, f64>> {
    let map = build_map(r.inner.space(), target_labels, assign)?;
    let cond = cond_expect(&r.inner, &map, &f).map_err(domain_err)?;
    let mut out = std::collections::HashMap::new();
    for (z, label) in cond.space().labels().iter().enumerate() {
        if let Some(v) = cond.value(z) {
            out.insert(label.clone(), v);
        }
    }
    Ok(out)
}

/// Splits a measure into its image under the map plus one normalized
/// fiber measure per charged cell.
#[pyfunction]
fn disintegration(
    mu: &Measure,
    target_labels: Vec<String>,
    assign: Vec<usize>,
) -> PyResult<(Measure, std::collections::HashMap<String, Measure>)> {
    let map = build_map(mu.inner.space(), target_labels, assign)?;
    let (marginal, kernel) = disintegrate(&mu.inner, &map).map_err(domain_err)?;
    let mut fibers = std::collections::HashMap::new();
    for (z, label) in marginal.space().labels().iter().enumerate() {
        if let Some(row) = kernel.row(z) {
            fibers.insert(label.clone(), Measure::wrap(row.clone()));
        }
    }
    Ok((Measure::wrap(marginal), fibers))
}

/// Best entropy lower bound by potential sweep: returns
/// `(u, value, gap, iterations)`.
#[pyfunction]
#[pyo3(signature = (p, r, max_iters=100_000, tol=1e-9))]
fn dual_bound(
    p: &Measure,
    r: &Measure,
    max_iters: usize,
    tol: f64,
) -> PyResult<(Vec<f64>, f64, f64, usize)> {
    let sol = dual_maximize(&p.inner, &r.inner, max_iters, tol).map_err(domain_err)?;
    Ok((sol.u, sol.value, sol.gap, sol.iterations))
}

/// Markov check for a path measure given as lexicographic path weights:
/// returns `(is_markov, max_deviation)`.
#[pyfunction]
fn check_markov(
    state_labels: Vec<String>,
    steps: usize,
    weights: Vec<f64>,
) -> PyResult<(bool, f64)> {
    let pm = path_measure(state_labels, steps, weights)?;
    let report = core_check_markov(&pm);
    Ok((report.is_markov, report.max_deviation))
}

fn path_measure(
    state_labels: Vec<String>,
    steps: usize,
    weights: Vec<f64>,
) -> PyResult<PathMeasure> {
    let states = FiniteSpace::new(state_labels).map_err(domain_err)?;
    let grid = TimeGrid::new(steps).map_err(domain_err)?;
    PathMeasure::new(states, grid, weights).map_err(domain_err)
}

/// Outcome of the block-measure divergence probe.
#[pyclass(frozen)]
struct ProbeReport {
    #[pyo3(get)]
    sigma_finite: bool,
    #[pyo3(get)]
    label: Option<String>,
    #[pyo3(get)]
    accumulated_mass: Option<f64>,
    #[pyo3(get)]
    blocks_scanned: usize,
}

/// Scans an explicit list of blocks (measures on one shared label set)
/// for an atom whose accumulated mass crosses `threshold`.
#[pyfunction]
#[pyo3(signature = (labels, blocks, threshold=1e6))]
fn sigma_finite_probe(
    labels: Vec<String>,
    blocks: Vec<Vec<f64>>,
    threshold: f64,
) -> PyResult<ProbeReport> {
    let space = FiniteSpace::new(labels).map_err(domain_err)?;
    let depth = blocks.len();
    let blocks = blocks
        .into_iter()
        .map(|w| FiniteMeasure::new(space.clone(), w))
        .collect::<Result<Vec<_>, _>>()
        .map_err(domain_err)?;
    let nu = BlockMeasure::from_blocks(blocks).map_err(domain_err)?;
    Ok(match nu.sigma_finite_probe(threshold, depth) {
        ProbeOutcome::SigmaFinite(partition) => ProbeReport {
            sigma_finite: true,
            label: None,
            accumulated_mass: None,
            blocks_scanned: partition.depth,
        },
        ProbeOutcome::Divergent(r) => ProbeReport {
            sigma_finite: false,
            label: Some(r.label),
            accumulated_mass: Some(r.accumulated_mass),
            blocks_scanned: r.blocks_scanned,
        },
    })
}

/// Solved bridge problem: the endpoint coupling, its entropy against the
/// reference endpoints, and solver diagnostics.
#[pyclass(frozen)]
struct BridgeResult {
    #[pyo3(get)]
    entropy: f64,
    #[pyo3(get)]
    coupling: Vec<Vec<f64>>,
    #[pyo3(get)]
    f: Vec<f64>,
    #[pyo3(get)]
    g: Vec<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    marginal_errors: (f64, f64),
    #[pyo3(get)]
    bridge_deviation: f64,
}

/// Minimizes entropy against the path reference subject to the two
/// endpoint marginals. The reference must be Markov.
#[pyfunction]
#[pyo3(signature = (state_labels, steps, weights, mu0, mu1, tol=1e-10, max_iters=100_000))]
fn solve_bridge(
    state_labels: Vec<String>,
    steps: usize,
    weights: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> PyResult<BridgeResult> {
    let pm = path_measure(state_labels, steps, weights)?;
    let states = pm.states().clone();
    let mu0 = FiniteMeasure::new(states.clone(), mu0).map_err(domain_err)?;
    let mu1 = FiniteMeasure::new(states.clone(), mu1).map_err(domain_err)?;
    let options = SinkhornOptions {
        tol,
        max_iters,
        init_g: None,
    };
    let sol = core_solve_bridge(&pm, &mu0, &mu1, &options).map_err(domain_err)?;
    let n = states.len();
    let coupling = (0..n)
        .map(|i| (0..n).map(|j| sol.coupling.weight(i, j)).collect())
        .collect();
    Ok(BridgeResult {
        entropy: sol.entropy.value(),
        coupling,
        f: sol.f,
        g: sol.g,
        iterations: sol.diagnostics.iterations,
        marginal_errors: sol.diagnostics.marginal_errors,
        bridge_deviation: sol.diagnostics.bridge_deviation,
    })
}

#[pymodule]
fn pathmeasure_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Measure>()?;
    m.add_class::<ProbeReport>()?;
    m.add_class::<BridgeResult>()?;
    m.add_function(wrap_pyfunction!(rel_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_split, m)?)?;
    m.add_function(wrap_pyfunction!(cond_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(disintegration, m)?)?;
    m.add_function(wrap_pyfunction!(dual_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_markov, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_finite_probe, m)?)?;
    m.add_function(wrap_pyfunction!(solve_bridge, m)?)?;
    Ok(())
}
