//! Measures on discrete-time path spaces.
//!
//! A path over states `S` and a grid with `N` steps is a tuple
//! `(x_0, ..., x_N)`; its label is the state labels joined with `|`. Paths
//! are enumerated lexicographically with the first coordinate most
//! significant, and a [`PathMeasure`] is a finite measure on that
//! enumeration. [`MarkovSpec`] builds the path measure of a (possibly
//! inhomogeneous, possibly unnormalized) Markov chain; [`check_markov`]
//! goes the other way and measures how far conditional future laws drift
//! from depending on the present state alone.
//!
//! [`markov_factorization`] verifies conditional independence of past and
//! future given the present. Its block counterpart works on `[0, inf]`
//! values and checks the guarded product identity: whenever one factor
//! conditionally diverges, the product side is declared zero, which is the
//! only reading under which the identity survives unbounded masses.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{BlockMeasure, DEFAULT_ATOM_THRESHOLD, DIVERGENCE_THRESHOLD};
use crate::conditioning::{cond_expect_nonneg_block, CondNonNeg};
use crate::error::MeasureError;
use crate::extnn::ExtNonNeg;
use crate::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};

/// Transition rows must sum to 1 within this tolerance.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-12;
/// Conditional future laws may differ by at most this much in total
/// variation for a measure to count as Markov.
pub const MARKOV_TOL: f64 = 1e-10;
/// Largest path count the library will enumerate.
pub const MAX_PATHS: usize = 1 << 22;
/// Measurability checks are exhaustive up to this many paths, sampled
/// (deterministically) beyond it.
pub const EXHAUSTIVE_PATH_LIMIT: usize = 10_000;
const SAMPLED_CHECKS: usize = 1_000;
const MEASURABILITY_SEED: u64 = 0x7061_7468;

/// Times `0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<TimeGrid, MeasureError> {
        if steps == 0 {
            return Err(MeasureError::invalid("a time grid needs at least one step"));
        }
        Ok(TimeGrid { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.steps
    }

    pub fn check_time(&self, t: usize) -> Result<(), MeasureError> {
        if t > self.steps {
            Err(MeasureError::TimeOutOfRange {
                time: t,
                max: self.steps,
            })
        } else {
            Ok(())
        }
    }
}

/// State at position `t` of a `|`-joined path label.
pub fn state_label_at(path_label: &str, t: usize) -> &str {
    path_label.split('|').nth(t).expect("time within path label")
}

/// A finite measure on the paths `(x_0, ..., x_N)`.
#[derive(Clone, Debug)]
pub struct PathMeasure {
    states: FiniteSpace,
    grid: TimeGrid,
    measure: FiniteMeasure,
}

fn path_space(states: &FiniteSpace, steps: usize) -> Result<FiniteSpace, MeasureError> {
    let count = states
        .len()
        .checked_pow(steps as u32 + 1)
        .filter(|&c| c <= MAX_PATHS)
        .ok_or_else(|| {
            MeasureError::invalid(format!(
                "path space over {} states and {} steps exceeds {} atoms",
                states.len(),
                steps,
                MAX_PATHS
            ))
        })?;
    let mut labels = Vec::with_capacity(count);
    let mut current = vec![0usize; steps + 1];
    loop {
        let label = current
            .iter()
            .map(|&s| states.label(s))
            .collect::<Vec<_>>()
            .join("|");
        labels.push(label);
        // lexicographic increment, last coordinate fastest
        let mut pos = steps + 1;
        while pos > 0 {
            pos -= 1;
            current[pos] += 1;
            if current[pos] < states.len() {
                break;
            }
            current[pos] = 0;
            if pos == 0 {
                return FiniteSpace::new(labels);
            }
        }
    }
}

impl PathMeasure {
    /// Weights indexed lexicographically: path `(x_0, .., x_N)` sits at
    /// `sum_t x_t * |S|^(N - t)`.
    pub fn new(
        states: FiniteSpace,
        grid: TimeGrid,
        weights: Vec<f64>,
    ) -> Result<PathMeasure, MeasureError> {
        let space = path_space(&states, grid.steps())?;
        let measure = FiniteMeasure::new(space, weights)?;
        Ok(PathMeasure {
            states,
            grid,
            measure,
        })
    }

    pub fn from_markov(spec: &MarkovSpec) -> Result<PathMeasure, MeasureError> {
        let states = spec.states().clone();
        let grid = TimeGrid::new(spec.steps())?;
        let n = states.len();
        let count = n
            .checked_pow(grid.steps() as u32 + 1)
            .filter(|&c| c <= MAX_PATHS)
            .ok_or_else(|| MeasureError::invalid("path space too large"))?;
        let mut weights = vec![0.0; count];
        for (idx, weight) in weights.iter_mut().enumerate() {
            let mut rest = idx;
            let mut digits = vec![0usize; grid.steps() + 1];
            for t in (0..=grid.steps()).rev() {
                digits[t] = rest % n;
                rest /= n;
            }
            let mut w = spec.initial().weight(digits[0]);
            for t in 0..grid.steps() {
                w *= spec.kernel(t)[digits[t] * n + digits[t + 1]];
            }
            *weight = w;
        }
        PathMeasure::new(states, grid, weights)
    }

    pub fn states(&self) -> &FiniteSpace {
        &self.states
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn measure(&self) -> &FiniteMeasure {
        &self.measure
    }

    pub fn path_space(&self) -> &FiniteSpace {
        self.measure.space()
    }

    pub fn path_count(&self) -> usize {
        self.measure.space().len()
    }

    pub fn mass(&self) -> f64 {
        self.measure.mass()
    }

    /// State indices along path `idx`.
    pub fn decode(&self, idx: usize) -> Vec<usize> {
        let n = self.states.len();
        let mut rest = idx;
        let mut digits = vec![0usize; self.grid.steps() + 1];
        for t in (0..=self.grid.steps()).rev() {
            digits[t] = rest % n;
            rest /= n;
        }
        digits
    }

    pub fn encode(&self, states: &[usize]) -> usize {
        debug_assert_eq!(states.len(), self.grid.steps() + 1);
        let n = self.states.len();
        states.iter().fold(0, |acc, &s| acc * n + s)
    }

    /// Projection onto the state at time `t`.
    pub fn time_projection(&self, t: usize) -> Result<MeasurableMap, MeasureError> {
        self.grid.check_time(t)?;
        let image = (0..self.path_count()).map(|i| self.decode(i)[t]).collect();
        MeasurableMap::new(self.path_space().clone(), self.states.clone(), image)
    }

    /// Projection onto the window `(x_s, ..., x_t)`, labels joined with `|`.
    pub fn window_projection(&self, s: usize, t: usize) -> Result<MeasurableMap, MeasureError> {
        self.grid.check_time(s)?;
        self.grid.check_time(t)?;
        if s > t {
            return Err(MeasureError::invalid(format!("window [{s}, {t}] is reversed")));
        }
        let target = path_space(&self.states, t - s)?;
        let n = self.states.len();
        let image = (0..self.path_count())
            .map(|i| {
                let digits = self.decode(i);
                digits[s..=t].iter().fold(0, |acc, &x| acc * n + x)
            })
            .collect();
        MeasurableMap::new(self.path_space().clone(), target, image)
    }

    /// Projection onto `(x_0, x_N)` in the product space of states.
    pub fn endpoint_projection(&self) -> MeasurableMap {
        let target = FiniteSpace::product(&self.states, &self.states);
        let n = self.states.len();
        let image = (0..self.path_count())
            .map(|i| {
                let digits = self.decode(i);
                digits[0] * n + digits[self.grid.steps()]
            })
            .collect();
        MeasurableMap::new(self.path_space().clone(), target, image)
            .expect("endpoint images lie in the product space")
    }

    /// Law of the state at time `t` (same total mass as the path measure).
    pub fn time_marginal(&self, t: usize) -> Result<FiniteMeasure, MeasureError> {
        let proj = self.time_projection(t)?;
        self.measure.pushforward(&proj)
    }
}

/// An initial measure and one transition matrix per step. Rows must be
/// probabilities; the initial measure may be unnormalized.
#[derive(Clone, Debug)]
pub struct MarkovSpec {
    states: FiniteSpace,
    initial: FiniteMeasure,
    kernels: Vec<Vec<f64>>,
}

impl MarkovSpec {
    pub fn new(initial: FiniteMeasure, kernels: Vec<Vec<f64>>) -> Result<MarkovSpec, MeasureError> {
        if kernels.is_empty() {
            return Err(MeasureError::invalid("a chain needs at least one step"));
        }
        let states = initial.space().clone();
        let n = states.len();
        for (t, kernel) in kernels.iter().enumerate() {
            if kernel.len() != n * n {
                return Err(MeasureError::invalid(format!(
                    "step-{t} kernel has {} entries, expected {}",
                    kernel.len(),
                    n * n
                )));
            }
            for (x, row) in kernel.chunks(n).enumerate() {
                let mut mass = 0.0;
                for &p in row {
                    if !p.is_finite() || p < 0.0 {
                        return Err(MeasureError::InvalidWeight { value: p });
                    }
                    mass += p;
                }
                if (mass - 1.0).abs() > ROW_STOCHASTIC_TOL {
                    return Err(MeasureError::KernelRowNotProbability {
                        label: format!("{} (step {t})", states.label(x)),
                        mass,
                    });
                }
            }
        }
        Ok(MarkovSpec {
            states,
            initial,
            kernels,
        })
    }

    pub fn homogeneous(
        initial: FiniteMeasure,
        kernel: Vec<f64>,
        steps: usize,
    ) -> Result<MarkovSpec, MeasureError> {
        MarkovSpec::new(initial, vec![kernel; steps.max(1)])
    }

    pub fn states(&self) -> &FiniteSpace {
        &self.states
    }

    pub fn initial(&self) -> &FiniteMeasure {
        &self.initial
    }

    pub fn steps(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, t: usize) -> &[f64] {
        &self.kernels[t]
    }
}

/// Largest total-variation gap at time `t` between the conditional law of
/// the future given the whole past and given the time-`t` state alone,
/// over all charged pasts. Works on any measure whose atom labels are
/// `|`-joined paths.
pub fn markov_deviation_labelled(measure: &FiniteMeasure, t: usize) -> f64 {
    // future law per full prefix and per present state
    let mut prefix_futures: HashMap<&str, HashMap<&str, f64>> = HashMap::new();
    let mut prefix_mass: HashMap<&str, f64> = HashMap::new();
    let mut prefix_state: HashMap<&str, &str> = HashMap::new();
    let mut state_futures: HashMap<&str, HashMap<&str, f64>> = HashMap::new();
    let mut state_mass: HashMap<&str, f64> = HashMap::new();
    for (i, &w) in measure.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let label = measure.space().label(i);
        let split = split_at_time(label, t);
        let (prefix, state, future) = split;
        *prefix_futures.entry(prefix).or_default().entry(future).or_insert(0.0) += w;
        *prefix_mass.entry(prefix).or_insert(0.0) += w;
        prefix_state.insert(prefix, state);
        *state_futures.entry(state).or_default().entry(future).or_insert(0.0) += w;
        *state_mass.entry(state).or_insert(0.0) += w;
    }
    let mut worst = 0.0f64;
    for (prefix, futures) in &prefix_futures {
        let pm = prefix_mass[prefix];
        let state = prefix_state[prefix];
        let sf = &state_futures[state];
        let sm = state_mass[state];
        let mut l1 = 0.0;
        for (future, &sw) in sf {
            let pw = futures.get(future).copied().unwrap_or(0.0);
            l1 += (pw / pm - sw / sm).abs();
        }
        // futures charged by the prefix but not the state cannot exist
        worst = worst.max(0.5 * l1);
    }
    worst
}

/// `(prefix through t, state at t, future after t)` of a path label. The
/// future is `""` at the final time.
fn split_at_time(label: &str, t: usize) -> (&str, &str, &str) {
    let mut boundary_start = 0usize; // byte index where coordinate t starts
    let mut seen = 0usize;
    for (pos, ch) in label.char_indices() {
        if ch == '|' {
            seen += 1;
            if seen == t {
                boundary_start = pos + 1;
            } else if seen == t + 1 {
                let prefix = &label[..pos];
                let state = &label[boundary_start..pos];
                let future = &label[pos + 1..];
                return (prefix, state, future);
            }
        }
    }
    // t is the final coordinate
    let state = &label[boundary_start..];
    (label, state, "")
}

/// Markov deviations of a path measure at every time.
#[derive(Clone, Debug)]
pub struct MarkovCheck {
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub is_markov: bool,
}

pub fn check_markov_at(q: &PathMeasure, t: usize) -> Result<f64, MeasureError> {
    q.grid().check_time(t)?;
    Ok(markov_deviation_labelled(q.measure(), t))
}

/// Deviations at all times `0..=N` (both endpoints are trivially zero).
pub fn check_markov(q: &PathMeasure) -> MarkovCheck {
    let deviations: Vec<f64> = q
        .grid()
        .times()
        .map(|t| markov_deviation_labelled(q.measure(), t))
        .collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    MarkovCheck {
        deviations,
        max_deviation,
        is_markov: max_deviation <= MARKOV_TOL,
    }
}

/// Verifies that `f` depends only on coordinates `lo..=hi`: exhaustively
/// for small path spaces, through seeded sampling otherwise.
pub fn check_measurable_span<F>(
    pm: &PathMeasure,
    f: F,
    lo: usize,
    hi: usize,
) -> Result<(), MeasureError>
where
    F: Fn(&[usize]) -> f64,
{
    let steps = pm.grid().steps();
    let n = pm.states().len();
    let outside: Vec<usize> = (0..=steps).filter(|t| *t < lo || *t > hi).collect();
    if outside.is_empty() || n == 1 {
        return Ok(());
    }
    let verify = |digits: &mut Vec<usize>, t: usize, alt: usize| -> Result<(), MeasureError> {
        let original = digits[t];
        if alt == original {
            return Ok(());
        }
        let base = f(digits);
        digits[t] = alt;
        let perturbed = f(digits);
        let violated = base != perturbed;
        let labels = |d: &[usize]| {
            d.iter()
                .map(|&s| pm.states().label(s))
                .collect::<Vec<_>>()
                .join("|")
        };
        let path_b = labels(digits);
        digits[t] = original;
        if violated {
            return Err(MeasureError::MeasurabilityViolation {
                time: t,
                path_a: labels(digits),
                path_b,
                value_a: base,
                value_b: perturbed,
            });
        }
        Ok(())
    };
    if pm.path_count() <= EXHAUSTIVE_PATH_LIMIT {
        for idx in 0..pm.path_count() {
            let mut digits = pm.decode(idx);
            for &t in &outside {
                for alt in 0..n {
                    verify(&mut digits, t, alt)?;
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEASURABILITY_SEED);
        for _ in 0..SAMPLED_CHECKS {
            let idx = rng.random_range(0..pm.path_count());
            let mut digits = pm.decode(idx);
            let t = outside[rng.random_range(0..outside.len())];
            let alt = rng.random_range(0..n);
            verify(&mut digits, t, alt)?;
        }
    }
    Ok(())
}

/// One state's worth of the past/future factorization check.
#[derive(Clone, Debug)]
pub struct FactorRow {
    pub state: String,
    pub lhs: f64,
    pub e_alpha: f64,
    pub e_beta: f64,
    pub rhs: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct FactorizationReport {
    pub time: usize,
    pub rows: Vec<FactorRow>,
    pub max_deviation: f64,
}

/// For a Markov `r` and nonnegative `alpha` (a function of the past up to
/// `t`) and `beta` (of the future from `t`): conditioned on the time-`t`
/// state, `alpha` and `beta` decorrelate. Returns the per-state check.
pub fn markov_factorization<A, B>(
    r: &PathMeasure,
    alpha: A,
    beta: B,
    t: usize,
) -> Result<FactorizationReport, MeasureError>
where
    A: Fn(&[usize]) -> f64,
    B: Fn(&[usize]) -> f64,
{
    r.grid().check_time(t)?;
    let steps = r.grid().steps();
    check_measurable_span(r, &alpha, 0, t)?;
    check_measurable_span(r, &beta, t, steps)?;
    let deviation = markov_deviation_labelled(r.measure(), t);
    if deviation > MARKOV_TOL {
        return Err(MeasureError::NotMarkov { time: t, deviation });
    }
    let n = r.states().len();
    let mut num_ab = vec![0.0; n];
    let mut num_a = vec![0.0; n];
    let mut num_b = vec![0.0; n];
    let mut den = vec![0.0; n];
    for idx in 0..r.path_count() {
        let w = r.measure().weight(idx);
        if w == 0.0 {
            continue;
        }
        let digits = r.decode(idx);
        let a = alpha(&digits);
        let b = beta(&digits);
        for (name, v) in [("alpha", a), ("beta", b)] {
            if !v.is_finite() || v < 0.0 {
                return Err(MeasureError::invalid(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        let x = digits[t];
        num_ab[x] += a * b * w;
        num_a[x] += a * w;
        num_b[x] += b * w;
        den[x] += w;
    }
    let mut rows = Vec::new();
    let mut max_deviation = 0.0f64;
    for x in 0..n {
        if den[x] == 0.0 {
            continue;
        }
        let lhs = num_ab[x] / den[x];
        let e_alpha = num_a[x] / den[x];
        let e_beta = num_b[x] / den[x];
        let rhs = e_alpha * e_beta;
        let deviation = (lhs - rhs).abs();
        max_deviation = max_deviation.max(deviation);
        rows.push(FactorRow {
            state: r.states().label(x).to_string(),
            lhs,
            e_alpha,
            e_beta,
            rhs,
            deviation,
        });
    }
    Ok(FactorizationReport {
        time: t,
        rows,
        max_deviation,
    })
}

/// One window atom of the interval factorization check.
#[derive(Clone, Debug)]
pub struct IntervalFactorRow {
    pub window: String,
    pub lhs: f64,
    pub e_alpha: f64,
    pub zeta: f64,
    pub e_beta: f64,
    pub rhs: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct IntervalFactorizationReport {
    pub from: usize,
    pub to: usize,
    pub rows: Vec<IntervalFactorRow>,
    pub max_deviation: f64,
}

/// Interval version: conditioned on the whole window `[s, t]`, a product
/// `alpha * zeta * beta` (past of `s` / window / future of `t`) splits into
/// `E(alpha | X_s) * zeta * E(beta | X_t)`.
pub fn markov_factorization_interval<A, Z, B>(
    r: &PathMeasure,
    alpha: A,
    zeta: Z,
    beta: B,
    s: usize,
    t: usize,
) -> Result<IntervalFactorizationReport, MeasureError>
where
    A: Fn(&[usize]) -> f64,
    Z: Fn(&[usize]) -> f64,
    B: Fn(&[usize]) -> f64,
{
    r.grid().check_time(s)?;
    r.grid().check_time(t)?;
    if s > t {
        return Err(MeasureError::invalid(format!("window [{s}, {t}] is reversed")));
    }
    let steps = r.grid().steps();
    check_measurable_span(r, &alpha, 0, s)?;
    check_measurable_span(r, &zeta, s, t)?;
    check_measurable_span(r, &beta, t, steps)?;
    for u in [s, t] {
        let deviation = markov_deviation_labelled(r.measure(), u);
        if deviation > MARKOV_TOL {
            return Err(MeasureError::NotMarkov { time: u, deviation });
        }
    }
    let n = r.states().len();
    // conditional expectations of alpha given X_s and beta given X_t
    let mut a_num = vec![0.0; n];
    let mut b_num = vec![0.0; n];
    let mut s_den = vec![0.0; n];
    let mut t_den = vec![0.0; n];
    // window accumulators keyed by the window tuple
    let mut w_num: HashMap<String, f64> = HashMap::new();
    let mut w_den: HashMap<String, f64> = HashMap::new();
    let mut w_info: HashMap<String, (usize, usize, f64)> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for idx in 0..r.path_count() {
        let w = r.measure().weight(idx);
        if w == 0.0 {
            continue;
        }
        let digits = r.decode(idx);
        let a = alpha(&digits);
        let z = zeta(&digits);
        let b = beta(&digits);
        for (name, v) in [("alpha", a), ("zeta", z), ("beta", b)] {
            if !v.is_finite() || v < 0.0 {
                return Err(MeasureError::invalid(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        a_num[digits[s]] += a * w;
        s_den[digits[s]] += w;
        b_num[digits[t]] += b * w;
        t_den[digits[t]] += w;
        let window = digits[s..=t]
            .iter()
            .map(|&x| r.states().label(x))
            .collect::<Vec<_>>()
            .join("|");
        if !w_num.contains_key(&window) {
            order.push(window.clone());
            w_info.insert(window.clone(), (digits[s], digits[t], z));
        }
        *w_num.entry(window.clone()).or_insert(0.0) += a * z * b * w;
        *w_den.entry(window).or_insert(0.0) += w;
    }
    let mut rows = Vec::new();
    let mut max_deviation = 0.0f64;
    for window in order {
        let den = w_den[&window];
        let (xs, xt, z) = w_info[&window];
        let lhs = w_num[&window] / den;
        let e_alpha = a_num[xs] / s_den[xs];
        let e_beta = b_num[xt] / t_den[xt];
        let rhs = e_alpha * z * e_beta;
        let deviation = (lhs - rhs).abs();
        max_deviation = max_deviation.max(deviation);
        rows.push(IntervalFactorRow {
            window,
            lhs,
            e_alpha,
            zeta: z,
            e_beta,
            rhs,
            deviation,
        });
    }
    Ok(IntervalFactorizationReport {
        from: s,
        to: t,
        rows,
        max_deviation,
    })
}

type PathGen = dyn Fn(usize) -> PathMeasure + Send + Sync;

/// A countable union of finite path measures over a common time grid.
/// Blocks may use entirely separate state labels or share them; sharing is
/// what makes conditionability a real question.
#[derive(Clone)]
pub struct BlockPathMeasure {
    gen: Arc<PathGen>,
    grid: TimeGrid,
    depth: usize,
}

impl BlockPathMeasure {
    pub fn new<F>(gen: F, depth: usize) -> Result<BlockPathMeasure, MeasureError>
    where
        F: Fn(usize) -> PathMeasure + Send + Sync + 'static,
    {
        if depth == 0 {
            return Err(MeasureError::ZeroDepth);
        }
        let grid = gen(0).grid();
        Ok(BlockPathMeasure {
            gen: Arc::new(gen),
            grid,
            depth,
        })
    }

    pub fn from_finite(pm: PathMeasure) -> BlockPathMeasure {
        let grid = pm.grid();
        BlockPathMeasure {
            gen: Arc::new(move |_| pm.clone()),
            grid,
            depth: 1,
        }
    }

    pub fn block(&self, n: usize) -> PathMeasure {
        let block = (self.gen)(n);
        assert_eq!(
            block.grid(),
            self.grid,
            "all blocks must share the time grid"
        );
        block
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// The union as a block measure over path labels.
    pub fn as_block_measure(&self) -> BlockMeasure {
        let gen = Arc::clone(&self.gen);
        BlockMeasure::new(move |n| gen(n).measure().clone(), self.depth)
            .expect("depth already validated")
    }

    /// Block measure of time-`t` marginals.
    pub fn time_marginal_blocks(&self, t: usize) -> Result<BlockMeasure, MeasureError> {
        self.grid.check_time(t)?;
        let gen = Arc::clone(&self.gen);
        BlockMeasure::new(
            move |n| {
                gen(n)
                    .time_marginal(t)
                    .expect("time validated against the shared grid")
            },
            self.depth,
        )
    }

    /// Conditionability = every time marginal sigma-finite. When block
    /// supports never overlap at any time, that is automatic and the
    /// report carries the disjointness certificate instead of probe
    /// outcomes.
    pub fn conditionability(
        &self,
        threshold: f64,
        depth: usize,
    ) -> Result<ConditionabilityReport, MeasureError> {
        let depth = depth.min(self.depth).max(1);
        let mut disjoint = true;
        'times: for t in self.grid.times() {
            let mut seen: HashMap<String, usize> = HashMap::new();
            for n in 0..depth {
                let marginal = self.block(n).time_marginal(t)?;
                for i in marginal.support() {
                    let label = marginal.space().label(i);
                    if let Some(&m) = seen.get(label) {
                        if m != n {
                            disjoint = false;
                            break 'times;
                        }
                    } else {
                        seen.insert(label.to_string(), n);
                    }
                }
            }
        }
        if disjoint {
            return Ok(ConditionabilityReport {
                conditionable: true,
                disjoint_certificate: true,
                per_time: Vec::new(),
            });
        }
        let mut per_time = Vec::new();
        let mut conditionable = true;
        for t in self.grid.times() {
            let outcome = self
                .time_marginal_blocks(t)?
                .sigma_finite_probe(threshold, depth);
            conditionable = conditionable && outcome.is_sigma_finite();
            per_time.push((t, outcome));
        }
        Ok(ConditionabilityReport {
            conditionable,
            disjoint_certificate: false,
            per_time,
        })
    }

    pub fn conditionability_default(&self) -> Result<ConditionabilityReport, MeasureError> {
        self.conditionability(DEFAULT_ATOM_THRESHOLD, self.depth)
    }
}

impl std::fmt::Debug for BlockPathMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockPathMeasure")
            .field("steps", &self.grid.steps())
            .field("depth", &self.depth)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct ConditionabilityReport {
    pub conditionable: bool,
    /// True when no atom label is shared between blocks at any time, which
    /// certifies conditionability without probing.
    pub disjoint_certificate: bool,
    pub per_time: Vec<(usize, crate::block::ProbeOutcome)>,
}

/// One present-state row of the guarded factorization check.
#[derive(Clone, Debug)]
pub struct BlockFactorRow {
    pub state: String,
    pub lhs: ExtNonNeg,
    pub e_alpha: ExtNonNeg,
    pub e_beta: ExtNonNeg,
    /// Zero whenever either conditional factor is infinite.
    pub guarded_rhs: ExtNonNeg,
    pub guard_tripped: bool,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct BlockFactorizationReport {
    pub time: usize,
    pub rows: Vec<BlockFactorRow>,
    pub max_deviation: f64,
}

fn ext_deviation(a: ExtNonNeg, b: ExtNonNeg) -> f64 {
    match (a.is_infinite(), b.is_infinite()) {
        (true, true) => 0.0,
        (false, false) => (a.value() - b.value()).abs(),
        _ => f64::INFINITY,
    }
}

/// Guarded factorization over a block path measure. `alpha` and `beta`
/// take full path labels and must be past-/future-measurable on every
/// block. Conditional expectations that diverge past `threshold` are
/// `+inf`; the product side is zeroed wherever a factor is infinite.
pub fn markov_factorization_block<A, B>(
    r: &BlockPathMeasure,
    alpha: A,
    beta: B,
    t: usize,
    threshold: f64,
) -> Result<BlockFactorizationReport, MeasureError>
where
    A: Fn(&str) -> ExtNonNeg,
    B: Fn(&str) -> ExtNonNeg,
{
    r.grid().check_time(t)?;
    let steps = r.grid().steps();
    // per-block measurability through the label view
    for n in 0..r.depth() {
        let block = r.block(n);
        let by_label = |g: &dyn Fn(&str) -> ExtNonNeg, digits: &[usize]| -> f64 {
            let label = digits
                .iter()
                .map(|&s| block.states().label(s))
                .collect::<Vec<_>>()
                .join("|");
            let v = g(&label);
            if v.is_infinite() { f64::MAX } else { v.value() }
        };
        check_measurable_span(&block, |d| by_label(&alpha, d), 0, t)?;
        check_measurable_span(&block, |d| by_label(&beta, d), t, steps)?;
    }
    // the time-t marginal must be sigma-finite for conditioning to mean anything
    if let crate::block::ProbeOutcome::Divergent(report) = r
        .time_marginal_blocks(t)?
        .sigma_finite_probe(DEFAULT_ATOM_THRESHOLD, r.depth())
    {
        return Err(MeasureError::NotSigmaFinite {
            time: t,
            label: report.label,
            mass: report.accumulated_mass,
        });
    }
    // the truncated union must be Markov at t
    let union = r.as_block_measure().truncate();
    let deviation = markov_deviation_labelled(&union, t);
    if deviation > MARKOV_TOL {
        return Err(MeasureError::NotMarkov { time: t, deviation });
    }
    let paths = r.as_block_measure();
    let phi = move |label: &str| state_label_at(label, t).to_string();
    let e_ab = cond_expect_nonneg_block(&paths, phi, |l| alpha(l) * beta(l), threshold)?;
    let phi = move |label: &str| state_label_at(label, t).to_string();
    let e_a = cond_expect_nonneg_block(&paths, phi, &alpha, threshold)?;
    let phi = move |label: &str| state_label_at(label, t).to_string();
    let e_b = cond_expect_nonneg_block(&paths, phi, &beta, threshold)?;
    let mut rows = Vec::new();
    let mut max_deviation = 0.0f64;
    for (x, label) in e_ab.space().labels().iter().enumerate() {
        let (Some(lhs), Some(ea), Some(eb)) = (
            e_ab.value(x),
            e_a.value_of(label)?,
            e_b.value_of(label)?,
        ) else {
            continue;
        };
        let guard_tripped = ea.is_infinite() || eb.is_infinite();
        let guarded_rhs = if guard_tripped { ExtNonNeg::ZERO } else { ea * eb };
        let deviation = ext_deviation(lhs, guarded_rhs);
        max_deviation = max_deviation.max(deviation);
        rows.push(BlockFactorRow {
            state: label.clone(),
            lhs,
            e_alpha: ea,
            e_beta: eb,
            guarded_rhs,
            guard_tripped,
            deviation,
        });
    }
    Ok(BlockFactorizationReport {
        time: t,
        rows,
        max_deviation,
    })
}

/// Conditional expectations of a label function at time `t` over the
/// union, for tests and reports.
pub fn block_cond_at_time<F>(
    r: &BlockPathMeasure,
    f: F,
    t: usize,
) -> Result<CondNonNeg, MeasureError>
where
    F: Fn(&str) -> ExtNonNeg,
{
    r.grid().check_time(t)?;
    cond_expect_nonneg_block(
        &r.as_block_measure(),
        move |label| state_label_at(label, t).to_string(),
        f,
        DIVERGENCE_THRESHOLD,
    )
}
