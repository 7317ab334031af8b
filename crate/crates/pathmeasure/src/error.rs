use thiserror::Error;

/// Errors shared across the crate. Numerical routines that can fail for
/// structural reasons (missing density, divergent mass, infeasible marginals)
/// report them here rather than through sentinel values.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeasureError {
    #[error("invalid atom weight {value}: weights must be finite and nonnegative")]
    InvalidWeight { value: f64 },

    #[error("invalid extended value {value}: must be nonnegative and not NaN")]
    InvalidExtendedValue { value: f64 },

    #[error("space mismatch: expected atoms of `{expected}`, got atoms of `{got}`")]
    SpaceMismatch { expected: String, got: String },

    #[error("duplicate atom label `{label}`")]
    DuplicateLabel { label: String },

    #[error("unknown atom label `{label}`")]
    UnknownLabel { label: String },

    #[error("empty space: a measurable space needs at least one atom")]
    EmptySpace,

    #[error("map image {index} out of bounds for target of size {size}")]
    ImageOutOfBounds { index: usize, size: usize },

    #[error("measure `{name}` has zero mass where positive mass is required")]
    ZeroMass { name: String },

    #[error("not absolutely continuous: atom `{label}` carries mass {mass} but the reference vanishes there")]
    NotAbsolutelyContinuous { label: String, mass: f64 },

    #[error("not a probability measure: total mass {mass} (tolerance {tol})")]
    NotProbability { mass: f64, tol: f64 },

    #[error("not integrable: partial sums exceed {threshold} at block {depth}")]
    NonIntegrable { threshold: f64, depth: usize },

    #[error("function is not measurable with respect to the coordinates up to time {time}: paths {path_a} and {path_b} agree there but map to {value_a} vs {value_b}")]
    MeasurabilityViolation {
        time: usize,
        path_a: String,
        path_b: String,
        value_a: f64,
        value_b: f64,
    },

    #[error("degenerate endpoint reweighting: resulting measure has zero mass")]
    DegenerateTransform,

    #[error("infinite mass: {context}")]
    InfiniteMass { context: String },

    #[error("truncation depth must be at least 1")]
    ZeroDepth,

    #[error("kernel row {label} is not a probability: mass {mass}")]
    KernelRowNotProbability { label: String, mass: f64 },

    #[error("reference is not Markov at time {time}: conditional future laws differ by {deviation} in total variation")]
    NotMarkov { time: usize, deviation: f64 },

    #[error("time-{time} marginal is not sigma-finite: atom `{label}` accumulated {mass}")]
    NotSigmaFinite {
        time: usize,
        label: String,
        mass: f64,
    },

    #[error("weight function is not admissible: {context}")]
    WNotAdmissible { context: String },

    #[error("marginal constraints are infeasible: {context}")]
    Infeasible { context: String },

    #[error("no convergence after {iterations} iterations (residual {residual})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("invalid time {time}: grid has times 0..={max}")]
    TimeOutOfRange { time: usize, max: usize },

    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },
}

impl MeasureError {
    pub fn invalid(context: impl Into<String>) -> Self {
        MeasureError::InvalidArgument {
            context: context.into(),
        }
    }
}
