//! Input files: a single JSON document per problem. Structural issues
//! (unparseable JSON, unknown or missing fields, wrong lengths) are schema
//! errors and exit with code 2; values that parse but are mathematically
//! inadmissible surface as domain errors with exit code 1.

use std::path::Path;

use serde::Deserialize;

use crate::block::BlockMeasure;
use crate::error::MeasureError;
use crate::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};
use crate::pathspace::{MarkovSpec, PathMeasure, TimeGrid};

use super::report::digest_bytes;
use super::CliError;

pub const INPUT_VERSION: &str = "1";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub spec_version: String,
    /// Labels of the base state space.
    pub space: Option<Vec<String>>,
    /// Weights of the measure under study, aligned with `space`.
    pub measure: Option<Vec<f64>>,
    /// Weights of the reference measure, aligned with `space`.
    pub reference: Option<Vec<f64>>,
    /// A sequence of finite blocks. For `entropy`/`condition` each block
    /// is a weight vector on `space`; for `factorize` each block is a
    /// path-weight vector (see `steps`).
    pub blocks: Option<Vec<Vec<f64>>>,
    /// A measurable map off `space`, given by target labels and an index
    /// table (`assign[i]` is the target index of source atom `i`).
    pub map: Option<MapSpec>,
    /// Integrand values aligned with `space`.
    pub function: Option<Vec<f64>>,
    /// Tilt function values aligned with `space`.
    pub w: Option<Vec<f64>>,
    /// Ask `entropy` to also maximize the dual objective.
    pub dual: Option<bool>,
    /// A time-inhomogeneous chain defining a path measure.
    pub chain: Option<ChainSpec>,
    /// An explicit path measure by path weights.
    pub paths: Option<PathsSpec>,
    /// Number of steps for path-weight `blocks`.
    pub steps: Option<usize>,
    /// Endpoint constraints for `bridge`.
    pub marginals: Option<MarginalsSpec>,
    /// Observables and splitting time for `factorize`.
    pub factorize: Option<FactorizeSpec>,
    /// Restrict `markov` to a single time.
    pub time: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub target: Vec<String>,
    pub assign: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: Vec<String>,
    pub initial: Vec<f64>,
    /// One transition matrix, repeated `steps` times.
    pub kernel: Option<Vec<Vec<f64>>>,
    /// One transition matrix per step.
    pub kernels: Option<Vec<Vec<Vec<f64>>>>,
    pub steps: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSpec {
    pub states: Vec<String>,
    pub steps: usize,
    /// One weight per path, ordered with the first coordinate most
    /// significant.
    pub weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsSpec {
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub terminal: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizeSpec {
    pub t: usize,
    pub alpha: ObservableSpec,
    pub beta: ObservableSpec,
}

/// A path observable depending on one coordinate: `values[state at
/// `coordinate`]`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub coordinate: usize,
    pub values: Vec<f64>,
}

pub fn load(path: &Path) -> Result<(ProblemSpec, String), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let spec: ProblemSpec = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if spec.spec_version != INPUT_VERSION {
        return Err(CliError::Schema(format!(
            "unsupported spec_version `{}`, expected `{INPUT_VERSION}`",
            spec.spec_version
        )));
    }
    Ok((spec, digest_bytes(&bytes)))
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl ProblemSpec {
    pub fn space(&self) -> Result<FiniteSpace, CliError> {
        let labels = self
            .space
            .as_ref()
            .ok_or_else(|| schema("missing field `space`"))?;
        FiniteSpace::new(labels.iter().cloned()).map_err(CliError::Domain)
    }

    fn weights_on(
        &self,
        field: &str,
        weights: Option<&Vec<f64>>,
        space: &FiniteSpace,
    ) -> Result<FiniteMeasure, CliError> {
        let weights = weights.ok_or_else(|| schema(format!("missing field `{field}`")))?;
        if weights.len() != space.len() {
            return Err(schema(format!(
                "`{field}` has {} entries for a space of size {}",
                weights.len(),
                space.len()
            )));
        }
        FiniteMeasure::new(space.clone(), weights.clone()).map_err(CliError::Domain)
    }

    pub fn measure_on(&self, space: &FiniteSpace) -> Result<FiniteMeasure, CliError> {
        self.weights_on("measure", self.measure.as_ref(), space)
    }

    pub fn reference_on(&self, space: &FiniteSpace) -> Result<FiniteMeasure, CliError> {
        self.weights_on("reference", self.reference.as_ref(), space)
    }

    /// `blocks` read as measures on `space`.
    pub fn block_measure(&self, space: &FiniteSpace) -> Result<BlockMeasure, CliError> {
        let blocks = self
            .blocks
            .as_ref()
            .ok_or_else(|| schema("missing field `blocks`"))?;
        if blocks.is_empty() {
            return Err(schema("`blocks` must not be empty"));
        }
        let mut measures = Vec::with_capacity(blocks.len());
        for (n, weights) in blocks.iter().enumerate() {
            if weights.len() != space.len() {
                return Err(schema(format!(
                    "block {n} has {} entries for a space of size {}",
                    weights.len(),
                    space.len()
                )));
            }
            measures.push(
                FiniteMeasure::new(space.clone(), weights.clone()).map_err(CliError::Domain)?,
            );
        }
        BlockMeasure::from_blocks(measures).map_err(CliError::Domain)
    }

    pub fn map_on(&self, space: &FiniteSpace) -> Result<MeasurableMap, CliError> {
        let map = self
            .map
            .as_ref()
            .ok_or_else(|| schema("missing field `map`"))?;
        let target = FiniteSpace::new(map.target.iter().cloned()).map_err(CliError::Domain)?;
        if map.assign.len() != space.len() {
            return Err(schema(format!(
                "`map.assign` has {} entries for a space of size {}",
                map.assign.len(),
                space.len()
            )));
        }
        MeasurableMap::new(space.clone(), target, map.assign.clone()).map_err(CliError::Domain)
    }

    pub fn function_on(&self, space: &FiniteSpace) -> Result<Vec<f64>, CliError> {
        let f = self
            .function
            .as_ref()
            .ok_or_else(|| schema("missing field `function`"))?;
        if f.len() != space.len() {
            return Err(schema(format!(
                "`function` has {} entries for a space of size {}",
                f.len(),
                space.len()
            )));
        }
        Ok(f.clone())
    }

    pub fn w_on(&self, space: &FiniteSpace) -> Result<Option<Vec<f64>>, CliError> {
        match &self.w {
            None => Ok(None),
            Some(w) => {
                if w.len() != space.len() {
                    return Err(schema(format!(
                        "`w` has {} entries for a space of size {}",
                        w.len(),
                        space.len()
                    )));
                }
                Ok(Some(w.clone()))
            }
        }
    }

    pub fn chain_spec(&self) -> Result<MarkovSpec, CliError> {
        let chain = self
            .chain
            .as_ref()
            .ok_or_else(|| schema("missing field `chain`"))?;
        let states = FiniteSpace::new(chain.states.iter().cloned()).map_err(CliError::Domain)?;
        let n = states.len();
        if chain.initial.len() != n {
            return Err(schema(format!(
                "`chain.initial` has {} entries for {} states",
                chain.initial.len(),
                n
            )));
        }
        let initial =
            FiniteMeasure::new(states.clone(), chain.initial.clone()).map_err(CliError::Domain)?;
        let flatten = |matrix: &Vec<Vec<f64>>, what: &str| -> Result<Vec<f64>, CliError> {
            if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                return Err(schema(format!("{what} must be a {n}x{n} matrix")));
            }
            Ok(matrix.concat())
        };
        let kernels = match (&chain.kernel, &chain.kernels) {
            (Some(_), Some(_)) => {
                return Err(schema(
                    "`chain` takes either `kernel` (with `steps`) or `kernels`, not both",
                ))
            }
            (Some(kernel), None) => {
                let steps = chain
                    .steps
                    .ok_or_else(|| schema("`chain.kernel` requires `chain.steps`"))?;
                if steps == 0 {
                    return Err(schema("`chain.steps` must be at least 1"));
                }
                vec![flatten(kernel, "`chain.kernel`")?; steps]
            }
            (None, Some(kernels)) => {
                if kernels.is_empty() {
                    return Err(schema("`chain.kernels` must not be empty"));
                }
                if let Some(steps) = chain.steps {
                    if steps != kernels.len() {
                        return Err(schema(format!(
                            "`chain.steps` is {steps} but {} kernels were given",
                            kernels.len()
                        )));
                    }
                }
                kernels
                    .iter()
                    .enumerate()
                    .map(|(t, k)| flatten(k, &format!("`chain.kernels[{t}]`")))
                    .collect::<Result<_, _>>()?
            }
            (None, None) => {
                return Err(schema("`chain` needs `kernel` or `kernels`"));
            }
        };
        MarkovSpec::new(initial, kernels).map_err(CliError::Domain)
    }

    /// The path measure under study: exactly one of `paths` or `chain`.
    pub fn path_measure(&self) -> Result<PathMeasure, CliError> {
        match (&self.paths, &self.chain) {
            (Some(_), Some(_)) => Err(schema("give either `paths` or `chain`, not both")),
            (Some(paths), None) => {
                let states =
                    FiniteSpace::new(paths.states.iter().cloned()).map_err(CliError::Domain)?;
                let grid = TimeGrid::new(paths.steps).map_err(CliError::Domain)?;
                let expected = states
                    .len()
                    .checked_pow(paths.steps as u32 + 1)
                    .ok_or_else(|| schema("`paths` dimensions overflow"))?;
                if paths.weights.len() != expected {
                    return Err(schema(format!(
                        "`paths.weights` has {} entries, expected {expected} \
                         ({} states over {} steps)",
                        paths.weights.len(),
                        states.len(),
                        paths.steps
                    )));
                }
                PathMeasure::new(states, grid, paths.weights.clone()).map_err(CliError::Domain)
            }
            (None, Some(_)) => {
                let spec = self.chain_spec()?;
                PathMeasure::from_markov(&spec).map_err(CliError::Domain)
            }
            (None, None) => Err(schema("missing field `paths` or `chain`")),
        }
    }

    /// Path-weight blocks on `space` states over `steps` steps.
    pub fn block_paths(
        &self,
        states: &FiniteSpace,
        depth: usize,
    ) -> Result<crate::pathspace::BlockPathMeasure, CliError> {
        let steps = self
            .steps
            .ok_or_else(|| schema("missing field `steps` (required with path blocks)"))?;
        let grid = TimeGrid::new(steps).map_err(CliError::Domain)?;
        let blocks = self
            .blocks
            .as_ref()
            .ok_or_else(|| schema("missing field `blocks`"))?;
        if blocks.is_empty() {
            return Err(schema("`blocks` must not be empty"));
        }
        let expected = states
            .len()
            .checked_pow(steps as u32 + 1)
            .ok_or_else(|| schema("path dimensions overflow"))?;
        let mut measures = Vec::with_capacity(blocks.len());
        for (n, weights) in blocks.iter().enumerate() {
            if weights.len() != expected {
                return Err(schema(format!(
                    "block {n} has {} entries, expected {expected} paths",
                    weights.len()
                )));
            }
            measures.push(
                PathMeasure::new(states.clone(), grid, weights.clone())
                    .map_err(CliError::Domain)?,
            );
        }
        let zero = PathMeasure::new(states.clone(), grid, vec![0.0; expected])
            .map_err(CliError::Domain)?;
        let measures = std::sync::Arc::new(measures);
        crate::pathspace::BlockPathMeasure::new(
            move |n| {
                measures
                    .get(n)
                    .cloned()
                    .unwrap_or_else(|| zero.clone())
            },
            depth,
        )
        .map_err(CliError::Domain)
    }

    pub fn factorize_spec(&self) -> Result<&FactorizeSpec, CliError> {
        self.factorize
            .as_ref()
            .ok_or_else(|| schema("missing field `factorize`"))
    }

    pub fn marginals_on(
        &self,
        states: &FiniteSpace,
    ) -> Result<(FiniteMeasure, FiniteMeasure), CliError> {
        let marginals = self
            .marginals
            .as_ref()
            .ok_or_else(|| schema("missing field `marginals`"))?;
        let check = |name: &str, w: &Vec<f64>| -> Result<FiniteMeasure, CliError> {
            if w.len() != states.len() {
                return Err(schema(format!(
                    "`marginals.{name}` has {} entries for {} states",
                    w.len(),
                    states.len()
                )));
            }
            FiniteMeasure::new(states.clone(), w.clone()).map_err(CliError::Domain)
        };
        Ok((
            check("initial", &marginals.initial)?,
            check("final", &marginals.terminal)?,
        ))
    }
}

impl ObservableSpec {
    /// Validates against the state space and splitting constraints.
    pub fn checked(
        &self,
        states: &FiniteSpace,
        steps: usize,
        name: &str,
    ) -> Result<(), CliError> {
        if self.coordinate > steps {
            return Err(schema(format!(
                "`factorize.{name}.coordinate` is {} but the last time is {steps}",
                self.coordinate
            )));
        }
        if self.values.len() != states.len() {
            return Err(schema(format!(
                "`factorize.{name}.values` has {} entries for {} states",
                self.values.len(),
                states.len()
            )));
        }
        Ok(())
    }

    pub fn on_digits<'a>(&'a self) -> impl Fn(&[usize]) -> f64 + 'a {
        move |digits: &[usize]| self.values[digits[self.coordinate]]
    }

    /// Nonnegativity needed for the `[0, inf]` route.
    pub fn nonneg(&self, name: &str) -> Result<(), MeasureError> {
        for &v in &self.values {
            if !v.is_finite() || v < 0.0 {
                return Err(MeasureError::invalid(format!(
                    "`factorize.{name}.values` must be finite and nonnegative, found {v}"
                )));
            }
        }
        Ok(())
    }
}
