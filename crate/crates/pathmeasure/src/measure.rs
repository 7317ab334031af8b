//! Finite measure spaces over labelled atoms.
//!
//! A [`FiniteSpace`] is an ordered list of distinct labels; a
//! [`FiniteMeasure`] assigns a finite nonnegative weight to each atom.
//! All summation (total mass, integrals, pushforward buckets) runs in label
//! order so identical inputs always produce bit-identical floats.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::MeasureError;
use crate::extnn::ExtNonNeg;

/// Tolerance used when a measure must be a probability.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug)]
struct SpaceInner {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

/// A finite measurable space: distinct atom labels in a fixed order.
/// Cheap to clone (shared backing storage). Two spaces are equal when
/// their label sequences are equal.
#[derive(Clone)]
pub struct FiniteSpace {
    inner: Arc<SpaceInner>,
}

impl FiniteSpace {
    pub fn new<I, S>(labels: I) -> Result<FiniteSpace, MeasureError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(MeasureError::EmptySpace);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(MeasureError::DuplicateLabel {
                    label: label.clone(),
                });
            }
        }
        Ok(FiniteSpace {
            inner: Arc::new(SpaceInner { labels, index }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty label lists
    }

    pub fn labels(&self) -> &[String] {
        &self.inner.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.inner.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.inner.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<usize, MeasureError> {
        self.index_of(label).ok_or_else(|| MeasureError::UnknownLabel {
            label: label.to_string(),
        })
    }

    /// Product space with labels `(x,y)`, x-major.
    pub fn product(x: &FiniteSpace, y: &FiniteSpace) -> FiniteSpace {
        let mut labels = Vec::with_capacity(x.len() * y.len());
        for a in x.labels() {
            for b in y.labels() {
                labels.push(format!("({a},{b})"));
            }
        }
        FiniteSpace::new(labels).expect("product of valid spaces is valid")
    }
}

impl PartialEq for FiniteSpace {
    fn eq(&self, other: &FiniteSpace) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.labels == other.inner.labels
    }
}

impl Eq for FiniteSpace {}

impl fmt::Debug for FiniteSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FiniteSpace{:?}", self.inner.labels)
    }
}

fn space_mismatch(expected: &FiniteSpace, got: &FiniteSpace) -> MeasureError {
    MeasureError::SpaceMismatch {
        expected: format!("{:?}", expected.labels()),
        got: format!("{:?}", got.labels()),
    }
}

/// A map between finite spaces, stored as the target index of each source
/// atom. Always measurable; composition and fiber enumeration are direct.
#[derive(Clone, Debug)]
pub struct MeasurableMap {
    source: FiniteSpace,
    target: FiniteSpace,
    image: Vec<usize>,
}

impl MeasurableMap {
    pub fn new(
        source: FiniteSpace,
        target: FiniteSpace,
        image: Vec<usize>,
    ) -> Result<MeasurableMap, MeasureError> {
        if image.len() != source.len() {
            return Err(MeasureError::invalid(format!(
                "map table has {} entries for a source of size {}",
                image.len(),
                source.len()
            )));
        }
        for &i in &image {
            if i >= target.len() {
                return Err(MeasureError::ImageOutOfBounds {
                    index: i,
                    size: target.len(),
                });
            }
        }
        Ok(MeasurableMap {
            source,
            target,
            image,
        })
    }

    /// Builds a map from a label function. Every image label must already
    /// exist in `target`.
    pub fn from_fn<F>(
        source: FiniteSpace,
        target: FiniteSpace,
        f: F,
    ) -> Result<MeasurableMap, MeasureError>
    where
        F: Fn(&str) -> String,
    {
        let mut image = Vec::with_capacity(source.len());
        for label in source.labels() {
            image.push(target.require(&f(label))?);
        }
        Ok(MeasurableMap {
            source,
            target,
            image,
        })
    }

    /// Builds a map whose target is the set of image labels in first-appearance
    /// order.
    pub fn collecting<F>(source: FiniteSpace, f: F) -> MeasurableMap
    where
        F: Fn(&str) -> String,
    {
        let mut labels: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut image = Vec::with_capacity(source.len());
        for label in source.labels() {
            let out = f(label);
            let idx = *seen.entry(out.clone()).or_insert_with(|| {
                labels.push(out.clone());
                labels.len() - 1
            });
            image.push(idx);
        }
        let target = FiniteSpace::new(labels).expect("nonempty source gives nonempty image");
        MeasurableMap {
            source,
            target,
            image,
        }
    }

    pub fn identity(space: &FiniteSpace) -> MeasurableMap {
        MeasurableMap {
            source: space.clone(),
            target: space.clone(),
            image: (0..space.len()).collect(),
        }
    }

    pub fn source(&self) -> &FiniteSpace {
        &self.source
    }

    pub fn target(&self) -> &FiniteSpace {
        &self.target
    }

    /// Target index of source atom `i`.
    pub fn apply(&self, i: usize) -> usize {
        self.image[i]
    }

    pub fn apply_label(&self, label: &str) -> Result<&str, MeasureError> {
        let i = self.source.require(label)?;
        Ok(self.target.label(self.image[i]))
    }

    /// Source indices of the fiber over target atom `z`, in label order.
    pub fn fiber(&self, z: usize) -> Vec<usize> {
        (0..self.source.len())
            .filter(|&i| self.image[i] == z)
            .collect()
    }

    pub fn compose(&self, then: &MeasurableMap) -> Result<MeasurableMap, MeasureError> {
        if self.target != then.source {
            return Err(space_mismatch(&self.target, &then.source));
        }
        Ok(MeasurableMap {
            source: self.source.clone(),
            target: then.target.clone(),
            image: self.image.iter().map(|&i| then.image[i]).collect(),
        })
    }
}

/// A finite measure: one finite nonnegative weight per atom of its space.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMeasure {
    space: FiniteSpace,
    weights: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(space: FiniteSpace, weights: Vec<f64>) -> Result<FiniteMeasure, MeasureError> {
        if weights.len() != space.len() {
            return Err(MeasureError::invalid(format!(
                "{} weights for a space of size {}",
                weights.len(),
                space.len()
            )));
        }
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(MeasureError::InvalidWeight { value: w });
            }
        }
        Ok(FiniteMeasure { space, weights })
    }

    pub fn zero(space: FiniteSpace) -> FiniteMeasure {
        let n = space.len();
        FiniteMeasure {
            space,
            weights: vec![0.0; n],
        }
    }

    pub fn uniform(space: FiniteSpace, weight: f64) -> Result<FiniteMeasure, MeasureError> {
        let n = space.len();
        FiniteMeasure::new(space, vec![weight; n])
    }

    pub fn dirac(space: FiniteSpace, label: &str, mass: f64) -> Result<FiniteMeasure, MeasureError> {
        let i = space.require(label)?;
        let mut weights = vec![0.0; space.len()];
        weights[i] = mass;
        FiniteMeasure::new(space, weights)
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weight_of(&self, label: &str) -> Result<f64, MeasureError> {
        Ok(self.weights[self.space.require(label)?])
    }

    /// Total mass, summed in label order.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Indices of atoms with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect()
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    pub fn require_probability(&self, tol: f64) -> Result<(), MeasureError> {
        let mass = self.mass();
        if (mass - 1.0).abs() <= tol {
            Ok(())
        } else {
            Err(MeasureError::NotProbability { mass, tol })
        }
    }

    pub fn normalized(&self) -> Result<FiniteMeasure, MeasureError> {
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(MeasureError::ZeroMass {
                name: "normalized".to_string(),
            });
        }
        self.scale(1.0 / mass)
    }

    pub fn scale(&self, c: f64) -> Result<FiniteMeasure, MeasureError> {
        FiniteMeasure::new(
            self.space.clone(),
            self.weights.iter().map(|w| w * c).collect(),
        )
    }

    pub fn add(&self, other: &FiniteMeasure) -> Result<FiniteMeasure, MeasureError> {
        if self.space != other.space {
            return Err(space_mismatch(&self.space, &other.space));
        }
        FiniteMeasure::new(
            self.space.clone(),
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// The measure with weight `f(atom) * self(atom)`.
    pub fn mul_density(&self, f: &[f64]) -> Result<FiniteMeasure, MeasureError> {
        if f.len() != self.space.len() {
            return Err(MeasureError::invalid(format!(
                "density of length {} on a space of size {}",
                f.len(),
                self.space.len()
            )));
        }
        FiniteMeasure::new(
            self.space.clone(),
            self.weights.iter().zip(f).map(|(w, d)| w * d).collect(),
        )
    }

    /// `sum f(atom) * weight(atom)` in label order. `f` must be finite.
    pub fn integrate(&self, f: &[f64]) -> Result<f64, MeasureError> {
        if f.len() != self.space.len() {
            return Err(MeasureError::invalid(format!(
                "integrand of length {} on a space of size {}",
                f.len(),
                self.space.len()
            )));
        }
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(f) {
            if !v.is_finite() {
                return Err(MeasureError::invalid(format!("non-finite integrand value {v}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Integral of a `[0, inf]`-valued function, with `0 * inf = 0` per atom.
    pub fn integrate_nonneg(&self, f: &[ExtNonNeg]) -> ExtNonNeg {
        debug_assert_eq!(f.len(), self.space.len());
        self.weights
            .iter()
            .zip(f)
            .map(|(&w, &v)| ExtNonNeg::from_checked(w) * v)
            .sum()
    }

    /// Image measure under `map`: each target atom collects the weights of
    /// its fiber, accumulated in source label order.
    pub fn pushforward(&self, map: &MeasurableMap) -> Result<FiniteMeasure, MeasureError> {
        if self.space != *map.source() {
            return Err(space_mismatch(&self.space, map.source()));
        }
        let mut weights = vec![0.0; map.target().len()];
        for (i, &w) in self.weights.iter().enumerate() {
            weights[map.apply(i)] += w;
        }
        Ok(FiniteMeasure {
            space: map.target().clone(),
            weights,
        })
    }

    /// The density `d(self)/d(reference)` where it exists. Errors on the
    /// first atom (in label order) carrying mass that the reference misses.
    /// On atoms where both vanish the density is 0 by convention.
    pub fn density_wrt(&self, reference: &FiniteMeasure) -> Result<Vec<f64>, MeasureError> {
        if self.space != reference.space {
            return Err(space_mismatch(&self.space, &reference.space));
        }
        let mut theta = Vec::with_capacity(self.weights.len());
        for i in 0..self.weights.len() {
            let q = self.weights[i];
            let r = reference.weights[i];
            if r > 0.0 {
                theta.push(q / r);
            } else if q == 0.0 {
                theta.push(0.0);
            } else {
                return Err(MeasureError::NotAbsolutelyContinuous {
                    label: self.space.label(i).to_string(),
                    mass: q,
                });
            }
        }
        Ok(theta)
    }

    /// Splits `self` into the part carried by `reference`'s support and the
    /// part singular to it. The two parts sum back to `self` atom by atom.
    pub fn lebesgue_decompose(
        &self,
        reference: &FiniteMeasure,
    ) -> Result<(FiniteMeasure, FiniteMeasure), MeasureError> {
        if self.space != reference.space {
            return Err(space_mismatch(&self.space, &reference.space));
        }
        let mut absolute = vec![0.0; self.weights.len()];
        let mut singular = vec![0.0; self.weights.len()];
        for i in 0..self.weights.len() {
            if reference.weights[i] > 0.0 {
                absolute[i] = self.weights[i];
            } else {
                singular[i] = self.weights[i];
            }
        }
        Ok((
            FiniteMeasure {
                space: self.space.clone(),
                weights: absolute,
            },
            FiniteMeasure {
                space: self.space.clone(),
                weights: singular,
            },
        ))
    }

    /// Total variation distance `sup_A |P(A) - Q(A)| = half the L1 distance`.
    pub fn total_variation(&self, other: &FiniteMeasure) -> Result<f64, MeasureError> {
        if self.space != other.space {
            return Err(space_mismatch(&self.space, &other.space));
        }
        let l1: f64 = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * l1)
    }
}
