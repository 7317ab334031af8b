//! Disintegration and conditional expectation.
//!
//! For a finite measure `R` and a map `phi` onto `Z`, [`disintegrate`]
//! produces the image measure `R_phi` together with one probability row per
//! charged atom of `Z`; mixing the rows back against `R_phi` recovers `R`.
//! Conditional expectations are fiber averages weighted by `R`.
//!
//! For [`BlockMeasure`]s the same quantities are computed by first scaling
//! the measure with a bounded fiber-constant weight (see
//! [`image_partition`] and [`gamma_on_image`]): the weight depends on the
//! image atom only, so it cancels from every conditional-expectation ratio
//! while making the truncated measure finite with total mass at most 1.

use crate::block::{BlockMeasure, DIVERGENCE_THRESHOLD};
use crate::error::MeasureError;
use crate::extnn::ExtNonNeg;
use crate::measure::{FiniteMeasure, FiniteSpace, MeasurableMap};

/// A function on an image space, defined only where the underlying marginal
/// is charged. `None` marks atoms outside the support.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditional {
    space: FiniteSpace,
    values: Vec<Option<f64>>,
}

impl Conditional {
    pub fn new(space: FiniteSpace, values: Vec<Option<f64>>) -> Result<Conditional, MeasureError> {
        if values.len() != space.len() {
            return Err(MeasureError::invalid(format!(
                "{} values for a space of size {}",
                values.len(),
                space.len()
            )));
        }
        Ok(Conditional { space, values })
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, z: usize) -> Option<f64> {
        self.values[z]
    }

    pub fn value_of(&self, label: &str) -> Result<Option<f64>, MeasureError> {
        Ok(self.values[self.space.require(label)?])
    }

    /// `h(phi(omega))` as a function on the source, `None` off the support.
    pub fn pullback(&self, phi: &MeasurableMap) -> Result<Vec<Option<f64>>, MeasureError> {
        if *phi.target() != self.space {
            return Err(MeasureError::SpaceMismatch {
                expected: format!("{:?}", self.space.labels()),
                got: format!("{:?}", phi.target().labels()),
            });
        }
        Ok((0..phi.source().len())
            .map(|i| self.values[phi.apply(i)])
            .collect())
    }
}

/// Like [`Conditional`] but `[0, inf]`-valued, for conditional expectations
/// of nonnegative functions that may integrate to infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct CondNonNeg {
    space: FiniteSpace,
    values: Vec<Option<ExtNonNeg>>,
}

impl CondNonNeg {
    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn values(&self) -> &[Option<ExtNonNeg>] {
        &self.values
    }

    pub fn value(&self, z: usize) -> Option<ExtNonNeg> {
        self.values[z]
    }

    pub fn value_of(&self, label: &str) -> Result<Option<ExtNonNeg>, MeasureError> {
        Ok(self.values[self.space.require(label)?])
    }
}

/// Conditional probability rows over the atoms of an image space. Row `z`
/// is the fiber of `phi` over `z` renormalized; atoms of zero marginal mass
/// have no row.
#[derive(Clone, Debug)]
pub struct Kernel {
    base: FiniteSpace,
    target: FiniteSpace,
    rows: Vec<Option<FiniteMeasure>>,
}

impl Kernel {
    pub fn base(&self) -> &FiniteSpace {
        &self.base
    }

    pub fn target(&self) -> &FiniteSpace {
        &self.target
    }

    pub fn row(&self, z: usize) -> Option<&FiniteMeasure> {
        self.rows[z].as_ref()
    }

    pub fn row_of(&self, label: &str) -> Result<Option<&FiniteMeasure>, MeasureError> {
        Ok(self.rows[self.base.require(label)?].as_ref())
    }

    /// Every present row must be a probability within `tol`.
    pub fn check_rows(&self, tol: f64) -> Result<(), MeasureError> {
        for (z, row) in self.rows.iter().enumerate() {
            if let Some(row) = row {
                let mass = row.mass();
                if (mass - 1.0).abs() > tol {
                    return Err(MeasureError::KernelRowNotProbability {
                        label: self.base.label(z).to_string(),
                        mass,
                    });
                }
            }
        }
        Ok(())
    }

    /// `sum_z marginal(z) * row_z`, accumulated in base label order. Errors
    /// if the marginal charges an atom with no row.
    pub fn mixture(&self, marginal: &FiniteMeasure) -> Result<FiniteMeasure, MeasureError> {
        if *marginal.space() != self.base {
            return Err(MeasureError::SpaceMismatch {
                expected: format!("{:?}", self.base.labels()),
                got: format!("{:?}", marginal.space().labels()),
            });
        }
        let mut weights = vec![0.0; self.target.len()];
        for z in 0..self.base.len() {
            let m = marginal.weight(z);
            if m == 0.0 {
                continue;
            }
            let row = self.rows[z].as_ref().ok_or_else(|| {
                MeasureError::NotAbsolutelyContinuous {
                    label: self.base.label(z).to_string(),
                    mass: m,
                }
            })?;
            for (i, w) in row.weights().iter().enumerate() {
                weights[i] += m * w;
            }
        }
        FiniteMeasure::new(self.target.clone(), weights)
    }
}

/// Splits `r` along `phi` into its image measure and the conditional
/// probability rows. For every atom: `r = sum_z r_phi(z) row_z` exactly in
/// real arithmetic.
pub fn disintegrate(
    r: &FiniteMeasure,
    phi: &MeasurableMap,
) -> Result<(FiniteMeasure, Kernel), MeasureError> {
    let marginal = r.pushforward(phi)?;
    let mut rows: Vec<Option<FiniteMeasure>> = vec![None; phi.target().len()];
    for z in 0..phi.target().len() {
        let mz = marginal.weight(z);
        if mz == 0.0 {
            continue;
        }
        let mut weights = vec![0.0; r.space().len()];
        for i in phi.fiber(z) {
            weights[i] = r.weight(i) / mz;
        }
        rows[z] = Some(FiniteMeasure::new(r.space().clone(), weights)?);
    }
    Ok((
        marginal,
        Kernel {
            base: phi.target().clone(),
            target: r.space().clone(),
            rows,
        },
    ))
}

/// Conditional expectation of a finite signed function: the `r`-weighted
/// fiber average, defined on the support of the image measure.
pub fn cond_expect(
    r: &FiniteMeasure,
    phi: &MeasurableMap,
    f: &[f64],
) -> Result<Conditional, MeasureError> {
    if *r.space() != *phi.source() {
        return Err(MeasureError::SpaceMismatch {
            expected: format!("{:?}", phi.source().labels()),
            got: format!("{:?}", r.space().labels()),
        });
    }
    if f.len() != r.space().len() {
        return Err(MeasureError::invalid(format!(
            "integrand of length {} on a space of size {}",
            f.len(),
            r.space().len()
        )));
    }
    for &v in f {
        if !v.is_finite() {
            return Err(MeasureError::invalid(format!("non-finite integrand value {v}")));
        }
    }
    let nz = phi.target().len();
    let mut num = vec![0.0; nz];
    let mut den = vec![0.0; nz];
    for i in 0..r.space().len() {
        let w = r.weight(i);
        let z = phi.apply(i);
        num[z] += f[i] * w;
        den[z] += w;
    }
    let values = (0..nz)
        .map(|z| if den[z] > 0.0 { Some(num[z] / den[z]) } else { None })
        .collect();
    Conditional::new(phi.target().clone(), values)
}

/// Conditional expectation of a `[0, inf]`-valued function, never failing:
/// an infinite value on a charged fiber yields an infinite average, while
/// infinite values on null atoms are absorbed by `0 * inf = 0`.
pub fn cond_expect_nonneg(
    r: &FiniteMeasure,
    phi: &MeasurableMap,
    f: &[ExtNonNeg],
) -> Result<CondNonNeg, MeasureError> {
    if *r.space() != *phi.source() {
        return Err(MeasureError::SpaceMismatch {
            expected: format!("{:?}", phi.source().labels()),
            got: format!("{:?}", r.space().labels()),
        });
    }
    if f.len() != r.space().len() {
        return Err(MeasureError::invalid(format!(
            "integrand of length {} on a space of size {}",
            f.len(),
            r.space().len()
        )));
    }
    let nz = phi.target().len();
    let mut num = vec![ExtNonNeg::ZERO; nz];
    let mut den = vec![0.0; nz];
    for i in 0..r.space().len() {
        let w = r.weight(i);
        let z = phi.apply(i);
        num[z] = num[z] + ExtNonNeg::from_checked(w) * f[i];
        den[z] += w;
    }
    let values = (0..nz)
        .map(|z| {
            if den[z] > 0.0 {
                Some(num[z].div(ExtNonNeg::from_checked(den[z])).expect("denominator is finite"))
            } else {
                None
            }
        })
        .collect::<Vec<_>>();
    Ok(CondNonNeg {
        space: phi.target().clone(),
        values,
    })
}

/// The first-appearance partition of the image of a block measure.
///
/// `space` collects every image atom seen in blocks `0..depth`, `cell_of`
/// assigns each atom the index of the block where it first carried mass,
/// `cell_masses[c]` is the accumulated mass of all atoms in cell `c`, and
/// `accumulated` is the truncated image measure itself.
#[derive(Clone, Debug)]
pub struct ImagePartition {
    pub space: FiniteSpace,
    pub cell_of: Vec<usize>,
    pub cell_masses: Vec<f64>,
    pub accumulated: FiniteMeasure,
}

pub fn image_partition(image: &BlockMeasure) -> ImagePartition {
    let depth = image.depth();
    let mut labels: Vec<String> = Vec::new();
    let mut cell_of: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut cell_masses = vec![0.0; depth];
    for n in 0..depth {
        let block = image.block(n);
        for (i, &w) in block.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let label = block.space().label(i);
            let j = match index.get(label) {
                Some(&j) => j,
                None => {
                    index.insert(label.to_string(), labels.len());
                    labels.push(label.to_string());
                    cell_of.push(n);
                    weights.push(0.0);
                    labels.len() - 1
                }
            };
            weights[j] += w;
            cell_masses[cell_of[j]] += w;
        }
    }
    let space = FiniteSpace::new(labels).expect("image carries mass somewhere");
    let accumulated =
        FiniteMeasure::new(space.clone(), weights).expect("accumulated weights are valid");
    ImagePartition {
        space,
        cell_of,
        cell_masses,
        accumulated,
    }
}

/// The bounded weight on image atoms: `2^-(c+1) / max(1, cell_mass_c)` for
/// an atom in cell `c`. Weighting the image by it gives total mass at most
/// 1; pulled back through the projection it is constant on fibers.
pub fn gamma_on_image(partition: &ImagePartition) -> Vec<f64> {
    partition
        .cell_of
        .iter()
        .map(|&c| 0.5f64.powi(c as i32 + 1) / partition.cell_masses[c].max(1.0))
        .collect()
}

fn finite_integrand(label: &str, value: f64) -> Result<f64, MeasureError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MeasureError::invalid(format!(
            "non-finite integrand value {value} at atom `{label}`"
        )))
    }
}

/// Conditional expectation over a block measure, routed through the
/// bounded reweighting.
///
/// `phi` and `f` act on atom labels (labels are global across blocks).
/// Before averaging, the raw fiber sums of `|f|` are accumulated block by
/// block; a fiber whose partial sums cross `threshold` makes the integrand
/// non-integrable there and the call fails. Pass
/// [`DIVERGENCE_THRESHOLD`](crate::block::DIVERGENCE_THRESHOLD) unless a
/// test needs a tighter guard.
pub fn cond_expect_block<P, F>(
    r: &BlockMeasure,
    phi: P,
    f: F,
    threshold: f64,
) -> Result<Conditional, MeasureError>
where
    P: Fn(&str) -> String,
    F: Fn(&str) -> f64,
{
    let depth = r.depth();
    // raw per-image-atom accumulators: numerator, |f| partial sums, marginal
    let mut labels: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut num: Vec<f64> = Vec::new();
    let mut abs: Vec<f64> = Vec::new();
    let mut den: Vec<f64> = Vec::new();
    // cell data for the bounded weight
    let mut cell_of: Vec<usize> = Vec::new();
    let mut cell_masses = vec![0.0; depth];
    for n in 0..depth {
        let block = r.block(n);
        for (i, &w) in block.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let label = block.space().label(i);
            let v = finite_integrand(label, f(label))?;
            let z = phi(label);
            let j = match index.get(&z) {
                Some(&j) => j,
                None => {
                    index.insert(z.clone(), labels.len());
                    labels.push(z);
                    cell_of.push(n);
                    num.push(0.0);
                    abs.push(0.0);
                    den.push(0.0);
                    labels.len() - 1
                }
            };
            num[j] += v * w;
            abs[j] += v.abs() * w;
            den[j] += w;
            cell_masses[cell_of[j]] += w;
            if abs[j] > threshold {
                return Err(MeasureError::NonIntegrable {
                    threshold,
                    depth: n + 1,
                });
            }
        }
    }
    if labels.is_empty() {
        return Err(MeasureError::ZeroMass {
            name: "cond_expect_block".to_string(),
        });
    }
    // average through the bounded weight: gamma depends on the image atom
    // only, so gamma*num / gamma*den is the same ratio
    let space = FiniteSpace::new(labels)?;
    let values = (0..space.len())
        .map(|j| {
            if den[j] > 0.0 {
                let gamma = 0.5f64.powi(cell_of[j] as i32 + 1) / cell_masses[cell_of[j]].max(1.0);
                Some((gamma * num[j]) / (gamma * den[j]))
            } else {
                None
            }
        })
        .collect();
    Conditional::new(space, values)
}

/// `[0, inf]`-valued counterpart of [`cond_expect_block`]. Never fails on
/// large values: a fiber numerator whose partial sums cross `threshold`,
/// or that meets an infinite integrand value, is reported as `+inf`.
pub fn cond_expect_nonneg_block<P, F>(
    r: &BlockMeasure,
    phi: P,
    f: F,
    threshold: f64,
) -> Result<CondNonNeg, MeasureError>
where
    P: Fn(&str) -> String,
    F: Fn(&str) -> ExtNonNeg,
{
    let depth = r.depth();
    let mut labels: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut num: Vec<ExtNonNeg> = Vec::new();
    let mut den: Vec<f64> = Vec::new();
    for n in 0..depth {
        let block = r.block(n);
        for (i, &w) in block.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let label = block.space().label(i);
            let z = phi(label);
            let j = match index.get(&z) {
                Some(&j) => j,
                None => {
                    index.insert(z.clone(), labels.len());
                    labels.push(z);
                    num.push(ExtNonNeg::ZERO);
                    den.push(0.0);
                    labels.len() - 1
                }
            };
            num[j] = num[j] + ExtNonNeg::from_checked(w) * f(label);
            if num[j].is_finite() && num[j].value() > threshold {
                num[j] = ExtNonNeg::INFINITY;
            }
            den[j] += w;
        }
    }
    if labels.is_empty() {
        return Err(MeasureError::ZeroMass {
            name: "cond_expect_nonneg_block".to_string(),
        });
    }
    let space = FiniteSpace::new(labels)?;
    let values = (0..space.len())
        .map(|j| {
            if den[j] > 0.0 {
                Some(
                    num[j]
                        .div(ExtNonNeg::from_checked(den[j]))
                        .expect("denominator is finite"),
                )
            } else {
                None
            }
        })
        .collect();
    Ok(CondNonNeg { space, values })
}

/// Density of the image measures: `d(q_phi)/d(r_phi)` on the image space.
pub fn marginal_density(
    q: &FiniteMeasure,
    r: &FiniteMeasure,
    phi: &MeasurableMap,
) -> Result<Conditional, MeasureError> {
    let q_phi = q.pushforward(phi)?;
    let r_phi = r.pushforward(phi)?;
    let theta = q_phi.density_wrt(&r_phi)?;
    let values = (0..theta.len())
        .map(|z| if r_phi.weight(z) > 0.0 { Some(theta[z]) } else { None })
        .collect();
    Conditional::new(phi.target().clone(), values)
}

/// One atom of a density factorization check: the density of `q` against
/// `r` split into the image-density factor and the fiber-density factor.
#[derive(Clone, Debug)]
pub struct FactorAtom {
    pub index: usize,
    pub label: String,
    pub image_label: String,
    pub total: f64,
    pub marginal_factor: f64,
    pub fiber_factor: f64,
    pub residual: f64,
}

/// Factorization check over every atom charged by `q`.
#[derive(Clone, Debug)]
pub struct FactorReport {
    pub atoms: Vec<FactorAtom>,
}

impl FactorReport {
    pub fn max_residual(&self) -> f64 {
        self.atoms.iter().map(|a| a.residual).fold(0.0, f64::max)
    }
}

/// Splits `dq/dr` at every `q`-charged atom into the product of the image
/// density at the atom's image and the density of the conditional rows.
pub fn density_factorize(
    q: &FiniteMeasure,
    r: &FiniteMeasure,
    phi: &MeasurableMap,
) -> Result<FactorReport, MeasureError> {
    let theta = q.density_wrt(r)?;
    let image = marginal_density(q, r, phi)?;
    let (_, kq) = disintegrate(q, phi)?;
    let (_, kr) = disintegrate(r, phi)?;
    let mut atoms = Vec::new();
    for i in 0..q.space().len() {
        if q.weight(i) == 0.0 {
            continue;
        }
        let z = phi.apply(i);
        let marginal_factor = image.value(z).expect("q charges this image atom");
        let rq = kq.row(z).expect("q charges this image atom").weight(i);
        let rr = kr.row(z).expect("r dominates q").weight(i);
        let fiber_factor = rq / rr;
        let residual = (theta[i] - marginal_factor * fiber_factor).abs();
        atoms.push(FactorAtom {
            index: i,
            label: q.space().label(i).to_string(),
            image_label: phi.target().label(z).to_string(),
            total: theta[i],
            marginal_factor,
            fiber_factor,
            residual,
        });
    }
    Ok(FactorReport { atoms })
}

/// Conditional expectation under `q` computed with `r`-averages only:
/// `E_q(f | phi) = E_r(theta f | phi) / E_r(theta | phi)` on the support
/// of the image of `q`, where `theta = dq/dr`.
pub fn cond_density_formula(
    q: &FiniteMeasure,
    r: &FiniteMeasure,
    phi: &MeasurableMap,
    f: &[f64],
) -> Result<Conditional, MeasureError> {
    let theta = q.density_wrt(r)?;
    let theta_f: Vec<f64> = theta.iter().zip(f).map(|(t, v)| t * v).collect();
    let num = cond_expect(r, phi, &theta_f)?;
    let den = cond_expect(r, phi, &theta)?;
    let q_phi = q.pushforward(phi)?;
    let values = (0..phi.target().len())
        .map(|z| {
            if q_phi.weight(z) > 0.0 {
                let n = num.value(z).expect("r charges what q charges");
                let d = den.value(z).expect("r charges what q charges");
                Some(n / d)
            } else {
                None
            }
        })
        .collect();
    Conditional::new(phi.target().clone(), values)
}

/// Convenience: the default-guard block conditional expectation.
pub fn cond_expect_block_default<P, F>(
    r: &BlockMeasure,
    phi: P,
    f: F,
) -> Result<Conditional, MeasureError>
where
    P: Fn(&str) -> String,
    F: Fn(&str) -> f64,
{
    cond_expect_block(r, phi, f, DIVERGENCE_THRESHOLD)
}
