//! Relative entropy with unnormalized references.
//!
//! `rel_entropy(p, r)` is `sum p log(p/r)` over the atoms charged by `p`,
//! a value in `(-inf, +inf]`: it is `+inf` as soon as `p` escapes the
//! support of `r`, and it can be negative when `r` has mass above 1. When
//! the reference is given block by block and may have enormous (or, in the
//! idealized object, infinite) mass, the definition routes through a tilt:
//! pick a weight function `W` with `z = integral of exp(-W) dR` finite and
//! set
//!
//! ```text
//! H(P | R) = H(P | R_W) - E_P[W] - log z,   R_W = exp(-W) R / z.
//! ```
//!
//! The value does not depend on which admissible `W` was chosen; this is
//! what makes entropy against unnormalized references well defined, and
//! [`rel_entropy_w`] exists so that independence can be observed rather
//! than assumed.
//!
//! [`dual_maximize`] realizes the variational form
//! `H(P|R) = sup_u { E_P[u] - log E_R[exp u] }` by exact coordinate
//! ascent, and [`entropy_decompose`] splits entropy through a projection
//! into an image term plus a mixture of fiber terms.

use std::cmp::Ordering;
use std::fmt;

use crate::block::BlockMeasure;
use crate::conditioning::disintegrate;
use crate::error::MeasureError;
use crate::measure::{FiniteMeasure, FiniteSpace, MeasurableMap, PROBABILITY_TOL};

/// A value in `(-inf, +inf]`; relative entropies live here. NaN and
/// negative infinity are unrepresentable.
#[derive(Clone, Copy, PartialEq)]
pub struct EntropyValue(f64);

impl EntropyValue {
    pub const ZERO: EntropyValue = EntropyValue(0.0);
    pub const INFINITY: EntropyValue = EntropyValue(f64::INFINITY);

    pub fn new(value: f64) -> Result<EntropyValue, MeasureError> {
        if value.is_nan() || value == f64::NEG_INFINITY {
            Err(MeasureError::InvalidExtendedValue { value })
        } else {
            Ok(EntropyValue(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn finite(self, context: &str) -> Result<f64, MeasureError> {
        if self.is_finite() {
            Ok(self.0)
        } else {
            Err(MeasureError::InfiniteMass {
                context: context.to_string(),
            })
        }
    }

    fn add(self, other: EntropyValue) -> EntropyValue {
        // +inf absorbs; -inf cannot occur, so no NaN either
        EntropyValue(self.0 + other.0)
    }

    fn scale(self, weight: f64) -> EntropyValue {
        debug_assert!(weight > 0.0 && weight.is_finite());
        EntropyValue(self.0 * weight)
    }

    /// `|self - other|`, infinite iff exactly one side is.
    pub fn abs_diff(self, other: EntropyValue) -> f64 {
        match (self.is_infinite(), other.is_infinite()) {
            (true, true) => 0.0,
            (false, false) => (self.0 - other.0).abs(),
            _ => f64::INFINITY,
        }
    }
}

impl Eq for EntropyValue {}

impl PartialOrd for EntropyValue {
    fn partial_cmp(&self, other: &EntropyValue) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EntropyValue {
    fn cmp(&self, other: &EntropyValue) -> Ordering {
        self.0.partial_cmp(&other.0).expect("EntropyValue is never NaN")
    }
}

impl fmt::Debug for EntropyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EntropyValue({self})")
    }
}

impl fmt::Display for EntropyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

fn check_same_space(a: &FiniteMeasure, b: &FiniteMeasure) -> Result<(), MeasureError> {
    if a.space() != b.space() {
        return Err(MeasureError::SpaceMismatch {
            expected: format!("{:?}", a.space().labels()),
            got: format!("{:?}", b.space().labels()),
        });
    }
    Ok(())
}

/// `sum_i p_i log(p_i / r_i)` over `p`-charged atoms; `+inf` when `p`
/// charges an atom that `r` misses. `p` must be a probability; `r` may
/// have any finite mass.
pub fn rel_entropy(p: &FiniteMeasure, r: &FiniteMeasure) -> Result<EntropyValue, MeasureError> {
    check_same_space(p, r)?;
    p.require_probability(PROBABILITY_TOL)?;
    let mut h = 0.0;
    for i in 0..p.space().len() {
        let pi = p.weight(i);
        if pi == 0.0 {
            continue;
        }
        let ri = r.weight(i);
        if ri == 0.0 {
            return Ok(EntropyValue::INFINITY);
        }
        h += pi * (pi / ri).ln();
    }
    EntropyValue::new(h)
}

/// A finite weight function on a space, used to tilt references.
#[derive(Clone, Debug)]
pub struct WFunction {
    space: FiniteSpace,
    values: Vec<f64>,
}

impl WFunction {
    pub fn new(space: FiniteSpace, values: Vec<f64>) -> Result<WFunction, MeasureError> {
        if values.len() != space.len() {
            return Err(MeasureError::invalid(format!(
                "{} weight values for a space of size {}",
                values.len(),
                space.len()
            )));
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(MeasureError::WNotAdmissible {
                    context: format!("weight value {v} is not finite"),
                });
            }
        }
        Ok(WFunction { space, values })
    }

    pub fn zero(space: FiniteSpace) -> WFunction {
        let n = space.len();
        WFunction {
            space,
            values: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The tilted probability `exp(-W) r / z` and the normalizer `z`.
    /// Admissible means `z` is finite and positive.
    pub fn tilt(&self, r: &FiniteMeasure) -> Result<(FiniteMeasure, f64), MeasureError> {
        if *r.space() != self.space {
            return Err(MeasureError::SpaceMismatch {
                expected: format!("{:?}", self.space.labels()),
                got: format!("{:?}", r.space().labels()),
            });
        }
        let tilted: Vec<f64> = r
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(&ri, &wi)| ri * (-wi).exp())
            .collect();
        let z: f64 = tilted.iter().sum();
        if !z.is_finite() {
            return Err(MeasureError::WNotAdmissible {
                context: format!("tilted mass is {z}"),
            });
        }
        if z <= 0.0 {
            return Err(MeasureError::WNotAdmissible {
                context: "tilted reference has zero mass".to_string(),
            });
        }
        let rw = FiniteMeasure::new(
            self.space.clone(),
            tilted.into_iter().map(|t| t / z).collect(),
        )?;
        Ok((rw, z))
    }
}

/// `H(p | r)` assembled through the tilt by `w`:
/// `H(p | r_w) - E_p[W] - log z`. Agrees with [`rel_entropy`] whenever the
/// direct sum is defined; exists so the same number can be produced from
/// different admissible tilts.
pub fn rel_entropy_w(
    p: &FiniteMeasure,
    r: &FiniteMeasure,
    w: &WFunction,
) -> Result<EntropyValue, MeasureError> {
    check_same_space(p, r)?;
    p.require_probability(PROBABILITY_TOL)?;
    let (rw, z) = w.tilt(r)?;
    let h_tilted = rel_entropy(p, &rw)?;
    let mean_w = p.integrate(w.values())?;
    Ok(h_tilted.add(EntropyValue::new(-mean_w - z.ln())?))
}

/// `H(p | r)` for a block reference: the blocks in `0..depth` are
/// truncated to one finite measure and tilted by `w` (a label function).
/// `p` atoms must live among the truncated labels; mass elsewhere means
/// `p` is not dominated and the entropy is `+inf`.
pub fn rel_entropy_w_block<F>(
    p: &FiniteMeasure,
    r: &BlockMeasure,
    w: F,
) -> Result<EntropyValue, MeasureError>
where
    F: Fn(&str) -> f64,
{
    p.require_probability(PROBABILITY_TOL)?;
    let truncated = r.truncate();
    // align p to the truncated space; escaped mass means +inf
    let mut aligned = vec![0.0; truncated.space().len()];
    for (i, &pi) in p.weights().iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        match truncated.space().index_of(p.space().label(i)) {
            Some(j) => aligned[j] = pi,
            None => return Ok(EntropyValue::INFINITY),
        }
    }
    let p_aligned = FiniteMeasure::new(truncated.space().clone(), aligned)?;
    let values: Vec<f64> = truncated
        .space()
        .labels()
        .iter()
        .map(|l| w(l))
        .collect();
    let w_fn = WFunction::new(truncated.space().clone(), values)?;
    rel_entropy_w(&p_aligned, &truncated, &w_fn)
}

/// A weight function that tilts any block measure to finite mass: block
/// `n` contributes `n + log(1 + mass_n)`, evaluated at each atom's first
/// charged block.
pub fn default_block_w(r: &BlockMeasure) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for n in 0..r.depth() {
        let block = r.block(n);
        let mass = block.mass();
        for i in block.support() {
            let label = block.space().label(i);
            if seen.insert(label.to_string()) {
                out.push((label.to_string(), n as f64 + (1.0 + mass).ln()));
            }
        }
    }
    out
}

/// `E_p[u] - log E_r[exp u]`: the dual objective at `u`. By weak duality
/// it never exceeds `rel_entropy(p, r)`.
pub fn dual_value(p: &FiniteMeasure, r: &FiniteMeasure, u: &[f64]) -> Result<f64, MeasureError> {
    check_same_space(p, r)?;
    p.require_probability(PROBABILITY_TOL)?;
    if u.len() != p.space().len() {
        return Err(MeasureError::invalid(format!(
            "dual variable of length {} on a space of size {}",
            u.len(),
            p.space().len()
        )));
    }
    for &v in u {
        if !v.is_finite() {
            return Err(MeasureError::invalid(format!("non-finite dual value {v}")));
        }
    }
    let log_mass = log_exp_integral(r, u)?;
    let mean = p.integrate(u)?;
    Ok(mean - log_mass)
}

/// `log sum r_i exp(u_i)` computed stably.
fn log_exp_integral(r: &FiniteMeasure, u: &[f64]) -> Result<f64, MeasureError> {
    let mut peak = f64::NEG_INFINITY;
    for (i, &ui) in u.iter().enumerate() {
        if r.weight(i) > 0.0 {
            peak = peak.max(ui + r.weight(i).ln());
        }
    }
    if peak == f64::NEG_INFINITY {
        return Err(MeasureError::ZeroMass {
            name: "dual reference".to_string(),
        });
    }
    let mut acc = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        if r.weight(i) > 0.0 {
            acc += (ui + r.weight(i).ln() - peak).exp();
        }
    }
    Ok(peak + acc.ln())
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub u: Vec<f64>,
    pub value: f64,
    /// `rel_entropy(p, r) - value`; nonnegative up to rounding.
    pub gap: f64,
    pub iterations: usize,
}

/// Maximizes the dual objective by exact coordinate ascent: each sweep
/// replaces `u` with `log(p/r) + log E_r[exp u]` on the support of `p` and
/// pushes unsupported atoms far down. One sweep is already optimal up to
/// the suppressed atoms; the loop only guards rounding.
pub fn dual_maximize(
    p: &FiniteMeasure,
    r: &FiniteMeasure,
    max_iters: usize,
    tol: f64,
) -> Result<DualSolution, MeasureError> {
    check_same_space(p, r)?;
    p.require_probability(PROBABILITY_TOL)?;
    let h_star = rel_entropy(p, r)?;
    if h_star.is_infinite() {
        // the supremum is +inf; report the escaping atom
        for i in 0..p.space().len() {
            if p.weight(i) > 0.0 && r.weight(i) == 0.0 {
                return Err(MeasureError::NotAbsolutelyContinuous {
                    label: p.space().label(i).to_string(),
                    mass: p.weight(i),
                });
            }
        }
        unreachable!("infinite entropy without an escaping atom");
    }
    let h_star = h_star.value();
    let n = p.space().len();
    let mut u = vec![0.0; n];
    if max_iters == 0 {
        return Err(MeasureError::MaxIterations {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let mut gap = f64::INFINITY;
    for iter in 1..=max_iters {
        let log_mass = log_exp_integral(r, &u)?;
        let mut floor = f64::INFINITY;
        for i in 0..n {
            if p.weight(i) > 0.0 {
                u[i] = (p.weight(i) / r.weight(i)).ln() + log_mass;
                floor = floor.min(u[i]);
            }
        }
        let floor = if floor.is_finite() { floor - 60.0 } else { -60.0 };
        for i in 0..n {
            if p.weight(i) == 0.0 {
                u[i] = floor;
            }
        }
        let value = dual_value(p, r, &u)?;
        gap = h_star - value;
        if gap <= tol {
            return Ok(DualSolution {
                u,
                value,
                gap,
                iterations: iter,
            });
        }
    }
    Err(MeasureError::MaxIterations {
        iterations: max_iters,
        residual: gap,
    })
}

/// One fiber's contribution to the decomposition.
#[derive(Clone, Debug)]
pub struct DecompositionTerm {
    pub label: String,
    pub weight: f64,
    pub value: EntropyValue,
}

/// `H(p | r) = H(p_phi | r_phi) + sum_z p_phi(z) H(p(.|z) | r(.|z))`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub marginal: EntropyValue,
    pub conditional: EntropyValue,
    pub total: EntropyValue,
    pub terms: Vec<DecompositionTerm>,
}

pub fn entropy_decompose(
    p: &FiniteMeasure,
    r: &FiniteMeasure,
    phi: &MeasurableMap,
) -> Result<Decomposition, MeasureError> {
    check_same_space(p, r)?;
    if *p.space() != *phi.source() {
        return Err(MeasureError::SpaceMismatch {
            expected: format!("{:?}", phi.source().labels()),
            got: format!("{:?}", p.space().labels()),
        });
    }
    p.require_probability(PROBABILITY_TOL)?;
    let p_phi = p.pushforward(phi)?;
    let r_phi = r.pushforward(phi)?;
    let marginal = rel_entropy(&p_phi, &r_phi)?;
    let (_, kp) = disintegrate(p, phi)?;
    let (_, kr) = disintegrate(r, phi)?;
    let mut conditional = EntropyValue::ZERO;
    let mut terms = Vec::new();
    for z in 0..phi.target().len() {
        let pz = p_phi.weight(z);
        if pz == 0.0 {
            continue;
        }
        let row_p = kp.row(z).expect("p charges this fiber");
        let value = match kr.row(z) {
            Some(row_r) => rel_entropy(row_p, row_r)?,
            // p sits over a fiber with no reference mass at all
            None => EntropyValue::INFINITY,
        };
        conditional = conditional.add(value.scale(pz));
        terms.push(DecompositionTerm {
            label: phi.target().label(z).to_string(),
            weight: pz,
            value,
        });
    }
    let total = marginal.add(conditional);
    Ok(Decomposition {
        marginal,
        conditional,
        total,
        terms,
    })
}

/// Convexity of `p -> H(p | r)` probed at one interpolation point.
#[derive(Clone, Debug)]
pub struct ConvexityCheck {
    pub mixture: EntropyValue,
    pub bound: EntropyValue,
    pub satisfied: bool,
}

pub fn convexity_probe(
    p1: &FiniteMeasure,
    p2: &FiniteMeasure,
    r: &FiniteMeasure,
    lambda: f64,
) -> Result<ConvexityCheck, MeasureError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MeasureError::invalid(format!(
            "interpolation weight {lambda} outside [0, 1]"
        )));
    }
    let mix = p1.scale(lambda)?.add(&p2.scale(1.0 - lambda)?)?;
    let mixture = rel_entropy(&mix, r)?;
    let h1 = rel_entropy(p1, r)?;
    let h2 = rel_entropy(p2, r)?;
    let bound = match (lambda == 0.0, lambda == 1.0) {
        (true, _) => h2,
        (_, true) => h1,
        _ => h1.scale(lambda).add(h2.scale(1.0 - lambda)),
    };
    let satisfied = match (mixture.is_infinite(), bound.is_infinite()) {
        (_, true) => true,
        (true, false) => false,
        (false, false) => mixture.value() <= bound.value() + 1e-12,
    };
    Ok(ConvexityCheck {
        mixture,
        bound,
        satisfied,
    })
}
