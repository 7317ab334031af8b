//! Measures of possibly infinite total mass, represented as a countable
//! sequence of finite-mass blocks.
//!
//! A [`BlockMeasure`] is a lazy generator of finite measures, one per block
//! index, plus a truncation depth bounding every enumeration. Blocks of a
//! well-formed sigma-finite measure have disjoint supports, but nothing
//! enforces that: pushforwards reuse target labels across blocks, and the
//! whole point of [`BlockMeasure::sigma_finite_probe`] is to notice when a
//! single atom keeps accumulating mass block after block, which is exactly
//! how an image measure fails to be sigma-finite in this representation.
//!
//! [`GammaWeights`] scales block `n` by `2^-(n+1) / max(1, mass_n)`, giving
//! a reweighted measure of total mass at most 1. Conditioning routes
//! through such a bounded reweighting; the factor is constant on each block
//! so it cancels from every conditional-expectation ratio.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::MeasureError;
use crate::measure::{FiniteMeasure, FiniteSpace};

/// Default accumulated-mass threshold for the sigma-finiteness probe.
pub const DEFAULT_ATOM_THRESHOLD: f64 = 1e6;
/// Default number of blocks enumerated by truncating operations.
pub const DEFAULT_TRUNCATION_DEPTH: usize = 64;
/// Partial sums of a nonnegative integral beyond this are treated as
/// divergent (`+inf`) by block integration routines.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

type BlockGen = dyn Fn(usize) -> FiniteMeasure + Send + Sync;

/// A measure given block by block. `block(n)` may be called for any `n`;
/// operations that must terminate enumerate blocks `0..depth`.
#[derive(Clone)]
pub struct BlockMeasure {
    gen: Arc<BlockGen>,
    depth: usize,
}

impl BlockMeasure {
    pub fn new<F>(gen: F, depth: usize) -> Result<BlockMeasure, MeasureError>
    where
        F: Fn(usize) -> FiniteMeasure + Send + Sync + 'static,
    {
        if depth == 0 {
            return Err(MeasureError::ZeroDepth);
        }
        Ok(BlockMeasure {
            gen: Arc::new(gen),
            depth,
        })
    }

    /// Wraps a finite measure as a single-block measure (depth 1; later
    /// blocks are zero on the same space).
    pub fn from_finite(mu: FiniteMeasure) -> BlockMeasure {
        let zero = FiniteMeasure::zero(mu.space().clone());
        BlockMeasure {
            gen: Arc::new(move |n| if n == 0 { mu.clone() } else { zero.clone() }),
            depth: 1,
        }
    }

    /// A measure from an explicit list of blocks; indices past the end are
    /// zero on the space of the last block.
    pub fn from_blocks(blocks: Vec<FiniteMeasure>) -> Result<BlockMeasure, MeasureError> {
        if blocks.is_empty() {
            return Err(MeasureError::ZeroDepth);
        }
        let depth = blocks.len();
        let zero = FiniteMeasure::zero(blocks[depth - 1].space().clone());
        Ok(BlockMeasure {
            gen: Arc::new(move |n| blocks.get(n).cloned().unwrap_or_else(|| zero.clone())),
            depth,
        })
    }

    pub fn block(&self, n: usize) -> FiniteMeasure {
        (self.gen)(n)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn with_depth(&self, depth: usize) -> Result<BlockMeasure, MeasureError> {
        if depth == 0 {
            return Err(MeasureError::ZeroDepth);
        }
        Ok(BlockMeasure {
            gen: Arc::clone(&self.gen),
            depth,
        })
    }

    /// Sum of block masses over `0..depth`.
    pub fn truncated_mass(&self) -> f64 {
        (0..self.depth).map(|n| self.block(n).mass()).sum()
    }

    /// Collapses blocks `0..depth` onto one finite measure. Atoms are laid
    /// out in first-appearance order; a label occurring in several blocks
    /// accumulates their weights.
    pub fn truncate(&self) -> FiniteMeasure {
        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut weights: Vec<f64> = Vec::new();
        for n in 0..self.depth {
            let block = self.block(n);
            for (i, w) in block.weights().iter().enumerate() {
                let label = block.space().label(i);
                match index.get(label) {
                    Some(&j) => weights[j] += w,
                    None => {
                        index.insert(label.to_string(), labels.len());
                        labels.push(label.to_string());
                        weights.push(*w);
                    }
                }
            }
        }
        let space = FiniteSpace::new(labels).expect("blocks are nonempty");
        FiniteMeasure::new(space, weights).expect("block weights are valid")
    }

    /// Blockwise image measure: block `n` of the result is the pushforward
    /// of block `n` under the label map.
    pub fn pushforward<F>(&self, f: F) -> BlockMeasure
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        let gen = Arc::clone(&self.gen);
        BlockMeasure {
            gen: Arc::new(move |n| {
                let block = gen(n);
                let map = crate::measure::MeasurableMap::collecting(block.space().clone(), &f);
                block.pushforward(&map).expect("map built on block space")
            }),
            depth: self.depth,
        }
    }

    /// Blockwise reweighting by a label function.
    pub fn mul_density<F>(&self, f: F) -> BlockMeasure
    where
        F: Fn(&str) -> f64 + Send + Sync + 'static,
    {
        let gen = Arc::clone(&self.gen);
        BlockMeasure {
            gen: Arc::new(move |n| {
                let block = gen(n);
                let d: Vec<f64> = block.space().labels().iter().map(|l| f(l)).collect();
                block.mul_density(&d).expect("density built on block space")
            }),
            depth: self.depth,
        }
    }

    /// Scans blocks `0..depth` accumulating per-atom mass. Flags the first
    /// atom (in appearance order) that received mass in more than one
    /// block, accumulated more than `threshold`, and was still receiving
    /// in the final scanned block. An atom fed by a single block is never
    /// flagged: its mass is finite by construction however large it is,
    /// and only repetition across blocks can hide divergence.
    ///
    /// This is a horizon heuristic, not a proof: growth that pauses exactly
    /// at the horizon escapes detection, and a finite but huge repeated
    /// atom is reported as divergent. Raising `depth` and `threshold`
    /// tightens it.
    pub fn sigma_finite_probe(&self, threshold: f64, depth: usize) -> ProbeOutcome {
        struct AtomScan {
            total: f64,
            first_block: usize,
            multi_block: bool,
            in_final: bool,
        }
        let mut order: Vec<String> = Vec::new();
        let mut acc: HashMap<String, AtomScan> = HashMap::new();
        let mut block_masses = Vec::with_capacity(depth);
        for n in 0..depth {
            let block = self.block(n);
            block_masses.push(block.mass());
            let final_block = n + 1 == depth;
            for (i, &w) in block.weights().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let label = block.space().label(i);
                match acc.get_mut(label) {
                    Some(scan) => {
                        scan.total += w;
                        scan.multi_block = scan.multi_block || n > scan.first_block;
                        scan.in_final = scan.in_final || final_block;
                    }
                    None => {
                        order.push(label.to_string());
                        acc.insert(
                            label.to_string(),
                            AtomScan {
                                total: w,
                                first_block: n,
                                multi_block: false,
                                in_final: final_block,
                            },
                        );
                    }
                }
            }
        }
        for label in &order {
            let scan = &acc[label];
            if scan.total > threshold && scan.multi_block && scan.in_final {
                return ProbeOutcome::Divergent(DivergentAtomReport {
                    label: label.clone(),
                    accumulated_mass: scan.total,
                    blocks_scanned: depth,
                });
            }
        }
        ProbeOutcome::SigmaFinite(SigmaFinitePartition {
            block_masses,
            depth,
        })
    }
}

impl fmt::Debug for BlockMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockMeasure")
            .field("depth", &self.depth)
            .finish_non_exhaustive()
    }
}

/// Result of [`BlockMeasure::sigma_finite_probe`].
#[derive(Clone, Debug, PartialEq)]
pub enum ProbeOutcome {
    SigmaFinite(SigmaFinitePartition),
    Divergent(DivergentAtomReport),
}

impl ProbeOutcome {
    pub fn is_sigma_finite(&self) -> bool {
        matches!(self, ProbeOutcome::SigmaFinite(_))
    }
}

/// Witness that the scan found no accumulating atom: the block masses seen,
/// each finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaFinitePartition {
    pub block_masses: Vec<f64>,
    pub depth: usize,
}

/// An atom that kept gaining mass through the final scanned block after
/// crossing the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergentAtomReport {
    pub label: String,
    pub accumulated_mass: f64,
    pub blocks_scanned: usize,
}

/// Per-block scaling factors `2^-(n+1) / max(1, mass_n)`, computed for the
/// blocks of one measure up to its depth. Applying them yields a measure of
/// total mass at most 1 regardless of the block masses.
#[derive(Clone, Debug)]
pub struct GammaWeights {
    factors: Vec<f64>,
}

impl GammaWeights {
    pub fn for_blocks(measure: &BlockMeasure) -> GammaWeights {
        let factors = (0..measure.depth())
            .map(|n| {
                let mass = measure.block(n).mass();
                0.5f64.powi(n as i32 + 1) / mass.max(1.0)
            })
            .collect();
        GammaWeights { factors }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Factor for block `n`; zero past the computed horizon.
    pub fn factor(&self, n: usize) -> f64 {
        self.factors.get(n).copied().unwrap_or(0.0)
    }

    /// The reweighted measure: block `n` scaled by `factor(n)`.
    pub fn apply(&self, measure: &BlockMeasure) -> BlockMeasure {
        let factors = self.factors.clone();
        let gen = Arc::clone(&measure.gen);
        BlockMeasure {
            gen: Arc::new(move |n| {
                let block = gen(n);
                let c = factors.get(n).copied().unwrap_or(0.0);
                block.scale(c).expect("gamma factors are finite")
            }),
            depth: measure.depth,
        }
    }

    /// Total mass of the reweighted measure over the computed blocks.
    pub fn bounded_mass(&self, measure: &BlockMeasure) -> f64 {
        (0..self.factors.len())
            .map(|n| self.factors[n] * measure.block(n).mass())
            .sum()
    }
}
