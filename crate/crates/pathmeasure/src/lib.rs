//! Measures on finite and countably-partitioned discrete spaces, with the
//! operations needed to condition unnormalized measures and solve entropic
//! bridge problems.
//!
//! The library works with three layers of structure:
//!
//! * [`measure`] — finite measure spaces over labelled atoms: pushforward,
//!   densities, Lebesgue decomposition.
//! * [`block`] — measures of possibly infinite total mass represented as a
//!   countable disjoint union of finite-mass blocks, together with a
//!   sigma-finiteness probe and the bounded reweighting that makes
//!   conditioning well defined for them.
//! * [`pathspace`] — measures on discrete-time path spaces: Markov chain
//!   construction, Markov checks, and conditional-independence
//!   factorization across a fixed time.
//!
//! On top of these sit [`conditioning`] (disintegration and conditional
//! expectation), [`entropy`] (relative entropy against unnormalized
//! references, its variational dual, and the chain-rule decomposition), and
//! [`schrodinger`] (marginal-constrained entropy minimization over path
//! measures via iterative proportional fitting).
//!
//! Everything is deterministic: no operation consumes randomness except the
//! explicitly seeded self-check battery in [`cli`].

pub mod block;
pub mod cli;
pub mod conditioning;
pub mod entropy;
pub mod error;
pub mod extnn;
pub mod measure;
pub mod pathspace;
pub mod schrodinger;

pub use block::{BlockMeasure, DivergentAtomReport, GammaWeights, ProbeOutcome};
pub use conditioning::{Conditional, Kernel};
pub use entropy::{EntropyValue, WFunction};
pub use error::MeasureError;
pub use extnn::ExtNonNeg;
pub use measure::{FiniteMeasure, FiniteSpace, MeasurableMap};
pub use pathspace::{BlockPathMeasure, MarkovSpec, PathMeasure, TimeGrid};
pub use schrodinger::{EndpointMeasure, SchrodingerSolution, SinkhornOptions};
