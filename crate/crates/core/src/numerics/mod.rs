//! Dense row-major arrays and a define-by-run reverse-mode differentiation
//! graph over them.
//!
//! Everything in this crate is two-dimensional: a vector is a `1 × n` array
//! and a scalar is `1 × 1`. The graph is rebuilt for every evaluation; a
//! [`Graph`] owns its nodes and hands out [`Var`] indices into them.

mod array;
mod gradcheck;
mod graph;

pub use array::Array;
pub use gradcheck::{check_gradient, GradCheck};
pub use graph::{Graph, Var};

use thiserror::Error;

/// Floating point type used for sampling, training and gradients.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
/// Floating point type used for sampling, training and gradients.
#[cfg(feature = "single-precision")]
pub type Real = f32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("log of non-positive value {value} at flat index {index}")]
    NonPositiveLog { index: usize, value: Real },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { shape: [usize; 2], len: usize },
    #[error("index {index} out of range for {op} (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("non-finite function value at coordinate {index}")]
    NonFiniteProbe { index: usize },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

/// Numerically stable softmax of `logits / tau`, written into a new vector.
pub fn softmax(logits: &[Real], tau: Real) -> Vec<Real> {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut out: Vec<Real> = logits.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let total: Real = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// `log(sum(exp(x / tau)))` computed without overflow.
pub fn log_sum_exp(logits: &[Real], tau: Real) -> Real {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let total: Real = logits.iter().map(|&x| ((x - max) / tau).exp()).sum();
    max / tau + total.ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
