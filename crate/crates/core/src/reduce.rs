//! Single-precision summation in two accumulation orders.
//!
//! The reference backend adds left to right; the optimized backend uses a
//! balanced pairwise tree. Both round every partial sum to `f32`, so they
//! agree exactly whenever every partial sum is representable and otherwise
//! differ in the low-order bits.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReductionOrder {
    #[default]
    Sequential,
    Pairwise,
}

impl ReductionOrder {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::Pairwise => "pairwise",
        }
    }

    pub fn sum(self, values: &[f32]) -> Result<f32> {
        match self {
            Self::Sequential => sum_sequential(values),
            Self::Pairwise => sum_pairwise(values),
        }
    }

    /// Sum without the emptiness check; an empty slice sums to `0.0`.
    pub(crate) fn sum_unchecked(self, values: &[f32]) -> f32 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Self::Sequential => sequential(values),
            Self::Pairwise => pairwise(values),
        }
    }
}

pub fn sum_sequential(values: &[f32]) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::EmptyReduction);
    }
    Ok(sequential(values))
}

pub fn sum_pairwise(values: &[f32]) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::EmptyReduction);
    }
    Ok(pairwise(values))
}

fn sequential(values: &[f32]) -> f32 {
    let mut acc = values[0];
    for &v in &values[1..] {
        acc += v;
    }
    acc
}

// Split point is len/2, so [a, b, c, d] sums as (a + b) + (c + d).
fn pairwise(values: &[f32]) -> f32 {
    match values.len() {
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise(lo) + pairwise(hi)
        }
    }
}
