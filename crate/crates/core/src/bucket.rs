//! Prefill padding ladders: find the smallest bucket a prompt fits in and
//! account for the padded tokens that choice costs.
//!
//! Prefill compute is charged at padded length: each prompt pads up to the
//! smallest ladder bucket that holds it. Only cost accounting pads; KV blocks
//! are allocated for real tokens. A single-bucket ladder reproduces the
//! pad-to-maximum baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strictly increasing, positive list of admissible prefill pad lengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BucketLadder {
    buckets: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LadderError {
    #[error("bucket ladder must not be empty")]
    Empty,
    #[error("bucket ladder must be positive and strictly increasing (violated at index {index})")]
    NotIncreasing { index: usize },
}

/// No ladder bucket can hold the prompt.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("prompt of {prompt_len} tokens exceeds the largest bucket ({max_bucket})")]
pub struct NoBucket {
    pub prompt_len: usize,
    pub max_bucket: usize,
}

impl BucketLadder {
    pub fn new(buckets: Vec<usize>) -> Result<Self, LadderError> {
        if buckets.is_empty() {
            return Err(LadderError::Empty);
        }
        let mut prev = 0usize; // enforces buckets[0] >= 1 as well
        for (index, &b) in buckets.iter().enumerate() {
            if b <= prev {
                return Err(LadderError::NotIncreasing { index });
            }
            prev = b;
        }
        Ok(Self { buckets })
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    /// Largest bucket, i.e. the longest admissible prompt.
    pub fn max_bucket(&self) -> usize {
        *self.buckets.last().expect("ladder is never empty")
    }

    /// Smallest bucket `b >= prompt_len`. A prompt exactly on a boundary uses
    /// that bucket (no spill to the next one).
    pub fn select_bucket(&self, prompt_len: usize) -> Result<usize, NoBucket> {
        debug_assert!(prompt_len >= 1, "prompts have at least one token");
        let i = self.buckets.partition_point(|&b| b < prompt_len);
        self.buckets.get(i).copied().ok_or(NoBucket {
            prompt_len,
            max_bucket: self.max_bucket(),
        })
    }

    /// Total padded prefill tokens charged for a batch of prompts.
    pub fn padded_prefill_tokens(&self, prompt_lens: &[usize]) -> Result<usize, NoBucket> {
        let mut total = 0usize;
        for &len in prompt_lens {
            total += self.select_bucket(len)?;
        }
        Ok(total)
    }
}

impl TryFrom<Vec<usize>> for BucketLadder {
    type Error = LadderError;
    fn try_from(buckets: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(buckets)
    }
}

impl From<BucketLadder> for Vec<usize> {
    fn from(ladder: BucketLadder) -> Self {
        ladder.buckets
    }
}
