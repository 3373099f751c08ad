//! Engine configuration and validation.

use crate::bucket::{BucketLadder, LadderError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BUCKET_LADDER: [usize; 6] = [128, 512, 1024, 2048, 4096, 8192];
pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_TOTAL_BLOCKS: usize = 4096;
pub const DEFAULT_MAX_DECODE_BATCH: usize = 256;
pub const DEFAULT_PREFILL_TOKEN_BUDGET: usize = 8192;
pub const DEFAULT_MAX_MODEL_LEN: usize = 8192;

/// Deterministic step-cost coefficients, in cost units (1 cu = 1 simulated
/// microsecond).
///
/// A prefill step costs `c_prefill_per_token * padded_tokens`. A decode step
/// costs `c_decode_fixed + c_decode_per_seq * active + c_decode_per_ctx *
/// total_context`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_prefill_per_token: u64,
    pub c_decode_fixed: u64,
    pub c_decode_per_seq: u64,
    pub c_decode_per_ctx: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            c_prefill_per_token: 1,
            c_decode_fixed: 50,
            c_decode_per_seq: 1,
            c_decode_per_ctx: 0,
        }
    }
}

/// Whether batch membership is open mid-flight or sealed at admission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Token-level batching: admission happens between any two steps and
    /// finished sequences release resources immediately.
    Continuous,
    /// Classic batch serving: admission only into an empty engine, and the
    /// blocks of finished members stay held until the whole batch finishes.
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub bucket_ladder: BucketLadder,
    pub block_size: usize,
    pub total_blocks: usize,
    pub max_decode_batch: usize,
    pub prefill_token_budget: usize,
    pub cost_model: CostModel,
    pub max_model_len: usize,
    pub mode: BatchMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            bucket_ladder: BucketLadder::new(DEFAULT_BUCKET_LADDER.to_vec())
                .expect("default ladder is valid"),
            block_size: DEFAULT_BLOCK_SIZE,
            total_blocks: DEFAULT_TOTAL_BLOCKS,
            max_decode_batch: DEFAULT_MAX_DECODE_BATCH,
            prefill_token_budget: DEFAULT_PREFILL_TOKEN_BUDGET,
            cost_model: CostModel::default(),
            max_model_len: DEFAULT_MAX_MODEL_LEN,
            mode: BatchMode::Continuous,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Ladder(#[from] LadderError),
    #[error("largest bucket ({ladder_max}) must equal max_model_len ({max_model_len})")]
    LadderMaxMismatch { ladder_max: usize, max_model_len: usize },
    #[error("block_size must be >= 1")]
    BlockSize,
    #[error("total_blocks must be >= 1")]
    TotalBlocks,
    #[error("max_decode_batch must be >= 1")]
    MaxDecodeBatch,
    #[error("prefill_token_budget ({budget}) must admit the largest bucket ({max_bucket})")]
    PrefillBudget { budget: usize, max_bucket: usize },
    #[error("decode steps would be free: set one of the decode costs above zero")]
    FreeDecode,
    #[error("b_weight ({0}) must lie in [0, 1]")]
    BWeight(f64),
}

impl EngineConfig {
    /// Checks every cross-field constraint. The ladder itself is validated at
    /// construction; this re-checks it so hand-assembled configs fail loudly.
    pub fn validate(&self) -> Result<(), ConfigError> {
        BucketLadder::new(self.bucket_ladder.buckets().to_vec())?;
        if self.block_size < 1 {
            return Err(ConfigError::BlockSize);
        }
        if self.total_blocks < 1 {
            return Err(ConfigError::TotalBlocks);
        }
        if self.max_decode_batch < 1 {
            return Err(ConfigError::MaxDecodeBatch);
        }
        let max_bucket = self.bucket_ladder.max_bucket();
        if max_bucket != self.max_model_len {
            return Err(ConfigError::LadderMaxMismatch {
                ladder_max: max_bucket,
                max_model_len: self.max_model_len,
            });
        }
        if self.prefill_token_budget < max_bucket {
            return Err(ConfigError::PrefillBudget {
                budget: self.prefill_token_budget,
                max_bucket,
            });
        }
        let cm = &self.cost_model;
        if cm.c_decode_fixed == 0 && cm.c_decode_per_seq == 0 && cm.c_decode_per_ctx == 0 {
            return Err(ConfigError::FreeDecode);
        }
        Ok(())
    }

    /// Same engine with a degenerate single-bucket ladder: every prefill pads
    /// to `max_model_len`. The classic baseline to compare bucketing against.
    pub fn pad_to_max(&self) -> Self {
        let mut cfg = self.clone();
        cfg.bucket_ladder =
            BucketLadder::new(vec![cfg.max_model_len]).expect("single positive bucket is valid");
        cfg
    }
}
