//! Request and sequence domain types shared across the engine.

use crate::blocks::BlockTable;
use crate::config::EngineConfig;
use serde::{Deserialize, Serialize};
use std::fmt;

pub type RequestId = u64;

/// Simulated time / cost units. 1 cu is one simulated microsecond.
pub type Cu = u64;

/// An inference request as it enters the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: RequestId,
    pub arrival_time: Cu,
    pub prompt_len: usize,
    pub target_output_len: usize,
}

/// Lifecycle phase of a sequence inside the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Waiting,
    Running,
    Preempted,
    Finished,
    Rejected,
}

/// Mutable per-request state tracked by the engine.
#[derive(Clone, Debug)]
pub struct SequenceState {
    pub request_id: RequestId,
    pub arrival_time: Cu,
    pub prompt_len: usize,
    pub target_output_len: usize,
    pub phase: Phase,
    /// Tokens generated so far; reset to 0 on preemption (full recompute).
    pub generated_count: usize,
    pub block_table: BlockTable,
    /// Time the first output token was emitted; survives preemption.
    pub ttft: Option<Cu>,
    pub finish_time: Option<Cu>,
    pub preemptions: u32,
}

impl SequenceState {
    pub fn new(request: Request, block_size: usize) -> Self {
        Self {
            request_id: request.request_id,
            arrival_time: request.arrival_time,
            prompt_len: request.prompt_len,
            target_output_len: request.target_output_len,
            phase: Phase::Waiting,
            generated_count: 0,
            block_table: BlockTable::empty(request.request_id, block_size),
            ttft: None,
            finish_time: None,
            preemptions: 0,
        }
    }

    /// Prompt plus generated tokens: the KV footprint of the sequence.
    pub fn context_len(&self) -> usize {
        self.prompt_len + self.generated_count
    }
}

/// Why a request was turned away at submission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    ZeroPromptLen,
    ZeroOutputLen,
    PromptExceedsMaxBucket { prompt_len: usize, max_bucket: usize },
    ContextOverflow { required: usize, max_model_len: usize },
    DuplicateRequestId,
}

impl RejectReason {
    /// Stable single-token name used in event-log lines.
    pub fn slug(&self) -> &'static str {
        match self {
            RejectReason::ZeroPromptLen => "zero_prompt_len",
            RejectReason::ZeroOutputLen => "zero_output_len",
            RejectReason::PromptExceedsMaxBucket { .. } => "prompt_exceeds_max_bucket",
            RejectReason::ContextOverflow { .. } => "context_overflow",
            RejectReason::DuplicateRequestId => "duplicate_request_id",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::ZeroPromptLen => write!(f, "prompt_len must be >= 1"),
            RejectReason::ZeroOutputLen => write!(f, "target_output_len must be >= 1"),
            RejectReason::PromptExceedsMaxBucket { prompt_len, max_bucket } => {
                write!(f, "prompt of {prompt_len} tokens exceeds the largest bucket ({max_bucket})")
            }
            RejectReason::ContextOverflow { required, max_model_len } => {
                write!(f, "prompt + output needs {required} tokens, over max_model_len ({max_model_len})")
            }
            RejectReason::DuplicateRequestId => write!(f, "request_id was already submitted"),
        }
    }
}

/// Outcome of submission-time validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissionVerdict {
    Accepted,
    Rejected(RejectReason),
}

/// Static checks a request must pass before it can ever be scheduled.
/// Checked in order: empty prompt, empty output, prompt beyond the ladder,
/// total context beyond the model window.
pub fn validate_request(request: &Request, cfg: &EngineConfig) -> AdmissionVerdict {
    if request.prompt_len == 0 {
        return AdmissionVerdict::Rejected(RejectReason::ZeroPromptLen);
    }
    if request.target_output_len == 0 {
        return AdmissionVerdict::Rejected(RejectReason::ZeroOutputLen);
    }
    let max_bucket = cfg.bucket_ladder.max_bucket();
    if request.prompt_len > max_bucket {
        return AdmissionVerdict::Rejected(RejectReason::PromptExceedsMaxBucket {
            prompt_len: request.prompt_len,
            max_bucket,
        });
    }
    let required = request.prompt_len + request.target_output_len;
    if required > cfg.max_model_len {
        return AdmissionVerdict::Rejected(RejectReason::ContextOverflow {
            required,
            max_model_len: cfg.max_model_len,
        });
    }
    AdmissionVerdict::Accepted
}
