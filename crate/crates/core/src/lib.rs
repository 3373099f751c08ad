//! A fully deterministic, laptop-sized model of an LLM serving stack:
//! paged KV-cache block accounting, bucket-padded prefill, continuous
//! batching at token granularity, and a gateway that splits or mirrors
//! traffic between two engine configurations.
//!
//! Everything is driven by a discrete-event loop over integer cost units
//! (1 cu = 1 simulated microsecond). Identical inputs give identical bytes
//! in the event log and the report, on every platform.

pub mod backend;
pub mod blocks;
pub mod bucket;
pub mod config;
pub mod engine;
pub mod event;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod rng;
pub mod server;
pub mod types;
pub mod workload;

pub use config::{BatchMode, CostModel, EngineConfig};
pub use engine::{Engine, EngineError, RunOutput};
pub use types::{Cu, Request, RequestId};
