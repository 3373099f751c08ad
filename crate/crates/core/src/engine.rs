//! The serving engine: queue admission, batch planning, eviction under
//! memory pressure, retirement, and the simulated clock.
//!
//! The loop is a plain discrete-event simulation. `plan_step` picks the next
//! unit of work (prefill beats decode; an idle engine jumps the clock to the
//! next arrival), the backend prices it, and `apply_outcome` advances every
//! member by one token, preempting victims when the block pool runs dry.
//!
//! Scheduling policy, pinned:
//! - Admission scans the waiting queue front only (FIFO, no skip-ahead) and
//!   admits while (a) the running batch has a slot, (b) the step's padded
//!   prefill sum stays within budget, and (c) the pool can hold the prompt.
//! - Preemption victim: the running sequence that arrived last, higher id
//!   winning ties; whoever's failed allocation forced the eviction is spared
//!   while any other candidate remains. Victims lose all generated tokens
//!   (recompute on the next admission) and rejoin the waiting queue at the
//!   front.
//!
//! Livelock guard: on a pool barely larger than a single request, admission
//! by prompt size plus recency-based eviction can cycle — two sequences
//! alternately evict each other, each destroying the other's progress before
//! either reaches its target. Such a cycle contains no completion and no
//! clock jump, while any healthy schedule completes *something* within a
//! bounded number of steps (a surviving member needs at most its target
//! count of decode steps, interleaved one-for-one with readmission prefills,
//! plus one admission wave per submitted request). The engine therefore
//! counts steps since the last completion or jump and reports Deadlock once
//! that count exceeds `8 * max_model_len + 4 * submitted + 1024`, a multiple
//! of the worst healthy gap. Detection is purely step-count based, so runs
//! stay deterministic.

use crate::backend::{self, StepOutcome, StepPlan};
use crate::blocks::{blocks_needed, pool_stats, BlockError, BlockPool, BlockTable};
use crate::config::{BatchMode, ConfigError, EngineConfig};
use crate::event::{Event, EventLog, EventRecord};
use crate::metrics::{self, MetricsReport, RequestRecord, StepSample};
use crate::types::{
    validate_request, AdmissionVerdict, Cu, Phase, RejectReason, Request, RequestId, SequenceState,
};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// No schedulable work can ever make progress again.
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error(transparent)]
    Backend(#[from] backend::BackendError),
    /// An internal invariant broke; always a bug, never a workload property.
    #[error("engine invariant violated: {0}")]
    Internal(String),
}

/// Everything a finished run hands back.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub event_log: EventLog,
    pub rejected: Vec<(RequestId, RejectReason)>,
}

pub struct Engine {
    cfg: EngineConfig,
    clock: Cu,
    pool: BlockPool,
    seqs: BTreeMap<RequestId, SequenceState>,
    /// Admission order: sorted by (arrival, id); preempted sequences are
    /// pushed back onto the front.
    waiting: VecDeque<RequestId>,
    /// Running batch in admission order.
    running: Vec<RequestId>,
    /// Admitted but not yet prefilled; drained into the next prefill plan.
    pending_prefill: Vec<RequestId>,
    pending_padded: usize,
    /// Static mode: members of the current batch (finished ones included,
    /// preempted ones removed).
    static_batch: Vec<RequestId>,
    /// Static mode: block tables of finished members, held until the whole
    /// batch completes.
    held: Vec<BlockTable>,
    log: EventLog,
    samples: Vec<StepSample>,
    rejected: Vec<(RequestId, RejectReason)>,
    /// Steps executed since a sequence last finished or the clock jumped;
    /// trips the livelock guard when it exceeds `stall_limit`.
    steps_since_progress: u64,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let pool = BlockPool::new(cfg.total_blocks, cfg.block_size);
        Ok(Self {
            cfg,
            clock: 0,
            pool,
            seqs: BTreeMap::new(),
            waiting: VecDeque::new(),
            running: Vec::new(),
            pending_prefill: Vec::new(),
            pending_padded: 0,
            static_batch: Vec::new(),
            held: Vec::new(),
            log: EventLog::new(),
            samples: Vec::new(),
            rejected: Vec::new(),
            steps_since_progress: 0,
        })
    }

    /// Steps a healthy schedule can run without completing anything: a
    /// surviving member finishes within its target count of decode steps,
    /// readmission prefills interleave at most one-for-one, and every
    /// submitted request costs at most one admission wave — all multiplied
    /// for slack. Beyond this, the schedule is provably cycling.
    fn stall_limit(&self) -> u64 {
        8 * self.cfg.max_model_len as u64 + 4 * self.seqs.len() as u64 + 1024
    }

    /// Validates and enqueues one request. Rejections are final: they are
    /// logged, counted, and never scheduled. Submission happens before the
    /// run starts, so the waiting queue is kept sorted by (arrival, id).
    pub fn submit(&mut self, request: Request) {
        let verdict = if self.seqs.contains_key(&request.request_id) {
            AdmissionVerdict::Rejected(RejectReason::DuplicateRequestId)
        } else {
            validate_request(&request, &self.cfg)
        };
        match verdict {
            AdmissionVerdict::Accepted => {
                let id = request.request_id;
                let key = (request.arrival_time, id);
                self.seqs.insert(id, SequenceState::new(request, self.cfg.block_size));
                let pos = self
                    .waiting
                    .iter()
                    .position(|w| {
                        let s = &self.seqs[w];
                        (s.arrival_time, s.request_id) > key
                    })
                    .unwrap_or(self.waiting.len());
                self.waiting.insert(pos, id);
            }
            AdmissionVerdict::Rejected(reason) => {
                // duplicates must not clobber the live sequence's state
                if reason != RejectReason::DuplicateRequestId {
                    let mut seq = SequenceState::new(request, self.cfg.block_size);
                    seq.phase = Phase::Rejected;
                    self.seqs.insert(request.request_id, seq);
                }
                self.log.push(EventRecord {
                    time: self.clock,
                    event: Event::Reject { request: request.request_id, reason: reason.slug() },
                });
                self.rejected.push((request.request_id, reason));
            }
        }
    }

    /// Admits from the waiting front into the pending prefill batch while all
    /// three gates pass. Stops at the first blocked request: FIFO order is
    /// never bypassed. Returns the ids admitted by this call.
    pub fn admit(&mut self) -> Vec<RequestId> {
        if self.cfg.mode == BatchMode::Static && !self.running.is_empty() {
            // static batching refills only a fully drained engine
            return Vec::new();
        }
        let mut admitted = Vec::new();
        while let Some(&head) = self.waiting.front() {
            let (arrival, prompt_len) = {
                let s = &self.seqs[&head];
                (s.arrival_time, s.prompt_len)
            };
            if arrival > self.clock {
                break;
            }
            if self.running.len() >= self.cfg.max_decode_batch {
                break;
            }
            let Ok(bucket) = self.cfg.bucket_ladder.select_bucket(prompt_len) else {
                // submit-time validation guarantees a bucket exists
                debug_assert!(false, "waiting request without a bucket");
                break;
            };
            if self.pending_padded + bucket > self.cfg.prefill_token_budget {
                break;
            }
            if !self.pool.can_allocate(blocks_needed(prompt_len, self.cfg.block_size)) {
                break;
            }

            self.waiting.pop_front();
            let table = self
                .pool
                .allocate_sequence(head, prompt_len)
                .expect("gate (c) checked capacity");
            let seq = self.seqs.get_mut(&head).expect("waiting ids are live");
            seq.phase = Phase::Running;
            seq.block_table = table;
            self.running.push(head);
            self.pending_prefill.push(head);
            self.pending_padded += bucket;
            if self.cfg.mode == BatchMode::Static {
                self.static_batch.push(head);
            }
            admitted.push(head);
        }
        admitted
    }

    /// Picks the next step: pending prefills first, then a decode over the
    /// whole running batch, otherwise a clock jump to the next arrival.
    /// `Ok(None)` means every submitted request reached a terminal phase.
    pub fn plan_step(&mut self) -> Result<Option<StepPlan>, EngineError> {
        loop {
            self.admit();
            if !self.pending_prefill.is_empty() {
                let members = std::mem::take(&mut self.pending_prefill);
                let padded_tokens = std::mem::replace(&mut self.pending_padded, 0);
                return Ok(Some(StepPlan::Prefill { members, padded_tokens }));
            }
            if !self.running.is_empty() {
                let total_context =
                    self.running.iter().map(|id| self.seqs[id].context_len()).sum();
                return Ok(Some(StepPlan::Decode {
                    members: self.running.clone(),
                    total_context,
                }));
            }
            let Some(&head) = self.waiting.front() else {
                return Ok(None);
            };
            let arrival = self.seqs[&head].arrival_time;
            if arrival > self.clock {
                self.log.push(EventRecord {
                    time: arrival,
                    event: Event::Jump { from: self.clock },
                });
                self.clock = arrival;
                self.steps_since_progress = 0;
                continue;
            }
            // The engine is idle, so the pool is at its emptiest, and the
            // head still cannot be admitted: its prompt will never fit.
            let needed = blocks_needed(self.seqs[&head].prompt_len, self.cfg.block_size);
            return Err(EngineError::Deadlock(format!(
                "request {head} needs {needed} blocks for its prompt; the pool holds {} in total",
                self.pool.total_blocks()
            )));
        }
    }

    /// Advances the clock to the outcome and applies one emitted token per
    /// member, in plan order: block growth (with preemption on shortage),
    /// ttft capture, and completion handling.
    pub fn apply_outcome(
        &mut self,
        plan: &StepPlan,
        outcome: &StepOutcome,
    ) -> Result<(), EngineError> {
        if outcome.finish_time < self.clock {
            return Err(EngineError::Internal(format!(
                "outcome finishes at {} but the clock is already at {}",
                outcome.finish_time, self.clock
            )));
        }
        self.clock = outcome.finish_time;
        let event = match plan {
            StepPlan::Prefill { members, padded_tokens } => {
                Event::Prefill { members: members.clone(), padded_tokens: *padded_tokens }
            }
            StepPlan::Decode { members, .. } => {
                Event::Decode { members: members.clone(), active: members.len() }
            }
        };
        self.log.push(EventRecord { time: self.clock, event });

        let mut any_finished = false;
        for &id in plan.members() {
            let Some(seq) = self.seqs.get(&id) else {
                return Err(EngineError::Internal(format!("plan member {id} is unknown")));
            };
            // a member preempted by an earlier member of this same outcome
            // gets nothing; its token was never produced
            if seq.phase != Phase::Running {
                continue;
            }
            self.grow_by_one(id)?;
            let seq = self.seqs.get_mut(&id).expect("member is live");
            seq.generated_count += 1;
            if seq.ttft.is_none() {
                seq.ttft = Some(self.clock);
            }
            if seq.generated_count >= seq.target_output_len {
                self.finish(id)?;
                any_finished = true;
            }
        }

        if any_finished {
            self.steps_since_progress = 0;
        } else {
            self.steps_since_progress += 1;
            if self.steps_since_progress > self.stall_limit() {
                return Err(EngineError::Deadlock(format!(
                    "no sequence finished within {} steps: preemption keeps \
                     destroying progress faster than it accumulates (the pool \
                     is too small for this workload)",
                    self.stall_limit()
                )));
            }
        }

        let stats = pool_stats(
            &self.pool,
            self.running.iter().map(|id| &self.seqs[id].block_table),
        );
        self.samples.push(StepSample {
            time: self.clock,
            utilization: stats.utilization,
            internal_frag_tokens: stats.internal_frag_tokens,
        });
        Ok(())
    }

    /// Appends one token slot to `id`, preempting victims until it fits.
    fn grow_by_one(&mut self, id: RequestId) -> Result<(), EngineError> {
        loop {
            let seq = self.seqs.get_mut(&id).expect("growing a live sequence");
            match self.pool.append_token(&mut seq.block_table) {
                Ok(()) => return Ok(()),
                Err(BlockError::OutOfBlocks { .. }) => {}
                Err(e) => return Err(EngineError::Internal(e.to_string())),
            }
            let victim = self
                .running
                .iter()
                .copied()
                .filter(|&v| v != id)
                .max_by_key(|&v| (self.seqs[&v].arrival_time, v));
            match victim {
                Some(v) => self.preempt(v, id)?,
                None => {
                    return Err(EngineError::Deadlock(format!(
                        "sequence {id} needs a block, the pool is exhausted, and no \
                         preemption victim remains"
                    )))
                }
            }
        }
    }

    /// Evicts `victim`: frees its whole table, drops its generated tokens
    /// (recompute-on-return), and puts it at the *front* of the waiting
    /// queue. In static mode the victim also leaves the current batch.
    fn preempt(&mut self, victim: RequestId, trigger: RequestId) -> Result<(), EngineError> {
        let seq = self.seqs.get_mut(&victim).expect("victim is live");
        debug_assert_eq!(seq.phase, Phase::Running);
        let table =
            std::mem::replace(&mut seq.block_table, BlockTable::empty(victim, self.cfg.block_size));
        self.pool
            .free_sequence(table)
            .map_err(|e| EngineError::Internal(format!("freeing victim {victim}: {e}")))?;
        let seq = self.seqs.get_mut(&victim).expect("victim is live");
        seq.phase = Phase::Preempted;
        seq.generated_count = 0;
        seq.preemptions += 1;
        self.running.retain(|&r| r != victim);
        self.static_batch.retain(|&r| r != victim);
        self.waiting.push_front(victim);
        self.log.push(EventRecord { time: self.clock, event: Event::Preempt { victim, trigger } });
        Ok(())
    }

    /// Marks `id` finished at the current clock. Continuous mode frees its
    /// blocks immediately; static mode holds them until the batch drains.
    fn finish(&mut self, id: RequestId) -> Result<(), EngineError> {
        let seq = self.seqs.get_mut(&id).expect("finishing a live sequence");
        seq.phase = Phase::Finished;
        seq.finish_time = Some(self.clock);
        let table =
            std::mem::replace(&mut seq.block_table, BlockTable::empty(id, self.cfg.block_size));
        self.running.retain(|&r| r != id);
        match self.cfg.mode {
            BatchMode::Continuous => self
                .pool
                .free_sequence(table)
                .map_err(|e| EngineError::Internal(format!("freeing finished {id}: {e}"))),
            BatchMode::Static => {
                self.held.push(table);
                let batch_done =
                    self.static_batch.iter().all(|m| self.seqs[m].phase == Phase::Finished);
                if batch_done {
                    let tables: Vec<BlockTable> = self.held.drain(..).collect();
                    for t in tables {
                        self.pool.free_sequence(t).map_err(|e| {
                            EngineError::Internal(format!("releasing static batch: {e}"))
                        })?;
                    }
                    self.static_batch.clear();
                }
                Ok(())
            }
        }
    }

    /// Drives plan / execute / apply until no work remains.
    pub fn run(&mut self) -> Result<(), EngineError> {
        while let Some(plan) = self.plan_step()? {
            let outcome = backend::execute(&plan, &self.cfg.cost_model, self.clock)?;
            self.apply_outcome(&plan, &outcome)?;
        }
        Ok(())
    }

    /// One-shot convenience: submit everything (sorted by arrival, then id),
    /// run to completion, and collect the outputs.
    pub fn run_to_completion(
        cfg: EngineConfig,
        requests: &[Request],
    ) -> Result<RunOutput, EngineError> {
        let mut engine = Engine::new(cfg)?;
        let mut ordered = requests.to_vec();
        ordered.sort_by_key(|r| (r.arrival_time, r.request_id));
        for r in ordered {
            engine.submit(r);
        }
        engine.run()?;
        Ok(engine.into_output())
    }

    /// Report over everything that finished, plus step samples and rejects.
    pub fn build_report(&self) -> MetricsReport {
        let per_request: Vec<RequestRecord> = self
            .seqs
            .values()
            .filter(|s| s.phase == Phase::Finished)
            .map(|s| RequestRecord {
                request_id: s.request_id,
                ttft_cu: s.ttft.expect("finished sequences emitted a token") - s.arrival_time,
                e2e_cu: s.finish_time.expect("finished sequences have an end") - s.arrival_time,
                preemptions: s.preemptions,
                output_tokens: s.generated_count,
            })
            .collect();
        metrics::summarize(per_request, &self.samples, self.rejected.len() as u64, &self.cfg)
    }

    pub fn into_output(self) -> RunOutput {
        let report = self.build_report();
        RunOutput { report, event_log: self.log, rejected: self.rejected }
    }

    // Read-only views, mainly for tests and invariant checks.

    pub fn cfg(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn clock(&self) -> Cu {
        self.clock
    }

    pub fn pool(&self) -> &BlockPool {
        &self.pool
    }

    pub fn event_log(&self) -> &EventLog {
        &self.log
    }

    pub fn samples(&self) -> &[StepSample] {
        &self.samples
    }

    pub fn rejected(&self) -> &[(RequestId, RejectReason)] {
        &self.rejected
    }

    pub fn waiting_ids(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.waiting.iter().copied()
    }

    pub fn running_ids(&self) -> &[RequestId] {
        &self.running
    }

    pub fn sequence(&self, id: RequestId) -> Option<&SequenceState> {
        self.seqs.get(&id)
    }

    pub fn sequences(&self) -> impl Iterator<Item = &SequenceState> {
        self.seqs.values()
    }

    /// Blocks parked for finished static-batch members (0 in continuous mode).
    pub fn held_blocks(&self) -> usize {
        self.held.iter().map(BlockTable::num_blocks).sum()
    }
}
