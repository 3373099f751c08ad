//! Append-only engine event log with a line-oriented text rendering.
//!
//! Line grammar, space separated:
//!
//! ```text
//! <time_cu> <kind> <member_ids> <detail>
//! ```
//!
//! `member_ids` is a comma-separated id list, or `-` when the event has no
//! members. `detail` is a single `key=value` token. Examples:
//!
//! ```text
//! 256 prefill 0,1 padded=256
//! 308 decode 0,1 active=2
//! 3163 preempt 7 trigger=3
//! 0 reject 9 reason=prompt_exceeds_max_bucket
//! 900 jump - from=300
//! ```

use crate::types::{Cu, RequestId};
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Prefill { members: Vec<RequestId>, padded_tokens: usize },
    Decode { members: Vec<RequestId>, active: usize },
    Preempt { victim: RequestId, trigger: RequestId },
    Reject { request: RequestId, reason: &'static str },
    /// Idle clock jump to the next arrival; the record's `time` is the jump
    /// target, `from` the clock before the jump.
    Jump { from: Cu },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub time: Cu,
    pub event: Event,
}

impl EventRecord {
    pub fn render(&self) -> String {
        let mut line = String::new();
        let _ = write!(line, "{} ", self.time);
        match &self.event {
            Event::Prefill { members, padded_tokens } => {
                let _ = write!(line, "prefill {} padded={padded_tokens}", join_ids(members));
            }
            Event::Decode { members, active } => {
                let _ = write!(line, "decode {} active={active}", join_ids(members));
            }
            Event::Preempt { victim, trigger } => {
                let _ = write!(line, "preempt {victim} trigger={trigger}");
            }
            Event::Reject { request, reason } => {
                let _ = write!(line, "reject {request} reason={reason}");
            }
            Event::Jump { from } => {
                let _ = write!(line, "jump - from={from}");
            }
        }
        line
    }
}

fn join_ids(ids: &[RequestId]) -> String {
    if ids.is_empty() {
        return "-".to_string();
    }
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{id}");
    }
    out
}

/// The full run history, in the order things happened.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EventRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One line per record, each terminated by a newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }
}
