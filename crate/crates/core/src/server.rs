//! Line-delimited JSON batch service over local TCP.
//!
//! Protocol, one JSON object per line:
//!
//! - submit:    `{"id":1,"prompt_tokens":100,"output_tokens":4,"arrival_offset_cu":0}`
//! - run:       `{"cmd":"run"}` answers one result line per submitted request
//!   in ascending id order, then `{"done":<count>}`. Results look like
//!   `{"id":1,"variant":"A","ttft_cu":256,"e2e_cu":410}`, or
//!   `{"id":9,"variant":"A","rejected":"prompt_exceeds_max_bucket"}`.
//! - shutdown:  `{"cmd":"shutdown"}` answers `{"bye":true}`, closes the
//!   connection, and stops the accept loop.
//!
//! Malformed lines answer `{"error":"..."}` and the connection continues. A
//! run that fails inside an engine answers a single `{"error":"..."}` line.
//! Each `run` consumes the batch submitted since the previous run. In
//! ab-split mode results carry the variant that served the request; in
//! shadow mode every result comes from the authoritative A run.

use crate::gateway::{self, GatewayError, SplitConfig, SplitMode, Variant};
use crate::types::Request;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

/// Accepts connections one at a time until a client sends `shutdown`.
/// Single-threaded on purpose: results stay deterministic.
pub fn serve(listener: TcpListener, split: &SplitConfig) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        if handle_connection(stream, split)? == Flow::Shutdown {
            break;
        }
    }
    Ok(())
}

#[derive(PartialEq, Eq)]
enum Flow {
    KeepServing,
    Shutdown,
}

fn handle_connection(stream: TcpStream, split: &SplitConfig) -> io::Result<Flow> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let mut batch: Vec<Request> = Vec::new();

    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => break, // client went away mid-line
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(ClientMsg::Submit(request)) => batch.push(request),
            Ok(ClientMsg::Run) => {
                let requests = std::mem::take(&mut batch);
                match run_batch(&requests, split) {
                    Ok(results) => {
                        let count = results.len();
                        for r in results {
                            writeln!(writer, "{r}")?;
                        }
                        writeln!(writer, "{}", json!({ "done": count }))?;
                    }
                    Err(e) => writeln!(writer, "{}", json!({ "error": e.to_string() }))?,
                }
            }
            Ok(ClientMsg::Shutdown) => {
                writeln!(writer, "{}", json!({ "bye": true }))?;
                return Ok(Flow::Shutdown);
            }
            Err(msg) => writeln!(writer, "{}", json!({ "error": msg }))?,
        }
    }
    Ok(Flow::KeepServing)
}

enum ClientMsg {
    Submit(Request),
    Run,
    Shutdown,
}

fn parse_line(line: &str) -> Result<ClientMsg, String> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    if let Some(cmd) = obj.get("cmd") {
        return match cmd.as_str() {
            Some("run") => Ok(ClientMsg::Run),
            Some("shutdown") => Ok(ClientMsg::Shutdown),
            _ => Err(format!("unknown cmd {cmd}")),
        };
    }
    let field = |name: &str| -> Result<u64, String> {
        obj.get(name)
            .and_then(Value::as_u64)
            .ok_or_else(|| format!("missing or non-integer field `{name}`"))
    };
    Ok(ClientMsg::Submit(Request {
        request_id: field("id")?,
        arrival_time: field("arrival_offset_cu")?,
        prompt_len: field("prompt_tokens")? as usize,
        target_output_len: field("output_tokens")? as usize,
    }))
}

/// Runs the batch through the gateway and renders per-request result lines
/// in ascending id order.
fn run_batch(requests: &[Request], split: &SplitConfig) -> Result<Vec<String>, GatewayError> {
    let output = gateway::dispatch_workload(requests, split)?;
    let mut results: BTreeMap<u64, String> = BTreeMap::new();

    let mut collect = |run: &crate::engine::RunOutput, variant: Variant| {
        for row in &run.report.per_request {
            results.insert(
                row.request_id,
                json!({
                    "id": row.request_id,
                    "variant": variant.to_string(),
                    "ttft_cu": row.ttft_cu,
                    "e2e_cu": row.e2e_cu,
                })
                .to_string(),
            );
        }
        for (id, reason) in &run.rejected {
            results.insert(
                *id,
                json!({
                    "id": id,
                    "variant": variant.to_string(),
                    "rejected": reason.slug(),
                })
                .to_string(),
            );
        }
    };

    match split.mode {
        SplitMode::Shadow => collect(&output.a, Variant::A),
        SplitMode::AbSplit => {
            collect(&output.a, Variant::A);
            collect(&output.b, Variant::B);
        }
    }
    Ok(results.into_values().collect())
}
