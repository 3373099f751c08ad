//! Command-line behaviour beyond the acceptance pipeline: flag validation,
//! trace/inline equivalence, CSV output, and the TCP serve loop.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_servesim")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn servesim")
}

fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 temp path").to_string()
}

/// Inline generator spec used by several tests; must match `gen_args`.
const INLINE_WORKLOAD: &str = "workload.seed = 5\n\
     workload.n_requests = 40\n\
     workload.arrival = poisson\n\
     workload.rate_per_mcu = 200\n\
     workload.prompt_lo = 20\n\
     workload.prompt_hi = 600\n\
     workload.output_lo = 1\n\
     workload.output_hi = 40\n";

fn gen_args(out: &str) -> Vec<String> {
    [
        "gen",
        "--seed",
        "5",
        "--n",
        "40",
        "--rate",
        "200",
        "--prompt-min",
        "20",
        "--prompt-max",
        "600",
        "--output-min",
        "1",
        "--output-max",
        "40",
        "--out",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn write_conf(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    path_str(&p)
}

#[test]
fn seed_override_is_refused_for_trace_replays() {
    let dir = tempfile::tempdir().unwrap();
    let trace = path_str(&dir.path().join("t.csv"));
    let gen: Vec<String> = gen_args(&trace);
    let gen_refs: Vec<&str> = gen.iter().map(String::as_str).collect();
    assert_eq!(run(&gen_refs).status.code(), Some(0));

    let cfg = write_conf(dir.path(), "engine.conf", "engine.total_blocks = 512\n");
    let out = run(&["run", "--config", &cfg, "--trace", &trace, "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trace"), "stderr should explain the conflict: {err}");
}

#[test]
fn seed_override_changes_a_generated_workload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_conf(dir.path(), "inline.conf", INLINE_WORKLOAD);
    let r5 = path_str(&dir.path().join("r5.json"));
    let r6 = path_str(&dir.path().join("r6.json"));
    assert_eq!(run(&["run", "--config", &cfg, "--out", &r5]).status.code(), Some(0));
    assert_eq!(
        run(&["run", "--config", &cfg, "--out", &r6, "--seed", "6"]).status.code(),
        Some(0)
    );
    let b5 = std::fs::read(&r5).unwrap();
    let b6 = std::fs::read(&r6).unwrap();
    assert_ne!(b5, b6, "a different seed must produce a different run");
}

#[test]
fn b_weight_outside_the_unit_interval_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_conf(
        dir.path(),
        "cmp.conf",
        &format!("split.mode = shadow\n{INLINE_WORKLOAD}"),
    );
    let out = run(&["compare", "--config", &cfg, "--b-weight", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("b_weight"), "stderr should name the bad key: {err}");
}

#[test]
fn trace_replay_reproduces_the_inline_generator_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();

    let inline_cfg = write_conf(dir.path(), "inline.conf", INLINE_WORKLOAD);
    let r_inline = path_str(&dir.path().join("inline.json"));
    assert_eq!(
        run(&["run", "--config", &inline_cfg, "--out", &r_inline]).status.code(),
        Some(0)
    );

    let trace = path_str(&dir.path().join("t.csv"));
    let gen: Vec<String> = gen_args(&trace);
    let gen_refs: Vec<&str> = gen.iter().map(String::as_str).collect();
    assert_eq!(run(&gen_refs).status.code(), Some(0));

    let engine_cfg = write_conf(dir.path(), "engine.conf", "output.format = json\n");
    let r_trace = path_str(&dir.path().join("trace.json"));
    assert_eq!(
        run(&["run", "--config", &engine_cfg, "--trace", &trace, "--out", &r_trace])
            .status
            .code(),
        Some(0)
    );

    assert_eq!(
        std::fs::read(&r_inline).unwrap(),
        std::fs::read(&r_trace).unwrap(),
        "replaying the saved trace must reproduce the inline run exactly"
    );
}

#[test]
fn csv_reports_carry_one_row_per_finished_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_conf(dir.path(), "inline.conf", INLINE_WORKLOAD);
    let out_path = path_str(&dir.path().join("report.csv"));
    assert_eq!(
        run(&["run", "--config", &cfg, "--out", &out_path, "--format", "csv"]).status.code(),
        Some(0)
    );
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("request_id,ttft_cu,e2e_cu,preemptions,output_tokens"));
    assert_eq!(lines.count(), 40, "40 generated requests, none rejectable at these lengths");
}

/// Kills the server if an assertion fails before the clean shutdown.
struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_the_line_protocol_and_exits_on_shutdown() {
    let mut child = KillOnDrop(
        Command::new(bin())
            .args(["serve", "--port", "0", "--mode", "ab", "--b-weight", "0.3"])
            .stderr(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()
            .expect("spawn serve"),
    );

    // The ephemeral port is announced on stderr as "listening on HOST:PORT".
    let stderr = child.0.stderr.take().expect("piped stderr");
    let mut announce = String::new();
    BufReader::new(stderr).read_line(&mut announce).expect("read announce line");
    let addr = announce.trim().strip_prefix("listening on ").expect("announce format").to_string();

    let stream = TcpStream::connect(&addr).expect("connect");
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    writer
        .write_all(
            b"{\"id\":0,\"prompt_tokens\":100,\"output_tokens\":4,\"arrival_offset_cu\":0}\n\
              {\"id\":1,\"prompt_tokens\":100,\"output_tokens\":2,\"arrival_offset_cu\":0}\n\
              {\"cmd\":\"run\"}\n",
        )
        .unwrap();

    let mut line = String::new();
    let next = |reader: &mut BufReader<TcpStream>, line: &mut String| {
        line.clear();
        reader.read_line(line).expect("read response");
        serde_json::from_str::<serde_json::Value>(line).expect("response is JSON")
    };

    // The two-request golden schedule, served over the wire: ids 0 and 1
    // both hash to variant A at weight 0.3.
    let r0 = next(&mut reader, &mut line);
    assert_eq!(r0["id"], 0);
    assert_eq!(r0["variant"], "A");
    assert_eq!(r0["ttft_cu"], 256);
    assert_eq!(r0["e2e_cu"], 410);
    let r1 = next(&mut reader, &mut line);
    assert_eq!(r1["id"], 1);
    assert_eq!(r1["ttft_cu"], 256);
    assert_eq!(r1["e2e_cu"], 308);
    let done = next(&mut reader, &mut line);
    assert_eq!(done["done"], 2);

    writer.write_all(b"{\"cmd\":\"shutdown\"}\n").unwrap();
    let bye = next(&mut reader, &mut line);
    assert_eq!(bye["bye"], true);

    let status = child.0.wait().expect("server exits");
    assert_eq!(status.code(), Some(0));
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["run", "--help"][..]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn missing_workload_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_conf(dir.path(), "bare.conf", "engine.total_blocks = 64\n");
    let out = run(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("workload"), "stderr should point at the missing keys: {err}");
}
