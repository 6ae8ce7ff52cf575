//! Reference implementation of the external analyzer protocol, backed by the
//! builtin rules. Fault modes exist to exercise the runner's error handling.
//!
//! usage: reduct-analyzer-stub [--rules all|R1,R2] [--mode normal|malformed|hang|crash]
//!                             [--fail-after N] [--no-provenance]

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use reduct_core::oracle::builtin;
use reduct_core::oracle::RuleSet;
use reduct_core::SourceText;
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Normal,
    Malformed,
    Hang,
    Crash,
}

struct Opts {
    rules: RuleSet,
    mode: Mode,
    // Misbehave only after this many well-formed answers.
    fail_after: usize,
    provenance: bool,
}

fn parse_args() -> Result<Opts, String> {
    let mut opts = Opts {
        rules: RuleSet::all(),
        mode: Mode::Normal,
        fail_after: 0,
        provenance: true,
    };
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = || args.next().ok_or_else(|| format!("{a} needs a value"));
        match a.as_str() {
            "--rules" => opts.rules = value()?.parse()?,
            "--mode" => {
                opts.mode = match value()?.as_str() {
                    "normal" => Mode::Normal,
                    "malformed" => Mode::Malformed,
                    "hang" => Mode::Hang,
                    "crash" => Mode::Crash,
                    other => return Err(format!("unknown mode {other}")),
                }
            }
            "--fail-after" => opts.fail_after = value()?.parse().map_err(|e| format!("{e}"))?,
            "--no-provenance" => opts.provenance = false,
            other => return Err(format!("unknown argument {other}")),
        }
    }
    Ok(opts)
}

fn answer(opts: &Opts, req: &Value) -> Value {
    match req.get("op").and_then(Value::as_str) {
        Some("ping") => json!({"v": 1, "pong": true}),
        Some("analyze") => {
            let code = req.get("code").and_then(Value::as_str).unwrap_or_default();
            let mut reports = builtin::run(&opts.rules, &SourceText::new(code));
            if !opts.provenance {
                for r in &mut reports {
                    r.provenance_lines = None;
                }
            }
            json!({"v": 1, "reports": reports})
        }
        _ => json!({"v": 1, "error": "unknown op"}),
    }
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("reduct-analyzer-stub: {e}");
            return ExitCode::from(64);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut served = 0usize;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("reduct-analyzer-stub: bad request: {e}");
                return ExitCode::from(65);
            }
        };
        let misbehave = served >= opts.fail_after;
        let reply = match opts.mode {
            _ if !misbehave => answer(&opts, &req).to_string(),
            Mode::Normal => answer(&opts, &req).to_string(),
            Mode::Malformed => "{\"v\":1,\"reports\":[{\"rule\":".to_owned(),
            Mode::Hang => loop {
                std::thread::park();
            },
            Mode::Crash => return ExitCode::from(70),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
        served += 1;
    }
    ExitCode::SUCCESS
}
