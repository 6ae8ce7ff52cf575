//! External analyzer over a persistent child process, one JSON object per
//! line in each direction.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{AnalyzerConfig, AnalyzerError, Report};

pub(crate) struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Process {
    fn spawn(command: &str, args: &[String]) -> Result<Self, AnalyzerError> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| AnalyzerError::Spawn {
                command: command.to_owned(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        log::debug!("started external analyzer `{command}` (pid {})", child.id());
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exchange(&mut self, request: &Value, config: &AnalyzerConfig) -> Result<Value, AnalyzerError> {
        let mut buf = serde_json::to_vec(request).expect("requests serialize");
        buf.push(b'\n');
        if let Err(e) = self.stdin.write_all(&buf).and_then(|_| self.stdin.flush()) {
            return Err(self.exit_error(e.to_string()));
        }
        let line = match self.lines.recv_timeout(config.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.exit_error(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(AnalyzerError::Timeout(config.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(self.exit_error("closed its output".into())),
        };
        serde_json::from_str(&line).map_err(|e| AnalyzerError::Malformed(format!("{e}: {line}")))
    }

    fn exit_error(&mut self, detail: String) -> AnalyzerError {
        match self.child.try_wait() {
            Ok(Some(status)) => AnalyzerError::Exited(status.to_string()),
            _ => AnalyzerError::Exited(detail),
        }
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Send `request`, restarting the child after a failure up to
/// `max_restarts` times. The last error is returned when all attempts fail.
fn call(
    process: &mut Option<Process>,
    command: &str,
    args: &[String],
    config: &AnalyzerConfig,
    request: &Value,
    check: impl Fn(&Value) -> Result<(), String>,
) -> Result<Value, AnalyzerError> {
    let mut restarts = 0;
    loop {
        if process.is_none() {
            *process = Some(Process::spawn(command, args)?);
        }
        let proc = process.as_mut().expect("just spawned");
        let result = proc
            .exchange(request, config)
            .and_then(|v| check(&v).map(|_| v).map_err(AnalyzerError::Malformed));
        match result {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::warn!("external analyzer failed: {e}");
                *process = None;
                if restarts >= config.max_restarts {
                    return Err(e);
                }
                restarts += 1;
            }
        }
    }
}

fn check_version(v: &Value) -> Result<(), String> {
    match v.get("v").and_then(Value::as_u64) {
        Some(1) => Ok(()),
        _ => Err(format!("missing or unsupported protocol version in {v}")),
    }
}

#[derive(Deserialize)]
struct AnalyzeResponse {
    reports: Vec<Report>,
}

pub(crate) fn analyze(
    process: &mut Option<Process>,
    command: &str,
    args: &[String],
    config: &AnalyzerConfig,
    code: &str,
) -> Result<Vec<Report>, AnalyzerError> {
    let max_line = code.lines().count().max(1) as u32;
    let parse = |v: &Value| -> Result<Vec<Report>, String> {
        check_version(v)?;
        let resp = AnalyzeResponse::deserialize(v).map_err(|e| e.to_string())?;
        for r in &resp.reports {
            if r.line == 0 || r.line > max_line {
                return Err(format!("report line {} outside 1..={max_line}", r.line));
            }
        }
        Ok(resp.reports)
    };
    let request = json!({"v": 1, "op": "analyze", "code": code});
    let v = call(process, command, args, config, &request, |v| parse(v).map(|_| ()))?;
    let mut reports = parse(&v).expect("validated above");
    for r in &mut reports {
        if let Some(p) = &mut r.provenance_lines {
            p.insert(r.line);
        }
    }
    Ok(reports)
}

pub(crate) fn ping(
    process: &mut Option<Process>,
    command: &str,
    args: &[String],
    config: &AnalyzerConfig,
) -> Result<(), AnalyzerError> {
    let request = json!({"v": 1, "op": "ping"});
    call(process, command, args, config, &request, |v| {
        check_version(v)?;
        match v.get("pong") {
            Some(Value::Bool(true)) => Ok(()),
            _ => Err(format!("expected pong, got {v}")),
        }
    })
    .map(|_| ())
}
