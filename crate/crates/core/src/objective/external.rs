//! Objectives computed by a long-lived worker process speaking one JSON
//! object per line over stdin/stdout.
//!
//! Request:  `{"id": 7, "params": {"lr": 0.01, "layers": 3}}`
//! Response: `{"id": 7, "status": "ok", "objective": 0.25}` or
//!           `{"id": 7, "status": "error", "message": "..."}`
//!
//! Integer parameters are sent as JSON integers. A worker that times out is
//! killed and a fresh one is started for the next request; one that exits
//! is restarted the same way.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Objective, Outcome};
use crate::error::Result;
use crate::space::{Configuration, ParamKind, SearchSpace};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Request {
    pub fn new(id: u64, space: &SearchSpace, raw: &[f64]) -> Self {
        let params = space
            .params()
            .iter()
            .zip(raw)
            .map(|(p, &v)| {
                let value = match p.kind {
                    ParamKind::Integer => Value::from(v.round() as i64),
                    ParamKind::Continuous => Value::from(v),
                };
                (p.name.clone(), value)
            })
            .collect();
        Request { id, params }
    }
}

impl Response {
    /// Interpret a response to request `id`.
    pub fn outcome(&self, id: u64) -> Outcome {
        if self.id != id {
            return Outcome::Failed(format!("response id {} does not match request id {id}", self.id));
        }
        match (self.status, self.objective) {
            (ResponseStatus::Ok, Some(v)) if v.is_finite() => Outcome::Ok(v),
            (ResponseStatus::Ok, Some(v)) => Outcome::Failed(format!("non-finite objective {v}")),
            (ResponseStatus::Ok, None) => Outcome::Failed("ok response without objective".into()),
            (ResponseStatus::Error, _) => Outcome::Failed(
                self.message.clone().unwrap_or_else(|| "worker reported an error".into()),
            ),
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, lines })
    }

    fn shutdown(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalObjective {
    command: String,
    space: SearchSpace,
    timeout: Duration,
    worker: Option<Worker>,
    next_id: u64,
}

impl ExternalObjective {
    pub fn spawn(command: &str, space: SearchSpace, timeout: Duration) -> Result<Self> {
        Ok(ExternalObjective {
            command: command.to_string(),
            space,
            timeout,
            worker: Some(Worker::spawn(command)?),
            next_id: 0,
        })
    }

    fn exchange(&mut self, request: &Request) -> Outcome {
        if self.worker.is_none() {
            match Worker::spawn(&self.command) {
                Ok(w) => self.worker = Some(w),
                Err(e) => return Outcome::Failed(format!("cannot start worker: {e}")),
            }
        }
        let worker = self.worker.as_mut().expect("worker present");
        let line = serde_json::to_string(request).expect("request serializes");
        if let Err(e) = writeln!(worker.stdin, "{line}").and_then(|_| worker.stdin.flush()) {
            return self.fail(format!("cannot write to worker: {e}"));
        }
        match worker.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => match serde_json::from_str::<Response>(&line) {
                Ok(resp) => resp.outcome(request.id),
                Err(e) => Outcome::Failed(format!("malformed response `{}`: {e}", line.trim())),
            },
            Ok(Err(e)) => self.fail(format!("cannot read from worker: {e}")),
            Err(RecvTimeoutError::Timeout) => {
                self.fail(format!("timeout after {:.3} s", self.timeout.as_secs_f64()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let mut w = self.worker.take().expect("worker present");
                let status = w.child.wait();
                let reason = match status {
                    Ok(s) => format!("worker exited ({s})"),
                    Err(e) => format!("worker exited: {e}"),
                };
                Outcome::Failed(reason)
            }
        }
    }

    fn fail(&mut self, reason: String) -> Outcome {
        if let Some(w) = self.worker.take() {
            w.shutdown();
        }
        Outcome::Failed(reason)
    }
}

impl Objective for ExternalObjective {
    fn evaluate(&mut self, config: &Configuration) -> Outcome {
        let request = Request::new(self.next_id, &self.space, &config.raw);
        self.next_id += 1;
        self.exchange(&request)
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            w.shutdown();
        }
    }
}
