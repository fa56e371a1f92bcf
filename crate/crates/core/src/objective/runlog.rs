//! Append-only JSONL run log.
//!
//! The first line is `{"header": {...}}` with the space, run configuration,
//! seed and objective; every following line is one [`EvaluationRecord`],
//! written and flushed before the optimizer moves on.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvaluationRecord;
use crate::error::{Error, Result};
use crate::optimizer::RunConfig;
use crate::space::SearchSpace;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub objective: String,
    pub seed: u64,
    pub space: SearchSpace,
    pub config: RunConfig,
}

impl LogHeader {
    pub fn new(objective: &str, space: &SearchSpace, config: &RunConfig) -> Self {
        LogHeader {
            version: LOG_VERSION,
            objective: objective.to_string(),
            seed: config.seed,
            space: space.clone(),
            config: config.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: LogHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub header: LogHeader,
    pub records: Vec<EvaluationRecord>,
    /// Byte length of the intact prefix.
    valid_len: u64,
}

/// Read a run log. An empty file yields `None`; a corrupt final line is
/// dropped with a warning; any other corrupt line is an error.
pub fn log_replay(path: impl AsRef<Path>) -> Result<Option<Replay>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = Vec::new();
    let mut offset = 0;
    for piece in text.split_inclusive('\n') {
        offset += piece.len();
        if !piece.trim().is_empty() {
            lines.push((piece.trim_end(), offset));
        }
    }
    let replay_err = |line: usize, message: String| Error::Replay {
        path: PathBuf::from(path),
        line,
        message,
    };

    let mut header: Option<LogHeader> = None;
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let last = lines.len().saturating_sub(1);
    for (i, (line, end)) in lines.iter().enumerate() {
        let parsed = if i == 0 {
            serde_json::from_str::<HeaderLine>(line).map(|h| header = Some(h.header))
        } else {
            serde_json::from_str::<EvaluationRecord>(line).map(|r| records.push(r))
        };
        match parsed {
            Ok(()) => valid_len = *end as u64,
            Err(e) if i == last => {
                log::warn!("{}: ignoring corrupt final line {}: {e}", path.display(), i + 1);
            }
            Err(e) => return Err(replay_err(i + 1, e.to_string())),
        }
    }
    let Some(header) = header else {
        return Ok(None);
    };
    for (k, r) in records.iter().enumerate() {
        if r.index != k {
            return Err(replay_err(k + 2, format!("expected record index {k}, found {}", r.index)));
        }
        if r.unit.len() != header.space.dim() {
            return Err(replay_err(k + 2, "record dimension does not match the space".into()));
        }
        if r.status == super::Status::Ok && !r.value.is_some_and(f64::is_finite) {
            return Err(replay_err(k + 2, "ok record without a finite value".into()));
        }
    }
    Ok(Some(Replay {
        header,
        records,
        valid_len,
    }))
}

/// Writer owned by the optimization loop.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    /// Start a new log, replacing any existing file.
    pub fn create(path: impl AsRef<Path>, header: &LogHeader) -> Result<Self> {
        let file = File::create(path)?;
        let mut log = RunLog {
            out: BufWriter::new(file),
        };
        log.write_line(&HeaderLine { header: header.clone() })?;
        Ok(log)
    }

    /// Continue after a replay, discarding any corrupt tail first.
    pub fn resume(path: impl AsRef<Path>, replay: &Replay) -> Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(replay.valid_len)?;
        let mut out = BufWriter::new(file);
        use std::io::Seek;
        out.seek(std::io::SeekFrom::End(0))?;
        Ok(RunLog { out })
    }

    pub fn log_append(&mut self, record: &EvaluationRecord) -> Result<()> {
        self.write_line(record)
    }

    fn write_line(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
