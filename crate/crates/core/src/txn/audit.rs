use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Severity;

/// One line of the transaction audit log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub txn: u64,
    /// Step index within the transaction, or `None` for lifecycle events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub event: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub command: String,
    pub mu_before: Severity,
    pub mu_after: Severity,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

/// Append-only JSON-lines log, kept in memory and optionally mirrored to a
/// file.
#[derive(Debug, Default)]
pub struct AuditLog {
    lines: Vec<String>,
    sink: Option<BufWriter<File>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> io::Result<Self> {
        Ok(AuditLog { lines: Vec::new(), sink: Some(BufWriter::new(File::create(path)?)) })
    }

    pub fn record(&mut self, rec: &AuditRecord) {
        let line = serde_json::to_string(rec).expect("audit records serialize");
        if let Some(sink) = &mut self.sink {
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                log::error!("audit log write failed: {e}");
            }
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.lines.iter().map(|l| serde_json::from_str(l).expect("lines were written by record")).collect()
    }
}
