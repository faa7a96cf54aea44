//! Adapter for a policy running in another process.
//!
//! Wire format: each message is a frame of a 4-byte big-endian length
//! followed by that many bytes of UTF-8 JSON. The orchestrator sends one
//! [`PolicyRequest`] per round and reads one [`MitigationPlan`] back.

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command as Process, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_plan, MitigationPlan, ObservationBundle, Policy, PolicyError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Frames above this size are treated as a protocol error.
const MAX_FRAME: u32 = 16 << 20;

/// Length-prefixed frame codec.
pub struct Frame;

impl Frame {
    pub fn write(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
        let len = u32::try_from(payload.len())
            .ok()
            .filter(|n| *n <= MAX_FRAME)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(payload)?;
        w.flush()
    }

    /// Reads one frame; `None` on a clean end of stream.
    pub fn read(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
        let mut header = [0u8; 4];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(header);
        if len > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Some(payload))
    }
}

/// The request document sent each round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub attempt: usize,
    pub window: usize,
    pub observation: ObservationBundle,
}

pub struct ExternalPolicy {
    writer: Box<dyn Write + Send>,
    responses: Receiver<io::Result<Vec<u8>>>,
    timeout: Duration,
    window: usize,
    child: Option<Child>,
}

impl ExternalPolicy {
    /// Speaks the protocol over an arbitrary byte stream pair.
    pub fn over(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
        window: usize,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        let mut reader = reader;
        thread::spawn(move || loop {
            match Frame::read(&mut reader) {
                Ok(Some(frame)) => {
                    if tx.send(Ok(frame)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        });
        ExternalPolicy { writer: Box::new(writer), responses: rx, timeout, window, child: None }
    }

    /// Starts `program` and speaks the protocol over its stdin and stdout.
    pub fn spawn(program: &str, args: &[String], timeout: Duration, window: usize) -> io::Result<Self> {
        let mut child = Process::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdout = child.stdout.take().expect("piped");
        let stdin: ChildStdin = child.stdin.take().expect("piped");
        let mut policy = ExternalPolicy::over(stdout, stdin, timeout, window);
        policy.child = Some(child);
        Ok(policy)
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &str {
        "external"
    }

    fn propose(&mut self, obs: &ObservationBundle, attempt: usize) -> Result<MitigationPlan, PolicyError> {
        // A reply that arrived after an earlier timeout belongs to that round.
        while self.responses.try_recv().is_ok() {}

        let request = PolicyRequest { attempt, window: self.window, observation: obs.clone() };
        let body = serde_json::to_vec(&request).expect("observations serialize");
        Frame::write(&mut self.writer, &body).map_err(|e| PolicyError::Io(e.to_string()))?;

        let frame = match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => frame,
            Ok(Err(e)) => return Err(PolicyError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(PolicyError::ProtocolTimeout(self.timeout.as_millis())),
            Err(RecvTimeoutError::Disconnected) => return Err(PolicyError::Io("policy closed its output".into())),
        };
        let text = String::from_utf8(frame).map_err(|_| PolicyError::MalformedPlan("response is not UTF-8".into()))?;
        let plan: MitigationPlan =
            serde_json::from_str(&text).map_err(|e| PolicyError::MalformedPlan(format!("response is not a plan: {e}")))?;
        validate_plan(&plan, self.window)?;
        Ok(plan)
    }
}
