use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The two agents allowed to hold the write side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Writer {
    /// α_M, the mitigation agent.
    Mitigation,
    /// α_U, the undo agent.
    Undo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LockMode {
    Free,
    Read(usize),
    Write(Writer),
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum LockError {
    #[error("write lock is held by {0:?}")]
    LockHeld(Writer),
    #[error("{0} reader(s) hold the lock")]
    ReadersActive(usize),
    #[error("{expected:?} does not hold the write lock (mode is {actual:?})")]
    NotHolder { expected: Writer, actual: LockMode },
}

/// Readers-writer lock over the environment. Non-blocking: every acquisition
/// either succeeds immediately or reports who is in the way.
#[derive(Debug)]
pub struct ALock {
    mode: Mutex<LockMode>,
}

impl Default for ALock {
    fn default() -> Self {
        ALock { mode: Mutex::new(LockMode::Free) }
    }
}

/// Shared read access; released on drop.
#[derive(Debug)]
pub struct ReadGuard<'a> {
    lock: &'a ALock,
}

impl Drop for ReadGuard<'_> {
    fn drop(&mut self) {
        let mut mode = self.lock.guard();
        *mode = match *mode {
            LockMode::Read(n) if n > 1 => LockMode::Read(n - 1),
            _ => LockMode::Free,
        };
    }
}

impl ALock {
    pub fn new() -> Self {
        Self::default()
    }

    fn guard(&self) -> MutexGuard<'_, LockMode> {
        self.mode.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn mode(&self) -> LockMode {
        *self.guard()
    }

    pub fn try_read(&self) -> Result<ReadGuard<'_>, LockError> {
        let mut mode = self.guard();
        *mode = match *mode {
            LockMode::Free => LockMode::Read(1),
            LockMode::Read(n) => LockMode::Read(n + 1),
            LockMode::Write(w) => return Err(LockError::LockHeld(w)),
        };
        Ok(ReadGuard { lock: self })
    }

    pub fn try_write(&self, writer: Writer) -> Result<(), LockError> {
        let mut mode = self.guard();
        match *mode {
            LockMode::Free => {
                *mode = LockMode::Write(writer);
                Ok(())
            }
            LockMode::Read(n) => Err(LockError::ReadersActive(n)),
            LockMode::Write(w) => Err(LockError::LockHeld(w)),
        }
    }

    /// Passes the write side from `from` to `to` without releasing it.
    pub fn handoff(&self, from: Writer, to: Writer) -> Result<(), LockError> {
        let mut mode = self.guard();
        match *mode {
            LockMode::Write(w) if w == from => {
                *mode = LockMode::Write(to);
                Ok(())
            }
            actual => Err(LockError::NotHolder { expected: from, actual }),
        }
    }

    pub fn release(&self, writer: Writer) -> Result<(), LockError> {
        let mut mode = self.guard();
        match *mode {
            LockMode::Write(w) if w == writer => {
                *mode = LockMode::Free;
                Ok(())
            }
            actual => Err(LockError::NotHolder { expected: writer, actual }),
        }
    }
}
