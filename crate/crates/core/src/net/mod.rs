//! Transports: length-prefixed frames over TCP, and a deterministic
//! in-memory network with scripted faults for scenarios and tests.

pub mod scenario;
pub mod service;
pub mod sim;
pub mod tcp;

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::protocol::Timestamp;

/// Largest accepted frame payload.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("timed out waiting for a frame")]
    Timeout,
    #[error("connection closed")]
    ConnectionClosed,
    #[error("frame of {0} bytes exceeds the 1 MiB limit")]
    FrameTooLarge(usize),
    #[error("no endpoint at {0}")]
    Unreachable(String),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
}

impl NetError {
    pub fn name(&self) -> &'static str {
        match self {
            NetError::Timeout => "Timeout",
            NetError::ConnectionClosed => "ConnectionClosed",
            NetError::FrameTooLarge(_) => "FrameTooLarge",
            NetError::Unreachable(_) => "Unreachable",
            NetError::Io(_) => "IoError",
        }
    }
}

/// A bidirectional, message-oriented connection.
pub trait Connection {
    fn send(&mut self, frame: &[u8]) -> Result<(), NetError>;
    /// Waits up to `timeout_ticks` (seconds on real sockets, harness steps
    /// in simulation) for the next frame.
    fn recv(&mut self, timeout_ticks: u64) -> Result<Vec<u8>, NetError>;
    fn peer(&self) -> String;
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), NetError> {
    if payload.len() > MAX_FRAME {
        return Err(NetError::FrameTooLarge(payload.len()));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, NetError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(NetError::ConnectionClosed),
        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            return Err(NetError::Timeout)
        }
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(NetError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NetError::ConnectionClosed,
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => NetError::Timeout,
        _ => NetError::Io(e),
    })?;
    Ok(payload)
}

/// Source of `now` for protocol calls.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock in Unix seconds, shifted by `offset`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock {
    pub offset: i64,
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        secs.saturating_add_signed(self.offset)
    }
}

/// Logical clock shared between the harness and everything it drives.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(Arc::new(AtomicU64::new(start)))
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }
}
