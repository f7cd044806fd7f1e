//! Transport-independent server and client plumbing.

use std::sync::Arc;

use rand::RngCore;

use super::{Connection, NetError};
use crate::client::KdcTransport;
use crate::kdc::{Kdc, KdcEndpoint};
use crate::protocol::Timestamp;

/// What a session did with one incoming frame.
#[derive(Debug, Default)]
pub struct FrameOutcome {
    pub replies: Vec<Vec<u8>>,
    pub close: bool,
    /// Name of the error the server hit, if any.
    pub error: Option<String>,
}

impl FrameOutcome {
    pub fn reply(frame: Vec<u8>) -> Self {
        Self {
            replies: vec![frame],
            ..Self::default()
        }
    }

    pub fn fail(name: &str) -> Self {
        Self {
            replies: Vec::new(),
            close: true,
            error: Some(name.to_string()),
        }
    }
}

/// A server: hands out one session per accepted connection.
pub trait FrameService: Send + Sync {
    fn open(&self, peer: &str) -> Box<dyn FrameSession>;
}

/// Per-connection server state.
pub trait FrameSession: Send {
    fn on_frame(&mut self, frame: &[u8], now: Timestamp, rng: &mut dyn RngCore) -> FrameOutcome;
}

/// One KDC endpoint served over frames.
pub struct KdcService {
    pub kdc: Arc<Kdc>,
    pub endpoint: KdcEndpoint,
}

struct KdcSession {
    kdc: Arc<Kdc>,
    endpoint: KdcEndpoint,
    peer: String,
}

impl FrameService for KdcService {
    fn open(&self, peer: &str) -> Box<dyn FrameSession> {
        Box::new(KdcSession {
            kdc: self.kdc.clone(),
            endpoint: self.endpoint,
            peer: peer.to_string(),
        })
    }
}

impl FrameSession for KdcSession {
    fn on_frame(&mut self, frame: &[u8], now: Timestamp, rng: &mut dyn RngCore) -> FrameOutcome {
        let (reply, result) = self.kdc.handle_frame(self.endpoint, frame, &self.peer, now, rng);
        FrameOutcome {
            replies: vec![reply],
            close: false,
            error: result.err().map(|e| e.name().to_string()),
        }
    }
}

/// Opens connections by address.
pub trait Dialer {
    fn dial(&mut self, addr: &str) -> Result<Box<dyn Connection>, NetError>;
}

/// KDC access over a [`Dialer`], one connection per exchange.
pub struct NetKdc<'a> {
    pub dialer: &'a mut dyn Dialer,
    pub as_addr: String,
    pub tgs_addr: String,
    pub timeout: u64,
}

impl KdcTransport for NetKdc<'_> {
    fn exchange(&mut self, endpoint: KdcEndpoint, request: &[u8]) -> Result<Vec<u8>, NetError> {
        let addr = match endpoint {
            KdcEndpoint::As => &self.as_addr,
            KdcEndpoint::Tgs => &self.tgs_addr,
        };
        let mut conn = self.dialer.dial(addr)?;
        conn.send(request)?;
        conn.recv(self.timeout)
    }
}
