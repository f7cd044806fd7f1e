//! Deterministic in-memory network.
//!
//! Everything runs on the caller's thread. Frames are numbered from 1 in
//! transmission order across all connections, and a [`FaultScript`] can
//! drop, duplicate, swap, delay or corrupt frames by number. Server
//! sessions run when a client waits in [`Connection::recv`] or when the
//! harness calls [`SimNet::settle`].

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;

use super::service::{Dialer, FrameService, FrameSession};
use super::{Clock, Connection, ManualClock, NetError, MAX_FRAME};
use crate::crypto::{seeded_rng, SessionRng};
use crate::protocol::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Drop(u64),
    Duplicate(u64),
    /// Deliver frame `n` right after frame `m` instead of before it.
    Swap(u64, u64),
    FlipBit {
        frame: u64,
        byte: usize,
        bit: u8,
    },
    Delay {
        frame: u64,
        ticks: u64,
    },
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Drop(n) => write!(f, "drop {n}"),
            Fault::Duplicate(n) => write!(f, "duplicate {n}"),
            Fault::Swap(n, m) => write!(f, "swap {n} {m}"),
            Fault::FlipBit { frame, byte, bit } => write!(f, "flip {frame} {byte} {bit}"),
            Fault::Delay { frame, ticks } => write!(f, "delay {frame} {ticks}"),
        }
    }
}

impl FromStr for Fault {
    type Err = String;

    /// `drop N`, `duplicate N`, `swap N M`, `flip N BYTE BIT`, `delay N TICKS`.
    fn from_str(s: &str) -> Result<Self, String> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, String> {
            words
                .get(i)
                .ok_or_else(|| format!("`{s}`: missing argument {i}"))?
                .parse::<u64>()
                .map_err(|e| format!("`{s}`: {e}"))
        };
        let frame = |i: usize| -> Result<u64, String> {
            match num(i)? {
                0 => Err(format!("`{s}`: frames are numbered from 1")),
                n => Ok(n),
            }
        };
        let arity = |n: usize| -> Result<(), String> {
            if words.len() == n {
                Ok(())
            } else {
                Err(format!("`{s}`: expected {} arguments", n - 1))
            }
        };
        let fault = match words.first().copied() {
            Some("drop") => {
                arity(2)?;
                Fault::Drop(frame(1)?)
            }
            Some("duplicate") => {
                arity(2)?;
                Fault::Duplicate(frame(1)?)
            }
            Some("swap") => {
                arity(3)?;
                let (n, m) = (frame(1)?, frame(2)?);
                if n >= m {
                    return Err(format!("`{s}`: swap needs N < M"));
                }
                Fault::Swap(n, m)
            }
            Some("flip") => {
                arity(4)?;
                let bit = num(3)?;
                if bit > 7 {
                    return Err(format!("`{s}`: bit must be 0..=7"));
                }
                Fault::FlipBit {
                    frame: frame(1)?,
                    byte: num(2)? as usize,
                    bit: bit as u8,
                }
            }
            Some("delay") => {
                arity(3)?;
                Fault::Delay {
                    frame: frame(1)?,
                    ticks: num(2)?,
                }
            }
            _ => return Err(format!("unknown fault `{s}`")),
        };
        Ok(fault)
    }
}

/// Ordered fault directives.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultScript(pub Vec<Fault>);

impl FaultScript {
    pub fn push(&mut self, fault: Fault) {
        self.0.push(fault);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One frame as its sender transmitted it, before any fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub n: u64,
    pub conn: u64,
    pub addr: String,
    pub to_server: bool,
    pub bytes: Vec<u8>,
}

/// Something a server session reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerEvent {
    pub addr: String,
    pub conn: u64,
    pub error: String,
}

#[derive(Debug)]
struct Packet {
    deliver_at: Timestamp,
    conn: u64,
    to_server: bool,
    bytes: Vec<u8>,
}

struct ConnState {
    addr: String,
    session: Box<dyn FrameSession>,
    inbox: VecDeque<Vec<u8>>,
    server_closed: bool,
    client_closed: bool,
}

struct Node {
    service: Arc<dyn FrameService>,
    rng: SessionRng,
}

pub struct SimNet {
    clock: ManualClock,
    faults: FaultScript,
    frame_no: u64,
    transcript: Vec<TranscriptEntry>,
    queue: VecDeque<Packet>,
    /// Frames held back by a swap, released after the given frame number.
    held: Vec<(u64, Packet)>,
    conns: BTreeMap<u64, ConnState>,
    nodes: BTreeMap<String, Node>,
    next_conn: u64,
    events: Vec<ServerEvent>,
    client_name: String,
}

impl SimNet {
    pub fn new(clock: ManualClock, faults: FaultScript) -> Self {
        Self {
            clock,
            faults,
            frame_no: 0,
            transcript: Vec::new(),
            queue: VecDeque::new(),
            held: Vec::new(),
            conns: BTreeMap::new(),
            nodes: BTreeMap::new(),
            next_conn: 1,
            events: Vec::new(),
            client_name: "127.0.0.1".into(),
        }
    }

    pub fn clock(&self) -> &ManualClock {
        &self.clock
    }

    /// Adds a server at `addr`. Its sessions draw randomness from a
    /// generator seeded with `seed`.
    pub fn add_node(&mut self, addr: &str, service: Arc<dyn FrameService>, seed: u64) {
        self.nodes.insert(
            addr.to_string(),
            Node {
                service,
                rng: seeded_rng(seed),
            },
        );
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn frames_sent(&self) -> u64 {
        self.frame_no
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    fn connect(&mut self, addr: &str) -> Result<u64, NetError> {
        let node = self
            .nodes
            .get(addr)
            .ok_or_else(|| NetError::Unreachable(addr.to_string()))?;
        let session = node.service.open(&self.client_name);
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            ConnState {
                addr: addr.to_string(),
                session,
                inbox: VecDeque::new(),
                server_closed: false,
                client_closed: false,
            },
        );
        Ok(id)
    }

    fn transmit(&mut self, conn: u64, to_server: bool, bytes: Vec<u8>) {
        self.frame_no += 1;
        let n = self.frame_no;
        let addr = self.conns.get(&conn).map(|c| c.addr.clone()).unwrap_or_default();
        self.transcript.push(TranscriptEntry {
            n,
            conn,
            addr,
            to_server,
            bytes: bytes.clone(),
        });

        let mut packet = Packet {
            deliver_at: self.clock.now(),
            conn,
            to_server,
            bytes,
        };
        let mut copies = 1;
        let mut hold_until = None;
        for fault in &self.faults.0 {
            match *fault {
                Fault::Drop(f) if f == n => copies = 0,
                Fault::Duplicate(f) if f == n => copies += 1,
                Fault::FlipBit { frame, byte, bit } if frame == n => {
                    if let Some(b) = packet.bytes.get_mut(byte) {
                        *b ^= 1 << bit;
                    }
                }
                Fault::Delay { frame, ticks } if frame == n => packet.deliver_at += ticks,
                Fault::Swap(first, second) if first == n => hold_until = Some(second),
                _ => {}
            }
        }
        for _ in 0..copies {
            let copy = Packet {
                bytes: packet.bytes.clone(),
                ..packet
            };
            match hold_until {
                Some(m) => self.held.push((m, copy)),
                None => self.queue.push_back(copy),
            }
        }
        let (release, keep): (Vec<_>, Vec<_>) = self.held.drain(..).partition(|(m, _)| *m == n);
        self.held = keep;
        self.queue.extend(release.into_iter().map(|(_, p)| p));
    }

    /// Delivers every queued frame that is due, running server sessions as
    /// frames reach them.
    fn pump(&mut self) {
        let now = self.clock.now();
        let mut deferred = VecDeque::new();
        while let Some(packet) = self.queue.pop_front() {
            if packet.deliver_at > now {
                deferred.push_back(packet);
                continue;
            }
            self.deliver(packet);
        }
        self.queue = deferred;
    }

    fn deliver(&mut self, packet: Packet) {
        let Some(conn) = self.conns.get_mut(&packet.conn) else {
            return;
        };
        if !packet.to_server {
            if !conn.client_closed {
                conn.inbox.push_back(packet.bytes);
            }
            return;
        }
        if conn.server_closed || conn.client_closed {
            return;
        }
        let node = self.nodes.get_mut(&conn.addr).expect("connections point at nodes");
        let outcome = conn.session.on_frame(&packet.bytes, self.clock.now(), &mut node.rng);
        if outcome.close {
            conn.server_closed = true;
        }
        if let Some(error) = outcome.error {
            self.events.push(ServerEvent {
                addr: conn.addr.clone(),
                conn: packet.conn,
                error,
            });
        }
        for reply in outcome.replies {
            self.transmit(packet.conn, false, reply);
        }
    }

    /// Releases held frames and delivers everything in flight, advancing the
    /// clock to the last delayed delivery if needed.
    pub fn settle(&mut self) {
        let held: Vec<_> = self.held.drain(..).map(|(_, p)| p).collect();
        self.queue.extend(held);
        loop {
            self.pump();
            match self.queue.iter().map(|p| p.deliver_at).min() {
                Some(t) => self.clock.set(t.max(self.clock.now())),
                None if self.held.is_empty() => break,
                None => {
                    let held: Vec<_> = self.held.drain(..).map(|(_, p)| p).collect();
                    self.queue.extend(held);
                }
            }
        }
    }
}

/// Shared handle; also the dialer for simulated connections.
#[derive(Clone)]
pub struct SimHandle(pub Rc<RefCell<SimNet>>);

impl SimHandle {
    pub fn new(net: SimNet) -> Self {
        Self(Rc::new(RefCell::new(net)))
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut SimNet) -> R) -> R {
        f(&mut self.0.borrow_mut())
    }
}

impl Dialer for SimHandle {
    fn dial(&mut self, addr: &str) -> Result<Box<dyn Connection>, NetError> {
        let id = self.0.borrow_mut().connect(addr)?;
        Ok(Box::new(SimConnection {
            net: self.0.clone(),
            id,
        }))
    }
}

pub struct SimConnection {
    net: Rc<RefCell<SimNet>>,
    id: u64,
}

impl Connection for SimConnection {
    fn send(&mut self, frame: &[u8]) -> Result<(), NetError> {
        if frame.len() > MAX_FRAME {
            return Err(NetError::FrameTooLarge(frame.len()));
        }
        let mut net = self.net.borrow_mut();
        if net.conns.get(&self.id).is_none_or(|c| c.server_closed) {
            return Err(NetError::ConnectionClosed);
        }
        net.transmit(self.id, true, frame.to_vec());
        Ok(())
    }

    /// Each tick of waiting advances the shared clock by one second.
    fn recv(&mut self, timeout_ticks: u64) -> Result<Vec<u8>, NetError> {
        let mut net = self.net.borrow_mut();
        for tick in 0..=timeout_ticks {
            net.pump();
            let conn = net.conns.get_mut(&self.id).ok_or(NetError::ConnectionClosed)?;
            if let Some(frame) = conn.inbox.pop_front() {
                return Ok(frame);
            }
            if conn.server_closed {
                return Err(NetError::ConnectionClosed);
            }
            if tick < timeout_ticks {
                net.clock.advance(1);
            }
        }
        Err(NetError::Timeout)
    }

    fn peer(&self) -> String {
        self.net
            .borrow()
            .conns
            .get(&self.id)
            .map(|c| c.addr.clone())
            .unwrap_or_default()
    }
}

impl Drop for SimConnection {
    fn drop(&mut self) {
        if let Ok(mut net) = self.net.try_borrow_mut() {
            if let Some(c) = net.conns.get_mut(&self.id) {
                c.client_closed = true;
            }
        }
    }
}
