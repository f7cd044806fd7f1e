//! Frames over TCP, one thread per accepted connection.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::service::{Dialer, FrameService};
use super::{read_frame, write_frame, Clock, Connection, NetError};
use crate::crypto::SessionRng;

pub struct TcpConnection {
    stream: TcpStream,
    peer: String,
}

impl TcpConnection {
    pub fn new(stream: TcpStream) -> Self {
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        Self { stream, peer }
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, frame: &[u8]) -> Result<(), NetError> {
        write_frame(&mut self.stream, frame).map_err(|e| match e {
            NetError::Io(io) if is_closed(&io) => NetError::ConnectionClosed,
            e => e,
        })
    }

    /// `timeout_ticks` is in seconds; zero waits indefinitely.
    fn recv(&mut self, timeout_ticks: u64) -> Result<Vec<u8>, NetError> {
        let timeout = (timeout_ticks > 0).then(|| Duration::from_secs(timeout_ticks));
        self.stream.set_read_timeout(timeout)?;
        read_frame(&mut self.stream).map_err(|e| match e {
            NetError::Io(io) if is_closed(&io) => NetError::ConnectionClosed,
            e => e,
        })
    }

    fn peer(&self) -> String {
        self.peer.clone()
    }
}

fn is_closed(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionAborted
    )
}

/// Dials `host:port` addresses.
#[derive(Debug, Clone)]
pub struct TcpDialer {
    pub connect_timeout: Duration,
}

impl Default for TcpDialer {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(5),
        }
    }
}

impl Dialer for TcpDialer {
    fn dial(&mut self, addr: &str) -> Result<Box<dyn Connection>, NetError> {
        let unreachable = || NetError::Unreachable(addr.to_string());
        let target = addr
            .to_socket_addrs()
            .map_err(|_| unreachable())?
            .next()
            .ok_or_else(unreachable)?;
        let stream = TcpStream::connect_timeout(&target, self.connect_timeout).map_err(|_| unreachable())?;
        stream.set_nodelay(true)?;
        Ok(Box::new(TcpConnection::new(stream)))
    }
}

/// A running server; stops accepting when [`ServerHandle::stop`] is called
/// or the handle is dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop();
        }
    }
}

/// Serves `service` on `listener`. Sessions share one random generator;
/// handler errors are logged and close only the offending connection.
pub fn serve(
    listener: TcpListener,
    service: Arc<dyn FrameService>,
    clock: Arc<dyn Clock>,
    rng: SessionRng,
) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let rng = Arc::new(Mutex::new(rng));
    let stop_flag = stop.clone();
    let thread = thread::Builder::new().name(format!("serve-{addr}")).spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept on {addr}: {e}");
                    continue;
                }
            };
            let service = service.clone();
            let clock = clock.clone();
            let rng = rng.clone();
            let _ = thread::Builder::new().spawn(move || handle_connection(stream, service, clock, rng));
        }
    })?;
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn handle_connection(
    stream: TcpStream,
    service: Arc<dyn FrameService>,
    clock: Arc<dyn Clock>,
    rng: Arc<Mutex<SessionRng>>,
) {
    let _ = stream.set_nodelay(true);
    let peer = stream.peer_addr().map(|a| a.ip().to_string()).unwrap_or_default();
    let mut conn = TcpConnection::new(stream);
    let mut session = service.open(&peer);
    loop {
        let frame = match conn.recv(0) {
            Ok(f) => f,
            Err(NetError::ConnectionClosed) => break,
            Err(e) => {
                debug!("{peer}: {e}");
                break;
            }
        };
        let outcome = {
            let mut rng = rng.lock().unwrap_or_else(|e| e.into_inner());
            session.on_frame(&frame, clock.now(), &mut *rng)
        };
        if let Some(err) = &outcome.error {
            warn!("{peer}: {err}");
        }
        for reply in &outcome.replies {
            if conn.send(reply).is_err() {
                return;
            }
        }
        if outcome.close {
            break;
        }
    }
    let _ = conn.stream.shutdown(Shutdown::Both);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;
    use crate::net::service::{FrameOutcome, FrameSession};
    use crate::net::SystemClock;
    use crate::protocol::Timestamp;
    use rand::RngCore;

    struct Upper;
    struct UpperSession(usize);

    impl FrameService for Upper {
        fn open(&self, _: &str) -> Box<dyn FrameSession> {
            Box::new(UpperSession(0))
        }
    }

    impl FrameSession for UpperSession {
        fn on_frame(&mut self, frame: &[u8], _: Timestamp, _: &mut dyn RngCore) -> FrameOutcome {
            self.0 += 1;
            if frame == b"bye" {
                return FrameOutcome::fail("Bye");
            }
            let mut out = frame.to_ascii_uppercase();
            out.extend_from_slice(self.0.to_string().as_bytes());
            FrameOutcome::reply(out)
        }
    }

    #[test]
    fn serves_concurrent_connections() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let mut server = serve(
            listener,
            Arc::new(Upper),
            Arc::new(SystemClock::default()),
            seeded_rng(1),
        )
        .unwrap();
        let addr = server.local_addr().to_string();
        let threads: Vec<_> = (0..4)
            .map(|i| {
                let addr = addr.clone();
                thread::spawn(move || {
                    let mut c = TcpDialer::default().dial(&addr).unwrap();
                    for n in 1..=3 {
                        c.send(format!("c{i}").as_bytes()).unwrap();
                        assert_eq!(c.recv(5).unwrap(), format!("C{i}{n}").into_bytes());
                    }
                    c.send(b"bye").unwrap();
                    assert!(matches!(c.recv(5), Err(NetError::ConnectionClosed)));
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        server.stop();
        assert!(TcpDialer {
            connect_timeout: Duration::from_millis(200)
        }
        .dial(&addr)
        .is_err());
    }

    #[test]
    fn unreachable_address() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        assert!(matches!(
            TcpDialer::default().dial(&addr),
            Err(NetError::Unreachable(_))
        ));
    }
}
