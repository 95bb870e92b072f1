//! Framed, ordered message transport with session multiplexing.
//!
//! Every frame is `len:u32 | msg_type:u8 | session_id:u16 | payload`. An
//! [`Endpoint`] is a raw byte stream (in-memory pipe or TCP). A [`Mux`]
//! owns one endpoint and hands out [`Session`]s keyed by session id, so two
//! protocol runs in opposite roles can share one connection.

mod frame;
mod pipe;

pub use frame::{encode_header, read_frame, write_frame, Frame, MsgType, HEADER_LEN, MAX_PAYLOAD};
pub use pipe::{pipe, PipeReader, PipeWriter};

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};

/// A framed message channel for one protocol session.
pub trait Channel {
    fn send(&mut self, msg_type: MsgType, payload: &[u8]) -> Result<()>;

    fn recv(&mut self) -> Result<(MsgType, Vec<u8>)>;

    /// Receives the next frame and checks its type.
    fn recv_expect(&mut self, expected: MsgType) -> Result<Vec<u8>> {
        let (got, payload) = self.recv()?;
        if got != expected {
            return Err(Error::UnexpectedMsgType {
                expected: expected as u8,
                got: got as u8,
            });
        }
        Ok(payload)
    }

    /// Wire bytes sent on this channel, headers included.
    fn bytes_sent(&self) -> u64;

    fn bytes_received(&self) -> u64;
}

type BoxRead = Box<dyn Read + Send>;
type BoxWrite = Box<dyn Write + Send>;

/// A bidirectional byte stream.
pub struct Endpoint {
    reader: BoxRead,
    writer: BoxWrite,
}

impl Endpoint {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Endpoint {
            reader: Box::new(reader),
            writer: Box::new(writer),
        }
    }

    pub fn from_tcp(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Endpoint::new(BufReader::new(reader), stream))
    }
}

/// Two endpoints wired back to back in memory.
pub fn open_loopback() -> (Endpoint, Endpoint) {
    let (w_ab, r_ab) = pipe();
    let (w_ba, r_ba) = pipe();
    (Endpoint::new(r_ba, w_ab), Endpoint::new(r_ab, w_ba))
}

fn resolve(addr: &str) -> Result<Vec<SocketAddr>> {
    let addrs: Vec<_> = addr
        .to_socket_addrs()
        .map_err(|source| Error::Connect {
            context: format!("resolve {addr}"),
            source,
        })?
        .collect();
    if addrs.is_empty() {
        return Err(Error::Connect {
            context: format!("resolve {addr}"),
            source: io::Error::new(io::ErrorKind::NotFound, "no addresses"),
        });
    }
    Ok(addrs)
}

/// Connects to `addr`, failing once `timeout` elapses.
pub fn tcp_connect(addr: &str, timeout: Duration) -> Result<Endpoint> {
    let mut last = None;
    for sa in resolve(addr)? {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(s) => return Endpoint::from_tcp(s),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Connect {
        context: format!("connect to {addr}"),
        source: last.unwrap_or_else(|| io::ErrorKind::NotFound.into()),
    })
}

/// Keeps retrying [`tcp_connect`] until `deadline` elapses, for peers that
/// may not be listening yet.
pub fn tcp_connect_retry(addr: &str, deadline: Duration) -> Result<Endpoint> {
    let start = std::time::Instant::now();
    loop {
        let left = deadline.saturating_sub(start.elapsed());
        match tcp_connect(addr, left.max(Duration::from_millis(50))) {
            Ok(ep) => return Ok(ep),
            Err(e) if start.elapsed() >= deadline => return Err(e),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

pub fn tcp_listen(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|source| Error::Connect {
        context: format!("bind {addr}"),
        source,
    })
}

/// Accepts one peer on `listener`.
pub fn tcp_accept(listener: &TcpListener) -> Result<Endpoint> {
    let (s, _) = listener.accept().map_err(|source| Error::Connect {
        context: "accept".into(),
        source,
    })?;
    Endpoint::from_tcp(s)
}

/// Errors are not `Clone`; the demux thread fans one failure out to every
/// session through this copy.
fn replicate(e: &Error) -> Error {
    match e {
        Error::PeerClosed => Error::PeerClosed,
        Error::FrameTooLarge(n) => Error::FrameTooLarge(*n),
        Error::UnknownMsgType(t) => Error::UnknownMsgType(*t),
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), io.to_string())),
        other => Error::Malformed(other.to_string()),
    }
}

#[derive(Default)]
struct Routes {
    open: HashMap<u16, Sender<Frame>>,
    /// Frames that arrived before their session was opened locally.
    early: HashMap<u16, Vec<Frame>>,
    failed: Option<Error>,
}

type SharedWriter = Arc<Mutex<BufWriter<BoxWrite>>>;
type SharedRoutes = Arc<Mutex<Routes>>;

/// Demultiplexes one endpoint into per-session channels.
///
/// The write half closes once the mux and all its sessions are dropped.
pub struct Mux {
    writer: SharedWriter,
    routes: SharedRoutes,
    reader: Option<JoinHandle<()>>,
}

impl Mux {
    pub fn new(endpoint: Endpoint) -> Self {
        let writer = Arc::new(Mutex::new(BufWriter::new(endpoint.writer)));
        let routes: SharedRoutes = Arc::default();
        let demux = routes.clone();
        let mut reader = endpoint.reader;
        let handle = std::thread::spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(frame) => {
                    let mut routes = demux.lock().unwrap_or_else(|e| e.into_inner());
                    let sid = frame.session_id;
                    let undelivered = match routes.open.get(&sid) {
                        Some(tx) => tx.send(frame).err().map(|e| e.0),
                        None => Some(frame),
                    };
                    if let Some(frame) = undelivered {
                        routes.early.entry(sid).or_default().push(frame);
                    }
                }
                Err(e) => {
                    let mut routes = demux.lock().unwrap_or_else(|e| e.into_inner());
                    // dropping the senders wakes every blocked session
                    routes.open.clear();
                    routes.failed = Some(e);
                    return;
                }
            }
        });
        Mux {
            writer,
            routes,
            reader: Some(handle),
        }
    }

    /// Opens session `id`. Each id may be open at most once per endpoint.
    pub fn open_session(&self, id: u16) -> Result<Session> {
        let mut routes = self.routes.lock().unwrap_or_else(|e| e.into_inner());
        if routes.open.contains_key(&id) {
            return Err(Error::SessionCollision(id));
        }
        let (tx, rx) = unbounded();
        for frame in routes.early.remove(&id).unwrap_or_default() {
            let _ = tx.send(frame);
        }
        if routes.failed.is_none() {
            routes.open.insert(id, tx);
        }
        Ok(Session {
            id,
            writer: self.writer.clone(),
            routes: self.routes.clone(),
            rx,
            sent: 0,
            received: 0,
        })
    }
}

impl Drop for Mux {
    fn drop(&mut self) {
        // The demux thread exits when the peer closes; detach it otherwise.
        if let Some(h) = self.reader.take() {
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}

/// One multiplexed session.
pub struct Session {
    id: u16,
    writer: SharedWriter,
    routes: SharedRoutes,
    rx: Receiver<Frame>,
    sent: u64,
    received: u64,
}

impl Session {
    pub fn id(&self) -> u16 {
        self.id
    }
}

impl Channel for Session {
    fn send(&mut self, msg_type: MsgType, payload: &[u8]) -> Result<()> {
        let header = encode_header(msg_type, self.id, payload.len())?;
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let res = w
            .write_all(&header)
            .and_then(|_| w.write_all(payload))
            .and_then(|_| w.flush());
        res.map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => Error::PeerClosed,
            _ => e.into(),
        })?;
        self.sent += (HEADER_LEN + payload.len()) as u64;
        Ok(())
    }

    fn recv(&mut self) -> Result<(MsgType, Vec<u8>)> {
        match self.rx.recv() {
            Ok(frame) => {
                self.received += frame.wire_len() as u64;
                Ok((frame.msg_type, frame.payload))
            }
            Err(_) => {
                let routes = self.routes.lock().unwrap_or_else(|e| e.into_inner());
                Err(routes.failed.as_ref().map_or(Error::PeerClosed, replicate))
            }
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let mut routes = self.routes.lock().unwrap_or_else(|e| e.into_inner());
        routes.open.remove(&self.id);
        // Unread frames belong to whoever opens this id next.
        let unread: Vec<Frame> = self.rx.try_iter().collect();
        if !unread.is_empty() {
            routes.early.entry(self.id).or_default().extend(unread);
        }
    }
}

/// Two muxed endpoints connected in memory.
pub fn loopback_mux() -> (Mux, Mux) {
    let (a, b) = open_loopback();
    (Mux::new(a), Mux::new(b))
}
