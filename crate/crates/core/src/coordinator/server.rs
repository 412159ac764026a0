//! Socket front end for [`Session`].
//!
//! One port serves both transports: a connection whose first bytes are
//! `GET ` is upgraded to a WebSocket (path `/mvx`, one message per text
//! frame); anything else speaks the newline-framed protocol directly.
//! Connection threads only move bytes. Every session mutation happens on a
//! single executor thread, one input at a time.

use std::collections::HashMap;
use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::session::{ConnId, Outbound, Session, SessionConfig, SessionError, SessionSnapshot};
use crate::eventlog::EventLog;
use crate::protocol::{self, FrameError, Message, MAX_FRAME_BYTES};

/// URL path of the WebSocket endpoint.
pub const WS_PATH: &str = "/mvx";

const TICK: Duration = Duration::from_millis(20);
const WS_POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub session: SessionConfig,
    /// Where to persist each session's log when it ends or on shutdown.
    pub log_dir: Option<PathBuf>,
}

/// What the coordinator did over its lifetime.
#[derive(Debug, Clone, Default)]
pub struct ServerSummary {
    pub sessions: Vec<SessionSnapshot>,
    pub persisted: Vec<PathBuf>,
}

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, config: ServerConfig) -> Result<Server, ServeError> {
        let label = format!("{addr:?}");
        let listener = TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr: label, source })?;
        Ok(Server { listener, config })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Starts the accept loop and the session executor on background threads.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            snapshot: Mutex::new(Session::new(self.config.session, 0).snapshot()),
        });

        let executor = {
            let stop = stop.clone();
            let shared = shared.clone();
            let config = self.config.clone();
            thread::Builder::new()
                .name("mvx-executor".into())
                .spawn(move || Executor::new(config, shared).run(rx, &stop))
                .expect("spawn executor")
        };
        let accept = {
            let stop = stop.clone();
            let listener = self.listener;
            let tx = tx.clone();
            thread::Builder::new()
                .name("mvx-accept".into())
                .spawn(move || accept_loop(listener, tx, &stop))
                .expect("spawn accept loop")
        };
        ServerHandle { addr, stop, tx, shared, accept: Some(accept), executor: Some(executor) }
    }
}

struct Shared {
    snapshot: Mutex<SessionSnapshot>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    tx: Sender<Input>,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
    executor: Option<JoinHandle<ServerSummary>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Setting this flag (e.g. from a signal handler) stops the server.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// State of the current session as of the last processed input.
    pub fn snapshot(&self) -> SessionSnapshot {
        self.shared.snapshot.lock().expect("snapshot lock").clone()
    }

    /// A copy of the current session's log, taken on the executor.
    pub fn log_snapshot(&self) -> Option<EventLog> {
        let (reply, rx) = mpsc::channel();
        self.tx.send(Input::QueryLog(reply)).ok()?;
        rx.recv_timeout(Duration::from_secs(5)).ok()
    }

    /// Blocks until the stop flag is raised, then shuts down.
    pub fn wait(self) -> ServerSummary {
        while !self.stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(50));
        }
        self.shutdown()
    }

    /// Stops accepting, persists the live session's log if configured, and
    /// closes every connection.
    pub fn shutdown(mut self) -> ServerSummary {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.executor
            .take()
            .map(|h| h.join().expect("executor panicked"))
            .unwrap_or_default()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

enum Input {
    Connected(ConnId, Sender<Outgoing>),
    Frame(ConnId, Vec<u8>),
    Closed(ConnId),
    QueryLog(Sender<EventLog>),
}

enum Outgoing {
    Msg(Message),
    Close,
}

struct Executor {
    config: ServerConfig,
    shared: Arc<Shared>,
    session: Session,
    conns: HashMap<ConnId, Sender<Outgoing>>,
    epoch: Instant,
    summary: ServerSummary,
}

impl Executor {
    fn new(config: ServerConfig, shared: Arc<Shared>) -> Self {
        let session = Session::new(config.session, 0);
        Executor {
            config,
            shared,
            session,
            conns: HashMap::new(),
            epoch: Instant::now(),
            summary: ServerSummary::default(),
        }
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn run(mut self, rx: Receiver<Input>, stop: &AtomicBool) -> ServerSummary {
        while !stop.load(Ordering::SeqCst) {
            match rx.recv_timeout(TICK) {
                Ok(input) => self.process(input),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            let out = self.session.tick(self.now_ms());
            self.deliver(out);
            self.publish();
        }
        self.finish_session();
        for tx in self.conns.values() {
            let _ = tx.send(Outgoing::Close);
        }
        self.summary
    }

    fn process(&mut self, input: Input) {
        let now = self.now_ms();
        match input {
            Input::Connected(conn, tx) => {
                self.conns.insert(conn, tx);
            }
            Input::Frame(conn, bytes) => match protocol::decode(&bytes) {
                Ok(msg) => {
                    let tag = msg.tag();
                    match self.session.handle(conn, msg, now) {
                        Ok(out) => self.deliver(out),
                        Err(SessionError::SessionFull) => {
                            log::warn!("rejecting connection {conn}: session full");
                            self.deliver(vec![Outbound::Send(conn, Message::Bye {}), Outbound::Close(conn)]);
                        }
                        Err(e) => log::warn!("connection {conn}: {tag} rejected: {e}"),
                    }
                }
                Err(e) => {
                    log::warn!("connection {conn}: {e}; dropping connection");
                    let out = self.session.on_disconnect(conn, now);
                    self.deliver(out);
                    self.deliver(vec![Outbound::Close(conn)]);
                }
            },
            Input::Closed(conn) => {
                self.conns.remove(&conn);
                let out = self.session.on_disconnect(conn, now);
                self.deliver(out);
            }
            Input::QueryLog(reply) => {
                let _ = reply.send(self.session.log().clone());
            }
        }
        if self.session.is_ended() {
            self.rollover();
        }
    }

    fn deliver(&mut self, out: Vec<Outbound>) {
        for o in out {
            match o {
                Outbound::Send(conn, msg) => {
                    if let Some(tx) = self.conns.get(&conn) {
                        let _ = tx.send(Outgoing::Msg(msg));
                    }
                }
                Outbound::Close(conn) => {
                    if let Some(tx) = self.conns.get(&conn) {
                        let _ = tx.send(Outgoing::Close);
                    }
                }
            }
        }
    }

    fn publish(&self) {
        *self.shared.snapshot.lock().expect("snapshot lock") = self.session.snapshot();
    }

    /// Closes out the current session and starts a fresh one.
    fn rollover(&mut self) {
        self.finish_session();
        self.session = Session::new(self.config.session, self.now_ms());
        self.publish();
    }

    fn finish_session(&mut self) {
        let snap = self.session.snapshot();
        if let Some(dir) = &self.config.log_dir {
            if !self.session.log().is_empty() {
                let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
                let path = dir.join(format!("session-{:04}-{stamp}.log", self.summary.sessions.len() + 1));
                match self.session.log().persist(&path) {
                    Ok(()) => {
                        log::info!("persisted {} records to {}", self.session.log().len(), path.display());
                        self.summary.persisted.push(path);
                    }
                    Err(e) => log::error!("cannot persist log to {}: {e}", path.display()),
                }
            }
        }
        if snap.log_len > 0 || snap.leader.is_some() || snap.ended.is_some() {
            self.summary.sessions.push(snap);
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Input>, stop: &AtomicBool) {
    static NEXT_CONN: AtomicU64 = AtomicU64::new(1);
    listener.set_nonblocking(true).expect("nonblocking listener");
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = NEXT_CONN.fetch_add(1, Ordering::SeqCst);
                log::debug!("connection {conn} from {peer}");
                let tx = tx.clone();
                let _ = thread::Builder::new()
                    .name(format!("mvx-conn-{conn}"))
                    .spawn(move || serve_connection(conn, stream, tx));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn serve_connection(conn: ConnId, stream: TcpStream, tx: Sender<Input>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let mut head = [0u8; 4];
    let is_http = loop {
        match stream.peek(&mut head) {
            Ok(0) => return,
            Ok(n) if n < 4 && b"GET "[..n] == head[..n] => thread::sleep(Duration::from_millis(1)),
            Ok(n) => break n >= 4 && &head == b"GET ",
            Err(_) => return,
        }
    };
    let result = if is_http { serve_ws(conn, stream, &tx) } else { serve_tcp(conn, stream, &tx) };
    if let Err(e) = result {
        log::debug!("connection {conn} ended: {e}");
    }
    let _ = tx.send(Input::Closed(conn));
}

fn serve_tcp(conn: ConnId, stream: TcpStream, tx: &Sender<Input>) -> io::Result<()> {
    let (out_tx, out_rx) = mpsc::channel::<Outgoing>();
    let mut writer = stream.try_clone()?;
    let writer_thread = thread::spawn(move || {
        for item in out_rx {
            match item {
                Outgoing::Msg(msg) => match protocol::encode(&msg) {
                    Ok(line) => {
                        if writer.write_all(&line).is_err() {
                            break;
                        }
                    }
                    Err(e) => log::error!("cannot encode {}: {e}", msg.tag()),
                },
                Outgoing::Close => break,
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    if tx.send(Input::Connected(conn, out_tx)).is_err() {
        return Ok(());
    }
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    let result = loop {
        match protocol::read_frame(&mut reader, &mut buf, MAX_FRAME_BYTES) {
            Ok(true) => {
                if tx.send(Input::Frame(conn, std::mem::take(&mut buf))).is_err() {
                    break Ok(());
                }
            }
            Ok(false) => break Ok(()),
            Err(FrameError::Io(e)) => break Err(e),
            Err(e) => break Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
        }
    };
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    let _ = writer_thread.join();
    result
}

fn serve_ws(conn: ConnId, stream: TcpStream, tx: &Sender<Input>) -> io::Result<()> {
    use tungstenite::handshake::server::{ErrorResponse, Request, Response};

    // The callback signature is fixed by tungstenite.
    #[allow(clippy::result_large_err)]
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == WS_PATH {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some(format!("no endpoint at {}", req.uri().path())));
            *err.status_mut() = tungstenite::http::StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let mut ws = tungstenite::accept_hdr(stream, check_path)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(WS_POLL))?;

    let (out_tx, out_rx) = mpsc::channel::<Outgoing>();
    if tx.send(Input::Connected(conn, out_tx)).is_err() {
        return Ok(());
    }
    loop {
        match ws.read() {
            Ok(tungstenite::Message::Text(text)) => {
                if tx.send(Input::Frame(conn, text.as_bytes().to_vec())).is_err() {
                    return Ok(());
                }
            }
            Ok(tungstenite::Message::Binary(bytes)) => {
                if tx.send(Input::Frame(conn, bytes.to_vec())).is_err() {
                    return Ok(());
                }
            }
            Ok(tungstenite::Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io::Error::other(e.to_string())),
        }
        loop {
            match out_rx.try_recv() {
                Ok(Outgoing::Msg(msg)) => match protocol::encode_frame_text(&msg) {
                    Ok(text) => ws
                        .send(tungstenite::Message::text(text))
                        .map_err(|e| io::Error::other(e.to_string()))?,
                    Err(e) => log::error!("cannot encode {}: {e}", msg.tag()),
                },
                Ok(Outgoing::Close) | Err(mpsc::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }
    }
}
