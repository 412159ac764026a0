use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::peer::{Peer, PeerError};
use crate::protocol::{self, Message};
use crate::workload::Step;

const REPLY_TIMEOUT: Duration = Duration::from_secs(10);

type Job = Box<dyn FnOnce(&mut Peer) + Send>;

enum Input {
    Net(Message),
    Closed,
    Step(Step, Sender<Result<(), PeerError>>),
    Exec(Job),
    Stop,
}

/// A [`Peer`] on its own thread, talking newline-framed protocol to a
/// coordinator over TCP. Socket reads and driver commands share one queue,
/// so the peer sees them one at a time, like a page's event loop.
pub struct NetClient {
    tx: Sender<Input>,
    worker: Option<JoinHandle<()>>,
    stream: TcpStream,
}

impl NetClient {
    pub fn connect(addr: SocketAddr, peer: Peer) -> io::Result<NetClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let (tx, rx) = mpsc::channel();

        let reader = stream.try_clone()?;
        let net_tx = tx.clone();
        thread::Builder::new().name("mvx-client-read".into()).spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                match protocol::read_message(&mut reader) {
                    Ok(Some(msg)) => {
                        if net_tx.send(Input::Net(msg)).is_err() {
                            break;
                        }
                    }
                    Ok(None) | Err(_) => {
                        let _ = net_tx.send(Input::Closed);
                        break;
                    }
                }
            }
        })?;

        let mut writer = BufWriter::new(stream.try_clone()?);
        send(&mut writer, std::slice::from_ref(&peer.hello()))?;
        let worker = thread::Builder::new()
            .name("mvx-client".into())
            .spawn(move || run(peer, rx, writer))?;
        Ok(NetClient { tx, worker: Some(worker), stream })
    }

    /// Runs `step` on the client and sends whatever it produced.
    pub fn step(&self, step: &Step) -> Result<(), PeerError> {
        let (reply, rx) = mpsc::channel();
        if self.tx.send(Input::Step(step.clone(), reply)).is_err() {
            return Err(PeerError::NotLoaded);
        }
        rx.recv_timeout(REPLY_TIMEOUT).unwrap_or(Err(PeerError::NotLoaded))
    }

    /// Runs `f` against the peer on its own thread, between messages.
    pub fn with<T: Send + 'static>(&self, f: impl FnOnce(&mut Peer) -> T + Send + 'static) -> Option<T> {
        let (reply, rx) = mpsc::channel();
        let job: Job = Box::new(move |p| {
            let _ = reply.send(f(p));
        });
        self.tx.send(Input::Exec(job)).ok()?;
        rx.recv_timeout(REPLY_TIMEOUT).ok()
    }

    /// Polls `cond` until it holds or `timeout` passes.
    pub fn wait_for(&self, timeout: Duration, cond: impl Fn(&Peer) -> bool + Send + Sync + Clone + 'static) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let c = cond.clone();
            if self.with(move |p| c(p)).unwrap_or(false) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(1));
        }
    }

    /// Closes the socket and waits for the client thread.
    pub fn close(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.tx.send(Input::Stop);
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

impl Drop for NetClient {
    fn drop(&mut self) {
        self.stop();
    }
}

fn send(w: &mut BufWriter<TcpStream>, msgs: &[Message]) -> io::Result<()> {
    for msg in msgs {
        let bytes = protocol::encode(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        w.write_all(&bytes)?;
    }
    w.flush()
}

fn run(mut peer: Peer, rx: Receiver<Input>, mut writer: BufWriter<TcpStream>) {
    let start = Instant::now();
    let now = || start.elapsed().as_secs_f64() * 1000.0;
    for input in rx {
        let out = match input {
            Input::Net(msg) => {
                let tag = msg.tag();
                peer.receive(msg, now()).unwrap_or_else(|e| {
                    log::warn!("client failed on {tag}: {e}");
                    Vec::new()
                })
            }
            Input::Step(step, reply) => match peer.run_step(&step, now()) {
                Ok(out) => {
                    let sent = send(&mut writer, &out);
                    let _ = reply.send(Ok(()));
                    if let Err(e) = sent {
                        log::warn!("client write failed: {e}");
                    }
                    continue;
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                    continue;
                }
            },
            Input::Exec(job) => {
                job(&mut peer);
                continue;
            }
            Input::Closed => {
                peer.mark_closed();
                continue;
            }
            Input::Stop => break,
        };
        if let Err(e) = send(&mut writer, &out) {
            log::warn!("client write failed: {e}");
        }
    }
}
