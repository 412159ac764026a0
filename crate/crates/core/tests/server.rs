use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use mvx::coordinator::{Phase, ServeError, Server, ServerConfig, ServerHandle, SessionConfig, WS_PATH};
use mvx::eventlog::EventLog;
use mvx::protocol::{decode, encode, encode_frame_text, read_message, EventRecord, Message, Payload, RecordKind, Role};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn open(server: &ServerHandle) -> Conn {
        let s = TcpStream::connect(server.addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Conn { reader: BufReader::new(s.try_clone().unwrap()), writer: s }
    }

    fn send(&mut self, msg: &Message) {
        self.writer.write_all(&encode(msg).unwrap()).unwrap();
    }

    fn recv(&mut self) -> Option<Message> {
        read_message(&mut self.reader).ok().flatten()
    }
}

fn spawn(config: ServerConfig) -> ServerHandle {
    Server::bind("127.0.0.1:0", config).unwrap().spawn()
}

fn hello() -> Message {
    Message::Hello { client_info: "test".into() }
}

fn wait_until(cond: impl Fn() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while !cond() {
        assert!(Instant::now() < deadline, "condition not reached");
        thread::sleep(Duration::from_millis(2));
    }
}

fn click(seq: u64) -> Message {
    Message::Event { record: EventRecord::dom_event("onclick", "sid-1", Payload::new()).with_seq(seq).at(seq * 10) }
}

#[test]
fn tcp_handshake_replay_and_live_forwarding() {
    let server = spawn(ServerConfig::default());
    let mut a = Conn::open(&server);
    a.send(&hello());
    assert_eq!(a.recv(), Some(Message::RoleAssign { role: Role::Leader }));
    a.send(&Message::RandomBatch { values: vec![0.25, 0.5] });
    a.send(&click(2));
    wait_until(|| server.snapshot().log_len == 2);

    let mut b = Conn::open(&server);
    b.send(&hello());
    assert_eq!(b.recv(), Some(Message::RoleAssign { role: Role::Follower }));
    assert_eq!(b.recv(), Some(Message::ReplayBegin { count: 2 }));
    let Some(Message::Event { record }) = b.recv() else { panic!("expected the batch") };
    assert_eq!((record.seq, record.kind), (1, RecordKind::RandomRefill));
    assert_eq!(record.refill_values(), Some(vec![0.25, 0.5]));
    assert_eq!(b.recv(), Some(click(2)));
    b.send(&Message::Synced {});
    assert_eq!(b.recv(), Some(Message::Synced {}));
    wait_until(|| server.snapshot().phase == Phase::Mvx);

    a.send(&click(3));
    assert_eq!(b.recv(), Some(click(3)));

    let mut c = Conn::open(&server);
    c.send(&hello());
    assert_eq!(c.recv(), Some(Message::Bye {}));
    assert_eq!(c.recv(), None);
    server.shutdown();
}

#[test]
fn coordinator_renumbers_records() {
    let server = spawn(ServerConfig::default());
    let mut a = Conn::open(&server);
    a.send(&hello());
    a.recv();
    a.send(&Message::RandomBatch { values: vec![0.5] });
    a.send(&click(99));
    wait_until(|| server.snapshot().log_len == 2);
    let log = server.log_snapshot().unwrap();
    assert_eq!(log.records().iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2]);
    server.shutdown();
}

#[test]
fn malformed_line_drops_only_that_connection() {
    let server = spawn(ServerConfig::default());
    let mut a = Conn::open(&server);
    a.send(&hello());
    a.recv();
    let mut b = Conn::open(&server);
    b.send(&hello());
    assert_eq!(b.recv(), Some(Message::RoleAssign { role: Role::Follower }));
    b.recv();
    b.writer.write_all(b"{\"t\":\"Nope\"}\n").unwrap();
    assert_eq!(b.recv(), None);
    wait_until(|| server.snapshot().phase == Phase::SingleVersion && server.snapshot().follower.is_none());
    a.send(&Message::RandomBatch { values: vec![0.5] });
    wait_until(|| server.snapshot().log_len == 1);
    assert!(server.snapshot().leader.is_some());
    assert!(server.snapshot().ended.is_none());
    server.shutdown();
}

#[test]
fn websocket_endpoint_speaks_the_same_messages() {
    let server = spawn(ServerConfig::default());
    let url = format!("ws://{}{WS_PATH}", server.addr());
    let (mut ws, _) = tungstenite::connect(url).unwrap();
    ws.send(tungstenite::Message::text(encode_frame_text(&hello()).unwrap())).unwrap();
    let reply = ws.read().unwrap();
    assert_eq!(decode(reply.to_text().unwrap().as_bytes()).unwrap(), Message::RoleAssign { role: Role::Leader });

    // A TCP client joins the same session as follower.
    ws.send(tungstenite::Message::text(encode_frame_text(&Message::RandomBatch { values: vec![0.5] }).unwrap()))
        .unwrap();
    wait_until(|| server.snapshot().log_len == 1);
    let mut b = Conn::open(&server);
    b.send(&hello());
    assert_eq!(b.recv(), Some(Message::RoleAssign { role: Role::Follower }));
    assert_eq!(b.recv(), Some(Message::ReplayBegin { count: 1 }));
    ws.close(None).unwrap();
    server.shutdown();
}

#[test]
fn websocket_on_other_paths_is_refused() {
    let server = spawn(ServerConfig::default());
    let url = format!("ws://{}/elsewhere", server.addr());
    assert!(tungstenite::connect(url).is_err());
    server.shutdown();
}

#[test]
fn bind_conflict_is_a_typed_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let err = Server::bind(taken.local_addr().unwrap(), ServerConfig::default()).err().unwrap();
    assert!(matches!(err, ServeError::Bind { .. }));
}

#[test]
fn session_log_is_persisted_when_the_leader_leaves() {
    let dir = tempfile::tempdir().unwrap();
    let server = spawn(ServerConfig { session: SessionConfig::default(), log_dir: Some(dir.path().into()) });
    let mut a = Conn::open(&server);
    a.send(&hello());
    a.recv();
    a.send(&Message::RandomBatch { values: vec![0.125] });
    a.send(&click(2));
    a.send(&click(3));
    wait_until(|| server.snapshot().log_len == 3);
    a.send(&Message::Bye {});
    assert_eq!(a.recv(), None);
    wait_until(|| server.snapshot().log_len == 0);
    let summary = server.shutdown();
    assert_eq!(summary.persisted.len(), 1);
    let log = EventLog::load(&summary.persisted[0]).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(log.records()[2], match click(3) {
        Message::Event { record } => record,
        _ => unreachable!(),
    });
}

#[test]
fn ack_mode_relays_follower_acks() {
    let server = spawn(ServerConfig { session: SessionConfig { ack_mode: true, ..Default::default() }, log_dir: None });
    let mut a = Conn::open(&server);
    a.send(&hello());
    a.recv();
    a.send(&Message::RandomBatch { values: vec![0.5] });
    wait_until(|| server.snapshot().log_len == 1);
    let mut b = Conn::open(&server);
    b.send(&hello());
    for _ in 0..3 {
        b.recv();
    }
    b.send(&Message::Synced {});
    assert_eq!(b.recv(), Some(Message::Synced {}));
    a.send(&click(2));
    assert_eq!(b.recv(), Some(click(2)));
    b.send(&Message::Ack { seq: 2 });
    assert_eq!(a.recv(), Some(Message::Ack { seq: 2 }));
    server.shutdown();
}
