use mvx::coordinator::{Phase, Session, SessionConfig, SessionError};
use mvx::protocol::{EventRecord, Message, Payload, PendingTimer, Role, TimerKind};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Input {
    Connect(u64),
    Disconnect(u64),
    Send(u64, Msg),
    Tick(u64),
}

#[derive(Debug, Clone)]
pub enum Msg {
    Hello,
    Click,
    Refill,
    Synced,
    Promote,
    /// Ack of `log.len() + 1 - back`, which is the swap marker for 0.
    Ack(u64),
    Bye,
    ServerOnly,
}

impl Msg {
    fn build(&self, session: &Session) -> Message {
        let next = session.log().len() + 1;
        match self {
            Msg::Hello => Message::Hello { client_info: "prop".into() },
            Msg::Click => Message::Event {
                record: EventRecord::dom_event("onclick", "sid-1", Payload::new()).with_seq(next),
            },
            Msg::Refill => Message::RandomBatch { values: vec![0.5] },
            Msg::Synced => Message::Synced {},
            Msg::Promote => Message::PromoteRequest {
                pending_timers: vec![PendingTimer { hash: "a".repeat(32), delay: 10, kind: TimerKind::OneShot }],
            },
            Msg::Ack(back) => Message::Ack { seq: next.saturating_sub(*back) },
            Msg::Bye => Message::Bye {},
            Msg::ServerOnly => Message::RoleAssign { role: Role::Leader },
        }
    }
}

fn msg() -> impl Strategy<Value = Msg> {
    prop_oneof![
        1 => Just(Msg::Hello),
        4 => Just(Msg::Click),
        2 => Just(Msg::Refill),
        3 => Just(Msg::Synced),
        3 => Just(Msg::Promote),
        4 => (0u64..3).prop_map(Msg::Ack),
        1 => Just(Msg::Bye),
        1 => Just(Msg::ServerOnly),
    ]
}

fn input() -> impl Strategy<Value = Input> {
    let conn = 1u64..=4;
    prop_oneof![
        2 => conn.clone().prop_map(Input::Connect),
        1 => conn.clone().prop_map(Input::Disconnect),
        12 => (conn, msg()).prop_map(|(c, m)| Input::Send(c, m)),
        1 => (0u64..8000).prop_map(Input::Tick),
    ]
}

pub fn sequence() -> impl Strategy<Value = Vec<Input>> {
    prop::collection::vec(input(), 1..60)
}

/// Feeds `inputs` to a fresh session, checking after each one that every
/// phase change was legal and that refused inputs changed nothing.
pub fn check(inputs: &[Input]) -> Result<(), TestCaseError> {
    let mut s = Session::new(SessionConfig { ack_mode: true, ..Default::default() }, 0);
    let mut now = 0;
    for input in inputs {
        let before = s.phase();
        let seen = s.transitions().len();
        match input {
            Input::Connect(c) => {
                let _ = s.on_connect(*c, now);
            }
            Input::Disconnect(c) => {
                s.on_disconnect(*c, now);
            }
            Input::Tick(ms) => {
                now += ms;
                s.tick(now);
            }
            Input::Send(c, m) => {
                if let Err(e) = s.handle(*c, m.build(&s), now) {
                    prop_assert_eq!(s.phase(), before, "{:?}", e);
                    prop_assert_eq!(s.transitions().len(), seen);
                    if matches!(m, Msg::ServerOnly) {
                        prop_assert!(matches!(e, SessionError::Unexpected(_) | SessionError::Ended));
                    }
                }
            }
        }
        let mut at = before;
        for &(from, to) in &s.transitions()[seen..] {
            prop_assert_eq!(from, at);
            prop_assert!(from.can_transition_to(to), "{:?} -> {:?}", from, to);
            at = to;
        }
        prop_assert_eq!(at, s.phase());
        let snap = s.snapshot();
        match s.phase() {
            Phase::SingleVersion => prop_assert!(snap.follower.is_none()),
            _ => prop_assert!(snap.follower.is_some() && snap.leader.is_some()),
        }
    }
    Ok(())
}
