use mvx::protocol::{EventRecord, Message, Payload, PendingTimer, Role, TimerKind, MAX_SAFE_INTEGER};
use proptest::prelude::*;
use serde_json::{json, Value};

pub const GOLDEN: &str = include_str!("../golden/messages.ndjson");
pub const REJECTED: &str = include_str!("../golden/rejected.txt");

fn payload(v: Value) -> Payload {
    v.as_object().unwrap().clone()
}

fn hash(c: char) -> String {
    std::iter::repeat_n(c, 32).collect()
}

/// The messages in `golden/messages.ndjson`, built by hand, in file order.
pub fn golden_values() -> Vec<Message> {
    let ev = |r: EventRecord| Message::Event { record: r };
    vec![
        Message::Hello { client_info: "sim-1".into() },
        Message::RoleAssign { role: Role::Leader },
        Message::RoleAssign { role: Role::Follower },
        Message::RandomBatch { values: vec![0.5, 0.25, 0.125] },
        ev(EventRecord::dom_event("onclick", "sid-3", payload(json!({"clientX": 10, "clientY": 20}))).with_seq(1)),
        ev(EventRecord::timer_fired("0123456789abcdef0123456789abcdef").with_seq(2).at(250)),
        ev(EventRecord::state_update("name", "ada", false).with_seq(3).at(300)),
        ev(EventRecord::selection_update("text", 2, 5).with_seq(4).at(310)),
        ev(EventRecord::random_refill(&[0.75]).with_seq(5).at(320)),
        Message::ReplayBegin { count: 0 },
        Message::Synced {},
        Message::PromoteRequest { pending_timers: vec![] },
        Message::PromoteRequest {
            pending_timers: vec![PendingTimer { hash: hash('f'), delay: 400, kind: TimerKind::OneShot }],
        },
        Message::RoleSwap {
            new_role: Role::Leader,
            pending_timers: vec![PendingTimer { hash: hash('0'), delay: 250, kind: TimerKind::Repeating }],
        },
        Message::Ack { seq: 42 },
        Message::Bye {},
    ]
}

pub fn unit_f64() -> impl Strategy<Value = f64> {
    (0.0f64..1.0).prop_filter("below one", |v| *v < 1.0)
}

fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (-(MAX_SAFE_INTEGER as i64)..=MAX_SAFE_INTEGER as i64).prop_map(Value::from),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Value::from),
        any::<String>().prop_map(Value::String),
    ]
}

fn json_value() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map(any::<String>(), inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn any_payload() -> impl Strategy<Value = Payload> {
    prop::collection::btree_map(any::<String>(), json_value(), 0..5).prop_map(|m| m.into_iter().collect())
}

fn timer_hash() -> impl Strategy<Value = String> {
    "[0-9a-f]{32}"
}

fn nonempty() -> impl Strategy<Value = String> {
    any::<String>().prop_filter("non-empty", |s| !s.is_empty())
}

fn record() -> impl Strategy<Value = EventRecord> {
    let seq = 1..=MAX_SAFE_INTEGER;
    let wall = 0..=MAX_SAFE_INTEGER;
    let body = prop_oneof![
        (nonempty(), nonempty(), any_payload()).prop_map(|(t, e, p)| EventRecord::dom_event(t, e, p)),
        timer_hash().prop_map(|h| EventRecord::timer_fired(&h)),
        prop::collection::vec(unit_f64(), 1..8).prop_map(|v| EventRecord::random_refill(&v)),
        (nonempty(), any::<String>(), any::<bool>()).prop_map(|(e, v, c)| EventRecord::state_update(e, &v, c)),
        (nonempty(), 0..MAX_SAFE_INTEGER, 0..MAX_SAFE_INTEGER).prop_map(|(e, s, n)| EventRecord::selection_update(e, s, n)),
    ];
    (body, seq, wall).prop_map(|(r, s, w)| r.with_seq(s).at(w))
}

fn pending() -> impl Strategy<Value = Vec<PendingTimer>> {
    let kind = prop_oneof![Just(TimerKind::OneShot), Just(TimerKind::Repeating)];
    prop::collection::vec(
        (timer_hash(), 1..=MAX_SAFE_INTEGER, kind).prop_map(|(hash, delay, kind)| PendingTimer { hash, delay, kind }),
        0..4,
    )
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Leader), Just(Role::Follower)]
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        any::<String>().prop_map(|client_info| Message::Hello { client_info }),
        role().prop_map(|role| Message::RoleAssign { role }),
        prop::collection::vec(unit_f64(), 1..120).prop_map(|values| Message::RandomBatch { values }),
        record().prop_map(|record| Message::Event { record }),
        (0..=MAX_SAFE_INTEGER).prop_map(|count| Message::ReplayBegin { count }),
        Just(Message::Synced {}),
        pending().prop_map(|pending_timers| Message::PromoteRequest { pending_timers }),
        (role(), pending()).prop_map(|(new_role, pending_timers)| Message::RoleSwap { new_role, pending_timers }),
        (0..=MAX_SAFE_INTEGER).prop_map(|seq| Message::Ack { seq }),
        Just(Message::Bye {}),
    ]
}
