//! Drives simulated clients against a coordinator, either in one thread
//! with virtual time ([`Harness`]) or over real sockets ([`NetClient`]).

mod memory;
mod net;
mod peer;

pub use memory::{CarriedTimer, Harness, HarnessError, PromoteReport};
pub use net::NetClient;
pub use peer::{Peer, PeerError};

/// First seq at which two state trails disagree, comparing only seqs both
/// recorded. A leader checkpoints once per step while a follower does so
/// per record, so the follower's trail is the finer of the two.
pub fn first_divergence(a: &[(u64, String)], b: &[(u64, String)]) -> Option<u64> {
    let index: std::collections::HashMap<u64, &str> = b.iter().map(|(s, h)| (*s, h.as_str())).collect();
    a.iter().find(|(s, h)| index.get(s).is_some_and(|other| *other != h)).map(|(s, _)| *s)
}
