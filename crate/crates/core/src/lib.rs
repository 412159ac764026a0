//! Multi-version execution for event-loop programs.

pub mod coordinator;
pub mod eventlog;
pub mod harness;
pub mod protocol;
pub mod scenario;
pub mod simclient;
pub mod metrics;
pub mod pages;
pub mod workload;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pages.md")]
    mod pages {}
    #[doc = include_str!("../../../book/src/nondeterminism.md")]
    mod nondeterminism {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/wire.md")]
    mod wire {}
    #[doc = include_str!("../../../book/src/measuring.md")]
    mod measuring {}
    #[doc = include_str!("../../../book/src/inject.md")]
    mod inject {}
}
