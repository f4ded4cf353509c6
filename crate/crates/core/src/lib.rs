//! A prioritized consortium chain: two-class mempool, classifier-shortlisted
//! leader election, peer-prediction block review, and a deterministic
//! simulator that ties them together.
//!
//! The guide in `book/` walks through each part; its snippets run as doc-tests.

// `!(x >= 0.0)` style guards are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builder;
pub mod election;
pub mod engine;
pub mod mempool;
pub mod model;
pub mod numfmt;
pub mod peer_prediction;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transactions.md")]
    mod transactions {}
    #[doc = include_str!("../../../book/src/election.md")]
    mod election {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
