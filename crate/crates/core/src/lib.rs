//! Deterministic synchronous radio-network simulator and labeling-scheme toolkit.
//!
//! The crate is organised around three layers:
//!
//! * graph machinery: distances, centers, square graphs, colourings,
//!   automorphisms and distinguishing labelings ([`graph`], [`coloring`],
//!   [`autom`], [`distinguishing`]);
//! * the round-synchronous radio engine with its collision semantics and
//!   deterministic traces ([`sim`], [`message`]);
//! * the labeling schemes and node programs built on top of it: acknowledged
//!   broadcast ([`ack`]), multi-source broadcast ([`kb`]), tree gossiping with
//!   prime transmission delays ([`gossip`]) and the triangular-tree family
//!   with its exact round schedule ([`tn`]).
//!
//! [`verify`] holds completion checking, trace invariant suites and the
//! indistinguishability demos.

pub mod ack;
pub mod autom;
pub mod coloring;
pub mod distinguishing;
pub mod error;
pub mod gossip;
pub mod graph;
pub mod kb;
pub mod message;
pub mod primes;
pub mod sim;
pub mod tn;
pub mod verify;

pub use error::Error;
pub use graph::Graph;
