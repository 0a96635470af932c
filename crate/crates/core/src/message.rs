//! Shared message building blocks: the set-of-origins payload carried by the
//! collection protocols and the per-round action type.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A set of source messages, identified by origin node id, with an optional
/// marker singling out one origin as the final one of a collection phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MsgSet {
    origins: BTreeSet<u32>,
    last: Option<u32>,
}

impl MsgSet {
    pub fn empty() -> MsgSet {
        MsgSet::default()
    }

    pub fn singleton(origin: u32) -> MsgSet {
        let mut origins = BTreeSet::new();
        origins.insert(origin);
        MsgSet { origins, last: None }
    }

    pub fn insert(&mut self, origin: u32) {
        self.origins.insert(origin);
    }

    pub fn union_with(&mut self, other: &MsgSet) {
        self.origins.extend(other.origins.iter().copied());
        if self.last.is_none() {
            self.last = other.last;
        }
    }

    pub fn contains(&self, origin: u32) -> bool {
        self.origins.contains(&origin)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.origins.iter().copied()
    }

    pub fn mark_last(&mut self, origin: u32) {
        debug_assert!(self.origins.contains(&origin));
        self.last = Some(origin);
    }

    pub fn last_marker(&self) -> Option<u32> {
        self.last
    }
}

impl FromIterator<u32> for MsgSet {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> MsgSet {
        MsgSet {
            origins: iter.into_iter().collect(),
            last: None,
        }
    }
}

/// What a node does in one round: stay silent and listen, or transmit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action<M> {
    Listen,
    Transmit(M),
}

/// Number of bits in the binary representation of `x` (`bit_length(0) == 0`).
pub fn bit_length(x: u64) -> u32 {
    64 - x.leading_zeros()
}
