//! Prime number indexing and the two transmission-delay policies used by the
//! gossip scheme: faithful indexed primes (guarded by a configurable index
//! bound) and a run-global registry that remaps encodings to small successive
//! odd primes.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Default index bound for the faithful policy.
pub const DEFAULT_PRIME_BOUND: u64 = 10_000_000;

/// A growable table of primes indexed from 1 (`prime(1) == 2`).
#[derive(Debug, Default)]
pub struct PrimeTable {
    primes: Vec<u64>,
    sieved_to: u64,
}

impl PrimeTable {
    pub fn new() -> PrimeTable {
        PrimeTable::default()
    }

    /// The `n`-th prime, 1-based.
    pub fn nth(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "prime indices start at 1");
        while self.primes.len() < n as usize {
            self.grow(n);
        }
        self.primes[n as usize - 1]
    }

    fn grow(&mut self, want: u64) {
        // p_n < n (ln n + ln ln n) for n >= 6; pad smaller cases.
        let n = want.max(self.primes.len() as u64 * 2).max(16) as f64;
        let bound = (n * (n.ln() + n.ln().ln())).ceil() as u64 + 16;
        let bound = bound.max(self.sieved_to * 2);
        let mut is_comp = vec![false; (bound + 1) as usize];
        self.primes.clear();
        let mut i = 2u64;
        while i <= bound {
            if !is_comp[i as usize] {
                self.primes.push(i);
                let mut j = i * i;
                while j <= bound {
                    is_comp[j as usize] = true;
                    j += i;
                }
            }
            i += 1;
        }
        self.sieved_to = bound;
    }

    /// The `index`-th prime where the index may be a big integer; errors when
    /// the index exceeds `bound`.
    pub fn nth_checked(&mut self, index: &BigUint, bound: u64) -> Result<u64> {
        match index.to_u64() {
            Some(i) if i >= 1 && i <= bound => Ok(self.nth(i)),
            _ => Err(Error::PrimeBoundExceeded {
                index: index.clone(),
                bound,
            }),
        }
    }
}

/// The `n`-th prime, 1-based, with a throwaway table. Prefer [`PrimeTable`]
/// for repeated queries.
pub fn nth_prime(n: u64) -> u64 {
    PrimeTable::new().nth(n)
}

/// How a gossip node turns its current encoding into a transmission delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayPolicy {
    /// delay = the `enc`-th prime; fails fast when `enc` exceeds the bound.
    FaithfulPrime { bound: u64 },
    /// delay = a small odd prime assigned per distinct encoding, in first
    /// appearance order across the whole run.
    RegistryPrime,
}

impl Default for DelayPolicy {
    fn default() -> DelayPolicy {
        DelayPolicy::FaithfulPrime {
            bound: DEFAULT_PRIME_BOUND,
        }
    }
}

/// Run-global deterministic map from encodings to successive odd primes
/// (3, 5, 7, 11, ...). Distinct encodings always receive distinct primes, so
/// the divisibility arguments that drive the gossip protocol still hold.
#[derive(Debug, Default)]
pub struct PrimeRegistry {
    assigned: HashMap<BigUint, u64>,
    table: PrimeTable,
    next_index: u64,
}

impl PrimeRegistry {
    pub fn new() -> PrimeRegistry {
        PrimeRegistry {
            assigned: HashMap::new(),
            table: PrimeTable::new(),
            next_index: 2, // start at prime(2) == 3
        }
    }

    pub fn delay_for(&mut self, enc: &BigUint) -> u64 {
        if let Some(&p) = self.assigned.get(enc) {
            return p;
        }
        let p = self.table.nth(self.next_index);
        self.next_index += 1;
        self.assigned.insert(enc.clone(), p);
        p
    }

    pub fn assignments(&self) -> Vec<(BigUint, u64)> {
        let mut out: Vec<_> = self.assigned.iter().map(|(k, &v)| (k.clone(), v)).collect();
        out.sort_by(|a, b| a.1.cmp(&b.1));
        out
    }
}
