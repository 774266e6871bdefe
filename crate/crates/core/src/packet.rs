//! Vehicle packets: possibly fractional vehicle quantities that share an
//! origin, destination, path and departure time.

use std::fmt;

use crate::demand::PathId;

/// Smallest fragment a split may move; smaller movable amounts wait.
pub const MIN_FRAGMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PacketId(pub u64);

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    /// The packet this one was split from, at the root of the split tree.
    pub parent: PacketId,
    pub path: PathId,
    pub size: f64,
    pub depart_time: f64,
    /// Index of the element the packet currently occupies on its route.
    pub leg: u32,
    /// Order of entry into the current element; split fragments share it.
    pub entry_seq: u64,
}

impl Packet {
    pub fn new(id: PacketId, path: PathId, size: f64, depart_time: f64) -> Self {
        Packet {
            id,
            parent: id,
            path,
            size,
            depart_time,
            leg: 0,
            entry_seq: 0,
        }
    }

    /// Splits `amount` off into a new fragment with id `fragment_id`; `self`
    /// keeps the remainder. The two sizes add up to the original size exactly.
    pub fn split_off(&mut self, amount: f64, fragment_id: PacketId) -> Packet {
        let (moved, kept) = exact_split(self.size, amount);
        self.size = kept;
        Packet {
            id: fragment_id,
            size: moved,
            ..self.clone()
        }
    }
}

/// Splits `size` into `(moved, kept)` with `moved ≈ amount`, `moved <= amount`
/// and `moved + kept == size` exactly, so a split never overdraws a budget.
pub fn exact_split(size: f64, amount: f64) -> (f64, f64) {
    debug_assert!(amount > 0.0 && amount < size);
    let mut kept = size - amount;
    let mut moved = size - kept;
    while moved > amount || moved + kept != size {
        kept = kept.next_up();
        moved = size - kept;
    }
    (moved, kept)
}

/// How much of a head packet of `size` may move under `budget`: the whole
/// packet, a fragment of at least [`MIN_FRAGMENT`], or nothing.
#[inline]
pub fn movable(size: f64, budget: f64) -> Option<f64> {
    if budget >= size {
        Some(size)
    } else if budget >= MIN_FRAGMENT {
        Some(budget)
    } else {
        None
    }
}
