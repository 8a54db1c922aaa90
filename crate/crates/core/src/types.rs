use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a process, `0..n`.
pub type ProcessId = u32;

/// Upper bound on the number of processes; process sets are 128-bit masks.
pub const MAX_PROCESSES: usize = 128;

/// Bracha/Dolev message types. The discriminant is the 4-bit wire code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageType {
    Send = 0,
    Echo = 1,
    Ready = 2,
    EchoEcho = 3,
    ReadyEcho = 4,
}

impl MessageType {
    pub const ALL: [MessageType; 5] = [
        MessageType::Send,
        MessageType::Echo,
        MessageType::Ready,
        MessageType::EchoEcho,
        MessageType::ReadyEcho,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// ECHO_ECHO and READY_ECHO carry two creators.
    pub fn is_merged(self) -> bool {
        matches!(self, MessageType::EchoEcho | MessageType::ReadyEcho)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Send => "SEND",
            MessageType::Echo => "ECHO",
            MessageType::Ready => "READY",
            MessageType::EchoEcho => "ECHO_ECHO",
            MessageType::ReadyEcho => "READY_ECHO",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(source, bid)`: identifies one broadcast instance of a source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PayloadId {
    pub source: ProcessId,
    pub bid: u32,
}

impl PayloadId {
    pub fn new(source: ProcessId, bid: u32) -> Self {
        Self { source, bid }
    }
}

/// A set of process IDs stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcSet(u128);

impl ProcSet {
    pub const EMPTY: ProcSet = ProcSet(0);

    pub fn from_bits(bits: u128) -> Self {
        ProcSet(bits)
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn singleton(p: ProcessId) -> Self {
        ProcSet(1u128 << p)
    }

    pub fn contains(self, p: ProcessId) -> bool {
        (p as usize) < MAX_PROCESSES && self.0 & (1u128 << p) != 0
    }

    /// Returns `true` if `p` was not already present.
    pub fn insert(&mut self, p: ProcessId) -> bool {
        let bit = 1u128 << p;
        let fresh = self.0 & bit == 0;
        self.0 |= bit;
        fresh
    }

    pub fn remove(&mut self, p: ProcessId) {
        self.0 &= !(1u128 << p);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & other.0)
    }

    pub fn difference(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & !other.0)
    }

    pub fn is_disjoint(self, other: ProcSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset(self, other: ProcSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Ascending iteration.
    pub fn iter(self) -> impl Iterator<Item = ProcessId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let p = bits.trailing_zeros();
            bits &= bits - 1;
            Some(p)
        })
    }
}

impl FromIterator<ProcessId> for ProcSet {
    fn from_iter<I: IntoIterator<Item = ProcessId>>(iter: I) -> Self {
        let mut s = ProcSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for ProcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// A BRB-delivery observed at a process.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Delivery {
    pub source: ProcessId,
    pub bid: u32,
    pub payload: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procset_basics() {
        let mut s: ProcSet = [3, 1, 127].into_iter().collect();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![1, 3, 127]);
        assert!(!s.insert(3));
        assert!(s.insert(4));
        s.remove(1);
        assert_eq!(s.len(), 3);
        assert!(ProcSet::singleton(4).is_subset(s));
        assert!(ProcSet::singleton(0).is_disjoint(s));
        assert!(!s.contains(200));
    }

    #[test]
    fn mtype_codes_are_fixed() {
        for (i, t) in MessageType::ALL.iter().enumerate() {
            assert_eq!(t.code() as usize, i);
            assert_eq!(MessageType::from_code(i as u8), Some(*t));
        }
        assert_eq!(MessageType::from_code(5), None);
        assert_eq!(MessageType::from_code(9), None);
    }
}
