//! Byzantine behaviours for corrupt processes.
//!
//! Every strategy only sees the frames arriving on its own links and only
//! emits frames on its own links. Most strategies wrap an honest
//! [`NodeState`] and tamper with its traffic, which keeps them effective
//! against every modification set without re-implementing the protocol.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModificationConfig;
use crate::engine::{NodeState, SendAction};
use crate::error::{ProtocolError, SimError};
use crate::types::{MessageType, PayloadId, ProcessId};
use crate::wire::{decode_frame, encode_frame, Message};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Drops everything and never sends.
    Silent,
    /// Two personas: one honest, one that sees every payload altered. Each
    /// neighbor talks to exactly one persona, so as a source it sends
    /// divergent payloads under one bid and as a relay it echoes both.
    Equivocator,
    /// Honest, plus fabricated contents on made-up paths.
    PathForger,
    /// Honest, but every outgoing payload and relayed creator is altered.
    Mutator,
    /// Honest, plus each distinct inbound frame resent once to every other
    /// neighbor.
    Replayer,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Silent,
        Strategy::Equivocator,
        Strategy::PathForger,
        Strategy::Mutator,
        Strategy::Replayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Silent => "silent",
            Strategy::Equivocator => "equivocator",
            Strategy::PathForger => "path_forger",
            Strategy::Mutator => "mutator",
            Strategy::Replayer => "replayer",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm || st.name().replace('_', "") == norm)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Which processes are corrupt and how they behave.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryPlan {
    pub corrupt: BTreeMap<ProcessId, Strategy>,
}

impl AdversaryPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn uniform(nodes: &[ProcessId], strategy: Strategy) -> Self {
        Self {
            corrupt: nodes.iter().map(|&p| (p, strategy)).collect(),
        }
    }

    pub fn with(mut self, node: ProcessId, strategy: Strategy) -> Self {
        self.corrupt.insert(node, strategy);
        self
    }

    pub fn is_corrupt(&self, p: ProcessId) -> bool {
        self.corrupt.contains_key(&p)
    }

    pub fn strategy(&self, p: ProcessId) -> Option<Strategy> {
        self.corrupt.get(&p).copied()
    }

    pub fn validate(&self, n: usize, f: usize) -> Result<(), SimError> {
        if self.corrupt.len() > f {
            return Err(SimError::Plan(format!(
                "{} corrupt processes but f = {f}",
                self.corrupt.len()
            )));
        }
        if let Some(&p) = self.corrupt.keys().find(|&&p| p as usize >= n) {
            return Err(SimError::Plan(format!("process {p} out of range")));
        }
        Ok(())
    }
}

/// What a corrupt process reacts to.
#[derive(Clone, Copy, Debug)]
pub enum Inbound<'a> {
    Frame { from: ProcessId, bytes: &'a [u8] },
    Broadcast { payload: &'a [u8] },
}

/// Local IDs used for fabricated contents count down from the top of the
/// local ID space so they do not collide with the wrapped honest node.
const FORGED_LID_TOP: u32 = u32::MAX;

/// Cap on distinct contents a forger fabricates from.
const FORGE_BUDGET: usize = 4;

/// One corrupt process.
#[derive(Clone, Debug)]
pub struct Adversary {
    id: ProcessId,
    n: usize,
    strategy: Strategy,
    cfg: ModificationConfig,
    neighbors: Vec<ProcessId>,
    honest: NodeState,
    /// Equivocator's second persona.
    twin: Option<NodeState>,
    rng: ChaCha8Rng,
    seen: HashSet<Vec<u8>>,
    forged_from: HashSet<(PayloadId, Vec<u8>)>,
    next_forged_lid: u32,
}

impl Adversary {
    pub fn new(
        id: ProcessId,
        neighbors: &[ProcessId],
        n: usize,
        f: usize,
        cfg: ModificationConfig,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        let honest = NodeState::init(id, neighbors, n, f, cfg)?;
        let twin = (strategy == Strategy::Equivocator).then(|| honest.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x00ad_0000_0000 | id as u64);
        let lid_top = if cfg.local_id_bits >= 32 {
            FORGED_LID_TOP
        } else {
            (1u32 << cfg.local_id_bits) - 1
        };
        Ok(Self {
            id,
            n,
            strategy,
            cfg,
            neighbors: honest.neighbors().to_vec(),
            honest,
            twin,
            rng,
            seen: HashSet::new(),
            forged_from: HashSet::new(),
            next_forged_lid: lid_top,
        })
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Neighbors served by the twin persona: every second one.
    fn twin_side(&self, p: ProcessId) -> bool {
        self.neighbors.iter().position(|&q| q == p).is_some_and(|i| i % 2 == 1)
    }

    pub fn act(&mut self, inbound: Inbound<'_>) -> Vec<SendAction> {
        match self.strategy {
            Strategy::Silent => Vec::new(),
            Strategy::Equivocator => self.equivocate(inbound),
            Strategy::Mutator => {
                let out = self.honest_step(inbound);
                out.into_iter().filter_map(|a| self.mutate(a)).collect()
            }
            Strategy::Replayer => {
                let mut out = self.honest_step(inbound);
                if let Inbound::Frame { from, bytes } = inbound {
                    if self.seen.insert(bytes.to_vec()) {
                        for &t in &self.neighbors {
                            if t != from {
                                out.push(SendAction {
                                    to: t,
                                    mtype: MessageType::from_code(bytes.first().map_or(0, |b| b >> 4))
                                        .unwrap_or(MessageType::Send),
                                    frame: crate::wire::Frame {
                                        bytes: bytes.to_vec(),
                                        bits: bytes.len() * 8,
                                    },
                                });
                            }
                        }
                    }
                }
                out
            }
            Strategy::PathForger => {
                let mut out = self.honest_step(inbound);
                out.extend(self.forge(inbound));
                out
            }
        }
    }

    fn honest_step(&mut self, inbound: Inbound<'_>) -> Vec<SendAction> {
        match inbound {
            Inbound::Frame { from, bytes } => self.honest.on_frame(from, bytes),
            Inbound::Broadcast { payload } => self.honest.brb_broadcast(payload).unwrap_or_default(),
        }
    }

    fn equivocate(&mut self, inbound: Inbound<'_>) -> Vec<SendAction> {
        let mut out: Vec<SendAction> = self
            .honest_step(inbound)
            .into_iter()
            .filter(|a| !self.twin_side(a.to))
            .collect();
        let mut twin = self.twin.take().expect("equivocator has a twin");
        let twin_out = match inbound {
            Inbound::Frame { from, bytes } => match self.altered_inbound(from, bytes) {
                Some(b) => twin.on_frame(from, &b),
                None => twin.on_frame(from, bytes),
            },
            Inbound::Broadcast { payload } => twin.brb_broadcast(&alter(payload)).unwrap_or_default(),
        };
        self.twin = Some(twin);
        out.extend(twin_out.into_iter().filter(|a| self.twin_side(a.to)));
        out
    }

    /// The twin's view of an inbound frame: payload bytes altered.
    fn altered_inbound(&self, from: ProcessId, bytes: &[u8]) -> Option<Vec<u8>> {
        let mut m = decode_frame(bytes, from, &self.cfg).ok()?;
        let data = m.payload.as_mut()?;
        *data = alter(data);
        encode_frame(&m, &self.cfg).ok().map(|f| f.bytes)
    }

    fn mutate(&mut self, a: SendAction) -> Option<SendAction> {
        let mut m = decode_frame(&a.frame.bytes, self.id, &self.cfg).ok()?;
        if let Some(data) = m.payload.as_mut() {
            *data = alter(data);
        }
        if let Some(c) = m.creator {
            if c != self.id && m.mtype != MessageType::Send {
                let shifted = (c + 1) % self.n as ProcessId;
                m.creator = Some(if shifted == self.id { (shifted + 1) % self.n as ProcessId } else { shifted });
            }
        }
        let frame = encode_frame(&m, &self.cfg).ok()?;
        Some(SendAction { to: a.to, mtype: m.mtype, frame })
    }

    /// Fabricates contents seen on the first few payloads: SEND, ECHO and
    /// READY for both the genuine and an altered payload, attributed to
    /// other processes and carried on random simple paths, plus one frame
    /// with a repeated path entry.
    fn forge(&mut self, inbound: Inbound<'_>) -> Vec<SendAction> {
        let (pid, data) = match inbound {
            Inbound::Frame { from, bytes } => match decode_frame(bytes, from, &self.cfg) {
                Ok(Message {
                    payload_id: Some(pid),
                    payload: Some(data),
                    ..
                }) => (pid, data),
                _ => return Vec::new(),
            },
            Inbound::Broadcast { .. } => return Vec::new(),
        };
        if self.forged_from.len() >= FORGE_BUDGET || !self.forged_from.insert((pid, data.clone())) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let variants = [data.clone(), alter(&data)];
        for t in self.neighbors.clone() {
            for (vi, payload) in variants.iter().enumerate() {
                let lid = self.fresh_lid();
                for mtype in [MessageType::Send, MessageType::Echo, MessageType::Ready] {
                    let creator = if mtype == MessageType::Send {
                        pid.source
                    } else {
                        self.random_other(&[self.id, t])
                    };
                    if creator == t || creator == self.id {
                        continue;
                    }
                    let path = self.random_path(&[self.id, t, creator], creator);
                    let m = Message {
                        mtype,
                        payload_id: Some(pid),
                        local_id: self.cfg.mbd1.then_some(lid),
                        payload: Some(payload.clone()),
                        creator: Some(creator),
                        embedded_creator: None,
                        path: Some(path),
                    };
                    if let Ok(frame) = encode_frame(&m, &self.cfg) {
                        out.push(SendAction { to: t, mtype, frame });
                    }
                }
                if vi == 1 {
                    let x = self.random_other(&[t]);
                    let m = Message {
                        mtype: MessageType::Echo,
                        payload_id: Some(pid),
                        local_id: self.cfg.mbd1.then_some(lid),
                        payload: Some(payload.clone()),
                        creator: Some(x),
                        embedded_creator: None,
                        path: Some(vec![x, x]),
                    };
                    if let Ok(frame) = encode_frame(&m, &self.cfg) {
                        out.push(SendAction {
                            to: t,
                            mtype: MessageType::Echo,
                            frame,
                        });
                    }
                }
            }
        }
        out
    }

    fn fresh_lid(&mut self) -> u32 {
        let lid = self.next_forged_lid;
        self.next_forged_lid = self.next_forged_lid.saturating_sub(1);
        lid
    }

    fn random_other(&mut self, exclude: &[ProcessId]) -> ProcessId {
        let pool: Vec<ProcessId> = (0..self.n as ProcessId).filter(|p| !exclude.contains(p)).collect();
        *pool.choose(&mut self.rng).unwrap_or(&self.id)
    }

    /// A random simple path whose first entry is `creator` half of the time.
    fn random_path(&mut self, exclude: &[ProcessId], creator: ProcessId) -> Vec<ProcessId> {
        let mut pool: Vec<ProcessId> = (0..self.n as ProcessId).filter(|p| !exclude.contains(p)).collect();
        pool.shuffle(&mut self.rng);
        let len = self.rng.random_range(0..=pool.len().min(3));
        let mut path: Vec<ProcessId> = pool.into_iter().take(len).collect();
        if self.rng.random_bool(0.5) {
            path.insert(0, creator);
        }
        path
    }
}

/// The payload the second persona sees instead of `data`.
fn alter(data: &[u8]) -> Vec<u8> {
    if data.is_empty() {
        return vec![0xa5];
    }
    data.iter().map(|b| b ^ 0xa5).collect()
}

/// Frames a corrupt process emits in reaction to `inbound`.
pub fn corrupt_actions(adv: &mut Adversary, inbound: Inbound<'_>, _now: f64) -> Vec<SendAction> {
    adv.act(inbound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModificationConfig {
        ModificationConfig::preset("bdopt").unwrap()
    }

    #[test]
    fn parse_strategy_names() {
        assert_eq!("Silent".parse::<Strategy>().unwrap(), Strategy::Silent);
        assert_eq!("path-forger".parse::<Strategy>().unwrap(), Strategy::PathForger);
        assert_eq!("pathforger".parse::<Strategy>().unwrap(), Strategy::PathForger);
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn plan_size_is_checked() {
        let plan = AdversaryPlan::uniform(&[1, 2], Strategy::Silent);
        assert!(plan.validate(7, 1).is_err());
        assert!(plan.validate(7, 2).is_ok());
        assert!(AdversaryPlan::none().with(9, Strategy::Mutator).validate(4, 1).is_err());
    }

    #[test]
    fn silent_emits_nothing() {
        let mut a = Adversary::new(0, &[1, 2, 3], 4, 1, cfg(), Strategy::Silent, 1).unwrap();
        assert!(corrupt_actions(&mut a, Inbound::Broadcast { payload: b"x" }, 0.0).is_empty());
        assert!(a.act(Inbound::Frame { from: 1, bytes: &[0x10, 0, 3] }).is_empty());
    }

    #[test]
    fn equivocating_source_splits_payloads() {
        let mut a = Adversary::new(1, &[2, 3], 4, 1, cfg(), Strategy::Equivocator, 1).unwrap();
        let out = a.act(Inbound::Broadcast { payload: b"AAAA" });
        let sends: Vec<(ProcessId, Vec<u8>)> = out
            .iter()
            .filter(|s| s.mtype == MessageType::Send)
            .map(|s| (s.to, decode_frame(&s.frame.bytes, 1, &cfg()).unwrap().payload.unwrap()))
            .collect();
        assert_eq!(sends.len(), 2);
        assert_eq!(sends[0], (2, b"AAAA".to_vec()));
        assert_eq!(sends[1].0, 3);
        assert_ne!(sends[1].1, b"AAAA".to_vec());
        let pids: HashSet<PayloadId> = out
            .iter()
            .map(|s| decode_frame(&s.frame.bytes, 1, &cfg()).unwrap().payload_id.unwrap())
            .collect();
        assert_eq!(pids.len(), 1);
    }

    #[test]
    fn forger_includes_duplicate_path_frame() {
        let c = cfg();
        let mut a = Adversary::new(1, &[0, 2, 3], 4, 1, c, Strategy::PathForger, 3).unwrap();
        let send = Message {
            mtype: MessageType::Send,
            payload_id: Some(PayloadId::new(0, 0)),
            local_id: None,
            payload: Some(b"hi".to_vec()),
            creator: Some(0),
            embedded_creator: None,
            path: Some(vec![]),
        };
        let bytes = encode_frame(&send, &c).unwrap().bytes;
        let out = a.act(Inbound::Frame { from: 0, bytes: &bytes });
        let malformed = out
            .iter()
            .filter(|s| decode_frame(&s.frame.bytes, 1, &c).is_err())
            .count();
        assert!(malformed >= 3, "one duplicate-path frame per neighbor");
        // A second copy of the same content does not trigger more forgeries.
        let again = a.act(Inbound::Frame { from: 0, bytes: &bytes });
        assert!(again.len() < out.len());
    }

    #[test]
    fn mutator_alters_payloads() {
        let c = cfg();
        let mut a = Adversary::new(0, &[1, 2, 3], 4, 1, c, Strategy::Mutator, 3).unwrap();
        let out = a.act(Inbound::Broadcast { payload: b"real" });
        assert!(!out.is_empty());
        for s in out {
            let m = decode_frame(&s.frame.bytes, 0, &c).unwrap();
            assert_ne!(m.payload.unwrap(), b"real".to_vec());
        }
    }

    #[test]
    fn replayer_resends_each_frame_once() {
        let c = cfg();
        let mut a = Adversary::new(1, &[0, 2, 3], 4, 1, c, Strategy::Replayer, 3).unwrap();
        let junk = [0xffu8, 0xff];
        let first = a.act(Inbound::Frame { from: 0, bytes: &junk });
        assert_eq!(first.len(), 2);
        assert!(first.iter().all(|s| s.to != 0 && s.frame.bytes == junk));
        assert!(a.act(Inbound::Frame { from: 0, bytes: &junk }).is_empty());
    }
}
