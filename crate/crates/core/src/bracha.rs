//! SEND/ECHO/READY quorum logic.
//!
//! The `sent_echo`, `sent_ready` and `delivered` flags live per broadcast
//! instance `(source, bid)`, so a correct node echoes, readies and delivers
//! at most one payload per instance even when a faulty source equivocates.
//! Creator counters live per payload, so quorums never mix payloads.

use std::collections::HashMap;

use crate::config::ModificationConfig;
use crate::error::ProtocolError;
use crate::pathstore::PayloadRef;
use crate::types::{MessageType, PayloadId, ProcSet, ProcessId};

/// `⌈(n+f+1)/2⌉`, the number of ECHOs needed before sending READY.
pub fn echo_quorum(n: usize, f: usize) -> Result<usize, ProtocolError> {
    if n < 3 * f + 1 {
        return Err(ProtocolError::InvalidParams(format!(
            "n = {n} is below 3f+1 = {}",
            3 * f + 1
        )));
    }
    Ok((n + f + 1).div_ceil(2))
}

/// Which processes create their own ECHO and READY.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoleAssignment {
    pub echo_generators: ProcSet,
    pub ready_generators: ProcSet,
}

impl RoleAssignment {
    pub fn everyone(n: usize) -> Self {
        let all = lowest(n, n);
        Self {
            echo_generators: all,
            ready_generators: all,
        }
    }
}

fn lowest(count: usize, n: usize) -> ProcSet {
    (0..count.min(n) as ProcessId).collect()
}

/// Generator sets under `mbd11`: the `echo_quorum + f` lowest IDs echo and
/// the `3f+1` lowest IDs send READY. Without `mbd11` everyone does both.
pub fn roles(n: usize, f: usize, cfg: &ModificationConfig) -> Result<RoleAssignment, ProtocolError> {
    let q = echo_quorum(n, f)?;
    if !cfg.mbd11 {
        return Ok(RoleAssignment::everyone(n));
    }
    Ok(RoleAssignment {
        echo_generators: lowest(q + f, n),
        ready_generators: lowest(3 * f + 1, n),
    })
}

/// What the quorum logic asks the node to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrachaAction {
    Echo(PayloadRef),
    Ready(PayloadRef),
    Deliver(PayloadRef),
}

#[derive(Clone, Debug, Default)]
struct Counters {
    echos: ProcSet,
    readys: ProcSet,
}

#[derive(Clone, Debug, Default)]
struct Instance {
    sent_echo: bool,
    sent_ready: bool,
    delivered: bool,
    per_payload: HashMap<PayloadRef, Counters>,
}

/// Quorum state of one node across broadcast instances.
#[derive(Clone, Debug)]
pub struct BrachaState {
    id: ProcessId,
    f: usize,
    quorum: usize,
    echo_generator: bool,
    ready_generator: bool,
    /// MBD.6: a delivered READY also counts as its creator's echo vote,
    /// since the creator's ECHO may be discarded on the way.
    ready_counts_as_echo: bool,
    instances: HashMap<PayloadId, Instance>,
}

impl BrachaState {
    pub fn new(id: ProcessId, n: usize, f: usize, cfg: &ModificationConfig) -> Result<Self, ProtocolError> {
        let r = roles(n, f, cfg)?;
        Ok(Self {
            id,
            f,
            quorum: echo_quorum(n, f)?,
            echo_generator: r.echo_generators.contains(id),
            ready_generator: r.ready_generators.contains(id),
            ready_counts_as_echo: cfg.mbd6,
            instances: HashMap::new(),
        })
    }

    pub fn is_echo_generator(&self) -> bool {
        self.echo_generator
    }

    pub fn is_ready_generator(&self) -> bool {
        self.ready_generator
    }

    pub fn sent_echo(&self, pid: PayloadId) -> bool {
        self.instances.get(&pid).is_some_and(|i| i.sent_echo)
    }

    pub fn sent_ready(&self, pid: PayloadId) -> bool {
        self.instances.get(&pid).is_some_and(|i| i.sent_ready)
    }

    pub fn delivered(&self, pid: PayloadId) -> bool {
        self.instances.get(&pid).is_some_and(|i| i.delivered)
    }

    pub fn echo_creators(&self, pid: PayloadId, r: PayloadRef) -> ProcSet {
        self.counters(pid, r).map_or(ProcSet::EMPTY, |c| c.echos)
    }

    pub fn ready_creators(&self, pid: PayloadId, r: PayloadRef) -> ProcSet {
        self.counters(pid, r).map_or(ProcSet::EMPTY, |c| c.readys)
    }

    fn counters(&self, pid: PayloadId, r: PayloadRef) -> Option<&Counters> {
        self.instances.get(&pid).and_then(|i| i.per_payload.get(&r))
    }

    /// MBD.6 and MBD.7: an ECHO that can be dropped without being relayed.
    pub fn discards_echo(&self, pid: PayloadId, r: PayloadRef, creator: ProcessId, cfg: &ModificationConfig) -> bool {
        (cfg.mbd7 && self.delivered(pid)) || (cfg.mbd6 && self.ready_creators(pid, r).contains(creator))
    }

    /// Feeds one Dolev delivery into the quorum logic.
    pub fn on_rc_deliver(
        &mut self,
        mtype: MessageType,
        creator: ProcessId,
        pid: PayloadId,
        r: PayloadRef,
    ) -> Vec<BrachaAction> {
        let f = self.f;
        let quorum = self.quorum;
        let (echo_gen, ready_gen) = (self.echo_generator, self.ready_generator);
        let inst = self.instances.entry(pid).or_default();
        let mut out = Vec::new();
        match mtype {
            MessageType::Send => {
                if creator == pid.source && !inst.sent_echo && echo_gen {
                    inst.sent_echo = true;
                    out.push(BrachaAction::Echo(r));
                }
            }
            MessageType::Echo | MessageType::Ready => {
                let c = inst.per_payload.entry(r).or_default();
                if mtype == MessageType::Echo || self.ready_counts_as_echo {
                    c.echos.insert(creator);
                }
                if mtype == MessageType::Ready {
                    c.readys.insert(creator);
                }
                let (echos, readys) = (c.echos.len(), c.readys.len());
                if echos > f && !inst.sent_echo && echo_gen {
                    inst.sent_echo = true;
                    out.push(BrachaAction::Echo(r));
                }
                if (echos >= quorum || readys > f) && !inst.sent_ready && ready_gen {
                    inst.sent_ready = true;
                    out.push(BrachaAction::Ready(r));
                }
                if readys > 2 * f && !inst.delivered {
                    inst.delivered = true;
                    out.push(BrachaAction::Deliver(r));
                }
            }
            MessageType::EchoEcho | MessageType::ReadyEcho => {
                unreachable!("merged messages are split before reaching the quorum logic")
            }
        }
        out
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }
}
