//! One process running the combined protocol.
//!
//! A [`NodeState`] turns inputs (a broadcast request or a frame from a
//! neighbor) into an ordered list of frames to send. Within one input the
//! node first collects every logical send per neighbor, then runs a merge
//! pass (READY+ECHO into READY_ECHO, own ECHO plus a relayed empty-path ECHO
//! into ECHO_ECHO), then encodes. Relays are always queued before the
//! node's own new messages on each link.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bracha::{BrachaAction, BrachaState};
use crate::config::ModificationConfig;
use crate::dolev::{stored_relays, DolevCtx, DolevState, Reception};
use crate::error::ProtocolError;
use crate::pathstore::{MessageKey, PayloadRef};
use crate::types::{Delivery, MessageType, PayloadId, ProcSet, ProcessId};
use crate::wire::{decode_frame, encode_frame, Frame, Message};

/// A frame leaving a node on one of its links.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendAction {
    pub to: ProcessId,
    pub mtype: MessageType,
    pub frame: Frame,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub malformed_frames: u64,
    pub queued_frames: u64,
    pub replayed_frames: u64,
}

/// A logical single-content send, before merging and encoding.
#[derive(Clone, Debug)]
struct Outgoing {
    key: MessageKey,
    path: Vec<ProcessId>,
    created: bool,
}

#[derive(Default)]
struct Batch {
    out: BTreeMap<ProcessId, Vec<Outgoing>>,
    work: VecDeque<MessageKey>,
}

impl Batch {
    fn push(&mut self, to: ProcessId, item: Outgoing) {
        self.out.entry(to).or_default().push(item);
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    id: ProcessId,
    f: usize,
    neighbors: Vec<ProcessId>,
    neighbor_set: ProcSet,
    cfg: ModificationConfig,
    dctx: DolevCtx,
    dolev: DolevState,
    bracha: BrachaState,
    payloads: Vec<(PayloadId, Vec<u8>)>,
    by_pid: HashMap<PayloadId, Vec<PayloadRef>>,
    announced: HashSet<(ProcessId, PayloadRef)>,
    remote_ids: HashMap<(ProcessId, u32), PayloadRef>,
    pending: HashMap<(ProcessId, u32), Vec<Message>>,
    deliveries: Vec<Delivery>,
    next_bid: u32,
    stats: NodeStats,
}

impl NodeState {
    pub fn init(
        id: ProcessId,
        neighbors: &[ProcessId],
        n: usize,
        f: usize,
        cfg: ModificationConfig,
    ) -> Result<Self, ProtocolError> {
        cfg.validate()
            .map_err(|e| ProtocolError::InvalidParams(e.to_string()))?;
        if n > crate::types::MAX_PROCESSES || id as usize >= n {
            return Err(ProtocolError::InvalidParams(format!("process {id} of {n}")));
        }
        let mut neighbors = neighbors.to_vec();
        neighbors.sort_unstable();
        neighbors.dedup();
        if neighbors.iter().any(|&p| p == id || p as usize >= n) {
            return Err(ProtocolError::InvalidParams(format!("bad neighbor list for {id}")));
        }
        Ok(Self {
            id,
            f,
            neighbor_set: neighbors.iter().copied().collect(),
            dctx: DolevCtx {
                id,
                n,
                f,
                neighbors: neighbors.clone(),
                cfg,
            },
            neighbors,
            cfg,
            dolev: DolevState::new(),
            bracha: BrachaState::new(id, n, f, &cfg)?,
            payloads: Vec::new(),
            by_pid: HashMap::new(),
            announced: HashSet::new(),
            remote_ids: HashMap::new(),
            pending: HashMap::new(),
            deliveries: Vec::new(),
            next_bid: 0,
            stats: NodeStats::default(),
        })
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn neighbors(&self) -> &[ProcessId] {
        &self.neighbors
    }

    pub fn config(&self) -> &ModificationConfig {
        &self.cfg
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn bracha(&self) -> &BrachaState {
        &self.bracha
    }

    pub fn dolev(&self) -> &DolevState {
        &self.dolev
    }

    /// Frames still waiting for an unknown local payload ID.
    pub fn pending_frames(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn drain_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.deliveries)
    }

    /// Starts a new broadcast instance with this node as source.
    pub fn brb_broadcast(&mut self, payload: &[u8]) -> Result<Vec<SendAction>, ProtocolError> {
        let pid = PayloadId::new(self.id, self.next_bid);
        self.next_bid += 1;
        let r = self.intern(pid, payload)?;
        let key = MessageKey {
            payload_id: pid,
            mtype: MessageType::Send,
            creator: self.id,
            payload_ref: r,
        };
        let mut targets = self.dolev.rc_broadcast(&self.dctx, key);
        if self.cfg.mbd12 && targets.len() > 2 * self.f + 1 {
            targets.truncate(2 * self.f + 1);
        }
        let mut batch = Batch::default();
        for t in targets {
            batch.push(
                t,
                Outgoing {
                    key,
                    path: Vec::new(),
                    created: true,
                },
            );
        }
        batch.work.push_back(key);
        self.run_work(&mut batch);
        Ok(self.flush(batch))
    }

    /// Handles one frame received from neighbor `from`.
    pub fn on_frame(&mut self, from: ProcessId, bytes: &[u8]) -> Vec<SendAction> {
        if !self.neighbor_set.contains(from) {
            self.stats.malformed_frames += 1;
            return Vec::new();
        }
        let msg = match decode_frame(bytes, from, &self.cfg) {
            Ok(m) => m,
            Err(_) => {
                self.stats.malformed_frames += 1;
                return Vec::new();
            }
        };
        let mut batch = Batch::default();
        self.receive(from, msg, &mut batch);
        self.flush(batch)
    }

    fn intern(&mut self, pid: PayloadId, bytes: &[u8]) -> Result<PayloadRef, ProtocolError> {
        let refs = self.by_pid.entry(pid).or_default();
        if let Some(&r) = refs.iter().find(|&&r| self.payloads[r as usize].1 == bytes) {
            return Ok(r);
        }
        let r = self.payloads.len() as PayloadRef;
        let bits = self.cfg.local_id_bits;
        if self.cfg.mbd1 && bits < 32 && r >> bits != 0 {
            return Err(ProtocolError::LocalIdExhausted(bits));
        }
        refs.push(r);
        self.payloads.push((pid, bytes.to_vec()));
        Ok(r)
    }

    /// The local payload ID this node announces for `r` (MBD.1).
    pub fn assign_local_id(&self, r: PayloadRef) -> u32 {
        r
    }

    fn receive(&mut self, from: ProcessId, msg: Message, batch: &mut Batch) {
        let mut fresh_id = None;
        let r = match (&msg.payload, msg.local_id) {
            (Some(bytes), lid) => {
                let Some(pid) = msg.payload_id else {
                    self.stats.malformed_frames += 1;
                    return;
                };
                let r = match self.intern(pid, bytes) {
                    Ok(r) => r,
                    Err(_) => {
                        self.stats.malformed_frames += 1;
                        return;
                    }
                };
                if let Some(lid) = lid {
                    match self.remote_ids.get(&(from, lid)) {
                        None => {
                            self.remote_ids.insert((from, lid), r);
                            fresh_id = Some(lid);
                        }
                        Some(&known) if known == r => {}
                        Some(_) => {
                            self.stats.malformed_frames += 1;
                            return;
                        }
                    }
                }
                r
            }
            (None, Some(lid)) => match self.remote_ids.get(&(from, lid)) {
                Some(&r) => r,
                None => {
                    self.stats.queued_frames += 1;
                    self.pending.entry((from, lid)).or_default().push(msg);
                    return;
                }
            },
            (None, None) => {
                self.stats.malformed_frames += 1;
                return;
            }
        };
        self.process(from, &msg, r, batch);
        if let Some(lid) = fresh_id {
            if let Some(queued) = self.pending.remove(&(from, lid)) {
                for m in queued {
                    self.stats.replayed_frames += 1;
                    self.process(from, &m, r, batch);
                }
            }
        }
    }

    /// Splits a decoded message into its contents and feeds each to the
    /// Dolev layer. The whole frame is rejected if any part is malformed.
    fn process(&mut self, from: ProcessId, msg: &Message, r: PayloadRef, batch: &mut Batch) {
        let pid = self.payloads[r as usize].0;
        let path = msg.path.clone().unwrap_or_default();
        let Some(creator) = msg.creator else {
            self.stats.malformed_frames += 1;
            return;
        };
        let parts: Vec<(MessageType, ProcessId)> = match msg.mtype {
            MessageType::Send => vec![(MessageType::Send, creator)],
            MessageType::Echo => vec![(MessageType::Echo, creator)],
            MessageType::Ready => vec![(MessageType::Ready, creator)],
            MessageType::EchoEcho => {
                let e = msg.embedded_creator.unwrap_or(creator);
                if !path.is_empty() || creator != from || e == creator {
                    self.stats.malformed_frames += 1;
                    return;
                }
                vec![(MessageType::Echo, e), (MessageType::Echo, creator)]
            }
            MessageType::ReadyEcho => {
                let e = msg.embedded_creator.unwrap_or(creator);
                if e == creator {
                    self.stats.malformed_frames += 1;
                    return;
                }
                vec![(MessageType::Echo, e), (MessageType::Ready, creator)]
            }
        };
        let bad_send = msg.mtype == MessageType::Send && creator != pid.source;
        if bad_send || parts.iter().any(|&(_, c)| stored_relays(&self.dctx, from, c, &path).is_err()) {
            self.stats.malformed_frames += 1;
            return;
        }
        for (mtype, c) in parts {
            let key = MessageKey {
                payload_id: pid,
                mtype,
                creator: c,
                payload_ref: r,
            };
            self.on_content(from, key, &path, batch);
        }
    }

    fn on_content(&mut self, from: ProcessId, key: MessageKey, path: &[ProcessId], batch: &mut Batch) {
        let pid = key.payload_id;
        if key.mtype == MessageType::Ready && path.is_empty() {
            self.dolev.prune_on_ready(&self.dctx, &key, false, Some(from));
        }
        if key.mtype == MessageType::Echo
            && self.bracha.discards_echo(pid, key.payload_ref, key.creator, &self.cfg)
        {
            return;
        }
        let reception = match self.dolev.rc_on_receive(&self.dctx, from, key, path) {
            Ok(r) => r,
            Err(_) => {
                self.stats.malformed_frames += 1;
                return;
            }
        };
        if let Reception::Accepted {
            delivered_now,
            targets,
            forward_path,
        } = reception
        {
            for t in targets {
                batch.push(
                    t,
                    Outgoing {
                        key,
                        path: forward_path.clone(),
                        created: false,
                    },
                );
            }
            if delivered_now {
                batch.work.push_back(key);
                self.run_work(batch);
            }
        }
    }

    /// Drains Dolev deliveries through the quorum logic, creating and
    /// self-delivering the node's own messages as they come due.
    fn run_work(&mut self, batch: &mut Batch) {
        while let Some(key) = batch.work.pop_front() {
            let pid = key.payload_id;
            if key.mtype == MessageType::Ready {
                self.dolev.prune_on_ready(&self.dctx, &key, true, None);
            }
            for action in self.bracha.on_rc_deliver(key.mtype, key.creator, pid, key.payload_ref) {
                let (mtype, r) = match action {
                    BrachaAction::Echo(r) => (MessageType::Echo, r),
                    BrachaAction::Ready(r) => (MessageType::Ready, r),
                    BrachaAction::Deliver(r) => {
                        let (pid, data) = &self.payloads[r as usize];
                        self.deliveries.push(Delivery {
                            source: pid.source,
                            bid: pid.bid,
                            payload: data.clone(),
                        });
                        continue;
                    }
                };
                let own = MessageKey {
                    payload_id: pid,
                    mtype,
                    creator: self.id,
                    payload_ref: r,
                };
                for t in self.dolev.rc_broadcast(&self.dctx, own) {
                    batch.push(
                        t,
                        Outgoing {
                            key: own,
                            path: Vec::new(),
                            created: true,
                        },
                    );
                }
                batch.work.push_back(own);
            }
        }
    }

    fn flush(&mut self, batch: Batch) -> Vec<SendAction> {
        let mut actions = Vec::new();
        for (to, items) in batch.out {
            let items: Vec<Outgoing> = items
                .into_iter()
                .filter(|it| !self.suppressed_send(it))
                .collect();
            let (forwards, created): (Vec<_>, Vec<_>) = items.into_iter().partition(|it| !it.created);
            let ordered: Vec<Outgoing> = forwards.into_iter().chain(created).collect();
            for (mtype, parts) in self.merge(ordered) {
                match self.build(to, mtype, &parts) {
                    Ok(frame) => actions.push(SendAction { to, mtype, frame }),
                    Err(e) => debug_assert!(false, "own frame failed to encode: {e}"),
                }
            }
        }
        actions
    }

    /// MBD.2: a node that sent its own ECHO does not relay the SEND.
    fn suppressed_send(&self, it: &Outgoing) -> bool {
        self.cfg.mbd2
            && !it.created
            && it.key.mtype == MessageType::Send
            && self.bracha.sent_echo(it.key.payload_id)
    }

    /// Pairs logical sends to one neighbor into merged frames.
    fn merge(&self, items: Vec<Outgoing>) -> Vec<(MessageType, Vec<Outgoing>)> {
        let mut used = vec![false; items.len()];
        let mut frames: Vec<(usize, MessageType, Vec<usize>)> = Vec::new();
        let same_payload = |a: &Outgoing, b: &Outgoing| a.key.payload_ref == b.key.payload_ref;
        if self.cfg.mbd4 {
            for i in 0..items.len() {
                if items[i].key.mtype != MessageType::Ready {
                    continue;
                }
                let partner = (0..items.len()).find(|&j| {
                    !used[j]
                        && items[j].key.mtype == MessageType::Echo
                        && items[j].key.creator != items[i].key.creator
                        && same_payload(&items[i], &items[j])
                        && items[j].path == items[i].path
                });
                if let Some(j) = partner {
                    used[i] = true;
                    used[j] = true;
                    frames.push((i.min(j), MessageType::ReadyEcho, vec![i, j]));
                }
            }
        }
        if self.cfg.mbd3 {
            for i in 0..items.len() {
                let own_echo = !used[i]
                    && items[i].created
                    && items[i].key.mtype == MessageType::Echo
                    && items[i].key.creator == self.id;
                if !own_echo {
                    continue;
                }
                let partner = (0..items.len()).find(|&j| {
                    !used[j]
                        && !items[j].created
                        && items[j].key.mtype == MessageType::Echo
                        && items[j].path.is_empty()
                        && same_payload(&items[i], &items[j])
                });
                if let Some(j) = partner {
                    used[i] = true;
                    used[j] = true;
                    frames.push((i.min(j), MessageType::EchoEcho, vec![i, j]));
                }
            }
        }
        for (i, u) in used.iter().enumerate() {
            if !u {
                frames.push((i, items[i].key.mtype, vec![i]));
            }
        }
        frames.sort_by_key(|f| f.0);
        frames
            .into_iter()
            .map(|(_, t, idx)| (t, idx.into_iter().map(|i| items[i].clone()).collect()))
            .collect()
    }

    /// Encodes one frame. For merged types `parts[0]` supplies erId1 (the
    /// READY creator or the own ECHO) and `parts[1]` the embedded ECHO.
    fn build(&mut self, to: ProcessId, mtype: MessageType, parts: &[Outgoing]) -> Result<Frame, ProtocolError> {
        let (first, embedded) = match mtype {
            MessageType::ReadyEcho | MessageType::EchoEcho => {
                let (a, b) = (&parts[0], &parts[1]);
                let (main, echo) = if mtype == MessageType::ReadyEcho {
                    if a.key.mtype == MessageType::Ready { (a, b) } else { (b, a) }
                } else if a.key.creator == self.id && a.created {
                    (a, b)
                } else {
                    (b, a)
                };
                (main, Some(echo.key.creator))
            }
            _ => (&parts[0], None),
        };
        let key = first.key;
        let r = key.payload_ref;
        let (pid, data) = &self.payloads[r as usize];
        let cfg = &self.cfg;
        let include_payload = !cfg.mbd1 || self.announced.insert((to, r));
        let (payload_id, payload) = if include_payload {
            (Some(*pid), Some(data.clone()))
        } else {
            (None, None)
        };
        let path = &first.path;
        let (creator, wire_path) = if !cfg.mbd5 {
            (Some(key.creator), Some(path.clone()))
        } else if path.is_empty() && key.creator == self.id {
            (None, None)
        } else if path.first() == Some(&key.creator) {
            (None, Some(path.clone()))
        } else {
            (Some(key.creator), Some(path.clone()))
        };
        let msg = Message {
            mtype,
            payload_id: if cfg.mbd5 { payload_id } else { Some(*pid) },
            local_id: cfg.mbd1.then(|| self.assign_local_id(r)),
            payload,
            creator,
            embedded_creator: embedded,
            path: wire_path,
        };
        Ok(encode_frame(&msg, cfg)?)
    }

    /// Debug dump of every path store, one JSON object per line, in key order.
    pub fn dump_paths(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut keys: Vec<(&MessageKey, _)> = self.dolev.stores().collect();
        keys.sort_by_key(|(k, _)| **k);
        for (k, s) in keys {
            s.dump_json_line(k, out)?;
        }
        Ok(())
    }
}
