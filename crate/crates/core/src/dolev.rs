//! Reliable communication over `2f+1`-connected graphs.
//!
//! Paths on the wire follow the classic convention: the list of processes a
//! copy went through before the link sender, so a copy relayed straight from
//! its creator carries `[creator]`. A node that delivered a content relays it
//! with an empty path (MD.2). The path stored for a reception is the wire
//! path plus the link sender, minus a leading creator, which leaves exactly
//! the intermediate relays.

use std::collections::HashMap;

use crate::config::ModificationConfig;
use crate::error::ProtocolError;
use crate::pathstore::{InsertOutcome, MessageKey, Path, PathStore, PayloadRef};
use crate::types::{MessageType, PayloadId, ProcSet, ProcessId};

/// Static facts a node needs to run the layer.
#[derive(Clone, Debug)]
pub struct DolevCtx {
    pub id: ProcessId,
    pub n: usize,
    pub f: usize,
    pub neighbors: Vec<ProcessId>,
    pub cfg: ModificationConfig,
}

#[derive(Clone, Debug, Default)]
struct Pruning {
    /// MBD.8: neighbors whose own READY was delivered here.
    echo_suppressed: ProcSet,
    /// MBD.9: neighbors that already relayed `2f+1` empty-path READYs for
    /// one content. Counted per content: a Byzantine ready generator's
    /// READY for an altered payload is genuinely deliverable and must not
    /// help close a neighbor that has not delivered.
    closed: ProcSet,
    empty_readys: HashMap<(ProcessId, PayloadRef), ProcSet>,
}

/// Result of feeding one received copy to the layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reception {
    /// Ignored: duplicate, filtered, or pruned by MD.4.
    Dropped,
    Accepted {
        delivered_now: bool,
        targets: Vec<ProcessId>,
        forward_path: Vec<ProcessId>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct DolevState {
    stores: HashMap<MessageKey, PathStore>,
    pruning: HashMap<PayloadId, Pruning>,
}

impl DolevState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self, key: &MessageKey) -> Option<&PathStore> {
        self.stores.get(key)
    }

    pub fn stores(&self) -> impl Iterator<Item = (&MessageKey, &PathStore)> {
        self.stores.iter()
    }

    pub fn is_delivered(&self, key: &MessageKey) -> bool {
        self.stores.get(key).is_some_and(|s| s.delivered)
    }

    /// Neighbors that must not hear about `pid` any more (MBD.9).
    pub fn closed(&self, pid: PayloadId) -> ProcSet {
        self.pruning.get(&pid).map_or(ProcSet::EMPTY, |p| p.closed)
    }

    /// Starts disseminating one of the node's own contents and delivers it
    /// locally. Returns the neighbors to send it to, with an empty path.
    pub fn rc_broadcast(&mut self, ctx: &DolevCtx, key: MessageKey) -> Vec<ProcessId> {
        let closed = if ctx.cfg.mbd9 { self.closed(key.payload_id) } else { ProcSet::EMPTY };
        let store = self.stores.entry(key).or_default();
        store.delivered = true;
        store.forwarded_empty = true;
        ctx.neighbors.iter().copied().filter(|p| !closed.contains(*p)).collect()
    }

    /// Processes one copy of `key` received from `link` with `wire_path`.
    pub fn rc_on_receive(
        &mut self,
        ctx: &DolevCtx,
        link: ProcessId,
        key: MessageKey,
        wire_path: &[ProcessId],
    ) -> Result<Reception, ProtocolError> {
        let cfg = &ctx.cfg;
        let c = key.creator;
        let relays = stored_relays(ctx, link, c, wire_path)?;
        if c == ctx.id {
            return Ok(Reception::Dropped);
        }
        let store = self.stores.entry(key).or_default();
        if wire_path.is_empty() && link != c {
            store.neighbors_delivered.insert(link);
        }
        if cfg.md4 && !wire_path.is_empty() && !relays.set().is_disjoint(store.neighbors_delivered) {
            return Ok(Reception::Dropped);
        }
        match store.insert_path(relays, cfg) {
            InsertOutcome::Inserted => {}
            _ => return Ok(Reception::Dropped),
        }
        let from_source = link == c && wire_path.is_empty();
        // A SEND is single-hop under MBD.2, so a direct copy is accepted as is.
        let single_hop = cfg.mbd2 && key.mtype == MessageType::Send && from_source;
        let delivered_now = if single_hop {
            !store.delivered
        } else {
            store.can_deliver(ctx.f, from_source, cfg)
        };
        if delivered_now {
            store.delivered = true;
        }

        let forward_path = if store.delivered && cfg.md2 {
            store.forwarded_empty = true;
            Vec::new()
        } else {
            let mut p = wire_path.to_vec();
            p.push(link);
            p
        };
        let mut skip: ProcSet = wire_path.iter().copied().collect();
        skip.insert(link);
        skip.insert(c);
        if cfg.md3 {
            skip = skip.union(store.neighbors_delivered);
        }
        if let Some(pr) = self.pruning.get(&key.payload_id) {
            if cfg.mbd9 {
                skip = skip.union(pr.closed);
            }
            if cfg.mbd8 && key.mtype == MessageType::Echo {
                skip = skip.union(pr.echo_suppressed);
            }
        }
        let targets = ctx.neighbors.iter().copied().filter(|p| !skip.contains(*p)).collect();
        Ok(Reception::Accepted {
            delivered_now,
            targets,
            forward_path,
        })
    }

    /// READY bookkeeping for MBD.8 and MBD.9. `delivered` tells whether the
    /// READY `key` has just been delivered; `empty_from` is the link sender
    /// when the copy arrived with an empty wire path.
    pub fn prune_on_ready(&mut self, ctx: &DolevCtx, key: &MessageKey, delivered: bool, empty_from: Option<ProcessId>) {
        let cfg = &ctx.cfg;
        if !(cfg.mbd8 || cfg.mbd9) {
            return;
        }
        let creator = key.creator;
        let pr = self.pruning.entry(key.payload_id).or_default();
        if cfg.mbd8 && delivered && ctx.neighbors.contains(&creator) {
            pr.echo_suppressed.insert(creator);
        }
        if let (true, Some(nb)) = (cfg.mbd9, empty_from) {
            let seen = pr.empty_readys.entry((nb, key.payload_ref)).or_default();
            seen.insert(creator);
            if seen.len() > 2 * ctx.f {
                pr.closed.insert(nb);
            }
        }
    }
}

/// Validates a wire path and turns it into the stored relay list.
pub(crate) fn stored_relays(
    ctx: &DolevCtx,
    link: ProcessId,
    creator: ProcessId,
    wire_path: &[ProcessId],
) -> Result<Path, ProtocolError> {
    let bad = || ProtocolError::MalformedPath(link);
    if creator as usize >= ctx.n || wire_path.len() + 1 >= ctx.n.max(2) {
        return Err(bad());
    }
    let mut full = Vec::with_capacity(wire_path.len() + 1);
    full.extend_from_slice(wire_path);
    full.push(link);
    if full.iter().any(|&p| p as usize >= ctx.n || p == ctx.id) {
        return Err(bad());
    }
    let relays = match full.iter().position(|&p| p == creator) {
        Some(0) => full[1..].to_vec(),
        Some(_) => return Err(bad()),
        None => full,
    };
    Path::new(relays).ok_or_else(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: ProcessId, f: usize, neighbors: &[ProcessId], cfg: ModificationConfig) -> DolevCtx {
        DolevCtx {
            id,
            n: 10,
            f,
            neighbors: neighbors.to_vec(),
            cfg,
        }
    }

    fn key(mtype: MessageType, creator: ProcessId) -> MessageKey {
        MessageKey {
            payload_id: PayloadId::new(0, 1),
            mtype,
            creator,
            payload_ref: 0,
        }
    }

    fn accepted(r: Reception) -> (bool, Vec<ProcessId>, Vec<ProcessId>) {
        match r {
            Reception::Accepted {
                delivered_now,
                targets,
                forward_path,
            } => (delivered_now, targets, forward_path),
            Reception::Dropped => panic!("dropped"),
        }
    }

    #[test]
    fn broadcast_goes_everywhere_and_self_delivers() {
        let c = ctx(0, 1, &[1, 2, 3], ModificationConfig::default());
        let mut d = DolevState::new();
        let k = key(MessageType::Echo, 0);
        assert_eq!(d.rc_broadcast(&c, k), vec![1, 2, 3]);
        assert!(d.is_delivered(&k));
        let lone = ctx(0, 1, &[], ModificationConfig::default());
        assert!(DolevState::new().rc_broadcast(&lone, k).is_empty());
    }

    #[test]
    fn closed_neighbors_get_nothing() {
        let cfg = ModificationConfig::default().with("mbd9").unwrap();
        let c = ctx(0, 1, &[1, 2, 3], cfg);
        let mut d = DolevState::new();
        for creator in [1, 5, 6] {
            d.prune_on_ready(&c, &key(MessageType::Ready, creator), false, Some(3));
        }
        d.prune_on_ready(&c, &key(MessageType::Ready, 6), false, Some(2));
        assert_eq!(d.closed(PayloadId::new(0, 1)), ProcSet::singleton(3));
        assert_eq!(d.rc_broadcast(&c, key(MessageType::Echo, 0)), vec![1, 2]);
    }

    #[test]
    fn readys_for_different_contents_do_not_add_up() {
        let cfg = ModificationConfig::default().with("mbd9").unwrap();
        let c = ctx(0, 1, &[3], cfg);
        let mut d = DolevState::new();
        for (creator, r) in [(1, 0), (5, 0), (6, 1)] {
            let k = MessageKey {
                payload_ref: r,
                ..key(MessageType::Ready, creator)
            };
            d.prune_on_ready(&c, &k, false, Some(3));
        }
        assert!(d.closed(PayloadId::new(0, 1)).is_empty());
        d.prune_on_ready(&c, &key(MessageType::Ready, 6), false, Some(3));
        assert_eq!(d.closed(PayloadId::new(0, 1)), ProcSet::singleton(3));
    }

    #[test]
    fn same_creator_counts_once() {
        let cfg = ModificationConfig::default().with("mbd9").unwrap();
        let c = ctx(0, 1, &[3], cfg);
        let mut d = DolevState::new();
        for _ in 0..3 {
            d.prune_on_ready(&c, &key(MessageType::Ready, 5), false, Some(3));
        }
        assert!(d.closed(PayloadId::new(0, 1)).is_empty());
        d.prune_on_ready(&ctx(0, 1, &[3], ModificationConfig::default()), &key(MessageType::Ready, 3), true, None);
        assert!(d.pruning.get(&PayloadId::new(0, 1)).unwrap().echo_suppressed.is_empty());
    }

    #[test]
    fn two_disjoint_paths_deliver_then_empty_relay() {
        let cfg = ModificationConfig::preset("bdopt").unwrap();
        let c = ctx(0, 1, &[2, 3, 4], cfg);
        let mut d = DolevState::new();
        let k = key(MessageType::Echo, 9);
        let (now, targets, path) = accepted(d.rc_on_receive(&c, 2, k, &[9]).unwrap());
        assert!(!now);
        assert_eq!(path, vec![9, 2]);
        assert_eq!(targets, vec![3, 4]);
        let (now, targets, path) = accepted(d.rc_on_receive(&c, 3, k, &[9]).unwrap());
        assert!(now);
        assert!(path.is_empty());
        assert_eq!(targets, vec![2, 4]);
        assert_eq!(d.rc_on_receive(&c, 4, k, &[9]).unwrap(), Reception::Dropped);
    }

    #[test]
    fn paths_through_a_delivered_neighbor_are_ignored() {
        let cfg = ModificationConfig::preset("bdopt").unwrap();
        let c = ctx(0, 2, &[4, 5, 6], cfg);
        let mut d = DolevState::new();
        let k = key(MessageType::Echo, 9);
        let (_, targets, _) = accepted(d.rc_on_receive(&c, 4, k, &[]).unwrap());
        assert_eq!(targets, vec![5, 6]);
        assert_eq!(d.rc_on_receive(&c, 5, k, &[9, 4, 7]).unwrap(), Reception::Dropped);
        let (_, targets, _) = accepted(d.rc_on_receive(&c, 5, k, &[9, 7]).unwrap());
        assert_eq!(targets, vec![6], "4 delivered, 5 and 7 are on the path");
    }

    #[test]
    fn direct_reception_uses_md1() {
        let k = key(MessageType::Ready, 2);
        let with = ctx(0, 1, &[2, 3], ModificationConfig::preset("bdopt").unwrap());
        let (now, _, _) = accepted(DolevState::new().rc_on_receive(&with, 2, k, &[]).unwrap());
        assert!(now);
        let without = ctx(0, 1, &[2, 3], ModificationConfig::default());
        let (now, targets, path) = accepted(DolevState::new().rc_on_receive(&without, 2, k, &[]).unwrap());
        assert!(!now);
        assert_eq!((targets, path), (vec![3], vec![2]));
    }

    #[test]
    fn md5_stops_relaying_after_delivery() {
        let cfg = ModificationConfig::preset("bdopt").unwrap();
        let c = ctx(0, 1, &[2, 3, 4, 5], cfg);
        let mut d = DolevState::new();
        let k = key(MessageType::Echo, 9);
        accepted(d.rc_on_receive(&c, 2, k, &[9]).unwrap());
        accepted(d.rc_on_receive(&c, 3, k, &[9]).unwrap());
        assert_eq!(d.rc_on_receive(&c, 4, k, &[9]).unwrap(), Reception::Dropped);

        let mut cfg = ModificationConfig::preset("bdopt").unwrap();
        cfg.md5 = false;
        let no_md5 = ctx(0, 1, &[2, 3, 4, 5], cfg);
        let mut d = DolevState::new();
        accepted(d.rc_on_receive(&no_md5, 2, k, &[9]).unwrap());
        accepted(d.rc_on_receive(&no_md5, 3, k, &[9]).unwrap());
        let (now, targets, path) = accepted(d.rc_on_receive(&no_md5, 4, k, &[9]).unwrap());
        assert!(!now);
        assert!(path.is_empty());
        assert_eq!(targets, vec![2, 3, 5]);
    }

    #[test]
    fn ready_of_a_neighbor_suppresses_echo_relays_to_it() {
        let cfg = ModificationConfig::preset("bdopt").unwrap().with("mbd8").unwrap();
        let c = ctx(0, 1, &[2, 3, 4], cfg);
        let mut d = DolevState::new();
        d.prune_on_ready(&c, &key(MessageType::Ready, 4), true, Some(4));
        let (_, targets, _) = accepted(d.rc_on_receive(&c, 2, key(MessageType::Echo, 9), &[9]).unwrap());
        assert_eq!(targets, vec![3]);
        let (_, targets, _) = accepted(d.rc_on_receive(&c, 2, key(MessageType::Ready, 9), &[9]).unwrap());
        assert_eq!(targets, vec![3, 4]);
    }

    #[test]
    fn malformed_paths() {
        let c = ctx(0, 1, &[2, 3], ModificationConfig::default());
        let mut d = DolevState::new();
        let k = key(MessageType::Echo, 9);
        assert!(d.rc_on_receive(&c, 2, k, &[0]).is_err(), "contains self");
        assert!(d.rc_on_receive(&c, 2, k, &[5, 9]).is_err(), "creator not first");
        assert!(d.rc_on_receive(&c, 2, k, &[12]).is_err(), "out of range");
        assert!(d.rc_on_receive(&c, 9, k, &[7]).is_err(), "creator as a relay");
        assert!(d.rc_on_receive(&c, 2, k, &[9, 1, 3, 4, 5, 6, 7, 8]).is_ok(), "longest simple path");
    }

    #[test]
    fn own_content_coming_back_is_ignored() {
        let c = ctx(0, 1, &[2, 3], ModificationConfig::default());
        let mut d = DolevState::new();
        assert_eq!(d.rc_on_receive(&c, 2, key(MessageType::Echo, 0), &[]).unwrap(), Reception::Dropped);
    }
}
