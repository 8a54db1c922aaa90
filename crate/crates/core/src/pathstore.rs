//! Per-content path storage and the node-disjoint path test.
//!
//! A stored path lists the intermediate relays a copy of a content crossed,
//! excluding its creator and the local node. Delivery needs `f+1` stored
//! paths that share no relay. That is a set-packing question over the stored
//! relay sets, answered exactly by branch and bound: paths are grouped by a
//! relay they all contain (the last hop for stored paths), at most one path
//! per group can be chosen, and the number of groups left bounds what is
//! still reachable.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::ModificationConfig;
use crate::error::PathStoreError;
use crate::types::{MessageType, PayloadId, ProcSet, ProcessId};

/// Above this many paths [`brute_force_disjoint`] refuses to enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Index of a payload in a node's payload table. Two refs are equal iff the
/// payload bytes are.
pub type PayloadRef = u32;

/// Identity of one Dolev content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageKey {
    pub payload_id: PayloadId,
    pub mtype: MessageType,
    pub creator: ProcessId,
    pub payload_ref: PayloadRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    relays: Vec<ProcessId>,
    set: ProcSet,
}

impl Path {
    pub fn empty() -> Self {
        Path {
            relays: Vec::new(),
            set: ProcSet::EMPTY,
        }
    }

    /// `None` on duplicates or out-of-range IDs.
    pub fn new(relays: Vec<ProcessId>) -> Option<Self> {
        let mut set = ProcSet::EMPTY;
        for &r in &relays {
            if r as usize >= crate::types::MAX_PROCESSES || !set.insert(r) {
                return None;
            }
        }
        Some(Path { relays, set })
    }

    /// This path extended by `p`; `None` if `p` is already on it.
    pub fn extended(&self, p: ProcessId) -> Option<Self> {
        let mut relays = Vec::with_capacity(self.relays.len() + 1);
        relays.extend_from_slice(&self.relays);
        relays.push(p);
        Path::new(relays)
    }

    pub fn relays(&self) -> &[ProcessId] {
        &self.relays
    }

    pub fn set(&self) -> ProcSet {
        self.set
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        self.set.contains(p)
    }

    fn group(&self) -> Option<ProcessId> {
        self.relays.last().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// MBD.10: a stored path's relays are a subset of the new one's.
    FilteredSuperpath,
    /// MD.5: already delivered and the empty path went out.
    FilteredDelivered,
    /// The very same relay sequence is already stored.
    Duplicate,
}

#[derive(Clone, Debug, Default)]
pub struct PathStore {
    paths: Vec<Path>,
    pub delivered: bool,
    /// Neighbors that relayed this content with an empty path.
    pub neighbors_delivered: ProcSet,
    pub forwarded_empty: bool,
}

impl PathStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn insert_path(&mut self, p: Path, cfg: &ModificationConfig) -> InsertOutcome {
        if cfg.md5 && self.delivered && self.forwarded_empty {
            return InsertOutcome::FilteredDelivered;
        }
        if self.paths.iter().any(|q| q.relays == p.relays) {
            return InsertOutcome::Duplicate;
        }
        // An empty path is disjoint from every other, including its
        // supersets, so it takes no part in the filter.
        if cfg.mbd10 && !p.is_empty() {
            if self.paths.iter().any(|q| !q.is_empty() && q.set.is_subset(p.set)) {
                return InsertOutcome::FilteredSuperpath;
            }
            self.paths.retain(|q| !p.set.is_subset(q.set));
        }
        self.paths.push(p);
        InsertOutcome::Inserted
    }

    pub fn max_node_disjoint(&self) -> usize {
        max_node_disjoint(&self.grouped())
    }

    pub fn brute_force_disjoint(&self) -> Result<usize, PathStoreError> {
        let sets: Vec<ProcSet> = self.paths.iter().map(Path::set).collect();
        brute_force_disjoint(&sets)
    }

    /// Whether the content may be delivered now. Meant to be called after
    /// each successful insertion: since the latch was still open before it,
    /// any `f+1` packing must use the newest path, which keeps the search
    /// small. Never true once `delivered` is set.
    pub fn can_deliver(&self, f: usize, from_source: bool, cfg: &ModificationConfig) -> bool {
        if self.delivered {
            return false;
        }
        if cfg.md1 && from_source {
            return true;
        }
        let Some(newest) = self.paths.last() else {
            return false;
        };
        let rest: Vec<&Path> = self.paths[..self.paths.len() - 1]
            .iter()
            .filter(|q| q.set.is_disjoint(newest.set))
            .collect();
        // Stores that never fill up (forged or equivocated contents) grow
        // to thousands of paths; the flow bound settles most of them.
        if rest.len() > FLOW_BOUND_FROM && union_flow(&rest, f) < f {
            return false;
        }
        let items: Vec<(ProcSet, Option<ProcessId>)> = rest.iter().map(|q| (q.set, q.group())).collect();
        packs_at_least(&items, f)
    }

    /// One JSON object describing this store, for trace dumps.
    pub fn dump_json_line(&self, key: &MessageKey, out: &mut impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            key: &'a MessageKey,
            paths: Vec<&'a [ProcessId]>,
            delivered: bool,
        }
        let line = Line {
            key,
            paths: self.paths.iter().map(Path::relays).collect(),
            delivered: self.delivered,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")
    }

    fn grouped(&self) -> Vec<(ProcSet, Option<ProcessId>)> {
        self.paths.iter().map(|p| (p.set, p.group())).collect()
    }
}

/// Store size above which [`PathStore::can_deliver`] tries the flow bound
/// before the exact search.
const FLOW_BOUND_FROM: usize = 16;

/// Number of vertex-disjoint routes through the union of `paths`, capped at
/// `cap`. Every set of relay-disjoint paths is such a set of routes, so this
/// bounds the packing from above. It can exceed it: routes may splice
/// pieces of different paths.
fn union_flow(paths: &[&Path], cap: usize) -> usize {
    let empties = paths.iter().filter(|p| p.is_empty()).count();
    if empties >= cap {
        return cap;
    }
    // Vertex 0 is the source side, 1 the sink side, relay r splits into
    // 2+2i (in) and 3+2i (out).
    let mut index = [u8::MAX; crate::types::MAX_PROCESSES];
    let mut count = 0usize;
    for p in paths {
        for &r in p.relays() {
            if index[r as usize] == u8::MAX {
                index[r as usize] = count as u8;
                count += 1;
            }
        }
    }
    let nodes = 2 + 2 * count;
    let inn = |r: ProcessId| 2 + 2 * index[r as usize] as usize;
    let mut g = FlowGraph::new(nodes);
    for i in 0..count {
        g.add(2 + 2 * i, 3 + 2 * i);
    }
    // Edges already added: successors per relay, plus first and last relays.
    let mut next = vec![ProcSet::EMPTY; count];
    let (mut firsts, mut lasts) = (ProcSet::EMPTY, ProcSet::EMPTY);
    for p in paths {
        let rs = p.relays();
        let (Some(&first), Some(&last)) = (rs.first(), rs.last()) else {
            continue;
        };
        if firsts.insert(first) {
            g.add(0, inn(first));
        }
        for w in rs.windows(2) {
            if next[index[w[0] as usize] as usize].insert(w[1]) {
                g.add(inn(w[0]) + 1, inn(w[1]));
            }
        }
        if lasts.insert(last) {
            g.add(inn(last) + 1, 1);
        }
    }
    empties + g.max_flow(0, 1, cap - empties)
}

/// Unit-capacity residual graph.
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<u8>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add(&mut self, a: usize, b: usize) {
        self.adj[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(1);
        self.adj[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(0);
    }

    fn max_flow(&mut self, s: usize, t: usize, limit: usize) -> usize {
        let mut flow = 0;
        let mut via = vec![usize::MAX; self.adj.len()];
        while flow < limit {
            via.fill(usize::MAX);
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && v != s && via[v] == usize::MAX {
                        via[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if via[t] == usize::MAX {
                break;
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
            flow += 1;
        }
        flow
    }
}

/// Group key for a bare set: its lowest member. All members of a group share
/// that relay and so are pairwise conflicting.
fn with_groups(sets: &[ProcSet]) -> Vec<(ProcSet, Option<ProcessId>)> {
    sets.iter().map(|s| (*s, s.iter().next())).collect()
}

/// Largest number of pairwise relay-disjoint sets. Empty sets always count.
pub fn max_node_disjoint_sets(sets: &[ProcSet]) -> usize {
    max_node_disjoint(&with_groups(sets))
}

fn split_groups(items: &[(ProcSet, Option<ProcessId>)]) -> (usize, Vec<Vec<ProcSet>>) {
    let mut empties = 0;
    let mut groups: Vec<(ProcessId, Vec<ProcSet>)> = Vec::new();
    for &(s, g) in items {
        match g {
            None => empties += 1,
            Some(g) => match groups.iter_mut().find(|(k, _)| *k == g) {
                Some((_, v)) => v.push(s),
                None => groups.push((g, vec![s])),
            },
        }
    }
    (empties, groups.into_iter().map(|(_, v)| v).collect())
}

fn max_node_disjoint(items: &[(ProcSet, Option<ProcessId>)]) -> usize {
    let (empties, groups) = split_groups(items);
    let mut best = 0;
    search_max(&groups, ProcSet::EMPTY, 0, &mut best);
    empties + best
}

fn search_max(groups: &[Vec<ProcSet>], used: ProcSet, chosen: usize, best: &mut usize) {
    *best = (*best).max(chosen);
    let live: Vec<Vec<ProcSet>> = groups
        .iter()
        .map(|g| g.iter().copied().filter(|s| s.is_disjoint(used)).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    if chosen + live.len() <= *best || chosen + cover_bound(&live, *best + 1 - chosen) <= *best {
        return;
    }
    let Some(pos) = (0..live.len()).min_by_key(|&i| live[i].len()) else {
        return;
    };
    let others: Vec<Vec<ProcSet>> = live
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, g)| g.clone())
        .collect();
    for &s in &live[pos] {
        search_max(&others, used.union(s), chosen + 1, best);
    }
    search_max(&others, used, chosen, best);
}

/// Sets sharing a relay pairwise conflict, so the number of relays it takes
/// to hit every set bounds any packing. Greedy picks give a valid cover;
/// counting stops at `cap`.
fn cover_bound(groups: &[Vec<ProcSet>], cap: usize) -> usize {
    let mut left: Vec<ProcSet> = groups.iter().flatten().copied().collect();
    let mut picks = 0;
    while !left.is_empty() && picks < cap {
        let mut hits = [0u32; crate::types::MAX_PROCESSES];
        for s in &left {
            for r in s.iter() {
                hits[r as usize] += 1;
            }
        }
        let top = (0..hits.len()).max_by_key(|&r| hits[r]).expect("non-empty") as ProcessId;
        left.retain(|s| !s.contains(top));
        picks += 1;
    }
    picks
}

/// Whether `need` pairwise-disjoint sets can be picked from `items`.
fn packs_at_least(items: &[(ProcSet, Option<ProcessId>)], need: usize) -> bool {
    let (empties, groups) = split_groups(items);
    if empties >= need {
        return true;
    }
    search_need(&groups, ProcSet::EMPTY, need - empties)
}

fn search_need(groups: &[Vec<ProcSet>], used: ProcSet, need: usize) -> bool {
    if need == 0 {
        return true;
    }
    let live: Vec<Vec<ProcSet>> = groups
        .iter()
        .map(|g| g.iter().copied().filter(|s| s.is_disjoint(used)).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    if live.len() < need || cover_bound(&live, need) < need {
        return false;
    }
    let pos = (0..live.len()).min_by_key(|&i| live[i].len()).expect("non-empty");
    let others: Vec<Vec<ProcSet>> = live
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, g)| g.clone())
        .collect();
    live[pos]
        .iter()
        .any(|&s| search_need(&others, used.union(s), need - 1))
        || search_need(&others, used, need)
}

/// Exhaustive subset enumeration; the test oracle for [`max_node_disjoint_sets`].
pub fn brute_force_disjoint(sets: &[ProcSet]) -> Result<usize, PathStoreError> {
    if sets.len() > BRUTE_FORCE_LIMIT {
        return Err(PathStoreError::StoreTooLarge(sets.len()));
    }
    let mut best = 0;
    for mask in 0u32..(1 << sets.len()) {
        let mut used = ProcSet::EMPTY;
        let mut ok = true;
        for (i, s) in sets.iter().enumerate() {
            if mask >> i & 1 == 1 {
                if !used.is_disjoint(*s) {
                    ok = false;
                    break;
                }
                used = used.union(*s);
            }
        }
        if ok {
            best = best.max(mask.count_ones() as usize);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[ProcessId]) -> Path {
        Path::new(v.to_vec()).unwrap()
    }

    fn store(paths: &[&[ProcessId]]) -> PathStore {
        let mut s = PathStore::new();
        for q in paths {
            assert_eq!(s.insert_path(p(q), &ModificationConfig::default()), InsertOutcome::Inserted);
        }
        s
    }

    fn sets(paths: &[&[ProcessId]]) -> Vec<ProcSet> {
        paths.iter().map(|q| p(q).set()).collect()
    }

    #[test]
    fn disjoint_counts() {
        assert_eq!(store(&[&[], &[2], &[3]]).max_node_disjoint(), 3);
        assert_eq!(store(&[&[2, 3], &[2, 4]]).max_node_disjoint(), 1);
        assert_eq!(max_node_disjoint_sets(&sets(&[&[], &[]])), 2);
        assert_eq!(brute_force_disjoint(&sets(&[&[], &[]])).unwrap(), 2);
        assert_eq!(brute_force_disjoint(&[]).unwrap(), 0);
        assert_eq!(
            brute_force_disjoint(&[ProcSet::EMPTY; 21]),
            Err(PathStoreError::StoreTooLarge(21))
        );
    }

    #[test]
    fn crossing_relays_do_not_add_up() {
        // Routes x->b and q->b->x reuse each other's relays; a flow over the
        // union graph would find two routes, only one stored path is usable.
        let s = store(&[&[1, 2], &[3, 2, 1]]);
        assert_eq!(s.max_node_disjoint(), 1);
        assert!(!s.can_deliver(1, false, &ModificationConfig::default()));
    }

    #[test]
    fn can_deliver_examples() {
        let cfg = ModificationConfig::default();
        assert!(store(&[&[], &[4]]).can_deliver(1, false, &cfg));
        assert!(!store(&[&[2, 3], &[2, 4]]).can_deliver(1, false, &cfg));
        assert!(store(&[&[5, 6, 7]]).can_deliver(0, false, &cfg));
        assert!(!PathStore::new().can_deliver(0, false, &cfg));
        let md1 = cfg.with("md1").unwrap();
        assert!(PathStore::new().can_deliver(3, true, &md1));
        assert!(!PathStore::new().can_deliver(3, true, &cfg));
        let mut s = store(&[&[], &[4]]);
        s.delivered = true;
        assert!(!s.can_deliver(1, false, &cfg));
    }

    #[test]
    fn flow_overcounts_spliced_routes() {
        let (a, b) = (p(&[1, 2]), p(&[3, 2, 1]));
        assert_eq!(union_flow(&[&a, &b], 8), 2);
        assert_eq!(max_node_disjoint_sets(&[a.set(), b.set()]), 1);
        let e = Path::empty();
        assert_eq!(union_flow(&[&e, &e, &a], 8), 3);
        assert_eq!(union_flow(&[&e, &e, &a], 2), 2);
    }

    #[test]
    fn superpath_filter() {
        let cfg = ModificationConfig::default().with("mbd10").unwrap();
        let mut s = PathStore::new();
        assert_eq!(s.insert_path(p(&[2]), &cfg), InsertOutcome::Inserted);
        assert_eq!(s.insert_path(p(&[2, 3]), &cfg), InsertOutcome::FilteredSuperpath);
        assert_eq!(s.insert_path(p(&[2]), &cfg), InsertOutcome::Duplicate);

        let mut s = PathStore::new();
        assert_eq!(s.insert_path(p(&[2, 3]), &cfg), InsertOutcome::Inserted);
        assert_eq!(s.insert_path(p(&[2]), &cfg), InsertOutcome::Inserted);
        assert_eq!(s.paths().len(), 1);

        let mut s = PathStore::new();
        assert_eq!(s.insert_path(Path::empty(), &cfg), InsertOutcome::Inserted);
        assert_eq!(s.insert_path(p(&[9]), &cfg), InsertOutcome::Inserted);
        assert_eq!(s.insert_path(p(&[9, 4]), &cfg), InsertOutcome::FilteredSuperpath);
        assert_eq!(s.max_node_disjoint(), 2);
    }

    #[test]
    fn delivered_filter() {
        let cfg = ModificationConfig::default().with("md5").unwrap();
        let mut s = store(&[&[1]]);
        s.delivered = true;
        assert_eq!(s.insert_path(p(&[2]), &cfg), InsertOutcome::Inserted);
        s.forwarded_empty = true;
        assert_eq!(s.insert_path(p(&[3]), &cfg), InsertOutcome::FilteredDelivered);
    }

    #[test]
    fn path_validation() {
        assert!(Path::new(vec![1, 2, 1]).is_none());
        assert!(Path::new(vec![200]).is_none());
        assert!(p(&[1, 2]).extended(1).is_none());
        assert_eq!(p(&[1, 2]).extended(3).unwrap().relays(), &[1, 2, 3]);
    }

    #[test]
    fn dump_is_json_lines() {
        let s = store(&[&[1, 2], &[]]);
        let key = MessageKey {
            payload_id: PayloadId::new(0, 1),
            mtype: MessageType::Echo,
            creator: 3,
            payload_ref: 0,
        };
        let mut out = Vec::new();
        s.dump_json_line(&key, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.ends_with('\n'));
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["paths"], serde_json::json!([[1, 2], []]));
        assert_eq!(v["delivered"], false);
    }

    fn arb_path(relays: u32, max_len: usize) -> impl Strategy<Value = Vec<ProcessId>> {
        proptest::sample::subsequence((0..relays).collect::<Vec<_>>(), 0..=max_len).prop_shuffle()
    }

    proptest! {
        #[test]
        fn oracle_equivalence(paths in prop::collection::vec(arb_path(10, 5), 0..=8)) {
            let s: Vec<ProcSet> = paths.iter().map(|q| q.iter().copied().collect()).collect();
            prop_assert_eq!(max_node_disjoint_sets(&s), brute_force_disjoint(&s).unwrap());
        }

        #[test]
        fn incremental_check_matches_full_count(
            paths in prop::collection::vec(arb_path(10, 4), 1..=10),
            f in 0usize..4,
        ) {
            let cfg = ModificationConfig::default();
            let mut s = PathStore::new();
            for q in paths {
                if s.insert_path(Path::new(q).unwrap(), &cfg) != InsertOutcome::Inserted {
                    continue;
                }
                let full = !s.delivered && s.max_node_disjoint() > f;
                prop_assert_eq!(s.can_deliver(f, false, &cfg), full);
                if full {
                    s.delivered = true;
                }
            }
        }

        #[test]
        fn flow_bounds_the_packing(paths in prop::collection::vec(arb_path(12, 5), 0..=30)) {
            let ps: Vec<Path> = paths.into_iter().map(|q| Path::new(q).unwrap()).collect();
            let refs: Vec<&Path> = ps.iter().collect();
            let sets: Vec<ProcSet> = ps.iter().map(Path::set).collect();
            let pack = max_node_disjoint_sets(&sets);
            prop_assert!(union_flow(&refs, 64) >= pack);
            prop_assert_eq!(union_flow(&refs, pack), pack);
        }

        #[test]
        fn large_stores_still_decide_exactly(
            paths in prop::collection::vec(arb_path(12, 4), 20..=40),
            f in 1usize..5,
        ) {
            let cfg = ModificationConfig::default();
            let mut s = PathStore::new();
            for q in paths {
                if s.insert_path(Path::new(q).unwrap(), &cfg) != InsertOutcome::Inserted {
                    continue;
                }
                let full = !s.delivered && s.max_node_disjoint() > f;
                prop_assert_eq!(s.can_deliver(f, false, &cfg), full);
                if full {
                    s.delivered = true;
                }
            }
        }

        #[test]
        fn superpath_filter_is_neutral(
            paths in prop::collection::vec(arb_path(8, 4), 1..=10),
            f in 0usize..3,
        ) {
            let on = ModificationConfig::default().with("mbd10").unwrap();
            let off = ModificationConfig::default();
            let (mut a, mut b) = (PathStore::new(), PathStore::new());
            for q in paths {
                let q = Path::new(q).unwrap();
                a.insert_path(q.clone(), &on);
                b.insert_path(q, &off);
                prop_assert_eq!(a.max_node_disjoint() > f, b.max_node_disjoint() > f);
                for x in a.paths().iter().filter(|x| !x.is_empty()) {
                    for y in a.paths() {
                        prop_assert!(x == y || !x.set().is_subset(y.set()));
                    }
                }
            }
        }

        #[test]
        fn insertion_is_monotone(paths in prop::collection::vec(arb_path(10, 4), 1..=8)) {
            let cfg = ModificationConfig::default();
            let mut s = PathStore::new();
            let mut last = 0;
            for q in paths {
                s.insert_path(Path::new(q).unwrap(), &cfg);
                let now = s.max_node_disjoint();
                prop_assert!(now >= last);
                last = now;
            }
        }
    }
}
