//! Communication graphs: random regular generation, vertex connectivity and
//! the two text formats (graph files and the canonical `i: neighbors` dump).

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::types::{ProcSet, ProcessId, MAX_PROCESSES};

/// Attempts made by [`generate_regular_graph`] before giving up.
pub const GENERATION_RETRIES: usize = 1000;

/// Undirected simple graph over processes `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    adjacency: Vec<Vec<ProcessId>>,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops and out-of-range IDs.
    /// Duplicate edges collapse.
    pub fn from_edges(n: usize, edges: &[(ProcessId, ProcessId)]) -> Result<Self, TopologyError> {
        if n > MAX_PROCESSES {
            return Err(TopologyError::InvalidGraph(format!(
                "{n} vertices exceeds the supported {MAX_PROCESSES}"
            )));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(TopologyError::InvalidGraph(format!("edge {a}-{b} out of range")));
            }
            if a == b {
                return Err(TopologyError::InvalidGraph(format!("self-loop at {a}")));
            }
            sets[a as usize].insert(b);
            sets[b as usize].insert(a);
        }
        Ok(Self {
            n,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Builds a graph from adjacency lists, checking symmetry and loops.
    pub fn from_adjacency(adjacency: Vec<Vec<ProcessId>>) -> Result<Self, TopologyError> {
        let n = adjacency.len();
        let mut edges = Vec::new();
        for (i, nb) in adjacency.iter().enumerate() {
            for &j in nb {
                if j as usize >= n {
                    return Err(TopologyError::InvalidGraph(format!("neighbor {j} of {i} out of range")));
                }
                if !adjacency[j as usize].contains(&(i as ProcessId)) {
                    return Err(TopologyError::InvalidGraph(format!("edge {i}-{j} is not symmetric")));
                }
                edges.push((i as ProcessId, j));
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for a in 0..n as ProcessId {
            for b in a + 1..n as ProcessId {
                edges.push((a, b));
            }
        }
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<_> = (0..n as ProcessId)
            .map(|i| (i, (i + 1) % n as ProcessId))
            .collect();
        Self::from_edges(n, &edges).expect("cycle is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, p: ProcessId) -> &[ProcessId] {
        &self.adjacency[p as usize]
    }

    pub fn neighbor_set(&self, p: ProcessId) -> ProcSet {
        self.neighbors(p).iter().copied().collect()
    }

    pub fn degree(&self, p: ProcessId) -> usize {
        self.adjacency[p as usize].len()
    }

    pub fn has_edge(&self, a: ProcessId, b: ProcessId) -> bool {
        self.adjacency[a as usize].binary_search(&b).is_ok()
    }

    /// `Some(k)` if every vertex has degree `k`.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.adjacency.first().map_or(0, Vec::len);
        self.adjacency.iter().all(|a| a.len() == d).then_some(d)
    }

    pub fn edges(&self) -> impl Iterator<Item = (ProcessId, ProcessId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, nb)| {
            nb.iter()
                .copied()
                .filter(move |&j| j > i as ProcessId)
                .map(move |j| (i as ProcessId, j))
        })
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0 as ProcessId]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// One line `i: sorted neighbor list` per vertex.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for (i, nb) in self.adjacency.iter().enumerate() {
            let list: Vec<String> = nb.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{i}: {}", list.join(" "));
        }
        out
    }

    /// Graph file: first line `n k`, then one line of neighbor IDs per vertex.
    /// `k` is the regular degree, or the maximum degree for irregular graphs.
    pub fn to_file_string(&self) -> String {
        let k = self
            .regular_degree()
            .unwrap_or_else(|| self.adjacency.iter().map(Vec::len).max().unwrap_or(0));
        let mut out = format!("{} {}\n", self.n, k);
        for nb in &self.adjacency {
            let list: Vec<String> = nb.iter().map(u32::to_string).collect();
            out.push_str(&list.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_file(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().starts_with('#'));
        let (hline, header) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            reason: "empty file".into(),
        })?;
        let nums: Vec<&str> = header.split_whitespace().collect();
        let parse_err = |line: usize, reason: String| TopologyError::Parse { line: line + 1, reason };
        if nums.len() != 2 {
            return Err(parse_err(hline, "expected `n k`".into()));
        }
        let n: usize = nums[0]
            .parse()
            .map_err(|_| parse_err(hline, format!("bad n `{}`", nums[0])))?;
        let k: usize = nums[1]
            .parse()
            .map_err(|_| parse_err(hline, format!("bad k `{}`", nums[1])))?;
        let mut adjacency = Vec::with_capacity(n);
        for (ln, line) in lines.take(n) {
            let mut nb = Vec::new();
            for tok in line.split_whitespace() {
                let v: ProcessId = tok
                    .parse()
                    .map_err(|_| parse_err(ln, format!("bad neighbor `{tok}`")))?;
                nb.push(v);
            }
            adjacency.push(nb);
        }
        if adjacency.len() != n {
            return Err(parse_err(hline, format!("expected {n} adjacency lines, found {}", adjacency.len())));
        }
        let g = Self::from_adjacency(adjacency)?;
        let max_deg = g.adjacency.iter().map(Vec::len).max().unwrap_or(0);
        if max_deg > k {
            return Err(parse_err(hline, format!("declared k={k} but a vertex has degree {max_deg}")));
        }
        Ok(g)
    }
}

/// Parameters of a random regular topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(n: usize, k: usize, f: usize, seed: u64) -> Self {
        Self { n, k, f, seed }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let TopologySpec { n, k, f, .. } = *self;
        let bad = |r: String| Err(TopologyError::InfeasibleSpec(r));
        if n > MAX_PROCESSES {
            return bad(format!("n={n} exceeds {MAX_PROCESSES}"));
        }
        if k >= n {
            return bad(format!("k={k} must be < n={n}"));
        }
        if n * k % 2 != 0 {
            return bad(format!("n*k = {} is odd", n * k));
        }
        if n < 3 * f + 1 {
            return bad(format!("n={n} < 3f+1={}", 3 * f + 1));
        }
        if k < 2 * f + 1 {
            return bad(format!("k={k} < 2f+1={}", 2 * f + 1));
        }
        Ok(())
    }
}

/// Random `k`-regular graph on `n` vertices with vertex connectivity at least
/// `2f+1`. Deterministic in `spec.seed`; an attempt that fails (stuck pairing
/// or insufficient connectivity) moves on to the next random stream of the
/// same seed.
pub fn generate_regular_graph(spec: &TopologySpec) -> Result<Graph, TopologyError> {
    spec.validate()?;
    let required = 2 * spec.f + 1;
    for attempt in 0..GENERATION_RETRIES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt);
        let Some(edges) = try_pairing(spec.n, spec.k, &mut rng) else {
            continue;
        };
        let g = Graph::from_edges(spec.n, &edges)?;
        if g.is_connected() && vertex_connectivity(&g) >= required {
            return Ok(g);
        }
    }
    Err(TopologyError::GenerationExhausted {
        required,
        attempts: GENERATION_RETRIES,
    })
}

/// Pairing model: shuffle the `n*k` stubs, pair them up, keep the simple
/// edges and re-pair the stubs of rejected pairs until none remain. Returns
/// `None` when the leftover stubs can no longer form a simple edge.
fn try_pairing(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(ProcessId, ProcessId)>> {
    let mut edges: BTreeSet<(ProcessId, ProcessId)> = BTreeSet::new();
    let mut stubs: Vec<ProcessId> = (0..n as ProcessId)
        .flat_map(|v| std::iter::repeat_n(v, k))
        .collect();
    while !stubs.is_empty() {
        stubs.shuffle(rng);
        let mut leftover: HashMap<ProcessId, usize> = HashMap::new();
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && edges.insert((a, b)) {
                continue;
            }
            *leftover.entry(a).or_default() += 1;
            *leftover.entry(b).or_default() += 1;
        }
        if leftover.is_empty() {
            break;
        }
        let mut nodes: Vec<ProcessId> = leftover.keys().copied().collect();
        nodes.sort_unstable();
        let suitable = nodes.iter().enumerate().any(|(i, &a)| {
            nodes[i + 1..]
                .iter()
                .any(|&b| !edges.contains(&(a.min(b), a.max(b))))
        });
        if !suitable {
            return None;
        }
        stubs = nodes
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, leftover[&v]))
            .collect();
    }
    Some(edges.into_iter().collect())
}

/// Exact vertex connectivity. Uses the fact that for any fixed vertex `v`,
/// a minimum separator either misses `v` (so it separates `v` from some
/// non-neighbor) or contains it (so it separates two non-adjacent neighbors
/// of `v`). Disconnected graphs return 0; `K_n` returns `n - 1`.
pub fn vertex_connectivity(g: &Graph) -> usize {
    let n = g.n();
    if n <= 1 {
        return 0;
    }
    if !g.is_connected() {
        return 0;
    }
    let mut best = n - 1;
    let v: ProcessId = 0;
    for w in 0..n as ProcessId {
        if w != v && !g.has_edge(v, w) {
            best = best.min(local_connectivity(g, v, w, best));
        }
    }
    let nb = g.neighbors(v);
    for (i, &x) in nb.iter().enumerate() {
        for &y in &nb[i + 1..] {
            if !g.has_edge(x, y) {
                best = best.min(local_connectivity(g, x, y, best));
            }
        }
    }
    best
}

/// Maximum number of internally vertex-disjoint paths between non-adjacent
/// `s` and `t`, capped at `cap`. Unit-capacity augmenting paths on the
/// vertex-split digraph (`v_in = 2v`, `v_out = 2v + 1`).
pub fn local_connectivity(g: &Graph, s: ProcessId, t: ProcessId, cap: usize) -> usize {
    let n = g.n();
    let mut flow = FlowNetwork::new(2 * n);
    for v in 0..n {
        let c = if v as ProcessId == s || v as ProcessId == t { cap as i32 + 1 } else { 1 };
        flow.add_edge(2 * v, 2 * v + 1, c);
    }
    for (a, b) in g.edges() {
        let (a, b) = (a as usize, b as usize);
        flow.add_edge(2 * a + 1, 2 * b, 1);
        flow.add_edge(2 * b + 1, 2 * a, 1);
    }
    flow.max_flow(2 * s as usize + 1, 2 * t as usize, cap)
}

pub fn assert_brb_feasible(g: &Graph, f: usize) -> bool {
    vertex_connectivity(g) > 2 * f
}

/// Residual network with integer capacities, BFS augmentation.
pub(crate) struct FlowNetwork {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

const NIL: usize = usize::MAX;

impl FlowNetwork {
    pub(crate) fn new(nodes: usize) -> Self {
        Self {
            head: vec![NIL; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    pub(crate) fn add_edge(&mut self, u: usize, v: usize, c: i32) {
        for (a, b, cc) in [(u, v, c), (v, u, 0)] {
            self.to.push(b);
            self.cap.push(cc);
            self.next.push(self.head[a]);
            self.head[a] = self.to.len() - 1;
        }
    }

    /// Pushes unit augmentations from `s` to `t` until none remain or `limit` is reached.
    pub(crate) fn max_flow(&mut self, s: usize, t: usize, limit: usize) -> usize {
        let nodes = self.head.len();
        let mut total = 0;
        let mut parent = vec![NIL; nodes];
        while total < limit {
            parent.fill(NIL);
            let mut queue = VecDeque::from([s]);
            let mut reached = false;
            'bfs: while let Some(u) = queue.pop_front() {
                let mut e = self.head[u];
                while e != NIL {
                    let v = self.to[e];
                    if self.cap[e] > 0 && parent[v] == NIL && v != s {
                        parent[v] = e;
                        if v == t {
                            reached = true;
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                    e = self.next[e];
                }
            }
            if !reached {
                break;
            }
            let mut v = t;
            while v != s {
                let e = parent[v];
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
            total += 1;
        }
        total
    }
}
