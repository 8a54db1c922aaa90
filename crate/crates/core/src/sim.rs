//! Discrete-event simulation of one broadcast over a graph.
//!
//! Links are reliable and serialize frames at a fixed bandwidth: a frame
//! waits until the sender's previous frame on that link has been pushed out,
//! then takes `bits / bandwidth` to transmit plus the propagation latency.
//! In asynchronous mode every frame also draws an extra delay from a
//! truncated normal distribution, one random stream per directed link.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adversary::{corrupt_actions, Adversary, AdversaryPlan, Inbound};
use crate::config::ModificationConfig;
use crate::engine::{NodeState, SendAction};
use crate::error::SimError;
use crate::topology::{vertex_connectivity, Graph};
use crate::types::{Delivery, MessageType, ProcessId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for TruncatedNormal {
    fn default() -> Self {
        Self {
            mean: 0.005,
            std_dev: 0.020,
            min: 0.0,
            max: 0.080,
        }
    }
}

impl TruncatedNormal {
    /// Rejection sampling; falls back to clamping after many misses.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let Ok(normal) = Normal::new(self.mean, self.std_dev) else {
            return self.mean.clamp(self.min, self.max);
        };
        for _ in 0..1000 {
            let x = normal.sample(rng);
            if (self.min..=self.max).contains(&x) {
                return x;
            }
        }
        self.mean.clamp(self.min, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Seconds.
    pub latency: f64,
    /// Bits per second.
    pub bandwidth: f64,
    pub async_delay: Option<TruncatedNormal>,
    /// Seconds added before a frame produced by a node enters the link.
    pub processing_delay: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            latency: 0.0005,
            bandwidth: 1e6,
            async_delay: None,
            processing_delay: 0.0,
        }
    }
}

impl LinkModel {
    pub fn asynchronous() -> Self {
        Self {
            async_delay: Some(TruncatedNormal::default()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.latency) || !ok(self.processing_delay) {
            return Err("delays must be finite and non-negative".into());
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err("bandwidth must be positive".into());
        }
        if let Some(d) = self.async_delay {
            if !ok(d.min) || !(d.max >= d.min) || !ok(d.std_dev) || !d.max.is_finite() {
                return Err("bad asynchronous delay distribution".into());
            }
        }
        Ok(())
    }
}

/// Arrival time of a frame handed to a link at `now`. `free_at` is when the
/// link finishes serializing its previous frame and is advanced here.
pub fn link_deliver_time(
    now: f64,
    frame_bits: usize,
    link: &LinkModel,
    free_at: &mut f64,
    rng: &mut impl Rng,
) -> f64 {
    let start = (now + link.processing_delay).max(*free_at);
    let done = start + frame_bits as f64 / link.bandwidth;
    *free_at = done;
    let extra = link.async_delay.map_or(0.0, |d| d.sample(rng));
    done + link.latency + extra
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub send: u64,
    pub echo: u64,
    pub ready: u64,
    pub echo_echo: u64,
    pub ready_echo: u64,
}

impl FrameCounts {
    pub fn add(&mut self, t: MessageType) {
        match t {
            MessageType::Send => self.send += 1,
            MessageType::Echo => self.echo += 1,
            MessageType::Ready => self.ready += 1,
            MessageType::EchoEcho => self.echo_echo += 1,
            MessageType::ReadyEcho => self.ready_echo += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.send + self.echo + self.ready + self.echo_echo + self.ready_echo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDelivery {
    pub node: ProcessId,
    pub time: f64,
    pub source: ProcessId,
    pub bid: u32,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub f: usize,
    pub source: ProcessId,
    pub correct: Vec<ProcessId>,
    /// The payload the source was asked to broadcast.
    pub payload: Vec<u8>,
    /// First BRB delivery time of each process, `None` for corrupt or
    /// undelivered ones.
    pub delivery_time: Vec<Option<f64>>,
    /// Every BRB delivery by a correct process, in event order.
    pub deliveries: Vec<NodeDelivery>,
    /// Time by which every correct process delivered, if they all did.
    pub brb_latency: Option<f64>,
    pub total_bits: u64,
    pub frames: FrameCounts,
    pub dropped_malformed: u64,
    /// Frames still waiting for a local payload ID at quiescence.
    pub pending_frames: u64,
    pub events: u64,
    pub end_time: f64,
}

impl RunReport {
    pub fn all_correct_delivered(&self) -> bool {
        self.brb_latency.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Everything that determines one simulated broadcast.
#[derive(Clone, Debug)]
pub struct RunSpec<'a> {
    pub graph: &'a Graph,
    pub f: usize,
    pub cfg: ModificationConfig,
    pub plan: AdversaryPlan,
    pub link: LinkModel,
    pub payload_size: usize,
    pub seed: u64,
    pub source: ProcessId,
    pub event_budget: u64,
}

pub const DEFAULT_EVENT_BUDGET: u64 = 20_000_000;

impl<'a> RunSpec<'a> {
    pub fn new(graph: &'a Graph, f: usize, cfg: ModificationConfig) -> Self {
        Self {
            graph,
            f,
            cfg,
            plan: AdversaryPlan::none(),
            link: LinkModel::default(),
            payload_size: 16,
            seed: 0,
            source: 0,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

enum Proc {
    Honest(NodeState),
    Corrupt(Adversary),
}

struct Event {
    from: ProcessId,
    to: ProcessId,
    mtype: MessageType,
    bits: usize,
    bytes: Vec<u8>,
}

struct Network<'a> {
    graph: &'a Graph,
    link: LinkModel,
    seed: u64,
    link_free: HashMap<(ProcessId, ProcessId), f64>,
    link_rng: HashMap<(ProcessId, ProcessId), ChaCha8Rng>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    in_flight: HashMap<u64, Event>,
    seq: u64,
}

impl Network<'_> {
    fn schedule(&mut self, now: f64, from: ProcessId, actions: Vec<SendAction>, report: &mut RunReport) {
        for a in actions {
            debug_assert!(self.graph.has_edge(from, a.to), "frame off the graph");
            report.total_bits += a.frame.bits as u64;
            report.frames.add(a.mtype);
            let key = (from, a.to);
            let free = self.link_free.entry(key).or_insert(0.0);
            let seed = self.seed;
            let rng = self.link_rng.entry(key).or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(((from as u64) << 32) | a.to as u64);
                r
            });
            let at = link_deliver_time(now, a.frame.bits.max(1), &self.link, free, rng);
            // Arrival times are non-negative, so their bit patterns order
            // like the values themselves.
            self.queue.push(Reverse((at.to_bits(), self.seq)));
            self.in_flight.insert(
                self.seq,
                Event {
                    from,
                    to: a.to,
                    mtype: a.mtype,
                    bits: a.frame.bits,
                    bytes: a.frame.bytes,
                },
            );
            self.seq += 1;
        }
    }
}

fn record(report: &mut RunReport, node: ProcessId, now: f64, ds: Vec<Delivery>) {
    for d in ds {
        if report.delivery_time[node as usize].is_none() {
            report.delivery_time[node as usize] = Some(now);
        }
        report.deliveries.push(NodeDelivery {
            node,
            time: now,
            source: d.source,
            bid: d.bid,
            payload: d.payload,
        });
    }
}

/// Runs one broadcast to quiescence.
pub fn run(
    graph: &Graph,
    f: usize,
    cfg: ModificationConfig,
    plan: AdversaryPlan,
    link: LinkModel,
    payload_size: usize,
    seed: u64,
) -> Result<RunReport, SimError> {
    let mut spec = RunSpec::new(graph, f, cfg);
    spec.plan = plan;
    spec.link = link;
    spec.payload_size = payload_size;
    spec.seed = seed;
    run_spec(&spec, None)
}

/// Deterministic payload bytes for a run.
pub fn payload_for(size: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5041_594c);
    let mut data = vec![0u8; size];
    rng.fill_bytes(&mut data);
    data
}

/// Like [`run`], with an optional trace sink receiving one line per frame
/// delivery: `time sender receiver mtype bits`.
pub fn run_spec(spec: &RunSpec<'_>, trace: Option<&mut dyn Write>) -> Result<RunReport, SimError> {
    run_spec_with(spec, trace, None)
}

/// [`run_spec`] that also dumps every correct node's path stores at
/// quiescence, one JSON object per line: `{"node":p,"store":{...}}`.
pub fn run_spec_with(
    spec: &RunSpec<'_>,
    mut trace: Option<&mut dyn Write>,
    paths: Option<&mut dyn Write>,
) -> Result<RunReport, SimError> {
    let g = spec.graph;
    let n = g.n();
    spec.plan.validate(n, spec.f)?;
    spec.link.validate().map_err(SimError::Plan)?;
    if spec.source as usize >= n {
        return Err(SimError::Plan(format!("source {} out of range", spec.source)));
    }
    let kappa = vertex_connectivity(g);
    if kappa <= 2 * spec.f || n <= 3 * spec.f {
        return Err(SimError::Infeasible {
            required: 2 * spec.f + 1,
            actual: kappa,
        });
    }

    let mut procs = Vec::with_capacity(n);
    for p in 0..n as ProcessId {
        let nb = g.neighbors(p);
        procs.push(match spec.plan.strategy(p) {
            None => Proc::Honest(NodeState::init(p, nb, n, spec.f, spec.cfg)?),
            Some(st) => Proc::Corrupt(Adversary::new(
                p,
                nb,
                n,
                spec.f,
                spec.cfg,
                st,
                spec.seed ^ 0x0bad_5eed,
            )?),
        });
    }

    let mut report = RunReport {
        n,
        f: spec.f,
        source: spec.source,
        correct: (0..n as ProcessId).filter(|p| !spec.plan.is_corrupt(*p)).collect(),
        payload: payload_for(spec.payload_size, spec.seed),
        delivery_time: vec![None; n],
        deliveries: Vec::new(),
        brb_latency: None,
        total_bits: 0,
        frames: FrameCounts::default(),
        dropped_malformed: 0,
        pending_frames: 0,
        events: 0,
        end_time: 0.0,
    };
    let mut net = Network {
        graph: g,
        link: spec.link,
        seed: spec.seed,
        link_free: HashMap::new(),
        link_rng: HashMap::new(),
        queue: BinaryHeap::new(),
        in_flight: HashMap::new(),
        seq: 0,
    };

    let payload = report.payload.clone();
    let src = spec.source;
    match &mut procs[src as usize] {
        Proc::Honest(node) => {
            let out = node.brb_broadcast(&payload)?;
            let ds = node.drain_deliveries();
            record(&mut report, src, 0.0, ds);
            net.schedule(0.0, src, out, &mut report);
        }
        Proc::Corrupt(adv) => {
            let out = corrupt_actions(adv, Inbound::Broadcast { payload: &payload }, 0.0);
            net.schedule(0.0, src, out, &mut report);
        }
    }

    let mut now = 0.0;
    while let Some(Reverse((t, s))) = net.queue.pop() {
        report.events += 1;
        if report.events > spec.event_budget {
            return Err(SimError::NonQuiescent(spec.event_budget));
        }
        now = f64::from_bits(t);
        let ev = net.in_flight.remove(&s).expect("scheduled event");
        if let Some(w) = trace.as_deref_mut() {
            let _ = writeln!(w, "{now:.9} {} {} {} {}", ev.from, ev.to, ev.mtype, ev.bits);
        }
        match &mut procs[ev.to as usize] {
            Proc::Honest(node) => {
                let out = node.on_frame(ev.from, &ev.bytes);
                let ds = node.drain_deliveries();
                record(&mut report, ev.to, now, ds);
                net.schedule(now, ev.to, out, &mut report);
            }
            Proc::Corrupt(adv) => {
                let out = corrupt_actions(
                    adv,
                    Inbound::Frame {
                        from: ev.from,
                        bytes: &ev.bytes,
                    },
                    now,
                );
                net.schedule(now, ev.to, out, &mut report);
            }
        }
    }
    report.end_time = now;

    if let Some(w) = paths {
        for (p, proc) in procs.iter().enumerate() {
            if let Proc::Honest(node) = proc {
                let mut buf = Vec::new();
                node.dump_paths(&mut buf).map_err(|e| SimError::Output(e.to_string()))?;
                for line in String::from_utf8_lossy(&buf).lines() {
                    writeln!(w, "{{\"node\":{p},\"store\":{line}}}").map_err(|e| SimError::Output(e.to_string()))?;
                }
            }
        }
    }

    for p in &procs {
        if let Proc::Honest(node) = p {
            report.dropped_malformed += node.stats().malformed_frames;
            report.pending_frames += node.pending_frames() as u64;
        }
    }
    if report.correct.iter().all(|&p| report.delivery_time[p as usize].is_some()) {
        report.brb_latency = report
            .correct
            .iter()
            .filter_map(|&p| report.delivery_time[p as usize])
            .fold(Some(0.0), |acc: Option<f64>, t| acc.map(|a| a.max(t)));
    }
    Ok(report)
}

/// Outcome of checking the BRB properties on one report.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub validity: bool,
    pub no_duplication: bool,
    pub integrity: bool,
    pub agreement: bool,
}

impl PropertyCheck {
    pub fn all(&self) -> bool {
        self.validity && self.no_duplication && self.integrity && self.agreement
    }
}

/// BRB properties over the correct processes of one run.
///
/// Validity is only required when the source is correct. Integrity here
/// means a correct source's deliveries carry exactly its payload.
pub fn check_properties(r: &RunReport) -> PropertyCheck {
    let source_correct = r.correct.contains(&r.source);
    let mut per_node: BTreeMap<ProcessId, Vec<&NodeDelivery>> = BTreeMap::new();
    for d in &r.deliveries {
        per_node.entry(d.node).or_default().push(d);
    }
    let no_duplication = per_node.values().all(|ds| {
        let mut ids: Vec<(ProcessId, u32)> = ds.iter().map(|d| (d.source, d.bid)).collect();
        ids.sort_unstable();
        ids.windows(2).all(|w| w[0] != w[1])
    });
    let integrity = r.deliveries.iter().all(|d| {
        r.correct.contains(&d.node)
            && d.source == r.source
            && d.bid == 0
            && (!source_correct || d.payload == r.payload)
    });
    let mut payloads: Vec<&[u8]> = r.deliveries.iter().map(|d| d.payload.as_slice()).collect();
    payloads.sort_unstable();
    payloads.dedup();
    let delivered_count = per_node.len();
    let agreement = payloads.len() <= 1 && (delivered_count == 0 || delivered_count == r.correct.len());
    let validity = !source_correct || r.brb_latency.is_some();
    PropertyCheck {
        validity,
        no_duplication,
        integrity,
        agreement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Strategy;

    #[test]
    fn sync_link_arithmetic() {
        let link = LinkModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut free = 0.0;
        let t = link_deliver_time(0.0, 1000, &link, &mut free, &mut rng);
        assert!((t - 0.0015).abs() < 1e-12);
        let t2 = link_deliver_time(0.0, 1000, &link, &mut free, &mut rng);
        assert!((t2 - 0.0025).abs() < 1e-12);
    }

    #[test]
    fn processing_delay_shifts_start() {
        let link = LinkModel {
            processing_delay: 0.001,
            ..LinkModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut free = 0.0;
        let t = link_deliver_time(0.0, 1000, &link, &mut free, &mut rng);
        assert!((t - 0.0025).abs() < 1e-12);
    }

    #[test]
    fn async_delay_is_bounded() {
        let link = LinkModel::asynchronous();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut free = 0.0;
            let t = link_deliver_time(0.0, 1000, &link, &mut free, &mut rng);
            assert!((0.0015 - 1e-12..=0.0015 + 0.080 + 1e-12).contains(&t));
        }
    }

    #[test]
    fn truncated_normal_mean_is_shifted_up() {
        let d = TruncatedNormal::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean: f64 = (0..20_000).map(|_| d.sample(&mut rng)).sum::<f64>() / 20_000.0;
        // Truncating N(5ms, 20ms) to [0, 80ms] moves the mean to about 17ms.
        assert!(mean > 0.014 && mean < 0.020, "{mean}");
    }

    #[test]
    fn fault_free_complete_graph_delivers() {
        let g = Graph::complete(4);
        for preset in ["bd", "bdopt", "lat", "bdw", "latbdw"] {
            let cfg = ModificationConfig::preset(preset).unwrap();
            let r = run(&g, 1, cfg, AdversaryPlan::none(), LinkModel::default(), 16, 3).unwrap();
            assert!(r.all_correct_delivered(), "{preset}");
            assert!(check_properties(&r).all(), "{preset}");
            assert_eq!(r.dropped_malformed, 0, "{preset}");
            assert_eq!(r.pending_frames, 0, "{preset}");
        }
    }

    #[test]
    fn silent_source_delivers_nothing() {
        let g = Graph::complete(4);
        let plan = AdversaryPlan::none().with(0, Strategy::Silent);
        let r = run(&g, 1, ModificationConfig::bd(), plan, LinkModel::default(), 16, 0).unwrap();
        assert!(r.deliveries.is_empty());
        assert_eq!(r.brb_latency, None);
        assert_eq!(r.total_bits, 0);
        assert!(check_properties(&r).all());
    }

    #[test]
    fn infeasible_graph_is_rejected() {
        let g = Graph::cycle(6);
        let err = run(&g, 1, ModificationConfig::bd(), AdversaryPlan::none(), LinkModel::default(), 16, 0);
        assert!(matches!(err, Err(SimError::Infeasible { required: 3, actual: 2 })));
    }

    #[test]
    fn oversized_plan_is_rejected() {
        let g = Graph::complete(4);
        let plan = AdversaryPlan::uniform(&[1, 2], Strategy::Silent);
        let err = run(&g, 1, ModificationConfig::bd(), plan, LinkModel::default(), 16, 0);
        assert!(matches!(err, Err(SimError::Plan(_))));
    }

    #[test]
    fn event_budget_is_enforced() {
        let g = Graph::complete(4);
        let mut spec = RunSpec::new(&g, 1, ModificationConfig::bd());
        spec.event_budget = 5;
        assert!(matches!(run_spec(&spec, None), Err(SimError::NonQuiescent(5))));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let g = Graph::complete(5);
        let cfg = ModificationConfig::preset("latbdw").unwrap();
        let a = run(&g, 1, cfg, AdversaryPlan::none(), LinkModel::asynchronous(), 64, 9).unwrap();
        let b = run(&g, 1, cfg, AdversaryPlan::none(), LinkModel::asynchronous(), 64, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn trace_has_one_line_per_event() {
        let g = Graph::complete(4);
        let spec = RunSpec::new(&g, 1, ModificationConfig::preset("bdopt").unwrap());
        let mut buf = Vec::new();
        let r = run_spec(&spec, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count() as u64, r.events);
        assert_eq!(r.events, r.frames.total());
        let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 5);
        assert_eq!(first[1], "0");
        let bits: u64 = text.lines().map(|l| l.rsplit(' ').next().unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(bits, r.total_bits);
    }

    #[test]
    fn path_dump_covers_every_correct_node() {
        let g = Graph::complete(4);
        let mut spec = RunSpec::new(&g, 1, ModificationConfig::preset("bdopt").unwrap());
        spec.plan = AdversaryPlan::none().with(3, Strategy::Silent);
        let mut buf = Vec::new();
        run_spec_with(&spec, None, Some(&mut buf)).unwrap();
        let mut nodes = std::collections::BTreeSet::new();
        for line in String::from_utf8(buf).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            nodes.insert(v["node"].as_u64().unwrap());
            assert!(v["store"]["paths"].is_array());
        }
        assert_eq!(nodes.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
