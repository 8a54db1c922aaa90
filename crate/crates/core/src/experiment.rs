//! Parameter sweeps, CSV output and baseline/candidate comparison.
//!
//! A sweep is the cartesian product `n × k × f × payload × config`, each
//! point repeated over a list of seeds. The seed picks both the graph and
//! the payload bytes, so two configs compared on the same seed run on the
//! same graph.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryPlan, Strategy};
use crate::config::ModificationConfig;
use crate::error::{ConfigError, ExperimentError, TopologyError};
use crate::sim::{run_spec, run_spec_with, LinkModel, RunReport, RunSpec, TruncatedNormal};
use crate::topology::{generate_regular_graph, Graph, TopologySpec};
use crate::types::ProcessId;

pub const CSV_HEADER: [&str; 13] = [
    "n",
    "k",
    "f",
    "payload",
    "preset",
    "seed",
    "latency_s",
    "total_bits",
    "frames_send",
    "frames_echo",
    "frames_ready",
    "frames_ee",
    "frames_re",
];

/// Seed column value of aggregate rows.
pub const AGGREGATE_SEED: &str = "agg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    pub f: Vec<usize>,
    /// Fixed graph instead of generated ones; `n` and `k` are then taken
    /// from the file (k = minimum degree).
    pub graph: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// Preset names or `preset+toggle+toggle` specs.
    pub configs: Vec<String>,
    pub local_id_bits: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_payloads")]
    pub payload_sizes: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Repetition `i` uses `seed + i` unless `seeds` is given.
    #[serde(default)]
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub source: ProcessId,
    pub output: Option<PathBuf>,
    pub event_budget: Option<u64>,
}

fn default_payloads() -> Vec<usize> {
    vec![16, 16 * 1024]
}

fn default_repetitions() -> usize {
    5
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            payload_sizes: default_payloads(),
            repetitions: default_repetitions(),
            seed: 0,
            seeds: None,
            source: 0,
            output: None,
            event_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(default = "default_latency")]
    pub latency: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub processing_delay: f64,
    /// Enables the truncated normal extra delay with default parameters
    /// unless `async_delay` is given.
    #[serde(default, rename = "async")]
    pub asynchronous: bool,
    pub async_delay: Option<TruncatedNormal>,
}

fn default_latency() -> f64 {
    LinkModel::default().latency
}

fn default_bandwidth() -> f64 {
    LinkModel::default().bandwidth
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            latency: default_latency(),
            bandwidth: default_bandwidth(),
            processing_delay: 0.0,
            asynchronous: false,
            async_delay: None,
        }
    }
}

impl LinkSection {
    pub fn model(&self) -> LinkModel {
        LinkModel {
            latency: self.latency,
            bandwidth: self.bandwidth,
            processing_delay: self.processing_delay,
            async_delay: self
                .async_delay
                .or(self.asynchronous.then(TruncatedNormal::default)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptNode {
    pub node: ProcessId,
    pub strategy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub adversary: Vec<CorruptNode>,
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(g) = &cfg.topology.graph {
            if g.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.topology.graph = Some(dir.join(g));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        if t.f.is_empty() {
            return Err(invalid("topology.f", "empty sweep"));
        }
        if t.graph.is_none() && (t.n.is_empty() || t.k.is_empty()) {
            return Err(invalid("topology", "empty sweep: give n and k, or a graph file"));
        }
        if self.protocol.configs.is_empty() {
            return Err(invalid("protocol.configs", "empty sweep"));
        }
        self.modification_configs()?;
        if self.run.payload_sizes.is_empty() {
            return Err(invalid("run.payload_sizes", "empty sweep"));
        }
        if self.run.repetitions == 0 {
            return Err(invalid("run.repetitions", "must be at least 1"));
        }
        if matches!(&self.run.seeds, Some(s) if s.is_empty()) {
            return Err(invalid("run.seeds", "empty sweep"));
        }
        self.link.model().validate().map_err(|r| invalid("link", r))?;
        self.plan()?;
        Ok(())
    }

    pub fn modification_configs(&self) -> Result<Vec<(String, ModificationConfig)>, ConfigError> {
        self.protocol
            .configs
            .iter()
            .map(|s| {
                let mut c: ModificationConfig = s.parse()?;
                if let Some(bits) = self.protocol.local_id_bits {
                    c.local_id_bits = bits;
                }
                c.validate()?;
                Ok((s.clone(), c))
            })
            .collect()
    }

    pub fn plan(&self) -> Result<AdversaryPlan, ConfigError> {
        let mut plan = AdversaryPlan::none();
        for c in &self.adversary {
            let s: Strategy = c.strategy.parse().map_err(|e: String| invalid("adversary.strategy", e))?;
            if plan.is_corrupt(c.node) {
                return Err(invalid("adversary.node", format!("process {} listed twice", c.node)));
            }
            plan = plan.with(c.node, s);
        }
        Ok(plan)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => (0..self.run.repetitions as u64).map(|i| self.run.seed + i).collect(),
        }
    }
}

/// One CSV data row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub payload: usize,
    pub preset: String,
    pub seed: u64,
    pub latency_s: Option<f64>,
    pub total_bits: u64,
    pub frames_send: u64,
    pub frames_echo: u64,
    pub frames_ready: u64,
    pub frames_ee: u64,
    pub frames_re: u64,
}

impl Row {
    pub fn from_report(n: usize, k: usize, f: usize, payload: usize, preset: &str, seed: u64, r: &RunReport) -> Self {
        Self {
            n,
            k,
            f,
            payload,
            preset: preset.to_string(),
            seed,
            latency_s: r.brb_latency,
            total_bits: r.total_bits,
            frames_send: r.frames.send,
            frames_echo: r.frames.echo,
            frames_ready: r.frames.ready,
            frames_ee: r.frames.echo_echo,
            frames_re: r.frames.ready_echo,
        }
    }

    fn key(&self) -> (usize, usize, usize, usize, u64) {
        (self.n, self.k, self.f, self.payload, self.seed)
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.k.to_string(),
            self.f.to_string(),
            self.payload.to_string(),
            self.preset.clone(),
            self.seed.to_string(),
            self.latency_s.map_or(String::new(), |l| l.to_string()),
            self.total_bits.to_string(),
            self.frames_send.to_string(),
            self.frames_echo.to_string(),
            self.frames_ready.to_string(),
            self.frames_ee.to_string(),
            self.frames_re.to_string(),
        ]
    }
}

/// One sweep point: every row shares `(n, k, f, payload, preset)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub rows: Vec<Row>,
}

/// `mean|min|max` of a metric over a point's rows.
fn aggregate(values: &[f64]) -> String {
    if values.is_empty() {
        return String::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("{mean}|{min}|{max}")
}

impl PointResult {
    /// Aggregate row: seed column `agg`, metric cells `mean|min|max`. The
    /// latency cell is empty when any repetition had no latency.
    pub fn aggregate_record(&self) -> Vec<String> {
        let first = &self.rows[0];
        let lat: Option<Vec<f64>> = self.rows.iter().map(|r| r.latency_s).collect();
        let col = |f: fn(&Row) -> u64| aggregate(&self.rows.iter().map(|r| f(r) as f64).collect::<Vec<_>>());
        vec![
            first.n.to_string(),
            first.k.to_string(),
            first.f.to_string(),
            first.payload.to_string(),
            first.preset.clone(),
            AGGREGATE_SEED.to_string(),
            lat.map_or(String::new(), |l| aggregate(&l)),
            col(|r| r.total_bits),
            col(|r| r.frames_send),
            col(|r| r.frames_echo),
            col(|r| r.frames_ready),
            col(|r| r.frames_ee),
            col(|r| r.frames_re),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<PointResult>,
    /// `(n, k, f)` combinations without a feasible graph.
    pub skipped: Vec<(usize, usize, usize, String)>,
}

impl SweepOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.points.iter().flat_map(|p| p.rows.iter())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| ExperimentError::Csv(e.to_string());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for p in &self.points {
            for r in &p.rows {
                w.write_record(r.record()).map_err(csv_err)?;
            }
            w.write_record(p.aggregate_record()).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

struct Task<'a> {
    point: usize,
    n: usize,
    k: usize,
    f: usize,
    payload: usize,
    preset: &'a str,
    cfg: ModificationConfig,
    seed: u64,
    graph: &'a Graph,
}

type GraphKey = (usize, usize, usize, u64);

struct SweepGraphs {
    graphs: BTreeMap<GraphKey, Graph>,
    nkf: Vec<(usize, usize, usize)>,
    skipped: Vec<(usize, usize, usize, String)>,
}

/// One graph per (n, k, f, seed). Infeasible `(n, k, f)` are skipped whole.
fn sweep_graphs(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<SweepGraphs, ExperimentError> {
    let mut graphs: BTreeMap<GraphKey, Graph> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut nkf = Vec::new();
    if let Some(path) = &cfg.topology.graph {
        let text = std::fs::read_to_string(path)?;
        let g = Graph::parse_file(&text)?;
        let k = (0..g.n() as ProcessId).map(|p| g.degree(p)).min().unwrap_or(0);
        for &f in &cfg.topology.f {
            nkf.push((g.n(), k, f));
            for &s in seeds {
                graphs.insert((g.n(), k, f, s), g.clone());
            }
        }
    } else {
        for &n in &cfg.topology.n {
            for &k in &cfg.topology.k {
                for &f in &cfg.topology.f {
                    let mut ok = true;
                    for &s in seeds {
                        match generate_regular_graph(&TopologySpec::new(n, k, f, s)) {
                            Ok(g) => {
                                graphs.insert((n, k, f, s), g);
                            }
                            Err(e @ (TopologyError::InfeasibleSpec(_) | TopologyError::GenerationExhausted { .. })) => {
                                skipped.push((n, k, f, e.to_string()));
                                ok = false;
                                break;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if ok {
                        nkf.push((n, k, f));
                    }
                }
            }
        }
    }
    if nkf.is_empty() {
        return Err(invalid("topology", "no feasible (n, k, f) in the sweep").into());
    }
    Ok(SweepGraphs { graphs, nkf, skipped })
}

/// Runs a whole sweep. Rows come out in sweep order whatever the number of
/// worker threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepOutcome, ExperimentError> {
    cfg.validate()?;
    let configs = cfg.modification_configs()?;
    let plan = cfg.plan()?;
    let link = cfg.link.model();
    let seeds = cfg.seeds();

    let SweepGraphs { graphs, nkf, skipped } = sweep_graphs(cfg, &seeds)?;

    let mut tasks = Vec::new();
    let mut point = 0;
    for &(n, k, f) in &nkf {
        for &payload in &cfg.run.payload_sizes {
            for (name, mc) in &configs {
                for &seed in &seeds {
                    tasks.push(Task {
                        point,
                        n,
                        k,
                        f,
                        payload,
                        preset: name,
                        cfg: *mc,
                        seed,
                        graph: &graphs[&(n, k, f, seed)],
                    });
                }
                point += 1;
            }
        }
    }

    let results: Vec<Result<(usize, Row), ExperimentError>> = tasks
        .par_iter()
        .map(|t| {
            let mut spec = RunSpec::new(t.graph, t.f, t.cfg);
            spec.plan = plan.clone();
            spec.link = link;
            spec.payload_size = t.payload;
            spec.seed = t.seed;
            spec.source = cfg.run.source;
            if let Some(b) = cfg.run.event_budget {
                spec.event_budget = b;
            }
            let r = run_spec(&spec, None)?;
            Ok((t.point, Row::from_report(t.n, t.k, t.f, t.payload, t.preset, t.seed, &r)))
        })
        .collect();

    let mut points: Vec<PointResult> = (0..point).map(|_| PointResult { rows: Vec::new() }).collect();
    for r in results {
        let (p, row) = r?;
        points[p].rows.push(row);
    }
    Ok(SweepOutcome { points, skipped })
}

/// Runs a config that describes exactly one simulation, with optional
/// frame trace and path store dump sinks.
pub fn run_single(
    cfg: &ExperimentConfig,
    trace: Option<&mut dyn Write>,
    paths: Option<&mut dyn Write>,
) -> Result<RunReport, ExperimentError> {
    cfg.validate()?;
    let configs = cfg.modification_configs()?;
    let seeds = cfg.seeds();
    let SweepGraphs { graphs, nkf, .. } = sweep_graphs(cfg, &seeds)?;
    if nkf.len() * configs.len() * seeds.len() * cfg.run.payload_sizes.len() != 1 {
        return Err(invalid("run", "a single run needs exactly one topology, config, payload size and seed").into());
    }
    let (n, k, f) = nkf[0];
    let graph = &graphs[&(n, k, f, seeds[0])];
    let mut spec = RunSpec::new(graph, f, configs[0].1);
    spec.plan = cfg.plan()?;
    spec.link = cfg.link.model();
    spec.payload_size = cfg.run.payload_sizes[0];
    spec.seed = seeds[0];
    spec.source = cfg.run.source;
    if let Some(b) = cfg.run.event_budget {
        spec.event_budget = b;
    }
    Ok(run_spec_with(&spec, trace, paths)?)
}

/// Runs `f` on a pool with `jobs` threads (0 = rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Reads data rows back from a CSV written by [`SweepOutcome::write_csv`];
/// aggregate rows are skipped.
pub fn read_rows(input: impl Read) -> Result<Vec<Row>, ExperimentError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| ExperimentError::Csv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(ExperimentError::Csv(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| ExperimentError::Csv(e.to_string()))?;
        if rec.get(5) == Some(AGGREGATE_SEED) {
            continue;
        }
        let line = i + 2;
        let num = |j: usize| -> Result<u64, ExperimentError> {
            rec.get(j)
                .unwrap_or("")
                .parse::<u64>()
                .map_err(|_| ExperimentError::Csv(format!("line {line}: bad `{}`", CSV_HEADER[j])))
        };
        let latency = match rec.get(6).unwrap_or("") {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| ExperimentError::Csv(format!("line {line}: bad `latency_s`")))?,
            ),
        };
        rows.push(Row {
            n: num(0)? as usize,
            k: num(1)? as usize,
            f: num(2)? as usize,
            payload: num(3)? as usize,
            preset: rec.get(4).unwrap_or("").to_string(),
            seed: num(5)?,
            latency_s: latency,
            total_bits: num(7)?,
            frames_send: num(8)?,
            frames_echo: num(9)?,
            frames_ready: num(10)?,
            frames_ee: num(11)?,
            frames_re: num(12)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub payload: usize,
    pub seed: u64,
    /// Percent change of the candidate relative to the baseline.
    pub latency_pct: Option<f64>,
    pub bits_pct: f64,
}

/// Min/max of the per-key deltas for one `(n, f, payload)` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRange {
    pub n: usize,
    pub f: usize,
    pub payload: usize,
    pub latency_pct: Option<(f64, f64)>,
    pub bits_pct: (f64, f64),
    /// Percent change of the per-sweep means.
    pub mean_latency_pct: Option<f64>,
    pub mean_bits_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub deltas: Vec<Delta>,
    pub ranges: Vec<DeltaRange>,
}

fn pct(base: f64, cand: f64) -> f64 {
    if base == 0.0 {
        if cand == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (cand - base) / base * 100.0
    }
}

fn range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    v.fold(None, |acc, x| match acc {
        None => Some((x, x)),
        Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
    })
}

/// Pairs rows on `(n, k, f, payload, seed)` and reports percent deltas.
pub fn compare(baseline: &[Row], candidate: &[Row]) -> Result<Comparison, ExperimentError> {
    let index = |rows: &[Row], which: &str| -> Result<BTreeMap<_, Row>, ExperimentError> {
        let mut m = BTreeMap::new();
        for r in rows {
            if m.insert(r.key(), r.clone()).is_some() {
                return Err(ExperimentError::KeyMismatch(format!("duplicate key {:?} in {which}", r.key())));
            }
        }
        Ok(m)
    };
    let b = index(baseline, "baseline")?;
    let c = index(candidate, "candidate")?;
    if let Some(k) = b.keys().find(|k| !c.contains_key(k)) {
        return Err(ExperimentError::KeyMismatch(format!("{k:?} missing from candidate")));
    }
    if let Some(k) = c.keys().find(|k| !b.contains_key(k)) {
        return Err(ExperimentError::KeyMismatch(format!("{k:?} missing from baseline")));
    }
    let mut deltas = Vec::new();
    for (key, br) in &b {
        let cr = &c[key];
        deltas.push(Delta {
            n: key.0,
            k: key.1,
            f: key.2,
            payload: key.3,
            seed: key.4,
            latency_pct: br.latency_s.zip(cr.latency_s).map(|(x, y)| pct(x, y)),
            bits_pct: pct(br.total_bits as f64, cr.total_bits as f64),
        });
    }
    let mut groups: BTreeMap<(usize, usize, usize), Vec<(&Row, &Row)>> = BTreeMap::new();
    for (key, br) in &b {
        groups.entry((key.0, key.2, key.3)).or_default().push((br, &c[key]));
    }
    let ranges = groups
        .into_iter()
        .map(|((n, f, payload), pairs)| {
            let ds: Vec<&Delta> = deltas
                .iter()
                .filter(|d| d.n == n && d.f == f && d.payload == payload)
                .collect();
            let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
            let lat_pairs: Option<Vec<(f64, f64)>> =
                pairs.iter().map(|(x, y)| x.latency_s.zip(y.latency_s)).collect();
            DeltaRange {
                n,
                f,
                payload,
                latency_pct: range(ds.iter().filter_map(|d| d.latency_pct)),
                bits_pct: range(ds.iter().map(|d| d.bits_pct)).unwrap_or((0.0, 0.0)),
                mean_latency_pct: lat_pairs.map(|lp| {
                    pct(
                        mean(lp.iter().map(|p| p.0).collect()),
                        mean(lp.iter().map(|p| p.1).collect()),
                    )
                }),
                mean_bits_pct: pct(
                    mean(pairs.iter().map(|p| p.0.total_bits as f64).collect()),
                    mean(pairs.iter().map(|p| p.1.total_bits as f64).collect()),
                ),
            }
        })
        .collect();
    Ok(Comparison { deltas, ranges })
}

impl Comparison {
    /// Plain-text table: one line per key, then one range line per sweep.
    pub fn to_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:+.1}"));
        let mut s = String::from("n,k,f,payload,seed,latency_pct,bits_pct\n");
        for d in &self.deltas {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:+.1}\n",
                d.n,
                d.k,
                d.f,
                d.payload,
                d.seed,
                fmt(d.latency_pct),
                d.bits_pct
            ));
        }
        s.push_str("\nn,f,payload,latency_range_pct,bits_range_pct,mean_latency_pct,mean_bits_pct\n");
        for r in &self.ranges {
            let lr = r
                .latency_pct
                .map_or("-".to_string(), |(lo, hi)| format!("[{lo:+.1}; {hi:+.1}]"));
            s.push_str(&format!(
                "{},{},{},{},[{:+.1}; {:+.1}],{},{:+.1}\n",
                r.n,
                r.f,
                r.payload,
                lr,
                r.bits_pct.0,
                r.bits_pct.1,
                fmt(r.mean_latency_pct),
                r.mean_bits_pct
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[topology]
n = [10]
k = [3, 4]
f = [1]

[protocol]
configs = ["bdopt", "latbdw"]

[run]
payload_sizes = [16]
repetitions = 2
"#;

    #[test]
    fn parse_defaults() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        assert_eq!(c.seeds(), vec![0, 1]);
        assert_eq!(c.link.model(), LinkModel::default());
        assert!(c.plan().unwrap().corrupt.is_empty());
        let c = ExperimentConfig::parse("[topology]\nn=[4]\nk=[3]\nf=[1]\n[protocol]\nconfigs=[\"bd\"]\n").unwrap();
        assert_eq!(c.run.payload_sizes, vec![16, 16384]);
        assert_eq!(c.seeds().len(), 5);
    }

    #[test]
    fn config_errors() {
        let empty = SMALL.replace("configs = [\"bdopt\", \"latbdw\"]", "configs = []");
        assert!(matches!(ExperimentConfig::parse(&empty), Err(ConfigError::Invalid { .. })));
        let zero = SMALL.replace("repetitions = 2", "repetitions = 0");
        assert!(ExperimentConfig::parse(&zero).is_err());
        let unknown = SMALL.replace("\"latbdw\"", "\"fast\"");
        assert!(matches!(ExperimentConfig::parse(&unknown), Err(ConfigError::UnknownModification(_))));
        let typo = SMALL.replace("repetitions", "repetition");
        match ExperimentConfig::parse(&typo) {
            Err(ConfigError::Parse(msg)) => assert!(msg.contains("repetition"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let bad_adv = format!("{SMALL}\n[[adversary]]\nnode = 3\nstrategy = \"sneaky\"\n");
        assert!(ExperimentConfig::parse(&bad_adv).is_err());
    }

    #[test]
    fn sweep_shape_and_csv() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.points.len(), 4);
        assert!(out.points.iter().all(|p| p.rows.len() == 2));
        let csv = out.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 4 * 3);
        assert!(lines[3].starts_with("10,3,1,16,bdopt,agg,"));
        let back = read_rows(csv.as_bytes()).unwrap();
        assert_eq!(back, out.rows().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn single_run_needs_one_point() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        assert!(matches!(run_single(&c, None, None), Err(ExperimentError::Config(_))));
        let one = "[topology]\nn=[7]\nk=[4]\nf=[1]\n[protocol]\nconfigs=[\"latbdw\"]\n[run]\npayload_sizes=[16]\nseeds=[3]\n";
        let c = ExperimentConfig::parse(one).unwrap();
        let mut trace = Vec::new();
        let r = run_single(&c, Some(&mut trace), None).unwrap();
        assert!(r.all_correct_delivered());
        assert_eq!(String::from_utf8(trace).unwrap().lines().count() as u64, r.events);
    }

    #[test]
    fn infeasible_points_are_skipped() {
        let text = SMALL.replace("n = [10]", "n = [7, 10]");
        let out = run_experiment(&ExperimentConfig::parse(&text).unwrap()).unwrap();
        // n = 7, k = 3 has no regular graph.
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.points.len(), 6);
        let none = SMALL.replace("k = [3, 4]", "k = [5]").replace("n = [10]", "n = [5]");
        assert!(run_experiment(&ExperimentConfig::parse(&none).unwrap()).is_err());
    }

    #[test]
    fn compare_identical_and_halved() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        let out = run_experiment(&c).unwrap();
        let base: Vec<Row> = out.rows().filter(|r| r.preset == "bdopt").cloned().collect();
        let same = compare(&base, &base).unwrap();
        assert!(same.deltas.iter().all(|d| d.bits_pct == 0.0 && d.latency_pct == Some(0.0)));
        let halved: Vec<Row> = base
            .iter()
            .map(|r| Row {
                total_bits: r.total_bits / 2,
                ..r.clone()
            })
            .collect();
        let cmp = compare(&base, &halved).unwrap();
        for d in &cmp.deltas {
            assert!((d.bits_pct + 50.0).abs() < 1e-3, "{}", d.bits_pct);
        }
        assert!(cmp.to_table().contains("-50.0"));
    }

    #[test]
    fn compare_key_mismatch() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        let out = run_experiment(&c).unwrap();
        let base: Vec<Row> = out.rows().filter(|r| r.preset == "bdopt").cloned().collect();
        let fewer = &base[1..];
        assert!(matches!(compare(&base, fewer), Err(ExperimentError::KeyMismatch(_))));
        let mut dup = base.clone();
        dup.push(base[0].clone());
        assert!(matches!(compare(&dup, &dup), Err(ExperimentError::KeyMismatch(_))));
    }

    #[test]
    fn sweep_is_deterministic_across_thread_counts() {
        let c = ExperimentConfig::parse(SMALL).unwrap();
        let a = with_jobs(1, || run_experiment(&c).unwrap().to_csv_string());
        let b = with_jobs(3, || run_experiment(&c).unwrap().to_csv_string());
        assert_eq!(a, b);
    }

    #[test]
    fn adversary_section() {
        let text = format!("{SMALL}\n[[adversary]]\nnode = 3\nstrategy = \"mutator\"\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.plan().unwrap().strategy(3), Some(Strategy::Mutator));
        let out = run_experiment(&c).unwrap();
        assert!(out.rows().all(|r| r.latency_s.is_some()));
    }
}
