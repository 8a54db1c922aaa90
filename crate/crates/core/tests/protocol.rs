use brb_core::adversary::{AdversaryPlan, Strategy};
use brb_core::experiment::{run_experiment, run_single, ExperimentConfig};
use brb_core::props::{run_suite, small_fixtures};
use brb_core::sim::{check_properties, run_spec, LinkModel, RunSpec};
use brb_core::topology::generate_regular_graph;
use brb_core::{ModificationConfig, TopologySpec};

fn preset(name: &str) -> ModificationConfig {
    name.parse().unwrap()
}

#[test]
fn async_suite_on_small_graphs() {
    let fixtures = small_fixtures(&[7, 10], &[1], 0x5eed);
    assert!(!fixtures.is_empty());
    let names = ["bd", "bdopt", "lat", "bdw", "latbdw"];
    let presets: Vec<_> = names.iter().map(|n| (*n, preset(n))).collect();
    let s = run_suite(&fixtures, &presets, &Strategy::ALL, LinkModel::asynchronous(), 16);
    assert!(s.runs > 500, "only {} runs", s.runs);
    assert!(s.violations.is_empty(), "{:#?}", s.violations);
}

#[test]
fn two_adversaries_under_async_delays() {
    let g = generate_regular_graph(&TopologySpec::new(10, 5, 2, 3)).unwrap();
    for name in ["bdopt", "lat", "bdw", "latbdw"] {
        for s in Strategy::ALL {
            for corrupt in [[3, 7], [1, 2], [0, 5]] {
                let mut spec = RunSpec::new(&g, 2, preset(name));
                spec.plan = AdversaryPlan::uniform(&corrupt, s);
                spec.link = LinkModel::asynchronous();
                spec.seed = 11;
                let r = run_spec(&spec, None).unwrap();
                let c = check_properties(&r);
                assert!(c.all(), "{name} {s:?} {corrupt:?}: {c:?}");
            }
        }
    }
}

#[test]
fn equivocating_source_cannot_split_correct_nodes() {
    let g = generate_regular_graph(&TopologySpec::new(10, 4, 1, 9)).unwrap();
    for name in ["bd", "bdopt", "latbdw", "bdw"] {
        let mut spec = RunSpec::new(&g, 1, preset(name));
        spec.plan = AdversaryPlan::uniform(&[0], Strategy::Equivocator);
        let r = run_spec(&spec, None).unwrap();
        let c = check_properties(&r);
        assert!(c.agreement && c.no_duplication && c.integrity, "{name}: {c:?}");
        let mut payloads: Vec<_> = r.deliveries.iter().map(|d| d.payload.clone()).collect();
        payloads.dedup();
        assert!(payloads.len() <= 1, "{name}: correct nodes delivered different payloads");
    }
}

#[test]
fn all_presets_deliver_the_same_payload_fault_free() {
    let g = generate_regular_graph(&TopologySpec::new(16, 5, 2, 1)).unwrap();
    let mut latencies = Vec::new();
    for name in ["bdopt", "lat", "bdw", "latbdw"] {
        let mut spec = RunSpec::new(&g, 2, preset(name));
        spec.payload_size = 1024;
        let r = run_spec(&spec, None).unwrap();
        assert!(r.all_correct_delivered(), "{name}");
        assert!(r.deliveries.iter().all(|d| d.payload == r.payload));
        assert_eq!(r.deliveries.len(), 16);
        latencies.push(r.brb_latency.unwrap());
    }
    assert!(latencies.iter().all(|l| *l > 0.0));
}

const SWEEP: &str = r#"
[topology]
n = [10]
k = [4]
f = [1]

[protocol]
configs = ["bdopt", "latbdw"]

[run]
payload_sizes = [16, 256]
repetitions = 2
seed = 40
"#;

#[test]
fn sweep_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.toml");
    std::fs::write(&path, SWEEP).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a.rows().count(), 2 * 2 * 2);
    assert!(a.rows().all(|r| r.latency_s.is_some() && r.total_bits > 0));
    let seeds: Vec<u64> = a.rows().map(|r| r.seed).collect();
    assert!(seeds.contains(&40) && seeds.contains(&41));
    let b = run_experiment(&ExperimentConfig::parse(SWEEP).unwrap()).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
}

#[test]
fn single_run_dumps_match_the_report() {
    let mut cfg = ExperimentConfig::parse(SWEEP).unwrap();
    cfg.protocol.configs = vec!["latbdw".into()];
    cfg.run.payload_sizes = vec![16];
    cfg.run.repetitions = 1;
    let mut trace = Vec::new();
    let mut paths = Vec::new();
    let r = run_single(&cfg, Some(&mut trace), Some(&mut paths)).unwrap();
    let trace = String::from_utf8(trace).unwrap();
    let bits: u64 = trace
        .lines()
        .map(|l| l.split_whitespace().last().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(bits, r.total_bits);
    let dumped = String::from_utf8(paths).unwrap();
    let mut nodes: Vec<u64> = dumped
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["node"].as_u64().unwrap())
        .collect();
    nodes.dedup();
    assert_eq!(nodes.len(), r.correct.len());
}
