//! BRB property checking over families of fixtures and adversary plans.

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryPlan, Strategy};
use crate::config::ModificationConfig;
use crate::error::{SimError, TopologyError};
use crate::sim::{check_properties, run_spec, LinkModel, PropertyCheck, RunSpec};
use crate::topology::{generate_regular_graph, Graph, TopologySpec};
use crate::types::ProcessId;

/// A generated graph with the parameters it was built for.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub seed: u64,
    pub graph: Graph,
}

/// Every feasible `(n, k, f)` with `k` in `{2f+1, 2f+2}`. Combinations with
/// no `k`-regular graph (odd `n*k`, `k >= n`) or no connected one are skipped.
pub fn small_fixtures(ns: &[usize], fs: &[usize], seed: u64) -> Vec<Fixture> {
    let mut out = Vec::new();
    for &f in fs {
        for &n in ns {
            for k in [2 * f + 1, 2 * f + 2] {
                match generate_regular_graph(&TopologySpec::new(n, k, f, seed)) {
                    Ok(graph) => out.push(Fixture { n, k, f, seed, graph }),
                    Err(TopologyError::InfeasibleSpec(_) | TopologyError::GenerationExhausted { .. }) => {}
                    Err(e) => panic!("unexpected topology error: {e}"),
                }
            }
        }
    }
    out
}

/// All corrupt sets of size at most `f` over `0..n`, each node taking
/// `strategy`. Always starts with the empty plan.
pub fn exhaustive_plans(n: usize, f: usize, strategy: Strategy) -> Vec<AdversaryPlan> {
    let mut plans = vec![AdversaryPlan::none()];
    let mut current: Vec<Vec<ProcessId>> = vec![Vec::new()];
    for _ in 0..f {
        let mut next = Vec::new();
        for set in &current {
            let start = set.last().map_or(0, |&l| l + 1);
            for p in start..n as ProcessId {
                let mut s = set.clone();
                s.push(p);
                plans.push(AdversaryPlan::uniform(&s, strategy));
                next.push(s);
            }
        }
        current = next;
    }
    plans
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub n: usize,
    pub k: usize,
    pub f: usize,
    pub preset: String,
    pub plan: AdversaryPlan,
    pub seed: u64,
    pub check: Option<PropertyCheck>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub runs: usize,
    pub violations: Vec<Violation>,
}

/// Runs every fixture against every preset and plan and checks the four
/// BRB properties for the correct processes. Process 0 is the source.
pub fn run_suite(
    fixtures: &[Fixture],
    presets: &[(&str, ModificationConfig)],
    strategies: &[Strategy],
    link: LinkModel,
    payload_size: usize,
) -> SuiteSummary {
    let mut summary = SuiteSummary::default();
    for fx in fixtures {
        let mut plans = vec![AdversaryPlan::none()];
        if fx.f > 0 {
            for &s in strategies {
                plans.extend(exhaustive_plans(fx.n, fx.f, s).into_iter().skip(1));
            }
        }
        for (name, cfg) in presets {
            for plan in &plans {
                let mut spec = RunSpec::new(&fx.graph, fx.f, *cfg);
                spec.plan = plan.clone();
                spec.link = link;
                spec.payload_size = payload_size;
                spec.seed = fx.seed;
                summary.runs += 1;
                let violation = |check: Option<PropertyCheck>, error: Option<String>| Violation {
                    n: fx.n,
                    k: fx.k,
                    f: fx.f,
                    preset: name.to_string(),
                    plan: plan.clone(),
                    seed: fx.seed,
                    check,
                    error,
                };
                match run_spec(&spec, None) {
                    Ok(r) => {
                        let c = check_properties(&r);
                        if !c.all() {
                            summary.violations.push(violation(Some(c), None));
                        }
                    }
                    Err(e @ SimError::NonQuiescent(_)) | Err(e @ SimError::Protocol(_)) => {
                        summary.violations.push(violation(None, Some(e.to_string())));
                    }
                    Err(e) => summary.violations.push(violation(None, Some(e.to_string()))),
                }
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_enumeration_counts() {
        assert_eq!(exhaustive_plans(4, 0, Strategy::Silent).len(), 1);
        assert_eq!(exhaustive_plans(4, 1, Strategy::Silent).len(), 5);
        // 1 + 7 + 21
        assert_eq!(exhaustive_plans(7, 2, Strategy::Mutator).len(), 29);
        let plans = exhaustive_plans(5, 2, Strategy::Replayer);
        assert!(plans.iter().all(|p| p.corrupt.len() <= 2));
    }

    #[test]
    fn small_fixture_grid_skips_impossible_degrees() {
        let fx = small_fixtures(&[4, 7, 10], &[0, 1], 0);
        let got: Vec<(usize, usize, usize)> = fx.iter().map(|x| (x.n, x.k, x.f)).collect();
        assert_eq!(
            got,
            vec![(4, 2, 0), (7, 2, 0), (10, 2, 0), (4, 3, 1), (7, 4, 1), (10, 3, 1), (10, 4, 1)]
        );
    }

    #[test]
    fn tiny_suite_passes() {
        let fx = small_fixtures(&[4], &[1], 0);
        let presets = [("bdopt", ModificationConfig::preset("bdopt").unwrap())];
        let s = run_suite(&fx, &presets, &Strategy::ALL, LinkModel::default(), 16);
        assert_eq!(s.runs, 21);
        assert!(s.violations.is_empty(), "{:?}", s.violations);
    }
}
