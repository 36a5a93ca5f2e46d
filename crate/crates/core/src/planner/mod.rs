//! Latency-budget planning over query DAGs, with incremental replanning
//! when a node finishes under its budget.

mod dag;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::textfmt::{self, Provenance};
use crate::{Error, Result};

pub use dag::{parse_dag, traffic_dag, write_dag, DagEdge, DagNode, ModelOption, QueryDag, DAG_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Every node on a path gets the same share.
    Equal,
    /// Shares follow each node's slowest option.
    Proportional,
}

/// Latency budget per node, indexed like the DAG's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialBudgets {
    pub budgets: Vec<f64>,
}

impl PartialBudgets {
    pub fn get(&self, dag: &QueryDag, name: &str) -> Result<f64> {
        Ok(self.budgets[dag.index_of(name)?])
    }
}

/// Shares of `amount` for the nodes of `path` under `policy`.
fn split(dag: &QueryDag, path: &[usize], amount: f64, policy: SplitPolicy) -> Vec<f64> {
    match policy {
        SplitPolicy::Equal => vec![amount / path.len() as f64; path.len()],
        SplitPolicy::Proportional => {
            let total: f64 = path.iter().map(|&n| dag.node(n).max_latency()).sum();
            path.iter().map(|&n| amount * dag.node(n).max_latency() / total).collect()
        }
    }
}

/// Splits the SLO along every root-to-leaf path; a node on several paths
/// keeps the smallest of its shares.
pub fn compute_budgets(dag: &QueryDag, slo_ms: f64, policy: SplitPolicy) -> Result<PartialBudgets> {
    if !(slo_ms > 0.0 && slo_ms.is_finite()) {
        return Err(Error::invalid("SLO", slo_ms.to_string()));
    }
    let mut budgets = vec![f64::INFINITY; dag.nodes().len()];
    for path in dag.paths() {
        for (&n, share) in path.iter().zip(split(dag, path, slo_ms, policy)) {
            budgets[n] = budgets[n].min(share);
        }
    }
    Ok(PartialBudgets { budgets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub option: ModelOption,
    /// No option fit the budget; the fastest one was returned.
    pub slo_risk: bool,
}

/// Most accurate option within `budget_ms` (ties to the faster one);
/// otherwise the fastest option, flagged.
pub fn pick_best_model(node: &DagNode, budget_ms: f64) -> Result<Pick> {
    if node.options.is_empty() {
        return Err(Error::Empty("option list"));
    }
    let fits = node
        .options
        .iter()
        .enumerate()
        .filter(|(_, o)| o.latency_ms <= budget_ms)
        .max_by(|(_, a), (_, b)| {
            a.accuracy
                .total_cmp(&b.accuracy)
                .then(b.latency_ms.total_cmp(&a.latency_ms))
        });
    let (index, slo_risk) = match fits {
        Some((i, _)) => (i, false),
        None => {
            let i = node
                .options
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.latency_ms.total_cmp(&b.latency_ms))
                .unwrap()
                .0;
            (i, true)
        }
    };
    Ok(Pick {
        index,
        option: node.options[index].clone(),
        slo_risk,
    })
}

fn redistribute(
    budgets: &PartialBudgets,
    dag: &QueryDag,
    completed: usize,
    observed_ms: f64,
    policy: SplitPolicy,
) -> (PartialBudgets, f64) {
    let saved = (budgets.budgets[completed] - observed_ms).max(0.0);
    let mut out = budgets.clone();
    if saved == 0.0 {
        return (out, 0.0);
    }
    let mut suffixes: Vec<&[usize]> = dag
        .paths()
        .iter()
        .filter_map(|p| p.iter().position(|&n| n == completed).map(|k| &p[k + 1..]))
        .filter(|s| !s.is_empty())
        .collect();
    suffixes.sort();
    suffixes.dedup();
    let mut bonus = vec![f64::INFINITY; dag.nodes().len()];
    for s in suffixes {
        for (&n, share) in s.iter().zip(split(dag, s, saved, policy)) {
            bonus[n] = bonus[n].min(share);
        }
    }
    for (b, extra) in out.budgets.iter_mut().zip(bonus) {
        if extra.is_finite() {
            *b += extra;
        }
    }
    (out, saved)
}

/// Hands the time `completed` saved against its budget to the nodes still
/// ahead of it. Returns the new budgets and the saved amount.
pub fn on_execution_complete(
    budgets: &PartialBudgets,
    dag: &QueryDag,
    completed: &str,
    observed_ms: f64,
    policy: SplitPolicy,
) -> Result<(PartialBudgets, f64)> {
    let n = dag.index_of(completed)?;
    if !(observed_ms >= 0.0 && observed_ms.is_finite()) {
        return Err(Error::invalid("observed latency", observed_ms.to_string()));
    }
    Ok(redistribute(budgets, dag, n, observed_ms, policy))
}

/// Observed execution time of a node running `option`, given a uniform draw.
pub trait LatencyOracle {
    fn observe(&self, node: usize, option: &ModelOption, u: f64) -> f64;
}

/// Every model takes exactly its profiled latency.
pub struct FixedLatency;

impl LatencyOracle for FixedLatency {
    fn observe(&self, _node: usize, option: &ModelOption, _u: f64) -> f64 {
        option.latency_ms
    }
}

/// A cache-equipped node answers early with some probability.
pub struct CacheHitLatency {
    pub node: usize,
    pub hit_probability: f64,
    pub hit_latency_ms: f64,
}

impl LatencyOracle for CacheHitLatency {
    fn observe(&self, node: usize, option: &ModelOption, u: f64) -> f64 {
        if node == self.node && u < self.hit_probability {
            self.hit_latency_ms.min(option.latency_ms)
        } else {
            option.latency_ms
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Step {
    pub node: String,
    pub option: String,
    pub budget_ms: f64,
    pub observed_ms: f64,
    pub saved_ms: f64,
    pub slo_risk: bool,
    pub correct: bool,
    pub budgets_after: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub steps: Vec<Step>,
    pub total_latency_ms: f64,
    pub correct: bool,
    pub slo_violated: bool,
    pub slo_risk: bool,
}

/// Draws per node, in this order: branch choice, latency, correctness.
/// Replanning on and off see the same numbers for the same query seed.
fn draws(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect()
}

pub fn run_query(
    dag: &QueryDag,
    slo_ms: f64,
    policy: SplitPolicy,
    oracle: &dyn LatencyOracle,
    replan: bool,
    seed: u64,
) -> Result<QueryOutcome> {
    let u = draws(dag.nodes().len(), seed);
    let mut budgets = compute_budgets(dag, slo_ms, policy)?;
    let mut steps = Vec::new();
    let mut total = 0.0;
    let mut correct = true;
    let mut node = Some(dag.root());
    while let Some(n) = node {
        let budget = budgets.budgets[n];
        let pick = pick_best_model(dag.node(n), budget)?;
        let observed = oracle.observe(n, &pick.option, u[n][1]);
        let ok = u[n][2] < pick.option.accuracy;
        correct &= ok;
        total += observed;
        let saved = if replan {
            let (next, saved) = redistribute(&budgets, dag, n, observed, policy);
            budgets = next;
            saved
        } else {
            0.0
        };
        steps.push(Step {
            node: dag.node(n).name.clone(),
            option: pick.option.name.clone(),
            budget_ms: budget,
            observed_ms: observed,
            saved_ms: saved,
            slo_risk: pick.slo_risk,
            correct: ok,
            budgets_after: budgets.budgets.clone(),
        });
        node = None;
        let mut acc = 0.0;
        for &(c, p) in dag.children(n) {
            acc += p;
            if u[n][0] < acc {
                node = Some(c);
                break;
            }
        }
    }
    Ok(QueryOutcome {
        slo_violated: total > slo_ms + 1e-9,
        slo_risk: steps.iter().any(|s| s.slo_risk),
        steps,
        total_latency_ms: total,
        correct,
    })
}

pub fn query_seed(seed: u64, query: usize) -> u64 {
    seed ^ (query as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub slo_ms: f64,
    pub replan: bool,
    pub queries: usize,
    pub mean_accuracy: f64,
    pub mean_latency_ms: f64,
    pub slo_violations: usize,
    pub slo_risk_queries: usize,
}

pub fn monte_carlo(
    dag: &QueryDag,
    slo_ms: f64,
    policy: SplitPolicy,
    oracle: &dyn LatencyOracle,
    replan: bool,
    queries: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if queries == 0 {
        return Err(Error::invalid("Monte Carlo", "zero queries"));
    }
    let (mut correct, mut latency, mut violations, mut risk) = (0usize, 0.0, 0usize, 0usize);
    for q in 0..queries {
        let o = run_query(dag, slo_ms, policy, oracle, replan, query_seed(seed, q))?;
        correct += usize::from(o.correct);
        latency += o.total_latency_ms;
        violations += usize::from(o.slo_violated);
        risk += usize::from(o.slo_risk);
    }
    Ok(MonteCarloSummary {
        slo_ms,
        replan,
        queries,
        mean_accuracy: correct as f64 / queries as f64,
        mean_latency_ms: latency / queries as f64,
        slo_violations: violations,
        slo_risk_queries: risk,
    })
}

/// Per-query audit log: one row per executed node.
///
/// ```text
/// # cachenet-audit v1
/// query,slo_ms,replan,node,option,budget_ms,observed_ms,saved_ms,slo_risk,correct,budgets_after
/// 0,80,true,objdet,ResNet-18,40,20,20,false,true,objdet=40;face=60;vehicle=60
/// ```
pub fn write_audit(dag: &QueryDag, rows: &[(usize, f64, bool, QueryOutcome)], prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "audit", 1, prov);
    out.push_str("query,slo_ms,replan,node,option,budget_ms,observed_ms,saved_ms,slo_risk,correct,budgets_after\n");
    for (q, slo, replan, o) in rows {
        for s in &o.steps {
            let after: Vec<String> = dag
                .nodes()
                .iter()
                .zip(&s.budgets_after)
                .map(|(n, b)| format!("{}={b}", n.name))
                .collect();
            let _ = writeln!(
                out,
                "{q},{slo},{replan},{},{},{},{},{},{},{},{}",
                s.node,
                s.option,
                s.budget_ms,
                s.observed_ms,
                s.saved_ms,
                s.slo_risk,
                s.correct,
                after.join(";")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(lat: &[f64]) -> QueryDag {
        let nodes: Vec<DagNode> = lat
            .iter()
            .enumerate()
            .map(|(i, &l)| DagNode {
                name: format!("n{i}"),
                options: vec![ModelOption {
                    name: "m".into(),
                    latency_ms: l,
                    accuracy: 0.9,
                }],
            })
            .collect();
        let edges = (1..lat.len())
            .map(|i| DagEdge {
                from: format!("n{}", i - 1),
                to: format!("n{i}"),
                branch: None,
                probability: None,
            })
            .collect();
        QueryDag::new(nodes, edges).unwrap()
    }

    #[test]
    fn equal_traffic_budgets() {
        let b = compute_budgets(&traffic_dag(), 80.0, SplitPolicy::Equal).unwrap();
        assert_eq!(b.budgets, vec![40.0; 3]);
    }

    #[test]
    fn proportional_chain() {
        let b = compute_budgets(&chain(&[54.5, 110.32]), 80.0, SplitPolicy::Proportional).unwrap();
        let oracle = [80.0 * 54.5 / 164.82, 80.0 * 110.32 / 164.82];
        assert!((b.budgets[0] - oracle[0]).abs() < 1e-12 && (b.budgets[1] - oracle[1]).abs() < 1e-12);
        assert!((b.budgets[0] - 26.45).abs() < 0.01 && (b.budgets[1] - 53.55).abs() < 0.01);
    }

    #[test]
    fn single_node() {
        for p in [SplitPolicy::Equal, SplitPolicy::Proportional] {
            assert_eq!(compute_budgets(&chain(&[5.0]), 33.0, p).unwrap().budgets, vec![33.0]);
        }
        assert!(compute_budgets(&chain(&[5.0]), 0.0, SplitPolicy::Equal).is_err());
    }

    #[test]
    fn picks() {
        let d = traffic_dag();
        assert_eq!(pick_best_model(d.node(0), 40.0).unwrap().option.name, "ResNet-18");
        assert_eq!(pick_best_model(d.node(1), 60.0).unwrap().option.name, "SE-LResNet50E-IR");
        let p = pick_best_model(d.node(1), 5.0).unwrap();
        assert!(p.slo_risk);
        assert_eq!(p.option.name, "SE-LResNet9E-IR");
    }

    #[test]
    fn pick_ties_go_to_faster() {
        let node = DagNode {
            name: "n".into(),
            options: vec![
                ModelOption {
                    name: "slow".into(),
                    latency_ms: 10.0,
                    accuracy: 0.9,
                },
                ModelOption {
                    name: "fast".into(),
                    latency_ms: 5.0,
                    accuracy: 0.9,
                },
            ],
        };
        assert_eq!(pick_best_model(&node, 20.0).unwrap().option.name, "fast");
    }

    #[test]
    fn redistribution() {
        let d = traffic_dag();
        let b = compute_budgets(&d, 80.0, SplitPolicy::Equal).unwrap();
        let (after, saved) = on_execution_complete(&b, &d, "objdet", 20.0, SplitPolicy::Equal).unwrap();
        assert_eq!(saved, 20.0);
        assert_eq!(after.budgets, vec![40.0, 60.0, 60.0]);
        let (same, saved) = on_execution_complete(&b, &d, "objdet", 40.0, SplitPolicy::Equal).unwrap();
        assert_eq!((same, saved), (b.clone(), 0.0));
        assert!(matches!(
            on_execution_complete(&b, &d, "nope", 1.0, SplitPolicy::Equal),
            Err(Error::UnknownNode(_))
        ));

        let c = chain(&[10.0, 20.0, 60.0]);
        let b = PartialBudgets {
            budgets: vec![18.0, 30.0, 30.0],
        };
        let (after, _) = on_execution_complete(&b, &c, "n0", 10.0, SplitPolicy::Proportional).unwrap();
        assert_eq!(after.budgets, vec![18.0, 32.0, 36.0]);
    }

    #[test]
    fn zero_savings_plans_match() {
        // Options that exactly fill their budgets leave nothing to move.
        let nodes = vec![
            DagNode {
                name: "a".into(),
                options: vec![ModelOption {
                    name: "a1".into(),
                    latency_ms: 40.0,
                    accuracy: 0.9,
                }],
            },
            DagNode {
                name: "b".into(),
                options: vec![ModelOption {
                    name: "b1".into(),
                    latency_ms: 40.0,
                    accuracy: 0.9,
                }],
            },
        ];
        let edges = vec![DagEdge {
            from: "a".into(),
            to: "b".into(),
            branch: None,
            probability: None,
        }];
        let d = QueryDag::new(nodes, edges).unwrap();
        for seed in 0..20 {
            let on = run_query(&d, 80.0, SplitPolicy::Equal, &FixedLatency, true, seed).unwrap();
            let off = run_query(&d, 80.0, SplitPolicy::Equal, &FixedLatency, false, seed).unwrap();
            let names = |o: &QueryOutcome| o.steps.iter().map(|s| s.option.clone()).collect::<Vec<_>>();
            assert_eq!(names(&on), names(&off));
        }
    }
}
