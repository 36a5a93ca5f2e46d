//! Query DAG description.
//!
//! ```toml
//! version = 1
//!
//! [[node]]
//! name = "objdet"
//! options = [
//!   { name = "ResNet-18", latency_ms = 27.36, accuracy = 0.911 },
//!   { name = "ResNet-34", latency_ms = 41.05, accuracy = 0.929 },
//! ]
//!
//! [[node]]
//! name = "face"
//! options = [{ name = "SE-LResNet9E-IR", latency_ms = 17.38, accuracy = 0.955 }]
//!
//! [[edge]]
//! from = "objdet"
//! to = "face"
//! branch = "person"     # label of the output class that routes here
//! probability = 0.46    # share of queries taking this branch
//! ```
//!
//! A node with several outgoing edges is a fork: each query follows at most
//! one of them, chosen with the listed probabilities; any remaining
//! probability ends the query at the fork. A single unlabeled edge is always
//! taken.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DAG_VERSION: u32 = 1;
const MAX_PATHS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOption {
    pub name: String,
    pub latency_ms: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagNode {
    pub name: String,
    pub options: Vec<ModelOption>,
}

impl DagNode {
    /// Slowest option, used for proportional budget splits.
    pub fn max_latency(&self) -> f64 {
        self.options.iter().map(|o| o.latency_ms).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagFile {
    version: u32,
    #[serde(rename = "node")]
    nodes: Vec<DagNode>,
    #[serde(default, rename = "edge")]
    edges: Vec<DagEdge>,
}

/// Validated DAG with nodes addressed by index.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryDag {
    nodes: Vec<DagNode>,
    edges: Vec<DagEdge>,
    /// Per node: `(child, probability)` in declaration order.
    children: Vec<Vec<(usize, f64)>>,
    root: usize,
    topo: Vec<usize>,
    paths: Vec<Vec<usize>>,
}

impl QueryDag {
    pub fn new(nodes: Vec<DagNode>, edges: Vec<DagEdge>) -> Result<Self> {
        let bad = |r: String| Err(Error::invalid("query DAG", r));
        if nodes.is_empty() {
            return bad("no nodes".into());
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.name.is_empty() {
                return bad(format!("node {i} has an empty name"));
            }
            if nodes[..i].iter().any(|m| m.name == n.name) {
                return bad(format!("duplicate node `{}`", n.name));
            }
            if n.options.is_empty() {
                return bad(format!("node `{}` has no options", n.name));
            }
            for o in &n.options {
                if !(o.latency_ms > 0.0 && o.latency_ms.is_finite()) {
                    return bad(format!("option `{}` latency must be > 0", o.name));
                }
                if !(0.0..=1.0).contains(&o.accuracy) {
                    return bad(format!("option `{}` accuracy outside [0,1]", o.name));
                }
            }
        }
        let index = |name: &str| {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::UnknownNode(name.to_owned()))
        };
        let mut children: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes.len()];
        let mut indegree = vec![0usize; nodes.len()];
        for e in &edges {
            let (f, t) = (index(&e.from)?, index(&e.to)?);
            if children[f].iter().any(|c| c.0 == t) {
                return bad(format!("duplicate edge {} -> {}", e.from, e.to));
            }
            children[f].push((t, e.probability.unwrap_or(f64::NAN)));
            indegree[t] += 1;
        }
        for (i, ch) in children.iter_mut().enumerate() {
            if ch.len() == 1 && ch[0].1.is_nan() {
                ch[0].1 = 1.0;
            }
            if ch.iter().any(|c| c.1.is_nan()) {
                return bad(format!("fork `{}` needs a probability on every edge", nodes[i].name));
            }
            if ch.iter().any(|c| !(0.0..=1.0).contains(&c.1)) {
                return bad(format!("edge probability out of [0,1] at `{}`", nodes[i].name));
            }
            let total: f64 = ch.iter().map(|c| c.1).sum();
            if total > 1.0 + 1e-9 {
                return bad(format!("branch probabilities at `{}` sum to {total}", nodes[i].name));
            }
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let root = match roots[..] {
            [r] => r,
            [] => return bad("no root (cycle)".into()),
            _ => return bad(format!("{} roots; exactly one is required", roots.len())),
        };
        // Kahn's algorithm; leftover nodes lie on a cycle.
        let mut deg = indegree.clone();
        let mut topo = Vec::with_capacity(nodes.len());
        let mut ready = vec![root];
        while let Some(n) = ready.pop() {
            topo.push(n);
            for &(c, _) in children[n].iter().rev() {
                deg[c] -= 1;
                if deg[c] == 0 {
                    ready.push(c);
                }
            }
        }
        if topo.len() != nodes.len() {
            return bad("the edges contain a cycle".into());
        }
        let mut paths = Vec::new();
        let mut stack = vec![vec![root]];
        while let Some(p) = stack.pop() {
            let last = *p.last().unwrap();
            if children[last].is_empty() {
                paths.push(p);
                if paths.len() > MAX_PATHS {
                    return bad(format!("more than {MAX_PATHS} root-to-leaf paths"));
                }
                continue;
            }
            for &(c, _) in children[last].iter().rev() {
                let mut q = p.clone();
                q.push(c);
                stack.push(q);
            }
        }
        Ok(Self {
            nodes,
            edges,
            children,
            root,
            topo,
            paths,
        })
    }

    pub fn nodes(&self) -> &[DagNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &DagNode {
        &self.nodes[i]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::UnknownNode(name.to_owned()))
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, i: usize) -> &[(usize, f64)] {
        &self.children[i]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Every root-to-leaf path as node indices.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }
}

pub fn parse_dag(text: &str) -> Result<QueryDag> {
    let file: DagFile = crate::textfmt::toml_value(text, "dag")?;
    if file.version != DAG_VERSION {
        return Err(Error::invalid("query DAG", format!("unsupported version {}", file.version)));
    }
    QueryDag::new(file.nodes, file.edges)
}

pub fn write_dag(dag: &QueryDag) -> String {
    toml::to_string(&DagFile {
        version: DAG_VERSION,
        nodes: dag.nodes.clone(),
        edges: dag.edges.clone(),
    })
    .expect("DAGs serialize")
}

/// Object detection feeding face or vehicle recognition; latencies and
/// accuracies of the published model menu, with 46% of queries routed to
/// faces and 45% to vehicles.
pub fn traffic_dag() -> QueryDag {
    let opt = |name: &str, latency_ms, accuracy| ModelOption {
        name: name.to_owned(),
        latency_ms,
        accuracy,
    };
    let nodes = vec![
        DagNode {
            name: "objdet".into(),
            options: vec![
                opt("ResNet-18", 27.36, 0.911),
                opt("ResNet-34", 41.05, 0.929),
                opt("ResNet-50", 54.5, 0.941),
            ],
        },
        DagNode {
            name: "face".into(),
            options: vec![
                opt("SE-LResNet9E-IR", 17.38, 0.955),
                opt("SE-LResNet18E-IR", 36.75, 0.976),
                opt("SE-LResNet50E-IR", 58.34, 0.981),
                opt("SE-LResNet101E-IR", 110.32, 0.991),
            ],
        },
        DagNode {
            name: "vehicle".into(),
            options: vec![
                opt("ResNet-9", 16.14, 0.902),
                opt("ResNet-18", 23.68, 0.918),
                opt("ResNet-50", 54.12, 0.926),
                opt("ResNet-101", 111.42, 0.934),
            ],
        },
    ];
    let edge = |to: &str, branch: &str, p| DagEdge {
        from: "objdet".into(),
        to: to.into(),
        branch: Some(branch.into()),
        probability: Some(p),
    };
    QueryDag::new(nodes, vec![edge("face", "person", 0.46), edge("vehicle", "vehicle", 0.45)])
        .expect("fixture DAG is valid")
}
