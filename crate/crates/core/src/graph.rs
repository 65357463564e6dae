//! Directed graphs over named variables and their JSON form:
//! `{"nodes":[...], "edges":[{"from","to","weight","prior"}]}`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("edge weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("graph nodes {graph:?} do not match variables {variables:?}")]
    NodeMismatch {
        graph: Vec<String>,
        variables: Vec<String>,
    },
    #[error("malformed graph JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default)]
    pub prior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeJson>,
}

/// Kahn's algorithm; `None` when the edge set has a cycle. Ties resolve by
/// node index, so the order is deterministic.
pub fn topological_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        out[u].push(v);
        indeg[v] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &v in &out[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(v);
                ready.sort_unstable_by(|a, b| b.cmp(a));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// `reach[i][j]` is true when a directed path of length ≥ 1 leads from `i` to `j`.
pub fn reachability(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for &(u, v) in edges {
        reach[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let row_k = reach[k].clone();
                for (r, &via) in reach[i].iter_mut().zip(&row_k) {
                    *r |= via;
                }
            }
        }
    }
    reach
}

fn index_nodes(nodes: &[String]) -> Result<HashMap<&str, usize>, GraphError> {
    let mut idx = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if idx.insert(n.as_str(), i).is_some() {
            return Err(GraphError::DuplicateNode(n.clone()));
        }
    }
    Ok(idx)
}

/// Physics-derived directed acyclic graph of known causal edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorGraph {
    nodes: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl PriorGraph {
    pub fn new(nodes: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        index_nodes(&nodes)?;
        for &(u, v) in &edges {
            if u >= nodes.len() || v >= nodes.len() {
                return Err(GraphError::UnknownNode(format!("#{}", u.max(v))));
            }
            if u == v {
                return Err(GraphError::SelfLoop(nodes[u].clone()));
            }
        }
        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        if topological_order(nodes.len(), &edges).is_none() {
            return Err(GraphError::Cyclic);
        }
        Ok(Self { nodes, edges })
    }

    /// Graph with no edges.
    pub fn empty(nodes: Vec<String>) -> Result<Self, GraphError> {
        Self::new(nodes, Vec::new())
    }

    /// Builds from `(from, to)` name pairs.
    pub fn from_named(nodes: Vec<String>, edges: &[(&str, &str)]) -> Result<Self, GraphError> {
        let idx = index_nodes(&nodes)?;
        let mut ids = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let u = *idx.get(a).ok_or_else(|| GraphError::UnknownNode(a.to_string()))?;
            let v = *idx.get(b).ok_or_else(|| GraphError::UnknownNode(b.to_string()))?;
            ids.push((u, v));
        }
        Self::new(nodes, ids)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// True when `u → v` or `v → u` is a prior edge.
    pub fn links(&self, u: usize, v: usize) -> bool {
        self.edges.iter().any(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u))
    }

    pub fn direction(&self, u: usize, v: usize) -> Option<(usize, usize)> {
        self.edges
            .iter()
            .copied()
            .find(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u))
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| EdgeJson {
                    from: self.nodes[u].clone(),
                    to: self.nodes[v].clone(),
                    weight: None,
                    prior: true,
                })
                .collect(),
        }
    }

    /// Reads a prior graph; weights, if present, are ignored.
    pub fn from_json(g: &GraphJson) -> Result<Self, GraphError> {
        let pairs: Vec<(&str, &str)> = g.edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
        Self::from_named(g.nodes.clone(), &pairs)
    }

    pub fn from_json_str(s: &str) -> Result<Self, GraphError> {
        let g: GraphJson = serde_json::from_str(s).map_err(|e| GraphError::Json(e.to_string()))?;
        Self::from_json(&g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalEdge {
    pub from: usize,
    pub to: usize,
    /// Absolute partial correlation, in `[0, 1]`.
    pub weight: f64,
    pub prior: bool,
}

/// Weighted DAG produced by causal discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    nodes: Vec<String>,
    edges: Vec<CausalEdge>,
}

impl CausalGraph {
    pub fn new(nodes: Vec<String>, mut edges: Vec<CausalEdge>) -> Result<Self, GraphError> {
        index_nodes(&nodes)?;
        for e in &edges {
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(GraphError::UnknownNode(format!("#{}", e.from.max(e.to))));
            }
            if e.from == e.to {
                return Err(GraphError::SelfLoop(nodes[e.from].clone()));
            }
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(GraphError::BadWeight(e.weight));
            }
        }
        edges.sort_by_key(|e| (e.from, e.to));
        let pairs: Vec<_> = edges.iter().map(|e| (e.from, e.to)).collect();
        if topological_order(nodes.len(), &pairs).is_none() {
            return Err(GraphError::Cyclic);
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CausalEdge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.iter().any(|e| e.from == u && e.to == v)
    }

    pub fn links(&self, u: usize, v: usize) -> bool {
        self.has_edge(u, v) || self.has_edge(v, u)
    }

    pub fn edge(&self, u: usize, v: usize) -> Option<&CausalEdge> {
        self.edges.iter().find(|e| e.from == u && e.to == v)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Unordered adjacent pairs `(min, max)`.
    pub fn skeleton(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.from.min(e.to), e.from.max(e.to))).collect()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topological_order(self.nodes.len(), &self.edge_pairs()).expect("validated acyclic")
    }

    /// Errors unless the graph's nodes equal `names` in order.
    pub fn check_nodes(&self, names: &[String]) -> Result<(), GraphError> {
        if self.nodes != names {
            return Err(GraphError::NodeMismatch {
                graph: self.nodes.clone(),
                variables: names.to_vec(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    from: self.nodes[e.from].clone(),
                    to: self.nodes[e.to].clone(),
                    weight: Some(e.weight),
                    prior: e.prior,
                })
                .collect(),
        }
    }

    /// Missing weights read as 1.
    pub fn from_json(g: &GraphJson) -> Result<Self, GraphError> {
        let idx = index_nodes(&g.nodes)?;
        let mut edges = Vec::with_capacity(g.edges.len());
        for e in &g.edges {
            let from = *idx.get(e.from.as_str()).ok_or_else(|| GraphError::UnknownNode(e.from.clone()))?;
            let to = *idx.get(e.to.as_str()).ok_or_else(|| GraphError::UnknownNode(e.to.clone()))?;
            edges.push(CausalEdge {
                from,
                to,
                weight: e.weight.unwrap_or(1.0),
                prior: e.prior,
            });
        }
        Self::new(g.nodes.clone(), edges)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("graph JSON serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, GraphError> {
        let g: GraphJson = serde_json::from_str(s).map_err(|e| GraphError::Json(e.to_string()))?;
        Self::from_json(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prior_rejects_cycle_and_self_loop() {
        let n = names(&["a", "b", "c"]);
        assert_eq!(
            PriorGraph::from_named(n.clone(), &[("a", "b"), ("b", "c"), ("c", "a")]).unwrap_err(),
            GraphError::Cyclic
        );
        assert_eq!(
            PriorGraph::from_named(n.clone(), &[("a", "a")]).unwrap_err(),
            GraphError::SelfLoop("a".into())
        );
        assert!(matches!(
            PriorGraph::from_named(n, &[("a", "z")]),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn json_round_trip_and_weightless_prior() {
        let g = CausalGraph::new(
            names(&["x", "y"]),
            vec![CausalEdge {
                from: 0,
                to: 1,
                weight: 0.25,
                prior: true,
            }],
        )
        .unwrap();
        let back = CausalGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(back, g);

        let p = PriorGraph::from_named(names(&["x", "y"]), &[("x", "y")]).unwrap();
        let s = serde_json::to_string(&p.to_json()).unwrap();
        assert!(!s.contains("weight"));
        assert_eq!(PriorGraph::from_json_str(&s).unwrap(), p);
    }

    #[test]
    fn reachability_is_transitive() {
        let r = reachability(4, &[(0, 1), (1, 2)]);
        assert!(r[0][2] && r[0][1] && r[1][2]);
        assert!(!r[2][0] && !r[3][0] && !r[0][3]);
    }

    #[test]
    fn topo_order_deterministic() {
        assert_eq!(topological_order(4, &[(2, 0), (3, 1)]).unwrap(), vec![2, 0, 3, 1]);
        assert!(topological_order(2, &[(0, 1), (1, 0)]).is_none());
    }
}
