use std::collections::BTreeSet;

use super::citest::{partial_from_cov, verdict_from_partial};
use super::{CausalError, CiTestConfig, SampleMatrix};
use crate::graph::PriorGraph;
use crate::Scalar;

/// Undirected graph left after independence pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Skeleton {
    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Self { n, edges }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        Self { n, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Edges as `(min, max)` pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        (0..self.n).filter(|&v| v != u && self.contains(u, v)).collect()
    }

    fn remove(&mut self, u: usize, v: usize) {
        self.edges.remove(&(u.min(v), u.max(v)));
    }
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= pool.len() {
        rec(pool, k, 0, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// PC-stable pruning. For each level `k = 0..=max_cond_set`, neighbor sets
/// are frozen at the start of the level; every non-prior edge `(u, v)` is
/// tested against each size-`k` subset of `adj(u) \ {v}` and of
/// `adj(v) \ {u}` and removed at the first independence verdict.
pub fn discover_skeleton<T: Scalar>(
    data: &SampleMatrix<T>,
    prior: &PriorGraph,
    cfg: &CiTestConfig,
) -> Result<Skeleton, CausalError> {
    cfg.validate()?;
    let p = data.n_vars();
    if prior.nodes().len() != p {
        return Err(CausalError::NodeCount {
            data: p,
            prior: prior.nodes().len(),
        });
    }
    let n = data.n_samples();
    if p >= 2 && n < cfg.max_cond_set + 4 {
        return Err(CausalError::InsufficientSamples {
            needed: cfg.max_cond_set + 3,
            got: n,
        });
    }
    let cov = data.covariance();
    let sub_cov = |cols: &[usize]| -> Vec<T> {
        let cov = &cov;
        cols.iter()
            .flat_map(|&i| cols.iter().map(move |&j| cov[i * p + j]))
            .collect()
    };

    let mut skeleton = Skeleton::complete(p);
    for k in 0..=cfg.max_cond_set {
        let adjacency: Vec<Vec<usize>> = (0..p).map(|u| skeleton.neighbors(u)).collect();
        let testable = skeleton.edges().any(|(u, v)| {
            adjacency[u].len().saturating_sub(1) >= k || adjacency[v].len().saturating_sub(1) >= k
        });
        if !testable {
            break;
        }
        let mut removed = Vec::new();
        for (u, v) in skeleton.edges() {
            if prior.links(u, v) {
                continue;
            }
            let from_u: Vec<usize> = adjacency[u].iter().copied().filter(|&w| w != v).collect();
            let from_v: Vec<usize> = adjacency[v].iter().copied().filter(|&w| w != u).collect();
            let mut tried: BTreeSet<Vec<usize>> = BTreeSet::new();
            let mut independent = false;
            'sets: for pool in [&from_u, &from_v] {
                for z in combinations(pool, k) {
                    if !tried.insert(z.clone()) {
                        continue;
                    }
                    let cols: Vec<usize> = [u, v].into_iter().chain(z.iter().copied()).collect();
                    let partial = partial_from_cov(&sub_cov(&cols), cols.len());
                    let verdict = verdict_from_partial(partial, n, k, cfg)?;
                    if verdict.independent {
                        independent = true;
                        break 'sets;
                    }
                }
            }
            if independent {
                removed.push((u, v));
            }
        }
        for (u, v) in removed {
            skeleton.remove(u, v);
        }
    }
    Ok(skeleton)
}
