use super::{CausalError, SampleMatrix, Skeleton};
use crate::graph::{topological_order, PriorGraph};
use crate::linalg::{cholesky, cholesky_solve};
use crate::Scalar;

/// Two R² values closer than this count as a tie.
pub const R2_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedEdge {
    pub from: usize,
    pub to: usize,
    pub prior: bool,
    /// `|R²_uv − R²_vu|`; infinite for prior edges.
    pub margin: f64,
}

/// Directed acyclic graph produced by [`orient_edges`].
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<OrientedEdge>,
}

impl OrientedGraph {
    pub fn parents(&self, v: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self.edges.iter().filter(|e| e.to == v).map(|e| e.from).collect();
        p.sort_unstable();
        p
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        topological_order(self.nodes.len(), &self.pairs()).is_some()
    }
}

/// Correlation-scale covariance helper shared by orientation and weighting.
pub(crate) struct CorrelationView<T> {
    corr: Vec<T>,
    p: usize,
    constant: Vec<bool>,
}

impl<T: Scalar> CorrelationView<T> {
    pub(crate) fn new(data: &SampleMatrix<T>) -> Self {
        let p = data.n_vars();
        let cov = data.covariance();
        let sd: Vec<T> = (0..p).map(|i| cov[i * p + i].max(T::zero()).sqrt()).collect();
        let constant: Vec<bool> = sd.iter().map(|s| *s == T::zero()).collect();
        let mut corr = vec![T::zero(); p * p];
        for i in 0..p {
            for j in 0..p {
                corr[i * p + j] = if constant[i] || constant[j] {
                    if i == j {
                        T::one()
                    } else {
                        T::zero()
                    }
                } else {
                    cov[i * p + j] / (sd[i] * sd[j])
                };
            }
        }
        Self { corr, p, constant }
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> T {
        self.corr[i * self.p + j]
    }

    /// Drops predictors that are exact linear combinations of earlier ones
    /// (or constant); the remaining set spans the same column space.
    pub(crate) fn independent_subset(&self, cols: &[usize]) -> Vec<usize> {
        let tol = T::epsilon() * T::of(1e4);
        let mut kept: Vec<usize> = Vec::new();
        for &c in cols {
            if self.constant[c] {
                continue;
            }
            let mut trial = kept.clone();
            trial.push(c);
            let k = trial.len();
            let m: Vec<T> = trial
                .iter()
                .flat_map(|&i| trial.iter().map(move |&j| (i, j)))
                .map(|(i, j)| self.at(i, j))
                .collect();
            if cholesky(&m, k, tol).is_some() {
                kept = trial;
            }
        }
        kept
    }

    /// R² of the OLS regression of `target` on `predictors` (with intercept).
    pub(crate) fn r_squared(&self, target: usize, predictors: &[usize]) -> T {
        if self.constant[target] {
            return T::zero();
        }
        let preds = self.independent_subset(predictors);
        if preds.is_empty() {
            return T::zero();
        }
        let k = preds.len();
        let m: Vec<T> = preds
            .iter()
            .flat_map(|&i| preds.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.at(i, j))
            .collect();
        let l = cholesky(&m, k, T::zero()).expect("independent subset is positive definite");
        let c: Vec<T> = preds.iter().map(|&i| self.at(i, target)).collect();
        let w = cholesky_solve(&l, k, &c);
        let r2: T = c.iter().zip(&w).map(|(a, b)| *a * *b).sum();
        r2.max(T::zero()).min(T::one())
    }
}

/// R² when `source` (plus the target's other skeleton neighbors) predicts `target`.
pub(crate) fn predictive_r2<T: Scalar>(
    view: &CorrelationView<T>,
    skeleton: &Skeleton,
    source: usize,
    target: usize,
) -> T {
    let mut preds = vec![source];
    preds.extend(skeleton.neighbors(target).into_iter().filter(|&w| w != source));
    view.r_squared(target, &preds)
}

fn find_cycle(n: usize, edges: &[OrientedEdge]) -> Option<Vec<usize>> {
    // returns edge indices forming one directed cycle
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        out[e.from].push((e.to, i));
    }
    let mut state = vec![0u8; n];
    let mut stack_edges: Vec<usize> = Vec::new();
    fn dfs(
        u: usize,
        out: &[Vec<(usize, usize)>],
        edges: &[OrientedEdge],
        state: &mut [u8],
        stack_edges: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        state[u] = 1;
        for &(v, ei) in &out[u] {
            if state[v] == 1 {
                let mut cycle = vec![ei];
                for &se in stack_edges.iter().rev() {
                    cycle.push(se);
                    if edges[se].from == v {
                        break;
                    }
                }
                return Some(cycle);
            }
            if state[v] == 0 {
                stack_edges.push(ei);
                if let Some(c) = dfs(v, out, edges, state, stack_edges) {
                    return Some(c);
                }
                stack_edges.pop();
            }
        }
        state[u] = 2;
        None
    }
    for s in 0..n {
        if state[s] == 0 {
            if let Some(c) = dfs(s, &out, edges, &mut state, &mut stack_edges) {
                return Some(c);
            }
        }
    }
    None
}

fn creates_cycle(n: usize, edges: &[OrientedEdge], from: usize, to: usize) -> bool {
    // adding from -> to closes a cycle iff `to` already reaches `from`
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        out[e.from].push(e.to);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![to];
    while let Some(u) = stack.pop() {
        if u == from {
            return true;
        }
        if !seen[u] {
            seen[u] = true;
            stack.extend(out[u].iter().copied());
        }
    }
    false
}

/// Greedy acyclic orientation: edges are inserted by decreasing margin and
/// flipped only when their preferred direction would close a cycle.
fn greedy_acyclic(n: usize, edges: &[OrientedEdge]) -> Vec<OrientedEdge> {
    let mut order: Vec<&OrientedEdge> = edges.iter().collect();
    order.sort_by(|a, b| {
        b.prior
            .cmp(&a.prior)
            .then(b.margin.partial_cmp(&a.margin).unwrap_or(std::cmp::Ordering::Equal))
            .then((a.from.min(a.to), a.from.max(a.to)).cmp(&(b.from.min(b.to), b.from.max(b.to))))
    });
    let mut placed: Vec<OrientedEdge> = Vec::with_capacity(edges.len());
    for e in order {
        if !e.prior && creates_cycle(n, &placed, e.from, e.to) {
            placed.push(OrientedEdge {
                from: e.to,
                to: e.from,
                ..*e
            });
        } else {
            placed.push(*e);
        }
    }
    placed
}

/// Orients every skeleton edge. Prior edges keep their direction. Any other
/// edge `u – v` points from the endpoint with the higher predictive R² (the
/// target regressed on the source plus the target's other skeleton
/// neighbors). Ties within [`R2_TIE_EPS`] point from the lexicographically
/// smaller variable name. Cycles are broken by reversing the in-cycle
/// non-prior edge with the smallest R² margin until the graph is acyclic.
pub fn orient_edges<T: Scalar>(
    data: &SampleMatrix<T>,
    skeleton: &Skeleton,
    prior: &PriorGraph,
) -> Result<OrientedGraph, CausalError> {
    let p = data.n_vars();
    if skeleton.n_nodes() != p || prior.nodes().len() != p {
        return Err(CausalError::NodeCount {
            data: p,
            prior: prior.nodes().len(),
        });
    }
    let view = CorrelationView::new(data);
    let names = data.names();
    let mut edges = Vec::with_capacity(skeleton.n_edges());
    for (u, v) in skeleton.edges() {
        if let Some((from, to)) = prior.direction(u, v) {
            edges.push(OrientedEdge {
                from,
                to,
                prior: true,
                margin: f64::INFINITY,
            });
            continue;
        }
        let r2_uv = predictive_r2(&view, skeleton, u, v).to_f64_lossy();
        let r2_vu = predictive_r2(&view, skeleton, v, u).to_f64_lossy();
        let margin = (r2_uv - r2_vu).abs();
        let (from, to) = if margin <= R2_TIE_EPS {
            if names[u] <= names[v] {
                (u, v)
            } else {
                (v, u)
            }
        } else if r2_uv > r2_vu {
            (u, v)
        } else {
            (v, u)
        };
        edges.push(OrientedEdge {
            from,
            to,
            prior: false,
            margin,
        });
    }

    let mut reversed = vec![false; edges.len()];
    while let Some(cycle) = find_cycle(p, &edges) {
        let pick = cycle
            .iter()
            .copied()
            .filter(|&i| !edges[i].prior && !reversed[i])
            .min_by(|&a, &b| {
                edges[a]
                    .margin
                    .partial_cmp(&edges[b].margin)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        match pick {
            Some(i) => {
                let e = edges[i];
                edges[i] = OrientedEdge {
                    from: e.to,
                    to: e.from,
                    ..e
                };
                reversed[i] = true;
            }
            None => {
                edges = greedy_acyclic(p, &edges);
                break;
            }
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));
    let graph = OrientedGraph {
        nodes: names.to_vec(),
        edges,
    };
    debug_assert!(graph.is_acyclic());
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(from: usize, to: usize, margin: f64) -> OrientedEdge {
        OrientedEdge {
            from,
            to,
            prior: false,
            margin,
        }
    }

    #[test]
    fn cycle_detection() {
        let edges = vec![edge(0, 1, 0.5), edge(1, 2, 0.1), edge(2, 0, 0.3)];
        let mut c = find_cycle(3, &edges).unwrap();
        c.sort_unstable();
        assert_eq!(c, vec![0, 1, 2]);
        assert!(find_cycle(3, &edges[..2]).is_none());
    }

    #[test]
    fn greedy_never_cycles() {
        let edges = vec![edge(0, 1, 0.5), edge(1, 2, 0.4), edge(2, 0, 0.3)];
        let placed = greedy_acyclic(3, &edges);
        let pairs: Vec<_> = placed.iter().map(|e| (e.from, e.to)).collect();
        assert!(topological_order(3, &pairs).is_some());
        assert!(pairs.contains(&(0, 2)));
    }
}
