use super::citest::{partial_from_cov, Partial};
use super::orient::CorrelationView;
use super::{CausalError, OrientedGraph, SampleMatrix};
use crate::graph::{CausalEdge, CausalGraph};
use crate::Scalar;

/// Weights each directed edge `u → v` by `|ρ(u, v | pa(v) \ {u})|`.
///
/// Conditioning parents that are collinear with earlier ones are dropped;
/// an endpoint fully explained by the remaining parents gets weight 0.
pub fn weight_edges<T: Scalar>(data: &SampleMatrix<T>, dag: &OrientedGraph) -> Result<CausalGraph, CausalError> {
    let view = CorrelationView::new(data);
    let mut edges = Vec::with_capacity(dag.edges.len());
    for e in &dag.edges {
        let others: Vec<usize> = dag.parents(e.to).into_iter().filter(|&p| p != e.from).collect();
        let z = view.independent_subset(&others);
        let mut idx = vec![e.from, e.to];
        idx.extend(z);
        let m = idx.len();
        let sub: Vec<T> = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| view.at(i, j))
            .collect();
        let w = match partial_from_cov(&sub, m) {
            Ok(Partial::Corr(r)) => r.abs().to_f64_lossy().min(1.0),
            Ok(Partial::Determined) | Err(CausalError::RankDeficient) => 0.0,
            Err(err) => return Err(err),
        };
        edges.push(CausalEdge {
            from: e.from,
            to: e.to,
            weight: if w.is_finite() { w } else { 0.0 },
            prior: e.prior,
        });
    }
    Ok(CausalGraph::new(dag.nodes.clone(), edges)?)
}
