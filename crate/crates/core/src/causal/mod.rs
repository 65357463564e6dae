//! Physics-statistics causal discovery.
//!
//! The pipeline prunes a complete undirected graph with Fisher-Z conditional
//! independence tests (prior edges are never tested), orients every surviving
//! non-prior edge by comparing regression R² in both directions, and weights
//! each directed edge by the absolute partial correlation given the target's
//! other parents.

mod citest;
mod orient;
mod skeleton;
mod weight;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CausalGraph, GraphError, PriorGraph};
use crate::series::TimeSeriesMatrix;
use crate::Scalar;

pub use citest::{fisher_z_test, partial_correlation, CiVerdict};
pub use orient::{orient_edges, OrientedGraph};
pub use skeleton::{discover_skeleton, Skeleton};
pub use weight::weight_edges;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("need more than {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("variable indices must be distinct and outside the conditioning set")]
    BadIndices,
    #[error("variable index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("conditioning set design matrix is rank deficient")]
    RankDeficient,
    #[error("data has {data} columns but the prior graph has {prior} nodes")]
    NodeCount { data: usize, prior: usize },
    #[error("invalid test configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Fisher-Z test settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiTestConfig {
    pub alpha: f64,
    pub max_cond_set: usize,
    /// |r| is clamped to this before the z-transform.
    pub r_clamp: f64,
}

impl Default for CiTestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_cond_set: 2,
            r_clamp: 1.0 - 1e-7,
        }
    }
}

impl CiTestConfig {
    pub fn validate(&self) -> Result<(), CausalError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CausalError::BadConfig(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.r_clamp > 0.0 && self.r_clamp < 1.0) {
            return Err(CausalError::BadConfig(format!("r_clamp {} not in (0, 1)", self.r_clamp)));
        }
        Ok(())
    }
}

/// `n × p` observations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix<T> {
    data: Vec<T>,
    n: usize,
    p: usize,
    names: Vec<String>,
}

impl<T: Scalar> SampleMatrix<T> {
    pub fn new(names: Vec<String>, data: Vec<T>, n: usize) -> Self {
        let p = names.len();
        assert_eq!(data.len(), n * p, "sample buffer must be n x p");
        Self { data, n, p, names }
    }

    pub fn from_columns(names: Vec<String>, columns: &[Vec<T>]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n), "columns must share a length");
        let p = columns.len();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for c in columns {
                data.push(c[i]);
            }
        }
        Self::new(names, data, n)
    }

    /// Pools several series of the same variables into one sample matrix,
    /// treating every time step as an observation.
    pub fn pooled(days: &[TimeSeriesMatrix<T>]) -> Self {
        let names = days.first().map(|d| d.variable_names().to_vec()).unwrap_or_default();
        let p = names.len();
        let n: usize = days.iter().map(|d| d.len()).sum();
        let mut data = Vec::with_capacity(n * p);
        for d in days {
            assert_eq!(d.variable_names(), names.as_slice(), "pooled days must share variables");
            for t in 0..d.len() {
                for v in 0..p {
                    data.push(d.get(v, t));
                }
            }
        }
        Self::new(names, data, n)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.p + col]
    }

    pub fn column(&self, col: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, col)).collect()
    }

    /// Sample covariance (denominator `n`) of the listed columns, row-major.
    pub fn covariance_of(&self, cols: &[usize]) -> Vec<T> {
        let k = cols.len();
        let nt = T::of(self.n as f64);
        let means: Vec<T> = cols
            .iter()
            .map(|&c| (0..self.n).map(|i| self.get(i, c)).sum::<T>() / nt)
            .collect();
        let mut cov = vec![T::zero(); k * k];
        let mut centered = vec![T::zero(); k];
        for i in 0..self.n {
            for (j, &c) in cols.iter().enumerate() {
                centered[j] = self.get(i, c) - means[j];
            }
            for a in 0..k {
                for b in a..k {
                    cov[a * k + b] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                let v = cov[a * k + b] / nt;
                cov[a * k + b] = v;
                cov[b * k + a] = v;
            }
        }
        cov
    }

    /// Full `p × p` covariance.
    pub fn covariance(&self) -> Vec<T> {
        let cols: Vec<usize> = (0..self.p).collect();
        self.covariance_of(&cols)
    }
}

/// Full discovery: skeleton, orientation, weighting. The result is always a
/// DAG that contains every prior edge with its prior direction.
pub fn discover<T: Scalar>(
    data: &SampleMatrix<T>,
    prior: &PriorGraph,
    cfg: &CiTestConfig,
) -> Result<CausalGraph, CausalError> {
    if data.n_vars() != prior.nodes().len() {
        return Err(CausalError::NodeCount {
            data: data.n_vars(),
            prior: prior.nodes().len(),
        });
    }
    let skeleton = discover_skeleton(data, prior, cfg)?;
    let dag = orient_edges(data, &skeleton, prior)?;
    let graph = weight_edges(data, &dag)?;
    debug_assert!(prior
        .edges()
        .iter()
        .all(|&(u, v)| graph.edge(u, v).is_some_and(|e| e.prior)));
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_matches_definition() {
        let m = SampleMatrix::from_columns(
            vec!["a".into(), "b".into()],
            &[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 1.0, 4.0, 3.0]],
        );
        let c: Vec<f64> = m.covariance();
        assert!((c[0] - 1.25).abs() < 1e-15);
        assert!((c[1] - 0.75).abs() < 1e-15);
        assert_eq!(c[1], c[2]);
    }

    #[test]
    fn single_variable_gives_empty_graph() {
        let m = SampleMatrix::from_columns(vec!["a".into()], &[vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.7]]);
        let prior = PriorGraph::empty(vec!["a".into()]).unwrap();
        let g = discover(&m, &prior, &CiTestConfig::default()).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = CiTestConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(CiTestConfig::default().validate().is_ok());
    }
}
