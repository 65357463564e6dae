//! Dense graph propagation over the variables of one time step.
//!
//! Every variable is a node whose feature is its (masked) scalar value. The
//! node state is
//!
//! `h_i = tanh(a_i·w_a + d_i·w_d + x_i·w_s + b)`
//!
//! where `a_i` and `d_i` are row-normalized weighted sums of the ancestor and
//! descendant features. The `F × d_g` node states are flattened and mapped
//! linearly to `D_causal`.

use cmts_core::graph::reachability;
use cmts_core::{CausalGraph, Scalar};
use cmts_nn::linear::LinearCache;
use cmts_nn::{Linear, Module, NnError, Param, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    /// Node state width `d_g`.
    pub node_dim: usize,
    /// Output width; `None` means half the hidden size.
    pub causal_dim: Option<usize>,
    pub use_edge_weights: bool,
    /// Restrict propagation to parents and children.
    pub direct_only: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            node_dim: 16,
            causal_dim: None,
            use_edge_weights: true,
            direct_only: false,
        }
    }
}

impl DgpConfig {
    pub fn causal_dim_for(&self, hidden: usize) -> usize {
        self.causal_dim.unwrap_or((hidden / 2).max(1))
    }
}

/// Row-normalized ancestor and descendant operators, `F × F` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub anc: Vec<f64>,
    pub desc: Vec<f64>,
}

impl Adjacency {
    /// `anc[i][j]` is the strength of `j` as an ancestor of `i`. With edge
    /// weights, an indirect link takes the strongest path product.
    pub fn from_graph(graph: &CausalGraph, cfg: &DgpConfig) -> Self {
        let n = graph.n_nodes();
        let mut direct = vec![0.0f64; n * n];
        for e in graph.edges() {
            direct[e.from * n + e.to] = if cfg.use_edge_weights { e.weight } else { 1.0 };
        }
        let mut reach = direct.clone();
        if !cfg.direct_only {
            let closure = reachability(n, &graph.edge_pairs());
            // longest-path style relaxation; the graph is acyclic so n rounds suffice
            for _ in 0..n {
                for u in 0..n {
                    for k in 0..n {
                        let uk = reach[u * n + k];
                        if uk == 0.0 {
                            continue;
                        }
                        for v in 0..n {
                            let cand = uk * direct[k * n + v];
                            if cand > reach[u * n + v] {
                                reach[u * n + v] = cand;
                            }
                        }
                    }
                }
            }
            if !cfg.use_edge_weights {
                for (r, c) in reach.iter_mut().zip(closure.iter().flatten()) {
                    *r = if *c { 1.0 } else { 0.0 };
                }
            }
            for i in 0..n {
                reach[i * n + i] = 0.0;
            }
        }
        let mut anc = vec![0.0; n * n];
        let mut desc = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                // u reaches v: u is an ancestor of v, v a descendant of u
                anc[v * n + u] = reach[u * n + v];
                desc[u * n + v] = reach[u * n + v];
            }
        }
        row_normalize(&mut anc, n);
        row_normalize(&mut desc, n);
        Self { n, anc, desc }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            anc: vec![0.0; n * n],
            desc: vec![0.0; n * n],
        }
    }
}

fn row_normalize(m: &mut [f64], n: usize) {
    for i in 0..n {
        let row = &mut m[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dgp<T> {
    pub w_anc: Param<T>,
    pub w_desc: Param<T>,
    pub w_self: Param<T>,
    pub bias: Param<T>,
    pub out: Linear<T>,
    n_vars: usize,
    node_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DgpCache<T> {
    a: Vec<T>,
    d: Vec<T>,
    x: Vec<T>,
    h: Vec<T>,
    out: LinearCache<T>,
    rows: usize,
}

impl<T: Scalar> Dgp<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, n_vars: usize, cfg: &DgpConfig, causal_dim: usize, rng: &mut R) -> Self {
        let g = cfg.node_dim;
        Self {
            w_anc: Param::normal(format!("{name}.w_anc"), &[g], 1.0, rng),
            w_desc: Param::normal(format!("{name}.w_desc"), &[g], 1.0, rng),
            w_self: Param::normal(format!("{name}.w_self"), &[g], 1.0, rng),
            bias: Param::zeros(format!("{name}.bias"), &[g]),
            out: Linear::new(&format!("{name}.out"), n_vars * g, causal_dim, true, rng),
            n_vars,
            node_dim: g,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    /// `x` is `L × F`; returns `L × D_causal`.
    pub fn forward(&self, x: &Tensor<T>, adj: &Adjacency) -> Result<(Tensor<T>, DgpCache<T>), NnError> {
        let (rows, f) = x.dims2();
        if f != self.n_vars || adj.n != f {
            return Err(NnError::Shape {
                expected: vec![rows, self.n_vars],
                got: vec![rows, f.min(adj.n).max(f)],
            });
        }
        let g = self.node_dim;
        let xs = x.data();
        let anc: Vec<T> = adj.anc.iter().map(|&v| T::of(v)).collect();
        let desc: Vec<T> = adj.desc.iter().map(|&v| T::of(v)).collect();
        let mut a = vec![T::zero(); rows * f];
        let mut d = vec![T::zero(); rows * f];
        for t in 0..rows {
            let xt = &xs[t * f..(t + 1) * f];
            for i in 0..f {
                let mut sa = T::zero();
                let mut sd = T::zero();
                for j in 0..f {
                    sa += anc[i * f + j] * xt[j];
                    sd += desc[i * f + j] * xt[j];
                }
                a[t * f + i] = sa;
                d[t * f + i] = sd;
            }
        }
        let (wa, wd, ws, b) = (
            self.w_anc.value.data(),
            self.w_desc.value.data(),
            self.w_self.value.data(),
            self.bias.value.data(),
        );
        let mut h = vec![T::zero(); rows * f * g];
        for t in 0..rows {
            for i in 0..f {
                let (ai, di, xi) = (a[t * f + i], d[t * f + i], xs[t * f + i]);
                let base = (t * f + i) * g;
                for k in 0..g {
                    h[base + k] = (ai * wa[k] + di * wd[k] + xi * ws[k] + b[k]).tanh();
                }
            }
        }
        let flat = Tensor::from_vec(&[rows, f * g], h.clone())?;
        let (y, out) = self.out.forward(&flat)?;
        Ok((
            y,
            DgpCache {
                a,
                d,
                x: xs.to_vec(),
                h,
                out,
                rows,
            },
        ))
    }

    pub fn apply(&self, x: &Tensor<T>, adj: &Adjacency) -> Result<Tensor<T>, NnError> {
        Ok(self.forward(x, adj)?.0)
    }

    /// Node states `L × F × d_g` for inspection.
    pub fn node_states(&self, x: &Tensor<T>, adj: &Adjacency) -> Result<Vec<T>, NnError> {
        Ok(self.forward(x, adj)?.1.h)
    }

    /// Accumulates parameter gradients. The input is data, so no input
    /// gradient is produced.
    pub fn backward(&mut self, cache: &DgpCache<T>, dy: &Tensor<T>) {
        let dh = self.out.backward(&cache.out, dy);
        let f = self.n_vars;
        let g = self.node_dim;
        let mut ga = vec![T::zero(); g];
        let mut gd = vec![T::zero(); g];
        let mut gs = vec![T::zero(); g];
        let mut gb = vec![T::zero(); g];
        let dhd = dh.data();
        for t in 0..cache.rows {
            for i in 0..f {
                let idx = t * f + i;
                let (ai, di, xi) = (cache.a[idx], cache.d[idx], cache.x[idx]);
                for k in 0..g {
                    let hv = cache.h[idx * g + k];
                    let dp = dhd[idx * g + k] * (T::one() - hv * hv);
                    ga[k] += dp * ai;
                    gd[k] += dp * di;
                    gs[k] += dp * xi;
                    gb[k] += dp;
                }
            }
        }
        self.w_anc.accumulate_all(&ga);
        self.w_desc.accumulate_all(&gd);
        self.w_self.accumulate_all(&gs);
        self.bias.accumulate_all(&gb);
    }
}

impl<T: Scalar> Module<T> for Dgp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.w_anc, &self.w_desc, &self.w_self, &self.bias];
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.w_anc, &mut self.w_desc, &mut self.w_self, &mut self.bias];
        v.extend(self.out.params_mut());
        v
    }
}
