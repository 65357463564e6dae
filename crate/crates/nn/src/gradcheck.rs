use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::param::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Total entries to check, spread evenly over trainable parameters.
    pub min_samples: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            min_samples: 200,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub groups: Vec<GroupReport>,
    /// Frozen parameters that nonetheless received a gradient.
    pub frozen_with_grad: Vec<String>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must leave the gradients of the current parameters in the
/// model (after zeroing them); `loss` only evaluates. Each trainable
/// parameter tensor is its own group and gets at least one probe.
pub fn gradient_check<M, G, L>(model: &mut M, mut loss_and_grad: G, mut loss: L, cfg: &GradCheckConfig) -> GradCheckReport
where
    M: Module<f64>,
    G: FnMut(&mut M) -> f64,
    L: FnMut(&M) -> f64,
{
    model.zero_grad();
    loss_and_grad(model);
    let snapshot: Vec<(String, bool, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.trainable, p.grad.data().to_vec()))
        .collect();
    let frozen_with_grad = snapshot
        .iter()
        .filter(|(_, t, g)| !t && g.iter().any(|x| *x != 0.0))
        .map(|(n, _, _)| n.clone())
        .collect();
    let trainable: Vec<usize> = (0..snapshot.len()).filter(|&i| snapshot[i].1).collect();
    let per_group = cfg.min_samples.div_ceil(trainable.len().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut groups = Vec::new();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for &pi in &trainable {
        let numel = snapshot[pi].2.len();
        let k = per_group.min(numel);
        let mut g = GroupReport {
            name: snapshot[pi].0.clone(),
            checked: k,
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
        };
        for idx in sample(&mut rng, numel, k).into_iter() {
            let orig = model.params()[pi].value.data()[idx];
            model.params_mut()[pi].value.data_mut()[idx] = orig + cfg.h;
            let lp = loss(model);
            model.params_mut()[pi].value.data_mut()[idx] = orig - cfg.h;
            let lm = loss(model);
            model.params_mut()[pi].value.data_mut()[idx] = orig;
            let numeric = (lp - lm) / (2.0 * cfg.h);
            let analytic = snapshot[pi].2[idx];
            let e = relative_error(analytic, numeric, cfg.floor);
            g.max_rel_err = g.max_rel_err.max(e);
            g.max_abs_grad = g.max_abs_grad.max(analytic.abs());
        }
        checked += k;
        worst = worst.max(g.max_rel_err);
        groups.push(g);
    }
    GradCheckReport {
        max_rel_err: worst,
        checked,
        groups,
        frozen_with_grad,
    }
}
