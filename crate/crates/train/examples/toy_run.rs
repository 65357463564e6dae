//! Trains the default model on generated plant days and compares held-out
//! imputation error with mean filling.
//!
//! `cargo run --release -p cmts-train --example toy_run -- [days] [epochs]`

use std::sync::Arc;
use std::time::Instant;

use cmts_core::metrics::mae;
use cmts_core::{discover, generate_dataset, instance_normalize, CiTestConfig, PlantConfig, SampleMatrix};
use cmts_model::{CmModel, ModelConfig, Tokenizer};
use cmts_train::{build_pooled, global_means, mean_fill, predict_sample, train, SampleConfig, TaskSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_days = args.first().copied().unwrap_or(200);
    let epochs = args.get(1).copied().unwrap_or(50);
    let t0 = Instant::now();
    let plant = PlantConfig::default();
    let ds = generate_dataset(&plant, n_days + 20).unwrap();
    let raw: Vec<_> = ds.days.iter().map(|d| d.series.clone()).collect();
    let graph = discover(&SampleMatrix::pooled(&raw[..n_days]), &ds.prior, &CiTestConfig::default()).unwrap();
    let graph = Arc::new(graph);
    let normed: Vec<_> = raw.iter().map(|d| instance_normalize(d).unwrap().0.cast::<f32>()).collect();
    let tasks = [
        TaskSpec::Imputation { mu: 16.0, sigma: 4.0, segments: 1 },
        TaskSpec::Forecast { horizon: 24 },
        TaskSpec::Superres { factor: 3 },
    ];
    let scfg = SampleConfig { l_fix: 96, ..Default::default() };
    let tok = Tokenizer::default();
    let train_set = build_pooled(&normed[..n_days], &tasks, graph.clone(), &tok, &scfg, 1).unwrap();
    let test_set = build_pooled(&normed[n_days..], &tasks[..1], graph, &tok, &scfg, 2).unwrap();
    let mut model: CmModel<f32> = CmModel::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let cfg = TrainConfig { epochs, ..Default::default() };
    let hist = train(&mut model, &train_set, &cfg, |e| {
        eprintln!("epoch {:3} acc {:.5} mask {:.5} total {:.5} ({:.1}s)", e.epoch, e.acc, e.mask, e.total, t0.elapsed().as_secs_f64())
    })
    .unwrap();
    let means = global_means(&train_set);
    let (mut m_model, mut m_mean) = (0.0, 0.0);
    for s in &test_set {
        let p = predict_sample(&model, s).unwrap();
        let b = mean_fill(s, &means).unwrap();
        m_model += mae(p.values(), s.target.values(), Some(s.mask.values())).unwrap() as f64 / test_set.len() as f64;
        m_mean += mae(b.values(), s.target.values(), Some(s.mask.values())).unwrap() as f64 / test_set.len() as f64;
    }
    println!("first {:.5} last {:.5}", hist[0].total, hist.last().unwrap().total);
    println!("masked MAE model {m_model:.5} mean-fill {m_mean:.5} in {:.1}s", t0.elapsed().as_secs_f64());
}
