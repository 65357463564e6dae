use std::time::Instant;

use cmts_core::causal::{discover, CiTestConfig, SampleMatrix};
use cmts_core::plant::{self, generate_dataset, PlantConfig};

fn recover(seed: u64) -> (cmts_core::CausalGraph, usize, bool) {
    let cfg = PlantConfig {
        seed,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, 20).unwrap();
    let series: Vec<_> = ds.days.iter().map(|d| d.series.clone()).collect();
    let data = SampleMatrix::pooled(&series);
    let g = discover(&data, &ds.prior, &CiTestConfig::default()).unwrap();
    let truth = plant::plant_ground_truth().unwrap();
    let spurious = g.edges().iter().filter(|e| !e.prior && !truth.links(e.from, e.to)).count();
    let total = g.node_index(plant::TOTAL_POWER).unwrap();
    let storage = g.node_index(plant::STORAGE_POWER).unwrap();
    (g.clone(), spurious, g.links(total, storage))
}

#[test]
fn twenty_day_plant_recovers_structure() {
    let start = Instant::now();
    let mut spurious = 0;
    for seed in 0..20 {
        let (g, s, ts) = recover(seed);
        let prior = plant::plant_prior().unwrap();
        for &(u, v) in prior.edges() {
            assert!(g.edge(u, v).is_some_and(|e| e.prior), "seed {seed}: prior edge lost");
        }
        assert!(ts, "seed {seed}: total-storage edge missing");
        spurious += s;
    }
    let mean = spurious as f64 / 20.0;
    eprintln!("mean spurious edges {mean}, {:?}", start.elapsed());
    assert!(mean <= 1.0);
}
