#![allow(dead_code)]

use algtd::alloop::ALConfig;
use algtd::config::ExperimentConfig;
use algtd::grid::{GridSize, Heatmap};
use rand::Rng;

/// A small but complete experiment: 12x12 grid, 60-sample pool, two cycles.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.world.grid = GridSize::new(12, 12);
    c.al = ALConfig {
        pool_size: 60,
        init_labeled: 10,
        budget: 20,
        cycles: 2,
        eval_set_size: 15,
        seeds: vec![3, 4],
        ..Default::default()
    };
    c.train.epochs_per_cycle = 4;
    c.train.eval_every = 2;
    c.train.hidden = 6;
    c
}

pub fn random_heatmap<R: Rng>(w: usize, h: usize, rng: &mut R) -> Heatmap {
    Heatmap::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}
