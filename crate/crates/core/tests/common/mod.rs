//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use destripe_core::graph::build_spectral_graph;
use destripe_core::network::{Checkpoint, DestripeNetwork};
use destripe_core::pipeline::{detect, AxisChoice};
use destripe_core::training::TrainingSetup;
use destripe_core::unfold::{softplus_inv, Problem};
use destripe_core::{RunConfig, StripeAxis, Volume};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random field plus a strong vertical stripe at 5 cycles per slice.
pub fn toy_volume(d: usize, n: usize, stripe_amp: f64, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..6)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let noise = Array3::from_shape_simple_fn((d, n, n), || rng.random_range(-0.02..0.02));
    let data = Array3::from_shape_fn((d, n, n), |(z, y, x)| {
        let t = std::f64::consts::TAU / n as f64;
        let smooth = 0.5
            + 0.2 * (t * x as f64 + phases[0]).sin() * (t * y as f64 + phases[1]).cos()
            + 0.05 * z as f64;
        let stripe = stripe_amp * (5.0 * t * x as f64 + phases[2]).cos();
        smooth + stripe + noise[[z, y, x]]
    });
    Volume::from_array(data).unwrap()
}

pub fn toy_setup(v: &Volume, cfg: &RunConfig) -> TrainingSetup {
    let det = detect(v, cfg, AxisChoice::Given(StripeAxis::Vertical)).unwrap();
    assert!(det.field.masked_count() > 0);
    let graph =
        build_spectral_graph(&det.spectrum, &det.field, &det.annuli, cfg, cfg.rng_seed).unwrap();
    let problem = Problem::new(v.data.clone(), det.spectrum, graph, cfg);
    TrainingSetup::new(problem, det.field, det.annuli)
}

pub fn small_cfg() -> RunConfig {
    RunConfig {
        neighbors_n: 4,
        layers_l: 2,
        hidden_dims: vec![3],
        unroll_k: 3,
        ..RunConfig::default()
    }
}

/// Random parameters everywhere, including the final layers.
pub fn random_params(cfg: &RunConfig, seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = DestripeNetwork::config_widths(cfg);
    Checkpoint {
        nets: (0..cfg.unroll_k)
            .map(|_| DestripeNetwork::with_widths(&widths, &mut rng, false))
            .collect(),
        mu_raw: (0..cfg.unroll_k)
            .map(|_| softplus_inv(rng.random_range(0.5..2.0)))
            .collect(),
        alpha_raw: (0..cfg.unroll_k)
            .map(|_| softplus_inv(rng.random_range(0.02..0.2)))
            .collect(),
    }
}
