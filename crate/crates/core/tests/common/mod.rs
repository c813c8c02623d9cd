#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdmrac::bnn::{elbo_loss_with_noise, Activation, BayesianNetwork, InitConfig, Noise};

pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the analytic ELBO gradient of a 2-20-20-1 network with central
/// differences over every `mu` and `rho` entry, noise held fixed.
pub fn elbo_gradient_check(activation: Activation, seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = InitConfig {
        mu_std: 0.5,
        hidden_activation: activation,
        ..InitConfig::default()
    };
    let net = BayesianNetwork::<f64>::init(&[2, 20, 20, 1], &cfg, &mut rng).unwrap();
    let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..32)
        .map(|_| {
            let x: Vec<f64> = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = vec![x[0].sin() + 0.5 * x[1]];
            (x, y)
        })
        .collect();
    let noise: Vec<Noise<f64>> = (0..2).map(|_| net.sample_noise(&mut rng)).collect();
    let kl_weight = 1.0 / 32.0;
    let (_, grad) = elbo_loss_with_noise(&net, &batch, &noise, kl_weight).unwrap();
    let loss_at = |n: &BayesianNetwork<f64>| elbo_loss_with_noise(n, &batch, &noise, kl_weight).unwrap().0;

    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    for li in 0..net.layers().len() {
        for which in 0..2 {
            let len = net.layers()[li].mu.as_slice().len();
            for idx in 0..len {
                let perturbed = |d: f64| {
                    let mut n = net.clone();
                    let l = &mut n.layers_mut()[li];
                    let p = if which == 0 { &mut l.mu } else { &mut l.rho };
                    p.as_mut_slice()[idx] += d;
                    loss_at(&n)
                };
                let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let g = &grad.layers[li];
                let analytic = if which == 0 { g.mu.as_slice()[idx] } else { g.rho.as_slice()[idx] };
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                max_rel_error = max_rel_error.max(rel);
                checked += 1;
            }
        }
    }
    GradCheck { max_rel_error, checked }
}

use std::sync::Arc;

use sdmrac::bnn::{PosteriorKind, VariationalLayer};
use sdmrac::harness::{Experiment, ExperimentConfig, Mode, ReferenceSignal, RetrainTrigger};
use sdmrac::linalg::Matrix;

/// Known ideal weights of [`synthetic_experiment`].
pub const W_STAR: [f64; 2] = [1.0, -0.55];

/// A plant whose uncertainty is exactly `W*ᵀ φ(x)` for a frozen
/// zero-variance network `φ(x) = tanh(x + b)`, under a two-tone reference.
pub fn synthetic_experiment(horizon: f64) -> Experiment<f64> {
    let mut cfg = ExperimentConfig::default();
    cfg.mode = Mode::Dmrac;
    cfg.horizon = horizon;
    cfg.retrain.trigger = RetrainTrigger::Never;
    cfg.bnn.hidden = vec![2];
    cfg.reference.signal = ReferenceSignal::Sines {
        amplitudes_deg: vec![30.0, 18.0],
        frequencies_hz: vec![0.3, 0.7],
    };
    let mut exp = Experiment::<f64>::from_config(&cfg).unwrap();
    let net = BayesianNetwork::from_layers(
        vec![
            VariationalLayer::from_means(Matrix::identity(2), vec![0.3, -0.3], Activation::Tanh),
            VariationalLayer::from_means(Matrix::zeros(1, 2), vec![0.0], Activation::Identity),
        ],
        1.0,
        0.1,
        PosteriorKind::PointEstimate,
    )
    .unwrap();
    let frozen = net.clone();
    exp.plant = exp.plant.replace_uncertainty(Arc::new(move |x: &[f64]| {
        let phi = frozen.mean_weight_features(x);
        vec![phi.iter().zip(W_STAR).map(|(p, w)| p * w).sum()]
    }));
    exp.network = net;
    exp
}

pub fn w_star_norm() -> f64 {
    W_STAR.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Least-squares line through `(t, y)`: `(slope, R²)`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}
