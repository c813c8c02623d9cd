//! Closed-form KL to the Gaussian prior and the negative ELBO with its
//! reparameterization gradient.

use rand::Rng;

use super::{BayesianNetwork, Noise, PosteriorKind, WeightSample};
use crate::error::BnnError;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Gradient with the same layout as the variational parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient<T> {
    pub mu: Matrix<T>,
    pub rho: Matrix<T>,
    pub bias_mu: Vec<T>,
    pub bias_rho: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub layers: Vec<LayerGradient<T>>,
}

impl<T: Real> Gradient<T> {
    pub fn zeros_like(net: &BayesianNetwork<T>) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    mu: Matrix::zeros(l.outputs(), l.inputs()),
                    rho: Matrix::zeros(l.outputs(), l.inputs()),
                    bias_mu: vec![T::zero(); l.outputs()],
                    bias_rho: vec![T::zero(); l.outputs()],
                })
                .collect(),
        }
    }

    /// All entries in the order `mu, rho, bias_mu, bias_rho` per layer.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.mu.as_slice());
            v.extend_from_slice(l.rho.as_slice());
            v.extend_from_slice(&l.bias_mu);
            v.extend_from_slice(&l.bias_rho);
        }
        v
    }

    pub fn norm(&self) -> T {
        crate::scalar::norm(&self.flatten())
    }

    pub fn is_finite(&self) -> bool {
        crate::scalar::all_finite(&self.flatten())
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.mu.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.rho.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.bias_mu.iter_mut().for_each(|v| *v *= s);
            l.bias_rho.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// `KL(N(mu, s²) ‖ N(0, p²))` for one parameter.
#[inline]
fn kl_term<T: Real>(mu: T, s: T, p: T) -> T {
    (p / s).ln() + (s * s + mu * mu) / (T::lit(2.0) * p * p) - T::lit(0.5)
}

/// Sum over every sampled weight and bias of the KL from the posterior factor
/// to the prior `N(0, prior_std²)`. Zero for a point estimate.
pub fn kl_divergence<T: Real>(net: &BayesianNetwork<T>) -> T {
    if net.kind() == PosteriorKind::PointEstimate {
        return T::zero();
    }
    let p = net.prior_std();
    let mut kl = T::zero();
    for l in net.layers() {
        for (&mu, &rho) in l.mu.as_slice().iter().zip(l.rho.as_slice()) {
            kl += kl_term(mu, rho.softplus(), p);
        }
        if l.use_bias {
            for (&mu, &rho) in l.bias_mu.iter().zip(&l.bias_rho) {
                kl += kl_term(mu, rho.softplus(), p);
            }
        }
    }
    kl
}

fn add_kl_gradient<T: Real>(net: &BayesianNetwork<T>, weight: T, grad: &mut Gradient<T>) {
    let p2 = net.prior_std() * net.prior_std();
    let dmu = |mu: T| weight * mu / p2;
    let drho = |rho: T| {
        let s = rho.softplus();
        weight * (s / p2 - T::one() / s) * rho.sigmoid()
    };
    for (l, g) in net.layers().iter().zip(&mut grad.layers) {
        for (idx, (&mu, &rho)) in l.mu.as_slice().iter().zip(l.rho.as_slice()).enumerate() {
            g.mu.as_mut_slice()[idx] += dmu(mu);
            g.rho.as_mut_slice()[idx] += drho(rho);
        }
        if l.use_bias {
            for i in 0..l.outputs() {
                g.bias_mu[i] += dmu(l.bias_mu[i]);
                g.bias_rho[i] += drho(l.bias_rho[i]);
            }
        }
    }
}

/// Gaussian negative log-likelihood of `batch` under one weight realization,
/// accumulating `∂NLL/∂θ` into `dtheta`.
fn nll_and_backprop<T: Real>(
    net: &BayesianNetwork<T>,
    theta: &WeightSample<T>,
    batch: &[(Vec<T>, Vec<T>)],
    dtheta: &mut [(Matrix<T>, Vec<T>)],
) -> T {
    let sigma = net.likelihood_std();
    let inv_var = T::one() / (sigma * sigma);
    let log_norm = (sigma * T::lit((2.0 * std::f64::consts::PI).sqrt())).ln();
    let layers = net.layers();
    let mut nll = T::zero();
    // pre-activations and activations per layer
    let mut zs: Vec<Vec<T>> = Vec::with_capacity(layers.len());
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(layers.len() + 1);
    for (x, y) in batch {
        zs.clear();
        acts.clear();
        acts.push(x.clone());
        for (l, (w, b)) in layers.iter().zip(&theta.layers) {
            let mut z = w.mul_vec(acts.last().expect("input pushed"));
            z.iter_mut().zip(b).for_each(|(zi, &bi)| *zi += bi);
            let a: Vec<T> = z.iter().map(|&zi| l.activation.apply(zi)).collect();
            zs.push(z);
            acts.push(a);
        }
        let out = acts.last().expect("output layer");
        let mut delta: Vec<T> = out
            .iter()
            .zip(y)
            .map(|(&o, &t)| {
                let r = o - t;
                nll += r * r * inv_var * T::lit(0.5) + log_norm;
                r * inv_var
            })
            .collect();
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            for (d, (&z, &a)) in delta.iter_mut().zip(zs[li].iter().zip(&acts[li + 1])) {
                *d *= l.activation.derivative(z, a);
            }
            let input = &acts[li];
            let (gw, gb) = &mut dtheta[li];
            for (i, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[i] += d;
                for (j, &aj) in input.iter().enumerate() {
                    gw[(i, j)] += d * aj;
                }
            }
            if li > 0 {
                delta = theta.layers[li].0.tr_mul_vec(&delta);
            }
        }
    }
    nll
}

/// Negative ELBO and its gradient for fixed reparameterization noise:
///
/// `(1/S) Σ_s NLL(batch | θ_s) + kl_weight · KL(q ‖ prior)`
///
/// For a point estimate the noise is ignored and the KL term vanishes, leaving
/// the (scaled) squared loss.
pub fn elbo_loss_with_noise<T: Real>(
    net: &BayesianNetwork<T>,
    batch: &[(Vec<T>, Vec<T>)],
    noise: &[Noise<T>],
    kl_weight: T,
) -> Result<(T, Gradient<T>), BnnError> {
    if batch.is_empty() {
        return Err(BnnError::EmptyBatch);
    }
    if noise.is_empty() {
        return Err(BnnError::TooFewDraws { needed: 1, got: 0 });
    }
    for (x, y) in batch {
        if x.len() != net.input_dim() || y.len() != net.output_dim() {
            return Err(BnnError::Shape(format!(
                "sample ({}, {}) does not fit a {} -> {} network",
                x.len(),
                y.len(),
                net.input_dim(),
                net.output_dim()
            )));
        }
    }
    let point = net.kind() == PosteriorKind::PointEstimate;
    let draws: &[Noise<T>] = if point { &noise[..1] } else { noise };
    let inv_s = T::one() / T::lit(draws.len() as f64);
    let mut grad = Gradient::zeros_like(net);
    let mut loss = T::zero();
    for eps in draws {
        let theta = net.weights_from_noise(eps);
        let mut dtheta: Vec<(Matrix<T>, Vec<T>)> = net
            .layers()
            .iter()
            .map(|l| (Matrix::zeros(l.outputs(), l.inputs()), vec![T::zero(); l.outputs()]))
            .collect();
        loss += nll_and_backprop(net, &theta, batch, &mut dtheta) * inv_s;
        for ((l, g), ((gw, gb), (ew, eb))) in net
            .layers()
            .iter()
            .zip(&mut grad.layers)
            .zip(dtheta.iter().zip(&eps.layers))
        {
            for idx in 0..gw.as_slice().len() {
                let d = gw.as_slice()[idx] * inv_s;
                g.mu.as_mut_slice()[idx] += d;
                if !point {
                    g.rho.as_mut_slice()[idx] += d * ew.as_slice()[idx] * l.rho.as_slice()[idx].sigmoid();
                }
            }
            if l.use_bias {
                for i in 0..gb.len() {
                    let d = gb[i] * inv_s;
                    g.bias_mu[i] += d;
                    if !point {
                        g.bias_rho[i] += d * eb[i] * l.bias_rho[i].sigmoid();
                    }
                }
            }
        }
    }
    if !point {
        loss += kl_weight * kl_divergence(net);
        add_kl_gradient(net, kl_weight, &mut grad);
    }
    Ok((loss, grad))
}

/// Negative ELBO estimated with `draws` fresh noise samples.
pub fn elbo_loss<T: Real, R: Rng + ?Sized>(
    net: &BayesianNetwork<T>,
    batch: &[(Vec<T>, Vec<T>)],
    draws: usize,
    kl_weight: T,
    rng: &mut R,
) -> Result<T, BnnError> {
    if draws == 0 {
        return Err(BnnError::TooFewDraws { needed: 1, got: 0 });
    }
    let noise: Vec<Noise<T>> = (0..draws).map(|_| net.sample_noise(rng)).collect();
    elbo_loss_with_noise(net, batch, &noise, kl_weight).map(|(l, _)| l)
}
