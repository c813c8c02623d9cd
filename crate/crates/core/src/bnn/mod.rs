//! Bayesian multilayer perceptron with a factorized Gaussian posterior over
//! every weight and bias.
//!
//! Each parameter `θ` has a mean `mu` and an unconstrained scale `rho`, with
//! `std = softplus(rho)`; draws use the reparameterization
//! `θ = mu + softplus(rho) · ε`, `ε ~ N(0, 1)`. The output of the penultimate
//! layer is the feature vector consumed by the adaptive controller; the final
//! layer is what the fast weights replace.
//!
//! A [`PosteriorKind::PointEstimate`] network ignores `rho` entirely and behaves
//! as an ordinary deterministic MLP. That is the deterministic-feature baseline.

mod checkpoint;
mod objective;
mod train;

pub use checkpoint::{Checkpoint, LayerCheckpoint};
pub use objective::{elbo_loss, elbo_loss_with_noise, kl_divergence, Gradient, LayerGradient};
pub use train::{train, NetworkVersion, TrainConfig, TrainReport};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::BnnError;
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative<T: Real>(self, z: T, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    #[default]
    Variational,
    /// Zero-variance weights, trained on squared loss without the KL term.
    PointEstimate,
}

/// One dense layer of variational parameters, `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VariationalLayer<T> {
    pub mu: Matrix<T>,
    pub rho: Matrix<T>,
    pub bias_mu: Vec<T>,
    pub bias_rho: Vec<T>,
    pub activation: Activation,
    /// Bias-free layers keep `bias_mu` at zero and never sample or train it.
    pub use_bias: bool,
}

impl<T: Real> VariationalLayer<T> {
    /// Deterministic layer: given means, `rho = -inf`.
    pub fn from_means(mu: Matrix<T>, bias: Vec<T>, activation: Activation) -> Self {
        let (o, i) = mu.shape();
        assert_eq!(bias.len(), o);
        Self {
            rho: Matrix::from_fn(o, i, |_, _| T::neg_infinity()),
            bias_rho: vec![T::neg_infinity(); o],
            mu,
            bias_mu: bias,
            activation,
            use_bias: true,
        }
    }

    pub fn inputs(&self) -> usize {
        self.mu.cols()
    }

    pub fn outputs(&self) -> usize {
        self.mu.rows()
    }

    pub fn weight_std(&self) -> Matrix<T> {
        Matrix::from_fn(self.outputs(), self.inputs(), |i, j| self.rho[(i, j)].softplus())
    }

    pub fn bias_std(&self) -> Vec<T> {
        self.bias_rho.iter().map(|r| r.softplus()).collect()
    }

    fn parameter_count(&self) -> usize {
        self.mu.as_slice().len() + if self.use_bias { self.bias_mu.len() } else { 0 }
    }

    fn is_finite(&self) -> bool {
        self.mu.is_finite() && crate::scalar::all_finite(&self.bias_mu)
    }
}

/// Initialization for [`BayesianNetwork::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Standard deviation of the initial posterior means.
    pub mu_std: f64,
    /// Initial `rho` for every parameter.
    pub rho: f64,
    pub prior_std: f64,
    pub likelihood_std: f64,
    pub hidden_activation: Activation,
    /// Give the output layer a bias term.
    pub output_bias: bool,
    pub kind: PosteriorKind,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mu_std: 0.1,
            rho: -3.0,
            prior_std: 1.0,
            likelihood_std: 0.1,
            hidden_activation: Activation::Tanh,
            output_bias: false,
            kind: PosteriorKind::Variational,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BayesianNetwork<T> {
    layers: Vec<VariationalLayer<T>>,
    prior_std: T,
    likelihood_std: T,
    kind: PosteriorKind,
}

/// A concrete weight realization `θ`, one `(W, b)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSample<T> {
    pub layers: Vec<(Matrix<T>, Vec<T>)>,
}

/// Standard-normal draws `ε` used to build a [`WeightSample`].
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<T> {
    pub layers: Vec<(Matrix<T>, Vec<T>)>,
}

/// Feature moments under the posterior, from Monte Carlo draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FeatureStats<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    /// Per-feature variance across weight draws.
    pub epistemic: Vec<T>,
    /// Likelihood variance `σ_n²`, broadcast per feature.
    pub aleatoric: Vec<T>,
}

impl<T: Real> FeatureStats<T> {
    pub fn total_variance(&self) -> Vec<T> {
        self.epistemic.iter().zip(&self.aleatoric).map(|(&e, &a)| e + a).collect()
    }
}

#[inline]
pub(crate) fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

impl<T: Real> BayesianNetwork<T> {
    pub fn from_layers(
        layers: Vec<VariationalLayer<T>>,
        prior_std: T,
        likelihood_std: T,
        kind: PosteriorKind,
    ) -> Result<Self, BnnError> {
        if layers.len() < 2 {
            return Err(BnnError::Shape(
                "need at least one feature layer and an output layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            let (o, n) = l.mu.shape();
            if l.rho.shape() != (o, n) || l.bias_mu.len() != o || l.bias_rho.len() != o {
                return Err(BnnError::Shape(format!("layer {i} parameter shapes disagree")));
            }
            if i > 0 && layers[i - 1].outputs() != n {
                return Err(BnnError::Shape(format!(
                    "layer {i} takes {n} inputs but layer {} emits {}",
                    i - 1,
                    layers[i - 1].outputs()
                )));
            }
        }
        if !(prior_std > T::zero()) || !(likelihood_std > T::zero()) {
            return Err(BnnError::InvalidParameter(
                "prior and likelihood standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            layers,
            prior_std,
            likelihood_std,
            kind,
        })
    }

    /// Random network with layer widths `sizes = [n, h1, ..., k, m]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], cfg: &InitConfig, rng: &mut R) -> Result<Self, BnnError> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(BnnError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mu_std = T::lit(cfg.mu_std);
        let rho = T::lit(cfg.rho);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(li, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let output = li == last;
                let use_bias = !output || cfg.output_bias;
                let mu = Matrix::from_fn(n_out, n_in, |_, _| mu_std * standard_normal::<T, R>(rng));
                let bias_mu = (0..n_out)
                    .map(|_| {
                        if use_bias {
                            mu_std * standard_normal::<T, R>(rng)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                VariationalLayer {
                    rho: Matrix::from_fn(n_out, n_in, |_, _| rho),
                    bias_rho: vec![rho; n_out],
                    mu,
                    bias_mu,
                    activation: if output { Activation::Identity } else { cfg.hidden_activation },
                    use_bias,
                }
            })
            .collect();
        Self::from_layers(
            layers,
            T::lit(cfg.prior_std),
            T::lit(cfg.likelihood_std),
            cfg.kind,
        )
    }

    pub fn layers(&self) -> &[VariationalLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [VariationalLayer<T>] {
        &mut self.layers
    }

    pub fn prior_std(&self) -> T {
        self.prior_std
    }

    pub fn likelihood_std(&self) -> T {
        self.likelihood_std
    }

    pub fn kind(&self) -> PosteriorKind {
        self.kind
    }

    /// Same parameters read as a different posterior family.
    pub fn with_kind(mut self, kind: PosteriorKind) -> Self {
        self.kind = kind;
        self
    }

    /// Point-estimate network with every `rho` at the `-∞` (zero-variance) limit.
    pub fn into_point_estimate(mut self) -> Self {
        for l in &mut self.layers {
            l.rho.as_mut_slice().iter_mut().for_each(|r| *r = T::neg_infinity());
            l.bias_rho.iter_mut().for_each(|r| *r = T::neg_infinity());
        }
        self.kind = PosteriorKind::PointEstimate;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Width `k` of the penultimate layer.
    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].inputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.is_finite())
            && (self.kind == PosteriorKind::PointEstimate
                || self.layers.iter().all(|l| {
                    l.rho.as_slice().iter().all(|r| !r.is_nan() && *r < T::infinity())
                        && l.bias_rho.iter().all(|r| !r.is_nan() && *r < T::infinity())
                }))
    }

    fn is_point_estimate(&self) -> bool {
        self.kind == PosteriorKind::PointEstimate
    }

    /// Output-layer means as the `k × m` fast-weight matrix.
    pub fn output_weights(&self) -> Matrix<T> {
        self.layers[self.layers.len() - 1].mu.transpose()
    }

    /// Overwrites the output-layer means with `w` (`k × m`).
    pub fn set_output_weights(&mut self, w: &Matrix<T>) -> Result<(), BnnError> {
        let last = self.layers.len() - 1;
        if w.shape() != (self.feature_dim(), self.output_dim()) {
            return Err(BnnError::Shape(format!(
                "output weights must be {}x{}",
                self.feature_dim(),
                self.output_dim()
            )));
        }
        self.layers[last].mu = w.transpose();
        Ok(())
    }

    /// Draws `ε` for every sampled parameter, layer by layer, weights
    /// (row-major) before biases.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise<T> {
        Noise {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let w = Matrix::from_fn(l.outputs(), l.inputs(), |_, _| standard_normal::<T, R>(rng));
                    let b = if l.use_bias {
                        (0..l.outputs()).map(|_| standard_normal::<T, R>(rng)).collect()
                    } else {
                        vec![T::zero(); l.outputs()]
                    };
                    (w, b)
                })
                .collect(),
        }
    }

    /// `θ = mu + softplus(rho) · ε`; exactly `mu` for a point estimate.
    pub fn weights_from_noise(&self, noise: &Noise<T>) -> WeightSample<T> {
        let point = self.is_point_estimate();
        WeightSample {
            layers: self
                .layers
                .iter()
                .zip(&noise.layers)
                .map(|(l, (ew, eb))| {
                    if point {
                        return (l.mu.clone(), l.bias_mu.clone());
                    }
                    let w = Matrix::from_fn(l.outputs(), l.inputs(), |i, j| {
                        l.mu[(i, j)] + l.rho[(i, j)].softplus() * ew[(i, j)]
                    });
                    let b = (0..l.outputs())
                        .map(|i| {
                            if l.use_bias {
                                l.bias_mu[i] + l.bias_rho[i].softplus() * eb[i]
                            } else {
                                l.bias_mu[i]
                            }
                        })
                        .collect();
                    (w, b)
                })
                .collect(),
        }
    }

    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightSample<T> {
        if self.is_point_estimate() {
            return self.mean_weights();
        }
        let noise = self.sample_noise(rng);
        self.weights_from_noise(&noise)
    }

    /// The posterior means as a weight realization.
    pub fn mean_weights(&self) -> WeightSample<T> {
        WeightSample {
            layers: self.layers.iter().map(|l| (l.mu.clone(), l.bias_mu.clone())).collect(),
        }
    }

    /// Features (penultimate activations) and network output for one input.
    pub fn forward(&self, theta: &WeightSample<T>, x: &[T]) -> (Vec<T>, Vec<T>) {
        assert_eq!(theta.layers.len(), self.layers.len(), "weight sample does not fit network");
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers[..last].iter().zip(&theta.layers) {
            a = dense(w, b, &a, l.activation);
        }
        let (w, b) = &theta.layers[last];
        let out = dense(w, b, &a, self.layers[last].activation);
        (a, out)
    }

    /// Posterior-mean prediction, `f(x; mu)`.
    pub fn predict_mean(&self, x: &[T]) -> Vec<T> {
        self.forward(&self.mean_weights(), x).1
    }

    /// Features under the posterior means.
    pub fn mean_weight_features(&self, x: &[T]) -> Vec<T> {
        self.forward(&self.mean_weights(), x).0
    }

    /// `count` independent feature draws at `x`.
    ///
    /// Only the feature layers are sampled, in the same order as
    /// [`BayesianNetwork::sample_noise`], so a draw consumes a prefix of the
    /// stream a full weight sample would.
    pub fn feature_draws<R: Rng + ?Sized>(&self, x: &[T], count: usize, rng: &mut R) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(count);
        self.for_each_draw(x, count, rng, |phi| out.push(phi));
        out
    }

    fn for_each_draw<R: Rng + ?Sized>(&self, x: &[T], count: usize, rng: &mut R, mut f: impl FnMut(Vec<T>)) {
        if self.is_point_estimate() {
            let phi = self.mean_weight_features(x);
            (0..count).for_each(|_| f(phi.clone()));
            return;
        }
        let last = self.layers.len() - 1;
        let stds: Vec<(Matrix<T>, Vec<T>)> = self.layers[..last]
            .iter()
            .map(|l| (l.weight_std(), l.bias_std()))
            .collect();
        for _ in 0..count {
            let mut a = x.to_vec();
            for (l, (sw, sb)) in self.layers[..last].iter().zip(&stds) {
                let (o, n) = l.mu.shape();
                let mut z = vec![T::zero(); o];
                for (i, zi) in z.iter_mut().enumerate() {
                    let mut s = T::zero();
                    for j in 0..n {
                        let eps: T = standard_normal(rng);
                        s += (l.mu[(i, j)] + sw[(i, j)] * eps) * a[j];
                    }
                    *zi = s;
                }
                for i in 0..o {
                    let b = if l.use_bias {
                        let eps: T = standard_normal(rng);
                        l.bias_mu[i] + sb[i] * eps
                    } else {
                        l.bias_mu[i]
                    };
                    z[i] = l.activation.apply(z[i] + b);
                }
                a = z;
            }
            f(a);
        }
    }

    /// One stochastic feature vector `Φ(x)`.
    pub fn sample_features<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Vec<T> {
        self.feature_draws(x, 1, rng).pop().expect("one draw")
    }

    /// Empirical feature mean over `draws` posterior samples.
    pub fn feature_mean<R: Rng + ?Sized>(&self, x: &[T], draws: usize, rng: &mut R) -> Result<Vec<T>, BnnError> {
        if draws == 0 {
            return Err(BnnError::TooFewDraws { needed: 1, got: 0 });
        }
        if self.is_point_estimate() {
            return Ok(self.mean_weight_features(x));
        }
        let n = T::lit(draws as f64);
        let mut first: Option<Vec<T>> = None;
        let mut acc = Vec::new();
        self.for_each_draw(x, draws, rng, |phi| match &first {
            None => {
                acc = vec![T::zero(); phi.len()];
                first = Some(phi);
            }
            Some(f0) => {
                for ((a, &p), &f) in acc.iter_mut().zip(&phi).zip(f0) {
                    *a += p - f;
                }
            }
        });
        let first = first.expect("at least one draw");
        Ok(first.iter().zip(acc).map(|(&f, a)| f + a / n).collect())
    }

    /// Mean, covariance and the epistemic/aleatoric split of the features.
    pub fn feature_stats<R: Rng + ?Sized>(&self, x: &[T], draws: usize, rng: &mut R) -> Result<FeatureStats<T>, BnnError> {
        if draws < 2 {
            return Err(BnnError::TooFewDraws { needed: 2, got: draws });
        }
        let samples = self.feature_draws(x, draws, rng);
        let mean = mean_of(&samples);
        let covariance = covariance_of(&samples, &mean);
        let k = mean.len();
        let epistemic = (0..k).map(|i| covariance[(i, i)]).collect();
        let aleatoric = vec![self.likelihood_std * self.likelihood_std; k];
        Ok(FeatureStats {
            mean,
            covariance,
            epistemic,
            aleatoric,
        })
    }
}

pub(crate) fn dense<T: Real>(w: &Matrix<T>, b: &[T], x: &[T], act: Activation) -> Vec<T> {
    let mut z = w.mul_vec(x);
    for (zi, &bi) in z.iter_mut().zip(b) {
        *zi = act.apply(*zi + bi);
    }
    z
}

pub(crate) fn mean_of<T: Real>(samples: &[Vec<T>]) -> Vec<T> {
    // Accumulate offsets from the first draw so identical draws average exactly.
    let first = &samples[0];
    let n = T::lit(samples.len() as f64);
    let mut acc = vec![T::zero(); first.len()];
    for s in &samples[1..] {
        for ((ai, &si), &fi) in acc.iter_mut().zip(s).zip(first) {
            *ai += si - fi;
        }
    }
    first.iter().zip(acc).map(|(&f, a)| f + a / n).collect()
}

/// Unbiased sample covariance.
pub(crate) fn covariance_of<T: Real>(samples: &[Vec<T>], mean: &[T]) -> Matrix<T> {
    let k = mean.len();
    let mut c = Matrix::zeros(k, k);
    for s in samples {
        for i in 0..k {
            let di = s[i] - mean[i];
            for j in i..k {
                c[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    let denom = T::lit((samples.len().max(2) - 1) as f64);
    for i in 0..k {
        for j in i..k {
            let v = c[(i, j)] / denom;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}
