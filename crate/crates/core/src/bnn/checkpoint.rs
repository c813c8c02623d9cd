//! Self-describing JSON checkpoint of a [`NetworkVersion`].
//!
//! Arrays are row-major `f64`. A `rho` of `-inf` (a zero-variance factor) is
//! written as `null`, since JSON has no infinities.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Activation, BayesianNetwork, NetworkVersion, PosteriorKind, VariationalLayer};
use crate::error::IoError;
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub use_bias: bool,
    pub mu: Vec<f64>,
    pub rho: Vec<Option<f64>>,
    pub bias_mu: Vec<f64>,
    pub bias_rho: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub sigma: u64,
    pub layer_sizes: Vec<usize>,
    pub kind: PosteriorKind,
    pub prior_std: f64,
    pub likelihood_std: f64,
    pub layers: Vec<LayerCheckpoint>,
}

fn encode_rho<T: Real>(v: &[T]) -> Vec<Option<f64>> {
    v.iter()
        .map(|&r| if r == T::neg_infinity() { None } else { Some(r.as_f64()) })
        .collect()
}

fn decode_rho<T: Real>(v: &[Option<f64>]) -> Vec<T> {
    v.iter().map(|r| r.map_or(T::neg_infinity(), T::lit)).collect()
}

impl Checkpoint {
    pub fn from_version<T: Real>(version: &NetworkVersion<T>) -> Self {
        let net = version.network();
        let mut layer_sizes = vec![net.input_dim()];
        layer_sizes.extend(net.layers().iter().map(|l| l.outputs()));
        Self {
            sigma: version.sigma(),
            layer_sizes,
            kind: net.kind(),
            prior_std: net.prior_std().as_f64(),
            likelihood_std: net.likelihood_std().as_f64(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerCheckpoint {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    use_bias: l.use_bias,
                    mu: l.mu.as_slice().iter().map(|v| v.as_f64()).collect(),
                    rho: encode_rho(l.rho.as_slice()),
                    bias_mu: l.bias_mu.iter().map(|v| v.as_f64()).collect(),
                    bias_rho: encode_rho(&l.bias_rho),
                })
                .collect(),
        }
    }

    pub fn to_version<T: Real>(&self) -> Result<NetworkVersion<T>, IoError> {
        let bad = |e: crate::error::LinalgError| IoError::Format(e.to_string());
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(VariationalLayer {
                    mu: Matrix::from_vec(l.outputs, l.inputs, l.mu.iter().map(|&v| T::lit(v)).collect()).map_err(bad)?,
                    rho: Matrix::from_vec(l.outputs, l.inputs, decode_rho(&l.rho)).map_err(bad)?,
                    bias_mu: l.bias_mu.iter().map(|&v| T::lit(v)).collect(),
                    bias_rho: decode_rho(&l.bias_rho),
                    activation: l.activation,
                    use_bias: l.use_bias,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let net = BayesianNetwork::from_layers(layers, T::lit(self.prior_std), T::lit(self.likelihood_std), self.kind)
            .map_err(|e| IoError::Format(e.to_string()))?;
        Ok(NetworkVersion::restore(self.sigma, net))
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), IoError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(r)?)
    }
}
