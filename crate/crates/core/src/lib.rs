//! Stochastic deep model reference adaptive control.
//!
//! A linear reference model is tracked by a plant with matched nonlinear
//! uncertainty. The adaptive element is `u_ad = Wᵀ Φ(x)`, where `Φ` are
//! features sampled from a Bayesian MLP trained by variational inference on
//! self-labeled replay data, and `W` is adapted every control step by a
//! projected Lyapunov law.
//!
//! Everything numerical is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`.

pub mod adapt;
pub mod bnn;
pub mod buffer;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod scalar;

pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type LinearPlant64 = dynamics::LinearPlant<f64>;
pub type ReferenceModel64 = dynamics::ReferenceModel<f64>;
pub type TrajectoryLog64 = dynamics::TrajectoryLog<f64>;
pub type BayesianNetwork64 = bnn::BayesianNetwork<f64>;
pub type BayesianNetwork32 = bnn::BayesianNetwork<f32>;
pub type NetworkVersion64 = bnn::NetworkVersion<f64>;
pub type ControllerGains64 = adapt::ControllerGains<f64>;
pub type FastWeights64 = adapt::FastWeights<f64>;
pub type ReplayBuffer64 = buffer::ReplayBuffer<f64>;
