//! Energy-harvesting sensor networks that quantize, transmit and fuse
//! samples of a subspace-constrained graph signal, with drift-plus-penalty
//! control of transmit energy and battery levels.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod config;
pub mod control;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod presets;
pub mod quantizer;
pub mod radio_energy;
pub mod report;
pub mod scalar;
pub mod signal_model;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type SignalPriorF64 = signal_model::SignalPrior<f64>;
pub type SignalPriorF32 = signal_model::SignalPrior<f32>;
pub type NetworkTopologyF64 = signal_model::NetworkTopology<f64>;
pub type NetworkTopologyF32 = signal_model::NetworkTopology<f32>;
pub type NodeEnergyStateF64 = radio_energy::NodeEnergyState<f64>;
pub type NodeEnergyStateF32 = radio_energy::NodeEnergyState<f32>;
pub type ControlDecisionF64 = control::ControlDecision<f64>;
pub type ControlDecisionF32 = control::ControlDecision<f32>;
pub type ScenarioF64 = sim::Scenario<f64>;
pub type ScenarioF32 = sim::Scenario<f32>;
