//! BMSE minimization under battery stability.
//!
//! The BMSE penalty is linearized around last slot's energies, which makes
//! the per-slot problem linear: each node either transmits at `e_max` or
//! stays silent, and harvests fully or not at all. With offsets from
//! [`theta_from_theorem`] the batteries stay inside
//! `[e_max + e_o, θ + R_max − e_o]`.

use crate::error::Result;
use crate::fusion::{bmse_gradient, BmseContext};
use crate::radio_energy::NodeEnergyState;
use crate::scalar::Scalar;

use super::{harvest_decision, ControlDecision};

/// How the battery offsets `θ_i` are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaMode {
    /// `θ_i = V·G_i + 2e_i^max + 2e_o,i` with `G_i` from
    /// [`crate::fusion::gradient_bound`], which carries the battery
    /// guarantees.
    Theorem,
    /// Same formula with `G_i` from [`crate::fusion::g_i_max`]. That
    /// quantity can be smaller than the gradients actually met, so the
    /// guarantees may fail.
    TheoremClosedForm,
    /// A single user-chosen offset for every node; no guarantees.
    Free(f64),
}

/// `θ = V·g_max + 2·e_max + 2·e_o`.
pub fn theta_from_theorem<T: Scalar>(v: T, g_max: T, e_max: T, e_o: T) -> T {
    v * g_max + T::lit(2.0) * e_max + T::lit(2.0) * e_o
}

/// Transmit at full power iff `B̃_i ≥ V·∂BMSE/∂e_i`; ties transmit.
pub fn transmit_decision<T: Scalar>(queue: T, v: T, grad: T, e_max: T) -> T {
    if queue >= v * grad {
        e_max
    } else {
        T::zero()
    }
}

/// One slot of the controller.
///
/// `ctx` carries this slot's cost coefficients and the previous slot's
/// energies, i.e. the linearization point.
pub fn alg1_slot<T: Scalar>(
    states: &[NodeEnergyState<T>],
    ctx: &BmseContext<'_, T>,
    arrivals: &[T],
    v: T,
    max_bits: u32,
) -> Result<ControlDecision<T>> {
    let grad = bmse_gradient(ctx)?;
    let mut planned = Vec::with_capacity(states.len());
    let mut harvested = Vec::with_capacity(states.len());
    for ((s, &g), &r) in states.iter().zip(&grad).zip(arrivals) {
        harvested.push(harvest_decision(s.battery, s.offset, r));
        planned.push(transmit_decision(s.virtual_queue(), v, g, s.e_max));
    }
    Ok(ControlDecision::realize(planned, harvested, ctx.cost, max_bits))
}
