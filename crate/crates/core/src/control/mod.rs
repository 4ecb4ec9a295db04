//! Per-slot drift-plus-penalty controllers.
//!
//! [`bmse_min`] minimizes time-average BMSE with batteries held around
//! `θ_i`; [`energy_min`] minimizes transmit energy under an average-BMSE
//! target tracked by the virtual queue `Z(t)`.

pub mod bmse_min;
pub mod energy_min;

use crate::radio_energy::bits_for_energy;
use crate::scalar::Scalar;

/// What the network does in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision<T> {
    /// Transmit energies actually spent.
    pub energy: Vec<T>,
    pub harvested: Vec<T>,
    pub bits: Vec<u32>,
    /// Sampling set: nodes sending at least one bit.
    pub active: Vec<usize>,
}

impl<T: Scalar> ControlDecision<T> {
    /// Maps planned energies onto quantizer bit loads. A node whose plan
    /// cannot pay for a single bit stays idle and spends nothing.
    pub fn realize(planned: Vec<T>, harvested: Vec<T>, cost: &[T], max_bits: u32) -> Self {
        let mut energy = planned;
        let mut bits = Vec::with_capacity(energy.len());
        let mut active = Vec::new();
        for (i, (e, &c)) in energy.iter_mut().zip(cost).enumerate() {
            let b = bits_for_energy(*e, c, max_bits);
            if b == 0 {
                *e = T::zero();
            } else {
                active.push(i);
            }
            bits.push(b);
        }
        Self {
            energy,
            harvested,
            bits,
            active,
        }
    }

    pub fn energy_sum(&self) -> T {
        self.energy.iter().copied().sum()
    }
}

/// `r_i = R_i · 𝕀(B_i ≤ offset_i)`: harvest everything at or below the
/// operating point, nothing above it.
pub fn harvest_decision<T: Scalar>(battery: T, offset: T, arrival: T) -> T {
    if battery <= offset {
        arrival
    } else {
        T::zero()
    }
}

/// `½ Σ_i B̃_i²`.
pub fn lyapunov_diagnostic<T: Scalar>(queues: &[T]) -> T {
    T::lit(0.5) * queues.iter().map(|&q| q * q).sum::<T>()
}
