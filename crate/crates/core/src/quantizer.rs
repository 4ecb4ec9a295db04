//! Probabilistic (dithered-rounding) uniform quantizer on `[-A, A]`.
//!
//! The `2^b` levels are `-A + kΔ`, `k = 0..2^b-1`, with `Δ = 2A/(2^b-1)`.
//! An observation is rounded to one of its two neighbouring levels with
//! probabilities that make the output unbiased.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// A quantized observation as it arrives at the fusion center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedMessage<T> {
    pub value: T,
    pub bits: u32,
    pub node: usize,
}

fn levels_minus_one<T: Scalar>(bits: u32) -> Result<T> {
    if bits == 0 {
        return Err(invalid("quantizer needs at least one bit"));
    }
    if bits > 52 {
        return Err(invalid(format!("{bits} bits exceeds supported resolution")));
    }
    Ok(T::lit(((1u64 << bits) - 1) as f64))
}

/// Interval length `Δ = 2A/(2^b − 1)`.
pub fn step_size<T: Scalar>(amplitude: T, bits: u32) -> Result<T> {
    Ok(T::lit(2.0) * amplitude / levels_minus_one::<T>(bits)?)
}

/// Model variance of the quantization noise, `A²/(2^b − 1)²`.
///
/// This is the worst case of the realized per-sample variance
/// `α(1−α)Δ²`, attained at the cell midpoint.
pub fn quant_noise_variance<T: Scalar>(amplitude: T, bits: u32) -> Result<T> {
    let l = levels_minus_one::<T>(bits)?;
    Ok((amplitude / l).powi(2))
}

pub fn quantize<T: Scalar>(
    y: T,
    bits: u32,
    amplitude: T,
    node: usize,
    rng: &mut impl Rng,
) -> Result<QuantizedMessage<T>> {
    let delta = step_size(amplitude, bits)?;
    if !(y.abs() <= amplitude) {
        return Err(invalid(format!("observation {y} outside [-{amplitude}, {amplitude}]")));
    }
    let top = levels_minus_one::<T>(bits)?;
    let pos = (y + amplitude) / delta;
    let cell = pos.floor().min(top - T::one()).max(T::zero());
    let frac = (pos - cell).max(T::zero()).min(T::one());
    // Draw unconditionally so the random stream does not depend on `y`.
    let u = T::lit(rng.gen::<f64>());
    let k = if u < frac { cell + T::one() } else { cell };
    let value = if k == top { amplitude } else { -amplitude + k * delta };
    Ok(QuantizedMessage { value, bits, node })
}
