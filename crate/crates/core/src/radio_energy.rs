//! Channels, the QAM transmit-energy model, energy arrivals and battery
//! dynamics.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::signal_model::NetworkTopology;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Link-budget constants. Defaults follow a low-power Bluetooth-class WSN.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    /// One-sided noise power spectral density, W/Hz.
    pub noise_psd: f64,
    pub noise_figure: f64,
    pub system_const: f64,
    pub slot_s: f64,
    /// Target bit error rate, shared by all nodes.
    pub ber: f64,
    pub carrier_hz: f64,
    pub max_bits: u32,
    /// Unit-mean Rayleigh (exponential power) fading on top of path loss.
    pub fading: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            noise_psd: 4e-21,
            noise_figure: 10.0,
            system_const: 1e-3,
            slot_s: 1e-3,
            ber: 1e-4,
            carrier_hz: 10e6,
            max_bits: 4,
            fading: true,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("noise_psd", self.noise_psd),
            ("noise_figure", self.noise_figure),
            ("system_const", self.system_const),
            ("slot_s", self.slot_s),
            ("carrier_hz", self.carrier_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.ber > 0.0 && self.ber < 1.0) {
            return Err(invalid(format!("ber must lie in (0, 1), got {}", self.ber)));
        }
        if self.max_bits == 0 || self.max_bits > 52 {
            return Err(invalid(format!("max_bits must lie in 1..=52, got {}", self.max_bits)));
        }
        Ok(())
    }

    /// `2 N_f N_0 G_d T ln(2/BER)`, the per-bit-level energy at unit gain.
    pub fn energy_constant(&self) -> f64 {
        2.0 * self.noise_figure
            * self.noise_psd
            * self.system_const
            * self.slot_s
            * (2.0 / self.ber).ln()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }
}

/// Free-space power gain `(λ/(4πd))²` with `d` floored at one meter.
pub fn path_loss<T: Scalar>(topology: &NetworkTopology<T>, params: &RadioParams, fc: [f64; 2]) -> Vec<f64> {
    let lambda = params.wavelength();
    let fc = [T::lit(fc[0]), T::lit(fc[1])];
    (0..topology.node_count())
        .map(|i| {
            let d = topology.distance_to(i, fc).to_f64_lossy().max(1.0);
            (lambda / (4.0 * std::f64::consts::PI * d)).powi(2)
        })
        .collect()
}

/// One slot of channel state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw<T> {
    /// Power gains `h_i²`.
    pub gain: Vec<T>,
    /// Cost coefficients `c_i`: energy of one quantization level.
    pub cost: Vec<T>,
}

/// Precomputed per-node path loss and energy constant; draws channels in a
/// chosen energy unit (`unit_j` joules per unit).
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub path_loss: Vec<f64>,
    pub energy_constant: f64,
    pub fading: bool,
    pub unit_j: f64,
}

impl ChannelModel {
    pub fn new<T: Scalar>(
        topology: &NetworkTopology<T>,
        params: &RadioParams,
        fc: [f64; 2],
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            path_loss: path_loss(topology, params, fc),
            energy_constant: params.energy_constant(),
            fading: params.fading,
            unit_j: 1.0,
        })
    }

    pub fn with_unit(mut self, unit_j: f64) -> Self {
        self.unit_j = unit_j;
        self
    }

    pub fn node_count(&self) -> usize {
        self.path_loss.len()
    }

    pub fn sample<T: Scalar>(&self, rng: &mut impl Rng) -> ChannelDraw<T> {
        let mut gain = Vec::with_capacity(self.node_count());
        let mut cost = Vec::with_capacity(self.node_count());
        for &pl in &self.path_loss {
            let f: f64 = if self.fading { Exp1.sample(rng) } else { 1.0 };
            // An exact zero draw would make the link unusable; keep it finite.
            let g = pl * f.max(f64::MIN_POSITIVE);
            gain.push(T::lit(g));
            cost.push(T::lit(self.energy_constant / g / self.unit_j));
        }
        ChannelDraw { gain, cost }
    }

    /// Cost coefficient when the fading power sits at its `p`-quantile.
    pub fn percentile_cost(&self, p: f64) -> Vec<f64> {
        let q = if self.fading { exponential_quantile(p) } else { 1.0 };
        self.path_loss
            .iter()
            .map(|pl| self.energy_constant / (pl * q) / self.unit_j)
            .collect()
    }
}

/// Channel draw in joules with the fusion center at `fc`.
pub fn sample_channel<T: Scalar>(
    topology: &NetworkTopology<T>,
    params: &RadioParams,
    fc: [f64; 2],
    rng: &mut impl Rng,
) -> Result<ChannelDraw<T>> {
    Ok(ChannelModel::new(topology, params, fc)?.sample(rng))
}

/// Quantile of the unit-mean exponential distribution.
pub fn exponential_quantile(p: f64) -> f64 {
    -(1.0 - p).ln()
}

/// `c (2^b − 1)`.
pub fn energy_for_bits<T: Scalar>(bits: u32, cost: T) -> T {
    cost * T::lit(((1u64 << bits) - 1) as f64)
}

/// Largest `b ≤ b_max` whose energy fits in `e`; zero means the node
/// cannot afford a single bit.
pub fn bits_for_energy<T: Scalar>(energy: T, cost: T, max_bits: u32) -> u32 {
    if !(energy > T::zero()) || !(cost > T::zero()) {
        return 0;
    }
    let mut b = 0;
    while b < max_bits && energy_for_bits(b + 1, cost) <= energy {
        b += 1;
    }
    b
}

/// Per-node maximum transmit energy: `b_max` bits over the channel at the
/// `percentile` of its fading distribution, estimated from `mc_draws`
/// Monte Carlo samples.
pub fn calibrate_e_max<T: Scalar>(
    params: &RadioParams,
    topology: &NetworkTopology<T>,
    fc: [f64; 2],
    percentile: f64,
    max_bits: u32,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(invalid(format!("percentile must lie in (0, 1), got {percentile}")));
    }
    if mc_draws < 1000 {
        return Err(invalid(format!("need at least 1000 draws, got {mc_draws}")));
    }
    let model = ChannelModel::new(topology, params, fc)?;
    let levels = ((1u64 << max_bits) - 1) as f64;
    let mut samples = vec![0.0f64; mc_draws];
    let mut out = Vec::with_capacity(model.node_count());
    for &pl in &model.path_loss {
        for s in samples.iter_mut() {
            let f: f64 = if model.fading { Exp1.sample(rng) } else { 1.0 };
            *s = pl * f;
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        let h2 = empirical_quantile(&samples, percentile);
        out.push(model.energy_constant / h2 * levels);
    }
    Ok(out)
}

/// Closed-form counterpart of [`calibrate_e_max`] via the exponential quantile.
pub fn e_max_analytic(model: &ChannelModel, percentile: f64, max_bits: u32) -> Vec<f64> {
    let levels = ((1u64 << max_bits) - 1) as f64;
    model
        .percentile_cost(percentile)
        .into_iter()
        .map(|c| c * levels)
        .collect()
}

fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalKind {
    Uniform,
    /// Alternating ON and OFF half-windows, starting ON.
    OnOff { window_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    pub r_max: f64,
}

impl ArrivalProcess {
    pub fn uniform(r_max: f64) -> Self {
        Self {
            kind: ArrivalKind::Uniform,
            r_max,
        }
    }

    pub fn on_off(r_max: f64, window_s: f64) -> Self {
        Self {
            kind: ArrivalKind::OnOff { window_s },
            r_max,
        }
    }

    /// Whether slot `t` lies in an ON half-window.
    pub fn is_on(&self, t: usize, slot_s: f64) -> bool {
        match self.kind {
            ArrivalKind::Uniform => true,
            ArrivalKind::OnOff { window_s } => {
                let period = ((window_s / slot_s).round() as usize).max(2);
                t % period < period / 2
            }
        }
    }
}

/// Energy arriving at each of `n` nodes in slot `t`.
pub fn sample_arrivals<T: Scalar>(
    process: &ArrivalProcess,
    t: usize,
    slot_s: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<T> {
    let on = process.is_on(t, slot_s);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if on {
                T::lit(u * process.r_max)
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Battery bookkeeping for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEnergyState<T> {
    pub battery: T,
    /// Operating point the virtual queue is centered on.
    pub offset: T,
    /// Fixed per-slot overhead `e_o`.
    pub overhead: T,
    pub e_max: T,
}

impl<T: Scalar> NodeEnergyState<T> {
    pub fn virtual_queue(&self) -> T {
        self.battery - self.offset
    }

    /// Largest transmit energy the node can afford this slot.
    pub fn spendable(&self) -> T {
        self.e_max.min(self.battery - self.overhead).max(T::zero())
    }
}

/// Outcome of one battery update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep<T> {
    pub state: NodeEnergyState<T>,
    /// The node could not cover its overhead and was drained to zero
    /// before harvesting.
    pub brownout: bool,
}

/// `B ← B − e − e_o + r`.
///
/// Transmitting more than `B − e_o` is a contract violation. An idle node
/// whose battery cannot cover the overhead drains to zero instead of
/// going negative; this is reported as a brown-out.
pub fn battery_step<T: Scalar>(
    state: NodeEnergyState<T>,
    energy: T,
    harvested: T,
) -> Result<BatteryStep<T>> {
    if energy < T::zero() || harvested < T::zero() {
        return Err(Error::ContractViolation(format!(
            "negative energy flow (e = {energy}, r = {harvested})"
        )));
    }
    let available = state.battery - state.overhead;
    if energy > T::zero() && energy > available {
        return Err(Error::ContractViolation(format!(
            "energy causality: transmit {energy} exceeds battery {} minus overhead {}",
            state.battery, state.overhead
        )));
    }
    let after = available - energy;
    let brownout = after < T::zero();
    let battery = after.max(T::zero()) + harvested;
    Ok(BatteryStep {
        state: NodeEnergyState { battery, ..state },
        brownout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::topology_from_positions;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_topology() -> NetworkTopology<f64> {
        topology_from_positions(&[[10.0, 0.0], [20.0, 0.0], [0.3, 0.0]], 100.0, 0.25).unwrap()
    }

    fn no_fading() -> RadioParams {
        RadioParams {
            fading: false,
            ..RadioParams::default()
        }
    }

    #[test]
    fn inverse_square_law() {
        let draw: ChannelDraw<f64> =
            sample_channel(&line_topology(), &no_fading(), [0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        assert_relative_eq!(draw.gain[0] / draw.gain[1], 4.0, epsilon = 1e-12);
        // floored at one meter
        let lambda = no_fading().wavelength();
        assert_relative_eq!(draw.gain[2], (lambda / (4.0 * std::f64::consts::PI)).powi(2));
    }

    #[test]
    fn cost_matches_formula() {
        let p = RadioParams::default();
        let draw: ChannelDraw<f64> =
            sample_channel(&line_topology(), &p, [0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (c, h2) in draw.cost.iter().zip(&draw.gain) {
            let want = 2.0 * p.noise_figure * p.noise_psd * p.system_const * p.slot_s
                * (2.0 / p.ber).ln()
                / h2;
            assert_relative_eq!(*c, want, max_relative = 1e-14);
        }
    }

    #[test]
    fn fading_has_unit_mean() {
        let t = topology_from_positions::<f64>(&[[10.0, 0.0], [5.0, 5.0]], 100.0, 0.25).unwrap();
        let model = ChannelModel::new(&t, &RadioParams::default(), [0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| model.sample::<f64>(&mut rng).gain[0] / model.path_loss[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn channel_is_deterministic() {
        let t = line_topology();
        let p = RadioParams::default();
        let a: ChannelDraw<f64> = sample_channel(&t, &p, [0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b: ChannelDraw<f64> = sample_channel(&t, &p, [0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_bits_mapping() {
        assert_eq!(energy_for_bits(0, 2.0), 0.0);
        assert_eq!(energy_for_bits(4, 2.0), 30.0);
        assert_eq!(energy_for_bits(1, 2.0), 2.0);
        let c = 0.37;
        assert_eq!(bits_for_energy(15.0 * c, c, 4), 4);
        assert_eq!(bits_for_energy(14.9 * c, c, 4), 3);
        assert_eq!(bits_for_energy(0.99 * c, c, 4), 0);
        assert_eq!(bits_for_energy(1e6 * c, c, 4), 4);
        assert_eq!(bits_for_energy(0.0, c, 4), 0);
    }

    #[test]
    fn exponential_percentile() {
        assert_relative_eq!(exponential_quantile(0.05), 0.051293, epsilon = 1e-6);
    }

    #[test]
    fn calibration_without_fading() {
        let t = line_topology();
        let p = no_fading();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = calibrate_e_max(&p, &t, [0.0, 0.0], 0.05, 4, 1000, &mut rng).unwrap();
        let draw: ChannelDraw<f64> = sample_channel(&t, &p, [0.0, 0.0], &mut rng).unwrap();
        for (ei, ci) in e.iter().zip(&draw.cost) {
            assert_relative_eq!(*ei, 15.0 * ci, max_relative = 1e-12);
        }
        // the closer node is cheaper
        assert!(e[0] < e[1]);
    }

    #[test]
    fn monte_carlo_calibration_matches_closed_form() {
        let t = line_topology();
        let p = RadioParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mc = calibrate_e_max(&p, &t, [0.0, 0.0], 0.05, 4, 200_000, &mut rng).unwrap();
        let model = ChannelModel::new(&t, &p, [0.0, 0.0]).unwrap();
        let exact = e_max_analytic(&model, 0.05, 4);
        for (a, b) in mc.iter().zip(&exact) {
            assert!((a / b - 1.0).abs() < 0.03, "{a} vs {b}");
        }
        assert!(calibrate_e_max(&p, &t, [0.0, 0.0], 0.05, 4, 10, &mut rng).is_err());
    }

    #[test]
    fn arrivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zero = ArrivalProcess::uniform(0.0);
        assert!(sample_arrivals::<f64>(&zero, 0, 1e-3, 5, &mut rng).iter().all(|&r| r == 0.0));

        let u = ArrivalProcess::uniform(2.0);
        let n = 100_000;
        let mean = (0..n)
            .map(|t| sample_arrivals::<f64>(&u, t, 1e-3, 1, &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01);

        let oo = ArrivalProcess::on_off(1.0, 1.0);
        for t in 0..3000 {
            let want_on = (t % 1000) < 500;
            assert_eq!(oo.is_on(t, 1e-3), want_on, "slot {t}");
            let r = sample_arrivals::<f64>(&oo, t, 1e-3, 3, &mut rng);
            if !want_on {
                assert!(r.iter().all(|&x| x == 0.0));
            }
        }
    }

    fn node(b: f64) -> NodeEnergyState<f64> {
        NodeEnergyState {
            battery: b,
            offset: 2.0,
            overhead: 0.1,
            e_max: 1.0,
        }
    }

    #[test]
    fn battery_arithmetic() {
        assert_relative_eq!(battery_step(node(5.0), 1.0, 0.5).unwrap().state.battery, 4.4);
        assert_relative_eq!(battery_step(node(5.0), 0.0, 0.0).unwrap().state.battery, 4.9);
        let s = battery_step(node(5.0), 4.9, 0.0).unwrap();
        assert_eq!(s.state.battery, 0.0);
        assert!(!s.brownout);
        assert_relative_eq!(node(5.0).virtual_queue(), 3.0);
    }

    #[test]
    fn causality_violation_is_an_error() {
        assert!(matches!(
            battery_step(node(1.0), 0.95, 0.0),
            Err(Error::ContractViolation(_))
        ));
        assert!(battery_step(node(1.0), -0.1, 0.0).is_err());
    }

    #[test]
    fn idle_brownout_floors_at_zero() {
        let s = battery_step(node(0.05), 0.0, 0.02).unwrap();
        assert!(s.brownout);
        assert_relative_eq!(s.state.battery, 0.02);
    }

    proptest! {
        #[test]
        fn bits_inversion_never_overspends(e in 0.0f64..1e3, c in 1e-3f64..10.0, bmax in 1u32..10) {
            let b = bits_for_energy(e, c, bmax);
            prop_assert!(b <= bmax);
            prop_assert!(energy_for_bits(b, c) <= e);
            if b < bmax {
                prop_assert!(energy_for_bits(b + 1, c) > e);
            }
        }

        #[test]
        fn cost_decreases_with_gain(g1 in 1e-12f64..1.0, k in 1.0001f64..100.0) {
            let k0 = RadioParams::default().energy_constant();
            prop_assert!(k0 / (g1 * k) < k0 / g1);
        }

        #[test]
        fn arrivals_bounded(r_max in 0.0f64..10.0, seed: u64, t in 0usize..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ArrivalProcess::on_off(r_max, 0.2);
            let r = sample_arrivals::<f64>(&p, t, 1e-3, 4, &mut rng);
            prop_assert!(r.iter().all(|&x| (0.0..=r_max).contains(&x)));
        }
    }
}
