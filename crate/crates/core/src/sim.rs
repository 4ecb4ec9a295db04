//! Slot loop, Monte Carlo replication and metric aggregation.
//!
//! Each slot runs in a fixed order: draw channels, arrivals and the
//! signal; let the controller decide; quantize and fuse; update batteries
//! and queues; record. Energies inside the simulator are in a normalized
//! unit (the largest `e_max` in the network); recorded traces are in joules.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Algorithm, ExperimentConfig, Precision};
use crate::control::bmse_min::{alg1_slot, theta_from_theorem, ThetaMode};
use crate::control::energy_min::{alg23_slot, EnergyMinParams, EnergySolver};
use crate::control::{lyapunov_diagnostic, ControlDecision};
use crate::error::{invalid, Error, Result};
use crate::fusion::{
    bmse_for_bits, g_i_max, gradient_bound, lmmse_estimate, BmseContext, FusionInput,
};
use crate::quantizer::quantize;
use crate::radio_energy::{
    battery_step, e_max_analytic, sample_arrivals, ArrivalProcess, ChannelModel, NodeEnergyState,
};
use crate::scalar::Scalar;
use crate::signal_model::{
    build_subspace, build_topology, make_signal_prior, sample_slot, NetworkTopology, SignalPrior,
};

const STREAM_TOPOLOGY: u64 = u64::MAX;
const STREAM_PRIOR: u64 = u64::MAX - 1;

const STREAM_CHANNEL: u64 = 0;
const STREAM_ARRIVALS: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_QUANTIZER: u64 = 3;
const STREAM_INIT: u64 = 4;

/// Seed for an independent stream derived from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed of Monte Carlo trial `k`. Trial `k` sees the same seed whatever
/// the total number of trials.
pub fn trial_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, k as u64)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything that is fixed across the trials of one experiment.
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub topology: NetworkTopology<T>,
    pub prior: SignalPrior<T>,
    pub channel: ChannelModel,
    pub arrivals: ArrivalProcess,
    /// Joules per normalized energy unit.
    pub energy_unit_j: f64,
    pub e_max: Vec<T>,
    pub overhead: Vec<T>,
    /// Gradient bounds used for theorem-mode offsets.
    pub g_max: Vec<T>,
    pub offsets: Vec<T>,
    pub initial_battery: Vec<T>,
    /// `offset_i + R_max − e_o,i`, which no battery may exceed.
    pub upper_bound: Vec<T>,
    /// `e_max,i + e_o,i`, guaranteed only for `alg1` with theorem offsets.
    pub lower_bound: Option<Vec<T>>,
    pub max_bits: u32,
}

impl<T: Scalar> Scenario<T> {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate_model().map_err(|e| Error::Config {
            key: e.key.to_string(),
            line: 0,
            message: e.message,
        })?;
        let net = &cfg.network;
        let master = cfg.sim.seed;
        let topology = build_topology::<T>(
            net.nodes,
            net.radius_m,
            net.kernel_variance,
            derive_seed(master, STREAM_TOPOLOGY),
        )?;
        let basis = build_subspace(&topology, net.subspace_dim)?;
        let prior = make_signal_prior(
            &basis,
            net.worst_bmse_db,
            net.noise_var,
            net.amplitude,
            derive_seed(master, STREAM_PRIOR),
        )?;
        let params = &cfg.radio.params;
        let raw = ChannelModel::new(&topology, params, [0.0, 0.0])?;
        let e_max_j = e_max_analytic(&raw, cfg.radio.percentile, params.max_bits);
        let energy_unit_j = e_max_j.iter().copied().fold(0.0, f64::max);
        let channel = raw.with_unit(energy_unit_j);
        let e_max: Vec<T> = e_max_j.iter().map(|&e| T::lit(e / energy_unit_j)).collect();
        let frac = T::lit(cfg.radio.overhead_frac);
        let overhead: Vec<T> = e_max.iter().map(|&e| e * frac).collect();
        let c = &cfg.control;
        let g_max = e_max
            .iter()
            .enumerate()
            .map(|(i, &e)| match c.theta {
                ThetaMode::TheoremClosedForm => g_i_max(&prior, i, e),
                _ => gradient_bound(&prior, i, e),
            })
            .collect::<Result<Vec<T>>>()?;

        let v = T::lit(c.v);
        let offsets: Vec<T> = match (c.algorithm, c.theta) {
            (Algorithm::Alg1, ThetaMode::Theorem | ThetaMode::TheoremClosedForm) => (0..net.nodes)
                .map(|i| theta_from_theorem(v, g_max[i], e_max[i], overhead[i]))
                .collect(),
            (Algorithm::Alg1, ThetaMode::Free(x)) => vec![T::lit(x); net.nodes],
            _ => vec![T::lit(c.vartheta); net.nodes],
        };
        let init = T::lit(cfg.energy.init_battery_frac);
        let initial_battery: Vec<T> = offsets.iter().map(|&o| o * init).collect();
        let r_max = T::lit(cfg.energy.r_max);
        let upper_bound: Vec<T> = offsets
            .iter()
            .zip(&overhead)
            .map(|(&o, &eo)| o + r_max - eo)
            .collect();
        let theorem = c.algorithm == Algorithm::Alg1
            && matches!(c.theta, ThetaMode::Theorem | ThetaMode::TheoremClosedForm);
        let lower_bound = if theorem {
            for i in 0..net.nodes {
                let need = e_max[i] + T::lit(2.0) * overhead[i];
                if initial_battery[i] < need {
                    return Err(Error::Config {
                        key: "init_battery_frac".into(),
                        line: 0,
                        message: format!(
                            "node {i} starts at {} but theorem offsets need at least {need}",
                            initial_battery[i]
                        ),
                    });
                }
            }
            Some(e_max.iter().zip(&overhead).map(|(&e, &eo)| e + eo).collect())
        } else {
            None
        };
        Ok(Self {
            topology,
            prior,
            channel,
            arrivals: cfg.energy.arrival_process(),
            energy_unit_j,
            e_max,
            overhead,
            g_max,
            offsets,
            initial_battery,
            upper_bound,
            lower_bound,
            max_bits: params.max_bits,
        })
    }

    pub fn node_count(&self) -> usize {
        self.e_max.len()
    }
}

/// All-active benchmark: every node sends `max_bits` bits.
pub fn benchmark_bmse_opt<T: Scalar>(prior: &SignalPrior<T>, max_bits: u32) -> Result<T> {
    bmse_for_bits(prior, &vec![max_bits; prior.node_count()])
}

/// One row of a trace. Battery, queue and Lyapunov values are taken at
/// the start of the slot; the rest describe what happened during it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotRecord {
    pub slot: usize,
    pub bmse_model: f64,
    pub err_empirical: f64,
    pub active_count: f64,
    pub energy_sum_j: f64,
    pub battery_mean_j: f64,
    pub z_queue: f64,
    pub lyapunov: f64,
}

/// Per-node trajectories in normalized energy units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeLog {
    /// `battery[t][i]` for `t = 0..=horizon`.
    pub battery: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
    pub harvested: Vec<Vec<f64>>,
    pub bits: Vec<Vec<u32>>,
    pub brownout: Vec<Vec<bool>>,
    pub overhead: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceSummary {
    pub bmse: f64,
    pub err_empirical: f64,
    pub active: f64,
    pub energy_j: f64,
    pub battery_j: f64,
    pub z_queue: f64,
}

impl TraceSummary {
    fn fields(&self) -> [f64; 6] {
        [
            self.bmse,
            self.err_empirical,
            self.active,
            self.energy_j,
            self.battery_j,
            self.z_queue,
        ]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self {
            bmse: f[0],
            err_empirical: f[1],
            active: f[2],
            energy_j: f[3],
            battery_j: f[4],
            z_queue: f[5],
        }
    }
}

/// Time means over `records[from..]`.
pub fn summarize(records: &[SlotRecord], from: usize) -> TraceSummary {
    let tail = &records[from.min(records.len())..];
    if tail.is_empty() {
        return TraceSummary::default();
    }
    let n = tail.len() as f64;
    let mut f = [0.0; 6];
    for r in tail {
        f[0] += r.bmse_model;
        f[1] += r.err_empirical;
        f[2] += r.active_count;
        f[3] += r.energy_sum_j;
        f[4] += r.battery_mean_j;
        f[5] += r.z_queue;
    }
    TraceSummary::from_fields(f.map(|x| x / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub seed: u64,
    pub records: Vec<SlotRecord>,
    pub burn_in: usize,
    pub energy_unit_j: f64,
    /// Per-node extremes over `t = 0..=horizon`, joules.
    pub battery_min_j: Vec<f64>,
    pub battery_max_j: Vec<f64>,
    /// Node-slot pairs above the upper battery bound.
    pub upper_violations: usize,
    /// Node-slot pairs below the lower bound, when one applies.
    pub lower_violations: usize,
    /// Node-slot pairs where an idle node could not cover its overhead.
    pub brownouts: usize,
    pub node_log: Option<NodeLog>,
}

impl MetricsTrace {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    pub fn summary(&self) -> TraceSummary {
        summarize(&self.records, self.burn_in)
    }

    pub fn bound_violations(&self) -> usize {
        self.upper_violations + self.lower_violations
    }
}

fn state_of<T: Scalar>(s: &Scenario<T>, battery: &[T]) -> Vec<NodeEnergyState<T>> {
    (0..s.node_count())
        .map(|i| NodeEnergyState {
            battery: battery[i],
            offset: s.offsets[i],
            overhead: s.overhead[i],
            e_max: s.e_max[i],
        })
        .collect()
}

/// Counts of batteries above the upper and below the lower bound.
fn out_of_bounds<T: Scalar>(s: &Scenario<T>, battery: &[T]) -> (usize, usize) {
    let upper = battery.iter().zip(&s.upper_bound).filter(|(b, u)| b > u).count();
    let lower = s.lower_bound.as_ref().map_or(0, |lo| {
        battery.iter().zip(lo).filter(|(b, l)| b < l).count()
    });
    (upper, lower)
}

/// Runs one trial on a prepared scenario.
pub fn run_trial_in<T: Scalar>(
    scenario: &Scenario<T>,
    cfg: &ExperimentConfig,
    seed: u64,
    log_nodes: bool,
) -> Result<MetricsTrace> {
    let s = scenario;
    let n = s.node_count();
    let horizon = cfg.sim.horizon;
    let unit = s.energy_unit_j;
    let prior = &s.prior;
    let slot_s = cfg.radio.params.slot_s;

    let mut rng_channel = stream_rng(seed, STREAM_CHANNEL);
    let mut rng_arrivals = stream_rng(seed, STREAM_ARRIVALS);
    let mut rng_signal = stream_rng(seed, STREAM_SIGNAL);
    let mut rng_quant = stream_rng(seed, STREAM_QUANTIZER);
    let mut rng_init = stream_rng(seed, STREAM_INIT);

    let mut prev_energy: Vec<T> = s
        .e_max
        .iter()
        .map(|&e| e * T::lit(rng_init.gen::<f64>()))
        .collect();
    let mut z = T::lit(match cfg.control.z0 {
        Some(z) => z,
        None => 1.0 - rng_init.gen::<f64>(),
    });
    let uses_z = cfg.control.algorithm != Algorithm::Alg1;
    let energy_params = EnergyMinParams {
        v: T::lit(cfg.control.v),
        gamma: T::lit(cfg.control.gamma),
        mu: T::lit(cfg.control.mu),
        solver: match cfg.control.algorithm {
            Algorithm::Alg2 => EnergySolver::Descent(cfg.control.descent),
            _ => EnergySolver::ClosedForm,
        },
        max_bits: s.max_bits,
    };
    let v = T::lit(cfg.control.v);

    let mut battery = s.initial_battery.clone();
    let mut records = Vec::with_capacity(horizon);
    let mut battery_min: Vec<f64> = battery.iter().map(|b| b.to_f64_lossy()).collect();
    let mut battery_max = battery_min.clone();
    let (mut upper_violations, mut lower_violations) = out_of_bounds(s, &battery);
    let mut brownouts = 0;
    let mut log = log_nodes.then(|| NodeLog {
        battery: vec![battery.iter().map(|b| b.to_f64_lossy()).collect()],
        overhead: s.overhead.iter().map(|e| e.to_f64_lossy()).collect(),
        ..NodeLog::default()
    });

    for t in 0..horizon {
        let draw = s.channel.sample::<T>(&mut rng_channel);
        let arrivals: Vec<T> = sample_arrivals(&s.arrivals, t, slot_s, n, &mut rng_arrivals);
        let signal = sample_slot(prior, &mut rng_signal);

        let states = state_of(s, &battery);
        let queues: Vec<T> = states.iter().map(|st| st.virtual_queue()).collect();
        let lyapunov = lyapunov_diagnostic(&queues);
        let z_now = z;
        let ctx = BmseContext::new(prior, &draw.cost, &prev_energy);
        let (decision, bmse_model): (ControlDecision<T>, T) = if uses_z {
            let out = alg23_slot(&states, &arrivals, z, &ctx, &energy_params)?;
            z = out.z_next;
            (out.decision, out.bmse)
        } else {
            let d = alg1_slot(&states, &ctx, &arrivals, v, s.max_bits)?;
            let b = bmse_for_bits(prior, &d.bits)?;
            (d, b)
        };

        let messages = (0..n)
            .map(|i| match decision.bits[i] {
                0 => Ok(None),
                b => quantize(signal.y[i], b, prior.amplitude, i, &mut rng_quant).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        let estimate = lmmse_estimate(prior, &FusionInput::new(messages))?;
        let err: T = estimate
            .iter()
            .zip(&signal.s)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();

        let battery_mean = battery.iter().copied().sum::<T>() / T::from_usize_exact(n);
        records.push(SlotRecord {
            slot: t,
            bmse_model: bmse_model.to_f64_lossy(),
            err_empirical: err.to_f64_lossy(),
            active_count: decision.active.len() as f64,
            energy_sum_j: decision.energy_sum().to_f64_lossy() * unit,
            battery_mean_j: battery_mean.to_f64_lossy() * unit,
            z_queue: if uses_z { z_now.to_f64_lossy() } else { 0.0 },
            lyapunov: lyapunov.to_f64_lossy(),
        });

        let mut brown = vec![false; n];
        for i in 0..n {
            let step = battery_step(states[i], decision.energy[i], decision.harvested[i])
                .map_err(|e| {
                    Error::ContractViolation(format!("seed {seed}, slot {t}, node {i}: {e}"))
                })?;
            battery[i] = step.state.battery;
            brown[i] = step.brownout;
            if step.brownout {
                brownouts += 1;
            }
            let b = battery[i].to_f64_lossy();
            battery_min[i] = battery_min[i].min(b);
            battery_max[i] = battery_max[i].max(b);
        }
        let (up, lo) = out_of_bounds(s, &battery);
        upper_violations += up;
        lower_violations += lo;
        if let Some(log) = log.as_mut() {
            log.battery.push(battery.iter().map(|b| b.to_f64_lossy()).collect());
            log.energy
                .push(decision.energy.iter().map(|e| e.to_f64_lossy()).collect());
            log.harvested
                .push(decision.harvested.iter().map(|r| r.to_f64_lossy()).collect());
            log.bits.push(decision.bits.clone());
            log.brownout.push(brown);
        }
        prev_energy = decision.energy;
    }

    Ok(MetricsTrace {
        seed,
        records,
        burn_in: cfg.sim.effective_burn_in().min(horizon),
        energy_unit_j: unit,
        battery_min_j: battery_min.iter().map(|b| b * unit).collect(),
        battery_max_j: battery_max.iter().map(|b| b * unit).collect(),
        upper_violations,
        lower_violations,
        brownouts,
        node_log: log,
    })
}

/// Builds the scenario and runs one trial at the configured precision.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsTrace> {
    match cfg.sim.precision {
        Precision::F64 => run_trial_in(&Scenario::<f64>::build(cfg)?, cfg, seed, false),
        Precision::F32 => run_trial_in(&Scenario::<f32>::build(cfg)?, cfg, seed, false),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub traces: Vec<MetricsTrace>,
    pub mean: TraceSummary,
    /// Sample standard deviation across trials (zero for one trial).
    pub std: TraceSummary,
}

impl MonteCarloResult {
    pub fn from_traces(traces: Vec<MetricsTrace>) -> Self {
        let summaries: Vec<[f64; 6]> = traces.iter().map(|t| t.summary().fields()).collect();
        let k = summaries.len() as f64;
        let mut mean = [0.0; 6];
        for s in &summaries {
            for j in 0..6 {
                mean[j] += s[j] / k;
            }
        }
        let mut var = [0.0; 6];
        if summaries.len() > 1 {
            for s in &summaries {
                for j in 0..6 {
                    var[j] += (s[j] - mean[j]).powi(2) / (k - 1.0);
                }
            }
        }
        Self {
            traces,
            mean: TraceSummary::from_fields(mean),
            std: TraceSummary::from_fields(var.map(f64::sqrt)),
        }
    }

    pub fn total_bound_violations(&self) -> usize {
        self.traces.iter().map(MetricsTrace::bound_violations).sum()
    }

    /// Slot-wise mean of the trial traces.
    pub fn mean_records(&self) -> Vec<SlotRecord> {
        slotwise_mean(&self.traces)
    }
}

pub fn slotwise_mean(traces: &[MetricsTrace]) -> Vec<SlotRecord> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let k = traces.len() as f64;
    (0..first.horizon())
        .map(|t| {
            let mut r = SlotRecord {
                slot: t,
                ..SlotRecord::default()
            };
            for tr in traces {
                let x = &tr.records[t];
                r.bmse_model += x.bmse_model / k;
                r.err_empirical += x.err_empirical / k;
                r.active_count += x.active_count / k;
                r.energy_sum_j += x.energy_sum_j / k;
                r.battery_mean_j += x.battery_mean_j / k;
                r.z_queue += x.z_queue / k;
                r.lyapunov += x.lyapunov / k;
            }
            r
        })
        .collect()
}

fn monte_carlo_in<T: Scalar>(cfg: &ExperimentConfig, n_trials: usize) -> Result<MonteCarloResult> {
    let scenario = Scenario::<T>::build(cfg)?;
    let traces = (0..n_trials)
        .into_par_iter()
        .map(|k| run_trial_in(&scenario, cfg, trial_seed(cfg.sim.seed, k), false))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloResult::from_traces(traces))
}

/// Runs `n_trials` independent trials concurrently; results are in trial
/// order and do not depend on scheduling.
pub fn run_monte_carlo(cfg: &ExperimentConfig, n_trials: usize) -> Result<MonteCarloResult> {
    if n_trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    match cfg.sim.precision {
        Precision::F64 => monte_carlo_in::<f64>(cfg, n_trials),
        Precision::F32 => monte_carlo_in::<f32>(cfg, n_trials),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.network.nodes = 6;
        c.network.subspace_dim = 2;
        c.sim.horizon = 200;
        c.sim.trials = 2;
        c
    }

    #[test]
    fn zero_horizon_gives_empty_trace() {
        let mut c = small();
        c.sim.horizon = 0;
        let t = run_trial(&c, 3).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.summary(), TraceSummary::default());
    }

    #[test]
    fn trace_is_deterministic() {
        let c = small();
        assert_eq!(run_trial(&c, 9).unwrap(), run_trial(&c, 9).unwrap());
        assert_ne!(run_trial(&c, 9).unwrap().records, run_trial(&c, 10).unwrap().records);
    }

    #[test]
    fn energy_unit_normalizes_e_max() {
        let s = Scenario::<f64>::build(&small()).unwrap();
        let max = s.e_max.iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(s.energy_unit_j > 0.0);
    }

    #[test]
    fn trial_seeds_are_prefix_stable() {
        let a: Vec<u64> = (0..4).map(|k| trial_seed(7, k)).collect();
        let b: Vec<u64> = (0..8).map(|k| trial_seed(7, k)).collect();
        assert_eq!(a[..], b[..4]);
        assert_ne!(trial_seed(7, 0), trial_seed(8, 0));
    }

    #[test]
    fn single_trial_aggregates_match_trace() {
        let c = small();
        let mc = run_monte_carlo(&c, 1).unwrap();
        assert_eq!(mc.mean, mc.traces[0].summary());
        assert_eq!(mc.std, TraceSummary::default());
    }

    #[test]
    fn benchmark_limits() {
        let s = Scenario::<f64>::build(&small()).unwrap();
        let b = benchmark_bmse_opt(&s.prior, 4).unwrap();
        assert!(b > 0.0 && b < s.prior.worst_bmse());
        assert!(benchmark_bmse_opt(&s.prior, 30).unwrap() < b);
    }
}
