//! Transmit-energy minimization under an average-BMSE target.
//!
//! The target is enforced through the virtual queue
//! `Z(t+1) = max(Z(t) + μ(BMSE(t) − γ), 0)`. Per slot the controller
//! minimizes `Σ_i (V − B̃_i) e_i + Z·BMSE(e)` over
//! `0 ≤ e_i ≤ min(e_i^max, B_i − e_o,i)`, either with a local descent
//! solver or through the closed form obtained by linearizing the BMSE.

use crate::error::Result;
use crate::fusion::{
    bmse, bmse_and_gradient, bmse_for_bits, bmse_gradient, error_covariance_at, BmseContext,
};
use crate::linalg::{dot, norm_sq, Matrix};
use crate::radio_energy::NodeEnergyState;
use crate::scalar::Scalar;
use crate::signal_model::SignalPrior;

use super::{harvest_decision, ControlDecision};

/// Projected gradient descent settings for the per-slot problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentParams {
    pub max_iters: usize,
    /// Initial step as a fraction of each node's `e_max`.
    pub step: f64,
    pub backtrack: f64,
    pub tolerance: f64,
}

impl Default for DescentParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step: 0.1,
            backtrack: 0.5,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergySolver {
    /// Solve the per-slot problem by descent.
    Descent(DescentParams),
    /// Linearize the BMSE and use the resulting threshold rule.
    ClosedForm,
}

pub fn z_update<T: Scalar>(z: T, mu: T, bmse_t: T, gamma: T) -> T {
    (z + mu * (bmse_t - gamma)).max(T::zero())
}

/// `Σ (V − B̃_i) e_i + Z·BMSE(e)`.
pub fn slot_objective<T: Scalar>(
    states: &[NodeEnergyState<T>],
    z: T,
    v: T,
    prior: &SignalPrior<T>,
    cost: &[T],
    energies: &[T],
) -> Result<T> {
    let linear: T = states
        .iter()
        .zip(energies)
        .map(|(s, &e)| (v - s.virtual_queue()) * e)
        .sum();
    Ok(linear + z * bmse(&BmseContext::new(prior, cost, energies))?)
}

fn upper_bounds<T: Scalar>(states: &[NodeEnergyState<T>]) -> Vec<T> {
    states.iter().map(|s| s.spendable()).collect()
}

fn project<T: Scalar>(x: &mut [T], upper: &[T]) {
    for (xi, &u) in x.iter_mut().zip(upper) {
        *xi = xi.max(T::zero()).min(u);
    }
}

/// Objective and gradient.
fn evaluate<T: Scalar>(
    states: &[NodeEnergyState<T>],
    z: T,
    v: T,
    prior: &SignalPrior<T>,
    cost: &[T],
    e: &[T],
) -> Result<(T, Vec<T>)> {
    let (b, g) = bmse_and_gradient(&BmseContext::new(prior, cost, e))?;
    let mut value = z * b;
    let mut grad = Vec::with_capacity(e.len());
    for ((s, &ei), gi) in states.iter().zip(e).zip(g) {
        let lin = v - s.virtual_queue();
        value = value + lin * ei;
        grad.push(lin + z * gi);
    }
    Ok((value, grad))
}

/// Projected gradient descent with backtracking, run in coordinates
/// scaled by each node's `e_max`. Returns the final point and objective.
fn descend<T: Scalar>(
    states: &[NodeEnergyState<T>],
    z: T,
    v: T,
    prior: &SignalPrior<T>,
    cost: &[T],
    start: &[T],
    upper: &[T],
    params: &DescentParams,
) -> Result<(Vec<T>, T)> {
    let scale: Vec<T> = states.iter().map(|s| s.e_max.max(T::min_positive_value())).collect();
    let mut x = start.to_vec();
    project(&mut x, upper);
    let (mut fx, mut grad) = evaluate(states, z, v, prior, cost, &x)?;
    let tol = T::lit(params.tolerance);
    let shrink = T::lit(params.backtrack);
    let armijo = T::lit(1e-4);
    let mut step = T::lit(params.step);
    for _ in 0..params.max_iters {
        // scaled gradient and its projected-gradient stationarity measure
        let gs: Vec<T> = grad.iter().zip(&scale).map(|(&g, &s)| g * s).collect();
        let mut pg = T::zero();
        for i in 0..x.len() {
            let moved = (x[i] - gs[i] * scale[i]).max(T::zero()).min(upper[i]);
            pg = pg.max(((moved - x[i]) / scale[i]).abs());
        }
        if pg < tol {
            break;
        }
        let gnorm = gs.iter().fold(T::zero(), |m, &g| m.max(g.abs()));
        if gnorm == T::zero() {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<T> = x
                .iter()
                .zip(&gs)
                .zip(&scale)
                .map(|((&xi, &g), &s)| xi - step * g / gnorm * s)
                .collect();
            project(&mut cand, upper);
            let moved: T = cand
                .iter()
                .zip(&x)
                .zip(&scale)
                .map(|((&c, &xi), &s)| ((c - xi) / s).powi(2))
                .sum();
            if moved == T::zero() {
                break;
            }
            let (fc, gc) = evaluate(states, z, v, prior, cost, &cand)?;
            if fc <= fx - armijo * gnorm * moved / step {
                x = cand;
                fx = fc;
                grad = gc;
                accepted = true;
                break;
            }
            step = step * shrink;
        }
        if !accepted {
            break;
        }
        step = (step / shrink).min(T::one());
    }
    Ok((x, fx))
}

/// One pass of coordinate search: each node in turn tries zero and a
/// geometric ladder of fractions of its upper bound, the others fixed.
///
/// The BMSE gradient vanishes at `e_i = 0` (quantization noise grows like
/// `1/e_i²`), so zero is a local minimum whenever `V > B̃_i`, and descent
/// cannot leave it towards the small interior optimum the ladder finds.
fn coordinate_pass<T: Scalar>(
    states: &[NodeEnergyState<T>],
    z: T,
    v: T,
    prior: &SignalPrior<T>,
    cost: &[T],
    x: &mut [T],
    upper: &[T],
) -> Result<T> {
    let start = x.to_vec();
    let ctx = BmseContext::new(prior, cost, &start);
    // L⁻¹, kept current with rank-one updates; moving e_i changes w_i by
    // d and the BMSE by −d‖L⁻¹u‖²/(1 + d·uᵀL⁻¹u)
    let mut p = error_covariance_at(&ctx)?;
    let r = p.rows();
    for i in 0..x.len() {
        let u = prior.u(i);
        let pu = p.mat_vec(u);
        let (a, b) = (dot(u, &pu), norm_sq(&pu));
        let lin = v - states[i].virtual_queue();
        let w0 = ctx.weight_at(i, x[i]);
        let change = |e: T| {
            let d = ctx.weight_at(i, e) - w0;
            lin * (e - x[i]) - z * d * b / (T::one() + d * a)
        };
        let ladder = (0..24).map(|k| upper[i] * T::lit(0.5f64.powi(k) * 0.75f64.powi(k % 2)));
        let mut best = (x[i], T::zero());
        for cand in std::iter::once(T::zero()).chain(ladder) {
            let c = change(cand);
            if c < best.1 {
                best = (cand, c);
            }
        }
        if best.0 != x[i] {
            let d = ctx.weight_at(i, best.0) - w0;
            let k = d / (T::one() + d * a);
            p = Matrix::from_fn(r, r, |j, l| p[(j, l)] - k * pu[j] * pu[l]);
            x[i] = best.0;
        }
    }
    slot_objective(states, z, v, prior, cost, x)
}

/// Approximately solves the per-slot problem.
///
/// Descent is started from the warm start `e(t−1)`, from the full-power
/// corner and from the linearized threshold point. The best local
/// solution then gets one coordinate pass and, if that helped, another
/// descent. The result never does worse than the warm start projected
/// into the box.
pub fn alg2_energy_solve<T: Scalar>(
    states: &[NodeEnergyState<T>],
    z: T,
    v: T,
    prior: &SignalPrior<T>,
    cost: &[T],
    warm: &[T],
    params: &DescentParams,
) -> Result<Vec<T>> {
    let upper = upper_bounds(states);
    let grad_warm = bmse_gradient(&BmseContext::new(prior, cost, warm))?;
    let linearized: Vec<T> = states
        .iter()
        .zip(&grad_warm)
        .map(|(s, &g)| alg3_energy_rule(s.virtual_queue(), v, z, g, s.battery, s.e_max, s.overhead))
        .collect();
    let mut best: Option<(Vec<T>, T)> = None;
    for start in [warm, upper.as_slice(), linearized.as_slice()] {
        let (x, f) = descend(states, z, v, prior, cost, start, &upper, params)?;
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    let (mut x, f) = best.expect("at least one start");
    if coordinate_pass(states, z, v, prior, cost, &mut x, &upper)? < f {
        x = descend(states, z, v, prior, cost, &x, &upper, params)?.0;
    }
    Ok(x)
}

/// `e_i = min(e_max, B_i − e_o) · 𝕀(B̃_i ≥ V + Z·∂BMSE/∂e_i)`; ties
/// transmit, and a node that cannot cover its overhead sends nothing.
pub fn alg3_energy_rule<T: Scalar>(
    queue: T,
    v: T,
    z: T,
    grad: T,
    battery: T,
    e_max: T,
    overhead: T,
) -> T {
    if queue >= v + z * grad {
        e_max.min(battery - overhead).max(T::zero())
    } else {
        T::zero()
    }
}

/// Controller settings shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMinParams<T> {
    pub v: T,
    pub gamma: T,
    pub mu: T,
    pub solver: EnergySolver,
    pub max_bits: u32,
}

/// Result of one slot: the decision, the BMSE it realizes at the fusion
/// center, and the updated queue.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySlot<T> {
    pub decision: ControlDecision<T>,
    pub bmse: T,
    pub z_next: T,
}

/// One slot of the controller. `ctx` holds this slot's costs and the
/// previous slot's energies.
pub fn alg23_slot<T: Scalar>(
    states: &[NodeEnergyState<T>],
    arrivals: &[T],
    z: T,
    ctx: &BmseContext<'_, T>,
    params: &EnergyMinParams<T>,
) -> Result<EnergySlot<T>> {
    let harvested: Vec<T> = states
        .iter()
        .zip(arrivals)
        .map(|(s, &r)| harvest_decision(s.battery, s.offset, r))
        .collect();
    let planned = match params.solver {
        EnergySolver::Descent(dp) => {
            alg2_energy_solve(states, z, params.v, ctx.prior, ctx.cost, ctx.energies, &dp)?
        }
        EnergySolver::ClosedForm => {
            let grad = bmse_gradient(ctx)?;
            states
                .iter()
                .zip(&grad)
                .map(|(s, &g)| {
                    alg3_energy_rule(s.virtual_queue(), params.v, z, g, s.battery, s.e_max, s.overhead)
                })
                .collect()
        }
    };
    let decision = ControlDecision::realize(planned, harvested, ctx.cost, params.max_bits);
    let realized = bmse_for_bits(ctx.prior, &decision.bits)?;
    let z_next = z_update(z, params.mu, realized, params.gamma);
    Ok(EnergySlot {
        decision,
        bmse: realized,
        z_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_relative_eq;

    #[test]
    fn queue_update() {
        assert_eq!(z_update(1.5, 0.3, 0.2, 0.2), 1.5);
        assert_eq!(z_update(1.0, 0.5, 0.0, 4.0), 0.0);
        assert_relative_eq!(z_update(2.0, 1.0, 1.0, 0.5), 2.5);
    }

    #[test]
    fn closed_form_rule() {
        // Z = 0: transmit iff B̃ ≥ V
        assert_eq!(alg3_energy_rule(2.0, 1.0, 0.0, -5.0, 10.0, 3.0, 0.5), 3.0);
        assert_eq!(alg3_energy_rule(0.5, 1.0, 0.0, -5.0, 10.0, 3.0, 0.5), 0.0);
        // idle last slot, below V
        assert_eq!(alg3_energy_rule(0.5, 1.0, 7.0, 0.0, 10.0, 3.0, 0.5), 0.0);
        // tie transmits, capped by battery
        assert_eq!(alg3_energy_rule(0.0, 1.0, 2.0, -0.5, 2.0, 3.0, 0.5), 1.5);
        // cannot afford the overhead
        assert_eq!(alg3_energy_rule(5.0, 1.0, 0.0, 0.0, 0.2, 3.0, 0.5), 0.0);
    }

    fn prior2() -> SignalPrior<f64> {
        let u = Matrix::from_row_slice(2, 1, &[0.6, 0.8]);
        SignalPrior::new(u, vec![0.0], Matrix::identity(1), vec![1e-2; 2], 1.0).unwrap()
    }

    fn state(b: f64, offset: f64) -> NodeEnergyState<f64> {
        NodeEnergyState {
            battery: b,
            offset,
            overhead: 0.1,
            e_max: 2.0,
        }
    }

    #[test]
    fn linear_cases() {
        let p = prior2();
        let cost = [0.1, 0.1];
        let dp = DescentParams::default();
        // Z = 0, V above every queue → nothing
        let s = [state(5.0, 4.0), state(4.5, 4.0)];
        let e = alg2_energy_solve(&s, 0.0, 3.0, &p, &cost, &[1.0, 1.0], &dp).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
        // Z = 0, every queue above V → upper bounds
        let s = [state(9.0, 4.0), state(1.5, -4.0)];
        let e = alg2_energy_solve(&s, 0.0, 3.0, &p, &cost, &[0.3, 0.7], &dp).unwrap();
        assert_eq!(e, vec![2.0, 1.4]);
    }

    #[test]
    fn never_worse_than_warm_start() {
        let p = prior2();
        let cost = [0.05, 0.2];
        let s = [state(3.0, 4.0), state(5.0, 4.0)];
        let warm = [0.4, 1.9];
        for z in [0.0, 0.5, 5.0, 50.0] {
            let e = alg2_energy_solve(&s, z, 1.0, &p, &cost, &warm, &DescentParams::default()).unwrap();
            let fe = slot_objective(&s, z, 1.0, &p, &cost, &e).unwrap();
            let fw = slot_objective(&s, z, 1.0, &p, &cost, &warm).unwrap();
            assert!(fe <= fw + 1e-12, "z={z}: {fe} > {fw}");
            assert!(e.iter().zip(&s).all(|(&x, st)| x >= 0.0 && x <= st.spendable()));
        }
    }

    #[test]
    fn infinite_offset_always_harvests() {
        let p = prior2();
        let cost = [0.05, 0.2];
        let prev = [0.0, 0.0];
        let ctx = BmseContext::new(&p, &cost, &prev);
        let s = [state(50.0, f64::INFINITY), state(0.0, f64::INFINITY)];
        let out = alg23_slot(
            &s,
            &[0.3, 0.6],
            1.0,
            &ctx,
            &EnergyMinParams {
                v: 1.0,
                gamma: 0.1,
                mu: 1.0,
                solver: EnergySolver::ClosedForm,
                max_bits: 4,
            },
        )
        .unwrap();
        assert_eq!(out.decision.harvested, vec![0.3, 0.6]);
        assert_relative_eq!(out.z_next, (1.0 + out.bmse - 0.1f64).max(0.0));
    }
}
