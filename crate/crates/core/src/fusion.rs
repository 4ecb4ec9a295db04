//! LMMSE fusion at the fusion center and the BMSE as a function of the
//! per-node transmit energies, with its analytic gradient and the
//! per-node gradient bound used to size battery operating points.
//!
//! Everything is expressed through the information matrix
//! `L = C_s⁻¹ + Σ_i w_i u_i u_iᵀ`, whose inverse is the error covariance.
//! Idle nodes contribute `w_i = 0`, which is the same as dropping their
//! rows from `U`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Matrix, SpdFactor, SymmetricEigen};
use crate::quantizer::{quant_noise_variance, QuantizedMessage};
use crate::scalar::Scalar;
use crate::signal_model::SignalPrior;

/// Messages received in one slot; `None` marks an idle node.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput<T> {
    pub messages: Vec<Option<QuantizedMessage<T>>>,
}

impl<T: Scalar> FusionInput<T> {
    pub fn new(messages: Vec<Option<QuantizedMessage<T>>>) -> Self {
        Self { messages }
    }

    pub fn active_set(&self) -> Vec<usize> {
        self.messages
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|_| i))
            .collect()
    }

    pub fn bits(&self) -> Vec<u32> {
        self.messages.iter().map(|m| m.map_or(0, |m| m.bits)).collect()
    }
}

/// Diagonal of `C_w`: observation plus model quantization variance, or
/// `+∞` for a node sending zero bits.
pub fn noise_covariance_diag<T: Scalar>(prior: &SignalPrior<T>, bits: &[u32]) -> Vec<T> {
    bits.iter()
        .zip(&prior.noise_var)
        .map(|(&b, &var)| match quant_noise_variance(prior.amplitude, b) {
            Ok(q) => var + q,
            Err(_) => T::infinity(),
        })
        .collect()
}

/// `C_s⁻¹ + Σ_i w_i u_i u_iᵀ`.
pub fn information_matrix<T: Scalar>(prior: &SignalPrior<T>, weights: &[T]) -> Matrix<T> {
    let mut l = prior.precision.clone();
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            l.add_rank_one(w, prior.u(i));
        }
    }
    l
}

fn factor<T: Scalar>(l: &Matrix<T>) -> Result<SpdFactor<T>> {
    SpdFactor::new(l).map_err(|e| Error::Internal(format!("information matrix: {e}")))
}

fn weights_from_bits<T: Scalar>(prior: &SignalPrior<T>, bits: &[u32]) -> Vec<T> {
    noise_covariance_diag(prior, bits)
        .into_iter()
        .map(|v| if v.is_finite() && v > T::zero() { T::one() / v } else { T::zero() })
        .collect()
}

/// Error covariance `C_ε` of the LMMSE estimator for the given bit loads.
pub fn error_covariance<T: Scalar>(prior: &SignalPrior<T>, bits: &[u32]) -> Result<Matrix<T>> {
    let l = information_matrix(prior, &weights_from_bits(prior, bits));
    let f = factor(&l)?;
    let r = prior.subspace_dim();
    let mut out = Matrix::zeros(r, r);
    for j in 0..r {
        let mut e = vec![T::zero(); r];
        e[j] = T::one();
        let col = f.solve(&e);
        for i in 0..r {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// BMSE when node `i` quantizes with `bits[i]` bits (zero means idle).
pub fn bmse_for_bits<T: Scalar>(prior: &SignalPrior<T>, bits: &[u32]) -> Result<T> {
    let l = information_matrix(prior, &weights_from_bits(prior, bits));
    Ok(factor(&l)?.inverse_trace())
}

/// LMMSE estimate of `s` from the received messages.
pub fn lmmse_estimate<T: Scalar>(prior: &SignalPrior<T>, input: &FusionInput<T>) -> Result<Vec<T>> {
    if input.messages.len() != prior.node_count() {
        return Err(invalid("one message slot per node required"));
    }
    let bits = input.bits();
    let noise = noise_covariance_diag(prior, &bits);
    let active = input.active_set();
    if active.is_empty() {
        // Prior-only estimate; for idle nodes m = 0 and the correction
        // term vanishes, leaving the prior mean.
        return Ok(prior.mean.clone());
    }
    let weights: Vec<T> = (0..prior.node_count())
        .map(|i| if active.contains(&i) { T::one() / noise[i] } else { T::zero() })
        .collect();
    let l = information_matrix(prior, &weights);
    let mean_field = prior.basis.mat_vec(&prior.mean);
    let r = prior.subspace_dim();
    let mut rhs = vec![T::zero(); r];
    for &i in &active {
        let m = input.messages[i].expect("active node has a message").value;
        let innov = (m - mean_field[i]) / noise[i];
        for (k, &u) in prior.u(i).iter().enumerate() {
            rhs[k] = rhs[k] + u * innov;
        }
    }
    let delta = factor(&l)?.solve(&rhs);
    Ok(prior.mean.iter().zip(delta).map(|(&m, d)| m + d).collect())
}

/// A BMSE evaluation point: prior, per-slot cost coefficients `c_i` and
/// transmit energies `e_i` (same energy unit as `c_i`).
#[derive(Debug, Clone, Copy)]
pub struct BmseContext<'a, T> {
    pub prior: &'a SignalPrior<T>,
    pub cost: &'a [T],
    pub energies: &'a [T],
}

impl<'a, T: Scalar> BmseContext<'a, T> {
    pub fn new(prior: &'a SignalPrior<T>, cost: &'a [T], energies: &'a [T]) -> Self {
        debug_assert_eq!(cost.len(), prior.node_count());
        debug_assert_eq!(energies.len(), prior.node_count());
        Self {
            prior,
            cost,
            energies,
        }
    }

    /// `A c_i / e_i`, the quantization standard deviation bought by `e_i`.
    fn rho(&self, i: usize) -> T {
        self.prior.amplitude * self.cost[i] / self.energies[i]
    }

    /// `e²/(e²σ² + A²c²)`; zero for an idle node.
    pub fn weight(&self, i: usize) -> T {
        self.weight_at(i, self.energies[i])
    }

    /// Node `i`'s weight if it spent `e` instead.
    pub fn weight_at(&self, i: usize, e: T) -> T {
        if e <= T::zero() {
            return T::zero();
        }
        let rho = self.prior.amplitude * self.cost[i] / e;
        T::one() / (self.prior.noise_var[i] + rho * rho)
    }

    /// `∂w_i/∂e_i = 2 e A² c² / (e²σ² + A²c²)²`, written in a form that
    /// stays representable when energies are tiny.
    pub fn weight_slope(&self, i: usize) -> T {
        let e = self.energies[i];
        if e <= T::zero() {
            return T::zero();
        }
        let rho = self.rho(i);
        let denom = self.prior.noise_var[i] + rho * rho;
        T::lit(2.0) * rho * rho / (e * denom * denom)
    }

    pub fn information(&self) -> Matrix<T> {
        let w: Vec<T> = (0..self.prior.node_count()).map(|i| self.weight(i)).collect();
        information_matrix(self.prior, &w)
    }
}

/// `L⁻¹` at the context's energies.
pub fn error_covariance_at<T: Scalar>(ctx: &BmseContext<'_, T>) -> Result<Matrix<T>> {
    let f = factor(&ctx.information())?;
    let r = ctx.prior.precision.rows();
    let cols: Vec<Vec<T>> = (0..r)
        .map(|j| f.solve(&Matrix::identity(r).column(j)))
        .collect();
    Ok(Matrix::from_fn(r, r, |i, j| (cols[j][i] + cols[i][j]) / T::lit(2.0)))
}

pub fn bmse<T: Scalar>(ctx: &BmseContext<'_, T>) -> Result<T> {
    Ok(factor(&ctx.information())?.inverse_trace())
}

/// `∂BMSE/∂e_i = −h_i · u_iᵀ L⁻² u_i`; exactly zero at `e_i = 0`.
pub fn bmse_gradient<T: Scalar>(ctx: &BmseContext<'_, T>) -> Result<Vec<T>> {
    Ok(bmse_and_gradient(ctx)?.1)
}

/// Value and gradient from a single factorization.
pub fn bmse_and_gradient<T: Scalar>(ctx: &BmseContext<'_, T>) -> Result<(T, Vec<T>)> {
    let f = factor(&ctx.information())?;
    let grad = (0..ctx.prior.node_count())
        .map(|i| {
            let h = ctx.weight_slope(i);
            if h == T::zero() {
                T::zero()
            } else {
                -h * f.inv_sq_quadratic(ctx.prior.u(i))
            }
        })
        .collect();
    Ok((f.inverse_trace(), grad))
}

/// Gradient-magnitude bound for node `i`:
/// `Tr{(C_s⁻¹ + σ_i⁻² u_i u_iᵀ)⁻² u_i u_iᵀ} / (2 e_i^max σ_i²)`.
pub fn g_i_max<T: Scalar>(prior: &SignalPrior<T>, i: usize, e_max: T) -> Result<T> {
    if i >= prior.node_count() {
        return Err(invalid(format!("node index {i} out of range")));
    }
    if !(e_max > T::zero()) {
        return Err(invalid("e_max must be positive"));
    }
    let var = prior.noise_var[i];
    if !(var > T::zero()) {
        return Err(invalid(format!(
            "gradient bound undefined for node {i} with zero observation noise"
        )));
    }
    let mut l = prior.precision.clone();
    l.add_rank_one(T::one() / var, prior.u(i));
    let q = factor(&l)?.inv_sq_quadratic(prior.u(i));
    Ok(q / (T::lit(2.0) * e_max * var))
}

/// Upper bound on `|∂BMSE/∂e_i|` at `e_i = e_max` valid for every channel
/// and every state of the other nodes:
/// `λ_max(C_s) · q / (2 e_max (σ_i² + q))` with `q = u_iᵀ C_s u_i`.
///
/// With `K` the inverse information of the other nodes (`K ⪯ C_s`), the
/// gradient is `2ρ²‖K u‖² / (e (σ² + ρ² + uᵀK u)²)`, whose supremum over
/// `ρ²` is `‖K u‖² / (2e (σ² + uᵀK u))`; `‖K u‖² ≤ λ_max(C_s) uᵀK u`
/// and monotonicity in `uᵀK u` give the bound. It is tight for `r = 1`.
pub fn gradient_bound<T: Scalar>(prior: &SignalPrior<T>, i: usize, e_max: T) -> Result<T> {
    if i >= prior.node_count() {
        return Err(invalid(format!("node index {i} out of range")));
    }
    if !(e_max > T::zero()) {
        return Err(invalid("e_max must be positive"));
    }
    let u = prior.u(i);
    let q = dot(u, &prior.covariance.mat_vec(u));
    let var = prior.noise_var[i];
    if !(var + q > T::zero()) {
        return Err(invalid(format!("gradient bound undefined for node {i}")));
    }
    let lambda_max = SymmetricEigen::new(&prior.covariance)?
        .eigenvalues
        .last()
        .copied()
        .unwrap_or_else(T::zero);
    Ok(lambda_max * q / (T::lit(2.0) * e_max * (var + q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{build_subspace, build_topology, make_signal_prior};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_prior(cs: f64, var: f64) -> SignalPrior<f64> {
        SignalPrior::new(
            Matrix::identity(1),
            vec![0.0],
            Matrix::from_row_slice(1, 1, &[cs]),
            vec![var],
            1.0,
        )
        .unwrap()
    }

    fn net_prior(n: usize, r: usize, seed: u64) -> SignalPrior<f64> {
        let t = build_topology(n, 100.0, 0.25, seed).unwrap();
        let u = build_subspace(&t, r).unwrap();
        make_signal_prior(&u, -2.0, 1e-2, 1.0, seed + 1).unwrap()
    }

    #[test]
    fn error_covariance_inverts_information() {
        let p = net_prior(6, 3, 4);
        let cost = [0.1, 0.2, 0.05, 0.3, 0.1, 0.2];
        let e = [1.0, 0.0, 0.4, 2.0, 0.01, 0.7];
        let ctx = BmseContext::new(&p, &cost, &e);
        let c = error_covariance_at(&ctx).unwrap();
        assert_relative_eq!(c.trace(), bmse(&ctx).unwrap(), max_relative = 1e-12);
        let id = c.matmul(&ctx.information());
        assert!(id.max_abs_diff(&Matrix::identity(3)) < 1e-10);
        assert_eq!(ctx.weight_at(2, 0.4), ctx.weight(2));
        assert_eq!(ctx.weight_at(2, 0.0), 0.0);
    }

    #[test]
    fn noise_diag_entries() {
        let p = scalar_prior(1.0, 1e-4);
        assert_relative_eq!(noise_covariance_diag(&p, &[1])[0], 1.0001, epsilon = 1e-15);
        assert!(noise_covariance_diag(&p, &[0])[0].is_infinite());
        assert_relative_eq!(noise_covariance_diag(&p, &[4])[0], 1e-4 + 1.0 / 225.0);
    }

    #[test]
    fn empty_set_returns_prior_mean() {
        let p = net_prior(5, 2, 1);
        let est = lmmse_estimate(&p, &FusionInput::new(vec![None; 5])).unwrap();
        assert_eq!(est, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_lmmse() {
        // C_w = σ² + A²/(2^b−1)² = 0 + 1 at b = 1.
        let p = scalar_prior(1.0, 0.0);
        let msg = QuantizedMessage {
            value: 0.8,
            bits: 1,
            node: 0,
        };
        let est = lmmse_estimate(&p, &FusionInput::new(vec![Some(msg)])).unwrap();
        assert_relative_eq!(est[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn zero_energy_gives_worst_case() {
        let p = net_prior(8, 3, 3);
        let c = vec![1.0; 8];
        let e = vec![0.0; 8];
        let v = bmse(&BmseContext::new(&p, &c, &e)).unwrap();
        assert_relative_eq!(v, p.worst_bmse(), epsilon = 1e-14);
        assert!(bmse_gradient(&BmseContext::new(&p, &c, &e))
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_bmse() {
        // σ² = 0.01 and A²c²/e² = 0.03 → 1/(1 + 25).
        let p = scalar_prior(1.0, 0.01);
        let c = [0.03f64.sqrt()];
        let e = [1.0];
        let v = bmse(&BmseContext::new(&p, &c, &e)).unwrap();
        assert_relative_eq!(v, 1.0 / 26.0, epsilon = 1e-15);
    }

    #[test]
    fn idle_node_equals_reduced_network() {
        let p = net_prior(6, 2, 5);
        let c = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let e = vec![1.0, 0.0, 2.0, 1.5, 0.7, 0.9];
        let full = bmse(&BmseContext::new(&p, &c, &e)).unwrap();
        let keep = [0usize, 2, 3, 4, 5];
        let reduced = SignalPrior::new(
            p.basis.select_rows(&keep),
            p.mean.clone(),
            p.covariance.clone(),
            keep.iter().map(|&i| p.noise_var[i]).collect(),
            p.amplitude,
        )
        .unwrap();
        let rc: Vec<f64> = keep.iter().map(|&i| c[i]).collect();
        let re: Vec<f64> = keep.iter().map(|&i| e[i]).collect();
        let red = bmse(&BmseContext::new(&reduced, &rc, &re)).unwrap();
        assert!((full - red).abs() < 1e-12);
    }

    #[test]
    fn bits_and_energy_views_agree() {
        // e = c(2^b − 1) makes A²c²/e² the model quantization variance.
        let p = net_prior(6, 3, 8);
        let c = vec![0.3, 0.5, 0.2, 0.9, 0.4, 0.1];
        let bits = [0u32, 1, 2, 3, 4, 4];
        let e: Vec<f64> = bits
            .iter()
            .zip(&c)
            .map(|(&b, &ci)| ci * ((1u64 << b) - 1) as f64)
            .collect();
        let a = bmse_for_bits(&p, &bits).unwrap();
        let b = bmse(&BmseContext::new(&p, &c, &e)).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-14);
        assert_relative_eq!(error_covariance(&p, &bits).unwrap().trace(), a, epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let p = net_prior(6, 3, 100 + trial);
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..1.0)).collect();
            let e: Vec<f64> = c.iter().map(|ci| ci * rng.gen_range(1.0..15.0)).collect();
            let g = bmse_gradient(&BmseContext::new(&p, &c, &e)).unwrap();
            for i in 0..6 {
                let h = 1e-6 * e[i];
                let mut ep = e.clone();
                ep[i] += h;
                let mut em = e.clone();
                em[i] -= h;
                let fp = bmse(&BmseContext::new(&p, &c, &ep)).unwrap();
                let fm = bmse(&BmseContext::new(&p, &c, &em)).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!(((g[i] - fd) / fd).abs() < 1e-5, "trial {trial} node {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn scalar_gradient_bound() {
        let p = scalar_prior(1.0, 1.0);
        assert_relative_eq!(g_i_max(&p, 0, 1.0).unwrap(), 0.125, epsilon = 1e-15);
        assert_relative_eq!(g_i_max(&p, 0, 4.0).unwrap(), 0.125 / 4.0, epsilon = 1e-15);
        assert!(g_i_max(&scalar_prior(1.0, 0.0), 0, 1.0).is_err());
        assert!(g_i_max(&p, 0, 0.0).is_err());
    }

    #[test]
    fn closed_form_bound_is_exceeded_in_scalar_case() {
        // |g(ρ²)| = 2ρ²/(2+ρ²)² peaks at ρ² = 2 with value 1/4.
        let p = scalar_prior(1.0, 1.0);
        let g = bmse_gradient(&BmseContext::new(&p, &[2f64.sqrt()], &[1.0])).unwrap()[0];
        assert_relative_eq!(g, -0.25, epsilon = 1e-14);
        assert!(g.abs() > g_i_max(&p, 0, 1.0).unwrap());
        assert_relative_eq!(gradient_bound(&p, 0, 1.0).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn gradient_bound_holds_on_random_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..5 {
            let p = net_prior(8, 3, seed);
            let e_max: Vec<f64> = (0..8).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let bounds: Vec<f64> = (0..8).map(|i| gradient_bound(&p, i, e_max[i]).unwrap()).collect();
            for _ in 0..2000 {
                let c: Vec<f64> = (0..8).map(|_| 10f64.powf(rng.gen_range(-6.0..3.0))).collect();
                let e: Vec<f64> = (0..8)
                    .map(|j| if rng.gen::<bool>() { e_max[j] } else { 0.0 })
                    .collect();
                let g = bmse_gradient(&BmseContext::new(&p, &c, &e)).unwrap();
                for i in 0..8 {
                    if e[i] > 0.0 {
                        assert!(g[i].abs() <= bounds[i] * (1.0 + 1e-12), "{} > {}", g[i].abs(), bounds[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let p64 = net_prior(6, 2, 9);
        let p = SignalPrior::<f32>::new(
            p64.basis.cast(),
            vec![0.0; 2],
            p64.covariance.cast(),
            p64.noise_var.iter().map(|&v| v as f32).collect(),
            1.0,
        )
        .unwrap();
        let c = vec![0.2f32; 6];
        let e = vec![1.0f32; 6];
        let v32 = bmse(&BmseContext::new(&p, &c, &e)).unwrap();
        let v64 = bmse(&BmseContext::new(&p64, &[0.2; 6], &[1.0; 6])).unwrap();
        assert!((v32 as f64 - v64).abs() / v64 < 1e-4);
    }

    proptest! {
        #[test]
        fn monotone_and_signed(
            seed in 0u64..50,
            c in proptest::collection::vec(0.01f64..2.0, 5),
            e in proptest::collection::vec(0.0f64..5.0, 5),
            bump in proptest::collection::vec(0.0f64..2.0, 5),
        ) {
            let p = net_prior(5, 2, seed);
            let ctx = BmseContext::new(&p, &c, &e);
            let (v, g) = bmse_and_gradient(&ctx).unwrap();
            prop_assert!(v >= 0.0 && v <= p.worst_bmse() + 1e-12);
            prop_assert!(g.iter().all(|&gi| gi <= 0.0));
            let e2: Vec<f64> = e.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let v2 = bmse(&BmseContext::new(&p, &c, &e2)).unwrap();
            prop_assert!(v2 <= v + 1e-12);
        }
    }
}
