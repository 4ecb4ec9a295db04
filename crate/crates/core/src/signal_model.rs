//! Network geometry, the graph-Laplacian signal subspace, the Gaussian
//! signal prior and per-slot noisy observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::Scalar;

/// Nodes scattered uniformly on a disk, joined by a dense Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology<T> {
    /// Node coordinates in meters, disk centered at the origin.
    pub positions: Vec<[T; 2]>,
    pub radius_m: T,
    pub adjacency: Matrix<T>,
    pub laplacian: Matrix<T>,
}

impl<T: Scalar> NetworkTopology<T> {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    /// Euclidean distance of node `i` to `point`.
    pub fn distance_to(&self, i: usize, point: [T; 2]) -> T {
        let [x, y] = self.positions[i];
        ((x - point[0]).powi(2) + (y - point[1]).powi(2)).sqrt()
    }
}

/// Samples `n` points uniformly on a disk and builds the kernel graph.
///
/// Pairwise distances are divided by the disk diameter before the kernel
/// `exp(-d² / (2·kernel_variance))` is applied.
pub fn build_topology<T: Scalar>(
    n: usize,
    radius_m: f64,
    kernel_variance: f64,
    seed: u64,
) -> Result<NetworkTopology<T>> {
    if n < 2 {
        return Err(invalid(format!("node count must be at least 2, got {n}")));
    }
    if !(radius_m > 0.0) {
        return Err(invalid(format!("disk radius must be positive, got {radius_m}")));
    }
    if !(kernel_variance > 0.0) {
        return Err(invalid(format!(
            "kernel variance must be positive, got {kernel_variance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let rho = radius_m * rng.gen::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.gen::<f64>();
            [rho * phi.cos(), rho * phi.sin()]
        })
        .collect();
    topology_from_positions(&positions, radius_m, kernel_variance)
}

/// Builds adjacency and Laplacian for explicit coordinates.
pub fn topology_from_positions<T: Scalar>(
    positions: &[[f64; 2]],
    radius_m: f64,
    kernel_variance: f64,
) -> Result<NetworkTopology<T>> {
    let n = positions.len();
    if n < 2 {
        return Err(invalid("need at least two nodes"));
    }
    let diameter = 2.0 * radius_m;
    let mut adjacency = Matrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            let d = (dx * dx + dy * dy).sqrt() / diameter;
            let w = (-d * d / (2.0 * kernel_variance)).exp();
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
        }
    }
    let mut laplacian = adjacency.scale(-1.0);
    for i in 0..n {
        laplacian[(i, i)] = adjacency.row(i).iter().sum();
    }
    Ok(NetworkTopology {
        positions: positions.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect(),
        radius_m: T::lit(radius_m),
        adjacency: adjacency.cast(),
        laplacian: laplacian.cast(),
    })
}

/// The `r` Laplacian eigenvectors with smallest eigenvalues, as columns.
///
/// Each column is sign-normalized so its first nonzero entry is positive.
pub fn build_subspace<T: Scalar>(topology: &NetworkTopology<T>, r: usize) -> Result<Matrix<T>> {
    let n = topology.node_count();
    if r == 0 || r > n {
        return Err(invalid(format!("subspace dimension {r} outside 1..={n}")));
    }
    let eig = SymmetricEigen::new(&topology.laplacian)?;
    let tiny = T::epsilon().sqrt();
    let mut basis = Matrix::zeros(n, r);
    for j in 0..r {
        let col = eig.eigenvectors.column(j);
        let flip = col
            .iter()
            .find(|x| x.abs() > tiny)
            .map_or(false, |&x| x < T::zero());
        for (i, &v) in col.iter().enumerate() {
            basis[(i, j)] = if flip { -v } else { v };
        }
    }
    Ok(basis)
}

/// Prior knowledge at the fusion center: subspace, signal statistics and
/// per-node observation noise.
#[derive(Debug, Clone)]
pub struct SignalPrior<T> {
    pub basis: Matrix<T>,
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    /// `C_s⁻¹`, formed once from the Cholesky factor.
    pub precision: Matrix<T>,
    cov_factor: Cholesky<T>,
    pub noise_var: Vec<T>,
    /// Sensors observe values in `[-amplitude, amplitude]`.
    pub amplitude: T,
}

impl<T: Scalar> SignalPrior<T> {
    pub fn new(
        basis: Matrix<T>,
        mean: Vec<T>,
        covariance: Matrix<T>,
        noise_var: Vec<T>,
        amplitude: T,
    ) -> Result<Self> {
        let (n, r) = (basis.rows(), basis.cols());
        if r == 0 || r > n {
            return Err(invalid(format!("basis shape {n}x{r} invalid")));
        }
        if mean.len() != r || covariance.rows() != r || !covariance.is_square() {
            return Err(invalid("mean/covariance dimension does not match basis"));
        }
        if noise_var.len() != n || noise_var.iter().any(|v| !(*v >= T::zero())) {
            return Err(invalid("noise variances must be N nonnegative values"));
        }
        if !(amplitude > T::zero()) {
            return Err(invalid("amplitude must be positive"));
        }
        let cov_factor = Cholesky::new(&covariance)
            .map_err(|_| invalid("signal covariance must be positive definite"))?;
        let precision = cov_factor.inverse();
        Ok(Self {
            basis,
            mean,
            covariance,
            precision,
            cov_factor,
            noise_var,
            amplitude,
        })
    }

    pub fn node_count(&self) -> usize {
        self.basis.rows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.cols()
    }

    /// Row `i` of the basis.
    pub fn u(&self, i: usize) -> &[T] {
        self.basis.row(i)
    }

    /// BMSE with no transmissions: `Tr{C_s}`.
    pub fn worst_bmse(&self) -> T {
        self.covariance.trace()
    }

    pub fn covariance_factor(&self) -> &Cholesky<T> {
        &self.cov_factor
    }
}

/// Zero-mean prior with a random covariance whose trace is pinned to
/// `10^(worst_bmse_db/10)`.
pub fn make_signal_prior<T: Scalar>(
    basis: &Matrix<T>,
    worst_bmse_db: f64,
    noise_var: f64,
    amplitude: f64,
    seed: u64,
) -> Result<SignalPrior<T>> {
    if !worst_bmse_db.is_finite() {
        return Err(invalid("worst-case BMSE must be finite"));
    }
    if !(noise_var >= 0.0) {
        return Err(invalid(format!("noise variance must be nonnegative, got {noise_var}")));
    }
    let r = basis.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(r, &mut rng);
    let mut lambda: Vec<f64> = (0..r).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let target = 10f64.powf(worst_bmse_db / 10.0);
    let sum: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l *= target / sum);
    let cov = q.matmul(&Matrix::from_diagonal(&lambda)).matmul(&q.transpose());
    let cov = Matrix::from_fn(r, r, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    // Q diag(λ) Qᵀ has the right trace up to rounding; pin it exactly.
    let drift = (target - cov.trace()) / r as f64;
    let cov = Matrix::from_fn(r, r, |i, j| cov[(i, j)] + if i == j { drift } else { 0.0 });
    SignalPrior::new(
        basis.clone(),
        vec![T::zero(); r],
        cov.cast(),
        vec![T::lit(noise_var); basis.rows()],
        T::lit(amplitude),
    )
}

/// Haar-ish random orthogonal matrix via Gram-Schmidt on Gaussian columns.
fn random_orthogonal(r: usize, rng: &mut impl Rng) -> Matrix<f64> {
    loop {
        let g = Matrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
        let mut ok = true;
        for j in 0..r {
            let mut v = g.column(j);
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        if ok {
            return Matrix::from_fn(r, r, |i, j| cols[j][i]);
        }
    }
}

/// One slot of ground truth and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSignal<T> {
    pub s: Vec<T>,
    pub x: Vec<T>,
    /// Noisy observations, clamped to `[-A, A]`.
    pub y: Vec<T>,
}

pub fn sample_slot<T: Scalar>(prior: &SignalPrior<T>, rng: &mut impl Rng) -> SlotSignal<T> {
    let r = prior.subspace_dim();
    let z: Vec<T> = (0..r)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let l = prior.covariance_factor().lower();
    let s: Vec<T> = (0..r)
        .map(|i| {
            prior.mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<T>()
        })
        .collect();
    let x = prior.basis.mat_vec(&s);
    let a = prior.amplitude;
    let y = x
        .iter()
        .zip(&prior.noise_var)
        .map(|(&xi, &var)| {
            let v = T::lit(rng.sample::<f64, _>(StandardNormal)) * var.sqrt();
            (xi + v).max(-a).min(a)
        })
        .collect();
    SlotSignal { s, x, y }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_net() -> NetworkTopology<f64> {
        build_topology(50, 100.0, 0.25, 7).unwrap()
    }

    #[test]
    fn two_nodes_have_one_edge() {
        let t: NetworkTopology<f64> = build_topology(2, 5.0, 0.25, 1).unwrap();
        assert!(t.adjacency[(0, 1)] > 0.0);
        assert_eq!(t.adjacency[(0, 1)], t.adjacency[(1, 0)]);
        assert_eq!(t.adjacency[(0, 0)], 0.0);
        for i in 0..2 {
            assert!(t.laplacian.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_topology::<f64>(1, 1.0, 1.0, 0).is_err());
        assert!(build_topology::<f64>(5, 0.0, 1.0, 0).is_err());
        assert!(build_topology::<f64>(5, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn reference_topology_is_valid_laplacian() {
        let t = reference_net();
        assert!(t.adjacency.is_symmetric(0.0));
        assert!(t.positions.iter().all(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() <= 100.0));
        for i in 0..50 {
            assert_eq!(t.adjacency[(i, i)], 0.0);
            assert!(t.laplacian.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        let eig = SymmetricEigen::new(&t.laplacian).unwrap();
        assert!(eig.eigenvalues[0] >= -1e-10);
    }

    #[test]
    fn same_seed_same_everything() {
        let a = reference_net();
        let b = reference_net();
        assert_eq!(a, b);
        let ua = build_subspace(&a, 6).unwrap();
        let pa = make_signal_prior(&ua, -2.0, 1e-4, 1.0, 3).unwrap();
        let pb = make_signal_prior(&ua, -2.0, 1e-4, 1.0, 3).unwrap();
        assert_eq!(pa.covariance, pb.covariance);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_slot(&pa, &mut r1), sample_slot(&pb, &mut r2));
    }

    #[test]
    fn subspace_is_orthonormal() {
        let t = reference_net();
        for r in [1, 6, 50] {
            let u = build_subspace(&t, r).unwrap();
            let gram = u.transpose().matmul(&u);
            assert!(gram.max_abs_diff(&Matrix::identity(r)) < 1e-10, "r={r}");
        }
        assert!(build_subspace(&t, 51).is_err());
    }

    #[test]
    fn first_eigenvector_is_constant() {
        let t: NetworkTopology<f64> = build_topology(12, 50.0, 0.25, 4).unwrap();
        let u = build_subspace(&t, 1).unwrap();
        let c = 1.0 / 12f64.sqrt();
        for i in 0..12 {
            assert_relative_eq!(u[(i, 0)], c, epsilon = 1e-10);
        }
    }

    #[test]
    fn prior_trace_matches_db_target() {
        let t = reference_net();
        let u = build_subspace(&t, 6).unwrap();
        for (db, want) in [(-2.0, 10f64.powf(-0.2)), (0.0, 1.0)] {
            for seed in 0..5 {
                let p = make_signal_prior(&u, db, 1e-4, 1.0, seed).unwrap();
                assert!((p.worst_bmse() - want).abs() < 1e-12);
                assert!(p.covariance.is_symmetric(0.0));
                let eig = SymmetricEigen::new(&p.covariance).unwrap();
                assert!(eig.eigenvalues[0] > 0.0);
                assert!(p.mean.iter().all(|&m| m == 0.0));
            }
        }
        assert_relative_eq!(10f64.powf(-0.2), 0.630957, epsilon = 1e-6);
    }

    #[test]
    fn zero_noise_observes_field_exactly() {
        let t: NetworkTopology<f64> = build_topology(8, 10.0, 0.25, 2).unwrap();
        let u = build_subspace(&t, 3).unwrap();
        let p = make_signal_prior(&u, -2.0, 0.0, 10.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let slot = sample_slot(&p, &mut rng);
            assert_eq!(slot.x, slot.y);
            assert_eq!(slot.x, u.mat_vec(&slot.s));
        }
    }

    #[test]
    fn observations_are_clamped() {
        let t: NetworkTopology<f64> = build_topology(8, 10.0, 0.25, 2).unwrap();
        let u = build_subspace(&t, 3).unwrap();
        let p = make_signal_prior(&u, 10.0, 1.0, 0.5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            assert!(sample_slot(&p, &mut rng).y.iter().all(|y| y.abs() <= 0.5));
        }
    }

    #[test]
    fn sample_covariance_matches_prior() {
        let t: NetworkTopology<f64> = build_topology(10, 100.0, 0.25, 11).unwrap();
        let u = build_subspace(&t, 3).unwrap();
        let p = make_signal_prior(&u, -2.0, 1e-4, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let mut acc = Matrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let s = sample_slot(&p, &mut rng).s;
            acc.add_rank_one(1.0, &s);
        }
        let sample = acc.scale(1.0 / n as f64);
        let rel = sample.sub(&p.covariance).frobenius_norm() / p.covariance.frobenius_norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn field_covariance_with_identity_prior() {
        let t: NetworkTopology<f64> = build_topology(6, 100.0, 0.25, 21).unwrap();
        let u = build_subspace(&t, 2).unwrap();
        let p = SignalPrior::new(
            u.clone(),
            vec![0.0; 2],
            Matrix::identity(2),
            vec![0.0; 6],
            100.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 100_000;
        let mut acc = Matrix::<f64>::zeros(6, 6);
        for _ in 0..n {
            acc.add_rank_one(1.0, &sample_slot(&p, &mut rng).x);
        }
        let want = u.matmul(&u.transpose());
        let got = acc.scale(1.0 / n as f64);
        let rel = got.sub(&want).frobenius_norm() / want.frobenius_norm();
        assert!(rel < 0.05, "relative error {rel}");
    }
}
