//! Coding rate `R(Z)`, kernelized coding rate `R(Z|K)` and the KRaM loss.
//!
//! With `c = d / (n eps^2)`:
//!
//! ```text
//! R(Z)   = 1/2 log2 det(I + c Z Z^T)
//! R(Z|K) = 1/2 log2 det(I + c (Z Z^T ⊙ K))
//! loss   = -R(Z|K) + lambda |R(Z) - b|
//! ```
//!
//! All log-determinants are taken on the n x n side through a Cholesky
//! factorization. The matrix is PSD plus identity, so a failed factorization
//! is retried with a small diagonal jitter before it is reported.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

const JITTER: [f64; 3] = [0.0, 1e-10, 1e-8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingRateParams {
    pub epsilon: f64,
}

impl Default for CodingRateParams {
    fn default() -> Self {
        CodingRateParams { epsilon: 0.5 }
    }
}

impl CodingRateParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(CodingRateParams { epsilon })
    }

    /// `d / (n eps^2)` for an n x d matrix.
    pub fn coefficient(&self, n: usize, d: usize) -> f64 {
        d as f64 / (n as f64 * self.epsilon * self.epsilon)
    }
}

/// Components of the KRaM loss, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub r_zk: f64,
    pub r_z: f64,
    pub constraint: f64,
    pub target_bits: f64,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
}

impl Factor {
    fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        for jitter in JITTER {
            let mut trial = m.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    trial[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(trial) {
                return Ok(Factor { chol });
            }
        }
        let min_eigenvalue = m.symmetric_eigenvalues().min();
        Err(Error::Cholesky { n, min_eigenvalue })
    }

    /// `1/2 log2 det`, summing log-diagonal terms in index order.
    fn half_log2_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut acc = 0.0;
        for i in 0..l.nrows() {
            acc += l[(i, i)].ln();
        }
        acc / std::f64::consts::LN_2
    }

    fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

fn check_z(z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(Error::Shape(format!("Z must be non-empty, got {}x{}", z.nrows(), z.ncols())));
    }
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("Z has a non-finite entry ({v})")));
    }
    Ok(())
}

fn check_kernel(z: &DMatrix<f64>, k: &KernelMatrix) -> Result<()> {
    if k.n() != z.nrows() {
        return Err(Error::Shape(format!("kernel is {}x{} but Z has {} rows", k.n(), k.n(), z.nrows())));
    }
    Ok(())
}

/// `I + c (Z Z^T ⊙ K)`; `K = None` means the all-ones kernel.
fn rate_matrix(z: &DMatrix<f64>, k: Option<&KernelMatrix>, c: f64) -> DMatrix<f64> {
    let mut m = z * z.transpose();
    if let Some(k) = k {
        m.component_mul_assign(k.matrix());
    }
    m *= c;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    m
}

/// `(c / ln 2) (M^-1 ⊙ K) Z`.
fn rate_gradient(factor: &Factor, z: &DMatrix<f64>, k: Option<&KernelMatrix>, c: f64) -> DMatrix<f64> {
    let mut w = factor.inverse();
    if let Some(k) = k {
        w.component_mul_assign(k.matrix());
    }
    (w * z) * (c / std::f64::consts::LN_2)
}

/// Rate-distortion `R(Z)` in bits.
pub fn rate_distortion(z: &DMatrix<f64>, params: &CodingRateParams) -> Result<f64> {
    check_z(z)?;
    let c = params.coefficient(z.nrows(), z.ncols());
    Ok(Factor::new(rate_matrix(z, None, c))?.half_log2_det())
}

/// Kernelized rate-distortion `R(Z|K)` in bits.
pub fn kernelized_rate_distortion(z: &DMatrix<f64>, k: &KernelMatrix, params: &CodingRateParams) -> Result<f64> {
    check_z(z)?;
    check_kernel(z, k)?;
    let c = params.coefficient(z.nrows(), z.ncols());
    Ok(Factor::new(rate_matrix(z, Some(k), c))?.half_log2_det())
}

/// Gradient of `R(Z)` with respect to `Z`.
pub fn grad_rate_distortion(z: &DMatrix<f64>, params: &CodingRateParams) -> Result<DMatrix<f64>> {
    check_z(z)?;
    let c = params.coefficient(z.nrows(), z.ncols());
    let factor = Factor::new(rate_matrix(z, None, c))?;
    Ok(rate_gradient(&factor, z, None, c))
}

/// Gradient of `R(Z|K)` with respect to `Z`: `(c / ln 2) (M^-1 ⊙ K) Z`.
pub fn grad_kernelized_rate_distortion(
    z: &DMatrix<f64>,
    k: &KernelMatrix,
    params: &CodingRateParams,
) -> Result<DMatrix<f64>> {
    check_z(z)?;
    check_kernel(z, k)?;
    let c = params.coefficient(z.nrows(), z.ncols());
    let factor = Factor::new(rate_matrix(z, Some(k), c))?;
    Ok(rate_gradient(&factor, z, Some(k), c))
}

/// Both rates and their gradients from one factorization each.
#[derive(Debug, Clone)]
pub struct RateTerms {
    pub r_z: f64,
    pub r_zk: f64,
    pub grad_r_z: DMatrix<f64>,
    pub grad_r_zk: DMatrix<f64>,
}

pub fn rate_terms(z: &DMatrix<f64>, k: &KernelMatrix, params: &CodingRateParams) -> Result<RateTerms> {
    check_z(z)?;
    check_kernel(z, k)?;
    let c = params.coefficient(z.nrows(), z.ncols());
    let plain = Factor::new(rate_matrix(z, None, c))?;
    let kernel = Factor::new(rate_matrix(z, Some(k), c))?;
    Ok(RateTerms {
        r_z: plain.half_log2_det(),
        r_zk: kernel.half_log2_det(),
        grad_r_z: rate_gradient(&plain, z, None, c),
        grad_r_zk: rate_gradient(&kernel, z, Some(k), c),
    })
}

fn check_penalty(lambda: f64, target_bits: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(target_bits >= 0.0 && target_bits.is_finite()) {
        return Err(Error::InvalidArgument(format!("target bits must be >= 0, got {target_bits}")));
    }
    Ok(())
}

impl LossBreakdown {
    pub fn from_rates(r_z: f64, r_zk: f64, lambda: f64, target_bits: f64) -> Self {
        let constraint = (r_z - target_bits).abs();
        LossBreakdown {
            total: -r_zk + lambda * constraint,
            r_zk,
            r_z,
            constraint,
            target_bits,
        }
    }
}

/// KRaM loss in minimization form: `-R(Z|K) + lambda |R(Z) - b|`.
pub fn kram_loss(
    z: &DMatrix<f64>,
    k: &KernelMatrix,
    params: &CodingRateParams,
    lambda: f64,
    target_bits: f64,
) -> Result<LossBreakdown> {
    check_penalty(lambda, target_bits)?;
    let r_zk = kernelized_rate_distortion(z, k, params)?;
    let r_z = rate_distortion(z, params)?;
    Ok(LossBreakdown::from_rates(r_z, r_zk, lambda, target_bits))
}

/// `sign(R(Z) - b)` with the subgradient 0 at the kink.
pub(crate) fn constraint_sign(r_z: f64, target_bits: f64) -> f64 {
    if r_z > target_bits {
        1.0
    } else if r_z < target_bits {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`kram_loss`] with respect to `Z`.
pub fn grad_kram_loss(
    z: &DMatrix<f64>,
    k: &KernelMatrix,
    params: &CodingRateParams,
    lambda: f64,
    target_bits: f64,
) -> Result<DMatrix<f64>> {
    check_penalty(lambda, target_bits)?;
    let terms = rate_terms(z, k, params)?;
    let s = lambda * constraint_sign(terms.r_z, target_bits);
    Ok(-terms.grad_r_zk + terms.grad_r_z * s)
}

/// Lower and upper bounds on `R(Z|K)` over every unit-diagonal kernel:
/// `R(Z)` and `(n/2) log2(1 + c)`.
pub fn rate_bounds(z: &DMatrix<f64>, params: &CodingRateParams) -> Result<(f64, f64)> {
    let lower = rate_distortion(z, params)?;
    Ok((lower, upper_bound(z.nrows(), z.ncols(), params)))
}

/// `(n/2) log2(1 + d / (n eps^2))`, the kernel-independent ceiling.
pub fn upper_bound(n: usize, d: usize, params: &CodingRateParams) -> f64 {
    0.5 * n as f64 * (1.0 + params.coefficient(n, d)).log2()
}

/// True when `r_zk` lies in the sandwich `[lower - tol, upper + tol]`.
pub fn within_bounds(r_zk: f64, bounds: (f64, f64), tol: f64) -> bool {
    r_zk >= bounds.0 - tol && r_zk <= bounds.1 + tol
}

/// Range of the maximization-form objective `R(Z|K) - lambda |R(Z) - b|`
/// for `lambda` in [0, 1] and `b` in [0, U].
pub fn objective_box(n: usize, d: usize, params: &CodingRateParams, lambda: f64, target_bits: f64) -> (f64, f64) {
    let u = upper_bound(n, d, params);
    let lo = -lambda * target_bits;
    let hi = ((1.0 + lambda) * u - lambda * target_bits).max((1.0 - lambda) * u + lambda * target_bits);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, ConceptLabels, Distance, KernelFamily, KernelSpec};
    use crate::rng::{normal_matrix, seeded};
    use rand::Rng;

    fn sphere(mut z: DMatrix<f64>) -> DMatrix<f64> {
        for mut row in z.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        z
    }

    fn random_z(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        sphere(normal_matrix(n, d, &mut seeded(seed, 0)))
    }

    fn random_gaussian_kernel(n: usize, seed: u64) -> KernelMatrix {
        let mut rng = seeded(seed, 99);
        let labels: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let spec = KernelSpec::new(KernelFamily::Gaussian, Distance::Absolute, 0.5);
        build_kernel(&ConceptLabels::Continuous(labels), &spec).unwrap()
    }

    /// `1/2 sum log2(1 + c lambda_i)` over eigenvalues of the weighted Gram matrix.
    fn eigen_oracle(z: &DMatrix<f64>, k: Option<&DMatrix<f64>>, eps: f64) -> f64 {
        let mut g = z * z.transpose();
        if let Some(k) = k {
            g.component_mul_assign(k);
        }
        let c = z.ncols() as f64 / (z.nrows() as f64 * eps * eps);
        g.symmetric_eigenvalues().iter().map(|l| 0.5 * (1.0 + c * l.max(0.0)).log2()).sum()
    }

    fn central_difference(f: impl Fn(&DMatrix<f64>) -> f64, z: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(z.nrows(), z.ncols());
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let mut p = z.clone();
                let mut m = z.clone();
                p[(i, j)] += h;
                m[(i, j)] -= h;
                g[(i, j)] = (f(&p) - f(&m)) / (2.0 * h);
            }
        }
        g
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-12)
    }

    #[test]
    fn zero_matrix_has_zero_rate() {
        let p = CodingRateParams::default();
        assert_eq!(rate_distortion(&DMatrix::zeros(4, 3), &p).unwrap(), 0.0);
        assert_eq!(rate_bounds(&DMatrix::zeros(4, 3), &p).unwrap().0, 0.0);
    }

    #[test]
    fn orthonormal_rows_hit_closed_form() {
        let z = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = CodingRateParams::new(1.0).unwrap();
        assert!((rate_distortion(&z, &p).unwrap() - 3f64.log2()).abs() < 1e-12);
        let (_, upper) = rate_bounds(&z, &p).unwrap();
        assert!((upper - 1.584_962_500_721_156).abs() < 1e-12);
    }

    #[test]
    fn rate_matches_eigenvalue_oracle() {
        let z = normal_matrix(5, 3, &mut seeded(11, 0));
        for eps in [0.25, 0.5, 1.0] {
            let p = CodingRateParams::new(eps).unwrap();
            let r = rate_distortion(&z, &p).unwrap();
            assert!((r - eigen_oracle(&z, None, eps)).abs() < 1e-9);
        }
    }

    #[test]
    fn all_ones_kernel_reduces_to_plain_rate() {
        let z = random_z(7, 5, 2);
        let p = CodingRateParams::default();
        let a = kernelized_rate_distortion(&z, &KernelMatrix::ones(7), &p).unwrap();
        let b = rate_distortion(&z, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_kernel_on_sphere_gives_n_over_two() {
        let z = random_z(3, 3, 5);
        let p = CodingRateParams::new(1.0).unwrap();
        let r = kernelized_rate_distortion(&z, &KernelMatrix::identity(3), &p).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn two_class_kernel_splits_into_blocks() {
        let n = 10;
        let z = random_z(n, 4, 8);
        let classes: Vec<usize> = (0..n).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let k = build_kernel(&ConceptLabels::Categorical(classes.clone()), &KernelSpec::indicator()).unwrap();
        let p = CodingRateParams::default();
        let c = p.coefficient(n, 4);
        let mut expected = 0.0;
        for class in 0..2 {
            let idx: Vec<usize> = (0..n).filter(|&i| classes[i] == class).collect();
            let zj = z.select_rows(&idx);
            let m = DMatrix::identity(idx.len(), idx.len()) + (&zj * zj.transpose()) * c;
            expected += 0.5 * m.determinant().log2();
        }
        let r = kernelized_rate_distortion(&z, &k, &p).unwrap();
        assert!((r - expected).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let z = random_z(4, 3, 1);
        let err = kernelized_rate_distortion(&z, &KernelMatrix::ones(5), &CodingRateParams::default());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn kram_loss_components() {
        let z = random_z(8, 4, 21);
        let k = random_gaussian_kernel(8, 21);
        let p = CodingRateParams::default();
        let zero = kram_loss(&z, &k, &p, 0.0, 3.0).unwrap();
        assert_eq!(zero.total, -zero.r_zk);

        let loss = kram_loss(&z, &k, &p, 0.5, 2.0).unwrap();
        let r_zk = kernelized_rate_distortion(&z, &k, &p).unwrap();
        let r_z = rate_distortion(&z, &p).unwrap();
        assert_eq!(loss.total, -r_zk + 0.5 * (r_z - 2.0).abs());
        assert_eq!(loss.constraint, (r_z - 2.0).abs());

        let ones = KernelMatrix::ones(8);
        let at_target = kram_loss(&z, &ones, &p, 0.7, r_z).unwrap();
        assert_eq!(at_target.total, -r_z);
    }

    #[test]
    fn zero_z_has_zero_gradient() {
        let g = grad_kernelized_rate_distortion(&DMatrix::zeros(4, 3), &random_gaussian_kernel(4, 1), &CodingRateParams::default())
            .unwrap();
        assert_eq!(g, DMatrix::zeros(4, 3));
    }

    #[test]
    fn kernelized_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let z = normal_matrix(4, 3, &mut seeded(seed, 0));
            let k = random_gaussian_kernel(4, seed);
            let p = CodingRateParams::new([0.25, 0.5, 1.0][seed as usize % 3]).unwrap();
            let analytic = grad_kernelized_rate_distortion(&z, &k, &p).unwrap();
            let numeric = central_difference(|z| kernelized_rate_distortion(z, &k, &p).unwrap(), &z, 1e-5);
            assert!(rel_err(&analytic, &numeric) < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn all_ones_gradient_equals_plain_gradient() {
        let z = normal_matrix(5, 3, &mut seeded(4, 0));
        let p = CodingRateParams::default();
        let a = grad_kernelized_rate_distortion(&z, &KernelMatrix::ones(5), &p).unwrap();
        let b = grad_rate_distortion(&z, &p).unwrap();
        assert_eq!(a, b);
        let numeric = central_difference(|z| rate_distortion(z, &p).unwrap(), &z, 1e-5);
        assert!(rel_err(&b, &numeric) < 1e-5);
    }

    #[test]
    fn kram_gradient_matches_finite_differences() {
        let z = random_z(6, 4, 3);
        let k = random_gaussian_kernel(6, 3);
        let p = CodingRateParams::default();
        let r_z = rate_distortion(&z, &p).unwrap();
        for b in [r_z * 0.5, r_z * 1.5] {
            let analytic = grad_kram_loss(&z, &k, &p, 0.5, b).unwrap();
            let numeric = central_difference(|z| kram_loss(z, &k, &p, 0.5, b).unwrap().total, &z, 1e-5);
            assert!(rel_err(&analytic, &numeric) < 1e-5);
        }
        let no_penalty = grad_kram_loss(&z, &k, &p, 0.0, 1.0).unwrap();
        assert_eq!(no_penalty, -grad_kernelized_rate_distortion(&z, &k, &p).unwrap());
    }

    #[test]
    fn kram_gradient_at_the_kink_drops_the_penalty() {
        let base = random_z(6, 4, 17);
        let k = random_gaussian_kernel(6, 17);
        let p = CodingRateParams::default();
        let target = 0.5 * rate_distortion(&base, &p).unwrap();
        // bisection on the scale s so that R(sZ) hits the target exactly
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate_distortion(&(&base * mid), &p).unwrap() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (z, b) = {
            let z = &base * hi;
            let b = rate_distortion(&z, &p).unwrap();
            (z, b)
        };
        assert!((b - target).abs() < 1e-9);
        let g = grad_kram_loss(&z, &k, &p, 0.8, b).unwrap();
        assert_eq!(g, -grad_kernelized_rate_distortion(&z, &k, &p).unwrap());
    }

    #[test]
    fn scaling_up_does_not_decrease_rate() {
        let p = CodingRateParams::default();
        for seed in 0..20 {
            let z = normal_matrix(6, 4, &mut seeded(seed, 1));
            let r = rate_distortion(&z, &p).unwrap();
            let r2 = rate_distortion(&(&z * 1.7), &p).unwrap();
            assert!(r2 >= r);
        }
    }

    #[test]
    fn objective_box_contains_sampled_objectives() {
        let mut rng = seeded(5, 5);
        for seed in 0..60u64 {
            let n = rng.random_range(2..=12);
            let d = rng.random_range(2..=16);
            let z = random_z(n, d, seed);
            let k = random_gaussian_kernel(n, seed);
            let p = CodingRateParams::new([0.25, 0.5, 1.0][seed as usize % 3]).unwrap();
            let u = upper_bound(n, d, &p);
            let lambda: f64 = rng.random();
            let b = rng.random::<f64>() * u;
            let loss = kram_loss(&z, &k, &p, lambda, b).unwrap();
            let (lo, hi) = objective_box(n, d, &p, lambda, b);
            let objective = -loss.total;
            assert!(objective >= lo - 1e-9 && objective <= hi + 1e-9);
        }
    }
}
