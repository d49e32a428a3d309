//! Gaussian measures as points of the Bures–Wasserstein space.
//!
//! Tangent vectors at `μ` are affine maps with a symmetric linear part, and the
//! metric is the `L²(μ)` inner product. Because every quantity here is a Gaussian
//! second moment, inner products, distances and transport maps are all closed form.
//!
//! Entropy follows the convention `H(μ) = ∫ log μ dμ` (negative differential entropy),
//! so `F = V + H` is minimized, not maximized.

use nalgebra::{DMatrix, DVector};
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};
use crate::psd::{psd_eig, psd_eig_warm, psd_sqrt, sym_eig, SpdMatrix, SymEigen, SymMatrix};

/// `λ_min ≤ DEGENERATE_RATIO · λ_max` marks a pushforward covariance as degenerate.
pub const DEGENERATE_RATIO: f64 = 1e-12;

/// `ln(2πe)`
pub fn log_two_pi_e() -> f64 {
    1.0 + (2.0 * core::f64::consts::PI).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: SpdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "Gaussian mean" });
        }
        Ok(Self { mean, cov })
    }

    pub fn from_cov_matrix(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, SpdMatrix::new(cov)?)
    }

    /// `N(0, I_d)`
    pub fn standard(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), cov: SpdMatrix::identity(dim) }
    }

    /// `N(mean, var · I)`; panics unless `var > 0`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Self {
        let dim = mean.len();
        Self { mean, cov: SpdMatrix::scaled_identity(dim, var) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// One draw `m + Q (√λ ⊙ z)`, using the covariance's stored eigendecomposition.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eig = self.cov.eigen();
        let w = DVector::from_fn(self.dim(), |i, _| {
            eig.values()[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        &self.mean + eig.vectors() * w
    }
}

/// The affine map `x ↦ b + S (x − m_ref)` with symmetric `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    intercept: DVector<f64>,
    linear: SymMatrix,
    basepoint: DVector<f64>,
}

impl AffineMap {
    pub fn new(intercept: DVector<f64>, linear: SymMatrix, basepoint: DVector<f64>) -> Result<Self> {
        check_dim(linear.dim(), intercept.len())?;
        check_dim(linear.dim(), basepoint.len())?;
        Ok(Self { intercept, linear, basepoint })
    }

    /// The identity map written about `basepoint`.
    pub fn identity(basepoint: DVector<f64>) -> Self {
        let dim = basepoint.len();
        Self { intercept: basepoint.clone(), linear: SymMatrix::identity(dim), basepoint }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            intercept: DVector::zeros(dim),
            linear: SymMatrix::zeros(dim),
            basepoint: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    pub fn linear(&self) -> &SymMatrix {
        &self.linear
    }

    pub fn basepoint(&self) -> &DVector<f64> {
        &self.basepoint
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.intercept + self.linear.as_matrix() * (x - &self.basepoint)
    }

    /// The same map written about a new basepoint.
    pub fn rebased(&self, basepoint: &DVector<f64>) -> Self {
        Self {
            intercept: self.apply(basepoint),
            linear: self.linear.clone(),
            basepoint: basepoint.clone(),
        }
    }

    pub fn add(&self, other: &AffineMap) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        let other = other.rebased(&self.basepoint);
        Ok(Self {
            intercept: &self.intercept + other.intercept,
            linear: self.linear.add(&other.linear),
            basepoint: self.basepoint.clone(),
        })
    }

    pub fn sub(&self, other: &AffineMap) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            intercept: &self.intercept * c,
            linear: self.linear.scale(c),
            basepoint: self.basepoint.clone(),
        }
    }
}

/// `tr(Aᵀ B Σ)`: the `L²(N(0, Σ))` inner product of the linear maps `A` and `B`.
/// `A` and `B` need not be symmetric.
pub fn linear_inner_product(a: &DMatrix<f64>, b: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    (b * cov).component_mul(a).sum()
}

/// `⟨f, g⟩_μ = ⟨f(m_μ), g(m_μ)⟩ + tr(S_f Σ_μ S_g)`.
pub fn affine_inner_product(f: &AffineMap, g: &AffineMap, mu: &GaussianMeasure) -> Result<f64> {
    check_dim(mu.dim(), f.dim())?;
    check_dim(mu.dim(), g.dim())?;
    let bf = f.apply(mu.mean());
    let bg = g.apply(mu.mean());
    Ok(bf.dot(&bg)
        + linear_inner_product(f.linear.as_matrix(), g.linear.as_matrix(), mu.cov.matrix()))
}

/// `‖f‖²_μ`
pub fn affine_norm_sq(f: &AffineMap, mu: &GaussianMeasure) -> Result<f64> {
    affine_inner_product(f, f, mu)
}

/// Squared 2-Wasserstein distance in Bures form.
pub fn w2_squared(mu: &GaussianMeasure, nu: &GaussianMeasure) -> Result<f64> {
    check_dim(mu.dim(), nu.dim())?;
    let root = mu.cov.sqrt();
    let cross = psd_sqrt(&root.congruence(nu.cov.as_sym()))?.trace();
    let mean_part = (mu.mean() - nu.mean()).norm_squared();
    let w = mean_part + mu.cov.as_sym().trace() + nu.cov.as_sym().trace() - 2.0 * cross;
    Ok(w.max(0.0))
}

/// Optimal transport map from `μ` to `ν`, written about `m_μ`.
pub fn ot_map(mu: &GaussianMeasure, nu: &GaussianMeasure) -> Result<AffineMap> {
    check_dim(mu.dim(), nu.dim())?;
    let root = mu.cov.sqrt();
    let inv_root = mu.cov.inv_sqrt();
    let middle = psd_sqrt(&root.congruence(nu.cov.as_sym()))?;
    let linear = inv_root.congruence(&middle);
    Ok(AffineMap { intercept: nu.mean.clone(), linear, basepoint: mu.mean.clone() })
}

/// Image of a Gaussian under an affine map. The covariance `S Σ S` may be singular.
#[derive(Clone, Debug)]
pub struct Pushforward {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub eigen: SymEigen,
    pub degenerate: bool,
}

impl Pushforward {
    pub fn into_measure(self) -> Result<GaussianMeasure> {
        if self.degenerate {
            return Err(Error::Singular {
                lambda_min: self.eigen.lambda_min(),
                lambda_max: self.eigen.lambda_max(),
            });
        }
        GaussianMeasure::new(self.mean, SpdMatrix::with_eigen(self.cov, self.eigen)?)
    }
}

pub fn pushforward_affine(mu: &GaussianMeasure, f: &AffineMap) -> Result<Pushforward> {
    check_dim(mu.dim(), f.dim())?;
    let mean = f.apply(mu.mean());
    let cov = f.linear.congruence(mu.cov.as_sym());
    let eigen = sym_eig(&cov)?;
    let degenerate = eigen.lambda_min() <= DEGENERATE_RATIO * eigen.lambda_max();
    Ok(Pushforward { mean, cov, eigen, degenerate })
}

/// `H(μ) = −(d/2) ln(2πe) − ½ ln det Σ_μ`.
pub fn entropy(mu: &GaussianMeasure) -> f64 {
    -0.5 * mu.dim() as f64 * log_two_pi_e() - 0.5 * mu.cov.log_det()
}

/// Scalar JKO map of the entropy on one eigenvalue: `½(λ + 2η + √(λ(λ + 4η)))`.
pub fn jko_eigenvalue(lambda: f64, eta: f64) -> f64 {
    0.5 * (lambda + 2.0 * eta + (lambda * (lambda + 4.0 * eta)).sqrt())
}

/// Closed-form BW proximal step of `η H` applied to `N(mean, cov)`.
///
/// `cov` may be PSD-singular (a forward step with `η = 1/β` can annihilate
/// directions); the output covariance is always `⪰ ηI`. The product
/// `Σ(Σ + 4ηI)` is formed in the eigenbasis of `Σ`, where both factors are diagonal.
pub fn entropy_jko(mean: &DVector<f64>, cov: &SymMatrix, eta: f64) -> Result<GaussianMeasure> {
    jko_from_eigen(mean, cov, eta, psd_eig)
}

/// [`entropy_jko`] with the eigendecomposition of `cov` warm-started from an orthogonal
/// `basis` (typically the eigenbasis of the previous iterate).
pub fn entropy_jko_warm(mean: &DVector<f64>, cov: &SymMatrix, eta: f64, basis: &DMatrix<f64>) -> Result<GaussianMeasure> {
    jko_from_eigen(mean, cov, eta, |c| psd_eig_warm(c, basis))
}

fn jko_from_eigen(
    mean: &DVector<f64>,
    cov: &SymMatrix,
    eta: f64,
    eig: impl FnOnce(&SymMatrix) -> Result<SymEigen>,
) -> Result<GaussianMeasure> {
    check_dim(cov.dim(), mean.len())?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid("entropy_jko: step size must be finite and nonnegative"));
    }
    let eig = eig(cov)?;
    let cov = if eta == 0.0 {
        SpdMatrix::with_eigen(cov.clone(), eig)?
    } else {
        SpdMatrix::from_eigen(eig.map_increasing(|l| jko_eigenvalue(l, eta)))?
    };
    GaussianMeasure::new(mean.clone(), cov)
}

/// `KL(μ ‖ ν)` between Gaussians.
pub fn kl_gaussian(mu: &GaussianMeasure, nu: &GaussianMeasure) -> Result<f64> {
    check_dim(mu.dim(), nu.dim())?;
    let prec = nu.cov.inverse();
    let dm = nu.mean() - mu.mean();
    let trace_term = prec.matrix().component_mul(mu.cov.matrix()).sum();
    let quad = dm.dot(&(prec.matrix() * &dm));
    Ok(0.5 * (trace_term - mu.dim() as f64 + quad + nu.cov.log_det() - mu.cov.log_det()))
}

/// `((1−t) T₀ + t T₁)_# ν` with `T_i` the optimal map from `ν` to `μ_i`.
pub fn generalized_geodesic(
    nu: &GaussianMeasure,
    mu0: &GaussianMeasure,
    mu1: &GaussianMeasure,
    t: f64,
) -> Result<GaussianMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("generalized_geodesic: t must lie in [0, 1]"));
    }
    let t0 = ot_map(nu, mu0)?;
    let t1 = ot_map(nu, mu1)?;
    let interp = t0.scale(1.0 - t).add(&t1.scale(t))?;
    pushforward_affine(nu, &interp)?.into_measure()
}

/// `∇_BW H(μ) : x ↦ −Σ_μ⁻¹ (x − m_μ)`.
pub fn bw_grad_entropy(mu: &GaussianMeasure) -> AffineMap {
    AffineMap {
        intercept: DVector::zeros(mu.dim()),
        linear: mu.cov.inverse().as_sym().scale(-1.0),
        basepoint: mu.mean.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::max_abs;
    use alloc::vec;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(mean: f64, var: f64) -> GaussianMeasure {
        GaussianMeasure::isotropic(dvector![mean], var)
    }

    fn random_measure(dim: usize, rng: &mut ChaCha8Rng) -> GaussianMeasure {
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        GaussianMeasure::from_cov_matrix(mean, &g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.2)
            .unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let mu = GaussianMeasure::standard(3);
        let z = AffineMap::zero(3);
        assert_eq!(affine_inner_product(&z, &z, &mu).unwrap(), 0.0);

        // x ↦ x − m
        let centred = AffineMap::new(DVector::zeros(3), SymMatrix::identity(3), DVector::zeros(3)).unwrap();
        assert!((affine_norm_sq(&centred, &mu).unwrap() - 3.0).abs() < 1e-15);

        let mu = scalar(0.0, 4.0);
        let f = AffineMap::new(dvector![1.0], SymMatrix::from_diagonal(&[2.0]), dvector![0.0]).unwrap();
        let g = AffineMap::new(dvector![3.0], SymMatrix::from_diagonal(&[1.0]), dvector![0.0]).unwrap();
        assert!((affine_inner_product(&f, &g, &mu).unwrap() - 11.0).abs() < 1e-14);
    }

    #[test]
    fn inner_product_rebases_to_the_mean() {
        let mu = scalar(2.0, 4.0);
        // x ↦ x written about 0 and about 5: same map, same norm (E x² = 4 + 4 = 8).
        let a = AffineMap::identity(dvector![0.0]);
        let b = AffineMap::identity(dvector![5.0]);
        assert!((affine_norm_sq(&a, &mu).unwrap() - 8.0).abs() < 1e-14);
        assert!((affine_norm_sq(&b, &mu).unwrap() - 8.0).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mu = GaussianMeasure::standard(2);
        let f = AffineMap::zero(3);
        assert!(matches!(
            affine_inner_product(&f, &f, &mu).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
        assert!(w2_squared(&mu, &GaussianMeasure::standard(3)).is_err());
    }

    #[test]
    fn w2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_measure(4, &mut rng);
        assert!(w2_squared(&mu, &mu).unwrap() < 1e-12);

        let shifted = GaussianMeasure::new(dvector![1.0, -2.0, 0.5], SpdMatrix::identity(3)).unwrap();
        let w = w2_squared(&GaussianMeasure::standard(3), &shifted).unwrap();
        assert!((w - 5.25).abs() < 1e-14);

        assert!((w2_squared(&scalar(0.0, 1.0), &scalar(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ot_map_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_measure(3, &mut rng);
        let t = ot_map(&mu, &mu).unwrap();
        assert!(max_abs(&(t.linear().as_matrix() - DMatrix::identity(3, 3))) < 1e-12);
        assert_eq!(t.intercept(), mu.mean());

        let t = ot_map(&scalar(0.0, 1.0), &scalar(3.0, 4.0)).unwrap();
        let y = t.apply(&dvector![1.5]);
        assert!((y[0] - 6.0).abs() < 1e-14);
        assert!((t.linear().as_matrix()[(0, 0)] - 2.0).abs() < 1e-14);

        let nu = random_measure(5, &mut rng);
        let mu = random_measure(5, &mut rng);
        let t = ot_map(&mu, &nu).unwrap();
        let pushed = pushforward_affine(&mu, &t).unwrap();
        assert!(max_abs(&(pushed.cov.as_matrix() - nu.cov().matrix())) < 1e-8);
        assert!((pushed.mean - nu.mean()).amax() < 1e-12);
        let displacement = t.sub(&AffineMap::identity(mu.mean().clone())).unwrap();
        let cost = affine_norm_sq(&displacement, &mu).unwrap();
        assert!((cost - w2_squared(&mu, &nu).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn pushforward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = random_measure(3, &mut rng);
        let id = pushforward_affine(&mu, &AffineMap::identity(DVector::zeros(3)))
            .unwrap()
            .into_measure()
            .unwrap();
        assert!(max_abs(&(id.cov().matrix() - mu.cov().matrix())) < 1e-14);
        assert_eq!(id.mean(), mu.mean());

        let reflect = AffineMap::new(DVector::zeros(3), SymMatrix::identity(3).scale(-1.0), DVector::zeros(3))
            .unwrap();
        let r = pushforward_affine(&mu, &reflect).unwrap().into_measure().unwrap();
        assert!((r.mean() + mu.mean()).amax() < 1e-15);
        assert!(max_abs(&(r.cov().matrix() - mu.cov().matrix())) < 1e-14);

        let half = AffineMap::new(dvector![0.0], SymMatrix::from_diagonal(&[0.5]), dvector![2.0]).unwrap();
        let p = pushforward_affine(&scalar(2.0, 4.0), &half).unwrap().into_measure().unwrap();
        assert_eq!(p.mean()[0], 0.0);
        assert!((p.cov().matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_flags_degenerate_covariance() {
        let project = AffineMap::new(DVector::zeros(2), SymMatrix::from_diagonal(&[1.0, 0.0]), DVector::zeros(2))
            .unwrap();
        let p = pushforward_affine(&GaussianMeasure::standard(2), &project).unwrap();
        assert!(p.degenerate);
        assert!(matches!(p.into_measure().unwrap_err(), Error::Singular { .. }));
    }

    #[test]
    fn entropy_examples() {
        let h1 = entropy(&GaussianMeasure::standard(1));
        assert!((h1 + 1.418_938_533_204_672_7).abs() < 1e-14);
        assert!((h1 - entropy(&scalar(7.0, 1.0))).abs() < 1e-15);
        let h2 = entropy(&GaussianMeasure::standard(2));
        assert!((h2 - 2.0 * h1).abs() < 1e-14);
        assert!((h2 + 2.837_877_066_409_345).abs() < 1e-13);
    }

    #[test]
    fn jko_examples() {
        let mu = scalar(1.5, 1.0);
        let same = entropy_jko(mu.mean(), mu.cov().as_sym(), 0.0).unwrap();
        assert_eq!(same, mu);

        let p = entropy_jko(mu.mean(), mu.cov().as_sym(), 2.0).unwrap();
        assert!((p.cov().matrix()[(0, 0)] - 4.0).abs() < 1e-14);
        assert_eq!(p.mean(), mu.mean());

        let p = entropy_jko(mu.mean(), mu.cov().as_sym(), 0.5).unwrap();
        assert!((p.cov().matrix()[(0, 0)] - 0.5 * (2.0 + 3f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn jko_accepts_singular_input() {
        let p = entropy_jko(&DVector::zeros(3), &SymMatrix::zeros(3), 0.7).unwrap();
        assert!(max_abs(&(p.cov().matrix() - DMatrix::identity(3, 3) * 0.7)) < 1e-15);
        assert!(entropy_jko(&DVector::zeros(1), &SymMatrix::identity(1), -1.0).is_err());
        assert!(matches!(
            entropy_jko(&DVector::zeros(2), &SymMatrix::from_diagonal(&[-1.0, 1.0]), 0.1).unwrap_err(),
            Error::NotPsd { .. }
        ));
    }

    #[test]
    fn kl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_measure(4, &mut rng);
        assert!(kl_gaussian(&mu, &mu).unwrap().abs() < 1e-12);
        assert!((kl_gaussian(&scalar(1.0, 1.0), &scalar(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kl_gaussian(&scalar(0.0, 4.0), &scalar(0.0, 1.0)).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.806_85).abs() < 1e-5);
    }

    #[test]
    fn generalized_geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (nu, mu0, mu1) = (random_measure(3, &mut rng), random_measure(3, &mut rng), random_measure(3, &mut rng));
        let start = generalized_geodesic(&nu, &mu0, &mu1, 0.0).unwrap();
        let end = generalized_geodesic(&nu, &mu0, &mu1, 1.0).unwrap();
        assert!(max_abs(&(start.cov().matrix() - mu0.cov().matrix())) < 1e-8);
        assert!(max_abs(&(end.cov().matrix() - mu1.cov().matrix())) < 1e-8);
        assert!((end.mean() - mu1.mean()).amax() < 1e-12);

        let mid = generalized_geodesic(&scalar(0.0, 1.0), &scalar(0.0, 1.0), &scalar(0.0, 4.0), 0.5).unwrap();
        assert!((mid.cov().matrix()[(0, 0)] - 2.25).abs() < 1e-14);

        // midpoint covariance equals T_½ Σ_ν T_½
        let t_half = ot_map(&nu, &mu0).unwrap().scale(0.5).add(&ot_map(&nu, &mu1).unwrap().scale(0.5)).unwrap();
        let s = t_half.linear().as_matrix();
        let direct = s * nu.cov().matrix() * s;
        let mid = generalized_geodesic(&nu, &mu0, &mu1, 0.5).unwrap();
        assert!(max_abs(&(mid.cov().matrix() - direct)) < 1e-12);
        assert!(generalized_geodesic(&nu, &mu0, &mu1, 1.5).is_err());
    }

    #[test]
    fn entropy_gradient_examples() {
        let g = bw_grad_entropy(&GaussianMeasure::standard(2));
        let x = dvector![0.3, -1.2];
        assert!((g.apply(&x) + &x).amax() < 1e-15);

        let mu = GaussianMeasure::isotropic(dvector![1.0, 2.0], 4.0);
        let g = bw_grad_entropy(&mu);
        assert!(max_abs(&(g.linear().as_matrix() + dmatrix![0.25, 0.0; 0.0, 0.25])) < 1e-15);
        assert_eq!(g.intercept().norm(), 0.0);
    }

    #[test]
    fn sampling_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mu = random_measure(2, &mut rng);
        let n = 200_000;
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = mu.sample(&mut rng);
            let c = &x - mu.mean();
            second += &c * c.transpose();
            mean += x;
        }
        mean /= n as f64;
        second /= n as f64;
        assert!((mean - mu.mean()).amax() < 0.02);
        assert!(max_abs(&(second - mu.cov().matrix())) < 0.05);
    }
}
