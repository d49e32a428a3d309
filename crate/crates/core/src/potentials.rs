//! Target potentials `V` with derivatives, convexity constants and Gaussian moments.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bw::GaussianMeasure;
use crate::error::{check_dim, invalid, Error, Result};
use crate::oracles::gauss_hermite_expectation;
use crate::psd::{random_orthogonal, sym_eig, SpdMatrix, SymMatrix};
use crate::rng::{RngTag, StreamRng};

/// A twice-differentiable potential with `α I ⪯ ∇²V ⪯ β I` everywhere.
pub trait Potential {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hess(&self, x: &DVector<f64>) -> SymMatrix;
    /// Convexity constant; zero or negative when `V` is not strongly convex.
    fn alpha(&self) -> f64;
    /// Global smoothness constant.
    fn beta(&self) -> f64;

    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, SymMatrix) {
        (self.grad(x), self.hess(x))
    }

    fn has_exact_moments(&self) -> bool {
        false
    }

    /// `(E_μ ∇V, E_μ ∇²V)` in closed form.
    fn exact_moments(&self, _mu: &GaussianMeasure) -> Result<(DVector<f64>, SymMatrix)> {
        Err(Error::Capability("exact moments"))
    }

    /// `E_μ V` in closed form.
    fn exact_expectation(&self, _mu: &GaussianMeasure) -> Result<f64> {
        Err(Error::Capability("exact expectation"))
    }
}

/// `V(x) = ½⟨x − a, Q(x − a)⟩`, the potential of `N(a, Q⁻¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPotential {
    center: DVector<f64>,
    precision: SpdMatrix,
}

pub fn quadratic_potential(center: DVector<f64>, precision: SpdMatrix) -> Result<QuadraticPotential> {
    check_dim(precision.dim(), center.len())?;
    Ok(QuadraticPotential { center, precision })
}

/// Quadratic potential with `Q = U diag(λ) Uᵀ`, `U` Haar-orthogonal, `λ` log-spaced
/// from `10^log10_min` to `10^log10_max`, and center `a ~ Unif([0,1]^d)`.
///
/// Draw order: `U` first, then `a`.
pub fn ill_conditioned_quadratic<R: Rng + ?Sized>(
    dim: usize,
    log10_min: f64,
    log10_max: f64,
    rng: &mut R,
) -> Result<QuadraticPotential> {
    if dim == 0 {
        return Err(invalid("ill_conditioned_quadratic: dimension must be positive"));
    }
    if !(log10_min <= log10_max) {
        return Err(invalid("ill_conditioned_quadratic: empty exponent range"));
    }
    let basis = random_orthogonal(dim, rng)?;
    let spectrum: Vec<f64> = (0..dim)
        .map(|i| {
            let t = if dim == 1 { 1.0 } else { i as f64 / (dim - 1) as f64 };
            10f64.powf(log10_min + t * (log10_max - log10_min))
        })
        .collect();
    let precision = SpdMatrix::from_spectrum(&basis, &spectrum)?;
    let center = DVector::from_fn(dim, |_, _| rng.random::<f64>());
    quadratic_potential(center, precision)
}

impl QuadraticPotential {
    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    /// The target `π = N(a, Q⁻¹)`, which is also the minimizer `π̂` over Gaussians.
    pub fn target(&self) -> GaussianMeasure {
        GaussianMeasure::new(self.center.clone(), self.precision.inverse())
            .expect("center and precision dimensions agree")
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.center;
        0.5 * r.dot(&(self.precision.matrix() * &r))
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.precision.matrix() * (x - &self.center)
    }

    fn hess(&self, _x: &DVector<f64>) -> SymMatrix {
        self.precision.as_sym().clone()
    }

    fn alpha(&self) -> f64 {
        self.precision.lambda_min()
    }

    fn beta(&self) -> f64 {
        self.precision.lambda_max()
    }

    fn has_exact_moments(&self) -> bool {
        true
    }

    fn exact_moments(&self, mu: &GaussianMeasure) -> Result<(DVector<f64>, SymMatrix)> {
        check_dim(self.dim(), mu.dim())?;
        Ok((self.grad(mu.mean()), self.precision.as_sym().clone()))
    }

    fn exact_expectation(&self, mu: &GaussianMeasure) -> Result<f64> {
        check_dim(self.dim(), mu.dim())?;
        let trace = self.precision.matrix().component_mul(mu.cov().matrix()).sum();
        Ok(0.5 * trace + self.value(mu.mean()))
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Negative log-likelihood of logistic regression under a flat prior:
/// `V(θ) = Σᵢ [log(1 + e^{⟨θ,xᵢ⟩}) − yᵢ⟨θ,xᵢ⟩]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticPotential {
    x: DMatrix<f64>,
    y: DVector<f64>,
    beta: f64,
}

/// `β = ¼ λ_max(XᵀX)`, the global bound on the Hessian.
pub fn logistic_potential(x: DMatrix<f64>, y: DVector<f64>) -> Result<LogisticPotential> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("logistic_potential: empty data"));
    }
    check_dim(x.nrows(), y.len())?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("logistic_potential: labels must be 0 or 1"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "logistic design matrix" });
    }
    let gram = SymMatrix::symmetrized(x.transpose() * &x);
    let beta = 0.25 * sym_eig(&gram)?.lambda_max();
    if !(beta > 0.0) {
        return Err(invalid("logistic_potential: design matrix is zero"));
    }
    Ok(LogisticPotential { x, y, beta })
}

impl LogisticPotential {
    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }
}

impl Potential for LogisticPotential {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let z = &self.x * theta;
        z.iter().zip(self.y.iter()).map(|(&z, &y)| softplus(z) - y * z).sum()
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let z = &self.x * theta;
        let r = DVector::from_fn(z.len(), |i, _| sigmoid(z[i]) - self.y[i]);
        self.x.tr_mul(&r)
    }

    fn hess(&self, theta: &DVector<f64>) -> SymMatrix {
        self.grad_hess(theta).1
    }

    fn grad_hess(&self, theta: &DVector<f64>) -> (DVector<f64>, SymMatrix) {
        let z = &self.x * theta;
        let s = z.map(sigmoid);
        let r = DVector::from_fn(z.len(), |i, _| s[i] - self.y[i]);
        let mut weighted = self.x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= s[i] * (1.0 - s[i]);
        }
        let hess = SymMatrix::symmetrized(self.x.tr_mul(&weighted));
        (self.x.tr_mul(&r), hess)
    }

    fn alpha(&self) -> f64 {
        0.0
    }

    fn beta(&self) -> f64 {
        self.beta
    }
}

/// Synthetic logistic data: rows `xᵢ ~ N(0, I_d)` and `yᵢ ~ Bernoulli(sigmoid(⟨θ, xᵢ⟩))`.
///
/// Draw order per row: `d` normals, then one uniform for the label.
pub fn generate_logistic_data<R: Rng + ?Sized>(
    theta: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n == 0 {
        return Err(invalid("generate_logistic_data: n must be positive"));
    }
    let d = theta.len();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let p = sigmoid(x.row(i).transpose().dot(theta));
        y[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    }
    Ok((x, y))
}

/// `V(x) = scale · Σⱼ h(xⱼ)` with `h` the double well `(x² − 1)²/4` on `|x| ≤ 2/√3`,
/// continued by the quadratic that keeps it C², so `h'' = min(3x² − 1, 3) ∈ [−1, 3]`.
/// Minima at `xⱼ = ±1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleWellPotential {
    dim: usize,
    scale: f64,
}

pub fn double_well_potential(dim: usize, scale: f64) -> Result<DoubleWellPotential> {
    if dim == 0 {
        return Err(invalid("double_well_potential: dimension must be positive"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid("double_well_potential: scale must be positive"));
    }
    Ok(DoubleWellPotential { dim, scale })
}

/// Piecewise polynomials (ascending coefficients in `x`) on `(−∞, −c]`, `[−c, c]`, `[c, ∞)`.
struct Pieces([[f64; 5]; 3]);

fn well_cutoff() -> f64 {
    2.0 / 3f64.sqrt()
}

fn well_pieces() -> [Pieces; 3] {
    let k = 8.0 * well_cutoff() / 3.0;
    let t = 57.0 / 36.0;
    [
        Pieces([[t, k, 1.5, 0.0, 0.0], [0.25, 0.0, -0.5, 0.0, 0.25], [t, -k, 1.5, 0.0, 0.0]]),
        Pieces([[k, 3.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 1.0, 0.0], [-k, 3.0, 0.0, 0.0, 0.0]]),
        Pieces([[3.0, 0.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 3.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0, 0.0]]),
    ]
}

fn poly(c: &[f64; 5], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

impl Pieces {
    fn eval(&self, x: f64) -> f64 {
        let c = well_cutoff();
        let piece = if x < -c {
            0
        } else if x > c {
            2
        } else {
            1
        };
        poly(&self.0[piece], x)
    }

    /// `E p(X)` for `X ~ N(mean, sd²)`.
    fn gaussian_expectation(&self, mean: f64, sd: f64) -> f64 {
        let c = well_cutoff();
        let bounds = [(f64::NEG_INFINITY, -c), (-c, c), (c, f64::INFINITY)];
        self.0
            .iter()
            .zip(bounds)
            .map(|(coef, (lo, hi))| truncated_poly_moment(coef, mean, sd, lo, hi))
            .sum()
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * core::f64::consts::PI).sqrt()
    }
}

/// `P(lo < Z < hi)` using whichever tail keeps the difference well conditioned.
fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    let r = core::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo * r) - libm::erfc(hi * r))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi * r) - libm::erfc(-lo * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-lo * r) + libm::erfc(hi * r))
    }
}

/// `∫_lo^hi p(x) N(x; mean, sd²) dx` for a polynomial of degree ≤ 4.
fn truncated_poly_moment(coef: &[f64; 5], mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let zl = (lo - mean) / sd;
    let zh = (hi - mean) / sd;
    // z^k φ(z) at an infinite bound is zero.
    let edge = |z: f64, k: i32| if z.is_infinite() { 0.0 } else { z.powi(k) * std_normal_pdf(z) };
    // I_k = ∫ z^k φ(z) dz over [zl, zh]
    let mut moments = [0.0; 5];
    moments[0] = std_normal_mass(zl, zh);
    moments[1] = std_normal_pdf(zl) - std_normal_pdf(zh);
    for k in 2..5 {
        moments[k] = edge(zl, k as i32 - 1) - edge(zh, k as i32 - 1) + (k - 1) as f64 * moments[k - 2];
    }
    // p(mean + sd z) = Σ_j z^j Σ_{k≥j} c_k C(k, j) mean^{k−j} sd^j
    let binom = [[1.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0, 0.0], [1.0, 3.0, 3.0, 1.0, 0.0], [
        1.0, 4.0, 6.0, 4.0, 1.0,
    ]];
    let mut total = 0.0;
    for j in 0..5 {
        let mut zc = 0.0;
        for k in j..5 {
            zc += coef[k] * binom[k][j] * mean.powi((k - j) as i32);
        }
        total += zc * sd.powi(j as i32) * moments[j];
    }
    total
}

impl DoubleWellPotential {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn marginals<'a>(&'a self, mu: &'a GaussianMeasure) -> impl Iterator<Item = (f64, f64)> + 'a {
        (0..self.dim).map(move |j| (mu.mean()[j], mu.cov().matrix()[(j, j)].sqrt()))
    }
}

impl Potential for DoubleWellPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let [h, _, _] = well_pieces();
        self.scale * x.iter().map(|&v| h.eval(v)).sum::<f64>()
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let [_, dh, _] = well_pieces();
        x.map(|v| self.scale * dh.eval(v))
    }

    fn hess(&self, x: &DVector<f64>) -> SymMatrix {
        let [_, _, d2h] = well_pieces();
        let diag: Vec<f64> = x.iter().map(|&v| self.scale * d2h.eval(v)).collect();
        SymMatrix::from_diagonal(&diag)
    }

    fn alpha(&self) -> f64 {
        -self.scale
    }

    fn beta(&self) -> f64 {
        3.0 * self.scale
    }

    fn has_exact_moments(&self) -> bool {
        true
    }

    /// Each coordinate of `∇V` depends on one coordinate of `x`, and `∇²V` is diagonal,
    /// so only the marginals `N(m_j, Σ_jj)` enter.
    fn exact_moments(&self, mu: &GaussianMeasure) -> Result<(DVector<f64>, SymMatrix)> {
        check_dim(self.dim, mu.dim())?;
        let [_, dh, d2h] = well_pieces();
        let (b, s): (Vec<f64>, Vec<f64>) = self
            .marginals(mu)
            .map(|(m, sd)| (self.scale * dh.gaussian_expectation(m, sd), self.scale * d2h.gaussian_expectation(m, sd)))
            .unzip();
        Ok((DVector::from_vec(b), SymMatrix::from_diagonal(&s)))
    }

    fn exact_expectation(&self, mu: &GaussianMeasure) -> Result<f64> {
        check_dim(self.dim, mu.dim())?;
        let [h, _, _] = well_pieces();
        Ok(self.scale * self.marginals(mu).map(|(m, sd)| h.gaussian_expectation(m, sd)).sum::<f64>())
    }
}

/// The registered potentials behind one type.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSpec {
    Quadratic(QuadraticPotential),
    Logistic(LogisticPotential),
    DoubleWell(DoubleWellPotential),
}

impl From<QuadraticPotential> for PotentialSpec {
    fn from(p: QuadraticPotential) -> Self {
        Self::Quadratic(p)
    }
}

impl From<LogisticPotential> for PotentialSpec {
    fn from(p: LogisticPotential) -> Self {
        Self::Logistic(p)
    }
}

impl From<DoubleWellPotential> for PotentialSpec {
    fn from(p: DoubleWellPotential) -> Self {
        Self::DoubleWell(p)
    }
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            PotentialSpec::Quadratic($p) => $e,
            PotentialSpec::Logistic($p) => $e,
            PotentialSpec::DoubleWell($p) => $e,
        }
    };
}

impl Potential for PotentialSpec {
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        dispatch!(self, p => p.value(x))
    }
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        dispatch!(self, p => p.grad(x))
    }
    fn hess(&self, x: &DVector<f64>) -> SymMatrix {
        dispatch!(self, p => p.hess(x))
    }
    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, SymMatrix) {
        dispatch!(self, p => p.grad_hess(x))
    }
    fn alpha(&self) -> f64 {
        dispatch!(self, p => p.alpha())
    }
    fn beta(&self) -> f64 {
        dispatch!(self, p => p.beta())
    }
    fn has_exact_moments(&self) -> bool {
        dispatch!(self, p => p.has_exact_moments())
    }
    fn exact_moments(&self, mu: &GaussianMeasure) -> Result<(DVector<f64>, SymMatrix)> {
        dispatch!(self, p => p.exact_moments(mu))
    }
    fn exact_expectation(&self, mu: &GaussianMeasure) -> Result<f64> {
        dispatch!(self, p => p.exact_expectation(mu))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentMode {
    Exact,
    MonteCarlo,
    Quadrature,
}

/// Estimates of `E_μ ∇V` and `E_μ ∇²V`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub b_hat: DVector<f64>,
    pub s_hat: SymMatrix,
    pub mode: MomentMode,
    /// Draws for Monte Carlo, grid points for quadrature, zero for exact.
    pub n_samples: usize,
    /// Generator position before the first draw (Monte Carlo only).
    pub seed_tag: Option<RngTag>,
}

/// `n` is the sample count for Monte Carlo and the nodes per axis for quadrature.
///
/// Monte Carlo with `n = 1` returns exactly `(∇V(X̂), ∇²V(X̂))` for one draw `X̂ ~ μ`.
/// Draws are sequential on `rng`.
pub fn compute_moments<P: Potential + ?Sized>(
    pot: &P,
    mu: &GaussianMeasure,
    mode: MomentMode,
    n: usize,
    rng: &mut StreamRng,
) -> Result<MomentEstimate> {
    check_dim(pot.dim(), mu.dim())?;
    let (b_hat, s_hat, n_samples, seed_tag) = match mode {
        MomentMode::Exact => {
            if !pot.has_exact_moments() {
                return Err(Error::Capability("exact moments"));
            }
            let (b, s) = pot.exact_moments(mu)?;
            (b, s, 0, None)
        }
        MomentMode::MonteCarlo => {
            if n == 0 {
                return Err(invalid("compute_moments: Monte Carlo needs n >= 1"));
            }
            let tag = RngTag::of(rng);
            let (mut b, s) = pot.grad_hess(&mu.sample(rng));
            let mut s = s.into_matrix();
            for _ in 1..n {
                let (g, h) = pot.grad_hess(&mu.sample(rng));
                b += g;
                s += h.as_matrix();
            }
            if n > 1 {
                let inv = 1.0 / n as f64;
                b *= inv;
                s *= inv;
            }
            (b, SymMatrix::symmetrized(s), n, Some(tag))
        }
        MomentMode::Quadrature => {
            let b = gauss_hermite_expectation(|x| pot.grad(x), mu, n)?;
            let s = gauss_hermite_expectation(|x| pot.hess(x).into_matrix(), mu, n)?;
            (b, SymMatrix::symmetrized(s), n.pow(mu.dim() as u32), None)
        }
    };
    if b_hat.iter().chain(s_hat.as_matrix().iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "moment estimate" });
    }
    Ok(MomentEstimate { b_hat, s_hat, mode, n_samples, seed_tag })
}

/// `E_μ V` by the requested mode, with a standard error for Monte Carlo (zero otherwise).
pub fn expected_potential<P: Potential + ?Sized>(
    pot: &P,
    mu: &GaussianMeasure,
    mode: MomentMode,
    n: usize,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    check_dim(pot.dim(), mu.dim())?;
    match mode {
        MomentMode::Exact => Ok((pot.exact_expectation(mu)?, 0.0)),
        MomentMode::Quadrature => Ok((gauss_hermite_expectation(|x| pot.value(x), mu, n)?, 0.0)),
        MomentMode::MonteCarlo => {
            if n < 2 {
                return Err(invalid("expected_potential: Monte Carlo needs n >= 2"));
            }
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            // shifted by the first draw to keep the variance accumulation well conditioned
            let mut shift = None;
            for _ in 0..n {
                let v = pot.value(&mu.sample(rng));
                let s = *shift.get_or_insert(v);
                sum += v - s;
                sum_sq += (v - s) * (v - s);
            }
            let nf = n as f64;
            let mean = sum / nf;
            let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            Ok((mean + shift.unwrap_or(0.0), (var / nf).sqrt()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use alloc::vec;
    use nalgebra::{dmatrix, dvector};

    fn fd_grad<P: Potential>(p: &P, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (p.value(&xp) - p.value(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn quadratic_examples() {
        let p = quadratic_potential(dvector![1.0], SpdMatrix::from_diagonal(&[2.0]).unwrap()).unwrap();
        assert_eq!(p.value(&dvector![2.0]), 1.0);
        assert_eq!(p.grad(&dvector![2.0]), dvector![2.0]);
        let id = quadratic_potential(DVector::zeros(3), SpdMatrix::identity(3)).unwrap();
        let x = dvector![1.0, -2.0, 0.5];
        assert!((id.value(&x) - 0.5 * x.norm_squared()).abs() < 1e-15);
        assert_eq!(id.grad(&x), x);
        assert!(quadratic_potential(DVector::zeros(2), SpdMatrix::identity(3)).is_err());
    }

    #[test]
    fn ill_conditioned_target_constants() {
        let mut rng = stream_rng(1, 0);
        let p = ill_conditioned_quadratic(10, -9.0, 0.0, &mut rng).unwrap();
        assert!((p.alpha() - 1e-9).abs() < 1e-24);
        assert!((p.beta() - 1.0).abs() < 1e-15);
        assert!(p.center().iter().all(|&a| (0.0..1.0).contains(&a)));
        let eig = sym_eig(p.precision().as_sym()).unwrap();
        assert!((eig.lambda_max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_moments_exact() {
        let p = quadratic_potential(DVector::zeros(2), SpdMatrix::identity(2)).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.3, -1.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let m = compute_moments(&p, &mu, MomentMode::Exact, 0, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(&m.b_hat, mu.mean());
        assert_eq!(m.s_hat, SymMatrix::identity(2));
        assert_eq!(m.n_samples, 0);
    }

    #[test]
    fn single_draw_monte_carlo_is_the_stochastic_oracle() {
        let pot: PotentialSpec = double_well_potential(3, 1.5).unwrap().into();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.3, -1.0, 2.0], DMatrix::identity(3, 3) * 0.7).unwrap();
        let mut rng = stream_rng(9, 4);
        let mut replay = rng.clone();
        let m = compute_moments(&pot, &mu, MomentMode::MonteCarlo, 1, &mut rng).unwrap();
        let x = mu.sample(&mut replay);
        assert_eq!(m.b_hat, pot.grad(&x));
        assert_eq!(m.s_hat, pot.hess(&x));
        assert_eq!(rng, replay);
        assert_eq!(m.seed_tag.unwrap().stream, 4);
    }

    #[test]
    fn monte_carlo_converges_to_exact_on_quadratic() {
        let mut rng = stream_rng(3, 0);
        let p = ill_conditioned_quadratic(3, -1.0, 0.0, &mut rng).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![1.0, 0.0, -1.0], dmatrix![1.0, 0.2, 0.0; 0.2, 2.0, 0.1; 0.0, 0.1, 0.5])
            .unwrap();
        let n = 1_000_000;
        let mc = compute_moments(&p, &mu, MomentMode::MonteCarlo, n, &mut rng).unwrap();
        let exact = compute_moments(&p, &mu, MomentMode::Exact, 0, &mut rng).unwrap();
        // Cov(∇V(X)) = QΣQ
        let q = p.precision().matrix();
        let var = q * mu.cov().matrix() * q;
        for i in 0..3 {
            let se = (var[(i, i)] / n as f64).sqrt();
            assert!((mc.b_hat[i] - exact.b_hat[i]).abs() <= 4.0 * se);
        }
        assert!((mc.s_hat.as_matrix() - exact.s_hat.as_matrix()).amax() < 1e-9);
    }

    #[test]
    fn logistic_examples() {
        let x = dmatrix![1.0, 2.0; -0.5, 0.3; 0.0, 1.0];
        let y = dvector![1.0, 0.0, 1.0];
        let p = logistic_potential(x, y).unwrap();
        assert!((p.value(&DVector::zeros(2)) - 3.0 * 2f64.ln()).abs() < 1e-14);

        let single = logistic_potential(dmatrix![1.0], dvector![1.0]).unwrap();
        assert!((single.grad(&dvector![0.0])[0] + 0.5).abs() < 1e-15);
        assert_eq!(single.alpha(), 0.0);
        assert!((single.beta() - 0.25).abs() < 1e-15);

        assert!(logistic_potential(dmatrix![1.0], dvector![0.5]).is_err());
        assert!(logistic_potential(DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn logistic_derivatives_match_finite_differences() {
        let mut rng = stream_rng(11, 0);
        let theta = dvector![0.5, -1.0, 0.2];
        let (x, y) = generate_logistic_data(&theta, 50, &mut rng).unwrap();
        let p = logistic_potential(x, y).unwrap();
        for _ in 0..10 {
            let t = GaussianMeasure::standard(3).sample(&mut rng);
            let g = p.grad(&t);
            let fd = fd_grad(&p, &t, 1e-5);
            assert!((&g - fd).norm() <= 1e-5 * g.norm().max(1.0));
            let h = p.hess(&t);
            let eig = sym_eig(&h).unwrap();
            assert!(eig.lambda_min() >= -1e-12 && eig.lambda_max() <= p.beta() + 1e-9);
        }
    }

    #[test]
    fn logistic_extreme_arguments_stay_finite() {
        let p = logistic_potential(dmatrix![1.0], dvector![0.0]).unwrap();
        let v = p.value(&dvector![800.0]);
        assert!((v - 800.0).abs() < 1e-9);
        assert!(p.value(&dvector![-800.0]).abs() < 1e-300);
        assert!((p.grad(&dvector![800.0])[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_data_generation() {
        let n = 20_000;
        let (_, y) = generate_logistic_data(&DVector::zeros(3), n, &mut stream_rng(2, 0)).unwrap();
        assert!((y.mean() - 0.5).abs() <= 4.0 / (n as f64).sqrt());
        let again = generate_logistic_data(&DVector::zeros(3), n, &mut stream_rng(2, 0)).unwrap().1;
        assert_eq!(y, again);

        let mut theta = dvector![1.0, -2.0, 0.5];
        theta *= 20.0 / theta.norm();
        let (x, y) = generate_logistic_data(&theta, 5000, &mut stream_rng(2, 1)).unwrap();
        let agree = (0..5000).filter(|&i| (x.row(i).transpose().dot(&theta) > 0.0) == (y[i] == 1.0)).count();
        assert!(agree as f64 / 5000.0 > 0.97, "{agree}");
        assert!(generate_logistic_data(&theta, 0, &mut stream_rng(2, 1)).is_err());
    }

    #[test]
    fn double_well_shape() {
        let p = double_well_potential(4, 2.0).unwrap();
        assert_eq!(p.grad(&DVector::zeros(4)), DVector::zeros(4));
        let minimum = dvector![1.0, -1.0, 1.0, -1.0];
        assert!(p.grad(&minimum).amax() < 1e-12);
        assert!(p.value(&minimum).abs() < 1e-15);
        assert_eq!((p.alpha(), p.beta()), (-2.0, 6.0));
        assert!(double_well_potential(2, 0.0).is_err());
        assert!(double_well_potential(2, -1.0).is_err());
    }

    #[test]
    fn double_well_pieces_join_to_second_order() {
        let c = well_cutoff();
        for (left, right) in [(-c - 1e-12, -c + 1e-12), (c - 1e-12, c + 1e-12)] {
            for piece in well_pieces() {
                assert!((piece.eval(left) - piece.eval(right)).abs() < 1e-10);
            }
        }
        let [h, dh, d2h] = well_pieces();
        assert!((h.eval(c) - 1.0 / 36.0).abs() < 1e-15);
        assert!((dh.eval(c) - c / 3.0).abs() < 1e-15);
        assert!((d2h.eval(c) - 3.0).abs() < 1e-14);
        assert!((d2h.eval(5.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn double_well_derivatives_and_hessian_bracket() {
        let p = double_well_potential(5, 1.3).unwrap();
        let wide = GaussianMeasure::isotropic(DVector::zeros(5), 4.0);
        let mut rng = stream_rng(5, 0);
        for _ in 0..10_000 {
            let x = wide.sample(&mut rng);
            let diag = p.hess(&x);
            let eig = sym_eig(&diag).unwrap();
            assert!(eig.lambda_min() >= p.alpha() - 1e-12 && eig.lambda_max() <= p.beta() + 1e-12);
        }
        for _ in 0..20 {
            let x = wide.sample(&mut rng);
            let g = p.grad(&x);
            assert!((&g - fd_grad(&p, &x, 1e-6)).norm() <= 1e-5 * g.norm().max(1.0));
        }
    }

    /// Composite Simpson on `[m − 12sd, m + 12sd]` with breakpoints at the well's cutoffs.
    fn simpson_gaussian(f: impl Fn(f64) -> f64, m: f64, var: f64) -> f64 {
        let sd = var.sqrt();
        let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
        let c = well_cutoff();
        let mut cuts = vec![lo];
        cuts.extend([-c, c].into_iter().filter(|&x| x > lo && x < hi));
        cuts.push(hi);
        let g = |x: f64| f(x) * (-(x - m) * (x - m) / (2.0 * var)).exp() / (2.0 * core::f64::consts::PI * var).sqrt();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let n = 20_000;
            let h = (w[1] - w[0]) / n as f64;
            let mut acc = g(w[0]) + g(w[1]);
            for i in 1..n {
                acc += g(w[0] + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += acc * h / 3.0;
        }
        total
    }

    #[test]
    fn double_well_exact_moments_match_simpson_and_monte_carlo() {
        let p = double_well_potential(2, 1.0).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.4, -1.7], dmatrix![0.8, 0.3; 0.3, 2.5]).unwrap();
        let mut rng = stream_rng(8, 0);
        let exact = compute_moments(&p, &mu, MomentMode::Exact, 0, &mut rng).unwrap();
        assert_eq!(exact.s_hat.as_matrix()[(0, 1)], 0.0);
        for j in 0..2 {
            let (m, var) = (mu.mean()[j], mu.cov().matrix()[(j, j)]);
            let unit = |x: f64| {
                let mut v = DVector::zeros(2);
                v[j] = x;
                v
            };
            let b = simpson_gaussian(|x| p.grad(&unit(x))[j], m, var);
            let s = simpson_gaussian(|x| p.hess(&unit(x)).as_matrix()[(j, j)], m, var);
            assert!((exact.b_hat[j] - b).abs() < 1e-10, "{} vs {b}", exact.b_hat[j]);
            assert!((exact.s_hat.as_matrix()[(j, j)] - s).abs() < 1e-10);
        }

        let n = 400_000;
        let (ev, se) = expected_potential(&p, &mu, MomentMode::MonteCarlo, n, &mut rng).unwrap();
        let exact_v = p.exact_expectation(&mu).unwrap();
        assert!((ev - exact_v).abs() <= 4.0 * se, "{ev} vs {exact_v} (se {se})");

        // narrow measure sits inside the middle piece: moments are the quartic's
        let narrow = GaussianMeasure::isotropic(dvector![0.0, 0.0], 1e-4);
        let (b, s) = p.exact_moments(&narrow).unwrap();
        assert!(b.amax() < 1e-15);
        assert!((s.as_matrix()[(0, 0)] - (3.0 * 1e-4 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn truncated_moments_of_full_line_are_gaussian_moments() {
        let (m, s) = (0.7, 1.9);
        let raw = |coef: [f64; 5]| truncated_poly_moment(&coef, m, s, f64::NEG_INFINITY, f64::INFINITY);
        assert!((raw([1.0, 0.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((raw([0.0, 1.0, 0.0, 0.0, 0.0]) - m).abs() < 1e-14);
        assert!((raw([0.0, 0.0, 1.0, 0.0, 0.0]) - (m * m + s * s)).abs() < 1e-13);
        let fourth = m.powi(4) + 6.0 * m * m * s * s + 3.0 * s.powi(4);
        assert!((raw([0.0, 0.0, 0.0, 0.0, 1.0]) - fourth).abs() < 1e-11);
        let split = truncated_poly_moment(&[0.0, 0.0, 1.0, 0.0, 0.0], m, s, f64::NEG_INFINITY, 0.3)
            + truncated_poly_moment(&[0.0, 0.0, 1.0, 0.0, 0.0], m, s, 0.3, f64::INFINITY);
        assert!((split - (m * m + s * s)).abs() < 1e-13);
    }

    #[test]
    fn capability_and_dimension_errors() {
        let p = logistic_potential(dmatrix![1.0, 0.0; 0.0, 1.0], dvector![1.0, 0.0]).unwrap();
        let mu = GaussianMeasure::standard(2);
        let mut rng = stream_rng(0, 0);
        assert_eq!(
            compute_moments(&p, &mu, MomentMode::Exact, 0, &mut rng),
            Err(Error::Capability("exact moments"))
        );
        assert!(compute_moments(&p, &mu, MomentMode::MonteCarlo, 0, &mut rng).is_err());
        assert!(compute_moments(&p, &GaussianMeasure::standard(3), MomentMode::MonteCarlo, 1, &mut rng).is_err());
        let big = double_well_potential(5, 1.0).unwrap();
        assert!(compute_moments(&big, &GaussianMeasure::standard(5), MomentMode::Quadrature, 8, &mut rng).is_err());
    }
}
