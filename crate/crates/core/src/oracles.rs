//! Slow, independent reference computations used to validate the main paths:
//! central finite differences along pushforward curves, grid-search JKO in one
//! dimension, and tensor-product Gauss–Hermite quadrature.
//!
//! Only `sym_eig` is shared with the code under test.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::bw::{AffineMap, GaussianMeasure};
use crate::error::{check_dim, invalid, Error, Result};
use crate::psd::{sym_eig, SymMatrix};

/// Largest dimension accepted by [`gauss_hermite_expectation`].
pub const MAX_QUADRATURE_DIM: usize = 4;

/// Central difference `[F((id + t h)_# μ) − F((id − t h)_# μ)] / (2t)`.
///
/// The perturbed measures are built directly (`mean m + s·h(m)`, covariance
/// `(I + sS) Σ (I + sS)`), not through `bw::pushforward_affine`.
pub fn fd_directional_derivative<F>(
    functional: F,
    mu: &GaussianMeasure,
    h: &AffineMap,
    t_step: f64,
) -> Result<f64>
where
    F: Fn(&GaussianMeasure) -> Result<f64>,
{
    if !(1e-6..=1e-2).contains(&t_step) {
        return Err(invalid("fd_directional_derivative: t_step must lie in [1e-6, 1e-2]"));
    }
    check_dim(mu.dim(), h.dim())?;
    let d = mu.dim();
    let shift = h.apply(mu.mean());
    let perturbed = |s: f64| -> Result<GaussianMeasure> {
        let lin = DMatrix::identity(d, d) + h.linear().as_matrix() * s;
        let mut cov = &lin * mu.cov().matrix() * &lin;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        GaussianMeasure::from_cov_matrix(mu.mean() + &shift * s, cov)
    };
    let plus = functional(&perturbed(t_step)?)?;
    let minus = functional(&perturbed(-t_step)?)?;
    Ok((plus - minus) / (2.0 * t_step))
}

/// A 1-D search bracket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(invalid("GridSpec: at least 3 points per axis"));
        }
        if !(lower < upper) {
            return Err(invalid("GridSpec: lower must be below upper"));
        }
        Ok(Self { lower, upper, points })
    }

    fn node(&self, i: usize) -> f64 {
        self.lower + (self.upper - self.lower) * i as f64 / (self.points - 1) as f64
    }

    pub fn cell_width(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }
}

fn grid_argmin(grid: &GridSpec, f: impl Fn(f64) -> f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..grid.points {
        let v = f(grid.node(i));
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Minimizes `η·H(N(0, s)) + ½(σ − √s)²` over variances `s` by a coarse grid pass
/// followed by a second pass over the two cells around the coarse winner.
///
/// Returns the refined argmin and the refined cell width.
pub fn grid_jko_1d(sigma_sq: f64, eta: f64, grid: GridSpec) -> Result<(f64, f64)> {
    if !(sigma_sq > 0.0) || !(eta >= 0.0) {
        return Err(invalid("grid_jko_1d: need sigma_sq > 0 and eta >= 0"));
    }
    if !(grid.lower > 0.0) {
        return Err(invalid("grid_jko_1d: variances must be positive"));
    }
    let sigma = sigma_sq.sqrt();
    let log_two_pi_e = 1.0 + (2.0 * core::f64::consts::PI).ln();
    let objective = |s: f64| {
        let neg_entropy = -0.5 * log_two_pi_e - 0.5 * s.ln();
        let gap = sigma - s.sqrt();
        eta * neg_entropy + 0.5 * gap * gap
    };
    let i = grid_argmin(&grid, objective);
    if i == 0 || i == grid.points - 1 {
        return Err(invalid("grid_jko_1d: minimizer lies on the bracket boundary"));
    }
    let fine = GridSpec::new(grid.node(i - 1), grid.node(i + 1), grid.points)?;
    let j = grid_argmin(&fine, objective);
    Ok((fine.node(j), fine.cell_width()))
}

/// Probabilists' Gauss–Hermite rule (weight `φ`, weights summing to one) via the
/// Golub–Welsch eigenproblem.
pub fn gauss_hermite_rule(nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes == 0 {
        return Err(invalid("gauss_hermite_rule: need at least one node"));
    }
    let mut jacobi = DMatrix::zeros(nodes, nodes);
    for k in 1..nodes {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = sym_eig(&SymMatrix::symmetrized(jacobi))?;
    let x = eig.values().iter().copied().collect();
    let w = (0..nodes).map(|j| eig.vectors()[(0, j)].powi(2)).collect();
    Ok((x, w))
}

/// Tensor-product Gauss–Hermite approximation of `E_μ f` after whitening by `Σ^{1/2}`.
/// Exact for polynomials of degree `< 2·nodes_per_axis` in each coordinate.
pub fn gauss_hermite_expectation<T, F>(mut f: F, mu: &GaussianMeasure, nodes_per_axis: usize) -> Result<T>
where
    F: FnMut(&DVector<f64>) -> T,
    T: Add<Output = T> + Mul<f64, Output = T>,
{
    let d = mu.dim();
    if d > MAX_QUADRATURE_DIM {
        return Err(invalid("gauss_hermite_expectation: dimension too large for a tensor grid"));
    }
    if !(5..=64).contains(&nodes_per_axis) {
        return Err(invalid("gauss_hermite_expectation: nodes_per_axis must lie in [5, 64]"));
    }
    let (nodes, weights) = gauss_hermite_rule(nodes_per_axis)?;
    let eig = sym_eig(mu.cov().as_sym())?;
    let mut root = eig.vectors().clone();
    for j in 0..d {
        let s = eig.values()[j].max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    let root = &root * eig.vectors().transpose();

    let mut index = vec![0usize; d];
    let mut acc: Option<T> = None;
    loop {
        let z = DVector::from_fn(d, |i, _| nodes[index[i]]);
        let w: f64 = index.iter().map(|&i| weights[i]).product();
        let x = mu.mean() + &root * z;
        let term = f(&x) * w;
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
        // odometer increment over the tensor grid
        let mut axis = 0;
        loop {
            if axis == d {
                return acc.ok_or(Error::NonFinite { context: "empty quadrature grid" });
            }
            index[axis] += 1;
            if index[axis] < nodes_per_axis {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bw::{entropy, entropy_jko, jko_eigenvalue};
    use nalgebra::dvector;

    #[test]
    fn fd_of_entropy_along_scaling_is_minus_d() {
        let mu = GaussianMeasure::from_cov_matrix(
            dvector![0.5, -1.0, 2.0],
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]),
        )
        .unwrap();
        let h = AffineMap::new(DVector::zeros(3), SymMatrix::identity(3), mu.mean().clone()).unwrap();
        let d = fd_directional_derivative(|m| Ok(entropy(m)), &mu, &h, 1e-4).unwrap();
        assert!((d + 3.0).abs() < 1e-8, "{d}");
    }

    #[test]
    fn fd_zero_direction_and_step_bounds() {
        let mu = GaussianMeasure::standard(2);
        let zero = AffineMap::zero(2);
        let d = fd_directional_derivative(|m| Ok(entropy(m)), &mu, &zero, 1e-3).unwrap();
        assert_eq!(d, 0.0);
        assert!(fd_directional_derivative(|m| Ok(entropy(m)), &mu, &zero, 0.1).is_err());
        assert!(fd_directional_derivative(|m| Ok(entropy(m)), &mu, &zero, 1e-7).is_err());
    }

    #[test]
    fn grid_jko_examples() {
        let grid = GridSpec::new(0.5, 4.0, 1000).unwrap();
        let (s, cell) = grid_jko_1d(1.0, 0.5, grid).unwrap();
        assert!((s - 0.5 * (2.0 + 3f64.sqrt())).abs() <= cell, "{s}");
        assert!((s - 1.8660).abs() < 1e-4);

        let (s, cell) = grid_jko_1d(1.0, 2.0, GridSpec::new(1.0, 10.0, 1000).unwrap()).unwrap();
        assert!((s - 4.0).abs() <= cell);

        let (s, cell) = grid_jko_1d(1.0, 1e-9, GridSpec::new(0.5, 1.5, 1000).unwrap()).unwrap();
        assert!((s - 1.0).abs() <= cell + 1e-8);
    }

    #[test]
    fn grid_jko_reports_bracket_violation() {
        let grid = GridSpec::new(0.1, 0.5, 100).unwrap();
        assert!(grid_jko_1d(1.0, 0.5, grid).is_err());
        assert!(GridSpec::new(1.0, 0.5, 10).is_err());
        assert!(GridSpec::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn grid_agrees_with_closed_form_jko_across_parameters() {
        for &eta in &[0.01, 0.1, 0.5, 1.0, 2.0, 10.0] {
            for &var in &[0.1, 1.0, 10.0] {
                let closed = jko_eigenvalue(var, eta);
                let grid = GridSpec::new(var * 0.5, var + 4.0 * eta + 1.0, 1000).unwrap();
                let (s, cell) = grid_jko_1d(var, eta, grid).unwrap();
                assert!((s - closed).abs() <= cell, "eta {eta} var {var}: {s} vs {closed}");
                assert!((s - closed).abs() <= 1e-4 * closed);
                let via_measure = entropy_jko(&dvector![0.0], &SymMatrix::from_diagonal(&[var]), eta).unwrap();
                assert!((via_measure.cov().matrix()[(0, 0)] - closed).abs() < 1e-12 * closed);
            }
        }
    }

    #[test]
    fn gauss_hermite_low_order_moments() {
        let mu = GaussianMeasure::from_cov_matrix(
            dvector![1.0, -2.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let one: f64 = gauss_hermite_expectation(|_| 1.0, &mu, 7).unwrap();
        assert!((one - 1.0).abs() < 1e-13);
        let mean: DVector<f64> = gauss_hermite_expectation(|x| x.clone(), &mu, 7).unwrap();
        assert!((mean - mu.mean()).amax() < 1e-13);
        let second: DMatrix<f64> =
            gauss_hermite_expectation(|x| (x - mu.mean()) * (x - mu.mean()).transpose(), &mu, 7).unwrap();
        assert!((second - mu.cov().matrix()).amax() < 1e-12);

        let scalar = GaussianMeasure::isotropic(dvector![0.0], 3.0);
        let v: f64 = gauss_hermite_expectation(|x| x[0] * x[0], &scalar, 5).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_rejects_large_dimension_and_bad_nodes() {
        let mu = GaussianMeasure::standard(5);
        assert!(gauss_hermite_expectation(|_| 1.0, &mu, 5).is_err());
        let mu = GaussianMeasure::standard(2);
        assert!(gauss_hermite_expectation(|_| 1.0, &mu, 4).is_err());
        assert!(gauss_hermite_expectation(|_| 1.0, &mu, 65).is_err());
    }
}
