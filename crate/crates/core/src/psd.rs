//! Dense symmetric and SPD matrix kernel.
//!
//! Everything downstream works with two newtypes over `DMatrix<f64>`:
//!
//! * [`SymMatrix`]: exactly symmetric (every constructor ends with `(A + Aᵀ)/2`).
//! * [`SpdMatrix`]: symmetric positive definite, stored together with its
//!   eigendecomposition. Square roots, inverses and log-determinants of an SPD
//!   matrix are all read off that single factorization.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};

/// Relative asymmetry accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// `λ_min > SPD_RATIO · λ_max` is required of an [`SpdMatrix`].
pub const SPD_RATIO: f64 = 1e-14;
/// Eigenvalues in `[-PSD_CLAMP · λ_max, 0]` are treated as rounding noise and clamped to zero.
pub const PSD_CLAMP: f64 = 1e-10;

const EIGEN_MAX_ITER: usize = 10_000;
const JACOBI_MAX_SWEEPS: usize = 64;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Overwrites `m` with `(m + mᵀ)/2`.
pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// FNV-1a over the bit patterns of the entries; used to identify a matrix in error reports.
pub fn matrix_hash(m: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in m.iter() {
        for byte in x.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// A real symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry up to [`SYMMETRY_TOL`] (relative to `max(1, max|A_ij|)`) and
    /// then removes the residual asymmetry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let tolerance = SYMMETRY_TOL * max_abs(&m).max(1.0);
        let n = m.nrows();
        let mut asymmetry: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asymmetry = asymmetry.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if !(asymmetry <= tolerance) {
            return Err(Error::NotSymmetric { asymmetry, tolerance });
        }
        Ok(Self::symmetrized(m))
    }

    /// Forces symmetry by averaging with the transpose. Use only on matrices that are
    /// symmetric in exact arithmetic (products like `M Σ M`).
    ///
    /// Panics if `m` is not square.
    pub fn symmetrized(mut m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrized: matrix must be square");
        symmetrize_in_place(&mut m);
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `A X A` for symmetric `X`, symmetrized.
    pub fn congruence(&self, x: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(&self.0 * &x.0 * &self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Eigendecomposition `A = Q diag(λ) Qᵀ` with eigenvalues in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Q diag(f(λ)) Qᵀ`, symmetrized.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.compose(|l| l)
    }

    /// Applies a spectral map that is monotone increasing on the spectrum, keeping
    /// the eigenvectors. The ascending order is preserved.
    pub fn map_increasing(&self, f: impl Fn(f64) -> f64) -> SymEigen {
        SymEigen { values: self.values.map(f), vectors: self.vectors.clone() }
    }

    /// Applies a spectral map that is monotone decreasing on the spectrum; the order
    /// of eigenpairs is reversed to stay ascending.
    fn map_decreasing(&self, f: impl Fn(f64) -> f64) -> SymEigen {
        let n = self.dim();
        let values = DVector::from_fn(n, |i, _| f(self.values[n - 1 - i]));
        let vectors = DMatrix::from_fn(n, n, |r, c| self.vectors[(r, n - 1 - c)]);
        SymEigen { values, vectors }
    }
}

/// Symmetric eigendecomposition, eigenvalues ascending, eigenvectors orthonormal.
pub fn sym_eig(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.dim();
    if n == 0 {
        return Err(invalid("sym_eig: empty matrix"));
    }
    if a.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "sym_eig input" });
    }
    let eig = a
        .0
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NoConvergence { matrix_hash: matrix_hash(&a.0) })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Eigendecomposition of a PSD matrix with tiny negative eigenvalues clamped to zero.
pub fn psd_eig(a: &SymMatrix) -> Result<SymEigen> {
    clamp_psd(sym_eig(a)?)
}

/// [`psd_eig`] computed by [`sym_eig_warm`].
pub fn psd_eig_warm(a: &SymMatrix, basis: &DMatrix<f64>) -> Result<SymEigen> {
    clamp_psd(sym_eig_warm(a, basis)?)
}

fn clamp_psd(mut eig: SymEigen) -> Result<SymEigen> {
    let lambda_max = eig.lambda_max();
    let lambda_min = eig.lambda_min();
    if lambda_min < -PSD_CLAMP * lambda_max.max(0.0) {
        return Err(Error::NotPsd { lambda_min, lambda_max });
    }
    eig.values.iter_mut().for_each(|l| *l = l.max(0.0));
    Ok(eig)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations applied to `Bᵀ A B` for an
/// orthogonal `basis` `B`.
///
/// When `B` nearly diagonalizes `A` (consecutive iterates of a small-step method)
/// one or two sweeps suffice, several times cheaper than a cold solve. Any orthogonal
/// `B` gives the correct result.
pub fn sym_eig_warm(a: &SymMatrix, basis: &DMatrix<f64>) -> Result<SymEigen> {
    let n = a.dim();
    if n == 0 {
        return Err(invalid("sym_eig_warm: empty matrix"));
    }
    check_dim(n, basis.nrows())?;
    check_dim(n, basis.ncols())?;
    if a.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "sym_eig_warm input" });
    }
    let mut b = basis.tr_mul(&(&a.0 * basis));
    symmetrize_in_place(&mut b);
    let mut v = basis.clone();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = b[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (b[(p, p)], b[(q, q)]);
                let g = 100.0 * apq.abs();
                // negligible against both diagonal entries at working precision
                if app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    b[(p, q)] = 0.0;
                    b[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let h = aqq - app;
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                b[(p, p)] = app - t * apq;
                b[(q, q)] = aqq + t * apq;
                b[(p, q)] = 0.0;
                b[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let (brp, brq) = (b[(r, p)], b[(r, q)]);
                        let (np, nq) = (brp - s * (brq + brp * tau), brq + s * (brp - brq * tau));
                        b[(r, p)] = np;
                        b[(p, r)] = np;
                        b[(r, q)] = nq;
                        b[(q, r)] = nq;
                    }
                    let (vrp, vrq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = vrp - s * (vrq + vrp * tau);
                    v[(r, q)] = vrq + s * (vrp - vrq * tau);
                }
            }
        }
        if !rotated {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]));
            let values = DVector::from_fn(n, |i, _| b[(order[i], order[i])]);
            let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
            return Ok(SymEigen { values, vectors });
        }
    }
    Err(Error::NoConvergence { matrix_hash: matrix_hash(&a.0) })
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(psd_eig(a)?.compose(f64::sqrt))
}

/// A symmetric positive definite matrix carrying its eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    matrix: SymMatrix,
    eigen: SymEigen,
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::new(m)?)
    }

    pub fn from_sym(matrix: SymMatrix) -> Result<Self> {
        let eigen = sym_eig(&matrix)?;
        check_spd(&eigen)?;
        Ok(Self { matrix, eigen })
    }

    /// Builds the matrix from a known spectrum; the stored matrix is `Q diag(λ) Qᵀ`.
    pub fn from_eigen(eigen: SymEigen) -> Result<Self> {
        check_spd(&eigen)?;
        let matrix = eigen.reconstruct();
        Ok(Self { matrix, eigen })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// `c I`; panics unless `c > 0`.
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        assert!(c > 0.0, "scaled_identity: scale must be positive");
        Self {
            matrix: SymMatrix(DMatrix::identity(dim, dim) * c),
            eigen: SymEigen {
                values: DVector::from_element(dim, c),
                vectors: DMatrix::identity(dim, dim),
            },
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_diagonal(diag))
    }

    /// `U diag(λ) Uᵀ` for orthogonal `U`.
    pub fn from_spectrum(basis: &DMatrix<f64>, spectrum: &[f64]) -> Result<Self> {
        check_dim(basis.nrows(), spectrum.len())?;
        let mut order: Vec<usize> = (0..spectrum.len()).collect();
        order.sort_by(|&i, &j| spectrum[i].total_cmp(&spectrum[j]));
        let n = spectrum.len();
        let eigen = SymEigen {
            values: DVector::from_fn(n, |i, _| spectrum[order[i]]),
            vectors: DMatrix::from_fn(n, n, |r, c| basis[(r, order[c])]),
        };
        Self::from_eigen(eigen)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix.0
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigen.lambda_min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen.lambda_max()
    }

    pub fn sqrt(&self) -> SymMatrix {
        self.eigen.compose(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> SymMatrix {
        self.eigen.compose(|l| 1.0 / l.sqrt())
    }

    pub fn inverse(&self) -> SpdMatrix {
        spd_inverse(self)
    }

    pub fn log_det(&self) -> f64 {
        log_det_spd(self)
    }

    /// Pairs a symmetric matrix with an eigendecomposition already computed for it.
    pub(crate) fn with_eigen(matrix: SymMatrix, eigen: SymEigen) -> Result<Self> {
        check_dim(matrix.dim(), eigen.dim())?;
        check_spd(&eigen)?;
        Ok(Self { matrix, eigen })
    }

    /// Spectral map that is increasing on `(0, ∞)` and maps into `(0, ∞)`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<SpdMatrix> {
        Self::from_eigen(self.eigen.map_increasing(f))
    }
}

fn check_spd(eigen: &SymEigen) -> Result<()> {
    let lambda_min = eigen.lambda_min();
    let lambda_max = eigen.lambda_max();
    if !lambda_min.is_finite() || !lambda_max.is_finite() {
        return Err(Error::NonFinite { context: "SPD spectrum" });
    }
    if !(lambda_min > 0.0 && lambda_min > SPD_RATIO * lambda_max) {
        return Err(Error::Singular { lambda_min, lambda_max });
    }
    Ok(())
}

pub fn spd_inverse(a: &SpdMatrix) -> SpdMatrix {
    let eigen = a.eigen.map_decreasing(|l| 1.0 / l);
    let matrix = eigen.reconstruct();
    SpdMatrix { matrix, eigen }
}

pub fn log_det_spd(a: &SpdMatrix) -> f64 {
    a.eigen.values.iter().map(|l| l.ln()).sum()
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(invalid("random_orthogonal: dim must be at least 1"));
    }
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}
