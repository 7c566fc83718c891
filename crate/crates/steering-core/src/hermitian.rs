//! Dense complex linear algebra for small Hermitian matrices.
//!
//! Everything downstream (assemblages, witnesses, SDP data) is built out of
//! [`HermitianMatrix`]. Eigen-decompositions go through the real-symmetric
//! embedding `[[Re, -Im], [Im, Re]]` so a single real symmetric solver serves
//! the whole crate.

use nalgebra::{Complex, DMatrix};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type C64 = Complex<f64>;

/// Tolerance below which a matrix is silently symmetrized to `(m + m†)/2`.
const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is not trace-normalized (trace {0:.6})")]
    NotNormalized(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

/// A square complex matrix guaranteed Hermitian at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    mat: DMatrix<C64>,
}

impl HermitianMatrix {
    /// Builds from a raw complex matrix. Asymmetry below 1e-12 (relative to
    /// the largest entry) is repaired by averaging with the adjoint; anything
    /// larger is rejected as a real bug.
    pub fn new(mat: DMatrix<C64>) -> Result<Self, MatrixError> {
        if mat.nrows() != mat.ncols() {
            return Err(MatrixError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(MatrixError::InvalidMatrix);
        }
        let scale = mat.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let adj = mat.adjoint();
        let asym = (&mat - &adj).iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        if asym > HERMITICITY_TOL * scale {
            return Err(MatrixError::NotHermitian(asym));
        }
        Ok(Self {
            mat: (mat + adj).scale(0.5),
        })
    }

    /// Builds from real and imaginary parts given row-major as nested slices.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self, MatrixError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MatrixError::NotSquare {
                rows: n,
                cols: rows.iter().map(|r| r.len()).max().unwrap_or(0),
            });
        }
        Ok(Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))?)
    }

    /// Real symmetric matrix from row-major real entries.
    pub fn from_real(rows: &[&[f64]]) -> Result<Self, MatrixError> {
        let n = rows.len();
        let mat = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0));
        Self::new(mat)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// `Re Tr[self * other]`, the Hilbert-Schmidt inner product of Hermitian
    /// matrices (always real).
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        let mut acc = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += (self.mat[(i, j)] * other.mat[(j, i)]).re;
            }
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mat: self.mat.scale(s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat - &other.mat,
        }
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self {
            mat: self.mat.kronecker(&other.mat),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// The real-symmetric embedding `[[Re, -Im], [Im, Re]]` of size 2n x 2n.
    pub fn real_embedding(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.mat[(i, j)];
                out[(i, j)] = z.re;
                out[(i, j + n)] = -z.im;
                out[(i + n, j)] = z.im;
                out[(i + n, j + n)] = z.re;
            }
        }
        out
    }

    /// Inverse of [`real_embedding`](Self::real_embedding); averages the two
    /// copies so small symmetry breakage in the input is repaired.
    pub fn from_real_embedding(emb: &DMatrix<f64>) -> Result<Self, MatrixError> {
        let n2 = emb.nrows();
        assert!(n2 % 2 == 0 && emb.ncols() == n2);
        let n = n2 / 2;
        let mat = DMatrix::from_fn(n, n, |i, j| {
            let re = 0.5 * (emb[(i, j)] + emb[(i + n, j + n)]);
            let im = 0.5 * (emb[(i + n, j)] - emb[(i, j + n)]);
            C64::new(re, im)
        });
        Self::new(mat)
    }

    /// Eigenvalues in ascending order. The embedding doubles multiplicities;
    /// the duplicates are collapsed by keeping every other sorted value.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let emb = self.real_embedding();
        let eig = emb.symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.into_iter().step_by(2).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// PSD square root. Eigenvalues in `[-1e-9, 0)` are clipped to zero;
    /// anything more negative is rejected.
    pub fn sqrt_psd(&self) -> Result<Self, MatrixError> {
        let emb = self.real_embedding();
        let eig = emb.symmetric_eigen();
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < -1e-9 {
                return Err(MatrixError::NotPsd(*v));
            }
            *v = v.max(0.0).sqrt();
        }
        let sqrt_emb =
            &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Self::from_real_embedding(&sqrt_emb)
    }

    pub fn mul(&self, other: &Self) -> DMatrix<C64> {
        &self.mat * &other.mat
    }
}

/// Uhlmann fidelity `Tr sqrt(sqrt(r1) r2 sqrt(r1))` between density matrices.
pub fn state_fidelity(r1: &HermitianMatrix, r2: &HermitianMatrix) -> Result<f64, MatrixError> {
    for r in [r1, r2] {
        let min = r.min_eigenvalue();
        if min < -1e-9 {
            return Err(MatrixError::NotPsd(min));
        }
        if (r.trace() - 1.0).abs() > 1e-6 {
            return Err(MatrixError::NotNormalized(r.trace()));
        }
    }
    Ok(fidelity_subnormalized(r1, r2))
}

/// `Tr sqrt(sqrt(s1) s2 sqrt(s1))` for sub-normalized PSD matrices. Equals
/// `sqrt(Tr s1 * Tr s2) * F(s1/Tr s1, s2/Tr s2)`, which is exactly the term
/// the assemblage fidelity sums, with the zero-probability case handled
/// without dividing by zero. Computed as the nuclear norm of
/// `sqrt(s1) sqrt(s2)`, which is symmetric in its arguments by construction
/// (swapping them adjoints the matrix, leaving singular values unchanged).
pub fn fidelity_subnormalized(s1: &HermitianMatrix, s2: &HermitianMatrix) -> f64 {
    let sqrt_clipped = |m: &HermitianMatrix| match m.sqrt_psd() {
        Ok(s) => s,
        // Clip tiny negative parts; inputs are validated upstream.
        Err(_) => psd_clip(m).sqrt_psd().expect("clipped matrix is PSD"),
    };
    let a = sqrt_clipped(s1);
    let b = sqrt_clipped(s2);
    let prod = HermitianPair { mat: a.mul(&b) };
    // Singular values of the real embedding appear twice each.
    let emb = prod.real_embedding();
    0.5 * emb.singular_values().iter().sum::<f64>()
}

// Helper to reuse the embedding for a non-Hermitian complex matrix.
struct HermitianPair {
    mat: DMatrix<C64>,
}

impl HermitianPair {
    fn real_embedding(&self) -> DMatrix<f64> {
        let n = self.mat.nrows();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.mat[(i, j)];
                out[(i, j)] = z.re;
                out[(i, j + n)] = -z.im;
                out[(i + n, j)] = z.im;
                out[(i + n, j + n)] = z.re;
            }
        }
        out
    }
}

/// Projects onto the PSD cone by clipping negative eigenvalues to zero.
pub fn psd_clip(m: &HermitianMatrix) -> HermitianMatrix {
    let emb = m.real_embedding();
    let eig = emb.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    let clipped =
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    HermitianMatrix::from_real_embedding(&clipped).expect("clip preserves Hermiticity")
}

/// Coefficients of `rho = c0*I + cz*Z + cx*X + cy*Y` for a 2x2 Hermitian
/// matrix. A qubit density matrix has `c0 = 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliVector {
    pub c0: f64,
    pub cz: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PauliVector {
    pub fn to_matrix(&self) -> HermitianMatrix {
        let m = pauli_i()
            .scale(self.c0)
            .add(&pauli_z().scale(self.cz))
            .add(&pauli_x().scale(self.cx))
            .add(&pauli_y().scale(self.cy));
        m
    }

    pub fn from_matrix(m: &HermitianMatrix) -> Result<Self, MatrixError> {
        if m.dim() != 2 {
            return Err(MatrixError::DimMismatch(m.dim(), 2));
        }
        Ok(Self {
            c0: 0.5 * m.inner(&pauli_i()),
            cz: 0.5 * m.inner(&pauli_z()),
            cx: 0.5 * m.inner(&pauli_x()),
            cy: 0.5 * m.inner(&pauli_y()),
        })
    }
}

pub fn pauli_i() -> HermitianMatrix {
    HermitianMatrix::identity(2)
}

pub fn pauli_z() -> HermitianMatrix {
    HermitianMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap()
}

pub fn pauli_x() -> HermitianMatrix {
    HermitianMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
}

pub fn pauli_y() -> HermitianMatrix {
    HermitianMatrix::new(DMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(0.0, 0.0),
            C64::new(0.0, -1.0),
            C64::new(0.0, 1.0),
            C64::new(0.0, 0.0),
        ],
    ))
    .unwrap()
}

// JSON form: row-major array of [re, im] pairs, shared by every module.
impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|i| (0..n).map(|j| [self.mat[(i, j)].re, self.mat[(i, j)].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix is not square"));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1]));
        HermitianMatrix::new(mat).map_err(D::Error::custom)
    }
}
