//! Dense symmetric matrices and the spectral functions built on them.
//!
//! Every matrix power goes through a full symmetric eigendecomposition.
//! Eigenvalues below a scale-relative floor are treated as zero for the
//! square root and rejected for the inverse square root.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor: `max(REL_EIG_FLOOR * λ_max, ABS_EIG_FLOOR)`.
pub const REL_EIG_FLOOR: f64 = 1e-10;
pub const ABS_EIG_FLOOR: f64 = 1e-30;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_EIG_ITER: usize = 100_000;
const FLUSH_REL: f64 = 1e-100;

/// Exponents supported by [`SymMatrix::pow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    Sqrt,
    InvSqrt,
}

/// A real symmetric `d × d` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// Eigenvalues (ascending) and matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymMatrix {
    /// Validates symmetry and finiteness, then symmetrizes exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix has NaN or infinite entries".into()));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::ShapeMismatch(format!("matrix is not symmetric at ({i},{j}): {a} vs {b}")));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its transpose. Caller guarantees finiteness.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
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

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Full symmetric eigendecomposition, eigenvalues sorted ascending.
    pub fn eigen(&self) -> Result<Eigen> {
        let d = self.dim();
        if d == 0 {
            return Ok(Eigen { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
        }
        // Normalize and flush negligible entries first: squares of entries far
        // below the largest one underflow inside the Householder reduction.
        let scale = self.0.amax();
        if scale == 0.0 {
            return Ok(Eigen { values: DVector::zeros(d), vectors: DMatrix::identity(d, d) });
        }
        let scaled = self.0.map(|v| if v.abs() < FLUSH_REL * scale { 0.0 } else { v / scale });

        // Decoupled blocks are solved separately; the reduction can break
        // down on exactly zero columns.
        let mut all_values = DVector::zeros(d);
        let mut all_vectors = DMatrix::zeros(d, d);
        let mut col = 0;
        for block in coupled_blocks(&scaled) {
            let k = block.len();
            if k == 1 {
                all_values[col] = scaled[(block[0], block[0])];
                all_vectors[(block[0], col)] = 1.0;
                col += 1;
                continue;
            }
            let sub = DMatrix::from_fn(k, k, |i, j| scaled[(block[i], block[j])]);
            let eig = SymmetricEigen::try_new(sub, f64::EPSILON, MAX_EIG_ITER)
                .ok_or_else(|| Error::NonFinite("eigendecomposition did not converge".into()))?;
            if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("eigendecomposition produced NaN".into()));
            }
            for c in 0..k {
                all_values[col] = eig.eigenvalues[c];
                for (i, &row) in block.iter().enumerate() {
                    all_vectors[(row, col)] = eig.eigenvectors[(i, c)];
                }
                col += 1;
            }
        }
        let eig = SymmetricEigen { eigenvalues: all_values * scale, eigenvectors: all_vectors };
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
        let vectors = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(Eigen { values, vectors })
    }

    /// `Q f(Λ) Qᵀ` with `f(λ) = λ^p` for `p = ±1/2`.
    pub fn pow(&self, p: Power) -> Result<Self> {
        let eig = self.eigen()?;
        let floor = eig_floor(&eig.values);
        let f = |lam: f64| -> Result<f64> {
            match p {
                Power::Sqrt => Ok(if lam < floor { 0.0 } else { lam.sqrt() }),
                Power::InvSqrt if lam < floor => Err(Error::SingularMatrix(format!(
                    "eigenvalue {lam:e} below floor {floor:e} in inverse square root"
                ))),
                Power::InvSqrt => Ok(1.0 / lam.sqrt()),
            }
        };
        let mapped = eig.values.iter().map(|&l| f(l)).collect::<Result<Vec<_>>>()?;
        Ok(eig.recompose(&mapped))
    }

    pub fn sqrt(&self) -> Result<Self> {
        self.pow(Power::Sqrt)
    }

    pub fn inv_sqrt(&self) -> Result<Self> {
        self.pow(Power::InvSqrt)
    }

    /// Nearest PSD matrix in Frobenius norm. PSD inputs are returned as is.
    pub fn psd_project(&self) -> Result<Self> {
        let eig = self.eigen()?;
        if eig.values.iter().all(|&l| l >= 0.0) {
            return Ok(self.clone());
        }
        let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        Ok(eig.recompose(&clipped))
    }

    /// Trace of the principal square root, eigenvalues clipped at zero.
    pub fn sqrt_trace(&self) -> Result<f64> {
        Ok(self.eigen()?.values.iter().map(|&l| l.max(0.0).sqrt()).sum())
    }

    /// `B · self · B` for symmetric `B`, symmetrized.
    pub fn congruence(&self, b: &SymMatrix) -> Self {
        Self::symmetrized(&b.0 * &self.0 * &b.0)
    }
}

impl Eigen {
    fn recompose(&self, values: &[f64]) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// The scale-relative floor for a spectrum.
pub fn eig_floor(values: &DVector<f64>) -> f64 {
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    (REL_EIG_FLOOR * max).max(ABS_EIG_FLOOR)
}

/// Connected components of the nonzero pattern, each sorted.
fn coupled_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let d = m.nrows();
    let mut seen = vec![false; d];
    let mut blocks = vec![];
    for start in 0..d {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut block = vec![start];
        let mut next = 0;
        while next < block.len() {
            let i = block[next];
            next += 1;
            for j in 0..d {
                if !seen[j] && m[(i, j)] != 0.0 {
                    seen[j] = true;
                    block.push(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}

/// Relative Frobenius error `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
