//! Sample matrices, moment estimation (plain and Ledoit-Wolf shrunk), and
//! the scalar statistics used to compare activation inputs and outputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Default magnitude below which an entry counts as zero for [`sparsity`].
pub const DEFAULT_SPARSITY_TOL: f64 = 1e-8;
/// Default histogram resolution for [`entropy`].
pub const DEFAULT_ENTROPY_BINS: usize = 64;
/// Ridge strength for [`r2_linear`], relative to the mean input variance.
pub const R2_RIDGE: f64 = 1e-8;
/// Relative spread below which a sequence is treated as constant.
pub const PEARSON_FLAT_TOL: f64 = 1e-12;

/// An `n × d` batch of samples, one per row. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix(DMatrix<f64>);

impl SampleMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sample matrix has NaN or infinite entries".into()));
        }
        Ok(SampleMatrix(m))
    }

    pub fn from_row_slice(n: usize, d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::ShapeMismatch(format!("{} values cannot fill a {n}x{d} matrix", values.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), d, &flat)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    /// Row-major copy of all entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    /// Elementwise map; errors if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.0.map(f))
    }

    /// Rows with indices `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        SampleMatrix(self.0.select_rows(idx))
    }

    fn column_means(&self) -> DVector<f64> {
        let n = self.nrows().max(1) as f64;
        DVector::from_iterator(self.ncols(), self.0.column_iter().map(|c| c.sum() / n))
    }

    fn centered(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut c = self.0.clone();
        for (j, mut col) in c.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        c
    }

    fn require_rows(&self, needed: usize) -> Result<()> {
        if self.nrows() < needed {
            return Err(Error::TooFewSamples { needed, got: self.nrows() });
        }
        Ok(())
    }
}

/// Mean and covariance of a normal approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    /// Ledoit-Wolf intensity when the covariance was shrunk.
    pub shrinkage_intensity: Option<f64>,
    /// Set when every sample was identical and the covariance is zero.
    pub degenerate: bool,
}

impl GaussianMoments {
    /// Builds moments directly; the covariance is projected onto the PSD cone.
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianMoments { mean, cov: cov.psd_project()?, shrinkage_intensity: None, degenerate: false })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample covariance with divisor `n` (not PSD-projected).
fn sample_cov(centered: &DMatrix<f64>) -> SymMatrix {
    let n = centered.nrows() as f64;
    SymMatrix::symmetrized(centered.tr_mul(centered) / n)
}

/// Column mean and divisor-`n` covariance.
pub fn moments(s: &SampleMatrix) -> Result<GaussianMoments> {
    s.require_rows(2)?;
    let mean = s.column_means();
    let cov = sample_cov(&s.centered(&mean)).psd_project()?;
    Ok(GaussianMoments { mean, cov, shrinkage_intensity: None, degenerate: false })
}

/// Ledoit-Wolf shrinkage toward `(tr Σ / d) · I`.
///
/// The intensity is `min(β, δ) / δ` with `δ = ‖S − μI‖²_F / d` and
/// `β = (Σ_k ‖x_k‖⁴ / n − ‖S‖²_F) / (n d)` over centered rows `x_k`.
/// If all samples coincide the covariance is zero, the intensity 1 and
/// `degenerate` is set.
pub fn ledoit_wolf(s: &SampleMatrix) -> Result<GaussianMoments> {
    s.require_rows(2)?;
    let (n, d) = s.shape();
    let mean = s.column_means();
    let xc = s.centered(&mean);
    let cov = sample_cov(&xc);
    let tr = cov.trace();
    if tr <= 0.0 {
        return Ok(GaussianMoments {
            mean,
            cov: SymMatrix::zeros(d),
            shrinkage_intensity: Some(1.0),
            degenerate: true,
        });
    }
    let mu = tr / d as f64;
    let s_norm2 = cov.as_matrix().norm_squared();
    let row_norm4: f64 = xc
        .row_iter()
        .map(|r| {
            let q = r.norm_squared();
            q * q
        })
        .sum();
    let beta = ((row_norm4 / n as f64 - s_norm2) / (n as f64 * d as f64)).max(0.0);
    // ‖S − μI‖² = ‖S‖² − 2μ tr S + d μ²
    let delta = ((s_norm2 - 2.0 * mu * tr + d as f64 * mu * mu) / d as f64).max(0.0);
    let beta = beta.min(delta);
    let rho = if beta == 0.0 { 0.0 } else { beta / delta };

    let mut shrunk = cov.as_matrix() * (1.0 - rho);
    for i in 0..d {
        shrunk[(i, i)] += rho * mu;
    }
    Ok(GaussianMoments {
        mean,
        cov: SymMatrix::symmetrized(shrunk).psd_project()?,
        shrinkage_intensity: Some(rho),
        degenerate: false,
    })
}

/// Fraction of entries with `|x| ≤ tol`.
pub fn sparsity(s: &SampleMatrix, tol: f64) -> f64 {
    let total = s.as_matrix().len();
    if total == 0 {
        return 0.0;
    }
    let zeros = s.as_matrix().iter().filter(|x| x.abs() <= tol).count();
    zeros as f64 / total as f64
}

/// Shannon entropy (nats) of an equal-width histogram over `[min, max]`.
///
/// A constant matrix has entropy 0.
pub fn entropy(s: &SampleMatrix, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!("entropy needs at least 2 bins, got {bins}")));
    }
    let m = s.as_matrix();
    if m.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let lo = m.min();
    let hi = m.max();
    if hi <= lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in m.iter() {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = m.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum())
}

fn same_shape(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

fn same_rows(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch(format!("{} rows vs {} rows", x.nrows(), y.nrows())));
    }
    Ok(())
}

/// `‖X − Y‖_F`.
pub fn frob_diff(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    same_shape(x, y)?;
    Ok((x.as_matrix() - y.as_matrix()).norm())
}

/// In-sample R² of the least-squares fit `Y ≈ XW + c`, pooled over outputs.
///
/// A ridge of `R2_RIDGE · tr(X̃ᵀX̃)/d` keeps rank-deficient inputs solvable.
/// Constant outputs are fit exactly and score 1.
pub fn r2_linear(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    same_rows(x, y)?;
    x.require_rows(2)?;
    let xc = x.centered(&x.column_means());
    let yc = y.centered(&y.column_means());
    let ss_tot = yc.norm_squared();
    if ss_tot == 0.0 {
        return Ok(1.0);
    }
    let d = x.ncols();
    let mut gram = xc.tr_mul(&xc);
    let lambda = if d == 0 {
        0.0
    } else {
        let t = gram.trace() / d as f64;
        R2_RIDGE * if t > 0.0 { t } else { 1.0 }
    };
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let w = match gram.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => return Ok(0.0),
    };
    let ss_res = (yc - xc * w).norm_squared();
    Ok(1.0 - ss_res / ss_tot)
}

/// Linear CKA: `‖X̃ᵀỸ‖²_F / (‖X̃ᵀX̃‖_F ‖ỸᵀỸ‖_F)` on column-centered data.
pub fn linear_cka(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    same_rows(x, y)?;
    let xc = x.centered(&x.column_means());
    let yc = y.centered(&y.column_means());
    let xx = xc.tr_mul(&xc).norm();
    let yy = yc.tr_mul(&yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::DegenerateData("CKA of a constant matrix".into()));
    }
    let xy = xc.tr_mul(&yc).norm_squared();
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// Pearson correlation of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // spread at round-off level of the values counts as constant
    let flat = |ss: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ss.sqrt() <= PEARSON_FLAT_TOL * scale * n.sqrt()
    };
    if flat(saa, a) || flat(sbb, b) {
        return Err(Error::DegenerateData("zero variance in correlation".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
