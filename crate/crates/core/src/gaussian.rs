//! Closed-form transport between normal approximations.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{rel_frobenius, SymMatrix};
use crate::stats::{GaussianMoments, SampleMatrix};

/// `x ↦ A x + b` with `A` symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: SymMatrix,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        AffineMap { a: SymMatrix::identity(d), b: DVector::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Applies the map to every row of `s`.
    pub fn apply(&self, s: &SampleMatrix) -> Result<SampleMatrix> {
        if s.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "affine map of dimension {} applied to {} columns",
                self.dim(),
                s.ncols()
            )));
        }
        // rows are samples: (A x)ᵀ = xᵀ A since A is symmetric
        let mut out = s.as_matrix() * self.a.as_matrix();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        SampleMatrix::new(out)
    }
}

fn check_dims(gx: &GaussianMoments, gy: &GaussianMoments) -> Result<()> {
    if gx.dim() != gy.dim() {
        return Err(Error::ShapeMismatch(format!("moments of dimension {} vs {}", gx.dim(), gy.dim())));
    }
    Ok(())
}

/// `Tr[(Σx^{1/2} Σy Σx^{1/2})^{1/2}]`, i.e. `Tr[(Σx Σy)^{1/2}]`.
pub fn root_cross_trace(cx: &SymMatrix, cy: &SymMatrix) -> Result<f64> {
    let rx = cx.sqrt()?;
    cy.congruence(&rx).sqrt_trace()
}

/// Bures–Wasserstein distance between two normal approximations.
pub fn bures_w2(gx: &GaussianMoments, gy: &GaussianMoments) -> Result<f64> {
    check_dims(gx, gy)?;
    let mean_term = (&gx.mean - &gy.mean).norm_squared();
    let cross = root_cross_trace(&gx.cov, &gy.cov)?;
    let cov_term = (gx.cov.trace() + gy.cov.trace() - 2.0 * cross).max(0.0);
    Ok((mean_term + cov_term).sqrt())
}

/// The OT map between `N(μx, Σx)` and `N(μy, Σy)`:
/// `A = Σy^{1/2} (Σy^{1/2} Σx Σy^{1/2})^{-1/2} Σy^{1/2}`, `b = μy − A μx`.
pub fn affine_ot_map(gx: &GaussianMoments, gy: &GaussianMoments) -> Result<AffineMap> {
    check_dims(gx, gy)?;
    let ry = gy.cov.sqrt()?;
    let inner = gx.cov.congruence(&ry);
    let inner_inv_root = inner.inv_sqrt()?;
    let a = inner_inv_root.congruence(&ry);
    let b = &gy.mean - a.as_matrix() * &gx.mean;

    #[cfg(debug_assertions)]
    {
        let vals = inner.eigen()?.values;
        let well_conditioned = !vals.is_empty() && vals[0] > 1e-8 * vals[vals.len() - 1];
        if well_conditioned {
            let pushed: nalgebra::DMatrix<f64> = a.as_matrix() * gx.cov.as_matrix() * a.as_matrix();
            let err = rel_frobenius(&pushed, gy.cov.as_matrix());
            debug_assert!(err <= 1e-6, "push-forward identity violated: {err:e}");
        }
    }
    Ok(AffineMap { a, b })
}

/// Relative Frobenius error of `A Σx A` against `Σy`.
pub fn push_forward_error(map: &AffineMap, gx: &GaussianMoments, gy: &GaussianMoments) -> f64 {
    let pushed = map.a.as_matrix() * gx.cov.as_matrix() * map.a.as_matrix();
    rel_frobenius(&pushed, gy.cov.as_matrix())
}

/// `2 Tr[(Σx Σy)^{1/2}] / √(Tr Σx + Tr Σy)`, an upper bound on the gap between
/// the Gaussian and the exact transport distances.
pub fn gelbrich_gap_bound(gx: &GaussianMoments, gy: &GaussianMoments) -> Result<f64> {
    check_dims(gx, gy)?;
    let total = gx.cov.trace() + gy.cov.trace();
    if total <= 0.0 {
        return Err(Error::DegenerateData("both covariances have zero trace".into()));
    }
    Ok(2.0 * root_cross_trace(&gx.cov, &gy.cov)? / total.sqrt())
}

/// `√2 · Tr[Σy]^{1/2}`, the normalizer of the affinity score.
pub fn score_denominator(gy: &GaussianMoments) -> f64 {
    std::f64::consts::SQRT_2 * gy.cov.trace().max(0.0).sqrt()
}
