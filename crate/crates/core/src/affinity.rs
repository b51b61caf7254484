//! The affinity score: how far `Y` is from being a positive-definite affine
//! image of `X`.
//!
//! ```text
//! score = 1 − W2(T_aff X, Y) / (√2 · Tr[Σ(Y)]^{1/2})
//! ```
//!
//! `T_aff` is the closed-form Gaussian OT map between the normal
//! approximations of `X` and `Y`; the numerator is the exact empirical W2
//! between the transported sample and `Y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{affine_ot_map, bures_w2, gelbrich_gap_bound, score_denominator};
use crate::stats::{ledoit_wolf, moments, GaussianMoments, SampleMatrix};
use crate::transport::{assignment_w2, assignment_w2_limited, subsample, DEFAULT_MAX_EXACT};

pub const DEFAULT_DEGENERACY_EPS: f64 = 1e-12;

/// Covariance shrinkage policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Shrinkage {
    /// Shrink when `n < 2d`, or when the plain estimate is too singular
    /// for the transport map.
    #[default]
    Auto,
    On,
    Off,
}

/// Spatial reduction of `n × h × w × c` activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityOptions {
    pub shrinkage: Shrinkage,
    pub reduction: Reduction,
    pub degeneracy_eps: f64,
    pub clamp: bool,
    pub max_exact: usize,
    /// When set, clouds above `max_exact` are subsampled with this seed
    /// instead of rejected.
    pub subsample_seed: Option<u64>,
}

impl Default for AffinityOptions {
    fn default() -> Self {
        AffinityOptions {
            shrinkage: Shrinkage::Auto,
            reduction: Reduction::Mean,
            degeneracy_eps: DEFAULT_DEGENERACY_EPS,
            clamp: true,
            max_exact: DEFAULT_MAX_EXACT,
            subsample_seed: None,
        }
    }
}

impl AffinityOptions {
    pub fn with_shrinkage(mut self, s: Shrinkage) -> Self {
        self.shrinkage = s;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.degeneracy_eps.is_nan() || self.degeneracy_eps <= 0.0 {
            return Err(Error::InvalidInput("degeneracy_eps must be positive".into()));
        }
        if self.max_exact == 0 {
            return Err(Error::InvalidInput("max_exact must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityResult {
    /// `raw_score` clamped to `[0, 1]` when clamping is on; 1 when degenerate.
    pub score: f64,
    /// `1 − w2_numerator / denominator` before clamping.
    pub raw_score: f64,
    pub w2_numerator: f64,
    pub denominator: f64,
    pub shrinkage_used: bool,
    /// `Y` has (numerically) zero covariance; the score is 1 by convention.
    pub degenerate: bool,
}

/// A batch of `n` tensors of shape `h × w × c`, stored NHWC row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl SpatialBatch {
    pub fn new(n: usize, h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidInput(format!("empty tensor shape {n}x{h}x{w}x{c}")));
        }
        if values.len() != n * h * w * c {
            return Err(Error::ShapeMismatch(format!("{} values for a {n}x{h}x{w}x{c} tensor", values.len())));
        }
        Ok(SpatialBatch { n, h, w, c, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SpatialBatch { values: self.values.iter().map(|&v| f(v)).collect(), ..*self }
    }
}

/// Collapses the spatial axes: mean/sum give `n × c`, flatten `n × (h·w·c)`.
pub fn reduce_spatial(t: &SpatialBatch, mode: Reduction) -> Result<SampleMatrix> {
    let hw = t.h * t.w;
    match mode {
        Reduction::Flatten => SampleMatrix::from_row_slice(t.n, hw * t.c, &t.values),
        Reduction::Mean | Reduction::Sum => {
            let mut out = vec![0.0; t.n * t.c];
            for i in 0..t.n {
                let sample = &t.values[i * hw * t.c..(i + 1) * hw * t.c];
                let acc = &mut out[i * t.c..(i + 1) * t.c];
                for pixel in sample.chunks_exact(t.c) {
                    for (a, v) in acc.iter_mut().zip(pixel) {
                        *a += v;
                    }
                }
                if mode == Reduction::Mean {
                    acc.iter_mut().for_each(|a| *a /= hw as f64);
                }
            }
            SampleMatrix::from_row_slice(t.n, t.c, &out)
        }
    }
}

fn check_pair(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("X is {:?}, Y is {:?}", x.shape(), y.shape())));
    }
    if x.nrows() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: x.nrows() });
    }
    Ok(())
}

fn estimate(s: &SampleMatrix, shrink: bool) -> Result<GaussianMoments> {
    if shrink {
        ledoit_wolf(s)
    } else {
        moments(s)
    }
}

/// `Tr Σ(Y)` is negligible relative to the mean squared row norm.
fn is_degenerate(gy: &GaussianMoments, y: &SampleMatrix, eps: f64) -> bool {
    let n = y.nrows() as f64;
    let mean_sq = y.as_matrix().norm_squared() / n;
    gy.cov.trace() < eps * mean_sq.max(1.0)
}

fn empirical_w2(p: &SampleMatrix, q: &SampleMatrix, opts: &AffinityOptions) -> Result<f64> {
    if p.nrows() > opts.max_exact {
        if let Some(seed) = opts.subsample_seed {
            let (ps, qs) = subsample(p, q, opts.max_exact, seed)?;
            return Ok(assignment_w2_limited(&ps, &qs, opts.max_exact)?.0);
        }
    }
    Ok(assignment_w2_limited(p, q, opts.max_exact)?.0)
}

/// The affinity score of the pair `(X, Y)`; rows are paired samples.
pub fn affinity_score(x: &SampleMatrix, y: &SampleMatrix, opts: &AffinityOptions) -> Result<AffinityResult> {
    opts.validate()?;
    check_pair(x, y)?;
    let (n, d) = x.shape();

    let plain_y = moments(y)?;
    let denominator = score_denominator(&plain_y);
    if is_degenerate(&plain_y, y, opts.degeneracy_eps) {
        return Ok(AffinityResult {
            score: 1.0,
            raw_score: 1.0,
            w2_numerator: 0.0,
            denominator,
            shrinkage_used: false,
            degenerate: true,
        });
    }

    let shrink_first = match opts.shrinkage {
        Shrinkage::On => true,
        Shrinkage::Off => false,
        Shrinkage::Auto => n < 2 * d,
    };
    let map = match affine_map_for(x, y, &plain_y, shrink_first) {
        Err(Error::SingularMatrix(_)) if opts.shrinkage == Shrinkage::Auto && !shrink_first => {
            affine_map_for(x, y, &plain_y, true).map(|m| (m, true))
        }
        other => other.map(|m| (m, shrink_first)),
    };
    let (map, shrinkage_used) = map?;

    let transported = map.apply(x)?;
    let w2_numerator = empirical_w2(&transported, y, opts)?;
    let raw_score = 1.0 - w2_numerator / denominator;
    if !raw_score.is_finite() {
        return Err(Error::NonFinite("affinity score is not finite".into()));
    }
    let score = if opts.clamp { raw_score.clamp(0.0, 1.0) } else { raw_score };
    Ok(AffinityResult { score, raw_score, w2_numerator, denominator, shrinkage_used, degenerate: false })
}

fn affine_map_for(
    x: &SampleMatrix,
    y: &SampleMatrix,
    plain_y: &GaussianMoments,
    shrink: bool,
) -> Result<crate::gaussian::AffineMap> {
    let gx = estimate(x, shrink)?;
    let gy = if shrink { ledoit_wolf(y)? } else { plain_y.clone() };
    affine_ot_map(&gx, &gy)
}

/// Both transport bounds behind the score, for property checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityDiagnostics {
    pub score: AffinityResult,
    /// W2 between the (unshrunk) normal approximations of X and Y.
    pub gelbrich_lhs: f64,
    /// Exact empirical W2(X, Y).
    pub empirical_w2: f64,
    pub gap_bound: f64,
    /// `w2_numerator ≤ denominator · (1 + 1e-8)`.
    pub denom_bound_ok: bool,
}

pub fn affinity_diagnostics(x: &SampleMatrix, y: &SampleMatrix, opts: &AffinityOptions) -> Result<AffinityDiagnostics> {
    let score = affinity_score(x, y, opts)?;
    let (gx, gy) = (moments(x)?, moments(y)?);
    let gelbrich_lhs = bures_w2(&gx, &gy)?;
    let empirical_w2 = if x.nrows() > opts.max_exact { empirical_w2(x, y, opts)? } else { assignment_w2(x, y)?.0 };
    let gap_bound = match gelbrich_gap_bound(&gx, &gy) {
        Ok(b) => b,
        Err(Error::DegenerateData(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(AffinityDiagnostics {
        denom_bound_ok: score.w2_numerator <= score.denominator * (1.0 + 1e-8),
        score,
        gelbrich_lhs,
        empirical_w2,
        gap_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::rng::{normal_matrix, rng};
    use nalgebra::DMatrix;

    fn gaussian(n: usize, d: usize, seed: u64) -> SampleMatrix {
        SampleMatrix::new(normal_matrix(&mut rng(seed), n, d)).unwrap()
    }

    fn random_pd(d: usize, seed: u64) -> DMatrix<f64> {
        let g = normal_matrix(&mut rng(seed), d, d);
        g.tr_mul(&g) / d as f64 + DMatrix::identity(d, d) * 0.5
    }

    fn off() -> AffinityOptions {
        AffinityOptions::default().with_shrinkage(Shrinkage::Off)
    }

    #[test]
    fn identity_scores_one() {
        let x = gaussian(100, 5, 1);
        let r = affinity_score(&x, &x, &AffinityOptions::default()).unwrap();
        assert!((r.score - 1.0).abs() < 1e-9, "{r:?}");
        assert!(r.w2_numerator < 1e-8);
        assert!(!r.degenerate);
    }

    #[test]
    fn pd_affine_image_scores_one() {
        let x = gaussian(300, 8, 2);
        let m = random_pd(8, 3);
        let mut y = x.as_matrix() * &m;
        for (j, mut c) in y.column_iter_mut().enumerate() {
            c.add_scalar_mut(j as f64 - 3.0);
        }
        let y = SampleMatrix::new(y).unwrap();
        let r = affinity_score(&x, &y, &off()).unwrap();
        assert!(r.score >= 0.999, "{r:?}");
    }

    #[test]
    fn constant_output_is_degenerate() {
        let x = gaussian(50, 4, 3);
        let y = SampleMatrix::new(DMatrix::from_element(50, 4, 2.0)).unwrap();
        let r = affinity_score(&x, &y, &AffinityOptions::default()).unwrap();
        assert_eq!(r.score, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn relu_is_less_affine_than_sigmoid() {
        let x = gaussian(400, 30, 4);
        let opts = AffinityOptions::default();
        let relu = affinity_score(&x, &ActivationKind::Relu.apply(&x).unwrap(), &opts).unwrap();
        let sig = affinity_score(&x, &ActivationKind::Sigmoid.apply(&x).unwrap(), &opts).unwrap();
        assert!(relu.score < sig.score, "{} vs {}", relu.score, sig.score);
    }

    #[test]
    fn shape_errors() {
        let opts = AffinityOptions::default();
        assert!(matches!(
            affinity_score(&gaussian(10, 2, 1), &gaussian(10, 3, 1), &opts),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            affinity_score(&gaussian(1, 2, 1), &gaussian(1, 2, 2), &opts),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn shrinkage_off_on_rank_deficient_errors() {
        // d > n: the plain covariance of X is singular
        let x = gaussian(10, 20, 5);
        let y = ActivationKind::Tanh.apply(&x).unwrap();
        assert!(matches!(affinity_score(&x, &y, &off()), Err(Error::SingularMatrix(_))));
        let r = affinity_score(&x, &y, &AffinityOptions::default()).unwrap();
        assert!(r.shrinkage_used);
        assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn auto_falls_back_to_shrinkage_on_singular_output() {
        // ReLU far in the negative half: only a handful of entries survive
        let x = gaussian(200, 20, 6).map(|v| v - 3.0).unwrap();
        let y = ActivationKind::Relu.apply(&x).unwrap();
        let r = affinity_score(&x, &y, &AffinityOptions::default()).unwrap();
        assert!(r.shrinkage_used);
        assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn too_large_unless_subsampled() {
        let x = gaussian(40, 2, 7);
        let y = ActivationKind::Relu.apply(&x).unwrap();
        let mut opts = AffinityOptions { max_exact: 20, ..AffinityOptions::default() };
        assert!(matches!(affinity_score(&x, &y, &opts), Err(Error::TooLarge(_))));
        opts.subsample_seed = Some(1);
        let a = affinity_score(&x, &y, &opts).unwrap();
        assert_eq!(a, affinity_score(&x, &y, &opts).unwrap());
    }

    #[test]
    fn reduce_spatial_examples() {
        let t = SpatialBatch::new(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(reduce_spatial(&t, Reduction::Mean).unwrap().row(0), vec![2.5]);
        assert_eq!(reduce_spatial(&t, Reduction::Sum).unwrap().row(0), vec![10.0]);
        assert_eq!(reduce_spatial(&t, Reduction::Flatten).unwrap().row(0), vec![1.0, 2.0, 3.0, 4.0]);

        let vals: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = SpatialBatch::new(4, 1, 1, 3, vals).unwrap();
        let m = reduce_spatial(&t, Reduction::Mean).unwrap();
        assert_eq!(m, reduce_spatial(&t, Reduction::Sum).unwrap());
        assert_eq!(m, reduce_spatial(&t, Reduction::Flatten).unwrap());

        let g = normal_matrix(&mut rng(1), 3, 4 * 5 * 2);
        let t = SpatialBatch::new(3, 4, 5, 2, g.transpose().as_slice().to_vec()).unwrap();
        let mean = reduce_spatial(&t, Reduction::Mean).unwrap();
        let sum = reduce_spatial(&t, Reduction::Sum).unwrap();
        assert!((mean.as_matrix() - sum.as_matrix() / 20.0).amax() < 1e-14);
    }

    #[test]
    fn diagnostics_on_identity() {
        let x = gaussian(60, 3, 8);
        let d = affinity_diagnostics(&x, &x, &off()).unwrap();
        assert!(d.gelbrich_lhs < 1e-7);
        assert_eq!(d.empirical_w2, 0.0);
        assert!(d.denom_bound_ok);
    }

    #[test]
    fn invalid_options() {
        let x = gaussian(10, 2, 1);
        let opts = AffinityOptions { degeneracy_eps: 0.0, ..AffinityOptions::default() };
        assert!(matches!(affinity_score(&x, &x, &opts), Err(Error::InvalidInput(_))));
    }
}
