//! Measuring the non-linearity of transformations with optimal transport.
//!
//! The central quantity is the affinity score of a pair of paired samples
//! `(X, Y)`: one minus the normalized exact transport cost between `Y` and
//! the best positive-definite affine image of `X`. It is 1 exactly when `Y`
//! is such an affine image and decreases as the map becomes non-linear.
//! Scoring every activation site of a network in forward order yields its
//! non-linearity signature.

pub mod activations;
pub mod affinity;
pub mod analysis;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod signature;
pub mod stats;
pub mod synth;
pub mod table;
pub mod tensor_io;
pub mod transport;

pub use activations::ActivationKind;
pub use affinity::{
    affinity_diagnostics, affinity_score, reduce_spatial, AffinityDiagnostics, AffinityOptions, AffinityResult,
    Reduction, Shrinkage, SpatialBatch,
};
pub use analysis::{cluster, dtw, pairwise_dtw, Dendrogram, DistanceMatrix, Linkage};
pub use error::{Error, Result};
pub use gaussian::{affine_ot_map, bures_w2, gelbrich_gap_bound, score_denominator, AffineMap};
pub use linalg::SymMatrix;
pub use signature::{aggregate_stats, compute_signature, Signature, SignatureMode, SiteScore};
pub use stats::{ledoit_wolf, moments, GaussianMoments, SampleMatrix};
pub use synth::{generate_capture, run_sweep, SweepGrid, SweepSpec, SynthNetSpec};
pub use tensor_io::{read_array, write_array, Capture, CaptureManifest};
pub use transport::{assignment_w2, brute_force_w2, subsample, Assignment};
