//! Synthetic data: the activation sweep over Gaussian inputs and a small
//! feedforward network that writes captures.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::affinity::{affinity_score, AffinityOptions, AffinityResult};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, named_seed, normal_matrix, rng};
use crate::stats::SampleMatrix;
use crate::tensor_io::{write_array, write_manifest, CaptureManifest, CaptureReduction, SiteEntry, FORMAT_VERSION};

pub const DEFAULT_STDS: [f64; 6] = [2.0, 1.0, 0.5, 0.25, 0.1, 0.01];
pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_N: usize = 1000;
pub const BASELINE_STD: f64 = 2.0;

/// `k` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![a],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// How per-cell noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Every cell has its own stream.
    #[default]
    Independent,
    /// Cells at `m` and `−m` share one stream with opposite signs, so the
    /// sample at `−m` is exactly the negation of the sample at `m`.
    Mirrored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: ActivationKind,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    pub options: AffinityOptions,
}

impl SweepSpec {
    /// 20 means over `[−20, 20]`, the default stds, 1000 points in 300 dimensions.
    pub fn new(kind: ActivationKind, seed: u64) -> Self {
        SweepSpec {
            kind,
            means: linspace(-20.0, 20.0, 20),
            stds: DEFAULT_STDS.to_vec(),
            dim: DEFAULT_DIM,
            n: DEFAULT_N,
            seed,
            noise: NoiseMode::Independent,
            options: AffinityOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: self.n });
        }
        if self.dim == 0 {
            return Err(Error::InvalidInput("sweep dimension must be at least 1".into()));
        }
        if self.means.is_empty() || self.stds.is_empty() {
            return Err(Error::InvalidInput("sweep needs at least one mean and one std".into()));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput("sweep stds must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("sweep means".into()));
        }
        Ok(())
    }

    /// The input sample of cell `(i, j)`: `N(mᵢ·1, σⱼ²·I)`, `n × dim`.
    pub fn cell_sample(&self, i: usize, j: usize) -> Result<SampleMatrix> {
        let m = self.means[i];
        let s = self.stds[j];
        let (key, sign) = match self.noise {
            NoiseMode::Independent => (i as u64, 1.0),
            NoiseMode::Mirrored => (m.abs().to_bits(), if m < 0.0 { -1.0 } else { 1.0 }),
        };
        let z = normal_matrix(&mut rng(derive_seed(self.seed, &[key, j as u64])), self.n, self.dim);
        SampleMatrix::new(z.map(|v| m + sign * s * v))
    }

    /// Every entry independently takes one of the means uniformly at random,
    /// plus `N(0, BASELINE_STD²)` noise.
    pub fn baseline_sample(&self) -> Result<SampleMatrix> {
        let mut r = rng(named_seed(self.seed, "baseline"));
        let k = self.means.len();
        let mut m = DMatrix::zeros(self.n, self.dim);
        for i in 0..self.n {
            for j in 0..self.dim {
                let mean = self.means[r.random_range(0..k)];
                let z: f64 = r.sample(StandardNormal);
                m[(i, j)] = mean + BASELINE_STD * z;
            }
        }
        SampleMatrix::new(m)
    }
}

/// Scores indexed by `(mean, std)`, plus the whole-interval baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kind: ActivationKind,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// `cells[i][j]` is the cell at `means[i]`, `stds[j]`.
    pub cells: Vec<Vec<AffinityResult>>,
    pub baseline: AffinityResult,
}

impl SweepGrid {
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.cells[i][j].score
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().flatten().map(|c| c.score)
    }

    pub fn min_score(&self) -> f64 {
        self.scores().fold(f64::INFINITY, f64::min)
    }

    /// Scores over all stds at mean index `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.cells[i].iter().map(|c| c.score).collect()
    }
}

fn score_sample(kind: ActivationKind, x: &SampleMatrix, opts: &AffinityOptions) -> Result<AffinityResult> {
    let y = kind.apply(x)?;
    affinity_score(x, &y, opts)
}

/// Runs every cell (in parallel when enabled) and the baseline.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepGrid> {
    spec.validate()?;
    let (nm, ns) = (spec.means.len(), spec.stds.len());
    let flat = par::map_range(nm * ns + 1, |k| {
        let x = if k == nm * ns { spec.baseline_sample()? } else { spec.cell_sample(k / ns, k % ns)? };
        score_sample(spec.kind, &x, &spec.options)
    });
    let mut flat = flat.into_iter().collect::<Result<Vec<_>>>()?;
    let baseline = flat.pop().expect("baseline present");
    let cells = flat.chunks(ns).map(<[_]>::to_vec).collect();
    Ok(SweepGrid { kind: spec.kind, means: spec.means.clone(), stds: spec.stds.clone(), cells, baseline })
}

/// A feedforward network with fixed random weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNetSpec {
    /// Output width of each layer; the input width equals the first entry.
    pub layer_widths: Vec<usize>,
    pub activation: ActivationKind,
    pub weight_scale: f64,
    pub seed: u64,
    pub batch: usize,
    pub batches: usize,
}

impl SynthNetSpec {
    fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        if self.layer_widths.iter().any(|&w| w < 2) {
            return Err(Error::InvalidInput("layer widths must be at least 2".into()));
        }
        if self.batch < 2 || self.batches == 0 {
            return Err(Error::InvalidInput("need batch ≥ 2 and at least one batch".into()));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale > 0.0) {
            return Err(Error::InvalidInput("weight_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Layer weights and biases; depends on the seed and widths only.
    fn parameters(&self) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let mut r = rng(named_seed(self.seed, "weights"));
        let mut fan_in = self.input_width();
        self.layer_widths
            .iter()
            .map(|&w| {
                let scale = self.weight_scale / (fan_in as f64).sqrt();
                let weights = normal_matrix(&mut r, fan_in, w) * scale;
                let bias = DVector::from_fn(w, |_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
                fan_in = w;
                (weights, bias)
            })
            .collect()
    }

    /// Network inputs for all batches, drawn from one stream in row order
    /// so that any split into batches covers the same data.
    fn inputs(&self) -> DMatrix<f64> {
        normal_matrix(&mut rng(named_seed(self.seed, "inputs")), self.batch * self.batches, self.input_width())
    }

    /// `(pre-activation, post-activation)` per layer, over all rows.
    pub fn forward(&self) -> Result<Vec<(SampleMatrix, SampleMatrix)>> {
        self.validate()?;
        let mut h = self.inputs();
        let mut out = Vec::with_capacity(self.layer_widths.len());
        for (w, b) in self.parameters() {
            let mut pre = &h * w;
            for mut row in pre.row_iter_mut() {
                row += b.transpose();
            }
            let post = pre.map(|v| self.activation.eval(v));
            h = post.clone();
            out.push((SampleMatrix::new(pre)?, SampleMatrix::new(post)?));
        }
        Ok(out)
    }
}

pub fn site_id(layer: usize) -> String {
    format!("layer{layer}")
}

/// Runs the network and writes its capture into `out`.
pub fn generate_capture(spec: &SynthNetSpec, out: impl AsRef<Path>) -> Result<CaptureManifest> {
    let out = out.as_ref();
    let layers = spec.forward()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sites = Vec::with_capacity(layers.len());
    for (k, (pre, post)) in layers.iter().enumerate() {
        let id = site_id(k);
        let mut entry = SiteEntry {
            site_id: id.clone(),
            activation_name: spec.activation.to_string(),
            group_tag: "dense".into(),
            input_files: vec![],
            output_files: vec![],
            n_per_batch: spec.batch,
            channels: pre.ncols(),
            order_index: Some(k),
            spatial_shape: None,
        };
        for b in 0..spec.batches {
            let rows: Vec<usize> = (b * spec.batch..(b + 1) * spec.batch).collect();
            let (fi, fo) = (format!("{id}_b{b:04}_in.npy"), format!("{id}_b{b:04}_out.npy"));
            write_array(&pre.select_rows(&rows), out.join(&fi))?;
            write_array(&post.select_rows(&rows), out.join(&fo))?;
            entry.input_files.push(fi);
            entry.output_files.push(fo);
        }
        sites.push(entry);
    }
    let manifest = CaptureManifest {
        format_version: FORMAT_VERSION,
        model_name: format!("mlp-{}-{}", spec.activation, spec.layer_widths.len()),
        dataset_tag: format!("gaussian-seed{}", spec.seed),
        reduction: CaptureReduction::Mean,
        sites,
    };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{read_manifest, validate};
    use ActivationKind::*;

    fn small(kind: ActivationKind) -> SweepSpec {
        SweepSpec {
            means: vec![-20.0, -1.0, 0.0, 1.0, 20.0],
            stds: vec![1.0, 0.01],
            dim: 6,
            n: 60,
            ..SweepSpec::new(kind, 11)
        }
    }

    #[test]
    fn default_means() {
        let m = linspace(-20.0, 20.0, 20);
        assert_eq!(m.len(), 20);
        assert_eq!(m[0], -20.0);
        assert_eq!(m[19], 20.0);
        assert!((m[1] - m[0] - 40.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn cell_sample_moments() {
        let spec = SweepSpec { n: 4000, dim: 3, ..small(Relu) };
        let x = spec.cell_sample(3, 0).unwrap();
        let mean = x.as_matrix().mean();
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        let var = x.as_matrix().map(|v| (v - mean).powi(2)).mean();
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn grid_shape_and_range() {
        let g = run_sweep(&small(Gelu)).unwrap();
        assert_eq!(g.cells.len(), 5);
        assert!(g.cells.iter().all(|r| r.len() == 2));
        assert!(g.scores().all(|s| (0.0..=1.0).contains(&s)));
        assert!((0.0..=1.0).contains(&g.baseline.score));
    }

    #[test]
    fn relu_extremes() {
        let g = run_sweep(&small(Relu)).unwrap();
        assert!(g.score(4, 1) >= 0.999);
        assert_eq!(g.score(0, 1), 1.0);
        assert!(g.cells[0][1].degenerate);
    }

    #[test]
    fn sweep_is_reproducible() {
        let spec = small(Sigmoid);
        assert_eq!(run_sweep(&spec).unwrap(), run_sweep(&spec).unwrap());
    }

    #[test]
    fn mirrored_noise_negates() {
        let spec = SweepSpec { noise: NoiseMode::Mirrored, ..small(Tanh) };
        let a = spec.cell_sample(1, 0).unwrap();
        let b = spec.cell_sample(3, 0).unwrap();
        assert_eq!(a.as_matrix(), &(-b.as_matrix()));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(run_sweep(&SweepSpec { n: 1, ..small(Relu) }).is_err());
        assert!(run_sweep(&SweepSpec { stds: vec![0.0], ..small(Relu) }).is_err());
        assert!(run_sweep(&SweepSpec { dim: 0, ..small(Relu) }).is_err());
    }

    fn net(widths: Vec<usize>, batch: usize, batches: usize) -> SynthNetSpec {
        SynthNetSpec { layer_widths: widths, activation: Relu, weight_scale: 1.0, seed: 5, batch, batches }
    }

    #[test]
    fn forward_shapes() {
        let layers = net(vec![4, 6, 3], 10, 2).forward().unwrap();
        let shapes: Vec<_> = layers.iter().map(|(a, b)| (a.shape(), b.shape())).collect();
        assert_eq!(shapes, vec![((20, 4), (20, 4)), ((20, 6), (20, 6)), ((20, 3), (20, 3))]);
        let (pre, post) = &layers[1];
        assert_eq!(pre.map(|v| v.max(0.0)).unwrap(), *post);
    }

    #[test]
    fn batch_split_shares_data() {
        let a = net(vec![5, 5], 8, 4).forward().unwrap();
        let b = net(vec![5, 5], 32, 1).forward().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capture_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_capture(&net(vec![8; 3], 16, 2), dir.path()).unwrap();
        assert_eq!(m.sites.len(), 3);
        assert!(m.sites.iter().all(|s| s.batches() == 2 && s.channels == 8));
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert!(validate(dir.path(), &m).is_empty());

        let single = tempfile::tempdir().unwrap();
        assert_eq!(generate_capture(&net(vec![4], 4, 1), single.path()).unwrap().sites.len(), 1);
    }

    #[test]
    fn capture_is_byte_identical() {
        let spec = net(vec![6, 6], 8, 2);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_capture(&spec, a.path()).unwrap();
        generate_capture(&spec, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 2 * 2 * 2 + 1);
        for name in names {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn rejects_bad_net() {
        assert!(net(vec![], 4, 1).forward().is_err());
        assert!(net(vec![1], 4, 1).forward().is_err());
        assert!(net(vec![4], 1, 1).forward().is_err());
    }
}
