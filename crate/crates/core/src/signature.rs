//! Non-linearity signatures: per-site affinity scores over a capture, in
//! forward order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::affinity::{affinity_score, AffinityOptions, AffinityResult};
use crate::error::{Error, Result};
use crate::par;
use crate::table::{self, opt};
use crate::tensor_io::Capture;

pub const SIGNATURE_FORMAT_VERSION: u32 = 1;
pub const UNKNOWN_ACTIVATION: &str = "unknown";

/// What is scored at each site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureMode {
    /// Reduced recorded input against reduced recorded output.
    #[default]
    Measured,
    /// Reduced input against the site's activation applied to it.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteScore {
    pub site_id: String,
    pub order_index: usize,
    /// Canonical activation name, or `"unknown"`.
    pub activation: String,
    pub group_tag: String,
    /// Mean over batches; absent when scoring failed.
    pub mean_score: Option<f64>,
    /// Population standard deviation over batches.
    pub std_score: Option<f64>,
    pub per_batch: Vec<f64>,
    /// Scoring failed, or some batch had a constant output.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub format_version: u32,
    pub model_name: String,
    pub dataset_tag: String,
    pub mode: SignatureMode,
    pub sites: Vec<SiteScore>,
    pub options: AffinityOptions,
}

impl Signature {
    /// Mean scores of the sites that have one, in order.
    pub fn scores(&self) -> Vec<f64> {
        self.sites.iter().filter_map(|s| s.mean_score).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("signature serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let sig: Signature = serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        if sig.format_version != SIGNATURE_FORMAT_VERSION {
            return Err(Error::format(origin, format!("unsupported format_version {}", sig.format_version)));
        }
        Ok(sig)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// `order_index,site_id,group_tag,mean,std`; absent values are empty.
    pub fn to_csv(&self) -> String {
        table::to_csv(
            &["order_index", "site_id", "group_tag", "mean", "std"],
            self.sites.iter().map(|s| {
                [s.order_index.to_string(), s.site_id.clone(), s.group_tag.clone(), opt(s.mean_score), opt(s.std_score)]
            }),
        )
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn score_batch(
    capture: &Capture,
    site: usize,
    batch: usize,
    opts: &AffinityOptions,
    mode: SignatureMode,
) -> Result<Result<AffinityResult>> {
    let (input, output) = capture.load_pair(site, batch, opts.reduction)?;
    Ok(match mode {
        SignatureMode::Measured => affinity_score(&input, &output, opts),
        SignatureMode::Literal => capture.manifest.sites[site]
            .activation_name
            .parse::<ActivationKind>()
            .and_then(|k| k.apply(&input))
            .and_then(|y| affinity_score(&input, &y, opts)),
    })
}

/// Scores every site and batch. Load failures abort; scoring failures are
/// recorded on the site.
pub fn compute_signature(capture: &Capture, opts: &AffinityOptions, mode: SignatureMode) -> Result<Signature> {
    let sites = &capture.manifest.sites;
    let jobs: Vec<(usize, usize)> =
        sites.iter().enumerate().flat_map(|(i, s)| (0..s.batches()).map(move |b| (i, b))).collect();
    let results = par::map_range(jobs.len(), |k| score_batch(capture, jobs[k].0, jobs[k].1, opts, mode));
    let mut results = results.into_iter();

    let mut out = Vec::with_capacity(sites.len());
    for (i, site) in sites.iter().enumerate() {
        let batch: Vec<Result<AffinityResult>> = results.by_ref().take(site.batches()).collect::<Result<_>>()?;
        let activation = site
            .activation_name
            .parse::<ActivationKind>()
            .map(|k| k.to_string())
            .unwrap_or_else(|_| UNKNOWN_ACTIVATION.to_string());
        let mut score = SiteScore {
            site_id: site.site_id.clone(),
            order_index: i,
            activation,
            group_tag: site.group_tag.clone(),
            mean_score: None,
            std_score: None,
            per_batch: vec![],
            degenerate: true,
            error: None,
        };
        match batch.into_iter().collect::<Result<Vec<_>>>() {
            Ok(rs) => {
                score.per_batch = rs.iter().map(|r| r.score).collect();
                let (m, s) = mean_std(&score.per_batch);
                score.mean_score = Some(m);
                score.std_score = Some(s);
                score.degenerate = rs.iter().any(|r| r.degenerate);
            }
            Err(e) => score.error = Some(e.to_string()),
        }
        out.push(score);
    }
    Ok(Signature {
        format_version: SIGNATURE_FORMAT_VERSION,
        model_name: capture.manifest.model_name.clone(),
        dataset_tag: capture.manifest.dataset_tag.clone(),
        mode,
        sites: out,
        options: opts.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub max_over_mean: f64,
}

impl SignatureStats {
    pub const NAMES: [&'static str; 5] = ["mean", "std", "min", "max", "max_over_mean"];

    pub fn values(&self) -> [f64; 5] {
        [self.mean, self.std, self.min, self.max, self.max_over_mean]
    }
}

/// Statistics over the sites' mean scores (absent scores skipped).
pub fn aggregate_stats(sig: &Signature) -> Result<SignatureStats> {
    let v = sig.scores();
    if v.is_empty() {
        return Err(Error::DegenerateData(format!("signature `{}` has no scored sites", sig.model_name)));
    }
    let (mean, std) = mean_std(&v);
    if mean <= 0.0 {
        return Err(Error::DegenerateData(format!("signature `{}` has zero mean score", sig.model_name)));
    }
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SignatureStats { mean, std, min, max, max_over_mean: max / mean })
}
