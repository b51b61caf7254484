//! Signature-level analysis: DTW distances, hierarchical clustering and
//! correlation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::affinity::{affinity_score, AffinityOptions};
use crate::error::{Error, Result};
use crate::par;
use crate::signature::{aggregate_stats, Signature, SignatureStats};
use crate::stats::{
    entropy, frob_diff, linear_cka, pearson, r2_linear, sparsity, DEFAULT_ENTROPY_BINS, DEFAULT_SPARSITY_TOL,
};
use crate::table::{self, opt};
use crate::tensor_io::Capture;

/// Unconstrained dynamic time warping with `|aᵢ − bⱼ|` local cost.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            cur[j] = (x - b[j - 1]).abs() + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// Checks squareness, symmetry, non-negativity and the zero diagonal.
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!("{n} labels but a non-{n}×{n} matrix")));
        }
        for i in 0..n {
            if values[i][i] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at `{}`", labels[i])));
            }
            for j in 0..n {
                let v = values[i][j];
                if !v.is_finite() || v < 0.0 || v != values[j][i] {
                    return Err(Error::InvalidInput(format!(
                        "distance between `{}` and `{}` is not a finite symmetric non-negative value",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(DistanceMatrix { labels, values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Header `label,<labels…>`, then one row per label.
    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = std::iter::once("label").chain(self.labels.iter().map(String::as_str)).collect();
        table::to_csv(
            &header,
            self.labels
                .iter()
                .zip(&self.values)
                .map(|(l, row)| std::iter::once(l.clone()).chain(row.iter().map(f64::to_string)).collect::<Vec<_>>()),
        )
    }
}

/// DTW between every pair of sequences, computed in parallel.
pub fn pairwise_dtw_sequences(labels: Vec<String>, seqs: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = seqs.len();
    if n < 2 || labels.len() != n {
        return Err(Error::InvalidInput("need at least two labelled sequences".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let d = par::map_range(pairs.len(), |k| dtw(&seqs[pairs[k].0], &seqs[pairs[k].1]));
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(d) {
        let v = v?;
        values[i][j] = v;
        values[j][i] = v;
    }
    DistanceMatrix::new(labels, values)
}

/// DTW over the mean-score sequences, labelled by model name.
pub fn pairwise_dtw(sigs: &[Signature]) -> Result<DistanceMatrix> {
    let labels = sigs.iter().map(|s| s.model_name.clone()).collect();
    let seqs: Vec<Vec<f64>> = sigs.iter().map(Signature::scores).collect();
    pairwise_dtw_sequences(labels, &seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    #[default]
    Average,
    Complete,
}

/// One agglomeration step. Leaves are clusters `0..n`; the cluster formed
/// by merge `k` is `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
}

/// Agglomerative clustering. Among equally close pairs the one whose
/// smallest labels sort first is merged.
pub fn cluster(d: &DistanceMatrix, linkage: Linkage) -> Dendrogram {
    let n = d.len();
    // active clusters: (id, size, smallest leaf label)
    let mut active: Vec<(usize, usize, &str)> = (0..n).map(|i| (i, 1, d.labels[i].as_str())).collect();
    let mut dist = d.values.clone();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(f64, &str, &str, usize, usize)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ka, kb) = ordered(active[a].2, active[b].2);
                let cand = (dist[a][b], ka, kb, a, b);
                let better = match &best {
                    None => true,
                    Some(cur) => (cand.0, cand.1, cand.2) < (cur.0, cur.1, cur.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, _, _, a, b) = best.expect("two clusters remain");
        let (ia, sa, la) = active[a];
        let (ib, sb, lb) = active[b];
        let (left, right) = if la <= lb { (ia, ib) } else { (ib, ia) };
        merges.push(Merge { left, right, height: h, size: sa + sb });

        let merged: Vec<f64> = (0..active.len())
            .map(|k| match linkage {
                Linkage::Single => dist[a][k].min(dist[b][k]),
                Linkage::Complete => dist[a][k].max(dist[b][k]),
                Linkage::Average => (sa as f64 * dist[a][k] + sb as f64 * dist[b][k]) / (sa + sb) as f64,
            })
            .collect();
        for k in 0..active.len() {
            dist[a][k] = merged[k];
            dist[k][a] = merged[k];
        }
        dist[a][a] = 0.0;
        active[a] = (n + merges.len() - 1, sa + sb, la.min(lb));
        active.remove(b);
        dist.remove(b);
        for row in &mut dist {
            row.remove(b);
        }
    }
    Dendrogram { labels: d.labels.clone(), linkage, merges }
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Dendrogram {
    fn height_of(&self, id: usize) -> f64 {
        if id < self.labels.len() {
            0.0
        } else {
            self.merges[id - self.labels.len()].height
        }
    }

    fn root(&self) -> usize {
        self.labels.len() + self.merges.len() - 1
    }

    /// Newick text with branch lengths as height differences.
    pub fn to_newick(&self) -> String {
        if self.labels.is_empty() {
            return ";".into();
        }
        let mut out = String::new();
        self.newick_node(self.root(), &mut out);
        out.push_str(";\n");
        out
    }

    fn newick_node(&self, id: usize, out: &mut String) {
        let n = self.labels.len();
        if id < n {
            out.push_str(&newick_label(&self.labels[id]));
            return;
        }
        let m = self.merges[id - n];
        out.push('(');
        for (i, child) in [m.left, m.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.newick_node(child, out);
            let _ = write!(out, ":{}", m.height - self.height_of(child));
        }
        out.push(')');
    }

    /// Nested tree: leaves `{"label"}`, internal nodes `{"height", "size", "children"}`.
    pub fn to_tree(&self) -> Value {
        if self.labels.is_empty() {
            return Value::Null;
        }
        self.tree_node(self.root())
    }

    fn tree_node(&self, id: usize) -> Value {
        let n = self.labels.len();
        if id < n {
            return json!({ "label": self.labels[id] });
        }
        let m = self.merges[id - n];
        json!({
            "height": m.height,
            "size": m.size,
            "children": [self.tree_node(m.left), self.tree_node(m.right)],
        })
    }

    /// `step,left,right,height,size`, cluster ids as in `Merge`.
    pub fn merges_csv(&self) -> String {
        table::to_csv(
            &["step", "left", "right", "height", "size"],
            self.merges.iter().enumerate().map(|(k, m)| {
                [k.to_string(), m.left.to_string(), m.right.to_string(), m.height.to_string(), m.size.to_string()]
            }),
        )
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t\n".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

/// Per-site values of the affinity score and the comparison metrics,
/// averaged over batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMetrics {
    pub site_id: String,
    pub affinity: f64,
    pub linear_cka: f64,
    pub delta_sparsity: f64,
    pub delta_entropy: f64,
    pub frob_diff: f64,
    pub r2_linear: f64,
}

impl SiteMetrics {
    pub const NAMES: [&'static str; 6] =
        ["affinity", "linear_cka", "delta_sparsity", "delta_entropy", "frob_diff", "r2_linear"];

    pub fn values(&self) -> [f64; 6] {
        [self.affinity, self.linear_cka, self.delta_sparsity, self.delta_entropy, self.frob_diff, self.r2_linear]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    /// Pearson r with the affinity score across sites; absent when either
    /// side is constant.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_name: String,
    pub sites: Vec<SiteMetrics>,
    /// One row per metric, starting with affinity against itself.
    pub correlations: Vec<MetricCorrelation>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        table::to_csv(&["metric", "pearson"], self.correlations.iter().map(|c| [c.metric.clone(), opt(c.pearson)]))
    }
}

fn site_metrics(capture: &Capture, site: usize, opts: &AffinityOptions) -> Result<SiteMetrics> {
    let entry = &capture.manifest.sites[site];
    let mut acc = [0.0; 6];
    for b in 0..entry.batches() {
        let (x, y) = capture.load_pair(site, b, opts.reduction)?;
        let v = [
            affinity_score(&x, &y, opts)?.score,
            linear_cka(&x, &y).unwrap_or(1.0),
            sparsity(&y, DEFAULT_SPARSITY_TOL) - sparsity(&x, DEFAULT_SPARSITY_TOL),
            entropy(&y, DEFAULT_ENTROPY_BINS)? - entropy(&x, DEFAULT_ENTROPY_BINS)?,
            frob_diff(&x, &y)?,
            r2_linear(&x, &y)?,
        ];
        for (a, v) in acc.iter_mut().zip(v) {
            *a += v;
        }
    }
    let k = entry.batches() as f64;
    Ok(SiteMetrics {
        site_id: entry.site_id.clone(),
        affinity: acc[0] / k,
        linear_cka: acc[1] / k,
        delta_sparsity: acc[2] / k,
        delta_entropy: acc[3] / k,
        frob_diff: acc[4] / k,
        r2_linear: acc[5] / k,
    })
}

/// Correlates the affinity score with each comparison metric across sites.
pub fn metric_correlation_report(capture: &Capture, opts: &AffinityOptions) -> Result<MetricReport> {
    let n = capture.manifest.sites.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let sites = par::map_range(n, |i| site_metrics(capture, i, opts)).into_iter().collect::<Result<Vec<_>>>()?;
    let cols: Vec<Vec<f64>> = (0..6).map(|m| sites.iter().map(|s| s.values()[m]).collect()).collect();
    let correlations = SiteMetrics::NAMES
        .iter()
        .zip(&cols)
        .map(|(name, col)| {
            Ok(MetricCorrelation { metric: name.to_string(), pearson: optional(pearson(&cols[0], col))? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { model_name: capture.manifest.model_name.clone(), sites, correlations })
}

/// Maps `DegenerateData` to absent; other errors pass through.
fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub labels: Vec<String>,
    pub stats: Vec<SignatureStats>,
    /// Pearson r with accuracy per statistic, in `SignatureStats::NAMES` order.
    pub correlations: BTreeMap<String, Option<f64>>,
    /// Statistic with the largest `|r|`; first in name order on ties.
    pub best: Option<String>,
}

impl AccuracyReport {
    pub fn to_csv(&self) -> String {
        table::to_csv(
            &["statistic", "pearson", "best"],
            SignatureStats::NAMES.iter().map(|&name| {
                let best = self.best.as_deref() == Some(name);
                [name.to_string(), opt(self.correlations[name]), best.to_string()]
            }),
        )
    }
}

/// Pearson correlation of each signature statistic with accuracy.
pub fn accuracy_correlation(sigs: &[(String, Signature)], acc: &BTreeMap<String, f64>) -> Result<AccuracyReport> {
    if sigs.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: sigs.len() });
    }
    let mut accuracy = Vec::with_capacity(sigs.len());
    let mut stats = Vec::with_capacity(sigs.len());
    for (label, sig) in sigs {
        accuracy.push(*acc.get(label).ok_or_else(|| Error::MissingLabel(label.clone()))?);
        stats.push(aggregate_stats(sig)?);
    }
    let mut correlations = BTreeMap::new();
    let mut best: Option<(&str, f64)> = None;
    for (k, name) in SignatureStats::NAMES.iter().enumerate() {
        let col: Vec<f64> = stats.iter().map(|s| s.values()[k]).collect();
        let r = optional(pearson(&col, &accuracy))?;
        if let Some(r) = r {
            if best.is_none_or(|(_, b)| r.abs() > b) {
                best = Some((name, r.abs()));
            }
        }
        correlations.insert(name.to_string(), r);
    }
    Ok(AccuracyReport {
        labels: sigs.iter().map(|(l, _)| l.clone()).collect(),
        stats,
        correlations,
        best: best.map(|(n, _)| n.to_string()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationMethod {
    Euclidean,
    Dtw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub label: String,
    pub distance: f64,
    pub method: DeviationMethod,
}

/// Distance of each signature to `base`: Euclidean when the score
/// sequences have equal length, DTW otherwise.
pub fn signature_deviation(base: &Signature, others: &[(String, Signature)]) -> Result<Vec<Deviation>> {
    let b = base.scores();
    others
        .iter()
        .map(|(label, sig)| {
            let s = sig.scores();
            let (distance, method) = if s.len() == b.len() && !b.is_empty() {
                let d = s.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                (d, DeviationMethod::Euclidean)
            } else {
                (dtw(&b, &s)?, DeviationMethod::Dtw)
            };
            Ok(Deviation { label: label.clone(), distance, method })
        })
        .collect()
}
