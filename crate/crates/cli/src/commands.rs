use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nonlin_core::analysis::{accuracy_correlation, cluster, metric_correlation_report, pairwise_dtw_sequences};
use nonlin_core::synth::NoiseMode;
use nonlin_core::table;
use nonlin_core::{
    affinity_score, compute_signature, generate_capture, read_array, run_sweep, AffinityOptions, Capture, Error,
    Signature, SignatureMode, SweepGrid, SweepSpec, SynthNetSpec,
};
use serde::Serialize;

use crate::{AffinityArgs, Cli, Command, Format};

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INVALID, message: message.into() }
    }

    /// Wraps a library error, prefixing `context` when given.
    fn wrap(e: Error, context: &str) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID };
        let message = if context.is_empty() { e.to_string() } else { format!("{context}: {e}") };
        CliError { code, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::wrap(e, "")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Score { x, y, affinity } => score(cli, x, y, affinity),
        Command::Sweep { act, means, stds, dim, n, affinity } => {
            let spec = SweepSpec {
                kind: *act,
                means: means.0.clone(),
                stds: stds.clone(),
                dim: *dim,
                n: *n,
                seed: cli.seed,
                noise: NoiseMode::Independent,
                options: options(affinity, cli.seed),
            };
            sweep(cli, &spec)
        }
        Command::Signature { capture, literal_definition, affinity } => {
            let mode = if *literal_definition { SignatureMode::Literal } else { SignatureMode::Measured };
            signature(cli, capture, &options(affinity, cli.seed), mode)
        }
        Command::Compare { capture, affinity } => compare(cli, capture, &options(affinity, cli.seed)),
        Command::Cluster { sigs, linkage } => cluster_cmd(cli, sigs, (*linkage).into()),
        Command::Predict { sigs, acc } => predict(cli, sigs, acc),
        Command::Synth { arch: _, widths, act, batch, batches, weight_scale } => {
            let out = cli.out.as_ref().ok_or_else(|| CliError::invalid("synth needs --out DIR for the capture"))?;
            let spec = SynthNetSpec {
                layer_widths: widths.clone(),
                activation: *act,
                weight_scale: *weight_scale,
                seed: cli.seed,
                batch: *batch,
                batches: *batches,
            };
            let m = generate_capture(&spec, out)?;
            eprintln!("wrote {} sites to {}", m.sites.len(), out.display());
            Ok(())
        }
    }
}

fn options(a: &AffinityArgs, seed: u64) -> AffinityOptions {
    AffinityOptions {
        shrinkage: a.shrinkage.into(),
        reduction: a.reduction.into(),
        clamp: !a.no_clamp,
        max_exact: a.max_exact,
        subsample_seed: a.subsample.then_some(seed),
        ..AffinityOptions::default()
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Prints `text`, or writes it to `--out` when given.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// The `--out` directory, created if needed.
fn out_dir(cli: &Cli) -> Result<Option<&PathBuf>> {
    if let Some(d) = &cli.out {
        fs::create_dir_all(d).map_err(|e| CliError::invalid(format!("{}: {e}", d.display())))?;
    }
    Ok(cli.out.as_ref())
}

fn score(cli: &Cli, x: &Path, y: &Path, a: &AffinityArgs) -> Result<()> {
    let xs = read_array(x)?;
    let ys = read_array(y)?;
    let r = affinity_score(&xs, &ys, &options(a, cli.seed))
        .map_err(|e| CliError::wrap(e, &format!("{} vs {}", x.display(), y.display())))?;
    let text = match cli.format {
        Format::Json => json(&r),
        Format::Csv => table::to_csv(
            &["score", "raw_score", "w2_numerator", "denominator", "shrinkage_used", "degenerate"],
            [[
                r.score.to_string(),
                r.raw_score.to_string(),
                r.w2_numerator.to_string(),
                r.denominator.to_string(),
                r.shrinkage_used.to_string(),
                r.degenerate.to_string(),
            ]],
        ),
    };
    emit(cli, &text)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Serialize)]
struct SweepSummary {
    mean: f64,
    median: f64,
    q25: f64,
    q75: f64,
    min: f64,
    max: f64,
    baseline: f64,
}

fn summarize(g: &SweepGrid) -> Vec<SweepSummary> {
    (0..g.means.len())
        .map(|i| {
            let mut col = g.column(i);
            col.sort_by(f64::total_cmp);
            SweepSummary {
                mean: g.means[i],
                median: quantile(&col, 0.5),
                q25: quantile(&col, 0.25),
                q75: quantile(&col, 0.75),
                min: col[0],
                max: col[col.len() - 1],
                baseline: g.baseline.score,
            }
        })
        .collect()
}

fn grid_csv(g: &SweepGrid) -> String {
    let rows = g.means.iter().enumerate().flat_map(|(i, m)| {
        g.stds.iter().enumerate().map(move |(j, s)| {
            let c = &g.cells[i][j];
            [m.to_string(), s.to_string(), c.score.to_string(), c.degenerate.to_string()]
        })
    });
    table::to_csv(&["mean", "std", "score", "degenerate"], rows)
}

fn summary_csv(s: &[SweepSummary]) -> String {
    table::to_csv(
        &["mean", "median", "q25", "q75", "min", "max", "baseline"],
        s.iter().map(|r| [r.mean, r.median, r.q25, r.q75, r.min, r.max, r.baseline].map(|v| v.to_string())),
    )
}

fn sweep(cli: &Cli, spec: &SweepSpec) -> Result<()> {
    let grid = run_sweep(spec).map_err(|e| CliError::wrap(e, &format!("sweep of {}", spec.kind)))?;
    let summary = summarize(&grid);
    let doc = || json(&serde_json::json!({ "grid": grid, "summary": summary }));
    match (out_dir(cli)?, cli.format) {
        (Some(d), Format::Csv) => {
            write_file(&d.join("grid.csv"), &grid_csv(&grid))?;
            write_file(&d.join("summary.csv"), &summary_csv(&summary))
        }
        (Some(d), Format::Json) => write_file(&d.join("sweep.json"), &doc()),
        (None, Format::Csv) => {
            print!("{}", summary_csv(&summary));
            Ok(())
        }
        (None, Format::Json) => {
            print!("{}", doc());
            Ok(())
        }
    }
}

fn open_capture(dir: &Path) -> Result<Capture> {
    Capture::open(dir).map_err(|e| CliError::wrap(e, &format!("capture {}", dir.display())))
}

fn signature(cli: &Cli, dir: &Path, opts: &AffinityOptions, mode: SignatureMode) -> Result<()> {
    let cap = open_capture(dir)?;
    let sig =
        compute_signature(&cap, opts, mode).map_err(|e| CliError::wrap(e, &format!("capture {}", dir.display())))?;
    for s in &sig.sites {
        if let Some(err) = &s.error {
            eprintln!("warning: site {}: {err}", s.site_id);
        }
    }
    match out_dir(cli)? {
        Some(d) => {
            write_file(&d.join("signature.json"), &sig.to_json())?;
            write_file(&d.join("signature.csv"), &sig.to_csv())
        }
        None => {
            match cli.format {
                Format::Csv => print!("{}", sig.to_csv()),
                Format::Json => print!("{}", sig.to_json()),
            }
            Ok(())
        }
    }
}

fn compare(cli: &Cli, dir: &Path, opts: &AffinityOptions) -> Result<()> {
    let cap = open_capture(dir)?;
    let report =
        metric_correlation_report(&cap, opts).map_err(|e| CliError::wrap(e, &format!("capture {}", dir.display())))?;
    let text = match cli.format {
        Format::Csv => report.to_csv(),
        Format::Json => json(&report),
    };
    emit(cli, &text)
}

/// Signature documents of a directory, labelled by file stem, in name order.
fn load_signatures(dir: &Path) -> Result<Vec<(String, Signature)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::invalid(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::invalid(format!("{}: no signature files (*.json)", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((label, Signature::read(p)?))
        })
        .collect()
}

fn cluster_cmd(cli: &Cli, dir: &Path, linkage: nonlin_core::Linkage) -> Result<()> {
    let sigs = load_signatures(dir)?;
    let labels: Vec<String> = sigs.iter().map(|(l, _)| l.clone()).collect();
    let seqs: Vec<Vec<f64>> = sigs.iter().map(|(_, s)| s.scores()).collect();
    for (l, s) in labels.iter().zip(&seqs) {
        if s.is_empty() {
            return Err(CliError::invalid(format!("signature {l} has no scored sites")));
        }
    }
    let d = pairwise_dtw_sequences(labels, &seqs)?;
    let tree = cluster(&d, linkage);
    let doc = || json(&serde_json::json!({ "linkage": tree.linkage, "tree": tree.to_tree(), "merges": tree.merges }));
    match out_dir(cli)? {
        Some(out) => {
            write_file(&out.join("distances.csv"), &d.to_csv())?;
            write_file(&out.join("dendrogram.json"), &doc())?;
            write_file(&out.join("dendrogram.nwk"), &tree.to_newick())
        }
        None => {
            match cli.format {
                Format::Csv => print!("{}", d.to_csv()),
                Format::Json => {
                    print!("{}", json(&serde_json::json!({ "distances": d, "dendrogram": tree.to_tree() })))
                }
            }
            Ok(())
        }
    }
}

fn read_accuracy(path: &Path) -> Result<BTreeMap<String, f64>> {
    let bad = |msg: String| CliError::invalid(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(li), Some(ai)) = (col("label"), col("acc@1")) else {
        return Err(bad("expected columns `label` and `acc@1`".into()));
    };
    let mut out = BTreeMap::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let label = rec.get(li).unwrap_or_default().trim().to_string();
        let v: f64 = rec
            .get(ai)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: invalid accuracy", k + 1)))?;
        if !v.is_finite() {
            return Err(bad(format!("row {}: non-finite accuracy", k + 1)));
        }
        out.insert(label, v);
    }
    Ok(out)
}

fn predict(cli: &Cli, dir: &Path, acc: &Path) -> Result<()> {
    let sigs = load_signatures(dir)?;
    let table = read_accuracy(acc)?;
    let report = accuracy_correlation(&sigs, &table).map_err(|e| match e {
        Error::MissingLabel(_) => CliError::wrap(e, &acc.display().to_string()),
        e => CliError::wrap(e, ""),
    })?;
    let text = match cli.format {
        Format::Csv => report.to_csv(),
        Format::Json => json(&report),
    };
    emit(cli, &text)
}
