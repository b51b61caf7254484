//! `nonlin`: affinity scores, activation sweeps and non-linearity signatures
//! from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nonlin_core::analysis::Linkage;
use nonlin_core::{ActivationKind, Reduction, Shrinkage};

#[derive(Parser, Debug)]
#[command(name = "nonlin", version, about = "Measure the non-linearity of transformations with optimal transport")]
pub struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file, or directory for commands with several artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Affinity score of a pair of sample arrays.
    Score {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[command(flatten)]
        affinity: AffinityArgs,
    },
    /// Affinity scores of an activation over a grid of Gaussian inputs.
    Sweep {
        #[arg(long, value_parser = parse_activation)]
        act: ActivationKind,
        /// Means as `start:end:count`.
        #[arg(long, default_value = "-20:20:20", value_parser = parse_means, allow_hyphen_values = true)]
        means: MeanRange,
        /// Comma-separated standard deviations.
        #[arg(long, default_value = "2,1,0.5,0.25,0.1,0.01", value_delimiter = ',')]
        stds: Vec<f64>,
        #[arg(long, default_value_t = 300)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[command(flatten)]
        affinity: AffinityArgs,
    },
    /// Non-linearity signature of a capture directory.
    Signature {
        #[arg(long)]
        capture: PathBuf,
        /// Score the site's activation applied to the reduced input instead
        /// of the recorded output.
        #[arg(long)]
        literal_definition: bool,
        #[command(flatten)]
        affinity: AffinityArgs,
    },
    /// Correlation of the affinity score with other layer metrics.
    Compare {
        #[arg(long)]
        capture: PathBuf,
        #[command(flatten)]
        affinity: AffinityArgs,
    },
    /// DTW distances and hierarchical clustering of signatures.
    Cluster {
        /// Directory of signature documents (`*.json`), labelled by file stem.
        #[arg(long)]
        sigs: PathBuf,
        #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
        linkage: LinkageArg,
    },
    /// Correlation of signature statistics with model accuracy.
    Predict {
        #[arg(long)]
        sigs: PathBuf,
        /// CSV with header `label,acc@1`.
        #[arg(long)]
        acc: PathBuf,
    },
    /// Write the capture of a random feedforward network to `--out`.
    Synth {
        #[arg(long, value_enum, default_value_t = Arch::Mlp)]
        arch: Arch,
        /// Comma-separated layer widths; the input width equals the first.
        #[arg(long, required = true, value_delimiter = ',')]
        widths: Vec<usize>,
        #[arg(long, value_parser = parse_activation)]
        act: ActivationKind,
        #[arg(long, default_value_t = 512)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[arg(long, default_value_t = 1.0)]
        weight_scale: f64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct AffinityArgs {
    #[arg(long, value_enum, default_value_t = ShrinkageArg::Auto)]
    pub shrinkage: ShrinkageArg,
    #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
    pub reduction: ReductionArg,
    /// Report the raw ratio without clamping to [0, 1].
    #[arg(long)]
    pub no_clamp: bool,
    /// Largest sample for exact transport.
    #[arg(long, default_value_t = nonlin_core::transport::DEFAULT_MAX_EXACT)]
    pub max_exact: usize,
    /// Subsample larger samples (seeded by `--seed`) instead of failing.
    #[arg(long)]
    pub subsample: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum ShrinkageArg {
    Auto,
    On,
    Off,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum ReductionArg {
    Mean,
    Sum,
    Flatten,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum LinkageArg {
    Single,
    Average,
    Complete,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Arch {
    Mlp,
}

impl From<ShrinkageArg> for Shrinkage {
    fn from(s: ShrinkageArg) -> Self {
        match s {
            ShrinkageArg::Auto => Shrinkage::Auto,
            ShrinkageArg::On => Shrinkage::On,
            ShrinkageArg::Off => Shrinkage::Off,
        }
    }
}

impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Mean => Reduction::Mean,
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Flatten => Reduction::Flatten,
        }
    }
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Complete => Linkage::Complete,
        }
    }
}

fn parse_activation(s: &str) -> Result<ActivationKind, String> {
    s.parse().map_err(|e: nonlin_core::Error| e.to_string())
}

/// Evenly spaced means, parsed from `start:end:count`.
#[derive(Clone, Debug)]
pub struct MeanRange(pub Vec<f64>);

fn parse_means(s: &str) -> Result<MeanRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, k] = parts[..] else {
        return Err(format!("expected start:end:count, got `{s}`"));
    };
    let bad = || format!("expected start:end:count, got `{s}`");
    let (a, b, k) = (
        a.parse::<f64>().map_err(|_| bad())?,
        b.parse::<f64>().map_err(|_| bad())?,
        k.parse::<usize>().map_err(|_| bad())?,
    );
    if k == 0 {
        return Err("mean count must be positive".into());
    }
    Ok(MeanRange(nonlin_core::synth::linspace(a, b, k)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| commands::run(&cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(commands::EXIT_NUMERICAL)
        }
    }
}
