//! Command-line entry point wiring scene generation, decomposition,
//! detection and evaluation into reproducible runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ParamOverrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "turbo-godec",
    version,
    about = "Low-rank + cluster-sparse decomposition for hyperspectral anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Parameters shared by the compute subcommands. Every flag mirrors a
/// config-file key of the same name; flags win over the file.
#[derive(Args, Debug, Clone, Default)]
struct ParamFlags {
    /// key=value config file (UTF-8, `#` comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Detection/decomposition method: grx, lsmad or turbo
    #[arg(long)]
    method: Option<String>,
    /// Rank bound for the low-rank component (default: estimated)
    #[arg(long)]
    rank: Option<usize>,
    /// Cardinality bound: anomalous pixel budget (default: estimated)
    #[arg(long)]
    card: Option<usize>,
    /// Convergence threshold on the relative residual
    #[arg(long)]
    eps: Option<f64>,
    /// Outer iteration budget
    #[arg(long = "outer-iters")]
    outer_iters: Option<usize>,
    /// Message-passing sweeps per S-step
    #[arg(long = "inner-iters")]
    inner_iters: Option<usize>,
    /// Pairwise potential for a (0,0) support pair
    #[arg(long)]
    psi00: Option<f64>,
    /// Pairwise potential for a (0,1) support pair
    #[arg(long)]
    psi01: Option<f64>,
    /// Pairwise potential for a (1,0) support pair
    #[arg(long)]
    psi10: Option<f64>,
    /// Pairwise potential for a (1,1) support pair
    #[arg(long)]
    psi11: Option<f64>,
    /// Spike (noise) variance; give together with --sigma2-sq to disable
    /// automatic estimation
    #[arg(long = "sigma1-sq")]
    sigma1_sq: Option<f64>,
    /// Slab (anomaly) variance; give together with --sigma1-sq
    #[arg(long = "sigma2-sq")]
    sigma2_sq: Option<f64>,
    /// Message damping coefficient in (0,1]
    #[arg(long)]
    damping: Option<f64>,
    /// Fusion weight of the RX map against the probability map
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of ROC thresholds over [0,1]
    #[arg(long)]
    thresholds: Option<usize>,
    /// Seed for randomized paths and scene generation
    #[arg(long)]
    seed: Option<u64>,
    /// Entry-wise hard threshold in the baseline S-step (bounds entries
    /// instead of pixel rows)
    #[arg(long)]
    entrywise: bool,
    /// Numerator exponent of the convergence ratio: 1 or 2
    #[arg(long = "residual-exponent")]
    residual_exponent: Option<u8>,
}

impl ParamFlags {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let overrides = ParamOverrides {
            method: self.method.clone(),
            rank: self.rank,
            card: self.card,
            eps: self.eps,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            psi00: self.psi00,
            psi01: self.psi01,
            psi10: self.psi10,
            psi11: self.psi11,
            sigma1_sq: self.sigma1_sq,
            sigma2_sq: self.sigma2_sq,
            damping: self.damping,
            alpha: self.alpha,
            thresholds: self.thresholds,
            seed: self.seed,
            entrywise: self.entrywise,
            residual_exponent: self.residual_exponent,
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (cube.hsic + mask.csv) from a scene
    /// config file
    Synth {
        /// Scene description (key=value file)
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Overrides the seed given in the scene config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert headerless raw little-endian f64 values into a cube file
    ImportRaw {
        /// Raw input file (band-sequential f64 values)
        #[arg(long)]
        input: PathBuf,
        /// Dimensions as H,W,C
        #[arg(long)]
        dims: String,
        /// Output cube path
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose a cube into low-rank + sparse (+ probability) components
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
    /// Produce a detection score map for a cube
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
    /// Evaluate a detection map against a ground-truth mask
    Eval {
        /// Detection map (CSV)
        #[arg(long)]
        input: PathBuf,
        /// Ground-truth mask (CSV of 0/1)
        #[arg(long)]
        mask: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
    /// Run all methods on one scene and tabulate their AUC reports
    Compare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, out_dir, seed } => commands::cmd_synth(&config, &out_dir, seed),
        Command::ImportRaw { input, dims, out } => commands::cmd_import_raw(&input, &dims, &out),
        Command::Decompose { input, out_dir, params } => {
            commands::cmd_decompose(&input, &out_dir, &params.resolve()?)
        }
        Command::Detect { input, out_dir, params } => {
            commands::cmd_detect(&input, &out_dir, &params.resolve()?)
        }
        Command::Eval { input, mask, out_dir, params } => {
            commands::cmd_eval(&input, &mask, &out_dir, &params.resolve()?)
        }
        Command::Compare { input, mask, out_dir, params } => {
            commands::cmd_compare(&input, &mask, &out_dir, &params.resolve()?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Single-line, machine-parsable failure report.
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
