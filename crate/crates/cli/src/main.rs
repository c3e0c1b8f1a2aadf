//! `stv`: spectral TV decomposition, band-ensemble training and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, CliResult};
use stv_core::{Boundary, Label3, Mode};

#[derive(Debug, Parser)]
#[command(name = "stv", version, about = "Spectral total-variation decomposition and band-ensemble classification")]
struct Cli {
    /// Worker threads (0 = one per core). Never changes any output.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Flat key = value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Command-line counterparts of the configuration keys.
#[derive(Debug, Args)]
struct Overrides {
    /// Flow time step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Number of spectral components.
    #[arg(long, global = true)]
    n_components: Option<usize>,
    /// Relative duality-gap tolerance of each proximal solve.
    #[arg(long, global = true)]
    inner_tol: Option<f64>,
    /// Iteration cap of each proximal solve.
    #[arg(long, global = true)]
    inner_max_iter: Option<usize>,
    /// periodic or neumann.
    #[arg(long, global = true, value_parser = parse_boundary)]
    boundary: Option<Boundary>,
    /// Adjacent scales per band learner.
    #[arg(long, global = true)]
    scales_per_band: Option<usize>,
    /// Stride-1 overlapping bands.
    #[arg(long, global = true)]
    overlapping: Option<bool>,
    /// tree or forest.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Trees per band in forest mode.
    #[arg(long, global = true)]
    forest_size: Option<usize>,
    /// Vertebra-score cutoff for the metrics.
    #[arg(long, global = true)]
    cutoff: Option<f64>,
    /// Signature enhancement exponent.
    #[arg(long, global = true)]
    p_enh: Option<f64>,
    /// Seed for folds, forests and phantoms.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cross-validation folds.
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Duplicate PATH_LU patches in training folds.
    #[arg(long, global = true)]
    duplicate_lu: Option<bool>,
    /// Manifest CSV.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// STVM model file.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_boundary(s: &str) -> Result<Boundary, String> {
    s.parse().map_err(|e: stv_core::StvError| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: stv_core::StvError| e.to_string())
}

fn parse_label(s: &str) -> Result<Label3, String> {
    s.parse().map_err(|e: stv_core::StvError| e.to_string())
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs: [(&str, Option<String>); 17] = [
            ("dt", self.dt.map(|v| v.to_string())),
            ("n_components", self.n_components.map(|v| v.to_string())),
            ("inner_tol", self.inner_tol.map(|v| v.to_string())),
            ("inner_max_iter", self.inner_max_iter.map(|v| v.to_string())),
            ("boundary", self.boundary.map(|v| v.as_str().to_string())),
            ("scales_per_band", self.scales_per_band.map(|v| v.to_string())),
            ("overlapping", self.overlapping.map(|v| v.to_string())),
            ("mode", self.mode.map(|v| v.to_string())),
            ("forest_size", self.forest_size.map(|v| v.to_string())),
            ("cutoff", self.cutoff.map(|v| v.to_string())),
            ("p_enh", self.p_enh.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("folds", self.folds.map(|v| v.to_string())),
            ("duplicate_lu", self.duplicate_lu.map(|v| v.to_string())),
            ("manifest", path(&self.manifest)),
            ("model", path(&self.model)),
            ("out", path(&self.out)),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhantomKindArg {
    Disk,
    TwoDisks,
    Step1d,
    Texture,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose a raster into spectral components and a residual.
    Decompose {
        /// Raster container (STV1, kind 0).
        input: PathBuf,
    },
    /// Spectrum S_k of a raster or a stack.
    Spectrum { input: PathBuf },
    /// Keep components k_min..=k_max (1-based) and optionally the residual.
    Filter {
        input: PathBuf,
        #[arg(long)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
        #[arg(long)]
        keep_residual: bool,
    },
    /// Render a phantom raster or write a synthetic cohort.
    Phantom {
        #[arg(long, value_enum, default_value_t = PhantomKindArg::Disk)]
        kind: PhantomKindArg,
        /// Grid size of disk phantoms.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 8.0)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        contrast: f64,
        /// Texture class.
        #[arg(long, value_parser = parse_label, default_value = "PATH_HU")]
        label: Label3,
        /// Length of a 1D step signal.
        #[arg(long, default_value_t = 128)]
        length: usize,
        /// Segments of a 1D step signal.
        #[arg(long, default_value_t = 5)]
        segments: usize,
        /// Write a cohort of N normal and P pathological patients instead.
        #[arg(long, num_args = 2, value_names = ["N", "P"])]
        cohort: Option<Vec<usize>>,
    },
    /// Fit a band ensemble on every patient of the manifest.
    Train,
    /// Cross-validate (or score with --model) on the manifest.
    Eval,
    /// Cross-validation per scales-per-band / band layout / mode combination.
    Ablate {
        /// Scales-per-band values.
        #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5, 6, 8, 10, 12, 15])]
        scales: Vec<usize>,
        /// Band layouts: false = disjoint, true = overlapping.
        #[arg(long, value_delimiter = ',', default_values_t = [false])]
        layouts: Vec<bool>,
        /// Learner modes.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "tree")]
        modes: Vec<Mode>,
    },
    /// AUC drop when each band learner is left out.
    BandImportance,
    /// Cross-validation on signatures truncated to each component count.
    SweepComponents {
        /// Component counts.
        #[arg(long, value_delimiter = ',', default_values_t = stv_core::eval::default_sweep_counts())]
        counts: Vec<usize>,
    },
    /// Mean masked spectrum per class.
    SpectrumByClass,
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Decompose { input } => commands::decompose(&cfg, input),
        Command::Spectrum { input } => commands::spectrum(&cfg, input),
        Command::Filter {
            input,
            k_min,
            k_max,
            keep_residual,
        } => commands::filter(&cfg, input, *k_min, *k_max, *keep_residual),
        Command::Phantom {
            kind,
            size,
            radius,
            contrast,
            label,
            length,
            segments,
            cohort,
        } => match cohort {
            Some(counts) => commands::cohort(&cfg, counts[0], counts[1]),
            None => commands::phantom(
                &cfg,
                &commands::PhantomArgs {
                    kind: *kind,
                    size: *size,
                    radius: *radius,
                    contrast: *contrast,
                    label: *label,
                    length: *length,
                    segments: *segments,
                },
            ),
        },
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate { scales, layouts, modes } => commands::ablate(&cfg, scales, layouts, modes),
        Command::BandImportance => commands::band_importance(&cfg),
        Command::SweepComponents { counts } => commands::sweep(&cfg, counts),
        Command::SpectrumByClass => commands::spectrum_by_class(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(CliError::Usage(format!("cannot start {} worker threads: {e}", cli.threads))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
