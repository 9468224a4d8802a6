mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{ExperimentOverrides, Globals};
use config::ExperimentBlock;
use error::{CliError, CliResult};
use mfpca_core::experiment::ImagePathway;
use mfpca_core::simgen::{Decay, Sparsity};

#[derive(Parser, Debug)]
#[command(name = "mfpca", version, about = "Multivariate functional PCA on mixed-dimension domains")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, env = "MFPCA_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true, env = "MFPCA_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MFPCA_JOBS")]
    jobs: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true, env = "MFPCA_OUT")]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true, env = "MFPCA_FORCE")]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from the `simulation` block.
    Simulate,
    /// Fit univariate bases and MFPCA.
    Fit,
    /// Fit, then bootstrap pointwise bands for the eigenfunctions.
    Bootstrap,
    /// Run a replicated simulation study.
    Experiment {
        /// Preset; without it the config's `experiment` block is used.
        preset: Option<Preset>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long = "N", alias = "n")]
        n: Option<usize>,
        #[arg(long)]
        sigma2: Option<f64>,
    },
    /// Tabulate experiment summaries found below a results directory.
    Report { results: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Setting1,
    Setting2Medium,
    Setting2High,
    Setting3Spline,
    Setting3Tpa,
    Sensitivity,
}

impl Preset {
    fn block(self) -> ExperimentBlock {
        let setting2 = |sparsity| ExperimentBlock::Setting2 { n: 250, decay: Decay::TableExp, sigma2: 0.0, sparsity, replicates: 100 };
        let setting3 = |pathway| ExperimentBlock::Setting3 { n: 250, image: (100, 50), curve: 200, sigma2: 0.0, pathway, replicates: 100 };
        match self {
            Preset::Setting1 => ExperimentBlock::Setting1 { n: 250, decay: Decay::TableExp, sigma2: 0.0, replicates: 100 },
            Preset::Setting2Medium => setting2(Sparsity::Medium),
            Preset::Setting2High => setting2(Sparsity::High),
            Preset::Setting3Spline => setting3(ImagePathway::Spline),
            Preset::Setting3Tpa => setting3(ImagePathway::Tpa),
            Preset::Sensitivity => ExperimentBlock::Sensitivity { n: 250, replicates: 100 },
        }
    }
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Schema(format!("--jobs: {e}")))?;
    }
    let g = Globals { config: cli.config, seed: cli.seed, out: cli.out, force: cli.force };
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&g),
        Command::Fit => commands::fit_cmd(&g),
        Command::Bootstrap => commands::bootstrap_cmd(&g),
        Command::Experiment { preset, reps, n, sigma2 } => {
            commands::experiment_cmd(&g, preset.map(Preset::block), &ExperimentOverrides { replicates: reps, n, sigma2 })
        }
        Command::Report { results } => commands::report_cmd(&g, &results),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mfpca: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
