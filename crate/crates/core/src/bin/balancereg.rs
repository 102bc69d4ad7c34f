//! CLI for balance-regularized treatment effect experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use balancereg::data::{export_ihdp_csv, synth_generate, SynthConfig};
use balancereg::harness::{
    export_scatter, run_comparison, run_sweep, DataSource, ExperimentSpec,
};
use balancereg::losses::{Bandwidth, LossWeights, PrgVariant, SoftKsTemperature};
use balancereg::Error;

#[derive(Parser)]
#[command(
    name = "balancereg",
    about = "Individual treatment effect estimation with balance-regularized two-head networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-by-inference-mode comparison table over the 20-run protocol
    Compare(ExperimentArgs),
    /// (gamma, lambda) regularization sweep for the two-head model
    Sweep(SweepArgs),
    /// Residual scatter export for both model kinds
    Scatter(ExperimentArgs),
    /// Generate a synthetic dataset and write it in the IHDP CSV layout
    GenData(GenDataArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IHDP-format CSV: t, y_factual, y_cfactual, mu0, mu1, x1..x25
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic generator config: inline JSON or a path to a JSON file
    #[arg(long)]
    synth: Option<String>,
    /// Skip one header line in --data
    #[arg(long, default_value_t = false)]
    has_header: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Treated-head weight in the fit loss
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Master seed for the split plan and all run seeds
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSVs
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrgVariantArg {
    SoftKs,
    Smd,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated MMD weights
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 1.0, 10.0, 100.0])]
    gamma: Vec<f64>,
    /// Comma-separated prognostic weights
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.1, 1.0, 10.0])]
    lambda: Vec<f64>,
    /// Differentiable prognostic statistic used during training
    #[arg(long, value_enum, default_value_t = PrgVariantArg::SoftKs)]
    prg_variant: PrgVariantArg,
    /// Fixed Gaussian kernel bandwidth; median heuristic when omitted
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Fixed soft-KS temperature; 0.1 x pooled std when omitted
    #[arg(long)]
    softks_temperature: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Generator config: inline JSON or a path to a JSON file
    #[arg(long)]
    config: String,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn parse_synth(text: &str) -> Result<SynthConfig, Error> {
    let json = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        std::fs::read_to_string(text).map_err(|e| Error::io(text.to_string(), e))?
    };
    serde_json::from_str(&json).map_err(|e| Error::Format {
        row: 0,
        msg: format!("bad synth config: {e}"),
    })
}

fn data_source(args: &DataArgs) -> Result<DataSource, Error> {
    match (&args.data, &args.synth) {
        (Some(path), None) => Ok(DataSource::Csv {
            path: path.clone(),
            has_header: args.has_header,
        }),
        (None, Some(json)) => Ok(DataSource::Synth(parse_synth(json)?)),
        _ => Err(Error::contract(
            "exactly one of --data and --synth is required",
        )),
    }
}

fn build_spec(args: &ExperimentArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = ExperimentSpec::new(data_source(&args.data)?, args.seed, args.out.clone());
    spec.epochs = args.train.epochs;
    spec.batch_size = args.train.batch_size;
    spec.lr = args.train.lr;
    spec.base_weights = LossWeights {
        rho: args.train.rho,
        ..LossWeights::default()
    };
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Compare(args) => {
            let spec = build_spec(&args)?;
            let rows = run_comparison(&spec)?;
            for row in &rows {
                println!(
                    "{:<15} {:<13} bias_sq={:.4} var={:.4} mse={:.4} +/- {:.4}",
                    balancereg::harness::model_name(row.model),
                    row.mode.as_str(),
                    row.metrics.bias_sq,
                    row.metrics.variance,
                    row.metrics.mse_mean,
                    row.metrics.mse_std
                );
            }
            println!("wrote {}", spec.out_dir.join("comparison.csv").display());
        }
        Command::Sweep(args) => {
            let mut spec = build_spec(&args.experiment)?;
            spec.gamma_grid = args.gamma;
            spec.lambda_grid = args.lambda;
            spec.base_weights.prg_variant = match args.prg_variant {
                PrgVariantArg::SoftKs => PrgVariant::SoftKs,
                PrgVariantArg::Smd => PrgVariant::Smd,
            };
            if let Some(sigma) = args.bandwidth {
                spec.base_weights.kernel_bandwidth = Bandwidth::Fixed(sigma);
            }
            if let Some(tau) = args.softks_temperature {
                spec.base_weights.softks_temperature = SoftKsTemperature::Fixed(tau);
            }
            let rows = run_sweep(&spec)?;
            for row in &rows {
                println!(
                    "gamma={:<8} lambda={:<8} bias_sq={:.4} var={:.4} mse={:.4} +/- {:.4}",
                    row.gamma,
                    row.lambda,
                    row.metrics.bias_sq,
                    row.metrics.variance,
                    row.metrics.mse_mean,
                    row.metrics.mse_std
                );
            }
            println!("wrote {}", spec.out_dir.join("sweep.csv").display());
        }
        Command::Scatter(args) => {
            let spec = build_spec(&args)?;
            let results = export_scatter(&spec)?;
            for result in &results {
                println!(
                    "{:<15} pearson_r={:.4}",
                    balancereg::harness::model_name(result.model),
                    result.r
                );
            }
            println!("wrote {}", spec.out_dir.join("scatter.csv").display());
        }
        Command::GenData(args) => {
            let config = parse_synth(&args.config)?;
            let dataset = synth_generate(&config)?;
            export_ihdp_csv(&dataset, &args.out)?;
            println!(
                "wrote {} ({} units, {} treated)",
                args.out.display(),
                dataset.len(),
                dataset.n_treated()
            );
        }
    }
    Ok(())
}

fn error_category(err: &Error) -> &'static str {
    match err {
        Error::Dimension { .. } => "dimension",
        Error::Contract(_) => "contract",
        Error::GroupAbsent => "group_absent",
        Error::Format { .. } => "format",
        Error::UndefinedCorrelation => "undefined_correlation",
        Error::Io { .. } => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", error_category(&err));
            ExitCode::FAILURE
        }
    }
}
