use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use resalign::spectral::{kernel_response, measure_attenuation, shift_transfer};
use resalign::train::grad_check;
use resalign::ResampleMethod;
use resalign_bench::config::ExperimentConfig;
use resalign_bench::gradcheck_instance;
use resalign_bench::study::{check_ablation, check_study, run_ablation, run_study, write_ablation, write_study};

/// Relative error below which `gradcheck` reports success.
const GRAD_TOLERANCE: f64 = 1e-4;
const SPECTRUM_LENGTH: usize = 256;

#[derive(Parser)]
#[command(
    name = "resalign-bench",
    version,
    about = "Resampling and implicit alignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method on every shift and write study.csv.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Positional-encoding grid and window-size sweep; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the attention gradients on a random instance.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Kernel response, shift transfer and measured attenuation per frequency.
    Spectrum {
        #[arg(long)]
        method: ResampleMethod,
        /// Comma-separated frequencies in cycles/pixel.
        #[arg(long, value_delimiter = ',', required = true)]
        freqs: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        shift: f64,
    },
}

fn report_failures(failures: &[String]) -> ExitCode {
    for f in failures {
        eprintln!("FAIL: {f}");
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Study { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_study(&cfg)?;
            write_study(&outcome, &out)?;
            print!("{}", outcome.report.to_csv()?);
            Ok(report_failures(&check_study(&cfg, &outcome.report)))
        }
        Command::Ablate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_ablation(&cfg)?;
            write_ablation(&outcome, &out)?;
            for s in &outcome.summary {
                println!(
                    "{:<36} pooled PSNR {:>9.4} dB  SSIM {:.4}",
                    s.variant.label(),
                    s.pooled_psnr_db,
                    s.mean_ssim
                );
            }
            Ok(report_failures(&check_ablation(&cfg, &outcome)))
        }
        Command::Gradcheck { seed, eps } => {
            let (model, instance) = gradcheck_instance(seed);
            let r = grad_check(&model, &instance, eps)?;
            println!(
                "seed {seed}: max relative error {:.3e} over {} coordinates (worst {}[{}])",
                r.max_relative_error,
                r.coordinates,
                r.worst.0.name(),
                r.worst.1
            );
            Ok(if r.max_relative_error < GRAD_TOLERANCE {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Spectrum { method, freqs, shift } => {
            println!("freq,kernel_response,transfer_magnitude,measured_ratio");
            for f in freqs {
                let kr = kernel_response(method, f).map_or("nan".to_string(), |v| format!("{v:.6}"));
                let tm = shift_transfer(method, shift, f).map_or("nan".to_string(), |c| format!("{:.6}", c.norm()));
                let measured = measure_attenuation(f, shift, method, SPECTRUM_LENGTH)?;
                println!("{f},{kr},{tm},{measured:.6}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
