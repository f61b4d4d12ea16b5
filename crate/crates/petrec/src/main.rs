use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use petrec::{Phase, Pipeline, PipelineError, Profile, RunConfig};

#[derive(Parser)]
#[command(name = "petrec", version, about = "Low-dose PET reconstruction experiments")]
struct Cli {
    /// JSON overlay applied on top of the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Replace existing outputs of this command.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    PaperShape,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Transgan,
    Sdam,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic F-PET/L-PET volumes and atlases.
    GenerateData,
    /// Train per fold.
    Train {
        #[arg(long, value_enum, default_value_t = PhaseArg::All)]
        phase: PhaseArg,
    },
    /// Score test subjects and write the run manifest.
    Evaluate,
    /// Recompute SUVR tables and Bland-Altman outputs.
    SuvrReport,
    /// Print the resolved config, parameter counts and artifact status.
    Info,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let profile = match cli.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::PaperShape => Profile::PaperShape,
    };
    let config = RunConfig::load(cli.config.as_deref(), profile)?;
    let pipeline = Pipeline::new(config, cli.force);
    match cli.command {
        Command::GenerateData => {
            let m = pipeline.generate_data()?;
            eprintln!("wrote {} subjects to {}", m.subjects.len(), pipeline.layout.data_dir().display());
        }
        Command::Train { phase } => {
            let phase = match phase {
                PhaseArg::Transgan => Phase::Transgan,
                PhaseArg::Sdam => Phase::Sdam,
                PhaseArg::All => Phase::All,
            };
            for s in pipeline.train(phase)? {
                eprintln!(
                    "fold {} {}: best step {} val PSNR {:.2} dB ({:.1} s)",
                    s.fold, s.phase, s.best_step, s.best_val_psnr, s.seconds
                );
            }
        }
        Command::Evaluate => {
            let m = pipeline.evaluate()?;
            for (name, s) in &m.overall {
                eprintln!(
                    "{name:>9}: PSNR {:.2} ± {:.2} dB  SSIM {:.4} ± {:.4}  VSMD {:.4} ± {:.4}",
                    s.per_subject.psnr_db.mean,
                    s.per_subject.psnr_db.std,
                    s.per_subject.ssim.mean,
                    s.per_subject.ssim.std,
                    s.per_subject.vsmd.mean,
                    s.per_subject.vsmd.std
                );
            }
            eprintln!("manifest: {}", pipeline.layout.eval_manifest().display());
        }
        Command::SuvrReport => {
            let s = pipeline.suvr_report()?;
            for (name, a) in &s.pooled {
                eprintln!("{name:>9}: mean diff {:.4} (n = {})", a.mean_diff, a.n_points);
            }
        }
        Command::Info => {
            println!("{}", serde_json::to_string_pretty(&pipeline.info()?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
