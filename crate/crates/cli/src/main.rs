use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cycledance_cli as cmd;
use cycledance_core::metrics::Direction;
use cycledance_core::model::Ablation;
use cycledance_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cycledance", version, about = "Music-driven dance style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded two-style synthetic dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = cmd::DEFAULT_SEED)]
        seed: u64,
        /// Training clips per domain.
        #[arg(long, default_value_t = 20)]
        clips: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        /// Held-out clips per domain (0 for none).
        #[arg(long, default_value_t = 17)]
        eval_clips: usize,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cycledance")]
        ablation: Ablation,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Transfer one motion clip to the other style.
    Transfer {
        #[arg(long, required_unless_present = "identity")]
        ckpt: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        music: Option<PathBuf>,
        /// x2y or y2x.
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        identity: bool,
    },
    /// Score a checkpoint with MFD and PFD.
    Evaluate {
        #[arg(long, required_unless_present = "identity")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        identity: bool,
        /// Minimum frame gap between keyframes.
        #[arg(long, default_value_t = 0)]
        min_gap: usize,
    },
    /// Train and score every ablation configuration.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CYCLEDANCE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("CYCLEDANCE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::SynthData {
            out,
            seed,
            clips,
            seconds,
            eval_clips,
        } => {
            let m = cmd::synth_data(&out, seed, clips, seconds, eval_clips)?;
            println!(
                "wrote {} + {} clips per domain to {} (accel tail ratio X {:.3}, Y {:.3})",
                clips,
                eval_clips,
                out.display(),
                m.accel_x.tail_ratio,
                m.accel_y.tail_ratio
            );
        }
        Command::Train {
            data,
            config,
            ablation,
            out,
            epochs,
            resume,
        } => {
            let t = cmd::train(&cmd::TrainArgs {
                data: &data,
                config: config.as_deref(),
                ablation,
                out: &out,
                epochs,
                resume: resume.as_deref(),
            })?;
            println!("trained {} for {} steps, config_hash={}", ablation, t.step(), t.config_hash());
        }
        Command::Transfer {
            ckpt,
            input,
            music,
            direction,
            out,
            identity,
        } => {
            cmd::transfer(&cmd::TransferArgs {
                ckpt: ckpt.as_deref(),
                input: &input,
                music: music.as_deref(),
                direction,
                out: &out,
                identity,
            })?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            ckpt,
            data,
            out,
            identity,
            min_gap,
        } => {
            let report = cmd::evaluate_command(&cmd::EvaluateArgs {
                ckpt: ckpt.as_deref(),
                data: &data,
                out: &out,
                min_gap,
                identity,
            })?;
            print!("{}", report.to_csv());
        }
        Command::Ablate {
            data,
            out,
            config,
            epochs,
            seed,
        } => {
            let config_path = match seed {
                Some(s) => {
                    let mut cfg = cmd::read_config(config.as_deref())?;
                    cfg.seed = s;
                    let p = out.join("config.json");
                    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                    std::fs::write(&p, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&p, e))?;
                    Some(p)
                }
                None => config,
            };
            let rows = cmd::ablate(&cmd::AblateArgs {
                data: &data,
                out: &out,
                config: config_path.as_deref(),
                epochs,
                ablations: &Ablation::ALL,
            })?;
            for r in &rows {
                println!("{} done in {:.0}s", r.ablation, r.seconds);
            }
            println!("wrote {}", out.join("ablation.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", cmd::error_line(&e));
            ExitCode::from(cmd::exit_code(&e) as u8)
        }
    }
}
