use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfjm_core::harness::config::ExperimentConfig;
use pfjm_core::harness::experiment;

#[derive(Parser)]
#[command(name = "pfjm", version, about = "Poisson flow joint model: train, sample, evaluate and study")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Dotted override such as `model.d=64`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory that receives run directories.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom dataset generation.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Train a denoiser and write checkpoints.
    Train {
        /// Dataset archive from `data gen`; phantoms are generated when omitted.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Reconstruct the low-dose volumes of a dataset archive.
    Sample {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset archive whose `lowdose` tensor is the condition.
        #[arg(long, value_name = "PATH")]
        condition: PathBuf,
        /// Also write a PNG preview grid.
        #[arg(long)]
        png: bool,
    },
    /// Score reconstructions against reference volumes.
    Eval {
        /// Dataset archive whose `routine` tensor is the reference.
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
        reconstruction: Vec<PathBuf>,
        /// Accept inputs with mismatched fingerprints.
        #[arg(long)]
        force: bool,
    },
    /// Exact-field oracle utilities.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
    /// Train and evaluate one model per augmented dimension D.
    SweepD {
        /// D values; defaults to `sweep.d_values`.
        #[arg(long = "d", value_delimiter = ',')]
        d: Vec<usize>,
    },
    /// Train once and compare refinement weights w.
    SweepW {
        /// w values; defaults to `sweep.w_values`.
        #[arg(long = "w", value_delimiter = ',')]
        w: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum DataAction {
    /// Generate train and test dataset archives.
    Gen,
}

#[derive(Subcommand)]
enum OracleAction {
    /// Dump exact field lines of the toy mixture as CSV.
    Trace,
}

fn run(cli: Cli) -> pfjm_core::Result<()> {
    let c = &cli.common;
    let cfg = ExperimentConfig::load(c.config.as_deref(), &c.set, c.seed)?;
    let out = &c.out;
    let dir = match cli.command {
        Command::Data { action: DataAction::Gen } => experiment::data_gen(&cfg, out)?,
        Command::Train { data } => {
            let (dir, ckpt) = experiment::train_run(&cfg, data.as_deref(), out)?;
            if let Some(last) = ckpt.loss_history.last() {
                println!("final loss {last:.6}");
            }
            dir
        }
        Command::Sample { checkpoint, condition, png } => {
            experiment::sample_run(&cfg, &checkpoint, &condition, out, png)?
        }
        Command::Eval { reference, reconstruction, force } => {
            let (dir, reports) = experiment::eval_run(&cfg, &reference, &reconstruction, force, out)?;
            for (k, r) in reports.iter().enumerate() {
                println!(
                    "[{k}] MAE {:.3} HU  SSIM {:.3}%  PSNR {:.3} dB",
                    r.mean_mae_hu, r.mean_ssim_percent, r.mean_psnr_db
                );
            }
            dir
        }
        Command::Oracle { action: OracleAction::Trace } => experiment::oracle_trace(&cfg, out)?.0,
        Command::SweepD { d } => {
            let d = if d.is_empty() { cfg.sweep.d_values.clone() } else { d };
            let s = experiment::sweep_d(&cfg, &d, out)?;
            for r in &s.rows {
                println!("D={:<5} phase {:<3} MAE {:.3} HU", r.d, r.phase, r.mae_hu);
            }
            s.run_dir
        }
        Command::SweepW { w } => {
            let w = if w.is_empty() { cfg.sweep.w_values.clone() } else { w };
            let a = experiment::ablate_conditioning(&cfg, &w, out)?;
            for (w, mae) in &a.summary.arms {
                println!("w={w:<5} mean MAE {mae:.3} HU");
            }
            if let Some(holds) = a.summary.ordering_holds {
                println!("best w>0 at or below w=0: {holds}");
            }
            a.run_dir
        }
    };
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

