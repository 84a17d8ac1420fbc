//! `cutmpc`: collect data, train the dynamics model, deploy and evaluate the MPC.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cutmpc::config::RunConfig;
use cutmpc::pipeline::{cmd_collect, cmd_eval, cmd_run, cmd_train, StageSelection};
use cutmpc::Error;

#[derive(Parser, Debug)]
#[command(name = "cutmpc", version, about = "Learned-dynamics MPC for simulated robotic cutting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// `section.key=value` overrides, applied after the config file.
    #[arg(global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run seeded data-collection trials and write the dataset.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Train the dynamics model (all three stages unless --stage is given).
    Train {
        /// Run only this stage (1, 2 or 3); earlier checkpoints must exist.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Deploy the MPC for one episode on a material.
    Run {
        #[arg(long, default_value = "cake")]
        material: String,
        /// Repetition index selecting the plant and MPC seeds.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compare MPC and tuned baseline and write the report.
    Eval {
        /// Comma-separated materials; defaults to `eval.materials`.
        #[arg(long, value_delimiter = ',')]
        materials: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> cutmpc::Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> cutmpc::Result<()> {
    match cli.command {
        Command::Collect { common } => {
            let cfg = load(&common)?;
            let s = cmd_collect(&cfg, &common.out)?;
            println!(
                "collected {} trials ({} timesteps; {} train / {} validation) -> {}",
                s.trials,
                s.timesteps,
                s.train_trials,
                s.validation_trials,
                s.manifest.display()
            );
        }
        Command::Train { stage, common } => {
            let cfg = load(&common)?;
            let sel = stage.map_or(StageSelection::All, StageSelection::Only);
            let r = cmd_train(&cfg, &common.out, sel)?;
            println!("trained stages: {}", r.stages_run.join(", "));
            if let Some(s) = r.summary {
                println!(
                    "validation: single-step mse {:.4e} (persistence {:.4e}), {}-block mse {:.4e} (stage-2 rollout {:.4e})",
                    s.val_single_step_mse,
                    s.val_persistence_mse,
                    cfg.train.horizon_blocks,
                    s.val_multi_step_mse,
                    s.val_naive_multi_step_mse
                );
            }
        }
        Command::Run { material, rep, common } => {
            let cfg = load(&common)?;
            let s = cmd_run(&cfg, &common.out, &material, rep)?;
            println!("{}", s.line());
            println!("log: {}", s.log.display());
        }
        Command::Eval { materials, common } => {
            let cfg = load(&common)?;
            let o = cmd_eval(&cfg, &common.out, materials.as_deref())?;
            for (m, b, p, win) in o.report.win_loss() {
                println!(
                    "{m:>12}: baseline {:.3} mm/s, mpc {:.3} mm/s -> {}",
                    b * 1e3,
                    p * 1e3,
                    if win { "mpc" } else { "baseline" }
                );
            }
            let fc = &o.force_critical;
            println!(
                "force-critical {}: band respected {}, stalled {}, releasing {}, lateral intensified {}",
                fc.material, fc.band_respected, fc.stalled, fc.releasing, fc.lateral_intensified
            );
            println!(
                "mpc invariants: {} ticks, {} bound violations, {} argmin mismatches",
                o.invariants.ticks, o.invariants.bound_violations, o.invariants.argmin_mismatches
            );
            println!("report: {}", o.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Training { snapshot: Some(s), .. } = &e {
                eprintln!("parameter snapshot: {} values, first {:?}", s.len(), &s[..s.len().min(4)]);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
