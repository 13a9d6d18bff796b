use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use twinsim_cli::commands::{self, EvalArgs, TrainArgs};
use twinsim_cli::{DataDir, ServerConfig};
use twinsim_core::twin::Mode;
use twinsim_eval::EvalMode;
use twinsim_policy::{RepresentationKind, TrainConfig};

/// PushT digital twin: collect demos, train and evaluate policies, serve teleop.
///
/// Artifacts live under $TWINSIM_DATA_DIR (default ./twinsim-data).
#[derive(Parser)]
#[command(name = "twinsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingMode {
    Online,
    Offline,
}

impl From<CouplingMode> for Mode {
    fn from(m: CouplingMode) -> Self {
        match m {
            CouplingMode::Online => Mode::Online,
            CouplingMode::Offline => Mode::Offline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Scripted,
    Teleop,
}

#[derive(clap::Args)]
struct EvalOpts {
    /// Parallel environments.
    #[arg(long, default_value_t = 20)]
    envs: usize,
    /// Start poses in the evaluation suite.
    #[arg(long, default_value_t = 20)]
    poses: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<&EvalOpts> for EvalArgs {
    fn from(o: &EvalOpts) -> Self {
        EvalArgs {
            envs: o.envs,
            poses: o.poses,
            repeats: o.repeats,
            seed: o.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Scene configuration.
    Scene {
        #[command(subcommand)]
        action: SceneAction,
    },
    /// Record demonstrations, or list the stored ones.
    Collect {
        #[arg(long, value_enum, required_unless_present = "list")]
        source: Option<Source>,
        #[arg(long, value_enum, default_value = "online")]
        mode: CouplingMode,
        #[arg(short = 'n', long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Teleop server port.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        list: bool,
    },
    /// Train a policy on the stored demos.
    Train {
        #[arg(long, default_value = "state")]
        rep: RepresentationKind,
        /// Checkpoint directory name; defaults to the representation.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 1500, 2500, 5000])]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave out failure re-demonstrations.
        #[arg(long)]
        without_augmentation: bool,
    },
    /// Evaluate one checkpoint on the fixed start-pose suite.
    Eval {
        #[arg(long)]
        name: String,
        /// Checkpoint step; defaults to the latest.
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value = "coupled")]
        mode: EvalMode,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// Evaluate every checkpoint of a run in virtual and coupled mode.
    Sweep {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// Train and evaluate one policy per observation representation.
    Compare {
        #[arg(long, value_delimiter = ',', default_values_t = RepresentationKind::ALL)]
        reps: Vec<RepresentationKind>,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value = "coupled")]
        mode: EvalMode,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// Queue failure states from an evaluation report for re-demonstration.
    Augment {
        #[arg(long)]
        report: PathBuf,
        /// Re-demonstrate with the scripted expert instead of teleop.
        #[arg(long)]
        scripted: bool,
        #[arg(long, value_enum, default_value = "online")]
        mode: CouplingMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the teleop websocket server.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, value_enum, default_value = "online")]
        mode: CouplingMode,
    },
}

#[derive(Subcommand)]
enum SceneAction {
    /// Write the default PushT scene to scene.json.
    Build,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let data = DataDir::from_env();
    match cli.command {
        Command::Scene { action: SceneAction::Build } => commands::scene_build(&data),
        Command::Collect { list: true, .. } => commands::collect_list(&data),
        Command::Collect {
            source,
            mode,
            count,
            seed,
            port,
            ..
        } => match source {
            Some(Source::Scripted) => commands::collect_scripted(&data, mode.into(), count, seed),
            Some(Source::Teleop) => {
                let saved = serve(&data, port, mode.into(), Some(count))?;
                Ok(format!("recorded {saved} teleop demos\n"))
            }
            None => bail!("--source is required"),
        },
        Command::Train {
            rep,
            name,
            steps,
            checkpoints,
            seed,
            without_augmentation,
        } => commands::train_policy(
            &data,
            &TrainArgs {
                kind: rep,
                name: name.unwrap_or_else(|| rep.to_string()),
                steps,
                checkpoints,
                seed,
                with_augmentation: !without_augmentation,
            },
        ),
        Command::Eval { name, step, mode, opts } => commands::eval_checkpoint(&data, &name, step, mode, &(&opts).into()),
        Command::Sweep { name, opts } => commands::sweep(&data, &name, &(&opts).into()),
        Command::Compare { reps, steps, mode, opts } => {
            let config = TrainConfig {
                steps,
                checkpoints: vec![steps],
                seed: opts.seed,
                ..TrainConfig::default()
            };
            commands::compare(&data, &reps, &config, mode, &(&opts).into())
        }
        Command::Augment {
            report,
            scripted,
            mode,
            seed,
        } => commands::augment(&data, &report, scripted.then_some(mode.into()), seed),
        Command::Serve { port, mode } => {
            serve(&data, port, mode.into(), None)?;
            Ok(String::new())
        }
    }
}

fn serve(data: &DataDir, port: u16, mode: Mode, stop_after: Option<usize>) -> Result<usize> {
    let scene = commands::load_scene(data)?;
    let mut config = ServerConfig::new(scene, mode, data.demos());
    config.failures_path = Some(data.failures());
    config.stop_after = stop_after;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("teleop server on ws://{}/ws", listener.local_addr()?);
        tokio::select! {
            r = twinsim_cli::serve(listener, config) => Ok(r?),
            _ = tokio::signal::ctrl_c() => Ok(0),
        }
    })
}
