mod commands;
mod views;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neai::Error;

#[derive(Parser)]
#[command(
    name = "neai",
    version,
    about = "Neural ambient illumination: train, render and composite"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a scene described by a TOML config.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        /// Stop after this many iterations without changing the schedule.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render training/test views or an orbit with a trained model.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene for cameras and geometry (default: the one the model was trained on).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        views: ViewArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place a decomposed object into another environment.
    Composite {
        #[arg(long)]
        object_checkpoint: PathBuf,
        #[arg(long, conflicts_with = "env_analytic", required_unless_present = "env_analytic")]
        env_checkpoint: Option<PathBuf>,
        /// Analytic environment: empty, constant, checker, smooth or shell.
        #[arg(long)]
        env_analytic: Option<String>,
        /// "tx,ty,tz,rx,ry,rz,scale": translation, XYZ Euler degrees, uniform scale.
        #[arg(long, default_value = "0,0,0,0,0,0,1", allow_hyphen_values = true)]
        transform: String,
        /// "a,r,c": multipliers for specular albedo, roughness and diffuse colour.
        #[arg(long, default_value = "1,1,1")]
        material_scale: String,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        views: ViewArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build (or reuse) the blurred background cache of a scene.
    Preconv {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "0,1,2,4,8")]
        sigmas: String,
    },
    /// Monte-Carlo and closed-form self checks.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR/SSIM of predicted PNGs against same-named ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Generate a procedural scene.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        size: Option<u32>,
        #[arg(long)]
        train_views: Option<usize>,
        #[arg(long)]
        test_views: Option<usize>,
        /// Analytic environment preset.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Clone, Copy)]
#[group(required = true, multiple = false)]
struct ViewArgs {
    /// Index of a scene frame.
    #[arg(long)]
    frame: Option<usize>,
    /// Number of views on a circle around the object.
    #[arg(long)]
    orbit: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::SceneLoad { .. } | Error::Image(_) | Error::Checkpoint(_) | Error::Json(_) => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::SceneLoad { .. } => "scene",
        Error::Image(_) => "image",
        Error::Checkpoint(_) => "checkpoint",
        Error::Json(_) => "json",
        Error::Numerical(_) => "numerical",
        Error::Config(_) => "config",
        _ => "argument",
    }
}

fn run(cli: Cli) -> neai::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            iters,
            stop_at,
            resume,
        } => commands::train(config.as_deref(), &out, seed, iters, stop_at, resume.as_deref()),
        Command::Render {
            checkpoint,
            scene,
            views,
            out,
        } => commands::render(&checkpoint, scene.as_deref(), views.into(), &out),
        Command::Composite {
            object_checkpoint,
            env_checkpoint,
            env_analytic,
            transform,
            material_scale,
            scene,
            views,
            out,
        } => {
            let env = match (env_checkpoint, env_analytic) {
                (Some(p), None) => commands::EnvSource::Checkpoint(p),
                (None, Some(n)) => commands::EnvSource::Analytic(n),
                _ => {
                    return Err(Error::InvalidArgument(
                        "give exactly one of --env-checkpoint, --env-analytic".into(),
                    ))
                }
            };
            commands::composite(commands::CompositeArgs {
                object: &object_checkpoint,
                env,
                transform: &transform,
                material_scale: &material_scale,
                scene: scene.as_deref(),
                views: views.into(),
                out: &out,
            })
        }
        Command::Preconv { scene, sigmas } => commands::preconv(&scene, &sigmas),
        Command::Oracle { suite, samples, seed } => commands::oracle(&suite, samples, seed),
        Command::Metrics { pred, gt } => commands::metrics(&pred, &gt),
        Command::Synth {
            out,
            config,
            size,
            train_views,
            test_views,
            env,
            seed,
        } => commands::synth(commands::SynthArgs {
            out: &out,
            config: config.as_deref(),
            size,
            train_views,
            test_views,
            env: env.as_deref(),
            seed,
        }),
    }
}

impl From<ViewArgs> for views::ViewSet {
    fn from(v: ViewArgs) -> Self {
        match (v.frame, v.orbit) {
            (Some(k), _) => views::ViewSet::Frame(k),
            (None, Some(n)) => views::ViewSet::Orbit(n),
            (None, None) => unreachable!("clap requires one of --frame, --orbit"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", kind(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
