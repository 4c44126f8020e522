use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use attnracer::config::{load_track, ExperimentConfig, SEED_ENV};
use attnracer::env::{EnvConfig, Environment, RacingEnv};
use attnracer::eval::{self, SaliencyTarget, TrainedModel, TransferReport};
use attnracer::policy::Policy;
use attnracer::ppo::Trainer;
use attnracer::render::{appearance_names, load_ppm, save_ppm, DomainAppearance};
use attnracer::tensor::Tensor;
use attnracer::Error;

#[derive(Parser)]
#[command(name = "attnracer", version, about = "Vision-only racing with an attention CNN trained by PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO; writes metrics.csv and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "loop-A")]
        track: String,
        #[arg(long, default_value = "asphalt")]
        appearance: String,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take environment settings (vehicle, camera, bots) from a config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Cross-appearance evaluation of the checkpoints listed in a config.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        /// Directory for transfer.csv and transfer.json (default: output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grad-CAM or attention heatmap over one observation, as a PPM overlay.
    Saliency {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// A P6 PPM file, or `live` to render a frame.
        #[arg(long)]
        obs: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::Action)]
        target: Target,
        #[arg(long, default_value = "loop-A")]
        track: String,
        #[arg(long, default_value = "asphalt")]
        appearance: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes one sample frame per appearance.
    RenderDemo {
        #[arg(long, default_value = "loop-A")]
        track: String,
        /// An appearance name, or `all`.
        #[arg(long, default_value = "all")]
        appearance: String,
        #[arg(long)]
        out: PathBuf,
        /// Consecutive frames per appearance while driving straight ahead.
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gradcam,
    Attention,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Action,
    Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Checkpoint(_) | Error::Unsupported(_) | Error::Json(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cmd: Command) -> attnracer::Result<()> {
    match cmd {
        Command::Train { config, out, iterations } => train(&config, out, iterations),
        Command::Eval {
            ckpt,
            track,
            appearance,
            episodes,
            seed,
            config,
            json,
        } => {
            let env = env_config(config.as_deref())?;
            let policy = Policy::load(&ckpt)?;
            let track = Arc::new(load_track(&track)?);
            let app = DomainAppearance::named(&appearance)?;
            let e = eval::evaluate(&policy, track, &app, &env, episodes, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&e.summary)?);
            } else {
                for (k, r) in e.episodes.iter().enumerate() {
                    println!(
                        "episode {k}: {:?} progress {:.3} steps {} speed {:.2}",
                        r.outcome.status, r.outcome.progress_fraction, r.outcome.steps, r.mean_speed
                    );
                }
                let s = e.summary;
                println!(
                    "completion {:.3}  progress {:.3}  speed {:.2}  off-track {}  crashes {}  ({} episodes)",
                    s.completion_rate, s.mean_progress, s.mean_speed, s.off_track_count, s.crash_count, s.episodes
                );
            }
            Ok(())
        }
        Command::Transfer { config, out } => transfer(&config, out),
        Command::Saliency {
            ckpt,
            mode,
            obs,
            out,
            target,
            track,
            appearance,
            seed,
        } => {
            let policy = Policy::load(&ckpt)?;
            let image = if obs == "live" {
                let (_, h, w) = policy.spec().input;
                let env_cfg = EnvConfig {
                    camera: attnracer::render::CameraConfig {
                        width: w,
                        height: h,
                        ..Default::default()
                    },
                    ..EnvConfig::default()
                };
                let env = RacingEnv::new(
                    Arc::new(load_track(&track)?),
                    DomainAppearance::named(&appearance)?,
                    env_cfg,
                    seed,
                )?;
                env.observation().clone()
            } else {
                load_ppm(&obs).map_err(|e| match e {
                    Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
                    other => other,
                })?
            };
            let map = match mode {
                Mode::Gradcam => {
                    let t = match target {
                        Target::Action => SaliencyTarget::ChosenAction,
                        Target::Value => SaliencyTarget::Value,
                    };
                    eval::grad_cam(&policy, &image, t)?
                }
                Mode::Attention => eval::attention_heatmap(&policy, &image)?,
            };
            save_ppm(&eval::overlay(&image, &map.overlay)?, &out)?;
            let rows: Vec<String> = map
                .heatmap
                .data()
                .chunks(map.heatmap.shape()[1])
                .map(|r| r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "))
                .collect();
            println!("{}", rows.join("\n"));
            if map.all_zero {
                println!("note: the raw map was identically zero");
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::RenderDemo {
            track,
            appearance,
            out,
            frames,
            seed,
        } => render_demo(&track, &appearance, &out, frames, seed),
    }
}

fn env_config(config: Option<&Path>) -> attnracer::Result<EnvConfig> {
    match config {
        Some(p) => Ok(ExperimentConfig::load(p)?.env),
        None => Ok(EnvConfig::default()),
    }
}

fn train(config: &Path, out: Option<PathBuf>, iterations: Option<usize>) -> attnracer::Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(n) = iterations {
        cfg.ppo.iterations = n;
    }
    let out = out.unwrap_or_else(|| cfg.output_dir.clone());
    let envs = cfg.make_envs()?;
    let policy = cfg.make_policy()?;
    eprintln!(
        "training {} ({} parameters) on {} for {} iterations, seed {} (override with {SEED_ENV})",
        policy.spec().name,
        policy.param_count(),
        cfg.track,
        cfg.ppo.iterations,
        cfg.seed
    );
    let mut trainer = Trainer::new(cfg.ppo_config(), policy, envs, Some(&out))?;
    std::fs::write(out.join("config.json"), cfg.to_json()).map_err(|e| Error::io(out.join("config.json"), e))?;
    println!("{}", attnracer::ppo::METRICS_HEADER);
    trainer.run(|row| println!("{}", row.csv()))?;
    if let Some(it) = trainer.converged_at() {
        eprintln!("converged at iteration {it}");
    }
    // a stable name for the newest checkpoint, for eval and transfer configs
    let last = out.join(format!("ckpt_{}.dacn", trainer.iteration()));
    let latest = out.join("latest.dacn");
    if trainer.iteration() > 0 {
        std::fs::copy(&last, &latest).map_err(|e| Error::io(&latest, e))?;
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn transfer(config: &Path, out: Option<PathBuf>) -> attnracer::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.eval.checkpoints.is_empty() {
        return Err(Error::Config("eval.checkpoints lists no checkpoints".into()));
    }
    let models = cfg
        .eval
        .checkpoints
        .iter()
        .map(|c| {
            Ok(TrainedModel {
                train_domain: c.train.clone(),
                seed: c.seed,
                policy: Policy::load(&c.path)?,
            })
        })
        .collect::<attnracer::Result<Vec<_>>>()?;
    let domains = cfg
        .eval
        .appearances
        .iter()
        .map(|a| DomainAppearance::named(a))
        .collect::<attnracer::Result<Vec<_>>>()?;
    let track = Arc::new(load_track(cfg.eval.track.as_deref().unwrap_or(&cfg.track))?);
    let report: TransferReport = eval::transfer_matrix(&models, &domains, track, &cfg.env, cfg.eval.episodes, cfg.seed)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (name, body) in [("transfer.csv", report.to_csv()), ("transfer.json", report.to_json())] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    print!("{}", report.table());
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn render_demo(track: &str, appearance: &str, out: &Path, frames: usize, seed: u64) -> attnracer::Result<()> {
    let track = Arc::new(load_track(track)?);
    let names: Vec<&str> = if appearance == "all" {
        appearance_names().to_vec()
    } else {
        vec![appearance]
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg = EnvConfig::default();
    let straight = cfg.actions.index(cfg.actions.steering_bins / 2, 0);
    for name in names {
        let app = DomainAppearance::named(name)?;
        let mut env = RacingEnv::new(track.clone(), app, cfg.clone(), seed)?;
        env.reset_to(0.0, 0.0, 0.0);
        for f in 0..frames.max(1) {
            let path = if frames <= 1 {
                out.join(format!("{name}.ppm"))
            } else {
                out.join(format!("{name}_{f:04}.ppm"))
            };
            let frame: &Tensor = env.observation();
            save_ppm(frame, &path)?;
            println!("wrote {}", path.display());
            env.step(straight)?;
        }
    }
    Ok(())
}
