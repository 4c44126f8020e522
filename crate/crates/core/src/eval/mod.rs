//! Greedy evaluation of trained policies, plus transfer reports and saliency.

mod saliency;
mod transfer;

pub use saliency::{
    attention_heatmap, grad_cam, grad_cam_from, normalize_map, overlay, upsample_bilinear, SaliencyMap, SaliencySource,
    SaliencyTarget,
};
pub use transfer::{transfer_matrix, CellMetrics, SeedMetrics, TrainedModel, TransferReport};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::RacingEnv;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::render::DomainAppearance;
use crate::track::{EpisodeOutcome, EpisodeStatus, Track};
use crate::env::EnvConfig;

/// One evaluated episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub outcome: EpisodeOutcome,
    pub mean_speed: f64,
}

/// Aggregate of a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completion_rate: f64,
    pub mean_progress: f64,
    pub mean_speed: f64,
    pub episodes: usize,
    pub off_track_count: usize,
    pub crash_count: usize,
}

impl Summary {
    pub fn of(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        let count = |s: EpisodeStatus| records.iter().filter(|r| r.outcome.status == s).count();
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            completion_rate: if n == 0 { 0.0 } else { count(EpisodeStatus::LapComplete) as f64 / n as f64 },
            mean_progress: mean(&|r| r.outcome.progress_fraction),
            mean_speed: mean(&|r| r.mean_speed),
            episodes: n,
            off_track_count: count(EpisodeStatus::OffTrack),
            crash_count: count(EpisodeStatus::Crashed),
        }
    }
}

/// Result of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: Summary,
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs `episodes` episodes with greedy actions in a fresh environment
/// seeded with `seed`.
pub fn evaluate(
    policy: &Policy,
    track: Arc<Track>,
    appearance: &DomainAppearance,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let a = config.actions.len();
    if policy.spec().num_actions() != a {
        return Err(Error::Config(format!(
            "network outputs {} actions, environment expects {a}",
            policy.spec().num_actions()
        )));
    }
    let (c, h, w) = policy.spec().input;
    if (c, h, w) != (3, config.camera.height, config.camera.width) {
        return Err(Error::Config(format!(
            "network input {:?} does not match the {}x{} camera",
            policy.spec().input,
            config.camera.width,
            config.camera.height
        )));
    }
    let mut env = RacingEnv::new(track, appearance.clone(), config.clone(), seed)?;
    let mut records = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        loop {
            let (out, _) = policy.forward(&env.current_observation().pixels)?;
            let (_, status) = env.advance(out.greedy())?;
            if status.is_terminal() {
                records.push(EpisodeRecord {
                    outcome: env.episode_outcome(status),
                    mean_speed: env.mean_speed(),
                });
                crate::env::Environment::reset(&mut env);
                break;
            }
        }
    }
    Ok(Evaluation {
        summary: Summary::of(&records),
        episodes: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NetworkSpec;
    use crate::track::oval;

    fn small_config() -> EnvConfig {
        EnvConfig {
            max_steps: 150,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn untrained_policy_does_not_finish_and_is_reproducible() {
        let cfg = small_config();
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let track = Arc::new(oval(1.5, 3.0, 1.0));
        let app = DomainAppearance::named("asphalt").unwrap();
        for seed in 0..3 {
            let p = Policy::new(spec.clone(), seed).unwrap();
            let e = evaluate(&p, track.clone(), &app, &cfg, 5, seed).unwrap();
            assert_eq!(e.episodes.len(), 5);
            assert_eq!(e.summary.completion_rate, 0.0);
            assert_eq!(e, evaluate(&p, track.clone(), &app, &cfg, 5, seed).unwrap());
        }
    }

    #[test]
    fn summary_counts() {
        let rec = |status, p| EpisodeRecord {
            outcome: EpisodeOutcome {
                status,
                progress_fraction: p,
                steps: 10,
                cars_passed: 0,
            },
            mean_speed: 1.0,
        };
        let s = Summary::of(&[
            rec(EpisodeStatus::LapComplete, 1.0),
            rec(EpisodeStatus::OffTrack, 0.5),
            rec(EpisodeStatus::Crashed, 0.25),
            rec(EpisodeStatus::Timeout, 0.25),
        ]);
        assert_eq!(s.completion_rate, 0.25);
        assert_eq!(s.mean_progress, 0.5);
        assert_eq!((s.episodes, s.off_track_count, s.crash_count), (4, 1, 1));
    }

    #[test]
    fn rejects_mismatched_network() {
        let spec = NetworkSpec::preset("baseline", (3, 24, 32), 5, 3).unwrap();
        let p = Policy::new(spec, 0).unwrap();
        let app = DomainAppearance::named("asphalt").unwrap();
        let r = evaluate(&p, Arc::new(oval(1.5, 3.0, 1.0)), &app, &small_config(), 1, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
