//! Clipped PPO over the categorical action grid.

mod bandit;
mod rollout;

pub use bandit::ColorBandit;
pub use rollout::{clipped_surrogate, collect_rollouts, gae, normalize_advantages, sample_categorical, RolloutBatch};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor};
use crate::track::EpisodeStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    /// Rescale the full gradient to at most this L2 norm.
    pub max_grad_norm: Option<f64>,
    pub iterations: usize,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub seed: u64,
    /// Stop once training has converged (see [`CONVERGENCE_WINDOW`]).
    pub stop_on_convergence: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 3e-4,
            max_grad_norm: Some(0.5),
            iterations: 300,
            num_envs: 4,
            steps_per_env: 256,
            seed: 0,
            stop_on_convergence: false,
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.steps_per_env
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.num_envs == 0 || self.steps_per_env == 0 {
            return bad("epochs, minibatch, num_envs and steps_per_env must be positive".into());
        }
        if self.minibatch > self.batch_size() {
            return bad(format!(
                "minibatch {} exceeds the batch of {} samples",
                self.minibatch,
                self.batch_size()
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.max_grad_norm.is_some_and(|g| g <= 0.0) {
            return bad("max_grad_norm must be positive".into());
        }
        Ok(())
    }
}

/// Completion rate that counts as solved, and how many consecutive
/// iterations must reach it.
pub const CONVERGENCE_THRESHOLD: f64 = 0.8;
pub const CONVERGENCE_WINDOW: usize = 3;

pub const METRICS_HEADER: &str =
    "iteration,env_steps,mean_reward,mean_progress,entropy,policy_loss,value_loss,completion_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: usize,
    /// Mean per-step reward over the batch.
    pub mean_reward: f64,
    /// Mean lap fraction of the episodes seen in the batch.
    pub mean_progress: f64,
    /// Mean behaviour-policy entropy during collection.
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Completed laps over episodes that ended in this iteration.
    pub completion_rate: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.iteration,
            self.env_steps,
            self.mean_reward,
            self.mean_progress,
            self.entropy,
            self.policy_loss,
            self.value_loss,
            self.completion_rate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `max |r − 1|` on the first minibatch, which should vanish.
    pub first_ratio_deviation: f64,
    /// Mean of the (normalized) advantages fed to the update.
    pub advantage_mean: f64,
    pub advantage_std: f64,
}

/// Stateful trainer: a policy, its optimizer, the environments and the
/// sampling stream.
pub struct Trainer<E: Environment> {
    config: PpoConfig,
    policy: Policy,
    adam: AdamState,
    envs: Vec<E>,
    rng: ChaCha8Rng,
    history: Vec<MetricsRow>,
    out_dir: Option<PathBuf>,
    metrics: Option<BufWriter<File>>,
    last_stats: UpdateStats,
}

impl<E: Environment> Trainer<E> {
    /// With `out_dir`, writes `metrics.csv`, `network.json` and one
    /// `ckpt_{iteration}.dacn` per iteration there.
    pub fn new(config: PpoConfig, policy: Policy, envs: Vec<E>, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        if envs.len() != config.num_envs {
            return Err(Error::Config(format!(
                "{} environments supplied for num_envs = {}",
                envs.len(),
                config.num_envs
            )));
        }
        let a = policy.spec().num_actions();
        if let Some(env) = envs.iter().find(|e| e.num_actions() != a) {
            return Err(Error::Config(format!(
                "environment has {} actions but the network outputs {a}",
                env.num_actions()
            )));
        }
        let metrics = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                policy.spec().save(dir.join("network.json"))?;
                let path = dir.join("metrics.csv");
                let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                Some(w)
            }
            None => None,
        };
        let adam = AdamState::new(
            AdamConfig {
                lr: config.learning_rate,
                ..AdamConfig::default()
            },
            policy.params(),
        );
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            policy,
            adam,
            envs,
            history: Vec::new(),
            out_dir: out_dir.map(Path::to_path_buf),
            metrics,
            last_stats: UpdateStats::default(),
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    pub fn history(&self) -> &[MetricsRow] {
        &self.history
    }

    pub fn last_update(&self) -> UpdateStats {
        self.last_stats
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    /// First iteration that closes a window of consecutive iterations at or
    /// above the completion threshold.
    pub fn converged_at(&self) -> Option<usize> {
        converged_at(&self.history)
    }

    /// One collect / estimate / update cycle.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let cfg = self.config.clone();
        let batch = collect_rollouts(&self.policy, &mut self.envs, cfg.steps_per_env, &mut self.rng)?;
        let (mut adv, returns) = gae(
            &batch.rewards,
            &batch.values,
            &batch.dones,
            &batch.last_values,
            cfg.gamma,
            cfg.lambda,
        )?;
        normalize_advantages(&mut adv);
        let stats = self.update(&batch, &adv, &returns)?;
        self.last_stats = stats;

        let iteration = self.history.len() + 1;
        let ended = batch.outcomes.len();
        let laps = batch
            .outcomes
            .iter()
            .filter(|o| o.status == EpisodeStatus::LapComplete)
            .count();
        let progress: Vec<f64> = batch.outcomes.iter().map(|o| o.progress_fraction).collect();
        let progress = if progress.is_empty() { batch.open_progress.clone() } else { progress };
        let row = MetricsRow {
            iteration,
            env_steps: iteration * cfg.batch_size(),
            mean_reward: batch.rewards.iter().sum::<f64>() / batch.len() as f64,
            mean_progress: progress.iter().sum::<f64>() / progress.len().max(1) as f64,
            entropy: batch.mean_entropy,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            completion_rate: if ended == 0 { 0.0 } else { laps as f64 / ended as f64 },
        };
        if let Some(dir) = &self.out_dir {
            crate::tensor::save_checkpoint(self.policy.params(), dir.join(format!("ckpt_{iteration}.dacn")))?;
        }
        if let Some(w) = &mut self.metrics {
            let path = self.out_dir.as_ref().expect("metrics imply out_dir").join("metrics.csv");
            writeln!(w, "{}", row.csv()).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.history.push(row.clone());
        Ok(row)
    }

    /// Runs the configured number of iterations, or fewer when stopping at
    /// convergence. `on_row` sees every metrics row as it is produced.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<()> {
        while self.iteration() < self.config.iterations {
            let row = self.step()?;
            on_row(&row);
            if self.config.stop_on_convergence && self.converged_at().is_some() {
                break;
            }
        }
        Ok(())
    }

    fn update(&mut self, batch: &RolloutBatch, adv: &[f64], returns: &[f64]) -> Result<UpdateStats> {
        let cfg = &self.config;
        let n = batch.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats {
            advantage_mean: adv.iter().sum::<f64>() / n as f64,
            ..UpdateStats::default()
        };
        stats.advantage_std =
            (adv.iter().map(|a| (a - stats.advantage_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut minibatches = 0usize;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for (k, idx) in order.chunks(cfg.minibatch).enumerate() {
                let tape = Tape::new();
                let vars = self.policy.params().bind(&tape);
                let obs: Vec<&Tensor> = idx.iter().map(|&i| &batch.observations[i]).collect();
                let x = tape.constant(self.policy.stack(&obs)?);
                let out = self.policy.forward_tape(&vars, x)?;
                let m = idx.len();
                let column = |f: &dyn Fn(usize) -> f64| Tensor::new(vec![m], idx.iter().map(|&i| f(i)).collect());
                let old_lp = tape.constant(column(&|i| batch.log_probs[i])?);
                let a = tape.constant(column(&|i| adv[i])?);
                let ret = tape.constant(column(&|i| returns[i])?);
                let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();

                let ratio = out.logits.categorical_log_prob(&actions)?.sub(old_lp)?.exp();
                if epoch == 0 && k == 0 {
                    stats.first_ratio_deviation = ratio.data().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
                }
                let unclipped = ratio.mul(a)?;
                let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip).mul(a)?;
                let policy_loss = unclipped.minimum(clipped)?.mean().scale(-1.0);
                let value_loss = out.value.sub(ret)?.square().mean();
                let entropy = out.logits.entropy()?.mean();
                let loss = policy_loss
                    .add(value_loss.scale(cfg.value_coef))?
                    .sub(entropy.scale(cfg.entropy_coef))?;
                if !loss.item().is_finite() {
                    return Err(self.abort(format!("non-finite loss {}", loss.item())));
                }
                let g = tape.backward(loss)?;
                let mut grads: Vec<Vec<f64>> = vars.iter().map(|v| g.wrt(*v)).collect();
                let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(self.abort("non-finite gradient".into()));
                }
                if let Some(max) = cfg.max_grad_norm {
                    if norm > max {
                        let s = max / norm;
                        grads.iter_mut().flatten().for_each(|x| *x *= s);
                    }
                }
                self.adam.step(self.policy.params_mut(), &grads)?;
                stats.policy_loss += policy_loss.item();
                stats.value_loss += value_loss.item();
                stats.entropy += entropy.item();
                minibatches += 1;
            }
        }
        let mb = minibatches as f64;
        stats.policy_loss /= mb;
        stats.value_loss /= mb;
        stats.entropy /= mb;
        Ok(stats)
    }

    fn abort(&self, why: String) -> Error {
        let last = self.history.len();
        let kept = match (&self.out_dir, last) {
            (Some(dir), l) if l > 0 => format!("; last good checkpoint {}", dir.join(format!("ckpt_{l}.dacn")).display()),
            _ => String::new(),
        };
        Error::TrainingAborted(format!("iteration {}: {why}{kept}", last + 1))
    }
}

/// Iteration (1-based) that closes the first run of
/// [`CONVERGENCE_WINDOW`] rows at or above [`CONVERGENCE_THRESHOLD`].
pub fn converged_at(rows: &[MetricsRow]) -> Option<usize> {
    let mut streak = 0;
    for row in rows {
        if row.completion_rate >= CONVERGENCE_THRESHOLD {
            streak += 1;
            if streak == CONVERGENCE_WINDOW {
                return Some(row.iteration);
            }
        } else {
            streak = 0;
        }
    }
    None
}

/// Trains `policy` in `envs` and returns the trained trainer state.
pub fn train<E: Environment>(
    config: PpoConfig,
    policy: Policy,
    envs: Vec<E>,
    out_dir: Option<&Path>,
    on_row: impl FnMut(&MetricsRow),
) -> Result<Trainer<E>> {
    let mut t = Trainer::new(config, policy, envs, out_dir)?;
    t.run(on_row)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandit_trainer(seed: u64, lr: f64, dir: Option<&Path>) -> Trainer<ColorBandit> {
        let cfg = PpoConfig {
            learning_rate: lr,
            num_envs: 2,
            steps_per_env: 16,
            minibatch: 16,
            iterations: 3,
            seed,
            ..PpoConfig::default()
        };
        let envs = (0..2).map(|k| ColorBandit::new(8, seed * 10 + k)).collect();
        let policy = Policy::new(ColorBandit::network(8), seed).unwrap();
        Trainer::new(cfg, policy, envs, dir).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut t = bandit_trainer(1, 0.0, None);
        let before = t.policy().params().clone();
        t.step().unwrap();
        assert_eq!(before.tensors(), t.policy().params().tensors());
    }

    #[test]
    fn first_minibatch_ratio_is_one_and_advantages_normalized() {
        let mut t = bandit_trainer(2, 1e-3, None);
        for _ in 0..3 {
            t.step().unwrap();
            let s = t.last_update();
            assert!(s.first_ratio_deviation < 1e-9, "{s:?}");
            assert!(s.advantage_mean.abs() < 1e-9);
            assert!((s.advantage_std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bookkeeping_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = bandit_trainer(3, 1e-3, Some(dir.path()));
        t.run(|_| {}).unwrap();
        let rows = t.history();
        assert_eq!(rows.len(), 3);
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(r.iteration, k + 1);
            assert_eq!(r.env_steps, (k + 1) * 32);
        }
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(csv.lines().count(), 4);
        let p = Policy::load(dir.path().join("ckpt_3.dacn")).unwrap();
        assert_eq!(p.params().tensors(), t.policy().params().tensors());
    }

    #[test]
    fn initial_entropy_is_uniform() {
        let spec = crate::policy::NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let policy = Policy::new(spec, 0).unwrap();
        let obs = Tensor::zeros(&[3, 48, 64]);
        let out = policy.infer(&[&obs]).unwrap();
        let h = crate::tensor::entropy(&out[0].logits).unwrap();
        assert!((h - 15f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn convergence_window() {
        let row = |i: usize, c: f64| MetricsRow {
            iteration: i,
            env_steps: 0,
            mean_reward: 0.0,
            mean_progress: 0.0,
            entropy: 0.0,
            policy_loss: 0.0,
            value_loss: 0.0,
            completion_rate: c,
        };
        let rates = [0.9, 0.9, 0.5, 0.8, 1.0, 0.85, 0.9];
        let rows: Vec<_> = rates.iter().enumerate().map(|(i, &c)| row(i + 1, c)).collect();
        assert_eq!(converged_at(&rows), Some(6));
        assert_eq!(converged_at(&rows[..5]), None);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            PpoConfig { clip: 1.0, ..PpoConfig::default() },
            PpoConfig { gamma: 0.0, ..PpoConfig::default() },
            PpoConfig { lambda: 1.5, ..PpoConfig::default() },
            PpoConfig { minibatch: 2048, ..PpoConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        PpoConfig::default().validate().unwrap();
    }
}
