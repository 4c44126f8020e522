use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::tensor::Tensor;
use crate::track::EpisodeOutcome;

/// `T` steps from each of `E` environments, stored time-major: entry
/// `t·E + e` is step `t` of environment `e`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub steps: usize,
    pub observations: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value estimate of the observation after the last step, per env.
    pub last_values: Vec<f64>,
    /// Episodes that ended during collection, in the order they ended.
    pub outcomes: Vec<EpisodeOutcome>,
    /// Progress of episodes still running when collection stopped.
    pub open_progress: Vec<f64>,
    /// Mean policy entropy over the collected steps.
    pub mean_entropy: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.num_envs * self.steps;
        let lens = [
            self.observations.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.rewards.len(),
            self.dones.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.last_values.len() != self.num_envs {
            return Err(Error::Contract(format!(
                "rollout arrays {lens:?} and {} tail values for {} envs × {} steps",
                self.last_values.len(),
                self.num_envs,
                self.steps
            )));
        }
        if self.log_probs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Contract("non-finite behaviour log-probability".into()));
        }
        Ok(())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Inverse-CDF draw from the categorical distribution with `logits`.
/// Returns the action and its log-probability.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::TrainingAborted(format!("non-finite or empty logits {logits:?}")));
    }
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return Ok((k, *lp));
        }
    }
    // rounding left the cumulative sum just under 1
    let k = logp.len() - 1;
    Ok((k, logp[k]))
}

fn entropy_of(logits: &[f64]) -> f64 {
    -log_softmax(logits).iter().map(|l| l.exp() * l).sum::<f64>()
}

/// Runs every environment for `steps` steps under `policy`, sampling actions.
/// Environments reset themselves at episode ends.
pub fn collect_rollouts<E: Environment, R: Rng + ?Sized>(
    policy: &Policy,
    envs: &mut [E],
    steps: usize,
    rng: &mut R,
) -> Result<RolloutBatch> {
    if envs.is_empty() || steps == 0 {
        return Err(Error::Config("rollouts need at least one env and one step".into()));
    }
    let e = envs.len();
    let n = e * steps;
    let mut batch = RolloutBatch {
        num_envs: e,
        steps,
        observations: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        last_values: Vec::new(),
        outcomes: Vec::new(),
        open_progress: Vec::new(),
        mean_entropy: 0.0,
    };
    let mut entropy_sum = 0.0;
    for _ in 0..steps {
        let obs: Vec<Tensor> = envs.iter().map(|env| env.observation().clone()).collect();
        let refs: Vec<&Tensor> = obs.iter().collect();
        let outs = policy.infer(&refs)?;
        for (env, (o, out)) in envs.iter_mut().zip(obs.into_iter().zip(outs)) {
            if !out.value.is_finite() {
                return Err(Error::TrainingAborted(format!("non-finite value estimate {}", out.value)));
            }
            let (action, logp) = sample_categorical(&out.logits, rng)?;
            entropy_sum += entropy_of(&out.logits);
            let tr = env.step(action)?;
            batch.observations.push(o);
            batch.actions.push(action);
            batch.log_probs.push(logp);
            batch.values.push(out.value);
            batch.rewards.push(tr.reward);
            batch.dones.push(tr.done);
            batch.outcomes.extend(tr.outcome);
        }
    }
    let obs: Vec<&Tensor> = envs.iter().map(|env| env.observation()).collect();
    batch.last_values = policy.infer(&obs)?.into_iter().map(|o| o.value).collect();
    batch.open_progress = envs.iter().map(|env| env.progress()).collect();
    batch.mean_entropy = entropy_sum / n as f64;
    batch.check()?;
    Ok(batch)
}

/// Generalized advantage estimates and value targets for a time-major batch.
/// A done step does not bootstrap from the next observation.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = last_values.len();
    let n = rewards.len();
    if e == 0 || n % e != 0 || values.len() != n || dones.len() != n {
        return Err(Error::dim(
            "gae",
            format!("{n} rewards, {} values, {} dones, {e} envs", values.len(), dones.len()),
        ));
    }
    let steps = n / e;
    let mut adv = vec![0.0; n];
    for env in 0..e {
        let mut next_value = last_values[env];
        let mut running = 0.0;
        for t in (0..steps).rev() {
            let i = t * e + env;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            running = delta + gamma * lambda * live * running;
            adv[i] = running;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to mean 0 and (population) std 1; a single sample
/// or a constant batch is only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if n > 1.0 && std > 1e-12 { std } else { 1.0 };
    for a in adv.iter_mut() {
        *a = (*a - mean) / scale;
    }
}

/// Negated mean of `min(r·A, clip(r, 1−ε, 1+ε)·A)` with `r = exp(new − old)`.
pub fn clipped_surrogate(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], eps: f64) -> Result<f64> {
    let n = advantages.len();
    if new_log_probs.len() != n || old_log_probs.len() != n || n == 0 {
        return Err(Error::dim(
            "clipped_surrogate",
            format!("{} new, {} old, {n} advantages", new_log_probs.len(), old_log_probs.len()),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("clip epsilon must lie in (0, 1), got {eps}")));
    }
    let total: f64 = (0..n)
        .map(|i| {
            let r = (new_log_probs[i] - old_log_probs[i]).exp();
            (r * advantages[i]).min(r.clamp(1.0 - eps, 1.0 + eps) * advantages[i])
        })
        .sum();
    Ok(-total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Advantage as the explicit discounted sum of TD residuals up to the
    /// episode end.
    fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |k: usize| if k + 1 < n { v[k + 1] } else { last };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for k in t..n {
                    let live = if d[k] { 0.0 } else { 1.0 };
                    let delta = r[k] + g * next_v(k) * live - v[k];
                    total += (g * l).powi((k - t) as i32) * delta;
                    if d[k] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_single_terminal_step() {
        let (a, ret) = gae(&[2.0], &[0.5], &[true], &[9.0], 0.99, 0.95).unwrap();
        assert_eq!(a, vec![1.5]);
        assert_eq!(ret, vec![2.0]);
    }

    #[test]
    fn gae_undiscounted_is_return_minus_value() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.1, -0.4, 0.2];
        let (a, _) = gae(&r, &v, &[false, false, false, true], &[7.0], 1.0, 1.0).unwrap();
        for t in 0..4 {
            let g: f64 = r[t..].iter().sum();
            assert!((a[t] - (g - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
            let last = rng.random_range(-1.0..1.0);
            let (a, _) = gae(&r, &v, &d, &[last], 0.97, 0.9).unwrap();
            let b = brute_gae(&r, &v, &d, last, 0.97, 0.9);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gae_interleaved_envs_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (e, t) = (3, 7);
        let r: Vec<f64> = (0..e * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..e * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..e * t).map(|_| rng.random_bool(0.3)).collect();
        let last = [0.1, 0.2, 0.3];
        let (a, _) = gae(&r, &v, &d, &last, 0.99, 0.95).unwrap();
        for env in 0..e {
            let pick = |x: &[f64]| (0..t).map(|s| x[s * e + env]).collect::<Vec<_>>();
            let dd: Vec<bool> = (0..t).map(|s| d[s * e + env]).collect();
            let b = brute_gae(&pick(&r), &pick(&v), &dd, last[env], 0.99, 0.95);
            for (x, y) in pick(&a).iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn surrogate_cases() {
        let adv = [0.5, -1.0, 2.0];
        let lp = [-1.0, -2.0, -0.5];
        let s = clipped_surrogate(&lp, &lp, &adv, 0.2).unwrap();
        assert!((s + 0.5).abs() < 1e-15);
        let up = clipped_surrogate(&[1.5f64.ln()], &[0.0], &[1.0], 0.2).unwrap();
        assert!((up + 1.2).abs() < 1e-12);
        let down = clipped_surrogate(&[0.5f64.ln()], &[0.0], &[-1.0], 0.2).unwrap();
        assert!((down - 0.8).abs() < 1e-12);
        assert!(clipped_surrogate(&[0.0], &[0.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn sampling_follows_the_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = [0.0, 1.0f64.ln() + 1.0, -1.0];
        let p: Vec<f64> = log_softmax(&logits).iter().map(|l| l.exp()).collect();
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            let (k, lp) = sample_categorical(&logits, &mut rng).unwrap();
            assert!((lp.exp() - p[k]).abs() < 1e-12);
            counts[k] += 1;
        }
        for k in 0..3 {
            assert!((counts[k] as f64 / n as f64 - p[k]).abs() < 0.02);
        }
        assert!(sample_categorical(&[f64::NAN, 0.0], &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn normalized_advantages(v in proptest::collection::vec(-100.0f64..100.0, 2..200)) {
            let mut a = v.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = v.iter().map(|x| (x - v[0]).abs()).fold(0.0, f64::max);
            if spread > 1e-6 {
                let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
        }
    }
}
