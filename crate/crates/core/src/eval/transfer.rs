use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{evaluate, EpisodeRecord, Summary};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::render::DomainAppearance;
use crate::track::Track;

/// A trained policy and the appearance it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub train_domain: String,
    pub seed: u64,
    pub policy: Policy,
}

/// Aggregate over every model trained on `train` and evaluated on `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub train: String,
    pub eval: String,
    pub completion_rate: f64,
    pub mean_progress: f64,
    pub mean_speed: f64,
    pub episodes: usize,
    pub off_track_count: usize,
    pub crash_count: usize,
}

/// One model's share of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub train: String,
    pub eval: String,
    pub seed: u64,
    pub completion_rate: f64,
    pub mean_progress: f64,
    pub mean_speed: f64,
    pub episodes: usize,
    pub off_track_count: usize,
    pub crash_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferReport {
    pub cells: Vec<CellMetrics>,
    pub per_seed: Vec<SeedMetrics>,
}

const CSV_HEADER: &str = "train,eval,seed,completion_rate,mean_progress,mean_speed,episodes,off_track_count,crash_count";

impl TransferReport {
    pub fn cell(&self, train: &str, eval: &str) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.train == train && c.eval == eval)
    }

    pub fn seeds(&self, train: &str, eval: &str) -> impl Iterator<Item = &SeedMetrics> {
        let (t, e) = (train.to_string(), eval.to_string());
        self.per_seed.iter().filter(move |s| s.train == t && s.eval == e)
    }

    /// Aggregate rows carry an empty `seed`; per-seed rows follow them.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},,{:?},{:?},{:?},{},{},{}",
                c.train, c.eval, c.completion_rate, c.mean_progress, c.mean_speed, c.episodes, c.off_track_count, c.crash_count
            );
        }
        for p in &self.per_seed {
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{:?},{},{},{}",
                p.train,
                p.eval,
                p.seed,
                p.completion_rate,
                p.mean_progress,
                p.mean_speed,
                p.episodes,
                p.off_track_count,
                p.crash_count
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("transfer CSV header mismatch".into()));
        }
        let mut report = Self::default();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::Config(format!("transfer CSV row {}: {line:?}", k + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad());
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let (rate, prog, speed) = (float(f[3])?, float(f[4])?, float(f[5])?);
            let (episodes, off, crash) = (int(f[6])?, int(f[7])?, int(f[8])?);
            if f[2].is_empty() {
                report.cells.push(CellMetrics {
                    train: f[0].into(),
                    eval: f[1].into(),
                    completion_rate: rate,
                    mean_progress: prog,
                    mean_speed: speed,
                    episodes,
                    off_track_count: off,
                    crash_count: crash,
                });
            } else {
                report.per_seed.push(SeedMetrics {
                    train: f[0].into(),
                    eval: f[1].into(),
                    seed: f[2].parse().map_err(|_| bad())?,
                    completion_rate: rate,
                    mean_progress: prog,
                    mean_speed: speed,
                    episodes,
                    off_track_count: off,
                    crash_count: crash,
                });
            }
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Completion-rate grid, train domains down, eval domains across.
    pub fn table(&self) -> String {
        let mut trains: Vec<&str> = Vec::new();
        let mut evals: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !trains.contains(&c.train.as_str()) {
                trains.push(&c.train);
            }
            if !evals.contains(&c.eval.as_str()) {
                evals.push(&c.eval);
            }
        }
        let width = evals.iter().map(|e| e.len()).max().unwrap_or(0).max(8);
        let tw = trains.iter().map(|t| t.len()).max().unwrap_or(0).max(11);
        let mut s = format!("{:<tw$}", "train\\eval");
        for e in &evals {
            let _ = write!(s, "  {e:>width$}");
        }
        s.push('\n');
        for t in &trains {
            let _ = write!(s, "{t:<tw$}");
            for e in &evals {
                match self.cell(t, e) {
                    Some(c) => {
                        let _ = write!(s, "  {:>width$}", format!("{:.0}%", 100.0 * c.completion_rate));
                    }
                    None => {
                        let _ = write!(s, "  {:>width$}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

fn seed_metrics(train: &str, eval: &str, seed: u64, s: &Summary) -> SeedMetrics {
    SeedMetrics {
        train: train.into(),
        eval: eval.into(),
        seed,
        completion_rate: s.completion_rate,
        mean_progress: s.mean_progress,
        mean_speed: s.mean_speed,
        episodes: s.episodes,
        off_track_count: s.off_track_count,
        crash_count: s.crash_count,
    }
}

/// Evaluates every model on every appearance. Cell entries pool the
/// episodes of all models sharing a training appearance.
pub fn transfer_matrix(
    models: &[TrainedModel],
    eval_domains: &[DomainAppearance],
    track: Arc<Track>,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<TransferReport> {
    if models.is_empty() {
        return Err(Error::Config("transfer matrix needs at least one trained model".into()));
    }
    if eval_domains.len() < 2 {
        return Err(Error::Config("transfer matrix needs at least two evaluation appearances".into()));
    }
    let mut trains: Vec<&str> = Vec::new();
    for m in models {
        if !trains.contains(&m.train_domain.as_str()) {
            trains.push(&m.train_domain);
        }
    }
    let mut report = TransferReport::default();
    for train in trains {
        for domain in eval_domains {
            let mut pooled: Vec<EpisodeRecord> = Vec::new();
            for m in models.iter().filter(|m| m.train_domain == train) {
                let e = evaluate(&m.policy, track.clone(), domain, config, episodes, seed)?;
                report.per_seed.push(seed_metrics(train, &domain.name, m.seed, &e.summary));
                pooled.extend(e.episodes);
            }
            let s = Summary::of(&pooled);
            report.cells.push(CellMetrics {
                train: train.into(),
                eval: domain.name.clone(),
                completion_rate: s.completion_rate,
                mean_progress: s.mean_progress,
                mean_speed: s.mean_speed,
                episodes: s.episodes,
                off_track_count: s.off_track_count,
                crash_count: s.crash_count,
            });
        }
    }
    Ok(report)
}
