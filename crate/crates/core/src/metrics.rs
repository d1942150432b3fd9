//! Per-update and per-episode records, CSV persistence and summary statistics.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        })
    }
}

/// One line of a metrics file. `index` is the update number for training
/// rows and the episode number for evaluation rows; per-frame quantities
/// are averaged over the frames the row covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: Phase,
    pub agent: String,
    pub seed: u64,
    pub index: usize,
    pub mean_reward: f64,
    pub mean_utility: f64,
    pub air_overhead_ms: f64,
    pub ric_ms: f64,
    pub hit_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub shield_fallback_count: u64,
    pub overshoot_ms: f64,
}

/// Aggregated shield interventions over the frames of one update or episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShieldRow {
    pub phase: Phase,
    pub index: usize,
    pub frames: u64,
    pub interventions: u64,
    pub dropped_individual: u64,
    pub dropped_budget: u64,
    pub fallbacks: u64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean, sample standard deviation, standard error and 95th percentile.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub se: f64,
    pub p95: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Stats {
        let n = xs.len();
        if n == 0 {
            return Stats {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                se: f64::NAN,
                p95: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stats {
            n,
            mean,
            std,
            se: std / (n as f64).sqrt(),
            p95: percentile(xs, 0.95),
        }
    }

    /// `mean ± se` intervals do not intersect.
    pub fn separated_from(&self, other: &Stats) -> bool {
        self.mean - self.se > other.mean + other.se || other.mean - other.se > self.mean + self.se
    }
}

/// Linear interpolation between closest ranks.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Per-metric statistics of a set of evaluation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub reward: Stats,
    pub utility: Stats,
    pub air_overhead_ms: Stats,
    pub ric_ms: Stats,
    pub hit_rate: Stats,
    pub overshoot_ms: Stats,
}

impl EvalSummary {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> EvalSummary {
        let rows: Vec<&MetricsRow> = rows.into_iter().filter(|r| r.phase == Phase::Eval).collect();
        let col = |f: fn(&MetricsRow) -> f64| Stats::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        EvalSummary {
            episodes: rows.len(),
            reward: col(|r| r.mean_reward),
            utility: col(|r| r.mean_utility),
            air_overhead_ms: col(|r| r.air_overhead_ms),
            ric_ms: col(|r| r.ric_ms),
            hit_rate: col(|r| r.hit_rate),
            overshoot_ms: col(|r| r.overshoot_ms),
        }
    }
}
