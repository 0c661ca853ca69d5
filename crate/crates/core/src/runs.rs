//! Multi-run bookkeeping and median aggregation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::inference::{EvalReport, Prf};

pub const DEFAULT_SEEDS: [u64; 5] = [13, 42, 2021, 7, 99];

/// Seeds for `runs` runs: the defaults (then 1000, 1001, ...) when `base` is
/// absent, otherwise `base, base + 1, ...`.
pub fn run_seeds(runs: usize, base: Option<u64>) -> Vec<u64> {
    (0..runs)
        .map(|i| match base {
            Some(b) => b.wrapping_add(i as u64),
            None => DEFAULT_SEEDS.get(i).copied().unwrap_or(1000 + i as u64),
        })
        .collect()
}

/// Statistical median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MedianPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MedianPrf {
    pub fn of(items: &[Prf]) -> Option<Self> {
        let col = |f: fn(&Prf) -> f64| median(&items.iter().map(f).collect::<Vec<_>>());
        Some(MedianPrf {
            precision: col(|p| p.precision)?,
            recall: col(|p| p.recall)?,
            f1: col(|p| p.f1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: Prf,
    pub test: Option<EvalReport>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub median_dev: Option<MedianPrf>,
    pub median_test: Option<MedianPrf>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>, runs: Vec<RunRecord>, secs: f64) -> Self {
        let dev: Vec<Prf> = runs.iter().map(|r| r.dev).collect();
        let test: Vec<Prf> = runs.iter().filter_map(|r| r.test.as_ref().map(|t| t.overall)).collect();
        RunManifest {
            command: command.to_string(),
            config,
            seeds,
            median_dev: MedianPrf::of(&dev),
            median_test: if test.len() == runs.len() { MedianPrf::of(&test) } else { None },
            runs,
            wall_clock_secs: secs,
        }
    }
}
