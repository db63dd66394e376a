use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub slot: usize,
    pub round: usize,
    pub objective: f64,
    pub total_energy: f64,
    pub max_delay: f64,
    pub reward: f64,
    pub total_iterations: usize,
    pub successes: usize,
    pub mean_blur: f64,
    pub global_loss: f64,
}

pub const CSV_HEADER: [&str; 11] = [
    "episode",
    "slot",
    "round",
    "objective",
    "total_energy",
    "max_delay",
    "reward",
    "total_iterations",
    "successes",
    "mean_blur",
    "global_loss",
];

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        [self.objective, self.total_energy, self.max_delay, self.reward, self.mean_blur, self.global_loss]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Population statistics; all zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Run-level aggregates written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub config_hash: String,
    pub rows: usize,
    pub empty_rounds: usize,
    pub objective: Stats,
    pub reward: Stats,
    /// Mean reward over the last ten episodes (or all, if fewer).
    pub final_reward: f64,
    pub final_global_loss: f64,
    pub sac_updates: u64,
}

impl Summary {
    pub fn new(
        mode: &str,
        config_hash: String,
        rows: &[MetricsRow],
        slots: usize,
        empty_rounds: usize,
        sac_updates: u64,
    ) -> Self {
        let objective: Vec<f64> = rows.iter().map(|r| r.objective).collect();
        let reward: Vec<f64> = rows.iter().map(|r| r.reward).collect();
        Self {
            mode: mode.to_string(),
            config_hash,
            rows: rows.len(),
            empty_rounds,
            objective: Stats::of(&objective),
            reward: Stats::of(&reward),
            final_reward: mean_tail_reward(rows, 10 * slots),
            final_global_loss: rows.last().map_or(f64::NAN, |r| r.global_loss),
            sac_updates,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Mean reward of the last `n` rows.
pub fn mean_tail_reward(rows: &[MetricsRow], n: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.reward).sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, reward: f64) -> MetricsRow {
        MetricsRow {
            episode: 1,
            slot: i + 1,
            round: i + 1,
            objective: 0.1 * i as f64,
            total_energy: 0.01,
            max_delay: 0.3,
            reward,
            total_iterations: 18,
            successes: 2,
            mean_blur: 1.05,
            global_loss: 2.5,
        }
    }

    #[test]
    fn csv_round_trip_with_fixed_header() {
        let rows: Vec<_> = (0..3).map(|i| row(i, -1.0 / 3.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv_file(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(read_csv_file(&path).unwrap(), rows);
    }

    #[test]
    fn stats_and_tail() {
        let s = Stats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        let rows: Vec<_> = (0..5).map(|i| row(i, i as f64)).collect();
        assert_eq!(mean_tail_reward(&rows, 2), 3.5);
        assert_eq!(mean_tail_reward(&rows, 50), 2.0);
    }
}
