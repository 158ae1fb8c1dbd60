//! Per-iteration training records and the line-delimited metrics stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training iteration's observables.
///
/// Wall-clock time is kept out of `metrics.jsonl` (it goes to the timing
/// sidecar instead) so reruns with the same seed produce byte-identical
/// metrics files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub mean_outcome_reward: f64,
    pub success_rate: f64,
    pub mean_bonus: f64,
    pub max_bonus: f64,
    pub retained_fraction: f64,
    pub gamma: f64,
    pub clip_fraction: f64,
    pub exact_kl: f64,
    pub cfn_loss: f64,
    pub distinct_states: u64,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.mean_outcome_reward,
            self.success_rate,
            self.mean_bonus,
            self.max_bonus,
            self.retained_fraction,
            self.gamma,
            self.clip_fraction,
            self.exact_kl,
            self.cfn_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Appends records to `metrics.jsonl` and wall-clock entries to
/// `timings.jsonl`, enforcing finiteness and strictly increasing iterations.
pub struct MetricsWriter {
    metrics: BufWriter<File>,
    timings: BufWriter<File>,
    last_iteration: Option<u64>,
}

impl MetricsWriter {
    pub fn create(run_dir: &Path) -> Result<Self> {
        let metrics_path = run_dir.join("metrics.jsonl");
        let timings_path = run_dir.join("timings.jsonl");
        let metrics = File::create(&metrics_path)
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        let timings = File::create(&timings_path)
            .map_err(|e| Error::io(timings_path.display().to_string(), e))?;
        Ok(MetricsWriter {
            metrics: BufWriter::new(metrics),
            timings: BufWriter::new(timings),
            last_iteration: None,
        })
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<()> {
        if !record.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite metrics at iteration {}",
                record.iteration
            )));
        }
        if let Some(last) = self.last_iteration {
            if record.iteration <= last {
                return Err(Error::usage("iterations must be strictly increasing"));
            }
        }
        self.last_iteration = Some(record.iteration);
        let line = serde_json::to_string(record)?;
        writeln!(self.metrics, "{line}").map_err(|e| Error::io("metrics.jsonl", e))?;
        writeln!(
            self.timings,
            "{{\"iteration\":{},\"wall_clock_ms\":{:.3}}}",
            record.iteration, record.wall_clock_ms
        )
        .map_err(|e| Error::io("timings.jsonl", e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics
            .flush()
            .map_err(|e| Error::io("metrics.jsonl", e))?;
        self.timings
            .flush()
            .map_err(|e| Error::io("timings.jsonl", e))?;
        Ok(())
    }
}

/// Reads a metrics stream back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
