//! The `train` command.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::pge::{extract_final_mask, Checkpoint, Trainer, TrainerState};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ABORT_CHECKPOINT_FILE: &str = "checkpoint.abort.bin";
pub const MASK_FILE: &str = "mask.txt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Steps averaged for the summary residual.
pub const TAIL_WINDOW: usize = 1000;

/// Final line of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub final_delta: f64,
    /// Mean residual over the last [`TAIL_WINDOW`] steps.
    pub tail_mean_residual: f64,
    pub final_mean_loss: f64,
    pub baseline_mean_loss: f64,
    /// Whether the extracted mask equals the planted one; absent when the
    /// task has no planted mask.
    pub recovered: Option<bool>,
}

fn write_checkpoint(path: &Path, state: &TrainerState) -> Result<()> {
    fs::write(path, Checkpoint::from_state(state).to_bytes())?;
    Ok(())
}

/// Runs the configured training loop and writes its outputs under
/// `cfg.out_dir`. With zero iterations only the initial checkpoint is
/// written. A numeric failure saves the last good state to
/// [`ABORT_CHECKPOINT_FILE`] before the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<Option<TrainSummary>> {
    let built = cfg.build_task()?;
    let baseline = cfg.baseline_mask(&built)?;
    let task = &built.task;
    let mut trainer = Trainer::new(task, &cfg.train_config(baseline.clone()))?;
    let out: PathBuf = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    if cfg.iterations == 0 {
        write_checkpoint(&out.join(CHECKPOINT_FILE), trainer.state())?;
        return Ok(None);
    }

    let mut records = BufWriter::new(File::create(out.join(RECORDS_FILE))?);
    let mut tail = std::collections::VecDeque::with_capacity(TAIL_WINDOW);
    for _ in 0..cfg.iterations {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e @ Error::Numeric(_)) => {
                records.flush()?;
                write_checkpoint(&out.join(ABORT_CHECKPOINT_FILE), trainer.state())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        serde_json::to_writer(&mut records, &record).map_err(std::io::Error::from)?;
        records.write_all(b"\n")?;
        if tail.len() == TAIL_WINDOW {
            tail.pop_front();
        }
        tail.push_back(record.residual);
    }
    records.flush()?;

    let state = trainer.into_state();
    write_checkpoint(&out.join(CHECKPOINT_FILE), &state)?;
    let mask = extract_final_mask(&state.logits);
    fs::write(out.join(MASK_FILE), mask.to_text())?;

    let summary = TrainSummary {
        iterations: state.step,
        final_delta: state.tracker.delta,
        tail_mean_residual: tail.iter().sum::<f64>() / tail.len() as f64,
        final_mean_loss: task.mean_loss(&mask)?,
        baseline_mean_loss: task.mean_loss(&baseline)?,
        recovered: built.planted.as_ref().map(|p| *p == mask),
    };
    let mut line = serde_json::to_string(&summary).map_err(std::io::Error::from)?;
    line.push('\n');
    fs::write(out.join(SUMMARY_FILE), line)?;
    Ok(Some(summary))
}
