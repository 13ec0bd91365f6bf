//! Policy-gradient estimators and the mask-learning loop.
//!
//! Every step samples a mask `m_t` from the current logits, evaluates it and
//! the baseline mask `m₀` on the same minibatch, and moves the logits along
//! `-η · scalar · ∇log p(m_t | π_t)` where the scalar is the loss
//! ([`EstimatorKind::Vanilla`]), the loss residual against `m₀`
//! ([`EstimatorKind::Residual`]) or the residual minus the smoothing tracker
//! `δ` ([`EstimatorKind::SmoothedResidual`]). The tracker is then updated as
//! `δ ← αδ + (1-α)·residual`, after the logits.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{NMMask, SparsityPattern};
use crate::par::Exec;
use crate::rng::{substream, Domain};
use crate::sampling::{grad_log_prob, sample_mask, sample_mask_seeded, GroupLogits, ScoreGradient};
use crate::tasks::{top_n_positions, ToyTask};

/// Default smoothing coefficient α.
pub const DEFAULT_ALPHA: f64 = 0.99;

/// Default logits magnitude C for `π₀ = m₀ · C`.
pub const DEFAULT_LOGITS_MAGNITUDE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `f(m_t ⊙ w, ξ) · ∇log p`
    Vanilla,
    /// `(f(m_t ⊙ w, ξ) - f(m₀ ⊙ w, ξ)) · ∇log p`
    Residual,
    /// `(f(m_t ⊙ w, ξ) - f(m₀ ⊙ w, ξ) - δ) · ∇log p`
    SmoothedResidual,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Vanilla,
        EstimatorKind::Residual,
        EstimatorKind::SmoothedResidual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Vanilla => "vanilla",
            EstimatorKind::Residual => "residual",
            EstimatorKind::SmoothedResidual => "smoothed_residual",
        }
    }

    /// The scalar multiplying the score.
    pub fn weight(&self, loss: f64, baseline_loss: f64, delta: f64) -> f64 {
        match self {
            EstimatorKind::Vanilla => loss,
            EstimatorKind::Residual => loss - baseline_loss,
            EstimatorKind::SmoothedResidual => loss - baseline_loss - delta,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator `{s}`")))
    }
}

/// Exponential moving average of loss residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingTracker {
    pub delta: f64,
    alpha: f64,
}

impl SmoothingTracker {
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_delta(alpha, 0.0)
    }

    pub fn with_delta(alpha: f64, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha = {alpha} must lie in [0, 1)")));
        }
        if !delta.is_finite() {
            return Err(Error::numeric("tracker value must be finite"));
        }
        Ok(Self { delta, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `δ' = α·δ + (1-α)·residual`.
pub fn update_tracker(tracker: SmoothingTracker, residual: f64) -> SmoothingTracker {
    SmoothingTracker {
        delta: tracker.alpha * tracker.delta + (1.0 - tracker.alpha) * residual,
        alpha: tracker.alpha,
    }
}

/// One training step, serialised in field order
/// `step, minibatch_id, loss, baseline_loss, residual, delta`.
///
/// `delta` is the tracker value after this step's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub minibatch_id: usize,
    pub loss: f64,
    pub baseline_loss: f64,
    pub residual: f64,
    pub delta: f64,
}

/// Everything the loop mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub logits: GroupLogits,
    pub tracker: SmoothingTracker,
    pub baseline_mask: NMMask,
    pub step: u64,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl TrainerState {
    /// `π ← π - η·estimate` and advances the step counter. On a non-finite
    /// result the state is left untouched.
    pub fn apply_update(&mut self, estimate: &[f64]) -> Result<()> {
        if let Some(i) = estimate.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient estimate at coordinate {i}, step {}",
                self.step
            )));
        }
        let scaled: Vec<f64> = estimate.iter().map(|g| self.learning_rate * g).collect();
        self.logits = self.logits.descend(&scaled).map_err(|e| match e {
            Error::Numeric(msg) => Error::numeric(format!("{msg} after update at step {}", self.step)),
            other => other,
        })?;
        self.step += 1;
        Ok(())
    }
}

/// `π₀ = m₀ · C`.
pub fn init_logits(baseline: &NMMask, magnitude: f64) -> Result<GroupLogits> {
    if !magnitude.is_finite() {
        return Err(Error::numeric("logits magnitude must be finite"));
    }
    let values = baseline
        .bits()
        .iter()
        .map(|&b| if b { magnitude } else { 0.0 })
        .collect();
    GroupLogits::new(values, baseline.pattern())
}

/// The gradient estimate for one sampled mask.
pub fn estimate(
    kind: EstimatorKind,
    record: &StepRecord,
    score: &ScoreGradient,
    tracker: &SmoothingTracker,
) -> Result<Vec<f64>> {
    if !record.loss.is_finite() || !record.baseline_loss.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite loss at step {} (loss {}, baseline {}, minibatch {})",
            record.step, record.loss, record.baseline_loss, record.minibatch_id
        )));
    }
    let scale = kind.weight(record.loss, record.baseline_loss, tracker.delta);
    Ok(score.values().iter().map(|s| scale * s).collect())
}

/// Per group, the `N` positions with the largest logits (lowest index wins ties).
pub fn extract_final_mask(logits: &GroupLogits) -> NMMask {
    let pattern = logits.pattern();
    let sets: Vec<Vec<usize>> = logits
        .groups()
        .map(|g| top_n_positions(g.iter().copied(), pattern.n()))
        .collect();
    NMMask::from_index_sets(&sets, pattern).expect("top-N positions form a valid mask")
}

/// Draws `k` masks from `rng` and returns the one with the lowest
/// calibration loss (the earliest on ties).
pub fn multi_sample_select<R: Rng + ?Sized>(
    logits: &GroupLogits,
    task: &ToyTask,
    k: usize,
    rng: &mut R,
) -> Result<NMMask> {
    if k == 0 {
        return Err(Error::invalid("multi-sample selection needs k >= 1"));
    }
    let candidates: Vec<NMMask> = (0..k).map(|_| sample_mask(logits, rng)).collect();
    let losses = Exec::default().map(k, |i| task.calibration_loss(&candidates[i]));
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, loss) in losses.into_iter().enumerate() {
        let loss = loss?;
        if loss < best_loss {
            best = i;
            best_loss = loss;
        }
    }
    Ok(candidates.into_iter().nth(best).expect("k >= 1"))
}

/// Cycles over minibatch ids, reshuffling at the start of every epoch.
#[derive(Debug, Clone)]
pub struct MinibatchSchedule {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl MinibatchSchedule {
    pub fn new(minibatches: usize, seed: u64) -> Self {
        Self {
            seed,
            epoch: 0,
            order: (0..minibatches).collect(),
            cursor: minibatches,
        }
        .reshuffled()
    }

    fn reshuffled(mut self) -> Self {
        self.reshuffle();
        self
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order
            .shuffle(&mut substream(self.seed, Domain::Schedule, self.epoch, 0));
        self.cursor = 0;
    }

    pub fn next_id(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let id = self.order[self.cursor];
        self.cursor += 1;
        id
    }
}

/// Settings of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: EstimatorKind,
    pub learning_rate: f64,
    pub alpha: f64,
    pub logits_magnitude: f64,
    pub baseline: NMMask,
    pub seed: u64,
    pub iterations: u64,
    /// Replace `m₀` by the current top-N mask once `δ` drops below this value.
    pub refresh_threshold: Option<f64>,
}

impl TrainConfig {
    pub fn new(kind: EstimatorKind, baseline: NMMask, learning_rate: f64, iterations: u64, seed: u64) -> Self {
        Self {
            kind,
            learning_rate,
            alpha: DEFAULT_ALPHA,
            logits_magnitude: DEFAULT_LOGITS_MAGNITUDE,
            baseline,
            seed,
            iterations,
            refresh_threshold: None,
        }
    }
}

/// Drives the training loop one step at a time.
pub struct Trainer<'a> {
    task: &'a ToyTask,
    kind: EstimatorKind,
    refresh_threshold: Option<f64>,
    state: TrainerState,
    schedule: MinibatchSchedule,
    baseline_cache: Vec<Option<f64>>,
}

impl<'a> Trainer<'a> {
    pub fn new(task: &'a ToyTask, config: &TrainConfig) -> Result<Self> {
        if config.baseline.pattern() != task.pattern() || config.baseline.len() != task.dim() {
            return Err(Error::dim("baseline mask does not match the task"));
        }
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and non-negative",
                config.learning_rate
            )));
        }
        let state = TrainerState {
            logits: init_logits(&config.baseline, config.logits_magnitude)?,
            tracker: SmoothingTracker::new(config.alpha)?,
            baseline_mask: config.baseline.clone(),
            step: 0,
            learning_rate: config.learning_rate,
            rng_seed: config.seed,
        };
        Ok(Self::resume(task, config.kind, config.refresh_threshold, state))
    }

    /// Continues from an existing state.
    pub fn resume(task: &'a ToyTask, kind: EstimatorKind, refresh_threshold: Option<f64>, state: TrainerState) -> Self {
        let mut schedule = MinibatchSchedule::new(task.minibatch_count(), state.rng_seed);
        for _ in 0..state.step {
            schedule.next_id();
        }
        Self {
            task,
            kind,
            refresh_threshold,
            schedule,
            baseline_cache: vec![None; task.minibatch_count()],
            state,
        }
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    /// `f(m₀ ⊙ w, ξ)`, memoised per minibatch; it never depends on the sampled mask.
    fn baseline_loss(&mut self, minibatch: usize) -> Result<f64> {
        if let Some(v) = self.baseline_cache[minibatch] {
            return Ok(v);
        }
        let v = self.task.eval_loss(&self.state.baseline_mask, minibatch)?;
        self.baseline_cache[minibatch] = Some(v);
        Ok(v)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.state.step;
        let minibatch = self.schedule.next_id();
        let mask = sample_mask_seeded(&self.state.logits, self.state.rng_seed, t, Exec::default());
        let loss = self.task.eval_loss(&mask, minibatch)?;
        let baseline_loss = self.baseline_loss(minibatch)?;
        let mut record = StepRecord {
            step: t,
            minibatch_id: minibatch,
            loss,
            baseline_loss,
            residual: loss - baseline_loss,
            delta: self.state.tracker.delta,
        };

        let score = grad_log_prob(&mask, &self.state.logits)?;
        let g = estimate(self.kind, &record, &score, &self.state.tracker)?;
        self.state.apply_update(&g)?;
        self.state.tracker = update_tracker(self.state.tracker, record.residual);
        record.delta = self.state.tracker.delta;

        if let Some(threshold) = self.refresh_threshold {
            if self.state.tracker.delta < threshold {
                self.refresh_baseline();
            }
        }
        Ok(record)
    }

    /// Swaps `m₀` for the current top-N mask and restarts the tracker.
    fn refresh_baseline(&mut self) {
        let candidate = extract_final_mask(&self.state.logits);
        if candidate != self.state.baseline_mask {
            self.state.baseline_mask = candidate;
            self.baseline_cache.iter_mut().for_each(|c| *c = None);
            self.state.tracker.delta = 0.0;
        }
    }
}

/// Runs `config.iterations` steps from `π₀ = m₀ · C`.
pub fn train(task: &ToyTask, config: &TrainConfig) -> Result<(TrainerState, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(task, config)?;
    let mut records = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        records.push(trainer.step()?);
    }
    Ok((trainer.into_state(), records))
}

/// Mean residual over the last `window` records (all of them if fewer).
pub fn tail_mean_residual(records: &[StepRecord], window: usize) -> Option<f64> {
    let tail = &records[records.len().saturating_sub(window)..];
    (!tail.is_empty()).then(|| tail.iter().map(|r| r.residual).sum::<f64>() / tail.len() as f64)
}

/// Writes records as line-delimited JSON.
pub fn write_records<W: Write>(mut out: W, records: &[StepRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "nmsparse-checkpoint 1";

/// Saved trainer state: a text header followed by the logits as
/// little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub pattern: SparsityPattern,
    pub step: u64,
    pub learning_rate: f64,
    pub alpha: f64,
    pub delta: f64,
    pub seed: u64,
    pub logits: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainerState) -> Self {
        Self {
            pattern: state.logits.pattern(),
            step: state.step,
            learning_rate: state.learning_rate,
            alpha: state.tracker.alpha(),
            delta: state.tracker.delta,
            seed: state.rng_seed,
            logits: state.logits.values().to_vec(),
        }
    }

    pub fn logits(&self) -> Result<GroupLogits> {
        GroupLogits::new(self.logits.clone(), self.pattern)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "pattern {}", self.pattern)?;
        writeln!(out, "step {}", self.step)?;
        writeln!(out, "eta {}", self.learning_rate)?;
        writeln!(out, "alpha {}", self.alpha)?;
        writeln!(out, "delta {}", self.delta)?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "logits f64le {}", self.logits.len())?;
        for v in &self.logits {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Parse("truncated checkpoint header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut input)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        fn field<T: FromStr>(line: &str, key: &str) -> Result<T> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("expected checkpoint field `{key}`, got `{line}`")))
        }
        let pattern: SparsityPattern = field(&next_line(&mut input)?, "pattern")?;
        let step = field(&next_line(&mut input)?, "step")?;
        let learning_rate = field(&next_line(&mut input)?, "eta")?;
        let alpha = field(&next_line(&mut input)?, "alpha")?;
        let delta = field(&next_line(&mut input)?, "delta")?;
        let seed = field(&next_line(&mut input)?, "seed")?;
        let count: usize = field(&next_line(&mut input)?, "logits f64le")?;

        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::Parse(format!(
                "checkpoint declares {count} logits but holds {} bytes",
                bytes.len()
            )));
        }
        let logits = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            pattern,
            step,
            learning_rate,
            alpha,
            delta,
            seed,
            logits,
        })
    }
}
