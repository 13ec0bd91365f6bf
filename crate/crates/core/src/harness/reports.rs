//! The `variance-report`, `memory-report` and `c-sweep` commands.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{BuiltTask, RunConfig};
use crate::mask::{binomial, NMMask, SparsityPattern};
use crate::oracle::{converge_tracker, exact_grad_phi, exact_moments, optimal_delta, Draws, OracleReport};
use crate::par::Exec;
use crate::pge::{init_logits, train, EstimatorKind, TrainConfig};
use crate::rng::{substream, Domain};
use crate::sampling::{group_mask_prob, sample_mask, GroupLogits};
use crate::harness::verify::Z_LIMIT;

pub const ORACLE_FILE: &str = "oracle.jsonl";
pub const VARIANCE_FILE: &str = "variance.json";
pub const CURVES_FILE: &str = "curves.jsonl";
pub const SWEEP_FILE: &str = "c_sweep.jsonl";
pub const MEMORY_FILE: &str = "memory.json";

/// Required ratio of the residual to the vanilla variance trace.
pub const ORDERING_MARGIN: f64 = 0.95;

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut line = serde_json::to_string(value).map_err(std::io::Error::from)?;
    line.push('\n');
    Ok(line)
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        buf.write_all(json_line(r)?.as_bytes())?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Logits analysed by the oracle reports: the first setting of an instance,
/// otherwise `π₀ = m₀ · C`.
fn oracle_logits(cfg: &RunConfig, built: &BuiltTask, baseline: &NMMask) -> Result<(String, GroupLogits)> {
    match built.instance.as_ref().and_then(|i| i.logits.first()) {
        Some((name, logits)) => Ok((name.clone(), logits.clone())),
        None => Ok(("initial".into(), init_logits(baseline, cfg.logits_magnitude)?)),
    }
}

/// One estimator's row in the variance table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub kind: EstimatorKind,
    pub variance_trace: f64,
    pub variance_trace_se: f64,
    pub exact_variance_trace: f64,
    pub max_abs_z: f64,
    pub unbiased: bool,
}

/// Monte Carlo variance of the smoothed-residual estimator at one `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaProbe {
    pub delta: f64,
    pub variance_trace: f64,
    pub variance_trace_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub logits: String,
    pub samples: usize,
    pub tracker_delta: f64,
    pub optimal_delta: f64,
    pub estimators: Vec<EstimatorRow>,
    /// `Var[g_sr] <= Var[g_r]` and `Var[g_r] <= 0.95 · Var[g_p]`.
    pub ordering_passed: bool,
    /// Probes at `δ* - ε`, `δ*`, `δ* + ε`.
    pub delta_probes: Vec<DeltaProbe>,
    pub optimal_delta_passed: bool,
}

impl VarianceReport {
    pub fn passed(&self) -> bool {
        self.ordering_passed && self.optimal_delta_passed && self.estimators.iter().all(|e| e.unbiased)
    }

    pub fn row(&self, kind: EstimatorKind) -> &EstimatorRow {
        self.estimators.iter().find(|r| r.kind == kind).expect("every kind is reported")
    }
}

/// Block average of training residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub kind: EstimatorKind,
    /// Last step of the block.
    pub step: u64,
    pub mean_residual: f64,
}

/// The probe offset around `δ*`.
pub fn probe_epsilon(delta_star: f64) -> f64 {
    if delta_star == 0.0 {
        0.1
    } else {
        0.5 * delta_star.abs()
    }
}

/// Whether `V(δ*)` is within [`Z_LIMIT`] of its standard error of the
/// smaller neighbouring probe.
pub fn optimal_delta_holds(probes: &[DeltaProbe; 3]) -> bool {
    let [lo, mid, hi] = probes;
    mid.variance_trace <= lo.variance_trace.min(hi.variance_trace) + Z_LIMIT * mid.variance_trace_se
}

/// Estimator variances on the oracle logits, the optimal-`δ` probes and a
/// training residual curve per estimator. Writes [`ORACLE_FILE`],
/// [`VARIANCE_FILE`] and, for a positive iteration count, [`CURVES_FILE`].
pub fn cmd_variance_report(cfg: &RunConfig) -> Result<VarianceReport> {
    let built = cfg.build_task()?;
    let baseline = cfg.baseline_mask(&built)?;
    let task = &built.task;
    let (name, logits) = oracle_logits(cfg, &built, &baseline)?;

    let exact = exact_grad_phi(&logits, task)?.gradient;
    let tracker_delta = converge_tracker(&logits, task, &baseline, cfg.alpha, cfg.tracker_steps, cfg.seed)?;
    let delta_star = optimal_delta(&logits, task, &baseline)?;
    let draws = Draws::sample(&logits, task, &baseline, cfg.stats_samples, cfg.seed, Exec::default())?;

    let mut oracle = Vec::new();
    let mut rows = Vec::new();
    for kind in EstimatorKind::ALL {
        let stats = draws.stats(kind, tracker_delta)?;
        let report: OracleReport = stats.report(&exact);
        rows.push(EstimatorRow {
            kind,
            variance_trace: stats.variance_trace,
            variance_trace_se: stats.variance_trace_se,
            exact_variance_trace: exact_moments(kind, &logits, task, &baseline, tracker_delta)?.variance_trace,
            max_abs_z: report.max_abs_z,
            unbiased: report.max_abs_z <= Z_LIMIT,
        });
        oracle.push(report);
    }
    let trace = |k: EstimatorKind| rows.iter().find(|r| r.kind == k).map(|r| r.variance_trace).unwrap_or(f64::NAN);
    let ordering_passed = trace(EstimatorKind::SmoothedResidual) <= trace(EstimatorKind::Residual)
        && trace(EstimatorKind::Residual) <= ORDERING_MARGIN * trace(EstimatorKind::Vanilla);

    let eps = probe_epsilon(delta_star);
    let mut probes = [DeltaProbe { delta: 0.0, variance_trace: 0.0, variance_trace_se: 0.0 }; 3];
    for (probe, delta) in probes.iter_mut().zip([delta_star - eps, delta_star, delta_star + eps]) {
        let s = draws.stats(EstimatorKind::SmoothedResidual, delta)?;
        *probe = DeltaProbe {
            delta,
            variance_trace: s.variance_trace,
            variance_trace_se: s.variance_trace_se,
        };
    }

    let report = VarianceReport {
        logits: name,
        samples: draws.len(),
        tracker_delta,
        optimal_delta: delta_star,
        estimators: rows,
        ordering_passed,
        optimal_delta_passed: optimal_delta_holds(&probes),
        delta_probes: probes.to_vec(),
    };

    fs::create_dir_all(&cfg.out_dir)?;
    write_lines(&cfg.out_dir.join(ORACLE_FILE), &oracle)?;
    fs::write(cfg.out_dir.join(VARIANCE_FILE), json_line(&report)?)?;
    if cfg.iterations > 0 {
        let mut curves = Vec::new();
        for kind in EstimatorKind::ALL {
            let config = TrainConfig {
                kind,
                ..cfg.train_config(baseline.clone())
            };
            let (_, records) = train(task, &config)?;
            curves.extend(downsample(kind, &records, cfg.curve_every));
        }
        write_lines(&cfg.out_dir.join(CURVES_FILE), &curves)?;
    }
    Ok(report)
}

/// Means of consecutive blocks of `every` residuals; a short final block
/// is kept.
pub fn downsample(kind: EstimatorKind, records: &[crate::pge::StepRecord], every: u64) -> Vec<CurvePoint> {
    records
        .chunks(every.max(1) as usize)
        .map(|block| CurvePoint {
            kind,
            step: block.last().map_or(0, |r| r.step),
            mean_residual: block.iter().map(|r| r.residual).sum::<f64>() / block.len() as f64,
        })
        .collect()
}

/// Logit storage of per-group categorical logits against one logit per
/// enumerated group mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryReport {
    pub pattern: SparsityPattern,
    pub d: usize,
    pub position_logit_count: u64,
    pub mask_logit_count: u64,
    pub ratio: f64,
}

pub fn cmd_memory_report(pattern: SparsityPattern, d: usize) -> Result<MemoryReport> {
    let groups = pattern.group_count(d)? as u64;
    let per_position = d as u64;
    let per_mask = binomial(pattern.m() as u64, pattern.n() as u64)
        .checked_mul(groups)
        .ok_or_else(|| Error::capacity(format!("mask-space logit count for {pattern}, d = {d} overflows")))?;
    Ok(MemoryReport {
        pattern,
        d,
        position_logit_count: per_position,
        mask_logit_count: per_mask,
        ratio: per_mask as f64 / per_position as f64,
    })
}

/// One initialisation scale of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub samples: usize,
    /// Group draws pooled over all groups.
    pub trials: usize,
    /// Fraction of group draws equal to the baseline group.
    pub match_frequency: f64,
    /// Binomial standard error at the exact probability.
    pub standard_error: f64,
    /// Exact per-group probability of drawing the baseline group.
    pub expected: f64,
    /// Fraction of sampled masks whose mean loss exceeds the baseline's.
    pub worse_fraction: f64,
}

impl SweepRow {
    pub fn z(&self) -> f64 {
        let diff = (self.match_frequency - self.expected).abs();
        if self.standard_error > 0.0 {
            diff / self.standard_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Match frequency is non-decreasing in `C`.
    pub monotone: bool,
    /// Every row within [`Z_LIMIT`] standard errors of its exact value.
    pub matches_expected: bool,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.matches_expected
    }
}

/// Samples `cfg.sweep_samples` masks at `π₀ = m₀ · C` for each `C` and
/// writes one [`SweepRow`] per line to [`SWEEP_FILE`].
///
/// Sample `i` uses the same stream for every `C`, so rows differ only in
/// the logits.
pub fn cmd_c_sweep(cfg: &RunConfig, c_values: &[f64]) -> Result<SweepReport> {
    if c_values.is_empty() || c_values.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("`c_values`: need a non-empty list of finite values".into()));
    }
    if cfg.sweep_samples == 0 {
        return Err(Error::Config("`sweep_samples`: must be positive".into()));
    }
    let built = cfg.build_task()?;
    let baseline = cfg.baseline_mask(&built)?;
    let task = &built.task;
    let pattern = task.pattern();
    let groups = baseline.group_count();
    let baseline_loss = task.mean_loss(&baseline)?;
    let n = cfg.sweep_samples;

    let mut rows = Vec::with_capacity(c_values.len());
    for &c in c_values {
        let logits = init_logits(&baseline, c)?;
        let per_sample = Exec::default().map(n, |i| -> Result<(usize, bool)> {
            let mask = sample_mask(&logits, &mut substream(cfg.seed, Domain::Sweep, i as u64, 0));
            let matches = (0..groups).filter(|&g| mask.group(g) == baseline.group(g)).count();
            Ok((matches, task.mean_loss(&mask)? > baseline_loss))
        });
        let (mut matches, mut worse) = (0usize, 0usize);
        for r in per_sample {
            let (m, w) = r?;
            matches += m;
            worse += w as usize;
        }
        let mut expected = 0.0;
        for g in 0..groups {
            expected += group_mask_prob(baseline.group(g), logits.group(g), pattern)?;
        }
        expected /= groups as f64;
        let trials = n * groups;
        rows.push(SweepRow {
            c,
            samples: n,
            trials,
            match_frequency: matches as f64 / trials as f64,
            standard_error: (expected * (1.0 - expected) / trials as f64).sqrt(),
            expected,
            worse_fraction: worse as f64 / n as f64,
        });
    }
    let mut by_c = rows.clone();
    by_c.sort_by(|a, b| a.c.total_cmp(&b.c));
    let report = SweepReport {
        monotone: by_c.windows(2).all(|w| w[1].match_frequency >= w[0].match_frequency),
        matches_expected: rows.iter().all(|r| r.z() <= Z_LIMIT),
        rows,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_lines(&cfg.out_dir.join(SWEEP_FILE), &report.rows)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_counts() {
        let r = cmd_memory_report(SparsityPattern::new(2, 4).unwrap(), 64).unwrap();
        assert_eq!((r.position_logit_count, r.mask_logit_count, r.ratio), (64, 96, 1.5));
        let r = cmd_memory_report(SparsityPattern::new(4, 8).unwrap(), 64).unwrap();
        assert_eq!((r.position_logit_count, r.mask_logit_count, r.ratio), (64, 560, 8.75));
        let r = cmd_memory_report(SparsityPattern::new(1, 4).unwrap(), 8).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!(cmd_memory_report(SparsityPattern::new(2, 4).unwrap(), 6).is_err());
    }

    #[test]
    fn probes() {
        assert_eq!(probe_epsilon(0.0), 0.1);
        assert_eq!(probe_epsilon(-0.4), 0.2);
        let p = |v: f64, se: f64| DeltaProbe { delta: 0.0, variance_trace: v, variance_trace_se: se };
        assert!(optimal_delta_holds(&[p(2.0, 0.1), p(1.0, 0.1), p(3.0, 0.1)]));
        assert!(optimal_delta_holds(&[p(1.0, 0.1), p(1.2, 0.1), p(3.0, 0.1)]));
        assert!(!optimal_delta_holds(&[p(1.0, 0.1), p(1.5, 0.1), p(3.0, 0.1)]));
    }

    #[test]
    fn downsample_blocks() {
        use crate::pge::StepRecord;
        let records: Vec<StepRecord> = (0..5)
            .map(|t| StepRecord {
                step: t,
                minibatch_id: 0,
                loss: 0.0,
                baseline_loss: 0.0,
                residual: t as f64,
                delta: 0.0,
            })
            .collect();
        let c = downsample(EstimatorKind::Vanilla, &records, 2);
        assert_eq!(c.iter().map(|p| (p.step, p.mean_residual)).collect::<Vec<_>>(), vec![(1, 0.5), (3, 2.5), (4, 4.0)]);
    }
}
