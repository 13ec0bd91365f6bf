//! Brute-force ground truth for small instances.
//!
//! The full mask space is the product of the per-group index sets, so
//! `Φ(π) = Σ_m p(m | π) · f̄(m ⊙ w)` and its gradient
//! `∇Φ(π) = Σ_m f̄(m ⊙ w) · p(m | π) · ∇log p(m | π)` can be summed exactly
//! once the space has at most [`MAX_FULL_MASKS`] members. The same table
//! gives the exact second moments of every estimator, hence exact variance
//! traces and the trace-minimising tracker value `δ*`.
//!
//! The Monte Carlo side draws independent `(mask, minibatch)` pairs from
//! per-sample random substreams; all three estimators are evaluated on the
//! same draws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{enumerate_index_sets, NMMask, SparsityPattern};
use crate::par::{pairwise_sum, pairwise_vec_sum, Exec, REDUCE_CHUNK};
use crate::pge::{update_tracker, EstimatorKind, SmoothingTracker};
use crate::rng::{substream, Domain};
use crate::sampling::{group_mask_prob, group_score, sample_mask, GroupLogits};
use crate::tasks::ToyTask;
use rand::Rng;

/// Largest full mask space that is enumerated.
pub const MAX_FULL_MASKS: u64 = 1_000_000;

/// Fewest samples behind any reported statistic.
pub const MIN_STATS_SAMPLES: usize = 1000;

/// `Φ(π)` and `∇Φ(π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactObjective {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// The product mask space with per-group probabilities and scores cached.
///
/// Masks are indexed in mixed radix with group 0 as the most significant
/// digit, and each group's digit runs over its index sets in lexicographic
/// bit order, so index order is lexicographic order of the full bit vectors.
#[derive(Debug, Clone)]
pub struct MaskSpace {
    pattern: SparsityPattern,
    groups: usize,
    sets: Vec<Vec<usize>>,
    probs: Vec<Vec<f64>>,
    scores: Vec<Vec<Vec<f64>>>,
    total: usize,
}

impl MaskSpace {
    pub fn new(logits: &GroupLogits) -> Result<Self> {
        let pattern = logits.pattern();
        let groups = logits.group_count();
        let per_group = pattern.combinations();
        let total = u32::try_from(groups)
            .ok()
            .and_then(|g| per_group.checked_pow(g))
            .filter(|&t| t <= MAX_FULL_MASKS)
            .ok_or_else(|| {
                Error::capacity(format!(
                    "{per_group}^{groups} full masks exceed the enumeration bound {MAX_FULL_MASKS}"
                ))
            })? as usize;
        let sets = enumerate_index_sets(pattern)?;
        let mut probs = Vec::with_capacity(groups);
        let mut scores = Vec::with_capacity(groups);
        for g in logits.groups() {
            let mut gp = Vec::with_capacity(sets.len());
            let mut gs = Vec::with_capacity(sets.len());
            for set in &sets {
                let bits = set_bits(set, pattern.m());
                gp.push(group_mask_prob(&bits, g, pattern)?);
                gs.push(group_score(&bits, g, pattern)?);
            }
            probs.push(gp);
            scores.push(gs);
        }
        Ok(Self {
            pattern,
            groups,
            sets,
            probs,
            scores,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn dim(&self) -> usize {
        self.groups * self.pattern.m()
    }

    fn digits(&self, mut index: usize) -> Vec<usize> {
        let radix = self.sets.len();
        let mut digits = vec![0; self.groups];
        for d in digits.iter_mut().rev() {
            *d = index % radix;
            index /= radix;
        }
        digits
    }

    pub fn mask(&self, index: usize) -> NMMask {
        let sets: Vec<Vec<usize>> = self.digits(index).into_iter().map(|d| self.sets[d].clone()).collect();
        NMMask::from_index_sets(&sets, self.pattern).expect("enumerated sets are valid")
    }

    /// `p(m | π) = ∏_i p(m_i | π_i)`.
    pub fn prob(&self, index: usize) -> f64 {
        self.digits(index)
            .into_iter()
            .enumerate()
            .map(|(g, d)| self.probs[g][d])
            .product()
    }

    /// `∇log p(m | π)`, the concatenated group scores.
    pub fn score(&self, index: usize) -> Vec<f64> {
        self.digits(index)
            .into_iter()
            .enumerate()
            .flat_map(|(g, d)| self.scores[g][d].iter().copied())
            .collect()
    }
}

fn set_bits(set: &[usize], m: usize) -> Vec<bool> {
    let mut bits = vec![false; m];
    set.iter().for_each(|&j| bits[j] = true);
    bits
}

/// Per-mask data shared by the exact computations.
struct Table {
    probs: Vec<f64>,
    /// `f(m ⊙ w, ξ)` for every minibatch, row-major by mask.
    losses: Vec<f64>,
    batches: usize,
}

impl Table {
    fn build(space: &MaskSpace, task: &ToyTask, exec: Exec) -> Result<Self> {
        check_task(space.dim(), space.pattern, task)?;
        let batches = task.minibatch_count();
        let rows: Vec<Result<(f64, Vec<f64>)>> = exec.map(space.len(), |i| {
            let mask = space.mask(i);
            let masked = mask.apply(task.weights())?;
            let losses = (0..batches)
                .map(|b| task.eval_masked(&masked, b))
                .collect::<Result<Vec<_>>>()?;
            Ok((space.prob(i), losses))
        });
        let mut probs = Vec::with_capacity(rows.len());
        let mut losses = Vec::with_capacity(rows.len() * batches);
        for row in rows {
            let (p, l) = row?;
            probs.push(p);
            losses.extend(l);
        }
        Ok(Self { probs, losses, batches })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.losses[i * self.batches..(i + 1) * self.batches]
    }

    fn mean_loss(&self, i: usize) -> f64 {
        self.row(i).iter().sum::<f64>() / self.batches as f64
    }
}

fn check_task(d: usize, pattern: SparsityPattern, task: &ToyTask) -> Result<()> {
    if task.dim() != d || task.pattern() != pattern {
        return Err(Error::dim(format!(
            "logits of length {d} ({pattern}) for a task of dimension {} ({})",
            task.dim(),
            task.pattern()
        )));
    }
    Ok(())
}

/// Index-ordered, chunked pairwise sum of `f(i)` over `0..n`.
fn sum_over(exec: Exec, n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let parts = exec.map_chunks(n, REDUCE_CHUNK, |r| pairwise_sum(&r.map(&f).collect::<Vec<_>>()));
    pairwise_sum(&parts)
}

/// Index-ordered, chunked sum of vectors `f(i)` of length `len`.
fn vec_sum_over(exec: Exec, n: usize, len: usize, f: impl Fn(usize) -> Vec<f64> + Sync + Send) -> Vec<f64> {
    let parts = exec.map_chunks(n, REDUCE_CHUNK, |r| {
        let items: Vec<Vec<f64>> = r.map(&f).collect();
        pairwise_vec_sum(&items, len)
    });
    pairwise_vec_sum(&parts, len)
}

/// `Φ(π) = Σ_m p(m | π) · f̄(m ⊙ w)`.
pub fn exact_phi(logits: &GroupLogits, task: &ToyTask) -> Result<f64> {
    exact_phi_with(logits, task, Exec::default())
}

pub fn exact_phi_with(logits: &GroupLogits, task: &ToyTask, exec: Exec) -> Result<f64> {
    let space = MaskSpace::new(logits)?;
    let table = Table::build(&space, task, exec)?;
    Ok(sum_over(exec, space.len(), |i| table.probs[i] * table.mean_loss(i)))
}

/// `Φ(π)` together with `∇Φ(π) = Σ_m f̄(m ⊙ w) · p(m | π) · ∇log p(m | π)`.
pub fn exact_grad_phi(logits: &GroupLogits, task: &ToyTask) -> Result<ExactObjective> {
    exact_grad_phi_with(logits, task, Exec::default())
}

pub fn exact_grad_phi_with(logits: &GroupLogits, task: &ToyTask, exec: Exec) -> Result<ExactObjective> {
    let space = MaskSpace::new(logits)?;
    let table = Table::build(&space, task, exec)?;
    let value = sum_over(exec, space.len(), |i| table.probs[i] * table.mean_loss(i));
    let gradient = vec_sum_over(exec, space.len(), space.dim(), |i| {
        let w = table.probs[i] * table.mean_loss(i);
        space.score(i).into_iter().map(|s| w * s).collect()
    });
    Ok(ExactObjective { value, gradient })
}

/// `∂Φ/∂π_k` by central differences of [`exact_phi`].
pub fn finite_difference_grad_phi(logits: &GroupLogits, task: &ToyTask, step: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(logits.len());
    for k in 0..logits.len() {
        let mut shift = vec![0.0; logits.len()];
        shift[k] = -step;
        let plus = exact_phi(&logits.descend(&shift)?, task)?;
        shift[k] = step;
        let minus = exact_phi(&logits.descend(&shift)?, task)?;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Exact first and second moments of an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub mean: Vec<f64>,
    pub variance_trace: f64,
}

/// Per-mask terms of the exact variance analysis.
struct Weighted {
    /// `p(m) · ‖∇log p(m)‖²`
    weight: Vec<f64>,
    table: Table,
    baseline: Vec<f64>,
    space: MaskSpace,
}

impl Weighted {
    fn build(logits: &GroupLogits, task: &ToyTask, baseline: &NMMask, exec: Exec) -> Result<Self> {
        let space = MaskSpace::new(logits)?;
        if baseline.len() != space.dim() || baseline.pattern() != space.pattern {
            return Err(Error::dim("baseline mask does not match the logits"));
        }
        let table = Table::build(&space, task, exec)?;
        let masked = baseline.apply(task.weights())?;
        let baseline_losses = (0..table.batches)
            .map(|b| task.eval_masked(&masked, b))
            .collect::<Result<Vec<_>>>()?;
        let weight = exec.map(space.len(), |i| {
            table.probs[i] * space.score(i).iter().map(|s| s * s).sum::<f64>()
        });
        Ok(Self {
            weight,
            table,
            baseline: baseline_losses,
            space,
        })
    }

    /// `E_ξ[w(m, ξ)]` and `E_ξ[w(m, ξ)²]` for the estimator scalar `w`.
    fn scalar_moments(&self, kind: EstimatorKind, i: usize, delta: f64) -> (f64, f64) {
        let row = self.table.row(i);
        let (mut s1, mut s2) = (0.0, 0.0);
        for (f, f0) in row.iter().zip(&self.baseline) {
            let w = kind.weight(*f, *f0, delta);
            s1 += w;
            s2 += w * w;
        }
        let n = row.len() as f64;
        (s1 / n, s2 / n)
    }
}

/// Exact mean and variance trace of an estimator with a fixed `δ`, the
/// minibatch drawn uniformly and independently of the mask.
pub fn exact_moments(
    kind: EstimatorKind,
    logits: &GroupLogits,
    task: &ToyTask,
    baseline: &NMMask,
    delta: f64,
) -> Result<ExactMoments> {
    let exec = Exec::default();
    let w = Weighted::build(logits, task, baseline, exec)?;
    let n = w.space.len();
    let mean = vec_sum_over(exec, n, w.space.dim(), |i| {
        let scale = w.table.probs[i] * w.scalar_moments(kind, i, delta).0;
        w.space.score(i).into_iter().map(|s| scale * s).collect()
    });
    let second = sum_over(exec, n, |i| w.weight[i] * w.scalar_moments(kind, i, delta).1);
    let variance_trace = second - mean.iter().map(|m| m * m).sum::<f64>();
    Ok(ExactMoments { mean, variance_trace })
}

/// The `δ` minimising the smoothed-residual variance trace:
/// `δ* = Σ_m p‖s‖²(f̄(m) - f̄(m₀)) / Σ_m p‖s‖²` with `s = ∇log p(m | π)`.
/// Zero when every score vanishes.
pub fn optimal_delta(logits: &GroupLogits, task: &ToyTask, baseline: &NMMask) -> Result<f64> {
    let exec = Exec::default();
    let w = Weighted::build(logits, task, baseline, exec)?;
    let n = w.space.len();
    let den = sum_over(exec, n, |i| w.weight[i]);
    if den == 0.0 {
        return Ok(0.0);
    }
    let num = sum_over(exec, n, |i| {
        w.weight[i] * w.scalar_moments(EstimatorKind::Residual, i, 0.0).0
    });
    Ok(num / den)
}

/// `Σ_m p(m | π)` over the full space.
pub fn total_probability(logits: &GroupLogits) -> Result<f64> {
    let space = MaskSpace::new(logits)?;
    Ok(sum_over(Exec::default(), space.len(), |i| space.prob(i)))
}

/// Independent `(mask, minibatch)` draws with the losses and scores needed
/// by every estimator.
#[derive(Debug, Clone)]
pub struct Draws {
    dim: usize,
    losses: Vec<f64>,
    baseline_losses: Vec<f64>,
    scores: Vec<f64>,
}

impl Draws {
    /// Draw `i` uses the substream `(seed, Oracle, i)`: the mask is sampled
    /// first, then the minibatch uniformly.
    pub fn sample(
        logits: &GroupLogits,
        task: &ToyTask,
        baseline: &NMMask,
        samples: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        check_task(logits.len(), logits.pattern(), task)?;
        let dim = logits.len();
        let batches = task.minibatch_count();
        let rows: Vec<Result<(f64, f64, Vec<f64>)>> = exec.map(samples, |i| {
            let mut rng = substream(seed, Domain::Oracle, i as u64, 0);
            let mask = sample_mask(logits, &mut rng);
            let b = rng.random_range(0..batches);
            let score = crate::sampling::grad_log_prob_with(&mask, logits, Exec::Sequential)?;
            Ok((task.eval_loss(&mask, b)?, task.eval_loss(baseline, b)?, score.into_values()))
        });
        let mut draws = Self {
            dim,
            losses: Vec::with_capacity(samples),
            baseline_losses: Vec::with_capacity(samples),
            scores: Vec::with_capacity(samples * dim),
        };
        for row in rows {
            let (f, f0, s) = row?;
            draws.losses.push(f);
            draws.baseline_losses.push(f0);
            draws.scores.extend(s);
        }
        Ok(draws)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Mean residual `f - f₀` over the draws.
    pub fn mean_residual(&self) -> f64 {
        let r: Vec<f64> = self.losses.iter().zip(&self.baseline_losses).map(|(f, f0)| f - f0).collect();
        pairwise_sum(&r) / r.len() as f64
    }

    fn estimate(&self, kind: EstimatorKind, delta: f64, i: usize) -> impl Iterator<Item = f64> + '_ {
        let w = kind.weight(self.losses[i], self.baseline_losses[i], delta);
        self.scores[i * self.dim..(i + 1) * self.dim].iter().map(move |s| w * s)
    }

    /// Sample mean, per-coordinate standard errors and variance trace of
    /// one estimator.
    pub fn stats(&self, kind: EstimatorKind, delta: f64) -> Result<EstimatorStats> {
        self.stats_with(kind, delta, Exec::default())
    }

    pub fn stats_with(&self, kind: EstimatorKind, delta: f64, exec: Exec) -> Result<EstimatorStats> {
        let n = self.len();
        if n < MIN_STATS_SAMPLES {
            return Err(Error::invalid(format!(
                "{n} samples; statistics need at least {MIN_STATS_SAMPLES}"
            )));
        }
        let d = self.dim;
        let nf = n as f64;
        let mean: Vec<f64> = vec_sum_over(exec, n, d, |i| self.estimate(kind, delta, i).collect())
            .into_iter()
            .map(|s| s / nf)
            .collect();
        let centred = |i: usize| -> Vec<f64> {
            self.estimate(kind, delta, i).zip(&mean).map(|(g, m)| (g - m) * (g - m)).collect()
        };
        let sq = vec_sum_over(exec, n, d, centred);
        let variance: Vec<f64> = sq.iter().map(|s| s / (nf - 1.0)).collect();
        let standard_error = variance.iter().map(|v| (v / nf).sqrt()).collect();
        let variance_trace = variance.iter().sum();

        // ‖g_i - ḡ‖² per draw; its spread gives the error of the trace.
        let q = |i: usize| centred(i).iter().sum::<f64>();
        let q_mean = sum_over(exec, n, q) / nf;
        let q_var = sum_over(exec, n, |i| (q(i) - q_mean).powi(2)) / (nf - 1.0);
        Ok(EstimatorStats {
            kind,
            sample_count: n,
            delta,
            mean,
            standard_error,
            variance_trace,
            variance_trace_se: (q_var / nf).sqrt() * nf / (nf - 1.0),
        })
    }
}

/// Monte Carlo summary of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub kind: EstimatorKind,
    pub sample_count: usize,
    pub delta: f64,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Sum of the per-coordinate sample variances.
    pub variance_trace: f64,
    /// Standard error of `variance_trace`.
    pub variance_trace_se: f64,
}

impl EstimatorStats {
    /// `max_k |mean_k - exact_k| / SE_k`. Coordinates with zero standard
    /// error count as zero when they agree to 1e-12 and as infinite otherwise.
    pub fn max_abs_z(&self, exact: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.standard_error)
            .zip(exact)
            .map(|((m, se), e)| {
                let diff = (m - e).abs();
                if *se > 0.0 {
                    diff / se
                } else if diff <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn report(&self, exact: &[f64]) -> OracleReport {
        OracleReport {
            kind: self.kind,
            samples: self.sample_count,
            variance_trace: self.variance_trace,
            max_abs_z: self.max_abs_z(exact),
        }
    }
}

/// One line of an oracle report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub kind: EstimatorKind,
    pub samples: usize,
    pub variance_trace: f64,
    /// `max |mean - exact| / SE` over coordinates.
    pub max_abs_z: f64,
}

/// Draws `samples` pairs with `seed` and summarises one estimator.
pub fn estimator_stats(
    kind: EstimatorKind,
    logits: &GroupLogits,
    task: &ToyTask,
    baseline: &NMMask,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<EstimatorStats> {
    Draws::sample(logits, task, baseline, samples, seed, Exec::default())?.stats(kind, delta)
}

/// Runs the tracker for `steps` updates with the logits held fixed and
/// returns the final `δ`.
pub fn converge_tracker(
    logits: &GroupLogits,
    task: &ToyTask,
    baseline: &NMMask,
    alpha: f64,
    steps: u64,
    seed: u64,
) -> Result<f64> {
    let mut tracker = SmoothingTracker::new(alpha)?;
    let batches = task.minibatch_count();
    for t in 0..steps {
        let mut rng = substream(seed, Domain::Tracker, t, 0);
        let mask = sample_mask(logits, &mut rng);
        let b = rng.random_range(0..batches);
        tracker = update_tracker(tracker, task.eval_loss(&mask, b)? - task.eval_loss(baseline, b)?);
    }
    Ok(tracker.delta)
}
