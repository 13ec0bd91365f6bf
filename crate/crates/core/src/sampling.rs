//! Per-group softmax distributions, sequential sampling without replacement,
//! exact mask probabilities and the closed-form score `∇_π log p(m | π)`.
//!
//! A group mask with kept set `K` arises from any of the `N!` draw orders of
//! `K`. Drawing order `σ` has probability
//!
//! ```text
//! P(σ) = ∏_j ψ_σ(j) / (1 - Σ_{a<j} ψ_σ(a))
//! ```
//!
//! and `p(m_i | π_i) = Σ_σ P(σ)`. Each factor is the softmax of the logits
//! still undrawn at step `j`, which is how it is evaluated here (in log space),
//! so `0/0` never arises. The cost is `N!·N` per group, hence the `N <= 6` cap.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::{kept_positions, NMMask, SparsityPattern};
use crate::par::Exec;
use crate::rng::{substream, Domain};

/// Largest `N` for which permutation sums are evaluated.
pub const MAX_PERMUTATION_N: usize = 6;

/// Lower bound applied to a probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

/// Lower bound applied to a renormalisation mass used as a divisor.
pub const MASS_FLOOR: f64 = 1e-12;

/// Group count above which per-group work is split across threads.
const PAR_GROUPS: usize = 256;

/// Flat logits `π` of length `d`, read as `d / M` groups of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLogits {
    values: Vec<f64>,
    pattern: SparsityPattern,
}

impl GroupLogits {
    pub fn new(values: Vec<f64>, pattern: SparsityPattern) -> Result<Self> {
        pattern.group_count(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("logit {i} is not finite")));
        }
        Ok(Self { values, pattern })
    }

    pub fn zeros(d: usize, pattern: SparsityPattern) -> Result<Self> {
        Self::new(vec![0.0; d], pattern)
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.values.len() / self.pattern.m()
    }

    pub fn group(&self, i: usize) -> &[f64] {
        let m = self.pattern.m();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn groups(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.pattern.m())
    }

    /// Returns a copy with `step` subtracted coordinate-wise; fails if any
    /// resulting logit is not finite.
    pub fn descend(&self, step: &[f64]) -> Result<Self> {
        if step.len() != self.values.len() {
            return Err(Error::dim(format!(
                "update of length {} for {} logits",
                step.len(),
                self.values.len()
            )));
        }
        let values: Vec<f64> = self.values.iter().zip(step).map(|(p, s)| p - s).collect();
        Self::new(values, self.pattern)
    }

    fn check_mask(&self, mask: &NMMask) -> Result<()> {
        if mask.len() != self.values.len() || mask.pattern() != self.pattern {
            return Err(Error::dim(format!(
                "mask ({} bits, {}) does not match logits ({} values, {})",
                mask.len(),
                mask.pattern(),
                self.values.len(),
                self.pattern
            )));
        }
        Ok(())
    }
}

/// A probability vector over the `M` positions of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalGroup {
    probs: Vec<f64>,
}

impl CategoricalGroup {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Per-group score `∇_π log p(m | π)`, length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient(pub(crate) Vec<f64>);

impl ScoreGradient {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric("non-finite logit in group"))
    }
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax with max subtraction.
pub fn softmax_group(logits: &[f64]) -> Result<CategoricalGroup> {
    check_finite(logits)?;
    Ok(CategoricalGroup {
        probs: softmax_unchecked(logits),
    })
}

/// Draws `n` distinct positions from one group, returned in draw order.
///
/// Step `j` picks position `k` with probability `ψ_k / (remaining mass)`.
/// The remaining mass is summed over undrawn positions directly; if it has
/// underflowed to zero the pick is uniform over undrawn positions.
pub fn sample_group<R: Rng + ?Sized>(logits: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let probs = softmax_unchecked(logits);
    let mut drawn = vec![false; probs.len()];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mass: f64 = probs
            .iter()
            .zip(&drawn)
            .filter(|(_, &d)| !d)
            .map(|(p, _)| p)
            .sum();
        let pick = if mass > 0.0 {
            let u = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (k, &p) in probs.iter().enumerate() {
                if drawn[k] {
                    continue;
                }
                if p > 0.0 {
                    last_positive = Some(k);
                }
                acc += p;
                if u < acc {
                    pick = Some(k);
                    break;
                }
            }
            // rounding can leave u just above the accumulated mass
            pick.or(last_positive).expect("positive mass implies a positive entry")
        } else {
            let free: Vec<usize> = (0..probs.len()).filter(|&k| !drawn[k]).collect();
            free[rng.random_range(0..free.len())]
        };
        drawn[pick] = true;
        order.push(pick);
    }
    order
}

fn mask_from_draws(draws: Vec<Vec<usize>>, pattern: SparsityPattern) -> NMMask {
    NMMask::from_index_sets(&draws, pattern).expect("draws are N distinct in-range positions")
}

/// Samples a mask, drawing every group from the single stream `rng`.
pub fn sample_mask<R: Rng + ?Sized>(logits: &GroupLogits, rng: &mut R) -> NMMask {
    let n = logits.pattern.n();
    let draws = logits.groups().map(|g| sample_group(g, n, rng)).collect();
    mask_from_draws(draws, logits.pattern)
}

/// Samples a mask where group `i` uses its own stream keyed by `(seed, step, i)`.
pub fn sample_mask_seeded(logits: &GroupLogits, seed: u64, step: u64, exec: Exec) -> NMMask {
    let n = logits.pattern.n();
    let groups = logits.group_count();
    let draw = |i: usize| {
        let mut rng: ChaCha8Rng = substream(seed, Domain::MaskSample, step, i as u64);
        sample_group(logits.group(i), n, &mut rng)
    };
    let exec = if groups >= PAR_GROUPS { exec } else { Exec::Sequential };
    mask_from_draws(exec.map(groups, draw), logits.pattern)
}

fn selected_positions(mask_group: &[bool], logits_group: &[f64], pattern: SparsityPattern) -> Result<Vec<usize>> {
    if mask_group.len() != pattern.m() || logits_group.len() != pattern.m() {
        return Err(Error::dim(format!(
            "group of {} bits / {} logits for pattern {pattern}",
            mask_group.len(),
            logits_group.len()
        )));
    }
    let kept = kept_positions(mask_group);
    if kept.len() != pattern.n() {
        return Err(Error::invalid(format!(
            "group mask keeps {} positions, pattern {pattern} requires {}",
            kept.len(),
            pattern.n()
        )));
    }
    if pattern.n() > MAX_PERMUTATION_N {
        return Err(Error::capacity(format!(
            "N = {} exceeds the permutation-sum bound N <= {MAX_PERMUTATION_N}",
            pattern.n()
        )));
    }
    check_finite(logits_group)?;
    Ok(kept)
}

/// Visits every ordering of `items` (Heap's algorithm).
fn for_each_permutation(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    fn heap(k: usize, items: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if k <= 1 {
            f(items);
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, items, f);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
        heap(k - 1, items, f);
    }
    let k = items.len();
    heap(k, items, f);
}

/// `log P(σ)`: each step is the log-softmax of the drawn logit over the undrawn ones.
fn log_order_prob(order: &[usize], logits: &[f64]) -> f64 {
    let mut drawn = vec![false; logits.len()];
    let mut total = 0.0;
    for &k in order {
        let lse = log_sum_exp((0..logits.len()).filter(|&i| !drawn[i]).map(|i| logits[i]));
        total += logits[k] - lse;
        drawn[k] = true;
    }
    total
}

fn group_log_prob_checked(kept: &mut [usize], logits: &[f64]) -> f64 {
    let mut terms = Vec::new();
    for_each_permutation(kept, &mut |order| terms.push(log_order_prob(order, logits)));
    log_sum_exp(terms.into_iter())
}

/// `log p(m_i | π_i)` by the permutation sum, evaluated in log space.
pub fn group_log_prob(mask_group: &[bool], logits_group: &[f64], pattern: SparsityPattern) -> Result<f64> {
    let mut kept = selected_positions(mask_group, logits_group, pattern)?;
    Ok(group_log_prob_checked(&mut kept, logits_group))
}

/// `p(m_i | π_i)`: the sum over all `N!` draw orders of the kept positions.
pub fn group_mask_prob(mask_group: &[bool], logits_group: &[f64], pattern: SparsityPattern) -> Result<f64> {
    group_log_prob(mask_group, logits_group, pattern).map(f64::exp)
}

/// `log p(m | π) = Σ_i log p(m_i | π_i)`, each group probability floored at
/// [`PROB_FLOOR`] so the result is always finite.
pub fn log_prob(mask: &NMMask, logits: &GroupLogits) -> Result<f64> {
    logits.check_mask(mask)?;
    let floor = PROB_FLOOR.ln();
    let mut total = 0.0;
    for (i, g) in logits.groups().enumerate() {
        total += group_log_prob(mask.group(i), g, logits.pattern)?.max(floor);
    }
    Ok(total)
}

/// Closed-form `∂ log p(m_i | π_i) / ∂π_{i,k}` for every `k` of one group.
///
/// For each draw order `σ` with weight `P(σ) / p(m_i | π_i)` this accumulates
///
/// ```text
/// (I[k ∈ K] - N ψ_k) + Σ_j ψ_k (I[j > σ⁻¹(k)] - S_{j-1}) / (1 - S_{j-1})
/// ```
///
/// where `S_{j-1}` is the softmax mass drawn before step `j` and `σ⁻¹(k) = ∞`
/// for unkept `k`. The first bracket is the derivative of `∏ ψ_σ(j)`, the sum
/// the derivative of the renormalisation product. `1 - S_{j-1}` is taken as
/// the undrawn mass summed directly and floored at [`MASS_FLOOR`]; the
/// numerator is rewritten through the same identity to avoid cancellation.
pub fn group_score(mask_group: &[bool], logits_group: &[f64], pattern: SparsityPattern) -> Result<Vec<f64>> {
    let mut kept = selected_positions(mask_group, logits_group, pattern)?;
    let m = logits_group.len();
    let n = kept.len() as f64;
    let psi = softmax_unchecked(logits_group);

    let mut log_weights = Vec::new();
    let mut terms: Vec<Vec<f64>> = Vec::new();
    for_each_permutation(&mut kept, &mut |order| {
        log_weights.push(log_order_prob(order, logits_group));

        // draw step of each position, 1-based; usize::MAX for unkept
        let mut step_of = vec![usize::MAX; m];
        for (j, &k) in order.iter().enumerate() {
            step_of[k] = j + 1;
        }
        let mut drawn = vec![false; m];
        let mut term: Vec<f64> = (0..m)
            .map(|k| if step_of[k] != usize::MAX { 1.0 } else { 0.0 } - n * psi[k])
            .collect();
        for (j0, &picked) in order.iter().enumerate() {
            let j = j0 + 1;
            let remaining: f64 = psi
                .iter()
                .zip(&drawn)
                .filter(|(_, &d)| !d)
                .map(|(p, _)| p)
                .sum::<f64>()
                .max(MASS_FLOOR);
            for k in 0..m {
                let indicator = if j > step_of[k] { 1.0 } else { 0.0 };
                // I - S_{j-1} = (I - 1) + (1 - S_{j-1})
                term[k] += psi[k] * ((indicator - 1.0) + remaining) / remaining;
            }
            drawn[picked] = true;
        }
        terms.push(term);
    });

    let log_p = log_sum_exp(log_weights.iter().copied());
    let mut score = vec![0.0; m];
    for (lw, term) in log_weights.iter().zip(&terms) {
        let w = (lw - log_p).exp();
        for (s, t) in score.iter_mut().zip(term) {
            *s += w * t;
        }
    }
    Ok(score)
}

/// Exact score `∇_π log p(m | π)`, assembled group by group.
pub fn grad_log_prob(mask: &NMMask, logits: &GroupLogits) -> Result<ScoreGradient> {
    grad_log_prob_with(mask, logits, Exec::default())
}

pub fn grad_log_prob_with(mask: &NMMask, logits: &GroupLogits, exec: Exec) -> Result<ScoreGradient> {
    logits.check_mask(mask)?;
    let groups = logits.group_count();
    let exec = if groups >= PAR_GROUPS { exec } else { Exec::Sequential };
    let parts = exec.map(groups, |i| group_score(mask.group(i), logits.group(i), logits.pattern));
    let mut out = Vec::with_capacity(logits.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(ScoreGradient(out))
}
