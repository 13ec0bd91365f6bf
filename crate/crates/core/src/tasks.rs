//! Forward-only toy objectives with known structure.
//!
//! A [`ToyTask`] holds frozen weights `w`, a dataset split into fixed
//! contiguous minibatches, and a loss `f(m ⊙ w, ξ)` that is evaluated only in
//! the forward direction. Two model families exist:
//!
//! - linear: `w` is an `outputs × in_features` matrix (row-major), `ŷ = W x`;
//! - grouped linear: one output per group of `M` weights, each reading its
//!   own `M` input features;
//! - two-layer perceptron: `w` is the first layer `hidden × in_features`,
//!   `ŷ = headᵀ tanh(W x)`, with a fixed unmasked head.
//!
//! Planted instances use the grouped model, so the squared-error objective
//! separates over groups and the planted mask is checked group by group to
//! be the unique zero-loss mask.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{enumerate_index_sets, NMMask, SparsityPattern};
use crate::rng::{substream, Domain};

/// Loss applied to the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error summed over outputs, averaged over the minibatch.
    #[default]
    SquaredError,
    /// Softmax cross-entropy against the arg-max of each target row.
    CrossEntropy,
    /// `1 + e / (1 + e)` of the squared error `e`; always in `[1, 2)`.
    BoundedSquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear { outputs: usize, in_features: usize },
    /// One output per block of `width` consecutive weights, reading only the
    /// matching block of the input: `ŷ_g = w_g · x_g`.
    Grouped { groups: usize, width: usize },
    Mlp { hidden: usize, in_features: usize, head: Vec<f64> },
}

impl Model {
    fn in_features(&self) -> usize {
        match self {
            Model::Linear { in_features, .. } | Model::Mlp { in_features, .. } => *in_features,
            Model::Grouped { groups, width } => groups * width,
        }
    }

    fn outputs(&self) -> usize {
        match self {
            Model::Linear { outputs, .. } => *outputs,
            Model::Grouped { groups, .. } => *groups,
            Model::Mlp { .. } => 1,
        }
    }

    fn forward(&self, weights: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            Model::Linear { in_features, .. } => {
                for (o, row) in out.iter_mut().zip(weights.chunks(*in_features)) {
                    *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
                }
            }
            Model::Grouped { width, .. } => {
                for ((o, wg), xg) in out.iter_mut().zip(weights.chunks(*width)).zip(x.chunks(*width)) {
                    *o = wg.iter().zip(xg).map(|(w, v)| w * v).sum();
                }
            }
            Model::Mlp { in_features, head, .. } => {
                out[0] = weights
                    .chunks(*in_features)
                    .zip(head)
                    .map(|(row, a)| a * row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>().tanh())
                    .sum();
            }
        }
    }
}

/// Frozen weights, a minibatched dataset and a forward loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    weights: Vec<f64>,
    pattern: SparsityPattern,
    model: Model,
    loss: LossKind,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    batch_size: usize,
    calibration: Vec<usize>,
}

impl ToyTask {
    /// A task over a linear map with `in_features` inputs. `inputs` holds one
    /// row per sample; `targets` one row of `weights.len() / in_features` values.
    pub fn linear(
        weights: Vec<f64>,
        pattern: SparsityPattern,
        in_features: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        batch_size: usize,
        loss: LossKind,
    ) -> Result<Self> {
        if in_features == 0 || !weights.len().is_multiple_of(in_features) {
            return Err(Error::dim(format!(
                "{} weights cannot be shaped with {in_features} input features",
                weights.len()
            )));
        }
        let outputs = weights.len() / in_features;
        Self::build(
            weights,
            pattern,
            Model::Linear { outputs, in_features },
            inputs,
            targets,
            batch_size,
            loss,
        )
    }

    /// A task over the grouped linear model: output `g` is `w_g · x_g`,
    /// where `w_g` and `x_g` are the `g`-th blocks of `M` weights and inputs.
    pub fn grouped(
        weights: Vec<f64>,
        pattern: SparsityPattern,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        batch_size: usize,
        loss: LossKind,
    ) -> Result<Self> {
        let groups = pattern.group_count(weights.len())?;
        let model = Model::Grouped { groups, width: pattern.m() };
        Self::build(weights, pattern, model, inputs, targets, batch_size, loss)
    }

    fn build(
        weights: Vec<f64>,
        pattern: SparsityPattern,
        model: Model,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        batch_size: usize,
        loss: LossKind,
    ) -> Result<Self> {
        pattern.group_count(weights.len())?;
        let (fan_in, outputs) = (model.in_features(), model.outputs());
        if inputs.is_empty() || !inputs.len().is_multiple_of(fan_in) {
            return Err(Error::dim("inputs are not a whole number of samples"));
        }
        let samples = inputs.len() / fan_in;
        if targets.len() != samples * outputs {
            return Err(Error::dim(format!(
                "{} targets for {samples} samples of {outputs} outputs",
                targets.len()
            )));
        }
        if batch_size == 0 || !samples.is_multiple_of(batch_size) {
            return Err(Error::invalid(format!(
                "batch size {batch_size} does not evenly divide {samples} samples"
            )));
        }
        if loss == LossKind::CrossEntropy && outputs < 2 {
            return Err(Error::invalid("cross-entropy needs at least two outputs"));
        }
        if weights.iter().chain(&inputs).chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::numeric("task data contains non-finite values"));
        }
        let batches = samples / batch_size;
        Ok(Self {
            weights,
            pattern,
            model,
            loss,
            inputs,
            targets,
            batch_size,
            calibration: (0..batches).collect(),
        })
    }

    /// Restricts the calibration set used by multi-sample selection.
    pub fn with_calibration(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() || ids.iter().any(|&i| i >= self.minibatch_count()) {
            return Err(Error::invalid("calibration ids must be non-empty and in range"));
        }
        self.calibration = ids;
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn sample_count(&self) -> usize {
        self.inputs.len() / self.model.in_features()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn minibatch_count(&self) -> usize {
        self.sample_count() / self.batch_size
    }

    pub fn calibration(&self) -> &[usize] {
        &self.calibration
    }

    /// `f(m ⊙ w, ξ)` for minibatch `minibatch`.
    pub fn eval_loss(&self, mask: &NMMask, minibatch: usize) -> Result<f64> {
        if mask.pattern() != self.pattern {
            return Err(Error::dim(format!(
                "mask pattern {} for task pattern {}",
                mask.pattern(),
                self.pattern
            )));
        }
        let masked = mask.apply(&self.weights)?;
        self.eval_masked(&masked, minibatch)
    }

    /// Loss of already-masked weights.
    pub fn eval_masked(&self, masked: &[f64], minibatch: usize) -> Result<f64> {
        if masked.len() != self.weights.len() {
            return Err(Error::dim("masked weight vector has the wrong length"));
        }
        if minibatch >= self.minibatch_count() {
            return Err(Error::invalid(format!(
                "minibatch {minibatch} out of range (0..{})",
                self.minibatch_count()
            )));
        }
        let (fan_in, outputs) = (self.model.in_features(), self.model.outputs());
        let mut pred = vec![0.0; outputs];
        let mut total = 0.0;
        for s in minibatch * self.batch_size..(minibatch + 1) * self.batch_size {
            let x = &self.inputs[s * fan_in..(s + 1) * fan_in];
            let y = &self.targets[s * outputs..(s + 1) * outputs];
            self.model.forward(masked, x, &mut pred);
            total += match self.loss {
                LossKind::SquaredError | LossKind::BoundedSquaredError => {
                    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
                }
                LossKind::CrossEntropy => cross_entropy(&pred, y),
            };
        }
        let mean = total / self.batch_size as f64;
        Ok(match self.loss {
            LossKind::BoundedSquaredError => 1.0 + mean / (1.0 + mean),
            _ => mean,
        })
    }

    /// Mean of the minibatch losses, i.e. the exact expectation over a
    /// uniformly drawn minibatch.
    pub fn mean_loss(&self, mask: &NMMask) -> Result<f64> {
        let masked = mask.apply(&self.weights)?;
        let mut total = 0.0;
        for b in 0..self.minibatch_count() {
            total += self.eval_masked(&masked, b)?;
        }
        Ok(total / self.minibatch_count() as f64)
    }

    /// Mean loss over the calibration minibatches.
    pub fn calibration_loss(&self, mask: &NMMask) -> Result<f64> {
        let masked = mask.apply(&self.weights)?;
        let mut total = 0.0;
        for &b in &self.calibration {
            total += self.eval_masked(&masked, b)?;
        }
        Ok(total / self.calibration.len() as f64)
    }
}

fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let label = target
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > target[best] { i } else { best });
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Keeps, per group, the `N` entries of largest `|w|`; ties go to the lower index.
pub fn magnitude_mask(weights: &[f64], pattern: SparsityPattern) -> Result<NMMask> {
    pattern.group_count(weights.len())?;
    let sets: Vec<Vec<usize>> = weights
        .chunks(pattern.m())
        .map(|g| top_n_positions(g.iter().map(|w| w.abs()), pattern.n()))
        .collect();
    NMMask::from_index_sets(&sets, pattern)
}

/// Indices of the `n` largest scores, lowest index first among equals.
pub(crate) fn top_n_positions(scores: impl Iterator<Item = f64>, n: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = scores.enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(n).map(|(i, _)| i).collect()
}

/// A uniformly random N:M mask.
pub fn random_mask<R: Rng + ?Sized>(d: usize, pattern: SparsityPattern, rng: &mut R) -> Result<NMMask> {
    let groups = pattern.group_count(d)?;
    let sets: Vec<Vec<usize>> = (0..groups)
        .map(|_| sample_indices(rng, pattern.m(), pattern.n()).into_vec())
        .collect();
    NMMask::from_index_sets(&sets, pattern)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Parameters of a planted linear instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub d: usize,
    pub pattern: SparsityPattern,
    pub n_samples: usize,
    pub batch_size: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl PlantedConfig {
    pub fn new(d: usize, pattern: SparsityPattern, n_samples: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            d,
            pattern,
            n_samples,
            batch_size: n_samples.min(32),
            noise_level,
            seed,
            loss: LossKind::SquaredError,
        }
    }

    pub fn batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }
}

/// A task whose optimal mask is known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub task: ToyTask,
    pub planted_mask: NMMask,
    pub noise_level: f64,
}

/// Draws per group before giving up on a well-separated one.
const GROUP_ATTEMPTS: u64 = 256;

/// Each alternative configuration of a group must raise that group's loss by
/// at least this fraction of the group's mean input energy `Σ_j (w_j x_j)²`.
const SEPARATION: f64 = 0.3;

/// Builds a planted linear regression instance.
///
/// Every group owns one output and its own `M` input features, so `ŷ_g =
/// w_g · x_g` and the squared-error objective is a sum of independent
/// per-group terms. Each group draws weights with `|w_j| ∈ [0.5, 1.5]` and
/// random signs, a kept set `K*` of size `N`, standard normal inputs, and
/// targets `Σ_{j∈K*} w_j x_j` plus Gaussian noise of standard deviation
/// `noise_level`. For noiseless squared-error losses a group is redrawn
/// (from its own substream) until every other configuration of the group
/// raises its loss by a margin, which makes `m*` the unique minimiser with a
/// usable gap even for a single sample. Cross-entropy targets are the
/// one-hot arg-max over the group outputs.
pub fn make_planted_linear(config: &PlantedConfig) -> Result<PlantedInstance> {
    let pattern = config.pattern;
    let m = pattern.m();
    let groups = pattern.group_count(config.d)?;
    let n = config.n_samples;
    if n == 0 {
        return Err(Error::invalid("planted instance needs at least one sample"));
    }
    if !(config.noise_level >= 0.0 && config.noise_level.is_finite()) {
        return Err(Error::invalid("noise level must be finite and non-negative"));
    }
    if config.loss == LossKind::CrossEntropy && groups < 2 {
        return Err(Error::invalid("cross-entropy planted instance needs at least two groups"));
    }
    let checkable = config.noise_level == 0.0 && config.loss != LossKind::CrossEntropy;
    let alternatives = enumerate_index_sets(pattern)?;

    let mut weights = Vec::with_capacity(config.d);
    let mut sets = Vec::with_capacity(groups);
    let mut inputs = vec![0.0; n * config.d];
    let mut targets = vec![0.0; n * groups];
    for g in 0..groups {
        let mut drawn = None;
        for attempt in 0..GROUP_ATTEMPTS {
            let mut rng = substream(config.seed, Domain::TaskData, g as u64, attempt);
            let w: Vec<f64> = (0..m)
                .map(|_| {
                    let mag = rng.random_range(0.5..1.5);
                    if rng.random::<bool>() { mag } else { -mag }
                })
                .collect();
            let mut kept = sample_indices(&mut rng, m, pattern.n()).into_vec();
            kept.sort_unstable();
            let x = normals(&mut rng, n * m);
            let noise = normals(&mut rng, n);
            if !checkable || well_separated(&w, &kept, &x, &alternatives) {
                drawn = Some((w, kept, x, noise));
                break;
            }
        }
        let (w, kept, x, noise) = drawn.ok_or_else(|| {
            Error::invalid(format!("group {g}: no well-separated draw after {GROUP_ATTEMPTS} attempts"))
        })?;
        for s in 0..n {
            let xs = &x[s * m..(s + 1) * m];
            inputs[s * config.d + g * m..s * config.d + (g + 1) * m].copy_from_slice(xs);
            targets[s * groups + g] = kept.iter().map(|&j| w[j] * xs[j]).sum::<f64>() + config.noise_level * noise[s];
        }
        weights.extend(w);
        sets.push(kept);
    }
    if config.loss == LossKind::CrossEntropy {
        for row in targets.chunks_mut(groups) {
            let best = top_n_positions(row.iter().copied(), 1)[0];
            row.iter_mut().enumerate().for_each(|(i, v)| *v = if i == best { 1.0 } else { 0.0 });
        }
    }

    let model = Model::Grouped { groups, width: m };
    let task = ToyTask::build(weights, pattern, model, inputs, targets, config.batch_size, config.loss)?;
    Ok(PlantedInstance {
        task,
        planted_mask: NMMask::from_index_sets(&sets, pattern)?,
        noise_level: config.noise_level,
    })
}

/// Whether the group's loss over its index sets has `kept` as the only
/// minimiser with a margin, and no other local minimum: every other set
/// must lose at least `SEPARATION · mean_s Σ_j (w_j x_sj)²` against `kept`
/// and have a single-swap neighbour with strictly lower loss.
fn well_separated(w: &[f64], kept: &[usize], x: &[f64], alternatives: &[Vec<usize>]) -> bool {
    let m = w.len();
    let samples = x.len() as f64 / m as f64;
    let energy = x
        .chunks(m)
        .map(|xs| w.iter().zip(xs).map(|(a, b)| (a * b) * (a * b)).sum::<f64>())
        .sum::<f64>()
        / samples;
    let loss = |set: &[usize]| {
        x.chunks(m)
            .map(|xs| {
                let r: f64 = set.iter().map(|&j| w[j] * xs[j]).sum::<f64>()
                    - kept.iter().map(|&j| w[j] * xs[j]).sum::<f64>();
                r * r
            })
            .sum::<f64>()
            / samples
    };
    let losses: Vec<f64> = alternatives.iter().map(|a| loss(a)).collect();
    let swap_neighbours = |a: &[usize], b: &[usize]| a.iter().filter(|j| b.contains(j)).count() + 1 == a.len();
    alternatives.iter().enumerate().filter(|(_, a)| a.as_slice() != kept).all(|(i, a)| {
        losses[i] >= SEPARATION * energy
            && alternatives
                .iter()
                .enumerate()
                .any(|(k, b)| swap_neighbours(a, b) && losses[k] < losses[i])
    })
}

/// Parameters of the two-layer perceptron task.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub d: usize,
    pub pattern: SparsityPattern,
    pub hidden: usize,
    pub n_samples: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// A fixed random perceptron whose first layer (`d` weights) is masked.
/// Targets come from the same network with the dense first layer.
pub fn make_mlp_task(config: &MlpConfig) -> Result<ToyTask> {
    if config.hidden == 0 {
        return Err(Error::invalid("hidden width must be positive"));
    }
    if !config.d.is_multiple_of(config.hidden) {
        return Err(Error::dim(format!(
            "{} first-layer weights do not split into {} hidden units",
            config.d, config.hidden
        )));
    }
    let in_features = config.d / config.hidden;
    if !in_features.is_multiple_of(config.pattern.m()) {
        return Err(Error::dim(format!(
            "input width {in_features} is not a multiple of group size {}",
            config.pattern.m()
        )));
    }
    let mut rng = substream(config.seed, Domain::TaskData, 1, 0);
    let w_scale = 1.0 / (in_features as f64).sqrt();
    let h_scale = 1.0 / (config.hidden as f64).sqrt();
    let weights: Vec<f64> = normals(&mut rng, config.d).into_iter().map(|v| v * w_scale).collect();
    let head: Vec<f64> = normals(&mut rng, config.hidden).into_iter().map(|v| v * h_scale).collect();
    let inputs = normals(&mut rng, config.n_samples * in_features);

    let model = Model::Mlp {
        hidden: config.hidden,
        in_features,
        head,
    };
    let mut targets = vec![0.0; config.n_samples];
    for (s, t) in targets.iter_mut().enumerate() {
        model.forward(&weights, &inputs[s * in_features..(s + 1) * in_features], std::slice::from_mut(t));
    }
    ToyTask::build(
        weights,
        config.pattern,
        model,
        inputs,
        targets,
        config.batch_size,
        LossKind::SquaredError,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::enumerate_index_sets;
    use rand::SeedableRng;

    fn pat(n: usize, m: usize) -> SparsityPattern {
        SparsityPattern::new(n, m).unwrap()
    }

    /// Every full mask of a small instance, via the product of group sets.
    fn all_masks(d: usize, p: SparsityPattern) -> Vec<NMMask> {
        let sets = enumerate_index_sets(p).unwrap();
        let groups = d / p.m();
        let total = sets.len().pow(groups as u32);
        (0..total)
            .map(|mut idx| {
                let chosen: Vec<Vec<usize>> = (0..groups)
                    .map(|_| {
                        let s = sets[idx % sets.len()].clone();
                        idx /= sets.len();
                        s
                    })
                    .collect();
                NMMask::from_index_sets(&chosen, p).unwrap()
            })
            .collect()
    }

    #[test]
    fn planted_mask_is_unique_argmin_by_enumeration() {
        for seed in 0..5 {
            let inst = make_planted_linear(&PlantedConfig::new(8, pat(2, 4), 16, 0.0, seed).batch_size(4)).unwrap();
            let masks = all_masks(8, pat(2, 4));
            assert_eq!(masks.len(), 36);
            for m in &masks {
                let f = inst.task.mean_loss(m).unwrap();
                if *m == inst.planted_mask {
                    assert_eq!(f, 0.0);
                } else {
                    assert!(f > 0.0);
                }
            }
        }
        // d = 12 with a single sample
        let inst = make_planted_linear(&PlantedConfig::new(12, pat(2, 4), 1, 0.0, 3).batch_size(1)).unwrap();
        let masks = all_masks(12, pat(2, 4));
        let zero: Vec<_> = masks.iter().filter(|m| inst.task.mean_loss(m).unwrap() == 0.0).collect();
        assert_eq!(zero, vec![&inst.planted_mask]);
    }

    #[test]
    fn planted_losses() {
        let inst = make_planted_linear(&PlantedConfig::new(16, pat(2, 4), 32, 0.0, 9).batch_size(8)).unwrap();
        for b in 0..inst.task.minibatch_count() {
            assert_eq!(inst.task.eval_loss(&inst.planted_mask, b).unwrap(), 0.0);
        }
        let complement: Vec<bool> = inst.planted_mask.bits().iter().map(|b| !b).collect();
        let complement = NMMask::new(complement, pat(2, 4)).unwrap();
        for b in 0..inst.task.minibatch_count() {
            assert!(inst.task.eval_loss(&complement, b).unwrap() > 0.0);
        }
        let a = inst.task.eval_loss(&complement, 1).unwrap();
        let b = inst.task.eval_loss(&complement, 1).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(inst.task.eval_loss(&complement, 4).is_err());
    }

    #[test]
    fn planted_is_reproducible_from_seed() {
        let c = PlantedConfig::new(16, pat(2, 4), 8, 0.1, 4);
        assert_eq!(make_planted_linear(&c).unwrap(), make_planted_linear(&c).unwrap());
        let other = PlantedConfig { seed: 5, ..c };
        assert_ne!(make_planted_linear(&other).unwrap().task.weights(), make_planted_linear(&c).unwrap().task.weights());
    }

    #[test]
    fn bounded_loss_stays_in_range() {
        let inst = make_planted_linear(
            &PlantedConfig::new(8, pat(2, 4), 16, 0.0, 1).batch_size(4).loss(LossKind::BoundedSquaredError),
        )
        .unwrap();
        for m in all_masks(8, pat(2, 4)) {
            for b in 0..4 {
                let f = inst.task.eval_loss(&m, b).unwrap();
                assert!((1.0..2.0).contains(&f));
            }
        }
        assert_eq!(inst.task.eval_loss(&inst.planted_mask, 0).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_task_is_finite() {
        let inst = make_planted_linear(
            &PlantedConfig::new(16, pat(2, 4), 8, 0.0, 2).batch_size(4).loss(LossKind::CrossEntropy),
        )
        .unwrap();
        for m in all_masks(16, pat(2, 4)).iter().step_by(97) {
            let f = inst.task.eval_loss(m, 0).unwrap();
            assert!(f.is_finite() && f >= 0.0);
        }
    }

    #[test]
    fn reconstruction_instance() {
        // f(m ⊙ w) = ||m ⊙ w - w||^2 via inputs 2·e_j and a dense teacher
        let p = pat(2, 4);
        let w = vec![1.0, 0.0, 0.0, 1.0];
        let mut inputs = vec![0.0; 16];
        for j in 0..4 {
            inputs[j * 4 + j] = 2.0;
        }
        let targets: Vec<f64> = (0..4).map(|j| 2.0 * w[j]).collect();
        let task = ToyTask::linear(w, p, 4, inputs, targets, 4, LossKind::SquaredError).unwrap();
        let both = NMMask::from_index_sets(&[vec![0, 3]], p).unwrap();
        let neither = NMMask::from_index_sets(&[vec![1, 2]], p).unwrap();
        let one = NMMask::from_index_sets(&[vec![0, 1]], p).unwrap();
        assert_eq!(task.eval_loss(&both, 0).unwrap(), 0.0);
        assert_eq!(task.eval_loss(&neither, 0).unwrap(), 2.0);
        assert_eq!(task.eval_loss(&one, 0).unwrap(), 1.0);
    }

    #[test]
    fn mlp_task() {
        let dense = pat(4, 4);
        let task = make_mlp_task(&MlpConfig { d: 32, pattern: dense, hidden: 4, n_samples: 16, batch_size: 4, seed: 1 }).unwrap();
        let all = NMMask::dense(32, dense).unwrap();
        for b in 0..4 {
            assert_eq!(task.eval_loss(&all, b).unwrap(), 0.0);
        }
        let p = pat(2, 4);
        let task = make_mlp_task(&MlpConfig { d: 32, pattern: p, hidden: 4, n_samples: 16, batch_size: 4, seed: 1 }).unwrap();
        let m = magnitude_mask(task.weights(), p).unwrap();
        let f = task.eval_loss(&m, 2).unwrap();
        assert!(f.is_finite() && f > 0.0);
        let again = make_mlp_task(&MlpConfig { d: 32, pattern: p, hidden: 4, n_samples: 16, batch_size: 4, seed: 1 }).unwrap();
        assert_eq!(again.eval_loss(&m, 2).unwrap().to_bits(), f.to_bits());
        assert!(make_mlp_task(&MlpConfig { d: 32, pattern: p, hidden: 0, n_samples: 16, batch_size: 4, seed: 1 }).is_err());
        assert!(make_mlp_task(&MlpConfig { d: 24, pattern: p, hidden: 4, n_samples: 16, batch_size: 4, seed: 1 }).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let p = pat(2, 4);
        let m = magnitude_mask(&[0.1, -3.0, 2.0, 0.5], p).unwrap();
        assert_eq!(m.bits(), &[false, true, true, false]);
        let m = magnitude_mask(&[1.0, -1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0], p).unwrap();
        assert_eq!(m.kept(0), vec![0, 1]);
        assert_eq!(m.kept(1), vec![0, 1]);
        let dense = pat(4, 4);
        assert!(magnitude_mask(&[0.0, 1.0, 2.0, 3.0], dense).unwrap().bits().iter().all(|&b| b));
        assert!(magnitude_mask(&[1.0; 6], p).is_err());
    }

    #[test]
    fn magnitude_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pat(3, 8);
        for _ in 0..50 {
            let w = normals(&mut rng, 64);
            let scale = rng.random_range(0.01..100.0);
            let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
            assert_eq!(magnitude_mask(&w, p).unwrap(), magnitude_mask(&scaled, p).unwrap());
        }
    }

    #[test]
    fn batch_size_must_divide() {
        let p = pat(2, 4);
        assert!(make_planted_linear(&PlantedConfig::new(8, p, 10, 0.0, 0).batch_size(4)).is_err());
        assert!(make_planted_linear(&PlantedConfig::new(8, p, 1, 0.0, 0).batch_size(1)).is_ok());
    }
}
