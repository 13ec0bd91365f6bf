//! Property suites run by the `verify` command.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::instance::OracleInstance;
use crate::mask::{enumerate_index_sets, verify_representation, SparsityPattern};
use crate::oracle::{converge_tracker, exact_grad_phi, finite_difference_grad_phi, total_probability, Draws};
use crate::par::Exec;
use crate::pge::{EstimatorKind, DEFAULT_ALPHA};
use crate::rng::{substream, Domain};
use crate::sampling::{group_log_prob, group_mask_prob, group_score};

/// Patterns used by the probability and gradient suites.
pub const SUITE_PATTERNS: [(usize, usize); 5] = [(1, 4), (2, 4), (3, 4), (2, 6), (4, 8)];

pub const NORMALIZATION_TOL: f64 = 1e-10;
pub const FULL_SPACE_TOL: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_TOL: f64 = 1e-8;
pub const FD_SMALL: f64 = 1e-6;
pub const ZERO_SUM_TOL: f64 = 1e-8;
pub const SHIFT_PROB_TOL: f64 = 1e-12;
pub const SHIFT_SCORE_TOL: f64 = 1e-10;
pub const SCORE_MEAN_TOL: f64 = 1e-10;
pub const Z_LIMIT: f64 = 3.0;
pub const UNBIASEDNESS_SAMPLES: usize = 100_000;
pub const TRACKER_STEPS: u64 = 5000;

const RANDOM_LOGITS: usize = 100;
const RANDOM_PAIRS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Algebra,
    Probability,
    Gradients,
    Unbiasedness,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Algebra, Scope::Probability, Scope::Gradients, Scope::Unbiasedness];

    pub fn name(&self) -> &'static str {
        match self {
            Scope::Algebra => "algebra",
            Scope::Probability => "probability",
            Scope::Gradients => "gradients",
            Scope::Unbiasedness => "unbiasedness",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scope `{s}`")))
    }
}

/// Outcome of one property on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub property: String,
    pub instance: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(property: &str, instance: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            property: property.to_string(),
            instance: instance.into(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} {} {}", self.property, self.instance, self.detail)
    }
}

fn pattern(n: usize, m: usize) -> SparsityPattern {
    SparsityPattern::new(n, m).expect("suite patterns are valid")
}

fn random_group(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn bits_of(set: &[usize], m: usize) -> Vec<bool> {
    let mut bits = vec![false; m];
    set.iter().for_each(|&j| bits[j] = true);
    bits
}

pub fn run(scope: Scope, seed: u64) -> Result<Vec<Check>> {
    match scope {
        Scope::Algebra => algebra(),
        Scope::Probability => probability(seed),
        Scope::Gradients => gradients(seed),
        Scope::Unbiasedness => unbiasedness(seed),
    }
}

/// The composed basis vectors reproduce the enumerated masks for every
/// `N:M` with `M <= 8`.
pub fn algebra() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for m in 1..=8 {
        for n in 1..=m {
            let ok = verify_representation(pattern(n, m))?;
            out.push(Check::new("representation", format!("{n}:{m}"), ok, String::new()));
        }
    }
    Ok(out)
}

/// Group probabilities sum to one over the enumerated masks; the full
/// product space of each instance setting sums to one.
pub fn probability(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (pi, &(n, m)) in SUITE_PATTERNS.iter().enumerate() {
        let p = pattern(n, m);
        let sets = enumerate_index_sets(p)?;
        let mut worst: f64 = 0.0;
        for i in 0..RANDOM_LOGITS {
            let logits = random_group(&mut substream(seed, Domain::Verify, pi as u64, i as u64), m);
            let mut total = 0.0;
            for set in &sets {
                total += group_mask_prob(&bits_of(set, m), &logits, p)?;
            }
            worst = worst.max((total - 1.0).abs());
        }
        out.push(Check::new(
            "normalization",
            format!("{p}"),
            worst <= NORMALIZATION_TOL,
            format!("max_error={worst:e}"),
        ));
    }
    let inst = OracleInstance::builtin("unbiasedness")?;
    for (name, logits) in &inst.logits {
        let err = (total_probability(logits)? - 1.0).abs();
        out.push(Check::new(
            "full_space_normalization",
            format!("{}/{name}", inst.name),
            err <= FULL_SPACE_TOL,
            format!("error={err:e}"),
        ));
    }
    Ok(out)
}

/// Whether `exact` matches `approx` under the relative/absolute rule.
pub fn fd_agrees(exact: f64, approx: f64) -> bool {
    if exact.abs() < FD_SMALL {
        (exact - approx).abs() <= FD_ABS_TOL
    } else {
        ((exact - approx) / exact).abs() <= FD_REL_TOL
    }
}

/// Closed-form score against central differences, zero-sum, shift
/// invariance, exact score mean zero, and the exact objective gradient
/// against differences of the objective.
pub fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (pi, &(n, m)) in SUITE_PATTERNS.iter().enumerate() {
        let p = pattern(n, m);
        let sets = enumerate_index_sets(p)?;
        let mut fd_ok = true;
        let mut worst_sum: f64 = 0.0;
        let mut worst_shift_p: f64 = 0.0;
        let mut worst_shift_s: f64 = 0.0;
        for i in 0..RANDOM_PAIRS {
            let mut rng = substream(seed, Domain::Verify, 100 + pi as u64, i as u64);
            let logits = random_group(&mut rng, m);
            let bits = bits_of(&sets[rng.random_range(0..sets.len())], m);
            let score = group_score(&bits, &logits, p)?;
            for k in 0..m {
                let mut hi = logits.clone();
                let mut lo = logits.clone();
                hi[k] += FD_STEP;
                lo[k] -= FD_STEP;
                let fd = (group_log_prob(&bits, &hi, p)? - group_log_prob(&bits, &lo, p)?) / (2.0 * FD_STEP);
                fd_ok &= fd_agrees(score[k], fd);
            }
            worst_sum = worst_sum.max(score.iter().sum::<f64>().abs());
            let c = rng.random_range(-50.0..50.0);
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            worst_shift_p = worst_shift_p
                .max((group_mask_prob(&bits, &shifted, p)? - group_mask_prob(&bits, &logits, p)?).abs());
            for (a, b) in group_score(&bits, &shifted, p)?.iter().zip(&score) {
                worst_shift_s = worst_shift_s.max((a - b).abs());
            }
        }
        let mut worst_mean: f64 = 0.0;
        for i in 0..RANDOM_LOGITS {
            let logits = random_group(&mut substream(seed, Domain::Verify, 200 + pi as u64, i as u64), m);
            let mut mean = vec![0.0; m];
            for set in &sets {
                let bits = bits_of(set, m);
                let prob = group_mask_prob(&bits, &logits, p)?;
                for (acc, s) in mean.iter_mut().zip(group_score(&bits, &logits, p)?) {
                    *acc += prob * s;
                }
            }
            worst_mean = mean.iter().fold(worst_mean, |w, v| w.max(v.abs()));
        }
        let id = format!("{p}");
        out.push(Check::new("score_vs_finite_differences", id.clone(), fd_ok, String::new()));
        out.push(Check::new(
            "score_zero_sum",
            id.clone(),
            worst_sum <= ZERO_SUM_TOL,
            format!("max={worst_sum:e}"),
        ));
        out.push(Check::new(
            "shift_invariance",
            id.clone(),
            worst_shift_p <= SHIFT_PROB_TOL && worst_shift_s <= SHIFT_SCORE_TOL,
            format!("prob={worst_shift_p:e} score={worst_shift_s:e}"),
        ));
        out.push(Check::new(
            "score_mean_zero",
            id,
            worst_mean <= SCORE_MEAN_TOL,
            format!("max={worst_mean:e}"),
        ));
    }
    let inst = OracleInstance::builtin("unbiasedness")?;
    for (name, logits) in &inst.logits {
        let exact = exact_grad_phi(logits, &inst.task)?.gradient;
        let fd = finite_difference_grad_phi(logits, &inst.task, FD_STEP)?;
        let ok = exact.iter().zip(&fd).all(|(a, b)| fd_agrees(*a, *b));
        out.push(Check::new(
            "objective_gradient_vs_finite_differences",
            format!("{}/{name}", inst.name),
            ok,
            String::new(),
        ));
    }
    Ok(out)
}

/// Every estimator's Monte Carlo mean lies within [`Z_LIMIT`] standard
/// errors of the exact gradient on every coordinate, for each logits
/// setting of the `unbiasedness` instance.
pub fn unbiasedness(seed: u64) -> Result<Vec<Check>> {
    let inst = OracleInstance::builtin("unbiasedness")?;
    let mut out = Vec::new();
    for (i, (name, logits)) in inst.logits.iter().enumerate() {
        let exact = exact_grad_phi(logits, &inst.task)?.gradient;
        let delta = converge_tracker(logits, &inst.task, &inst.baseline, DEFAULT_ALPHA, TRACKER_STEPS, seed)?;
        let draws = Draws::sample(
            logits,
            &inst.task,
            &inst.baseline,
            UNBIASEDNESS_SAMPLES,
            seed.wrapping_add(i as u64),
            Exec::default(),
        )?;
        for kind in EstimatorKind::ALL {
            let z = draws.stats(kind, delta)?.max_abs_z(&exact);
            out.push(Check::new(
                "unbiased_mean",
                format!("{}/{name}/{kind}", inst.name),
                z <= Z_LIMIT,
                format!("max_abs_z={z:.3}"),
            ));
        }
    }
    Ok(out)
}
