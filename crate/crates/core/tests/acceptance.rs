//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any fails.
//!
//! Reference values are computed here from first principles (direct
//! permutation sums in linear space, finite differences, closed forms) and
//! never from the library routines they check.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmsparse::harness::instance::OracleInstance;
use nmsparse::harness::{cmd_c_sweep, cmd_memory_report, cmd_train, cmd_variance_report, verify, RunConfig};
use nmsparse::mask::verify_representation;
use nmsparse::oracle::{converge_tracker, exact_grad_phi, optimal_delta, Draws};
use nmsparse::par::Exec;
use nmsparse::pge::{extract_final_mask, tail_mean_residual, train, EstimatorKind, TrainConfig};
use nmsparse::sampling::{group_score, GroupLogits};
use nmsparse::tasks::{make_planted_linear, magnitude_mask, PlantedConfig};
use nmsparse::{NMMask, SparsityPattern, ToyTask};

const PATTERNS: [(usize, usize); 5] = [(1, 4), (2, 4), (3, 4), (2, 6), (4, 8)];

// Planted-recovery configuration fixed by the learning-rate sweep.
const PLANTED_D: usize = 64;
const PLANTED_SAMPLES: usize = 64;
const PLANTED_ETA: f64 = 0.03;
const PLANTED_C: f64 = 6.0;
const PLANTED_ITERS: u64 = 20_000;
const SINGLE_SAMPLE_ITERS: u64 = 150_000;
const RUNS: u64 = 10;
const TAIL: usize = 1000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn pattern(n: usize, m: usize) -> SparsityPattern {
    SparsityPattern::new(n, m).unwrap()
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xACCE_0000 + tag)
}

// ---- independent reference computations ----

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Probability that `n` sequential draws without replacement from
/// `softmax(logits)` select exactly the set `kept`.
fn reference_prob(kept: &[usize], logits: &[f64]) -> f64 {
    let psi = softmax(logits);
    permutations(kept)
        .iter()
        .map(|order| {
            // the remaining mass is summed over undrawn entries; `1 - drawn`
            // cancels badly when few entries remain
            let mut p = 1.0;
            for (j, &k) in order.iter().enumerate() {
                let remaining: f64 = (0..psi.len()).filter(|i| !order[..j].contains(i)).map(|i| psi[i]).sum();
                p *= psi[k] / remaining;
            }
            p
        })
        .sum()
}

fn subsets(m: usize, n: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m)
        .filter(|b| b.count_ones() as usize == n)
        .map(|b| (0..m).filter(|j| b >> j & 1 == 1).collect())
        .collect()
}

fn bits(kept: &[usize], m: usize) -> Vec<bool> {
    (0..m).map(|j| kept.contains(&j)).collect()
}

fn random_logits(r: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| r.random_range(-3.0..3.0)).collect()
}

/// All full masks of the product space with their reference probabilities.
fn full_space(logits: &GroupLogits) -> Vec<(NMMask, f64)> {
    let p = logits.pattern();
    let sets = subsets(p.m(), p.n());
    let mut out = vec![(Vec::<Vec<usize>>::new(), 1.0)];
    for g in 0..logits.group_count() {
        let mut next = Vec::new();
        for (prefix, prob) in &out {
            for s in &sets {
                let mut v = prefix.clone();
                v.push(s.clone());
                next.push((v, prob * reference_prob(s, logits.group(g))));
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|(sets, prob)| (NMMask::from_index_sets(&sets, p).unwrap(), prob))
        .collect()
}

fn mean_loss(task: &ToyTask, mask: &NMMask) -> f64 {
    let b = task.minibatch_count();
    (0..b).map(|i| task.eval_loss(mask, i).unwrap()).sum::<f64>() / b as f64
}

fn reference_phi(logits: &GroupLogits, task: &ToyTask) -> f64 {
    full_space(logits).iter().map(|(m, p)| p * mean_loss(task, m)).sum()
}

fn shifted(logits: &GroupLogits, k: usize, h: f64) -> GroupLogits {
    let mut v = logits.values().to_vec();
    v[k] += h;
    GroupLogits::new(v, logits.pattern()).unwrap()
}

/// Central differences of the reference objective.
fn reference_grad_phi(logits: &GroupLogits, task: &ToyTask) -> Vec<f64> {
    let h = 1e-5;
    (0..logits.len())
        .map(|k| (reference_phi(&shifted(logits, k, h), task) - reference_phi(&shifted(logits, k, -h), task)) / (2.0 * h))
        .collect()
}

/// `Σ p‖s‖²(f̄ - f̄₀) / Σ p‖s‖²` with the score from differences of the
/// reference log-probability.
fn reference_optimal_delta(logits: &GroupLogits, task: &ToyTask, baseline: &NMMask) -> f64 {
    let h = 1e-6;
    let space = full_space(logits);
    let plus: Vec<_> = (0..logits.len()).map(|k| full_space(&shifted(logits, k, h))).collect();
    let minus: Vec<_> = (0..logits.len()).map(|k| full_space(&shifted(logits, k, -h))).collect();
    let f0 = mean_loss(task, baseline);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (mask, p)) in space.iter().enumerate() {
        let norm_sq: f64 = (0..logits.len())
            .map(|k| ((plus[k][i].1.ln() - minus[k][i].1.ln()) / (2.0 * h)).powi(2))
            .sum();
        num += p * norm_sq * (mean_loss(task, mask) - f0);
        den += p * norm_sq;
    }
    num / den
}

// ---- criteria ----

fn representation() -> Outcome {
    let start = Instant::now();
    let mut failed = Vec::new();
    for m in 1..=8 {
        for n in 1..=m {
            if !verify_representation(pattern(n, m)).unwrap() {
                failed.push(format!("{n}:{m}"));
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failed.is_empty() && t < Duration::from_secs(5),
        format!("36 patterns, failures {failed:?}, {t:.2?} (limit 5 s)"),
    )
}

fn normalization() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for (pi, &(n, m)) in PATTERNS.iter().enumerate() {
        let p = pattern(n, m);
        let sets = subsets(m, n);
        let mut r = rng(100 + pi as u64);
        for _ in 0..100 {
            let logits = random_logits(&mut r, m);
            let lib: f64 = sets
                .iter()
                .map(|s| nmsparse::sampling::group_mask_prob(&bits(s, m), &logits, p).unwrap())
                .sum();
            let reference: f64 = sets.iter().map(|s| reference_prob(s, &logits)).sum();
            worst = worst.max((lib - 1.0).abs());
            worst_ref = worst_ref.max((reference - 1.0).abs());
        }
    }
    let lib_suite = verify::probability(0).unwrap().iter().all(|c| c.passed);
    let t = start.elapsed();
    outcome(
        worst <= 1e-10 && lib_suite && t < Duration::from_secs(30),
        format!("max |Σp - 1| = {worst:.2e} (reference sums {worst_ref:.2e}), {t:.2?} (limit 30 s)"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut failures = 0;
    for (pi, &(n, m)) in PATTERNS.iter().enumerate() {
        let p = pattern(n, m);
        let sets = subsets(m, n);
        let mut r = rng(200 + pi as u64);
        for _ in 0..200 {
            let logits = random_logits(&mut r, m);
            let kept = &sets[r.random_range(0..sets.len())];
            let score = group_score(&bits(kept, m), &logits, p).unwrap();
            for k in 0..m {
                let mut hi = logits.clone();
                let mut lo = logits.clone();
                hi[k] += h;
                lo[k] -= h;
                let fd = (reference_prob(kept, &hi).ln() - reference_prob(kept, &lo).ln()) / (2.0 * h);
                let err = (score[k] - fd).abs();
                if score[k].abs() < 1e-6 {
                    worst_abs = worst_abs.max(err);
                    failures += (err > 1e-8) as usize;
                } else {
                    worst_rel = worst_rel.max(err / score[k].abs());
                    failures += (err / score[k].abs() > 1e-5) as usize;
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && t < Duration::from_secs(60),
        format!("1000 pairs, max rel {worst_rel:.2e}, max abs (small g) {worst_abs:.2e}, {t:.2?} (limit 60 s)"),
    )
}

fn unbiasedness() -> Outcome {
    let start = Instant::now();
    let inst = OracleInstance::builtin("unbiasedness").unwrap();
    let mut lines = Vec::new();
    let mut passed = inst.logits.len() >= 3 && full_space(&inst.logits[0].1).len() == 36;
    for (i, (name, logits)) in inst.logits.iter().enumerate() {
        let exact = reference_grad_phi(logits, &inst.task);
        let lib = exact_grad_phi(logits, &inst.task).unwrap().gradient;
        let agree = exact.iter().zip(&lib).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + a.abs()));
        let delta = converge_tracker(logits, &inst.task, &inst.baseline, 0.99, 5000, 17).unwrap();
        let draws = Draws::sample(logits, &inst.task, &inst.baseline, 100_000, 40 + i as u64, Exec::default()).unwrap();
        let zs: Vec<f64> = EstimatorKind::ALL
            .iter()
            .map(|&k| draws.stats(k, delta).unwrap().max_abs_z(&exact))
            .collect();
        passed &= agree && zs.iter().all(|z| *z <= 3.0);
        lines.push(format!("{name}: z(p,r,sr) = {:.2}/{:.2}/{:.2}", zs[0], zs[1], zs[2]));
    }
    let t = start.elapsed();
    passed &= t < Duration::from_secs(120);
    outcome(passed, format!("{}, {t:.2?} (limit 120 s)", lines.join("; ")))
}

fn confined_setup() -> (OracleInstance, GroupLogits) {
    let inst = OracleInstance::builtin("confined").unwrap();
    let logits = inst.logits[0].1.clone();
    (inst, logits)
}

fn variance_ordering() -> Outcome {
    let start = Instant::now();
    let (inst, logits) = confined_setup();
    let f0: Vec<f64> = (0..4).map(|b| inst.task.eval_loss(&inst.baseline, b).unwrap()).collect();
    let confined = full_space(&logits).iter().all(|(m, _)| {
        (0..4).all(|b| {
            let f = inst.task.eval_loss(m, b).unwrap();
            (1.0..=2.0).contains(&f) && f > 0.5 * f0[b]
        })
    });
    let delta = converge_tracker(&logits, &inst.task, &inst.baseline, 0.99, 5000, 23).unwrap();
    let draws = Draws::sample(&logits, &inst.task, &inst.baseline, 100_000, 29, Exec::default()).unwrap();
    let v = |k| draws.stats(k, delta).unwrap().variance_trace;
    let (vp, vr, vsr) = (v(EstimatorKind::Vanilla), v(EstimatorKind::Residual), v(EstimatorKind::SmoothedResidual));
    let t = start.elapsed();
    outcome(
        confined && vsr <= vr && vr <= 0.95 * vp && t < Duration::from_secs(120),
        format!("losses confined: {confined}, δ = {delta:.4}, Var p/r/sr = {vp:.4}/{vr:.4}/{vsr:.4}, {t:.2?} (limit 120 s)"),
    )
}

fn optimal_baseline() -> Outcome {
    let start = Instant::now();
    let (inst, logits) = confined_setup();
    let reference = reference_optimal_delta(&logits, &inst.task, &inst.baseline);
    let delta_star = optimal_delta(&logits, &inst.task, &inst.baseline).unwrap();
    let eps = if delta_star == 0.0 { 0.1 } else { 0.5 * delta_star.abs() };
    let draws = Draws::sample(&logits, &inst.task, &inst.baseline, 100_000, 31, Exec::default()).unwrap();
    let probe = |d: f64| draws.stats(EstimatorKind::SmoothedResidual, d).unwrap();
    let (lo, mid, hi) = (probe(delta_star - eps), probe(delta_star), probe(delta_star + eps));
    let minimal = mid.variance_trace <= lo.variance_trace.min(hi.variance_trace) + 3.0 * mid.variance_trace_se;
    let agree = (reference - delta_star).abs() <= 1e-6 * (1.0 + reference.abs());
    let t = start.elapsed();
    outcome(
        minimal && agree && t < Duration::from_secs(120),
        format!(
            "δ* = {delta_star:.6} (reference {reference:.6}), V(δ*-ε, δ*, δ*+ε) = {:.5}/{:.5}/{:.5} ± {:.5}, {t:.2?} (limit 120 s)",
            lo.variance_trace, mid.variance_trace, hi.variance_trace, mid.variance_trace_se
        ),
    )
}

fn score_properties() -> Outcome {
    let suite = verify::gradients(0).unwrap();
    let wanted = ["score_zero_sum", "shift_invariance", "score_mean_zero"];
    let lib_ok = suite.iter().filter(|c| wanted.contains(&c.property.as_str())).all(|c| c.passed);
    // score mean under reference probabilities, plus zero-sum and shift here
    let mut worst_mean: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for (pi, &(n, m)) in PATTERNS.iter().enumerate() {
        let p = pattern(n, m);
        let mut r = rng(300 + pi as u64);
        for _ in 0..20 {
            let logits = random_logits(&mut r, m);
            let c = r.random_range(-20.0..20.0);
            let moved: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let mut mean = vec![0.0; m];
            for s in subsets(m, n) {
                let score = group_score(&bits(&s, m), &logits, p).unwrap();
                let prob = reference_prob(&s, &logits);
                mean.iter_mut().zip(&score).for_each(|(a, g)| *a += prob * g);
                worst_sum = worst_sum.max(score.iter().sum::<f64>().abs());
                let again = group_score(&bits(&s, m), &moved, p).unwrap();
                worst_shift = score.iter().zip(&again).fold(worst_shift, |w, (a, b)| w.max((a - b).abs()));
            }
            worst_mean = mean.iter().fold(worst_mean, |w, v| w.max(v.abs()));
        }
    }
    outcome(
        lib_ok && worst_sum <= 1e-8 && worst_shift <= 1e-10 && worst_mean <= 1e-10,
        format!("library suite {lib_ok}, zero-sum {worst_sum:.1e}, shift {worst_shift:.1e}, mean {worst_mean:.1e}"),
    )
}

struct PlantedRun {
    recovered: bool,
    tail: [f64; 3],
}

fn planted_runs(samples: usize, iterations: u64, kinds: &[EstimatorKind]) -> Vec<PlantedRun> {
    (0..RUNS)
        .map(|seed| {
            let cfg = PlantedConfig::new(PLANTED_D, pattern(2, 4), samples, 0.0, seed).batch_size(samples);
            let inst = make_planted_linear(&cfg).unwrap();
            let m0 = magnitude_mask(inst.task.weights(), inst.task.pattern()).unwrap();
            let mut run = PlantedRun {
                recovered: false,
                tail: [f64::NAN; 3],
            };
            for &kind in kinds {
                let mut tc = TrainConfig::new(kind, m0.clone(), PLANTED_ETA, iterations, 1000 + seed);
                tc.logits_magnitude = PLANTED_C;
                let (state, records) = train(&inst.task, &tc).unwrap();
                let slot = EstimatorKind::ALL.iter().position(|k| *k == kind).unwrap();
                run.tail[slot] = tail_mean_residual(&records, TAIL).unwrap();
                if kind == EstimatorKind::SmoothedResidual {
                    run.recovered = extract_final_mask(&state.logits) == inst.planted_mask;
                }
            }
            run
        })
        .collect()
}

fn planted_recovery_and_ordering() -> (Outcome, Outcome) {
    let start = Instant::now();
    let runs = planted_runs(PLANTED_SAMPLES, PLANTED_ITERS, &EstimatorKind::ALL);
    let t = start.elapsed();
    let recovered = runs.iter().filter(|r| r.recovered).count();
    let sr = EstimatorKind::ALL.iter().position(|k| *k == EstimatorKind::SmoothedResidual).unwrap();
    let negative = runs.iter().all(|r| r.tail[sr] < 0.0);
    let ordered = runs.iter().filter(|r| r.tail[2] <= r.tail[1] && r.tail[1] <= r.tail[0]).count();
    let tails: Vec<String> = runs.iter().map(|r| format!("{:.1}/{:.1}/{:.1}", r.tail[0], r.tail[1], r.tail[2])).collect();
    (
        outcome(
            recovered >= 9 && negative,
            format!("{recovered}/10 recovered, all tail residuals negative: {negative}, {t:.2?} for all estimators (limit 10 min)"),
        ),
        outcome(ordered >= 8, format!("{ordered}/10 seeds ordered; tail residual p/r/sr: {}", tails.join(" "))),
    )
}

fn single_sample() -> Outcome {
    let start = Instant::now();
    let runs = planted_runs(1, SINGLE_SAMPLE_ITERS, &[EstimatorKind::SmoothedResidual]);
    let recovered = runs.iter().filter(|r| r.recovered).count();
    outcome(
        recovered >= 8,
        format!("{recovered}/10 recovered with one sample, {} iterations, {:.2?}", SINGLE_SAMPLE_ITERS, start.elapsed()),
    )
}

fn memory_accounting() -> Outcome {
    let mut ok = true;
    for d in [8usize, 64, 4096, 1 << 20] {
        let a = cmd_memory_report(pattern(2, 4), d).unwrap();
        ok &= a.position_logit_count == d as u64 && 2 * a.mask_logit_count == 3 * d as u64 && a.ratio == 1.5;
        let b = cmd_memory_report(pattern(4, 8), d).unwrap();
        ok &= b.position_logit_count == d as u64 && 4 * b.mask_logit_count == 35 * d as u64 && b.ratio == 8.75;
    }
    outcome(ok, "2:4 gives 1.5d against d, 4:8 gives 8.75d against d, for d in {8, 64, 4096, 2^20}")
}

fn run_config(text: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(text, Path::new(".")).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

const SWEEP_CONFIG: &str = r#"
version = 1
task = "planted_linear"
dim = 64
pattern = "2:4"
samples = 64
learning_rate = 0.03
iterations = 0
seed = 11
sweep_samples = 10000
"#;

fn c_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(SWEEP_CONFIG, dir.path());
    let report = cmd_c_sweep(&cfg, &[0.0, 2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
    let c10 = report.rows.iter().find(|r| r.c == 10.0).unwrap();
    let e = 10f64.exp();
    let closed = (20f64).exp() / ((e + 1.0) * (e + 2.0));
    let se = (closed * (1.0 - closed) / c10.trials as f64).sqrt();
    let z = (c10.match_frequency - closed).abs() / se;
    let freqs: Vec<String> = report.rows.iter().map(|r| format!("{:.5}", r.match_frequency)).collect();
    outcome(
        z <= 3.0 && report.monotone && (c10.expected - closed).abs() < 1e-12,
        format!(
            "C=10: {:.6} vs {closed:.6} (z = {z:.2}, {} group draws); frequencies over C: {}",
            c10.match_frequency,
            c10.trials,
            freqs.join(" ")
        ),
    )
}

const TRAIN_CONFIG: &str = r#"
version = 1
task = "planted_linear"
dim = 64
pattern = "2:4"
task_seed = 4
noise = 0.1
samples = 32
batch_size = 8
learning_rate = 0.03
logits_magnitude = 6.0
seed = 5
iterations = 3000
"#;

const VARIANCE_CONFIG: &str = r#"
version = 1
task = "instance"
instance = "confined"
baseline = "instance"
learning_rate = 0.1
seed = 7
iterations = 2000
stats_samples = 20000
tracker_steps = 2000
"#;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut counts = Vec::new();
    for (name, text) in [("train", TRAIN_CONFIG), ("variance", VARIANCE_CONFIG)] {
        let runs: Vec<_> = (0..2)
            .map(|i| {
                let out = root.path().join(format!("{name}{i}"));
                let cfg = run_config(text, &out);
                if name == "train" {
                    cmd_train(&cfg).unwrap();
                } else {
                    cmd_variance_report(&cfg).unwrap();
                }
                dir_bytes(&out)
            })
            .collect();
        same &= runs[0] == runs[1] && !runs[0].is_empty();
        counts.push(format!("{name}: {} files", runs[0].len()));
    }
    outcome(same, format!("byte-identical repeats ({})", counts.join(", ")))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(&str, Outcome)> = vec![
        ("representation", guarded(representation)),
        ("normalization", guarded(normalization)),
        ("gradient_correctness", guarded(gradient_correctness)),
        ("unbiasedness", guarded(unbiasedness)),
        ("variance_ordering", guarded(variance_ordering)),
        ("optimal_baseline", guarded(optimal_baseline)),
        ("score_properties", guarded(score_properties)),
    ];
    match catch_unwind(planted_recovery_and_ordering) {
        Ok((recovery, ordering)) => {
            results.push(("planted_recovery", recovery));
            results.push(("training_estimator_ordering", ordering));
        }
        Err(_) => {
            results.push(("planted_recovery", outcome(false, "panicked")));
            results.push(("training_estimator_ordering", outcome(false, "panicked")));
        }
    }
    results.push(("single_sample_recovery", guarded(single_sample)));
    results.push(("memory_accounting", guarded(memory_accounting)));
    results.push(("c_sweep", guarded(c_sweep)));
    results.push(("determinism", guarded(determinism)));

    let mut all = true;
    for (name, o) in &results {
        all &= o.passed;
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{}/{} criteria passed", results.iter().filter(|(_, o)| o.passed).count(), results.len());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
