//! Randomised probability tables and a brute-force consensus evaluator.

use concord::consensus::{
    classwise_min, consensus_classify, consensus_classify_k_of_n, threshold_sweep, ConsensusDecision,
};
use concord::nn::{scale_logits, softmax};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A probability vector of length `c`. A third of the time the entries are
/// multiples of 1/8 so that ties and threshold equalities actually occur.
pub fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    if rng.random_bool(1.0 / 3.0) {
        let mut counts = vec![0u32; c];
        for _ in 0..8 {
            counts[rng.random_range(0..c)] += 1;
        }
        counts.iter().map(|&k| k as f64 / 8.0).collect()
    } else {
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(3) + 1e-9).collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|v| v / sum).collect()
    }
}

pub fn random_table(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=5);
    let c = rng.random_range(2..=10);
    (0..n).map(|_| random_probs(rng, c)).collect()
}

pub fn random_threshold(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.25) {
        rng.random_range(0..8) as f64 / 8.0
    } else {
        rng.random_range(0.0..1.0)
    }
}

/// Direct reading of the rule: a class qualifies when every model gives it
/// more than `p_t`; the winner is the class whose weakest model is
/// strongest, earliest class on ties. Nothing qualifies means rejection.
pub fn brute_force(table: &[Vec<f64>], p_t: f64) -> ConsensusDecision<f64> {
    let classes = table[0].len();
    let mut best: Option<(usize, f64)> = None;
    for c in 0..classes {
        let mut weakest = f64::INFINITY;
        for model in table {
            if model[c] < weakest {
                weakest = model[c];
            }
        }
        if best.is_none_or(|(_, s)| weakest > s) {
            best = Some((c, weakest));
        }
    }
    let (class, score) = best.unwrap();
    if table.iter().all(|m| m[class] > p_t) {
        ConsensusDecision::Classified { class, score }
    } else {
        ConsensusDecision::Rejected
    }
}

pub fn check_oracle(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let table = random_table(rng);
    let p_t = random_threshold(rng);
    let got = consensus_classify(&table, p_t).map_err(|e| e.to_string())?;
    let want = brute_force(&table, p_t);
    if got != want {
        return Err(format!("table {table:?} at p_t {p_t}: got {got:?}, brute force {want:?}"));
    }
    Ok(())
}

/// Classified sets shrink as the threshold grows, for a random cohort.
pub fn check_coverage_monotone(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=5);
    let c = rng.random_range(2..=10);
    let samples = rng.random_range(1..40);
    let models: Vec<Vec<Vec<f64>>> =
        (0..n).map(|_| (0..samples).map(|_| random_probs(rng, c)).collect()).collect();
    let labels: Vec<usize> = (0..samples).map(|_| rng.random_range(0..c)).collect();
    let mut thresholds: Vec<f64> = (0..12).map(|_| random_threshold(rng)).collect();
    thresholds.sort_by(f64::total_cmp);
    let points = threshold_sweep(&models, &labels, &thresholds).map_err(|e| e.to_string())?;
    for w in points.windows(2) {
        if w[1].coverage > w[0].coverage || w[1].n_correct > w[0].n_correct {
            return Err(format!("coverage rose from {:?} to {:?}", w[0], w[1]));
        }
    }
    for s in 0..samples {
        let row: Vec<&Vec<f64>> = models.iter().map(|m| &m[s]).collect();
        let mut was_classified = true;
        for &t in &thresholds {
            let now = consensus_classify(&row, t).map_err(|e| e.to_string())?.is_classified();
            if now && !was_classified {
                return Err(format!("sample {s} re-entered the classified set at {t}"));
            }
            was_classified = now;
        }
    }
    Ok(())
}

pub fn check_permutation_invariance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let table = random_table(rng);
    let p_t = random_threshold(rng);
    let mut shuffled = table.clone();
    shuffled.shuffle(rng);
    let a = consensus_classify(&table, p_t).map_err(|e| e.to_string())?;
    let b = consensus_classify(&shuffled, p_t).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!("{table:?} vs {shuffled:?}: {a:?} != {b:?}"));
    }
    let k = rng.random_range(1..=table.len());
    let a = consensus_classify_k_of_n(&table, p_t, k).map_err(|e| e.to_string())?;
    let b = consensus_classify_k_of_n(&shuffled, p_t, k).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!("k = {k}: {a:?} != {b:?}"));
    }
    Ok(())
}

pub fn check_k_equals_n(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let table = random_table(rng);
    let p_t = random_threshold(rng);
    let a = consensus_classify(&table, p_t).map_err(|e| e.to_string())?;
    let b = consensus_classify_k_of_n(&table, p_t, table.len()).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!("{table:?} at {p_t}: {a:?} != {b:?}"));
    }
    Ok(())
}

pub fn check_min_idempotence(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let c = rng.random_range(2..=10);
    let v = random_probs(rng, c);
    let copies = vec![v.clone(); rng.random_range(1..=5)];
    let m = classwise_min(&copies).map_err(|e| e.to_string())?;
    if m != v {
        return Err(format!("classwise_min of copies of {v:?} gave {m:?}"));
    }
    Ok(())
}

/// Positive logit scaling never moves the argmax (unique maxima only).
pub fn check_scale_argmax(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let c = rng.random_range(2..=10);
    let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-20.0..20.0)).collect();
    let lambda = rng.random_range(0.01..20.0);
    let a = softmax(&logits).map_err(|e| e.to_string())?.argmax();
    let scaled = scale_logits(&logits, lambda).map_err(|e| e.to_string())?;
    let b = softmax(&scaled).map_err(|e| e.to_string())?.argmax();
    if a != b {
        return Err(format!("{logits:?} scaled by {lambda}: argmax {a} became {b}"));
    }
    Ok(())
}

/// Runs `check` on `trials` independent seeds derived from `seed`.
pub fn run_trials(
    seed: u64,
    trials: usize,
    check: fn(&mut ChaCha8Rng) -> Result<(), String>,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        check(&mut rng).map_err(|e| format!("trial {t}: {e}"))?;
    }
    Ok(())
}
