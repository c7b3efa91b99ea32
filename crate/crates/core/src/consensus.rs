//! Consensus-based selective classification.
//!
//! A sample is classified only if some class receives probability above the
//! threshold `p_t` from every model; the score is the largest class-wise
//! minimum. The k-of-n variant relaxes "every model" to "at least k models".

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::argmax;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("threshold {0} is outside [0, 1)")]
    InvalidThreshold(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, ConsensusError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConsensusDecision<T> {
    Classified { class: usize, score: T },
    Rejected,
}

impl<T> ConsensusDecision<T> {
    pub fn class(&self) -> Option<usize> {
        match self {
            Self::Classified { class, .. } => Some(*class),
            Self::Rejected => None,
        }
    }

    pub fn is_classified(&self) -> bool {
        matches!(self, Self::Classified { .. })
    }
}

/// The thresholds 0.0, 0.1, ..., 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

pub fn check_threshold(p_t: f64) -> Result<()> {
    if (0.0..1.0).contains(&p_t) {
        Ok(())
    } else {
        Err(ConsensusError::InvalidThreshold(p_t))
    }
}

fn check_table<T, P: AsRef<[T]>>(probs: &[P]) -> Result<usize> {
    let first = probs
        .first()
        .ok_or_else(|| ConsensusError::Dimension("at least one model is required".into()))?;
    let classes = first.as_ref().len();
    if classes == 0 {
        return Err(ConsensusError::Dimension("probability vectors are empty".into()));
    }
    if let Some(i) = probs.iter().position(|p| p.as_ref().len() != classes) {
        return Err(ConsensusError::Dimension(format!(
            "model {i} has {} classes, model 0 has {classes}",
            probs[i].as_ref().len()
        )));
    }
    Ok(classes)
}

/// Class-wise minimum over models. Not a distribution: it sums to at most 1.
pub fn classwise_min<T: Scalar, P: AsRef<[T]>>(probs: &[P]) -> Result<Vec<T>> {
    check_table(probs)?;
    let mut out = probs[0].as_ref().to_vec();
    for p in &probs[1..] {
        for (m, v) in out.iter_mut().zip(p.as_ref()) {
            *m = m.min(*v);
        }
    }
    Ok(out)
}

fn decide<T: Scalar>(scores: &[T], p_t: f64) -> ConsensusDecision<T> {
    let class = argmax(scores);
    let score = scores[class];
    if score.as_f64() > p_t {
        ConsensusDecision::Classified { class, score }
    } else {
        ConsensusDecision::Rejected
    }
}

/// Classifies when `max(P_min) > p_t` (strictly), at the lowest-index argmax.
pub fn consensus_classify<T: Scalar, P: AsRef<[T]>>(probs: &[P], p_t: f64) -> Result<ConsensusDecision<T>> {
    check_threshold(p_t)?;
    Ok(decide(&classwise_min(probs)?, p_t))
}

/// Per class, the k-th largest probability across models.
pub fn kth_largest_scores<T: Scalar, P: AsRef<[T]>>(probs: &[P], k: usize) -> Result<Vec<T>> {
    let classes = check_table(probs)?;
    if k == 0 || k > probs.len() {
        return Err(ConsensusError::InvalidArgument(format!("k = {k} must lie in [1, {}]", probs.len())));
    }
    let mut column = Vec::with_capacity(probs.len());
    Ok((0..classes)
        .map(|c| {
            column.clear();
            column.extend(probs.iter().map(|p| p.as_ref()[c]));
            column.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            column[k - 1]
        })
        .collect())
}

/// Classifies when at least `k` models give the winning class more than `p_t`.
pub fn consensus_classify_k_of_n<T: Scalar, P: AsRef<[T]>>(
    probs: &[P],
    p_t: f64,
    k: usize,
) -> Result<ConsensusDecision<T>> {
    check_threshold(p_t)?;
    Ok(decide(&kth_largest_scores(probs, k)?, p_t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub n_total: usize,
    pub n_classified: usize,
    pub n_correct: usize,
    pub coverage: f64,
    /// Absent when nothing was classified.
    pub conditional_accuracy: Option<f64>,
}

/// Per-sample consensus class and score, independent of the threshold.
struct Scored {
    class: usize,
    score: f64,
}

fn check_sweep_inputs<T, P: AsRef<[T]>>(models: &[Vec<P>], labels: &[usize], thresholds: &[f64]) -> Result<()> {
    if models.is_empty() {
        return Err(ConsensusError::Dimension("at least one model is required".into()));
    }
    if let Some(i) = models.iter().position(|m| m.len() != labels.len()) {
        return Err(ConsensusError::Dimension(format!(
            "model {i} has {} predictions for {} labels",
            models[i].len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(ConsensusError::InvalidArgument("no samples".into()));
    }
    thresholds.iter().try_for_each(|t| check_threshold(*t))
}

fn score_samples<T: Scalar, P: AsRef<[T]>>(models: &[Vec<P>], labels: &[usize]) -> Result<Vec<Scored>> {
    let mut row: Vec<&[T]> = Vec::with_capacity(models.len());
    (0..labels.len())
        .map(|s| {
            row.clear();
            row.extend(models.iter().map(|m| m[s].as_ref()));
            let pmin = classwise_min(&row)?;
            let class = argmax(&pmin);
            if labels[s] >= pmin.len() {
                return Err(ConsensusError::Dimension(format!("label {} of sample {s} out of range", labels[s])));
            }
            Ok(Scored { class, score: pmin[class].as_f64() })
        })
        .collect()
}

fn sweep_scored(scored: &[Scored], labels: &[usize], thresholds: &[f64]) -> Vec<SweepPoint> {
    thresholds
        .iter()
        .map(|&p_t| {
            let (mut n_classified, mut n_correct) = (0, 0);
            for (s, &label) in scored.iter().zip(labels) {
                if s.score > p_t {
                    n_classified += 1;
                    n_correct += usize::from(s.class == label);
                }
            }
            SweepPoint {
                threshold: p_t,
                n_total: labels.len(),
                n_classified,
                n_correct,
                coverage: n_classified as f64 / labels.len() as f64,
                conditional_accuracy: (n_classified > 0).then(|| n_correct as f64 / n_classified as f64),
            }
        })
        .collect()
}

/// `models[m][s]` is model m's probability vector for sample s.
pub fn threshold_sweep<T: Scalar, P: AsRef<[T]>>(
    models: &[Vec<P>],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    check_sweep_inputs(models, labels, thresholds)?;
    Ok(sweep_scored(&score_samples(models, labels)?, labels, thresholds))
}

/// Consensus decision for every sample.
pub fn classify_all<T: Scalar, P: AsRef<[T]>>(
    models: &[Vec<P>],
    labels: &[usize],
    p_t: f64,
) -> Result<Vec<ConsensusDecision<T>>> {
    check_sweep_inputs(models, labels, &[p_t])?;
    let mut row: Vec<&[T]> = Vec::with_capacity(models.len());
    (0..labels.len())
        .map(|s| {
            row.clear();
            row.extend(models.iter().map(|m| m[s].as_ref()));
            consensus_classify(&row, p_t)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Single(usize),
    Combined,
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single(i) => write!(f, "{i}"),
            Self::Combined => f.write_str("combined"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub model: ModelId,
    pub point: SweepPoint,
}

/// Each model thresholded on its own, followed by the combined consensus,
/// for every threshold. Rows are ordered by threshold, then model.
pub fn compare_individual_vs_combined<T: Scalar, P: AsRef<[T]>>(
    models: &[Vec<P>],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    check_sweep_inputs(models, labels, thresholds)?;
    let mut per_model = Vec::with_capacity(models.len() + 1);
    for (i, m) in models.iter().enumerate() {
        let points = threshold_sweep(std::slice::from_ref(m), labels, thresholds)?;
        per_model.push((ModelId::Single(i), points));
    }
    per_model.push((ModelId::Combined, threshold_sweep(models, labels, thresholds)?));
    let mut rows = Vec::with_capacity(per_model.len() * thresholds.len());
    for t in 0..thresholds.len() {
        rows.extend(per_model.iter().map(|(model, pts)| SweepRow { model: *model, point: pts[t] }));
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "p_t,model_id,n_classified,n_correct,coverage,conditional_accuracy";
pub const DECISIONS_HEADER: &str = "sample_id,outcome,class,score";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let p = &r.point;
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.threshold,
            r.model,
            p.n_classified,
            p.n_correct,
            p.coverage,
            opt(p.conditional_accuracy)
        ));
    }
    s
}

/// Rejected rows leave `class` and `score` empty.
pub fn decisions_csv<T: Scalar>(decisions: &[ConsensusDecision<T>]) -> String {
    let mut s = format!("{DECISIONS_HEADER}\n");
    for (i, d) in decisions.iter().enumerate() {
        match d {
            ConsensusDecision::Classified { class, score } => {
                s.push_str(&format!("{i},classified,{class},{}\n", score.as_f64()))
            }
            ConsensusDecision::Rejected => s.push_str(&format!("{i},rejected,,\n")),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConsensusDecision::*;

    const M1: [f64; 3] = [0.6, 0.3, 0.1];
    const M2: [f64; 3] = [0.5, 0.2, 0.3];

    #[test]
    fn classwise_min_by_hand() {
        assert_eq!(classwise_min(&[M1, M2]).unwrap(), vec![0.5, 0.2, 0.1]);
        assert_eq!(classwise_min(&[M1]).unwrap(), M1.to_vec());
        assert_eq!(classwise_min(&[M1, M1, M1]).unwrap(), M1.to_vec());
    }

    #[test]
    fn two_model_thresholds() {
        assert_eq!(consensus_classify(&[M1, M2], 0.4).unwrap(), Classified { class: 0, score: 0.5 });
        assert_eq!(consensus_classify(&[M1, M2], 0.5).unwrap(), Rejected);
    }

    fn eights(min8: f64) -> Vec<Vec<f64>> {
        // three models, each confident in class 8, with the given minimum
        [min8, 0.99, (min8 + 1.0) / 2.0]
            .iter()
            .map(|&p| {
                let mut v = vec![(1.0 - p) / 9.0; 10];
                v[8] = p;
                v
            })
            .collect()
    }

    #[test]
    fn consistent_class_eight_examples() {
        let a = eights(0.96);
        assert_eq!(consensus_classify(&a, 0.95).unwrap().class(), Some(8));
        assert_eq!(consensus_classify(&a, 0.97).unwrap(), Rejected);
        let b = eights(0.712);
        assert_eq!(consensus_classify(&b, 0.70).unwrap().class(), Some(8));
        assert_eq!(consensus_classify(&b, 0.712).unwrap(), Rejected);
    }

    #[test]
    fn threshold_range_is_enforced() {
        for bad in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(consensus_classify(&[M1], bad), Err(ConsensusError::InvalidThreshold(_))));
        }
        assert!(consensus_classify(&[M1], 0.0).is_ok());
    }

    #[test]
    fn dimension_errors() {
        let ragged: Vec<&[f64]> = vec![&M1, &[0.5, 0.5]];
        assert!(matches!(classwise_min(&ragged), Err(ConsensusError::Dimension(_))));
        let none: [[f64; 3]; 0] = [];
        assert!(matches!(classwise_min(&none), Err(ConsensusError::Dimension(_))));
    }

    #[test]
    fn k_of_n_examples() {
        let t = [[0.9, 0.1], [0.1, 0.9], [0.9, 0.1]];
        assert_eq!(consensus_classify_k_of_n(&t, 0.8, 2).unwrap(), Classified { class: 0, score: 0.9 });
        assert_eq!(consensus_classify_k_of_n(&t, 0.8, 3).unwrap(), Rejected);
        let dominant = [vec![0.0025, 0.0025, 0.99, 0.0025, 0.0025], vec![0.2; 5], vec![0.21, 0.19, 0.2, 0.2, 0.2]];
        assert_eq!(consensus_classify_k_of_n(&dominant, 0.9, 1).unwrap().class(), Some(2));
        for k in [0, 4] {
            assert!(matches!(consensus_classify_k_of_n(&dominant, 0.5, k), Err(ConsensusError::InvalidArgument(_))));
        }
    }

    #[test]
    fn sweep_counts_and_floor() {
        let models = vec![vec![M1, M2, [0.2, 0.2, 0.6]], vec![M2, M2, [0.1, 0.1, 0.8]]];
        let labels = [0, 1, 2];
        let pts = threshold_sweep(&models, &labels, &[0.0, 0.45, 0.55, 0.9]).unwrap();
        assert_eq!(pts[0].n_classified, 3);
        assert_eq!(pts[0].n_correct, 2);
        assert_eq!(pts[1].n_classified, 3);
        assert_eq!((pts[2].n_classified, pts[2].n_correct), (1, 1));
        assert_eq!(pts[3].n_classified, 0);
        assert_eq!(pts[3].conditional_accuracy, None);
        assert_eq!(pts[2].coverage, 1.0 / 3.0);
    }

    #[test]
    fn comparison_table_shape_and_single_model() {
        let models = vec![vec![M1, M2], vec![M2, M1], vec![M1, M1]];
        let rows = compare_individual_vs_combined(&models, &[0, 0], &default_thresholds()).unwrap();
        assert_eq!(rows.len(), 40);
        assert_eq!(rows.iter().filter(|r| r.model == ModelId::Combined).count(), 10);
        let one = compare_individual_vs_combined(&models[..1], &[0, 0], &[0.3, 0.55]).unwrap();
        assert_eq!(one.len(), 4);
        assert_eq!(one[0].point, one[1].point);
        assert_eq!(one[2].point, one[3].point);
    }

    #[test]
    fn csv_formats() {
        let models = vec![vec![M1, M2]];
        let rows = compare_individual_vs_combined(&models, &[0, 1], &[0.0, 0.9]).unwrap();
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines[1], "0,0,2,1,1,0.5");
        assert_eq!(lines[2], "0,combined,2,1,1,0.5");
        assert_eq!(lines[3], "0.9,0,0,0,0,");
        let d = decisions_csv(&[Classified { class: 2, score: 0.75f64 }, Rejected]);
        assert_eq!(d, "sample_id,outcome,class,score\n0,classified,2,0.75\n1,rejected,,\n");
    }
}
