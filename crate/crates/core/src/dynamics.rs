//! Per-sample training dynamics: loss split by correctness, loss densities
//! and probability traces across models and epochs.

use thiserror::Error;

use crate::data::LabeledDataset;
use crate::nn::NnError;
use crate::scalar::Scalar;
use crate::train::{evaluate, CheckpointSet, SampleRecord};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("no records to analyse")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("incomplete cohort: {0}")]
    IncompleteCohort(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionRow {
    pub epoch: usize,
    /// Absent when no sample was classified correctly.
    pub mean_loss_correct: Option<f64>,
    /// Absent when every sample was classified correctly.
    pub mean_loss_incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

impl DecompositionRow {
    pub fn from_records<T: Scalar>(epoch: usize, records: &[SampleRecord<T>]) -> Self {
        let (mut sc, mut si, mut nc, mut ni) = (0.0, 0.0, 0usize, 0usize);
        for r in records {
            if r.correct {
                sc += r.loss.as_f64();
                nc += 1;
            } else {
                si += r.loss.as_f64();
                ni += 1;
            }
        }
        Self {
            epoch,
            mean_loss_correct: (nc > 0).then(|| sc / nc as f64),
            mean_loss_incorrect: (ni > 0).then(|| si / ni as f64),
            n_correct: nc,
            n_incorrect: ni,
        }
    }

    /// Mean loss over both partitions.
    pub fn overall_mean(&self) -> f64 {
        let total = self.mean_loss_correct.unwrap_or(0.0) * self.n_correct as f64
            + self.mean_loss_incorrect.unwrap_or(0.0) * self.n_incorrect as f64;
        total / (self.n_correct + self.n_incorrect) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionSeries {
    pub rows: Vec<DecompositionRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Correct,
    Incorrect,
}

impl DecompositionSeries {
    fn mean_of(row: &DecompositionRow, subset: Subset) -> Option<f64> {
        match subset {
            Subset::Correct => row.mean_loss_correct,
            Subset::Incorrect => row.mean_loss_incorrect,
        }
    }

    /// Epochs covered by [`Self::final_third_slope`]: the last `len / 3`
    /// epochs, but at least two.
    pub fn final_third(&self) -> &[DecompositionRow] {
        let n = self.rows.len();
        let w = (n / 3).max(2).min(n);
        &self.rows[n - w..]
    }

    /// Least-squares slope of the subset's mean loss against epoch over the
    /// final third of epochs. Epochs where the subset is empty are skipped.
    pub fn final_third_slope(&self, subset: Subset) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .final_third()
            .iter()
            .filter_map(|r| Self::mean_of(r, subset).map(|m| (r.epoch as f64, m)))
            .unzip();
        least_squares_slope(&xs, &ys)
    }
}

/// Ordinary least-squares slope of `ys` on `xs`; `None` for fewer than two
/// points or constant `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Splits `data`'s losses by correctness at every snapshot of the run.
pub fn decompose_loss<T: Scalar>(run: &CheckpointSet<T>, data: &LabeledDataset<T>) -> Result<DecompositionSeries> {
    if run.snapshots.is_empty() {
        return Err(DynamicsError::InvalidArgument("run has no epochs".into()));
    }
    let rows = run
        .snapshots
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(DecompositionRow::from_records(i + 1, &evaluate(&run.arch, p, data)?.records)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionSeries { rows })
}

pub const DECOMPOSITION_HEADER: &str = "epoch,mean_loss_correct,mean_loss_incorrect,n_correct,n_incorrect";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Absent means are written as empty fields.
pub fn decomposition_csv(series: &DecompositionSeries) -> String {
    let mut s = format!("{DECOMPOSITION_HEADER}\n");
    for r in &series.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            opt(r.mean_loss_correct),
            opt(r.mean_loss_incorrect),
            r.n_correct,
            r.n_incorrect
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSpec {
    pub bins: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { bins: 50, low: 0.0, high: 10.0 }
    }
}

impl HistogramSpec {
    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(DynamicsError::InvalidArgument("bins must be at least 1".into()));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(DynamicsError::InvalidArgument(format!(
                "histogram range [{}, {}] must be finite with low < high",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Values outside the range are clamped into the first or last bin.
    pub fn bin_of(&self, x: f64) -> usize {
        let t = (x - self.low) / (self.high - self.low) * self.bins as f64;
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.high - self.low) / self.bins as f64;
        let hi = if bin + 1 == self.bins { self.high } else { self.low + w * (bin + 1) as f64 };
        (self.low + w * bin as f64, hi)
    }
}

/// Normalised loss densities (probability mass per bin) of the correct and
/// incorrect partitions. A density is `None` when its partition is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LossHistogram {
    pub spec: HistogramSpec,
    pub correct: Option<Vec<f64>>,
    pub incorrect: Option<Vec<f64>>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

impl LossHistogram {
    /// Σ min(correct, incorrect); 0 when either partition is empty.
    pub fn intersection(&self) -> f64 {
        match (&self.correct, &self.incorrect) {
            (Some(a), Some(b)) => histogram_intersection(a, b),
            _ => 0.0,
        }
    }
}

pub fn histogram_intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

pub fn loss_histogram<T: Scalar>(records: &[SampleRecord<T>], spec: HistogramSpec) -> Result<LossHistogram> {
    spec.validate()?;
    if records.is_empty() {
        return Err(DynamicsError::Empty);
    }
    let mut correct = vec![0usize; spec.bins];
    let mut incorrect = vec![0usize; spec.bins];
    for r in records {
        let b = spec.bin_of(r.loss.as_f64());
        if r.correct {
            correct[b] += 1;
        } else {
            incorrect[b] += 1;
        }
    }
    let normalise = |counts: Vec<usize>| {
        let n: usize = counts.iter().sum();
        (n > 0).then(|| counts.iter().map(|&c| c as f64 / n as f64).collect::<Vec<_>>())
    };
    let n_correct = correct.iter().sum();
    let n_incorrect = incorrect.iter().sum();
    Ok(LossHistogram { spec, correct: normalise(correct), incorrect: normalise(incorrect), n_correct, n_incorrect })
}

pub const HISTOGRAM_HEADER: &str = "bin_low,bin_high,density_correct,density_incorrect";

/// One row per bin; an empty partition leaves its column empty.
pub fn histogram_csv(h: &LossHistogram) -> String {
    let mut s = format!("{HISTOGRAM_HEADER}\n");
    for b in 0..h.spec.bins {
        let (lo, hi) = h.spec.edges(b);
        let c = h.correct.as_ref().map(|d| d[b]);
        let i = h.incorrect.as_ref().map(|d| d[b]);
        s.push_str(&format!("{lo},{hi},{},{}\n", opt(c), opt(i)));
    }
    s
}

/// Evaluation of one sample at every (model, epoch) snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace<T> {
    pub sample_id: usize,
    pub label: usize,
    pub models: usize,
    pub epochs: usize,
    cells: Vec<SampleRecord<T>>,
}

impl<T: Scalar> SampleTrace<T> {
    /// `model` is 0-based, `epoch` 1-based.
    pub fn cell(&self, model: usize, epoch: usize) -> Option<&SampleRecord<T>> {
        if model >= self.models || epoch == 0 || epoch > self.epochs {
            return None;
        }
        self.cells.get(model * self.epochs + epoch - 1)
    }

    pub fn classes(&self) -> usize {
        self.cells[0].probs.len()
    }
}

fn cohort_epochs<T: Scalar>(cohort: &[CheckpointSet<T>]) -> Result<usize> {
    let first = cohort.first().ok_or_else(|| DynamicsError::IncompleteCohort("no models".into()))?;
    let epochs = first.snapshots.len();
    if epochs == 0 {
        return Err(DynamicsError::IncompleteCohort("model 0 has no checkpoints".into()));
    }
    for (m, run) in cohort.iter().enumerate() {
        if run.snapshots.len() != epochs {
            return Err(DynamicsError::IncompleteCohort(format!(
                "model {m} has {} checkpoints, model 0 has {epochs}",
                run.snapshots.len()
            )));
        }
    }
    Ok(epochs)
}

/// Traces several samples at once (one batched evaluation per snapshot).
pub fn trace_samples<T: Scalar>(
    cohort: &[CheckpointSet<T>],
    sample_ids: &[usize],
    data: &LabeledDataset<T>,
) -> Result<Vec<SampleTrace<T>>> {
    let epochs = cohort_epochs(cohort)?;
    if let Some(&bad) = sample_ids.iter().find(|&&i| i >= data.len()) {
        return Err(DynamicsError::InvalidArgument(format!("sample id {bad} out of range (dataset has {})", data.len())));
    }
    let subset = data.select(sample_ids).map_err(|e| DynamicsError::InvalidArgument(e.to_string()))?;
    let mut traces: Vec<SampleTrace<T>> = sample_ids
        .iter()
        .map(|&id| SampleTrace {
            sample_id: id,
            label: data.labels()[id],
            models: cohort.len(),
            epochs,
            cells: Vec::with_capacity(cohort.len() * epochs),
        })
        .collect();
    for run in cohort {
        for params in &run.snapshots {
            let ev = evaluate(&run.arch, params, &subset)?;
            for (t, r) in traces.iter_mut().zip(ev.records) {
                t.cells.push(r);
            }
        }
    }
    Ok(traces)
}

pub fn trace_sample<T: Scalar>(
    cohort: &[CheckpointSet<T>],
    sample_id: usize,
    data: &LabeledDataset<T>,
) -> Result<SampleTrace<T>> {
    Ok(trace_samples(cohort, &[sample_id], data)?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

/// Stable iff every model predicts the same class at `epoch` (1-based).
pub fn classify_stability<T: Scalar>(trace: &SampleTrace<T>, epoch: usize) -> Result<Stability> {
    let mut predicted = (0..trace.models).map(|m| {
        trace
            .cell(m, epoch)
            .map(|c| c.predicted)
            .ok_or_else(|| DynamicsError::InvalidArgument(format!("epoch {epoch} not in trace")))
    });
    let first = predicted.next().transpose()?;
    for p in predicted {
        if Some(p?) != first {
            return Ok(Stability::Unstable);
        }
    }
    Ok(Stability::Stable)
}

pub fn trace_csv<T: Scalar>(trace: &SampleTrace<T>) -> String {
    let classes = trace.classes();
    let mut s = String::from("model,epoch");
    for c in 0..classes {
        s.push_str(&format!(",class_{c}"));
    }
    s.push_str(",loss,predicted,correct\n");
    for m in 0..trace.models {
        for e in 1..=trace.epochs {
            let cell = trace.cell(m, e).expect("dense grid");
            s.push_str(&format!("{m},{e}"));
            for p in cell.probs.as_slice() {
                s.push_str(&format!(",{}", p.as_f64()));
            }
            s.push_str(&format!(",{},{},{}\n", cell.loss.as_f64(), cell.predicted, cell.correct));
        }
    }
    s
}
