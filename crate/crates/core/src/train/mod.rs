//! Training runs, evaluation and cohorts of independently trained models.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::nn::{backward, forward, init_params, ArchitectureSpec, Mode, NnError, ParameterVector};
use crate::scalar::Scalar;
use crate::tensor::ProbVector;

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Epochs for consensus cohorts.
pub const DEFAULT_EPOCHS: usize = 20;
/// Epochs for the overfitting (loss decomposition) run.
pub const DEFAULT_OVERFIT_EPOCHS: usize = 100;

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 250;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { epochs: DEFAULT_EPOCHS, batch_size: DEFAULT_BATCH_SIZE, learning_rate: DEFAULT_LEARNING_RATE }
    }
}

/// One training run: architecture, seed, hyperparameters and the data it sees.
#[derive(Clone, Debug)]
pub struct TrainConfig<'a, T> {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub train: &'a LabeledDataset<T>,
    pub validation: &'a LabeledDataset<T>,
}

impl<T: Scalar> TrainConfig<'_, T> {
    fn validate(&self) -> Result<(), TrainError> {
        let h = &self.hyper;
        if h.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if h.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(h.learning_rate > 0.0 && h.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate {} must be positive", h.learning_rate)));
        }
        for (name, data) in [("training", self.train), ("validation", self.validation)] {
            if data.classes() != self.arch.classes() {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} data has {} classes but the network outputs {}",
                    data.classes(),
                    self.arch.classes()
                )));
            }
            if data.sample_shape().len() != self.arch.input().len() {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} samples have shape {} but the network expects {}",
                    data.sample_shape(),
                    self.arch.input()
                )));
            }
        }
        Ok(())
    }
}

/// Metrics of one completed epoch, all computed in eval mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Per-epoch parameter snapshots of one run plus aligned metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSet<T> {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    /// `snapshots[e]` holds the parameters after `e + 1` full passes.
    pub snapshots: Vec<ParameterVector<T>>,
    pub metrics: Vec<EpochMetrics>,
}

impl<T: Scalar> CheckpointSet<T> {
    pub fn epochs(&self) -> usize {
        self.snapshots.len()
    }

    /// Parameters after the given 1-based epoch.
    pub fn at_epoch(&self, epoch: usize) -> Option<&ParameterVector<T>> {
        epoch.checked_sub(1).and_then(|i| self.snapshots.get(i))
    }

    pub fn last(&self) -> &ParameterVector<T> {
        self.snapshots.last().expect("checkpoint set has at least one snapshot")
    }
}

/// Per-sample evaluation result.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord<T> {
    pub probs: ProbVector<T>,
    pub loss: T,
    pub predicted: usize,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub records: Vec<SampleRecord<T>>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn probs(&self) -> Vec<ProbVector<T>> {
        self.records.iter().map(|r| r.probs.clone()).collect()
    }
}

/// Eval-mode predictions, losses and accuracy over a whole dataset.
pub fn evaluate<T: Scalar>(
    arch: &ArchitectureSpec,
    params: &ParameterVector<T>,
    data: &LabeledDataset<T>,
) -> Result<Evaluation<T>, NnError> {
    if data.classes() != arch.classes() {
        return Err(NnError::Shape(format!(
            "dataset has {} classes, network outputs {}",
            data.classes(),
            arch.classes()
        )));
    }
    // Eval mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(data.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.images().gather_rows(chunk);
        let out = forward(arch, params, &batch, Mode::Eval, &mut rng)?;
        for (probs, &i) in out.probs.into_iter().zip(chunk) {
            let label = data.labels()[i];
            let loss = crate::nn::cross_entropy(&probs, label)?;
            let predicted = probs.argmax();
            records.push(SampleRecord { probs, loss, predicted, correct: predicted == label });
        }
    }
    let n = records.len() as f64;
    let mean_loss = records.iter().map(|r| r.loss.as_f64()).sum::<f64>() / n;
    let accuracy = records.iter().filter(|r| r.correct).count() as f64 / n;
    Ok(Evaluation { mean_loss, accuracy, records })
}

fn epoch_metrics<T: Scalar>(
    config: &TrainConfig<'_, T>,
    params: &ParameterVector<T>,
    epoch: usize,
) -> Result<EpochMetrics, NnError> {
    let tr = evaluate(&config.arch, params, config.train)?;
    let va = evaluate(&config.arch, params, config.validation)?;
    Ok(EpochMetrics {
        epoch,
        train_loss: tr.mean_loss,
        train_accuracy: tr.accuracy,
        val_loss: va.mean_loss,
        val_accuracy: va.accuracy,
    })
}

/// Mini-batch SGD. Batches are reshuffled every epoch from the run seed; a
/// snapshot and eval-mode metrics are recorded after every epoch.
pub fn train<T: Scalar>(config: &TrainConfig<'_, T>) -> Result<CheckpointSet<T>, TrainError> {
    config.validate()?;
    let arch = &config.arch;
    let mut params = init_params::<T>(arch, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let lr = T::of(config.hyper.learning_rate);
    let mut order: Vec<usize> = (0..config.train.len()).collect();
    let mut snapshots = Vec::with_capacity(config.hyper.epochs);
    let mut metrics = Vec::with_capacity(config.hyper.epochs);
    for epoch in 1..=config.hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.hyper.batch_size) {
            let batch = config.train.images().gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| config.train.labels()[i]).collect();
            let (loss, grad) = backward(arch, &params, &batch, &labels, Mode::Train, &mut rng)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            params.apply_step(&grad, lr)?;
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }
        let m = epoch_metrics(config, &params, epoch)?;
        if !m.train_loss.is_finite() || !m.val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        metrics.push(m);
        snapshots.push(params.clone());
    }
    Ok(CheckpointSet { arch: arch.clone(), seed: config.seed, snapshots, metrics })
}

/// Trains every config independently (in parallel when a thread pool is
/// available). Output order follows input order.
pub fn train_cohort<T: Scalar>(configs: &[TrainConfig<'_, T>]) -> Result<Vec<CheckpointSet<T>>, TrainError> {
    if configs.is_empty() {
        return Err(TrainError::InvalidConfig("cohort is empty".into()));
    }
    let classes = configs[0].arch.classes();
    if let Some(i) = configs.iter().position(|c| c.arch.classes() != classes) {
        return Err(TrainError::Run {
            run: i,
            source: Box::new(TrainError::InvalidConfig(format!("cohort mixes {classes}-class and other outputs"))),
        });
    }
    configs
        .par_iter()
        .enumerate()
        .map(|(run, c)| train(c).map_err(|e| TrainError::Run { run, source: Box::new(e) }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::nn::{LayerSpec, Shape3};

    fn tiny_mlp(dim: usize, classes: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(
            Shape3::flat(dim),
            vec![LayerSpec::Dense { units: 8 }, LayerSpec::Relu, LayerSpec::SoftmaxOutput { classes }],
        )
        .unwrap()
    }

    fn config<'a>(data: &'a LabeledDataset<f64>, epochs: usize, seed: u64) -> TrainConfig<'a, f64> {
        TrainConfig {
            arch: tiny_mlp(2, 2),
            seed,
            hyper: Hyperparams { epochs, batch_size: 8, learning_rate: 0.05 },
            train: data,
            validation: data,
        }
    }

    #[test]
    fn separable_blobs_are_fit_perfectly() {
        let data = synthetic_blobs::<f64>(2, 50, 2, 10.0, 3).unwrap();
        let run = train(&config(&data, 20, 1)).unwrap();
        assert_eq!(run.metrics.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn indistinguishable_classes_stay_near_chance() {
        let data = synthetic_blobs::<f64>(2, 50, 2, 0.0, 3).unwrap();
        let held_out = synthetic_blobs::<f64>(2, 500, 2, 0.0, 4).unwrap();
        let run = train(&TrainConfig { validation: &held_out, ..config(&data, 20, 1) }).unwrap();
        let acc = run.metrics.last().unwrap().val_accuracy;
        assert!((acc - 0.5).abs() < 0.08, "held-out accuracy {acc}");
    }

    #[test]
    fn one_epoch_one_snapshot_and_determinism() {
        let data = synthetic_blobs::<f64>(3, 10, 2, 5.0, 0).unwrap();
        let mut cfg = config(&data, 1, 9);
        cfg.arch = tiny_mlp(2, 3);
        let a = train(&cfg).unwrap();
        assert_eq!(a.epochs(), 1);
        assert_eq!(a.metrics.len(), 1);
        assert_eq!(a.metrics[0].epoch, 1);
        cfg.hyper.epochs = 3;
        assert_eq!(train(&cfg).unwrap(), train(&cfg).unwrap());
    }

    #[test]
    fn stored_metrics_are_reproduced_by_reevaluation() {
        let data = synthetic_blobs::<f32>(2, 30, 3, 2.0, 5).unwrap();
        let cfg = TrainConfig {
            arch: ArchitectureSpec::wide_mlp(Shape3::flat(3), 2).unwrap(),
            seed: 4,
            hyper: Hyperparams { epochs: 4, batch_size: 7, learning_rate: 0.1 },
            train: &data,
            validation: &data,
        };
        let run = train(&cfg).unwrap();
        for (snap, m) in run.snapshots.iter().zip(&run.metrics) {
            let before = snap.clone();
            let ev = evaluate(&run.arch, snap, &data).unwrap();
            assert_eq!(ev.mean_loss, m.val_loss);
            assert_eq!(ev.accuracy, m.val_accuracy);
            assert_eq!(*snap, before);
        }
    }

    #[test]
    fn evaluate_zero_network_is_uniform() {
        let data = synthetic_blobs::<f64>(4, 3, 4, 1.0, 0).unwrap();
        let arch = ArchitectureSpec::deep_mlp(Shape3::flat(4), 4).unwrap();
        let ev = evaluate(&arch, &ParameterVector::zeros(&arch), &data).unwrap();
        for r in &ev.records {
            assert_eq!(r.probs.as_slice(), &[0.25; 4]);
            assert_eq!(r.loss, 4f64.ln());
            assert_eq!(r.predicted, 0);
        }
        assert_eq!(ev.mean_loss, 4f64.ln());
    }

    #[test]
    fn evaluate_single_sample_and_mean_consistency() {
        let data = synthetic_blobs::<f64>(3, 40, 3, 1.0, 2).unwrap();
        let arch = tiny_mlp(3, 3);
        let params = init_params::<f64>(&arch, 3);
        let ev = evaluate(&arch, &params, &data).unwrap();
        let mean = ev.records.iter().map(|r| r.loss).sum::<f64>() / data.len() as f64;
        assert!((mean - ev.mean_loss).abs() < 1e-9);
        let correct = ev.records.iter().filter(|r| r.correct).count() as f64;
        assert_eq!(ev.accuracy, correct / data.len() as f64);
        let one = data.select(&[5]).unwrap();
        let single = evaluate(&arch, &params, &one).unwrap();
        assert!(single.accuracy == 0.0 || single.accuracy == 1.0);
        assert_eq!(single.records[0], ev.records[5]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let data = synthetic_blobs::<f64>(2, 5, 2, 1.0, 0).unwrap();
        for hyper in [
            Hyperparams { epochs: 0, ..Hyperparams::default() },
            Hyperparams { batch_size: 0, ..Hyperparams::default() },
            Hyperparams { learning_rate: 0.0, ..Hyperparams::default() },
        ] {
            let cfg = TrainConfig { hyper, ..config(&data, 1, 0) };
            assert!(matches!(train(&cfg), Err(TrainError::InvalidConfig(_))));
        }
        let cfg = TrainConfig { arch: tiny_mlp(2, 3), ..config(&data, 1, 0) };
        assert!(matches!(train(&cfg), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = synthetic_blobs::<f32>(2, 20, 2, 10.0, 0).unwrap();
        let cfg = TrainConfig {
            arch: ArchitectureSpec::deep_mlp(Shape3::flat(2), 2).unwrap(),
            seed: 0,
            hyper: Hyperparams { epochs: 5, batch_size: 4, learning_rate: 1e30 },
            train: &data,
            validation: &data,
        };
        assert!(matches!(train(&cfg), Err(TrainError::Diverged { .. })));
    }

    #[test]
    fn cohort_matches_individual_runs_in_any_order() {
        let data = synthetic_blobs::<f64>(2, 20, 2, 3.0, 1).unwrap();
        let configs: Vec<_> = (0..3).map(|s| config(&data, 2, s)).collect();
        let cohort = train_cohort(&configs).unwrap();
        for (c, run) in configs.iter().zip(&cohort) {
            assert_eq!(&train(c).unwrap(), run);
        }
        assert_ne!(cohort[0].last(), cohort[1].last());
        assert_ne!(cohort[1].last(), cohort[2].last());
        let reversed: Vec<_> = configs.iter().rev().cloned().collect();
        let back = train_cohort(&reversed).unwrap();
        assert_eq!(back.into_iter().rev().collect::<Vec<_>>(), cohort);
        assert_eq!(train_cohort(&configs[..1]).unwrap()[0], train(&configs[0]).unwrap());
    }

    #[test]
    fn cohort_errors_are_tagged_with_run_index() {
        let data = synthetic_blobs::<f64>(2, 20, 2, 3.0, 1).unwrap();
        let mut configs: Vec<_> = (0..3).map(|s| config(&data, 1, s)).collect();
        configs[2].hyper.batch_size = 0;
        assert!(matches!(train_cohort(&configs), Err(TrainError::Run { run: 2, .. })));
        assert!(train_cohort::<f64>(&[]).is_err());
    }
}
