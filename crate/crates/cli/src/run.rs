//! Executes a validated config and records every artifact in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use concord::consensus::{classify_all, compare_individual_vs_combined, decisions_csv, sweep_csv, ConsensusError, ModelId};
use concord::data::{subsample, synthetic_blobs, MnistFiles};
use concord::dynamics::{
    classify_stability, decompose_loss, decomposition_csv, histogram_csv, loss_histogram, trace_csv, trace_samples,
    DynamicsError, Stability,
};
use concord::io::write_atomic;
use concord::landscape::{interpolation_csv, interpolation_sweep};
use concord::nn::{cross_entropy, scale_logits, softmax};
use concord::train::checkpoint::{checkpoint_file_name, encode_checkpoint, load_run, metrics_csv, CheckpointError, METRICS_FILE};
use concord::train::{evaluate, train_cohort};
use concord::{CheckpointSet32, DatasetError, LabeledDataset32, NnError, ProbVector32, TrainConfig, TrainError};

use crate::config::{ConfigErrors, DataSource, ExperimentConfig, ExperimentKind, DATA_DIR_VAR};
use crate::manifest::{sha256_hex, Manifest, CONFIG_FILE, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset: {0}")]
    Data(#[from] DatasetError),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub manifest: Manifest,
    /// Short human-readable findings, one per line.
    pub notes: Vec<String>,
}

struct Data {
    train: LabeledDataset32,
    eval: LabeledDataset32,
}

/// Collects artifact bytes in memory; nothing touches disk until
/// [`Outputs::commit`].
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
    seeds: Vec<(String, u64)>,
    notes: Vec<String>,
}

impl Outputs {
    fn add(&mut self, rel: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        let rel = rel.into();
        let previous = self.files.insert(rel.clone(), bytes.into());
        debug_assert!(previous.is_none(), "artifact {rel} emitted twice");
    }

    fn add_run(&mut self, prefix: &str, run: &CheckpointSet32) -> Result<(), RunError> {
        for (i, snap) in run.snapshots.iter().enumerate() {
            self.add(format!("{prefix}/{}", checkpoint_file_name(i + 1)), encode_checkpoint(&run.arch, run.seed, i + 1, snap)?);
        }
        self.add(format!("{prefix}/{METRICS_FILE}"), metrics_csv(&run.metrics));
        Ok(())
    }

    fn commit(self, cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
        // The output directory is left out so that the same experiment run
        // into two directories yields the same manifest.
        let mut table = cfg.to_table();
        table.remove("out");
        let config_text = toml::to_string(&table).expect("a toml::Table always serializes");
        let mut manifest = Manifest {
            kind: cfg.kind.name().to_string(),
            config_hash: sha256_hex(config_text.as_bytes()),
            seeds: self.seeds,
            artifacts: BTreeMap::new(),
        };
        let write = |rel: &str, bytes: &[u8]| -> Result<(), RunError> {
            let path = cfg.out.join(rel);
            let io = |source| RunError::Io { path: path.clone(), source };
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io)?;
            }
            write_atomic(&path, bytes).map_err(io)
        };
        for (rel, bytes) in &self.files {
            write(rel, bytes)?;
            manifest.artifacts.insert(rel.clone(), sha256_hex(bytes));
        }
        write(CONFIG_FILE, config_text.as_bytes())?;
        // Last, so a manifest on disk implies all its artifacts are too.
        write(MANIFEST_FILE, manifest.render().as_bytes())?;
        Ok(RunSummary { manifest, notes: self.notes })
    }
}

/// Runs the experiment and writes its artifacts under `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let mut out = Outputs::default();
    if cfg.kind == ExperimentKind::ScaleDemo {
        scale_demo(cfg, &mut out)?;
        return out.commit(cfg);
    }
    let data = load_data(&cfg.dataset)?;
    match cfg.kind {
        ExperimentKind::TrainCohort => {
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            for (i, run) in runs.iter().enumerate() {
                out.add_run(&format!("run_{i}"), run)?;
                let last = run.metrics.last().expect("at least one epoch");
                out.notes.push(format!("run_{i} ({}): final val accuracy {:.4}", run.arch, last.val_accuracy));
            }
        }
        ExperimentKind::Sweep => {
            let rates: Vec<Option<f64>> = match cfg.cohort.dropout.len() {
                0 | 1 => vec![cfg.cohort.dropout.first().copied()],
                _ => cfg.cohort.dropout.iter().copied().map(Some).collect(),
            };
            let multi = rates.len() > 1;
            for rate in rates {
                let suffix = match rate {
                    Some(r) if multi => format!("_dropout_{r}"),
                    _ => String::new(),
                };
                let runs = obtain_cohort(cfg, &data, rate, &suffix, &mut out)?;
                let probs = final_probs(&runs, &data.eval)?;
                let rows = compare_individual_vs_combined(&probs, data.eval.labels(), &cfg.sweep.thresholds)?;
                out.add(format!("sweep{suffix}.csv"), sweep_csv(&rows));
                if let Some(p_t) = cfg.sweep.decisions_at {
                    out.add(format!("decisions{suffix}.csv"), decisions_csv(&classify_all(&probs, data.eval.labels(), p_t)?));
                }
            }
        }
        ExperimentKind::Compare => {
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            let probs = final_probs(&runs, &data.eval)?;
            let rows = compare_individual_vs_combined(&probs, data.eval.labels(), &cfg.sweep.thresholds)?;
            out.add("compare.csv", sweep_csv(&rows));
            let mut margins = String::from("p_t,model_id,margin\n");
            let mut worst = f64::INFINITY;
            for &t in &cfg.sweep.thresholds {
                let at: Vec<_> = rows.iter().filter(|r| r.point.threshold == t).collect();
                let combined = at.iter().find(|r| r.model == ModelId::Combined).and_then(|r| r.point.conditional_accuracy);
                for r in at.iter().filter(|r| r.model != ModelId::Combined) {
                    let margin = combined.zip(r.point.conditional_accuracy).map(|(c, s)| c - s);
                    if let Some(m) = margin {
                        worst = worst.min(m);
                    }
                    margins.push_str(&format!("{t},{},{}\n", r.model, margin.map(|m| m.to_string()).unwrap_or_default()));
                }
            }
            out.add("margins.csv", margins);
            if worst.is_finite() {
                out.notes.push(format!("smallest combined-minus-individual margin: {:+.2} points", 100.0 * worst));
            }
        }
        ExperimentKind::Decompose => {
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            for (i, run) in runs.iter().enumerate() {
                let series = decompose_loss(run, &data.eval)?;
                out.add(format!("decomposition_run_{i}.csv"), decomposition_csv(&series));
                out.add(format!("metrics_run_{i}.csv"), metrics_csv(&run.metrics));
                let slope = |s| series.final_third_slope(s).map_or("n/a".into(), |v| format!("{v:+.3e}"));
                out.notes.push(format!(
                    "run_{i}: final-third slope incorrect {} correct {}",
                    slope(concord::dynamics::Subset::Incorrect),
                    slope(concord::dynamics::Subset::Correct)
                ));
            }
        }
        ExperimentKind::Histogram => {
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            for (i, run) in runs.iter().enumerate() {
                let epochs = if cfg.histogram.epochs.is_empty() { vec![run.snapshots.len()] } else { cfg.histogram.epochs.clone() };
                for e in epochs {
                    let params = run.at_epoch(e).ok_or_else(|| {
                        ConfigErrors::single("histogram.epochs", format!("run_{i} has no epoch {e}"))
                    })?;
                    let ev = evaluate(&run.arch, params, &data.eval)?;
                    let h = loss_histogram(&ev.records, cfg.histogram.spec)?;
                    out.add(format!("histogram_run_{i}_epoch_{e:03}.csv"), histogram_csv(&h));
                    out.notes.push(format!("run_{i} epoch {e}: intersection {:.4}", h.intersection()));
                }
            }
        }
        ExperimentKind::Trace => {
            for &s in &cfg.trace_samples {
                if s >= data.eval.len() {
                    return Err(ConfigErrors::single("trace.samples", format!("sample {s} is outside the {} evaluation samples", data.eval.len())).into());
                }
            }
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            let traces = trace_samples(&runs, &cfg.trace_samples, &data.eval)?;
            let mut stability = String::from("sample_id,label,epoch,stability\n");
            for t in &traces {
                let name = format!("trace_sample_{}.csv", t.sample_id);
                if !out.files.contains_key(&name) {
                    out.add(name, trace_csv(t));
                    let st = match classify_stability(t, t.epochs)? {
                        Stability::Stable => "stable",
                        Stability::Unstable => "unstable",
                    };
                    stability.push_str(&format!("{},{},{},{st}\n", t.sample_id, t.label, t.epochs));
                }
            }
            out.add("stability.csv", stability);
        }
        ExperimentKind::Interpolate => {
            let runs = obtain_cohort(cfg, &data, cfg.cohort.dropout.first().copied(), "", &mut out)?;
            let [a, b] = &runs[..] else {
                return Err(ConfigErrors::single("cohort", format!("interpolate needs exactly two runs, got {}", runs.len())).into());
            };
            if a.arch != b.arch {
                return Err(ConfigErrors::single("cohort", "interpolated runs must share one architecture").into());
            }
            let points = interpolation_sweep(a.last(), b.last(), &cfg.alphas, &a.arch, &data.eval)?;
            out.add("interpolation.csv", interpolation_csv(&points));
        }
        ExperimentKind::ScaleDemo => unreachable!("handled above"),
    }
    out.commit(cfg)
}

fn scale_demo(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let d = &cfg.scale_demo;
    let scaled = scale_logits(&d.logits, d.factor)?;
    let p = softmax(&d.logits)?;
    let q = softmax(&scaled)?;
    let row = |name: &str, v: &[f64]| format!("{name},{}\n", v.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let header: Vec<String> = (0..d.logits.len()).map(|c| format!("class_{c}")).collect();
    let mut table = format!("quantity,{}\n", header.join(","));
    table += &row("logits", &d.logits);
    table += &row("scaled_logits", &scaled);
    table += &row("probs", p.as_slice());
    table += &row("scaled_probs", q.as_slice());
    let mut losses = String::from("label,loss,scaled_loss\n");
    for &l in &d.labels {
        losses.push_str(&format!("{l},{},{}\n", cross_entropy(&p, l)?, cross_entropy(&q, l)?));
    }
    out.add("scale_demo.csv", table);
    out.add("scale_demo_losses.csv", losses);
    Ok(())
}

fn load_data(source: &DataSource) -> Result<Data, RunError> {
    match source {
        DataSource::Mnist { root, train_size, eval_size, subset_seed, stratified } => {
            let root = match root {
                Some(r) => r.clone(),
                None => std::env::var_os(DATA_DIR_VAR).map(PathBuf::from).ok_or_else(|| {
                    ConfigErrors::single("dataset.root", format!("not set and ${DATA_DIR_VAR} is unset"))
                })?,
            };
            let files = MnistFiles::in_dir(&root);
            if !files.exist() {
                return Err(ConfigErrors::single("dataset.root", format!("{} lacks the four MNIST IDX files", root.display())).into());
            }
            let full = files.load_train::<f32>()?;
            let train = subsample(&full, *train_size, *subset_seed, *stratified)?;
            let test = files.load_test::<f32>()?;
            let eval = match eval_size {
                Some(n) => subsample(&test, *n, *subset_seed, *stratified)?,
                None => test,
            };
            Ok(Data { train, eval })
        }
        DataSource::Blobs { classes, per_class, eval_per_class, dim, separation, seed } => Ok(Data {
            train: synthetic_blobs(*classes, *per_class, *dim, *separation, *seed)?,
            eval: synthetic_blobs(*classes, *eval_per_class, *dim, *separation, seed.wrapping_add(1))?,
        }),
    }
}

/// Trains the configured cohort (with `dropout` applied) or loads it from
/// `cohort.dir`. Seeds are recorded under `run_{i}{suffix}`.
fn obtain_cohort(
    cfg: &ExperimentConfig,
    data: &Data,
    dropout: Option<f64>,
    suffix: &str,
    out: &mut Outputs,
) -> Result<Vec<CheckpointSet32>, RunError> {
    let runs = match &cfg.cohort.dir {
        Some(dir) => load_cohort(dir, data)?,
        None => {
            let shape = data.train.sample_shape();
            let mut issues = Vec::new();
            let mut archs = Vec::new();
            for (i, choice) in cfg.cohort.architectures.iter().enumerate() {
                let field = format!("cohort.architectures[{i}]");
                match choice.build(shape, data.train.classes()) {
                    Ok(a) if a.input() != shape || a.classes() != data.train.classes() => issues.push((
                        field,
                        format!("expects {} inputs and {} classes; data has {shape} and {}", a.input(), a.classes(), data.train.classes()),
                    )),
                    Ok(a) => match dropout {
                        Some(r) => match a.with_dropout(r) {
                            Ok(a) => archs.push(a),
                            Err(e) => issues.push((field, e.to_string())),
                        },
                        None => archs.push(a),
                    },
                    Err(e) => issues.push((field, e.to_string())),
                }
            }
            if !issues.is_empty() {
                return Err(ConfigErrors(
                    issues.into_iter().map(|(field, message)| crate::config::ConfigIssue { field, message }).collect(),
                )
                .into());
            }
            let configs: Vec<TrainConfig<f32>> = archs
                .into_iter()
                .zip(&cfg.cohort.seeds)
                .map(|(arch, &seed)| TrainConfig { arch, seed, hyper: cfg.hyper, train: &data.train, validation: &data.eval })
                .collect();
            let runs = train_cohort(&configs)?;
            if cfg.cohort.save && cfg.kind != ExperimentKind::TrainCohort {
                for (i, run) in runs.iter().enumerate() {
                    out.add_run(&format!("run_{i}{suffix}"), run)?;
                }
            }
            runs
        }
    };
    for (i, run) in runs.iter().enumerate() {
        out.seeds.push((format!("run_{i}{suffix}"), run.seed));
    }
    Ok(runs)
}

fn load_cohort(dir: &Path, data: &Data) -> Result<Vec<CheckpointSet32>, RunError> {
    let mut runs = Vec::new();
    while dir.join(format!("run_{}", runs.len())).is_dir() {
        let run = load_run::<f32>(&dir.join(format!("run_{}", runs.len())))?;
        if run.arch.input() != data.eval.sample_shape() || run.arch.classes() != data.eval.classes() {
            return Err(ConfigErrors::single(
                "cohort.dir",
                format!("run_{} ({}) does not fit the evaluation data", runs.len(), run.arch),
            )
            .into());
        }
        runs.push(run);
    }
    if runs.is_empty() {
        return Err(ConfigErrors::single("cohort.dir", format!("no run_0 directory in {}", dir.display())).into());
    }
    Ok(runs)
}

fn final_probs(runs: &[CheckpointSet32], data: &LabeledDataset32) -> Result<Vec<Vec<ProbVector32>>, RunError> {
    runs.iter().map(|r| Ok(evaluate(&r.arch, r.last(), data)?.probs())).collect()
}
