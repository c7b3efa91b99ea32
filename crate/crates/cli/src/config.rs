//! Experiment configuration: one TOML file plus command-line overrides.
//!
//! [`validate_config`] never stops at the first problem. It walks every
//! field, collects all violations, and only returns a config when the list
//! is empty.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use concord::dynamics::HistogramSpec;
use concord::train::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, DEFAULT_OVERFIT_EPOCHS};
use concord::{ArchitectureSpec, Hyperparams, NnError, Shape3};
use toml::{Table, Value};

/// Environment variable naming the directory with the four MNIST IDX files.
pub const DATA_DIR_VAR: &str = "CONCORD_DATA_DIR";

pub const DEFAULT_TRAIN_SIZE: usize = 1000;
pub const DEFAULT_SCALE_LOGITS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
pub const DEFAULT_SCALE_FACTOR: f64 = 1.25;
pub const DEFAULT_SCALE_LABELS: [usize; 2] = [3, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    TrainCohort,
    Sweep,
    Compare,
    Decompose,
    Histogram,
    Trace,
    Interpolate,
    ScaleDemo,
}

impl ExperimentKind {
    pub const ALL: [Self; 8] = [
        Self::TrainCohort,
        Self::Sweep,
        Self::Compare,
        Self::Decompose,
        Self::Histogram,
        Self::Trace,
        Self::Interpolate,
        Self::ScaleDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TrainCohort => "train-cohort",
            Self::Sweep => "sweep",
            Self::Compare => "compare",
            Self::Decompose => "decompose",
            Self::Histogram => "histogram",
            Self::Trace => "trace",
            Self::Interpolate => "interpolate",
            Self::ScaleDemo => "scale-demo",
        }
    }

    pub fn uses_data(self) -> bool {
        self != Self::ScaleDemo
    }

    fn default_architectures(self) -> Vec<ArchChoice> {
        use NamedArch::*;
        let named = |v: &[NamedArch]| v.iter().copied().map(ArchChoice::Named).collect();
        match self {
            Self::Decompose | Self::Histogram => named(&[DeepMlp]),
            Self::Interpolate => named(&[ReferenceCnn, ReferenceCnn]),
            _ => named(&[ReferenceCnn, WideMlp, DeepMlp]),
        }
    }

    fn default_epochs(self) -> usize {
        match self {
            Self::Decompose | Self::Histogram => DEFAULT_OVERFIT_EPOCHS,
            _ => DEFAULT_EPOCHS,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown kind `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamedArch {
    ReferenceCnn,
    WideMlp,
    DeepMlp,
}

/// A cohort member: one of the built-in architectures, sized to the data at
/// run time, or a full text descriptor.
#[derive(Clone, Debug, PartialEq)]
pub enum ArchChoice {
    Named(NamedArch),
    Descriptor(ArchitectureSpec),
}

impl ArchChoice {
    pub fn build(&self, input: Shape3, classes: usize) -> Result<ArchitectureSpec, NnError> {
        match self {
            Self::Named(NamedArch::ReferenceCnn) => ArchitectureSpec::reference_cnn(input, classes),
            Self::Named(NamedArch::WideMlp) => ArchitectureSpec::wide_mlp(input, classes),
            Self::Named(NamedArch::DeepMlp) => ArchitectureSpec::deep_mlp(input, classes),
            Self::Descriptor(arch) => Ok(arch.clone()),
        }
    }
}

impl fmt::Display for ArchChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Named(NamedArch::ReferenceCnn) => f.write_str("reference-cnn"),
            Self::Named(NamedArch::WideMlp) => f.write_str("wide-mlp"),
            Self::Named(NamedArch::DeepMlp) => f.write_str("deep-mlp"),
            Self::Descriptor(arch) => write!(f, "{arch}"),
        }
    }
}

impl FromStr for ArchChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference-cnn" => Ok(Self::Named(NamedArch::ReferenceCnn)),
            "wide-mlp" => Ok(Self::Named(NamedArch::WideMlp)),
            "deep-mlp" => Ok(Self::Named(NamedArch::DeepMlp)),
            _ if s.starts_with("input=") => s.parse().map(Self::Descriptor).map_err(|e: NnError| e.to_string()),
            _ => Err(format!("`{s}` is neither reference-cnn, wide-mlp, deep-mlp nor an `input=...` descriptor")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A subsample of the MNIST training set; evaluation on the test set
    /// (optionally subsampled with the same seed).
    Mnist { root: Option<PathBuf>, train_size: usize, eval_size: Option<usize>, subset_seed: u64, stratified: bool },
    /// Gaussian blobs; the evaluation set is drawn with `seed + 1`.
    Blobs { classes: usize, per_class: usize, eval_per_class: usize, dim: usize, separation: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortSpec {
    pub architectures: Vec<ArchChoice>,
    pub seeds: Vec<u64>,
    /// Empty means the architectures as given. Several rates (sweep only)
    /// train one cohort per rate.
    pub dropout: Vec<f64>,
    /// Stored runs (`run_0`, `run_1`, ...) to analyse instead of training.
    pub dir: Option<PathBuf>,
    /// Also write the checkpoints of freshly trained runs.
    pub save: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub decisions_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramConfig {
    /// 1-based epochs; empty means the final epoch only.
    pub epochs: Vec<usize>,
    pub spec: HistogramSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleDemoConfig {
    pub logits: Vec<f64>,
    pub factor: f64,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DataSource,
    pub cohort: CohortSpec,
    pub hyper: Hyperparams,
    pub sweep: SweepConfig,
    pub trace_samples: Vec<usize>,
    pub histogram: HistogramConfig,
    pub alphas: Vec<f64>,
    pub scale_demo: ScaleDemoConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid config:{}", .0.iter().map(|i| format!("\n  {i}")).collect::<String>())]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self(vec![ConfigIssue { field: field.into(), message: message.into() }])
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|i| i.field == field)
    }
}

/// Command-line values that replace whatever the file says.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub dropout: Option<Vec<f64>>,
}

impl Overrides {
    /// Writes the overrides into `table`. Fails only for values TOML
    /// cannot hold.
    pub fn apply(&self, table: &mut Table) -> Result<(), ConfigErrors> {
        let int = |field: &str, v: u64| {
            i64::try_from(v).map(Value::Integer).map_err(|_| ConfigErrors::single(field, "value too large"))
        };
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        if let Some(k) = self.kind {
            if let Some(Value::String(s)) = table.get("kind") {
                if s != k.name() {
                    return Err(ConfigErrors::single("kind", format!("config file says `{s}` but `{k}` was requested")));
                }
            }
            table.insert("kind".into(), Value::String(k.name().into()));
        }
        if let Some(out) = &self.out {
            table.insert("out".into(), Value::String(out.to_string_lossy().into_owned()));
        }
        if let Some(seed) = self.seed {
            table.insert("seed".into(), int("seed", seed)?);
        }
        if let Some(e) = self.epochs {
            section(table, "train").insert("epochs".into(), int("train.epochs", e as u64)?);
        }
        if let Some(b) = self.batch_size {
            section(table, "train").insert("batch_size".into(), int("train.batch_size", b as u64)?);
        }
        if let Some(lr) = self.learning_rate {
            section(table, "train").insert("learning_rate".into(), Value::Float(lr));
        }
        if let Some(t) = &self.thresholds {
            section(table, "sweep").insert("thresholds".into(), floats(t));
        }
        if let Some(a) = &self.alphas {
            section(table, "interpolate").insert("alphas".into(), floats(a));
        }
        if let Some(d) = &self.dropout {
            section(table, "cohort").insert("dropout".into(), floats(d));
        }
        Ok(())
    }
}

fn section<'t>(table: &'t mut Table, name: &str) -> &'t mut Table {
    let entry = table.entry(name).or_insert_with(|| Value::Table(Table::new()));
    if !entry.is_table() {
        // Leave the bad value to the validator's type check.
        *entry = Value::Table(Table::new());
    }
    entry.as_table_mut().unwrap()
}

/// Parses and validates a config file with no overrides.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, ConfigErrors> {
    validate_with(raw, &Overrides::default())
}

pub fn validate_with(raw: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigErrors> {
    let mut table: Table = raw.parse().map_err(|e: toml::de::Error| ConfigErrors::single("(file)", e.message()))?;
    overrides.apply(&mut table)?;
    validate_table(&table)
}

const TOP_KEYS: &[&str] =
    &["kind", "seed", "out", "dataset", "cohort", "train", "sweep", "trace", "histogram", "interpolate", "scale_demo"];

pub fn validate_table(table: &Table) -> Result<ExperimentConfig, ConfigErrors> {
    let mut ck = Checker::default();
    let top = Fields { section: "", table: Some(table) };
    ck.unknown_keys(&top, TOP_KEYS);

    let kind = match top.raw("kind") {
        None => {
            ck.push("kind", "missing");
            None
        }
        Some(Value::String(s)) => s.parse().map_err(|e| ck.push("kind", e)).ok(),
        Some(v) => {
            ck.push("kind", format!("expected a string, got {}", v.type_str()));
            None
        }
    };
    let seed = ck.uint(&top, "seed", 0);
    let out = match ck.string(&top, "out") {
        Some(s) if !s.is_empty() => PathBuf::from(s),
        Some(_) => {
            ck.push("out", "must not be empty");
            PathBuf::new()
        }
        None => {
            if top.raw("out").is_none() {
                ck.push("out", "missing (set it in the file or pass --out)");
            }
            PathBuf::new()
        }
    };
    let sub = |name: &'static str, ck: &mut Checker| ck.section(table, name);
    let dataset_t = sub("dataset", &mut ck);
    let cohort_t = sub("cohort", &mut ck);
    let train_t = sub("train", &mut ck);
    let sweep_t = sub("sweep", &mut ck);
    let trace_t = sub("trace", &mut ck);
    let hist_t = sub("histogram", &mut ck);
    let interp_t = sub("interpolate", &mut ck);
    let scale_t = sub("scale_demo", &mut ck);

    // Sections that do not apply to the kind are ignored, so that one file
    // can drive several subcommands.
    let kind_or = kind.unwrap_or(ExperimentKind::ScaleDemo);
    let dataset = if kind_or.uses_data() { read_dataset(&mut ck, &dataset_t) } else { default_dataset() };
    let (cohort, hyper) = if kind_or.uses_data() {
        read_cohort(&mut ck, &cohort_t, &train_t, kind_or, seed)
    } else {
        (CohortSpec { architectures: vec![], seeds: vec![], dropout: vec![], dir: None, save: false }, Hyperparams::default())
    };

    let sweep = if matches!(kind_or, ExperimentKind::Sweep | ExperimentKind::Compare) {
        let thresholds = ck.float_list(&sweep_t, "thresholds").unwrap_or_else(concord::consensus::default_thresholds);
        if thresholds.is_empty() {
            ck.push("sweep.thresholds", "must not be empty");
        }
        for &t in &thresholds {
            if !(0.0..1.0).contains(&t) {
                ck.push("sweep.thresholds", format!("{t} is outside [0, 1)"));
            }
        }
        let decisions_at = ck.opt_float(&sweep_t, "decisions_at");
        if let Some(t) = decisions_at.filter(|t| !(0.0..1.0).contains(t)) {
            ck.push("sweep.decisions_at", format!("{t} is outside [0, 1)"));
        }
        ck.unknown_keys(&sweep_t, &["thresholds", "decisions_at"]);
        SweepConfig { thresholds, decisions_at }
    } else {
        SweepConfig { thresholds: vec![], decisions_at: None }
    };

    let trace_samples = if kind_or == ExperimentKind::Trace {
        let samples = ck.uint_list(&trace_t, "samples").unwrap_or_else(|| vec![0, 1, 2]);
        if samples.is_empty() {
            ck.push("trace.samples", "must not be empty");
        }
        ck.unknown_keys(&trace_t, &["samples"]);
        samples.into_iter().map(|s| s as usize).collect()
    } else {
        vec![]
    };

    let histogram = if kind_or == ExperimentKind::Histogram {
        let d = HistogramSpec::default();
        let spec = HistogramSpec {
            bins: ck.uint(&hist_t, "bins", d.bins as u64) as usize,
            low: ck.float(&hist_t, "low", d.low),
            high: ck.float(&hist_t, "high", d.high),
        };
        if spec.bins == 0 {
            ck.push("histogram.bins", "must be at least 1");
        }
        if spec.low >= spec.high {
            ck.push("histogram.high", format!("must exceed histogram.low ({})", spec.low));
        }
        let epochs: Vec<usize> = ck.uint_list(&hist_t, "epochs").unwrap_or_default().into_iter().map(|e| e as usize).collect();
        for &e in &epochs {
            if e == 0 || (cohort.dir.is_none() && e > hyper.epochs) {
                ck.push("histogram.epochs", format!("epoch {e} is outside 1..={}", hyper.epochs));
            }
        }
        ck.unknown_keys(&hist_t, &["bins", "low", "high", "epochs"]);
        HistogramConfig { epochs, spec }
    } else {
        HistogramConfig { epochs: vec![], spec: HistogramSpec::default() }
    };

    let alphas = if kind_or == ExperimentKind::Interpolate {
        let alphas = ck.float_list(&interp_t, "alphas").unwrap_or_else(concord::landscape::default_alpha_grid);
        if alphas.is_empty() {
            ck.push("interpolate.alphas", "must not be empty");
        }
        ck.unknown_keys(&interp_t, &["alphas"]);
        alphas
    } else {
        vec![]
    };

    let scale_demo = if kind_or == ExperimentKind::ScaleDemo {
        let logits = ck.float_list(&scale_t, "logits").unwrap_or_else(|| DEFAULT_SCALE_LOGITS.to_vec());
        if logits.len() < 2 {
            ck.push("scale_demo.logits", "needs at least two values");
        }
        let factor = ck.float(&scale_t, "factor", DEFAULT_SCALE_FACTOR);
        if factor <= 0.0 {
            ck.push("scale_demo.factor", format!("must be positive, got {factor}"));
        }
        let labels: Vec<usize> = ck
            .uint_list(&scale_t, "labels")
            .map(|v| v.into_iter().map(|l| l as usize).collect())
            .unwrap_or_else(|| DEFAULT_SCALE_LABELS.to_vec());
        for &l in &labels {
            if l >= logits.len() {
                ck.push("scale_demo.labels", format!("label {l} has no logit"));
            }
        }
        ck.unknown_keys(&scale_t, &["logits", "factor", "labels"]);
        ScaleDemoConfig { logits, factor, labels }
    } else {
        ScaleDemoConfig { logits: vec![], factor: DEFAULT_SCALE_FACTOR, labels: vec![] }
    };

    match kind {
        Some(kind) if ck.issues.is_empty() => Ok(ExperimentConfig {
            kind,
            seed,
            out,
            dataset,
            cohort,
            hyper,
            sweep,
            trace_samples,
            histogram,
            alphas,
            scale_demo,
        }),
        _ => Err(ConfigErrors(ck.issues)),
    }
}

fn default_dataset() -> DataSource {
    DataSource::Mnist { root: None, train_size: DEFAULT_TRAIN_SIZE, eval_size: None, subset_seed: 0, stratified: true }
}

fn read_dataset(ck: &mut Checker, t: &Fields) -> DataSource {
    let source = ck.string(t, "source").unwrap_or_else(|| "mnist".into());
    match source.as_str() {
        "mnist" => {
            ck.unknown_keys(t, &["source", "root", "train_size", "eval_size", "subset_seed", "stratified"]);
            let root = ck.string(t, "root").map(PathBuf::from);
            let train_size = ck.uint(t, "train_size", DEFAULT_TRAIN_SIZE as u64) as usize;
            if train_size == 0 {
                ck.push("dataset.train_size", "must be at least 1");
            }
            let eval_size = t.raw("eval_size").map(|_| ck.uint(t, "eval_size", 0) as usize);
            if eval_size == Some(0) {
                ck.push("dataset.eval_size", "must be at least 1");
            }
            DataSource::Mnist {
                root,
                train_size,
                eval_size,
                subset_seed: ck.uint(t, "subset_seed", 0),
                stratified: ck.boolean(t, "stratified", true),
            }
        }
        "blobs" => {
            ck.unknown_keys(t, &["source", "classes", "per_class", "eval_per_class", "dim", "separation", "seed"]);
            let classes = ck.uint(t, "classes", 4) as usize;
            let per_class = ck.uint(t, "per_class", 50) as usize;
            let eval_per_class = ck.uint(t, "eval_per_class", per_class as u64) as usize;
            let dim = ck.uint(t, "dim", 8) as usize;
            let separation = ck.float(t, "separation", 3.0);
            if classes < 2 {
                ck.push("dataset.classes", "must be at least 2");
            }
            for (name, v) in [("per_class", per_class), ("eval_per_class", eval_per_class), ("dim", dim)] {
                if v == 0 {
                    ck.push(format!("dataset.{name}"), "must be at least 1");
                }
            }
            DataSource::Blobs { classes, per_class, eval_per_class, dim, separation, seed: ck.uint(t, "seed", 0) }
        }
        other => {
            ck.push("dataset.source", format!("unknown source `{other}` (expected mnist or blobs)"));
            default_dataset()
        }
    }
}

fn read_cohort(
    ck: &mut Checker,
    c: &Fields,
    t: &Fields,
    kind: ExperimentKind,
    seed: u64,
) -> (CohortSpec, Hyperparams) {
    ck.unknown_keys(c, &["architectures", "seeds", "dropout", "dir", "save"]);
    ck.unknown_keys(t, &["epochs", "batch_size", "learning_rate"]);
    let dir = ck.string(c, "dir").map(PathBuf::from);
    let save = ck.boolean(c, "save", false);
    let dropout = ck.float_list(c, "dropout").unwrap_or_default();
    for &r in &dropout {
        if !(0.0..1.0).contains(&r) {
            ck.push("cohort.dropout", format!("rate {r} is outside [0, 1)"));
        }
    }
    if dropout.len() > 1 && kind != ExperimentKind::Sweep {
        ck.push("cohort.dropout", format!("several rates are only supported by sweep, not {kind}"));
    }

    if dir.is_some() {
        for key in ["architectures", "seeds", "dropout"] {
            if c.raw(key).is_some() {
                ck.push(format!("cohort.{key}"), "cannot be combined with cohort.dir (stored runs carry their own)");
            }
        }
        if save {
            ck.push("cohort.save", "stored runs are not re-saved");
        }
        if kind == ExperimentKind::TrainCohort {
            ck.push("cohort.dir", "train-cohort always trains");
        }
        return (CohortSpec { architectures: vec![], seeds: vec![], dropout: vec![], dir, save: false }, Hyperparams::default());
    }

    let architectures = match ck.string_list(c, "architectures") {
        None => kind.default_architectures(),
        Some(names) => names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.parse().map_err(|e| ck.push(format!("cohort.architectures[{i}]"), e)).ok())
            .collect(),
    };
    if architectures.is_empty() && c.raw("architectures").is_some() {
        ck.push("cohort.architectures", "cohort must not be empty");
    }
    if kind == ExperimentKind::Interpolate && architectures.len() != 2 {
        ck.push("cohort.architectures", format!("interpolate needs exactly two runs, got {}", architectures.len()));
    }
    if kind == ExperimentKind::Interpolate && architectures.len() == 2 && architectures[0] != architectures[1] {
        ck.push("cohort.architectures", "interpolated runs must share one architecture");
    }
    let seeds = match ck.uint_list(c, "seeds") {
        Some(s) => s,
        None => (1..=architectures.len() as u64).map(|i| seed.wrapping_add(i)).collect(),
    };
    if seeds.len() != architectures.len() && c.raw("seeds").is_some() {
        ck.push("cohort.seeds", format!("{} seeds for {} architectures", seeds.len(), architectures.len()));
    }

    let d = Hyperparams::default();
    let hyper = Hyperparams {
        epochs: ck.uint(t, "epochs", kind.default_epochs() as u64) as usize,
        batch_size: ck.uint(t, "batch_size", DEFAULT_BATCH_SIZE as u64) as usize,
        learning_rate: ck.float(t, "learning_rate", DEFAULT_LEARNING_RATE),
    };
    debug_assert_eq!((d.batch_size, d.learning_rate), (DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE));
    if hyper.epochs == 0 {
        ck.push("train.epochs", "must be at least 1");
    }
    if hyper.batch_size == 0 {
        ck.push("train.batch_size", "must be at least 1");
    }
    if hyper.learning_rate <= 0.0 {
        ck.push("train.learning_rate", format!("must be positive, got {}", hyper.learning_rate));
    }
    (CohortSpec { architectures, seeds, dropout, dir, save }, hyper)
}

impl ExperimentConfig {
    /// The fully resolved config as TOML. Only sections the kind reads are
    /// included, and [`validate_table`] maps the result back to `self`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        let int = |v: u64| Value::Integer(v as i64);
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        let ints = |v: &mut dyn Iterator<Item = u64>| Value::Array(v.map(int).collect());
        t.insert("kind".into(), Value::String(self.kind.name().into()));
        t.insert("seed".into(), int(self.seed));
        t.insert("out".into(), Value::String(self.out.to_string_lossy().into_owned()));

        if self.kind.uses_data() {
            let mut d = Table::new();
            match &self.dataset {
                DataSource::Mnist { root, train_size, eval_size, subset_seed, stratified } => {
                    d.insert("source".into(), Value::String("mnist".into()));
                    if let Some(r) = root {
                        d.insert("root".into(), Value::String(r.to_string_lossy().into_owned()));
                    }
                    d.insert("train_size".into(), int(*train_size as u64));
                    if let Some(e) = eval_size {
                        d.insert("eval_size".into(), int(*e as u64));
                    }
                    d.insert("subset_seed".into(), int(*subset_seed));
                    d.insert("stratified".into(), Value::Boolean(*stratified));
                }
                DataSource::Blobs { classes, per_class, eval_per_class, dim, separation, seed } => {
                    d.insert("source".into(), Value::String("blobs".into()));
                    d.insert("classes".into(), int(*classes as u64));
                    d.insert("per_class".into(), int(*per_class as u64));
                    d.insert("eval_per_class".into(), int(*eval_per_class as u64));
                    d.insert("dim".into(), int(*dim as u64));
                    d.insert("separation".into(), Value::Float(*separation));
                    d.insert("seed".into(), int(*seed));
                }
            }
            t.insert("dataset".into(), Value::Table(d));

            let mut c = Table::new();
            if let Some(dir) = &self.cohort.dir {
                c.insert("dir".into(), Value::String(dir.to_string_lossy().into_owned()));
            } else {
                let names = self.cohort.architectures.iter().map(|a| Value::String(a.to_string())).collect();
                c.insert("architectures".into(), Value::Array(names));
                c.insert("seeds".into(), ints(&mut self.cohort.seeds.iter().copied()));
                c.insert("dropout".into(), floats(&self.cohort.dropout));
                c.insert("save".into(), Value::Boolean(self.cohort.save));
                let mut tr = Table::new();
                tr.insert("epochs".into(), int(self.hyper.epochs as u64));
                tr.insert("batch_size".into(), int(self.hyper.batch_size as u64));
                tr.insert("learning_rate".into(), Value::Float(self.hyper.learning_rate));
                t.insert("train".into(), Value::Table(tr));
            }
            t.insert("cohort".into(), Value::Table(c));
        }

        let mut put = |name: &str, s: Table| {
            t.insert(name.into(), Value::Table(s));
        };
        match self.kind {
            ExperimentKind::Sweep | ExperimentKind::Compare => {
                let mut s = Table::new();
                s.insert("thresholds".into(), floats(&self.sweep.thresholds));
                if let Some(p) = self.sweep.decisions_at {
                    s.insert("decisions_at".into(), Value::Float(p));
                }
                put("sweep", s);
            }
            ExperimentKind::Trace => {
                let mut s = Table::new();
                s.insert("samples".into(), ints(&mut self.trace_samples.iter().map(|&v| v as u64)));
                put("trace", s);
            }
            ExperimentKind::Histogram => {
                let mut s = Table::new();
                s.insert("bins".into(), int(self.histogram.spec.bins as u64));
                s.insert("low".into(), Value::Float(self.histogram.spec.low));
                s.insert("high".into(), Value::Float(self.histogram.spec.high));
                s.insert("epochs".into(), ints(&mut self.histogram.epochs.iter().map(|&v| v as u64)));
                put("histogram", s);
            }
            ExperimentKind::Interpolate => {
                let mut s = Table::new();
                s.insert("alphas".into(), floats(&self.alphas));
                put("interpolate", s);
            }
            ExperimentKind::ScaleDemo => {
                let mut s = Table::new();
                s.insert("logits".into(), floats(&self.scale_demo.logits));
                s.insert("factor".into(), Value::Float(self.scale_demo.factor));
                s.insert("labels".into(), ints(&mut self.scale_demo.labels.iter().map(|&v| v as u64)));
                put("scale_demo", s);
            }
            ExperimentKind::TrainCohort | ExperimentKind::Decompose => {}
        }
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("a toml::Table always serializes")
    }
}

struct Fields<'a> {
    section: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Fields<'a> {
    fn path(&self, key: &str) -> String {
        if self.section.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }
}

#[derive(Default)]
struct Checker {
    issues: Vec<ConfigIssue>,
}

impl Checker {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue { field: field.into(), message: message.into() });
    }

    fn section<'a>(&mut self, table: &'a Table, name: &'static str) -> Fields<'a> {
        match table.get(name) {
            None => Fields { section: name, table: None },
            Some(Value::Table(t)) => Fields { section: name, table: Some(t) },
            Some(v) => {
                self.push(name, format!("expected a table, got {}", v.type_str()));
                Fields { section: name, table: None }
            }
        }
    }

    fn unknown_keys(&mut self, f: &Fields, allowed: &[&str]) {
        for key in f.table.into_iter().flat_map(|t| t.keys()) {
            if !allowed.contains(&key.as_str()) {
                self.push(f.path(key), "unknown key");
            }
        }
    }

    fn type_error(&mut self, f: &Fields, key: &str, want: &str, got: &Value) {
        self.push(f.path(key), format!("expected {want}, got {}", got.type_str()));
    }

    fn uint(&mut self, f: &Fields, key: &str, default: u64) -> u64 {
        match f.raw(key) {
            None => default,
            Some(v) => self.uint_of(f, key, v).unwrap_or(default),
        }
    }

    fn uint_of(&mut self, f: &Fields, key: &str, v: &Value) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(i) => {
                self.push(f.path(key), format!("must be non-negative, got {i}"));
                None
            }
            other => {
                self.type_error(f, key, "an integer", other);
                None
            }
        }
    }

    fn float_of(&mut self, f: &Fields, key: &str, v: &Value) -> Option<f64> {
        let x = match v {
            Value::Float(x) => *x,
            Value::Integer(i) => *i as f64,
            other => {
                self.type_error(f, key, "a number", other);
                return None;
            }
        };
        if x.is_finite() {
            Some(x)
        } else {
            self.push(f.path(key), format!("must be finite, got {x}"));
            None
        }
    }

    fn float(&mut self, f: &Fields, key: &str, default: f64) -> f64 {
        self.opt_float(f, key).unwrap_or(default)
    }

    fn opt_float(&mut self, f: &Fields, key: &str) -> Option<f64> {
        f.raw(key).and_then(|v| self.float_of(f, key, v))
    }

    fn boolean(&mut self, f: &Fields, key: &str, default: bool) -> bool {
        match f.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.type_error(f, key, "a boolean", other);
                default
            }
        }
    }

    fn string(&mut self, f: &Fields, key: &str) -> Option<String> {
        match f.raw(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.type_error(f, key, "a string", other);
                None
            }
        }
    }

    fn array<'v>(&mut self, f: &Fields<'v>, key: &str) -> Option<&'v [Value]> {
        match f.raw(key)? {
            Value::Array(a) => Some(a),
            other => {
                self.type_error(f, key, "an array", other);
                None
            }
        }
    }

    fn float_list(&mut self, f: &Fields, key: &str) -> Option<Vec<f64>> {
        let items = self.array(f, key)?;
        Some(items.iter().filter_map(|v| self.float_of(f, key, v)).collect())
    }

    fn uint_list(&mut self, f: &Fields, key: &str) -> Option<Vec<u64>> {
        let items = self.array(f, key)?;
        Some(items.iter().filter_map(|v| self.uint_of(f, key, v)).collect())
    }

    fn string_list(&mut self, f: &Fields, key: &str) -> Option<Vec<String>> {
        let items = self.array(f, key)?;
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v {
                Value::String(s) => out.push(s.clone()),
                other => self.type_error(f, key, "strings", other),
            }
        }
        Some(out)
    }
}
