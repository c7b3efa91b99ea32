//! Versioned binary checkpoints and the on-disk layout of a training run.
//!
//! A checkpoint file is, in order:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `CCKP` |
//! | 4     | format version, u32 LE |
//! | 4 + n | architecture descriptor length (u32 LE) and UTF-8 text |
//! | 8     | seed, u64 LE |
//! | 4     | epoch index (1-based), u32 LE |
//! | 8     | parameter count, u64 LE |
//! | 8·count | parameters as f64 LE in layout order |
//! | 32    | SHA-256 of every preceding byte |
//!
//! A run directory holds `epoch_NNN.ckpt` for every completed epoch and a
//! `metrics.csv` with columns `epoch,train_loss,train_acc,val_loss,val_acc`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{CheckpointSet, EpochMetrics};
use crate::io::write_atomic;
use crate::nn::{ArchitectureSpec, NnError, ParameterVector};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"CCKP";
pub const FORMAT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("{path}: line {line}: {message}")]
    Metrics { path: PathBuf, line: usize, message: String },
    #[error("incomplete run in {dir}: {message}")]
    Incomplete { dir: PathBuf, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// One decoded checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub epoch: usize,
    pub params: ParameterVector<T>,
}

pub fn encode_checkpoint<T: Scalar>(
    arch: &ArchitectureSpec,
    seed: u64,
    epoch: usize,
    params: &ParameterVector<T>,
) -> Result<Vec<u8>, CheckpointError> {
    params.check_arch(arch)?;
    let descriptor = arch.to_string();
    let epoch = u32::try_from(epoch).map_err(|_| CheckpointError::Format(format!("epoch {epoch} too large")))?;
    let mut out = Vec::with_capacity(36 + descriptor.len() + 8 * params.len() + DIGEST_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Format(format!("truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes and verifies a checkpoint. Parameters are converted from the
/// stored f64 to `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN || bytes[..4] != MAGIC {
        return Err(CheckpointError::Format("missing CCKP magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    let desc_len = cur.u32("descriptor length")? as usize;
    let descriptor = std::str::from_utf8(cur.take(desc_len, "descriptor")?)
        .map_err(|_| CheckpointError::Format("descriptor is not UTF-8".into()))?;
    let arch: ArchitectureSpec = descriptor.parse()?;
    let seed = cur.u64("seed")?;
    let epoch = cur.u32("epoch")? as usize;
    let count = cur.u64("parameter count")?;
    if count != arch.param_count() as u64 {
        return Err(CheckpointError::Format(format!(
            "{count} parameters stored, architecture has {}",
            arch.param_count()
        )));
    }
    let payload = cur.take(8 * count as usize, "payload")?;
    if cur.pos != body.len() {
        return Err(CheckpointError::Format("trailing bytes after payload".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let params = ParameterVector::from_values(&arch, values)?;
    Ok(Checkpoint { arch, seed, epoch, params })
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy
        ));
    }
    s
}

fn parse_metrics(path: &Path, text: &str) -> Result<Vec<EpochMetrics>, CheckpointError> {
    let bad = |line: usize, message: String| CheckpointError::Metrics { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{METRICS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let epoch = fields[0].trim().parse().map_err(|e| bad(i + 1, format!("epoch: {e}")))?;
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.trim().parse().map_err(|e| bad(i + 1, format!("`{f}`: {e}")))?;
        }
        out.push(EpochMetrics {
            epoch,
            train_loss: vals[0],
            train_accuracy: vals[1],
            val_loss: vals[2],
            val_accuracy: vals[3],
        });
    }
    Ok(out)
}

/// Writes every snapshot and the metrics CSV into `dir` (created if needed).
pub fn save_run<T: Scalar>(dir: &Path, run: &CheckpointSet<T>) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, snap) in run.snapshots.iter().enumerate() {
        let bytes = encode_checkpoint(&run.arch, run.seed, i + 1, snap)?;
        let path = dir.join(checkpoint_file_name(i + 1));
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(METRICS_FILE);
    write_atomic(&path, metrics_csv(&run.metrics).as_bytes()).map_err(io_err(&path))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes)
}

/// Loads a run written by [`save_run`]. Every epoch listed in the metrics
/// must have its checkpoint, with matching architecture and seed.
pub fn load_run<T: Scalar>(dir: &Path) -> Result<CheckpointSet<T>, CheckpointError> {
    let incomplete = |message: String| CheckpointError::Incomplete { dir: dir.to_path_buf(), message };
    let metrics_path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?;
    let metrics = parse_metrics(&metrics_path, &text)?;
    if metrics.is_empty() {
        return Err(incomplete("no epochs recorded".into()));
    }
    let mut snapshots = Vec::with_capacity(metrics.len());
    let mut header: Option<(ArchitectureSpec, u64)> = None;
    for (i, m) in metrics.iter().enumerate() {
        if m.epoch != i + 1 {
            return Err(incomplete(format!("metrics row {} is epoch {}", i + 1, m.epoch)));
        }
        let path = dir.join(checkpoint_file_name(m.epoch));
        if !path.exists() {
            return Err(incomplete(format!("missing checkpoint for epoch {}", m.epoch)));
        }
        let ck = load_checkpoint::<T>(&path)?;
        if ck.epoch != m.epoch {
            return Err(incomplete(format!("{} records epoch {}", path.display(), ck.epoch)));
        }
        match &header {
            None => header = Some((ck.arch.clone(), ck.seed)),
            Some((arch, seed)) if *arch != ck.arch || *seed != ck.seed => {
                return Err(incomplete(format!("{} belongs to a different run", path.display())));
            }
            Some(_) => {}
        }
        snapshots.push(ck.params);
    }
    let (arch, seed) = header.expect("at least one epoch");
    Ok(CheckpointSet { arch, seed, snapshots, metrics })
}
