//! Run manifest: one `key<TAB>value<TAB>checksum` line per entry.
//!
//! Entries without a file use `-` as checksum. Artifact lines are sorted by
//! path and nothing time- or machine-dependent is recorded, so an identical
//! config reproduces the manifest byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const FORMAT_LINE: &str = "format\tconcord-manifest/1\t-";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub kind: String,
    /// Checksum of [`CONFIG_FILE`].
    pub config_hash: String,
    /// `(run label, seed)` in run order.
    pub seeds: Vec<(String, u64)>,
    /// Relative path to checksum, excluding the config file.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
#[error("manifest line {line}: {message}")]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!("{FORMAT_LINE}\n");
        writeln!(s, "kind\t{}\t-", self.kind).unwrap();
        writeln!(s, "config\t{CONFIG_FILE}\t{}", self.config_hash).unwrap();
        for (run, seed) in &self.seeds {
            writeln!(s, "seed.{run}\t{seed}\t-").unwrap();
        }
        for (path, sum) in &self.artifacts {
            writeln!(s, "artifact\t{path}\t{sum}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut m = Manifest::default();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, FORMAT_LINE)) => {}
            _ => return Err(ManifestError { line: 1, message: "missing format line".into() }),
        }
        for (i, line) in lines {
            let err = |message: String| ManifestError { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            let [key, value, sum] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            match key {
                "kind" => m.kind = value.to_string(),
                "config" => m.config_hash = sum.to_string(),
                "artifact" => {
                    if m.artifacts.insert(value.to_string(), sum.to_string()).is_some() {
                        return Err(err(format!("duplicate artifact `{value}`")));
                    }
                }
                _ => match key.strip_prefix("seed.") {
                    Some(run) => {
                        let seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?;
                        m.seeds.push((run.to_string(), seed));
                    }
                    None => return Err(err(format!("unknown key `{key}`"))),
                },
            }
        }
        Ok(m)
    }
}
