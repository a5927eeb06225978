//! Declarative run configuration: one manifest drives the whole pipeline.

use crate::interleave::RatioSpec;
use crate::pack::PackPolicy;
use crate::quality::{DedupParams, FilterPolicy};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MixManifest {
    /// source name -> input JSONL path.
    pub inputs: BTreeMap<String, PathBuf>,
    pub output_dir: PathBuf,
    pub filter: FilterPolicy,
    pub dedup: DedupParams,
    pub cluster_size: ClusterSizeRange,
    pub ratios: RatioSpec,
    pub sequence_length: usize,
    pub pack_policy: PackPolicy,
    /// Only "byte" is built in; other names must be wired programmatically.
    pub tokenizer: String,
    pub seed: u64,
    pub workers: usize,
    pub separator: String,
    /// Sequences per packed shard file.
    pub shard_size: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClusterSizeRange {
    pub min: usize,
    pub max: usize,
}

impl Default for MixManifest {
    fn default() -> Self {
        MixManifest {
            inputs: BTreeMap::new(),
            output_dir: PathBuf::from("out"),
            filter: FilterPolicy::default(),
            dedup: DedupParams::default(),
            cluster_size: ClusterSizeRange { min: 2, max: 8 },
            ratios: RatioSpec::default(),
            sequence_length: crate::pack::DEFAULT_SEQUENCE_LENGTH,
            pack_policy: PackPolicy::SplitAcross,
            tokenizer: "byte".to_string(),
            seed: 0,
            workers: 0,
            separator: "\n\n".to_string(),
            shard_size: 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no inputs configured")]
    NoInputs,
    #[error("input path does not exist: {0}")]
    MissingInput(PathBuf),
    #[error("cluster size range [{0}, {1}] invalid: need min >= 2 and max >= min")]
    BadClusterRange(usize, usize),
    #[error("sequence_length must be > 1, got {0}")]
    BadSequenceLength(usize),
    #[error("unknown tokenizer {0:?} (built-in: \"byte\")")]
    UnknownTokenizer(String),
    #[error("dedup config: {0}")]
    Dedup(#[from] crate::quality::DedupConfigError),
}

impl MixManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.inputs.is_empty() {
            return Err(ManifestError::NoInputs);
        }
        for path in self.inputs.values() {
            if !path.exists() {
                return Err(ManifestError::MissingInput(path.clone()));
            }
        }
        if self.cluster_size.min < 2 || self.cluster_size.max < self.cluster_size.min {
            return Err(ManifestError::BadClusterRange(
                self.cluster_size.min,
                self.cluster_size.max,
            ));
        }
        if self.sequence_length <= 1 {
            return Err(ManifestError::BadSequenceLength(self.sequence_length));
        }
        if self.tokenizer != "byte" {
            return Err(ManifestError::UnknownTokenizer(self.tokenizer.clone()));
        }
        self.dedup.validate()?;
        Ok(())
    }
}
