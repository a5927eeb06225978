//! Quality filtering and exact / near-duplicate removal.
//!
//! Near-dedup is two-phase: MinHash signatures are computed in parallel per
//! document, then a single sequential reducer makes drop decisions so the
//! result is identical for any worker count. LSH bands only propose
//! candidate pairs; the exact Jaccard over token shingles decides.

use crate::types::Document;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_symbol_ratio: f64,
    pub min_distinct_char_ratio: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_chars: 20,
            max_chars: 100_000,
            max_symbol_ratio: 0.5,
            min_distinct_char_ratio: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    TooLong,
    SymbolRatio,
    DistinctCharRatio,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::TooShort => "too_short",
            RejectReason::TooLong => "too_long",
            RejectReason::SymbolRatio => "symbol_ratio",
            RejectReason::DistinctCharRatio => "distinct_char_ratio",
        };
        f.write_str(s)
    }
}

/// Check rules in declaration order; the first violated rule names the reason.
pub fn apply_quality_filter(doc: &Document, policy: &FilterPolicy) -> Result<(), RejectReason> {
    let chars: Vec<char> = doc.text.chars().collect();
    let n = chars.len();
    if n < policy.min_chars {
        return Err(RejectReason::TooShort);
    }
    if n > policy.max_chars {
        return Err(RejectReason::TooLong);
    }
    let symbols = chars
        .iter()
        .filter(|c| !c.is_alphanumeric() && !c.is_whitespace())
        .count();
    if symbols as f64 / n as f64 > policy.max_symbol_ratio {
        return Err(RejectReason::SymbolRatio);
    }
    // Distinct-char count saturates near the alphabet size, so the ratio is
    // taken against at most 256 chars; otherwise every long natural-language
    // document would fail the default 0.05 threshold.
    let distinct: HashSet<char> = chars.iter().copied().collect();
    if (distinct.len() as f64 / n.min(256) as f64) < policy.min_distinct_char_ratio {
        return Err(RejectReason::DistinctCharRatio);
    }
    Ok(())
}

/// Entry in the drop log: why a document left the stream.
#[derive(Debug, Clone, Serialize)]
pub struct DropRecord {
    pub doc_ref: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<RejectReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Keep the first occurrence (stream order) of each normalized text.
pub fn exact_dedup(docs: Vec<Document>) -> (Vec<Document>, Vec<DropRecord>) {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut out = Vec::with_capacity(docs.len());
    let mut drops = Vec::new();
    for (i, doc) in docs.into_iter().enumerate() {
        let h = fnv1a64(doc.text.as_bytes());
        match seen.get(&h) {
            Some(&first) => drops.push(DropRecord {
                doc_ref: i,
                rule: None,
                duplicate_of: Some(first),
            }),
            None => {
                seen.insert(h, i);
                out.push(doc);
            }
        }
    }
    (out, drops)
}

const MERSENNE_PRIME: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_size: usize,
    pub jaccard_threshold: f64,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            num_hashes: 128,
            bands: 16,
            rows: 8,
            shingle_size: 5,
            jaccard_threshold: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DedupConfigError {
    #[error("bands ({bands}) x rows ({rows}) must equal num_hashes ({num_hashes})")]
    BandMismatch {
        bands: usize,
        rows: usize,
        num_hashes: usize,
    },
    #[error("jaccard_threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), DedupConfigError> {
        if self.bands * self.rows != self.num_hashes {
            return Err(DedupConfigError::BandMismatch {
                bands: self.bands,
                rows: self.rows,
                num_hashes: self.num_hashes,
            });
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold < 1.0) {
            return Err(DedupConfigError::BadThreshold(self.jaccard_threshold));
        }
        Ok(())
    }
}

/// Split text into shingling units: whitespace-delimited words, with CJK
/// characters counted individually.
pub fn shingle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ('\u{4E00}'..='\u{9FFF}').contains(&c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Hashed k-token shingle set of a document.
pub fn shingle_set(text: &str, k: usize) -> HashSet<u64> {
    let tokens = shingle_tokens(text);
    if tokens.len() < k {
        return HashSet::new();
    }
    tokens
        .windows(k)
        .map(|w| fnv1a64(w.join("\u{1f}").as_bytes()))
        .collect()
}

pub fn exact_jaccard(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

struct MinHasher {
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    fn new(num_hashes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..num_hashes)
            .map(|_| {
                (
                    rng.gen_range(1..MERSENNE_PRIME),
                    rng.gen_range(0..MERSENNE_PRIME),
                )
            })
            .collect();
        MinHasher { coeffs }
    }

    fn signature(&self, shingles: &HashSet<u64>) -> Vec<u64> {
        self.coeffs
            .iter()
            .map(|&(a, b)| {
                shingles
                    .iter()
                    .map(|&x| {
                        (a.wrapping_mul(x % MERSENNE_PRIME) % MERSENNE_PRIME + b) % MERSENNE_PRIME
                    })
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect()
    }
}

/// Drop near-duplicates. For each LSH-proposed candidate pair the exact
/// Jaccard over shingles is computed; the later document of a pair at or
/// above the threshold is dropped. Documents shorter than one shingle skip
/// near-dedup entirely.
pub fn near_dedup(docs: Vec<Document>, params: &DedupParams) -> (Vec<Document>, Vec<DropRecord>) {
    params.validate().expect("invalid dedup params");
    let hasher = MinHasher::new(params.num_hashes, params.seed);

    // Phase 1: parallel signature computation, order preserved.
    let prepared: Vec<(HashSet<u64>, Option<Vec<u64>>)> = docs
        .par_iter()
        .map(|doc| {
            let shingles = shingle_set(&doc.text, params.shingle_size);
            if shingles.is_empty() {
                (shingles, None)
            } else {
                let sig = hasher.signature(&shingles);
                (shingles, Some(sig))
            }
        })
        .collect();

    // Phase 2: sequential reducer.
    let mut band_index: Vec<HashMap<u64, Vec<usize>>> = vec![HashMap::new(); params.bands];
    let mut kept_shingles: HashMap<usize, HashSet<u64>> = HashMap::new();
    let mut out = Vec::with_capacity(docs.len());
    let mut drops = Vec::new();

    for (i, (doc, (shingles, sig))) in docs.into_iter().zip(prepared).enumerate() {
        let Some(sig) = sig else {
            // Too short to shingle; exact dedup already covers it.
            out.push(doc);
            continue;
        };
        let band_keys: Vec<u64> = (0..params.bands)
            .map(|b| {
                let row_slice = &sig[b * params.rows..(b + 1) * params.rows];
                let bytes: Vec<u8> = row_slice.iter().flat_map(|v| v.to_le_bytes()).collect();
                fnv1a64(&bytes)
            })
            .collect();

        let mut candidates: Vec<usize> = band_keys
            .iter()
            .enumerate()
            .filter_map(|(b, key)| band_index[b].get(key))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let duplicate_of = candidates.into_iter().find(|c| {
            exact_jaccard(&shingles, &kept_shingles[c]) >= params.jaccard_threshold
        });

        match duplicate_of {
            Some(first) => drops.push(DropRecord {
                doc_ref: i,
                rule: None,
                duplicate_of: Some(first),
            }),
            None => {
                for (b, key) in band_keys.into_iter().enumerate() {
                    band_index[b].entry(key).or_default().push(i);
                }
                kept_shingles.insert(i, shingles);
                out.push(doc);
            }
        }
    }
    (out, drops)
}
