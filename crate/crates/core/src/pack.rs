//! Tokenization contract and fixed-length sequence packing.
//!
//! Documents are concatenated with one separator id between them and cut
//! into sequences of exactly `L` tokens. Under `SplitAcross` a document
//! crossing the boundary continues in the next sequence; under `DropTail`
//! its overflow is truncated at the boundary and the next document starts a
//! fresh sequence. Only the final sequence carries padding.
//!
//! Shard binary format: magic `CPKD`, version u16 LE, L u32 LE, sequence
//! count u64 LE, then per sequence L token ids as u32 LE, boundary count
//! u16 LE, boundaries u16 LE each.

use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const SHARD_MAGIC: &[u8; 4] = b"CPKD";
pub const SHARD_VERSION: u16 = 1;
pub const DEFAULT_SEQUENCE_LENGTH: usize = 2048;

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> u32;
    fn doc_separator_id(&self) -> u32;
    fn pad_id(&self) -> u32;
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
}

/// Built-in byte-level tokenizer: one id per UTF-8 byte, ids 256/257
/// reserved for the document separator and padding. Exact round-trip,
/// reproducible token counts, zero external assets.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const SEP: u32 = 256;
    pub const PAD: u32 = 257;
}

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> u32 {
        258
    }
    fn doc_separator_id(&self) -> u32 {
        Self::SEP
    }
    fn pad_id(&self) -> u32 {
        Self::PAD
    }
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }
    fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter(|&&id| id < 256)
            .map(|&id| id as u8)
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackPolicy {
    SplitAcross,
    DropTail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    /// Exactly L token ids.
    pub tokens: Vec<u32>,
    /// Offsets where a document starts, strictly increasing, each < L.
    pub boundaries: Vec<u16>,
    /// Padding tokens at the tail; nonzero only for the final sequence.
    pub pad_count: u32,
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("sequence length must be > 1, got {0}")]
    BadLength(usize),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad shard: {0}")]
    BadShard(String),
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct PackStats {
    pub documents: usize,
    pub skipped_empty: usize,
    pub sequences: usize,
    pub pad_tokens: u64,
}

/// Pack already-tokenized documents into fixed-length sequences.
pub fn pack_token_docs(
    docs: impl IntoIterator<Item = Vec<u32>>,
    sep: u32,
    pad: u32,
    l: usize,
    policy: PackPolicy,
) -> Result<(Vec<PackedSequence>, PackStats), PackError> {
    if l <= 1 {
        return Err(PackError::BadLength(l));
    }
    let mut stats = PackStats::default();
    let mut sequences: Vec<PackedSequence> = Vec::new();
    let mut cur: Vec<u32> = Vec::with_capacity(l);
    let mut boundaries: Vec<u16> = Vec::new();
    let mut first_doc = true;

    let flush = |cur: &mut Vec<u32>, boundaries: &mut Vec<u16>, sequences: &mut Vec<PackedSequence>| {
        debug_assert_eq!(cur.len(), l);
        sequences.push(PackedSequence {
            tokens: std::mem::replace(cur, Vec::with_capacity(l)),
            boundaries: std::mem::take(boundaries),
            pad_count: 0,
        });
    };

    for doc in docs {
        if doc.is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        stats.documents += 1;
        if !first_doc {
            // One separator between consecutive documents.
            if cur.len() == l {
                flush(&mut cur, &mut boundaries, &mut sequences);
            }
            cur.push(sep);
            if cur.len() == l {
                flush(&mut cur, &mut boundaries, &mut sequences);
            }
        }
        first_doc = false;

        match policy {
            PackPolicy::SplitAcross => {
                let mut offset = 0usize;
                if cur.len() < l {
                    boundaries.push(cur.len() as u16);
                }
                while offset < doc.len() {
                    if cur.len() == l {
                        flush(&mut cur, &mut boundaries, &mut sequences);
                    }
                    let take = (l - cur.len()).min(doc.len() - offset);
                    cur.extend_from_slice(&doc[offset..offset + take]);
                    offset += take;
                }
            }
            PackPolicy::DropTail => {
                if cur.len() == l {
                    flush(&mut cur, &mut boundaries, &mut sequences);
                }
                boundaries.push(cur.len() as u16);
                let take = (l - cur.len()).min(doc.len());
                cur.extend_from_slice(&doc[..take]);
            }
        }
    }

    if !cur.is_empty() {
        let pad_count = (l - cur.len()) as u32;
        cur.resize(l, pad);
        sequences.push(PackedSequence {
            tokens: cur,
            boundaries,
            pad_count,
        });
        stats.pad_tokens = pad_count as u64;
    }
    stats.sequences = sequences.len();
    Ok((sequences, stats))
}

/// Convenience: tokenize sample texts and pack them.
pub fn pack_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    tokenizer: &dyn Tokenizer,
    l: usize,
    policy: PackPolicy,
) -> Result<(Vec<PackedSequence>, PackStats), PackError> {
    let docs: Vec<Vec<u32>> = texts.into_iter().map(|t| tokenizer.encode(t)).collect();
    pack_token_docs(docs, tokenizer.doc_separator_id(), tokenizer.pad_id(), l, policy)
}

pub fn write_shard<W: Write>(w: &mut W, sequences: &[PackedSequence], l: usize) -> Result<(), PackError> {
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&SHARD_VERSION.to_le_bytes())?;
    w.write_all(&(l as u32).to_le_bytes())?;
    w.write_all(&(sequences.len() as u64).to_le_bytes())?;
    for seq in sequences {
        debug_assert_eq!(seq.tokens.len(), l);
        for id in &seq.tokens {
            w.write_all(&id.to_le_bytes())?;
        }
        w.write_all(&(seq.boundaries.len() as u16).to_le_bytes())?;
        for b in &seq.boundaries {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_shard<R: Read>(r: &mut R, pad: u32) -> Result<(Vec<PackedSequence>, usize), PackError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SHARD_MAGIC {
        return Err(PackError::BadShard("bad magic".into()));
    }
    let mut buf2 = [0u8; 2];
    let mut buf4 = [0u8; 4];
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != SHARD_VERSION {
        return Err(PackError::BadShard(format!("unsupported version {version}")));
    }
    r.read_exact(&mut buf4)?;
    let l = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tokens = Vec::with_capacity(l);
        for _ in 0..l {
            r.read_exact(&mut buf4)?;
            tokens.push(u32::from_le_bytes(buf4));
        }
        r.read_exact(&mut buf2)?;
        let n_bounds = u16::from_le_bytes(buf2) as usize;
        let mut boundaries = Vec::with_capacity(n_bounds);
        for _ in 0..n_bounds {
            r.read_exact(&mut buf2)?;
            boundaries.push(u16::from_le_bytes(buf2));
        }
        let pad_count = tokens.iter().rev().take_while(|&&t| t == pad).count() as u32;
        sequences.push(PackedSequence {
            tokens,
            boundaries,
            pad_count,
        });
    }
    Ok((sequences, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_empty() {
        assert!(ByteTokenizer.encode("").is_empty());
    }

    #[test]
    fn byte_identity() {
        let ids = ByteTokenizer.encode("ab");
        assert_eq!(ids, vec![97, 98]);
        assert_eq!(ByteTokenizer.decode(&ids), "ab");
    }

    proptest! {
        #[test]
        fn round_trip_random_utf8(s in "\\PC{0,1000}") {
            let t = ByteTokenizer;
            prop_assert_eq!(t.decode(&t.encode(&s)), s);
        }
    }

    #[test]
    fn single_doc_fills_final_sequence_with_pad() {
        let doc = vec![1u32; 2047];
        let (seqs, stats) =
            pack_token_docs(vec![doc], 256, 257, 2048, PackPolicy::SplitAcross).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].tokens.len(), 2048);
        assert_eq!(seqs[0].pad_count, 1);
        assert_eq!(seqs[0].boundaries, vec![0]);
        assert_eq!(stats.pad_tokens, 1);
    }

    #[test]
    fn split_across_worked_example() {
        // docs [1500, 1000], L=2048: seq1 = 1500 + sep + first 547 of doc2;
        // seq2 = remaining 453 + 1595 pad. Non-pad total 1500 + 1000 + 1 sep.
        let docs = vec![vec![1u32; 1500], vec![2u32; 1000]];
        let (seqs, _) = pack_token_docs(docs, 256, 257, 2048, PackPolicy::SplitAcross).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].tokens[1500], 256);
        assert_eq!(seqs[0].boundaries, vec![0, 1501]);
        assert_eq!(seqs[1].pad_count, 1595);
        assert!(seqs[1].boundaries.is_empty());
        let non_pad: usize = seqs
            .iter()
            .flat_map(|s| &s.tokens)
            .filter(|&&t| t != 257)
            .count();
        assert_eq!(non_pad, 1500 + 1000 + 1);
    }

    #[test]
    fn empty_stream_no_sequences() {
        let (seqs, _) =
            pack_token_docs(Vec::<Vec<u32>>::new(), 256, 257, 2048, PackPolicy::SplitAcross)
                .unwrap();
        assert!(seqs.is_empty());
    }

    #[test]
    fn empty_docs_skipped_with_count() {
        let docs = vec![vec![], vec![1u32; 10], vec![]];
        let (seqs, stats) = pack_token_docs(docs, 256, 257, 16, PackPolicy::SplitAcross).unwrap();
        assert_eq!(stats.skipped_empty, 2);
        assert_eq!(stats.documents, 1);
        assert_eq!(seqs.len(), 1);
    }

    #[test]
    fn drop_tail_truncates_at_boundary() {
        let docs = vec![vec![1u32; 10], vec![2u32; 10]];
        let (seqs, _) = pack_token_docs(docs, 256, 257, 16, PackPolicy::DropTail).unwrap();
        // doc1 (10) + sep + first 5 of doc2, overflow dropped; no second seq.
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].boundaries, vec![0, 11]);
        assert_eq!(seqs[0].pad_count, 0);
        assert_eq!(seqs[0].tokens.iter().filter(|&&t| t == 2).count(), 5);
    }

    #[test]
    fn separator_count_is_docs_minus_one() {
        let docs: Vec<Vec<u32>> = (0..7).map(|i| vec![i as u32 + 1; 100]).collect();
        let (seqs, _) = pack_token_docs(docs, 256, 257, 256, PackPolicy::SplitAcross).unwrap();
        let seps: usize = seqs
            .iter()
            .flat_map(|s| &s.tokens)
            .filter(|&&t| t == 256)
            .count();
        assert_eq!(seps, 6);
    }

    #[test]
    fn token_conservation_split_across() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let docs: Vec<Vec<u32>> = (0..100)
            .map(|_| {
                let n = rng.gen_range(1..500);
                (0..n).map(|_| rng.gen_range(0u32..256)).collect()
            })
            .collect();
        let mut expected: Vec<u32> = docs.iter().flatten().copied().collect();
        let (seqs, _) = pack_token_docs(docs, 256, 257, 128, PackPolicy::SplitAcross).unwrap();
        let mut got: Vec<u32> = seqs
            .iter()
            .flat_map(|s| &s.tokens)
            .copied()
            .filter(|&t| t != 256 && t != 257)
            .collect();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(expected, got);
        for s in &seqs {
            assert_eq!(s.tokens.len(), 128);
        }
    }

    #[test]
    fn boundary_slices_decode_to_documents() {
        let t = ByteTokenizer;
        let texts = ["hello world", "second doc", "third"];
        let (seqs, _) = pack_texts(texts.iter().copied(), &t, 64, PackPolicy::SplitAcross).unwrap();
        assert_eq!(seqs.len(), 1);
        let seq = &seqs[0];
        let ends: Vec<usize> = seq
            .boundaries
            .iter()
            .skip(1)
            .map(|&b| b as usize - 1) // separator sits right before each start
            .chain([64 - seq.pad_count as usize])
            .collect();
        for (i, (&start, &end)) in seq.boundaries.iter().zip(&ends).enumerate() {
            assert_eq!(t.decode(&seq.tokens[start as usize..end]), texts[i]);
        }
    }

    #[test]
    fn shard_round_trip_bit_exact() {
        let docs: Vec<Vec<u32>> = (0..10).map(|i| vec![i as u32; 50]).collect();
        let (seqs, _) = pack_token_docs(docs, 256, 257, 64, PackPolicy::SplitAcross).unwrap();
        let mut buf = Vec::new();
        write_shard(&mut buf, &seqs, 64).unwrap();
        let (loaded, l) = read_shard(&mut buf.as_slice(), 257).unwrap();
        assert_eq!(l, 64);
        assert_eq!(loaded, seqs);
        let mut buf2 = Vec::new();
        write_shard(&mut buf2, &loaded, 64).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_length_rejected() {
        assert!(matches!(
            pack_token_docs(Vec::<Vec<u32>>::new(), 256, 257, 1, PackPolicy::SplitAcross),
            Err(PackError::BadLength(1))
        ));
    }
}
