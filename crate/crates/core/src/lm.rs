//! Desk-scale n-gram scorer with add-k smoothing.
//!
//! Counts are tabulated over all n-gram windows with begin-of-sequence
//! padding; P(t | context) = (count + k) / (total + k * V). The module is a
//! hand-verifiable oracle for next-token log-likelihood and perplexity, not
//! a model zoo.

use rayon::prelude::*;
use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use thiserror::Error;

/// Begin-of-sequence marker used in context positions only; never scored.
pub const BOS: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("order must be >= 1, got {0}")]
    BadOrder(usize),
    #[error("smoothing k must be > 0, got {0}")]
    BadSmoothing(f64),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad model file: {0}")]
    BadModel(String),
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    pub order: usize,
    pub k: f64,
    /// context tuple -> (next token -> count).
    counts: HashMap<Vec<u32>, HashMap<u32, u64>>,
    /// context tuple -> total count, kept in sync with `counts`.
    totals: HashMap<Vec<u32>, u64>,
    pub vocab: BTreeSet<u32>,
}

/// Tabulate n-gram counts over token sequences. Parallel count-then-merge.
pub fn train_ngram(corpus: &[Vec<u32>], order: usize, k: f64) -> Result<NGramModel, LmError> {
    if order < 1 {
        return Err(LmError::BadOrder(order));
    }
    if k <= 0.0 {
        return Err(LmError::BadSmoothing(k));
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(LmError::EmptyCorpus);
    }

    let partials: Vec<HashMap<Vec<u32>, HashMap<u32, u64>>> = corpus
        .par_iter()
        .map(|seq| {
            let mut local: HashMap<Vec<u32>, HashMap<u32, u64>> = HashMap::new();
            for (i, &tok) in seq.iter().enumerate() {
                let ctx = context_at(seq, i, order);
                *local.entry(ctx).or_default().entry(tok).or_default() += 1;
            }
            local
        })
        .collect();

    let mut counts: HashMap<Vec<u32>, HashMap<u32, u64>> = HashMap::new();
    for partial in partials {
        for (ctx, next) in partial {
            let slot = counts.entry(ctx).or_default();
            for (tok, c) in next {
                *slot.entry(tok).or_default() += c;
            }
        }
    }
    let totals = counts
        .iter()
        .map(|(ctx, next)| (ctx.clone(), next.values().sum()))
        .collect();
    let vocab = corpus.iter().flatten().copied().collect();
    Ok(NGramModel {
        order,
        k,
        counts,
        totals,
        vocab,
    })
}

/// Last order-1 tokens before position i, BOS-padded on the left.
fn context_at(seq: &[u32], i: usize, order: usize) -> Vec<u32> {
    let width = order - 1;
    let mut ctx = Vec::with_capacity(width);
    for j in 0..width {
        let pos = i as i64 - width as i64 + j as i64;
        ctx.push(if pos < 0 { BOS } else { seq[pos as usize] });
    }
    ctx
}

#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub per_position: Vec<f64>,
    pub total: f64,
}

impl NGramModel {
    /// Add-k probability of `token` given a context tuple of order-1 tokens.
    /// Unknown tokens and unseen contexts fall back to the smoothed floor.
    pub fn probability(&self, context: &[u32], token: u32) -> f64 {
        let v = self.vocab.len() as f64;
        let count = self
            .counts
            .get(context)
            .and_then(|m| m.get(&token))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.totals.get(context).copied().unwrap_or(0) as f64;
        (count + self.k) / (total + self.k * v)
    }

    /// Per-position log P(y_i | y_{<i}) and their sum.
    pub fn sequence_log_likelihood(&self, seq: &[u32]) -> ScoredSequence {
        let per_position: Vec<f64> = seq
            .iter()
            .enumerate()
            .map(|(i, &tok)| self.probability(&context_at(seq, i, self.order), tok).ln())
            .collect();
        let total = per_position.iter().sum();
        ScoredSequence {
            per_position,
            total,
        }
    }

    /// exp(-(sum of log-likelihoods) / total token count).
    pub fn perplexity(&self, corpus: &[Vec<u32>]) -> f64 {
        let n_total: usize = corpus.iter().map(Vec::len).sum();
        assert!(n_total > 0, "perplexity over empty corpus");
        let total_ll: f64 = corpus
            .iter()
            .map(|seq| self.sequence_log_likelihood(seq).total)
            .sum();
        (-total_ll / n_total as f64).exp()
    }

    /// Dump as a sorted plain-text count table: context ids (space-joined,
    /// `^` for BOS) TAB token id TAB count.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<(), LmError> {
        writeln!(w, "# order={} k={}", self.order, self.k)?;
        let mut rows: Vec<(Vec<u32>, u32, u64)> = self
            .counts
            .iter()
            .flat_map(|(ctx, next)| next.iter().map(move |(&t, &c)| (ctx.clone(), t, c)))
            .collect();
        rows.sort();
        for (ctx, tok, count) in rows {
            let ctx_str = ctx
                .iter()
                .map(|&c| {
                    if c == BOS {
                        "^".to_string()
                    } else {
                        c.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{ctx_str}\t{tok}\t{count}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: &mut R) -> Result<NGramModel, LmError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| LmError::BadModel("empty file".into()))??;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| LmError::BadModel("missing header".into()))?;
        let mut order = None;
        let mut k = None;
        for part in header.split_whitespace() {
            if let Some(v) = part.strip_prefix("order=") {
                order = v.parse().ok();
            } else if let Some(v) = part.strip_prefix("k=") {
                k = v.parse().ok();
            }
        }
        let order: usize = order.ok_or_else(|| LmError::BadModel("missing order".into()))?;
        let k: f64 = k.ok_or_else(|| LmError::BadModel("missing k".into()))?;

        let mut counts: HashMap<Vec<u32>, HashMap<u32, u64>> = HashMap::new();
        let mut vocab = BTreeSet::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (ctx_str, tok_str, count_str) = (
                parts.next().unwrap_or(""),
                parts.next().unwrap_or(""),
                parts.next().unwrap_or(""),
            );
            let ctx: Vec<u32> = if ctx_str.is_empty() {
                Vec::new()
            } else {
                ctx_str
                    .split(' ')
                    .map(|s| {
                        if s == "^" {
                            Ok(BOS)
                        } else {
                            s.parse().map_err(|_| LmError::BadModel(format!("bad context {s:?}")))
                        }
                    })
                    .collect::<Result<_, _>>()?
            };
            let tok: u32 = tok_str
                .parse()
                .map_err(|_| LmError::BadModel(format!("bad token {tok_str:?}")))?;
            let count: u64 = count_str
                .parse()
                .map_err(|_| LmError::BadModel(format!("bad count {count_str:?}")))?;
            vocab.insert(tok);
            *counts.entry(ctx).or_default().entry(tok).or_default() += count;
        }
        let totals = counts
            .iter()
            .map(|(ctx, next)| (ctx.clone(), next.values().sum()))
            .collect();
        Ok(NGramModel {
            order,
            k,
            counts,
            totals,
            vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(s: &str) -> Vec<u32> {
        s.bytes().map(u32::from).collect()
    }

    #[test]
    fn unigram_counts() {
        let m = train_ngram(&[bytes("ab")], 1, 1.0).unwrap();
        assert_eq!(m.counts[&vec![]][&97], 1);
        assert_eq!(m.counts[&vec![]][&98], 1);
    }

    #[test]
    fn bigram_hand_count() {
        let m = train_ngram(&[bytes("abab")], 2, 1.0).unwrap();
        assert_eq!(m.counts[&vec![97]][&98], 2);
        assert_eq!(m.counts[&vec![98]][&97], 1);
        assert_eq!(m.counts[&vec![BOS]][&97], 1);
    }

    #[test]
    fn counts_match_sliding_window_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let seq: Vec<u32> = (0..1000).map(|_| rng.gen_range(0u32..8)).collect();
        let m = train_ngram(&[seq.clone()], 3, 1.0).unwrap();
        // Brute-force recount with explicit BOS padding.
        let mut padded = vec![BOS, BOS];
        padded.extend(&seq);
        let mut oracle: HashMap<(Vec<u32>, u32), u64> = HashMap::new();
        for w in padded.windows(3) {
            *oracle.entry((w[..2].to_vec(), w[2])).or_default() += 1;
        }
        let total_model: u64 = m.counts.values().flat_map(|n| n.values()).sum();
        assert_eq!(total_model, seq.len() as u64);
        for ((ctx, tok), count) in oracle {
            assert_eq!(m.counts[&ctx][&tok], count, "ctx {ctx:?} tok {tok}");
        }
    }

    #[test]
    fn unseen_context_forces_uniform() {
        let m = train_ngram(&[vec![0, 1, 2, 3]], 2, 1.0).unwrap();
        assert_eq!(m.vocab.len(), 4);
        let p = m.probability(&[99], 0);
        assert!((p - 0.25).abs() < 1e-12);
        // Positions with an unseen context contribute exactly log(1/4);
        // position 0's BOS context was seen once, so P = (0+1)/(1+4) = 1/5.
        let scored = m.sequence_log_likelihood(&[5, 6, 7]);
        assert!((scored.per_position[0] - (0.2f64).ln()).abs() < 1e-9);
        assert!((scored.per_position[1] - (0.25f64).ln()).abs() < 1e-9);
        assert!((scored.per_position[2] - (0.25f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn bigram_scores_on_abab() {
        // Counts from "abab": (BOS->a)=1, (a->b)=2, (b->a)=1; V=2, k=1.
        // P(a|BOS) = (1+1)/(1+2) = 2/3; P(b|a) = (2+1)/(2+2) = 3/4.
        let m = train_ngram(&[bytes("abab")], 2, 1.0).unwrap();
        let scored = m.sequence_log_likelihood(&bytes("ab"));
        let expected = [(2.0f64 / 3.0).ln(), (3.0f64 / 4.0).ln()];
        assert!((scored.per_position[0] - expected[0]).abs() < 1e-12);
        assert!((scored.per_position[1] - expected[1]).abs() < 1e-12);
        assert!((scored.total - (expected[0] + expected[1])).abs() < 1e-12);
    }

    #[test]
    fn uniform_perplexity_equals_vocab_size() {
        // Balanced unigram counts: P = (1+k)/(4+4k) = 1/4 exactly for any k.
        let m = train_ngram(&[vec![0, 1, 2, 3]], 1, 1.0).unwrap();
        let ppl = m.perplexity(&[vec![0, 1, 2, 3, 0, 2]]);
        assert!((ppl - 4.0).abs() < 1e-9);
    }

    #[test]
    fn single_token_vocab_perplexity_one() {
        let m = train_ngram(&[vec![7, 7, 7]], 2, 1.0).unwrap();
        let ppl = m.perplexity(&[vec![7, 7]]);
        assert!((ppl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_over_random_contexts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let corpus: Vec<Vec<u32>> = (0..20)
            .map(|_| (0..100).map(|_| rng.gen_range(0u32..16)).collect())
            .collect();
        let m = train_ngram(&corpus, 3, 0.5).unwrap();
        for _ in 0..1000 {
            let ctx = vec![rng.gen_range(0u32..20), rng.gen_range(0u32..20)];
            let sum: f64 = m.vocab.iter().map(|&t| m.probability(&ctx, t)).sum();
            assert!((sum - 1.0).abs() < 1e-9, "ctx {ctx:?} sums to {sum}");
        }
    }

    #[test]
    fn observation_never_decreases_probability() {
        let base = vec![vec![0u32, 1, 0, 2, 0, 1]];
        let m1 = train_ngram(&base, 2, 1.0).unwrap();
        let mut more = base.clone();
        more.push(vec![0, 1]);
        let m2 = train_ngram(&more, 2, 1.0).unwrap();
        assert!(m2.probability(&[0], 1) >= m1.probability(&[0], 1));
    }

    #[test]
    fn training_corpus_beats_shuffled_tokens() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let corpus = vec![bytes("the cat sat on the mat and the cat ran")];
        let m = train_ngram(&corpus, 3, 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut shuffled = corpus[0].clone();
        shuffled.shuffle(&mut rng);
        assert!(m.perplexity(&corpus) <= m.perplexity(&[shuffled]));
    }

    #[test]
    fn dump_load_round_trip() {
        let m = train_ngram(&[bytes("abab"), bytes("abc")], 2, 1.0).unwrap();
        let mut buf = Vec::new();
        m.dump(&mut buf).unwrap();
        let loaded = NGramModel::load(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.order, m.order);
        assert_eq!(loaded.vocab, m.vocab);
        let a = m.sequence_log_likelihood(&bytes("ab")).total;
        let b = loaded.sequence_log_likelihood(&bytes("ab")).total;
        assert!((a - b).abs() < 1e-12);
        // Dumps are byte-identical (sorted table).
        let mut buf2 = Vec::new();
        loaded.dump(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            train_ngram(&[vec![]], 2, 1.0),
            Err(LmError::EmptyCorpus)
        ));
    }
}
