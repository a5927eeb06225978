//! Cluster selection and sample synthesis over the data graph.
//!
//! Per component, clusters are picked iteratively: each pick maximizes the
//! distinct source count, tie-breaking by larger token total and then by
//! lexicographically smallest node-index list; picked nodes are removed
//! before the next pick. Components of at most [`EXACT_CUTOFF`] nodes use an
//! exhaustive subset search per pick; larger ones fall back to greedy
//! source-first selection. Selected clusters are permuted with a seeded
//! shuffle and concatenated into training samples.

use crate::graph::DataGraph;
use crate::types::{Document, DomainTag, Lang, Provenance, TrainingSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Components larger than this use greedy selection instead of exhaustive
/// subset search (C(20,8) ~ 126k subsets per pick is the worst exact case).
pub const EXACT_CUTOFF: usize = 20;

pub const DEFAULT_MIN_CLUSTER: usize = 2;
pub const DEFAULT_MAX_CLUSTER: usize = 8;
pub const DEFAULT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MixError {
    #[error("invalid cluster size range [{min}, {max}]: need min >= 2 and max >= min")]
    InvalidRange { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    pub key: String,
    pub distinct_sources: usize,
    pub total_tokens: u64,
}

fn cluster_stats(graph: &DataGraph, nodes: &[usize]) -> (usize, u64) {
    let mut sources: Vec<&str> = nodes.iter().map(|&i| graph.nodes[i].source.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    let tokens = nodes.iter().map(|&i| graph.nodes[i].token_count).sum();
    (sources.len(), tokens)
}

/// True when `a` beats `b` under the selection order: more distinct sources,
/// then more tokens, then lexicographically smaller node-index list.
fn better(a: (usize, u64, &[usize]), b: (usize, u64, &[usize])) -> bool {
    (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| b.2.cmp(a.2)) == std::cmp::Ordering::Greater
}

fn for_each_combination<F: FnMut(&[usize])>(pool: &[usize], size: usize, f: &mut F) {
    fn rec<F: FnMut(&[usize])>(pool: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, f: &mut F) {
        if cur.len() == size {
            f(cur);
            return;
        }
        let needed = size - cur.len();
        for i in start..=pool.len().saturating_sub(needed) {
            cur.push(pool[i]);
            rec(pool, size, i + 1, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(size);
    rec(pool, size, 0, &mut cur, f);
}

/// Exhaustive best subset of size in [min, max] from `remaining` (ascending).
fn exact_pick(graph: &DataGraph, remaining: &[usize], min: usize, max: usize) -> Vec<usize> {
    let cap = max.min(remaining.len());
    let mut best: Option<(usize, u64, Vec<usize>)> = None;
    for size in min..=cap {
        for_each_combination(remaining, size, &mut |subset| {
            let (srcs, tokens) = cluster_stats(graph, subset);
            let candidate = (srcs, tokens, subset);
            if best
                .as_ref()
                .map_or(true, |b| better(candidate, (b.0, b.1, &b.2)))
            {
                best = Some((srcs, tokens, subset.to_vec()));
            }
        });
    }
    best.expect("remaining.len() >= min").2
}

/// Greedy pick: one node per unseen source first (highest tokens, then
/// smallest index, sources in name order), then fill up to max by tokens.
fn greedy_pick(graph: &DataGraph, remaining: &[usize], min: usize, max: usize) -> Vec<usize> {
    let cap = max.min(remaining.len());
    let mut by_source: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for &i in remaining {
        by_source.entry(graph.nodes[i].source.as_str()).or_default().push(i);
    }
    let mut picked: Vec<usize> = Vec::with_capacity(cap);
    for (_, nodes) in by_source.iter() {
        if picked.len() == cap {
            break;
        }
        let best = *nodes
            .iter()
            .max_by_key(|&&i| (graph.nodes[i].token_count, std::cmp::Reverse(i)))
            .unwrap();
        picked.push(best);
    }
    if picked.len() < cap {
        let mut rest: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|i| !picked.contains(i))
            .collect();
        rest.sort_by_key(|&i| (std::cmp::Reverse(graph.nodes[i].token_count), i));
        picked.extend(rest.into_iter().take(cap - picked.len()));
    }
    debug_assert!(picked.len() >= min && picked.len() <= max);
    let _ = min;
    picked.sort_unstable();
    picked
}

/// Iteratively carve node-disjoint clusters out of every component.
/// Remaining nodes fewer than `min` become leftovers. Selection is fully
/// deterministic; the seed only drives the later permutation step.
pub fn select_clusters(
    graph: &DataGraph,
    min: usize,
    max: usize,
) -> Result<(Vec<Cluster>, Vec<usize>), MixError> {
    if min < 2 || max < min {
        return Err(MixError::InvalidRange { min, max });
    }
    let mut clusters = Vec::new();
    let mut leftovers = Vec::new();
    for (key, nodes) in &graph.components {
        let mut remaining: Vec<usize> = nodes.clone();
        remaining.sort_unstable();
        let exact = remaining.len() <= EXACT_CUTOFF;
        while remaining.len() >= min {
            let picked = if exact {
                exact_pick(graph, &remaining, min, max)
            } else {
                greedy_pick(graph, &remaining, min, max)
            };
            remaining.retain(|i| !picked.contains(i));
            let (distinct_sources, total_tokens) = cluster_stats(graph, &picked);
            clusters.push(Cluster {
                nodes: picked,
                key: key.clone(),
                distinct_sources,
                total_tokens,
            });
        }
        leftovers.extend(remaining);
    }
    Ok((clusters, leftovers))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn permutation_rng(seed: u64, key: &str, ordinal: usize) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(key.len() + 16);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(key.as_bytes());
    bytes.extend_from_slice(&(ordinal as u64).to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
}

fn dominant_lang(docs: &[&Document]) -> Lang {
    let mut totals: [(Lang, u64); 3] = [(Lang::Zh, 0), (Lang::En, 0), (Lang::Other, 0)];
    for d in docs {
        for slot in totals.iter_mut() {
            if slot.0 == d.lang {
                slot.1 += d.token_count;
            }
        }
    }
    totals.iter().max_by_key(|(_, t)| *t).unwrap().0
}

/// Permute the cluster's nodes with a shuffle keyed on
/// (seed, component key, cluster ordinal) and join their texts.
pub fn synthesize_sample(
    cluster: &Cluster,
    docs: &[Document],
    seed: u64,
    ordinal: usize,
    separator: &str,
) -> TrainingSample {
    let mut order = cluster.nodes.clone();
    let mut rng = permutation_rng(seed, &cluster.key, ordinal);
    order.shuffle(&mut rng);

    let parts: Vec<&Document> = order.iter().map(|&i| &docs[i]).collect();
    let text = parts
        .iter()
        .map(|d| d.text.as_str())
        .collect::<Vec<_>>()
        .join(separator);
    let provenance = order
        .iter()
        .map(|&i| Provenance {
            source: docs[i].source.clone(),
            key: docs[i].key.clone(),
            node: i,
        })
        .collect();
    TrainingSample {
        tokens: text.len() as u64,
        lang: dominant_lang(&parts),
        text,
        provenance,
        tag: DomainTag::Domain,
    }
}

fn singleton_sample(docs: &[Document], node: usize) -> TrainingSample {
    let d = &docs[node];
    TrainingSample {
        text: d.text.clone(),
        provenance: vec![Provenance {
            source: d.source.clone(),
            key: d.key.clone(),
            node,
        }],
        tokens: d.text.len() as u64,
        tag: DomainTag::Domain,
        lang: d.lang,
    }
}

/// Full mixing pass: select clusters, permute and concatenate each, and emit
/// leftover and keyless nodes as standalone single-node samples so no data
/// is lost.
pub fn mix(
    docs: &[Document],
    graph: &DataGraph,
    min: usize,
    max: usize,
    seed: u64,
    separator: &str,
) -> Result<Vec<TrainingSample>, MixError> {
    let (clusters, leftovers) = select_clusters(graph, min, max)?;
    let mut samples = Vec::with_capacity(clusters.len() + leftovers.len() + graph.keyless.len());
    let mut prev_key: Option<&str> = None;
    let mut ordinal = 0usize;
    for cluster in &clusters {
        if prev_key != Some(cluster.key.as_str()) {
            ordinal = 0;
            prev_key = Some(cluster.key.as_str());
        }
        samples.push(synthesize_sample(cluster, docs, seed, ordinal, separator));
        ordinal += 1;
    }
    for &node in &leftovers {
        samples.push(singleton_sample(docs, node));
    }
    for &node in &graph.keyless {
        samples.push(singleton_sample(docs, node));
    }
    Ok(samples)
}
