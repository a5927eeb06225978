//! Pipeline orchestration: ingest -> filter -> dedup -> graph -> mix ->
//! interleave -> pack, with every intermediate artifact materialized so any
//! stage can be re-run and inspected on its own.
//!
//! All parallelism runs inside a fixed-size thread pool with
//! order-preserving reductions, so any worker count yields identical bytes.

use crate::graph::{build_graph, connected_components};
use crate::ingest::{ingest_lines, LineError, SerializationPolicy};
use crate::interleave::{interleave_streams, plan_mixture, MixPlan, RealizedReport, StreamId};
use crate::manifest::{ManifestError, MixManifest};
use crate::mixer::{mix, select_clusters, MixError};
use crate::pack::{
    pack_texts, write_shard, ByteTokenizer, PackError, PackStats, PackedSequence, Tokenizer,
};
use crate::quality::{apply_quality_filter, exact_dedup, near_dedup, DropRecord};
use crate::types::{Document, DomainTag, Lang, Provenance, SourceId, TrainingSample};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("{stage}: {source}")]
    Io {
        stage: &'static str,
        source: std::io::Error,
    },
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("mix: {0}")]
    Mix(#[from] MixError),
    #[error("pack: {0}")]
    Pack(#[from] PackError),
}

fn io_err(stage: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |source| PipelineError::Io { stage, source }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(stage))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(stage))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| PipelineError::Data {
            stage,
            message: format!("{}:{}: {e}", path.display(), i + 1),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
    stage: &'static str,
) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(stage))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| PipelineError::Data {
            stage,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(stage))?;
    }
    w.flush().map_err(io_err(stage))
}

/// Raw JSONL in, normalized documents out, rejects to a sidecar.
pub fn ingest_stage(
    inputs: &BTreeMap<String, PathBuf>,
    docs_out: &Path,
    errors_out: &Path,
) -> Result<Vec<Document>, PipelineError> {
    let policy = SerializationPolicy::default();
    let mut docs = Vec::new();
    let mut errors: Vec<serde_json::Value> = Vec::new();
    for (source_name, path) in inputs {
        let source: SourceId = source_name.parse().unwrap();
        let file = File::open(path).map_err(io_err("ingest"))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err("ingest"))?;
        let (mut source_docs, source_errors) = ingest_lines(&lines, &source, &policy);
        docs.append(&mut source_docs);
        errors.extend(source_errors.iter().map(|e: &LineError| {
            serde_json::json!({"file": path.display().to_string(), "line_no": e.line_no, "reason": e.reason})
        }));
    }
    write_jsonl(docs_out, &docs, "ingest")?;
    write_jsonl(errors_out, &errors, "ingest")?;
    Ok(docs)
}

pub fn filter_stage(
    docs: Vec<Document>,
    policy: &crate::quality::FilterPolicy,
) -> (Vec<Document>, Vec<DropRecord>) {
    let mut kept = Vec::with_capacity(docs.len());
    let mut drops = Vec::new();
    for (i, doc) in docs.into_iter().enumerate() {
        match apply_quality_filter(&doc, policy) {
            Ok(()) => kept.push(doc),
            Err(reason) => drops.push(DropRecord {
                doc_ref: i,
                rule: Some(reason),
                duplicate_of: None,
            }),
        }
    }
    (kept, drops)
}

pub fn dedup_stage(
    docs: Vec<Document>,
    params: &crate::quality::DedupParams,
) -> (Vec<Document>, Vec<DropRecord>) {
    let (docs, mut drops) = exact_dedup(docs);
    let (docs, near_drops) = near_dedup(docs, params);
    drops.extend(near_drops);
    (docs, drops)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SourceCounts {
    pub documents: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_source: BTreeMap<String, SourceCounts>,
    pub per_lang_tokens: BTreeMap<String, u64>,
    /// Token share of each source in percent.
    pub source_share_pct: BTreeMap<String, f64>,
    pub ingest_errors: u64,
    pub filter_drops: u64,
    pub dedup_drops: u64,
    pub survival_rate: f64,
    pub cluster_size_histogram: BTreeMap<usize, u64>,
    pub leftover_singletons: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realized: Option<BTreeMap<StreamId, u64>>,
    pub packed_sequences: u64,
    pub packed_shards: u64,
    pub pad_tokens: u64,
}

/// Exact per-source document/token counts and percentage shares.
pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut total_tokens = 0u64;
    for doc in docs {
        let entry = stats.per_source.entry(doc.source.to_string()).or_default();
        entry.documents += 1;
        entry.tokens += doc.token_count;
        *stats
            .per_lang_tokens
            .entry(doc.lang.as_str().to_string())
            .or_default() += doc.token_count;
        total_tokens += doc.token_count;
    }
    if total_tokens > 0 {
        for (source, counts) in &stats.per_source {
            stats
                .source_share_pct
                .insert(source.clone(), 100.0 * counts.tokens as f64 / total_tokens as f64);
        }
    }
    stats
}

fn is_general(doc: &Document) -> bool {
    doc.source == SourceId::GeneralWeb
}

/// Wrap one general-web document as a standalone general-tagged sample.
pub fn general_sample(doc: &Document) -> TrainingSample {
    TrainingSample {
        text: doc.text.clone(),
        provenance: vec![Provenance {
            source: doc.source.clone(),
            key: doc.key.clone(),
            node: 0,
        }],
        tokens: doc.text.len() as u64,
        tag: DomainTag::General,
        lang: doc.lang,
    }
}

/// Split deduped docs into the domain stream (graph-mixed) and the two
/// general streams. General docs with an undetermined language ride the
/// English stream.
pub fn build_streams(
    docs: &[Document],
    manifest: &MixManifest,
) -> Result<(BTreeMap<StreamId, Vec<TrainingSample>>, Vec<usize>, u64), PipelineError> {
    let (general, domain): (Vec<&Document>, Vec<&Document>) =
        docs.iter().partition(|d| is_general(d));
    let domain_docs: Vec<Document> = domain.into_iter().cloned().collect();
    let graph = build_graph(&domain_docs);
    let (clusters, leftovers) =
        select_clusters(&graph, manifest.cluster_size.min, manifest.cluster_size.max)?;
    let cluster_sizes: Vec<usize> = clusters.iter().map(|c| c.nodes.len()).collect();
    let domain_samples = mix(
        &domain_docs,
        &graph,
        manifest.cluster_size.min,
        manifest.cluster_size.max,
        manifest.seed,
        &manifest.separator,
    )?;

    let mut streams: BTreeMap<StreamId, Vec<TrainingSample>> = BTreeMap::new();
    streams.insert(StreamId::Domain, domain_samples);
    let (zh, en): (Vec<&Document>, Vec<&Document>) =
        general.into_iter().partition(|d| d.lang == Lang::Zh);
    streams.insert(StreamId::GeneralZh, zh.into_iter().map(general_sample).collect());
    streams.insert(StreamId::GeneralEn, en.into_iter().map(general_sample).collect());
    Ok((streams, cluster_sizes, leftovers.len() as u64))
}

pub fn plan_from_streams(
    streams: &BTreeMap<StreamId, Vec<TrainingSample>>,
    ratios: &crate::interleave::RatioSpec,
) -> Result<MixPlan, PipelineError> {
    let available: BTreeMap<StreamId, u64> = streams
        .iter()
        .map(|(&s, v)| (s, v.iter().map(|x| x.tokens).sum()))
        .collect();
    plan_mixture(&available, ratios).map_err(|e| PipelineError::Data {
        stage: "interleave",
        message: e.to_string(),
    })
}

/// Pack samples and write shard files `shard_NNNN.cpkd` under `dir`.
pub fn pack_stage(
    samples: &[TrainingSample],
    tokenizer: &dyn Tokenizer,
    manifest: &MixManifest,
    dir: &Path,
) -> Result<(PackStats, u64), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err("pack"))?;
    let (sequences, stats) = pack_texts(
        samples.iter().map(|s| s.text.as_str()),
        tokenizer,
        manifest.sequence_length,
        manifest.pack_policy,
    )?;
    let mut shard_count = 0u64;
    for (i, chunk) in sequences.chunks(manifest.shard_size.max(1)).enumerate() {
        let path = dir.join(format!("shard_{i:04}.cpkd"));
        let file = File::create(&path).map_err(io_err("pack"))?;
        let mut w = BufWriter::new(file);
        write_shard(&mut w, chunk, manifest.sequence_length)?;
        w.flush().map_err(io_err("pack"))?;
        shard_count += 1;
    }
    Ok((stats, shard_count))
}

pub fn read_all_shards(dir: &Path, pad: u32) -> Result<Vec<PackedSequence>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err("stats"))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "cpkd"))
        .collect();
    paths.sort();
    let mut all = Vec::new();
    for path in paths {
        let file = File::open(&path).map_err(io_err("stats"))?;
        let (mut seqs, _) = crate::pack::read_shard(&mut BufReader::new(file), pad)?;
        all.append(&mut seqs);
    }
    Ok(all)
}

#[derive(Debug, Serialize)]
pub struct PipelineOutput {
    pub stats: CorpusStats,
    pub report: RealizedReport,
}

/// Execute the full pipeline from a manifest. Deterministic for a fixed
/// manifest regardless of worker count.
pub fn run_pipeline(manifest: &MixManifest) -> Result<PipelineOutput, PipelineError> {
    manifest.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.workers)
        .build()
        .map_err(|e| PipelineError::Data {
            stage: "run",
            message: e.to_string(),
        })?;
    pool.install(|| run_pipeline_inner(manifest))
}

fn run_pipeline_inner(manifest: &MixManifest) -> Result<PipelineOutput, PipelineError> {
    let out = &manifest.output_dir;
    fs::create_dir_all(out).map_err(io_err("run"))?;

    let docs = ingest_stage(
        &manifest.inputs,
        &out.join("documents.jsonl"),
        &out.join("ingest_errors.jsonl"),
    )?;
    let ingest_errors = count_lines(&out.join("ingest_errors.jsonl"))?;

    let (filtered, filter_drops) = filter_stage(docs, &manifest.filter);
    write_jsonl(&out.join("filtered.jsonl"), &filtered, "filter")?;
    write_jsonl(&out.join("filter_drops.jsonl"), &filter_drops, "filter")?;

    let pre_dedup = filtered.len();
    let (deduped, dedup_drops) = dedup_stage(filtered, &manifest.dedup);
    write_jsonl(&out.join("deduped.jsonl"), &deduped, "dedup")?;
    write_jsonl(&out.join("dedup_drops.jsonl"), &dedup_drops, "dedup")?;

    // Graph dump for inspection.
    let domain_docs: Vec<Document> = deduped.iter().filter(|d| !is_general(d)).cloned().collect();
    let graph = build_graph(&domain_docs);
    write_jsonl(&out.join("graph.jsonl"), connected_components(&graph), "graph")?;

    let (streams, cluster_sizes, leftover_singletons) = build_streams(&deduped, manifest)?;
    write_jsonl(
        &out.join("domain_samples.jsonl"),
        &streams[&StreamId::Domain],
        "mix",
    )?;

    let plan = plan_from_streams(&streams, &manifest.ratios)?;
    let (interleaved, report) = interleave_streams(streams, &plan);
    write_jsonl(&out.join("interleaved.jsonl"), &interleaved, "interleave")?;

    let tokenizer = ByteTokenizer;
    let (pack_stats, shards) = pack_stage(&interleaved, &tokenizer, manifest, &out.join("shards"))?;

    let mut stats = corpus_stats(&deduped);
    stats.ingest_errors = ingest_errors;
    stats.filter_drops = filter_drops.len() as u64;
    stats.dedup_drops = dedup_drops.len() as u64;
    stats.survival_rate = if pre_dedup == 0 {
        0.0
    } else {
        deduped.len() as f64 / pre_dedup as f64
    };
    for size in cluster_sizes {
        *stats.cluster_size_histogram.entry(size).or_default() += 1;
    }
    stats.leftover_singletons = leftover_singletons;
    stats.realized = Some(report.realized.clone());
    stats.packed_sequences = pack_stats.sequences as u64;
    stats.packed_shards = shards;
    stats.pad_tokens = pack_stats.pad_tokens;

    let report_json = serde_json::json!({
        "budgets": report.budgets,
        "realized": report.realized,
        "limiting_stream": report.limiting_stream,
        "exhausted": report.exhausted,
    });
    fs::write(
        out.join("mix_report.json"),
        serde_json::to_string_pretty(&report_json).unwrap(),
    )
    .map_err(io_err("interleave"))?;
    fs::write(
        out.join("stats.json"),
        serde_json::to_string_pretty(&stats).unwrap(),
    )
    .map_err(io_err("stats"))?;

    Ok(PipelineOutput { stats, report })
}

fn count_lines(path: &Path) -> Result<u64, PipelineError> {
    let file = File::open(path).map_err(io_err("run"))?;
    Ok(BufReader::new(file).lines().count() as u64)
}
