//! `ecct` command-line front end.
//!
//! Every subcommand is a thin wrapper over a pipeline stage; `run` executes
//! the whole thing from a TOML manifest. Exit codes: 0 success, 1 validation
//! failure, 2 data error, 3 internal error.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ecct_core::eval::{
    build_icl_prompt, sample_eval_subset, score_benchmark, EvalInstance, Prediction,
    PromptTemplate,
};
use ecct_core::graph::{build_graph, connected_components};
use ecct_core::interleave::RatioSpec;
use ecct_core::lm::{train_ngram, NGramModel};
use ecct_core::manifest::{ClusterSizeRange, ManifestError, MixManifest};
use ecct_core::mixer::mix;
use ecct_core::pack::{ByteTokenizer, PackPolicy, Tokenizer};
use ecct_core::pipeline::{
    self, corpus_stats, dedup_stage, filter_stage, ingest_stage, read_all_shards, read_jsonl,
    write_jsonl, PipelineError,
};
use ecct_core::quality::{DedupParams, FilterPolicy};
use ecct_core::types::{Document, Lang, SourceId};
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ecct", version, about = "Corpus construction and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw source JSONL into normalized documents
    Ingest {
        /// Source kind: product_info, review, article, general_web
        #[arg(long)]
        source: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Sidecar file for rejected lines
        #[arg(long)]
        errors: PathBuf,
    },
    /// Apply quality rules to a document stream
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        drops: PathBuf,
        #[arg(long, default_value_t = 20)]
        min_chars: usize,
        #[arg(long, default_value_t = 100_000)]
        max_chars: usize,
        #[arg(long, default_value_t = 0.5)]
        max_symbol_ratio: f64,
        #[arg(long, default_value_t = 0.05)]
        min_distinct_char_ratio: f64,
    },
    /// Exact then near-duplicate removal
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        drops: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        jaccard_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump the entity graph's connected components
    Graph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Cluster selection, permutation and concatenation into samples
    Mix {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_cluster: usize,
        #[arg(long, default_value_t = 8)]
        max_cluster: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Combine domain samples and general documents at the configured ratios
    Interleave {
        /// Domain training samples (mix output)
        #[arg(long)]
        domain: PathBuf,
        /// General documents (deduped general_web stream)
        #[arg(long)]
        general: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 2)]
        general_ratio: u64,
        #[arg(long, default_value_t = 1)]
        domain_ratio: u64,
    },
    /// Tokenize samples and pack fixed-length sequences into shards
    Pack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 2048)]
        sequence_length: usize,
        #[arg(long, value_parser = ["split_across", "drop_tail"], default_value = "split_across")]
        policy: String,
        #[arg(long, default_value_t = 1024)]
        shard_size: usize,
    },
    /// Exact per-source corpus statistics
    Stats {
        /// Document JSONL to count
        #[arg(long, conflicts_with = "shards")]
        input: Option<PathBuf>,
        /// Packed shard directory to count instead
        #[arg(long)]
        shards: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a prediction file against a benchmark file
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Cap on instances per task, sampled uniformly
        #[arg(long, default_value_t = 1000)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instead of scoring, print the k-shot prompt for each instance
        #[arg(long)]
        dump_prompts: Option<usize>,
    },
    /// Train the n-gram scorer on document or sample texts
    LmTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
    },
    /// Score texts with a trained n-gram model
    LmScore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Execute the full pipeline from a manifest
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the manifest worker count
    #[arg(long)]
    workers: Option<usize>,
    /// Override the manifest output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn texts_from_jsonl(path: &PathBuf) -> Result<Vec<String>> {
    let values: Vec<serde_json::Value> = read_jsonl(path, "lm")?;
    values
        .into_iter()
        .map(|v| {
            v.get("text")
                .and_then(|t| t.as_str())
                .map(String::from)
                .context("line missing \"text\" field")
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            source,
            input,
            output,
            errors,
        } => {
            let source: SourceId = source.parse().unwrap();
            let mut inputs = BTreeMap::new();
            inputs.insert(source.to_string(), input);
            let docs = ingest_stage(&inputs, &output, &errors)?;
            eprintln!("ingested {} documents", docs.len());
        }
        Command::Filter {
            input,
            output,
            drops,
            min_chars,
            max_chars,
            max_symbol_ratio,
            min_distinct_char_ratio,
        } => {
            let policy = FilterPolicy {
                min_chars,
                max_chars,
                max_symbol_ratio,
                min_distinct_char_ratio,
            };
            let docs: Vec<Document> = read_jsonl(&input, "filter")?;
            let (kept, dropped) = filter_stage(docs, &policy);
            eprintln!("kept {} documents, dropped {}", kept.len(), dropped.len());
            write_jsonl(&output, &kept, "filter")?;
            write_jsonl(&drops, &dropped, "filter")?;
        }
        Command::Dedup {
            input,
            output,
            drops,
            jaccard_threshold,
            seed,
        } => {
            let params = DedupParams {
                jaccard_threshold,
                seed,
                ..Default::default()
            };
            let docs: Vec<Document> = read_jsonl(&input, "dedup")?;
            let before = docs.len();
            let (kept, dropped) = dedup_stage(docs, &params);
            eprintln!("{} -> {} documents ({} duplicates)", before, kept.len(), dropped.len());
            write_jsonl(&output, &kept, "dedup")?;
            write_jsonl(&drops, &dropped, "dedup")?;
        }
        Command::Graph { input, output } => {
            let docs: Vec<Document> = read_jsonl(&input, "graph")?;
            let graph = build_graph(&docs);
            let components = connected_components(&graph);
            eprintln!(
                "{} components over {} keyed nodes, {} keyless",
                components.len(),
                graph.nodes.len() - graph.keyless.len(),
                graph.keyless.len()
            );
            write_jsonl(&output, &components, "graph")?;
        }
        Command::Mix {
            input,
            output,
            min_cluster,
            max_cluster,
            seed,
        } => {
            let docs: Vec<Document> = read_jsonl(&input, "mix")?;
            let graph = build_graph(&docs);
            let samples = mix(&docs, &graph, min_cluster, max_cluster, seed, "\n\n")?;
            eprintln!("{} training samples", samples.len());
            write_jsonl(&output, &samples, "mix")?;
        }
        Command::Interleave {
            domain,
            general,
            output,
            report,
            general_ratio,
            domain_ratio,
        } => {
            let domain_samples = read_jsonl(&domain, "interleave")?;
            let general_docs: Vec<Document> = read_jsonl(&general, "interleave")?;
            let ratios = RatioSpec {
                general_to_domain: (general_ratio, domain_ratio),
                ..Default::default()
            };
            use ecct_core::interleave::{interleave_streams, StreamId};
            let mut streams = BTreeMap::new();
            streams.insert(StreamId::Domain, domain_samples);
            let (zh, en): (Vec<&Document>, Vec<&Document>) =
                general_docs.iter().partition(|d| d.lang == Lang::Zh);
            let to_samples = |docs: Vec<&Document>| {
                docs.into_iter()
                    .map(ecct_core::pipeline::general_sample)
                    .collect::<Vec<_>>()
            };
            streams.insert(StreamId::GeneralZh, to_samples(zh));
            streams.insert(StreamId::GeneralEn, to_samples(en));
            let plan = pipeline::plan_from_streams(&streams, &ratios)?;
            let (out, realized) = interleave_streams(streams, &plan);
            eprintln!("{} samples interleaved", out.len());
            write_jsonl(&output, &out, "interleave")?;
            fs::write(&report, serde_json::to_string_pretty(&realized)?)?;
        }
        Command::Pack {
            input,
            output_dir,
            sequence_length,
            policy,
            shard_size,
        } => {
            let samples: Vec<ecct_core::types::TrainingSample> = read_jsonl(&input, "pack")?;
            let mut manifest = MixManifest::default();
            manifest.sequence_length = sequence_length;
            manifest.shard_size = shard_size;
            manifest.pack_policy = if policy == "drop_tail" {
                PackPolicy::DropTail
            } else {
                PackPolicy::SplitAcross
            };
            let (stats, shards) =
                pipeline::pack_stage(&samples, &ByteTokenizer, &manifest, &output_dir)?;
            eprintln!(
                "{} sequences in {} shards ({} pad tokens)",
                stats.sequences, shards, stats.pad_tokens
            );
            fs::write(
                output_dir.join("pack_stats.json"),
                serde_json::to_string_pretty(&stats)?,
            )?;
        }
        Command::Stats {
            input,
            shards,
            output,
        } => {
            let stats = if let Some(dir) = shards {
                let sequences = read_all_shards(&dir, ByteTokenizer.pad_id())?;
                let tokens: u64 = sequences
                    .iter()
                    .flat_map(|s| &s.tokens)
                    .filter(|&&t| t != ByteTokenizer::SEP && t != ByteTokenizer::PAD)
                    .count() as u64;
                serde_json::json!({
                    "sequences": sequences.len(),
                    "non_pad_non_separator_tokens": tokens,
                    "pad_tokens": sequences.iter().map(|s| s.pad_count as u64).sum::<u64>(),
                })
            } else {
                let input = input.context("either --input or --shards is required")?;
                let docs: Vec<Document> = read_jsonl(&input, "stats")?;
                serde_json::to_value(corpus_stats(&docs))?
            };
            let rendered = serde_json::to_string_pretty(&stats)?;
            match output {
                Some(path) => fs::write(path, rendered)?,
                None => println!("{rendered}"),
            }
        }
        Command::Eval {
            benchmark,
            predictions,
            output,
            cap,
            seed,
            dump_prompts,
        } => {
            let instances: Vec<EvalInstance> = read_jsonl(&benchmark, "eval")?;
            let instances = sample_eval_subset(&instances, cap, seed);
            if let Some(k) = dump_prompts {
                for inst in &instances {
                    let prompt = build_icl_prompt(inst, k, &PromptTemplate::default())
                        .map_err(|e| anyhow::anyhow!("{}: {e}", inst.id))?;
                    println!("### {}\n{prompt}\n", inst.id);
                }
                return Ok(());
            }
            let preds: Vec<Prediction> = read_jsonl(&predictions, "eval")?;
            let report = score_benchmark(&instances, &preds);
            let rendered = serde_json::to_string_pretty(&report)?;
            match output {
                Some(path) => fs::write(path, rendered)?,
                None => println!("{rendered}"),
            }
        }
        Command::LmTrain {
            input,
            output,
            order,
            smoothing,
        } => {
            let texts = texts_from_jsonl(&input)?;
            let corpus: Vec<Vec<u32>> = texts.iter().map(|t| ByteTokenizer.encode(t)).collect();
            let model = train_ngram(&corpus, order, smoothing)?;
            let mut buf = Vec::new();
            model.dump(&mut buf)?;
            fs::write(&output, buf)?;
            eprintln!("trained order-{order} model over {} sequences", corpus.len());
        }
        Command::LmScore { model, input } => {
            let file = fs::File::open(&model)?;
            let model = NGramModel::load(&mut std::io::BufReader::new(file))?;
            let texts = texts_from_jsonl(&input)?;
            let corpus: Vec<Vec<u32>> = texts.iter().map(|t| ByteTokenizer.encode(t)).collect();
            let ppl = model.perplexity(&corpus);
            let total_ll: f64 = corpus
                .iter()
                .map(|s| model.sequence_log_likelihood(s).total)
                .sum();
            println!(
                "{}",
                serde_json::json!({"perplexity": ppl, "total_log_likelihood": total_ll})
            );
        }
        Command::Run(args) => {
            let raw = fs::read_to_string(&args.manifest)
                .with_context(|| format!("reading {}", args.manifest.display()))?;
            let mut manifest: MixManifest = toml::from_str(&raw)
                .map_err(|e| anyhow::Error::new(ManifestValidation(e.to_string())))?;
            if let Some(seed) = args.seed {
                manifest.seed = seed;
            }
            if let Some(workers) = args.workers {
                manifest.workers = workers;
            }
            if let Some(dir) = args.output_dir {
                manifest.output_dir = dir;
            }
            // Keep the range type in sync if flags grow overrides later.
            let ClusterSizeRange { .. } = manifest.cluster_size;
            let out = pipeline::run_pipeline(&manifest)?;
            println!("{}", serde_json::to_string_pretty(&out.stats)?);
        }
    }
    Ok(())
}

/// Manifest syntax problems count as validation failures, not data errors.
#[derive(Debug)]
struct ManifestValidation(String);

impl std::fmt::Display for ManifestValidation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "manifest: {}", self.0)
    }
}

impl std::error::Error for ManifestValidation {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ManifestValidation>().is_some()
        || err.downcast_ref::<ManifestError>().is_some()
    {
        return 1;
    }
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return match p {
            PipelineError::Manifest(_) => 1,
            PipelineError::Io { .. } | PipelineError::Data { .. } | PipelineError::Pack(_) => 2,
            PipelineError::Mix(_) => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some()
        || err.downcast_ref::<ecct_core::lm::LmError>().is_some()
    {
        return 2;
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
