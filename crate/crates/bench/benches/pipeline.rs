use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ecct_core::eval::{score_rouge_l, RougeUnit};
use ecct_core::graph::build_graph;
use ecct_core::mixer::select_clusters;
use ecct_core::pack::{pack_token_docs, PackPolicy};
use ecct_core::quality::{near_dedup, DedupParams};
use ecct_core::types::{Document, Lang, SourceId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..5000)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn doc(rng: &mut ChaCha8Rng, key: Option<String>, source: SourceId) -> Document {
    let text = random_words(rng, 60);
    Document {
        token_count: text.len() as u64,
        text,
        source,
        key,
        lang: Lang::En,
    }
}

fn bench_rouge(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs: Vec<(String, String)> = (0..100)
        .map(|_| (random_words(&mut rng, 40), random_words(&mut rng, 40)))
        .collect();
    c.bench_function("rouge_l_100_pairs", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|(a, r)| score_rouge_l(a, r, RougeUnit::Token).f1)
                .sum::<f64>()
        })
    });
}

fn bench_near_dedup(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let docs: Vec<Document> = (0..500).map(|_| doc(&mut rng, None, SourceId::GeneralWeb)).collect();
    let params = DedupParams::default();
    c.bench_function("near_dedup_500_docs", |b| {
        b.iter_batched(
            || docs.clone(),
            |docs| near_dedup(docs, &params),
            BatchSize::SmallInput,
        )
    });
}

fn bench_cluster_selection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let docs: Vec<Document> = (0..400)
        .map(|i| {
            let source = SourceId::Custom(format!("S{}", i % 4));
            doc(&mut rng, Some(format!("K{}", i % 25)), source)
        })
        .collect();
    let graph = build_graph(&docs);
    c.bench_function("select_clusters_25x16", |b| {
        b.iter(|| select_clusters(&graph, 2, 8).unwrap())
    });
}

fn bench_packing(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let docs: Vec<Vec<u32>> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(100..2000);
            (0..n).map(|_| rng.gen_range(0u32..256)).collect()
        })
        .collect();
    c.bench_function("pack_1000_docs_l2048", |b| {
        b.iter_batched(
            || docs.clone(),
            |docs| pack_token_docs(docs, 256, 257, 2048, PackPolicy::SplitAcross).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_rouge,
    bench_near_dedup,
    bench_cluster_selection,
    bench_packing
);
criterion_main!(benches);
