use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use unitrec::embedding::{Embedder, EmbedderConfig, TextEmbedder};
use unitrec::eval::{draw_candidates, split_dataset, EvalConfig};
use unitrec::index::{DocMeta, DocumentIndex, IndexConfig};
use unitrec::keyterm::StopwordExtractor;
use unitrec::par::Parallelism;
use unitrec::retrieval::{retrieve, RetrievalConfig};
use unitrec::simulator::{generate, SimConfig, SimOutput};
use unitrec::unit_store::{Document, ProfileStore, UnitConfig};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("rayon", Parallelism::Rayon),
];

fn data() -> (SimOutput, Arc<TextEmbedder>) {
    let sim = generate(&SimConfig {
        num_users: 200,
        docs_per_topic: 2_500,
        ..SimConfig::default()
    })
    .unwrap();
    let embedder = Arc::new(TextEmbedder::new(EmbedderConfig::default()).unwrap());
    (sim, embedder)
}

fn docs(sim: &SimOutput) -> Vec<DocMeta> {
    sim.corpus_records().into_iter().map(Into::into).collect()
}

fn benches(c: &mut Criterion) {
    let (sim, embedder) = data();
    let index =
        DocumentIndex::build(docs(&sim), embedder.as_ref(), &IndexConfig::approximate()).unwrap();
    let stop = StopwordExtractor::new(SimConfig::default().background_vocabulary());
    let events: Vec<(String, Document)> = sim
        .clicks_in(&[0, 1, 2])
        .into_iter()
        .map(|c| {
            (
                c.user_id,
                Document::new(c.doc_id, c.title, c.timestamp, &stop),
            )
        })
        .collect();
    let store = ProfileStore::new(UnitConfig::default(), embedder.clone()).unwrap();
    store.ingest_batch(events.clone(), Parallelism::Rayon);
    let profiles = store.profiles();
    let queries: Vec<_> = sim
        .corpus
        .iter()
        .step_by(40)
        .map(|d| embedder.embed(&d.title))
        .collect();
    let (users, _) = split_dataset(&sim.clicks_in(&[0, 1, 2]), &EvalConfig::default());

    let mut g = c.benchmark_group("index_build");
    g.sample_size(10);
    for (name, p) in MODES {
        let cfg = IndexConfig {
            parallelism: p,
            ..IndexConfig::approximate()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| DocumentIndex::build(docs(&sim), embedder.as_ref(), &cfg).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("search_batch");
    for (name, p) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.search_batch(&queries, 100, p).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("ingest_batch");
    g.sample_size(10);
    for (name, p) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let store = ProfileStore::new(UnitConfig::default(), embedder.clone()).unwrap();
                store.ingest_batch(events.clone(), p)
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("retrieve");
    for (name, p) in MODES {
        let cfg = RetrievalConfig {
            parallelism: p,
            ..RetrievalConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                for profile in profiles.iter().take(50) {
                    retrieve(profile, &index, &cfg).unwrap();
                }
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("draw_candidates");
    g.sample_size(10);
    for (name, p) in MODES {
        let cfg = EvalConfig {
            parallelism: p,
            ..EvalConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| draw_candidates(&users, &index, &cfg))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for (name, p) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| unitrec::simulator::generate_with(&SimConfig::default(), p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
