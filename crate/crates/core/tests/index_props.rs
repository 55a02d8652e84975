mod common;

use common::{title, vocab_embedder};
use proptest::prelude::*;
use unitrec::embedding::{similarity, Embedder};
use unitrec::index::{DocMeta, DocumentIndex, IndexConfig, IvfParams};

fn corpus() -> impl Strategy<Value = Vec<DocMeta>> {
    prop::collection::vec(title(6), 1..300).prop_map(|titles| {
        titles
            .into_iter()
            .enumerate()
            .map(|(i, t)| DocMeta {
                doc_id: format!("doc{:05}", (i * 7919) % 100_000),
                title: t,
                timestamp: i as i64,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_search_equals_full_scan(docs in corpus(), query in title(6), n in 1usize..400) {
        let e = vocab_embedder();
        let index = DocumentIndex::build(docs.clone(), &e, &IndexConfig::exact()).unwrap();
        let q = e.embed(&query);
        let hits = index.search(&q, n).unwrap();

        let mut scan: Vec<(f64, String)> = docs
            .iter()
            .map(|d| (similarity(&q, &e.embed(&d.title)).unwrap(), d.doc_id.clone()))
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scan.truncate(n);

        prop_assert_eq!(hits.len(), n.min(docs.len()));
        let got: Vec<(f64, String)> = hits.iter().map(|h| (h.similarity, h.doc_id.clone())).collect();
        prop_assert_eq!(got, scan);
        prop_assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn persisted_index_answers_identically(docs in corpus(), query in title(4)) {
        let e = vocab_embedder();
        let index = DocumentIndex::build(docs, &e, &IndexConfig::approximate()).unwrap();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let back = DocumentIndex::read_from(buf.as_slice()).unwrap();
        let q = e.embed(&query);
        prop_assert_eq!(index.search(&q, 10).unwrap(), back.search(&q, 10).unwrap());
    }

    #[test]
    fn batched_search_equals_single_queries(
        docs in corpus(),
        queries in prop::collection::vec(title(5), 1..12),
        lists in 1usize..20,
        probes in 1usize..6,
        n in 1usize..60,
    ) {
        let e = vocab_embedder();
        let cfg = IndexConfig {
            ivf: IvfParams { lists: Some(lists), probes, ..IvfParams::default() },
            ..IndexConfig::approximate()
        };
        let index = DocumentIndex::build(docs, &e, &cfg).unwrap();
        let qs: Vec<_> = queries.iter().map(|q| e.embed(q)).collect();
        let refs: Vec<_> = qs.iter().collect();
        let batched = index.search_positions_many(&refs, n).unwrap();
        for (q, got) in qs.iter().zip(batched) {
            prop_assert_eq!(got, index.search_positions(q, n).unwrap());
        }
    }
}
