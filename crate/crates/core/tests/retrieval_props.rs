mod common;

use std::collections::HashSet;

use common::{stream, title, vocab_embedder};
use proptest::prelude::*;
use unitrec::embedding::{similarity, Embedder};
use unitrec::index::{DocMeta, DocumentIndex, IndexConfig};
use unitrec::par::Parallelism;
use unitrec::retrieval::{retrieve, score_document, RetrievalConfig};
use unitrec::unit_store::{update_profile, UnitConfig, UserProfile};

fn profile_from(stream: &[unitrec::unit_store::Document]) -> UserProfile {
    let e = vocab_embedder();
    let mut p = UserProfile::new("u");
    for d in stream {
        let _ = update_profile(&mut p, d, &e, &UnitConfig::default());
    }
    p
}

fn index_of(titles: &[String]) -> DocumentIndex {
    let docs = titles
        .iter()
        .enumerate()
        .map(|(i, t)| DocMeta {
            doc_id: format!("d{i:04}"),
            title: t.clone(),
            timestamp: i as i64,
        })
        .collect();
    DocumentIndex::build(docs, &vocab_embedder(), &IndexConfig::exact()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn full_recall_equals_naive_ranking(
        titles in prop::collection::vec(title(6), 40),
        s in stream(40, 50),
        exclude in any::<bool>(),
    ) {
        let e = vocab_embedder();
        let index = index_of(&titles);
        let profile = profile_from(&s);
        let cfg = RetrievalConfig {
            per_unit_n: titles.len(),
            max_results: titles.len(),
            exclude_clicked: exclude,
            ..RetrievalConfig::default()
        };
        let got = retrieve(&profile, &index, &cfg).unwrap();

        let mut want: Vec<(f64, String)> = titles
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("d{i:04}"), e.embed(t)))
            .filter(|(id, _)| !exclude || !profile.is_clicked(id))
            .map(|(id, v)| {
                let s: f64 = profile.units.iter().map(|u| similarity(&v, &u.embedding).unwrap()).sum();
                (s, id)
            })
            .collect();
        want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if profile.units.is_empty() {
            want.clear();
        }
        let got_ids: Vec<&str> = got.doc_ids();
        let want_ids: Vec<&str> = want.iter().map(|(_, id)| id.as_str()).collect();
        prop_assert_eq!(got_ids, want_ids);

        let unique: HashSet<&str> = got.doc_ids().into_iter().collect();
        prop_assert_eq!(unique.len(), got.len());
        if exclude {
            prop_assert!(got.items.iter().all(|d| !profile.is_clicked(&d.doc_id)));
        }
    }

    #[test]
    fn adding_a_unit_adds_its_similarity(
        titles in prop::collection::vec(title(5), 20),
        s in stream(20, 30),
        extra in stream(10, 5),
    ) {
        let e = vocab_embedder();
        let profile = profile_from(&s);
        let donor = profile_from(&extra);
        prop_assume!(!donor.units.is_empty());
        let mut grown = profile.clone();
        grown.units.push(donor.units[0].clone());
        for t in &titles {
            let v = e.embed(t);
            let before = score_document(&v, &profile).unwrap();
            let after = score_document(&v, &grown).unwrap();
            let sim = similarity(&v, &donor.units[0].embedding).unwrap();
            prop_assert_eq!(after.to_bits(), (before + sim).to_bits());
        }
    }

    #[test]
    fn sequential_and_parallel_retrieval_agree(
        titles in prop::collection::vec(title(6), 60),
        s in stream(40, 60),
    ) {
        let e = vocab_embedder();
        let docs = titles
            .iter()
            .enumerate()
            .map(|(i, t)| DocMeta { doc_id: format!("d{i:04}"), title: t.clone(), timestamp: i as i64 })
            .collect();
        let index = DocumentIndex::build(docs, &e, &IndexConfig::approximate()).unwrap();
        let profile = profile_from(&s);
        let run = |parallelism| {
            let cfg = RetrievalConfig { per_unit_n: 10, parallelism, ..RetrievalConfig::default() };
            retrieve(&profile, &index, &cfg).unwrap()
        };
        prop_assert_eq!(run(Parallelism::Sequential), run(Parallelism::Rayon));
    }
}
