#![allow(dead_code)]

use proptest::prelude::*;
use unitrec::embedding::{EmbedderConfig, TextEmbedder};
use unitrec::keyterm::StopwordExtractor;
use unitrec::unit_store::Document;

pub const VOCAB: [&str; 16] = [
    "tent", "stove", "trail", "boots", "espresso", "grinder", "beans", "kettle", "guitar", "amp",
    "pedal", "strings", "lens", "tripod", "shutter", "flash",
];

pub fn vocab_embedder() -> TextEmbedder {
    TextEmbedder::new(EmbedderConfig::vocab(VOCAB)).unwrap()
}

/// A title of 1..=max_len vocabulary words.
pub fn title(max_len: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0..VOCAB.len(), 1..=max_len)
        .prop_map(|idx| idx.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" "))
}

/// Titles drawn mostly from one of four word clusters, so streams produce
/// both merges and new units.
pub fn clustered_title() -> impl Strategy<Value = String> {
    (
        0..4usize,
        prop::collection::vec((0..4usize, any::<bool>()), 1..=5),
    )
        .prop_map(|(c, words)| {
            words
                .iter()
                .map(|&(w, stray)| {
                    if stray {
                        VOCAB[(c * 4 + w + 5) % 16]
                    } else {
                        VOCAB[c * 4 + w]
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
}

/// Click stream over a pool of `pool` documents with strictly increasing
/// timestamps. Re-clicks of a document are allowed.
pub fn stream(pool: usize, max_len: usize) -> impl Strategy<Value = Vec<Document>> {
    (
        prop::collection::vec(clustered_title(), pool),
        prop::collection::vec((0..pool, 1..5i64), 1..=max_len),
    )
        .prop_map(|(titles, picks)| {
            let stop = StopwordExtractor::default();
            let mut ts = 0;
            picks
                .into_iter()
                .map(|(i, gap)| {
                    ts += gap;
                    Document::new(format!("d{i:04}"), titles[i].clone(), ts, &stop)
                })
                .collect()
        })
}

/// Naive bag-of-words vector over `VOCAB`, unnormalized.
pub fn counts(title: &str) -> Vec<f64> {
    let mut v = vec![0.0; VOCAB.len()];
    for tok in title.split_whitespace() {
        if let Some(i) = VOCAB.iter().position(|t| *t == tok) {
            v[i] += 1.0;
        }
    }
    v
}

/// Cosine by an explicit double loop over coordinates.
#[allow(clippy::needless_range_loop)]
pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            if i == j {
                dot += a[i] * b[j];
            }
        }
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

use std::collections::{BTreeSet, HashMap};

use unitrec::embedding::{embed_text, similarity, Embedder};
use unitrec::unit_store::{contextual_text, update_profile, UnitConfig, UpdateKind, UserProfile};

/// Applies `stream` to a fresh profile and returns every invariant
/// violation found after each step.
pub fn stream_violations(
    stream: &[Document],
    config: &UnitConfig,
    embedder: &TextEmbedder,
) -> Vec<String> {
    let mut errs = Vec::new();
    let mut profile = UserProfile::new("u");
    let mut live: BTreeSet<String> = BTreeSet::new();
    for (step, doc) in stream.iter().enumerate() {
        let before = profile.clone();
        let doc_vec = embedder.embed(&doc.title);
        let pre_sims: HashMap<String, f64> = before
            .units
            .iter()
            .map(|u| {
                (
                    u.unit_id.clone(),
                    similarity(&doc_vec, &u.embedding).unwrap(),
                )
            })
            .collect();
        let outcome = match update_profile(&mut profile, doc, embedder, config) {
            Ok(o) => o,
            Err(e) => {
                // Only re-clicks that are not newer may be rejected, and
                // they must leave the profile alone.
                let member = before
                    .units
                    .iter()
                    .any(|u| u.member_doc_ids.contains(&doc.doc_id));
                if !member {
                    errs.push(format!("step {step}: unexpected error {e}"));
                }
                if profile != before {
                    errs.push(format!("step {step}: failed update changed the profile"));
                }
                continue;
            }
        };
        let mut add = |m: String| errs.push(format!("step {step}: {m}"));

        let holders = profile
            .units
            .iter()
            .filter(|u| u.member_doc_ids.contains(&doc.doc_id))
            .count();
        // The absorbing unit may lose a recency tie and be pruned at once.
        let expected = if outcome.pruned.contains(&outcome.unit_id) {
            0
        } else {
            1
        };
        if holders != expected {
            add(format!("doc in {holders} units, expected {expected}"));
        }

        let mut union = BTreeSet::new();
        let mut total = 0;
        for u in &profile.units {
            if u.features.size != u.member_doc_ids.len() {
                add(format!(
                    "unit {} size {} != members {}",
                    u.unit_id,
                    u.features.size,
                    u.member_doc_ids.len()
                ));
            }
            total += u.features.size;
            union.extend(u.member_doc_ids.iter().cloned());
        }
        if total != union.len() {
            add("units share members".into());
        }
        live.insert(doc.doc_id.clone());
        let mut pruned_members: BTreeSet<String> = before
            .units
            .iter()
            .filter(|u| outcome.pruned.contains(&u.unit_id))
            .flat_map(|u| u.member_doc_ids.iter().cloned())
            .collect();
        if outcome.pruned.contains(&outcome.unit_id) {
            // The pruned absorber held the new document and every unit merged into it.
            let after: BTreeSet<&str> = profile.units.iter().map(|u| u.unit_id.as_str()).collect();
            pruned_members.insert(doc.doc_id.clone());
            for u in before
                .units
                .iter()
                .filter(|u| !after.contains(u.unit_id.as_str()))
            {
                pruned_members.extend(u.member_doc_ids.iter().cloned());
            }
        }
        let dropped: BTreeSet<String> = live.difference(&union).cloned().collect();
        if outcome.pruned.is_empty() && !dropped.is_empty() {
            add(format!(
                "{} documents vanished without pruning",
                dropped.len()
            ));
        }
        if !dropped.is_subset(&pruned_members) {
            add("documents dropped outside pruned units".into());
        }
        live = union;

        if profile.units.len() > 2 * config.keep_per_group {
            add(format!("{} units after pruning", profile.units.len()));
        }

        for u in &profile.units {
            let fresh = embed_text(&contextual_text(u, config), embedder.config()).unwrap();
            let same = fresh
                .as_slice()
                .iter()
                .zip(u.embedding.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                add(format!("stale embedding on {}", u.unit_id));
            }
        }

        if !matches!(outcome.kind, UpdateKind::Touched) {
            for u in &profile.units {
                if u.unit_id == outcome.unit_id {
                    continue;
                }
                if let Some(&s) = pre_sims.get(&u.unit_id) {
                    if s >= config.tau {
                        add(format!(
                            "unit {} had similarity {s} but was not merged",
                            u.unit_id
                        ));
                    }
                }
            }
        }
    }

    let mut replay = UserProfile::new("u");
    for doc in stream {
        let _ = update_profile(&mut replay, doc, embedder, config);
    }
    if replay != profile {
        errs.push("replay diverged".into());
    }
    errs
}
