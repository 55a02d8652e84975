//! Interest-aware retrieval.
//!
//! Every unit of the profile queries the index for its `per_unit_n` nearest
//! documents. The union of those candidates is then scored by the sum of each
//! candidate's similarity to *all* units, not only the ones that retrieved
//! it, and sorted by that score.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, dot_block, interleave, Embedding, LANES};
use crate::index::{DocumentIndex, IndexError};
use crate::par::{self, Parallelism};
use crate::unit_store::UserProfile;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("profile and index were built with different embedders")]
    EmbedderMismatch,
    #[error("dimension mismatch: vector {vector} vs unit {unit}")]
    DimensionMismatch { vector: usize, unit: usize },
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Nearest neighbours fetched per unit.
    pub per_unit_n: usize,
    pub max_results: usize,
    /// Drop documents that are already members of a unit.
    pub exclude_clicked: bool,
    pub parallelism: Parallelism,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            per_unit_n: 100,
            max_results: 100,
            exclude_clicked: true,
            parallelism: Parallelism::Rayon,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.per_unit_n == 0 || self.max_results == 0 {
            return Err(RetrievalError::InvalidConfig(
                "per_unit_n and max_results must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Documents by score descending, ties by doc_id ascending; ids unique.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub items: Vec<ScoredDoc>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.items.iter().map(|s| s.doc_id.as_str()).collect()
    }
}

/// Σ over units of `similarity(doc, unit)`, summed in unit order.
#[inline]
pub(crate) fn sum_similarity(doc: &[f64], profile: &UserProfile) -> f64 {
    let mut score = 0.0;
    for unit in &profile.units {
        score += dot(doc, unit.embedding.as_slice());
    }
    score
}

/// Score of one document against a profile: the sum of its similarity to
/// every unit. Zero for an empty profile.
pub fn score_document(
    doc_embedding: &Embedding,
    profile: &UserProfile,
) -> Result<f64, RetrievalError> {
    if let Some(u) = profile.units.first() {
        if u.embedding.dimension() != doc_embedding.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                vector: doc_embedding.dimension(),
                unit: u.embedding.dimension(),
            });
        }
    }
    Ok(sum_similarity(doc_embedding.as_slice(), profile))
}

/// Ranks documents for `profile` from `index`.
pub fn retrieve(
    profile: &UserProfile,
    index: &DocumentIndex,
    config: &RetrievalConfig,
) -> Result<RankedResult, RetrievalError> {
    config.validate()?;
    if profile.units.is_empty() {
        return Ok(RankedResult::default());
    }
    if matches!(profile.embedder_fingerprint, Some(f) if f != index.fingerprint()) {
        return Err(RetrievalError::EmbedderMismatch);
    }

    // Step 1: per-unit nearest neighbours, merged by index position.
    // Sequentially, units probing the same list share a pass over it.
    let per_unit = match config.parallelism {
        Parallelism::Sequential => {
            let queries: Vec<&Embedding> = profile.units.iter().map(|u| &u.embedding).collect();
            index.search_positions_many(&queries, config.per_unit_n)?
        }
        Parallelism::Rayon => par::map(config.parallelism, &profile.units, |u| {
            index.search_positions(&u.embedding, config.per_unit_n)
        })
        .into_iter()
        .collect::<Result<_, _>>()?,
    };
    let mut candidates: Vec<(usize, f64)> = per_unit.into_iter().flatten().collect();
    candidates.sort_unstable_by_key(|c| c.0);
    candidates.dedup_by_key(|c| c.0);

    let clicked: HashSet<usize> = if config.exclude_clicked {
        profile
            .units
            .iter()
            .flat_map(|u| u.member_doc_ids.iter().filter_map(|id| index.position(id)))
            .collect()
    } else {
        HashSet::new()
    };

    // Step 2: sum of similarities to all units. With a single unit the
    // step-1 similarity already is that sum.
    let single = profile.units.len() == 1;
    let dim = index.dimension();
    let units = interleave(profile.units.iter().map(|u| u.embedding.as_slice()), dim);
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .filter(|(pos, _)| !clicked.contains(pos))
        .map(|(pos, sim)| {
            let score = if single {
                sim
            } else {
                // Same sum as `sum_similarity`, in unit order.
                let doc = index.vector(pos);
                let mut score = 0.0;
                let mut left = profile.units.len();
                for block in units.chunks_exact(LANES * dim) {
                    for s in &dot_block(doc, block)[..left.min(LANES)] {
                        score += s;
                    }
                    left = left.saturating_sub(LANES);
                }
                score
            };
            (pos, score)
        })
        .collect();

    // Positions follow doc_id order, so position breaks ties.
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > config.max_results {
        scored.select_nth_unstable_by(config.max_results, order);
        scored.truncate(config.max_results);
    }
    scored.sort_unstable_by(order);
    Ok(RankedResult {
        items: scored
            .into_iter()
            .map(|(pos, score)| ScoredDoc {
                doc_id: index.doc(pos).doc_id.clone(),
                score,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedder, EmbedderConfig, TextEmbedder};
    use crate::index::{DocMeta, IndexConfig};
    use crate::keyterm::StopwordExtractor;
    use crate::unit_store::{update_profile, Document, UnitConfig};

    fn emb() -> TextEmbedder {
        TextEmbedder::new(EmbedderConfig::vocab([
            "tent", "stove", "lamp", "kayak", "paddle",
        ]))
        .unwrap()
    }

    fn corpus() -> Vec<DocMeta> {
        [
            ("c1", "tent"),
            ("c2", "tent stove"),
            ("c3", "stove lamp"),
            ("c4", "kayak paddle"),
            ("c5", "lamp"),
        ]
        .iter()
        .map(|&(id, t)| DocMeta {
            doc_id: id.into(),
            title: t.into(),
            timestamp: 0,
        })
        .collect()
    }

    fn profile_with(titles: &[&str], e: &TextEmbedder) -> UserProfile {
        let mut p = UserProfile::new("u");
        let ex = StopwordExtractor::default();
        for (i, t) in titles.iter().enumerate() {
            let d = Document::new(format!("clicked{i}"), *t, i as i64, &ex);
            update_profile(&mut p, &d, e, &UnitConfig::default()).unwrap();
        }
        p
    }

    #[test]
    fn empty_profile_gives_empty_result() {
        let e = emb();
        let idx = DocumentIndex::build(corpus(), &e, &IndexConfig::exact()).unwrap();
        let r = retrieve(&UserProfile::new("u"), &idx, &RetrievalConfig::default()).unwrap();
        assert!(r.is_empty());
        assert_eq!(
            score_document(&e.embed("tent"), &UserProfile::new("u")).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_unit_matches_exact_search() {
        let e = emb();
        let idx = DocumentIndex::build(corpus(), &e, &IndexConfig::exact()).unwrap();
        let p = profile_with(&["tent"], &e);
        assert_eq!(p.units.len(), 1);
        let cfg = RetrievalConfig {
            per_unit_n: 5,
            ..RetrievalConfig::default()
        };
        let r = retrieve(&p, &idx, &cfg).unwrap();
        let direct = idx.search(&p.units[0].embedding, 5).unwrap();
        assert_eq!(
            r.doc_ids(),
            direct.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>()
        );
        for (s, h) in r.items.iter().zip(&direct) {
            assert_eq!(s.score, h.similarity);
        }
        // Unit text "tent | tent" embeds as pure "tent": c1=1, c2=1/√2, rest 0.
        assert_eq!(r.doc_ids(), ["c1", "c2", "c3", "c4", "c5"]);
        assert!((r.items[1].score - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shared_candidate_sums_both_units() {
        let e = emb();
        let idx = DocumentIndex::build(corpus(), &e, &IndexConfig::exact()).unwrap();
        let p = profile_with(&["tent", "stove"], &e);
        assert_eq!(p.units.len(), 2);
        let r = retrieve(&p, &idx, &RetrievalConfig::default()).unwrap();
        let c2 = r
            .items
            .iter()
            .filter(|s| s.doc_id == "c2")
            .collect::<Vec<_>>();
        assert_eq!(c2.len(), 1);
        // c2 = (tent + stove)/√2 against pure tent and pure stove units.
        assert!((c2[0].score - 2.0 * 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.items[0].doc_id, "c2");
    }

    #[test]
    fn score_document_sums() {
        // Units at pure "tent" and pure "stove"; the document vector has
        // cosine 0.6 with the first and 0.2 with the second.
        let e = emb();
        let p = profile_with(&["tent", "stove"], &e);
        let v =
            Embedding::normalized(vec![0.6, 0.2, (1.0f64 - 0.36 - 0.04).sqrt(), 0.0, 0.0]).unwrap();
        assert!((score_document(&v, &p).unwrap() - 0.8).abs() < 1e-12);
        let one = profile_with(&["lamp"], &e);
        assert!((score_document(&one.units[0].embedding, &one).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            score_document(&Embedding::zero(2), &one),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn clicked_documents_excluded_on_request() {
        let e = emb();
        let mut docs = corpus();
        docs.push(DocMeta {
            doc_id: "clicked0".into(),
            title: "tent".into(),
            timestamp: 0,
        });
        let idx = DocumentIndex::build(docs, &e, &IndexConfig::exact()).unwrap();
        let p = profile_with(&["tent"], &e);
        let on = retrieve(&p, &idx, &RetrievalConfig::default()).unwrap();
        assert!(!on.doc_ids().contains(&"clicked0"));
        let off = retrieve(
            &p,
            &idx,
            &RetrievalConfig {
                exclude_clicked: false,
                ..RetrievalConfig::default()
            },
        )
        .unwrap();
        assert_eq!(off.items[0].doc_id, "c1");
        assert_eq!(off.items[1].doc_id, "clicked0");
    }

    #[test]
    fn embedder_mismatch() {
        let e = emb();
        let other =
            TextEmbedder::new(EmbedderConfig::vocab(["a1", "b1", "c1", "d1", "e1"])).unwrap();
        let idx = DocumentIndex::build(corpus(), &other, &IndexConfig::exact()).unwrap();
        let p = profile_with(&["tent"], &e);
        assert!(matches!(
            retrieve(&p, &idx, &RetrievalConfig::default()),
            Err(RetrievalError::EmbedderMismatch)
        ));
    }

    #[test]
    fn max_results_truncates() {
        let e = emb();
        let idx = DocumentIndex::build(corpus(), &e, &IndexConfig::exact()).unwrap();
        let p = profile_with(&["tent", "kayak"], &e);
        let r = retrieve(
            &p,
            &idx,
            &RetrievalConfig {
                max_results: 2,
                parallelism: Parallelism::Sequential,
                ..RetrievalConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.len(), 2);
    }
}
