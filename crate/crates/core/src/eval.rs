//! Offline evaluation with sampled metrics.
//!
//! Protocol: each user's most recent `test_tail` clicks are held out. Every
//! held-out item is ranked together with `candidates_per_eval` sampled
//! negatives whose title embedding has cosine below `distinct_sim_threshold`
//! to it. HR@N and NDCG@N are averaged over a user's evaluations, then over
//! users.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use parking_lot::RwLock;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, Embedder, Embedding};
use crate::index::DocumentIndex;
use crate::keyterm::KeyTermExtractor;
use crate::par::{self, Parallelism};
use crate::records::ClickRecord;
use crate::retrieval::sum_similarity;
use crate::text::Fnv1a;
use crate::unit_store::{ProfileStore, UnitConfig, UnitError, UserProfile};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty training index")]
    EmptyIndex,
    #[error("document {0:?} is not in the corpus")]
    UnknownDocument(String),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("ranker failed: {0}")]
    Ranker(String),
    #[error(transparent)]
    Unit(#[from] UnitError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub min_clicks: usize,
    pub max_clicks: usize,
    pub test_tail: usize,
    pub candidates_per_eval: usize,
    pub distinct_sim_threshold: f64,
    pub metric_cutoffs: Vec<usize>,
    pub rng_seed: u64,
    pub parallelism: Parallelism,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_clicks: 15,
            max_clicks: 200,
            test_tail: 5,
            candidates_per_eval: 495,
            distinct_sim_threshold: 0.4,
            metric_cutoffs: vec![5, 20, 50],
            rng_seed: 0,
            parallelism: Parallelism::Rayon,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.into()));
        if self.test_tail == 0 {
            return bad("test_tail must be at least 1");
        }
        if self.metric_cutoffs.is_empty() || self.metric_cutoffs.contains(&0) {
            return bad("metric_cutoffs must be non-empty and positive");
        }
        let max_cut = self.metric_cutoffs.iter().copied().max().unwrap_or(0);
        if self.candidates_per_eval < max_cut {
            return bad("candidates_per_eval must be at least the largest cutoff");
        }
        if self.min_clicks > self.max_clicks {
            return bad("min_clicks exceeds max_clicks");
        }
        Ok(())
    }
}

/// 1 if the item was ranked within the cutoff, else 0.
pub fn hit_ratio(rank: Option<usize>, n: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= n => 1.0,
        _ => 0.0,
    }
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` within the cutoff.
pub fn ndcg(rank: Option<usize>, n: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= n => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// One user's chronological split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub train: Vec<ClickRecord>,
    pub test: Vec<ClickRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub too_few_clicks: usize,
    pub too_many_clicks: usize,
}

fn group_by_user(clicks: &[ClickRecord]) -> BTreeMap<&str, Vec<&ClickRecord>> {
    let mut by_user: BTreeMap<&str, Vec<&ClickRecord>> = BTreeMap::new();
    for c in clicks {
        by_user.entry(c.user_id.as_str()).or_default().push(c);
    }
    for list in by_user.values_mut() {
        list.sort_by(|a, b| (a.timestamp, &a.doc_id).cmp(&(b.timestamp, &b.doc_id)));
    }
    by_user
}

/// Holds out each eligible user's last `test_tail` clicks. Users outside
/// `[min_clicks, max_clicks]`, or with no click left for training, are
/// dropped and counted.
pub fn split_dataset(
    clicks: &[ClickRecord],
    config: &EvalConfig,
) -> (Vec<UserHistory>, SplitStats) {
    let mut stats = SplitStats::default();
    let mut users = Vec::new();
    for (user, list) in group_by_user(clicks) {
        let n = list.len();
        if n > config.max_clicks {
            stats.too_many_clicks += 1;
            continue;
        }
        if n < config.min_clicks || n < config.test_tail + 1 {
            stats.too_few_clicks += 1;
            continue;
        }
        let cut = n - config.test_tail;
        users.push(UserHistory {
            user_id: user.to_owned(),
            train: list[..cut].iter().map(|&c| c.clone()).collect(),
            test: list[cut..].iter().map(|&c| c.clone()).collect(),
        });
    }
    (users, stats)
}

/// Train on `train` clicks, test on each user's last `test_tail` clicks of
/// `test`. Users need at least `test_tail` test clicks and one train click.
/// The click-count bounds are not applied.
pub fn split_periods(
    train: &[ClickRecord],
    test: &[ClickRecord],
    config: &EvalConfig,
) -> (Vec<UserHistory>, SplitStats) {
    let train_by_user = group_by_user(train);
    let mut stats = SplitStats::default();
    let mut users = Vec::new();
    for (user, list) in group_by_user(test) {
        let Some(tr) = train_by_user.get(user) else {
            stats.too_few_clicks += 1;
            continue;
        };
        if list.len() < config.test_tail {
            stats.too_few_clicks += 1;
            continue;
        }
        users.push(UserHistory {
            user_id: user.to_owned(),
            train: tr.iter().map(|&c| c.clone()).collect(),
            test: list[list.len() - config.test_tail..]
                .iter()
                .map(|&c| c.clone())
                .collect(),
        });
    }
    (users, stats)
}

/// Result of [`sample_candidates`].
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSample {
    pub doc_ids: Vec<String>,
    /// Fewer eligible items than requested; the whole pool was returned.
    pub shortfall: bool,
}

/// Uniformly samples negatives whose cosine to the test item is below the
/// distinctness threshold. `exclude` ids (the test item itself, the user's
/// history) are never sampled.
pub fn sample_candidates(
    test_embedding: &Embedding,
    corpus: &DocumentIndex,
    exclude: &HashSet<&str>,
    config: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> CandidateSample {
    let q = test_embedding.as_slice();
    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            !exclude.contains(corpus.doc(i).doc_id.as_str())
                && dot(q, corpus.vector(i)) < config.distinct_sim_threshold
        })
        .collect();
    let want = config.candidates_per_eval;
    if eligible.len() <= want {
        return CandidateSample {
            doc_ids: eligible
                .iter()
                .map(|&i| corpus.doc(i).doc_id.clone())
                .collect(),
            shortfall: eligible.len() < want,
        };
    }
    let mut picked: Vec<usize> = sample(rng, eligible.len(), want)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picked.sort_unstable();
    CandidateSample {
        doc_ids: picked
            .into_iter()
            .map(|i| corpus.doc(i).doc_id.clone())
            .collect(),
        shortfall: false,
    }
}

/// The training document most similar to `embedding` (ties: lowest doc_id).
/// A zero embedding maps to the lowest doc_id.
pub fn map_cold_item(
    embedding: &Embedding,
    train_index: &DocumentIndex,
) -> Result<String, EvalError> {
    if train_index.is_empty() {
        return Err(EvalError::EmptyIndex);
    }
    let q = embedding.as_slice();
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..train_index.len() {
        let s = dot(q, train_index.vector(i));
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(train_index.doc(best.1).doc_id.clone())
}

/// Global popularity order: train click count descending, ties by doc_id;
/// `universe` items never clicked come last, by doc_id.
pub fn item_pop_rank<'a>(
    train: &'a [ClickRecord],
    universe: impl IntoIterator<Item = &'a str>,
) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in train {
        *counts.entry(c.doc_id.as_str()).or_insert(0) += 1;
    }
    for id in universe {
        counts.entry(id).or_insert(0);
    }
    let mut items: Vec<(&str, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    items.into_iter().map(|(id, _)| id.to_owned()).collect()
}

/// A system under evaluation.
pub trait Ranker: Sync {
    fn name(&self) -> &str;

    /// Orders `candidates` best first for `user`.
    fn rank(&self, user: &UserHistory, candidates: &[String]) -> Result<Vec<String>, EvalError>;
}

fn sort_by_score(mut scored: Vec<(f64, &String)>) -> Vec<String> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Interest-unit ranking: candidates ordered by summed similarity to the
/// user's units, built from the user's training clicks.
pub struct UnitRanker {
    name: String,
    profiles: HashMap<String, UserProfile>,
    corpus: Arc<DocumentIndex>,
}

impl UnitRanker {
    /// Replays every user's training clicks through a fresh profile store.
    /// `corpus` must be embedded with the same `embedder`.
    pub fn build(
        name: impl Into<String>,
        users: &[UserHistory],
        corpus: Arc<DocumentIndex>,
        embedder: Arc<dyn Embedder>,
        unit_config: UnitConfig,
        extractor: &dyn KeyTermExtractor,
        parallelism: Parallelism,
    ) -> Result<Self, EvalError> {
        if corpus.fingerprint() != embedder.fingerprint() {
            return Err(EvalError::Unit(UnitError::EmbedderMismatch));
        }
        let store = ProfileStore::new(unit_config, embedder)?;
        let events: Vec<(String, crate::unit_store::Document)> = users
            .iter()
            .flat_map(|u| {
                u.train
                    .iter()
                    .map(|c| (c.user_id.clone(), c.to_document(extractor)))
            })
            .collect();
        store.ingest_batch(events, parallelism);
        Ok(Self::from_profiles(name, store.profiles(), corpus))
    }

    pub fn from_profiles(
        name: impl Into<String>,
        profiles: impl IntoIterator<Item = UserProfile>,
        corpus: Arc<DocumentIndex>,
    ) -> Self {
        UnitRanker {
            name: name.into(),
            profiles: profiles
                .into_iter()
                .map(|p| (p.user_id.clone(), p))
                .collect(),
            corpus,
        }
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.get(user_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &UserProfile> {
        self.profiles.values()
    }
}

impl Ranker for UnitRanker {
    fn name(&self) -> &str {
        &self.name
    }

    fn rank(&self, user: &UserHistory, candidates: &[String]) -> Result<Vec<String>, EvalError> {
        let empty = UserProfile::new(&user.user_id);
        let profile = self.profiles.get(&user.user_id).unwrap_or(&empty);
        let scored = candidates
            .iter()
            .map(|id| {
                let pos = self
                    .corpus
                    .position(id)
                    .ok_or_else(|| EvalError::UnknownDocument(id.clone()))?;
                Ok((sum_similarity(self.corpus.vector(pos), profile), id))
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(sort_by_score(scored))
    }
}

/// Popularity baseline. Items never clicked in training can borrow the
/// count of their most similar training item.
pub struct ItemPopRanker {
    counts: HashMap<String, usize>,
    corpus: Arc<DocumentIndex>,
    train_index: Option<DocumentIndex>,
    cold_cache: RwLock<HashMap<String, String>>,
}

impl ItemPopRanker {
    pub fn new(train: &[ClickRecord], corpus: Arc<DocumentIndex>, cold_mapping: bool) -> Self {
        let mut counts = HashMap::new();
        for c in train {
            *counts.entry(c.doc_id.clone()).or_insert(0) += 1;
        }
        let train_index = cold_mapping
            .then(|| {
                let known: HashMap<String, Embedding> = counts
                    .keys()
                    .filter_map(|id: &String| corpus.embedding(id).map(|e| (id.clone(), e)))
                    .collect();
                let docs = known
                    .keys()
                    .filter_map(|id| corpus.position(id).map(|p| corpus.doc(p).clone()))
                    .collect();
                DocumentIndex::build_from_vectors(
                    docs,
                    known,
                    corpus.dimension(),
                    corpus.fingerprint(),
                    &crate::index::IndexConfig::exact(),
                )
                .ok()
            })
            .flatten()
            .filter(|idx| !idx.is_empty());
        ItemPopRanker {
            counts,
            corpus,
            train_index,
            cold_cache: RwLock::new(HashMap::new()),
        }
    }

    fn popularity(&self, doc_id: &str) -> usize {
        if let Some(&c) = self.counts.get(doc_id) {
            return c;
        }
        let Some(train_index) = &self.train_index else {
            return 0;
        };
        if let Some(mapped) = self.cold_cache.read().get(doc_id) {
            return self.counts.get(mapped).copied().unwrap_or(0);
        }
        let Some(emb) = self.corpus.embedding(doc_id) else {
            return 0;
        };
        let mapped = map_cold_item(&emb, train_index).expect("non-empty train index");
        let c = self.counts.get(&mapped).copied().unwrap_or(0);
        self.cold_cache.write().insert(doc_id.to_owned(), mapped);
        c
    }
}

impl Ranker for ItemPopRanker {
    fn name(&self) -> &str {
        "itempop"
    }

    fn rank(&self, _user: &UserHistory, candidates: &[String]) -> Result<Vec<String>, EvalError> {
        let scored = candidates
            .iter()
            .map(|id| (self.popularity(id) as f64, id))
            .collect();
        Ok(sort_by_score(scored))
    }
}

/// Uniformly random order, seeded by the user and the candidate set.
pub struct RandomRanker {
    pub seed: u64,
}

impl Ranker for RandomRanker {
    fn name(&self) -> &str {
        "random"
    }

    fn rank(&self, user: &UserHistory, candidates: &[String]) -> Result<Vec<String>, EvalError> {
        let mut h = Fnv1a::new();
        h.write_u64(self.seed).write(user.user_id.as_bytes());
        for c in candidates {
            h.write(c.as_bytes()).write(&[0]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let mut out = candidates.to_vec();
        out.shuffle(&mut rng);
        Ok(out)
    }
}

/// Knows the held-out items and ranks them first. Useful to check the
/// harness itself.
pub struct OracleRanker;

impl Ranker for OracleRanker {
    fn name(&self) -> &str {
        "oracle"
    }

    fn rank(&self, user: &UserHistory, candidates: &[String]) -> Result<Vec<String>, EvalError> {
        let relevant: HashSet<&str> = user.test.iter().map(|c| c.doc_id.as_str()).collect();
        let (mut first, rest): (Vec<String>, Vec<String>) = candidates
            .iter()
            .cloned()
            .partition(|c| relevant.contains(c.as_str()));
        first.extend(rest);
        Ok(first)
    }
}

/// Dataset statistics in the usual users/items/interactions layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub users: usize,
    pub train_items: usize,
    pub train_interactions: usize,
    pub test_items: usize,
    pub test_interactions: usize,
    /// Test items never clicked in training.
    pub cold_items: usize,
}

pub fn dataset_counts(users: &[UserHistory]) -> DatasetCounts {
    let train: HashSet<&str> = users
        .iter()
        .flat_map(|u| u.train.iter().map(|c| c.doc_id.as_str()))
        .collect();
    let test: HashSet<&str> = users
        .iter()
        .flat_map(|u| u.test.iter().map(|c| c.doc_id.as_str()))
        .collect();
    DatasetCounts {
        users: users.len(),
        train_items: train.len(),
        train_interactions: users.iter().map(|u| u.train.len()).sum(),
        test_items: test.len(),
        test_interactions: users.iter().map(|u| u.test.len()).sum(),
        cold_items: test.difference(&train).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub cutoff: usize,
    pub hit_ratio: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserDetail {
    pub user_id: String,
    /// Rank of each held-out item among its candidates (1-based).
    pub ranks: Vec<Option<usize>>,
    /// Per-cutoff means over this user's evaluations, in cutoff order.
    pub hit_ratio: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub shortfall_evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub metrics: Vec<CutoffMetrics>,
    pub counts: DatasetCounts,
    pub evaluated_users: usize,
    pub skipped_users: usize,
    /// More than 1% of users failed.
    pub skipped_flag: bool,
    /// Evaluations whose eligible pool was smaller than requested.
    pub shortfall_evaluations: usize,
    pub candidate_sampling: String,
    pub config: EvalConfig,
    /// Full effective configuration of the caller, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_config: Option<serde_json::Value>,
    pub users: Vec<UserDetail>,
}

impl EvalReport {
    pub fn metric(&self, cutoff: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.cutoff == cutoff)
    }

    pub fn hr(&self, cutoff: usize) -> f64 {
        self.metric(cutoff).map_or(f64::NAN, |m| m.hit_ratio)
    }

    pub fn ndcg(&self, cutoff: usize) -> f64 {
        self.metric(cutoff).map_or(f64::NAN, |m| m.ndcg)
    }

    /// `H@n N@n` columns for every cutoff.
    pub fn table_header(&self) -> String {
        let mut s = format!("{:<24}", "");
        for m in &self.metrics {
            let _ = write!(
                s,
                " | {:>7} | {:>7}",
                format!("H@{}", m.cutoff),
                format!("N@{}", m.cutoff)
            );
        }
        s
    }

    pub fn table_row(&self) -> String {
        let mut s = format!("{:<24}", self.system);
        for m in &self.metrics {
            let _ = write!(s, " | {:>7.4} | {:>7.4}", m.hit_ratio, m.ndcg);
        }
        s
    }

    pub fn table(&self) -> String {
        format!("{}\n{}\n", self.table_header(), self.table_row())
    }
}

fn eval_rng(seed: u64, user_id: &str, k: usize) -> ChaCha8Rng {
    let h = Fnv1a::new()
        .write_u64(seed)
        .write(user_id.as_bytes())
        .write_u64(k as u64)
        .finish();
    ChaCha8Rng::seed_from_u64(h)
}

/// Candidate lists of one user, one per held-out item. Each list is sorted
/// by doc_id and contains the held-out item.
#[derive(Clone, Debug, PartialEq)]
pub struct UserCandidates {
    pub lists: Vec<Vec<String>>,
    pub shortfall_evaluations: usize,
}

/// Draws every user's candidate lists. Draws depend only on the seed, the
/// user and the corpus, so different rankers can share them. `None` marks a
/// user whose held-out item is missing from the corpus.
pub fn draw_candidates(
    users: &[UserHistory],
    corpus: &DocumentIndex,
    config: &EvalConfig,
) -> Vec<Option<UserCandidates>> {
    par::map(config.parallelism, users, |user| {
        let mut exclude: HashSet<&str> = user.train.iter().map(|c| c.doc_id.as_str()).collect();
        exclude.extend(user.test.iter().map(|c| c.doc_id.as_str()));
        let mut lists = Vec::with_capacity(user.test.len());
        let mut shortfall = 0;
        for (k, item) in user.test.iter().enumerate() {
            let emb = corpus.embedding(&item.doc_id)?;
            let mut rng = eval_rng(config.rng_seed, &user.user_id, k);
            let sample = sample_candidates(&emb, corpus, &exclude, config, &mut rng);
            shortfall += usize::from(sample.shortfall);
            let mut list = sample.doc_ids;
            list.push(item.doc_id.clone());
            list.sort();
            lists.push(list);
        }
        Some(UserCandidates {
            lists,
            shortfall_evaluations: shortfall,
        })
    })
}

/// Runs the sampled-metrics protocol for `ranker` over `users`.
pub fn evaluate(
    ranker: &dyn Ranker,
    users: &[UserHistory],
    corpus: &DocumentIndex,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let candidates = draw_candidates(users, corpus, config);
    evaluate_with(ranker, users, &candidates, config)
}

/// Like [`evaluate`], with candidate lists from [`draw_candidates`].
pub fn evaluate_with(
    ranker: &dyn Ranker,
    users: &[UserHistory],
    candidates: &[Option<UserCandidates>],
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    if candidates.len() != users.len() {
        return Err(EvalError::InvalidConfig(
            "one candidate entry per user is required".into(),
        ));
    }
    let cutoffs = &config.metric_cutoffs;
    let pairs: Vec<(&UserHistory, &Option<UserCandidates>)> =
        users.iter().zip(candidates).collect();
    let results = par::map(config.parallelism, &pairs, |&(user, cands)| {
        let cands = cands.as_ref()?;
        let mut ranks = Vec::with_capacity(cands.lists.len());
        for (item, list) in user.test.iter().zip(&cands.lists) {
            let order = ranker.rank(user, list).ok()?;
            ranks.push(order.iter().position(|d| *d == item.doc_id).map(|p| p + 1));
        }
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let mean = |f: fn(Option<usize>, usize) -> f64| -> Vec<f64> {
            cutoffs
                .iter()
                .map(|&c| ranks.iter().map(|&r| f(r, c)).sum::<f64>() / n)
                .collect()
        };
        Some(UserDetail {
            user_id: user.user_id.clone(),
            hit_ratio: mean(hit_ratio),
            ndcg: mean(ndcg),
            ranks,
            shortfall_evaluations: cands.shortfall_evaluations,
        })
    });

    let details: Vec<UserDetail> = results.into_iter().flatten().collect();
    let skipped = users.len() - details.len();
    let n = details.len().max(1) as f64;
    let metrics = cutoffs
        .iter()
        .enumerate()
        .map(|(i, &cutoff)| CutoffMetrics {
            cutoff,
            hit_ratio: details.iter().map(|d| d.hit_ratio[i]).sum::<f64>() / n,
            ndcg: details.iter().map(|d| d.ndcg[i]).sum::<f64>() / n,
        })
        .collect();
    Ok(EvalReport {
        system: ranker.name().to_owned(),
        metrics,
        counts: dataset_counts(users),
        evaluated_users: details.len(),
        skipped_users: skipped,
        skipped_flag: skipped as f64 > 0.01 * users.len() as f64,
        shortfall_evaluations: details.iter().map(|d| d.shortfall_evaluations).sum(),
        candidate_sampling: "per-test-item".into(),
        config: config.clone(),
        effective_config: None,
        users: details,
    })
}
