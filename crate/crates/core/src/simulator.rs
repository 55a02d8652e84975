//! Synthetic multi-interest click streams with interest drift.
//!
//! Topics own disjoint term lists, split into one term region per sub-topic.
//! A document belongs to one sub-topic; its title is a bag of terms drawn
//! mostly from a core window of that region, otherwise from anywhere in the
//! topic, plus occasional shared background terms. The core window slides
//! through its region as documents are created, so a sub-topic's vocabulary
//! evolves over time. Every user holds a few weighted
//! topic interests, each focused on one sub-topic, and clicks documents of
//! those interests. At a drift boundary a user may swap one interest for a
//! topic they have not held before. Documents are created over time, so later
//! periods contain items that never appeared earlier.
//!
//! Generation is fully determined by `rng_seed`; users draw from independent
//! derived streams and can be generated in parallel.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Parallelism};
use crate::records::{ClickRecord, CorpusRecord};
use crate::text::Fnv1a;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("infeasible simulator config: {0}")]
    Config(String),
}

/// At the start of period `period` (an index into `periods`), each user
/// independently swaps one interest with this probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub period: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_users: usize,
    pub num_topics: usize,
    /// Terms generated per topic when `vocab_per_topic` is empty.
    pub terms_per_topic: usize,
    /// Explicit topic vocabularies; must be pairwise disjoint.
    pub vocab_per_topic: Vec<Vec<String>>,
    /// Each topic's terms are split into this many contiguous regions.
    pub subtopics_per_topic: usize,
    /// Terms the core window slides over the simulated horizon; the window
    /// spans the rest of the region.
    pub core_shift: usize,
    /// Probability that a title token comes from the document's sub-topic
    /// core rather than the whole topic vocabulary.
    pub subtopic_focus: f64,
    /// Probability that a click on an interest lands in the interest's
    /// sub-topic rather than anywhere in the topic.
    pub interest_focus: f64,
    /// Inclusive title length range, in tokens.
    pub title_len: (usize, usize),
    /// Zipf exponent for term choice within a topic (0 = uniform).
    pub term_skew: f64,
    pub background_terms: usize,
    /// Probability that a title token is a background term.
    pub background_rate: f64,
    pub docs_per_topic: usize,
    /// Fraction of each topic's documents that exist before the first period.
    pub initial_doc_fraction: f64,
    /// Zipf exponent of document popularity within a topic (0 = uniform).
    pub doc_popularity_skew: f64,
    /// Click preference for recent documents: weight `exp(-age / freshness_ms)`.
    /// 0 disables it.
    pub freshness_ms: i64,
    /// Inclusive range of interests per user.
    pub interests_per_user: (usize, usize),
    /// Zipf exponent of a user's interest weights (0 = equal weights).
    pub interest_skew: f64,
    pub drift: Vec<DriftEvent>,
    /// Inclusive range of clicks per user in each period.
    pub clicks_per_user_per_period: (usize, usize),
    pub periods: Vec<String>,
    pub period_ms: i64,
    pub start_ms: i64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_users: 500,
            num_topics: 8,
            terms_per_topic: 40,
            vocab_per_topic: Vec::new(),
            subtopics_per_topic: 4,
            core_shift: 0,
            subtopic_focus: 0.85,
            interest_focus: 1.0,
            title_len: (10, 16),
            term_skew: 0.0,
            background_terms: 20,
            background_rate: 0.05,
            docs_per_topic: 400,
            initial_doc_fraction: 0.5,
            doc_popularity_skew: 0.0,
            freshness_ms: 3 * 24 * 3600 * 1000,
            interests_per_user: (3, 3),
            interest_skew: 0.0,
            drift: vec![DriftEvent {
                period: 1,
                probability: 0.5,
            }],
            clicks_per_user_per_period: (25, 35),
            periods: vec!["A".into(), "B".into(), "C".into()],
            period_ms: 7 * 24 * 3600 * 1000,
            start_ms: 1_700_000_000_000,
            rng_seed: 42,
        }
    }
}

/// A generated document with its topic label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimDocument {
    pub doc_id: String,
    pub title: String,
    pub timestamp: i64,
    pub topic: usize,
    pub subtopic: usize,
}

impl From<&SimDocument> for CorpusRecord {
    fn from(d: &SimDocument) -> Self {
        CorpusRecord {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            timestamp: d.timestamp,
        }
    }
}

/// Ground-truth line: a user's active topics during one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub user_id: String,
    pub period: String,
    pub topics: Vec<usize>,
    /// Preferred sub-topic of each active topic.
    pub subtopics: Vec<usize>,
    pub weights: Vec<f64>,
    /// Topic swapped out at the start of this period, if any.
    pub drifted_from: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub corpus: Vec<SimDocument>,
    /// One click log per period, in period order; each log is sorted by
    /// (user, timestamp).
    pub clicks: Vec<Vec<ClickRecord>>,
    /// One record per (user, period).
    pub ground_truth: Vec<GroundTruthRecord>,
    pub vocabulary: Vec<String>,
    pub periods: Vec<String>,
}

impl SimOutput {
    pub fn topic_of(&self, doc_id: &str) -> Option<usize> {
        self.corpus
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| self.corpus[i].topic)
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
    }

    pub fn truth(&self, user_id: &str, period: usize) -> Option<&GroundTruthRecord> {
        let label = self.periods.get(period)?;
        self.ground_truth
            .iter()
            .find(|g| g.user_id == user_id && &g.period == label)
    }

    pub fn corpus_records(&self) -> Vec<CorpusRecord> {
        self.corpus.iter().map(CorpusRecord::from).collect()
    }

    /// All clicks of the given periods, concatenated.
    pub fn clicks_in(&self, periods: &[usize]) -> Vec<ClickRecord> {
        periods
            .iter()
            .flat_map(|&p| self.clicks[p].iter().cloned())
            .collect()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.periods.is_empty() {
            return bad("at least one period is required".into());
        }
        if self.num_topics == 0 {
            return bad("num_topics must be positive".into());
        }
        let (imin, imax) = self.interests_per_user;
        if imin == 0 || imin > imax || imax > self.num_topics {
            return bad(format!(
                "interests_per_user {imin}..={imax} infeasible with {} topics",
                self.num_topics
            ));
        }
        let (cmin, cmax) = self.clicks_per_user_per_period;
        if cmin > cmax {
            return bad("clicks_per_user_per_period range is empty".into());
        }
        if cmax > 0 && self.docs_per_topic == 0 {
            return bad("clicks requested but docs_per_topic is 0".into());
        }
        let (lmin, lmax) = self.title_len;
        if lmin == 0 || lmin > lmax {
            return bad("title_len range is empty".into());
        }
        if !self.vocab_per_topic.is_empty() {
            if self.vocab_per_topic.len() != self.num_topics {
                return bad("vocab_per_topic needs one list per topic".into());
            }
            let mut seen = HashSet::new();
            for list in &self.vocab_per_topic {
                if list.is_empty() {
                    return bad("empty topic vocabulary".into());
                }
                for t in list {
                    if !seen.insert(t.as_str()) {
                        return bad(format!("term {t:?} appears in more than one topic"));
                    }
                }
            }
        } else if self.terms_per_topic == 0 {
            return bad("terms_per_topic must be positive".into());
        }
        let min_terms = self
            .topic_vocabularies()
            .iter()
            .map(Vec::len)
            .min()
            .unwrap_or(0);
        if self.subtopics_per_topic == 0 || self.subtopics_per_topic > min_terms {
            return bad(format!(
                "subtopics_per_topic must lie in 1..={min_terms} (smallest topic vocabulary)"
            ));
        }
        if self.core_shift >= min_terms / self.subtopics_per_topic {
            return bad("core_shift must leave at least one term in the core window".into());
        }
        if self.freshness_ms < 0 {
            return bad("freshness_ms must be non-negative".into());
        }
        if cmax > 0 && self.docs_per_topic < self.subtopics_per_topic {
            return bad("every sub-topic needs at least one document".into());
        }
        if self.background_rate > 0.0 && self.background_terms == 0 {
            return bad("background_rate > 0 needs background terms".into());
        }
        for p in [
            self.background_rate,
            self.initial_doc_fraction,
            self.subtopic_focus,
            self.interest_focus,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        for d in &self.drift {
            if !(0.0..=1.0).contains(&d.probability) {
                return bad(format!(
                    "drift probability {} outside [0, 1]",
                    d.probability
                ));
            }
            if d.period == 0 || d.period >= self.periods.len() {
                return bad(format!(
                    "drift period {} is not a period boundary",
                    d.period
                ));
            }
            if d.probability > 0.0 && imax >= self.num_topics {
                return bad("drift needs a topic outside every user's active set".into());
            }
        }
        if self.period_ms <= 0 {
            return bad("period_ms must be positive".into());
        }
        Ok(())
    }

    pub fn topic_vocabularies(&self) -> Vec<Vec<String>> {
        if !self.vocab_per_topic.is_empty() {
            return self.vocab_per_topic.clone();
        }
        (0..self.num_topics)
            .map(|t| {
                (0..self.terms_per_topic)
                    .map(|j| format!("t{t}w{j}"))
                    .collect()
            })
            .collect()
    }

    pub fn background_vocabulary(&self) -> Vec<String> {
        (0..self.background_terms)
            .map(|j| format!("bg{j}"))
            .collect()
    }

    fn derived_rng(&self, stream: &str, index: u64) -> ChaCha8Rng {
        let h = Fnv1a::new()
            .write_u64(self.rng_seed)
            .write(stream.as_bytes())
            .write_u64(index)
            .finish();
        ChaCha8Rng::seed_from_u64(h)
    }
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Core window of sub-topic `s` within a vocabulary of `n` terms, for a
/// document created at fraction `progress` of the horizon.
fn core_range(
    n: usize,
    subtopics: usize,
    shift: usize,
    s: usize,
    progress: f64,
) -> std::ops::Range<usize> {
    let region = s * n / subtopics..(s + 1) * n / subtopics;
    let offset = (progress.clamp(0.0, 1.0) * shift as f64).round() as usize;
    let start = region.start + offset.min(shift);
    start..start + (region.len() - shift)
}

/// Documents clicks can be drawn from: one topic, or one of its sub-topics.
struct ClickPool {
    /// Corpus positions sorted by creation time.
    by_time: Vec<usize>,
    created: Vec<i64>,
    popularity: Vec<f64>,
}

impl ClickPool {
    fn new(mut members: Vec<usize>, corpus: &[SimDocument], popularity: &[f64]) -> Self {
        members.sort_by_key(|&i| (corpus[i].timestamp, i));
        ClickPool {
            created: members.iter().map(|&i| corpus[i].timestamp).collect(),
            popularity: members.iter().map(|&i| popularity[i]).collect(),
            by_time: members,
        }
    }
}

/// Pools for one topic: index `s` is sub-topic `s`, the last is the whole
/// topic.
type TopicPools = Vec<ClickPool>;

/// Generates a corpus, per-period click logs and ground truth.
pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    generate_with(config, Parallelism::Rayon)
}

pub fn generate_with(config: &SimConfig, parallelism: Parallelism) -> Result<SimOutput, SimError> {
    config.validate()?;
    let vocabs = config.topic_vocabularies();
    let background = config.background_vocabulary();
    let n_periods = config.periods.len();
    let horizon = config.start_ms + config.period_ms * n_periods as i64;
    let n_sub = config.subtopics_per_topic;

    // Corpus, sorted by doc_id (topic-major by construction).
    let mut rng = config.derived_rng("corpus", 0);
    let mut corpus = Vec::with_capacity(config.num_topics * config.docs_per_topic);
    for (topic, vocab) in vocabs.iter().enumerate() {
        let whole = WeightedIndex::new(zipf_weights(vocab.len(), config.term_skew))
            .expect("positive weights");
        let window = vocab.len() / n_sub - config.core_shift;
        let core_pick =
            WeightedIndex::new(zipf_weights(window, config.term_skew)).expect("positive weights");
        for j in 0..config.docs_per_topic {
            let subtopic = j % n_sub;
            let timestamp = if rng.gen_bool(config.initial_doc_fraction) {
                config.start_ms - rng.gen_range(1..=config.period_ms)
            } else {
                rng.gen_range(config.start_ms..horizon)
            };
            let progress =
                (timestamp - config.start_ms) as f64 / (horizon - config.start_ms) as f64;
            let core_start =
                core_range(vocab.len(), n_sub, config.core_shift, subtopic, progress).start;
            let len = rng.gen_range(config.title_len.0..=config.title_len.1);
            let tokens: Vec<&str> = (0..len)
                .map(|_| {
                    if !background.is_empty() && rng.gen_bool(config.background_rate) {
                        background[rng.gen_range(0..background.len())].as_str()
                    } else if rng.gen_bool(config.subtopic_focus) {
                        vocab[core_start + core_pick.sample(&mut rng)].as_str()
                    } else {
                        vocab[whole.sample(&mut rng)].as_str()
                    }
                })
                .collect();
            corpus.push(SimDocument {
                doc_id: format!("d{topic:03}-{j:06}"),
                title: tokens.join(" "),
                timestamp,
                topic,
                subtopic,
            });
        }
    }

    // Static popularity: a shuffled Zipf rank within each topic.
    let mut popularity = vec![0.0; corpus.len()];
    for topic in 0..config.num_topics {
        let base = topic * config.docs_per_topic;
        let mut ranks: Vec<usize> = (0..config.docs_per_topic).collect();
        ranks.shuffle(&mut rng);
        for (k, r) in ranks.into_iter().enumerate() {
            popularity[base + k] = ((r + 1) as f64).powf(-config.doc_popularity_skew);
        }
    }
    let pools: Vec<TopicPools> = (0..config.num_topics)
        .map(|topic| {
            let members: Vec<usize> =
                (topic * config.docs_per_topic..(topic + 1) * config.docs_per_topic).collect();
            let mut pools: TopicPools = (0..n_sub)
                .map(|s| {
                    let sub = members
                        .iter()
                        .copied()
                        .filter(|&i| corpus[i].subtopic == s)
                        .collect();
                    ClickPool::new(sub, &corpus, &popularity)
                })
                .collect();
            pools.push(ClickPool::new(members, &corpus, &popularity));
            pools
        })
        .collect();

    let users = par::map_range(parallelism, config.num_users, |u| {
        simulate_user(config, u, &corpus, &pools)
    });

    let mut clicks = vec![Vec::new(); n_periods];
    let mut ground_truth = Vec::with_capacity(config.num_users * n_periods);
    for (user_clicks, truth) in users {
        for (p, c) in user_clicks.into_iter().enumerate() {
            clicks[p].extend(c);
        }
        ground_truth.extend(truth);
    }

    let mut vocabulary: Vec<String> = vocabs.into_iter().flatten().collect();
    vocabulary.extend(background);
    Ok(SimOutput {
        corpus,
        clicks,
        ground_truth,
        vocabulary,
        periods: config.periods.clone(),
    })
}

type UserTrace = (Vec<Vec<ClickRecord>>, Vec<GroundTruthRecord>);

fn simulate_user(
    config: &SimConfig,
    u: usize,
    corpus: &[SimDocument],
    pools: &[TopicPools],
) -> UserTrace {
    let mut rng = config.derived_rng("user", u as u64);
    let user_id = format!("user{u:05}");
    let n_sub = config.subtopics_per_topic;
    let n_interests = rng.gen_range(config.interests_per_user.0..=config.interests_per_user.1);
    let mut all_topics: Vec<usize> = (0..config.num_topics).collect();
    all_topics.shuffle(&mut rng);
    let mut active: Vec<usize> = all_topics[..n_interests].to_vec();
    let mut focus: Vec<usize> = (0..n_interests).map(|_| rng.gen_range(0..n_sub)).collect();
    let mut held: HashSet<usize> = active.iter().copied().collect();
    let weights = zipf_weights(n_interests, config.interest_skew);
    let mut clicked: HashSet<usize> = HashSet::new();
    let mut logs = Vec::with_capacity(config.periods.len());
    let mut truth = Vec::with_capacity(config.periods.len());

    for (p, label) in config.periods.iter().enumerate() {
        let mut drifted_from = None;
        if let Some(d) = config.drift.iter().find(|d| d.period == p) {
            if rng.gen_bool(d.probability) {
                let slot = rng.gen_range(0..active.len());
                let mut fresh: Vec<usize> = (0..config.num_topics)
                    .filter(|t| !held.contains(t))
                    .collect();
                if fresh.is_empty() {
                    fresh = (0..config.num_topics)
                        .filter(|t| !active.contains(t))
                        .collect();
                }
                let new_topic = fresh[rng.gen_range(0..fresh.len())];
                drifted_from = Some(active[slot]);
                active[slot] = new_topic;
                focus[slot] = rng.gen_range(0..n_sub);
                held.insert(new_topic);
            }
        }
        truth.push(GroundTruthRecord {
            user_id: user_id.clone(),
            period: label.clone(),
            topics: active.clone(),
            subtopics: focus.clone(),
            weights: weights.clone(),
            drifted_from,
        });

        let start = config.start_ms + config.period_ms * p as i64;
        let n_clicks = rng
            .gen_range(config.clicks_per_user_per_period.0..=config.clicks_per_user_per_period.1);
        let mut times: Vec<i64> = (0..n_clicks)
            .map(|_| start + rng.gen_range(0..config.period_ms))
            .collect();
        times.sort_unstable();
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                times[i] = times[i - 1] + 1;
            }
        }
        let interest_pick = WeightedIndex::new(&weights).expect("positive weights");
        let mut log = Vec::with_capacity(n_clicks);
        for ts in times {
            let slot = interest_pick.sample(&mut rng);
            let pool = if rng.gen_bool(config.interest_focus) {
                &pools[active[slot]][focus[slot]]
            } else {
                &pools[active[slot]][n_sub]
            };
            let available = pool.created.partition_point(|&c| c <= ts).max(1);
            let weights: Vec<f64> = if config.freshness_ms > 0 {
                let f = config.freshness_ms as f64;
                (0..available)
                    .map(|k| {
                        pool.popularity[k] * (-((ts - pool.created[k]).max(0) as f64) / f).exp()
                    })
                    .collect()
            } else {
                pool.popularity[..available].to_vec()
            };
            let pick = WeightedIndex::new(&weights)
                .or_else(|_| WeightedIndex::new(&pool.popularity[..available]))
                .expect("positive weights");
            // A few retries avoid re-clicking the same document.
            let mut pos = pool.by_time[pick.sample(&mut rng)];
            for _ in 0..8 {
                if !clicked.contains(&pos) {
                    break;
                }
                pos = pool.by_time[pick.sample(&mut rng)];
            }
            clicked.insert(pos);
            let doc = &corpus[pos];
            log.push(ClickRecord {
                user_id: user_id.clone(),
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                timestamp: ts,
            });
        }
        logs.push(log);
    }
    (logs, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            num_users: 20,
            num_topics: 5,
            docs_per_topic: 60,
            clicks_per_user_per_period: (10, 15),
            ..SimConfig::default()
        }
    }

    #[test]
    fn deterministic_across_runs_and_strategies() {
        let a = generate_with(&small(), Parallelism::Rayon).unwrap();
        let b = generate_with(&small(), Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        let c = generate(&SimConfig {
            rng_seed: 43,
            ..small()
        })
        .unwrap();
        assert_ne!(a.clicks, c.clicks);
    }

    #[test]
    fn clicks_respect_ground_truth_and_time_order() {
        let out = generate(&small()).unwrap();
        for (p, log) in out.clicks.iter().enumerate() {
            let mut last: Option<(&str, i64)> = None;
            for c in log {
                let topic = out.topic_of(&c.doc_id).expect("click references corpus");
                let truth = out.truth(&c.user_id, p).unwrap();
                assert!(truth.topics.contains(&topic));
                if let Some((u, t)) = last {
                    if u == c.user_id {
                        assert!(c.timestamp > t);
                    }
                }
                last = Some((&c.user_id, c.timestamp));
            }
        }
    }

    #[test]
    fn forced_drift_swaps_exactly_one_topic() {
        let cfg = SimConfig {
            drift: vec![DriftEvent {
                period: 1,
                probability: 1.0,
            }],
            ..small()
        };
        let out = generate(&cfg).unwrap();
        for u in 0..cfg.num_users {
            let id = format!("user{u:05}");
            let a: HashSet<_> = out.truth(&id, 0).unwrap().topics.iter().copied().collect();
            let b: HashSet<_> = out.truth(&id, 1).unwrap().topics.iter().copied().collect();
            assert_eq!(a.difference(&b).count(), 1);
            assert_eq!(b.difference(&a).count(), 1);
            assert!(out.truth(&id, 1).unwrap().drifted_from.is_some());
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let cfg = SimConfig {
            docs_per_topic: 0,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(SimError::Config(_))));
        let cfg = SimConfig {
            interests_per_user: (6, 6),
            ..small()
        };
        assert!(generate(&cfg).is_err());
        let cfg = SimConfig {
            vocab_per_topic: vec![vec!["x1".into()], vec!["x1".into()]],
            num_topics: 2,
            interests_per_user: (1, 1),
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn vocabulary_covers_titles() {
        let out = generate(&small()).unwrap();
        let vocab: HashSet<&str> = out.vocabulary.iter().map(String::as_str).collect();
        for d in &out.corpus {
            for t in crate::text::tokenize(&d.title) {
                assert!(vocab.contains(t.as_str()));
            }
        }
    }

    #[test]
    fn topics_are_separable_under_the_vocab_embedder() {
        use crate::embedding::{Embedder, EmbedderConfig, TextEmbedder};
        let out = generate(&small()).unwrap();
        let emb = TextEmbedder::new(EmbedderConfig::vocab(out.vocabulary.iter())).unwrap();
        let vecs: Vec<_> = out
            .corpus
            .iter()
            .map(|d| (d.topic, emb.embed(&d.title)))
            .collect();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for (i, (ti, vi)) in vecs.iter().enumerate().step_by(3) {
            for (tj, vj) in vecs.iter().skip(i + 1).step_by(7) {
                let s = crate::embedding::similarity(vi, vj).unwrap();
                if ti == tj {
                    within += s;
                    nw += 1;
                } else {
                    across += s;
                    na += 1;
                }
            }
        }
        let (within, across) = (within / nw as f64, across / na as f64);
        assert!(within > across + 0.1, "within {within} across {across}");
    }

    #[test]
    fn single_coherent_interest_collapses_to_few_units() {
        use crate::embedding::{EmbedderConfig, TextEmbedder};
        use crate::keyterm::StopwordExtractor;
        use crate::unit_store::{update_profile, Document, UnitConfig, UserProfile};
        let cfg = SimConfig {
            num_users: 1,
            num_topics: 1,
            terms_per_topic: 10,
            subtopics_per_topic: 1,
            subtopic_focus: 1.0,
            background_rate: 0.0,
            docs_per_topic: 200,
            interests_per_user: (1, 1),
            drift: Vec::new(),
            clicks_per_user_per_period: (60, 60),
            periods: vec!["A".into()],
            ..SimConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let emb = TextEmbedder::new(EmbedderConfig::vocab(out.vocabulary.iter())).unwrap();
        let stop = StopwordExtractor::new(Vec::<String>::new());
        let titles: std::collections::HashMap<&str, &SimDocument> =
            out.corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let unit_cfg = UnitConfig::default();
        let mut profile = UserProfile::new("user00000");
        for c in &out.clicks[0] {
            let d = titles[c.doc_id.as_str()];
            let doc = Document::new(&d.doc_id, &d.title, c.timestamp, &stop);
            update_profile(&mut profile, &doc, &emb, &unit_cfg).unwrap();
        }
        assert!(profile.units.len() <= 2, "{} units", profile.units.len());
    }
}
