//! Ablation studies on simulated data.
//!
//! Every study generates one simulated dataset, trains interest-unit
//! profiles on some prefix of the periods and evaluates on the last
//! `test_tail` clicks of the final period. Variants within a study share the
//! same users and candidate samples.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, EmbedderConfig, EmbeddingError, TextEmbedder};
use crate::eval::{
    self, CutoffMetrics, EvalConfig, EvalError, UnitRanker, UserCandidates, UserHistory,
};
use crate::index::{DocMeta, DocumentIndex, IndexConfig, IndexError};
use crate::keyterm::StopwordExtractor;
use crate::par::Parallelism;
use crate::simulator::{self, SimConfig, SimError, SimOutput};
use crate::text::Fnv1a;
use crate::unit_store::{PruneStrategy, TextMode, UnitConfig, UserProfile};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("study needs at least {needed} periods, simulator has {found}")]
    Periods { needed: usize, found: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyName {
    UnitCap,
    Adaptability,
    Pruning,
    TextAblation,
    UnitGrowth,
}

impl StudyName {
    pub const ALL: [StudyName; 5] = [
        StudyName::UnitCap,
        StudyName::Adaptability,
        StudyName::Pruning,
        StudyName::TextAblation,
        StudyName::UnitGrowth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyName::UnitCap => "unit-cap",
            StudyName::Adaptability => "adaptability",
            StudyName::Pruning => "pruning",
            StudyName::TextAblation => "text-ablation",
            StudyName::UnitGrowth => "unit-growth",
        }
    }
}

impl fmt::Display for StudyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyName {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StudyName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| StudyError::UnknownStudy(s.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub sim: SimConfig,
    /// Embedder for documents and units. `None` uses a vocabulary embedder
    /// over the simulator's vocabulary.
    pub embedder: Option<EmbedderConfig>,
    pub unit: UnitConfig,
    pub eval: EvalConfig,
    /// Unit caps for the unit-cap study.
    pub caps: Vec<usize>,
    /// Also run the unit-cap study without any cap.
    pub include_free: bool,
    /// Units kept by the single-factor pruning variants.
    pub pruning_keep: usize,
    /// Unit-cap study only evaluates users with at least this many
    /// ground-truth interests in the final period.
    pub min_interests: usize,
    pub parallelism: Parallelism,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sim: SimConfig::default(),
            embedder: None,
            unit: UnitConfig::default(),
            eval: EvalConfig::default(),
            caps: vec![1, 5, 10, 20],
            include_free: true,
            pruning_keep: 20,
            min_interests: 3,
            parallelism: Parallelism::Rayon,
        }
    }
}

/// One variant's row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub users: usize,
    pub metrics: Vec<CutoffMetrics>,
    pub mean_units: f64,
    pub mean_big_units: f64,
}

impl VariantResult {
    pub fn hr(&self, cutoff: usize) -> f64 {
        self.metrics
            .iter()
            .find(|m| m.cutoff == cutoff)
            .map_or(f64::NAN, |m| m.hit_ratio)
    }

    pub fn ndcg(&self, cutoff: usize) -> f64 {
        self.metrics
            .iter()
            .find(|m| m.cutoff == cutoff)
            .map_or(f64::NAN, |m| m.ndcg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyName,
    pub rows: Vec<VariantResult>,
    pub config: StudyConfig,
}

impl StudyReport {
    pub fn row(&self, variant: &str) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    fn cutoffs(&self) -> &[usize] {
        &self.config.eval.metric_cutoffs
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("study,variant,users");
        for c in self.cutoffs() {
            let _ = write!(s, ",hr@{c},ndcg@{c}");
        }
        s.push_str(",mean_units,mean_big_units\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", self.study, r.variant, r.users);
            for c in self.cutoffs() {
                let _ = write!(s, ",{:.6},{:.6}", r.hr(*c), r.ndcg(*c));
            }
            let _ = writeln!(s, ",{:.4},{:.4}", r.mean_units, r.mean_big_units);
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<16} {:>6}", self.study.as_str(), "users");
        for c in self.cutoffs() {
            let _ = write!(s, " {:>7} {:>7}", format!("H@{c}"), format!("N@{c}"));
        }
        s.push_str("   units     big\n");
        for r in &self.rows {
            let _ = write!(s, "{:<16} {:>6}", r.variant, r.users);
            for c in self.cutoffs() {
                let _ = write!(s, " {:>7.4} {:>7.4}", r.hr(*c), r.ndcg(*c));
            }
            let _ = writeln!(s, " {:>7.2} {:>7.2}", r.mean_units, r.mean_big_units);
        }
        s
    }
}

/// Simulated data plus the shared corpus index.
pub struct StudyData {
    pub sim: SimOutput,
    /// Background terms act as stopwords for key-term extraction.
    pub extractor: StopwordExtractor,
    pub embedder: Arc<dyn Embedder>,
    pub corpus: Arc<DocumentIndex>,
    candidates: Mutex<HashMap<u64, Arc<Vec<Option<UserCandidates>>>>>,
    results: Mutex<HashMap<u64, VariantResult>>,
}

impl StudyData {
    pub fn prepare(config: &StudyConfig) -> Result<Self, StudyError> {
        let sim = simulator::generate_with(&config.sim, config.parallelism)?;
        let emb_config = config
            .embedder
            .clone()
            .unwrap_or_else(|| EmbedderConfig::vocab(sim.vocabulary.iter().cloned()));
        let embedder: Arc<dyn Embedder> = Arc::new(TextEmbedder::new(emb_config)?);
        let docs: Vec<DocMeta> = sim
            .corpus_records()
            .into_iter()
            .map(DocMeta::from)
            .collect();
        let index_config = IndexConfig {
            parallelism: config.parallelism,
            ..IndexConfig::exact()
        };
        let corpus = Arc::new(DocumentIndex::build(
            docs,
            embedder.as_ref(),
            &index_config,
        )?);
        let extractor = StopwordExtractor::new(config.sim.background_vocabulary());
        Ok(StudyData {
            sim,
            extractor,
            embedder,
            corpus,
            candidates: Mutex::new(HashMap::new()),
            results: Mutex::new(HashMap::new()),
        })
    }

    /// Candidate lists for `users`, drawn once per user set and eval config.
    pub fn candidates(
        &self,
        users: &[UserHistory],
        eval: &EvalConfig,
    ) -> Arc<Vec<Option<UserCandidates>>> {
        let key = users_key(users, &[&json(eval)]);
        if let Some(c) = self.candidates.lock().get(&key) {
            return c.clone();
        }
        let drawn = Arc::new(eval::draw_candidates(users, &self.corpus, eval));
        self.candidates.lock().insert(key, drawn.clone());
        drawn
    }

    /// Users trained on `train_periods`, tested on the tail of the last
    /// period.
    pub fn split(&self, train_periods: &[usize], eval: &EvalConfig) -> Vec<UserHistory> {
        let last = self.sim.periods.len() - 1;
        eval::split_periods(
            &self.sim.clicks_in(train_periods),
            &self.sim.clicks_in(&[last]),
            eval,
        )
        .0
    }

    pub fn build_ranker(
        &self,
        name: &str,
        users: &[UserHistory],
        unit: &UnitConfig,
        parallelism: Parallelism,
    ) -> Result<UnitRanker, StudyError> {
        Ok(UnitRanker::build(
            name,
            users,
            self.corpus.clone(),
            self.embedder.clone(),
            unit.clone(),
            &self.extractor,
            parallelism,
        )?)
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config serializes")
}

fn users_key(users: &[UserHistory], extra: &[&str]) -> u64 {
    let mut h = Fnv1a::new();
    for u in users {
        h.write(u.user_id.as_bytes()).write(&[0]);
        for c in u.train.iter().chain(&u.test) {
            h.write(c.doc_id.as_bytes()).write(&[1]);
        }
        h.write(&[2]);
    }
    for e in extra {
        h.write(e.as_bytes()).write(&[3]);
    }
    h.finish()
}

fn unit_stats<'a>(
    profiles: impl Iterator<Item = &'a UserProfile>,
    unit: &UnitConfig,
) -> (f64, f64) {
    let (mut n, mut units, mut big) = (0usize, 0usize, 0usize);
    for p in profiles {
        n += 1;
        units += p.units.len();
        big += p.units.iter().filter(|u| u.is_big(unit)).count();
    }
    let n = n.max(1) as f64;
    (units as f64 / n, big as f64 / n)
}

fn run_variant(
    data: &StudyData,
    config: &StudyConfig,
    variant: &str,
    users: &[UserHistory],
    unit: &UnitConfig,
) -> Result<VariantResult, StudyError> {
    let eval_config = EvalConfig {
        parallelism: config.parallelism,
        ..config.eval.clone()
    };
    let key = users_key(users, &[&json(unit), &json(&eval_config)]);
    if let Some(r) = data.results.lock().get(&key) {
        return Ok(VariantResult {
            variant: variant.to_owned(),
            ..r.clone()
        });
    }
    let ranker = data.build_ranker(variant, users, unit, config.parallelism)?;
    let candidates = data.candidates(users, &eval_config);
    let report = eval::evaluate_with(&ranker, users, &candidates, &eval_config)?;
    let (mean_units, mean_big_units) = unit_stats(ranker.profiles(), unit);
    let result = VariantResult {
        variant: variant.to_owned(),
        users: report.evaluated_users,
        metrics: report.metrics,
        mean_units,
        mean_big_units,
    };
    data.results.lock().insert(key, result.clone());
    Ok(result)
}

fn cap_label(cap: Option<usize>) -> String {
    cap.map_or_else(|| "free".to_owned(), |c| format!("cap-{c}"))
}

/// Runs `name` on freshly simulated data.
pub fn run_study(name: StudyName, config: &StudyConfig) -> Result<StudyReport, StudyError> {
    let data = StudyData::prepare(config)?;
    run_study_on(name, &data, config)
}

/// Runs `name` on prepared data, so several studies can share one dataset.
pub fn run_study_on(
    name: StudyName,
    data: &StudyData,
    config: &StudyConfig,
) -> Result<StudyReport, StudyError> {
    let n_periods = data.sim.periods.len();
    let needed = if matches!(name, StudyName::Adaptability | StudyName::UnitGrowth) {
        3
    } else {
        2
    };
    if n_periods < needed {
        return Err(StudyError::Periods {
            needed,
            found: n_periods,
        });
    }
    let all_train: Vec<usize> = (0..n_periods - 1).collect();
    let base = &config.unit;
    let mut rows = Vec::new();
    match name {
        StudyName::UnitCap => {
            let last = n_periods - 1;
            let users: Vec<UserHistory> = data
                .split(&all_train, &config.eval)
                .into_iter()
                .filter(|u| {
                    data.sim
                        .truth(&u.user_id, last)
                        .is_some_and(|t| t.topics.len() >= config.min_interests)
                })
                .collect();
            let caps = config
                .caps
                .iter()
                .map(|&c| Some(c))
                .chain(config.include_free.then_some(None));
            for cap in caps {
                let unit = UnitConfig {
                    prune: match cap {
                        Some(keep) => PruneStrategy::Recency { keep },
                        None => PruneStrategy::Disabled,
                    },
                    ..base.clone()
                };
                rows.push(run_variant(data, config, &cap_label(cap), &users, &unit)?);
            }
        }
        StudyName::Adaptability => {
            let frozen = data.split(&[0], &config.eval);
            let cumulative = data.split(&all_train, &config.eval);
            // Compare on the users present in both splits.
            let keep: std::collections::HashSet<&str> =
                frozen.iter().map(|u| u.user_id.as_str()).collect();
            let cumulative: Vec<UserHistory> = cumulative
                .into_iter()
                .filter(|u| keep.contains(u.user_id.as_str()))
                .collect();
            let label = |ps: &[usize]| {
                ps.iter()
                    .map(|&p| data.sim.periods[p].as_str())
                    .collect::<Vec<_>>()
                    .join("+")
            };
            rows.push(run_variant(data, config, &label(&[0]), &frozen, base)?);
            rows.push(run_variant(
                data,
                config,
                &label(&all_train),
                &cumulative,
                base,
            )?);
        }
        StudyName::Pruning => {
            let users = data.split(&all_train, &config.eval);
            let keep = config.pruning_keep;
            for (variant, prune) in [
                ("combined", PruneStrategy::Grouped),
                ("recency-only", PruneStrategy::Recency { keep }),
                ("size-only", PruneStrategy::Size { keep }),
            ] {
                let unit = UnitConfig {
                    prune,
                    ..base.clone()
                };
                rows.push(run_variant(data, config, variant, &users, &unit)?);
            }
        }
        StudyName::TextAblation => {
            let users = data.split(&all_train, &config.eval);
            for (variant, text_mode) in [
                ("K-only", TextMode::TermsOnly),
                ("T-only", TextMode::TitleOnly),
                ("T+K", TextMode::TitleAndTerms),
            ] {
                let unit = UnitConfig {
                    text_mode,
                    ..base.clone()
                };
                rows.push(run_variant(data, config, variant, &users, &unit)?);
            }
        }
        StudyName::UnitGrowth => {
            // Profile sizes after each growing prefix of the periods; the
            // metrics are those of the prefix evaluated on the last period.
            for end in 1..n_periods {
                let prefix: Vec<usize> = (0..end).collect();
                let users = data.split(&prefix, &config.eval);
                let label = prefix
                    .iter()
                    .map(|&p| data.sim.periods[p].as_str())
                    .collect::<Vec<_>>()
                    .join("+");
                rows.push(run_variant(data, config, &label, &users, base)?);
            }
        }
    }
    Ok(StudyReport {
        study: name,
        rows,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StudyConfig {
        StudyConfig {
            sim: SimConfig {
                num_users: 30,
                num_topics: 6,
                docs_per_topic: 120,
                ..SimConfig::default()
            },
            eval: EvalConfig {
                candidates_per_eval: 100,
                ..EvalConfig::default()
            },
            ..StudyConfig::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for n in StudyName::ALL {
            assert_eq!(n.as_str().parse::<StudyName>().unwrap(), n);
        }
        assert!("nope".parse::<StudyName>().is_err());
    }

    #[test]
    fn text_ablation_has_three_rows_and_csv() {
        let r = run_study(StudyName::TextAblation, &tiny()).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["K-only", "T-only", "T+K"]);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("study,variant,users,hr@5,ndcg@5,hr@20"));
        assert!(r.summary_table().contains("T+K"));
    }

    #[test]
    fn unit_cap_rows_and_bounds() {
        let r = run_study(StudyName::UnitCap, &tiny()).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["cap-1", "cap-5", "cap-10", "cap-20", "free"]);
        assert!(r.row("cap-1").unwrap().mean_units <= 1.0);
        assert!(r.row("cap-5").unwrap().mean_units <= 5.0);
    }

    #[test]
    fn too_few_periods() {
        let cfg = StudyConfig {
            sim: SimConfig {
                periods: vec!["A".into(), "B".into()],
                drift: vec![],
                ..tiny().sim
            },
            ..tiny()
        };
        assert!(matches!(
            run_study(StudyName::Adaptability, &cfg),
            Err(StudyError::Periods {
                needed: 3,
                found: 2
            })
        ));
    }
}
