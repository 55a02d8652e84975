//! Per-user interest units.
//!
//! A unit is a cluster of clicked documents summarized by the title of its
//! most recent click, the aggregated key-term counts of its members and two
//! features (size, last update). Its embedding is the embedding of the
//! contextual text `"{title} | {top terms}"`.
//!
//! Each click either merges into every unit whose embedding is within `tau`
//! of the document title (collapsing them into one unit) or seeds a new unit.
//! After every click the profile is pruned.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{similarity, Embedder, Embedding};
use crate::keyterm::{top_terms, KeyTermExtractor, TermCounts};
use crate::par::{self, Parallelism};
use crate::text::Fnv1a;

/// Current profile snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("document {doc_id} is already a member of unit {unit_id}")]
    DuplicateEvent { doc_id: String, unit_id: String },
    #[error("event ({timestamp}, {doc_id}) is not newer than the last applied event")]
    StaleEvent { doc_id: String, timestamp: i64 },
    #[error("profile was built with a different embedder")]
    EmbedderMismatch,
    #[error("invalid unit config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("unsupported snapshot version {found} (expected {SNAPSHOT_VERSION})")]
    Version { found: u64 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<SnapshotError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A clicked or retrievable document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    /// Epoch milliseconds.
    pub timestamp: i64,
    #[serde(default)]
    pub key_terms: TermCounts,
}

impl Document {
    /// Builds a document, deriving key terms from the title.
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        timestamp: i64,
        extractor: &dyn KeyTermExtractor,
    ) -> Self {
        let title = title.into();
        let key_terms = extractor.extract(&title);
        Document {
            doc_id: doc_id.into(),
            title,
            timestamp,
            key_terms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFeatures {
    pub size: usize,
    pub last_update: i64,
}

/// How the contextual text of a unit is assembled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    #[default]
    TitleAndTerms,
    TitleOnly,
    TermsOnly,
}

/// Which units survive after each update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum PruneStrategy {
    /// Keep the `keep_per_group` most recently updated big units and,
    /// separately, small units.
    #[default]
    Grouped,
    /// Keep the `keep` most recently updated units regardless of size.
    Recency { keep: usize },
    /// Keep the `keep` largest units regardless of recency.
    Size { keep: usize },
    /// Grouped pruning, then at most `max_units` units overall by recency.
    Capped { max_units: usize },
    /// Never prune.
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitConfig {
    pub tau: f64,
    pub big_threshold: usize,
    pub keep_per_group: usize,
    pub top_k_terms: usize,
    pub text_mode: TextMode,
    pub prune: PruneStrategy,
}

impl Default for UnitConfig {
    fn default() -> Self {
        UnitConfig {
            tau: 0.65,
            big_threshold: 5,
            keep_per_group: 10,
            top_k_terms: 10,
            text_mode: TextMode::TitleAndTerms,
            prune: PruneStrategy::Grouped,
        }
    }
}

impl UnitConfig {
    pub fn validate(&self) -> Result<(), UnitError> {
        let bad = |m: &str| Err(UnitError::InvalidConfig(m.into()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if self.big_threshold == 0 || self.keep_per_group == 0 || self.top_k_terms == 0 {
            return bad("big_threshold, keep_per_group and top_k_terms must be positive");
        }
        match self.prune {
            PruneStrategy::Recency { keep: 0 }
            | PruneStrategy::Size { keep: 0 }
            | PruneStrategy::Capped { max_units: 0 } => bad("prune limit must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestUnit {
    pub unit_id: String,
    /// Creation order within the profile; the oldest unit survives a merge.
    pub created_seq: u64,
    pub created_at: i64,
    pub member_doc_ids: BTreeSet<String>,
    /// `[T]`: title of the member with the greatest (timestamp, doc_id).
    pub last_title: String,
    pub last_doc_id: String,
    /// `[K]`: full counts; truncation to the top terms happens in
    /// [`contextual_text`].
    pub term_counts: TermCounts,
    /// `[F]`.
    pub features: UnitFeatures,
    /// Cached embedding of the contextual text.
    pub embedding: Embedding,
}

impl InterestUnit {
    fn last_key(&self) -> (i64, &str) {
        (self.features.last_update, self.last_doc_id.as_str())
    }

    fn refresh_embedding(&mut self, embedder: &dyn Embedder, config: &UnitConfig) {
        self.embedding = embedder.embed(&contextual_text(self, config));
    }

    pub fn is_big(&self, config: &UnitConfig) -> bool {
        self.features.size >= config.big_threshold
    }
}

/// Serializes `[T]` and the top `[K]` terms into the text that gets embedded.
pub fn contextual_text(unit: &InterestUnit, config: &UnitConfig) -> String {
    let terms = top_terms(&unit.term_counts, config.top_k_terms).join(" ");
    match config.text_mode {
        TextMode::TitleAndTerms => format!("{} | {}", unit.last_title, terms),
        TextMode::TitleOnly => unit.last_title.clone(),
        TextMode::TermsOnly => terms,
    }
}

/// A user's current units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Ordered by creation.
    pub units: Vec<InterestUnit>,
    pub next_seq: u64,
    /// Set on first update; later updates and retrievals must use the same
    /// embedding space.
    pub embedder_fingerprint: Option<u64>,
    /// Highest (timestamp, doc_id) applied through [`ProfileStore::ingest`].
    pub last_event: Option<(i64, String)>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            units: Vec::new(),
            next_seq: 0,
            embedder_fingerprint: None,
            last_event: None,
        }
    }

    pub fn unit_of(&self, doc_id: &str) -> Option<&InterestUnit> {
        self.units
            .iter()
            .find(|u| u.member_doc_ids.contains(doc_id))
    }

    pub fn is_clicked(&self, doc_id: &str) -> bool {
        self.unit_of(doc_id).is_some()
    }

    pub fn total_size(&self) -> usize {
        self.units.iter().map(|u| u.features.size).sum()
    }

    pub fn check_embedder(&self, fingerprint: u64) -> Result<(), UnitError> {
        match self.embedder_fingerprint {
            Some(f) if f != fingerprint => Err(UnitError::EmbedderMismatch),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Created,
    /// Number of existing units collapsed into the absorber.
    Merged {
        merged: usize,
    },
    /// Re-click of a member document with a newer timestamp.
    Touched,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub unit_id: String,
    pub kind: UpdateKind,
    pub pruned: Vec<String>,
}

fn unit_id_for(user_id: &str, doc_id: &str) -> String {
    let h = Fnv1a::new()
        .write(user_id.as_bytes())
        .write(&[0])
        .write(doc_id.as_bytes())
        .finish();
    format!("u{h:016x}")
}

fn seed_unit(
    user_id: &str,
    seq: u64,
    doc: &Document,
    embedder: &dyn Embedder,
    config: &UnitConfig,
) -> InterestUnit {
    let mut unit = InterestUnit {
        unit_id: unit_id_for(user_id, &doc.doc_id),
        created_seq: seq,
        created_at: doc.timestamp,
        member_doc_ids: BTreeSet::from([doc.doc_id.clone()]),
        last_title: doc.title.clone(),
        last_doc_id: doc.doc_id.clone(),
        term_counts: doc.key_terms.clone(),
        features: UnitFeatures {
            size: 1,
            last_update: doc.timestamp,
        },
        embedding: Embedding::zero(embedder.dimension()),
    };
    unit.refresh_embedding(embedder, config);
    unit
}

/// Merges `doc` and all of `units` into a single unit.
///
/// The oldest unit keeps its identity. Sizes add, `last_update` is the
/// maximum, `[K]` is the sum of all counts, and `[T]` comes from whichever
/// click has the greatest (timestamp, doc_id), which is `doc` for in-order
/// streams.
///
/// # Panics
///
/// If `units` is empty.
pub fn merge_units(
    doc: &Document,
    mut units: Vec<InterestUnit>,
    embedder: &dyn Embedder,
    config: &UnitConfig,
) -> InterestUnit {
    assert!(!units.is_empty(), "merge_units needs at least one unit");
    units.sort_by_key(|u| u.created_seq);
    let mut iter = units.into_iter();
    let mut merged = iter.next().expect("non-empty");
    for other in iter {
        if other.last_key() > merged.last_key() {
            merged.last_title = other.last_title;
            merged.last_doc_id = other.last_doc_id;
        }
        merged.member_doc_ids.extend(other.member_doc_ids);
        merged.term_counts.absorb(&other.term_counts);
        merged.features.size += other.features.size;
        merged.features.last_update = merged.features.last_update.max(other.features.last_update);
    }
    if (doc.timestamp, doc.doc_id.as_str())
        > (merged.features.last_update, merged.last_doc_id.as_str())
    {
        merged.last_title = doc.title.clone();
        merged.last_doc_id = doc.doc_id.clone();
    }
    merged.member_doc_ids.insert(doc.doc_id.clone());
    merged.term_counts.absorb(&doc.key_terms);
    merged.features.size += 1;
    merged.features.last_update = merged.features.last_update.max(doc.timestamp);
    merged.refresh_embedding(embedder, config);
    merged
}

/// Applies one click to `profile`.
///
/// On error the profile is left untouched.
pub fn update_profile(
    profile: &mut UserProfile,
    doc: &Document,
    embedder: &dyn Embedder,
    config: &UnitConfig,
) -> Result<UpdateOutcome, UnitError> {
    profile.check_embedder(embedder.fingerprint())?;

    if let Some(pos) = profile
        .units
        .iter()
        .position(|u| u.member_doc_ids.contains(&doc.doc_id))
    {
        let unit = &mut profile.units[pos];
        if (doc.timestamp, doc.doc_id.as_str()) <= unit.last_key() {
            return Err(UnitError::DuplicateEvent {
                doc_id: doc.doc_id.clone(),
                unit_id: unit.unit_id.clone(),
            });
        }
        unit.last_title = doc.title.clone();
        unit.last_doc_id = doc.doc_id.clone();
        unit.features.last_update = doc.timestamp;
        unit.refresh_embedding(embedder, config);
        let unit_id = unit.unit_id.clone();
        let pruned = prune(profile, config);
        return Ok(UpdateOutcome {
            unit_id,
            kind: UpdateKind::Touched,
            pruned,
        });
    }

    profile.embedder_fingerprint = Some(embedder.fingerprint());
    let doc_embedding = embedder.embed(&doc.title);
    let mut relevant = Vec::new();
    for (i, unit) in profile.units.iter().enumerate() {
        let sim =
            similarity(&doc_embedding, &unit.embedding).map_err(|_| UnitError::EmbedderMismatch)?;
        if sim >= config.tau {
            relevant.push(i);
        }
    }

    let (unit_id, kind) = if relevant.is_empty() {
        let unit = seed_unit(&profile.user_id, profile.next_seq, doc, embedder, config);
        profile.next_seq += 1;
        let id = unit.unit_id.clone();
        profile.units.push(unit);
        (id, UpdateKind::Created)
    } else {
        let merged_count = relevant.len();
        // The merged unit takes the slot of the oldest relevant unit, which
        // keeps `units` in creation order.
        let slot = relevant[0];
        let mut taken = Vec::with_capacity(merged_count);
        for &i in relevant.iter().rev() {
            taken.push(profile.units.remove(i));
        }
        let merged = merge_units(doc, taken, embedder, config);
        let id = merged.unit_id.clone();
        profile.units.insert(slot, merged);
        (
            id,
            UpdateKind::Merged {
                merged: merged_count,
            },
        )
    };

    let pruned = prune(profile, config);
    Ok(UpdateOutcome {
        unit_id,
        kind,
        pruned,
    })
}

fn by_recency(a: &InterestUnit, b: &InterestUnit) -> std::cmp::Ordering {
    b.features
        .last_update
        .cmp(&a.features.last_update)
        .then_with(|| a.unit_id.cmp(&b.unit_id))
}

fn by_size(a: &InterestUnit, b: &InterestUnit) -> std::cmp::Ordering {
    b.features
        .size
        .cmp(&a.features.size)
        .then_with(|| by_recency(a, b))
}

/// Drops units according to `config.prune`. Survivors keep their relative
/// order. Returns the removed unit ids.
pub fn prune(profile: &mut UserProfile, config: &UnitConfig) -> Vec<String> {
    let keep: BTreeSet<usize> = {
        let units = &profile.units;
        let top = |mut idx: Vec<usize>,
                   cmp: fn(&InterestUnit, &InterestUnit) -> std::cmp::Ordering,
                   n: usize| {
            idx.sort_by(|&a, &b| cmp(&units[a], &units[b]));
            idx.truncate(n);
            idx
        };
        let grouped = || {
            let (big, small): (Vec<usize>, Vec<usize>) =
                (0..units.len()).partition(|&i| units[i].is_big(config));
            let mut kept = top(big, by_recency, config.keep_per_group);
            kept.extend(top(small, by_recency, config.keep_per_group));
            kept
        };
        match config.prune {
            PruneStrategy::Grouped => grouped().into_iter().collect(),
            PruneStrategy::Recency { keep } => top((0..units.len()).collect(), by_recency, keep)
                .into_iter()
                .collect(),
            PruneStrategy::Size { keep } => top((0..units.len()).collect(), by_size, keep)
                .into_iter()
                .collect(),
            PruneStrategy::Capped { max_units } => {
                top(grouped(), by_recency, max_units).into_iter().collect()
            }
            PruneStrategy::Disabled => return Vec::new(),
        }
    };
    if keep.len() == profile.units.len() {
        return Vec::new();
    }
    let mut removed = Vec::new();
    let mut i = 0;
    profile.units.retain(|u| {
        let k = keep.contains(&i);
        i += 1;
        if !k {
            removed.push(u.unit_id.clone());
        }
        k
    });
    removed
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    version: u32,
    #[serde(flatten)]
    profile: &'a UserProfile,
}

#[derive(Deserialize)]
struct SnapshotIn {
    #[serde(flatten)]
    profile: UserProfile,
}

/// Serializes a profile as one JSON object:
/// `{"version": 1, "user_id": ..., "units": [...], ...}`.
pub fn snapshot(profile: &UserProfile) -> Vec<u8> {
    serde_json::to_vec(&SnapshotOut {
        version: SNAPSHOT_VERSION,
        profile,
    })
    .expect("profiles always serialize")
}

/// Inverse of [`snapshot`].
pub fn restore(bytes: &[u8]) -> Result<UserProfile, SnapshotError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
        Some(v) => return Err(SnapshotError::Version { found: v }),
        None => return Err(SnapshotError::Corrupt("missing version".into())),
    }
    let parsed: SnapshotIn =
        serde_json::from_value(value).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    Ok(parsed.profile)
}

/// Counts from a batch ingest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub applied: usize,
    pub created: usize,
    pub merged: usize,
    pub touched: usize,
    pub rejected: usize,
    pub pruned_units: usize,
}

impl IngestStats {
    fn record(&mut self, r: &Result<UpdateOutcome, UnitError>) {
        match r {
            Ok(o) => {
                self.applied += 1;
                self.pruned_units += o.pruned.len();
                match o.kind {
                    UpdateKind::Created => self.created += 1,
                    UpdateKind::Merged { .. } => self.merged += 1,
                    UpdateKind::Touched => self.touched += 1,
                }
            }
            Err(_) => self.rejected += 1,
        }
    }

    fn add(&mut self, o: &IngestStats) {
        self.applied += o.applied;
        self.created += o.created;
        self.merged += o.merged;
        self.touched += o.touched;
        self.rejected += o.rejected;
        self.pruned_units += o.pruned_units;
    }
}

/// Thread-safe collection of user profiles.
///
/// Updates to one user are serialized by a per-user lock; different users
/// proceed in parallel. Readers get cloned snapshots.
pub struct ProfileStore {
    config: UnitConfig,
    embedder: Arc<dyn Embedder>,
    profiles: RwLock<HashMap<String, Arc<Mutex<UserProfile>>>>,
}

impl ProfileStore {
    pub fn new(config: UnitConfig, embedder: Arc<dyn Embedder>) -> Result<Self, UnitError> {
        config.validate()?;
        Ok(ProfileStore {
            config,
            embedder,
            profiles: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &UnitConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn slot(&self, user_id: &str) -> Arc<Mutex<UserProfile>> {
        if let Some(p) = self.profiles.read().get(user_id) {
            return Arc::clone(p);
        }
        let mut w = self.profiles.write();
        Arc::clone(
            w.entry(user_id.to_owned())
                .or_insert_with(|| Arc::new(Mutex::new(UserProfile::new(user_id)))),
        )
    }

    /// Applies one click. Events at or before the user's last applied event
    /// are rejected, which makes replaying a log idempotent.
    pub fn ingest(&self, user_id: &str, doc: &Document) -> Result<UpdateOutcome, UnitError> {
        let slot = self.slot(user_id);
        let mut profile = slot.lock();
        Self::apply(&mut profile, doc, self.embedder.as_ref(), &self.config)
    }

    fn apply(
        profile: &mut UserProfile,
        doc: &Document,
        embedder: &dyn Embedder,
        config: &UnitConfig,
    ) -> Result<UpdateOutcome, UnitError> {
        if let Some((ts, id)) = &profile.last_event {
            if (doc.timestamp, doc.doc_id.as_str()) <= (*ts, id.as_str()) {
                return Err(UnitError::StaleEvent {
                    doc_id: doc.doc_id.clone(),
                    timestamp: doc.timestamp,
                });
            }
        }
        let outcome = update_profile(profile, doc, embedder, config)?;
        profile.last_event = Some((doc.timestamp, doc.doc_id.clone()));
        Ok(outcome)
    }

    /// Applies a batch of `(user_id, document)` clicks. Each user's events
    /// are replayed in (timestamp, doc_id) order; users run in parallel.
    pub fn ingest_batch(
        &self,
        events: impl IntoIterator<Item = (String, Document)>,
        parallelism: Parallelism,
    ) -> IngestStats {
        let mut by_user: HashMap<String, Vec<Document>> = HashMap::new();
        for (user, doc) in events {
            by_user.entry(user).or_default().push(doc);
        }
        let mut groups: Vec<(String, Vec<Document>)> = by_user.into_iter().collect();
        groups.sort_by(|a, b| a.0.cmp(&b.0));
        let groups: Vec<(Arc<Mutex<UserProfile>>, Vec<Document>)> = groups
            .into_iter()
            .map(|(user, mut docs)| {
                docs.sort_by(|a, b| (a.timestamp, &a.doc_id).cmp(&(b.timestamp, &b.doc_id)));
                (self.slot(&user), docs)
            })
            .collect();
        let embedder = self.embedder.as_ref();
        let config = &self.config;
        let per_user = par::map(parallelism, &groups, |(slot, docs)| {
            let mut stats = IngestStats::default();
            let mut profile = slot.lock();
            for doc in docs {
                stats.record(&Self::apply(&mut profile, doc, embedder, config));
            }
            stats
        });
        let mut total = IngestStats::default();
        per_user.iter().for_each(|s| total.add(s));
        total
    }

    /// Cloned snapshot of one profile.
    pub fn profile(&self, user_id: &str) -> Option<UserProfile> {
        self.profiles.read().get(user_id).map(|p| p.lock().clone())
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.profiles.read().contains_key(user_id)
    }

    pub fn insert(&self, profile: UserProfile) -> Result<(), UnitError> {
        profile.check_embedder(self.embedder.fingerprint())?;
        self.profiles
            .write()
            .insert(profile.user_id.clone(), Arc::new(Mutex::new(profile)));
        Ok(())
    }

    pub fn user_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.profiles.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.profiles.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All profiles, sorted by user id.
    pub fn profiles(&self) -> Vec<UserProfile> {
        self.user_ids()
            .iter()
            .filter_map(|u| self.profile(u))
            .collect()
    }

    /// Writes every profile as one snapshot per line, sorted by user id.
    pub fn write_snapshots<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in self.profiles() {
            w.write_all(&snapshot(&p))?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Loads a snapshot file written by [`ProfileStore::write_snapshots`].
    pub fn read_snapshots<R: BufRead>(&self, r: R) -> Result<usize, SnapshotError> {
        let mut n = 0;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let wrap = |e: SnapshotError| SnapshotError::Line {
                line: i + 1,
                source: Box::new(e),
            };
            let profile = restore(line.as_bytes()).map_err(wrap)?;
            self.insert(profile)
                .map_err(|e| wrap(SnapshotError::Corrupt(e.to_string())))?;
            n += 1;
        }
        Ok(n)
    }
}
