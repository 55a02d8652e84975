use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use unitrec::embedding::{read_vector_records, Embedder, TextEmbedder};
use unitrec::eval::{
    dataset_counts, draw_candidates, evaluate_with, split_dataset, split_periods, ItemPopRanker,
    OracleRanker, RandomRanker, Ranker, UnitRanker, UserHistory,
};
use unitrec::index::{DocMeta, DocumentIndex};
use unitrec::keyterm::StopwordExtractor;
use unitrec::records::{read_jsonl, write_jsonl, ClickRecord, CorpusRecord};
use unitrec::retrieval::{retrieve as retrieve_docs, RetrievalConfig};
use unitrec::simulator::generate_with;
use unitrec::study::{run_study, StudyName};
use unitrec::unit_store::ProfileStore;

use crate::config::GlobalConfig;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Usage or configuration problem (exit 1).
    Config(anyhow::Error),
    /// Bad input data or runtime failure (exit 2).
    Data(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) => e,
        }
    }
}

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn data_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn data_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

/// A configured input path that must exist.
fn input<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    let p = path.as_deref().ok_or_else(|| {
        Failure::Config(anyhow!(
            "no {what} path configured (set paths.{what} or --{what})"
        ))
    })?;
    if !p.exists() {
        return Err(Failure::Config(anyhow!(
            "{what} file {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

/// A configured output path whose directory must exist.
fn output<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    let p = path.as_deref().ok_or_else(|| {
        Failure::Config(anyhow!(
            "no {what} path configured (set paths.{what} or --{what})"
        ))
    })?;
    let dir = parent_dir(p);
    if !dir.is_dir() {
        return Err(Failure::Config(anyhow!(
            "directory {} does not exist",
            dir.display()
        )));
    }
    Ok(p)
}

fn parent_dir(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let f = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .data_err()?;
    read_jsonl(BufReader::new(f))
        .with_context(|| path.display().to_string())
        .data_err()
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let run = || -> anyhow::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            body(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(path)?;
        Ok(())
    };
    run()
        .with_context(|| format!("writing {}", path.display()))
        .data_err()
}

fn extractor(cfg: &GlobalConfig) -> Result<StopwordExtractor, Failure> {
    match &cfg.paths.stopwords {
        None => Ok(StopwordExtractor::default()),
        Some(_) => {
            let p = input(&cfg.paths.stopwords, "stopwords")?;
            let f = File::open(p).data_err()?;
            StopwordExtractor::from_reader(BufReader::new(f))
                .with_context(|| format!("reading {}", p.display()))
                .data_err()
        }
    }
}

fn embedder(cfg: &GlobalConfig) -> Result<Arc<TextEmbedder>, Failure> {
    Ok(Arc::new(
        TextEmbedder::new(cfg.embedder.clone()).config_err()?,
    ))
}

/// Writes to stdout. A closed pipe ends output quietly.
pub fn emit(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(e.into())),
        _ => Ok(()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<(), Failure> {
    emit(&format!(
        "{}\n",
        serde_json::to_string_pretty(v).expect("json value")
    ))
}

#[derive(Serialize)]
struct RankedLine<'a> {
    rank: usize,
    doc_id: &'a str,
    score: f64,
}

fn build_index(
    cfg: &GlobalConfig,
    docs: Vec<DocMeta>,
    embedder: &TextEmbedder,
) -> Result<DocumentIndex, Failure> {
    let Some(vp) = &cfg.paths.vectors else {
        return DocumentIndex::build(docs, embedder, &cfg.index).data_err();
    };
    let vp = input(&Some(vp.clone()), "vectors")?.to_path_buf();
    let f = File::open(&vp).data_err()?;
    let vectors = read_vector_records(BufReader::new(f))
        .with_context(|| vp.display().to_string())
        .data_err()?;
    if let Some((id, v)) = vectors.first() {
        if v.dimension() != embedder.dimension() {
            return Err(Failure::Data(anyhow!(
                "vector for {id} has dimension {}, the configured embedder has {}",
                v.dimension(),
                embedder.dimension()
            )));
        }
    }
    let map: HashMap<_, _> = vectors.into_iter().collect();
    DocumentIndex::build_from_vectors(
        docs,
        map,
        embedder.dimension(),
        embedder.fingerprint(),
        &cfg.index,
    )
    .data_err()
}

pub fn ingest(cfg: &GlobalConfig) -> Result<(), Failure> {
    let corpus_path = input(&cfg.paths.corpus, "corpus")?;
    let index_path = output(&cfg.paths.index, "index")?;
    let clicks_path = match &cfg.paths.clicks {
        Some(_) => Some(input(&cfg.paths.clicks, "clicks")?),
        None => None,
    };
    let embedder = embedder(cfg)?;
    let records: Vec<CorpusRecord> = read_records(corpus_path)?;
    let docs: Vec<DocMeta> = records.into_iter().map(Into::into).collect();
    let index = build_index(cfg, docs, &embedder)?;
    write_atomic(index_path, |w| index.write_to(w))?;

    let mut stats = json!({
        "documents": index.len(),
        "dimension": index.dimension(),
        "mode": index.mode(),
        "index": index_path,
    });
    if let Some(cp) = clicks_path {
        let clicks: Vec<ClickRecord> = read_records(cp)?;
        let users: HashSet<&str> = clicks.iter().map(|c| c.user_id.as_str()).collect();
        let items: HashSet<&str> = clicks.iter().map(|c| c.doc_id.as_str()).collect();
        let unknown = items.iter().filter(|d| index.position(d).is_none()).count();
        let (split, split_stats) = split_dataset(&clicks, &cfg.eval);
        stats["clicks"] = json!({
            "users": users.len(),
            "items": items.len(),
            "interactions": clicks.len(),
            "items_missing_from_corpus": unknown,
        });
        stats["split"] = json!({
            "counts": dataset_counts(&split),
            "too_few_clicks": split_stats.too_few_clicks,
            "too_many_clicks": split_stats.too_many_clicks,
        });
    }
    print_json(&stats)
}

/// Holds an exclusive advisory lock on `<snapshots>.lock` while alive.
struct SnapshotLock(File);

impl SnapshotLock {
    fn acquire(snapshots: &Path) -> Result<Self, Failure> {
        let mut name = snapshots.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        let f = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .with_context(|| format!("opening lock {}", path.display()))
            .data_err()?;
        f.try_lock().map_err(|_| {
            Failure::Data(anyhow!(
                "snapshot file {} is locked by another process",
                snapshots.display()
            ))
        })?;
        Ok(SnapshotLock(f))
    }
}

impl Drop for SnapshotLock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn load_store(cfg: &GlobalConfig, snapshots: &Path) -> Result<ProfileStore, Failure> {
    let store = ProfileStore::new(cfg.unit.clone(), embedder(cfg)?).config_err()?;
    if snapshots.exists() {
        let f = File::open(snapshots).data_err()?;
        store
            .read_snapshots(BufReader::new(f))
            .with_context(|| snapshots.display().to_string())
            .data_err()?;
    }
    Ok(store)
}

pub fn update(cfg: &GlobalConfig) -> Result<(), Failure> {
    let clicks_path = input(&cfg.paths.clicks, "clicks")?;
    let snapshots = output(&cfg.paths.snapshots, "snapshots")?;
    let extractor = extractor(cfg)?;
    let _lock = SnapshotLock::acquire(snapshots)?;
    let store = load_store(cfg, snapshots)?;
    let clicks: Vec<ClickRecord> = read_records(clicks_path)?;
    let events = clicks
        .iter()
        .map(|c| (c.user_id.clone(), c.to_document(&extractor)));
    let stats = store.ingest_batch(events, cfg.parallelism);
    write_atomic(snapshots, |w| store.write_snapshots(w))?;
    let mut out = serde_json::to_value(&stats).expect("stats serialize");
    out["events"] = json!(clicks.len());
    out["users"] = json!(store.len());
    print_json(&out)
}

pub fn retrieve(cfg: &GlobalConfig, user: &str, k: usize) -> Result<(), Failure> {
    let index_path = input(&cfg.paths.index, "index")?;
    let snapshots = input(&cfg.paths.snapshots, "snapshots")?;
    let config = RetrievalConfig {
        max_results: k,
        ..cfg.retrieval.clone()
    };
    config.validate().config_err()?;
    let store = load_store(cfg, snapshots)?;
    let profile = store
        .profile(user)
        .ok_or_else(|| Failure::Data(anyhow!("unknown user {user:?}")))?;
    let f = File::open(index_path).data_err()?;
    let index = DocumentIndex::read_from(BufReader::new(f))
        .with_context(|| index_path.display().to_string())
        .data_err()?;
    let result = retrieve_docs(&profile, &index, &config).data_err()?;
    let mut text = String::new();
    for (i, d) in result.items.iter().enumerate() {
        let line = RankedLine {
            rank: i + 1,
            doc_id: &d.doc_id,
            score: d.score,
        };
        text.push_str(&serde_json::to_string(&line).expect("line serializes"));
        text.push('\n');
    }
    emit(&text)
}

pub fn eval(
    cfg: &GlobalConfig,
    system: &str,
    test_clicks: Option<&Path>,
    output_path: Option<&Path>,
) -> Result<(), Failure> {
    const SYSTEMS: [&str; 5] = ["ira", "ira-alt-embedder", "itempop", "random", "oracle"];
    if !SYSTEMS.contains(&system) {
        return Err(Failure::Config(anyhow!(
            "unknown system {system:?}; expected one of {}",
            SYSTEMS.join(", ")
        )));
    }
    let corpus_path = input(&cfg.paths.corpus, "corpus")?;
    let clicks_path = input(&cfg.paths.clicks, "clicks")?;
    let test_path = match test_clicks {
        Some(p) => Some(input(&Some(p.to_path_buf()), "test-clicks")?.to_path_buf()),
        None => None,
    };
    if let Some(p) = output_path {
        output(&Some(p.to_path_buf()), "output")?;
    }
    let extractor = extractor(cfg)?;
    let embedder = embedder(cfg)?;

    let records: Vec<CorpusRecord> = read_records(corpus_path)?;
    let docs: Vec<DocMeta> = records.into_iter().map(Into::into).collect();
    let clicks: Vec<ClickRecord> = read_records(clicks_path)?;
    let (users, _) = match &test_path {
        Some(p) => split_periods(&clicks, &read_records::<ClickRecord>(p)?, &cfg.eval),
        None => split_dataset(&clicks, &cfg.eval),
    };
    let corpus = Arc::new(build_index(cfg, docs.clone(), &embedder)?);

    let ranker: Box<dyn Ranker> = match system {
        "ira" => Box::new(unit_ranker(
            cfg,
            system,
            &users,
            corpus.clone(),
            embedder,
            &extractor,
        )?),
        "ira-alt-embedder" => {
            let alt = Arc::new(TextEmbedder::new(cfg.alt_embedder.clone()).config_err()?);
            let alt_index =
                Arc::new(DocumentIndex::build(docs, alt.as_ref(), &cfg.index).data_err()?);
            Box::new(unit_ranker(
                cfg, system, &users, alt_index, alt, &extractor,
            )?)
        }
        "itempop" => {
            let train: Vec<ClickRecord> =
                users.iter().flat_map(|u| u.train.iter().cloned()).collect();
            Box::new(ItemPopRanker::new(&train, corpus.clone(), true))
        }
        "random" => Box::new(RandomRanker {
            seed: cfg.eval.rng_seed,
        }),
        _ => Box::new(OracleRanker),
    };
    // Candidates always come from the primary embedding space so that every
    // system is scored on the same lists.
    let candidates = draw_candidates(&users, &corpus, &cfg.eval);
    let mut report = evaluate_with(ranker.as_ref(), &users, &candidates, &cfg.eval).data_err()?;
    report.effective_config = Some(cfg.to_json());
    if let Some(p) = output_path {
        write_atomic(p, |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            w.write_all(b"\n")
        })?;
    }
    emit(&report.table())
}

fn unit_ranker(
    cfg: &GlobalConfig,
    name: &str,
    users: &[UserHistory],
    corpus: Arc<DocumentIndex>,
    embedder: Arc<TextEmbedder>,
    extractor: &StopwordExtractor,
) -> Result<UnitRanker, Failure> {
    UnitRanker::build(
        name,
        users,
        corpus,
        embedder,
        cfg.unit.clone(),
        extractor,
        cfg.parallelism,
    )
    .data_err()
}

pub fn study(cfg: &GlobalConfig, name: &str, out_dir: &Path) -> Result<(), Failure> {
    let study: StudyName = name.parse().config_err()?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .data_err()?;
    let report = run_study(study, &cfg.study_config()).data_err()?;
    let csv = report.to_csv();
    write_atomic(&out_dir.join(format!("{study}.csv")), |w| {
        w.write_all(csv.as_bytes())
    })?;
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc["effective_config"] = cfg.to_json();
    write_atomic(&out_dir.join(format!("{study}.json")), |w| {
        serde_json::to_writer_pretty(&mut *w, &doc)?;
        w.write_all(b"\n")
    })?;
    emit(&report.summary_table())
}

pub fn simulate(cfg: &GlobalConfig, out_dir: &Path) -> Result<(), Failure> {
    let sim = &cfg.study.sim;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .data_err()?;
    let out = generate_with(sim, cfg.parallelism).config_err()?;
    let all: Vec<usize> = (0..out.periods.len()).collect();
    let all_clicks = out.clicks_in(&all);
    write_atomic(&out_dir.join("corpus.jsonl"), |w| {
        write_jsonl(w, &out.corpus_records())
    })?;
    write_atomic(&out_dir.join("clicks.jsonl"), |w| {
        write_jsonl(w, &all_clicks)
    })?;
    for (label, log) in out.periods.iter().zip(&out.clicks) {
        write_atomic(&out_dir.join(format!("clicks_{label}.jsonl")), |w| {
            write_jsonl(w, log)
        })?;
    }
    write_atomic(&out_dir.join("ground_truth.jsonl"), |w| {
        write_jsonl(w, &out.ground_truth)
    })?;
    write_atomic(&out_dir.join("stopwords.txt"), |w| {
        for t in sim.background_vocabulary() {
            writeln!(w, "{t}")?;
        }
        Ok(())
    })?;
    let per_period: serde_json::Map<String, serde_json::Value> = out
        .periods
        .iter()
        .zip(&out.clicks)
        .map(|(l, c)| (l.clone(), json!(c.len())))
        .collect();
    print_json(&json!({
        "documents": out.corpus.len(),
        "users": sim.num_users,
        "clicks": all_clicks.len(),
        "clicks_per_period": per_period,
        "out_dir": out_dir,
    }))
}
