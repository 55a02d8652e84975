//! Document-side vector index.
//!
//! Exact mode scans every vector. Approximate mode partitions the corpus with
//! spherical k-means and scans only the lists whose centroids are closest to
//! the query. Both modes order results by similarity descending, ties by
//! doc_id ascending. Documents are stored sorted by doc_id so that the
//! internal position order coincides with the tie-break order.
//!
//! Indexes are immutable once built. [`IndexHandle`] swaps in a rebuilt index
//! atomically.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::{self, Read, Write};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, dot4, dot_block, interleave, Embedder, Embedding, LANES};
use crate::par::{self, Parallelism};

const MAGIC: &[u8; 4] = b"UIDX";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDoc(String),
    #[error("no vector supplied for doc_id {0:?}")]
    MissingVector(String),
    #[error("query dimension {query} does not match index dimension {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("bad index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    #[default]
    Exact,
    Approximate,
}

/// Build parameters for approximate mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfParams {
    /// Number of k-means lists; `None` means ⌈√n⌉.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lists: Option<usize>,
    /// Lists scanned per query.
    pub probes: usize,
    pub iterations: usize,
    /// k-means is trained on at most this many vectors.
    pub train_sample: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams {
            lists: None,
            probes: 16,
            iterations: 12,
            train_sample: 25_000,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub ivf: IvfParams,
    pub parallelism: Parallelism,
}

impl IndexConfig {
    pub fn exact() -> Self {
        IndexConfig::default()
    }

    pub fn approximate() -> Self {
        IndexConfig {
            mode: IndexMode::Approximate,
            ..IndexConfig::default()
        }
    }
}

/// Stored document metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub doc_id: String,
    pub title: String,
    pub timestamp: i64,
}

/// A search hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct Ivf {
    centroids: Vec<f64>,
    lists: Vec<Vec<u32>>,
    /// Each list's vectors, interleaved in list order.
    packed: Vec<Vec<f64>>,
    /// `centroids`, interleaved.
    centroid_blocks: Vec<f64>,
    probes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentIndex {
    dimension: usize,
    fingerprint: u64,
    docs: Vec<DocMeta>,
    vectors: Vec<f64>,
    positions: HashMap<String, usize>,
    ivf: Option<Ivf>,
}

/// (similarity, position) with "better" sorting first.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Scored(f64, usize);

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.1.cmp(&other.1))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `n` best entries; the heap top is the worst kept entry.
struct TopN {
    n: usize,
    heap: BinaryHeap<Scored>,
}

impl TopN {
    fn new(n: usize) -> Self {
        TopN {
            n,
            heap: BinaryHeap::with_capacity(n.min(4096) + 1),
        }
    }

    #[inline]
    fn push(&mut self, s: Scored) {
        if self.heap.len() < self.n {
            self.heap.push(s);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if s < *worst {
                *worst = s;
            }
        }
    }

    fn into_sorted(self) -> Vec<Scored> {
        self.heap.into_sorted_vec()
    }
}

impl DocumentIndex {
    /// Embeds every document title with `embedder` and builds the index.
    pub fn build(
        docs: Vec<DocMeta>,
        embedder: &dyn Embedder,
        config: &IndexConfig,
    ) -> Result<Self, IndexError> {
        let vectors = par::map(config.parallelism, &docs, |d| embedder.embed(&d.title));
        Self::assemble(
            docs.into_iter().zip(vectors).collect(),
            embedder.dimension(),
            embedder.fingerprint(),
            config,
        )
    }

    /// Builds from precomputed vectors keyed by doc_id.
    pub fn build_from_vectors(
        docs: Vec<DocMeta>,
        mut vectors: HashMap<String, Embedding>,
        dimension: usize,
        fingerprint: u64,
        config: &IndexConfig,
    ) -> Result<Self, IndexError> {
        let mut entries = Vec::with_capacity(docs.len());
        for d in docs {
            let v = vectors
                .remove(&d.doc_id)
                .ok_or_else(|| IndexError::MissingVector(d.doc_id.clone()))?;
            if v.dimension() != dimension {
                return Err(IndexError::DimensionMismatch {
                    query: v.dimension(),
                    index: dimension,
                });
            }
            entries.push((d, v));
        }
        Self::assemble(entries, dimension, fingerprint, config)
    }

    fn assemble(
        mut entries: Vec<(DocMeta, Embedding)>,
        dimension: usize,
        fingerprint: u64,
        config: &IndexConfig,
    ) -> Result<Self, IndexError> {
        entries.sort_by(|a, b| a.0.doc_id.cmp(&b.0.doc_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].0.doc_id == w[1].0.doc_id) {
            return Err(IndexError::DuplicateDoc(w[0].0.doc_id.clone()));
        }
        let mut docs = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dimension);
        for (d, v) in entries {
            vectors.extend_from_slice(v.as_slice());
            docs.push(d);
        }
        let positions = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        let mut index = DocumentIndex {
            dimension,
            fingerprint,
            docs,
            vectors,
            positions,
            ivf: None,
        };
        if config.mode == IndexMode::Approximate && !index.docs.is_empty() {
            index.ivf = Some(train_ivf(&index, &config.ivf, config.parallelism));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Document count of each inverted list; `None` for an exact index.
    pub fn list_sizes(&self) -> Option<Vec<usize>> {
        self.ivf
            .as_ref()
            .map(|ivf| ivf.lists.iter().map(Vec::len).collect())
    }

    pub fn mode(&self) -> IndexMode {
        if self.ivf.is_some() {
            IndexMode::Approximate
        } else {
            IndexMode::Exact
        }
    }

    pub fn docs(&self) -> &[DocMeta] {
        &self.docs
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn doc(&self, pos: usize) -> &DocMeta {
        &self.docs[pos]
    }

    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.vectors[pos * self.dimension..(pos + 1) * self.dimension]
    }

    pub fn embedding(&self, doc_id: &str) -> Option<Embedding> {
        self.position(doc_id)
            .map(|p| Embedding::from_unit(self.vector(p).to_vec()))
    }

    /// Overrides the number of lists probed per approximate query.
    pub fn set_probes(&mut self, probes: usize) {
        if let Some(ivf) = &mut self.ivf {
            ivf.probes = probes.max(1);
        }
    }

    fn check_query(&self, query: &Embedding) -> Result<(), IndexError> {
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                query: query.dimension(),
                index: self.dimension,
            });
        }
        Ok(())
    }

    /// Top-`n` documents for `query` as (position, similarity).
    pub fn search_positions(
        &self,
        query: &Embedding,
        n: usize,
    ) -> Result<Vec<(usize, f64)>, IndexError> {
        Ok(self
            .search_positions_many(&[query], n)?
            .pop()
            .unwrap_or_default())
    }

    /// [`search_positions`](Self::search_positions) for several queries.
    /// Queries that probe the same inverted list share one pass over it;
    /// each result equals the single-query result.
    pub fn search_positions_many(
        &self,
        queries: &[&Embedding],
        n: usize,
    ) -> Result<Vec<Vec<(usize, f64)>>, IndexError> {
        for q in queries {
            self.check_query(q)?;
        }
        let mut tops: Vec<Option<TopN>> = queries
            .iter()
            .map(|q| (n > 0 && !q.is_zero() && !self.docs.is_empty()).then(|| TopN::new(n)))
            .collect();
        match &self.ivf {
            None => {
                for (q, top) in queries.iter().zip(&mut tops) {
                    if let Some(top) = top {
                        let all =
                            (0..self.docs.len()).zip(self.vectors.chunks_exact(self.dimension));
                        scan(q.as_slice(), all, top);
                    }
                }
            }
            Some(ivf) => {
                let mut probing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (qi, q) in queries.iter().enumerate() {
                    if tops[qi].is_some() {
                        for list in ivf.closest_lists(q.as_slice(), self.dimension) {
                            probing.entry(list).or_default().push(qi);
                        }
                    }
                }
                for (list, qis) in probing {
                    let blocks = ivf.packed[list].chunks_exact(LANES * self.dimension);
                    for (ids, block) in ivf.lists[list].chunks(LANES).zip(blocks) {
                        for &qi in &qis {
                            let top = tops[qi].as_mut().expect("probing query has a heap");
                            for (s, &i) in dot_block(queries[qi].as_slice(), block)
                                .into_iter()
                                .zip(ids)
                            {
                                top.push(Scored(s, i as usize));
                            }
                        }
                    }
                }
            }
        }
        Ok(tops
            .into_iter()
            .map(|t| {
                t.map_or_else(Vec::new, |t| {
                    t.into_sorted().into_iter().map(|s| (s.1, s.0)).collect()
                })
            })
            .collect())
    }

    /// Top-`n` hits for `query`, similarity descending, ties by doc_id.
    /// The zero-vector query returns nothing.
    pub fn search(&self, query: &Embedding, n: usize) -> Result<Vec<Hit>, IndexError> {
        Ok(self
            .search_positions(query, n)?
            .into_iter()
            .map(|(p, s)| Hit {
                doc_id: self.docs[p].doc_id.clone(),
                similarity: s,
            })
            .collect())
    }

    pub fn search_batch(
        &self,
        queries: &[Embedding],
        n: usize,
        parallelism: Parallelism,
    ) -> Result<Vec<Vec<Hit>>, IndexError> {
        par::map(parallelism, queries, |q| self.search(q, n))
            .into_iter()
            .collect()
    }

    /// Writes the binary index format: magic `UIDX`, a version byte, then
    /// little-endian fields.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[FORMAT_VERSION, u8::from(self.ivf.is_some())])?;
        put_u64(&mut w, self.dimension as u64)?;
        put_u64(&mut w, self.fingerprint)?;
        put_u64(&mut w, self.docs.len() as u64)?;
        for d in &self.docs {
            put_str(&mut w, &d.doc_id)?;
            put_str(&mut w, &d.title)?;
            w.write_all(&d.timestamp.to_le_bytes())?;
        }
        for v in &self.vectors {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(ivf) = &self.ivf {
            put_u64(&mut w, ivf.lists.len() as u64)?;
            put_u64(&mut w, ivf.probes as u64)?;
            for c in &ivf.centroids {
                w.write_all(&c.to_le_bytes())?;
            }
            for list in &ivf.lists {
                put_u64(&mut w, list.len() as u64)?;
                for &i in list {
                    w.write_all(&i.to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::Format("missing magic header".into()));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        if hdr[0] != FORMAT_VERSION {
            return Err(IndexError::Format(format!(
                "unsupported version {}",
                hdr[0]
            )));
        }
        let dimension = get_len(&mut r)?;
        let fingerprint = get_u64(&mut r)?;
        let n = get_len(&mut r)?;
        let mut docs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let doc_id = get_str(&mut r)?;
            let title = get_str(&mut r)?;
            let timestamp = get_u64(&mut r)? as i64;
            docs.push(DocMeta {
                doc_id,
                title,
                timestamp,
            });
        }
        let vectors = get_f64s(&mut r, n * dimension)?;
        let ivf = if hdr[1] == 1 {
            let n_lists = get_len(&mut r)?;
            let probes = get_len(&mut r)?;
            let centroids = get_f64s(&mut r, n_lists * dimension)?;
            let mut lists = Vec::with_capacity(n_lists);
            for _ in 0..n_lists {
                let len = get_len(&mut r)?;
                let mut list = Vec::with_capacity(len.min(n));
                for _ in 0..len {
                    let mut b = [0u8; 4];
                    r.read_exact(&mut b)?;
                    let i = u32::from_le_bytes(b);
                    if i as usize >= n {
                        return Err(IndexError::Format("list entry out of range".into()));
                    }
                    list.push(i);
                }
                lists.push(list);
            }
            Some(Ivf::new(centroids, lists, probes, &vectors, dimension))
        } else {
            None
        };
        let positions: HashMap<String, usize> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        if positions.len() != docs.len() {
            return Err(IndexError::Format("duplicate doc_id".into()));
        }
        Ok(DocumentIndex {
            dimension,
            fingerprint,
            docs,
            vectors,
            positions,
            ivf,
        })
    }
}

impl Ivf {
    fn new(
        centroids: Vec<f64>,
        lists: Vec<Vec<u32>>,
        probes: usize,
        vectors: &[f64],
        dim: usize,
    ) -> Self {
        let packed = lists
            .iter()
            .map(|l| {
                interleave(
                    l.iter()
                        .map(|&i| &vectors[i as usize * dim..(i as usize + 1) * dim]),
                    dim,
                )
            })
            .collect();
        Ivf {
            centroid_blocks: interleave(centroids.chunks_exact(dim), dim),
            centroids,
            lists,
            packed,
            probes,
        }
    }

    fn closest_lists(&self, q: &[f64], dim: usize) -> Vec<usize> {
        let mut top = TopN::new(self.probes);
        let k = self.lists.len();
        for (b, block) in self.centroid_blocks.chunks_exact(LANES * dim).enumerate() {
            for (l, s) in dot_block(q, block).into_iter().enumerate() {
                let list = b * LANES + l;
                if list < k {
                    top.push(Scored(s, list));
                }
            }
        }
        top.into_sorted().into_iter().map(|s| s.1).collect()
    }
}

/// Pushes the similarity of every (position, vector) pair into `top`.
fn scan<'a>(q: &[f64], items: impl Iterator<Item = (usize, &'a [f64])>, top: &mut TopN) {
    let mut batch: [(usize, &[f64]); 4] = [(0, &[]); 4];
    let mut filled = 0;
    for item in items {
        batch[filled] = item;
        filled += 1;
        if filled == 4 {
            let sims = dot4(q, batch.map(|b| b.1));
            for (s, (j, _)) in sims.into_iter().zip(batch) {
                top.push(Scored(s, j));
            }
            filled = 0;
        }
    }
    for &(j, v) in &batch[..filled] {
        top.push(Scored(dot(q, v), j));
    }
}

/// Best centroid for `v`; `blocks` holds `k` interleaved centroids.
fn nearest_centroid(v: &[f64], blocks: &[f64], k: usize, dim: usize) -> usize {
    let mut best = Scored(f64::NEG_INFINITY, 0);
    for (b, block) in blocks.chunks_exact(LANES * dim).enumerate() {
        for (l, s) in dot_block(v, block).into_iter().enumerate() {
            let s = Scored(s, b * LANES + l);
            if s.1 < k && s < best {
                best = s;
            }
        }
    }
    best.1
}

/// Spherical k-means over (a sample of) the stored vectors.
fn train_ivf(index: &DocumentIndex, params: &IvfParams, parallelism: Parallelism) -> Ivf {
    let n = index.len();
    let dim = index.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let train: Vec<usize> = if n > params.train_sample.max(1) {
        let mut s = sample(&mut rng, n, params.train_sample.max(1)).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let k = params
        .lists
        .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
        .clamp(1, train.len());
    let mut centroids: Vec<f64> = sample(&mut rng, train.len(), k)
        .into_iter()
        .flat_map(|i| index.vector(train[i]).to_vec())
        .collect();

    for _ in 0..params.iterations {
        let blocks = interleave(centroids.chunks_exact(dim), dim);
        let assign = par::map(parallelism, &train, |&i| {
            nearest_centroid(index.vector(i), &blocks, k, dim)
        });
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (&i, &l) in train.iter().zip(&assign) {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(index.vector(i)) {
                *s += v;
            }
        }
        for l in 0..k {
            let c = &mut sums[l * dim..(l + 1) * dim];
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if counts[l] == 0 || norm == 0.0 {
                let pick = train[sample(&mut rng, train.len(), 1).index(0)];
                c.copy_from_slice(index.vector(pick));
            } else {
                c.iter_mut().for_each(|x| *x /= norm);
            }
        }
        centroids = sums;
    }

    let blocks = interleave(centroids.chunks_exact(dim), dim);
    let assign = par::map_range(parallelism, n, |i| {
        nearest_centroid(index.vector(i), &blocks, k, dim)
    });
    let mut lists = vec![Vec::new(); k];
    for (i, l) in assign.into_iter().enumerate() {
        lists[l].push(i as u32);
    }
    Ivf::new(centroids, lists, params.probes.max(1), &index.vectors, dim)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_len<R: Read>(r: &mut R) -> Result<usize, IndexError> {
    let v = get_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&v| v < (1 << 40))
        .ok_or_else(|| IndexError::Format(format!("implausible length {v}")))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = get_len(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| IndexError::Format(e.to_string()))
}

fn get_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>, IndexError> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Shared, atomically swappable index.
pub struct IndexHandle {
    current: RwLock<Arc<DocumentIndex>>,
}

impl IndexHandle {
    pub fn new(index: DocumentIndex) -> Self {
        IndexHandle {
            current: RwLock::new(Arc::new(index)),
        }
    }

    /// The index in effect right now. Readers keep using their `Arc` even if
    /// a swap happens mid-query.
    pub fn load(&self) -> Arc<DocumentIndex> {
        Arc::clone(&self.current.read())
    }

    /// Replaces the index, returning the previous one.
    pub fn swap(&self, index: DocumentIndex) -> Arc<DocumentIndex> {
        std::mem::replace(&mut *self.current.write(), Arc::new(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbedderConfig, TextEmbedder};

    fn meta(id: &str, title: &str) -> DocMeta {
        DocMeta {
            doc_id: id.into(),
            title: title.into(),
            timestamp: 0,
        }
    }

    fn tent_corpus() -> (TextEmbedder, Vec<DocMeta>) {
        let emb = TextEmbedder::new(EmbedderConfig::vocab(["tent", "stove", "lamp"])).unwrap();
        let docs = vec![
            meta("d1", "tent"),
            meta("d2", "tent stove"),
            meta("d3", "stove lamp"),
            meta("d4", "tent tent lamp"),
            meta("d5", "lamp"),
        ];
        (emb, docs)
    }

    #[test]
    fn empty_index() {
        let (emb, _) = tent_corpus();
        let idx = DocumentIndex::build(vec![], &emb, &IndexConfig::exact()).unwrap();
        assert!(idx.search(&emb.embed("tent"), 5).unwrap().is_empty());
        let idx = DocumentIndex::build(vec![], &emb, &IndexConfig::approximate()).unwrap();
        assert!(idx.search(&emb.embed("tent"), 5).unwrap().is_empty());
    }

    #[test]
    fn five_doc_top3() {
        let (emb, docs) = tent_corpus();
        let idx = DocumentIndex::build(docs, &emb, &IndexConfig::exact()).unwrap();
        assert_eq!(idx.len(), 5);
        let hits = idx.search(&emb.embed("tent"), 3).unwrap();
        // cos(tent, ·): d1 = 1, d4 = 2/√5, d2 = 1/√2, d3 = d5 = 0.
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d4", "d2"]);
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert!((hits[1].similarity - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((hits[2].similarity - 0.5f64.sqrt()).abs() < 1e-12);

        // Ties at zero resolve by doc_id.
        let all = idx.search(&emb.embed("tent"), 10).unwrap();
        let ids: Vec<_> = all.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d4", "d2", "d3", "d5"]);
    }

    #[test]
    fn self_retrieval_and_zero_query() {
        let (emb, docs) = tent_corpus();
        let idx = DocumentIndex::build(docs[..1].to_vec(), &emb, &IndexConfig::exact()).unwrap();
        let hits = idx.search(&emb.embed("tent"), 1).unwrap();
        assert_eq!(hits[0].doc_id, "d1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert!(idx.search(&Embedding::zero(3), 1).unwrap().is_empty());
        assert!(matches!(
            idx.search(&Embedding::zero(4), 1),
            Err(IndexError::DimensionMismatch { query: 4, index: 3 })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let (emb, mut docs) = tent_corpus();
        docs.push(meta("d3", "again"));
        match DocumentIndex::build(docs, &emb, &IndexConfig::exact()) {
            Err(IndexError::DuplicateDoc(id)) => assert_eq!(id, "d3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip() {
        let (emb, docs) = tent_corpus();
        for cfg in [IndexConfig::exact(), IndexConfig::approximate()] {
            let idx = DocumentIndex::build(docs.clone(), &emb, &cfg).unwrap();
            let mut buf = Vec::new();
            idx.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"UIDX");
            assert_eq!(buf[4], 1);
            let back = DocumentIndex::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, idx);
        }
        assert!(matches!(
            DocumentIndex::read_from(&b"NOPE\x01\x00"[..]),
            Err(IndexError::Format(_))
        ));
        assert!(matches!(
            DocumentIndex::read_from(&b"UIDX\x09\x00"[..]),
            Err(IndexError::Format(_))
        ));
    }

    #[test]
    fn precomputed_vectors() {
        let docs = vec![meta("a", ""), meta("b", "")];
        let mut vecs = HashMap::new();
        vecs.insert(
            "a".to_string(),
            Embedding::normalized(vec![1.0, 0.0]).unwrap(),
        );
        vecs.insert(
            "b".to_string(),
            Embedding::normalized(vec![1.0, 1.0]).unwrap(),
        );
        let idx = DocumentIndex::build_from_vectors(
            docs.clone(),
            vecs.clone(),
            2,
            99,
            &IndexConfig::exact(),
        )
        .unwrap();
        let q = Embedding::normalized(vec![0.0, 1.0]).unwrap();
        assert_eq!(idx.search(&q, 1).unwrap()[0].doc_id, "b");
        vecs.remove("b");
        assert!(matches!(
            DocumentIndex::build_from_vectors(docs, vecs, 2, 99, &IndexConfig::exact()),
            Err(IndexError::MissingVector(_))
        ));
    }

    #[test]
    fn handle_swaps_atomically() {
        let (emb, docs) = tent_corpus();
        let h =
            IndexHandle::new(DocumentIndex::build(vec![], &emb, &IndexConfig::exact()).unwrap());
        let before = h.load();
        h.swap(DocumentIndex::build(docs, &emb, &IndexConfig::exact()).unwrap());
        assert!(before.is_empty());
        assert_eq!(h.load().len(), 5);
    }
}
