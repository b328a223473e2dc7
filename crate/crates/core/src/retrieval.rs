//! Exact cosine nearest-neighbour search over embedding corpora, with top-k
//! accuracy and mean average precision.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, LABEL_MAGIC};
use crate::format::{self, BlobWriter, FormatError};
use crate::linalg::{gemm, Mat};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("embedding has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{values} values and {labels} labels do not form {dim}-dimensional rows")]
    LengthMismatch { values: usize, labels: usize, dim: usize },
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `N × dim` embeddings with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
    /// Producer tag such as `ann` or `snn(128)`.
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbManifest {
    count: usize,
    dim: usize,
    source: String,
    label_file: String,
}

pub const EMB_KIND: &str = "emb";

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>, labels: Vec<u8>, source: impl Into<String>) -> Result<Self, RetrievalError> {
        if dim == 0 || data.len() != dim * labels.len() {
            return Err(RetrievalError::LengthMismatch {
                values: data.len(),
                labels: labels.len(),
                dim,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(i / dim));
        }
        Ok(Self {
            dim,
            data,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: self.source.clone(),
        }
    }

    /// Sidecar label file next to an `.emb` path.
    pub fn label_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".labels");
        path.with_file_name(name)
    }

    /// Writes the embedding container and its IDX label sidecar.
    pub fn write(&self, path: &Path) -> Result<(), RetrievalError> {
        let label_path = Self::label_path(path);
        let mut w = BlobWriter::new();
        w.push_f32("embeddings", &[self.len(), self.dim], &self.data);
        let meta = EmbManifest {
            count: self.len(),
            dim: self.dim,
            source: self.source.clone(),
            label_file: label_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let bytes = w.finish(EMB_KIND, &meta)?;
        let labels = dataset::write_idx(LABEL_MAGIC, &[self.len()], &self.labels);
        write_file(path, &bytes)?;
        write_file(&label_path, &labels)
    }

    pub fn read(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = std::fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let (meta, reader): (EmbManifest, _) = format::decode(EMB_KIND, &bytes)?;
        let data = reader.f32("embeddings")?;
        let labels = dataset::read_idx_file(&path.with_file_name(&meta.label_file))?;
        if labels.magic != LABEL_MAGIC || labels.data.len() != meta.count {
            return Err(FormatError::Inconsistent("label sidecar does not match the embeddings".into()).into());
        }
        Self::new(meta.dim, data, labels.data, meta.source)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RetrievalError> {
    std::fs::write(path, bytes).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// L2-normalizes `row` in place; returns false for an all-zero row.
fn normalize_row(row: &mut [f32]) -> bool {
    let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / norm) as f32;
    }
    true
}

/// Exact search structure over L2-normalized corpus rows. All-zero rows stay
/// zero, so their similarity to every query is 0.
#[derive(Debug, Clone)]
pub struct Index {
    dim: usize,
    rows: Vec<f32>,
    labels: Vec<u8>,
    zero_rows: Vec<usize>,
    class_counts: Vec<usize>,
}

impl Index {
    pub fn build(corpus: EmbeddingSet) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let dim = corpus.dim;
        let mut rows = corpus.data;
        let zero_rows = rows
            .chunks_exact_mut(dim)
            .enumerate()
            .filter_map(|(i, r)| (!normalize_row(r)).then_some(i))
            .collect();
        let mut class_counts = vec![0; 256];
        for &l in &corpus.labels {
            class_counts[l as usize] += 1;
        }
        Ok(Self {
            dim,
            rows,
            labels: corpus.labels,
            zero_rows,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of corpus items labelled `class`.
    pub fn relevant(&self, class: u8) -> usize {
        self.class_counts[class as usize]
    }

    fn scores(&self, q: &[f32]) -> Vec<f32> {
        let mut scores = vec![0.0; self.len()];
        gemm(Mat::new(q, 1, self.dim), Mat::t(&self.rows, self.len(), self.dim), 0.0, &mut scores);
        scores
    }

    /// Exact top-`k` by cosine similarity; ties go to the lower corpus id.
    pub fn query(&self, q: &[f32], k: usize) -> Result<RankedResult, RetrievalError> {
        if q.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let mut q = q.to_vec();
        normalize_row(&mut q);
        let scores = self.scores(&q);
        Ok(RankedResult::from_scores(&scores, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub neighbors: Vec<u32>,
    pub scores: Vec<f32>,
}

fn rank_cmp(scores: &[f32]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b))
}

/// Corpus ids ordered by descending score then ascending id, truncated to `depth`.
fn ranking(scores: &[f32], depth: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    let cmp = rank_cmp(scores);
    let depth = depth.min(order.len());
    if depth < order.len() && depth > 0 {
        order.select_nth_unstable_by(depth - 1, &cmp);
        order.truncate(depth);
    }
    order.sort_unstable_by(&cmp);
    order.truncate(depth);
    order
}

impl RankedResult {
    pub fn from_scores(scores: &[f32], depth: usize) -> Self {
        let neighbors = ranking(scores, depth);
        let scores = neighbors.iter().map(|&i| scores[i as usize]).collect();
        Self { neighbors, scores }
    }
}

/// Fraction of queries with a same-label item among their first `k` neighbours.
pub fn topk_accuracy(results: &[RankedResult], corpus_labels: &[u8], query_labels: &[u8], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .zip(query_labels)
        .filter(|(r, &q)| r.neighbors.iter().take(k).any(|&n| corpus_labels[n as usize] == q))
        .count();
    hits as f64 / results.len() as f64
}

/// `(1/R) Σ precision@r` over ranks `r` holding a relevant item; 0 when `R = 0`.
pub fn average_precision(relevance: impl IntoIterator<Item = bool>, total_relevant: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, rel) in relevance.into_iter().enumerate() {
        if rel {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
            if found == total_relevant {
                break;
            }
        }
    }
    sum / total_relevant as f64
}

/// mAP of full-depth rankings; `R` counts same-label items in the corpus.
pub fn mean_average_precision(results: &[RankedResult], corpus_labels: &[u8], query_labels: &[u8]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let total: f64 = results
        .iter()
        .zip(query_labels)
        .map(|(r, &q)| {
            let relevant = corpus_labels.iter().filter(|&&l| l == q).count();
            average_precision(r.neighbors.iter().map(|&n| corpus_labels[n as usize] == q), relevant)
        })
        .sum();
    total / results.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub ks: Vec<usize>,
    /// Ranking depth for mAP; `None` ranks the whole corpus.
    pub depth: Option<usize>,
    /// Queries scored per matrix product.
    pub block: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 3],
            depth: None,
            block: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMetrics {
    pub queries: usize,
    pub corpus: usize,
    pub top_k: Vec<TopK>,
    pub map: f64,
    /// `None` means full depth; truncated mAP is not comparable to full depth.
    pub map_depth: Option<usize>,
    pub zero_norm_corpus: usize,
    pub zero_norm_queries: usize,
}

impl SearchMetrics {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|t| t.k == k).map(|t| t.accuracy)
    }
}

/// Scores every query against the index and aggregates top-k accuracy and mAP.
///
/// Per-query results are reduced in query order, so the output does not
/// depend on thread scheduling.
pub fn evaluate(index: &Index, queries: &EmbeddingSet, cfg: &SearchConfig) -> Result<SearchMetrics, RetrievalError> {
    if queries.dim != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim,
            found: queries.dim,
        });
    }
    if cfg.ks.iter().any(|&k| k == 0) {
        return Err(RetrievalError::ZeroK);
    }
    let dim = index.dim;
    let n = index.len();
    let max_k = cfg.ks.iter().copied().max().unwrap_or(1);
    let depth = cfg.depth.unwrap_or(n).max(max_k).min(n);
    let block = cfg.block.max(1);
    let mut zero_norm_queries = 0;
    let mut per_query: Vec<(Vec<bool>, f64)> = Vec::with_capacity(queries.len());
    let mut scores = vec![0.0f32; block * n];
    for (b, chunk) in queries.data.chunks(block * dim).enumerate() {
        let rows = chunk.len() / dim;
        let mut q = chunk.to_vec();
        for r in q.chunks_exact_mut(dim) {
            if !normalize_row(r) {
                zero_norm_queries += 1;
            }
        }
        let out = &mut scores[..rows * n];
        gemm(Mat::new(&q, rows, dim), Mat::t(&index.rows, n, dim), 0.0, out);
        let labels = &queries.labels[b * block..b * block + rows];
        let results: Vec<(Vec<bool>, f64)> = out
            .par_chunks(n)
            .zip(labels.par_iter())
            .map(|(row, &label)| {
                let order = ranking(row, depth);
                let rel = |i: &u32| index.labels[*i as usize] == label;
                let hits = cfg.ks.iter().map(|&k| order.iter().take(k).any(rel)).collect();
                let ap = average_precision(order.iter().map(rel), index.relevant(label));
                (hits, ap)
            })
            .collect();
        per_query.extend(results);
    }
    let count = per_query.len().max(1) as f64;
    let top_k = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(j, &k)| TopK {
            k,
            accuracy: per_query.iter().filter(|(h, _)| h[j]).count() as f64 / count,
        })
        .collect();
    let map = per_query.iter().map(|(_, ap)| ap).sum::<f64>() / count;
    Ok(SearchMetrics {
        queries: queries.len(),
        corpus: n,
        top_k,
        map,
        map_depth: cfg.depth,
        zero_norm_corpus: index.zero_rows.len(),
        zero_norm_queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(dim: usize, data: Vec<f32>, labels: Vec<u8>) -> EmbeddingSet {
        EmbeddingSet::new(dim, data, labels, "test").unwrap()
    }

    #[test]
    fn single_row_and_exact_match() {
        let idx = Index::build(set(2, vec![3.0, 4.0], vec![0])).unwrap();
        assert_eq!(idx.len(), 1);
        let r = idx.query(&[6.0, 8.0], 1).unwrap();
        assert_eq!(r.neighbors, vec![0]);
        assert!((r.scores[0] - 1.0).abs() < 1e-6);
        assert!(matches!(Index::build(set(2, vec![], vec![])), Err(RetrievalError::EmptyCorpus)));
        assert!(matches!(idx.query(&[1.0], 1), Err(RetrievalError::DimensionMismatch { .. })));
    }

    #[test]
    fn hand_computed_toy_ranking() {
        // rows: e1, e2, (1,1,0), (1,0,1), (-1,0,0); query (2,1,0)
        let corpus = set(
            3,
            vec![1., 0., 0., 0., 1., 0., 1., 1., 0., 1., 0., 1., -1., 0., 0.],
            vec![0, 1, 0, 1, 0],
        );
        let idx = Index::build(corpus).unwrap();
        let r = idx.query(&[2.0, 1.0, 0.0], 5).unwrap();
        // cosines: 2/√5=.894, 1/√5=.447, 3/√10=.949, 2/√10=.632, -.894
        assert_eq!(r.neighbors, vec![2, 0, 3, 1, 4]);
        let want = [0.9486833, 0.8944272, 0.6324555, 0.4472136, -0.8944272];
        for (s, w) in r.scores.iter().zip(want) {
            assert!((s - w).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rows_and_orthogonal_queries() {
        let idx = Index::build(set(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![0, 1, 2])).unwrap();
        assert_eq!(idx.zero_rows(), &[0, 2]);
        let r = idx.query(&[0.0, 1.0], 3).unwrap();
        assert_eq!(r.neighbors, vec![0, 1, 2]);
        assert!(r.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = Index::build(set(4, data, vec![0; 10])).unwrap();
        let b = Index::build(set(4, a.rows.clone(), vec![0; 10])).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn average_precision_by_hand() {
        assert_eq!(average_precision([true, true, false], 2), 1.0);
        assert!((average_precision([true, false, true], 2) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision([false, false], 0), 0.0);
    }

    #[test]
    fn one_hot_embedder_is_perfect() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 10) as u8).collect();
        let onehot = |ls: &[u8]| {
            let mut d = vec![0.0; ls.len() * 10];
            for (i, &l) in ls.iter().enumerate() {
                d[i * 10 + l as usize] = 1.0;
            }
            set(10, d, ls.to_vec())
        };
        let idx = Index::build(onehot(&labels)).unwrap();
        let m = evaluate(&idx, &onehot(&labels[..10]), &SearchConfig::default()).unwrap();
        assert_eq!(m.top(1), Some(1.0));
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn random_embeddings_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut random = |n: usize| {
            let data = (0..n * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            set(16, data, (0..n).map(|i| (i % 10) as u8).collect())
        };
        let idx = Index::build(random(2000)).unwrap();
        let m = evaluate(&idx, &random(2000), &SearchConfig::default()).unwrap();
        assert!((m.top(1).unwrap() - 0.1).abs() < 0.03, "{m:?}");
    }

    #[test]
    fn emb_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let s = set(2, vec![1.0, -2.0, 0.5, 0.25], vec![3, 7]);
        s.write(&path).unwrap();
        assert!(EmbeddingSet::label_path(&path).exists());
        assert_eq!(EmbeddingSet::read(&path).unwrap(), s);
    }

    #[test]
    fn non_finite_rows_rejected() {
        assert!(matches!(
            EmbeddingSet::new(2, vec![0.0, 1.0, f32::NAN, 0.0], vec![0, 0], "x"),
            Err(RetrievalError::NonFinite(1))
        ));
    }

    fn brute_force(corpus: &EmbeddingSet, q: &[f32]) -> Vec<u32> {
        let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        let qn = norm(q);
        let mut scored: Vec<(f64, u32)> = (0..corpus.len())
            .map(|i| {
                let r = corpus.row(i);
                let d = norm(r) * qn;
                let dot: f64 = r.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
                (if d == 0.0 { 0.0 } else { dot / d }, i as u32)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, i)| i).collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force_on_integer_embeddings(
            rows in proptest::collection::vec(proptest::collection::vec(-3i8..4, 4), 1..60),
            q in proptest::collection::vec(-3i8..4, 4),
        ) {
            // small integer coordinates give well separated distinct cosines or exact ties
            let data: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
            let corpus = set(4, data, vec![0; rows.len()]);
            let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
            let idx = Index::build(corpus.clone()).unwrap();
            let got = idx.query(&qf, rows.len()).unwrap();
            let want = brute_force(&corpus, &qf);
            let mut want_scores = vec![0.0f32; rows.len()];
            for (i, s) in got.neighbors.iter().zip(&got.scores) { want_scores[*i as usize] = *s; }
            // equal up to reordering among float-identical cosines
            for (a, b) in got.neighbors.iter().zip(&want) {
                prop_assert!((want_scores[*a as usize] - want_scores[*b as usize]).abs() < 1e-6);
            }
            prop_assert!(got.scores.windows(2).all(|w| w[0] >= w[1]));
            let scaled: Vec<f32> = qf.iter().map(|v| v * 3.5).collect();
            prop_assert_eq!(idx.query(&scaled, rows.len()).unwrap().neighbors, got.neighbors);
        }

        #[test]
        fn map_matches_brute_force(labels in proptest::collection::vec(0u8..3, 1..20), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..labels.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let corpus = set(3, data, labels.clone());
            let queries = set(3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect(), vec![0, 1, 2, 0, 1]);
            let idx = Index::build(corpus.clone()).unwrap();
            let m = evaluate(&idx, &queries, &SearchConfig { ks: vec![1, 2, 3], ..Default::default() }).unwrap();
            let full: Vec<RankedResult> = (0..queries.len())
                .map(|i| idx.query(queries.row(i), labels.len()).unwrap())
                .collect();
            let want = mean_average_precision(&full, &labels, &queries.labels);
            prop_assert!((m.map - want).abs() < 1e-12);
            // oracle AP from the definition
            let mut ap_sum = 0.0;
            for (r, &ql) in full.iter().zip(&queries.labels) {
                let rel: Vec<bool> = r.neighbors.iter().map(|&n| labels[n as usize] == ql).collect();
                let total = rel.iter().filter(|&&x| x).count();
                let mut s = 0.0;
                for (i, &x) in rel.iter().enumerate() {
                    if x {
                        s += rel[..=i].iter().filter(|&&y| y).count() as f64 / (i + 1) as f64;
                    }
                }
                ap_sum += if total == 0 { 0.0 } else { s / total as f64 };
            }
            prop_assert!((m.map - ap_sum / full.len() as f64).abs() < 1e-12);
            let tops: Vec<f64> = m.top_k.iter().map(|t| t.accuracy).collect();
            prop_assert!(tops.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((tops[0] - topk_accuracy(&full, &labels, &queries.labels, 1)).abs() < 1e-12);
        }
    }
}
