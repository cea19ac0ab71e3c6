//! Corpus data model: vocabulary, tag documents, visual features, the image
//! similarity graph and corpus-derived tag similarity.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use crate::error::{Error, Result};
use crate::rng;

/// Edge threshold of the image similarity graph.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.2;

/// Pairwise-distance mean is scaled by this factor to give the kernel bandwidth.
pub const BANDWIDTH_SCALE: f64 = 9.0;

/// Above this many images the bandwidth is estimated from a uniform subsample.
pub const BANDWIDTH_SUBSAMPLE: usize = 2000;

const BANDWIDTH_SEED: u64 = 0x5EED_BA4D;

/// Ordered tag vocabulary. Indices are zero-based internally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::invalid("empty tag string"));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word_of(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }
}

/// The tags of one image, in the order the user supplied them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagDocument {
    pub image_id: String,
    pub tags: Vec<usize>,
}

impl TagDocument {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn contains(&self, tag: usize) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Sparse symmetric image similarity graph. Edges are stored once with
/// `a < b`; the adjacency lists hold both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    threshold: f64,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    /// Builds the graph over `n` nodes, keeping only pairs whose similarity
    /// is strictly above `threshold`. Duplicate pairs must agree.
    pub fn from_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize, f64)>,
        threshold: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [0, 1)")));
        }
        let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
        for (a, b, s) in pairs {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::invalid(format!("self edge on node {a}")));
            }
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::invalid(format!("similarity {s} outside (0, 1]")));
            }
            let key = (a.min(b), a.max(b));
            if let Some(&prev) = seen.get(&key) {
                if prev != s {
                    return Err(Error::invalid(format!(
                        "conflicting similarities {prev} and {s} for pair ({a}, {b})"
                    )));
                }
            }
            seen.insert(key, s);
        }
        let mut edges: Vec<Edge> = seen
            .into_iter()
            .filter(|&(_, s)| s > threshold)
            .map(|((a, b), s)| Edge { a, b, similarity: s })
            .collect();
        edges.sort_by_key(|x| (x.a, x.b));
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.a].push((e.b, e.similarity));
            adjacency[e.b].push((e.a, e.similarity));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(SimilarityGraph {
            threshold,
            edges,
            adjacency,
        })
    }

    pub fn empty(n: usize, threshold: f64) -> Self {
        SimilarityGraph {
            threshold,
            edges: Vec::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn similarity(&self, a: usize, b: usize) -> Option<f64> {
        let list = &self.adjacency[a];
        list.binary_search_by_key(&b, |&(j, _)| j)
            .ok()
            .map(|pos| list[pos].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub documents: Vec<TagDocument>,
    /// Feature vectors aligned with `documents`.
    pub features: Option<Vec<Vec<f64>>>,
    pub graph: Option<SimilarityGraph>,
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary, documents: Vec<TagDocument>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = vocabulary.len();
        let mut ids = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !ids.insert(doc.image_id.as_str()) {
                return Err(Error::invalid(format!("duplicate image id `{}`", doc.image_id)));
            }
            let mut tags = HashSet::with_capacity(doc.tags.len());
            for &t in &doc.tags {
                if t >= v {
                    return Err(Error::invalid(format!("tag index {t} out of range in `{}`", doc.image_id)));
                }
                if !tags.insert(t) {
                    return Err(Error::invalid(format!("duplicate tag in `{}`", doc.image_id)));
                }
            }
        }
        Ok(Corpus {
            vocabulary,
            documents,
            features: None,
            graph: None,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn document_index(&self, image_id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.image_id == image_id)
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.image_id.as_str(), i))
            .collect()
    }

    /// Attaches features aligned with the documents.
    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.documents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.documents.len(),
                found: features.len(),
            });
        }
        let dim = features[0].len();
        for f in &features {
            if f.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: f.len() });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite feature value"));
            }
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_graph(mut self, graph: SimilarityGraph) -> Result<Self> {
        if graph.node_count() != self.documents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.documents.len(),
                found: graph.node_count(),
            });
        }
        self.graph = Some(graph);
        Ok(self)
    }

    /// Images containing `tag`, in document order.
    pub fn images_with_tag(&self, tag: usize) -> Vec<usize> {
        self.documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.contains(tag))
            .map(|(i, _)| i)
            .collect()
    }

    /// Image lists per tag, in document order.
    pub fn postings(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vocab_size()];
        for (d, doc) in self.documents.iter().enumerate() {
            for &t in &doc.tags {
                out[t].push(d);
            }
        }
        out
    }

    /// The image kernel used for visual relevance: the Gaussian kernel over
    /// features when present, otherwise the stored similarity graph.
    pub fn visual_kernel(&self) -> Result<VisualKernel<'_>> {
        if let Some(features) = &self.features {
            let gamma = estimate_bandwidth(features)?;
            Ok(VisualKernel::Features { features, gamma })
        } else if let Some(graph) = &self.graph {
            Ok(VisualKernel::Graph(graph))
        } else {
            Err(Error::MissingFeatures(
                "visual relevance needs features or a similarity graph".into(),
            ))
        }
    }
}

/// Image-image kernel `K(I, I')`.
#[derive(Debug, Clone, Copy)]
pub enum VisualKernel<'a> {
    Features { features: &'a [Vec<f64>], gamma: f64 },
    /// Pairs without an edge have kernel value zero.
    Graph(&'a SimilarityGraph),
}

impl VisualKernel<'_> {
    pub fn value(&self, a: usize, b: usize) -> f64 {
        match self {
            VisualKernel::Features { features, gamma } => {
                gaussian_kernel(squared_distance(&features[a], &features[b]), *gamma)
            }
            VisualKernel::Graph(g) => {
                if a == b {
                    1.0
                } else {
                    g.similarity(a, b).unwrap_or(0.0)
                }
            }
        }
    }
}

/// Builds the vocabulary and documents from raw `(image_id, tags)` records.
///
/// Indices follow first appearance across the corpus. Repeated tags inside
/// one document are dropped, keeping the first occurrence, so the original
/// order survives as the baseline ranking.
pub fn build_vocabulary<S, T>(raw: &[(S, Vec<T>)]) -> Result<Corpus>
where
    S: AsRef<str>,
    T: AsRef<str>,
{
    if raw.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut words: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut documents = Vec::with_capacity(raw.len());
    for (id, tags) in raw {
        let mut doc_tags = Vec::with_capacity(tags.len());
        for tag in tags {
            let tag = tag.as_ref();
            if tag.is_empty() {
                return Err(Error::invalid(format!("empty tag in `{}`", id.as_ref())));
            }
            let next = index.len();
            let t = *index.entry(tag.to_string()).or_insert_with(|| {
                words.push(tag.to_string());
                next
            });
            if !doc_tags.contains(&t) {
                doc_tags.push(t);
            }
        }
        documents.push(TagDocument {
            image_id: id.as_ref().to_string(),
            tags: doc_tags,
        });
    }
    if words.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut vocabulary = Vocabulary {
        words,
        index: HashMap::new(),
    };
    vocabulary.rebuild_index();
    Corpus::new(vocabulary, documents)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian_kernel(dist2: f64, gamma: f64) -> f64 {
    (-dist2 / (2.0 * gamma)).exp()
}

/// `exp(-|f_i - f_j|^2 / (2 gamma))`.
pub fn visual_similarity(fi: &[f64], fj: &[f64], gamma: f64) -> Result<f64> {
    if fi.len() != fj.len() {
        return Err(Error::DimensionMismatch {
            expected: fi.len(),
            found: fj.len(),
        });
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {gamma}")));
    }
    Ok(gaussian_kernel(squared_distance(fi, fj), gamma))
}

/// Kernel bandwidth: nine times the mean squared distance over unordered pairs.
pub fn estimate_bandwidth(features: &[Vec<f64>]) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::DegenerateFeatures);
    }
    let chosen: Vec<&Vec<f64>> = if features.len() > BANDWIDTH_SUBSAMPLE {
        let mut r = rng::stream(BANDWIDTH_SEED, &[features.len() as u64]);
        let mut idx = sample(&mut r, features.len(), BANDWIDTH_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &features[i]).collect()
    } else {
        features.iter().collect()
    };
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..chosen.len() {
        for j in (i + 1)..chosen.len() {
            if chosen[i].len() != chosen[j].len() {
                return Err(Error::DimensionMismatch {
                    expected: chosen[i].len(),
                    found: chosen[j].len(),
                });
            }
            sum += squared_distance(chosen[i], chosen[j]);
            pairs += 1;
        }
    }
    let mean = sum / pairs as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::DegenerateFeatures);
    }
    Ok(BANDWIDTH_SCALE * mean)
}

/// Graph of all image pairs whose visual similarity exceeds `threshold`.
pub fn build_similarity_graph(corpus: &Corpus, threshold: f64) -> Result<SimilarityGraph> {
    let features = corpus
        .features
        .as_ref()
        .ok_or_else(|| Error::MissingFeatures("similarity graph needs feature vectors".into()))?;
    let gamma = estimate_bandwidth(features)?;
    let n = features.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = visual_similarity(&features[i], &features[j], gamma)?;
            if s > threshold {
                pairs.push((i, j, s));
            }
        }
    }
    SimilarityGraph::from_pairs(n, pairs, threshold)
}

/// Symmetric tag-tag similarity with unit diagonal. Only nonzero
/// off-diagonal entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSimilarityMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TagSimilarityMatrix {
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            if dense[i].len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: dense[i].len() });
            }
            for (j, &x) in dense[i].iter().enumerate() {
                if !(0.0..=1.0).contains(&x) || (x - dense[j][i]).abs() > 1e-12 {
                    return Err(Error::invalid("tag similarity must be symmetric with entries in [0, 1]"));
                }
                if i != j && x > 0.0 {
                    rows[i].push((j, x));
                }
            }
        }
        Ok(TagSimilarityMatrix { rows })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return 1.0;
        }
        let row = &self.rows[u];
        row.binary_search_by_key(&v, |&(j, _)| j)
            .map(|p| row[p].1)
            .unwrap_or(0.0)
    }
}

/// Jaccard overlap of the image sets of two tags.
pub fn cooccurrence_similarity(corpus: &Corpus) -> TagSimilarityMatrix {
    let postings = corpus.postings();
    let v = postings.len();
    let mut inter: Vec<HashMap<usize, usize>> = vec![HashMap::new(); v];
    for doc in &corpus.documents {
        for (i, &a) in doc.tags.iter().enumerate() {
            for &b in &doc.tags[i + 1..] {
                *inter[a].entry(b).or_insert(0) += 1;
                *inter[b].entry(a).or_insert(0) += 1;
            }
        }
    }
    let rows = inter
        .into_iter()
        .enumerate()
        .map(|(u, counts)| {
            let mut row: Vec<(usize, f64)> = counts
                .into_iter()
                .map(|(w, both)| {
                    let union = postings[u].len() + postings[w].len() - both;
                    (w, both as f64 / union as f64)
                })
                .collect();
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect();
    TagSimilarityMatrix { rows }
}
