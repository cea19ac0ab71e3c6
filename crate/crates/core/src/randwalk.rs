//! Random-walk tag relevance: the stationary distribution of a per-image
//! tag graph, kernel-density visual relevance, random walk with restarts,
//! and the coupled formulation in which image typicality weights and tag
//! relevances are re-estimated against each other.

use rayon::prelude::*;

use crate::corpus::{Corpus, TagDocument, TagSimilarityMatrix, VisualKernel};
use crate::error::{Error, LastIterate, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const WALK_TOL: f64 = 1e-10;
pub const WALK_MAX_ITERS: usize = 10_000;
pub const JOINT_TOL: f64 = 1e-8;
pub const JOINT_MAX_ITERS: usize = 200;

const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("transition matrix must be nonempty"));
        }
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid("transition entries must be finite and non-negative"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("transition row sums to {s}")));
            }
            data.extend_from_slice(row);
        }
        Ok(TransitionMatrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `T^T p`
    pub fn transpose_apply(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(self.row(i)) {
                *o += pi * t;
            }
        }
    }
}

/// Relevance of a set of tags for one image, in the order of `tags`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagScores {
    pub tags: Vec<usize>,
    pub scores: Vec<f64>,
}

impl TagScores {
    pub fn new(tags: Vec<usize>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(tags.len(), scores.len());
        TagScores { tags, scores }
    }

    /// Scores over the whole vocabulary, tag `v` at position `v`.
    pub fn dense(scores: Vec<f64>) -> Self {
        TagScores {
            tags: (0..scores.len()).collect(),
            scores,
        }
    }

    pub fn get(&self, tag: usize) -> Option<f64> {
        self.tags.iter().position(|&t| t == tag).map(|p| self.scores[p])
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Per-document relevance scores, aligned with the corpus documents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceScores {
    pub docs: Vec<TagScores>,
}

impl RelevanceScores {
    pub fn max_l1_change(&self, other: &RelevanceScores) -> f64 {
        self.docs
            .iter()
            .zip(&other.docs)
            .map(|(a, b)| l1(&a.scores, &b.scores))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalize_or_uniform(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Transition matrix over the tags of one document. Self-similarity is
/// removed before row normalization; rows similar to nothing become uniform
/// over the other tags.
pub fn tag_transition_matrix(doc: &TagDocument, sim: &TagSimilarityMatrix) -> Result<TransitionMatrix> {
    let n = doc.tags.len();
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    if n == 1 {
        return Ok(TransitionMatrix { n, data: vec![1.0] });
    }
    let mut data = vec![0.0; n * n];
    for (i, &a) in doc.tags.iter().enumerate() {
        let row = &mut data[i * n..(i + 1) * n];
        for (j, &b) in doc.tags.iter().enumerate() {
            if i != j {
                row[j] = sim.get(a, b);
            }
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        } else {
            let u = 1.0 / (n - 1) as f64;
            for (j, x) in row.iter_mut().enumerate() {
                *x = if j == i { 0.0 } else { u };
            }
        }
    }
    Ok(TransitionMatrix { n, data })
}

/// Stationary distribution of `t` by power iteration from the uniform vector.
pub fn stationary_distribution(t: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = t.size();
    let mut p = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..WALK_MAX_ITERS {
        t.transpose_apply(&p, &mut next);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        change = l1(&p, &next);
        std::mem::swap(&mut p, &mut next);
        if change < WALK_TOL {
            return Ok(p);
        }
    }
    Err(Error::NotConverged {
        what: "stationary distribution",
        iterations: WALK_MAX_ITERS,
        residual: change,
        last: LastIterate::Vector(p),
    })
}

/// Fixed point of `p = lambda T^T p + (1 - lambda) restart`.
pub fn rwr(t: &TransitionMatrix, restart: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = t.size();
    if restart.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: restart.len() });
    }
    if restart.iter().any(|&x| !(x >= 0.0)) || (restart.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("restart vector must be a probability distribution"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(restart.to_vec());
    }
    if lambda == 1.0 {
        return stationary_distribution(t);
    }
    let mut p = restart.to_vec();
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..WALK_MAX_ITERS {
        t.transpose_apply(&p, &mut next);
        for (x, &r) in next.iter_mut().zip(restart) {
            *x = lambda * *x + (1.0 - lambda) * r;
        }
        change = l1(&p, &next);
        std::mem::swap(&mut p, &mut next);
        if change < WALK_TOL {
            return Ok(p);
        }
    }
    Err(Error::NotConverged {
        what: "random walk with restart",
        iterations: WALK_MAX_ITERS,
        residual: change,
        last: LastIterate::Vector(p),
    })
}

/// `|p - lambda T^T p - (1 - lambda) restart|_1`
pub fn rwr_residual(t: &TransitionMatrix, restart: &[f64], lambda: f64, p: &[f64]) -> f64 {
    let mut tp = vec![0.0; p.len()];
    t.transpose_apply(p, &mut tp);
    p.iter()
        .zip(&tp)
        .zip(restart)
        .map(|((&x, &y), &r)| (x - lambda * y - (1.0 - lambda) * r).abs())
        .sum()
}

/// Weighted kernel votes for each image in `images` from the other members,
/// `score(I) = sum_{I' != I} w(I') K(I, I')`. With weights summing to one
/// this is the kernel density of the tag at each of its images.
pub fn kernel_votes(kernel: &VisualKernel<'_>, images: &[usize], weights: &[f64]) -> Vec<f64> {
    debug_assert_eq!(images.len(), weights.len());
    let mut out = vec![0.0; images.len()];
    match kernel {
        VisualKernel::Graph(graph) => {
            for (k, &img) in images.iter().enumerate() {
                // both lists are sorted by image index
                let mut j = 0;
                for &(nb, s) in graph.neighbors(img) {
                    while j < images.len() && images[j] < nb {
                        j += 1;
                    }
                    if j < images.len() && images[j] == nb {
                        out[k] += weights[j] * s;
                    }
                }
            }
        }
        VisualKernel::Features { .. } => {
            for (k, &img) in images.iter().enumerate() {
                out[k] = images
                    .iter()
                    .zip(weights)
                    .filter(|(&other, _)| other != img)
                    .map(|(&other, &w)| w * kernel.value(img, other))
                    .sum();
            }
        }
    }
    out
}

/// Kernel-density relevance of `tag` for every image carrying it, as
/// `(document index, score)` pairs summing to one.
pub fn visual_tag_relevance(corpus: &Corpus, tag: usize) -> Result<Vec<(usize, f64)>> {
    if tag >= corpus.vocab_size() {
        return Err(Error::UnknownTag(format!("#{tag}")));
    }
    let kernel = corpus.visual_kernel()?;
    let images = corpus.images_with_tag(tag);
    if images.is_empty() {
        return Err(Error::invalid(format!(
            "no image carries tag `{}`",
            corpus.vocabulary.word_of(tag)
        )));
    }
    let weights = vec![1.0 / images.len() as f64; images.len()];
    let mut scores = kernel_votes(&kernel, &images, &weights);
    normalize_or_uniform(&mut scores);
    Ok(images.into_iter().zip(scores).collect())
}

/// Settings shared by the random-walk refiners.
#[derive(Debug, Clone, Copy)]
pub struct WalkConfig {
    pub lambda: f64,
    pub joint_tol: f64,
    pub joint_max_iters: usize,
    /// Keep the image typicality weights uniform in the coupled refiner.
    pub freeze_weights: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            lambda: DEFAULT_LAMBDA,
            joint_tol: JOINT_TOL,
            joint_max_iters: JOINT_MAX_ITERS,
            freeze_weights: false,
        }
    }
}

fn transition_matrices(corpus: &Corpus, sim: &TagSimilarityMatrix) -> Result<Vec<Option<TransitionMatrix>>> {
    corpus
        .documents
        .iter()
        .map(|d| {
            if d.is_empty() {
                Ok(None)
            } else {
                tag_transition_matrix(d, sim).map(Some)
            }
        })
        .collect()
}

/// Random walk with uniform restart over each document's tag graph.
pub fn tag_walk_refine(corpus: &Corpus, sim: &TagSimilarityMatrix, lambda: f64) -> Result<RelevanceScores> {
    let docs = corpus
        .documents
        .par_iter()
        .map(|d| {
            if d.is_empty() {
                return Ok(TagScores::default());
            }
            let t = tag_transition_matrix(d, sim)?;
            let restart = vec![1.0 / d.len() as f64; d.len()];
            Ok(TagScores::new(d.tags.clone(), rwr(&t, &restart, lambda)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceScores { docs })
}

/// Image sets per tag plus, for each document tag, the slot of the document
/// inside that tag's image list.
struct TagIndex {
    postings: Vec<Vec<usize>>,
    slots: Vec<Vec<usize>>,
}

impl TagIndex {
    fn new(corpus: &Corpus) -> Self {
        let postings = corpus.postings();
        let slots = corpus
            .documents
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.tags
                    .iter()
                    .map(|&t| postings[t].binary_search(&d).expect("posting contains document"))
                    .collect()
            })
            .collect();
        TagIndex { postings, slots }
    }

    fn uniform_weights(&self) -> Vec<Vec<f64>> {
        self.postings
            .iter()
            .map(|p| vec![1.0 / p.len().max(1) as f64; p.len()])
            .collect()
    }
}

/// Per-document restart vectors: each tag's kernel density at this image,
/// normalized over the document's tags.
fn restart_vectors(corpus: &Corpus, index: &TagIndex, visual: &[Vec<f64>]) -> Vec<Vec<f64>> {
    corpus
        .documents
        .iter()
        .zip(&index.slots)
        .map(|(doc, slots)| {
            let mut r: Vec<f64> = doc
                .tags
                .iter()
                .zip(slots)
                .map(|(&t, &slot)| visual[t][slot])
                .collect();
            if !r.is_empty() {
                normalize_or_uniform(&mut r);
            }
            r
        })
        .collect()
}

fn walk_pass(
    corpus: &Corpus,
    kernel: &VisualKernel<'_>,
    index: &TagIndex,
    matrices: &[Option<TransitionMatrix>],
    weights: &[Vec<f64>],
    lambda: f64,
) -> Result<RelevanceScores> {
    let visual: Vec<Vec<f64>> = index
        .postings
        .par_iter()
        .zip(weights.par_iter())
        .map(|(images, w)| {
            if images.is_empty() {
                Vec::new()
            } else {
                kernel_votes(kernel, images, w)
            }
        })
        .collect();
    let restarts = restart_vectors(corpus, index, &visual);
    let docs = corpus
        .documents
        .par_iter()
        .zip(matrices.par_iter())
        .zip(restarts.par_iter())
        .map(|((doc, t), restart)| match t {
            None => Ok(TagScores::default()),
            Some(t) => Ok(TagScores::new(doc.tags.clone(), rwr(t, restart, lambda)?)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceScores { docs })
}

/// Visual relevance alone, renormalized over each document's tags.
pub fn visual_refine(corpus: &Corpus) -> Result<RelevanceScores> {
    let kernel = corpus.visual_kernel()?;
    let index = TagIndex::new(corpus);
    let weights = index.uniform_weights();
    let visual: Vec<Vec<f64>> = index
        .postings
        .iter()
        .zip(&weights)
        .map(|(images, w)| if images.is_empty() { Vec::new() } else { kernel_votes(&kernel, images, w) })
        .collect();
    let restarts = restart_vectors(corpus, &index, &visual);
    Ok(RelevanceScores {
        docs: corpus
            .documents
            .iter()
            .zip(restarts)
            .map(|(d, r)| TagScores::new(d.tags.clone(), r))
            .collect(),
    })
}

/// Visual relevance as restart distribution of a walk over the tag graph.
pub fn two_step_refine(corpus: &Corpus, sim: &TagSimilarityMatrix, lambda: f64) -> Result<RelevanceScores> {
    let kernel = corpus.visual_kernel()?;
    let index = TagIndex::new(corpus);
    let matrices = transition_matrices(corpus, sim)?;
    walk_pass(corpus, &kernel, &index, &matrices, &index.uniform_weights(), lambda)
}

/// Coupled refinement. Each sweep recomputes the visual scores of every tag
/// with the images weighted by their current relevance for that tag, then
/// reruns the per-document walks with the new restart vectors. Sweeps are
/// synchronous, so the result does not depend on document order.
///
/// The weighted transition `T^w_u ∝ diag(p_u) P` is read as a walk over the
/// images carrying `u`; reading `P` as the tag-tag matrix instead would
/// collapse the coupling into the per-document walk and is not offered.
pub fn joint_refinement(corpus: &Corpus, sim: &TagSimilarityMatrix, config: &WalkConfig) -> Result<RelevanceScores> {
    let kernel = corpus.visual_kernel()?;
    let index = TagIndex::new(corpus);
    let matrices = transition_matrices(corpus, sim)?;
    let mut weights = index.uniform_weights();
    let mut current = walk_pass(corpus, &kernel, &index, &matrices, &weights, config.lambda)?;
    let mut change = f64::INFINITY;
    for _ in 1..config.joint_max_iters {
        if !config.freeze_weights {
            for (u, images) in index.postings.iter().enumerate() {
                for (slot, &img) in images.iter().enumerate() {
                    weights[u][slot] = current.docs[img].get(u).unwrap_or(0.0);
                }
                normalize_or_uniform(&mut weights[u]);
            }
        }
        let next = walk_pass(corpus, &kernel, &index, &matrices, &weights, config.lambda)?;
        change = next.max_l1_change(&current);
        current = next;
        if change < config.joint_tol {
            return Ok(current);
        }
    }
    Err(Error::NotConverged {
        what: "joint refinement",
        iterations: config.joint_max_iters,
        residual: change,
        last: LastIterate::Scores(Box::new(current)),
    })
}
