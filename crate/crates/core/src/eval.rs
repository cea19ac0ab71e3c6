//! Ranking and retrieval metrics: reranking, NDCG, top-k retagging,
//! per-tag F-measure, and the position histogram of the best tag.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Corpus, TagDocument};
use crate::error::{Error, Result};
use crate::randwalk::TagScores;

pub const DEFAULT_TOP_K: usize = 5;
pub const MAX_GRADE: u32 = 5;

/// Human-style grades in `1..=5` per document, keyed by tag index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceLabels {
    pub docs: Vec<BTreeMap<usize, u32>>,
}

impl RelevanceLabels {
    /// Validates that grades are in range and label only tags the document has.
    pub fn new(corpus: &Corpus, docs: Vec<BTreeMap<usize, u32>>) -> Result<Self> {
        if docs.len() != corpus.len() {
            return Err(Error::DimensionMismatch {
                expected: corpus.len(),
                found: docs.len(),
            });
        }
        for (doc, grades) in corpus.documents.iter().zip(&docs) {
            for (&tag, &grade) in grades {
                if !(1..=MAX_GRADE).contains(&grade) {
                    return Err(Error::invalid(format!("grade {grade} for {} outside 1..=5", doc.image_id)));
                }
                if !doc.contains(tag) {
                    return Err(Error::invalid(format!(
                        "label for {} names tag {} it does not carry",
                        doc.image_id,
                        corpus.vocabulary.word_of(tag)
                    )));
                }
            }
        }
        Ok(RelevanceLabels { docs })
    }

    /// Grades of `ranking` in order, zero for unlabeled tags.
    pub fn grades(&self, doc: usize, ranking: &[usize]) -> Vec<u32> {
        ranking.iter().map(|t| self.docs[doc].get(t).copied().unwrap_or(0)).collect()
    }
}

/// The images truly relevant to each evaluation tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSets {
    pub sets: BTreeMap<usize, BTreeSet<usize>>,
}

impl GroundTruthSets {
    pub fn from_names<S: AsRef<str>>(corpus: &Corpus, entries: &[(S, Vec<S>)]) -> Result<Self> {
        let ids = corpus.id_index();
        let mut sets = BTreeMap::new();
        for (tag, images) in entries {
            let t = corpus
                .vocabulary
                .index_of(tag.as_ref())
                .ok_or_else(|| Error::UnknownTag(tag.as_ref().to_string()))?;
            let docs = images
                .iter()
                .map(|id| ids.get(id.as_ref()).copied().ok_or_else(|| Error::UnknownImage(id.as_ref().to_string())))
                .collect::<Result<BTreeSet<_>>>()?;
            sets.insert(t, docs);
        }
        Ok(GroundTruthSets { sets })
    }
}

/// Tags of `doc` by descending score; equal scores keep document order.
pub fn rerank(doc: &TagDocument, scores: &TagScores) -> Result<Vec<usize>> {
    let mut keyed = doc
        .tags
        .iter()
        .map(|&t| {
            scores
                .get(t)
                .map(|s| (t, s))
                .ok_or_else(|| Error::invalid(format!("no score for tag {t} of {}", doc.image_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(keyed.into_iter().map(|(t, _)| t).collect())
}

fn dcg(grades: &[u32], n: usize) -> f64 {
    grades
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain of the first `n` positions.
/// Sequences without a positive grade score 0.
pub fn ndcg_at_n(ranked_grades: &[u32], n: usize) -> Result<f64> {
    if n == 0 || n > ranked_grades.len() {
        return Err(Error::invalid(format!(
            "NDCG depth {n} outside 1..={}",
            ranked_grades.len()
        )));
    }
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(&ideal, n);
    if best == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(ranked_grades, n) / best)
}

/// NDCG depth: a fixed cutoff, or the full length of each document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    At(usize),
    Full,
}

/// Mean NDCG over documents with at least one labeled tag; the depth is
/// capped at each document's length.
pub fn mean_ndcg(labels: &RelevanceLabels, rankings: &[Vec<usize>], depth: Depth) -> Result<f64> {
    if rankings.len() != labels.docs.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.docs.len(),
            found: rankings.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (d, ranking) in rankings.iter().enumerate() {
        let grades = labels.grades(d, ranking);
        if grades.iter().all(|&g| g == 0) {
            continue;
        }
        let n = match depth {
            Depth::At(n) => n.min(ranking.len()),
            Depth::Full => ranking.len(),
        };
        total += ndcg_at_n(&grades, n)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no document has a labeled tag"));
    }
    Ok(total / count as f64)
}

/// The `k` highest-scoring vocabulary indices, ties to the lower index.
pub fn retag(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("top-k {k} outside 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FMeasureReport {
    /// `(tag, precision, recall, f)` in ascending tag order.
    pub per_tag: Vec<(usize, f64, f64, f64)>,
    pub mean: f64,
}

/// Retrieves, for each evaluation tag, every image whose tag set contains
/// it, and scores the retrieval against the ground truth.
pub fn retrieval_f_measure(tag_sets: &[Vec<usize>], truth: &GroundTruthSets) -> Result<FMeasureReport> {
    if truth.sets.is_empty() {
        return Err(Error::invalid("no evaluation tags"));
    }
    let mut per_tag = Vec::with_capacity(truth.sets.len());
    for (&tag, relevant) in &truth.sets {
        if relevant.is_empty() {
            return Err(Error::invalid(format!("empty ground truth for tag {tag}")));
        }
        let retrieved: BTreeSet<usize> = tag_sets
            .iter()
            .enumerate()
            .filter(|(_, set)| set.contains(&tag))
            .map(|(d, _)| d)
            .collect();
        let hits = retrieved.intersection(relevant).count() as f64;
        let (p, r) = if retrieved.is_empty() {
            (0.0, 0.0)
        } else {
            (hits / retrieved.len() as f64, hits / relevant.len() as f64)
        };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        per_tag.push((tag, p, r, f));
    }
    let mean = per_tag.iter().map(|e| e.3).sum::<f64>() / per_tag.len() as f64;
    Ok(FMeasureReport { per_tag, mean })
}

/// Fraction of labeled documents whose highest-graded tag sits at each
/// 1-based position of its ranking. Ties go to the earliest position.
pub fn position_histogram(labels: &RelevanceLabels, rankings: &[Vec<usize>]) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (d, ranking) in rankings.iter().enumerate().take(labels.docs.len()) {
        let grades = labels.grades(d, ranking);
        let Some(&best) = grades.iter().max() else { continue };
        if best == 0 {
            continue;
        }
        let pos = grades.iter().position(|&g| g == best).expect("max is present") + 1;
        *counts.entry(pos).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(p, c)| (p, c as f64 / total as f64))
        .collect()
}
