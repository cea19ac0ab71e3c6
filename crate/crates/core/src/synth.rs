//! Synthetic corpora drawn from the rLDA generative story, with the planted
//! mixtures, assignments and graded relevance kept as ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SimilarityGraph, TagDocument, Vocabulary, DEFAULT_EDGE_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{retag, GroundTruthSets, RelevanceLabels, DEFAULT_TOP_K};
use crate::rlda::SIGMA_FLOOR;
use crate::rng;

const STREAM_DOCS: u64 = 0x5D0C;
const STREAM_PAIRS: u64 = 0x5EDE;
const STREAM_TOPICS: u64 = 0x70C5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub topics: usize,
    pub vocab: usize,
    pub docs: usize,
    /// Inclusive range of raw token counts per document, before dedupe.
    pub doc_length: (usize, usize),
    pub alpha_true: Vec<f64>,
    pub beta_true: Vec<Vec<f64>>,
    pub mu_true: [f64; 2],
    pub sigma_true: [f64; 2],
    /// Probability that a given unordered image pair is offered a similarity.
    pub edge_rate: f64,
    /// Width of the uniform perturbation added to every similarity.
    pub noise: f64,
    /// Shuffle each document's tags after dedupe so the stored order carries
    /// no relevance signal.
    pub shuffle_tags: bool,
    pub seed: u64,
}

/// Topic rows drawn from a symmetric `Dirichlet(concentration)`.
pub fn random_topics(topics: usize, vocab: usize, concentration: f64, seed: u64) -> Vec<Vec<f64>> {
    let conc = vec![concentration; vocab];
    (0..topics)
        .map(|i| {
            let mut row = vec![0.0; vocab];
            rng::sample_dirichlet(&conc, &mut rng::stream(seed, &[STREAM_TOPICS, i as u64]), &mut row);
            row
        })
        .collect()
}

impl SynthSpec {
    /// Symmetric `alpha = 0.5`, topics from `Dirichlet(0.1)`, well separated
    /// similarity components, 5 to 12 raw tokens per image.
    pub fn standard(topics: usize, vocab: usize, docs: usize, seed: u64) -> Self {
        SynthSpec {
            topics,
            vocab,
            docs,
            doc_length: (5, 12),
            alpha_true: vec![0.5; topics],
            beta_true: random_topics(topics, vocab, 0.1, seed),
            mu_true: [0.8, 0.2],
            sigma_true: [0.1, 0.1],
            edge_rate: 0.05,
            noise: 0.05,
            shuffle_tags: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.topics == 0 || self.vocab == 0 || self.docs == 0 {
            return bad("topics, vocab and docs must be positive");
        }
        let (lo, hi) = self.doc_length;
        if lo == 0 || lo > hi {
            return bad("doc_length must be a nonempty positive range");
        }
        if hi > self.vocab {
            return bad("doc_length exceeds the vocabulary size");
        }
        if self.alpha_true.len() != self.topics || self.alpha_true.iter().any(|&a| !(a > 0.0)) {
            return bad("alpha_true must have one positive entry per topic");
        }
        if self.beta_true.len() != self.topics
            || self.beta_true.iter().any(|r| {
                r.len() != self.vocab || r.iter().any(|&b| !(b >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
            })
        {
            return bad("beta_true must be topics x vocab and row-stochastic");
        }
        if !(self.mu_true[0] > self.mu_true[1]) {
            return bad("mu_true must put the same-content mean first and higher");
        }
        if self.sigma_true.iter().any(|&s| !(s > 0.0)) {
            return bad("sigma_true must be positive");
        }
        if !(0.0..=1.0).contains(&self.edge_rate) || !(self.noise >= 0.0) {
            return bad("edge_rate must lie in [0, 1] and noise must be nonnegative");
        }
        Ok(())
    }

    /// Full-vocabulary relevance `sum_i beta_true[i][v] * theta[i]`.
    pub fn ideal_scores(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab];
        for (row, &t) in self.beta_true.iter().zip(theta) {
            for (o, &b) in out.iter_mut().zip(row) {
                *o += t * b;
            }
        }
        out
    }
}

/// Tag names used by generated corpora.
pub fn tag_name(v: usize) -> String {
    format!("t{v:03}")
}

pub fn image_name(d: usize) -> String {
    format!("img{d:05}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub theta: Vec<Vec<f64>>,
    /// Tokens as drawn, before dedupe, with their topics.
    pub raw_tokens: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    /// Per document, its tags sorted by decreasing ideal score.
    pub ideal_ranking: Vec<Vec<usize>>,
    /// Grades 1..=5 by within-document quintile of the ideal score.
    pub labels: RelevanceLabels,
    /// Per document, the `DEFAULT_TOP_K` vocabulary tags with the highest
    /// ideal score. Never shown to the models.
    pub true_tag_sets: Vec<Vec<usize>>,
    /// Indicator drawn for each kept edge, `true` for same content.
    pub same_content: Vec<bool>,
}

impl SynthTruth {
    /// Retrieval ground truth: for every tag, the images whose true tag set
    /// contains it. Tags no image truly carries are omitted.
    pub fn ground_truth_sets(&self) -> GroundTruthSets {
        let mut sets: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (d, tags) in self.true_tag_sets.iter().enumerate() {
            for &t in tags {
                sets.entry(t).or_default().insert(d);
            }
        }
        GroundTruthSets { sets }
    }
}

/// `ceil(5 * (#tags scoring at most this one) / N)` for every tag.
pub fn quintile_grades(scores: &[f64]) -> Vec<u32> {
    let n = scores.len();
    scores
        .iter()
        .map(|s| {
            let at_most = scores.iter().filter(|&&o| o <= *s).count();
            (5 * at_most).div_ceil(n) as u32
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<(Corpus, SynthTruth)> {
    spec.validate()?;
    let mut doc_rng = rng::stream(spec.seed, &[STREAM_DOCS]);
    let mut theta = Vec::with_capacity(spec.docs);
    let mut raw_tokens = Vec::with_capacity(spec.docs);
    let mut z = Vec::with_capacity(spec.docs);
    let mut documents = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let mut th = vec![0.0; spec.topics];
        rng::sample_dirichlet(&spec.alpha_true, &mut doc_rng, &mut th);
        let len = doc_rng.random_range(spec.doc_length.0..=spec.doc_length.1);
        let mut tokens = Vec::with_capacity(len);
        let mut topics = Vec::with_capacity(len);
        for _ in 0..len {
            let topic = rng::sample_categorical(&th, &mut doc_rng).expect("mixture has mass");
            let word = rng::sample_categorical(&spec.beta_true[topic], &mut doc_rng).expect("topic row has mass");
            topics.push(topic);
            tokens.push(word);
        }
        let mut seen = BTreeSet::new();
        let mut tags: Vec<usize> = tokens.iter().copied().filter(|w| seen.insert(*w)).collect();
        if spec.shuffle_tags {
            tags.shuffle(&mut doc_rng);
        }
        documents.push(TagDocument {
            image_id: image_name(d),
            tags,
        });
        theta.push(th);
        raw_tokens.push(tokens);
        z.push(topics);
    }

    let mut pair_rng = rng::stream(spec.seed, &[STREAM_PAIRS]);
    let normals = [
        Normal::new(spec.mu_true[0], spec.sigma_true[0]).map_err(|e| Error::invalid(e.to_string()))?,
        Normal::new(spec.mu_true[1], spec.sigma_true[1]).map_err(|e| Error::invalid(e.to_string()))?,
    ];
    let mut pairs = Vec::new();
    let mut same_content = Vec::new();
    for a in 0..spec.docs {
        for b in a + 1..spec.docs {
            if !pair_rng.random_bool(spec.edge_rate) {
                continue;
            }
            let hi: f64 = theta[a].iter().zip(&theta[b]).map(|(x, y): (&f64, &f64)| x.min(*y)).sum();
            let same = pair_rng.random::<f64>() < hi;
            let mut s = normals[if same { 0 } else { 1 }].sample(&mut pair_rng);
            if spec.noise > 0.0 {
                s += pair_rng.random_range(-0.5..0.5) * spec.noise;
            }
            let s = s.clamp(f64::MIN_POSITIVE, 1.0);
            if s > DEFAULT_EDGE_THRESHOLD {
                pairs.push((a, b, s));
                same_content.push(same);
            }
        }
    }
    let graph = SimilarityGraph::from_pairs(spec.docs, pairs, DEFAULT_EDGE_THRESHOLD)?;

    let vocabulary = Vocabulary::new((0..spec.vocab).map(tag_name).collect())?;
    let corpus = Corpus::new(vocabulary, documents)?.with_graph(graph)?;

    let mut ideal_ranking = Vec::with_capacity(spec.docs);
    let mut label_docs = Vec::with_capacity(spec.docs);
    let mut true_tag_sets = Vec::with_capacity(spec.docs);
    for (doc, th) in corpus.documents.iter().zip(&theta) {
        let full = spec.ideal_scores(th);
        let scores: Vec<f64> = doc.tags.iter().map(|&t| full[t]).collect();
        let mut order: Vec<usize> = (0..doc.tags.len()).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        ideal_ranking.push(order.iter().map(|&i| doc.tags[i]).collect());
        label_docs.push(doc.tags.iter().copied().zip(quintile_grades(&scores)).collect());
        true_tag_sets.push(retag(&full, DEFAULT_TOP_K.min(spec.vocab))?);
    }
    let labels = RelevanceLabels::new(&corpus, label_docs)?;
    Ok((
        corpus,
        SynthTruth {
            theta,
            raw_tokens,
            z,
            ideal_ranking,
            labels,
            true_tag_sets,
            same_content,
        },
    ))
}

/// Spec with similarity noise switched off and both components pinned at
/// the floor width, so every same-content edge lands on `mu_true[0]`.
pub fn degenerate_similarity(mut spec: SynthSpec) -> SynthSpec {
    spec.noise = 0.0;
    spec.sigma_true = [SIGMA_FLOOR, SIGMA_FLOOR];
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            edge_rate: 0.2,
            ..SynthSpec::standard(3, 30, 60, seed)
        }
    }

    #[test]
    fn grades_are_quintiles() {
        assert_eq!(quintile_grades(&[0.5]), vec![5]);
        assert_eq!(quintile_grades(&[0.1, 0.2, 0.3, 0.4, 0.5]), vec![1, 2, 3, 4, 5]);
        assert_eq!(quintile_grades(&[0.3, 0.1]), vec![5, 3]);
        assert_eq!(quintile_grades(&[0.2, 0.2, 0.1]), vec![5, 5, 2]);
    }

    #[test]
    fn generation_is_seeded() {
        let (a, ta) = generate(&small(3)).unwrap();
        let (b, tb) = generate(&small(3)).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.graph, b.graph);
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(4)).unwrap();
        assert_ne!(a.documents, c.documents);
    }

    #[test]
    fn artifacts_respect_corpus_invariants() {
        let (c, truth) = generate(&small(5)).unwrap();
        let raw: Vec<(String, Vec<String>)> = c
            .documents
            .iter()
            .map(|d| (d.image_id.clone(), d.tags.iter().map(|&t| tag_name(t)).collect()))
            .collect();
        let rebuilt = build_vocabulary(&raw).unwrap();
        assert_eq!(rebuilt.len(), c.len());
        let g = c.graph.as_ref().unwrap();
        assert!(!g.edges().is_empty());
        for e in g.edges() {
            assert!(e.similarity > DEFAULT_EDGE_THRESHOLD && e.similarity <= 1.0);
            assert!(e.a < e.b);
        }
        assert_eq!(truth.same_content.len(), g.edges().len());
        for (d, doc) in c.documents.iter().enumerate() {
            assert!(!doc.tags.is_empty() && doc.tags.len() <= 12);
            let full = small(5).ideal_scores(&truth.theta[d]);
            for pair in truth.ideal_ranking[d].windows(2) {
                assert!(full[pair[0]] >= full[pair[1]]);
                let (g0, g1) = (truth.labels.docs[d][&pair[0]], truth.labels.docs[d][&pair[1]]);
                assert!(g0 >= g1);
            }
        }
    }

    #[test]
    fn degenerate_similarity_concentrates_at_mean() {
        let spec = SynthSpec {
            topics: 1,
            alpha_true: vec![1.0],
            beta_true: random_topics(1, 30, 0.1, 9),
            ..degenerate_similarity(small(9))
        };
        let (c, truth) = generate(&spec).unwrap();
        assert!(truth.same_content.iter().all(|&s| s));
        let edges = c.graph.as_ref().unwrap().edges();
        let dev = |e: &crate::corpus::Edge| (e.similarity - spec.mu_true[0]).abs() / SIGMA_FLOOR;
        let within = edges.iter().filter(|e| dev(e) < 3.0).count();
        assert!(within as f64 >= 0.99 * edges.len() as f64);
        assert!(edges.iter().all(|e| dev(e) < 6.0));
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let mut spec = small(1);
        spec.doc_length = (5, 31);
        assert!(generate(&spec).is_err());
        let mut spec = small(1);
        spec.mu_true = [0.2, 0.8];
        assert!(generate(&spec).is_err());
    }
}
