//! Line-oriented file formats and model serialization.
//!
//! Every text format is UTF-8, one tab-separated record per line. Blank
//! lines and lines starting with `#` are skipped, which is where outputs
//! carry their provenance header.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, Corpus, SimilarityGraph};
use crate::error::{Error, Result};
use crate::eval::{GroundTruthSets, RelevanceLabels};
use crate::lda::LdaModel;
use crate::rlda::{RldaModel, THETA_EPS};

pub const LDA_FORMAT: &str = "tagrefine-lda";
pub const RLDA_FORMAT: &str = "tagrefine-rlda";

/// Comment lines written at the top of every output: tool version, the
/// subcommand and its configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: format!("tagrefine {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn header(&self) -> String {
        let mut out = format!("# {}\n# command {}\n", self.tool, self.command);
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k} {v}");
        }
        out
    }
}

/// Non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn fields<'a>(path: &Path, line: usize, text: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} tab-separated fields, found {}", f.len())));
    }
    Ok(f)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn lookup_image(corpus_ids: &HashMap<&str, usize>, path: &Path, line: usize, id: &str) -> Result<usize> {
    corpus_ids
        .get(id)
        .copied()
        .ok_or_else(|| Error::parse(path, line, format!("unknown image `{id}`")))
}

fn lookup_tag(corpus: &Corpus, path: &Path, line: usize, tag: &str) -> Result<usize> {
    corpus
        .vocabulary
        .index_of(tag)
        .ok_or_else(|| Error::parse(path, line, format!("unknown tag `{tag}`")))
}

/// `image_id<TAB>tag,tag,...`. The tag list may be empty.
pub fn parse_documents(text: &str, path: &Path) -> Result<Corpus> {
    let mut raw: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = HashMap::new();
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 2)?;
        let id = f[0].trim();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty image id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), line) {
            return Err(Error::parse(path, line, format!("image `{id}` already defined on line {prev}")));
        }
        let mut tags = Vec::new();
        if !f[1].trim().is_empty() {
            for t in f[1].split(',') {
                let t = t.trim();
                if t.is_empty() {
                    return Err(Error::parse(path, line, "empty tag"));
                }
                tags.push(t.to_string());
            }
        }
        raw.push((id.to_string(), tags));
    }
    if raw.is_empty() {
        return Err(Error::parse(path, 0, "empty corpus"));
    }
    build_vocabulary(&raw)
}

pub fn read_documents(path: &Path) -> Result<Corpus> {
    parse_documents(&read(path)?, path)
}

/// `image_id<TAB>x x x ...`, one vector per document of `corpus`.
pub fn parse_features(text: &str, path: &Path, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    let ids = corpus.id_index();
    let mut out: Vec<Option<Vec<f64>>> = vec![None; corpus.len()];
    let mut dim = None;
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 2)?;
        let d = lookup_image(&ids, path, line, f[0].trim())?;
        let values = f[1]
            .split_whitespace()
            .map(|x| match x.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(path, line, format!("bad feature value `{x}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, line, "empty feature vector"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(n) if n != values.len() => {
                return Err(Error::parse(path, line, format!("dimension {} differs from {n}", values.len())));
            }
            _ => {}
        }
        if out[d].replace(values).is_some() {
            return Err(Error::parse(path, line, format!("duplicate features for `{}`", f[0].trim())));
        }
    }
    out.into_iter()
        .zip(&corpus.documents)
        .map(|(v, doc)| v.ok_or_else(|| Error::MissingFeatures(doc.image_id.clone())))
        .collect()
}

pub fn read_features(path: &Path, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    parse_features(&read(path)?, path, corpus)
}

/// `id_a<TAB>id_b<TAB>s` with `s` in `(0, 1]`. Pairs at or below
/// `threshold` are dropped.
pub fn parse_similarities(text: &str, path: &Path, corpus: &Corpus, threshold: f64) -> Result<SimilarityGraph> {
    let ids = corpus.id_index();
    let mut pairs = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 3)?;
        let a = lookup_image(&ids, path, line, f[0].trim())?;
        let b = lookup_image(&ids, path, line, f[1].trim())?;
        if a == b {
            return Err(Error::parse(path, line, "self similarity"));
        }
        let s: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad similarity `{}`", f[2].trim())))?;
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::parse(path, line, format!("similarity {s} outside (0, 1]")));
        }
        if let Some(prev) = seen.insert((a.min(b), a.max(b)), line) {
            return Err(Error::parse(path, line, format!("pair already given on line {prev}")));
        }
        pairs.push((a, b, s));
    }
    SimilarityGraph::from_pairs(corpus.len(), pairs, threshold)
}

pub fn read_similarities(path: &Path, corpus: &Corpus, threshold: f64) -> Result<SimilarityGraph> {
    parse_similarities(&read(path)?, path, corpus, threshold)
}

/// `image_id<TAB>tag<TAB>grade`.
pub fn parse_labels(text: &str, path: &Path, corpus: &Corpus) -> Result<RelevanceLabels> {
    let ids = corpus.id_index();
    let mut docs = vec![BTreeMap::new(); corpus.len()];
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 3)?;
        let d = lookup_image(&ids, path, line, f[0].trim())?;
        let t = lookup_tag(corpus, path, line, f[1].trim())?;
        let g: u32 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad grade `{}`", f[2].trim())))?;
        if !(1..=crate::eval::MAX_GRADE).contains(&g) {
            return Err(Error::parse(path, line, format!("grade {g} outside 1..=5")));
        }
        if !corpus.documents[d].contains(t) {
            return Err(Error::parse(path, line, format!("image `{}` does not carry `{}`", f[0].trim(), f[1].trim())));
        }
        if docs[d].insert(t, g).is_some() {
            return Err(Error::parse(path, line, "duplicate label"));
        }
    }
    RelevanceLabels::new(corpus, docs)
}

pub fn read_labels(path: &Path, corpus: &Corpus) -> Result<RelevanceLabels> {
    parse_labels(&read(path)?, path, corpus)
}

/// `tag<TAB>image_id,image_id,...`. Tags outside the corpus vocabulary
/// cannot be retrieved by any method and are returned separately instead
/// of failing the whole file.
pub fn parse_truth_sets(text: &str, path: &Path, corpus: &Corpus) -> Result<(GroundTruthSets, Vec<String>)> {
    let ids = corpus.id_index();
    let mut sets = BTreeMap::new();
    let mut skipped = Vec::new();
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 2)?;
        let name = f[0].trim();
        let mut images = BTreeSet::new();
        for id in f[1].split(',').map(str::trim).filter(|s| !s.is_empty()) {
            images.insert(lookup_image(&ids, path, line, id)?);
        }
        if images.is_empty() {
            return Err(Error::parse(path, line, format!("no images for `{name}`")));
        }
        let Some(t) = corpus.vocabulary.index_of(name) else {
            skipped.push(name.to_string());
            continue;
        };
        if sets.insert(t, images).is_some() {
            return Err(Error::parse(path, line, format!("tag `{name}` listed twice")));
        }
    }
    Ok((GroundTruthSets { sets }, skipped))
}

pub fn read_truth_sets(path: &Path, corpus: &Corpus) -> Result<(GroundTruthSets, Vec<String>)> {
    parse_truth_sets(&read(path)?, path, corpus)
}

/// `image_id<TAB>tag<TAB>score` lines grouped per document, in file order.
/// Images without lines get an empty list.
pub fn parse_scores(text: &str, path: &Path, corpus: &Corpus) -> Result<Vec<Vec<(usize, f64)>>> {
    let ids = corpus.id_index();
    let mut out = vec![Vec::new(); corpus.len()];
    for (line, rec) in records(text) {
        let f = fields(path, line, rec, 3)?;
        let d = lookup_image(&ids, path, line, f[0].trim())?;
        let t = lookup_tag(corpus, path, line, f[1].trim())?;
        let s: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad score `{}`", f[2].trim())))?;
        if out[d].iter().any(|&(u, _)| u == t) {
            return Err(Error::parse(path, line, "duplicate tag for image"));
        }
        out[d].push((t, s));
    }
    Ok(out)
}

pub fn read_scores(path: &Path, corpus: &Corpus) -> Result<Vec<Vec<(usize, f64)>>> {
    parse_scores(&read(path)?, path, corpus)
}

pub fn format_documents(corpus: &Corpus, prov: &Provenance) -> String {
    let mut out = prov.header();
    for doc in &corpus.documents {
        let tags: Vec<&str> = doc.tags.iter().map(|&t| corpus.vocabulary.word_of(t)).collect();
        let _ = writeln!(out, "{}\t{}", doc.image_id, tags.join(","));
    }
    out
}

pub fn format_similarities(corpus: &Corpus, graph: &SimilarityGraph, prov: &Provenance) -> String {
    let mut out = prov.header();
    for e in graph.edges() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            corpus.documents[e.a].image_id, corpus.documents[e.b].image_id, e.similarity
        );
    }
    out
}

pub fn format_labels(corpus: &Corpus, labels: &RelevanceLabels, prov: &Provenance) -> String {
    let mut out = prov.header();
    for (doc, grades) in corpus.documents.iter().zip(&labels.docs) {
        for &t in &doc.tags {
            if let Some(g) = grades.get(&t) {
                let _ = writeln!(out, "{}\t{}\t{g}", doc.image_id, corpus.vocabulary.word_of(t));
            }
        }
    }
    out
}

pub fn format_truth_sets(corpus: &Corpus, truth: &GroundTruthSets, prov: &Provenance) -> String {
    let mut out = prov.header();
    for (&t, images) in &truth.sets {
        let ids: Vec<&str> = images.iter().map(|&d| corpus.documents[d].image_id.as_str()).collect();
        let _ = writeln!(out, "{}\t{}", corpus.vocabulary.word_of(t), ids.join(","));
    }
    out
}

/// Per document, its `(tag, score)` pairs in the given order.
pub fn format_scores(corpus: &Corpus, scored: &[Vec<(usize, f64)>], prov: &Provenance) -> String {
    let mut out = prov.header();
    for (doc, entries) in corpus.documents.iter().zip(scored) {
        for &(t, s) in entries {
            let _ = writeln!(out, "{}\t{}\t{s}", doc.image_id, corpus.vocabulary.word_of(t));
        }
    }
    out
}

/// A fitted LDA model with its vocabulary, so it can be applied to any
/// corpus over the same tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModelFile {
    pub format: String,
    pub provenance: Provenance,
    pub topics: usize,
    pub vocab_size: usize,
    pub vocabulary: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub seed: u64,
    pub em_iterations: usize,
    pub final_elbo: Option<f64>,
}

impl LdaModelFile {
    pub fn new(corpus: &Corpus, model: &LdaModel, seed: u64, em_iterations: usize, final_elbo: Option<f64>, provenance: Provenance) -> Self {
        LdaModelFile {
            format: LDA_FORMAT.to_string(),
            provenance,
            topics: model.topics(),
            vocab_size: model.vocab_size(),
            vocabulary: corpus.vocabulary.words().to_vec(),
            alpha: model.alpha.clone(),
            beta: model.beta.clone(),
            seed,
            em_iterations,
            final_elbo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != LDA_FORMAT {
            return Err(Error::Format(format!("expected format `{LDA_FORMAT}`, found `{}`", self.format)));
        }
        check_shape(self.topics, self.vocab_size, &self.vocabulary, &self.alpha, &self.beta)?;
        LdaModel::new(self.alpha.clone(), self.beta.clone()).map(|_| ())
    }

    /// The model with β columns rearranged into `corpus` vocabulary order.
    pub fn model_for(&self, corpus: &Corpus) -> Result<LdaModel> {
        LdaModel::new(self.alpha.clone(), remap_beta(&self.vocabulary, &self.beta, corpus)?)
    }
}

/// A fitted rLDA model plus the per-image expected topic mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RldaModelFile {
    pub format: String,
    pub provenance: Provenance,
    pub topics: usize,
    pub vocab_size: usize,
    pub vocabulary: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub images: Vec<String>,
    pub theta_bar: Vec<Vec<f64>>,
}

impl RldaModelFile {
    pub fn new(
        corpus: &Corpus,
        model: &RldaModel,
        theta_bar: &[Vec<f64>],
        seed: u64,
        iterations: usize,
        converged: bool,
        provenance: Provenance,
    ) -> Self {
        RldaModelFile {
            format: RLDA_FORMAT.to_string(),
            provenance,
            topics: model.alpha.len(),
            vocab_size: corpus.vocab_size(),
            vocabulary: corpus.vocabulary.words().to_vec(),
            alpha: model.alpha.clone(),
            beta: model.beta.clone(),
            mu: model.mu,
            sigma: model.sigma,
            seed,
            iterations,
            converged,
            images: corpus.documents.iter().map(|d| d.image_id.clone()).collect(),
            theta_bar: theta_bar.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != RLDA_FORMAT {
            return Err(Error::Format(format!("expected format `{RLDA_FORMAT}`, found `{}`", self.format)));
        }
        check_shape(self.topics, self.vocab_size, &self.vocabulary, &self.alpha, &self.beta)?;
        LdaModel::new(self.alpha.clone(), self.beta.clone())?;
        if self.images.len() != self.theta_bar.len() {
            return Err(Error::Format("images and theta_bar differ in length".into()));
        }
        for t in &self.theta_bar {
            let sum: f64 = t.iter().sum();
            if t.len() != self.topics || (sum - 1.0).abs() > 1e-9 || t.iter().any(|&x| !(x >= THETA_EPS * 0.5)) {
                return Err(Error::Format("theta_bar entry is not a floored simplex vector".into()));
            }
        }
        if !(self.mu[0] > self.mu[1]) || self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Format("invalid similarity Gaussians".into()));
        }
        Ok(())
    }

    pub fn model_for(&self, corpus: &Corpus) -> Result<RldaModel> {
        Ok(RldaModel {
            alpha: self.alpha.clone(),
            beta: remap_beta(&self.vocabulary, &self.beta, corpus)?,
            mu: self.mu,
            sigma: self.sigma,
        })
    }

    /// Expected topic mixtures aligned with `corpus` documents.
    pub fn theta_for(&self, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
        let by_id: HashMap<&str, usize> = self.images.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        corpus
            .documents
            .iter()
            .map(|d| {
                by_id
                    .get(d.image_id.as_str())
                    .map(|&i| self.theta_bar[i].clone())
                    .ok_or_else(|| Error::UnknownImage(d.image_id.clone()))
            })
            .collect()
    }
}

fn check_shape(topics: usize, vocab: usize, words: &[String], alpha: &[f64], beta: &[Vec<f64>]) -> Result<()> {
    if words.len() != vocab || alpha.len() != topics || beta.len() != topics || beta.iter().any(|r| r.len() != vocab) {
        return Err(Error::Format("dimensions disagree with the declared K and V".into()));
    }
    if words.iter().collect::<BTreeSet<_>>().len() != words.len() {
        return Err(Error::Format("duplicate vocabulary entry".into()));
    }
    Ok(())
}

/// Reorders β columns from the model vocabulary to the corpus vocabulary,
/// renormalizing rows when the corpus lacks some model words. Corpus words
/// unknown to the model are an error.
fn remap_beta(words: &[String], beta: &[Vec<f64>], corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    if words == corpus.vocabulary.words() {
        return Ok(beta.to_vec());
    }
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let cols: Vec<usize> = corpus
        .vocabulary
        .words()
        .iter()
        .map(|w| index.get(w.as_str()).copied().ok_or_else(|| Error::UnknownTag(w.clone())))
        .collect::<Result<_>>()?;
    beta.iter()
        .map(|row| {
            let mut r: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            let total: f64 = r.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Format("a topic has no mass on the corpus vocabulary".into()));
            }
            r.iter_mut().for_each(|x| *x /= total);
            Ok(r)
        })
        .collect()
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("model records serialize");
    s.push('\n');
    s
}

pub fn load_lda(path: &Path) -> Result<LdaModelFile> {
    let file: LdaModelFile = serde_json::from_str(&read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    file.validate()?;
    Ok(file)
}

pub fn load_rlda(path: &Path) -> Result<RldaModelFile> {
    let file: RldaModelFile = serde_json::from_str(&read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    file.validate()?;
    Ok(file)
}
