//! The `tagrefine` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! non-convergence. On exit 3 whatever the run produced is still written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{build_similarity_graph, cooccurrence_similarity, Corpus, DEFAULT_EDGE_THRESHOLD};
use crate::error::{Error, LastIterate};
use crate::eval::{mean_ndcg, position_histogram, rerank, retag, retrieval_f_measure, Depth, DEFAULT_TOP_K};
use crate::io::{self, LdaModelFile, Provenance, RldaModelFile};
use crate::lda::{fit_lda, lda_tag_relevance, var_inference, LdaConfig, DEFAULT_EM_ITERS, DEFAULT_EM_TOL, DEFAULT_TOPICS};
use crate::randwalk::{
    joint_refinement, tag_walk_refine, two_step_refine, visual_refine, RelevanceScores, TagScores, WalkConfig,
    DEFAULT_LAMBDA,
};
use crate::rlda::{fit_rlda, rlda_tag_relevance, RldaConfig, DEFAULT_OUTER_ITERS, DEFAULT_OUTER_TOL, DEFAULT_SAMPLES};
use crate::synth::{generate, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tagrefine", version, about = "Image tag refinement by random walks, LDA and regularized LDA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with graded labels and retrieval truth.
    Synth(SynthArgs),
    /// Fit LDA and write the model as JSON.
    TrainLda(TrainArgs),
    /// Fit regularized LDA and write the model and per-image mixtures as JSON.
    TrainRlda(TrainArgs),
    /// Score and reorder each image's own tags.
    Rerank(RefineArgs),
    /// Assign each image the top-k tags by relevance.
    Retag(RefineArgs),
    /// NDCG, position histogram and retrieval F-measure of a score file.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Baseline,
    Rwr,
    Visual,
    TwoStep,
    Joint,
    Lda,
    Rlda,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rwr => "rwr",
            Method::Visual => "visual",
            Method::TwoStep => "two-step",
            Method::Joint => "joint",
            Method::Lda => "lda",
            Method::Rlda => "rlda",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    #[arg(long, default_value_t = 60)]
    pub vocab: usize,
    #[arg(long, default_value_t = 300)]
    pub images: usize,
    #[arg(long, default_value_t = 0.05)]
    pub edge_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Documents file: image_id, tab, comma-separated tags.
    #[arg(long)]
    pub docs: PathBuf,
    /// Feature vectors; the similarity graph is built from them.
    #[arg(long, conflicts_with = "similarities")]
    pub features: Option<PathBuf>,
    /// Precomputed pairwise similarities, used instead of features.
    #[arg(long)]
    pub similarities: Option<PathBuf>,
    /// Edges are kept only above this similarity.
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[arg(long, default_value_t = DEFAULT_TOPICS)]
    pub topics: usize,
    #[arg(long, default_value_t = DEFAULT_EM_ITERS)]
    pub em_iters: usize,
    /// Importance samples per image per rLDA iteration.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_OUTER_ITERS)]
    pub outer_iters: usize,
    /// Stopping tolerance: relative ELBO gain for LDA, largest L1 change of
    /// an image's topic mixture for rLDA.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 is serial and bitwise reproducible, 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value_t = Method::Baseline)]
    pub method: Method,
    /// Weight of the walk against the restart.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Trained lda or rlda model; without it the model is fitted here.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Score file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub docs: PathBuf,
    /// Output of `rerank` or `retag`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Graded labels: image_id, tab, tag, tab, grade.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Retrieval truth: tag, tab, comma-separated image ids.
    #[arg(long)]
    pub truth_sets: Option<PathBuf>,
    /// Report file of `metric<TAB>value` lines.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_non_convergence() { EXIT_NOT_CONVERGED } else { EXIT_DATA },
            message: e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("tagrefine: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(&a),
        Command::TrainLda(a) => in_pool(a.fit.threads, || train_lda(&a)),
        Command::TrainRlda(a) => in_pool(a.fit.threads, || train_rlda(&a)),
        Command::Rerank(a) => in_pool(a.fit.threads, || refine(&a, false)),
        Command::Retag(a) => in_pool(a.fit.threads, || refine(&a, true)),
        Command::Eval(a) => evaluate(&a),
    }
}

fn in_pool(threads: usize, job: impl FnOnce() -> Outcome + Send) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(job)
}

/// File name only, so outputs do not depend on where the inputs live.
fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("tagrefine: warning: {w}");
    }
}

fn synth(a: &SynthArgs) -> Outcome {
    if a.topics == 0 || a.vocab == 0 || a.images == 0 {
        return Err(Failure::usage("--topics, --vocab and --images must be positive"));
    }
    if !(0.0..=1.0).contains(&a.edge_rate) || !(a.noise >= 0.0) {
        return Err(Failure::usage("--edge-rate must be in [0, 1] and --noise non-negative"));
    }
    let mut spec = SynthSpec::standard(a.topics, a.vocab, a.images, a.seed);
    spec.edge_rate = a.edge_rate;
    spec.noise = a.noise;
    spec.doc_length.1 = spec.doc_length.1.min(a.vocab);
    spec.doc_length.0 = spec.doc_length.0.min(spec.doc_length.1);
    let (corpus, truth) = generate(&spec)?;
    let prov = Provenance::new("synth")
        .with("topics", a.topics)
        .with("vocab", a.vocab)
        .with("images", a.images)
        .with("edge_rate", a.edge_rate)
        .with("noise", a.noise)
        .with("seed", a.seed);
    let graph = corpus.graph.as_ref().expect("generated corpora carry a graph");
    fs::create_dir_all(&a.out).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", a.out.display()),
    })?;
    write(&a.out.join("docs.tsv"), &io::format_documents(&corpus, &prov))?;
    write(&a.out.join("similarities.tsv"), &io::format_similarities(&corpus, graph, &prov))?;
    write(&a.out.join("labels.tsv"), &io::format_labels(&corpus, &truth.labels, &prov))?;
    write(
        &a.out.join("truth_sets.tsv"),
        &io::format_truth_sets(&corpus, &truth.ground_truth_sets(), &prov),
    )?;
    write(&a.out.join("spec.json"), &io::to_json(&spec))
}

fn check_corpus_args(c: &CorpusArgs) -> Outcome {
    if !(0.0..1.0).contains(&c.threshold) {
        return Err(Failure::usage("--threshold must be in [0, 1)"));
    }
    Ok(())
}

fn check_fit_args(f: &FitArgs) -> Outcome {
    if f.topics == 0 {
        return Err(Failure::usage("--topics must be positive"));
    }
    if f.samples == 0 {
        return Err(Failure::usage("--samples must be positive"));
    }
    if let Some(t) = f.tol {
        if !(t >= 0.0) {
            return Err(Failure::usage("--tol must be non-negative"));
        }
    }
    Ok(())
}

/// Reads the documents and, when given, the features or similarities, and
/// attaches the similarity graph.
fn load_corpus(c: &CorpusArgs) -> std::result::Result<Corpus, Failure> {
    let mut corpus = io::read_documents(&c.docs)?;
    if let Some(p) = &c.similarities {
        let graph = io::read_similarities(p, &corpus, c.threshold)?;
        corpus = corpus.with_graph(graph)?;
    } else if let Some(p) = &c.features {
        let features = io::read_features(p, &corpus)?;
        corpus = corpus.with_features(features)?;
        let graph = build_similarity_graph(&corpus, c.threshold)?;
        corpus = corpus.with_graph(graph)?;
    }
    Ok(corpus)
}

fn echo_corpus(p: Provenance, c: &CorpusArgs) -> Provenance {
    let mut p = p.with("docs", file_label(&c.docs)).with("threshold", c.threshold);
    if let Some(f) = &c.features {
        p = p.with("features", file_label(f));
    }
    if let Some(s) = &c.similarities {
        p = p.with("similarities", file_label(s));
    }
    p
}

fn echo_fit(p: Provenance, f: &FitArgs, method: Method) -> Provenance {
    let p = p.with("topics", f.topics).with("seed", f.seed);
    match method {
        Method::Lda => p
            .with("em_iters", f.em_iters)
            .with("tol", f.tol.unwrap_or(DEFAULT_EM_TOL)),
        Method::Rlda => p
            .with("em_iters", f.em_iters)
            .with("samples", f.samples)
            .with("outer_iters", f.outer_iters)
            .with("tol", f.tol.unwrap_or(DEFAULT_OUTER_TOL)),
        _ => p,
    }
}

fn lda_config(f: &FitArgs) -> LdaConfig {
    LdaConfig {
        topics: f.topics,
        em_iters: f.em_iters,
        em_tol: f.tol.unwrap_or(DEFAULT_EM_TOL),
        seed: f.seed,
        ..LdaConfig::default()
    }
}

fn rlda_config(f: &FitArgs) -> RldaConfig {
    RldaConfig {
        topics: f.topics,
        outer_iters: f.outer_iters,
        n_samples: f.samples,
        tol: f.tol.unwrap_or(DEFAULT_OUTER_TOL),
        seed: f.seed,
        lda: LdaConfig {
            em_iters: f.em_iters,
            ..LdaConfig::default()
        },
        ..RldaConfig::default()
    }
}

fn require_graph(corpus: &Corpus) -> Outcome {
    if corpus.graph.is_none() {
        return Err(Failure::usage("rlda needs --similarities or --features"));
    }
    Ok(())
}

fn not_converged(message: String) -> Failure {
    Failure {
        code: EXIT_NOT_CONVERGED,
        message,
    }
}

fn train_lda(a: &TrainArgs) -> Outcome {
    check_corpus_args(&a.corpus)?;
    check_fit_args(&a.fit)?;
    let corpus = load_corpus(&a.corpus)?;
    let fit = fit_lda(&corpus, &lda_config(&a.fit))?;
    warn_all(&fit.warnings);
    let prov = echo_fit(echo_corpus(Provenance::new("train-lda"), &a.corpus), &a.fit, Method::Lda);
    let file = LdaModelFile::new(
        &corpus,
        &fit.model,
        a.fit.seed,
        fit.em_iterations,
        fit.elbo_trace.last().copied(),
        prov,
    );
    write(&a.out, &io::to_json(&file))?;
    if !fit.em_converged {
        return Err(not_converged(format!("EM stopped at the {} iteration cap", fit.em_iterations)));
    }
    Ok(())
}

fn train_rlda(a: &TrainArgs) -> Outcome {
    check_corpus_args(&a.corpus)?;
    check_fit_args(&a.fit)?;
    let corpus = load_corpus(&a.corpus)?;
    require_graph(&corpus)?;
    let fit = fit_rlda(&corpus, &rlda_config(&a.fit))?;
    warn_all(&fit.warnings);
    let prov = echo_fit(echo_corpus(Provenance::new("train-rlda"), &a.corpus), &a.fit, Method::Rlda);
    let file = RldaModelFile::new(
        &corpus,
        &fit.model,
        &fit.state.theta_bar,
        a.fit.seed,
        fit.state.iterations,
        fit.converged,
        prov,
    );
    write(&a.out, &io::to_json(&file))?;
    if !fit.converged {
        return Err(not_converged(format!(
            "topic mixtures did not settle within {} iterations; model written",
            fit.state.iterations
        )));
    }
    Ok(())
}

/// Relevance scores under `method`. Walk methods score only an image's own
/// tags; the topic models score the whole vocabulary.
fn method_scores(a: &RefineArgs, corpus: &Corpus) -> std::result::Result<RelevanceScores, Error> {
    let walk = WalkConfig {
        lambda: a.lambda,
        ..WalkConfig::default()
    };
    match a.method {
        Method::Baseline => Ok(RelevanceScores {
            docs: corpus
                .documents
                .iter()
                .map(|d| {
                    let n = d.len();
                    TagScores::new(d.tags.clone(), (0..n).map(|i| (n - i) as f64 / n as f64).collect())
                })
                .collect(),
        }),
        Method::Rwr => tag_walk_refine(corpus, &cooccurrence_similarity(corpus), a.lambda),
        Method::Visual => visual_refine(corpus),
        Method::TwoStep => two_step_refine(corpus, &cooccurrence_similarity(corpus), a.lambda),
        Method::Joint => joint_refinement(corpus, &cooccurrence_similarity(corpus), &walk),
        Method::Lda => {
            let (model, gammas) = match &a.model {
                Some(p) => {
                    let model = io::load_lda(p)?.model_for(corpus)?;
                    let opts = LdaConfig::default().var;
                    let gammas = corpus
                        .documents
                        .iter()
                        .map(|d| {
                            if d.is_empty() {
                                Ok(model.alpha.clone())
                            } else {
                                var_inference(&d.tags, &model, &opts).map(|vp| vp.gamma)
                            }
                        })
                        .collect::<crate::Result<Vec<_>>>()?;
                    (model, gammas)
                }
                None => {
                    let fit = fit_lda(corpus, &lda_config(&a.fit))?;
                    warn_all(&fit.warnings);
                    (fit.model, fit.gammas)
                }
            };
            Ok(RelevanceScores {
                docs: gammas.iter().map(|g| TagScores::dense(lda_tag_relevance(&model, g))).collect(),
            })
        }
        Method::Rlda => {
            let (beta, thetas) = match &a.model {
                Some(p) => {
                    let file = io::load_rlda(p)?;
                    (file.model_for(corpus)?.beta, file.theta_for(corpus)?)
                }
                None => {
                    let fit = fit_rlda(corpus, &rlda_config(&a.fit))?;
                    warn_all(&fit.warnings);
                    (fit.model.beta, fit.state.theta_bar)
                }
            };
            Ok(RelevanceScores {
                docs: thetas.iter().map(|t| TagScores::dense(rlda_tag_relevance(t, &beta))).collect(),
            })
        }
    }
}

/// The `k` best tags among those `scores` covers, ties to the lower index.
fn top_k(scores: &TagScores, vocab: usize, k: usize) -> crate::Result<Vec<usize>> {
    let mut dense = vec![f64::NEG_INFINITY; vocab];
    for (&t, &s) in scores.tags.iter().zip(&scores.scores) {
        dense[t] = s;
    }
    retag(&dense, k.min(scores.len()))
}

fn refine(a: &RefineArgs, retagging: bool) -> Outcome {
    check_corpus_args(&a.corpus)?;
    check_fit_args(&a.fit)?;
    if !(0.0..=1.0).contains(&a.lambda) {
        return Err(Failure::usage("--lambda must be in [0, 1]"));
    }
    if retagging && a.top_k == 0 {
        return Err(Failure::usage("--top-k must be positive"));
    }
    if a.model.is_some() && !matches!(a.method, Method::Lda | Method::Rlda) {
        return Err(Failure::usage("--model applies only to --method lda or rlda"));
    }
    let corpus = load_corpus(&a.corpus)?;
    if a.method == Method::Rlda && a.model.is_none() {
        require_graph(&corpus)?;
    }
    let command = if retagging { "retag" } else { "rerank" };
    let mut prov = echo_corpus(Provenance::new(command), &a.corpus).with("method", a.method.name());
    prov = match (a.method, &a.model) {
        (Method::Lda | Method::Rlda, Some(m)) => prov.with("model", file_label(m)),
        (m, _) => echo_fit(prov, &a.fit, m),
    };
    if matches!(a.method, Method::Rwr | Method::TwoStep | Method::Joint) {
        prov = prov.with("lambda", a.lambda);
    }
    if retagging {
        prov = prov.with("top_k", a.top_k);
    }

    let (scores, failure) = match method_scores(a, &corpus) {
        Ok(s) => (s, None),
        Err(Error::NotConverged {
            what,
            iterations,
            residual,
            last: LastIterate::Scores(partial),
        }) => (
            *partial,
            Some(not_converged(format!(
                "{what} did not converge after {iterations} iterations (residual {residual:e}); last iterate written"
            ))),
        ),
        Err(e) => return Err(e.into()),
    };
    let mut lines = Vec::with_capacity(corpus.len());
    for (doc, s) in corpus.documents.iter().zip(&scores.docs) {
        let order = if retagging {
            top_k(s, corpus.vocab_size(), a.top_k)?
        } else {
            rerank(doc, s)?
        };
        lines.push(order.into_iter().map(|t| (t, s.get(t).unwrap_or(0.0))).collect());
    }
    write(&a.out, &io::format_scores(&corpus, &lines, &prov))?;
    failure.map_or(Ok(()), Err)
}

fn evaluate(a: &EvalArgs) -> Outcome {
    if a.labels.is_none() && a.truth_sets.is_none() {
        return Err(Failure::usage("eval needs --labels, --truth-sets, or both"));
    }
    let corpus = io::read_documents(&a.docs)?;
    let scored = io::read_scores(&a.scores, &corpus)?;
    let lists: Vec<Vec<usize>> = scored.iter().map(|s| s.iter().map(|&(t, _)| t).collect()).collect();
    let labels = a.labels.as_ref().map(|p| io::read_labels(p, &corpus)).transpose()?;
    let truth = a.truth_sets.as_ref().map(|p| io::read_truth_sets(p, &corpus)).transpose()?;

    let mut metrics: Vec<(String, f64)> = Vec::new();
    if let Some(labels) = &labels {
        for (doc, ranking) in corpus.documents.iter().zip(&lists) {
            let mut a_sorted = ranking.clone();
            let mut b_sorted = doc.tags.clone();
            a_sorted.sort_unstable();
            b_sorted.sort_unstable();
            if a_sorted != b_sorted {
                return Err(Error::Format(format!(
                    "scores for `{}` are not a reordering of its tags; graded evaluation needs rerank output",
                    doc.image_id
                ))
                .into());
            }
        }
        for (name, depth) in [
            ("ndcg@1", Depth::At(1)),
            ("ndcg@3", Depth::At(3)),
            ("ndcg@5", Depth::At(5)),
            ("ndcg@full", Depth::Full),
        ] {
            metrics.push((name.to_string(), mean_ndcg(labels, &lists, depth)?));
        }
        for (pos, frac) in position_histogram(labels, &lists) {
            metrics.push((format!("best_tag_position@{pos}"), frac));
        }
    }
    if let Some((truth, skipped)) = &truth {
        if !skipped.is_empty() {
            eprintln!(
                "tagrefine: warning: {} truth tags absent from the corpus vocabulary were skipped",
                skipped.len()
            );
        }
        let report = retrieval_f_measure(&lists, truth)?;
        let n = report.per_tag.len() as f64;
        metrics.push(("precision".into(), report.per_tag.iter().map(|e| e.1).sum::<f64>() / n));
        metrics.push(("recall".into(), report.per_tag.iter().map(|e| e.2).sum::<f64>() / n));
        metrics.push(("f_measure".into(), report.mean));
        metrics.push(("evaluated_tags".into(), n));
    }

    let mut prov = Provenance::new("eval")
        .with("docs", file_label(&a.docs))
        .with("scores", file_label(&a.scores));
    if let Some(p) = &a.labels {
        prov = prov.with("labels", file_label(p));
    }
    if let Some(p) = &a.truth_sets {
        prov = prov.with("truth_sets", file_label(p));
    }
    let mut report = prov.header();
    let width = metrics.iter().map(|m| m.0.len()).max().unwrap_or(0);
    let mut table = String::new();
    for (name, value) in &metrics {
        let _ = writeln!(report, "{name}\t{value}");
        let _ = writeln!(table, "{name:<width$}  {value:.4}");
    }
    write(&a.out, &report)?;
    print!("{table}");
    Ok(())
}
