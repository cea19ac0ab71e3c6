//! Regularized LDA: per-image topic mixtures coupled through the visual
//! similarity graph by a histogram-intersection prior on relational
//! indicators, fitted with a hybrid Gibbs / importance-sampling scheme.

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, SimilarityGraph, TagDocument};
use crate::error::{Error, LastIterate, Result};
use crate::lda::{fit_lda, smoothed_rows, LdaConfig, ALPHA_MAX, ALPHA_MIN};
use crate::rng::{self, StreamRng};
use crate::special::{digamma, inv_digamma};

/// Clamp margin on the regularizer value `r1`.
pub const R1_EPS: f64 = 1e-6;
/// Floor on every entry of an expected topic mixture.
pub const THETA_EPS: f64 = 1e-8;
pub const SIGMA_FLOOR: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 2000;
pub const DEFAULT_OUTER_ITERS: usize = 30;
pub const DEFAULT_OUTER_TOL: f64 = 1e-4;
/// Effective sample sizes below this mark an estimate as unreliable.
pub const ESS_WARNING: f64 = 10.0;
pub const ALPHA_FP_TOL: f64 = 1e-8;
pub const ALPHA_FP_MAX_ITERS: usize = 1000;

pub const INIT_MU: [f64; 2] = [0.8, 0.2];
pub const INIT_SIGMA: [f64; 2] = [0.2, 0.2];

const SIMPLEX_TOL: f64 = 1e-6;

const PHASE_Z: u64 = 1;
const PHASE_TAU: u64 = 2;
const PHASE_THETA: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RldaModel {
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    /// Means of the same-content and different-content similarity components.
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
}

impl RldaModel {
    pub fn topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }
}

/// Relational indicator on an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tau {
    SameContent,
    DifferentContent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RldaState {
    pub theta_bar: Vec<Vec<f64>>,
    pub z: Vec<Vec<usize>>,
    /// Aligned with the graph's edge list.
    pub tau: Vec<Tau>,
    pub rng_seed: u64,
    pub iterations: usize,
}

fn check_simplex(theta: &[f64]) -> Result<()> {
    let total: f64 = theta.iter().sum();
    if theta.iter().any(|&t| !(t >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid("topic mixture is not on the simplex"));
    }
    Ok(())
}

fn histogram_intersection(a: &[f64], b: &[f64]) -> f64 {
    let hi: f64 = a.iter().zip(b).map(|(x, y)| x.min(*y)).sum();
    hi.clamp(R1_EPS, 1.0 - R1_EPS)
}

/// Clamped histogram intersection `r1 = sum_k min(a_k, b_k)`.
pub fn topic_similarity(theta_a: &[f64], theta_b: &[f64]) -> Result<f64> {
    if theta_a.len() != theta_b.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_a.len(),
            found: theta_b.len(),
        });
    }
    check_simplex(theta_a)?;
    check_simplex(theta_b)?;
    Ok(histogram_intersection(theta_a, theta_b))
}

/// Expected visual similarity of a pair under the two-component model.
pub fn expected_similarity(r1: f64, mu: [f64; 2]) -> f64 {
    r1 * mu[0] + (1.0 - r1) * mu[1]
}

fn log_normal_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Posterior probability that an edge links same-content images.
pub fn tau_posterior(r1: f64, s: f64, mu: [f64; 2], sigma: [f64; 2]) -> f64 {
    let same = r1.ln() + log_normal_density(s, mu[0], sigma[0]);
    let diff = (1.0 - r1).ln() + log_normal_density(s, mu[1], sigma[1]);
    1.0 / (1.0 + (diff - same).exp())
}

/// One topic draw per token with mass `theta_bar[i] * beta[i][w]`.
pub fn sample_z<R: Rng + ?Sized>(tokens: &[usize], theta_bar: &[f64], beta: &[Vec<f64>], rng: &mut R) -> Vec<usize> {
    let mut mass = vec![0.0; theta_bar.len()];
    tokens
        .iter()
        .map(|&w| {
            for (i, m) in mass.iter_mut().enumerate() {
                *m = theta_bar[i] * beta[i][w];
            }
            rng::sample_categorical(&mass, rng).expect("floored topic mass is positive")
        })
        .collect()
}

pub fn sample_tau<R: Rng + ?Sized>(
    theta_a: &[f64],
    theta_b: &[f64],
    s: f64,
    model: &RldaModel,
    rng: &mut R,
) -> Tau {
    let p = tau_posterior(histogram_intersection(theta_a, theta_b), s, model.mu, model.sigma);
    if rng.random::<f64>() < p {
        Tau::SameContent
    } else {
        Tau::DifferentContent
    }
}

/// A neighbouring image's current mixture and the indicator on the shared edge.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub theta: &'a [f64],
    pub tau: Tau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta: Vec<f64>,
    /// Weighted mean of `log theta_k` over the same draws, the sufficient
    /// statistic for refitting the Dirichlet prior.
    pub mean_log: Vec<f64>,
    pub effective_sample_size: f64,
}

impl ThetaEstimate {
    pub fn low_ess(&self) -> bool {
        self.effective_sample_size < ESS_WARNING
    }
}

/// Raises entries below `eps` to `eps` and rescales the rest so the vector
/// stays on the simplex.
pub fn floor_simplex(theta: &mut [f64], eps: f64) {
    let mut floored = vec![false; theta.len()];
    loop {
        let fixed = floored.iter().filter(|&&f| f).count() as f64 * eps;
        let free: f64 = theta.iter().zip(&floored).filter(|(_, &f)| !f).map(|(t, _)| t).sum();
        let scale = (1.0 - fixed) / free;
        let mut changed = false;
        for (t, f) in theta.iter_mut().zip(floored.iter_mut()) {
            if *f {
                *t = eps;
            } else if *t * scale < eps {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (t, f) in theta.iter_mut().zip(&floored) {
                if !f {
                    *t *= scale;
                }
            }
            return;
        }
    }
}

/// Self-normalized importance estimate of `E[theta_d | rest]` with the
/// `Dirichlet(alpha)` prior as proposal. The log weight of a draw is
/// `sum_k n_k log theta_k` plus, per neighbour, `log r1` or `log(1 - r1)`
/// depending on the edge's indicator.
pub fn expected_theta<R: Rng + ?Sized>(
    z_counts: &[usize],
    neighbors: &[Neighbor<'_>],
    alpha: &[f64],
    n_samples: usize,
    rng: &mut R,
) -> Result<ThetaEstimate> {
    let k = alpha.len();
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if z_counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: z_counts.len(),
        });
    }
    let mut draws = vec![0.0; n_samples * k];
    let mut log_w = vec![0.0; n_samples];
    for (draw, lw) in draws.chunks_mut(k).zip(log_w.iter_mut()) {
        rng::sample_dirichlet(alpha, rng, draw);
        let mut acc = 0.0;
        for (&n, &t) in z_counts.iter().zip(draw.iter()) {
            if n > 0 {
                acc += n as f64 * t.max(f64::MIN_POSITIVE).ln();
            }
        }
        for nb in neighbors {
            let r1 = histogram_intersection(draw, nb.theta);
            acc += match nb.tau {
                Tau::SameContent => r1.ln(),
                Tau::DifferentContent => (1.0 - r1).ln(),
            };
        }
        *lw = acc;
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut theta = vec![0.0; k];
    let mut mean_log = vec![0.0; k];
    let (mut sum_w, mut sum_w2) = (0.0, 0.0);
    for (draw, lw) in draws.chunks(k).zip(&log_w) {
        let w = (lw - max).exp();
        sum_w += w;
        sum_w2 += w * w;
        for ((t, l), d) in theta.iter_mut().zip(mean_log.iter_mut()).zip(draw) {
            *t += w * d;
            *l += w * d.max(THETA_EPS).ln();
        }
    }
    theta.iter_mut().for_each(|t| *t /= sum_w);
    mean_log.iter_mut().for_each(|l| *l /= sum_w);
    floor_simplex(&mut theta, THETA_EPS);
    Ok(ThetaEstimate {
        theta,
        mean_log,
        effective_sample_size: sum_w * sum_w / sum_w2,
    })
}

/// Maximum-likelihood Dirichlet fit to a set of mixtures by the
/// inverse-digamma fixed point, starting from a moment-matched guess.
pub fn estimate_alpha(theta_bars: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = theta_bars.len();
    if m < 2 {
        return Err(Error::invalid("alpha estimation needs at least two mixtures"));
    }
    let k = theta_bars[0].len();
    if theta_bars.iter().any(|t| t.len() != k) {
        return Err(Error::invalid("mixtures disagree on the topic count"));
    }
    let mean_log: Vec<f64> = (0..k)
        .map(|i| theta_bars.iter().map(|t| t[i].max(THETA_EPS).ln()).sum::<f64>() / m as f64)
        .collect();
    alpha_fixed_point(&mean_log, moment_match(theta_bars))
}

/// Iterates `alpha_k <- psi^-1(psi(sum alpha) + mean_log_k)` from `init`
/// until the largest change drops below [`ALPHA_FP_TOL`].
pub fn alpha_fixed_point(mean_log: &[f64], init: Vec<f64>) -> Result<Vec<f64>> {
    if mean_log.len() != init.len() {
        return Err(Error::DimensionMismatch {
            expected: init.len(),
            found: mean_log.len(),
        });
    }
    if mean_log.len() == 1 {
        return Ok(vec![1.0]);
    }
    let mut alpha = init;
    let mut residual = f64::INFINITY;
    for _ in 0..ALPHA_FP_MAX_ITERS {
        let shift = digamma(alpha.iter().sum());
        let next: Vec<f64> = mean_log
            .iter()
            .map(|&l| inv_digamma(shift + l).clamp(ALPHA_MIN, ALPHA_MAX))
            .collect();
        residual = next.iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        alpha = next;
        if residual < ALPHA_FP_TOL {
            return Ok(alpha);
        }
    }
    Err(Error::NotConverged {
        what: "alpha fixed point",
        iterations: ALPHA_FP_MAX_ITERS,
        residual,
        last: LastIterate::Vector(alpha),
    })
}

fn moment_match(theta_bars: &[Vec<f64>]) -> Vec<f64> {
    let m = theta_bars.len() as f64;
    let k = theta_bars[0].len();
    let mean: Vec<f64> = (0..k).map(|i| theta_bars.iter().map(|t| t[i]).sum::<f64>() / m).collect();
    let second: Vec<f64> = (0..k).map(|i| theta_bars.iter().map(|t| t[i] * t[i]).sum::<f64>() / m).collect();
    // Precision estimates per component, averaged in log space.
    let logs: Vec<f64> = (0..k)
        .filter_map(|i| {
            let var = second[i] - mean[i] * mean[i];
            let s = (mean[i] - second[i]) / var;
            (var > 0.0 && s > 0.0 && s.is_finite()).then(|| s.ln())
        })
        .collect();
    let precision = if logs.is_empty() {
        k as f64
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    };
    mean.iter().map(|&x| (x * precision).clamp(ALPHA_MIN, ALPHA_MAX)).collect()
}

/// Topic-word matrix from token assignments, smoothed like the LDA M-step.
pub fn estimate_beta(documents: &[TagDocument], z: &[Vec<usize>], topics: usize, vocab: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; vocab]; topics];
    for (doc, zs) in documents.iter().zip(z) {
        for (&w, &topic) in doc.tags.iter().zip(zs) {
            counts[topic][w] += 1.0;
        }
    }
    smoothed_rows(&counts)
}

/// Sample mean and standard deviation of the similarities in each indicator
/// group. Empty groups keep `previous`; components are swapped if the
/// same-content mean does not exceed the other.
pub fn estimate_gaussians(taus: &[Tau], similarities: &[f64], previous: ([f64; 2], [f64; 2])) -> Result<([f64; 2], [f64; 2])> {
    if taus.is_empty() {
        return Err(Error::invalid("Gaussian estimation needs at least one edge"));
    }
    if taus.len() != similarities.len() {
        return Err(Error::DimensionMismatch {
            expected: taus.len(),
            found: similarities.len(),
        });
    }
    let (mut mu, mut sigma) = previous;
    for (c, group) in [Tau::SameContent, Tau::DifferentContent].into_iter().enumerate() {
        let values: Vec<f64> = taus
            .iter()
            .zip(similarities)
            .filter(|(t, _)| **t == group)
            .map(|(_, &s)| s)
            .collect();
        if values.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        mu[c] = mean;
        sigma[c] = std.max(SIGMA_FLOOR);
    }
    if mu[0] <= mu[1] {
        mu.swap(0, 1);
        sigma.swap(0, 1);
    }
    Ok((mu, sigma))
}

/// `score(v) = sum_i beta[i][v] * theta_bar[i]`.
pub fn rlda_tag_relevance(theta_bar: &[f64], beta: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; beta.first().map_or(0, Vec::len)];
    for (row, &t) in beta.iter().zip(theta_bar) {
        for (o, &b) in out.iter_mut().zip(row) {
            *o += t * b;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RldaConfig {
    pub topics: usize,
    pub outer_iters: usize,
    pub n_samples: usize,
    pub tol: f64,
    pub seed: u64,
    /// Settings for the LDA fit that initializes the sampler.
    pub lda: LdaConfig,
    /// When false the graph is ignored entirely.
    pub regularize: bool,
}

impl Default for RldaConfig {
    fn default() -> Self {
        RldaConfig {
            topics: crate::lda::DEFAULT_TOPICS,
            outer_iters: DEFAULT_OUTER_ITERS,
            n_samples: DEFAULT_SAMPLES,
            tol: DEFAULT_OUTER_TOL,
            seed: 0,
            lda: LdaConfig::default(),
            regularize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RldaFit {
    pub model: RldaModel,
    pub state: RldaState,
    /// Max per-document L1 change of the mixtures, one entry per iteration.
    pub changes: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn incident_edges(graph: &SimilarityGraph, docs: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); docs];
    for (e, edge) in graph.edges().iter().enumerate() {
        out[edge.a].push((e, edge.b));
        out[edge.b].push((e, edge.a));
    }
    out
}

/// Hybrid sampler: each outer iteration draws topic assignments and edge
/// indicators given the current mixtures, re-estimates every mixture by
/// importance sampling against the previous iteration's neighbours, then
/// refits `alpha`, `beta` and the similarity Gaussians.
pub fn fit_rlda(corpus: &Corpus, config: &RldaConfig) -> Result<RldaFit> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let lda_cfg = LdaConfig {
        topics: config.topics,
        seed: config.seed,
        ..config.lda.clone()
    };
    let lda = fit_lda(corpus, &lda_cfg)?;
    let mut warnings = lda.warnings.clone();
    let k = config.topics;
    let empty_graph = SimilarityGraph::empty(corpus.len(), 0.0);
    let graph = match (&corpus.graph, config.regularize) {
        (Some(g), true) => g,
        _ => &empty_graph,
    };
    let incident = incident_edges(graph, corpus.len());
    let similarities: Vec<f64> = graph.edges().iter().map(|e| e.similarity).collect();

    let mut model = RldaModel {
        alpha: lda.model.alpha.clone(),
        beta: lda.model.beta.clone(),
        mu: INIT_MU,
        sigma: INIT_SIGMA,
    };
    let mut theta_bar: Vec<Vec<f64>> = lda
        .gammas
        .iter()
        .map(|g| {
            let total: f64 = g.iter().sum();
            let mut t: Vec<f64> = g.iter().map(|x| x / total).collect();
            floor_simplex(&mut t, THETA_EPS);
            t
        })
        .collect();
    let mut z: Vec<Vec<usize>> = vec![Vec::new(); corpus.len()];
    let mut tau: Vec<Tau> = Vec::new();
    let mut changes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut low_ess_docs = 0;

    for iter in 1..=config.outer_iters as u64 {
        iterations = iter as usize;
        z = corpus
            .documents
            .par_iter()
            .enumerate()
            .map(|(d, doc)| {
                let mut r = rng::stream(config.seed, &[iter, PHASE_Z, d as u64]);
                sample_z(&doc.tags, &theta_bar[d], &model.beta, &mut r)
            })
            .collect();
        tau = graph
            .edges()
            .par_iter()
            .enumerate()
            .map(|(e, edge)| {
                let mut r = rng::stream(config.seed, &[iter, PHASE_TAU, e as u64]);
                sample_tau(&theta_bar[edge.a], &theta_bar[edge.b], edge.similarity, &model, &mut r)
            })
            .collect();
        let estimates = (0..corpus.len())
            .into_par_iter()
            .map(|d| {
                let mut counts = vec![0usize; k];
                z[d].iter().for_each(|&t| counts[t] += 1);
                let neighbors: Vec<Neighbor<'_>> = incident[d]
                    .iter()
                    .map(|&(e, other)| Neighbor {
                        theta: &theta_bar[other],
                        tau: tau[e],
                    })
                    .collect();
                let mut r: StreamRng = rng::stream(config.seed, &[iter, PHASE_THETA, d as u64]);
                expected_theta(&counts, &neighbors, &model.alpha, config.n_samples, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        low_ess_docs = estimates.iter().filter(|e| e.low_ess()).count();
        let mean_log: Vec<f64> = (0..k)
            .map(|i| estimates.iter().map(|e| e.mean_log[i]).sum::<f64>() / estimates.len() as f64)
            .collect();
        let next: Vec<Vec<f64>> = estimates.into_iter().map(|e| e.theta).collect();
        let change = next
            .iter()
            .zip(&theta_bar)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        theta_bar = next;
        changes.push(change);

        model.alpha = match alpha_fixed_point(&mean_log, model.alpha.clone()) {
            Ok(a) => a,
            Err(Error::NotConverged {
                last: LastIterate::Vector(a),
                residual,
                ..
            }) => {
                warnings.push(format!(
                    "iteration {iter}: alpha fixed point stopped with residual {residual:.3e}"
                ));
                a
            }
            Err(e) => return Err(e),
        };
        model.beta = estimate_beta(&corpus.documents, &z, k, corpus.vocab_size());
        if !tau.is_empty() {
            (model.mu, model.sigma) = estimate_gaussians(&tau, &similarities, (model.mu, model.sigma))?;
        }
        if change < config.tol {
            converged = true;
            break;
        }
    }
    if low_ess_docs > 0 {
        warnings.push(format!(
            "{low_ess_docs} documents had effective sample size below {ESS_WARNING} in the last iteration"
        ));
    }
    if !converged && config.outer_iters > 0 {
        warnings.push(format!(
            "mixtures still moved by {:.3e} after {} iterations",
            changes.last().copied().unwrap_or(f64::NAN),
            iterations
        ));
    }
    Ok(RldaFit {
        model,
        state: RldaState {
            theta_bar,
            z,
            tau,
            rng_seed: config.seed,
            iterations,
        },
        changes,
        converged,
        warnings,
    })
}
