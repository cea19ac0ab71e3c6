//! Latent Dirichlet allocation over tag documents: mean-field variational
//! inference, variational EM, and topic-mixture tag relevance.

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;
use crate::special::{digamma, ln_gamma, trigamma};

pub const DEFAULT_TOPICS: usize = 10;
pub const DEFAULT_EM_ITERS: usize = 50;
pub const DEFAULT_VAR_TOL: f64 = 1e-6;
pub const DEFAULT_VAR_MAX_ITERS: usize = 200;
pub const DEFAULT_EM_TOL: f64 = 1e-5;
pub const DEFAULT_RESTARTS: usize = 5;
const RESTART_STREAM: u64 = 0x1DA_0002;

/// Additive floor on every topic-word entry before row normalization.
pub const BETA_FLOOR: f64 = 1e-8;
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// Dirichlet prior over topic mixtures, length K.
    pub alpha: Vec<f64>,
    /// Topic-word probabilities, K rows of length V.
    pub beta: Vec<Vec<f64>>,
}

impl LdaModel {
    pub fn new(alpha: Vec<f64>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let m = LdaModel { alpha, beta };
        m.validate()?;
        Ok(m)
    }

    pub fn topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alpha.len();
        if k == 0 || self.beta.len() != k {
            return Err(Error::invalid("alpha and beta must agree on a positive topic count"));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("alpha entries must be positive"));
        }
        let v = self.vocab_size();
        for row in &self.beta {
            if row.len() != v || v == 0 {
                return Err(Error::invalid("beta rows must share one nonzero length"));
            }
            if row.iter().any(|&b| !(b >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("beta rows must be probability distributions"));
            }
        }
        Ok(())
    }

    fn log_beta(&self) -> Vec<Vec<f64>> {
        self.beta.iter().map(|r| r.iter().map(|b| b.ln()).collect()).collect()
    }
}

/// Row-normalizes `counts + BETA_FLOOR`.
pub(crate) fn smoothed_rows(counts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().map(|c| c + BETA_FLOOR).sum();
            row.iter().map(|c| (c + BETA_FLOOR) / total).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub gamma: Vec<f64>,
    /// One row per token, each on the K-simplex.
    pub phi: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct VarOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for VarOptions {
    fn default() -> Self {
        VarOptions {
            tol: DEFAULT_VAR_TOL,
            max_iters: DEFAULT_VAR_MAX_ITERS,
        }
    }
}

fn expected_log_theta(gamma: &[f64]) -> Vec<f64> {
    let total = digamma(gamma.iter().sum());
    gamma.iter().map(|&g| digamma(g) - total).collect()
}

fn update_phi(tokens: &[usize], log_beta: &[Vec<f64>], elog: &[f64], phi: &mut [Vec<f64>]) {
    let k = elog.len();
    let mut logits = vec![0.0; k];
    for (row, &w) in phi.iter_mut().zip(tokens) {
        for i in 0..k {
            logits[i] = log_beta[i][w] + elog[i];
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..k {
            row[i] = (logits[i] - max).exp();
            total += row[i];
        }
        row.iter_mut().for_each(|p| *p /= total);
    }
}

fn var_inference_impl(
    tokens: &[usize],
    model: &LdaModel,
    log_beta: &[Vec<f64>],
    opts: &VarOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<VariationalParams> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let k = model.topics();
    let n = tokens.len() as f64;
    let mut gamma: Vec<f64> = model.alpha.iter().map(|a| a + n / k as f64).collect();
    let mut phi = vec![vec![1.0 / k as f64; k]; tokens.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let elog = expected_log_theta(&gamma);
        update_phi(tokens, log_beta, &elog, &mut phi);
        let mut change = 0.0;
        for i in 0..k {
            let g = model.alpha[i] + phi.iter().map(|row| row[i]).sum::<f64>();
            change += (g - gamma[i]).abs();
            gamma[i] = g;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(elbo_impl(tokens, model, log_beta, &gamma, &phi));
        }
        if change / (k as f64) < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(VariationalParams {
        gamma,
        phi,
        iterations,
        converged,
    })
}

/// Coordinate ascent on `(gamma, phi)` for one document, from
/// `gamma = alpha + N/K`, until the mean absolute change of `gamma` drops
/// below `opts.tol`. Running out of iterations is reported through
/// `converged`, not as an error.
pub fn var_inference(tokens: &[usize], model: &LdaModel, opts: &VarOptions) -> Result<VariationalParams> {
    var_inference_impl(tokens, model, &model.log_beta(), opts, None)
}

/// Like [`var_inference`], also returning the ELBO after every sweep.
pub fn var_inference_traced(
    tokens: &[usize],
    model: &LdaModel,
    opts: &VarOptions,
) -> Result<(VariationalParams, Vec<f64>)> {
    let mut trace = Vec::new();
    let vp = var_inference_impl(tokens, model, &model.log_beta(), opts, Some(&mut trace))?;
    Ok((vp, trace))
}

fn elbo_impl(tokens: &[usize], model: &LdaModel, log_beta: &[Vec<f64>], gamma: &[f64], phi: &[Vec<f64>]) -> f64 {
    let elog = expected_log_theta(gamma);
    let alpha_sum: f64 = model.alpha.iter().sum();
    let gamma_sum: f64 = gamma.iter().sum();
    let mut l = ln_gamma(alpha_sum) - ln_gamma(gamma_sum);
    for i in 0..gamma.len() {
        l += -ln_gamma(model.alpha[i]) + (model.alpha[i] - 1.0) * elog[i];
        l += ln_gamma(gamma[i]) - (gamma[i] - 1.0) * elog[i];
    }
    for (row, &w) in phi.iter().zip(tokens) {
        for (i, &p) in row.iter().enumerate() {
            if p > 0.0 {
                l += p * (elog[i] + log_beta[i][w] - p.ln());
            }
        }
    }
    l
}

/// Evidence lower bound `E_q[log p(theta, z, w | alpha, beta)] - E_q[log q]`.
pub fn elbo(tokens: &[usize], model: &LdaModel, vp: &VariationalParams) -> f64 {
    elbo_impl(tokens, model, &model.log_beta(), &vp.gamma, &vp.phi)
}

/// `score(v) = sum_i beta[i][v] * gamma_i / sum(gamma)` over the vocabulary.
pub fn lda_tag_relevance(model: &LdaModel, gamma: &[f64]) -> Vec<f64> {
    let total: f64 = gamma.iter().sum();
    let mut out = vec![0.0; model.vocab_size()];
    for (row, &g) in model.beta.iter().zip(gamma) {
        let w = g / total;
        for (o, &b) in out.iter_mut().zip(row) {
            *o += w * b;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub topics: usize,
    pub em_iters: usize,
    pub em_tol: f64,
    pub var: VarOptions,
    pub seed: u64,
    pub estimate_alpha: bool,
    /// Hold `alpha` at its initial value until the fit first stalls, then
    /// release it. Estimating `alpha` against the near-uniform posteriors of
    /// a random start drives it toward large values that erase the topics.
    pub alpha_warmup: bool,
    /// Independent random starts; the fit with the highest final ELBO wins.
    pub restarts: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: DEFAULT_TOPICS,
            em_iters: DEFAULT_EM_ITERS,
            em_tol: DEFAULT_EM_TOL,
            var: VarOptions::default(),
            seed: 0,
            estimate_alpha: true,
            alpha_warmup: true,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LdaFit {
    pub model: LdaModel,
    /// Variational Dirichlet parameters per document under the final model.
    /// Empty documents get the prior.
    pub gammas: Vec<Vec<f64>>,
    /// Corpus ELBO after each E-step.
    pub elbo_trace: Vec<f64>,
    pub em_iterations: usize,
    /// Whether EM stopped on a small ELBO gain rather than the iteration cap.
    pub em_converged: bool,
    pub warnings: Vec<String>,
}

/// Initial model: symmetric `alpha = 1`, topic rows from `Dirichlet(1)`.
pub fn initial_model(topics: usize, vocab: usize, seed: u64) -> LdaModel {
    let ones = vec![1.0; vocab];
    let beta = (0..topics)
        .map(|i| {
            let mut r = rng::stream(seed, &[0x1DA, i as u64]);
            let mut row = vec![0.0; vocab];
            rng::sample_dirichlet(&ones, &mut r, &mut row);
            row
        })
        .collect::<Vec<_>>();
    LdaModel {
        alpha: vec![1.0; topics],
        beta: smoothed_rows(&beta),
    }
}

struct EStep {
    gammas: Vec<Vec<f64>>,
    word_topic: Vec<Vec<f64>>,
    elbo: f64,
    unconverged: usize,
}

fn e_step(corpus: &Corpus, model: &LdaModel, opts: &VarOptions) -> Result<EStep> {
    let log_beta = model.log_beta();
    let per_doc = corpus
        .documents
        .par_iter()
        .map(|doc| {
            if doc.is_empty() {
                return Ok(None);
            }
            let vp = var_inference_impl(&doc.tags, model, &log_beta, opts, None)?;
            let l = elbo_impl(&doc.tags, model, &log_beta, &vp.gamma, &vp.phi);
            Ok(Some((vp, l)))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = model.topics();
    let mut word_topic = vec![vec![0.0; model.vocab_size()]; k];
    let mut gammas = Vec::with_capacity(per_doc.len());
    let mut elbo = 0.0;
    let mut unconverged = 0;
    for (doc, res) in corpus.documents.iter().zip(per_doc) {
        match res {
            None => gammas.push(model.alpha.clone()),
            Some((vp, l)) => {
                for (row, &w) in vp.phi.iter().zip(&doc.tags) {
                    for i in 0..k {
                        word_topic[i][w] += row[i];
                    }
                }
                if !vp.converged {
                    unconverged += 1;
                }
                elbo += l;
                gammas.push(vp.gamma);
            }
        }
    }
    Ok(EStep {
        gammas,
        word_topic,
        elbo,
        unconverged,
    })
}

/// Maximum-likelihood Dirichlet parameters given the summed expected log
/// proportions `ss[i] = sum_d E[log theta_di]` over `docs` documents.
/// Newton-Raphson with the diagonal-plus-rank-one Hessian inverse.
pub fn update_alpha_newton(alpha: &[f64], ss: &[f64], docs: f64) -> Vec<f64> {
    let k = alpha.len();
    let mut a = alpha.to_vec();
    if k < 2 {
        // theta is identically 1; the likelihood is flat in alpha.
        return a;
    }
    for _ in 0..100 {
        let total: f64 = a.iter().sum();
        let grad: Vec<f64> = (0..k)
            .map(|i| docs * (digamma(total) - digamma(a[i])) + ss[i])
            .collect();
        let h: Vec<f64> = a.iter().map(|&x| -docs * trigamma(x)).collect();
        let z = docs * trigamma(total);
        let c = grad.iter().zip(&h).map(|(g, h)| g / h).sum::<f64>()
            / (1.0 / z + h.iter().map(|h| 1.0 / h).sum::<f64>());
        let step: Vec<f64> = grad.iter().zip(&h).map(|(g, h)| (g - c) / h).collect();
        let mut scale = 1.0;
        let mut next: Vec<f64> = a.iter().zip(&step).map(|(x, s)| x - scale * s).collect();
        while next.iter().any(|&x| x <= 0.0) && scale > 1e-10 {
            scale *= 0.5;
            next = a.iter().zip(&step).map(|(x, s)| x - scale * s).collect();
        }
        if next.iter().any(|&x| x <= 0.0) {
            break;
        }
        let change: f64 = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        a = next.iter().map(|x| x.clamp(ALPHA_MIN, ALPHA_MAX)).collect();
        if change < 1e-10 * a.iter().cloned().fold(1.0, f64::max) {
            break;
        }
    }
    a
}

/// Variational EM from `config.restarts` random starts, keeping the one
/// with the highest final ELBO (earliest start on ties). The first start
/// uses `config.seed` itself.
pub fn fit_lda(corpus: &Corpus, config: &LdaConfig) -> Result<LdaFit> {
    if config.restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let mut best = fit_from(corpus, config, config.seed)?;
    for r in 1..config.restarts {
        let fit = fit_from(corpus, config, rng::derive_seed(config.seed, &[RESTART_STREAM, r as u64]))?;
        if fit.elbo_trace.last() > best.elbo_trace.last() {
            best = fit;
        }
    }
    Ok(best)
}

fn fit_from(corpus: &Corpus, config: &LdaConfig, init_seed: u64) -> Result<LdaFit> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.topics == 0 {
        return Err(Error::invalid("topic count must be positive"));
    }
    let mut warnings = Vec::new();
    if config.topics > corpus.vocab_size() {
        warnings.push(format!(
            "{} topics exceed the vocabulary size {}",
            config.topics,
            corpus.vocab_size()
        ));
    }
    let nonempty = corpus.documents.iter().filter(|d| !d.is_empty()).count();
    if nonempty == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut model = initial_model(config.topics, corpus.vocab_size(), init_seed);
    let mut elbo_trace = Vec::new();
    let mut iteration = 0;
    let mut alpha_free = !config.alpha_warmup;
    let (estep, em_converged) = loop {
        let estep = e_step(corpus, &model, &config.var)?;
        let prev = elbo_trace.last().copied();
        elbo_trace.push(estep.elbo);
        let small_gain = prev.is_some_and(|p: f64| (estep.elbo - p) / p.abs() < config.em_tol);
        if small_gain && (alpha_free || !config.estimate_alpha) {
            break (estep, true);
        }
        if iteration == config.em_iters {
            break (estep, false);
        }
        if small_gain {
            alpha_free = true;
        }
        iteration += 1;
        let alpha = if config.estimate_alpha && alpha_free {
            let ss: Vec<f64> = (0..config.topics)
                .map(|i| {
                    corpus
                        .documents
                        .iter()
                        .zip(&estep.gammas)
                        .filter(|(d, _)| !d.is_empty())
                        .map(|(_, g)| digamma(g[i]) - digamma(g.iter().sum()))
                        .sum()
                })
                .collect();
            update_alpha_newton(&model.alpha, &ss, nonempty as f64)
        } else {
            model.alpha.clone()
        };
        model = LdaModel {
            alpha,
            beta: smoothed_rows(&estep.word_topic),
        };
    };
    if estep.unconverged > 0 {
        warnings.push(format!(
            "variational inference hit the iteration cap on {} documents",
            estep.unconverged
        ));
    }
    Ok(LdaFit {
        model,
        gammas: estep.gammas,
        elbo_trace,
        em_iterations: iteration,
        em_converged,
        warnings,
    })
}
