//! Image tag refinement.
//!
//! Tag relevance is estimated per image under four families of models:
//! random walks over a tag similarity graph (optionally restarted from
//! kernel-density visual relevance), latent Dirichlet allocation over tag
//! documents, and regularized LDA, in which the topic mixtures of visually
//! similar images are coupled through a histogram-intersection prior.
//! Relevance scores feed tag reranking and top-k retagging, evaluated by
//! NDCG and retrieval F-measure.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod lda;
pub mod randwalk;
pub mod rlda;
pub mod rng;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
