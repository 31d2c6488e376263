//! Context-sensitive token embeddings.
//!
//! A token's embedding is the expectation of concept vectors under a
//! normalized joint distribution over its grounding grid. The distribution
//! is the cellwise product of two factors:
//!
//! * a sense prior `lambda * exp(-lambda * rank)` that decays with the
//!   sense's frequency rank (`lambda = softplus(raw)` stays positive for any
//!   raw value), and
//! * an attention factor: each cell's concept vector, concatenated with a
//!   context vector, is scored by an MLP with two tanh layers; scores are
//!   soft-maxed jointly over all unmasked cells of the grid.
//!
//! Ablations: `no-prior` uses the attention factor alone, `no-attention`
//! uses the normalized prior alone (context never consulted).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{ParameterStore, Tape, Var};
use crate::ontology::TokenGroundingGrid;
use crate::scalar::Scalar;

/// Embedding composition variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedMode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-prior")]
    NoPrior,
    #[serde(rename = "no-attention")]
    NoAttention,
}

/// A token grounding grid with concepts resolved to embedding-matrix rows.
/// Row `r` of the grid corresponds to sense rank `r`; padded cells map to
/// row 0 and are masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedGrid {
    pub s_max: usize,
    pub h_max: usize,
    /// Row-major embedding row per cell.
    pub rows: Vec<usize>,
    pub mask: Vec<bool>,
}

impl ResolvedGrid {
    pub fn from_token_grid(
        grid: &TokenGroundingGrid,
        mut translate: impl FnMut(crate::ontology::ConceptId) -> usize,
    ) -> Self {
        ResolvedGrid {
            s_max: grid.s_max,
            h_max: grid.h_max,
            rows: grid
                .concepts
                .iter()
                .zip(&grid.mask)
                .map(|(&c, &m)| if m { translate(c) } else { 0 })
                .collect(),
            mask: grid.mask.clone(),
        }
    }

    pub fn cells(&self) -> usize {
        self.s_max * self.h_max
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Snapshot of a token's concept distribution, retained for inspection.
#[derive(Debug, Clone)]
pub struct ConceptDistribution {
    pub s_max: usize,
    pub h_max: usize,
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ConceptDistribution {
    fn from_var<S: Scalar>(tape: &Tape<S>, dist: Var, grid: &ResolvedGrid) -> Self {
        ConceptDistribution {
            s_max: grid.s_max,
            h_max: grid.h_max,
            probs: tape.value(dist).to_f64_vec(),
            mask: grid.mask.clone(),
        }
    }
}

/// Tape handles to the attention MLP parameters for one direction.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub l1_w: Var,
    pub l1_b: Var,
    pub l2_w: Var,
    pub l2_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl AttentionVars {
    /// Define the attention parameters under `prefix` in the store.
    /// Input width is `embed_dim + context_dim`; two tanh layers of
    /// `hidden` units precede the scalar score.
    pub fn define<S: Scalar>(
        store: &mut ParameterStore<S>,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<()> {
        store.define_glorot(&format!("{prefix}.l1.w"), input_width, hidden, rng)?;
        store.define(&format!("{prefix}.l1.b"), crate::ndmath::Tensor::zeros(vec![hidden]))?;
        store.define_glorot(&format!("{prefix}.l2.w"), hidden, hidden, rng)?;
        store.define(&format!("{prefix}.l2.b"), crate::ndmath::Tensor::zeros(vec![hidden]))?;
        store.define_glorot(&format!("{prefix}.out.w"), hidden, 1, rng)?;
        store.define(&format!("{prefix}.out.b"), crate::ndmath::Tensor::zeros(vec![1]))?;
        Ok(())
    }

    pub fn from_store<S: Scalar>(
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        prefix: &str,
    ) -> Result<Self> {
        Ok(AttentionVars {
            l1_w: tape.param(store, &format!("{prefix}.l1.w"))?,
            l1_b: tape.param(store, &format!("{prefix}.l1.b"))?,
            l2_w: tape.param(store, &format!("{prefix}.l2.w"))?,
            l2_b: tape.param(store, &format!("{prefix}.l2.b"))?,
            out_w: tape.param(store, &format!("{prefix}.out.w"))?,
            out_b: tape.param(store, &format!("{prefix}.out.b"))?,
        })
    }
}

/// Unnormalized sense-prior weight per cell: `lambda * exp(-lambda * rank)`
/// with `lambda = softplus(lambda_raw)`. Cells of the same sense row share
/// the row's rank; masked cells get exactly zero.
pub fn sense_prior_weights<S: Scalar>(
    tape: &mut Tape<S>,
    lambda_raw: Var,
    grid: &ResolvedGrid,
) -> Result<Var> {
    let cells = grid.cells();
    let lambda = tape.softplus(lambda_raw)?;
    let ranks: Vec<S> = (0..cells)
        .map(|i| S::from_float((i / grid.h_max) as f64))
        .collect();
    let ranks = tape.constant(crate::ndmath::Tensor::new(vec![cells], ranks)?);
    let scaled = tape.mul(lambda, ranks)?;
    let neg = tape.scale(scaled, -S::one())?;
    let decay = tape.exp(neg)?;
    let weights = tape.mul(lambda, decay)?;
    let mask01: Vec<S> = grid.mask.iter().map(|&m| if m { S::one() } else { S::zero() }).collect();
    let mask01 = tape.constant(crate::ndmath::Tensor::new(vec![cells], mask01)?);
    tape.mul(weights, mask01)
}

/// Attention probabilities per cell: every unmasked cell's concept vector is
/// concatenated with the context vector, scored by the MLP, and soft-maxed
/// jointly over all unmasked cells of the grid.
pub fn attention_weights<S: Scalar>(
    tape: &mut Tape<S>,
    grid: &ResolvedGrid,
    concepts: Var,
    context: Var,
    net: &AttentionVars,
) -> Result<Var> {
    let cells = grid.cells();
    let vectors = tape.gather_rows(concepts, &grid.rows)?;
    let ctx = tape.repeat_rows(context, cells)?;
    let x = tape.concat(1, &[vectors, ctx])?;
    let h1 = tape.matmul(x, net.l1_w)?;
    let h1 = tape.add(h1, net.l1_b)?;
    let z1 = tape.tanh(h1)?;
    let h2 = tape.matmul(z1, net.l2_w)?;
    let h2 = tape.add(h2, net.l2_b)?;
    let z2 = tape.tanh(h2)?;
    let scores = tape.matmul(z2, net.out_w)?;
    let scores = tape.add(scores, net.out_b)?;
    let flat = tape.reshape(scores, vec![cells])?;
    tape.masked_softmax(flat, Some(&grid.mask))
}

/// Cellwise product of prior and attention, renormalized over the unmasked
/// cells.
pub fn joint_distribution<S: Scalar>(
    tape: &mut Tape<S>,
    prior: Var,
    attention: Var,
    grid: &ResolvedGrid,
) -> Result<Var> {
    let product = tape.mul(prior, attention)?;
    tape.masked_normalize(product, Some(&grid.mask))
}

/// Expectation of concept vectors under a cell distribution.
pub fn token_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    dist: Var,
    grid: &ResolvedGrid,
    concepts: Var,
) -> Result<Var> {
    let vectors = tape.gather_rows(concepts, &grid.rows)?;
    tape.matmul(dist, vectors)
}

/// Compute a token's embedding and its concept distribution.
///
/// `lambda_raw` is required for the prior-bearing modes and ignored under
/// `no-prior`; `context` is ignored under `no-attention`.
pub fn embed_token<S: Scalar>(
    tape: &mut Tape<S>,
    grid: &ResolvedGrid,
    concepts: Var,
    lambda_raw: Option<Var>,
    context: Var,
    net: &AttentionVars,
    mode: EmbedMode,
) -> Result<(Var, ConceptDistribution)> {
    let need_lambda = || {
        lambda_raw.ok_or(Error::Config {
            detail: "sense-prior modes require a lambda parameter".into(),
        })
    };
    let dist = match mode {
        EmbedMode::Full => {
            let prior = sense_prior_weights(tape, need_lambda()?, grid)?;
            let attention = attention_weights(tape, grid, concepts, context, net)?;
            joint_distribution(tape, prior, attention, grid)?
        }
        EmbedMode::NoPrior => attention_weights(tape, grid, concepts, context, net)?,
        EmbedMode::NoAttention => {
            let prior = sense_prior_weights(tape, need_lambda()?, grid)?;
            tape.masked_normalize(prior, Some(&grid.mask))?
        }
    };
    let u = token_embedding(tape, dist, grid, concepts)?;
    Ok((u, ConceptDistribution::from_var(tape, dist, grid)))
}

/// Parse a pretrained concept-vector file: a `count dim` header line, then
/// one `concept_id v1 .. vn` line per concept.
pub fn load_concept_vectors<R: Read>(
    reader: R,
    path_label: &str,
) -> Result<(HashMap<String, Vec<f64>>, usize)> {
    let mut lines = BufReader::new(reader).lines();
    let err = |line: usize, detail: String| Error::Parse {
        path: path_label.to_string(),
        line,
        detail,
    };
    let header = lines
        .next()
        .ok_or_else(|| err(1, "missing `count dim` header".into()))??;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(1, "bad count in header".into()))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(1, "bad dim in header".into()))?;
    let mut map = HashMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().ok_or_else(|| err(lineno, "empty line".into()))?;
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>().map_err(|e| err(lineno, format!("bad value: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(err(lineno, format!("expected {dim} values, got {}", values.len())));
        }
        map.insert(id.to_string(), values);
    }
    if map.len() != count {
        return Err(err(1, format!("header says {count} concepts, file has {}", map.len())));
    }
    Ok((map, dim))
}

/// Hit/miss report from applying a pretrained vector file to an embedding
/// matrix.
#[derive(Debug, Clone, Serialize)]
pub struct VectorLoadReport {
    pub hits: usize,
    pub misses: usize,
}
