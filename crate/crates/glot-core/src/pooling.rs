//! Sentence poolers: the attention readout used after the token GNN, and
//! the baselines (mean, max, boundary token, adaptive scoring).
//!
//! Poolers consume only valid (unmasked) rows. Returned token-weight
//! vectors are aligned to the original token positions, with exactly zero
//! weight on padding.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::HiddenStates;
use crate::error::{GlotError, Result};
use crate::gnn::{token_gnn_forward, GnnConfig, GnnParams};
use crate::graph::{batch_graphs, build_token_graphs, GraphConfig};
use crate::numeric::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, TapeId};

/// Attention readout parameters: `m_i = v^T tanh(W_m u_i + b_m)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub w_m: ParamId,
    pub b_m: ParamId,
    pub v: ParamId,
}

impl ReadoutParams {
    pub fn init(fused_dim: usize, hidden: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        Self {
            w_m: store.register("readout.w_m", glorot_uniform(fused_dim, hidden, rng)),
            b_m: store.register("readout.b_m", Matrix::zeros(1, hidden)),
            v: store.register("readout.v", glorot_uniform(hidden, 1, rng)),
        }
    }
}

/// Two-layer scoring perceptron with tanh, softmax over tokens, weighted
/// average.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaPoolParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl AdaPoolParams {
    pub fn init(input_dim: usize, hidden: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        Self {
            w1: store.register("adapool.w1", glorot_uniform(input_dim, hidden, rng)),
            b1: store.register("adapool.b1", Matrix::zeros(1, hidden)),
            w2: store.register("adapool.w2", glorot_uniform(hidden, 1, rng)),
            b2: store.register("adapool.b2", Matrix::zeros(1, 1)),
        }
    }
}

/// Everything the graph pooler trains: input projection, GNN layers, and
/// the readout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlotPoolParams {
    pub gnn: GnnParams,
    pub readout: ReadoutParams,
}

impl GlotPoolParams {
    pub fn init(
        cfg: &GnnConfig,
        readout_hidden: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let gnn = GnnParams::init(cfg, store, rng);
        let readout = ReadoutParams::init(cfg.fused_dim(), readout_hidden, store, rng);
        Self { gnn, readout }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// First valid token (encoder CLS convention).
    First,
    /// Last valid token (decoder EOS convention).
    Last,
}

/// Valid rows of a batch stacked for segment-wise ops.
pub struct ValidBatch {
    pub stacked: Matrix,
    pub batch_index: Vec<usize>,
    pub n_sentences: usize,
    /// Original (sentence, token) position of each stacked row.
    pub origins: Vec<(usize, usize)>,
}

/// Drops masked rows and stacks the batch. Rejects sentences with no
/// valid token.
pub fn stack_valid(batch: &[HiddenStates]) -> Result<ValidBatch> {
    if batch.is_empty() {
        return Err(GlotError::EmptyBatch("stack_valid"));
    }
    let dim = batch[0].dim();
    let mut rows = Vec::new();
    let mut batch_index = Vec::new();
    let mut origins = Vec::new();
    for (s, h) in batch.iter().enumerate() {
        if h.dim() != dim {
            return Err(GlotError::ShapeMismatch {
                op: "stack_valid",
                detail: format!("sentence {s} has dim {}, expected {dim}", h.dim()),
            });
        }
        let before = rows.len();
        for (t, row) in h.valid_rows_indexed() {
            rows.push(row.to_vec());
            batch_index.push(s);
            origins.push((s, t));
        }
        if rows.len() == before {
            return Err(GlotError::EmptySentence);
        }
    }
    Ok(ValidBatch {
        stacked: Matrix::from_rows(&rows)?,
        batch_index,
        n_sentences: batch.len(),
        origins,
    })
}

/// Attention readout over fused token states: score, softmax per
/// sentence, weighted sum. Returns the sentence matrix and the weight
/// column.
pub fn attention_readout(
    tape: &mut Tape,
    store: &ParamStore,
    u: TapeId,
    batch_index: &[usize],
    n_sentences: usize,
    params: &ReadoutParams,
) -> Result<(TapeId, TapeId)> {
    let w_m = tape.param(store, params.w_m);
    let b_m = tape.param(store, params.b_m);
    let v = tape.param(store, params.v);
    let pre = tape.matmul(u, w_m)?;
    let pre = tape.add_row_broadcast(pre, b_m)?;
    let squashed = tape.tanh(pre);
    let scores = tape.matmul(squashed, v)?;
    let seg = Arc::new(batch_index.to_vec());
    let pi = tape.segment_softmax(scores, Arc::clone(&seg))?;
    let weighted = tape.mul_col_broadcast(u, pi)?;
    let z = tape.segment_sum(weighted, seg, n_sentences)?;
    Ok((z, pi))
}

/// Adaptive scoring pooler on stacked valid tokens.
pub fn adapool_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: TapeId,
    batch_index: &[usize],
    n_sentences: usize,
    params: &AdaPoolParams,
) -> Result<(TapeId, TapeId)> {
    let w1 = tape.param(store, params.w1);
    let b1 = tape.param(store, params.b1);
    let w2 = tape.param(store, params.w2);
    let b2 = tape.param(store, params.b2);
    let pre = tape.matmul(h, w1)?;
    let pre = tape.add_row_broadcast(pre, b1)?;
    let squashed = tape.tanh(pre);
    let scores = tape.matmul(squashed, w2)?;
    let scores = tape.add_row_broadcast(scores, b2)?;
    let seg = Arc::new(batch_index.to_vec());
    let pi = tape.segment_softmax(scores, Arc::clone(&seg))?;
    let weighted = tape.mul_col_broadcast(h, pi)?;
    let z = tape.segment_sum(weighted, seg, n_sentences)?;
    Ok((z, pi))
}

/// Mean over valid rows.
pub fn mean_pool(h: &HiddenStates) -> Result<Vec<f64>> {
    let valid: Vec<&[f64]> = h.valid_rows_indexed().map(|(_, r)| r).collect();
    if valid.is_empty() {
        return Err(GlotError::EmptySentence);
    }
    let mut out = vec![0.0; h.dim()];
    for row in &valid {
        for (o, v) in out.iter_mut().zip(*row) {
            *o += v;
        }
    }
    let n = valid.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Columnwise max over valid rows.
pub fn max_pool(h: &HiddenStates) -> Result<Vec<f64>> {
    let mut iter = h.valid_rows_indexed().map(|(_, r)| r);
    let first = iter.next().ok_or(GlotError::EmptySentence)?;
    let mut out = first.to_vec();
    for row in iter {
        for (o, v) in out.iter_mut().zip(row) {
            if *v > *o {
                *o = *v;
            }
        }
    }
    Ok(out)
}

/// First or last valid row.
pub fn boundary_token_pool(h: &HiddenStates, which: Boundary) -> Result<Vec<f64>> {
    let mut valid = h.valid_rows_indexed().map(|(_, r)| r);
    match which {
        Boundary::First => valid.next().map(|r| r.to_vec()).ok_or(GlotError::EmptySentence),
        Boundary::Last => valid.last().map(|r| r.to_vec()).ok_or(GlotError::EmptySentence),
    }
}

/// Adaptive pooler over one sentence; returns the embedding and weights
/// aligned to original token positions (zero on padding).
pub fn adapool(
    h: &HiddenStates,
    params: &AdaPoolParams,
    store: &ParamStore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let batch = [h.clone()];
    let vb = stack_valid(&batch)?;
    let mut tape = Tape::new();
    let hv = tape.constant(vb.stacked.clone());
    let (z, pi) = adapool_forward(&mut tape, store, hv, &vb.batch_index, 1, params)?;
    let weights = scatter_weights(tape.value(pi), &vb.origins, &batch);
    Ok((tape.value(z).row(0).to_vec(), weights.into_iter().next().expect("one sentence")))
}

/// The full graph pooling pipeline for a batch: valid-token extraction,
/// per-sentence graph construction (parallel), block-diagonal batching,
/// GNN refinement, attention readout.
///
/// Returns one embedding row per sentence plus per-sentence token weights
/// aligned to original positions.
pub fn glot_pool_batch(
    batch: &[HiddenStates],
    graph_cfg: &GraphConfig,
    gnn_cfg: &GnnConfig,
    params: &GlotPoolParams,
    store: &ParamStore,
) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let (z, pi, vb) =
        glot_forward_on_tape(&mut tape, store, batch, graph_cfg, gnn_cfg, params)?;
    let weights = scatter_weights(tape.value(pi), &vb.origins, batch);
    Ok((tape.value(z).clone(), weights))
}

/// One sentence; see [`glot_pool_batch`].
pub fn glot_pool(
    h: &HiddenStates,
    graph_cfg: &GraphConfig,
    gnn_cfg: &GnnConfig,
    params: &GlotPoolParams,
    store: &ParamStore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (z, mut weights) =
        glot_pool_batch(std::slice::from_ref(h), graph_cfg, gnn_cfg, params, store)?;
    Ok((z.row(0).to_vec(), weights.remove(0)))
}

/// Tape-level entry used by the trainer so gradients flow end to end.
pub fn glot_forward_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[HiddenStates],
    graph_cfg: &GraphConfig,
    gnn_cfg: &GnnConfig,
    params: &GlotPoolParams,
) -> Result<(TapeId, TapeId, ValidBatch)> {
    let vb = stack_valid(batch)?;
    let sentences: Vec<Matrix> = {
        let mut per_sentence: Vec<Vec<Vec<f64>>> = vec![Vec::new(); batch.len()];
        for (row, &(s, _)) in vb.origins.iter().enumerate() {
            per_sentence[s].push(vb.stacked.row(row).to_vec());
        }
        per_sentence
            .into_iter()
            .map(|rows| Matrix::from_rows(&rows))
            .collect::<Result<_>>()?
    };
    let graphs = build_token_graphs(&sentences, graph_cfg)?;
    let g = batch_graphs(&graphs)?;

    let x = tape.constant(g.node_features.clone());
    let fused = token_gnn_forward(tape, store, x, &g, gnn_cfg, &params.gnn)?;
    let (z, pi) =
        attention_readout(tape, store, fused, &g.batch_index, g.n_graphs(), &params.readout)?;
    Ok((z, pi, vb))
}

/// Maps stacked per-valid-token weights back onto original token
/// positions; masked positions get exactly 0.
fn scatter_weights(pi: &Matrix, origins: &[(usize, usize)], batch: &[HiddenStates]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = batch.iter().map(|h| vec![0.0; h.len()]).collect();
    for (row, &(s, t)) in origins.iter().enumerate() {
        out[s][t] = pi.get(row, 0);
    }
    out
}
