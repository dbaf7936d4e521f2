//! Task heads and training losses: linear classifiers over single
//! sentences and concatenated pairs, cosine scoring, cross-entropy, MSE,
//! and the symmetric in-batch contrastive loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlotError, Result};
use crate::numeric::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, TapeId};

pub const INFONCE_DEFAULT_TEMPERATURE: f64 = 0.07;
const LOG_PROB_FLOOR: f64 = 1e-12;

/// Linear head `W z + b`. Regression uses one output column and no
/// softmax.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl HeadParams {
    pub fn init(in_dim: usize, out_dim: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        Self {
            w: store.register("head.w", glorot_uniform(in_dim, out_dim, rng)),
            b: store.register("head.b", Matrix::zeros(1, out_dim)),
            in_dim,
            out_dim,
        }
    }
}

fn check_in_dim(z: &Matrix, head: &HeadParams, op: &'static str) -> Result<()> {
    if z.cols() != head.in_dim {
        return Err(GlotError::ShapeMismatch {
            op,
            detail: format!("embedding dim {} vs head input {}", z.cols(), head.in_dim),
        });
    }
    Ok(())
}

/// Logits `Z W + b` for a batch of embeddings (one row each).
pub fn head_logits(
    tape: &mut Tape,
    store: &ParamStore,
    z: TapeId,
    head: &HeadParams,
) -> Result<TapeId> {
    check_in_dim(tape.value(z), head, "head_logits")?;
    let w = tape.param(store, head.w);
    let b = tape.param(store, head.b);
    let logits = tape.matmul(z, w)?;
    tape.add_row_broadcast(logits, b)
}

/// Class probabilities for single-sentence rows.
pub fn classify_single(
    tape: &mut Tape,
    store: &ParamStore,
    z: TapeId,
    head: &HeadParams,
) -> Result<TapeId> {
    let logits = head_logits(tape, store, z, head)?;
    Ok(tape.row_softmax(logits))
}

/// Class probabilities for sentence pairs: the embeddings are
/// concatenated channel-wise and fed to the same linear head form.
pub fn classify_pair(
    tape: &mut Tape,
    store: &ParamStore,
    z_a: TapeId,
    z_b: TapeId,
    head: &HeadParams,
) -> Result<TapeId> {
    let cat = tape.concat_cols(&[z_a, z_b])?;
    classify_single(tape, store, cat, head)
}

/// Raw linear output, one column; used for regression targets.
pub fn regression_output(
    tape: &mut Tape,
    store: &ParamStore,
    z: TapeId,
    head: &HeadParams,
) -> Result<TapeId> {
    head_logits(tape, store, z, head)
}

/// Cosine similarity between two embeddings. A zero vector scores 0.
pub fn cosine_score(a: &[f64], b: &[f64]) -> f64 {
    let dot = crate::numeric::dot(a, b);
    let na = crate::numeric::dot(a, a).sqrt();
    let nb = crate::numeric::dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        log::warn!("cosine_score on zero vector, returning 0");
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean negative log-probability of the true classes. Probabilities are
/// clamped at 1e-12 before the log.
pub fn cross_entropy_loss(tape: &mut Tape, probs: TapeId, labels: &[usize]) -> Result<TapeId> {
    let (rows, cols) = tape.value(probs).shape();
    if labels.len() != rows {
        return Err(GlotError::ShapeMismatch {
            op: "cross_entropy_loss",
            detail: format!("{} labels for {rows} rows", labels.len()),
        });
    }
    let mut one_hot = Matrix::zeros(rows, cols);
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(GlotError::ShapeMismatch {
                op: "cross_entropy_loss",
                detail: format!("label {label} out of {cols} classes"),
            });
        }
        one_hot.set(r, label, 1.0);
    }
    let mask = tape.constant(one_hot);
    let picked = tape.mul(probs, mask)?;
    let p_true = tape.row_sum(picked);
    let clamped = tape.clamp_min(p_true, LOG_PROB_FLOOR);
    let logp = tape.log(clamped);
    let total = tape.sum_all(logp);
    Ok(tape.scale_const(total, -1.0 / rows as f64))
}

/// Mean squared error against constant targets; predictions are a single
/// column.
pub fn mse_loss(tape: &mut Tape, pred: TapeId, targets: &[f64]) -> Result<TapeId> {
    let (rows, cols) = tape.value(pred).shape();
    if cols != 1 || targets.len() != rows {
        return Err(GlotError::ShapeMismatch {
            op: "mse_loss",
            detail: format!("pred {rows}x{cols} vs {} targets", targets.len()),
        });
    }
    let t = tape.constant(Matrix::from_vec(rows, 1, targets.to_vec())?);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale_const(total, 1.0 / rows as f64))
}

fn normalize_rows_on_tape(tape: &mut Tape, z: TapeId) -> Result<TapeId> {
    let sq = tape.mul(z, z)?;
    let norms_sq = tape.row_sum(sq);
    let safe = tape.clamp_min(norms_sq, 1e-24);
    let norms = tape.sqrt(safe);
    let inv = tape.recip(norms);
    tape.mul_col_broadcast(z, inv)
}

/// Symmetric in-batch contrastive loss: cosine-similarity logits scaled
/// by 1/temperature, cross-entropy along rows and columns with the
/// diagonal as positives, averaged.
pub fn symmetric_infonce(
    tape: &mut Tape,
    z_q: TapeId,
    z_d: TapeId,
    temperature: f64,
) -> Result<TapeId> {
    let (b, d) = tape.value(z_q).shape();
    if tape.value(z_d).shape() != (b, d) {
        return Err(GlotError::ShapeMismatch {
            op: "symmetric_infonce",
            detail: format!("{:?} vs {:?}", (b, d), tape.value(z_d).shape()),
        });
    }
    if b < 2 {
        return Err(GlotError::DegenerateBatch(b));
    }
    if temperature <= 0.0 {
        return Err(GlotError::InvalidConfig("temperature must be positive".into()));
    }
    let nq = normalize_rows_on_tape(tape, z_q)?;
    let nd = normalize_rows_on_tape(tape, z_d)?;
    let nd_t = tape.transpose(nd);
    let sims = tape.matmul(nq, nd_t)?;
    let logits = tape.scale_const(sims, 1.0 / temperature);

    let diagonal: Vec<usize> = (0..b).collect();
    let probs_rows = tape.row_softmax(logits);
    let loss_rows = cross_entropy_loss(tape, probs_rows, &diagonal)?;

    let logits_t = tape.transpose(logits);
    let probs_cols = tape.row_softmax(logits_t);
    let loss_cols = cross_entropy_loss(tape, probs_cols, &diagonal)?;

    let sum = tape.add(loss_rows, loss_cols)?;
    Ok(tape.scale_const(sum, 0.5))
}
