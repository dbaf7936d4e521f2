//! Dense matrix arithmetic, the reverse-mode tape, and the Adam optimizer.

pub mod matrix;
pub mod param;
pub mod tape;

pub use matrix::{dot, Matrix};
pub use param::{adam_step, AdamConfig, ParamId, ParamStore, Parameter};
pub use tape::{Tape, TapeId};

use rand::Rng;

use crate::error::{GlotError, Result};

/// Pairwise cosine similarities between the rows of `x`.
///
/// The result is exactly symmetric (the upper triangle is mirrored), the
/// diagonal is exactly 1 for rows with nonzero norm, and any pair that
/// involves a row of norm below 1e-12 gets similarity 0 so degenerate
/// tokens never create edges.
pub fn cosine_similarity_matrix(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(GlotError::EmptySentence);
    }
    if !x.is_finite() {
        return Err(GlotError::NonFinite("cosine_similarity_matrix"));
    }
    let l = x.rows();
    let normalized = normalize_rows(x);

    // Upper triangle per row, computed independently so rows can run in
    // parallel; the mirror fill below is sequential and cheap.
    let upper: Vec<Vec<f64>> = crate::par::map_indexed(l, |i| {
        let ni = normalized.row(i);
        (i..l).map(|j| dot(ni, normalized.row(j))).collect()
    });

    let mut s = Matrix::zeros(l, l);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    for i in 0..l {
        if normalized.row(i).iter().any(|&v| v != 0.0) {
            s.set(i, i, 1.0);
        } else {
            s.set(i, i, 0.0);
        }
    }
    Ok(s)
}

fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = dot(row, row).sqrt();
        if norm < 1e-12 {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(GlotError::NonFinite("row_softmax"));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Glorot-style uniform init over `[-sqrt(6/(fan_in+fan_out)), +..]`,
/// with fan_in = rows and fan_out = cols.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("glorot values are finite")
}
