//! Scaled dot-product attention and its neighboring-view variant.
//!
//! Token sets are matrices with one token per row.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Tokens = DMatrix<f64>;

/// `softmax(Q Kᵀ / √d) V`, softmax over each query row.
pub fn attention(q: &Tokens, k: &Tokens, v: &Tokens) -> Result<Tokens> {
    if q.ncols() != k.ncols() {
        return Err(Error::DimensionMismatch(format!("query dim {} vs key dim {}", q.ncols(), k.ncols())));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::DimensionMismatch(format!("{} keys vs {} values", k.nrows(), v.nrows())));
    }
    if k.nrows() == 0 {
        return Err(Error::DimensionMismatch("attention over an empty key set".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut scores = q * k.transpose() * scale;
    for mut row in scores.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        row /= sum;
    }
    Ok(scores * v)
}

/// Self-attention of one view; identical to [`nv_attention`] on a group of one.
pub fn self_attention(q: &Tokens, k: &Tokens, v: &Tokens) -> Result<Tokens> {
    nv_attention(std::slice::from_ref(q), std::slice::from_ref(k), std::slice::from_ref(v))
        .map(|mut out| out.remove(0))
}

/// Stacks token sets vertically in the given order.
pub fn concat_rows(parts: &[Tokens]) -> Result<Tokens> {
    let d = parts.first().map(|p| p.ncols()).unwrap_or(0);
    if parts.iter().any(|p| p.ncols() != d) {
        return Err(Error::DimensionMismatch("views disagree on token dimension".into()));
    }
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Tokens::zeros(rows, d);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    Ok(out)
}

/// Each view's queries attend over the keys and values of every view in
/// the group, concatenated in group order.
pub fn nv_attention(queries: &[Tokens], keys: &[Tokens], values: &[Tokens]) -> Result<Vec<Tokens>> {
    if queries.is_empty() {
        return Err(Error::DimensionMismatch("empty view group".into()));
    }
    if queries.len() != keys.len() || keys.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} query sets, {} key sets, {} value sets",
            queries.len(),
            keys.len(),
            values.len()
        )));
    }
    let d = queries[0].ncols();
    if queries.iter().chain(keys).any(|m| m.ncols() != d) {
        return Err(Error::DimensionMismatch("views disagree on token dimension".into()));
    }
    let k_nv = concat_rows(keys)?;
    let v_nv = concat_rows(values)?;
    queries.iter().map(|q| attention(q, &k_nv, &v_nv)).collect()
}
