//! Attention built from tape primitives.

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// `softmax(query · keysᵀ / √d) · values`, differentiable in all three inputs.
///
/// `query` is `n_q × d`, `keys` is `m × d`, `values` is `m × d_v`.
pub fn attention(tape: &Tape, query: Var, keys: Var, values: Var) -> Result<Var> {
    attention_masked(tape, query, keys, values, false)
}

/// Attention with an optional causal mask (query row `i` sees key rows `0..=i`).
pub fn attention_masked(tape: &Tape, query: Var, keys: Var, values: Var, causal: bool) -> Result<Var> {
    let weights = attention_weights(tape, query, keys, causal)?;
    tape.matmul(weights, values)
}

/// The row-stochastic weight matrix of [`attention`].
pub fn attention_weights(tape: &Tape, query: Var, keys: Var, causal: bool) -> Result<Var> {
    let [_, dq] = tape.shape(query);
    let [_, dk] = tape.shape(keys);
    if dq != dk {
        return Err(AutodiffError::Shape {
            op: "attention",
            left: tape.shape(query),
            right: tape.shape(keys),
        });
    }
    let scores = tape.matmul_t(query, keys)?;
    let mut scaled = tape.scale(scores, 1.0 / (dq as f64).sqrt())?;
    if causal {
        scaled = tape.causal_mask(scaled)?;
    }
    tape.softmax(scaled)
}

/// Splits the feature dimension into `heads` equal slices, attends per head and
/// concatenates the head outputs.
pub fn multi_head_attention(tape: &Tape, query: Var, keys: Var, values: Var, heads: usize, causal: bool) -> Result<Var> {
    let d = tape.shape(query)[1];
    if heads == 0 || d % heads != 0 || tape.shape(values)[1] != d {
        return Err(AutodiffError::Invalid {
            op: "multi_head_attention",
            reason: format!("width {d} not divisible into {heads} heads"),
        });
    }
    if heads == 1 {
        return attention_masked(tape, query, keys, values, causal);
    }
    let hd = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(query, h * hd, (h + 1) * hd)?;
        let k = tape.slice_cols(keys, h * hd, (h + 1) * hd)?;
        let v = tape.slice_cols(values, h * hd, (h + 1) * hd)?;
        outs.push(attention_masked(tape, q, k, v, causal)?);
    }
    tape.concat_cols(&outs)
}

/// Tape-free attention weights of a single query row over `keys`.
pub fn attention_row_weights(query: &[f64], keys: &Tensor) -> Result<Vec<f64>> {
    if query.len() != keys.cols() {
        return Err(AutodiffError::Shape {
            op: "attention",
            left: [1, query.len()],
            right: keys.shape(),
        });
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let mut w: Vec<f64> = (0..keys.rows())
        .map(|r| tensor::dot(query, keys.row(r)) * scale)
        .collect();
    tensor::softmax_in_place(&mut w);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: usize, cols: usize, offset: f64) -> Tensor {
        let data = (0..rows * cols).map(|i| ((i as f64 + offset) * 0.37).sin()).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn single_key_returns_its_value() {
        let tape = Tape::new();
        let q = tape.constant(seq(3, 4, 0.0));
        let k = tape.constant(seq(1, 4, 5.0));
        let v = tape.constant(seq(1, 4, 9.0));
        let out = attention(&tape, q, k, v).unwrap();
        let out = tape.value(out);
        let vv = seq(1, 4, 9.0);
        for r in 0..3 {
            assert_eq!(out.row(r), vv.row(0));
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let tape = Tape::new();
        let q = tape.constant(seq(5, 8, 1.0));
        let k = tape.constant(seq(7, 8, 2.0));
        let w = tape.value(attention_weights(&tape, q, k, false).unwrap());
        for r in 0..5 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn joint_key_value_permutation_is_invisible() {
        let keys = seq(6, 4, 3.0);
        let values = seq(6, 4, 11.0);
        let perm = [3, 0, 5, 1, 4, 2];
        let pk = Tensor::from_rows(&perm.iter().map(|&i| keys.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pv = Tensor::from_rows(&perm.iter().map(|&i| values.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let run = |k: Tensor, v: Tensor| {
            let tape = Tape::new();
            let q = tape.constant(seq(2, 4, 0.5));
            let (k, v) = (tape.constant(k), tape.constant(v));
            let out = attention(&tape, q, k, v).unwrap();
            (*tape.value(out)).clone()
        };
        let a = run(keys, values);
        let b = run(pk, pv);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn mismatched_width_is_rejected() {
        let tape = Tape::new();
        let q = tape.constant(seq(1, 4, 0.0));
        let k = tape.constant(seq(3, 5, 0.0));
        let v = tape.constant(seq(3, 5, 0.0));
        assert!(matches!(attention(&tape, q, k, v), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn causal_rows_ignore_future_keys() {
        let tape = Tape::new();
        let x = tape.constant(seq(4, 4, 0.0));
        let w = tape.value(attention_weights(&tape, x, x, true).unwrap());
        for r in 0..4 {
            for c in r + 1..4 {
                assert_eq!(w.get(r, c), 0.0);
            }
        }
    }
}
