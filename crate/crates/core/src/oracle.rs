//! Least-squares reconstruction from a token subset and the exhaustive
//! best-subset search used as independent ground truth.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest token count the exhaustive search accepts.
pub const MAX_ORACLE_TOKENS: usize = 20;

/// Basis vectors whose remaining norm falls below this fraction of their
/// original norm are treated as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Orthonormal basis of the span of `rows`, by modified Gram-Schmidt with
/// one re-orthogonalisation pass.
fn orthonormal_basis(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let norm0 = dot(r, r).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = r.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > DEPENDENCE_TOL * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rows_f64<T: Scalar>(features: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..features.rows())
        .map(|i| features.row(i).iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn check_indices(tokens: usize, retained: &[usize]) -> Result<()> {
    if let Some(&i) = retained.iter().find(|&&i| i >= tokens) {
        return Err(Error::Capacity(format!("token index {i} out of range for {tokens} tokens")));
    }
    Ok(())
}

/// Squared residual of every token after projecting onto the span of the
/// retained tokens.
fn residual_sq(rows: &[Vec<f64>], retained: &[usize]) -> f64 {
    let chosen: Vec<Vec<f64>> = retained.iter().map(|&i| rows[i].clone()).collect();
    let basis = orthonormal_basis(&chosen);
    let mut total = 0.0;
    for (i, r) in rows.iter().enumerate() {
        if retained.contains(&i) {
            continue;
        }
        let mut v = r.clone();
        for q in &basis {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        total += dot(&v, &v);
    }
    total
}

/// RMSE over all `L·C` entries when every token outside `retained` is
/// replaced by its least-squares fit from the retained tokens. Retained
/// tokens contribute zero error.
pub fn least_squares_residual<T: Scalar>(features: &Tensor<T>, retained: &[usize]) -> Result<f64> {
    check_indices(features.rows(), retained)?;
    let rows = rows_f64(features);
    Ok((residual_sq(&rows, retained) / features.len().max(1) as f64).sqrt())
}

/// Lexicographic `k`-combinations of `0..n`.
struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Sorted retained indices of the best subset.
    pub indices: Vec<usize>,
    pub residual: f64,
}

/// Exhaustively searches every `k`-subset for the smallest
/// [`least_squares_residual`]. The first minimum in lexicographic order wins.
pub fn oracle_best_subset<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<OracleResult> {
    let l = features.rows();
    if l > MAX_ORACLE_TOKENS {
        return Err(Error::Capacity(format!(
            "exhaustive search supports at most {MAX_ORACLE_TOKENS} tokens, got {l}"
        )));
    }
    if k == 0 || k > l {
        return Err(Error::config(format!("subset size must lie in 1..={l}, got {k}")));
    }
    let rows = rows_f64(features);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in Combinations::new(l, k) {
        let r = residual_sq(&rows, &subset);
        if best.as_ref().is_none_or(|(_, b)| r < *b) {
            best = Some((subset, r));
        }
    }
    let (indices, r) = best.expect("at least one subset");
    Ok(OracleResult {
        indices,
        residual: (r / features.len().max(1) as f64).sqrt(),
    })
}
