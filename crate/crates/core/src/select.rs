//! Inference-time token selection and the subset comparison criterion.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::gumbel::keep_scores;
use crate::networks::{ReconstructorNetwork, SelectorNetwork};
use crate::scalar::Scalar;
use crate::tensor::{frobenius_rmse, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult<T> {
    /// Strictly increasing token indices.
    pub retained_indices: Vec<usize>,
    /// Keep score per token; empty for the random policy.
    pub scores: Vec<T>,
    /// Rows of the input at `retained_indices`.
    pub pruned: Tensor<T>,
    pub ratio: f64,
}

/// `max(1, round(ratio·L))` for `ratio` in `(0, 1]`.
pub fn retained_count(ratio: f64, tokens: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(((ratio * tokens as f64).round() as usize).clamp(1, tokens.max(1)))
}

/// Token order by descending score; equal scores keep the lower index first.
pub fn rank_by_score<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].as_f64().total_cmp(&scores[a].as_f64()).then(a.cmp(&b)));
    order
}

/// Keeps the `k` best-scoring tokens.
pub fn select_by_scores<T: Scalar>(features: &Tensor<T>, scores: Vec<T>, ratio: f64) -> Result<SelectionResult<T>> {
    if scores.len() != features.rows() {
        return Err(Error::shape("select_by_scores", features.shape(), &[scores.len()]));
    }
    let k = retained_count(ratio, features.rows())?;
    let mut retained_indices = rank_by_score(&scores)[..k].to_vec();
    retained_indices.sort_unstable();
    Ok(SelectionResult {
        pruned: features.select_rows(&retained_indices)?,
        retained_indices,
        scores,
        ratio,
    })
}

/// Ranks tokens by the selector's noise-free keep scores.
pub fn select_top_k<T: Scalar>(
    selector: &SelectorNetwork<T>,
    features: &Tensor<T>,
    ratio: f64,
) -> Result<SelectionResult<T>> {
    retained_count(ratio, features.rows())?;
    let scores = keep_scores(&selector.logits(features)?);
    select_by_scores(features, scores, ratio)
}

/// Uniform `k`-subset without replacement.
pub fn select_random<T: Scalar, R: Rng + ?Sized>(
    features: &Tensor<T>,
    ratio: f64,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    let k = retained_count(ratio, features.rows())?;
    let mut retained_indices = index::sample(rng, features.rows(), k).into_vec();
    retained_indices.sort_unstable();
    Ok(SelectionResult {
        pruned: features.select_rows(&retained_indices)?,
        retained_indices,
        scores: Vec::new(),
        ratio,
    })
}

/// The pruned record emitted at inference. The grid is kept only when every
/// token survives, since a partial selection no longer tiles it.
pub fn pruned_feature_set<T: Scalar>(set: &FeatureSet<T>, selection: &SelectionResult<T>) -> Result<FeatureSet<T>> {
    let grid = if selection.retained_indices.len() == set.tokens() {
        set.grid
    } else {
        None
    };
    FeatureSet::new(set.id.clone(), selection.pruned.clone(), grid)
}

fn check_subset(tokens: usize, subset: &[usize]) -> Result<()> {
    let mut seen = vec![false; tokens];
    for &i in subset {
        if i >= tokens {
            return Err(Error::Capacity(format!("token index {i} out of range for {tokens} tokens")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::config(format!("token index {i} appears twice")));
        }
    }
    Ok(())
}

/// The input with every row outside `subset` replaced by `masked`.
pub fn fill_dropped<T: Scalar>(features: &Tensor<T>, subset: &[usize], masked: &Tensor<T>) -> Result<Tensor<T>> {
    check_subset(features.rows(), subset)?;
    if masked.len() != features.cols() {
        return Err(Error::shape("fill_dropped", features.shape(), masked.shape()));
    }
    let mut keep = vec![false; features.rows()];
    subset.iter().for_each(|&i| keep[i] = true);
    let mut out = features.clone();
    for (i, _) in keep.iter().enumerate().filter(|(_, k)| !**k) {
        out.row_mut(i).copy_from_slice(masked.data());
    }
    Ok(out)
}

/// RMSE between the input and its reconstruction from `subset`.
pub fn subset_distance<T: Scalar>(
    reconstructor: &ReconstructorNetwork<T>,
    features: &Tensor<T>,
    subset: &[usize],
    masked: &Tensor<T>,
) -> Result<T> {
    let filled = fill_dropped(features, subset, masked)?;
    frobenius_rmse(&reconstructor.forward(&filled)?, features)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsetOrdering {
    /// The first subset reconstructs strictly better.
    A,
    B,
    Tie,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetComparison<T> {
    pub ordering: SubsetOrdering,
    pub distance_a: T,
    pub distance_b: T,
}

/// Which subset reconstructs the full input more closely.
pub fn compare_subsets<T: Scalar>(
    reconstructor: &ReconstructorNetwork<T>,
    features: &Tensor<T>,
    subset_a: &[usize],
    subset_b: &[usize],
    masked: &Tensor<T>,
) -> Result<SubsetComparison<T>> {
    let distance_a = subset_distance(reconstructor, features, subset_a, masked)?;
    let distance_b = subset_distance(reconstructor, features, subset_b, masked)?;
    let ordering = match distance_a.partial_cmp(&distance_b) {
        Some(Ordering::Less) => SubsetOrdering::A,
        Some(Ordering::Greater) => SubsetOrdering::B,
        _ => SubsetOrdering::Tie,
    };
    Ok(SubsetComparison {
        ordering,
        distance_a,
        distance_b,
    })
}
