//! Two-class Gumbel-Softmax sampling with a straight-through hard mask.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{softmax_slice, Tensor};

/// Column of the selector head holding the keep logit.
pub const KEEP: usize = 0;
/// Column of the selector head holding the drop logit.
pub const DROP: usize = 1;

const UNIFORM_CLAMP: f64 = 1e-10;

/// Per-token keep/drop decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelMask<T> {
    /// Exactly 0 or 1 per token.
    pub hard: Vec<T>,
    /// Keep probability of the relaxed sample.
    pub soft: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> GumbelMask<T> {
    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.hard.iter().filter(|&&h| h == T::one()).count()
    }

    /// A mask with fixed hard values; soft mirrors hard.
    pub fn from_hard(hard: Vec<T>) -> Self {
        GumbelMask {
            soft: hard.clone(),
            hard,
            temperature: T::one(),
        }
    }
}

/// Which mask value the forward pass consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPath {
    /// Binary forward value, gradients routed through the soft sample.
    StraightThrough,
    /// Relaxed forward value; the loss is a smooth function of the logits.
    Soft,
}

/// `−log(−log(u))` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

pub fn sample_gumbel_noise<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n)
        .map(|_| T::of(gumbel_from_uniform(rng.random::<f64>())))
        .collect()
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn check_logits<T: Scalar>(logits: &Tensor<T>) -> Result<()> {
    if logits.shape().len() != 2 || logits.cols() != 2 {
        return Err(Error::shape("gumbel logits", logits.shape(), &[0, 2]));
    }
    Ok(())
}

/// Relaxed sample from explicit noise. `noise` is laid out like `logits`.
pub fn gumbel_softmax_with_noise<T: Scalar>(
    logits: &Tensor<T>,
    noise: &Tensor<T>,
    tau: T,
) -> Result<GumbelMask<T>> {
    check_tau(tau)?;
    check_logits(logits)?;
    logits.same_shape(noise, "gumbel noise")?;
    let mut soft = Vec::with_capacity(logits.rows());
    let mut probs = [T::zero(); 2];
    for i in 0..logits.rows() {
        let z = [
            (logits.get(i, KEEP) + noise.get(i, KEEP)) / tau,
            (logits.get(i, DROP) + noise.get(i, DROP)) / tau,
        ];
        softmax_slice(&z, &mut probs);
        soft.push(probs[KEEP]);
    }
    Ok(GumbelMask {
        hard: harden(&soft),
        soft,
        temperature: tau,
    })
}

/// Draws fresh noise for both classes of every token and relaxes.
pub fn gumbel_softmax_2class<T: Scalar, R: Rng + ?Sized>(
    logits: &Tensor<T>,
    tau: T,
    rng: &mut R,
) -> Result<GumbelMask<T>> {
    check_logits(logits)?;
    let noise = Tensor::new(logits.shape().to_vec(), sample_gumbel_noise(logits.len(), rng))?;
    gumbel_softmax_with_noise(logits, &noise, tau)
}

/// Ties at exactly 0.5 drop the token.
fn harden<T: Scalar>(soft: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    soft.iter()
        .map(|&s| if s > half { T::one() } else { T::zero() })
        .collect()
}

/// Noise-free ranking score `logit_keep − logit_drop` per token.
pub fn keep_scores<T: Scalar>(logits: &Tensor<T>) -> Vec<T> {
    (0..logits.rows())
        .map(|i| logits.get(i, KEEP) - logits.get(i, DROP))
        .collect()
}

/// Records the relaxed sample on `g` and returns the `[L, 1]` mask node
/// consumed downstream, together with the plain mask values.
pub fn gumbel_mask_on_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    noise: Tensor<T>,
    tau: T,
    path: MaskPath,
) -> Result<(Var, GumbelMask<T>)> {
    check_tau(tau)?;
    check_logits(g.value(logits))?;
    let noise = g.constant(noise);
    let perturbed = g.add(logits, noise)?;
    let scaled = g.scale(perturbed, tau.recip());
    let probs = g.softmax(scaled);
    let soft = g.slice_cols(probs, KEEP, KEEP + 1)?;
    let soft_values = g.value(soft).data().to_vec();
    let hard_values = harden(&soft_values);
    let mask = match path {
        MaskPath::StraightThrough => {
            let hard = Tensor::new(g.value(soft).shape().to_vec(), hard_values.clone())?;
            g.straight_through(soft, hard)?
        }
        MaskPath::Soft => soft,
    };
    Ok((
        mask,
        GumbelMask {
            hard: hard_values,
            soft: soft_values,
            temperature: tau,
        },
    ))
}
