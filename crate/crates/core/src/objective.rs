//! Masked-feature construction, retention penalty and the training loss
//! `rmse(R(S(F)), F) + max(L_pr, p)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad_check::{grad_check, GradCheckOptions, GradCheckReport};
use crate::gumbel::{gumbel_mask_on_graph, sample_gumbel_noise, GumbelMask, MaskPath};
use crate::networks::{Parameters, ReconstructorNetwork, SelectorNetwork};
use crate::scalar::Scalar;
use crate::tape::Graph;
use crate::tensor::{frobenius_rmse, Tensor};

pub const SELECTOR_PREFIX: &str = "selector.";
pub const RECONSTRUCTOR_PREFIX: &str = "reconstructor.";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    /// RMSE between reconstruction and original features.
    pub reconstruction: T,
    /// Retained fraction of tokens (mean of the hard mask).
    pub l_pr: T,
    /// `max(l_pr, p)`.
    pub clamped_reg: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Loss terms for an already reconstructed feature set.
    pub fn compute(
        reconstructed: &Tensor<T>,
        features: &Tensor<T>,
        mask: &GumbelMask<T>,
        p: T,
    ) -> Result<Self> {
        let reconstruction = frobenius_rmse(reconstructed, features)?;
        let l_pr = regularization_term(mask);
        let clamped_reg = clamped_regularization(l_pr, p)?;
        Ok(LossBreakdown {
            reconstruction,
            l_pr,
            clamped_reg,
            total: reconstruction + clamped_reg,
        })
    }

    /// Elementwise mean over a non-empty slice.
    pub fn mean(items: &[Self]) -> Self {
        let n = T::of(items.len().max(1) as f64);
        let sum = |f: fn(&Self) -> T| items.iter().map(f).sum::<T>() / n;
        LossBreakdown {
            reconstruction: sum(|b| b.reconstruction),
            l_pr: sum(|b| b.l_pr),
            clamped_reg: sum(|b| b.clamped_reg),
            total: sum(|b| b.total),
        }
    }
}

pub fn validate_retention(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("retention target p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Row `i` keeps `F_i` when `hard_i == 1`, otherwise becomes `masked`.
pub fn apply_mask<T: Scalar>(
    features: &Tensor<T>,
    mask: &GumbelMask<T>,
    masked: &Tensor<T>,
) -> Result<Tensor<T>> {
    if mask.len() != features.rows() {
        return Err(Error::shape("apply_mask", features.shape(), &[mask.len()]));
    }
    if masked.len() != features.cols() {
        return Err(Error::shape("apply_mask", features.shape(), masked.shape()));
    }
    let mut out = features.clone();
    for (i, &h) in mask.hard.iter().enumerate() {
        if h != T::one() {
            out.row_mut(i).copy_from_slice(masked.data());
        }
    }
    Ok(out)
}

/// Retained fraction `Σ hard_i / L`.
pub fn regularization_term<T: Scalar>(mask: &GumbelMask<T>) -> T {
    let n = mask.len().max(1);
    mask.hard.iter().copied().sum::<T>() / T::of(n as f64)
}

/// `max(l_pr, p)`; the penalty is flat below the retention target.
pub fn clamped_regularization<T: Scalar>(l_pr: T, p: T) -> Result<T> {
    validate_retention(p.as_f64())?;
    Ok(l_pr.max(p))
}

/// Scalar handles for the loss terms recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub reconstruction: crate::tape::Var,
    pub l_pr: crate::tape::Var,
    pub clamped_reg: crate::tape::Var,
    pub total: crate::tape::Var,
}

/// Loss value, mask and gradients for one feature set.
#[derive(Clone, Debug)]
pub struct InstanceLoss<T> {
    pub breakdown: LossBreakdown<T>,
    pub mask: GumbelMask<T>,
    /// Selector gradients in [`Parameters::visit`] order, then reconstructor.
    pub grads: Vec<Tensor<T>>,
}

/// Records the full loss for `features` on a fresh graph and differentiates.
pub fn instance_loss<T: Scalar>(
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
    features: &Tensor<T>,
    noise: Tensor<T>,
    tau: T,
    p: T,
    path: MaskPath,
) -> Result<InstanceLoss<T>> {
    validate_retention(p.as_f64())?;
    let mut g = Graph::new();
    let bs = selector.bind(&mut g, true);
    let br = reconstructor.bind(&mut g, true);
    let x = g.constant(features.clone());
    let logits = selector.logits_on_graph(&mut g, &bs, x, None)?;
    let (mask_var, mask) = gumbel_mask_on_graph(&mut g, logits, noise, tau, path)?;
    let pruned = g.mix_rows(x, bs.masked_embedding, mask_var)?;
    let rec = reconstructor.forward_on_graph(&mut g, &br, pruned, None)?;
    let reconstruction = g.rmse(rec, features.clone())?;
    let l_pr = g.mean(mask_var);
    let clamped_reg = g.max_const(l_pr, p)?;
    let total = g.add(reconstruction, clamped_reg)?;
    let vars = LossVars {
        reconstruction,
        l_pr,
        clamped_reg,
        total,
    };

    let grads = g.backward(vars.total)?;
    let breakdown = LossBreakdown {
        reconstruction: g.value(vars.reconstruction).item(),
        l_pr: g.value(vars.l_pr).item(),
        clamped_reg: g.value(vars.clamped_reg).item(),
        total: g.value(vars.total).item(),
    };
    let grads = bs
        .vars()
        .into_iter()
        .chain(br.vars())
        .map(|v| grads.get_or_zeros(v, g.value(v).shape()))
        .collect();
    Ok(InstanceLoss {
        breakdown,
        mask,
        grads,
    })
}

/// Straight-through loss for one feature set with freshly drawn noise.
pub fn total_loss<T: Scalar, R: rand::Rng + ?Sized>(
    features: &Tensor<T>,
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
    p: T,
    tau: T,
    rng: &mut R,
) -> Result<InstanceLoss<T>> {
    let noise = Tensor::new(
        vec![features.rows(), 2],
        sample_gumbel_noise(features.rows() * 2, rng),
    )?;
    instance_loss(selector, reconstructor, features, noise, tau, p, MaskPath::StraightThrough)
}

/// Mean loss and mean gradients over a batch. Instances are evaluated in
/// parallel and reduced in batch order.
pub fn batch_loss<T: Scalar>(
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
    batch: &[(&Tensor<T>, Tensor<T>)],
    tau: T,
    p: T,
    path: MaskPath,
) -> Result<(LossBreakdown<T>, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let items: Vec<InstanceLoss<T>> = batch
        .par_iter()
        .map(|(f, noise)| instance_loss(selector, reconstructor, f, noise.clone(), tau, p, path))
        .collect::<Result<_>>()?;
    let inv = T::one() / T::of(items.len() as f64);
    let mut grads = items[0].grads.clone();
    for item in &items[1..] {
        for (acc, g) in grads.iter_mut().zip(&item.grads) {
            acc.add_assign(g);
        }
    }
    for g in &mut grads {
        for v in g.data_mut() {
            *v = *v * inv;
        }
    }
    let breakdowns: Vec<_> = items.iter().map(|i| i.breakdown).collect();
    Ok((LossBreakdown::mean(&breakdowns), grads))
}

/// Every trainable tensor of both networks, selector first.
pub fn named_parameters<T: Scalar>(
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
) -> Vec<(String, Tensor<T>)> {
    selector
        .named_params(SELECTOR_PREFIX)
        .into_iter()
        .chain(reconstructor.named_params(RECONSTRUCTOR_PREFIX))
        .map(|(n, t)| (n, t.clone()))
        .collect()
}

/// Overwrites both networks from a flat list in [`named_parameters`] order.
pub fn assign_parameters<T: Scalar>(
    selector: &mut SelectorNetwork<T>,
    reconstructor: &mut ReconstructorNetwork<T>,
    values: &[Tensor<T>],
) -> Result<()> {
    let mut it = values.iter();
    let mut err = None;
    let mut put = |t: &mut Tensor<T>| match it.next() {
        Some(v) if v.shape() == t.shape() => *t = v.clone(),
        Some(v) => err = Some(Error::shape("assign_parameters", t.shape(), v.shape())),
        None => err = Some(Error::config("too few parameter tensors")),
    };
    selector.visit_mut(&mut put);
    reconstructor.visit_mut(&mut put);
    if let Some(e) = err {
        return Err(e);
    }
    if it.next().is_some() {
        return Err(Error::config("too many parameter tensors"));
    }
    Ok(())
}

/// Finite-difference check of the full loss through the soft mask path,
/// with one fixed noise draw. `corrupt` perturbs one analytic gradient
/// tensor so callers can confirm failures are detected.
pub fn check_full_loss<T: Scalar>(
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
    features: &Tensor<T>,
    noise: &Tensor<T>,
    tau: T,
    p: T,
    options: GradCheckOptions,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let named = named_parameters(selector, reconstructor);
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let params: Vec<Tensor<T>> = named.into_iter().map(|(_, t)| t).collect();
    let mut sel = selector.clone();
    let mut rec = reconstructor.clone();
    let f = |values: &[Tensor<T>]| -> Result<(T, Vec<Tensor<T>>)> {
        assign_parameters(&mut sel, &mut rec, values)?;
        let out = instance_loss(&sel, &rec, features, noise.clone(), tau, p, MaskPath::Soft)?;
        let mut grads = out.grads;
        if corrupt {
            if let Some(g) = grads.last_mut() {
                for v in g.data_mut() {
                    *v = *v * T::of(1.5) + T::of(0.1);
                }
            }
        }
        Ok((out.breakdown.total, grads))
    };
    grad_check(f, &params, &names, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{init_networks, NetworkConfig};
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(shape: &[usize], s: u64) -> Tensor<f32> {
        let mut rng = seed::rng(s, "test", &[]);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn apply_mask_examples() {
        let f = Tensor::from_rows(&[vec![1.0f32, 1.0], vec![2.0, 2.0]]).unwrap();
        let e = Tensor::new(vec![2], vec![9.0f32, 9.0]).unwrap();
        let out = apply_mask(&f, &GumbelMask::from_hard(vec![1.0, 0.0]), &e).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 9.0, 9.0]);
        let out = apply_mask(&f, &GumbelMask::from_hard(vec![1.0, 1.0]), &e).unwrap();
        assert_eq!(out, f);
        let out = apply_mask(&f, &GumbelMask::from_hard(vec![0.0, 0.0]), &e).unwrap();
        assert_eq!(out.data(), &[9.0; 4]);
        assert!(apply_mask(&f, &GumbelMask::from_hard(vec![1.0]), &e).is_err());
    }

    #[test]
    fn regularization_examples() {
        assert_eq!(regularization_term(&GumbelMask::from_hard(vec![1.0f32, 0.0, 1.0, 0.0])), 0.5);
        assert_eq!(regularization_term(&GumbelMask::from_hard(vec![1.0f32; 4])), 1.0);
        assert_eq!(regularization_term(&GumbelMask::from_hard(vec![0.0f32; 4])), 0.0);
        assert_eq!(clamped_regularization(0.2f64, 0.3).unwrap(), 0.3);
        assert_eq!(clamped_regularization(0.8f64, 0.3).unwrap(), 0.8);
        assert_eq!(clamped_regularization(0.3f64, 0.3).unwrap(), 0.3);
        assert!(clamped_regularization(0.3f64, 0.0).is_err());
        assert!(clamped_regularization(0.3f64, 1.5).is_err());
    }

    #[test]
    fn identity_reconstruction_with_full_mask() {
        let f = random(&[4, 3], 1);
        let mask = GumbelMask::from_hard(vec![1.0f32; 4]);
        let pruned = apply_mask(&f, &mask, &Tensor::zeros(&[3])).unwrap();
        // a perfect reconstructor returns its input unchanged
        let b = LossBreakdown::compute(&pruned, &f, &mask, 0.3).unwrap();
        assert_eq!(b.reconstruction, 0.0);
        assert_eq!(b.total, 1.0);
    }

    fn toy() -> (SelectorNetwork<f32>, ReconstructorNetwork<f32>, Tensor<f32>) {
        let cfg = NetworkConfig::new(8, 4, 2).unwrap();
        let (s, r) = init_networks(&cfg, 7).unwrap();
        (s, r, random(&[4, 8], 2))
    }

    #[test]
    fn reconstruction_term_ignores_p() {
        let (s, r, f) = toy();
        let noise = random(&[4, 2], 3);
        let a = instance_loss(&s, &r, &f, noise.clone(), 1.0, 0.1, MaskPath::StraightThrough).unwrap();
        let b = instance_loss(&s, &r, &f, noise, 1.0, 0.9, MaskPath::StraightThrough).unwrap();
        assert_eq!(a.breakdown.reconstruction, b.breakdown.reconstruction);
        assert_eq!(a.breakdown.total, a.breakdown.reconstruction + a.breakdown.clamped_reg);
        assert_eq!(b.breakdown.clamped_reg, b.breakdown.l_pr.max(0.9));
    }

    #[test]
    fn every_parameter_gets_a_gradient_of_its_shape() {
        let (s, r, f) = toy();
        // strongly negative keep noise drops some tokens so E_masked is live
        let noise = Tensor::from_rows(&[
            vec![-5.0f32, 5.0],
            vec![5.0, -5.0],
            vec![-5.0, 5.0],
            vec![5.0, -5.0],
        ])
        .unwrap();
        let out = instance_loss(&s, &r, &f, noise, 1.0, 0.3, MaskPath::StraightThrough).unwrap();
        let named = named_parameters(&s, &r);
        assert_eq!(out.grads.len(), named.len());
        for ((name, t), g) in named.iter().zip(&out.grads) {
            assert_eq!(t.shape(), g.shape(), "{name}");
        }
        let e_idx = named
            .iter()
            .position(|(n, _)| n == "selector.masked_embedding")
            .unwrap();
        assert!(out.grads[e_idx].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn masked_embedding_gradient_is_zero_when_nothing_dropped() {
        let (s, r, f) = toy();
        let mut keep_all = Tensor::<f32>::zeros(&[4, 2]);
        for i in 0..4 {
            keep_all.data_mut()[i * 2] = 20.0;
        }
        let out = instance_loss(&s, &r, &f, keep_all, 1.0, 0.3, MaskPath::StraightThrough).unwrap();
        assert_eq!(out.mask.kept(), 4);
        let named = named_parameters(&s, &r);
        let e_idx = named
            .iter()
            .position(|(n, _)| n == "selector.masked_embedding")
            .unwrap();
        assert!(out.grads[e_idx].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assign_round_trips() {
        let (s, r, _) = toy();
        let (mut s2, mut r2) = init_networks::<f32>(&s.config(), 99).unwrap();
        let values: Vec<_> = named_parameters(&s, &r).into_iter().map(|(_, t)| t).collect();
        assign_parameters(&mut s2, &mut r2, &values).unwrap();
        assert_eq!(s, s2);
        assert_eq!(r, r2);
        assert!(assign_parameters(&mut s2, &mut r2, &values[1..]).is_err());
    }
}

