//! Feature selector and feature reconstructor: two pre-norm transformer
//! stacks of three layers each. The selector adds a two-logit head and the
//! shared masked-token embedding.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::tape::{Graph, Var};
use crate::tensor::{Tensor, LAYERNORM_EPS};

pub const LAYERS: usize = 3;
pub const MLP_EXPANSION: usize = 4;
pub const INIT_STD: f64 = 0.02;

/// Architecture extents shared by both stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Feature width C; also the model width.
    pub dim: usize,
    /// Longest token sequence the positional table covers.
    pub max_tokens: usize,
    pub heads: usize,
}

impl NetworkConfig {
    pub fn new(dim: usize, max_tokens: usize, heads: usize) -> Result<Self> {
        let cfg = NetworkConfig {
            dim,
            max_tokens,
            heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `max(1, C / 64)` heads.
    pub fn default_heads(dim: usize) -> usize {
        (dim / 64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("feature width must be at least 1"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config("max_tokens must be at least 1"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide feature width ({})",
                self.heads, self.dim
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Visits parameter tensors in a fixed order with hierarchical names.
pub trait Parameters<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>));

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

const LAYER_NAMES: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

impl<T: Scalar> TransformerLayer<T> {
    fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let hidden = dim * MLP_EXPANSION;
        TransformerLayer {
            ln1_gain: Tensor::full(&[dim], T::one()),
            ln1_bias: Tensor::zeros(&[dim]),
            wq: normal(&[dim, dim], rng),
            bq: Tensor::zeros(&[dim]),
            wk: normal(&[dim, dim], rng),
            bk: Tensor::zeros(&[dim]),
            wv: normal(&[dim, dim], rng),
            bv: Tensor::zeros(&[dim]),
            wo: normal(&[dim, dim], rng),
            bo: Tensor::zeros(&[dim]),
            ln2_gain: Tensor::full(&[dim], T::one()),
            ln2_bias: Tensor::zeros(&[dim]),
            w1: normal(&[dim, hidden], rng),
            b1: Tensor::zeros(&[hidden]),
            w2: normal(&[hidden, dim], rng),
            b2: Tensor::zeros(&[dim]),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv,
            &self.bv, &self.wo, &self.bo, &self.ln2_gain, &self.ln2_bias, &self.w1, &self.b1,
            &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.ln1_gain, &mut self.ln1_bias, &mut self.wq, &mut self.bq, &mut self.wk,
            &mut self.bk, &mut self.wv, &mut self.bv, &mut self.wo, &mut self.bo,
            &mut self.ln2_gain, &mut self.ln2_bias, &mut self.w1, &mut self.b1, &mut self.w2,
            &mut self.b2,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerStack<T> {
    /// Learned absolute positions, `[max_tokens, dim]`.
    pub positional: Tensor<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub heads: usize,
}

impl<T: Scalar> TransformerStack<T> {
    fn init<R: Rng>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let positional = normal(&[cfg.max_tokens, cfg.dim], rng);
        let layers = (0..LAYERS)
            .map(|_| TransformerLayer::init(cfg.dim, rng))
            .collect();
        TransformerStack {
            positional,
            layers,
            heads: cfg.heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.positional.cols()
    }

    pub fn max_tokens(&self) -> usize {
        self.positional.rows()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::shape("transformer input", shape, &[self.max_tokens(), self.dim()]));
        }
        if shape[0] > self.max_tokens() {
            return Err(Error::Capacity(format!(
                "{} tokens exceed the positional table of {}",
                shape[0],
                self.max_tokens()
            )));
        }
        if shape[0] == 0 {
            return Err(Error::shape("transformer input", shape, &[1, self.dim()]));
        }
        Ok(())
    }

    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundStack {
        let mut leaf = |t: &Tensor<T>| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let positional = leaf(&self.positional);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let v = l.tensors().map(&mut leaf);
                BoundLayer { vars: v }
            })
            .collect();
        BoundStack {
            positional,
            layers,
            heads: self.heads,
        }
    }
}

impl<T: Scalar> Parameters<T> for TransformerStack<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(format!("{prefix}positional"), &self.positional);
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_NAMES.iter().zip(layer.tensors()) {
                f(format!("{prefix}layer{i}.{name}"), t);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        f(&mut self.positional);
        for layer in &mut self.layers {
            for t in layer.tensors_mut() {
                f(t);
            }
        }
    }
}

/// Feature selector: transformer stack, keep/drop head and the masked
/// embedding substituted for dropped tokens during training.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorNetwork<T> {
    pub stack: TransformerStack<T>,
    /// `[dim, 2]`; column 0 is keep, column 1 is drop.
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
    pub masked_embedding: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorNetwork<T> {
    pub stack: TransformerStack<T>,
}

impl<T: Scalar> Parameters<T> for SelectorNetwork<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.stack.visit(prefix, f);
        f(format!("{prefix}head.weight"), &self.head_weight);
        f(format!("{prefix}head.bias"), &self.head_bias);
        f(format!("{prefix}masked_embedding"), &self.masked_embedding);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        self.stack.visit_mut(f);
        f(&mut self.head_weight);
        f(&mut self.head_bias);
        f(&mut self.masked_embedding);
    }
}

impl<T: Scalar> Parameters<T> for ReconstructorNetwork<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.stack.visit(prefix, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        self.stack.visit_mut(f);
    }
}

fn normal<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Draws both networks from `N(0, 0.02)` weights, zero biases and unit
/// layernorm gains. The same seed always yields the same parameters.
pub fn init_networks<T: Scalar>(
    cfg: &NetworkConfig,
    seed: u64,
) -> Result<(SelectorNetwork<T>, ReconstructorNetwork<T>)> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, seed::INIT, &[]);
    let stack = TransformerStack::init(cfg, &mut rng);
    let head_weight = normal(&[cfg.dim, 2], &mut rng);
    let masked_embedding = normal(&[cfg.dim], &mut rng);
    let selector = SelectorNetwork {
        stack,
        head_weight,
        head_bias: Tensor::zeros(&[2]),
        masked_embedding,
    };
    let reconstructor = ReconstructorNetwork {
        stack: TransformerStack::init(cfg, &mut rng),
    };
    Ok((selector, reconstructor))
}

#[derive(Clone, Debug)]
struct BoundLayer {
    vars: [Var; 16],
}

impl BoundLayer {
    fn ln1(&self) -> (Var, Var) {
        (self.vars[0], self.vars[1])
    }
    fn q(&self) -> (Var, Var) {
        (self.vars[2], self.vars[3])
    }
    fn k(&self) -> (Var, Var) {
        (self.vars[4], self.vars[5])
    }
    fn v(&self) -> (Var, Var) {
        (self.vars[6], self.vars[7])
    }
    fn o(&self) -> (Var, Var) {
        (self.vars[8], self.vars[9])
    }
    fn ln2(&self) -> (Var, Var) {
        (self.vars[10], self.vars[11])
    }
    fn fc1(&self) -> (Var, Var) {
        (self.vars[12], self.vars[13])
    }
    fn fc2(&self) -> (Var, Var) {
        (self.vars[14], self.vars[15])
    }
}

/// A transformer stack recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundStack {
    positional: Var,
    layers: Vec<BoundLayer>,
    heads: usize,
}

impl BoundStack {
    /// Leaf handles in [`Parameters::visit`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.positional];
        for l in &self.layers {
            out.extend_from_slice(&l.vars);
        }
        out
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn attention<T: Scalar>(
    g: &mut Graph<T>,
    layer: &BoundLayer,
    h: Var,
    heads: usize,
    trace: &mut Option<&mut Vec<Var>>,
) -> Result<Var> {
    let q = linear(g, h, layer.q())?;
    let k = linear(g, h, layer.k())?;
    let v = linear(g, h, layer.v())?;
    let dim = g.value(q).cols();
    let hd = dim / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let (lo, hi) = (head * hd, (head + 1) * hd);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax(scores);
        if let Some(t) = trace.as_deref_mut() {
            t.push(probs);
        }
        outs.push(g.matmul(probs, vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, merged, layer.o())
}

/// Positional embedding, then three pre-norm blocks with residuals.
fn stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundStack,
    x: Var,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let tokens = g.value(x).rows();
    let pos = g.slice_rows(bound.positional, 0, tokens)?;
    let mut x = g.add(x, pos)?;
    let eps = T::of(LAYERNORM_EPS);
    for layer in &bound.layers {
        let (gain, bias) = layer.ln1();
        let h = g.layernorm(x, gain, bias, eps)?;
        let a = attention(g, layer, h, bound.heads, &mut trace)?;
        x = g.add(x, a)?;
        let (gain, bias) = layer.ln2();
        let h = g.layernorm(x, gain, bias, eps)?;
        let h = linear(g, h, layer.fc1())?;
        let h = g.gelu(h);
        let h = linear(g, h, layer.fc2())?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

/// Selector parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundSelector {
    pub stack: BoundStack,
    pub head_weight: Var,
    pub head_bias: Var,
    pub masked_embedding: Var,
}

impl BoundSelector {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.stack.vars();
        v.extend([self.head_weight, self.head_bias, self.masked_embedding]);
        v
    }
}

#[derive(Clone, Debug)]
pub struct BoundReconstructor {
    pub stack: BoundStack,
}

impl BoundReconstructor {
    pub fn vars(&self) -> Vec<Var> {
        self.stack.vars()
    }
}

impl<T: Scalar> SelectorNetwork<T> {
    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            dim: self.stack.dim(),
            max_tokens: self.stack.max_tokens(),
            heads: self.stack.heads,
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundSelector {
        let stack = self.stack.bind(g, trainable);
        let mut leaf = |t: &Tensor<T>| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundSelector {
            stack,
            head_weight: leaf(&self.head_weight),
            head_bias: leaf(&self.head_bias),
            masked_embedding: leaf(&self.masked_embedding),
        }
    }

    /// Records the `[L, 2]` keep/drop logits for the features in `x`.
    pub fn logits_on_graph(
        &self,
        g: &mut Graph<T>,
        bound: &BoundSelector,
        x: Var,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        self.stack.check_input(g.value(x).shape())?;
        let h = stack_forward(g, &bound.stack, x, trace)?;
        linear(g, h, (bound.head_weight, bound.head_bias))
    }

    /// Noise-free keep/drop logits for one feature set.
    pub fn logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.stack.check_input(features.shape())?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(features.clone());
        let out = self.logits_on_graph(&mut g, &bound, x, None)?;
        Ok(g.value(out).clone())
    }
}

impl<T: Scalar> ReconstructorNetwork<T> {
    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            dim: self.stack.dim(),
            max_tokens: self.stack.max_tokens(),
            heads: self.stack.heads,
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundReconstructor {
        BoundReconstructor {
            stack: self.stack.bind(g, trainable),
        }
    }

    pub fn forward_on_graph(
        &self,
        g: &mut Graph<T>,
        bound: &BoundReconstructor,
        x: Var,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        self.stack.check_input(g.value(x).shape())?;
        stack_forward(g, &bound.stack, x, trace)
    }

    pub fn forward(&self, pruned: &Tensor<T>) -> Result<Tensor<T>> {
        self.stack.check_input(pruned.shape())?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(pruned.clone());
        let out = self.forward_on_graph(&mut g, &bound, x, None)?;
        Ok(g.value(out).clone())
    }
}

/// Keep/drop logits for one feature set.
pub fn selector_logits<T: Scalar>(net: &SelectorNetwork<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
    net.logits(features)
}

pub fn reconstructor_forward<T: Scalar>(
    net: &ReconstructorNetwork<T>,
    pruned: &Tensor<T>,
) -> Result<Tensor<T>> {
    net.forward(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::StandardNormal;

    fn random(shape: &[usize], s: u64) -> Tensor<f32> {
        let mut rng = seed::rng(s, "test", &[]);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = NetworkConfig::new(16, 6, 2).unwrap();
        let (s1, r1) = init_networks::<f32>(&cfg, 9).unwrap();
        let (s2, r2) = init_networks::<f32>(&cfg, 9).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(r1, r2);
        let (s3, _) = init_networks::<f32>(&cfg, 10).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn init_shapes() {
        let cfg = NetworkConfig::new(64, 8, 4).unwrap();
        let (sel, rec) = init_networks::<f32>(&cfg, 0).unwrap();
        for l in sel.stack.layers.iter().chain(&rec.stack.layers) {
            for w in [&l.wq, &l.wk, &l.wv, &l.wo] {
                assert_eq!(w.shape(), &[64, 64]);
            }
            assert_eq!(l.w1.shape(), &[64, 256]);
            assert_eq!(l.ln1_gain.data(), &[1.0; 64][..]);
            assert!(l.bq.data().iter().all(|&b| b == 0.0));
        }
        assert_eq!(sel.stack.layers.len(), LAYERS);
        assert_eq!(sel.masked_embedding.shape(), &[64]);
        assert_eq!(sel.head_weight.shape(), &[64, 2]);
    }

    #[test]
    fn heads_must_divide_width() {
        assert!(matches!(NetworkConfig::new(10, 4, 3), Err(Error::Config(_))));
        assert_eq!(NetworkConfig::default_heads(32), 1);
        assert_eq!(NetworkConfig::default_heads(1024), 16);
    }

    #[test]
    fn named_params_follow_bind_order() {
        let cfg = NetworkConfig::new(8, 4, 2).unwrap();
        let (sel, rec) = init_networks::<f32>(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let bs = sel.bind(&mut g, true);
        for ((_, t), v) in sel.named_params("").iter().zip(bs.vars()) {
            assert_eq!(g.value(v), *t);
        }
        let br = rec.bind(&mut g, true);
        let named = rec.named_params("reconstructor.");
        assert_eq!(named.len(), br.vars().len());
        assert_eq!(named[0].0, "reconstructor.positional");
        assert_eq!(named[1].0, "reconstructor.layer0.ln1.gain");
    }

    #[test]
    fn shapes_and_capacity() {
        let cfg = NetworkConfig::new(8, 4, 2).unwrap();
        let (sel, rec) = init_networks::<f32>(&cfg, 1).unwrap();
        let f = random(&[3, 8], 1);
        assert_eq!(sel.logits(&f).unwrap().shape(), &[3, 2]);
        assert_eq!(rec.forward(&f).unwrap().shape(), &[3, 8]);
        assert!(matches!(sel.logits(&random(&[5, 8], 2)), Err(Error::Capacity(_))));
        assert!(matches!(rec.forward(&random(&[3, 6], 2)), Err(Error::Shape { .. })));
    }

    fn permute_rows(t: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
        t.select_rows(perm).unwrap()
    }

    #[test]
    fn equivariant_under_tied_permutation() {
        let cfg = NetworkConfig::new(8, 5, 2).unwrap();
        let (sel, rec) = init_networks::<f32>(&cfg, 4).unwrap();
        let f = random(&[5, 8], 3);
        let perm = [3, 0, 4, 1, 2];
        let mut sel_p = sel.clone();
        sel_p.stack.positional = permute_rows(&sel.stack.positional, &perm);
        let base = sel.logits(&f).unwrap();
        let moved = sel_p.logits(&permute_rows(&f, &perm)).unwrap();
        let expect = permute_rows(&base, &perm);
        for (a, b) in moved.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-5);
        }

        let mut rec0 = rec.clone();
        rec0.stack.positional = Tensor::zeros(rec.stack.positional.shape());
        let base = rec0.forward(&f).unwrap();
        let moved = rec0.forward(&permute_rows(&f, &perm)).unwrap();
        let expect = permute_rows(&base, &perm);
        for (a, b) in moved.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = NetworkConfig::new(8, 6, 2).unwrap();
        let (sel, _) = init_networks::<f32>(&cfg, 2).unwrap();
        let mut g = Graph::new();
        let b = sel.bind(&mut g, false);
        let x = g.constant(random(&[6, 8], 5));
        let mut trace = Vec::new();
        sel.logits_on_graph(&mut g, &b, x, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), LAYERS * 2);
        for p in trace {
            let v = g.value(p);
            for r in 0..v.rows() {
                let s: f32 = v.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn untrained_reconstructor_does_not_explode() {
        let cfg = NetworkConfig::new(32, 16, 1).unwrap();
        let (_, rec) = init_networks::<f32>(&cfg, 3).unwrap();
        let f = random(&[16, 32], 8);
        let out = rec.forward(&f).unwrap();
        let zero_rmse = crate::tensor::frobenius_rmse(&Tensor::zeros(f.shape()), &f).unwrap();
        let rmse = crate::tensor::frobenius_rmse(&out, &f).unwrap();
        assert!(out.is_finite());
        assert!(rmse <= 1.5 * zero_rmse, "{rmse} vs {zero_rmse}");
    }
}
