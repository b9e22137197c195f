//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Leaves are
//! either trainable parameters or constants; only nodes downstream of a
//! parameter take part in the backward sweep. The operation set is exactly
//! what the selector and reconstructor stacks need.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: T },
    Gelu(Var),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MixRows { x: Var, fill: Var, mask: Var },
    StraightThrough(Var),
    Mean(Var),
    WeightedSum { x: Var, weights: Tensor<T> },
    Rmse { x: Var, target: Tensor<T> },
    MaxConst { x: Var, floor: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for 2-D `a: m×k` and `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        tensor::gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, "add")?;
        let mut out = av.clone();
        out.add_assign(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a length-C vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(Error::shape("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = tensor::softmax_lastaxis(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let out = tensor::layernorm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.shape().len() != 2 || start >= end || end > c {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(xv.rows() * w);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::new(vec![xv.rows(), w], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || start >= end || end > xv.rows() {
            return Err(Error::shape("slice_rows", xv.shape(), &[start, end]));
        }
        let c = xv.cols();
        let out = Tensor::new(vec![end - start, c], xv.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat_cols needs at least one input"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), pv.shape()));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row `i` becomes `m_i·x_i + (1 − m_i)·fill`. Rows with `m_i` exactly
    /// 1 or 0 are copied verbatim from `x` or `fill`.
    pub fn mix_rows(&mut self, x: Var, fill: Var, mask: Var) -> Result<Var> {
        let (xv, fv, mv) = (self.value(x), self.value(fill), self.value(mask));
        let c = xv.cols();
        if fv.len() != c {
            return Err(Error::shape("mix_rows", xv.shape(), fv.shape()));
        }
        if mv.len() != xv.rows() {
            return Err(Error::shape("mix_rows", xv.shape(), mv.shape()));
        }
        let mut out = xv.clone();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            let m = mv.data()[i];
            if m == T::one() {
                continue;
            }
            if m == T::zero() {
                row.copy_from_slice(fv.data());
                continue;
            }
            let keep = T::one() - m;
            for (o, &f) in row.iter_mut().zip(fv.data()) {
                *o = m * *o + keep * f;
            }
        }
        let rg = self.rg(x) || self.rg(fill) || self.rg(mask);
        Ok(self.push(out, Op::MixRows { x, fill, mask }, rg))
    }

    /// Straight-through estimator: the forward value is `hard`, the backward
    /// pass hands the incoming gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor<T>) -> Result<Var> {
        self.value(soft).same_shape(&hard, "straight_through")?;
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::of(xv.len().max(1) as f64);
        let out = Tensor::scalar(xv.data().iter().copied().sum::<T>() / n);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// `Σ w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        xv.same_shape(&weights, "weighted_sum")?;
        let s = xv
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| a * w)
            .sum::<T>();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, rg))
    }

    /// Root-mean-square deviation of `x` from a constant target.
    pub fn rmse(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        let r = tensor::frobenius_rmse(self.value(x), &target)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(r), Op::Rmse { x, target }, rg))
    }

    /// `max(x, floor)` of a scalar. At `x == floor` the gradient follows `x`.
    pub fn max_const(&mut self, x: Var, floor: T) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != 1 {
            return Err(Error::shape("max_const", xv.shape(), &[]));
        }
        let out = Tensor::scalar(xv.item().max(floor));
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxConst { x, floor }, rg))
    }

    /// Gradient of the single-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", lv.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    tensor::gemm_nt(dy.data(), bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    tensor::gemm_tn(av.data(), dy.data(), &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    tensor::gemm_nn(dy.data(), bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); n * k];
                    tensor::gemm_tn(dy.data(), av.data(), &mut db, n, m, k);
                    self.accumulate(grads, *b, Tensor::new(vec![n, k], db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, dy.clone());
                if self.rg(*bias) {
                    let bshape = self.value(*bias).shape().to_vec();
                    let c = dy.cols();
                    let mut db = vec![T::zero(); c];
                    for row in dy.data().chunks(c) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d = *d + g;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(bshape, db).unwrap());
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, dy.map(|g| g * s));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for ((ys, gs), ds) in y
                    .data()
                    .chunks(c)
                    .zip(dy.data().chunks(c))
                    .zip(dx.data_mut().chunks_mut(c))
                {
                    let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        ds[j] = ys[j] * (gs[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let c = xv.cols();
                let n = T::of(c as f64);
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for ((xs, gs), ds) in xv
                    .data()
                    .chunks(c)
                    .zip(dy.data().chunks(c))
                    .zip(dx.data_mut().chunks_mut(c))
                {
                    let (mean, rstd) = tensor::row_moments(xs, *eps);
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..c {
                        xhat[j] = (xs[j] - mean) * rstd;
                        dxhat[j] = gs[j] * gv.data()[j];
                        dg[j] = dg[j] + gs[j] * xhat[j];
                        db[j] = db[j] + gs[j];
                        sum_d = sum_d + dxhat[j];
                        sum_dx = sum_dx + dxhat[j] * xhat[j];
                    }
                    for j in 0..c {
                        ds[j] = rstd / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                    }
                }
                self.accumulate(grads, *x, dx);
                let gshape = gv.shape().to_vec();
                let bshape = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *gain, Tensor::new(gshape, dg).unwrap());
                self.accumulate(grads, *bias, Tensor::new(bshape, db).unwrap());
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *d = *d * tensor::gelu_grad_scalar(v);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let w = dy.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (drow, grow) in dx.data_mut().chunks_mut(c).zip(dy.data().chunks(w)) {
                    drow[*start..*start + w].copy_from_slice(grow);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(pv.len());
                        for grow in dy.data().chunks(total) {
                            dp.extend_from_slice(&grow[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(pv.shape().to_vec(), dp).unwrap());
                    }
                    offset += w;
                }
            }
            Op::MixRows { x, fill, mask } => {
                let (xv, fv, mv) = (self.value(*x), self.value(*fill), self.value(*mask));
                let c = xv.cols();
                if self.rg(*x) {
                    let mut dx = dy.clone();
                    for (i, row) in dx.data_mut().chunks_mut(c).enumerate() {
                        let m = mv.data()[i];
                        for d in row.iter_mut() {
                            *d = *d * m;
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.rg(*fill) {
                    let mut df = vec![T::zero(); c];
                    for (i, grow) in dy.data().chunks(c).enumerate() {
                        let w = T::one() - mv.data()[i];
                        for (d, &g) in df.iter_mut().zip(grow) {
                            *d = *d + w * g;
                        }
                    }
                    self.accumulate(grads, *fill, Tensor::new(fv.shape().to_vec(), df).unwrap());
                }
                if self.rg(*mask) {
                    let dm: Vec<T> = dy
                        .data()
                        .chunks(c)
                        .zip(xv.data().chunks(c))
                        .map(|(grow, xrow)| {
                            grow.iter()
                                .zip(xrow)
                                .zip(fv.data())
                                .map(|((&g, &xi), &fi)| g * (xi - fi))
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *mask, Tensor::new(mv.shape().to_vec(), dm).unwrap());
                }
            }
            Op::StraightThrough(soft) => {
                self.accumulate(grads, *soft, dy.clone());
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let g = dy.item() / T::of(xv.len().max(1) as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g));
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.item();
                self.accumulate(grads, *x, weights.map(|w| w * g));
            }
            Op::Rmse { x, target } => {
                let xv = self.value(*x);
                let r = node.value.item();
                let mut dx = Tensor::zeros(xv.shape());
                if r > T::zero() {
                    let k = dy.item() / (T::of(xv.len() as f64) * r);
                    for ((d, &a), &b) in dx.data_mut().iter_mut().zip(xv.data()).zip(target.data()) {
                        *d = (a - b) * k;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaxConst { x, floor } => {
                let xv = self.value(*x);
                let g = if xv.item() >= *floor { dy.item() } else { T::zero() };
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let w = g.value(x).clone();
        let loss = g.weighted_sum(x, w).unwrap();
        let grads = g.backward(loss).unwrap();
        // d/dx Σ w_i x_i with w held constant equals w
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::full(&[2, 2], 1.0));
        let b = g.param(Tensor::full(&[2, 2], 2.0));
        let c = g.matmul(a, b).unwrap();
        let loss = g.mean(c);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn max_const_tie_keeps_gradient_live() {
        for (x, expect) in [(0.2, 0.0), (0.8, 1.0), (0.3, 1.0)] {
            let mut g = Graph::<f64>::new();
            let v = g.param(Tensor::scalar(x));
            let m = g.max_const(v, 0.3).unwrap();
            assert_eq!(g.value(m).item(), f64::max(x, 0.3));
            let grads = g.backward(m).unwrap();
            assert_eq!(grads.get(v).unwrap().item(), expect);
        }
    }

    #[test]
    fn straight_through_forwards_hard_and_passes_gradient() {
        let mut g = Graph::<f32>::new();
        let soft = g.param(Tensor::new(vec![2], vec![0.7, 0.2]).unwrap());
        let hard = g
            .straight_through(soft, Tensor::new(vec![2], vec![1.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(g.value(hard).data(), &[1.0, 0.0]);
        let loss = g
            .weighted_sum(hard, Tensor::new(vec![2], vec![3.0, -1.0]).unwrap())
            .unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(soft).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn rmse_zero_distance_has_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::full(&[2, 2], 1.5);
        let x = g.param(t.clone());
        let r = g.rmse(x, t).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
        let grads = g.backward(r).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }
}
