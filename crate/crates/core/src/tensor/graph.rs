//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its value; node indices are a
//! topological order, so the backward sweep simply walks them in reverse.
//! A graph lives for one forward pass and is consumed by [`Graph::backward`].

use super::conv::{self, ConvGeometry};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node of a [`Graph`].
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
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Vec<Var>),
    L1(Var, Var),
    Mse(Var, Var),
    Sum(Var),
    WeightedSum(Var, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of one forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf created with `requires_grad`, if it was reached.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(var.0).and_then(Option::as_ref)
    }

    /// Add the parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(id, node) in &self.params {
            if let Some(g) = &self.leaves[node] {
                store.grad_mut(id).add_assign(g)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
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
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaf node; gradients are reported for it when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let value = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let value =
            conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    /// `max(0, x) + slope * min(0, x)` with one slope per channel, or a
    /// single slope shared by all channels.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let value = prelu_forward(self.value(x), self.value(slope))?;
        let rg = self.needs(&[x, slope]);
        Ok(self.push(value, Op::Prelu { x, slope }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = elementwise(self.value(a), self.value(b), "add", |p, q| p + q)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = elementwise(self.value(a), self.value(b), "sub", |p, q| p - q)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = concat_forward(&tensors)?;
        let rg = self.needs(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    /// Mean absolute error (subgradient 0 at exact ties).
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let value = Tensor::scalar(l1(self.value(pred), self.value(target))?);
        let rg = self.needs(&[pred, target]);
        Ok(self.push(value, Op::L1(pred, target), rg))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let value = Tensor::scalar(mse(self.value(pred), self.value(target))?);
        let rg = self.needs(&[pred, target]);
        Ok(self.push(value, Op::Mse(pred, target), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).dot(&weights)?);
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::WeightedSum(x, weights), rg))
    }

    /// Differentiate a scalar node with respect to every leaf that requires
    /// gradients. Consumes the tape.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.nodes[i].value = Tensor::zeros([0, 0, 0, 0]);
            self.backprop(op, &g, &mut grads)?;
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        let leaves = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                if n.requires_grad && matches!(n.op, Op::Leaf) {
                    g
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { leaves, params })
    }

    /// Backward pass followed by accumulation into the parameter store.
    pub fn backward_into(self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store)?;
        Ok(grads)
    }

    fn backprop(&self, op: Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = [rg(x), rg(w), b.is_some_and(rg)];
                let cg = conv::conv2d_backward(self.value(x), self.value(w), g, geom, need);
                if let Some(dx) = cg.input {
                    accumulate(&mut grads[x.0], dx);
                }
                if let Some(dw) = cg.kernel {
                    accumulate(&mut grads[w.0], dw);
                }
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let need = [rg(x), rg(w), b.is_some_and(rg)];
                let cg =
                    conv::conv_transpose2d_backward(self.value(x), self.value(w), g, geom, need);
                if let Some(dx) = cg.input {
                    accumulate(&mut grads[x.0], dx);
                }
                if let Some(dw) = cg.kernel {
                    accumulate(&mut grads[w.0], dw);
                }
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Prelu { x, slope } => {
                let (dx, ds) = prelu_backward(self.value(x), self.value(slope), g);
                if rg(x) {
                    accumulate(&mut grads[x.0], dx);
                }
                if rg(slope) {
                    accumulate(&mut grads[slope.0], ds);
                }
            }
            Op::Add(a, b) => {
                if rg(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if rg(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if rg(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if rg(b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Concat(inputs) => {
                let shapes: Vec<_> = inputs.iter().map(|v| self.value(*v).shape()).collect();
                for (v, part) in inputs.iter().zip(split_channels(g, &shapes)) {
                    if rg(*v) {
                        accumulate(&mut grads[v.0], part);
                    }
                }
            }
            Op::L1(p, t) => {
                let n = T::from_f64(self.value(p).len() as f64);
                let scale = g.data()[0] / n;
                let dp = elementwise(self.value(p), self.value(t), "l1", |a, b| {
                    let d = a - b;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                })?;
                if rg(t) {
                    accumulate(&mut grads[t.0], dp.map(|v| -v));
                }
                if rg(p) {
                    accumulate(&mut grads[p.0], dp);
                }
            }
            Op::Mse(p, t) => {
                let n = T::from_f64(self.value(p).len() as f64);
                let scale = (T::one() + T::one()) * g.data()[0] / n;
                let dp = elementwise(self.value(p), self.value(t), "mse", |a, b| scale * (a - b))?;
                if rg(t) {
                    accumulate(&mut grads[t.0], dp.map(|v| -v));
                }
                if rg(p) {
                    accumulate(&mut grads[p.0], dp);
                }
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(&mut grads[x.0], Tensor::full(self.value(x).shape(), s));
            }
            Op::WeightedSum(x, weights) => {
                let s = g.data()[0];
                accumulate(&mut grads[x.0], weights.map(|w| w * s));
            }
        }
        Ok(())
    }
}

pub(crate) fn elementwise<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    a.check_same(b, op)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| f(p, q))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn slope_for<T: Real>(slope: &Tensor<T>, c: usize) -> T {
    if slope.len() == 1 {
        slope.data()[0]
    } else {
        slope.data()[c]
    }
}

pub(crate) fn check_slope<T: Real>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<()> {
    let ok = slope.shape() == [1, 1, 1, 1] || slope.shape() == [1, x.channels(), 1, 1];
    if !ok {
        return Err(dim_err!(
            "PReLU slope shape {:?} matches neither 1 nor {} channels",
            slope.shape(),
            x.channels()
        ));
    }
    Ok(())
}

pub(crate) fn prelu_forward<T: Real>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    check_slope(x, slope)?;
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for item in 0..n {
        for ch in 0..c {
            let a = slope_for(slope, ch);
            let start = (item * c + ch) * hw;
            for v in &mut out.data_mut()[start..start + hw] {
                if *v < T::zero() {
                    *v = a * *v;
                }
            }
        }
    }
    Ok(out)
}

fn prelu_backward<T: Real>(
    x: &Tensor<T>,
    slope: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut dx = g.clone();
    let mut ds = Tensor::zeros(slope.shape());
    for item in 0..n {
        for ch in 0..c {
            let a = slope_for(slope, ch);
            let start = (item * c + ch) * hw;
            let mut acc = T::zero();
            for i in start..start + hw {
                let xv = x.data()[i];
                if xv < T::zero() {
                    acc += g.data()[i] * xv;
                    dx.data_mut()[i] = a * g.data()[i];
                }
            }
            let slot = if slope.len() == 1 { 0 } else { ch };
            ds.data_mut()[slot] += acc;
        }
    }
    (dx, ds)
}

pub(crate) fn concat_forward<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Contract("concat_channels needs at least one input".into()))?;
    let [n, _, h, w] = first.shape();
    for t in inputs {
        let [tn, _, th, tw] = t.shape();
        if (tn, th, tw) != (n, h, w) {
            return Err(dim_err!(
                "concat_channels: {:?} does not match batch/spatial dims of {:?}",
                t.shape(),
                first.shape()
            ));
        }
    }
    let total: usize = inputs.iter().map(|t| t.channels()).sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for item in 0..n {
        for t in inputs {
            data.extend_from_slice(t.item(item));
        }
    }
    Tensor::from_vec([n, total, h, w], data)
}

fn split_channels<T: Real>(g: &Tensor<T>, shapes: &[[usize; 4]]) -> Vec<Tensor<T>> {
    let [n, total, h, w] = g.shape();
    let hw = h * w;
    let mut parts: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(n * s[1] * hw))
        .collect();
    for item in 0..n {
        let mut offset = item * total * hw;
        for (part, s) in parts.iter_mut().zip(shapes) {
            let len = s[1] * hw;
            part.extend_from_slice(&g.data()[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::from_vec(*s, d).expect("split shape"))
        .collect()
}

pub(crate) fn l1<T: Real>(p: &Tensor<T>, t: &Tensor<T>) -> Result<T> {
    p.check_same(t, "l1_loss")?;
    let s: T = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(s / T::from_f64(p.len() as f64))
}

pub(crate) fn mse<T: Real>(p: &Tensor<T>, t: &Tensor<T>) -> Result<T> {
    p.check_same(t, "mse_loss")?;
    let s: T = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(s / T::from_f64(p.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn prelu_definition() {
        let mut g = Graph::new();
        let x = g.input(t([1, 1, 1, 3], &[3.0, -2.0, 0.0]), false);
        let a = g.constant(Tensor::scalar(0.25));
        let y = g.prelu(x, a).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -0.5, 0.0]);
    }

    #[test]
    fn prelu_rejects_wrong_slope_count() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros([1, 3, 2, 2]), false);
        let a = g.constant(Tensor::zeros([1, 2, 1, 1]));
        assert!(g.prelu(x, a).is_err());
    }

    #[test]
    fn losses_by_hand() {
        let mut g = Graph::new();
        let p = g.input(t([1, 1, 1, 2], &[1.0, 3.0]), true);
        let q = g.constant(t([1, 1, 1, 2], &[0.0, 1.0]));
        let l1 = g.l1_loss(p, q).unwrap();
        let l2 = g.mse_loss(p, q).unwrap();
        assert_eq!(g.value(l1).data(), &[1.5]);
        assert_eq!(g.value(l2).data(), &[2.5]);
        let grads = g.backward(l2).unwrap();
        // d/dp mean((p - q)^2) = (p - q)
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn l1_subgradient_is_zero_at_ties() {
        let mut g = Graph::new();
        let p = g.input(t([1, 1, 1, 2], &[1.0, 2.0]), true);
        let q = g.constant(t([1, 1, 1, 2], &[1.0, 0.0]));
        let l = g.l1_loss(p, q).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn add_and_sub_gradients() {
        let mut g = Graph::new();
        let a = g.input(t([1, 1, 1, 2], &[1.0, 2.0]), true);
        let b = g.input(t([1, 1, 1, 2], &[5.0, 7.0]), true);
        let s = g.add(a, b).unwrap();
        let d = g.sub(s, b).unwrap();
        assert_eq!(g.value(d).data(), &[1.0, 2.0]);
        let l = g.sum(d);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([2, 3, 4, 5], 0.3), true);
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_preserves_order_and_splits_gradient() {
        let mut g = Graph::new();
        let a = g.input(Tensor::full([1, 32, 8, 8], 1.0), true);
        let b = g.input(Tensor::full([1, 32, 8, 8], 2.0), true);
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), [1, 64, 8, 8]);
        assert!(g.value(c).data()[..32 * 64].iter().all(|&v| v == 1.0));
        let w = Tensor::from_vec([1, 64, 8, 8], (0..64 * 64).map(|i| i as f64).collect()).unwrap();
        let l = g.weighted_sum(c, w).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).unwrap().data()[0], (32 * 64) as f64);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::<f64>::zeros([1, 2, 8, 8]), false);
        let b = g.input(Tensor::zeros([1, 2, 8, 7]), false);
        assert!(g.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros([1, 1, 2, 2]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }
}
