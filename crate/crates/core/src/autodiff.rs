//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every value computed in a forward pass together with
//! the op that produced it. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into the gradient buffers of the recorded tensors.
//! Only the op set the codec needs is supported.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv_out_dim, kernels, Shape, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Var(usize);

/// Backward rule for ops defined outside this module.
///
/// Returns one optional gradient per input, each the length of that input.
pub trait CustomBackward<T: Scalar> {
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: kernels::ConvGeom,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Abs {
        x: Var,
    },
    Powf {
        x: Var,
        p: T,
    },
    Sum {
        x: Var,
    },
    MeanPerItem {
        x: Var,
    },
    Blur {
        x: Var,
        kernel: Vec<T>,
    },
    AvgPool2 {
        x: Var,
    },
    Crop {
        x: Var,
    },
    StraightThrough {
        x: Var,
        scale: T,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, left: a, right: b });
    }
    Ok(())
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

    /// Records a constant.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a value whose gradient is wanted.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::default()))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sw.h != sw.w || sx.c != sw.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: sx,
                right: sw,
            });
        }
        check_same("conv2d bias", sb, Shape::new(1, sw.n, 1, 1))?;
        let k = sw.h;
        let (oh, ow) = match (conv_out_dim(sx.h, k, stride, pad), conv_out_dim(sx.w, k, stride, pad)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d (input smaller than kernel)",
                    left: sx,
                    right: sw,
                })
            }
        };
        let geom = kernels::ConvGeom {
            cin: sx.c,
            cout: sw.n,
            k,
            stride,
            pad,
            h: sx.h,
            w: sx.w,
            oh,
            ow,
        };
        let out_shape = Shape::new(sx.n, sw.n, oh, ow);
        let mut out = Tensor::zeros(out_shape);
        kernels::conv_forward(
            self.value(x).data(),
            sx.n,
            self.value(w).data(),
            self.value(b).data(),
            &geom,
            out.data_mut(),
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        if r == 0 || s.c % (r * r) != 0 {
            return Err(Error::invalid(format!(
                "pixel_shuffle: {} channels not divisible by r²={}",
                s.c,
                r * r
            )));
        }
        let mut out = Tensor::zeros(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r));
        kernels::pixel_shuffle(self.value(x).data(), s, r, out.data_mut());
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Clamps to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.rg(x);
        self.push(out, Op::Clamp { x, lo, hi }, rg)
    }

    /// Channel-axis concatenation; `a` occupies the leading channels.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: sa,
                right: sb,
            });
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&self.value(a).data()[n * sa.item_len()..(n + 1) * sa.item_len()]);
            data.extend_from_slice(&self.value(b).data()[n * sb.item_len()..(n + 1) * sb.item_len()]);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        check_same(op, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("div", a, b, |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Div { a, b }, rg))
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let (s, o) = (T::lit(scale), T::lit(offset));
        let out = self.value(x).map(|v| v * s + o);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale: s }, rg)
    }

    /// Elementwise absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        let rg = self.rg(x);
        self.push(out, Op::Abs { x }, rg)
    }

    /// `x^p` for strictly positive `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let p = T::lit(p);
        let out = self.value(x).map(|v| v.powf(p));
        let rg = self.rg(x);
        self.push(out, Op::Powf { x, p }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).numel();
        let s = self.sum(x);
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    /// Mean over `C×H×W` for each batch item, shape `N×1×1×1`.
    pub fn mean_per_item(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let len = s.item_len();
        let inv = T::lit(1.0 / len as f64);
        let data = self
            .value(x)
            .data()
            .chunks(len)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(Shape::new(s.n, 1, 1, 1), data).expect("shape");
        let rg = self.rg(x);
        self.push(out, Op::MeanPerItem { x }, rg)
    }

    /// Separable valid filtering with a symmetric 1-D kernel on every plane.
    pub fn blur(&mut self, x: Var, kernel: &[f64]) -> Result<Var> {
        let s = self.shape(x);
        let k = kernel.len();
        if k == 0 || s.h < k || s.w < k {
            return Err(Error::invalid(format!("blur: kernel {k} larger than {s}")));
        }
        let kernel: Vec<T> = kernel.iter().map(|&v| T::lit(v)).collect();
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h + 1 - k, s.w + 1 - k));
        kernels::blur(self.value(x).data(), s, &kernel, out.data_mut());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Blur { x, kernel }, rg))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h / 2, s.w / 2));
        kernels::avg_pool2(self.value(x).data(), s, out.data_mut());
        let rg = self.rg(x);
        self.push(out, Op::AvgPool2 { x }, rg)
    }

    /// Top-left `h×w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = self.value(x).crop(h, w)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Crop { x }, rg))
    }

    /// Records `forward` as the value while routing gradients to `x` scaled
    /// by `scale` (straight-through estimator).
    pub fn straight_through(&mut self, x: Var, forward: Tensor<T>, scale: f64) -> Result<Var> {
        check_same("straight_through", self.shape(x), forward.shape())?;
        let rg = self.rg(x);
        Ok(self.push(
            forward,
            Op::StraightThrough {
                x,
                scale: T::lit(scale),
            },
            rg,
        ))
    }

    pub fn custom(&mut self, inputs: Vec<Var>, output: Tensor<T>, rule: Box<dyn CustomBackward<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom { inputs, rule }, rg)
    }

    /// Back-propagates from a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got {}",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, vec![T::one()])
    }

    /// Back-propagates an explicit output cotangent.
    pub fn backward_with(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.shape(out).numel() {
            return Err(Error::invalid("seed length differs from output size"));
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.nodes[out.0].value.grad_mut().copy_from_slice(&seed);
        for i in (0..=out.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.value.grad() else { continue };
            backward_node(before, &node.op, &node.value, g);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn grad_of<T: Scalar>(nodes: &mut [Node<T>], v: Var) -> Option<&mut [T]> {
    let node = &mut nodes[v.0];
    if node.requires_grad {
        Some(node.value.grad_mut())
    } else {
        None
    }
}

/// Mutable gradients of two distinct earlier nodes plus their values.
fn pair<T: Scalar>(nodes: &mut [Node<T>], a: Var, b: Var) -> (&mut Node<T>, &mut Node<T>) {
    assert_ne!(a.0, b.0);
    if a.0 < b.0 {
        let (l, r) = nodes.split_at_mut(b.0);
        (&mut l[a.0], &mut r[0])
    } else {
        let (l, r) = nodes.split_at_mut(a.0);
        (&mut r[0], &mut l[b.0])
    }
}

fn backward_node<T: Scalar>(nodes: &mut [Node<T>], op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    match op {
        Op::Leaf => {}
        Op::Conv { x, w, b, geom } => {
            let xv = nodes[x.0].value.clone();
            let wv = nodes[w.0].value.clone();
            let n = xv.shape().n;
            let mut dx = nodes[x.0].requires_grad.then(|| vec![T::zero(); xv.data().len()]);
            let mut dw = nodes[w.0].requires_grad.then(|| vec![T::zero(); wv.data().len()]);
            let mut db = nodes[b.0].requires_grad.then(|| vec![T::zero(); geom.cout]);
            kernels::conv_backward(
                xv.data(),
                n,
                wv.data(),
                geom,
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (v, d) in [(x, dx), (w, dw), (b, db)] {
                if let (Some(d), Some(acc)) = (d, grad_of(nodes, *v)) {
                    acc.iter_mut().zip(d).for_each(|(a, d)| *a += d);
                }
            }
        }
        Op::PixelShuffle { x, r } => {
            let s = nodes[x.0].value.shape();
            if let Some(dx) = grad_of(nodes, *x) {
                kernels::pixel_shuffle_backward(g, s, *r, dx);
            }
        }
        Op::LeakyRelu { x, slope } => {
            let slope = *slope;
            let node = &mut nodes[x.0];
            let xv = node.value.data().to_vec();
            let dx = node.value.grad_mut();
            for ((d, &v), &gi) in dx.iter_mut().zip(&xv).zip(g) {
                *d += if v > T::zero() { gi } else { gi * slope };
            }
        }
        Op::Sigmoid { x } => {
            if let Some(dx) = grad_of(nodes, *x) {
                for ((d, &y), &gi) in dx.iter_mut().zip(out.data()).zip(g) {
                    *d += gi * y * (T::one() - y);
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let node = &mut nodes[x.0];
            let xv = node.value.data().to_vec();
            let dx = node.value.grad_mut();
            for ((d, &v), &gi) in dx.iter_mut().zip(&xv).zip(g) {
                if v >= *lo && v <= *hi {
                    *d += gi;
                }
            }
        }
        Op::Concat { a, b } => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (la, lb) = (sa.item_len(), sb.item_len());
            for n in 0..sa.n {
                let base = n * (la + lb);
                if let Some(da) = grad_of(nodes, *a) {
                    da[n * la..(n + 1) * la]
                        .iter_mut()
                        .zip(&g[base..base + la])
                        .for_each(|(d, &gi)| *d += gi);
                }
                if let Some(db) = grad_of(nodes, *b) {
                    db[n * lb..(n + 1) * lb]
                        .iter_mut()
                        .zip(&g[base + la..base + la + lb])
                        .for_each(|(d, &gi)| *d += gi);
                }
            }
        }
        Op::Add { a, b } | Op::Sub { a, b } => {
            let sign = if matches!(op, Op::Sub { .. }) { -T::one() } else { T::one() };
            if let Some(da) = grad_of(nodes, *a) {
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            if let Some(db) = grad_of(nodes, *b) {
                db.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign * gi);
            }
        }
        Op::Mul { a, b } | Op::Div { a, b } if a == b => {
            let node = &mut nodes[a.0];
            let xv = node.value.data().to_vec();
            let da = node.value.grad_mut();
            if matches!(op, Op::Mul { .. }) {
                for ((d, &v), &gi) in da.iter_mut().zip(&xv).zip(g) {
                    *d += gi * (v + v);
                }
            }
            // x / x is constant: no gradient.
        }
        Op::Mul { a, b } => {
            let (na, nb) = pair(nodes, *a, *b);
            let (av, bv) = (na.value.data().to_vec(), nb.value.data().to_vec());
            if na.requires_grad {
                for ((d, &y), &gi) in na.value.grad_mut().iter_mut().zip(&bv).zip(g) {
                    *d += gi * y;
                }
            }
            if nb.requires_grad {
                for ((d, &x), &gi) in nb.value.grad_mut().iter_mut().zip(&av).zip(g) {
                    *d += gi * x;
                }
            }
        }
        Op::Div { a, b } => {
            let (na, nb) = pair(nodes, *a, *b);
            let bv = nb.value.data().to_vec();
            if na.requires_grad {
                for ((d, &y), &gi) in na.value.grad_mut().iter_mut().zip(&bv).zip(g) {
                    *d += gi / y;
                }
            }
            if nb.requires_grad {
                for (((d, &y), &q), &gi) in nb.value.grad_mut().iter_mut().zip(&bv).zip(out.data()).zip(g) {
                    *d -= gi * q / y;
                }
            }
        }
        Op::Affine { x, scale } => {
            if let Some(dx) = grad_of(nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *scale);
            }
        }
        Op::Abs { x } => {
            let node = &mut nodes[x.0];
            let xv = node.value.data().to_vec();
            let dx = node.value.grad_mut();
            for ((d, &v), &gi) in dx.iter_mut().zip(&xv).zip(g) {
                if v > T::zero() {
                    *d += gi;
                } else if v < T::zero() {
                    *d -= gi;
                }
            }
        }
        Op::Powf { x, p } => {
            let node = &mut nodes[x.0];
            let xv = node.value.data().to_vec();
            let dx = node.value.grad_mut();
            for (((d, &v), &y), &gi) in dx.iter_mut().zip(&xv).zip(out.data()).zip(g) {
                *d += gi * *p * y / v;
            }
        }
        Op::Sum { x } => {
            if let Some(dx) = grad_of(nodes, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::MeanPerItem { x } => {
            let len = nodes[x.0].value.shape().item_len();
            let inv = T::lit(1.0 / len as f64);
            if let Some(dx) = grad_of(nodes, *x) {
                for (chunk, &gi) in dx.chunks_mut(len).zip(g) {
                    chunk.iter_mut().for_each(|d| *d += gi * inv);
                }
            }
        }
        Op::Blur { x, kernel } => {
            let s = nodes[x.0].value.shape();
            if let Some(dx) = grad_of(nodes, *x) {
                kernels::blur_backward(g, s, kernel, dx);
            }
        }
        Op::AvgPool2 { x } => {
            let s = nodes[x.0].value.shape();
            if let Some(dx) = grad_of(nodes, *x) {
                kernels::avg_pool2_backward(g, s, dx);
            }
        }
        Op::Crop { x } => {
            let s = nodes[x.0].value.shape();
            let so = out.shape();
            if let Some(dx) = grad_of(nodes, *x) {
                for n in 0..so.n {
                    for c in 0..so.c {
                        for y in 0..so.h {
                            for xx in 0..so.w {
                                dx[s.index(n, c, y, xx)] += g[so.index(n, c, y, xx)];
                            }
                        }
                    }
                }
            }
        }
        Op::StraightThrough { x, scale } => {
            if let Some(dx) = grad_of(nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *scale);
            }
        }
        Op::Custom { inputs, rule } => {
            let grads = {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
                rule.backward(&vals, out, g)
            };
            for (v, d) in inputs.iter().zip(grads) {
                if let (Some(d), Some(acc)) = (d, grad_of(nodes, *v)) {
                    acc.iter_mut().zip(d).for_each(|(a, d)| *a += d);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_scaling_by_pointwise_kernel() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 4, 4), 1.0));
        let w = g.input(Tensor::full(Shape::new(1, 1, 1, 1), 2.0));
        let b = g.input(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 4, 4));
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_zero_weights_gives_bias() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 4, 4), 1.0));
        let w = g.input(Tensor::zeros(Shape::new(1, 1, 3, 3)));
        let b = g.input(Tensor::full(Shape::new(1, 1, 1, 1), 7.0));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 4, 4));
        assert!(g.value(y).data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let w = g.input(Tensor::zeros(Shape::new(1, 3, 3, 3)));
        let b = g.input(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let msg = g.conv2d(x, w, b, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("1×2×4×4") && msg.contains("1×3×3×3"), "{msg}");
    }

    #[test]
    fn pixel_shuffle_definition() {
        let mut g = Graph::<f32>::new();
        let x = g.input(t(Shape::new(1, 4, 1, 1), &[0.0, 1.0, 2.0, 3.0]));
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 2, 2));
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 2.0, 3.0]);
        let id = g.pixel_shuffle(x, 1).unwrap();
        assert_eq!(g.value(id), g.value(x));
        let bad = g.input(Tensor::zeros(Shape::new(1, 6, 1, 1)));
        assert!(g.pixel_shuffle(bad, 2).is_err());
    }

    #[test]
    fn activations_at_known_points() {
        let mut g = Graph::<f32>::new();
        let x = g.input(t(Shape::new(1, 1, 1, 3), &[0.0, -1.0, 2.0]));
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(l).data(), &[0.0, -0.2, 2.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
    }

    #[test]
    fn concat_shapes_and_empty_operand() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::full(Shape::new(1, 2, 2, 2), 1.0));
        let b = g.input(Tensor::full(Shape::new(1, 3, 2, 2), 2.0));
        let c = g.concat(a, b).unwrap();
        assert_eq!(g.shape(c), Shape::new(1, 5, 2, 2));
        assert_eq!(g.value(c).at(0, 1, 1, 1), 1.0);
        assert_eq!(g.value(c).at(0, 2, 0, 0), 2.0);
        let e = g.input(Tensor::zeros(Shape::new(1, 0, 2, 2)));
        let same = g.concat(a, e).unwrap();
        assert_eq!(g.value(same).data(), g.value(a).data());
        let wrong = g.input(Tensor::zeros(Shape::new(1, 1, 3, 2)));
        assert!(g.concat(a, wrong).is_err());
    }

    #[test]
    fn backward_through_shared_operand() {
        // d/dx Σ x·x = 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, -1.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0, -3.0]);
    }

    #[test]
    fn straight_through_routes_scaled_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.param(t(Shape::new(1, 1, 1, 2), &[0.4, 1.6]));
        let q = g.value(x).map(|v| v.round());
        let y = g.straight_through(x, q, 3.0).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
    }
}
