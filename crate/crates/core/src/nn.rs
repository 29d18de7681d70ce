//! Parameter storage and convolution layers.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv_out_dim, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, ordered list of named parameter tensors.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    /// Zero-filled gradient buffers aligned with the store.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| vec![T::zero(); t.data().len()]).collect()
    }

    /// Replaces every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .find(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    left: t.shape(),
                    right: src.shape(),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Lazily records parameters of a [`ParamStore`] in a [`Graph`].
///
/// With `trainable` set, parameters become gradient-tracked leaves and their
/// gradients can be collected after [`Graph::backward`].
pub struct Binding<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Scalar> Binding<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: bool) -> Self {
        Binding {
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn var(&mut self, g: &mut Graph<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable { g.param(t) } else { g.input(t) };
        self.vars[id.0] = Some(v);
        v
    }

    /// Adds the gradients of every bound parameter into `acc`.
    pub fn accumulate_grads(&self, g: &Graph<T>, acc: &mut [Vec<T>]) {
        for (slot, v) in acc.iter_mut().zip(&self.vars) {
            if let Some(grad) = v.and_then(|v| g.grad(v)) {
                slot.iter_mut().zip(grad).for_each(|(a, &d)| *a += d);
            }
        }
    }
}

/// `k×k` convolution with bias. Weights are stored `out×in×k×k`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Negative slope of every hidden leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

impl ConvLayer {
    /// Registers a layer with He-uniform weights (gain for a leaky rectifier)
    /// and zero bias. Padding is `k/2`, which preserves size at stride 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel).max(1) as f64;
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let weight = Tensor::uniform(
            Shape::new(out_channels, in_channels, kernel, kernel),
            -bound,
            bound,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), weight);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out_channels, 1, 1)));
        ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input,
                right: Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel),
            });
        }
        let oh = conv_out_dim(input.h, self.kernel, self.stride, self.padding);
        let ow = conv_out_dim(input.w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape::new(input.n, self.out_channels, oh, ow)),
            _ => Err(Error::invalid(format!("input {input} too small for kernel {}", self.kernel))),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, x: Var) -> Result<Var> {
        let w = p.var(g, self.weight);
        let b = p.var(g, self.bias);
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}
