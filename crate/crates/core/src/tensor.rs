//! Dense `N×C×H×W` tensors and the raw kernels behind every differentiable op.
//!
//! Kernels are plain functions over slices so that the forward pass, the
//! backward pass and the inference-only paths all share one implementation.
//! Every reduction runs in a fixed order (channel-major, then kernel row, then
//! kernel column) so results are reproducible bit for bit.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major dense tensor with an optional gradient buffer of the same shape.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.gen_range(lo..hi)))
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    /// The single value of a `1×1×1×1` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Copies batch item `n` into a new tensor with `N = 1`.
    pub fn batch_item(&self, n: usize) -> Tensor<T> {
        let len = self.shape.item_len();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Copies the top-left `h×w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        if h > self.shape.h || w > self.shape.w {
            return Err(Error::invalid(format!(
                "cannot crop {} to {h}×{w}",
                self.shape
            )));
        }
        let s = self.shape;
        Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
            self.at(n, c, y, x)
        }))
    }

    /// Extends to `h×w` by replicating the last row and column.
    pub fn pad_replicate(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if h < s.h || w < s.w || s.h == 0 || s.w == 0 {
            return Err(Error::invalid(format!("cannot pad {s} to {h}×{w}")));
        }
        Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
            self.at(n, c, y.min(s.h - 1), x.min(s.w - 1))
        }))
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) mod kernels {
    //! Slice-level kernels. Shapes are validated by the callers.

    use super::Shape;
    use crate::scalar::Scalar;

    #[derive(Clone, Copy, Debug)]
    pub struct ConvGeom {
        pub cin: usize,
        pub cout: usize,
        pub k: usize,
        pub stride: usize,
        pub pad: usize,
        pub h: usize,
        pub w: usize,
        pub oh: usize,
        pub ow: usize,
    }

    impl ConvGeom {
        pub fn patch_len(&self) -> usize {
            self.cin * self.k * self.k
        }

        pub fn out_plane(&self) -> usize {
            self.oh * self.ow
        }

        fn is_pointwise(&self) -> bool {
            self.k == 1 && self.stride == 1 && self.pad == 0
        }
    }

    /// Eight-lane dot product with a fixed reduction tree.
    #[inline]
    pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = [T::zero(); 8];
        let mut ca = a.chunks_exact(8);
        let mut cb = b.chunks_exact(8);
        for (x, y) in (&mut ca).zip(&mut cb) {
            for l in 0..8 {
                acc[l] += x[l] * y[l];
            }
        }
        let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
            s += x * y;
        }
        s
    }

    #[inline]
    fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    /// Rows of `cols` are `(ci, ky, kx)` in that nesting order.
    pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
        let plane = g.out_plane();
        for ci in 0..g.cin {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if iy < 0 || iy >= g.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into `dx` (inverse access pattern of [`im2col`]).
    pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
        let plane = g.out_plane();
        for ci in 0..g.cin {
            let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out[co] = bias[co] + Σ_q weight[co, q] · cols[q]`, summed in ascending `q`.
    pub fn conv_forward<T: Scalar>(
        x: &[T],
        n: usize,
        weight: &[T],
        bias: &[T],
        g: &ConvGeom,
        out: &mut [T],
    ) {
        let plane = g.out_plane();
        let patch = g.patch_len();
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); patch * plane]
        };
        for b in 0..n {
            let xin = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
            let cols: &[T] = if g.is_pointwise() {
                xin
            } else {
                im2col(xin, g, &mut cols);
                &cols
            };
            let o = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
            for co in 0..g.cout {
                let orow = &mut o[co * plane..(co + 1) * plane];
                orow.fill(bias[co]);
                let wrow = &weight[co * patch..(co + 1) * patch];
                for (q, &wv) in wrow.iter().enumerate() {
                    axpy(wv, &cols[q * plane..(q + 1) * plane], orow);
                }
            }
        }
    }

    /// Accumulates gradients of a convolution. Any of the outputs may be skipped.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_backward<T: Scalar>(
        x: &[T],
        n: usize,
        weight: &[T],
        g: &ConvGeom,
        gout: &[T],
        mut dx: Option<&mut [T]>,
        mut dw: Option<&mut [T]>,
        mut db: Option<&mut [T]>,
    ) {
        let plane = g.out_plane();
        let patch = g.patch_len();
        let mut cols = vec![T::zero(); patch * plane];
        let mut dcols = vec![T::zero(); patch * plane];
        for b in 0..n {
            let xin = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
            let go = &gout[b * g.cout * plane..(b + 1) * g.cout * plane];
            if let Some(db) = db.as_deref_mut() {
                for co in 0..g.cout {
                    db[co] += go[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                let cols: &[T] = if g.is_pointwise() {
                    xin
                } else {
                    im2col(xin, g, &mut cols);
                    &cols
                };
                for co in 0..g.cout {
                    let grow = &go[co * plane..(co + 1) * plane];
                    for q in 0..patch {
                        dw[co * patch + q] += dot(grow, &cols[q * plane..(q + 1) * plane]);
                    }
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxb = &mut dx[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
                if g.is_pointwise() {
                    for co in 0..g.cout {
                        let grow = &go[co * plane..(co + 1) * plane];
                        for q in 0..patch {
                            axpy(weight[co * patch + q], grow, &mut dxb[q * plane..(q + 1) * plane]);
                        }
                    }
                } else {
                    dcols.fill(T::zero());
                    for co in 0..g.cout {
                        let grow = &go[co * plane..(co + 1) * plane];
                        for q in 0..patch {
                            axpy(
                                weight[co * patch + q],
                                grow,
                                &mut dcols[q * plane..(q + 1) * plane],
                            );
                        }
                    }
                    col2im(&dcols, g, dxb);
                }
            }
        }
    }

    /// Maps output `(n, c, h·r+a, w·r+b)` to input `(n, c·r²+a·r+b, h, w)`.
    #[inline]
    pub fn shuffle_src(s_in: Shape, r: usize, n: usize, c: usize, y: usize, x: usize) -> usize {
        let (h, a) = (y / r, y % r);
        let (w, b) = (x / r, x % r);
        s_in.index(n, c * r * r + a * r + b, h, w)
    }

    pub fn pixel_shuffle<T: Scalar>(x: &[T], s_in: Shape, r: usize, out: &mut [T]) {
        let s_out = Shape::new(s_in.n, s_in.c / (r * r), s_in.h * r, s_in.w * r);
        let mut i = 0;
        for n in 0..s_out.n {
            for c in 0..s_out.c {
                for y in 0..s_out.h {
                    for xx in 0..s_out.w {
                        out[i] = x[shuffle_src(s_in, r, n, c, y, xx)];
                        i += 1;
                    }
                }
            }
        }
    }

    pub fn pixel_shuffle_backward<T: Scalar>(gout: &[T], s_in: Shape, r: usize, dx: &mut [T]) {
        let s_out = Shape::new(s_in.n, s_in.c / (r * r), s_in.h * r, s_in.w * r);
        let mut i = 0;
        for n in 0..s_out.n {
            for c in 0..s_out.c {
                for y in 0..s_out.h {
                    for xx in 0..s_out.w {
                        dx[shuffle_src(s_in, r, n, c, y, xx)] += gout[i];
                        i += 1;
                    }
                }
            }
        }
    }

    /// Separable "valid" filtering of every plane with the same 1-D kernel.
    pub fn blur<T: Scalar>(x: &[T], s: Shape, kernel: &[T], out: &mut [T]) {
        let k = kernel.len();
        let (oh, ow) = (s.h + 1 - k, s.w + 1 - k);
        let mut tmp = vec![T::zero(); s.h * ow];
        for p in 0..s.n * s.c {
            let src = &x[p * s.h * s.w..(p + 1) * s.h * s.w];
            for y in 0..s.h {
                for xx in 0..ow {
                    let mut acc = T::zero();
                    for (t, &kv) in kernel.iter().enumerate() {
                        acc += kv * src[y * s.w + xx + t];
                    }
                    tmp[y * ow + xx] = acc;
                }
            }
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = T::zero();
                    for (t, &kv) in kernel.iter().enumerate() {
                        acc += kv * tmp[(y + t) * ow + xx];
                    }
                    dst[y * ow + xx] = acc;
                }
            }
        }
    }

    pub fn blur_backward<T: Scalar>(gout: &[T], s: Shape, kernel: &[T], dx: &mut [T]) {
        let k = kernel.len();
        let (oh, ow) = (s.h + 1 - k, s.w + 1 - k);
        let mut tmp = vec![T::zero(); s.h * ow];
        for p in 0..s.n * s.c {
            let go = &gout[p * oh * ow..(p + 1) * oh * ow];
            tmp.fill(T::zero());
            for y in 0..oh {
                for xx in 0..ow {
                    let gv = go[y * ow + xx];
                    for (t, &kv) in kernel.iter().enumerate() {
                        tmp[(y + t) * ow + xx] += kv * gv;
                    }
                }
            }
            let d = &mut dx[p * s.h * s.w..(p + 1) * s.h * s.w];
            for y in 0..s.h {
                for xx in 0..ow {
                    let gv = tmp[y * ow + xx];
                    for (t, &kv) in kernel.iter().enumerate() {
                        d[y * s.w + xx + t] += kv * gv;
                    }
                }
            }
        }
    }

    /// 2×2 average pooling; odd trailing rows/columns are dropped.
    pub fn avg_pool2<T: Scalar>(x: &[T], s: Shape, out: &mut [T]) {
        let (oh, ow) = (s.h / 2, s.w / 2);
        let quarter = T::lit(0.25);
        for p in 0..s.n * s.c {
            let src = &x[p * s.h * s.w..];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * s.w + 2 * xx;
                    out[p * oh * ow + y * ow + xx] =
                        (src[i] + src[i + 1] + src[i + s.w] + src[i + s.w + 1]) * quarter;
                }
            }
        }
    }

    pub fn avg_pool2_backward<T: Scalar>(gout: &[T], s: Shape, dx: &mut [T]) {
        let (oh, ow) = (s.h / 2, s.w / 2);
        let quarter = T::lit(0.25);
        for p in 0..s.n * s.c {
            for y in 0..oh {
                for xx in 0..ow {
                    let g = gout[p * oh * ow + y * ow + xx] * quarter;
                    let i = p * s.h * s.w + 2 * y * s.w + 2 * xx;
                    dx[i] += g;
                    dx[i + 1] += g;
                    dx[i + s.w] += g;
                    dx[i + s.w + 1] += g;
                }
            }
        }
    }
}
