//! Importance-map quantization, channel-mask expansion, the mask loss and the
//! 8-bit uniform latent quantizer.
//!
//! The importance map `τ ∈ [0,1]` selects how many leading latent channels
//! survive at every site: `m_k = 1` iff `k < F·τ` with `τ` quantized to one of
//! `F + 1` levels. Training uses the same hard forward values as inference;
//! gradients flow through a clamped-ramp surrogate for the mask and through
//! straight-through identities for every rounding step.

use crate::autodiff::{CustomBackward, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{round_half_away, Scalar};
use crate::tensor::{Shape, Tensor};

/// Mask level `ℓ = round(F·τ)` clamped to `0..=F`.
#[inline]
pub fn tau_level<T: Scalar>(tau: T, channels: usize) -> usize {
    let l = round_half_away(tau.as_f64() * channels as f64);
    l.clamp(0.0, channels as f64) as usize
}

/// `round(τ·F)/F`.
#[inline]
pub fn quantize_tau<T: Scalar>(tau: T, channels: usize) -> T {
    T::lit(tau_level(tau, channels) as f64 / channels as f64)
}

pub fn quantize_tau_map<T: Scalar>(tau: &Tensor<T>, channels: usize) -> Tensor<T> {
    tau.map(|t| quantize_tau(t, channels))
}

/// Expands an `N×1×h×w` importance map to an `N×F×h×w` binary prefix mask.
pub fn expand_mask<T: Scalar>(tau_q: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let s = tau_q.shape();
    if s.c != 1 {
        return Err(Error::invalid(format!("importance map must have one channel, got {s}")));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, channels, s.h, s.w), |n, k, y, x| {
        if k < tau_level(tau_q.at(n, 0, y, x), channels) {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// Training surrogate `clamp(F·τ − k, 0, 1)`.
pub fn soft_mask<T: Scalar>(tau: &Tensor<T>, channels: usize) -> Tensor<T> {
    let s = tau.shape();
    let f = T::lit(channels as f64);
    Tensor::from_fn(Shape::new(s.n, channels, s.h, s.w), |n, k, y, x| {
        (f * tau.at(n, 0, y, x) - T::lit(k as f64)).max(T::zero()).min(T::one())
    })
}

/// `|mean(τ) − β|`.
pub fn mask_loss<T: Scalar>(tau: &Tensor<T>, beta: f64) -> T {
    let mean = tau.data().iter().map(|v| v.as_f64()).sum::<f64>() / tau.data().len().max(1) as f64;
    T::lit((mean - beta).abs())
}

struct RampMaskRule {
    channels: usize,
}

impl<T: Scalar> CustomBackward<T> for RampMaskRule {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let tau = inputs[0];
        let s = tau.shape();
        let f = T::lit(self.channels as f64);
        let plane = s.plane_len();
        let mut d = vec![T::zero(); tau.data().len()];
        for n in 0..s.n {
            for p in 0..plane {
                let t = tau.data()[n * plane + p];
                let mut acc = T::zero();
                for k in 0..self.channels {
                    let r = f * t - T::lit(k as f64);
                    if r > T::zero() && r < T::one() {
                        acc += f * g[(n * self.channels + k) * plane + p];
                    }
                }
                d[n * plane + p] = acc;
            }
        }
        vec![Some(d)]
    }
}

/// Hard prefix mask in the forward pass, clamped-ramp gradient to `τ`.
pub fn mask_var<T: Scalar>(g: &mut Graph<T>, tau: Var, channels: usize) -> Result<Var> {
    let m = expand_mask(g.value(tau), channels)?;
    Ok(g.custom(vec![tau], m, Box::new(RampMaskRule { channels })))
}

/// `τ_q` with an identity backward.
pub fn quantize_tau_var<T: Scalar>(g: &mut Graph<T>, tau: Var, channels: usize) -> Result<Var> {
    let q = quantize_tau_map(g.value(tau), channels);
    g.straight_through(tau, q, 1.0)
}

/// Per-tensor 8-bit uniform quantizer range.
///
/// `y_min == y_max` marks the degenerate case: every symbol is 0 and
/// dequantizes to `y_min`.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct QuantizerState {
    pub y_min: f32,
    pub y_max: f32,
}

pub const LEVELS: u32 = 256;
const TOP: f32 = (LEVELS - 1) as f32;

impl QuantizerState {
    pub fn new(y_min: f32, y_max: f32) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) || y_min > y_max {
            return Err(Error::invalid(format!("invalid quantizer range [{y_min}, {y_max}]")));
        }
        Ok(QuantizerState { y_min, y_max })
    }

    /// Chooses the tightest grid covering `values` and 0 on which 0 is a
    /// level, so zeros survive a round trip exactly.
    pub fn fit(values: &[f32]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cannot quantize non-finite latents"));
        }
        let (min, max) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if values.is_empty() || min == max {
            let c = if values.is_empty() { 0.0 } else { min };
            return Ok(QuantizerState { y_min: c, y_max: c });
        }
        let (lo, hi) = (min.min(0.0), max.max(0.0));
        let step = (hi - lo) / TOP;
        let zero = round_half_away(-lo / step);
        let y_min = -zero * step;
        Ok(QuantizerState {
            y_min,
            y_max: y_min + TOP * step,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.y_min == self.y_max
    }

    pub fn step(&self) -> f32 {
        (self.y_max - self.y_min) / TOP
    }

    fn contains_zero(&self) -> bool {
        self.y_min <= 0.0 && 0.0 <= self.y_max
    }

    pub fn quantize(&self, x: f32) -> u8 {
        if self.is_degenerate() {
            return 0;
        }
        let q = round_half_away((x - self.y_min) * TOP / (self.y_max - self.y_min));
        q.clamp(0.0, TOP) as u8
    }

    /// Symbol that encodes an exact zero, when 0 lies inside the range.
    pub fn zero_symbol(&self) -> Option<u8> {
        (!self.is_degenerate() && self.contains_zero()).then(|| self.quantize(0.0))
    }

    pub fn dequantize(&self, q: u8) -> f32 {
        if self.is_degenerate() {
            return self.y_min;
        }
        if self.zero_symbol() == Some(q) {
            return 0.0;
        }
        self.y_min + q as f32 * (self.y_max - self.y_min) / TOP
    }

    /// Symbols per unit of latent value; the straight-through slope.
    pub fn symbols_per_unit(&self) -> f32 {
        if self.is_degenerate() {
            0.0
        } else {
            TOP / (self.y_max - self.y_min)
        }
    }
}

/// Integer tensor of 8-bit symbols.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymbolTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl SymbolTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "symbol tensor {channels}×{height}×{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(SymbolTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        SymbolTensor {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> Shape {
        Shape::new(1, self.channels, self.height, self.width)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape(), self.data.iter().map(|&q| T::lit(q as f64)).collect())
            .expect("shape matches")
    }

    /// Rounds and clamps an `1×C×H×W` tensor of symbol values.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let s = t.shape();
        SymbolTensor {
            channels: s.c,
            height: s.h,
            width: s.w,
            data: t
                .data()
                .iter()
                .map(|&v| round_half_away(v.as_f64()).clamp(0.0, TOP as f64) as u8)
                .collect(),
        }
    }
}

/// Quantizes one latent item, returning the symbols and the range used.
pub fn quantize_latent<T: Scalar>(y: &Tensor<T>) -> Result<(SymbolTensor, QuantizerState)> {
    let s = y.shape();
    if s.n != 1 {
        return Err(Error::invalid(format!("quantize_latent expects a single item, got {s}")));
    }
    let values: Vec<f32> = y.data().iter().map(|v| v.as_f32()).collect();
    let state = QuantizerState::fit(&values)?;
    let data = values.iter().map(|&v| state.quantize(v)).collect();
    Ok((SymbolTensor::new(s.c, s.h, s.w, data)?, state))
}

pub fn dequantize_latent<T: Scalar>(symbols: &SymbolTensor, state: &QuantizerState) -> Tensor<T> {
    Tensor::from_vec(
        symbols.shape(),
        symbols.data.iter().map(|&q| T::of_f32(state.dequantize(q))).collect(),
    )
    .expect("shape matches")
}

/// Latent quantization inside a graph.
pub struct QuantizedLatent {
    /// Symbol values as floats; gradient slope `255/(y_max − y_min)`.
    pub symbols: Var,
    /// Dequantized latent; identity gradient.
    pub dequantized: Var,
    pub state: QuantizerState,
    pub hard: SymbolTensor,
}

pub fn quantize_latent_var<T: Scalar>(g: &mut Graph<T>, y: Var) -> Result<QuantizedLatent> {
    let (hard, state) = quantize_latent(g.value(y))?;
    let sym_vals = hard.to_tensor::<T>();
    let deq_vals = dequantize_latent::<T>(&hard, &state);
    let symbols = g.straight_through(y, sym_vals, state.symbols_per_unit() as f64)?;
    let dequantized = g.straight_through(y, deq_vals, 1.0)?;
    Ok(QuantizedLatent {
        symbols,
        dequantized,
        state,
        hard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tau_quantization_examples() {
        assert_eq!(quantize_tau(0.0f32, 10), 0.0);
        assert_eq!(quantize_tau(1.0f32, 10), 1.0);
        assert_eq!(quantize_tau(0.44f32, 10), 0.4);
        assert_eq!(quantize_tau(0.46f32, 10), 0.5);
        for i in 0..=100 {
            let t = i as f32 / 100.0;
            let q = quantize_tau(t, 10);
            assert_eq!(quantize_tau(q, 10), q);
        }
    }

    #[test]
    fn mask_limits_and_half() {
        let tau = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, 0.5]).unwrap();
        let m = expand_mask(&tau, 10).unwrap();
        for k in 0..10 {
            assert_eq!(m.at(0, k, 0, 0), 0.0);
            assert_eq!(m.at(0, k, 0, 1), 1.0);
            assert_eq!(m.at(0, k, 0, 2), if k < 5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn mask_monotone_in_tau() {
        for a in 0..=10 {
            for b in a..=10 {
                let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![a as f32 / 10.0, b as f32 / 10.0])
                    .unwrap();
                let m = expand_mask(&t, 10).unwrap();
                for k in 0..10 {
                    assert!(m.at(0, k, 0, 1) >= m.at(0, k, 0, 0));
                }
            }
        }
    }

    #[test]
    fn hard_and_soft_agree_off_the_ramp() {
        for f in [4usize, 10, 16] {
            for level in 0..=f {
                let tau = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), level as f64 / f as f64);
                let hard = expand_mask(&tau, f).unwrap();
                let soft = soft_mask(&tau, f);
                for k in 0..f {
                    let r = f as f64 * tau.item() - k as f64;
                    if r <= 0.0 || r >= 1.0 {
                        assert_eq!(hard.at(0, k, 0, 0), soft.at(0, k, 0, 0), "F={f} level={level} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn mask_loss_examples() {
        let s = Shape::new(1, 1, 2, 2);
        assert_eq!(mask_loss(&Tensor::<f64>::full(s, 0.3), 0.3), 0.0);
        assert!((mask_loss(&Tensor::<f64>::full(s, 1.0), 0.3) - 0.7).abs() < 1e-12);
        assert!((mask_loss(&Tensor::<f64>::full(s, 0.0), 0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn quantizer_midpoint_example() {
        let q = QuantizerState::new(0.0, 1.0).unwrap();
        assert_eq!(q.quantize(0.5), 128);
        assert_eq!(q.dequantize(128), 128.0 / 255.0);
    }

    #[test]
    fn constant_tensor_is_exact() {
        for c in [0.0f32, 2.5, -1.25] {
            let y = Tensor::<f32>::full(Shape::new(1, 3, 2, 2), c);
            let (sym, st) = quantize_latent(&y).unwrap();
            assert!(st.is_degenerate());
            assert!(sym.data.iter().all(|&q| q == 0));
            assert_eq!(dequantize_latent::<f32>(&sym, &st), y);
        }
    }

    #[test]
    fn masked_zeros_survive_exactly() {
        let y = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 4), vec![0.3, 0.0, 1.7, 0.0]).unwrap();
        let (sym, st) = quantize_latent(&y).unwrap();
        let back = dequantize_latent::<f32>(&sym, &st);
        assert_eq!(back.data()[1], 0.0);
        assert_eq!(back.data()[3], 0.0);
        assert_eq!(sym.data[1], st.zero_symbol().unwrap());
    }

    #[test]
    fn ramp_gradient_is_f_inside_ramp() {
        let mut g = Graph::<f64>::new();
        let tau = g.param(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.42, 0.5]).unwrap());
        let m = mask_var(&mut g, tau, 10).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        // 10·0.42 − 4 = 0.2 lies on the ramp of channel 4 only; 10·0.5 hits none.
        assert_eq!(g.grad(tau).unwrap(), &[10.0, 0.0]);
    }

    proptest! {
        #[test]
        fn round_trip_error_within_half_step(values in prop::collection::vec(-50.0f32..50.0, 2..64)) {
            let st = QuantizerState::fit(&values).unwrap();
            prop_assume!(!st.is_degenerate());
            prop_assert!(st.y_min <= 0.0 && st.y_max >= 0.0);
            let scale = values.iter().fold(1.0f32, |a, v| a.max(v.abs()));
            let bound = 0.5 * st.step() + 8.0 * f32::EPSILON * scale;
            for &x in &values {
                let back = st.dequantize(st.quantize(x));
                prop_assert!((back - x).abs() <= bound, "x={x} back={back} bound={bound}");
            }
            prop_assert_eq!(st.dequantize(st.quantize(0.0)), 0.0);
            prop_assert_eq!(st.dequantize(st.quantize(0.0)), 0.0);
        }

        #[test]
        fn every_mask_is_a_prefix(levels in prop::collection::vec(0usize..=16, 1..20), f in prop::sample::select(vec![4usize, 10, 16])) {
            let data: Vec<f32> = levels.iter().map(|&l| l.min(f) as f32 / f as f32).collect();
            let tau = Tensor::from_vec(Shape::new(1, 1, 1, data.len()), data).unwrap();
            let m = expand_mask(&tau, f).unwrap();
            for x in 0..levels.len() {
                let on = (0..f).filter(|&k| m.at(0, k, 0, x) == 1.0).count();
                prop_assert_eq!(on, levels[x].min(f));
                for k in 1..f {
                    prop_assert!(m.at(0, k, 0, x) <= m.at(0, k - 1, 0, x));
                }
            }
        }
    }
}
