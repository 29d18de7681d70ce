//! Multi-scale probability model for the quantized latent.
//!
//! Scale `i` holds an 8-bit tensor `z⁽ⁱ⁾`. An extractor halves width, height
//! and channel count to produce `z⁽ⁱ⁺¹⁾`; a predictor maps `z⁽ⁱ⁺¹⁾` back to
//! the resolution of scale `i` and emits, per element, a `K`-component
//! discretized logistic mixture. Locations additionally depend linearly on
//! the symbol of the previous channel at the same site, so channel `c` can
//! only be decoded after channel `c − 1`. The coarsest tensor `z⁽ˢ⁾` is
//! stored without a model.
//!
//! All probability arithmetic runs in `f64` through `libm` so that encoder
//! and decoder derive identical frequency tables.

use rand::Rng;

use crate::autodiff::{CustomBackward, Graph, Var};
use crate::error::{Error, Result};
use crate::mask_quant::SymbolTensor;
use crate::nn::{Binding, ConvLayer, ParamStore, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Number of symbol values.
pub const ALPHABET: usize = 256;
/// Midpoint of the symbol range; locations are parameterized around it.
pub const SYMBOL_CENTER: f64 = 127.5;
/// `s = SCALE_UNIT · softplus(raw) + SCALE_FLOOR`, in symbol units.
pub const SCALE_UNIT: f64 = 8.0;
pub const SCALE_FLOOR: f64 = 1e-3;
/// PMF floor: `p ← (1 − ε)·p + ε/256`, so every entry is at least `2⁻¹⁶`.
pub const PMF_FLOOR_EPS: f64 = 1.0 / 256.0;
/// Bits charged per element of the unmodelled coarsest scale.
pub const RAW_BITS_PER_SYMBOL: f64 = 8.0;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MsProbConfig {
    pub scales: usize,
    pub mixtures: usize,
    pub latent_channels: usize,
    pub hidden: usize,
}

impl Default for MsProbConfig {
    fn default() -> Self {
        MsProbConfig {
            scales: 2,
            mixtures: 5,
            latent_channels: 10,
            hidden: 32,
        }
    }
}

impl MsProbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.mixtures == 0 || self.latent_channels == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("invalid probability model config {self:?}")));
        }
        Ok(())
    }

    /// Channel counts `c₀ … c_S`.
    pub fn channels(&self) -> Vec<usize> {
        let mut c = vec![self.latent_channels];
        for _ in 0..self.scales {
            let last = *c.last().unwrap();
            c.push(last.div_ceil(2));
        }
        c
    }

    /// Spatial size of every scale for a latent of `h×w`.
    pub fn dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut d = vec![(h, w)];
        for _ in 0..self.scales {
            let (a, b) = *d.last().unwrap();
            d.push((a.div_ceil(2), b.div_ceil(2)));
        }
        d
    }

    /// Parameter planes predicted for a scale with `channels` channels.
    pub fn planes(&self, channels: usize) -> usize {
        channels * 3 * self.mixtures + self.mixtures
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn recentre(symbol: f64) -> f64 {
    (symbol - SYMBOL_CENTER) / SYMBOL_CENTER
}

#[inline]
fn location_from_raw(raw_mu: f64, raw_lambda: f64, prev: Option<f64>) -> f64 {
    let shift = prev.map_or(0.0, |q| raw_lambda * SYMBOL_CENTER * recentre(q));
    SYMBOL_CENTER * (1.0 + raw_mu) + shift
}

#[inline]
fn scale_from_raw(raw_s: f64) -> f64 {
    SCALE_UNIT * softplus(raw_s) + SCALE_FLOOR
}

fn softmax(raw: &[f64], out: &mut [f64]) {
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &r) in out.iter_mut().zip(raw) {
        *o = libm::exp(r - m);
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Mass of symbol `q` under a logistic with location `mu` and scale `s`;
/// the outermost bins absorb the tails.
pub fn bin_probability(q: u8, mu: f64, s: f64) -> f64 {
    bin_with_grad(q as f64, q, mu, s).0
}

/// Returns `(p, ∂p/∂μ, ∂p/∂s, ∂p/∂q)`. `edge` selects tail handling and is the
/// integer symbol `q` stands for.
fn bin_with_grad(q: f64, edge: u8, mu: f64, s: f64) -> (f64, f64, f64, f64) {
    let a = (q - 0.5 - mu) / s;
    let b = (q + 0.5 - mu) / s;
    let lower_open = edge == 0;
    let upper_open = edge as usize == ALPHABET - 1;
    let p = match (lower_open, upper_open) {
        (true, true) => 1.0,
        (true, false) => sigmoid(b),
        (false, true) => sigmoid(-a),
        (false, false) => {
            if a > 0.0 {
                sigmoid(-a) - sigmoid(-b)
            } else {
                sigmoid(b) - sigmoid(a)
            }
        }
    };
    // σ'(x) = σ(x)σ(−x)
    let da = if lower_open { 0.0 } else { -sigmoid(a) * sigmoid(-a) };
    let db = if upper_open { 0.0 } else { sigmoid(b) * sigmoid(-b) };
    let dmu = -(da + db) / s;
    let ds = -(da * a + db * b) / s;
    let dq = (da + db) / s;
    (p, dmu, ds, dq)
}

#[inline]
fn floor_pmf(p: f64) -> f64 {
    (1.0 - PMF_FLOOR_EPS) * p + PMF_FLOOR_EPS / ALPHABET as f64
}

/// Decoded mixture parameters of one scale.
#[derive(Clone, Debug)]
pub struct MixtureParams {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mixtures: usize,
    raw: Vec<f64>,
    weights: Vec<f64>,
}

impl MixtureParams {
    /// Interprets a `1×(C·3K+K)×H×W` predictor output.
    pub fn from_raw<T: Scalar>(raw: &Tensor<T>, channels: usize, mixtures: usize) -> Result<Self> {
        let s = raw.shape();
        if s.n != 1 || s.c != channels * 3 * mixtures + mixtures {
            return Err(Error::invalid(format!(
                "{s} is not a parameter tensor for {channels} channels and {mixtures} mixtures"
            )));
        }
        let raw_f: Vec<f64> = raw.data().iter().map(|v| v.as_f64()).collect();
        let plane = s.plane_len();
        let mut weights = vec![0.0; mixtures * plane];
        let mut logits = vec![0.0; mixtures];
        let mut pi = vec![0.0; mixtures];
        for p in 0..plane {
            for k in 0..mixtures {
                logits[k] = raw_f[(channels * 3 * mixtures + k) * plane + p];
            }
            softmax(&logits, &mut pi);
            for k in 0..mixtures {
                weights[k * plane + p] = pi[k];
            }
        }
        Ok(MixtureParams {
            channels,
            height: s.h,
            width: s.w,
            mixtures,
            raw: raw_f,
            weights,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn raw_at(&self, c: usize, j: usize, k: usize, site: usize) -> f64 {
        self.raw[((c * 3 + j) * self.mixtures + k) * self.plane() + site]
    }

    /// Total number of distribution parameters, `C·3·K·H·W + K·H·W`.
    pub fn parameter_count(&self) -> usize {
        (self.channels * 3 + 1) * self.mixtures * self.plane()
    }

    pub fn weight(&self, k: usize, y: usize, x: usize) -> f64 {
        self.weights[k * self.plane() + y * self.width + x]
    }

    pub fn location_base(&self, k: usize, c: usize, y: usize, x: usize) -> f64 {
        location_from_raw(self.raw_at(c, 0, k, y * self.width + x), 0.0, None)
    }

    /// Channel-dependency weight `λ` in symbol units per recentred unit.
    pub fn channel_weight(&self, k: usize, c: usize, y: usize, x: usize) -> f64 {
        if c == 0 {
            0.0
        } else {
            SYMBOL_CENTER * self.raw_at(c, 1, k, y * self.width + x)
        }
    }

    pub fn scale(&self, k: usize, c: usize, y: usize, x: usize) -> f64 {
        scale_from_raw(self.raw_at(c, 2, k, y * self.width + x))
    }

    /// Location of component `k`, shifted by the previous channel's symbol.
    pub fn location(&self, k: usize, c: usize, y: usize, x: usize, prev: Option<u8>) -> f64 {
        let site = y * self.width + x;
        let prev = if c == 0 { None } else { prev.map(|q| q as f64) };
        location_from_raw(self.raw_at(c, 0, k, site), self.raw_at(c, 1, k, site), prev)
    }

    /// Unfloored mixture probability of `q`.
    pub fn probability(&self, q: u8, c: usize, y: usize, x: usize, prev: Option<u8>) -> f64 {
        (0..self.mixtures)
            .map(|k| {
                self.weight(k, y, x) * bin_probability(q, self.location(k, c, y, x, prev), self.scale(k, c, y, x))
            })
            .sum()
    }

    /// Floored 256-entry PMF of element `(c, y, x)`.
    pub fn pmf(&self, c: usize, y: usize, x: usize, prev: Option<u8>) -> Vec<f64> {
        let comps: Vec<(f64, f64, f64)> = (0..self.mixtures)
            .map(|k| (self.weight(k, y, x), self.location(k, c, y, x, prev), self.scale(k, c, y, x)))
            .collect();
        (0..ALPHABET)
            .map(|q| {
                let p: f64 = comps.iter().map(|&(w, mu, s)| w * bin_probability(q as u8, mu, s)).sum();
                floor_pmf(p)
            })
            .collect()
    }

    /// `−log₂` of the floored probability of `q`.
    pub fn bits(&self, q: u8, c: usize, y: usize, x: usize, prev: Option<u8>) -> f64 {
        -libm::log2(floor_pmf(self.probability(q, c, y, x, prev)))
    }

    /// Code length of a whole symbol tensor under these parameters.
    pub fn tensor_bits(&self, z: &SymbolTensor) -> Result<f64> {
        if (z.channels, z.height, z.width) != (self.channels, self.height, self.width) {
            return Err(Error::invalid(format!(
                "symbols {}×{}×{} do not match parameters {}×{}×{}",
                z.channels, z.height, z.width, self.channels, self.height, self.width
            )));
        }
        let mut total = 0.0;
        for c in 0..z.channels {
            for y in 0..z.height {
                for x in 0..z.width {
                    let prev = (c > 0).then(|| z.at(c - 1, y, x));
                    total += self.bits(z.at(c, y, x), c, y, x, prev);
                }
            }
        }
        Ok(total)
    }
}

/// Per-element code length in bits as a differentiable graph op.
struct MixtureBitsRule {
    channels: usize,
    mixtures: usize,
}

impl MixtureBitsRule {
    /// Evaluates every element; with `grads` set, also accumulates
    /// `Σ g·∂bits` into the raw-parameter and symbol gradients.
    fn run<T: Scalar>(
        &self,
        raw: &Tensor<T>,
        sym: &Tensor<T>,
        mut grads: Option<(&[T], &mut [f64], &mut [f64])>,
    ) -> Vec<f64> {
        let (c_n, k_n) = (self.channels, self.mixtures);
        let s = sym.shape();
        let plane = s.plane_len();
        let rawv = |j: usize, site: usize| raw.data()[j * plane + site].as_f64();
        let mut bits = vec![0.0; s.item_len()];
        let mut logits = vec![0.0; k_n];
        let mut pi = vec![0.0; k_n];
        let mut comp = vec![(0.0, 0.0, 0.0, 0.0); k_n];
        for site in 0..plane {
            for k in 0..k_n {
                logits[k] = rawv(c_n * 3 * k_n + k, site);
            }
            softmax(&logits, &mut pi);
            for c in 0..c_n {
                let qf = sym.data()[c * plane + site].as_f64();
                let edge = qf.round().clamp(0.0, 255.0) as u8;
                let prev = (c > 0).then(|| sym.data()[(c - 1) * plane + site].as_f64());
                let mut p = 0.0;
                for k in 0..k_n {
                    let mu = location_from_raw(rawv((c * 3) * k_n + k, site), rawv((c * 3 + 1) * k_n + k, site), prev);
                    let sc = scale_from_raw(rawv((c * 3 + 2) * k_n + k, site));
                    comp[k] = bin_with_grad(qf, edge, mu, sc);
                    p += pi[k] * comp[k].0;
                }
                let pf = floor_pmf(p);
                bits[c * plane + site] = -libm::log2(pf);
                let Some((g, d_raw, d_sym)) = grads.as_mut() else { continue };
                let go = g[c * plane + site].as_f64();
                if go == 0.0 {
                    continue;
                }
                // ∂bits/∂p
                let dp = -go * (1.0 - PMF_FLOOR_EPS) / (pf * std::f64::consts::LN_2);
                for k in 0..k_n {
                    let (bk, dmu, ds, dq) = comp[k];
                    d_raw[(c_n * 3 * k_n + k) * plane + site] += dp * pi[k] * (bk - p);
                    let dmu_total = dp * pi[k] * dmu;
                    d_raw[((c * 3) * k_n + k) * plane + site] += dmu_total * SYMBOL_CENTER;
                    if let Some(q_prev) = prev {
                        let raw_lambda = rawv((c * 3 + 1) * k_n + k, site);
                        d_raw[((c * 3 + 1) * k_n + k) * plane + site] += dmu_total * SYMBOL_CENTER * recentre(q_prev);
                        // ∂μ/∂q_prev = raw_λ
                        d_sym[(c - 1) * plane + site] += dmu_total * raw_lambda;
                    }
                    let raw_s = rawv((c * 3 + 2) * k_n + k, site);
                    d_raw[((c * 3 + 2) * k_n + k) * plane + site] += dp * pi[k] * ds * SCALE_UNIT * sigmoid(raw_s);
                    d_sym[c * plane + site] += dp * pi[k] * dq;
                }
            }
        }
        bits
    }
}

impl<T: Scalar> CustomBackward<T> for MixtureBitsRule {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (raw, sym) = (inputs[0], inputs[1]);
        let mut d_raw = vec![0.0; raw.data().len()];
        let mut d_sym = vec![0.0; sym.data().len()];
        self.run(raw, sym, Some((g, &mut d_raw, &mut d_sym)));
        let cast = |v: Vec<f64>| v.into_iter().map(T::lit).collect();
        vec![Some(cast(d_raw)), Some(cast(d_sym))]
    }
}

/// Records per-element bits of `symbols` (`1×C×H×W`, float symbol values)
/// under raw predictor output `params` (`1×(C·3K+K)×H×W`).
pub fn mixture_bits_var<T: Scalar>(g: &mut Graph<T>, params: Var, symbols: Var, mixtures: usize) -> Result<Var> {
    let (sp, ss) = (g.shape(params), g.shape(symbols));
    if ss.n != 1 || sp.n != 1 || sp.h != ss.h || sp.w != ss.w || sp.c != ss.c * 3 * mixtures + mixtures {
        return Err(Error::ShapeMismatch {
            op: "mixture_bits",
            left: sp,
            right: ss,
        });
    }
    let rule = MixtureBitsRule {
        channels: ss.c,
        mixtures,
    };
    let bits = rule.run(g.value(params), g.value(symbols), None);
    let out = Tensor::from_vec(ss, bits.into_iter().map(T::lit).collect())?;
    Ok(g.custom(vec![params, symbols], out, Box::new(rule)))
}

/// Tensors `z⁽⁰⁾ … z⁽ˢ⁾`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ScaleStack {
    pub scales: Vec<SymbolTensor>,
}

impl ScaleStack {
    pub fn coarsest(&self) -> &SymbolTensor {
        self.scales.last().expect("non-empty stack")
    }
}

/// Extractor and predictor networks of every scale.
#[derive(Clone, Debug)]
pub struct MsProb {
    pub config: MsProbConfig,
    extractors: Vec<[ConvLayer; 3]>,
    predictors: Vec<[ConvLayer; 3]>,
}

/// Initial scale bias, `s ≈ 8·softplus(−1) ≈ 2.5` symbols.
const INITIAL_SCALE_BIAS: f64 = -1.0;

impl MsProb {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: MsProbConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ch = config.channels();
        let hid = config.hidden;
        let mut extractors = Vec::new();
        let mut predictors = Vec::new();
        for i in 0..config.scales {
            extractors.push([
                ConvLayer::new(store, &format!("msprob.extract{i}.0"), ch[i], hid, 3, 2, rng),
                ConvLayer::new(store, &format!("msprob.extract{i}.1"), hid, hid, 3, 1, rng),
                ConvLayer::new(store, &format!("msprob.extract{i}.2"), hid, ch[i + 1], 3, 1, rng),
            ]);
            let planes = config.planes(ch[i]);
            let last = ConvLayer::new(store, &format!("msprob.predict{i}.2"), hid, 4 * planes, 3, 1, rng);
            // Shrink the output layer so initial locations sit near the centre.
            for w in store.get_mut(last.weight).data_mut() {
                *w *= T::lit(0.1);
            }
            let bias = store.get_mut(last.bias).data_mut();
            for c in 0..ch[i] {
                for k in 0..config.mixtures {
                    let plane = (c * 3 + 2) * config.mixtures + k;
                    for sub in 0..4 {
                        bias[plane * 4 + sub] = T::lit(INITIAL_SCALE_BIAS);
                    }
                }
            }
            predictors.push([
                ConvLayer::new(store, &format!("msprob.predict{i}.0"), ch[i + 1], hid, 3, 1, rng),
                ConvLayer::new(store, &format!("msprob.predict{i}.1"), hid, hid, 3, 1, rng),
                last,
            ]);
        }
        Ok(MsProb {
            config,
            extractors,
            predictors,
        })
    }

    /// `z⁽ⁱ⁺¹⁾ = round(255·sigmoid(E⁽ⁱ⁾(z⁽ⁱ⁾)))` with a straight-through backward.
    pub fn extract_var<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, scale: usize, z: Var) -> Result<Var> {
        let [a, b, c] = &self.extractors[scale];
        let x = g.affine(z, 1.0 / SYMBOL_CENTER, -1.0);
        let h = a.forward(g, p, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = c.forward(g, p, h)?;
        let s = g.sigmoid(h);
        let v = g.affine(s, 255.0, 0.0);
        let rounded = g.value(v).map(|t| t.round());
        g.straight_through(v, rounded, 1.0)
    }

    /// Raw mixture parameters for scale `scale`, cropped to `h×w`.
    pub fn predict_var<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &mut Binding<'_, T>,
        scale: usize,
        z_next: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let [a, b, c] = &self.predictors[scale];
        let x = g.affine(z_next, 1.0 / SYMBOL_CENTER, -1.0);
        let t = a.forward(g, p, x)?;
        let t = g.leaky_relu(t, LEAKY_SLOPE);
        let t = b.forward(g, p, t)?;
        let t = g.leaky_relu(t, LEAKY_SLOPE);
        let t = c.forward(g, p, t)?;
        let up = g.pixel_shuffle(t, 2)?;
        g.crop(up, h, w)
    }

    /// Training-time rate: Σ bits over scales `0..S` plus the raw cost of
    /// `z⁽ˢ⁾`. Returns the total and the symbol tensors of every scale.
    pub fn rate_var<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, z0: Var) -> Result<(Var, Vec<Var>)> {
        let mut stack = vec![z0];
        for i in 0..self.config.scales {
            let next = self.extract_var(g, p, i, stack[i])?;
            stack.push(next);
        }
        let mut total: Option<Var> = None;
        for i in 0..self.config.scales {
            let s = g.shape(stack[i]);
            let params = self.predict_var(g, p, i, stack[i + 1], s.h, s.w)?;
            let bits = mixture_bits_var(g, params, stack[i], self.config.mixtures)?;
            let sum = g.sum(bits);
            total = Some(match total {
                None => sum,
                Some(t) => g.add(t, sum)?,
            });
        }
        let raw_cost = RAW_BITS_PER_SYMBOL * g.shape(stack[self.config.scales]).numel() as f64;
        let total = g.affine(total.expect("at least one scale"), 1.0, raw_cost);
        Ok((total, stack))
    }

    /// Builds `z⁽⁰⁾ … z⁽ˢ⁾` from the latent symbols.
    pub fn build_stack<T: Scalar>(&self, store: &ParamStore<T>, z0: &SymbolTensor) -> Result<ScaleStack> {
        let mut g = Graph::new();
        let mut p = Binding::new(store, false);
        let mut scales = vec![z0.clone()];
        let mut cur = g.input(z0.to_tensor::<T>());
        for i in 0..self.config.scales {
            cur = self.extract_var(&mut g, &mut p, i, cur)?;
            scales.push(SymbolTensor::from_tensor(g.value(cur)));
        }
        Ok(ScaleStack { scales })
    }

    /// Mixture parameters for scale `scale` given the coarser tensor.
    pub fn predict_params<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        scale: usize,
        z_next: &SymbolTensor,
        h: usize,
        w: usize,
    ) -> Result<MixtureParams> {
        let ch = self.config.channels();
        if z_next.channels != ch[scale + 1] {
            return Err(Error::invalid(format!(
                "scale {} expects {} channels, got {}",
                scale + 1,
                ch[scale + 1],
                z_next.channels
            )));
        }
        let mut g = Graph::new();
        let mut p = Binding::new(store, false);
        let z = g.input(z_next.to_tensor::<T>());
        let raw = self.predict_var(&mut g, &mut p, scale, z, h, w)?;
        MixtureParams::from_raw(g.value(raw), ch[scale], self.config.mixtures)
    }

    /// Evaluation-time rate of a stack, same accounting as [`Self::rate_var`].
    pub fn rate_bits<T: Scalar>(&self, store: &ParamStore<T>, stack: &ScaleStack) -> Result<f64> {
        self.check_stack(stack)?;
        let mut total = RAW_BITS_PER_SYMBOL * stack.coarsest().len() as f64;
        for i in 0..self.config.scales {
            let z = &stack.scales[i];
            let params = self.predict_params(store, i, &stack.scales[i + 1], z.height, z.width)?;
            total += params.tensor_bits(z)?;
        }
        Ok(total)
    }

    pub fn check_stack(&self, stack: &ScaleStack) -> Result<()> {
        if stack.scales.len() != self.config.scales + 1 {
            return Err(Error::invalid(format!(
                "stack has {} tensors, model expects {}",
                stack.scales.len(),
                self.config.scales + 1
            )));
        }
        let ch = self.config.channels();
        let z0 = &stack.scales[0];
        let dims = self.config.dims(z0.height, z0.width);
        for (i, z) in stack.scales.iter().enumerate() {
            if (z.channels, z.height, z.width) != (ch[i], dims[i].0, dims[i].1) {
                return Err(Error::invalid(format!(
                    "scale {i} is {}×{}×{}, expected {}×{}×{}",
                    z.channels, z.height, z.width, ch[i], dims[i].0, dims[i].1
                )));
            }
        }
        Ok(())
    }
}

/// Shape of scale `i` for a batch of one.
pub fn scale_shape(config: &MsProbConfig, latent_h: usize, latent_w: usize, i: usize) -> Shape {
    let (h, w) = config.dims(latent_h, latent_w)[i];
    Shape::new(1, config.channels()[i], h, w)
}
