//! The P-frame codec: frame encoder `Ψ`, embedding encoder `Φ_E`, importance
//! network `Υ`, embedding decoder `Φ_D`, frame decoder `Θ`, attention network
//! `Λ` and mixing layer `ρ`, plus the probability model.
//!
//! ```text
//! f_t, f_{t-1} ──Ψ──> e_t, e_{t-1}      Δe = e_t − e_{t-1}
//! y = Φ_E(Δe)   τ = Υ(Δe)   y_m = y ⊙ mask(τ)   ŷ = Q(y_m)
//! ê_t = e_{t-1} + Φ_D(ŷ)   f̂'_t = Θ(ê_t)   A_t = Λ(ê_t ⊕ e_{t-1})
//! f̂_t = ρ(A_t ⊙ f̂'_t + (1 − A_t) ⊙ f_{t-1})
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::entropy::{
    decode_stack, encode_stack, Container, LatentPayloads, CONTAINER_VERSION, FLAG_DEGENERATE_QUANTIZER,
    FLAG_LAST_SCALE_DEFLATED,
};
use crate::error::{Error, Result};
use crate::mask_quant::{dequantize_latent, mask_var, quantize_latent, quantize_latent_var, QuantizedLatent};
use crate::msprob::{MsProb, MsProbConfig, ScaleStack};
use crate::nn::{Binding, ConvLayer, ParamStore, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Total spatial downsampling between a frame and its latent.
pub const LATENT_STRIDE: usize = 8;
/// Spatial downsampling between a frame and its embedding.
pub const EMBED_STRIDE: usize = 4;
const META: &str = "meta.";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct AblationFlags {
    pub use_attention: bool,
    pub use_importance: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_attention: true,
            use_importance: true,
        }
    }
}

/// Channel widths of every network. Decoder-side lists name the widths
/// after each pixel shuffle.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CodecConfig {
    pub psi: [usize; 3],
    pub phi_e: [usize; 3],
    pub upsilon: [usize; 3],
    pub phi_d: [usize; 3],
    pub theta: [usize; 3],
    pub lambda: [usize; 3],
    pub rho: usize,
    pub msprob: MsProbConfig,
    pub flags: AblationFlags,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            psi: [20, 40, 40],
            phi_e: [80, 40, 10],
            upsilon: [40, 20, 1],
            phi_d: [40, 80, 40],
            theta: [20, 3, 3],
            lambda: [40, 3, 3],
            rho: 3,
            msprob: MsProbConfig::default(),
            flags: AblationFlags::default(),
        }
    }
}

impl CodecConfig {
    /// `F_Ψ`, channels of an embedding.
    pub fn embed_channels(&self) -> usize {
        self.psi[2]
    }

    /// `F_Φ`, channels of the latent.
    pub fn latent_channels(&self) -> usize {
        self.phi_e[2]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.psi, self.phi_e, self.upsilon, self.phi_d, self.theta, self.lambda];
        if all.iter().flatten().any(|&c| c == 0) || self.rho == 0 {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if self.upsilon[2] != 1 {
            return Err(Error::invalid("importance network must end in one channel"));
        }
        if self.phi_d[2] != self.embed_channels() {
            return Err(Error::invalid("embedding decoder must output F_Ψ channels"));
        }
        if self.theta[2] != 3 || self.lambda[2] != 3 || self.rho != 3 || self.theta[1] != 3 || self.lambda[1] != 3 {
            return Err(Error::invalid("frame-resolution stages must carry 3 channels"));
        }
        if self.msprob.latent_channels != self.latent_channels() {
            return Err(Error::invalid("probability model channels differ from F_Φ"));
        }
        self.msprob.validate()
    }
}

/// Round `n` up to a multiple of [`LATENT_STRIDE`].
pub fn padded_dim(n: usize) -> usize {
    n.div_ceil(LATENT_STRIDE) * LATENT_STRIDE
}

/// All trainable state of the codec.
#[derive(Clone, Debug)]
pub struct CodecModel<T: Scalar> {
    pub config: CodecConfig,
    pub params: ParamStore<T>,
    psi: [ConvLayer; 3],
    phi_e: [ConvLayer; 3],
    upsilon: [ConvLayer; 3],
    phi_d: [ConvLayer; 3],
    theta: [ConvLayer; 3],
    lambda: [ConvLayer; 3],
    rho: ConvLayer,
    pub msprob: MsProb,
}

fn conv<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> ConvLayer {
    ConvLayer::new(store, name, cin, cout, 3, stride, rng)
}

impl<T: Scalar> CodecModel<T> {
    pub fn new(config: CodecConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let s = &mut ParamStore::new();
        let fe = c.embed_channels();
        let psi = [
            conv(s, "psi.0", 3, c.psi[0], 2, rng),
            conv(s, "psi.1", c.psi[0], c.psi[1], 2, rng),
            conv(s, "psi.2", c.psi[1], c.psi[2], 1, rng),
        ];
        let phi_e = [
            conv(s, "phi_e.0", fe, c.phi_e[0], 2, rng),
            conv(s, "phi_e.1", c.phi_e[0], c.phi_e[1], 1, rng),
            conv(s, "phi_e.2", c.phi_e[1], c.phi_e[2], 1, rng),
        ];
        let upsilon = [
            conv(s, "upsilon.0", fe, c.upsilon[0], 2, rng),
            conv(s, "upsilon.1", c.upsilon[0], c.upsilon[1], 1, rng),
            conv(s, "upsilon.2", c.upsilon[1], c.upsilon[2], 1, rng),
        ];
        let phi_d = [
            conv(s, "phi_d.0", c.latent_channels(), c.phi_d[0], 1, rng),
            conv(s, "phi_d.1", c.phi_d[0], 4 * c.phi_d[1], 1, rng),
            conv(s, "phi_d.2", c.phi_d[1], c.phi_d[2], 1, rng),
        ];
        let theta = [
            conv(s, "theta.0", fe, 4 * c.theta[0], 1, rng),
            conv(s, "theta.1", c.theta[0], 4 * c.theta[1], 1, rng),
            conv(s, "theta.2", c.theta[1], c.theta[2], 1, rng),
        ];
        let lambda = [
            conv(s, "lambda.0", 2 * fe, 4 * c.lambda[0], 1, rng),
            conv(s, "lambda.1", c.lambda[0], 4 * c.lambda[1], 1, rng),
            conv(s, "lambda.2", c.lambda[1], c.lambda[2], 1, rng),
        ];
        let rho = ConvLayer::new(s, "rho", 3, c.rho, 1, 1, rng);
        let msprob = MsProb::new(s, c.msprob, rng)?;

        // Start the frame decoder at mid-gray and the mixing layer at identity.
        s.get_mut(theta[2].bias).data_mut().fill(T::lit(0.5));
        let w = s.get_mut(rho.weight);
        w.data_mut().fill(T::zero());
        for i in 0..3 {
            w.set(i, i, 0, 0, T::one());
        }
        let params = std::mem::take(s);
        Ok(CodecModel {
            config,
            params,
            psi,
            phi_e,
            upsilon,
            phi_d,
            theta,
            lambda,
            rho,
            msprob,
        })
    }

    /// Checkpoint with every parameter plus `meta.*` configuration entries.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_store(&self.params);
        let c = &self.config;
        let meta = [
            ("container_version", CONTAINER_VERSION as f32),
            ("scales", c.msprob.scales as f32),
            ("mixtures", c.msprob.mixtures as f32),
            ("msprob_hidden", c.msprob.hidden as f32),
            ("use_attention", c.flags.use_attention as u8 as f32),
            ("use_importance", c.flags.use_importance as u8 as f32),
        ];
        for (k, v) in meta {
            ck.push(format!("{META}{k}"), vec![1], vec![v]);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| -> Result<usize> {
            let e = ck
                .get(&format!("{META}{k}"))
                .ok_or_else(|| Error::format("checkpoint", format!("missing {META}{k}")))?;
            match e.values.as_slice() {
                [v] if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
                _ => Err(Error::format("checkpoint", format!("bad {META}{k}"))),
            }
        };
        let version = meta("container_version")?;
        if version != CONTAINER_VERSION as usize {
            return Err(Error::Version {
                expected: format!("container v{CONTAINER_VERSION}"),
                found: format!("checkpoint for container v{version}"),
            });
        }
        let mut config = CodecConfig::default();
        config.msprob.scales = meta("scales")?;
        config.msprob.mixtures = meta("mixtures")?;
        config.msprob.hidden = meta("msprob_hidden")?;
        config.flags.use_attention = meta("use_attention")? != 0;
        config.flags.use_importance = meta("use_importance")? != 0;
        // The seed only fills values that are overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = CodecModel::new(config, &mut rng)?;
        let loaded = ck.to_store::<T>(META)?;
        model.params.load_from(&loaded)?;
        Ok(model)
    }

    /// `Ψ`: frame to embedding at `1/4` resolution.
    pub fn embed_frame(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, f: Var) -> Result<Var> {
        let [a, b, c] = &self.psi;
        let h = a.forward(g, p, f)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        c.forward(g, p, h)
    }

    /// `Φ_E`: embedding difference to latent at `1/8` resolution. The output
    /// lies in `(0, 1)`, so masked zeros always quantize to symbol 0.
    pub fn encode_diff(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, de: Var) -> Result<Var> {
        let [a, b, c] = &self.phi_e;
        let h = a.forward(g, p, de)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = c.forward(g, p, h)?;
        Ok(g.sigmoid(h))
    }

    /// `Υ`: importance map `τ ∈ [0,1]` at latent resolution.
    pub fn importance_map(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, de: Var) -> Result<Var> {
        let [a, b, c] = &self.upsilon;
        let h = a.forward(g, p, de)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = c.forward(g, p, h)?;
        Ok(g.sigmoid(h))
    }

    /// `Φ_D(ŷ)`, the embedding residual.
    pub fn embedding_residual(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, y_hat: Var) -> Result<Var> {
        let [a, b, c] = &self.phi_d;
        let h = a.forward(g, p, y_hat)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.pixel_shuffle(h, 2)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        c.forward(g, p, h)
    }

    /// `ê_t = e_{t-1} + Φ_D(ŷ)`.
    pub fn decode_latent(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, y_hat: Var, e_prev: Var) -> Result<Var> {
        let r = self.embedding_residual(g, p, y_hat)?;
        g.add(e_prev, r)
    }

    /// `Θ`: embedding back to a `[0,1]` frame.
    pub fn reconstruct_initial(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, e_hat: Var) -> Result<Var> {
        let [a, b, c] = &self.theta;
        let h = a.forward(g, p, e_hat)?;
        let h = g.pixel_shuffle(h, 2)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.pixel_shuffle(h, 2)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = c.forward(g, p, h)?;
        Ok(g.clamp(h, 0.0, 1.0))
    }

    /// `Λ(ê_t ⊕ e_{t-1})`, the attention map `A_t ∈ [0,1]`.
    pub fn attention_map(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, e_hat: Var, e_prev: Var) -> Result<Var> {
        let [a, b, c] = &self.lambda;
        let x = g.concat(e_hat, e_prev)?;
        let h = a.forward(g, p, x)?;
        let h = g.pixel_shuffle(h, 2)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = b.forward(g, p, h)?;
        let h = g.pixel_shuffle(h, 2)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = c.forward(g, p, h)?;
        Ok(g.sigmoid(h))
    }

    /// `ρ(A ⊙ f̂' + (1 − A) ⊙ f_{t-1})`, clamped to `[0,1]`.
    pub fn mix_frames(
        &self,
        g: &mut Graph<T>,
        p: &mut Binding<'_, T>,
        attention: Var,
        initial: Var,
        prev: Var,
    ) -> Result<Var> {
        let keep = g.mul(attention, initial)?;
        let rest = g.affine(attention, -1.0, 1.0);
        let carry = g.mul(rest, prev)?;
        let mix = g.add(keep, carry)?;
        let out = self.rho.forward(g, p, mix)?;
        Ok(g.clamp(out, 0.0, 1.0))
    }

    /// Decoder half: everything computed from `ŷ` and the previous frame.
    pub fn synthesize(
        &self,
        g: &mut Graph<T>,
        p: &mut Binding<'_, T>,
        y_hat: Var,
        e_prev: Var,
        prev: Var,
    ) -> Result<Synthesis> {
        let e_hat = self.decode_latent(g, p, y_hat, e_prev)?;
        let initial = self.reconstruct_initial(g, p, e_hat)?;
        let (recon, attention) = if self.config.flags.use_attention {
            let a = self.attention_map(g, p, e_hat, e_prev)?;
            (self.mix_frames(g, p, a, initial, prev)?, Some(a))
        } else {
            (initial, None)
        };
        Ok(Synthesis {
            e_hat,
            initial,
            attention,
            recon,
        })
    }

    /// Encoder half up to the masked latent `y_m`.
    pub fn analyze(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, prev: Var, cur: Var) -> Result<Analysis> {
        let e_cur = self.embed_frame(g, p, cur)?;
        let e_prev = self.embed_frame(g, p, prev)?;
        let delta = g.sub(e_cur, e_prev)?;
        let y = self.encode_diff(g, p, delta)?;
        let (tau, y_masked) = if self.config.flags.use_importance {
            let tau = self.importance_map(g, p, delta)?;
            let m = mask_var(g, tau, self.config.latent_channels())?;
            (Some(tau), g.mul(y, m)?)
        } else {
            (None, y)
        };
        Ok(Analysis {
            e_prev,
            delta,
            y,
            tau,
            y_masked,
        })
    }

    /// Full differentiable pass over one frame pair (`1×3×H×W`, `H` and `W`
    /// multiples of 8). Forward values match the real codec exactly.
    pub fn forward_pass(&self, g: &mut Graph<T>, p: &mut Binding<'_, T>, prev: &Tensor<T>, cur: &Tensor<T>) -> Result<Forward> {
        check_pair(prev, cur)?;
        let s = prev.shape();
        if s.h % LATENT_STRIDE != 0 || s.w % LATENT_STRIDE != 0 {
            return Err(Error::invalid(format!("forward_pass needs dims divisible by 8, got {s}")));
        }
        let vp = g.input(prev.clone());
        let vc = g.input(cur.clone());
        let a = self.analyze(g, p, vp, vc)?;
        let latent = quantize_latent_var(g, a.y_masked)?;
        let (rate_bits, stack) = self.msprob.rate_var(g, p, latent.symbols)?;
        let syn = self.synthesize(g, p, latent.dequantized, a.e_prev, vp)?;
        Ok(Forward {
            prev: vp,
            cur: vc,
            analysis: a,
            latent,
            rate_bits,
            stack,
            synthesis: syn,
        })
    }
}

pub struct Analysis {
    pub e_prev: Var,
    pub delta: Var,
    pub y: Var,
    pub tau: Option<Var>,
    pub y_masked: Var,
}

pub struct Synthesis {
    pub e_hat: Var,
    pub initial: Var,
    pub attention: Option<Var>,
    pub recon: Var,
}

pub struct Forward {
    pub prev: Var,
    pub cur: Var,
    pub analysis: Analysis,
    pub latent: QuantizedLatent,
    /// Σ bits over modelled scales plus the raw cost of the coarsest.
    pub rate_bits: Var,
    pub stack: Vec<Var>,
    pub synthesis: Synthesis,
}

fn check_frame<T: Scalar>(f: &Tensor<T>) -> Result<()> {
    let s = f.shape();
    if s.n != 1 || s.c != 3 || s.h == 0 || s.w == 0 {
        return Err(Error::invalid(format!("expected a 1×3×H×W frame, got {s}")));
    }
    if s.h > u16::MAX as usize - LATENT_STRIDE || s.w > u16::MAX as usize - LATENT_STRIDE {
        return Err(Error::invalid(format!("frame {s} exceeds the container limit")));
    }
    Ok(())
}

fn check_pair<T: Scalar>(prev: &Tensor<T>, cur: &Tensor<T>) -> Result<()> {
    check_frame(prev)?;
    check_frame(cur)?;
    if prev.shape() != cur.shape() {
        return Err(Error::ShapeMismatch {
            op: "frame pair",
            left: prev.shape(),
            right: cur.shape(),
        });
    }
    Ok(())
}

fn pad_frame<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let s = f.shape();
    f.pad_replicate(padded_dim(s.h), padded_dim(s.w))
}

/// Result of encoding one frame.
#[derive(Clone, Debug)]
pub struct Encoded<T: Scalar> {
    pub container: Container,
    pub stack: ScaleStack,
    /// The reconstruction the decoder will produce.
    pub recon: Tensor<T>,
    /// Model rate of the stack in bits.
    pub rate_bits: f64,
}

impl<T: Scalar> Encoded<T> {
    pub fn bytes(&self) -> Vec<u8> {
        self.container.to_bytes()
    }
}

/// Reconstruction from the previous frame and the transmitted latent only.
fn reconstruct<T: Scalar>(
    model: &CodecModel<T>,
    prev: &Tensor<T>,
    y_hat: Tensor<T>,
    orig_h: usize,
    orig_w: usize,
) -> Result<Tensor<T>> {
    let padded = pad_frame(prev)?;
    let mut g = Graph::new();
    let mut p = Binding::new(&model.params, false);
    let vp = g.input(padded);
    let e_prev = model.embed_frame(&mut g, &mut p, vp)?;
    let vy = g.input(y_hat);
    let syn = model.synthesize(&mut g, &mut p, vy, e_prev, vp)?;
    g.value(syn.recon).crop(orig_h, orig_w)
}

/// Encodes `cur` against `prev` into a container.
pub fn encode_frame<T: Scalar>(model: &CodecModel<T>, prev: &Tensor<T>, cur: &Tensor<T>) -> Result<Encoded<T>> {
    check_pair(prev, cur)?;
    let s = prev.shape();
    let (pp, pc) = (pad_frame(prev)?, pad_frame(cur)?);
    let mut g = Graph::new();
    let mut p = Binding::new(&model.params, false);
    let vp = g.input(pp);
    let vc = g.input(pc);
    let a = model.analyze(&mut g, &mut p, vp, vc)?;
    let (symbols, state) = quantize_latent(g.value(a.y_masked))?;
    let stack = model.msprob.build_stack(&model.params, &symbols)?;
    let rate_bits = model.msprob.rate_bits(&model.params, &stack)?;
    let LatentPayloads { payloads, deflated } = encode_stack(&model.msprob, &model.params, &stack)?;
    let mut flags = 0;
    if deflated {
        flags |= FLAG_LAST_SCALE_DEFLATED;
    }
    if state.is_degenerate() {
        flags |= FLAG_DEGENERATE_QUANTIZER;
    }
    let container = Container {
        version: CONTAINER_VERSION,
        flags,
        orig_h: s.h as u16,
        orig_w: s.w as u16,
        padded_h: padded_dim(s.h) as u16,
        padded_w: padded_dim(s.w) as u16,
        y_min: state.y_min,
        y_max: state.y_max,
        payloads,
    };
    let y_hat = dequantize_latent::<T>(&symbols, &state);
    let recon = reconstruct(model, prev, y_hat, s.h, s.w)?;
    Ok(Encoded {
        container,
        stack,
        recon,
        rate_bits,
    })
}

/// Parses a container and recovers the latent stack.
pub fn decode_container<T: Scalar>(model: &CodecModel<T>, bytes: &[u8]) -> Result<(Container, ScaleStack)> {
    let c = Container::from_bytes(bytes, model.config.msprob.scales)?;
    if (c.flags & FLAG_DEGENERATE_QUANTIZER != 0) != (c.y_min == c.y_max) {
        return Err(Error::format("container", "degenerate flag disagrees with quantizer range"));
    }
    if padded_dim(c.orig_h as usize) != c.padded_h as usize || padded_dim(c.orig_w as usize) != c.padded_w as usize {
        return Err(Error::format("container", "padded size is not the next multiple of 8"));
    }
    let payloads = LatentPayloads {
        payloads: c.payloads.clone(),
        deflated: c.flags & FLAG_LAST_SCALE_DEFLATED != 0,
    };
    let (lh, lw) = (c.padded_h as usize / LATENT_STRIDE, c.padded_w as usize / LATENT_STRIDE);
    let stack = decode_stack(&model.msprob, &model.params, &payloads, lh, lw)?;
    Ok((c, stack))
}

/// Reconstructs the current frame from the previous frame and a container.
pub fn decode_frame<T: Scalar>(model: &CodecModel<T>, prev: &Tensor<T>, bytes: &[u8]) -> Result<Tensor<T>> {
    check_frame(prev)?;
    let (c, stack) = decode_container(model, bytes)?;
    let s = prev.shape();
    if (s.h, s.w) != (c.orig_h as usize, c.orig_w as usize) {
        return Err(Error::invalid(format!(
            "previous frame is {}×{} but the stream codes {}×{}",
            s.h, s.w, c.orig_h, c.orig_w
        )));
    }
    let state = c.quantizer()?;
    let y_hat = dequantize_latent::<T>(&stack.scales[0], &state);
    reconstruct(model, prev, y_hat, s.h, s.w)
}

/// Shape of the latent for a frame of `h×w`.
pub fn latent_shape(config: &CodecConfig, h: usize, w: usize) -> Shape {
    Shape::new(
        1,
        config.latent_channels(),
        padded_dim(h) / LATENT_STRIDE,
        padded_dim(w) / LATENT_STRIDE,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(flags: AblationFlags) -> CodecModel<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        CodecModel::new(
            CodecConfig {
                flags,
                ..CodecConfig::default()
            },
            &mut rng,
        )
        .unwrap()
    }

    fn frame(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut rng)
    }

    #[test]
    fn pipeline_shapes() {
        let m = model(AblationFlags::default());
        let (prev, cur) = (frame(1, 16, 24), frame(2, 16, 24));
        let mut g = Graph::new();
        let mut p = Binding::new(&m.params, false);
        let f = m.forward_pass(&mut g, &mut p, &prev, &cur).unwrap();
        assert_eq!(g.shape(f.analysis.e_prev), Shape::new(1, 40, 4, 6));
        assert_eq!(g.shape(f.analysis.y), Shape::new(1, 10, 2, 3));
        assert_eq!(g.shape(f.analysis.tau.unwrap()), Shape::new(1, 1, 2, 3));
        assert_eq!(g.shape(f.synthesis.e_hat), Shape::new(1, 40, 4, 6));
        assert_eq!(g.shape(f.synthesis.initial), Shape::new(1, 3, 16, 24));
        assert_eq!(g.shape(f.synthesis.recon), Shape::new(1, 3, 16, 24));
        assert!(g.value(f.rate_bits).item() > 0.0);
    }

    #[test]
    fn identical_frames_have_zero_difference() {
        let m = model(AblationFlags::default());
        let f = frame(3, 8, 8);
        let mut g = Graph::new();
        let mut p = Binding::new(&m.params, false);
        let out = m.forward_pass(&mut g, &mut p, &f, &f).unwrap();
        assert!(g.value(out.analysis.delta).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_decode_agree_with_padding() {
        let m = model(AblationFlags::default());
        let (prev, cur) = (frame(4, 13, 21), frame(5, 13, 21));
        let enc = encode_frame(&m, &prev, &cur).unwrap();
        assert_eq!((enc.container.padded_h, enc.container.padded_w), (16, 24));
        let bytes = enc.bytes();
        assert_eq!(bytes, encode_frame(&m, &prev, &cur).unwrap().bytes());
        let dec = decode_frame(&m, &prev, &bytes).unwrap();
        assert_eq!(dec.shape(), Shape::new(1, 3, 13, 21));
        assert_eq!(dec.data(), enc.recon.data());
        let (_, stack) = decode_container(&m, &bytes).unwrap();
        assert_eq!(stack, enc.stack);
    }

    #[test]
    fn ablated_models_round_trip() {
        for flags in [
            AblationFlags {
                use_attention: false,
                use_importance: true,
            },
            AblationFlags {
                use_attention: true,
                use_importance: false,
            },
        ] {
            let m = model(flags);
            let (prev, cur) = (frame(6, 8, 16), frame(7, 8, 16));
            let enc = encode_frame(&m, &prev, &cur).unwrap();
            assert_eq!(decode_frame(&m, &prev, &enc.bytes()).unwrap().data(), enc.recon.data());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(AblationFlags {
            use_attention: false,
            use_importance: true,
        });
        let ck = Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap();
        let back = CodecModel::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        assert_eq!(ck.entries.iter().filter(|e| e.name.starts_with("psi.")).count(), 6);
    }
}
