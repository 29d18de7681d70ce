//! Rate-distortion objective, hyperparameter schedules, the training loop and
//! evaluation through the real bitstream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::codec::{decode_frame, encode_frame, CodecModel, Forward};
use crate::error::{Error, Result};
use crate::metrics::{bpp, ms_ssim, ms_ssim_var, psnr};
use crate::nn::Binding;
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Start and end of a linearly scheduled quantity.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub const fn new(start: f64, end: f64) -> Self {
        Ramp { start, end }
    }

    /// Value at fraction `t ∈ [0,1]`; both endpoints are reproduced exactly.
    pub fn at(&self, t: f64) -> f64 {
        (1.0 - t) * self.start + t * self.end
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Schedule {
    pub lr: Ramp,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: Ramp,
    pub lambda4: Ramp,
    pub beta: Ramp,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr: Ramp::new(0.001, 0.0002),
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: Ramp::new(0.0001, 0.001),
            lambda4: Ramp::new(0.0001, 0.5),
            beta: Ramp::new(0.5, 0.3),
        }
    }
}

/// Loss weights in effect at one optimizer step.
#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct LossWeights {
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub beta: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.lr.start,
            self.lr.end,
            self.lambda1,
            self.lambda2,
            self.lambda3.start,
            self.lambda3.end,
            self.lambda4.start,
            self.lambda4.end,
            self.beta.start,
            self.beta.end,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("schedule values must be finite and non-negative"));
        }
        Ok(())
    }

    /// Weights at `step` of a `total`-step run. Step 0 gives the start values
    /// and step `total − 1` the end values.
    pub fn at(&self, step: usize, total: usize) -> LossWeights {
        let t = if total <= 1 {
            0.0
        } else {
            step.min(total - 1) as f64 / (total - 1) as f64
        };
        LossWeights {
            lr: self.lr.at(t),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3.at(t),
            lambda4: self.lambda4.at(t),
            beta: self.beta.at(t),
        }
    }
}

/// Graph nodes of the four loss terms and their weighted sum.
pub struct LossTerms {
    /// `1 − MS-SSIM`.
    pub d1: Var,
    /// Mean squared error.
    pub d2: Var,
    /// Rate in bits.
    pub rate: Var,
    /// `|mean(τ) − β|`, absent without importance maps.
    pub mask: Option<Var>,
    pub total: Var,
}

/// `λ₁·(1 − MS-SSIM) + λ₂·MSE + λ₃·R + λ₄·|τ̄ − β|`.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    recon: Var,
    target: Var,
    rate_bits: Var,
    tau: Option<Var>,
    w: &LossWeights,
) -> Result<LossTerms> {
    let ssim = ms_ssim_var(g, recon, target)?;
    let d1 = g.affine(ssim, -1.0, 1.0);
    let diff = g.sub(recon, target)?;
    let sq = g.mul(diff, diff)?;
    let d2 = g.mean(sq);
    let mask = tau.map(|t| {
        let m = g.mean(t);
        let shifted = g.affine(m, 1.0, -w.beta);
        g.abs(shifted)
    });
    let mut total = g.affine(d1, w.lambda1, 0.0);
    let t2 = g.affine(d2, w.lambda2, 0.0);
    total = g.add(total, t2)?;
    let t3 = g.affine(rate_bits, w.lambda3, 0.0);
    total = g.add(total, t3)?;
    if let Some(m) = mask {
        let t4 = g.affine(m, w.lambda4, 0.0);
        total = g.add(total, t4)?;
    }
    Ok(LossTerms {
        d1,
        d2,
        rate: rate_bits,
        mask,
        total,
    })
}

/// Builds the loss graph for one pair.
pub fn pair_loss<T: Scalar>(
    model: &CodecModel<T>,
    g: &mut Graph<T>,
    p: &mut Binding<'_, T>,
    prev: &Tensor<T>,
    cur: &Tensor<T>,
    w: &LossWeights,
) -> Result<(Forward, LossTerms)> {
    let mut w = *w;
    if !model.config.flags.use_importance {
        w.lambda4 = 0.0;
    }
    let f = model.forward_pass(g, p, prev, cur)?;
    let terms = total_loss(g, f.synthesis.recon, f.cur, f.rate_bits, f.analysis.tau, &w)?;
    Ok((f, terms))
}

/// A previous/current frame pair, each `1×3×H×W` in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair<T> {
    pub prev: Tensor<T>,
    pub cur: Tensor<T>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch: 8,
            crop: 64,
            schedule: Schedule::default(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub beta: f64,
    pub d1: f64,
    pub d2: f64,
    pub rate_bits: f64,
    pub mask: f64,
    pub total: f64,
}

fn random_crop<T: Scalar>(pair: &FramePair<T>, crop: usize, rng: &mut ChaCha8Rng) -> Result<FramePair<T>> {
    let s = pair.prev.shape();
    if s.h < crop || s.w < crop {
        return Err(Error::invalid(format!("frame {s} is smaller than the {crop}px crop")));
    }
    let oy = rng.gen_range(0..=s.h - crop);
    let ox = rng.gen_range(0..=s.w - crop);
    let cut = |t: &Tensor<T>| Tensor::from_fn(Shape::new(1, 3, crop, crop), |_, c, y, x| t.at(0, c, y + oy, x + ox));
    Ok(FramePair {
        prev: cut(&pair.prev),
        cur: cut(&pair.cur),
    })
}

/// Runs `config.steps` Adam steps on `model`. `on_step` sees each log
/// record as it is produced.
pub fn train<T: Scalar>(
    model: &mut CodecModel<T>,
    data: &[FramePair<T>],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    config.schedule.validate()?;
    if config.steps > 0 && (data.is_empty() || config.batch == 0) {
        return Err(Error::invalid("training needs at least one pair and a positive batch size"));
    }
    if config.crop == 0 || config.crop % 8 != 0 {
        return Err(Error::invalid(format!("crop {} must be a positive multiple of 8", config.crop)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.params, config.schedule.lr.start);
    let mut order: Vec<usize> = Vec::new();
    let mut logs = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let w = config.schedule.at(step, config.steps);
        let mut grads = model.params.zeros_like();
        let mut acc = [0.0f64; 5];
        for _ in 0..config.batch {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            let idx = order.pop().expect("refilled above");
            let pair = random_crop(&data[idx], config.crop, &mut rng)?;
            let mut g = Graph::new();
            let mut p = Binding::new(&model.params, true);
            let (_, terms) = pair_loss(model, &mut g, &mut p, &pair.prev, &pair.cur, &w)?;
            let total = g.value(terms.total).item().as_f64();
            if !total.is_finite() {
                return Err(Error::invalid(format!("loss became non-finite at step {step}")));
            }
            acc[0] += g.value(terms.d1).item().as_f64();
            acc[1] += g.value(terms.d2).item().as_f64();
            acc[2] += g.value(terms.rate).item().as_f64();
            acc[3] += terms.mask.map_or(0.0, |m| g.value(m).item().as_f64());
            acc[4] += total;
            g.backward(terms.total)?;
            p.accumulate_grads(&g, &mut grads);
        }
        let inv = T::lit(1.0 / config.batch as f64);
        grads.iter_mut().flatten().for_each(|v| *v *= inv);
        adam.lr = w.lr;
        adam.step(&mut model.params, &grads)?;
        let b = config.batch as f64;
        let log = StepLog {
            step,
            lr: w.lr,
            lambda3: w.lambda3,
            lambda4: if model.config.flags.use_importance { w.lambda4 } else { 0.0 },
            beta: w.beta,
            d1: acc[0] / b,
            d2: acc[1] / b,
            rate_bits: acc[2] / b,
            mask: acc[3] / b,
            total: acc[4] / b,
        };
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Metrics for one pair, computed on the decoder's output.
#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct EvalRow {
    pub index: usize,
    pub ms_ssim: f64,
    pub psnr: f64,
    pub bpp: f64,
    pub bytes: usize,
    /// MS-SSIM of simply repeating the previous frame.
    pub copy_ms_ssim: f64,
    /// Model rate of the coded latent in bits.
    pub rate_bits: f64,
}

/// Encodes, serializes, decodes and scores one pair. Fails if the decoder
/// disagrees with the encoder's reconstruction.
pub fn evaluate_pair<T: Scalar>(model: &CodecModel<T>, index: usize, pair: &FramePair<T>) -> Result<EvalRow> {
    let enc = encode_frame(model, &pair.prev, &pair.cur)?;
    let bytes = enc.bytes();
    let dec = decode_frame(model, &pair.prev, &bytes)?;
    if dec.data() != enc.recon.data() {
        return Err(Error::Coder(format!("pair {index}: decoder output differs from encoder reconstruction")));
    }
    let s = pair.cur.shape();
    Ok(EvalRow {
        index,
        ms_ssim: ms_ssim(&dec, &pair.cur)?,
        psnr: psnr(&dec, &pair.cur)?,
        bpp: bpp(bytes.len(), s.h, s.w),
        bytes: bytes.len(),
        copy_ms_ssim: ms_ssim(&pair.prev, &pair.cur)?,
        rate_bits: enc.rate_bits,
    })
}

pub fn evaluate<T: Scalar>(model: &CodecModel<T>, pairs: &[FramePair<T>]) -> Result<Vec<EvalRow>> {
    pairs.iter().enumerate().map(|(i, p)| evaluate_pair(model, i, p)).collect()
}

/// Column means; infinite PSNR values are left out of the PSNR mean.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub ms_ssim: f64,
    pub psnr: f64,
    pub bpp: f64,
    pub copy_ms_ssim: f64,
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    if rows.is_empty() {
        return EvalSummary::default();
    }
    let n = rows.len() as f64;
    let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect();
    EvalSummary {
        pairs: rows.len(),
        ms_ssim: rows.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
        psnr: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        bpp: rows.iter().map(|r| r.bpp).sum::<f64>() / n,
        copy_ms_ssim: rows.iter().map(|r| r.copy_ms_ssim).sum::<f64>() / n,
    }
}

/// Comma-separated table with a header row.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("index,ms_ssim,psnr,bpp,bytes,copy_ms_ssim,rate_bits\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{},{:.6},{},{:.6},{:.2}\n",
            r.index,
            r.ms_ssim,
            if r.psnr.is_finite() { format!("{:.4}", r.psnr) } else { "inf".into() },
            r.bpp,
            r.bytes,
            r.copy_ms_ssim,
            r.rate_bits
        ));
    }
    out
}
