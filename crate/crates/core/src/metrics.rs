//! Image quality and rate metrics.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-scale exponents of the five-scale structural similarity.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Smallest side handled with the full window at one scale.
pub const MS_SSIM_MIN_SIDE: usize = 16;
/// Contrast-structure terms are clamped here before exponentiation.
const CS_FLOOR: f64 = 1e-6;

/// Number of scales used for an `h×w` image.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let m = h.min(w);
    if m < MS_SSIM_MIN_SIDE {
        return 1;
    }
    ((m / MS_SSIM_MIN_SIDE).ilog2() as usize + 1).min(MS_SSIM_WEIGHTS.len())
}

/// Window length: the standard 11 taps, or the largest odd length fitting
/// images below the single-scale minimum.
pub fn ssim_window(h: usize, w: usize) -> Result<usize> {
    let m = h.min(w);
    if m >= MS_SSIM_MIN_SIDE {
        return Ok(SSIM_WINDOW);
    }
    let k = if m % 2 == 1 { m } else { m - 1 };
    if k < 7 {
        return Err(Error::invalid(format!("image {h}×{w} is too small for structural similarity")));
    }
    Ok(k.min(SSIM_WINDOW))
}

/// Normalized Gaussian taps.
pub fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn scale_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Returns `(l·cs map mean, cs map mean)` for one scale.
fn ssim_terms<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, kernel: &[f64]) -> Result<(Var, Var)> {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = g.blur(a, kernel)?;
    let mu_b = g.blur(b, kernel)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.blur(aa, kernel)?;
    let e_bb = g.blur(bb, kernel)?;
    let e_ab = g.blur(ab, kernel)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let l_num = g.affine(mu_ab, 2.0, c1);
    let mu_sq = g.add(mu_aa, mu_bb)?;
    let l_den = g.affine(mu_sq, 1.0, c1);
    let lum = g.div(l_num, l_den)?;

    let cs_num = g.affine(cov, 2.0, c2);
    let var_sum = g.add(var_a, var_b)?;
    let cs_den = g.affine(var_sum, 1.0, c2);
    let cs = g.div(cs_num, cs_den)?;

    let ssim_map = g.mul(lum, cs)?;
    Ok((g.mean(ssim_map), g.mean(cs)))
}

/// Differentiable multi-scale structural similarity of two `N×C×H×W`
/// tensors, averaged over every element.
pub fn ms_ssim_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op: "ms_ssim",
            left: sa,
            right: sb,
        });
    }
    let scales = ms_ssim_scales(sa.h, sa.w);
    let kernel = gaussian_kernel(ssim_window(sa.h, sa.w)?, SSIM_SIGMA);
    let weights = scale_weights(scales);
    let (mut a, mut b) = (a, b);
    let mut product: Option<Var> = None;
    for (j, &wj) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(g, a, b, &kernel)?;
        let term = if j + 1 == scales { ssim } else { cs };
        let term = g.clamp(term, CS_FLOOR, f64::MAX);
        let factor = g.powf(term, wj);
        product = Some(match product {
            None => factor,
            Some(p) => g.mul(p, factor)?,
        });
        if j + 1 < scales {
            a = g.avg_pool2(a);
            b = g.avg_pool2(b);
        }
    }
    Ok(product.expect("at least one scale"))
}

/// Multi-scale structural similarity evaluated in `f64`.
pub fn ms_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let va = g.input(a.cast());
    let vb = g.input(b.cast());
    let v = ms_ssim_var(&mut g, va, vb)?;
    Ok(g.value(v).item())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = a.data().len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for `[0,1]` images; identical inputs give
/// `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Bits per pixel of a `bytes`-long stream for an `h×w` frame.
pub fn bpp(bytes: usize, h: usize, w: usize) -> f64 {
    bytes as f64 * 8.0 / (h * w) as f64
}
