//! Image objective and opacity regularizer.
//!
//! The photometric term blends mean absolute error with structural
//! dissimilarity: `rgb = (1 - lambda_w) * L1 + lambda_w * (1 - SSIM)`.
//! SSIM uses a Gaussian window over the valid region only (no padding),
//! per channel, with the standard stabilizers for a unit dynamic range.
//! The regularizer is the plain sum of activated opacities; its weight is
//! the single knob trading Gaussian count against fidelity.

use crate::core::{sigmoid, GaussianSet};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Blend weight of the D-SSIM term in the photometric loss.
    pub lambda_w: f64,
    /// Opacity regularization weight (initial value; the scheduler may zero
    /// its live copy late in training).
    pub lambda_alpha: f64,
    /// SSIM window side length.
    pub window: usize,
    /// SSIM window Gaussian sigma.
    pub sigma: f64,
    /// SSIM stabilizers for images in [0, 1].
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_w: 0.2,
            lambda_alpha: 1e-5,
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub l1: f64,
    pub dssim: f64,
    pub opacity_l1: f64,
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean absolute error over all pixels and channels.
pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 100 dB so
/// identical images have a defined value.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return 100.0;
    }
    (10.0 * (1.0 / mse).log10()).min(100.0)
}

pub fn psnr_between(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(psnr(a.mse(b)))
}

/// Sum of activated opacities (a sum, not a mean: the pressure per Gaussian
/// is independent of the population size).
pub fn opacity_l1(set: &GaussianSet) -> f64 {
    set.opacity_logits.iter().map(|&l| sigmoid(l)).sum()
}

fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Valid-region separable convolution: (W, H) -> (W - k + 1, H - k + 1).
fn conv_valid(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let w_out = width - k + 1;
    let h_out = height - k + 1;
    let mut tmp = vec![0.0; w_out * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..w_out {
            let mut acc = 0.0;
            for (j, &kj) in kernel.iter().enumerate() {
                acc += kj * row[x + j];
            }
            tmp[y * w_out + x] = acc;
        }
    }
    let mut out = vec![0.0; w_out * h_out];
    for y in 0..h_out {
        for x in 0..w_out {
            let mut acc = 0.0;
            for (j, &kj) in kernel.iter().enumerate() {
                acc += kj * tmp[(y + j) * w_out + x];
            }
            out[y * w_out + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: spreads a window-position field back over pixel
/// positions, (W - k + 1, H - k + 1) -> (W, H). The kernel is symmetric, so
/// this is a zero-padded full convolution.
fn conv_full(field: &[f64], w_out: usize, h_out: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let width = w_out + k - 1;
    let height = h_out + k - 1;
    let mut tmp = vec![0.0; w_out * height];
    for y in 0..height {
        let p_lo = y.saturating_sub(k - 1);
        let p_hi = y.min(h_out - 1);
        for x in 0..w_out {
            let mut acc = 0.0;
            for p in p_lo..=p_hi {
                acc += kernel[y - p] * field[p * w_out + x];
            }
            tmp[y * w_out + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let p_lo = x.saturating_sub(k - 1);
            let p_hi = x.min(w_out - 1);
            let mut acc = 0.0;
            for p in p_lo..=p_hi {
                acc += kernel[x - p] * tmp[y * w_out + p];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

struct SsimPlanes {
    s: Vec<f64>,
    // Per-window fields needed by the gradient.
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn ssim_channel(x: &[f64], y: &[f64], width: usize, height: usize, cfg: &LossConfig) -> SsimPlanes {
    let kernel = gaussian_window(cfg.window, cfg.sigma);
    let mu_x = conv_valid(x, width, height, &kernel);
    let mu_y = conv_valid(y, width, height, &kernel);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
    let e_xx = conv_valid(&xx, width, height, &kernel);
    let e_yy = conv_valid(&yy, width, height, &kernel);
    let e_xy = conv_valid(&xy, width, height, &kernel);
    let n = mu_x.len();
    let mut planes = SsimPlanes {
        s: vec![0.0; n],
        mu_x: mu_x.clone(),
        mu_y: mu_y.clone(),
        a: vec![0.0; n],
        b: vec![0.0; n],
        c: vec![0.0; n],
        d: vec![0.0; n],
    };
    for i in 0..n {
        let sig_x = e_xx[i] - mu_x[i] * mu_x[i];
        let sig_y = e_yy[i] - mu_y[i] * mu_y[i];
        let sig_xy = e_xy[i] - mu_x[i] * mu_y[i];
        let a = 2.0 * mu_x[i] * mu_y[i] + cfg.c1;
        let b = 2.0 * sig_xy + cfg.c2;
        let c = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + cfg.c1;
        let d = sig_x + sig_y + cfg.c2;
        planes.a[i] = a;
        planes.b[i] = b;
        planes.c[i] = c;
        planes.d[i] = d;
        planes.s[i] = (a * b) / (c * d);
    }
    planes
}

/// Mean SSIM between `x` and `y` over valid window positions and channels.
pub fn ssim(x: &Image, y: &Image, cfg: &LossConfig) -> Result<f64> {
    check_shapes(x, y)?;
    if x.width < cfg.window || x.height < cfg.window {
        return Err(Error::ImageTooSmall {
            width: x.width,
            height: x.height,
            window: cfg.window,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let px = x.channel_plane(ch);
        let py = y.channel_plane(ch);
        let planes = ssim_channel(&px, &py, x.width, x.height, cfg);
        sum += planes.s.iter().sum::<f64>();
        count += planes.s.len();
    }
    Ok(sum / count as f64)
}

/// Structural dissimilarity `1 - SSIM`.
pub fn dssim(x: &Image, y: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok(1.0 - ssim(x, y, cfg)?)
}

/// D-SSIM and its gradient with respect to `x`.
pub fn dssim_with_grad(x: &Image, y: &Image, cfg: &LossConfig) -> Result<(f64, Image)> {
    check_shapes(x, y)?;
    if x.width < cfg.window || x.height < cfg.window {
        return Err(Error::ImageTooSmall {
            width: x.width,
            height: x.height,
            window: cfg.window,
        });
    }
    let kernel = gaussian_window(cfg.window, cfg.sigma);
    let (width, height) = (x.width, x.height);
    let w_out = width - cfg.window + 1;
    let h_out = height - cfg.window + 1;
    let count = (3 * w_out * h_out) as f64;
    let mut grad = Image::zeros(width, height);
    let mut ssim_sum = 0.0;
    for ch in 0..3 {
        let px = x.channel_plane(ch);
        let py = y.channel_plane(ch);
        let p = ssim_channel(&px, &py, width, height, cfg);
        ssim_sum += p.s.iter().sum::<f64>();
        // dS/dx_k decomposes into three spread fields; see the window-wise
        // quotient rule: S = AB/(CD) with
        //   dA = 2 mu_y w, dB = 2 w (y_k - mu_y), dC = 2 mu_x w,
        //   dD = 2 w (x_k - mu_x).
        let n = p.s.len();
        let mut f_const = vec![0.0; n];
        let mut f_y = vec![0.0; n];
        let mut f_x = vec![0.0; n];
        for i in 0..n {
            let cd = p.c[i] * p.d[i];
            f_const[i] = (2.0 * p.mu_y[i] * (p.b[i] - p.a[i])) / cd
                - 2.0 * p.s[i] * p.mu_x[i] / p.c[i]
                + 2.0 * p.s[i] * p.mu_x[i] / p.d[i];
            f_y[i] = 2.0 * p.a[i] / cd;
            f_x[i] = 2.0 * p.s[i] / p.d[i];
        }
        let g_const = conv_full(&f_const, w_out, h_out, &kernel);
        let g_y = conv_full(&f_y, w_out, h_out, &kernel);
        let g_x = conv_full(&f_x, w_out, h_out, &kernel);
        for i in 0..(width * height) {
            let ds = g_const[i] + py[i] * g_y[i] - px[i] * g_x[i];
            // DSSIM = 1 - mean(S): negate and normalize.
            grad.data[i * 3 + ch] = -ds / count;
        }
    }
    Ok((1.0 - ssim_sum / count, grad))
}

/// Photometric loss `(1 - lambda_w) L1 + lambda_w (1 - SSIM)`.
pub fn rgb_loss(rendered: &Image, target: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok((1.0 - cfg.lambda_w) * l1(rendered, target)? + cfg.lambda_w * dssim(rendered, target, cfg)?)
}

/// Full objective at an explicit live regularizer weight.
pub fn total_loss(
    rendered: &Image,
    target: &Image,
    set: &GaussianSet,
    cfg: &LossConfig,
    lambda_alpha: f64,
) -> Result<LossBreakdown> {
    let l1_v = l1(rendered, target)?;
    let dssim_v = dssim(rendered, target, cfg)?;
    let rgb = (1.0 - cfg.lambda_w) * l1_v + cfg.lambda_w * dssim_v;
    let op = opacity_l1(set);
    Ok(LossBreakdown {
        total: rgb + lambda_alpha * op,
        rgb,
        l1: l1_v,
        dssim: dssim_v,
        opacity_l1: op,
    })
}

/// Full objective, its gradient with respect to the rendered image, and the
/// regularizer's contribution to the opacity-logit gradients.
pub fn total_loss_with_grad(
    rendered: &Image,
    target: &Image,
    set: &GaussianSet,
    cfg: &LossConfig,
    lambda_alpha: f64,
) -> Result<(LossBreakdown, Image, Vec<f64>)> {
    let l1_v = l1(rendered, target)?;
    let (dssim_v, dssim_grad) = dssim_with_grad(rendered, target, cfg)?;
    let rgb = (1.0 - cfg.lambda_w) * l1_v + cfg.lambda_w * dssim_v;
    let op = opacity_l1(set);
    let n = rendered.data.len() as f64;
    let l1_w = (1.0 - cfg.lambda_w) / n;
    let mut grad = Image::zeros(rendered.width, rendered.height);
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - target.data[i];
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data[i] = l1_w * sign + cfg.lambda_w * dssim_grad.data[i];
    }
    let op_grad: Vec<f64> = set
        .opacity_logits
        .iter()
        .map(|&logit| {
            let a = sigmoid(logit);
            lambda_alpha * a * (1.0 - a)
        })
        .collect();
    Ok((
        LossBreakdown {
            total: rgb + lambda_alpha * op,
            rgb,
            l1: l1_v,
            dssim: dssim_v,
            opacity_l1: op,
        },
        grad,
        op_grad,
    ))
}
