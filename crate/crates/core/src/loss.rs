//! Image losses: L1, D-SSIM and their gradients with respect to the first
//! argument.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) evaluated only where the
//! window fits inside the image ("valid" positions); multi-channel images
//! average the per-channel SSIM.

use crate::error::{Error, Result};
use crate::imaging::PlanarImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable window correlation over valid positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters each valid-position value back over its window.
fn filter_adjoint(small: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = small[y * ow + x];
            for i in 0..SSIM_WINDOW {
                tmp[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

struct SsimStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> SsimStats {
    let mu_a = filter_valid(a, w, h, k);
    let mu_b = filter_valid(b, w, h, k);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_aa = filter_valid(&sq(a, a), w, h, k);
    let e_bb = filter_valid(&sq(b, b), w, h, k);
    let e_ab = filter_valid(&sq(a, b), w, h, k);
    let n = mu_a.len();
    let mut var_a = vec![0.0; n];
    let mut var_b = vec![0.0; n];
    let mut cov = vec![0.0; n];
    for i in 0..n {
        var_a[i] = e_aa[i] - mu_a[i] * mu_a[i];
        var_b[i] = e_bb[i] - mu_b[i] * mu_b[i];
        cov[i] = e_ab[i] - mu_a[i] * mu_b[i];
    }
    SsimStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean SSIM of one plane pair, and optionally its gradient w.r.t. `a`.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = gaussian_window();
    let s = stats(a, b, w, h, &k);
    let n = s.mu_a.len();
    let mut total = 0.0;
    let (mut g_mu, mut g_var, mut g_cov) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * s.cov[i] + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
        let v = a1 * a2 / (b1 * b2);
        total += v;
        if want_grad {
            let d_mu = 2.0 * mb * a2 / (b1 * b2) - v * 2.0 * ma / b1;
            let d_var = -v / b2;
            let d_cov = 2.0 * a1 / (b1 * b2);
            // var_a and cov also depend on mu_a; fold that into the mean term.
            g_mu[i] = (d_mu - 2.0 * d_var * ma - d_cov * mb) / n as f64;
            g_var[i] = d_var / n as f64;
            g_cov[i] = d_cov / n as f64;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    let t_mu = filter_adjoint(&g_mu, w, h, &k);
    let t_var = filter_adjoint(&g_var, w, h, &k);
    let t_cov = filter_adjoint(&g_cov, w, h, &k);
    let grad = (0..w * h)
        .map(|q| t_mu[q] + 2.0 * a[q] * t_var[q] + b[q] * t_cov[q])
        .collect();
    (mean, Some(grad))
}

fn check_pair(a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    a.same_shape(b)
}

fn check_window(img: &PlanarImage) -> Result<()> {
    if img.width() < SSIM_WINDOW || img.height() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all samples.
pub fn loss_l1(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len().max(1);
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
}

/// Channel-averaged mean SSIM.
pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_pair(a, b)?;
    check_window(a)?;
    let c = a.channels();
    let total: f64 = (0..c)
        .map(|ch| ssim_plane(&a.plane(ch), &b.plane(ch), a.width(), a.height(), false).0)
        .sum();
    Ok(total / c as f64)
}

/// `(1 - SSIM) / 2`.
pub fn loss_dssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
}

/// `(1 - λ)·L1 + λ·D-SSIM` of `render` against `target`, with the gradient
/// with respect to every sample of `render` (same interleaved layout).
pub fn combined_loss_grad(
    render: &PlanarImage,
    target: &PlanarImage,
    lambda_s: f64,
) -> Result<(LossValue, Vec<f64>)> {
    check_pair(render, target)?;
    check_window(render)?;
    let (w, h, c) = (render.width(), render.height(), render.channels());
    let n = render.data().len() as f64;
    let mut grad: Vec<f64> = render
        .data()
        .iter()
        .zip(target.data())
        .map(|(x, y)| (1.0 - lambda_s) * sign(x - y) / n)
        .collect();
    let l1 = loss_l1(render, target)?;
    let mut ssim_sum = 0.0;
    for ch in 0..c {
        let (m, g) = ssim_plane(&render.plane(ch), &target.plane(ch), w, h, true);
        ssim_sum += m;
        let g = g.expect("gradient requested");
        // d/dx of λ·(1 - mean_c SSIM_c)/2
        let scale = -lambda_s * 0.5 / c as f64;
        for (q, gq) in g.into_iter().enumerate() {
            grad[q * c + ch] += scale * gq;
        }
    }
    let dssim = (1.0 - ssim_sum / c as f64) / 2.0;
    Ok((
        LossValue {
            total: (1.0 - lambda_s) * l1 + lambda_s * dssim,
            l1,
            dssim,
        },
        grad,
    ))
}

/// Value-only counterpart of [`combined_loss_grad`].
pub fn combined_loss(render: &PlanarImage, target: &PlanarImage, lambda_s: f64) -> Result<LossValue> {
    let l1 = loss_l1(render, target)?;
    let dssim = loss_dssim(render, target)?;
    Ok(LossValue {
        total: (1.0 - lambda_s) * l1 + lambda_s * dssim,
        l1,
        dssim,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
