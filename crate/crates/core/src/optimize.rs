//! Gradient-based fitting of splat appearance against target views.
//!
//! Two fits are supported, both with geometry (position, rotation, scale)
//! frozen:
//! - luminance fitting of `f_y` and opacity against grayscale views;
//! - color fitting of `f_c` against colorized views, with `f_y` and opacity
//!   frozen as well.
//!
//! Both minimize `(1 - λ_s)·L1 + λ_s·D-SSIM` on one randomly chosen view per
//! iteration with Adam. Gradients are accumulated in fixed row blocks and
//! summed in block order, so results do not depend on the thread count.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Layout, PlanarImage};
use crate::loss::{combined_loss, combined_loss_grad, LossValue};
use crate::rasterizer::{Rasterization, ALPHA_MAX};
use crate::scene::{Camera, ColorCoeffs, Scene};
use crate::sh::ShBasis;

const ROW_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "f_y")]
    Luminance,
    #[serde(rename = "alpha")]
    Opacity,
    #[serde(rename = "f_c")]
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr_luminance: f64,
    /// Step size in logit space.
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lambda_s: f64,
    pub groups: Vec<ParamGroup>,
    pub seed: u64,
    /// Interval of full-batch loss checkpoints; 0 disables them.
    pub eval_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::luminance()
    }
}

impl FitConfig {
    pub fn luminance() -> Self {
        Self {
            iterations: 30_000,
            lr_luminance: 0.0025,
            lr_opacity: 0.05,
            lr_color: 0.01,
            lambda_s: 0.2,
            groups: vec![ParamGroup::Luminance, ParamGroup::Opacity],
            seed: 0,
            eval_every: 500,
        }
    }

    pub fn color() -> Self {
        Self {
            iterations: 7_000,
            groups: vec![ParamGroup::Color],
            ..Self::luminance()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_s) {
            return Err(Error::InvalidArgument(format!("lambda_s {} outside [0, 1]", self.lambda_s)));
        }
        if [self.lr_luminance, self.lr_opacity, self.lr_color].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn has(&self, g: ParamGroup) -> bool {
        self.groups.contains(&g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss of the sampled view at each iteration, before the step.
    pub trace: Vec<LossValue>,
    /// `(iteration, mean loss over all views)` before that iteration's step,
    /// every `eval_every` iterations and once at the end.
    pub checkpoints: Vec<(usize, f64)>,
    pub final_l1: Vec<f64>,
    pub final_dssim: Vec<f64>,
    pub wall_time: Duration,
}

impl FitReport {
    /// `iteration,loss,l1,dssim` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,l1,dssim\n");
        for (i, v) in self.trace.iter().enumerate() {
            writeln!(out, "{i},{:?},{:?},{:?}", v.total, v.l1, v.dssim).expect("string write");
        }
        out
    }

    pub fn mean_final_l1(&self) -> f64 {
        self.final_l1.iter().sum::<f64>() / self.final_l1.len().max(1) as f64
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-15;

    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Per-splat gradients of a blended image, indexed by compositing order.
struct BlendGrads {
    values: Vec<f64>,
    alphas: Vec<f64>,
}

/// Back-propagates `g_img` (dL/d output sample) through alpha compositing.
fn blend_backward(r: &Rasterization, values: &[f64], channels: usize, g_img: &[f64], want_alpha: bool) -> BlendGrads {
    let n = r.splats().len();
    let (w, h) = (r.width(), r.height());
    let blocks: Vec<BlendGrads> = (0..h.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|block| {
            let mut acc = BlendGrads {
                values: vec![0.0; n * channels],
                alphas: if want_alpha { vec![0.0; n] } else { Vec::new() },
            };
            let mut contrib: Vec<(usize, f64, f64)> = Vec::new();
            for y in block * ROW_BLOCK..((block + 1) * ROW_BLOCK).min(h) {
                for x in 0..w {
                    let g = &g_img[(y * w + x) * channels..(y * w + x + 1) * channels];
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    contrib.clear();
                    r.composite(x, y, |i, a, t| contrib.push((i, a, t)));
                    // dL/dα'_i = Σ_c g_c (t_i v_ic - S_ic / (1 - α'_i)), S = later contributions.
                    let mut suffix = [0.0f64; 3];
                    for &(i, a, t) in contrib.iter().rev() {
                        let wgt = a * t;
                        let mut d_alpha = 0.0;
                        for c in 0..channels {
                            let v = values[i * channels + c];
                            acc.values[i * channels + c] += g[c] * wgt;
                            if want_alpha {
                                d_alpha += g[c] * (t * v - suffix[c] / (1.0 - a));
                            }
                            suffix[c] += v * wgt;
                        }
                        if want_alpha {
                            let s = &r.splats()[i];
                            let falloff = s.falloff_at(x as f64, y as f64);
                            // α' = min(0.99, α·G): no gradient once capped.
                            if s.opacity * falloff < ALPHA_MAX {
                                acc.alphas[i] += d_alpha * falloff;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = BlendGrads {
        values: vec![0.0; n * channels],
        alphas: if want_alpha { vec![0.0; n] } else { Vec::new() },
    };
    for b in blocks {
        out.values.iter_mut().zip(&b.values).for_each(|(o, v)| *o += v);
        out.alphas.iter_mut().zip(&b.alphas).for_each(|(o, v)| *o += v);
    }
    out
}

/// Renders `channels` SH rows per splat, scores against `target` and returns
/// the loss with per-splat gradients w.r.t. the coefficient rows (by splat
/// id, each row of length h) and w.r.t. opacity.
fn appearance_grads<'s>(
    scene: &'s Scene,
    camera: &Camera,
    target: &PlanarImage,
    lambda_s: f64,
    channels: usize,
    rows: impl Fn(usize) -> Result<Vec<&'s [f64]>>,
    want_alpha: bool,
) -> Result<(LossValue, Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let layout = if channels == 1 { Layout::Luminance1 } else { Layout::Rgb3 };
    target.expect_layout(layout)?;
    if target.width() != camera.width || target.height() != camera.height {
        return Err(Error::Dimension(format!(
            "target {}x{} vs camera {}x{}",
            target.width(),
            target.height(),
            camera.width,
            camera.height
        )));
    }
    let r = Rasterization::new(scene, camera);
    let mut values = Vec::with_capacity(r.splats().len() * channels);
    let mut active = Vec::with_capacity(values.capacity());
    let mut bases = Vec::with_capacity(r.splats().len());
    for s in r.splats() {
        let coeffs = rows(s.id)?;
        let basis = ShBasis::new(coeffs[0].len(), s.view_dir)?;
        for c in &coeffs {
            let raw = basis.raw(c);
            values.push(raw.max(0.0));
            active.push(raw > 0.0);
        }
        bases.push(basis);
    }
    let raw = r.blend(&values, channels);
    let clamped: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let render = PlanarImage::new(camera.width, camera.height, layout, clamped)?;
    let (loss, mut g_img) = combined_loss_grad(&render, target, lambda_s)?;
    for (g, v) in g_img.iter_mut().zip(&raw) {
        if !(0.0..=1.0).contains(v) {
            *g = 0.0;
        }
    }
    let grads = blend_backward(&r, &values, channels, &g_img, want_alpha);

    let mut d_rows: Vec<Vec<Vec<f64>>> = scene
        .splats
        .iter()
        .map(|s| vec![vec![0.0; s.f_y.len()]; channels])
        .collect();
    let mut d_alpha = vec![0.0; scene.len()];
    for (order, s) in r.splats().iter().enumerate() {
        let basis = bases[order].values();
        for c in 0..channels {
            if !active[order * channels + c] {
                continue;
            }
            let g = grads.values[order * channels + c];
            for (d, b) in d_rows[s.id][c].iter_mut().zip(basis) {
                *d = g * b;
            }
        }
        if want_alpha {
            d_alpha[s.id] = grads.alphas[order];
        }
    }
    Ok((loss, d_rows, d_alpha))
}

/// Loss of the color render against `target` and `∂loss/∂f_c` per splat.
pub fn grad_color(scene: &Scene, camera: &Camera, target: &PlanarImage, lambda_s: f64) -> Result<(LossValue, Vec<ColorCoeffs>)> {
    let (loss, rows, _) = appearance_grads(
        scene,
        camera,
        target,
        lambda_s,
        3,
        |id| {
            let fc = scene.splats[id]
                .f_c
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("splat {id} has no color coefficients")))?;
            Ok(fc.iter().map(Vec::as_slice).collect())
        },
        false,
    )?;
    let grads = rows
        .into_iter()
        .map(|mut r| {
            let b = r.pop().expect("3 rows");
            let g = r.pop().expect("3 rows");
            let red = r.pop().expect("3 rows");
            [red, g, b]
        })
        .collect();
    Ok((loss, grads))
}

/// Luminance-fit gradients: `∂loss/∂f_y` and `∂loss/∂α` per splat.
pub fn grad_luminance(
    scene: &Scene,
    camera: &Camera,
    target: &PlanarImage,
    lambda_s: f64,
) -> Result<(LossValue, Vec<Vec<f64>>, Vec<f64>)> {
    let (loss, rows, d_alpha) = appearance_grads(
        scene,
        camera,
        target,
        lambda_s,
        1,
        |id| Ok(vec![scene.splats[id].f_y.as_slice()]),
        true,
    )?;
    Ok((loss, rows.into_iter().map(|mut r| r.remove(0)).collect(), d_alpha))
}

fn check_views(cameras: &[Camera], views: &[PlanarImage]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("no target views".into()));
    }
    if views.len() != cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "{} views for {} cameras",
            views.len(),
            cameras.len()
        )));
    }
    Ok(())
}

fn logit(a: f64) -> f64 {
    let a = a.clamp(1e-6, 1.0 - 1e-6);
    (a / (1.0 - a)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean_loss(views: &[PlanarImage], lambda_s: f64, render: impl Fn(usize) -> Result<PlanarImage>) -> Result<f64> {
    let mut total = 0.0;
    for (i, v) in views.iter().enumerate() {
        total += combined_loss(&render(i)?, v, lambda_s)?.total;
    }
    Ok(total / views.len() as f64)
}

fn final_scores(
    views: &[PlanarImage],
    lambda_s: f64,
    render: impl Fn(usize) -> Result<PlanarImage>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut l1 = Vec::with_capacity(views.len());
    let mut dssim = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let s = combined_loss(&render(i)?, v, lambda_s)?;
        l1.push(s.l1);
        dssim.push(s.dssim);
    }
    Ok((l1, dssim))
}

/// Fits `f_y` and/or opacity to grayscale views. Opacity is optimized as a
/// logit so it stays in `[0, 1]`; splats whose logit never moves keep their
/// original opacity bit for bit.
pub fn fit_luminance(scene: &Scene, cameras: &[Camera], views: &[PlanarImage], cfg: &FitConfig) -> Result<(Scene, FitReport)> {
    cfg.validate()?;
    check_views(cameras, views)?;
    if cfg.has(ParamGroup::Color) {
        return Err(Error::InvalidArgument("luminance fit cannot optimize f_c".into()));
    }
    for v in views {
        v.expect_layout(Layout::Luminance1)?;
    }
    let start = Instant::now();
    let mut current = scene.clone();
    let h_total: usize = scene.splats.iter().map(|s| s.f_y.len()).sum();
    let mut fy: Vec<f64> = scene.splats.iter().flat_map(|s| s.f_y.iter().copied()).collect();
    let theta0: Vec<f64> = scene.splats.iter().map(|s| logit(s.opacity)).collect();
    let mut theta = theta0.clone();
    let mut adam_fy = Adam::new(cfg.lr_luminance, h_total);
    let mut adam_alpha = Adam::new(cfg.lr_opacity, scene.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    let render = |s: &Scene, i: usize| crate::rasterizer::render_luminance(s, &cameras[i]);

    for it in 0..cfg.iterations {
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
            checkpoints.push((it, mean_loss(views, cfg.lambda_s, |i| render(&current, i))?));
        }
        let vi = rng.random_range(0..views.len());
        let (loss, d_fy, d_alpha) = grad_luminance(&current, &cameras[vi], &views[vi], cfg.lambda_s)?;
        trace.push(loss);
        if cfg.has(ParamGroup::Luminance) {
            let flat: Vec<f64> = d_fy.into_iter().flatten().collect();
            adam_fy.update(&mut fy, &flat);
            let mut k = 0;
            for s in &mut current.splats {
                for c in &mut s.f_y {
                    *c = fy[k];
                    k += 1;
                }
            }
        }
        if cfg.has(ParamGroup::Opacity) {
            let d_theta: Vec<f64> = d_alpha
                .iter()
                .zip(&current.splats)
                .map(|(g, s)| g * s.opacity * (1.0 - s.opacity))
                .collect();
            adam_alpha.update(&mut theta, &d_theta);
            for (i, s) in current.splats.iter_mut().enumerate() {
                s.opacity = if theta[i] == theta0[i] { scene.splats[i].opacity } else { sigmoid(theta[i]) };
            }
        }
    }

    if cfg.eval_every > 0 {
        checkpoints.push((cfg.iterations, mean_loss(views, cfg.lambda_s, |i| render(&current, i))?));
    }
    let (final_l1, final_dssim) = final_scores(views, cfg.lambda_s, |i| render(&current, i))?;
    Ok((
        current,
        FitReport {
            trace,
            checkpoints,
            final_l1,
            final_dssim,
            wall_time: start.elapsed(),
        },
    ))
}

/// Fits `f_c`, initialized to zero, against colorized views. Every other
/// splat parameter is left untouched.
pub fn fit_color(scene: &Scene, cameras: &[Camera], views: &[PlanarImage], cfg: &FitConfig) -> Result<(Scene, FitReport)> {
    cfg.validate()?;
    check_views(cameras, views)?;
    if cfg.groups.iter().any(|g| *g != ParamGroup::Color) {
        return Err(Error::InvalidArgument("color fit optimizes f_c only".into()));
    }
    for v in views {
        v.expect_layout(Layout::Rgb3)?;
    }
    let start = Instant::now();
    let mut current = scene.clone();
    for s in &mut current.splats {
        let h = s.f_y.len();
        s.f_c = Some([vec![0.0; h], vec![0.0; h], vec![0.0; h]]);
    }
    let n_params: usize = current.splats.iter().map(|s| 3 * s.f_y.len()).sum();
    let mut params = vec![0.0; n_params];
    let mut adam = Adam::new(cfg.lr_color, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let optimize = cfg.has(ParamGroup::Color);
    let mut checkpoints = Vec::new();
    let render = |s: &Scene, i: usize| crate::rasterizer::render_color(s, &cameras[i]);

    for it in 0..cfg.iterations {
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
            checkpoints.push((it, mean_loss(views, cfg.lambda_s, |i| render(&current, i))?));
        }
        let vi = rng.random_range(0..views.len());
        let (loss, grads) = grad_color(&current, &cameras[vi], &views[vi], cfg.lambda_s)?;
        trace.push(loss);
        if !optimize {
            continue;
        }
        let flat: Vec<f64> = grads.into_iter().flat_map(|g| g.into_iter().flatten()).collect();
        adam.update(&mut params, &flat);
        let mut k = 0;
        for s in &mut current.splats {
            for row in s.f_c.as_mut().expect("initialized above") {
                for c in row {
                    *c = params[k];
                    k += 1;
                }
            }
        }
    }

    for (before, after) in scene.splats.iter().zip(&current.splats) {
        let same = before.position.map(f64::to_bits) == after.position.map(f64::to_bits)
            && before.rotation.map(f64::to_bits) == after.rotation.map(f64::to_bits)
            && before.scale.map(f64::to_bits) == after.scale.map(f64::to_bits)
            && before.opacity.to_bits() == after.opacity.to_bits()
            && before.f_y.iter().map(|v| v.to_bits()).eq(after.f_y.iter().map(|v| v.to_bits()));
        if !same {
            return Err(Error::InvalidArgument("color fit modified frozen parameters".into()));
        }
    }

    if cfg.eval_every > 0 {
        checkpoints.push((cfg.iterations, mean_loss(views, cfg.lambda_s, |i| render(&current, i))?));
    }
    let (final_l1, final_dssim) = final_scores(views, cfg.lambda_s, |i| render(&current, i))?;
    Ok((
        current,
        FitReport {
            trace,
            checkpoints,
            final_l1,
            final_dssim,
            wall_time: start.elapsed(),
        },
    ))
}
