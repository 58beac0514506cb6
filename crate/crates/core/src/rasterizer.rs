//! CPU splat renderer.
//!
//! Every image is produced by one global front-to-back depth sort (ties by
//! splat id) followed by per-pixel alpha compositing:
//!
//! ```text
//! α'_i = min(0.99, α_i · exp(-½ dᵀ Σ'⁻¹ d))   inside the 3σ ellipse, else 0
//! w_i  = α'_i · Π_{j<i} (1 - α'_j)
//! out  = Σ_i v_i · w_i
//! ```
//!
//! Contributions with `α' < 1/255` are skipped and compositing stops once
//! transmittance falls below `1e-4`. Rows are rendered in parallel; every
//! pixel is computed independently, so output does not depend on the number
//! of worker threads.

use nalgebra::{Matrix2x3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{Layout, PixelMask, PlanarImage, NO_DEPTH};
use crate::scene::{Camera, Scene};
use crate::sh::ShBasis;

pub const NEAR_PLANE: f64 = 0.01;
pub const COV_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Squared Mahalanobis radius of the 3σ footprint ellipse.
pub const FOOTPRINT_MAHALANOBIS: f64 = 9.0;
pub const VISIBILITY_THRESHOLD: f64 = 1e-3;
/// Accumulated weight below which a pixel has no surface depth.
pub const DEPTH_MIN_WEIGHT: f64 = 1e-4;
/// Relative depth disagreement treated as occlusion by [`exact_flow`].
pub const OCCLUSION_TOLERANCE: f64 = 0.01;

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Footprint {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub id: usize,
    pub mean2d: [f64; 2],
    /// Dilated screen covariance `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    pub view_depth: f64,
    pub footprint: Footprint,
    pub opacity: f64,
    /// Unit direction from the camera center to the splat, for SH evaluation.
    pub view_dir: [f64; 3],
}

impl ProjectedSplat {
    /// Projected opacity `α'` at pixel center `(x, y)`, before the skip threshold.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let m = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if m > FOOTPRINT_MAHALANOBIS {
            return 0.0;
        }
        (self.opacity * (-0.5 * m).exp()).min(ALPHA_MAX)
    }

    /// Gaussian falloff `exp(-½ dᵀ Σ'⁻¹ d)` at `(x, y)`, zero outside the footprint ellipse.
    #[inline]
    pub fn falloff_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let m = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if m > FOOTPRINT_MAHALANOBIS {
            0.0
        } else {
            (-0.5 * m).exp()
        }
    }
}

/// EWA projection of every splat in front of the camera whose footprint
/// touches the image. Output is in splat order.
pub fn project(scene: &Scene, camera: &Camera) -> Vec<ProjectedSplat> {
    let r = camera.rotation_matrix();
    let center = camera.center();
    let (w, h) = (camera.width as f64, camera.height as f64);
    scene
        .splats
        .iter()
        .enumerate()
        .filter_map(|(id, s)| {
            let world = Vector3::from(s.position);
            let p = camera.to_camera(world);
            if p.z <= NEAR_PLANE {
                return None;
            }
            let j = Matrix2x3::new(
                camera.fx / p.z,
                0.0,
                -camera.fx * p.x / (p.z * p.z),
                0.0,
                camera.fy / p.z,
                -camera.fy * p.y / (p.z * p.z),
            );
            let t = j * r;
            let cov = t * s.covariance() * t.transpose();
            let (a, b, c) = (cov[(0, 0)] + COV_DILATION, cov[(0, 1)], cov[(1, 1)] + COV_DILATION);
            let det = a * c - b * b;
            if det <= 0.0 || !det.is_finite() {
                return None;
            }
            let mean2d = camera.project_point(p);
            let rx = (FOOTPRINT_MAHALANOBIS * a).sqrt();
            let ry = (FOOTPRINT_MAHALANOBIS * c).sqrt();
            // One pixel of slack so rounding never drops a pixel inside the ellipse.
            let x0 = (mean2d[0] - rx).floor() - 1.0;
            let x1 = (mean2d[0] + rx).ceil() + 1.0;
            let y0 = (mean2d[1] - ry).floor() - 1.0;
            let y1 = (mean2d[1] + ry).ceil() + 1.0;
            if x1 < 0.0 || y1 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 {
                return None;
            }
            let footprint = Footprint {
                x0: x0.max(0.0) as usize,
                y0: y0.max(0.0) as usize,
                x1: x1.min(w - 1.0) as usize,
                y1: y1.min(h - 1.0) as usize,
            };
            let dir = (world - center).normalize();
            Some(ProjectedSplat {
                id,
                mean2d,
                cov2d: [a, b, c],
                conic: [c / det, -b / det, a / det],
                view_depth: p.z,
                footprint,
                opacity: s.opacity,
                view_dir: [dir.x, dir.y, dir.z],
            })
        })
        .collect()
}

/// Projected, depth-sorted splats of one view plus per-row candidate lists.
#[derive(Debug, Clone)]
pub struct Rasterization {
    width: usize,
    height: usize,
    splats: Vec<ProjectedSplat>,
    rows: Vec<Vec<u32>>,
}

impl Rasterization {
    pub fn new(scene: &Scene, camera: &Camera) -> Self {
        let mut splats = project(scene, camera);
        splats.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth).then(a.id.cmp(&b.id)));
        let mut rows = vec![Vec::new(); camera.height];
        for (i, s) in splats.iter().enumerate() {
            for row in &mut rows[s.footprint.y0..=s.footprint.y1] {
                row.push(i as u32);
            }
        }
        Self {
            width: camera.width,
            height: camera.height,
            splats,
            rows,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Projected splats in compositing order.
    pub fn splats(&self) -> &[ProjectedSplat] {
        &self.splats
    }

    /// Walks the contributions at pixel `(x, y)` front to back, calling
    /// `f(order, α', transmittance_before)`. Returns the final transmittance.
    #[inline]
    pub fn composite<F: FnMut(usize, f64, f64)>(&self, x: usize, y: usize, mut f: F) -> f64 {
        let (px, py) = (x as f64, y as f64);
        let mut t = 1.0;
        for &i in &self.rows[y] {
            let s = &self.splats[i as usize];
            if x < s.footprint.x0 || x > s.footprint.x1 {
                continue;
            }
            let a = s.alpha_at(px, py);
            if a < ALPHA_MIN {
                continue;
            }
            f(i as usize, a, t);
            t *= 1.0 - a;
            if t < TRANSMITTANCE_MIN {
                break;
            }
        }
        t
    }

    /// Blends `channels` values per splat (indexed by compositing order),
    /// returning unclamped samples.
    pub fn blend(&self, values: &[f64], channels: usize) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.splats.len() * channels);
        let mut out = vec![0.0; self.width * self.height * channels];
        out.par_chunks_mut(self.width * channels)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..self.width {
                    let px = &mut row[x * channels..(x + 1) * channels];
                    self.composite(x, y, |i, a, t| {
                        let w = a * t;
                        for (c, o) in px.iter_mut().enumerate() {
                            *o += values[i * channels + c] * w;
                        }
                    });
                }
            });
        out
    }

    /// SH values of each splat in compositing order: one value per row of
    /// `coeffs(splat_id)`.
    pub fn splat_values<'s>(
        &self,
        channels: usize,
        coeffs: impl Fn(usize) -> Result<Vec<&'s [f64]>>,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.splats.len() * channels);
        for s in &self.splats {
            let rows = coeffs(s.id)?;
            let basis = ShBasis::new(rows[0].len(), s.view_dir)?;
            out.extend(rows.iter().map(|r| basis.eval(r)));
        }
        Ok(out)
    }

    pub fn luminance_values(&self, scene: &Scene) -> Result<Vec<f64>> {
        self.splat_values(1, |id| Ok(vec![scene.splats[id].f_y.as_slice()]))
    }

    pub fn color_values(&self, scene: &Scene) -> Result<Vec<f64>> {
        self.splat_values(3, |id| {
            let fc = scene.splats[id]
                .f_c
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("splat {id} has no color coefficients")))?;
            Ok(fc.iter().map(Vec::as_slice).collect())
        })
    }
}

fn image(camera: &Camera, layout: Layout, data: Vec<f64>) -> PlanarImage {
    PlanarImage::new(camera.width, camera.height, layout, data).expect("renderer sizes images from the camera")
}

/// Alpha-blended luminance, clamped to `[0, 1]`; background is 0.
pub fn render_luminance(scene: &Scene, camera: &Camera) -> Result<PlanarImage> {
    if scene.splats.iter().any(|s| s.f_y.is_empty()) {
        return Err(Error::InvalidArgument("splat without luminance coefficients".into()));
    }
    let r = Rasterization::new(scene, camera);
    let values = r.luminance_values(scene)?;
    let mut data = r.blend(&values, 1);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(image(camera, Layout::Luminance1, data))
}

/// Channelwise alpha-blended color from `f_c`, clamped to `[0, 1]`.
pub fn render_color(scene: &Scene, camera: &Camera) -> Result<PlanarImage> {
    let r = Rasterization::new(scene, camera);
    let values = r.color_values(scene)?;
    let mut data = r.blend(&values, 3);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(image(camera, Layout::Rgb3, data))
}

/// Expected view depth `Σ z_i w_i / Σ w_i`, or [`NO_DEPTH`] where the
/// accumulated weight is below `1e-4`.
pub fn render_depth(scene: &Scene, camera: &Camera) -> PlanarImage {
    let r = Rasterization::new(scene, camera);
    let mut data = vec![0.0; camera.width * camera.height];
    data.par_chunks_mut(camera.width).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut zw = 0.0;
            let mut wsum = 0.0;
            r.composite(x, y, |i, a, t| {
                let w = a * t;
                zw += r.splats[i].view_depth * w;
                wsum += w;
            });
            *out = if wsum < DEPTH_MIN_WEIGHT { NO_DEPTH } else { zw / wsum };
        }
    });
    image(camera, Layout::Depth1, data)
}

/// Splat ids visible from a camera.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VisibilitySet {
    pub camera_id: u32,
    /// Sorted, deduplicated.
    pub members: Vec<u32>,
}

impl VisibilitySet {
    pub fn new(camera_id: u32, mut members: Vec<u32>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { camera_id, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Maximum blending weight of each splat over the image, indexed by splat id.
pub fn max_weights(scene: &Scene, camera: &Camera) -> Vec<f64> {
    let r = Rasterization::new(scene, camera);
    let n = r.splats.len();
    let per_order = (0..camera.height)
        .into_par_iter()
        .fold(
            || vec![0.0f64; n],
            |mut acc, y| {
                for x in 0..camera.width {
                    r.composite(x, y, |i, a, t| acc[i] = acc[i].max(a * t));
                }
                acc
            },
        )
        .reduce(
            || vec![0.0f64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x = x.max(y));
                a
            },
        );
    let mut out = vec![0.0; scene.len()];
    for (s, w) in r.splats.iter().zip(per_order) {
        out[s.id] = w;
    }
    out
}

/// Splats whose peak blending weight reaches [`VISIBILITY_THRESHOLD`].
pub fn visibility(scene: &Scene, camera: &Camera) -> VisibilitySet {
    let members = max_weights(scene, camera)
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= VISIBILITY_THRESHOLD)
        .map(|(i, _)| i as u32)
        .collect();
    VisibilitySet::new(camera.id, members)
}

/// Geometric optical flow from `cam_a` to `cam_b`, from the rendered depth.
///
/// A pixel is invalid when it has no depth, reprojects behind `cam_b` or
/// outside its image, or lands on a surface whose depth differs by more than
/// 1% (occlusion). Invalid pixels carry zero flow.
pub fn exact_flow(scene: &Scene, cam_a: &Camera, cam_b: &Camera) -> (PlanarImage, PixelMask) {
    let depth_a = render_depth(scene, cam_a);
    let depth_b = render_depth(scene, cam_b);
    let (w, h) = (cam_a.width, cam_a.height);
    let (wb, hb) = (cam_b.width as f64, cam_b.height as f64);
    let mut flow = vec![0.0; w * h * 2];
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth_a.pixel(x, y)[0];
            if d == NO_DEPTH {
                continue;
            }
            let world = cam_a.to_world(cam_a.unproject(x as f64, y as f64, d));
            let pb = cam_b.to_camera(world);
            if pb.z <= NEAR_PLANE {
                continue;
            }
            let [u, v] = cam_b.project_point(pb);
            if !(0.0..=wb - 1.0).contains(&u) || !(0.0..=hb - 1.0).contains(&v) {
                continue;
            }
            let db = depth_b.pixel(u.round() as usize, v.round() as usize)[0];
            if db == NO_DEPTH || (db - pb.z).abs() > OCCLUSION_TOLERANCE * pb.z {
                continue;
            }
            let i = y * w + x;
            flow[2 * i] = u - x as f64;
            flow[2 * i + 1] = v - y as f64;
            bits[i] = true;
        }
    }
    (
        image(cam_a, Layout::Flow2, flow),
        PixelMask::new(w, h, bits).expect("mask sized from camera"),
    )
}
