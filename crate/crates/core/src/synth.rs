//! Deterministic synthetic 360° scenes: colored splat clusters on a ring,
//! viewed by cameras orbiting inward.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::srgb_to_lab_pixel;
use crate::scene::{Camera, GaussianSplat, Scene, SceneBundle};
use crate::sh::dc_for_value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub objects: usize,
    pub splats_per_object: usize,
    /// Object colors in sRGB, cycled when there are more objects than entries.
    pub palette: Vec<[f64; 3]>,
    pub cameras: usize,
    pub test_cameras: usize,
    pub orbit_radius: f64,
    pub camera_height: f64,
    /// Distance of object centers from the scene origin.
    pub object_ring_radius: f64,
    pub cluster_radius: f64,
    pub splat_scale: f64,
    pub opacity_range: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    /// SH coefficients per channel (1, 4, 9 or 16); only the DC term is set.
    pub sh_coeffs: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            objects: 4,
            splats_per_object: 50,
            palette: vec![
                [0.85, 0.20, 0.15],
                [0.25, 0.70, 0.30],
                [0.20, 0.35, 0.85],
                [0.95, 0.85, 0.25],
                [0.70, 0.45, 0.90],
                [0.20, 0.75, 0.80],
            ],
            cameras: 24,
            test_cameras: 8,
            orbit_radius: 3.5,
            camera_height: 1.5,
            object_ring_radius: 0.9,
            cluster_radius: 0.35,
            splat_scale: 0.08,
            opacity_range: [0.7, 0.95],
            width: 128,
            height: 128,
            fov_y_deg: 45.0,
            sh_coeffs: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cameras < 1 {
            return Err(Error::InvalidArgument("synthetic scene needs at least one camera".into()));
        }
        if self.objects < 1 {
            return Err(Error::InvalidArgument("synthetic scene needs at least one object".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::InvalidArgument("palette is empty".into()));
        }
        if self.palette.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("palette colors must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.opacity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument("opacity range must be ordered within [0, 1]".into()));
        }
        if self.cluster_radius <= 0.0 || self.splat_scale <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        crate::sh::check_coeff_count(self.sh_coeffs)
    }

    /// Center of object `k` on the ring.
    fn object_center(&self, k: usize, phase: f64, radius_jitter: f64, z: f64) -> [f64; 3] {
        let a = 2.0 * PI * k as f64 / self.objects as f64 + phase;
        let r = self.object_ring_radius * radius_jitter;
        [r * a.cos(), r * a.sin(), z]
    }
}

/// Object layout actually generated, returned for measurements in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInfo {
    pub center: [f64; 3],
    pub color: [f64; 3],
    /// Index range of the object's splats.
    pub splats: std::ops::Range<usize>,
}

pub fn synth_ring_scene(spec: &SynthSpec, seed: u64) -> Result<SceneBundle> {
    synth_ring_scene_with_layout(spec, seed).map(|(b, _)| b)
}

pub fn synth_ring_scene_with_layout(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(SceneBundle, Vec<ObjectInfo>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = spec.sh_coeffs;
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut splats = Vec::with_capacity(spec.objects * spec.splats_per_object);
    let mut gt = Vec::with_capacity(splats.capacity());
    let mut layout = Vec::with_capacity(spec.objects);

    for k in 0..spec.objects {
        let center = spec.object_center(
            k,
            phase,
            rng.random_range(0.8..=1.0),
            rng.random_range(-0.15..=0.15),
        );
        let color = spec.palette[k % spec.palette.len()];
        let lightness = srgb_to_lab_pixel(color)[0] / 100.0;
        let start = splats.len();
        for _ in 0..spec.splats_per_object {
            let offset = sample_in_ball(&mut rng, spec.cluster_radius);
            let scale = [0; 3].map(|_| spec.splat_scale * rng.random_range(0.8..1.25));
            let [lo, hi] = spec.opacity_range;
            let opacity = if lo == hi { lo } else { rng.random_range(lo..hi) };
            let mut f_y = vec![0.0; h];
            f_y[0] = dc_for_value(lightness);
            splats.push(GaussianSplat {
                position: [center[0] + offset[0], center[1] + offset[1], center[2] + offset[2]],
                rotation: random_rotation(&mut rng),
                scale,
                opacity,
                f_y,
                f_c: None,
            });
            gt.push(color.map(|c| {
                let mut row = vec![0.0; h];
                row[0] = dc_for_value(c);
                row
            }));
        }
        layout.push(ObjectInfo {
            center,
            color,
            splats: start..splats.len(),
        });
    }

    let ring = |i: usize, n: usize, offset: f64, id: u32| {
        let a = 2.0 * PI * (i as f64 + offset) / n as f64;
        Camera::look_at(
            id,
            [spec.orbit_radius * a.cos(), spec.orbit_radius * a.sin(), spec.camera_height],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            spec.fov_y_deg,
            spec.width,
            spec.height,
        )
    };
    let cameras = (0..spec.cameras).map(|i| ring(i, spec.cameras, 0.0, i as u32)).collect();
    let test_cameras = (0..spec.test_cameras)
        .map(|i| ring(i, spec.test_cameras, 0.5, (spec.cameras + i) as u32))
        .collect();

    let bundle = SceneBundle {
        scene: Scene {
            splats,
            ground_truth_colors: Some(gt),
        },
        cameras,
        test_cameras,
    };
    bundle.validate()?;
    Ok((bundle, layout))
}

fn sample_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let p = [0; 3].map(|_| rng.random_range(-1.0..=1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return p.map(|v| v * radius);
        }
    }
}

/// Uniform random unit quaternion (Shoemake).
fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = [
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    ];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Copy of `scene` whose luminance DC terms are shifted by a uniform random
/// amount in `[-amplitude, amplitude]` of rendered value, clamped so the DC
/// value stays in `[0, 1]`. Starting point for luminance fitting.
pub fn perturb_luminance(scene: &Scene, amplitude: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    for s in &mut out.splats {
        let value = s.f_y[0] * crate::sh::SH_C0 + crate::sh::SH_OFFSET;
        let shift = if amplitude > 0.0 { rng.random_range(-amplitude..=amplitude) } else { 0.0 };
        s.f_y[0] = dc_for_value((value + shift).clamp(0.0, 1.0));
    }
    out
}
