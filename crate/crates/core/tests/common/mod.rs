//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatcolor_core::{Camera, GaussianSplat, Scene};

pub fn random_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.map(|x| x / n)
}

/// Up to `max_splats` random splats in front of a camera at the origin
/// looking down +z, with SH degree 0 or 1 and optional color rows.
pub fn random_scene(seed: u64, max_splats: usize, with_color: bool) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_splats);
    let h = if rng.random_bool(0.5) { 1 } else { 4 };
    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..h).map(|k| if k == 0 { rng.random_range(-1.2..1.2) } else { rng.random_range(-0.4..0.4) }).collect()
    };
    let splats = (0..n)
        .map(|_| {
            let f_y = row(&mut rng);
            let f_c = with_color.then(|| [row(&mut rng), row(&mut rng), row(&mut rng)]);
            GaussianSplat {
                position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.5..5.0)],
                rotation: random_quaternion(&mut rng),
                scale: std::array::from_fn(|_| rng.random_range(0.02..0.3)),
                opacity: rng.random_range(0.05..1.0),
                f_y,
                f_c,
            }
        })
        .collect();
    Scene { splats, ground_truth_colors: None }
}

pub fn forward_camera(id: u32, size: usize) -> Camera {
    Camera::look_at(id, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0], 50.0, size, size)
}

fn sh_basis(h: usize, d: Vector3<f64>) -> Vec<f64> {
    let c0 = 0.5 / std::f64::consts::PI.sqrt();
    let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    let mut b = vec![c0];
    if h == 4 {
        b.extend([-c1 * d.y, c1 * d.z, -c1 * d.x]);
    }
    b
}

fn sh_value(row: &[f64], d: Vector3<f64>) -> f64 {
    let raw: f64 = sh_basis(row.len(), d).iter().zip(row).map(|(b, c)| b * c).sum();
    (raw + 0.5).max(0.0)
}

struct Hit {
    depth: f64,
    id: usize,
    alpha: f64,
}

/// Per pixel: projects every splat from scratch, keeps those whose 3σ
/// ellipse covers the pixel center, sorts by (depth, id) and composites.
/// Returns `channels` blended values per pixel (unclamped), the summed
/// weights and the final transmittance.
pub fn naive_render(scene: &Scene, cam: &Camera, rows: &dyn Fn(&GaussianSplat) -> Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let r = Matrix3::from_row_slice(&cam.rotation);
    let t = Vector3::from(cam.translation);
    let center = -(r.transpose() * t);
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut trans = Vec::new();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let mut hits = Vec::new();
            for (id, s) in scene.splats.iter().enumerate() {
                let p = r * Vector3::from(s.position) + t;
                if p.z <= 0.01 {
                    continue;
                }
                let q = UnitQuaternion::from_quaternion(Quaternion::new(s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3]));
                let rs = q.to_rotation_matrix().matrix() * Matrix3::from_diagonal(&Vector3::from(s.scale));
                let cov3 = r * rs * rs.transpose() * r.transpose();
                let j = nalgebra::Matrix2x3::new(cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z), 0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z));
                let cov2 = j * cov3 * j.transpose() + Matrix2::identity() * 0.3;
                let Some(inv) = cov2.try_inverse() else { continue };
                let mean = Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
                let d = Vector2::new(px as f64, py as f64) - mean;
                let m = (d.transpose() * inv * d)[0];
                if m > 9.0 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * m).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                hits.push(Hit { depth: p.z, id, alpha });
            }
            hits.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.id.cmp(&b.id)));
            let mut tr = 1.0;
            let mut wsum = 0.0;
            let mut acc: Vec<f64> = Vec::new();
            for hit in hits {
                let s = &scene.splats[hit.id];
                let dir = (Vector3::from(s.position) - center).normalize();
                let vals: Vec<f64> = rows(s).iter().map(|row| sh_value(row, dir)).collect();
                acc.resize(vals.len(), 0.0);
                let w = hit.alpha * tr;
                for (a, v) in acc.iter_mut().zip(&vals) {
                    *a += v * w;
                }
                wsum += w;
                tr *= 1.0 - hit.alpha;
                if tr < 1e-4 {
                    break;
                }
            }
            values.push(acc);
            weights.push(wsum);
            trans.push(tr);
        }
    }
    (values, weights, trans)
}

pub fn naive_luminance(scene: &Scene, cam: &Camera) -> Vec<f64> {
    let (v, _, _) = naive_render(scene, cam, &|s| vec![s.f_y.clone()]);
    v.into_iter().map(|p| p.first().copied().unwrap_or(0.0).clamp(0.0, 1.0)).collect()
}
