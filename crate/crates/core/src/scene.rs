//! Gaussian splat scenes, pinhole cameras and the bundle JSON format.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::check_coeff_count;

/// Per-channel color SH coefficients: three rows of `h` coefficients.
pub type ColorCoeffs = [Vec<f64>; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    #[serde(rename = "x")]
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    #[serde(rename = "q")]
    pub rotation: [f64; 4],
    /// Per-axis standard deviation.
    #[serde(rename = "s")]
    pub scale: [f64; 3],
    #[serde(rename = "alpha")]
    pub opacity: f64,
    pub f_y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_c: Option<ColorCoeffs>,
}

impl GaussianSplat {
    pub fn coeff_count(&self) -> usize {
        self.f_y.len()
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        let r = UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)).to_rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::from(self.scale));
        let m = r.matrix() * s;
        m * m.transpose()
    }

    fn validate(&self, path: &str) -> Result<()> {
        let all = self
            .position
            .iter()
            .chain(&self.rotation)
            .chain(&self.scale)
            .chain(std::iter::once(&self.opacity))
            .chain(&self.f_y)
            .chain(self.f_c.iter().flatten().flatten());
        for v in all {
            if !v.is_finite() {
                return Err(Error::schema(path, "non-finite number"));
            }
        }
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(Error::schema(
                format!("{path}.q"),
                format!("quaternion norm {qn} is not 1"),
            ));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::schema(format!("{path}.s"), "scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::schema(
                format!("{path}.opacity"),
                format!("opacity {} outside [0, 1]", self.opacity),
            ));
        }
        check_coeff_count(self.f_y.len())
            .map_err(|e| Error::schema(format!("{path}.f_y"), e.to_string()))?;
        if let Some(fc) = &self.f_c {
            if fc.iter().any(|row| row.len() != self.f_y.len()) {
                return Err(Error::schema(
                    format!("{path}.f_c"),
                    "color coefficient count differs from f_y",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub splats: Vec<GaussianSplat>,
    /// Reference color coefficients per splat, synthetic scenes only.
    pub ground_truth_colors: Option<Vec<ColorCoeffs>>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn has_color(&self) -> bool {
        !self.splats.is_empty() && self.splats.iter().all(|s| s.f_c.is_some())
    }

    /// Copy whose `f_c` is replaced by the ground-truth colors.
    pub fn with_ground_truth_colors(&self) -> Result<Scene> {
        let gt = self
            .ground_truth_colors
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("scene has no ground-truth colors".into()))?;
        let mut out = self.clone();
        for (s, c) in out.splats.iter_mut().zip(gt) {
            s.f_c = Some(c.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.splats.iter().enumerate() {
            s.validate(&format!("splats[{i}]"))?;
        }
        if let Some(gt) = &self.ground_truth_colors {
            if gt.len() != self.splats.len() {
                return Err(Error::schema("gt_colors", "length differs from splats"));
            }
            for (i, (c, s)) in gt.iter().zip(&self.splats).enumerate() {
                if c.iter().any(|row| row.len() != s.f_y.len()) {
                    return Err(Error::schema(
                        format!("gt_colors[{i}]"),
                        "coefficient count differs from f_y",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
    /// World-to-camera rotation, row-major. Camera looks down +z, y points down.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
}

impl Camera {
    /// Camera at `eye` looking at `target`, with world `up` for roll.
    pub fn look_at(
        id: u32,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let eye_v = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye_v).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye_v);
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Camera {
            id,
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            width,
            height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + Vector3::from(self.translation)
    }

    pub fn to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - Vector3::from(self.translation))
    }

    pub fn center(&self) -> Vector3<f64> {
        self.to_world(Vector3::zeros())
    }

    /// Pixel coordinates of a camera-space point (pixel centers at integers).
    pub fn project_point(&self, p: Vector3<f64>) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Camera-space point at pixel `(u, v)` with depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    fn validate(&self, path: &str) -> Result<()> {
        let nums = [self.fx, self.fy, self.cx, self.cy]
            .into_iter()
            .chain(self.rotation)
            .chain(self.translation);
        for v in nums {
            if !v.is_finite() {
                return Err(Error::schema(path, "non-finite number"));
            }
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::schema(format!("{path}.fx"), "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::schema(format!("{path}.w"), "image size must be positive"));
        }
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::schema(
                format!("{path}.R"),
                format!("rotation not orthonormal (error {err:e})"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub test_cameras: Vec<Camera>,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    splats: Vec<GaussianSplat>,
    cameras: Vec<Camera>,
    #[serde(default)]
    test_cameras: Vec<Camera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_colors: Option<Vec<ColorCoeffs>>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.cameras.is_empty() {
            return Err(Error::schema("cameras", "at least one training camera required"));
        }
        let mut ids = std::collections::HashSet::new();
        let all = self
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("cameras[{i}]"), c))
            .chain(
                self.test_cameras
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (format!("test_cameras[{i}]"), c)),
            );
        for (path, cam) in all {
            cam.validate(&path)?;
            if !ids.insert(cam.id) {
                return Err(Error::schema(format!("{path}.id"), format!("duplicate camera id {}", cam.id)));
            }
        }
        Ok(())
    }

    pub fn camera(&self, id: u32) -> Option<&Camera> {
        self.cameras
            .iter()
            .chain(&self.test_cameras)
            .find(|c| c.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile {
            splats: self.scene.splats.clone(),
            cameras: self.cameras.clone(),
            test_cameras: self.test_cameras.clone(),
            gt_colors: self.scene.ground_truth_colors.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BundleFile = serde_json::from_str(text)?;
        let bundle = SceneBundle {
            scene: Scene {
                splats: file.splats,
                ground_truth_colors: file.gt_colors,
            },
            cameras: file.cameras,
            test_cameras: file.test_cameras,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SceneBundle::from_json(&text)
}

pub fn save_scene(bundle: &SceneBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    bundle.validate()?;
    fs::write(path, bundle.to_json()?).map_err(|e| Error::io(path, e))
}
