//! Colorizer contracts, built-in colorizers, and the base-view calibration
//! and propagation steps built on them.
//!
//! A [`SingleColorizer`] colors one grayscale view on its own. A
//! [`ReferenceColorizer`] colors a grayscale view using a set of colored
//! reference views. Both receive the view id; only the oracle may use it.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{lab_to_rgb, read_image, rgb_to_lab, srgb_to_lab_pixel, to_grayscale, Layout, PlanarImage};
use crate::rasterizer::render_color;
use crate::scene::{Camera, Scene, SceneBundle};

pub trait SingleColorizer: Send + Sync {
    fn colorize(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage>;
}

pub trait ReferenceColorizer: Send + Sync {
    fn colorize(&self, gray: &PlanarImage, view_id: u32, references: &[PlanarImage]) -> Result<PlanarImage>;
}

/// A grayscale or colored image tagged with its camera id.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: u32,
    pub image: PlanarImage,
}

impl View {
    pub fn new(id: u32, image: PlanarImage) -> Self {
        Self { id, image }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorizedViewSet {
    pub base_initial: Vec<View>,
    pub base_calibrated: Vec<View>,
    pub propagated: Vec<View>,
}

fn check_output(gray: &PlanarImage, out: &PlanarImage) -> Result<()> {
    if out.layout() != Layout::Rgb3 || out.width() != gray.width() || out.height() != gray.height() {
        return Err(Error::Colorizer(format!(
            "colorizer returned {}x{} {:?} for a {}x{} input",
            out.width(),
            out.height(),
            out.layout(),
            gray.width(),
            gray.height()
        )));
    }
    Ok(())
}

/// Mean absolute difference between the input luminance and the grayscale
/// of a colorized output.
pub fn structure_deviation(gray: &PlanarImage, colored: &PlanarImage) -> Result<f64> {
    gray.expect_layout(Layout::Luminance1)?;
    crate::loss::loss_l1(gray, &to_grayscale(colored)?)
}

// ---------------------------------------------------------------------------
// Oracle

/// Renders the ground-truth colors at the requested camera; ignores its
/// grayscale input and references.
#[derive(Debug, Clone)]
pub struct OracleColorizer {
    scene: Scene,
    cameras: Vec<Camera>,
}

pub fn oracle_colorizer(bundle: &SceneBundle) -> Result<OracleColorizer> {
    let scene = bundle
        .scene
        .with_ground_truth_colors()
        .map_err(|_| Error::Colorizer("oracle colorizer needs ground-truth colors".into()))?;
    Ok(OracleColorizer {
        scene,
        cameras: bundle.cameras.iter().chain(&bundle.test_cameras).cloned().collect(),
    })
}

impl OracleColorizer {
    fn render(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage> {
        let cam = self
            .cameras
            .iter()
            .find(|c| c.id == view_id)
            .ok_or_else(|| Error::Colorizer(format!("oracle has no camera {view_id}")))?;
        let out = render_color(&self.scene, cam)?;
        check_output(gray, &out)?;
        Ok(out)
    }
}

impl SingleColorizer for OracleColorizer {
    fn colorize(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage> {
        self.render(gray, view_id)
    }
}

impl ReferenceColorizer for OracleColorizer {
    fn colorize(&self, gray: &PlanarImage, view_id: u32, _references: &[PlanarImage]) -> Result<PlanarImage> {
        self.render(gray, view_id)
    }
}

// ---------------------------------------------------------------------------
// Hue bias

/// Deterministic value in `[-1, 1]` for a view id (splitmix64).
pub fn view_hash_unit(view_id: u32) -> f64 {
    let mut z = (view_id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Rotates the `(a, b)` chroma of a Lab image by `angle` radians.
pub fn rotate_chroma(lab: &PlanarImage, angle: f64) -> Result<PlanarImage> {
    lab.expect_layout(Layout::Lab3)?;
    let (s, c) = angle.sin_cos();
    let data = lab
        .pixels()
        .flat_map(|p| [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]])
        .collect();
    PlanarImage::new(lab.width(), lab.height(), Layout::Lab3, data)
}

/// Wraps a colorizer and rotates its output hue by a per-view angle in
/// `[-strength, strength]`, simulating an inconsistent 2D colorizer.
pub struct HueBiasColorizer {
    base: Box<dyn SingleColorizer>,
    strength: f64,
}

pub fn hue_bias_colorizer(base: Box<dyn SingleColorizer>, strength: f64) -> HueBiasColorizer {
    HueBiasColorizer { base, strength }
}

impl HueBiasColorizer {
    pub fn angle(&self, view_id: u32) -> f64 {
        self.strength * view_hash_unit(view_id)
    }
}

impl SingleColorizer for HueBiasColorizer {
    fn colorize(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage> {
        let out = self.base.colorize(gray, view_id)?;
        if self.strength == 0.0 {
            return Ok(out);
        }
        lab_to_rgb(&rotate_chroma(&rgb_to_lab(&out)?, self.angle(view_id))?)
    }
}

// ---------------------------------------------------------------------------
// Lightness → chroma lookup

/// Mean `(a, b)` per uniform lightness bin over `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaTable {
    pub chroma: Vec<[f64; 2]>,
}

impl ChromaTable {
    pub fn bin(&self, lightness: f64) -> usize {
        let n = self.chroma.len();
        ((lightness / 100.0 * n as f64).floor().max(0.0) as usize).min(n - 1)
    }

    /// Builds the table from RGB references. Per-bin samples are sorted
    /// before summing so the result does not depend on reference order.
    pub fn build(references: &[PlanarImage], bins: usize) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Colorizer("reference list is empty".into()));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("LUT needs at least one bin".into()));
        }
        let probe = ChromaTable {
            chroma: vec![[0.0; 2]; bins],
        };
        let mut a_samples = vec![Vec::new(); bins];
        let mut b_samples = vec![Vec::new(); bins];
        for r in references {
            r.expect_layout(Layout::Rgb3)?;
            for p in r.pixels() {
                let lab = srgb_to_lab_pixel([p[0], p[1], p[2]]);
                let i = probe.bin(lab[0]);
                a_samples[i].push(lab[1]);
                b_samples[i].push(lab[2]);
            }
        }
        let mean = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / v.len() as f64
        };
        let filled: Vec<Option<[f64; 2]>> = a_samples
            .iter_mut()
            .zip(b_samples.iter_mut())
            .map(|(a, b)| (!a.is_empty()).then(|| [mean(a), mean(b)]))
            .collect();
        let chroma = (0..bins)
            .map(|i| {
                // Nearest non-empty bin; the lower index wins at equal distance.
                (0..bins)
                    .flat_map(|d| [i.checked_sub(d), Some(i + d)])
                    .flatten()
                    .filter(|&j| j < bins)
                    .find_map(|j| filled[j])
                    .expect("at least one reference pixel")
            })
            .collect();
        Ok(Self { chroma })
    }

    /// Keeps the input lightness and assigns the table chroma.
    pub fn apply_lab(&self, gray: &PlanarImage) -> Result<PlanarImage> {
        gray.expect_layout(Layout::Luminance1)?;
        let data = gray
            .data()
            .iter()
            .flat_map(|&v| {
                let l = v * 100.0;
                let [a, b] = self.chroma[self.bin(l)];
                [l, a, b]
            })
            .collect();
        PlanarImage::new(gray.width(), gray.height(), Layout::Lab3, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutColorizer {
    pub bins: usize,
}

pub fn lut_reference_colorizer(bins: usize) -> LutColorizer {
    LutColorizer { bins }
}

impl ReferenceColorizer for LutColorizer {
    fn colorize(&self, gray: &PlanarImage, _view_id: u32, references: &[PlanarImage]) -> Result<PlanarImage> {
        let table = ChromaTable::build(references, self.bins)?;
        lab_to_rgb(&table.apply_lab(gray)?)
    }
}

// ---------------------------------------------------------------------------
// External

/// Pre-computed colorized views read from `dir/view_{id}.png`.
#[derive(Debug, Clone)]
pub struct ExternalColorizer {
    dir: PathBuf,
}

pub fn external_colorizer(dir: impl AsRef<Path>) -> ExternalColorizer {
    ExternalColorizer {
        dir: dir.as_ref().to_path_buf(),
    }
}

impl ExternalColorizer {
    fn load(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage> {
        let out = read_image(self.dir.join(format!("view_{view_id}.png")))?;
        check_output(gray, &out)?;
        Ok(out)
    }
}

impl SingleColorizer for ExternalColorizer {
    fn colorize(&self, gray: &PlanarImage, view_id: u32) -> Result<PlanarImage> {
        self.load(gray, view_id)
    }
}

impl ReferenceColorizer for ExternalColorizer {
    fn colorize(&self, gray: &PlanarImage, view_id: u32, _references: &[PlanarImage]) -> Result<PlanarImage> {
        self.load(gray, view_id)
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Colorizer choice as written in pipeline configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ColorizerSpec {
    Oracle,
    HueBias { strength: f64 },
    Lut { bins: usize },
    External { dir: PathBuf },
}

pub fn build_single(spec: &ColorizerSpec, bundle: &SceneBundle) -> Result<Box<dyn SingleColorizer>> {
    Ok(match spec {
        ColorizerSpec::Oracle => Box::new(oracle_colorizer(bundle)?),
        ColorizerSpec::HueBias { strength } => {
            Box::new(hue_bias_colorizer(Box::new(oracle_colorizer(bundle)?), *strength))
        }
        ColorizerSpec::External { dir } => Box::new(external_colorizer(dir)),
        ColorizerSpec::Lut { .. } => {
            return Err(Error::InvalidArgument("lut needs references; it cannot be the single-view colorizer".into()))
        }
    })
}

pub fn build_reference(spec: &ColorizerSpec, bundle: &SceneBundle) -> Result<Box<dyn ReferenceColorizer>> {
    Ok(match spec {
        ColorizerSpec::Oracle => Box::new(oracle_colorizer(bundle)?),
        ColorizerSpec::Lut { bins } => Box::new(lut_reference_colorizer(*bins)),
        ColorizerSpec::External { dir } => Box::new(external_colorizer(dir)),
        ColorizerSpec::HueBias { .. } => {
            return Err(Error::InvalidArgument("hue_bias cannot be the reference colorizer".into()))
        }
    })
}

// ---------------------------------------------------------------------------
// Pipeline steps

/// Colors every base view independently.
pub fn initial_base_colorize(colorizer: &dyn SingleColorizer, base_gray: &[View]) -> Result<Vec<View>> {
    if base_gray.is_empty() {
        return Err(Error::InvalidArgument("no base views".into()));
    }
    base_gray
        .par_iter()
        .map(|v| Ok(View::new(v.id, colorizer.colorize(&v.image, v.id)?)))
        .collect()
}

/// One calibration pass: each base view is averaged with its recolorization
/// against all *other* initial views. With a single view there is nothing to
/// reference and the set is returned unchanged.
pub fn global_calibrate(colorizer: &dyn ReferenceColorizer, initial: &[View]) -> Result<Vec<View>> {
    if initial.len() <= 1 {
        return Ok(initial.to_vec());
    }
    (0..initial.len())
        .into_par_iter()
        .map(|k| {
            let own = &initial[k];
            let refs: Vec<PlanarImage> = initial
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, v)| v.image.clone())
                .collect();
            let recolored = colorizer.colorize(&to_grayscale(&own.image)?, own.id, &refs)?;
            check_output(&own.image, &recolored)?;
            let data = own
                .image
                .data()
                .iter()
                .zip(recolored.data())
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            Ok(View::new(own.id, PlanarImage::new(own.image.width(), own.image.height(), Layout::Rgb3, data)?))
        })
        .collect()
}

/// Repeats [`global_calibrate`] `passes` times; zero passes disables calibration.
pub fn calibrate(colorizer: &dyn ReferenceColorizer, initial: &[View], passes: usize) -> Result<Vec<View>> {
    let mut current = initial.to_vec();
    for _ in 0..passes {
        current = global_calibrate(colorizer, &current)?;
    }
    Ok(current)
}

/// Colors every training view against the full calibrated base set.
pub fn propagate(colorizer: &dyn ReferenceColorizer, gray_views: &[View], calibrated: &[View]) -> Result<Vec<View>> {
    if gray_views.is_empty() || calibrated.is_empty() {
        return Err(Error::InvalidArgument("propagation needs training views and base views".into()));
    }
    let refs: Vec<PlanarImage> = calibrated.iter().map(|v| v.image.clone()).collect();
    gray_views
        .par_iter()
        .map(|v| {
            let out = colorizer.colorize(&v.image, v.id, &refs)?;
            check_output(&v.image, &out)?;
            Ok(View::new(v.id, out))
        })
        .collect()
}
