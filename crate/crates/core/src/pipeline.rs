//! End-to-end orchestration over an output directory.
//!
//! Each stage reads its inputs from the output directory and writes its
//! artifacts back, so running the stages one at a time produces the same
//! files as a single [`run_pipeline`] call. Layout:
//!
//! ```text
//! bundle.json                      scene + cameras (+ ground-truth colors)
//! gray/view_{id}.png               grayscale training views
//! scene_geometry.json              luminance fit; fit_geometry.csv
//! decomposition.json               base views + coverage
//! base_init/ base_calibrated/      base views before/after calibration
//! propagated/view_{id}.png         colorized training views; colorize.json
//! scene_color.json                 color fit; fit_color.csv
//! renders/{test,train,gt_test,gt_train}/
//! flows/d{Δ}/flow_{t}.pfm          exact flows between training frames
//! report.json, hue_histogram.csv, plots/
//! manifest.json                    config, timings, file hashes, status
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorize::{
    build_reference, build_single, calibrate, initial_base_colorize, propagate, ColorizerSpec, View,
};
use crate::decompose::{coverage_report, decompose, CoverageReport, Decomposition};
use crate::error::{Error, Result};
use crate::imaging::{read_flow, read_image, to_grayscale, write_flow, write_image, Layout, PlanarImage};
use crate::metrics::{
    cdi_default, hue_histogram, mean_chroma_spread, mean_colorfulness, mean_psnr, warped_consistency,
    MetricsReport, ReferenceMetrics,
};
use crate::optimize::{fit_color, fit_luminance, FitConfig, ParamGroup};
use crate::plot::{coverage_svg, hue_histogram_svg};
use crate::rasterizer::{exact_flow, render_color, render_luminance, visibility};
use crate::scene::{load_scene, save_scene, Camera, SceneBundle};
use crate::synth::{perturb_luminance, synth_ring_scene, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Synth {
        #[serde(default)]
        spec: SynthSpec,
        #[serde(default)]
        seed: u64,
    },
    /// A bundle file; grayscale views are rendered from its `f_y` unless
    /// `gray_dir` provides `view_{id}.png` for every training camera.
    File {
        path: PathBuf,
        #[serde(default)]
        gray_dir: Option<PathBuf>,
    },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Synth {
            spec: SynthSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneSource,
    pub k: usize,
    pub geometry_iterations: usize,
    pub color_iterations: usize,
    pub lambda_s: f64,
    pub lr_luminance: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    /// Uniform `±` shift of each splat's luminance before the geometry fit.
    pub init_fy_noise: f64,
    pub single_colorizer: ColorizerSpec,
    pub reference_colorizer: ColorizerSpec,
    pub calibration_passes: usize,
    pub short_delta: usize,
    pub long_delta: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fit = FitConfig::luminance();
        Self {
            scene: SceneSource::default(),
            k: 4,
            geometry_iterations: 30_000,
            color_iterations: 7_000,
            lambda_s: fit.lambda_s,
            lr_luminance: fit.lr_luminance,
            lr_opacity: fit.lr_opacity,
            lr_color: fit.lr_color,
            init_fy_noise: 0.2,
            single_colorizer: ColorizerSpec::Oracle,
            reference_colorizer: ColorizerSpec::Oracle,
            calibration_passes: 1,
            short_delta: 1,
            long_delta: 10,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl PipelineConfig {
    fn training_camera_count(&self) -> Result<usize> {
        match &self.scene {
            SceneSource::Synth { spec, .. } => {
                spec.validate()?;
                Ok(spec.cameras)
            }
            SceneSource::File { path, .. } => Ok(load_scene(path)?.cameras.len()),
        }
    }

    /// Checks everything that can be checked without rendering.
    pub fn validate(&self) -> Result<()> {
        let t = self.training_camera_count()?;
        if self.k < 1 || self.k > t {
            return Err(Error::InvalidArgument(format!("k = {} must lie in [1, {t}] (training cameras)", self.k)));
        }
        for (name, d) in [("short_delta", self.short_delta), ("long_delta", self.long_delta)] {
            if d < 1 || d >= t {
                return Err(Error::InvalidArgument(format!("{name} = {d} must lie in [1, {}]", t - 1)));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_s) {
            return Err(Error::InvalidArgument(format!("lambda_s {} outside [0, 1]", self.lambda_s)));
        }
        if !(self.init_fy_noise >= 0.0 && self.init_fy_noise.is_finite()) {
            return Err(Error::InvalidArgument("init_fy_noise must be finite and non-negative".into()));
        }
        if matches!(self.single_colorizer, ColorizerSpec::Lut { .. }) {
            return Err(Error::InvalidArgument("single_colorizer cannot be lut".into()));
        }
        if matches!(self.reference_colorizer, ColorizerSpec::HueBias { .. }) {
            return Err(Error::InvalidArgument("reference_colorizer cannot be hue_bias".into()));
        }
        if let ColorizerSpec::Lut { bins: 0 } = self.reference_colorizer {
            return Err(Error::InvalidArgument("lut needs at least one bin".into()));
        }
        Ok(())
    }

    fn fit_config(&self, stage: Stage, iterations: usize, groups: Vec<ParamGroup>) -> FitConfig {
        FitConfig {
            iterations,
            lr_luminance: self.lr_luminance,
            lr_opacity: self.lr_opacity,
            lr_color: self.lr_color,
            lambda_s: self.lambda_s,
            groups,
            seed: derive_seed(self.seed, stage.name()),
            ..FitConfig::luminance()
        }
    }
}

/// Per-stage seed: the first eight bytes of `sha256(seed ‖ label)`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scene,
    FitGeometry,
    Decompose,
    Colorize,
    FitColor,
    Render,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Scene,
        Stage::FitGeometry,
        Stage::Decompose,
        Stage::Colorize,
        Stage::FitColor,
        Stage::Render,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scene => "scene",
            Stage::FitGeometry => "fit-geometry",
            Stage::Decompose => "decompose",
            Stage::Colorize => "colorize",
            Stage::FitColor => "fit-color",
            Stage::Render => "render",
            Stage::Metrics => "metrics",
        }
    }
}

/// Top-level entries owned by the pipeline inside the output directory.
const ARTIFACTS: [&str; 17] = [
    "bundle.json",
    "gray",
    "scene_geometry.json",
    "fit_geometry.csv",
    "decomposition.json",
    "base_init",
    "base_calibrated",
    "propagated",
    "colorize.json",
    "scene_color.json",
    "fit_color.csv",
    "renders",
    "flows",
    "report.json",
    "hue_histogram.csv",
    "plots",
    MANIFEST,
];

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    #[serde(rename = "FAILED")]
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Relative path → sha256 of every artifact except the manifest.
    pub files: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(config: &PipelineConfig) -> Self {
        Self {
            status: RunStatus::Ok,
            failed_stage: None,
            error: None,
            config: config.clone(),
            stages: Vec::new(),
            files: BTreeMap::new(),
            versions: BTreeMap::from([
                ("splatcolor-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("manifest_format".to_string(), "1".to_string()),
            ]),
        }
    }

    /// Digest over the file inventory only; equal for runs that produced
    /// identical artifacts regardless of timing.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for (path, hash) in &self.files {
            h.update(path.as_bytes());
            h.update([0]);
            h.update(hash.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Summary written by the colorize stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorizeSummary {
    pub base_view_ids: Vec<u32>,
    pub calibration_passes: usize,
    /// Spread of per-view mean chroma across base views.
    pub chroma_spread_initial: f64,
    pub chroma_spread_calibrated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub decomposition: Decomposition,
    pub coverage: CoverageReport,
    /// `(camera id, |visible set|)` for every training camera.
    pub visibility_sizes: Vec<(u32, usize)>,
    pub total_splats: usize,
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn view(&self, dir: &str, id: u32) -> PathBuf {
        self.root.join(dir).join(format!("view_{id}.png"))
    }

    pub fn frame(&self, dir: &str, t: usize) -> PathBuf {
        self.root.join(dir).join(frame_name(t))
    }

    pub fn flow_dir(&self, delta: usize) -> PathBuf {
        self.root.join("flows").join(format!("d{delta}"))
    }
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.png")
}

pub fn flow_name(t: usize) -> String {
    format!("flow_{t:03}.pfm")
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_png(img: &PlanarImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_image(img, path)
}

fn read_layout(path: &Path, layout: Layout) -> Result<PlanarImage> {
    let img = read_image(path)?;
    match (img.layout(), layout) {
        (a, b) if a == b => Ok(img),
        (Layout::Rgb3, Layout::Luminance1) => to_grayscale(&img),
        (found, expected) => Err(Error::Layout { expected, found }),
    }
}

fn read_views(out: &OutputDir, dir: &str, cams: &[Camera], layout: Layout) -> Result<Vec<PlanarImage>> {
    cams.iter().map(|c| read_layout(&out.view(dir, c.id), layout)).collect()
}

fn remove_artifacts(out: &OutputDir) -> Result<()> {
    for name in ARTIFACTS {
        let p = out.path(name);
        if p.is_dir() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        } else if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(root).expect("under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(())
}

/// sha256 of every pipeline artifact in `root`, excluding the manifest.
pub fn file_inventory(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for name in ARTIFACTS.iter().filter(|n| **n != MANIFEST) {
        let p = root.join(name);
        if p.is_dir() {
            collect_files(root, &p, &mut files)?;
        } else if p.exists() {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// Stages

fn stage_scene(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let (bundle, gray_dir) = match &cfg.scene {
        SceneSource::Synth { spec, seed } => (synth_ring_scene(spec, *seed)?, None),
        SceneSource::File { path, gray_dir } => (load_scene(path)?, gray_dir.clone()),
    };
    ensure_dir(out.root())?;
    save_scene(&bundle, out.path("bundle.json"))?;
    for cam in &bundle.cameras {
        let gray = match &gray_dir {
            Some(dir) => {
                let img = read_layout(&dir.join(format!("view_{}.png", cam.id)), Layout::Luminance1)?;
                if img.width() != cam.width || img.height() != cam.height {
                    return Err(Error::Dimension(format!("gray view {} does not match its camera", cam.id)));
                }
                img
            }
            None => render_luminance(&bundle.scene, cam)?,
        };
        write_png(&gray, &out.view("gray", cam.id))?;
    }
    Ok(())
}

fn stage_fit_geometry(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let bundle = load_scene(out.path("bundle.json"))?;
    let views = read_views(out, "gray", &bundle.cameras, Layout::Luminance1)?;
    let start = perturb_luminance(&bundle.scene, cfg.init_fy_noise, derive_seed(cfg.seed, "fit-geometry/init"));
    let fit = cfg.fit_config(
        Stage::FitGeometry,
        cfg.geometry_iterations,
        vec![ParamGroup::Luminance, ParamGroup::Opacity],
    );
    let (scene, report) = fit_luminance(&start, &bundle.cameras, &views, &fit)?;
    save_scene(&SceneBundle { scene, ..bundle }, out.path("scene_geometry.json"))?;
    write_file(&out.path("fit_geometry.csv"), report.to_csv())
}

fn stage_decompose(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let bundle = load_scene(out.path("scene_geometry.json"))?;
    let vis: Vec<_> = bundle.cameras.iter().map(|c| visibility(&bundle.scene, c)).collect();
    let decomposition = decompose(&vis, cfg.k)?;
    let coverage = coverage_report(&decomposition, &vis, bundle.scene.len());
    write_json(
        &out.path("decomposition.json"),
        &DecompositionFile {
            visibility_sizes: vis.iter().map(|v| (v.camera_id, v.len())).collect(),
            total_splats: bundle.scene.len(),
            decomposition,
            coverage,
        },
    )
}

fn stage_colorize(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let reference_bundle = load_scene(out.path("bundle.json"))?;
    let bundle = load_scene(out.path("scene_geometry.json"))?;
    let dec: DecompositionFile = read_json(&out.path("decomposition.json"))?;
    let single = build_single(&cfg.single_colorizer, &reference_bundle)?;
    let reference = build_reference(&cfg.reference_colorizer, &reference_bundle)?;

    let gray: Vec<View> = bundle
        .cameras
        .iter()
        .zip(read_views(out, "gray", &bundle.cameras, Layout::Luminance1)?)
        .map(|(c, img)| View::new(c.id, img))
        .collect();
    let base_gray: Vec<View> = dec
        .decomposition
        .base_view_ids
        .iter()
        .map(|id| {
            gray.iter()
                .find(|v| v.id == *id)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("base view {id} is not a training camera")))
        })
        .collect::<Result<_>>()?;

    let initial = initial_base_colorize(single.as_ref(), &base_gray)?;
    let calibrated = calibrate(reference.as_ref(), &initial, cfg.calibration_passes)?;
    let propagated = propagate(reference.as_ref(), &gray, &calibrated)?;

    for (dir, views) in [("base_init", &initial), ("base_calibrated", &calibrated), ("propagated", &propagated)] {
        for v in views {
            write_png(&v.image, &out.view(dir, v.id))?;
        }
    }
    let images = |vs: &[View]| vs.iter().map(|v| v.image.clone()).collect::<Vec<_>>();
    write_json(
        &out.path("colorize.json"),
        &ColorizeSummary {
            base_view_ids: dec.decomposition.base_view_ids.clone(),
            calibration_passes: cfg.calibration_passes,
            chroma_spread_initial: mean_chroma_spread(&images(&initial))?,
            chroma_spread_calibrated: mean_chroma_spread(&images(&calibrated))?,
        },
    )
}

fn stage_fit_color(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let bundle = load_scene(out.path("scene_geometry.json"))?;
    let views = read_views(out, "propagated", &bundle.cameras, Layout::Rgb3)?;
    let fit = cfg.fit_config(Stage::FitColor, cfg.color_iterations, vec![ParamGroup::Color]);
    let (scene, report) = fit_color(&bundle.scene, &bundle.cameras, &views, &fit)?;
    save_scene(&SceneBundle { scene, ..bundle }, out.path("scene_color.json"))?;
    write_file(&out.path("fit_color.csv"), report.to_csv())
}

fn stage_render(_cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let bundle = load_scene(out.path("scene_color.json"))?;
    for cam in &bundle.test_cameras {
        write_png(&render_color(&bundle.scene, cam)?, &out.view("renders/test", cam.id))?;
    }
    for (t, cam) in bundle.cameras.iter().enumerate() {
        write_png(&render_color(&bundle.scene, cam)?, &out.frame("renders/train", t))?;
    }
    let reference = load_scene(out.path("bundle.json"))?;
    if reference.scene.ground_truth_colors.is_some() {
        let gt = reference.scene.with_ground_truth_colors()?;
        for cam in &reference.test_cameras {
            write_png(&render_color(&gt, cam)?, &out.view("renders/gt_test", cam.id))?;
        }
        for (t, cam) in reference.cameras.iter().enumerate() {
            write_png(&render_color(&gt, cam)?, &out.frame("renders/gt_train", t))?;
        }
    }
    Ok(())
}

fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(ext))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Warped consistency of `frame_*.png` in `frames_dir` using `flow_*.pfm`
/// in `flow_dir`; both sorted by name.
pub fn consistency_from_dirs(frames_dir: &Path, flow_dir: &Path, delta: usize) -> Result<f64> {
    let frames = numbered_files(frames_dir, "frame_", ".png")?
        .iter()
        .map(|p| read_layout(p, Layout::Rgb3))
        .collect::<Result<Vec<_>>>()?;
    let flows = numbered_files(flow_dir, "flow_", ".pfm")?
        .iter()
        .map(read_flow)
        .collect::<Result<Vec<_>>>()?;
    warped_consistency(&frames, &flows, delta)
}

fn read_dir_images(dir: &Path, prefix: &str) -> Result<Vec<PlanarImage>> {
    numbered_files(dir, prefix, ".png")?
        .iter()
        .map(|p| read_layout(p, Layout::Rgb3))
        .collect()
}

fn stage_metrics(cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    let bundle = load_scene(out.path("scene_color.json"))?;
    for delta in [cfg.short_delta, cfg.long_delta] {
        let dir = out.flow_dir(delta);
        ensure_dir(&dir)?;
        for t in 0..bundle.cameras.len().saturating_sub(delta) {
            let (flow, mask) = exact_flow(&bundle.scene, &bundle.cameras[t], &bundle.cameras[t + delta]);
            write_flow(&flow, &mask, dir.join(flow_name(t)))?;
        }
    }
    let consistency = |frames: &str| -> Result<(f64, f64)> {
        Ok((
            consistency_from_dirs(&out.path(frames), &out.flow_dir(cfg.short_delta), cfg.short_delta)?,
            consistency_from_dirs(&out.path(frames), &out.flow_dir(cfg.long_delta), cfg.long_delta)?,
        ))
    };
    // Diversity metrics use held-out views when there are any.
    let (eval_dir, gt_dir, prefix) = if bundle.test_cameras.is_empty() {
        ("renders/train", "renders/gt_train", "frame_")
    } else {
        ("renders/test", "renders/gt_test", "view_")
    };
    let renders = read_dir_images(&out.path(eval_dir), prefix)?;
    let (short, long) = consistency("renders/train")?;
    let has_gt = out.path("renders/gt_train").is_dir();
    let (psnr_db, ground_truth) = if has_gt {
        let gt = read_dir_images(&out.path(gt_dir), prefix)?;
        let (gs, gl) = consistency("renders/gt_train")?;
        (
            Some(mean_psnr(&renders, &gt)?),
            Some(ReferenceMetrics {
                cdi: cdi_default(&gt)?,
                short_consistency: gs,
                long_consistency: gl,
                colorfulness: mean_colorfulness(&gt)?,
            }),
        )
    } else {
        (None, None)
    };
    let report = MetricsReport {
        cdi: cdi_default(&renders)?,
        short_consistency: short,
        long_consistency: long,
        colorfulness: mean_colorfulness(&renders)?,
        psnr_db,
        hue_histogram: hue_histogram(&renders)?,
        ground_truth,
    };
    write_json(&out.path("report.json"), &report)?;
    write_file(&out.path("hue_histogram.csv"), report.hue_histogram.to_csv())?;
    write_file(&out.path("plots/hue_histogram.svg"), hue_histogram_svg(&report.hue_histogram))?;
    let dec: DecompositionFile = read_json(&out.path("decomposition.json"))?;
    write_file(&out.path("plots/coverage.svg"), coverage_svg(&dec.coverage.covered_fraction))
}

fn execute(stage: Stage, cfg: &PipelineConfig, out: &OutputDir) -> Result<()> {
    match stage {
        Stage::Scene => stage_scene(cfg, out),
        Stage::FitGeometry => stage_fit_geometry(cfg, out),
        Stage::Decompose => stage_decompose(cfg, out),
        Stage::Colorize => stage_colorize(cfg, out),
        Stage::FitColor => stage_fit_color(cfg, out),
        Stage::Render => stage_render(cfg, out),
        Stage::Metrics => stage_metrics(cfg, out),
    }
}

fn current_manifest(cfg: &PipelineConfig, out: &OutputDir) -> RunManifest {
    RunManifest::load(out.path(MANIFEST))
        .ok()
        .filter(|m| m.config == *cfg)
        .unwrap_or_else(|| RunManifest::new(cfg))
}

fn record(cfg: &PipelineConfig, out: &OutputDir, stage: Stage, seconds: f64, result: &Result<()>) -> Result<RunManifest> {
    let mut m = current_manifest(cfg, out);
    m.stages.retain(|s| s.stage != stage.name());
    m.stages.push(StageRecord {
        stage: stage.name().to_string(),
        seconds,
    });
    match result {
        Ok(()) => {
            m.status = RunStatus::Ok;
            m.failed_stage = None;
            m.error = None;
        }
        Err(e) => {
            m.status = RunStatus::Failed;
            m.failed_stage = Some(stage.name().to_string());
            m.error = Some(e.to_string());
        }
    }
    ensure_dir(out.root())?;
    m.files = file_inventory(out.root())?;
    write_json(&out.path(MANIFEST), &m)?;
    Ok(m)
}

/// Runs one stage against the configured output directory and updates the
/// manifest. Inputs are read from artifacts of earlier stages.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<RunManifest> {
    cfg.validate()?;
    let out = OutputDir::new(&cfg.output_dir);
    let start = Instant::now();
    let result = execute(stage, cfg, &out);
    let manifest = record(cfg, &out, stage, start.elapsed().as_secs_f64(), &result)?;
    result.map_err(|e| Error::Stage {
        stage: stage.name().to_string(),
        source: Box::new(e),
    })?;
    Ok(manifest)
}

/// Validates the config, clears earlier pipeline artifacts from the output
/// directory and runs every stage in order. On failure the partial outputs
/// stay in place and the manifest is marked `FAILED`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = OutputDir::new(&cfg.output_dir);
    remove_artifacts(&out)?;
    let mut manifest = RunManifest::new(cfg);
    for stage in Stage::ALL {
        manifest = run_stage(cfg, stage)?;
    }
    Ok(manifest)
}

/// Re-runs the configuration stored in a manifest, optionally into another
/// output directory.
pub fn replay(manifest_path: impl AsRef<Path>, output_dir: Option<PathBuf>) -> Result<RunManifest> {
    let mut cfg = RunManifest::load(manifest_path)?.config;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    run_pipeline(&cfg)
}
