//! Colorization of luminance-only Gaussian splat scenes.
//!
//! The crate reconstructs single-channel splat scenes from grayscale views,
//! splits them into subscenes by greedy base-view selection, colorizes the
//! base views through pluggable colorizers with a global calibration pass,
//! propagates color to every training view, fits per-splat color
//! coefficients to the result and scores the output for color diversity and
//! multi-view consistency.

pub mod colorize;
pub mod decompose;
pub mod error;
pub mod imaging;
pub mod loss;
pub mod metrics;
pub mod optimize;
pub mod pipeline;
pub mod plot;
pub mod rasterizer;
pub mod scene;
pub mod sh;
pub mod synth;

pub use error::{Error, Result};
pub use imaging::{Layout, PixelMask, PlanarImage};
pub use rasterizer::{ProjectedSplat, VisibilitySet};
pub use scene::{Camera, GaussianSplat, Scene, SceneBundle};
pub use synth::SynthSpec;
pub use colorize::{ReferenceColorizer, SingleColorizer, View};
pub use decompose::Decomposition;
pub use metrics::MetricsReport;
pub use pipeline::{PipelineConfig, RunManifest};
