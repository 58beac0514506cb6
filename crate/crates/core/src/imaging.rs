//! Planar float images, sRGB/CIELAB conversion and PNG/PFM file I/O.
//!
//! Samples are stored as `f64`, interleaved per pixel, rows top to bottom.
//! Luminance and RGB samples live in `[0, 1]`; 8-bit quantization only
//! happens at the PNG boundary.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Luminance1,
    Rgb3,
    Lab3,
    Depth1,
    Flow2,
}

impl Layout {
    pub const fn channels(self) -> usize {
        match self {
            Layout::Luminance1 | Layout::Depth1 => 1,
            Layout::Flow2 => 2,
            Layout::Rgb3 | Layout::Lab3 => 3,
        }
    }
}

/// Depth sample marking "no surface".
pub const NO_DEPTH: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    layout: Layout,
    data: Vec<f64>,
}

impl PlanarImage {
    pub fn new(width: usize, height: usize, layout: Layout, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * layout.channels();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "{width}x{height} {layout:?} needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            layout,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, layout: Layout, pixel: &[f64]) -> Self {
        assert_eq!(pixel.len(), layout.channels(), "pixel arity must match layout");
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width * height * layout.channels())
            .collect();
        Self {
            width,
            height,
            layout,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, layout: Layout) -> Self {
        Self::filled(width, height, layout, &vec![0.0; layout.channels()])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &mut self.data[i..i + c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels())
    }

    /// Extracts one channel as a single-channel plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.pixels().map(|p| p[channel]).collect()
    }

    pub fn expect_layout(&self, expected: Layout) -> Result<()> {
        if self.layout != expected {
            return Err(Error::Layout {
                expected,
                found: self.layout,
            });
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &PlanarImage) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.layout != other.layout
        {
            return Err(Error::Dimension(format!(
                "{}x{} {:?} vs {}x{} {:?}",
                self.width, self.height, self.layout, other.width, other.height, other.layout
            )));
        }
        Ok(())
    }

    /// Checks the per-layout value range invariant.
    pub fn check_range(&self) -> Result<()> {
        let bad = |i: usize, v: f64| {
            Err(Error::InvalidArgument(format!(
                "{:?} sample {i} out of range: {v}",
                self.layout
            )))
        };
        for (i, &v) in self.data.iter().enumerate() {
            let ok = match self.layout {
                Layout::Luminance1 | Layout::Rgb3 => (0.0..=1.0).contains(&v),
                Layout::Lab3 => {
                    if i % 3 == 0 {
                        (0.0..=100.0).contains(&v)
                    } else {
                        (-128.0..=127.0).contains(&v)
                    }
                }
                Layout::Depth1 => v >= 0.0 || v == NO_DEPTH,
                Layout::Flow2 => v.is_finite(),
            };
            if !ok {
                return bad(i, v);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask {width}x{height} needs {} flags, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize, valid: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![valid; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, valid: bool) {
        self.bits[y * self.width + x] = valid;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_valid(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn matches(&self, img: &PlanarImage) -> bool {
        self.width == img.width() && self.height == img.height()
    }
}

// ---------------------------------------------------------------------------
// Color conversion (sRGB, D65, IEC 61966-2-1 transfer curve)

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

struct ColorTables {
    xyz_to_srgb: Matrix3<f64>,
    white: Vector3<f64>,
}

fn tables() -> &'static ColorTables {
    static TABLES: OnceLock<ColorTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let m = Matrix3::from_fn(|r, c| SRGB_TO_XYZ[r][c]);
        // White is the image of RGB (1,1,1) so white maps to a = b = 0.
        let white = m * Vector3::new(1.0, 1.0, 1.0);
        ColorTables {
            xyz_to_srgb: m.try_inverse().expect("sRGB matrix is invertible"),
            white,
        }
    })
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

const LAB_EPS: f64 = (6.0 / 29.0) * (6.0 / 29.0) * (6.0 / 29.0);

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        t / (3.0 * (6.0 / 29.0) * (6.0 / 29.0)) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > 6.0 / 29.0 {
        t * t * t
    } else {
        3.0 * (6.0 / 29.0) * (6.0 / 29.0) * (t - 4.0 / 29.0)
    }
}

/// Converts one sRGB triple in `[0, 1]` to CIE L*a*b*.
pub fn srgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let t = tables();
    let lin = Vector3::new(
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    );
    let m = Matrix3::from_fn(|r, c| SRGB_TO_XYZ[r][c]);
    let xyz = m * lin;
    let fx = lab_f(xyz.x / t.white.x);
    let fy = lab_f(xyz.y / t.white.y);
    let fz = lab_f(xyz.z / t.white.z);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts one L*a*b* triple to sRGB, clamped to `[0, 1]`.
pub fn lab_to_srgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let t = tables();
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = Vector3::new(
        lab_f_inv(fx) * t.white.x,
        lab_f_inv(fy) * t.white.y,
        lab_f_inv(fz) * t.white.z,
    );
    let lin = t.xyz_to_srgb * xyz;
    [
        linear_to_srgb(lin.x).clamp(0.0, 1.0),
        linear_to_srgb(lin.y).clamp(0.0, 1.0),
        linear_to_srgb(lin.z).clamp(0.0, 1.0),
    ]
}

fn map_pixels(
    img: &PlanarImage,
    from: Layout,
    to: Layout,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<PlanarImage> {
    img.expect_layout(from)?;
    let data = img.pixels().flat_map(f).collect();
    PlanarImage::new(img.width(), img.height(), to, data)
}

pub fn rgb_to_lab(img: &PlanarImage) -> Result<PlanarImage> {
    map_pixels(img, Layout::Rgb3, Layout::Lab3, |p| {
        srgb_to_lab_pixel([p[0], p[1], p[2]]).to_vec()
    })
}

pub fn lab_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    map_pixels(img, Layout::Lab3, Layout::Rgb3, |p| {
        lab_to_srgb_pixel([p[0], p[1], p[2]]).to_vec()
    })
}

/// CIE lightness rescaled to `[0, 1]`.
pub fn to_grayscale(img: &PlanarImage) -> Result<PlanarImage> {
    map_pixels(img, Layout::Rgb3, Layout::Luminance1, |p| {
        vec![srgb_to_lab_pixel([p[0], p[1], p[2]])[0] / 100.0]
    })
}

/// Replicates a luminance image into three equal RGB channels.
pub fn luminance_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    map_pixels(img, Layout::Luminance1, Layout::Rgb3, |p| vec![p[0]; 3])
}

// ---------------------------------------------------------------------------
// File I/O

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn decode_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a PNG (8-bit gray or RGB, alpha dropped) or a PFM file.
///
/// Single-channel PFM files load as `Depth1`, three-channel ones as `Rgb3`.
pub fn read_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => read_png(path),
        "pfm" => {
            let pfm = read_pfm(path)?;
            let layout = if pfm.channels == 1 {
                Layout::Depth1
            } else {
                Layout::Rgb3
            };
            let data = pfm.data.iter().map(|&v| v as f64).collect();
            PlanarImage::new(pfm.width, pfm.height, layout, data)
        }
        other => Err(decode_err(path, format!("unsupported extension {other:?}"))),
    }
}

/// Writes `Luminance1`/`Rgb3` as 8-bit PNG, `Depth1`/`Rgb3` as PFM.
pub fn write_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => write_png(img, path),
        "pfm" => match img.layout() {
            Layout::Depth1 | Layout::Luminance1 | Layout::Rgb3 => {
                let data = img.data().iter().map(|&v| v as f32).collect();
                write_pfm(
                    &Pfm {
                        width: img.width(),
                        height: img.height(),
                        channels: img.channels(),
                        data,
                    },
                    path,
                )
            }
            other => Err(Error::InvalidArgument(format!(
                "{other:?} cannot be written as PFM image; use write_flow"
            ))),
        },
        other => Err(Error::InvalidArgument(format!(
            "unsupported extension {other:?}"
        ))),
    }
}

fn read_png(path: &Path) -> Result<PlanarImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let to_unit = |v: u8| v as f64 / 255.0;
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            PlanarImage::new(w, h, Layout::Luminance1, buf.into_raw().into_iter().map(to_unit).collect())
        }
        image::DynamicImage::ImageLumaA8(buf) => PlanarImage::new(
            w,
            h,
            Layout::Luminance1,
            buf.pixels().map(|p| to_unit(p.0[0])).collect(),
        ),
        image::DynamicImage::ImageRgb8(buf) => {
            PlanarImage::new(w, h, Layout::Rgb3, buf.into_raw().into_iter().map(to_unit).collect())
        }
        image::DynamicImage::ImageRgba8(buf) => PlanarImage::new(
            w,
            h,
            Layout::Rgb3,
            buf.pixels()
                .flat_map(|p| [to_unit(p.0[0]), to_unit(p.0[1]), to_unit(p.0[2])])
                .collect(),
        ),
        other => Err(decode_err(
            path,
            format!("unsupported bit depth / color type {:?}", other.color()),
        )),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(img: &PlanarImage, path: &Path) -> Result<()> {
    let color = match img.layout() {
        Layout::Luminance1 => image::ExtendedColorType::L8,
        Layout::Rgb3 => image::ExtendedColorType::Rgb8,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{other:?} cannot be written as PNG"
            )))
        }
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
    )
    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw PFM payload, rows top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes).map_err(|m| decode_err(path, m))
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<Pfm, String> {
    // Header is three whitespace-separated tokens, then exactly one whitespace byte.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format!("bad magic {t:?}")),
    };
    let width: usize = tokens[1].parse().map_err(|_| "bad width")?;
    let height: usize = tokens[2].parse().map_err(|_| "bad height")?;
    let scale: f32 = tokens[3].parse().map_err(|_| "bad scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("bad scale".into());
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = bytes.get(pos..).ok_or("truncated body")?;
    if body.len() < n * 4 {
        return Err(format!("truncated body: need {} bytes, got {}", n * 4, body.len()));
    }
    let mut data = vec![0f32; n];
    let row = width * channels;
    for (i, chunk) in body[..n * 4].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // PFM stores rows bottom to top.
        let (r, c) = (i / row, i % row);
        data[(height - 1 - r) * row + c] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm(pfm: &Pfm, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if pfm.channels != 1 && pfm.channels != 3 {
        return Err(Error::InvalidArgument("PFM holds 1 or 3 channels".into()));
    }
    let magic = if pfm.channels == 1 { "Pf" } else { "PF" };
    let mut out = Vec::with_capacity(32 + pfm.data.len() * 4);
    write!(out, "{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).expect("vec write");
    let row = pfm.width * pfm.channels;
    for r in (0..pfm.height).rev() {
        for v in &pfm.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a flow field as three-channel PFM: (dx, dy, valid ∈ {0, 1}).
pub fn write_flow(flow: &PlanarImage, mask: &PixelMask, path: impl AsRef<Path>) -> Result<()> {
    flow.expect_layout(Layout::Flow2)?;
    if !mask.matches(flow) {
        return Err(Error::Dimension("flow mask size".into()));
    }
    let data = flow
        .pixels()
        .zip(mask.bits())
        .flat_map(|(p, &m)| [p[0] as f32, p[1] as f32, if m { 1.0 } else { 0.0 }])
        .collect();
    write_pfm(
        &Pfm {
            width: flow.width(),
            height: flow.height(),
            channels: 3,
            data,
        },
        path,
    )
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<(PlanarImage, PixelMask)> {
    let path = path.as_ref();
    let pfm = read_pfm(path)?;
    if pfm.channels != 3 {
        return Err(decode_err(path, "flow PFM must have 3 channels"));
    }
    let mut flow = Vec::with_capacity(pfm.width * pfm.height * 2);
    let mut bits = Vec::with_capacity(pfm.width * pfm.height);
    for p in pfm.data.chunks_exact(3) {
        flow.push(p[0] as f64);
        flow.push(p[1] as f64);
        bits.push(p[2] > 0.5);
    }
    Ok((
        PlanarImage::new(pfm.width, pfm.height, Layout::Flow2, flow)?,
        PixelMask::new(pfm.width, pfm.height, bits)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(r: f64, g: f64, b: f64) -> PlanarImage {
        PlanarImage::filled(2, 2, Layout::Rgb3, &[r, g, b])
    }

    #[test]
    fn white_and_black_to_lab() {
        let w = rgb_to_lab(&rgb(1.0, 1.0, 1.0)).unwrap();
        let p = w.pixel(0, 0);
        assert!((p[0] - 100.0).abs() < 1e-9);
        assert!(p[1].abs() < 0.01 && p[2].abs() < 0.01);
        let k = rgb_to_lab(&rgb(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(k.pixel(1, 1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn red_to_lab_matches_reference() {
        // Reference from the published CIE formulas (computed independently).
        let p = srgb_to_lab_pixel([1.0, 0.0, 0.0]);
        assert!((p[0] - 53.24).abs() < 0.1, "{p:?}");
        assert!((p[1] - 80.09).abs() < 0.1, "{p:?}");
        assert!((p[2] - 67.20).abs() < 0.1, "{p:?}");
    }

    #[test]
    fn lab_to_rgb_examples() {
        let w = lab_to_srgb_pixel([100.0, 0.0, 0.0]);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-3));
        assert_eq!(lab_to_srgb_pixel([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let r = lab_to_srgb_pixel([53.24, 80.09, 67.20]);
        assert!((r[0] - 1.0).abs() < 2e-3 && r[1].abs() < 2e-3 && r[2].abs() < 2e-3, "{r:?}");
    }

    #[test]
    fn grayscale_values() {
        let g = to_grayscale(&rgb(0.5, 0.5, 0.5)).unwrap();
        assert!((g.pixel(0, 0)[0] - 0.5338).abs() < 1e-4, "{}", g.pixel(0, 0)[0]);
        assert_eq!(to_grayscale(&rgb(0.0, 0.0, 0.0)).unwrap().pixel(0, 0)[0], 0.0);
        assert!((to_grayscale(&rgb(1.0, 1.0, 1.0)).unwrap().pixel(0, 0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let l = PlanarImage::zeros(2, 2, Layout::Luminance1);
        assert!(matches!(rgb_to_lab(&l), Err(Error::Layout { .. })));
        assert!(matches!(to_grayscale(&l), Err(Error::Layout { .. })));
        assert!(matches!(lab_to_rgb(&rgb(0.1, 0.2, 0.3)), Err(Error::Layout { .. })));
    }

    #[test]
    fn data_length_checked() {
        assert!(PlanarImage::new(2, 2, Layout::Rgb3, vec![0.0; 11]).is_err());
        assert!(PixelMask::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn random_colors_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let c = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let back = lab_to_srgb_pixel(srgb_to_lab_pixel(c));
            for k in 0..3 {
                assert!((back[k] - c[k]).abs() < 1e-4, "{c:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64 * 0.0371) % 1.0).collect();
        let img = PlanarImage::new(4, 3, Layout::Rgb3, data).unwrap();
        let path = dir.path().join("a.png");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.layout(), Layout::Rgb3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn pfm_depth_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..15)
            .map(|i| if i % 4 == 0 { NO_DEPTH } else { (i as f32 * 0.731) as f64 })
            .collect();
        let img = PlanarImage::new(5, 3, Layout::Depth1, data).unwrap();
        let path = dir.path().join("d.pfm");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn flow_round_trip_keeps_mask() {
        let dir = tempfile::tempdir().unwrap();
        let flow = PlanarImage::new(3, 2, Layout::Flow2, (0..12).map(|i| i as f64 - 5.5).collect())
            .unwrap();
        let mask = PixelMask::new(3, 2, vec![true, false, true, true, false, false]).unwrap();
        let path = dir.path().join("f.pfm");
        write_flow(&flow, &mask, &path).unwrap();
        let (f2, m2) = read_flow(&path).unwrap();
        assert_eq!(f2, flow);
        assert_eq!(m2, mask);
    }

    #[test]
    fn truncated_png_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = rgb(0.2, 0.4, 0.6);
        let path = dir.path().join("t.png");
        write_image(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Decode { .. })));
    }

    #[test]
    fn truncated_pfm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pfm");
        fs::write(&path, b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(read_image(&path), Err(Error::Decode { .. })));
    }

    proptest! {
        #[test]
        fn grayscale_is_lightness_over_100(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let img = rgb(r, g, b);
            let gray = to_grayscale(&img).unwrap();
            let lab = rgb_to_lab(&img).unwrap();
            prop_assert_eq!(gray.pixel(0, 0)[0], lab.pixel(0, 0)[0] / 100.0);
        }

        #[test]
        fn conversions_are_pure(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let a = srgb_to_lab_pixel([r, g, b]);
            let c = srgb_to_lab_pixel([r, g, b]);
            prop_assert_eq!(a.map(f64::to_bits), c.map(f64::to_bits));
            let lab = rgb_to_lab(&rgb(r, g, b)).unwrap();
            prop_assert!(lab.check_range().is_ok());
        }
    }
}
