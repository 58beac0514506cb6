//! Diversity and consistency metrics for colorized view sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{rgb_to_lab, srgb_to_lab_pixel, Layout, PixelMask, PlanarImage};

pub const CDI_BINS_PER_CHANNEL: usize = 8;
pub const CDI_THRESHOLD: u64 = 100;
pub const HUE_BINS: usize = 360;
pub const HUE_MIN_SATURATION: f64 = 0.05;
pub const PSNR_CAP_DB: f64 = 100.0;

fn to_byte(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u32
}

/// Pooled RGB bin counts over all images, `bins³` entries.
pub fn rgb_bin_counts(images: &[PlanarImage], bins_per_channel: usize) -> Result<Vec<u64>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    if bins_per_channel == 0 || 256 % bins_per_channel != 0 {
        return Err(Error::InvalidArgument(format!("{bins_per_channel} bins do not divide 256")));
    }
    let width = 256 / bins_per_channel as u32;
    let b = bins_per_channel;
    let mut counts = vec![0u64; b * b * b];
    for img in images {
        img.expect_layout(Layout::Rgb3)?;
        for p in img.pixels() {
            let idx: Vec<usize> = p.iter().map(|&v| (to_byte(v) / width) as usize).collect();
            counts[(idx[0] * b + idx[1]) * b + idx[2]] += 1;
        }
    }
    Ok(counts)
}

/// Color diversity index: fraction of RGB bins whose pooled pixel count
/// strictly exceeds `threshold`.
pub fn cdi(images: &[PlanarImage], bins_per_channel: usize, threshold: u64) -> Result<f64> {
    let counts = rgb_bin_counts(images, bins_per_channel)?;
    Ok(counts.iter().filter(|&&c| c > threshold).count() as f64 / counts.len() as f64)
}

pub fn cdi_default(images: &[PlanarImage]) -> Result<f64> {
    cdi(images, CDI_BINS_PER_CHANNEL, CDI_THRESHOLD)
}

fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| plane[yy * w + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn mapped_ab(lab: &PlanarImage) -> [Vec<f64>; 2] {
    let map = |c: usize| lab.plane(c).into_iter().map(|x| (x + 128.0) / 255.0).collect();
    [map(1), map(2)]
}

/// Sum and count of the per-pixel ab error for one frame pair.
fn pair_error(a: &PlanarImage, b: &PlanarImage, flow: &PlanarImage, mask: &PixelMask) -> Result<(f64, usize)> {
    a.expect_layout(Layout::Rgb3)?;
    a.same_shape(b)?;
    flow.expect_layout(Layout::Flow2)?;
    let (w, h) = (a.width(), a.height());
    if flow.width() != w || flow.height() != h || !mask.matches(a) {
        return Err(Error::Dimension(format!(
            "flow {}x{} / mask {}x{} for {w}x{h} frames",
            flow.width(),
            flow.height(),
            mask.width(),
            mask.height()
        )));
    }
    let [a_a, a_b] = mapped_ab(&rgb_to_lab(a)?);
    let [b_a, b_b] = mapped_ab(&rgb_to_lab(b)?);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let f = flow.pixel(x, y);
            let (sx, sy) = (x as f64 + f[0], y as f64 + f[1]);
            let i = y * w + x;
            let da = bilinear(&b_a, w, h, sx, sy) - a_a[i];
            let db = bilinear(&b_b, w, h, sx, sy) - a_b[i];
            sum += 0.5 * (da * da + db * db);
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean squared ab error between each frame `t` and frame `t + delta`
/// warped back along `flows[t]`, over all valid pixels of all pairs.
pub fn warped_consistency(frames: &[PlanarImage], flows: &[(PlanarImage, PixelMask)], delta: usize) -> Result<f64> {
    if delta == 0 {
        return Err(Error::InvalidArgument("delta must be at least 1".into()));
    }
    if frames.len() < delta + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} frames are too few for delta {delta}",
            frames.len()
        )));
    }
    let pairs = frames.len() - delta;
    if flows.len() != pairs {
        return Err(Error::Dimension(format!("expected {pairs} flows, got {}", flows.len())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (t, (flow, mask)) in flows.iter().enumerate() {
        let (s, c) = pair_error(&frames[t], &frames[t + delta], flow, mask)?;
        sum += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Opponent-channel colorfulness on the 0–255 scale.
pub fn colorfulness(img: &PlanarImage) -> Result<f64> {
    img.expect_layout(Layout::Rgb3)?;
    let mut rg = Vec::with_capacity(img.pixel_count());
    let mut yb = Vec::with_capacity(img.pixel_count());
    for p in img.pixels() {
        let (r, g, b) = (p[0] * 255.0, p[1] * 255.0, p[2] * 255.0);
        rg.push(r - g);
        yb.push(0.5 * (r + g) - b);
    }
    let (m_rg, s_rg) = mean_std(&rg);
    let (m_yb, s_yb) = mean_std(&yb);
    Ok(s_rg.hypot(s_yb) + 0.3 * m_rg.hypot(m_yb))
}

pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    })
}

/// HSV hue in degrees and saturation of an RGB triple in `[0, 1]`.
pub fn hue_saturation(rgb: [f64; 3]) -> (f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let sat = if max > 0.0 { d / max } else { 0.0 };
    if d == 0.0 {
        return (0.0, sat);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h * 60.0, sat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueHistogram {
    pub counts: Vec<u64>,
    /// `sqrt(count)` scaled so the largest bin is 1; all zeros when no
    /// pixel carries chroma.
    pub weights: Vec<f64>,
}

impl HueHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            s.push_str(&format!("{i},{w}\n"));
        }
        s
    }
}

pub fn hue_histogram(images: &[PlanarImage]) -> Result<HueHistogram> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let mut counts = vec![0u64; HUE_BINS];
    for img in images {
        img.expect_layout(Layout::Rgb3)?;
        for p in img.pixels() {
            let (hue, sat) = hue_saturation([p[0], p[1], p[2]]);
            if sat > HUE_MIN_SATURATION {
                counts[(hue.floor() as usize) % HUE_BINS] += 1;
            }
        }
    }
    let peak = counts.iter().copied().max().unwrap_or(0);
    let weights = counts
        .iter()
        .map(|&c| if peak == 0 { 0.0 } else { (c as f64).sqrt() / (peak as f64).sqrt() })
        .collect();
    Ok(HueHistogram { counts, weights })
}

/// Mean `(a, b)` of an RGB image.
pub fn mean_chroma(img: &PlanarImage) -> Result<[f64; 2]> {
    img.expect_layout(Layout::Rgb3)?;
    let (mut a, mut b) = (0.0, 0.0);
    for p in img.pixels() {
        let lab = srgb_to_lab_pixel([p[0], p[1], p[2]]);
        a += lab[1];
        b += lab[2];
    }
    let n = img.pixel_count() as f64;
    Ok([a / n, b / n])
}

/// Standard deviation of per-image mean chroma: root mean squared distance
/// of each image's mean `(a, b)` from their centroid.
pub fn mean_chroma_spread(images: &[PlanarImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let means = images.iter().map(mean_chroma).collect::<Result<Vec<_>>>()?;
    let n = means.len() as f64;
    let ca = means.iter().map(|m| m[0]).sum::<f64>() / n;
    let cb = means.iter().map(|m| m[1]).sum::<f64>() / n;
    Ok((means.iter().map(|m| (m[0] - ca).powi(2) + (m[1] - cb).powi(2)).sum::<f64>() / n).sqrt())
}

/// Metrics of the ground-truth renders, kept next to the run's own values
/// for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub cdi: f64,
    pub short_consistency: f64,
    pub long_consistency: f64,
    pub colorfulness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cdi: f64,
    pub short_consistency: f64,
    pub long_consistency: f64,
    /// Mean over the evaluated images.
    pub colorfulness: f64,
    pub psnr_db: Option<f64>,
    pub hue_histogram: HueHistogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<ReferenceMetrics>,
}

pub fn mean_colorfulness(images: &[PlanarImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    Ok(images.iter().map(colorfulness).sum::<Result<f64>>()? / images.len() as f64)
}

/// Mean PSNR over paired image lists.
pub fn mean_psnr(a: &[PlanarImage], b: &[PlanarImage]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} images", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| psnr(x, y)).sum::<Result<f64>>()? / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::lab_to_srgb_pixel;
    use proptest::prelude::*;

    fn bin_center(i: usize) -> f64 {
        (i * 32 + 16) as f64 / 255.0
    }

    fn per_bin_image(per_bin: usize) -> PlanarImage {
        let mut data = Vec::new();
        for r in 0..8 {
            for g in 0..8 {
                for b in 0..8 {
                    for _ in 0..per_bin {
                        data.extend([bin_center(r), bin_center(g), bin_center(b)]);
                    }
                }
            }
        }
        PlanarImage::new(512, per_bin, Layout::Rgb3, data).unwrap()
    }

    #[test]
    fn cdi_unit_values() {
        let flat = PlanarImage::filled(256, 256, Layout::Rgb3, &[0.3, 0.6, 0.9]);
        assert_eq!(cdi_default(&[flat]).unwrap(), 1.0 / 512.0);
        assert_eq!(cdi_default(&[per_bin_image(100)]).unwrap(), 0.0);
        assert_eq!(cdi_default(&[per_bin_image(101)]).unwrap(), 1.0);
        assert!(cdi_default(&[]).is_err());
    }

    #[test]
    fn cdi_edges_of_byte_bins() {
        let img = PlanarImage::new(3, 1, Layout::Rgb3, vec![1.0, 1.0, 1.0, 31.0 / 255.0, 0.0, 0.0, 32.0 / 255.0, 0.0, 0.0]).unwrap();
        let c = rgb_bin_counts(&[img], 8).unwrap();
        assert_eq!(c[511], 1);
        assert_eq!(c[0], 1);
        assert_eq!(c[64], 1);
    }

    fn lab_image(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> PlanarImage {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).flat_map(|(x, y)| lab_to_srgb_pixel(f(x, y))).collect();
        PlanarImage::new(w, h, Layout::Rgb3, data).unwrap()
    }

    fn still(w: usize, h: usize) -> (PlanarImage, PixelMask) {
        (PlanarImage::zeros(w, h, Layout::Flow2), PixelMask::full(w, h, true))
    }

    #[test]
    fn identical_frames_are_consistent() {
        let f = lab_image(8, 8, |x, y| [50.0, x as f64 * 3.0, -(y as f64) * 2.0]);
        let v = warped_consistency(&[f.clone(), f], &[still(8, 8)], 1).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn uniform_offset_closed_form() {
        // Mid-lightness chromas stay inside the sRGB gamut after the offset.
        let a = lab_image(8, 8, |_, _| [60.0, 5.0, 5.0]);
        let b = lab_image(8, 8, |_, _| [60.0, 15.0, 15.0]);
        let v = warped_consistency(&[a, b], &[still(8, 8)], 1).unwrap();
        assert!((v - (10.0f64 / 255.0).powi(2)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn all_invalid_masks_error() {
        let f = PlanarImage::zeros(4, 4, Layout::Rgb3);
        let flow = (PlanarImage::zeros(4, 4, Layout::Flow2), PixelMask::full(4, 4, false));
        assert!(matches!(warped_consistency(&[f.clone(), f], &[flow], 1), Err(Error::NoValidPixels)));
    }

    #[test]
    fn consistency_argument_errors() {
        let f = PlanarImage::zeros(4, 4, Layout::Rgb3);
        assert!(warped_consistency(&[f.clone(), f.clone()], &[still(4, 4)], 2).is_err());
        assert!(warped_consistency(&[f.clone(), f], &[still(5, 4)], 1).is_err());
    }

    #[test]
    fn warping_follows_the_flow() {
        // Frame b is frame a shifted right by 2 pixels.
        let pattern = |x: usize| [55.0, (x as f64 * 1.7).sin() * 20.0, 10.0];
        let a = lab_image(12, 4, |x, _| pattern(x));
        let b = lab_image(12, 4, |x, _| pattern(x.saturating_sub(2)));
        let flow = PlanarImage::filled(12, 4, Layout::Flow2, &[2.0, 0.0]);
        let mut mask = PixelMask::full(12, 4, true);
        for y in 0..4 {
            for x in 10..12 {
                mask.set(x, y, false);
            }
        }
        let v = warped_consistency(&[a, b], &[(flow, mask)], 1).unwrap();
        assert!(v < 1e-20, "{v}");
    }

    #[test]
    fn colorfulness_examples() {
        assert_eq!(colorfulness(&PlanarImage::filled(4, 4, Layout::Rgb3, &[0.4, 0.4, 0.4])).unwrap(), 0.0);
        let red = colorfulness(&PlanarImage::filled(4, 4, Layout::Rgb3, &[1.0, 0.0, 0.0])).unwrap();
        assert!((red - 0.3 * 255f64.hypot(127.5)).abs() < 1e-9);
        assert!((red - 85.53).abs() < 0.01);
        assert!(colorfulness(&PlanarImage::zeros(2, 2, Layout::Luminance1)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = PlanarImage::filled(4, 4, Layout::Rgb3, &[0.2, 0.5, 0.7]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = PlanarImage::filled(4, 4, Layout::Rgb3, &[0.3, 0.6, 0.8]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &PlanarImage::zeros(3, 4, Layout::Rgb3)).is_err());
    }

    #[test]
    fn hue_histogram_examples() {
        let red = PlanarImage::filled(4, 4, Layout::Rgb3, &[1.0, 0.0, 0.0]);
        let h = hue_histogram(&[red]).unwrap();
        assert_eq!(h.weights.len(), 360);
        assert_eq!(h.weights[0], 1.0);
        assert_eq!(h.weights.iter().filter(|&&w| w > 0.0).count(), 1);

        let gray = PlanarImage::filled(4, 4, Layout::Rgb3, &[0.5, 0.5, 0.5]);
        assert!(hue_histogram(&[gray]).unwrap().weights.iter().all(|&w| w == 0.0));

        let data = (0..16).flat_map(|i| if i < 12 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }).collect();
        let two = PlanarImage::new(4, 4, Layout::Rgb3, data).unwrap();
        let h = hue_histogram(&[two]).unwrap();
        assert_eq!((h.counts[0], h.counts[120]), (12, 4));
        assert!((h.weights[0] / h.weights[120] - 3f64.sqrt()).abs() < 1e-12);
        assert!(hue_histogram(&[]).is_err());
        assert!(h.to_csv().lines().count() == 361);
    }

    #[test]
    fn chroma_spread_of_identical_images_is_zero() {
        let img = lab_image(3, 3, |_, _| [50.0, 10.0, -4.0]);
        assert!(mean_chroma_spread(&[img.clone(), img]).unwrap() < 1e-12);
    }

    fn rgb_image() -> impl Strategy<Value = PlanarImage> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h * 3)
                .prop_map(move |d| PlanarImage::new(w, h, Layout::Rgb3, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn cdi_monotone_and_bounded(a in rgb_image(), b in rgb_image()) {
            let one = cdi(&[a.clone()], 8, 0).unwrap();
            let two = cdi(&[a.clone(), b.clone()], 8, 0).unwrap();
            prop_assert!(two >= one);
            prop_assert!((0.0..=1.0).contains(&two));
            let pixels = (a.pixel_count() + b.pixel_count()) as f64;
            prop_assert!(two <= pixels / 512.0);
        }

        #[test]
        fn colorfulness_ignores_pixel_order(img in rgb_image()) {
            let mut px: Vec<[f64; 3]> = img.pixels().map(|p| [p[0], p[1], p[2]]).collect();
            px.reverse();
            let rev = PlanarImage::new(img.width(), img.height(), Layout::Rgb3, px.concat()).unwrap();
            prop_assert!((colorfulness(&img).unwrap() - colorfulness(&rev).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn psnr_symmetric((a, b) in (1usize..5, 1usize..5).prop_flat_map(|(w, h)| {
            let v = proptest::collection::vec(0.0f64..=1.0, w * h * 3);
            (v.clone(), v).prop_map(move |(x, y)| (
                PlanarImage::new(w, h, Layout::Rgb3, x).unwrap(),
                PlanarImage::new(w, h, Layout::Rgb3, y).unwrap()))
        })) {
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        }
    }
}
