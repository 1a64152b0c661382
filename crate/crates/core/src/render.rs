//! Concept heatmaps and the figures built from them.
//!
//! A concept's per-position scores for one image form an `h × w` map. It is
//! upsampled to the image size with corner-aligned bilinear interpolation
//! and min-max normalized into `[0, 1]`. Pixels above a threshold form the
//! concept's mask.

use std::cmp::Ordering;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{LocalExplanation, PrototypeSet};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const BLEND_ALPHA: f64 = 0.4;
/// Side of the neutral canvas used when no source image is supplied.
pub const DEFAULT_CANVAS: u32 = 224;

pub const EXPLANATION_FILE: &str = "explanation.json";
pub const CHART_FILE: &str = "chart.png";

/// Normalized concept map at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `H × W`, every entry in `[0, 1]`.
    pub values: Array2<f64>,
    pub source_concept: usize,
    pub source_image: usize,
}

impl Heatmap {
    pub fn with_source(mut self, concept: usize, image: usize) -> Self {
        self.source_concept = concept;
        self.source_image = image;
        self
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Range used for min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeatmapScale {
    /// Each map is scaled by its own extremes.
    #[default]
    PerImage,
    /// A shared range, e.g. the extremes of a concept over a dataset. Values
    /// outside it are clamped.
    Fixed { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlayMode {
    /// Pixels outside the mask at half brightness, masked pixels untouched.
    HighlightMask,
    /// A color ramp alpha-composited over the whole image.
    HeatBlend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: RgbImage,
    pub mode: OverlayMode,
    pub threshold: f64,
}

/// Corner-aligned bilinear resampling: output corners coincide with input
/// corners.
pub fn upsample_bilinear(src: ArrayView2<'_, f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = src.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty score map".into()));
    }
    if out_h < h || out_w < w {
        return Err(Error::InvalidArgument(format!(
            "output {out_h}×{out_w} smaller than map {h}×{w}"
        )));
    }
    let coord = |i: usize, out: usize, len: usize| -> (usize, usize, f64) {
        if out == 1 || len == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (len - 1) as f64 / (out - 1) as f64;
        let lo = (x.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, x - lo as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|i| coord(i, out_h, h)).collect();
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, out_w, w)).collect();
    Ok(Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (r0, r1, fy) = rows[i];
        let (c0, c1, fx) = cols[j];
        let top = lerp(src[[r0, c0]], src[[r0, c1]], fx);
        let bottom = lerp(src[[r1, c0]], src[[r1, c1]], fx);
        lerp(top, bottom, fy)
    }))
}

/// Exact at both ends and for `a == b`, so constant maps stay constant.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Maps `[min, max]` onto `[0, 1]`. A zero-width range gives all zeros.
pub fn normalize_min_max(values: &Array2<f64>, scale: HeatmapScale) -> Array2<f64> {
    let (lo, hi) = match scale {
        HeatmapScale::PerImage => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            }),
        HeatmapScale::Fixed { min, max } => (min, max),
    };
    if hi.partial_cmp(&lo) != Some(Ordering::Greater) {
        return Array2::zeros(values.raw_dim());
    }
    let span = hi - lo;
    values.mapv(|x| ((x - lo) / span).clamp(0.0, 1.0))
}

/// Per-image normalized heatmap of an `h × w` score map.
pub fn concept_heatmap(s_img: ArrayView2<'_, f64>, out_h: usize, out_w: usize) -> Result<Heatmap> {
    concept_heatmap_scaled(s_img, out_h, out_w, HeatmapScale::PerImage)
}

pub fn concept_heatmap_scaled(
    s_img: ArrayView2<'_, f64>,
    out_h: usize,
    out_w: usize,
    scale: HeatmapScale,
) -> Result<Heatmap> {
    let up = upsample_bilinear(s_img, out_h, out_w)?;
    Ok(Heatmap {
        values: normalize_min_max(&up, scale),
        source_concept: 0,
        source_image: 0,
    })
}

/// `true` where the heatmap strictly exceeds `threshold`.
pub fn threshold_mask(hm: &Heatmap, threshold: f64) -> Result<Array2<bool>> {
    check_threshold(threshold)?;
    Ok(hm.values.mapv(|v| v > threshold))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Scores of one concept for one image as an `h × w` map, from the
/// `(n·h·w) × c′` position scores.
pub fn score_map(
    position_scores: &Array2<f64>,
    h: usize,
    w: usize,
    image: usize,
    concept: usize,
) -> Result<Array2<f64>> {
    let block = h * w;
    if block == 0 || !position_scores.nrows().is_multiple_of(block) {
        return Err(Error::Shape(format!(
            "{} score rows do not split into {h}×{w} maps",
            position_scores.nrows()
        )));
    }
    let n = position_scores.nrows() / block;
    if image >= n || concept >= position_scores.ncols() {
        return Err(Error::InvalidArgument(format!(
            "image {image} / concept {concept} out of range for {n} images, {} concepts",
            position_scores.ncols()
        )));
    }
    let start = image * block;
    Ok(Array2::from_shape_fn((h, w), |(j, k)| {
        position_scores[[start + j * w + k, concept]]
    }))
}

/// Blue, cyan, green, yellow, red as `v` goes from 0 to 1.
pub fn color_ramp(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let x = v.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let t = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)]
}

pub fn overlay(image: &RgbImage, hm: &Heatmap, mode: OverlayMode, threshold: f64) -> Result<Overlay> {
    check_threshold(threshold)?;
    let (w, h) = image.dimensions();
    if hm.height() != h as usize || hm.width() != w as usize {
        return Err(Error::Shape(format!(
            "heatmap {}×{} does not match image {h}×{w}",
            hm.height(),
            hm.width()
        )));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = hm.values[[y as usize, x as usize]];
        match mode {
            OverlayMode::HighlightMask => {
                if v.partial_cmp(&threshold) != Some(Ordering::Greater) {
                    px.0 = px.0.map(|c| c / 2);
                }
            }
            OverlayMode::HeatBlend => {
                let ramp = color_ramp(v);
                for (c, r) in px.0.iter_mut().zip(ramp) {
                    let blended = (1.0 - BLEND_ALPHA) * f64::from(*c) + BLEND_ALPHA * r;
                    *c = blended.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok(Overlay {
        image: out,
        mode,
        threshold,
    })
}

/// Uniform mid-gray stand-in for a missing source image.
pub fn blank_canvas(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([128, 128, 128]))
}

/// A source image and its `h × w` score map for one concept.
#[derive(Debug, Clone)]
pub struct ScoredImage {
    pub image_index: usize,
    pub image: RgbImage,
    pub score_map: Array2<f64>,
}

/// Prototypes of one concept with the assets needed to draw them, in the
/// order of `set.image_indices`.
#[derive(Debug, Clone)]
pub struct ConceptPrototypes {
    pub set: PrototypeSet,
    pub images: Vec<ScoredImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub threshold: f64,
    pub prototype_mode: OverlayMode,
    pub instance_mode: OverlayMode,
    pub scale: HeatmapScale,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            prototype_mode: OverlayMode::HighlightMask,
            instance_mode: OverlayMode::HeatBlend,
            scale: HeatmapScale::PerImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub index: usize,
    pub score: f64,
    pub weight: f64,
    pub contribution: f64,
    pub prototype_files: Vec<String>,
    pub instance_overlay: String,
}

/// Contents of `explanation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub class: usize,
    pub class_name: String,
    pub exact_score: f64,
    pub approx_score: f64,
    pub bias: f64,
    pub residual: f64,
    pub concepts: Vec<ConceptEntry>,
    pub chart: String,
}

/// Paths written by [`render_explanation`], relative names in the document.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFiles {
    pub explanation: PathBuf,
    pub chart: PathBuf,
    pub instance_overlays: Vec<PathBuf>,
    pub prototype_overlays: Vec<PathBuf>,
}

impl RenderedFiles {
    pub fn count(&self) -> usize {
        2 + self.instance_overlays.len() + self.prototype_overlays.len()
    }
}

pub fn instance_file_name(concept: usize) -> String {
    format!("instance_c{concept:02}.png")
}

pub fn prototype_file_name(concept: usize, rank: usize, image_index: usize) -> String {
    format!("prototype_c{concept:02}_r{rank}_img{image_index}.png")
}

/// Writes the full explanation figure set for one image into `out_dir`:
/// a prototype overlay per prototype, an instance overlay per concept, the
/// contribution chart and `explanation.json`.
pub fn render_explanation(
    local: &LocalExplanation,
    instance: &RgbImage,
    instance_maps: &[Array2<f64>],
    prototypes: &[ConceptPrototypes],
    out_dir: impl AsRef<Path>,
    options: &RenderOptions,
) -> Result<RenderedFiles> {
    let out_dir = out_dir.as_ref();
    let n_concepts = local.concept_scores.len();
    if instance_maps.len() != n_concepts || prototypes.len() != n_concepts {
        return Err(Error::Shape(format!(
            "{n_concepts} concepts but {} instance maps and {} prototype sets",
            instance_maps.len(),
            prototypes.len()
        )));
    }
    check_threshold(options.threshold)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (iw, ih) = instance.dimensions();
    let instance_names: Vec<String> = (0..n_concepts).map(instance_file_name).collect();
    instance_maps
        .par_iter()
        .enumerate()
        .map(|(j, map)| {
            let hm = concept_heatmap_scaled(map.view(), ih as usize, iw as usize, options.scale)?
                .with_source(j, 0);
            let ov = overlay(instance, &hm, options.instance_mode, options.threshold)?;
            write_png(&ov.image, &out_dir.join(&instance_names[j]))
        })
        .collect::<Result<()>>()?;

    let mut jobs = Vec::new();
    let mut prototype_names = Vec::with_capacity(n_concepts);
    for (j, proto) in prototypes.iter().enumerate() {
        if proto.set.image_indices.len() != proto.images.len() {
            return Err(Error::Shape(format!(
                "concept {j} lists {} prototypes but has {} images",
                proto.set.image_indices.len(),
                proto.images.len()
            )));
        }
        let mut names = Vec::with_capacity(proto.images.len());
        for (rank, scored) in proto.images.iter().enumerate() {
            let name = prototype_file_name(j, rank, scored.image_index);
            jobs.push((j, scored, name.clone()));
            names.push(name);
        }
        prototype_names.push(names);
    }
    jobs.par_iter()
        .map(|(j, scored, name)| {
            let (w, h) = scored.image.dimensions();
            let hm = concept_heatmap_scaled(scored.score_map.view(), h as usize, w as usize, options.scale)?
                .with_source(*j, scored.image_index);
            let ov = overlay(&scored.image, &hm, options.prototype_mode, options.threshold)?;
            write_png(&ov.image, &out_dir.join(name))
        })
        .collect::<Result<()>>()?;

    write_png(&contribution_chart(local), &out_dir.join(CHART_FILE))?;

    let document = ExplanationDocument {
        class: local.class_index,
        class_name: local.class_name.clone(),
        exact_score: local.exact_score,
        approx_score: local.approx_score,
        bias: local.bias_term,
        residual: local.residual_term,
        concepts: (0..n_concepts)
            .map(|j| ConceptEntry {
                index: j,
                score: local.concept_scores[j],
                weight: local.concept_weights[j],
                contribution: local.contributions[j],
                prototype_files: prototype_names[j].clone(),
                instance_overlay: instance_names[j].clone(),
            })
            .collect(),
        chart: CHART_FILE.to_string(),
    };
    let json = serde_json::to_string_pretty(&document)?;
    write_atomic(&out_dir.join(EXPLANATION_FILE), json.as_bytes())?;

    Ok(RenderedFiles {
        explanation: out_dir.join(EXPLANATION_FILE),
        chart: out_dir.join(CHART_FILE),
        instance_overlays: instance_names.iter().map(|n| out_dir.join(n)).collect(),
        prototype_overlays: prototype_names.iter().flatten().map(|n| out_dir.join(n)).collect(),
    })
}

/// Writes each prototype of each concept as a highlight overlay. Returns the
/// file paths per concept.
pub fn render_prototypes(
    prototypes: &[ConceptPrototypes],
    out_dir: impl AsRef<Path>,
    options: &RenderOptions,
) -> Result<Vec<Vec<PathBuf>>> {
    let out_dir = out_dir.as_ref();
    check_threshold(options.threshold)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    prototypes
        .par_iter()
        .map(|proto| {
            let j = proto.set.concept_index;
            proto
                .images
                .iter()
                .enumerate()
                .map(|(rank, scored)| {
                    let (w, h) = scored.image.dimensions();
                    let hm = concept_heatmap_scaled(
                        scored.score_map.view(),
                        h as usize,
                        w as usize,
                        options.scale,
                    )?
                    .with_source(j, scored.image_index);
                    let ov = overlay(&scored.image, &hm, options.prototype_mode, options.threshold)?;
                    let path = out_dir.join(prototype_file_name(j, rank, scored.image_index));
                    write_png(&ov.image, &path)?;
                    Ok(path)
                })
                .collect()
        })
        .collect()
}

/// Horizontal bars, one per concept contribution followed by the residual
/// and the bias. Positive values extend right of the axis in green, negative
/// ones left in red; residual and bias are gray.
pub fn contribution_chart(local: &LocalExplanation) -> RgbImage {
    const WIDTH: u32 = 480;
    const BAR: u32 = 16;
    const GAP: u32 = 6;
    const MARGIN: u32 = 10;

    let mut values: Vec<(f64, bool)> = local.contributions.iter().map(|&c| (c, true)).collect();
    values.push((local.residual_term, false));
    values.push((local.bias_term, false));

    let rows = values.len() as u32;
    let height = 2 * MARGIN + rows * BAR + rows.saturating_sub(1) * GAP;
    let mut img = RgbImage::from_pixel(WIDTH, height, Rgb([255, 255, 255]));
    let axis = WIDTH / 2;
    let half = f64::from(axis - MARGIN);
    let peak = values.iter().map(|(v, _)| v.abs()).fold(0.0, f64::max);

    for (r, &(v, concept)) in values.iter().enumerate() {
        let len = if peak > 0.0 {
            (v.abs() / peak * half).round() as u32
        } else {
            0
        };
        let (x0, x1) = if v >= 0.0 {
            (axis, axis + len)
        } else {
            (axis - len, axis)
        };
        let color = match (concept, v >= 0.0) {
            (false, _) => Rgb([150, 150, 150]),
            (true, true) => Rgb([46, 139, 87]),
            (true, false) => Rgb([200, 50, 50]),
        };
        let y0 = MARGIN + r as u32 * (BAR + GAP);
        for y in y0..y0 + BAR {
            for x in x0..x1 {
                img.put_pixel(x, y, color);
            }
        }
    }
    for y in 0..height {
        img.put_pixel(axis, y, Rgb([0, 0, 0]));
    }
    img
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_png(image: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(image)?)
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn heatmap(values: Array2<f64>) -> Heatmap {
        Heatmap {
            values,
            source_concept: 0,
            source_image: 0,
        }
    }

    #[test]
    fn constant_and_single_pixel_maps_zero_out() {
        let hm = concept_heatmap(Array2::from_elem((3, 4), 2.5).view(), 6, 8).unwrap();
        assert!(hm.values.iter().all(|&v| v == 0.0));
        let hm = concept_heatmap(array![[7.0]].view(), 5, 5).unwrap();
        assert_eq!(hm.values.dim(), (5, 5));
        assert!(hm.values.iter().all(|&v| v == 0.0));
        assert!(threshold_mask(&hm, 0.5).unwrap().iter().all(|&m| !m));
    }

    #[test]
    fn bilinear_two_by_two() {
        // corner-aligned: output positions 0, 1/3, 2/3, 1 along each axis
        let src = array![[0.0, 3.0], [6.0, 9.0]];
        let up = upsample_bilinear(src.view(), 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = 6.0 * (i as f64 / 3.0) + 3.0 * (j as f64 / 3.0);
                assert!((up[[i, j]] - expected).abs() < 1e-12, "{i},{j}");
            }
        }
        let hm = concept_heatmap(src.view(), 4, 4).unwrap();
        assert_eq!(hm.values[[0, 0]], 0.0);
        assert_eq!(hm.values[[3, 3]], 1.0);
    }

    #[test]
    fn upsample_preconditions() {
        let src = Array2::<f64>::zeros((0, 3));
        assert!(upsample_bilinear(src.view(), 4, 4).is_err());
        assert!(upsample_bilinear(Array2::zeros((4, 4)).view(), 3, 8).is_err());
    }

    #[test]
    fn threshold_examples() {
        let hm = heatmap(array![[0.2, 0.6]]);
        assert_eq!(threshold_mask(&hm, 0.5).unwrap(), array![[false, true]]);
        let ones = heatmap(Array2::ones((2, 2)));
        assert!(threshold_mask(&ones, 0.5).unwrap().iter().all(|&m| m));
        let edge = heatmap(array![[0.5]]);
        assert_eq!(threshold_mask(&edge, 0.5).unwrap(), array![[false]]);
        assert!(threshold_mask(&hm, 1.5).is_err());
        assert!(threshold_mask(&hm, -0.1).is_err());
    }

    #[test]
    fn fixed_scale_clamps() {
        let v = array![[-1.0, 0.0, 5.0, 20.0]];
        let n = normalize_min_max(&v, HeatmapScale::Fixed { min: 0.0, max: 10.0 });
        assert_eq!(n, array![[0.0, 0.0, 0.5, 1.0]]);
    }

    #[test]
    fn highlight_overlay_examples() {
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([10 * x as u8 + 1, 20 * y as u8 + 3, 201]));
        let all = overlay(&img, &heatmap(Array2::ones((2, 3))), OverlayMode::HighlightMask, 0.5).unwrap();
        assert_eq!(all.image, img);
        let none =
            overlay(&img, &heatmap(Array2::zeros((2, 3))), OverlayMode::HighlightMask, 0.5).unwrap();
        for (a, b) in none.image.pixels().zip(img.pixels()) {
            assert_eq!(a.0, b.0.map(|c| c / 2));
        }
        assert!(overlay(&img, &heatmap(Array2::ones((3, 3))), OverlayMode::HeatBlend, 0.5).is_err());
    }

    #[test]
    fn heat_blend_extremes() {
        let img = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let ov = overlay(&img, &heatmap(array![[0.0, 1.0]]), OverlayMode::HeatBlend, 0.5).unwrap();
        // 0.6·100 + 0.4·255 = 162
        assert_eq!(ov.image.get_pixel(0, 0).0, [60, 60, 162]);
        assert_eq!(ov.image.get_pixel(1, 0).0, [162, 60, 60]);
    }

    #[test]
    fn score_map_layout() {
        // 2 images of 2×3 positions, 2 concepts; value encodes the row index
        let s = Array2::from_shape_fn((12, 2), |(r, c)| (r * 10 + c) as f64);
        let m = score_map(&s, 2, 3, 1, 1).unwrap();
        assert_eq!(m, array![[61.0, 71.0, 81.0], [91.0, 101.0, 111.0]]);
        assert!(score_map(&s, 2, 3, 2, 0).is_err());
        assert!(score_map(&s, 5, 1, 0, 0).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        write_atomic(&path, b"abc").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"abc");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
