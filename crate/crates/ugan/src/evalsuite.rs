//! Quantitative comparison of restoration methods: edge-map distance,
//! patch sharpness via the gradient difference sum, and patch intensity
//! statistics, with a report runner that tabulates them across labeled
//! output directories.
//!
//! Edge maps come from a standard Canny pipeline (luma conversion,
//! Gaussian smoothing at sigma 1.4, Sobel gradients, non-maximum
//! suppression, double-threshold hysteresis). Gradient magnitudes are
//! normalized to [0, 1], so thresholds live on that scale; the defaults
//! are low 0.1, high 0.2 and every report records the values it used.

use crate::imageio::{image_dimensions, load_image, resize_bilinear, stack_nchw, ImageTensor};
use crate::losses::gdl_sum;
use crate::{Error, Result};
use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_CANNY_LOW: f64 = 0.1;
pub const DEFAULT_CANNY_HIGH: f64 = 0.2;
/// Side length every extracted patch is resampled to.
pub const PATCH_SIZE: usize = 64;

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
const CANNY_SIGMA: f64 = 1.4;

/// How two binary edge maps are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeMetric {
    /// Euclidean norm of the map difference: sqrt(disagreeing pixels).
    #[default]
    Euclidean,
    /// Raw count of disagreeing pixels.
    PixelCount,
}

impl fmt::Display for EdgeMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeMetric::Euclidean => write!(f, "euclidean"),
            EdgeMetric::PixelCount => write!(f, "pixel-count"),
        }
    }
}

/// Canny thresholds plus the distance metric for [`edge_distance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeParams {
    pub low: f64,
    pub high: f64,
    pub metric: EdgeMetric,
}

impl Default for EdgeParams {
    fn default() -> Self {
        EdgeParams {
            low: DEFAULT_CANNY_LOW,
            high: DEFAULT_CANNY_HIGH,
            metric: EdgeMetric::default(),
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.low && self.low < self.high && self.high.is_finite()) {
            return Err(Error::Config(format!(
                "edge thresholds need 0 < low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// A labeled rectangle `(top, left, height, width)` in source pixels;
/// extraction resamples it to [`PATCH_SIZE`] square.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub label: String,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchSpec {
    pub fn new(label: impl Into<String>, top: usize, left: usize, height: usize, width: usize) -> Self {
        PatchSpec {
            label: label.into(),
            top,
            left,
            height,
            width,
        }
    }

    fn check_bounds(&self, image: &ImageTensor) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "patch {} has an empty rectangle",
                self.label
            )));
        }
        if self.top + self.height > image.height() || self.left + self.width > image.width() {
            return Err(Error::Config(format!(
                "patch {} rect ({}, {}, {}, {}) exceeds the {}x{} image",
                self.label,
                self.top,
                self.left,
                self.height,
                self.width,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Crops the rectangle and resamples it to the fixed patch size.
    pub fn extract(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let raw = self.extract_raw(image)?;
        resize_bilinear(&raw, (PATCH_SIZE, PATCH_SIZE))
    }

    /// Crops the rectangle at source resolution.
    pub fn extract_raw(&self, image: &ImageTensor) -> Result<ImageTensor> {
        self.check_bounds(image)?;
        let cropped = image
            .data()
            .slice(ndarray::s![
                self.top..self.top + self.height,
                self.left..self.left + self.width,
                ..
            ])
            .to_owned();
        ImageTensor::new(cropped)
    }
}

impl fmt::Display for PatchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{},{},{},{}",
            self.label, self.top, self.left, self.height, self.width
        )
    }
}

impl FromStr for PatchSpec {
    type Err = Error;

    /// Parses `label:top,left,height,width`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("patch `{s}` is not label:top,left,height,width"));
        let (label, rect) = s.split_once(':').ok_or_else(bad)?;
        if label.is_empty() {
            return Err(bad());
        }
        let nums: Vec<usize> = rect
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if nums.len() != 4 {
            return Err(bad());
        }
        Ok(PatchSpec::new(label, nums[0], nums[1], nums[2], nums[3]))
    }
}

fn luma01(image: &ImageTensor) -> Array2<f64> {
    let d = image.data();
    let (h, w, _) = d.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut y = 0.0;
        for (c, wt) in LUMA_WEIGHTS.iter().enumerate() {
            y += wt * (d[[i, j, c]] + 1.0) / 2.0;
        }
        y
    })
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn gaussian_smooth(x: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let mut rows = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, wt) in k.iter().enumerate() {
                acc += wt * x[[i, reflect(j as isize + t as isize - radius, w)]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, wt) in k.iter().enumerate() {
                acc += wt * rows[[reflect(i as isize + t as isize - radius, h), j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn sobel(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = x.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let p = |di: isize, dj: isize| {
                x[[reflect(i as isize + di, h), reflect(j as isize + dj, w)]]
            };
            gx[[i, j]] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gy[[i, j]] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        }
    }
    (gx, gy)
}

/// Binary edge map of an image via the Canny pipeline. Thresholds apply
/// to gradient magnitudes normalized into [0, 1] and must satisfy
/// `0 < low < high`.
pub fn canny_edges(image: &ImageTensor, low: f64, high: f64) -> Array2<u8> {
    assert!(
        0.0 < low && low < high,
        "canny thresholds need 0 < low < high, got {low} and {high}"
    );
    let smoothed = gaussian_smooth(&luma01(image), CANNY_SIGMA);
    let (gx, gy) = sobel(&smoothed);
    let (h, w) = smoothed.dim();
    let norm = 1.0 / (4.0 * 2.0_f64.sqrt());
    let mag = Array2::from_shape_fn((h, w), |(i, j)| {
        (gx[[i, j]].hypot(gy[[i, j]])) * norm
    });

    let mut thinned = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let m = mag[[i, j]];
            if m < low {
                continue;
            }
            let angle = gy[[i, j]].atan2(gx[[i, j]]);
            let sector = ((angle / std::f64::consts::FRAC_PI_4).round().rem_euclid(8.0)) as usize % 4;
            let (di, dj): (isize, isize) = match sector {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let at = |ii: isize, jj: isize| -> f64 {
                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                    0.0
                } else {
                    mag[[ii as usize, jj as usize]]
                }
            };
            let forward = at(i as isize + di, j as isize + dj);
            let backward = at(i as isize - di, j as isize - dj);
            if m > backward && m >= forward {
                thinned[[i, j]] = m;
            }
        }
    }

    let mut out = Array2::<u8>::zeros((h, w));
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if thinned[[i, j]] >= high && out[[i, j]] == 0 {
                out[[i, j]] = 1;
                queue.push_back((i, j));
            }
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if out[[ni, nj]] == 0 && thinned[[ni, nj]] >= low {
                    out[[ni, nj]] = 1;
                    queue.push_back((ni, nj));
                }
            }
        }
    }
    out
}

/// Distance between two binary maps under the chosen metric.
pub fn map_distance(a: &Array2<u8>, b: &Array2<u8>, metric: EdgeMetric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "edge maps disagree in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let count = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as f64;
    Ok(match metric {
        EdgeMetric::Euclidean => count.sqrt(),
        EdgeMetric::PixelCount => count,
    })
}

/// Edge-map distance between two images of the same shape.
pub fn edge_distance(a: &ImageTensor, b: &ImageTensor, params: &EdgeParams) -> Result<f64> {
    params.validate()?;
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "edge_distance needs matching shapes, got {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let ea = canny_edges(a, params.low, params.high);
    let eb = canny_edges(b, params.low, params.high);
    map_distance(&ea, &eb, params.metric)
}

fn to_batch(t: &ImageTensor) -> Result<ArrayD<f64>> {
    stack_nchw(std::slice::from_ref(t))
}

/// Sharpness comparison of one patch: both rectangles are extracted,
/// resampled to the fixed patch size, and scored with the unnormalized
/// gradient difference sum at exponent 1.
pub fn patch_gdl(original: &ImageTensor, generated: &ImageTensor, patch: &PatchSpec) -> Result<f64> {
    let a = patch.extract(original)?;
    let b = patch.extract(generated)?;
    gdl_sum(&to_batch(&a)?, &to_batch(&b)?, 1)
}

/// Mean and population standard deviation of a patch on the [0, 1]
/// intensity scale, over all pixels and channels jointly. Statistics are
/// taken on the source-resolution rectangle.
pub fn patch_stats(image: &ImageTensor, patch: &PatchSpec) -> Result<(f64, f64)> {
    let raw = patch.extract_raw(image)?;
    let values: Vec<f64> = raw.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One measurement row of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub image: String,
    pub metric: String,
    pub patch: Option<String>,
    pub value: f64,
}

/// All measurements of a comparison run, with the parameters that
/// produced them and any alignment warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub params: EdgeParams,
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Arithmetic mean of the selected rows; `None` when nothing matches.
    pub fn mean(&self, method: &str, metric: &str, patch: Option<&str>) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric && r.patch.as_deref() == patch)
            .map(|r| r.value)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    fn selectors(&self) -> Vec<(String, String, Option<String>)> {
        let mut seen = Vec::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.metric.clone(), r.patch.clone());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    /// The stable text form: a parameter header, one tab-separated
    /// record per measurement (`method image metric patch value`, `-`
    /// for no patch), then a summary of per-selector means.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# canny_low={} canny_high={} edge_metric={}\n",
            self.params.low, self.params.high, self.params.metric
        ));
        out.push_str("# method\timage\tmetric\tpatch\tvalue\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.method,
                r.image,
                r.metric,
                r.patch.as_deref().unwrap_or("-"),
                r.value
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out.push_str("\n== Summary (means) ==\n");
        for (method, metric, patch) in self.selectors() {
            let mean = self.mean(&method, &metric, patch.as_deref()).unwrap();
            out.push_str(&format!(
                "{:<12} {:<14} {:<10} {:.4}\n",
                method,
                metric,
                patch.as_deref().unwrap_or("-"),
                mean
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png") | Some("jpg") | Some("jpeg")) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Compares each labeled output directory against the originals, stem
/// by stem: edge distance per image, gradient difference sum and
/// intensity statistics per patch. Original patch statistics appear
/// under the method name `original`. Method files whose stems have no
/// original, or originals missing from a method directory, produce
/// warnings instead of failures.
pub fn run_report(
    original_dir: &Path,
    generated_dirs: &[(String, PathBuf)],
    patches: &[PatchSpec],
    params: &EdgeParams,
) -> Result<MetricsReport> {
    params.validate()?;
    let originals = list_images(original_dir)?;
    if originals.is_empty() {
        return Err(Error::Config(format!(
            "no images found in {}",
            original_dir.display()
        )));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut method_maps = Vec::new();
    for (label, dir) in generated_dirs {
        let map = list_images(dir)?;
        for stem in map.keys() {
            if !originals.contains_key(stem) {
                warnings.push(format!(
                    "method {label}: `{stem}` has no original counterpart"
                ));
            }
        }
        method_maps.push((label, map));
    }
    for (stem, orig_path) in &originals {
        let dims = image_dimensions(orig_path)?;
        let original = load_image(orig_path, dims)?;
        let orig_edges = canny_edges(&original, params.low, params.high);
        for patch in patches {
            let (mean, std) = patch_stats(&original, patch)?;
            rows.push(MetricsRow {
                method: "original".into(),
                image: stem.clone(),
                metric: "patch_mean".into(),
                patch: Some(patch.label.clone()),
                value: mean,
            });
            rows.push(MetricsRow {
                method: "original".into(),
                image: stem.clone(),
                metric: "patch_std".into(),
                patch: Some(patch.label.clone()),
                value: std,
            });
        }
        for (label, map) in &method_maps {
            let Some(path) = map.get(stem) else {
                warnings.push(format!("method {label}: no file for `{stem}`"));
                continue;
            };
            let generated = load_image(path, dims)?;
            let gen_edges = canny_edges(&generated, params.low, params.high);
            rows.push(MetricsRow {
                method: (*label).clone(),
                image: stem.clone(),
                metric: "edge_distance".into(),
                patch: None,
                value: map_distance(&orig_edges, &gen_edges, params.metric)?,
            });
            for patch in patches {
                rows.push(MetricsRow {
                    method: (*label).clone(),
                    image: stem.clone(),
                    metric: "patch_gdl".into(),
                    patch: Some(patch.label.clone()),
                    value: patch_gdl(&original, &generated, patch)?,
                });
                let (mean, std) = patch_stats(&generated, patch)?;
                rows.push(MetricsRow {
                    method: (*label).clone(),
                    image: stem.clone(),
                    metric: "patch_mean".into(),
                    patch: Some(patch.label.clone()),
                    value: mean,
                });
                rows.push(MetricsRow {
                    method: (*label).clone(),
                    image: stem.clone(),
                    metric: "patch_std".into(),
                    patch: Some(patch.label.clone()),
                    value: std,
                });
            }
        }
    }
    Ok(MetricsReport {
        params: *params,
        rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{normalize, save_image};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn constant_image(h: usize, w: usize, value: f64) -> ImageTensor {
        ImageTensor::new(Array3::from_elem((h, w, 3), value)).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        normalize(&Array3::from_shape_fn((h, w, 3), |_| rng.random()))
    }

    /// Random coarse blocks upsampled without interpolation, so step
    /// edges survive the smoothing stage (per-pixel noise does not).
    fn structured_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = 4 + (seed % 3) as usize;
        let coarse = normalize(&Array3::from_shape_fn((g, g, 3), |_| rng.random()));
        let data = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
            coarse.data()[[(i * g / h).min(g - 1), (j * g / w).min(g - 1), c]]
        });
        ImageTensor::new(data).unwrap()
    }

    fn step_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((h, w, 3), |(_, j, _)| {
            if j < w / 2 {
                -1.0
            } else {
                1.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn constant_images_have_no_edges() {
        for v in [-1.0, 0.0, 0.73] {
            let edges = canny_edges(&constant_image(24, 24, v), 0.1, 0.2);
            assert!(edges.iter().all(|&e| e == 0));
        }
    }

    #[test]
    fn vertical_step_yields_one_column_of_edges() {
        let (h, w) = (16, 16);
        let edges = canny_edges(&step_image(h, w), 0.1, 0.2);
        let mut columns: Vec<usize> = Vec::new();
        for j in 0..w {
            if (0..h).any(|i| edges[[i, j]] == 1) {
                columns.push(j);
            }
        }
        assert_eq!(columns.len(), 1, "edge columns: {columns:?}");
        let c = columns[0] as isize;
        assert!((c - w as isize / 2).abs() <= 1, "edge at column {c}");
        assert!((0..h).all(|i| edges[[i, columns[0]]] == 1));
    }

    #[test]
    fn edge_maps_are_binary() {
        let edges = canny_edges(&random_image(20, 20, 1), 0.1, 0.2);
        assert!(edges.iter().all(|&e| e == 0 || e == 1));
    }

    #[test]
    fn canny_ignores_global_intensity_shifts() {
        let base = random_image(18, 18, 2);
        let shifted =
            ImageTensor::new(base.data().mapv(|v| (v * 0.5) + 0.2)).unwrap();
        let half = ImageTensor::new(base.data().mapv(|v| v * 0.5)).unwrap();
        assert_eq!(
            canny_edges(&half, 0.05, 0.1),
            canny_edges(&shifted, 0.05, 0.1)
        );
    }

    #[test]
    fn map_distance_counts_disagreements() {
        let a = Array2::<u8>::zeros((8, 8));
        let mut b = a.clone();
        for (i, j) in [(0, 0), (3, 4), (5, 5), (7, 1)] {
            b[[i, j]] = 1;
        }
        assert_eq!(map_distance(&a, &b, EdgeMetric::Euclidean).unwrap(), 2.0);
        assert_eq!(map_distance(&a, &b, EdgeMetric::PixelCount).unwrap(), 4.0);
        assert_eq!(map_distance(&a, &a, EdgeMetric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn edge_distance_is_symmetric_zero_diagonal_and_bounded() {
        let params = EdgeParams::default();
        for seed in 0..5 {
            let a = structured_image(16, 16, 10 + seed);
            let b = structured_image(16, 16, 20 + seed);
            assert_eq!(edge_distance(&a, &a, &params).unwrap(), 0.0);
            let ab = edge_distance(&a, &b, &params).unwrap();
            let ba = edge_distance(&b, &a, &params).unwrap();
            assert_eq!(ab, ba);
            assert!((0.0..=16.0).contains(&ab));
        }
    }

    #[test]
    fn edge_distance_rejects_shape_mismatch_and_bad_thresholds() {
        let a = random_image(8, 8, 1);
        let b = random_image(8, 10, 1);
        assert!(matches!(
            edge_distance(&a, &b, &EdgeParams::default()),
            Err(Error::Shape(_))
        ));
        let bad = EdgeParams {
            low: 0.3,
            high: 0.2,
            metric: EdgeMetric::Euclidean,
        };
        assert!(matches!(
            edge_distance(&a, &a, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn patch_parsing_roundtrips() {
        let p: PatchSpec = "red:4,10,32,16".parse().unwrap();
        assert_eq!(p, PatchSpec::new("red", 4, 10, 32, 16));
        assert_eq!(p.to_string().parse::<PatchSpec>().unwrap(), p);
        for bad in ["red", "red:1,2,3", "red:a,b,c,d", ":1,2,3,4"] {
            assert!(bad.parse::<PatchSpec>().is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn identical_patches_have_zero_gdl() {
        let img = random_image(80, 80, 3);
        let patch = PatchSpec::new("p", 8, 8, 40, 40);
        assert_eq!(patch_gdl(&img, &img, &patch).unwrap(), 0.0);
    }

    #[test]
    fn patch_gdl_matches_the_loss_oracle_on_extracted_patches() {
        let a = random_image(100, 90, 4);
        let b = random_image(100, 90, 5);
        for patch in [
            PatchSpec::new("same-size", 10, 10, 64, 64),
            PatchSpec::new("resized", 0, 5, 30, 48),
        ] {
            let direct = patch_gdl(&a, &b, &patch).unwrap();
            let pa = to_batch(&patch.extract(&a).unwrap()).unwrap();
            let pb = to_batch(&patch.extract(&b).unwrap()).unwrap();
            let oracle = gdl_sum(&pa, &pb, 1).unwrap();
            assert!((direct - oracle).abs() < 1e-9);
            assert!(direct > 0.0);
        }
    }

    #[test]
    fn patch_operations_reject_out_of_bounds_rects() {
        let img = random_image(32, 32, 6);
        let outside = PatchSpec::new("p", 20, 0, 16, 16);
        assert!(matches!(
            patch_gdl(&img, &img, &outside),
            Err(Error::Config(_))
        ));
        assert!(matches!(patch_stats(&img, &outside), Err(Error::Config(_))));
        let empty = PatchSpec::new("p", 0, 0, 0, 4);
        assert!(matches!(patch_stats(&img, &empty), Err(Error::Config(_))));
    }

    #[test]
    fn patch_stats_closed_forms() {
        let constant = constant_image(32, 32, 0.0);
        let patch = PatchSpec::new("p", 4, 4, 16, 16);
        let (mean, std) = patch_stats(&constant, &patch).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
        assert_eq!(std, 0.0);

        let half = ImageTensor::new(Array3::from_shape_fn((64, 64, 3), |(i, _, _)| {
            if i < 32 {
                -1.0
            } else {
                1.0
            }
        }))
        .unwrap();
        let full = PatchSpec::new("p", 0, 0, 64, 64);
        let (mean, std) = patch_stats(&half, &full).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
        assert!((std - 0.5).abs() < 1e-12);
    }

    #[test]
    fn std_is_zero_only_for_constant_patches() {
        let img = random_image(24, 24, 7);
        let patch = PatchSpec::new("p", 0, 0, 24, 24);
        let (_, std) = patch_stats(&img, &patch).unwrap();
        assert!(std > 0.0);
    }

    #[test]
    fn identity_method_scores_zero_and_means_match() {
        let dir = tempfile::tempdir().unwrap();
        let orig = dir.path().join("orig");
        let same = dir.path().join("same");
        let other = dir.path().join("other");
        for d in [&orig, &same, &other] {
            std::fs::create_dir(d).unwrap();
        }
        for i in 0..3 {
            let img = structured_image(48, 48, 30 + i);
            save_image(&img, orig.join(format!("im{i}.png"))).unwrap();
            save_image(&img, same.join(format!("im{i}.png"))).unwrap();
            save_image(&structured_image(48, 48, 60 + i), other.join(format!("im{i}.png"))).unwrap();
        }
        let patches = vec![PatchSpec::new("center", 8, 8, 32, 32)];
        let report = run_report(
            &orig,
            &[("same".into(), same), ("other".into(), other)],
            &patches,
            &EdgeParams::default(),
        )
        .unwrap();
        assert!(report.warnings.is_empty());
        assert_eq!(report.mean("same", "edge_distance", None), Some(0.0));
        assert_eq!(report.mean("same", "patch_gdl", Some("center")), Some(0.0));

        let manual: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == "other" && r.metric == "edge_distance")
            .map(|r| r.value)
            .collect();
        assert_eq!(manual.len(), 3);
        let expect = manual.iter().sum::<f64>() / manual.len() as f64;
        let got = report.mean("other", "edge_distance", None).unwrap();
        assert!((got - expect).abs() < 1e-9);
        assert!(got > 0.0);

        let rendered = report.render();
        assert!(rendered.contains("canny_low=0.1"));
        assert!(rendered.contains("Summary"));
        let out = dir.path().join("report.txt");
        report.save(&out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), rendered);
    }

    #[test]
    fn misaligned_stems_warn_without_failing() {
        let dir = tempfile::tempdir().unwrap();
        let orig = dir.path().join("orig");
        let method = dir.path().join("m");
        std::fs::create_dir(&orig).unwrap();
        std::fs::create_dir(&method).unwrap();
        for i in 0..2 {
            save_image(&random_image(32, 32, 40 + i), orig.join(format!("im{i}.png"))).unwrap();
        }
        save_image(&random_image(32, 32, 50), method.join("im0.png")).unwrap();
        save_image(&random_image(32, 32, 51), method.join("stray.png")).unwrap();
        let report = run_report(
            &orig,
            &[("m".into(), method)],
            &[],
            &EdgeParams::default(),
        )
        .unwrap();
        assert_eq!(report.warnings.len(), 2);
        assert!(report.warnings.iter().any(|w| w.contains("stray")));
        assert!(report.warnings.iter().any(|w| w.contains("im1")));
        let measured: Vec<&MetricsRow> = report
            .rows
            .iter()
            .filter(|r| r.metric == "edge_distance")
            .collect();
        assert_eq!(measured.len(), 1);
        assert_eq!(measured[0].image, "im0");
    }

    #[test]
    fn reports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let orig = dir.path().join("orig");
        let method = dir.path().join("m");
        std::fs::create_dir(&orig).unwrap();
        std::fs::create_dir(&method).unwrap();
        for i in 0..2 {
            save_image(&random_image(40, 40, 70 + i), orig.join(format!("im{i}.png"))).unwrap();
            save_image(&random_image(40, 40, 80 + i), method.join(format!("im{i}.png"))).unwrap();
        }
        let patches = vec![PatchSpec::new("p", 0, 0, 40, 40)];
        let run = || {
            run_report(
                &orig,
                &[("m".into(), method.clone())],
                &patches,
                &EdgeParams::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
        assert_eq!(run().render(), run().render());
    }
}
