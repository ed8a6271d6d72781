//! Paired-dataset construction: matching clean images with distorted
//! counterparts, synthesizing distortions, and train/test splitting.
//!
//! A dataset is described by a manifest file. The format is line-oriented
//! text: a header line `# seed=<integer>`, then one entry per line as
//! tab-separated `clean_path<TAB>distorted_path<TAB>split_tag`, where
//! `split_tag` is `train` or `test`.
//!
//! Distorted counterparts either come from an external translation model
//! (ingested as files, matched to clean images by filename stem) or from
//! [`synth_distort`], a parametric stand-in that attenuates the red
//! channel, blurs, blends toward a haze color, and adds Gaussian noise.

use crate::imageio::ImageTensor;
use crate::{Error, Result};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// A clean image and its distorted counterpart, same shape.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub clean: ImageTensor,
    pub distorted: ImageTensor,
}

impl ImagePair {
    pub fn new(clean: ImageTensor, distorted: ImageTensor) -> Result<Self> {
        if (clean.height(), clean.width()) != (distorted.height(), distorted.width()) {
            return Err(Error::Shape(format!(
                "pair shape mismatch: clean {}x{}, distorted {}x{}",
                clean.height(),
                clean.width(),
                distorted.height(),
                distorted.width()
            )));
        }
        Ok(ImagePair { clean, distorted })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!(
                "unknown split tag `{other}` (expected train or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub distorted: PathBuf,
    pub split: Split,
}

/// The dataset bookkeeping: every (clean, distorted) pair with its split
/// tag, plus the seed that produced the split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    seed: u64,
}

impl DatasetManifest {
    /// Builds a manifest, rejecting duplicate clean paths.
    pub fn new(entries: Vec<ManifestEntry>, seed: u64) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.clean) {
                return Err(Error::Manifest(format!(
                    "clean path listed twice: {}",
                    e.clean.display()
                )));
            }
        }
        Ok(DatasetManifest { entries, seed })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Writes the manifest in its line-oriented text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("# seed={}\n", self.seed);
        for e in &self.entries {
            let (c, d) = (e.clean.display().to_string(), e.distorted.display().to_string());
            for p in [&c, &d] {
                if p.contains('\t') || p.contains('\n') {
                    return Err(Error::Manifest(format!(
                        "path contains a tab or newline and cannot be serialized: {p}"
                    )));
                }
            }
            out.push_str(&format!("{c}\t{d}\t{}\n", e.split));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Parses a manifest file written by [`DatasetManifest::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Manifest("empty manifest file".into()))?;
        let seed = header
            .strip_prefix("# seed=")
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| {
                Error::Manifest(format!("bad header line `{header}` (expected `# seed=<n>`)"))
            })?;
        let mut entries = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (clean, distorted, tag) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(d), Some(t), None) => (c, d, t),
                _ => {
                    return Err(Error::Manifest(format!(
                        "line {}: expected 3 tab-separated fields, got `{line}`",
                        idx + 2
                    )))
                }
            };
            entries.push(ManifestEntry {
                clean: PathBuf::from(clean),
                distorted: PathBuf::from(distorted),
                split: tag.parse()?,
            });
        }
        DatasetManifest::new(entries, seed)
    }
}

/// Result of matching two directories: the manifest of matched stems plus
/// the files on either side that had no counterpart.
#[derive(Debug)]
pub struct IngestReport {
    pub manifest: DatasetManifest,
    pub unmatched_clean: Vec<PathBuf>,
    pub unmatched_distorted: Vec<PathBuf>,
}

fn image_files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut map = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png") | Some("jpg") | Some("jpeg")) {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        if map.insert(stem.clone(), path).is_some() {
            return Err(Error::DuplicateStem {
                stem,
                dir: dir.to_path_buf(),
            });
        }
    }
    Ok(map)
}

/// Pairs images across two directories by filename stem. Every matched
/// stem becomes a manifest entry (tagged `train` until a split is built);
/// files without a counterpart are returned for the caller to report.
pub fn ingest_external_pairs(clean_dir: &Path, distorted_dir: &Path) -> Result<IngestReport> {
    let clean = image_files_by_stem(clean_dir)?;
    let distorted = image_files_by_stem(distorted_dir)?;
    let mut entries = Vec::new();
    let mut unmatched_clean = Vec::new();
    for (stem, cpath) in &clean {
        match distorted.get(stem) {
            Some(dpath) => entries.push(ManifestEntry {
                clean: cpath.clone(),
                distorted: dpath.clone(),
                split: Split::Train,
            }),
            None => unmatched_clean.push(cpath.clone()),
        }
    }
    let unmatched_distorted = distorted
        .iter()
        .filter(|(stem, _)| !clean.contains_key(*stem))
        .map(|(_, p)| p.clone())
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyDataset(
            clean_dir.to_path_buf(),
            distorted_dir.to_path_buf(),
        ));
    }
    Ok(IngestReport {
        manifest: DatasetManifest::new(entries, 0)?,
        unmatched_clean,
        unmatched_distorted,
    })
}

/// Knobs of the parametric distortion stand-in.
///
/// `red_attenuation` is the multiplicative survival of the red channel in
/// physical [0, 1] intensity space (1 leaves red untouched, 0 removes it).
/// `haze_color` (RGB, each in [-1, 1]) and `haze_strength` in [0, 1] blend
/// the image toward a flat veil. `blur_radius` is the standard deviation
/// in pixels of a Gaussian blur. `noise_std` is additive Gaussian noise in
/// normalized intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionParams {
    pub red_attenuation: f64,
    pub haze_color: [f64; 3],
    pub haze_strength: f64,
    pub blur_radius: f64,
    pub noise_std: f64,
}

impl Default for DistortionParams {
    /// Neutral parameters: the distortion is the identity.
    fn default() -> Self {
        DistortionParams {
            red_attenuation: 1.0,
            haze_color: [0.0; 3],
            haze_strength: 0.0,
            blur_radius: 0.0,
            noise_std: 0.0,
        }
    }
}

impl DistortionParams {
    /// A teal-veil preset: strong red loss, mild blue-green haze, slight
    /// blur and sensor noise. Used when no parameter file is given.
    pub fn underwater() -> Self {
        DistortionParams {
            red_attenuation: 0.3,
            haze_color: [-0.2, 0.15, 0.3],
            haze_strength: 0.35,
            blur_radius: 1.2,
            noise_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::Config(format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )));
            }
            Ok(())
        };
        check("red_attenuation", self.red_attenuation, 0.0, 1.0)?;
        for (i, &c) in self.haze_color.iter().enumerate() {
            check(&format!("haze_color[{i}]"), c, -1.0, 1.0)?;
        }
        check("haze_strength", self.haze_strength, 0.0, 1.0)?;
        check("blur_radius", self.blur_radius, 0.0, f64::INFINITY)?;
        check("noise_std", self.noise_std, 0.0, f64::INFINITY)?;
        Ok(())
    }

    /// Parses a `key = value` parameter file. Keys match field names;
    /// `haze_color` takes three comma-separated components. Missing keys
    /// keep their neutral defaults; `#` starts a comment line.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut params = DistortionParams::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad number `{v}`", idx + 1)))
            };
            match key {
                "red_attenuation" => params.red_attenuation = parse(value)?,
                "haze_strength" => params.haze_strength = parse(value)?,
                "blur_radius" => params.blur_radius = parse(value)?,
                "noise_std" => params.noise_std = parse(value)?,
                "haze_color" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(Error::Config(format!(
                            "line {}: haze_color needs 3 comma-separated values",
                            idx + 1
                        )));
                    }
                    for (i, p) in parts.iter().enumerate() {
                        params.haze_color[i] = parse(p)?;
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown parameter `{other}`",
                        idx + 1
                    )))
                }
            }
        }
        params.validate()?;
        Ok(params)
    }
}

fn reflect_index(mut k: isize, n: isize) -> usize {
    loop {
        if k < 0 {
            k = -k - 1;
        } else if k >= n {
            k = 2 * n - 1 - k;
        } else {
            return k as usize;
        }
    }
}

fn gaussian_blur(data: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let (h, w, _) = data.dim();
    let (hs, ws) = (h as isize, w as isize);
    let mut pass1 = Array3::zeros(data.dim());
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let jj = reflect_index(j as isize + t as isize - radius, ws);
                    acc += data[[i, jj, c]] * kv;
                }
                pass1[[i, j, c]] = acc;
            }
        }
    }
    let mut pass2 = Array3::zeros(data.dim());
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let ii = reflect_index(i as isize + t as isize - radius, hs);
                    acc += pass1[[ii, j, c]] * kv;
                }
                pass2[[i, j, c]] = acc;
            }
        }
    }
    pass2
}

/// Applies the parametric distortion: red attenuation in physical
/// intensity space, Gaussian blur with reflected-edge padding, blend
/// toward the haze color, additive Gaussian noise, then a clip to
/// [-1, 1]. Bit-deterministic given `(params, seed)`; neutral parameters
/// return the input unchanged.
pub fn synth_distort(clean: &ImageTensor, params: &DistortionParams, seed: u64) -> Result<ImageTensor> {
    params.validate()?;
    let mut data = clean.data().clone();
    if params.red_attenuation < 1.0 {
        for v in data.slice_mut(ndarray::s![.., .., 0]).iter_mut() {
            let intensity = (*v + 1.0) / 2.0;
            *v = intensity * params.red_attenuation * 2.0 - 1.0;
        }
    }
    if params.blur_radius > 0.0 {
        data = gaussian_blur(&data, params.blur_radius);
    }
    if params.haze_strength > 0.0 {
        let s = params.haze_strength;
        for ((_, _, c), v) in data.indexed_iter_mut() {
            *v = *v * (1.0 - s) + params.haze_color[c] * s;
        }
    }
    if params.noise_std > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, params.noise_std)
            .expect("validated noise_std is finite and non-negative");
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    ImageTensor::from_clamped(data)
}

/// Assigns train/test tags by seeded shuffle. The test set gets
/// `round(test_fraction * N)` entries, rounding half away from zero,
/// capped so at least one entry stays in the training set.
pub fn build_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot split an empty manifest".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = manifest.len();
    let n_test = ((test_fraction * n as f64).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut entries = manifest.entries.clone();
    for (rank, &idx) in order.iter().enumerate() {
        entries[idx].split = if rank < n_test { Split::Test } else { Split::Train };
    }
    DatasetManifest::new(entries, seed)
}
