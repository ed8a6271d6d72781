//! Image loading, saving, resizing, and pixel normalization.
//!
//! Images move between two value spaces. On disk they are 8-bit RGB rasters
//! (PNG or JPEG). In memory they are [`ImageTensor`]s: height x width x 3
//! arrays of f64 intensities in [-1, 1], mapped by `v / 127.5 - 1` and its
//! rounding inverse. All model code consumes the normalized form.

use crate::{Error, Result};
use ndarray::{Array3, ArrayD, Axis, IxDyn};
use std::path::Path;

/// An RGB image in normalized [-1, 1] space, laid out height x width x 3.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an array, validating the channel count and value range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 {
            return Err(Error::Shape(format!(
                "image tensor needs 3 channels, got {h}x{w}x{c}"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Shape(format!(
                "image tensor value {bad} outside [-1, 1]"
            )));
        }
        Ok(ImageTensor { data })
    }

    /// Wraps an array, clamping every element into [-1, 1].
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Maps 8-bit pixels to normalized intensities: `v / 127.5 - 1`.
pub fn normalize(pixels: &Array3<u8>) -> ImageTensor {
    let data = pixels.mapv(|v| f64::from(v) / 127.5 - 1.0);
    ImageTensor::new(data).expect("8-bit input always normalizes into range")
}

/// Maps normalized intensities back to 8-bit: `round((v + 1) * 127.5)`,
/// clipped to [0, 255]. Exact inverse of [`normalize`] on the 8-bit grid.
pub fn denormalize(t: &ImageTensor) -> Array3<u8> {
    t.data
        .mapv(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
}

/// Decodes an image file, normalizes it, and resizes to `target_size`
/// (height, width). Grayscale files are replicated to three channels.
pub fn load_image(path: impl AsRef<Path>, target_size: (usize, usize)) -> Result<ImageTensor> {
    let path = path.as_ref();
    let (th, tw) = target_size;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!(
            "target size {th}x{tw} must be positive"
        )));
    }
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = Array3::from_shape_vec((h as usize, w as usize, 3), rgb.into_raw())
        .expect("raster buffer matches its reported dimensions");
    let tensor = normalize(&pixels);
    if (h as usize, w as usize) == (th, tw) {
        Ok(tensor)
    } else {
        resize_bilinear(&tensor, (th, tw))
    }
}

/// Reads only the header of an image file and reports (height, width).
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((h as usize, w as usize))
}

/// Denormalizes and writes `t` as PNG or JPEG, chosen by file extension.
pub fn save_image(t: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => image::ImageFormat::Png,
        Some("jpg") | Some("jpeg") => image::ImageFormat::Jpeg,
        other => {
            return Err(Error::Config(format!(
                "unsupported image extension {:?} for {} (png, jpg, jpeg)",
                other.unwrap_or(""),
                path.display()
            )))
        }
    };
    let pixels = denormalize(t);
    let (h, w, _) = pixels.dim();
    let raw = pixels.into_raw_vec_and_offset().0;
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("denormalized buffer matches tensor dimensions");
    img.save_with_format(path, format)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}

/// Bilinear resample to `target_size` (height, width), sampling at pixel
/// centers with edge clamping. Returns an identical copy when the size
/// already matches.
pub fn resize_bilinear(t: &ImageTensor, target_size: (usize, usize)) -> Result<ImageTensor> {
    let (th, tw) = target_size;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!(
            "target size {th}x{tw} must be positive"
        )));
    }
    let (h, w, _) = t.data.dim();
    if (h, w) == (th, tw) {
        return Ok(t.clone());
    }
    let src = &t.data;
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let coord = |i: usize, scale: f64, limit: usize| -> (usize, usize, f64) {
        let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (limit - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(limit - 1);
        (lo, hi, c - lo as f64)
    };
    let mut out = Array3::zeros((th, tw, 3));
    for i in 0..th {
        let (y0, y1, fy) = coord(i, sy, h);
        for j in 0..tw {
            let (x0, x1, fx) = coord(j, sx, w);
            for c in 0..3 {
                let top = src[[y0, x0, c]] * (1.0 - fx) + src[[y0, x1, c]] * fx;
                let bot = src[[y1, x0, c]] * (1.0 - fx) + src[[y1, x1, c]] * fx;
                out[[i, j, c]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    ImageTensor::from_clamped(out)
}

/// Stacks images of equal size into an NCHW batch array.
pub fn stack_nchw(images: &[ImageTensor]) -> Result<ArrayD<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let n = images.len();
    let mut out = ArrayD::zeros(IxDyn(&[n, 3, h, w]));
    for (s, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes sizes {}x{} and {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    out[[s, c, i, j]] = img.data[[i, j, c]];
                }
            }
        }
    }
    Ok(out)
}

/// Splits an NCHW batch back into images, clamping into [-1, 1].
pub fn unstack_nchw(batch: &ArrayD<f64>) -> Result<Vec<ImageTensor>> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape(format!(
            "expected NCHW batch with 3 channels, got {shape:?}"
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    let mut out = Vec::with_capacity(shape[0]);
    for s in 0..shape[0] {
        let sample = batch.index_axis(Axis(0), s);
        let mut data = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    data[[i, j, c]] = sample[[c, i, j]];
                }
            }
        }
        out.push(ImageTensor::from_clamped(data)?);
    }
    Ok(out)
}
