//! Applying a trained checkpoint: batch restoration of image files and
//! a single-image throughput benchmark.

use crate::imageio::{image_dimensions, load_image, resize_bilinear, save_image, stack_nchw, unstack_nchw};
use crate::trainer::load_checkpoint;
use crate::{Error, Result};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Behavior switches for [`restore`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RestoreOptions {
    /// Resample each output back to its source resolution instead of
    /// leaving it at the model resolution.
    pub resize_to_source: bool,
}

/// What a [`restore`] run produced: written files in input order, plus
/// the inputs that failed to decode and were passed over.
#[derive(Clone, Debug)]
pub struct RestoreOutcome {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Runs every input image through the checkpointed generator and writes
/// the restored version as `<output_dir>/<stem>.png`.
///
/// Inputs are resized to the checkpoint's training resolution before the
/// forward pass; outputs stay at that resolution unless
/// `resize_to_source` is set. A file that cannot be read or decoded is
/// recorded in the outcome and skipped rather than failing the run.
pub fn restore(
    checkpoint: &Path,
    inputs: &[PathBuf],
    output_dir: &Path,
    options: &RestoreOptions,
) -> Result<RestoreOutcome> {
    let (mut state, config) = load_checkpoint(checkpoint)?;
    let size = config.image_size;
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for input in inputs {
        let source_hw = match image_dimensions(input) {
            Ok(hw) => hw,
            Err(e) => {
                skipped.push((input.clone(), e.to_string()));
                continue;
            }
        };
        let tensor = match load_image(input, (size, size)) {
            Ok(t) => t,
            Err(e) => {
                skipped.push((input.clone(), e.to_string()));
                continue;
            }
        };
        let batch = stack_nchw(std::slice::from_ref(&tensor))?;
        let out = state.generator.run(&batch)?;
        let mut restored = unstack_nchw(&out)?.remove(0);
        if options.resize_to_source {
            restored = resize_bilinear(&restored, source_hw)?;
        }
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("input {} has no usable stem", input.display())))?;
        let out_path = output_dir.join(format!("{stem}.png"));
        save_image(&restored, &out_path)?;
        written.push(out_path);
    }
    Ok(RestoreOutcome { written, skipped })
}

/// Throughput measurement over repeated single-image forward passes.
#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub trials: usize,
    pub mean_seconds_per_image: f64,
    pub fps: f64,
    pub device_label: String,
    pub image_size: usize,
}

/// Times `trials` evaluation passes of the checkpointed generator on one
/// synthetic image, after one untimed warm-up pass. `fps` is exactly the
/// reciprocal of the mean seconds per image.
pub fn benchmark(checkpoint: &Path, trials: usize, device_label: &str) -> Result<BenchmarkReport> {
    if trials < 10 {
        return Err(Error::Config(format!(
            "benchmark needs at least 10 trials, got {trials}"
        )));
    }
    let (mut state, config) = load_checkpoint(checkpoint)?;
    let size = config.image_size;
    let batch = ndarray::ArrayD::zeros(ndarray::IxDyn(&[1, 3, size, size]));
    state.generator.run(&batch)?;
    let started = Instant::now();
    for _ in 0..trials {
        state.generator.run(&batch)?;
    }
    let mean = started.elapsed().as_secs_f64() / trials as f64;
    Ok(BenchmarkReport {
        trials,
        mean_seconds_per_image: mean,
        fps: 1.0 / mean,
        device_label: device_label.to_string(),
        image_size: size,
    })
}

/// The device label reported by benchmarks: the `UGAN_DEVICE`
/// environment variable when set, otherwise `cpu`.
pub fn device_label() -> String {
    std::env::var("UGAN_DEVICE").unwrap_or_else(|_| "cpu".to_string())
}
