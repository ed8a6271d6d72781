//! Training objectives: the Wasserstein critic loss with gradient
//! penalty, the generator's adversarial + L1 (+ optional gradient
//! difference) objective, and the shared reduction conventions.
//!
//! Each loss exists twice: as a plain array computation (used for metrics
//! and as a cross-check) and as a graph construction (used for training,
//! differentiable). L1 and the gradient difference loss reduce by the
//! mean over batch, channels, and pixels, so the weighting constants keep
//! their relative scale at any resolution; the unnormalized sum is also
//! exposed. Critic patch maps enter expectations through their mean: each
//! patch score counts as one critic sample.

use crate::graph::{Graph, Var};
use crate::{Error, Result};
use ndarray::{ArrayD, Ix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Weighting constants of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_gp: f64,
    pub alpha: u32,
}

impl LossWeights {
    /// Adversarial + L1 objective (no gradient difference term).
    pub fn ugan() -> Self {
        LossWeights {
            lambda_1: 100.0,
            lambda_2: 0.0,
            lambda_gp: 10.0,
            alpha: 1,
        }
    }

    /// Adversarial + L1 + gradient difference objective.
    pub fn ugan_p() -> Self {
        LossWeights {
            lambda_2: 1.0,
            ..LossWeights::ugan()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        if self.alpha < 1 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_same_4d(a: &ArrayD<f64>, b: &ArrayD<f64>, what: &str) -> Result<()> {
    if a.ndim() != 4 || b.ndim() != 4 {
        return Err(Error::Shape(format!(
            "{what} expects NCHW batches, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what} shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference over batch, channels, and pixels.
pub fn l1_loss(clean: &ArrayD<f64>, predicted: &ArrayD<f64>) -> Result<f64> {
    check_same_4d(clean, predicted, "l1_loss")?;
    let n = clean.len() as f64;
    let mut total = 0.0;
    for (a, b) in clean.iter().zip(predicted.iter()) {
        total += (a - b).abs();
    }
    Ok(total / n)
}

/// Unnormalized gradient difference sum: over every interior index, the
/// absolute gap between the two images' absolute row and column
/// differences, raised to `alpha`. Row terms use `I[i,j] - I[i-1,j]`,
/// column terms `I[i,j-1] - I[i,j]`.
pub fn gdl_sum(clean: &ArrayD<f64>, predicted: &ArrayD<f64>, alpha: u32) -> Result<f64> {
    check_same_4d(clean, predicted, "gdl")?;
    if alpha < 1 {
        return Err(Error::Config("alpha must be at least 1".into()));
    }
    let c = clean.view().into_dimensionality::<Ix4>().unwrap();
    let p = predicted.view().into_dimensionality::<Ix4>().unwrap();
    let (n, ch, h, w) = c.dim();
    let mut total = 0.0;
    for s in 0..n {
        for k in 0..ch {
            for i in 1..h {
                for j in 0..w {
                    let dc = (c[[s, k, i, j]] - c[[s, k, i - 1, j]]).abs();
                    let dp = (p[[s, k, i, j]] - p[[s, k, i - 1, j]]).abs();
                    total += (dc - dp).abs().powi(alpha as i32);
                }
            }
            for i in 0..h {
                for j in 1..w {
                    let dc = (c[[s, k, i, j - 1]] - c[[s, k, i, j]]).abs();
                    let dp = (p[[s, k, i, j - 1]] - p[[s, k, i, j]]).abs();
                    total += (dc - dp).abs().powi(alpha as i32);
                }
            }
        }
    }
    Ok(total)
}

/// Gradient difference loss: [`gdl_sum`] divided by the element count
/// (batch x channels x pixels), matching the L1 reduction convention.
pub fn gdl(clean: &ArrayD<f64>, predicted: &ArrayD<f64>, alpha: u32) -> Result<f64> {
    Ok(gdl_sum(clean, predicted, alpha)? / clean.len() as f64)
}

/// Critic objective: `mean(d_fake) - mean(d_real) + gp`. The critic
/// minimizes this, which maximizes the Wasserstein separation while
/// keeping its input gradients near unit norm.
pub fn critic_loss(d_real: &ArrayD<f64>, d_fake: &ArrayD<f64>, gp: f64) -> Result<f64> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::Shape(format!(
            "critic_loss map shapes differ: {:?} vs {:?}",
            d_real.shape(),
            d_fake.shape()
        )));
    }
    let n = d_real.len() as f64;
    Ok(d_fake.sum() / n - d_real.sum() / n + gp)
}

/// Generator objective: `-mean(d_fake) + lambda_1 * l1 + lambda_2 * gdl`.
/// With `lambda_2 = 0` the gradient difference term is absent.
pub fn generator_loss(
    d_fake: &ArrayD<f64>,
    clean: &ArrayD<f64>,
    predicted: &ArrayD<f64>,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let adv = -d_fake.sum() / d_fake.len() as f64;
    let l1 = l1_loss(clean, predicted)?;
    let gdl_term = if weights.lambda_2 > 0.0 {
        weights.lambda_2 * gdl(clean, predicted, weights.alpha)?
    } else {
        0.0
    };
    Ok(adv + weights.lambda_1 * l1 + gdl_term)
}

// ---- graph constructions ----

/// [`l1_loss`] as a differentiable graph node.
pub fn l1_loss_graph(g: &mut Graph, clean: Var, predicted: Var) -> Var {
    let diff = g.sub(clean, predicted);
    let a = g.abs(diff);
    g.mean_all(a)
}

fn axis_gdl_terms(g: &mut Graph, clean: Var, predicted: Var, alpha: u32, rows: bool) -> Var {
    let shape = g.value(clean).shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let crops = if rows {
        [(1, h - 1, 0, w), (0, h - 1, 0, w)]
    } else {
        [(0, h, 0, w - 1), (0, h, 1, w - 1)]
    };
    let mut mags = [clean, predicted];
    for m in mags.iter_mut() {
        let hi = g.crop_hw(*m, crops[0].0, crops[0].1, crops[0].2, crops[0].3);
        let lo = g.crop_hw(*m, crops[1].0, crops[1].1, crops[1].2, crops[1].3);
        let d = g.sub(hi, lo);
        *m = g.abs(d);
    }
    let gap = g.sub(mags[0], mags[1]);
    let a = g.abs(gap);
    let p = g.powi(a, alpha as i32);
    g.sum_all(p)
}

/// [`gdl_sum`] as a differentiable graph node. Images below 2x2 have no
/// interior terms and yield zero.
pub fn gdl_sum_graph(g: &mut Graph, clean: Var, predicted: Var, alpha: u32) -> Var {
    let shape = g.value(clean).shape().to_vec();
    if shape[2] < 2 || shape[3] < 2 {
        return g.scalar(0.0);
    }
    let rows = axis_gdl_terms(g, clean, predicted, alpha, true);
    let cols = axis_gdl_terms(g, clean, predicted, alpha, false);
    g.add(rows, cols)
}

/// [`gdl`] as a differentiable graph node.
pub fn gdl_graph(g: &mut Graph, clean: Var, predicted: Var, alpha: u32) -> Var {
    let count = g.value(clean).len() as f64;
    let s = gdl_sum_graph(g, clean, predicted, alpha);
    g.scale(s, 1.0 / count)
}

/// [`critic_loss`] as a differentiable graph node.
pub fn critic_loss_graph(g: &mut Graph, d_real: Var, d_fake: Var, gp: Var) -> Var {
    let mf = g.mean_all(d_fake);
    let mr = g.mean_all(d_real);
    let sep = g.sub(mf, mr);
    g.add(sep, gp)
}

/// The generator objective's pieces, kept separate for logging. `gdl` is
/// the weighted contribution (`lambda_2 * gdl`), absent when
/// `lambda_2 = 0`; `l1` is the raw mean absolute error.
pub struct GeneratorLossParts {
    pub total: Var,
    pub adversarial: Var,
    pub l1: Var,
    pub gdl: Option<Var>,
}

/// [`generator_loss`] as a differentiable graph, returning the pieces.
pub fn generator_loss_graph(
    g: &mut Graph,
    d_fake: Var,
    clean: Var,
    predicted: Var,
    weights: &LossWeights,
) -> Result<GeneratorLossParts> {
    weights.validate()?;
    let mf = g.mean_all(d_fake);
    let adversarial = g.neg(mf);
    let l1 = l1_loss_graph(g, clean, predicted);
    let weighted_l1 = g.scale(l1, weights.lambda_1);
    let mut total = g.add(adversarial, weighted_l1);
    let gdl = if weights.lambda_2 > 0.0 {
        let raw = gdl_graph(g, clean, predicted, weights.alpha);
        let weighted = g.scale(raw, weights.lambda_2);
        total = g.add(total, weighted);
        Some(weighted)
    } else {
        None
    };
    Ok(GeneratorLossParts {
        total,
        adversarial,
        l1,
        gdl,
    })
}

/// Gradient-norm penalty at points interpolated between real and fake
/// samples.
///
/// Draws one uniform `u` per batch element (seeded), forms
/// `u * real + (1 - u) * fake`, reduces the critic's output to one scalar
/// per sample by mean, and penalizes the squared deviation of each
/// sample's input-gradient norm from 1, averaged over the batch and
/// scaled by `lambda_gp`. The critic must process samples independently.
/// The returned node is differentiable through the critic's parameters.
pub fn gradient_penalty<F>(
    g: &mut Graph,
    critic: F,
    real: &ArrayD<f64>,
    fake: &ArrayD<f64>,
    lambda_gp: f64,
    epsilon_seed: u64,
) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    check_same_4d(real, fake, "gradient_penalty")?;
    if lambda_gp == 0.0 {
        return Ok(g.scalar(0.0));
    }
    let n = real.shape()[0];
    let mut rng = ChaCha20Rng::seed_from_u64(epsilon_seed);
    let mut mixed = fake.clone();
    for (s, mut sample) in mixed.outer_iter_mut().enumerate() {
        let u: f64 = rng.random();
        let real_sample = real.index_axis(ndarray::Axis(0), s);
        sample.zip_mut_with(&real_sample, |f, &r| *f = u * r + (1.0 - u) * *f);
    }
    let x_hat = g.leaf(mixed);
    let scores = critic(g, x_hat)?;
    let score_shape = g.value(scores).shape().to_vec();
    if score_shape.first() != Some(&n) {
        return Err(Error::Shape(format!(
            "critic output must be batched per sample, got {score_shape:?} for batch {n}"
        )));
    }
    let per_sample_count = g.value(scores).len() / n;
    let sums = g.sum_per_sample(scores);
    let means = g.scale(sums, 1.0 / per_sample_count as f64);
    let total = g.sum_all(means);
    let gx = g.grad(total, &[x_hat])[0];
    let sq = g.square(gx);
    let norms_sq = g.sum_per_sample(sq);
    let safe = g.add_scalar(norms_sq, 1e-12);
    let norms = g.sqrt(safe);
    let dev = g.add_scalar(norms, -1.0);
    let dev_sq = g.square(dev);
    let mean_dev = g.mean_all(dev_sq);
    Ok(g.scale(mean_dev, lambda_gp))
}
