//! The adversarial optimization loop: several critic updates per
//! generator update, Adam for both networks, metric logging, and
//! versioned checkpoints.
//!
//! Every random choice (batch order, interpolation draws) is a pure
//! function of the config seed and the counters stored in
//! [`TrainState`], so a checkpoint restores the exact trajectory: resume
//! equals uninterrupted training bit for bit.
//!
//! The metrics log is line-delimited JSON, one record per iteration:
//! `{iteration, epoch, critic_loss, gen_loss, l1, gdl, gp, wall_time}`.
//! `l1` is the raw mean absolute error; `gdl` is the weighted
//! contribution to the generator objective (zero when disabled); `gp` is
//! the weighted penalty from the final critic update of the iteration.
//!
//! Checkpoints begin with the magic string `UGAN-CKPT-1\n`, a little-
//! endian u64 header length, and a JSON header (config, counters, array
//! directory), followed by the arrays as little-endian f64, written
//! atomically via a temporary file.

use crate::graph::Graph;
use crate::imageio::{load_image, stack_nchw};
use crate::losses::{
    critic_loss_graph, generator_loss_graph, gradient_penalty, LossWeights,
};
use crate::nets::{Critic, CriticSpec, Generator, GeneratorSpec, Tensors};
use crate::pairgen::{DatasetManifest, ImagePair, Split};
use crate::{Error, Result};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CHECKPOINT_MAGIC: &[u8] = b"UGAN-CKPT-1\n";

/// Hyperparameters and architecture of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub n_critic: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub image_size: usize,
    /// Iterations between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Full-scale defaults: 256x256, batch 32, five critic updates per
    /// generator update, Adam at 1e-4 with betas (0.5, 0.999), 100 epochs.
    pub fn full() -> Self {
        TrainConfig {
            generator: GeneratorSpec::full(),
            critic: CriticSpec::full(),
            batch_size: 32,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            n_critic: 5,
            epochs: 100,
            weights: LossWeights::ugan(),
            seed: 0,
            image_size: 256,
            checkpoint_every: 0,
        }
    }

    /// Small fast profile: 64x64 images, batch 4, shallow networks. With
    /// an 8-pair dataset its 100 epochs come to exactly 200 iterations.
    pub fn desk() -> Self {
        TrainConfig {
            generator: GeneratorSpec::desk(),
            critic: CriticSpec::desk(),
            batch_size: 4,
            learning_rate: 2e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            n_critic: 5,
            epochs: 100,
            weights: LossWeights::ugan(),
            seed: 0,
            image_size: 64,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.critic.validate()?;
        self.weights.validate()?;
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.n_critic < 1 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.image_size != self.generator.image_size || self.image_size != self.critic.image_size
        {
            return Err(Error::Config(format!(
                "image_size {} disagrees with network specs ({} generator, {} critic)",
                self.image_size, self.generator.image_size, self.critic.image_size
            )));
        }
        Ok(())
    }
}

/// Adam optimizer state for one named parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Tensors,
    pub v: Tensors,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, params: &Tensors) -> Self {
        let zeros = |src: &Tensors| -> Tensors {
            src.iter()
                .map(|(k, a)| (k.clone(), ArrayD::zeros(a.raw_dim())))
                .collect()
        };
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// One bias-corrected update; `grads` must be keyed like `params`.
    pub fn step(&mut self, params: &mut Tensors, grads: &Tensors) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let grad = &grads[name];
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

/// Supplies image pairs by index; the trainer owns the ordering.
pub trait PairSource {
    fn len(&self) -> usize;
    fn load_pair(&self, index: usize) -> Result<ImagePair>;
}

/// Pairs held in memory.
pub struct MemoryPairs(pub Vec<ImagePair>);

impl PairSource for MemoryPairs {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load_pair(&self, index: usize) -> Result<ImagePair> {
        Ok(self.0[index].clone())
    }
}

/// Pairs loaded from the files behind one split of a manifest, resized
/// to the training resolution on load.
pub struct ManifestPairs {
    entries: Vec<(PathBuf, PathBuf)>,
    image_size: usize,
}

impl ManifestPairs {
    pub fn from_split(manifest: &DatasetManifest, split: Split, image_size: usize) -> Self {
        let entries = manifest
            .split_entries(split)
            .map(|e| (e.clean.clone(), e.distorted.clone()))
            .collect();
        ManifestPairs { entries, image_size }
    }
}

impl PairSource for ManifestPairs {
    fn len(&self) -> usize {
        self.entries.len()
    }
    fn load_pair(&self, index: usize) -> Result<ImagePair> {
        let (clean_path, distorted_path) = &self.entries[index];
        let size = (self.image_size, self.image_size);
        ImagePair::new(load_image(clean_path, size)?, load_image(distorted_path, size)?)
    }
}

/// Everything that evolves during training. Counters are monotone; the
/// batch counter alone determines which pairs the next batch holds.
pub struct TrainState {
    pub generator: Generator,
    pub critic: Critic,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
    pub iteration: u64,
    pub epoch: u64,
    pub batch_counter: u64,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

impl TrainState {
    /// Fresh state: seeded network initialization, zeroed optimizers.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let generator = Generator::init(config.generator.clone(), config.seed)?;
        let critic = Critic::init(config.critic.clone(), config.seed.wrapping_add(1))?;
        let gen_opt = Adam::new(
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            &generator.params,
        );
        let critic_opt = Adam::new(
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            &critic.params,
        );
        Ok(TrainState {
            generator,
            critic,
            gen_opt,
            critic_opt,
            iteration: 0,
            epoch: 0,
            batch_counter: 0,
            critic_updates: 0,
            generator_updates: 0,
        })
    }
}

/// Loss values produced by one [`train_iteration`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLosses {
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub l1: f64,
    pub gdl: f64,
    pub gp: f64,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub l1: f64,
    pub gdl: f64,
    pub gp: f64,
    pub wall_time: f64,
}

fn batch_indices(seed: u64, n: usize, batch: usize, batch_counter: u64) -> Vec<usize> {
    let per_pass = (n / batch) as u64;
    let pass = batch_counter / per_pass;
    let slot = (batch_counter % per_pass) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(pass.wrapping_add(1));
    perm.shuffle(&mut rng);
    perm[slot * batch..(slot + 1) * batch].to_vec()
}

fn next_batch(
    state: &mut TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
    let indices = batch_indices(
        config.seed,
        source.len(),
        config.batch_size,
        state.batch_counter,
    );
    state.batch_counter += 1;
    let mut clean = Vec::with_capacity(indices.len());
    let mut distorted = Vec::with_capacity(indices.len());
    for i in indices {
        let pair = source.load_pair(i)?;
        clean.push(pair.clean);
        distorted.push(pair.distorted);
    }
    Ok((stack_nchw(&clean)?, stack_nchw(&distorted)?))
}

fn generate_fake(state: &mut TrainState, distorted: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    let mut g = Graph::new();
    let vars = state.generator.bind(&mut g);
    let x = g.leaf(distorted.clone());
    let y = state.generator.forward(&mut g, &vars, x, true)?;
    Ok(g.value(y).clone())
}

fn critic_step(
    state: &mut TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let (clean, distorted) = next_batch(state, source, config)?;
    let fake = generate_fake(state, &distorted)?;
    let mut g = Graph::new();
    let vars = state.critic.bind(&mut g);
    let real_leaf = g.leaf(clean.clone());
    let fake_leaf = g.leaf(fake.clone());
    let d_real = state.critic.forward(&mut g, &vars, real_leaf)?;
    let d_fake = state.critic.forward(&mut g, &vars, fake_leaf)?;
    let gp_seed = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(state.critic_updates);
    let critic = &state.critic;
    let gp = gradient_penalty(
        &mut g,
        |g, x| critic.forward(g, &vars, x),
        &clean,
        &fake,
        config.weights.lambda_gp,
        gp_seed,
    )?;
    let loss = critic_loss_graph(&mut g, d_real, d_fake, gp);
    let wrt: Vec<_> = vars.values().copied().collect();
    let grad_vars = g.grad(loss, &wrt);
    let grads: Tensors = vars
        .keys()
        .cloned()
        .zip(grad_vars.iter().map(|&v| g.value(v).clone()))
        .collect();
    state.critic_opt.step(&mut state.critic.params, &grads);
    state.critic_updates += 1;
    Ok((g.scalar_value(loss), g.scalar_value(gp)))
}

fn generator_step(
    state: &mut TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let (clean, distorted) = next_batch(state, source, config)?;
    let mut g = Graph::new();
    let gvars = state.generator.bind(&mut g);
    let dvars = state.critic.bind(&mut g);
    let x = g.leaf(distorted);
    let fake = state.generator.forward(&mut g, &gvars, x, true)?;
    let d_fake = state.critic.forward(&mut g, &dvars, fake)?;
    let clean_leaf = g.leaf(clean);
    let parts = generator_loss_graph(&mut g, d_fake, clean_leaf, fake, &config.weights)?;
    let wrt: Vec<_> = gvars.values().copied().collect();
    let grad_vars = g.grad(parts.total, &wrt);
    let grads: Tensors = gvars
        .keys()
        .cloned()
        .zip(grad_vars.iter().map(|&v| g.value(v).clone()))
        .collect();
    state.gen_opt.step(&mut state.generator.params, &grads);
    state.generator_updates += 1;
    let gdl_value = parts.gdl.map_or(0.0, |v| g.scalar_value(v));
    Ok((
        g.scalar_value(parts.total),
        g.scalar_value(parts.l1),
        gdl_value,
    ))
}

/// One full iteration: `n_critic` critic updates, each on a fresh batch,
/// then one generator update on its own fresh batch.
pub fn train_iteration(
    state: &mut TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
) -> Result<IterationLosses> {
    if source.len() < config.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} pairs but the batch size is {}; reduce batch_size",
            source.len(),
            config.batch_size
        )));
    }
    let mut critic_loss = 0.0;
    let mut gp = 0.0;
    for _ in 0..config.n_critic {
        (critic_loss, gp) = critic_step(state, source, config)?;
    }
    let (gen_loss, l1, gdl) = generator_step(state, source, config)?;
    state.iteration += 1;
    Ok(IterationLosses {
        critic_loss,
        gen_loss,
        l1,
        gdl,
        gp,
    })
}

/// Result of a [`train`] run.
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Runs `epochs * floor(N / batch_size)` iterations over the source,
/// appending one metrics record per iteration to `metrics.jsonl` in
/// `out_dir` and writing checkpoints at the configured cadence plus a
/// final one. Epochs count generator batches against the dataset.
pub fn train(source: &dyn PairSource, config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    train_with(source, config, out_dir, |_| {})
}

/// [`train`] with a per-iteration observer (progress printing).
pub fn train_with(
    source: &dyn PairSource,
    config: &TrainConfig,
    out_dir: &Path,
    on_iteration: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    let mut state = TrainState::init(config)?;
    let metrics = run_iterations(&mut state, source, config, out_dir, on_iteration)?;
    let checkpoint_path = out_dir.join("checkpoint_final.ckpt");
    save_checkpoint(&checkpoint_path, &state, config)?;
    Ok(TrainOutcome {
        state,
        metrics,
        checkpoint_path,
        metrics_path: out_dir.join("metrics.jsonl"),
    })
}

/// Continues a loaded state to the configured iteration count, appending
/// to the existing metrics log.
pub fn resume(
    mut state: TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
    out_dir: &Path,
    on_iteration: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    let metrics = run_iterations(&mut state, source, config, out_dir, on_iteration)?;
    let checkpoint_path = out_dir.join("checkpoint_final.ckpt");
    save_checkpoint(&checkpoint_path, &state, config)?;
    Ok(TrainOutcome {
        state,
        metrics,
        checkpoint_path,
        metrics_path: out_dir.join("metrics.jsonl"),
    })
}

fn run_iterations(
    state: &mut TrainState,
    source: &dyn PairSource,
    config: &TrainConfig,
    out_dir: &Path,
    mut on_iteration: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if source.len() < config.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} pairs but the batch size is {}; reduce batch_size",
            source.len(),
            config.batch_size
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let iters_per_epoch = (source.len() / config.batch_size) as u64;
    let target = config.epochs as u64 * iters_per_epoch;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let started = Instant::now();
    let mut records = Vec::new();
    while state.iteration < target {
        let losses = train_iteration(state, source, config)?;
        state.epoch = state.iteration / iters_per_epoch.max(1);
        let record = MetricsRecord {
            iteration: state.iteration,
            epoch: state.epoch,
            critic_loss: losses.critic_loss,
            gen_loss: losses.gen_loss,
            l1: losses.l1,
            gdl: losses.gdl,
            gp: losses.gp,
            wall_time: started.elapsed().as_secs_f64(),
        };
        use std::io::Write;
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Config(format!("cannot encode metrics record: {e}")))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        on_iteration(&record);
        records.push(record);
        if config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", state.iteration));
            save_checkpoint(&path, state, config)?;
        }
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    iteration: u64,
    epoch: u64,
    batch_counter: u64,
    critic_updates: u64,
    generator_updates: u64,
    gen_opt_t: u64,
    critic_opt_t: u64,
    arrays: Vec<ArrayMeta>,
}

fn named_arrays<'a>(state: &'a TrainState) -> Vec<(String, &'a ArrayD<f64>)> {
    let mut out = Vec::new();
    for (k, a) in &state.generator.params {
        out.push((format!("gen.{k}"), a));
    }
    for (k, a) in &state.generator.buffers {
        out.push((format!("genbuf.{k}"), a));
    }
    for (k, a) in &state.critic.params {
        out.push((format!("critic.{k}"), a));
    }
    for (k, a) in &state.gen_opt.m {
        out.push((format!("adamg.m.{k}"), a));
    }
    for (k, a) in &state.gen_opt.v {
        out.push((format!("adamg.v.{k}"), a));
    }
    for (k, a) in &state.critic_opt.m {
        out.push((format!("adamd.m.{k}"), a));
    }
    for (k, a) in &state.critic_opt.v {
        out.push((format!("adamd.v.{k}"), a));
    }
    out
}

/// Serializes the full training state, atomically (temp file + rename).
pub fn save_checkpoint(path: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    let arrays = named_arrays(state);
    let header = CheckpointHeader {
        config: config.clone(),
        iteration: state.iteration,
        epoch: state.epoch,
        batch_counter: state.batch_counter,
        critic_updates: state.critic_updates,
        generator_updates: state.generator_updates,
        gen_opt_t: state.gen_opt.t,
        critic_opt_t: state.critic_opt.t,
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayMeta {
                name: name.clone(),
                shape: a.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    let mut bytes = Vec::with_capacity(
        CHECKPOINT_MAGIC.len() + 8 + header_json.len() + arrays.iter().map(|(_, a)| a.len() * 8).sum::<usize>(),
    );
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, a) in &arrays {
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a checkpoint back into a state and its config.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: file too short for magic", path.display())))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a checkpoint of a known version",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header length", path.display())))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let expected: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>() * 8).sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: payload holds {} bytes, directory expects {expected}",
            path.display(),
            payload.len()
        )));
    }
    let mut offset = 0;
    let mut groups: IndexMap<String, Tensors> = IndexMap::new();
    for meta in &header.arrays {
        let count: usize = meta.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let start = offset + i * 8;
            data.push(f64::from_le_bytes(
                payload[start..start + 8].try_into().unwrap(),
            ));
        }
        offset += count * 8;
        let arr = ArrayD::from_shape_vec(IxDyn(&meta.shape), data)
            .map_err(|e| Error::Checkpoint(format!("array {}: {e}", meta.name)))?;
        let (group, key) = meta
            .name
            .split_once('.')
            .and_then(|(g, rest)| {
                if g == "adamg" || g == "adamd" {
                    rest.split_once('.').map(|(mv, k)| (format!("{g}.{mv}"), k))
                } else {
                    Some((g.to_string(), rest))
                }
            })
            .ok_or_else(|| Error::Checkpoint(format!("unparseable array name {}", meta.name)))?;
        groups.entry(group).or_default().insert(key.to_string(), arr);
    }
    let mut take = |name: &str| -> Tensors {
        groups.shift_remove(name).unwrap_or_default()
    };
    let config = header.config;
    config.validate()?;
    let generator =
        Generator::from_parts(config.generator.clone(), take("gen"), take("genbuf"))?;
    let critic = Critic::from_parts(config.critic.clone(), take("critic"))?;
    let check_moments = |m: &Tensors, params: &Tensors, what: &str| -> Result<()> {
        if m.len() != params.len()
            || m.iter()
                .any(|(k, a)| params.get(k).is_none_or(|p| p.shape() != a.shape()))
        {
            return Err(Error::Checkpoint(format!(
                "{what} optimizer moments do not match parameters"
            )));
        }
        Ok(())
    };
    let mut gen_opt = Adam::new(
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        &generator.params,
    );
    gen_opt.m = take("adamg.m");
    gen_opt.v = take("adamg.v");
    gen_opt.t = header.gen_opt_t;
    check_moments(&gen_opt.m, &generator.params, "generator")?;
    check_moments(&gen_opt.v, &generator.params, "generator")?;
    let mut critic_opt = Adam::new(
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        &critic.params,
    );
    critic_opt.m = take("adamd.m");
    critic_opt.v = take("adamd.v");
    critic_opt.t = header.critic_opt_t;
    check_moments(&critic_opt.m, &critic.params, "critic")?;
    check_moments(&critic_opt.v, &critic.params, "critic")?;
    Ok((
        TrainState {
            generator,
            critic,
            gen_opt,
            critic_opt,
            iteration: header.iteration,
            epoch: header.epoch,
            batch_counter: header.batch_counter,
            critic_updates: header.critic_updates,
            generator_updates: header.generator_updates,
        },
        config,
    ))
}
