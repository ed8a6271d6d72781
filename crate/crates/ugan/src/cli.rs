//! The `ugan` command: dataset preparation, synthetic distortion,
//! training, restoration, benchmarking, and evaluation as subcommands.
//!
//! Configuration precedence for training is command-line flags over
//! config-file entries over the preset; `--dump-config` prints the fully
//! resolved configuration in the same `key=value` form the config file
//! accepts. Exit codes: 0 success, 1 runtime failure (i/o, bad
//! checkpoint), 2 usage or validation error.

use crate::evalsuite::{run_report, EdgeMetric, EdgeParams, PatchSpec};
use crate::imageio::{image_dimensions, load_image, save_image};
use crate::infer::{benchmark, device_label, restore, RestoreOptions};
use crate::losses::LossWeights;
use crate::pairgen::{build_split, ingest_external_pairs, synth_distort, DatasetManifest, DistortionParams, Split};
use crate::trainer::{train_with, ManifestPairs, TrainConfig};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser, Debug)]
#[command(
    name = "ugan",
    version,
    about = "Adversarial restoration of underwater imagery",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Match clean and distorted directories by stem and write a split manifest
    PrepareData(PrepareDataArgs),
    /// Apply the synthetic underwater distortion to a directory of images
    SynthDistort(SynthDistortArgs),
    /// Train the generator and critic on a manifest's training split
    Train(TrainArgs),
    /// Restore a directory of images with a trained checkpoint
    Infer(InferArgs),
    /// Measure single-image restoration throughput
    Benchmark(BenchmarkArgs),
    /// Compare restored outputs against originals and write a metrics report
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct PrepareDataArgs {
    /// Directory of clean (ground-truth) images
    #[arg(long)]
    clean_dir: PathBuf,
    /// Directory of distorted counterparts, matched by file stem
    #[arg(long)]
    distorted_dir: PathBuf,
    /// Fraction of pairs assigned to the test split, in (0, 1)
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Seed for the split shuffle
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthDistortArgs {
    /// Distortion parameter file (key=value); defaults to the underwater preset
    #[arg(long)]
    params_file: Option<PathBuf>,
    /// Base seed; each image derives its own from this and its position
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of clean input images
    #[arg(long)]
    in_dir: PathBuf,
    /// Directory for distorted outputs (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Adversarial + L1 objective
    Ugan,
    /// Adversarial + L1 + gradient difference objective
    UganP,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Ugan => write!(f, "ugan"),
            Variant::UganP => write!(f, "ugan-p"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ugan" => Ok(Variant::Ugan),
            "ugan-p" => Ok(Variant::UganP),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (ugan, ugan-p)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-scale profile: 256x256 images, deep networks
    Full,
    /// Small fast profile: 64x64 images, shallow networks
    Desk,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Full => write!(f, "full"),
            Preset::Desk => write!(f, "desk"),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest from prepare-data
    #[arg(long, required_unless_present = "dump_config")]
    manifest: Option<PathBuf>,
    /// Output directory for checkpoints and the metrics log
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Base profile supplying image size, architecture, and defaults
    #[arg(long, default_value_t = Preset::Full)]
    preset: Preset,
    /// Optional key=value config file, overridden by explicit flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Objective variant; ugan forces --lambda2 to 0 [default: ugan-p]
    #[arg(long)]
    variant: Option<Variant>,
    /// Training epochs [full-preset default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Images per batch [full-preset default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [full-preset default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Critic updates per generator update [full-preset default: 5]
    #[arg(long)]
    n_critic: Option<usize>,
    /// L1 weight in the generator objective [full-preset default: 100]
    #[arg(long)]
    lambda1: Option<f64>,
    /// Gradient difference weight [full-preset default for ugan-p: 1.0]
    #[arg(long)]
    lambda2: Option<f64>,
    /// Gradient penalty weight in the critic objective [full-preset default: 10]
    #[arg(long)]
    lambda_gp: Option<f64>,
    /// Gradient difference exponent [full-preset default: 1]
    #[arg(long)]
    alpha: Option<u32>,
    /// Seed for initialization, batch order, and penalty draws
    #[arg(long)]
    seed: Option<u64>,
    /// Iterations between periodic checkpoints; 0 keeps only the final one
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Print the resolved configuration and exit without training
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of images to restore
    #[arg(long)]
    in_dir: PathBuf,
    /// Directory for restored outputs (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
    /// Resample outputs back to each input's source resolution
    #[arg(long)]
    resize_to_source: bool,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Timed forward passes after one warm-up [minimum: 10]
    #[arg(long, default_value_t = 10)]
    trials: usize,
}

/// `label=directory` pair naming one method's outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodSpec {
    pub label: String,
    pub dir: PathBuf,
}

impl FromStr for MethodSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (label, dir) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("method `{s}` is not label=directory")))?;
        if label.is_empty() || dir.is_empty() {
            return Err(Error::Config(format!("method `{s}` is not label=directory")));
        }
        Ok(MethodSpec {
            label: label.to_string(),
            dir: PathBuf::from(dir),
        })
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory of original (reference) images
    #[arg(long)]
    original_dir: PathBuf,
    /// Method outputs as label=directory; repeat for several methods
    #[arg(long = "method", required = true)]
    methods: Vec<MethodSpec>,
    /// Patch as label:top,left,height,width; repeat for several patches
    #[arg(long = "patch")]
    patches: Vec<PatchSpec>,
    /// Lower hysteresis threshold on [0,1] gradient magnitude
    #[arg(long, default_value_t = crate::evalsuite::DEFAULT_CANNY_LOW)]
    canny_low: f64,
    /// Upper hysteresis threshold on [0,1] gradient magnitude
    #[arg(long, default_value_t = crate::evalsuite::DEFAULT_CANNY_HIGH)]
    canny_high: f64,
    /// Count disagreeing pixels instead of taking the Euclidean norm
    #[arg(long)]
    pixel_count: bool,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Entry point: parses arguments, dispatches, and maps errors to exit
/// codes (clap itself exits 2 on usage errors).
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) => 1,
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::PrepareData(args) => cmd_prepare_data(args),
        Command::SynthDistort(args) => cmd_synth_distort(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn cmd_prepare_data(args: PrepareDataArgs) -> Result<()> {
    let ingested = ingest_external_pairs(&args.clean_dir, &args.distorted_dir)?;
    for path in &ingested.unmatched_clean {
        eprintln!(
            "warning: clean `{}` has no distorted counterpart",
            path.display()
        );
    }
    for path in &ingested.unmatched_distorted {
        eprintln!(
            "warning: distorted `{}` has no clean counterpart",
            path.display()
        );
    }
    let manifest = build_split(&ingested.manifest, args.test_fraction, args.seed)?;
    manifest.save(&args.out)?;
    let train = manifest.split_entries(Split::Train).count();
    let test = manifest.split_entries(Split::Test).count();
    println!(
        "wrote {} ({} pairs: {} train, {} test)",
        args.out.display(),
        manifest.len(),
        train,
        test
    );
    Ok(())
}

fn list_dir_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
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
    Ok(out.into_values().collect())
}

fn cmd_synth_distort(args: SynthDistortArgs) -> Result<()> {
    let params = match &args.params_file {
        Some(path) => DistortionParams::from_file(path)?,
        None => DistortionParams::underwater(),
    };
    params.validate()?;
    let inputs = list_dir_images(&args.in_dir)?;
    if inputs.is_empty() {
        return Err(Error::Config(format!(
            "no images found in {}",
            args.in_dir.display()
        )));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    for (index, path) in inputs.iter().enumerate() {
        let dims = image_dimensions(path)?;
        let image = load_image(path, dims)?;
        let distorted = synth_distort(&image, &params, args.seed.wrapping_add(index as u64))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .expect("listing only yields utf-8 stems");
        save_image(&distorted, args.out_dir.join(format!("{stem}.png")))?;
    }
    println!("distorted {} images into {}", inputs.len(), args.out_dir.display());
    Ok(())
}

/// The fully resolved training setup: flags over config file over preset.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedTrain {
    pub config: TrainConfig,
    pub variant: Variant,
    pub preset: Preset,
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{} line {}: expected key=value, got `{line}`",
                path.display(),
                number + 1
            ))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parsed<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("config key {key}: cannot parse `{value}`")))
}

/// Applies the precedence rules and the variant's objective shape.
pub fn resolve_train_config(
    preset: Preset,
    config_file: Option<&Path>,
    flag_variant: Option<Variant>,
    flag_epochs: Option<usize>,
    flag_batch_size: Option<usize>,
    flag_lr: Option<f64>,
    flag_n_critic: Option<usize>,
    flag_lambda1: Option<f64>,
    flag_lambda2: Option<f64>,
    flag_lambda_gp: Option<f64>,
    flag_alpha: Option<u32>,
    flag_seed: Option<u64>,
    flag_checkpoint_every: Option<u64>,
) -> Result<ResolvedTrain> {
    let mut config = match preset {
        Preset::Full => TrainConfig::full(),
        Preset::Desk => TrainConfig::desk(),
    };
    let file = match config_file {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut file_variant = None;
    for (key, value) in &file {
        match key.as_str() {
            "variant" => file_variant = Some(value.parse::<Variant>()?),
            "epochs" => config.epochs = parsed(key, value)?,
            "batch_size" => config.batch_size = parsed(key, value)?,
            "lr" => config.learning_rate = parsed(key, value)?,
            "n_critic" => config.n_critic = parsed(key, value)?,
            "lambda1" => config.weights.lambda_1 = parsed(key, value)?,
            "lambda2" => config.weights.lambda_2 = parsed(key, value)?,
            "lambda_gp" => config.weights.lambda_gp = parsed(key, value)?,
            "alpha" => config.weights.alpha = parsed(key, value)?,
            "seed" => config.seed = parsed(key, value)?,
            "checkpoint_every" => config.checkpoint_every = parsed(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (variant, epochs, batch_size, lr, n_critic, \
                     lambda1, lambda2, lambda_gp, alpha, seed, checkpoint_every)"
                )))
            }
        }
    }
    let variant = flag_variant.or(file_variant).unwrap_or(Variant::UganP);
    // The presets carry no gradient difference term; the variant decides
    // the objective shape before explicit weights overlay it.
    config.weights = match variant {
        Variant::Ugan => LossWeights {
            lambda_2: 0.0,
            ..config.weights
        },
        Variant::UganP => LossWeights {
            lambda_2: LossWeights::ugan_p().lambda_2,
            ..config.weights
        },
    };
    if let Some(v) = file.get("lambda2") {
        config.weights.lambda_2 = parsed("lambda2", v)?;
    }
    if let Some(v) = flag_epochs {
        config.epochs = v;
    }
    if let Some(v) = flag_batch_size {
        config.batch_size = v;
    }
    if let Some(v) = flag_lr {
        config.learning_rate = v;
    }
    if let Some(v) = flag_n_critic {
        config.n_critic = v;
    }
    if let Some(v) = flag_lambda1 {
        config.weights.lambda_1 = v;
    }
    if let Some(v) = flag_lambda2 {
        config.weights.lambda_2 = v;
    }
    if let Some(v) = flag_lambda_gp {
        config.weights.lambda_gp = v;
    }
    if let Some(v) = flag_alpha {
        config.weights.alpha = v;
    }
    if let Some(v) = flag_seed {
        config.seed = v;
    }
    if let Some(v) = flag_checkpoint_every {
        config.checkpoint_every = v;
    }
    if variant == Variant::Ugan {
        config.weights.lambda_2 = 0.0;
    }
    config.validate()?;
    Ok(ResolvedTrain {
        config,
        variant,
        preset,
    })
}

/// Renders a resolved configuration in config-file form.
pub fn dump_config(resolved: &ResolvedTrain) -> String {
    let c = &resolved.config;
    let mut out = String::new();
    out.push_str("# resolved training configuration\n");
    out.push_str(&format!("# preset={} image_size={}\n", resolved.preset, c.image_size));
    out.push_str(&format!(
        "# encoder_channels={:?} critic_channels={:?}\n",
        c.generator.encoder_channels, c.critic.channels
    ));
    out.push_str(&format!("variant={}\n", resolved.variant));
    out.push_str(&format!("epochs={}\n", c.epochs));
    out.push_str(&format!("batch_size={}\n", c.batch_size));
    out.push_str(&format!("lr={}\n", c.learning_rate));
    out.push_str(&format!("n_critic={}\n", c.n_critic));
    out.push_str(&format!("lambda1={}\n", c.weights.lambda_1));
    out.push_str(&format!("lambda2={}\n", c.weights.lambda_2));
    out.push_str(&format!("lambda_gp={}\n", c.weights.lambda_gp));
    out.push_str(&format!("alpha={}\n", c.weights.alpha));
    out.push_str(&format!("seed={}\n", c.seed));
    out.push_str(&format!("checkpoint_every={}\n", c.checkpoint_every));
    out
}

fn resolve_from_args(args: &TrainArgs) -> Result<ResolvedTrain> {
    resolve_train_config(
        args.preset,
        args.config.as_deref(),
        args.variant,
        args.epochs,
        args.batch_size,
        args.lr,
        args.n_critic,
        args.lambda1,
        args.lambda2,
        args.lambda_gp,
        args.alpha,
        args.seed,
        args.checkpoint_every,
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let resolved = resolve_from_args(&args)?;
    if args.dump_config {
        print!("{}", dump_config(&resolved));
        return Ok(());
    }
    let manifest_path = args.manifest.expect("clap requires --manifest unless dumping");
    let out_dir = args.out.expect("clap requires --out unless dumping");
    let manifest = DatasetManifest::load(&manifest_path)?;
    let config = resolved.config;
    let source = ManifestPairs::from_split(&manifest, Split::Train, config.image_size);
    let outcome = train_with(&source, &config, &out_dir, |r| {
        println!(
            "iteration {} (epoch {}): critic {:.4}, generator {:.4}, l1 {:.4}, gdl {:.4}, gp {:.4}",
            r.iteration, r.epoch, r.critic_loss, r.gen_loss, r.l1, r.gdl, r.gp
        );
    })?;
    println!(
        "finished {} iterations; checkpoint {}, metrics {}",
        outcome.state.iteration,
        outcome.checkpoint_path.display(),
        outcome.metrics_path.display()
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let inputs = list_dir_images(&args.in_dir)?;
    if inputs.is_empty() {
        return Err(Error::Config(format!(
            "no images found in {}",
            args.in_dir.display()
        )));
    }
    let options = RestoreOptions {
        resize_to_source: args.resize_to_source,
    };
    let outcome = restore(&args.checkpoint, &inputs, &args.out_dir, &options)?;
    for (path, reason) in &outcome.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    println!(
        "restored {} images into {}",
        outcome.written.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let report = benchmark(&args.checkpoint, args.trials, &device_label())?;
    println!("device: {}", report.device_label);
    println!("image size: {0}x{0}", report.image_size);
    println!("trials: {}", report.trials);
    println!("mean seconds per image: {:.6}", report.mean_seconds_per_image);
    println!("fps: {:.2}", report.fps);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let params = EdgeParams {
        low: args.canny_low,
        high: args.canny_high,
        metric: if args.pixel_count {
            EdgeMetric::PixelCount
        } else {
            EdgeMetric::Euclidean
        },
    };
    let methods: Vec<(String, PathBuf)> = args
        .methods
        .iter()
        .map(|m| (m.label.clone(), m.dir.clone()))
        .collect();
    let report = run_report(&args.original_dir, &methods, &args.patches, &params)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", report.render());
    if let Some(path) = &args.out {
        report.save(path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
