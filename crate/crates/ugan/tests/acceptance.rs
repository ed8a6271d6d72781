//! Acceptance checks covering losses, penalty analytics, gradients,
//! architecture contracts, training dynamics, determinism, metrics, and
//! the command-line pipeline. Each test owns one numbered criterion and
//! prints a single PASS or FAIL line; run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1` to see
//! the scoreboard in order.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;
use ugan::evalsuite::{
    canny_edges, edge_distance, patch_stats, run_report, EdgeParams, PatchSpec, DEFAULT_CANNY_HIGH,
    DEFAULT_CANNY_LOW,
};
use ugan::graph::Graph;
use ugan::imageio::{normalize, save_image, stack_nchw, ImageTensor};
use ugan::losses::{
    gdl, gdl_sum, generator_loss_graph, gradient_penalty, l1_loss, LossWeights,
};
use ugan::nets::{Critic, CriticSpec, Generator, GeneratorSpec};
use ugan::pairgen::{synth_distort, DistortionParams, ImagePair};
use ugan::trainer::{
    load_checkpoint, save_checkpoint, train, train_iteration, MemoryPairs, TrainConfig, TrainState,
};

struct Scoreboard {
    number: usize,
    what: &'static str,
    done: bool,
}

impl Drop for Scoreboard {
    fn drop(&mut self) {
        let verdict = if self.done { "PASS" } else { "FAIL" };
        println!("criterion {:2}: {verdict}  {}", self.number, self.what);
    }
}

fn criterion(number: usize, what: &'static str) -> Scoreboard {
    Scoreboard {
        number,
        what,
        done: false,
    }
}

fn random_nchw(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

/// Blocky test image whose step edges survive Gaussian smoothing.
fn structured_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = 4 + (seed % 3) as usize;
    let coarse = normalize(&Array3::from_shape_fn((g, g, 3), |_| rng.random()));
    let data = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
        coarse.data()[[(i * g / h).min(g - 1), (j * g / w).min(g - 1), c]]
    });
    ImageTensor::new(data).unwrap()
}

/// Binary blocks at +-0.8: luma steps strong enough for the edge detector to
/// find reliably, and that a contrast-crushing distortion erases entirely.
fn contrast_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = 4 + (seed % 3) as usize;
    let coarse =
        Array3::from_shape_fn((g, g, 3), |_| if rng.random::<bool>() { 0.8 } else { -0.8 });
    let data = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
        coarse[[(i * g / h).min(g - 1), (j * g / w).min(g - 1), c]]
    });
    ImageTensor::new(data).unwrap()
}

fn training_pairs(count: usize, size: usize, base_seed: u64) -> Vec<ImagePair> {
    let params = DistortionParams::underwater();
    (0..count as u64)
        .map(|i| {
            let clean = structured_image(size, size, base_seed + i);
            let distorted = synth_distort(&clean, &params, base_seed + 400 + i).unwrap();
            ImagePair::new(clean, distorted).unwrap()
        })
        .collect()
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        generator: GeneratorSpec {
            image_size: 16,
            encoder_channels: vec![4, 8],
            first_layer_norm: false,
        },
        critic: CriticSpec {
            image_size: 16,
            channels: vec![4, 8],
        },
        batch_size: 2,
        learning_rate: 1e-3,
        adam_beta1: 0.5,
        adam_beta2: 0.999,
        n_critic: 5,
        epochs: 1,
        weights: LossWeights::ugan_p(),
        seed,
        image_size: 16,
        checkpoint_every: 0,
    }
}

fn ugan_bin(args: &[&str], label: &str) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ugan"))
        .args(args)
        .output()
        .unwrap_or_else(|e| panic!("failed to launch `{label}`: {e}"));
    assert!(
        out.status.success(),
        "`{label}` exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_images(
    dir: &Path,
    count: usize,
    size: usize,
    base_seed: u64,
    make: fn(usize, usize, u64) -> ImageTensor,
) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count as u64 {
        let img = make(size, size, base_seed + i);
        save_image(&img, dir.join(format!("img{i:02}.png"))).unwrap();
    }
}

#[test]
fn criterion_01_loss_oracles() {
    let mut score = criterion(1, "loss values match brute-force per-element summation");
    let started = Instant::now();
    for case in 0..50u64 {
        let a = random_nchw(&[1, 3, 8, 8], 1000 + case);
        let b = random_nchw(&[1, 3, 8, 8], 2000 + case);

        let mut l1_oracle = 0.0;
        let mut count = 0usize;
        for s in 0..1 {
            for k in 0..3 {
                for j in 0..8 {
                    for i in 0..8 {
                        l1_oracle += (a[[s, k, i, j]] - b[[s, k, i, j]]).abs();
                        count += 1;
                    }
                }
            }
        }
        l1_oracle /= count as f64;

        let sum_oracle = |alpha: i32| -> f64 {
            let mut total = 0.0;
            for s in 0..1 {
                for k in 0..3 {
                    for j in 0..8 {
                        for i in 1..8 {
                            let da = (a[[s, k, i, j]] - a[[s, k, i - 1, j]]).abs();
                            let db = (b[[s, k, i, j]] - b[[s, k, i - 1, j]]).abs();
                            total += (da - db).abs().powi(alpha);
                        }
                    }
                    for j in 1..8 {
                        for i in 0..8 {
                            let da = (a[[s, k, i, j - 1]] - a[[s, k, i, j]]).abs();
                            let db = (b[[s, k, i, j - 1]] - b[[s, k, i, j]]).abs();
                            total += (da - db).abs().powi(alpha);
                        }
                    }
                }
            }
            total
        };

        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-12);
        assert!(rel(l1_loss(&a, &b).unwrap(), l1_oracle) < 1e-6, "l1 case {case}");
        let n = a.len() as f64;
        assert!(
            rel(gdl(&a, &b, 1).unwrap(), sum_oracle(1) / n) < 1e-6,
            "gdl alpha 1 case {case}"
        );
        assert!(
            rel(gdl(&a, &b, 2).unwrap(), sum_oracle(2) / n) < 1e-6,
            "gdl alpha 2 case {case}"
        );
        assert!(
            rel(gdl_sum(&a, &b, 1).unwrap(), sum_oracle(1)) < 1e-6,
            "gdl sum case {case}"
        );
    }
    assert!(started.elapsed().as_secs_f64() < 10.0, "oracle sweep too slow");
    score.done = true;
}

#[test]
fn criterion_02_gradient_penalty_analytic() {
    let mut score = criterion(2, "penalty equals 2.5 for a mean critic and 10.0 for a sum critic");
    let real = random_nchw(&[3, 1, 2, 2], 21);
    let fake = random_nchw(&[3, 1, 2, 2], 22);

    let mut g = Graph::new();
    let p = gradient_penalty(&mut g, |_, x| Ok(x), &real, &fake, 10.0, 77).unwrap();
    let mean_penalty = g.scalar_value(p);
    assert!(
        (mean_penalty - 2.5).abs() < 1e-5,
        "mean critic penalty {mean_penalty}"
    );

    let mut g = Graph::new();
    let p = gradient_penalty(&mut g, |g, x| Ok(g.sum_per_sample(x)), &real, &fake, 10.0, 78)
        .unwrap();
    let sum_penalty = g.scalar_value(p);
    assert!(
        (sum_penalty - 10.0).abs() < 1e-5,
        "sum critic penalty {sum_penalty}"
    );
    score.done = true;
}

#[test]
fn criterion_03_generator_loss_finite_differences() {
    let mut score = criterion(3, "generator objective gradients match central differences");
    let critic = Critic::init(
        CriticSpec {
            image_size: 16,
            channels: vec![4, 8],
        },
        9,
    )
    .unwrap();
    let clean = random_nchw(&[1, 3, 16, 16], 31);
    let pred = random_nchw(&[1, 3, 16, 16], 32);
    let weights = LossWeights::ugan_p();

    let eval = |point: &ArrayD<f64>| -> f64 {
        let mut g = Graph::new();
        let vars = critic.bind(&mut g);
        let p = g.leaf(point.clone());
        let c = g.leaf(clean.clone());
        let d_fake = critic.forward(&mut g, &vars, p).unwrap();
        let parts = generator_loss_graph(&mut g, d_fake, c, p, &weights).unwrap();
        g.scalar_value(parts.total)
    };

    let mut g = Graph::new();
    let vars = critic.bind(&mut g);
    let p = g.leaf(pred.clone());
    let c = g.leaf(clean.clone());
    let d_fake = critic.forward(&mut g, &vars, p).unwrap();
    let parts = generator_loss_graph(&mut g, d_fake, c, p, &weights).unwrap();
    let grad_var = g.grad(parts.total, &[p])[0];
    let analytic = g.value(grad_var).clone();

    let h = 1e-3;
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    for probe in 0..20 {
        let idx = [
            0,
            rng.random_range(0..3),
            rng.random_range(0..16),
            rng.random_range(0..16),
        ];
        let mut plus = pred.clone();
        plus[IxDyn(&idx)] += h;
        let mut minus = pred.clone();
        minus[IxDyn(&idx)] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let an = analytic[IxDyn(&idx)];
        let rel = (fd - an).abs() / an.abs().max(1e-9);
        assert!(rel < 1e-3, "probe {probe} at {idx:?}: fd {fd} vs analytic {an}");
    }
    score.done = true;
}

#[test]
fn criterion_04_architecture_contracts() {
    let mut score = criterion(
        4,
        "full-size nets keep their output contracts and the critic has no normalization",
    );
    let started = Instant::now();
    let x = random_nchw(&[1, 3, 256, 256], 41);

    let mut gen = Generator::init(GeneratorSpec::full(), 4).unwrap();
    let y = gen.run(&x).unwrap();
    assert_eq!(y.shape(), &[1, 3, 256, 256]);
    assert!(y.iter().all(|v| v.abs() < 1.0), "outputs must stay inside (-1, 1)");

    let critic = Critic::init(CriticSpec::full(), 5).unwrap();
    let d = critic.run(&x).unwrap();
    assert_eq!(d.shape(), &[1, 1, 32, 32]);
    assert!(!critic.has_normalization());

    assert!(started.elapsed().as_secs_f64() < 30.0, "architecture pass too slow");
    score.done = true;
}

#[test]
fn criterion_05_update_ratio() {
    let mut score = criterion(5, "20 iterations yield exactly 100 critic and 20 generator updates");
    let config = tiny_config(51);
    let source = MemoryPairs(training_pairs(4, 16, 5100));
    let mut state = TrainState::init(&config).unwrap();
    for _ in 0..20 {
        train_iteration(&mut state, &source, &config).unwrap();
    }
    assert_eq!(state.critic_updates, 100);
    assert_eq!(state.generator_updates, 20);
    score.done = true;
}

#[test]
fn criterion_06_desk_overfit_trend() {
    let mut score = criterion(
        6,
        "200 desk iterations cut training-set L1 below 25% of its first value",
    );
    let started = Instant::now();
    let source = MemoryPairs(training_pairs(8, 64, 100));
    let config = TrainConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&source, &config, dir.path()).unwrap();

    assert_eq!(outcome.metrics.len(), 200);
    for r in &outcome.metrics {
        assert!(
            r.critic_loss.is_finite()
                && r.gen_loss.is_finite()
                && r.l1.is_finite()
                && r.gdl.is_finite()
                && r.gp.is_finite(),
            "non-finite loss at iteration {}",
            r.iteration
        );
    }

    let first_l1 = outcome.metrics[0].l1;
    let mut state = outcome.state;
    let mut final_l1 = 0.0;
    for pair in &source.0 {
        let clean = stack_nchw(std::slice::from_ref(&pair.clean)).unwrap();
        let distorted = stack_nchw(std::slice::from_ref(&pair.distorted)).unwrap();
        let restored = state.generator.run(&distorted).unwrap();
        final_l1 += l1_loss(&clean, &restored).unwrap();
    }
    final_l1 /= source.0.len() as f64;

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        final_l1 < 0.25 * first_l1,
        "training-set L1 {final_l1:.4} is not below 25% of iteration-1 L1 {first_l1:.4}"
    );
    assert!(elapsed <= 300.0, "overfit run took {elapsed:.0}s, budget is 300s");
    score.done = true;
}

#[test]
fn criterion_07_determinism_and_resume() {
    let mut score = criterion(
        7,
        "fixed seeds reproduce loss logs and checkpoint resume is bit-exact",
    );
    let config = tiny_config(71);
    let source = MemoryPairs(training_pairs(4, 16, 7100));

    let run = |iterations: usize| {
        let mut state = TrainState::init(&config).unwrap();
        let mut losses = Vec::new();
        for _ in 0..iterations {
            losses.push(train_iteration(&mut state, &source, &config).unwrap());
        }
        (state, losses)
    };

    let (reference_state, reference) = run(10);
    let (_, repeat) = run(10);
    for (a, b) in reference.iter().zip(&repeat) {
        assert_eq!(a.critic_loss.to_bits(), b.critic_loss.to_bits());
        assert_eq!(a.gen_loss.to_bits(), b.gen_loss.to_bits());
        assert_eq!(a.l1.to_bits(), b.l1.to_bits());
        assert_eq!(a.gdl.to_bits(), b.gdl.to_bits());
        assert_eq!(a.gp.to_bits(), b.gp.to_bits());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut state = TrainState::init(&config).unwrap();
    for _ in 0..5 {
        train_iteration(&mut state, &source, &config).unwrap();
    }
    save_checkpoint(&path, &state, &config).unwrap();
    let (mut resumed, loaded_config) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_config.seed, config.seed);
    for i in 5..10 {
        let l = train_iteration(&mut resumed, &source, &config).unwrap();
        assert_eq!(l.gen_loss.to_bits(), reference[i].gen_loss.to_bits());
        assert_eq!(l.critic_loss.to_bits(), reference[i].critic_loss.to_bits());
    }
    let exact = |a: &ArrayD<f64>, b: &ArrayD<f64>| {
        a.shape() == b.shape()
            && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    for (name, p) in reference_state.generator.params.iter() {
        assert!(exact(p, &resumed.generator.params[name]), "generator {name} diverged");
    }
    for (name, p) in reference_state.generator.buffers.iter() {
        assert!(exact(p, &resumed.generator.buffers[name]), "buffer {name} diverged");
    }
    for (name, p) in reference_state.critic.params.iter() {
        assert!(exact(p, &resumed.critic.params[name]), "critic {name} diverged");
    }
    score.done = true;
}

#[test]
fn criterion_08_metrics_suite() {
    let mut score = criterion(
        8,
        "edge distances, patch statistics, step localization, and report means check out",
    );
    let params = EdgeParams::default();

    let mut populated = 0;
    for case in 0..20u64 {
        let a = contrast_image(48, 48, 8000 + case);
        let b = contrast_image(48, 48, 8100 + case);
        assert_eq!(edge_distance(&a, &a, &params).unwrap(), 0.0, "case {case}");
        let ab = edge_distance(&a, &b, &params).unwrap();
        let ba = edge_distance(&b, &a, &params).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits(), "case {case}");
        if canny_edges(&a, DEFAULT_CANNY_LOW, DEFAULT_CANNY_HIGH).iter().any(|&e| e == 1) {
            populated += 1;
        }
    }
    assert_eq!(populated, 20, "only {populated}/20 edge maps were non-empty");

    let full = PatchSpec {
        label: "full".into(),
        top: 0,
        left: 0,
        height: 64,
        width: 64,
    };
    let flat = ImageTensor::new(Array3::from_elem((64, 64, 3), 0.0)).unwrap();
    let (mean, std) = patch_stats(&flat, &full).unwrap();
    assert!((mean - 0.5).abs() < 1e-12 && std.abs() < 1e-12);

    let halves = ImageTensor::new(Array3::from_shape_fn((64, 64, 3), |(_, j, _)| {
        if j < 32 {
            -1.0
        } else {
            1.0
        }
    }))
    .unwrap();
    let (mean, std) = patch_stats(&halves, &full).unwrap();
    assert!((mean - 0.5).abs() < 1e-12 && (std - 0.5).abs() < 1e-12);

    let step = ImageTensor::new(Array3::from_shape_fn((64, 64, 3), |(_, j, _)| {
        if j < 32 {
            -0.6
        } else {
            0.6
        }
    }))
    .unwrap();
    let edges = canny_edges(&step, DEFAULT_CANNY_LOW, DEFAULT_CANNY_HIGH);
    for i in 0..64 {
        assert!((0..64).any(|j| edges[[i, j]] == 1), "row {i} lost the step edge");
    }
    for ((_, j), &e) in edges.indexed_iter() {
        if e == 1 {
            assert!(
                (31..=33).contains(&j),
                "edge pixel at column {j}, expected within one column of 32"
            );
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let originals = dir.path().join("originals");
    let copies = dir.path().join("copies");
    let dimmed = dir.path().join("dimmed");
    std::fs::create_dir_all(&originals).unwrap();
    std::fs::create_dir_all(&copies).unwrap();
    std::fs::create_dir_all(&dimmed).unwrap();
    for i in 0..3u64 {
        let img = structured_image(64, 64, 8800 + i);
        let name = format!("img{i}.png");
        save_image(&img, originals.join(&name)).unwrap();
        save_image(&img, copies.join(&name)).unwrap();
        let dim = ImageTensor::new(img.data().mapv(|v| 0.8 * v)).unwrap();
        save_image(&dim, dimmed.join(&name)).unwrap();
    }
    let patch = PatchSpec {
        label: "p".into(),
        top: 8,
        left: 8,
        height: 32,
        width: 32,
    };
    let report = run_report(
        &originals,
        &[
            ("copies".to_string(), copies),
            ("dimmed".to_string(), dimmed),
        ],
        std::slice::from_ref(&patch),
        &params,
    )
    .unwrap();
    let manual = |method: &str, metric: &str, patch: Option<&str>| -> f64 {
        let picked: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| {
                r.method == method && r.metric == metric && r.patch.as_deref() == patch
            })
            .map(|r| r.value)
            .collect();
        assert!(!picked.is_empty(), "no rows for {method}/{metric}");
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    for method in ["copies", "dimmed"] {
        for (metric, patch) in [
            ("edge_distance", None),
            ("patch_gdl", Some("p")),
            ("patch_mean", Some("p")),
            ("patch_std", Some("p")),
        ] {
            let reported = report.mean(method, metric, patch).unwrap();
            assert!(
                (reported - manual(method, metric, patch)).abs() < 1e-9,
                "mean mismatch for {method}/{metric}"
            );
        }
    }
    score.done = true;
}

#[test]
fn criterion_09_end_to_end_smoke() {
    let mut score = criterion(
        9,
        "the full pipeline runs clean and restores edges on most held-out images",
    );
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let clean = root.join("clean");
    write_images(&clean, 11, 64, 9000, contrast_image);

    // Crush contrast (strong haze, no blur): every edge drops below the
    // detector's thresholds, yet boundaries stay at their exact pixels, so a
    // restoration that re-amplifies contrast is rewarded cleanly. Blur would
    // instead demand deconvolution, whose recovered edges often land one pixel
    // off and score as both a miss and a spurious edge.
    let params_file = root.join("distort.params");
    std::fs::write(
        &params_file,
        "red_attenuation = 0.3\n\
         haze_color = -0.2, 0.15, 0.3\n\
         haze_strength = 0.75\n\
         blur_radius = 0\n\
         noise_std = 0.02\n",
    )
    .unwrap();

    let distorted = root.join("distorted");
    ugan_bin(
        &[
            "synth-distort",
            "--params-file",
            params_file.to_str().unwrap(),
            "--in-dir",
            clean.to_str().unwrap(),
            "--out-dir",
            distorted.to_str().unwrap(),
            "--seed",
            "3",
        ],
        "synth-distort",
    );

    let manifest = root.join("manifest.tsv");
    ugan_bin(
        &[
            "prepare-data",
            "--clean-dir",
            clean.to_str().unwrap(),
            "--distorted-dir",
            distorted.to_str().unwrap(),
            "--test-fraction",
            "0.25",
            "--seed",
            "7",
            "--out",
            manifest.to_str().unwrap(),
        ],
        "prepare-data",
    );

    let run_dir = root.join("run");
    ugan_bin(
        &[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--preset",
            "desk",
            "--seed",
            "11",
            "--out",
            run_dir.to_str().unwrap(),
        ],
        "train",
    );

    let test_clean = root.join("test_clean");
    let test_distorted = root.join("test_distorted");
    std::fs::create_dir_all(&test_clean).unwrap();
    std::fs::create_dir_all(&test_distorted).unwrap();
    let mut test_stems = Vec::new();
    for line in std::fs::read_to_string(&manifest).unwrap().lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[2] == "test" {
            let c = PathBuf::from(fields[0]);
            let d = PathBuf::from(fields[1]);
            std::fs::copy(&c, test_clean.join(c.file_name().unwrap())).unwrap();
            std::fs::copy(&d, test_distorted.join(d.file_name().unwrap())).unwrap();
            test_stems.push(c.file_stem().unwrap().to_string_lossy().into_owned());
        }
    }
    assert_eq!(test_stems.len(), 3, "expected a 3-image test split");

    let restored = root.join("restored");
    ugan_bin(
        &[
            "infer",
            "--checkpoint",
            run_dir.join("checkpoint_final.ckpt").to_str().unwrap(),
            "--in-dir",
            test_distorted.to_str().unwrap(),
            "--out-dir",
            restored.to_str().unwrap(),
        ],
        "infer",
    );

    let report_path = root.join("report.tsv");
    let out = ugan_bin(
        &[
            "evaluate",
            "--original-dir",
            test_clean.to_str().unwrap(),
            "--method",
            &format!("restored={}", restored.display()),
            "--method",
            &format!("distorted={}", test_distorted.display()),
            "--out",
            report_path.to_str().unwrap(),
        ],
        "evaluate",
    );
    assert!(!out.stdout.is_empty(), "evaluate printed nothing");

    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(!report.is_empty(), "report file is empty");
    let mut distance = std::collections::BTreeMap::new();
    for line in report.lines() {
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() == 5 && fields[2] == "edge_distance" {
            distance.insert(
                (fields[0].to_string(), fields[1].to_string()),
                fields[4].parse::<f64>().unwrap(),
            );
        }
    }
    let mut improved = 0;
    for stem in &test_stems {
        let r = distance[&("restored".to_string(), stem.clone())];
        let d = distance[&("distorted".to_string(), stem.clone())];
        if r < d {
            improved += 1;
        }
    }
    assert!(
        improved * 10 >= test_stems.len() * 6,
        "edges improved on only {improved}/{} test images",
        test_stems.len()
    );
    score.done = true;
}

#[test]
fn criterion_10_variant_wiring() {
    let mut score = criterion(
        10,
        "the ugan variant logs zero gradient-difference weight and ugan-p logs nonzero",
    );
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let clean = root.join("clean");
    write_images(&clean, 5, 64, 10_000, structured_image);

    let distorted = root.join("distorted");
    ugan_bin(
        &[
            "synth-distort",
            "--in-dir",
            clean.to_str().unwrap(),
            "--out-dir",
            distorted.to_str().unwrap(),
        ],
        "synth-distort",
    );
    let manifest = root.join("manifest.tsv");
    ugan_bin(
        &[
            "prepare-data",
            "--clean-dir",
            clean.to_str().unwrap(),
            "--distorted-dir",
            distorted.to_str().unwrap(),
            "--test-fraction",
            "0.2",
            "--out",
            manifest.to_str().unwrap(),
        ],
        "prepare-data",
    );

    let gdl_log = |variant: &str, epochs: &str, out: &Path| -> Vec<f64> {
        ugan_bin(
            &[
                "train",
                "--manifest",
                manifest.to_str().unwrap(),
                "--preset",
                "desk",
                "--variant",
                variant,
                "--epochs",
                epochs,
                "--out",
                out.to_str().unwrap(),
            ],
            "train",
        );
        std::fs::read_to_string(out.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["gdl"]
                    .as_f64()
                    .unwrap()
            })
            .collect()
    };

    let plain = gdl_log("ugan", "2", &root.join("run_ugan"));
    assert_eq!(plain.len(), 2);
    assert!(plain.iter().all(|&v| v == 0.0), "ugan logged nonzero gdl: {plain:?}");

    let full = gdl_log("ugan-p", "1", &root.join("run_ugan_p"));
    assert!(full[0] != 0.0, "ugan-p logged zero gdl at iteration 1");
    score.done = true;
}
