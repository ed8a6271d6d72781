//! The two networks: a U-Net encoder-decoder generator and a patch critic.
//!
//! Both are built from 4x4 convolutions. Encoder and critic blocks use
//! stride 2 with uniform padding 1, halving the spatial extent; decoder
//! blocks use stride-2 transpose convolutions, doubling it. The critic's
//! two final convolutions keep stride 1 with asymmetric padding (2 before,
//! 1 after on each axis) so a 4x4 kernel preserves the map size.
//!
//! Parameters and running statistics live in name-keyed ordered maps so
//! that optimizer state, checkpoints, and gradient lists all align by
//! construction order.

use crate::conv::{ConvGeom, Pad};
use crate::graph::{Graph, Var};
use crate::{Error, Result};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;

/// Named parameter or buffer arrays, iterated in construction order.
pub type Tensors = IndexMap<String, ArrayD<f64>>;

/// Architecture of the generator.
///
/// `encoder_channels` lists the output width of each stride-2 encoder
/// block; the decoder mirrors them in reverse, receiving each encoder
/// activation through a skip connection (encoder block i feeds decoder
/// block n-i+1). Batch normalization follows every encoder convolution
/// except, by default, the first; the decoder has none. The final decoder
/// block maps to 3 channels under a hyperbolic tangent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub image_size: usize,
    pub encoder_channels: Vec<usize>,
    pub first_layer_norm: bool,
}

impl GeneratorSpec {
    /// Full-scale configuration for 256x256 inputs.
    pub fn full() -> Self {
        GeneratorSpec {
            image_size: 256,
            encoder_channels: vec![64, 128, 256, 512, 512, 512, 512, 512],
            first_layer_norm: false,
        }
    }

    /// Small configuration for fast 64x64 runs.
    pub fn desk() -> Self {
        GeneratorSpec {
            image_size: 64,
            encoder_channels: vec![32, 64, 128, 128],
            first_layer_norm: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth();
        if n < 2 {
            return Err(Error::Config(format!(
                "generator needs at least 2 encoder blocks, got {n}"
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("encoder channel widths must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % (1 << n) != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^{n}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Architecture of the critic.
///
/// The first `len - 1` channel widths are stride-2 blocks; the last is a
/// stride-1 block at the final resolution, followed by a stride-1
/// projection to a single channel with no output nonlinearity and no
/// normalization anywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub image_size: usize,
    pub channels: Vec<usize>,
}

impl CriticSpec {
    /// Full-scale configuration: 256x256 input, 32x32 output map.
    pub fn full() -> Self {
        CriticSpec {
            image_size: 256,
            channels: vec![64, 128, 256, 512],
        }
    }

    /// Small configuration paired with [`GeneratorSpec::desk`].
    pub fn desk() -> Self {
        CriticSpec {
            image_size: 64,
            channels: vec![8, 16],
        }
    }

    /// Spatial side length of the output patch map.
    pub fn output_size(&self) -> usize {
        self.image_size >> (self.channels.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config(format!(
                "critic needs at least 2 channel widths, got {}",
                self.channels.len()
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("critic channel widths must be positive".into()));
        }
        let halvings = self.channels.len() - 1;
        if self.image_size == 0 || self.image_size % (1 << halvings) != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^{halvings}",
                self.image_size
            )));
        }
        Ok(())
    }
}

fn gaussian(shape: &[usize], rng: &mut ChaCha20Rng) -> ArrayD<f64> {
    let dist = Normal::new(0.0, INIT_STD).expect("constant parameters are valid");
    ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
}

fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

fn check_same_skeleton(built: &Tensors, given: &Tensors, what: &str) -> Result<()> {
    if built.len() != given.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {} arrays, got {}",
            built.len(),
            given.len()
        )));
    }
    for (name, arr) in built {
        match given.get(name) {
            None => {
                return Err(Error::Checkpoint(format!("{what}: missing array `{name}`")))
            }
            Some(g) if g.shape() != arr.shape() => {
                return Err(Error::Checkpoint(format!(
                    "{what}: array `{name}` has shape {:?}, expected {:?}",
                    g.shape(),
                    arr.shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// U-Net generator: weights, batch-norm parameters, and running
/// statistics. Forward passes in training mode update the running
/// statistics; evaluation mode reads them as constants.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    pub params: Tensors,
    pub buffers: Tensors,
}

impl Generator {
    /// Seeded Gaussian initialization: convolution weights drawn from
    /// N(0, 0.02^2), biases zero, batch-norm gain 1 and shift 0.
    pub fn init(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = spec.depth();
        let enc = &spec.encoder_channels;
        let mut params = Tensors::new();
        let mut buffers = Tensors::new();

        let mut in_ch = 3;
        for i in 1..=n {
            let out_ch = enc[i - 1];
            params.insert(
                format!("enc{i}.w"),
                gaussian(&[out_ch, in_ch, KERNEL, KERNEL], &mut rng),
            );
            if i == 1 && !spec.first_layer_norm {
                params.insert(format!("enc{i}.b"), zeros(&[out_ch]));
            } else {
                params.insert(format!("enc{i}.bn.gamma"), ArrayD::ones(IxDyn(&[out_ch])));
                params.insert(format!("enc{i}.bn.beta"), zeros(&[out_ch]));
                buffers.insert(format!("enc{i}.bn.mean"), zeros(&[out_ch]));
                buffers.insert(format!("enc{i}.bn.var"), ArrayD::ones(IxDyn(&[out_ch])));
            }
            in_ch = out_ch;
        }

        for k in 1..=n {
            let in_ch = if k == 1 { enc[n - 1] } else { 2 * enc[n - k] };
            let out_ch = if k == n { 3 } else { enc[n - 1 - k] };
            if k > 1 {
                assert_eq!(
                    in_ch,
                    enc[n - k] + enc[n - k],
                    "decoder {k} input must equal upstream plus skip channels"
                );
            }
            params.insert(
                format!("dec{k}.w"),
                gaussian(&[in_ch, out_ch, KERNEL, KERNEL], &mut rng),
            );
            params.insert(format!("dec{k}.b"), zeros(&[out_ch]));
        }

        Ok(Generator { spec, params, buffers })
    }

    /// Rebuilds a generator from checkpointed arrays, validating names
    /// and shapes against the architecture described by `spec`.
    pub fn from_parts(spec: GeneratorSpec, params: Tensors, buffers: Tensors) -> Result<Self> {
        let skeleton = Generator::init(spec.clone(), 0)?;
        check_same_skeleton(&skeleton.params, &params, "generator params")?;
        check_same_skeleton(&skeleton.buffers, &buffers, "generator buffers")?;
        Ok(Generator { spec, params, buffers })
    }

    /// Debug preset: weights that route a 4x4 average of the input through
    /// the outermost skip connection and a bilinear upsampling kernel,
    /// with every other path zeroed. On smooth, low-amplitude images the
    /// output approximates the input; away from a 2-pixel border the mean
    /// absolute deviation stays within 0.05. Not a trained model.
    pub fn init_skip_identity(spec: GeneratorSpec) -> Result<Self> {
        let mut net = Generator::init(spec, 0)?;
        for arr in net.params.values_mut() {
            arr.fill(0.0);
        }
        for (name, arr) in net.params.iter_mut() {
            if name.ends_with("bn.gamma") {
                arr.fill(1.0);
            }
        }
        let n = net.spec.depth();
        {
            let w = net.params.get_mut("enc1.w").unwrap();
            for c in 0..3 {
                for i in 0..KERNEL {
                    for j in 0..KERNEL {
                        w[[c, c, i, j]] = 1.0 / 16.0;
                    }
                }
            }
            let b = net.params.get_mut("enc1.b").unwrap();
            for c in 0..3 {
                b[[c]] = 2.0;
            }
        }
        {
            let bilinear_1d = [0.25, 0.75, 0.75, 0.25];
            let skip_offset = net.spec.encoder_channels[0];
            let w = net.params.get_mut(&format!("dec{n}.w")).unwrap();
            for c in 0..3 {
                for i in 0..KERNEL {
                    for j in 0..KERNEL {
                        w[[skip_offset + c, c, i, j]] = bilinear_1d[i] * bilinear_1d[j];
                    }
                }
            }
            let b = net.params.get_mut(&format!("dec{n}.b")).unwrap();
            for c in 0..3 {
                b[[c]] = -2.0;
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Registers every parameter as a graph leaf, in construction order.
    pub fn bind(&self, g: &mut Graph) -> IndexMap<String, Var> {
        self.params
            .iter()
            .map(|(name, arr)| (name.clone(), g.leaf(arr.clone())))
            .collect()
    }

    fn batch_norm(
        &mut self,
        g: &mut Graph,
        vars: &IndexMap<String, Var>,
        prefix: &str,
        x: Var,
        train: bool,
    ) -> Var {
        let shape = g.value(x).shape().to_vec();
        let count = (shape[0] * shape[2] * shape[3]) as f64;
        let gamma = vars[&format!("{prefix}.gamma")];
        let beta = vars[&format!("{prefix}.beta")];
        let (mean, var) = if train {
            let s = g.sum_to_channel(x);
            let mean = g.scale(s, 1.0 / count);
            let mb = g.broadcast_channel(mean, &shape);
            let centered = g.sub(x, mb);
            let sq = g.square(centered);
            let vs = g.sum_to_channel(sq);
            let var = g.scale(vs, 1.0 / count);
            let mval = g.value(mean).clone();
            let vval = g.value(var).clone();
            let rm = self.buffers.get_mut(&format!("{prefix}.mean")).unwrap();
            rm.zip_mut_with(&mval, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            let rv = self.buffers.get_mut(&format!("{prefix}.var")).unwrap();
            rv.zip_mut_with(&vval, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v);
            (mean, var)
        } else {
            let mean = g.leaf(self.buffers[&format!("{prefix}.mean")].clone());
            let var = g.leaf(self.buffers[&format!("{prefix}.var")].clone());
            (mean, var)
        };
        let mb = g.broadcast_channel(mean, &shape);
        let centered = g.sub(x, mb);
        let veps = g.add_scalar(var, BN_EPS);
        let std = g.sqrt(veps);
        let sb = g.broadcast_channel(std, &shape);
        let normed = g.div(centered, sb);
        let gb = g.broadcast_channel(gamma, &shape);
        let bb = g.broadcast_channel(beta, &shape);
        let scaled = g.mul(normed, gb);
        g.add(scaled, bb)
    }

    /// Runs the network on an NCHW batch leaf. Training mode uses batch
    /// statistics (and updates the running ones); evaluation mode is a
    /// pure function of weights and input.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        vars: &IndexMap<String, Var>,
        x: Var,
        train: bool,
    ) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let s = self.spec.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::Shape(format!(
                "generator expects [batch, 3, {s}, {s}], got {shape:?}"
            )));
        }
        let n = self.spec.depth();
        let geom = ConvGeom::new(STRIDE, Pad::uniform(1));
        let mut skips = Vec::with_capacity(n);
        let mut h = x;
        for i in 1..=n {
            let w = vars[&format!("enc{i}.w")];
            h = g.conv2d(h, w, geom);
            if i == 1 && !self.spec.first_layer_norm {
                let b = vars[&format!("enc{i}.b")];
                h = g.add_bias(h, b);
            } else {
                h = self.batch_norm(g, vars, &format!("enc{i}.bn"), h, train);
            }
            h = g.leaky_relu(h, LEAKY_SLOPE);
            skips.push(h);
        }
        for k in 1..=n {
            let input = if k == 1 {
                h
            } else {
                g.concat_channels(h, skips[n - k])
            };
            let w = vars[&format!("dec{k}.w")];
            let b = vars[&format!("dec{k}.b")];
            h = g.conv_transpose2d(input, w, geom);
            h = g.add_bias(h, b);
            h = if k == n { g.tanh(h) } else { g.relu(h) };
        }
        Ok(h)
    }

    /// Evaluation-mode forward on a plain array.
    pub fn run(&mut self, batch: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let y = self.forward(&mut g, &vars, x, false)?;
        Ok(g.value(y).clone())
    }
}

/// Patch critic: an unbounded score map over overlapping input regions.
#[derive(Clone, Debug)]
pub struct Critic {
    spec: CriticSpec,
    pub params: Tensors,
}

impl Critic {
    /// Seeded Gaussian initialization, N(0, 0.02^2) weights, zero biases.
    pub fn init(spec: CriticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Tensors::new();
        let mut in_ch = 3;
        let k = spec.channels.len();
        for (i, &out_ch) in spec.channels.iter().enumerate() {
            params.insert(
                format!("conv{}.w", i + 1),
                gaussian(&[out_ch, in_ch, KERNEL, KERNEL], &mut rng),
            );
            params.insert(format!("conv{}.b", i + 1), zeros(&[out_ch]));
            in_ch = out_ch;
        }
        params.insert(
            format!("conv{}.w", k + 1),
            gaussian(&[1, in_ch, KERNEL, KERNEL], &mut rng),
        );
        params.insert(format!("conv{}.b", k + 1), zeros(&[1]));
        Ok(Critic { spec, params })
    }

    /// Rebuilds a critic from checkpointed arrays, validating names and
    /// shapes against the architecture described by `spec`.
    pub fn from_parts(spec: CriticSpec, params: Tensors) -> Result<Self> {
        let skeleton = Critic::init(spec.clone(), 0)?;
        check_same_skeleton(&skeleton.params, &params, "critic params")?;
        Ok(Critic { spec, params })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    /// True if any parameter belongs to a normalization layer.
    pub fn has_normalization(&self) -> bool {
        self.params
            .keys()
            .any(|k| k.contains("bn") || k.contains("gamma") || k.contains("beta"))
    }

    /// Registers every parameter as a graph leaf, in construction order.
    pub fn bind(&self, g: &mut Graph) -> IndexMap<String, Var> {
        self.params
            .iter()
            .map(|(name, arr)| (name.clone(), g.leaf(arr.clone())))
            .collect()
    }

    /// Runs the critic on an NCHW batch leaf, producing a
    /// [batch, 1, out, out] score map. Differentiable with respect to the
    /// input, as the gradient-norm penalty requires.
    pub fn forward(&self, g: &mut Graph, vars: &IndexMap<String, Var>, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let s = self.spec.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::Shape(format!(
                "critic expects [batch, 3, {s}, {s}], got {shape:?}"
            )));
        }
        let down = ConvGeom::new(STRIDE, Pad::uniform(1));
        let keep = ConvGeom::new(1, Pad { top: 2, bottom: 1, left: 2, right: 1 });
        let k = self.spec.channels.len();
        let mut h = x;
        for i in 1..=k {
            let geom = if i < k { down } else { keep };
            let w = vars[&format!("conv{i}.w")];
            let b = vars[&format!("conv{i}.b")];
            h = g.conv2d(h, w, geom);
            h = g.add_bias(h, b);
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let w = vars[&format!("conv{}.w", k + 1)];
        let b = vars[&format!("conv{}.b", k + 1)];
        h = g.conv2d(h, w, keep);
        h = g.add_bias(h, b);
        let out = g.value(h).shape().to_vec();
        let expect = self.spec.output_size();
        assert_eq!(
            (out[1], out[2], out[3]),
            (1, expect, expect),
            "critic map shape drifted from its contract"
        );
        Ok(h)
    }

    /// Forward on a plain array.
    pub fn run(&self, batch: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}
