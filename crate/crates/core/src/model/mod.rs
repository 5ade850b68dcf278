//! The two-branch gaze network: a residual dense eye branch, a linear
//! facial-feature branch, and a two-layer fusion head.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{
    eye_branch_forward, feature_branch_forward, fusion_head_forward, model_forward, rdb_forward,
    residual_block_forward, RdbOutput,
};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Length of the facial feature vector: face box (x, y, w, h), roll, pitch,
/// yaw, left-eye corner (x, y), right-eye corner (x, y), nose tip (x, y).
pub const FEATURE_LEN: usize = 13;

/// Road-image frame the gaze targets live in.
pub const FRAME_WIDTH: f64 = 1920.0;
pub const FRAME_HEIGHT: f64 = 1080.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EyeBranchConfig {
    /// Input image channels (and channels of the final projection).
    pub channels: usize,
    /// Base feature width.
    pub features: usize,
    /// Number of residual dense blocks.
    pub blocks: usize,
    /// Channels added by each dense layer.
    pub growth: usize,
    /// Dense layers per block.
    pub layers: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for EyeBranchConfig {
    fn default() -> Self {
        EyeBranchConfig {
            channels: 3,
            features: 32,
            blocks: 32,
            growth: 4,
            layers: 4,
            height: 36,
            width: 60,
        }
    }
}

impl EyeBranchConfig {
    /// Small configuration used for gradient checking and desk-scale training.
    pub fn tiny() -> Self {
        EyeBranchConfig {
            channels: 3,
            features: 4,
            blocks: 2,
            growth: 2,
            layers: 2,
            height: 8,
            width: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("channels", self.channels),
            ("features", self.features),
            ("blocks", self.blocks),
            ("growth", self.growth),
            ("layers", self.layers),
            ("height", self.height),
            ("width", self.width),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }

    /// Input channels of dense layer `t` (0-based) inside a block.
    pub fn dense_input_channels(&self, t: usize) -> usize {
        self.features + t * self.growth
    }

    /// Channels entering each block's local fusion convolution: f + l·k.
    pub fn lff_input_channels(&self) -> usize {
        self.features + self.layers * self.growth
    }

    /// Channels entering the global fusion convolution: (b + 1)·f.
    pub fn gff_input_channels(&self) -> usize {
        (self.blocks + 1) * self.features
    }

    /// Length of the flattened eye feature.
    pub fn eye_feature_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.channels, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub eye: EyeBranchConfig,
    /// Width of the feature-branch embedding.
    pub embed: usize,
    /// Width of the fusion head's hidden layer.
    pub hidden: usize,
    /// Train against targets divided by the frame size instead of raw pixels.
    pub scale_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            eye: EyeBranchConfig::default(),
            embed: 16,
            hidden: 500,
            scale_targets: false,
        }
    }
}

impl ModelConfig {
    /// The tiny eye branch with a narrow head, small enough to finite-difference
    /// every parameter.
    pub fn tiny() -> Self {
        ModelConfig {
            eye: EyeBranchConfig::tiny(),
            embed: 16,
            hidden: 64,
            scale_targets: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eye.validate()?;
        if self.embed == 0 || self.hidden == 0 {
            return Err(Error::Config("embed and hidden must be at least 1".into()));
        }
        Ok(())
    }

    /// Length of the fused vector: embedding first, then the eye feature.
    pub fn fused_len(&self) -> usize {
        self.embed + self.eye.eye_feature_len()
    }

    /// Factors mapping network outputs to pixels.
    pub fn output_scale(&self) -> [f64; 2] {
        if self.scale_targets {
            [FRAME_WIDTH, FRAME_HEIGHT]
        } else {
            [1.0, 1.0]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

/// One residual dense block: `layers` dense 3×3 convolutions and a 1×1 local
/// fusion back to the base width.
#[derive(Debug, Clone, PartialEq)]
pub struct RdbParams<P> {
    pub dense: Vec<Conv<P>>,
    pub lff: Conv<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeBranchParams<P> {
    pub initial: Conv<P>,
    pub blocks: Vec<RdbParams<P>>,
    pub gff: Conv<P>,
    pub projection: Conv<P>,
}

/// Every parameter of the network, generic over the slot type so the same
/// tree holds tensors, tape handles, shapes or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    pub eye: EyeBranchParams<P>,
    pub feature: Linear<P>,
    pub hidden: Linear<P>,
    pub output: Linear<P>,
}

type MapFn<'f, P, Q> = dyn FnMut(&str, &P) -> Result<Q> + 'f;

impl<P> Conv<P> {
    fn try_map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Result<Conv<Q>> {
        Ok(Conv {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }
}

impl<P> Linear<P> {
    fn try_map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Result<Linear<Q>> {
        Ok(Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }
}

impl<P> ModelParams<P> {
    /// Map every slot in canonical order, passing its dotted name.
    pub fn try_map<Q>(&self, mut f: impl FnMut(&str, &P) -> Result<Q>) -> Result<ModelParams<Q>> {
        let f: &mut MapFn<'_, P, Q> = &mut f;
        let eye = &self.eye;
        let initial = eye.initial.try_map("eye.initial", f)?;
        let blocks = eye
            .blocks
            .iter()
            .enumerate()
            .map(|(n, block)| {
                let dense = block
                    .dense
                    .iter()
                    .enumerate()
                    .map(|(t, conv)| conv.try_map(&format!("eye.rdb{n}.dense{t}"), f))
                    .collect::<Result<Vec<_>>>()?;
                let lff = block.lff.try_map(&format!("eye.rdb{n}.lff"), f)?;
                Ok(RdbParams { dense, lff })
            })
            .collect::<Result<Vec<_>>>()?;
        let gff = eye.gff.try_map("eye.gff", f)?;
        let projection = eye.projection.try_map("eye.projection", f)?;
        Ok(ModelParams {
            eye: EyeBranchParams {
                initial,
                blocks,
                gff,
                projection,
            },
            feature: self.feature.try_map("feature", f)?,
            hidden: self.hidden.try_map("head.hidden", f)?,
            output: self.output.try_map("head.output", f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        self.try_map(|name, p| Ok(f(name, p))).expect("infallible map")
    }

    /// `(name, slot)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut names = Vec::new();
        self.map(|name, _| names.push(name.to_string()));
        names.into_iter().zip(self.values()).collect()
    }

    /// Slots in canonical order.
    pub fn values(&self) -> Vec<&P> {
        let mut convs: Vec<&Conv<P>> = vec![&self.eye.initial];
        for block in &self.eye.blocks {
            convs.extend(&block.dense);
            convs.push(&block.lff);
        }
        convs.push(&self.eye.gff);
        convs.push(&self.eye.projection);
        let mut out = Vec::new();
        for c in convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for l in [&self.feature, &self.hidden, &self.output] {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    /// Mutable slots in canonical order.
    pub fn values_mut(&mut self) -> Vec<&mut P> {
        fn pair<'a, P>(weight: &'a mut P, bias: &'a mut P, out: &mut Vec<&'a mut P>) {
            out.push(weight);
            out.push(bias);
        }
        let mut out = Vec::new();
        let eye = &mut self.eye;
        pair(&mut eye.initial.weight, &mut eye.initial.bias, &mut out);
        for block in &mut eye.blocks {
            for d in &mut block.dense {
                pair(&mut d.weight, &mut d.bias, &mut out);
            }
            pair(&mut block.lff.weight, &mut block.lff.bias, &mut out);
        }
        pair(&mut eye.gff.weight, &mut eye.gff.bias, &mut out);
        pair(&mut eye.projection.weight, &mut eye.projection.bias, &mut out);
        for l in [&mut self.feature, &mut self.hidden, &mut self.output] {
            pair(&mut l.weight, &mut l.bias, &mut out);
        }
        out
    }

    /// Rebuild a tree with this layout from values given in canonical order.
    pub fn replace<Q>(&self, values: Vec<Q>) -> Result<ModelParams<Q>> {
        let expected = self.values().len();
        if values.len() != expected {
            return Err(Error::Config(format!(
                "expected {expected} parameter tensors, got {}",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        self.try_map(|_, _| Ok(it.next().expect("length checked")))
    }
}

impl ModelParams<Vec<usize>> {
    /// Parameter shapes implied by a configuration.
    pub fn shapes(config: &ModelConfig) -> Self {
        let eye = &config.eye;
        let conv = |out: usize, inp: usize, k: usize| Conv {
            weight: vec![out, inp, k, k],
            bias: vec![out],
        };
        let linear = |out: usize, inp: usize| Linear {
            weight: vec![out, inp],
            bias: vec![out],
        };
        ModelParams {
            eye: EyeBranchParams {
                initial: conv(eye.features, eye.channels, 3),
                blocks: (0..eye.blocks)
                    .map(|_| RdbParams {
                        dense: (0..eye.layers)
                            .map(|t| conv(eye.growth, eye.dense_input_channels(t), 3))
                            .collect(),
                        lff: conv(eye.features, eye.lff_input_channels(), 1),
                    })
                    .collect(),
                gff: conv(eye.features, eye.gff_input_channels(), 1),
                projection: conv(eye.channels, eye.features, 3),
            },
            feature: linear(config.embed, FEATURE_LEN),
            hidden: linear(config.hidden, config.fused_len()),
            output: linear(2, config.hidden),
        }
    }
}

/// Uniform Xavier bound `sqrt(6 / (fan_in + fan_out))` for a weight shape:
/// `[out, in]` for linear layers, `[out, in, kh, kw]` for convolutions.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrGazeModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Element> DrGazeModel<T> {
    /// Xavier-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::shapes(&config).map(|name, shape| {
            if name.ends_with(".bias") {
                return Tensor::zeros(shape);
            }
            let bound = xavier_bound(shape);
            let dist = Uniform::new_inclusive(-bound, bound);
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
            Tensor::new(shape.clone(), data).expect("shape from config")
        });
        Ok(DrGazeModel { config, params })
    }

    /// Every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::shapes(&config).map(|_, shape| Tensor::zeros(shape));
        Ok(DrGazeModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::shapes(&config);
        for ((name, want), got) in expected.named().into_iter().zip(params.values()) {
            if got.shape() != want.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, configuration requires {want:?}",
                    got.shape()
                )));
            }
        }
        if expected.values().len() != params.values().len() {
            return Err(Error::Config("parameter count does not match configuration".into()));
        }
        Ok(DrGazeModel { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().iter().map(|t| t.numel()).sum()
    }

    /// Record every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> ModelParams<Var> {
        self.params.map(|_, t| tape.leaf(t.clone()))
    }

    pub fn cast<U: Element>(&self) -> DrGazeModel<U> {
        DrGazeModel {
            config: self.config,
            params: self.params.map(|_, t| t.cast()),
        }
    }

    /// Raw network output `[B, 2]` for a batch, before pixel scaling.
    pub fn forward_raw(&self, eye: &Tensor<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let eye = tape.leaf(eye.clone());
        let features = tape.leaf(features.clone());
        let out = model_forward(&mut tape, &self.config, &params, eye, features)?;
        Ok(tape.value(out).clone())
    }

    /// Gaze prediction in road-image pixels, one `(x, y)` row per sample.
    pub fn predict(&self, eye: &Tensor<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        let raw = self.forward_raw(eye, features)?;
        let [sx, sy] = self.config.output_scale();
        if sx == 1.0 && sy == 1.0 {
            return Ok(raw);
        }
        let mut out = raw;
        for row in out.data_mut().chunks_exact_mut(2) {
            row[0] *= T::from_f64(sx);
            row[1] *= T::from_f64(sy);
        }
        Ok(out)
    }
}
