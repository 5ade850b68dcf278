use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

use super::{Conv, EyeBranchParams, Linear, ModelConfig, ModelParams, RdbParams, FEATURE_LEN};

fn out_channels<T: Element>(tape: &Tape<T>, conv: &Conv<Var>) -> usize {
    tape.shape(conv.weight)[0]
}

fn in_channels<T: Element>(tape: &Tape<T>, conv: &Conv<Var>) -> usize {
    tape.shape(conv.weight)[1]
}

/// Spatially-preserving convolution: stride 1, padding `(k − 1) / 2`.
fn same_conv<T: Element>(tape: &mut Tape<T>, x: Var, conv: &Conv<Var>) -> Result<Var> {
    let k = tape.shape(conv.weight)[2];
    tape.conv2d(x, conv.weight, conv.bias, 1, (k - 1) / 2)
}

/// `conv → ReLU → conv`, then the identity shortcut: `F(x) + x`.
pub fn residual_block_forward<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    first: &Conv<Var>,
    second: &Conv<Var>,
) -> Result<Var> {
    let channels = tape.shape(x).get(1).copied().unwrap_or(0);
    for (i, conv) in [first, second].into_iter().enumerate() {
        if in_channels(tape, conv) != channels || out_channels(tape, conv) != channels {
            return Err(Error::shape(
                "residual block",
                format!(
                    "convolution {i} has weight {:?} but the block carries {channels} channels",
                    tape.shape(conv.weight)
                ),
            ));
        }
    }
    let h = same_conv(tape, x, first)?;
    let h = tape.relu(h);
    let h = same_conv(tape, h, second)?;
    tape.add(h, x)
}

#[derive(Debug, Clone, Copy)]
pub struct RdbOutput {
    /// `F_{n-1} + LFF`, the block output fed to the next block.
    pub output: Var,
    /// Local fusion result, collected for global fusion.
    pub lff: Var,
    /// Channels of the concatenation that fed the local fusion.
    pub lff_input_channels: usize,
}

/// One residual dense block. Dense layer `t` sees the concatenation of the
/// block input and all earlier dense outputs; a 1×1 local fusion maps the
/// full concatenation back to the input width, which is then added to the
/// block input.
pub fn rdb_forward<T: Element>(tape: &mut Tape<T>, f_prev: Var, params: &RdbParams<Var>) -> Result<RdbOutput> {
    let features = tape.shape(f_prev).get(1).copied().unwrap_or(0);
    let mut stack = vec![f_prev];
    let mut channels = features;
    for (t, layer) in params.dense.iter().enumerate() {
        if in_channels(tape, layer) != channels {
            return Err(Error::shape(
                "rdb",
                format!(
                    "dense layer {t} expects {} input channels but the concatenation has {channels}",
                    in_channels(tape, layer)
                ),
            ));
        }
        let input = tape.concat(&stack, 1)?;
        let out = same_conv(tape, input, layer)?;
        let out = tape.relu(out);
        channels += out_channels(tape, layer);
        stack.push(out);
    }
    if in_channels(tape, &params.lff) != channels || out_channels(tape, &params.lff) != features {
        return Err(Error::shape(
            "rdb",
            format!(
                "local fusion (layer {}) has weight {:?}; expected [{features}, {channels}, 1, 1]",
                params.dense.len(),
                tape.shape(params.lff.weight)
            ),
        ));
    }
    let fused_input = tape.concat(&stack, 1)?;
    let lff = same_conv(tape, fused_input, &params.lff)?;
    let output = tape.add(f_prev, lff)?;
    Ok(RdbOutput {
        output,
        lff,
        lff_input_channels: channels,
    })
}

/// Residual dense eye branch: initial 3×3 convolution, chained blocks,
/// 1×1 global fusion over `[F_0, LFF_1, .., LFF_b]`, global residual with the
/// initial map, 3×3 projection back to `channels`, flattened per sample.
pub fn eye_branch_forward<T: Element>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    eye: Var,
    params: &EyeBranchParams<Var>,
) -> Result<Var> {
    let shape = tape.shape(eye);
    let expected = config.eye.input_shape(shape.first().copied().unwrap_or(1));
    if shape != expected {
        return Err(Error::shape(
            "eye branch",
            format!("expected input of shape {expected:?}, got {shape:?}"),
        ));
    }
    let initial = same_conv(tape, eye, &params.initial)?;
    let mut fused = vec![initial];
    let mut current = initial;
    for block in &params.blocks {
        let out = rdb_forward(tape, current, block)?;
        fused.push(out.lff);
        current = out.output;
    }
    let gff_input = tape.concat(&fused, 1)?;
    let global = same_conv(tape, gff_input, &params.gff)?;
    let residual = tape.add(initial, global)?;
    let projected = same_conv(tape, residual, &params.projection)?;
    tape.flatten_batch(projected)
}

/// Single linear layer from the 13 facial features to the embedding.
pub fn feature_branch_forward<T: Element>(tape: &mut Tape<T>, features: Var, params: &Linear<Var>) -> Result<Var> {
    let len = tape.shape(features).last().copied().unwrap_or(0);
    if len != FEATURE_LEN || tape.shape(features).len() > 2 {
        return Err(Error::shape(
            "feature branch",
            format!(
                "expected {FEATURE_LEN} features per sample, got shape {:?}",
                tape.shape(features)
            ),
        ));
    }
    tape.linear(features, params.weight, params.bias)
}

/// Concatenate `[embedding, eye feature]` and apply `output(ReLU(hidden(·)))`.
pub fn fusion_head_forward<T: Element>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    embedding: Var,
    eye_feature: Var,
    hidden: &Linear<Var>,
    output: &Linear<Var>,
) -> Result<Var> {
    let (e, f) = (tape.shape(embedding), tape.shape(eye_feature));
    let lengths_ok =
        e.last() == Some(&config.embed) && f.last() == Some(&config.eye.eye_feature_len()) && e.len() == f.len();
    if !lengths_ok {
        return Err(Error::shape(
            "fusion head",
            format!(
                "expected embedding of {} and eye feature of {}, got {e:?} and {f:?}",
                config.embed,
                config.eye.eye_feature_len()
            ),
        ));
    }
    let axis = e.len() - 1;
    let fused = tape.concat(&[embedding, eye_feature], axis)?;
    let h = tape.linear(fused, hidden.weight, hidden.bias)?;
    let h = tape.relu(h);
    tape.linear(h, output.weight, output.bias)
}

/// Full network on a batch: `eye [B, c, H, W]`, `features [B, 13]` → `[B, 2]`.
pub fn model_forward<T: Element>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    params: &ModelParams<Var>,
    eye: Var,
    features: Var,
) -> Result<Var> {
    let batch = tape.shape(eye).first().copied().unwrap_or(0);
    if tape.shape(features) != [batch, FEATURE_LEN] {
        return Err(Error::shape(
            "model",
            format!("features {:?} do not match eye batch of {batch}", tape.shape(features)),
        ));
    }
    let eye_feature = eye_branch_forward(tape, config, eye, &params.eye)?;
    let embedding = feature_branch_forward(tape, features, &params.feature)?;
    fusion_head_forward(tape, config, embedding, eye_feature, &params.hidden, &params.output)
}
