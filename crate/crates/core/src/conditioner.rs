//! Shared conditional network: stacked bidirectional QRNN layers with
//! fo-pooling over frame-level linguistic features, followed by repeat
//! upsampling to the sample rate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionerConfig {
    /// Bidirectional layers.
    pub layers: usize,
    /// Channels per direction; the encoding has twice this many.
    pub channels: usize,
    pub filter_width: usize,
}

impl Default for ConditionerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            channels: 64,
            filter_width: 2,
        }
    }
}

impl ConditionerConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("conditioner.layers must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("conditioner.channels must be at least 1".into()));
        }
        if self.filter_width == 0 {
            return Err(Error::Config("conditioner.filter_width must be at least 1".into()));
        }
        Ok(())
    }
}

/// One direction of a QRNN layer. The three causal convolutions share width
/// and channel dims.
#[derive(Clone, Debug)]
pub struct QrnnLayer {
    pub w_h: ParamId,
    pub w_o: ParamId,
    pub w_f: ParamId,
    pub b_h: ParamId,
    pub b_o: ParamId,
    pub b_f: ParamId,
    pub filter_width: usize,
}

impl QrnnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        channels: usize,
        filter_width: usize,
        rng: &mut R,
    ) -> Self {
        let shape = [channels, input_dim, filter_width];
        let fan_in = input_dim * filter_width;
        Self {
            w_h: store.add_normal(format!("{prefix}.w_h"), &shape, fan_in, rng),
            w_o: store.add_normal(format!("{prefix}.w_o"), &shape, fan_in, rng),
            w_f: store.add_normal(format!("{prefix}.w_f"), &shape, fan_in, rng),
            b_h: store.add_zeros(format!("{prefix}.b_h"), &[channels]),
            b_o: store.add_zeros(format!("{prefix}.b_o"), &[channels]),
            b_f: store.add_zeros(format!("{prefix}.b_f"), &[channels]),
            filter_width,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiQrnnLayer {
    pub forward: QrnnLayer,
    pub backward: QrnnLayer,
}

#[derive(Clone, Debug)]
pub struct Conditioner {
    pub config: ConditionerConfig,
    pub input_dim: usize,
    pub layers: Vec<BiQrnnLayer>,
}

impl Conditioner {
    pub fn new<R: Rng + ?Sized>(
        config: &ConditionerConfig,
        input_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        let mut dim = input_dim;
        for l in 0..config.layers {
            let forward = QrnnLayer::new(
                store,
                &format!("cond.{l}.fwd"),
                dim,
                config.channels,
                config.filter_width,
                rng,
            );
            let backward = QrnnLayer::new(
                store,
                &format!("cond.{l}.bwd"),
                dim,
                config.channels,
                config.filter_width,
                rng,
            );
            layers.push(BiQrnnLayer { forward, backward });
            dim = 2 * config.channels;
        }
        Ok(Self {
            config: config.clone(),
            input_dim,
            layers,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Returns `(frame_encoding, sample_encoding)`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, cond: Var, frame_shift: usize) -> Result<(Var, Var)> {
        conditioner_forward(tape, bound, &self.layers, cond, frame_shift)
    }

    /// Frame-rate encoding only; the sample-rate view is a repeat of it.
    pub fn encode_frames(&self, tape: &mut Tape, bound: &Bound, cond: Var) -> Result<Var> {
        let (c, _) = tape.value(cond)?.dims2()?;
        if c != self.input_dim {
            return Err(Error::Dimension(format!(
                "condition features have {c} dims, conditioner expects {}",
                self.input_dim
            )));
        }
        stack_forward(tape, bound, &self.layers, cond)
    }

    /// Evaluates the frame encoding without recording gradients.
    pub fn encode(&self, store: &ParamStore, cond: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let c = tape.constant(cond.clone());
        let out = self.encode_frames(&mut tape, &bound, c)?;
        Ok(tape.value(out)?.clone())
    }
}

/// ĥ = tanh(W_h∗x + B_h), o = σ(W_o∗x + B_o), f = σ(W_f∗x + B_f), then
/// fo-pooling from a zero state.
pub fn qrnn_forward(tape: &mut Tape, bound: &Bound, layer: &QrnnLayer, x: Var) -> Result<Var> {
    let pre_h = tape.conv1d_causal(x, bound.var(layer.w_h), Some(bound.var(layer.b_h)), 1)?;
    let pre_o = tape.conv1d_causal(x, bound.var(layer.w_o), Some(bound.var(layer.b_o)), 1)?;
    let pre_f = tape.conv1d_causal(x, bound.var(layer.w_f), Some(bound.var(layer.b_f)), 1)?;
    let hhat = tape.tanh(pre_h)?;
    let o = tape.sigmoid(pre_o)?;
    let f = tape.sigmoid(pre_f)?;
    tape.fo_pool(hhat, o, f, None)
}

/// Forward-direction output stacked over the time-reversed output of the
/// backward direction run on the reversed input.
pub fn bidirectional_qrnn(tape: &mut Tape, bound: &Bound, fwd: &QrnnLayer, bwd: &QrnnLayer, x: Var) -> Result<Var> {
    let ff = qrnn_forward(tape, bound, fwd, x)?;
    let rev = tape.reverse_time(x)?;
    let bb = qrnn_forward(tape, bound, bwd, rev)?;
    let bb = tape.reverse_time(bb)?;
    let (a, b) = (tape.value(ff)?.rows(), tape.value(bb)?.rows());
    if a != b {
        return Err(Error::Dimension(format!(
            "forward direction has {a} channels, backward has {b}"
        )));
    }
    tape.concat_rows(&[ff, bb])
}

pub fn upsample_repeat(tape: &mut Tape, frames: Var, factor: usize) -> Result<Var> {
    tape.upsample_repeat(frames, factor)
}

fn stack_forward(tape: &mut Tape, bound: &Bound, layers: &[BiQrnnLayer], cond: Var) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Argument("conditioner stack is empty".into()));
    }
    let mut h = cond;
    for layer in layers {
        h = bidirectional_qrnn(tape, bound, &layer.forward, &layer.backward, h)?;
    }
    Ok(h)
}

/// Runs the stack at frame rate and repeats the top output `frame_shift`
/// times per frame.
pub fn conditioner_forward(
    tape: &mut Tape,
    bound: &Bound,
    layers: &[BiQrnnLayer],
    cond: Var,
    frame_shift: usize,
) -> Result<(Var, Var)> {
    let frames = stack_forward(tape, bound, layers, cond)?;
    let samples = tape.upsample_repeat(frames, frame_shift)?;
    Ok((frames, samples))
}
