//! Sample-level generative network: dilated residual blocks with conditioned
//! gated activations, skip aggregation, a categorical output stack, and the
//! frame-level multi-task head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::codec::{QUANTIZATION_LEVELS, SILENCE_BIN};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtlHeadConfig {
    pub n_cepstra: usize,
    pub predict_logf0: bool,
    pub predict_vuv: bool,
}

impl Default for MtlHeadConfig {
    fn default() -> Self {
        Self {
            n_cepstra: 25,
            predict_logf0: true,
            predict_vuv: true,
        }
    }
}

impl MtlHeadConfig {
    pub fn output_dim(&self) -> usize {
        self.n_cepstra + usize::from(self.predict_logf0) + usize::from(self.predict_vuv)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveNetConfig {
    pub num_stacks: usize,
    pub layers_per_stack: usize,
    pub filter_width: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub condition_dim: usize,
    pub quantization_levels: usize,
    pub mtl: MtlHeadConfig,
}

impl Default for WaveNetConfig {
    /// Desk-scale default: 2 stacks of 6 layers, receptive field 127.
    fn default() -> Self {
        Self {
            num_stacks: 2,
            layers_per_stack: 6,
            filter_width: 2,
            residual_channels: 32,
            gate_channels: 32,
            skip_channels: 64,
            condition_dim: 128,
            quantization_levels: QUANTIZATION_LEVELS,
            mtl: MtlHeadConfig::default(),
        }
    }
}

impl WaveNetConfig {
    /// Full-size layout: 4 stacks of 10 layers, dilations 1..512.
    pub fn large_layout() -> Self {
        Self {
            num_stacks: 4,
            layers_per_stack: 10,
            ..Self::default()
        }
    }

    /// Dilation per block in execution order; `2^j` for layer `j` of a stack.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.num_stacks)
            .flat_map(|_| (0..self.layers_per_stack).map(|j| 1usize << j))
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_stacks", self.num_stacks),
            ("layers_per_stack", self.layers_per_stack),
            ("filter_width", self.filter_width),
            ("residual_channels", self.residual_channels),
            ("gate_channels", self.gate_channels),
            ("skip_channels", self.skip_channels),
            ("condition_dim", self.condition_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("wavenet.{name} must be at least 1")));
            }
        }
        if self.layers_per_stack > 24 {
            return Err(Error::Config("wavenet.layers_per_stack must be at most 24".into()));
        }
        if self.quantization_levels != QUANTIZATION_LEVELS {
            return Err(Error::Config(format!(
                "wavenet.quantization_levels must be {QUANTIZATION_LEVELS}, got {}",
                self.quantization_levels
            )));
        }
        Ok(())
    }
}

/// `N = 1 + (K − 1) · Σ dilations`.
pub fn receptive_field(config: &WaveNetConfig) -> usize {
    1 + (config.filter_width.saturating_sub(1)) * config.dilations().iter().sum::<usize>()
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub w_filter: ParamId,
    pub b_filter: ParamId,
    pub w_gate: ParamId,
    pub b_gate: ParamId,
    pub v_filter: ParamId,
    pub v_gate: ParamId,
    pub w_res: ParamId,
    pub b_res: ParamId,
    pub w_skip: ParamId,
    pub b_skip: ParamId,
    pub dilation: usize,
}

impl ResidualBlock {
    fn new<R: Rng + ?Sized>(
        cfg: &WaveNetConfig,
        index: usize,
        dilation: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let p = format!("wavenet.block{index}");
        let (r, g, s, d, k) = (
            cfg.residual_channels,
            cfg.gate_channels,
            cfg.skip_channels,
            cfg.condition_dim,
            cfg.filter_width,
        );
        Self {
            w_filter: store.add_normal(format!("{p}.w_filter"), &[g, r, k], r * k, rng),
            b_filter: store.add_zeros(format!("{p}.b_filter"), &[g]),
            w_gate: store.add_normal(format!("{p}.w_gate"), &[g, r, k], r * k, rng),
            b_gate: store.add_zeros(format!("{p}.b_gate"), &[g]),
            v_filter: store.add_normal(format!("{p}.v_filter"), &[g, d], d, rng),
            v_gate: store.add_normal(format!("{p}.v_gate"), &[g, d], d, rng),
            w_res: store.add_normal(format!("{p}.w_res"), &[r, g], g, rng),
            b_res: store.add_zeros(format!("{p}.b_res"), &[r]),
            w_skip: store.add_normal(format!("{p}.w_skip"), &[s, g], g, rng),
            b_skip: store.add_zeros(format!("{p}.b_skip"), &[s]),
            dilation,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 10] {
        [
            self.w_filter,
            self.b_filter,
            self.w_gate,
            self.b_gate,
            self.v_filter,
            self.v_gate,
            self.w_res,
            self.b_res,
            self.w_skip,
            self.b_skip,
        ]
    }
}

/// Local condition fed to every residual block.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning {
    /// `[D_enc × T]` at the sample rate.
    Samples(Var),
    /// `[D_enc × F]` at the frame rate with `F · frame_shift == T`. The 1×1
    /// projections run per frame and are repeated afterwards, which equals
    /// projecting the repeated encoding.
    Frames { frames: Var, frame_shift: usize },
}

fn project_condition(tape: &mut Tape, v: Var, cond: Conditioning, t: usize) -> Result<Var> {
    match cond {
        Conditioning::Samples(c) => tape.conv1x1(c, v, None),
        Conditioning::Frames { frames, frame_shift } => {
            let f = tape.value(frames)?.cols();
            if f * frame_shift != t {
                return Err(Error::Dimension(format!(
                    "{f} condition frames × shift {frame_shift} != {t} samples"
                )));
            }
            let p = tape.conv1x1(frames, v, None)?;
            tape.upsample_repeat(p, frame_shift)
        }
    }
}

/// `g = tanh(W_f∗h + V_f·c) ⊙ σ(W_g∗h + V_g·c)`; returns `(h + W_res·g, W_skip·g)`.
pub fn residual_block_forward(
    tape: &mut Tape,
    bound: &Bound,
    block: &ResidualBlock,
    h: Var,
    cond: Conditioning,
) -> Result<(Var, Var)> {
    let t = tape.value(h)?.cols();
    if let Conditioning::Samples(c) = cond {
        let tc = tape.value(c)?.cols();
        if tc != t {
            return Err(Error::Dimension(format!(
                "condition has {tc} steps, activations have {t}"
            )));
        }
    }
    let filt = tape.conv1d_causal(
        h,
        bound.var(block.w_filter),
        Some(bound.var(block.b_filter)),
        block.dilation,
    )?;
    let gate = tape.conv1d_causal(
        h,
        bound.var(block.w_gate),
        Some(bound.var(block.b_gate)),
        block.dilation,
    )?;
    let cf = project_condition(tape, bound.var(block.v_filter), cond, t)?;
    let cg = project_condition(tape, bound.var(block.v_gate), cond, t)?;
    let filt = tape.add(filt, cf)?;
    let gate = tape.add(gate, cg)?;
    let filt = tape.tanh(filt)?;
    let gate = tape.sigmoid(gate)?;
    let g = tape.mul(filt, gate)?;
    let res = tape.conv1x1(g, bound.var(block.w_res), Some(bound.var(block.b_res)))?;
    let res = tape.add(h, res)?;
    let skip = tape.conv1x1(g, bound.var(block.w_skip), Some(bound.var(block.b_skip)))?;
    Ok((res, skip))
}

#[derive(Clone, Debug)]
pub struct WaveNet {
    pub config: WaveNetConfig,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<ResidualBlock>,
    pub out1_w: ParamId,
    pub out1_b: ParamId,
    pub out2_w: ParamId,
    pub out2_b: ParamId,
}

impl WaveNet {
    /// Registers parameters in `store`. The final output projection starts at
    /// zero so initial predictions are uniform.
    pub fn new<R: Rng + ?Sized>(config: &WaveNetConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (q, r, s) = (
            config.quantization_levels,
            config.residual_channels,
            config.skip_channels,
        );
        let embed_w = store.add_normal("wavenet.embed.w", &[r, q], 1, rng);
        let embed_b = store.add_zeros("wavenet.embed.b", &[r]);
        let blocks = config
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, d)| ResidualBlock::new(config, i, d, store, rng))
            .collect();
        let out1_w = store.add_normal("wavenet.out1.w", &[s, s], s, rng);
        let out1_b = store.add_zeros("wavenet.out1.b", &[s]);
        let out2_w = store.add_zeros("wavenet.out2.w", &[q, s]);
        let out2_b = store.add_zeros("wavenet.out2.b", &[q]);
        Ok(Self {
            config: config.clone(),
            embed_w,
            embed_b,
            blocks,
            out1_w,
            out1_b,
            out2_w,
            out2_b,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed_w, self.embed_b];
        ids.extend(self.blocks.iter().flat_map(ResidualBlock::param_ids));
        ids.extend([self.out1_w, self.out1_b, self.out2_w, self.out2_b]);
        ids
    }

    /// Teacher-forced logits for a one-hot sample sequence. The input is
    /// shifted right by one (seeded with the silence bin) so column `t` of the
    /// result predicts sample `t` from samples `< t`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x_onehot: &Tensor, cond: Conditioning) -> Result<Var> {
        let bins = decode_one_hot(x_onehot, self.config.quantization_levels)?;
        self.forward_inputs(tape, bound, &shift_right(&bins, SILENCE_BIN), cond)
    }

    /// Logits when `inputs[t]` is the bin presented at position `t` (already
    /// shifted history).
    pub fn forward_inputs(&self, tape: &mut Tape, bound: &Bound, inputs: &[u8], cond: Conditioning) -> Result<Var> {
        let x = tape.constant(crate::codec::one_hot(inputs));
        let mut h = tape.conv1x1(x, bound.var(self.embed_w), Some(bound.var(self.embed_b)))?;
        let mut skip_sum: Option<Var> = None;
        for block in &self.blocks {
            let (res, skip) = residual_block_forward(tape, bound, block, h, cond)?;
            h = res;
            skip_sum = Some(match skip_sum {
                Some(acc) => tape.add(acc, skip)?,
                None => skip,
            });
        }
        let skip = skip_sum.ok_or_else(|| Error::Config("network has no residual blocks".into()))?;
        let a = tape.relu(skip)?;
        let a = tape.conv1x1(a, bound.var(self.out1_w), Some(bound.var(self.out1_b)))?;
        let a = tape.relu(a)?;
        tape.conv1x1(a, bound.var(self.out2_w), Some(bound.var(self.out2_b)))
    }
}

/// Prepends `seed` and drops the last element.
pub fn shift_right(bins: &[u8], seed: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(bins.len());
    if !bins.is_empty() {
        out.push(seed);
        out.extend_from_slice(&bins[..bins.len() - 1]);
    }
    out
}

fn decode_one_hot(x: &Tensor, levels: usize) -> Result<Vec<u8>> {
    let (rows, t) = x.dims2()?;
    if rows != levels {
        return Err(Error::Dimension(format!(
            "one-hot input has {rows} rows, expected {levels}"
        )));
    }
    let mut bins = Vec::with_capacity(t);
    for col in 0..t {
        let mut hot = None;
        for r in 0..rows {
            match x.at(r, col) {
                0.0 => {}
                1.0 if hot.is_none() => hot = Some(r),
                _ => {
                    return Err(Error::Contract(format!("input column {col} is not one-hot")));
                }
            }
        }
        let r = hot.ok_or_else(|| Error::Contract(format!("input column {col} is all zero")))?;
        bins.push(r as u8);
    }
    Ok(bins)
}

#[derive(Clone, Debug)]
pub struct MtlHead {
    pub config: MtlHeadConfig,
    pub w: ParamId,
    pub b: ParamId,
}

/// Frame-level outputs of the secondary task.
#[derive(Clone, Copy, Debug)]
pub struct SecondaryPrediction {
    pub cepstra: Var,
    pub logf0: Option<Var>,
    /// Post-sigmoid, in (0, 1).
    pub vuv: Option<Var>,
}

impl MtlHead {
    pub fn new<R: Rng + ?Sized>(config: &MtlHeadConfig, input_dim: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let out = config.output_dim();
        Self {
            config: config.clone(),
            w: store.add_normal("head.w", &[out, input_dim], input_dim, rng),
            b: store.add_zeros("head.b", &[out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, frame_encoding: Var) -> Result<SecondaryPrediction> {
        let out = tape.conv1x1(frame_encoding, bound.var(self.w), Some(bound.var(self.b)))?;
        let n = self.config.n_cepstra;
        let cepstra = tape.slice_rows(out, 0, n)?;
        let mut row = n;
        let logf0 = if self.config.predict_logf0 {
            row += 1;
            Some(tape.slice_rows(out, row - 1, row)?)
        } else {
            None
        };
        let vuv = if self.config.predict_vuv {
            let raw = tape.slice_rows(out, row, row + 1)?;
            Some(tape.sigmoid(raw)?)
        } else {
            None
        };
        Ok(SecondaryPrediction { cepstra, logf0, vuv })
    }
}
