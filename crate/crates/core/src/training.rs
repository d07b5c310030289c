//! Teacher-forced training on frame-aligned windows.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Tape, Var};
use crate::codec::SILENCE_BIN;
use crate::container::Container;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::{FrameTargets, ModelConfig, MtlWaveNet};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::wavenet::SecondaryPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    /// Samples per window; a multiple of the frame shift. Defaults to twice
    /// the receptive field rounded up to whole frames.
    pub window_samples: Option<usize>,
    pub batch_size: usize,
    /// Extra condition frames run through the conditioner on each side of
    /// the window, clipped at utterance boundaries.
    pub context_frames: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            window_samples: None,
            batch_size: 4,
            context_frames: 16,
        }
    }
}

/// λ weights of the secondary losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cep: f64,
    pub f0: f64,
    pub vuv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cep: 1.0,
            f0: 1.0,
            vuv: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: Self = Self {
        cep: 0.0,
        f0: 0.0,
        vuv: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch: BatchConfig,
    pub loss_weights: LossWeights,
    pub steps: usize,
    pub seed: u64,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch: BatchConfig::default(),
            loss_weights: LossWeights::default(),
            steps: 1000,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn window_samples(&self, frame_shift: usize) -> usize {
        self.batch.window_samples.unwrap_or_else(|| {
            let n = self.model.wavenet.receptive_field();
            (2 * n).div_ceil(frame_shift) * frame_shift
        })
    }

    pub fn validate(&self, frame_shift: usize) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate {} must be positive",
                o.learning_rate
            )));
        }
        for (name, b) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if o.epsilon.is_nan() || o.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "optimizer.epsilon {} must be positive",
                o.epsilon
            )));
        }
        if self.batch.batch_size == 0 {
            return Err(Error::Config("batch.batch_size must be at least 1".into()));
        }
        let w = self.window_samples(frame_shift);
        let n = self.model.wavenet.receptive_field();
        if w <= n {
            return Err(Error::Config(format!(
                "batch.window_samples {w} must exceed the receptive field {n}"
            )));
        }
        if !w.is_multiple_of(frame_shift) {
            return Err(Error::Config(format!(
                "batch.window_samples {w} must be a multiple of the frame shift {frame_shift}"
            )));
        }
        let l = &self.loss_weights;
        for (name, v) in [
            ("loss_weights.cep", l.cep),
            ("loss_weights.f0", l.f0),
            ("loss_weights.vuv", l.vuv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Per-utterance training inputs in model units.
#[derive(Clone, Debug)]
pub struct PreparedUtterance {
    pub id: String,
    pub bins: Vec<u8>,
    /// Conditioner input `[D_c × F]`.
    pub condition: Tensor,
    pub targets: FrameTargets,
}

impl PreparedUtterance {
    pub fn num_frames(&self) -> usize {
        self.condition.cols()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingData {
    pub utterances: Vec<PreparedUtterance>,
    pub frame_shift: usize,
}

impl TrainingData {
    pub fn prepare(model: &MtlWaveNet, utterances: &[Utterance]) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Argument("training corpus is empty".into()));
        }
        let utterances = utterances
            .iter()
            .map(|u| {
                if u.frame_shift != model.frame_shift {
                    return Err(Error::Config(format!(
                        "{}: frame shift {} differs from the model's {}",
                        u.id, u.frame_shift, model.frame_shift
                    )));
                }
                Ok(PreparedUtterance {
                    id: u.id.clone(),
                    bins: u.bins()?,
                    condition: model.utterance_condition(u)?,
                    targets: model.frame_targets(u)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            utterances,
            frame_shift: model.frame_shift,
        })
    }
}

/// One training window. Sample and frame spans line up:
/// `targets.len() == n_frames · frame_shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub utterance: usize,
    /// First frame of the window; negative when left-padded with silence.
    pub frame_start: isize,
    pub n_frames: usize,
    /// Bins to predict.
    pub targets: Vec<u8>,
    /// History presented to the network (targets shifted right by one).
    pub inputs: Vec<u8>,
    /// Conditioner input over the window plus clipped context.
    pub condition: Tensor,
    /// Columns of the conditioner output belonging to the window.
    pub crop: std::ops::Range<usize>,
    pub frame_targets: FrameTargets,
    /// False on padded frames.
    pub frame_mask: Vec<bool>,
}

/// Cuts the window of `n_frames` frames starting at `frame_start`.
pub fn make_window(
    data: &TrainingData,
    utterance: usize,
    frame_start: isize,
    n_frames: usize,
    context_frames: usize,
) -> Result<Window> {
    let u = data.utterances.get(utterance).ok_or_else(|| {
        Error::Index(format!(
            "utterance {utterance} outside corpus of {}",
            data.utterances.len()
        ))
    })?;
    let shift = data.frame_shift;
    let f_total = u.num_frames() as isize;
    if n_frames == 0 || frame_start + n_frames as isize > f_total.max(n_frames as isize) {
        return Err(Error::Index(format!(
            "window at frame {frame_start} of {n_frames} frames does not fit {f_total} frames"
        )));
    }
    let bin_at = |s: isize| if s >= 0 { u.bins[s as usize] } else { SILENCE_BIN };
    let s0 = frame_start * shift as isize;
    let len = n_frames * shift;
    let targets: Vec<u8> = (0..len as isize).map(|i| bin_at(s0 + i)).collect();
    let inputs: Vec<u8> = (0..len as isize).map(|i| bin_at(s0 + i - 1)).collect();

    let lo = frame_start.min(0);
    let c_start = (frame_start - context_frames as isize).max(lo);
    let c_end = (frame_start + (n_frames + context_frames) as isize).min(f_total);
    let dc = u.condition.rows();
    let width = (c_end - c_start) as usize;
    let mut condition = Tensor::zeros(&[dc, width]);
    for (j, f) in (c_start..c_end).enumerate() {
        if f >= 0 {
            for r in 0..dc {
                condition.set(r, j, u.condition.at(r, f as usize));
            }
        }
    }
    let crop_start = (frame_start - c_start) as usize;

    let n_cep = u.targets.cepstra.rows();
    let mut ft = FrameTargets {
        cepstra: Tensor::zeros(&[n_cep, n_frames]),
        logf0: Tensor::zeros(&[1, n_frames]),
        vuv: Tensor::zeros(&[1, n_frames]),
    };
    let mut frame_mask = vec![false; n_frames];
    for (j, mask) in frame_mask.iter_mut().enumerate() {
        let f = frame_start + j as isize;
        if f >= 0 {
            let f = f as usize;
            for k in 0..n_cep {
                ft.cepstra.set(k, j, u.targets.cepstra.at(k, f));
            }
            ft.logf0.set(0, j, u.targets.logf0.at(0, f));
            ft.vuv.set(0, j, u.targets.vuv.at(0, f));
            *mask = true;
        }
    }
    Ok(Window {
        utterance,
        frame_start,
        n_frames,
        targets,
        inputs,
        condition,
        crop: crop_start..crop_start + n_frames,
        frame_targets: ft,
        frame_mask,
    })
}

/// Draws one batch. Window starts are uniform over all frame-aligned
/// positions in the corpus; utterances shorter than the window contribute a
/// single left-padded position.
pub fn make_batches(
    data: &TrainingData,
    window_samples: usize,
    batch_size: usize,
    context_frames: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Window>> {
    let shift = data.frame_shift;
    if window_samples == 0 || !window_samples.is_multiple_of(shift) {
        return Err(Error::Argument(format!(
            "window of {window_samples} samples is not a positive multiple of the frame shift {shift}"
        )));
    }
    let nf = window_samples / shift;
    let positions: Vec<usize> = data
        .utterances
        .iter()
        .map(|u| u.num_frames().saturating_sub(nf) + 1)
        .collect();
    let total: usize = positions.iter().sum();
    if total == 0 {
        return Err(Error::Argument("no training windows available".into()));
    }
    (0..batch_size)
        .map(|_| {
            let mut r = rng.gen_range(0..total);
            let mut u = 0;
            while r >= positions[u] {
                r -= positions[u];
                u += 1;
            }
            let f = data.utterances[u].num_frames() as isize;
            let start = if f >= nf as isize { r as isize } else { f - nf as isize };
            make_window(data, u, start, nf, context_frames)
        })
        .collect()
}

/// Graph handles of the loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub cep: Option<Var>,
    pub f0: Option<Var>,
    pub vuv: Option<Var>,
}

/// `ce + λ_cep·mse(cep) + λ_f0·mse(logf0 | voiced) + λ_vuv·mse(vuv)`. Terms
/// with λ = 0 are evaluated for logging but kept out of the total.
pub fn composite_loss(
    tape: &mut Tape,
    logits: Var,
    target_bins: &[usize],
    secondary: Option<(&SecondaryPrediction, &FrameTargets, &[bool])>,
    weights: LossWeights,
) -> Result<LossTerms> {
    let ce = tape.softmax_cross_entropy(logits, target_bins)?;
    let mut terms = LossTerms {
        total: ce,
        ce,
        cep: None,
        f0: None,
        vuv: None,
    };
    let Some((pred, target, frame_mask)) = secondary else {
        return Ok(terms);
    };
    let nf = target.num_frames();
    if frame_mask.len() != nf {
        return Err(Error::Dimension(format!(
            "frame mask has {} entries for {nf} frames",
            frame_mask.len()
        )));
    }
    let mut total = ce;
    let mut add = |tape: &mut Tape, pred: Var, target: &Tensor, mask: Vec<bool>, w: f64| -> Result<Var> {
        let t = tape.constant(target.clone());
        let l = tape.mse(pred, t, Some(&mask))?;
        if w != 0.0 {
            let s = tape.scale(l, w)?;
            total = tape.add(total, s)?;
        }
        Ok(l)
    };
    let cep_mask: Vec<bool> = (0..target.cepstra.rows())
        .flat_map(|_| frame_mask.iter().copied())
        .collect();
    terms.cep = Some(add(tape, pred.cepstra, &target.cepstra, cep_mask, weights.cep)?);
    if let Some(p) = pred.logf0 {
        let voiced = target.voiced().iter().zip(frame_mask).map(|(&v, &m)| v && m).collect();
        terms.f0 = Some(add(tape, p, &target.logf0, voiced, weights.f0)?);
    }
    if let Some(p) = pred.vuv {
        terms.vuv = Some(add(tape, p, &target.vuv, frame_mask.to_vec(), weights.vuv)?);
    }
    terms.total = total;
    Ok(terms)
}

/// Scalar loss values of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub ce: f64,
    pub cep: Option<f64>,
    pub f0: Option<f64>,
    pub vuv: Option<f64>,
    pub total: f64,
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub ce: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cep: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vuv: Option<f64>,
    pub total: f64,
    pub wall_time: f64,
}

impl LossRecord {
    /// Equality ignoring wall time.
    pub fn same_losses(&self, other: &Self) -> bool {
        self.step == other.step
            && self.ce.to_bits() == other.ce.to_bits()
            && self.cep.map(f64::to_bits) == other.cep.map(f64::to_bits)
            && self.f0.map(f64::to_bits) == other.f0.map(f64::to_bits)
            && self.vuv.map(f64::to_bits) == other.vuv.map(f64::to_bits)
            && self.total.to_bits() == other.total.to_bits()
    }
}

/// Loss and parameter gradients for one window.
pub fn window_gradients(
    model: &MtlWaveNet,
    window: &Window,
    weights: LossWeights,
) -> Result<(LossValues, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let cond = tape.constant(window.condition.clone());
    let out = model.forward(&mut tape, &bound, cond, window.crop.clone(), &window.inputs)?;
    let targets: Vec<usize> = window.targets.iter().map(|&b| usize::from(b)).collect();
    let secondary = out
        .secondary
        .as_ref()
        .map(|p| (p, &window.frame_targets, window.frame_mask.as_slice()));
    let terms = composite_loss(&mut tape, out.logits, &targets, secondary, weights)?;
    let scalar = |v: Var| -> Result<f64> { Ok(tape.value(v)?.data()[0]) };
    let values = LossValues {
        ce: scalar(terms.ce)?,
        cep: terms.cep.map(scalar).transpose()?,
        f0: terms.f0.map(scalar).transpose()?,
        vuv: terms.vuv.map(scalar).transpose()?,
        total: scalar(terms.total)?,
    };
    let grads = tape.backward(terms.total)?;
    let g = bound.vars().iter().map(|&v| grads.get(v)).collect::<Result<_>>()?;
    Ok((values, g))
}

/// Mean loss and gradient over a batch; reduction order is fixed.
pub fn batch_gradients(
    model: &MtlWaveNet,
    windows: &[Window],
    weights: LossWeights,
) -> Result<(LossValues, Vec<Tensor>)> {
    if windows.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let results: Vec<(LossValues, Vec<Tensor>)> = windows
        .par_iter()
        .map(|w| window_gradients(model, w, weights))
        .collect::<Result<_>>()?;
    let n = windows.len() as f64;
    let mut iter = results.into_iter();
    let (first_v, mut acc) = iter.next().expect("non-empty batch");
    let mut sum = first_v;
    let add_opt = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| x + y);
    for (v, g) in iter {
        sum.ce += v.ce;
        sum.total += v.total;
        sum.cep = add_opt(sum.cep, v.cep);
        sum.f0 = add_opt(sum.f0, v.f0);
        sum.vuv = add_opt(sum.vuv, v.vuv);
        for (a, b) in acc.iter_mut().zip(&g) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    let mean = LossValues {
        ce: sum.ce / n,
        cep: sum.cep.map(|x| x / n),
        f0: sum.f0.map(|x| x / n),
        vuv: sum.vuv.map(|x| x / n),
        total: sum.total / n,
    };
    Ok((mean, acc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Batch sampling RNG for `step`; a pure function of `(seed, step)` so a
/// resumed run draws the same windows.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

pub struct Trainer {
    pub model: MtlWaveNet,
    pub config: TrainConfig,
    pub adam: Adam,
    /// Number of updates applied so far.
    pub step: usize,
    pub run_id: String,
    started: Instant,
}

impl Trainer {
    pub fn new(model: MtlWaveNet, config: TrainConfig, run_id: impl Into<String>) -> Result<Self> {
        config.validate(model.frame_shift)?;
        if config.model != model.config {
            return Err(Error::Config(
                "train config's [model] section differs from the model".into(),
            ));
        }
        let adam = Adam::new(config.optimizer.clone(), &model.params);
        Ok(Self {
            model,
            config,
            adam,
            step: 0,
            run_id: run_id.into(),
            started: Instant::now(),
        })
    }

    pub fn window_samples(&self) -> usize {
        self.config.window_samples(self.model.frame_shift)
    }

    pub fn batch_for_step(&self, data: &TrainingData, step: usize) -> Result<Vec<Window>> {
        let mut rng = step_rng(self.config.seed, step);
        make_batches(
            data,
            self.window_samples(),
            self.config.batch.batch_size,
            self.config.batch.context_frames,
            &mut rng,
        )
    }

    /// One Adam update; returns the loss measured before it.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<LossRecord> {
        let batch = self.batch_for_step(data, self.step)?;
        self.train_on(&batch)
    }

    /// One Adam update on an explicit batch.
    pub fn train_on(&mut self, batch: &[Window]) -> Result<LossRecord> {
        let (values, grads) = batch_gradients(&self.model, batch, self.config.loss_weights)?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = self
                .model
                .params
                .name(self.model.params.ids().nth(i).expect("index in range"));
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {name} at step {} (loss {})",
                self.step, values.total
            )));
        }
        if !values.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {} at step {}",
                values.total, self.step
            )));
        }
        self.adam.step(&mut self.model.params, &grads)?;
        let record = LossRecord {
            step: self.step,
            ce: values.ce,
            cep: values.cep,
            f0: values.f0,
            vuv: values.vuv,
            total: values.total,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Container {
        let mut c = self.model.to_container(json!({
            "kind": "checkpoint",
            "run_id": self.run_id,
            "step": self.step,
            "train": self.config,
            "adam_t": self.adam.t,
        }));
        let names: Vec<String> = self.model.params.iter().map(|(n, _)| n.to_string()).collect();
        for ((name, m), v) in names.iter().zip(&self.adam.m).zip(&self.adam.v) {
            c.insert(format!("adam.m/{name}"), m.clone());
            c.insert(format!("adam.v/{name}"), v.clone());
        }
        c
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().write(path)
    }

    /// Restores model, optimizer state, step and run id. `config` replaces
    /// the stored training config when given (e.g. to extend `steps`); its
    /// model section must match the checkpoint.
    pub fn from_checkpoint(c: &Container, config: Option<TrainConfig>) -> Result<Self> {
        let model = MtlWaveNet::from_container(c)?;
        let stored: TrainConfig = serde_json::from_value(c.header.get("train").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::format("train", e.to_string()))?;
        let config = config.unwrap_or(stored);
        let step = c
            .header
            .get("step")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::format("step", "checkpoint header lacks the step"))? as usize;
        let run_id = c
            .header
            .get("run_id")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let mut trainer = Self::new(model, config, run_id)?;
        trainer.step = step;
        trainer.adam.t = c.header.get("adam_t").and_then(Value::as_u64).unwrap_or(step as u64);
        let names: Vec<String> = trainer.model.params.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [("adam.m/", &mut trainer.adam.m[i]), ("adam.v/", &mut trainer.adam.v[i])] {
                let t = c.get(&format!("{prefix}{name}"))?;
                if t.shape() != slot.shape() {
                    return Err(Error::format(
                        format!("{prefix}{name}"),
                        "shape differs from the parameter",
                    ));
                }
                *slot = t.clone();
            }
        }
        Ok(trainer)
    }

    pub fn resume(path: impl AsRef<Path>, config: Option<TrainConfig>) -> Result<Self> {
        Self::from_checkpoint(&Container::read(path)?, config)
    }

    /// Trains until `config.steps` updates have been applied, appending to
    /// `out/loss.jsonl` and writing checkpoints into `out` when given.
    pub fn run(&mut self, data: &TrainingData, out: Option<&Path>) -> Result<TrainOutcome> {
        let mut log = match out {
            Some(dir) => Some(LossLog::open(dir, &self.run_id, self.model.mode.as_str(), self.step)?),
            None => None,
        };
        let mut records = Vec::new();
        let mut checkpoints = Vec::new();
        while self.step < self.config.steps {
            let record = self.train_step(data)?;
            if let Some(l) = log.as_mut() {
                l.append(&record)?;
            }
            records.push(record);
            let every = self.config.checkpoint_every;
            if let Some(dir) = out {
                if (every > 0 && self.step.is_multiple_of(every)) || self.step == self.config.steps {
                    let p = dir.join(checkpoint_name(self.step));
                    self.save_checkpoint(&p)?;
                    checkpoints.push(p);
                }
            }
        }
        if let Some(l) = log.as_mut() {
            l.flush()?;
        }
        Ok(TrainOutcome { records, checkpoints })
    }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step:06}.mtwn")
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Append-only JSONL loss log with a header line.
pub struct LossLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LossLog {
    pub const FILE: &'static str = "loss.jsonl";

    /// Opens `dir/loss.jsonl` for a run starting at `from_step`. A fresh run
    /// truncates the file; a resumed one keeps the records before
    /// `from_step` and drops any later ones left by an earlier attempt.
    pub fn open(dir: &Path, run_id: &str, mode: &str, from_step: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        let kept = if from_step > 0 && path.exists() {
            let (header, records) = Self::read(&path)?;
            Some((
                header,
                records.into_iter().filter(|r| r.step < from_step).collect::<Vec<_>>(),
            ))
        } else {
            None
        };
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            path,
            out: BufWriter::new(file),
        };
        let (header, records) =
            kept.unwrap_or_else(|| (json!({"kind": "loss_log", "run_id": run_id, "mode": mode}), Vec::new()));
        writeln!(log.out, "{header}").map_err(|e| Error::io(&log.path, e))?;
        for r in &records {
            log.append(r)?;
        }
        Ok(log)
    }

    pub fn append(&mut self, record: &LossRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::format("loss record", e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// Header and records of a log file.
    pub fn read(path: impl AsRef<Path>) -> Result<(Value, Vec<LossRecord>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format("loss log", "empty file"))
            .and_then(|l| serde_json::from_str(l).map_err(|e| Error::format("loss log header", e.to_string())))?;
        let records = lines
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format("loss record", e.to_string())))
            .collect::<Result<_>>()?;
        Ok((header, records))
    }
}
