//! Autoregressive generation with per-block ring buffers.
//!
//! Each residual block keeps the last `(K−1)·d + 1` inputs it has seen, which
//! is everything its dilated kernel reads, so one step costs the same at
//! t = 10 and t = 10⁶.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, WaveformBuffer, QUANTIZATION_LEVELS, SILENCE_BIN};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::kernels::{matvec_acc, sigmoid};
use crate::model::MtlWaveNet;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::wavenet::WaveNet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    #[default]
    Sample,
    Argmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    /// Softmax temperature for `Sample`.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SampleMode::Sample,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn argmax() -> Self {
        Self {
            mode: SampleMode::Argmax,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Argument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// ARGMAX: lowest index among the maxima. SAMPLE: one categorical draw from
/// `softmax(logits / temperature)`.
pub fn sample_bin(logits: &[f64], sampler: &SamplerConfig, rng: &mut impl Rng) -> Result<usize> {
    sampler.validate()?;
    if logits.is_empty() {
        return Err(Error::Argument("no logits to sample from".into()));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("logit {i} is {}", logits[i])));
    }
    let (best, max) = logits.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    );
    if sampler.mode == SampleMode::Argmax {
        return Ok(best);
    }
    let weights: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / sampler.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap_or(best))
}

#[derive(Clone, Debug)]
struct Ring {
    /// `capacity × channels`, one time step per row.
    data: Vec<f64>,
    capacity: usize,
}

/// Generation state for one rollout.
#[derive(Clone, Debug, Default)]
pub struct GenerationCache {
    rings: Vec<Ring>,
    channels: usize,
    t: usize,
    initialized: bool,
    scratch: Scratch,
}

#[derive(Clone, Debug, Default)]
struct Scratch {
    h: Vec<f64>,
    zf: Vec<f64>,
    zg: Vec<f64>,
    g: Vec<f64>,
    skip: Vec<f64>,
    a: Vec<f64>,
    logits: Vec<f64>,
}

impl GenerationCache {
    /// An empty cache; [`reset`](Self::reset) must be called before stepping.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_model(net: &WaveNet) -> Self {
        let mut c = Self::new();
        c.reset(net);
        c
    }

    /// Zeroes every buffer and sizes them for `net`.
    pub fn reset(&mut self, net: &WaveNet) {
        let cfg = &net.config;
        let r = cfg.residual_channels;
        self.rings = net
            .blocks
            .iter()
            .map(|b| {
                let capacity = (cfg.filter_width - 1) * b.dilation + 1;
                Ring {
                    data: vec![0.0; capacity * r],
                    capacity,
                }
            })
            .collect();
        self.channels = r;
        self.t = 0;
        self.initialized = true;
        self.scratch = Scratch {
            h: vec![0.0; r],
            zf: vec![0.0; cfg.gate_channels],
            zg: vec![0.0; cfg.gate_channels],
            g: vec![0.0; cfg.gate_channels],
            skip: vec![0.0; cfg.skip_channels],
            a: vec![0.0; cfg.skip_channels],
            logits: vec![0.0; cfg.quantization_levels],
        };
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Steps taken since the last reset.
    pub fn steps(&self) -> usize {
        self.t
    }

    /// Activations held across all ring buffers.
    pub fn activation_count(&self) -> usize {
        self.rings.iter().map(|r| r.data.len()).sum()
    }

    fn check(&self, net: &WaveNet) -> Result<()> {
        if !self.initialized {
            return Err(Error::Usage("generation cache used before reset".into()));
        }
        let cfg = &net.config;
        let fits = self.rings.len() == net.blocks.len()
            && self.channels == cfg.residual_channels
            && self
                .rings
                .iter()
                .zip(&net.blocks)
                .all(|(r, b)| r.capacity == (cfg.filter_width - 1) * b.dilation + 1);
        if !fits {
            return Err(Error::Usage(
                "generation cache was sized for a different network".into(),
            ));
        }
        Ok(())
    }
}

/// Condition contribution for one step.
enum CondColumn<'a> {
    /// Encoded condition `[D_enc]`, projected on the fly.
    Raw(&'a [f64]),
    /// Per block, filter then gate projection `[2G]`.
    Projected(&'a [Vec<f64>]),
}

/// Per-frame condition projections for every block: `out[f][block]` is
/// `[V_f·c_f ; V_g·c_f]`.
pub fn project_frames(net: &WaveNet, params: &ParamStore, frames: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    let (d, nf) = frames.dims2()?;
    let cfg = &net.config;
    if d != cfg.condition_dim {
        return Err(Error::Dimension(format!(
            "condition has {d} dims, network expects {}",
            cfg.condition_dim
        )));
    }
    let g = cfg.gate_channels;
    let mut col = vec![0.0; d];
    (0..nf)
        .map(|f| {
            for (r, c) in col.iter_mut().enumerate() {
                *c = frames.at(r, f);
            }
            Ok(net
                .blocks
                .iter()
                .map(|b| {
                    let mut out = vec![0.0; 2 * g];
                    matvec_acc(params.get(b.v_filter).data(), g, d, &col, &mut out[..g]);
                    matvec_acc(params.get(b.v_gate).data(), g, d, &col, &mut out[g..]);
                    out
                })
                .collect())
        })
        .collect()
}

fn step_inner(
    cache: &mut GenerationCache,
    net: &WaveNet,
    params: &ParamStore,
    bin: usize,
    cond: CondColumn,
) -> Result<Vec<f64>> {
    cache.check(net)?;
    let cfg = &net.config;
    let (q, r, gch, k) = (
        cfg.quantization_levels,
        cfg.residual_channels,
        cfg.gate_channels,
        cfg.filter_width,
    );
    if bin >= q {
        return Err(Error::Index(format!("input bin {bin} outside [0, {q})")));
    }
    match cond {
        CondColumn::Raw(c) if c.len() != cfg.condition_dim => {
            return Err(Error::Dimension(format!(
                "condition column has {} entries, network expects {}",
                c.len(),
                cfg.condition_dim
            )));
        }
        CondColumn::Projected(p) if p.len() != net.blocks.len() => {
            return Err(Error::Dimension(
                "projected condition does not match the block count".into(),
            ));
        }
        _ => {}
    }
    let t = cache.t;
    let s = &mut cache.scratch;
    let embed = params.get(net.embed_w).data();
    let embed_b = params.get(net.embed_b).data();
    for (i, h) in s.h.iter_mut().enumerate() {
        *h = embed[i * q + bin] + embed_b[i];
    }
    s.skip.iter_mut().for_each(|v| *v = 0.0);
    for (bi, (block, ring)) in net.blocks.iter().zip(cache.rings.iter_mut()).enumerate() {
        let cap = ring.capacity;
        let slot = t % cap;
        ring.data[slot * r..(slot + 1) * r].copy_from_slice(&s.h);
        let bf = params.get(block.b_filter).data();
        let bg = params.get(block.b_gate).data();
        s.zf.copy_from_slice(bf);
        s.zg.copy_from_slice(bg);
        let wf = params.get(block.w_filter).data();
        let wg = params.get(block.w_gate).data();
        for kk in 0..k {
            let delay = (k - 1 - kk) * block.dilation;
            if delay > t {
                continue;
            }
            let src = (t - delay) % cap;
            let x = &ring.data[src * r..(src + 1) * r];
            for o in 0..gch {
                let (mut af, mut ag) = (0.0, 0.0);
                for (i, &xv) in x.iter().enumerate() {
                    let idx = (o * r + i) * k + kk;
                    af += wf[idx] * xv;
                    ag += wg[idx] * xv;
                }
                s.zf[o] += af;
                s.zg[o] += ag;
            }
        }
        match cond {
            CondColumn::Raw(c) => {
                let d = c.len();
                matvec_acc(params.get(block.v_filter).data(), gch, d, c, &mut s.zf);
                matvec_acc(params.get(block.v_gate).data(), gch, d, c, &mut s.zg);
            }
            CondColumn::Projected(p) => {
                let p = &p[bi];
                for o in 0..gch {
                    s.zf[o] += p[o];
                    s.zg[o] += p[gch + o];
                }
            }
        }
        for o in 0..gch {
            s.g[o] = s.zf[o].tanh() * sigmoid(s.zg[o]);
        }
        let mut res = params.get(block.b_res).data().to_vec();
        matvec_acc(params.get(block.w_res).data(), r, gch, &s.g, &mut res);
        for (h, v) in s.h.iter_mut().zip(&res) {
            *h += v;
        }
        let bs = params.get(block.b_skip).data();
        for (acc, b) in s.skip.iter_mut().zip(bs) {
            *acc += b;
        }
        matvec_acc(
            params.get(block.w_skip).data(),
            cfg.skip_channels,
            gch,
            &s.g,
            &mut s.skip,
        );
    }
    let sc = cfg.skip_channels;
    for v in s.skip.iter_mut() {
        *v = v.max(0.0);
    }
    s.a.copy_from_slice(params.get(net.out1_b).data());
    matvec_acc(params.get(net.out1_w).data(), sc, sc, &s.skip, &mut s.a);
    for v in s.a.iter_mut() {
        *v = v.max(0.0);
    }
    s.logits.copy_from_slice(params.get(net.out2_b).data());
    matvec_acc(params.get(net.out2_w).data(), q, sc, &s.a, &mut s.logits);
    cache.t += 1;
    Ok(s.logits.clone())
}

/// Advances the cache by one sample. `x_t` is the one-hot of the previous
/// sample (silence at t = 0) and `c_t` the encoded condition column.
pub fn incremental_step(
    cache: &mut GenerationCache,
    net: &WaveNet,
    params: &ParamStore,
    x_t: &[f64],
    c_t: &[f64],
) -> Result<Vec<f64>> {
    if x_t.len() != net.config.quantization_levels {
        return Err(Error::Dimension(format!(
            "input column has {} entries, expected {}",
            x_t.len(),
            net.config.quantization_levels
        )));
    }
    let mut hot = None;
    for (i, &v) in x_t.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::Contract("input column is not one-hot".into()));
        }
    }
    let bin = hot.ok_or_else(|| Error::Contract("input column is all zero".into()))?;
    step_inner(cache, net, params, bin, CondColumn::Raw(c_t))
}

/// [`incremental_step`] with the input given as a bin index.
pub fn incremental_step_bin(
    cache: &mut GenerationCache,
    net: &WaveNet,
    params: &ParamStore,
    bin: u8,
    c_t: &[f64],
) -> Result<Vec<f64>> {
    step_inner(cache, net, params, usize::from(bin), CondColumn::Raw(c_t))
}

/// Generated bins and their decoded waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub bins: Vec<u8>,
    pub waveform: WaveformBuffer,
}

fn rollout(
    net: &WaveNet,
    params: &ParamStore,
    steps: usize,
    sampler: &SamplerConfig,
    sample_rate: u32,
    mut step: impl FnMut(&mut GenerationCache, u8, usize) -> Result<Vec<f64>>,
) -> Result<Generated> {
    sampler.validate()?;
    if net.config.quantization_levels != QUANTIZATION_LEVELS {
        return Err(Error::Config("generation decodes 256-level μ-law only".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut cache = GenerationCache::for_model(net);
    let mut bins = Vec::with_capacity(steps);
    let mut prev = SILENCE_BIN;
    let _ = params;
    for t in 0..steps {
        let logits = step(&mut cache, prev, t)?;
        let b = sample_bin(&logits, sampler, &mut rng)? as u8;
        bins.push(b);
        prev = b;
    }
    let samples = bins.iter().map(|&b| codec::mulaw_decode_u8(b)).collect();
    Ok(Generated {
        bins,
        waveform: WaveformBuffer::new(samples, sample_rate),
    })
}

/// Generates `T` samples from a sample-rate condition `[D_enc × T]`.
pub fn generate(net: &WaveNet, params: &ParamStore, cond: &Tensor, sampler: &SamplerConfig) -> Result<Generated> {
    let (d, t) = cond.dims2()?;
    if d != net.config.condition_dim {
        return Err(Error::Dimension(format!(
            "condition has {d} dims, network expects {}",
            net.config.condition_dim
        )));
    }
    let mut col = vec![0.0; d];
    rollout(
        net,
        params,
        t,
        sampler,
        codec::DEFAULT_SAMPLE_RATE,
        |cache, prev, step| {
            for (r, c) in col.iter_mut().enumerate() {
                *c = cond.at(r, step);
            }
            step_inner(cache, net, params, usize::from(prev), CondColumn::Raw(&col))
        },
    )
}

/// Generates `F · frame_shift` samples from a frame-rate condition; each
/// frame's projection is computed once.
pub fn generate_frames(
    net: &WaveNet,
    params: &ParamStore,
    frames: &Tensor,
    frame_shift: usize,
    sampler: &SamplerConfig,
    sample_rate: u32,
) -> Result<Generated> {
    if frame_shift == 0 {
        return Err(Error::Argument("frame_shift must be at least 1".into()));
    }
    let proj = project_frames(net, params, frames)?;
    rollout(
        net,
        params,
        proj.len() * frame_shift,
        sampler,
        sample_rate,
        |cache, prev, step| {
            step_inner(
                cache,
                net,
                params,
                usize::from(prev),
                CondColumn::Projected(&proj[step / frame_shift]),
            )
        },
    )
}

/// Full synthesis path: conditioner on the frame features, then generation.
/// The secondary head is not evaluated.
pub fn synthesize(
    model: &MtlWaveNet,
    condition_features: &Tensor,
    sampler: &SamplerConfig,
    sample_rate: u32,
) -> Result<Generated> {
    let frames = model.encode_condition(condition_features)?;
    generate_frames(
        &model.wavenet,
        &model.params,
        &frames,
        model.frame_shift,
        sampler,
        sample_rate,
    )
}

/// Synthesizes `utt` at its oracle duration and sample rate. With
/// `oracle_f0` the corpus log-F0 and V/UV feed an F0-conditioned model; the
/// other modes read linguistic features only and never need them.
pub fn synthesize_utterance(
    model: &MtlWaveNet,
    utt: &Utterance,
    sampler: &SamplerConfig,
    oracle_f0: bool,
) -> Result<Generated> {
    if utt.frame_shift != model.frame_shift {
        return Err(Error::Dimension(format!(
            "utterance {} has frame shift {}, model expects {}",
            utt.id, utt.frame_shift, model.frame_shift
        )));
    }
    let f0 = oracle_f0.then_some((&utt.logf0, &utt.vuv));
    let cond = model.condition_features(&utt.linguistic, f0)?;
    synthesize(model, &cond, sampler, utt.waveform.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::wavenet::{Conditioning, WaveNetConfig};

    fn net(cfg: WaveNetConfig, seed: u64, randomize_out: bool) -> (WaveNet, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = WaveNet::new(&cfg, &mut store, &mut rng).unwrap();
        if randomize_out {
            for id in store.ids().collect::<Vec<_>>() {
                if store.name(id).ends_with(".b") || store.name(id).contains(".b_") || store.name(id).contains("out2") {
                    let shape = store.get(id).shape().to_vec();
                    *store.get_mut(id) = Tensor::randn(&shape, 0.3, &mut rng);
                }
            }
        }
        (net, store)
    }

    fn cfg(stacks: usize, layers: usize, k: usize) -> WaveNetConfig {
        WaveNetConfig {
            num_stacks: stacks,
            layers_per_stack: layers,
            filter_width: k,
            residual_channels: 6,
            gate_channels: 5,
            skip_channels: 7,
            condition_dim: 3,
            ..WaveNetConfig::default()
        }
    }

    fn full_logits(net: &WaveNet, store: &ParamStore, inputs: &[u8], cond: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let c = tape.constant(cond.clone());
        let l = net
            .forward_inputs(&mut tape, &bound, inputs, Conditioning::Samples(c))
            .unwrap();
        tape.value(l).unwrap().clone()
    }

    #[test]
    fn cached_steps_match_full_forward() {
        for (i, c) in [cfg(1, 3, 2), cfg(2, 3, 3)].into_iter().enumerate() {
            let (net, store) = net(c, i as u64, true);
            let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
            let t = 200;
            let inputs: Vec<u8> = (0..t).map(|_| rng.gen()).collect();
            let cond = Tensor::randn(&[3, t], 1.0, &mut rng);
            let full = full_logits(&net, &store, &inputs, &cond);
            let mut cache = GenerationCache::for_model(&net);
            for s in 0..t {
                let col: Vec<f64> = (0..3).map(|r| cond.at(r, s)).collect();
                let logits = incremental_step(
                    &mut cache,
                    &net,
                    &store,
                    &codec::one_hot(&[inputs[s]]).into_data(),
                    &col,
                )
                .unwrap();
                for (q, &v) in logits.iter().enumerate() {
                    assert!((v - full.at(q, s)).abs() < 1e-6, "step {s}");
                }
            }
        }
    }

    #[test]
    fn reset_replays_identically_and_zero_model_is_uniform() {
        let (net, store) = net(cfg(1, 3, 2), 3, false);
        let mut cache = GenerationCache::for_model(&net);
        let first = incremental_step_bin(&mut cache, &net, &store, 17, &[0.1, 0.2, 0.3]).unwrap();
        assert!(first.iter().all(|&v| v == first[0]));
        let (net, store) = net_pair_random();
        let mut cache = GenerationCache::for_model(&net);
        let run = |cache: &mut GenerationCache| -> Vec<Vec<f64>> {
            (0..20u8)
                .map(|b| incremental_step_bin(cache, &net, &store, b * 7, &[0.5, -0.5, 1.0]).unwrap())
                .collect()
        };
        let a = run(&mut cache);
        cache.reset(&net);
        assert_eq!(run(&mut cache), a);
    }

    fn net_pair_random() -> (WaveNet, ParamStore) {
        net(cfg(2, 2, 2), 11, true)
    }

    #[test]
    fn uninitialized_or_foreign_cache_is_a_usage_error() {
        let (a, store) = net(cfg(1, 3, 2), 1, false);
        let mut cache = GenerationCache::new();
        assert!(matches!(
            incremental_step_bin(&mut cache, &a, &store, 0, &[0.0; 3]),
            Err(Error::Usage(_))
        ));
        let (b, _) = net(cfg(1, 4, 2), 1, false);
        cache.reset(&b);
        assert!(matches!(
            incremental_step_bin(&mut cache, &a, &store, 0, &[0.0; 3]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn memory_accounting_matches_formula() {
        let c = cfg(2, 4, 3);
        let (net, _) = net(c.clone(), 0, false);
        let cache = GenerationCache::for_model(&net);
        let expect: usize = c
            .dilations()
            .iter()
            .map(|d| ((c.filter_width - 1) * d + 1) * c.residual_channels)
            .sum();
        assert_eq!(cache.activation_count(), expect);
    }

    #[test]
    fn sample_bin_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut logits = vec![0.0; 256];
        logits[7] = 3.0;
        assert_eq!(sample_bin(&logits, &SamplerConfig::argmax(), &mut rng).unwrap(), 7);
        logits[3] = 3.0;
        assert_eq!(sample_bin(&logits, &SamplerConfig::argmax(), &mut rng).unwrap(), 3);
        let cold = SamplerConfig {
            temperature: 1e-6,
            ..SamplerConfig::default()
        };
        logits[3] = 2.0;
        for _ in 0..50 {
            assert_eq!(sample_bin(&logits, &cold, &mut rng).unwrap(), 7);
        }
        for bad in [0.0, -1.0] {
            let s = SamplerConfig {
                temperature: bad,
                ..SamplerConfig::default()
            };
            assert!(matches!(sample_bin(&logits, &s, &mut rng), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let logits = vec![0.0; 256];
        let n = 100_000;
        let mut counts = vec![0usize; 256];
        for _ in 0..n {
            counts[sample_bin(&logits, &SamplerConfig::default(), &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 256.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn argmax_generation_replays_through_full_forward() {
        let (net, store) = net(cfg(1, 3, 2), 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cond = Tensor::randn(&[3, 150], 1.0, &mut rng);
        let g = generate(&net, &store, &cond, &SamplerConfig::argmax()).unwrap();
        let inputs = crate::wavenet::shift_right(&g.bins, SILENCE_BIN);
        let full = full_logits(&net, &store, &inputs, &cond);
        for t in 0..150 {
            let col: Vec<f64> = (0..256).map(|q| full.at(q, t)).collect();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            assert_eq!(
                sample_bin(&col, &SamplerConfig::argmax(), &mut r).unwrap() as u8,
                g.bins[t]
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_ignores_future_conditions() {
        let (net, store) = net(cfg(1, 3, 2), 8, true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cond = Tensor::randn(&[3, 120], 1.0, &mut rng);
        let s = SamplerConfig {
            seed: 9,
            ..SamplerConfig::default()
        };
        let a = generate(&net, &store, &cond, &s).unwrap();
        assert_eq!(a, generate(&net, &store, &cond, &s).unwrap());
        assert_eq!(a.waveform.len(), 120);
        let short = generate(&net, &store, &cond.slice_cols(0, 70).unwrap(), &s).unwrap();
        assert_eq!(&a.bins[..70], &short.bins[..]);
        assert!(generate(&net, &store, &Tensor::zeros(&[3, 0]), &s)
            .unwrap()
            .bins
            .is_empty());
    }

    #[test]
    fn frame_generation_equals_sample_generation() {
        let (net, store) = net(cfg(2, 2, 2), 4, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let mut samples = Tensor::zeros(&[3, 60]);
        for t in 0..60 {
            for r in 0..3 {
                samples.set(r, t, frames.at(r, t / 10));
            }
        }
        let s = SamplerConfig::argmax();
        let a = generate(&net, &store, &samples, &s).unwrap();
        let b = generate_frames(&net, &store, &frames, 10, &s, 16_000).unwrap();
        assert_eq!(a.bins, b.bins);
    }
}
