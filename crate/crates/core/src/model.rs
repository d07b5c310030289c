//! The full system: conditioner, sample model, optional secondary head, and
//! the condition mode that decides how they are wired.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Tape, Var};
use crate::conditioner::{Conditioner, ConditionerConfig};
use crate::container::Container;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;
use crate::wavenet::{Conditioning, MtlHead, SecondaryPrediction, WaveNet, WaveNetConfig};

/// Which inputs condition the sample model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionMode {
    /// Linguistic features only.
    #[serde(rename = "linguistic")]
    Linguistic,
    /// Linguistic features plus oracle log-F0 and V/UV.
    #[serde(rename = "linguistic+f0")]
    LinguisticPlusF0,
    /// Linguistic features, with the secondary acoustic head trained jointly.
    #[serde(rename = "mtl")]
    Mtl,
}

impl ConditionMode {
    pub const ALL: [ConditionMode; 3] = [Self::Linguistic, Self::LinguisticPlusF0, Self::Mtl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linguistic => "linguistic",
            Self::LinguisticPlusF0 => "linguistic+f0",
            Self::Mtl => "mtl",
        }
    }

    pub fn uses_head(self) -> bool {
        self == Self::Mtl
    }

    pub fn uses_f0(self) -> bool {
        self == Self::LinguisticPlusF0
    }
}

impl fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown mode {s:?}; expected linguistic, linguistic+f0 or mtl")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ModelConfig {
    pub wavenet: WaveNetConfig,
    pub conditioner: ConditionerConfig,
}

impl ModelConfig {
    /// One stack of three layers with narrow channels; for tests.
    pub fn tiny() -> Self {
        let conditioner = ConditionerConfig {
            layers: 1,
            channels: 4,
            filter_width: 2,
        };
        Self {
            wavenet: WaveNetConfig {
                num_stacks: 1,
                layers_per_stack: 3,
                filter_width: 2,
                residual_channels: 8,
                gate_channels: 8,
                skip_channels: 16,
                condition_dim: conditioner.output_dim(),
                ..WaveNetConfig::default()
            },
            conditioner,
        }
    }

    /// Two stacks of five layers; the toy-comparison size.
    pub fn small() -> Self {
        let conditioner = ConditionerConfig {
            layers: 2,
            channels: 16,
            filter_width: 2,
        };
        Self {
            wavenet: WaveNetConfig {
                num_stacks: 2,
                layers_per_stack: 5,
                filter_width: 2,
                residual_channels: 16,
                gate_channels: 16,
                skip_channels: 32,
                condition_dim: conditioner.output_dim(),
                ..WaveNetConfig::default()
            },
            conditioner,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.wavenet.validate()?;
        self.conditioner.validate()?;
        if self.wavenet.condition_dim != self.conditioner.output_dim() {
            return Err(Error::Config(format!(
                "wavenet.condition_dim {} must equal 2 × conditioner.channels = {}",
                self.wavenet.condition_dim,
                self.conditioner.output_dim()
            )));
        }
        Ok(())
    }
}

/// Per-dimension z-scoring of the secondary targets and the F0 condition,
/// fitted on the training split. V/UV stays in {0, 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub cep_mean: Vec<f64>,
    pub cep_std: Vec<f64>,
    pub logf0_mean: f64,
    pub logf0_std: f64,
}

impl FeatureNormalizer {
    pub fn identity(n_cepstra: usize) -> Self {
        Self {
            cep_mean: vec![0.0; n_cepstra],
            cep_std: vec![1.0; n_cepstra],
            logf0_mean: 0.0,
            logf0_std: 1.0,
        }
    }

    pub fn fit(utterances: &[Utterance]) -> Result<Self> {
        let first = utterances
            .first()
            .ok_or_else(|| Error::Argument("cannot fit normalizer on an empty corpus".into()))?;
        let n = first.cepstra.rows();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut frames = 0usize;
        let (mut fsum, mut fsq, mut voiced) = (0.0, 0.0, 0usize);
        for u in utterances {
            if u.cepstra.rows() != n {
                return Err(Error::Dimension(format!(
                    "{}: cepstra have {} rows, expected {n}",
                    u.id,
                    u.cepstra.rows()
                )));
            }
            for k in 0..n {
                for &v in u.cepstra.row_slice(k) {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            frames += u.cepstra.cols();
            for (&l, &v) in u.logf0.data().iter().zip(u.vuv.data()) {
                if v > 0.5 {
                    fsum += l;
                    fsq += l * l;
                    voiced += 1;
                }
            }
        }
        let stats = |s: f64, q: f64, n: usize| -> (f64, f64) {
            if n == 0 {
                return (0.0, 1.0);
            }
            let mean = s / n as f64;
            let var = (q / n as f64 - mean * mean).max(0.0);
            let std = var.sqrt();
            (mean, if std > 1e-8 { std } else { 1.0 })
        };
        let (cep_mean, cep_std) = (0..n).map(|k| stats(sum[k], sq[k], frames)).unzip();
        let (logf0_mean, logf0_std) = stats(fsum, fsq, voiced);
        Ok(Self {
            cep_mean,
            cep_std,
            logf0_mean,
            logf0_std,
        })
    }

    pub fn normalize_cepstra(&self, cepstra: &Tensor) -> Result<Tensor> {
        let (n, f) = cepstra.dims2()?;
        if n != self.cep_mean.len() {
            return Err(Error::Dimension(format!(
                "cepstra have {n} rows, normalizer has {}",
                self.cep_mean.len()
            )));
        }
        let mut out = cepstra.clone();
        for k in 0..n {
            for t in 0..f {
                out.set(k, t, (cepstra.at(k, t) - self.cep_mean[k]) / self.cep_std[k]);
            }
        }
        Ok(out)
    }

    pub fn denormalize_cepstra(&self, z: &Tensor) -> Result<Tensor> {
        let (n, f) = z.dims2()?;
        if n != self.cep_mean.len() {
            return Err(Error::Dimension(format!(
                "cepstra have {n} rows, normalizer has {}",
                self.cep_mean.len()
            )));
        }
        let mut out = z.clone();
        for k in 0..n {
            for t in 0..f {
                out.set(k, t, z.at(k, t) * self.cep_std[k] + self.cep_mean[k]);
            }
        }
        Ok(out)
    }

    /// Normalized log-F0, zero on unvoiced frames.
    pub fn normalize_logf0(&self, logf0: &Tensor, vuv: &Tensor) -> Result<Tensor> {
        if logf0.shape() != vuv.shape() {
            return Err(Error::Dimension(format!(
                "logf0 {:?} vs vuv {:?}",
                logf0.shape(),
                vuv.shape()
            )));
        }
        let data = logf0
            .data()
            .iter()
            .zip(vuv.data())
            .map(|(&l, &v)| {
                if v > 0.5 {
                    (l - self.logf0_mean) / self.logf0_std
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::new(logf0.shape().to_vec(), data)
    }

    pub fn denormalize_logf0(&self, z: f64) -> f64 {
        z * self.logf0_std + self.logf0_mean
    }
}

/// Frame-level secondary targets in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    pub cepstra: Tensor,
    pub logf0: Tensor,
    pub vuv: Tensor,
}

impl FrameTargets {
    pub fn num_frames(&self) -> usize {
        self.vuv.cols()
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.vuv.data().iter().map(|&v| v > 0.5).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        Ok(Self {
            cepstra: self.cepstra.slice_cols(range.start, range.end)?,
            logf0: self.logf0.slice_cols(range.start, range.end)?,
            vuv: self.vuv.slice_cols(range.start, range.end)?,
        })
    }
}

/// Graph handles produced by [`MtlWaveNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Conditioner output over the cropped frames.
    pub frame_encoding: Var,
    pub secondary: Option<SecondaryPrediction>,
}

#[derive(Clone, Debug)]
pub struct MtlWaveNet {
    pub config: ModelConfig,
    pub mode: ConditionMode,
    pub linguistic_dim: usize,
    pub frame_shift: usize,
    pub params: ParamStore,
    pub conditioner: Conditioner,
    pub wavenet: WaveNet,
    pub head: Option<MtlHead>,
    pub normalizer: FeatureNormalizer,
}

impl MtlWaveNet {
    pub fn new(
        config: &ModelConfig,
        mode: ConditionMode,
        linguistic_dim: usize,
        frame_shift: usize,
        normalizer: FeatureNormalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if frame_shift == 0 {
            return Err(Error::Config("frame_shift must be at least 1".into()));
        }
        if linguistic_dim == 0 {
            return Err(Error::Config("linguistic_dim must be at least 1".into()));
        }
        if normalizer.cep_mean.len() != config.wavenet.mtl.n_cepstra {
            return Err(Error::Config(format!(
                "normalizer covers {} cepstra, head predicts {}",
                normalizer.cep_mean.len(),
                config.wavenet.mtl.n_cepstra
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let input_dim = linguistic_dim + if mode.uses_f0() { 2 } else { 0 };
        let conditioner = Conditioner::new(&config.conditioner, input_dim, &mut params, &mut rng)?;
        let wavenet = WaveNet::new(&config.wavenet, &mut params, &mut rng)?;
        let head = mode
            .uses_head()
            .then(|| MtlHead::new(&config.wavenet.mtl, conditioner.output_dim(), &mut params, &mut rng));
        Ok(Self {
            config: config.clone(),
            mode,
            linguistic_dim,
            frame_shift,
            params,
            conditioner,
            wavenet,
            head,
            normalizer,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.wavenet.receptive_field()
    }

    pub fn condition_input_dim(&self) -> usize {
        self.conditioner.input_dim
    }

    /// Conditioner input for this mode. The F0 source is required in
    /// `linguistic+f0` mode and ignored otherwise.
    pub fn condition_features(&self, linguistic: &Tensor, f0: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
        let (d, f) = linguistic.dims2()?;
        if d != self.linguistic_dim {
            return Err(Error::Dimension(format!(
                "linguistic features have {d} dims, model expects {}",
                self.linguistic_dim
            )));
        }
        if !self.mode.uses_f0() {
            return Ok(linguistic.clone());
        }
        let (logf0, vuv) = f0.ok_or_else(|| {
            Error::Argument("an F0-conditioned model needs log-F0 and V/UV conditions for synthesis".into())
        })?;
        if logf0.shape() != [1, f] || vuv.shape() != [1, f] {
            return Err(Error::Dimension(format!(
                "F0 condition shapes {:?}/{:?} do not match {f} frames",
                logf0.shape(),
                vuv.shape()
            )));
        }
        let z = self.normalizer.normalize_logf0(logf0, vuv)?;
        Tensor::concat_rows(&[linguistic, &z, vuv])
    }

    pub fn utterance_condition(&self, utt: &Utterance) -> Result<Tensor> {
        self.condition_features(&utt.linguistic, Some((&utt.logf0, &utt.vuv)))
    }

    pub fn frame_targets(&self, utt: &Utterance) -> Result<FrameTargets> {
        Ok(FrameTargets {
            cepstra: self.normalizer.normalize_cepstra(&utt.cepstra)?,
            logf0: self.normalizer.normalize_logf0(&utt.logf0, &utt.vuv)?,
            vuv: utt.vuv.clone(),
        })
    }

    /// Runs the conditioner over `cond` (with context), keeps the frames in
    /// `crop`, and evaluates the sample model on `inputs` (already-shifted
    /// history covering exactly those frames) and the head on the same frames.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        cond: Var,
        crop: Range<usize>,
        inputs: &[u8],
    ) -> Result<ForwardOutput> {
        let encoded = self.conditioner.encode_frames(tape, bound, cond)?;
        let total = tape.value(encoded)?.cols();
        if crop.start > crop.end || crop.end > total {
            return Err(Error::Index(format!("crop {crop:?} outside {total} condition frames")));
        }
        let frames = if crop.start == 0 && crop.end == total {
            encoded
        } else {
            tape.slice_cols(encoded, crop.start, crop.end)?
        };
        let logits = self.wavenet.forward_inputs(
            tape,
            bound,
            inputs,
            Conditioning::Frames {
                frames,
                frame_shift: self.frame_shift,
            },
        )?;
        let secondary = match &self.head {
            Some(h) => Some(h.forward(tape, bound, frames)?),
            None => None,
        };
        Ok(ForwardOutput {
            logits,
            frame_encoding: frames,
            secondary,
        })
    }

    /// Frame-rate conditioner output without gradients.
    pub fn encode_condition(&self, cond: &Tensor) -> Result<Tensor> {
        self.conditioner.encode(&self.params, cond)
    }

    pub fn header(&self) -> Value {
        json!({
            "mode": self.mode,
            "model": self.config,
            "linguistic_dim": self.linguistic_dim,
            "frame_shift": self.frame_shift,
            "normalizer": self.normalizer,
        })
    }

    /// Rebuilds a model from a container header and its `param/` records.
    pub fn from_container(c: &Container) -> Result<Self> {
        let field = |name: &str| -> Result<&Value> {
            c.header
                .get(name)
                .ok_or_else(|| Error::format(name.to_string(), "checkpoint header lacks this field"))
        };
        let parse = |name: &str| -> Result<Value> { Ok(field(name)?.clone()) };
        let mode: ConditionMode =
            serde_json::from_value(parse("mode")?).map_err(|e| Error::format("mode", e.to_string()))?;
        let config: ModelConfig =
            serde_json::from_value(parse("model")?).map_err(|e| Error::format("model", e.to_string()))?;
        let normalizer: FeatureNormalizer =
            serde_json::from_value(parse("normalizer")?).map_err(|e| Error::format("normalizer", e.to_string()))?;
        let linguistic_dim = field("linguistic_dim")?
            .as_u64()
            .ok_or_else(|| Error::format("linguistic_dim", "not an integer"))? as usize;
        let frame_shift = field("frame_shift")?
            .as_u64()
            .ok_or_else(|| Error::format("frame_shift", "not an integer"))? as usize;
        let mut model = Self::new(&config, mode, linguistic_dim, frame_shift, normalizer, 0)?;
        let stored = c
            .arrays
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(PARAM_PREFIX).map(|n| (n.to_string(), v.clone())))
            .collect();
        model.params.load_from(&stored)?;
        Ok(model)
    }

    /// Container with the model header merged into `extra` and every parameter.
    pub fn to_container(&self, extra: Value) -> Container {
        let mut header = self.header();
        if let (Some(h), Value::Object(e)) = (header.as_object_mut(), extra) {
            h.extend(e);
        }
        let mut c = Container::new(header);
        for (name, t) in self.params.iter() {
            c.insert(format!("{PARAM_PREFIX}{name}"), t.clone());
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: Value) -> Result<()> {
        self.to_container(extra).write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

pub const PARAM_PREFIX: &str = "param/";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_utterance, CorpusSpec};

    fn spec() -> CorpusSpec {
        CorpusSpec {
            n_utterances: 3,
            n_test: 1,
            min_frames: 10,
            max_frames: 14,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ConditionMode::ALL {
            assert_eq!(m.as_str().parse::<ConditionMode>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.as_str()));
        }
        assert!("wavenet".parse::<ConditionMode>().is_err());
    }

    #[test]
    fn mode_controls_head_and_input_dim() {
        let cfg = ModelConfig::tiny();
        let norm = FeatureNormalizer::identity(25);
        let lin = MtlWaveNet::new(&cfg, ConditionMode::Linguistic, 11, 80, norm.clone(), 1).unwrap();
        let f0 = MtlWaveNet::new(&cfg, ConditionMode::LinguisticPlusF0, 11, 80, norm.clone(), 1).unwrap();
        let mtl = MtlWaveNet::new(&cfg, ConditionMode::Mtl, 11, 80, norm, 1).unwrap();
        assert!(lin.head.is_none() && f0.head.is_none() && mtl.head.is_some());
        assert_eq!(lin.condition_input_dim(), 11);
        assert_eq!(f0.condition_input_dim(), 13);
        assert_eq!(mtl.params.len(), lin.params.len() + 2);
        let l = Tensor::zeros(&[11, 4]);
        assert!(f0.condition_features(&l, None).is_err());
        assert_eq!(mtl.condition_features(&l, None).unwrap(), l);
    }

    #[test]
    fn mismatched_condition_dim_is_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.wavenet.condition_dim += 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn normalizer_standardizes_training_targets() {
        let s = spec();
        let utts: Vec<_> = (0..3).map(|i| generate_utterance(&s, i).unwrap()).collect();
        let n = FeatureNormalizer::fit(&utts).unwrap();
        let mut k0 = Vec::new();
        let mut f = Vec::new();
        for u in &utts {
            let z = n.normalize_cepstra(&u.cepstra).unwrap();
            k0.extend_from_slice(z.row_slice(3));
            let zf = n.normalize_logf0(&u.logf0, &u.vuv).unwrap();
            f.extend(
                zf.data()
                    .iter()
                    .zip(u.vuv.data())
                    .filter(|(_, &v)| v > 0.5)
                    .map(|(z, _)| *z),
            );
            let back = n.denormalize_cepstra(&z).unwrap();
            assert!(back.max_abs_diff(&u.cepstra) < 1e-9);
        }
        for xs in [k0, f] {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn container_round_trip_preserves_outputs() {
        let s = spec();
        let u = generate_utterance(&s, 0).unwrap();
        let m = MtlWaveNet::new(
            &ModelConfig::tiny(),
            ConditionMode::LinguisticPlusF0,
            11,
            80,
            FeatureNormalizer::fit(std::slice::from_ref(&u)).unwrap(),
            9,
        )
        .unwrap();
        let back =
            MtlWaveNet::from_container(&Container::from_bytes(&m.to_container(json!({"step": 3})).to_bytes()).unwrap())
                .unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.normalizer, m.normalizer);
        let c = m.utterance_condition(&u).unwrap();
        assert_eq!(m.encode_condition(&c).unwrap(), back.encode_condition(&c).unwrap());
    }

    #[test]
    fn forward_crops_frames() {
        let m = MtlWaveNet::new(
            &ModelConfig::tiny(),
            ConditionMode::Mtl,
            11,
            4,
            FeatureNormalizer::identity(25),
            2,
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let cond = tape.constant(Tensor::filled(&[11, 10], 0.3));
        let out = m.forward(&mut tape, &bound, cond, 2..5, &[128; 12]).unwrap();
        assert_eq!(tape.value(out.logits).unwrap().shape(), &[256, 12]);
        let sec = out.secondary.unwrap();
        assert_eq!(tape.value(sec.cepstra).unwrap().shape(), &[25, 3]);
        assert!(m.forward(&mut tape, &bound, cond, 2..5, &[128; 8]).is_err());
        assert!(m.forward(&mut tape, &bound, cond, 8..12, &[128; 16]).is_err());
    }
}
