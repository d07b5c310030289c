//! Deterministic synthetic speech-like corpus with oracle pitch and voicing.
//!
//! Each symbol is a "phoneme": voiced symbols carry a fixed harmonic profile and
//! a tone (base pitch plus glide), unvoiced symbols a fixed noise colour. An
//! utterance is a random symbol sequence with random durations; its pitch is a
//! function of the symbol, the position in the utterance (declination) and a
//! small per-utterance speaker offset. The linguistic features never see the
//! pitch, only the symbols and their timing.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::codec::{self, QuantizedWaveform, WaveformBuffer};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_CEPSTRA: usize = 25;
pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;
pub const PEAK_LEVEL: f64 = 0.95;
const LOG_FLOOR: f64 = 1e-8;
const CROSSFADE_HALF: usize = 40;
const DECLINATION: f64 = 0.15;
/// (base position within [f0_low, f0_high], end/start glide ratio) per voiced symbol.
const TONES: [(f64, f64); 5] = [(0.2, 1.0), (0.8, 0.8), (0.5, 1.25), (0.35, 1.1), (0.65, 0.9)];
const NOISE_POLES: [f64; 3] = [-0.5, 0.0, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_symbols: usize,
    pub n_voiced_symbols: usize,
    pub n_utterances: usize,
    /// Trailing utterances held out from training.
    pub n_test: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    pub f0_low: f64,
    pub f0_high: f64,
    /// Relative per-utterance pitch offset, drawn uniformly in ±jitter.
    pub speaker_jitter: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub frame_shift: usize,
    pub frame_length: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_symbols: 8,
            n_voiced_symbols: 5,
            n_utterances: 60,
            n_test: 10,
            min_frames: 60,
            max_frames: 120,
            min_segment_frames: 6,
            max_segment_frames: 20,
            f0_low: 100.0,
            f0_high: 250.0,
            speaker_jitter: 0.03,
            seed: 1234,
            sample_rate: codec::DEFAULT_SAMPLE_RATE,
            frame_shift: 80,
            frame_length: 320,
        }
    }
}

impl CorpusSpec {
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

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.n_symbols == 0 {
            return bad("n_symbols", "must be at least 1".into());
        }
        if self.n_voiced_symbols > self.n_symbols {
            return bad(
                "n_voiced_symbols",
                format!("{} exceeds n_symbols {}", self.n_voiced_symbols, self.n_symbols),
            );
        }
        for (field, v) in [("f0_low", self.f0_low), ("f0_high", self.f0_high)] {
            if !(F0_MIN_HZ..=F0_MAX_HZ).contains(&v) {
                return bad(field, format!("{v} Hz outside [{F0_MIN_HZ}, {F0_MAX_HZ}]"));
            }
        }
        if self.f0_low > self.f0_high {
            return bad("f0_low", format!("{} exceeds f0_high {}", self.f0_low, self.f0_high));
        }
        if !(0.0..0.5).contains(&self.speaker_jitter) {
            return bad("speaker_jitter", format!("{} outside [0, 0.5)", self.speaker_jitter));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(
                "min_frames",
                format!("range {}..={} is empty", self.min_frames, self.max_frames),
            );
        }
        if self.min_segment_frames == 0 || self.min_segment_frames > self.max_segment_frames {
            return bad(
                "min_segment_frames",
                format!(
                    "range {}..={} is empty",
                    self.min_segment_frames, self.max_segment_frames
                ),
            );
        }
        if self.frame_shift == 0 {
            return bad("frame_shift", "must be at least 1".into());
        }
        if self.frame_length < self.frame_shift {
            return bad(
                "frame_length",
                format!("{} shorter than frame_shift {}", self.frame_length, self.frame_shift),
            );
        }
        if self.sample_rate == 0 {
            return bad("sample_rate", "must be positive".into());
        }
        if self.n_test > self.n_utterances {
            return bad(
                "n_test",
                format!("{} exceeds n_utterances {}", self.n_test, self.n_utterances),
            );
        }
        Ok(())
    }

    pub fn linguistic_dim(&self) -> usize {
        self.n_symbols + 3
    }

    pub fn is_test(&self, index: usize) -> bool {
        index + self.n_test >= self.n_utterances
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub symbol_id: usize,
    pub duration_frames: usize,
    pub voiced: bool,
    pub f0_start: f64,
    pub f0_end: f64,
    pub amplitude: f64,
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_frames == 0 {
            return Err(Error::Argument("segment duration_frames must be at least 1".into()));
        }
        if self.voiced {
            for (name, f) in [("f0_start", self.f0_start), ("f0_end", self.f0_end)] {
                if !(F0_MIN_HZ..=F0_MAX_HZ).contains(&f) {
                    return Err(Error::Argument(format!("segment {name} {f} Hz outside [60, 400]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Timbre {
    /// Relative amplitude of harmonics 1, 2, ...
    Harmonic(Vec<f64>),
    /// First-order autoregressive noise with the given pole.
    Noise { pole: f64 },
}

/// Symbol → timbre and tone mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolInventory {
    pub timbres: Vec<Timbre>,
    /// (base position, glide ratio); meaningful for voiced symbols only.
    pub tones: Vec<(f64, f64)>,
}

impl SymbolInventory {
    pub fn for_spec(spec: &CorpusSpec) -> Self {
        let mut timbres = Vec::with_capacity(spec.n_symbols);
        let mut tones = Vec::with_capacity(spec.n_symbols);
        for s in 0..spec.n_symbols {
            if s < spec.n_voiced_symbols {
                let tilt = 0.6 + 0.25 * s as f64;
                let formant = 2.0 + s as f64;
                let profile = (1..=8)
                    .map(|h| {
                        let h = h as f64;
                        h.powf(-tilt) * (1.0 + 1.5 * (-(h - formant).powi(2) / 2.0).exp())
                    })
                    .collect();
                timbres.push(Timbre::Harmonic(profile));
                tones.push(TONES[s % TONES.len()]);
            } else {
                let u = s - spec.n_voiced_symbols;
                timbres.push(Timbre::Noise {
                    pole: NOISE_POLES[u % NOISE_POLES.len()],
                });
                tones.push((0.0, 1.0));
            }
        }
        Self { timbres, tones }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: WaveformBuffer,
    /// `[n_symbols + 3 × F]`.
    pub linguistic: Tensor,
    /// `[25 × F]`.
    pub cepstra: Tensor,
    /// `[1 × F]`, natural log of Hz, 0 where unvoiced.
    pub logf0: Tensor,
    /// `[1 × F]` of {0, 1}.
    pub vuv: Tensor,
    pub frame_shift: usize,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.vuv.cols()
    }

    pub fn bins(&self) -> Result<Vec<u8>> {
        Ok(QuantizedWaveform::encode(&self.waveform)?.bins)
    }

    pub fn f0_hz(&self) -> Vec<f64> {
        self.logf0
            .data()
            .iter()
            .zip(self.vuv.data())
            .map(|(&l, &v)| if v > 0.5 { l.exp() } else { 0.0 })
            .collect()
    }
}

fn utterance_rng(spec: &CorpusSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws the segment plan for utterance `index`.
pub fn plan_segments(spec: &CorpusSpec, inventory: &SymbolInventory, rng: &mut impl Rng) -> Vec<SegmentSpec> {
    let total = rng.gen_range(spec.min_frames..=spec.max_frames);
    let speaker = 1.0 + spec.speaker_jitter * rng.gen_range(-1.0..=1.0);
    let mut segments = Vec::new();
    let mut start = 0;
    let mut prev = usize::MAX;
    while start < total {
        let dur = rng
            .gen_range(spec.min_segment_frames..=spec.max_segment_frames)
            .min(total - start);
        let mut symbol = rng.gen_range(0..spec.n_symbols);
        if symbol == prev && spec.n_symbols > 1 {
            symbol = (symbol + 1 + rng.gen_range(0..spec.n_symbols - 1)) % spec.n_symbols;
        }
        prev = symbol;
        let voiced = matches!(inventory.timbres[symbol], Timbre::Harmonic(_));
        let (f0_start, f0_end, amplitude) = if voiced {
            let (pos, glide) = inventory.tones[symbol];
            let base = spec.f0_low + pos * (spec.f0_high - spec.f0_low);
            let decl = |frame: usize| 1.0 - DECLINATION * frame as f64 / total as f64;
            let clamp = |f: f64| f.clamp(F0_MIN_HZ, F0_MAX_HZ);
            (
                clamp(base * speaker * decl(start)),
                clamp(base * glide * speaker * decl(start + dur)),
                rng.gen_range(0.5..0.9),
            )
        } else {
            (0.0, 0.0, rng.gen_range(0.1..0.25))
        };
        segments.push(SegmentSpec {
            symbol_id: symbol,
            duration_frames: dur,
            voiced,
            f0_start,
            f0_end,
            amplitude,
        });
        start += dur;
    }
    segments
}

fn glide_f0(seg: &SegmentSpec, start: usize, end: usize, n: isize) -> f64 {
    let span = (end - start).max(1) as f64;
    let frac = ((n - start as isize) as f64 / span).clamp(0.0, 1.0);
    seg.f0_start + (seg.f0_end - seg.f0_start) * frac
}

/// Synthesizes the waveform and oracle targets for an explicit segment list.
pub fn render_utterance(
    id: impl Into<String>,
    segments: &[SegmentSpec],
    inventory: &SymbolInventory,
    spec: &CorpusSpec,
    rng: &mut impl Rng,
) -> Result<Utterance> {
    if segments.is_empty() {
        return Err(Error::Argument("utterance needs at least one segment".into()));
    }
    for s in segments {
        s.validate()?;
        if s.symbol_id >= inventory.timbres.len() {
            return Err(Error::Argument(format!("symbol {} not in inventory", s.symbol_id)));
        }
    }
    let shift = spec.frame_shift;
    let sr = f64::from(spec.sample_rate);
    let n_frames: usize = segments.iter().map(|s| s.duration_frames).sum();
    let n = n_frames * shift;
    let mut samples = vec![0.0; n];
    let hw = CROSSFADE_HALF as isize;
    let last = segments.len() - 1;
    let mut start_frame = 0;
    for (i, seg) in segments.iter().enumerate() {
        let s = start_frame * shift;
        let e = s + seg.duration_frames * shift;
        start_frame += seg.duration_frames;
        let lo = if i == 0 { s as isize } else { s as isize - hw };
        let hi = if i == last { e as isize } else { e as isize + hw };
        let gain = |p: isize| -> f64 {
            let mut g = 1.0;
            if i > 0 {
                g *= ((p - (s as isize - hw)) as f64 + 0.5) / (2 * hw) as f64;
            }
            if i < last {
                g *= 1.0 - ((p - (e as isize - hw)) as f64 + 0.5) / (2 * hw) as f64;
            }
            g.clamp(0.0, 1.0)
        };
        match &inventory.timbres[seg.symbol_id] {
            Timbre::Harmonic(profile) => {
                let f_max = seg.f0_start.max(seg.f0_end);
                let active: Vec<(f64, f64)> = profile
                    .iter()
                    .enumerate()
                    .map(|(h, &a)| ((h + 1) as f64, a))
                    .filter(|(h, _)| h * f_max < 0.45 * sr)
                    .collect();
                let norm: f64 = active.iter().map(|(_, a)| a).sum::<f64>().max(1e-12);
                let mut phase = 0.0;
                for p in lo..hi {
                    if p >= 0 && (p as usize) < n {
                        let v: f64 = active.iter().map(|(h, a)| a * (2.0 * PI * h * phase).sin()).sum();
                        samples[p as usize] += seg.amplitude * gain(p) * v / norm;
                    }
                    phase += glide_f0(seg, s, e, p) / sr;
                    phase -= phase.floor();
                }
            }
            Timbre::Noise { pole } => {
                let scale = (1.0 - pole * pole).sqrt();
                let mut y = 0.0;
                for p in lo..hi {
                    let z: f64 = StandardNormal.sample(rng);
                    y = pole * y + scale * z;
                    if p >= 0 && (p as usize) < n {
                        samples[p as usize] += seg.amplitude * 0.5 * gain(p) * y;
                    }
                }
            }
        }
    }
    let mut waveform = WaveformBuffer::new(samples, spec.sample_rate);
    waveform.peak_normalize(PEAK_LEVEL);

    let mut logf0 = vec![0.0; n_frames];
    let mut vuv = vec![0.0; n_frames];
    let mut frame = 0;
    let mut seg_start = 0;
    for seg in segments {
        let s = seg_start * shift;
        let e = s + seg.duration_frames * shift;
        for _ in 0..seg.duration_frames {
            if seg.voiced {
                let center = (frame * shift + shift / 2) as isize;
                logf0[frame] = glide_f0(seg, s, e, center).ln();
                vuv[frame] = 1.0;
            }
            frame += 1;
        }
        seg_start += seg.duration_frames;
    }

    let linguistic = build_linguistic_features(segments, spec.n_symbols, spec.max_segment_frames)?;
    let cepstra = extract_cepstra(&waveform, shift, spec.frame_length, N_CEPSTRA)?;
    Ok(Utterance {
        id: id.into(),
        waveform,
        linguistic,
        cepstra,
        logf0: Tensor::row(&logf0),
        vuv: Tensor::row(&vuv),
        frame_shift: shift,
    })
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:04}")
}

/// Utterance `index` of the corpus described by `spec`. Pure in `(spec, index)`.
pub fn generate_utterance(spec: &CorpusSpec, index: usize) -> Result<Utterance> {
    spec.validate()?;
    if index >= spec.n_utterances {
        return Err(Error::Argument(format!(
            "utterance index {index} outside corpus of {}",
            spec.n_utterances
        )));
    }
    let inventory = SymbolInventory::for_spec(spec);
    let mut rng = utterance_rng(spec, index);
    let segments = plan_segments(spec, &inventory, &mut rng);
    render_utterance(utterance_id(index), &segments, &inventory, spec, &mut rng)
}

/// Per frame: one-hot symbol, position in segment `[0, 1)`, segment duration
/// over `max_duration`, position in utterance `[0, 1)`.
pub fn build_linguistic_features(segments: &[SegmentSpec], n_symbols: usize, max_duration: usize) -> Result<Tensor> {
    if segments.is_empty() {
        return Err(Error::Argument("no segments".into()));
    }
    let total: usize = segments.iter().map(|s| s.duration_frames).sum();
    let dim = n_symbols + 3;
    let mut out = Tensor::zeros(&[dim, total]);
    let mut f = 0;
    for seg in segments {
        if seg.symbol_id >= n_symbols {
            return Err(Error::Index(format!(
                "symbol {} outside [0, {n_symbols})",
                seg.symbol_id
            )));
        }
        for j in 0..seg.duration_frames {
            out.set(seg.symbol_id, f, 1.0);
            out.set(n_symbols, f, j as f64 / seg.duration_frames as f64);
            out.set(
                n_symbols + 1,
                f,
                seg.duration_frames as f64 / max_duration.max(1) as f64,
            );
            out.set(n_symbols + 2, f, f as f64 / total as f64);
            f += 1;
        }
    }
    Ok(out)
}

/// Start sample of the analysis window for `frame`, centred on the frame.
pub(crate) fn window_start(frame: usize, frame_shift: usize, window: usize) -> isize {
    (frame * frame_shift + frame_shift / 2) as isize - (window / 2) as isize
}

pub(crate) fn num_frames(len: usize, frame_shift: usize) -> usize {
    len.div_ceil(frame_shift)
}

/// FFT cepstrum stand-in for mel-cepstra.
pub struct CepstrumExtractor {
    frame_length: usize,
    n_coeffs: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    dct: Vec<f64>,
}

impl CepstrumExtractor {
    pub fn new(frame_length: usize, n_coeffs: usize) -> Result<Self> {
        if frame_length < 2 {
            return Err(Error::Argument("frame_length must be at least 2".into()));
        }
        let m = frame_length / 2 + 1;
        if n_coeffs > m {
            return Err(Error::Argument(format!(
                "{n_coeffs} coefficients exceed {m} spectral bins"
            )));
        }
        let window = (0..frame_length)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (frame_length - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(frame_length);
        let mut dct = vec![0.0; n_coeffs * m];
        for k in 0..n_coeffs {
            let scale = if k == 0 {
                (1.0 / m as f64).sqrt()
            } else {
                (2.0 / m as f64).sqrt()
            };
            for j in 0..m {
                dct[k * m + j] = scale * (PI * k as f64 * (2 * j + 1) as f64 / (2 * m) as f64).cos();
            }
        }
        Ok(Self {
            frame_length,
            n_coeffs,
            window,
            fft,
            dct,
        })
    }

    /// Log magnitude spectrum `log(|X| + 1e-8)` of one frame, bins `0..=L/2`.
    pub fn log_spectrum(&self, samples: &[f64], frame: usize, frame_shift: usize) -> Vec<f64> {
        let l = self.frame_length;
        let start = window_start(frame, frame_shift, l);
        let mut buf: Vec<Complex<f64>> = (0..l)
            .map(|i| {
                let p = start + i as isize;
                let x = if p >= 0 && (p as usize) < samples.len() {
                    samples[p as usize]
                } else {
                    0.0
                };
                Complex::new(x * self.window[i], 0.0)
            })
            .collect();
        self.fft.process(&mut buf);
        buf[..l / 2 + 1].iter().map(|c| (c.norm() + LOG_FLOOR).ln()).collect()
    }

    pub fn extract(&self, waveform: &WaveformBuffer, frame_shift: usize) -> Result<Tensor> {
        if frame_shift == 0 {
            return Err(Error::Argument("frame_shift must be at least 1".into()));
        }
        let f = num_frames(waveform.len(), frame_shift);
        let m = self.frame_length / 2 + 1;
        let mut out = Tensor::zeros(&[self.n_coeffs, f]);
        for frame in 0..f {
            let spec = self.log_spectrum(&waveform.samples, frame, frame_shift);
            for k in 0..self.n_coeffs {
                let row = &self.dct[k * m..(k + 1) * m];
                out.set(k, frame, row.iter().zip(&spec).map(|(a, b)| a * b).sum());
            }
        }
        Ok(out)
    }
}

/// Hann window → |FFT| → log → orthonormal DCT-II, first `n_coeffs` terms.
/// Frames are centred at `f·shift + shift/2` and zero-padded at the edges.
pub fn extract_cepstra(
    waveform: &WaveformBuffer,
    frame_shift: usize,
    frame_length: usize,
    n_coeffs: usize,
) -> Result<Tensor> {
    if frame_length < frame_shift {
        return Err(Error::Argument(format!(
            "frame_length {frame_length} shorter than frame_shift {frame_shift}"
        )));
    }
    CepstrumExtractor::new(frame_length, n_coeffs)?.extract(waveform, frame_shift)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: PathBuf,
    pub features: PathBuf,
    pub split: Split,
    pub frames: usize,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Parsed manifest; paths are resolved against the manifest's directory.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format(format!("manifest line {}", i + 1), e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Utterance> {
        let waveform = codec::wav_read(self.resolve(&entry.wav))?;
        let feats = Container::read(self.resolve(&entry.features))?;
        let frame_shift = feats
            .header
            .get("frame_shift")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::format("frame_shift", "feature header lacks frame_shift"))?
            as usize;
        let utt = Utterance {
            id: entry.id.clone(),
            waveform,
            linguistic: feats.get("linguistic")?.clone(),
            cepstra: feats.get("cepstra")?.clone(),
            logf0: feats.get("logf0")?.clone(),
            vuv: feats.get("vuv")?.clone(),
            frame_shift,
        };
        let f = utt.num_frames();
        if utt.linguistic.cols() != f
            || utt.cepstra.cols() != f
            || utt.logf0.cols() != f
            || utt.waveform.len() != f * frame_shift
        {
            return Err(Error::format(
                entry.id.clone(),
                "feature arrays and waveform are misaligned",
            ));
        }
        Ok(utt)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Utterance>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.load(e))
            .collect()
    }
}

/// SHA-256 over ids, PCM16 audio and feature payloads, in corpus order.
pub fn corpus_checksum(utterances: &[Utterance]) -> String {
    let mut h = Sha256::new();
    for u in utterances {
        h.update(u.id.as_bytes());
        let wav = codec::wav_bytes(&u.waveform);
        h.update(&wav[44..]);
        for t in [&u.linguistic, &u.cepstra, &u.logf0, &u.vuv] {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates every utterance in parallel; order follows the index.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Utterance>> {
    spec.validate()?;
    (0..spec.n_utterances)
        .into_par_iter()
        .map(|i| generate_utterance(spec, i))
        .collect()
}

/// Outcome of [`write_corpus`].
#[derive(Clone, Debug)]
pub struct WrittenCorpus {
    pub manifest: PathBuf,
    pub checksum: String,
    pub entries: Vec<ManifestEntry>,
}

/// Writes `<id>.wav`, `<id>.feat` and `manifest.jsonl` under `out`. The
/// checksum covers the data as stored (PCM16 audio, f64 features).
pub fn write_corpus(spec: &CorpusSpec, out: &Path, run_id: &str) -> Result<WrittenCorpus> {
    let utts = generate_corpus(spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(utts.len());
    let mut stored = Vec::with_capacity(utts.len());
    for (i, u) in utts.into_iter().enumerate() {
        let wav_name = format!("{}.wav", u.id);
        let feat_name = format!("{}.feat", u.id);
        codec::wav_write(out.join(&wav_name), &u.waveform)?;
        let split = if spec.is_test(i) { Split::Test } else { Split::Train };
        let mut c = Container::new(json!({
            "kind": "features",
            "run_id": run_id,
            "id": u.id,
            "frame_shift": u.frame_shift,
            "sample_rate": u.waveform.sample_rate,
            "split": split,
        }));
        c.insert("linguistic", u.linguistic.clone());
        c.insert("cepstra", u.cepstra.clone());
        c.insert("logf0", u.logf0.clone());
        c.insert("vuv", u.vuv.clone());
        c.write(out.join(&feat_name))?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            wav: PathBuf::from(wav_name),
            features: PathBuf::from(feat_name),
            split,
            frames: u.num_frames(),
            samples: u.waveform.len(),
        });
        let mut stored_u = u;
        stored_u.waveform = codec::wav_parse(&codec::wav_bytes(&stored_u.waveform))?;
        stored.push(stored_u);
    }
    let manifest = out.join("manifest.jsonl");
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for e in &entries {
        let line = serde_json::to_string(e).map_err(|err| Error::format("manifest", err.to_string()))?;
        writeln!(f, "{line}").map_err(|err| Error::io(&manifest, err))?;
    }
    Ok(WrittenCorpus {
        manifest,
        checksum: corpus_checksum(&stored),
        entries,
    })
}
