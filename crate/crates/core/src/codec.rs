//! μ-law companding to 256 symbols, one-hot encoding and PCM16 WAV files.
//!
//! # WAV format note
//!
//! Files are canonical RIFF/WAVE, little-endian:
//!
//! | offset | field           | value                     |
//! |--------|-----------------|---------------------------|
//! | 0      | `RIFF`          | chunk id                  |
//! | 4      | riff size       | `36 + data bytes`         |
//! | 8      | `WAVE`          | form type                 |
//! | 12     | `fmt `          | chunk id, size 16         |
//! | 20     | audio format    | 1 (PCM)                   |
//! | 22     | channels        | 1                         |
//! | 24     | sample rate     | Hz, 16000 by default      |
//! | 28     | byte rate       | `sample_rate · 2`         |
//! | 32     | block align     | 2                         |
//! | 34     | bits per sample | 16                        |
//! | 36     | `data`          | chunk id + byte length    |
//!
//! The reader accepts extra chunks (e.g. `LIST`) before `data` and skips them.
//! Samples are scaled by `1/32768` on read; the writer stores
//! `round(x · 32768)` clamped to the `i16` range.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const QUANTIZATION_LEVELS: usize = 256;
pub const MU: f64 = 255.0;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// μ-law bin of 0.0; used to seed autoregressive history.
pub const SILENCE_BIN: u8 = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct WaveformBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveformBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Scales so the largest magnitude equals `peak`. Silent buffers are left
    /// unchanged.
    pub fn peak_normalize(&mut self, peak: f64) {
        let max = self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if max > 0.0 {
            let g = peak / max;
            self.samples.iter_mut().for_each(|x| *x *= g);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedWaveform {
    pub bins: Vec<u8>,
    pub sample_rate: u32,
}

impl QuantizedWaveform {
    pub fn encode(wave: &WaveformBuffer) -> Result<Self> {
        let bins = wave.samples.iter().map(|&x| mulaw_encode(x)).collect::<Result<_>>()?;
        Ok(Self {
            bins,
            sample_rate: wave.sample_rate,
        })
    }

    pub fn decode(&self) -> WaveformBuffer {
        WaveformBuffer::new(
            self.bins.iter().map(|&b| mulaw_decode_u8(b)).collect(),
            self.sample_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Companded value in `[−1, 1]`.
fn compand(x: f64) -> f64 {
    x.signum() * (MU * x.abs()).ln_1p() / MU.ln_1p()
}

/// Maps a sample to its μ-law bin. Inputs outside `[−1, 1]` are clamped.
pub fn mulaw_encode(x: f64) -> Result<u8> {
    if x.is_nan() {
        return Err(Error::Numeric("cannot encode NaN sample".into()));
    }
    let x = x.clamp(-1.0, 1.0);
    let f = if x == 0.0 { 0.0 } else { compand(x) };
    // f64::round rounds half away from zero, so 0.0 lands on bin 128.
    let bin = ((f + 1.0) / 2.0 * MU).round();
    Ok(bin.clamp(0.0, MU) as u8)
}

/// Inverse companding of a bin. Bins above 255 are an index error.
pub fn mulaw_decode(bin: usize) -> Result<f64> {
    if bin >= QUANTIZATION_LEVELS {
        return Err(Error::Index(format!("μ-law bin {bin} outside [0, 255]")));
    }
    Ok(mulaw_decode_u8(bin as u8))
}

pub fn mulaw_decode_u8(bin: u8) -> f64 {
    let y = 2.0 * f64::from(bin) / MU - 1.0;
    y.signum() * ((MU + 1.0).powf(y.abs()) - 1.0) / MU
}

/// `[256 × T]` indicator matrix with a single 1 per column.
pub fn one_hot(bins: &[u8]) -> Tensor {
    let t = bins.len();
    let mut out = Tensor::zeros(&[QUANTIZATION_LEVELS, t]);
    for (col, &b) in bins.iter().enumerate() {
        out.set(b as usize, col, 1.0);
    }
    out
}

pub fn wav_write(path: impl AsRef<Path>, wave: &WaveformBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, wav_bytes(wave)).map_err(|e| Error::io(path, e))
}

pub fn wav_bytes(wave: &WaveformBuffer) -> Vec<u8> {
    let data_len = (wave.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &wave.samples {
        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<WaveformBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    wav_parse(&bytes)
}

fn u16_at(b: &[u8], at: usize, field: &str) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::format(field, "truncated header"))
}

fn u32_at(b: &[u8], at: usize, field: &str) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::format(field, "truncated header"))
}

pub fn wav_parse(bytes: &[u8]) -> Result<WaveformBuffer> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(Error::format("riff id", "missing RIFF signature"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(Error::format("form type", "not a WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4, "chunk size")? as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::format("fmt chunk size", format!("{size} < 16")));
            }
            fmt = Some((
                u16_at(bytes, body, "audio format")?,
                u16_at(bytes, body + 2, "channels")?,
                u32_at(bytes, body + 4, "sample rate")?,
                u16_at(bytes, body + 14, "bits per sample")?,
            ));
        } else if id == b"data" {
            let (format, channels, rate, bits) =
                fmt.ok_or_else(|| Error::format("fmt chunk", "data chunk precedes fmt chunk"))?;
            if format != 1 {
                return Err(Error::format("audio format", format!("{format} is not PCM (1)")));
            }
            if channels != 1 {
                return Err(Error::format(
                    "channels",
                    format!("{channels} channels, only mono is supported"),
                ));
            }
            if bits != 16 {
                return Err(Error::format(
                    "bits per sample",
                    format!("{bits}, only 16 is supported"),
                ));
            }
            let payload = bytes
                .get(body..body + size)
                .ok_or_else(|| Error::format("data chunk size", "payload shorter than declared"))?;
            if !size.is_multiple_of(2) {
                return Err(Error::format("data chunk size", "odd byte count for 16-bit samples"));
            }
            let samples = payload
                .chunks_exact(2)
                .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                .collect();
            return Ok(WaveformBuffer::new(samples, rate));
        }
        pos = body + size + (size & 1);
    }
    Err(Error::format("data chunk", "no data chunk found"))
}
