//! Objective measures between generated and reference audio: MCD, F0 RMSE,
//! F0 correlation and V/UV error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, WaveformBuffer};
use crate::corpus::{self, CepstrumExtractor, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `10·√2 / ln 10`, dB per unit cepstral distance.
pub const MCD_SCALE: f64 = 6.141_851_463_713_754;
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Local maxima within this fraction of the best are preferred at shorter lags.
const PEAK_TOLERANCE: f64 = 0.85;
const MIN_RMS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    /// Hz, 0 where unvoiced.
    pub f0_hz: Vec<f64>,
    pub vuv: Vec<bool>,
}

impl F0Track {
    pub fn new(f0_hz: Vec<f64>) -> Self {
        let vuv = f0_hz.iter().map(|&f| f > 0.0).collect();
        Self { f0_hz, vuv }
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn from_utterance(u: &Utterance) -> Self {
        Self::new(u.f0_hz())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Params {
    pub frame_shift: usize,
    pub frame_length: usize,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl Default for F0Params {
    fn default() -> Self {
        Self {
            frame_shift: 80,
            frame_length: 320,
            f0_min: corpus::F0_MIN_HZ,
            f0_max: corpus::F0_MAX_HZ,
        }
    }
}

/// Autocorrelation pitch tracker.
///
/// The signal is first divided by its short-time RMS. For each frame and
/// each lag in the band for `[f0_min, f0_max]`, two `frame_length` windows
/// placed symmetrically about the frame centre, `lag` apart, are correlated
/// and normalized. The shortest local maximum within 85% of the best wins,
/// refined by a parabola. Frames whose peak is at most 0.3, or that are
/// near-silent, are unvoiced.
pub fn estimate_f0(waveform: &WaveformBuffer, params: &F0Params) -> Result<F0Track> {
    let sr = f64::from(waveform.sample_rate);
    if params.frame_shift == 0 || params.frame_length == 0 {
        return Err(Error::Argument("frame_shift and frame_length must be positive".into()));
    }
    if !(params.f0_min > 0.0 && params.f0_min < params.f0_max) {
        return Err(Error::Argument(format!(
            "bad F0 range [{}, {}]",
            params.f0_min, params.f0_max
        )));
    }
    let lag_min = ((sr / params.f0_max).floor() as usize).max(2);
    let lag_max = (sr / params.f0_min).ceil() as usize;
    let len = params.frame_length;
    let n_frames = corpus::num_frames(waveform.len(), params.frame_shift);
    let x = &level_normalized(&waveform.samples, params.frame_shift / 4);
    let raw = &waveform.samples;
    let at_raw = |p: isize| {
        if p >= 0 && (p as usize) < raw.len() {
            raw[p as usize]
        } else {
            0.0
        }
    };
    let at = |p: isize| {
        if p >= 0 && (p as usize) < x.len() {
            x[p as usize]
        } else {
            0.0
        }
    };
    let mut r = vec![0.0; lag_max + 2];
    let mut f0 = vec![0.0; n_frames];
    for (frame, out) in f0.iter_mut().enumerate() {
        let start = corpus::window_start(frame, params.frame_shift, len);
        let energy: f64 = (0..len as isize).map(|i| at_raw(start + i).powi(2)).sum();
        if energy <= MIN_RMS * MIN_RMS * len as f64 {
            continue;
        }
        for (lag, rv) in r.iter_mut().enumerate().skip(lag_min - 1) {
            // Both halves straddle the frame centre symmetrically.
            let a0 = start - (lag / 2) as isize;
            let b0 = a0 + lag as isize;
            let (mut num, mut ea, mut eb) = (0.0, 0.0, 0.0);
            for i in 0..len as isize {
                let (p, q) = (at(a0 + i), at(b0 + i));
                num += p * q;
                ea += p * p;
                eb += q * q;
            }
            let den = (ea * eb).sqrt();
            *rv = if den > 0.0 { num / den } else { 0.0 };
        }
        let best = (lag_min..=lag_max).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        if best <= VOICING_THRESHOLD {
            continue;
        }
        let is_peak = |l: usize| r[l] >= r[l - 1] && r[l] >= r[l + 1];
        let lag = (lag_min..=lag_max)
            .find(|&l| r[l] >= PEAK_TOLERANCE * best && is_peak(l))
            .unwrap_or_else(|| (lag_min..=lag_max).find(|&l| r[l] == best).unwrap_or(lag_min));
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        *out = sr / (lag as f64 + delta);
    }
    Ok(F0Track::new(f0))
}

/// Divides each sample by the RMS of its `±half` neighbourhood so that loud
/// neighbours do not dominate a frame's correlation.
fn level_normalized(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix[prefix.len() - 1] + v * v);
    }
    (0..x.len())
        .map(|n| {
            let lo = n.saturating_sub(half);
            let hi = (n + half + 1).min(x.len());
            let rms = ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt();
            x[n] / (rms + MIN_RMS)
        })
        .collect()
}

/// F0 agreement over frames voiced in both tracks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub rmse_hz: Option<f64>,
    pub corr: Option<f64>,
    pub n_voiced: usize,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("tracks have {a} and {b} frames")));
    }
    Ok(())
}

fn common_voiced(a: &F0Track, b: &F0Track) -> Vec<(f64, f64)> {
    (0..a.len())
        .filter(|&i| a.vuv[i] && b.vuv[i])
        .map(|i| (a.f0_hz[i], b.f0_hz[i]))
        .collect()
}

fn pair_stats(pairs: &[(f64, f64)]) -> F0Stats {
    let n = pairs.len();
    if n < 2 {
        return F0Stats {
            rmse_hz: None,
            corr: None,
            n_voiced: n,
        };
    }
    let nf = n as f64;
    let rmse = (pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nf).sqrt();
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / nf,
        pairs.iter().map(|p| p.1).sum::<f64>() / nf,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    let den = (saa * sbb).sqrt();
    let corr = (den > 1e-12 * nf).then(|| (sab / den).clamp(-1.0, 1.0));
    F0Stats {
        rmse_hz: Some(rmse),
        corr,
        n_voiced: n,
    }
}

/// RMSE (linear Hz) and Pearson correlation over mutually voiced frames.
/// Both are absent with fewer than two such frames; the correlation is
/// absent when either track is constant there.
pub fn f0_rmse_and_corr(a: &F0Track, b: &F0Track) -> Result<F0Stats> {
    check_len(a.len(), b.len())?;
    Ok(pair_stats(&common_voiced(a, b)))
}

/// Percentage of frames whose voicing flags differ.
pub fn vuv_error(a: &F0Track, b: &F0Track) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Argument("no frames to compare".into()));
    }
    let diff = a.vuv.iter().zip(&b.vuv).filter(|(x, y)| x != y).count();
    Ok(100.0 * diff as f64 / a.len() as f64)
}

/// Per-frame distortion in dB, coefficient 0 excluded.
pub fn mcd_frames(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "cepstra shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, f) = a.dims2()?;
    Ok((0..f)
        .map(|t| MCD_SCALE * (1..n).map(|k| (a.at(k, t) - b.at(k, t)).powi(2)).sum::<f64>().sqrt())
        .collect())
}

/// Frame-averaged mel-cepstral distortion.
pub fn mcd(a: &Tensor, b: &Tensor) -> Result<f64> {
    let d = mcd_frames(a, b)?;
    if d.is_empty() {
        return Err(Error::Argument("no frames to compare".into()));
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub f0: F0Params,
    pub n_cepstra: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            f0: F0Params::default(),
            n_cepstra: corpus::N_CEPSTRA,
        }
    }
}

/// Per-utterance measurements kept for pooling.
#[derive(Clone, Debug)]
struct UtteranceEval {
    mcd: Vec<f64>,
    pairs: Vec<(f64, f64)>,
    vuv_diff: usize,
    frames: usize,
}

fn analyse(w: &WaveformBuffer, ex: &CepstrumExtractor, p: &EvalParams) -> Result<(Tensor, F0Track)> {
    Ok((ex.extract(w, p.f0.frame_shift)?, estimate_f0(w, &p.f0)?))
}

fn evaluate_pair(
    generated: &WaveformBuffer,
    reference: &WaveformBuffer,
    ex: &CepstrumExtractor,
    p: &EvalParams,
) -> Result<UtteranceEval> {
    if generated.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "{} samples generated, reference has {}",
            generated.len(),
            reference.len()
        )));
    }
    if generated.sample_rate != reference.sample_rate {
        return Err(Error::Dimension(format!(
            "sample rate {} vs reference {}",
            generated.sample_rate, reference.sample_rate
        )));
    }
    let (gc, gf) = analyse(generated, ex, p)?;
    let (rc, rf) = analyse(reference, ex, p)?;
    Ok(UtteranceEval {
        mcd: mcd_frames(&gc, &rc)?,
        pairs: common_voiced(&gf, &rf),
        vuv_diff: gf.vuv.iter().zip(&rf.vuv).filter(|(a, b)| a != b).count(),
        frames: gf.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// One system row, columns in the order MCD, F0 RMSE, F0 Corr., V/UV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub system: String,
    pub mcd_db: Option<f64>,
    pub f0_rmse_hz: Option<f64>,
    pub f0_corr: Option<f64>,
    pub vuv_err_pct: Option<f64>,
    pub n_frames_compared: usize,
    pub n_voiced_compared: usize,
    pub n_utterances: usize,
    pub excluded: Vec<Exclusion>,
}

/// Scores `generated` (utterance id → audio, or the reason it is missing)
/// against reference audio. Both sides go through the same cepstrum and F0
/// analysis; statistics are pooled over frames of all included utterances.
pub fn evaluate_system(
    system: &str,
    generated: &BTreeMap<String, Result<WaveformBuffer>>,
    references: &[Utterance],
    params: &EvalParams,
) -> Result<SystemScores> {
    let ex = CepstrumExtractor::new(params.f0.frame_length, params.n_cepstra)?;
    let results: Vec<(String, Result<UtteranceEval>)> = references
        .par_iter()
        .map(|u| {
            let r = match generated.get(&u.id) {
                None => Err(Error::Argument("no generated audio".into())),
                Some(Err(e)) => Err(Error::Argument(e.to_string())),
                Some(Ok(w)) => evaluate_pair(w, &u.waveform, &ex, params),
            };
            (u.id.clone(), r)
        })
        .collect();
    let mut excluded = Vec::new();
    let mut mcd_all = Vec::new();
    let mut pairs = Vec::new();
    let (mut vuv_diff, mut frames, mut n_utts) = (0, 0, 0);
    for (id, r) in results {
        match r {
            Ok(e) => {
                mcd_all.extend(e.mcd);
                pairs.extend(e.pairs);
                vuv_diff += e.vuv_diff;
                frames += e.frames;
                n_utts += 1;
            }
            Err(e) => excluded.push(Exclusion {
                id,
                reason: e.to_string(),
            }),
        }
    }
    let f0 = pair_stats(&pairs);
    Ok(SystemScores {
        system: system.to_string(),
        mcd_db: (!mcd_all.is_empty()).then(|| mcd_all.iter().sum::<f64>() / mcd_all.len() as f64),
        f0_rmse_hz: f0.rmse_hz,
        f0_corr: f0.corr,
        vuv_err_pct: (frames > 0).then(|| 100.0 * vuv_diff as f64 / frames as f64),
        n_frames_compared: frames,
        n_voiced_compared: f0.n_voiced,
        n_utterances: n_utts,
        excluded,
    })
}

/// Reads `<dir>/<id>.wav` for every reference and scores them. Fails when
/// none of the expected files exist.
pub fn evaluate_dir(system: &str, dir: &Path, references: &[Utterance], params: &EvalParams) -> Result<SystemScores> {
    let generated: BTreeMap<String, Result<WaveformBuffer>> = references
        .iter()
        .map(|u| (u.id.clone(), codec::wav_read(dir.join(format!("{}.wav", u.id)))))
        .collect();
    if generated.values().all(|r| r.is_err()) {
        let ids: Vec<&str> = references.iter().map(|u| u.id.as_str()).collect();
        return Err(Error::Argument(format!(
            "{} holds none of the expected files: {}",
            dir.display(),
            ids.iter().map(|i| format!("{i}.wav")).collect::<Vec<_>>().join(", ")
        )));
    }
    evaluate_system(system, &generated, references, params)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SystemScores>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 4] = ["MCD (dB)", "F0 RMSE (Hz)", "F0 Corr.", "V/UV (%)"];

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:<width$}", "system");
        for c in Self::COLUMNS {
            let _ = write!(s, "  {c:>12}");
        }
        s.push_str("  frames  excluded\n");
        for r in &self.rows {
            let _ = write!(s, "{:<width$}", r.system);
            for v in [
                cell(r.mcd_db, 3),
                cell(r.f0_rmse_hz, 3),
                cell(r.f0_corr, 4),
                cell(r.vuv_err_pct, 2),
            ] {
                let _ = write!(s, "  {v:>12}");
            }
            let _ = writeln!(s, "  {:>6}  {:>8}", r.n_frames_compared, r.excluded.len());
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).unwrap_or_default() + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format("report row", e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}
