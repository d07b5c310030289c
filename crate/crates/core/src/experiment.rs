//! Condition-mode comparison: train each mode under several seeds on the
//! same corpus and step budget, synthesize the held-out set, score it, and
//! summarize each mode by its median over seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, WaveformBuffer};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::inference::{synthesize_utterance, SamplerConfig};
use crate::metrics::{evaluate_system, EvalParams, EvalReport, SystemScores};
use crate::model::{ConditionMode, FeatureNormalizer, MtlWaveNet};
use crate::training::{TrainConfig, Trainer, TrainingData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub modes: Vec<ConditionMode>,
    pub seeds: Vec<u64>,
    pub sampler: SamplerConfig,
    pub eval: EvalParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            modes: vec![ConditionMode::Linguistic, ConditionMode::Mtl],
            seeds: vec![0, 1, 2],
            sampler: SamplerConfig::default(),
            eval: EvalParams::default(),
        }
    }
}

/// One trained and evaluated (mode, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: ConditionMode,
    pub seed: u64,
    pub final_loss: f64,
    pub scores: SystemScores,
}

/// Medians over seeds for one mode; absent when no seed produced the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: ConditionMode,
    pub seeds: usize,
    pub mcd_db: Option<f64>,
    pub f0_rmse_hz: Option<f64>,
    pub f0_corr: Option<f64>,
    pub vuv_err_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<RunResult>,
    pub summary: Vec<ModeSummary>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

impl Comparison {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let mut modes: Vec<ConditionMode> = Vec::new();
        for r in &runs {
            if !modes.contains(&r.mode) {
                modes.push(r.mode);
            }
        }
        let summary = modes
            .into_iter()
            .map(|mode| {
                let rs: Vec<&SystemScores> = runs.iter().filter(|r| r.mode == mode).map(|r| &r.scores).collect();
                let med =
                    |f: fn(&SystemScores) -> Option<f64>| median(&rs.iter().filter_map(|s| f(s)).collect::<Vec<_>>());
                ModeSummary {
                    mode,
                    seeds: rs.len(),
                    mcd_db: med(|s| s.mcd_db),
                    f0_rmse_hz: med(|s| s.f0_rmse_hz),
                    f0_corr: med(|s| s.f0_corr),
                    vuv_err_pct: med(|s| s.vuv_err_pct),
                }
            })
            .collect();
        Self { runs, summary }
    }

    pub fn summary_for(&self, mode: ConditionMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    /// Whether `a` has both a lower median F0 RMSE and a higher median F0
    /// correlation than `b`. `None` when either median is missing.
    pub fn f0_better(&self, a: ConditionMode, b: ConditionMode) -> Option<bool> {
        let (sa, sb) = (self.summary_for(a)?, self.summary_for(b)?);
        Some(sa.f0_rmse_hz? < sb.f0_rmse_hz? && sa.f0_corr? > sb.f0_corr?)
    }

    /// Median rows in the usual column order, one per mode.
    pub fn report(&self) -> EvalReport {
        EvalReport {
            rows: self
                .summary
                .iter()
                .map(|s| SystemScores {
                    system: format!("{} (median of {})", s.mode, s.seeds),
                    mcd_db: s.mcd_db,
                    f0_rmse_hz: s.f0_rmse_hz,
                    f0_corr: s.f0_corr,
                    vuv_err_pct: s.vuv_err_pct,
                    n_frames_compared: 0,
                    n_voiced_compared: 0,
                    n_utterances: 0,
                    excluded: Vec::new(),
                })
                .collect(),
        }
    }
}

/// Builds a fresh model for `mode` (normalizer fitted on `train`) and trains
/// it for `config.steps` updates. `config.seed` drives both initialization
/// and batch sampling.
pub fn train_mode(
    train: &[Utterance],
    config: &TrainConfig,
    mode: ConditionMode,
    run_id: &str,
    out: Option<&Path>,
) -> Result<(Trainer, f64)> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("the corpus has no training utterances".into()))?;
    let model = MtlWaveNet::new(
        &config.model,
        mode,
        first.linguistic.rows(),
        first.frame_shift,
        FeatureNormalizer::fit(train)?,
        config.seed,
    )?;
    let mut trainer = Trainer::new(model, config.clone(), run_id)?;
    let data = TrainingData::prepare(&trainer.model, train)?;
    let outcome = trainer.run(&data, out)?;
    let last = outcome.records.last().map_or(f64::NAN, |r| r.total);
    Ok((trainer, last))
}

/// Seed for the utterance at `index` of a synthesis set, so results do not
/// depend on which utterances are requested together or on thread count.
pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Synthesizes every utterance in parallel; failures are kept per utterance.
/// `indices[i]` is the corpus position of `utts[i]`, used for its seed.
pub fn synthesize_set(
    model: &MtlWaveNet,
    utts: &[&Utterance],
    indices: &[usize],
    sampler: &SamplerConfig,
    oracle_f0: bool,
) -> BTreeMap<String, Result<WaveformBuffer>> {
    utts.par_iter()
        .zip(indices.par_iter())
        .map(|(u, &i)| {
            let s = SamplerConfig {
                seed: utterance_seed(sampler.seed, i),
                ..*sampler
            };
            (
                u.id.clone(),
                synthesize_utterance(model, u, &s, oracle_f0).map(|g| g.waveform),
            )
        })
        .collect()
}

pub fn write_wavs(dir: &Path, wavs: &BTreeMap<String, Result<WaveformBuffer>>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, w) in wavs {
        if let Ok(w) = w {
            codec::wav_write(dir.join(format!("{id}.wav")), w)?;
        }
    }
    Ok(())
}

/// Runs every (mode, seed) pair in order. With `out`, each run gets
/// `out/<mode>-seed<seed>/` holding its training artifacts and a `wav/`
/// directory of synthesized test audio. `progress` sees each finished run.
pub fn run_experiment(
    train: &[Utterance],
    test: &[Utterance],
    config: &ExperimentConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&RunResult),
) -> Result<Comparison> {
    if config.modes.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config(
            "a comparison needs at least one mode and one seed".into(),
        ));
    }
    if test.is_empty() {
        return Err(Error::Config("the corpus has no test utterances".into()));
    }
    config.sampler.validate()?;
    let test_refs: Vec<&Utterance> = test.iter().collect();
    let indices: Vec<usize> = (0..test.len()).collect();
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        for &mode in &config.modes {
            let name = format!("{}-seed{seed}", mode.as_str().replace('+', "_"));
            let dir = out.map(|o| o.join(&name));
            let tc = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let (trainer, final_loss) = train_mode(train, &tc, mode, &name, dir.as_deref())?;
            let sampler = SamplerConfig { seed, ..config.sampler };
            let wavs = synthesize_set(&trainer.model, &test_refs, &indices, &sampler, mode.uses_f0());
            if let Some(d) = &dir {
                write_wavs(&d.join("wav"), &wavs)?;
            }
            let scores = evaluate_system(&name, &wavs, test, &config.eval)?;
            let r = RunResult {
                mode,
                seed,
                final_loss,
                scores,
            };
            progress(&r);
            runs.push(r);
        }
    }
    Ok(Comparison::from_runs(runs))
}
