//! `mtl-wavenet` command line: corpus generation, training per condition
//! mode, synthesis, evaluation and the mode comparison.
//!
//! Each command writes a [`RunManifest`] next to its outputs. Run ids are
//! derived from the command's arguments, so rerunning a command with the same
//! flags reproduces its files byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{self, CorpusSpec, Manifest, Split, Utterance};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::inference::{SampleMode, SamplerConfig};
use crate::metrics::{self, EvalParams, EvalReport};
use crate::model::ConditionMode;
use crate::training::{checkpoint_name, LossLog, TrainConfig, Trainer, TrainingData};

/// Build version in `git describe` form.
pub const VERSION: &str = env!("MTL_WAVENET_VERSION");

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "mtl-wavenet", version = VERSION, about = "Multi-task WaveNet on a synthetic speech corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate the synthetic corpus: WAVs, feature files and manifest.
    Corpus(CorpusArgs),
    /// Train one condition mode.
    Train(TrainArgs),
    /// Synthesize utterances from a checkpoint at their oracle durations.
    Synth(SynthArgs),
    /// Score generated audio directories against the corpus.
    Eval(EvalArgs),
    /// Train, synthesize and score several modes over several seeds.
    Compare(CompareArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    /// Corpus spec (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Corpus manifest.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Training config (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// linguistic | linguistic+f0 | mtl
    #[arg(long)]
    pub mode: ConditionMode,
    /// Output directory for checkpoints, loss.jsonl and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `steps` in the config.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub run_id: Option<String>,
}

/// Where an F0-conditioned checkpoint gets its F0 at synthesis time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F0Source {
    /// Oracle log-F0 and V/UV from the corpus feature files.
    Corpus,
    /// No F0 input.
    None,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated utterance ids; defaults to the test split.
    #[arg(long, value_delimiter = ',')]
    pub utterances: Option<Vec<String>>,
    /// Output directory; one `<id>.wav` per utterance.
    #[arg(long)]
    pub out: PathBuf,
    /// Pick the most likely bin instead of sampling.
    #[arg(long)]
    pub argmax: bool,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = F0Source::Corpus)]
    pub f0_source: F0Source,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directories of `<id>.wav`; one report row each, named after the directory.
    #[arg(long, required = true, num_args = 1..)]
    pub generated: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report path (JSONL); the aligned table goes to the same path with a .txt extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated utterance ids; defaults to the test split.
    #[arg(long, value_delimiter = ',')]
    pub utterances: Option<Vec<String>>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "linguistic,mtl")]
    pub modes: Vec<ConditionMode>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub argmax: bool,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Record of one command invocation. `args` holds every flag, so
/// [`RunManifest::command`] recreates the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub mode: Option<ConditionMode>,
    pub config_paths: Vec<PathBuf>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub corpus_manifest: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: Value,
}

impl RunManifest {
    fn new(run_id: &str, command: &Command) -> Self {
        Self {
            run_id: run_id.to_string(),
            version: VERSION.to_string(),
            mode: None,
            config_paths: Vec::new(),
            checkpoint_paths: Vec::new(),
            corpus_manifest: None,
            outputs: Vec::new(),
            args: serde_json::to_value(command).unwrap_or(Value::Null),
        }
    }

    pub fn command(&self) -> Result<Command> {
        serde_json::from_value(self.args.clone()).map_err(|e| Error::format("args", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format("run manifest", e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }
}

/// `<command>-<12 hex>` from the canonical JSON of the arguments.
pub fn derive_run_id(command: &Command) -> String {
    let v = serde_json::to_value(command).unwrap_or(Value::Null);
    let name = v.get("command").and_then(Value::as_str).unwrap_or("run").to_string();
    let digest = Sha256::digest(v.to_string().as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{name}-{hex}")
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Argument("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Usage(e.to_string())),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads the requested utterances (or the test split), keeping each one's
/// position in the manifest.
fn select(manifest: &Manifest, ids: Option<&[String]>) -> Result<Vec<(usize, Utterance)>> {
    match ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                let i = manifest.entries.iter().position(|e| &e.id == id).ok_or_else(|| {
                    Error::Argument(format!("utterance {id:?} is not in {}", manifest.path.display()))
                })?;
                Ok((i, manifest.load(&manifest.entries[i])?))
            })
            .collect(),
        None => manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Split::Test)
            .map(|(i, e)| Ok((i, manifest.load(e)?)))
            .collect(),
    }
}

fn load_train_config(path: Option<&Path>, steps: Option<usize>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = steps {
        config.steps = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

pub fn run(command: &Command) -> Result<RunManifest> {
    match command {
        Command::Corpus(a) => cmd_corpus(command, a),
        Command::Train(a) => cmd_train(command, a),
        Command::Synth(a) => cmd_synth(command, a),
        Command::Eval(a) => cmd_eval(command, a),
        Command::Compare(a) => cmd_compare(command, a),
    }
}

fn cmd_corpus(command: &Command, a: &CorpusArgs) -> Result<RunManifest> {
    let spec = match &a.spec {
        Some(p) => CorpusSpec::load(p)?,
        None => CorpusSpec::default(),
    };
    spec.validate()?;
    let run_id = a.run_id.clone().unwrap_or_else(|| derive_run_id(command));
    let written = corpus::write_corpus(&spec, &a.out, &run_id)?;
    let spec_copy = a.out.join("corpus.toml");
    fs::write(&spec_copy, spec.to_toml()).map_err(|e| Error::io(&spec_copy, e))?;
    let mut m = RunManifest::new(&run_id, command);
    m.config_paths = vec![spec_copy];
    m.corpus_manifest = Some(written.manifest.clone());
    m.outputs = written
        .entries
        .iter()
        .flat_map(|e| [a.out.join(&e.wav), a.out.join(&e.features)])
        .collect();
    m.write(&a.out.join(RUN_MANIFEST))?;
    println!("{} utterances written to {}", written.entries.len(), a.out.display());
    println!("checksum {}", written.checksum);
    Ok(m)
}

fn cmd_train(command: &Command, a: &TrainArgs) -> Result<RunManifest> {
    let manifest = Manifest::read(&a.corpus)?;
    let config = load_train_config(a.config.as_deref(), a.steps, a.seed)?;
    let train = manifest.load_split(Split::Train)?;
    let first = train
        .first()
        .ok_or_else(|| Error::Config(format!("{} has no training utterances", a.corpus.display())))?;
    config.validate(first.frame_shift)?;
    create_dir(&a.out)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let t = Trainer::resume(ckpt, Some(config.clone()))?;
            if t.model.mode != a.mode {
                return Err(Error::Argument(format!(
                    "checkpoint {} was trained in mode {}, not {}",
                    ckpt.display(),
                    t.model.mode,
                    a.mode
                )));
            }
            t
        }
        None => {
            let run_id = a.run_id.clone().unwrap_or_else(|| derive_run_id(command));
            let model = crate::model::MtlWaveNet::new(
                &config.model,
                a.mode,
                first.linguistic.rows(),
                first.frame_shift,
                crate::model::FeatureNormalizer::fit(&train)?,
                config.seed,
            )?;
            Trainer::new(model, config.clone(), run_id)?
        }
    };
    let data = TrainingData::prepare(&trainer.model, &train)?;
    let start = trainer.step;
    let outcome = trainer.run(&data, Some(&a.out))?;
    let config_copy = a.out.join("train.toml");
    fs::write(&config_copy, config.to_toml()).map_err(|e| Error::io(&config_copy, e))?;

    let mut m = RunManifest::new(&trainer.run_id, command);
    m.mode = Some(a.mode);
    m.config_paths = vec![config_copy];
    m.corpus_manifest = Some(a.corpus.clone());
    m.checkpoint_paths = (1..=trainer.step)
        .map(|s| a.out.join(checkpoint_name(s)))
        .filter(|p| p.exists())
        .collect();
    m.outputs = vec![a.out.join(LossLog::FILE)];
    m.write(&a.out.join(RUN_MANIFEST))?;
    if let Some(last) = outcome.records.last() {
        println!(
            "steps {start}..{} mode {} final loss {:.4} (ce {:.4})",
            trainer.step, a.mode, last.total, last.ce
        );
    } else {
        println!("nothing to do: checkpoint is already at step {}", trainer.step);
    }
    if let Some(p) = outcome.checkpoints.last() {
        println!("checkpoint {}", p.display());
    }
    Ok(m)
}

fn cmd_synth(command: &Command, a: &SynthArgs) -> Result<RunManifest> {
    let sampler = SamplerConfig {
        mode: if a.argmax {
            SampleMode::Argmax
        } else {
            SampleMode::Sample
        },
        temperature: a.temperature,
        seed: a.seed,
    };
    sampler.validate()?;
    let model = crate::model::MtlWaveNet::load(&a.checkpoint)?;
    if model.mode.uses_f0() && a.f0_source == F0Source::None {
        return Err(Error::Argument(format!(
            "checkpoint {} is conditioned on F0 ({}) but --f0-source is none",
            a.checkpoint.display(),
            model.mode
        )));
    }
    let manifest = Manifest::read(&a.corpus)?;
    let selected = select(&manifest, a.utterances.as_deref())?;
    if selected.is_empty() {
        return Err(Error::Argument("no utterances selected".into()));
    }
    let utts: Vec<&Utterance> = selected.iter().map(|(_, u)| u).collect();
    let indices: Vec<usize> = selected.iter().map(|(i, _)| *i).collect();
    let oracle_f0 = a.f0_source == F0Source::Corpus;
    let wavs = with_jobs(a.jobs, || {
        experiment::synthesize_set(&model, &utts, &indices, &sampler, oracle_f0)
    })?;
    if let Some((id, Err(e))) = wavs.iter().find(|(_, r)| r.is_err()) {
        return Err(Error::Numeric(format!("synthesis of {id} failed: {e}")));
    }
    experiment::write_wavs(&a.out, &wavs)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| derive_run_id(command));
    let mut m = RunManifest::new(&run_id, command);
    m.mode = Some(model.mode);
    m.checkpoint_paths = vec![a.checkpoint.clone()];
    m.corpus_manifest = Some(a.corpus.clone());
    m.outputs = wavs.keys().map(|id| a.out.join(format!("{id}.wav"))).collect();
    m.write(&a.out.join(RUN_MANIFEST))?;
    println!("{} utterances synthesized into {}", wavs.len(), a.out.display());
    Ok(m)
}

fn table_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

fn cmd_eval(command: &Command, a: &EvalArgs) -> Result<RunManifest> {
    let manifest = Manifest::read(&a.corpus)?;
    let refs: Vec<Utterance> = select(&manifest, a.utterances.as_deref())?
        .into_iter()
        .map(|(_, u)| u)
        .collect();
    if refs.is_empty() {
        return Err(Error::Argument("no reference utterances selected".into()));
    }
    let params = EvalParams {
        f0: metrics::F0Params {
            frame_shift: refs[0].frame_shift,
            ..metrics::F0Params::default()
        },
        ..EvalParams::default()
    };
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let rows = with_jobs(a.jobs, || {
        a.generated
            .iter()
            .map(|dir| {
                let base = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                let n = names.entry(base.clone()).or_default();
                *n += 1;
                let name = if *n > 1 { format!("{base}#{n}") } else { base };
                metrics::evaluate_dir(&name, dir, &refs, &params)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let report = EvalReport { rows };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, report.to_jsonl()).map_err(|e| Error::io(&a.out, e))?;
    let table = report.to_table();
    let tp = table_path(&a.out);
    fs::write(&tp, &table).map_err(|e| Error::io(&tp, e))?;
    print!("{table}");
    for row in &report.rows {
        for ex in &row.excluded {
            eprintln!("{}: excluded {}: {}", row.system, ex.id, ex.reason);
        }
    }
    let mut m = RunManifest::new(&derive_run_id(command), command);
    m.corpus_manifest = Some(a.corpus.clone());
    m.outputs = vec![a.out.clone(), tp];
    m.write(&a.out.with_extension("run.json"))?;
    Ok(m)
}

fn cmd_compare(command: &Command, a: &CompareArgs) -> Result<RunManifest> {
    let manifest = Manifest::read(&a.corpus)?;
    let train_config = load_train_config(a.config.as_deref(), a.steps, None)?;
    let train = manifest.load_split(Split::Train)?;
    let test = manifest.load_split(Split::Test)?;
    if let Some(u) = train.first() {
        train_config.validate(u.frame_shift)?;
    }
    let config = ExperimentConfig {
        train: train_config,
        modes: a.modes.clone(),
        seeds: a.seeds.clone(),
        sampler: SamplerConfig {
            mode: if a.argmax {
                SampleMode::Argmax
            } else {
                SampleMode::Sample
            },
            temperature: a.temperature,
            seed: 0,
        },
        eval: EvalParams {
            f0: metrics::F0Params {
                frame_shift: test.first().map_or(80, |u| u.frame_shift),
                ..metrics::F0Params::default()
            },
            ..EvalParams::default()
        },
    };
    create_dir(&a.out)?;
    let comparison = with_jobs(a.jobs, || {
        experiment::run_experiment(&train, &test, &config, Some(&a.out), |r| {
            eprintln!(
                "{} seed {}: loss {:.4} F0 RMSE {} corr {}",
                r.mode,
                r.seed,
                r.final_loss,
                r.scores.f0_rmse_hz.map_or("-".into(), |v| format!("{v:.3}")),
                r.scores.f0_corr.map_or("-".into(), |v| format!("{v:.4}")),
            )
        })
    })??;
    let runs_report = EvalReport {
        rows: comparison.runs.iter().map(|r| r.scores.clone()).collect(),
    };
    let median_report = comparison.report();
    let summary_path = a.out.join("comparison.json");
    let text = serde_json::to_string_pretty(&comparison).map_err(|e| Error::format("comparison", e.to_string()))?;
    fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    let runs_path = a.out.join("runs.jsonl");
    fs::write(&runs_path, runs_report.to_jsonl()).map_err(|e| Error::io(&runs_path, e))?;
    let table = format!("{}\n{}", runs_report.to_table(), median_report.to_table());
    let table_path = a.out.join("comparison.txt");
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    print!("{table}");
    if let Some(better) = comparison.f0_better(ConditionMode::Mtl, ConditionMode::Linguistic) {
        println!("mtl F0 better than linguistic: {better}");
    }
    let mut m = RunManifest::new(&derive_run_id(command), command);
    m.config_paths = a.config.iter().cloned().collect();
    m.corpus_manifest = Some(a.corpus.clone());
    m.outputs = vec![summary_path, runs_path, table_path];
    m.write(&a.out.join(RUN_MANIFEST))?;
    Ok(m)
}
