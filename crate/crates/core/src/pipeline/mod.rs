//! File-level workflows behind the command-line tools: ingestion and splitting,
//! training runs with loss logs and checkpoints, prediction, top-k evaluation, and
//! probability-path dumps.

mod evaluate;
mod ingest;
mod inspect;
mod predict;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use evaluate::{evaluate, evaluate_files, normalize_smiles, EvalReport, TOP_K};
pub use ingest::{ingest, IngestSummary, REJECTION_LOG};
pub use inspect::{inspect_path, MAX_INSPECT_K};
pub use predict::{
    parse_direction, predict, predict_file, rank_candidates, read_predictions, write_predictions, Candidate,
    PredictRequest, Prediction, PredictionFile,
};
pub use run::{read_loss_log, run_training, LOSS_HEADER};

use crate::bridge::BridgeError;
use crate::chemgraph::{align_reaction, ReactionError, ReactionPair};
use crate::model::ModelConfig;
use crate::train::{TaskMix, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("{0}")]
    Data(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Non-blank, non-comment lines with their 1-based line numbers.
pub fn reaction_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads and aligns every reaction of a file; any bad line is an error.
pub fn load_reactions(path: &Path) -> Result<Vec<ReactionPair>, PipelineError> {
    let text = read_text(path)?;
    reaction_lines(&text)
        .map(|(line, rxn)| {
            align_reaction(rxn).map_err(|e: ReactionError| PipelineError::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Everything a run needs: training and model hyperparameters, dataset and output
/// paths, and sampling settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub report: Option<PathBuf>,
    pub n_samples: usize,
    pub n_steps: usize,
    pub sigma_sampling: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            train_path: None,
            valid_path: None,
            test_path: None,
            checkpoint: PathBuf::from("synbridge.ckpt"),
            loss_log: PathBuf::from("loss.csv"),
            report: None,
            n_samples: 32,
            n_steps: 20,
            sigma_sampling: 0.0,
            log_every: 10,
            checkpoint_every: 1000,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "warmup_steps",
    "max_steps",
    "batch_size",
    "sigma",
    "seed",
    "task_mix",
    "weight_decay",
    "grad_clip",
    "d_model",
    "n_enc_layers",
    "n_merge_layers",
    "n_dec_layers",
    "n_heads",
    "max_atoms",
    "train_path",
    "valid_path",
    "test_path",
    "checkpoint",
    "loss_log",
    "report",
    "n_samples",
    "n_steps",
    "sigma_sampling",
    "log_every",
    "checkpoint_every",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        match key {
            "learning_rate" => self.train.learning_rate = num(key, v)?,
            "warmup_steps" => self.train.warmup_steps = num(key, v)?,
            "max_steps" => self.train.max_steps = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "sigma" => self.train.sigma = num(key, v)?,
            "seed" => self.train.seed = num(key, v)?,
            "task_mix" => self.train.task_mix = v.parse::<TaskMix>()?,
            "weight_decay" => self.train.weight_decay = num(key, v)?,
            "grad_clip" => self.train.grad_clip = num(key, v)?,
            "d_model" => self.model.d_model = num(key, v)?,
            "n_enc_layers" => self.model.n_enc_layers = num(key, v)?,
            "n_merge_layers" => self.model.n_merge_layers = num(key, v)?,
            "n_dec_layers" => self.model.n_dec_layers = num(key, v)?,
            "n_heads" => self.model.n_heads = num(key, v)?,
            "max_atoms" => self.model.max_atoms = num(key, v)?,
            "train_path" => self.train_path = Some(v.into()),
            "valid_path" => self.valid_path = Some(v.into()),
            "test_path" => self.test_path = Some(v.into()),
            "checkpoint" => self.checkpoint = v.into(),
            "loss_log" => self.loss_log = v.into(),
            "report" => self.report = Some(v.into()),
            "n_samples" => self.n_samples = num(key, v)?,
            "n_steps" => self.n_steps = num(key, v)?,
            "sigma_sampling" => self.sigma_sampling = num(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            other => return Err(PipelineError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&read_text(path)?)?;
        Ok(cfg)
    }

    /// Joins relative paths onto `root`.
    pub fn resolve(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for p in
            [&mut self.train_path, &mut self.valid_path, &mut self.test_path, &mut self.report].into_iter().flatten()
        {
            fix(p);
        }
        fix(&mut self.checkpoint);
        fix(&mut self.loss_log);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.train.validate()?;
        self.model.validate().map_err(TrainError::from)?;
        if self.n_samples == 0 || self.n_steps == 0 {
            return Err(PipelineError::Config("n_samples and n_steps must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.sigma_sampling) {
            return Err(PipelineError::Config(format!("sigma_sampling {} outside [0, 2]", self.sigma_sampling)));
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(PipelineError::Config("log_every and checkpoint_every must be at least 1".into()));
        }
        let mut paths: Vec<&PathBuf> =
            [&self.train_path, &self.valid_path, &self.test_path, &self.report].into_iter().flatten().collect();
        paths.extend([&self.checkpoint, &self.loss_log]);
        for (i, a) in paths.iter().enumerate() {
            if paths[i + 1..].contains(a) {
                return Err(PipelineError::Config(format!("path {} used twice", a.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_overrides_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# run\nlearning_rate = 1e-3\ntask_mix=retro_only  # note\nd_model = 64\ntrain_path = a.rxn\n")
            .unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.task_mix, TaskMix::RetroOnly);
        assert_eq!(cfg.model.d_model, 64);
        assert_eq!(cfg.train_path, Some(PathBuf::from("a.rxn")));
        assert!(cfg.apply_text("bogus = 1").is_err());
        assert!(cfg.apply_text("n_steps = many").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
    }

    #[test]
    fn every_documented_key_is_settable() {
        let mut cfg = RunConfig::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "task_mix" => "multi_task",
                k if k.ends_with("path") || ["checkpoint", "loss_log", "report"].contains(&k) => "x",
                _ => "1",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn validation_catches_conflicts() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.loss_log = cfg.checkpoint.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.warmup_steps = cfg.train.max_steps + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.n_heads = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolve_keeps_absolute_paths() {
        let mut cfg = RunConfig { train_path: Some("/abs/train.rxn".into()), ..RunConfig::default() };
        cfg.resolve(Path::new("/data"));
        assert_eq!(cfg.train_path, Some(PathBuf::from("/abs/train.rxn")));
        assert_eq!(cfg.checkpoint, PathBuf::from("/data/synbridge.ckpt"));
    }
}
