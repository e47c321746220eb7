use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use synbridge::pipeline::{
    evaluate_files, ingest, inspect_path, load_reactions, parse_direction, predict_file, run_training, PredictRequest,
    RunConfig,
};

/// Discrete flow bridge for forward and retro reaction prediction.
#[derive(Parser)]
#[command(name = "synbridge", version)]
struct Cli {
    /// Root directory for relative data, checkpoint and output paths.
    #[arg(long, env = "SYNBRIDGE_DATA", global = true)]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, filter and split an atom-mapped reaction file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Train, valid and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.8,0.1,0.1")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on `train_path`, writing a loss log and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the checkpoint if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Sample ranked candidates for every reaction of an input file; with `report`
    /// set, also score them against that file.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        /// forward (reactants → product) or retro (product → reactants).
        #[arg(long)]
        direction: String,
        /// Reaction file; defaults to `test_path`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Top-k exact-match accuracy of a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// The reaction file the predictions were made from.
        #[arg(long)]
        reactions: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump the analytic path and velocity flux between two classes as CSV.
    InspectPath {
        #[arg(long)]
        x0: usize,
        #[arg(long)]
        x1: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 20)]
        n_grid: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// A `key = value` file plus one flag per configuration key; flags win.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    warmup_steps: Option<String>,
    #[arg(long)]
    max_steps: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    task_mix: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    grad_clip: Option<String>,
    #[arg(long)]
    d_model: Option<String>,
    #[arg(long)]
    n_enc_layers: Option<String>,
    #[arg(long)]
    n_merge_layers: Option<String>,
    #[arg(long)]
    n_dec_layers: Option<String>,
    #[arg(long)]
    n_heads: Option<String>,
    #[arg(long)]
    max_atoms: Option<String>,
    #[arg(long)]
    train_path: Option<String>,
    #[arg(long)]
    valid_path: Option<String>,
    #[arg(long)]
    test_path: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    loss_log: Option<String>,
    #[arg(long)]
    report: Option<String>,
    #[arg(long)]
    n_samples: Option<String>,
    #[arg(long)]
    n_steps: Option<String>,
    #[arg(long)]
    sigma_sampling: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 26] {
        [
            ("learning_rate", &self.learning_rate),
            ("warmup_steps", &self.warmup_steps),
            ("max_steps", &self.max_steps),
            ("batch_size", &self.batch_size),
            ("sigma", &self.sigma),
            ("seed", &self.seed),
            ("task_mix", &self.task_mix),
            ("weight_decay", &self.weight_decay),
            ("grad_clip", &self.grad_clip),
            ("d_model", &self.d_model),
            ("n_enc_layers", &self.n_enc_layers),
            ("n_merge_layers", &self.n_merge_layers),
            ("n_dec_layers", &self.n_dec_layers),
            ("n_heads", &self.n_heads),
            ("max_atoms", &self.max_atoms),
            ("train_path", &self.train_path),
            ("valid_path", &self.valid_path),
            ("test_path", &self.test_path),
            ("checkpoint", &self.checkpoint),
            ("loss_log", &self.loss_log),
            ("report", &self.report),
            ("n_samples", &self.n_samples),
            ("n_steps", &self.n_steps),
            ("sigma_sampling", &self.sigma_sampling),
            ("log_every", &self.log_every),
            ("checkpoint_every", &self.checkpoint_every),
        ]
    }

    fn load(&self, root: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(&rooted(root, p))?,
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(r) = root {
            cfg.resolve(r);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn rooted(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::Ingest { input, out_dir, fractions, seed } => {
            let f: [f64; 3] = fractions.try_into().expect("clap enforces three values");
            let s = ingest(&rooted(root, &input), &rooted(root, &out_dir), f, seed)?;
            println!(
                "lines={} accepted={} rejected={} train={} valid={} test={}",
                s.lines, s.accepted, s.rejected, s.splits[0], s.splits[1], s.splits[2]
            );
        }
        Command::Train { config, resume } => {
            let cfg = config.load(root)?;
            let Some(train_path) = &cfg.train_path else { bail!("train_path is not set") };
            let corpus = load_reactions(train_path)?;
            eprintln!("training on {} reactions for {} steps", corpus.len(), cfg.train.max_steps);
            let start = Instant::now();
            let every = cfg.log_every;
            let trainer = run_training(&cfg, &corpus, resume, |s| {
                if s.step % every == 0 {
                    eprintln!(
                        "step {:>7}  loss {:.5}  lr {:.2e}  {:.0}s",
                        s.step,
                        s.loss,
                        s.lr,
                        start.elapsed().as_secs_f64()
                    );
                }
            })?;
            println!("step={} checkpoint={}", trainer.step, cfg.checkpoint.display());
        }
        Command::Predict { config, direction, input, output } => {
            let cfg = config.load(root)?;
            let input = match input {
                Some(p) => rooted(root, &p),
                None => cfg.test_path.clone().context("no --input and test_path is not set")?,
            };
            let req = PredictRequest {
                direction: parse_direction(&direction)?,
                n_samples: cfg.n_samples,
                n_steps: cfg.n_steps,
                sigma: cfg.sigma_sampling,
                seed: cfg.train.seed,
            };
            let output = rooted(root, &output);
            let preds = predict_file(&cfg.checkpoint, &input, &output, &req)?;
            let invalid: usize = preds.iter().map(|p| p.invalid).sum();
            println!("inputs={} invalid_samples={invalid}", preds.len());
            // With a report path, score the predictions against the input reactions.
            if let Some(report) = &cfg.report {
                write_or_print(Some(report), &evaluate_files(&output, &input)?.to_string())?;
            }
        }
        Command::Evaluate { predictions, reactions, report } => {
            let r = evaluate_files(&rooted(root, &predictions), &rooted(root, &reactions))?;
            write_or_print(report.map(|p| rooted(root, &p)).as_deref(), &r.to_string())?;
        }
        Command::InspectPath { x0, x1, k, sigma, n_grid, output } => {
            let csv = inspect_path(x0, x1, k, sigma, n_grid)?;
            write_or_print(output.map(|p| rooted(root, &p)).as_deref(), &csv)?;
        }
    }
    Ok(())
}
