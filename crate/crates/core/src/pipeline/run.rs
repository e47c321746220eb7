use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use super::{io_err, read_text, PipelineError, RunConfig};
use crate::chemgraph::ReactionPair;
use crate::model::Model;
use crate::train::{derived_rng, load_checkpoint, save_checkpoint, Checkpoint, StepStats, Trainer};

pub const LOSS_HEADER: &str = "step,total,atom,aromatic,charge,bond";

fn loss_row(s: &StepStats) -> String {
    let [a, b, c, d] = s.channels;
    format!("{},{},{a},{b},{c},{d}\n", s.step, s.loss)
}

/// Parses a loss log into (step, [total, atom, aromatic, charge, bond]) rows.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, [f64; 5])>, PipelineError> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: &str| PipelineError::Parse { path: path.to_path_buf(), line, msg: msg.into() };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, "expected 6 columns"));
        }
        let step = fields[0].parse().map_err(|_| bad(i + 1, "bad step"))?;
        let mut vals = [0.0; 5];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse().map_err(|_| bad(i + 1, "bad number"))?;
        }
        rows.push((step, vals));
    }
    Ok(rows)
}

fn checkpoint_meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    let t = &cfg.train;
    [
        ("learning_rate", t.learning_rate.to_string()),
        ("warmup_steps", t.warmup_steps.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("sigma", t.sigma.to_string()),
        ("seed", t.seed.to_string()),
        ("task_mix", t.task_mix.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn save(trainer: &Trainer, cfg: &RunConfig) -> Result<(), PipelineError> {
    let ck = Checkpoint {
        model: trainer.model.clone(),
        step: trainer.step,
        optimizer: Some(trainer.optimizer.clone()),
        meta: checkpoint_meta(cfg),
    };
    save_checkpoint(&ck, &cfg.checkpoint)?;
    Ok(())
}

/// Trains on `corpus` up to `max_steps`, appending loss rows every `log_every`
/// steps and checkpointing every `checkpoint_every` steps and at the end. With
/// `resume`, training continues from the checkpoint's step and the loss log is cut
/// back to that step. `on_step` sees every step's statistics.
pub fn run_training(
    cfg: &RunConfig,
    corpus: &[ReactionPair],
    resume: bool,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Trainer, PipelineError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::Data("empty training corpus".into()));
    }
    if let Some(n) = corpus.iter().map(|p| p.reactants.n_atoms).find(|&n| n > cfg.model.max_atoms) {
        return Err(PipelineError::Config(format!(
            "corpus has a {n}-atom reaction; max_atoms is {}",
            cfg.model.max_atoms
        )));
    }

    let mut trainer = if resume && cfg.checkpoint.exists() {
        let ck = load_checkpoint(&cfg.checkpoint)?;
        if ck.model.config != cfg.model {
            return Err(PipelineError::Config(format!(
                "checkpoint model {:?} differs from configured {:?}",
                ck.model.config, cfg.model
            )));
        }
        let mut trainer = Trainer::new(ck.model, cfg.train.clone())?;
        if let Some(mut opt) = ck.optimizer {
            opt.weight_decay = cfg.train.weight_decay;
            trainer.optimizer = opt;
        }
        trainer.step = ck.step;
        trainer
    } else {
        // Stream 0 is reserved for initialization; step k draws from stream k.
        let model = Model::new(cfg.model.clone(), &mut derived_rng(cfg.train.seed, 0))
            .map_err(crate::train::TrainError::from)?;
        Trainer::new(model, cfg.train.clone())?
    };

    let log_path = &cfg.loss_log;
    let kept: String = if trainer.step > 0 && log_path.exists() {
        read_loss_log(log_path)?
            .iter()
            .filter(|(s, _)| *s <= trainer.step)
            .map(|(s, v)| format!("{s},{},{},{},{},{}\n", v[0], v[1], v[2], v[3], v[4]))
            .collect()
    } else {
        String::new()
    };
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(log_path, format!("{LOSS_HEADER}\n{kept}")).map_err(io_err(log_path))?;
    let mut log = OpenOptions::new().append(true).open(log_path).map_err(io_err(log_path))?;

    while trainer.step < cfg.train.max_steps {
        let stats = trainer.train_step(corpus)?;
        on_step(&stats);
        let last = stats.step == cfg.train.max_steps;
        if stats.step % cfg.log_every == 0 || last {
            log.write_all(loss_row(&stats).as_bytes()).map_err(io_err(log_path))?;
        }
        if stats.step % cfg.checkpoint_every == 0 && !last {
            save(&trainer, cfg)?;
        }
    }
    log.flush().map_err(io_err(log_path))?;
    save(&trainer, cfg)?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::align_reaction;
    use crate::model::ModelConfig;

    fn config(dir: &Path, max_steps: u64) -> RunConfig {
        let mut cfg = RunConfig {
            model: ModelConfig {
                d_model: 16,
                n_enc_layers: 1,
                n_merge_layers: 1,
                n_dec_layers: 1,
                n_heads: 2,
                max_atoms: 80,
            },
            checkpoint: dir.join("run.ckpt"),
            loss_log: dir.join("loss.csv"),
            log_every: 1,
            checkpoint_every: 3,
            ..RunConfig::default()
        };
        cfg.train.max_steps = max_steps;
        cfg.train.warmup_steps = 2;
        cfg.train.batch_size = 2;
        cfg.train.learning_rate = 1e-3;
        cfg
    }

    fn corpus() -> Vec<ReactionPair> {
        ["[CH3:1][CH2:2][OH:3].[Br:4][Br:5]>>[CH3:1][CH2:2][O:3][Br:4]", "[NH3:1].[CH3:2][Cl:3]>>[NH2:1][CH3:2]"]
            .iter()
            .map(|r| align_reaction(r).unwrap())
            .collect()
    }

    #[test]
    fn log_has_header_and_six_numeric_columns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), 4);
        let tr = run_training(&cfg, &corpus(), false, |_| {}).unwrap();
        assert_eq!(tr.step, 4);
        let text = fs::read_to_string(&cfg.loss_log).unwrap();
        assert_eq!(text.lines().next(), Some(LOSS_HEADER));
        let rows = read_loss_log(&cfg.loss_log).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(rows.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())));
        assert_eq!(load_checkpoint(&cfg.checkpoint).unwrap().step, 4);
    }

    #[test]
    fn resume_continues_at_next_step() {
        let dir = tempfile::tempdir().unwrap();
        let straight = config(&dir.path().join("a"), 6);
        run_training(&straight, &corpus(), false, |_| {}).unwrap();

        let mut split = config(&dir.path().join("b"), 3);
        run_training(&split, &corpus(), false, |_| {}).unwrap();
        split.train.max_steps = 6;
        let mut first = None;
        run_training(&split, &corpus(), true, |s| {
            first.get_or_insert(s.step);
        })
        .unwrap();
        assert_eq!(first, Some(4));
        // Parameters pass through the 32-bit checkpoint payload, so the resumed tail
        // agrees closely rather than bitwise.
        let (a, b) = (read_loss_log(&straight.loss_log).unwrap(), read_loss_log(&split.loss_log).unwrap());
        assert_eq!(a.iter().map(|r| r.0).collect::<Vec<_>>(), b.iter().map(|r| r.0).collect::<Vec<_>>());
        assert_eq!(a[..3], b[..3]);
        for (x, y) in a[3..].iter().zip(&b[3..]) {
            assert!((x.1[0] - y.1[0]).abs() < 1e-4 * x.1[0].abs(), "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn mismatched_checkpoint_is_rejected_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), 2);
        run_training(&cfg, &corpus(), false, |_| {}).unwrap();
        cfg.model.d_model = 32;
        cfg.train.max_steps = 3;
        let mut ran = false;
        assert!(run_training(&cfg, &corpus(), true, |_| ran = true).is_err());
        assert!(!ran);
    }
}
