use rand::Rng;

use super::optim::{lr_at, AdamW};
use super::{derived_rng, TaskMix, TrainConfig, TrainError};
use crate::bridge::{sample_graph_path, Scheduler};
use crate::chemgraph::{GraphChannels, ReactionPair};
use crate::model::{masked_channel_loss, Batch, Example, Model, TASK_FORWARD, TASK_RETRO};
use crate::net::Tape;

/// One training input after the random draws of a step.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub t: f64,
    pub task: usize,
    pub g_t: GraphChannels,
    pub src: GraphChannels,
    pub target: GraphChannels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    /// Batch means of the atom, aromatic, charge and bond terms.
    pub channels: [f64; 4],
    pub lr: f64,
    pub grad_norm: f64,
    pub tasks: Vec<usize>,
}

pub fn draw_task<R: Rng + ?Sized>(mix: TaskMix, rng: &mut R) -> usize {
    match mix {
        TaskMix::ForwardOnly => TASK_FORWARD,
        TaskMix::RetroOnly => TASK_RETRO,
        TaskMix::MultiTask => {
            if rng.gen_bool(0.5) {
                TASK_FORWARD
            } else {
                TASK_RETRO
            }
        }
    }
}

/// Model, optimizer state and step counter. Each step draws its randomness from a
/// generator derived from (seed, step), so a resumed run replays the same draws.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Trainer, TrainError> {
        config.validate()?;
        let optimizer = AdamW::new(&model.params, config.weight_decay);
        Ok(Trainer { model, optimizer, config, step: 0 })
    }

    /// Draws t, the task and G_t for each pair.
    pub fn prepare<R: Rng + ?Sized>(
        &self,
        pairs: &[&ReactionPair],
        rng: &mut R,
    ) -> Result<Vec<PreparedExample>, TrainError> {
        let scheduler = Scheduler::new(self.config.sigma)?;
        pairs
            .iter()
            .map(|pair| {
                let t: f64 = rng.gen();
                let task = draw_task(self.config.task_mix, rng);
                let g_t = sample_graph_path(&pair.reactants, &pair.product, &scheduler.state(t)?, rng)?;
                let (r, p) = (GraphChannels::encode(&pair.reactants), GraphChannels::encode(&pair.product));
                let (src, target) = if task == TASK_FORWARD { (r, p) } else { (p, r) };
                Ok(PreparedExample { t, task, g_t: GraphChannels::encode(&g_t), src, target })
            })
            .collect()
    }

    fn batch(&self, examples: &[PreparedExample]) -> Result<Batch, TrainError> {
        let inputs: Vec<Example> =
            examples.iter().map(|e| Example { g_t: &e.g_t, g_src: &e.src, task: e.task }).collect();
        Ok(Batch::new(&inputs, self.model.config.max_atoms)?)
    }

    /// Loss of prepared examples under the current parameters: (total, channels).
    pub fn evaluate(&self, examples: &[PreparedExample]) -> Result<(f64, [f64; 4]), TrainError> {
        let batch = self.batch(examples)?;
        let targets: Vec<&GraphChannels> = examples.iter().map(|e| &e.target).collect();
        let mut tape = Tape::new(&self.model.params);
        let logits = self.model.forward(&mut tape, &batch)?;
        let loss = masked_channel_loss(&mut tape, &logits, &targets, &batch)?;
        Ok((tape.value(loss.total)[0], loss.channels.map(|v| tape.value(v)[0])))
    }

    /// One optimizer update on prepared examples; parameters are untouched if the
    /// loss or gradient is not finite.
    pub fn update(&mut self, examples: &[PreparedExample]) -> Result<StepStats, TrainError> {
        let step = self.step + 1;
        let batch = self.batch(examples)?;
        let targets: Vec<&GraphChannels> = examples.iter().map(|e| &e.target).collect();
        let (total, channels, mut grads) = {
            let mut tape = Tape::new(&self.model.params);
            let logits = self.model.forward(&mut tape, &batch)?;
            let loss = masked_channel_loss(&mut tape, &logits, &targets, &batch)?;
            let total = tape.value(loss.total)[0];
            let channels = loss.channels.map(|v| tape.value(v)[0]);
            let grads = tape.backward(loss.total).map_err(crate::model::ModelError::from)?;
            (total, channels, grads.into_params())
        };
        let grad_norm = AdamW::clip(&mut grads, self.config.grad_clip);
        if !total.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { step, loss: total });
        }
        let lr = lr_at(self.config.learning_rate, self.config.warmup_steps, step);
        self.optimizer.step(&mut self.model.params, &grads, lr);
        self.step = step;
        Ok(StepStats { step, loss: total, channels, lr, grad_norm, tasks: examples.iter().map(|e| e.task).collect() })
    }

    /// Draws a batch from `corpus` and applies one update.
    pub fn train_step(&mut self, corpus: &[ReactionPair]) -> Result<StepStats, TrainError> {
        if corpus.is_empty() {
            return Err(TrainError::Config("empty training corpus".into()));
        }
        let mut rng = derived_rng(self.config.seed, self.step + 1);
        let picks: Vec<&ReactionPair> =
            (0..self.config.batch_size).map(|_| &corpus[rng.gen_range(0..corpus.len())]).collect();
        let examples = self.prepare(&picks, &mut rng)?;
        self.update(&examples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::align_reaction;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> Model {
        let cfg =
            ModelConfig { d_model: 16, n_enc_layers: 1, n_merge_layers: 1, n_dec_layers: 1, n_heads: 2, max_atoms: 80 };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn corpus() -> Vec<ReactionPair> {
        [
            "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>>[CH3:1][C:2](=[O:3])[O:6][CH3:5]",
            "[CH3:1][CH2:2][OH:3].[Br:4][Br:5]>>[CH3:1][CH2:2][O:3][Br:4]",
            "[NH2:1][CH3:2].[CH3:3][C:4](=[O:5])[Cl:6]>>[CH3:3][C:4](=[O:5])[NH:1][CH3:2]",
        ]
        .iter()
        .map(|r| align_reaction(r).unwrap())
        .collect()
    }

    fn config(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            warmup_steps: 0,
            max_steps: 100,
            batch_size: 2,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn small_step_descends() {
        let corpus = corpus();
        let mut tr = Trainer::new(tiny_model(1), config(1e-5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = tr.prepare(&[&corpus[0]], &mut rng).unwrap();
        let (before, _) = tr.evaluate(&ex).unwrap();
        let stats = tr.update(&ex).unwrap();
        assert_eq!(stats.loss, before);
        let (after, _) = tr.evaluate(&ex).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn initial_atom_loss_is_near_uniform() {
        let corpus = corpus();
        let mut tr = Trainer::new(tiny_model(2), config(1e-4)).unwrap();
        let stats = tr.train_step(&corpus).unwrap();
        assert!((stats.channels[0] - 73f64.ln()).abs() < 0.5, "{}", stats.channels[0]);
        assert_eq!(stats.step, 1);
    }

    #[test]
    fn task_coin_is_fair() {
        for seed in [0u64, 1, 99, 12345] {
            let mut forward = 0;
            for step in 1..=10_000u64 {
                let mut rng = derived_rng(seed, step);
                if draw_task(TaskMix::MultiTask, &mut rng) == TASK_FORWARD {
                    forward += 1;
                }
            }
            let frac = forward as f64 / 10_000.0;
            assert!((0.48..=0.52).contains(&frac), "seed {seed}: {frac}");
        }
        let mut rng = derived_rng(0, 0);
        assert_eq!(draw_task(TaskMix::RetroOnly, &mut rng), TASK_RETRO);
        assert_eq!(draw_task(TaskMix::ForwardOnly, &mut rng), TASK_FORWARD);
    }

    #[test]
    fn same_seed_same_losses() {
        let corpus = corpus();
        let run = || {
            let mut tr = Trainer::new(tiny_model(5), config(1e-3)).unwrap();
            (0..5).map(|_| tr.train_step(&corpus).unwrap().loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = config(1e-4);
        cfg.warmup_steps = 1000;
        assert!(Trainer::new(tiny_model(0), cfg).is_err());
        assert!(Trainer::new(tiny_model(0), config(0.0)).is_err());
    }

    #[test]
    fn non_finite_loss_leaves_parameters() {
        let corpus = corpus();
        let mut tr = Trainer::new(tiny_model(6), config(1e-3)).unwrap();
        let id = tr.model.params.id("head.atom.bias").unwrap();
        tr.model.params.get_mut(id).value.data[0] = f64::NAN;
        let before = tr.model.params.clone();
        let err = tr.train_step(&corpus).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { step: 1, .. }));
        assert_eq!(tr.step, 0);
        for (a, b) in before.iter().zip(tr.model.params.iter()) {
            let same = a.value.data.iter().zip(&b.value.data).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()));
            assert!(same);
        }
    }
}
