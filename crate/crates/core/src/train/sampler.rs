use rand::Rng;

use super::TrainError;
use crate::bridge::{parameterized_velocity_into, sample_index, step_distribution, Direction, Scheduler};
use crate::chemgraph::{graph_smiles, GraphChannels, ReactionGraph, Side, BOND_CLASSES};
use crate::model::{Batch, Example, GraphLogits, Model};
use crate::net::Tape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRequest {
    pub n_samples: usize,
    pub n_steps: usize,
    /// Noise level of the scheduler used for velocities; 0 gives the sharper paths
    /// preferred at inference.
    pub sigma: f64,
}

impl Default for SampleRequest {
    fn default() -> Self {
        SampleRequest { n_samples: 1, n_steps: 20, sigma: 0.0 }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// One element's Euler update given its logits.
struct ElementStep<'a> {
    st: &'a crate::bridge::SchedulerState,
    direction: Direction,
    h: f64,
    probs: Vec<f64>,
    v: Vec<f64>,
}

impl ElementStep<'_> {
    fn draw<R: Rng + ?Sized>(
        &mut self,
        current: usize,
        cond: usize,
        logits: &[f64],
        rng: &mut R,
    ) -> Result<usize, TrainError> {
        let k = logits.len();
        self.probs.resize(k, 0.0);
        self.v.resize(k, 0.0);
        softmax_into(logits, &mut self.probs);
        parameterized_velocity_into(current, cond, &self.probs, self.st, self.direction, &mut self.v)?;
        if self.direction == Direction::Reverse {
            self.v.iter_mut().for_each(|x| *x = -*x);
        }
        Ok(sample_index(&step_distribution(current, &self.v, self.h), rng))
    }
}

fn advance<R: Rng + ?Sized>(
    g: &mut GraphChannels,
    src: &GraphChannels,
    logits: &GraphLogits,
    step: &mut ElementStep,
    rng: &mut R,
) -> Result<(), TrainError> {
    let n = g.n_atoms();
    let rows = [
        (&mut g.atom, &src.atom, &logits.atom),
        (&mut g.aromatic, &src.aromatic, &logits.aromatic),
        (&mut g.charge, &src.charge, &logits.charge),
    ];
    for (cur, cond, lg) in rows {
        let k = lg.len() / n;
        for i in 0..n {
            cur[i] = step.draw(cur[i], cond[i], &lg[i * k..(i + 1) * k], rng)?;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let at = (i * n + j) * BOND_CLASSES;
            let c = step.draw(g.bond[i * n + j], src.bond[i * n + j], &logits.bond[at..at + BOND_CLASSES], rng)?;
            g.bond[i * n + j] = c;
            g.bond[j * n + i] = c;
        }
    }
    Ok(())
}

/// Draws `req.n_samples` graphs from `src` by Euler integration: forward marches
/// t from 0 to 1 with the model predicting the product, reverse marches 1 to 0 with
/// the model predicting the reactants. The samples share one batched forward pass per
/// step and one source encoding.
pub fn sample<R: Rng + ?Sized>(
    model: &Model,
    src: &ReactionGraph,
    direction: Direction,
    req: &SampleRequest,
    rng: &mut R,
) -> Result<Vec<ReactionGraph>, TrainError> {
    if req.n_steps == 0 || req.n_samples == 0 {
        return Err(TrainError::Config("n_steps and n_samples must be at least 1".into()));
    }
    let scheduler = Scheduler::new(req.sigma)?;
    let src_ch = GraphChannels::encode(src);
    let mut states = vec![src_ch.clone(); req.n_samples];
    let task = direction.task_token();
    let h = 1.0 / req.n_steps as f64;

    let batch_of = |states: &[GraphChannels]| {
        let examples: Vec<Example> = states.iter().map(|g_t| Example { g_t, g_src: &src_ch, task }).collect();
        Batch::new(&examples, model.config.max_atoms)
    };
    let z_src = model.cached_source(&batch_of(&states)?)?;

    for k in 1..=req.n_steps {
        let t = match direction {
            Direction::Forward => (k as f64 * h).min(1.0),
            Direction::Reverse => (1.0 - k as f64 * h).max(0.0),
        };
        let st = scheduler.state(t)?;
        let batch = batch_of(&states)?;
        let mut tape = Tape::new(&model.params);
        let z = tape.constant(z_src.clone());
        let vars = model.forward_with_source(&mut tape, &batch, z)?;
        let mut step = ElementStep { st: &st, direction, h, probs: Vec::new(), v: Vec::new() };
        for (e, g) in states.iter_mut().enumerate() {
            let logits = GraphLogits::extract(&tape, &vars, &batch, e);
            advance(g, &src_ch, &logits, &mut step, rng)?;
        }
    }
    let side = match direction {
        Direction::Forward => Side::Product,
        Direction::Reverse => Side::Reactant,
    };
    Ok(states.iter().map(|g| g.decode(side)).collect())
}

pub fn sample_product<R: Rng + ?Sized>(
    model: &Model,
    g_minus: &ReactionGraph,
    n_steps: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<ReactionGraph, TrainError> {
    let req = SampleRequest { n_samples: 1, n_steps, sigma };
    Ok(sample(model, g_minus, Direction::Forward, &req, rng)?.remove(0))
}

pub fn sample_reactants<R: Rng + ?Sized>(
    model: &Model,
    g_plus: &ReactionGraph,
    n_steps: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<ReactionGraph, TrainError> {
    let req = SampleRequest { n_samples: 1, n_steps, sigma };
    Ok(sample(model, g_plus, Direction::Reverse, &req, rng)?.remove(0))
}

/// Canonical SMILES of a sampled graph, or `None` if it decodes to nothing or has an
/// atom over its valence limit.
pub fn prediction_smiles(g: &ReactionGraph) -> Option<String> {
    if g.overvalent_atoms() > 0 {
        return None;
    }
    graph_smiles(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::align_reaction;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model() -> Model {
        let cfg =
            ModelConfig { d_model: 16, n_enc_layers: 1, n_merge_layers: 1, n_dec_layers: 1, n_heads: 2, max_atoms: 80 };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn pair() -> crate::chemgraph::ReactionPair {
        align_reaction("[CH3:1][CH2:2][OH:3].[Br:4][Br:5]>>[CH3:1][CH2:2][O:3][Br:4]").unwrap()
    }

    #[test]
    fn samples_are_valid_graphs_of_source_size() {
        let (model, p) = (tiny_model(), pair());
        let req = SampleRequest { n_samples: 3, n_steps: 4, sigma: 0.0 };
        for (src, dir, side) in
            [(&p.reactants, Direction::Forward, Side::Product), (&p.product, Direction::Reverse, Side::Reactant)]
        {
            let out = sample(&model, src, dir, &req, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(out.len(), 3);
            for g in out {
                assert_eq!(g.n_atoms, src.n_atoms);
                assert_eq!(g.side, side);
                g.validate().unwrap();
            }
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let (model, p) = (tiny_model(), pair());
        let req = SampleRequest { n_samples: 4, n_steps: 3, sigma: 1.0 };
        let run = |seed| {
            sample(&model, &p.reactants, Direction::Forward, &req, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn batched_matches_single_sample_shapes() {
        let (model, p) = (tiny_model(), pair());
        let g = sample_product(&model, &p.reactants, 1, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(g.n_atoms, p.reactants.n_atoms);
        let r = sample_reactants(&model, &p.product, 1, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(r.n_atoms, p.product.n_atoms);
    }

    #[test]
    fn zero_steps_rejected() {
        let (model, p) = (tiny_model(), pair());
        let req = SampleRequest { n_samples: 1, n_steps: 0, sigma: 0.0 };
        assert!(sample(&model, &p.reactants, Direction::Forward, &req, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn prediction_smiles_drops_overvalent_graphs() {
        let p = pair();
        assert_eq!(prediction_smiles(&p.product).as_deref(), Some("CCOBr"));
        let mut bad = p.product.clone();
        bad.set_bond(0, 1, 3);
        bad.set_bond(0, 2, 3);
        assert_eq!(prediction_smiles(&bad), None);
        assert_eq!(prediction_smiles(&ReactionGraph::empty(3, Side::Product)), None);
    }
}
