//! The graph-to-graph network φ(G_t, G_src, task): two molecule encoders whose
//! outputs are summed, a task-conditioned merge stack, and a decoder with one head
//! per channel plus a bilinear bond head.


use rand::Rng;
use thiserror::Error;

use crate::chemgraph::{GraphChannels, AROMATIC_CLASSES, ATOM_CLASSES, BOND_CLASSES, CHARGE_CLASSES, CHARGE_OFFSET};
use crate::net::{CrossLayer, EncoderLayer, Init, Linear, NetError, ParamId, ParamStore, Tape, Tensor, Var};

/// Class counts of the four channels: atom type, aromatic flag, charge, bond.
pub const VOCAB_SIZES: [usize; 4] = [ATOM_CLASSES, AROMATIC_CLASSES, CHARGE_CLASSES, BOND_CLASSES];
pub const CHANNEL_NAMES: [&str; 4] = ["atom", "aromatic", "charge", "bond"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("batch error: {0}")]
    Batch(String),
    #[error("{0} atoms exceeds the model limit of {1}")]
    TooManyAtoms(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_merge_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub max_atoms: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_model: 256, n_enc_layers: 6, n_merge_layers: 6, n_dec_layers: 12, n_heads: 8, max_atoms: 80 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_enc_layers == 0 || self.n_merge_layers == 0 || self.n_dec_layers == 0 {
            return Err(ModelError::Config("every stack needs at least one layer".into()));
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible into {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.max_atoms == 0 {
            return Err(ModelError::Config("max_atoms must be positive".into()));
        }
        Ok(())
    }
}

/// Task token: 0 predicts products, 1 predicts reactants.
pub const TASK_FORWARD: usize = 0;
pub const TASK_RETRO: usize = 1;

/// One network input: the intermediate graph, the conditioning graph, and the task.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub g_t: &'a GraphChannels,
    pub g_src: &'a GraphChannels,
    pub task: usize,
}

/// Examples padded to a common atom count, flattened row-major over (example, atom).
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub n: usize,
    /// Real atoms per example; padding is always appended after them.
    pub n_valid: Vec<usize>,
    pub mask: Vec<bool>,
    pub task: Vec<usize>,
    pub t: PaddedChannels,
    pub src: PaddedChannels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaddedChannels {
    pub atom: Vec<usize>,
    pub aromatic: Vec<usize>,
    pub charge: Vec<usize>,
    /// (R + I) per example, n×n, raw bond classes off the diagonal.
    pub mix: Vec<f64>,
}

impl PaddedChannels {
    fn new(graphs: &[&GraphChannels], n: usize) -> PaddedChannels {
        let b = graphs.len();
        let mut out = PaddedChannels {
            atom: vec![ATOM_CLASSES - 1; b * n],
            aromatic: vec![0; b * n],
            charge: vec![CHARGE_OFFSET as usize; b * n],
            mix: vec![0.0; b * n * n],
        };
        for (e, g) in graphs.iter().enumerate() {
            let m = g.n_atoms();
            out.atom[e * n..e * n + m].copy_from_slice(&g.atom);
            out.aromatic[e * n..e * n + m].copy_from_slice(&g.aromatic);
            out.charge[e * n..e * n + m].copy_from_slice(&g.charge);
            let mix = &mut out.mix[e * n * n..(e + 1) * n * n];
            for i in 0..m {
                for j in 0..m {
                    mix[i * n + j] = g.bond[i * m + j] as f64;
                }
            }
            for i in 0..n {
                mix[i * n + i] += 1.0;
            }
        }
        out
    }
}

fn check_channels(g: &GraphChannels) -> Result<(), ModelError> {
    let n = g.n_atoms();
    let ok = g.aromatic.len() == n
        && g.charge.len() == n
        && g.bond.len() == n * n
        && g.atom.iter().all(|&a| a < ATOM_CLASSES)
        && g.aromatic.iter().all(|&a| a < AROMATIC_CLASSES)
        && g.charge.iter().all(|&c| c < CHARGE_CLASSES)
        && g.bond.iter().all(|&b| b < BOND_CLASSES);
    if ok {
        Ok(())
    } else {
        Err(ModelError::Batch("channel shape or class out of range".into()))
    }
}

impl Batch {
    pub fn new(examples: &[Example], max_atoms: usize) -> Result<Batch, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::Batch("empty batch".into()));
        }
        let mut n = 0;
        for ex in examples {
            let m = ex.g_t.n_atoms();
            if m == 0 {
                return Err(ModelError::Batch("graph without atoms".into()));
            }
            if ex.g_src.n_atoms() != m {
                return Err(ModelError::Batch(format!("G_t has {m} atoms, source {}", ex.g_src.n_atoms())));
            }
            if m > max_atoms {
                return Err(ModelError::TooManyAtoms(m, max_atoms));
            }
            if ex.task > 1 {
                return Err(ModelError::Batch(format!("task token {} not in {{0, 1}}", ex.task)));
            }
            check_channels(ex.g_t)?;
            check_channels(ex.g_src)?;
            n = n.max(m);
        }
        let n_valid: Vec<usize> = examples.iter().map(|e| e.g_t.n_atoms()).collect();
        let mask = n_valid.iter().flat_map(|&m| (0..n).map(move |i| i < m)).collect();
        let t: Vec<&GraphChannels> = examples.iter().map(|e| e.g_t).collect();
        let src: Vec<&GraphChannels> = examples.iter().map(|e| e.g_src).collect();
        Ok(Batch {
            size: examples.len(),
            n,
            n_valid,
            mask,
            task: examples.iter().map(|e| e.task).collect(),
            t: PaddedChannels::new(&t, n),
            src: PaddedChannels::new(&src, n),
        })
    }
}

/// Logit variables on a tape: atom/aromatic/charge are (B·n)×K, bond is (B·n·n)×4.
#[derive(Clone, Copy, Debug)]
pub struct LogitVars {
    pub atom: Var,
    pub aromatic: Var,
    pub charge: Var,
    pub bond: Var,
}

impl LogitVars {
    pub fn channels(&self) -> [Var; 4] {
        [self.atom, self.aromatic, self.charge, self.bond]
    }
}

/// Logits of one graph: atom N×73, aromatic N×2, charge N×13, bond N×N×4, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLogits {
    pub n: usize,
    pub atom: Vec<f64>,
    pub aromatic: Vec<f64>,
    pub charge: Vec<f64>,
    pub bond: Vec<f64>,
}

impl GraphLogits {
    /// Slices example `e` (with its real atom count) out of batched logits.
    pub fn extract(tape: &Tape, vars: &LogitVars, batch: &Batch, e: usize) -> GraphLogits {
        let (n, m) = (batch.n, batch.n_valid[e]);
        let rows = |v: Var, k: usize| tape.value(v)[e * n * k..(e * n + m) * k].to_vec();
        let bond_all = tape.value(vars.bond);
        let mut bond = Vec::with_capacity(m * m * BOND_CLASSES);
        for i in 0..m {
            let start = ((e * n + i) * n) * BOND_CLASSES;
            bond.extend_from_slice(&bond_all[start..start + m * BOND_CLASSES]);
        }
        GraphLogits {
            n: m,
            atom: rows(vars.atom, ATOM_CLASSES),
            aromatic: rows(vars.aromatic, AROMATIC_CLASSES),
            charge: rows(vars.charge, CHARGE_CLASSES),
            bond,
        }
    }
}

/// Embeddings, message passing over R + I, and a self-attention stack.
#[derive(Clone, Debug)]
pub struct MolEncoder {
    pub atom_emb: ParamId,
    pub aromatic_emb: ParamId,
    pub charge_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
}

impl MolEncoder {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<MolEncoder, ModelError> {
        let d = cfg.d_model;
        let mut emb =
            |what: &str, k: usize| store.add(&format!("{name}.{what}_emb"), vec![k, d], Init::Normal(0.02), rng);
        let atom_emb = emb("atom", ATOM_CLASSES)?;
        let aromatic_emb = emb("aromatic", AROMATIC_CLASSES)?;
        let charge_emb = emb("charge", CHARGE_CLASSES)?;
        let layers = (0..cfg.n_enc_layers)
            .map(|l| EncoderLayer::new(store, &format!("{name}.layers.{l}"), d, cfg.n_heads, rng))
            .collect::<Result<_, _>>()?;
        Ok(MolEncoder { atom_emb, aromatic_emb, charge_emb, layers })
    }

    /// z_msg = (R + I)·(E_atom + E_aromatic + E_charge), before the transformer stack.
    pub fn message(&self, tape: &mut Tape, g: &PaddedChannels, n: usize) -> Result<Var, ModelError> {
        let a = tape.param(self.atom_emb);
        let a = tape.embedding(a, &g.atom)?;
        let r = tape.param(self.aromatic_emb);
        let r = tape.embedding(r, &g.aromatic)?;
        let c = tape.param(self.charge_emb);
        let c = tape.embedding(c, &g.charge)?;
        let z = tape.add(a, r)?;
        let z = tape.add(z, c)?;
        Ok(tape.block_mix(z, &g.mix, n)?)
    }

    pub fn forward(&self, tape: &mut Tape, g: &PaddedChannels, batch: &Batch) -> Result<Var, ModelError> {
        let mut z = self.message(tape, g, batch.n)?;
        for layer in &self.layers {
            z = layer.forward(tape, z, batch.size, batch.n, Some(&batch.mask))?;
        }
        Ok(z)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub enc_t: MolEncoder,
    pub enc_src: MolEncoder,
    pub task_emb: ParamId,
    pub merge: Vec<CrossLayer>,
    pub dec: Vec<EncoderLayer>,
    pub head_atom: Linear,
    pub head_aromatic: Linear,
    pub head_charge: Linear,
    pub bond_query: Linear,
    pub bond_key: Linear,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let h = config.n_heads;
        let mut s = ParamStore::new();
        let enc_t = MolEncoder::new(&mut s, "enc_t", &config, rng)?;
        let enc_src = MolEncoder::new(&mut s, "enc_src", &config, rng)?;
        let task_emb = s.add("task_emb", vec![2, d], Init::Normal(0.02), rng)?;
        let merge = (0..config.n_merge_layers)
            .map(|l| CrossLayer::new(&mut s, &format!("merge.{l}"), d, h, rng))
            .collect::<Result<_, _>>()?;
        let dec = (0..config.n_dec_layers)
            .map(|l| EncoderLayer::new(&mut s, &format!("dec.{l}"), d, h, rng))
            .collect::<Result<_, _>>()?;
        // Small head weights start every channel near uniform.
        let head = Init::Normal(0.02);
        let head_atom = Linear::with_init(&mut s, "head.atom", d, ATOM_CLASSES, head, rng)?;
        let head_aromatic = Linear::with_init(&mut s, "head.aromatic", d, AROMATIC_CLASSES, head, rng)?;
        let head_charge = Linear::with_init(&mut s, "head.charge", d, CHARGE_CLASSES, head, rng)?;
        let bond_query = Linear::new(&mut s, "head.bond_query", d, BOND_CLASSES * d, rng)?;
        let bond_key = Linear::new(&mut s, "head.bond_key", d, BOND_CLASSES * d, rng)?;
        Ok(Model {
            config,
            params: s,
            enc_t,
            enc_src,
            task_emb,
            merge,
            dec,
            head_atom,
            head_aromatic,
            head_charge,
            bond_query,
            bond_key,
        })
    }

    /// Source-graph encoding, reusable across sampling steps via [`Model::forward_with_source`].
    pub fn encode_source(&self, tape: &mut Tape, batch: &Batch) -> Result<Var, ModelError> {
        self.enc_src.forward(tape, &batch.src, batch)
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<LogitVars, ModelError> {
        let z_src = self.encode_source(tape, batch)?;
        self.forward_with_source(tape, batch, z_src)
    }

    /// Forward pass given an already-encoded source (e.g. a cached constant).
    pub fn forward_with_source(&self, tape: &mut Tape, batch: &Batch, z_src: Var) -> Result<LogitVars, ModelError> {
        let (b, n) = (batch.size, batch.n);
        let mask = Some(&batch.mask[..]);
        let z_t = self.enc_t.forward(tape, &batch.t, batch)?;
        let mut z = tape.add(z_t, z_src)?;
        let table = tape.param(self.task_emb);
        let task = tape.embedding(table, &batch.task)?;
        for layer in &self.merge {
            z = layer.forward(tape, task, z, b, n, mask)?;
        }
        for layer in &self.dec {
            z = layer.forward(tape, z, b, n, mask)?;
        }
        let q = self.bond_query.forward(tape, z)?;
        let k = self.bond_key.forward(tape, z)?;
        Ok(LogitVars {
            atom: self.head_atom.forward(tape, z)?,
            aromatic: self.head_aromatic.forward(tape, z)?,
            charge: self.head_charge.forward(tape, z)?,
            bond: tape.bond_logits(q, k, n, BOND_CLASSES)?,
        })
    }

    /// Encodes the batch sources once, returning values for reuse on later tapes.
    pub fn cached_source(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new(&self.params);
        let z = self.encode_source(&mut tape, batch)?;
        Ok(tape.tensor(z))
    }

    /// Logits of a single (G_t, G_src, task) input.
    pub fn forward_graph(
        &self,
        g_t: &GraphChannels,
        g_src: &GraphChannels,
        task: usize,
    ) -> Result<GraphLogits, ModelError> {
        let batch = Batch::new(&[Example { g_t, g_src, task }], self.config.max_atoms)?;
        let mut tape = Tape::new(&self.params);
        let vars = self.forward(&mut tape, &batch)?;
        Ok(GraphLogits::extract(&tape, &vars, &batch, 0))
    }
}

/// Recorded loss terms: the total and each channel's batch-mean contribution.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub channels: [Var; 4],
}

/// Cross-entropy averaged per example over real atoms (atom-level channels) or over
/// real off-diagonal atom pairs (bonds); the four channel means are summed and then
/// averaged over the batch.
pub fn masked_channel_loss(
    tape: &mut Tape,
    logits: &LogitVars,
    target: &[&GraphChannels],
    batch: &Batch,
) -> Result<LossVars, ModelError> {
    if target.len() != batch.size {
        return Err(ModelError::Batch(format!("{} targets for {} examples", target.len(), batch.size)));
    }
    if batch.n_valid.iter().all(|&m| m == 0) {
        return Err(ModelError::Batch("empty mask".into()));
    }
    let (b, n) = (batch.size, batch.n);
    let inv_b = 1.0 / b as f64;
    let mut atom_t = vec![vec![0usize; b * n]; 3];
    let mut atom_w = vec![0.0; b * n];
    let mut bond_t = vec![0usize; b * n * n];
    let mut bond_w = vec![0.0; b * n * n];
    for (e, g) in target.iter().enumerate() {
        let m = batch.n_valid[e];
        if g.n_atoms() != m {
            return Err(ModelError::Batch(format!("target has {} atoms, input {m}", g.n_atoms())));
        }
        for i in 0..m {
            atom_t[0][e * n + i] = g.atom[i];
            atom_t[1][e * n + i] = g.aromatic[i];
            atom_t[2][e * n + i] = g.charge[i];
            atom_w[e * n + i] = inv_b / m as f64;
        }
        if m > 1 {
            let w = inv_b / (m * (m - 1)) as f64;
            for i in 0..m {
                for j in (0..m).filter(|&j| j != i) {
                    bond_t[(e * n + i) * n + j] = g.bond[i * m + j];
                    bond_w[(e * n + i) * n + j] = w;
                }
            }
        }
    }
    let atom = tape.cross_entropy(logits.atom, &atom_t[0], &atom_w)?;
    let aromatic = tape.cross_entropy(logits.aromatic, &atom_t[1], &atom_w)?;
    let charge = tape.cross_entropy(logits.charge, &atom_t[2], &atom_w)?;
    let bond = tape.cross_entropy(logits.bond, &bond_t, &bond_w)?;
    let total = tape.add(atom, aromatic)?;
    let total = tape.add(total, charge)?;
    let total = tape.add(total, bond)?;
    Ok(LossVars { total, channels: [atom, aromatic, charge, bond] })
}
