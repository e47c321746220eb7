use rand::Rng;

use super::params::{Init, ParamId, ParamStore};
use super::tape::{AttentionShape, Tape, Var};
use super::NetError;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Linear, NetError> {
        Linear::with_init(store, name, d_in, d_out, Init::FanIn(d_in), rng)
    }

    pub fn with_init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Linear, NetError> {
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), vec![d_in, d_out], init, rng)?,
            bias: store.add(&format!("{name}.bias"), vec![d_out], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Result<LayerNorm, NetError> {
        Ok(LayerNorm {
            gain: store.add(&format!("{name}.gain"), vec![d], Init::Ones, rng)?,
            bias: store.add(&format!("{name}.bias"), vec![d], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Post-norm feed-forward sublayer: LN(x + W₂·gelu(W₁·x)), inner width 4D.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub norm: LayerNorm,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Result<FeedForward, NetError> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, 4 * d, rng)?,
            down: Linear::new(store, &format!("{name}.down"), 4 * d, d, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let h = self.up.forward(tape, x)?;
        let h = tape.gelu(h);
        let h = self.down.forward(tape, h)?;
        let r = tape.add(x, h)?;
        self.norm.forward(tape, r)
    }
}

/// Multi-head attention with query, key, value and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<MultiHeadAttention, NetError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NetError::Shape { op: "attention heads", a: vec![d], b: vec![heads] });
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d, d, rng)?,
            heads,
        })
    }

    /// `xq` holds batch·nq rows, `xkv` batch·nk rows.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        xq: Var,
        xkv: Var,
        batch: usize,
        nq: usize,
        nk: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<Var, NetError> {
        let q = self.query.forward(tape, xq)?;
        let k = self.key.forward(tape, xkv)?;
        let v = self.value.forward(tape, xkv)?;
        let shape = AttentionShape { batch, nq, nk, heads: self.heads, key_mask };
        let a = tape.attention(q, k, v, &shape)?;
        self.output.forward(tape, a)
    }
}

/// Post-norm transformer layer: x ← LN(x + SelfAttn(x)); x ← FFN(x).
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<EncoderLayer, NetError> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, rng)?,
        })
    }

    /// `x` holds batch·n rows; `mask` marks real (non-padding) atoms.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        batch: usize,
        n: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var, NetError> {
        if n == 0 {
            return Err(NetError::Empty("self_attention"));
        }
        let a = self.attn.forward(tape, x, x, batch, n, n, mask)?;
        let r = tape.add(x, a)?;
        let h = self.norm.forward(tape, r)?;
        self.ffn.forward(tape, h)
    }
}

/// Task-conditioned block: FFN(LN(broadcast(CrossAttn(task, z)) + z)).
///
/// The single task row attends over the atoms; its 1×D context is added to every
/// atom row of the same example.
#[derive(Clone, Debug)]
pub struct CrossLayer {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub ffn: FeedForward,
}

impl CrossLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<CrossLayer, NetError> {
        Ok(CrossLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, rng)?,
        })
    }

    /// `task` is batch×D, `z` is batch·n×D.
    pub fn forward(
        &self,
        tape: &mut Tape,
        task: Var,
        z: Var,
        batch: usize,
        n: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var, NetError> {
        let ctx = self.attn.forward(tape, task, z, batch, 1, n, mask)?;
        let r = tape.add_group_rows(z, ctx, n)?;
        let h = self.norm.forward(tape, r)?;
        self.ffn.forward(tape, h)
    }
}
