//! Layers built from tape operations. Each layer struct only stores the ids of
//! its parameters, so one set of weights can be replayed on many tapes.

use rand::Rng;

use super::{NdError, ParamId, ParamStore, Tape, Var};

/// `x · W (+ b)`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var, NdError> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// `relu(x · W1) · W2`.
pub fn ffn(tape: &mut Tape, x: Var, w1: Var, w2: Var) -> Result<Var, NdError> {
    let h = tape.matmul(x, w1)?;
    let h = tape.relu(h);
    tape.matmul(h, w2)
}

pub fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var, NdError> {
    tape.layer_norm(x, gain, bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, NdError> {
        let w = store.add_uniform(format!("{name}.w"), input, output, rng)?;
        let b = if bias {
            // Biases share the fan-in bound of their weight.
            let bound = 1.0 / (input as f64).sqrt();
            let data = (0..output).map(|_| rng.gen_range(-bound..=bound)).collect();
            Some(store.add(format!("{name}.b"), super::Tensor::row_vector(data))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NdError> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        linear(tape, x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, NdError> {
        let gain = store.add(format!("{name}.gain"), super::Tensor::filled(1, width, 1.0))?;
        let bias = store.add(format!("{name}.bias"), super::Tensor::zeros(1, width))?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NdError> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Bias-free two-layer perceptron with a ReLU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ffn {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl Ffn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NdError> {
        let w1 = store.add_uniform(format!("{name}.w1"), width, hidden, rng)?;
        let w2 = store.add_uniform(format!("{name}.w2"), hidden, width, rng)?;
        Ok(Ffn { w1, w2 })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NdError> {
        let w1 = tape.param(store, self.w1);
        let w2 = tape.param(store, self.w2);
        ffn(tape, x, w1, w2)
    }
}

/// Multi-head attention with bias-free query, key, value and output maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mha {
    pub heads: usize,
    pub width: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl Mha {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NdError> {
        check_heads(width, heads)?;
        Ok(Mha {
            heads,
            width,
            wq: store.add_uniform(format!("{name}.wq"), width, width, rng)?,
            wk: store.add_uniform(format!("{name}.wk"), width, width, rng)?,
            wv: store.add_uniform(format!("{name}.wv"), width, width, rng)?,
            wo: store.add_uniform(format!("{name}.wo"), width, width, rng)?,
        })
    }

    /// Projects a key/value source once so it can be attended repeatedly.
    pub fn project_kv(&self, tape: &mut Tape, store: &ParamStore, kv: Var) -> Result<(Var, Var), NdError> {
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        Ok((tape.matmul(kv, wk)?, tape.matmul(kv, wv)?))
    }

    /// Attention of the raw queries `q` over already projected keys and
    /// values. `mask` is row-major `rows(q) x rows(k)`; `false` hides a key.
    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, NdError> {
        let wq = tape.param(store, self.wq);
        let q = tape.matmul(q, wq)?;
        let out = attention(tape, q, k, v, self.heads, mask)?;
        let wo = tape.param(store, self.wo);
        tape.matmul(out, wo)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: Var,
        kv: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, NdError> {
        let (k, v) = self.project_kv(tape, store, kv)?;
        self.attend(tape, store, q, k, v, mask)
    }
}

fn check_heads(width: usize, heads: usize) -> Result<(), NdError> {
    if heads == 0 || width % heads != 0 {
        return Err(NdError::Config(format!(
            "embedding width {width} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Scaled dot-product attention split across `heads` column blocks of the
/// already projected `q`, `k`, `v`; the per-head outputs are concatenated.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var, NdError> {
    let width = tape.value(q).cols();
    check_heads(width, heads)?;
    if tape.value(k).cols() != width || tape.value(v).cols() != width {
        return Err(NdError::Shape("query, key and value widths differ".into()));
    }
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dk, dk)?,
                tape.slice_cols(k, h * dk, dk)?,
                tape.slice_cols(v, h * dk, dk)?,
            )
        };
        let s = tape.matmul_nt(qh, kh)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax_rows(s, mask)?;
        outs.push(tape.matmul(a, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}
