//! Embedding, linear, and LSTM building blocks.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterRegistry};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

pub fn uniform_tensor(seed: u64, name: &str, shape: &[usize], bound: f64) -> Tensor {
    let mut r = rng::stream(seed, name);
    let mut t = Tensor::zeros(shape);
    if bound > 0.0 {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        t.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut r));
    }
    t
}

pub fn normal_tensor(seed: u64, name: &str, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, name);
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r));
    t
}

/// Token embeddings; always trainable.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn register(reg: &mut ParameterRegistry, name: &str, vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        let bound = 1.0 / (dim as f64).sqrt();
        let id = reg.register(name, uniform_tensor(seed, name, &[vocab_size, dim], bound), true)?;
        Ok(Self { id, vocab_size, dim })
    }

    /// Row-stacked embeddings for `ids`, shape `[len × dim]`.
    pub fn embed(&self, g: &mut Graph, reg: &ParameterRegistry, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let table = g.param(reg, self.id);
        g.gather_rows(table, ids)
    }

    pub fn embed_one(&self, g: &mut Graph, reg: &ParameterRegistry, id: usize) -> Result<Var> {
        let rows = self.embed(g, reg, &[id])?;
        g.row(rows, 0)
    }
}

/// Affine map `W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn register(reg: &mut ParameterRegistry, name: &str, in_dim: usize, out_dim: usize, bias: bool, seed: u64) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let wname = format!("{name}.w");
        let w = reg.register(&wname, uniform_tensor(seed, &wname, &[out_dim, in_dim], bound), true)?;
        let b = if bias {
            Some(reg.register(&format!("{name}.b"), Tensor::zeros(&[out_dim]), true)?)
        } else {
            None
        };
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, reg: &ParameterRegistry, x: Var) -> Result<Var> {
        let w = g.param(reg, self.w);
        let y = g.matvec(w, x)?;
        match self.b {
            Some(b) => {
                let b = g.param(reg, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// How a freshly registered LSTM is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LstmInit {
    /// Weights `U(−bound, bound)`, biases zero except the forget gate.
    Trainable { bound: f64, forget_bias: f64 },
    /// Weights and biases all `U(−bound, bound)`.
    UniformAll { bound: f64 },
    /// Every gate block is the (rectangular) identity; biases zero.
    Identity,
}

/// Gate weights stacked as four `d`-row blocks in `i, f, g, o` order.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

fn identity_blocks(rows_per_block: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(&[4 * rows_per_block, cols]);
    for blk in 0..4 {
        for i in 0..rows_per_block.min(cols) {
            t.data_mut()[(blk * rows_per_block + i) * cols + i] = 1.0;
        }
    }
    t
}

impl LstmParams {
    pub fn register(
        reg: &mut ParameterRegistry,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init: LstmInit,
        trainable: bool,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::contract("LSTM dimensions must be positive"));
        }
        let d = hidden;
        let names = [format!("{prefix}.W"), format!("{prefix}.U"), format!("{prefix}.b")];
        let (w, u, b) = match init {
            LstmInit::Trainable { bound, forget_bias } => {
                let mut b = Tensor::zeros(&[4 * d]);
                b.data_mut()[d..2 * d].iter_mut().for_each(|v| *v = forget_bias);
                (
                    uniform_tensor(seed, &names[0], &[4 * d, input_dim], bound),
                    uniform_tensor(seed, &names[1], &[4 * d, d], bound),
                    b,
                )
            }
            LstmInit::UniformAll { bound } => (
                uniform_tensor(seed, &names[0], &[4 * d, input_dim], bound),
                uniform_tensor(seed, &names[1], &[4 * d, d], bound),
                uniform_tensor(seed, &names[2], &[4 * d], bound),
            ),
            LstmInit::Identity => (identity_blocks(d, input_dim), identity_blocks(d, d), Tensor::zeros(&[4 * d])),
        };
        Ok(Self {
            w: reg.register(&names[0], w, trainable)?,
            u: reg.register(&names[1], u, trainable)?,
            b: reg.register(&names[2], b, trainable)?,
            input_dim,
            hidden,
        })
    }

    pub fn param_count(&self) -> usize {
        4 * (self.input_dim * self.hidden + self.hidden * self.hidden + self.hidden)
    }

    pub fn bind(&self, g: &mut Graph, reg: &ParameterRegistry) -> LstmVars {
        LstmVars {
            w: g.param(reg, self.w),
            u: g.param(reg, self.u),
            b: g.param(reg, self.b),
            hidden: self.hidden,
        }
    }

    /// The `d × input_dim` input block of one gate.
    pub fn input_block(&self, reg: &ParameterRegistry, gate: Gate) -> Tensor {
        block(&reg.get(self.w).value, gate, self.hidden)
    }

    /// The `d × d` recurrent block of one gate.
    pub fn recurrent_block(&self, reg: &ParameterRegistry, gate: Gate) -> Tensor {
        block(&reg.get(self.u).value, gate, self.hidden)
    }

    pub fn bias_block(&self, reg: &ParameterRegistry, gate: Gate) -> Vec<f64> {
        let d = self.hidden;
        let k = gate as usize;
        reg.get(self.b).value.data()[k * d..(k + 1) * d].to_vec()
    }
}

fn block(t: &Tensor, gate: Gate, d: usize) -> Tensor {
    let c = t.cols();
    let k = gate as usize;
    Tensor::new(vec![d, c], t.data()[k * d * c..(k + 1) * d * c].to_vec()).expect("gate block")
}

/// One LSTM step: returns `(h', c')`.
pub fn lstm_cell(g: &mut Graph, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let d = p.hidden;
    if g.value(h).len() != d || g.value(c).len() != d {
        return Err(Error::Dimension {
            op: "lstm_cell",
            left: vec![d],
            right: g.value(h).shape().to_vec(),
        });
    }
    let wx = g.matvec(p.w, x)?;
    let uh = g.matvec(p.u, h)?;
    let pre = g.add(wx, uh)?;
    let pre = g.add(pre, p.b)?;
    let i = g.slice(pre, 0, d)?;
    let f = g.slice(pre, d, d)?;
    let gg = g.slice(pre, 2 * d, d)?;
    let o = g.slice(pre, 3 * d, d)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let gg = g.tanh(gg);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    /// `[T × 2d]`: forward and backward hidden states per step.
    pub states: Var,
    /// `[2d]`: last forward state and first backward state over valid steps.
    pub final_state: Var,
}

/// Bidirectional LSTM over the rows of `xs`. Masked-out steps carry state through unchanged.
pub fn bilstm(g: &mut Graph, fwd: &LstmVars, bwd: &LstmVars, xs: Var, mask: Option<&[bool]>) -> Result<BiLstmOutput> {
    let t_len = g.value(xs).rows();
    if let Some(m) = mask {
        if m.len() != t_len {
            return Err(Error::Dimension {
                op: "bilstm mask",
                left: vec![t_len],
                right: vec![m.len()],
            });
        }
    }
    let valid = |t: usize| mask.is_none_or(|m| m[t]);
    if g.value(xs).shape().len() != 2 || !(0..t_len).any(valid) {
        return Err(Error::contract("bilstm over an empty sequence"));
    }
    let rows: Vec<Option<Var>> = (0..t_len)
        .map(|t| if valid(t) { g.row(xs, t).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;

    let run = |g: &mut Graph, p: &LstmVars, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Var>> {
        let zero = g.constant(Tensor::zeros(&[p.hidden]));
        let (mut h, mut c) = (zero, zero);
        let mut out = vec![zero; t_len];
        for t in order {
            if let Some(x) = rows[t] {
                (h, c) = lstm_cell(g, p, x, h, c)?;
            }
            out[t] = h;
        }
        Ok(out)
    };
    let hf = run(g, fwd, &mut (0..t_len))?;
    let hb = run(g, bwd, &mut (0..t_len).rev())?;

    let step_rows: Vec<Var> = (0..t_len).map(|t| g.concat(&[hf[t], hb[t]])).collect();
    let states = g.stack_rows(&step_rows)?;
    let last = (0..t_len).rev().find(|&t| valid(t)).expect("non-empty");
    let first = (0..t_len).find(|&t| valid(t)).expect("non-empty");
    let final_state = g.concat(&[hf[last], hb[first]]);
    Ok(BiLstmOutput { states, final_state })
}

/// Draws a value in `[lo, hi)` from a named stream; used for ad-hoc synthetic instances.
pub fn random_vector(seed: u64, name: &str, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, name);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}
