//! Unidirectional LSTM decoder with a pointer-generator output and coverage.
//!
//! The final distribution over the extended vocabulary is
//! `P(w) = p_gen · P_vocab(w) + (1 − p_gen) · Σ_{k: src_k = w} α_k`, where
//! `P_vocab` is zero on the per-example OOV slots `V, V+1, …`.

use crate::attention::{combine_attention, context_vector, update_coverage, AttentionMemory, AttentionParams};
use crate::data::UNK;
use crate::encoder::DocumentEncoding;
use crate::error::{Error, Result};
use crate::nn::{uniform_tensor, EmbeddingTable, Linear, LstmInit, LstmParams};
use crate::params::{ParamId, ParameterRegistry};
use crate::tensor::{Graph, Tensor, Var};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct PgenParams {
    pub w_c: ParamId,
    pub w_s: ParamId,
    pub w_x: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub lstm: LstmParams,
    pub init_h: Linear,
    pub init_c: Linear,
    /// Maps `[s_t; c_t]` into embedding space; logits use the shared embedding table.
    pub out_proj: Linear,
    pub out_bias: ParamId,
    pub pgen: PgenParams,
    pub hidden: usize,
    pub context_dim: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecoderOptions {
    /// Feed coverage into word attention and report the coverage loss.
    pub coverage: bool,
    /// Replace the learned generation probability with a constant.
    pub force_pgen: Option<f64>,
}

impl DecoderParams {
    pub fn register(
        reg: &mut ParameterRegistry,
        emb: &EmbeddingTable,
        context_dim: usize,
        hidden: usize,
        forget_bias: f64,
        seed: u64,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let lstm = LstmParams::register(
            reg,
            "dec.lstm",
            emb.dim + context_dim,
            hidden,
            LstmInit::Trainable { bound, forget_bias },
            true,
            seed,
        )?;
        let init_h = Linear::register(reg, "dec.init_h", context_dim, hidden, true, seed)?;
        let init_c = Linear::register(reg, "dec.init_c", context_dim, hidden, true, seed)?;
        let out_proj = Linear::register(reg, "dec.out_proj", hidden + context_dim, emb.dim, true, seed)?;
        let out_bias = reg.register("dec.out_bias", Tensor::zeros(&[emb.vocab_size]), true)?;
        let mut vec_param = |name: &str, n: usize| reg.register(name, uniform_tensor(seed, name, &[n], 1.0 / (n as f64).sqrt()), true);
        let pgen = PgenParams {
            w_c: vec_param("dec.pgen.w_c", context_dim)?,
            w_s: vec_param("dec.pgen.w_s", hidden)?,
            w_x: vec_param("dec.pgen.w_x", emb.dim)?,
            b: reg.register("dec.pgen.b", Tensor::scalar(0.0), true)?,
        };
        Ok(Self {
            lstm,
            init_h,
            init_c,
            out_proj,
            out_bias,
            pgen,
            hidden,
            context_dim,
        })
    }
}

/// `σ(w_cᵀ c_t + w_sᵀ s_t + w_xᵀ x_t + b)`.
pub fn compute_pgen(g: &mut Graph, reg: &ParameterRegistry, p: &PgenParams, context: Var, state: Var, input: Var) -> Result<Var> {
    let (wc, ws, wx, b) = (g.param(reg, p.w_c), g.param(reg, p.w_s), g.param(reg, p.w_x), g.param(reg, p.b));
    let a = g.dot(wc, context)?;
    let s = g.dot(ws, state)?;
    let x = g.dot(wx, input)?;
    let t = g.add(a, s)?;
    let t = g.add(t, x)?;
    let t = g.add(t, b)?;
    Ok(g.sigmoid(t))
}

/// Mixes the generation distribution with copy mass scattered onto source extended ids.
pub fn final_distribution(
    g: &mut Graph,
    p_gen: Var,
    vocab_dist: Var,
    alpha: Var,
    source_ext_ids: &[usize],
    ext_size: usize,
) -> Result<Var> {
    let v = g.value(vocab_dist).len();
    if ext_size < v {
        return Err(Error::contract(format!("extended vocabulary {ext_size} smaller than base {v}")));
    }
    let base_ids: Vec<usize> = (0..v).collect();
    let gen = g.scatter_add(vocab_dist, &base_ids, ext_size)?;
    let gen = g.scale_by(gen, p_gen)?;
    let copy = g.scatter_add(alpha, source_ext_ids, ext_size)?;
    let one_minus = g.affine(p_gen, -1.0, 1.0);
    let copy = g.scale_by(copy, one_minus)?;
    g.add(gen, copy)
}

/// Mean negative log-likelihood over unmasked steps, with probabilities floored at 1e-12.
pub fn nll_loss(g: &mut Graph, dists: &[Var], targets: &[usize], mask: &[bool]) -> Result<Var> {
    if dists.len() != targets.len() || mask.len() != targets.len() {
        return Err(Error::contract("nll_loss: distributions, targets and mask differ in length"));
    }
    let mut terms = Vec::new();
    for ((&d, &y), &m) in dists.iter().zip(targets).zip(mask) {
        if !m {
            continue;
        }
        let p = g.gather(d, &[y])?;
        terms.push(g.ln_floor(p, PROB_FLOOR));
    }
    if terms.is_empty() {
        return Err(Error::degenerate("nll_loss over zero valid steps"));
    }
    let n = terms.len() as f64;
    let all = g.concat(&terms);
    let s = g.sum(all);
    Ok(g.affine(s, -1.0 / n, 0.0))
}

/// `Σ_k min(α_k, coverage_k)`.
pub fn coverage_loss(g: &mut Graph, alpha: Var, coverage: Var) -> Result<Var> {
    let m = g.min(alpha, coverage)?;
    Ok(g.sum(m))
}

/// Encoded source document plus everything the decoder needs to copy from it.
pub struct SourceMemory<'a> {
    pub doc: &'a DocumentEncoding,
    pub attn: AttentionMemory,
    pub source_ext_ids: &'a [usize],
    pub ext_size: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Context vector of the previous step (zeros before the first step).
    pub context: Var,
    /// Σ of all previous α.
    pub coverage: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    pub state: DecoderState,
    pub p_gen: Var,
    pub dist: Var,
    pub alpha: Var,
    /// Coverage before this step's α was added.
    pub prev_coverage: Var,
}

/// Decoder state from learned projections of the document-encoder final state.
pub fn initial_state(g: &mut Graph, reg: &ParameterRegistry, dec: &DecoderParams, src: &SourceMemory) -> Result<DecoderState> {
    let h = dec.init_h.forward(g, reg, src.doc.final_state)?;
    let c = dec.init_c.forward(g, reg, src.doc.final_state)?;
    let context = g.constant(Tensor::zeros(&[dec.context_dim]));
    let n = src.doc.sentence_of_token.len();
    let coverage = g.constant(Tensor::zeros(&[n]));
    Ok(DecoderState { h, c, context, coverage })
}

/// One teacher-forced or free-running decoder step.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step(
    g: &mut Graph,
    reg: &ParameterRegistry,
    emb: &EmbeddingTable,
    attn: &AttentionParams,
    dec: &DecoderParams,
    opts: &DecoderOptions,
    prev_token: usize,
    state: &DecoderState,
    src: &SourceMemory,
) -> Result<DecoderStep> {
    let in_id = if prev_token < emb.vocab_size { prev_token } else { UNK };
    let x = emb.embed_one(g, reg, in_id)?;
    let lstm_in = g.concat(&[x, state.context]);
    let lstm = dec.lstm.bind(g, reg);
    let (h, c) = crate::nn::lstm_cell(g, &lstm, lstm_in, state.h, state.c)?;

    let cov_feature = opts.coverage.then_some(state.coverage);
    let beta = attn.word_weights(g, reg, &src.attn, h, cov_feature, None)?;
    let gamma = attn.sentence_weights(g, reg, &src.attn, h)?;
    let alpha = combine_attention(g, beta, gamma, &src.doc.sentence_of_token)?;
    let context = context_vector(g, alpha, src.doc.word_states)?;

    let hc = g.concat(&[h, context]);
    let o = dec.out_proj.forward(g, reg, hc)?;
    let table = g.param(reg, emb.id);
    let logits = g.matvec(table, o)?;
    let bias = g.param(reg, dec.out_bias);
    let logits = g.add(logits, bias)?;
    let vocab_dist = g.softmax(logits, None)?;

    let p_gen = match opts.force_pgen {
        Some(p) => g.constant(Tensor::scalar(p)),
        None => compute_pgen(g, reg, &dec.pgen, context, h, x)?,
    };
    let dist = final_distribution(g, p_gen, vocab_dist, alpha, src.source_ext_ids, src.ext_size)?;
    let coverage = update_coverage(g, state.coverage, alpha)?;
    Ok(DecoderStep {
        state: DecoderState { h, c, context, coverage },
        p_gen,
        dist,
        alpha,
        prev_coverage: state.coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random_vector;
    use crate::tensor::gradcheck::grad_check;

    fn dist_of(p_gen: f64, vocab: &[f64], alpha: &[f64], ids: &[usize], ext: usize) -> Vec<f64> {
        let mut g = Graph::new();
        let p = g.constant(Tensor::scalar(p_gen));
        let v = g.constant(Tensor::vector(vocab.to_vec()));
        let a = g.constant(Tensor::vector(alpha.to_vec()));
        let d = final_distribution(&mut g, p, v, a, ids, ext).unwrap();
        g.value(d).data().to_vec()
    }

    #[test]
    fn pgen_cases() {
        let mut reg = ParameterRegistry::new();
        let mut z = |n: &str, len| reg.register(n, Tensor::zeros(&[len]), true).unwrap();
        let p = PgenParams {
            w_c: z("c", 3),
            w_s: z("s", 2),
            w_x: z("x", 2),
            b: z("b", 1),
        };
        let run = |reg: &ParameterRegistry| {
            let mut g = Graph::new();
            let c = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
            let s = g.constant(Tensor::vector(vec![0.3, 0.3]));
            let x = g.constant(Tensor::vector(vec![4.0, 1.0]));
            let out = compute_pgen(&mut g, reg, &p, c, s, x).unwrap();
            g.value(out).item()
        };
        assert_eq!(run(&reg), 0.5);
        reg.get_mut(p.b).value = Tensor::scalar(3f64.ln());
        assert!((run(&reg) - 0.75).abs() < 1e-15);
        reg.get_mut(p.b).value = Tensor::scalar(800.0);
        assert_eq!(run(&reg), 1.0);
    }

    #[test]
    fn final_distribution_cases() {
        // p_gen = 1: the vocabulary distribution, zero on OOV slots.
        let d = dist_of(1.0, &[0.2, 0.8], &[1.0], &[2], 3);
        assert_eq!(d, vec![0.2, 0.8, 0.0]);
        // p_gen = 0 with one-hot attention: pure copy.
        let d = dist_of(0.0, &[0.2, 0.8], &[0.0, 1.0], &[0, 2], 3);
        assert_eq!(d, vec![0.0, 0.0, 1.0]);
        // Vocabulary {a: 0.6, b: 0.4}; all attention on the source token "b".
        let d = dist_of(0.5, &[0.6, 0.4], &[1.0], &[1], 2);
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn nll_cases() {
        let mut g = Graph::new();
        let sure = g.constant(Tensor::vector(vec![0.0, 1.0]));
        let l = nll_loss(&mut g, &[sure, sure], &[1, 1], &[true, true]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let half = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let l = nll_loss(&mut g, &[half], &[0], &[true]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let junk = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = nll_loss(&mut g, &[half, junk], &[0, 1], &[true, false]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let l = nll_loss(&mut g, &[junk], &[1], &[true]).unwrap();
        assert!((g.value(l).item() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn coverage_loss_cases() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.6, 0.4]));
        let zero = g.constant(Tensor::zeros(&[2]));
        let l = coverage_loss(&mut g, a, zero).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let c = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let l = coverage_loss(&mut g, a, c).unwrap();
        assert!((g.value(l).item() - 0.9).abs() < 1e-15);
        let l = coverage_loss(&mut g, a, a).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pgen_and_distribution_gradcheck() {
        let ids = [3usize, 1, 3, 4];
        let inputs = vec![
            Tensor::vector(random_vector(5, "wc", 3, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "ws", 2, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "wx", 2, -1.0, 1.0)),
            Tensor::scalar(0.2),
            Tensor::vector(random_vector(5, "c", 3, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "s", 2, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "x", 2, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "logits", 4, -1.0, 1.0)),
            Tensor::vector(random_vector(5, "scores", 4, -1.0, 1.0)),
        ];
        let report = grad_check(
            |g, v| {
                let a = g.dot(v[0], v[4])?;
                let s = g.dot(v[1], v[5])?;
                let x = g.dot(v[2], v[6])?;
                let t = g.add(a, s)?;
                let t = g.add(t, x)?;
                let t = g.add(t, v[3])?;
                let p = g.sigmoid(t);
                let vocab = g.softmax(v[7], None)?;
                let alpha = g.softmax(v[8], None)?;
                let d1 = final_distribution(g, p, vocab, alpha, &ids, 5)?;
                let d2 = final_distribution(g, p, vocab, alpha, &ids, 5)?;
                nll_loss(g, &[d1, d2], &[4, 2], &[true, true])
            },
            &inputs,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel {}", report.max_rel_error);
    }
}
