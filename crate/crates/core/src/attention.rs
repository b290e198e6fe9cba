//! Word-level, sentence-level, and combined hierarchical attention with coverage.
//!
//! Scores are additive: `e_k = vᵀ tanh(W_h h_k + W_s s + w_c cov_k + b)` at the
//! word level and the same form without coverage at the sentence level. The
//! combined weight of token `k` is `β_k γ_{s(k)} / Σ_l β_l γ_{s(l)}`.

use crate::error::{Error, Result};
use crate::nn::uniform_tensor;
use crate::params::{ParamId, ParameterRegistry};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Scorer {
    pub w_h: ParamId,
    pub w_s: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    /// Coverage weight vector; word level only.
    pub w_c: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub word: Scorer,
    pub sentence: Scorer,
    pub attn_dim: usize,
}

/// Per-document projections of encoder states, reused across decode steps.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMemory {
    pub word_feats: Var,
    pub sent_feats: Var,
}

fn register_scorer(
    reg: &mut ParameterRegistry,
    prefix: &str,
    state_dim: usize,
    dec_dim: usize,
    attn_dim: usize,
    coverage: bool,
    seed: u64,
) -> Result<Scorer> {
    let mut p = |suffix: &str, shape: &[usize], fan_in: usize| {
        let name = format!("{prefix}.{suffix}");
        let t = uniform_tensor(seed, &name, shape, 1.0 / (fan_in as f64).sqrt());
        reg.register(&name, t, true)
    };
    Ok(Scorer {
        w_h: p("W_h", &[attn_dim, state_dim], state_dim)?,
        w_s: p("W_s", &[attn_dim, dec_dim], dec_dim)?,
        v: p("v", &[attn_dim], attn_dim)?,
        w_c: if coverage { Some(p("w_c", &[attn_dim], 1)?) } else { None },
        b: reg.register(&format!("{prefix}.b"), Tensor::zeros(&[attn_dim]), true)?,
    })
}

impl AttentionParams {
    pub fn register(reg: &mut ParameterRegistry, state_dim: usize, dec_dim: usize, attn_dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            word: register_scorer(reg, "attn.word", state_dim, dec_dim, attn_dim, true, seed)?,
            sentence: register_scorer(reg, "attn.sent", state_dim, dec_dim, attn_dim, false, seed)?,
            attn_dim,
        })
    }

    pub fn precompute(&self, g: &mut Graph, reg: &ParameterRegistry, word_states: Var, sentence_states: Var) -> Result<AttentionMemory> {
        let wh = g.param(reg, self.word.w_h);
        let word_feats = g.matmul_bt(word_states, wh)?;
        let sh = g.param(reg, self.sentence.w_h);
        let sent_feats = g.matmul_bt(sentence_states, sh)?;
        Ok(AttentionMemory { word_feats, sent_feats })
    }

    fn scores(
        &self,
        g: &mut Graph,
        reg: &ParameterRegistry,
        scorer: &Scorer,
        feats: Var,
        dec_state: Var,
        coverage: Option<Var>,
    ) -> Result<Var> {
        let ws = g.param(reg, scorer.w_s);
        let b = g.param(reg, scorer.b);
        let query = g.matvec(ws, dec_state)?;
        let query = g.add(query, b)?;
        let mut pre = g.add_row_broadcast(feats, query)?;
        if let (Some(cov), Some(wc)) = (coverage, scorer.w_c) {
            let wc = g.param(reg, wc);
            let cov_term = g.outer(cov, wc);
            pre = g.add(pre, cov_term)?;
        }
        let act = g.tanh(pre);
        let v = g.param(reg, scorer.v);
        g.matvec(act, v)
    }

    /// β over tokens, from precomputed word features.
    pub fn word_weights(
        &self,
        g: &mut Graph,
        reg: &ParameterRegistry,
        mem: &AttentionMemory,
        dec_state: Var,
        coverage: Option<Var>,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let e = self.scores(g, reg, &self.word, mem.word_feats, dec_state, coverage)?;
        g.softmax(e, mask)
    }

    /// γ over sentences, from precomputed sentence features.
    pub fn sentence_weights(&self, g: &mut Graph, reg: &ParameterRegistry, mem: &AttentionMemory, dec_state: Var) -> Result<Var> {
        let e = self.scores(g, reg, &self.sentence, mem.sent_feats, dec_state, None)?;
        g.softmax(e, None)
    }

    /// Word-level attention `β` directly from word states.
    pub fn word_attention(
        &self,
        g: &mut Graph,
        reg: &ParameterRegistry,
        word_states: Var,
        dec_state: Var,
        coverage: Option<Var>,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if g.value(word_states).shape().len() != 2 {
            return Err(Error::contract("word states must be a matrix"));
        }
        let wh = g.param(reg, self.word.w_h);
        let feats = g.matmul_bt(word_states, wh)?;
        let e = self.scores(g, reg, &self.word, feats, dec_state, coverage)?;
        g.softmax(e, mask)
    }

    /// Sentence-level attention `γ` directly from document-encoder states.
    pub fn sentence_attention(&self, g: &mut Graph, reg: &ParameterRegistry, sentence_states: Var, dec_state: Var) -> Result<Var> {
        let sh = g.param(reg, self.sentence.w_h);
        let feats = g.matmul_bt(sentence_states, sh)?;
        let e = self.scores(g, reg, &self.sentence, feats, dec_state, None)?;
        g.softmax(e, None)
    }
}

/// Combined token weights `α_k = β_k γ_{s(k)} / Σ_l β_l γ_{s(l)}`.
pub fn combine_attention(g: &mut Graph, beta: Var, gamma: Var, sentence_of_token: &[usize]) -> Result<Var> {
    if g.value(beta).len() != sentence_of_token.len() {
        return Err(Error::Dimension {
            op: "combine_attention",
            left: g.value(beta).shape().to_vec(),
            right: vec![sentence_of_token.len()],
        });
    }
    let gamma_tok = g.gather(gamma, sentence_of_token)?;
    let num = g.mul(beta, gamma_tok)?;
    g.normalize(num)
}

/// Value-level convenience wrapper over [`combine_attention`].
pub fn combine_values(beta: &[f64], gamma: &[f64], sentence_of_token: &[usize]) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let b = g.constant(Tensor::vector(beta.to_vec()));
    let gm = g.constant(Tensor::vector(gamma.to_vec()));
    let a = combine_attention(&mut g, b, gm, sentence_of_token)?;
    Ok(g.value(a).data().to_vec())
}

/// `c = Σ_k α_k · word_state_k`.
pub fn context_vector(g: &mut Graph, alpha: Var, word_states: Var) -> Result<Var> {
    g.vecmat(alpha, word_states)
}

/// `coverage' = coverage + α`.
pub fn update_coverage(g: &mut Graph, coverage: Var, alpha: Var) -> Result<Var> {
    g.add(coverage, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random_vector;

    fn zero_params(reg: &mut ParameterRegistry, state: usize, dec: usize, a: usize) -> AttentionParams {
        let p = AttentionParams::register(reg, state, dec, a, 0).unwrap();
        let ids: Vec<ParamId> = reg.iter().map(|(id, _)| id).collect();
        for id in ids {
            reg.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    #[test]
    fn zero_weights_give_uniform_attention() {
        let mut reg = ParameterRegistry::new();
        let p = zero_params(&mut reg, 4, 3, 5);
        let mut g = Graph::new();
        let ws = g.constant(Tensor::new(vec![4, 4], random_vector(1, "w", 16, -1.0, 1.0)).unwrap());
        let s = g.constant(Tensor::vector(vec![0.3, 0.1, -0.4]));
        let beta = p
            .word_attention(&mut g, &reg, ws, s, None, Some(&[true, true, false, true]))
            .unwrap();
        let third = 1.0 / 3.0;
        let b = g.value(beta).data();
        assert_eq!(b[2], 0.0);
        for k in [0, 1, 3] {
            assert!((b[k] - third).abs() < 1e-15);
        }
        let ss = g.constant(Tensor::new(vec![2, 4], random_vector(2, "s", 8, -1.0, 1.0)).unwrap());
        let gamma = p.sentence_attention(&mut g, &reg, ss, s).unwrap();
        assert_eq!(g.value(gamma).data(), &[0.5, 0.5]);
    }

    #[test]
    fn single_token_and_single_sentence() {
        let mut reg = ParameterRegistry::new();
        let p = AttentionParams::register(&mut reg, 4, 3, 5, 3).unwrap();
        let mut g = Graph::new();
        let ws = g.constant(Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let s = g.constant(Tensor::vector(vec![0.3, 0.1, -0.4]));
        let beta = p.word_attention(&mut g, &reg, ws, s, None, None).unwrap();
        assert_eq!(g.value(beta).data(), &[1.0]);
        let gamma = p.sentence_attention(&mut g, &reg, ws, s).unwrap();
        assert_eq!(g.value(gamma).data(), &[1.0]);
        let all_masked = p.word_attention(&mut g, &reg, ws, s, None, Some(&[false]));
        assert!(matches!(all_masked, Err(Error::Degenerate(_))));
    }

    #[test]
    fn sentence_attention_on_simplex() {
        let mut reg = ParameterRegistry::new();
        let p = AttentionParams::register(&mut reg, 6, 4, 5, 9).unwrap();
        for seed in 0..20 {
            let mut g = Graph::new();
            let m = 1 + seed as usize % 5;
            let ss = g.constant(Tensor::new(vec![m, 6], random_vector(seed, "ss", m * 6, -2.0, 2.0)).unwrap());
            let s = g.constant(Tensor::vector(random_vector(seed, "q", 4, -2.0, 2.0)));
            let gamma = p.sentence_attention(&mut g, &reg, ss, s).unwrap();
            let v = g.value(gamma).data();
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_hand_examples() {
        let a = combine_values(&[0.5, 0.5], &[0.8, 0.2], &[0, 1]).unwrap();
        assert!((a[0] - 0.8).abs() < 1e-15 && (a[1] - 0.2).abs() < 1e-15);
        let a = combine_values(&[0.25; 4], &[0.5, 0.5], &[0, 0, 1, 1]).unwrap();
        assert_eq!(a, vec![0.25; 4]);
        let beta = [0.1, 0.6, 0.3];
        let a = combine_values(&beta, &[1.0], &[0, 0, 0]).unwrap();
        for (x, y) in a.iter().zip(beta) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            combine_values(&[0.5, 0.5], &[0.0, 1.0], &[0, 0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn context_vector_cases() {
        let mut g = Graph::new();
        let ws = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap());
        let one_hot = g.constant(Tensor::vector(vec![0.0, 1.0]));
        let c = context_vector(&mut g, one_hot, ws).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, -4.0]);
        let mix = g.constant(Tensor::vector(vec![0.25, 0.75]));
        let c = context_vector(&mut g, mix, ws).unwrap();
        assert_eq!(g.value(c).data(), &[0.25 * 1.0 + 0.75 * 3.0, 0.25 * 2.0 - 0.75 * 4.0]);
        let same = g.constant(Tensor::matrix(&[vec![0.7, 0.1], vec![0.7, 0.1], vec![0.7, 0.1]]).unwrap());
        let uni = g.constant(Tensor::vector(vec![1.0 / 3.0; 3]));
        let c = context_vector(&mut g, uni, same).unwrap();
        assert!((g.value(c).data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn coverage_accumulates() {
        let mut g = Graph::new();
        let mut cov = g.constant(Tensor::zeros(&[4]));
        let alpha = g.constant(Tensor::vector(vec![0.25; 4]));
        cov = update_coverage(&mut g, cov, alpha).unwrap();
        assert_eq!(g.value(cov).data(), &[0.25; 4]);
        cov = update_coverage(&mut g, cov, alpha).unwrap();
        assert_eq!(g.value(cov).data(), &[0.5; 4]);
    }

    #[test]
    fn attention_gradchecks() {
        let (n, sd, dd, a) = (5, 4, 3, 3);
        let sot = [0, 0, 1, 1, 1];
        let mut reg = ParameterRegistry::new();
        let p = AttentionParams::register(&mut reg, sd, dd, a, 17).unwrap();
        for name in ["attn.word.b", "attn.sent.b"] {
            let id = reg.id(name).unwrap();
            reg.get_mut(id).value = Tensor::vector(random_vector(17, name, a, -0.5, 0.5));
        }
        let mut input = |name: &str, shape: &[usize], lo: f64, hi: f64| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape.to_vec(), random_vector(17, name, n, lo, hi)).unwrap();
            reg.register(name, t, true).unwrap()
        };
        let ws = input("word_states", &[n, sd], -1.0, 1.0);
        let ss = input("sentence_states", &[2, sd], -1.0, 1.0);
        let dec = input("dec", &[dd], -1.0, 1.0);
        let cov = input("cov", &[n], 0.0, 1.0);
        let proj = input("proj", &[n], -1.0, 1.0);
        let sproj = input("sproj", &[2], -1.0, 1.0);

        let pipeline = |g: &mut Graph, reg: &ParameterRegistry, which: usize| -> Result<Var> {
            let (ws, ss, dec, cov, proj, sproj) = (
                g.param(reg, ws),
                g.param(reg, ss),
                g.param(reg, dec),
                g.param(reg, cov),
                g.param(reg, proj),
                g.param(reg, sproj),
            );
            let beta = p.word_attention(g, reg, ws, dec, Some(cov), None)?;
            let gamma = p.sentence_attention(g, reg, ss, dec)?;
            match which {
                0 => g.dot(beta, proj),
                1 => g.dot(gamma, sproj),
                _ => {
                    let alpha = combine_attention(g, beta, gamma, &sot)?;
                    let c = context_vector(g, alpha, ws)?;
                    let sc = g.sum(c);
                    let d = g.dot(alpha, proj)?;
                    g.add(d, sc)
                }
            }
        };
        for which in 0..3 {
            let report = crate::tensor::gradcheck::grad_check_params(&reg, |g, r| pipeline(g, r, which), 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "stage {which}: max rel {}", report.max_rel_error);
        }
    }
}
