//! The full summarizer: shared embeddings, hierarchical encoder, attention and
//! pointer-generator decoder, plus the per-example teacher-forced loss.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::data::ExampleView;
use crate::decoder::{coverage_loss, decoder_step, initial_state, nll_loss, DecoderOptions, DecoderParams, SourceMemory};
use crate::encoder::{DocumentEncoding, EncoderDims, EncoderOptions, HierarchicalEncoder, StrategyRegistry, VariantKind};
use crate::error::{Error, Result};
use crate::nn::EmbeddingTable;
use crate::params::{ParamId, ParameterRegistry};
use crate::tensor::{Graph, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: String,
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_dim: usize,
    pub coverage: bool,
    pub coverage_weight: f64,
    pub forget_bias: f64,
    pub esn_spectral_radius: Option<f64>,
    pub force_pgen: Option<f64>,
    pub seed: u64,
}

pub struct Summarizer {
    pub config: ModelConfig,
    pub kind: VariantKind,
    pub reg: ParameterRegistry,
    pub emb: EmbeddingTable,
    pub encoder: HierarchicalEncoder,
    pub attention: AttentionParams,
    pub decoder: DecoderParams,
    pub options: DecoderOptions,
}

/// Scalar loss components for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// `nll + λ · coverage`.
    pub total: f64,
    /// Mean NLL per target token.
    pub nll: f64,
    /// Summed NLL over target tokens.
    pub nll_sum: f64,
    /// Mean coverage loss per step.
    pub coverage: f64,
    pub tokens: usize,
}

struct LossVars {
    total: Var,
    nll: Var,
    coverage: Option<Var>,
    tokens: usize,
}

impl Summarizer {
    pub fn new(config: &ModelConfig, strategies: &StrategyRegistry) -> Result<Self> {
        let strategy = strategies.resolve(&config.variant)?;
        let seed = config.seed;
        let mut reg = ParameterRegistry::new();
        let emb = EmbeddingTable::register(&mut reg, "emb", config.vocab_size, config.emb_dim, seed)?;
        let encoder = strategy.build(
            &mut reg,
            EncoderDims {
                input_dim: config.emb_dim,
                hidden: config.enc_hidden,
            },
            &EncoderOptions {
                forget_bias: config.forget_bias,
                esn_spectral_radius: config.esn_spectral_radius,
            },
            seed,
        )?;
        let state_dim = encoder.output_dim();
        let attention = AttentionParams::register(&mut reg, state_dim, config.dec_hidden, config.attn_dim, seed)?;
        let decoder = DecoderParams::register(&mut reg, &emb, state_dim, config.dec_hidden, config.forget_bias, seed)?;
        Ok(Self {
            config: config.clone(),
            kind: strategy.kind(),
            reg,
            emb,
            encoder,
            attention,
            decoder,
            options: DecoderOptions {
                coverage: config.coverage,
                force_pgen: config.force_pgen,
            },
        })
    }

    pub fn encode(&self, g: &mut Graph, sentences: &[Vec<usize>]) -> Result<DocumentEncoding> {
        self.encoder.encode(g, &self.reg, &self.emb, sentences)
    }

    pub fn source_memory<'a>(
        &self,
        g: &mut Graph,
        doc: &'a DocumentEncoding,
        source_ext_ids: &'a [usize],
        ext_size: usize,
    ) -> Result<SourceMemory<'a>> {
        if source_ext_ids.len() != doc.sentence_of_token.len() {
            return Err(Error::contract("copy ids do not match the number of source tokens"));
        }
        let attn = self.attention.precompute(g, &self.reg, doc.word_states, doc.sentence_states)?;
        Ok(SourceMemory {
            doc,
            attn,
            source_ext_ids,
            ext_size,
        })
    }

    fn loss_vars(&self, g: &mut Graph, ex: &ExampleView) -> Result<LossVars> {
        if ex.target.len() != ex.target_mask.len() {
            return Err(Error::contract("target and mask lengths differ"));
        }
        let doc = self.encode(g, &ex.sentences)?;
        let src = self.source_memory(g, &doc, &ex.source_ext, ex.ext_size)?;
        let mut state = initial_state(g, &self.reg, &self.decoder, &src)?;
        let mut dists = Vec::new();
        let mut targets = Vec::new();
        let mut cov_terms = Vec::new();
        for t in 0..ex.target.len().saturating_sub(1) {
            if !ex.target_mask[t + 1] {
                continue;
            }
            let step = decoder_step(
                g,
                &self.reg,
                &self.emb,
                &self.attention,
                &self.decoder,
                &self.options,
                ex.target[t],
                &state,
                &src,
            )?;
            if self.options.coverage {
                cov_terms.push(coverage_loss(g, step.alpha, step.prev_coverage)?);
            }
            dists.push(step.dist);
            targets.push(ex.target[t + 1]);
            state = step.state;
        }
        let mask = vec![true; targets.len()];
        let nll = nll_loss(g, &dists, &targets, &mask)?;
        let n = targets.len();
        let (total, coverage) = if cov_terms.is_empty() {
            (nll, None)
        } else {
            let all = g.concat(&cov_terms);
            let s = g.sum(all);
            let cov = g.affine(s, 1.0 / n as f64, 0.0);
            let weighted = g.affine(cov, self.config.coverage_weight, 0.0);
            (g.add(nll, weighted)?, Some(cov))
        };
        Ok(LossVars {
            total,
            nll,
            coverage,
            tokens: n,
        })
    }

    fn loss_value(g: &Graph, v: &LossVars) -> LossValue {
        let nll = g.value(v.nll).item();
        LossValue {
            total: g.value(v.total).item(),
            nll,
            nll_sum: nll * v.tokens as f64,
            coverage: v.coverage.map_or(0.0, |c| g.value(c).item()),
            tokens: v.tokens,
        }
    }

    /// Teacher-forced loss without building gradient state.
    pub fn example_loss(&self, ex: &ExampleView) -> Result<LossValue> {
        let mut g = Graph::inference();
        let v = self.loss_vars(&mut g, ex)?;
        Ok(Self::loss_value(&g, &v))
    }

    /// Loss and gradients of `total` with respect to every trainable parameter.
    pub fn example_gradients(&self, ex: &ExampleView) -> Result<(LossValue, Vec<(ParamId, Vec<f64>)>)> {
        let mut g = Graph::new();
        let v = self.loss_vars(&mut g, ex)?;
        g.backward(v.total)?;
        let grads = g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
        Ok((Self::loss_value(&g, &v), grads))
    }

    /// Builds the training loss on `g` so callers can differentiate it themselves.
    pub fn loss_graph(&self, g: &mut Graph, ex: &ExampleView) -> Result<Var> {
        Ok(self.loss_vars(g, ex)?.total)
    }
}
