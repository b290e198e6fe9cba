//! Hierarchical sentence/document encoders and their initialization variants.
//!
//! Each variant is an [`EncoderStrategy`] registered by name in a
//! [`StrategyRegistry`]; the run configuration selects one with
//! `encoder.variant`. Every non-trained variant registers its recurrence
//! parameters as frozen, so the optimizer can never move them.

mod esn;
mod strategies;

pub use esn::{esn_run, spectral_radius, EsnParams};
pub use strategies::{EchoStateStrategy, IdentityStrategy, RandomUniformStrategy, TrainedStrategy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bilstm, EmbeddingTable, LstmParams};
use crate::params::ParameterRegistry;
use crate::tensor::{Graph, Var};

/// Parameter-name prefix of the sentence encoder.
pub const SENTENCE_GROUP: &str = "enc.sent";
/// Parameter-name prefix of the document encoder.
pub const DOCUMENT_GROUP: &str = "enc.doc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantKind {
    Trained,
    RandomUniform,
    Identity,
    EchoState,
}

impl VariantKind {
    pub fn is_frozen(self) -> bool {
        self != VariantKind::Trained
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDims {
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderOptions {
    /// Forget-gate bias of trainable LSTMs.
    pub forget_bias: f64,
    /// Rescale ESN recurrent weights to this spectral radius; `None` keeps raw N(0,1).
    pub esn_spectral_radius: Option<f64>,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            forget_bias: 1.0,
            esn_spectral_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DocumentRecurrence {
    BiLstm { fwd: LstmParams, bwd: LstmParams },
    EchoState(EsnParams),
}

/// Registered parameters of a sentence encoder plus a document encoder.
#[derive(Debug, Clone, Copy)]
pub struct HierarchicalEncoder {
    pub kind: VariantKind,
    pub hidden: usize,
    pub sent_fwd: LstmParams,
    pub sent_bwd: LstmParams,
    pub document: DocumentRecurrence,
}

/// Output of the hierarchical encoder for one document.
#[derive(Debug, Clone)]
pub struct DocumentEncoding {
    /// `[N_d × 2d]` per-token sentence-encoder states, sentences concatenated.
    pub word_states: Var,
    /// `[M × 2d]` sentence encodings `h^(s)` fed to the document encoder.
    pub sentence_encodings: Var,
    /// `[M × 2d]` document-encoder states.
    pub sentence_states: Var,
    /// Sentence index of every token.
    pub sentence_of_token: Vec<usize>,
    /// `[2d]` document-encoder final state.
    pub final_state: Var,
}

/// An initialization rule for the hierarchical encoder.
pub trait EncoderStrategy: Send + Sync {
    /// Config name, e.g. `"random"`.
    fn name(&self) -> &'static str;
    fn kind(&self) -> VariantKind;
    fn build(&self, reg: &mut ParameterRegistry, dims: EncoderDims, opts: &EncoderOptions, seed: u64) -> Result<HierarchicalEncoder>;
}

/// Name-indexed collection of encoder strategies.
pub struct StrategyRegistry {
    entries: Vec<Box<dyn EncoderStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// `trained`, `random`, `identity`, `esn`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(TrainedStrategy));
        r.register(Box::new(RandomUniformStrategy));
        r.register(Box::new(IdentityStrategy));
        r.register(Box::new(EchoStateStrategy));
        r
    }

    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, s: Box<dyn EncoderStrategy>) {
        self.entries.retain(|e| e.name() != s.name());
        self.entries.push(s);
    }

    pub fn get(&self, name: &str) -> Option<&dyn EncoderStrategy> {
        self.entries.iter().find(|e| e.name() == name).map(|b| b.as_ref())
    }

    pub fn resolve(&self, name: &str) -> Result<&dyn EncoderStrategy> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("unknown encoder.variant {name:?} (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

impl HierarchicalEncoder {
    /// Sentence encoder over one sentence's embeddings `[N × dim]`:
    /// per-token states `[N × 2d]` and the sentence encoding `[2d]`.
    pub fn encode_sentence(&self, g: &mut Graph, reg: &ParameterRegistry, xs: Var) -> Result<(Var, Var)> {
        let f = self.sent_fwd.bind(g, reg);
        let b = self.sent_bwd.bind(g, reg);
        let out = bilstm(g, &f, &b, xs, None)?;
        Ok((out.states, out.final_state))
    }

    /// Document encoder over sentence encodings `[M × 2d]`: states `[M × 2d]` and final `[2d]`.
    pub fn encode_document(&self, g: &mut Graph, reg: &ParameterRegistry, sentences: Var) -> Result<(Var, Var)> {
        match &self.document {
            DocumentRecurrence::BiLstm { fwd, bwd } => {
                let f = fwd.bind(g, reg);
                let b = bwd.bind(g, reg);
                let out = bilstm(g, &f, &b, sentences, None)?;
                Ok((out.states, out.final_state))
            }
            DocumentRecurrence::EchoState(p) => esn_run(g, reg, p, sentences),
        }
    }

    /// Encodes a document given as sentences of (encoder-view) token ids.
    pub fn encode(
        &self,
        g: &mut Graph,
        reg: &ParameterRegistry,
        emb: &EmbeddingTable,
        sentences: &[Vec<usize>],
    ) -> Result<DocumentEncoding> {
        if sentences.is_empty() {
            return Err(Error::contract("document has no sentences"));
        }
        let mut token_rows = Vec::new();
        let mut sent_encs = Vec::with_capacity(sentences.len());
        let mut sentence_of_token = Vec::new();
        for (s, ids) in sentences.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::contract(format!("sentence {s} is empty")));
            }
            let xs = emb.embed(g, reg, ids)?;
            let (states, h_s) = self.encode_sentence(g, reg, xs)?;
            for t in 0..ids.len() {
                token_rows.push(g.row(states, t)?);
                sentence_of_token.push(s);
            }
            sent_encs.push(h_s);
        }
        let word_states = g.stack_rows(&token_rows)?;
        let sentence_encodings = g.stack_rows(&sent_encs)?;
        let (sentence_states, final_state) = self.encode_document(g, reg, sentence_encodings)?;
        Ok(DocumentEncoding {
            word_states,
            sentence_encodings,
            sentence_states,
            sentence_of_token,
            final_state,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}
