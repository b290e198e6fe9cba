//! Perplexity, beam-search decoding, ROUGE-1/2/L and bootstrap intervals.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{Example, ExampleView, END, START};
use crate::decoder::{decoder_step, initial_state, DecoderState, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::model::Summarizer;
use crate::rng;
use crate::tensor::Graph;

/// `exp(Σ nll / Σ tokens)` from per-example `(nll_sum, tokens)` pairs.
pub fn pooled_perplexity(parts: &[(f64, usize)]) -> Result<f64> {
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    if tokens == 0 {
        return Err(Error::contract("perplexity over zero target tokens"));
    }
    let nll: f64 = parts.iter().map(|p| p.0).sum();
    Ok((nll / tokens as f64).exp())
}

/// Per-example summed NLL and token counts, teacher-forced.
pub fn nll_parts(model: &Summarizer, examples: &[Example]) -> Result<Vec<(f64, usize)>> {
    examples
        .par_iter()
        .map(|e| model.example_loss(&e.view()).map(|l| (l.nll_sum, l.tokens)))
        .collect()
}

pub fn perplexity(model: &Summarizer, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::contract("perplexity of an empty dataset"));
    }
    pooled_perplexity(&nll_parts(model, examples)?)
}

#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    /// Generated tokens, excluding START.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: DecoderState,
}

impl BeamHypothesis {
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }
}

/// Higher normalized score first; ties go to the lexicographically lower token sequence.
fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Indices of the `k` largest entries, ties broken toward the lower index.
fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let k = k.min(p.len());
    idx.select_nth_unstable_by(k - 1, |&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

/// Beam search over the extended vocabulary. Returns generated tokens without START/END.
pub fn beam_search(model: &Summarizer, ex: &ExampleView, beam: usize, max_tokens: usize) -> Result<Vec<usize>> {
    if beam == 0 {
        return Err(Error::contract("beam size must be positive"));
    }
    if ex.sentences.is_empty() {
        return Err(Error::contract("cannot decode an empty document"));
    }
    let mut g = Graph::inference();
    let doc = model.encode(&mut g, &ex.sentences)?;
    let src = model.source_memory(&mut g, &doc, &ex.source_ext, ex.ext_size)?;
    let state = initial_state(&mut g, &model.reg, &model.decoder, &src)?;
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..max_tokens {
        let mut candidates = Vec::with_capacity(live.len() * 2 * beam);
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(START);
            let step = decoder_step(
                &mut g,
                &model.reg,
                &model.emb,
                &model.attention,
                &model.decoder,
                &model.options,
                prev,
                &h.state,
                &src,
            )?;
            let dist = g.value(step.dist).data().to_vec();
            for id in top_k(&dist, 2 * beam) {
                let mut tokens = h.tokens.clone();
                tokens.push(id);
                candidates.push(BeamHypothesis {
                    tokens,
                    log_prob: h.log_prob + dist[id].max(PROB_FLOOR).ln(),
                    state: step.state,
                });
            }
        }
        candidates.sort_by(rank);
        live.clear();
        for c in candidates {
            if c.tokens.last() == Some(&END) {
                finished.push(c);
            } else {
                live.push(c);
            }
            if live.len() == beam || finished.len() >= beam {
                break;
            }
        }
        if finished.len() >= beam || live.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() { &mut live } else { &mut finished };
    pool.sort_by(rank);
    let mut best = pool[0].tokens.clone();
    if best.last() == Some(&END) {
        best.pop();
    }
    Ok(best)
}

/// Argmax decoding, lowest id on ties.
pub fn greedy_decode(model: &Summarizer, ex: &ExampleView, max_tokens: usize) -> Result<Vec<usize>> {
    let mut g = Graph::inference();
    let doc = model.encode(&mut g, &ex.sentences)?;
    let src = model.source_memory(&mut g, &doc, &ex.source_ext, ex.ext_size)?;
    let mut state = initial_state(&mut g, &model.reg, &model.decoder, &src)?;
    let mut out = Vec::new();
    let mut prev = START;
    for _ in 0..max_tokens {
        let step = decoder_step(
            &mut g,
            &model.reg,
            &model.emb,
            &model.attention,
            &model.decoder,
            &model.options,
            prev,
            &state,
            &src,
        )?;
        let next = top_k(g.value(step.dist).data(), 1)[0];
        if next == END {
            break;
        }
        out.push(next);
        prev = next;
        state = step.state;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = if hyp_total == 0 { 0.0 } else { overlap as f64 / hyp_total as f64 };
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: AsRef<str>>(reference: &[T], hypothesis: &[T], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be positive");
    let r = ngram_counts(reference, n);
    let h = ngram_counts(hypothesis, n);
    let overlap = h.iter().map(|(k, &c)| c.min(r.get(k).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, h.values().sum(), r.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> Prf {
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Prf::from_counts(lcs_len(&r, &h), h.len(), r.len())
}

pub fn rouge<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    RougeScore {
        rouge1: rouge_n(reference, hypothesis, 1),
        rouge2: rouge_n(reference, hypothesis, 2),
        rouge_l: rouge_l(reference, hypothesis),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Percentile bootstrap interval of the mean at `level` (e.g. 0.95).
pub fn bootstrap_ci(scores: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if scores.is_empty() || resamples == 0 {
        return Err(Error::contract("bootstrap needs scores and at least one resample"));
    }
    let mut r = rng::stream(seed, "bootstrap");
    let n = scores.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| scores[r.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok((at(tail), at(1.0 - tail)))
}
