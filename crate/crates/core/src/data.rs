//! Corpus files, vocabulary, extended-vocabulary encoding, batching and synthetic corpora.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const END: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// One corpus record: pre-split article sentences and the reference abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub article: Vec<String>,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
}

/// Whitespace tokens, lowercased.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<RawExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, examples: &[RawExample]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex).expect("corpus records serialize");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_ranked(ranked: Vec<(String, u64)>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED.len()];
        for (t, c) in ranked {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// `token<TAB>count` per line in rank order; reserved entries are implied.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts).skip(RESERVED.len()) {
            s.push_str(&format!("{t}\t{c}\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses the vocabulary file format from a string.
    pub fn from_tsv(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut ranked = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (t, c) = line.split_once('\t').ok_or_else(|| parse_err("expected token<TAB>count".into()))?;
            let c = c.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
            ranked.push((t.to_string(), c));
        }
        Ok(Self::from_ranked(ranked))
    }
}

/// The `cap − 4` most frequent tokens (ties lexicographic) after the reserved ids.
pub fn build_vocab(corpus: &[RawExample], cap: usize) -> Result<Vocabulary> {
    if cap < RESERVED.len() {
        return Err(Error::Config(format!(
            "vocabulary cap {cap} below the {} reserved ids",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for ex in corpus {
        for tok in ex.article.iter().flat_map(|s| tokenize(s)).chain(tokenize(&ex.abstract_text)) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().filter(|(t, _)| !RESERVED.contains(&t.as_str())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap - RESERVED.len());
    Ok(Vocabulary::from_ranked(ranked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_doc_tokens: usize,
    pub max_summary_tokens: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_doc_tokens: 400,
            max_summary_tokens: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Encoder view: OOV tokens are UNK.
    pub sentences: Vec<Vec<usize>>,
    /// Copy view, same shape: OOV tokens get ids `V, V+1, …` in first-occurrence order.
    pub source_ext: Vec<Vec<usize>>,
    pub oovs: Vec<String>,
    /// `START y_1 … y_T END` in extended ids.
    pub target: Vec<usize>,
    pub base_vocab: usize,
}

impl Example {
    pub fn source_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn ext_size(&self) -> usize {
        self.base_vocab + self.oovs.len()
    }

    pub fn view(&self) -> ExampleView {
        ExampleView {
            sentences: self.sentences.clone(),
            source_ext: self.source_ext.concat(),
            ext_size: self.ext_size(),
            target_mask: vec![true; self.target.len()],
            target: self.target.clone(),
        }
    }
}

/// What the model consumes for one example. `target_mask[t]` marks real tokens of `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleView {
    pub sentences: Vec<Vec<usize>>,
    pub source_ext: Vec<usize>,
    pub ext_size: usize,
    pub target: Vec<usize>,
    pub target_mask: Vec<bool>,
}

/// Keeps whole sentences up to the budget, then hard-cuts the next one to what is left.
fn truncate_sentences(sentences: Vec<Vec<String>>, budget: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut used = 0;
    for s in sentences {
        if used + s.len() <= budget {
            used += s.len();
            out.push(s);
        } else {
            if used < budget {
                out.push(s[..budget - used].to_vec());
            }
            break;
        }
    }
    out
}

pub fn encode_example(article: &[String], abstract_text: &str, vocab: &Vocabulary, limits: Limits) -> Result<Example> {
    let sentences: Vec<Vec<String>> = article.iter().map(|s| tokenize(s)).filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::contract("article has no tokens"));
    }
    let sentences = truncate_sentences(sentences, limits.max_doc_tokens);
    let v = vocab.len();
    let mut oovs: Vec<String> = Vec::new();
    let mut enc = Vec::with_capacity(sentences.len());
    let mut ext = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let mut e = Vec::with_capacity(s.len());
        let mut x = Vec::with_capacity(s.len());
        for tok in s {
            match vocab.id(tok) {
                Some(id) => {
                    e.push(id);
                    x.push(id);
                }
                None => {
                    let k = oovs.iter().position(|o| o == tok).unwrap_or_else(|| {
                        oovs.push(tok.clone());
                        oovs.len() - 1
                    });
                    e.push(UNK);
                    x.push(v + k);
                }
            }
        }
        enc.push(e);
        ext.push(x);
    }
    let mut target = vec![START];
    for tok in tokenize(abstract_text).into_iter().take(limits.max_summary_tokens) {
        let id = vocab
            .id(&tok)
            .or_else(|| oovs.iter().position(|o| *o == tok).map(|k| v + k))
            .unwrap_or(UNK);
        target.push(id);
    }
    target.push(END);
    Ok(Example {
        sentences: enc,
        source_ext: ext,
        oovs,
        target,
        base_vocab: v,
    })
}

/// Maps extended ids back to strings, restoring OOVs from the example's list.
pub fn decode_tokens(ids: &[usize], vocab: &Vocabulary, oovs: &[String]) -> Vec<String> {
    ids.iter()
        .map(|&id| match vocab.token(id) {
            Some(t) => t.to_string(),
            None => oovs.get(id - vocab.len()).cloned().unwrap_or_else(|| RESERVED[UNK].to_string()),
        })
        .collect()
}

pub fn encode_corpus(raw: &[RawExample], vocab: &Vocabulary, limits: Limits) -> Result<Vec<Example>> {
    raw.iter()
        .map(|r| encode_example(&r.article, &r.abstract_text, vocab, limits))
        .collect()
}

/// Padded batch. Token arrays are `[B × S × L]`, sentence masks `[B × S]`, targets `[B × T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub max_sentences: usize,
    pub max_sentence_len: usize,
    pub max_target: usize,
    pub tokens: Vec<usize>,
    pub source_ext: Vec<usize>,
    pub token_mask: Vec<bool>,
    pub sentence_mask: Vec<bool>,
    pub target: Vec<usize>,
    pub target_mask: Vec<bool>,
    pub ext_sizes: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[Example], indices: &[usize]) -> Self {
        let rows: Vec<&Example> = indices.iter().map(|&i| &examples[i]).collect();
        let s = rows.iter().map(|e| e.sentences.len()).max().unwrap_or(0);
        let l = rows.iter().flat_map(|e| e.sentences.iter().map(Vec::len)).max().unwrap_or(0);
        let t = rows.iter().map(|e| e.target.len()).max().unwrap_or(0);
        let b = rows.len();
        let mut batch = Batch {
            indices: indices.to_vec(),
            max_sentences: s,
            max_sentence_len: l,
            max_target: t,
            tokens: vec![PAD; b * s * l],
            source_ext: vec![PAD; b * s * l],
            token_mask: vec![false; b * s * l],
            sentence_mask: vec![false; b * s],
            target: vec![PAD; b * t],
            target_mask: vec![false; b * t],
            ext_sizes: rows.iter().map(|e| e.ext_size()).collect(),
        };
        for (r, ex) in rows.iter().enumerate() {
            for (j, (sent, ext)) in ex.sentences.iter().zip(&ex.source_ext).enumerate() {
                batch.sentence_mask[r * s + j] = true;
                for (k, (&tok, &x)) in sent.iter().zip(ext).enumerate() {
                    let at = (r * s + j) * l + k;
                    batch.tokens[at] = tok;
                    batch.source_ext[at] = x;
                    batch.token_mask[at] = true;
                }
            }
            for (k, &y) in ex.target.iter().enumerate() {
                batch.target[r * t + k] = y;
                batch.target_mask[r * t + k] = true;
            }
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Recovers row `r` from the padded arrays; the target keeps its padding and mask.
    pub fn example_view(&self, r: usize) -> ExampleView {
        let (s, l, t) = (self.max_sentences, self.max_sentence_len, self.max_target);
        let mut sentences = Vec::new();
        let mut source_ext = Vec::new();
        for j in 0..s {
            if !self.sentence_mask[r * s + j] {
                continue;
            }
            let base = (r * s + j) * l;
            let sent: Vec<usize> = (0..l)
                .filter(|k| self.token_mask[base + k])
                .map(|k| self.tokens[base + k])
                .collect();
            source_ext.extend((0..l).filter(|k| self.token_mask[base + k]).map(|k| self.source_ext[base + k]));
            sentences.push(sent);
        }
        ExampleView {
            sentences,
            source_ext,
            ext_size: self.ext_sizes[r],
            target: self.target[r * t..(r + 1) * t].to_vec(),
            target_mask: self.target_mask[r * t..(r + 1) * t].to_vec(),
        }
    }
}

/// Seeded shuffle, then length sort inside windows of `8 × batch_size` before chunking.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::stream(seed, "batches"));
    let mut batches = Vec::new();
    for window in order.chunks(8 * batch_size) {
        let mut w = window.to_vec();
        w.sort_by_key(|&i| examples[i].source_len());
        for chunk in w.chunks(batch_size) {
            batches.push(Batch::from_examples(examples, chunk));
        }
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    Lead1,
    KeywordCopy,
}

impl std::str::FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lead1" => Ok(Self::Lead1),
            "keyword-copy" => Ok(Self::KeywordCopy),
            other => Err(Error::Config(format!("unknown synthetic task {other:?} (lead1, keyword-copy)"))),
        }
    }
}

fn regular_word(i: usize) -> String {
    format!("w{i}")
}

/// Generates `n` examples. Regular words come from a pool of `vocab_size − 4` tokens so a
/// vocabulary of that cap covers them; keyword-copy markers come from a far larger pool
/// and each appears at most a handful of times.
pub fn synth_corpus(task: SynthTask, n: usize, vocab_size: usize, seed: u64) -> Vec<RawExample> {
    let pool = vocab_size.saturating_sub(RESERVED.len()).max(1);
    let mut r = rng::stream(seed, "synth");
    (0..n)
        .map(|_| {
            let n_sent = r.random_range(3..=6);
            let mut article: Vec<Vec<String>> = (0..n_sent)
                .map(|_| {
                    let len = r.random_range(3..=6);
                    (0..len).map(|_| regular_word(r.random_range(0..pool))).collect()
                })
                .collect();
            let abstract_tokens = match task {
                SynthTask::Lead1 => article[0].clone(),
                SynthTask::KeywordCopy => {
                    let k = r.random_range(2..=3);
                    let markers: Vec<String> = (0..k).map(|_| format!("k{:06}", r.random_range(0..1_000_000))).collect();
                    // Markers land in document order at random positions.
                    let total: usize = article.iter().map(Vec::len).sum();
                    let mut slots: Vec<usize> = (0..total).collect();
                    slots.shuffle(&mut r);
                    let mut slots = slots[..k].to_vec();
                    slots.sort_unstable();
                    for (m, &slot) in markers.iter().zip(&slots).rev() {
                        let (mut j, mut pos) = (0, slot);
                        while pos > article[j].len() - 1 {
                            pos -= article[j].len();
                            j += 1;
                        }
                        article[j].insert(pos, m.clone());
                    }
                    markers
                }
            };
            RawExample {
                article: article.iter().map(|s| s.join(" ")).collect(),
                abstract_text: abstract_tokens.join(" "),
            }
        })
        .collect()
}

/// Train, validation and test splits of one generated corpus: `n` training
/// examples and `max(n/10, 1)` each held out.
pub fn synth_splits(task: SynthTask, n: usize, vocab_size: usize, seed: u64) -> [Vec<RawExample>; 3] {
    let held = (n / 10).max(1);
    let mut all = synth_corpus(task, n + 2 * held, vocab_size, seed);
    let test = all.split_off(n + held);
    let val = all.split_off(n);
    [all, val, test]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(article: &[&str], abs: &str) -> RawExample {
        RawExample {
            article: article.iter().map(|s| s.to_string()).collect(),
            abstract_text: abs.to_string(),
        }
    }

    #[test]
    fn vocab_frequency_and_ties() {
        let v = build_vocab(&[raw(&["a a b"], "")], 6).unwrap();
        assert_eq!((v.id("a"), v.id("b"), v.len()), (Some(4), Some(5), 6));
        assert_eq!(v.token(2), Some("<s>"));
        let v = build_vocab(&[raw(&["b a"], "")], 10).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (Some(4), Some(5)));
        let v = build_vocab(&[raw(&["c c c a a b"], "")], 5).unwrap();
        assert_eq!(v.id("b"), None);
        let ex = encode_example(&["b".into()], "", &v, Limits::default()).unwrap();
        assert_eq!(ex.sentences, vec![vec![UNK]]);
        assert!(build_vocab(&[], 10).is_err());
        assert!(build_vocab(&[raw(&["a"], "")], 3).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&[raw(&["x y y z z z"], "z")], 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "z\t4\ny\t2\nx\t1\n");
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    /// Vocabulary where `w{i}` gets id `4 + i`.
    fn vocab_of_size(n: usize) -> Vocabulary {
        let words: Vec<String> = (0..n - 4).flat_map(|i| vec![regular_word(i); n - i]).collect();
        build_vocab(&[raw(&[&words.join(" ")], "")], n).unwrap()
    }

    #[test]
    fn oov_extended_ids() {
        let v = vocab_of_size(50);
        let ex = encode_example(&["w1 qux w2".into(), "zap qux".into()], "qux w1 zap nope", &v, Limits::default()).unwrap();
        assert_eq!(ex.sentences, vec![vec![5, UNK, 6], vec![UNK, UNK]]);
        assert_eq!(ex.source_ext, vec![vec![5, 50, 6], vec![51, 50]]);
        assert_eq!(ex.oovs, vec!["qux", "zap"]);
        assert_eq!(ex.target, vec![START, 50, 5, 51, UNK, END]);
        assert_eq!(ex.ext_size(), 52);
        assert_eq!(decode_tokens(&ex.source_ext[0], &v, &ex.oovs), vec!["w1", "qux", "w2"]);

        let ex = encode_example(&["w1 w2".into()], "w2", &v, Limits::default()).unwrap();
        assert_eq!(ex.sentences, ex.source_ext);
        assert!(encode_example(&["  ".into()], "x", &v, Limits::default()).is_err());
    }

    #[test]
    fn truncation_keeps_whole_sentences_then_hard_cuts() {
        let v = vocab_of_size(50);
        let limits = Limits {
            max_doc_tokens: 5,
            max_summary_tokens: 2,
        };
        let ex = encode_example(&["w0 w1".into(), "w2 w3 w4 w5".into(), "w6".into()], "w0 w1 w2", &v, limits).unwrap();
        assert_eq!(ex.sentences, vec![vec![4, 5], vec![6, 7, 8]]);
        assert_eq!(ex.target, vec![START, 4, 5, END]);
        let exact = Limits {
            max_doc_tokens: 6,
            ..limits
        };
        let ex = encode_example(&["w0 w1".into(), "w2 w3 w4 w5".into(), "w6".into()], "", &v, exact).unwrap();
        assert_eq!(ex.sentences.len(), 2);
    }

    fn synthetic_examples(n: usize) -> (Vocabulary, Vec<Example>) {
        let raw = synth_corpus(SynthTask::Lead1, n, 40, 3);
        let v = build_vocab(&raw, 40).unwrap();
        let ex = encode_corpus(&raw, &v, Limits::default()).unwrap();
        (v, ex)
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let (_, ex) = synthetic_examples(17);
        let b = make_batches(&ex, 8, 1);
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![8, 8, 1]);
        assert_eq!(b, make_batches(&ex, 8, 1));
        let mut seen: Vec<usize> = b.iter().flat_map(|x| x.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..17).collect::<Vec<_>>());
        assert_ne!(make_batches(&ex, 8, 2)[0].indices, b[0].indices);
    }

    #[test]
    fn masks_mark_padding_exactly() {
        let (_, ex) = synthetic_examples(9);
        for batch in make_batches(&ex, 4, 5) {
            for (r, &i) in batch.indices.iter().enumerate() {
                let view = batch.example_view(r);
                assert_eq!(view.sentences, ex[i].sentences);
                assert_eq!(view.source_ext, ex[i].source_ext.concat());
                let n_true = view.target_mask.iter().filter(|&&m| m).count();
                assert_eq!(n_true, ex[i].target.len());
                assert!(view.target_mask[..n_true].iter().all(|&m| m));
                assert!(view.target[n_true..].iter().all(|&t| t == PAD));
                let tokens_marked = (0..batch.max_sentences * batch.max_sentence_len)
                    .filter(|k| batch.token_mask[r * batch.max_sentences * batch.max_sentence_len + k])
                    .count();
                assert_eq!(tokens_marked, ex[i].source_len());
            }
        }
    }

    #[test]
    fn lead1_targets_are_first_sentences() {
        for ex in synth_corpus(SynthTask::Lead1, 100, 60, 9) {
            assert_eq!(ex.abstract_text, ex.article[0]);
            assert!((3..=6).contains(&ex.article.len()));
        }
    }

    #[test]
    fn keyword_copy_targets_are_source_markers_in_order() {
        let raw = synth_corpus(SynthTask::KeywordCopy, 200, 60, 4);
        let v = build_vocab(&raw, 60).unwrap();
        for r in &raw {
            let src: Vec<String> = r.article.iter().flat_map(|s| tokenize(s)).collect();
            let markers: Vec<String> = src.iter().filter(|t| t.starts_with('k')).cloned().collect();
            assert_eq!(tokenize(&r.abstract_text), markers);
            let ex = encode_example(&r.article, &r.abstract_text, &v, Limits::default()).unwrap();
            // Every marker is outside the vocabulary and reachable only by copying.
            assert!(ex.target[1..ex.target.len() - 1].iter().all(|&t| t >= v.len()));
        }
    }

    #[test]
    fn synthetic_files_are_byte_identical_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_corpus(&a, &synth_corpus(SynthTask::KeywordCopy, 30, 50, 11)).unwrap();
        write_corpus(&b, &synth_corpus(SynthTask::KeywordCopy, 30, 50, 11)).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_corpus(&a).unwrap(), synth_corpus(SynthTask::KeywordCopy, 30, 50, 11));
    }

    #[test]
    fn corpus_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"article\": [\"a\"], \"abstract\": \"a\"}\nnot json\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_corpus(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn encode_round_trip_and_target_ids_come_from_source(
            sents in prop::collection::vec(prop::collection::vec(0usize..30, 1..6), 1..5),
            abs in prop::collection::vec(0usize..30, 0..8),
        ) {
            // Words w0..w19 are in the vocabulary, w20..w29 are not.
            let v = vocab_of_size(24);
            let article: Vec<String> = sents.iter().map(|s| s.iter().map(|&i| regular_word(i)).collect::<Vec<_>>().join(" ")).collect();
            let abs_text = abs.iter().map(|&i| regular_word(i)).collect::<Vec<_>>().join(" ");
            let ex = encode_example(&article, &abs_text, &v, Limits::default()).unwrap();
            for (s, x) in sents.iter().zip(&ex.source_ext) {
                let words: Vec<String> = s.iter().map(|&i| regular_word(i)).collect();
                prop_assert_eq!(decode_tokens(x, &v, &ex.oovs), words);
            }
            let flat: Vec<usize> = ex.source_ext.concat();
            for &t in &ex.target[1..ex.target.len() - 1] {
                prop_assert!(t < v.len() || flat.contains(&t));
            }
        }

        #[test]
        fn truncation_never_splits_earlier_sentences(
            lens in prop::collection::vec(1usize..8, 1..10),
            budget in 1usize..30,
        ) {
            let sents: Vec<Vec<String>> = lens.iter().map(|&n| vec!["t".to_string(); n]).collect();
            let out = truncate_sentences(sents, budget);
            let total: usize = out.iter().map(Vec::len).sum();
            prop_assert!(total <= budget);
            for (i, s) in out.iter().enumerate() {
                if i + 1 < out.len() {
                    prop_assert_eq!(s.len(), lens[i]);
                }
            }
        }
    }
}
