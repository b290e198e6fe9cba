//! Adagrad with global-norm clipping, teacher-forced batch training and the epoch loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::data::{make_batches, Batch, Example, ExampleView};
use crate::error::{Error, Result};
use crate::evaluation::perplexity;
use crate::model::Summarizer;
use crate::params::{ParamId, ParameterRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adagrad_init_acc: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub max_doc_tokens: usize,
    pub max_summary_tokens: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Updates between metrics rows, snapshots and checkpoints.
    pub interval: u64,
    /// Leading training examples scored for the training-perplexity column.
    pub probe_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 0.15,
            adagrad_init_acc: 0.1,
            max_grad_norm: 2.0,
            epochs: 12,
            max_doc_tokens: 400,
            max_summary_tokens: 100,
            vocab_size: 50_000,
            seed: 1,
            interval: 100,
            probe_examples: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.batch_size", self.batch_size as f64),
            ("train.lr", self.lr),
            ("train.adagrad_init_acc", self.adagrad_init_acc),
            ("train.max_grad_norm", self.max_grad_norm),
            ("train.epochs", self.epochs as f64),
            ("train.max_doc_tokens", self.max_doc_tokens as f64),
            ("train.max_summary_tokens", self.max_summary_tokens as f64),
            ("train.interval", self.interval as f64),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.vocab_size <= crate::data::RESERVED.len() {
            return Err(Error::Config("train.vocab_size must exceed the 4 reserved ids".into()));
        }
        Ok(())
    }
}

/// Per-coordinate Adagrad state; frozen parameters get no accumulator at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub lr: f64,
    pub init_acc: f64,
    acc: Vec<Option<Vec<f64>>>,
}

impl Adagrad {
    pub fn new(reg: &ParameterRegistry, lr: f64, init_acc: f64) -> Self {
        let acc = reg
            .iter()
            .map(|(_, p)| p.trainable.then(|| vec![init_acc; p.value.len()]))
            .collect();
        Self { lr, init_acc, acc }
    }

    pub fn accumulator(&self, id: ParamId) -> Option<&[f64]> {
        self.acc[id.index()].as_deref()
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied scale.
pub fn clip_gradients(reg: &mut ParameterRegistry, max_norm: f64) -> f64 {
    let norm = reg
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in reg.iter_mut().filter(|p| p.trainable) {
        p.grad.iter_mut().for_each(|g| *g *= scale);
    }
    scale
}

/// `acc += g²; w −= lr · g / √acc` on every trainable coordinate.
pub fn adagrad_step(reg: &mut ParameterRegistry, opt: &mut Adagrad) {
    for (p, acc) in reg.iter_mut().zip(opt.acc.iter_mut()) {
        let Some(acc) = acc.as_mut().filter(|_| p.trainable) else {
            continue;
        };
        for ((w, &g), a) in p.value.data_mut().iter_mut().zip(&p.grad).zip(acc.iter_mut()) {
            *a += g * g;
            *w -= opt.lr * g / a.sqrt();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub update: u64,
    pub train_ppl: f64,
    pub val_ppl: f64,
}

/// Receives metrics rows and parameter snapshots as the loop reaches each cadence point.
pub trait TrainSink {
    fn metrics(&mut self, record: &MetricsRecord, trainer: &Trainer) -> Result<()>;
    fn snapshot(&mut self, trainer: &Trainer) -> Result<()>;
    fn finish(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {
    fn metrics(&mut self, _: &MetricsRecord, _: &Trainer) -> Result<()> {
        Ok(())
    }
    fn snapshot(&mut self, _: &Trainer) -> Result<()> {
        Ok(())
    }
}

pub struct Trainer {
    pub model: Summarizer,
    pub optimizer: Adagrad,
    pub config: TrainConfig,
    pub update: u64,
    pub epoch: u64,
    /// Next batch index within `epoch`.
    pub cursor: u64,
}

/// Seed of the batch order in a given epoch.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch)
}

impl Trainer {
    pub fn new(model: Summarizer, config: TrainConfig) -> Self {
        let optimizer = Adagrad::new(&model.reg, config.lr, config.adagrad_init_acc);
        Self {
            model,
            optimizer,
            config,
            update: 0,
            epoch: 0,
            cursor: 0,
        }
    }

    pub fn train_batch(&mut self, batch: &Batch) -> Result<f64> {
        let views: Vec<ExampleView> = (0..batch.len()).map(|r| batch.example_view(r)).collect();
        self.train_views(&views)
    }

    /// One optimizer update on the mean loss of `views`; returns the pre-step loss.
    pub fn train_views(&mut self, views: &[ExampleView]) -> Result<f64> {
        if views.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let model = &self.model;
        let results: Vec<_> = views.par_iter().map(|v| model.example_gradients(v)).collect::<Result<_>>()?;
        let scale = 1.0 / views.len() as f64;
        let reg = &mut self.model.reg;
        reg.zero_grads();
        let mut loss = 0.0;
        for (value, grads) in &results {
            loss += value.total * scale;
            for (id, g) in grads {
                reg.accumulate_grad(*id, g, scale);
            }
        }
        if !loss.is_finite() {
            return Err(Error::degenerate(format!("non-finite loss at update {}", self.update)));
        }
        clip_gradients(reg, self.config.max_grad_norm);
        adagrad_step(reg, &mut self.optimizer);
        self.update += 1;
        Ok(loss)
    }

    pub fn checkpoint(&self, config_json: &str, vocab: Vec<(String, u64)>) -> Checkpoint {
        let tensors = self
            .model
            .reg
            .iter()
            .map(|(id, p)| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                values: p.value.data().to_vec(),
                grad: p.trainable.then(|| p.grad.clone()),
                accumulator: self.optimizer.accumulator(id).map(<[f64]>::to_vec),
            })
            .collect();
        Checkpoint {
            config: config_json.to_string(),
            update: self.update,
            epoch: self.epoch,
            cursor: self.cursor,
            tensors,
            vocab,
        }
    }

    /// Loads parameter values, gradients, accumulators and the loop position.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.tensors.len() != self.model.reg.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.tensors.len(),
                self.model.reg.len()
            )));
        }
        for t in &ckpt.tensors {
            let id = self
                .model
                .reg
                .id(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", t.name)))?;
            let p = self.model.reg.get_mut(id);
            if p.value.shape() != t.shape.as_slice() || p.trainable != t.trainable {
                return Err(Error::Checkpoint(format!(
                    "tensor {} does not match the model's shape or flags",
                    t.name
                )));
            }
            p.value.data_mut().copy_from_slice(&t.values);
            match &t.grad {
                Some(g) if g.len() == p.grad.len() => p.grad.copy_from_slice(g),
                Some(_) => return Err(Error::Checkpoint(format!("gradient of {} has the wrong length", t.name))),
                None => p.grad.iter_mut().for_each(|g| *g = 0.0),
            }
            match (&mut self.optimizer.acc[id.index()], &t.accumulator) {
                (Some(a), Some(b)) if a.len() == b.len() => a.copy_from_slice(b),
                (None, None) => {}
                _ => return Err(Error::Checkpoint(format!("optimizer state of {} does not match", t.name))),
            }
        }
        self.update = ckpt.update;
        self.epoch = ckpt.epoch;
        self.cursor = ckpt.cursor;
        Ok(())
    }
}

fn record(trainer: &Trainer, probe: &[Example], val: &[Example], sink: &mut dyn TrainSink) -> Result<MetricsRecord> {
    let rec = MetricsRecord {
        update: trainer.update,
        train_ppl: perplexity(&trainer.model, probe)?,
        val_ppl: perplexity(&trainer.model, val)?,
    };
    log::info!(
        "update {} epoch {}: train ppl {:.4} val ppl {:.4}",
        rec.update,
        trainer.epoch,
        rec.train_ppl,
        rec.val_ppl
    );
    sink.metrics(&rec, trainer)?;
    Ok(rec)
}

/// Runs (or resumes) training to `config.epochs`, reporting at update 0, every
/// `interval` updates, and at the end.
pub fn train_loop(trainer: &mut Trainer, train: &[Example], val: &[Example], sink: &mut dyn TrainSink) -> Result<Vec<MetricsRecord>> {
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let probe = &train[..trainer.config.probe_examples.clamp(1, train.len())];
    let interval = trainer.config.interval;
    let mut out = Vec::new();
    if trainer.update == 0 {
        out.push(record(trainer, probe, val, sink)?);
        sink.snapshot(trainer)?;
    }
    while (trainer.epoch as usize) < trainer.config.epochs {
        let batches = make_batches(train, trainer.config.batch_size, epoch_seed(trainer.config.seed, trainer.epoch));
        while (trainer.cursor as usize) < batches.len() {
            let loss = trainer.train_batch(&batches[trainer.cursor as usize])?;
            trainer.cursor += 1;
            log::debug!("update {} loss {loss:.6}", trainer.update);
            if trainer.update % interval == 0 {
                out.push(record(trainer, probe, val, sink)?);
                sink.snapshot(trainer)?;
            }
        }
        trainer.epoch += 1;
        trainer.cursor = 0;
    }
    if trainer.update % interval != 0 {
        out.push(record(trainer, probe, val, sink)?);
        sink.snapshot(trainer)?;
    }
    sink.finish(trainer)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, END, START};
    use crate::encoder::StrategyRegistry;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn reg_with(grads: &[(&str, Vec<f64>, bool)]) -> (ParameterRegistry, Vec<ParamId>) {
        let mut reg = ParameterRegistry::new();
        let ids = grads
            .iter()
            .map(|(n, g, t)| {
                let id = reg.register(n, Tensor::vector(vec![0.5; g.len()]), *t).unwrap();
                reg.get_mut(id).grad = g.clone();
                id
            })
            .collect();
        (reg, ids)
    }

    #[test]
    fn clipping_cases() {
        let (mut reg, ids) = reg_with(&[("a", vec![3.0, 4.0], true)]);
        let s = clip_gradients(&mut reg, 2.0);
        assert!((s - 0.4).abs() < 1e-15);
        let g = &reg.get(ids[0]).grad;
        assert!((g[0] - 1.2).abs() < 1e-15 && (g[1] - 1.6).abs() < 1e-15);

        let (mut reg, ids) = reg_with(&[("a", vec![0.9, 1.2], true)]);
        assert_eq!(clip_gradients(&mut reg, 2.0), 1.0);
        assert_eq!(reg.get(ids[0]).grad, vec![0.9, 1.2]);

        let (mut reg, _) = reg_with(&[("a", vec![0.0, 0.0], true)]);
        assert_eq!(clip_gradients(&mut reg, 2.0), 1.0);

        // Frozen buffers neither count toward the norm nor get rescaled.
        let (mut reg, ids) = reg_with(&[("a", vec![3.0, 4.0], true), ("f", vec![100.0], false)]);
        assert!((clip_gradients(&mut reg, 2.0) - 0.4).abs() < 1e-15);
        assert_eq!(reg.get(ids[1]).grad, vec![100.0]);
    }

    #[test]
    fn adagrad_cases() {
        let (mut reg, ids) = reg_with(&[("a", vec![1.0, 0.0], true), ("f", vec![5.0], false)]);
        let mut opt = Adagrad::new(&reg, 0.15, 0.1);
        adagrad_step(&mut reg, &mut opt);
        let acc = opt.accumulator(ids[0]).unwrap();
        assert!((acc[0] - 1.1).abs() < 1e-15);
        assert_eq!(acc[1], 0.1);
        let w = reg.get(ids[0]).value.data();
        assert!((w[0] - 0.5 + 0.14301).abs() < 1e-5);
        assert!((w[0] - (0.5 - 0.15 / 1.1f64.sqrt())).abs() < 1e-15);
        assert_eq!(w[1], 0.5);
        assert_eq!(reg.get(ids[1]).value.data(), &[0.5]);
        assert!(opt.accumulator(ids[1]).is_none());
    }

    proptest! {
        #[test]
        fn clipping_preserves_direction(g in prop::collection::vec(-10.0f64..10.0, 1..20), max in 0.1f64..5.0) {
            let (mut reg, ids) = reg_with(&[("a", g.clone(), true)]);
            clip_gradients(&mut reg, max);
            let c = &reg.get(ids[0]).grad;
            let dot: f64 = g.iter().zip(c).map(|(a, b)| a * b).sum();
            let na = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nc = c.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assume!(na > 0.0);
            prop_assert!((dot / (na * nc) - 1.0).abs() < 1e-12);
            prop_assert!(nc <= max * (1.0 + 1e-12));
        }
    }

    fn tiny(variant: &str) -> Trainer {
        tiny_with(variant, true)
    }

    fn tiny_with(variant: &str, coverage: bool) -> Trainer {
        let cfg = ModelConfig {
            variant: variant.into(),
            vocab_size: 12,
            emb_dim: 6,
            enc_hidden: 6,
            dec_hidden: 6,
            attn_dim: 6,
            coverage,
            coverage_weight: 1.0,
            forget_bias: 1.0,
            esn_spectral_radius: None,
            force_pgen: None,
            seed: 3,
        };
        let model = Summarizer::new(&cfg, &StrategyRegistry::builtin()).unwrap();
        Trainer::new(model, TrainConfig::default())
    }

    fn pair() -> Example {
        Example {
            sentences: vec![vec![4, 5, 6], vec![7, 8]],
            source_ext: vec![vec![4, 5, 6], vec![7, 8]],
            oovs: vec![],
            target: vec![START, 9, 10, 11, END],
            base_vocab: 12,
        }
    }

    #[test]
    fn memorizes_one_batch() {
        let mut t = tiny_with("trained", false);
        let views = vec![pair().view()];
        let first = t.train_views(&views).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = t.train_views(&views).unwrap();
            assert!(last.is_finite());
        }
        assert!(last * 10.0 <= first, "{first} -> {last}");
    }

    // The coverage term sits near (T-1)/T while attention is flat, so only
    // its NLL part is held to the same ratio.
    #[test]
    fn memorizes_one_batch_with_coverage() {
        let mut t = tiny("trained");
        let views = vec![pair().view()];
        let first = t.model.example_loss(&views[0]).unwrap();
        for _ in 0..200 {
            assert!(t.train_views(&views).unwrap().is_finite());
        }
        let last = t.model.example_loss(&views[0]).unwrap();
        assert!(last.nll * 10.0 <= first.nll, "{first:?} -> {last:?}");
        assert!(last.total < first.total);
    }

    #[test]
    fn frozen_fence_and_resume() {
        let mut t = tiny("random");
        let enc0 = t.model.reg.group_bytes("enc.");
        let emb0 = t.model.reg.group_bytes("emb");
        let views = vec![pair().view(); 2];
        for _ in 0..5 {
            t.train_views(&views).unwrap();
        }
        assert_eq!(t.model.reg.group_bytes("enc."), enc0);
        assert_ne!(t.model.reg.group_bytes("emb"), emb0);

        let ckpt = t.checkpoint("{}", vec![]);
        let mut resumed = tiny("random");
        resumed.restore(&ckpt).unwrap();
        assert_eq!(resumed.checkpoint("{}", vec![]), ckpt);
        let a = t.train_views(&views).unwrap();
        let b = resumed.train_views(&views).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(t.model.reg.group_bytes(""), resumed.model.reg.group_bytes(""));

        let mut other = tiny("trained");
        assert!(matches!(other.restore(&ckpt), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let run = |variant: &str| {
            let mut t = tiny(variant);
            (0..4)
                .map(|_| t.train_views(&[pair().view()]).unwrap().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run("trained"), run("trained"));
        assert_eq!(run("esn"), run("esn"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
