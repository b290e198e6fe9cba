//! `hred` subcommands. Exit codes: 0 success, 1 internal failure, 2 bad
//! configuration or arguments, 3 I/O or corpus errors, 4 checkpoint errors,
//! 5 missing snapshots.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{self, build_vocab, decode_tokens, encode_corpus, read_corpus, tokenize, RawExample, SynthTask, Vocabulary};
use crate::diagnostics::{histogram, histogram_csv, relative_weight_change, stats_csv, weight_change_csv, WeightChangePoint};
use crate::encoder::{StrategyRegistry, DOCUMENT_GROUP, SENTENCE_GROUP};
use crate::error::{Error, Result};
use crate::evaluation::{beam_search, bootstrap_ci, mean, perplexity, rouge};
use crate::model::Summarizer;
use crate::training::{train_loop, MetricsRecord, TrainSink, Trainer};

/// Parameter groups reported by the weight-change and histogram outputs.
pub const GROUPS: [&str; 5] = [SENTENCE_GROUP, DOCUMENT_GROUP, "emb", "attn", "dec"];

#[derive(Parser, Debug)]
#[command(name = "hred", version, about = "Trained vs. frozen hierarchical encoders for summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, metrics and weight-change CSVs.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. `--set encoder.variant=esn`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Perplexity and ROUGE-1/2/L F1 on a corpus split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Beam-search summaries, one line per input record.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 120)]
        max_tokens: usize,
    },
    /// Weight-change series and histograms from a run's snapshots.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 101)]
        bins: usize,
    },
    /// Write train/val/test splits of a synthetic corpus.
    SynthData {
        #[arg(long)]
        task: SynthTask,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Checkpoint(_) => 4,
        Error::MissingSnapshots(_) => 5,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            out,
            overrides,
            resume,
        } => cmd_train(config.as_deref(), &out, &overrides, resume.as_deref()),
        Command::Evaluate {
            checkpoint,
            corpus,
            out,
            beam,
            max_tokens,
        } => cmd_evaluate(&checkpoint, &corpus, out.as_deref(), beam, max_tokens),
        Command::Decode {
            checkpoint,
            input,
            out,
            beam,
            max_tokens,
        } => cmd_decode(&checkpoint, &input, &out, beam, max_tokens),
        Command::Diagnose { run, bins } => cmd_diagnose(&run, bins),
        Command::SynthData {
            task,
            n,
            vocab_size,
            seed,
            out,
        } => cmd_synth(task, n, vocab_size, seed, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{key} is not set")))
}

fn vocab_pairs(v: &Vocabulary) -> Vec<(String, u64)> {
    (data::RESERVED.len()..v.len())
        .map(|i| (v.token(i).unwrap().to_string(), v.count(i)))
        .collect()
}

fn group_values(reg: &crate::params::ParameterRegistry, group: &str) -> Vec<f64> {
    reg.group(group).flat_map(|p| p.value.data().iter().copied()).collect()
}

/// Writes metrics, snapshots and the running weight-change series into a run directory.
struct RunDirSink {
    dir: PathBuf,
    header: String,
    config_json: String,
    vocab: Vec<(String, u64)>,
    metrics: String,
    series: Vec<(String, Vec<WeightChangePoint>)>,
    previous: Option<(u64, Vec<Vec<f64>>)>,
}

impl RunDirSink {
    fn snapshot_path(&self, update: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("update-{update:06}.ckpt"))
    }
}

impl TrainSink for RunDirSink {
    fn metrics(&mut self, r: &MetricsRecord, _trainer: &Trainer) -> Result<()> {
        writeln!(self.metrics, "{},{},{}", r.update, r.train_ppl, r.val_ppl).unwrap();
        write(
            &self.dir.join("metrics.csv"),
            format!("{}update,train_ppl,val_ppl\n{}", self.header, self.metrics),
        )
    }

    fn snapshot(&mut self, trainer: &Trainer) -> Result<()> {
        trainer
            .checkpoint(&self.config_json, self.vocab.clone())
            .save(&self.snapshot_path(trainer.update))?;
        let current: Vec<Vec<f64>> = GROUPS.iter().map(|g| group_values(&trainer.model.reg, g)).collect();
        if let Some((update, prev)) = &self.previous {
            for ((_, points), (before, after)) in self.series.iter_mut().zip(prev.iter().zip(&current)) {
                match relative_weight_change(before, after) {
                    Ok(value) => points.push(WeightChangePoint { update: *update, value }),
                    Err(e) => log::warn!("weight change skipped at update {update}: {e}"),
                }
            }
        }
        self.previous = Some((trainer.update, current));
        write(&self.dir.join("weight_change.csv"), weight_change_csv(&self.header, &self.series))
    }

    fn finish(&mut self, trainer: &Trainer) -> Result<()> {
        trainer
            .checkpoint(&self.config_json, self.vocab.clone())
            .save(&self.dir.join("final.ckpt"))
    }
}

fn build_model(cfg: &RunConfig, vocab_len: usize) -> Result<Summarizer> {
    Summarizer::new(&cfg.model_config(vocab_len), &StrategyRegistry::builtin())
}

pub fn cmd_train(config: Option<&Path>, out: &Path, overrides: &[String], resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config, overrides)?;
    let train_raw = read_corpus(required(&cfg.data.train, "data.train")?)?;
    let val_raw = read_corpus(required(&cfg.data.val, "data.val")?)?;
    let vocab = build_vocab(&train_raw, cfg.train.vocab_size)?;
    let train = encode_corpus(&train_raw, &vocab, cfg.limits())?;
    let val = encode_corpus(&val_raw, &vocab, cfg.limits())?;
    if val.is_empty() {
        return Err(Error::Config("validation corpus is empty".into()));
    }

    let mut trainer = Trainer::new(build_model(&cfg, vocab.len())?, cfg.train.clone());
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path).map_err(as_checkpoint_error)?;
        if RunConfig::from_json(&ckpt.config)? != cfg {
            return Err(Error::Checkpoint("checkpoint was written with a different configuration".into()));
        }
        trainer.restore(&ckpt)?;
    }

    mkdir(&out.join("checkpoints"))?;
    vocab.save(&out.join("vocab.tsv"))?;
    let header = cfg.header();
    let mut sink = RunDirSink {
        dir: out.to_path_buf(),
        config_json: cfg.to_json(),
        vocab: vocab_pairs(&vocab),
        metrics: String::new(),
        series: GROUPS.iter().map(|g| (g.to_string(), Vec::new())).collect(),
        previous: None,
        header,
    };
    if resume.is_some() {
        sink.metrics = csv_body(&out.join("metrics.csv"));
        sink.previous = Some((trainer.update, GROUPS.iter().map(|g| group_values(&trainer.model.reg, g)).collect()));
        restore_series(&out.join("weight_change.csv"), &mut sink.series);
    }
    log::info!(
        "training {} encoder: {} train / {} val examples, vocab {}, {} trainable values",
        cfg.encoder.variant,
        train.len(),
        val.len(),
        vocab.len(),
        trainer.model.reg.trainable_count()
    );
    train_loop(&mut trainer, &train, &val, &mut sink)?;
    Ok(())
}

/// Data rows of an earlier CSV (comment and column header dropped); empty if absent.
fn csv_body(path: &Path) -> String {
    fs::read_to_string(path)
        .map(|s| {
            s.lines()
                .filter(|l| !l.starts_with('#'))
                .skip(1)
                .map(|l| format!("{l}\n"))
                .collect()
        })
        .unwrap_or_default()
}

fn restore_series(path: &Path, series: &mut [(String, Vec<WeightChangePoint>)]) {
    for line in csv_body(path).lines() {
        let f: Vec<&str> = line.split(',').collect();
        if let (Some((_, pts)), Ok(update), Ok(value)) = (
            series.iter_mut().find(|(g, _)| g == f[0]),
            f.get(1).unwrap_or(&"").parse(),
            f.get(2).unwrap_or(&"").parse(),
        ) {
            pts.push(WeightChangePoint { update, value });
        }
    }
}

fn as_checkpoint_error(e: Error) -> Error {
    match e {
        Error::Io { path, source } => Error::Checkpoint(format!("{}: {source}", path.display())),
        other => other,
    }
}

/// Rebuilds the model, configuration and vocabulary stored in a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Vocabulary, Summarizer)> {
    let ckpt = Checkpoint::load(path).map_err(as_checkpoint_error)?;
    let cfg = RunConfig::from_json(&ckpt.config)?;
    let vocab_text: String = ckpt.vocab.iter().map(|(t, c)| format!("{t}\t{c}\n")).collect();
    let vocab = Vocabulary::from_tsv(&vocab_text).map_err(|e| Error::Checkpoint(format!("embedded vocabulary: {e}")))?;
    let model = build_model(&cfg, vocab.len()).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let mut trainer = Trainer::new(model, cfg.train.clone());
    trainer.restore(&ckpt)?;
    Ok((cfg, vocab, trainer.model))
}

pub fn decode_corpus(
    model: &Summarizer,
    vocab: &Vocabulary,
    raw: &[RawExample],
    cfg: &RunConfig,
    beam: usize,
    max_tokens: usize,
) -> Result<Vec<Vec<String>>> {
    raw.par_iter()
        .map(|r| {
            let ex = data::encode_example(&r.article, &r.abstract_text, vocab, cfg.limits())?;
            let ids = beam_search(model, &ex.view(), beam, max_tokens)?;
            Ok(decode_tokens(&ids, vocab, &ex.oovs))
        })
        .collect()
}

pub fn cmd_evaluate(checkpoint: &Path, corpus: &Path, out: Option<&Path>, beam: Option<usize>, max_tokens: Option<usize>) -> Result<()> {
    let (cfg, vocab, model) = load_checkpoint(checkpoint)?;
    let raw = read_corpus(corpus)?;
    let examples = encode_corpus(&raw, &vocab, cfg.limits())?;
    let ppl = perplexity(&model, &examples)?;
    let beam = beam.unwrap_or(cfg.eval.beam);
    let max_tokens = max_tokens.unwrap_or(cfg.eval.max_tokens);
    let hyps = decode_corpus(&model, &vocab, &raw, &cfg, beam, max_tokens)?;
    let scores: Vec<_> = raw.iter().zip(&hyps).map(|(r, h)| rouge(&tokenize(&r.abstract_text), h)).collect();

    let mut csv = format!("{}metric,value,ci_low,ci_high\n", cfg.header());
    writeln!(csv, "perplexity,{ppl},,").unwrap();
    println!("perplexity {ppl:.6}");
    let columns: [(&str, fn(&crate::evaluation::RougeScore) -> f64); 3] = [
        ("rouge1_f1", |s| s.rouge1.f1),
        ("rouge2_f1", |s| s.rouge2.f1),
        ("rougeL_f1", |s| s.rouge_l.f1),
    ];
    for (name, f) in columns {
        let xs: Vec<f64> = scores.iter().map(f).collect();
        let (lo, hi) = bootstrap_ci(&xs, cfg.eval.bootstrap_resamples, cfg.eval.confidence, cfg.train.seed)?;
        let m = mean(&xs);
        writeln!(csv, "{name},{m},{lo},{hi}").unwrap();
        println!("{name} {m:.6} [{lo:.6}, {hi:.6}]");
    }
    if let Some(out) = out {
        write(out, csv)?;
    }
    Ok(())
}

pub fn cmd_decode(checkpoint: &Path, input: &Path, out: &Path, beam: usize, max_tokens: usize) -> Result<()> {
    let (cfg, vocab, model) = load_checkpoint(checkpoint)?;
    let raw = read_corpus(input)?;
    let hyps = decode_corpus(&model, &vocab, &raw, &cfg, beam, max_tokens)?;
    let text: String = hyps.iter().map(|h| format!("{}\n", h.join(" "))).collect();
    write(out, text)
}

fn snapshot_files(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join("checkpoints");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::MissingSnapshots(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("update-") && n.ends_with(".ckpt"))
        })
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Error::MissingSnapshots(format!(
            "{} holds {} snapshot(s); at least two are needed",
            dir.display(),
            files.len()
        )));
    }
    Ok(files)
}

fn group_of<'a>(ckpt: &'a Checkpoint, group: &'a str) -> impl Iterator<Item = &'a crate::checkpoint::NamedTensor> + 'a {
    ckpt.tensors.iter().filter(move |t| t.name.starts_with(group))
}

pub fn cmd_diagnose(run: &Path, bins: usize) -> Result<()> {
    let files = snapshot_files(run)?;
    let mut series: Vec<(String, Vec<WeightChangePoint>)> = GROUPS.iter().map(|g| (g.to_string(), Vec::new())).collect();
    let mut previous: Option<Checkpoint> = None;
    for f in &files {
        let ckpt = Checkpoint::load(f).map_err(as_checkpoint_error)?;
        if let Some(prev) = &previous {
            for (group, points) in series.iter_mut() {
                let before: Vec<f64> = group_of(prev, group).flat_map(|t| t.values.iter().copied()).collect();
                let after: Vec<f64> = group_of(&ckpt, group).flat_map(|t| t.values.iter().copied()).collect();
                match relative_weight_change(&before, &after) {
                    Ok(value) => points.push(WeightChangePoint {
                        update: prev.update,
                        value,
                    }),
                    Err(Error::Degenerate(m)) => log::warn!("{group}: {m}"),
                    Err(e) => return Err(e),
                }
            }
        }
        previous = Some(ckpt);
    }
    let last = previous.expect("at least two snapshots");
    let cfg = RunConfig::from_json(&last.config)?;
    let header = cfg.header();

    let mut weights = Vec::new();
    let mut grads = Vec::new();
    let mut stats = Vec::new();
    for group in GROUPS {
        let w: Vec<f64> = group_of(&last, group).flat_map(|t| t.values.iter().copied()).collect();
        if w.is_empty() {
            continue;
        }
        let h = histogram(&w, bins)?;
        stats.push((group.to_string(), "weights", h.clone()));
        weights.push((group.to_string(), h));
        let g: Vec<f64> = group_of(&last, group).filter_map(|t| t.grad.as_ref()).flatten().copied().collect();
        if !g.is_empty() {
            let h = histogram(&g, bins)?;
            stats.push((group.to_string(), "gradients", h.clone()));
            grads.push((group.to_string(), h));
        }
    }
    let dir = run.join("diagnostics");
    mkdir(&dir)?;
    write(&dir.join("weight_change.csv"), weight_change_csv(&header, &series))?;
    write(&dir.join("hist_weights.csv"), histogram_csv(&header, &weights))?;
    write(&dir.join("hist_grads.csv"), histogram_csv(&header, &grads))?;
    write(&dir.join("stats.csv"), stats_csv(&header, &stats))?;
    Ok(())
}

pub fn cmd_synth(task: SynthTask, n: usize, vocab_size: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let [train, val, test] = data::synth_splits(task, n, vocab_size, seed);
    mkdir(out)?;
    data::write_corpus(&out.join("train.jsonl"), &train)?;
    data::write_corpus(&out.join("val.jsonl"), &val)?;
    data::write_corpus(&out.join("test.jsonl"), &test)
}
