//! Joint source/target training, decoding, evaluation and sweeps.
//!
//! Each step samples a labeled source batch and an equally sized unlabeled
//! target batch, runs both through the tagger as one stacked matrix, takes
//! cross entropy on the source rows and the thresholded MI loss on all rows,
//! and applies one AdamW update to `L_CE + alpha * L_MI`.

use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TrainedModel;
use crate::data::{build_vocab, Corpus, DataError, Domain, JointBatcher};
use crate::eval::{score_spans, sentence_diagnostics, EvalError, Mode, ScoreReport, SentenceDiagnostics};
use crate::kv::{KvError, KvMap};
use crate::mi_loss::{combine_losses, mi_loss_and_grad, Branch, MiError, MiLossConfig, ProbBatch};
use crate::optim::{self, OptimConfig, OptimError, OptimState};
use crate::rng::derive_seed;
use crate::tagger::{self, TaggerConfig, TaggerError};
use crate::tagging::{extract_spans, SchemeKind, Span, TagId, TagScheme};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("non-finite loss at epoch {epoch} step {step}: {source}\noffending batch:\n{dump}")]
    NonFinite {
        epoch: usize,
        step: usize,
        source: MiError,
        dump: String,
    },
    #[error("{mode} scoring needs a {expected} scheme, the model uses {found}")]
    Scheme {
        mode: Mode,
        expected: SchemeKind,
        found: SchemeKind,
    },
    #[error("invalid run config: {0}")]
    Config(String),
}

/// Everything a training run depends on besides the corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Mode,
    pub source_train: Option<PathBuf>,
    pub target_unlabeled: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub optim: OptimConfig,
    pub mi: MiLossConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(task: Mode) -> Self {
        Self {
            task,
            source_train: None,
            target_unlabeled: None,
            target_test: None,
            output_dir: None,
            embed_dim: 64,
            context_window: 1,
            hidden_dim: 384,
            max_len: 128,
            optim: OptimConfig::default(),
            mi: MiLossConfig::default(),
            batch_size: 16,
            epochs: match task {
                Mode::Ner => 3,
                Mode::Absa | Mode::Ate => 20,
            },
            min_count: 1,
            seed: 0,
        }
    }

    /// Settings for the bundled synthetic benchmark: a smaller encoder, a
    /// window wide enough to see the cue in front of a three-token aspect,
    /// and a step size suited to training from scratch.
    pub fn synthetic_benchmark() -> Self {
        let mut cfg = Self::new(Mode::Absa);
        cfg.embed_dim = 16;
        cfg.context_window = 3;
        cfg.hidden_dim = 32;
        cfg.optim.lr = 1e-3;
        cfg.optim.weight_decay = 1.0;
        cfg.epochs = 20;
        cfg
    }

    /// Tag scheme implied by the task.
    pub fn scheme(&self) -> TagScheme {
        match self.task {
            Mode::Absa | Mode::Ate => TagScheme::unified(),
            Mode::Ner => TagScheme::bio_ner(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        self.optim.validate()?;
        self.mi.validate(self.scheme().num_tags())?;
        Ok(())
    }

    const KEYS: &'static [&'static str] = &[
        "task",
        "source_train",
        "target_unlabeled",
        "target_test",
        "output_dir",
        "embed_dim",
        "context_window",
        "hidden_dim",
        "max_len",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "weight_decay",
        "alpha",
        "rho",
        "epsilon",
        "batch_size",
        "epochs",
        "min_count",
        "seed",
    ];

    /// Apply `key = value` settings on top of `self`. A `task` key resets
    /// the task-dependent epoch default unless `epochs` is also given.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<(), TrainError> {
        kv.check_known(Self::KEYS)?;
        if let Some(task) = kv.get("task") {
            let task: Mode = task.parse().map_err(TrainError::Config)?;
            if task != self.task {
                let epochs = RunConfig::new(task).epochs;
                self.task = task;
                self.epochs = epochs;
            }
        }
        let path = |key: &str, slot: &mut Option<PathBuf>| {
            if let Some(v) = kv.get(key) {
                *slot = Some(PathBuf::from(v));
            }
        };
        path("source_train", &mut self.source_train);
        path("target_unlabeled", &mut self.target_unlabeled);
        path("target_test", &mut self.target_test);
        path("output_dir", &mut self.output_dir);
        kv.read("embed_dim", &mut self.embed_dim)?;
        kv.read("context_window", &mut self.context_window)?;
        kv.read("hidden_dim", &mut self.hidden_dim)?;
        kv.read("max_len", &mut self.max_len)?;
        self.optim.read_kv(kv)?;
        kv.read("alpha", &mut self.mi.alpha)?;
        kv.read("rho", &mut self.mi.rho)?;
        kv.read("epsilon", &mut self.mi.epsilon)?;
        kv.read("batch_size", &mut self.batch_size)?;
        kv.read("epochs", &mut self.epochs)?;
        kv.read("min_count", &mut self.min_count)?;
        kv.read("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("task", self.task);
        let paths = [
            ("source_train", &self.source_train),
            ("target_unlabeled", &self.target_unlabeled),
            ("target_test", &self.target_test),
            ("output_dir", &self.output_dir),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                kv.set(key, p.display());
            }
        }
        kv.set("embed_dim", self.embed_dim);
        kv.set("context_window", self.context_window);
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("max_len", self.max_len);
        self.optim.write_kv(&mut kv);
        kv.set("alpha", self.mi.alpha);
        kv.set("rho", self.mi.rho);
        kv.set("epsilon", self.mi.epsilon);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("min_count", self.min_count);
        kv.set("seed", self.seed);
        kv
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub ce: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub mi_loss: f64,
    pub branch: Branch,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub optim: OptimState,
    pub log: Vec<StepRecord>,
}

impl TrainOutcome {
    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

fn dump_batch(sentences: &[&crate::data::Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "  [{:?}] {}", s.domain, s.tokens.join(" "));
    }
    out
}

/// Train on labeled `source` and unlabeled `target` text.
pub fn train(cfg: &RunConfig, source: &Corpus, target: &Corpus) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let scheme = cfg.scheme();
    if source.scheme != scheme {
        return Err(TrainError::Scheme {
            mode: cfg.task,
            expected: scheme.kind(),
            found: source.scheme.kind(),
        });
    }
    if let Some(j) = source.sentences.iter().position(|s| s.gold.is_none()) {
        return Err(TaggerError::Unlabeled(j).into());
    }

    let vocab = build_vocab(&[source, target], cfg.min_count);
    let prepare = |c: &Corpus, domain: Domain| {
        let mut c = c.clone().with_domain(domain);
        c.truncate(cfg.max_len);
        c.assign_ids(&vocab);
        c
    };
    let source = prepare(source, Domain::Source);
    let target = prepare(target, Domain::Target);

    let tagger_cfg = TaggerConfig {
        vocab_size: vocab.len(),
        embed_dim: cfg.embed_dim,
        context_window: cfg.context_window,
        hidden_dim: cfg.hidden_dim,
        num_layers: 2,
        num_tags: scheme.num_tags(),
        max_len: cfg.max_len,
        seed: derive_seed(cfg.seed, "init"),
    };
    let mut params = tagger::init_params(&tagger_cfg)?;
    let mut state = optim::init_state(&params);
    let mut batcher = JointBatcher::new(
        source.len(),
        target.len(),
        cfg.batch_size,
        derive_seed(cfg.seed, "batches"),
    )?;

    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        for (step, batch) in batcher.epoch().into_iter().enumerate() {
            let sentences: Vec<&crate::data::Sentence> = batch
                .source
                .iter()
                .map(|&i| &source.sentences[i])
                .chain(batch.target.iter().map(|&i| &target.sentences[i]))
                .collect();
            let ids: Vec<&[usize]> = sentences.iter().map(|s| s.token_ids.as_slice()).collect();
            let out = tagger::forward_batch(&params, &ids)?;

            let n_source_rows = out.offsets[batch.source.len()];
            let gold: Vec<Option<&[TagId]>> = sentences[..batch.source.len()]
                .iter()
                .map(|s| s.gold.as_deref())
                .collect();
            let (ce, d_source) = tagger::cross_entropy(
                out.probs.slice(s![..n_source_rows, ..]),
                &gold,
                cfg.mi.epsilon,
            )?;
            let mut d_logits = Array2::zeros(out.probs.raw_dim());
            d_logits
                .slice_mut(s![..n_source_rows, ..])
                .assign(&d_source);

            let origin = sentences
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.domain, s.len()))
                .collect();
            let m = ProbBatch::with_layout(out.probs.clone(), origin, out.offsets.clone())?;
            let mi = mi_loss_and_grad(&m, &cfg.mi);
            let total = combine_losses(ce, &mi, cfg.mi.alpha).map_err(|e| TrainError::NonFinite {
                epoch,
                step,
                source: e,
                dump: dump_batch(&sentences),
            })?;
            log.push(StepRecord {
                epoch,
                step,
                ce,
                delta1: mi.delta1,
                delta2: mi.delta2,
                mi_loss: mi.loss,
                branch: mi.branch,
                total,
            });

            let d_probs = (cfg.mi.alpha > 0.0).then(|| mi.grad * cfg.mi.alpha);
            let grads = tagger::backward(&out.cache, &params, Some(&d_logits), d_probs.as_ref())?;
            optim::step(&mut params, &grads, &mut state, &cfg.optim)?;
        }
    }
    Ok(TrainOutcome {
        model: TrainedModel {
            params,
            vocab,
            scheme,
        },
        optim: state,
        log,
    })
}

/// Per-sentence tag distributions for a corpus, decoded with the model's
/// vocabulary.
pub fn corpus_probs(model: &TrainedModel, corpus: &Corpus) -> Result<Vec<Array2<f64>>, TrainError> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in corpus.sentences.chunks(CHUNK) {
        let ids: Vec<Vec<usize>> = chunk.iter().map(|s| model.vocab.encode(&s.tokens)).collect();
        let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        let fwd = tagger::forward_batch(&model.params, &refs)?;
        for j in 0..chunk.len() {
            out.push(fwd.sentence_probs(j).to_owned());
        }
    }
    Ok(out)
}

pub fn predict_tags(model: &TrainedModel, corpus: &Corpus) -> Result<Vec<Vec<TagId>>, TrainError> {
    Ok(corpus_probs(model, corpus)?
        .iter()
        .map(|p| tagger::predict(p.view()))
        .collect())
}

fn check_mode(model: &TrainedModel, mode: Mode) -> Result<(), TrainError> {
    let found = model.scheme.kind();
    let expected = match mode {
        Mode::Absa => SchemeKind::UnifiedSentiment,
        Mode::Ner => SchemeKind::Bio,
        Mode::Ate => return Ok(()),
    };
    if found != expected {
        return Err(TrainError::Scheme {
            mode,
            expected,
            found,
        });
    }
    Ok(())
}

/// Decode a labeled corpus and score it.
pub fn evaluate(model: &TrainedModel, test: &Corpus, mode: Mode) -> Result<ScoreReport, TrainError> {
    Ok(evaluate_modes(model, test, &[mode])?[0])
}

/// Score one decoding of `test` under several matching rules.
pub fn evaluate_modes(
    model: &TrainedModel,
    test: &Corpus,
    modes: &[Mode],
) -> Result<Vec<ScoreReport>, TrainError> {
    for &mode in modes {
        check_mode(model, mode)?;
    }
    if test.scheme != model.scheme {
        return Err(TrainError::Scheme {
            mode: modes.first().copied().unwrap_or(Mode::Ate),
            expected: model.scheme.kind(),
            found: test.scheme.kind(),
        });
    }
    let pred_tags = predict_tags(model, test)?;
    let mut pred = Vec::with_capacity(test.len());
    let mut gold = Vec::with_capacity(test.len());
    for (j, (tags, s)) in pred_tags.iter().zip(&test.sentences).enumerate() {
        let g = s.gold.as_ref().ok_or(TaggerError::Unlabeled(j))?;
        // predictions may be shorter if the sentence was cut at max_len
        let g = &g[..tags.len()];
        pred.push(extract_spans(tags, &model.scheme).map_err(EvalError::from)?);
        gold.push(extract_spans(g, &model.scheme).map_err(EvalError::from)?);
    }
    modes
        .iter()
        .map(|&m| Ok(score_spans(&pred, &gold, m)?))
        .collect()
}

/// Fraction of gold in-span tokens that the model tags `O`.
pub fn missed_span_token_rate(model: &TrainedModel, test: &Corpus) -> Result<f64, TrainError> {
    let pred = predict_tags(model, test)?;
    let (mut missed, mut total) = (0usize, 0usize);
    for (p, s) in pred.iter().zip(&test.sentences) {
        let g = s.gold.as_deref().unwrap_or(&[]);
        for (&pt, &gt) in p.iter().zip(g) {
            if gt != crate::tagging::OUTSIDE {
                total += 1;
                missed += usize::from(pt == crate::tagging::OUTSIDE);
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        missed as f64 / total as f64
    })
}

pub fn diagnose(
    model: &TrainedModel,
    corpus: &Corpus,
    epsilon: f64,
) -> Result<Vec<(Vec<String>, SentenceDiagnostics)>, TrainError> {
    let probs = corpus_probs(model, corpus)?;
    probs
        .iter()
        .zip(&corpus.sentences)
        .map(|(p, s)| {
            let d = sentence_diagnostics(p.view(), epsilon, &model.scheme)?;
            Ok((s.tokens[..p.nrows()].to_vec(), d))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Alpha,
    Rho,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "rho" => Ok(SweepParam::Rho),
            other => Err(format!("cannot sweep {other:?} (expected alpha or rho)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// Label-matching F1 (ABSA, or NER for NER runs).
    pub absa_f1: f64,
    /// Boundary-only F1.
    pub ate_f1: f64,
}

/// Train and evaluate once per value, varying only the swept parameter.
pub fn sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
    source: &Corpus,
    target: &Corpus,
    test: &Corpus,
) -> Result<Vec<SweepRow>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Config("sweep needs at least one value".into()));
    }
    let labeled_mode = match base.task {
        Mode::Ner => Mode::Ner,
        Mode::Absa | Mode::Ate => Mode::Absa,
    };
    values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Alpha => cfg.mi.alpha = value,
                SweepParam::Rho => cfg.mi.rho = value,
            }
            let outcome = train(&cfg, source, target)?;
            let reports = evaluate_modes(&outcome.model, test, &[labeled_mode, Mode::Ate])?;
            Ok(SweepRow {
                value,
                absa_f1: reports[0].micro_f1,
                ate_f1: reports[1].micro_f1,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,absa_f1,ate_f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.value, r.absa_f1, r.ate_f1);
    }
    out
}

/// Decoded spans for each sentence of a corpus.
pub fn predict_spans(model: &TrainedModel, corpus: &Corpus) -> Result<Vec<Vec<Span>>, TrainError> {
    predict_tags(model, corpus)?
        .iter()
        .map(|t| Ok(extract_spans(t, &model.scheme).map_err(EvalError::from)?))
        .collect()
}
