//! Span-level micro-F1 and per-sentence entropy diagnostics.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mi_loss::entropy_terms;
use crate::tagger::predict;
use crate::tagging::{extract_spans, Span, TagError, TagScheme};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{pred} predicted sentences but {gold} gold sentences")]
    Alignment { pred: usize, gold: usize },
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// Matching rule for a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Boundaries and sentiment must match.
    #[serde(rename = "ABSA")]
    Absa,
    /// Boundaries only.
    #[serde(rename = "ATE")]
    Ate,
    /// Boundaries and entity type must match.
    #[serde(rename = "NER")]
    Ner,
}

impl Mode {
    fn uses_label(self) -> bool {
        !matches!(self, Mode::Ate)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Absa => "ABSA",
            Mode::Ate => "ATE",
            Mode::Ner => "NER",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ABSA" => Ok(Mode::Absa),
            "ATE" => Ok(Mode::Ate),
            "NER" => Ok(Mode::Ner),
            other => Err(format!("unknown task {other:?} (expected ABSA, ATE or NER)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub mode: Mode,
}

impl ScoreReport {
    fn from_counts(true_positives: usize, predicted: usize, gold: usize, mode: Mode) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let micro_f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            micro_f1,
            mode,
        }
    }
}

type Key<'a> = (usize, usize, Option<&'a str>);

fn keys(spans: &[Span], mode: Mode) -> BTreeSet<Key<'_>> {
    spans
        .iter()
        .map(|s| (s.start, s.end, mode.uses_label().then_some(s.label.as_str())))
        .collect()
}

/// Micro-averaged exact-match scoring over aligned sentences. Duplicate
/// spans within a sentence count once.
pub fn score_spans(
    pred: &[Vec<Span>],
    gold: &[Vec<Span>],
    mode: Mode,
) -> Result<ScoreReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::Alignment {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (keys(p, mode), keys(g, mode));
        tp += p.intersection(&g).count();
        n_pred += p.len();
        n_gold += g.len();
    }
    Ok(ScoreReport::from_counts(tp, n_pred, n_gold, mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDiagnostics {
    /// Entropy of the sentence's mean tag distribution.
    pub h_y: f64,
    /// Mean per-token entropy.
    pub h_y_given_x: f64,
    pub mi: f64,
    pub spans: Vec<Span>,
}

pub fn sentence_diagnostics(
    probs: ArrayView2<'_, f64>,
    epsilon: f64,
    scheme: &TagScheme,
) -> Result<SentenceDiagnostics, EvalError> {
    let (h_y, h_y_given_x) = entropy_terms(probs, epsilon);
    let spans = extract_spans(&predict(probs), scheme)?;
    Ok(SentenceDiagnostics {
        h_y,
        h_y_given_x,
        mi: h_y - h_y_given_x,
        spans,
    })
}

/// Human-readable table, one block per sentence.
pub fn diagnostics_table(rows: &[(Vec<String>, SentenceDiagnostics)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:>8}  {:>8}  {:>8}  sentence / predicted spans", "#", "H(Y)", "H(Y|X)", "I(X;Y)");
    for (i, (tokens, d)) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:>8.4}  {:>8.4}  {:>8.4}  {}",
            i,
            d.h_y,
            d.h_y_given_x,
            d.mi,
            tokens.join(" ")
        );
        let spans: Vec<String> = d
            .spans
            .iter()
            .map(|s| format!("[{}] {}", s.label, tokens[s.start..s.end].join(" ")))
            .collect();
        let shown = if spans.is_empty() {
            "(none)".to_string()
        } else {
            spans.join(", ")
        };
        let _ = writeln!(out, "{:>36}  -> {}", "", shown);
    }
    out
}
