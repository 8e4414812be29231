//! Batch-approximated token/label mutual information and the thresholded
//! MI loss.
//!
//! For an `N x T` matrix `M` of per-token tag distributions, stacked over a
//! source mini-batch followed by a target mini-batch:
//!
//! ```text
//! p_k     = (1/N) sum_i M[i,k]                      marginal tag distribution
//! delta1  = -sum_k p_k ln p_k                       H(Y), batch estimate
//! delta2  = (1/N) sum_i sum_k M[i,k] ln M[i,k]      -H(Y|X), batch estimate
//! L_MI    = -(delta1 + delta2)   if delta1 <  rho
//!         = -delta2              if delta1 >= rho
//! L_train = L_CE + alpha * L_MI
//! ```
//!
//! Logs are natural, and every probability is clamped to `[epsilon, 1]`
//! before taking a log. Gradients treat the entries of `M` as free
//! variables; the softmax chain rule lives in the tagger.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Domain;

/// Default log-clamp floor.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Slack allowed on row sums and entropy bounds.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiError {
    #[error("both the source and the target batch must contain at least one sentence")]
    EmptyBatch,
    #[error("sentence {sentence} has {found} tags per row, expected {expected}")]
    ShapeMismatch {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("probability matrix has no rows")]
    NoRows,
    #[error("invalid MI loss config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss (ce={ce}, mi={mi})")]
    NonFinite { ce: f64, mi: f64 },
}

/// Row-stochastic `N x T` matrix of predicted tag distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    probs: Array2<f64>,
    row_origin: Vec<Domain>,
    sentence_offsets: Vec<usize>,
}

impl ProbBatch {
    /// Wrap a matrix, treating it as one sentence of unspecified origin
    /// (rows are tagged as target).
    pub fn new(probs: Array2<f64>) -> Result<Self, MiError> {
        let n = probs.nrows();
        Self::with_layout(probs, vec![Domain::Target; n], vec![0, n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MiError> {
        let t = rows.first().map_or(0, Vec::len);
        let mut m = Array2::zeros((rows.len(), t));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(MiError::ShapeMismatch {
                    sentence: i,
                    expected: t,
                    found: row.len(),
                });
            }
            for (k, &v) in row.iter().enumerate() {
                m[[i, k]] = v;
            }
        }
        Self::new(m)
    }

    /// Wrap an already stacked matrix. `sentence_offsets` starts at 0 and
    /// ends at `N`.
    pub fn with_layout(
        probs: Array2<f64>,
        row_origin: Vec<Domain>,
        sentence_offsets: Vec<usize>,
    ) -> Result<Self, MiError> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(MiError::NoRows);
        }
        for (row, r) in probs.axis_iter(Axis(0)).enumerate() {
            let sum: f64 = r.sum();
            let in_range = r.iter().all(|&p| (0.0..=1.0).contains(&p));
            if !in_range || (sum - 1.0).abs() > TOLERANCE {
                return Err(MiError::NotStochastic { row, sum });
            }
        }
        debug_assert_eq!(row_origin.len(), probs.nrows());
        debug_assert_eq!(sentence_offsets.last().copied(), Some(probs.nrows()));
        Ok(Self {
            probs,
            row_origin,
            sentence_offsets,
        })
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn num_rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_tags(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row_origin(&self) -> &[Domain] {
        &self.row_origin
    }

    pub fn sentence_offsets(&self) -> &[usize] {
        &self.sentence_offsets
    }

    /// Rows belonging to sentence `j`.
    pub fn sentence(&self, j: usize) -> ArrayView2<'_, f64> {
        let (a, b) = (self.sentence_offsets[j], self.sentence_offsets[j + 1]);
        self.probs.slice(ndarray::s![a..b, ..])
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_offsets.len() - 1
    }
}

/// Stack per-sentence outputs, all source sentences first.
pub fn assemble_prob_matrix(
    source: &[Array2<f64>],
    target: &[Array2<f64>],
) -> Result<ProbBatch, MiError> {
    if source.is_empty() || target.is_empty() {
        return Err(MiError::EmptyBatch);
    }
    let num_tags = source[0].ncols();
    let sentences = source
        .iter()
        .map(|m| (m, Domain::Source))
        .chain(target.iter().map(|m| (m, Domain::Target)));
    let total: usize = source.iter().chain(target).map(|m| m.nrows()).sum();
    let mut probs = Array2::zeros((total, num_tags));
    let mut origin = Vec::with_capacity(total);
    let mut offsets = vec![0];
    let mut at = 0;
    for (j, (m, domain)) in sentences.enumerate() {
        if m.ncols() != num_tags {
            return Err(MiError::ShapeMismatch {
                sentence: j,
                expected: num_tags,
                found: m.ncols(),
            });
        }
        probs
            .slice_mut(ndarray::s![at..at + m.nrows(), ..])
            .assign(m);
        at += m.nrows();
        origin.extend(std::iter::repeat_n(domain, m.nrows()));
        offsets.push(at);
    }
    ProbBatch::with_layout(probs, origin, offsets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiLossConfig {
    pub alpha: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for MiLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            rho: 0.5,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MiLossConfig {
    pub fn validate(&self, num_tags: usize) -> Result<(), MiError> {
        let max_rho = (num_tags as f64).ln();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MiError::InvalidConfig(format!("alpha {} < 0", self.alpha)));
        }
        if !(0.0..=max_rho + TOLERANCE).contains(&self.rho) {
            return Err(MiError::InvalidConfig(format!(
                "rho {} outside [0, ln {num_tags}]",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(MiError::InvalidConfig(format!(
                "epsilon {} outside (0, 1e-6]",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `delta1 < rho`: both terms are optimized.
    BelowThreshold,
    /// `delta1 >= rho`: only the conditional entropy term is optimized.
    AtOrAboveThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiLossResult {
    pub delta1: f64,
    pub delta2: f64,
    pub loss: f64,
    pub branch: Branch,
    /// `d loss / d M`, entries of `M` taken as free variables.
    pub grad: Array2<f64>,
}

/// Log record written per training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub delta1: f64,
    pub delta2: f64,
    pub loss: f64,
    pub branch: Branch,
}

impl MiLossResult {
    pub fn record(&self) -> MiRecord {
        MiRecord {
            delta1: self.delta1,
            delta2: self.delta2,
            loss: self.loss,
            branch: self.branch,
        }
    }

    /// Approximated mutual information `delta1 + delta2`.
    pub fn mi(&self) -> f64 {
        self.delta1 + self.delta2
    }
}

#[inline]
fn clamped_ln(p: f64, epsilon: f64) -> f64 {
    p.max(epsilon).ln()
}

/// Column mean of `M`.
pub fn marginal_distribution(m: &ProbBatch) -> Array1<f64> {
    marginal_of(m.probs())
}

fn marginal_of(probs: ArrayView2<'_, f64>) -> Array1<f64> {
    probs
        .mean_axis(Axis(0))
        .expect("probability matrix is non-empty")
}

fn entropy(p: &Array1<f64>, epsilon: f64) -> f64 {
    -p.iter().map(|&q| q * clamped_ln(q, epsilon)).sum::<f64>()
}

fn mean_neg_entropy(probs: ArrayView2<'_, f64>, epsilon: f64) -> f64 {
    let total: f64 = probs.iter().map(|&q| q * clamped_ln(q, epsilon)).sum();
    total / probs.nrows() as f64
}

/// `delta1`, the entropy of the marginal tag distribution.
pub fn marginal_entropy(m: &ProbBatch, epsilon: f64) -> f64 {
    entropy(&marginal_distribution(m), epsilon)
}

/// `delta2`, the mean of `sum_k M[i,k] ln M[i,k]` over rows.
pub fn neg_conditional_entropy(m: &ProbBatch, epsilon: f64) -> f64 {
    mean_neg_entropy(m.probs(), epsilon)
}

/// `delta1 + delta2`.
pub fn mi_value(m: &ProbBatch, epsilon: f64) -> f64 {
    marginal_entropy(m, epsilon) + neg_conditional_entropy(m, epsilon)
}

/// Entropy terms of a raw probability matrix: `(H(Y), H(Y|X))`.
pub(crate) fn entropy_terms(probs: ArrayView2<'_, f64>, epsilon: f64) -> (f64, f64) {
    let h_y = entropy(&marginal_of(probs), epsilon);
    (h_y, -mean_neg_entropy(probs, epsilon))
}

/// Thresholded MI loss and its gradient with respect to `M`.
pub fn mi_loss_and_grad(m: &ProbBatch, cfg: &MiLossConfig) -> MiLossResult {
    let eps = cfg.epsilon;
    let n = m.num_rows() as f64;
    let p = marginal_distribution(m);
    let delta1 = entropy(&p, eps);
    let delta2 = neg_conditional_entropy(m, eps);
    let log_p = p.mapv(|q| clamped_ln(q, eps));

    let branch = if delta1 < cfg.rho {
        Branch::BelowThreshold
    } else {
        Branch::AtOrAboveThreshold
    };
    let mut grad = m.probs().mapv(|q| clamped_ln(q, eps));
    let loss = match branch {
        Branch::BelowThreshold => {
            for mut row in grad.axis_iter_mut(Axis(0)) {
                row.zip_mut_with(&log_p, |g, &lp| *g = (lp - *g) / n);
            }
            -(delta1 + delta2)
        }
        Branch::AtOrAboveThreshold => {
            grad.mapv_inplace(|lq| -(lq + 1.0) / n);
            -delta2
        }
    };
    MiLossResult {
        delta1,
        delta2,
        loss,
        branch,
        grad,
    }
}

/// `L_train = L_CE + alpha * L_MI`.
pub fn combine_losses(ce: f64, mi: &MiLossResult, alpha: f64) -> Result<f64, MiError> {
    let total = ce + alpha * mi.loss;
    if !ce.is_finite() || !mi.loss.is_finite() || !total.is_finite() {
        return Err(MiError::NonFinite { ce, mi: mi.loss });
    }
    Ok(total)
}
