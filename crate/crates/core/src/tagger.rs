//! Window-based neural tagger with a hand-written backward pass.
//!
//! Each token is represented by the concatenated embeddings of the `2w + 1`
//! tokens around it (positions outside the sentence use the reserved
//! boundary row). That vector goes through two ReLU layers and a linear
//! output layer, followed by a softmax over tags.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocabulary;
use crate::rng;
use crate::tagging::TagId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaggerError {
    #[error("invalid tagger config: {0}")]
    Config(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    Vocab { id: usize, vocab_size: usize },
    #[error("sentence {0} has no gold labels")]
    Unlabeled(usize),
    #[error("gold sequences cover {gold} tokens but the batch has {rows} rows")]
    GoldLength { gold: usize, rows: usize },
    #[error("cache was produced by parameter version {cache}, params are at {params}")]
    StaleCache { cache: u64, params: u64 },
    #[error("gradient seed has shape {found:?}, expected {expected:?}")]
    SeedShape {
        found: (usize, usize),
        expected: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Context radius `w`; the window spans `2w + 1` tokens.
    pub context_window: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_tags: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl TaggerConfig {
    pub fn new(vocab_size: usize, num_tags: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            context_window: 1,
            hidden_dim: 384,
            num_layers: 2,
            num_tags,
            max_len: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.num_layers != 2 {
            return Err(TaggerError::Config(format!(
                "num_layers must be 2, got {}",
                self.num_layers
            )));
        }
        // the two reserved vocabulary rows always exist
        if self.vocab_size < 2 {
            return Err(TaggerError::Config("vocab_size must be at least 2".into()));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_tags", self.num_tags),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(TaggerError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.context_window + 1
    }

    pub fn input_dim(&self) -> usize {
        self.window_len() * self.embed_dim
    }

    pub fn num_params(&self) -> usize {
        let (d, h, t) = (self.input_dim(), self.hidden_dim, self.num_tags);
        self.vocab_size * self.embed_dim + d * h + h + h * h + h + h * t + t
    }
}

/// The seven parameter tensors. Biases are stored as `1 x n` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub embeddings: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

/// Accumulated `dL/dtheta`, co-shaped with [`ParamSet`].
pub type Gradients = ParamSet;

pub const TENSOR_NAMES: [&str; 7] = ["embeddings", "w1", "b1", "w2", "b2", "w_out", "b_out"];

impl ParamSet {
    pub fn zeros(cfg: &TaggerConfig) -> Self {
        let (d, h, t) = (cfg.input_dim(), cfg.hidden_dim, cfg.num_tags);
        Self {
            embeddings: Array2::zeros((cfg.vocab_size, cfg.embed_dim)),
            w1: Array2::zeros((d, h)),
            b1: Array2::zeros((1, h)),
            w2: Array2::zeros((h, h)),
            b2: Array2::zeros((1, h)),
            w_out: Array2::zeros((h, t)),
            b_out: Array2::zeros((1, t)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            embeddings: z(&self.embeddings),
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
            w_out: z(&self.w_out),
            b_out: z(&self.b_out),
        }
    }

    pub fn tensors(&self) -> [&Array2<f64>; 7] {
        [
            &self.embeddings,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 7] {
        [
            &mut self.embeddings,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn is_bias(index: usize) -> bool {
        matches!(TENSOR_NAMES[index], "b1" | "b2" | "b_out")
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.dim() == b.dim())
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.tensors_mut() {
            a.mapv_inplace(|v| v * factor);
        }
    }

    pub fn fill(&mut self, value: f64) {
        for a in self.tensors_mut() {
            a.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Value at flat position `i`, walking tensors in [`TENSOR_NAMES`] order.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t.as_slice().expect("standard layout")[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, value: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t.as_slice_mut().expect("standard layout")[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }
}

/// Trainable parameters plus a version counter that every update bumps,
/// so a forward cache can be matched to the weights it saw.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: TaggerConfig,
    pub values: ParamSet,
    version: u64,
}

impl ModelParams {
    pub fn from_values(config: TaggerConfig, values: ParamSet) -> Result<Self, TaggerError> {
        config.validate()?;
        if !values.same_shape(&ParamSet::zeros(&config)) {
            return Err(TaggerError::Config(
                "parameter shapes do not match the config".into(),
            ));
        }
        Ok(Self {
            config,
            values,
            version: 0,
        })
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access that invalidates outstanding caches.
    pub fn values_mut(&mut self) -> &mut ParamSet {
        self.version += 1;
        &mut self.values
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for affine layers and
/// `[-0.1, 0.1]` for embeddings, drawn from the config's seed.
pub fn init_params(cfg: &TaggerConfig) -> Result<ModelParams, TaggerError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "tagger/init");
    let mut values = ParamSet::zeros(cfg);
    values
        .embeddings
        .mapv_inplace(|_| rng.gen_range(-0.1..=0.1));
    let layers = [
        (&mut values.w1, &mut values.b1),
        (&mut values.w2, &mut values.b2),
        (&mut values.w_out, &mut values.b_out),
    ];
    for (w, b) in layers {
        let bound = 1.0 / (w.nrows() as f64).sqrt();
        w.mapv_inplace(|_| rng.gen_range(-bound..=bound));
        b.mapv_inplace(|_| rng.gen_range(-bound..=bound));
    }
    ModelParams::from_values(cfg.clone(), values)
}

/// Activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Vocabulary id feeding each window slot, `N x (2w + 1)`.
    window_ids: Array2<usize>,
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    probs: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// Row offsets of each sentence in `probs`, starting at 0.
    pub offsets: Vec<usize>,
    pub cache: ForwardCache,
}

impl ForwardOutput {
    pub fn sentence_probs(&self, j: usize) -> ArrayView2<'_, f64> {
        self.probs
            .slice(s![self.offsets[j]..self.offsets[j + 1], ..])
    }
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn forward(params: &ModelParams, tokens: &[usize]) -> Result<ForwardOutput, TaggerError> {
    forward_batch(params, &[tokens])
}

/// Run every sentence of a batch through the network as one stacked matrix.
/// Sentences longer than `max_len` are cut, with a warning.
pub fn forward_batch(
    params: &ModelParams,
    sentences: &[&[usize]],
) -> Result<ForwardOutput, TaggerError> {
    let cfg = &params.config;
    let p = &params.values;
    let w = cfg.context_window;
    let window = cfg.window_len();
    let dim = cfg.embed_dim;

    let mut offsets = vec![0];
    for tokens in sentences {
        if tokens.len() > cfg.max_len {
            log::warn!(
                "truncating sentence of {} tokens to max_len {}",
                tokens.len(),
                cfg.max_len
            );
        }
        let n = tokens.len().min(cfg.max_len);
        if let Some(&id) = tokens[..n].iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(TaggerError::Vocab {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        offsets.push(offsets.last().unwrap() + n);
    }
    let rows = *offsets.last().unwrap();

    let mut window_ids = Array2::from_elem((rows, window), Vocabulary::BOUNDARY);
    let mut x = Array2::zeros((rows, cfg.input_dim()));
    let mut r = 0;
    for tokens in sentences {
        let n = tokens.len().min(cfg.max_len);
        for i in 0..n {
            for c in 0..window {
                // position i + c - w, guarding both edges
                let pos = (i + c).checked_sub(w).filter(|&q| q < n);
                let id = pos.map_or(Vocabulary::BOUNDARY, |q| tokens[q]);
                window_ids[[r, c]] = id;
                x.slice_mut(s![r, c * dim..(c + 1) * dim])
                    .assign(&p.embeddings.row(id));
            }
            r += 1;
        }
    }

    let relu = |v: f64| v.max(0.0);
    let h1 = (x.dot(&p.w1) + &p.b1).mapv_into(relu);
    let h2 = (h1.dot(&p.w2) + &p.b2).mapv_into(relu);
    let logits = h2.dot(&p.w_out) + &p.b_out;
    let probs = softmax(&logits);
    Ok(ForwardOutput {
        probs: probs.clone(),
        logits,
        offsets,
        cache: ForwardCache {
            version: params.version,
            window_ids,
            x,
            h1,
            h2,
            probs,
        },
    })
}

/// Token-mean cross entropy over the labeled rows of a batch and its
/// gradient with respect to the logits (`(probs - onehot) / n`).
///
/// `gold[j]` covers the rows of sentence `j`; rows of a batch are the
/// sentences in order.
pub fn cross_entropy(
    probs: ArrayView2<'_, f64>,
    gold: &[Option<&[TagId]>],
    epsilon: f64,
) -> Result<(f64, Array2<f64>), TaggerError> {
    let mut flat = Vec::with_capacity(probs.nrows());
    for (j, g) in gold.iter().enumerate() {
        flat.extend_from_slice(g.ok_or(TaggerError::Unlabeled(j))?);
    }
    if flat.len() != probs.nrows() {
        return Err(TaggerError::GoldLength {
            gold: flat.len(),
            rows: probs.nrows(),
        });
    }
    let n = flat.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_logits = probs.to_owned();
    for (i, &g) in flat.iter().enumerate() {
        loss -= probs[[i, g]].max(epsilon).ln();
        d_logits[[i, g]] -= 1.0;
    }
    d_logits.mapv_inplace(|v| v / n);
    Ok((loss / n, d_logits))
}

/// Chain rule through the softmax:
/// `dL/dz[i,j] = sum_k dL/dM[i,k] * M[i,k] * (delta_kj - M[i,j])`.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, d_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    Zip::from(out.rows_mut())
        .and(probs.rows())
        .and(d_probs.rows())
        .for_each(|mut o, m, d| {
            let inner = m.dot(&d);
            Zip::from(&mut o)
                .and(&m)
                .and(&d)
                .for_each(|o, &mj, &dj| *o = mj * (dj - inner));
        });
    out
}

/// Gradients of the loss with respect to every parameter, given the loss
/// gradient at the logits and, optionally, at the probabilities. Both
/// contributions are summed at the logits before propagating.
pub fn backward(
    cache: &ForwardCache,
    params: &ModelParams,
    d_logits: Option<&Array2<f64>>,
    d_probs: Option<&Array2<f64>>,
) -> Result<Gradients, TaggerError> {
    if cache.version != params.version {
        return Err(TaggerError::StaleCache {
            cache: cache.version,
            params: params.version,
        });
    }
    let expected = cache.probs.dim();
    let mut dz = Array2::zeros(expected);
    for seed in [d_logits, d_probs].into_iter().flatten() {
        if seed.dim() != expected {
            return Err(TaggerError::SeedShape {
                found: seed.dim(),
                expected,
            });
        }
    }
    if let Some(d) = d_logits {
        dz += d;
    }
    if let Some(d) = d_probs {
        dz += &softmax_backward(cache.probs.view(), d.view());
    }

    let p = &params.values;
    let mut g = p.zeros_like();
    let sum_rows = |a: &Array2<f64>| a.sum_axis(Axis(0)).insert_axis(Axis(0));

    g.w_out = cache.h2.t().dot(&dz);
    g.b_out = sum_rows(&dz);
    let mut dh2 = dz.dot(&p.w_out.t());
    Zip::from(&mut dh2)
        .and(&cache.h2)
        .for_each(|d, &h| if h <= 0.0 { *d = 0.0 });

    g.w2 = cache.h1.t().dot(&dh2);
    g.b2 = sum_rows(&dh2);
    let mut dh1 = dh2.dot(&p.w2.t());
    Zip::from(&mut dh1)
        .and(&cache.h1)
        .for_each(|d, &h| if h <= 0.0 { *d = 0.0 });

    g.w1 = cache.x.t().dot(&dh1);
    g.b1 = sum_rows(&dh1);
    let dx = dh1.dot(&p.w1.t());

    let dim = params.config.embed_dim;
    for (r, ids) in cache.window_ids.rows().into_iter().enumerate() {
        for (c, &id) in ids.iter().enumerate() {
            let mut row = g.embeddings.row_mut(id);
            row += &dx.slice(s![r, c * dim..(c + 1) * dim]);
        }
    }
    Ok(g)
}

/// Per-row argmax; ties go to the lowest tag index.
pub fn predict(probs: ArrayView2<'_, f64>) -> Vec<TagId> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(seed: u64) -> TaggerConfig {
        TaggerConfig {
            vocab_size: 10,
            embed_dim: 3,
            context_window: 1,
            hidden_dim: 5,
            num_layers: 2,
            num_tags: 4,
            max_len: 16,
            seed,
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(&small(1)).unwrap();
        let b = init_params(&small(1)).unwrap();
        let c = init_params(&small(2)).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
        assert!(a.values.embeddings.iter().all(|v| v.abs() <= 0.1));
        let bound = 1.0 / (9f64).sqrt();
        assert!(a.values.w1.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn default_head_shape() {
        let cfg = TaggerConfig::new(100, 4);
        let p = ParamSet::zeros(&cfg);
        assert_eq!(p.w_out.dim(), (384, 4));
        assert_eq!(p.w2.dim(), (384, 384));
        assert_eq!(p.num_values(), cfg.num_params());
    }

    #[test]
    fn config_checks() {
        let mut cfg = small(0);
        cfg.num_layers = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small(0);
        cfg.hidden_dim = 0;
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn rows_are_distributions() {
        let p = init_params(&small(3)).unwrap();
        let out = forward_batch(&p, &[&[2, 3, 4], &[9]]).unwrap();
        assert_eq!(out.offsets, vec![0, 3, 4]);
        for row in out.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.sentence_probs(1).nrows(), 1);
    }

    #[test]
    fn zero_params_give_uniform() {
        let cfg = small(0);
        let p = ModelParams::from_values(cfg.clone(), ParamSet::zeros(&cfg)).unwrap();
        let out = forward(&p, &[2, 5]).unwrap();
        assert!(out.probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn vocab_and_length_limits() {
        let mut cfg = small(0);
        cfg.max_len = 2;
        let p = init_params(&cfg).unwrap();
        assert_eq!(
            forward(&p, &[2, 10]).unwrap_err(),
            TaggerError::Vocab {
                id: 10,
                vocab_size: 10
            }
        );
        let out = forward(&p, &[2, 3, 4]).unwrap();
        assert_eq!(out.probs.nrows(), 2);
    }

    #[test]
    fn cross_entropy_values() {
        let probs = array![[0.7, 0.3]];
        let (l, d) = cross_entropy(probs.view(), &[Some(&[1][..])], 1e-12).unwrap();
        assert!((l - 1.2039728043259361).abs() < 1e-12);
        assert!((d[[0, 0]] - 0.7).abs() < 1e-12 && (d[[0, 1]] + 0.7).abs() < 1e-12);

        let uniform = Array2::from_elem((3, 4), 0.25);
        let (l, _) = cross_entropy(uniform.view(), &[Some(&[0, 1, 2][..])], 1e-12).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let exact = array![[1.0, 0.0], [0.0, 1.0]];
        let (l, _) = cross_entropy(exact.view(), &[Some(&[0, 1][..])], 1e-12).unwrap();
        assert_eq!(l, 0.0);

        assert_eq!(
            cross_entropy(exact.view(), &[None], 1e-12).unwrap_err(),
            TaggerError::Unlabeled(0)
        );
        assert!(matches!(
            cross_entropy(exact.view(), &[Some(&[0][..])], 1e-12),
            Err(TaggerError::GoldLength { .. })
        ));
    }

    #[test]
    fn argmax_ties_low() {
        let probs = array![[0.1, 0.6, 0.2, 0.1], [0.25, 0.25, 0.25, 0.25], [0.1, 0.4, 0.1, 0.4]];
        assert_eq!(predict(probs.view()), vec![1, 0, 1]);
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = array![[1.0, -2.0, 0.5]];
        let shifted = z.mapv(|v| v + 123.0);
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        assert_eq!(predict(a.view()), predict(b.view()));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = init_params(&small(4)).unwrap();
        let out = forward(&p, &[2, 3]).unwrap();
        p.values_mut().b_out[[0, 0]] += 1.0;
        let d = Array2::zeros(out.probs.raw_dim());
        assert!(matches!(
            backward(&out.cache, &p, Some(&d), None),
            Err(TaggerError::StaleCache { .. })
        ));
    }

    #[test]
    fn duplicated_sentence_doubles_embedding_grad() {
        let p = init_params(&small(5)).unwrap();
        let sentence: &[usize] = &[4, 7, 8];
        let grad_for = |batch: &[&[usize]]| {
            let out = forward_batch(&p, batch).unwrap();
            // unnormalized CE so the batch size does not rescale it
            let mut d = out.probs.clone();
            for r in 0..d.nrows() {
                d[[r, r % 3]] -= 1.0;
            }
            backward(&out.cache, &p, Some(&d), None).unwrap()
        };
        let once = grad_for(&[sentence]);
        let twice = grad_for(&[sentence, sentence]);
        for id in [4, 7, 8] {
            for c in 0..3 {
                let (a, b) = (once.embeddings[[id, c]], twice.embeddings[[id, c]]);
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_correct_predictions_have_tiny_gradient() {
        let cfg = small(6);
        let mut p = init_params(&cfg).unwrap();
        // bias the output so tag 2 wins everywhere with near-certainty
        p.values_mut().b_out[[0, 2]] = 60.0;
        let out = forward(&p, &[2, 3, 4]).unwrap();
        let gold = [2, 2, 2];
        let (_, d) = cross_entropy(out.probs.view(), &[Some(&gold[..])], 1e-12).unwrap();
        let g = backward(&out.cache, &p, Some(&d), None).unwrap();
        assert!(g.norm() < 1e-20);
    }

    #[test]
    fn flat_access() {
        let mut p = ParamSet::zeros(&small(0));
        let n = p.num_values();
        p.set_flat(n - 1, 3.0);
        assert_eq!(p.b_out[[0, 3]], 3.0);
        assert_eq!(p.get_flat(n - 1), 3.0);
        p.set_flat(0, -1.0);
        assert_eq!(p.embeddings[[0, 0]], -1.0);
    }
}
