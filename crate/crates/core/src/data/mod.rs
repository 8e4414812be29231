//! Corpora, CoNLL-style TSV I/O and vocabulary.

mod batch;
mod synth;

pub use batch::{make_batches, BatchIndices, JointBatcher};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpora, CUE_WORDS};

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::KvError;
use crate::tagging::{TagError, TagId, TagScheme};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: expected {expected} column(s), found {found}")]
    Format {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Tag(#[from] TagError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// Vocabulary ids; all `UNK` until [`Corpus::assign_ids`] runs.
    pub token_ids: Vec<usize>,
    pub gold: Option<Vec<TagId>>,
    pub domain: Domain,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, gold: Option<Vec<TagId>>, domain: Domain) -> Self {
        debug_assert!(gold.as_ref().is_none_or(|g| g.len() == tokens.len()));
        let token_ids = vec![Vocabulary::UNK; tokens.len()];
        Self {
            tokens,
            token_ids,
            gold,
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub labeled_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub scheme: TagScheme,
}

impl Corpus {
    pub fn new(scheme: TagScheme) -> Self {
        Self {
            sentences: Vec::new(),
            scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let labeled = self.sentences.iter().filter(|s| s.gold.is_some()).count();
        CorpusStats {
            sentences: self.len(),
            tokens: self.sentences.iter().map(Sentence::len).sum(),
            labeled_fraction: if self.is_empty() {
                0.0
            } else {
                labeled as f64 / self.len() as f64
            },
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.sentences.iter().all(|s| s.gold.is_some())
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        for s in &mut self.sentences {
            s.domain = domain;
        }
        self
    }

    /// Drop gold labels, as for target-domain training text.
    pub fn unlabeled(mut self) -> Self {
        for s in &mut self.sentences {
            s.gold = None;
        }
        self
    }

    /// Cut sentences longer than `max_len`. Returns how many were cut.
    pub fn truncate(&mut self, max_len: usize) -> usize {
        let mut cut = 0;
        for s in self.sentences.iter_mut().filter(|s| s.len() > max_len) {
            log::warn!("truncating sentence of {} tokens to {max_len}", s.len());
            s.tokens.truncate(max_len);
            s.token_ids.truncate(max_len);
            if let Some(g) = &mut s.gold {
                g.truncate(max_len);
            }
            cut += 1;
        }
        cut
    }

    pub fn assign_ids(&mut self, vocab: &Vocabulary) {
        for s in &mut self.sentences {
            s.token_ids = vocab.encode(&s.tokens);
        }
    }
}

/// Read one-token-per-line TSV. Labeled input has `token<TAB>label` lines,
/// unlabeled input a bare token; blank lines end sentences.
///
/// Labeled corpora are tagged [`Domain::Source`], unlabeled ones
/// [`Domain::Target`]; use [`Corpus::with_domain`] to override.
pub fn parse_conll<R: BufRead>(
    reader: R,
    scheme: &TagScheme,
    labeled: bool,
) -> Result<Corpus, DataError> {
    let expected = if labeled { 2 } else { 1 };
    let domain = if labeled { Domain::Source } else { Domain::Target };
    let mut corpus = Corpus::new(scheme.clone());
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<TagId>| {
        if tokens.is_empty() {
            return;
        }
        let gold = labeled.then(|| std::mem::take(tags));
        corpus
            .sentences
            .push(Sentence::new(std::mem::take(tokens), gold, domain));
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected {
            return Err(DataError::Format {
                line: i + 1,
                expected,
                found: cols.len(),
            });
        }
        if labeled {
            let tag = scheme
                .tag_id(cols[1])
                .ok_or_else(|| DataError::UnknownLabel {
                    line: i + 1,
                    label: cols[1].to_string(),
                })?;
            tags.push(tag);
        }
        tokens.push(cols[0].to_string());
    }
    flush(&mut tokens, &mut tags);
    Ok(corpus)
}

pub fn parse_conll_str(text: &str, scheme: &TagScheme, labeled: bool) -> Result<Corpus, DataError> {
    parse_conll(text.as_bytes(), scheme, labeled)
}

/// Inverse of [`parse_conll`]. Sentences without gold are written as a
/// single column.
pub fn write_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (i, tok) in s.tokens.iter().enumerate() {
            out.push_str(tok);
            if let Some(g) = &s.gold {
                out.push('\t');
                out.push_str(corpus.scheme.tag_name(g[i]).expect("gold tag in scheme"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Token vocabulary. Ids 0 and 1 are reserved for unknown tokens and the
/// sentence-boundary padding used by the context window. Lookup is
/// case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const BOUNDARY: usize = 1;
    pub const UNK_TOKEN: &'static str = "<unk>";
    pub const BOUNDARY_TOKEN: &'static str = "<boundary>";

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(Self::UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(&token.to_lowercase())
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Lowercased vocabulary over all given corpora. Tokens seen at least
/// `min_count` times are kept, most frequent first, ties by first occurrence.
pub fn build_vocab(corpora: &[&Corpus], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    // token -> (count, first position)
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut position = 0;
    for corpus in corpora {
        for tok in corpus.sentences.iter().flat_map(|s| &s.tokens) {
            let entry = counts.entry(tok.to_lowercase()).or_insert((0, position));
            entry.0 += 1;
            position += 1;
        }
    }
    let mut kept: Vec<(String, (usize, usize))> = counts
        .into_iter()
        .filter(|(t, (c, _))| {
            *c >= min_count && t != Vocabulary::UNK_TOKEN && t != Vocabulary::BOUNDARY_TOKEN
        })
        .collect();
    kept.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let tokens = [Vocabulary::UNK_TOKEN, Vocabulary::BOUNDARY_TOKEN]
        .into_iter()
        .map(String::from)
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect::<Vec<_>>();
    Vocabulary::from(tokens)
}
