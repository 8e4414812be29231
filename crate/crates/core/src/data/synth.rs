//! Seeded two-domain corpus generator.
//!
//! Sentences are filler words from a shared vocabulary with aspect phrases
//! embedded in them. Every aspect phrase is preceded by a sentiment cue word
//! (`great`, `awful`, ...) whose polarity is the phrase's gold sentiment;
//! the cue lexicon and its polarity are shared by both domains, while the
//! aspect lexicons are disjoint. Cue words also occur in front of plain
//! filler ("distractors"), so a cue alone does not mark an aspect and a
//! tagger trained on the source domain has to lean on aspect identity.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Corpus, DataError, Domain, Sentence};
use crate::kv::KvMap;
use crate::rng::{self, Rng};
use crate::tagging::{TagScheme, OUTSIDE};

/// Cue words per sentiment, in `POS, NEU, NEG` order.
pub const CUE_WORDS: [[&str; 3]; 3] = [
    ["great", "excellent", "lovely"],
    ["okay", "average", "decent"],
    ["awful", "terrible", "poor"],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_source_train: usize,
    pub n_target_unlabeled: usize,
    pub n_target_test: usize,
    pub shared_vocab_size: usize,
    pub source_aspect_lexicon_size: usize,
    pub target_aspect_lexicon_size: usize,
    pub source_lexicon_prefix: String,
    pub target_lexicon_prefix: String,
    pub aspect_len_range: (usize, usize),
    /// Probabilities of `POS, NEU, NEG`.
    pub sentiment_distribution: [f64; 3],
    /// Filler words per sentence.
    pub sentence_len_range: (usize, usize),
    pub max_aspects_per_sentence: usize,
    /// Expected number of distractor cues per sentence.
    pub distractor_rate: f64,
    /// Filler words are drawn with weight `1 / (rank + 1)^s`; 0 is uniform.
    /// A heavy tail gives both domains many rarely seen `O` words.
    pub filler_zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source_train: 400,
            n_target_unlabeled: 400,
            n_target_test: 200,
            shared_vocab_size: 2000,
            source_aspect_lexicon_size: 30,
            target_aspect_lexicon_size: 30,
            source_lexicon_prefix: "src".into(),
            target_lexicon_prefix: "tgt".into(),
            aspect_len_range: (1, 3),
            sentiment_distribution: [0.5, 0.2, 0.3],
            sentence_len_range: (12, 20),
            max_aspects_per_sentence: 2,
            distractor_rate: 2.0,
            filler_zipf_exponent: 1.2,
            seed: 2023,
        }
    }
}

const KEYS: &[&str] = &[
    "n_source_train",
    "n_target_unlabeled",
    "n_target_test",
    "shared_vocab_size",
    "source_aspect_lexicon_size",
    "target_aspect_lexicon_size",
    "source_lexicon_prefix",
    "target_lexicon_prefix",
    "aspect_len_min",
    "aspect_len_max",
    "sentiment_pos",
    "sentiment_neu",
    "sentiment_neg",
    "sentence_len_min",
    "sentence_len_max",
    "max_aspects_per_sentence",
    "distractor_rate",
    "filler_zipf_exponent",
    "seed",
];

impl SynthConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self, DataError> {
        kv.check_known(KEYS)?;
        let mut c = Self::default();
        kv.read("n_source_train", &mut c.n_source_train)?;
        kv.read("n_target_unlabeled", &mut c.n_target_unlabeled)?;
        kv.read("n_target_test", &mut c.n_target_test)?;
        kv.read("shared_vocab_size", &mut c.shared_vocab_size)?;
        kv.read("source_aspect_lexicon_size", &mut c.source_aspect_lexicon_size)?;
        kv.read("target_aspect_lexicon_size", &mut c.target_aspect_lexicon_size)?;
        kv.read("source_lexicon_prefix", &mut c.source_lexicon_prefix)?;
        kv.read("target_lexicon_prefix", &mut c.target_lexicon_prefix)?;
        kv.read("aspect_len_min", &mut c.aspect_len_range.0)?;
        kv.read("aspect_len_max", &mut c.aspect_len_range.1)?;
        kv.read("sentiment_pos", &mut c.sentiment_distribution[0])?;
        kv.read("sentiment_neu", &mut c.sentiment_distribution[1])?;
        kv.read("sentiment_neg", &mut c.sentiment_distribution[2])?;
        kv.read("sentence_len_min", &mut c.sentence_len_range.0)?;
        kv.read("sentence_len_max", &mut c.sentence_len_range.1)?;
        kv.read("max_aspects_per_sentence", &mut c.max_aspects_per_sentence)?;
        kv.read("distractor_rate", &mut c.distractor_rate)?;
        kv.read("filler_zipf_exponent", &mut c.filler_zipf_exponent)?;
        kv.read("seed", &mut c.seed)?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("n_source_train", self.n_source_train);
        kv.set("n_target_unlabeled", self.n_target_unlabeled);
        kv.set("n_target_test", self.n_target_test);
        kv.set("shared_vocab_size", self.shared_vocab_size);
        kv.set("source_aspect_lexicon_size", self.source_aspect_lexicon_size);
        kv.set("target_aspect_lexicon_size", self.target_aspect_lexicon_size);
        kv.set("source_lexicon_prefix", &self.source_lexicon_prefix);
        kv.set("target_lexicon_prefix", &self.target_lexicon_prefix);
        kv.set("aspect_len_min", self.aspect_len_range.0);
        kv.set("aspect_len_max", self.aspect_len_range.1);
        kv.set("sentiment_pos", self.sentiment_distribution[0]);
        kv.set("sentiment_neu", self.sentiment_distribution[1]);
        kv.set("sentiment_neg", self.sentiment_distribution[2]);
        kv.set("sentence_len_min", self.sentence_len_range.0);
        kv.set("sentence_len_max", self.sentence_len_range.1);
        kv.set("max_aspects_per_sentence", self.max_aspects_per_sentence);
        kv.set("distractor_rate", self.distractor_rate);
        kv.set("filler_zipf_exponent", self.filler_zipf_exponent);
        kv.set("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        let counts = [
            ("n_source_train", self.n_source_train),
            ("n_target_unlabeled", self.n_target_unlabeled),
            ("n_target_test", self.n_target_test),
            ("shared_vocab_size", self.shared_vocab_size),
            ("source_aspect_lexicon_size", self.source_aspect_lexicon_size),
            ("target_aspect_lexicon_size", self.target_aspect_lexicon_size),
            ("max_aspects_per_sentence", self.max_aspects_per_sentence),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        let (lo, hi) = self.aspect_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("aspect length range [{lo}, {hi}] is empty"));
        }
        let (lo, hi) = self.sentence_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("sentence length range [{lo}, {hi}] is empty"));
        }
        let d = &self.sentiment_distribution;
        if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("sentiment distribution {d:?} does not sum to 1"));
        }
        if !(0.0..=8.0).contains(&self.distractor_rate) {
            return bad(format!("distractor rate {} outside [0, 8]", self.distractor_rate));
        }
        if !(0.0..=4.0).contains(&self.filler_zipf_exponent) {
            return bad(format!(
                "filler Zipf exponent {} outside [0, 4]",
                self.filler_zipf_exponent
            ));
        }
        let lex = self.lexicons();
        let mut seen = HashSet::new();
        for word in lex.iter().flatten() {
            if !seen.insert(word.as_str()) {
                return bad(format!(
                    "word {word:?} appears in more than one lexicon; source and target aspect lexicons must be disjoint"
                ));
            }
        }
        Ok(())
    }

    /// `[filler, cues, source aspects, target aspects]`.
    fn lexicons(&self) -> [Vec<String>; 4] {
        let words = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        [
            words("w", self.shared_vocab_size),
            CUE_WORDS.iter().flatten().map(|s| s.to_string()).collect(),
            words(&self.source_lexicon_prefix, self.source_aspect_lexicon_size),
            words(&self.target_lexicon_prefix, self.target_aspect_lexicon_size),
        ]
    }

    pub fn source_lexicon(&self) -> Vec<String> {
        let [_, _, s, _] = self.lexicons();
        s
    }

    pub fn target_lexicon(&self) -> Vec<String> {
        let [_, _, _, t] = self.lexicons();
        t
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpora {
    pub source_train: Corpus,
    pub target_unlabeled: Corpus,
    pub target_test: Corpus,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    filler: Vec<String>,
    filler_weights: WeightedIndex<f64>,
    sentiment: WeightedIndex<f64>,
}

enum Segment<'a> {
    Filler(&'a str),
    Cue(usize),
    Aspect(usize, Vec<&'a str>),
}

impl Generator<'_> {
    fn cue(&self, sentiment: usize, rng: &mut Rng) -> &'static str {
        CUE_WORDS[sentiment].choose(rng).expect("cue lists are non-empty")
    }

    fn sentence(&self, lexicon: &[String], domain: Domain, rng: &mut Rng) -> Sentence {
        let cfg = self.cfg;
        let n_filler = rng.gen_range(cfg.sentence_len_range.0..=cfg.sentence_len_range.1);
        let n_aspects = rng.gen_range(0..=cfg.max_aspects_per_sentence);
        // Poisson-free split of the rate into a whole part and a coin flip
        let whole = cfg.distractor_rate.floor();
        let n_distractors = whole as usize + usize::from(rng.gen_bool(cfg.distractor_rate - whole));

        let mut segments = Vec::new();
        for _ in 0..n_filler {
            segments.push(Segment::Filler(&self.filler[self.filler_weights.sample(rng)]));
        }
        for _ in 0..n_distractors {
            segments.push(Segment::Cue(self.sentiment.sample(rng)));
        }
        for _ in 0..n_aspects {
            let len = rng.gen_range(cfg.aspect_len_range.0..=cfg.aspect_len_range.1);
            let words = (0..len)
                .map(|_| lexicon.choose(rng).expect("lexicon").as_str())
                .collect();
            segments.push(Segment::Aspect(self.sentiment.sample(rng), words));
        }
        segments.shuffle(rng);

        let mut tokens = Vec::new();
        let mut gold = Vec::new();
        for seg in segments {
            match seg {
                Segment::Filler(w) => {
                    tokens.push(w.to_string());
                    gold.push(OUTSIDE);
                }
                Segment::Cue(s) => {
                    tokens.push(self.cue(s, rng).to_string());
                    gold.push(OUTSIDE);
                }
                Segment::Aspect(s, words) => {
                    tokens.push(self.cue(s, rng).to_string());
                    gold.push(OUTSIDE);
                    for w in words {
                        tokens.push(w.to_string());
                        // unified tag ids: POS=1, NEU=2, NEG=3
                        gold.push(s + 1);
                    }
                }
            }
        }
        Sentence::new(tokens, Some(gold), domain)
    }

    fn corpus(&self, n: usize, lexicon: &[String], domain: Domain, rng: &mut Rng) -> Corpus {
        Corpus {
            sentences: (0..n).map(|_| self.sentence(lexicon, domain, rng)).collect(),
            scheme: TagScheme::unified(),
        }
    }
}

/// Generate labeled source training text, unlabeled target text and a
/// labeled target test set.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpora, DataError> {
    cfg.validate()?;
    let [filler, _, source_lex, target_lex] = cfg.lexicons();
    let weights = (0..filler.len()).map(|r| (r as f64 + 1.0).powf(-cfg.filler_zipf_exponent));
    let gen = Generator {
        cfg,
        filler_weights: WeightedIndex::new(weights).map_err(|e| DataError::Config(e.to_string()))?,
        filler,
        sentiment: WeightedIndex::new(cfg.sentiment_distribution)
            .map_err(|e| DataError::Config(e.to_string()))?,
    };
    let source_train = gen.corpus(
        cfg.n_source_train,
        &source_lex,
        Domain::Source,
        &mut rng::stream(cfg.seed, "synth/source"),
    );
    let target_unlabeled = gen
        .corpus(
            cfg.n_target_unlabeled,
            &target_lex,
            Domain::Target,
            &mut rng::stream(cfg.seed, "synth/target-unlabeled"),
        )
        .unlabeled();
    let target_test = gen.corpus(
        cfg.n_target_test,
        &target_lex,
        Domain::Target,
        &mut rng::stream(cfg.seed, "synth/target-test"),
    );
    Ok(SynthCorpora {
        source_train,
        target_unlabeled,
        target_test,
    })
}
