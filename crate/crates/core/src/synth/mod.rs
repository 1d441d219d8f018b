//! Deterministic two-language corpus generator.
//!
//! The matrix language speaks single-character tokens from the CJK block;
//! the embedded language speaks Latin-letter words separated by spaces.
//! Every spoken token owns a Gaussian prototype in feature space, and each
//! occurrence of a token emits `k` noisy copies of its prototype, `k` drawn
//! uniformly from the configured frame range. Code-switched utterances walk
//! a two-state Markov chain over units (one matrix character or one
//! embedded word) and always start in the matrix language.
//!
//! All randomness comes from one [`SplitMix64`] seeded with
//! `CorpusConfig::seed`, consumed in this order: prototypes, then
//! utterances by condition (mono-a, mono-b, cs) and split (train, val,
//! test).

pub(crate) mod io;

use std::fmt;
use std::str::FromStr;

pub use io::{read_corpus, write_corpus};

use crate::ctc::CtcTarget;
use crate::error::{Error, Result};
use crate::kv::{parse_pair, parse_value, KvDoc};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::vocab::{Unknown, Vocab, BLANK_TOKEN};

/// Words of the embedded language. No word repeats a letter back to back,
/// so consecutive frames of one token never need a separating blank.
pub const EMBEDDED_WORDS: [&str; 15] = [
    "go", "ok", "hi", "yes", "bus", "car", "map", "shop", "milk", "time", "work", "plan", "film",
    "taxi", "menu",
];

pub const PUNCTUATION: [&str; 5] = [".", ",", "?", "!", "'"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lang {
    Matrix,
    Embedded,
}

impl Lang {
    pub fn index(self) -> usize {
        match self {
            Lang::Matrix => 0,
            Lang::Embedded => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Lang::Matrix),
            1 => Ok(Lang::Embedded),
            _ => Err(Error::Lookup(format!("unknown language id {i}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    MonoMatrix,
    MonoEmbedded,
    CodeSwitched,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::MonoMatrix, Condition::MonoEmbedded, Condition::CodeSwitched];

    pub fn name(self) -> &'static str {
        match self {
            Condition::MonoMatrix => "mono-a",
            Condition::MonoEmbedded => "mono-b",
            Condition::CodeSwitched => "cs",
        }
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown split {s:?}")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where language switches may happen inside code-switched utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Switching {
    /// Two-state Markov chain at every unit boundary (intra-sentential).
    Markov,
    /// Matrix first half, embedded second half (inter-sentential).
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub mono_counts: [usize; 3],
    pub cs_counts: [usize; 3],
    /// Inclusive range of transcript tokens per utterance. Generation stops
    /// at the first unit boundary at or beyond the drawn length.
    pub tokens_per_utterance: (usize, usize),
    pub p_to_embedded: f64,
    pub p_to_matrix: f64,
    pub switching: Switching,
    pub frames_per_token: (usize, usize),
    pub noise_sigma: f64,
    pub d_feature: usize,
    pub matrix_symbols: usize,
    /// Distance between the two languages' prototype centroids.
    pub language_offset: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mono_counts: [300, 50, 100],
            cs_counts: [400, 50, 100],
            tokens_per_utterance: (6, 12),
            p_to_embedded: 0.15,
            p_to_matrix: 0.4,
            switching: Switching::Markov,
            frames_per_token: (2, 4),
            noise_sigma: 0.3,
            d_feature: 32,
            matrix_symbols: 20,
            language_offset: 1.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (fmin, fmax) = self.frames_per_token;
        let (tmin, tmax) = self.tokens_per_utterance;
        if fmin == 0 || fmin > fmax {
            return Err(Error::Config(format!("frames_per_token {fmin},{fmax} is not a valid range")));
        }
        if tmin == 0 || tmin > tmax {
            return Err(Error::Config(format!("tokens_per_utterance {tmin},{tmax} is not a valid range")));
        }
        if self.switching == Switching::Midpoint && tmin < 2 {
            return Err(Error::Config("midpoint switching needs at least 2 tokens per utterance".into()));
        }
        if self.matrix_symbols == 0 || self.matrix_symbols > 0x5200 {
            return Err(Error::Config("matrix alphabet is empty or too large".into()));
        }
        if self.d_feature == 0 {
            return Err(Error::Config("d_feature must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        for (name, p) in [("p_to_embedded", self.p_to_embedded), ("p_to_matrix", self.p_to_matrix)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.switching == Switching::Markov && self.p_to_embedded == 0.0 && self.cs_counts.iter().any(|&c| c > 0) {
            return Err(Error::Config("p_to_embedded = 0 cannot produce code-switched utterances".into()));
        }
        Ok(())
    }

    fn fmt_counts(c: [usize; 3]) -> String {
        format!("{},{},{}", c[0], c[1], c[2])
    }

    fn parse_counts(key: &str, v: &str) -> Result<[usize; 3]> {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("{key} expects train,val,test counts")));
        }
        Ok([parse_value(key, parts[0])?, parse_value(key, parts[1])?, parse_value(key, parts[2])?])
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("seed", self.seed);
        d.set("mono_counts", Self::fmt_counts(self.mono_counts));
        d.set("cs_counts", Self::fmt_counts(self.cs_counts));
        d.set(
            "tokens_per_utterance",
            format!("{},{}", self.tokens_per_utterance.0, self.tokens_per_utterance.1),
        );
        d.set("p_to_embedded", self.p_to_embedded);
        d.set("p_to_matrix", self.p_to_matrix);
        d.set(
            "switching",
            match self.switching {
                Switching::Markov => "markov",
                Switching::Midpoint => "midpoint",
            },
        );
        d.set("frames_per_token", format!("{},{}", self.frames_per_token.0, self.frames_per_token.1));
        d.set("noise_sigma", self.noise_sigma);
        d.set("d_feature", self.d_feature);
        d.set("matrix_symbols", self.matrix_symbols);
        d.set("language_offset", self.language_offset);
        d
    }

    /// Applies one key. Returns `false` for keys this config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "mono_counts" => self.mono_counts = Self::parse_counts(key, value)?,
            "cs_counts" => self.cs_counts = Self::parse_counts(key, value)?,
            "mono_train" => self.mono_counts[0] = parse_value(key, value)?,
            "cs_train" => self.cs_counts[0] = parse_value(key, value)?,
            "tokens_per_utterance" => self.tokens_per_utterance = parse_pair(key, value)?,
            "p_to_embedded" => self.p_to_embedded = parse_value(key, value)?,
            "p_to_matrix" => self.p_to_matrix = parse_value(key, value)?,
            "switching" => {
                self.switching = match value {
                    "markov" => Switching::Markov,
                    "midpoint" => Switching::Midpoint,
                    _ => return Err(Error::Config(format!("switching must be markov or midpoint, got {value:?}"))),
                }
            }
            "frames_per_token" => self.frames_per_token = parse_pair(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "d_feature" => self.d_feature = parse_value(key, value)?,
            "matrix_symbols" => self.matrix_symbols = parse_value(key, value)?,
            "language_offset" => self.language_offset = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = CorpusConfig::default();
        for (k, v) in doc.entries() {
            if !cfg.apply(k, v)? {
                return Err(Error::Config(format!("unknown corpus key {k}")));
            }
        }
        Ok(cfg)
    }
}

/// Spoken symbols of one language plus its LM-head token table.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    pub lang: Lang,
    /// Symbols that occur in speech, in prototype order.
    pub alphabet: Vec<String>,
    /// Word list for the word-token language; empty for the matrix language.
    pub words: Vec<String>,
    /// Prototype per alphabet entry, each `d_feature` long.
    pub prototypes: Vec<Vec<f64>>,
    pub token_table: Vocab,
    pub frames_per_token: (usize, usize),
    pub noise_sigma: f64,
}

impl LanguageSpec {
    pub fn prototype(&self, symbol: &str) -> Option<&[f64]> {
        self.alphabet.iter().position(|s| s == symbol).map(|i| self.prototypes[i].as_slice())
    }
}

fn latin_letters() -> impl Iterator<Item = String> {
    ('a'..='z').map(String::from)
}

fn digits() -> impl Iterator<Item = String> {
    ('0'..='9').map(String::from)
}

/// Matrix symbols are consecutive code points from U+4E00.
pub fn matrix_alphabet(n: usize) -> Vec<String> {
    (0..n as u32)
        .map(|i| char::from_u32(0x4E00 + i).expect("CJK code point").to_string())
        .collect()
}

/// `blank, matrix symbols, a-z, 0-9, punctuation`. The Latin letters,
/// digits and punctuation mirror the shared characters present in every
/// pretrained head.
pub fn matrix_token_table(n_symbols: usize) -> Vocab {
    let tokens = std::iter::once(BLANK_TOKEN.to_string())
        .chain(matrix_alphabet(n_symbols))
        .chain(latin_letters())
        .chain(digits())
        .chain(PUNCTUATION.iter().map(|s| s.to_string()))
        .collect();
    Vocab::new(tokens).expect("matrix table is well formed")
}

/// `blank, space, a-z, 0-9, punctuation`.
pub fn embedded_token_table() -> Vocab {
    let tokens = [BLANK_TOKEN.to_string(), " ".to_string()]
        .into_iter()
        .chain(latin_letters())
        .chain(digits())
        .chain(PUNCTUATION.iter().map(|s| s.to_string()))
        .collect();
    Vocab::new(tokens).expect("embedded table is well formed")
}

fn embedded_alphabet() -> Vec<String> {
    let mut letters: Vec<char> = EMBEDDED_WORDS.iter().flat_map(|w| w.chars()).collect();
    letters.sort_unstable();
    letters.dedup();
    let mut out: Vec<String> = letters.into_iter().map(String::from).collect();
    out.push(" ".to_string());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start_token: usize,
    pub end_token: usize,
    pub lang: Lang,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    pub condition: Condition,
    pub n_frames: usize,
    pub d_feature: usize,
    /// Row-major `[n_frames, d_feature]`.
    pub features: Vec<f64>,
    pub transcript: String,
    /// Target under the utterance's native table: matrix for mono-a,
    /// embedded for mono-b, merged (matrix then embedded) for cs.
    pub target: Vec<usize>,
    /// 0 = matrix, 1 = embedded, one entry per frame.
    pub frame_lang: Vec<u8>,
    pub spans: Vec<Span>,
}

impl Utterance {
    pub fn features_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_frames, self.d_feature], self.features.clone())
            .expect("utterance features are well formed")
    }

    pub fn embedded_frame_count(&self) -> usize {
        self.frame_lang.iter().filter(|&&l| l == 1).count()
    }
}

/// Token table of the merged head: matrix entries followed by embedded
/// entries, with the matrix Latin letters, digits and punctuation and the
/// embedded blank blocked.
pub fn merged_token_table(matrix: &Vocab, embedded: &Vocab) -> Vocab {
    let tokens: Vec<String> = matrix.tokens().iter().chain(embedded.tokens()).cloned().collect();
    let blocked = merged_blocked_flags(matrix, embedded);
    Vocab::with_blocked(tokens, blocked).expect("merged table is well formed")
}

/// Entries of the merged head that must never be emitted.
pub fn merged_blocked_flags(matrix: &Vocab, embedded: &Vocab) -> Vec<bool> {
    let shared = |t: &str| {
        let mut cs = t.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) => c.is_ascii_alphabetic() || c.is_ascii_digit() || c.is_ascii_punctuation(),
            _ => false,
        }
    };
    matrix
        .tokens()
        .iter()
        .map(|t| shared(t))
        .chain(embedded.tokens().iter().enumerate().map(|(i, _)| i == crate::vocab::BLANK))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub languages: [LanguageSpec; 2],
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn language(&self, lang: Lang) -> &LanguageSpec {
        &self.languages[lang.index()]
    }

    pub fn select(&self, condition: Condition, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.condition == condition && u.split == split)
            .collect()
    }

    pub fn merged_vocab(&self) -> Vocab {
        merged_token_table(
            &self.languages[0].token_table,
            &self.languages[1].token_table,
        )
    }

    /// The table an utterance's stored target refers to.
    pub fn native_vocab(&self, condition: Condition) -> Vocab {
        match condition {
            Condition::MonoMatrix => self.languages[0].token_table.clone(),
            Condition::MonoEmbedded => self.languages[1].token_table.clone(),
            Condition::CodeSwitched => self.merged_vocab(),
        }
    }
}

/// CTC target for `transcript` under `vocab`, dropping characters the table
/// cannot produce (for example spaces under the matrix table).
pub fn target_for(transcript: &str, vocab: &Vocab) -> Result<CtcTarget> {
    CtcTarget::new(vocab.encode(transcript, Unknown::Skip)?, vocab.len())
}

fn sample_prototypes(
    rng: &mut SplitMix64,
    count: usize,
    dim: usize,
    centroid: &[f64],
    min_dist: f64,
    existing: &mut Vec<Vec<f64>>,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let cand: Vec<f64> = centroid.iter().map(|c| c + rng.normal()).collect();
        debug_assert_eq!(cand.len(), dim);
        let far = existing.iter().all(|p| {
            p.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > min_dist
        });
        if far {
            existing.push(cand.clone());
            out.push(cand);
        }
    }
    out
}

struct Token {
    symbol: String,
    lang: Lang,
}

/// Draws the unit sequence (as tokens) for one utterance.
fn draw_tokens(cfg: &CorpusConfig, cond: Condition, rng: &mut SplitMix64, matrix: &[String]) -> Vec<Token> {
    let (tmin, tmax) = cfg.tokens_per_utterance;
    loop {
        let target_len = rng.range_inclusive(tmin, tmax);
        let mut tokens: Vec<Token> = Vec::new();
        let mut state = match cond {
            Condition::MonoEmbedded => Lang::Embedded,
            _ => Lang::Matrix,
        };
        let mut last_unit_lang: Option<Lang> = None;
        let mut saw_embedded = false;
        let mut units = 0usize;
        while tokens.len() < target_len {
            match state {
                Lang::Matrix => {
                    let prev = tokens.last().filter(|t| t.lang == Lang::Matrix).map(|t| t.symbol.clone());
                    let sym = loop {
                        let s = &matrix[rng.below(matrix.len())];
                        if matrix.len() == 1 || Some(s) != prev.as_ref() {
                            break s.clone();
                        }
                    };
                    tokens.push(Token { symbol: sym, lang: Lang::Matrix });
                }
                Lang::Embedded => {
                    saw_embedded = true;
                    if last_unit_lang == Some(Lang::Embedded) {
                        tokens.push(Token { symbol: " ".into(), lang: Lang::Embedded });
                    }
                    let word = EMBEDDED_WORDS[rng.below(EMBEDDED_WORDS.len())];
                    for c in word.chars() {
                        tokens.push(Token { symbol: c.to_string(), lang: Lang::Embedded });
                    }
                }
            }
            last_unit_lang = Some(state);
            units += 1;
            if cond == Condition::CodeSwitched {
                state = match cfg.switching {
                    Switching::Markov => match state {
                        Lang::Matrix if rng.bernoulli(cfg.p_to_embedded) => Lang::Embedded,
                        Lang::Embedded if rng.bernoulli(cfg.p_to_matrix) => Lang::Matrix,
                        s => s,
                    },
                    Switching::Midpoint => {
                        if tokens.len() * 2 >= target_len {
                            Lang::Embedded
                        } else {
                            Lang::Matrix
                        }
                    }
                };
            }
        }
        debug_assert!(units > 0);
        if cond != Condition::CodeSwitched || saw_embedded {
            return tokens;
        }
    }
}

fn spans_of(tokens: &[Token]) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        match spans.last_mut() {
            Some(s) if s.lang == t.lang => s.end_token = i + 1,
            _ => spans.push(Span {
                start_token: i,
                end_token: i + 1,
                lang: t.lang,
            }),
        }
    }
    spans
}

/// Generates the full corpus for `cfg`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let d = cfg.d_feature;
    let min_dist = (4.0 * cfg.noise_sigma).max(1e-9);

    // Language centroids sit at -/+ offset/2 along one random unit direction.
    let mut dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= norm);
    let half = cfg.language_offset / 2.0;
    let centroid_a: Vec<f64> = dir.iter().map(|x| -half * x).collect();
    let centroid_b: Vec<f64> = dir.iter().map(|x| half * x).collect();

    let matrix_syms = matrix_alphabet(cfg.matrix_symbols);
    let embedded_syms = embedded_alphabet();
    let mut all = Vec::new();
    let protos_a = sample_prototypes(&mut rng, matrix_syms.len(), d, &centroid_a, min_dist, &mut all);
    let protos_b = sample_prototypes(&mut rng, embedded_syms.len(), d, &centroid_b, min_dist, &mut all);

    let languages = [
        LanguageSpec {
            lang: Lang::Matrix,
            alphabet: matrix_syms.clone(),
            words: Vec::new(),
            prototypes: protos_a,
            token_table: matrix_token_table(cfg.matrix_symbols),
            frames_per_token: cfg.frames_per_token,
            noise_sigma: cfg.noise_sigma,
        },
        LanguageSpec {
            lang: Lang::Embedded,
            alphabet: embedded_syms,
            words: EMBEDDED_WORDS.iter().map(|w| w.to_string()).collect(),
            prototypes: protos_b,
            token_table: embedded_token_table(),
            frames_per_token: cfg.frames_per_token,
            noise_sigma: cfg.noise_sigma,
        },
    ];
    let merged = merged_token_table(&languages[0].token_table, &languages[1].token_table);

    let mut utterances = Vec::new();
    for cond in Condition::ALL {
        let counts = match cond {
            Condition::CodeSwitched => cfg.cs_counts,
            _ => cfg.mono_counts,
        };
        let vocab = match cond {
            Condition::MonoMatrix => &languages[0].token_table,
            Condition::MonoEmbedded => &languages[1].token_table,
            Condition::CodeSwitched => &merged,
        };
        for (split, &count) in Split::ALL.iter().zip(&counts) {
            for i in 0..count {
                let tokens = draw_tokens(cfg, cond, &mut rng, &matrix_syms);
                let mut features = Vec::new();
                let mut frame_lang = Vec::new();
                for t in &tokens {
                    let proto = languages[t.lang.index()]
                        .prototype(&t.symbol)
                        .expect("every spoken symbol has a prototype");
                    let k = rng.range_inclusive(cfg.frames_per_token.0, cfg.frames_per_token.1);
                    for _ in 0..k {
                        features.extend(proto.iter().map(|p| p + cfg.noise_sigma * rng.normal()));
                        frame_lang.push(t.lang.index() as u8);
                    }
                }
                let transcript: String = tokens.iter().map(|t| t.symbol.as_str()).collect();
                let target = vocab.encode(&transcript, Unknown::Reject)?;
                utterances.push(Utterance {
                    id: format!("{}-{}-{:04}", cond.name(), split.name(), i),
                    split: *split,
                    condition: cond,
                    n_frames: frame_lang.len(),
                    d_feature: d,
                    features,
                    transcript,
                    target,
                    frame_lang,
                    spans: spans_of(&tokens),
                });
            }
        }
    }
    Ok(Corpus {
        config: cfg.clone(),
        languages,
        utterances,
    })
}
