//! Error rates over exact Levenshtein alignments, plus gate scoring.
//!
//! Text is normalized before tokenization: lowercase, runs of whitespace
//! collapsed to one space, leading/trailing whitespace removed. Punctuation
//! is kept. In character mode every character, spaces included, is a token.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// CJK Unified Ideographs. Characters in this block are scored one token each.
pub fn is_cjk(c: char) -> bool {
    ('\u{4E00}'..='\u{9FFF}').contains(&c)
}

#[derive(Debug, Clone, Copy)]
pub enum TokenizationRule {
    Char,
    Word,
    /// Characters for which the predicate holds are tokens on their own;
    /// everything else groups into whitespace-delimited words.
    Mixed(fn(char) -> bool),
}

impl TokenizationRule {
    pub fn mixed() -> Self {
        TokenizationRule::Mixed(is_cjk)
    }
}

pub fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(text: &str, rule: TokenizationRule) -> Vec<String> {
    let text = normalize(text);
    match rule {
        TokenizationRule::Char => text.chars().map(String::from).collect(),
        TokenizationRule::Word => text.split(' ').filter(|w| !w.is_empty()).map(String::from).collect(),
        TokenizationRule::Mixed(is_char_token) => {
            let mut out = Vec::new();
            let mut word = String::new();
            for c in text.chars() {
                if c.is_whitespace() || is_char_token(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    if !c.is_whitespace() {
                        out.push(c.to_string());
                    }
                } else {
                    word.push(c);
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// Minimum-edit alignment of `hyp` against `reference`.
///
/// When several alignments reach the minimum, the backtrace prefers a
/// substitution (or match), then an insertion, then a deletion. This only
/// changes how the distance splits into S/D/I.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut counts = EditCounts {
        distance: d[n * w + m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hyp[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(mismatch) == here {
                counts.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

/// Edits divided by reference token count. May exceed 1.
pub fn error_rate(reference: &str, hyp: &str, rule: TokenizationRule) -> Result<f64> {
    let r = tokenize(reference, rule);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    let h = tokenize(hyp, rule);
    Ok(edit_distance(&r, &h).distance as f64 / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Cer,
    Wer,
    Mer,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cer, Metric::Wer, Metric::Mer];

    pub fn rule(self) -> TokenizationRule {
        match self {
            Metric::Cer => TokenizationRule::Char,
            Metric::Wer => TokenizationRule::Word,
            Metric::Mer => TokenizationRule::mixed(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cer => "cer",
            Metric::Wer => "wer",
            Metric::Mer => "mer",
        }
    }

    /// Parses a comma-separated list such as `cer,mer`, keeping the
    /// canonical cer/wer/mer column order.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(Metric::from_str)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("empty metric list".into()));
        }
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cer" => Ok(Metric::Cer),
            "wer" => Ok(Metric::Wer),
            "mer" => Ok(Metric::Mer),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Running edit and reference-token totals for corpus-level rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub edits: usize,
    pub ref_tokens: usize,
}

impl Tally {
    pub fn add(&mut self, reference: &str, hyp: &str, rule: TokenizationRule) -> f64 {
        let r = tokenize(reference, rule);
        let h = tokenize(hyp, rule);
        let e = edit_distance(&r, &h).distance;
        self.edits += e;
        self.ref_tokens += r.len();
        if r.is_empty() {
            f64::NAN
        } else {
            e as f64 / r.len() as f64
        }
    }

    pub fn rate(&self) -> f64 {
        if self.ref_tokens == 0 {
            f64::NAN
        } else {
            self.edits as f64 / self.ref_tokens as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GateQuality {
    pub accuracy: f64,
    /// Zero when nothing was predicted embedded.
    pub precision: f64,
    /// Zero when no frame is embedded.
    pub recall: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl GateQuality {
    fn from_counts(tp: usize, fp: usize, fneg: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        GateQuality {
            accuracy: ratio(tp + tn, tp + fp + fneg + tn),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fneg),
            true_pos: tp,
            false_pos: fp,
            false_neg: fneg,
            true_neg: tn,
        }
    }

    /// Pools the counts of two scorings.
    pub fn merge(&self, other: &GateQuality) -> GateQuality {
        GateQuality::from_counts(
            self.true_pos + other.true_pos,
            self.false_pos + other.false_pos,
            self.false_neg + other.false_neg,
            self.true_neg + other.true_neg,
        )
    }
}

/// Frame-level binary scoring of hard gates against language labels, with
/// the embedded language (1) as the positive class.
pub fn gate_quality(pred: &[u8], truth: &[u8]) -> Result<GateQuality> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(format!(
            "gate length {} differs from label length {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(GateQuality::from_counts(tp, fp, fneg, tn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub rates: Vec<(Metric, f64)>,
    pub gate_accuracy: Option<f64>,
}

/// Per-utterance and corpus-level scores in a fixed column order.
///
/// ```text
/// # id cer wer mer gate_acc
/// cs-test-0000 0.100000 0.250000 0.125000 0.950000
/// SUMMARY n=1 cer=0.100000 wer=0.250000 mer=0.125000 gate_acc=0.950000
/// ```
///
/// Summary rates pool edits and reference tokens over all utterances;
/// the summary gate accuracy pools frames.
#[derive(Debug, Clone)]
pub struct Report {
    metrics: Vec<Metric>,
    with_gates: bool,
    rows: Vec<UtteranceScore>,
    tallies: Vec<Tally>,
    gates: GateQuality,
}

impl Report {
    pub fn new(metrics: &[Metric], with_gates: bool) -> Self {
        let mut metrics = metrics.to_vec();
        metrics.sort();
        metrics.dedup();
        Self {
            tallies: vec![Tally::default(); metrics.len()],
            metrics,
            with_gates,
            rows: Vec::new(),
            gates: GateQuality::default(),
        }
    }

    pub fn add(&mut self, id: &str, reference: &str, hyp: &str, gates: Option<&GateQuality>) {
        let rates = self
            .metrics
            .iter()
            .zip(self.tallies.iter_mut())
            .map(|(&m, tally)| (m, tally.add(reference, hyp, m.rule())))
            .collect();
        let gate_accuracy = match (self.with_gates, gates) {
            (true, Some(g)) => {
                self.gates = self.gates.merge(g);
                Some(g.accuracy)
            }
            _ => None,
        };
        self.rows.push(UtteranceScore {
            id: id.to_string(),
            rates,
            gate_accuracy,
        });
    }

    pub fn rows(&self) -> &[UtteranceScore] {
        &self.rows
    }

    pub fn rate(&self, metric: Metric) -> Option<f64> {
        self.metrics
            .iter()
            .position(|&m| m == metric)
            .map(|i| self.tallies[i].rate())
    }

    pub fn gate_quality(&self) -> Option<GateQuality> {
        self.with_gates.then_some(self.gates)
    }

    pub fn header(&self) -> String {
        let mut s = String::from("# id");
        for m in &self.metrics {
            s.push(' ');
            s.push_str(m.name());
        }
        if self.with_gates {
            s.push_str(" gate_acc");
        }
        s
    }

    pub fn summary_line(&self) -> String {
        let mut s = format!("SUMMARY n={}", self.rows.len());
        for (m, t) in self.metrics.iter().zip(&self.tallies) {
            let _ = write!(s, " {}={:.6}", m.name(), t.rate());
        }
        if self.with_gates {
            let _ = write!(s, " gate_acc={:.6}", self.gates.accuracy);
        }
        s
    }

    pub fn render(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.id);
            for (_, r) in &row.rates {
                let _ = write!(out, " {r:.6}");
            }
            if self.with_gates {
                match row.gate_accuracy {
                    Some(a) => {
                        let _ = write!(out, " {a:.6}");
                    }
                    None => out.push_str(" -"),
                }
            }
            out.push('\n');
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}
