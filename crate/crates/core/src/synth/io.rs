//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.txt      key = value: format tag, config echo (config.*),
//!                         token tables, alphabets, utterance index (utt.*)
//! <dir>/labels.tsv        id, transcript, target ids, frame languages, spans
//! <dir>/prototypes.f64    matrix then embedded prototypes, little-endian f64
//! <dir>/features/<id>.f64 [frames, d_feature] little-endian f64, row-major
//! ```
//!
//! Tokens in the manifest are written as `<blank>` or as `U+XXXX` code
//! points joined with `,`, separated by single spaces.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Condition, Corpus, CorpusConfig, Lang, LanguageSpec, Span, Split, Utterance};
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvDoc};
use crate::vocab::{Vocab, BLANK_TOKEN};

const FORMAT: &str = "codeswitch-corpus-1";

pub(crate) fn encode_token(t: &str) -> String {
    if t == BLANK_TOKEN {
        return t.to_string();
    }
    t.chars()
        .map(|c| format!("U+{:04X}", c as u32))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn decode_token(s: &str) -> Result<String> {
    if s == BLANK_TOKEN {
        return Ok(s.to_string());
    }
    s.split(',')
        .map(|cp| {
            cp.strip_prefix("U+")
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .and_then(char::from_u32)
                .ok_or_else(|| Error::Format(format!("bad token code {s:?}")))
        })
        .collect()
}

pub(crate) fn encode_tokens(tokens: &[String]) -> String {
    tokens.iter().map(|t| encode_token(t)).collect::<Vec<_>>().join(" ")
}

pub(crate) fn decode_tokens(s: &str) -> Result<Vec<String>> {
    s.split(' ').filter(|p| !p.is_empty()).map(decode_token).collect()
}

pub(crate) fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require<'a>(doc: &'a KvDoc, key: &str, path: &Path) -> Result<&'a str> {
    doc.get(key)
        .ok_or_else(|| Error::Format(format!("{}: missing key {key}", path.display())))
}

pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut m = KvDoc::new();
    m.set("format", FORMAT);
    for (k, v) in corpus.config.to_kv().entries() {
        m.set(&format!("config.{k}"), v);
    }
    let [a, b] = &corpus.languages;
    m.set("matrix_table", encode_tokens(a.token_table.tokens()));
    m.set("embedded_table", encode_tokens(b.token_table.tokens()));
    m.set("matrix_alphabet", encode_tokens(&a.alphabet));
    m.set("embedded_alphabet", encode_tokens(&b.alphabet));
    m.set("embedded_words", b.words.join(" "));
    m.set("prototypes", "prototypes.f64");
    m.set("utterances", corpus.utterances.len());

    let protos: Vec<f64> = a.prototypes.iter().chain(&b.prototypes).flatten().copied().collect();
    write_file(&dir.join("prototypes.f64"), &f64s_to_bytes(&protos))?;

    let mut labels = String::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        let rel = format!("features/{}.f64", u.id);
        m.set(
            &format!("utt.{i:06}"),
            format!(
                "{} {} {} {} {} {}",
                u.id,
                u.split.name(),
                u.condition.name(),
                u.n_frames,
                u.d_feature,
                rel
            ),
        );
        write_file(&dir.join(&rel), &f64s_to_bytes(&u.features))?;
        let target = u.target.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let langs: String = u.frame_lang.iter().map(|l| if *l == 0 { '0' } else { '1' }).collect();
        let spans = u
            .spans
            .iter()
            .map(|s| format!("{}:{}:{}", s.start_token, s.end_token, s.lang.index()))
            .collect::<Vec<_>>()
            .join(";");
        labels.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", u.id, u.transcript, target, langs, spans));
    }
    write_file(&dir.join("labels.tsv"), labels.as_bytes())?;
    let mut text = String::from("# synthetic code-switching corpus\n");
    text.push_str(&m.render());
    write_file(&dir.join("manifest.txt"), text.as_bytes())
}

struct LabelRow {
    transcript: String,
    target: Vec<usize>,
    frame_lang: Vec<u8>,
    spans: Vec<Span>,
}

fn parse_label_row(line: &str, path: &Path) -> Result<(String, LabelRow)> {
    let bad = || Error::Format(format!("{}: malformed line {line:?}", path.display()));
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(bad());
    }
    let target = if cols[2].is_empty() {
        Vec::new()
    } else {
        cols[2].split(',').map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let frame_lang = cols[3]
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(bad()),
        })
        .collect::<Result<_>>()?;
    let spans = cols[4]
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let p: Vec<&str> = s.split(':').collect();
            if p.len() != 3 {
                return Err(bad());
            }
            Ok(Span {
                start_token: p[0].parse().map_err(|_| bad())?,
                end_token: p[1].parse().map_err(|_| bad())?,
                lang: Lang::from_index(p[2].parse().map_err(|_| bad())?).map_err(|_| bad())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((
        cols[0].to_string(),
        LabelRow {
            transcript: cols[1].to_string(),
            target,
            frame_lang,
            spans,
        },
    ))
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.txt");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m = KvDoc::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    if require(&m, "format", &mpath)? != FORMAT {
        return Err(Error::Format(format!("{}: unsupported format", mpath.display())));
    }
    let mut cfg_doc = KvDoc::new();
    for (k, v) in m.entries() {
        if let Some(key) = k.strip_prefix("config.") {
            cfg_doc.set(key, v);
        }
    }
    let config = CorpusConfig::from_kv(&cfg_doc)?;
    let d = config.d_feature;

    let matrix_table = Vocab::new(decode_tokens(require(&m, "matrix_table", &mpath)?)?)?;
    let embedded_table = Vocab::new(decode_tokens(require(&m, "embedded_table", &mpath)?)?)?;
    let matrix_alphabet = decode_tokens(require(&m, "matrix_alphabet", &mpath)?)?;
    let embedded_alphabet = decode_tokens(require(&m, "embedded_alphabet", &mpath)?)?;
    for (alphabet, table) in [(&matrix_alphabet, &matrix_table), (&embedded_alphabet, &embedded_table)] {
        if let Some(s) = alphabet.iter().find(|s| table.id(s).is_none()) {
            return Err(Error::Format(format!("alphabet symbol {s:?} missing from its token table")));
        }
    }
    let words: Vec<String> = require(&m, "embedded_words", &mpath)?
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect();

    let ppath: PathBuf = dir.join(require(&m, "prototypes", &mpath)?);
    let n_protos = matrix_alphabet.len() + embedded_alphabet.len();
    let protos = read_f64s(&ppath, n_protos * d)?;
    let mut rows = protos.chunks_exact(d).map(<[f64]>::to_vec);
    let protos_a: Vec<Vec<f64>> = rows.by_ref().take(matrix_alphabet.len()).collect();
    let protos_b: Vec<Vec<f64>> = rows.collect();

    let lpath = dir.join("labels.tsv");
    let labels_text = fs::read_to_string(&lpath).map_err(|e| Error::io(&lpath, e))?;
    let mut labels = std::collections::HashMap::new();
    for line in labels_text.lines().filter(|l| !l.is_empty()) {
        let (id, row) = parse_label_row(line, &lpath)?;
        labels.insert(id, row);
    }

    let n_utts: usize = parse_value("utterances", require(&m, "utterances", &mpath)?)?;
    let mut utterances = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let entry = require(&m, &format!("utt.{i:06}"), &mpath)?;
        let p: Vec<&str> = entry.split(' ').collect();
        if p.len() != 6 {
            return Err(Error::Format(format!("{}: bad utterance entry {entry:?}", mpath.display())));
        }
        let id = p[0].to_string();
        let split: Split = p[1].parse()?;
        let condition: Condition = p[2].parse()?;
        let n_frames: usize = parse_value("frames", p[3]).map_err(|e| Error::Format(e.to_string()))?;
        let dim: usize = parse_value("dim", p[4]).map_err(|e| Error::Format(e.to_string()))?;
        if dim != d {
            return Err(Error::Format(format!("{id}: feature dim {dim} differs from d_feature {d}")));
        }
        let features = read_f64s(&dir.join(p[5]), n_frames * dim)?;
        let row = labels
            .remove(&id)
            .ok_or_else(|| Error::Format(format!("{}: no labels for {id}", lpath.display())))?;
        if row.frame_lang.len() != n_frames {
            return Err(Error::Format(format!(
                "{id}: {} frame labels for {n_frames} frames",
                row.frame_lang.len()
            )));
        }
        utterances.push(Utterance {
            id,
            split,
            condition,
            n_frames,
            d_feature: dim,
            features,
            transcript: row.transcript,
            target: row.target,
            frame_lang: row.frame_lang,
            spans: row.spans,
        });
    }

    Ok(Corpus {
        languages: [
            LanguageSpec {
                lang: Lang::Matrix,
                alphabet: matrix_alphabet,
                words: Vec::new(),
                prototypes: protos_a,
                token_table: matrix_table,
                frames_per_token: config.frames_per_token,
                noise_sigma: config.noise_sigma,
            },
            LanguageSpec {
                lang: Lang::Embedded,
                alphabet: embedded_alphabet,
                words,
                prototypes: protos_b,
                token_table: embedded_table,
                frames_per_token: config.frames_per_token,
                noise_sigma: config.noise_sigma,
            },
        ],
        config,
        utterances,
    })
}
