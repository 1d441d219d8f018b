//! Token tables. Index 0 of every table is the CTC blank.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const BLANK_TOKEN: &str = "<blank>";

/// What [`Vocab::encode`] does with characters the table cannot produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unknown {
    Reject,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    blocked: Vec<bool>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// A table whose entries are all emittable. Tokens must be unique.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let n = tokens.len();
        let v = Self::with_blocked(tokens, vec![false; n])?;
        if v.index.len() != n {
            return Err(Error::Config("token table has duplicate entries".into()));
        }
        Ok(v)
    }

    /// A table where `blocked[i]` entries exist but are never produced by
    /// encoding. Duplicated strings resolve to their first unblocked slot.
    pub fn with_blocked(tokens: Vec<String>, blocked: Vec<bool>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Config("a token table needs a blank and at least one symbol".into()));
        }
        if tokens.len() != blocked.len() {
            return Err(Error::Config("blocked flags must match token count".into()));
        }
        if tokens[BLANK] != BLANK_TOKEN {
            return Err(Error::Config(format!("token 0 must be {BLANK_TOKEN}")));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if i != BLANK && t == BLANK_TOKEN {
                continue;
            }
            if !blocked[i] {
                index.entry(t.clone()).or_insert(i);
            }
        }
        Ok(Self {
            tokens,
            blocked,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_blocked(&self, id: usize) -> bool {
        self.blocked[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Maps every character of `text` to a token id.
    pub fn encode(&self, text: &str, unknown: Unknown) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(text.len());
        let mut buf = [0u8; 4];
        for c in text.chars() {
            match self.id(c.encode_utf8(&mut buf)) {
                Some(i) if i != BLANK => ids.push(i),
                _ if unknown == Unknown::Skip => {}
                _ => return Err(Error::Format(format!("character {c:?} is not in the token table"))),
            }
        }
        Ok(ids)
    }

    /// Concatenates token strings, skipping blanks.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BLANK)
            .map(|&i| self.tokens[i].as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::new(table(&[BLANK_TOKEN, "a", "b", " "])).unwrap();
        let ids = v.encode("ab a", Unknown::Reject).unwrap();
        assert_eq!(ids, vec![1, 2, 3, 1]);
        assert_eq!(v.decode(&ids), "ab a");
        assert!(v.encode("abc", Unknown::Reject).is_err());
        assert_eq!(v.encode("abc", Unknown::Skip).unwrap(), vec![1, 2]);
    }

    #[test]
    fn blocked_duplicates_resolve_to_unblocked_slot() {
        let v = Vocab::with_blocked(
            table(&[BLANK_TOKEN, "x", "a", BLANK_TOKEN, "a"]),
            vec![false, false, true, true, false],
        )
        .unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id(BLANK_TOKEN), Some(0));
    }

    #[test]
    fn blank_must_lead() {
        assert!(Vocab::new(table(&["a", BLANK_TOKEN])).is_err());
        assert!(Vocab::new(table(&[BLANK_TOKEN])).is_err());
    }
}
