use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// End-of-sentence marker.
pub const PERIOD: &str = ".";

/// Word-level vocabulary with dense ids. The four reserved tokens always
/// occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from words, prepending the reserved tokens.
    /// Duplicates after the first occurrence are dropped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in [BOS, EOS, PERIOD, UNK] {
            v.insert(w.to_string());
        }
        for w in words {
            v.insert(w.into());
        }
        v
    }

    /// Rebuilds a vocabulary from its full ordered token list, as stored in
    /// checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = [BOS, EOS, PERIOD, UNK];
        if tokens.len() < reserved.len() || tokens.iter().zip(reserved).any(|(t, r)| t != r) {
            return Err(Error::Format("vocabulary lacks reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    fn insert(&mut self, w: String) {
        if !self.index.contains_key(&w) {
            self.index.insert(w.clone(), self.tokens.len());
            self.tokens.push(w);
        }
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

    pub fn bos(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn sentence_end(&self) -> TokenId {
        2
    }

    pub fn unk(&self) -> TokenId {
        3
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode_word(&self, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Whitespace tokenization; unknown words are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.encode_word(w)).collect()
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.encode_word(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(&id) => Err(Error::InvalidToken {
                id,
                vocab_size: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_distinct_and_fixed() {
        let v = Vocabulary::new(["cat", "dog"]);
        let ids = [v.bos(), v.eos(), v.sentence_end(), v.unk()];
        assert_eq!(ids, [0, 1, 2, 3]);
        assert_eq!(v.id(PERIOD), Some(v.sentence_end()));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn round_trip_is_identity() {
        let v = Vocabulary::new(["the", "cat", "eats", "cat"]);
        assert_eq!(v.len(), 7);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        let ids = v.encode("the cat eats .").unwrap();
        assert_eq!(v.decode(&ids), "the cat eats .");
        assert!(v.encode("the fox").is_err());
    }

    #[test]
    fn from_tokens_validates() {
        let v = Vocabulary::new(["a", "b"]);
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
        let mut dup = v.tokens().to_vec();
        dup.push("a".into());
        assert!(Vocabulary::from_tokens(dup).is_err());
    }
}
