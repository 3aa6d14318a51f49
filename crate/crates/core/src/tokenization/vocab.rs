use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{TokenId, TokenSeq};
use crate::error::{Error, Result};

/// What counts as one symbol when splitting raw text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Char,
    Word,
}

impl Granularity {
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            Granularity::Char => text.chars().map(String::from).collect(),
            Granularity::Word => text.split_whitespace().map(String::from).collect(),
        }
    }

    fn is_atomic(self, symbol: &str) -> bool {
        match self {
            Granularity::Char => symbol.chars().count() == 1,
            Granularity::Word => !symbol.is_empty() && !symbol.contains(char::is_whitespace),
        }
    }
}

/// Bijective symbol ↔ id table with ids dense in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub granularity: Granularity,
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds the table from pre-split symbol sequences.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], granularity: Granularity) -> Result<Self> {
        let mut vocab = Self {
            granularity,
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for seq in corpus {
            for (i, sym) in seq.iter().enumerate() {
                let sym = sym.as_ref();
                if !granularity.is_atomic(sym) {
                    return Err(Error::Encoding {
                        symbol: sym.to_string(),
                        index: i,
                        reason: format!("not an atomic {granularity:?}-level symbol"),
                    });
                }
                if !vocab.index.contains_key(sym) {
                    vocab.index.insert(sym.to_string(), vocab.symbols.len() as TokenId);
                    vocab.symbols.push(sym.to_string());
                }
            }
        }
        Ok(vocab)
    }

    /// Splits each text with `granularity`, then builds.
    pub fn from_texts<S: AsRef<str>>(texts: &[S], granularity: Granularity) -> Result<Self> {
        let corpus: Vec<Vec<String>> = texts.iter().map(|t| granularity.split(t.as_ref())).collect();
        Self::build(&corpus, granularity)
    }

    /// Restores a table from its symbol list (as stored in a checkpoint header).
    pub fn from_symbols(symbols: Vec<String>, granularity: Granularity) -> Result<Self> {
        let vocab = Self::build(&[symbols.clone()], granularity)?;
        if vocab.symbols.len() != symbols.len() {
            return Err(Error::input("vocabulary symbol list contains duplicates"));
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Inverse lookup of a token sequence.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<Vec<String>> {
        tokens
            .iter()
            .map(|&t| {
                self.symbol(t)
                    .map(String::from)
                    .ok_or_else(|| Error::input(format!("token {t} outside vocabulary of size {}", self.size())))
            })
            .collect()
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn restored(mut self) -> Self {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        self
    }
}

pub fn encode_lookup<S: AsRef<str>>(sample: &[S], vocab: &Vocabulary, modality: usize) -> Result<TokenSeq> {
    if sample.is_empty() {
        return Err(Error::input("cannot encode an empty sample"));
    }
    let tokens = sample
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vocab.id(s.as_ref()).ok_or_else(|| Error::Encoding {
                symbol: s.as_ref().to_string(),
                index: i,
                reason: "out of vocabulary".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TokenSeq::new(modality, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn char_vocab_in_first_occurrence_order() {
        let v = Vocabulary::from_texts(&["ab", "ba"], Granularity::Char).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
    }

    #[test]
    fn empty_and_repeated_corpora() {
        let empty: [&str; 0] = [];
        assert_eq!(Vocabulary::from_texts(&empty, Granularity::Char).unwrap().size(), 0);
        let v = Vocabulary::from_texts(&["x", "x", "x"], Granularity::Char).unwrap();
        assert_eq!(v.size(), 1);
        assert_eq!(v.id("x"), Some(0));
    }

    #[test]
    fn non_atomic_symbol_is_rejected() {
        let err = Vocabulary::build(&[vec!["ab"]], Granularity::Char).unwrap_err();
        assert!(matches!(err, Error::Encoding { .. }));
        let err = Vocabulary::build(&[vec!["two words"]], Granularity::Word).unwrap_err();
        assert!(matches!(err, Error::Encoding { .. }));
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_texts(&["ab"], Granularity::Char).unwrap();
        let enc = |s: &str| encode_lookup(&Granularity::Char.split(s), &v, 0);
        assert_eq!(enc("ba").unwrap().tokens(), &[1, 0]);
        assert_eq!(enc("aab").unwrap().tokens(), &[0, 0, 1]);
        assert!(matches!(enc(""), Err(Error::Input(_))));
        match enc("abc") {
            Err(Error::Encoding { symbol, index, .. }) => assert_eq!((symbol.as_str(), index), ("c", 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-e]{1,3}", 1..20)) {
            let v = Vocabulary::build(&[words.clone()], Granularity::Word).unwrap();
            let enc = encode_lookup(&words, &v, 1).unwrap();
            prop_assert_eq!(v.decode(enc.tokens()).unwrap(), words);
        }
    }
}
