//! Tokenization and vocabulary.
//!
//! Text is lowercased and split on Unicode word boundaries (UAX #29);
//! segments without any alphanumeric character are dropped. The vocabulary
//! reserves three special ids at the front: `[PAD]`, `[MASK]` and `[UNK]`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::{Error, Result};

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const MASK: TokenId = TokenId(1);
    pub const UNK: TokenId = TokenId(2);
    /// Sentence-start padding for n-gram contexts. Never stored in a vocabulary.
    pub const BOS: TokenId = TokenId(u32::MAX);

    /// First id available to ordinary tokens.
    pub const FIRST_USABLE: u32 = 3;

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_special(self) -> bool {
        self.0 < Self::FIRST_USABLE || self == Self::BOS
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub const PAD_SURFACE: &str = "[PAD]";
pub const MASK_SURFACE: &str = "[MASK]";
pub const UNK_SURFACE: &str = "[UNK]";

const SPECIAL_SURFACES: [&str; 3] = [PAD_SURFACE, MASK_SURFACE, UNK_SURFACE];

/// Lowercase, split on word boundaries and whitespace, drop punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .unicode_words()
        .flat_map(str::split_whitespace)
        .map(str::to_owned)
        .collect()
}

/// Inverse of [`tokenize`] for token sequences it produced.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Ordered set of token surfaces with the special tokens at ids 0..3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    surfaces: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = String;

    fn try_from(repr: VocabularyRepr) -> std::result::Result<Self, String> {
        if repr.tokens.len() < SPECIAL_SURFACES.len()
            || repr.tokens[..SPECIAL_SURFACES.len()] != SPECIAL_SURFACES
        {
            return Err("vocabulary must start with [PAD] [MASK] [UNK]".into());
        }
        Vocabulary::from_content(repr.tokens[SPECIAL_SURFACES.len()..].to_vec())
            .map_err(|e| e.to_string())
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { tokens: v.surfaces }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from content surfaces, in the given order.
    pub fn from_content(content: Vec<String>) -> Result<Self> {
        let mut surfaces: Vec<String> = SPECIAL_SURFACES.iter().map(|s| s.to_string()).collect();
        surfaces.extend(content);
        let mut lookup = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::invalid("vocabulary", "empty token surface"));
            }
            if lookup.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("duplicate token `{s}`"),
                ));
            }
        }
        Ok(Vocabulary { surfaces, lookup })
    }

    /// Total size including the special tokens.
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usable_len() == 0
    }

    /// Number of ordinary (predictable) tokens.
    pub fn usable_len(&self) -> usize {
        self.surfaces.len() - TokenId::FIRST_USABLE as usize
    }

    pub fn usable_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (TokenId::FIRST_USABLE..self.surfaces.len() as u32).map(TokenId)
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.lookup.get(surface).copied()
    }

    /// Maps a surface to its id, falling back to `[UNK]`.
    pub fn encode_token(&self, surface: &str) -> TokenId {
        match self.lookup.get(surface) {
            Some(&id) if !id.is_special() => id,
            _ => TokenId::UNK,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens
            .iter()
            .map(|t| self.encode_token(t.as_ref()))
            .collect()
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        self.encode(&tokenize(text))
    }

    pub fn surface(&self, id: TokenId) -> &str {
        self.surfaces
            .get(id.index())
            .map(String::as_str)
            .unwrap_or(UNK_SURFACE)
    }

    /// Space-joined surfaces; specials render as their bracketed names.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let surfaces: Vec<&str> = ids.iter().map(|&id| self.surface(id)).collect();
        detokenize(&surfaces)
    }

    /// Inverse of [`Vocabulary::render`]: bracketed special names map back to
    /// their ids, every other whitespace piece goes through the tokenizer.
    pub fn parse_rendered(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            match SPECIAL_SURFACES.iter().position(|s| *s == piece) {
                Some(i) => out.push(TokenId(i as u32)),
                None => out.extend(self.encode_text(piece)),
            }
        }
        out
    }

    /// Maps one wire surface (possibly a special name) to an id.
    pub fn parse_surface(&self, surface: &str) -> TokenId {
        match SPECIAL_SURFACES.iter().position(|s| *s == surface) {
            Some(i) => TokenId(i as u32),
            None => self.encode_token(surface),
        }
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace (or end of text).
/// Empty pieces are dropped; the terminator stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let piece = text[start..end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = end;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// Counts token frequencies and keeps those with count `>= min_count`,
/// ordered by frequency descending then lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::invalid("min_count", "must be >= 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_content(kept.into_iter().map(|(s, _)| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("Apple pie Recipe!"), ["apple", "pie", "recipe"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ?! ...").is_empty());
    }

    #[test]
    fn hyphenated_words_split() {
        // UAX #29: HYPHEN-MINUS is neither MidLetter nor MidNum, so every
        // hyphen is a boundary and the hyphen segments are dropped.
        assert_eq!(tokenize("state-of-the-art"), ["state", "of", "the", "art"]);
    }

    #[test]
    fn sentence_split() {
        assert_eq!(
            split_sentences("Apples grow. Pie 3.5 is good!  Why? no"),
            ["Apples grow.", "Pie 3.5 is good!", "Why?", "no"]
        );
        assert!(split_sentences("  ").is_empty());
        assert_eq!(split_sentences("one"), ["one"]);
    }

    #[test]
    fn vocabulary_threshold_and_order() {
        let corpus = vec![vec!["a", "b"], vec!["a"]];
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.usable_len(), 2);
        assert_eq!(v.id("a"), Some(TokenId(3)));
        assert_eq!(v.id("b"), Some(TokenId(4)));

        let v = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(v.usable_len(), 1);
        assert_eq!(v.encode_token("b"), TokenId::UNK);
    }

    #[test]
    fn sample_corpus_has_seven_content_tokens() {
        let docs: Vec<Vec<String>> = [
            "apple pie recipe",
            "apple tree orchard",
            "banana bread recipe",
        ]
        .iter()
        .map(|t| tokenize(t))
        .collect();
        let v = build_vocabulary(&docs, 1).unwrap();
        // apple x2, recipe x2, then the singletons alphabetically.
        let content: Vec<&str> = v.usable_ids().map(|id| v.surface(id)).collect();
        assert_eq!(
            content,
            ["apple", "recipe", "banana", "bread", "orchard", "pie", "tree"]
        );
        assert_eq!(v.len(), 10);
    }

    #[test]
    fn empty_corpus_and_bad_threshold() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(
            build_vocabulary(&empty, 1),
            Err(Error::EmptyCorpus)
        ));
        let blank: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(
            build_vocabulary(&blank, 1),
            Err(Error::EmptyCorpus)
        ));
        assert!(build_vocabulary(&[vec!["a"]], 0).is_err());
    }

    #[test]
    fn render_and_parse_specials() {
        let v = build_vocabulary(&[vec!["apple", "pie"]], 1).unwrap();
        let ids = vec![
            TokenId::PAD,
            v.id("pie").unwrap(),
            TokenId::MASK,
            TokenId::UNK,
        ];
        let text = v.render(&ids);
        assert_eq!(text, "[PAD] pie [MASK] [UNK]");
        assert_eq!(v.parse_rendered(&text), ids);
        // Never hands out special ids for ordinary surfaces.
        assert_eq!(v.encode_token("[PAD]"), TokenId::UNK);
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let v = build_vocabulary(&[vec!["x", "y", "x"]], 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocabulary>(r#"{"tokens":["a"]}"#).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent_over_detokenize(s in "\\PC{0,40}") {
            let ts = tokenize(&s);
            prop_assert_eq!(tokenize(&detokenize(&ts)), ts.clone());
            prop_assert!(ts.iter().all(|t| !t.is_empty()));
        }

        #[test]
        fn ids_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
            let v = build_vocabulary(&[words], 1).unwrap();
            for id in v.usable_ids() {
                prop_assert_eq!(v.id(v.surface(id)), Some(id));
            }
        }
    }
}
