//! Shared vocabulary over both styles and token/id conversion.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{CleanSentence, StyledCorpus};
use crate::{Error, Result, Style};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUMBER: usize = 4;
pub const USER: usize = 5;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "<number>", "<user>"];

/// Maximum encoded length, end-of-sentence marker included.
pub const MAX_LEN: usize = 40;

pub const DEFAULT_MIN_COUNT: u64 = 3;
pub const DEFAULT_CAP: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenIdSequence {
    pub ids: Vec<usize>,
    pub style: Style,
}

impl TokenIdSequence {
    pub fn new(ids: Vec<usize>, style: Style) -> Self {
        Self { ids, style }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            counts: vec![0; tokens.len()],
            tokens,
            index,
        }
    }

    /// Counts tokens over all corpora and keeps those seen at least
    /// `min_count` times, most frequent first with ties in lexicographic
    /// order, until the table holds `cap` entries (reserved ones included).
    pub fn build(corpora: &[StyledCorpus], min_count: u64, cap: usize) -> Result<Self> {
        if cap < RESERVED.len() {
            return Err(Error::InvalidInput(format!(
                "vocabulary cap {cap} is below the {} reserved tokens",
                RESERVED.len()
            )));
        }
        if corpora.is_empty() {
            return Err(Error::InvalidInput("no corpora to build a vocabulary from".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for corpus in corpora {
            for sentence in &corpus.sentences {
                for tok in &sentence.tokens {
                    *freq.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());

        let mut vocab = Self::with_reserved();
        for (tok, count) in ranked {
            vocab.index.insert(tok.to_string(), vocab.tokens.len());
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// Maps tokens to ids (unknown tokens become `<unk>`), appends `</s>` and
    /// truncates so the result, marker included, is at most [`MAX_LEN`] long.
    pub fn encode(&self, tokens: &[String], style: Style) -> TokenIdSequence {
        let mut ids: Vec<usize> = tokens
            .iter()
            .take(MAX_LEN - 1)
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect();
        ids.push(EOS);
        TokenIdSequence { ids, style }
    }

    pub fn encode_sentence(&self, sentence: &CleanSentence, style: Style) -> TokenIdSequence {
        self.encode(&sentence.tokens, style)
    }

    /// Drops padding and sentence markers; `<unk>` and placeholders keep their surface form.
    /// Decoding stops at the first `</s>`.
    pub fn decode(&self, ids: &[usize]) -> CleanSentence {
        let tokens = ids
            .iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect();
        CleanSentence { tokens }
    }

    /// `id<TAB>token<TAB>count` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{i}\t{t}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> std::result::Result<Self, String> {
        let mut vocab = Self {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, tok, count] = fields[..] else {
                return Err(format!("line {}: expected 3 tab-separated fields", lineno + 1));
            };
            let id: usize = id
                .parse()
                .map_err(|_| format!("line {}: bad id `{id}`", lineno + 1))?;
            if id != vocab.tokens.len() {
                return Err(format!("line {}: ids must be consecutive from 0", lineno + 1));
            }
            let count: u64 = count
                .parse()
                .map_err(|_| format!("line {}: bad count `{count}`", lineno + 1))?;
            if vocab.index.insert(tok.to_string(), id).is_some() {
                return Err(format!("line {}: duplicate token `{tok}`", lineno + 1));
            }
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(count);
        }
        if vocab.tokens.len() < RESERVED.len()
            || vocab.tokens[..RESERVED.len()]
                .iter()
                .zip(RESERVED)
                .any(|(a, b)| a != b)
        {
            return Err("reserved tokens missing or out of order".into());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(lines: &[&str]) -> StyledCorpus {
        StyledCorpus {
            style: Style::NonIrony,
            sentences: lines.iter().map(|l| CleanSentence::from_text(l)).collect(),
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build(&[corpus(&["a a b"])], 2, 100).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
    }

    #[test]
    fn ties_broken_lexicographically() {
        let v = Vocabulary::build(&[corpus(&["zeta alpha", "alpha zeta"])], 1, 100).unwrap();
        assert!(v.id("alpha").unwrap() < v.id("zeta").unwrap());
        assert_eq!(v.id("alpha"), Some(RESERVED.len()));
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocabulary::build(&[corpus(&["x"])], 1, 10).unwrap();
        for (i, t) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        assert!(Vocabulary::build(&[corpus(&["x"])], 1, 5).is_err());
    }

    #[test]
    fn cap_truncates() {
        let v = Vocabulary::build(&[corpus(&["a a a b b c d e"])], 1, 8).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.token(6), Some("a"));
        assert_eq!(v.token(7), Some("b"));
    }

    #[test]
    fn oov_decodes_to_unk() {
        let v = Vocabulary::build(&[corpus(&["i like it"])], 1, 100).unwrap();
        let enc = v.encode(&toks("i like pizza"), Style::Irony);
        assert_eq!(enc.ids[2], UNK);
        assert_eq!(v.decode(&enc.ids).tokens, toks("i like <unk>"));
    }

    #[test]
    fn long_input_truncated_with_eos_last() {
        let words: Vec<String> = (0..45).map(|i| format!("w{i}")).collect();
        let v = Vocabulary::build(&[corpus(&[&words.join(" ")])], 1, 100).unwrap();
        let enc = v.encode(&words, Style::NonIrony);
        assert_eq!(enc.len(), MAX_LEN);
        assert_eq!(*enc.ids.last().unwrap(), EOS);
        // first 39 tokens survive in order
        assert_eq!(v.decode(&enc.ids).tokens, words[..39].to_vec());
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::build(&[corpus(&["b a a c c c"])], 1, 100).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert!(v.to_tsv().starts_with("0\t<pad>\t0\n"));
        assert!(Vocabulary::from_tsv("0\tx\t1\n").is_err());
    }

    proptest! {
        #[test]
        fn in_vocab_round_trip(idx in prop::collection::vec(0usize..20, 0..39)) {
            let words: Vec<String> = (0..20).map(|i| format!("tok{i}")).collect();
            let v = Vocabulary::build(&[corpus(&[&words.join(" ")])], 1, 100).unwrap();
            let sentence: Vec<String> = idx.iter().map(|&i| words[i].clone()).collect();
            let enc = v.encode(&sentence, Style::Irony);
            prop_assert_eq!(v.decode(&enc.ids).tokens, sentence);
        }

        #[test]
        fn encode_length_monotone(n in 0usize..60, m in 0usize..60) {
            let words: Vec<String> = (0..60).map(|i| format!("t{}", i % 7)).collect();
            let v = Vocabulary::build(&[corpus(&["t0 t1"])], 1, 100).unwrap();
            let (short, long) = (n.min(m), n.max(m));
            let a = v.encode(&words[..short], Style::Irony).len();
            let b = v.encode(&words[..long], Style::Irony).len();
            prop_assert!(a <= b);
            prop_assert!(b <= MAX_LEN);
        }
    }
}
