//! Text cleaning, filtering and style splitting for raw posts.
//!
//! Everything here is a pure per-sentence function except the frequency
//! table, which needs the whole normalised corpus first.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::vocab::RESERVED;
use crate::{Error, Result, Style};

pub const NUMBER_TOKEN: &str = "<number>";
pub const USER_TOKEN: &str = "<user>";

pub const MIN_TOKENS: usize = 10;
pub const MAX_TOKENS: usize = 40;
/// Tokens seen fewer times than this in the corpus are rare.
pub const RARE_BELOW: u64 = 3;
pub const MAX_RARE: usize = 2;
pub const SENTIMENT_CUTOFF: f64 = 0.5;

pub const WH_WORDS: [&str; 15] = [
    "what", "why", "how", "when", "where", "who", "is", "are", "do", "does", "did", "can", "could",
    "would", "will",
];

const ENGLISH_WORDS: &str = include_str!("../data/english_words.txt");
const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.tsv");
const DEFAULT_LEXICON: &str = include_str!("../data/sentiment_lexicon.tsv");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPost {
    pub text: String,
    pub is_retweet: bool,
}

impl RawPost {
    pub fn new(text: impl Into<String>, is_retweet: bool) -> Self {
        Self {
            text: text.into(),
            is_retweet,
        }
    }

    /// A line is a retweet when it starts with `retweet_prefix`.
    pub fn from_line(line: &str, retweet_prefix: &str) -> Self {
        let text = line.trim();
        let is_retweet = !retweet_prefix.is_empty() && text.starts_with(retweet_prefix);
        Self::new(text, is_retweet)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CleanSentence {
    pub tokens: Vec<String>,
}

impl CleanSentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    /// Whitespace tokenisation, no cleaning.
    pub fn from_text(text: &str) -> Self {
        Self {
            tokens: text.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyledCorpus {
    pub style: Style,
    pub sentences: Vec<CleanSentence>,
}

impl StyledCorpus {
    pub fn new(style: Style) -> Self {
        Self {
            style,
            sentences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// One sentence per line, tokens separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.text());
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path, style: Style) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            style,
            sentences: text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(CleanSentence::from_text)
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_tsv_line<'a>(line: &'a str, path: &Path, lineno: usize) -> Result<Option<(&'a str, &'a str)>> {
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    match line.split_once('\t') {
        Some((k, v)) if !k.trim().is_empty() => Ok(Some((k.trim(), v.trim()))),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: "expected `key<TAB>value`".into(),
        }),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentimentLexicon {
    scores: HashMap<String, f64>,
}

impl SentimentLexicon {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut scores = HashMap::new();
        for (word, score) in pairs {
            let word = word.into();
            if !(-1.0..=1.0).contains(&score) {
                return Err(Error::InvalidInput(format!(
                    "lexicon score {score} for `{word}` outside [-1, 1]"
                )));
            }
            scores.insert(word.to_lowercase(), score);
        }
        Ok(Self { scores })
    }

    /// `word<TAB>score` lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let Some((word, score)) = parse_tsv_line(line, path, i + 1)? else {
                continue;
            };
            let score: f64 = score.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad score `{score}`"),
            })?;
            if !(-1.0..=1.0).contains(&score) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("score {score} outside [-1, 1]"),
                });
            }
            pairs.push((word.to_string(), score));
        }
        Self::from_pairs(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Small general-purpose lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON, Path::new("<bundled lexicon>")).expect("bundled lexicon parses")
    }

    pub fn score(&self, word: &str) -> Option<f64> {
        self.scores.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AbbreviationDict {
    map: HashMap<String, Vec<String>>,
}

impl AbbreviationDict {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (abbrev, expansion) in pairs {
            let key = abbrev.to_lowercase();
            let tokens: Vec<String> = expansion.split_whitespace().map(str::to_lowercase).collect();
            if tokens.is_empty() {
                return Err(Error::InvalidInput(format!("empty expansion for `{abbrev}`")));
            }
            if map.insert(key, tokens).is_some() {
                return Err(Error::InvalidInput(format!("duplicate abbreviation `{abbrev}`")));
            }
        }
        Ok(Self { map })
    }

    /// `abbrev<TAB>expansion` lines. Keys are case-insensitive.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(pair) = parse_tsv_line(line, path, i + 1)? {
                pairs.push((pair, i + 1));
            }
        }
        let mut seen = HashSet::new();
        for ((k, _), line) in &pairs {
            if !seen.insert(k.to_lowercase()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: format!("duplicate abbreviation `{k}`"),
                });
            }
        }
        Self::from_pairs(pairs.into_iter().map(|(p, _)| p))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_ABBREVIATIONS, Path::new("<bundled abbreviations>"))
            .expect("bundled abbreviations parse")
    }

    pub fn expand(&self, token: &str) -> Option<&[String]> {
        self.map.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Bundled list of common English words.
pub fn english_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| ENGLISH_WORDS.split_whitespace().collect())
}

pub trait LanguageFilter {
    fn is_english(&self, tokens: &[String]) -> bool;
}

/// Keeps a sentence when enough of its word tokens are known English words.
/// Punctuation, numbers and placeholders are not counted.
#[derive(Clone, Debug)]
pub struct WordlistFilter {
    pub min_fraction: f64,
    extra: HashSet<String>,
}

impl Default for WordlistFilter {
    fn default() -> Self {
        Self {
            min_fraction: 0.6,
            extra: HashSet::new(),
        }
    }
}

impl WordlistFilter {
    pub fn with_words(mut self, words: impl IntoIterator<Item = String>) -> Self {
        self.extra.extend(words);
        self
    }

    pub fn fraction(&self, tokens: &[String]) -> Option<f64> {
        let words: Vec<&String> = tokens
            .iter()
            .filter(|t| !is_placeholder(t) && t.chars().any(char::is_alphabetic))
            .collect();
        if words.is_empty() {
            return None;
        }
        let known = words
            .iter()
            .filter(|w| english_words().contains(w.as_str()) || self.extra.contains(w.as_str()))
            .count();
        Some(known as f64 / words.len() as f64)
    }
}

impl LanguageFilter for WordlistFilter {
    fn is_english(&self, tokens: &[String]) -> bool {
        self.fraction(tokens).is_none_or(|f| f >= self.min_fraction)
    }
}

/// Accepts everything.
pub struct AnyLanguage;

impl LanguageFilter for AnyLanguage {
    fn is_english(&self, _: &[String]) -> bool {
        true
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Retweet,
    NonEnglish,
    EmptyAfterCleaning,
    TooShort,
    TooLong,
    TooManyRare,
    Interrogative,
    WeakSentiment,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Retweet => "retweet",
            RejectReason::NonEnglish => "non_english",
            RejectReason::EmptyAfterCleaning => "empty_after_cleaning",
            RejectReason::TooShort => "too_short",
            RejectReason::TooLong => "too_long",
            RejectReason::TooManyRare => "too_many_rare",
            RejectReason::Interrogative => "interrogative",
            RejectReason::WeakSentiment => "weak_sentiment",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn is_placeholder(token: &str) -> bool {
    RESERVED.contains(&token)
}

struct Patterns {
    url: Regex,
    money: Regex,
    time: Regex,
    number: Regex,
    mention: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"(?i)^(https?://|www\.)\S*$").unwrap(),
        money: Regex::new(r"^([$£€]\d[\d,]*(\.\d+)?[km]?|\d[\d,]*(\.\d+)?[$£€])$").unwrap(),
        time: Regex::new(r"(?i)^(\d{1,2}(:\d{2})?(am|pm)|\d{1,2}:\d{2})$").unwrap(),
        number: Regex::new(r"^\d[\d,]*(\.\d+)?(st|nd|rd|th)?$").unwrap(),
        mention: Regex::new(r"^@\w+$").unwrap(),
    })
}

/// `#HappyMonday` -> `Happy Monday`, `#so_tired` -> `so tired`.
fn segment_hashtag(tag: &str) -> Vec<String> {
    let body = tag.trim_start_matches('#');
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;
    for c in body.chars() {
        if c == '_' {
            if !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            if p.is_lowercase() && c.is_uppercase() {
                parts.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
        prev = Some(c);
    }
    if !current.is_empty() {
        parts.push(current);
    }
    parts
}

/// Splits leading and trailing punctuation off a token. A run of one
/// repeated mark collapses to a single mark (`!!!` -> `!`).
fn split_punctuation(token: &str) -> Vec<String> {
    if is_placeholder(token) {
        return vec![token.to_string()];
    }
    let is_punct = |c: char| c.is_ascii_punctuation() && c != '#' && c != '@' && c != '$';
    let chars: Vec<char> = token.chars().collect();
    let start = chars.iter().position(|&c| !is_punct(c)).unwrap_or(chars.len());
    let end = chars.iter().rposition(|&c| !is_punct(c)).map_or(start, |e| e + 1);
    let squash = |run: &[char]| -> String {
        let mut s = String::new();
        for &c in run {
            if !s.ends_with(c) {
                s.push(c);
            }
        }
        s
    };
    let mut out = Vec::new();
    if start > 0 {
        out.push(squash(&chars[..start.min(chars.len())]));
    }
    if start < end {
        out.push(chars[start..end].iter().collect());
    }
    if end < chars.len() && end >= start {
        out.push(squash(&chars[end..]));
    }
    out
}

/// Runs of three or more identical letters become two; if that spelling is
/// not a known word, those runs become one instead.
pub fn restore_elongation(word: &str, known: &dyn Fn(&str) -> bool) -> String {
    let chars: Vec<char> = word.chars().collect();
    let mut runs: Vec<(char, usize)> = Vec::new();
    for &c in &chars {
        match runs.last_mut() {
            Some((p, n)) if *p == c => *n += 1,
            _ => runs.push((c, 1)),
        }
    }
    if !runs.iter().any(|&(c, n)| n >= 3 && c.is_alphabetic()) {
        return word.to_string();
    }
    let build = |long: usize| -> String {
        runs.iter()
            .flat_map(|&(c, n)| {
                let k = if n >= 3 && c.is_alphabetic() { long } else { n };
                std::iter::repeat_n(c, k)
            })
            .collect()
    };
    let two = build(2);
    if known(&two.to_lowercase()) {
        two
    } else {
        build(1)
    }
}

/// Cleaning rules applied to every post.
pub struct Normalizer<'a> {
    pub abbreviations: &'a AbbreviationDict,
    pub language: &'a dyn LanguageFilter,
    pub lexicon: Option<&'a SentimentLexicon>,
}

impl Normalizer<'_> {
    fn known(&self, word: &str) -> bool {
        english_words().contains(word)
            || self.lexicon.is_some_and(|l| l.score(word).is_some())
            || self.abbreviations.expand(word).is_some()
    }

    pub fn normalize(&self, raw: &RawPost) -> std::result::Result<CleanSentence, RejectReason> {
        if raw.is_retweet {
            return Err(RejectReason::Retweet);
        }
        let p = patterns();
        let mut tokens: Vec<&str> = raw
            .text
            .split_whitespace()
            .filter(|t| !p.url.is_match(t))
            .collect();
        while tokens.last().is_some_and(|t| t.starts_with('#')) {
            tokens.pop();
        }

        let mut stage: Vec<String> = Vec::new();
        for tok in tokens {
            for piece in split_punctuation(tok) {
                if piece.starts_with('#') && piece.len() > 1 {
                    stage.extend(segment_hashtag(&piece));
                } else if p.mention.is_match(&piece) {
                    stage.push(USER_TOKEN.to_string());
                } else if p.money.is_match(&piece) || p.time.is_match(&piece) || p.number.is_match(&piece) {
                    stage.push(NUMBER_TOKEN.to_string());
                } else {
                    stage.push(piece);
                }
            }
        }

        let mut out: Vec<String> = Vec::new();
        for tok in stage {
            if is_placeholder(&tok) {
                out.push(tok);
                continue;
            }
            let tok = restore_elongation(&tok, &|w| self.known(w)).to_lowercase();
            match self.abbreviations.expand(&tok) {
                Some(expansion) => out.extend(expansion.iter().cloned()),
                None => out.push(tok),
            }
        }
        out.dedup();
        if out.is_empty() {
            return Err(RejectReason::EmptyAfterCleaning);
        }
        if !self.language.is_english(&out) {
            return Err(RejectReason::NonEnglish);
        }
        Ok(CleanSentence { tokens: out })
    }
}

/// Token counts over the whole normalised corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a CleanSentence>) -> Self {
        let mut counts = HashMap::new();
        for s in sentences {
            for t in &s.tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        Self { counts }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn rare_tokens(&self, s: &CleanSentence) -> usize {
        s.tokens.iter().filter(|t| self.count(t) < RARE_BELOW).count()
    }
}

pub fn length_and_rarity_filter(s: &CleanSentence, freq: &FrequencyTable) -> std::result::Result<(), RejectReason> {
    if s.len() < MIN_TOKENS {
        return Err(RejectReason::TooShort);
    }
    if s.len() > MAX_TOKENS {
        return Err(RejectReason::TooLong);
    }
    if freq.rare_tokens(s) > MAX_RARE {
        return Err(RejectReason::TooManyRare);
    }
    Ok(())
}

pub fn is_interrogative(s: &CleanSentence, wh_words: &[&str]) -> bool {
    s.tokens.last().is_some_and(|t| t.ends_with('?'))
        || s.tokens.first().is_some_and(|t| wh_words.contains(&t.as_str()))
}

/// Largest absolute lexicon score among the sentence's tokens.
pub fn max_abs_sentiment(s: &CleanSentence, lex: &SentimentLexicon) -> f64 {
    s.tokens
        .iter()
        .filter_map(|t| lex.score(t))
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Gate for non-ironic candidates: no questions, and at least one clearly
/// polar word.
pub fn strong_sentiment_gate(
    s: &CleanSentence,
    lex: &SentimentLexicon,
) -> Result<std::result::Result<(), RejectReason>> {
    if lex.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    if is_interrogative(s, &WH_WORDS) {
        return Ok(Err(RejectReason::Interrogative));
    }
    if max_abs_sentiment(s, lex) > SENTIMENT_CUTOFF {
        Ok(Ok(()))
    } else {
        Ok(Err(RejectReason::WeakSentiment))
    }
}

/// Irony decision for a cleaned sentence.
pub trait IronyJudge {
    fn is_trained(&self) -> bool;
    fn irony_probability(&self, s: &CleanSentence) -> Result<f64>;
    fn threshold(&self) -> f64;
}

pub struct StyleSplit {
    pub non_irony: StyledCorpus,
    pub irony: StyledCorpus,
    /// Indices into the input that the sentiment gate dropped.
    pub rejects: Vec<(usize, RejectReason)>,
    /// Input index of each kept sentence, per partition.
    pub non_irony_index: Vec<usize>,
    pub irony_index: Vec<usize>,
}

/// Routes sentences by the classifier's decision (`score >= threshold` is
/// ironic); the non-ironic side must then pass the sentiment gate.
pub fn split_by_style(
    sentences: &[CleanSentence],
    judge: &dyn IronyJudge,
    lex: &SentimentLexicon,
) -> Result<StyleSplit> {
    if !judge.is_trained() {
        return Err(Error::UntrainedClassifier);
    }
    let mut split = StyleSplit {
        non_irony: StyledCorpus::new(Style::NonIrony),
        irony: StyledCorpus::new(Style::Irony),
        rejects: Vec::new(),
        non_irony_index: Vec::new(),
        irony_index: Vec::new(),
    };
    for (i, s) in sentences.iter().enumerate() {
        if judge.irony_probability(s)? >= judge.threshold() {
            split.irony.sentences.push(s.clone());
            split.irony_index.push(i);
        } else {
            match strong_sentiment_gate(s, lex)? {
                Ok(()) => {
                    split.non_irony.sentences.push(s.clone());
                    split.non_irony_index.push(i);
                }
                Err(reason) => split.rejects.push((i, reason)),
            }
        }
    }
    Ok(split)
}

/// Result of cleaning a file of posts; line numbers are 1-based.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineOutput {
    pub kept: Vec<(usize, CleanSentence)>,
    pub rejects: Vec<(usize, RejectReason)>,
}

impl PipelineOutput {
    pub fn sentences(&self) -> Vec<CleanSentence> {
        self.kept.iter().map(|(_, s)| s.clone()).collect()
    }

    /// `line_no<TAB>reason` per reject, in line order.
    pub fn reject_log(&self) -> String {
        let mut rejects = self.rejects.clone();
        rejects.sort_by_key(|&(l, _)| l);
        rejects.iter().map(|(l, r)| format!("{l}\t{r}\n")).collect()
    }
}

/// Normalisation then the length and rarity filter. Blank lines are skipped
/// without a log entry.
pub fn clean_lines(text: &str, retweet_prefix: &str, normalizer: &Normalizer) -> PipelineOutput {
    let mut normalized = Vec::new();
    let mut out = PipelineOutput::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match normalizer.normalize(&RawPost::from_line(line, retweet_prefix)) {
            Ok(s) => normalized.push((i + 1, s)),
            Err(r) => out.rejects.push((i + 1, r)),
        }
    }
    let freq = FrequencyTable::build(normalized.iter().map(|(_, s)| s));
    for (line, s) in normalized {
        match length_and_rarity_filter(&s, &freq) {
            Ok(()) => out.kept.push((line, s)),
            Err(r) => out.rejects.push((line, r)),
        }
    }
    out.rejects.sort_by_key(|&(l, _)| l);
    out
}
