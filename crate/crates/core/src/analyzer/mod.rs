//! Text analysis shared by indexing and querying.
//!
//! The pipeline is tokenize -> lowercase -> stopword removal -> stemming.
//! Positions are assigned at tokenization time, so removing a stopword leaves
//! a gap instead of renumbering the survivors.

mod stopwords;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

pub use stopwords::{default_stopwords, parse_stopwords, DEFAULT_STOPWORDS_TEXT};

/// A normalized term together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Ordinal of the token in the source, counted before stopword removal.
    pub position: u32,
    /// Byte offset of the surface form in the source text.
    pub offset: usize,
    /// Byte length of the surface form in the source text.
    pub len: usize,
}

impl Token {
    /// The source slice this token was produced from.
    pub fn surface<'a>(&self, source: &'a str) -> &'a str {
        &source[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerConfig {
    stopwords: BTreeSet<String>,
    pub stemming_enabled: bool,
    /// Minimum token length in characters, measured on the lowercased surface form.
    pub min_token_length: usize,
}

impl AnalyzerConfig {
    pub fn new<I, S>(stopwords: I, stemming_enabled: bool, min_token_length: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let stopwords = stopwords
            .into_iter()
            .map(|s| s.as_ref().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        Self {
            stopwords,
            stemming_enabled,
            min_token_length: min_token_length.max(1),
        }
    }

    /// No stopwords, no stemming: lowercasing only.
    pub fn plain() -> Self {
        Self::new(Vec::<String>::new(), false, 1)
    }

    /// Loads a stopword file (one term per line, `#` comments) with stemming on.
    pub fn from_stopword_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(parse_stopwords(&text), true, 1))
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self::new(default_stopwords(), true, 1)
    }
}

/// Splits on every non-alphanumeric character. No normalization is applied.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            push_token(&mut tokens, text, s, i);
        }
    }
    if let Some(s) = start {
        push_token(&mut tokens, text, s, text.len());
    }
    tokens
}

fn push_token(tokens: &mut Vec<Token>, text: &str, start: usize, end: usize) {
    let position = tokens.len() as u32;
    tokens.push(Token {
        text: text[start..end].to_string(),
        position,
        offset: start,
        len: end - start,
    });
}

/// A configured analysis pipeline. Cheap to clone; the stemmer is shared.
#[derive(Clone)]
pub struct Analyzer {
    config: Arc<AnalyzerConfig>,
    stemmer: Arc<Stemmer>,
}

impl fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analyzer").field("config", &self.config).finish()
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new(AnalyzerConfig::default())
    }
}

// Bound on stemmer re-application; Snowball English converges in one or two passes.
const MAX_STEM_PASSES: usize = 8;

impl Analyzer {
    pub fn new(config: AnalyzerConfig) -> Self {
        Self {
            config: Arc::new(config),
            stemmer: Arc::new(Stemmer::create(Algorithm::English)),
        }
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.config
    }

    pub fn analyze(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for mut token in tokenize(text) {
            let lowered = token.text.to_lowercase();
            if lowered.chars().count() < self.config.min_token_length {
                continue;
            }
            if self.config.is_stopword(&lowered) {
                continue;
            }
            token.text = if self.config.stemming_enabled {
                self.stem(&lowered)
            } else {
                lowered
            };
            if !token.text.is_empty() {
                out.push(token);
            }
        }
        out
    }

    /// Analyzed term texts, in source order.
    pub fn terms(&self, text: &str) -> Vec<String> {
        self.analyze(text).into_iter().map(|t| t.text).collect()
    }

    /// Applies the stemmer until the term stops changing, so every emitted
    /// term is a fixed point of the pipeline.
    pub fn stem(&self, word: &str) -> String {
        let mut current = self.stemmer.stem(word).into_owned();
        for _ in 0..MAX_STEM_PASSES {
            let next = self.stemmer.stem(&current);
            if next == current {
                break;
            }
            current = next.into_owned();
        }
        current
    }

    /// A single stemmer pass, without fixed-point iteration.
    pub fn stem_once(&self, word: &str) -> String {
        self.stemmer.stem(word).into_owned()
    }
}
