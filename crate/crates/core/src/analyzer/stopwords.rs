/// The shipped English stopword list.
pub const DEFAULT_STOPWORDS_TEXT: &str = include_str!("../../data/stopwords_en.txt");

/// Parses the stopword file format: one term per line, `#` starts a comment line.
pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stopwords() -> Vec<String> {
    parse_stopwords(DEFAULT_STOPWORDS_TEXT)
}
