//! Answer/text normalization shared by exact-match scoring, the token-F1
//! similarity scorer, the rule-based privacy judge, and the synthesis filter.
//!
//! The convention: lowercase, strip punctuation, drop the articles
//! `a`/`an`/`the`, collapse whitespace.

/// Normalize a string for exact-match comparison.
pub fn normalize(s: &str) -> String {
    normalized_tokens(s).join(" ")
}

/// Normalized token stream of a string (lowercased, punctuation stripped,
/// articles removed).
pub fn normalized_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(|c| c.to_lowercase())
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && w != "a" && w != "an" && w != "the")
        .collect()
}

/// Words carrying no distinguishing content for the privacy subset rule.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "in", "of",
    "on", "at", "to", "from", "and", "or", "with", "for", "by", "this",
    "that", "it", "its", "user", "users", "my", "i",
];

/// Content tokens of a privacy item: normalized tokens minus stopwords.
pub fn content_tokens(s: &str) -> Vec<String> {
    normalized_tokens(s)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Does `needle`'s normalized token sequence appear contiguously in
/// `haystack`'s normalized token sequence?
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let hay = normalized_tokens(haystack);
    let ned = normalized_tokens(needle);
    if ned.is_empty() {
        return false;
    }
    hay.windows(ned.len()).any(|w| w == ned.as_slice())
}
