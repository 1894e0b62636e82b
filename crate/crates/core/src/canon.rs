//! Text canonicalization shared by every vocabulary comparison.

use alloc::string::String;

/// Lowercases, trims, and collapses internal whitespace runs to one space.
pub fn canonicalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Indefinite article for a noun phrase by the vowel rule.
pub fn indefinite_article(phrase: &str) -> &'static str {
    match phrase.trim_start().chars().next() {
        Some(c) if matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Strips a leading `a`, `an` or `the` word, if present.
pub fn strip_article(phrase: &str) -> &str {
    for article in ["a ", "an ", "the "] {
        if phrase.len() > article.len() && phrase[..article.len()].eq_ignore_ascii_case(article) {
            return phrase[article.len()..].trim_start();
        }
    }
    phrase
}
