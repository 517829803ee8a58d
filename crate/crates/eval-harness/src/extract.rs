//! Rule-based option extraction. The first rule that fires wins:
//!
//! 1. the last answer marker (`answer`, optionally `is`, an optional `:`,
//!    `=` or `-`, then a capital letter, optionally in parentheses) whose
//!    letter is a valid key;
//! 2. the whole output, trimmed of surrounding punctuation and whitespace,
//!    is exactly one valid key;
//! 3. the trimmed output equals, ignoring case, the text of exactly one
//!    option.
//!
//! Anything else, including "A or B", extracts nothing.

use std::sync::LazyLock;

use regex::Regex;

static MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:\banswer\b)(?:\s+(?i:is\b))?\s*[:=\-]?\s*(\()?([A-Z])(\))?").expect("valid regex")
});

pub fn extract_option<K: AsRef<str>, T: AsRef<str>>(raw: &str, options: &[(K, T)]) -> Option<String> {
    let is_key = |s: &str| options.iter().any(|(k, _)| k.as_ref() == s);

    let mut last = None;
    for cap in MARKER.captures_iter(raw) {
        let whole = cap.get(0).expect("match");
        let letter = cap.get(2).expect("letter group").as_str();
        let open = cap.get(1).is_some();
        let close = cap.get(3).is_some();
        // "(B" without ")" and "B" glued to a following word do not count
        let next = raw[whole.end()..].chars().next();
        let bounded = !next.is_some_and(|c| c.is_alphanumeric());
        if open == close && bounded && is_key(letter) {
            last = Some(letter.to_string());
        }
    }
    if last.is_some() {
        return last;
    }

    let trimmed = raw.trim();
    let bare = trimmed.trim_matches(|c: char| !c.is_alphanumeric());
    if is_key(bare) {
        return Some(bare.to_string());
    }

    let lower = trimmed.to_lowercase();
    let mut hits = options.iter().filter(|(_, t)| t.as_ref().trim().to_lowercase() == lower);
    match (hits.next(), hits.next()) {
        (Some((k, _)), None) if !lower.is_empty() => Some(k.as_ref().to_string()),
        _ => None,
    }
}
