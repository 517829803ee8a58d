//! Note segmentation and criteria cleaning.

use std::sync::LazyLock;

use regex::Regex;

/// Bump when the segmentation rule or the guard list changes.
pub const SEGMENTER_VERSION: u32 = 1;

/// Tokens that end in a period without ending a sentence (compared
/// case-insensitively, without the final period).
pub const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "approx", "fig", "dept",
    "no", "hx", "pt", "pts", "yo", "y.o", "b.i.d", "t.i.d", "q.d", "p.o", "i.v",
];

/// Collapse whitespace runs (newlines included) to one space and trim.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_guarded(word: &str) -> bool {
    let stem = word
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches('.')
        .to_lowercase();
    // single capital letters are initials: "J. Smith"
    ABBREVIATIONS.contains(&stem.as_str()) || (stem.chars().count() == 1 && stem.chars().all(char::is_alphabetic))
}

/// Split on `.`, `!` or `?` (optionally followed by closing quotes or
/// brackets) when whitespace follows, unless the word ending in `.` is in
/// [`ABBREVIATIONS`] or is a single letter. Joining the sentences with single
/// spaces gives back the whitespace-normalized note.
pub fn segment_sentences(note: &str) -> Vec<(String, String)> {
    let norm = normalize_whitespace(note);
    let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        current.push(w);
        let core = w.trim_end_matches(['"', '\'', ')', ']']);
        let ends = core.ends_with(['.', '!', '?']);
        let guarded = core.ends_with('.') && !core.ends_with("..") && is_guarded(core);
        if ends && !guarded && i + 1 < words.len() {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("S{}", i + 1), s))
        .collect()
}

/// `[S1] first sentence` lines.
pub fn render_segments(segments: &[(String, String)]) -> String {
    segments
        .iter()
        .map(|(id, s)| format!("[{id}] {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Criteria fragments with fewer words than this are dropped.
pub const MIN_CRITERION_WORDS: usize = 3;

pub const HEADER_PHRASES: &[&str] = &[
    "inclusion criteria",
    "exclusion criteria",
    "key inclusion criteria",
    "key exclusion criteria",
    "eligibility criteria",
    "inclusion",
    "exclusion",
    "criteria",
];

static PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:[-*•·]\s*|\(\d+\)\s*|\d+[.)]\s+|\((?i:[ivx]+)\)\s*|(?i:[ivx]+)[.)]\s+)").expect("valid regex")
});

fn strip_prefixes(line: &str) -> &str {
    let mut rest = line.trim();
    while let Some(m) = PREFIX.find(rest) {
        rest = rest[m.end()..].trim_start();
    }
    rest
}

/// One criterion per line with headers, bullets, numbering and short
/// fragments removed; order is kept.
pub fn clean_criteria(raw: &str) -> Vec<String> {
    clean_criteria_with(raw, MIN_CRITERION_WORDS)
}

pub fn clean_criteria_with(raw: &str, min_words: usize) -> Vec<String> {
    raw.lines()
        .filter_map(|line| {
            let body = normalize_whitespace(strip_prefixes(line));
            let lower = body.to_lowercase();
            let header = body.ends_with(':') || HEADER_PHRASES.contains(&lower.trim_end_matches(':').trim());
            (!header && body.split(' ').filter(|w| !w.is_empty()).count() >= min_words).then_some(body)
        })
        .collect()
}
