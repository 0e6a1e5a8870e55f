//! Small text helpers shared by the retrieval modules.

/// Splits on non-alphanumeric boundaries and case-folds each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

const TERMINAL_PUNCTUATION: &[char] = &['.', '!', '?', ';', ',', ':', '。', '！', '？', '…'];

/// Canonical form of a user query used as the experience-store key.
///
/// Case-folds, collapses runs of whitespace, trims, and strips trailing
/// terminal punctuation.
pub fn normalize_query(text: &str) -> String {
    let folded = text.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .trim()
        .to_string()
}

/// Truncates to at most `limit` characters, cutting at the last word boundary
/// that fits. A single word longer than `limit` is cut hard.
pub fn truncate_at_word(text: &str, limit: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let cut: String = text.chars().take(limit).collect();
    // Whole next word fits exactly when the char after the cut is whitespace.
    let next_is_space = text.chars().nth(limit).is_some_and(char::is_whitespace);
    if next_is_space {
        return cut.trim_end().to_string();
    }
    match cut.rfind(char::is_whitespace) {
        Some(pos) if pos > 0 => cut[..pos].trim_end().to_string(),
        _ => cut,
    }
}
