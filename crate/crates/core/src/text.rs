//! Small text helpers shared by every stage: tokenization, normalization,
//! sentence splitting, token estimation and stable hashing.

use sha2::{Digest, Sha256};

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me",
    "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "same", "shall", "she", "should",
    "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "us",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric tokens. `_` is kept inside tokens so that
/// identifiers such as `max_connections` survive as one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Lowercase, trim, collapse internal whitespace. Used for keyword and
/// entity-name canonicalization.
pub fn normalize_name(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `Query Plan` -> `query_plan`.
pub fn snake_case(text: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in text.trim().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Split at `.`, `?` or `!` followed by whitespace. The terminator stays
/// with its sentence; surrounding whitespace is trimmed.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '?' | '!') {
            let next = i + c.len_utf8();
            if next >= bytes.len() || text[next..].starts_with(char::is_whitespace) {
                let s = text[start..next].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = next;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Hex SHA-256 of the input.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Short stable id fragment (first 16 hex chars of SHA-256).
pub fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// 64-bit FNV-1a with a seed folded into the offset basis.
pub fn fnv1a64(seed: u64, data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in data {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Truncate at a word boundary so that `estimate(result) <= max_tokens`.
pub fn truncate_to_tokens(
    text: &str,
    max_tokens: usize,
    estimate: impl Fn(&str) -> usize,
) -> String {
    if estimate(text) <= max_tokens {
        return text.to_string();
    }
    let mut out = String::new();
    for word in text.split_whitespace() {
        let candidate = if out.is_empty() {
            word.to_string()
        } else {
            format!("{out} {word}")
        };
        if estimate(&candidate) > max_tokens {
            break;
        }
        out = candidate;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_table_is_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenize_keeps_identifiers() {
        assert_eq!(
            tokenize("Set max_connections = 100, then B-tree!"),
            vec!["set", "max_connections", "100", "then", "b", "tree"]
        );
    }

    #[test]
    fn sentences_split_on_terminator_and_space() {
        assert_eq!(
            split_sentences("One. Two? Three! v1.2 stays. Tail"),
            vec!["One.", "Two?", "Three!", "v1.2 stays.", "Tail"]
        );
    }

    #[test]
    fn snake_case_from_phrases() {
        assert_eq!(snake_case("Query Plan"), "query_plan");
        assert_eq!(snake_case("  depends-on "), "depends_on");
        assert_eq!(snake_case("references"), "references");
    }

    #[test]
    fn normalize_collapses() {
        assert_eq!(normalize_name("  Buffer   Pool "), "buffer pool");
    }

    #[test]
    fn truncate_respects_budget() {
        let est = |s: &str| s.chars().count().div_ceil(4);
        let t = truncate_to_tokens("aaaa bbbb cccc dddd", 3, est);
        assert_eq!(t, "aaaa bbbb");
        assert!(est(&t) <= 3);
    }
}
