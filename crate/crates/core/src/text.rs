//! Word-level tokenisation shared by the data loader and the text encoder.

/// Default maximum number of word tokens per description.
pub const DEFAULT_WORD_LIMIT: usize = 50;

/// Lower-cased alphanumeric runs; everything else separates words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ids for a description, truncated to `word_limit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    /// Ids in `1..vocab`; 0 is reserved for padding.
    pub ids: Vec<u32>,
    /// Words dropped by truncation.
    pub dropped: usize,
}

/// Hashes each word (FNV-1a) into a fixed vocabulary.
pub fn tokenize(text: &str, word_limit: usize, vocab: usize) -> Tokens {
    let all = words(text);
    let dropped = all.len().saturating_sub(word_limit);
    let ids = all.iter().take(word_limit).map(|w| word_id(w, vocab)).collect();
    Tokens { ids, dropped }
}

pub fn word_id(word: &str, vocab: usize) -> u32 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    1 + (h % (vocab as u64 - 1)) as u32
}

/// Keeps the first `word_limit` words, joined by single spaces. Returns the
/// text unchanged when it is already within the limit.
pub fn truncate_words(text: &str, word_limit: usize) -> (String, bool) {
    let all = words(text);
    if all.len() <= word_limit {
        (text.to_string(), false)
    } else {
        (all[..word_limit].join(" "), true)
    }
}
