//! Pinned English stopword list used by copy and clue labeling.

use std::collections::HashSet;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

/// Version tag of [`STOPWORDS`]. Bump it whenever the list changes.
pub const STOPWORD_LIST_VERSION: &str = "en-179-v1";

/// Number of entries in [`STOPWORDS`].
pub const STOPWORD_COUNT: usize = 179;

/// SHA-256 of the list joined with `\n`.
pub const STOPWORD_SHA256: &str = "2faef318155a30d7e91c39de3f51fde2eb44a3fe24e0adb0c504fd35c7add888";

/// The NLTK English stopword list, lowercase.
pub const STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan",
    "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
];

pub fn stopword_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

/// SHA-256 hex digest of the shipped list.
pub fn stopword_digest() -> String {
    let digest = Sha256::digest(STOPWORDS.join("\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A labeling stopword: a listed word, or a token with no letters or digits
/// (punctuation never counts as content shared by passage and question).
pub fn is_stopword(normalized: &str) -> bool {
    stopword_set().contains(normalized) || !normalized.chars().any(char::is_alphanumeric)
}
