//! Tokenization shared by the categorizer, sentiment and readability scorers.

/// Splits text into lowercase tokens on runs of non-alphanumeric characters.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}
