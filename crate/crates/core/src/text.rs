//! Shared text utilities: the single tokenizer used by lexical retrieval and
//! bag-of-words embeddings, so both views of the corpus agree on what a term
//! is.

/// Tokenize `text` for indexing and querying: lowercase, split on every
/// non-alphanumeric character, keep digit runs as tokens, no stemming and no
/// stopword removal.
///
/// `"Sales in Q3/2014 rose 4.5%"` becomes
/// `["sales", "in", "q3", "2014", "rose", "4", "5"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Sales in Q3/2014 rose 4.5%"),
            vec!["sales", "in", "q3", "2014", "rose", "4", "5"]
        );
    }

    #[test]
    fn digits_survive_and_empty_segments_drop() {
        assert_eq!(tokenize("  --  12,345 --"), vec!["12", "345"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("..."), Vec::<String>::new());
    }

    #[test]
    fn no_stemming() {
        assert_eq!(tokenize("running runs"), vec!["running", "runs"]);
    }
}
