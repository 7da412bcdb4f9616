//! Fixed-length integer token sequences shared by the filepath and
//! API-sequence featurizers.

/// Reserved id for padding.
pub const PAD_ID: u32 = 0;
/// Reserved id for rare / out-of-vocabulary tokens.
pub const UNK_ID: u32 = 1;
/// Number of reserved ids prepended to every vocabulary.
pub const RESERVED_IDS: u32 = 2;

/// Fixed-length encoding of a filepath or API call trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Token count before truncation or padding.
    pub true_length: usize,
}

impl TokenSequence {
    /// Truncate or right-pad `ids` to exactly `n` entries.
    pub fn fit(mut ids: Vec<u32>, n: usize) -> TokenSequence {
        let true_length = ids.len();
        ids.truncate(n);
        while ids.len() < n {
            ids.push(PAD_ID);
        }
        TokenSequence { ids, true_length }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_pads_and_truncates() {
        let s = TokenSequence::fit(vec![2, 3], 4);
        assert_eq!(s.ids, vec![2, 3, 0, 0]);
        assert_eq!(s.true_length, 2);
        let t = TokenSequence::fit(vec![2, 3, 4, 5], 2);
        assert_eq!(t.ids, vec![2, 3]);
        assert_eq!(t.true_length, 4);
    }
}
