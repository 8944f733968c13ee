//! Bounded utilities in `[0, 1]` with `U(y, y) = 1`, R-Precision, and the
//! retrieval-gated KILT score.
//!
//! Utilities compare token sequences. Token-id sequences are compared as
//! given (end-of-sequence stripped); free text goes through
//! [`normalize_text`] first.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TokenSeq;
use crate::sampling::RankedList;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    ExactMatch,
    TokenF1,
    Accuracy,
    Bleu,
    RougeL,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 5] = [
        UtilityKind::ExactMatch,
        UtilityKind::TokenF1,
        UtilityKind::Accuracy,
        UtilityKind::Bleu,
        UtilityKind::RougeL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::ExactMatch => "exact_match",
            UtilityKind::TokenF1 => "token_f1",
            UtilityKind::Accuracy => "accuracy",
            UtilityKind::Bleu => "bleu",
            UtilityKind::RougeL => "rouge_l",
        }
    }
}

impl std::str::FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UtilityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown utility kind {s:?}")))
    }
}

/// Lowercases, splits on whitespace, strips punctuation characters and
/// drops tokens left empty.
pub fn normalize_text(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Utility between a reference `y` and a prediction `y_hat` (token ids,
/// end-of-sequence stripped).
pub fn utility(kind: UtilityKind, y: &TokenSeq, y_hat: &TokenSeq) -> f64 {
    utility_tokens(kind, y.content(), y_hat.content())
}

/// Utility between two free-text strings after [`normalize_text`].
pub fn utility_text(kind: UtilityKind, y: &str, y_hat: &str) -> f64 {
    utility_tokens(kind, &normalize_text(y), &normalize_text(y_hat))
}

pub fn utility_tokens<T: Eq + Hash + Clone>(kind: UtilityKind, y: &[T], y_hat: &[T]) -> f64 {
    match kind {
        UtilityKind::ExactMatch | UtilityKind::Accuracy => exact_match(y, y_hat),
        UtilityKind::TokenF1 => token_f1(y, y_hat),
        UtilityKind::Bleu => bleu(y, y_hat),
        UtilityKind::RougeL => rouge_l(y, y_hat),
    }
}

fn exact_match<T: Eq>(y: &[T], y_hat: &[T]) -> f64 {
    if y == y_hat {
        1.0
    } else {
        0.0
    }
}

fn counts<T: Eq + Hash + Clone>(items: impl Iterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap<T: Eq + Hash>(reference: &HashMap<T, usize>, hypothesis: &HashMap<T, usize>) -> usize {
    hypothesis
        .iter()
        .map(|(t, &c)| c.min(reference.get(t).copied().unwrap_or(0)))
        .sum()
}

/// Multiset token overlap F1.
fn token_f1<T: Eq + Hash + Clone>(y: &[T], y_hat: &[T]) -> f64 {
    if y.is_empty() || y_hat.is_empty() {
        return exact_match(y, y_hat);
    }
    let common = clipped_overlap(&counts(y.iter().cloned()), &counts(y_hat.iter().cloned()));
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / y_hat.len() as f64;
    let recall = common as f64 / y.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

const BLEU_ORDER: usize = 4;

/// Sentence BLEU up to 4-grams. Unigram precision is unsmoothed, higher
/// orders use add-one smoothing, times the brevity penalty.
fn bleu<T: Eq + Hash + Clone>(y: &[T], y_hat: &[T]) -> f64 {
    if y.is_empty() || y_hat.is_empty() {
        return exact_match(y, y_hat);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let hyp = counts(y_hat.windows(n).map(|w| w.to_vec()));
        let reference = counts(y.windows(n).map(|w| w.to_vec()));
        let matches = clipped_overlap(&reference, &hyp) as f64;
        let total = y_hat.len().saturating_sub(n - 1) as f64;
        let precision = if n == 1 {
            matches / total
        } else {
            (matches + 1.0) / (total + 1.0)
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let brevity = if y_hat.len() >= y.len() {
        1.0
    } else {
        (1.0 - y.len() as f64 / y_hat.len() as f64).exp()
    };
    (brevity * (log_sum / BLEU_ORDER as f64).exp()).clamp(0.0, 1.0)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with beta = 1.
fn rouge_l<T: Eq + Hash + Clone>(y: &[T], y_hat: &[T]) -> f64 {
    if y.is_empty() || y_hat.is_empty() {
        return exact_match(y, y_hat);
    }
    let lcs = lcs_len(y, y_hat);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / y_hat.len() as f64;
    let recall = lcs as f64 / y.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fraction of the `R = |provenance|` gold documents found among the top
/// `R` retrieved ones. A shorter list is scored over what is available.
pub fn r_precision(retrieved: &RankedList, provenance: &BTreeSet<usize>) -> Result<f64> {
    if provenance.is_empty() {
        return Err(Error::invalid("R-Precision needs a nonempty provenance set"));
    }
    let r = provenance.len();
    let hits = retrieved
        .indices()
        .iter()
        .take(r)
        .filter(|d| provenance.contains(d))
        .count();
    Ok(hits as f64 / r as f64)
}

/// The utility counts only when retrieval is perfect (`rp == 1`).
pub fn kilt_score(kind: UtilityKind, rp: f64, y: &TokenSeq, y_hat: &TokenSeq) -> f64 {
    gate(rp, utility(kind, y, y_hat))
}

pub fn gate(rp: f64, utility: f64) -> f64 {
    if rp == 1.0 {
        utility
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn seq(tokens: &[usize]) -> TokenSeq {
        TokenSeq::from_content(tokens, 20).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(utility_text(UtilityKind::ExactMatch, "paris", "paris"), 1.0);
        assert_eq!(utility_tokens(UtilityKind::TokenF1, &words("a b"), &words("b c")), 0.5);
        assert_eq!(utility_tokens(UtilityKind::Bleu, &words("a b c"), &words("d e")), 0.0);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  The  Eiffel, Tower! . "), vec!["the", "eiffel", "tower"]);
        assert_eq!(utility_text(UtilityKind::Accuracy, "Paris.", "paris"), 1.0);
        assert_eq!(utility_text(UtilityKind::ExactMatch, "...", ""), 1.0);
    }

    #[test]
    fn bleu_hand_computed() {
        // hyp "a b c d" vs ref "a b c e": p1 = 3/4, p2 = (2+1)/(3+1),
        // p3 = (1+1)/(2+1), p4 = (0+1)/(1+1), no brevity penalty.
        let expected = (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        let got = utility_tokens(UtilityKind::Bleu, &words("a b c e"), &words("a b c d"));
        assert!((got - expected).abs() < 1e-12);
        // shorter hypothesis pays exp(1 - 4/2)
        let short = utility_tokens(UtilityKind::Bleu, &words("a b c d"), &words("a b"));
        let expected = (1.0f64 - 2.0).exp() * (1.0f64 * 1.0 * 1.0 * 1.0).powf(0.25);
        assert!((short - expected).abs() < 1e-12);
    }

    #[test]
    fn rouge_hand_computed() {
        // LCS("a b c d", "a c e") = 2 -> P = 2/3, R = 1/2
        let got = utility_tokens(UtilityKind::RougeL, &words("a b c d"), &words("a c e"));
        let (p, r) = (2.0 / 3.0, 0.5);
        assert!((got - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn r_precision_examples() {
        let gold: BTreeSet<usize> = [3].into();
        assert_eq!(r_precision(&RankedList::new(vec![3, 1], 5).unwrap(), &gold).unwrap(), 1.0);
        assert_eq!(r_precision(&RankedList::new(vec![1, 3], 5).unwrap(), &gold).unwrap(), 0.0);
        let pair: BTreeSet<usize> = [0, 1].into();
        assert_eq!(r_precision(&RankedList::new(vec![0, 2, 1], 5).unwrap(), &pair).unwrap(), 0.5);
        assert!(r_precision(&RankedList::new(vec![0], 5).unwrap(), &BTreeSet::new()).is_err());
        assert_eq!(r_precision(&RankedList::new(vec![1], 5).unwrap(), &pair).unwrap(), 0.5);
    }

    #[test]
    fn kilt_examples() {
        let y = seq(&[4, 5]);
        assert_eq!(kilt_score(UtilityKind::ExactMatch, 1.0, &y, &y), 1.0);
        assert_eq!(kilt_score(UtilityKind::ExactMatch, 0.5, &y, &y), 0.0);
        assert_eq!(kilt_score(UtilityKind::TokenF1, 1.0, &seq(&[1, 2]), &seq(&[2, 3])), 0.5);
    }

    #[test]
    fn eos_is_stripped() {
        let a = TokenSeq::new(vec![3, 4, crate::models::EOS], 10).unwrap();
        assert_eq!(a.content(), &[3, 4]);
        for kind in UtilityKind::ALL {
            assert_eq!(utility(kind, &a, &seq(&[3, 4])), 1.0);
            assert_eq!(utility(kind, &seq(&[]), &seq(&[])), 1.0);
            assert_eq!(utility(kind, &seq(&[]), &a), 0.0);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in UtilityKind::ALL {
            assert_eq!(kind.name().parse::<UtilityKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!("bleurt".parse::<UtilityKind>().is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_identity(
            y in proptest::collection::vec(1usize..8, 0..10),
            h in proptest::collection::vec(1usize..8, 0..10),
            rp in prop_oneof![Just(1.0f64), Just(0.5), 0.0f64..1.0],
        ) {
            let (ys, hs) = (seq(&y), seq(&h));
            for kind in UtilityKind::ALL {
                let u = utility(kind, &ys, &hs);
                prop_assert!((0.0..=1.0).contains(&u), "{kind:?} {u}");
                prop_assert_eq!(utility(kind, &ys, &ys), 1.0);
                let k = kilt_score(kind, rp, &ys, &hs);
                prop_assert!(k <= u);
                prop_assert_eq!(k == u, rp == 1.0 || u == 0.0);
            }
            prop_assert_eq!(utility(UtilityKind::TokenF1, &ys, &hs), utility(UtilityKind::TokenF1, &hs, &ys));
            prop_assert_eq!(utility(UtilityKind::ExactMatch, &ys, &hs), utility(UtilityKind::ExactMatch, &hs, &ys));
        }
    }
}
