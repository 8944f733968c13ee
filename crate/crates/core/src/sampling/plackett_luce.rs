use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::softmax_slice;
use crate::error::{Error, Result};

/// Largest corpus for which exhaustive list enumeration is allowed.
pub const MAX_ENUMERATION_DOCS: usize = 8;

/// An ordered selection of distinct document indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankedList(Vec<usize>);

impl RankedList {
    /// Validates distinctness and range against a corpus of `num_docs`.
    pub fn new(indices: Vec<usize>, num_docs: usize) -> Result<Self> {
        let mut seen = vec![false; num_docs];
        for &i in &indices {
            if i >= num_docs {
                return Err(Error::invalid(format!("document index {i} out of range for {num_docs} documents")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("document index {i} repeated in ranked list")));
            }
        }
        Ok(RankedList(indices))
    }

    pub(crate) fn from_unchecked(indices: Vec<usize>) -> Self {
        RankedList(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax of retrieval scores: the per-document selection probabilities.
pub fn doc_probs(scores: &[f64]) -> Vec<f64> {
    softmax_slice(scores)
}

/// Probability of drawing `list`, in order, without replacement:
/// `prod_i p(d_i) / (1 - sum_{j<i} p(d_j))`.
pub fn list_prob(probs: &[f64], list: &RankedList) -> Result<f64> {
    let mut prob = 1.0;
    let mut consumed = 0.0;
    for (position, &d) in list.indices().iter().enumerate() {
        let p = *probs
            .get(d)
            .ok_or_else(|| Error::invalid(format!("document index {d} out of range for {} probabilities", probs.len())))?;
        let remaining = 1.0 - consumed;
        if remaining <= 0.0 {
            return Err(Error::DegenerateList {
                position,
                mass: remaining,
            });
        }
        prob *= p / remaining;
        consumed += p;
    }
    Ok(prob)
}

/// Probability of every ordered `k`-subset, built by expanding the sampling
/// tree one position at a time. At each node the remaining mass is the sum
/// over documents not yet chosen.
pub fn enumerate_list_probs(probs: &[f64], k: usize) -> Result<BTreeMap<RankedList, f64>> {
    let n = probs.len();
    if n > MAX_ENUMERATION_DOCS {
        return Err(Error::SizeGuard {
            what: "corpus size for enumeration",
            actual: n,
            limit: MAX_ENUMERATION_DOCS,
        });
    }
    if k > n {
        return Err(Error::SizeGuard {
            what: "list length k",
            actual: k,
            limit: n,
        });
    }
    let mut out = BTreeMap::new();
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; n];
    expand(probs, k, 1.0, &mut prefix, &mut used, &mut out);
    Ok(out)
}

fn expand(
    probs: &[f64],
    k: usize,
    mass: f64,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut BTreeMap<RankedList, f64>,
) {
    if prefix.len() == k {
        out.insert(RankedList(prefix.clone()), mass);
        return;
    }
    let remaining: f64 = probs
        .iter()
        .zip(used.iter())
        .filter(|(_, &u)| !u)
        .map(|(p, _)| p)
        .sum();
    for d in 0..probs.len() {
        if used[d] {
            continue;
        }
        used[d] = true;
        prefix.push(d);
        expand(probs, k, mass * probs[d] / remaining, prefix, used, out);
        prefix.pop();
        used[d] = false;
    }
}

/// Total-variation distance between an empirical list histogram and an
/// exact distribution. Lists absent from `exact` count with probability 0.
pub fn total_variation(exact: &BTreeMap<RankedList, f64>, counts: &BTreeMap<RankedList, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    let mut tv = 0.0;
    for (list, &p) in exact {
        let q = counts.get(list).copied().unwrap_or(0) as f64 / total as f64;
        tv += (p - q).abs();
    }
    for (list, &c) in counts {
        if !exact.contains_key(list) {
            tv += c as f64 / total as f64;
        }
    }
    0.5 * tv
}
