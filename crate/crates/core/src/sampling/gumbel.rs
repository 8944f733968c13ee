use serde::{Deserialize, Serialize};

use super::plackett_luce::RankedList;
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};

/// Inverse-CDF Gumbel(0, beta) transform: `-beta * ln(-ln u)`.
pub fn gumbel_from_uniform(u: f64, beta: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("gumbel scale must be positive, got {beta}")));
    }
    Ok(-beta * (-u.ln()).ln())
}

/// Per-document Gumbel perturbations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelNoise {
    pub g: Vec<f64>,
    pub beta: f64,
    pub key: Option<StreamKey>,
}

impl GumbelNoise {
    /// Draw `i` of the keyed stream perturbs document `i`.
    pub fn draw(key: StreamKey, num_docs: usize, beta: f64) -> Result<Self> {
        let g = key
            .uniforms(Domain::Gumbel, num_docs)
            .into_iter()
            .map(|u| gumbel_from_uniform(u, beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(GumbelNoise { g, beta, key: Some(key) })
    }

    pub fn from_seed(seed: u64, num_docs: usize, beta: f64) -> Result<Self> {
        GumbelNoise::draw(StreamKey::root(seed), num_docs, beta)
    }

    /// Fixed noise values, e.g. zeros for deterministic top-k.
    pub fn fixed(g: Vec<f64>) -> Self {
        GumbelNoise { g, beta: 1.0, key: None }
    }

    pub fn zeros(num_docs: usize) -> Self {
        GumbelNoise::fixed(vec![0.0; num_docs])
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// Indices of the `k` largest values in descending order. Ties go to the
/// lowest index.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<RankedList> {
    if k > values.len() {
        return Err(Error::invalid(format!("k = {k} exceeds corpus size {}", values.len())));
    }
    let mut taken = vec![false; values.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| v > values[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= len guarantees an unmasked entry");
        taken[b] = true;
        out.push(b);
    }
    Ok(RankedList::from_unchecked(out))
}

/// Adds noise to scores.
pub fn perturb(scores: &[f64], noise: &GumbelNoise) -> Result<Vec<f64>> {
    if noise.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            op: "perturb",
            shapes: format!("{} scores vs {} noise values", scores.len(), noise.len()),
        });
    }
    Ok(scores.iter().zip(&noise.g).map(|(s, g)| s + g).collect())
}

/// Top-k of Gumbel-perturbed scores: one Plackett-Luce sample.
pub fn gumbel_topk_sample(scores: &[f64], k: usize, beta: f64, seed: u64) -> Result<RankedList> {
    if k > scores.len() {
        return Err(Error::invalid(format!("k = {k} exceeds corpus size {}", scores.len())));
    }
    let noise = GumbelNoise::from_seed(seed, scores.len(), beta)?;
    gumbel_topk_with_noise(scores, k, &noise)
}

pub fn gumbel_topk_with_noise(scores: &[f64], k: usize, noise: &GumbelNoise) -> Result<RankedList> {
    top_k_indices(&perturb(scores, noise)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn transform_examples() {
        assert!(gumbel_from_uniform((-1.0f64).exp(), 1.0).unwrap().abs() < 1e-15);
        assert!((gumbel_from_uniform((-E).exp(), 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((gumbel_from_uniform((-(-2.0f64).exp()).exp(), 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn transform_rejects_closed_endpoints() {
        assert!(gumbel_from_uniform(0.0, 1.0).is_err());
        assert!(gumbel_from_uniform(1.0, 1.0).is_err());
        assert!(gumbel_from_uniform(0.5, 0.0).is_err());
    }

    #[test]
    fn dominant_score_almost_always_wins() {
        let scores = [100.0, 0.0, -100.0];
        let hits = (0..10_000u64)
            .filter(|&seed| gumbel_topk_sample(&scores, 1, 1.0, seed).unwrap().indices() == [0])
            .count();
        assert!(hits as f64 / 10_000.0 >= 0.999);
    }

    #[test]
    fn full_k_is_permutation() {
        let scores = [0.3, -1.0, 2.0, 0.0, 0.7];
        for seed in 0..20 {
            let mut l = gumbel_topk_sample(&scores, 5, 1.0, seed).unwrap().indices().to_vec();
            l.sort_unstable();
            assert_eq!(l, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn k_too_large_rejected() {
        assert!(gumbel_topk_sample(&[0.0, 1.0], 3, 1.0, 0).is_err());
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 1.0], 3).unwrap().indices(), &[1, 2, 0]);
    }

    #[test]
    fn same_seed_same_sample() {
        let s = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(gumbel_topk_sample(&s, 2, 0.5, 9).unwrap(), gumbel_topk_sample(&s, 2, 0.5, 9).unwrap());
    }
}
