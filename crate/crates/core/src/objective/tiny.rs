use rand::Rng;

use super::{CandidatePool, CorpusBags};
use crate::error::Result;
use crate::metrics::UtilityKind;
use crate::models::{Model, ModelShape, TokenSeq};
use crate::rng::{Domain, StreamKey};

/// A random single-query instance small enough for exact enumeration.
#[derive(Clone, Debug)]
pub struct TinyProblem {
    pub model: Model,
    pub bags: CorpusBags,
    pub x: TokenSeq,
    pub y: TokenSeq,
    pub pool: CandidatePool,
    pub kind: UtilityKind,
}

impl TinyProblem {
    /// Documents of 1-3 random tokens, a 1-2 token query and reference, and
    /// a pool of the reference plus distinct random outputs.
    pub fn random(seed: u64, num_docs: usize, vocab: usize, dim: usize, pool_size: usize) -> Result<Self> {
        let mut rng = StreamKey::root(seed).rng(Domain::Instance);
        let content = |rng: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize| -> Vec<usize> {
            let len = rng.random_range(lo..=hi);
            (0..len).map(|_| rng.random_range(1..vocab)).collect()
        };
        let docs: Vec<Vec<usize>> = (0..num_docs).map(|_| content(&mut rng, 1, 3)).collect();
        let x = TokenSeq::from_content(&content(&mut rng, 1, 2), vocab)?;
        let y = TokenSeq::from_content(&content(&mut rng, 1, 2), vocab)?;
        let mut candidates = vec![y.clone()];
        let mut attempts = 0;
        while candidates.len() < pool_size && attempts < 100 {
            attempts += 1;
            let c = TokenSeq::from_content(&content(&mut rng, 0, 2), vocab)?;
            if !candidates.contains(&c) {
                candidates.push(c);
            }
        }
        let model = Model::init(
            ModelShape {
                vocab,
                dim,
                embedding_scale: 1.0,
            },
            seed,
        )?;
        Ok(TinyProblem {
            bags: CorpusBags::from_docs(&docs, vocab)?,
            pool: CandidatePool::new("tiny", 0, candidates, &y),
            model,
            x,
            y,
            kind: UtilityKind::TokenF1,
        })
    }
}
