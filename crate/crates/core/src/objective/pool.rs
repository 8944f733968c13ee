use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusBags, ObjectiveConfig};
use crate::data::{read_jsonl, write_jsonl, TaskInstance};
use crate::error::{Error, Result};
use crate::metrics::{utility, UtilityKind};
use crate::models::{generate_beam, Model, TokenSeq};
use crate::rng::{Domain, StreamKey};

pub const POOLS_FORMAT: &str = "stochrag-pools";

/// The sampled output set for one query, with every utility precomputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePool {
    pub query: String,
    pub refresh_step: u64,
    pub candidates: Vec<TokenSeq>,
    pub utilities: BTreeMap<UtilityKind, Vec<f64>>,
}

impl CandidatePool {
    /// Builds a pool over `candidates` scored against the reference `y`.
    pub fn new(query: impl Into<String>, refresh_step: u64, candidates: Vec<TokenSeq>, y: &TokenSeq) -> Self {
        let utilities = UtilityKind::ALL
            .into_iter()
            .map(|kind| (kind, candidates.iter().map(|c| utility(kind, y, c)).collect()))
            .collect();
        CandidatePool {
            query: query.into(),
            refresh_step,
            candidates,
            utilities,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn utilities(&self, kind: UtilityKind) -> &[f64] {
        self.utilities.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks membership of `y`, the size bound and that every cached
    /// utility equals a fresh recomputation bit for bit.
    pub fn validate(&self, y: &TokenSeq, max_size: usize) -> Result<()> {
        if self.candidates.is_empty() || self.candidates.len() > max_size {
            return Err(Error::invalid(format!(
                "pool for {:?} has {} candidates, expected 1..={max_size}",
                self.query,
                self.candidates.len()
            )));
        }
        if !self.candidates.contains(y) {
            return Err(Error::invalid(format!("pool for {:?} is missing the reference output", self.query)));
        }
        for kind in UtilityKind::ALL {
            let cached = self.utilities(kind);
            let fresh: Vec<f64> = self.candidates.iter().map(|c| utility(kind, y, c)).collect();
            let same = cached.len() == fresh.len() && cached.iter().zip(&fresh).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::invalid(format!(
                    "pool for {:?} has stale {} utilities",
                    self.query,
                    kind.name()
                )));
            }
        }
        Ok(())
    }

    /// A pool built at `refresh_step` serves steps
    /// `refresh_step .. refresh_step + interval`.
    pub fn check_fresh(&self, step: u64, interval: u64) -> Result<()> {
        if step < self.refresh_step || step - self.refresh_step >= interval {
            return Err(Error::StalePool {
                query: self.query.clone(),
                refresh_step: self.refresh_step,
                step,
                interval,
            });
        }
        Ok(())
    }
}

/// Rebuilds the pool of one query from the current model.
///
/// Retrieval is the deterministic top-k, decoding a beam of width
/// `pool_beam`. Up to `pool_size` of the (distinct) beam outputs are drawn
/// uniformly; if the reference is not among them it replaces a uniformly
/// chosen member.
pub fn refresh_pool(
    model: &Model,
    bags: &CorpusBags,
    instance: &TaskInstance,
    query_index: u64,
    config: &ObjectiveConfig,
    seed: u64,
    step: u64,
) -> Result<CandidatePool> {
    let list = model.retriever.retrieve(&instance.x, &bags.retriever, config.k)?;
    let doc_embeddings = model.generator.doc_embeddings(&bags.generator);
    let context = model.generator.context_for_list(&instance.x, &doc_embeddings, &list);
    let beam = generate_beam(&model.generator, &context, config.pool_beam, config.max_len)?;
    let outputs: Vec<TokenSeq> = beam.into_iter().map(|(seq, _)| seq).collect();

    let mut rng = StreamKey::root(seed).at(step, query_index, 0).rng(Domain::Pool);
    let take = config.pool_size.min(outputs.len());
    let mut candidates: Vec<TokenSeq> = outputs.choose_multiple(&mut rng, take).cloned().collect();
    candidates.shuffle(&mut rng);
    if candidates.is_empty() {
        return Err(Error::invalid(format!("beam search produced no output for {:?}", instance.id)));
    }
    if !candidates.contains(&instance.y) {
        let slot = rng.random_range(0..candidates.len());
        candidates[slot] = instance.y.clone();
    }
    Ok(CandidatePool::new(instance.id.clone(), step, candidates, &instance.y))
}

/// Refreshes the pools of several queries in parallel; the output order
/// follows `queries`.
pub fn refresh_pools(
    model: &Model,
    bags: &CorpusBags,
    queries: &[(u64, &TaskInstance)],
    config: &ObjectiveConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<CandidatePool>> {
    queries
        .par_iter()
        .map(|&(index, inst)| refresh_pool(model, bags, inst, index, config, seed, step))
        .collect()
}

pub fn save_pools(path: &Path, pools: &[CandidatePool]) -> Result<()> {
    write_jsonl(path, POOLS_FORMAT, pools)
}

pub fn load_pools(path: &Path) -> Result<Vec<CandidatePool>> {
    read_jsonl(path, POOLS_FORMAT, |p: CandidatePool| {
        if p.utilities.values().any(|u| u.len() != p.candidates.len()) {
            return Err("field utilities: length differs from candidates".to_string());
        }
        Ok(p)
    })
}
