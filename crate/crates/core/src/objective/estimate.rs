use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{CandidatePool, CorpusBags, ObjectiveConfig};
use crate::data::TaskInstance;
use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::models::{
    generator_doc_embeddings, generator_logprob, retrieval_scores, select_documents, Model, ModelNodes, TokenSeq,
    PARAM_NAMES, RETRIEVER_PARAM,
};
use crate::rng::StreamKey;
use crate::sampling::{doc_probs, enumerate_list_probs, gumbel_topk_with_noise, st_topk, GumbelNoise, RankedList};

/// Largest corpus accepted by [`exact_expected_utility`].
pub const MAX_EXACT_DOCS: usize = 6;

/// One query of a batch: its stable index (keys the noise streams), the
/// instance and its current pool.
#[derive(Clone, Copy, Debug)]
pub struct QueryItem<'a> {
    pub index: u64,
    pub instance: &'a TaskInstance,
    pub pool: &'a CandidatePool,
}

/// `[|pool|]` node of `p(candidate | x, selected)`.
pub fn output_prob(
    tape: &mut Tape,
    x: &TokenSeq,
    selected: NodeId,
    candidates: &[&TokenSeq],
    nodes: &ModelNodes,
) -> Result<NodeId> {
    let logps = candidates
        .iter()
        .map(|y| {
            let lp = generator_logprob(tape, x, selected, y, nodes)?;
            tape.reshape(lp, vec![1])
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&logps)?;
    tape.exp(stacked)
}

/// Bag matrices registered as constants on one tape.
#[derive(Clone, Copy, Debug)]
pub struct BagNodes {
    pub retriever: NodeId,
    pub generator: NodeId,
}

impl BagNodes {
    pub fn register(tape: &mut Tape, bags: &CorpusBags) -> Self {
        BagNodes {
            retriever: tape.constant(bags.retriever.clone()),
            generator: tape.constant(bags.generator.clone()),
        }
    }
}

/// Noise key of sample `s` of query `index` at `step`.
pub fn noise_key(seed: u64, step: u64, index: u64, sample: u64) -> StreamKey {
    StreamKey::root(seed).at(step, index, sample)
}

/// Expected utility of one query on `tape`:
/// `(1/S) sum_s sum_j U_j p(candidate_j | x, d_s)` with lists `d_s` drawn by
/// the top-k operator under keyed Gumbel noise. Candidates with zero
/// utility contribute nothing and are skipped.
#[allow(clippy::too_many_arguments)]
pub fn query_objective(
    tape: &mut Tape,
    nodes: &ModelNodes,
    bags: BagNodes,
    item: QueryItem<'_>,
    kind: UtilityKind,
    config: &ObjectiveConfig,
    seed: u64,
    step: u64,
) -> Result<NodeId> {
    let x = &item.instance.x;
    let utilities = item.pool.utilities(kind);
    let (candidates, weights): (Vec<&TokenSeq>, Vec<f64>) = item
        .pool
        .candidates
        .iter()
        .zip(utilities)
        .filter(|(_, &u)| u != 0.0)
        .map(|(c, &u)| (c, u))
        .unzip();
    let scores = retrieval_scores(tape, x, bags.retriever, nodes)?;
    let num_docs = tape.value(scores).numel();
    let doc_embeddings = generator_doc_embeddings(tape, bags.generator, nodes)?;
    if candidates.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let weights = tape.constant(Tensor::vector(weights));
    let mut per_sample = Vec::with_capacity(config.num_list_samples);
    for s in 0..config.num_list_samples {
        let noise = GumbelNoise::draw(noise_key(seed, step, item.index, s as u64), num_docs, config.beta)?;
        let (selection, _) = st_topk(tape, scores, config.k, &noise, config.temperature, config.relaxation)?;
        let selected = select_documents(tape, selection, doc_embeddings)?;
        let probs = output_prob(tape, x, selected, &candidates, nodes)?;
        let weighted = tape.mul(probs, weights)?;
        let total = tape.sum(weighted)?;
        per_sample.push(tape.reshape(total, vec![1])?);
    }
    let all = tape.concat(&per_sample)?;
    tape.mean(all)
}

/// Mean of [`query_objective`] over a batch, on a single tape.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    tape: &mut Tape,
    nodes: &ModelNodes,
    bags: BagNodes,
    batch: &[QueryItem<'_>],
    kind: Option<UtilityKind>,
    config: &ObjectiveConfig,
    seed: u64,
    step: u64,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts = batch
        .iter()
        .map(|item| {
            let kind = kind.unwrap_or(item.instance.utility_kind);
            let v = query_objective(tape, nodes, bags, *item, kind, config, seed, step)?;
            tape.reshape(v, vec![1])
        })
        .collect::<Result<Vec<_>>>()?;
    let all = tape.concat(&parts)?;
    tape.mean(all)
}

/// Value and parameter gradients of the batch expected utility.
#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub value: f64,
    pub per_query: Vec<f64>,
    /// Gradients in [`PARAM_NAMES`] order; the retriever entry is zero when
    /// the retriever is frozen.
    pub grads: Vec<Tensor>,
}

/// Batch expected utility with one tape per query, evaluated in parallel
/// and reduced in batch order.
#[allow(clippy::too_many_arguments)]
pub fn expected_utility(
    model: &Model,
    bags: &CorpusBags,
    batch: &[QueryItem<'_>],
    config: &ObjectiveConfig,
    seed: u64,
    step: u64,
    train_retriever: bool,
) -> Result<ObjectiveOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for item in batch {
        item.pool.check_fresh(step, config.pool_refresh_interval)?;
    }
    let results = batch
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let nodes = ModelNodes::register(&mut tape, model, train_retriever);
            let bag_nodes = BagNodes::register(&mut tape, bags);
            let root = query_objective(
                &mut tape,
                &nodes,
                bag_nodes,
                *item,
                item.instance.utility_kind,
                config,
                seed,
                step,
            )?;
            let value = tape.value(root).item();
            let mut grads = tape.backward(root)?;
            let tensors = model.tensors();
            let g: Vec<Tensor> = nodes
                .ids()
                .iter()
                .zip(tensors)
                .map(|(&id, like)| grads.take(id).unwrap_or_else(|| Tensor::zeros(like.shape())))
                .collect();
            Ok((value, g))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = batch.len() as f64;
    let mut grads: Vec<Tensor> = model.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut per_query = Vec::with_capacity(batch.len());
    for (value, g) in &results {
        per_query.push(*value);
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, v) in acc.data_mut().iter_mut().zip(part.data()) {
                *a += v;
            }
        }
    }
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    if !train_retriever {
        grads[RETRIEVER_PARAM] = Tensor::zeros(model.tensors()[RETRIEVER_PARAM].shape());
    }
    debug_assert_eq!(grads.len(), PARAM_NAMES.len());
    let value = per_query.iter().sum::<f64>() / n;
    Ok(ObjectiveOutput { value, per_query, grads })
}

/// `sum_j U_j p(candidate_j | x, list)` on the untaped path.
pub fn list_utility(
    model: &Model,
    doc_embeddings: &[Vec<f64>],
    x: &TokenSeq,
    pool: &CandidatePool,
    kind: UtilityKind,
    list: &RankedList,
) -> f64 {
    let context = model.generator.context_for_list(x, doc_embeddings, list);
    pool.candidates
        .iter()
        .zip(pool.utilities(kind))
        .filter(|(_, &u)| u != 0.0)
        .map(|(c, &u)| u * model.generator.sequence_logprob(&context, c).exp())
        .sum()
}

/// Expected utility by summing over every ordered `k`-list weighted by its
/// exact Plackett-Luce probability. No sampling.
pub fn exact_expected_utility(
    model: &Model,
    bags: &CorpusBags,
    x: &TokenSeq,
    pool: &CandidatePool,
    kind: UtilityKind,
    k: usize,
) -> Result<f64> {
    let n = bags.num_docs();
    if n > MAX_EXACT_DOCS {
        return Err(Error::SizeGuard {
            what: "corpus size for exact expected utility",
            actual: n,
            limit: MAX_EXACT_DOCS,
        });
    }
    let probs = doc_probs(&model.retriever.scores(x, &bags.retriever));
    let doc_embeddings = model.generator.doc_embeddings(&bags.generator);
    let lists = enumerate_list_probs(&probs, k)?;
    Ok(lists
        .iter()
        .map(|(list, p)| p * list_utility(model, &doc_embeddings, x, pool, kind, list))
        .sum())
}

/// Forward-only Monte Carlo estimate with `num_samples` Gumbel-top-k lists
/// drawn from the keyed streams of (`seed`, `step`, `index`). The inner sum
/// is cached per distinct list.
#[allow(clippy::too_many_arguments)]
pub fn mc_expected_utility(
    model: &Model,
    bags: &CorpusBags,
    x: &TokenSeq,
    pool: &CandidatePool,
    kind: UtilityKind,
    k: usize,
    beta: f64,
    num_samples: usize,
    seed: u64,
    step: u64,
    index: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::invalid("need at least one list sample"));
    }
    let scores = model.retriever.scores(x, &bags.retriever);
    let doc_embeddings = model.generator.doc_embeddings(&bags.generator);
    let mut cache: BTreeMap<RankedList, f64> = BTreeMap::new();
    let mut total = 0.0;
    for s in 0..num_samples {
        let noise = GumbelNoise::draw(noise_key(seed, step, index, s as u64), scores.len(), beta)?;
        let list = gumbel_topk_with_noise(&scores, k, &noise)?;
        let value = *cache
            .entry(list)
            .or_insert_with_key(|list| list_utility(model, &doc_embeddings, x, pool, kind, list));
        total += value;
    }
    Ok(total / num_samples as f64)
}
