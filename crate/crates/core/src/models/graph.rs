//! Taped (differentiable) forward passes.

use super::params::Model;
use super::tokens::TokenSeq;
use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Model tensors registered on one tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelNodes {
    pub retriever_embeddings: NodeId,
    pub generator_embeddings: NodeId,
    pub hidden_weights: NodeId,
    pub output_weights: NodeId,
    pub vocab: usize,
}

impl ModelNodes {
    /// Registers every tensor as a differentiable leaf; with
    /// `train_retriever == false` the retriever table is a constant.
    pub fn register(tape: &mut Tape, model: &Model, train_retriever: bool) -> Self {
        let retriever_embeddings = if train_retriever {
            tape.leaf(model.retriever.token_embeddings.clone())
        } else {
            tape.constant(model.retriever.token_embeddings.clone())
        };
        ModelNodes {
            retriever_embeddings,
            generator_embeddings: tape.leaf(model.generator.token_embeddings.clone()),
            hidden_weights: tape.leaf(model.generator.hidden_weights.clone()),
            output_weights: tape.leaf(model.generator.output_weights.clone()),
            vocab: model.vocab(),
        }
    }

    pub fn ids(&self) -> [NodeId; 4] {
        [
            self.retriever_embeddings,
            self.generator_embeddings,
            self.hidden_weights,
            self.output_weights,
        ]
    }
}

/// Row-normalized bag-of-tokens matrix `[docs.len(), width]`; multiplying it
/// by an embedding table mean-pools every document at once.
pub fn bag_matrix(docs: &[Vec<usize>], width: usize) -> Result<Tensor> {
    let mut data = vec![0.0; docs.len() * width];
    for (i, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            return Err(Error::invalid(format!("document {i} has no tokens")));
        }
        let w = 1.0 / doc.len() as f64;
        for &t in doc {
            if t >= width {
                return Err(Error::invalid(format!("token {t} outside embedding table of {width} rows")));
            }
            data[i * width + t] += w;
        }
    }
    Tensor::matrix(docs.len(), width, data)
}

/// Mean of the embedding rows of `tokens`.
pub fn embed_sequence(tape: &mut Tape, tokens: &[usize], table: NodeId) -> Result<NodeId> {
    let rows = tape.gather(table, tokens.to_vec())?;
    tape.mean_rows(rows)
}

/// `score_i = <embed(x), embed(doc_i)>` under the retriever table.
pub fn retrieval_scores(tape: &mut Tape, x: &TokenSeq, doc_bags: NodeId, nodes: &ModelNodes) -> Result<NodeId> {
    let query = embed_sequence(tape, x.encoder_tokens(), nodes.retriever_embeddings)?;
    let docs = tape.matmul(doc_bags, nodes.retriever_embeddings)?;
    tape.matvec(docs, query)
}

/// Generator-side document embeddings `[|C|, dim]`.
pub fn generator_doc_embeddings(tape: &mut Tape, doc_bags: NodeId, nodes: &ModelNodes) -> Result<NodeId> {
    tape.matmul(doc_bags, nodes.generator_embeddings)
}

/// `selection [k, |C|] x documents [|C|, dim] -> [k, dim]`.
pub fn select_documents(tape: &mut Tape, selection: NodeId, doc_embeddings: NodeId) -> Result<NodeId> {
    tape.matmul(selection, doc_embeddings)
}

/// Mean of the query embedding and the `k` selected document rows.
pub fn generator_context(tape: &mut Tape, x: &TokenSeq, selected: NodeId, nodes: &ModelNodes) -> Result<NodeId> {
    let query = embed_sequence(tape, x.encoder_tokens(), nodes.generator_embeddings)?;
    let dim = tape.value(query).numel();
    let query_row = tape.reshape(query, vec![1, dim])?;
    let stacked = tape.concat(&[query_row, selected])?;
    tape.mean_rows(stacked)
}

/// Teacher-forced `sum_i log p(y_i | y_<i, context)`.
pub fn sequence_logprob(tape: &mut Tape, context: NodeId, y: &TokenSeq, nodes: &ModelNodes) -> Result<NodeId> {
    y.validate(nodes.vocab)?;
    let mut prev = nodes.vocab; // start symbol row
    let mut picks = Vec::with_capacity(y.len());
    for &token in y.tokens() {
        let prev_row = tape.gather(nodes.generator_embeddings, vec![prev])?;
        let dim = tape.value(prev_row).numel();
        let prev_vec = tape.reshape(prev_row, vec![dim])?;
        let input = tape.concat(&[context, prev_vec])?;
        let pre = tape.matvec(nodes.hidden_weights, input)?;
        let hidden = tape.tanh(pre)?;
        let logits = tape.matvec(nodes.output_weights, hidden)?;
        let logp = tape.log_softmax(logits)?;
        picks.push(tape.gather(logp, vec![token])?);
        prev = token;
    }
    let all = tape.concat(&picks)?;
    tape.sum(all)
}

/// `log p(y | x, selected documents)`.
pub fn generator_logprob(
    tape: &mut Tape,
    x: &TokenSeq,
    selected: NodeId,
    y: &TokenSeq,
    nodes: &ModelNodes,
) -> Result<NodeId> {
    let context = generator_context(tape, x, selected, nodes)?;
    sequence_logprob(tape, context, y, nodes)
}
