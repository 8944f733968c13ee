//! Untaped forward passes used for decoding, evaluation and exact oracles.
//! They mirror the taped versions in `graph`.

use super::params::{Generator, Retriever};
use super::tokens::TokenSeq;
use crate::diffcore::{log_softmax_slice, Tensor};
use crate::sampling::{top_k_indices, RankedList};
use crate::error::Result;

fn mean_rows(table: &Tensor, tokens: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; table.last_dim()];
    for &t in tokens {
        for (o, v) in out.iter_mut().zip(table.row(t)) {
            *o += v;
        }
    }
    let n = tokens.len() as f64;
    out.into_iter().map(|v| v / n).collect()
}

fn bag_times(bags: &Tensor, table: &Tensor) -> Vec<Vec<f64>> {
    let dim = table.last_dim();
    (0..bags.shape()[0])
        .map(|i| {
            let mut out = vec![0.0; dim];
            for (t, &w) in bags.row(i).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(table.row(t)) {
                    *o += w * v;
                }
            }
            out
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

impl Retriever {
    pub fn embed(&self, tokens: &[usize]) -> Vec<f64> {
        mean_rows(&self.token_embeddings, tokens)
    }

    /// Retrieval scores for every document; `doc_bags` is `[|C|, vocab]`.
    pub fn scores(&self, x: &TokenSeq, doc_bags: &Tensor) -> Vec<f64> {
        let query = self.embed(x.encoder_tokens());
        bag_times(doc_bags, &self.token_embeddings)
            .iter()
            .map(|d| dot(d, &query))
            .collect()
    }

    /// Deterministic top-k by score (no noise).
    pub fn retrieve(&self, x: &TokenSeq, doc_bags: &Tensor, k: usize) -> Result<RankedList> {
        top_k_indices(&self.scores(x, doc_bags), k)
    }
}

impl Generator {
    pub fn embed(&self, tokens: &[usize]) -> Vec<f64> {
        mean_rows(&self.token_embeddings, tokens)
    }

    /// Generator-side document embeddings; `doc_bags` is `[|C|, vocab + 1]`.
    pub fn doc_embeddings(&self, doc_bags: &Tensor) -> Vec<Vec<f64>> {
        bag_times(doc_bags, &self.token_embeddings)
    }

    /// Mean of the query embedding and the selected document embeddings.
    pub fn context(&self, x: &TokenSeq, selected: &[&[f64]]) -> Vec<f64> {
        let mut acc = self.embed(x.encoder_tokens());
        for row in selected {
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
        let n = (selected.len() + 1) as f64;
        acc.into_iter().map(|v| v / n).collect()
    }

    pub fn context_for_list(&self, x: &TokenSeq, doc_embeddings: &[Vec<f64>], list: &RankedList) -> Vec<f64> {
        let rows: Vec<&[f64]> = list.indices().iter().map(|&d| doc_embeddings[d].as_slice()).collect();
        self.context(x, &rows)
    }

    /// Next-token log-probabilities after `prev` (the start row for the
    /// first position).
    pub fn step_log_probs(&self, context: &[f64], prev: usize) -> Vec<f64> {
        let dim = self.dim();
        let prev_row = self.token_embeddings.row(prev);
        let hidden: Vec<f64> = (0..dim)
            .map(|i| {
                let w = self.hidden_weights.row(i);
                (dot(&w[..dim], context) + dot(&w[dim..], prev_row)).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.vocab())
            .map(|v| dot(self.output_weights.row(v), &hidden))
            .collect();
        log_softmax_slice(&logits)
    }

    pub fn sequence_logprob(&self, context: &[f64], y: &TokenSeq) -> f64 {
        let mut prev = self.start_id();
        let mut total = 0.0;
        for &t in y.tokens() {
            total += self.step_log_probs(context, prev)[t];
            prev = t;
        }
        total
    }
}
