//! Toy dense retriever and autoregressive generator.
//!
//! The retriever scores documents by the dot product of mean-pooled token
//! embeddings. The generator mean-pools the query and the selected
//! documents into one context vector and decodes with a single tanh layer.
//! Retriever and generator keep separate embedding tables.

mod beam;
mod graph;
mod inference;
mod params;
mod tokens;

pub use beam::generate_beam;
pub use graph::{
    bag_matrix, embed_sequence, generator_context, generator_doc_embeddings, generator_logprob, retrieval_scores,
    select_documents, sequence_logprob, ModelNodes,
};
pub use params::{Generator, Model, ModelShape, Retriever, PARAM_NAMES, RETRIEVER_PARAM};
pub use tokens::{TokenSeq, EOS};
