//! Plackett-Luce distributions over ordered document lists, Gumbel-top-k
//! sampling, and the straight-through top-k selection operator.

mod gumbel;
mod plackett_luce;
mod straight_through;

pub use gumbel::{
    gumbel_from_uniform, gumbel_topk_sample, gumbel_topk_with_noise, perturb, top_k_indices, GumbelNoise,
};
pub use plackett_luce::{
    doc_probs, enumerate_list_probs, list_prob, total_variation, RankedList, MAX_ENUMERATION_DOCS,
};
pub use straight_through::{selection_matrix, st_topk, Relaxation, SelectionMatrix, MASK_LOGIT};
