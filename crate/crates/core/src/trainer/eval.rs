use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TaskInstance;
use crate::error::{Error, Result};
use crate::metrics::{gate, r_precision, utility};
use crate::models::{generate_beam, Model, TokenSeq};
use crate::objective::CorpusBags;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query: String,
    /// Retrieved document indices, best first.
    pub retrieved: Vec<usize>,
    pub output: TokenSeq,
    pub utility: f64,
    pub r_precision: f64,
    pub kilt_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_utility: f64,
    pub mean_r_precision: f64,
    pub mean_kilt_score: f64,
    pub rows: Vec<EvalRow>,
}

/// Deterministic top-k retrieval, beam decoding of width `beam_width`
/// (best output kept), and utility, R-Precision and KILT score per query.
pub fn evaluate(
    model: &Model,
    bags: &CorpusBags,
    dev: &[TaskInstance],
    k: usize,
    beam_width: usize,
    max_len: usize,
) -> Result<EvalReport> {
    if dev.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let doc_embeddings = model.generator.doc_embeddings(&bags.generator);
    let rows = dev
        .par_iter()
        .map(|inst| {
            let list = model.retriever.retrieve(&inst.x, &bags.retriever, k)?;
            let context = model.generator.context_for_list(&inst.x, &doc_embeddings, &list);
            let beam = generate_beam(&model.generator, &context, beam_width, max_len)?;
            let output = beam
                .into_iter()
                .next()
                .map(|(seq, _)| seq)
                .ok_or_else(|| Error::invalid("beam search returned nothing"))?;
            let u = utility(inst.utility_kind, &inst.y, &output);
            let rp = r_precision(&list, &inst.provenance)?;
            Ok(EvalRow {
                query: inst.id.clone(),
                retrieved: list.indices().to_vec(),
                output,
                utility: u,
                r_precision: rp,
                kilt_score: gate(rp, u),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(rows))
}

/// Means over rows, summed in row order.
pub fn summarize(rows: Vec<EvalRow>) -> EvalReport {
    let n = rows.len() as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EvalReport {
        mean_utility: mean(|r| r.utility),
        mean_r_precision: mean(|r| r.r_precision),
        mean_kilt_score: mean(|r| r.kilt_score),
        rows,
    }
}
