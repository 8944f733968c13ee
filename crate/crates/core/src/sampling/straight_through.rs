use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::gumbel::{perturb, top_k_indices, GumbelNoise};
use super::plackett_luce::RankedList;
use crate::diffcore::{softmax_slice, CustomOp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Logit given to already-selected documents in the soft rows.
pub const MASK_LOGIT: f64 = -1e30;

/// What the selection node emits in the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// One-hot rows forward, soft-row Jacobian backward.
    #[default]
    StraightThrough,
    /// Soft rows in both passes; the smooth surrogate the straight-through
    /// gradient is taken from.
    Soft,
}

/// Hard and soft encodings of one top-k draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionMatrix {
    pub list: RankedList,
    /// `[k, |C|]`, one-hot.
    pub rows: Tensor,
    /// `[k, |C|]`, row `i` is softmax((s + g) / tau) over documents not
    /// picked by rows `< i`.
    pub soft_rows: Tensor,
}

pub fn selection_matrix(scores: &[f64], noise: &GumbelNoise, k: usize, temperature: f64) -> Result<SelectionMatrix> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let perturbed = perturb(scores, noise)?;
    let list = top_k_indices(&perturbed, k)?;
    let n = scores.len();
    let mut rows = vec![0.0; k * n];
    let mut soft = Vec::with_capacity(k * n);
    let mut logits: Vec<f64> = perturbed.iter().map(|v| v / temperature).collect();
    for (i, &d) in list.indices().iter().enumerate() {
        rows[i * n + d] = 1.0;
        soft.extend(softmax_slice(&logits));
        logits[d] = MASK_LOGIT;
    }
    Ok(SelectionMatrix {
        list,
        rows: Tensor::matrix(k, n, rows)?,
        soft_rows: Tensor::matrix(k, n, soft)?,
    })
}

/// Tape op for straight-through Gumbel-top-k over a score vector.
#[derive(Debug)]
struct StTopkSelect {
    k: usize,
    noise: GumbelNoise,
    temperature: f64,
    relaxation: Relaxation,
}

impl CustomOp for StTopkSelect {
    fn name(&self) -> &'static str {
        "st_topk_select"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let scores = single_vector(inputs)?;
        let sel = selection_matrix(scores, &self.noise, self.k, self.temperature)?;
        Ok(match self.relaxation {
            Relaxation::StraightThrough => sel.rows,
            Relaxation::Soft => sel.soft_rows,
        })
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let scores = inputs[0].data();
        let sel = selection_matrix(scores, &self.noise, self.k, self.temperature)
            .expect("forward already validated these inputs");
        let n = scores.len();
        let mut gs = vec![0.0; n];
        for i in 0..self.k {
            let p = sel.soft_rows.row(i);
            let g = &grad.data()[i * n..(i + 1) * n];
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..n {
                gs[j] += p[j] * (g[j] - dot) / self.temperature;
            }
        }
        vec![Tensor::vector(gs)]
    }
}

fn single_vector<'a>(inputs: &[&'a Tensor]) -> Result<&'a [f64]> {
    match inputs {
        [t] if t.rank() == 1 => Ok(t.data()),
        _ => Err(Error::ShapeMismatch {
            op: "st_topk_select",
            shapes: format!("{:?}", inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()),
        }),
    }
}

/// Records a top-k selection of `scores` on the tape.
///
/// The forward value is `[k, |C|]`; rows pick the documents with the largest
/// `score + noise`, in descending order. The gradient always follows the
/// masked softmax rows at `temperature`.
pub fn st_topk(
    tape: &mut Tape,
    scores: NodeId,
    k: usize,
    noise: &GumbelNoise,
    temperature: f64,
    relaxation: Relaxation,
) -> Result<(NodeId, RankedList)> {
    let values = tape.value(scores).data().to_vec();
    if k > values.len() {
        return Err(Error::invalid(format!("k = {k} exceeds corpus size {}", values.len())));
    }
    let list = selection_matrix(&values, noise, k, temperature)?.list;
    let op = StTopkSelect {
        k,
        noise: noise.clone(),
        temperature,
        relaxation,
    };
    let node = tape.custom(Arc::new(op), &[scores])?;
    Ok((node, list))
}
