use rand::seq::index::sample;
use rayon::prelude::*;

use super::adam::{optimizer_step, AdamState};
use crate::data::ReadingExample;
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{bag_matrix, generator_logprob, Model, ModelNodes, RETRIEVER_PARAM};
use crate::rng::{Domain, StreamKey};

/// Examples drawn for warm-up step `step` (`lane` 0) or for the rehearsal
/// term of training step `step` (`lane` 1): a pure function of its inputs.
pub fn warmup_batch(seed: u64, step: u64, lane: u64, len: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = StreamKey::root(seed).at(step, lane, 0).rng(Domain::Warmup);
    sample(&mut rng, len, batch_size.min(len)).into_vec()
}

/// Mean teacher-forced negative log-likelihood of `batch` and its gradient
/// for every parameter tensor. The retriever gradient is zero.
pub fn reading_nll(model: &Model, examples: &[ReadingExample], batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    let vocab = model.vocab();
    let results = batch
        .par_iter()
        .map(|&i| {
            let e = &examples[i];
            let mut tape = Tape::new();
            let nodes = ModelNodes::register(&mut tape, model, false);
            let bags = tape.constant(bag_matrix(&e.context, vocab + 1)?);
            let selected = tape.matmul(bags, nodes.generator_embeddings)?;
            let logp = generator_logprob(&mut tape, &e.x, selected, &e.y, &nodes)?;
            let value = tape.value(logp).item();
            let mut grads = tape.backward(logp)?;
            let g: Vec<Tensor> = nodes
                .ids()
                .iter()
                .zip(model.tensors())
                .map(|(&id, like)| grads.take(id).unwrap_or_else(|| Tensor::zeros(like.shape())))
                .collect();
            Ok((value, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mut grads: Vec<Tensor> = model.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut nll = 0.0;
    for (value, g) in &results {
        nll -= value;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, v) in acc.data_mut().iter_mut().zip(part.data()) {
                *a -= v / n;
            }
        }
    }
    grads[RETRIEVER_PARAM] = Tensor::zeros(grads[RETRIEVER_PARAM].shape());
    Ok((nll / n, grads))
}

/// Teacher-forced likelihood training of the generator on reading
/// examples, with its own Adam state. The retriever is untouched. Returns
/// the mean negative log-likelihood of every step.
pub fn warm_up_generator(
    model: &mut Model,
    examples: &[ReadingExample],
    steps: u64,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    if examples.is_empty() {
        return Err(Error::config("warmup_steps", "is positive but the dataset has no reading examples"));
    }
    let vocab = model.vocab();
    for e in examples {
        e.validate(vocab)?;
    }
    let mut state = AdamState::new(&model.tensors());
    let mut losses = Vec::with_capacity(steps as usize);
    for step in 0..steps {
        let batch = warmup_batch(seed, step, 0, examples.len(), batch_size);
        let (nll, grads) = reading_nll(model, examples, &batch)?;
        if !nll.is_finite() {
            return Err(Error::invalid(format!("non-finite warm-up loss at step {step}")));
        }
        optimizer_step(&mut model.tensors_mut(), &grads, &mut state, lr)?;
        losses.push(nll);
    }
    Ok(losses)
}
