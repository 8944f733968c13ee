use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};

/// Dense dot-product retriever: one embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retriever {
    /// `[vocab, dim]`
    pub token_embeddings: Tensor,
}

/// Mean-pooled context plus one tanh layer, decoding one token at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// `[vocab + 1, dim]`; the extra last row embeds the start symbol.
    pub token_embeddings: Tensor,
    /// `[dim, 2 * dim]`
    pub hidden_weights: Tensor,
    /// `[vocab, dim]`
    pub output_weights: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub retriever: Retriever,
    pub generator: Generator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab: usize,
    pub dim: usize,
    /// Standard deviation of the initial embedding entries.
    pub embedding_scale: f64,
}

/// Parameter tensor names, in the order used by [`Model::tensors`].
pub const PARAM_NAMES: [&str; 4] = [
    "retriever.token_embeddings",
    "generator.token_embeddings",
    "generator.hidden_weights",
    "generator.output_weights",
];

/// Index of the only retriever tensor in [`PARAM_NAMES`].
pub const RETRIEVER_PARAM: usize = 0;

impl Generator {
    pub fn vocab(&self) -> usize {
        self.output_weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.output_weights.shape()[1]
    }

    /// Row of the embedding table reserved for the start symbol.
    pub fn start_id(&self) -> usize {
        self.vocab()
    }
}

impl Retriever {
    pub fn vocab(&self) -> usize {
        self.token_embeddings.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.token_embeddings.shape()[1]
    }
}

fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

impl Model {
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let ModelShape {
            vocab,
            dim,
            embedding_scale,
        } = shape;
        if vocab < 1 {
            return Err(Error::invalid("vocabulary must contain at least the end-of-sequence token"));
        }
        if dim < 2 {
            return Err(Error::invalid(format!("embedding width must be at least 2, got {dim}")));
        }
        let mut rng = StreamKey::root(seed).rng(Domain::Init);
        let retriever = Retriever {
            token_embeddings: gaussian(&mut rng, &[vocab, dim], embedding_scale),
        };
        let generator = Generator {
            token_embeddings: gaussian(&mut rng, &[vocab + 1, dim], embedding_scale),
            hidden_weights: gaussian(&mut rng, &[dim, 2 * dim], (1.0 / (2 * dim) as f64).sqrt()),
            output_weights: gaussian(&mut rng, &[vocab, dim], (1.0 / dim as f64).sqrt()),
        };
        let model = Model { retriever, generator };
        model.validate()?;
        Ok(model)
    }

    pub fn vocab(&self) -> usize {
        self.generator.vocab()
    }

    pub fn validate(&self) -> Result<()> {
        let (v, d) = (self.generator.vocab(), self.generator.dim());
        let expect: [(&str, &Tensor, [usize; 2]); 4] = [
            (PARAM_NAMES[0], &self.retriever.token_embeddings, [v, self.retriever.dim()]),
            (PARAM_NAMES[1], &self.generator.token_embeddings, [v + 1, d]),
            (PARAM_NAMES[2], &self.generator.hidden_weights, [d, 2 * d]),
            (PARAM_NAMES[3], &self.generator.output_weights, [v, d]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "model",
                    shapes: format!("{name} has shape {:?}, expected {:?}", t.shape(), shape),
                });
            }
            if !t.is_finite() {
                return Err(Error::invalid(format!("{name} contains non-finite values")));
            }
        }
        if self.retriever.dim() < 2 {
            return Err(Error::invalid("retriever embedding width must be at least 2"));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.retriever.token_embeddings,
            &self.generator.token_embeddings,
            &self.generator.hidden_weights,
            &self.generator.output_weights,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.retriever.token_embeddings,
            &mut self.generator.token_embeddings,
            &mut self.generator.hidden_weights,
            &mut self.generator.output_weights,
        ]
    }
}
