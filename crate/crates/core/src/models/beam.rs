use std::cmp::Ordering;

use super::params::Generator;
use super::tokens::{TokenSeq, EOS};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<usize>,
    logprob: f64,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-capped beam search.
///
/// At each position the best `beam_width - finished` expansions survive;
/// those ending in end-of-sequence leave the beam as finished outputs. The
/// last position (`max_len`) only allows end-of-sequence, so every returned
/// sequence is terminated. Returns at most `beam_width` sequences sorted by
/// descending log-probability.
pub fn generate_beam(
    generator: &Generator,
    context: &[f64],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<(TokenSeq, f64)>> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::invalid(format!(
            "beam search needs beam_width >= 1 and max_len >= 1, got {beam_width} and {max_len}"
        )));
    }
    let vocab = generator.vocab();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for position in 1..=max_len {
        let slots = beam_width - finished.len();
        if live.is_empty() || slots == 0 {
            break;
        }
        let mut candidates = Vec::with_capacity(live.len() * vocab);
        for hyp in &live {
            let prev = hyp.tokens.last().copied().unwrap_or(generator.start_id());
            let logp = generator.step_log_probs(context, prev);
            let allowed = if position == max_len { 0..1 } else { 0..vocab };
            for t in allowed {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                candidates.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + logp[t],
                });
            }
        }
        candidates.sort_by(by_score);
        candidates.truncate(slots);
        live.clear();
        for c in candidates {
            if c.tokens.last() == Some(&EOS) {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }

    finished.sort_by(by_score);
    finished
        .into_iter()
        .map(|h| Ok((TokenSeq::new(h.tokens, vocab)?, h.logprob)))
        .collect()
}
