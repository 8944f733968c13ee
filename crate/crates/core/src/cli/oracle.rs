//! Self-checks of the sampling and gradient machinery against exact
//! oracles: enumeration sums, a sampler histogram and finite differences.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::TaskInstance;
use crate::diffcore::{finite_diff_check, Tensor};
use crate::error::{Error, Result};
use crate::models::{generator_logprob, Model, ModelNodes, ModelShape, TokenSeq};
use crate::objective::{batch_objective, BagNodes, ObjectiveConfig, QueryItem, TinyProblem};
use crate::rng::{Domain, StreamKey};
use crate::sampling::{
    doc_probs, enumerate_list_probs, gumbel_topk_sample, list_prob, st_topk, total_variation, GumbelNoise, RankedList,
    Relaxation,
};

pub const ENUMERATION_TOLERANCE: f64 = 1e-12;
pub const SUM_TOLERANCE: f64 = 1e-10;
pub const TV_THRESHOLD: f64 = 0.02;
pub const TV_DRAWS: usize = 200_000;
pub const GRAD_THRESHOLD: f64 = 1e-3;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 10;

/// Deliberate corruption for negative-control runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Drops the renormalization of the list probability after the first pick.
    CorruptListProbDenominator,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            statistic,
            threshold,
            passed: statistic <= threshold,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub fault: Option<Fault>,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<28} {:.3e} <= {:.1e}  ({})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.statistic,
                c.threshold,
                c.detail
            ));
        }
        out.push_str(if self.passed { "all checks passed\n" } else { "oracle check FAILED\n" });
        out
    }
}

fn corrupted_list_prob(probs: &[f64], list: &RankedList) -> Result<f64> {
    Ok(list.indices().iter().map(|&d| probs[d]).product())
}

fn nonuniform_probs(seed: u64, n: usize) -> Vec<f64> {
    let u = StreamKey::root(seed).uniforms(Domain::Instance, n);
    doc_probs(&u.iter().map(|v| 3.0 * v - 1.5).collect::<Vec<_>>())
}

/// Largest gap between the closed-form list probability and the enumeration
/// tree, and largest deviation of the total from 1, over every `k <= n <= 6`.
pub fn enumeration_checks(fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let mut gap = 0.0_f64;
    let mut sum_gap = 0.0_f64;
    let mut worst = String::new();
    for n in 1..=6 {
        let probs = nonuniform_probs(n as u64, n);
        for k in 1..=n {
            let exact = enumerate_list_probs(&probs, k)?;
            let mut total = 0.0;
            for (list, &p) in &exact {
                let q = match fault {
                    Some(Fault::CorruptListProbDenominator) => corrupted_list_prob(&probs, list)?,
                    None => list_prob(&probs, list)?,
                };
                total += q;
                if (q - p).abs() > gap {
                    gap = (q - p).abs();
                    worst = format!("n={n} k={k} list={:?}", list.indices());
                }
            }
            sum_gap = sum_gap.max((total - 1.0).abs());
        }
    }
    Ok(vec![
        CheckResult::at_most(
            "list_prob_vs_enumeration",
            gap,
            ENUMERATION_TOLERANCE,
            if worst.is_empty() { "all lists agree".into() } else { format!("worst {worst}") },
        ),
        CheckResult::at_most(
            "list_probs_sum_to_one",
            sum_gap,
            SUM_TOLERANCE,
            "max |sum - 1| over n <= 6, k <= n".into(),
        ),
    ])
}

/// Total-variation distance between `draws` Gumbel-top-2 samples over six
/// documents and the exact list distribution.
pub fn sampler_check(draws: usize) -> Result<CheckResult> {
    let scores = [1.2, 0.4, -0.3, 0.0, 0.9, -1.1];
    let exact = enumerate_list_probs(&doc_probs(&scores), 2)?;
    let mut counts: BTreeMap<RankedList, u64> = BTreeMap::new();
    for s in 0..draws as u64 {
        *counts.entry(gumbel_topk_sample(&scores, 2, 1.0, s)?).or_default() += 1;
    }
    let tv = total_variation(&exact, &counts);
    Ok(CheckResult::at_most(
        "gumbel_topk_tv",
        tv,
        TV_THRESHOLD,
        format!("{draws} draws, |C|=6, k=2"),
    ))
}

fn soft_config() -> ObjectiveConfig {
    ObjectiveConfig {
        num_list_samples: 2,
        k: 2,
        relaxation: Relaxation::Soft,
        ..ObjectiveConfig::default()
    }
}

fn tiny_instance(p: &TinyProblem) -> TaskInstance {
    TaskInstance {
        id: "tiny".into(),
        x: p.x.clone(),
        y: p.y.clone(),
        provenance: [0].into_iter().collect(),
        utility_kind: p.kind,
    }
}

/// Worst relative error of taped gradients against central differences for
/// the soft selection path, the generator likelihood and the full objective,
/// over `seeds` random instances each (noise frozen per seed).
pub fn gradient_checks(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut st = (0.0_f64, 0);
    let mut gen = (0.0_f64, 0);
    let mut obj = (0.0_f64, 0);
    for seed in 0..seeds {
        let scores = Tensor::vector(StreamKey::root(seed).uniforms(Domain::Instance, 6));
        let weights = Tensor::vector(StreamKey::root(seed + 100).uniforms(Domain::Instance, 12));
        let noise = GumbelNoise::from_seed(seed, 6, 1.0)?;
        let c = finite_diff_check(
            |t, x| {
                let (sel, _) = st_topk(t, x, 2, &noise, 0.7, Relaxation::Soft)?;
                let w = t.constant(weights.reshaped(&[2, 6])?);
                let prod = t.mul(sel, w)?;
                t.sum(prod)
            },
            &scores,
            GRAD_STEP,
        )?;
        st = worst(st, c.max_rel_error, seed);

        let model = Model::init(
            ModelShape {
                vocab: 6,
                dim: 3,
                embedding_scale: 1.0,
            },
            seed,
        )?;
        let x = TokenSeq::from_content(&[1, 2], 6)?;
        let y = TokenSeq::from_content(&[3, 4], 6)?;
        let selected = Tensor::matrix(2, 3, StreamKey::root(seed + 200).uniforms(Domain::Instance, 6))?;
        for which in 1..4 {
            let c = finite_diff_check(
                |t, leaf| {
                    let mut nodes = ModelNodes::register(t, &model, true);
                    match which {
                        1 => nodes.generator_embeddings = leaf,
                        2 => nodes.hidden_weights = leaf,
                        _ => nodes.output_weights = leaf,
                    }
                    let sel = t.constant(selected.clone());
                    generator_logprob(t, &x, sel, &y, &nodes)
                },
                &model.tensors()[which].clone(),
                GRAD_STEP,
            )?;
            gen = worst(gen, c.max_rel_error, seed);
        }

        let p = TinyProblem::random(seed, 5, 5, 3, 3)?;
        let inst = tiny_instance(&p);
        let item = QueryItem {
            index: 0,
            instance: &inst,
            pool: &p.pool,
        };
        let cfg = soft_config();
        for which in 0..4 {
            let c = finite_diff_check(
                |t, leaf| {
                    let mut nodes = ModelNodes::register(t, &p.model, true);
                    match which {
                        0 => nodes.retriever_embeddings = leaf,
                        1 => nodes.generator_embeddings = leaf,
                        2 => nodes.hidden_weights = leaf,
                        _ => nodes.output_weights = leaf,
                    }
                    let b = BagNodes::register(t, &p.bags);
                    batch_objective(t, &nodes, b, &[item], None, &cfg, seed, 0)
                },
                &p.model.tensors()[which].clone(),
                GRAD_STEP,
            )?;
            obj = worst(obj, c.max_rel_error, seed);
        }
    }
    let detail = |w: (f64, u64)| format!("{seeds} seeds, worst seed {}", w.1);
    Ok(vec![
        CheckResult::at_most("grad_st_topk_soft", st.0, GRAD_THRESHOLD, detail(st)),
        CheckResult::at_most("grad_generator_logprob", gen.0, GRAD_THRESHOLD, detail(gen)),
        CheckResult::at_most("grad_expected_utility", obj.0, GRAD_THRESHOLD, detail(obj)),
    ])
}

fn worst(acc: (f64, u64), err: f64, seed: u64) -> (f64, u64) {
    // NaN never compares greater, so route it explicitly
    if err.is_nan() || err > acc.0 {
        (if err.is_nan() { f64::INFINITY } else { err }, seed)
    } else {
        acc
    }
}

/// Every check, in a fixed order.
pub fn run_oracle_checks(fault: Option<Fault>) -> Result<OracleReport> {
    let mut checks = enumeration_checks(fault)?;
    checks.push(sampler_check(TV_DRAWS)?);
    checks.extend(gradient_checks(GRAD_SEEDS)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(OracleReport { fault, passed, checks })
}

/// Rejects an empty or zero-containing sample-count list.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    let counts = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::config("counts", format!("`{}`: {e}", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if counts.is_empty() {
        return Err(Error::config("counts", "needs at least one sample count"));
    }
    if counts.contains(&0) {
        return Err(Error::config("counts", "sample counts must be positive"));
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_checks_pass_and_fault_trips_them() {
        assert!(enumeration_checks(None).unwrap().iter().all(|c| c.passed));
        let bad = enumeration_checks(Some(Fault::CorruptListProbDenominator)).unwrap();
        assert!(bad.iter().all(|c| !c.passed), "{bad:?}");
    }

    #[test]
    fn small_gradient_sweep_passes() {
        assert!(gradient_checks(2).unwrap().iter().all(|c| c.passed));
    }

    #[test]
    fn counts_parsing() {
        assert_eq!(parse_counts("1, 2,4").unwrap(), vec![1, 2, 4]);
        assert!(parse_counts("").unwrap_err().to_string().contains("counts"));
        assert!(parse_counts("1,0").is_err());
        assert!(parse_counts("a").is_err());
    }
}
