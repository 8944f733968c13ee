//! Expected utility of generated outputs under sampled document lists:
//! the differentiable Monte Carlo objective, candidate pools, and exact and
//! forward-only estimators used as oracles.

mod estimate;
mod pool;
mod tiny;

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::models::bag_matrix;
use crate::sampling::Relaxation;

pub use estimate::{
    batch_objective, exact_expected_utility, expected_utility, list_utility, mc_expected_utility, noise_key,
    output_prob, query_objective, BagNodes, ObjectiveOutput, QueryItem, MAX_EXACT_DOCS,
};
pub use pool::{load_pools, refresh_pool, refresh_pools, save_pools, CandidatePool, POOLS_FORMAT};
pub use tiny::TinyProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Document lists sampled per query and step.
    pub num_list_samples: usize,
    /// Steps between pool refreshes.
    pub pool_refresh_interval: u64,
    pub pool_beam: usize,
    /// Upper bound on candidates per pool.
    pub pool_size: usize,
    /// Documents per list.
    pub k: usize,
    /// Gumbel noise scale.
    pub beta: f64,
    /// Softmax temperature of the backward relaxation.
    pub temperature: f64,
    /// Longest generated output, end-of-sequence included.
    pub max_len: usize,
    pub relaxation: Relaxation,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            num_list_samples: 8,
            pool_refresh_interval: 200,
            pool_beam: 16,
            pool_size: 4,
            k: 2,
            beta: 1.0,
            temperature: 1.0,
            max_len: 8,
            relaxation: Relaxation::StraightThrough,
        }
    }
}

impl ObjectiveConfig {
    /// The constants of the original large-scale setup.
    pub fn full_scale() -> Self {
        ObjectiveConfig {
            pool_refresh_interval: 10_000,
            pool_beam: 100,
            pool_size: 10,
            k: 8,
            max_len: 64,
            ..ObjectiveConfig::default()
        }
    }

    pub fn validate(&self, num_docs: usize) -> Result<()> {
        let counts = [
            ("num_list_samples", self.num_list_samples),
            ("pool_refresh_interval", self.pool_refresh_interval as usize),
            ("pool_beam", self.pool_beam),
            ("pool_size", self.pool_size),
            ("k", self.k),
            ("max_len", self.max_len),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [("beta", self.beta), ("temperature", self.temperature)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be a positive real, got {v}")));
            }
        }
        if self.k > num_docs {
            return Err(Error::config("k", format!("{} exceeds corpus size {num_docs}", self.k)));
        }
        Ok(())
    }
}

/// Mean-pooling matrices of every document, for the retriever table
/// (`[|C|, vocab]`) and the generator table (`[|C|, vocab + 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusBags {
    pub retriever: Tensor,
    pub generator: Tensor,
}

impl CorpusBags {
    pub fn from_docs(docs: &[Vec<usize>], vocab: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("corpus has no documents"));
        }
        Ok(CorpusBags {
            retriever: bag_matrix(docs, vocab)?,
            generator: bag_matrix(docs, vocab + 1)?,
        })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let v = corpus.vocab.len();
        Ok(CorpusBags {
            retriever: corpus.doc_bags(v)?,
            generator: corpus.doc_bags(v + 1)?,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.retriever.shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::data::TaskInstance;
    use crate::diffcore::{finite_diff_check, Tape};
    use crate::metrics::{utility, UtilityKind};
    use crate::models::{
        generator_doc_embeddings, generator_logprob, select_documents, Model, ModelNodes, ModelShape, TokenSeq, EOS,
        PARAM_NAMES,
    };
    use crate::sampling::RankedList;

    fn instance(p: &TinyProblem) -> TaskInstance {
        TaskInstance {
            id: "tiny".into(),
            x: p.x.clone(),
            y: p.y.clone(),
            provenance: BTreeSet::from([0]),
            utility_kind: p.kind,
        }
    }

    fn soft(k: usize, samples: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            k,
            num_list_samples: samples,
            relaxation: Relaxation::Soft,
            ..ObjectiveConfig::default()
        }
    }

    #[test]
    fn degenerate_vocab_output_prob_is_one() {
        let model = Model::init(
            ModelShape {
                vocab: 1,
                dim: 2,
                embedding_scale: 1.0,
            },
            0,
        )
        .unwrap();
        let y = TokenSeq::new(vec![EOS], 1).unwrap();
        let bags = CorpusBags::from_docs(&[vec![0], vec![0]], 1).unwrap();
        let pool = CandidatePool::new("q", 0, vec![y.clone()], &y);
        let mut tape = Tape::new();
        let nodes = ModelNodes::register(&mut tape, &model, true);
        let b = BagNodes::register(&mut tape, &bags);
        let sel = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let demb = generator_doc_embeddings(&mut tape, b.generator, &nodes).unwrap();
        let chosen = select_documents(&mut tape, sel, demb).unwrap();
        let probs = output_prob(&mut tape, &y, chosen, &[&y], &nodes).unwrap();
        assert_eq!(tape.value(probs).data(), &[1.0]);

        // U = 1 on a pool covering every output: the objective is exactly 1
        let inst = TaskInstance {
            id: "q".into(),
            x: y.clone(),
            y: y.clone(),
            provenance: BTreeSet::from([0]),
            utility_kind: UtilityKind::ExactMatch,
        };
        let item = QueryItem {
            index: 0,
            instance: &inst,
            pool: &pool,
        };
        let out = expected_utility(&model, &bags, &[item], &soft(1, 3), 0, 0, true).unwrap();
        assert!((out.value - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn output_prob_matches_generator_logprob() {
        let p = TinyProblem::random(3, 4, 5, 3, 4).unwrap();
        let mut tape = Tape::new();
        let nodes = ModelNodes::register(&mut tape, &p.model, true);
        let b = BagNodes::register(&mut tape, &p.bags);
        let sel = tape.constant(Tensor::matrix(2, 4, vec![0., 1., 0., 0., 0., 0., 0., 1.]).unwrap());
        let demb = generator_doc_embeddings(&mut tape, b.generator, &nodes).unwrap();
        let chosen = select_documents(&mut tape, sel, demb).unwrap();
        let cands: Vec<&TokenSeq> = p.pool.candidates.iter().collect();
        let probs = output_prob(&mut tape, &p.x, chosen, &cands, &nodes).unwrap();
        let probs = tape.value(probs).data().to_vec();
        for (c, pr) in cands.iter().zip(&probs) {
            let lp = generator_logprob(&mut tape, &p.x, chosen, c, &nodes).unwrap();
            assert!((pr - tape.value(lp).item().exp()).abs() <= 1e-12);
            assert!(*pr > 0.0 && *pr <= 1.0);
        }
    }

    #[test]
    fn single_list_reduces_to_pool_sum() {
        let p = TinyProblem::random(5, 1, 5, 3, 4).unwrap();
        let exact = exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 1).unwrap();
        let demb = p.model.generator.doc_embeddings(&p.bags.generator);
        let ctx = p.model.generator.context(&p.x, &[demb[0].as_slice()]);
        let direct: f64 = p
            .pool
            .candidates
            .iter()
            .map(|c| utility(p.kind, &p.y, c) * p.model.generator.sequence_logprob(&ctx, c).exp())
            .sum();
        assert!((exact - direct).abs() <= 1e-12);
    }

    #[test]
    fn identical_documents_equal_single_document_value() {
        let p = TinyProblem::random(6, 1, 5, 3, 4).unwrap();
        let one = exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 1).unwrap();
        let docs = vec![vec![2, 3], vec![2, 3]];
        let twin = CorpusBags::from_docs(&docs, 5).unwrap();
        let single = CorpusBags::from_docs(&docs[..1], 5).unwrap();
        let a = exact_expected_utility(&p.model, &twin, &p.x, &p.pool, p.kind, 1).unwrap();
        let b = exact_expected_utility(&p.model, &single, &p.x, &p.pool, p.kind, 1).unwrap();
        assert!((a - b).abs() <= 1e-12);
        assert!(one.is_finite());
    }

    #[test]
    fn exact_rejects_large_corpus() {
        let p = TinyProblem::random(1, 7, 5, 3, 2).unwrap();
        assert!(matches!(
            exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 2),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn monte_carlo_matches_exact_on_two_documents() {
        let p = TinyProblem::random(11, 2, 2, 3, 3).unwrap();
        let exact = exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 1).unwrap();
        let mc = mc_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 1, 1.0, 100_000, 9, 0, 0).unwrap();
        assert!(((mc - exact) / exact).abs() <= 0.01, "mc {mc} exact {exact}");
    }

    #[test]
    fn taped_forward_matches_forward_only_estimator() {
        let p = TinyProblem::random(2, 5, 6, 3, 4).unwrap();
        let inst = instance(&p);
        let item = QueryItem {
            index: 3,
            instance: &inst,
            pool: &p.pool,
        };
        let cfg = ObjectiveConfig {
            num_list_samples: 7,
            ..soft(2, 7)
        };
        let cfg = ObjectiveConfig {
            relaxation: Relaxation::StraightThrough,
            ..cfg
        };
        let taped = expected_utility(&p.model, &p.bags, &[item], &cfg, 4, 0, true).unwrap();
        let plain = mc_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 2, 1.0, 7, 4, 0, 3).unwrap();
        assert!((taped.value - plain).abs() <= 1e-12);
    }

    #[test]
    fn objective_gradients_match_finite_differences_of_soft_path() {
        for seed in 0..3 {
            let p = TinyProblem::random(seed, 5, 5, 3, 3).unwrap();
            let inst = instance(&p);
            let cfg = soft(2, 2);
            let item = QueryItem {
                index: 0,
                instance: &inst,
                pool: &p.pool,
            };
            for which in 0..PARAM_NAMES.len() {
                let base = p.model.tensors()[which].clone();
                let check = finite_diff_check(
                    |t, leaf| {
                        let mut nodes = ModelNodes::register(t, &p.model, true);
                        match which {
                            0 => nodes.retriever_embeddings = leaf,
                            1 => nodes.generator_embeddings = leaf,
                            2 => nodes.hidden_weights = leaf,
                            _ => nodes.output_weights = leaf,
                        }
                        let b = BagNodes::register(t, &p.bags);
                        batch_objective(t, &nodes, b, &[item], None, &cfg, 7, 0)
                    },
                    &base,
                    1e-5,
                )
                .unwrap();
                assert!(check.max_rel_error <= 1e-3, "seed {seed} {}: {check:?}", PARAM_NAMES[which]);
            }
        }
    }

    #[test]
    fn parallel_reduction_matches_single_tape() {
        let probs: Vec<TinyProblem> = (0..3).map(|s| TinyProblem::random(s, 5, 5, 3, 3).unwrap()).collect();
        // share one model and corpus across queries
        let base = &probs[0];
        let insts: Vec<TaskInstance> = probs.iter().map(instance).collect();
        let pools: Vec<CandidatePool> = probs
            .iter()
            .map(|p| CandidatePool::new("q", 0, p.pool.candidates.clone(), &p.y))
            .collect();
        let items: Vec<QueryItem> = insts
            .iter()
            .zip(&pools)
            .enumerate()
            .map(|(i, (inst, pool))| QueryItem {
                index: i as u64,
                instance: inst,
                pool,
            })
            .collect();
        let cfg = ObjectiveConfig::default();
        let par = expected_utility(&base.model, &base.bags, &items, &cfg, 1, 5, true).unwrap();

        let mut tape = Tape::new();
        let nodes = ModelNodes::register(&mut tape, &base.model, true);
        let b = BagNodes::register(&mut tape, &base.bags);
        let root = batch_objective(&mut tape, &nodes, b, &items, None, &cfg, 1, 5).unwrap();
        assert!((tape.value(root).item() - par.value).abs() <= 1e-12);
        let g = tape.backward(root).unwrap();
        for (id, pg) in nodes.ids().iter().zip(&par.grads) {
            let sg = g.get(*id).unwrap();
            for (a, c) in sg.data().iter().zip(pg.data()) {
                assert!((a - c).abs() <= 1e-12);
            }
        }
        assert!((0.0..=1.0 + 1e-9).contains(&par.value));
    }

    #[test]
    fn frozen_retriever_gets_no_gradient() {
        let p = TinyProblem::random(4, 5, 5, 3, 3).unwrap();
        let inst = instance(&p);
        let item = QueryItem {
            index: 0,
            instance: &inst,
            pool: &p.pool,
        };
        let out = expected_utility(&p.model, &p.bags, &[item], &ObjectiveConfig::default(), 0, 0, false).unwrap();
        assert!(out.grads[0].data().iter().all(|&v| v == 0.0));
        assert!(out.grads[3].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_pool_rejected() {
        let p = TinyProblem::random(4, 5, 5, 3, 3).unwrap();
        let inst = instance(&p);
        let item = QueryItem {
            index: 0,
            instance: &inst,
            pool: &p.pool,
        };
        let cfg = ObjectiveConfig::default();
        assert!(expected_utility(&p.model, &p.bags, &[item], &cfg, 0, 199, true).is_ok());
        assert!(matches!(
            expected_utility(&p.model, &p.bags, &[item], &cfg, 0, 200, true),
            Err(Error::StalePool { step: 200, .. })
        ));
    }

    #[test]
    fn raising_reference_probability_raises_objective() {
        // Two candidates, only the reference has utility: the objective is
        // p(y | x, d), so a step along the gradient of log p(y) raises it.
        let p = TinyProblem::random(8, 1, 5, 3, 2).unwrap();
        let other = p.pool.candidates[1].clone();
        let pool = CandidatePool::new("q", 0, vec![p.y.clone(), other], &p.y);
        let kind = UtilityKind::ExactMatch;
        let before = exact_expected_utility(&p.model, &p.bags, &p.x, &pool, kind, 1).unwrap();

        let mut tape = Tape::new();
        let nodes = ModelNodes::register(&mut tape, &p.model, true);
        let b = BagNodes::register(&mut tape, &p.bags);
        let sel = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let demb = generator_doc_embeddings(&mut tape, b.generator, &nodes).unwrap();
        let chosen = select_documents(&mut tape, sel, demb).unwrap();
        let lp = generator_logprob(&mut tape, &p.x, chosen, &p.y, &nodes).unwrap();
        let g = tape.backward(lp).unwrap();
        let mut model = p.model.clone();
        let step = g.get(nodes.output_weights).unwrap();
        for (w, d) in model.generator.output_weights.data_mut().iter_mut().zip(step.data()) {
            *w += 0.1 * d;
        }
        let after = exact_expected_utility(&model, &p.bags, &p.x, &pool, kind, 1).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn full_scale_and_validation() {
        let f = ObjectiveConfig::full_scale();
        assert_eq!((f.pool_refresh_interval, f.pool_beam, f.pool_size), (10_000, 100, 10));
        assert!(ObjectiveConfig::default().validate(64).is_ok());
        let bad = ObjectiveConfig {
            k: 9,
            ..ObjectiveConfig::default()
        };
        assert!(bad.validate(4).unwrap_err().to_string().contains("`k`"));
        let bad = ObjectiveConfig {
            temperature: 0.0,
            ..ObjectiveConfig::default()
        };
        assert!(bad.validate(4).unwrap_err().to_string().contains("temperature"));
    }

    fn tiny_task(seed: u64) -> (TinyProblem, TaskInstance) {
        let p = TinyProblem::random(seed, 5, 6, 3, 3).unwrap();
        let inst = instance(&p);
        (p, inst)
    }

    #[test]
    fn refresh_guarantees_reference_and_exact_utilities() {
        for seed in 0..10 {
            let (p, inst) = tiny_task(seed);
            for m in [1, 3, 6] {
                let cfg = ObjectiveConfig {
                    pool_size: m,
                    pool_beam: 6,
                    max_len: 4,
                    ..ObjectiveConfig::default()
                };
                let pool = refresh_pool(&p.model, &p.bags, &inst, 0, &cfg, seed, 0).unwrap();
                pool.validate(&inst.y, m).unwrap();
                if m == 1 {
                    assert_eq!(pool.candidates, vec![inst.y.clone()]);
                }
                let distinct: BTreeSet<_> = pool.candidates.iter().collect();
                assert_eq!(distinct.len(), pool.len());
                assert_eq!(pool, refresh_pool(&p.model, &p.bags, &inst, 0, &cfg, seed, 0).unwrap());
            }
        }
    }

    #[test]
    fn pool_snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (p, inst) = tiny_task(2);
        let cfg = ObjectiveConfig {
            pool_beam: 6,
            max_len: 4,
            ..ObjectiveConfig::default()
        };
        let insts = [(0u64, &inst), (1u64, &inst)];
        let pools = refresh_pools(&p.model, &p.bags, &insts, &cfg, 3, 200).unwrap();
        let path = dir.path().join("pools.jsonl");
        save_pools(&path, &pools).unwrap();
        let back = load_pools(&path).unwrap();
        assert_eq!(back, pools);
        for (a, b) in back.iter().zip(&pools) {
            for kind in UtilityKind::ALL {
                let same = a.utilities(kind).iter().zip(b.utilities(kind)).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same);
            }
        }
    }

    #[test]
    fn exact_sums_over_all_lists() {
        // k = |C|: every permutation is a list; the value still lies in [0, 1]
        let p = TinyProblem::random(9, 3, 5, 3, 4).unwrap();
        let v = exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, 3).unwrap();
        assert!((0.0..=1.0 + 1e-9).contains(&v));
        let demb = p.model.generator.doc_embeddings(&p.bags.generator);
        // every permutation gives the same mean-pooled context
        let a = list_utility(&p.model, &demb, &p.x, &p.pool, p.kind, &RankedList::new(vec![0, 1, 2], 3).unwrap());
        assert!((v - a).abs() <= 1e-12);
    }
}
