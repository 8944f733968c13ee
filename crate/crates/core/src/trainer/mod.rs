//! End-to-end training by maximizing expected utility, with evaluation,
//! checkpoints and a per-step metrics log.

mod adam;
mod eval;
mod warmup;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskInstance};
use crate::error::{Error, Result};
use crate::models::{Model, ModelShape, PARAM_NAMES};
use crate::objective::{expected_utility, refresh_pools, CandidatePool, CorpusBags, ObjectiveConfig, QueryItem};
use crate::rng::{Domain, StreamKey, PRNG_CONTRACT};

pub use adam::{optimizer_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use eval::{evaluate, summarize, EvalReport, EvalRow};
pub use warmup::{reading_nll, warm_up_generator, warmup_batch};

pub const CHECKPOINT_FORMAT: &str = "stochrag-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "step,loss,dev_utility,dev_rp,dev_kilt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_interval: u64,
    /// Zero disables periodic checkpoints; the final one is always written.
    pub checkpoint_interval: u64,
    pub seed: u64,
    pub dim: usize,
    pub embedding_scale: f64,
    pub eval_beam: usize,
    /// `false` zeroes the retriever gradient (fixed-retriever ablation).
    pub train_retriever: bool,
    /// Teacher-forced generator steps on the dataset's reading examples,
    /// run once before step 0.
    pub warmup_steps: u64,
    /// Weight of a teacher-forced reading term added to every training step
    /// (zero disables it).
    pub rehearsal_weight: f64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            learning_rate: 0.01,
            eval_interval: 100,
            checkpoint_interval: 500,
            seed: 0,
            dim: 128,
            embedding_scale: 3.0,
            eval_beam: 4,
            train_retriever: true,
            warmup_steps: 300,
            rehearsal_weight: 1.0,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_docs: usize) -> Result<()> {
        for (field, v) in [
            ("batch_size", self.batch_size as u64),
            ("eval_interval", self.eval_interval),
            ("dim", self.dim as u64),
            ("eval_beam", self.eval_beam as u64),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be a finite non-negative real"));
        }
        if !(self.embedding_scale.is_finite() && self.embedding_scale > 0.0) {
            return Err(Error::config("embedding_scale", "must be a positive real"));
        }
        if !(self.rehearsal_weight.is_finite() && self.rehearsal_weight >= 0.0) {
            return Err(Error::config("rehearsal_weight", "must be a finite non-negative real"));
        }
        self.objective.validate(num_docs)
    }
}

/// Where the keyed random streams stand: every draw is a function of the
/// root seed and the step, so the next step is the whole cursor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngCursor {
    pub contract: String,
    pub root: u64,
    pub next_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Completed optimizer steps.
    pub step: u64,
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamState,
    pub rng: RngCursor,
    /// Pools of the training queries, in training-set order.
    pub pools: Vec<CandidatePool>,
}

impl Checkpoint {
    /// Freshly initialized model, after generator warm-up, at step 0.
    pub fn initial(config: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate(dataset.corpus.len())?;
        let mut model = Model::init(
            ModelShape {
                vocab: dataset.corpus.vocab.len(),
                dim: config.dim,
                embedding_scale: config.embedding_scale,
            },
            config.seed,
        )?;
        warm_up_generator(
            &mut model,
            &dataset.reading,
            config.warmup_steps,
            config.batch_size,
            config.learning_rate,
            config.seed,
        )?;
        let optimizer = AdamState::new(&model.tensors());
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step: 0,
            config: config.clone(),
            model,
            optimizer,
            rng: RngCursor {
                contract: PRNG_CONTRACT.into(),
                root: config.seed,
                next_step: 0,
            },
            pools: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint {:?} version {}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        if ckpt.rng.contract != PRNG_CONTRACT {
            return Err(Error::invalid(format!(
                "{}: checkpoint uses random-stream contract {:?}, this build uses {PRNG_CONTRACT:?}",
                path.display(),
                ckpt.rng.contract
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}

/// One line of the metrics log. Dev columns are filled at evaluation steps;
/// `loss` is empty on the final row, which evaluates the trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: Option<f64>,
    pub dev: Option<(f64, f64, f64)>,
}

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let (u, rp, kilt) = match r.dev {
            Some((u, rp, k)) => (Some(u), Some(rp), Some(k)),
            None => (None, None, None),
        };
        let _ = writeln!(out, "{},{},{},{},{}", r.step, cell(r.loss), cell(u), cell(rp), cell(kilt));
    }
    out
}

/// Training-set indices used at `step`: a pure function of the seed and
/// the step.
pub fn batch_indices(seed: u64, step: u64, train_len: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= train_len {
        return (0..train_len).collect();
    }
    let mut rng = StreamKey::root(seed).at(step, 0, 0).rng(Domain::Batch);
    sample(&mut rng, train_len, batch_size).into_vec()
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

fn dev_metrics(model: &Model, bags: &CorpusBags, dev: &[TaskInstance], cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let r = evaluate(model, bags, dev, cfg.objective.k, cfg.eval_beam, cfg.objective.max_len)?;
    Ok((r.mean_utility, r.mean_r_precision, r.mean_kilt_score))
}

pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_from(Checkpoint::initial(config, dataset)?, dataset, out_dir)
}

/// Continues training from `start` up to `start.config.steps`. With an
/// output directory, writes `metrics.csv`, periodic `checkpoint-<step>.json`
/// files and `checkpoint-final.json`.
pub fn train_from(start: Checkpoint, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = start.config.clone();
    cfg.validate(dataset.corpus.len())?;
    if dataset.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.rehearsal_weight > 0.0 && dataset.reading.is_empty() {
        return Err(Error::config("rehearsal_weight", "is positive but the dataset has no reading examples"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let bags = CorpusBags::from_corpus(&dataset.corpus)?;
    let obj = &cfg.objective;
    let interval = obj.pool_refresh_interval;
    let mut ckpt = start;
    let mut log = Vec::new();

    while ckpt.step < cfg.steps {
        let step = ckpt.step;
        if step.is_multiple_of(interval) || ckpt.pools.len() != dataset.train.len() {
            let queries: Vec<(u64, &TaskInstance)> =
                dataset.train.iter().enumerate().map(|(i, t)| (i as u64, t)).collect();
            let refresh_at = step - step % interval;
            ckpt.pools = refresh_pools(&ckpt.model, &bags, &queries, obj, cfg.seed, refresh_at)?;
        }
        let dev = if step.is_multiple_of(cfg.eval_interval) {
            Some(dev_metrics(&ckpt.model, &bags, &dataset.dev, &cfg)?)
        } else {
            None
        };

        let batch: Vec<QueryItem> = batch_indices(cfg.seed, step, dataset.train.len(), cfg.batch_size)
            .into_iter()
            .map(|i| QueryItem {
                index: i as u64,
                instance: &dataset.train[i],
                pool: &ckpt.pools[i],
            })
            .collect();
        let out = expected_utility(&ckpt.model, &bags, &batch, obj, cfg.seed, step, cfg.train_retriever)?;
        if let Some(bad) = out.per_query.iter().position(|v| !v.is_finite()) {
            return Err(Error::NanLoss {
                step,
                query: batch[bad].instance.id.clone(),
            });
        }
        if out.grads.iter().any(|g| !g.is_finite()) {
            let ids: Vec<&str> = batch.iter().map(|b| b.instance.id.as_str()).collect();
            return Err(Error::NanLoss {
                step,
                query: ids.join(","),
            });
        }
        let loss = 1.0 - out.value;
        // d(1 - EU) = -d EU
        let mut grads: Vec<_> = out.grads.iter().map(|g| g.map(|v| -v)).collect();
        if cfg.rehearsal_weight > 0.0 {
            let picks = warmup_batch(cfg.seed, step, 1, dataset.reading.len(), cfg.batch_size);
            let (nll, extra) = reading_nll(&ckpt.model, &dataset.reading, &picks)?;
            if !nll.is_finite() {
                return Err(Error::invalid(format!("non-finite rehearsal loss at step {step}")));
            }
            for (g, e) in grads.iter_mut().zip(&extra) {
                for (a, v) in g.data_mut().iter_mut().zip(e.data()) {
                    *a += cfg.rehearsal_weight * v;
                }
            }
        }
        debug_assert_eq!(grads.len(), PARAM_NAMES.len());
        let mut params = ckpt.model.tensors_mut();
        optimizer_step(&mut params, &grads, &mut ckpt.optimizer, cfg.learning_rate)?;
        ckpt.step += 1;
        ckpt.rng.next_step = ckpt.step;
        log.push(LogRow {
            step,
            loss: Some(loss),
            dev,
        });
        if let Some(dir) = out_dir {
            if cfg.checkpoint_interval > 0 && ckpt.step.is_multiple_of(cfg.checkpoint_interval) {
                ckpt.save(&dir.join(format!("checkpoint-{:06}.json", ckpt.step)))?;
            }
        }
    }

    log.push(LogRow {
        step: ckpt.step,
        loss: None,
        dev: Some(dev_metrics(&ckpt.model, &bags, &dataset.dev, &cfg)?),
    });
    if let Some(dir) = out_dir {
        fs::write(dir.join("metrics.csv"), metrics_csv(&log))?;
        ckpt.save(&dir.join("checkpoint-final.json"))?;
    }
    Ok(TrainOutcome { checkpoint: ckpt, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};

    fn tiny_data() -> Dataset {
        gen_synthetic(&SynthConfig {
            vocab_size: 24,
            num_docs: 14,
            num_queries: 6,
            dev_queries: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny_cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 3,
            eval_interval: 5,
            checkpoint_interval: 4,
            dim: 6,
            objective: ObjectiveConfig {
                pool_refresh_interval: 5,
                pool_beam: 4,
                pool_size: 3,
                max_len: 4,
                num_list_samples: 2,
                ..ObjectiveConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn losses(log: &[LogRow]) -> Vec<u64> {
        log.iter().filter_map(|r| r.loss.map(f64::to_bits)).collect()
    }

    #[test]
    fn zero_steps_returns_initial_checkpoint() {
        let ds = tiny_data();
        let cfg = tiny_cfg(0);
        let out = train(&cfg, &ds, None).unwrap();
        assert_eq!(out.checkpoint, Checkpoint::initial(&cfg, &ds).unwrap());
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_cfg(6)
        };
        let out = train(&cfg, &ds, None).unwrap();
        assert_eq!(out.checkpoint.model, Checkpoint::initial(&cfg, &ds).unwrap().model);
        for r in &out.log {
            if let Some(l) = r.loss {
                assert!((-1e-9..=1.0 + 1e-9).contains(&l));
            }
        }
    }

    #[test]
    fn deterministic_and_resumable() {
        let ds = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(12);
        let a = train(&cfg, &ds, Some(dir.path())).unwrap();
        let b = train(&cfg, &ds, None).unwrap();
        assert_eq!(losses(&a.log), losses(&b.log));
        assert_eq!(metrics_csv(&a.log), fs::read_to_string(dir.path().join("metrics.csv")).unwrap());

        let mid = Checkpoint::load(&dir.path().join("checkpoint-000004.json")).unwrap();
        assert_eq!(mid.step, 4);
        let resumed = train_from(mid, &ds, None).unwrap();
        assert_eq!(losses(&resumed.log), losses(&a.log)[4..].to_vec());
        assert_eq!(resumed.checkpoint, a.checkpoint);
        let fin = Checkpoint::load(&dir.path().join("checkpoint-final.json")).unwrap();
        assert_eq!(fin, a.checkpoint);
    }

    #[test]
    fn frozen_retriever_stays_fixed() {
        let ds = tiny_data();
        let cfg = TrainConfig {
            train_retriever: false,
            ..tiny_cfg(4)
        };
        let init = Checkpoint::initial(&cfg, &ds).unwrap();
        let out = train(&cfg, &ds, None).unwrap();
        assert_eq!(out.checkpoint.model.retriever, init.model.retriever);
        assert_ne!(out.checkpoint.model.generator, init.model.generator);
    }

    #[test]
    fn batches_are_pure_functions_of_seed_and_step() {
        assert_eq!(batch_indices(3, 17, 10, 4), batch_indices(3, 17, 10, 4));
        let b = batch_indices(3, 17, 10, 4);
        let mut sorted = b.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert_eq!(batch_indices(0, 0, 3, 8), vec![0, 1, 2]);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            LogRow {
                step: 0,
                loss: Some(0.75),
                dev: Some((0.5, 1.0, 0.25)),
            },
            LogRow {
                step: 1,
                loss: Some(0.5),
                dev: None,
            },
            LogRow {
                step: 2,
                loss: None,
                dev: Some((1.0, 1.0, 1.0)),
            },
        ];
        assert_eq!(metrics_csv(&rows), format!("{METRICS_HEADER}\n0,0.75,0.5,1,0.25\n1,0.5,,,\n2,,1,1,1\n"));
    }

    #[test]
    fn perfect_single_query_scores_one_and_gating_holds() {
        let ds = tiny_data();
        let bags = CorpusBags::from_corpus(&ds.corpus).unwrap();
        let model = Checkpoint::initial(&tiny_cfg(0), &ds).unwrap().model;
        let report = evaluate(&model, &bags, &ds.dev, 2, 4, 4).unwrap();
        for row in &report.rows {
            assert!(row.kilt_score <= row.utility);
        }
        let perfect = summarize(vec![EvalRow {
            query: "q".into(),
            retrieved: vec![0, 1],
            output: ds.dev[0].y.clone(),
            utility: 1.0,
            r_precision: 1.0,
            kilt_score: 1.0,
        }]);
        assert_eq!(
            (perfect.mean_utility, perfect.mean_r_precision, perfect.mean_kilt_score),
            (1.0, 1.0, 1.0)
        );
    }
}
