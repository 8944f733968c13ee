//! Command-line entry point: data generation, training, evaluation, oracle
//! self-checks and the sample-count sweep.
//!
//! Every command writes `manifest.json` into its output directory before
//! doing any work.

pub mod oracle;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{answer_exclusivity_violations, gen_synthetic, load_dataset, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::objective::{refresh_pools, CorpusBags};
use crate::trainer::{evaluate, train_from, Checkpoint, EvalReport};

pub use oracle::{run_oracle_checks, Fault, OracleReport};

pub const MANIFEST_FORMAT: &str = "stochrag-manifest";
pub const REPORT_HEADER: &str = "query,utility,r_precision,kilt_score";
pub const DEFAULT_COUNTS: &str = "1,2,4,8,10";

#[derive(Debug, Parser)]
#[command(name = "stochrag", version, about = "Retrieval-augmented generation trained by expected-utility maximization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, task splits and reading examples.
    GenData(Common),
    /// Train end to end; resumes when given a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dev split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check samplers and gradients against exact oracles.
    OracleCheck {
        #[arg(long)]
        out: PathBuf,
        /// Inject a known bug; the checks must then fail.
        #[arg(long, value_enum)]
        fault: Option<Fault>,
    },
    /// Expected-utility estimates for several list-sample counts.
    SweepSamples {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sample counts.
        #[arg(long, default_value = DEFAULT_COUNTS)]
        counts: String,
        /// Sweep the dev split of this checkpoint instead of the tiny
        /// exact-oracle family.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
    },
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    /// Input files and directories by role.
    pub inputs: BTreeMap<String, String>,
    /// Files the command writes, relative to the output directory.
    pub artifacts: Vec<String>,
    pub code_version: String,
}

impl RunManifest {
    fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(out.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Failures that are not errors of the library: a check that ran and said no.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    ChecksFailed(String),
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest(command: &str, cfg: &RunConfig, inputs: &[(&str, Option<&Path>)], artifacts: &[&str]) -> RunManifest {
    RunManifest {
        format: MANIFEST_FORMAT.into(),
        command: command.into(),
        config: cfg.clone(),
        seed: cfg.seed,
        inputs: inputs
            .iter()
            .filter_map(|(k, v)| v.map(|p| (k.to_string(), p.display().to_string())))
            .collect(),
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        code_version: env!("CARGO_PKG_VERSION").into(),
    }
}

fn dataset(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => load_dataset(dir),
        None => gen_synthetic(&cfg.synth()),
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::GenData(common) => cmd_gen_data(&common),
        Command::Train {
            common,
            data,
            checkpoint,
        } => cmd_train(&common, data.as_deref(), checkpoint.as_deref()),
        Command::Eval {
            common,
            data,
            checkpoint,
        } => cmd_eval(&common, data.as_deref(), &checkpoint),
        Command::OracleCheck { out, fault } => cmd_oracle_check(&out, fault),
        Command::SweepSamples {
            common,
            counts,
            checkpoint,
            data,
        } => cmd_sweep_samples(&common, &counts, checkpoint.as_deref(), data.as_deref()),
    }
}

pub fn cmd_gen_data(common: &Common) -> Result<Outcome> {
    let cfg = resolve_config(common)?;
    let files = ["vocab.tsv", "corpus.jsonl", "train.jsonl", "dev.jsonl", "reading.jsonl"];
    manifest("gen-data", &cfg, &[("config", common.config.as_deref())], &files).write(&common.out)?;
    let ds = gen_synthetic(&cfg.synth())?;
    let all: Vec<_> = ds.train.iter().chain(&ds.dev).cloned().collect();
    let leaks = answer_exclusivity_violations(&ds.corpus, &all);
    if !leaks.is_empty() {
        return Err(Error::invalid(format!("answer exclusivity violated: {}", leaks.join("; "))));
    }
    save_dataset(&common.out, &ds)?;
    println!(
        "wrote {} documents, {} train / {} dev queries, {} reading examples to {}",
        ds.corpus.len(),
        ds.train.len(),
        ds.dev.len(),
        ds.reading.len(),
        common.out.display()
    );
    Ok(Outcome::Ok)
}

pub fn cmd_train(common: &Common, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<Outcome> {
    let cfg = resolve_config(common)?;
    manifest(
        "train",
        &cfg,
        &[
            ("config", common.config.as_deref()),
            ("data", data),
            ("checkpoint", checkpoint),
        ],
        &["metrics.csv", "checkpoint-final.json"],
    )
    .write(&common.out)?;
    let ds = dataset(&cfg, data)?;
    let start = match checkpoint {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.config != cfg.train() {
                return Err(Error::config(
                    "config",
                    format!("differs from the configuration stored in {}", p.display()),
                ));
            }
            ckpt
        }
        None => Checkpoint::initial(&cfg.train(), &ds)?,
    };
    let out = train_from(start, &ds, Some(&common.out))?;
    if let Some(dev) = out.log.last().and_then(|r| r.dev) {
        println!(
            "step {}: dev utility {:.4}, R-Precision {:.4}, KILT {:.4}",
            out.checkpoint.step, dev.0, dev.1, dev.2
        );
    }
    Ok(Outcome::Ok)
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{},{}", r.query, r.utility, r.r_precision, r.kilt_score);
    }
    let _ = writeln!(
        out,
        "mean,{},{},{}",
        report.mean_utility, report.mean_r_precision, report.mean_kilt_score
    );
    out
}

pub fn cmd_eval(common: &Common, data: Option<&Path>, checkpoint: &Path) -> Result<Outcome> {
    let cfg = resolve_config(common)?;
    manifest(
        "eval",
        &cfg,
        &[
            ("config", common.config.as_deref()),
            ("data", data),
            ("checkpoint", Some(checkpoint)),
        ],
        &["report.csv"],
    )
    .write(&common.out)?;
    let ds = dataset(&cfg, data)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let bags = CorpusBags::from_corpus(&ds.corpus)?;
    let report = evaluate(&ckpt.model, &bags, &ds.dev, cfg.k, cfg.eval_beam, cfg.max_len)?;
    fs::write(common.out.join("report.csv"), report_csv(&report))?;
    println!(
        "dev utility {:.4}, R-Precision {:.4}, KILT {:.4} over {} queries",
        report.mean_utility,
        report.mean_r_precision,
        report.mean_kilt_score,
        report.rows.len()
    );
    Ok(Outcome::Ok)
}

pub fn cmd_oracle_check(out: &Path, fault: Option<Fault>) -> Result<Outcome> {
    let mut m = manifest("oracle-check", &RunConfig::default(), &[], &["oracle.json", "oracle.txt"]);
    if let Some(f) = fault {
        m.inputs.insert("fault".into(), serde_json::to_value(f)?.as_str().unwrap_or_default().into());
    }
    m.write(out)?;
    let report = run_oracle_checks(fault)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(out.join("oracle.json"), json)?;
    let text = report.text();
    fs::write(out.join("oracle.txt"), &text)?;
    print!("{text}");
    if report.passed {
        Ok(Outcome::Ok)
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} = {:.3e} > {:.1e}", c.name, c.statistic, c.threshold))
            .collect();
        Ok(Outcome::ChecksFailed(failed.join(", ")))
    }
}

pub fn cmd_sweep_samples(
    common: &Common,
    counts: &str,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
) -> Result<Outcome> {
    let cfg = resolve_config(common)?;
    let counts = oracle::parse_counts(counts)?;
    manifest(
        "sweep-samples",
        &cfg,
        &[
            ("config", common.config.as_deref()),
            ("checkpoint", checkpoint),
            ("data", data),
        ],
        &["sweep.csv", "sweep.svg"],
    )
    .write(&common.out)?;
    let settings = sweep::SweepSettings {
        k: cfg.k,
        beta: cfg.beta,
        seeds: cfg.sweep_seeds,
        root_seed: cfg.seed,
    };
    let (rows, title) = match checkpoint {
        None => {
            let family = sweep::tiny_family(cfg.seed, cfg.pool_size)?;
            (sweep::sweep_tiny(&family, &counts, &settings)?, "tiny instances vs exact oracle")
        }
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let ds = dataset(&cfg, data)?;
            let bags = CorpusBags::from_corpus(&ds.corpus)?;
            let queries: Vec<_> = ds.dev.iter().enumerate().map(|(i, t)| (i as u64, t)).collect();
            let pools = refresh_pools(&ckpt.model, &bags, &queries, &cfg.objective(), cfg.seed, ckpt.step)?;
            (
                sweep::sweep_dev(&ckpt.model, &bags, &ds.dev, &pools, &counts, &settings)?,
                "dev expected utility",
            )
        }
    };
    let csv = sweep::sweep_csv(&rows);
    fs::write(common.out.join("sweep.csv"), &csv)?;
    fs::write(common.out.join("sweep.svg"), sweep::sweep_svg(&rows, title))?;
    print!("{csv}");
    let off: Vec<String> = rows
        .iter()
        .filter(|r| r.within(2.0) == Some(false))
        .map(|r| format!("{} samples", r.samples))
        .collect();
    if off.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::ChecksFailed(format!(
            "mean outside 2 standard errors of the exact value at {}",
            off.join(", ")
        )))
    }
}

/// Exit status for an error: 1 for bad input, 2 for a runtime abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::Truncated { .. } => 1,
        _ => 2,
    }
}
