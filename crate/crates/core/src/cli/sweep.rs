//! Sensitivity of the expected-utility estimate to the number of sampled
//! lists, with a CSV table and a standalone SVG line plot.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::TaskInstance;
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::models::{Model, TokenSeq};
use crate::objective::{exact_expected_utility, mc_expected_utility, CandidatePool, CorpusBags, TinyProblem};

pub const SWEEP_HEADER: &str = "samples,mean,stderr,exact,within_2se";

/// Tiny instances behind the exact-oracle sweep.
pub const TINY_INSTANCES: u64 = 8;
const TINY_DOCS: usize = 6;
const TINY_VOCAB: usize = 8;
const TINY_DIM: usize = 4;

/// One query as seen by the estimator.
pub struct SweepQuery<'a> {
    pub model: &'a Model,
    pub bags: &'a CorpusBags,
    pub x: &'a TokenSeq,
    pub pool: &'a CandidatePool,
    pub kind: UtilityKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Exact expected utility, when the corpus is small enough to enumerate.
    pub exact: Option<f64>,
}

impl SweepRow {
    pub fn within(&self, stderrs: f64) -> Option<bool> {
        self.exact.map(|e| (self.mean - e).abs() <= stderrs * self.stderr)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepSettings {
    pub k: usize,
    pub beta: f64,
    pub seeds: usize,
    pub root_seed: u64,
}

/// Mean over queries of the Monte Carlo estimate, repeated for `seeds`
/// noise families; returns the mean and standard error across families.
pub fn sweep(queries: &[SweepQuery<'_>], counts: &[usize], s: &SweepSettings, exact: Option<f64>) -> Result<Vec<SweepRow>> {
    if counts.is_empty() {
        return Err(Error::config("counts", "needs at least one sample count"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("sweep needs at least one query"));
    }
    if s.seeds < 2 {
        return Err(Error::config("sweep_seeds", "needs at least 2 seeds for a standard error"));
    }
    counts
        .iter()
        .map(|&samples| {
            let estimates = (0..s.seeds as u64)
                .into_par_iter()
                .map(|family| {
                    let mut total = 0.0;
                    for (i, q) in queries.iter().enumerate() {
                        total += mc_expected_utility(
                            q.model,
                            q.bags,
                            q.x,
                            q.pool,
                            q.kind,
                            s.k,
                            s.beta,
                            samples,
                            s.root_seed.wrapping_add(family),
                            0,
                            i as u64,
                        )?;
                    }
                    Ok(total / queries.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, stderr) = mean_stderr(&estimates);
            Ok(SweepRow {
                samples,
                mean,
                stderr,
                exact,
            })
        })
        .collect()
}

/// Sample mean and standard error (n - 1 denominator).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The random tiny-instance family seeded from `seed`.
pub fn tiny_family(seed: u64, pool_size: usize) -> Result<Vec<TinyProblem>> {
    (0..TINY_INSTANCES)
        .map(|i| TinyProblem::random(seed.wrapping_mul(1000).wrapping_add(i), TINY_DOCS, TINY_VOCAB, TINY_DIM, pool_size))
        .collect()
}

/// Sweep over the tiny family, against its exact expected utility.
pub fn sweep_tiny(family: &[TinyProblem], counts: &[usize], s: &SweepSettings) -> Result<Vec<SweepRow>> {
    let k = s.k.min(TINY_DOCS);
    let mut exact = 0.0;
    for p in family {
        exact += exact_expected_utility(&p.model, &p.bags, &p.x, &p.pool, p.kind, k)?;
    }
    let exact = exact / family.len() as f64;
    let queries: Vec<SweepQuery> = family
        .iter()
        .map(|p| SweepQuery {
            model: &p.model,
            bags: &p.bags,
            x: &p.x,
            pool: &p.pool,
            kind: p.kind,
        })
        .collect();
    sweep(&queries, counts, &SweepSettings { k, ..*s }, Some(exact))
}

/// Sweep over dev queries of a trained model. The corpus is too large to
/// enumerate, so rows carry no exact value.
pub fn sweep_dev(
    model: &Model,
    bags: &CorpusBags,
    dev: &[TaskInstance],
    pools: &[CandidatePool],
    counts: &[usize],
    s: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let queries: Vec<SweepQuery> = dev
        .iter()
        .zip(pools)
        .map(|(inst, pool)| SweepQuery {
            model,
            bags,
            x: &inst.x,
            pool,
            kind: inst.utility_kind,
        })
        .collect();
    sweep(&queries, counts, s, None)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let exact = r.exact.map(|e| format!("{e:.17e}")).unwrap_or_default();
        let within = r.within(2.0).map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{:.17e},{:.17e},{exact},{within}", r.samples, r.mean, r.stderr);
    }
    out
}

/// Line plot of the mean with a +-2 standard-error band and the exact value
/// as a dashed line. Every point carries its numbers as `data-*` attributes.
pub fn sweep_svg(rows: &[SweepRow], title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let xs: Vec<f64> = rows.iter().map(|r| r.samples as f64).collect();
    let (x_lo, x_hi) = bounds(xs.iter().copied());
    let (y_lo, y_hi) = bounds(
        rows.iter()
            .flat_map(|r| [r.mean - 2.0 * r.stderr, r.mean + 2.0 * r.stderr])
            .chain(rows.iter().filter_map(|r| r.exact)),
    );
    let px = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">list samples</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {0})">expected utility</text>"#,
        H / 2.0
    );
    for (v, anchor) in [(y_lo, H - PAD), (y_hi, PAD)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor}" text-anchor="end" font-size="10">{v:.3}</text>"#, PAD - 4.0);
    }
    for r in rows {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            px(r.samples as f64),
            H - PAD + 14.0,
            r.samples
        );
    }
    if let Some(e) = rows.iter().find_map(|r| r.exact) {
        let _ = writeln!(
            s,
            r#"<line class="exact" data-exact="{e:.17e}" x1="{PAD}" y1="{0:.3}" x2="{1}" y2="{0:.3}" stroke="gray" stroke-dasharray="6 4"/>"#,
            py(e),
            W - PAD
        );
    }
    let points: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.3},{:.3}", px(r.samples as f64), py(r.mean)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    for r in rows {
        let (x, lo, hi) = (px(r.samples as f64), py(r.mean - 2.0 * r.stderr), py(r.mean + 2.0 * r.stderr));
        let _ = writeln!(s, r#"<line x1="{x:.3}" y1="{lo:.3}" x2="{x:.3}" y2="{hi:.3}" stroke="steelblue"/>"#);
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{x:.3}" cy="{:.3}" r="3" fill="steelblue" data-samples="{}" data-mean="{:.17e}" data-stderr="{:.17e}"/>"#,
            py(r.mean),
            r.samples,
            r.mean,
            r.stderr
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        // single point or flat curve
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
