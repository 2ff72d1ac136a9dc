//! Monte Carlo driver: end-to-end replications, comparison metrics,
//! post-stratified fits and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{df_dt_estimators, lincoln_petersen, racinskij_fit, CoverageEstimate, EmOptions, EstimatorId};
use crate::error::{Error, Result};
use crate::linkage::{
    baseline_pairs, block_pairs, clerical_sample, confusion, counts, dedupe_rule2, link_rule1, ClericalEstimates,
    ConfusionMatrix, CountVector, LinkRule, LinkSet, Rosters,
};
use crate::mixture::{CountTable, FitOptions};
use crate::neighbor_multi::{fit_loglinear_with_lambda, per_rule_lambda, RuleIndexSet};
use crate::neighbor_uni::{select_g, CountHistogram};
use crate::popsim::{draw_samples, generate_population, PerturbationParams, Population, PopulationModel, SampleFlags};
use crate::rng::{derive_seed, stream, Stream};

pub const FULL_SCALE_N: usize = 100_000;
pub const DEFAULT_MIN_STRATUM: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// `None` for a custom configuration.
    pub scenario: Option<u8>,
    pub params: PerturbationParams,
    pub rule: LinkRule,
    pub n_population: usize,
    pub pi_a: f64,
    pub pi_b: f64,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorId>,
    pub tau: u32,
    pub g_max: usize,
    pub clerical_m: usize,
    /// Width of the birth-year groups in the synthetic age table.
    pub year_group: u32,
}

impl ScenarioConfig {
    pub fn new(scenario: u8, n_population: usize, replications: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            scenario: Some(scenario),
            params: PerturbationParams::scenario(scenario)?,
            rule: LinkRule::for_scenario(scenario),
            n_population,
            pi_a: 0.9,
            pi_b: 0.9,
            replications,
            seed,
            estimators: EstimatorId::ALL.to_vec(),
            tau: 10,
            g_max: 5,
            clerical_m: 1000,
            year_group: desk_year_group(n_population),
        })
    }

    /// `N = 20000`, `R = 30`, with birth years grouped so that the density of
    /// candidate pairs per block matches the full-scale population.
    pub fn desk(scenario: u8, seed: u64) -> Result<Self> {
        Self::new(scenario, 20_000, 30, seed)
    }

    pub fn full(scenario: u8, seed: u64) -> Result<Self> {
        Self::new(scenario, FULL_SCALE_N, 100, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.scenario {
            if self.params != PerturbationParams::scenario(id)? {
                return Err(Error::invalid(format!("perturbation parameters disagree with scenario {id}")));
            }
            if self.rule != LinkRule::for_scenario(id) {
                return Err(Error::invalid(format!("rule {:?} disagrees with scenario {id}", self.rule)));
            }
        }
        for (name, p) in [("pi_a", self.pi_a), ("pi_b", self.pi_b)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {p}")));
            }
        }
        if self.n_population == 0 || self.replications == 0 || self.g_max == 0 || self.year_group == 0 {
            return Err(Error::invalid("n_population, replications, g_max and year_group must be positive"));
        }
        if self.tau == 0 || self.estimators.is_empty() {
            return Err(Error::invalid("tau and the estimator list must be non-empty"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<PopulationModel> {
        PopulationModel::synthetic(self.params, self.year_group)
    }

    pub fn fit_options(&self, rep: u64) -> FitOptions {
        FitOptions { jitter_seed: derive_seed(self.seed, &[Stream::Estimation as u64, rep]), ..FitOptions::default() }
    }
}

pub fn desk_year_group(n_population: usize) -> u32 {
    ((FULL_SCALE_N as f64 / n_population as f64).round() as u32).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleAccuracy {
    pub links: usize,
    pub confusion: ConfusionMatrix,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub fpr: Option<f64>,
}

impl RuleAccuracy {
    fn score(links: &LinkSet, rosters: &Rosters) -> Result<Self> {
        let c = confusion(links, rosters)?;
        Ok(Self { links: links.len(), confusion: c, recall: c.recall().ok(), precision: c.precision().ok(), fpr: c.fpr().ok() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: u64,
    pub size_a: usize,
    pub size_b: usize,
    pub overlap: usize,
    pub baseline_pairs: usize,
    pub forced_same_surname: usize,
    pub rule1: RuleAccuracy,
    pub rule2: RuleAccuracy,
    pub clerical: ClericalEstimates,
    pub estimates: Vec<CoverageEstimate>,
}

impl ReplicationResult {
    pub fn estimate(&self, id: EstimatorId) -> Option<f64> {
        self.estimates.iter().find(|e| e.estimator == id).map(|e| e.coverage_hat)
    }
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(stage))
}

/// Linkage output of one replication, before estimation.
pub struct LinkedReplication {
    pub size_a: usize,
    pub size_b: usize,
    pub overlap: usize,
    pub forced_same_surname: usize,
    pub pairs: Vec<crate::linkage::PairInfo>,
    pub links1: LinkSet,
    pub links2: LinkSet,
    pub counts: Vec<CountVector>,
    pub rule1: RuleAccuracy,
    pub rule2: RuleAccuracy,
}

pub fn link_replication(cfg: &ScenarioConfig, model: &PopulationModel, rep: u64) -> Result<LinkedReplication> {
    let pop = staged("generate_population", generate_population(cfg.n_population, model, cfg.seed, rep))?;
    let flags = staged("draw_samples", draw_samples(cfg.n_population, cfg.pi_a, cfg.pi_b, cfg.seed, rep))?;
    link_population(&pop, &flags, cfg.rule)
}

pub fn link_population(pop: &Population, flags: &SampleFlags, rule: LinkRule) -> Result<LinkedReplication> {
    let rosters = Rosters::new(pop, flags);
    let blocks = staged("block_pairs", block_pairs(&rosters.b, &rosters.a))?;
    let pairs = baseline_pairs(&rosters, &blocks);
    let links1 = link_rule1(&pairs, rule);
    let links2 = dedupe_rule2(&links1);
    let counts = counts(&links1, &pairs, &rosters.b);
    let rule1 = staged("rule1", RuleAccuracy::score(&links1, &rosters))?;
    let rule2 = staged("rule2", RuleAccuracy::score(&links2, &rosters))?;
    Ok(LinkedReplication {
        size_a: flags.size_a(),
        size_b: flags.size_b(),
        overlap: flags.overlap(),
        forced_same_surname: pop.forced_same_surname,
        pairs,
        links1,
        links2,
        counts,
        rule1,
        rule2,
    })
}

pub fn run_replication(cfg: &ScenarioConfig, model: &PopulationModel, rep: u64) -> Result<ReplicationResult> {
    cfg.validate()?;
    let lr = link_replication(cfg, model, rep)?;
    let mut rng = stream(cfg.seed, Stream::Clerical, rep, 0);
    let clerical = staged("clerical_sample", clerical_sample(&lr.pairs, &lr.links2, cfg.clerical_m, &mut rng))?;
    let opts = cfg.fit_options(rep);
    let mut estimates = Vec::with_capacity(cfg.estimators.len());
    let mut lambda_hat: Option<(CountTable, Vec<f64>)> = None;
    let vectors: Vec<Vec<u32>> = lr.counts.iter().map(|c| c.nonzero_patterns().to_vec()).collect();
    for &id in &cfg.estimators {
        let est = match id {
            EstimatorId::Naive => staged("naive", lincoln_petersen(lr.size_a, lr.size_b, lr.links2.len() as f64))?,
            EstimatorId::DF | EstimatorId::DT => {
                let (df, dt) = staged("df_dt", df_dt_estimators(lr.links2.len(), &clerical, lr.size_a, lr.size_b))?;
                if id == EstimatorId::DF {
                    df
                } else {
                    dt
                }
            }
            EstimatorId::R => {
                let mut hist = [0u64; 8];
                for l in lr.links1.iter() {
                    hist[l.gamma.index()] += 1;
                }
                staged("racinskij", racinskij_fit(&hist, lr.size_b, &EmOptions::default()))?.0
            }
            EstimatorId::UN => {
                let hist = CountHistogram::from_counts(lr.counts.iter().map(|c| c.n_total));
                let sel = staged("fit_uni", select_g(&hist, cfg.g_max, true, cfg.tau, &opts))?;
                let p = sel.fit.params.p_bar();
                CoverageEstimate {
                    estimator: id,
                    coverage_hat: p,
                    n_hat: Some(lr.size_a as f64 / p),
                    diagnostics: BTreeMap::new(),
                }
                .with("g_hat", sel.g_hat as f64)
                .with("lambda_bar", sel.fit.params.lambda_bar())
                .with("converged", sel.fit.converged as u8 as f64)
            }
            EstimatorId::MnMain | EstimatorId::MnInteractions => {
                if lambda_hat.is_none() {
                    let table = staged("fit_multi", CountTable::new(7, cfg.tau, vectors.iter().map(Vec::as_slice)))?;
                    let lam = staged("fit_multi", per_rule_lambda(&vectors, 7, cfg.g_max, cfg.tau, &opts))?;
                    lambda_hat = Some((table, lam));
                }
                let (table, lam) = lambda_hat.as_ref().expect("just set");
                let order = if id == EstimatorId::MnMain { 1 } else { 2 };
                let mf = staged(
                    "fit_multi",
                    fit_loglinear_with_lambda(table, lam, &RuleIndexSet::binary3(), order, cfg.g_max, &opts),
                )?;
                let phi = staged("fit_multi", mf.coverage())?;
                CoverageEstimate { estimator: id, coverage_hat: phi, n_hat: Some(lr.size_a as f64 / phi), diagnostics: BTreeMap::new() }
                    .with("g_hat", mf.fit.params.classes() as f64)
                    .with("converged", mf.fit.converged as u8 as f64)
            }
        };
        estimates.push(est);
    }
    Ok(ReplicationResult {
        rep,
        size_a: lr.size_a,
        size_b: lr.size_b,
        overlap: lr.overlap,
        baseline_pairs: lr.pairs.iter().filter(|p| p.baseline).count(),
        forced_same_surname: lr.forced_same_surname,
        rule1: lr.rule1,
        rule2: lr.rule2,
        clerical,
        estimates,
    })
}

/// Runs the given replication indices in parallel; results are in index order.
pub fn run_replications(cfg: &ScenarioConfig, model: &PopulationModel, reps: &[u64]) -> Result<Vec<ReplicationResult>> {
    cfg.validate()?;
    reps.par_iter().map(|&r| run_replication(cfg, model, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: EstimatorId,
    pub replications: usize,
    pub mean: f64,
    pub relative_bias_pct: f64,
    /// Sample variance (denominator `R − 1`).
    pub variance: f64,
    /// Mean squared error about the true coverage (denominator `R`).
    pub mse: f64,
}

impl EstimatorMetrics {
    pub fn from_estimates(estimator: EstimatorId, xs: &[f64], truth: f64) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::invalid("metrics need at least two replications"));
        }
        let r = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / r;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let mse = xs.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / r;
        Ok(Self { estimator, replications: xs.len(), mean, relative_bias_pct: 100.0 * (mean - truth) / truth, variance, mse })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkageRates {
    pub recall: f64,
    pub precision: f64,
    pub fpr: f64,
}

fn mean_rates<'a>(rs: impl Iterator<Item = &'a RuleAccuracy>) -> LinkageRates {
    let (mut n, mut acc) = (0.0, LinkageRates::default());
    for r in rs {
        n += 1.0;
        acc.recall += r.recall.unwrap_or(f64::NAN);
        acc.precision += r.precision.unwrap_or(f64::NAN);
        acc.fpr += r.fpr.unwrap_or(f64::NAN);
    }
    LinkageRates { recall: acc.recall / n, precision: acc.precision / n, fpr: acc.fpr / n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub scenario: Option<u8>,
    pub truth: f64,
    pub rows: Vec<EstimatorMetrics>,
    pub rule1: LinkageRates,
    pub rule2: LinkageRates,
    pub raw: BTreeMap<EstimatorId, Vec<f64>>,
}

impl MetricsTable {
    pub fn row(&self, id: EstimatorId) -> Option<&EstimatorMetrics> {
        self.rows.iter().find(|r| r.estimator == id)
    }
}

pub fn metrics_from(cfg: &ScenarioConfig, results: &[ReplicationResult]) -> Result<MetricsTable> {
    let mut raw = BTreeMap::new();
    for &id in &cfg.estimators {
        let xs: Vec<f64> = results.iter().filter_map(|r| r.estimate(id)).collect();
        raw.insert(id, xs);
    }
    let rows = cfg
        .estimators
        .iter()
        .map(|&id| EstimatorMetrics::from_estimates(id, &raw[&id], cfg.pi_a))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable {
        scenario: cfg.scenario,
        truth: cfg.pi_a,
        rows,
        rule1: mean_rates(results.iter().map(|r| &r.rule1)),
        rule2: mean_rates(results.iter().map(|r| &r.rule2)),
        raw,
    })
}

pub fn run_experiment(cfg: &ScenarioConfig, model: &PopulationModel) -> Result<MetricsTable> {
    if cfg.replications < 2 {
        return Err(Error::invalid("an experiment needs at least two replications"));
    }
    let reps: Vec<u64> = (0..cfg.replications as u64).collect();
    metrics_from(cfg, &run_replications(cfg, model, &reps)?)
}

pub fn write_jsonl<W: Write>(mut out: W, results: &[ReplicationResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(src: R) -> Result<Vec<ReplicationResult>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { row: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedCoverage {
    pub coverage: f64,
    /// Set when the inputs imply a coverage above one.
    pub exceeds_one: bool,
}

/// Coverage of the full list from the coverage of its complete-record part.
pub fn adjust_incomplete(size_a_full: usize, size_a_complete: usize, phi_complete: f64) -> Result<AdjustedCoverage> {
    if size_a_complete == 0 {
        return Err(Error::invalid("no complete records"));
    }
    if size_a_complete > size_a_full {
        return Err(Error::invalid("more complete records than records"));
    }
    if !(phi_complete > 0.0 && phi_complete <= 1.0) {
        return Err(Error::invalid(format!("coverage must lie in (0, 1], got {phi_complete}")));
    }
    let coverage = size_a_full as f64 * phi_complete / size_a_complete as f64;
    if coverage > 1.0 {
        log::warn!("adjusted coverage {coverage} exceeds one");
    }
    Ok(AdjustedCoverage { coverage, exceeds_one: coverage > 1.0 })
}

#[derive(Debug, Clone)]
pub struct StratifiedSettings {
    pub min_size: usize,
    pub g_max: usize,
    pub tau: u32,
    pub opts: FitOptions,
}

impl Default for StratifiedSettings {
    fn default() -> Self {
        Self { min_size: DEFAULT_MIN_STRATUM, g_max: 5, tau: 10, opts: FitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFit {
    pub label: String,
    pub size_b: usize,
    pub coverage: f64,
    pub g_hat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedFit {
    pub strata: Vec<StratumFit>,
    pub skipped: Vec<(String, usize)>,
    /// `S_B`-size weighted mean of the stratum coverages.
    pub pooled: Option<f64>,
}

/// Fits the univariate neighbor model separately within each post-stratum,
/// given the link counts of the stratum's `S_B` records.
pub fn stratified_fit(strata: &BTreeMap<String, Vec<u32>>, settings: &StratifiedSettings) -> Result<StratifiedFit> {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (label, ns) in strata {
        if ns.len() < settings.min_size {
            log::warn!("stratum {label} has {} records, below {}; skipped", ns.len(), settings.min_size);
            skipped.push((label.clone(), ns.len()));
            continue;
        }
        let hist = CountHistogram::from_counts(ns.iter().copied());
        let sel = select_g(&hist, settings.g_max, true, settings.tau, &settings.opts).map_err(|e| e.at_stage("stratified_fit"))?;
        fits.push(StratumFit { label: label.clone(), size_b: ns.len(), coverage: sel.fit.params.p_bar(), g_hat: sel.g_hat });
    }
    let total: usize = fits.iter().map(|f| f.size_b).sum();
    let pooled = (total > 0).then(|| fits.iter().map(|f| f.size_b as f64 / total as f64 * f.coverage).sum::<f64>());
    Ok(StratifiedFit { strata: fits, skipped, pooled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            _ => Err(Error::invalid(format!("unknown report format `{s}`"))),
        }
    }
}

pub const VARIANCE_SCALE: f64 = 1e7;

pub const CSV_HEADER: [&str; 6] = ["estimator", "replications", "mean", "relative_bias_pct", "variance_x1e-7", "mse_x1e-7"];

pub fn render_report(metrics: &MetricsTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(metrics)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &metrics.rows {
                w.write_record([
                    r.estimator.label().to_string(),
                    r.replications.to_string(),
                    r.mean.to_string(),
                    r.relative_bias_pct.to_string(),
                    (r.variance * VARIANCE_SCALE).to_string(),
                    (r.mse * VARIANCE_SCALE).to_string(),
                ])?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
                .map_err(|e| Error::invalid(e.to_string()))
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            if let Some(id) = metrics.scenario {
                writeln!(s, "## Scenario {id}\n").ok();
            }
            writeln!(s, "True coverage {}. Variance uses denominator R - 1; MSE is the mean squared deviation from the true coverage.\n", metrics.truth).ok();
            writeln!(s, "| Estimator | R | Relative bias (%) | Variance ×10⁻⁷ | Mean square error ×10⁻⁷ |").ok();
            writeln!(s, "|---|---:|---:|---:|---:|").ok();
            for r in &metrics.rows {
                writeln!(
                    s,
                    "| {} | {} | {:.3} | {:.3} | {:.3} |",
                    r.estimator,
                    r.replications,
                    r.relative_bias_pct,
                    r.variance * VARIANCE_SCALE,
                    r.mse * VARIANCE_SCALE
                )
                .ok();
            }
            writeln!(s, "\n| Rule | Recall | Precision | FPR ×10⁻⁹ |\n|---|---:|---:|---:|").ok();
            for (name, r) in [("1", metrics.rule1), ("2", metrics.rule2)] {
                writeln!(s, "| {name} | {:.3} | {:.3} | {:.2} |", r.recall, r.precision, r.fpr * 1e9).ok();
            }
            Ok(s)
        }
    }
}

/// Parses the csv report back into metric rows.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EstimatorMetrics>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let labels: BTreeMap<&str, EstimatorId> = EstimatorId::ALL.iter().map(|&id| (id.label(), id)).collect();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse { row: i + 2, msg };
        let num = |k: usize| -> Result<f64> { rec[k].parse::<f64>().map_err(|e| bad(e.to_string())) };
        let estimator = *labels.get(&rec[0]).ok_or_else(|| bad(format!("unknown estimator `{}`", &rec[0])))?;
        out.push(EstimatorMetrics {
            estimator,
            replications: rec[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            mean: num(2)?,
            relative_bias_pct: num(3)?,
            variance: num(4)? / VARIANCE_SCALE,
            mse: num(5)? / VARIANCE_SCALE,
        });
    }
    Ok(out)
}
