use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use linkerr::baselines::{df_dt_estimators, lincoln_petersen, racinskij_fit, EmOptions};
use linkerr::experiment::{
    link_population, metrics_from, read_jsonl, render_report, run_replications, write_jsonl, LinkedReplication,
    ReportFormat, RuleAccuracy,
};
use linkerr::linkage::{clerical_sample, read_counts, write_counts, write_links};
use linkerr::neighbor_multi::{fit_loglinear_coverage, RuleIndexSet};
use linkerr::neighbor_uni::{accuracy_from_fit, select_g};
use linkerr::popsim::{draw_samples, generate_population, read_population, write_population};
use linkerr::rng::{stream, Stream};
use linkerr::{CountHistogram, ScenarioConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::Command;

pub const POPULATION: &str = "population.csv";
pub const LINKS_RULE1: &str = "links_rule1.csv";
pub const LINKS_RULE2: &str = "links_rule2.csv";
pub const COUNTS: &str = "counts.csv";
pub const LINKAGE: &str = "linkage.json";
pub const FIT_UNI: &str = "fit_uni.json";
pub const FIT_MULTI: &str = "fit_multi.json";
pub const BASELINES: &str = "baselines.json";
pub const REPLICATIONS: &str = "replications.jsonl";
pub const EXPERIMENT_CONFIG: &str = "experiment_config.json";

struct Ctx<'a> {
    run: &'a RunConfig,
    cfg: ScenarioConfig,
    out: PathBuf,
    input: Option<&'a Path>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input_or(&self, name: &str) -> PathBuf {
        self.input.map_or_else(|| self.path(name), Path::to_path_buf)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        Ok(w.flush()?)
    }
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

pub fn dispatch(command: Command, run: &RunConfig, input: Option<&Path>) -> Result<()> {
    let cfg = run.scenario_config()?;
    let out = run.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { run, cfg, out, input };
    let (stage, result) = match command {
        Command::Simulate => ("simulate", simulate(&ctx)),
        Command::Link => ("link", link(&ctx)),
        Command::FitUni => ("fit-uni", fit_uni(&ctx)),
        Command::FitMulti => ("fit-multi", fit_multi(&ctx)),
        Command::Baselines => ("baselines", baselines(&ctx)),
        Command::Experiment => ("experiment", experiment(&ctx)),
        Command::Report => ("report", report(&ctx)),
    };
    result.with_context(|| format!("stage {stage}"))
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let (cfg, rep) = (&ctx.cfg, ctx.run.rep);
    let model = ctx.run.model(cfg)?;
    let pop = generate_population(cfg.n_population, &model, cfg.seed, rep)?;
    let flags = draw_samples(cfg.n_population, cfg.pi_a, cfg.pi_b, cfg.seed, rep)?;
    let mut w = ctx.create(POPULATION)?;
    write_population(&mut w, &pop, &flags)?;
    w.flush()?;
    log::info!("{} units, |S_A| = {}, |S_B| = {}", pop.len(), flags.size_a(), flags.size_b());
    Ok(())
}

fn linked(ctx: &Ctx) -> Result<LinkedReplication> {
    let p = ctx.input_or(POPULATION);
    let (pop, flags) = read_population(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
    Ok(link_population(&pop, &flags, ctx.cfg.rule)?)
}

fn defined(name: &str, r: &RuleAccuracy) -> Result<()> {
    if r.recall.is_none() || r.precision.is_none() || r.fpr.is_none() {
        bail!("{name} accuracy has an undefined ratio: {:?}", r.confusion);
    }
    Ok(())
}

fn link(ctx: &Ctx) -> Result<()> {
    let lr = linked(ctx)?;
    for (name, links) in [(LINKS_RULE1, &lr.links1), (LINKS_RULE2, &lr.links2)] {
        let mut w = ctx.create(name)?;
        write_links(&mut w, links)?;
        w.flush()?;
    }
    let mut w = ctx.create(COUNTS)?;
    write_counts(&mut w, &lr.counts)?;
    w.flush()?;
    ctx.write_json(
        LINKAGE,
        &json!({
            "size_a": lr.size_a,
            "size_b": lr.size_b,
            "baseline_pairs": lr.pairs.len(),
            "rule1": lr.rule1,
            "rule2": lr.rule2,
        }),
    )?;
    defined("rule 1", &lr.rule1)?;
    defined("rule 2", &lr.rule2)
}

fn fit_uni(ctx: &Ctx) -> Result<()> {
    let counts = read_counts(open(&ctx.input_or(COUNTS))?)?;
    let hist = CountHistogram::from_counts(counts.iter().map(|c| c.n_total));
    let cfg = &ctx.cfg;
    let sel = select_g(&hist, cfg.g_max, true, cfg.tau, &cfg.fit_options(ctx.run.rep))?;
    let accuracy = accuracy_from_fit(&sel.fit.params, None, None)?;
    ctx.write_json(FIT_UNI, &json!({ "records": hist.total, "selection": sel, "accuracy": accuracy }))
}

fn fit_multi(ctx: &Ctx) -> Result<()> {
    let counts = read_counts(open(&ctx.input_or(COUNTS))?)?;
    let vectors: Vec<Vec<u32>> = counts.iter().map(|c| c.nonzero_patterns().to_vec()).collect();
    let cfg = &ctx.cfg;
    let mf = fit_loglinear_coverage(
        &vectors,
        &RuleIndexSet::binary3(),
        ctx.run.order,
        cfg.g_max,
        cfg.tau,
        &cfg.fit_options(ctx.run.rep),
    )?;
    ctx.write_json(FIT_MULTI, &json!({ "records": vectors.len(), "coverage": mf.coverage()?, "fit": mf }))
}

fn baselines(ctx: &Ctx) -> Result<()> {
    let lr = linked(ctx)?;
    let cfg = &ctx.cfg;
    let mut rng = stream(cfg.seed, Stream::Clerical, ctx.run.rep, 0);
    let clerical = clerical_sample(&lr.pairs, &lr.links2, cfg.clerical_m, &mut rng)?;
    let naive = lincoln_petersen(lr.size_a, lr.size_b, lr.links2.len() as f64)?;
    let (df, dt) = df_dt_estimators(lr.links2.len(), &clerical, lr.size_a, lr.size_b)?;
    let mut hist = [0u64; 8];
    for l in lr.links1.iter() {
        hist[l.gamma.index()] += 1;
    }
    let (r, fit) = racinskij_fit(&hist, lr.size_b, &EmOptions::default())?;
    ctx.write_json(
        BASELINES,
        &json!({ "clerical": clerical, "estimates": [naive, r, df, dt], "latent_class": fit, "pattern_histogram": hist }),
    )
}

fn write_reports(ctx: &Ctx, cfg: &ScenarioConfig, results: &[linkerr::ReplicationResult]) -> Result<()> {
    let metrics = metrics_from(cfg, results)?;
    for &f in &ctx.run.report.formats {
        let name = match f {
            ReportFormat::Csv => "metrics.csv",
            ReportFormat::Markdown => "metrics.md",
            ReportFormat::Json => "metrics.json",
        };
        let mut w = ctx.create(name)?;
        w.write_all(render_report(&metrics, f)?.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

/// Replications already on disk for the same configuration are reused; the
/// record file is rewritten in index order.
fn experiment(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let cfg_path = ctx.path(EXPERIMENT_CONFIG);
    let rec_path = ctx.path(REPLICATIONS);
    let same_config = fs::read_to_string(&cfg_path)
        .ok()
        .and_then(|s| serde_json::from_str::<ScenarioConfig>(&s).ok())
        .is_some_and(|c| &c == cfg);
    let mut done = if same_config && rec_path.exists() { read_jsonl(open(&rec_path)?)? } else { Vec::new() };
    done.retain(|r| r.rep < cfg.replications as u64);
    done.sort_by_key(|r| r.rep);
    done.dedup_by_key(|r| r.rep);
    let have: std::collections::BTreeSet<u64> = done.iter().map(|r| r.rep).collect();
    let missing: Vec<u64> = (0..cfg.replications as u64).filter(|r| !have.contains(r)).collect();
    if !done.is_empty() {
        log::info!("resuming: {} stored, {} to run", done.len(), missing.len());
    }
    ctx.write_json(EXPERIMENT_CONFIG, cfg)?;
    let model = ctx.run.model(cfg)?;
    let mut results = done;
    results.extend(run_replications(cfg, &model, &missing)?);
    results.sort_by_key(|r| r.rep);
    let mut w = ctx.create(REPLICATIONS)?;
    write_jsonl(&mut w, &results)?;
    w.flush()?;
    write_reports(ctx, cfg, &results)
}

fn report(ctx: &Ctx) -> Result<()> {
    let results = read_jsonl(open(&ctx.input_or(REPLICATIONS))?)?;
    let cfg = match fs::read_to_string(ctx.path(EXPERIMENT_CONFIG)) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => ctx.cfg.clone(),
    };
    write_reports(ctx, &cfg, &results)
}
