//! Acceptance checks, one printed line per criterion. Exits non-zero if any
//! criterion fails.

use std::fs;
use std::process::Command;
use std::time::Instant;

use linkerr::baselines::EstimatorId;
use linkerr::experiment::{link_replication, run_experiment, run_replication, MetricsTable, ScenarioConfig};
use linkerr::mixture::{fit, mixture_pmf, sample_vector, Component, Constraint, CountTable, FitOptions, LogLinearCoef, MixtureParams};
use linkerr::neighbor_multi::{build_design, init_appendix_c, loglinear_invert, loglinear_probs, per_rule_lambda, RuleIndexSet};
use linkerr::neighbor_uni::{fit_uni, mix_pmf, CountHistogram, UniComponent, UniMixtureParams};
use linkerr::rng::{stream, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rng(index: u64) -> ChaCha8Rng {
    stream(0xacce_97, Stream::Synthetic, 0, index)
}

/// Every vector of length `dim` with entries summing to at most `cap`.
fn for_each_vector(dim: usize, cap: u32, f: &mut impl FnMut(&[u32])) {
    fn rec(t: &mut Vec<u32>, k: usize, left: u32, f: &mut impl FnMut(&[u32])) {
        if k == t.len() {
            f(t);
            return;
        }
        for v in 0..=left {
            t[k] = v;
            rec(t, k + 1, left - v, f);
        }
        t[k] = 0;
    }
    rec(&mut vec![0; dim], 0, cap, f);
}

fn random_uni(r: &mut ChaCha8Rng, lambda_max: f64) -> UniMixtureParams {
    let g = r.random_range(1..=3);
    let w: Vec<f64> = (0..g).map(|_| r.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let components = w
        .iter()
        .map(|x| UniComponent { alpha: x / s, p: r.random_range(0.0..1.0), lambda: r.random_range(0.01..lambda_max) })
        .collect();
    UniMixtureParams { components, shared_p: false }
}

/// Random mixture with every `λ_k <= lambda_max` and `Σλ_k <= total_max`.
fn random_multi(r: &mut ChaCha8Rng, dim: usize, lambda_max: f64, total_max: f64) -> MixtureParams {
    let g = r.random_range(1..=3);
    let w: Vec<f64> = (0..g).map(|_| r.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let components = w
        .iter()
        .map(|x| {
            let raw: Vec<f64> = (0..=dim).map(|_| r.random_range(0.05..1.0)).collect();
            let rs: f64 = raw.iter().sum();
            let mut lambda: Vec<f64> = (0..dim).map(|_| r.random_range(0.01..lambda_max)).collect();
            let total: f64 = lambda.iter().sum();
            if total > total_max {
                lambda.iter_mut().for_each(|l| *l *= total_max / total);
            }
            Component { alpha: x / s, p: raw[..dim].iter().map(|v| v / rs).collect(), lambda }
        })
        .collect();
    MixtureParams { components, loglinear: None }
}

fn c1_pmf_normalization() -> Outcome {
    let mut r = rng(1);
    let mut uni_dev: f64 = 0.0;
    for _ in 0..100 {
        let theta = random_uni(&mut r, 10.0);
        let s: f64 = (0..=200).map(|n| mix_pmf(n, &theta).unwrap()).sum();
        uni_dev = uni_dev.max((s - 1.0).abs());
    }
    let mut multi_dev: f64 = 0.0;
    for i in 0..100 {
        // Three rules with each intensity up to 2, or seven rules sharing a
        // total intensity of 2.
        let (params, cap) = if i % 2 == 0 { (random_multi(&mut r, 3, 2.0, 6.0), 45) } else { (random_multi(&mut r, 7, 2.0, 2.0), 18) };
        let mut s = 0.0;
        for_each_vector(params.dim(), cap, &mut |t| s += mixture_pmf(t, &params));
        multi_dev = multi_dev.max((s - 1.0).abs());
    }
    Outcome {
        pass: uni_dev < 1e-10 && multi_dev < 1e-8,
        detail: format!("max |sum - 1|: univariate {uni_dev:.2e} (tol 1e-10), multivariate {multi_dev:.2e} (tol 1e-8)"),
    }
}

fn c2_sampling_oracle() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let check = |probs: &dyn Fn(&[u32]) -> f64, draws: &[Vec<u32>]| -> (usize, usize, f64) {
        let mut freq = std::collections::HashMap::<Vec<u32>, u64>::new();
        for d in draws {
            *freq.entry(d.clone()).or_default() += 1;
        }
        let (mut cells, mut bad, mut worst) = (0, 0, 0.0f64);
        let mut keys: Vec<&Vec<u32>> = freq.keys().collect();
        keys.sort();
        for t in keys {
            let p = probs(t);
            if p <= 1e-3 {
                continue;
            }
            cells += 1;
            let sd = (p * (1.0 - p) / DRAWS as f64).sqrt();
            let z = (freq[t] as f64 / DRAWS as f64 - p).abs() / sd;
            worst = worst.max(z);
            bad += (z > 3.0) as usize;
        }
        (cells, bad, worst)
    };
    let uni = UniMixtureParams {
        components: vec![UniComponent { alpha: 0.6, p: 0.85, lambda: 0.3 }, UniComponent { alpha: 0.4, p: 0.7, lambda: 2.5 }],
        shared_p: false,
    };
    let um = uni.to_mixture();
    let mut r = rng(2);
    let draws: Vec<Vec<u32>> = (0..DRAWS).map(|_| sample_vector(&um, &mut r)).collect();
    let (uc, ub, uw) = check(&|t| mix_pmf(t[0], &uni).unwrap(), &draws);
    let multi = MixtureParams {
        components: vec![
            Component { alpha: 0.7, p: vec![0.5, 0.2, 0.2], lambda: vec![0.2, 0.1, 0.3] },
            Component { alpha: 0.3, p: vec![0.3, 0.3, 0.1], lambda: vec![1.0, 0.5, 0.8] },
        ],
        loglinear: None,
    };
    let draws: Vec<Vec<u32>> = (0..DRAWS).map(|_| sample_vector(&multi, &mut r)).collect();
    let (mc, mb, mw) = check(&|t| mixture_pmf(t, &multi), &draws);
    Outcome {
        pass: ub == 0 && mb == 0,
        detail: format!(
            "10^6 draws; univariate {uc} cells, {ub} outside 3 sd (max z {uw:.2}); multivariate {mc} cells, {mb} outside 3 sd (max z {mw:.2})"
        ),
    }
}

fn c3_marginalization() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params = random_multi(&mut r, 3, 2.0, 6.0);
        for k in 0..3 {
            let marginal_uni = UniMixtureParams {
                components: params
                    .components
                    .iter()
                    .map(|c| UniComponent { alpha: c.alpha, p: c.p[k], lambda: c.lambda[k] })
                    .collect(),
                shared_p: false,
            };
            let mut by_n = vec![0.0; 61];
            for_each_vector(3, 60, &mut |t| by_n[t[k] as usize] += mixture_pmf(t, &params));
            for (n, m) in by_n.iter().enumerate().take(15) {
                worst = worst.max((m - mix_pmf(n as u32, &marginal_uni).unwrap()).abs());
            }
        }
    }
    Outcome { pass: worst < 1e-10, detail: format!("max |marginal - univariate pmf| = {worst:.2e} (tol 1e-10)") }
}

fn c4_loglinear_round_trip() -> Outcome {
    let rules = RuleIndexSet::binary3();
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for d in [1, 2] {
        let design = build_design(&rules, d).unwrap();
        for _ in 0..100 {
            let phi = r.random_range(0.05..1.0);
            let u: Vec<f64> = (0..design.cols()).map(|_| r.random_range(-2.0..2.0)).collect();
            let p = loglinear_probs(phi, &u, &design).unwrap();
            let inv = loglinear_invert(&p, &design).unwrap();
            let back = loglinear_probs(inv.phi, &inv.u, &design).unwrap();
            worst = worst.max((inv.phi - phi).abs());
            for (a, b) in p.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in u.iter().zip(&inv.u) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome { pass: worst < 1e-10, detail: format!("200 draws, d in {{1, 2}}: max deviation {worst:.2e} (tol 1e-10)") }
}

fn c5_parameter_recovery() -> Outcome {
    const RECORDS: usize = 50_000;
    let rel = |est: f64, truth: f64| (est - truth).abs() / truth;
    let opts = FitOptions::default();
    let uni_cases = [
        UniMixtureParams::single(0.9, 0.3),
        UniMixtureParams {
            components: vec![UniComponent { alpha: 0.6, p: 0.9, lambda: 0.2 }, UniComponent { alpha: 0.4, p: 0.9, lambda: 2.0 }],
            shared_p: true,
        },
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (ci, truth) in uni_cases.iter().enumerate() {
        let g = truth.components.len();
        let m = truth.to_mixture();
        let (mut ok_p, mut ok_l) = (0, 0);
        for seed in 0..20u64 {
            let mut r = stream(seed, Stream::Synthetic, 5, ci as u64);
            let hist = CountHistogram::from_counts((0..RECORDS).map(|_| sample_vector(&m, &mut r)[0]));
            let f = fit_uni(&hist, g, true, 10, &opts).unwrap();
            ok_p += (rel(f.params.p_bar(), truth.p_bar()) < 0.02) as usize;
            ok_l += (rel(f.params.lambda_bar(), truth.lambda_bar()) < 0.02) as usize;
        }
        pass &= ok_p >= 18 && ok_l >= 18;
        parts.push(format!("univariate G={g}: p_bar {ok_p}/20, lambda_bar {ok_l}/20"));
    }
    let rules = RuleIndexSet::binary3();
    let design = build_design(&rules, 2).unwrap();
    let coef = LogLinearCoef { phi: 0.9, u: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0] };
    let truth = MixtureParams {
        components: vec![Component {
            alpha: 1.0,
            p: design.design.probs(&coef),
            lambda: vec![0.02, 0.01, 0.01, 0.005, 0.01, 0.005, 0.003],
        }],
        loglinear: Some(coef),
    };
    let constraint = Constraint::LogLinear { design: design.design.clone() };
    let mut ok_phi = 0;
    for seed in 0..20u64 {
        let mut r = stream(seed, Stream::Synthetic, 5, 9);
        let vectors: Vec<Vec<u32>> = (0..RECORDS).map(|_| sample_vector(&truth, &mut r)).collect();
        let table = CountTable::new(7, 10, vectors.iter().map(Vec::as_slice)).unwrap();
        let lam = per_rule_lambda(&vectors, 7, 5, 10, &opts).unwrap();
        let start = init_appendix_c(&table, &lam, &design, 1, opts.nu).unwrap();
        let f = fit(&table, &constraint, &start.params, &opts).unwrap();
        ok_phi += (rel(f.params.loglinear.as_ref().unwrap().phi, 0.9) < 0.02) as usize;
    }
    pass &= ok_phi >= 18;
    parts.push(format!("multivariate log-linear G=1: phi {ok_phi}/20"));
    Outcome { pass, detail: format!("{} (need >= 18/20 within 2%)", parts.join("; ")) }
}

fn c6_linkage_accuracy() -> Outcome {
    let cfg = ScenarioConfig::full(1, 20_240_901).unwrap();
    let model = cfg.model().unwrap();
    let t = Instant::now();
    let lr = link_replication(&cfg, &model, 0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (r1, p1) = (lr.rule1.recall.unwrap(), lr.rule1.precision.unwrap());
    let (r2, p2) = (lr.rule2.recall.unwrap(), lr.rule2.precision.unwrap());
    let pass = r1 == 1.0 && (p1 - 0.952).abs() <= 0.02 && format!("{p2:.3}") == "1.000" && (r2 - 0.944).abs() <= 0.02 && secs < 300.0;
    Outcome {
        pass,
        detail: format!(
            "N=100000: rule 1 recall {r1:.4} precision {p1:.4} FPR {:.1}e-9; rule 2 recall {r2:.4} precision {p2:.5}; {secs:.1}s",
            lr.rule1.fpr.unwrap() * 1e9
        ),
    }
}

fn c7_estimator_comparison() -> Outcome {
    let t = Instant::now();
    let run = |s: u8| -> MetricsTable {
        let cfg = ScenarioConfig::desk(s, 20_240_901).unwrap();
        run_experiment(&cfg, &cfg.model().unwrap()).unwrap()
    };
    let bias = |m: &MetricsTable, id: EstimatorId| m.row(id).unwrap().relative_bias_pct;
    let mse = |m: &MetricsTable, id: EstimatorId| m.row(id).unwrap().mse;
    use EstimatorId::*;
    let s1 = run(1);
    let s2 = run(2);
    let s4 = run(4);
    let checks = [
        ("s1 |UN| < 0.5%", bias(&s1, UN).abs() < 0.5),
        ("s1 |MN main| < 0.5%", bias(&s1, MnMain).abs() < 0.5),
        ("s1 |MN int| < 0.5%", bias(&s1, MnInteractions).abs() < 0.5),
        ("s1 naive < -3%", bias(&s1, Naive) < -3.0),
        ("s1 UN MSE < naive, DF, DT", mse(&s1, UN) < mse(&s1, Naive) && mse(&s1, UN) < mse(&s1, DF) && mse(&s1, UN) < mse(&s1, DT)),
        ("s2 |MN int| < 0.5%", bias(&s2, MnInteractions).abs() < 0.5),
        ("s2 R < -3%", bias(&s2, R) < -3.0),
        (
            "s2 |UN| < |MN main| < |R|",
            bias(&s2, UN).abs() < bias(&s2, MnMain).abs() && bias(&s2, MnMain).abs() < bias(&s2, R).abs(),
        ),
        ("s4 UN < 0 and |UN| > |MN int|", bias(&s4, UN) < 0.0 && bias(&s4, UN).abs() > bias(&s4, MnInteractions).abs()),
    ];
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let summary = |m: &MetricsTable| {
        m.rows.iter().map(|r| format!("{}={:.3}", r.estimator.label(), r.relative_bias_pct)).collect::<Vec<_>>().join(" ")
    };
    Outcome {
        pass: failed.is_empty() && secs < 1800.0,
        detail: format!(
            "N=20000 R=30, rel bias %: [s1] {} [s2] {} [s4] {}; {secs:.0}s; failed: {}",
            summary(&s1),
            summary(&s2),
            summary(&s4),
            if failed.is_empty() { "none".to_string() } else { failed.join(", ") }
        ),
    }
}

fn c8_consistency_trend() -> Outcome {
    let un_error = |n: usize, seed: u64| {
        let mut cfg = ScenarioConfig::new(1, n, 1, seed).unwrap();
        cfg.year_group = 1;
        cfg.estimators = vec![EstimatorId::UN];
        let r = run_replication(&cfg, &cfg.model().unwrap(), 0).unwrap();
        (r.estimate(EstimatorId::UN).unwrap() - cfg.pi_a).abs()
    };
    let wins = (0..20u64).filter(|s| un_error(50_000, 1000 + s) <= un_error(5_000, 1000 + s)).count();
    Outcome { pass: wins >= 16, detail: format!("|UN - 0.9| at N=50000 <= at N=5000 in {wins}/20 paired seeds (need 16)") }
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "scenario = 3\nseed = 99\nn_population = 4000\nreplications = 2\ng_max = 2\nclerical_m = 300\n[report]\nformats = [\"csv\", \"markdown\", \"json\"]\n",
    )
    .unwrap();
    let commands = ["simulate", "link", "fit-uni", "fit-multi", "baselines", "experiment", "report"];
    let mut failures = Vec::new();
    for out in ["a", "b"] {
        for cmd in commands {
            let status = Command::new(env!("CARGO_BIN_EXE_linkerr"))
                .current_dir(d)
                .args(["--config", "run.toml", "--out", out, cmd])
                .status()
                .unwrap();
            if !status.success() {
                failures.push(format!("{cmd} exited with {status}"));
            }
        }
    }
    let mut names: Vec<String> = fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let same = |name: &str| fs::read(d.join("a").join(name)).ok() == fs::read(d.join("b").join(name)).ok();
    failures.extend(names.iter().filter(|n| !same(n)).map(|n| format!("{n} differs")));
    Outcome {
        pass: failures.is_empty() && names.len() >= 13,
        detail: format!("{} commands x 2 runs, {} artifacts compared byte for byte; {}", commands.len(), names.len(), if failures.is_empty() { "identical".into() } else { failures.join(", ") }),
    }
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("PMF normalization", c1_pmf_normalization),
        ("sampling oracle", c2_sampling_oracle),
        ("marginalization", c3_marginalization),
        ("log-linear round trip", c4_loglinear_round_trip),
        ("parameter recovery", c5_parameter_recovery),
        ("linkage accuracy", c6_linkage_accuracy),
        ("estimator comparison", c7_estimator_comparison),
        ("consistency trend", c8_consistency_trend),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {} {name}", i + 1);
        if filter.as_ref().is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        failed += !o.pass as usize;
        println!("{label}: {} [{:.1}s] {}", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
