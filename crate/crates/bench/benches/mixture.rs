use criterion::{criterion_group, criterion_main, Criterion};
use linkerr::mixture::{log_likelihood, sample_vector, Component, CountTable, FitOptions, LogLinearCoef, MixtureParams};
use linkerr::neighbor_multi::{build_design, fit_loglinear_coverage, RuleIndexSet};
use linkerr::neighbor_uni::{fit_uni, CountHistogram, UniComponent, UniMixtureParams};
use linkerr::rng::{stream, Stream};

fn multi_truth() -> (MixtureParams, Vec<Vec<u32>>) {
    let design = build_design(&RuleIndexSet::binary3(), 2).unwrap();
    let coef = LogLinearCoef { phi: 0.9, u: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0] };
    let p = design.design.probs(&coef);
    let params = MixtureParams {
        components: vec![Component { alpha: 1.0, p, lambda: vec![0.02, 0.01, 0.01, 0.005, 0.01, 0.005, 0.003] }],
        loglinear: Some(coef),
    };
    let mut rng = stream(1, Stream::Synthetic, 0, 0);
    let vectors = (0..20_000).map(|_| sample_vector(&params, &mut rng)).collect();
    (params, vectors)
}

fn bench(c: &mut Criterion) {
    let (params, vectors) = multi_truth();
    let table = CountTable::new(7, 10, vectors.iter().map(Vec::as_slice)).unwrap();
    c.bench_function("loglik/multi 20k records", |b| b.iter(|| log_likelihood(&table, &params)));

    let uni = UniMixtureParams {
        components: vec![UniComponent { alpha: 0.6, p: 0.9, lambda: 0.2 }, UniComponent { alpha: 0.4, p: 0.9, lambda: 2.0 }],
        shared_p: true,
    }
    .to_mixture();
    let mut rng = stream(2, Stream::Synthetic, 0, 0);
    let hist = CountHistogram::from_counts((0..20_000).map(|_| sample_vector(&uni, &mut rng)[0]));
    let opts = FitOptions::default();
    c.bench_function("fit_uni/G=2 shared p", |b| b.iter(|| fit_uni(&hist, 2, true, 10, &opts).unwrap()));

    let mut group = c.benchmark_group("fit_multi");
    group.sample_size(10);
    group.bench_function("loglinear d=2 G<=2", |b| {
        b.iter(|| fit_loglinear_coverage(&vectors, &RuleIndexSet::binary3(), 2, 2, 10, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
