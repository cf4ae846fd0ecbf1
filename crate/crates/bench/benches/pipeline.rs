use std::hint::black_box;

use claimcheck_bench::{sales_dataset, sales_document};
use claimcheck_core::pipeline::{prepare_claims, verify, PinSpec, LITERAL_CAP};
use claimcheck_core::{Dataset, VerifyConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn base_config() -> VerifyConfig {
    VerifyConfig {
        threads: Some(1),
        ..VerifyConfig::default()
    }
}

fn evaluation_strategies(c: &mut Criterion) {
    let dataset = Dataset::build(&sales_dataset(5_000, 7), LITERAL_CAP).unwrap();
    let doc = sales_document(8);
    let pins = PinSpec::default();
    let mut group = c.benchmark_group("verify");
    group.sample_size(10);
    for (name, merging, caching) in [
        ("merged_cached", true, true),
        ("unmerged", false, true),
        ("uncached", true, false),
    ] {
        let config = VerifyConfig {
            merging,
            caching,
            ..base_config()
        };
        group.bench_function(name, |b| {
            b.iter(|| verify(&dataset, black_box(&doc), &config, &pins, None).unwrap())
        });
    }
    group.finish();
}

fn scaling_rows(c: &mut Criterion) {
    let doc = sales_document(4);
    let config = base_config();
    let mut group = c.benchmark_group("verify_rows");
    group.sample_size(10);
    for rows in [1_000, 10_000, 50_000] {
        let dataset = Dataset::build(&sales_dataset(rows, 3), LITERAL_CAP).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(rows), &dataset, |b, d| {
            b.iter(|| verify(d, &doc, &config, &PinSpec::default(), None).unwrap())
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let dataset = Dataset::build(&sales_dataset(2_000, 11), LITERAL_CAP).unwrap();
    let doc = sales_document(32);
    let config = base_config();
    c.bench_function("retrieval_32_claims", |b| {
        b.iter(|| prepare_claims(&dataset, black_box(&doc), &config, &PinSpec::default()).unwrap())
    });
}

criterion_group!(benches, evaluation_strategies, scaling_rows, retrieval);
criterion_main!(benches);
