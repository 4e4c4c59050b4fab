use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybseq::bench::synthetic_pairs;
use hybseq::features::extract_batch;
use hybseq::libdesign::candidate_pairs_with;
use hybseq::neural::{build_cnn_lite, encode_pairs, predict_batch, Encoding};
use hybseq::seq::DEFAULT_N_MAX;
use hybseq::thermo::{pair_yield, ThermoModel, REFERENCE_TEMP};
use hybseq::{DnaSeq, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn oracle(c: &mut Criterion) {
    let model = ThermoModel::default();
    let pairs = synthetic_pairs(2000, 1);
    let mut g = c.benchmark_group("thermo_oracle");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exec.map(&pairs, |(x, y)| pair_yield(x, y, REFERENCE_TEMP, &model).unwrap()))
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let model = ThermoModel::default();
    let pairs = synthetic_pairs(2000, 2);
    let mut g = c.benchmark_group("features");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| extract_batch(&pairs, &model, REFERENCE_TEMP, exec).unwrap())
        });
    }
    g.finish();
}

fn kmer_filter(c: &mut Criterion) {
    let seqs: Vec<DnaSeq> = synthetic_pairs(1500, 3).into_iter().flat_map(|(a, b)| [a, b]).collect();
    let mut g = c.benchmark_group("candidate_pairs");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| candidate_pairs_with(&seqs, 5, None, exec).unwrap().len())
        });
    }
    g.finish();
}

fn cnn_lite_inference(c: &mut Criterion) {
    let model = build_cnn_lite(0).unwrap();
    let x = encode_pairs(&synthetic_pairs(1024, 4), DEFAULT_N_MAX, Encoding::Raw).unwrap();
    let mut g = c.benchmark_group("cnn_lite_predict");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| predict_batch(&model, &x, 128, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, oracle, features, kmer_filter, cnn_lite_inference);
criterion_main!(benches);
