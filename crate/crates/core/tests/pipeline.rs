use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hybseq::dataset::{generate, label, thermo_oracle, write_csv, DatasetConfig, YieldRecord, HIGH_THRESHOLD};
use hybseq::neural::{
    build_cnn_lite, encode_pairs, predict_batch, train, Arch, Encoding, Layer, Loss, Mode, Model, Tensor, TrainConfig,
};
use hybseq::seq::DEFAULT_N_MAX;
use hybseq::thermo::ThermoModel;
use hybseq::{DnaSeq, Exec};

fn dataset(size: usize, seed: u64, exec: Exec) -> Vec<YieldRecord> {
    let m = ThermoModel::default();
    let cfg = DatasetConfig {
        target_size: size,
        seed,
        ..Default::default()
    };
    let g = generate(&cfg, &thermo_oracle(&m), exec).unwrap();
    g.records
}

fn csv_bytes(records: &[YieldRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(records, &mut out).unwrap();
    out
}

#[test]
fn generation_is_byte_identical_across_runs_and_executors() {
    let a = csv_bytes(&dataset(1500, 9, Exec::Parallel));
    let b = csv_bytes(&dataset(1500, 9, Exec::Sequential));
    assert_eq!(a, b);
    assert_ne!(a, csv_bytes(&dataset(1500, 10, Exec::Parallel)));
}

#[test]
fn labels_follow_reference_yield_and_single_edits_matter() {
    let records = dataset(10_000, 2, Exec::default());
    for r in &records {
        assert_eq!(r.label, label(r.yield_at(57.0).unwrap(), HIGH_THRESHOLD));
        assert!(r.yields.iter().all(|y| (0.0..=1.0).contains(y)));
    }
    // some partner swap by a single substitution moves the yield by > 0.3
    let mut by_first: HashMap<&DnaSeq, Vec<&YieldRecord>> = HashMap::new();
    for r in &records {
        by_first.entry(&r.s1).or_default().push(r);
    }
    let hamming1 = |a: &DnaSeq, b: &DnaSeq| {
        a.len() == b.len() && a.as_bytes().iter().zip(b.as_bytes()).filter(|(x, y)| x != y).count() == 1
    };
    let found = by_first.values().any(|group| {
        group.iter().enumerate().any(|(i, r)| {
            group[i + 1..]
                .iter()
                .any(|q| hamming1(&r.s2, &q.s2) && (r.y_ref() - q.y_ref()).abs() > 0.3)
        })
    });
    assert!(found);
}

fn toy_set(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * 4 * 6 * 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| x[i * 48..(i + 1) * 48].iter().sum::<f64>() / 48.0)
        .collect();
    (Tensor::new(vec![n, 4, 6, 2], x).unwrap(), y)
}

#[test]
fn overfitting_loss_settles_monotonically() {
    let r = &mut ChaCha8Rng::seed_from_u64(5);
    let layers = vec![
        Layer::conv2d(4, 3, 2, 8, r),
        Layer::relu(),
        Layer::batch_norm(8),
        Layer::flatten(),
        Layer::dense(32, 16, r),
        Layer::relu(),
        Layer::dense(16, 1, r),
    ];
    let mut m = Model::new(Arch::CnnLite, vec![4, 6, 2], layers, 5).unwrap();
    let (x, y) = toy_set(32, 6);
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        loss: Loss::Mse,
        patience: 1000,
        max_epochs: Some(60),
        seed: 5,
    };
    let h = train(&mut m, (&x, &y), (&x, &y), &cfg, |_| {}).unwrap();
    let losses: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-4, "{losses:?}");
    }
    assert!(losses[losses.len() - 1] < losses[0]);
}

#[test]
fn eval_forward_is_pure() {
    let mut m = build_cnn_lite(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(DnaSeq, DnaSeq)> = (0..6)
        .map(|_| {
            let a = hybseq::seq::random_seq(20, &mut rng).unwrap();
            let b = hybseq::seq::random_seq(24, &mut rng).unwrap();
            (a, b)
        })
        .collect();
    let x = encode_pairs(&pairs, DEFAULT_N_MAX, Encoding::Raw).unwrap();
    let a = m.forward(&x, Mode::Eval).unwrap();
    // a training pass moves batch-norm statistics and the dropout stream only
    m.forward(&x, Mode::Train).unwrap();
    let before = m.infer(&x).unwrap();
    assert_eq!(before, m.forward(&x, Mode::Eval).unwrap());
    assert_eq!(before, m.infer(&x).unwrap());
    assert_eq!(a.shape, before.shape);
    let seq = predict_batch(&m, &x, 4, Exec::Sequential).unwrap();
    assert_eq!(seq, predict_batch(&m, &x, 4, Exec::Parallel).unwrap());
}
