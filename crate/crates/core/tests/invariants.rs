use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hybseq::baseline::{auroc, Confusion};
use hybseq::features::extract;
use hybseq::libdesign::{brute_lcs, candidate_pairs};
use hybseq::thermo::{equilibrate, pair_yield, single_tube, ThermoModel, TubeSpec};
use hybseq::DnaSeq;

fn dna(len: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = DnaSeq> {
    proptest::collection::vec(prop::sample::select(vec!['A', 'C', 'G', 'T']), len)
        .prop_map(|v| DnaSeq::parse(&v.into_iter().collect::<String>()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn yield_is_bounded_and_symmetric(a in dna(8..=26), b in dna(8..=26), t in 37.0f64..62.0) {
        let m = ThermoModel::default();
        let y = pair_yield(&a, &b, t, &m).unwrap();
        prop_assert!((0.0..=1.0).contains(&y));
        prop_assert_eq!(y, pair_yield(&b, &a, t, &m).unwrap());
    }

    #[test]
    fn extending_a_perfect_match_never_lowers_yield(core in dna(10..=20), ext in dna(1..=4), t in 37.0f64..62.0) {
        let m = ThermoModel::default();
        let short = core.clone();
        let long = DnaSeq::parse(&format!("{core}{ext}")).unwrap();
        let y_short = pair_yield(&short, &short.reverse_complement(), t, &m).unwrap();
        let y_long = pair_yield(&long, &long.reverse_complement(), t, &m).unwrap();
        prop_assert!(y_long >= y_short - 1e-12, "{y_short} -> {y_long}");
    }

    #[test]
    fn one_constant_matches_closed_form(a0 in -8.0f64..-5.0, b0 in -8.0f64..-5.0, k in 2.0f64..12.0) {
        let (a0, b0, k) = (10f64.powf(a0), 10f64.powf(b0), 10f64.powf(k));
        let spec = TubeSpec { a0, b0, temp_c: 37.0, k_aa: 0.0, k_bb: 0.0, k_ab: k };
        let st = equilibrate(&spec).unwrap();
        // K·(a0 − x)(b0 − x) = x, smaller root
        let p = a0 + b0 + 1.0 / k;
        let x = 2.0 * a0 * b0 / (p + (p * p - 4.0 * a0 * b0).sqrt());
        prop_assert!((st.c_ab - x).abs() <= 1e-12 * x.max(1e-30) + 1e-24);
    }

    #[test]
    fn homodimer_tube_conserves_mass(k in -2.0f64..14.0) {
        let (a, c) = single_tube(1e-6, 10f64.powf(k));
        prop_assert!(((a + 2.0 * c) - 1e-6).abs() <= 1e-15);
    }

    #[test]
    fn feature_ranges_and_mass_balance(a in dna(18..=26), b in dna(18..=26)) {
        let m = ThermoModel::default();
        let f = extract(&a, &b, &m, 57.0).unwrap().0;
        prop_assert!((0.0..=1.0).contains(&f[1]) && (0.0..=1.0).contains(&f[2]));
        prop_assert!(f[5..].iter().all(|&v| v >= 0.0));
        prop_assert!((f[5] + 2.0 * f[7] - 1.0).abs() <= 1e-6);
        prop_assert!((f[6] + 2.0 * f[8] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn auroc_ignores_monotone_transforms(
        scores in proptest::collection::vec(-5.0f64..5.0, 4..60),
        seed in 0u64..1000,
    ) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (i as u64 * 7 + seed) % 3 == 0).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - auroc(&squashed, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_and_mcc_range(pred in proptest::collection::vec(any::<bool>(), 1..100), seed in 0u64..100) {
        let truth: Vec<bool> = pred.iter().enumerate().map(|(i, &p)| p ^ ((i as u64 + seed) % 4 == 0)).collect();
        let c = Confusion::from_predictions(&pred, &truth).unwrap();
        prop_assert_eq!(c.total(), pred.len() as u64);
        prop_assert!((-1.0..=1.0).contains(&c.mcc()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kmer_filter_is_exact(seqs in proptest::collection::vec(dna(6..=14), 2..40), k in 4usize..=6) {
        let got: BTreeSet<(u32, u32)> = candidate_pairs(&seqs, k).unwrap().pairs.into_iter().collect();
        let mut want = BTreeSet::new();
        for j in 0..seqs.len() {
            let rc = seqs[j].reverse_complement();
            for i in 0..j {
                if brute_lcs(&seqs[i], &rc) >= k {
                    want.insert((i as u32, j as u32));
                }
            }
        }
        prop_assert_eq!(got, want);
    }
}

#[test]
fn random_library_sequences_avoid_long_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for len in hybseq::seq::LIBRARY_LEN {
        let s = hybseq::seq::random_seq(len, &mut rng).unwrap();
        assert_eq!(s.len(), len);
        assert!(s.max_run() < 3, "{s}");
    }
}
