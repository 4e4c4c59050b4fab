//! Inference timing: one untimed warm-up pass, then a fixed number of timed
//! passes over data already in memory.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seq::{random_seq, DnaSeq, LIBRARY_LEN};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    ThermoOracle,
    Cnn,
    CnnLite,
    Mlp,
    Lda,
    Qda,
}

impl Subject {
    pub const ALL: [Subject; 6] = [
        Subject::ThermoOracle,
        Subject::Cnn,
        Subject::CnnLite,
        Subject::Mlp,
        Subject::Lda,
        Subject::Qda,
    ];
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subject::ThermoOracle => "thermo-oracle",
            Subject::Cnn => "cnn",
            Subject::CnnLite => "cnn-lite",
            Subject::Mlp => "mlp",
            Subject::Lda => "lda",
            Subject::Qda => "qda",
        })
    }
}

impl FromStr for Subject {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subject::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| format!("unknown bench subject {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub subject: String,
    pub batch: usize,
    pub n_items: usize,
    /// Wall-clock seconds per timed pass; the warm-up is not included.
    pub trials: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    /// Items per second at the mean time.
    pub throughput: f64,
}

impl BenchReport {
    pub fn from_trials(subject: &str, batch: usize, n_items: usize, trials: Vec<f64>) -> Self {
        let n = trials.len() as f64;
        let mean = trials.iter().sum::<f64>() / n;
        let std = if trials.len() > 1 {
            (trials.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            subject: subject.to_string(),
            batch,
            n_items,
            trials,
            mean,
            std,
            throughput: if mean > 0.0 {
                n_items as f64 / mean
            } else {
                f64::INFINITY
            },
        }
    }

    pub fn to_records(&self) -> String {
        let trials: Vec<String> = self.trials.iter().map(|t| format!("{t:.9}")).collect();
        format!(
            "subject={}\nbatch={}\nn_items={}\ntrials={}\nmean_s={:.9}\nstd_s={:.9}\nthroughput_per_s={:.3}\n",
            self.subject,
            self.batch,
            self.n_items,
            trials.join(","),
            self.mean,
            self.std,
            self.throughput
        )
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} n={:<8} batch={:<5} {:.4} ± {:.4} s  ({:.0} pairs/s, {} trials)",
            self.subject,
            self.n_items,
            self.batch,
            self.mean,
            self.std,
            self.throughput,
            self.trials.len()
        )
    }
}

/// Times `pass` once untimed, then `trials` times. Inputs must already be
/// loaded; only the closure body is measured.
pub fn run<E>(
    subject: &str,
    n_items: usize,
    batch: usize,
    trials: usize,
    mut pass: impl FnMut() -> Result<(), E>,
) -> Result<BenchReport, E> {
    pass()?;
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        pass()?;
        times.push(t.elapsed().as_nanos() as f64 * 1e-9);
    }
    Ok(BenchReport::from_trials(subject, batch, n_items, times))
}

/// Independent random library-length pairs for throughput runs.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<(DnaSeq, DnaSeq)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = random_seq(rng.random_range(LIBRARY_LEN), &mut rng).expect("library length");
            let b = random_seq(rng.random_range(LIBRARY_LEN), &mut rng).expect("library length");
            (a, b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_from_trials() {
        let r = BenchReport::from_trials("x", 8, 100, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.std, 1.0);
        assert_eq!(r.throughput, 50.0);
        assert!(r.to_records().contains("mean_s=2.000000000"));
    }

    #[test]
    fn warm_up_is_excluded() {
        let mut calls = 0;
        let r = run::<()>("count", 1, 1, DEFAULT_TRIALS, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, DEFAULT_TRIALS + 1);
        assert_eq!(r.trials.len(), DEFAULT_TRIALS);
        let mean = r.trials.iter().sum::<f64>() / r.trials.len() as f64;
        assert_eq!(r.mean, mean);
    }

    #[test]
    fn subject_names_round_trip() {
        for s in Subject::ALL {
            assert_eq!(s.to_string().parse::<Subject>().unwrap(), s);
        }
        assert!("nupack".parse::<Subject>().is_err());
    }

    #[test]
    fn synthetic_pairs_are_seeded() {
        let a = synthetic_pairs(50, 2);
        assert_eq!(a, synthetic_pairs(50, 2));
        assert!(a
            .iter()
            .all(|(x, y)| LIBRARY_LEN.contains(&x.len()) && LIBRARY_LEN.contains(&y.len())));
    }
}
