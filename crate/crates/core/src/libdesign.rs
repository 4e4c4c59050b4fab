//! Orthogonal-library screening.
//!
//! Two strands can only hybridise if one shares a stretch of sequence with
//! the other's reverse complement. [`KmerIndex`] finds every pair sharing at
//! least one exact k-mer that way; the surviving candidates are scored by a
//! pluggable [`YieldPredictor`] and [`greedy_prune`] drops strands until no
//! conflict remains.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use thiserror::Error;

use crate::align::{annealing_score, AlignParams};
use crate::exec::Exec;
use crate::features::{extract, FeatureError, FeatureVector};
use crate::neural::{encode_pairs, predict_batch, Arch, Model, NeuralError, Tensor};
use crate::seq::{DnaSeq, DEFAULT_N_MAX};
use crate::thermo::{pair_yield, ThermoError, ThermoModel, REFERENCE_TEMP};

pub const DEFAULT_K: usize = 5;
pub const MIN_K: usize = 4;
/// k-mers are packed two bits per base into a `u64`.
pub const MAX_K: usize = 32;
pub const DEFAULT_THRESHOLD: f64 = 0.2;
/// Pairs handed to the predictor at once by [`conflict_scan`].
pub const SCAN_CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum LibError {
    #[error("k = {k} exceeds the length {len} of sequence {id}")]
    KTooLarge { k: usize, len: usize, id: usize },
    #[error("k = {0} is outside {MIN_K}..={MAX_K}")]
    InvalidK(usize),
    #[error("predictor: {0}")]
    Predictor(String),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Longest common contiguous substring, by dynamic programming.
pub fn brute_lcs(a: &DnaSeq, b: &DnaSeq) -> usize {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn code(b: u8) -> u64 {
    match b {
        b'A' => 0,
        b'C' => 1,
        b'G' => 2,
        _ => 3,
    }
}

/// Packed k-mers of `s`, left to right.
fn kmers(s: &[u8], k: usize) -> impl Iterator<Item = u64> + '_ {
    let mask = if k == 32 { u64::MAX } else { (1u64 << (2 * k)) - 1 };
    let mut h = 0u64;
    s.iter().enumerate().filter_map(move |(i, &b)| {
        h = ((h << 2) | code(b)) & mask;
        (i + 1 >= k).then_some(h)
    })
}

fn check_k(k: usize, seqs: &[DnaSeq]) -> Result<(), LibError> {
    if !(MIN_K..=MAX_K).contains(&k) {
        return Err(LibError::InvalidK(k));
    }
    if let Some((id, s)) = seqs.iter().enumerate().find(|(_, s)| s.len() < k) {
        return Err(LibError::KTooLarge { k, len: s.len(), id });
    }
    Ok(())
}

/// Postings from k-mer to the IDs of the sequences containing it. Each
/// (k-mer, ID) pair is stored once.
#[derive(Debug, Clone)]
pub struct KmerIndex {
    k: usize,
    postings: HashMap<u64, Vec<u32>>,
}

impl KmerIndex {
    pub fn build(seqs: &[DnaSeq], k: usize) -> Result<Self, LibError> {
        check_k(k, seqs)?;
        let mut postings: HashMap<u64, Vec<u32>> = HashMap::new();
        for (id, s) in seqs.iter().enumerate() {
            for km in kmers(s.as_bytes(), k) {
                let list = postings.entry(km).or_default();
                // IDs arrive in increasing order, so a repeat can only be last
                if list.last() != Some(&(id as u32)) {
                    list.push(id as u32);
                }
            }
        }
        Ok(Self { k, postings })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn distinct_kmers(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, kmer: &str) -> &[u32] {
        if kmer.len() != self.k {
            return &[];
        }
        let key = kmers(kmer.as_bytes(), self.k).next().unwrap_or(0);
        self.postings.get(&key).map_or(&[], Vec::as_slice)
    }

    /// Distinct IDs sharing a k-mer with `query`, in first-hit order.
    /// `seen` is scratch space with one slot per indexed sequence.
    fn probe(&self, query: &[u8], stamp: u32, seen: &mut [u32], out: &mut Vec<u32>) {
        out.clear();
        for km in kmers(query, self.k) {
            if let Some(ids) = self.postings.get(&km) {
                for &i in ids {
                    if seen[i as usize] != stamp {
                        seen[i as usize] = stamp;
                        out.push(i);
                    }
                }
            }
        }
    }
}

/// How the raw hit count shrank to the final candidate set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    /// Distinct ordered (i, j) hits.
    pub raw_hits: u64,
    pub self_pairs: u64,
    pub symmetric_duplicates: u64,
    /// Candidates rejected by the optional alignment-score stage.
    pub score_filtered: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    /// Unordered pairs as `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(u32, u32)>,
    pub provenance: Provenance,
    pub n_seqs: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Share of all unordered pairs that survived.
    pub fn fraction(&self) -> f64 {
        candidate_fraction(self.pairs.len() as u64, self.n_seqs)
    }
}

pub fn candidate_fraction(candidates: u64, n_seqs: usize) -> f64 {
    let all = n_seqs as f64 * (n_seqs as f64 - 1.0) / 2.0;
    if all > 0.0 {
        candidates as f64 / all
    } else {
        0.0
    }
}

/// Optional second stage: keep a candidate only if its annealing score
/// reaches `min_score`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreFilter {
    pub min_score: i32,
    pub params: AlignParams,
}

/// Calls `emit(i, j)` for every `i < j` with a common k-mer between `s_i`
/// and `rc(s_j)`, grouped by `j` in increasing order. Memory stays at the
/// index plus one query's hits per worker.
pub fn for_each_candidate(
    seqs: &[DnaSeq],
    k: usize,
    filter: Option<&ScoreFilter>,
    exec: Exec,
    mut emit: impl FnMut(u32, u32) -> Result<(), LibError>,
) -> Result<Provenance, LibError> {
    let index = KmerIndex::build(seqs, k)?;
    let n = seqs.len();
    let mut prov = Provenance::default();
    const BLOCK: usize = 1024;
    for lo in (0..n).step_by(BLOCK) {
        let hi = (lo + BLOCK).min(n);
        let per_worker = 64.max((hi - lo).div_ceil(64));
        let chunks = exec.map_range((hi - lo).div_ceil(per_worker), |c| {
            let mut seen = vec![u32::MAX; n];
            let mut hits = Vec::new();
            let mut out: Vec<(u32, Vec<u32>)> = Vec::new();
            let mut local = Provenance::default();
            let start = lo + c * per_worker;
            for j in start..(start + per_worker).min(hi) {
                let rc = seqs[j].reverse_complement();
                index.probe(rc.as_bytes(), j as u32, &mut seen, &mut hits);
                local.raw_hits += hits.len() as u64;
                let mut keep = Vec::new();
                for &i in &hits {
                    match (i as usize).cmp(&j) {
                        std::cmp::Ordering::Equal => local.self_pairs += 1,
                        std::cmp::Ordering::Greater => local.symmetric_duplicates += 1,
                        std::cmp::Ordering::Less => match filter {
                            Some(f) if annealing_score(&seqs[i as usize], &seqs[j], &f.params) < f.min_score => {
                                local.score_filtered += 1
                            }
                            _ => keep.push(i),
                        },
                    }
                }
                keep.sort_unstable();
                out.push((j as u32, keep));
            }
            (out, local)
        });
        for (out, local) in chunks {
            prov.raw_hits += local.raw_hits;
            prov.self_pairs += local.self_pairs;
            prov.symmetric_duplicates += local.symmetric_duplicates;
            prov.score_filtered += local.score_filtered;
            for (j, is) in out {
                for i in is {
                    emit(i, j)?;
                }
            }
        }
    }
    Ok(prov)
}

/// Every unordered pair whose members share a k-mer across the reverse
/// complement, held in memory.
pub fn candidate_pairs(seqs: &[DnaSeq], k: usize) -> Result<CandidateSet, LibError> {
    candidate_pairs_with(seqs, k, None, Exec::default())
}

pub fn candidate_pairs_with(
    seqs: &[DnaSeq],
    k: usize,
    filter: Option<&ScoreFilter>,
    exec: Exec,
) -> Result<CandidateSet, LibError> {
    let mut pairs = Vec::new();
    let provenance = for_each_candidate(seqs, k, filter, exec, |i, j| {
        pairs.push((i, j));
        Ok(())
    })?;
    pairs.sort_unstable();
    Ok(CandidateSet {
        pairs,
        provenance,
        n_seqs: seqs.len(),
    })
}

/// Predicted yields for a batch of pairs, one per pair in order.
pub trait YieldPredictor: Sync {
    fn predict(&self, pairs: &[(DnaSeq, DnaSeq)]) -> Result<Vec<f64>, LibError>;
}

impl<F> YieldPredictor for F
where
    F: Fn(&[(DnaSeq, DnaSeq)]) -> Result<Vec<f64>, LibError> + Sync,
{
    fn predict(&self, pairs: &[(DnaSeq, DnaSeq)]) -> Result<Vec<f64>, LibError> {
        self(pairs)
    }
}

/// The equilibrium oracle at one temperature.
#[derive(Debug, Clone)]
pub struct ThermoPredictor {
    pub model: ThermoModel,
    pub temp_c: f64,
    pub exec: Exec,
}

impl ThermoPredictor {
    pub fn new(model: ThermoModel) -> Self {
        Self {
            model,
            temp_c: REFERENCE_TEMP,
            exec: Exec::default(),
        }
    }
}

impl YieldPredictor for ThermoPredictor {
    fn predict(&self, pairs: &[(DnaSeq, DnaSeq)]) -> Result<Vec<f64>, LibError> {
        Ok(self
            .exec
            .try_map(pairs, |(a, b)| pair_yield(a, b, self.temp_c, &self.model))?)
    }
}

/// Keys under which an MLP checkpoint carries its input pipeline.
pub const MLP_COLUMNS_KEY: &str = "features.columns";
pub const MLP_MEANS_KEY: &str = "features.means";
pub const MLP_STDS_KEY: &str = "features.stds";

/// A trained network. Sequence models encode pairs directly; the MLP
/// rebuilds its feature vector with the stored column mask and scaling.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub model: Model,
    pub thermo: ThermoModel,
    pub batch: usize,
    pub exec: Exec,
}

impl ModelPredictor {
    pub fn new(model: Model, thermo: ThermoModel) -> Self {
        Self {
            model,
            thermo,
            batch: 512,
            exec: Exec::default(),
        }
    }

    /// The network input for `pairs`.
    pub fn inputs(&self, pairs: &[(DnaSeq, DnaSeq)]) -> Result<Tensor, LibError> {
        if self.model.arch != Arch::Mlp {
            return Ok(encode_pairs(pairs, DEFAULT_N_MAX, self.model.encoding)?);
        }
        let extra = |k: &str| {
            self.model
                .extras
                .get(k)
                .ok_or_else(|| LibError::Predictor(format!("MLP checkpoint lacks `{k}`")))
        };
        let cols: Vec<usize> = extra(MLP_COLUMNS_KEY)?.iter().map(|&c| c as usize).collect();
        let (means, stds) = (extra(MLP_MEANS_KEY)?, extra(MLP_STDS_KEY)?);
        let feats: Vec<FeatureVector> = self
            .exec
            .try_map(pairs, |(a, b)| extract(a, b, &self.thermo, REFERENCE_TEMP))?;
        let mut data = Vec::with_capacity(pairs.len() * cols.len());
        for f in &feats {
            for (j, &c) in cols.iter().enumerate() {
                data.push((f.0[c] - means[j]) / stds[j]);
            }
        }
        Ok(Tensor::new(vec![pairs.len(), cols.len()], data)?)
    }
}

impl YieldPredictor for ModelPredictor {
    fn predict(&self, pairs: &[(DnaSeq, DnaSeq)]) -> Result<Vec<f64>, LibError> {
        let x = self.inputs(pairs)?;
        let mut y = predict_batch(&self.model, &x, self.batch, self.exec)?;
        if self.model.arch != Arch::Mlp && self.model.both_orders() {
            let swapped: Vec<(DnaSeq, DnaSeq)> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
            let x = self.inputs(&swapped)?;
            for (v, w) in y.iter_mut().zip(predict_batch(&self.model, &x, self.batch, self.exec)?) {
                *v = 0.5 * (*v + w);
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflict {
    pub id1: u32,
    pub id2: u32,
    pub yield_: f64,
}

/// Push-style scoring: candidates are buffered into chunks of
/// [`SCAN_CHUNK`] and only pairs at or above the threshold are kept.
pub struct ConflictScanner<'a> {
    seqs: &'a [DnaSeq],
    predictor: &'a dyn YieldPredictor,
    threshold: f64,
    buf: Vec<(u32, u32)>,
    out: Vec<Conflict>,
    scanned: u64,
}

impl<'a> ConflictScanner<'a> {
    pub fn new(seqs: &'a [DnaSeq], predictor: &'a dyn YieldPredictor, threshold: f64) -> Self {
        Self {
            seqs,
            predictor,
            threshold,
            buf: Vec::with_capacity(SCAN_CHUNK),
            out: Vec::new(),
            scanned: 0,
        }
    }

    pub fn push(&mut self, i: u32, j: u32) -> Result<(), LibError> {
        self.buf.push((i, j));
        if self.buf.len() == SCAN_CHUNK {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), LibError> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let pairs: Vec<(DnaSeq, DnaSeq)> = self
            .buf
            .iter()
            .map(|&(i, j)| (self.seqs[i as usize].clone(), self.seqs[j as usize].clone()))
            .collect();
        let ys = self.predictor.predict(&pairs)?;
        if ys.len() != pairs.len() {
            return Err(LibError::Predictor(format!(
                "{} yields for {} pairs",
                ys.len(),
                pairs.len()
            )));
        }
        for (&(id1, id2), y) in self.buf.iter().zip(ys) {
            if y >= self.threshold {
                self.out.push(Conflict { id1, id2, yield_: y });
            }
        }
        self.scanned += self.buf.len() as u64;
        self.buf.clear();
        Ok(())
    }

    /// Conflicts sorted by descending yield, then by IDs, and the number
    /// of pairs scored.
    pub fn finish(mut self) -> Result<(Vec<Conflict>, u64), LibError> {
        self.flush()?;
        sort_conflicts(&mut self.out);
        Ok((self.out, self.scanned))
    }
}

pub fn conflict_scan<I>(
    seqs: &[DnaSeq],
    candidates: I,
    predictor: &dyn YieldPredictor,
    threshold: f64,
) -> Result<Vec<Conflict>, LibError>
where
    I: IntoIterator<Item = (u32, u32)>,
{
    let mut sc = ConflictScanner::new(seqs, predictor, threshold);
    for (i, j) in candidates {
        sc.push(i, j)?;
    }
    Ok(sc.finish()?.0)
}

/// Outcome of a full library screen.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    pub conflicts: Vec<Conflict>,
    pub provenance: Provenance,
    pub candidates: u64,
    pub n_seqs: usize,
}

impl ScreenReport {
    pub fn candidate_fraction(&self) -> f64 {
        candidate_fraction(self.candidates, self.n_seqs)
    }
}

/// k-mer filter and conflict scan in one streaming pass; candidates are
/// never held in memory all at once.
pub fn screen_library(
    seqs: &[DnaSeq],
    k: usize,
    filter: Option<&ScoreFilter>,
    predictor: &dyn YieldPredictor,
    threshold: f64,
    exec: Exec,
) -> Result<ScreenReport, LibError> {
    let mut sc = ConflictScanner::new(seqs, predictor, threshold);
    let provenance = for_each_candidate(seqs, k, filter, exec, |i, j| sc.push(i, j))?;
    let (conflicts, candidates) = sc.finish()?;
    Ok(ScreenReport {
        conflicts,
        provenance,
        candidates,
        n_seqs: seqs.len(),
    })
}

fn sort_conflicts(c: &mut [Conflict]) {
    c.sort_by(|a, b| {
        b.yield_
            .total_cmp(&a.yield_)
            .then(a.id1.cmp(&b.id1))
            .then(a.id2.cmp(&b.id2))
    });
}

pub fn write_conflicts<W: Write>(conflicts: &[Conflict], w: W) -> Result<(), LibError> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| LibError::Io(e.into());
    wtr.write_record(["id1", "id2", "yield"]).map_err(io)?;
    for c in conflicts {
        wtr.write_record([c.id1.to_string(), c.id2.to_string(), format!("{:.6}", c.yield_)])
            .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Removes the strand in the most remaining conflicts (lowest ID on ties)
/// until none are left. Returns the kept IDs in increasing order.
pub fn greedy_prune(n_seqs: usize, conflicts: &[Conflict]) -> Vec<u32> {
    let mut alive = vec![true; n_seqs];
    let mut edges: Vec<(u32, u32)> = conflicts.iter().map(|c| (c.id1, c.id2)).collect();
    loop {
        let mut degree: BTreeMap<u32, usize> = BTreeMap::new();
        for &(a, b) in &edges {
            *degree.entry(a).or_default() += 1;
            *degree.entry(b).or_default() += 1;
        }
        let Some((&victim, _)) = degree.iter().max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0))) else {
            break;
        };
        alive[victim as usize] = false;
        edges.retain(|&(a, b)| a != victim && b != victim);
    }
    (0..n_seqs as u32).filter(|&i| alive[i as usize]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::random_seq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(x: &str) -> DnaSeq {
        DnaSeq::parse(x).unwrap()
    }

    fn random_lib(n: usize, len: usize, seed: u64) -> Vec<DnaSeq> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_seq(len, &mut rng).unwrap()).collect()
    }

    #[test]
    fn both_orders_model_is_symmetric() {
        let lib = random_lib(8, 22, 12);
        let pairs: Vec<(DnaSeq, DnaSeq)> = lib.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
        let swapped: Vec<(DnaSeq, DnaSeq)> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        let mut model = crate::neural::build_cnn_lite(4).unwrap();
        // lift the untrained output off the clamp at zero
        if let Some(crate::neural::Layer::Dense(d)) = model.layers.last_mut() {
            d.bias.value[0] += 0.5;
        }
        let mut p = ModelPredictor::new(model, ThermoModel::default());
        assert_ne!(p.predict(&pairs).unwrap(), p.predict(&swapped).unwrap());
        p.model.set_both_orders(true);
        assert_eq!(p.predict(&pairs).unwrap(), p.predict(&swapped).unwrap());
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(brute_lcs(&s("ACGTT"), &s("CGT")), 3);
        let a = s("ACGTACGTTGCAAGCTTGCA");
        assert_eq!(brute_lcs(&a, &a), 20);
        assert_eq!(brute_lcs(&s("AAAAAAAA"), &s("CCCCCCCC")), 0);
    }

    #[test]
    fn index_stores_each_id_once_per_kmer() {
        let seqs = vec![s("AAAAAAAAAAAAAAAAAA"), s("CAAAAACCCCCCCCCCCC")];
        let idx = KmerIndex::build(&seqs, 5).unwrap();
        assert_eq!(idx.postings("AAAAA"), &[0, 1]);
        assert_eq!(idx.postings("CCCCC"), &[1]);
        assert!(idx.postings("GGGGG").is_empty());
    }

    #[test]
    fn rc_pair_is_found() {
        let a = s("GAATACTGTCAGTGAGAGGATCTGCC");
        let set = candidate_pairs(&[a.clone(), a.reverse_complement()], 5).unwrap();
        assert!(set.pairs.contains(&(0, 1)));
    }

    #[test]
    fn k_checks() {
        let seqs = vec![s("ACGTACGTACGTACGTAC"), s("ACGTA")];
        assert!(matches!(
            candidate_pairs(&seqs, 6),
            Err(LibError::KTooLarge { id: 1, .. })
        ));
        assert!(matches!(candidate_pairs(&seqs, 3), Err(LibError::InvalidK(3))));
    }

    #[test]
    fn matches_brute_force_on_500_sequences() {
        let seqs = random_lib(500, 20, 3);
        let set = candidate_pairs(&seqs, 5).unwrap();
        let mut want = Vec::new();
        for j in 0..seqs.len() {
            let rc = seqs[j].reverse_complement();
            for i in 0..j {
                if brute_lcs(&seqs[i], &rc) >= 5 {
                    want.push((i as u32, j as u32));
                }
            }
        }
        want.sort_unstable();
        assert_eq!(set.pairs, want);
        let p = set.provenance;
        assert_eq!(p.raw_hits, p.self_pairs + 2 * set.len() as u64);
        assert_eq!(p.symmetric_duplicates, set.len() as u64);
        assert!(set.fraction() > 0.0 && set.fraction() < 1.0);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let seqs = random_lib(300, 22, 4);
        let a = candidate_pairs_with(&seqs, 6, None, Exec::Sequential).unwrap();
        let b = candidate_pairs_with(&seqs, 6, None, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn score_filter_is_a_subset() {
        let seqs = random_lib(200, 20, 5);
        let all = candidate_pairs(&seqs, 5).unwrap();
        let f = ScoreFilter {
            min_score: 40,
            params: AlignParams::default(),
        };
        let some = candidate_pairs_with(&seqs, 5, Some(&f), Exec::default()).unwrap();
        assert!(some.len() < all.len());
        assert!(some.pairs.iter().all(|p| all.pairs.binary_search(p).is_ok()));
        assert_eq!(some.len() as u64 + some.provenance.score_filtered, all.len() as u64);
    }

    #[test]
    fn planted_pair_leads_the_scan() {
        let mut seqs = random_lib(60, 20, 6);
        seqs[41] = seqs[7].reverse_complement();
        let set = candidate_pairs(&seqs, 5).unwrap();
        let oracle = ThermoPredictor::new(ThermoModel::default());
        let c = conflict_scan(&seqs, set.pairs.iter().copied(), &oracle, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((c[0].id1, c[0].id2), (7, 41));
        assert!(c[0].yield_ > 0.99);
        assert!(c.windows(2).all(|w| w[0].yield_ >= w[1].yield_));
        assert!(conflict_scan(&seqs, set.pairs.iter().copied(), &oracle, 1.1)
            .unwrap()
            .is_empty());
        assert!(conflict_scan(&seqs, std::iter::empty(), &oracle, 0.2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn screening_matches_two_stage_scan() {
        let mut seqs = random_lib(80, 20, 8);
        seqs[3] = seqs[50].reverse_complement();
        let oracle = ThermoPredictor::new(ThermoModel::default());
        let set = candidate_pairs(&seqs, 5).unwrap();
        let two = conflict_scan(&seqs, set.pairs.iter().copied(), &oracle, 0.2).unwrap();
        let one = screen_library(&seqs, 5, None, &oracle, 0.2, Exec::default()).unwrap();
        assert_eq!(one.conflicts, two);
        assert_eq!(one.candidates, set.len() as u64);
        assert_eq!(one.provenance, set.provenance);
        let kept = greedy_prune(seqs.len(), &one.conflicts);
        let sub: Vec<DnaSeq> = kept.iter().map(|&i| seqs[i as usize].clone()).collect();
        assert!(screen_library(&sub, 5, None, &oracle, 0.2, Exec::default())
            .unwrap()
            .conflicts
            .is_empty());
    }

    #[test]
    fn pruning() {
        assert_eq!(greedy_prune(3, &[]), vec![0, 1, 2]);
        let c = |a, b| Conflict {
            id1: a,
            id2: b,
            yield_: 0.5,
        };
        let kept = greedy_prune(4, &[c(1, 3)]);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept, vec![0, 2, 3]);
        // 2 is in three conflicts; removing it clears everything
        let kept = greedy_prune(5, &[c(0, 2), c(1, 2), c(2, 4)]);
        assert_eq!(kept, vec![0, 1, 3, 4]);
    }

    #[test]
    fn conflicts_csv() {
        let mut buf = Vec::new();
        write_conflicts(
            &[Conflict {
                id1: 1,
                id2: 4,
                yield_: 0.75,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id1,id2,yield\n1,4,0.750000\n");
    }
}
