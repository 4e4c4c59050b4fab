//! DNA sequence primitives.
//!
//! [`DnaSeq`] is a validated, uppercase ACGT strand. Everything downstream
//! (alignment, thermodynamics, encodings) assumes this invariant holds, so
//! the only way to build one is through [`DnaSeq::parse`] or the generators
//! in this module.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Lengths admitted for library-mode sequences.
pub const LIBRARY_LEN: RangeInclusive<usize> = 18..=26;
/// Longest sequence accepted anywhere.
pub const MAX_LEN: usize = 64;
/// Default one-hot width.
pub const DEFAULT_N_MAX: usize = 26;

pub const BASES: [u8; 4] = *b"ACGT";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("invalid base {base:?} at index {index}")]
    InvalidBase { index: usize, base: char },
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds {max}")]
    TooLong { len: usize, max: usize },
    #[error("random sequence length {0} outside 18..=26")]
    BadLength(usize),
    #[error("invalid mutation profile: {0}")]
    BadProfile(String),
    #[error("FASTA: {0}")]
    Fasta(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SeqError {
    fn from(e: std::io::Error) -> Self {
        SeqError::Io(e.to_string())
    }
}

/// Index of a base in A,C,G,T order.
#[inline]
pub fn base_index(b: u8) -> usize {
    match b {
        b'A' => 0,
        b'C' => 1,
        b'G' => 2,
        _ => 3,
    }
}

#[inline]
pub fn complement(b: u8) -> u8 {
    match b {
        b'A' => b'T',
        b'C' => b'G',
        b'G' => b'C',
        _ => b'A',
    }
}

/// Watson–Crick pairing predicate.
#[inline]
pub fn is_wc_pair(a: u8, b: u8) -> bool {
    complement(a) == b
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DnaSeq(Vec<u8>);

impl DnaSeq {
    /// Parses and uppercases `text`. Surrounding whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self, SeqError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(SeqError::EmptySequence);
        }
        let mut bases = Vec::with_capacity(text.len());
        for (index, ch) in text.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            match up {
                'A' | 'C' | 'G' | 'T' => bases.push(up as u8),
                _ => return Err(SeqError::InvalidBase { index, base: ch }),
            }
        }
        if bases.len() > MAX_LEN {
            return Err(SeqError::TooLong {
                len: bases.len(),
                max: MAX_LEN,
            });
        }
        Ok(DnaSeq(bases))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // Only ACGT bytes are ever stored.
        std::str::from_utf8(&self.0).expect("ascii")
    }

    pub fn reverse_complement(&self) -> DnaSeq {
        DnaSeq(self.0.iter().rev().map(|&b| complement(b)).collect())
    }

    pub fn gc_content(&self) -> f64 {
        let gc = self.0.iter().filter(|&&b| b == b'G' || b == b'C').count();
        gc as f64 / self.0.len() as f64
    }

    /// Length of the longest homopolymer run.
    pub fn max_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        let mut prev = 0u8;
        for &b in &self.0 {
            run = if b == prev { run + 1 } else { 1 };
            prev = b;
            best = best.max(run);
        }
        best
    }
}

impl fmt::Display for DnaSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for DnaSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DnaSeq({})", self.as_str())
    }
}

impl FromStr for DnaSeq {
    type Err = SeqError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DnaSeq::parse(s)
    }
}

pub fn reverse_complement(s: &DnaSeq) -> DnaSeq {
    s.reverse_complement()
}

pub fn gc_content(s: &DnaSeq) -> f64 {
    s.gc_content()
}

/// Samples uniformly among sequences of length `len` with no homopolymer
/// run of three or more.
///
/// Completion counts are tabulated per (remaining length, current run) so
/// every admissible sequence has the same probability.
pub fn random_seq<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<DnaSeq, SeqError> {
    if !LIBRARY_LEN.contains(&len) {
        return Err(SeqError::BadLength(len));
    }
    // completions[r][run]: admissible suffixes of length r given the last
    // emitted base has run length `run` (1 or 2).
    let mut completions = vec![[0u64; 3]; len + 1];
    completions[0] = [1, 1, 1];
    for r in 1..=len {
        // same base extends the run (only from run 1), other 3 reset to 1
        completions[r][1] = completions[r - 1][2] + 3 * completions[r - 1][1];
        completions[r][2] = 3 * completions[r - 1][1];
    }
    let mut out = Vec::with_capacity(len);
    out.push(BASES[rng.random_range(0..4)]);
    let mut run = 1usize;
    for pos in 1..len {
        let remaining = len - pos - 1;
        let prev = out[pos - 1];
        let mut weights = [0u64; 4];
        for (i, &b) in BASES.iter().enumerate() {
            weights[i] = if b == prev {
                if run >= 2 {
                    0
                } else {
                    completions[remaining][2]
                }
            } else {
                completions[remaining][1]
            };
        }
        let total: u64 = weights.iter().sum();
        let mut pick = rng.random_range(0..total);
        let mut chosen = 0;
        for (i, &w) in weights.iter().enumerate() {
            if pick < w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        let b = BASES[chosen];
        run = if b == prev { run + 1 } else { 1 };
        out.push(b);
    }
    Ok(DnaSeq(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditOp {
    Insert,
    Delete,
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Minor,
    Severe,
}

/// How many edits of which kinds a mutation pass applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationProfile {
    kind: MutationKind,
    ops: Vec<EditOp>,
    count_range: RangeInclusive<usize>,
}

/// Default upper bound on the number of severe edits.
pub const SEVERE_DEFAULT_MAX: usize = 8;
const MUTATION_RETRY_CAP: usize = 16;

impl MutationProfile {
    /// A single edit kind applied `count_range` times; the range must lie in
    /// `0..=2` (zero gives the identity profile).
    pub fn minor(op: EditOp, count_range: RangeInclusive<usize>) -> Result<Self, SeqError> {
        if count_range.is_empty() || *count_range.end() > 2 {
            return Err(SeqError::BadProfile(format!(
                "minor count range {count_range:?} must lie within 0..=2"
            )));
        }
        Ok(Self {
            kind: MutationKind::Minor,
            ops: vec![op],
            count_range,
        })
    }

    /// All three edit kinds mixed, at least five edits.
    pub fn severe(count_range: RangeInclusive<usize>) -> Result<Self, SeqError> {
        if count_range.is_empty() || *count_range.start() < 5 {
            return Err(SeqError::BadProfile(format!(
                "severe count range {count_range:?} must start at 5 or more"
            )));
        }
        Ok(Self {
            kind: MutationKind::Severe,
            ops: vec![EditOp::Insert, EditOp::Delete, EditOp::Substitute],
            count_range,
        })
    }

    pub fn kind(&self) -> MutationKind {
        self.kind
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn count_range(&self) -> RangeInclusive<usize> {
        self.count_range.clone()
    }
}

fn length_ok(old: usize, new: usize) -> bool {
    if LIBRARY_LEN.contains(&new) {
        return true;
    }
    // Outside the library window: only accept moves toward it.
    let dist = |l: usize| {
        if l < *LIBRARY_LEN.start() {
            LIBRARY_LEN.start() - l
        } else {
            l.saturating_sub(*LIBRARY_LEN.end())
        }
    };
    dist(new) < dist(old)
}

/// Applies a random edit script drawn from `profile`.
///
/// Edits that would push the length out of 18..=26 are re-drawn up to 16
/// times and then skipped.
pub fn mutate<R: Rng + ?Sized>(s: &DnaSeq, profile: &MutationProfile, rng: &mut R) -> DnaSeq {
    let count = rng.random_range(profile.count_range.clone());
    let mut bases = s.0.clone();
    for _ in 0..count {
        for _ in 0..MUTATION_RETRY_CAP {
            let op = profile.ops[rng.random_range(0..profile.ops.len())];
            let len = bases.len();
            let new_len = match op {
                EditOp::Insert => len + 1,
                EditOp::Delete => len.saturating_sub(1),
                EditOp::Substitute => len,
            };
            if new_len == 0 || !length_ok(len, new_len) {
                continue;
            }
            match op {
                EditOp::Insert => {
                    let pos = rng.random_range(0..=len);
                    bases.insert(pos, BASES[rng.random_range(0..4)]);
                }
                EditOp::Delete => {
                    let pos = rng.random_range(0..len);
                    bases.remove(pos);
                }
                EditOp::Substitute => {
                    let pos = rng.random_range(0..len);
                    let old = bases[pos];
                    let alternatives: Vec<u8> = BASES.iter().copied().filter(|&b| b != old).collect();
                    bases[pos] = alternatives[rng.random_range(0..3)];
                }
            }
            break;
        }
    }
    DnaSeq(bases)
}

/// Two strands one-hot encoded as a `2 × 4 × n_max` grid, rows in A,C,G,T
/// order, right zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotPair {
    n_max: usize,
    grid: Vec<f64>,
}

impl OneHotPair {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn shape(&self) -> [usize; 3] {
        [2, 4, self.n_max]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.grid[(channel * 4 + row) * self.n_max + col]
    }

    /// Recovers the two strands from non-pad columns.
    pub fn decode(&self) -> (DnaSeq, DnaSeq) {
        let strand = |ch: usize| {
            let mut out = Vec::new();
            for col in 0..self.n_max {
                let hot = (0..4).find(|&row| self.get(ch, row, col) > 0.5);
                match hot {
                    Some(row) => out.push(BASES[row]),
                    None => break,
                }
            }
            DnaSeq(out)
        };
        (strand(0), strand(1))
    }
}

pub fn one_hot_pair(s1: &DnaSeq, s2: &DnaSeq, n_max: usize) -> Result<OneHotPair, SeqError> {
    let mut grid = vec![0.0; 2 * 4 * n_max];
    for (ch, s) in [s1, s2].into_iter().enumerate() {
        if s.len() > n_max {
            return Err(SeqError::TooLong {
                len: s.len(),
                max: n_max,
            });
        }
        for (col, &b) in s.0.iter().enumerate() {
            grid[(ch * 4 + base_index(b)) * n_max + col] = 1.0;
        }
    }
    Ok(OneHotPair { n_max, grid })
}

/// A FASTA record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub seq: DnaSeq,
}

pub fn read_fasta<R: BufRead>(reader: R) -> Result<Vec<FastaRecord>, SeqError> {
    let mut records = Vec::new();
    let mut id: Option<String> = None;
    let mut buf = String::new();
    let flush = |id: &mut Option<String>, buf: &mut String, out: &mut Vec<FastaRecord>| {
        if let Some(id) = id.take() {
            let seq = DnaSeq::parse(buf).map_err(|e| SeqError::Fasta(format!("{id}: {e}")))?;
            out.push(FastaRecord { id, seq });
        }
        buf.clear();
        Ok::<(), SeqError>(())
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            flush(&mut id, &mut buf, &mut records)?;
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            id = Some(name);
        } else if id.is_none() {
            return Err(SeqError::Fasta(format!(
                "line {}: sequence data before first header",
                lineno + 1
            )));
        } else {
            buf.push_str(line);
        }
    }
    flush(&mut id, &mut buf, &mut records)?;
    Ok(records)
}

/// Writes sequences with ids `seq0`, `seq1`, ...
pub fn write_fasta<W: Write>(mut writer: W, seqs: &[DnaSeq]) -> Result<(), SeqError> {
    for (i, s) in seqs.iter().enumerate() {
        writeln!(writer, ">seq{i}\n{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(text: &str) -> DnaSeq {
        DnaSeq::parse(text).unwrap()
    }

    /// Textbook unit-cost Levenshtein distance.
    fn edit_distance(a: &[u8], b: &[u8]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn parse_examples() {
        assert_eq!(s("ACGT").as_str(), "ACGT");
        assert_eq!(s("acgt").as_str(), "ACGT");
        assert_eq!(s("GAATACTGTCAGTGAGAGGATCTGCC").len(), 26);
        assert_eq!(
            DnaSeq::parse("ACGU"),
            Err(SeqError::InvalidBase { index: 3, base: 'U' })
        );
        assert_eq!(DnaSeq::parse(""), Err(SeqError::EmptySequence));
        assert!(matches!(DnaSeq::parse(&"A".repeat(65)), Err(SeqError::TooLong { .. })));
    }

    #[test]
    fn reverse_complement_examples() {
        assert_eq!(s("A").reverse_complement().as_str(), "T");
        assert_eq!(s("ACGT").reverse_complement().as_str(), "ACGT");
        assert_eq!(
            s("CCATGGAGGCGCGCCTTT").reverse_complement().as_str(),
            "AAAGGCGCGCCTCCATGG"
        );
    }

    #[test]
    fn gc_examples() {
        assert_eq!(s("GGCC").gc_content(), 1.0);
        assert_eq!(s("AATT").gc_content(), 0.0);
        assert_eq!(s("ACGT").gc_content(), 0.5);
    }

    #[test]
    fn random_seq_has_no_triple_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let first = random_seq(18, &mut rng).unwrap();
        assert_eq!(first.len(), 18);
        assert!(first.max_run() <= 2);
        for i in 0..10_000 {
            let len = 18 + i % 9;
            let x = random_seq(len, &mut rng).unwrap();
            assert_eq!(x.len(), len);
            let b = x.as_bytes();
            assert_eq!(b.windows(3).filter(|w| w[0] == w[1] && w[1] == w[2]).count(), 0);
        }
    }

    #[test]
    fn random_seq_is_deterministic_and_checks_length() {
        let a = random_seq(20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_seq(20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_seq(17, &mut rng), Err(SeqError::BadLength(17)));
        assert_eq!(random_seq(27, &mut rng), Err(SeqError::BadLength(27)));
    }

    #[test]
    fn random_seq_is_uniform_over_admissible_set() {
        // Length 18 has too many sequences to enumerate; check the first
        // two bases instead: every ordered prefix is equally likely except
        // that a doubled prefix constrains the third base.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut doubled = 0usize;
        let n = 40_000;
        for _ in 0..n {
            let x = random_seq(18, &mut rng).unwrap();
            let b = x.as_bytes();
            if b[0] == b[1] {
                doubled += 1;
            }
        }
        // Exact probability from the completion counts.
        let len = 18;
        let mut c = vec![[0f64; 3]; len + 1];
        c[0] = [1.0, 1.0, 1.0];
        for r in 1..=len {
            c[r][1] = c[r - 1][2] + 3.0 * c[r - 1][1];
            c[r][2] = 3.0 * c[r - 1][1];
        }
        let p = c[len - 2][2] / (c[len - 2][2] + 3.0 * c[len - 2][1]);
        let observed = doubled as f64 / n as f64;
        assert!((observed - p).abs() < 0.01, "{observed} vs {p}");
    }

    #[test]
    fn minor_substitution_is_hamming_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_seq(20, &mut rng).unwrap();
        let profile = MutationProfile::minor(EditOp::Substitute, 1..=1).unwrap();
        for _ in 0..200 {
            let m = mutate(&base, &profile, &mut rng);
            assert_eq!(m.len(), base.len());
            let hd = m.as_bytes().iter().zip(base.as_bytes()).filter(|(a, b)| a != b).count();
            assert_eq!(hd, 1);
        }
    }

    #[test]
    fn severe_edits_bounded_by_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let profile = MutationProfile::severe(5..=5).unwrap();
        for _ in 0..300 {
            let base = random_seq(rng.random_range(18..=26), &mut rng).unwrap();
            let m = mutate(&base, &profile, &mut rng);
            assert!(LIBRARY_LEN.contains(&m.len()));
            assert!(edit_distance(base.as_bytes(), m.as_bytes()) <= 5);
        }
    }

    #[test]
    fn zero_count_profile_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_seq(22, &mut rng).unwrap();
        let profile = MutationProfile::minor(EditOp::Insert, 0..=0).unwrap();
        assert_eq!(mutate(&base, &profile, &mut rng), base);
    }

    #[test]
    fn profile_validation() {
        assert!(MutationProfile::minor(EditOp::Delete, 1..=3).is_err());
        assert!(MutationProfile::severe(4..=8).is_err());
        assert!(MutationProfile::severe(5..=SEVERE_DEFAULT_MAX).is_ok());
    }

    #[test]
    fn one_hot_examples() {
        let p = one_hot_pair(&s("A"), &s("C"), 2).unwrap();
        assert_eq!(p.shape(), [2, 4, 2]);
        let col = |ch, c| (0..4).map(|r| p.get(ch, r, c)).collect::<Vec<_>>();
        assert_eq!(col(0, 0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(col(1, 0), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(col(0, 1), vec![0.0; 4]);
        assert_eq!(col(1, 1), vec![0.0; 4]);

        let a = s("GAATACTGTCAGTGAGAGGATCTGCC");
        let q = one_hot_pair(&a, &a.reverse_complement(), 26).unwrap();
        assert_eq!(q.grid().len(), 2 * 4 * 26);
        assert_eq!(q.grid().iter().filter(|&&v| v != 0.0).count(), 52);

        assert!(matches!(
            one_hot_pair(&a, &a, 20),
            Err(SeqError::TooLong { len: 26, max: 20 })
        ));
    }

    #[test]
    fn fasta_round_trip() {
        let seqs = vec![s("ACGTACGT"), s("GGGCCCAAATTT")];
        let mut buf = Vec::new();
        write_fasta(&mut buf, &seqs).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            ">seq0\nACGTACGT\n>seq1\nGGGCCCAAATTT\n"
        );
        let back = read_fasta(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].id, "seq1");
        assert_eq!(back[1].seq, seqs[1]);
        assert!(read_fasta(&b"ACGT\n"[..]).is_err());
        assert!(read_fasta(&b">x\nACGN\n"[..]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dna() -> impl Strategy<Value = DnaSeq> {
            proptest::collection::vec(0usize..4, 1..=MAX_LEN)
                .prop_map(|v| DnaSeq(v.into_iter().map(|i| BASES[i]).collect()))
        }

        proptest! {
            #[test]
            fn rc_is_involution(x in dna()) {
                prop_assert_eq!(x.reverse_complement().reverse_complement(), x);
            }

            #[test]
            fn gc_invariant_under_rc(x in dna()) {
                prop_assert_eq!(x.gc_content(), x.reverse_complement().gc_content());
            }

            #[test]
            fn one_hot_round_trips(a in dna(), b in dna()) {
                let p = one_hot_pair(&a, &b, MAX_LEN).unwrap();
                for ch in 0..2 {
                    let len = if ch == 0 { a.len() } else { b.len() };
                    for col in 0..MAX_LEN {
                        let sum: f64 = (0..4).map(|r| p.get(ch, r, col)).sum();
                        prop_assert_eq!(sum, if col < len { 1.0 } else { 0.0 });
                    }
                }
                prop_assert_eq!(p.decode(), (a, b));
            }
        }
    }
}
