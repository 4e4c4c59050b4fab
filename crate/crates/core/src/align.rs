//! Semi-global affine-gap alignment.
//!
//! Leading and trailing gaps are free on both sequences (the alignment may
//! start anywhere on the first row or column and end anywhere on the last
//! row or column). An internal gap of length `L` costs
//! `gap_open + (L - 1) * gap_extend`.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::seq::DnaSeq;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("brute-force search limited to len(a)*len(b) <= {limit}, got {got}")]
    TooLarge { got: usize, limit: usize },
    #[error("invalid alignment parameters: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignParams {
    pub match_score: i32,
    pub mismatch: i32,
    pub gap_open: i32,
    pub gap_extend: i32,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            match_score: 5,
            mismatch: -4,
            gap_open: 5,
            gap_extend: 2,
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.gap_extend < 0 || self.gap_open < self.gap_extend {
            return Err(AlignError::BadParams("need gap_open >= gap_extend >= 0"));
        }
        if self.match_score <= self.mismatch {
            return Err(AlignError::BadParams("need match > mismatch"));
        }
        Ok(())
    }

    #[inline]
    fn sub(&self, x: u8, y: u8) -> i32 {
        if x == y {
            self.match_score
        } else {
            self.mismatch
        }
    }

    fn gap_cost(&self, len: usize) -> i32 {
        if len == 0 {
            0
        } else {
            self.gap_open + (len as i32 - 1) * self.gap_extend
        }
    }
}

/// One alignment column. Indices are 0-based positions in `a` / `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Pair(usize, usize),
    /// Residue of `a` against a gap.
    GapInB(usize),
    /// Residue of `b` against a gap.
    GapInA(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignResult {
    pub score: i32,
    /// Run-length edit script: `=` match, `X` mismatch, `I` residue of `a`
    /// only, `D` residue of `b` only. End gaps are included.
    pub cigar: String,
    pub aligned_rows: (String, String),
    pub columns: Vec<Column>,
}

const NEG: i32 = i32::MIN / 4;

/// Optimal semi-global score in linear memory.
pub fn semi_global_score(a: &DnaSeq, b: &DnaSeq, p: &AlignParams) -> i32 {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let (m, n) = (a.len(), b.len());
    // h[j], e[j] hold row i-1 on entry; f is the vertical gap state.
    let mut h = vec![0i32; n + 1];
    let mut f = vec![NEG; n + 1];
    let mut best = h[n];
    for i in 1..=m {
        let mut diag = h[0];
        h[0] = 0;
        let mut e = NEG;
        for j in 1..=n {
            e = (h[j - 1] - p.gap_open).max(e - p.gap_extend);
            f[j] = (h[j] - p.gap_open).max(f[j] - p.gap_extend);
            let score = (diag + p.sub(a[i - 1], b[j - 1])).max(e).max(f[j]);
            diag = h[j];
            h[j] = score;
        }
        best = best.max(h[n]);
    }
    h.iter().copied().fold(best, i32::max)
}

/// Optimal semi-global alignment with traceback.
///
/// Ties are broken diagonal, then up (residue of `a` against a gap), then
/// left. The end cell is the best on the last row or column, preferring the
/// bottom-right corner, then the last column scanning upward, then the last
/// row scanning leftward.
pub fn semi_global_trace(a: &DnaSeq, b: &DnaSeq, p: &AlignParams) -> AlignResult {
    let (sa, sb) = (a.as_bytes(), b.as_bytes());
    let (m, n) = (sa.len(), sb.len());
    let w = n + 1;
    let mut h = vec![0i32; (m + 1) * w];
    let mut e = vec![NEG; (m + 1) * w];
    let mut f = vec![NEG; (m + 1) * w];
    for i in 1..=m {
        for j in 1..=n {
            let k = i * w + j;
            e[k] = (h[k - 1] - p.gap_open).max(e[k - 1] - p.gap_extend);
            f[k] = (h[k - w] - p.gap_open).max(f[k - w] - p.gap_extend);
            h[k] = (h[k - w - 1] + p.sub(sa[i - 1], sb[j - 1])).max(e[k]).max(f[k]);
        }
    }

    let mut end = (m, n);
    let mut score = h[m * w + n];
    for i in (0..m).rev() {
        if h[i * w + n] > score {
            score = h[i * w + n];
            end = (i, n);
        }
    }
    for j in (0..n).rev() {
        if h[m * w + j] > score {
            score = h[m * w + j];
            end = (m, j);
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        H,
        E,
        F,
    }

    let mut cols = Vec::with_capacity(m + n);
    // trailing free gaps
    for i in (end.0..m).rev() {
        cols.push(Column::GapInB(i));
    }
    for j in (end.1..n).rev() {
        cols.push(Column::GapInA(j));
    }
    let (mut i, mut j) = end;
    let mut state = State::H;
    while i > 0 && j > 0 {
        let k = i * w + j;
        match state {
            State::H => {
                if h[k] == h[k - w - 1] + p.sub(sa[i - 1], sb[j - 1]) {
                    cols.push(Column::Pair(i - 1, j - 1));
                    i -= 1;
                    j -= 1;
                } else if h[k] == f[k] {
                    state = State::F;
                } else {
                    state = State::E;
                }
            }
            State::F => {
                cols.push(Column::GapInB(i - 1));
                state = if f[k] == h[k - w] - p.gap_open {
                    State::H
                } else {
                    State::F
                };
                i -= 1;
            }
            State::E => {
                cols.push(Column::GapInA(j - 1));
                state = if e[k] == h[k - 1] - p.gap_open {
                    State::H
                } else {
                    State::E
                };
                j -= 1;
            }
        }
    }
    // leading free gaps
    for ii in (0..i).rev() {
        cols.push(Column::GapInB(ii));
    }
    for jj in (0..j).rev() {
        cols.push(Column::GapInA(jj));
    }
    cols.reverse();

    let mut row_a = String::with_capacity(cols.len());
    let mut row_b = String::with_capacity(cols.len());
    let mut ops = Vec::with_capacity(cols.len());
    for c in &cols {
        match *c {
            Column::Pair(x, y) => {
                row_a.push(sa[x] as char);
                row_b.push(sb[y] as char);
                ops.push(if sa[x] == sb[y] { '=' } else { 'X' });
            }
            Column::GapInB(x) => {
                row_a.push(sa[x] as char);
                row_b.push('-');
                ops.push('I');
            }
            Column::GapInA(y) => {
                row_a.push('-');
                row_b.push(sb[y] as char);
                ops.push('D');
            }
        }
    }
    AlignResult {
        score,
        cigar: run_length(&ops),
        aligned_rows: (row_a, row_b),
        columns: cols,
    }
}

fn run_length(ops: &[char]) -> String {
    let mut out = String::new();
    let mut iter = ops.iter().peekable();
    while let Some(&op) = iter.next() {
        let mut count = 1;
        while iter.peek() == Some(&&op) {
            iter.next();
            count += 1;
        }
        let _ = write!(out, "{count}{op}");
    }
    out
}

/// Scores two gapped rows under the semi-global convention.
///
/// The first maximal run of same-kind gap columns is free when the
/// alignment opens with a gap, likewise the last run when it closes with
/// one; every other gap run is charged `open + (L-1)*extend`.
pub fn score_rows(row_a: &str, row_b: &str, p: &AlignParams) -> i32 {
    let cols: Vec<(u8, u8)> = row_a.bytes().zip(row_b.bytes()).collect();
    #[derive(PartialEq, Clone, Copy)]
    enum Kind {
        Pair,
        GapA,
        GapB,
    }
    let kind = |&(x, y): &(u8, u8)| match (x == b'-', y == b'-') {
        (false, false) => Kind::Pair,
        (true, _) => Kind::GapA,
        (false, true) => Kind::GapB,
    };
    // Collapse into runs.
    let mut runs: Vec<(Kind, usize, usize)> = Vec::new(); // kind, start, len
    for (idx, c) in cols.iter().enumerate() {
        let k = kind(c);
        match runs.last_mut() {
            Some(r) if r.0 == k && k != Kind::Pair => r.2 += 1,
            _ => runs.push((k, idx, 1)),
        }
    }
    let last = runs.len().saturating_sub(1);
    let mut score = 0;
    for (r_idx, &(k, start, len)) in runs.iter().enumerate() {
        match k {
            Kind::Pair => {
                let (x, y) = cols[start];
                score += p.sub(x, y);
            }
            _ if r_idx == 0 || r_idx == last => {}
            _ => score -= p.gap_cost(len),
        }
    }
    score
}

pub const BRUTE_FORCE_LIMIT: usize = 200;

/// Exhaustive optimum by recursion over explicit column choices, memoised
/// on (position in a, position in b, current gap state).
///
/// Independent of the Gotoh matrices: the alignment is assembled as a free
/// leading skip of one sequence, a charged core, and a free trailing skip.
pub fn brute_force_score(a: &DnaSeq, b: &DnaSeq, p: &AlignParams) -> Result<i32, AlignError> {
    let (sa, sb) = (a.as_bytes(), b.as_bytes());
    let got = sa.len() * sb.len();
    if got > BRUTE_FORCE_LIMIT {
        return Err(AlignError::TooLarge {
            got,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    #[derive(Clone, Copy, PartialEq, Eq, Hash)]
    enum Gap {
        None,
        InA,
        InB,
    }

    fn core(
        i: usize,
        j: usize,
        gap: Gap,
        sa: &[u8],
        sb: &[u8],
        p: &AlignParams,
        memo: &mut HashMap<(usize, usize, Gap), i32>,
    ) -> i32 {
        if let Some(&v) = memo.get(&(i, j, gap)) {
            return v;
        }
        let mut best = i32::MIN;
        if i == sa.len() || j == sb.len() {
            // stop: the rest of the other sequence is a free trailing gap
            best = 0;
        }
        if i < sa.len() && j < sb.len() {
            let here = p.sub(sa[i], sb[j]);
            best = best.max(here + core(i + 1, j + 1, Gap::None, sa, sb, p, memo));
        }
        if i < sa.len() {
            let cost = if gap == Gap::InB { p.gap_extend } else { p.gap_open };
            best = best.max(core(i + 1, j, Gap::InB, sa, sb, p, memo) - cost);
        }
        if j < sb.len() {
            let cost = if gap == Gap::InA { p.gap_extend } else { p.gap_open };
            best = best.max(core(i, j + 1, Gap::InA, sa, sb, p, memo) - cost);
        }
        memo.insert((i, j, gap), best);
        best
    }

    let mut memo = HashMap::new();
    let mut best = i32::MIN;
    for skip in 0..=sa.len() {
        best = best.max(core(skip, 0, Gap::None, sa, sb, p, &mut memo));
    }
    for skip in 0..=sb.len() {
        best = best.max(core(0, skip, Gap::None, sa, sb, p, &mut memo));
    }
    Ok(best)
}

/// Alignment score of `s1` against the reverse complement of `s2`: a proxy
/// for how well the two strands anneal.
pub fn annealing_score(s1: &DnaSeq, s2: &DnaSeq, p: &AlignParams) -> i32 {
    semi_global_score(s1, &s2.reverse_complement(), p)
}
