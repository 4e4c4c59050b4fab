//! Two-strand nearest-neighbour equilibrium oracle.
//!
//! Duplex geometry comes from the semi-global trace of one strand against
//! the reverse complement of the other. Runs of two or more Watson–Crick
//! columns form helices that contribute stack terms; the gaps between
//! helices pay a purely entropic loop penalty. The duplex is the contiguous
//! range of helices with the lowest free energy at the temperature of
//! interest. Association constants feed a mass-action solve over the
//! species {A, B, AA, BB, AB}.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{semi_global_trace, AlignParams, Column};
use crate::seq::{complement, is_wc_pair, DnaSeq};

/// Gas constant in kcal/(mol·K).
pub const GAS_CONSTANT: f64 = 1.9872e-3;
pub const KELVIN: f64 = 273.15;
/// Default initial strand concentration (1 µM).
pub const DEFAULT_STRAND_CONC: f64 = 1e-6;
/// Temperatures at which dataset yields are computed, °C.
pub const DEFAULT_TEMPS: [f64; 6] = [37.0, 42.0, 47.0, 52.0, 57.0, 62.0];
pub const REFERENCE_TEMP: f64 = 57.0;

/// Loop penalty ΔG at the anchor temperature: `LOOP_BASE + LOOP_PER_COLUMN * L`.
pub const LOOP_BASE: f64 = 3.0;
pub const LOOP_PER_COLUMN: f64 = 0.4;
pub const LOOP_ANCHOR_K: f64 = 310.15;

const MAX_ITERATIONS: usize = 200;

static BUNDLED_PARAMS: &str = include_str!("../data/nn_unified.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("no Watson-Crick pairing between the strands")]
    NoPairing,
    #[error("sequence of length {0} too short for structure scoring (need >= 8)")]
    TooShort(usize),
    #[error("equilibrium solve did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid tube: {0}")]
    InvalidTube(String),
    #[error("temperature {0} °C outside [0, 100]")]
    BadTemperature(f64),
    #[error("parameter file line {line}: {msg}")]
    ParamParse { line: usize, msg: String },
    #[error("parameter file checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("I/O error: {0}")]
    Io(String),
}

/// The ten unique Watson–Crick stacks, keyed by top strand 5'→3'.
pub const STACK_KEYS: [&str; 10] = ["AA", "AT", "TA", "CA", "GT", "CT", "GA", "CG", "GC", "GG"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enthalpy {
    /// kcal/mol
    pub dh: f64,
    /// cal/(mol·K)
    pub ds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnParamTable {
    stacks: [Enthalpy; 10],
    pub init: Enthalpy,
    pub terminal_at: Enthalpy,
}

fn stack_slot(x: u8, y: u8) -> usize {
    let key = [x, y];
    let rc = [complement(y), complement(x)];
    STACK_KEYS
        .iter()
        .position(|k| k.as_bytes() == key || k.as_bytes() == rc)
        .expect("every dinucleotide maps to one of ten stacks")
}

fn checksum(lines: &[String]) -> String {
    let digest = Sha256::digest(lines.join("\n").as_bytes());
    hex::encode(&digest[..8])
}

impl Default for NnParamTable {
    fn default() -> Self {
        Self::parse(BUNDLED_PARAMS).expect("bundled parameter file is valid")
    }
}

impl NnParamTable {
    /// Parses the key-value parameter format. Blank lines and `#` comments
    /// are skipped; a trailing `checksum` line, when present, must match the
    /// SHA-256 prefix of the value lines.
    pub fn parse(text: &str) -> Result<Self, ThermoError> {
        let mut stacks: [Option<Enthalpy>; 10] = [None; 10];
        let mut init = None;
        let mut terminal_at = None;
        let mut body = Vec::new();
        let mut stored_checksum = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let err = |msg: &str| ThermoError::ParamParse {
                line,
                msg: msg.to_string(),
            };
            if fields[0] == "checksum" {
                stored_checksum = Some(fields.get(1).ok_or_else(|| err("missing checksum"))?.to_string());
                continue;
            }
            body.push(fields.join(" "));
            let num = |i: usize| -> Result<f64, ThermoError> {
                fields
                    .get(i)
                    .ok_or_else(|| err("missing value"))?
                    .parse::<f64>()
                    .map_err(|_| err("bad number"))
            };
            match fields[0] {
                "stack" => {
                    let key = fields.get(1).ok_or_else(|| err("missing stack key"))?;
                    let top = key.split('/').next().unwrap_or("");
                    let slot = STACK_KEYS
                        .iter()
                        .position(|k| *k == top)
                        .ok_or_else(|| err("unknown stack key"))?;
                    let e = Enthalpy {
                        dh: num(2)?,
                        ds: num(3)?,
                    };
                    if e.dh >= 0.0 {
                        return Err(err("stack enthalpy must be negative"));
                    }
                    if stacks[slot].replace(e).is_some() {
                        return Err(err("duplicate stack"));
                    }
                }
                "init" => {
                    init = Some(Enthalpy {
                        dh: num(1)?,
                        ds: num(2)?,
                    })
                }
                "terminal_at" => {
                    terminal_at = Some(Enthalpy {
                        dh: num(1)?,
                        ds: num(2)?,
                    })
                }
                _ => return Err(err("unknown key")),
            }
        }
        if let Some(stored) = stored_checksum {
            let computed = checksum(&body);
            if stored != computed {
                return Err(ThermoError::Checksum { stored, computed });
            }
        }
        let missing = |what: &str| ThermoError::ParamParse {
            line: 0,
            msg: format!("missing {what}"),
        };
        let mut out = [Enthalpy { dh: 0.0, ds: 0.0 }; 10];
        for (slot, e) in stacks.iter().enumerate() {
            out[slot] = e.ok_or_else(|| missing(&format!("stack {}", STACK_KEYS[slot])))?;
        }
        Ok(Self {
            stacks: out,
            init: init.ok_or_else(|| missing("init"))?,
            terminal_at: terminal_at.ok_or_else(|| missing("terminal_at"))?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ThermoError> {
        let text = std::fs::read_to_string(path).map_err(|e| ThermoError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// Serialises in the same format `parse` reads, checksum included.
    pub fn to_text(&self) -> String {
        let mut body = Vec::new();
        for (key, e) in STACK_KEYS.iter().zip(&self.stacks) {
            let kb = key.as_bytes();
            let partner = [complement(kb[0]) as char, complement(kb[1]) as char];
            body.push(format!("stack {key}/{}{} {} {}", partner[0], partner[1], e.dh, e.ds));
        }
        body.push(format!("init {} {}", self.init.dh, self.init.ds));
        body.push(format!("terminal_at {} {}", self.terminal_at.dh, self.terminal_at.ds));
        let mut out = String::from("# key  dH (kcal/mol)  dS (cal/(mol K))\n");
        for l in &body {
            let _ = writeln!(out, "{l}");
        }
        let _ = writeln!(out, "checksum {}", checksum(&body));
        out
    }

    /// Stack parameters for the top-strand step `x`→`y` paired with its
    /// Watson–Crick complement.
    pub fn stack(&self, x: u8, y: u8) -> Enthalpy {
        self.stacks[stack_slot(x, y)]
    }
}

/// A run of at least two consecutive Watson–Crick columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Helix {
    /// Number of base pairs.
    pub pairs: usize,
    /// Summed stack terms.
    pub stacks: Enthalpy,
    /// First / last pair is A·T.
    pub at_start: bool,
    pub at_end: bool,
}

/// Helices along the trace with the loop lengths (in columns) between
/// consecutive helices.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplexEnergy {
    pub helices: Vec<Helix>,
    pub loops: Vec<usize>,
    init: Enthalpy,
    terminal_at: Enthalpy,
}

impl DuplexEnergy {
    /// Enthalpy and entropy of the duplex formed by helices `lo..=hi`.
    pub fn span(&self, lo: usize, hi: usize) -> Enthalpy {
        let mut dh = self.init.dh;
        let mut ds = self.init.ds;
        for h in &self.helices[lo..=hi] {
            dh += h.stacks.dh;
            ds += h.stacks.ds;
        }
        for &len in &self.loops[lo..hi] {
            ds -= (LOOP_BASE + LOOP_PER_COLUMN * len as f64) / LOOP_ANCHOR_K * 1000.0;
        }
        let ends = [self.helices[lo].at_start, self.helices[hi].at_end];
        for at in ends {
            if at {
                dh += self.terminal_at.dh;
                ds += self.terminal_at.ds;
            }
        }
        Enthalpy { dh, ds }
    }

    /// The contiguous helix range with the lowest free energy at `temp_k`.
    pub fn best_span(&self, temp_k: f64) -> (usize, usize, Enthalpy) {
        let mut best = (0, 0, self.span(0, 0));
        for lo in 0..self.helices.len() {
            for hi in lo..self.helices.len() {
                let e = self.span(lo, hi);
                if dg_of(e, temp_k) < dg_of(best.2, temp_k) {
                    best = (lo, hi, e);
                }
            }
        }
        best
    }

    /// Enthalpy of the full span, first helix to last.
    pub fn full_span(&self) -> Enthalpy {
        self.span(0, self.helices.len() - 1)
    }

    pub fn paired_bases(&self) -> usize {
        self.helices.iter().map(|h| h.pairs).sum()
    }

    /// Free energy in kcal/mol at `temp_k`, minimised over helix ranges.
    pub fn dg(&self, temp_k: f64) -> f64 {
        dg_of(self.best_span(temp_k).2, temp_k)
    }

    /// Association constant in 1/M.
    pub fn association_constant(&self, temp_c: f64) -> f64 {
        let t = temp_c + KELVIN;
        (-self.dg(t) / (GAS_CONSTANT * t)).exp()
    }
}

fn dg_of(e: Enthalpy, temp_k: f64) -> f64 {
    e.dh - temp_k * e.ds / 1000.0
}

/// Everything the oracle needs: NN table, alignment scoring and strand
/// concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoModel {
    pub nn: NnParamTable,
    pub align: AlignParams,
    pub strand_conc: f64,
}

impl Default for ThermoModel {
    fn default() -> Self {
        Self {
            nn: NnParamTable::default(),
            align: AlignParams::default(),
            strand_conc: DEFAULT_STRAND_CONC,
        }
    }
}

/// Duplex enthalpy/entropy from the alignment of `s1` with `rc(s2)`.
///
/// The pair is put in lexicographic order first so the result does not
/// depend on argument order (tie-breaks in the trace are not mirror
/// symmetric).
pub fn duplex_energy(
    s1: &DnaSeq,
    s2: &DnaSeq,
    p: &AlignParams,
    nn: &NnParamTable,
) -> Result<DuplexEnergy, ThermoError> {
    let (top, other) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
    let bottom = other.reverse_complement();
    let trace = semi_global_trace(top, &bottom, p);
    let (tb, bb) = (top.as_bytes(), bottom.as_bytes());

    // top-strand index of every Watson–Crick column
    let paired: Vec<Option<usize>> = trace
        .columns
        .iter()
        .map(|c| match *c {
            Column::Pair(i, j) if tb[i] == bb[j] => Some(i),
            _ => None,
        })
        .collect();

    let is_at = |i: usize| tb[i] == b'A' || tb[i] == b'T';
    let mut helices = Vec::new();
    let mut loops = Vec::new();
    let mut since_last = 0usize;
    let mut k = 0;
    while k < paired.len() {
        let Some(first) = paired[k] else {
            since_last += 1;
            k += 1;
            continue;
        };
        let mut end = k;
        while end + 1 < paired.len() && paired[end + 1].is_some() {
            end += 1;
        }
        let pairs = end - k + 1;
        if pairs < 2 {
            // lone pairs are not stable; they count as loop columns
            since_last += 1;
            k += 1;
            continue;
        }
        let mut stacks = Enthalpy { dh: 0.0, ds: 0.0 };
        for i in first..first + pairs - 1 {
            let e = nn.stack(tb[i], tb[i + 1]);
            stacks.dh += e.dh;
            stacks.ds += e.ds;
        }
        if !helices.is_empty() {
            loops.push(since_last);
        }
        helices.push(Helix {
            pairs,
            stacks,
            at_start: is_at(first),
            at_end: is_at(first + pairs - 1),
        });
        since_last = 0;
        k = end + 1;
    }
    if helices.is_empty() {
        return Err(ThermoError::NoPairing);
    }
    Ok(DuplexEnergy {
        helices,
        loops,
        init: nn.init,
        terminal_at: nn.terminal_at,
    })
}

/// Association constant, zero for strands with no pairing.
pub fn association_constant(s1: &DnaSeq, s2: &DnaSeq, temp_c: f64, model: &ThermoModel) -> Result<f64, ThermoError> {
    match duplex_energy(s1, s2, &model.align, &model.nn) {
        Ok(e) => Ok(e.association_constant(temp_c)),
        Err(ThermoError::NoPairing) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Nussinov maximum Watson–Crick pairing with minimum hairpin loop 3,
/// scored at −1 kcal/mol per pair.
pub fn single_structure_score(s: &DnaSeq) -> Result<f64, ThermoError> {
    if s.len() < 8 {
        return Err(ThermoError::TooShort(s.len()));
    }
    Ok(-(max_pairs(s.as_bytes()) as f64))
}

const MIN_HAIRPIN: usize = 3;

fn max_pairs(b: &[u8]) -> usize {
    let n = b.len();
    // n[i][j] over the closed interval i..=j
    let mut tab = vec![0usize; n * n];
    for span in (MIN_HAIRPIN + 1)..n {
        for i in 0..n - span {
            let j = i + span;
            let mut best = tab[(i + 1) * n + j].max(tab[i * n + j - 1]);
            if is_wc_pair(b[i], b[j]) {
                best = best.max(tab[(i + 1) * n + j - 1] + 1);
            }
            for k in (i + 1)..j {
                best = best.max(tab[i * n + k] + tab[(k + 1) * n + j]);
            }
            tab[i * n + j] = best;
        }
    }
    tab[n - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeSpec {
    pub a0: f64,
    pub b0: f64,
    pub temp_c: f64,
    pub k_aa: f64,
    pub k_bb: f64,
    pub k_ab: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeState {
    pub a: f64,
    pub b: f64,
    pub c_aa: f64,
    pub c_bb: f64,
    pub c_ab: f64,
    pub yield_: f64,
}

impl TubeState {
    fn from_monomers(spec: &TubeSpec, a: f64, b: f64) -> Self {
        let c_ab = spec.k_ab * a * b;
        Self {
            a,
            b,
            c_aa: spec.k_aa * a * a,
            c_bb: spec.k_bb * b * b,
            c_ab,
            yield_: (c_ab / spec.a0.min(spec.b0)).clamp(0.0, 1.0),
        }
    }

    /// Relative mass-balance residuals for strands A and B.
    pub fn mass_residuals(&self, spec: &TubeSpec) -> (f64, f64) {
        (
            ((self.a + 2.0 * self.c_aa + self.c_ab) - spec.a0).abs() / spec.a0,
            ((self.b + 2.0 * self.c_bb + self.c_ab) - spec.b0).abs() / spec.b0,
        )
    }
}

/// Positive root of `k2 x² + p x − c = 0` without cancellation.
fn positive_root(k2: f64, p: f64, c: f64) -> f64 {
    let disc = (p * p + 4.0 * k2 * c).sqrt();
    if p >= 0.0 {
        2.0 * c / (p + disc)
    } else {
        (disc - p) / (2.0 * k2)
    }
}

/// Solves the mass-action balance for free monomer concentrations.
///
/// Damped Newton in log-concentrations first; if that fails, a bisection on
/// ln(a) with the B balance solved exactly at each step.
pub fn equilibrate(spec: &TubeSpec) -> Result<TubeState, ThermoError> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !(spec.a0 > 0.0 && spec.b0 > 0.0 && spec.a0.is_finite() && spec.b0.is_finite()) {
        return Err(ThermoError::InvalidTube(
            "initial concentrations must be positive".into(),
        ));
    }
    if !(ok(spec.k_aa) && ok(spec.k_bb) && ok(spec.k_ab)) {
        return Err(ThermoError::InvalidTube(
            "association constants must be finite and >= 0".into(),
        ));
    }
    let (a, b) = match newton_log(spec) {
        Some(ab) => ab,
        None => bisect_log(spec)?,
    };
    Ok(TubeState::from_monomers(spec, a, b))
}

fn newton_log(spec: &TubeSpec) -> Option<(f64, f64)> {
    let TubeSpec {
        a0,
        b0,
        k_aa,
        k_bb,
        k_ab,
        ..
    } = *spec;
    // u = ln(a/a0), v = ln(b/b0); residuals are relative mass balances.
    let (mut u, mut v) = (0.0f64, 0.0f64);
    for _ in 0..MAX_ITERATIONS {
        let (eu, ev) = (u.exp(), v.exp());
        let (a, b) = (a0 * eu, b0 * ev);
        let aa = 2.0 * k_aa * a * a;
        let bb = 2.0 * k_bb * b * b;
        let ab = k_ab * a * b;
        let r1 = (a + aa + ab) / a0 - 1.0;
        let r2 = (b + bb + ab) / b0 - 1.0;
        if r1.abs() < 1e-14 && r2.abs() < 1e-14 {
            return Some((a, b));
        }
        let j11 = (a + 2.0 * aa + ab) / a0;
        let j12 = ab / a0;
        let j21 = ab / b0;
        let j22 = (b + 2.0 * bb + ab) / b0;
        let det = j11 * j22 - j12 * j21;
        if !det.is_finite() || det <= 0.0 {
            return None;
        }
        let mut du = -(j22 * r1 - j12 * r2) / det;
        let mut dv = -(j11 * r2 - j21 * r1) / det;
        let step = du.abs().max(dv.abs());
        if step > 1.0 {
            du /= step;
            dv /= step;
        }
        u += du;
        v += dv;
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
    }
    None
}

fn bisect_log(spec: &TubeSpec) -> Result<(f64, f64), ThermoError> {
    let b_of = |a: f64| positive_root(2.0 * spec.k_bb, 1.0 + spec.k_ab * a, spec.b0);
    // g is strictly increasing in a
    let g = |a: f64| {
        let b = b_of(a);
        (a + 2.0 * spec.k_aa * a * a + spec.k_ab * a * b) / spec.a0 - 1.0
    };
    let (mut lo, mut hi) = ((spec.a0 * 1e-300).ln(), spec.a0.ln());
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            let a = mid.exp();
            return Ok((a, b_of(a)));
        }
        if g(mid.exp()) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(ThermoError::NoConvergence(MAX_ITERATIONS))
}

/// Single-strand tube {A, AA}: returns (monomer, homodimer) in M.
pub fn single_tube(a0: f64, k_aa: f64) -> (f64, f64) {
    let a = positive_root(2.0 * k_aa, 1.0, a0);
    (a, k_aa * a * a)
}

fn check_temp(temp_c: f64) -> Result<(), ThermoError> {
    if (0.0..=100.0).contains(&temp_c) {
        Ok(())
    } else {
        Err(ThermoError::BadTemperature(temp_c))
    }
}

/// Solved two-strand tube at `temp_c` with both strands at the model's
/// strand concentration.
pub fn pair_state(s1: &DnaSeq, s2: &DnaSeq, temp_c: f64, model: &ThermoModel) -> Result<TubeState, ThermoError> {
    check_temp(temp_c)?;
    let swapped = s1 > s2;
    let (x, y) = if swapped { (s2, s1) } else { (s1, s2) };
    let spec = TubeSpec {
        a0: model.strand_conc,
        b0: model.strand_conc,
        temp_c,
        k_aa: association_constant(x, x, temp_c, model)?,
        k_bb: association_constant(y, y, temp_c, model)?,
        k_ab: association_constant(x, y, temp_c, model)?,
    };
    let mut st = equilibrate(&spec)?;
    if swapped {
        std::mem::swap(&mut st.a, &mut st.b);
        std::mem::swap(&mut st.c_aa, &mut st.c_bb);
    }
    Ok(st)
}

pub fn pair_yield(s1: &DnaSeq, s2: &DnaSeq, temp_c: f64, model: &ThermoModel) -> Result<f64, ThermoError> {
    Ok(pair_state(s1, s2, temp_c, model)?.yield_)
}

/// Yields at each temperature. Alignments are computed once.
pub fn yield_profile(s1: &DnaSeq, s2: &DnaSeq, temps: &[f64], model: &ThermoModel) -> Result<Vec<f64>, ThermoError> {
    if temps.is_empty() {
        return Err(ThermoError::InvalidTube("empty temperature list".into()));
    }
    let energy = |x: &DnaSeq, y: &DnaSeq| match duplex_energy(x, y, &model.align, &model.nn) {
        Ok(e) => Ok(Some(e)),
        Err(ThermoError::NoPairing) => Ok(None),
        Err(e) => Err(e),
    };
    // the solve is not bit-exactly symmetric in (a, b), so fix an order
    let (s1, s2) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
    let (e_aa, e_bb, e_ab) = (energy(s1, s1)?, energy(s2, s2)?, energy(s1, s2)?);
    let k = |e: &Option<DuplexEnergy>, t: f64| e.as_ref().map_or(0.0, |e| e.association_constant(t));
    temps
        .iter()
        .map(|&t| {
            check_temp(t)?;
            let spec = TubeSpec {
                a0: model.strand_conc,
                b0: model.strand_conc,
                temp_c: t,
                k_aa: k(&e_aa, t),
                k_bb: k(&e_bb, t),
                k_ab: k(&e_ab, t),
            };
            Ok(equilibrate(&spec)?.yield_)
        })
        .collect()
}

/// Pairwise temperature-column distances.
#[derive(Debug, Clone, PartialEq)]
pub struct TempSimilarity {
    pub temps: Vec<f64>,
    pub mae: Vec<Vec<f64>>,
    pub mse: Vec<Vec<f64>>,
}

/// Mean absolute and mean squared differences between yield columns.
/// `rows[r][t]` is the yield of record `r` at `temps[t]`.
pub fn temp_similarity<R: AsRef<[f64]>>(rows: &[R], temps: &[f64]) -> TempSimilarity {
    let t = temps.len();
    let mut mae = vec![vec![0.0; t]; t];
    let mut mse = vec![vec![0.0; t]; t];
    let n = rows.len().max(1) as f64;
    for row in rows {
        let y = row.as_ref();
        for i in 0..t {
            for j in (i + 1)..t {
                let d = y[i] - y[j];
                mae[i][j] += d.abs();
                mse[i][j] += d * d;
            }
        }
    }
    for i in 0..t {
        for j in (i + 1)..t {
            mae[i][j] /= n;
            mse[i][j] /= n;
            mae[j][i] = mae[i][j];
            mse[j][i] = mse[i][j];
        }
    }
    TempSimilarity {
        temps: temps.to_vec(),
        mae,
        mse,
    }
}
