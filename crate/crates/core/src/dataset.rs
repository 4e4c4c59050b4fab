//! Synthetic hybridisation datasets.
//!
//! Each round draws random roots, builds a mutation family around every root
//! (and, optionally, around its reverse complement), pairs the family
//! members with each other and labels every pair with oracle yields.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::exec::Exec;
use crate::seq::{mutate, random_seq, DnaSeq, EditOp, MutationProfile, SeqError, LIBRARY_LEN};
use crate::thermo::{yield_profile, ThermoError, ThermoModel, DEFAULT_TEMPS, REFERENCE_TEMP};

/// Yields at or above this are labelled High.
pub const HIGH_THRESHOLD: f64 = 0.2;
pub const CSV_HEADER: [&str; 9] = ["s1", "s2", "y37", "y42", "y47", "y52", "y57", "y62", "label"];
const REF_COLUMN: usize = 4;
const MAX_ROUNDS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("oracle failed on pair ({s1}, {s2}): {source}")]
    Oracle {
        s1: String,
        s2: String,
        source: ThermoError,
    },
    #[error("need at least {need} records, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn is_high(self) -> bool {
        self == Label::High
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Low => "Low",
            Label::High => "High",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Low" => Ok(Label::Low),
            "High" => Ok(Label::High),
            _ => Err(format!("unknown label {s:?}")),
        }
    }
}

pub fn label(y: f64, threshold: f64) -> Label {
    if y >= threshold {
        Label::High
    } else {
        Label::Low
    }
}

/// A sequence pair with yields at the six standard temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldRecord {
    pub s1: DnaSeq,
    pub s2: DnaSeq,
    /// Yields at [`DEFAULT_TEMPS`], in order.
    pub yields: [f64; 6],
    pub label: Label,
}

impl YieldRecord {
    pub fn new(s1: DnaSeq, s2: DnaSeq, yields: [f64; 6]) -> Self {
        let label = label(yields[REF_COLUMN], HIGH_THRESHOLD);
        Self { s1, s2, yields, label }
    }

    /// Yield at the reference temperature (57 °C).
    pub fn y_ref(&self) -> f64 {
        self.yields[REF_COLUMN]
    }

    pub fn yield_at(&self, temp_c: f64) -> Option<f64> {
        DEFAULT_TEMPS.iter().position(|&t| t == temp_c).map(|i| self.yields[i])
    }
}

/// Generation settings. Every field has a default, so a TOML file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Roots drawn per round.
    pub n_roots: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Minor mutants per family side; edit kinds cycle substitute, insert,
    /// delete.
    pub minor_mutants: usize,
    pub minor_max_edits: usize,
    pub severe_mutants: usize,
    pub severe_min_edits: usize,
    pub severe_max_edits: usize,
    /// Build a second family side from the reverse complement of the root.
    pub rc_mutation: bool,
    pub self_pairs: bool,
    pub target_size: usize,
    pub seed: u64,
    pub temps: Vec<f64>,
    pub reference_temp: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_roots: 500,
            min_len: *LIBRARY_LEN.start(),
            max_len: *LIBRARY_LEN.end(),
            minor_mutants: 5,
            minor_max_edits: 2,
            severe_mutants: 2,
            severe_min_edits: 5,
            severe_max_edits: crate::seq::SEVERE_DEFAULT_MAX,
            rc_mutation: true,
            self_pairs: false,
            target_size: 50_000,
            seed: 0,
            temps: DEFAULT_TEMPS.to_vec(),
            reference_temp: REFERENCE_TEMP,
        }
    }
}

impl DatasetConfig {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.target_size == 0 {
            return bad("target_size must be at least 1");
        }
        if self.n_roots == 0 {
            return bad("n_roots must be at least 1");
        }
        if self.min_len > self.max_len || !LIBRARY_LEN.contains(&self.min_len) || !LIBRARY_LEN.contains(&self.max_len) {
            return bad("root lengths must lie within 18..=26");
        }
        if self.temps.as_slice() != DEFAULT_TEMPS {
            return bad("records carry yields at 37, 42, 47, 52, 57 and 62 °C");
        }
        if !self.temps.contains(&self.reference_temp) {
            return bad("reference_temp must be one of temps");
        }
        self.profiles().map(|_| ())
    }

    fn profiles(&self) -> Result<(Vec<MutationProfile>, MutationProfile), DatasetError> {
        let lo = self.minor_max_edits.min(1);
        let minor = [EditOp::Substitute, EditOp::Insert, EditOp::Delete]
            .into_iter()
            .map(|op| MutationProfile::minor(op, lo..=self.minor_max_edits))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        let severe = MutationProfile::severe(self.severe_min_edits..=self.severe_max_edits)
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        Ok((minor, severe))
    }
}

/// Generated records plus anything worth telling the user about.
#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub records: Vec<YieldRecord>,
    pub warnings: Vec<String>,
}

/// Oracle signature: yields of a pair at each of the configured temperatures.
pub type Oracle<'a> = dyn Fn(&DnaSeq, &DnaSeq) -> Result<Vec<f64>, ThermoError> + Sync + 'a;

/// The thermodynamic oracle at the standard temperatures.
pub fn thermo_oracle(model: &ThermoModel) -> impl Fn(&DnaSeq, &DnaSeq) -> Result<Vec<f64>, ThermoError> + Sync + '_ {
    move |a, b| yield_profile(a, b, &DEFAULT_TEMPS, model)
}

/// One side of a family: the seed strand followed by its mutants.
fn family_side(
    seed: &DnaSeq,
    cfg: &DatasetConfig,
    minor: &[MutationProfile],
    severe: &MutationProfile,
    rng: &mut ChaCha8Rng,
) -> Vec<DnaSeq> {
    let mut side = vec![seed.clone()];
    for k in 0..cfg.minor_mutants {
        side.push(mutate(seed, &minor[k % minor.len()], rng));
    }
    for _ in 0..cfg.severe_mutants {
        side.push(mutate(seed, severe, rng));
    }
    side
}

/// Generates a labelled dataset. Output depends only on `cfg` (including
/// its seed), not on the worker count.
pub fn generate(cfg: &DatasetConfig, oracle: &Oracle<'_>, exec: Exec) -> Result<Generated, DatasetError> {
    cfg.validate()?;
    let (minor, severe) = cfg.profiles()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<DnaSeq> = HashSet::new();
    let mut pairs: Vec<(DnaSeq, DnaSeq)> = Vec::new();
    let mut out = Generated::default();

    for _ in 0..MAX_ROUNDS {
        let before = pairs.len();
        for _ in 0..cfg.n_roots {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let root = random_seq(len, &mut rng)?;
            let mut pool = family_side(&root, cfg, &minor, &severe, &mut rng);
            if cfg.rc_mutation {
                pool.extend(family_side(&root.reverse_complement(), cfg, &minor, &severe, &mut rng));
            }
            pool.retain(|s| seen.insert(s.clone()));
            for i in 0..pool.len() {
                let start = if cfg.self_pairs { i } else { i + 1 };
                for j in start..pool.len() {
                    pairs.push((pool[i].clone(), pool[j].clone()));
                }
            }
        }
        if pairs.len() >= cfg.target_size {
            break;
        }
        if pairs.len() == before {
            out.warnings.push(format!(
                "config produces no pairs (self_pairs={}, rc_mutation={}); stopping with {}",
                cfg.self_pairs,
                cfg.rc_mutation,
                pairs.len()
            ));
            break;
        }
    }
    if pairs.len() < cfg.target_size && out.warnings.is_empty() {
        out.warnings
            .push(format!("stopped after {MAX_ROUNDS} rounds with {} pairs", pairs.len()));
    }
    pairs.truncate(cfg.target_size);

    out.records = exec.try_map(&pairs, |(a, b)| {
        let ys = oracle(a, b).map_err(|source| DatasetError::Oracle {
            s1: a.to_string(),
            s2: b.to_string(),
            source,
        })?;
        let yields: [f64; 6] = ys
            .try_into()
            .map_err(|v: Vec<f64>| DatasetError::Config(format!("oracle returned {} yields, expected 6", v.len())))?;
        Ok::<_, DatasetError>(YieldRecord::new(a.clone(), b.clone(), yields))
    })?;
    Ok(out)
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Yield bin of width 0.1, with 1.0 in the top bin.
pub fn yield_bin(y: f64, bins: usize) -> usize {
    ((y * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Splits proportionally within each yield bin of the reference yield.
///
/// Validation and test sizes are floored per bin, then topped up by largest
/// remainder so the global sizes are `round(f·n)`. Each bin's share is
/// within one record of its exact proportion.
pub fn stratified_split<T: Clone>(
    records: &[T],
    key: impl Fn(&T) -> f64,
    fractions: (f64, f64, f64),
    bins: usize,
    seed: u64,
) -> Result<Split<T>, DatasetError> {
    let n = records.len();
    if n < 10 {
        return Err(DatasetError::TooFew { need: 10, got: n });
    }
    let (ft, fv, fs) = fractions;
    if bins == 0 || ft < 0.0 || fv < 0.0 || fs < 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Config(
            "fractions must be non-negative and sum to 1".into(),
        ));
    }
    let mut by_bin: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, r) in records.iter().enumerate() {
        by_bin[yield_bin(key(r), bins)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut by_bin {
        b.shuffle(&mut rng);
    }

    let quota = |f: f64| -> Vec<usize> {
        let exact: Vec<f64> = by_bin.iter().map(|b| f * b.len() as f64).collect();
        let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let target = (f * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..bins).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = target.saturating_sub(q.iter().sum());
        for &b in order.iter().cycle().take(bins * 2) {
            if missing == 0 {
                break;
            }
            if q[b] < by_bin[b].len() {
                q[b] += 1;
                missing -= 1;
            }
        }
        q
    };
    let qv = quota(fv);
    let mut qs = quota(fs);
    // never hand out more than a bin holds
    for b in 0..bins {
        qs[b] = qs[b].min(by_bin[b].len() - qv[b]);
    }

    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (b, idx) in by_bin.iter().enumerate() {
        let (v, rest) = idx.split_at(qv[b]);
        let (s, t) = rest.split_at(qs[b]);
        split.val.extend(v.iter().map(|&i| records[i].clone()));
        split.test.extend(s.iter().map(|&i| records[i].clone()));
        split.train.extend(t.iter().map(|&i| records[i].clone()));
    }
    Ok(split)
}

pub fn write_csv<W: Write>(records: &[YieldRecord], w: W) -> Result<(), DatasetError> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| DatasetError::Io(e.into());
    wr.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let mut row = vec![r.s1.to_string(), r.s2.to_string()];
        row.extend(r.yields.iter().map(|y| format!("{y:.6}")));
        row.push(r.label.to_string());
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<YieldRecord>, DatasetError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows = rd.records();
    let parse_err = |line: u64, msg: String| DatasetError::Parse { line, msg };
    let header = match rows.next() {
        None => return Err(parse_err(1, "missing header".into())),
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(parse_err(line, format!("expected 9 fields, got {}", row.len())));
        }
        let s1 = DnaSeq::parse(&row[0]).map_err(|e| parse_err(line, e.to_string()))?;
        let s2 = DnaSeq::parse(&row[1]).map_err(|e| parse_err(line, e.to_string()))?;
        let mut yields = [0.0; 6];
        for (k, y) in yields.iter_mut().enumerate() {
            let text = &row[2 + k];
            *y = text
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{}: {e}", CSV_HEADER[2 + k])))?;
            if !(0.0..=1.0).contains(y) {
                return Err(parse_err(
                    line,
                    format!("{} = {text} outside [0, 1]", CSV_HEADER[2 + k]),
                ));
            }
        }
        let stored: Label = row[8].parse().map_err(|e| parse_err(line, e))?;
        let rec = YieldRecord::new(s1, s2, yields);
        if rec.label != stored {
            return Err(parse_err(
                line,
                format!("label {stored} disagrees with y57 = {}", rec.y_ref()),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_csv(records: &[YieldRecord], path: &Path) -> Result<(), DatasetError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(records, f)
}

pub fn load_csv(path: &Path) -> Result<Vec<YieldRecord>, DatasetError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
