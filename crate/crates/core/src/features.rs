//! The nine per-pair features used by the discriminant baselines.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::align::annealing_score;
use crate::dataset::{label, Label, YieldRecord, HIGH_THRESHOLD};
use crate::exec::Exec;
use crate::seq::DnaSeq;
use crate::thermo::{association_constant, single_structure_score, single_tube, ThermoError, ThermoModel};

pub const N_FEATURES: usize = 9;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["f0", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature mask selects nothing")]
    EmptyMask,
    #[error("unknown feature group {0:?}")]
    UnknownGroup(String),
    #[error("need at least 2 rows to standardise, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// f0 annealing score; f1, f2 GC fraction; f3, f4 structure score
/// (kcal/mol); f5, f6 free single strand and f7, f8 homodimer concentration
/// of each strand alone in a 1 µM tube (µM).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-strand quantities: GC, structure score, monomer, homodimer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrandFeatures {
    pub gc: f64,
    pub structure: f64,
    pub single: f64,
    pub homodimer: f64,
}

pub fn strand_features(s: &DnaSeq, model: &ThermoModel, temp_c: f64) -> Result<StrandFeatures, ThermoError> {
    let k = association_constant(s, s, temp_c, model)?;
    let (a, c_aa) = single_tube(model.strand_conc, k);
    Ok(StrandFeatures {
        gc: s.gc_content(),
        structure: single_structure_score(s)?,
        single: a * 1e6,
        homodimer: c_aa * 1e6,
    })
}

fn assemble(score: i32, x: &StrandFeatures, y: &StrandFeatures) -> FeatureVector {
    FeatureVector([
        score as f64,
        x.gc,
        y.gc,
        x.structure,
        y.structure,
        x.single,
        y.single,
        x.homodimer,
        y.homodimer,
    ])
}

pub fn extract(s1: &DnaSeq, s2: &DnaSeq, model: &ThermoModel, temp_c: f64) -> Result<FeatureVector, ThermoError> {
    let x = strand_features(s1, model, temp_c)?;
    let y = strand_features(s2, model, temp_c)?;
    Ok(assemble(annealing_score(s1, s2, &model.align), &x, &y))
}

/// Features for many pairs; strand quantities are computed once per
/// distinct strand.
pub fn extract_batch(
    pairs: &[(DnaSeq, DnaSeq)],
    model: &ThermoModel,
    temp_c: f64,
    exec: Exec,
) -> Result<Vec<FeatureVector>, ThermoError> {
    let mut distinct: Vec<&DnaSeq> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    distinct.sort();
    distinct.dedup();
    let per_strand = exec.try_map(&distinct, |s| strand_features(s, model, temp_c))?;
    let lookup: HashMap<&DnaSeq, StrandFeatures> = distinct.into_iter().zip(per_strand).collect();
    Ok(exec.map(pairs, |(a, b)| {
        assemble(annealing_score(a, b, &model.align), &lookup[a], &lookup[b])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureGroup {
    Aln,
    Gc,
    Sc,
    Pc,
    Smfe,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [Self::Aln, Self::Gc, Self::Sc, Self::Pc, Self::Smfe];

    /// Columns of the feature vector this group covers.
    pub fn columns(self) -> &'static [usize] {
        match self {
            Self::Aln => &[0],
            Self::Gc => &[1, 2],
            Self::Sc => &[5, 6],
            Self::Pc => &[7, 8],
            Self::Smfe => &[3, 4],
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aln => "Aln",
            Self::Gc => "GC",
            Self::Sc => "SC",
            Self::Pc => "PC",
            Self::Smfe => "SMFE",
        })
    }
}

impl FromStr for FeatureGroup {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownGroup(s.to_string()))
    }
}

/// A non-empty set of feature groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMask {
    groups: Vec<FeatureGroup>,
}

impl FeatureMask {
    pub fn new(groups: &[FeatureGroup]) -> Result<Self, FeatureError> {
        let mut groups = groups.to_vec();
        groups.sort();
        groups.dedup();
        if groups.is_empty() {
            return Err(FeatureError::EmptyMask);
        }
        Ok(Self { groups })
    }

    pub fn full() -> Self {
        Self {
            groups: FeatureGroup::ALL.to_vec(),
        }
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    /// Selected columns in ascending (canonical) order.
    pub fn columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self.groups.iter().flat_map(|g| g.columns()).copied().collect();
        cols.sort_unstable();
        cols
    }

    pub fn apply(&self, v: &FeatureVector) -> Vec<f64> {
        self.columns().into_iter().map(|c| v.0[c]).collect()
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.groups.iter().map(|g| g.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureMask {
    type Err = FeatureError;
    /// Comma-separated group names, e.g. `Aln,GC`; `all` selects everything.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::full());
        }
        let groups = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(&groups)
    }
}

pub fn apply_mask(v: &FeatureVector, m: &FeatureMask) -> Vec<f64> {
    m.apply(v)
}

/// Column-wise z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; zero-variance columns keep std 1.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, FeatureError> {
        if rows.len() < 2 {
            return Err(FeatureError::TooFewRows(rows.len()));
        }
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let stds = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 * (1.0 + s) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn transform_all<R: AsRef<[f64]>>(&self, rows: &[R]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r.as_ref())).collect()
    }
}

pub fn standardize<R: AsRef<[f64]>>(rows: &[R]) -> Result<Standardizer, FeatureError> {
    Standardizer::fit(rows)
}

/// A featurised pair ready for the baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub s1: DnaSeq,
    pub s2: DnaSeq,
    pub features: FeatureVector,
    pub y_ref: f64,
    pub label: Label,
}

pub fn featurize(
    records: &[YieldRecord],
    model: &ThermoModel,
    temp_c: f64,
    exec: Exec,
) -> Result<Vec<FeatureRecord>, ThermoError> {
    let pairs: Vec<(DnaSeq, DnaSeq)> = records.iter().map(|r| (r.s1.clone(), r.s2.clone())).collect();
    let feats = extract_batch(&pairs, model, temp_c, exec)?;
    Ok(records
        .iter()
        .zip(feats)
        .map(|(r, features)| FeatureRecord {
            s1: r.s1.clone(),
            s2: r.s2.clone(),
            features,
            y_ref: r.y_ref(),
            label: r.label,
        })
        .collect())
}

pub fn write_csv<W: Write>(records: &[FeatureRecord], w: W) -> Result<(), FeatureError> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| FeatureError::Io(e.into());
    let mut header = vec!["s1", "s2"];
    header.extend(FEATURE_NAMES);
    header.extend(["y57", "label"]);
    wr.write_record(&header).map_err(io)?;
    for r in records {
        let mut row = vec![r.s1.to_string(), r.s2.to_string()];
        row.extend(r.features.0.iter().map(|x| format!("{x}")));
        row.push(format!("{:.6}", r.y_ref));
        row.push(r.label.to_string());
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<FeatureRecord>, FeatureError> {
    let mut rd = csv::Reader::from_reader(r);
    let err = |line: u64, msg: String| FeatureError::Parse { line, msg };
    let header = rd.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.len() != N_FEATURES + 4 || &header[0] != "s1" || &header[N_FEATURES + 3] != "label" {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |k: usize| -> Result<f64, FeatureError> {
            row[k]
                .parse::<f64>()
                .map_err(|e| err(line, format!("column {}: {e}", k + 1)))
        };
        let s1 = DnaSeq::parse(&row[0]).map_err(|e| err(line, e.to_string()))?;
        let s2 = DnaSeq::parse(&row[1]).map_err(|e| err(line, e.to_string()))?;
        let mut f = [0.0; N_FEATURES];
        for (k, x) in f.iter_mut().enumerate() {
            *x = num(2 + k)?;
        }
        let y_ref = num(N_FEATURES + 2)?;
        let stored: Label = row[N_FEATURES + 3].parse().map_err(|e| err(line, e))?;
        if stored != label(y_ref, HIGH_THRESHOLD) {
            return Err(err(line, format!("label {stored} disagrees with y57 = {y_ref}")));
        }
        out.push(FeatureRecord {
            s1,
            s2,
            features: FeatureVector(f),
            y_ref,
            label: stored,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: &str) -> DnaSeq {
        DnaSeq::parse(x).unwrap()
    }

    #[test]
    fn perfect_complement_scores_130() {
        let m = ThermoModel::default();
        let a = s("GAATACTGTCAGTGAGAGGATCTGCC");
        let v = extract(&a, &a.reverse_complement(), &m, 57.0).unwrap();
        assert_eq!(v.0[0], 130.0);
    }

    #[test]
    fn self_complementary_strand_is_homodimer_dominant() {
        let m = ThermoModel::default();
        let a = s("CCATGGAGGCGCGCCTTT");
        let f = strand_features(&a, &m, 37.0).unwrap();
        assert!(f.homodimer > f.single, "{f:?}");
        assert!((f.single + 2.0 * f.homodimer - 1.0).abs() < 1e-6);
    }

    #[test]
    fn masks_select_canonical_columns() {
        let v = FeatureVector([0., 1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(apply_mask(&v, &"Aln".parse().unwrap()), vec![0.0]);
        assert_eq!(apply_mask(&v, &FeatureMask::full()), v.0.to_vec());
        let free: FeatureMask = "GC,SC,PC,SMFE".parse().unwrap();
        assert_eq!(apply_mask(&v, &free), vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        assert!(matches!(FeatureMask::new(&[]), Err(FeatureError::EmptyMask)));
        assert!(matches!("".parse::<FeatureMask>(), Err(FeatureError::EmptyMask)));
        assert!("Aln,XYZ".parse::<FeatureMask>().is_err());
        assert_eq!("all".parse::<FeatureMask>().unwrap(), FeatureMask::full());
    }

    #[test]
    fn standardizer_statistics() {
        let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, 4.0], vec![8.0, 5.0, 9.0]];
        let st = standardize(&rows).unwrap();
        let z = st.transform_all(&rows);
        for c in 0..3 {
            let mean: f64 = z.iter().map(|r| r[c]).sum::<f64>() / 3.0;
            let var: f64 = z.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
            if c == 1 {
                assert!(z.iter().all(|r| r[c] == 0.0));
            } else {
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
        assert!(matches!(standardize(&rows[..1]), Err(FeatureError::TooFewRows(1))));
    }

    #[test]
    fn batch_matches_single_extraction_and_csv_round_trips() {
        let m = ThermoModel::default();
        let a = s("GAATACTGTCAGTGAGAGGATCTGCC");
        let b = s("TTGTCATACGCTGTAAGAG");
        let pairs = vec![
            (a.clone(), b.clone()),
            (b.clone(), a.reverse_complement()),
            (a.clone(), b.clone()),
        ];
        let batch = extract_batch(&pairs, &m, 57.0, Exec::Parallel).unwrap();
        for ((x, y), v) in pairs.iter().zip(&batch) {
            assert_eq!(*v, extract(x, y, &m, 57.0).unwrap());
        }
        let recs: Vec<FeatureRecord> = pairs
            .iter()
            .zip(&batch)
            .map(|((x, y), f)| FeatureRecord {
                s1: x.clone(),
                s2: y.clone(),
                features: *f,
                y_ref: 0.25,
                label: Label::High,
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn swapping_inputs_swaps_strand_columns(a in "[ACGT]{18,26}", b in "[ACGT]{18,26}") {
            let m = ThermoModel::default();
            let (a, b) = (s(&a), s(&b));
            let x = extract(&a, &b, &m, 57.0).unwrap().0;
            let y = extract(&b, &a, &m, 57.0).unwrap().0;
            prop_assert_eq!(x[0], y[0]);
            for (p, q) in [(1, 2), (3, 4), (5, 6), (7, 8)] {
                prop_assert_eq!(x[p], y[q]);
                prop_assert_eq!(x[q], y[p]);
            }
            prop_assert!((x[5] + 2.0 * x[7] - 1.0).abs() < 1e-6);
        }

        #[test]
        fn transform_is_affine(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20),
            x in prop::collection::vec(-1e3f64..1e3, 3),
            y in prop::collection::vec(-1e3f64..1e3, 3),
            alpha in 0.0f64..1.0,
        ) {
            let st = standardize(&rows).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = st.transform(&mix);
            let (tx, ty) = (st.transform(&x), st.transform(&y));
            for k in 0..3 {
                let rhs = alpha * tx[k] + (1.0 - alpha) * ty[k];
                prop_assert!((lhs[k] - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()));
            }
        }
    }
}
