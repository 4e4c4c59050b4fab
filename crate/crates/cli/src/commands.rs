use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use hybseq::align::{annealing_score, semi_global_trace, AlignParams};
use hybseq::baseline::{lda_fit, qda_fit, Classifier, LdaModel, MetricsReport, QdaModel, QDA_RIDGE};
use hybseq::bench::{self, Subject, DEFAULT_TRIALS};
use hybseq::dataset::{self, label, stratified_split, DatasetConfig, Split, YieldRecord, HIGH_THRESHOLD};
use hybseq::exec::set_threads;
use hybseq::features::{self, extract_batch, featurize, strand_features, FeatureMask, FeatureRecord, Standardizer};
use hybseq::libdesign::{
    greedy_prune, screen_library, write_conflicts, ModelPredictor, ScoreFilter, ThermoPredictor, YieldPredictor,
    DEFAULT_K, DEFAULT_THRESHOLD, MLP_COLUMNS_KEY, MLP_MEANS_KEY, MLP_STDS_KEY,
};
use hybseq::neural::{
    build_cnn, build_cnn_lite, build_mlp, predict_batch, train, with_both_orders, Arch, Encoding, Loss, Model,
    TrainConfig,
};
use hybseq::seq::{read_fasta, DnaSeq};
use hybseq::thermo::{
    duplex_energy, yield_profile, NnParamTable, ThermoError, ThermoModel, DEFAULT_TEMPS, REFERENCE_TEMP,
};
use hybseq::Exec;

use crate::config::Config;
use crate::{Cli, Command};

/// Settings resolved from flags, environment and config file.
struct Ctx {
    seed: u64,
    exec: Exec,
    thermo: ThermoModel,
    cfg: Config,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(n) = cli.global.threads.or(cfg.threads) {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        set_threads(n);
    }
    let mut thermo = ThermoModel::default();
    if let Some(p) = cli.global.params.as_ref().or(cfg.params.as_ref()) {
        thermo.nn = NnParamTable::load(p).with_context(|| format!("loading parameters from {}", p.display()))?;
    }
    let ctx = Ctx {
        seed: cli.global.seed.or(cfg.seed).unwrap_or(0),
        exec: Exec::default(),
        thermo,
        cfg,
    };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Features(a) => features_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Design(a) => design(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::Thermo(a) => thermo_cmd(&ctx, a),
        Command::Align(a) => align(&ctx, a),
    }
}

fn create(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_records(path: &Path) -> anyhow::Result<Vec<YieldRecord>> {
    dataset::load_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn split<T: Clone>(ctx: &Ctx, records: &[T], key: impl Fn(&T) -> f64) -> anyhow::Result<Split<T>> {
    let [a, b, c] = ctx.cfg.split.fractions;
    Ok(stratified_split(records, key, (a, b, c), ctx.cfg.split.bins, ctx.seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

fn pick<T: Clone>(s: &Split<T>, all: &[T], part: Part) -> Vec<T> {
    match part {
        Part::Train => s.train.clone(),
        Part::Val => s.val.clone(),
        Part::Test => s.test.clone(),
        Part::All => all.to_vec(),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of pairs.
    #[arg(long)]
    size: Option<usize>,
}

fn generate(ctx: &Ctx, a: GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.dataset.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(n) = a.size {
        cfg.target_size = n;
    }
    let g = dataset::generate(&cfg, &dataset::thermo_oracle(&ctx.thermo), ctx.exec)?;
    for w in &g.warnings {
        eprintln!("warning: {w}");
    }
    let high = g.records.iter().filter(|r| r.label.is_high()).count();
    eprintln!(
        "{} pairs, {:.1}% High at {} °C",
        g.records.len(),
        100.0 * high as f64 / g.records.len().max(1) as f64,
        cfg.reference_temp
    );
    let mut w = create(&a.out)?;
    dataset::write_csv(&g.records, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Dataset CSV from `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Temperature for the strand features, °C.
    #[arg(long, default_value_t = REFERENCE_TEMP)]
    temp: f64,
}

fn features_cmd(ctx: &Ctx, a: FeaturesArgs) -> anyhow::Result<()> {
    let recs = load_records(&a.data)?;
    let feats = featurize(&recs, &ctx.thermo, a.temp, ctx.exec)?;
    let mut w = create(&a.out)?;
    features::write_csv(&feats, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// cnn, cnn-lite or mlp.
    #[arg(long)]
    model: Option<String>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Stop after this many epochs even if validation loss still improves.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Pair layout for the CNNs: raw or rc-second (default).
    #[arg(long)]
    encoding: Option<String>,
    /// Train the CNNs on both strand orders and average both at prediction.
    #[arg(long)]
    both_orders: Option<bool>,
    /// Feature groups for the MLP, e.g. "Aln,GC" or "all".
    #[arg(long)]
    mask: Option<String>,
}

/// Network inputs and targets for one split.
struct Prepared {
    x: hybseq::neural::Tensor,
    y: Vec<f64>,
}

fn featurize_split(ctx: &Ctx, recs: &[YieldRecord]) -> anyhow::Result<Vec<FeatureRecord>> {
    Ok(featurize(recs, &ctx.thermo, REFERENCE_TEMP, ctx.exec)?)
}

fn mlp_rows(feats: &[FeatureRecord], mask: &FeatureMask) -> Vec<Vec<f64>> {
    feats.iter().map(|f| mask.apply(&f.features)).collect()
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let t = &ctx.cfg.train;
    let arch: Arch = a
        .model
        .or(t.model.clone())
        .unwrap_or_else(|| "cnn-lite".into())
        .parse()
        .map_err(anyhow::Error::msg)?;
    let encoding: Encoding = match a.encoding.or(t.encoding.clone()) {
        Some(e) => e.parse().map_err(anyhow::Error::msg)?,
        None => Encoding::RcSecond,
    };
    let both_orders = a.both_orders.or(t.both_orders).unwrap_or(true);
    let mask: FeatureMask = a.mask.or(t.mask.clone()).unwrap_or_else(|| "all".into()).parse()?;
    let lr = a.lr.or(t.lr);
    let tc = TrainConfig {
        lr: lr.unwrap_or(if arch == Arch::Mlp { 2e-4 } else { 1e-4 }),
        batch_size: a
            .batch_size
            .or(t.batch_size)
            .unwrap_or(if arch == Arch::Mlp { 1024 } else { 256 }),
        loss: if arch == Arch::Mlp { Loss::Bce } else { Loss::Mse },
        patience: a.patience.or(t.patience).unwrap_or(3),
        max_epochs: a.max_epochs.or(t.max_epochs),
        seed: ctx.seed,
    };

    let recs = load_records(&a.data)?;
    let sp = split(ctx, &recs, |r| r.y_ref())?;
    let (mut model, train_set, val_set) = match arch {
        Arch::Cnn | Arch::CnnLite => {
            let mut m = if arch == Arch::Cnn {
                build_cnn(ctx.seed)?
            } else {
                build_cnn_lite(ctx.seed)?
            };
            m.encoding = encoding;
            m.set_both_orders(both_orders);
            let prep = |v: &[YieldRecord], augment: bool| -> anyhow::Result<Prepared> {
                let pairs: Vec<_> = v.iter().map(|r| (r.s1.clone(), r.s2.clone())).collect();
                let y: Vec<f64> = v.iter().map(|r| r.y_ref()).collect();
                let (pairs, y) = if augment {
                    with_both_orders(&pairs, &y)
                } else {
                    (pairs, y)
                };
                Ok(Prepared {
                    x: hybseq::neural::encode_pairs(&pairs, hybseq::seq::DEFAULT_N_MAX, encoding)?,
                    y,
                })
            };
            (m, prep(&sp.train, both_orders)?, prep(&sp.val, false)?)
        }
        Arch::Mlp => {
            let ft = featurize_split(ctx, &sp.train)?;
            let fv = featurize_split(ctx, &sp.val)?;
            let rows = mlp_rows(&ft, &mask);
            let st = Standardizer::fit(&rows)?;
            let cols = mask.columns();
            let mut m = build_mlp(cols.len(), ctx.seed)?;
            m.extras
                .insert(MLP_COLUMNS_KEY.into(), cols.iter().map(|&c| c as f64).collect());
            m.extras.insert(MLP_MEANS_KEY.into(), st.means.clone());
            m.extras.insert(MLP_STDS_KEY.into(), st.stds.clone());
            let prep = |f: &[FeatureRecord]| -> anyhow::Result<Prepared> {
                let rows = st.transform_all(&mlp_rows(f, &mask));
                Ok(Prepared {
                    x: hybseq::neural::Tensor::new(vec![rows.len(), cols.len()], rows.concat())?,
                    y: f.iter().map(|r| if r.label.is_high() { 1.0 } else { 0.0 }).collect(),
                })
            };
            (m, prep(&ft)?, prep(&fv)?)
        }
    };
    eprintln!(
        "training {arch} ({} parameters) on {} pairs, validating on {}",
        model.param_count(),
        train_set.y.len(),
        val_set.y.len()
    );
    let hist = train(
        &mut model,
        (&train_set.x, &train_set.y),
        (&val_set.x, &val_set.y),
        &tc,
        |e| {
            eprintln!(
                "epoch {:>3}  train {:.6}  val {:.6}{}",
                e.epoch + 1,
                e.train_loss,
                e.val_loss,
                if e.improved { "  *" } else { "" }
            );
        },
    )?;
    eprintln!(
        "best epoch {} of {}, validation loss {:.6}",
        hist.best_epoch + 1,
        hist.epochs.len(),
        hist.best_val_loss()
    );
    model
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Lda,
    Qda,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    model: Option<PathBuf>,
    /// Fit a discriminant baseline on the training split instead.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Feature groups for the baseline.
    #[arg(long, default_value = "all")]
    mask: String,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = Part::Test)]
    part: Part,
    /// Label with the oracle yield at this temperature (°C).
    #[arg(long, default_value_t = REFERENCE_TEMP)]
    label_temp: f64,
}

fn eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    let recs = load_records(&a.data)?;
    let sp = split(ctx, &recs, |r| r.y_ref())?;
    let target = pick(&sp, &recs, a.part);
    let yields: Vec<f64> = target
        .iter()
        .map(|r| {
            r.yield_at(a.label_temp)
                .context("label temperature is not a dataset column")
        })
        .collect::<anyhow::Result<_>>()?;
    let truth: Vec<bool> = yields.iter().map(|&y| label(y, HIGH_THRESHOLD).is_high()).collect();

    let report = match (a.model, a.baseline) {
        (Some(path), _) => {
            let model = Model::load(&path).with_context(|| format!("reading {}", path.display()))?;
            let arch = model.arch;
            let p = ModelPredictor::new(model, ctx.thermo.clone());
            let pairs: Vec<_> = target.iter().map(|r| (r.s1.clone(), r.s2.clone())).collect();
            let pred = p.predict(&pairs)?;
            if arch == Arch::Mlp {
                MetricsReport::from_scores(&arch.to_string(), &pred, &truth, 0.5, None)?
            } else {
                MetricsReport::from_scores(&arch.to_string(), &pred, &truth, HIGH_THRESHOLD, Some(&yields))?
            }
        }
        (None, Some(b)) => {
            let mask: FeatureMask = a.mask.parse()?;
            let ft = featurize_split(ctx, &sp.train)?;
            let rows = mlp_rows(&ft, &mask);
            let st = Standardizer::fit(&rows)?;
            let xt = st.transform_all(&rows);
            let yt: Vec<bool> = ft.iter().map(|r| r.label.is_high()).collect();
            let fe = featurize_split(ctx, &target)?;
            let xe = st.transform_all(&mlp_rows(&fe, &mask));
            let (name, scores) = match b {
                Baseline::Lda => ("lda", lda_fit(&xt, &yt, 0.0)?.score_batch(&xe, ctx.exec)),
                Baseline::Qda => ("qda", qda_fit(&xt, &yt, QDA_RIDGE)?.score_batch(&xe, ctx.exec)),
            };
            MetricsReport::from_scores(&format!("{name}[{mask}]"), &scores, &truth, 0.0, None)?
        }
        (None, None) => bail!("either --model or --baseline is required"),
    };
    let mut out = io::stdout().lock();
    writeln!(out, "{report}")?;
    write!(out, "{}", report.to_records())?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with `s1` and `s2` columns (other columns are ignored).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    batch: usize,
}

fn read_pairs(path: &Path) -> anyhow::Result<Vec<(DnaSeq, DnaSeq)>> {
    let mut rd = csv::Reader::from_reader(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ));
    let h = rd.headers()?.clone();
    let col = |name: &str| {
        h.iter()
            .position(|c| c == name)
            .with_context(|| format!("no `{name}` column"))
    };
    let (c1, c2) = (col("s1")?, col("s2")?);
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let parse = |c: usize| DnaSeq::parse(&row[c]).with_context(|| format!("row {}", i + 2));
        out.push((parse(c1)?, parse(c2)?));
    }
    Ok(out)
}

fn predict(ctx: &Ctx, a: PredictArgs) -> anyhow::Result<()> {
    let model = Model::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let pairs = read_pairs(&a.input)?;
    let mut p = ModelPredictor::new(model, ctx.thermo.clone());
    p.batch = a.batch.max(1);
    let ys = p.predict(&pairs)?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["s1", "s2", "yield"])?;
    for ((s1, s2), y) in pairs.iter().zip(ys) {
        w.write_record([s1.as_str(), s2.as_str(), &format!("{y:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorKind {
    Thermo,
    Cnn,
    CnnLite,
    Mlp,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Library FASTA.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = PredictorKind::Thermo)]
    predictor: PredictorKind,
    /// Checkpoint for the network predictors.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Drop candidates whose annealing score is below this.
    #[arg(long)]
    min_score: Option<i32>,
    /// Remove strands until no conflict is left.
    #[arg(long)]
    prune: bool,
    /// Conflicts CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the pruned library here.
    #[arg(long)]
    kept: Option<PathBuf>,
}

fn design(ctx: &Ctx, a: DesignArgs) -> anyhow::Result<()> {
    let d = &ctx.cfg.design;
    let k = a.k.or(d.k).unwrap_or(DEFAULT_K);
    let threshold = a.threshold.or(d.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let prune = a.prune || d.prune.unwrap_or(false);
    let filter = a.min_score.or(d.min_score).map(|min_score| ScoreFilter {
        min_score,
        params: AlignParams::default(),
    });
    let recs = read_fasta(BufReader::new(
        File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?,
    ))?;
    let seqs: Vec<DnaSeq> = recs.iter().map(|r| r.seq.clone()).collect();
    let predictor: Box<dyn YieldPredictor> = match a.predictor {
        PredictorKind::Thermo => Box::new(ThermoPredictor::new(ctx.thermo.clone())),
        kind => {
            let path = a.model.as_ref().context("--model is required for network predictors")?;
            let m = Model::load(path).with_context(|| format!("reading {}", path.display()))?;
            let want = match kind {
                PredictorKind::Cnn => Arch::Cnn,
                PredictorKind::CnnLite => Arch::CnnLite,
                _ => Arch::Mlp,
            };
            if m.arch != want {
                bail!("{} holds a {} model, not {want}", path.display(), m.arch);
            }
            Box::new(ModelPredictor::new(m, ctx.thermo.clone()))
        }
    };
    let rep = screen_library(&seqs, k, filter.as_ref(), predictor.as_ref(), threshold, ctx.exec)?;
    let p = rep.provenance;
    eprintln!(
        "{} sequences, k = {k}: {} raw hits, {} self pairs, {} symmetric duplicates, {} score-filtered",
        seqs.len(),
        p.raw_hits,
        p.self_pairs,
        p.symmetric_duplicates,
        p.score_filtered
    );
    eprintln!(
        "{} candidates ({:.4}% of all pairs), {} conflicts at yield >= {threshold}",
        rep.candidates,
        100.0 * rep.candidate_fraction(),
        rep.conflicts.len()
    );
    let mut w = create(&a.out)?;
    write_conflicts(&rep.conflicts, &mut w)?;
    w.flush()?;
    if prune || a.kept.is_some() {
        let kept = greedy_prune(seqs.len(), &rep.conflicts);
        eprintln!("{} of {} sequences kept after pruning", kept.len(), seqs.len());
        if let Some(path) = &a.kept {
            let mut w = BufWriter::new(File::create(path)?);
            for &i in &kept {
                let r = &recs[i as usize];
                writeln!(w, ">{}\n{}", r.id, r.seq)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Subjects to time: thermo-oracle, cnn, cnn-lite, mlp, lda, qda.
    #[arg(long = "subject", default_values_t = vec!["cnn-lite".to_string(), "thermo-oracle".to_string()])]
    subjects: Vec<String>,
    /// Number of synthetic pairs.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Checkpoint for a network subject (an untrained network otherwise).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also print machine-readable records.
    #[arg(long)]
    records: bool,
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs) -> anyhow::Result<()> {
    let b = &ctx.cfg.bench;
    let n = a.n.or(b.n).unwrap_or(255_701);
    let batch = a.batch.or(b.batch).unwrap_or(512);
    let trials = a.trials.or(b.trials).unwrap_or(DEFAULT_TRIALS);
    let subjects: Vec<Subject> = a
        .subjects
        .iter()
        .map(|s| s.parse().map_err(anyhow::Error::msg))
        .collect::<anyhow::Result<_>>()?;
    let pairs = bench::synthetic_pairs(n, ctx.seed);
    let mut reports = Vec::new();
    for s in subjects {
        let name = s.to_string();
        let r = match s {
            Subject::ThermoOracle => {
                let p = ThermoPredictor::new(ctx.thermo.clone());
                bench::run(&name, n, 1, trials, || p.predict(&pairs).map(drop))?
            }
            Subject::Cnn | Subject::CnnLite | Subject::Mlp => {
                let model = match &a.model {
                    Some(path) => Model::load(path)?,
                    None if s == Subject::Cnn => build_cnn(ctx.seed)?,
                    None if s == Subject::CnnLite => build_cnn_lite(ctx.seed)?,
                    None => untrained_mlp(ctx, &pairs)?,
                };
                let p = ModelPredictor::new(model, ctx.thermo.clone());
                let x = p.inputs(&pairs)?;
                bench::run(&name, n, batch, trials, || {
                    predict_batch(&p.model, &x, batch, ctx.exec).map(drop)
                })?
            }
            Subject::Lda | Subject::Qda => {
                let x = extract_batch(&pairs, &ctx.thermo, REFERENCE_TEMP, ctx.exec)?;
                let rows: Vec<Vec<f64>> = x.iter().map(|f| f.0.to_vec()).collect();
                let clf = fit_for_bench(ctx, s)?;
                bench::run(&name, n, 1, trials, || {
                    match &clf {
                        Fitted::Lda(m) => m.score_batch(&rows, ctx.exec),
                        Fitted::Qda(m) => m.score_batch(&rows, ctx.exec),
                    };
                    Ok::<_, anyhow::Error>(())
                })?
            }
        };
        println!("{r}");
        reports.push(r);
    }
    if reports.len() > 1 {
        let base = &reports[reports.len() - 1];
        for r in &reports[..reports.len() - 1] {
            println!(
                "{} vs {}: {:.2}x throughput",
                r.subject,
                base.subject,
                r.throughput / base.throughput
            );
        }
    }
    if a.records {
        for r in &reports {
            print!("{}", r.to_records());
        }
    }
    Ok(())
}

fn untrained_mlp(ctx: &Ctx, pairs: &[(DnaSeq, DnaSeq)]) -> anyhow::Result<Model> {
    let feats = extract_batch(pairs, &ctx.thermo, REFERENCE_TEMP, ctx.exec)?;
    let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.0.to_vec()).collect();
    let st = Standardizer::fit(&rows)?;
    let mut m = build_mlp(rows[0].len(), ctx.seed)?;
    m.extras
        .insert(MLP_COLUMNS_KEY.into(), (0..rows[0].len()).map(|c| c as f64).collect());
    m.extras.insert(MLP_MEANS_KEY.into(), st.means);
    m.extras.insert(MLP_STDS_KEY.into(), st.stds);
    Ok(m)
}

enum Fitted {
    Lda(LdaModel),
    Qda(QdaModel),
}

/// A discriminant fitted on a small generated dataset; random pairs alone
/// almost never hybridise, so they cannot supply both classes.
fn fit_for_bench(ctx: &Ctx, s: Subject) -> anyhow::Result<Fitted> {
    let cfg = DatasetConfig {
        target_size: 2000,
        seed: ctx.seed,
        ..DatasetConfig::default()
    };
    let g = dataset::generate(&cfg, &dataset::thermo_oracle(&ctx.thermo), ctx.exec)?;
    let f = featurize_split(ctx, &g.records)?;
    let rows: Vec<Vec<f64>> = f.iter().map(|r| r.features.0.to_vec()).collect();
    let y: Vec<bool> = f.iter().map(|r| r.label.is_high()).collect();
    Ok(if s == Subject::Lda {
        Fitted::Lda(lda_fit(&rows, &y, 0.0)?)
    } else {
        Fitted::Qda(qda_fit(&rows, &y, QDA_RIDGE)?)
    })
}

#[derive(Debug, Args)]
pub struct ThermoArgs {
    /// Two strands: yields across the standard temperatures.
    #[arg(long, num_args = 2, value_names = ["S1", "S2"], conflicts_with = "strand", required_unless_present = "strand")]
    pair: Option<Vec<String>>,
    /// One strand: monomer, homodimer and structure quantities.
    #[arg(long)]
    strand: Option<String>,
    #[arg(long, default_value_t = REFERENCE_TEMP)]
    temp: f64,
}

fn thermo_cmd(ctx: &Ctx, a: ThermoArgs) -> anyhow::Result<()> {
    let m = &ctx.thermo;
    let mut out = io::stdout().lock();
    if let Some(p) = a.pair {
        let (s1, s2) = (DnaSeq::parse(&p[0])?, DnaSeq::parse(&p[1])?);
        writeln!(out, "annealing_score={}", annealing_score(&s1, &s2, &m.align))?;
        match duplex_energy(&s1, &s2, &m.align, &m.nn) {
            Ok(e) => {
                let t = a.temp + 273.15;
                writeln!(out, "dg_kcal_per_mol={:.4}", e.dg(t))?;
                writeln!(out, "k_ab_per_molar={:.6e}", e.association_constant(a.temp))?;
            }
            Err(ThermoError::NoPairing) => writeln!(out, "dg_kcal_per_mol=none")?,
            Err(e) => return Err(e.into()),
        }
        let mut temps = DEFAULT_TEMPS.to_vec();
        if !temps.contains(&a.temp) {
            temps.push(a.temp);
        }
        let ys = yield_profile(&s1, &s2, &temps, m)?;
        for (t, y) in temps.iter().zip(ys) {
            writeln!(out, "yield_{t}={y:.6}")?;
        }
    } else if let Some(s) = a.strand {
        let s = DnaSeq::parse(&s)?;
        let f = strand_features(&s, m, a.temp)?;
        writeln!(out, "gc={:.6}", f.gc)?;
        writeln!(out, "structure_score={:.6}", f.structure)?;
        writeln!(out, "monomer_um={:.6}", f.single)?;
        writeln!(out, "homodimer_um={:.6}", f.homodimer)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
    pair: Vec<String>,
    /// Align A against the reverse complement of B.
    #[arg(long)]
    rc: bool,
    /// Print the aligned rows and edit script.
    #[arg(long)]
    trace: bool,
}

fn align(ctx: &Ctx, a: AlignArgs) -> anyhow::Result<()> {
    let x = DnaSeq::parse(&a.pair[0])?;
    let mut y = DnaSeq::parse(&a.pair[1])?;
    if a.rc {
        y = y.reverse_complement();
    }
    let r = semi_global_trace(&x, &y, &ctx.thermo.align);
    let mut out = io::stdout().lock();
    writeln!(out, "{}", r.score)?;
    if a.trace {
        writeln!(out, "{}\n{}\n{}", r.aligned_rows.0, r.aligned_rows.1, r.cigar)?;
    }
    Ok(())
}
