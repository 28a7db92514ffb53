//! Command-line front end: train, encode, eval, compare (against the
//! random-projection baseline), and selftest.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure. Every run is a deterministic function of its inputs and seed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use structhash::data::{
    fit_kernel_map, ground_truth_by_label, ground_truth_by_percentile,
    ground_truth_by_percentile_external, load_csv, load_labels, load_raw, sample_neighborhood,
    standardize, DataMatrix, KernelMapConfig, QueryNeighborhood, Standardizer,
};
use structhash::error::{Error, Result};
use structhash::exec::derive_seed;
use structhash::learner::{train_structhash, HashLearnConfig, Optimizer, TrainConfig};
use structhash::measures::{MeasureSpec, NdcgNormalizer};
use structhash::model::HashModel;
use structhash::retrieval::{encode_raw, evaluate, lsh_baseline, rank_all, MetricsReport};
use structhash::solver::{SolverConfig, TrainQuery};

#[derive(Debug, Parser)]
#[command(
    name = "structhash",
    about = "Compact binary hash codes learned by directly optimizing ranking measures",
    version
)]
pub struct Cli {
    /// Worker threads for the data-parallel sections (also honors the
    /// STRUCTHASH_THREADS environment variable; 0 = automatic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a hash model from a training dataset.
    Train(TrainArgs),
    /// Encode a dataset under a trained model into a packed code file.
    Encode(EncodeArgs),
    /// Score retrieval quality of encoded queries against an encoded database.
    Eval(EvalArgs),
    /// Train, then evaluate against a random-projection baseline at equal bits.
    Compare(CompareArgs),
    /// Run the built-in verification suites at desk scale.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Csv,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Auc,
    Ndcg,
    Pak,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizerArg {
    /// Gains normalized over min(K, |relevant|) positions (zero self-loss).
    Ideal,
    /// Gains normalized over all K positions.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    QuasiNewton,
    GradientAscent,
}

#[derive(Debug, Clone, Args)]
pub struct DataSource {
    /// Feature file.
    #[arg(long)]
    pub data: PathBuf,
    /// Feature file format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FileFormat,
    /// Labels file (one integer per line, aligned with rows).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Interpret the final CSV column as an integer class label.
    #[arg(long, conflicts_with = "labels")]
    pub labels_last_column: bool,
}

impl DataSource {
    pub fn load(&self) -> Result<(DataMatrix, Option<Vec<i64>>)> {
        let (matrix, inline_labels) = match self.format {
            FileFormat::Csv => load_csv(&self.data, self.labels_last_column)?,
            FileFormat::Raw => (load_raw(&self.data)?, None),
        };
        let labels = match (&self.labels, inline_labels) {
            (Some(path), _) => {
                let l = load_labels(path)?;
                if l.len() != matrix.rows() {
                    return Err(Error::data(format!(
                        "{} labels for {} rows",
                        l.len(),
                        matrix.rows()
                    )));
                }
                Some(l)
            }
            (None, l) => l,
        };
        Ok((matrix, labels))
    }
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    /// Ranking loss to optimize.
    #[arg(long, value_enum, default_value = "ndcg")]
    pub loss: LossKind,
    /// Cutoff K for ndcg and pak.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// NDCG normalizer mode.
    #[arg(long, value_enum, default_value = "ideal")]
    pub ndcg_normalizer: NormalizerArg,
}

impl MeasureArgs {
    pub fn spec(&self) -> MeasureSpec {
        let normalizer = match self.ndcg_normalizer {
            NormalizerArg::Ideal => NdcgNormalizer::Ideal,
            NormalizerArg::Fixed => NdcgNormalizer::FixedK,
        };
        match self.loss {
            LossKind::Auc => MeasureSpec::auc(),
            LossKind::Ndcg => MeasureSpec { kind: structhash::measures::MeasureKind::Ndcg, k: self.k, ndcg_normalizer: normalizer },
            LossKind::Pak => MeasureSpec::precision_at(self.k),
            LossKind::Map => MeasureSpec::mean_average_precision(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// Distance-percentile ground truth (used when no labels are given).
    #[arg(long, default_value_t = 2.0)]
    pub percentile: f64,
    /// Relevant neighbors sampled per query.
    #[arg(long, default_value_t = 50)]
    pub relevant: usize,
    /// Irrelevant neighbors sampled per query.
    #[arg(long, default_value_t = 50)]
    pub irrelevant: usize,
    /// Code length.
    #[arg(long, default_value_t = 64)]
    pub bits: usize,
    /// Slack penalty of the weight solve.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Cutting-plane violation tolerance.
    #[arg(long, default_value_t = 1e-3)]
    pub eps_cp: f64,
    #[arg(long, default_value_t = 100)]
    pub max_cp_iters: usize,
    /// Map features through an RBF kernel on sampled anchors before hashing.
    #[arg(long)]
    pub kernel: bool,
    /// Kernel anchor count.
    #[arg(long, default_value_t = 300)]
    pub anchors: usize,
    /// Kernel bandwidth; defaults to the mean pairwise distance of a sample.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Skip feature standardization.
    #[arg(long)]
    pub no_standardize: bool,
    /// Sigmoid sharpness of the smoothed subproblem.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    /// Random-plane initializer pool size.
    #[arg(long, default_value_t = 50)]
    pub n_random_planes: usize,
    #[arg(long, value_enum, default_value = "quasi-newton")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 200)]
    pub max_opt_iters: usize,
    /// Re-center each accepted plane's offset to the projection median.
    #[arg(long)]
    pub balanced_bits: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub measure: MeasureArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Output model file (JSON).
    #[arg(long)]
    pub model_out: PathBuf,
    /// Output per-iteration trace (tab-separated).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// Output packed code file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Packed codes of the database.
    #[arg(long)]
    pub db_codes: PathBuf,
    /// Packed codes of the queries.
    #[arg(long)]
    pub query_codes: PathBuf,
    /// Database labels (with --query-labels: label-agreement ground truth).
    #[arg(long, requires = "query_labels")]
    pub db_labels: Option<PathBuf>,
    #[arg(long, requires = "db_labels")]
    pub query_labels: Option<PathBuf>,
    /// Database features (with --query-data: percentile ground truth).
    #[arg(long, requires = "query_data", conflicts_with = "db_labels")]
    pub db_data: Option<PathBuf>,
    #[arg(long, requires = "db_data")]
    pub query_data: Option<PathBuf>,
    /// Feature file format for --db-data/--query-data.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FileFormat,
    /// Percentile for distance ground truth.
    #[arg(long, default_value_t = 2.0)]
    pub percentile: f64,
    /// Metric cutoff K.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Seed echoed into the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report prefix: writes <prefix>.json, <prefix>_metrics.csv,
    /// <prefix>_pr.csv.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub measure: MeasureArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Held-out query features (same format as --data).
    #[arg(long)]
    pub query_data: PathBuf,
    /// Held-out query labels (required when the training set has labels).
    #[arg(long)]
    pub query_labels: Option<PathBuf>,
    /// Metric cutoff for the evaluation (defaults to the training K).
    #[arg(long)]
    pub eval_k: Option<usize>,
    /// Report prefix: writes <prefix>_structhash.* and <prefix>_lsh.*.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Data(_)
        | Error::DimMismatch(_)
        | Error::UndefinedMeasure(_)
        | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

struct PreparedTraining {
    hashing_space: DataMatrix,
    stats: Option<Standardizer>,
    kernel: Option<structhash::data::KernelMap>,
    queries: Vec<TrainQuery>,
    skipped_queries: usize,
}

fn prepare_training(
    raw: &DataMatrix,
    labels: Option<&[i64]>,
    t: &TrainingArgs,
) -> Result<PreparedTraining> {
    if t.bits == 0 {
        return Err(Error::config("--bits must be at least 1"));
    }
    let (standardized, stats) = if t.no_standardize {
        (raw.clone(), None)
    } else {
        let (s, st) = standardize(raw)?;
        (s, Some(st))
    };
    let (hashing_space, kernel) = if t.kernel {
        let cfg = KernelMapConfig { anchor_count: t.anchors, bandwidth: t.bandwidth, seed: t.seed };
        let km = fit_kernel_map(&standardized, &cfg)?;
        (km.apply(&standardized)?, Some(km))
    } else {
        (standardized, None)
    };

    // Ground truth on the raw feature space for the percentile mode, by
    // label agreement otherwise; sampling is seeded per query.
    let mut queries = Vec::new();
    let mut skipped = 0usize;
    for i in 0..raw.rows() {
        let full = match labels {
            Some(l) => ground_truth_by_label(l, i),
            None => ground_truth_by_percentile(raw, i, t.percentile)?,
        };
        if !full.has_both_sides() {
            skipped += 1;
            continue;
        }
        let sampled =
            sample_neighborhood(&full, t.relevant, t.irrelevant, derive_seed(t.seed, i as u64))?;
        queries.push(TrainQuery { row: i, gt: sampled });
    }
    if queries.is_empty() {
        return Err(Error::data("no query has both relevant and irrelevant neighbors"));
    }
    Ok(PreparedTraining { hashing_space, stats, kernel, queries, skipped_queries: skipped })
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        learn: HashLearnConfig {
            alpha: t.alpha,
            n_random_planes: t.n_random_planes,
            optimizer: match t.optimizer {
                OptimizerArg::QuasiNewton => Optimizer::QuasiNewton,
                OptimizerArg::GradientAscent => Optimizer::GradientAscent,
            },
            max_opt_iters: t.max_opt_iters,
            seed: t.seed,
            balanced_bits: t.balanced_bits,
            ..Default::default()
        },
        solver: SolverConfig {
            c: t.c,
            eps_cp: t.eps_cp,
            max_cp_iters: t.max_cp_iters,
            ..Default::default()
        },
    }
}

fn trace_header(args: &TrainArgs, skipped: usize) -> String {
    let t = &args.training;
    let m = &args.measure;
    let mut h = String::from("# structhash training trace\n");
    let _ = writeln!(
        h,
        "# data={} format={:?} labels={} bits={} loss={:?} k={} ndcg_normalizer={:?} c={} \
         eps_cp={} max_cp_iters={} relevant={} irrelevant={} percentile={} kernel={} anchors={} \
         bandwidth={:?} standardize={} alpha={} smooth_eps={} n_random_planes={} optimizer={:?} \
         max_opt_iters={} grad_tol={} balanced_bits={} seed={} skipped_queries={}",
        args.source.data.display(),
        args.source.format,
        args.source.labels.is_some() || args.source.labels_last_column,
        t.bits,
        m.loss,
        m.k,
        m.ndcg_normalizer,
        t.c,
        t.eps_cp,
        t.max_cp_iters,
        t.relevant,
        t.irrelevant,
        t.percentile,
        t.kernel,
        t.anchors,
        t.bandwidth,
        !t.no_standardize,
        t.alpha,
        1e-3,
        t.n_random_planes,
        t.optimizer,
        t.max_opt_iters,
        1e-6,
        t.balanced_bits,
        t.seed,
        skipped
    );
    h.push_str("# columns: bit\titer\tviolation\txi\tobjective\tworking_set_size\n");
    h
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (raw, labels) = args.source.load()?;
    let prepared = prepare_training(&raw, labels.as_deref(), &args.training)?;
    if prepared.skipped_queries > 0 {
        log::warn!(
            "{} of {} queries lack a neighbor side and were skipped",
            prepared.skipped_queries,
            raw.rows()
        );
    }
    let spec = args.measure.spec();
    let cfg = train_config(&args.training);
    let out = train_structhash(
        &prepared.hashing_space,
        &prepared.queries,
        &spec,
        args.training.bits,
        &cfg,
    )?;
    for w in &out.warnings {
        log::warn!("{w}");
    }

    let model = out
        .model
        .with_standardization(prepared.stats)
        .with_kernel(prepared.kernel);
    model.save(&args.model_out)?;

    if let Some(trace_path) = &args.trace_out {
        let mut text = trace_header(args, prepared.skipped_queries);
        for row in &out.trace {
            let _ = writeln!(
                text,
                "{}\t{}\t{:e}\t{:e}\t{:e}\t{}",
                row.bit, row.iter, row.violation, row.xi, row.objective, row.working_set_size
            );
        }
        for w in &out.warnings {
            let _ = writeln!(text, "# warning: {w}");
        }
        let _ = writeln!(text, "# converged: {}", out.all_converged);
        std::fs::write(trace_path, text)?;
    }
    println!(
        "trained {} bits on {} queries ({}); model written to {}",
        model.bits(),
        prepared.queries.len(),
        if out.all_converged { "all weight solves converged" } else { "some weight solves hit the iteration cap" },
        args.model_out.display()
    );
    Ok(())
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let model = HashModel::load(&args.model)?;
    let (raw, _) = args.source.load()?;
    let codes = encode_raw(&model, &raw)?;
    structhash::codes::save_codes(&codes, &args.out)?;
    println!("encoded {} rows at {} bits to {}", codes.rows(), codes.bits(), args.out.display());
    Ok(())
}

fn eval_ground_truth(args: &EvalArgs, db_rows: usize, query_rows: usize) -> Result<Vec<QueryNeighborhood>> {
    match (&args.db_labels, &args.db_data) {
        (Some(dbl), None) => {
            let db_labels = load_labels(dbl)?;
            let query_labels = load_labels(args.query_labels.as_ref().unwrap())?;
            if db_labels.len() != db_rows || query_labels.len() != query_rows {
                return Err(Error::data("label files do not match the code files".to_string()));
            }
            Ok(query_labels
                .iter()
                .map(|ql| {
                    let relevant: Vec<u32> = (0..db_rows as u32)
                        .filter(|&j| db_labels[j as usize] == *ql)
                        .collect();
                    let irrelevant: Vec<u32> = (0..db_rows as u32)
                        .filter(|&j| db_labels[j as usize] != *ql)
                        .collect();
                    QueryNeighborhood::new(usize::MAX, relevant, irrelevant)
                })
                .collect())
        }
        (None, Some(db_path)) => {
            let db = match args.format {
                FileFormat::Csv => load_csv(db_path, false)?.0,
                FileFormat::Raw => load_raw(db_path)?,
            };
            let queries = match args.format {
                FileFormat::Csv => load_csv(args.query_data.as_ref().unwrap(), false)?.0,
                FileFormat::Raw => load_raw(args.query_data.as_ref().unwrap())?,
            };
            if db.rows() != db_rows || queries.rows() != query_rows {
                return Err(Error::data("feature files do not match the code files".to_string()));
            }
            (0..queries.rows())
                .map(|q| ground_truth_by_percentile_external(&db, queries.row(q), args.percentile))
                .collect()
        }
        _ => Err(Error::config(
            "ground truth needs either --db-labels/--query-labels or --db-data/--query-data",
        )),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = HashModel::load(&args.model)?;
    let db = structhash::codes::load_codes(&args.db_codes)?;
    let queries = structhash::codes::load_codes(&args.query_codes)?;
    if db.bits() != model.bits() || queries.bits() != model.bits() {
        return Err(Error::DimMismatch(format!(
            "model has {} bits, codes have {}/{}",
            model.bits(),
            db.bits(),
            queries.bits()
        )));
    }
    let gts = eval_ground_truth(args, db.rows(), queries.rows())?;
    let rankings = rank_all(&queries, &db, &model.weights)?;
    let report = evaluate(&rankings, &gts, args.k, model.bits(), args.seed)?;
    write_report(&report, &args.out_prefix)?;
    println!(
        "ndcg@{}={:.4} p@{}={:.4} map={:.4} auc={:.4} over {} queries ({} skipped)",
        report.k,
        report.mean_ndcg_at_k,
        report.k,
        report.mean_precision_at_k,
        report.mean_average_precision,
        report.mean_auc,
        report.evaluated_queries,
        report.skipped_queries
    );
    Ok(())
}

fn write_report(report: &MetricsReport, prefix: &Path) -> Result<()> {
    let json = prefix.with_extension("json");
    report.write_json(&json)?;
    report.write_metrics_csv(&with_suffix(prefix, "_metrics.csv"))?;
    report.write_pr_csv(&with_suffix(prefix, "_pr.csv"))?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (raw, labels) = args.source.load()?;
    let prepared = prepare_training(&raw, labels.as_deref(), &args.training)?;
    let spec = args.measure.spec();
    let cfg = train_config(&args.training);
    let out = train_structhash(
        &prepared.hashing_space,
        &prepared.queries,
        &spec,
        args.training.bits,
        &cfg,
    )?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    let trained = out
        .model
        .with_standardization(prepared.stats.clone())
        .with_kernel(prepared.kernel.clone());

    // The baseline hashes the same standardized features (no kernel map).
    let baseline_dims = prepared.stats.as_ref().map(|s| s.mean.len()).unwrap_or(raw.dims());
    let baseline = lsh_baseline(baseline_dims, args.training.bits, derive_seed(args.training.seed, 0x1500))?
        .with_standardization(prepared.stats.clone());

    let query_source = DataSource {
        data: args.query_data.clone(),
        format: args.source.format,
        labels: args.query_labels.clone(),
        labels_last_column: false,
    };
    let (query_raw, query_labels) = query_source.load()?;

    let gts: Vec<QueryNeighborhood> = match (&labels, &query_labels) {
        (Some(dbl), Some(ql)) => ql
            .iter()
            .map(|l| {
                let relevant: Vec<u32> =
                    (0..raw.rows() as u32).filter(|&j| dbl[j as usize] == *l).collect();
                let irrelevant: Vec<u32> =
                    (0..raw.rows() as u32).filter(|&j| dbl[j as usize] != *l).collect();
                QueryNeighborhood::new(usize::MAX, relevant, irrelevant)
            })
            .collect(),
        (None, None) => (0..query_raw.rows())
            .map(|q| {
                ground_truth_by_percentile_external(&raw, query_raw.row(q), args.training.percentile)
            })
            .collect::<Result<Vec<_>>>()?,
        _ => {
            return Err(Error::config(
                "labels must be given for both the training data and the queries, or neither",
            ))
        }
    };

    let k = args.eval_k.unwrap_or(args.measure.k).min(raw.rows());
    let mut summaries = Vec::new();
    for (name, model) in [("structhash", &trained), ("lsh", &baseline)] {
        let db_codes = encode_raw(model, &raw)?;
        let query_codes = encode_raw(model, &query_raw)?;
        let rankings = rank_all(&query_codes, &db_codes, &model.weights)?;
        let report = evaluate(&rankings, &gts, k, model.bits(), args.training.seed)?;
        write_report(&report, &with_suffix(&args.out_prefix, &format!("_{name}")))?;
        println!(
            "{name}: ndcg@{}={:.4} p@{}={:.4} map={:.4} auc={:.4}",
            report.k,
            report.mean_ndcg_at_k,
            report.k,
            report.mean_precision_at_k,
            report.mean_average_precision,
            report.mean_auc
        );
        summaries.push((name, report.mean_ndcg_at_k));
    }
    if summaries[0].1 >= summaries[1].1 {
        println!("trained codes rank at least as well as the baseline at equal bits");
    } else {
        println!("baseline ranked better on this run");
    }
    Ok(())
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<()> {
    let start = std::time::Instant::now();
    let results = structhash::selftest::run_all(args.seed);
    let mut all_passed = true;
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        let _ = writeln!(stdout, "{}", r.line());
        all_passed &= r.passed;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let _ = writeln!(stdout, "total: {elapsed:.1}s");
    if elapsed > 300.0 {
        log::warn!("selftest exceeded the 5-minute budget ({elapsed:.0}s)");
    }
    if all_passed {
        Ok(())
    } else {
        Err(Error::numerical("selftest failure; see the lines above"))
    }
}
