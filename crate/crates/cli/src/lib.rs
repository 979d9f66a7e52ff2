//! `confret`: synthesize, calibrate, retrieve, evaluate and inspect.
//!
//! Exit codes: 0 success, 1 usage error, 2 data-format error, 3 model/data
//! mismatch. Diagnostics go to stderr, data only to the named output files.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use conformal_retrieval::dataset::{load_dataset, save_dataset, split_queries, MANIFEST_FILE};
use conformal_retrieval::io::fmt_sig17;
use conformal_retrieval::pipeline::ModelFile;
use conformal_retrieval::retrieval::{read_results, write_results};
use conformal_retrieval::synthgen::heuristic_baseline;
use conformal_retrieval::{
    batch_retrieve, fit_model, generate, ranking_metrics, CalibratedModel, Error, FitOptions, FuserKind,
    MultimodalDataset, NegativeSubsample, RetrievalMode, SynthConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "confret", version, about = "Conformal retrieval over multimodal data with missing modalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Fit both calibration stages and write a model file.
    Calibrate(CalibrateArgs),
    /// Rank references for each query and write a results CSV.
    Retrieve(RetrieveArgs),
    /// Score a results CSV against the dataset's relevance.
    Evaluate(EvaluateArgs),
    /// Summarize the bands in a model file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// image, lidar, text on both sides
    Trimodal,
    /// text queries, image+audio references
    TextToVideo,
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "trimodal")]
    preset: Preset,
    #[arg(long, default_value_t = 500)]
    queries: usize,
    #[arg(long, default_value_t = 500)]
    references: usize,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Noise level applied to every space (keeps preset values if absent).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    relevant_per_query: Option<usize>,
    /// Drop probability for every query modality.
    #[arg(long)]
    query_dropout: Option<f64>,
    /// Drop probability for every reference modality.
    #[arg(long)]
    reference_dropout: Option<f64>,
    #[arg(long)]
    keep_at_least_one: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fuser {
    Mean,
    Max,
}

#[derive(Debug, clap::Args)]
struct CalibrateArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    cal_fraction: f64,
    #[arg(long, value_enum, default_value = "mean")]
    fuser: Fuser,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep this fraction of negative calibration pairs.
    #[arg(long)]
    negative_subsample: Option<f64>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuerySet {
    /// queries not used for calibration
    Test,
    All,
}

#[derive(Debug, clap::Args)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    shortlist_alpha: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    queries: QuerySet,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,20")]
    ks: Vec<usize>,
    /// Also score the best-available-pair heuristic, e.g. `text:image,text:audio`.
    #[arg(long, value_delimiter = ',')]
    baseline: Option<Vec<String>>,
    /// Where the baseline report goes (default: next to --out).
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    eprintln!("confret: {:?}", cli.command);
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ModelMismatch(_) | Error::IndexOutOfRange(_) => EXIT_MISMATCH,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load(data: &Path) -> Result<MultimodalDataset, Failure> {
    Ok(load_dataset(&manifest_path(data))?)
}

fn probability(name: &str, p: f64) -> Result<f64, Failure> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Failure::Usage(format!("--{name} must lie in [0, 1], got {p}")))
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = match a.preset {
        Preset::Trimodal => SynthConfig::trimodal(a.queries, a.references, a.seed),
        Preset::TextToVideo => SynthConfig::text_to_video(a.queries, a.references, a.seed),
    };
    if let Some(d) = a.latent_dim {
        cfg.latent_dim = d;
    }
    if let Some(s) = a.sigma {
        cfg = cfg.with_sigma(s);
    }
    if let Some(c) = a.relevant_per_query {
        cfg.relevant_per_query = c;
    }
    if let Some(p) = a.query_dropout {
        cfg.query_dropout = vec![probability("query-dropout", p)?; cfg.query_modalities.len()];
    }
    if let Some(p) = a.reference_dropout {
        cfg.reference_dropout = vec![probability("reference-dropout", p)?; cfg.reference_modalities.len()];
    }
    cfg.keep_at_least_one = a.keep_at_least_one;
    let ds = generate(&cfg)?;
    let manifest = save_dataset(&ds, &a.out)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CmdResult {
    let ds = load(&a.data)?;
    let (cal, _) = split_queries(ds.n_queries(), a.cal_fraction, a.seed)?;
    let options = FitOptions {
        fuser: match a.fuser {
            Fuser::Mean => FuserKind::Mean,
            Fuser::Max => FuserKind::Max,
        },
        negative_subsample: a.negative_subsample.map(|ratio| NegativeSubsample { ratio, seed: a.seed }),
        workers: a.workers,
    };
    let model = fit_model(&ds, &cal, &options)?;
    model.save(&a.out)?;
    eprintln!(
        "calibrated {} pairs on {} queries; wrote {}",
        model.calibrated_pairs().len(),
        cal.len(),
        a.out.display()
    );
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> CmdResult {
    let ds = load(&a.data)?;
    let model = CalibratedModel::load(&a.model, ds.schema())?;
    let queries: Vec<usize> = match a.queries {
        QuerySet::All => (0..ds.n_queries()).collect(),
        QuerySet::Test => {
            let mut used = vec![false; ds.n_queries()];
            for &q in model.calibration_queries() {
                *used.get_mut(q).ok_or_else(|| {
                    Error::ModelMismatch(format!("model calibration query {q} is not in the dataset"))
                })? = true;
            }
            (0..ds.n_queries()).filter(|&q| !used[q]).collect()
        }
    };
    let mode = match a.shortlist_alpha {
        None => RetrievalMode::Exhaustive,
        Some(0) => return Err(Failure::Usage("--shortlist-alpha must be at least 1".into())),
        Some(alpha) => RetrievalMode::Shortlist { alpha },
    };
    let results = batch_retrieve(&model, &ds, &queries, a.k, mode, a.workers)?;
    write_results(&a.out, &results)?;
    eprintln!("ranked {} queries; wrote {}", results.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let ds = load(&a.data)?;
    let results = read_results(&a.results)?;
    let report = ranking_metrics(&results, ds.relevance(), &a.ks)?;
    report.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    if let Some(labels) = &a.baseline {
        let priority = labels
            .iter()
            .map(|l| ds.schema().parse_pair(l))
            .collect::<conformal_retrieval::Result<Vec<_>>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let queries: Vec<usize> = results.iter().map(|r| r.query).collect();
        let base = heuristic_baseline(&ds, &priority, &queries, &a.ks)?;
        let path = a.baseline_out.clone().unwrap_or_else(|| a.out.with_extension("baseline.json"));
        base.save(&path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

struct BandSummary {
    pair: String,
    space: String,
    size: usize,
    theta_min: f64,
    theta_max: f64,
    gamma_quantiles: Vec<(f64, f64)>,
}

fn summarize(pair: String, space: String, theta_min: f64, theta_max: f64, gamma: &[f64]) -> BandSummary {
    let q = |p: f64| -> f64 {
        if gamma.is_empty() {
            f64::NAN
        } else {
            gamma[((gamma.len() - 1) as f64 * p).round() as usize]
        }
    };
    BandSummary {
        pair,
        space,
        size: gamma.len(),
        theta_min,
        theta_max,
        gamma_quantiles: [0.0, 0.25, 0.5, 0.75, 0.9, 1.0].iter().map(|&p| (p, q(p))).collect(),
    }
}

fn inspect(a: InspectArgs) -> CmdResult {
    let file = ModelFile::read(&a.model)?;
    let mut bands: Vec<BandSummary> = file
        .first_stage
        .iter()
        .map(|b| {
            summarize(
                format!("{}:{}", b.query_modality, b.reference_modality),
                b.space.clone(),
                b.band.theta_min,
                b.band.theta_max,
                &b.band.sorted_gamma,
            )
        })
        .collect();
    let s = &file.second_stage;
    bands.push(summarize("fused".into(), file.fuser.to_string(), s.theta_min, s.theta_max, &s.sorted_gamma));
    println!("model {} (schema {})", a.model.display(), file.schema_fingerprint);
    println!("calibration queries: {}", file.calibration_queries.len());
    for b in &bands {
        let qs: Vec<String> = b.gamma_quantiles.iter().map(|(p, v)| format!("q{}={}", p, fmt_sig17(*v))).collect();
        println!(
            "{:<24} space={:<16} size={:<9} theta=[{}, {}] gamma {}",
            b.pair,
            b.space,
            b.size,
            fmt_sig17(b.theta_min),
            fmt_sig17(b.theta_max),
            qs.join(" ")
        );
    }
    Ok(())
}
