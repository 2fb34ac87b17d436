//! `hsi-ae`: dataset generation, training grids, statistics and reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsi_ae::harness::{
    prepare_data, read_records, run_experiment_with, train_once, write_records, GridOptions,
    RecordsMeta,
};
use hsi_ae::lmm::{
    generate_endmembers, load_bundle, read_pixel_csv, sample_abundances, save_bundle, synthesize,
};
use hsi_ae::metrics::Loss;
use hsi_ae::nn::save_checkpoint;
use hsi_ae::parallel::with_threads;
use hsi_ae::report::{emit_report, Binning, ReportOptions};
use hsi_ae::stats::{analyze_records, Adjustment, AnalysisOptions, RetryPlan};
use hsi_ae::{
    Error, ExperimentConfig, GroundTruth, HsiBundle, MetricSelector, NoiseSpec, RunRecord,
};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hsi-ae",
    version,
    about = "Autoencoder unmixing and initialization-stability experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic linear-mixing scene.
    Gen(GenArgs),
    /// Convert a pixel CSV (one pixel per row) into a bundle.
    Convert(ConvertArgs),
    /// Train a single model.
    Train(TrainArgs),
    /// Run the N x k initialization grid.
    Experiment(ExperimentArgs),
    /// Levene, Kruskal-Wallis and Conover-Iman on a record file.
    Analyze(AnalyzeArgs),
    /// Number of trainings needed to beat a threshold with given confidence.
    Plan(PlanArgs),
    /// Histogram, trials table and summary for a record file.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output bundle header path (payload files are written next to it).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 156)]
    bands: usize,
    #[arg(long, default_value_t = 3)]
    endmembers: usize,
    #[arg(long, default_value_t = 95)]
    width: usize,
    #[arg(long, default_value_t = 95)]
    height: usize,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of pure pixels.
    #[arg(long, default_value_t = 0.1)]
    pure: f64,
    /// Symmetric Dirichlet concentration.
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    /// Moving-average window for the endmember spectra.
    #[arg(long, default_value_t = 5)]
    smoothness: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
    /// Reference endmembers, one spectrum per row.
    #[arg(long, requires = "abundances")]
    endmembers: Option<PathBuf>,
    /// Reference abundances, one pixel per row.
    #[arg(long, requires = "endmembers")]
    abundances: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set N=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset bundle; defaults to the config's `dataset`, resolved next to the config file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    init_id: usize,
    #[arg(long, default_value_t = 1)]
    run_id: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Worker threads for the grid.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write one gradient trace per run under `<out>/traces`.
    #[arg(long)]
    traces: bool,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record file written by `experiment`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "recon_rmse", value_parser = parse_metric)]
    metric: MetricSelector,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Holm step-down adjustment of the post-hoc p-values.
    #[arg(long)]
    holm: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Success probability; alternatively estimate it from `--records`.
    #[arg(long, conflicts_with = "records")]
    p_hat: Option<f64>,
    #[arg(long, requires = "threshold")]
    records: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "recon_rmse", value_parser = parse_metric)]
    metric: MetricSelector,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "recon_rmse", value_parser = parse_metric)]
    metric: MetricSelector,
    /// Threshold for the trials table (repeatable); defaults depend on the loss.
    #[arg(long = "threshold")]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed histogram bin count instead of Freedman-Diaconis.
    #[arg(long)]
    bins: Option<usize>,
}

fn parse_metric(s: &str) -> Result<MetricSelector, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// CLI failure: exit code plus machine-readable kind.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::MissingData(_)
            | Error::Format(_)
            | Error::Dimension(_)
            | Error::DegenerateSpectrum(_)
            | Error::UnreachableThreshold
            | Error::InvalidInput(_) => EXIT_DATA,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report_failure(&Failure {
                code: EXIT_USAGE,
                kind: "usage".into(),
                message: e.kind().to_string(),
            });
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report_failure(f: &Failure) {
    let line = serde_json::json!({"error": f.kind, "message": f.message, "exit_code": f.code});
    eprintln!("{line}");
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Convert(a) => convert(a),
        Command::Train(a) => train(a),
        Command::Experiment(a) => experiment(a),
        Command::Analyze(a) => analyze(a),
        Command::Plan(a) => plan(a),
        Command::Report(a) => report(a),
    }
}

fn gen(a: GenArgs) -> CliResult {
    let pixels = a
        .width
        .checked_mul(a.height)
        .ok_or_else(|| Error::InvalidInput("image too large".into()))?;
    let w = generate_endmembers(a.bands, a.endmembers, a.smoothness, a.seed)?;
    let conc = vec![a.concentration; a.endmembers];
    let ab = sample_abundances(a.endmembers, pixels, &conc, a.pure, a.seed.wrapping_add(1))?;
    let bundle = synthesize(&w, &ab, NoiseSpec::new(a.noise)?, a.seed.wrapping_add(2))?
        .with_spatial(a.width, a.height)?;
    save_bundle(&bundle, &a.out)?;
    println!(
        "wrote {} ({} bands, {} pixels)",
        a.out.display(),
        a.bands,
        pixels
    );
    Ok(())
}

fn convert(a: ConvertArgs) -> CliResult {
    let pixels = read_pixel_csv(&a.input)?;
    let name = a
        .name
        .or_else(|| {
            a.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "converted".into());
    let mut bundle = HsiBundle::new(pixels, name)?;
    if let (Some(w), Some(h)) = (a.width, a.height) {
        bundle = bundle.with_spatial(w, h)?;
    }
    if let (Some(em), Some(ab)) = (&a.endmembers, &a.abundances) {
        let gt = GroundTruth::new(read_pixel_csv(em)?, read_pixel_csv(ab)?)?;
        bundle = bundle.with_ground_truth(gt)?;
    }
    save_bundle(&bundle, &a.out)?;
    println!(
        "wrote {} ({} bands, {} pixels)",
        a.out.display(),
        bundle.bands(),
        bundle.pixel_count()
    );
    Ok(())
}

fn load_config(a: &ConfigArgs) -> Result<(ExperimentConfig, HsiBundle), Failure> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", a.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&text, &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let data_path = match &a.data {
        Some(p) => p.clone(),
        None if !cfg.dataset.is_empty() => a
            .config
            .parent()
            .unwrap_or(Path::new("."))
            .join(&cfg.dataset),
        None => {
            return Err(Error::Config("no dataset: pass --data or set `dataset`".into()).into())
        }
    };
    let data = load_bundle(&data_path).map_err(|e| match e {
        Error::Io(io) => {
            Error::MissingData(format!("cannot read dataset {}: {io}", data_path.display()))
        }
        other => other,
    })?;
    Ok((cfg, data))
}

fn train(a: TrainArgs) -> CliResult {
    let (cfg, data) = load_config(&a.cfg)?;
    let data = prepare_data(&cfg, &data);
    let init_seed = hsi_ae::harness::seed::init_seed(cfg.master_seed, a.init_id);
    let run_seed = hsi_ae::harness::seed::run_seed(cfg.master_seed, a.init_id, a.run_id);
    let (net, mut record, trace) = train_once(&cfg, &data, init_seed, run_seed)?;
    record.init_id = a.init_id;
    record.run_id = a.run_id;
    let out = &a.cfg.out;
    fs::create_dir_all(out).map_err(Error::from)?;
    trace.write_csv(&out.join("trace.csv"))?;
    record.trace_file = Some("trace.csv".into());
    save_checkpoint(
        &net,
        &out.join("model.toml"),
        Some(cfg.architecture),
        Some((init_seed, run_seed)),
    )?;
    write_records(
        &out.join("record.jsonl"),
        std::slice::from_ref(&record),
        Some(&cfg),
    )?;
    println!(
        "{}",
        serde_json::to_string(&record).expect("record serializes")
    );
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let (cfg, data) = load_config(&a.cfg)?;
    let out = &a.cfg.out;
    fs::create_dir_all(out).map_err(Error::from)?;
    let opts = GridOptions {
        trace_dir: a.traces.then(|| out.join("traces")),
        sequential: a.sequential,
    };
    let records = with_threads(a.jobs, || run_experiment_with(&cfg, &data, &opts))?;
    let path = out.join("records.jsonl");
    write_records(&path, &records, Some(&cfg))?;
    let diverged = records.iter().filter(|r| r.diverged).count();
    println!(
        "wrote {} ({} runs, {} diverged)",
        path.display(),
        records.len(),
        diverged
    );
    Ok(())
}

fn load_records(path: &Path) -> Result<(Option<RecordsMeta>, Vec<RunRecord>), Failure> {
    read_records(path).map_err(|e| {
        match e {
            Error::Io(io) => Error::MissingData(format!("cannot read {}: {io}", path.display())),
            other => other,
        }
        .into()
    })
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let (_, records) = load_records(&a.records)?;
    let opts = AnalysisOptions {
        alpha: a.alpha,
        adjustment: if a.holm {
            Adjustment::Holm
        } else {
            Adjustment::None
        },
    };
    let report = analyze_records(&records, a.metric, opts)?;
    report.write_files(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn plan(a: PlanArgs) -> CliResult {
    let plan = match (a.p_hat, &a.records) {
        (Some(p), _) => RetryPlan::new(a.threshold.unwrap_or(f64::NAN), p, a.confidence)?,
        (None, Some(path)) => {
            let (_, records) = load_records(path)?;
            let t = a.threshold.expect("clap enforces --threshold");
            RetryPlan::from_records(&records, a.metric, t, a.confidence)?
        }
        (None, None) => {
            return Err(Error::Config("pass --p-hat or --records with --threshold".into()).into())
        }
    };
    println!("n_req={}", plan.n_req);
    println!("p_hat={}", plan.p_hat);
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let (meta, records) = load_records(&a.records)?;
    let loss = meta.and_then(|m| m.config).map_or(Loss::Mse, |c| c.loss);
    let mut opts = ReportOptions::for_loss(loss, a.metric);
    if !a.thresholds.is_empty() {
        opts.thresholds = a.thresholds;
    }
    opts.confidence = a.confidence;
    if let Some(b) = a.bins {
        opts.binning = Binning::Fixed(b);
    }
    let stats = match analyze_records(
        &records,
        a.metric,
        AnalysisOptions {
            alpha: a.alpha,
            adjustment: Adjustment::None,
        },
    ) {
        Ok(s) => Some(s),
        // Too few groups or observations for the tests: report without them.
        Err(Error::InvalidInput(_)) => None,
        Err(e) => return Err(e.into()),
    };
    emit_report(&records, stats.as_ref(), &a.out, &opts)?;
    println!("wrote report to {}", a.out.display());
    Ok(())
}
