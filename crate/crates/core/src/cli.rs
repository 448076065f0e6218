//! `tfuse` command-line interface.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad flags, missing or
//! malformed files, validation failures), 1 for internal failures. Every
//! subcommand stages its outputs in temporary files and renames them into
//! place only after all of them were produced.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{compare, format_g, render_report, ReportFormat, RunSummary};
use crate::fusion::{run, ColMarginal, FusionConfig, DEFAULT_EPSILON, DEFAULT_OUTER_ITERS, DEFAULT_OUTER_TOL, DEFAULT_SINKHORN_ITERS};
use crate::gmm::PiMode;
use crate::io::{encode_labels, encode_matrix, load_dataset, load_manifest, read_otm, Dtype, Manifest, Payload, SourceEntry, StagedWrites};
use crate::sinkhorn::STANDALONE_TOL;
use crate::synth::{generate, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "tfuse", version, about = "Fuse semantic class distributions with visual clusters via entropic optimal transport")]
pub struct Cli {
    /// Log one line per outer iteration to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse the sources of a manifest and write Q, predictions and a report.
    Run(RunArgs),
    /// Compare the fusion against its baselines and ablations.
    Compare(CompareArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Print the header and summary statistics of an .otm file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColMarginalArg {
    Uniform,
    FromY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PiModeArg {
    Uniform,
    Estimate,
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Entropic regularisation.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Semantic weight; repeat once per semantic source, or give one value for all.
    #[arg(long = "lambda", value_name = "R")]
    pub lambdas: Vec<f64>,
    /// Visual weight; repeat once per feature source. Normalized to sum 1.
    #[arg(long = "eta", value_name = "R")]
    pub etas: Vec<f64>,
    /// Maximum outer rounds.
    #[arg(long, default_value_t = DEFAULT_OUTER_ITERS)]
    pub iters: usize,
    /// Sinkhorn sweeps per outer round.
    #[arg(long, default_value_t = DEFAULT_SINKHORN_ITERS)]
    pub sinkhorn_iters: usize,
    /// Early exit for the Sinkhorn sweeps.
    #[arg(long, default_value_t = STANDALONE_TOL)]
    pub sinkhorn_tol: f64,
    /// Stop once the mean row L1 change of Q falls below this.
    #[arg(long, default_value_t = DEFAULT_OUTER_TOL)]
    pub outer_tol: f64,
    #[arg(long, value_enum, default_value_t = ColMarginalArg::Uniform)]
    pub col_marginal: ColMarginalArg,
    /// Mixture weights: fixed uniform or re-estimated from Q.
    #[arg(long, value_enum, default_value_t = PiModeArg::Uniform)]
    pub pi_mode: PiModeArg,
    /// Use feature rows as given instead of L2-normalizing them.
    #[arg(long)]
    pub no_normalize_features: bool,
    /// Include wall-clock time in reports.
    #[arg(long)]
    pub timing: bool,
}

impl FusionArgs {
    pub fn config(&self) -> Result<FusionConfig<f64>> {
        let config = FusionConfig {
            epsilon: self.epsilon,
            lambdas: self.lambdas.clone(),
            etas: self.etas.clone(),
            outer_iters: self.iters,
            sinkhorn_iters: self.sinkhorn_iters,
            sinkhorn_tol: self.sinkhorn_tol,
            outer_tol: self.outer_tol,
            col_marginal: match self.col_marginal {
                ColMarginalArg::Uniform => ColMarginal::Uniform,
                ColMarginalArg::FromY => ColMarginal::FromSemantic,
            },
            normalize_features: !self.no_normalize_features,
            pi_mode: match self.pi_mode {
                PiModeArg::Uniform => PiMode::Uniform,
                PiModeArg::Estimate => PiMode::Estimate,
            },
            seed: 0,
        };
        if config.etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::invalid("every eta must be nonnegative"));
        }
        let config = config.with_normalized_etas()?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Output directory for q.otm, predictions.otm and report.txt.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Number of sample orders to average over.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Base seed for the sample-order shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.txt and report.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.0)]
    pub y_noise: f64,
    #[arg(long, default_value_t = 5.0)]
    pub y_temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// L2-normalize the generated feature rows.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub file: PathBuf,
}

pub const Q_FILE: &str = "q.otm";
pub const PREDICTIONS_FILE: &str = "predictions.otm";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::path(dir, e.to_string()))
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = args.fusion.config()?;
    let manifest = load_manifest(&args.fusion.manifest)?;
    let dataset = load_dataset(&manifest)?;
    let start = Instant::now();
    let result = run(&dataset.feature_matrices(), &dataset.semantic_matrices(), &config)?;
    let elapsed = args.fusion.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    let q_bytes = encode_matrix(&result.q, Dtype::F64)?;
    let pred_bytes = encode_labels(&result.predictions());
    let mut summary = RunSummary::new(&dataset, &config, result, elapsed)?;
    summary.config.insert(0, ("manifest".into(), args.fusion.manifest.display().to_string()));

    ensure_dir(&args.out)?;
    let mut staged = StagedWrites::default();
    staged.stage(args.out.join(Q_FILE), &q_bytes)?;
    staged.stage(args.out.join(PREDICTIONS_FILE), &pred_bytes)?;
    staged.stage(args.out.join(REPORT_FILE), summary.render().as_bytes())?;
    staged.commit()?;
    if let Some(acc) = summary.accuracy {
        println!("accuracy {}", format_g(acc));
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let config = FusionConfig { seed: args.seed, ..args.fusion.config()? };
    let manifest = load_manifest(&args.fusion.manifest)?;
    let dataset = load_dataset(&manifest)?;
    let mut report = compare(&dataset, &config, args.seeds, args.fusion.timing)?;
    report.config.insert(0, ("manifest".into(), args.fusion.manifest.display().to_string()));

    ensure_dir(&args.out)?;
    let mut staged = StagedWrites::default();
    staged.stage(args.out.join(REPORT_FILE), render_report(&report, ReportFormat::Text).as_bytes())?;
    staged.stage(args.out.join(REPORT_CSV_FILE), render_report(&report, ReportFormat::Csv).as_bytes())?;
    staged.commit()?;
    for m in &report.methods {
        println!("{} {} ({})", m.name, format_g(m.accuracy), format_g(m.delta));
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_samples: args.n,
        n_classes: args.k,
        dim: args.d,
        separation: args.separation,
        y_noise: args.y_noise,
        y_temperature: args.y_temperature,
        seed: args.seed,
        normalize: args.normalize,
    };
    let data = generate(&spec)?;
    let manifest = Manifest {
        name: format!("synth-n{}-k{}-d{}-seed{}", args.n, args.k, args.d, args.seed),
        feature_files: vec![SourceEntry { id: "synth".into(), path: "features.otm".into() }],
        semantic_files: vec![SourceEntry { id: "synth".into(), path: "y.otm".into() }],
        labels_path: Some("labels.otm".into()),
        class_names: None,
        base_dir: args.out.clone(),
    };
    let features = encode_matrix(&data.features, Dtype::F64)?;
    let semantic = encode_matrix(&data.semantic, Dtype::F64)?;

    ensure_dir(&args.out)?;
    let mut staged = StagedWrites::default();
    staged.stage(args.out.join("features.otm"), &features)?;
    staged.stage(args.out.join("y.otm"), &semantic)?;
    staged.stage(args.out.join("labels.otm"), &encode_labels(&data.labels))?;
    staged.stage(args.out.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    staged.commit()
}

/// Text printed by `inspect`.
pub fn inspect_text(path: &Path) -> Result<String> {
    let file = read_otm(path)?;
    let h = file.header;
    let mut out = format!(
        "file: {}\nversion: {}\ndtype: {} ({})\nshape: {} x {}\n",
        path.display(),
        h.version,
        h.dtype as u8,
        h.dtype.name(),
        h.rows,
        h.cols
    );
    let cols = h.cols as usize;
    let row_sums: Vec<f64> = match &file.payload {
        Payload::F32(v) => v.chunks(cols.max(1)).map(|r| r.iter().map(|&x| f64::from(x)).sum()).collect(),
        Payload::F64(v) => v.chunks(cols.max(1)).map(|r| r.iter().sum()).collect(),
        Payload::I64(v) => {
            if let (Some(lo), Some(hi)) = (v.iter().min(), v.iter().max()) {
                out.push_str(&format!("min: {lo}\nmax: {hi}\n"));
            }
            return Ok(out);
        }
    };
    if cols == 0 || row_sums.is_empty() {
        return Ok(out);
    }
    let finite = match &file.payload {
        Payload::F32(v) => v.iter().all(|x| x.is_finite()),
        Payload::F64(v) => v.iter().all(|x| x.is_finite()),
        Payload::I64(_) => true,
    };
    let lo = row_sums.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dev = row_sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    out.push_str(&format!(
        "finite: {finite}\nrow_sum_min: {}\nrow_sum_max: {}\nmax_abs_rowsum_minus_1: {}\n",
        format_g(lo),
        format_g(hi),
        format_g(dev)
    ));
    Ok(out)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    print!("{}", inspect_text(&args.file)?);
    Ok(())
}

fn init_logging(verbose: bool) {
    let level = if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<()> {
    init_logging(cli.verbose);
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
