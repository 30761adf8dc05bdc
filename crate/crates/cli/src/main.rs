use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ppc_core::io::{read_header, write_json, write_labels, WphsHeader};
use ppc_core::synth::{Aperture, SnrReference};
use ppc_core::{
    agglomerate, compare, detect_residues, make_trial, pairwise_distances, peaks_surface,
    piston_shift, pool, read_stack, run_conventional, run_ppc, write_stack, ClusterWeighting,
    Dendrogram, DistanceMetric, MinSampling, PipelineParams, ReportFile, TrialSpec,
};
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NO_CLUSTER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ppc",
    version,
    about = "Phase retrieval from wrapped-phase stacks"
)]
struct Cli {
    /// Worker threads for the global pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stack with a ground-truth labels sidecar.
    Synth(SynthArgs),
    /// Cluster, denoise and unwrap once per cluster.
    Run(RunArgs),
    /// Unwrap every frame and average.
    Conventional(ConventionalArgs),
    /// Run both methods over several stacks and summarize.
    Compare(CompareArgs),
    /// Print header, per-frame residue counts and the dendrogram.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SnrRefArg {
    Signal,
    Unit,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApertureArg {
    Full,
    Disk,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    BySize,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Arithmetic,
    Circular,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Arithmetic => DistanceMetric::Arithmetic,
            MetricArg::Circular => DistanceMetric::Circular,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output WPHS file.
    #[arg(long)]
    out: PathBuf,
    /// Labels sidecar (default: <out>.labels.json).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Square frame size in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Peak-to-valley of the true surface, radians.
    #[arg(long, default_value_t = 37.82)]
    pv: f64,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long, value_enum, default_value_t = SnrRefArg::Unit)]
    snr_reference: SnrRefArg,
    /// Number of tilt families.
    #[arg(long, default_value_t = 1)]
    families: usize,
    /// Fraction of frames replaced by contaminants.
    #[arg(long, default_value_t = 0.0)]
    contaminants: f64,
    /// Peak family tilt per axis, radians at the aperture edge.
    #[arg(long, default_value_t = 0.0)]
    tilt_jitter: f64,
    #[arg(long, value_enum, default_value_t = ApertureArg::Full)]
    aperture: ApertureArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CommonArgs {
    /// Input WPHS stack.
    input: PathBuf,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 632.8)]
    wavelength_nm: f64,
    /// Seed recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Normalized dendrogram cut in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    cut: f64,
    #[arg(long, conflicts_with = "min_fraction")]
    min_samples: Option<usize>,
    /// Minimum cluster size as a fraction of the frame count.
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pool_levels: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::BySize)]
    weighting: WeightingArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Arithmetic)]
    metric: MetricArg,
    /// Treat the whole stack as one cluster.
    #[arg(long)]
    no_classify: bool,
}

impl ClusterArgs {
    fn params(&self, wavelength_nm: f64) -> PipelineParams {
        let min_sampling = match (self.min_samples, self.min_fraction) {
            (_, Some(f)) => MinSampling::MinFraction(f),
            (Some(k), None) => MinSampling::MinSamples(k),
            (None, None) => PipelineParams::default().min_sampling,
        };
        PipelineParams {
            cut: self.cut,
            min_sampling,
            pool_levels: self.pool_levels,
            weighting: match self.weighting {
                WeightingArg::BySize => ClusterWeighting::BySize,
                WeightingArg::Uniform => ClusterWeighting::Uniform,
            },
            wavelength_nm,
            classify: !self.no_classify,
            metric: self.metric.into(),
            ..PipelineParams::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Args)]
struct ConventionalArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Input WPHS stacks, one per trial.
    #[arg(required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial RMSE table.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 632.8)]
    wavelength_nm: f64,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Args)]
struct InspectArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pool_levels: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Arithmetic)]
    metric: MetricArg,
}

#[derive(Serialize)]
struct Inspection {
    header: WphsHeader,
    residue_counts: Vec<usize>,
    dendrogram: Option<Dendrogram>,
}

/// Bad flag values detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn checked(params: PipelineParams) -> Result<PipelineParams> {
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    if let MinSampling::MinFraction(f) = params.min_sampling {
        if !(f > 0.0 && f < 1.0) {
            return Err(UsageError(format!("--min-fraction must lie in (0, 1), got {f}")).into());
        }
    }
    if params.min_sampling == MinSampling::MinSamples(0) {
        return Err(UsageError("--min-samples must be at least 1".into()).into());
    }
    Ok(params)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(value, path)?,
        None => {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = TrialSpec {
        frame_count: a.frames,
        snr_db: a.snr_db,
        snr_reference: match a.snr_reference {
            SnrRefArg::Signal => SnrReference::SignalPower,
            SnrRefArg::Unit => SnrReference::UnitPower,
        },
        perturbation_count: a.families,
        contaminant_fraction: a.contaminants,
        tilt_jitter: a.tilt_jitter,
        seed: a.seed,
        aperture: match a.aperture {
            ApertureArg::Full => Aperture::Full,
            ApertureArg::Disk => Aperture::Disk,
        },
    };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let truth = peaks_surface(a.size, a.pv).map_err(|e| UsageError(e.to_string()))?;
    let trial = make_trial(&truth, &spec)?;
    write_stack(&trial.stack, &a.out)?;
    let labels = a.labels.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".labels.json");
        p.into()
    });
    write_labels(&trial.labels, &labels)?;
    info!("wrote {} and {}", a.out.display(), labels.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let params = checked(a.cluster.params(a.common.wavelength_nm))?;
    let stack = read_stack(&a.common.input)?;
    let report = run_ppc(&stack, &params)?;
    info!(
        "{} chosen clusters, {} unwrap calls, rmse {:.6} rad",
        report.census.chosen.len(),
        report.unwrap_call_count,
        report.rmse_rad
    );
    emit(
        &ReportFile::new(&report, &params, a.common.seed),
        a.common.out.as_deref(),
    )
}

fn conventional(a: ConventionalArgs) -> Result<()> {
    let params = checked(PipelineParams {
        wavelength_nm: a.common.wavelength_nm,
        ..PipelineParams::default()
    })?;
    let stack = read_stack(&a.common.input)?;
    let report = run_conventional(&stack, &params)?;
    info!(
        "{} unwrap calls, rmse {:.6} rad",
        report.unwrap_call_count, report.rmse_rad
    );
    emit(
        &ReportFile::new(&report, &params, a.common.seed),
        a.common.out.as_deref(),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let params = checked(a.cluster.params(a.wavelength_nm))?;
    let trials = a
        .inputs
        .iter()
        .map(|p| Ok((read_stack(p)?, params.clone())))
        .collect::<Result<Vec<_>>>()?;
    let report = compare(&trials)?;
    if let Some(csv) = &a.csv {
        let mut text = String::from("trial,input,ppc_rmse_rad,conventional_rmse_rad\n");
        for (i, (t, p)) in report.trials.iter().zip(&a.inputs).enumerate() {
            text.push_str(&format!(
                "{i},{},{},{}\n",
                p.display(),
                fmt_opt(t.ppc_rmse_rad),
                fmt_opt(t.conventional_rmse_rad)
            ));
        }
        fs::write(csv, text).with_context(|| csv.display().to_string())?;
    }
    emit(&report, a.out.as_deref())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let header = read_header(&a.input)?;
    let stack = read_stack(&a.input)?;
    let mask = stack.mask();
    let residue_counts = stack
        .frames()
        .iter()
        .map(|f| Ok(detect_residues(f, mask)?.count()))
        .collect::<Result<Vec<_>>>()?;
    let dendrogram = if stack.len() >= 2 {
        let mut pooled = Vec::with_capacity(stack.len());
        let mut pooled_mask = mask.clone();
        for f in stack.frames() {
            let (p, m) = pool(&piston_shift(f, mask)?, mask, a.pool_levels)?;
            pooled.push(p);
            pooled_mask = m;
        }
        let d = pairwise_distances(&pooled, &pooled_mask, a.metric.into())?;
        Some(agglomerate(&d)?)
    } else {
        None
    };
    emit(
        &Inspection {
            header,
            residue_counts,
            dendrogram,
        },
        None,
    )
}

/// Error chain joined with `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(ppc_core::Error::NoCluster { .. }) = cause.downcast_ref::<ppc_core::Error>() {
            return EXIT_NO_CLUSTER;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Conventional(a) => conventional(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
