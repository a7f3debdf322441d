//! The `ssm` command line: template → generate → train → fit → evaluate.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Logs go to stderr;
//! data only under `--out`. Every command that writes files also writes a
//! run manifest (config snapshot, input and output hashes, timestamps).

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "ssm",
    version,
    about = "Statistical shape models of the upper GI tract (lengths in mm)"
)]
pub struct Cli {
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log level for stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the procedural template: mesh.ply, rig.json, annotations.json, prototype_*.ply.
    Template(TemplateArgs),
    /// Generate validated synthetic meshes: mesh_NNNN.ply, recipe_NNNN.json, mesh_NNNN.landmarks.json.
    Generate(GenerateArgs),
    /// Extract a labeled structure from a voxel volume (<name>.volhdr.json + <name>.vol.raw).
    Ingest(IngestArgs),
    /// Learn a PCA shape model from meshes sharing the template topology.
    Train(TrainArgs),
    /// Fit a shape model to a scan, optionally followed by free-form co-registration.
    Fit(FitArgs),
    /// Draw random shapes from a model.
    Sample(SampleArgs),
    /// Compactness, generalization and specificity over a sweep of component counts.
    Evaluate(EvaluateArgs),
    /// Print mesh statistics as JSON.
    Measure(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct TemplateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the low-resolution sampling (faster, for smoke tests).
    #[arg(long)]
    pub coarse: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Template directory; the default template is built when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    /// JSON file with {"gc": [lo, hi], "lc": [lo, hi], "volume": [lo, hi]} (mm, mm³).
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// JSON generation config; `--bounds` overrides its bounds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Volume header (<name>.volhdr.json).
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub label: i64,
    /// Point-bound landmark JSON to snap onto the surface.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Output mesh (.ply or .obj). Landmarks go to <stem>.landmarks.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iso: f64,
    /// Skip the smoothing pass on the label indicator.
    #[arg(long)]
    pub no_smooth: bool,
    /// Largest allowed landmark snap distance (mm).
    #[arg(long, default_value_t = crate::ingest::DEFAULT_SNAP_TOLERANCE_MM)]
    pub snap_tolerance: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of synthetic meshes (mesh_*.ply).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of registered real meshes (.ply/.obj) with template topology.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Sample weight of each real mesh relative to a synthetic one.
    #[arg(long, default_value_t = 1.0)]
    pub real_weight: f64,
    /// Components to keep; full rank when omitted.
    #[arg(long)]
    pub components: Option<usize>,
    /// Template directory for connectivity, regions and landmarks;
    /// defaults to <dataset>/template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Model path; writes <out>.ssm.json and <out>.ssm.bin.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scan: PathBuf,
    /// Scan landmarks; defaults to <scan stem>.landmarks.json when present.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Run the free-form stage after the shape-space fit.
    #[arg(long)]
    pub coregister: bool,
    /// JSON fit config (weights, anneal schedule, thresholds); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use only the first k model components.
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub max_outer_iterations: Option<usize>,
    #[arg(long)]
    pub lambda_coup: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_clip: f64,
    /// Active components; all when omitted.
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training meshes (all .ply/.obj files).
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out meshes; landmarks from <stem>.landmarks.json when present.
    #[arg(long)]
    pub test: PathBuf,
    /// Component counts; values above the model's count are dropped with a warning.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,30")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON fit config for the generalization fits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Specificity samples per k.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_clip: f64,
    /// Training meshes checked exactly per specificity sample; 0 checks all.
    #[arg(long, default_value_t = 4)]
    pub shortlist: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Template directory; adds greater/lesser curvature lengths for meshes with its topology.
    #[arg(long)]
    pub template: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            1
        }
    }
}

/// Causes joined with `: `, skipping any already spelled out by an outer message.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}
