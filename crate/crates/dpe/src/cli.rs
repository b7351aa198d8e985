use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dpe_core::contribution::{collect_norms, NormMode};
use dpe_core::maps::describe;
use dpe_core::tensor::HeadTensor;
use log::{info, warn};

use crate::bench::{self, BenchSpec};
use crate::config::RunConfig;
use crate::error::{Result, RunError};
use crate::tensor_file::TensorFile;
use crate::{eval, parallel, plan_file, report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Factored,
    Joint,
}

#[derive(Debug, Parser)]
#[command(name = "dpe", version, about = "Dimension-wise position maps for long-context rotary attention")]
pub struct Cli {
    /// JSON run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dimension plan and write plan.json.
    Plan,
    /// Sweep detecting lengths per group and derive effective lengths.
    Detect,
    /// Mean 2-norm contribution per pair from query/key tensor files.
    AnalyzeNorms {
        queries: PathBuf,
        keys: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Factored)]
        mode: Mode,
    },
    /// Compare baselines on the induction fixture.
    Eval,
    /// Time the tiled engine with standard and DPE positions.
    Bench,
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| RunError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let (Some(base), Some(norms)) = (cli.config.as_ref().and_then(|p| p.parent()), config.norms.as_mut()) {
        if norms.is_relative() {
            *norms = base.join(&*norms);
        }
    }
    Ok(config)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn emit(dir: &Path, stem: &str, format: Format, csv: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<PathBuf> {
    match format {
        Format::Csv => write(dir, &format!("{stem}.csv"), &csv()),
        Format::Json => write(dir, &format!("{stem}.json"), &json()),
    }
}

fn load_heads(path: &Path) -> Result<HeadTensor> {
    let file = TensorFile::read(path)?;
    let dims: Vec<usize> = file.dims.iter().map(|&d| d as usize).collect();
    let (h, l, d) = match dims.as_slice() {
        [l, d] => (1, *l, *d),
        [h, l, d] => (*h, *l, *d),
        _ => {
            return Err(RunError::Data(format!(
                "{}: expected rank 2 (len, dim) or 3 (heads, len, dim), found dims {:?}",
                path.display(),
                file.dims
            )))
        }
    };
    HeadTensor::from_vec(h, l, d, file.data).map_err(|e| RunError::Data(e.to_string()))
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let pool = parallel::pool(parallel::threads_from_env()?)?;
    let out = config.out.clone();
    match &cli.command {
        Command::Plan => {
            let file = plan_file::build_plan(&config)?;
            for w in &file.warnings {
                warn!("{w}");
            }
            info!("{}", describe(&file.plan));
            write(&out, "plan.json", &file.to_json())?;
        }
        Command::Detect => {
            let sweep = eval::fixture_sweep(&config);
            let evaluator = eval::evaluator(&config)?;
            let report = parallel::run_sweep_parallel(&sweep, &*evaluator, &pool)?;
            info!("effective lengths {:?}", report.effective_lengths);
            emit(&out, "detection", cli.format, || report::detection_csv(&report), || report::detection_json(&report))?;
            write(&out, "detection.svg", &report::detection_svg(&report))?;
        }
        Command::AnalyzeNorms { queries, keys, mode } => {
            let q = load_heads(queries)?;
            let k = load_heads(keys)?;
            let mode = match mode {
                Mode::Factored => NormMode::Factored,
                Mode::Joint => NormMode::Joint,
            };
            let profile = collect_norms(&q, &k, mode)?;
            emit(&out, "norms", cli.format, || report::norms_csv(&profile), || report::norms_json(&profile))?;
            write(&out, "norms.svg", &report::norms_svg(&profile))?;
        }
        Command::Eval => {
            let report = eval::run(&config, &pool)?;
            emit(&out, "eval", cli.format, || report.to_csv(), || report.to_json())?;
        }
        Command::Bench => {
            let spec = BenchSpec {
                lengths: config.bench.lengths.clone(),
                heads: config.bench.heads,
                head_dim: config.head_dim,
                tile: config.bench.tile,
                repeats: config.bench.repeats,
                warmup: config.bench.warmup,
                window: config.window,
                top_k: config.top_k,
                effective_lengths: config
                    .effective_lengths
                    .clone()
                    .unwrap_or_else(|| bench::DEFAULT_EFFECTIVE_LENGTHS.to_vec()),
                reference_length: config.target_length,
                clamp: config.clamp,
                seed: config.seed,
            };
            let report = bench::run(&spec, &pool)?;
            for row in &report.rows {
                info!("{} L={} mean {:.2} ms, cv {:.3}", row.engine, row.len, row.mean_ms, row.cv);
            }
            for (len, ratio) in &report.overhead {
                info!("L={len}: dpe/standard = {ratio:.3}");
            }
            emit(&out, "bench", cli.format, || report.to_csv(), || report.to_json())?;
        }
    }
    Ok(())
}
