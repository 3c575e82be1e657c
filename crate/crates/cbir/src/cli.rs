//! Command-line front end: `index`, `query`, `eval` and `serve`.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cbir_core::index::IndexOptions;
use cbir_core::{
    crop, retrieve_combined, ClassSpec, CostMode, CropRect, DistanceSpace, FeatureIndex, Technique, TechniqueSet,
};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::clock::WallClock;
use crate::corpus::{build_from_dir, Labeling};
use crate::manifest::{default_queries, load_manifest};
use crate::report::{render_json, render_text, run_evaluation, EvalMode, EvalSettings};
use crate::service::{self, AppState, ServiceConfig, DEFAULT_THUMBNAIL_SIZE};
use crate::{decode_image, load_index, save_index};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cbir",
    version,
    about = "Content-based image retrieval over color, texture and shape features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features from every image under a directory and write an index file.
    Index(IndexArgs),
    /// Rank indexed images against a query image.
    Query(QueryArgs),
    /// Run the per-class evaluation tables over a labeled index.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("labels").args(["class_from_dirname", "class_wang_numbering"])))]
pub struct IndexArgs {
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Label each image by its parent directory name.
    #[arg(long)]
    pub class_from_dirname: bool,
    /// Label numeric file stems n as class (n / 100 + 1).
    #[arg(long)]
    pub class_wang_numbering: bool,
    #[arg(long, value_parser = parse_space, default_value = "normalized")]
    pub space: DistanceSpace,
    /// Percentile of pairwise distances used as each default threshold.
    #[arg(long, default_value_t = cbir_core::index::DEFAULT_PERCENTILE)]
    pub percentile: f64,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Comma-separated technique names; all six when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_technique)]
    pub techniques: Vec<Technique>,
    /// Region of interest as x,y,w,h in pixels.
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<CropRect>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Threshold override, repeatable: technique=value.
    #[arg(long = "threshold", value_parser = parse_override)]
    pub thresholds: Vec<(Technique, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").args(["techniques", "each", "combined", "optimize"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// JSON object mapping class label to query image id; first member per class when omitted.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_technique)]
    pub techniques: Vec<Technique>,
    /// One table per technique.
    #[arg(long)]
    pub each: bool,
    /// All six techniques combined (default).
    #[arg(long)]
    pub combined: bool,
    /// Best subset per class plus the three-way comparison.
    #[arg(long)]
    pub optimize: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Report scanned vectors instead of seconds in the time column.
    #[arg(long)]
    pub deterministic_cost: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Index to serve; started empty when the file does not exist yet.
    #[arg(long, env = "CBIR_INDEX")]
    pub index: PathBuf,
    #[arg(long, env = "CBIR_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Base directory for relative corpus paths in build requests.
    #[arg(long, env = "CBIR_CORPUS_ROOT")]
    pub corpus_root: Option<PathBuf>,
    #[arg(long, env = "CBIR_THUMBNAIL_SIZE", default_value_t = DEFAULT_THUMBNAIL_SIZE)]
    pub thumbnail_size: u32,
}

fn parse_space(s: &str) -> Result<DistanceSpace, String> {
    s.parse()
        .map_err(|_| format!("unknown distance space {s:?} (normalized, raw)"))
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse().map_err(|e: cbir_core::FeatureError| e.to_string())
}

pub fn parse_crop(s: &str) -> Result<CropRect, String> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(x), Ok(y), Ok(w), Ok(h)] => Ok(CropRect::new(*x, *y, *w, *h)),
        _ => Err(format!("expected x,y,w,h as non-negative integers, got {s:?}")),
    }
}

fn parse_override(s: &str) -> Result<(Technique, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected technique=value, got {s:?}"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("{value:?}: {e}"))?;
    Ok((parse_technique(name.trim())?, value))
}

fn cmd_index(args: &IndexArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let labeling = if args.class_from_dirname {
        Labeling::Dirname
    } else if args.class_wang_numbering {
        Labeling::WangNumbering
    } else {
        Labeling::None
    };
    if !(0.0..=100.0).contains(&args.percentile) {
        bail!("--percentile must be within 0..=100");
    }
    let options = IndexOptions {
        space: args.space,
        percentile: args.percentile,
        ..IndexOptions::default()
    };
    let built = build_from_dir(&args.corpus_dir, labeling, &options)?;
    for f in &built.failures {
        eprintln!("skipped {}: {}", f.path, f.reason);
    }
    save_index(&built.index, &args.index).with_context(|| format!("cannot write {}", args.index.display()))?;
    writeln!(out, "{} records", built.index.len())?;
    if !built.failures.is_empty() {
        writeln!(out, "{} files skipped", built.failures.len())?;
    }
    writeln!(out, "space: {}", built.index.space().name())?;
    writeln!(out, "thresholds (p{}):", args.percentile)?;
    for t in Technique::ALL {
        writeln!(out, "  {:<22} {}", t.name(), built.index.thresholds().get(t))?;
    }
    for timing in &built.timings {
        log::info!("{}: {:.3} s", timing.technique, timing.seconds);
    }
    Ok(())
}

fn open_index(path: &Path) -> anyhow::Result<FeatureIndex> {
    load_index(path).with_context(|| format!("cannot load index {}", path.display()))
}

fn cmd_query(args: &QueryArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let ix = open_index(&args.index)?;
    let bytes = std::fs::read(&args.image).with_context(|| format!("cannot read {}", args.image.display()))?;
    let full = decode_image(&bytes).with_context(|| format!("cannot decode {}", args.image.display()))?;
    let img = match args.crop {
        Some(rect) => crop(&full, rect)?,
        None => full,
    };
    let techniques = if args.techniques.is_empty() {
        TechniqueSet::ALL
    } else {
        args.techniques.iter().copied().collect()
    };
    let mut cfg = *ix.thresholds();
    for &(t, v) in &args.thresholds {
        cfg.set(t, v)?;
    }
    let result = retrieve_combined(&img, &ix, techniques, &cfg, &WallClock::new())?;
    writeln!(out, "techniques: {techniques}")?;
    writeln!(out, "{} hits in {:.3} s", result.hits.len(), result.elapsed)?;
    let limit = args.limit.unwrap_or(usize::MAX);
    for (rank, hit) in result.hits.iter().take(limit).enumerate() {
        let label = ix.record(&hit.id).and_then(|r| r.class_label.as_deref()).unwrap_or("-");
        writeln!(out, "{}\t{}\t{:.6}\t{}", rank + 1, hit.id, hit.distance, label)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let ix = open_index(&args.index)?;
    if !ix.is_labeled() {
        bail!("index {} has no class labels", args.index.display());
    }
    let queries = match &args.queries {
        Some(path) => load_manifest(path).with_context(|| format!("manifest {}", path.display()))?,
        None => default_queries(&ClassSpec::from_index(&ix)?),
    };
    let mode = if !args.techniques.is_empty() {
        EvalMode::Techniques(args.techniques.iter().copied().collect())
    } else if args.each {
        EvalMode::Each
    } else if args.optimize {
        EvalMode::Optimize
    } else {
        EvalMode::Combined
    };
    let settings = EvalSettings {
        cost: if args.deterministic_cost {
            CostMode::ScanCount
        } else {
            CostMode::WallClock
        },
        ..EvalSettings::default()
    };
    let report = run_evaluation(&ix, &queries, mode, &settings)?;
    match args.format {
        Format::Text => write!(out, "{}", render_text(&report)?)?,
        Format::Structured => writeln!(out, "{}", render_json(&report))?,
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let index = if args.index.exists() {
        Some(open_index(&args.index)?)
    } else {
        log::warn!("{} does not exist; starting without an index", args.index.display());
        None
    };
    let addr: SocketAddr = args
        .listen
        .parse()
        .with_context(|| format!("invalid listen address {:?}", args.listen))?;
    let state = AppState::new(
        index,
        ServiceConfig {
            index_path: Some(args.index.clone()),
            corpus_root: args.corpus_root.clone(),
            thumbnail_size: args.thumbnail_size,
        },
    );
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        service::serve(listener, state, service::shutdown_signal()).await?;
        Ok(())
    })
}

/// Runs one command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut impl Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::Index(a) => cmd_index(a, out),
        Command::Query(a) => cmd_query(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
