//! Command-line front end: `pipeline`, `synth`, `plot` and `harvest`
//! subcommands over the library. Exit status is 0 only when no file-level
//! or site-level error occurred; failures print a JSON error summary on
//! stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vdf_calib::cleaning::CleaningConfig;
use vdf_calib::error::{Error, Result};
use vdf_calib::evaluate::SiteEvaluation;
use vdf_calib::harvester;
use vdf_calib::pipeline::{self, RunConfig};
use vdf_calib::synth;
use vdf_calib::types::SiteKey;

#[derive(Parser)]
#[command(
    name = "vdf-calib",
    about = "Calibrate context-specific volume-delay curves from counter and travel-time data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, cleaning, calibration and evaluation end to end.
    Pipeline(PipelineArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Plot one site: observation scatter plus fitted curves.
    Plot(PlotArgs),
    /// Execute a replay-backed harvest schedule.
    Harvest(HarvestArgs),
}

/// Keys accepted in the optional TOML config file; flags win over file
/// values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    counters: Option<PathBuf>,
    times: Option<PathBuf>,
    meta: Option<PathBuf>,
    out: Option<PathBuf>,
    eps: Option<f64>,
    min_points: Option<usize>,
    min_peak_volume: Option<u32>,
    min_time_cv: Option<f64>,
    seed: Option<u64>,
    grid: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::BadSpec {
            field: "config".to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Args)]
struct CommonIo {
    /// Counter CSV (site,direction,date,time,speed).
    #[arg(long)]
    counters: Option<PathBuf>,
    /// Travel-time/replay CSV (combined_id,timestamp_iso8601,duration_s).
    #[arg(long)]
    times: Option<PathBuf>,
    /// Site metadata CSV.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional TOML config file with the same keys; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CleaningFlags {
    /// DBSCAN radius on the normalized plane.
    #[arg(long)]
    eps: Option<f64>,
    /// DBSCAN minimum neighborhood size.
    #[arg(long)]
    min_points: Option<usize>,
    /// Minimum peak hourly volume for a site to be calibrated.
    #[arg(long)]
    min_peak_volume: Option<u32>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    io: CommonIo,
    #[command(flatten)]
    cleaning: CleaningFlags,
    /// Volume grid resolution for curve sampling.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec TOML; the built-in default corpus when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides every per-site seed deterministically.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional TOML config file; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Calibration CSV produced by the pipeline.
    #[arg(long)]
    calib: PathBuf,
    /// Combined site id, e.g. 11N.
    #[arg(long)]
    site: String,
    /// Volume grid resolution for curve sampling.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct HarvestArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Schedule interval in seconds; must divide one hour.
    #[arg(long, default_value_t = 3600)]
    interval: u32,
    /// Horizon start, e.g. 2016-03-07T00:30:00.
    #[arg(long)]
    start: String,
    /// Horizon end (exclusive).
    #[arg(long)]
    end: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Harvest(args) => cmd_harvest(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let summary = serde_json::json!({ "error": e.to_string() });
            eprintln!("{summary}");
            ExitCode::FAILURE
        }
    }
}

fn required(path: Option<PathBuf>, fallback: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.or(fallback).ok_or_else(|| Error::BadSpec {
        field: flag.to_string(),
        message: "missing required path (flag or config file)".to_string(),
    })
}

fn build_run_config(
    io: &CommonIo,
    cleaning: Option<&CleaningFlags>,
    grid: Option<usize>,
) -> Result<RunConfig> {
    let file = FileConfig::load(io.config.as_deref())?;
    let mut config = RunConfig::new(
        required(io.counters.clone(), file.counters, "--counters")?,
        required(io.times.clone(), file.times, "--times")?,
        required(io.meta.clone(), file.meta, "--meta")?,
        required(io.out.clone(), file.out, "--out")?,
    );
    let mut clean = CleaningConfig::default();
    if let Some(eps) = file.eps {
        clean.epsilon = eps;
    }
    if let Some(min_points) = file.min_points {
        clean.min_points = min_points;
    }
    if let Some(min_peak) = file.min_peak_volume {
        clean.min_peak_volume = min_peak;
    }
    if let Some(min_cv) = file.min_time_cv {
        clean.min_time_cv = min_cv;
    }
    if let Some(flags) = cleaning {
        if let Some(eps) = flags.eps {
            clean.epsilon = eps;
        }
        if let Some(min_points) = flags.min_points {
            clean.min_points = min_points;
        }
        if let Some(min_peak) = flags.min_peak_volume {
            clean.min_peak_volume = min_peak;
        }
    }
    clean.validate()?;
    config.cleaning = clean;
    config.grid_points = grid.or(file.grid).unwrap_or(100);
    Ok(config)
}

fn cmd_pipeline(args: PipelineArgs) -> Result<ExitCode> {
    let config = build_run_config(&args.io, Some(&args.cleaning), args.grid)?;
    let summary = pipeline::run_pipeline(&config)?;
    let clean = summary.is_clean();
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
    if clean {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{}",
            serde_json::json!({
                "error": "run completed with site or row errors",
                "site_errors": summary.site_errors,
                "counter_row_errors": summary.counter_row_errors,
                "time_row_errors": summary.time_row_errors,
            })
        );
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = args.seed.or(file.seed);
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            synth::CorpusSpec::from_toml(&text)?
        }
        None => synth::default_corpus_spec(seed.unwrap_or(2016)),
    };
    if args.spec.is_some() {
        if let Some(seed) = seed {
            spec.reseed(seed);
        }
    }
    let files = synth::generate_corpus(&spec, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "sites": spec.sites.len(),
            "counters": files.counters.display().to_string(),
            "times": files.times.display().to_string(),
            "metadata": files.metadata.display().to_string(),
            "ground_truth": files.truth.display().to_string(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(args: PlotArgs) -> Result<ExitCode> {
    let config = build_run_config(&args.io, None, args.grid)?;
    let site = SiteKey::from_str(&args.site)?;
    let calib_text = fs::read_to_string(&args.calib).map_err(|e| Error::io(&args.calib, e))?;
    let by_site = pipeline::read_calibration_csv(&calib_text)?;
    let Some(params) = by_site.get(&site) else {
        return Err(Error::UnknownSite {
            site: site.to_string(),
            available: by_site
                .keys()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", "),
        });
    };
    if params.len() != 3 {
        return Err(Error::BadSpec {
            field: "calibration".to_string(),
            message: format!("site {site} has {} model rows, expected 3", params.len()),
        });
    }
    let (meta, observations) = pipeline::site_observations(&config, site)?;
    let evaluation = SiteEvaluation {
        site,
        road_class: meta.road_class,
        link_length_m: meta.link_length_m,
        models: [params[0], params[1], params[2]],
        stratify_vc_vph: params[1].vc_vph,
        observations,
    };
    let (curve_bytes, svg_bytes) = pipeline::render_site(&evaluation, config.grid_points)?;
    let curve_path = config.out_dir.join(format!("{site}_curves.csv"));
    let svg_path = config.out_dir.join(format!("{site}.svg"));
    pipeline::write_atomic(&curve_path, &curve_bytes)?;
    pipeline::write_atomic(&svg_path, &svg_bytes)?;
    println!(
        "{}",
        serde_json::json!({
            "site": site.to_string(),
            "curves": curve_path.display().to_string(),
            "svg": svg_path.display().to_string(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_harvest(args: HarvestArgs) -> Result<ExitCode> {
    let file = FileConfig::load(args.io.config.as_deref())?;
    let meta_path = required(args.io.meta.clone(), file.meta, "--meta")?;
    let times_path = required(args.io.times.clone(), file.times, "--times")?;
    let out_dir = required(args.io.out.clone(), file.out, "--out")?;

    let parse_ts = |s: &str, field: &str| {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").map_err(|e| Error::BadSpec {
            field: field.to_string(),
            message: format!("bad timestamp '{s}': {e}"),
        })
    };
    let start = parse_ts(&args.start, "--start")?;
    let end = parse_ts(&args.end, "--end")?;

    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let catalog = vdf_calib::ingest::parse_metadata(meta_text.as_bytes())?;
    let times_text = fs::read_to_string(&times_path).map_err(|e| Error::io(&times_path, e))?;
    let (replay_records, replay_errors) = harvester::parse_travel_times(times_text.as_bytes())?;

    let plan = harvester::plan_requests(&catalog, args.interval, start, end)?;
    let provider = harvester::ReplayProvider::new(&catalog, &replay_records);
    let outcome = harvester::execute_plan(&plan, &provider);

    let mut csv_bytes = Vec::new();
    harvester::write_travel_time_csv(&mut csv_bytes, &outcome.records)?;
    let out_path = out_dir.join("harvested_times.csv");
    pipeline::write_atomic(&out_path, &csv_bytes)?;
    println!(
        "{}",
        serde_json::json!({
            "planned": plan.query_count(),
            "harvested": outcome.records.len(),
            "misses": outcome.misses.len(),
            "replay_row_errors": replay_errors.len(),
            "output": out_path.display().to_string(),
        })
    );
    Ok(ExitCode::SUCCESS)
}
