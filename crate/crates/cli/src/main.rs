use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatcolor_core::pipeline::{self, DecompositionFile, PipelineConfig, RunManifest, Stage};
use splatcolor_core::{plot, Error, MetricsReport};

#[derive(Parser)]
#[command(name = "splatcolor", version, about = "Colorize grayscale Gaussian-splat scenes")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scene bundle and grayscale training views.
    Synth(StageArgs),
    FitGeometry(StageArgs),
    Decompose(StageArgs),
    Colorize(StageArgs),
    FitColor(StageArgs),
    Render(StageArgs),
    /// Run the metrics stage, or with --frames-dir/--flow-dir compute one
    /// warped-consistency value and print it.
    Metrics {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires = "flow_dir")]
        frames_dir: Option<PathBuf>,
        #[arg(long, requires = "frames_dir")]
        flow_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        delta: usize,
    },
    /// Run every stage in order.
    Run(StageArgs),
    /// Re-run the configuration recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write an SVG chart from a run's report or decomposition.
    Plot {
        #[arg(long, conflicts_with = "coverage", required_unless_present = "coverage")]
        histogram: Option<PathBuf>,
        #[arg(long)]
        coverage: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StageArgs {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    geometry_iterations: Option<usize>,
    #[arg(long)]
    color_iterations: Option<usize>,
    #[arg(long)]
    calibration_passes: Option<usize>,
}

impl StageArgs {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => pipeline::load_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.geometry_iterations {
            cfg.geometry_iterations = v;
        }
        if let Some(v) = self.color_iterations {
            cfg.color_iterations = v;
        }
        if let Some(v) = self.calibration_passes {
            cfg.calibration_passes = v;
        }
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn report_manifest(m: &RunManifest, args: &StageArgs) -> Result<(), Error> {
    let dir = args.config()?.output_dir;
    println!("ok manifest={} files={} digest={}", dir.join("manifest.json").display(), m.files.len(), m.content_digest());
    Ok(())
}

fn stage(args: &StageArgs, stage: Stage) -> Result<(), Error> {
    let m = pipeline::run_stage(&args.config()?, stage)?;
    report_manifest(&m, args)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => stage(&a, Stage::Scene),
        Command::FitGeometry(a) => stage(&a, Stage::FitGeometry),
        Command::Decompose(a) => stage(&a, Stage::Decompose),
        Command::Colorize(a) => stage(&a, Stage::Colorize),
        Command::FitColor(a) => stage(&a, Stage::FitColor),
        Command::Render(a) => stage(&a, Stage::Render),
        Command::Metrics {
            stage: a,
            frames_dir,
            flow_dir,
            delta,
        } => match (frames_dir, flow_dir) {
            (Some(frames), Some(flows)) => {
                // `{:?}` prints the shortest string that round-trips the f64.
                println!("{:?}", pipeline::consistency_from_dirs(&frames, &flows, delta)?);
                Ok(())
            }
            _ => stage(&a, Stage::Metrics),
        },
        Command::Run(a) => {
            let m = pipeline::run_pipeline(&a.config()?)?;
            report_manifest(&m, &a)
        }
        Command::Replay { manifest, output_dir } => {
            let m = pipeline::replay(&manifest, output_dir)?;
            println!("ok files={} digest={}", m.files.len(), m.content_digest());
            Ok(())
        }
        Command::Plot { histogram, coverage, out } => {
            let svg = match (histogram, coverage) {
                (Some(path), _) => {
                    let report: MetricsReport = serde_json::from_str(&read_text(&path)?)?;
                    plot::hue_histogram_svg(&report.hue_histogram)
                }
                (None, Some(path)) => {
                    let dec: DecompositionFile = serde_json::from_str(&read_text(&path)?)?;
                    plot::coverage_svg(&dec.coverage.covered_fraction)
                }
                (None, None) => unreachable!("clap requires one of the inputs"),
            };
            match out {
                Some(path) => std::fs::write(&path, svg).map_err(|source| Error::Io { path, source }),
                None => {
                    print!("{svg}");
                    Ok(())
                }
            }
        }
    }
}

/// `error kind=<kind> stage=<stage|-> message=<json string>` on one line.
fn error_line(kind: &str, stage: Option<&str>, message: &str) -> String {
    format!(
        "error kind={kind} stage={} message={}",
        stage.unwrap_or("-"),
        serde_json::Value::String(message.to_string())
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", None, first));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_line("invalid_argument", None, &e.to_string()));
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = match &e {
                Error::Stage { stage, .. } => Some(stage.as_str()),
                _ => None,
            };
            eprintln!("{}", error_line(e.kind(), stage, &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
