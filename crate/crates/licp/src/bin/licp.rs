use clap::{Args, Parser, Subcommand};
use licp::cli::{cmd_benchmark, cmd_register, cmd_timing, RegisterOptions, RunManifest};
use licp::pipeline::{head_preset, PipelineConfig, SolverKind};
use std::path::PathBuf;
use std::process::ExitCode;

/// Staged Laplacian-ICP non-rigid mesh registration.
#[derive(Parser)]
#[command(name = "licp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register every subject of a manifest onto the template.
    Register(RegisterArgs),
    /// Score registered outputs with the annotation-transfer metrics.
    Benchmark(BenchmarkArgs),
    /// Measure per-stage cumulative wall time for one or more solvers.
    Timing(TimingArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Subject manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Pipeline configuration; defaults to the bundled head preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for registered meshes and traces.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deformation solver for the free-deformation stages.
    #[arg(long)]
    solver: Option<SolverKind>,
    /// Parallel subject workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Print the inheritance-resolved stage configurations and exit.
    #[arg(long)]
    dump_config: bool,
    /// Save the template after each stage (needed for per-stage benchmarks).
    #[arg(long)]
    save_stage_snapshots: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `register` outputs.
    #[arg(long)]
    registered: PathBuf,
    /// Output directory for the metric report and colormap.
    #[arg(long)]
    out: PathBuf,
    /// Also score each saved stage snapshot.
    #[arg(long)]
    per_stage: bool,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Solvers to time; may be given more than once. Defaults to both.
    #[arg(long)]
    solver: Vec<SolverKind>,
}

fn load_config(path: &Option<PathBuf>) -> licp::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(head_preset()),
    }
}

fn run() -> licp::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Register(args) => {
            let config = load_config(&args.config)?;
            if args.dump_config {
                let resolved = config.resolve()?;
                println!("{}", serde_json::to_string_pretty(&resolved)?);
                return Ok(ExitCode::SUCCESS);
            }
            let manifest = RunManifest::load(&args.manifest)?;
            let out = args.out.ok_or_else(|| {
                licp::Error::InvalidConfig("--out is required unless --dump-config".into())
            })?;
            let report = cmd_register(
                &manifest,
                &config,
                &out,
                &RegisterOptions {
                    solver: args.solver,
                    workers: args.workers,
                    save_stage_snapshots: args.save_stage_snapshots,
                },
            )?;
            for status in &report.statuses {
                match &status.outcome {
                    Ok(()) => println!("{}: ok", status.id),
                    Err(e) => println!("{}: FAILED ({e})", status.id),
                }
            }
            Ok(if report.all_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Benchmark(args) => {
            let manifest = RunManifest::load(&args.manifest)?;
            let output = cmd_benchmark(&manifest, &args.registered, &args.out, args.per_stage)?;
            println!(
                "subjects {}  touched {}  density {}  homogeneity {}  misses {}",
                output.report.n_subjects,
                output.report.touched_vertices,
                licp::cli::format_sig4(output.report.density),
                licp::cli::format_sig4(output.report.homogeneity),
                output.report.ray_misses,
            );
            for l in &output.report.per_label {
                println!(
                    "  label {:<20} h {:<10} w {}",
                    l.label,
                    licp::cli::format_sig4(l.homogeneity),
                    licp::cli::format_sig4(l.weight),
                );
            }
            for s in &output.per_stage {
                println!(
                    "  stage {:<24} density {:<10} homogeneity {}",
                    s.stage,
                    licp::cli::format_sig4(s.density),
                    licp::cli::format_sig4(s.homogeneity),
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Timing(args) => {
            let config = load_config(&args.config)?;
            let manifest = RunManifest::load(&args.manifest)?;
            let solvers = if args.solver.is_empty() {
                vec![SolverKind::Licp, SolverKind::Pvac]
            } else {
                args.solver
            };
            let table = cmd_timing(&manifest, &config, &solvers)?;
            print!("{table}");
            println!("{}", serde_json::to_string(&table)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
