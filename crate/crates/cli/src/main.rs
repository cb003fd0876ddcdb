use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use scenewalk::artifacts::RunLayout;
use scenewalk::config::{keys_help, RunConfig, PROVIDER_URL_ENV};
use scenewalk::eval::{configured_trajectory, evaluate_run, EvalError, Reconstruction, Reference};
use scenewalk::mesh_io::{write_mesh, MeshFormat};
use scenewalk::pipeline::{provider_from_config, run};
use scenewalk::trajectory::{backward_smoothness, Trajectory};

#[derive(Parser)]
#[command(name = "scenewalk", version, about = "Text-driven walkthroughs of consistent 3D scenes", after_long_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a run from a configuration file.
    Generate(GenerateArgs),
    /// Print the metrics of a complete run as JSON.
    Evaluate(EvaluateArgs),
    /// Write the mesh saved at a frame as PLY or OBJ.
    ExportMesh(ExportArgs),
    /// Check pose files against the backward-smoothness constraint.
    FilterTrajectory(FilterArgs),
}

#[derive(Args)]
#[command(after_long_help = keys_help())]
struct GenerateArgs {
    /// TOML configuration file.
    config: PathBuf,
    /// Override a configuration key, e.g. `--set run.frames=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory; overrides `run.output`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Continue an interrupted run from its latest saved state.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    run_dir: PathBuf,
    /// `oracle`, or a reconstruction file (requires `--poses`).
    #[arg(long, default_value = "oracle")]
    reference: String,
    /// Estimated poses matching the reconstruction file.
    #[arg(long)]
    poses: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    run_dir: PathBuf,
    /// Frame index of a saved state.
    frame: usize,
    /// `ply` or `obj`.
    #[arg(long, default_value = "ply")]
    format: String,
    /// Destination; defaults to `mesh/export_<frame>.<format>` in the run.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// Pose files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Check the poses in reverse order.
    #[arg(long)]
    reversed: bool,
}

/// Exit 2: the inputs were rejected before any work started.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportMesh(a) => export_mesh(a),
        Command::FilterTrajectory(a) => filter_trajectory(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.is::<Invalid>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// The error chain, skipping causes a message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

/// Config file, then the URL environment variable, then `--set` flags.
fn load_config(args: &GenerateArgs) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| invalid(format!("cannot read {}: {e}", args.config.display())))?;
    let mut overrides = Vec::new();
    if let Ok(url) = std::env::var(PROVIDER_URL_ENV) {
        overrides.push(format!("provider.url={}", toml_string(&url)));
    }
    overrides.extend(args.overrides.iter().cloned());
    if let Some(out) = &args.output {
        overrides.push(format!("run.output={}", toml_string(&out.to_string_lossy())));
    }
    RunConfig::from_toml_with(&text, &overrides).map_err(invalid)
}

fn toml_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn generate(args: GenerateArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args)?;
    let trajectory = configured_trajectory(&config).map_err(invalid)?;
    if trajectory.len() < config.run.frames {
        return Err(invalid(format!(
            "trajectory has {} poses but run.frames is {}",
            trajectory.len(),
            config.run.frames
        )));
    }
    let layout = RunLayout::new(&config.run.output);
    let provider = provider_from_config(&config);
    let summary = run(&config, &trajectory, provider.as_ref(), &layout, args.resume)
        .with_context(|| format!("run in {}", layout.root.display()))?;
    log::info!(
        "{} frames in {} ({} vertices, {} faces)",
        summary.frames,
        layout.root.display(),
        summary.vertices,
        summary.faces
    );
    Ok(ExitCode::SUCCESS)
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<ExitCode> {
    let reference = if args.reference == "oracle" {
        if args.poses.is_some() {
            return Err(invalid("--poses only applies to a reconstruction reference"));
        }
        Reference::Oracle
    } else {
        let poses_path = args
            .poses
            .as_ref()
            .ok_or_else(|| invalid("a reconstruction reference needs --poses"))?;
        let reconstruction = Reconstruction::read(Path::new(&args.reference)).map_err(invalid)?;
        let config = RunConfig::from_toml(
            &std::fs::read_to_string(RunLayout::new(&args.run_dir).config())
                .with_context(|| format!("{} is not a run directory", args.run_dir.display()))?,
        )?;
        let poses = Trajectory::read(poses_path, Some(config.intrinsics())).map_err(invalid)?;
        Reference::Reconstruction { reconstruction, poses }
    };
    let report = evaluate_run(&RunLayout::new(&args.run_dir), &reference).map_err(|e| match e {
        EvalError::Artifact(_) => invalid(e),
        e => e.into(),
    })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn export_mesh(args: ExportArgs) -> anyhow::Result<ExitCode> {
    let format: MeshFormat = args.format.parse().map_err(invalid)?;
    let layout = RunLayout::new(&args.run_dir);
    let saved = layout.saved_states();
    if !saved.contains(&args.frame) {
        let list: Vec<String> = saved.iter().map(|i| i.to_string()).collect();
        return Err(invalid(format!(
            "no saved state for frame {} (available: {})",
            args.frame,
            if list.is_empty() {
                "none".into()
            } else {
                list.join(", ")
            }
        )));
    }
    let snapshot = layout.read_state(args.frame)?;
    let path = args.output.unwrap_or_else(|| {
        layout
            .root
            .join(format!("mesh/export_{:05}.{}", args.frame, format.extension()))
    });
    write_mesh(&snapshot.mesh, &path, format).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn filter_trajectory(args: FilterArgs) -> anyhow::Result<ExitCode> {
    if !(-1.0..=1.0).contains(&args.threshold) {
        return Err(invalid(format!(
            "threshold must lie in [-1, 1], got {}",
            args.threshold
        )));
    }
    let mut all = true;
    for file in &args.files {
        let mut traj = Trajectory::parse(
            &std::fs::read_to_string(file).map_err(|e| invalid(format!("{}: {e}", file.display())))?,
            Some(scenewalk::Intrinsics::new(1.0, 1.0, 0.0, 0.0)),
        )
        .map_err(|e| invalid(format!("{}: {e}", file.display())))?;
        if args.reversed {
            traj = traj.reversed();
        }
        let report =
            backward_smoothness(&traj, args.threshold).map_err(|e| invalid(format!("{}: {e}", file.display())))?;
        let worst = report.cosines.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        if report.passed {
            println!("PASS {} (min cosine {worst:.4})", file.display());
        } else {
            all = false;
            let pairs: Vec<String> = report.failures.iter().map(|t| format!("{t}-{}", t + 1)).collect();
            println!("FAIL {} (pairs {})", file.display(), pairs.join(", "));
        }
        for d in &report.diagnostics {
            eprintln!("{}: {d}", file.display());
        }
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
