use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splatloc_bench::config::ScenarioConfig;
use splatloc_bench::correlation::{correlation_report, write_scatter_csv};
use splatloc_bench::runner::{prepare, resolve_output_dir, write_outputs};
use splatloc_bench::sweep::{ablation, format_ablation, format_sweep, sweep, SweepParam};
use splatloc_bench::BenchError;
use splatloc_core::fisher::{gaussian_scores, FisherConfig};
use splatloc_core::geometry::{CameraIntrinsics, Pose};
use splatloc_core::gridio::{depth_grid, uncertainty_grid, write_png};
use splatloc_core::render::render;
use splatloc_core::scene::{load_scene, save_scene, SceneConfig};

#[derive(Parser)]
#[command(name = "splatloc", version, about = "Camera pose refinement benchmarks on synthetic Gaussian scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene utilities.
    Scene {
        #[command(subcommand)]
        command: SceneCommand,
    },
    /// Run a scenario and write report.csv, metrics.json and diagnostics.jsonl.
    Run(RunArgs),
    /// Run a scenario once per parameter value, or the 2x2 ablation.
    Sweep(SweepArgs),
    /// Rank-correlate match confidence and uncertainty with pose error.
    Correlate(RunArgs),
    /// Dump colour, depth and uncertainty buffers for one pose.
    Render(RenderArgs),
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Generate a synthetic scene and save it as JSON.
    Gen(SceneGenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Room,
    Facade,
}

#[derive(Args)]
struct SceneGenArgs {
    /// Take the scene section and seed from this scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "room")]
    layout: LayoutArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to $SPLATLOC_OUT_DIR, then the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Single render → match → PnP pass instead of Monte Carlo refinement.
    #[arg(long)]
    no_mcr: bool,
    /// Plain RANSAC without uncertainty-weighted sampling.
    #[arg(long)]
    no_upnp: bool,
    /// Write 0 for every wall time.
    #[arg(long)]
    deterministic_timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// particles, beta or noise_sigma.
    #[arg(long, default_value = "particles")]
    param: String,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    values: Vec<f64>,
    /// Run the refinement × weighted-PnP table instead.
    #[arg(long)]
    ablation: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// qw,qx,qy,qz,tx,ty,tz (camera to world).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pose: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 384)]
    height: usize,
    #[arg(long, default_value_t = 65.0)]
    hfov: f64,
    /// Compute per-Gaussian uncertainty for the uncertainty channel.
    #[arg(long)]
    uncertainty: bool,
    #[arg(long)]
    out: PathBuf,
}

fn load_run_config(args: &RunArgs) -> Result<ScenarioConfig, BenchError> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(q) = args.queries {
        cfg.query_count = q;
    }
    if let Some(p) = args.particles {
        cfg.refine.particles = p;
    }
    if args.no_mcr {
        cfg.ablation.mcr = false;
    }
    if args.no_upnp {
        cfg.ablation.uncertainty_pnp = false;
    }
    if args.deterministic_timing {
        cfg.deterministic_timing = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serialisable"))?;
    Ok(())
}

fn scene_gen(args: &SceneGenArgs) -> Result<(), BenchError> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => {
            let scene = match args.layout {
                LayoutArg::Room => SceneConfig::default(),
                LayoutArg::Facade => SceneConfig::facade(),
            };
            ScenarioConfig {
                scene,
                ..Default::default()
            }
        }
    };
    if let Some(s) = args.seed {
        cfg.scene_seed = s;
    }
    if let Some(a) = args.anchors {
        cfg.scene.anchor_count = a;
    }
    let scene = splatloc_bench::runner::generate_scene(&cfg)?;
    save_scene(&scene, &args.out).map_err(|e| BenchError::SceneIo(e.to_string()))?;
    println!("{} anchors, {} gaussians -> {}", scene.anchors().len(), scene.gaussian_count(), args.out.display());
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), BenchError> {
    let cfg = load_run_config(args)?;
    let dir = resolve_output_dir(args.out.as_deref(), &cfg);
    let result = prepare(&cfg, Some(&dir.join("cache")))?.run()?;
    write_outputs(&result, &dir)?;
    let r = &result.report;
    println!(
        "{}: {} queries, {} failed, median {:.4} m / {:.3} deg, recall@2cm2deg {:.3}, recall@5cm5deg {:.3}{}",
        cfg.name,
        r.queries,
        r.failures,
        r.median_translation_m.unwrap_or(f64::NAN),
        r.median_rotation_deg.unwrap_or(f64::NAN),
        r.recall_2cm_2deg,
        r.recall_5cm_5deg,
        if r.valid { "" } else { " (invalid: most queries failed)" }
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), BenchError> {
    let cfg = load_run_config(&args.run)?;
    let dir = resolve_output_dir(args.run.out.as_deref(), &cfg);
    std::fs::create_dir_all(&dir)?;
    if args.ablation {
        let rows = ablation(&cfg)?;
        print!("{}", format_ablation(&rows));
        write_json(&dir.join("ablation.json"), &rows)?;
    } else {
        let param: SweepParam = args.param.parse()?;
        let table = sweep(&cfg, param, &args.values)?;
        print!("{}", format_sweep(&table));
        write_json(&dir.join(format!("sweep-{}.json", param.name())), &table)?;
    }
    Ok(())
}

fn correlate(args: &RunArgs) -> Result<(), BenchError> {
    let cfg = load_run_config(args)?;
    let dir = resolve_output_dir(args.out.as_deref(), &cfg);
    let result = prepare(&cfg, Some(&dir.join("cache")))?.run()?;
    write_outputs(&result, &dir)?;
    let mut scatter = Vec::new();
    write_scatter_csv(&result.records, &mut scatter)?;
    std::fs::write(dir.join("scatter.csv"), scatter)?;
    let report = correlation_report(&result.records)?;
    write_json(&dir.join("correlation.json"), &report)?;
    println!(
        "n={} spearman(confidence, error)={:.3}{} spearman(uncertainty, error)={:.3}{}",
        report.queries,
        report.confidence_vs_error.rho,
        if report.confidence_vs_error.degenerate { " (degenerate)" } else { "" },
        report.uncertainty_vs_error.rho,
        if report.uncertainty_vs_error.degenerate { " (degenerate)" } else { "" },
    );
    Ok(())
}

fn render_cmd(args: &RenderArgs) -> Result<(), BenchError> {
    let scene = load_scene(&args.scene).map_err(|e| BenchError::SceneIo(format!("{}: {e}", args.scene.display())))?;
    let v: [f64; 7] = args
        .pose
        .as_slice()
        .try_into()
        .map_err(|_| BenchError::Config("--pose needs 7 numbers".into()))?;
    let pose = Pose::from_array(v);
    let k = CameraIntrinsics::from_fov(args.width, args.height, args.hfov)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let scores = if args.uncertainty {
        Some(gaussian_scores(&scene, &FisherConfig::default()).map_err(|e| BenchError::SceneIo(e.to_string()))?)
    } else {
        None
    };
    let buf = render(&scene, &pose, &k, scores.as_deref()).map_err(|e| BenchError::SceneIo(e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    let io = |e: splatloc_core::gridio::GridError| BenchError::SceneIo(e.to_string());
    write_png(&buf.color, &args.out.join("color.png")).map_err(io)?;
    depth_grid(&buf).write(&args.out.join("depth.grid")).map_err(io)?;
    if scores.is_some() {
        uncertainty_grid(&buf).write(&args.out.join("uncertainty.grid")).map_err(io)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scene {
            command: SceneCommand::Gen(a),
        } => scene_gen(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Correlate(a) => correlate(a),
        Command::Render(a) => render_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
