//! `mfe-descent`: flight envelopes, terrain, descent planning and validation
//! from the command line.
//!
//! Exit codes: 0 success, 1 input/config/IO error, 2 usage error,
//! 3 no feasible plan, 4 planned but validation failed.

mod export;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mfe_descent::envelope::{sweep_mfe, Axis, EnvelopeOptions, GridSpec};
use mfe_descent::flightdyn::{AircraftModel, FailureSpec, Surface};
use mfe_descent::planner::{
    plan_one_piece, plan_piecewise, recover_controls, validate, PlanStatus, Scenario, ScenarioFile, Trajectory,
};
use mfe_descent::terrain::{generate, TerrainSpec};
use mfe_descent::units::ft_to_m;

use export::PlanSummary;
use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "mfe-descent", version, about = "Impaired-aircraft flight envelopes and emergency descent planning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Aircraft model JSON; the bundled surrogate when absent. Overrides
    /// the scenario's aircraft for `plan` and `validate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Terrain generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the envelope sweep; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the manoeuvring flight envelope of the (impaired) aircraft.
    Envelope(EnvelopeArgs),
    /// Generate a synthetic terrain from a spec.
    Terrain(TerrainArgs),
    /// Plan a descent, recover controls and validate.
    Plan(PlanArgs),
    /// Re-validate a saved plan against its scenario.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct EnvelopeArgs {
    /// `none`, `<surface>-jam:<deg>` or `<surface>-loss:<factor>`, surface
    /// one of elevator, aileron, rudder.
    #[arg(long, default_value = "none")]
    failure: String,
    /// Altitude with unit, e.g. `6000m` or `10000ft`.
    #[arg(long)]
    altitude: String,
    /// Restrict the sweep to the slice nearest this flight-path angle, deg.
    #[arg(long)]
    gamma_deg: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TerrainArgs {
    /// Terrain spec JSON.
    spec: PathBuf,
    /// Terrain JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional height raster CSV.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Raster points per side.
    #[arg(long, default_value_t = 201)]
    raster_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    OnePiece,
    Piecewise,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Scenario JSON; referenced files resolve relative to it.
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "one-piece")]
    mode: Mode,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    scenario: PathBuf,
    /// `trajectory.json` written by `plan`.
    #[arg(long)]
    trajectory: PathBuf,
    /// Optional report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Done,
    Infeasible,
    Rejected,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Envelope(a) => cmd_envelope(&cli.global, a),
        Command::Terrain(a) => cmd_terrain(&cli.global, a),
        Command::Plan(a) => cmd_plan(&cli.global, a),
        Command::Validate(a) => cmd_validate(&cli.global, a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(3),
        Ok(Outcome::Rejected) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_failure(s: &str) -> Result<FailureSpec> {
    let s = s.trim().to_ascii_lowercase();
    if s == "none" {
        return Ok(FailureSpec::None);
    }
    let (kind, value) = s
        .split_once(':')
        .with_context(|| format!("failure `{s}` is not `none`, `<surface>-jam:<deg>` or `<surface>-loss:<factor>`"))?;
    let (surface, mode) = kind.split_once('-').with_context(|| format!("failure kind `{kind}` has no surface"))?;
    let surface = match surface {
        "elevator" => Surface::Elevator,
        "aileron" => Surface::Aileron,
        "rudder" => Surface::Rudder,
        other => bail!("unknown surface `{other}`"),
    };
    let value: f64 = value.parse().with_context(|| format!("failure value `{value}` is not a number"))?;
    match mode {
        "jam" => Ok(FailureSpec::SurfaceJam {
            surface,
            angle: value.to_radians(),
        }),
        "loss" => Ok(FailureSpec::EffectivenessLoss { surface, factor: value }),
        other => bail!("unknown failure mode `{other}`"),
    }
}

/// Altitude in metres from `<value>m` or `<value>ft`.
fn parse_altitude(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, to_m): (&str, fn(f64) -> f64) = if let Some(n) = s.strip_suffix("ft") {
        (n, ft_to_m)
    } else if let Some(n) = s.strip_suffix('m') {
        (n, |m| m)
    } else {
        bail!("altitude `{s}` needs a unit suffix, `m` or `ft`");
    };
    num.trim()
        .parse::<f64>()
        .map(to_m)
        .with_context(|| format!("altitude `{s}` is not a number"))
}

fn load_model(path: Option<&Path>, manifest: &mut RunManifest) -> Result<AircraftModel> {
    match path {
        Some(p) => {
            let m = AircraftModel::load(p).with_context(|| format!("loading aircraft config {}", p.display()))?;
            manifest.config_paths.push(p.display().to_string());
            manifest.input(p)?;
            Ok(m)
        }
        None => Ok(AircraftModel::surrogate()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path)
}

fn cmd_envelope(g: &Global, a: &EnvelopeArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::new("envelope");
    let model = load_model(g.config.as_deref(), &mut manifest)?;
    let failure = parse_failure(&a.failure)?;
    let altitude = parse_altitude(&a.altitude)?;
    let mut grid = GridSpec::default_at(altitude);
    if let Some(gd) = a.gamma_deg {
        let gamma = grid.gamma.at(grid.gamma.nearest(gd.to_radians()));
        grid.gamma = Axis::new(gamma, gamma, grid.gamma.step);
    }
    let t = Instant::now();
    let env = sweep_mfe(&grid, &model, &failure, &EnvelopeOptions::default())?;
    manifest.time("sweep", t.elapsed().as_secs_f64());
    create_dir(&a.out)?;
    let path = a.out.join("envelope.json");
    write(&path, &env.to_json(), &mut manifest)?;
    for ig in 0..grid.gamma.count() {
        let gamma = grid.gamma.at(ig);
        let name = format!("boundary_gamma_{:+.0}_deg.csv", gamma.to_degrees());
        write(&a.out.join(name), &export::slice_csv(&env, gamma), &mut manifest)?;
    }
    manifest.write(&a.out.join("manifest.json"))?;
    println!("feasible points: {} of {}", env.feasible_count(), grid.len());
    Ok(Outcome::Done)
}

fn cmd_terrain(g: &Global, a: &TerrainArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::new("terrain");
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading terrain spec {}", a.spec.display()))?;
    let spec: TerrainSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing terrain spec {}", a.spec.display()))?;
    manifest.config_paths.push(a.spec.display().to_string());
    manifest.input(&a.spec)?;
    let seed = g.seed.unwrap_or(0);
    manifest.seeds.push(seed);
    let t = Instant::now();
    let terrain = generate(&spec, seed)?;
    manifest.time("generate", t.elapsed().as_secs_f64());
    write(&a.out, &terrain.to_json(), &mut manifest)?;
    if let Some(r) = &a.raster {
        if a.raster_size < 2 {
            bail!("raster size must be at least 2");
        }
        write(r, &export::raster_csv(&terrain, a.raster_size, a.raster_size), &mut manifest)?;
    }
    manifest.write(&sibling(&a.out, "manifest.json"))?;
    println!("terrain: {} bumps, highest peak {:.1} m", terrain.bumps.len(), terrain.max_peak());
    Ok(Outcome::Done)
}

/// `<file>.<suffix>` next to `file`.
fn sibling(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    file.with_file_name(name)
}

fn load_scenario(g: &Global, path: &Path, manifest: &mut RunManifest) -> Result<Scenario> {
    let mut file = ScenarioFile::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
    manifest.config_paths.push(path.display().to_string());
    manifest.input(path)?;
    if let Some(c) = &g.config {
        file.aircraft = Some(std::path::absolute(c)?);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = file.resolve(base).with_context(|| format!("resolving scenario {}", path.display()))?;
    let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if let Some(p) = &file.aircraft {
        manifest.config_paths.push(at(p).display().to_string());
        manifest.input(&at(p))?;
    }
    manifest.input(&at(&file.terrain))?;
    for e in &file.envelopes {
        manifest.input(&at(e))?;
    }
    if let Some(seed) = scenario.terrain.seed {
        manifest.seeds.push(seed);
    }
    Ok(scenario)
}

fn cmd_plan(g: &Global, a: &PlanArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::new("plan");
    let scenario = load_scenario(g, &a.scenario, &mut manifest)?;
    create_dir(&a.out)?;
    let t = Instant::now();
    let mut traj = match a.mode {
        Mode::OnePiece => plan_one_piece(&scenario)?,
        Mode::Piecewise => plan_piecewise(&scenario)?,
    };
    manifest.time("plan", t.elapsed().as_secs_f64());
    let t = Instant::now();
    if traj.status != PlanStatus::Infeasible {
        recover_controls(&mut traj, &scenario);
    }
    manifest.time("recover_controls", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let report = validate(&traj, &scenario);
    manifest.time("validate", t.elapsed().as_secs_f64());
    let summary = PlanSummary::new(&traj, scenario.config.segment_nodes, report);
    write(&a.out.join("trajectory.csv"), &export::trajectory_csv(&traj), &mut manifest)?;
    write(&a.out.join("dense.csv"), &export::dense_csv(&traj), &mut manifest)?;
    write(&a.out.join("trajectory.json"), &serde_json::to_string(&traj)?, &mut manifest)?;
    write(&a.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?, &mut manifest)?;
    manifest.write(&a.out.join("manifest.json"))?;
    print_summary(&summary);
    Ok(match (traj.status, summary.validation.passed) {
        (PlanStatus::Infeasible, _) => Outcome::Infeasible,
        (_, false) => Outcome::Rejected,
        (_, true) => Outcome::Done,
    })
}

fn print_summary(s: &PlanSummary) {
    let v = &s.validation;
    println!("mode: {:?}, status: {:?}", s.mode, s.status);
    println!(
        "segments: {}, nodes: {}, cost: {:.3}, traverse time: {:.1} s, planning time: {:.2} s",
        s.segments, s.nodes, s.total_numerical_cost, s.total_traverse_time_s, s.total_planning_time_s
    );
    println!(
        "terrain margin: {:.2} m, envelope violations: {}, max defect: {:.2e}, runway miss: {:.2} m, replay error: {:.2} m, trim failures: {}",
        v.min_terrain_margin, v.envelope_violations, v.max_defect, v.runway_miss, v.replay_error, v.trim_failures
    );
    println!("validation: {}", if v.passed { "passed" } else { "FAILED" });
}

fn cmd_validate(g: &Global, a: &ValidateArgs) -> Result<Outcome> {
    let mut manifest = RunManifest::new("validate");
    let scenario = load_scenario(g, &a.scenario, &mut manifest)?;
    let text = std::fs::read_to_string(&a.trajectory)
        .with_context(|| format!("reading trajectory {}", a.trajectory.display()))?;
    let traj: Trajectory =
        serde_json::from_str(&text).with_context(|| format!("parsing trajectory {}", a.trajectory.display()))?;
    manifest.input(&a.trajectory)?;
    let t = Instant::now();
    let report = validate(&traj, &scenario);
    manifest.time("validate", t.elapsed().as_secs_f64());
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => {
            write(p, &json, &mut manifest)?;
            manifest.write(&sibling(p, "manifest.json"))?;
        }
        None => println!("{json}"),
    }
    println!("validation: {}", if report.passed { "passed" } else { "FAILED" });
    Ok(if report.passed { Outcome::Done } else { Outcome::Rejected })
}
