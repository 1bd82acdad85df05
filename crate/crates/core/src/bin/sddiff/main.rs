//! `sddiff` command-line front end.
//!
//! Every command reads its inputs from files and flags only, writes data to
//! files only, and exits nonzero with a message on stderr on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sddiff_core::cube::{adc_to_cube, cube_to_sddr, soften, PolarGrid, Sddr, Window, DEFAULT_SOFTEN_SIGMAS};
use sddiff_core::diffusion::{sample, OracleDenoiser};
use sddiff_core::eve::{eve_ransac, eve_wls, EgoVelocity};
use sddiff_core::io::{self, Tensor};
use sddiff_core::metrics::{self, CfarThreshold, EmdMode, MetricParams, OsCfar, PointCloud};
use sddiff_core::pipeline::{ShrinkageDenoiser, ShrinkageParams};
use sddiff_core::schedule::Schedule;
use sddiff_core::simulate::{ground_truth, inject_ghosts, synthesize_adc, RadarConfig, Scene};
use sddiff_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sddiff", version, about = "Spatial-Doppler radar diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an ADC frame plus ground truth from a scene file.
    Simulate(SimulateArgs),
    /// Turn an ADC frame into a radar cube and an SDDR.
    Encode(EncodeArgs),
    /// Refine SDDR occupancy with the reverse diffusion chain.
    Diffuse(DiffuseArgs),
    /// Estimate ego velocity from an SDDR or an observation list.
    Eve(EveArgs),
    /// Extract a point cloud from an SDDR or a refined occupancy field.
    Extract(ExtractArgs),
    /// Compare a predicted cloud with a reference cloud.
    Eval(EvalArgs),
    /// Render a bird's-eye view or a radial-velocity surface as PPM.
    Render(RenderArgs),
    /// Write a linear schedule as JSON.
    Schedule(ScheduleArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene JSON: {"scatterers": [...], "ego_velocity": [vx, vy, vz]}.
    #[arg(long)]
    scene: PathBuf,
    /// Radar configuration JSON; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    ghost_fraction: f64,
    /// Per-sample complex noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise_floor: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    adc: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// none | hann
    #[arg(long, default_value = "hann")]
    window: String,
    #[arg(long, default_value_t = sddiff_core::cube::DEFAULT_VALIDITY_FLOOR)]
    validity_floor: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserKind {
    Oracle,
    Shrinkage,
}

#[derive(Args)]
struct DiffuseArgs {
    #[arg(long)]
    sddr: PathBuf,
    /// Schedule JSON; the default 20-step linear schedule when omitted.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    denoiser: DenoiserKind,
    /// Truth SDDR (required by the oracle denoiser).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Soften the oracle target with the default Gaussian scales.
    #[arg(long)]
    soften: bool,
    #[arg(long)]
    seed: u64,
    /// Mask temperature of the shrinkage denoiser.
    #[arg(long, default_value_t = ShrinkageParams::default().temperature)]
    temperature: f64,
    /// Consensus threshold (m/s) of the shrinkage denoiser.
    #[arg(long, default_value_t = ShrinkageParams::default().gate)]
    threshold: f64,
    /// Refined occupancy tensor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EveMethod {
    Wls,
    Ransac,
}

#[derive(Args)]
struct EveArgs {
    #[arg(long, conflicts_with = "observations", required_unless_present = "observations")]
    sddr: Option<PathBuf>,
    /// CSV with azimuth,elevation,radial_velocity,weight rows.
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ransac")]
    method: EveMethod,
    #[arg(long, default_value_t = 0.08)]
    threshold: f64,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractMethod {
    Threshold,
    Cfar,
}

#[derive(Args)]
struct ExtractArgs {
    /// SDDR supplying the grid and Doppler.
    #[arg(long)]
    sddr: PathBuf,
    /// Refined occupancy replacing the SDDR's own.
    #[arg(long)]
    occupancy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "threshold")]
    method: ExtractMethod,
    #[arg(long, default_value_t = 0.3)]
    threshold: f64,
    #[arg(long, default_value_t = 4096)]
    max_points: usize,
    #[arg(long, default_value_t = 1)]
    guard: usize,
    #[arg(long, default_value_t = 4)]
    train: usize,
    #[arg(long, default_value_t = 6)]
    order: usize,
    #[arg(long, default_value_t = 1e-3)]
    pfa: f64,
    /// Output cloud (.csv or .ply).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    tau1: f64,
    #[arg(long, default_value_t = 0.3)]
    tau2: f64,
    /// exact | approximate; exact switches to approximate above the size cap.
    #[arg(long)]
    emd: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Bev,
    DopplerSurface,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_enum)]
    view: View,
    /// SDDR or occupancy tensor for the bird's-eye view.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Velocity JSON (as written by `eve`) for the surface view.
    #[arg(long)]
    velocity: Option<PathBuf>,
    /// Radar configuration supplying the surface's bearing grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pixels per cell.
    #[arg(long, default_value_t = 8)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 0.99)]
    alpha_bar_start: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha_bar_end: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RadarConfig> {
    let cfg = match path {
        Some(p) => io::read_json(p)?,
        None => RadarConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => io::cloud_from_ply(&std::fs::read(path)?),
        _ => io::cloud_from_csv(&std::fs::read_to_string(path)?),
    }
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => io::write_bytes(path, &io::cloud_to_ply(cloud)),
        _ => io::write_text(path, &io::cloud_to_csv(cloud)),
    }
}

fn read_sddr(path: &Path) -> Result<Sddr> {
    io::tensor_to_sddr(&Tensor::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SimulateManifest {
    seed: u64,
    ghost_fraction: f64,
    noise_floor: f64,
    scatterers: usize,
    ghosts: usize,
    ego_velocity: EgoVelocity,
    config: RadarConfig,
    /// Truth polar cell `[range, azimuth, elevation]` of each real scatterer.
    truth_cells: Vec<[usize; 3]>,
    files: Vec<&'static str>,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let scene: Scene = io::read_json(&a.scene)?;
    scene.ego_velocity.validate(EgoVelocity::DEFAULT_SPEED_CAP)?;
    scene.validate(&cfg)?;
    let scene = inject_ghosts(&scene, &cfg, a.ghost_fraction, a.seed)?;
    let adc = synthesize_adc(&scene, &cfg, a.seed, a.noise_floor)?;
    let (cloud, truth) = ground_truth(&scene, &cfg);
    let grid = cfg.grid();
    let truth_cells = scene
        .scatterers
        .iter()
        .filter(|s| !s.is_ghost)
        .filter_map(|s| grid.cell_of(s.position))
        .map(|(k, i, j)| [k, i, j])
        .collect();
    let out = &a.out_dir;
    io::adc_to_tensor(&adc).write(out.join("adc.bin"))?;
    io::sddr_to_tensor(&truth).write(out.join("truth_sddr.bin"))?;
    io::write_text(out.join("truth_cloud.csv"), &io::cloud_to_csv(&cloud))?;
    io::write_json(out.join("scene.json"), &scene)?;
    io::write_json(
        out.join("manifest.json"),
        &SimulateManifest {
            seed: a.seed,
            ghost_fraction: a.ghost_fraction,
            noise_floor: a.noise_floor,
            scatterers: scene.scatterers.len(),
            ghosts: scene.ghost_count(),
            ego_velocity: scene.ego_velocity,
            config: cfg,
            truth_cells,
            files: vec!["adc.bin", "truth_sddr.bin", "truth_cloud.csv", "scene.json"],
        },
    )
}

#[derive(Serialize)]
struct EncodeManifest {
    window: Window,
    validity_floor: f64,
    /// Strongest SDDR cell `[range, azimuth, elevation]`.
    peak_cell: [usize; 3],
    peak_doppler: Option<f64>,
    valid_cells: usize,
}

fn encode(a: EncodeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let window: Window = a.window.parse()?;
    if !(0.0..=1.0).contains(&a.validity_floor) {
        return Err(Error::InvalidParameter(format!("validity floor {} must lie in [0, 1]", a.validity_floor)));
    }
    let adc = io::tensor_to_adc(&Tensor::read(&a.adc)?)?;
    let cube = adc_to_cube(&adc, &cfg, window)?;
    let sddr = cube_to_sddr(&cube, a.validity_floor);
    let [_, na, ne] = sddr.occupancy.dims();
    let (idx, _) = sddr
        .occupancy
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
    let peak_cell = [idx / (na * ne), (idx / ne) % na, idx % ne];
    io::cube_to_tensor(&cube).write(a.out_dir.join("cube.bin"))?;
    io::sddr_to_tensor(&sddr).write(a.out_dir.join("sddr.bin"))?;
    io::write_json(
        a.out_dir.join("encode.json"),
        &EncodeManifest {
            window,
            validity_floor: a.validity_floor,
            peak_cell,
            peak_doppler: sddr.doppler.get(peak_cell[0], peak_cell[1], peak_cell[2]),
            valid_cells: sddr.doppler.valid_count(),
        },
    )
}

fn diffuse(a: DiffuseArgs) -> Result<()> {
    let sddr = read_sddr(&a.sddr)?;
    let schedule = match &a.schedule {
        Some(p) => Schedule::from_json(&std::fs::read_to_string(p)?)?,
        None => Schedule::default_sampling(),
    };
    let refined = match a.denoiser {
        DenoiserKind::Oracle => {
            let truth_path = a
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("the oracle denoiser needs --truth".into()))?;
            let truth = read_sddr(truth_path)?;
            if truth.grid != sddr.grid {
                return Err(Error::Format("truth and input SDDR grids differ".into()));
            }
            let x0 = if a.soften { soften(&truth.occupancy, &DEFAULT_SOFTEN_SIGMAS)? } else { truth.occupancy };
            sample(&sddr.occupancy, &sddr.doppler, &schedule, &OracleDenoiser { x0 }, a.seed)?
        }
        DenoiserKind::Shrinkage => {
            let params = ShrinkageParams { temperature: a.temperature, gate: a.threshold, seed: a.seed, ..Default::default() };
            let denoiser = ShrinkageDenoiser::from_sddr(&sddr, params)?;
            sample(&sddr.occupancy, &sddr.doppler, &schedule, &denoiser, a.seed)?
        }
    };
    io::volume_to_tensor(&refined, Some(&sddr.grid)).write(&a.out)
}

#[derive(Serialize)]
struct EveReport {
    method: &'static str,
    velocity: EgoVelocity,
    speed: f64,
    observations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inlier_rate: Option<f64>,
    /// Indices of observations rejected as outliers.
    #[serde(skip_serializing_if = "Option::is_none")]
    outliers: Option<Vec<usize>>,
}

fn eve(a: EveArgs) -> Result<()> {
    let obs = match (&a.sddr, &a.observations) {
        (Some(p), _) => read_sddr(p)?.observations(),
        (None, Some(p)) => io::observations_from_csv(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?,
        (None, None) => unreachable!("clap requires one input"),
    };
    let report = match a.method {
        EveMethod::Wls => {
            let v = eve_wls(&obs)?;
            EveReport {
                method: "wls",
                velocity: v,
                speed: v.norm(),
                observations: obs.len(),
                threshold: None,
                inliers: None,
                inlier_rate: None,
                outliers: None,
            }
        }
        EveMethod::Ransac => {
            let fit = eve_ransac(&obs, a.threshold, a.iterations, a.seed)?;
            EveReport {
                method: "ransac",
                velocity: fit.velocity,
                speed: fit.velocity.norm(),
                observations: obs.len(),
                threshold: Some(a.threshold),
                inliers: Some(fit.inlier_count()),
                inlier_rate: Some(fit.inlier_rate),
                outliers: Some(fit.inliers.iter().enumerate().filter(|(_, f)| !**f).map(|(i, _)| i).collect()),
            }
        }
    };
    io::write_json(&a.out, &report)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let mut sddr = read_sddr(&a.sddr)?;
    if let Some(p) = &a.occupancy {
        let t = Tensor::read(p)?;
        if let Some(g) = io::tensor_grid(&t)? {
            if g != sddr.grid {
                return Err(Error::Format(format!("{}: grid differs from the SDDR's", p.display())));
            }
        }
        let occ = io::tensor_to_volume(&t)?;
        if occ.dims() != sddr.occupancy.dims() {
            return Err(Error::DimensionMismatch { expected: sddr.occupancy.dims().to_vec(), found: occ.dims().to_vec() });
        }
        sddr.occupancy = occ;
    }
    let cloud = match a.method {
        ExtractMethod::Threshold => metrics::sddr_to_points(&sddr, a.threshold, a.max_points)?,
        ExtractMethod::Cfar => {
            let cfar = OsCfar::new(a.guard, a.train, a.order, CfarThreshold::Pfa(a.pfa))?;
            metrics::cfar_points(&sddr, &cfar)?
        }
    };
    write_cloud(&a.out, &cloud)
}

fn eval(a: EvalArgs) -> Result<()> {
    let params = MetricParams::new(a.tau1, a.tau2)?;
    let pred = read_cloud(&a.pred)?;
    let truth = read_cloud(&a.truth)?;
    let mut report = metrics::evaluate(&pred, &truth, &params)?;
    if let Some(mode) = &a.emd {
        let mode: EmdMode = mode.parse()?;
        report.emd = metrics::emd(&pred, &truth, mode)?;
        report.emd_mode = mode;
    }
    io::write_json(&a.out, &report)
}

#[derive(serde::Deserialize)]
struct VelocityFile {
    velocity: EgoVelocity,
}

fn render(a: RenderArgs) -> Result<()> {
    if a.scale == 0 {
        return Err(Error::InvalidParameter("scale must be at least 1".into()));
    }
    let image = match a.view {
        View::Bev => {
            let path = a.input.as_ref().ok_or_else(|| Error::InvalidParameter("bev needs --input".into()))?;
            let t = Tensor::read(path)?;
            let occ = if t.dims.len() == 4 { io::tensor_to_sddr(&t)?.occupancy } else { io::tensor_to_volume(&t)? };
            io::render_bev(&occ, a.scale)
        }
        View::DopplerSurface => {
            let path = a
                .velocity
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("doppler-surface needs --velocity".into()))?;
            let v: VelocityFile = io::read_json(path)?;
            let grid: PolarGrid = load_config(a.config.as_deref())?.grid();
            let az: Vec<f64> = grid.azimuth_grid().into_iter().filter(|x| x.is_finite()).collect();
            let el: Vec<f64> = grid.elevation_grid().into_iter().filter(|x| x.is_finite()).collect();
            io::render_doppler_surface(v.velocity, &az, &el, a.scale)
        }
    };
    io::write_bytes(&a.out, &image.to_ppm())
}

fn schedule(a: ScheduleArgs) -> Result<()> {
    let s = Schedule::linear(a.steps, a.alpha_bar_start, a.alpha_bar_end, a.lambda)?;
    io::write_text(&a.out, &s.to_json())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Encode(a) => encode(a),
        Command::Diffuse(a) => diffuse(a),
        Command::Eve(a) => eve(a),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
        Command::Schedule(a) => schedule(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
