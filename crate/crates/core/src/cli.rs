//! Command-line front end. Every command validates the whole configuration
//! and computes its output in memory before anything is written.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{Config, ConfigError, Validated};
use crate::format::{csv_document, sig6};
use crate::friction::{ecmsf, ContactState, Direction};
use crate::kinematics::KinematicsError;
use crate::plant::{run_scenario, PlantError, Scenario};
use crate::sensing::{image_width_wimg, ratio_of_state, render_synthetic_frame, SensingError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        match e {
            KinematicsError::SolverFailure { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<SensingError> for CliError {
    fn from(e: SensingError) -> Self {
        match e {
            SensingError::Kinematics(k) => k.into(),
            SensingError::BehindCamera(_) => CliError::Solver(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<PlantError> for CliError {
    fn from(e: PlantError) -> Self {
        if e.is_solver_failure() {
            CliError::Solver(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cavs", version, about = "Variable-friction fingertip simulator")]
pub struct Cli {
    /// JSON configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when omitted, except for `render`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured noise seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Red-area ratio against deformation.
    RatioCurve(RangeArgs),
    /// Press force against deformation.
    PressCurve(PressArgs),
    /// Resistible force and ECMSF per direction and contact state.
    Anisotropy(ForceRangeArgs),
    /// Runs a grip scenario and writes the time series.
    ControlDemo(DemoArgs),
    /// Writes the synthetic camera frame at one deformation as PPM.
    Render(PointArgs),
    /// Prints the joint angles and ratio at one deformation.
    Solve(PointArgs),
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    #[arg(long, default_value_t = 0.0)]
    pub d_min: f64,
    /// Defaults to the surface-contact deformation.
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct PressArgs {
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, default_value_t = 4.0)]
    pub d_max: f64,
}

#[derive(Debug, Args)]
pub struct ForceRangeArgs {
    #[arg(long, default_value_t = 0.1)]
    pub f_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub f_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Scenario JSON; the bundled tube scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Also write the summary block to this file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    #[arg(long)]
    pub d: f64,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn load_config(cli: &Cli) -> Result<Validated, CliError> {
    let mut config = match &cli.config {
        Some(p) => Config::from_json(&read_text(p)?)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config.validate()?)
}

/// Samples `lo, lo + step, ...` ending exactly at `hi`.
fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(invalid(format!("bad range [{lo}, {hi}] with step {step}")));
    }
    let n = ((hi - lo) / step - 1e-9).ceil().max(0.0) as usize;
    if n > 10_000_000 {
        return Err(invalid("range has too many samples"));
    }
    // snapped to 1e-9 so that 190 * 0.01 is exactly the boundary value 1.9
    let snap = |x: f64| (x * 1e9).round() / 1e9;
    Ok((0..=n).map(|i| if i == n { hi } else { snap(lo + i as f64 * step) }).collect())
}

fn ratio_curve(v: &Validated, args: &RangeArgs) -> Result<String, CliError> {
    let (_, limit) = v.linkage.deformation_limits();
    let hi = args.d_max.unwrap_or(v.config.geometry.d_sc);
    if args.d_min < 0.0 || hi > limit {
        return Err(invalid(format!("deformation range [{}, {hi}] outside [0, {limit}]", args.d_min)));
    }
    let ds = grid(args.d_min, hi, args.step)?;
    let mut joint = v.linkage.rest_state();
    let mut rows = Vec::with_capacity(ds.len());
    for d in ds {
        joint = v.linkage.solve_from(&joint, d)?;
        let r = ratio_of_state(&v.camera, &joint)?;
        let state = v.config.friction.classify_contact_state(d);
        rows.push(format!("{},{},{}", sig6(d), sig6(100.0 * r), state.label()));
    }
    Ok(csv_document("d_mm,r_img_pct,contact_state", rows))
}

fn press_curve(v: &Validated, args: &PressArgs) -> Result<String, CliError> {
    let curve = v.config.friction.press_curve();
    let rows = grid(0.0, args.d_max, args.step)?.into_iter().map(|d| format!("{},{}", sig6(d), sig6(curve.force(d))));
    Ok(csv_document("d_mm,force_N", rows))
}

fn anisotropy(v: &Validated, args: &ForceRangeArgs) -> Result<String, CliError> {
    if args.f_min.is_nan() || args.f_min <= 0.0 {
        return Err(invalid("f_min must be positive"));
    }
    let fs = grid(args.f_min, args.f_max, args.step)?;
    let p = &v.config.friction;
    let mut rows = Vec::new();
    for dir in Direction::ALL {
        for state in [ContactState::Lc, ContactState::Sc] {
            for &f in &fs {
                let f_max = p.max_resistible_force(state, dir, f);
                let mu = ecmsf(f_max, f).map_err(|e| invalid(e.to_string()))?;
                rows.push(format!("{},{},{},{},{}", dir.label(), state.label(), sig6(f), sig6(f_max), sig6(mu)));
            }
        }
    }
    Ok(csv_document("direction,state,f_nslip_N,f_max_N,ecmsf", rows))
}

fn control_demo(v: &Validated, args: &DemoArgs) -> Result<(String, String), CliError> {
    let scenario = match &args.scenario {
        Some(p) => Scenario::from_json(&read_text(p)?)?,
        None => Scenario::tube(),
    };
    let mut world = v.config.world()?;
    let run = run_scenario(&mut world, &scenario)?;
    let mut summary = format!(
        "slide_demand_N={} widened_band_pct={} w_sc_img_px={}\n",
        sig6(world.slide_demand()),
        sig6(100.0 * world.widened_band()),
        sig6(world.camera().w_sc_img().unwrap_or(0.0)),
    );
    summary.push_str(&run.summary_text());
    Ok((run.csv(), summary))
}

fn solve(v: &Validated, args: &PointArgs) -> Result<String, CliError> {
    let st = v.linkage.solve_joint_angles(args.d)?;
    let r = ratio_of_state(&v.camera, &st)?;
    let w = image_width_wimg(&v.camera, &st, &v.config.geometry)?;
    Ok(format!(
        "d_mm={}\ntheta1_rad={}\ntheta2_rad={}\nw_img_px={}\nr_img_pct={}\ncontact_state={}\n",
        sig6(args.d),
        sig6(st.theta1),
        sig6(st.theta2),
        sig6(w),
        sig6(100.0 * r),
        v.config.friction.classify_contact_state(args.d).label()
    ))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, bytes),
        None => stdout.write_all(bytes).map_err(|e| CliError::Io(format!("cannot write output: {e}"))),
    }
}

/// Parses arguments and runs one command. Clap's own usage errors are
/// returned as `Invalid` with clap's message.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{e}");
            return Ok(());
        }
        Err(e) => return Err(invalid(e.to_string().lines().next().unwrap_or("usage error").to_string())),
    };
    let v = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::RatioCurve(a) => emit(out, ratio_curve(&v, a)?.as_bytes(), stdout),
        Command::PressCurve(a) => emit(out, press_curve(&v, a)?.as_bytes(), stdout),
        Command::Anisotropy(a) => emit(out, anisotropy(&v, a)?.as_bytes(), stdout),
        Command::ControlDemo(a) => {
            let (csv, summary) = control_demo(&v, a)?;
            if let Some(p) = &a.summary {
                write_file(p, summary.as_bytes())?;
            }
            match out {
                Some(p) => {
                    write_file(p, csv.as_bytes())?;
                    stdout.write_all(summary.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
                }
                None => emit(None, csv.as_bytes(), stdout),
            }
        }
        Command::Render(a) => {
            let path = out.ok_or_else(|| invalid("render needs --out"))?;
            let frame = render_synthetic_frame(&v.camera, &v.linkage, a.d)?;
            write_file(path, &frame.to_ppm())
        }
        Command::Solve(a) => emit(out, solve(&v, a)?.as_bytes(), stdout),
    }
}
