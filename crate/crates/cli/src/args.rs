use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use relkin::sde::ProcessKind;
use relkin::PhasePoint;
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "relkin", version, about = "Numerical experiments for the relativistic kinetic Fokker-Planck operator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lorentz group law, inverse and region membership.
    Geometry(GeometryArgs),
    /// Bracket-matrix rank and Lorentz covariance of the driving fields.
    Hormander(HormanderArgs),
    /// Euler-Maruyama ensembles of the kinetic processes.
    Simulate(SimulateArgs),
    /// Velocity-form PDE on the free-space box or the lens.
    SolvePde(SolvePdeArgs),
    /// Green function and fundamental solution at the origin.
    Green(GreenArgs),
    /// Minimal control energy between two phase points.
    ValueFunction(ValueArgs),
    /// Harnack chain along the path of a piecewise-constant control.
    Chain(ChainArgs),
    /// Empirical Harnack constant on a cone.
    EstimateCh(EstimateChArgs),
    /// Feasibility of the two-sided Gaussian lower bound on an endpoint grid.
    VerifyBound(VerifyBoundArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Geometry(_) => "geometry",
            Command::Hormander(_) => "hormander",
            Command::Simulate(_) => "simulate",
            Command::SolvePde(_) => "solve-pde",
            Command::Green(_) => "green",
            Command::ValueFunction(_) => "value-function",
            Command::Chain(_) => "chain",
            Command::EstimateCh(_) => "estimate-ch",
            Command::VerifyBound(_) => "verify-bound",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Geometry(a) => &a.common,
            Command::Hormander(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::SolvePde(a) => &a.common,
            Command::Green(a) => &a.common,
            Command::ValueFunction(a) => &a.common,
            Command::Chain(a) => &a.common,
            Command::EstimateCh(a) => &a.common,
            Command::VerifyBound(a) => &a.common,
        }
    }

    /// Effective parameters as flat, flag-named JSON.
    pub fn parameters(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Command::Geometry(a) => serde_json::to_value(a),
            Command::Hormander(a) => serde_json::to_value(a),
            Command::Simulate(a) => serde_json::to_value(a),
            Command::SolvePde(a) => serde_json::to_value(a),
            Command::Green(a) => serde_json::to_value(a),
            Command::ValueFunction(a) => serde_json::to_value(a),
            Command::Chain(a) => serde_json::to_value(a),
            Command::EstimateCh(a) => serde_json::to_value(a),
            Command::VerifyBound(a) => serde_json::to_value(a),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Hormander(a) => Some(a.seed),
            Command::Simulate(a) => Some(a.seed),
            Command::EstimateCh(a) => Some(a.seed),
            Command::VerifyBound(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// JSON file of flat `flag: value` pairs (or a previous manifest); flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "relkin-out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<u16>,
}

/// A phase point written `p,y,t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Point(pub [f64; 3]);

impl Point {
    pub fn phase(self) -> PhasePoint {
        PhasePoint::from(self.0)
    }
}

pub fn parse_point(s: &str) -> Result<Point, String> {
    let v = parse_list(s)?;
    match v.as_slice() {
        &[p, y, t] => Ok(Point([p, y, t])),
        _ => Err(format!("expected three comma-separated numbers `p,y,t`, got `{s}`")),
    }
}

pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v = parse_list(s)?;
    match v.as_slice() {
        &[a, b] => Ok([a, b]),
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| {
            let v: f64 = x.trim().parse().map_err(|_| format!("`{x}` is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{x}` is not finite"))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryOp {
    /// `a ∘ b`.
    Compose,
    /// `a⁻¹`.
    Inverse,
    /// `a⁻¹ ∘ b`.
    Relative,
    /// Galilean law `a ∘ b`.
    Galilean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionArg {
    Cylinder,
    Slab,
    Cone,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GeometryArgs {
    #[arg(long, value_enum, default_value_t = GeometryOp::Compose)]
    pub op: GeometryOp,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    pub a: Point,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    pub b: Point,
    /// Also test whether `b` lies in this region centred at `a`.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionArg>,
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct HormanderArgs {
    /// Momentum `p ∈ R^d`, `d ∈ {1, 2, 3}`.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub p: Vec<f64>,
    /// Boost velocities for the covariance residuals.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.9,-0.5,-0.1,0.1,0.5,0.9")]
    pub beta: Vec<f64>,
    /// Evaluation point of the residuals.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0.3,-0.2,0.4")]
    pub point: Point,
    /// Random test functions added to the Gaussian one.
    #[arg(long, default_value_t = 5)]
    pub test_functions: u64,
    #[arg(long, env = "RELKIN_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessArg {
    /// Classical Langevin dynamics.
    Langevin,
    /// Relativistic process in coordinate time.
    Sde,
    /// Relativistic process in proper time.
    Rsde,
    /// Process generated by the kinetic operator.
    Kinetic,
}

impl From<ProcessArg> for ProcessKind {
    fn from(p: ProcessArg) -> Self {
        match p {
            ProcessArg::Langevin => ProcessKind::Langevin,
            ProcessArg::Sde => ProcessKind::Relativistic,
            ProcessArg::Rsde => ProcessKind::ProperTime,
            ProcessArg::Kinetic => ProcessKind::Kinetic,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ProcessArg::Sde)]
    pub process: ProcessArg,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    pub start: Point,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicas: u64,
    #[arg(long, env = "RELKIN_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Standard deviations `σp,σy` of a Gaussian initial law.
    #[arg(long, value_parser = parse_pair)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<[f64; 2]>,
    /// Extra recording times inside `(0, horizon)`.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
    /// Set every Brownian increment to zero.
    #[arg(long)]
    pub zero_noise: bool,
    /// Skip `paths.csv`.
    #[arg(long)]
    pub no_paths: bool,
    /// Write a KDE of the terminal `(P, Y)` law to `density.csv`.
    #[arg(long)]
    pub density: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainArg {
    /// Free-space box with the chosen coefficients.
    Cauchy,
    /// Dirichlet problem on the lens, modified coefficients.
    Lens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Original,
    Modified,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolvePdeArgs {
    #[arg(long, value_enum, default_value_t = DomainArg::Cauchy)]
    pub domain: DomainArg,
    /// Coefficients on the free-space box.
    #[arg(long, value_enum, default_value_t = VariantArg::Original)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.98)]
    pub x_max: f64,
    #[arg(long, default_value_t = 1.2)]
    pub y_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.02)]
    pub dy: f64,
    /// Output times.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "0.1")]
    pub times: Vec<f64>,
    /// Centre `x,y` of the Gaussian initial datum (velocity variable).
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "0,0")]
    pub centre: [f64; 2],
    #[arg(long, value_parser = parse_pair, default_value = "0.1,0.1")]
    pub width: [f64; 2],
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GreenArgs {
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3,0.4,0.5")]
    pub times: Vec<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.004)]
    pub dy: f64,
    /// Source widths in grid cells for the two-width extrapolation.
    #[arg(long, value_parser = parse_pair, default_value = "2,4")]
    pub widths: [f64; 2],
    #[arg(long, default_value_t = 0.98)]
    pub cauchy_x_max: f64,
    #[arg(long, default_value_t = 1.2)]
    pub cauchy_y_max: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ValueArgs {
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    pub from: Point,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, required_unless_present = "batch")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Point>,
    /// CSV with columns `p1,y1,t1` and optionally `p0,y0,t0`, one query per row.
    #[arg(long, conflicts_with = "target")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-11)]
    pub newton_tol: f64,
    #[arg(long, default_value_t = 60)]
    pub max_newton: usize,
    /// Intervals of the direct transcription cross-check.
    #[arg(long, default_value_t = 200)]
    pub intervals: usize,
    /// Relative shooting/transcription gap that is flagged.
    #[arg(long, default_value_t = 0.05)]
    pub gap_flag: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
#[command(group = clap::ArgGroup::new("omega").required(true).args(["omega_const", "omega_values"]))]
pub struct ChainArgs {
    /// Constant control on `[0, horizon]`.
    #[arg(long, allow_hyphen_values = true, requires = "horizon")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_const: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Piecewise-constant control values, one per interval.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', allow_hyphen_values = true, requires = "omega_breakpoints")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub omega_values: Vec<f64>,
    /// Breakpoints `0 = s0 < s1 < ...`, one more than the values.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub omega_breakpoints: Vec<f64>,
    /// Chain end (default: the control horizon).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    pub start: Point,
    /// Link cost budget (default: `2 ln(3/2)`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Harnack constant used for the chain bounds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_h: Option<f64>,
    /// Reject chains whose time span exceeds `θ⁴/4`.
    #[arg(long)]
    pub enforce_time_hypothesis: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateChArgs {
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 64)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 8)]
    pub modes: usize,
    #[arg(long, env = "RELKIN_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct VerifyBoundArgs {
    /// CSV with columns `p0,y0,t0,p1,y1,t1` (default: the built-in 20-point grid).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub theta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 0.0025)]
    pub mc_step: f64,
    #[arg(long, env = "RELKIN_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// KDE bandwidth as a multiple of Scott's rule.
    #[arg(long, default_value_t = 0.5)]
    pub bandwidth_factor: f64,
    #[arg(long, default_value_t = 0.02)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.004)]
    pub dy: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_need_three_finite_numbers() {
        assert_eq!(parse_point("0, -1.5,2").unwrap(), Point([0.0, -1.5, 2.0]));
        assert!(parse_point("1,2").is_err());
        assert!(parse_point("1,x,2").is_err());
        assert!(parse_point("1,inf,2").is_err());
        assert_eq!(parse_pair("0.1,0.2").unwrap(), [0.1, 0.2]);
    }

    #[test]
    fn every_command_has_a_unique_name() {
        use clap::CommandFactory;
        let cmd = Cli::command();
        let names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
        assert_eq!(
            names,
            [
                "geometry",
                "hormander",
                "simulate",
                "solve-pde",
                "green",
                "value-function",
                "chain",
                "estimate-ch",
                "verify-bound"
            ]
        );
        cmd.debug_assert();
    }
}
