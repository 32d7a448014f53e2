use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use relkin::bounds::{default_endpoints, gamma_floor_check, verify_lower_bound, BoundConfig, Endpoint};
use relkin::control::{value_function, ControlFunction, ValueConfig, ValueResult};
use relkin::geometry::{galilean_compose, lorentz_compose, lorentz_inverse, lorentz_relative, Region};
use relkin::harnack::{build_chain, default_k0, estimate_harnack_constant, split_times, ChainSpec, HarnackConfig};
use relkin::hormander::{build_x_matrix, hormander_rank, invariance_residual, InvariantField, TestFunction};
use relkin::pde::{gaussian_bump, solve_cauchy, solve_dirichlet_lens, DeltaConfig, Grid, LensDomain, Variant};
use relkin::sde::{ensemble_density, light_cone_report, mean_and_se, simulate, DensityGrid, SdeConfig};
use relkin::{Error, PhasePoint};
use serde::Deserialize;
use serde_json::json;

use crate::args::*;
use crate::CliError;

/// Files written by a command, relative to the output directory.
pub type Outputs = Vec<String>;

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<String, CliError> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value).map_err(Error::from)?).map_err(Error::from)?;
    Ok(name.to_string())
}

fn num(v: &f64) -> String {
    (v + 0.0).to_string()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(Error::from)?))
}

pub fn geometry(a: &GeometryArgs, dir: &Path) -> Result<Outputs, CliError> {
    let (za, zb) = (a.a.phase(), a.b.phase());
    let result = match a.op {
        GeometryOp::Compose => lorentz_compose(za, zb),
        GeometryOp::Inverse => lorentz_inverse(za),
        GeometryOp::Relative => lorentz_relative(za, zb),
        GeometryOp::Galilean => galilean_compose(za, zb),
    };
    println!("result = {result}");
    let mut report = json!({ "op": a.op, "a": za, "b": zb, "result": result });
    if let Some(kind) = a.region {
        let region = match kind {
            RegionArg::Cylinder => Region::cylinder(za, a.radius)?,
            RegionArg::Slab => Region::slab(za, a.radius)?,
            RegionArg::Cone => Region::cone(za, a.radius, a.theta)?,
        };
        let inside = region.contains(zb);
        println!("b in region = {inside}");
        report["region"] = json!({ "region": region, "contains_b": inside, "explicit": region.contains_explicit(zb) });
    }
    Ok(vec![write_json(dir, "geometry.json", &report)?])
}

pub fn hormander(a: &HormanderArgs, dir: &Path) -> Result<Outputs, CliError> {
    let p = DVector::from_vec(a.p.clone());
    let rank = hormander_rank(&p)?;
    let x = build_x_matrix(&p);
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    println!(
        "d = {}, rank = {} (full = {}), det M = {:.12}",
        p.len(),
        rank.rank,
        2 * p.len() + 1,
        rank.det
    );

    let mut family = vec![TestFunction::gaussian(3)];
    family.extend((0..a.test_functions).map(|k| TestFunction::random(3, a.seed.wrapping_add(k))));
    let z = a.point.phase();
    let mut residuals = Vec::new();
    let mut worst = [0.0f64; 3];
    for &beta in &a.beta {
        for (slot, (field, name)) in [
            (InvariantField::X, "X"),
            (InvariantField::Y, "Y"),
            (InvariantField::YTilde, "Y_tilde"),
        ]
        .into_iter()
        .enumerate()
        {
            let r = family
                .iter()
                .map(|f| invariance_residual(field, beta, f, z))
                .try_fold(0.0f64, |m, r| r.map(|v| m.max(v)))?;
            worst[slot] = worst[slot].max(r);
            residuals.push(json!({ "beta": beta, "field": name, "residual": r }));
        }
    }
    println!(
        "max covariance residual: X {:.2e}, Y {:.2e}, non-invariant drift {:.2e}",
        worst[0], worst[1], worst[2]
    );
    let report = json!({
        "p": a.p,
        "rank": rank.rank,
        "full_rank": 2 * p.len() + 1,
        "det": rank.det,
        "energy": (1.0 + p.norm_squared()).sqrt(),
        "smallest_singular": rank.smallest_singular,
        "x_matrix": rows,
        "point": z,
        "covariance": residuals,
    });
    Ok(vec![write_json(dir, "hormander.json", &report)?])
}

pub fn simulate_cmd(a: &SimulateArgs, dir: &Path) -> Result<Outputs, CliError> {
    let mut cfg = SdeConfig::new(
        a.process.into(),
        a.start.phase(),
        a.horizon,
        a.step,
        a.replicas as usize,
        a.seed,
    );
    cfg.zero_noise = a.zero_noise;
    cfg.spread = a.spread;
    cfg.snapshots = a.snapshots.clone();
    cfg.validate()?;
    let ens = simulate(&cfg)?;
    let cone = light_cone_report(&ens);
    let mut out = Vec::new();
    if !a.no_paths {
        ens.write_csv(create(dir, "paths.csv")?)?;
        out.push("paths.csv".to_string());
    }
    let finite: Vec<PhasePoint> = ens.terminal().iter().copied().filter(PhasePoint::is_finite).collect();
    let stat = |f: fn(&PhasePoint) -> f64| -> Result<[f64; 2], CliError> {
        let (m, se) = mean_and_se(&finite.iter().map(f).collect::<Vec<_>>())?;
        Ok([m, se])
    };
    let summary = json!({
        "process": a.process,
        "effective_step": cfg.effective_step(),
        "steps": cfg.steps(),
        "light_cone": cone,
        "failures": ens.failures,
        "terminal_mean_se": { "P": stat(|z| z.p)?, "Y": stat(|z| z.y)?, "T": stat(|z| z.t)? },
    });
    println!(
        "{} replicas, {} light-cone violations, {} failures",
        cone.replicas, cone.violations, cone.failures
    );
    if a.density {
        let reach = a.horizon.max(1e-3);
        let grid = DensityGrid::new(-4.0, 4.0, 160, -1.2 * reach, 1.2 * reach, 120)?;
        let d = ensemble_density(&ens, ens.times.len() - 1, grid, None)?;
        d.write_csv(create(dir, "density.csv")?)?;
        out.push("density.csv".to_string());
    }
    out.push(write_json(dir, "summary.json", &summary)?);
    Ok(out)
}

pub fn solve_pde(a: &SolvePdeArgs, dir: &Path) -> Result<Outputs, CliError> {
    let centre = (a.centre[0], a.centre[1]);
    let width = (a.width[0], a.width[1]);
    if !(width.0 > 0.0 && width.1 > 0.0) {
        return Err(Error::InvalidConfig("initial widths must be positive".into()).into());
    }
    let field = match a.domain {
        DomainArg::Cauchy => {
            let grid = Grid::symmetric(a.x_max, a.dx, a.y_max, a.dy)?;
            let init = gaussian_bump(&grid, None, centre, width);
            let variant = match a.variant {
                VariantArg::Original => Variant::Original,
                VariantArg::Modified => Variant::Modified,
            };
            solve_cauchy(&init, grid, variant, &a.times)?
        }
        DomainArg::Lens => {
            let lens = LensDomain::with_spacing(a.dx, a.dy)?;
            let init = gaussian_bump(&lens.grid, Some(&lens.mask), centre, width);
            solve_dirichlet_lens(&lens, &init, None, None, &a.times, None)?
        }
    };
    field.save(dir, "field")?;
    println!(
        "{} x {} grid, dt = {:.3e} ({} steps), {} snapshots",
        field.grid.nx,
        field.grid.ny,
        field.dt,
        field.steps,
        field.times.len()
    );
    Ok(vec!["field.csv".into(), "field.json".into()])
}

pub fn green(a: &GreenArgs, dir: &Path) -> Result<Outputs, CliError> {
    let cfg = DeltaConfig {
        dx: a.dx,
        dy: a.dy,
        widths: a.widths,
        cauchy_x_max: a.cauchy_x_max,
        cauchy_y_max: a.cauchy_y_max,
    };
    let rep = gamma_floor_check(&a.times, &cfg)?;
    let mut w = csv::Writer::from_writer(create(dir, "green.csv")?);
    w.write_record(["t", "green", "gamma", "t2_green", "t2_gamma", "slack"])
        .map_err(Error::from)?;
    for r in &rep.rows {
        w.write_record(
            [r.t, r.green, r.gamma, r.t2_green, r.t2_gamma, r.slack].map(|v| v.to_string()),
        )
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    println!(
        "log-log slope {:.4}, min t^2 G {:.4}, min t^2 Gamma {:.4}, min slack {:.3e}",
        rep.green_slope, rep.green_floor, rep.gamma_floor, rep.min_slack
    );
    for t in &rep.skipped {
        eprintln!("skipped t = {t}: below the resolvable scale of the grid");
    }
    Ok(vec!["green.csv".into(), write_json(dir, "green.json", &rep)?])
}

#[derive(Debug, Deserialize)]
struct Query {
    #[serde(default)]
    p0: f64,
    #[serde(default)]
    y0: f64,
    #[serde(default)]
    t0: f64,
    p1: f64,
    y1: f64,
    t1: f64,
}

fn read_queries(path: &PathBuf) -> Result<Vec<(PhasePoint, PhasePoint)>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(Error::from)?;
    let mut out = Vec::new();
    for row in r.deserialize::<Query>() {
        let q = row.map_err(Error::from)?;
        out.push((PhasePoint::new(q.p0, q.y0, q.t0), PhasePoint::new(q.p1, q.y1, q.t1)));
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{} holds no queries", path.display())));
    }
    Ok(out)
}

pub fn value(a: &ValueArgs, dir: &Path) -> Result<Outputs, CliError> {
    let cfg = ValueConfig {
        newton_tol: a.newton_tol,
        max_newton: a.max_newton,
        transcription_intervals: a.intervals,
        gap_flag: a.gap_flag,
    };
    let queries = match (&a.batch, a.target) {
        (Some(path), _) => read_queries(path)?,
        (None, Some(t)) => vec![(a.from.phase(), t.phase())],
        (None, None) => return Err(CliError::Usage("either --target or --batch is required".into())),
    };
    let results: Vec<relkin::Result<ValueResult>> =
        queries.par_iter().map(|&(z0, z1)| value_function(z0, z1, &cfg)).collect();

    let mut w = csv::Writer::from_writer(create(dir, "value.csv")?);
    w.write_record([
        "p0", "y0", "t0", "p1", "y1", "t1", "status", "psi", "k", "c2", "c3", "horizon", "residual",
        "transcription_cost", "relative_gap", "gap_flagged",
    ])
    .map_err(Error::from)?;
    let mut first_error = None;
    for ((z0, z1), res) in queries.iter().zip(&results) {
        let mut rec: Vec<String> = [z0.p, z0.y, z0.t, z1.p, z1.y, z1.t].iter().map(num).collect();
        match res {
            Ok(v) => {
                rec.push("ok".into());
                rec.extend(
                    [v.psi, v.k, v.c2, v.c3, v.horizon, v.residual, v.transcription_cost, v.relative_gap]
                        .iter()
                        .map(num),
                );
                rec.push(v.gap_flagged.to_string());
                for d in &v.diagnostics {
                    eprintln!("{z0} -> {z1}: {d}");
                }
            }
            Err(e) => {
                let (status, tc) = match e {
                    Error::Unreachable => ("unreachable", f64::NAN),
                    Error::ShootingFailed { transcription_cost, .. } => ("shooting-failed", *transcription_cost),
                    _ => ("failed", f64::NAN),
                };
                rec.push(status.into());
                rec.extend([f64::INFINITY, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, tc, f64::NAN]
                    .iter()
                    .map(num));
                rec.push("false".into());
                eprintln!("{z0} -> {z1}: {e}");
            }
        }
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let mut out = vec!["value.csv".to_string()];

    if a.batch.is_none() {
        match results.into_iter().next() {
            Some(Ok(v)) => {
                println!("psi = {:.9e}", v.psi);
                println!(
                    "shooting k = {:.9}, c2 = {:.9}, c3 = {:.9}, horizon = {:.9}, residual {:.2e}",
                    v.k, v.c2, v.c3, v.horizon, v.residual
                );
                println!("transcription cost {:.9e}, relative gap {:.2e}", v.transcription_cost, v.relative_gap);
                out.push(write_json(dir, "value.json", &v)?);
            }
            Some(Err(e)) => first_error = Some(e),
            None => {}
        }
    } else {
        let failed = results.iter().filter(|r| r.is_err()).count();
        println!("{} queries, {} failed", queries.len(), failed);
        first_error = results.into_iter().filter_map(|r| r.err()).max_by_key(crate::core_exit_code);
    }
    match first_error {
        Some(e) => Err(CliError::Partial { source: e, outputs: out }),
        None => Ok(out),
    }
}

pub fn chain(a: &ChainArgs, dir: &Path) -> Result<Outputs, CliError> {
    let omega = match (a.omega_const, a.horizon) {
        (Some(c), Some(h)) => ControlFunction::constant(c, h)?,
        _ => {
            if a.omega_breakpoints.len() != a.omega_values.len() + 1 {
                return Err(CliError::Usage(
                    "--omega-breakpoints needs exactly one more entry than --omega-values".into(),
                ));
            }
            ControlFunction::new(a.omega_breakpoints.clone(), a.omega_values.clone())?
        }
    };
    let s = a.s.unwrap_or(omega.horizon());
    let spec = ChainSpec {
        k0: a.k0.unwrap_or_else(default_k0),
        theta: a.theta,
        c_h: a.c_h,
        enforce_time_hypothesis: a.enforce_time_hypothesis,
    };
    if !(s > 0.0 && s <= omega.horizon()) {
        return Err(Error::InvalidConfig(format!("s = {s} must lie in (0, {}]", omega.horizon())).into());
    }
    let (k, sigma) = split_times(&omega, s, spec.k0);
    let ch = build_chain(&omega, a.start.phase(), s, spec)?;
    println!("k = {k}");
    println!(
        "sigma = [{}]",
        sigma.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join(", ")
    );
    println!("phi = {:.9}, exponent = {:.9}", ch.phi, ch.exponent);
    for d in &ch.diagnostics {
        eprintln!("{d}");
    }
    let report = json!({ "k": k, "sigma": sigma, "phi": ch.phi, "exponent": ch.exponent, "chain": ch });
    Ok(vec![write_json(dir, "chain.json", &report)?])
}

pub fn estimate_ch(a: &EstimateChArgs, dir: &Path) -> Result<Outputs, CliError> {
    let mut cfg = HarnackConfig::new(a.r, a.theta, a.ensemble, a.seed);
    cfg.modes = a.modes;
    let est = estimate_harnack_constant(&cfg)?;
    let mut w = csv::Writer::from_writer(create(dir, "ratios.csv")?);
    w.write_record(["member", "ratio"]).map_err(Error::from)?;
    for (i, r) in est.ratios.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    println!(
        "C_H = {:.6} from {} members ({} discarded)",
        est.c_h,
        est.ratios.len(),
        est.discarded
    );
    Ok(vec!["ratios.csv".into(), write_json(dir, "ch.json", &est)?])
}

pub fn verify_bound(a: &VerifyBoundArgs, dir: &Path) -> Result<Outputs, CliError> {
    let endpoints = match &a.endpoints {
        Some(path) => read_queries(path)?
            .into_iter()
            .map(|(z0, z1)| Endpoint { z0, z1 })
            .collect(),
        None => default_endpoints(),
    };
    let cfg = BoundConfig {
        theta: a.theta,
        replicas: a.replicas,
        mc_step: a.mc_step,
        seed: a.seed,
        bandwidth_factor: a.bandwidth_factor,
        delta: DeltaConfig {
            dx: a.dx,
            dy: a.dy,
            ..DeltaConfig::default()
        },
        value: ValueConfig::default(),
    };
    let rep = verify_lower_bound(&endpoints, &cfg)?;
    rep.write_csv(create(dir, "bound.csv")?)?;
    println!(
        "{} endpoints: slope {:.4}, C = {:.4}, log c = {:.4}, feasible = {}",
        rep.rows.len(),
        rep.slope,
        rep.c_fit,
        rep.log_c,
        rep.feasible
    );
    for d in &rep.diagnostics {
        eprintln!("{d}");
    }
    Ok(vec!["bound.csv".into(), write_json(dir, "bound.json", &rep)?])
}
