//! Explicit finite-difference solvers for the velocity-form equation
//!
//! `u_t = a(x) u_xx + b(x) u_x - x u_y (+ F)`,  `x ∈ (-1, 1)`,
//!
//! which is the lab-time kinetic equation rewritten through `x = p/√(1+p²)`.
//! A momentum-space density is recovered as `f(p, y, t) = u(x(p), y, t)`.
//!
//! Second differences are centred. The drift `b u_x` is centred where the
//! cell Péclet number allows it (`|b| Δx ≤ 2a`) and upwinded otherwise, and
//! the transport `x u_y` is upwinded, so every update is a convex combination
//! under the step bound [`cfl_limit`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{energy, to_velocity};

/// Coefficient family of the velocity-form equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `a = (1-x²)^{5/2}`, `b = -2x (1-x²)^{3/2}`.
    Original,
    /// As `Original` on `|x| ≤ 1/2`, frozen at the `|x| = 1/2` values outside.
    Modified,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Variant::Original),
            "modified" => Ok(Variant::Modified),
            o => Err(Error::InvalidConfig(format!("unknown coefficient variant `{o}`"))),
        }
    }
}

/// `(a(x), b(x))` for the chosen variant.
pub fn coefficients(x: f64, variant: Variant) -> Result<(f64, f64)> {
    match variant {
        Variant::Original => {
            if !(x.abs() < 1.0) {
                return Err(Error::Domain {
                    what: "velocity coordinate",
                    value: x,
                });
            }
            let s = (1.0 - x) * (1.0 + x);
            let s32 = s * s.sqrt();
            Ok((s * s32, -2.0 * x * s32))
        }
        Variant::Modified => {
            if x.is_nan() {
                return Err(Error::Domain {
                    what: "velocity coordinate",
                    value: x,
                });
            }
            if x.abs() >= 0.5 {
                let s = 0.75f64;
                let s32 = s * s.sqrt();
                Ok((s * s32, -x.signum() * s32))
            } else {
                coefficients(x, Variant::Original)
            }
        }
    }
}

/// Uniform node grid `x_i = x0 + i Δx`, `y_j = y0 + j Δy`, stored with `y` contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub y0: f64,
    pub dy: f64,
    pub ny: usize,
}

impl Grid {
    /// Nodes spanning `[x_min, x_max] × [y_min, y_max]` inclusive.
    pub fn new(x_min: f64, x_max: f64, nx: usize, y_min: f64, y_max: f64, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 || !(x_max > x_min) || !(y_max > y_min) {
            return Err(Error::InvalidConfig("grid needs at least 3 nodes per axis".into()));
        }
        Ok(Self {
            x0: x_min,
            dx: (x_max - x_min) / (nx - 1) as f64,
            nx,
            y0: y_min,
            dy: (y_max - y_min) / (ny - 1) as f64,
            ny,
        })
    }

    /// Grid with nodes at every multiple of `dx` in `[-x_max, x_max]` (same for `y`).
    pub fn symmetric(x_max: f64, dx: f64, y_max: f64, dy: f64) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && x_max >= dx && y_max >= dy) {
            return Err(Error::InvalidConfig(format!(
                "symmetric grid needs 0 < dx <= x_max and 0 < dy <= y_max (dx={dx}, x_max={x_max}, dy={dy}, y_max={y_max})"
            )));
        }
        let nxh = (x_max / dx + 1e-9).floor() as usize;
        let nyh = (y_max / dy + 1e-9).floor() as usize;
        Ok(Self {
            x0: -(nxh as f64) * dx,
            dx,
            nx: 2 * nxh + 1,
            y0: -(nyh as f64) * dy,
            dy,
            ny: 2 * nyh + 1,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for i in 0..self.nx {
            let x = self.x(i);
            for j in 0..self.ny {
                v.push(f(x, self.y(j)));
            }
        }
        v
    }

    /// Bilinear interpolation of nodal `values`; `None` outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64, y: f64) -> Option<f64> {
        let u = (x - self.x0) / self.dx;
        let v = (y - self.y0) / self.dy;
        let tol = 1e-9;
        if !(u >= -tol && u <= (self.nx - 1) as f64 + tol && v >= -tol && v <= (self.ny - 1) as f64 + tol) {
            return None;
        }
        let u = u.clamp(0.0, (self.nx - 1) as f64);
        let v = v.clamp(0.0, (self.ny - 1) as f64);
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let at = |a: usize, b: usize| values[self.idx(a, b)];
        Some(
            (1.0 - fu) * (1.0 - fv) * at(i, j)
                + fu * (1.0 - fv) * at(i + 1, j)
                + (1.0 - fu) * fv * at(i, j + 1)
                + fu * fv * at(i + 1, j + 1),
        )
    }
}

/// The lens `B((1,0), 3/2) ∩ B((-1,0), 3/2)` rasterised on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LensDomain {
    pub grid: Grid,
    pub mask: Vec<bool>,
}

impl LensDomain {
    pub const RADIUS: f64 = 1.5;

    pub fn contains(x: f64, y: f64) -> bool {
        let r2 = Self::RADIUS * Self::RADIUS;
        (x - 1.0).powi(2) + y * y < r2 && (x + 1.0).powi(2) + y * y < r2
    }

    /// Half-widths of the lens bounding box.
    pub fn extent() -> (f64, f64) {
        let r = Self::RADIUS;
        (r - 1.0, (r * r - 1.0).sqrt())
    }

    pub fn new(grid: Grid) -> Self {
        let mask = grid.sample(|x, y| if Self::contains(x, y) { 1.0 } else { 0.0 });
        Self {
            grid,
            mask: mask.into_iter().map(|v| v > 0.0).collect(),
        }
    }

    /// Symmetric grid tightly covering the lens.
    pub fn with_spacing(dx: f64, dy: f64) -> Result<Self> {
        let (xe, ye) = Self::extent();
        Ok(Self::new(Grid::symmetric(xe, dx, ye, dy)?))
    }

    pub fn active_nodes(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Space–time function `g(x, y, t)`.
pub type SpaceTimeFn<'a> = &'a (dyn Fn(f64, f64, f64) -> f64 + Sync);

/// A well-posed initial–boundary value problem for the velocity-form equation.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub grid: Grid,
    pub variant: Variant,
    /// Active nodes; nodes outside take boundary values. `None` activates all.
    pub mask: Option<&'a [bool]>,
    /// Dirichlet data on ghost and inactive nodes; `None` means zero.
    pub boundary: Option<SpaceTimeFn<'a>>,
    /// Source term `F`; `None` means zero.
    pub forcing: Option<SpaceTimeFn<'a>>,
    pub t0: f64,
}

impl<'a> Problem<'a> {
    pub fn cauchy(grid: Grid, variant: Variant) -> Self {
        Self {
            grid,
            variant,
            mask: None,
            boundary: None,
            forcing: None,
            t0: 0.0,
        }
    }

    pub fn lens(lens: &'a LensDomain) -> Self {
        Self {
            grid: lens.grid,
            variant: Variant::Modified,
            mask: Some(&lens.mask),
            boundary: None,
            forcing: None,
            t0: 0.0,
        }
    }

    fn active(&self, i: usize, j: usize) -> bool {
        self.mask.is_none_or(|m| m[self.grid.idx(i, j)])
    }

    fn check(&self) -> Result<()> {
        if let Some(m) = self.mask {
            if m.len() != self.grid.len() {
                return Err(Error::MaskMismatch);
            }
        }
        if self.variant == Variant::Original && !(self.grid.x0 > -1.0 && self.grid.x_max() < 1.0) {
            return Err(Error::Domain {
                what: "grid edge for the original coefficients",
                value: self.grid.x0.abs().max(self.grid.x_max().abs()),
            });
        }
        Ok(())
    }
}

/// Largest stable step `0.9 / (2 a_max/Δx² + |b|_max/Δx + |x|_max/Δy)`.
pub fn cfl_limit(problem: &Problem) -> Result<f64> {
    problem.check()?;
    let g = &problem.grid;
    let (mut a_max, mut b_max, mut x_max) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..g.nx {
        if (0..g.ny).all(|j| !problem.active(i, j)) {
            continue;
        }
        let x = g.x(i);
        let (a, b) = coefficients(x, problem.variant)?;
        a_max = a_max.max(a);
        b_max = b_max.max(b.abs());
        x_max = x_max.max(x.abs());
    }
    let rate = 2.0 * a_max / (g.dx * g.dx) + b_max / g.dx + x_max / g.dy;
    if !(rate > 0.0) {
        return Err(Error::InvalidConfig("grid has no active nodes".into()));
    }
    Ok(0.9 / rate)
}

#[derive(Debug, Clone, Copy)]
struct RowStencil {
    west: f64,
    centre: f64,
    east: f64,
    south: f64,
    north: f64,
}

fn row_stencil(x: f64, dx: f64, dy: f64, variant: Variant) -> Result<RowStencil> {
    let (a, b) = coefficients(x, variant)?;
    let d = a / (dx * dx);
    let (mut west, mut east, mut centre) = (d, d, -2.0 * d);
    if b.abs() * dx <= 2.0 * a {
        west -= b / (2.0 * dx);
        east += b / (2.0 * dx);
    } else if b > 0.0 {
        east += b / dx;
        centre -= b / dx;
    } else {
        west -= b / dx;
        centre += b / dx;
    }
    let (mut south, mut north) = (0.0, 0.0);
    if x > 0.0 {
        south = x / dy;
        centre -= x / dy;
    } else {
        north = -x / dy;
        centre += x / dy;
    }
    Ok(RowStencil {
        west,
        centre,
        east,
        south,
        north,
    })
}

/// Time-marching state for a [`Problem`].
pub struct Marcher<'a> {
    problem: Problem<'a>,
    stencils: Vec<RowStencil>,
    /// Padded `(nx+2) × (ny+2)` arrays with a ghost ring.
    cur: Vec<f64>,
    next: Vec<f64>,
    active: Vec<bool>,
    pub t: f64,
    pub dt: f64,
    pub steps: usize,
}

impl<'a> Marcher<'a> {
    /// Prepares a march from `initial` (nodal values) with step `dt` (default: the CFL limit).
    pub fn new(problem: Problem<'a>, initial: &[f64], dt: Option<f64>) -> Result<Self> {
        problem.check()?;
        let g = problem.grid;
        if initial.len() != g.len() {
            return Err(Error::InvalidConfig(format!(
                "initial data has {} values for {} nodes",
                initial.len(),
                g.len()
            )));
        }
        if initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("initial data must be finite".into()));
        }
        let limit = cfl_limit(&problem)?;
        let dt = match dt {
            Some(dt) if dt > limit * (1.0 + 1e-12) => return Err(Error::Cfl { dt, limit }),
            Some(dt) if !(dt > 0.0) => {
                return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")))
            }
            Some(dt) => dt,
            None => limit,
        };
        let stencils = (0..g.nx)
            .map(|i| row_stencil(g.x(i), g.dx, g.dy, problem.variant))
            .collect::<Result<Vec<_>>>()?;
        let w = g.ny + 2;
        let mut active = vec![false; (g.nx + 2) * w];
        let mut cur = vec![0.0; (g.nx + 2) * w];
        for i in 0..g.nx {
            for j in 0..g.ny {
                if problem.active(i, j) {
                    active[(i + 1) * w + j + 1] = true;
                    cur[(i + 1) * w + j + 1] = initial[g.idx(i, j)];
                }
            }
        }
        let mut m = Self {
            problem,
            stencils,
            next: cur.clone(),
            cur,
            active,
            t: problem.t0,
            dt,
            steps: 0,
        };
        m.fill_boundary(problem.t0, true);
        Ok(m)
    }

    fn fill_boundary(&mut self, t: f64, into_next: bool) {
        let Some(gf) = self.problem.boundary else {
            return;
        };
        let g = self.problem.grid;
        let w = g.ny + 2;
        for ip in 0..g.nx + 2 {
            let x = g.x0 + (ip as f64 - 1.0) * g.dx;
            for jp in 0..w {
                let k = ip * w + jp;
                if !self.active[k] {
                    let v = gf(x, g.y0 + (jp as f64 - 1.0) * g.dy, t);
                    self.cur[k] = v;
                    if into_next {
                        self.next[k] = v;
                    }
                }
            }
        }
    }

    /// Advances by `h ≤ dt`.
    pub fn step_by(&mut self, h: f64) -> Result<()> {
        let g = self.problem.grid;
        let w = g.ny + 2;
        let t = self.t;
        for i in 0..g.nx {
            let s = self.stencils[i];
            let x = g.x(i);
            let base = (i + 1) * w;
            for j in 0..g.ny {
                let c = base + j + 1;
                if !self.active[c] {
                    continue;
                }
                let u = &self.cur;
                let mut rhs = s.centre * u[c]
                    + s.west * u[c - w]
                    + s.east * u[c + w]
                    + s.south * u[c - 1]
                    + s.north * u[c + 1];
                if let Some(f) = self.problem.forcing {
                    rhs += f(x, g.y(j), t);
                }
                self.next[c] = u[c] + h * rhs;
            }
        }
        std::mem::swap(&mut self.cur, &mut self.next);
        self.t += h;
        self.steps += 1;
        self.fill_boundary(self.t, false);
        if self.steps % 64 == 0 && self.cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { at: self.t });
        }
        Ok(())
    }

    /// Marches to absolute time `target`, shortening the last step to land on it.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        while target - self.t > 1e-12 * self.dt.max(target.abs()) {
            let h = self.dt.min(target - self.t);
            self.step_by(h)?;
        }
        self.t = self.t.max(target);
        Ok(())
    }

    /// Same as [`Marcher::advance_to`], calling `observe` after each step.
    pub fn advance_observed<F: FnMut(f64, &Marcher)>(&mut self, target: f64, mut observe: F) -> Result<()> {
        while target - self.t > 1e-12 * self.dt.max(target.abs()) {
            let h = self.dt.min(target - self.t);
            self.step_by(h)?;
            observe(self.t, self);
        }
        Ok(())
    }

    /// Nodal value at `(i, j)`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.cur[(i + 1) * (self.problem.grid.ny + 2) + j + 1]
    }

    /// Current nodal values (inactive nodes carry their boundary values).
    pub fn values(&self) -> Vec<f64> {
        let g = self.problem.grid;
        let w = g.ny + 2;
        let mut v = Vec::with_capacity(g.len());
        for i in 0..g.nx {
            v.extend_from_slice(&self.cur[(i + 1) * w + 1..(i + 1) * w + 1 + g.ny]);
        }
        v
    }
}

/// Solution snapshots on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub variant: Variant,
    pub dt: f64,
    pub cfl_limit: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl GridField {
    pub fn last(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn snapshot_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// `x,y,u` rows of snapshot `k`.
    pub fn write_csv<W: Write>(&self, k: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "u"])?;
        let t = format!("{}", self.times[k]);
        for i in 0..self.grid.nx {
            for j in 0..self.grid.ny {
                w.write_record(&[
                    t.clone(),
                    format!("{}", self.grid.x(i)),
                    format!("{}", self.grid.y(j)),
                    format!("{}", self.values[k][self.grid.idx(i, j)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every snapshot to `stem.csv` and the geometry to `stem.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        let mut out = std::io::BufWriter::new(f);
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["t", "x", "y", "u"])?;
        for (k, t) in self.times.iter().enumerate() {
            for i in 0..self.grid.nx {
                for j in 0..self.grid.ny {
                    w.write_record(&[
                        format!("{t}"),
                        format!("{}", self.grid.x(i)),
                        format!("{}", self.grid.y(j)),
                        format!("{}", self.values[k][self.grid.idx(i, j)]),
                    ])?;
                }
            }
        }
        w.flush()?;
        drop(w);
        let meta = serde_json::json!({
            "grid": self.grid,
            "variant": self.variant,
            "dt": self.dt,
            "cfl_limit": self.cfl_limit,
            "cfl_number": self.dt / self.cfl_limit,
            "steps": self.steps,
            "times": self.times,
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

fn validate_times(t0: f64, times: &[f64]) -> Result<Vec<f64>> {
    let mut ts = times.to_vec();
    if ts.is_empty() {
        return Err(Error::InvalidConfig("at least one output time is required".into()));
    }
    ts.sort_by(f64::total_cmp);
    if !(ts[0] > t0) || ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("output times must be finite and after the start".into()));
    }
    Ok(ts)
}

/// Marches `problem` from `initial` and records the solution at each of `times`.
pub fn solve(problem: Problem, initial: &[f64], times: &[f64], dt: Option<f64>) -> Result<GridField> {
    let ts = validate_times(problem.t0, times)?;
    let limit = cfl_limit(&problem)?;
    let mut m = Marcher::new(problem, initial, dt)?;
    let mut values = Vec::with_capacity(ts.len());
    for &t in &ts {
        m.advance_to(t)?;
        values.push(m.values());
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { at: m.t });
    }
    Ok(GridField {
        grid: problem.grid,
        variant: problem.variant,
        dt: m.dt,
        cfl_limit: limit,
        steps: m.steps,
        times: ts,
        values,
    })
}

/// Cauchy problem on a box with zero inflow at the grid edges.
pub fn solve_cauchy(initial: &[f64], grid: Grid, variant: Variant, times: &[f64]) -> Result<GridField> {
    solve(Problem::cauchy(grid, variant), initial, times, None)
}

/// Dirichlet problem on the lens with modified coefficients.
pub fn solve_dirichlet_lens(
    lens: &LensDomain,
    initial: &[f64],
    boundary: Option<SpaceTimeFn>,
    source: Option<SpaceTimeFn>,
    times: &[f64],
    dt: Option<f64>,
) -> Result<GridField> {
    let mut p = Problem::lens(lens);
    p.boundary = boundary;
    p.forcing = source;
    solve(p, initial, times, dt)
}

/// Samples `f(p, y) = u(x(p), y)` from one snapshot of a velocity-form field.
pub struct MomentumSampler<'a> {
    pub field: &'a GridField,
    pub snapshot: usize,
}

impl<'a> MomentumSampler<'a> {
    pub fn new(field: &'a GridField, snapshot: usize) -> Self {
        Self { field, snapshot }
    }

    pub fn eval(&self, p: f64, y: f64) -> Result<f64> {
        let x = to_velocity(p);
        self.field
            .grid
            .interpolate(&self.field.values[self.snapshot], x, y)
            .ok_or(Error::Extrapolation { p })
    }
}

/// Momentum-space sampler for snapshot `k`.
pub fn to_momentum_field(field: &GridField, k: usize) -> MomentumSampler<'_> {
    MomentumSampler::new(field, k)
}

/// Residual of `u_t - a u_xx - b u_x + x u_y` for the manufactured solution
/// `e^{-t} (1 + x²/10)` gives the forcing that makes it exact.
pub fn manufactured_solution(x: f64, _y: f64, t: f64) -> f64 {
    (-t).exp() * (1.0 + x * x / 10.0)
}

pub fn manufactured_forcing(variant: Variant) -> impl Fn(f64, f64, f64) -> f64 + Sync {
    move |x, _y, t| {
        let (a, b) = coefficients(x, variant).unwrap_or((0.0, 0.0));
        (-t).exp() * (-(1.0 + x * x / 10.0) - a / 5.0 - b * x / 5.0)
    }
}

/// Normalised Gaussian bump on the active nodes (discrete mass one).
pub fn gaussian_bump(grid: &Grid, mask: Option<&[bool]>, centre: (f64, f64), width: (f64, f64)) -> Vec<f64> {
    let mut v = grid.sample(|x, y| {
        let u = (x - centre.0) / width.0;
        let w = (y - centre.1) / width.1;
        (-0.5 * (u * u + w * w)).exp()
    });
    if let Some(m) = mask {
        for (val, &on) in v.iter_mut().zip(m) {
            if !on {
                *val = 0.0;
            }
        }
    }
    let mass: f64 = v.iter().sum::<f64>() * grid.dx * grid.dy;
    if mass > 0.0 {
        v.iter_mut().for_each(|x| *x /= mass);
    }
    v
}

/// Settings for delta-source approximations of Green and fundamental solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaConfig {
    pub dx: f64,
    pub dy: f64,
    /// Bump widths as multiples of the grid spacing, per axis.
    pub widths: [f64; 2],
    /// Half-width in `x` of the free-space box (must stay inside `(-1, 1)`).
    pub cauchy_x_max: f64,
    /// Half-width in `y` of the free-space box.
    pub cauchy_y_max: f64,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        Self {
            dx: 0.02,
            dy: 0.004,
            widths: [2.0, 4.0],
            cauchy_x_max: 0.98,
            cauchy_y_max: 1.2,
        }
    }
}

impl DeltaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.widths[0] > 0.0 && self.widths[1] > self.widths[0]) {
            return Err(Error::InvalidConfig("bump widths must satisfy 0 < w1 < w2".into()));
        }
        if !(self.cauchy_x_max > 0.0 && self.cauchy_x_max < 1.0) {
            return Err(Error::InvalidConfig("free-space box must stay inside |x| < 1".into()));
        }
        Ok(())
    }

    pub fn cauchy_grid(&self) -> Result<Grid> {
        Grid::symmetric(self.cauchy_x_max, self.dx, self.cauchy_y_max, self.dy)
    }

    pub fn lens(&self) -> Result<LensDomain> {
        LensDomain::with_spacing(self.dx, self.dy)
    }

    /// One step size shared by the lens and free-space solves.
    pub fn common_dt(&self) -> Result<f64> {
        let g = self.cauchy_grid()?;
        let lens = self.lens()?;
        let a = cfl_limit(&Problem::cauchy(g, Variant::Original))?;
        let b = cfl_limit(&Problem::lens(&lens))?;
        Ok(a.min(b))
    }
}

/// Delta-source response at one time, with the two bump widths and the
/// Richardson combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaValue {
    pub t: f64,
    pub narrow: f64,
    pub wide: f64,
    pub extrapolated: f64,
}

/// Where the delta response is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaDomain {
    Lens,
    Free,
}

/// Response at `target` of a unit source at `source` after each of `times`.
/// The lens uses the modified coefficients and free space the original ones;
/// the two agree on the lens.
pub fn delta_response(
    domain: DeltaDomain,
    source: (f64, f64),
    target: (f64, f64),
    times: &[f64],
    cfg: &DeltaConfig,
    dt: Option<f64>,
) -> Result<Vec<DeltaValue>> {
    Ok(delta_response_multi(domain, source, &[target], times, cfg, dt)?.remove(0))
}

/// [`delta_response`] for several targets from one pair of solves; indexed `[target][time]`.
pub fn delta_response_multi(
    domain: DeltaDomain,
    source: (f64, f64),
    targets: &[(f64, f64)],
    times: &[f64],
    cfg: &DeltaConfig,
    dt: Option<f64>,
) -> Result<Vec<Vec<DeltaValue>>> {
    cfg.validate()?;
    let dt = match dt {
        Some(d) => d,
        None => cfg.common_dt()?,
    };
    let ts = validate_times(0.0, times)?;
    if ts[0] < 10.0 * dt {
        return Err(Error::Unresolvable {
            t: ts[0],
            min: 10.0 * dt,
        });
    }
    let lens;
    let problem = match domain {
        DeltaDomain::Lens => {
            lens = cfg.lens()?;
            Problem::lens(&lens)
        }
        DeltaDomain::Free => Problem::cauchy(cfg.cauchy_grid()?, Variant::Original),
    };
    let grid = problem.grid;
    let run = |w: f64| -> Result<Vec<Vec<f64>>> {
        let init = gaussian_bump(&grid, problem.mask, source, (w * grid.dx, w * grid.dy));
        let field = solve(problem, &init, &ts, Some(dt))?;
        targets
            .iter()
            .map(|&(x, y)| {
                field
                    .values
                    .iter()
                    .map(|v| grid.interpolate(v, x, y).ok_or(Error::Extrapolation { p: x }))
                    .collect()
            })
            .collect()
    };
    let narrow = run(cfg.widths[0])?;
    let wide = run(cfg.widths[1])?;
    let rho2 = (cfg.widths[1] / cfg.widths[0]).powi(2);
    Ok(narrow
        .iter()
        .zip(&wide)
        .map(|(nv, wv)| {
            ts.iter()
                .zip(nv.iter().zip(wv))
                .map(|(&t, (&n, &w))| DeltaValue {
                    t,
                    narrow: n,
                    wide: w,
                    extrapolated: (rho2 * n - w) / (rho2 - 1.0),
                })
                .collect()
        })
        .collect())
}

/// Green function of the lens, `G(0,0,t; 0,0,0)`, at each of `times`.
pub fn green_values(times: &[f64], cfg: &DeltaConfig) -> Result<Vec<DeltaValue>> {
    delta_response(DeltaDomain::Lens, (0.0, 0.0), (0.0, 0.0), times, cfg, None)
}

/// Single Green-function value.
pub fn green_value(t: f64, cfg: &DeltaConfig) -> Result<f64> {
    Ok(green_values(&[t], cfg)?[0].extrapolated)
}

/// Free-space fundamental solution in momentum variables, `Γ(p, y, t; p1, y1, 0)`,
/// obtained from the velocity-form response and the source Jacobian `dx/dp`.
pub fn fundamental_values(
    source: (f64, f64),
    target: (f64, f64),
    times: &[f64],
    cfg: &DeltaConfig,
) -> Result<Vec<DeltaValue>> {
    Ok(fundamental_values_multi(source, &[target], times, cfg)?.remove(0))
}

/// [`fundamental_values`] for several targets; indexed `[target][time]`.
pub fn fundamental_values_multi(
    source: (f64, f64),
    targets: &[(f64, f64)],
    times: &[f64],
    cfg: &DeltaConfig,
) -> Result<Vec<Vec<DeltaValue>>> {
    let xs = to_velocity(source.0);
    if xs.abs() > cfg.cauchy_x_max {
        return Err(Error::Extrapolation { p: source.0 });
    }
    let mut xt = Vec::with_capacity(targets.len());
    for &(p, y) in targets {
        let x = to_velocity(p);
        if x.abs() > cfg.cauchy_x_max {
            return Err(Error::Extrapolation { p });
        }
        xt.push((x, y));
    }
    let jac = energy(source.0).powi(-3);
    let raw = delta_response_multi(DeltaDomain::Free, (xs, source.1), &xt, times, cfg, None)?;
    Ok(raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| DeltaValue {
                    t: v.t,
                    narrow: v.narrow * jac,
                    wide: v.wide * jac,
                    extrapolated: v.extrapolated * jac,
                })
                .collect()
        })
        .collect())
}

/// Divergence-form solver on a momentum grid: `∂_t f = ∂_p(E ∂_p f) - (p/E) ∂_y f`
/// with zero-flux faces on every side, so the discrete mass is conserved.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSolution {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub dt: f64,
    pub values: Vec<f64>,
    pub mass_history: Vec<f64>,
}

pub fn solve_flux_momentum(
    p_max: f64,
    np: usize,
    y_max: f64,
    ny: usize,
    initial: &dyn Fn(f64, f64) -> f64,
    horizon: f64,
) -> Result<FluxSolution> {
    if np < 3 || ny < 3 || !(p_max > 0.0 && y_max > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidConfig("flux solver needs a non-degenerate grid".into()));
    }
    let dp = 2.0 * p_max / np as f64;
    let dy = 2.0 * y_max / ny as f64;
    let pc: Vec<f64> = (0..np).map(|i| -p_max + (i as f64 + 0.5) * dp).collect();
    let yc: Vec<f64> = (0..ny).map(|j| -y_max + (j as f64 + 0.5) * dy).collect();
    let e_face: Vec<f64> = (0..=np).map(|i| energy(-p_max + i as f64 * dp)).collect();
    let e_max = e_face.iter().cloned().fold(0.0, f64::max);
    let dt_lim = 0.9 / (2.0 * e_max / (dp * dp) + 1.0 / dy);
    let n = (horizon / dt_lim).ceil() as usize;
    let dt = horizon / n as f64;
    let mut f: Vec<f64> = pc
        .iter()
        .flat_map(|&p| yc.iter().map(move |&y| (p, y)))
        .map(|(p, y)| initial(p, y))
        .collect();
    let cell = dp * dy;
    let mut mass_history = vec![f.iter().sum::<f64>() * cell];
    let mut next = f.clone();
    for _ in 0..n {
        for i in 0..np {
            let v = pc[i] / energy(pc[i]);
            for j in 0..ny {
                let k = i * ny + j;
                let west = if i > 0 { e_face[i] * (f[k] - f[k - ny]) / dp } else { 0.0 };
                let east = if i + 1 < np { e_face[i + 1] * (f[k + ny] - f[k]) / dp } else { 0.0 };
                // upwind transport fluxes through the lower and upper y faces
                let flux_at = |jf: usize| -> f64 {
                    if jf == 0 || jf == ny {
                        0.0
                    } else if v > 0.0 {
                        v * f[i * ny + jf - 1]
                    } else {
                        v * f[i * ny + jf]
                    }
                };
                let (fs, fn_) = (flux_at(j), flux_at(j + 1));
                next[k] = f[k] + dt * ((east - west) / dp - (fn_ - fs) / dy);
            }
        }
        std::mem::swap(&mut f, &mut next);
        mass_history.push(f.iter().sum::<f64>() * cell);
    }
    Ok(FluxSolution {
        p: pc,
        y: yc,
        dt,
        values: f,
        mass_history,
    })
}
