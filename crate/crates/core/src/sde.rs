//! Euler–Maruyama simulation of the kinetic diffusions and kernel density
//! estimation of their transition laws.
//!
//! Four processes are available:
//!
//! * `Langevin`: `dP = √2 dW`, `dY = P ds` (the classical Kolmogorov process).
//! * `Relativistic`: `dP = √2 E dW`, `dY = (P/E) ds` with `E = √(P²+1)`.
//! * `ProperTime`: `dP = √2 E dW`, `dY = P ds`, `dT = E ds`.
//! * `Kinetic`: `dP = (P/E) ds + √(2E) dW`, `dY = (P/E) ds`. Its density in
//!   `(p, y)` solves `∂_s f = ∂_p(E ∂_p f) - (p/E) ∂_y f`, so this is the
//!   process to compare against the PDE solvers.
//!
//! Replica `r` draws from a ChaCha8 stream keyed by `(seed, r)`, so ensembles
//! do not depend on the thread count.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{energy, PhasePoint};

pub const RNG_ALGORITHM: &str = "ChaCha8, seed_from_u64(seed), stream = replica index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Langevin,
    Relativistic,
    ProperTime,
    Kinetic,
}

impl ProcessKind {
    pub fn is_relativistic(self) -> bool {
        !matches!(self, ProcessKind::Langevin)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Langevin => "langevin",
            ProcessKind::Relativistic => "sde",
            ProcessKind::ProperTime => "rsde",
            ProcessKind::Kinetic => "kinetic",
        }
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "langevin" | "classical" => Ok(ProcessKind::Langevin),
            "sde" | "relativistic" => Ok(ProcessKind::Relativistic),
            "rsde" | "propertime" | "proper-time" => Ok(ProcessKind::ProperTime),
            "kinetic" => Ok(ProcessKind::Kinetic),
            other => Err(Error::InvalidConfig(format!("unknown process `{other}`"))),
        }
    }
}

impl std::fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub kind: ProcessKind,
    pub start: PhasePoint,
    pub horizon: f64,
    /// Requested step; the effective step is `horizon / ceil(horizon / step)`.
    pub step: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Diagnostic mode: all Brownian increments are zero.
    #[serde(default)]
    pub zero_noise: bool,
    /// Standard deviations `(σ_p, σ_y)` of a Gaussian initial law around `start`.
    #[serde(default)]
    pub spread: Option<[f64; 2]>,
    /// Extra recording times in `(0, horizon)`; the horizon is always recorded.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl SdeConfig {
    pub fn new(
        kind: ProcessKind,
        start: PhasePoint,
        horizon: f64,
        step: f64,
        replicas: usize,
        seed: u64,
    ) -> Self {
        Self {
            kind,
            start,
            horizon,
            step,
            replicas,
            seed,
            zero_noise: false,
            spread: None,
            snapshots: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.step > 0.0 && self.step <= self.horizon) {
            return bad(format!(
                "step must lie in (0, horizon], got {} with horizon {}",
                self.step, self.horizon
            ));
        }
        if self.replicas == 0 {
            return bad("at least one replica is required".into());
        }
        if !self.start.is_finite() {
            return bad("start point must be finite".into());
        }
        if let Some([sp, sy]) = self.spread {
            if !(sp >= 0.0 && sy >= 0.0 && sp.is_finite() && sy.is_finite()) {
                return bad("spread must be finite and non-negative".into());
            }
        }
        for &s in &self.snapshots {
            if !(s > 0.0 && s <= self.horizon) {
                return bad(format!("snapshot {s} outside (0, horizon]"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    fn snapshot_indices(&self) -> Vec<usize> {
        let ds = self.effective_step();
        let n = self.steps();
        let mut idx: Vec<usize> = self
            .snapshots
            .iter()
            .map(|&s| ((s / ds).round() as usize).clamp(1, n))
            .chain(std::iter::once(n))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub replica: usize,
    pub at: f64,
}

/// Simulated ensemble: `states[k][r]` is replica `r` at `times[k]`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: SdeConfig,
    pub times: Vec<f64>,
    pub initial: Vec<PhasePoint>,
    pub states: Vec<Vec<PhasePoint>>,
    /// Per replica, whether the light-cone inequality failed at some step.
    pub cone_violated: Vec<bool>,
    /// Replicas whose state became non-finite; their rows hold NaN.
    pub failures: Vec<ReplicaFailure>,
}

struct ReplicaRun {
    initial: PhasePoint,
    snaps: Vec<PhasePoint>,
    violated: bool,
    failed_at: Option<f64>,
}

fn run_replica(cfg: &SdeConfig, idx: &[usize], r: usize) -> ReplicaRun {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64);
    let n = cfg.steps();
    let ds = cfg.effective_step();
    let sq = ds.sqrt();
    let mut z = cfg.start;
    if let Some([sp, sy]) = cfg.spread {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        z.p += sp * a;
        z.y += sy * b;
    }
    let initial = z;
    let mut snaps = Vec::with_capacity(idx.len());
    let mut next = 0;
    let mut violated = false;
    let mut failed_at = None;
    for k in 1..=n {
        let xi: f64 = if cfg.zero_noise {
            0.0
        } else {
            rng.sample(StandardNormal)
        };
        let dw = sq * xi;
        let e = energy(z.p);
        match cfg.kind {
            ProcessKind::Langevin => {
                z.y += z.p * ds;
                z.t += ds;
                z.p += std::f64::consts::SQRT_2 * dw;
            }
            ProcessKind::Relativistic => {
                z.y += z.p / e * ds;
                z.t += ds;
                z.p += std::f64::consts::SQRT_2 * e * dw;
            }
            ProcessKind::ProperTime => {
                z.y += z.p * ds;
                z.t += e * ds;
                z.p += std::f64::consts::SQRT_2 * e * dw;
            }
            ProcessKind::Kinetic => {
                let v = z.p / e;
                z.y += v * ds;
                z.t += ds;
                z.p += v * ds + (2.0 * e).sqrt() * dw;
            }
        }
        if !z.is_finite() {
            failed_at = Some(k as f64 * ds);
            break;
        }
        let reach = match cfg.kind {
            ProcessKind::ProperTime => z.t - initial.t,
            _ => k as f64 * ds,
        };
        if !((z.y - initial.y).abs() < reach) {
            violated = true;
        }
        while next < idx.len() && idx[next] == k {
            snaps.push(z);
            next += 1;
        }
    }
    let nan = PhasePoint::new(f64::NAN, f64::NAN, f64::NAN);
    snaps.resize(idx.len(), nan);
    ReplicaRun {
        initial,
        snaps,
        violated,
        failed_at,
    }
}

/// Simulates `config.replicas` independent paths.
pub fn simulate(config: &SdeConfig) -> Result<Ensemble> {
    config.validate()?;
    let idx = config.snapshot_indices();
    let ds = config.effective_step();
    let runs: Vec<ReplicaRun> = (0..config.replicas)
        .into_par_iter()
        .map(|r| run_replica(config, &idx, r))
        .collect();
    let mut states = vec![Vec::with_capacity(config.replicas); idx.len()];
    let mut initial = Vec::with_capacity(config.replicas);
    let mut cone_violated = Vec::with_capacity(config.replicas);
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        initial.push(run.initial);
        cone_violated.push(run.violated);
        if let Some(at) = run.failed_at {
            failures.push(ReplicaFailure { replica: r, at });
        }
        for (k, s) in run.snaps.into_iter().enumerate() {
            states[k].push(s);
        }
    }
    Ok(Ensemble {
        config: config.clone(),
        times: idx.iter().map(|&k| k as f64 * ds).collect(),
        initial,
        states,
        cone_violated,
        failures,
    })
}

impl Ensemble {
    pub fn terminal(&self) -> &[PhasePoint] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index of the snapshot closest to `s`.
    pub fn snapshot_index(&self, s: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - s).abs().total_cmp(&(b.1 - s).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Finite `(P, Y)` pairs at snapshot `k`.
    pub fn momentum_position(&self, k: usize) -> Vec<(f64, f64)> {
        self.states[k]
            .iter()
            .filter(|z| z.is_finite())
            .map(|z| (z.p, z.y))
            .collect()
    }

    /// Writes the ensemble as CSV with columns `replica,s,P,Y,T`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replica", "s", "P", "Y", "T"])?;
        for r in 0..self.initial.len() {
            for (k, &s) in self.times.iter().enumerate() {
                let z = self.states[k][r];
                w.write_record(&[
                    r.to_string(),
                    format!("{s}"),
                    format!("{}", z.p),
                    format!("{}", z.y),
                    format!("{}", z.t),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightConeReport {
    pub replicas: usize,
    pub violations: usize,
    pub fraction: f64,
    pub failures: usize,
}

/// Fraction of paths that left the light cone `|ΔY| < ΔT` at some step.
pub fn light_cone_report(ensemble: &Ensemble) -> LightConeReport {
    let n = ensemble.cone_violated.len();
    let v = ensemble.cone_violated.iter().filter(|&&b| b).count();
    LightConeReport {
        replicas: n,
        violations: v,
        fraction: if n == 0 { 0.0 } else { v as f64 / n as f64 },
        failures: ensemble.failures.len(),
    }
}

/// Sample mean and standard error.
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Ok((mean, f64::INFINITY));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Cell-centred rectangular grid on `[p_min, p_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl DensityGrid {
    pub fn new(p_min: f64, p_max: f64, np: usize, y_min: f64, y_max: f64, ny: usize) -> Result<Self> {
        if !(p_max > p_min && y_max > y_min && np > 0 && ny > 0) {
            return Err(Error::InvalidConfig("degenerate density grid".into()));
        }
        Ok(Self {
            p_min,
            p_max,
            np,
            y_min,
            y_max,
            ny,
        })
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dp() * self.dy()
    }

    pub fn p_center(&self, i: usize) -> f64 {
        self.p_min + (i as f64 + 0.5) * self.dp()
    }

    pub fn y_center(&self, j: usize) -> f64 {
        self.y_min + (j as f64 + 0.5) * self.dy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub hp: f64,
    pub hy: f64,
}

impl Bandwidth {
    /// Scott-type rule `h = σ̂ n^{-1/6}` per axis.
    pub fn scott(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let ps: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let n = samples.len() as f64;
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        };
        let f = n.powf(-1.0 / 6.0);
        let floor = 1e-12;
        Ok(Self {
            hp: (sd(&ps) * f).max(floor),
            hy: (sd(&ys) * f).max(floor),
        })
    }
}

/// Kernel density estimate of a `(p, y)` law, stored row-major with `p` outer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: DensityGrid,
    pub bandwidth: Bandwidth,
    pub values: Vec<f64>,
    pub replicas: usize,
    pub seed: Option<u64>,
}

impl DensityEstimate {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.ny + j]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// `∫ |f - g|` over the grid with `g` evaluated at cell centres.
    pub fn l1_distance<F: Fn(f64, f64) -> f64>(&self, g: F) -> f64 {
        let mut s = 0.0;
        for i in 0..self.grid.np {
            let p = self.grid.p_center(i);
            for j in 0..self.grid.ny {
                s += (self.at(i, j) - g(p, self.grid.y_center(j))).abs();
            }
        }
        s * self.grid.cell_area()
    }

    pub fn l1_between(&self, other: &DensityEstimate) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidConfig("density grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_area())
    }

    /// CSV with `#`-prefixed metadata lines and columns `p,y,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            out,
            "# p_min={} p_max={} np={} y_min={} y_max={} ny={}",
            g.p_min, g.p_max, g.np, g.y_min, g.y_max, g.ny
        )?;
        writeln!(
            out,
            "# bandwidth_p={} bandwidth_y={} replicas={} seed={}",
            self.bandwidth.hp,
            self.bandwidth.hy,
            self.replicas,
            self.seed.map_or("none".to_string(), |s| s.to_string())
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "y", "density"])?;
        for i in 0..g.np {
            for j in 0..g.ny {
                w.write_record(&[
                    format!("{}", g.p_center(i)),
                    format!("{}", g.y_center(j)),
                    format!("{}", self.at(i, j)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Probability mass of `N(0, h²)` in each cell `[(k-½)Δ, (k+½)Δ]`, `|k| ≤ m`.
fn cell_weights(h: f64, delta: f64, m: usize) -> Vec<f64> {
    (0..=2 * m)
        .map(|i| {
            let k = i as f64 - m as f64;
            std_normal_cdf((k + 0.5) * delta / h) - std_normal_cdf((k - 0.5) * delta / h)
        })
        .collect()
}

fn linear_bin(x: f64, lo: f64, delta: f64, n: usize) -> Option<(usize, f64)> {
    // position relative to the first cell centre
    let u = (x - lo) / delta - 0.5;
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return None;
    }
    let i = (u.floor() as usize).min(n.saturating_sub(2));
    Some((i, u - i as f64))
}

/// Binned Gaussian-kernel density estimate on `grid`.
///
/// Samples are linearly binned onto a padded copy of the grid, then smoothed
/// by separable convolution with cell-integrated Gaussian weights, so the
/// estimate never integrates above one.
pub fn estimate_density(
    samples: &[(f64, f64)],
    grid: DensityGrid,
    bandwidth: Option<Bandwidth>,
) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let bw = match bandwidth {
        Some(b) => b,
        None => Bandwidth::scott(samples)?,
    };
    if !(bw.hp > 0.0 && bw.hy > 0.0) {
        return Err(Error::InvalidConfig("bandwidths must be positive".into()));
    }
    let (dp, dy) = (grid.dp(), grid.dy());
    let mp = ((5.0 * bw.hp / dp).ceil() as usize).min(4 * grid.np + 8);
    let my = ((5.0 * bw.hy / dy).ceil() as usize).min(4 * grid.ny + 8);
    let (np, ny) = (grid.np + 2 * mp, grid.ny + 2 * my);
    let (plo, ylo) = (grid.p_min - mp as f64 * dp, grid.y_min - my as f64 * dy);

    let mut bins = vec![0.0; np * ny];
    let mut kept = 0usize;
    for &(p, y) in samples {
        if !(p.is_finite() && y.is_finite()) {
            continue;
        }
        kept += 1;
        let (Some((i, fp)), Some((j, fy))) = (linear_bin(p, plo, dp, np), linear_bin(y, ylo, dy, ny))
        else {
            continue;
        };
        bins[i * ny + j] += (1.0 - fp) * (1.0 - fy);
        bins[(i + 1) * ny + j] += fp * (1.0 - fy);
        bins[i * ny + j + 1] += (1.0 - fp) * fy;
        bins[(i + 1) * ny + j + 1] += fp * fy;
    }
    if kept == 0 {
        return Err(Error::EmptyEnsemble);
    }

    let wp = cell_weights(bw.hp, dp, mp);
    let wy = cell_weights(bw.hy, dy, my);
    // smooth along y on all padded rows, then along p into the cropped grid
    let mut tmp = vec![0.0; np * grid.ny];
    for i in 0..np {
        let row = &bins[i * ny..(i + 1) * ny];
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..grid.ny {
            let jc = j + my;
            let mut s = 0.0;
            for (k, w) in wy.iter().enumerate() {
                s += w * row[jc + my - k];
            }
            tmp[i * grid.ny + j] = s;
        }
    }
    let mut values = vec![0.0; grid.np * grid.ny];
    let norm = 1.0 / (kept as f64 * grid.cell_area());
    for i in 0..grid.np {
        let ic = i + mp;
        for (k, w) in wp.iter().enumerate() {
            let src = &tmp[(ic + mp - k) * grid.ny..(ic + mp - k + 1) * grid.ny];
            let dst = &mut values[i * grid.ny..(i + 1) * grid.ny];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        for v in &mut values[i * grid.ny..(i + 1) * grid.ny] {
            *v *= norm;
        }
    }
    Ok(DensityEstimate {
        grid,
        bandwidth: bw,
        values,
        replicas: kept,
        seed: None,
    })
}

/// Density estimate from an ensemble snapshot, tagged with the ensemble seed.
pub fn ensemble_density(
    ensemble: &Ensemble,
    snapshot: usize,
    grid: DensityGrid,
    bandwidth: Option<Bandwidth>,
) -> Result<DensityEstimate> {
    let mut d = estimate_density(&ensemble.momentum_position(snapshot), grid, bandwidth)?;
    d.seed = Some(ensemble.config.seed);
    Ok(d)
}

/// Gaussian-kernel estimate at a single point with its standard error.
pub fn point_density(samples: &[(f64, f64)], p: f64, y: f64, bw: Bandwidth) -> Result<(f64, f64)> {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * bw.hp * bw.hy);
    let k: Vec<f64> = samples
        .iter()
        .filter(|s| s.0.is_finite() && s.1.is_finite())
        .map(|&(sp, sy)| {
            let (u, v) = ((sp - p) / bw.hp, (sy - y) / bw.hy);
            norm * (-0.5 * (u * u + v * v)).exp()
        })
        .collect();
    mean_and_se(&k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_rsde_is_deterministic_ode() {
        let z0 = PhasePoint::new(0.7, -0.2, 1.0);
        let mut cfg = SdeConfig::new(ProcessKind::ProperTime, z0, 1.3, 0.01, 3, 5);
        cfg.zero_noise = true;
        let ens = simulate(&cfg).unwrap();
        let want = PhasePoint::new(0.7, -0.2 + 0.7 * 1.3, 1.0 + 1.3 * energy(0.7));
        for z in ens.terminal() {
            assert!(z.max_abs_diff(&want) < 1e-12, "{z}");
        }
        assert_eq!(light_cone_report(&ens).violations, 0);
    }

    #[test]
    fn mean_momentum_is_driftless() {
        let cfg = SdeConfig::new(ProcessKind::Relativistic, PhasePoint::ORIGIN, 0.5, 0.01, 100_000, 11);
        let ens = simulate(&cfg).unwrap();
        let ps: Vec<f64> = ens.terminal().iter().map(|z| z.p).collect();
        let (m, se) = mean_and_se(&ps).unwrap();
        assert!(m.abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn light_cone_holds_and_classical_breaks_it() {
        let cfg = SdeConfig::new(ProcessKind::Relativistic, PhasePoint::new(3.0, 0.0, 0.0), 0.5, 0.01, 20_000, 3);
        assert_eq!(light_cone_report(&simulate(&cfg).unwrap()).violations, 0);
        let cfg = SdeConfig::new(ProcessKind::Langevin, PhasePoint::new(3.0, 0.0, 0.0), 0.5, 0.01, 2_000, 3);
        assert!(light_cone_report(&simulate(&cfg).unwrap()).fraction > 0.5);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let cfg = SdeConfig::new(ProcessKind::Kinetic, PhasePoint::ORIGIN, 0.2, 0.01, 500, 42);
        let a = simulate(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate(&cfg).unwrap());
        assert_eq!(a.terminal(), b.terminal());
    }

    #[test]
    fn snapshots_are_recorded() {
        let mut cfg = SdeConfig::new(ProcessKind::Kinetic, PhasePoint::ORIGIN, 1.0, 0.01, 10, 1);
        cfg.snapshots = vec![0.5, 0.25];
        let ens = simulate(&cfg).unwrap();
        assert_eq!(ens.times.len(), 3);
        assert!((ens.times[0] - 0.25).abs() < 1e-12 && (ens.times[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SdeConfig::new(ProcessKind::Kinetic, PhasePoint::ORIGIN, 1.0, 2.0, 10, 1);
        assert!(simulate(&cfg).is_err());
        cfg.step = 0.1;
        cfg.replicas = 0;
        assert!(simulate(&cfg).is_err());
        assert!("nope".parse::<ProcessKind>().is_err());
        assert_eq!("rsde".parse::<ProcessKind>().unwrap(), ProcessKind::ProperTime);
    }

    #[test]
    fn delta_limit_and_normalisation() {
        let grid = DensityGrid::new(-1.0, 1.0, 20, -1.0, 1.0, 20).unwrap();
        let node = (grid.p_center(7), grid.y_center(12));
        let d = estimate_density(&[node], grid, Some(Bandwidth { hp: 1e-4, hy: 1e-4 })).unwrap();
        assert!(d.at(7, 12) * grid.cell_area() > 0.99);
        assert!(d.mass() <= 1.0 + 1e-9);
        assert!(estimate_density(&[], grid, None).is_err());
    }

    #[test]
    fn estimate_reproduces_a_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<(f64, f64)> = (0..200_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (0.5 * a, 0.2 * b)
            })
            .collect();
        let grid = DensityGrid::new(-3.0, 3.0, 120, -1.2, 1.2, 96).unwrap();
        let d = estimate_density(&xs, grid, None).unwrap();
        let exact = |p: f64, y: f64| {
            (-0.5 * (p * p / 0.25 + y * y / 0.04)).exp() / (2.0 * std::f64::consts::PI * 0.1)
        };
        assert!(d.l1_distance(exact) < 0.03, "{}", d.l1_distance(exact));
        let (v, se) = point_density(&xs, 0.0, 0.0, d.bandwidth).unwrap();
        assert!((v - exact(0.0, 0.0)).abs() < 5.0 * se + 0.03 * exact(0.0, 0.0));
    }
}
