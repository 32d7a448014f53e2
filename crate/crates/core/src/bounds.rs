//! Numerical checks of the Gaussian-type lower bound for the fundamental solution.
//!
//! The bound has the form `Δt² Γ(z0; z1) ≥ c · exp(-C Ψ)` with `Ψ` the value
//! function at an intermediate time. Only its feasibility and scaling are
//! checked: the constants themselves are not computable.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{value_function, ValueConfig};
use crate::error::{Error, Result};
use crate::geometry::PhasePoint;
use crate::pde::{cfl_limit, fundamental_values, fundamental_values_multi, green_values, DeltaConfig, Problem};
use crate::sde::{point_density, simulate, Bandwidth, ProcessKind, SdeConfig};

/// One row of a [`GammaFloorReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFloorRow {
    pub t: f64,
    pub gamma: f64,
    pub green: f64,
    pub t2_gamma: f64,
    pub t2_green: f64,
    /// `Γ̂ - Ĝ`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFloorReport {
    pub rows: Vec<GammaFloorRow>,
    /// Times below the resolvable limit.
    pub skipped: Vec<f64>,
    /// Least-squares slope of `log Ĝ` against `log t`.
    pub green_slope: f64,
    pub gamma_floor: f64,
    pub green_floor: f64,
    pub min_slack: f64,
}

impl GammaFloorReport {
    pub fn floor_positive(&self) -> bool {
        self.gamma_floor > 0.0 && self.green_floor > 0.0
    }
}

/// Least-squares slope and intercept of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// `Γ̂(0,0,t; 0,0,0)` and the lens Green function `Ĝ` on `times`.
pub fn gamma_floor_check(times: &[f64], cfg: &DeltaConfig) -> Result<GammaFloorReport> {
    let dt = cfg.common_dt()?;
    let free_dt = cfl_limit(&Problem::cauchy(cfg.cauchy_grid()?, crate::pde::Variant::Original))?;
    let min_t = 10.0 * dt.max(free_dt);
    let (ok, skipped): (Vec<f64>, Vec<f64>) = times.iter().partition(|&&t| t >= min_t);
    if ok.is_empty() {
        return Err(Error::Unresolvable {
            t: times.iter().copied().fold(f64::INFINITY, f64::min),
            min: min_t,
        });
    }
    let green = green_values(&ok, cfg)?;
    let gamma = fundamental_values((0.0, 0.0), (0.0, 0.0), &ok, cfg)?;
    let rows: Vec<GammaFloorRow> = green
        .iter()
        .zip(&gamma)
        .map(|(g, f)| GammaFloorRow {
            t: g.t,
            gamma: f.extrapolated,
            green: g.extrapolated,
            t2_gamma: g.t * g.t * f.extrapolated,
            t2_green: g.t * g.t * g.extrapolated,
            slack: f.extrapolated - g.extrapolated,
        })
        .collect();
    let lx: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.green.max(f64::MIN_POSITIVE).ln()).collect();
    let (green_slope, _) = linear_fit(&lx, &ly);
    let min = |f: fn(&GammaFloorRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    Ok(GammaFloorReport {
        gamma_floor: min(|r| r.t2_gamma),
        green_floor: min(|r| r.t2_green),
        min_slack: min(|r| r.slack),
        green_slope,
        rows,
        skipped,
    })
}

/// A pair `z0` (later) and `z1` (earlier) with `t0 > t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub z0: PhasePoint,
    pub z1: PhasePoint,
}

impl Endpoint {
    pub fn elapsed(&self) -> f64 {
        self.z0.t - self.z1.t
    }

    /// `(p1, y1, θ² t1 + (1 - θ²) t0)`.
    pub fn intermediate(&self, theta: f64) -> PhasePoint {
        let th2 = theta * theta;
        PhasePoint::new(self.z1.p, self.z1.y, th2 * self.z1.t + (1.0 - th2) * self.z0.t)
    }
}

/// The default 20-endpoint grid: `z0 = (0, 0, Δt)`, `z1 = (p1, y1, 0)` with
/// `Δt ∈ {0.5, 0.7}`, `p1 ∈ {0, ±0.25, ±0.5}` and `y1 = ±0.3 Δt`.
pub fn default_endpoints() -> Vec<Endpoint> {
    let mut out = Vec::with_capacity(20);
    for dt in [0.5, 0.7] {
        for p1 in [-0.5, -0.25, 0.0, 0.25, 0.5] {
            for fy in [-0.3, 0.3] {
                out.push(Endpoint {
                    z0: PhasePoint::new(0.0, 0.0, dt),
                    z1: PhasePoint::new(p1, fy * dt, 0.0),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub theta: f64,
    pub replicas: usize,
    pub mc_step: f64,
    pub seed: u64,
    /// KDE bandwidth as a multiple of the Scott rule.
    pub bandwidth_factor: f64,
    pub delta: DeltaConfig,
    pub value: ValueConfig,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            theta: 0.75,
            replicas: 1_000_000,
            mc_step: 0.0025,
            seed: 2024,
            bandwidth_factor: 0.5,
            delta: DeltaConfig::default(),
            value: ValueConfig::default(),
        }
    }
}

/// Per-endpoint row of a [`BoundReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointRow {
    pub endpoint: Endpoint,
    pub elapsed: f64,
    pub psi: f64,
    pub gamma_pde: f64,
    pub gamma_mc: f64,
    pub gamma_mc_se: f64,
    /// `log(Δt² Γ̂)` from the PDE estimate.
    pub log_scaled: f64,
    /// `log(Δt² Γ̂) - (log c - C Ψ)` at the feasible certificate.
    pub margin: f64,
    /// `|Γ̂_pde - Γ̂_mc| ≤ 2 se + 0.05`.
    pub estimates_agree: bool,
    pub retained: bool,
}

/// A vertex of the concave envelope `C ↦ min_i (log(Δt_i² Γ̂_i) + C Ψ_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub c: f64,
    pub log_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub assumption: String,
    pub config: BoundConfig,
    pub rows: Vec<EndpointRow>,
    /// Least-squares fit `log(Δt² Γ̂) ≈ intercept + slope Ψ`.
    pub slope: f64,
    pub intercept: f64,
    /// `C = max(-slope, 1e-12)`.
    pub c_fit: f64,
    /// Smallest residual of the least-squares line.
    pub worst_margin: f64,
    /// Largest `log c` compatible with all constraints at `C = c_fit`.
    pub log_c: f64,
    pub vertices: Vec<Vertex>,
    pub feasible: bool,
    pub diagnostics: Vec<String>,
}

/// Largest admissible `log c` at fixed `C`: `min_i (L_i + C Ψ_i)`.
pub fn max_log_c(log_scaled: &[f64], psi: &[f64], c: f64) -> f64 {
    log_scaled
        .iter()
        .zip(psi)
        .map(|(l, p)| l + c * p)
        .fold(f64::INFINITY, f64::min)
}

/// Vertices of `C ↦ max_log_c(C)` on `C > 0`: the crossings where the active
/// constraint changes, found by walking the lower envelope of the lines `L_i + C Ψ_i`.
pub fn envelope_vertices(log_scaled: &[f64], psi: &[f64]) -> Vec<Vertex> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    let mut lines: Vec<(f64, f64)> = Vec::new();
    for (&l, &p) in log_scaled.iter().zip(psi) {
        if !lines.iter().any(|&(ll, pp)| close(ll, l) && close(pp, p)) {
            lines.push((l, p));
        }
    }
    // active line as C → 0+: smallest L, ties broken by smallest Ψ
    let Some(mut cur) = (0..lines.len()).min_by(|&i, &j| {
        let (a, b) = (lines[i], lines[j]);
        if close(a.0, b.0) { a.1.total_cmp(&b.1) } else { a.0.total_cmp(&b.0) }
    }) else {
        return Vec::new();
    };
    let mut c_cur = 0.0;
    let mut out = Vec::new();
    loop {
        let (la, pa) = lines[cur];
        let next = (0..lines.len())
            .filter(|&j| lines[j].1 < pa && !close(lines[j].1, pa))
            .map(|j| (j, (lines[j].0 - la) / (pa - lines[j].1)))
            .filter(|&(_, c)| c >= c_cur)
            .min_by(|a, b| {
                if close(a.1, b.1) { lines[a.0].1.total_cmp(&lines[b.0].1) } else { a.1.total_cmp(&b.1) }
            });
        let Some((j, c)) = next else { break };
        if c > 0.0 {
            out.push(Vertex { c, log_c: la + c * pa });
        }
        cur = j;
        c_cur = c;
    }
    out
}

/// Γ̂ at the endpoints by PDE and Monte Carlo, grouped by source momentum.
///
/// The kernel is invariant under `y`-translations and under `(p, y) → (-p, -y)`,
/// so each endpoint is mapped to a source `(|p1|, 0)` and solved once per source.
fn gamma_estimates(endpoints: &[Endpoint], cfg: &BoundConfig) -> Result<Vec<(f64, f64, f64)>> {
    struct Query {
        target: (f64, f64),
        t: f64,
    }
    let mut groups: BTreeMap<u64, Vec<(usize, Query)>> = BTreeMap::new();
    for (i, e) in endpoints.iter().enumerate() {
        let (mut ps, mut tp, mut ty) = (e.z1.p, e.z0.p, e.z0.y - e.z1.y);
        if ps < 0.0 {
            (ps, tp, ty) = (-ps, -tp, -ty);
        }
        groups.entry(ps.to_bits()).or_default().push((
            i,
            Query {
                target: (tp, ty),
                t: e.elapsed(),
            },
        ));
    }
    let mut out = vec![(0.0, 0.0, 0.0); endpoints.len()];
    for (bits, qs) in &groups {
        let ps = f64::from_bits(*bits);
        let mut times: Vec<f64> = qs.iter().map(|(_, q)| q.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let targets: Vec<(f64, f64)> = qs.iter().map(|(_, q)| q.target).collect();
        let pde = fundamental_values_multi((ps, 0.0), &targets, &times, &cfg.delta)?;
        let horizon = *times.last().expect("non-empty");
        let mut sc = SdeConfig::new(
            ProcessKind::Kinetic,
            PhasePoint::new(ps, 0.0, 0.0),
            horizon,
            cfg.mc_step,
            cfg.replicas,
            cfg.seed ^ bits.rotate_left(17),
        );
        sc.snapshots = times[..times.len() - 1].to_vec();
        let ens = simulate(&sc)?;
        let mut samples = BTreeMap::new();
        for &t in &times {
            let k = ens.snapshot_index(t);
            let s = ens.momentum_position(k);
            let scott = Bandwidth::scott(&s)?;
            let bw = Bandwidth {
                hp: scott.hp * cfg.bandwidth_factor,
                hy: scott.hy * cfg.bandwidth_factor,
            };
            samples.insert(t.to_bits(), (s, bw));
        }
        for (qi, (i, q)) in qs.iter().enumerate() {
            let ti = times.iter().position(|&t| t == q.t).expect("time present");
            let (s, bw) = &samples[&q.t.to_bits()];
            let (mc, se) = point_density(s, q.target.0, q.target.1, *bw)?;
            out[*i] = (pde[qi][ti].extrapolated, mc, se);
        }
    }
    Ok(out)
}

/// Evaluates `Ψ` and `Γ̂` on `endpoints` and tests whether some `(c, C)` with
/// `c, C > 0` satisfies `Δt² Γ̂ ≥ c exp(-C Ψ)` at every retained endpoint.
///
/// The starting time argument of `Ψ` is taken to be `t0`.
pub fn verify_lower_bound(endpoints: &[Endpoint], cfg: &BoundConfig) -> Result<BoundReport> {
    if endpoints.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(Error::Domain { what: "theta", value: cfg.theta });
    }
    for e in endpoints {
        if !(e.elapsed() > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "endpoint needs t0 > t1, got t0 = {} and t1 = {}",
                e.z0.t, e.z1.t
            )));
        }
    }
    let mut diagnostics = Vec::new();
    let psis = endpoints
        .iter()
        .map(|e| value_function(e.z0, e.intermediate(cfg.theta), &cfg.value).map(|v| v.psi))
        .collect::<Result<Vec<f64>>>()?;
    let gammas = gamma_estimates(endpoints, cfg)?;
    let mut rows: Vec<EndpointRow> = endpoints
        .iter()
        .zip(psis.iter().zip(&gammas))
        .map(|(e, (&psi, &(g, mc, se)))| {
            let dt = e.elapsed();
            EndpointRow {
                endpoint: *e,
                elapsed: dt,
                psi,
                gamma_pde: g,
                gamma_mc: mc,
                gamma_mc_se: se,
                log_scaled: if g > 0.0 { (dt * dt * g).ln() } else { f64::NAN },
                margin: f64::NAN,
                estimates_agree: (g - mc).abs() <= 2.0 * se + 0.05,
                retained: g > 0.0 && mc > 0.0,
            }
        })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        if !r.retained {
            diagnostics.push(format!("endpoint {i} dropped: non-positive density estimate"));
        }
        if !r.estimates_agree {
            diagnostics.push(format!(
                "endpoint {i}: PDE {:.4} and MC {:.4} ± {:.4} disagree",
                r.gamma_pde, r.gamma_mc, r.gamma_mc_se
            ));
        }
    }
    let (ls, ps): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.retained).map(|r| (r.log_scaled, r.psi)).unzip();
    let (slope, intercept) = if ls.len() >= 2 { linear_fit(&ps, &ls) } else { (f64::NAN, f64::NAN) };
    let c_fit = if slope.is_finite() { (-slope).max(1e-12) } else { 1e-12 };
    let worst_margin = ls
        .iter()
        .zip(&ps)
        .map(|(l, p)| l - (intercept + slope * p))
        .fold(f64::INFINITY, f64::min);
    let log_c = max_log_c(&ls, &ps, c_fit);
    let vertices = envelope_vertices(&ls, &ps);
    for r in rows.iter_mut().filter(|r| r.retained) {
        r.margin = r.log_scaled - (log_c - c_fit * r.psi);
    }
    let feasible = !ls.is_empty() && log_c.is_finite() && c_fit > 0.0;
    if !(slope < 0.0) {
        diagnostics.push(format!("fitted slope {slope:.4} is not negative"));
    }
    Ok(BoundReport {
        assumption: "the value function is evaluated from (p0, y0, t0)".into(),
        config: *cfg,
        rows,
        slope,
        intercept,
        c_fit,
        worst_margin,
        log_c,
        vertices,
        feasible,
        diagnostics,
    })
}

impl BoundReport {
    /// One row per endpoint: `p0,y0,t0,p1,y1,t1,psi,gamma_pde,gamma_mc,margin`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "p0", "y0", "t0", "p1", "y1", "t1", "psi", "gamma_pde", "gamma_mc", "gamma_mc_se", "margin",
        ])?;
        for r in &self.rows {
            let e = r.endpoint;
            w.write_record(
                [
                    e.z0.p, e.z0.y, e.z0.t, e.z1.p, e.z1.y, e.z1.t, r.psi, r.gamma_pde, r.gamma_mc, r.gamma_mc_se, r.margin,
                ]
                .iter()
                .map(|v| format!("{v:e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
