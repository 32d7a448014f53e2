//! Minimum-energy steering along admissible paths.
//!
//! A control `ω` drives `p' = ω E`, `y' = -p`, `t' = -E` (with `E = √(p²+1)`)
//! and costs `∫ ω²`. The value function `Ψ(z0; z1)` is the least cost of
//! steering `z0` to `z1`. It is computed by shooting on normal Pontryagin
//! extremals and cross-checked against a direct transcription.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{energy, lorentz_compose, lorentz_relative, PhasePoint};

/// Piecewise-constant control on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFunction {
    /// `n + 1` increasing breakpoints from `0` to `T`.
    pub breakpoints: Vec<f64>,
    /// `n` values, one per piece.
    pub values: Vec<f64>,
}

impl ControlFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::InvalidConfig(
                "a control needs n values and n + 1 breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(
                "breakpoints must start at 0 and increase strictly".into(),
            ));
        }
        if values.iter().chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("control values must be finite".into()));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![value])
    }

    /// Samples `f` at piece midpoints of a uniform partition into `n` pieces.
    pub fn from_fn<F: Fn(f64) -> f64>(f: F, horizon: f64, n: usize) -> Result<Self> {
        let h = horizon / n as f64;
        let bp = (0..=n).map(|i| if i == n { horizon } else { i as f64 * h }).collect();
        Self::new(bp, (0..n).map(|i| f((i as f64 + 0.5) * h)).collect())
    }

    /// Same control with extra breakpoints inserted, truncated at `s_end`.
    pub fn refined(&self, extra: &[f64], s_end: f64) -> Result<Self> {
        let mut bp: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(extra)
            .copied()
            .filter(|&b| b >= 0.0 && b <= s_end)
            .chain([s_end])
            .collect();
        bp.sort_by(f64::total_cmp);
        bp.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        let values = bp.windows(2).map(|w| self.value_at(0.5 * (w[0] + w[1]))).collect();
        Self::new(bp, values)
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty")
    }

    pub fn value_at(&self, s: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= s);
        self.values[i.clamp(1, self.values.len()) - 1]
    }

    /// `∫_0^s ω²`, exact for piecewise-constant `ω`.
    pub fn cost(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.horizon());
        let mut acc = 0.0;
        for (w, v) in self.breakpoints.windows(2).zip(&self.values) {
            if s <= w[0] {
                break;
            }
            acc += v * v * (s.min(w[1]) - w[0]);
        }
        acc
    }

    pub fn total_cost(&self) -> f64 {
        self.cost(self.horizon())
    }

    /// Smallest `σ` with `∫_0^σ ω² = level`, or `None` if the total cost is not larger.
    pub fn cost_inverse(&self, level: f64) -> Option<f64> {
        let mut acc = 0.0;
        for (w, v) in self.breakpoints.windows(2).zip(&self.values) {
            let piece = v * v * (w[1] - w[0]);
            if acc + piece >= level && piece > 0.0 {
                return Some(w[0] + (level - acc) / (v * v));
            }
            acc += piece;
        }
        None
    }
}

/// Samples of an admissible path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePath {
    pub s: Vec<f64>,
    pub states: Vec<PhasePoint>,
}

impl AdmissiblePath {
    pub fn end(&self) -> PhasePoint {
        *self.states.last().expect("non-empty path")
    }

    /// State at `s` by linear interpolation between samples.
    pub fn at(&self, s: f64) -> PhasePoint {
        let i = self.s.partition_point(|&v| v <= s);
        if i == 0 {
            return self.states[0];
        }
        if i >= self.s.len() {
            return self.end();
        }
        let (a, b) = (self.s[i - 1], self.s[i]);
        let w = (s - a) / (b - a);
        let (za, zb) = (self.states[i - 1], self.states[i]);
        PhasePoint::new(
            za.p + w * (zb.p - za.p),
            za.y + w * (zb.y - za.y),
            za.t + w * (zb.t - za.t),
        )
    }

    /// Whether `|Δy| < |Δt|` holds at every sample after the first.
    pub fn within_light_cone(&self) -> bool {
        let z0 = self.states[0];
        self.states[1..]
            .iter()
            .all(|z| (z.y - z0.y).abs() < (z.t - z0.t).abs())
    }
}

fn path_rhs(w: f64, z: [f64; 3]) -> [f64; 3] {
    let e = energy(z[0]);
    [w * e, -z[0], -e]
}

fn rk4<const N: usize, F: Fn(&[f64; N]) -> [f64; N]>(f: &F, z: &[f64; N], h: f64) -> [f64; N] {
    let add = |a: &[f64; N], b: &[f64; N], c: f64| -> [f64; N] {
        let mut r = *a;
        for i in 0..N {
            r[i] += c * b[i];
        }
        r
    };
    let k1 = f(z);
    let k2 = f(&add(z, &k1, h / 2.0));
    let k3 = f(&add(z, &k2, h / 2.0));
    let k4 = f(&add(z, &k3, h));
    let mut r = *z;
    for i in 0..N {
        r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    r
}

/// RK4 integration of the controlled system from `z0`, with steps at most
/// `min(1e-3, T/1000)` and aligned with the control breakpoints.
pub fn integrate_path(omega: &ControlFunction, z0: PhasePoint) -> AdmissiblePath {
    let hmax = (1e-3f64).min(omega.horizon() / 1000.0);
    let mut s = vec![0.0];
    let mut states = vec![z0];
    let mut z = z0.to_array();
    for (w, &v) in omega.breakpoints.windows(2).zip(&omega.values) {
        let n = ((w[1] - w[0]) / hmax).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        let f = |z: &[f64; 3]| path_rhs(v, *z);
        for k in 1..=n {
            z = rk4(&f, &z, h);
            s.push(if k == n { w[1] } else { w[0] + k as f64 * h });
            states.push(PhasePoint::from(z));
        }
    }
    AdmissiblePath { s, states }
}

/// `Φ(ω, s) = ∫_0^s ω²`.
pub fn cost(omega: &ControlFunction, s: f64) -> f64 {
    omega.cost(s)
}

/// A normal extremal started at the origin with `λ(0) = (k, c2, c3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremal {
    pub k: f64,
    pub c2: f64,
    pub c3: f64,
    pub horizon: f64,
    pub s: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub lambda1: Vec<f64>,
    /// Running `∫ ω*²`.
    pub running_cost: Vec<f64>,
    /// Conserved energy `k² - 2 c3`.
    pub energy: f64,
    pub max_energy_drift: f64,
}

impl Extremal {
    pub fn end(&self) -> PhasePoint {
        *self.states.last().expect("non-empty")
    }

    pub fn cost(&self) -> f64 {
        *self.running_cost.last().expect("non-empty")
    }

    /// `E T - 2 c2 y(T) - 2 c3 t(T)`.
    pub fn cost_identity(&self) -> f64 {
        let z = self.end();
        self.energy * self.horizon - 2.0 * self.c2 * z.y - 2.0 * self.c3 * z.t
    }

    /// Optimal control `ω* = λ1 E(p)` at the samples.
    pub fn control_samples(&self) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.lambda1)
            .map(|(z, l)| l * energy(z.p))
            .collect()
    }

    /// Piecewise-constant control averaging `ω*` over each integration step.
    pub fn control(&self) -> Result<ControlFunction> {
        let w = self.control_samples();
        let vals = w.windows(2).map(|v| 0.5 * (v[0] + v[1])).collect();
        ControlFunction::new(self.s.clone(), vals)
    }
}

fn hamilton_rhs(c2: f64, c3: f64, z: &[f64; 5]) -> [f64; 5] {
    // z = (p, y, t, λ1, J)
    let (p, l) = (z[0], z[3]);
    let e2 = p * p + 1.0;
    let e = e2.sqrt();
    [l * e2, -p, -e, -p * l * l + c2 + c3 * p / e, l * l * e2]
}

fn energy_of(z: &[f64; 5], c2: f64, c3: f64) -> f64 {
    let e2 = z[0] * z[0] + 1.0;
    z[3] * z[3] * e2 - 2.0 * c2 * z[0] - 2.0 * c3 * e2.sqrt()
}

fn extremal_step(horizon: f64) -> f64 {
    (1e-3f64).min(horizon / 1000.0)
}

/// RK4 integration of the Hamiltonian system on `[0, T]`.
pub fn integrate_extremal(k: f64, c2: f64, c3: f64, horizon: f64) -> Result<Extremal> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    let n = (horizon / extremal_step(horizon)).ceil() as usize;
    let h = horizon / n as f64;
    let f = |z: &[f64; 5]| hamilton_rhs(c2, c3, z);
    let mut z = [0.0, 0.0, 0.0, k, 0.0];
    let e0 = k * k - 2.0 * c3;
    let mut out = Extremal {
        k,
        c2,
        c3,
        horizon,
        s: vec![0.0],
        states: vec![PhasePoint::ORIGIN],
        lambda1: vec![k],
        running_cost: vec![0.0],
        energy: e0,
        max_energy_drift: 0.0,
    };
    for i in 1..=n {
        z = rk4(&f, &z, h);
        if z.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Diverged { at: i as f64 * h });
        }
        out.s.push(if i == n { horizon } else { i as f64 * h });
        out.states.push(PhasePoint::new(z[0], z[1], z[2]));
        out.lambda1.push(z[3]);
        out.running_cost.push(z[4]);
        out.max_energy_drift = out.max_energy_drift.max((energy_of(&z, c2, c3) - e0).abs());
    }
    Ok(out)
}

/// Integrates the extremal until `t` first reaches `t1 < 0`; the last step is
/// shortened so the crossing is hit exactly.
pub fn integrate_extremal_to_time(k: f64, c2: f64, c3: f64, t1: f64) -> Result<Extremal> {
    integrate_extremal_to_time_with(k, c2, c3, t1, extremal_step(-t1))
}

fn integrate_extremal_to_time_with(k: f64, c2: f64, c3: f64, t1: f64, h: f64) -> Result<Extremal> {
    if !(t1 < 0.0) {
        return Err(Error::Unreachable);
    }
    // t' ≤ -1, so the crossing happens before s = |t1|.
    let f = |z: &[f64; 5]| hamilton_rhs(c2, c3, z);
    let mut z = [0.0, 0.0, 0.0, k, 0.0];
    let e0 = k * k - 2.0 * c3;
    let mut out = Extremal {
        k,
        c2,
        c3,
        horizon: 0.0,
        s: vec![0.0],
        states: vec![PhasePoint::ORIGIN],
        lambda1: vec![k],
        running_cost: vec![0.0],
        energy: e0,
        max_energy_drift: 0.0,
    };
    let mut s = 0.0;
    let max_steps = (-t1 / h).ceil() as usize + 2;
    for _ in 0..max_steps {
        let mut next = rk4(&f, &z, h);
        let mut step = h;
        let last = next[2] <= t1;
        if last {
            // t is monotone in the step size; bracket and refine with secant steps.
            let (mut lo, mut hi) = (0.0, h);
            let (mut flo, mut fhi) = (z[2] - t1, next[2] - t1);
            for _ in 0..60 {
                let mid = if (fhi - flo).abs() > 0.0 {
                    (lo - flo * (hi - lo) / (fhi - flo)).clamp(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))
                } else {
                    0.5 * (lo + hi)
                };
                let cand = rk4(&f, &z, mid);
                let fm = cand[2] - t1;
                if fm > 0.0 {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                    fhi = fm;
                }
                if fm.abs() <= 1e-15 * (1.0 + t1.abs()) || hi - lo < 1e-16 {
                    break;
                }
            }
            step = if flo.abs() < fhi.abs() { lo } else { hi };
            next = rk4(&f, &z, step);
            next[2] = t1;
        }
        z = next;
        s += step;
        if z.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Diverged { at: s });
        }
        out.s.push(s);
        out.states.push(PhasePoint::new(z[0], z[1], z[2]));
        out.lambda1.push(z[3]);
        out.running_cost.push(z[4]);
        out.max_energy_drift = out.max_energy_drift.max((energy_of(&z, c2, c3) - e0).abs());
        if last {
            out.horizon = s;
            return Ok(out);
        }
    }
    Err(Error::NonConvergence("extremal never reached the target time".into()))
}

/// Whether `z1` can be reached from `z0` along some admissible path.
pub fn reachable(z0: PhasePoint, z1: PhasePoint) -> bool {
    let w = lorentz_relative(z0, z1);
    w.t < 0.0 && w.y.abs() < -w.t
}

/// Settings for [`value_function`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueConfig {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub transcription_intervals: usize,
    /// Relative gap above which shooting and transcription are flagged.
    pub gap_flag: f64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            max_newton: 60,
            transcription_intervals: 200,
            gap_flag: 0.05,
        }
    }
}

/// Result of a value-function query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub psi: f64,
    /// Target in the frame where the start is the origin.
    pub reduced_target: PhasePoint,
    pub k: f64,
    pub c2: f64,
    pub c3: f64,
    pub horizon: f64,
    pub residual: f64,
    /// `∫ ω*²` by quadrature along the extremal.
    pub quadrature_cost: f64,
    pub transcription_cost: f64,
    pub transcription_residual: f64,
    pub relative_gap: f64,
    pub gap_flagged: bool,
    pub converged_starts: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Shot {
    k: f64,
    c2: f64,
    residual: f64,
    cost: f64,
    quad: f64,
    horizon: f64,
}

fn shoot_residual(k: f64, c2: f64, target: PhasePoint) -> Result<([f64; 2], Extremal)> {
    let ex = integrate_extremal_to_time(k, c2, 0.5 * k * k, target.t)?;
    let end = ex.end();
    Ok(([end.p - target.p, end.y - target.y], ex))
}

fn newton(k0: f64, c20: f64, target: PhasePoint, cfg: &ValueConfig) -> Option<Shot> {
    let (mut k, mut c2) = (k0, c20);
    let (mut r, _) = shoot_residual(k, c2, target).ok()?;
    let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
    for _ in 0..cfg.max_newton {
        if norm(&r) <= cfg.newton_tol {
            break;
        }
        let dk = 1e-7 * (1.0 + k.abs());
        let dc = 1e-7 * (1.0 + c2.abs());
        let (rk, _) = shoot_residual(k + dk, c2, target).ok()?;
        let (rc, _) = shoot_residual(k, c2 + dc, target).ok()?;
        let j = [
            [(rk[0] - r[0]) / dk, (rc[0] - r[0]) / dc],
            [(rk[1] - r[1]) / dk, (rc[1] - r[1]) / dc],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 1e-300) {
            return None;
        }
        let sk = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let sc = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            if let Ok((rn, _)) = shoot_residual(k + step * sk, c2 + step * sc, target) {
                if norm(&rn) < norm(&r) {
                    k += step * sk;
                    c2 += step * sc;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (r, ex) = shoot_residual(k, c2, target).ok()?;
    Some(Shot {
        k,
        c2,
        residual: norm(&r),
        cost: -2.0 * c2 * target.y - k * k * target.t,
        quad: ex.cost(),
        horizon: ex.horizon,
    })
}

/// First-order guess from the small-momentum limit `p ≈ k s + c2 s²/2`, `s ≈ |t1|`.
fn linear_guess(target: PhasePoint) -> (f64, f64) {
    let tt = -target.t;
    // p1 = k T + c2 T²/2, -y1 = k T²/2 + c2 T³/6
    let (a, b, c, d) = (tt, tt * tt / 2.0, tt * tt / 2.0, tt.powi(3) / 6.0);
    let det = a * d - b * c;
    let (r1, r2) = (target.p, -target.y);
    ((d * r1 - b * r2) / det, (a * r2 - c * r1) / det)
}

/// Shooting on normal extremals in the reduced frame.
///
/// The final time is free, so the maximised Hamiltonian vanishes and
/// `c3 = k²/2`; the first crossing of `t = t1` closes the horizon and a damped
/// Newton iteration solves `p(T) = p1`, `y(T) = y1` for `(k, c2)` from nine
/// starts. Returns the best converged shot.
fn shoot(target: PhasePoint, cfg: &ValueConfig) -> (Option<Shot>, usize, f64) {
    let (kl, cl) = linear_guess(target);
    let factors = [0.5, 1.0, 2.0];
    let starts: Vec<(f64, f64)> = factors
        .iter()
        .flat_map(|&a| factors.iter().map(move |&b| (kl * a, cl * b)))
        .collect();
    let shots: Vec<Option<Shot>> = starts
        .par_iter()
        .map(|&(k, c)| newton(k, c, target, cfg))
        .collect();
    let best_residual = shots
        .iter()
        .flatten()
        .map(|s| s.residual)
        .fold(f64::INFINITY, f64::min);
    let tol = cfg.newton_tol.max(1e-9);
    let mut converged: Vec<Shot> = shots.into_iter().flatten().filter(|s| s.residual <= tol).collect();
    let n = converged.len();
    converged.sort_by(|a, b| {
        if (a.cost - b.cost).abs() <= 1e-9 {
            a.k.abs().total_cmp(&b.k.abs())
        } else {
            a.cost.total_cmp(&b.cost)
        }
    });
    (converged.first().copied(), n, best_residual)
}

/// `Ψ(z0; z1)`, computed in the frame where `z0` is the origin.
pub fn value_function(z0: PhasePoint, z1: PhasePoint, cfg: &ValueConfig) -> Result<ValueResult> {
    if !reachable(z0, z1) {
        return Err(Error::Unreachable);
    }
    let target = lorentz_relative(z0, z1);
    let trans = direct_transcription(target, cfg.transcription_intervals);
    let (tcost, tres) = match &trans {
        Ok(t) => (t.cost, t.residual),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let (best, n_conv, best_res) = shoot(target, cfg);
    let Some(shot) = best else {
        return Err(Error::ShootingFailed {
            residual: best_res,
            transcription_cost: tcost,
        });
    };
    let psi = shot.cost.max(0.0);
    let mut diagnostics = Vec::new();
    if let Err(e) = &trans {
        diagnostics.push(format!("transcription cross-check unavailable: {e}"));
    }
    let gap = (psi - tcost).abs() / psi.max(1e-12);
    let flagged = gap > cfg.gap_flag && (psi - tcost).abs() > 1e-6;
    if flagged {
        diagnostics.push(format!(
            "shooting cost {psi:.6e} and transcription cost {tcost:.6e} differ by {:.1}%",
            100.0 * gap
        ));
    }
    if tcost < psi - 1e-3 {
        diagnostics.push("transcription undercuts the extremal: the extremal found is not the minimiser".into());
    }
    Ok(ValueResult {
        psi,
        reduced_target: target,
        k: shot.k,
        c2: shot.c2,
        c3: 0.5 * shot.k * shot.k,
        horizon: shot.horizon,
        residual: shot.residual,
        quadrature_cost: shot.quad,
        transcription_cost: tcost,
        transcription_residual: tres,
        relative_gap: gap,
        gap_flagged: flagged,
        converged_starts: n_conv,
        diagnostics,
    })
}

/// Optimal extremal for a value query, re-integrated for inspection.
pub fn optimal_extremal(result: &ValueResult) -> Result<Extremal> {
    integrate_extremal_to_time(result.k, result.c2, result.c3, result.reduced_target.t)
}

/// Integrates the extremal's control from `z0` and returns the end point.
pub fn replay_from(result: &ValueResult, z0: PhasePoint) -> Result<PhasePoint> {
    let t1 = result.reduced_target.t;
    let ex = integrate_extremal_to_time_with(result.k, result.c2, result.c3, t1, extremal_step(-t1) / 8.0)?;
    let path = integrate_path(&ex.control()?, z0);
    Ok(path.end())
}

/// Outcome of [`direct_transcription`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub control: ControlFunction,
    pub cost: f64,
    pub residual: f64,
    pub penalty_rounds: usize,
    pub iterations: usize,
}

const GAUSS_X: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_9,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
const GAUSS_W: [f64; 4] = [
    0.173_927_422_568_726_93,
    0.326_072_577_431_273_07,
    0.326_072_577_431_273_07,
    0.173_927_422_568_726_93,
];

/// Transcribed problem in lab time `σ = -t ∈ [0, |t1|]`: `dp/dσ = u`,
/// `dy/dσ = -p/E`, cost `∫ u²/E dσ`, `u` piecewise constant.
struct Nlp {
    n: usize,
    h: f64,
    p1: f64,
    y1: f64,
}

impl Nlp {
    /// Returns `(cost, p_end, y_end)` and their gradients.
    fn eval(&self, u: &[f64]) -> (f64, f64, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, h) = (self.n, self.h);
        let mut cost = 0.0;
        let mut yend = 0.0;
        // per-piece sums of φ'(p) at the nodes (for the suffix terms) and the
        // same weighted by the node position (for the own-piece term)
        let mut sfx_c = vec![0.0; n];
        let mut own_c = vec![0.0; n];
        let mut sfx_y = vec![0.0; n];
        let mut own_y = vec![0.0; n];
        let mut direct_c = vec![0.0; n];
        let mut p0 = 0.0;
        for i in 0..n {
            let ui = u[i];
            for q in 0..4 {
                let p = p0 + ui * GAUSS_X[q] * h;
                let e = energy(p);
                let w = GAUSS_W[q] * h;
                let inv_e3 = 1.0 / (e * e * e);
                cost += w * ui * ui / e;
                yend -= w * p / e;
                // d(u²/E)/dp = -u² p / E³ ; d(-p/E)/dp = -1/E³
                let dc = -w * ui * ui * p * inv_e3;
                let dy = -w * inv_e3;
                sfx_c[i] += dc;
                sfx_y[i] += dy;
                own_c[i] += dc * GAUSS_X[q] * h;
                own_y[i] += dy * GAUSS_X[q] * h;
                direct_c[i] += w * 2.0 * ui / e;
            }
            p0 += ui * h;
        }
        let mut gc = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let gp = vec![h; n];
        let (mut tail_c, mut tail_y) = (0.0, 0.0);
        for m in (0..n).rev() {
            gc[m] = direct_c[m] + own_c[m] + h * tail_c;
            gy[m] = own_y[m] + h * tail_y;
            tail_c += sfx_c[m];
            tail_y += sfx_y[m];
        }
        (cost, p0, yend, gc, gp, gy)
    }

    fn objective(&self, u: &[f64], mu: f64) -> (f64, Vec<f64>) {
        let (c, p, y, gc, gp, gy) = self.eval(u);
        let (rp, ry) = (p - self.p1, y - self.y1);
        let f = c + mu * (rp * rp + ry * ry);
        let g = (0..self.n)
            .map(|m| gc[m] + 2.0 * mu * (rp * gp[m] + ry * gy[m]))
            .collect();
        (f, g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking; returns the iteration count.
fn lbfgs<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, x: &mut Vec<f64>, gtol: f64, max_iter: usize) -> usize {
    let m = 8;
    let (mut fx, mut g) = f(x);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for it in 0..max_iter {
        let gn = dot(&g, &g).sqrt();
        if gn <= gtol {
            return it;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (fn_, gn_) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else {
            return it;
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn_.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == m {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        *x = xn;
        let stalled = (fx - fn_).abs() <= 1e-15 * (1.0 + fx.abs());
        fx = fn_;
        g = gn_;
        if stalled {
            return it + 1;
        }
    }
    max_iter
}

/// Minimum-energy control to `target` (reduced frame) over `n` lab-time pieces,
/// by quadratic-penalty continuation (`μ ×10` per round, six rounds).
pub fn direct_transcription(target: PhasePoint, n: usize) -> Result<Transcription> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!("transcription needs at least 10 intervals, got {n}")));
    }
    if !reachable(PhasePoint::ORIGIN, target) {
        return Err(Error::Unreachable);
    }
    let tt = -target.t;
    let nlp = Nlp {
        n,
        h: tt / n as f64,
        p1: target.p,
        y1: target.y,
    };
    // start from the small-momentum optimum u(σ) = k + c2 σ
    let (kl, cl) = linear_guess(target);
    let mut u: Vec<f64> = (0..n).map(|i| kl + cl * (i as f64 + 0.5) * nlp.h).collect();
    let mut mu = 100.0;
    let mut iters = 0;
    for _ in 0..6 {
        iters += lbfgs(|x| nlp.objective(x, mu), &mut u, 1e-10, 5000);
        mu *= 10.0;
    }
    let (cost, p, y, ..) = nlp.eval(&u);
    let residual = (p - target.p).hypot(y - target.y);
    if !(residual <= 1e-4) || !cost.is_finite() {
        return Err(Error::NonConvergence(format!(
            "penalty continuation stalled with endpoint residual {residual:.3e}"
        )));
    }
    // σ-pieces map to s-pieces of length ∫ dσ / E with the same constant value
    let mut bp = vec![0.0];
    let mut p0 = 0.0;
    for &ui in &u {
        let mut ds = 0.0;
        for q in 0..4 {
            ds += GAUSS_W[q] * nlp.h / energy(p0 + ui * GAUSS_X[q] * nlp.h);
        }
        bp.push(bp.last().unwrap() + ds);
        p0 += ui * nlp.h;
    }
    Ok(Transcription {
        control: ControlFunction::new(bp, u)?,
        cost,
        residual,
        penalty_rounds: 6,
        iterations: iters,
    })
}

/// End point reached from `z0` by a transcription control.
pub fn transcription_end(t: &Transcription, z0: PhasePoint) -> PhasePoint {
    integrate_path(&t.control, z0).end()
}

/// Maps an origin-frame path point to the frame starting at `z0`.
pub fn translate(z0: PhasePoint, z: PhasePoint) -> PhasePoint {
    lorentz_compose(z0, z)
}
