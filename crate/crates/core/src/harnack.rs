//! Harnack chains along admissible paths and empirical Harnack constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{integrate_path, AdmissiblePath, ControlFunction};
use crate::error::{Error, Result};
use crate::geometry::{lorentz_relative, to_velocity, PhasePoint, Region};
use crate::pde::{Grid, Marcher, Problem, Variant};

/// `k0 = 2 ln(3/2)`.
pub fn default_k0() -> f64 {
    2.0 * 1.5f64.ln()
}

/// Constants of the chain argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub k0: f64,
    pub theta: f64,
    /// Harnack constant, if one is known or estimated.
    pub c_h: Option<f64>,
    /// Reject chains whose path violates `t0 - t(s) ≤ θ⁴/4`.
    pub enforce_time_hypothesis: bool,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            k0: default_k0(),
            theta: 0.5,
            c_h: None,
            enforce_time_hypothesis: true,
        }
    }
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return Err(Error::Domain { what: "k0", value: self.k0 });
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Domain { what: "theta", value: self.theta });
        }
        if let Some(c) = self.c_h {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Domain { what: "C_H", value: c });
            }
        }
        Ok(())
    }
}

/// `k = max{j : Φ(ω, s) > j k0²}` and the split times `σ_1, …, σ_{k+1} = s`.
pub fn split_times(omega: &ControlFunction, s: f64, k0: f64) -> (usize, Vec<f64>) {
    let k0sq = k0 * k0;
    let phi = omega.cost(s);
    let mut k = (phi / k0sq).floor() as usize;
    while k > 0 && !(phi > k as f64 * k0sq) {
        k -= 1;
    }
    while phi > (k + 1) as f64 * k0sq {
        k += 1;
    }
    let mut sigma: Vec<f64> = (1..=k).map(|j| level_exit(omega, j as f64 * k0sq).min(s)).collect();
    sigma.push(s);
    (k, sigma)
}

/// `inf{σ > 0 : ∫_0^σ ω² > level}`: the end of any flat stretch at `level`.
fn level_exit(omega: &ControlFunction, level: f64) -> f64 {
    let mut acc = 0.0;
    for (w, v) in omega.breakpoints.windows(2).zip(&omega.values) {
        let piece = v * v * (w[1] - w[0]);
        if piece > 0.0 && acc + piece > level {
            return (w[0] + (level - acc) / (v * v)).max(w[0]);
        }
        acc += piece;
    }
    omega.horizon()
}

/// First failed inequality in a [`ConeReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeViolation {
    pub s: f64,
    pub component: String,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    /// `√(2/3) θ² r²`.
    pub s_max: f64,
    pub samples_checked: usize,
    /// Running cost exceeded `k0²` inside `[0, s_max]`; samples beyond that are not checked.
    pub cost_gate_hit: bool,
    pub first_violation: Option<ConeViolation>,
}

impl ConeReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `|p| ≤ √s`, `|y| ≤ s^{3/2}`, `0 ≤ -t ≤ θ² r²` (relative to the start)
/// at every sample with `s ≤ √(2/3) θ² r²` and running cost at most `k0²`.
pub fn cone_check(
    path: &AdmissiblePath,
    omega: &ControlFunction,
    r: f64,
    theta: f64,
    k0: f64,
) -> Result<ConeReport> {
    if !(r > 0.0 && r < 0.5) {
        return Err(Error::Domain { what: "r", value: r });
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain { what: "theta", value: theta });
    }
    let s_max = (2.0f64 / 3.0).sqrt() * theta * theta * r * r;
    let z0 = path.states[0];
    let mut rep = ConeReport {
        s_max,
        samples_checked: 0,
        cost_gate_hit: false,
        first_violation: None,
    };
    let tol = 1e-12;
    for (&s, &z) in path.s.iter().zip(&path.states) {
        if s > s_max {
            break;
        }
        if omega.cost(s) > k0 * k0 + tol {
            rep.cost_gate_hit = true;
            break;
        }
        rep.samples_checked += 1;
        let w = lorentz_relative(z0, z);
        let checks = [
            ("p", w.p.abs(), s.sqrt()),
            ("y", w.y.abs(), s.powf(1.5)),
            ("t", -w.t, theta * theta * r * r),
            ("t sign", w.t, 0.0),
        ];
        if let Some((c, v, b)) = checks.iter().find(|(_, v, b)| *v > b + tol) {
            rep.first_violation = Some(ConeViolation {
                s,
                component: (*c).into(),
                value: *v,
                bound: *b,
            });
            break;
        }
    }
    Ok(rep)
}

/// One link of a chain, from `γ(σ_j)` to `γ(σ_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub from: f64,
    pub to: f64,
    pub cost: f64,
    /// `r_j = √(t_j - t_{j+1}) / θ`.
    pub radius: f64,
    /// Whether `γ(σ_{j+1})` lies in the cone of radius `r_j` based at `γ(σ_j)`.
    pub in_cone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackChain {
    pub spec: ChainSpec,
    pub k: usize,
    /// `σ_0 = 0, σ_1, …, σ_{k+1} = s`.
    pub sigma: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub links: Vec<ChainLink>,
    /// `Φ(ω, s)`.
    pub phi: f64,
    /// `Φ / k0² + 1`.
    pub exponent: f64,
    /// `t0 - t(s)`.
    pub elapsed: f64,
    /// `t0 - t(s) ≤ θ⁴/4`.
    pub time_hypothesis: bool,
    /// `C_H^{k+1}` and `C_H^{Φ/k0² + 1}` when `C_H` is known.
    pub chain_bound: Option<f64>,
    pub exponent_bound: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Splits the path driven by `omega` from `z0` up to `s` into links of cost at most `k0²`.
pub fn build_chain(omega: &ControlFunction, z0: PhasePoint, s: f64, spec: ChainSpec) -> Result<HarnackChain> {
    spec.validate()?;
    if !(s > 0.0 && s <= omega.horizon() * (1.0 + 1e-12)) {
        return Err(Error::Domain { what: "s", value: s });
    }
    let s = s.min(omega.horizon());
    let (k, tail) = split_times(omega, s, spec.k0);
    let mut sigma = vec![0.0];
    sigma.extend(tail);
    let refined = omega.refined(&sigma, s)?;
    let path = integrate_path(&refined, z0);
    let points: Vec<PhasePoint> = sigma
        .iter()
        .map(|&sj| {
            let i = path
                .s
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - sj).abs().total_cmp(&(b.1 - sj).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            path.states[i]
        })
        .collect();
    let phi = omega.cost(s);
    let exponent = phi / (spec.k0 * spec.k0) + 1.0;
    let elapsed = z0.t - points.last().expect("non-empty").t;
    let bound = spec.theta.powi(4) / 4.0;
    let time_hypothesis = elapsed <= bound;
    let mut diagnostics = Vec::new();
    if !time_hypothesis {
        let msg = format!("time hypothesis fails: t0 - t(s) = {elapsed:.6} > θ⁴/4 = {bound:.6}");
        if spec.enforce_time_hypothesis {
            return Err(Error::Hypothesis(msg));
        }
        diagnostics.push(msg);
    }
    let mut links = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let (a, b) = (points[j], points[j + 1]);
        let cost = omega.cost(sigma[j + 1]) - omega.cost(sigma[j]);
        let dt = a.t - b.t;
        let radius = dt.max(0.0).sqrt() / spec.theta;
        let in_cone = radius > 0.0
            && Region::cone(a, radius, spec.theta)
                .map(|reg| reg.contains(b))
                .unwrap_or(false);
        links.push(ChainLink {
            from: sigma[j],
            to: sigma[j + 1],
            cost,
            radius,
            in_cone,
        });
    }
    Ok(HarnackChain {
        spec,
        k,
        sigma,
        points,
        links,
        phi,
        exponent,
        elapsed,
        time_hypothesis,
        chain_bound: spec.c_h.map(|c| c.powi(k as i32 + 1)),
        exponent_bound: spec.c_h.map(|c| c.powf(exponent)),
        diagnostics,
    })
}

/// Settings for [`estimate_harnack_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnackConfig {
    pub r: f64,
    pub theta: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    pub modes: usize,
}

impl HarnackConfig {
    pub fn new(r: f64, theta: f64, ensemble_size: usize, seed: u64) -> Self {
        Self {
            r,
            theta,
            ensemble_size,
            seed,
            modes: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 0.5) {
            return Err(Error::Domain { what: "r", value: self.r });
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Domain { what: "theta", value: self.theta });
        }
        if self.ensemble_size == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(())
    }

    /// Velocity-form grid covering the cylinder of radius `r` at the origin
    /// plus the distance its data can travel along `y` in time `r²`.
    pub fn grid(&self) -> Result<Grid> {
        let r = self.r;
        let dx = (r / 25.0).min(0.02);
        let dy = r.powi(3) / 32.0;
        let x_max = (3.0 * r).min(0.95);
        let y_max = r.powi(3) + x_max * r * r + 4.0 * dy;
        Grid::symmetric(x_max, dx, y_max, dy)
    }
}

/// Empirical Harnack ratios for one `(r, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackEstimate {
    pub config: HarnackConfig,
    /// `sup_S f / f(0)` per retained member; member 0 is the constant datum.
    pub ratios: Vec<f64>,
    /// Members dropped because `f(0) < 1e-12`.
    pub discarded: usize,
    pub c_h: f64,
}

/// Random non-negative datum: a clipped trigonometric polynomial.
fn random_datum(cfg: &HarnackConfig, member: usize) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(member as u64);
    let tau = std::f64::consts::TAU;
    let modes: Vec<[f64; 4]> = (0..cfg.modes)
        .map(|_| {
            [
                rng.random::<f64>() / cfg.modes as f64,
                rng.random::<f64>() * tau / cfg.r,
                rng.random::<f64>() * tau / cfg.r.powi(3),
                rng.random::<f64>() * tau,
            ]
        })
        .collect();
    move |x, y| {
        let v: f64 = 0.5 + modes.iter().map(|m| m[0] * (m[1] * x + m[2] * y + m[3]).cos()).sum::<f64>();
        v.max(0.0)
    }
}

fn member_ratio(cfg: &HarnackConfig, grid: Grid, initial: &[f64]) -> Result<Option<f64>> {
    let (r, th) = (cfg.r, cfg.theta);
    let mut problem = Problem::cauchy(grid, Variant::Original);
    problem.t0 = -r * r;
    let mut m = Marcher::new(problem, initial, None)?;
    let xs = to_velocity(th * r);
    let ys = (th * r).powi(3);
    let slab_i: Vec<usize> = (0..grid.nx).filter(|&i| grid.x(i).abs() < xs).collect();
    let slab_j: Vec<usize> = (0..grid.ny).filter(|&j| grid.y(j).abs() < ys).collect();
    let (lo, hi) = (-th * th * r * r, -th * th * r * r / 2.0);
    let mut sup = f64::NEG_INFINITY;
    m.advance_observed(0.0, |t, mm| {
        if t >= lo - 1e-12 && t <= hi + 1e-12 {
            for &i in &slab_i {
                for &j in &slab_j {
                    sup = sup.max(mm.value(i, j));
                }
            }
        }
    })?;
    let centre = m.value(grid.nx / 2, grid.ny / 2);
    if centre < 1e-12 {
        return Ok(None);
    }
    if !sup.is_finite() {
        return Err(Error::InvalidConfig("grid step too coarse to sample the slab".into()));
    }
    Ok(Some(sup / centre))
}

/// Largest `sup_{S_{θr}} f / f(0)` over an ensemble of non-negative solutions
/// of `ℒ f = 0` started at `t = -r²` on a box containing the cylinder `H_r`.
///
/// The ensemble always includes the constant datum, so the estimate is at least 1.
pub fn estimate_harnack_constant(cfg: &HarnackConfig) -> Result<HarnackEstimate> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let outcomes: Vec<Result<Option<f64>>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                Ok(Some(1.0))
            } else {
                let datum = random_datum(cfg, i);
                member_ratio(cfg, grid, &grid.sample(|x, y| datum(x, y)))
            }
        })
        .collect();
    let mut ratios = Vec::with_capacity(cfg.ensemble_size);
    let mut discarded = 0;
    for o in outcomes {
        match o? {
            Some(v) => ratios.push(v),
            None => discarded += 1,
        }
    }
    let c_h = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(HarnackEstimate {
        config: *cfg,
        ratios,
        discarded,
        c_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k0sq() -> f64 {
        default_k0().powi(2)
    }

    #[test]
    fn split_unit_control() {
        let w = ControlFunction::constant(1.0, 2.0).unwrap();
        let (k, sigma) = split_times(&w, 2.0, default_k0());
        assert_eq!(k, 3);
        let expect = [k0sq(), 2.0 * k0sq(), 3.0 * k0sq(), 2.0];
        for (a, b) in sigma.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((k0sq() - 0.657_607).abs() < 1e-6);
        let (k2, _) = split_times(&ControlFunction::constant(2.0, 2.0).unwrap(), 2.0, default_k0());
        assert_eq!(k2, 12);
        let (k0, s0) = split_times(&w, 0.5, default_k0());
        assert_eq!((k0, s0), (0, vec![0.5]));
    }

    #[test]
    fn split_skips_flat_stretches() {
        let w = ControlFunction::new(vec![0.0, 1.0, 2.0, 3.0], vec![k0sq().sqrt(), 0.0, 1.0]).unwrap();
        let (k, sigma) = split_times(&w, 3.0, default_k0());
        assert_eq!(k, 2);
        assert!((sigma[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cone_examples() {
        let (r, th) = (0.4, 0.5);
        let s_max = (2.0f64 / 3.0).sqrt() * th * th * r * r;
        let z0 = PhasePoint::new(0.3, -0.2, 1.0);
        let zero = ControlFunction::constant(0.0, 1.0).unwrap();
        let rep = cone_check(&integrate_path(&zero, z0), &zero, r, th, default_k0()).unwrap();
        assert!(rep.passed() && rep.samples_checked > 10 && !rep.cost_gate_hit);
        let w = ControlFunction::constant(default_k0() / s_max.sqrt(), s_max).unwrap();
        let rep = cone_check(&integrate_path(&w, z0), &w, r, th, default_k0()).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let big = ControlFunction::constant(40.0, 1.0).unwrap();
        let rep = cone_check(&integrate_path(&big, z0), &big, r, th, default_k0()).unwrap();
        assert!(rep.cost_gate_hit);
        assert!(cone_check(&integrate_path(&zero, z0), &zero, 0.6, th, default_k0()).is_err());
    }

    #[test]
    fn chain_examples() {
        let spec = ChainSpec::default();
        let zero = ControlFunction::constant(0.0, 0.01).unwrap();
        let c = build_chain(&zero, PhasePoint::ORIGIN, 0.01, spec).unwrap();
        assert_eq!((c.k, c.exponent), (0, 1.0));

        let one = ControlFunction::constant(1.0, 2.0).unwrap();
        assert!(matches!(build_chain(&one, PhasePoint::ORIGIN, 2.0, spec), Err(Error::Hypothesis(_))));
        let loose = ChainSpec { enforce_time_hypothesis: false, ..spec };
        let c = build_chain(&one, PhasePoint::ORIGIN, 2.0, loose).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.links.len(), 4);
        assert_eq!(c.exponent, 2.0 / k0sq() + 1.0);
        assert!((c.k as f64) < c.phi / k0sq());
        assert!(c.links.iter().all(|l| l.cost <= k0sq() + 1e-12 && l.in_cone));
        assert!(!c.time_hypothesis && !c.diagnostics.is_empty());

        let fast = ControlFunction::constant(30.0, 0.01).unwrap();
        let c = build_chain(&fast, PhasePoint::new(0.1, 0.2, 0.3), 0.01, spec).unwrap();
        assert!(c.time_hypothesis);
        let (k, sigma) = split_times(&fast, 0.01, spec.k0);
        assert_eq!(c.k, k);
        assert_eq!(&c.sigma[1..], &sigma[..]);
        assert!(c.links.iter().all(|l| l.in_cone));
    }

    #[test]
    fn harnack_estimate_basics() {
        let est = estimate_harnack_constant(&HarnackConfig::new(0.5, 0.5, 6, 11)).unwrap();
        assert_eq!(est.ratios[0], 1.0);
        assert!(est.c_h >= 1.0 && est.c_h.is_finite());
        assert!(est.ratios.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(estimate_harnack_constant(&HarnackConfig::new(0.7, 0.5, 4, 1)).is_err());
        assert!(matches!(
            estimate_harnack_constant(&HarnackConfig::new(0.5, 0.5, 0, 1)),
            Err(Error::EmptyEnsemble)
        ));
    }
}
