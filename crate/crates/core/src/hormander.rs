//! Hörmander vector fields of the relativistic operator in momentum dimension
//! `d ≤ 3`.
//!
//! Coordinates are ordered `(p_1..p_d, y_1..y_d, t)`. The diffusion fields are
//! `X_j = Σ_k (δ_jk + q_j q_k) ∂_{p_k}` with `q = p / sqrt(1 + E)` and
//! `E = sqrt(|p|² + 1)`; the drift is `Y = p·∇_y + E ∂_t`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dual::{partial, Dual, Scalar};
use crate::error::{Error, Result};
use crate::geometry::{lorentz_factor, PhasePoint};

pub const MAX_DIM: usize = 3;

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidConfig(format!(
            "momentum dimension must be 1, 2 or 3, got {d}"
        )));
    }
    Ok(())
}

fn energy_of<S: Scalar>(p: &[S]) -> S {
    let mut s = S::cst(1.0);
    for &v in p {
        s = s + v * v;
    }
    s.sqrt()
}

fn q_generic<S: Scalar>(p: &[S]) -> Vec<S> {
    let scale = (S::cst(1.0) + energy_of(p)).sqrt();
    p.iter().map(|&v| v / scale).collect()
}

fn x_entry<S: Scalar>(q: &[S], j: usize, k: usize) -> S {
    let delta = if j == k { 1.0 } else { 0.0 };
    S::cst(delta) + q[j] * q[k]
}

/// `q(p) = p / sqrt(1 + sqrt(|p|² + 1))`.
pub fn q_of_p(p: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(q_generic(p.as_slice()))
}

/// The symmetric matrix `I + q⊗q`, whose square is `I + p⊗p`.
pub fn build_x_matrix(p: &DVector<f64>) -> DMatrix<f64> {
    let q = q_of_p(p);
    DMatrix::identity(p.len(), p.len()) + &q * q.transpose()
}

/// Inverse of [`build_x_matrix`] in closed form, `I - q⊗q / (1 + |q|²)`.
pub fn x_matrix_inverse(p: &DVector<f64>) -> DMatrix<f64> {
    let q = q_of_p(p);
    let n2 = q.norm_squared();
    DMatrix::identity(p.len(), p.len()) - (&q * q.transpose()) / (1.0 + n2)
}

/// Bracket matrix `M = (X_1..X_d, [X_1,Y]..[X_d,Y], Y)` with fields as columns.
pub fn bracket_matrix(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len();
    let n = 2 * d + 1;
    let x = build_x_matrix(p);
    let e = p.norm_squared().sqrt_one_plus();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..d {
        for k in 0..d {
            m[(k, j)] = x[(j, k)];
            m[(d + k, d + j)] = x[(j, k)];
        }
        m[(2 * d, d + j)] = p[j];
        m[(d + j, 2 * d)] = p[j];
    }
    m[(2 * d, 2 * d)] = e;
    m
}

trait SqrtOnePlus {
    fn sqrt_one_plus(self) -> f64;
}

impl SqrtOnePlus for f64 {
    fn sqrt_one_plus(self) -> f64 {
        (1.0 + self).sqrt()
    }
}

/// The vector fields available for bracket and invariance computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Diffusion field `X_j`.
    X(usize),
    /// Drift `Y = p·∇_y + E ∂_t`.
    Y,
    /// Closed form of `[X_j, Y] = Σ_k (δ_jk + q_j q_k) ∂_{y_k} + p_j ∂_t`.
    BracketXY(usize),
    /// `E^{1/2} ∂_p`, the diffusion field of the lab-time operator (d = 1).
    XTilde,
    /// `(p/E) ∂_p + (p/E) ∂_y + ∂_t`, the drift of the lab-time operator (d = 1).
    YTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorField {
    pub d: usize,
    pub kind: FieldKind,
}

impl VectorField {
    pub fn new(d: usize, kind: FieldKind) -> Result<Self> {
        check_dim(d)?;
        match kind {
            FieldKind::X(j) | FieldKind::BracketXY(j) if j >= d => Err(Error::InvalidConfig(
                format!("field index {j} out of range for d = {d}"),
            )),
            FieldKind::XTilde | FieldKind::YTilde if d != 1 => Err(Error::InvalidConfig(
                "the lab-time fields are only defined for d = 1".into(),
            )),
            _ => Ok(Self { d, kind }),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        2 * self.d + 1
    }

    pub(crate) fn eval<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let d = self.d;
        let p = &z[..d];
        let mut out = vec![S::cst(0.0); 2 * d + 1];
        match self.kind {
            FieldKind::X(j) => {
                let q = q_generic(p);
                for k in 0..d {
                    out[k] = x_entry(&q, j, k);
                }
            }
            FieldKind::Y => {
                out[d..2 * d].copy_from_slice(p);
                out[2 * d] = energy_of(p);
            }
            FieldKind::BracketXY(j) => {
                let q = q_generic(p);
                for k in 0..d {
                    out[d + k] = x_entry(&q, j, k);
                }
                out[2 * d] = p[j];
            }
            FieldKind::XTilde => {
                out[0] = energy_of(p).sqrt();
            }
            FieldKind::YTilde => {
                let v = p[0] / energy_of(p);
                out[0] = v;
                out[1] = v;
                out[2] = S::cst(1.0);
            }
        }
        out
    }

    /// Coefficients of the field at `z`.
    pub fn coefficients(&self, z: &[f64]) -> Vec<f64> {
        self.eval(z)
    }

    /// Applies the field to a scalar function given its exact derivatives.
    fn apply<S, F>(&self, f: &F, z: &[S]) -> S
    where
        S: Scalar,
        F: Fn(&[Dual<S>]) -> Dual<S>,
    {
        let c = self.eval(z);
        let mut acc = S::cst(0.0);
        for (k, &ck) in c.iter().enumerate() {
            if ck.value() != 0.0 {
                acc = acc + ck * partial(f, z, k);
            }
        }
        acc
    }
}

/// Lie bracket `[V, W]` at `z` by central differences with the default step
/// `h = 1e-5 · max(1, |z|)`.
pub fn lie_bracket(v: &VectorField, w: &VectorField, z: &[f64]) -> Result<Vec<f64>> {
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    lie_bracket_with_step(v, w, z, 1e-5 * norm.max(1.0))
}

/// Lie bracket by central differences with an explicit step.
pub fn lie_bracket_with_step(
    v: &VectorField,
    w: &VectorField,
    z: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if v.d != w.d || z.len() != v.ambient_dim() {
        return Err(Error::InvalidConfig(
            "bracket fields and point must share one dimension".into(),
        ));
    }
    let n = z.len();
    let jac = |field: &VectorField| -> Vec<Vec<f64>> {
        // jac[k][i] = ∂_k field^i
        (0..n)
            .map(|k| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[k] += h;
                zm[k] -= h;
                let (fp, fm) = (field.coefficients(&zp), field.coefficients(&zm));
                fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect()
    };
    let (jv, jw) = (jac(v), jac(w));
    let (cv, cw) = (v.coefficients(z), w.coefficients(z));
    Ok((0..n)
        .map(|i| (0..n).map(|k| cv[k] * jw[k][i] - cw[k] * jv[k][i]).sum())
        .collect())
}

/// Lie bracket with exact derivatives of the coefficients.
pub fn lie_bracket_exact(v: &VectorField, w: &VectorField, z: &[f64]) -> Result<Vec<f64>> {
    if v.d != w.d || z.len() != v.ambient_dim() {
        return Err(Error::InvalidConfig(
            "bracket fields and point must share one dimension".into(),
        ));
    }
    let n = z.len();
    let (cv, cw) = (v.coefficients(z), w.coefficients(z));
    let mut out = vec![0.0; n];
    for k in 0..n {
        let lifted: Vec<Dual<f64>> = z
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == k { Dual::var(x) } else { Dual::lift(x) })
            .collect();
        let (dv, dw) = (v.eval(&lifted), w.eval(&lifted));
        for i in 0..n {
            out[i] += cv[k] * dw[i].eps - cw[k] * dv[i].eps;
        }
    }
    Ok(out)
}

/// Numerical rank and determinant of the bracket matrix at momentum `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub det: f64,
    pub smallest_singular: f64,
}

/// Rank with threshold `1e-8 · σ_max` and determinant of `M(p)`.
pub fn hormander_rank(p: &DVector<f64>) -> Result<RankReport> {
    check_dim(p.len())?;
    let m = bracket_matrix(p);
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = 1e-8 * smax;
    Ok(RankReport {
        rank: sv.iter().filter(|&&s| s > tol).count(),
        det: m.determinant(),
        smallest_singular: sv.min(),
    })
}

/// Closed-form drift correction `(c̃, c)`.
///
/// `c̃_j = Σ_{i,k} (δ_ik + q_i q_k) ∂_{p_i}(q_j q_k)` collects the first-order
/// terms of `Σ X_j²`, and `c = (I + q⊗q)^{-1} (d·p - c̃)` restores the
/// divergence form.
pub fn drift_correction(p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let d = p.len();
    let e = p.norm_squared().sqrt_one_plus();
    let alpha = 1.0 / (1.0 + e).sqrt();
    let q = p * alpha;
    let dalpha: Vec<f64> = (0..d)
        .map(|i| -0.5 * (1.0 + e).powf(-1.5) * p[i] / e)
        .collect();
    // dq[i][j] = ∂_{p_i} q_j
    let dq: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| if i == j { alpha } else { 0.0 } + p[j] * dalpha[i])
                .collect()
        })
        .collect();
    let x = build_x_matrix(p);
    let mut ct = DVector::zeros(d);
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..d {
            for k in 0..d {
                s += x[(i, k)] * (dq[i][j] * q[k] + q[j] * dq[i][k]);
            }
        }
        ct[j] = s;
    }
    let c = x_matrix_inverse(p) * (p * d as f64 - &ct);
    (ct, c)
}

/// Smooth test function `P(z - c) · exp(-w |z - c|²)` with quadratic `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub weight: f64,
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major `n × n` quadratic coefficients.
    pub quadratic: Vec<f64>,
}

impl TestFunction {
    /// `exp(-|z|²)` in `n` variables.
    pub fn gaussian(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            weight: 1.0,
            constant: 1.0,
            linear: vec![0.0; n],
            quadratic: vec![0.0; n * n],
        }
    }

    /// A seeded member of the family with coefficients of order one.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |a: f64, b: f64| rng.random_range(a..b);
        Self {
            center: (0..n).map(|_| u(-0.5, 0.5)).collect(),
            weight: u(0.3, 1.0),
            constant: u(0.5, 1.5),
            linear: (0..n).map(|_| u(-1.0, 1.0)).collect(),
            quadratic: (0..n * n).map(|_| u(-0.5, 0.5)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub(crate) fn eval<S: Scalar>(&self, z: &[S]) -> S {
        let n = self.dim();
        let dz: Vec<S> = z.iter().zip(&self.center).map(|(&a, &c)| a - S::cst(c)).collect();
        let mut poly = S::cst(self.constant);
        let mut r2 = S::cst(0.0);
        for i in 0..n {
            poly = poly + S::cst(self.linear[i]) * dz[i];
            r2 = r2 + dz[i] * dz[i];
            for j in 0..n {
                let c = self.quadratic[i * n + j];
                if c != 0.0 {
                    poly = poly + S::cst(c) * dz[i] * dz[j];
                }
            }
        }
        poly * (S::cst(-self.weight) * r2).exp()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.eval(z)
    }
}

/// Fields whose Lorentz covariance can be tested in `d = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantField {
    X,
    Y,
    YTilde,
}

fn boosted<S: Scalar>(beta: f64, gamma: f64, z: &[S]) -> [S; 3] {
    let (g, b) = (S::cst(gamma), S::cst(beta));
    let e = energy_of(&z[..1]);
    [
        g * (z[0] - b * e),
        g * (z[1] - b * z[2]),
        g * (z[2] - b * z[1]),
    ]
}

/// `|V(f∘Λ)(z) - (Vf)(Λz)|` for the boost `Λ` of velocity `beta`, with exact
/// derivatives of the test function.
pub fn invariance_residual(
    field: InvariantField,
    beta: f64,
    f: &TestFunction,
    z: PhasePoint,
) -> Result<f64> {
    let gamma = lorentz_factor(beta)?;
    if f.dim() != 3 {
        return Err(Error::InvalidConfig(
            "invariance checks use a test function of three variables".into(),
        ));
    }
    let kind = match field {
        InvariantField::X => FieldKind::X(0),
        InvariantField::Y => FieldKind::Y,
        InvariantField::YTilde => FieldKind::YTilde,
    };
    let v = VectorField { d: 1, kind };
    let zs = z.to_array();
    let composed = |w: &[Dual<f64>]| f.eval(&boosted(beta, gamma, w));
    let lhs = v.apply(&composed, &zs);
    let image = boosted(beta, gamma, &zs);
    let direct = |w: &[Dual<f64>]| f.eval(w);
    let rhs = v.apply(&direct, &image);
    Ok((lhs - rhs).abs())
}

fn x_apply_f<S: Scalar>(f: &TestFunction, d: usize, j: usize, z: &[S]) -> S {
    let q = q_generic(&z[..d]);
    let g = |w: &[Dual<S>]| f.eval(w);
    (0..d).fold(S::cst(0.0), |acc, k| acc + x_entry(&q, j, k) * partial(&g, z, k))
}

fn flux<S: Scalar>(f: &TestFunction, d: usize, i: usize, z: &[S]) -> S {
    let p = &z[..d];
    let e = energy_of(p);
    let g = |w: &[Dual<S>]| f.eval(w);
    (0..d).fold(S::cst(0.0), |acc, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        acc + (S::cst(delta) + p[i] * p[j]) / e * partial(&g, z, j)
    })
}

/// Both sides of the Hörmander factorisation applied to a test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormResidual {
    /// `Σ X_j² f + Σ c_k X_k f - Y f`.
    pub hormander: f64,
    /// `E ∇·(D ∇f) - p·∇_y f - E ∂_t f`.
    pub divergence: f64,
}

impl FormResidual {
    pub fn residual(&self) -> f64 {
        (self.hormander - self.divergence).abs()
    }
}

/// Evaluates the operator in Hörmander form and in divergence form at `z`.
pub fn hormander_form(d: usize, f: &TestFunction, z: &[f64]) -> Result<FormResidual> {
    check_dim(d)?;
    let n = 2 * d + 1;
    if z.len() != n || f.dim() != n {
        return Err(Error::InvalidConfig(format!(
            "point and test function must have {n} coordinates"
        )));
    }
    let p = DVector::from_column_slice(&z[..d]);
    let e = energy_of(&z[..d]);
    let (_, c) = drift_correction(&p);
    let g = |w: &[Dual<f64>]| f.eval(w);

    let mut lhs = 0.0;
    for j in 0..d {
        let xj = VectorField { d, kind: FieldKind::X(j) };
        let inner = |w: &[Dual<f64>]| x_apply_f(f, d, j, w);
        lhs += xj.apply(&inner, z);
        lhs += c[j] * xj.apply(&g, z);
    }
    lhs -= VectorField { d, kind: FieldKind::Y }.apply(&g, z);

    let mut div = 0.0;
    for i in 0..d {
        let fi = |w: &[Dual<f64>]| flux(f, d, i, w);
        div += partial(&fi, z, i);
    }
    let mut rhs = e * div - e * partial(&g, z, 2 * d);
    for i in 0..d {
        rhs -= z[i] * partial(&g, z, d + i);
    }
    Ok(FormResidual {
        hormander: lhs,
        divergence: rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_p(d: usize, seed: u64, scale: f64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn q_identities() {
        assert_eq!(q_of_p(&DVector::zeros(2)), DVector::zeros(2));
        for s in 0..50 {
            let p = rand_p(3, s, 4.0);
            let q = q_of_p(&p);
            let e = (1.0 + p.norm_squared()).sqrt();
            assert!((1.0 + q.norm_squared() - e).abs() < 1e-12);
            assert!(((2.0 + q.norm_squared()) * q.norm_squared() - p.norm_squared()).abs() < 1e-12 * e * e);
        }
    }

    #[test]
    fn x_matrix_factorisation() {
        assert_eq!(build_x_matrix(&DVector::zeros(3)), DMatrix::identity(3, 3));
        for s in 0..100 {
            let p = rand_p(3, s, 3.0);
            let x = build_x_matrix(&p);
            let target = DMatrix::identity(3, 3) + &p * p.transpose();
            assert!((&x * &x - target).amax() < 1e-12 * (1.0 + p.norm_squared()));
            assert!((&x * x_matrix_inverse(&p) - DMatrix::identity(3, 3)).amax() < 1e-12);
            assert!(x.clone().symmetric_eigenvalues().min() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn one_dimensional_brackets() {
        let x = VectorField::new(1, FieldKind::X(0)).unwrap();
        let y = VectorField::new(1, FieldKind::Y).unwrap();
        let xy = VectorField::new(1, FieldKind::BracketXY(0)).unwrap();
        let b0 = lie_bracket(&x, &y, &[0.0, 0.3, -0.2]).unwrap();
        assert!((b0[0]).abs() < 1e-9 && (b0[1] - 1.0).abs() < 1e-9 && b0[2].abs() < 1e-9);
        for s in 0..20 {
            let p = rand_p(3, s, 2.0);
            let z = [p[0], p[1], p[2]];
            let fd = lie_bracket(&x, &y, &z).unwrap();
            let closed = xy.coefficients(&z);
            for i in 0..3 {
                assert!((fd[i] - closed[i]).abs() < 1e-8);
            }
            let xxy = lie_bracket(&x, &xy, &z).unwrap();
            let yc = y.coefficients(&z);
            for i in 0..3 {
                assert!((xxy[i] - yc[i]).abs() < 1e-6);
            }
            let yxy = lie_bracket(&y, &xy, &z).unwrap();
            assert!(yxy.iter().all(|v| v.abs() < 1e-6));
            let exact = lie_bracket_exact(&x, &y, &z).unwrap();
            for i in 0..3 {
                assert!((exact[i] - closed[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bracket_convergence_order() {
        let x = VectorField::new(1, FieldKind::X(0)).unwrap();
        let y = VectorField::new(1, FieldKind::Y).unwrap();
        let z = [0.8, 0.1, 0.2];
        let exact = lie_bracket_exact(&x, &y, &z).unwrap();
        let err = |h: f64| {
            let b = lie_bracket_with_step(&x, &y, &z, h).unwrap();
            b.iter().zip(&exact).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max)
        };
        let order = (err(1e-2) / err(1e-3)).log10();
        assert!((1.8..=2.2).contains(&order), "order {order}");
    }

    #[test]
    fn rank_and_determinant() {
        for d in 1..=3 {
            let r = hormander_rank(&DVector::zeros(d)).unwrap();
            assert!((r.det - 1.0).abs() < 1e-12);
            assert_eq!(r.rank, 2 * d + 1);
            for s in 0..100 {
                let p = rand_p(d, 1000 + s, 3.0);
                let r = hormander_rank(&p).unwrap();
                let e = (1.0 + p.norm_squared()).sqrt();
                assert!((r.det - e).abs() < 1e-10, "d={d} det={} e={e}", r.det);
                assert_eq!(r.rank, 2 * d + 1);
            }
        }
        assert!(hormander_rank(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn bracket_matrix_matches_field_columns() {
        let p = DVector::from_vec(vec![0.4, -1.2]);
        let z = [0.4, -1.2, 0.3, 0.1, 0.7];
        let m = bracket_matrix(&p);
        let y = VectorField::new(2, FieldKind::Y).unwrap();
        for j in 0..2 {
            let xj = VectorField::new(2, FieldKind::X(j)).unwrap();
            let b = lie_bracket_exact(&xj, &y, &z).unwrap();
            let cx = xj.coefficients(&z);
            for i in 0..5 {
                assert!((m[(i, j)] - cx[i]).abs() < 1e-14);
                assert!((m[(i, 2 + j)] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invariance_of_x_and_y() {
        let f = TestFunction::gaussian(3);
        let z = PhasePoint::new(0.3, -0.2, 0.4);
        assert_eq!(invariance_residual(InvariantField::X, 0.0, &f, z).unwrap(), 0.0);
        for &beta in &[-0.9, -0.5, -0.1, 0.1, 0.5, 0.9] {
            for field in [InvariantField::X, InvariantField::Y] {
                let r = invariance_residual(field, beta, &f, z).unwrap();
                assert!(r < 1e-9, "{field:?} beta={beta} r={r}");
            }
        }
        let r = invariance_residual(InvariantField::YTilde, 0.5, &f, z).unwrap();
        assert!(r > 1e-3, "{r}");
        assert!(invariance_residual(InvariantField::X, 1.0, &f, z).is_err());
    }

    #[test]
    fn drift_correction_and_form_residual() {
        let (ct, c) = drift_correction(&DVector::zeros(2));
        assert_eq!(ct.amax(), 0.0);
        assert_eq!(c.amax(), 0.0);
        let (_, c1) = drift_correction(&DVector::from_vec(vec![1.7]));
        assert!(c1[0].abs() < 1e-14);
        for d in 1..=3 {
            for s in 0..10 {
                let n = 2 * d + 1;
                let f = TestFunction::random(n, s);
                let z: Vec<f64> = rand_p(n, 77 + s, 1.0).iter().copied().collect();
                let r = hormander_form(d, &f, &z).unwrap();
                let tol = if d == 1 { 1e-10 } else { 1e-8 };
                assert!(r.residual() < tol, "d={d} residual {}", r.residual());
            }
        }
    }
}
