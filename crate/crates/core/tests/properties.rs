use proptest::prelude::*;

use relkin::bounds::{envelope_vertices, max_log_c};
use relkin::control::{integrate_path, ControlFunction};
use relkin::geometry::{
    boost, energy, galilean_compose, lorentz_compose, lorentz_inverse, lorentz_relative, to_momentum, to_velocity,
    FourVector, Region,
};
use relkin::harnack::{default_k0, split_times};
use relkin::hormander::{build_x_matrix, hormander_rank};
use relkin::pde::{solve_cauchy, Grid, Variant};
use relkin::sde::{mean_and_se, simulate, ProcessKind, SdeConfig};
use relkin::PhasePoint;

fn point(lim: f64) -> impl Strategy<Value = PhasePoint> {
    (-lim..lim, -lim..lim, -lim..lim).prop_map(|(p, y, t)| PhasePoint::new(p, y, t))
}

fn scale(zs: &[PhasePoint]) -> f64 {
    zs.iter().map(|z| z.energy() * (1.0 + z.y.abs() + z.t.abs())).product::<f64>().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn lorentz_group_axioms(a in point(5.0), b in point(5.0), c in point(5.0)) {
        let tol = 1e-12 * scale(&[a, b, c]);
        let l = lorentz_compose(lorentz_compose(a, b), c);
        let r = lorentz_compose(a, lorentz_compose(b, c));
        prop_assert!(l.max_abs_diff(&r) <= tol);
        prop_assert!(lorentz_compose(a, PhasePoint::ORIGIN).max_abs_diff(&a) <= tol);
        prop_assert!(lorentz_compose(PhasePoint::ORIGIN, a).max_abs_diff(&a) <= tol);
        prop_assert!(lorentz_compose(a, lorentz_inverse(a)).max_abs_diff(&PhasePoint::ORIGIN) <= tol);
        prop_assert!(lorentz_compose(lorentz_inverse(a), a).max_abs_diff(&PhasePoint::ORIGIN) <= tol);
    }

    #[test]
    fn galilean_group_axioms(a in point(5.0), b in point(5.0), c in point(5.0)) {
        let l = galilean_compose(galilean_compose(a, b), c);
        let r = galilean_compose(a, galilean_compose(b, c));
        prop_assert!(l.max_abs_diff(&r) <= 1e-12 * scale(&[a, b, c]));
    }

    #[test]
    fn relative_matches_inverse_then_compose(z0 in point(3.0), z in point(3.0)) {
        let a = lorentz_relative(z0, z);
        let b = lorentz_compose(lorentz_inverse(z0), z);
        prop_assert!(a.max_abs_diff(&b) <= 1e-12 * scale(&[z0, z]));
    }

    #[test]
    fn region_membership_routes_agree(
        c in point(1.0),
        w in (-0.6f64..0.6, -0.3f64..0.3, -0.4f64..0.05),
        r in 0.1f64..0.6,
        theta in 0.1f64..0.95,
    ) {
        let z = lorentz_compose(c, PhasePoint::new(w.0, w.1, w.2));
        for reg in [
            Region::cylinder(c, r).unwrap(),
            Region::slab(c, r).unwrap(),
            Region::cone(c, r, theta).unwrap(),
        ] {
            let rel = lorentz_relative(c, z);
            let nudged = [1.0 - 1e-7, 1.0 + 1e-7].iter().flat_map(|&f| {
                [
                    PhasePoint::new(rel.p * f, rel.y, rel.t),
                    PhasePoint::new(rel.p, rel.y * f, rel.t),
                    PhasePoint::new(rel.p, rel.y, rel.t * f),
                ]
            });
            let robust = nudged.map(|q| reg.contains_at_origin(q)).all(|m| m == reg.contains_at_origin(rel));
            if robust {
                prop_assert_eq!(reg.contains(z), reg.contains_explicit(z));
            }
        }
    }

    #[test]
    fn boosts_preserve_mass_shell(p in -20.0f64..20.0, beta in -0.99f64..0.99) {
        let v = boost(beta, FourVector::energy_momentum(p)).unwrap();
        prop_assert!(v.mass_shell_defect().abs() <= 1e-12 * v.a * v.a);
        prop_assert!(v.a > 0.0);
        let back = boost(-beta, v).unwrap();
        prop_assert!((back.b - p).abs() <= 1e-10 * energy(p) / (1.0 - beta.abs()));
    }

    #[test]
    fn velocity_round_trip(p in -50.0f64..50.0) {
        let x = to_velocity(p);
        prop_assert!(x.abs() < 1.0);
        prop_assert!((to_momentum(x).unwrap() - p).abs() <= 1e-12 * energy(p).powi(3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hormander_structure(d in 1usize..=3, raw in prop::collection::vec(-4.0f64..4.0, 3)) {
        let p = nalgebra::DVector::from_row_slice(&raw[..d]);
        let x = build_x_matrix(&p);
        let target = nalgebra::DMatrix::identity(d, d) + &p * p.transpose();
        prop_assert!((&x * &x - target).amax() <= 1e-12 * (1.0 + p.norm_squared()));
        let rep = hormander_rank(&p).unwrap();
        prop_assert_eq!(rep.rank, 2 * d + 1);
        prop_assert!((rep.det - (1.0 + p.norm_squared()).sqrt()).abs() <= 1e-10 * (1.0 + p.norm_squared()));
    }

    #[test]
    fn paths_are_left_translation_invariant(
        z0 in point(1.0),
        vals in prop::collection::vec(-2.0f64..2.0, 1..5),
        len in 0.05f64..0.5,
    ) {
        let n = vals.len();
        let bp: Vec<f64> = (0..=n).map(|i| len * i as f64).collect();
        let w = ControlFunction::new(bp, vals).unwrap();
        let a = integrate_path(&w, PhasePoint::ORIGIN);
        let b = integrate_path(&w, z0);
        prop_assert!(lorentz_compose(z0, a.end()).max_abs_diff(&b.end()) <= 1e-8 * scale(&[z0, a.end()]));
        prop_assert!(b.within_light_cone());
    }

    #[test]
    fn constant_control_gives_sinh(c in -2.0f64..2.0, s in 0.01f64..1.5) {
        let path = integrate_path(&ControlFunction::constant(c, s).unwrap(), PhasePoint::ORIGIN);
        let end = path.end();
        prop_assert!((end.p - (c * s).sinh()).abs() <= 1e-9 * (c * s).cosh());
        let y = if c == 0.0 { 0.0 } else { -((c * s).cosh() - 1.0) / c };
        prop_assert!((end.y - y).abs() <= 1e-8);
    }

    #[test]
    fn split_time_invariants(
        vals in prop::collection::vec(-3.0f64..3.0, 1..8),
        len in 0.05f64..0.6,
        frac in 0.05f64..1.0,
    ) {
        let n = vals.len();
        let bp: Vec<f64> = (0..=n).map(|i| len * i as f64).collect();
        let w = ControlFunction::new(bp, vals).unwrap();
        let s = frac * w.horizon();
        let k0 = default_k0();
        let (k, sigma) = split_times(&w, s, k0);
        let phi = w.cost(s);
        prop_assert_eq!(sigma.len(), k + 1);
        prop_assert_eq!(*sigma.last().unwrap(), s);
        prop_assert!(sigma.windows(2).all(|v| v[0] <= v[1]));
        prop_assert!(k == 0 || (k as f64) < phi / (k0 * k0));
        let mut prev = 0.0;
        for &sj in &sigma {
            prop_assert!(w.cost(sj) - w.cost(prev) <= k0 * k0 + 1e-12);
            prev = sj;
        }
    }

    #[test]
    fn fixed_c_bound_is_monotone_in_endpoints(
        pts in prop::collection::vec((-5.0f64..1.0, 0.0f64..20.0), 2..12),
        extra in (-5.0f64..1.0, 0.0f64..20.0),
        c in 0.0f64..2.0,
    ) {
        let (l, p): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        let mut l2 = l.clone();
        let mut p2 = p.clone();
        l2.push(extra.0);
        p2.push(extra.1);
        prop_assert!(max_log_c(&l2, &p2, c) <= max_log_c(&l, &p, c));
        // vertices lie on the concave envelope, in increasing C
        let v = envelope_vertices(&l, &p);
        for x in &v {
            prop_assert!((max_log_c(&l, &p, x.c) - x.log_c).abs() <= 1e-9 * (1.0 + x.log_c.abs()));
        }
        prop_assert!(v.windows(2).all(|w| w[0].c <= w[1].c));
        for w in v.windows(2) {
            let mid = 0.5 * (w[0].c + w[1].c);
            let chord = 0.5 * (w[0].log_c + w[1].log_c);
            prop_assert!(max_log_c(&l, &p, mid) >= chord - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn comparison_principle(
        base in prop::collection::vec(0.0f64..1.0, 4),
        bump in prop::collection::vec(0.0f64..0.5, 4),
    ) {
        let grid = Grid::symmetric(0.6, 0.05, 0.4, 0.02).unwrap();
        fn f(c: &[f64], x: f64, y: f64) -> f64 {
            c[0] + c[1] * (3.0 * x).cos() + c[2] * (7.0 * y).sin() + c[3] * x * y
        }
        let lo = grid.sample(|x, y| f(&base, x, y).max(0.0));
        let hi: Vec<f64> = lo
            .iter()
            .zip(grid.sample(|x, y| f(&bump, x, y).abs()))
            .map(|(a, b)| a + b)
            .collect();
        let times = [0.05, 0.1];
        let a = solve_cauchy(&lo, grid, Variant::Original, &times).unwrap();
        let b = solve_cauchy(&hi, grid, Variant::Original, &times).unwrap();
        for (ua, ub) in a.values.iter().zip(&b.values) {
            prop_assert!(ua.iter().zip(ub).all(|(x, y)| *x <= *y + 1e-14));
            prop_assert!(ua.iter().all(|v| *v >= -1e-14));
        }
    }

    #[test]
    fn sde_weak_consistency(p0 in -1.0f64..1.0, seed in 0u64..1000) {
        // the relativistic momentum is a martingale
        let cfg = SdeConfig::new(ProcessKind::Relativistic, PhasePoint::new(p0, 0.0, 0.0), 0.2, 0.005, 20_000, seed);
        let ens = simulate(&cfg).unwrap();
        let ps: Vec<f64> = ens.terminal().iter().map(|z| z.p).collect();
        let (m, se) = mean_and_se(&ps).unwrap();
        prop_assert!((m - p0).abs() <= 5.0 * se);

        // halving the step leaves the mean displacement unchanged within noise
        let run = |h: f64, s: u64| {
            let c = SdeConfig::new(ProcessKind::Kinetic, PhasePoint::new(p0, 0.0, 0.0), 0.3, h, 20_000, s);
            let e = simulate(&c).unwrap();
            mean_and_se(&e.terminal().iter().map(|z| z.y).collect::<Vec<_>>()).unwrap()
        };
        let (m1, s1) = run(0.01, seed);
        let (m2, s2) = run(0.005, seed + 1);
        prop_assert!((m1 - m2).abs() <= 5.0 * s1.hypot(s2) + 2e-3);
    }
}
