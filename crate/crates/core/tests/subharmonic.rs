use std::sync::OnceLock;

use hyperharm::barrier::*;
use hyperharm::boundary::{gen_cantor, gen_pair};
use hyperharm::hull::*;
use hyperharm::mollify::*;
use hyperharm::quad::integrate;
use hyperharm::*;
use proptest::prelude::*;

fn line_hull(n: usize, a: f64) -> GeodesicHull {
    build_hull(&gen_pair(n, std::f64::consts::PI).unwrap(), PairPolicy::default(), a, &RandomStream::new(0)).unwrap()
}

/// Point at distance `r` from the line through the origin, off the foot
/// `tilt` along the line.
fn off_line(space: &SpaceConfig, r: f64, tilt: f64) -> SpacePoint {
    let hull = line_hull(space.n, space.a);
    let u = hull.endpoints(0).0.direction();
    // a unit vector orthogonal to u
    let w = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = w[0] * u[0] + w[1] * u[1] + w[2] * u[2];
    let mut v: Vec<f64> = (0..space.n).map(|i| w[i] - dot * u[i]).collect();
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter_mut().for_each(|c| *c /= norm);
    let foot = space.point_at(&u[..space.n], tilt).unwrap();
    let b = Isometry::boost_to(&foot.c);
    // v is orthogonal to the line at the origin and stays so after boosting along it
    b.apply(&space.point_at(&v, r).unwrap())
}

struct CantorSetup {
    hull: &'static GeodesicHull,
    probes: Vec<SpacePoint>,
    smooth: SmoothMap<Retraction<'static>>,
}

/// Cantor hull in H^3 with the retraction smoothed at scale 0.5 around the probes.
fn cantor() -> &'static CantorSetup {
    static HULL: OnceLock<GeodesicHull> = OnceLock::new();
    static SETUP: OnceLock<CantorSetup> = OnceLock::new();
    let hull = HULL.get_or_init(|| {
        build_hull(&gen_cantor(1.0 / 3.0, 6, 3).unwrap(), PairPolicy::Multiscale, 1.0, &RandomStream::new(1)).unwrap()
    });
    SETUP.get_or_init(|| {
        let space = SpaceConfig::h3();
        let mut rng = RandomStream::new(5);
        let mut probes = vec![];
        while probes.len() < 120 {
            let dir = space.random_direction(&mut rng);
            let p = space.point_at(&dir, rng.uniform_in(0.0, 8.0)).unwrap();
            let (dk, _) = dist_to_hull(&p, hull).unwrap();
            if (0.2..8.0).contains(&dk) {
                probes.push(p);
            }
        }
        let region = RegionMesh::balls(space, &probes, 0.65, 0.15).unwrap();
        let net = color_net(&build_net(&region, 0.5).unwrap()).unwrap();
        let smooth = smooth_map(Retraction { hull }, &net).unwrap();
        CantorSetup { hull, probes, smooth }
    })
}

fn far_probes(s: &CantorSetup) -> Vec<SpacePoint> {
    s.probes.iter().filter(|p| dist_to_hull(p, &s.hull).unwrap().0 >= 2.0).copied().collect()
}

#[test]
fn constant_field_has_zero_laplacian() {
    let space = SpaceConfig::h3();
    let hull = line_hull(3, 1.0);
    let f = FnField { space, f: |_: &SpacePoint| Ok(2.5) };
    let probes = [off_line(&space, 1.0, 0.0), off_line(&space, 4.0, 1.0)];
    let rep = subharmonicity_probe(&f, &hull, &probes, 0.02).unwrap();
    for r in &rep.records {
        assert_eq!(r.laplacian, 0.0);
        assert_eq!(r.value, 2.5);
    }
}

#[test]
fn delta_of_raw_line_retraction_is_hull_distance() {
    let space = SpaceConfig::h2();
    let hull = line_hull(2, 1.0);
    let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
    for (r, t) in [(0.0, 0.0), (0.5, 0.3), (3.0, 1.0), (7.0, -0.4)] {
        let x = off_line(&space, r, t);
        let (dk, _) = dist_to_hull(&x, &hull).unwrap();
        assert!((delta.value(&x).unwrap() - dk).abs() < 1e-9);
    }
    assert!(delta_field(Retraction { hull: &hull }, SpaceConfig::h3()).is_err());
}

#[test]
fn delta_laplacian_matches_distance_to_geodesic() {
    // In Fermi coordinates around a geodesic the metric is
    // dr^2 + cosh^2(a r) ds^2 (+ (sinh(a r)/a)^2 dtheta^2 in H^3), so
    // Delta r = a tanh(a r) in H^2 and a (tanh(a r) + coth(a r)) in H^3.
    for (n, a) in [(2usize, 1.0), (2, 0.7), (3, 1.0), (3, 1.3)] {
        let space = SpaceConfig::new(n, a).unwrap();
        let hull = line_hull(n, a);
        let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
        let probes: Vec<SpacePoint> = [2.0, 2.7, 3.5, 5.0].iter().map(|&r| off_line(&space, r / a.min(1.0), 0.2)).collect();
        let rep = delta_probe(&delta, &hull, &probes, 0.01).unwrap();
        for r in &rep.records {
            let ar = a * r.hull_distance;
            let oracle = if n == 2 { a * ar.tanh() } else { a * (ar.tanh() + 1.0 / ar.tanh()) };
            assert!((r.laplacian / oracle - 1.0).abs() < 0.05, "n={n} a={a}: {} vs {oracle}", r.laplacian);
            assert!((r.gradient.unwrap() - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn delta_probe_rejects_probes_near_the_hull() {
    let space = SpaceConfig::h3();
    let hull = line_hull(3, 1.0);
    let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
    let err = delta_probe(&delta, &hull, &[off_line(&space, 1.5, 0.0)], 0.02).unwrap_err();
    assert!(matches!(err, Error::Mesh(_)));
}

/// The Laplacian of the distance to a geodesic in H^2 is `tanh s`.
#[test]
fn validity_radius_picks_the_first_admissible_band() {
    let space = SpaceConfig::h2();
    let hull = line_hull(2, 1.0);
    let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
    let probes: Vec<SpacePoint> = [2.1, 2.6, 3.2].iter().map(|&r| off_line(&space, r, 0.3)).collect();
    let (c, rep) = validity_radius(&delta, &hull, &probes, 0.01, &[2.0, 2.5, 3.0], 0.98).unwrap();
    assert_eq!(c, 2.5);
    assert_eq!(rep.records.len(), 2);
    assert!(rep.min_laplacian >= 0.98);
    assert!((rep.min_laplacian - 2.6f64.tanh()).abs() < 1e-3);
    assert!(validity_radius(&delta, &hull, &probes, 0.01, &[2.0, 2.5], 0.999).is_err());
    assert!(validity_radius(&delta, &hull, &probes, 0.01, &[1.0, 2.5], 0.5).is_err());
    assert!(validity_radius(&delta, &hull, &probes, 0.01, &[3.0, 2.5], 0.5).is_err());
}

#[test]
fn smoothed_delta_on_cantor_hull() {
    let s = cantor();
    let space = SpaceConfig::h3();
    let delta = delta_field(&s.smooth, space).unwrap();
    let far = far_probes(s);
    assert!(far.len() >= 40);
    let rep = delta_probe(&delta, &s.hull, &far, 0.02).unwrap();
    assert!(rep.min_laplacian >= 0.2, "min laplacian {}", rep.min_laplacian);
    assert!(rep.max_gradient <= 1.1, "max gradient {}", rep.max_gradient);
    assert!(rep.to_csv().lines().count() == far.len() + 1);

    // delta is 2-Lipschitz over probe pairs
    let vals: Vec<f64> = s.probes.iter().map(|p| delta.value(p).unwrap()).collect();
    for i in 0..s.probes.len() {
        for j in 0..i {
            let d = space.dist(&s.probes[i], &s.probes[j]);
            assert!((vals[i] - vals[j]).abs() <= 2.0 * d + 1e-9);
        }
    }
    // near the hull delta is at most the smoothing displacement
    let on_hull = s.hull.nearest(&s.probes[0]).foot;
    assert!(delta.value(&on_hull).unwrap() <= 3.0 * 0.5);
}

#[test]
fn bump_profile_values() {
    let p = bump_profile(0.5, 1.0, 1.0).unwrap();
    assert_eq!(p.eps, 0.25);
    assert_eq!(p.u(-1.0), 0.0);
    assert_eq!(p.u(0.5), 1.0);
    let r = p.u(10.0) * (10.0 * p.eps).exp();
    assert!((0.5..=2.0).contains(&r), "{r}");
    // eps is capped by the curvature
    assert_eq!(bump_profile(4.0, 1.0, 0.6).unwrap().eps, 0.3);
    assert!(bump_profile(0.0, 1.0, 1.0).is_err());
    assert!(bump_profile(1.0, -1.0, 1.0).is_err());
}

#[test]
fn bump_profile_grid_inequality_and_c1() {
    for (aa, bb, a) in [(0.5, 1.0, 1.0), (1.6, 1.0, 1.0), (0.2, 1.2, 0.5), (3.0, 0.3, 2.0)] {
        let p = bump_profile(aa, bb, a).unwrap();
        let mut worst = f64::INFINITY;
        for i in 0..10_000 {
            let x = -1.0 + 13.0 * i as f64 / 9_999.0;
            let (u, du) = p.eval(x);
            worst = worst.min(aa * u + bb * du.min(0.0));
        }
        assert!(worst >= -1e-12, "{worst}");
        // derivative against central differences, including across the knots
        for x in [-0.5, -0.25, 0.0, 1.0, 2.0, 2.5, 3.0, 6.0] {
            let h = 1e-6;
            let fd = (p.u(x + h) - p.u(x - h)) / (2.0 * h);
            // u'' jumps at the knots, so the central difference is O(h) there
            assert!((fd - p.eval(x).1).abs() < 2e-5, "x={x}: {fd} vs {}", p.eval(x).1);
        }
    }
}

#[test]
fn bump_antiderivative_matches_quadrature() {
    let p = bump_profile(1.0, 1.0, 1.0).unwrap();
    for x in [-0.7f64, -0.3, 0.0, 0.8, 2.0, 2.4, 3.0, 5.5, 12.0] {
        let (q, _) = integrate(|t| p.u(t), -0.5, x.max(-0.5), 1e-13, 1e-12).unwrap();
        assert!((p.antiderivative(x) - q).abs() < 1e-10, "x={x}");
    }
    let (q, _) = integrate(|t| p.u(t), -0.5, 80.0, 1e-13, 1e-12).unwrap();
    assert!((p.total() - q).abs() < 1e-9);
}

#[test]
fn phi_shell_sup_is_independent_of_d() {
    let space = SpaceConfig::h3();
    let hull = line_hull(3, 1.0);
    let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
    let p = bump_profile(1.0, 1.0, 1.0).unwrap();
    assert!(phi_shell(p, &delta, 1.5, DELTA_MIN_RADIUS).is_err());
    let probes: Vec<SpacePoint> = (0..40).map(|i| off_line(&space, 0.5 * i as f64, 0.1 * i as f64)).collect();
    let mut sups = vec![];
    for d in [4.0, 6.0, 8.0] {
        let phi = phi_shell(p, &delta, d, DELTA_MIN_RADIUS).unwrap();
        let measured = probes.iter().map(|x| phi.value(x).unwrap()).fold(0.0, f64::max);
        assert!(measured <= phi.sup() * (1.0 + 1e-12));
        sups.push(measured);
    }
    let (lo, hi) = sups.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi / lo - 1.0 < 0.01, "{sups:?}");
}

#[test]
fn phi_shell_is_subharmonic_on_cantor_hull() {
    let s = cantor();
    let space = SpaceConfig::h3();
    let delta = delta_field(&s.smooth, space).unwrap();
    let far = far_probes(s);
    let rep = delta_probe(&delta, &s.hull, &far, 0.02).unwrap();
    let p = bump_profile(rep.min_laplacian, rep.max_gradient.powi(2), 1.0).unwrap();
    let mut on_shell = 0;
    for d in [2.0, 4.0] {
        let phi = phi_shell(p, &delta, d, DELTA_MIN_RADIUS).unwrap();
        let f = FnField { space, f: |x: &SpacePoint| phi.value(x) };
        for x in &far {
            let (_, lap) = f.probe(x, 0.02).unwrap();
            assert!(lap >= -1e-3, "d={d}: {lap}");
            let dl = delta.value(x).unwrap();
            if (d..=d + 1.0).contains(&dl) {
                on_shell += 1;
                assert!(lap >= 0.15, "d={d}, delta={dl}: {lap} (scale {})", phi.scale());
            }
        }
    }
    assert!(on_shell >= 5);
}

fn cantor_phi(spec: &GreenSpec) -> Result<PhiAssembly<'static, &'static SmoothMap<Retraction<'static>>>> {
    static DELTA: OnceLock<DeltaField<&'static SmoothMap<Retraction<'static>>>> = OnceLock::new();
    let s = cantor();
    let delta = DELTA.get_or_init(|| delta_field(&s.smooth, SpaceConfig::h3()).unwrap());
    let far = far_probes(s);
    let rep = delta_probe(delta, &s.hull, &far, 0.02)?;
    let p = bump_profile(rep.min_laplacian, rep.max_gradient.powi(2), 1.0)?;
    assemble_phi(p, delta, &s.hull, spec, 2.0, &s.probes[..8], &RandomStream::new(9))
}

#[test]
fn assemble_phi_refuses_unbounded_green() {
    let spec = GreenSpec { constant: Some(0.1), check_samples: 100, ..GreenSpec::default() };
    let err = cantor_phi(&spec).err().expect("construction must be refused");
    assert!(err.to_string().contains("unbounded"), "{err}");
}

#[test]
fn green_term_laplacian_is_minus_chi() {
    // -Delta int chi(y) G(x, y) dy = chi(x), with chi = 1 - smootherstep(dist - C - 1)
    let space = SpaceConfig::h3();
    let hull = line_hull(3, 1.0);
    let delta = delta_field(Retraction { hull: &hull }, space).unwrap();
    let p = bump_profile(1.0, 1.0, 1.0).unwrap();
    let w = [off_line(&space, 3.0, 0.0)];
    let phi = assemble_phi(p, &delta, &hull, &GreenSpec::default(), 2.0, &w, &RandomStream::new(3)).unwrap();
    let chi = |d: f64| {
        let s = (d - 3.0).clamp(0.0, 1.0);
        1.0 - s * s * s * (6.0 * s * s - 15.0 * s + 10.0)
    };
    for r in [0.7, 2.0, 3.0, 3.3, 3.6, 4.0, 4.5, 6.0] {
        let x = off_line(&space, r, 0.4);
        let (dk, _) = dist_to_hull(&x, &hull).unwrap();
        let local = phi.local(&x).unwrap();
        let lap = space.fd_laplacian(|q| local.green(q), &x, 0.02).unwrap();
        assert!((lap + chi(dk)).abs() < 0.01, "dist {dk}: {lap} vs {}", -chi(dk));
    }
}

#[test]
fn assembled_phi_on_cantor_hull() {
    let s = cantor();
    let phi = cantor_phi(&GreenSpec::default()).unwrap();
    let a = 1.0;
    assert!((-a * phi.last_shell as f64).exp() < 1e-6 * (-a * phi.first_shell as f64).exp());
    assert!(phi.sup_bound.is_finite() && phi.sup_bound > 0.0);
    assert!(phi.green_stderr_max <= 0.05 * phi.sup_bound, "{} vs {}", phi.green_stderr_max, phi.sup_bound);

    let fine = subharmonicity_probe(&phi, &s.hull, &s.probes, 0.02).unwrap();
    let coarse = subharmonicity_probe(&phi, &s.hull, &s.probes, 0.04).unwrap();
    assert!(fine.sup_abs.is_finite());
    assert!(fine.fraction_above(a, 0.0) >= 0.99);
    assert!(fine.fraction_above(a, 0.5) >= 0.95);
    assert!(fine.c_min > 0.0);
    assert!((fine.c_q05 / coarse.c_q05 - 1.0).abs() < 0.1, "{} vs {}", fine.c_q05, coarse.c_q05);

    // deterministic given the seed
    let again = cantor_phi(&GreenSpec::default()).unwrap();
    for x in &s.probes[..5] {
        assert_eq!(phi.value(x).unwrap().to_bits(), again.value(x).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bump_profile_audit_holds(aa in 0.05f64..5.0, bb in 0.1f64..3.0, a in 0.3f64..2.0) {
        let p = bump_profile(aa, bb, a).unwrap();
        prop_assert!(p.eps <= 0.5 * a + 1e-15 && p.eps <= 0.5 * aa / bb + 1e-15);
        prop_assert!(p.antiderivative(40.0) <= p.total());
    }
}
