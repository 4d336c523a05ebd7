use hyperharm::boundary::*;
use hyperharm::geometry::{SpaceConfig, SpacePoint};
use hyperharm::hull::*;
use hyperharm::mollify::*;
use hyperharm::{RandomStream, Result};
use proptest::prelude::*;

fn identity(space: SpaceConfig) -> FnMap<impl Fn(&SpacePoint) -> Result<SpacePoint> + Sync> {
    FnMap { target: space, f: |z: &SpacePoint| Ok(*z) }
}

fn constant(space: SpaceConfig, c: SpacePoint) -> FnMap<impl Fn(&SpacePoint) -> Result<SpacePoint> + Sync> {
    FnMap { target: space, f: move |_: &SpacePoint| Ok(c) }
}

fn h2_ball_net(r: f64) -> (RegionMesh, SeparatedNet) {
    let s = SpaceConfig::h2();
    let region = RegionMesh::ball(s, &s.origin(), 2.0, 0.1).unwrap();
    let net = build_net(&region, r).unwrap();
    (region, net)
}

fn geodesic_h2() -> GeodesicHull {
    build_hull(&gen_pair(2, std::f64::consts::PI).unwrap(), PairPolicy::default(), 1.0, &RandomStream::new(0)).unwrap()
}

#[test]
fn chi_profile() {
    assert_eq!(chi(0.0), 0.0);
    assert_eq!(chi(0.5), 0.0);
    assert_eq!(chi(1.0), 1.0);
    assert_eq!(chi(-3.0), 1.0);
    assert!((chi(0.75) - 0.5).abs() < 1e-15);
    // derivative against a central difference
    for s in [0.55, 0.7, 0.9, 0.99] {
        let fd = (chi(s + 1e-6) - chi(s - 1e-6)) / 2e-6;
        assert!((fd - chi_prime(s)).abs() < 1e-6);
    }
    // second derivative vanishes at both knots: C^2
    let d2 = |s: f64| (chi(s + 1e-4) - 2.0 * chi(s) + chi(s - 1e-4)) / 1e-8;
    assert!(d2(0.5).abs() < 1e-2 && d2(1.0).abs() < 1e-2);
}

#[test]
fn single_vertex_net() {
    let s = SpaceConfig::h3();
    let region = RegionMesh::from_points(s, vec![s.origin()], 0.1).unwrap();
    let net = build_net(&region, 0.4).unwrap();
    assert_eq!(net.len(), 1);
    assert_eq!(color_net(&net).unwrap().classes, 1);
}

#[test]
fn net_of_h2_ball() {
    let (region, net) = h2_ball_net(0.5);
    let (sep, cover) = net.audit(&region);
    assert!(sep >= 0.25 - 1e-9, "separation {sep}");
    assert!(cover < 0.25 + 1e-9, "cover {cover}");
    let s = SpaceConfig::h2();
    let ratio = s.ball_volume(2.0) / s.ball_volume(0.25);
    let q = net.len() as f64 / ratio;
    assert!((0.25..=4.0).contains(&q), "{} centers vs {ratio}", net.len());
}

#[test]
fn net_radius_must_exceed_spacing() {
    let s = SpaceConfig::h2();
    let region = RegionMesh::ball(s, &s.origin(), 1.0, 0.1).unwrap();
    assert!(build_net(&region, 0.15).is_err());
}

#[test]
fn well_separated_net_needs_one_color() {
    let s = SpaceConfig::h2();
    let pts: Vec<_> = (0..6).map(|i| s.point_at(&[(i as f64).cos(), (i as f64).sin()], 3.0).unwrap()).collect();
    let region = RegionMesh::from_points(s, pts, 0.1).unwrap();
    let net = color_net(&build_net(&region, 0.4).unwrap()).unwrap();
    assert_eq!(net.len(), 6);
    assert_eq!(net.classes, 1);
}

#[test]
fn coloring_of_h2_net() {
    let (_, net) = h2_ball_net(0.5);
    let colored = color_net(&net).unwrap();
    assert!(colored.classes <= 40, "{} classes", colored.classes);
    assert!(colored.class_separation() >= 1.0);
    let mut order: Vec<usize> = (0..net.len()).collect();
    let mut rng = RandomStream::new(11);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let other = color_net_in_order(&net, &order).unwrap();
    assert!((other.classes as i64 - colored.classes as i64).abs() <= 5, "{} vs {}", other.classes, colored.classes);
    assert!(other.class_separation() >= 1.0);
}

#[test]
fn flattening_single_center() {
    let s = SpaceConfig::h2();
    let x = s.point_at(&[0.6, 0.8], 0.7).unwrap();
    let r = 0.5;
    let id = identity(s);
    let g = local_flatten(&id, &s, &x, r).unwrap();
    let region = RegionMesh::ball(s, &x, 1.2, 0.05).unwrap();
    for p in &region.points {
        let d = s.dist(&x, p);
        let v = g.eval(p).unwrap();
        if d <= 0.5 * r {
            assert!(s.dist(&v, &x) < 1e-12);
        } else if d >= r {
            assert_eq!(v, *p);
        }
    }
    let c = s.point_at(&[1.0, 0.0], 2.0).unwrap();
    let k = constant(s, c);
    let gk = local_flatten(&k, &s, &x, r).unwrap();
    assert!(region.points.iter().all(|p| s.dist(&gk.eval(p).unwrap(), &c) < 1e-12));
}

#[test]
fn flattening_lipschitz_ratio() {
    let s = SpaceConfig::h2();
    let hull = geodesic_h2();
    let ret = Retraction { hull: &hull };
    let id = identity(s);
    for x in [s.origin(), s.point_at(&[0.3, 0.95], 1.2).unwrap()] {
        let r = 0.6;
        let ball = RegionMesh::ball(s, &x, r, 0.04).unwrap();
        for (name, f) in [("identity", &id as &dyn PointMap), ("retraction", &ret as &dyn PointMap)] {
            let before = lipschitz_estimate(&f, &ball, 0.1).unwrap();
            let g = local_flatten(f, &s, &x, r).unwrap();
            let after = lipschitz_estimate(&g, &ball, 0.1).unwrap();
            assert!(after <= 4.0 * before, "{name}: {after} vs {before}");
        }
    }
}

#[test]
fn smoothing_constant_is_identity() {
    let (region, net) = h2_ball_net(0.4);
    let net = color_net(&net).unwrap();
    let s = SpaceConfig::h2();
    let c = s.point_at(&[0.0, 1.0], 1.0).unwrap();
    let sm = smooth_map(constant(s, c), &net).unwrap();
    for p in region.points.iter().step_by(7) {
        assert!(s.dist(&sm.eval(p).unwrap(), &c) < 1e-12);
    }
}

#[test]
fn smoothed_retraction_properties() {
    let s = SpaceConfig::h2();
    let hull = geodesic_h2();
    let r = 0.4;
    let region = RegionMesh::ball(s, &s.point_at(&[0.0, 1.0], 0.5).unwrap(), 2.0, 0.1).unwrap();
    let net = color_net(&build_net(&region, r).unwrap()).unwrap();
    let sm = smooth_map(Retraction { hull: &hull }, &net).unwrap();
    // constant on B(c, r/2) right after the class of c is flattened
    for (i, c) in net.centers.iter().enumerate() {
        let k = net.color[i] + 1;
        let v = sm.eval_upto(c, k).unwrap();
        for p in region.points.iter().filter(|p| s.dist(p, c) < 0.5 * r) {
            assert!(s.dist(&sm.eval_upto(p, k).unwrap(), &v) < 1e-9, "center {i}");
        }
    }
    let lip = lipschitz_estimate(&Retraction { hull: &hull }, &region, 0.15).unwrap();
    let sup = sm.sup_displacement(&region.points).unwrap();
    assert!(sup <= 3.0 * lip * r, "sup {sup} vs lip {lip}");
    assert!(sup > 0.0);
}

#[test]
fn flattening_class_is_local() {
    let hull = geodesic_h2();
    let (region, net) = h2_ball_net(0.4);
    let net = color_net(&net).unwrap();
    let sm = smooth_map(Retraction { hull: &hull }, &net).unwrap();
    for k in 0..net.classes.min(6) {
        for p in region.points.iter().step_by(5) {
            let touched = net.within(p, net.r).iter().any(|&(i, _)| net.color[i] == k);
            if !touched {
                assert_eq!(sm.eval_upto(p, k).unwrap(), sm.eval_upto(p, k + 1).unwrap());
            }
        }
    }
}

#[test]
fn discrete_map_reproduces_vertices_and_roundtrips() {
    let s = SpaceConfig::h2();
    let hull = geodesic_h2();
    let verts = RegionMesh::ball(s, &s.origin(), 1.0, 0.2).unwrap().points;
    let m = DiscreteMap::materialize(&Retraction { hull: &hull }, s, verts.clone()).unwrap();
    for (v, val) in verts.iter().zip(&m.values) {
        assert_eq!(m.eval(v).unwrap(), *val);
    }
    let back = DiscreteMap::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back.values, m.values);
    // off-vertex values stay near the retraction
    let q = s.point_at(&[0.3, 0.4], 0.55).unwrap();
    let exact = retract(&q, &hull).unwrap();
    assert!(s.dist(&m.eval(&q).unwrap(), &exact) < 0.2);
}

#[test]
fn regularity_of_constant_map() {
    let s = SpaceConfig::h3();
    let hull = build_hull(&gen_pair(3, 2.0).unwrap(), PairPolicy::default(), 1.0, &RandomStream::new(0)).unwrap();
    let f = constant(s, s.point_at(&[0.0, 0.0, 1.0], 1.0).unwrap());
    let probes: Vec<_> = (1..4).map(|i| s.point_at(&[0.0, 1.0, 0.0], i as f64).unwrap()).collect();
    let rep = regularity_probe(&f, &s, &hull, &probes, 0.02, None).unwrap();
    assert!(rep.records.iter().all(|r| r.grad_norm < 1e-6 && r.hess_norm < 1e-6));
    assert!(regularity_probe(&f, &s, &hull, &probes, 0.02, Some((&s.origin(), 3.01))).is_err());
}

#[test]
fn geodesic_projection_gradient() {
    let s = SpaceConfig::h2();
    let hull = geodesic_h2();
    let probes: Vec<_> = [0.3, 0.8, 1.5, 2.5, 3.5].iter().map(|&d| s.point_at(&[0.2, 0.98], d).unwrap()).collect();
    let rep = regularity_probe(&Retraction { hull: &hull }, &s, &hull, &probes, 0.02, None).unwrap();
    for r in &rep.records {
        let want = 1.0 / r.dist_to_hull.cosh();
        assert!((r.grad_norm / want - 1.0).abs() < 0.1, "dist {}: {} vs {want}", r.dist_to_hull, r.grad_norm);
    }
}

#[test]
fn smoothed_circle_retraction_decays() {
    let s = SpaceConfig::h3();
    let hull = build_hull(&gen_round_circle(256, 3).unwrap(), PairPolicy::Multiscale, 1.0, &RandomStream::new(1)).unwrap();
    let probes: Vec<_> = (0..9).map(|i| s.point_at(&[0.1, 0.0, 0.995], 1.0 + 0.5 * i as f64).unwrap()).collect();
    let region = RegionMesh::balls(s, &probes, 0.9, 0.15).unwrap();
    let net = color_net(&build_net(&region, 0.4).unwrap()).unwrap();
    let sm = smooth_map(Retraction { hull: &hull }, &net).unwrap();
    let rep = regularity_probe(&sm, &s, &hull, &probes, 0.02, None).unwrap();
    assert!(rep.records.iter().all(|r| r.grad_norm.is_finite() && r.hess_norm.is_finite()));
    let (g, _) = rep.slopes(1.0, 5.0).unwrap();
    assert!(g <= -0.7, "gradient slope {g}\n{}", rep.to_csv());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flatten_fixes_ball_and_outside(dx in -1.0f64..1.0, dy in -1.0f64..1.0, r in 0.2f64..1.0, t in 0.0f64..2.5) {
        let s = SpaceConfig::h2();
        let x = s.point_at(&[dx.cos(), dx.sin()], dy.abs()).unwrap();
        let p = s.point_at(&[dy.cos(), dy.sin()], t).unwrap();
        let id = identity(s);
        let g = local_flatten(&id, &s, &x, r).unwrap();
        let v = g.eval(&p).unwrap();
        let d = s.dist(&x, &p);
        if d <= 0.5 * r { prop_assert!(s.dist(&v, &x) < 1e-9); }
        if d >= r { prop_assert!(s.dist(&v, &p) < 1e-12); }
        // geodesic shrinking never moves a point away from the anchor
        prop_assert!(s.dist(&v, &x) <= d + 1e-12);
    }
}
