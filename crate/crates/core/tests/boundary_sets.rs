use hyperharm::boundary::*;
use hyperharm::geometry::{GeodesicLine, IdealPoint, SpaceConfig, SpacePoint};
use hyperharm::RandomStream;
use proptest::prelude::*;

fn origin3() -> SpacePoint {
    SpaceConfig::h3().origin()
}

/// Optimal cover of points on a circle arc by intervals of angular length `len`
/// (left-to-right sweep is optimal in one dimension).
fn interval_cover(mut angles: Vec<f64>, len: f64) -> usize {
    angles.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut reach = f64::NEG_INFINITY;
    for a in angles {
        if a > reach {
            count += 1;
            reach = a + len;
        }
    }
    count
}

/// Angular length of a visual ball of radius eps at the origin: tan(θ/4) = eps.
fn cap_length(eps: f64) -> f64 {
    8.0 * eps.atan()
}

fn angles_of(s: &BoundarySet) -> Vec<f64> {
    s.points.iter().map(|p| p.c[2].atan2(p.c[1])).collect()
}

/// Oracle slope of log N against log(1/eps) using optimal interval covers.
fn oracle_slope(s: &BoundarySet, window: (f64, f64)) -> f64 {
    let mut xs = vec![];
    let mut ys = vec![];
    let mut e = window.1;
    while e >= window.0 * 0.999 {
        xs.push(-e.ln());
        ys.push((interval_cover(angles_of(s), cap_length(e)) as f64).ln());
        e *= 0.5;
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn circle_covering_against_interval_oracle() {
    let s = gen_round_circle(2048, 3).unwrap();
    let eps = 0.01;
    let greedy = covering_number(&s, eps, &origin3()).unwrap();
    // periodic optimum: ceil(2π / cap)
    let opt = (2.0 * std::f64::consts::PI / cap_length(eps)).ceil() as usize;
    assert_eq!(opt, 79);
    assert!(greedy >= opt && greedy <= 2 * opt, "greedy {greedy} vs optimum {opt}");
}

#[test]
fn circle_dimension_is_one() {
    let s = gen_round_circle(4096, 3).unwrap();
    let d = box_dimension(&s, &origin3()).unwrap();
    assert!((d.beta - 1.0).abs() < 0.05, "{d:?}");
    assert!(d.scales >= 6);
    let o = oracle_slope(&s, d.fit_window);
    assert!((o - 1.0).abs() < 0.05, "oracle {o}");
}

#[test]
fn cantor_dimensions_match_oracle_and_theory() {
    for (ratio, theory) in [(1.0 / 3.0, 2f64.ln() / 3f64.ln()), (0.25, 0.5)] {
        let s = gen_cantor(ratio, 10, 3).unwrap();
        let d = box_dimension(&s, &origin3()).unwrap();
        let o = oracle_slope(&s, d.fit_window);
        assert!((o - theory).abs() < 0.05, "ratio {ratio}: oracle {o}");
        assert!((d.beta - theory).abs() < 0.05, "ratio {ratio}: fit {}", d.beta);
    }
}

#[test]
fn two_point_sets_have_dimension_zero() {
    let s = gen_cantor(1.0 / 3.0, 1, 2).unwrap();
    assert_eq!(s.len(), 2);
    let d = box_dimension(&s, &SpaceConfig::h2().origin()).unwrap();
    assert!(d.beta.abs() < 0.02);
    let p = gen_pair(3, 2.0).unwrap();
    assert!(box_dimension(&p, &origin3()).unwrap().beta.abs() < 0.02);
}

#[test]
fn snowflake_dimension_bracket() {
    let s = gen_snowflake(0.0, 10).unwrap();
    let d0 = box_dimension(&s, &origin3()).unwrap();
    assert!((d0.beta - 1.0).abs() < 0.05, "{d0:?}");
    let s = gen_snowflake(0.3, 12).unwrap();
    let d = box_dimension(&s, &origin3()).unwrap();
    assert!(d.beta > 1.05 && d.beta < 1.9, "{d:?}");
}

#[test]
fn invariant_dimension_examples() {
    let rng = RandomStream::new(17);
    let c = gen_round_circle(4096, 3).unwrap();
    let e = invariant_dimension(&c, &rng, 10, 3.0).unwrap();
    assert!((e.beta - 1.0).abs() < 0.1, "{e:?}");
    let k = gen_cantor(1.0 / 3.0, 10, 3).unwrap();
    let e = invariant_dimension(&k, &rng, 20, 5.0).unwrap();
    assert!(e.beta <= 0.75, "{e:?}");
    let id = box_dimension(&k, &origin3()).unwrap();
    assert!(e.beta >= id.beta - 0.02);
    // more trials with the same seed prefix never lower the estimate
    let e2 = invariant_dimension(&k, &rng, 25, 5.0).unwrap();
    assert!(e2.beta >= e.beta);
}

#[test]
fn union_dimension_is_max() {
    let a = gen_cantor(0.25, 10, 3).unwrap();
    let b = gen_round_circle(4096, 3).unwrap();
    let u = a.union(&b).unwrap();
    let d = box_dimension(&u, &origin3()).unwrap();
    assert!((d.beta - 1.0).abs() < 0.1, "{d:?}");
}

#[test]
fn bent_boundary_is_one_dimensional_and_flat_at_zero() {
    let fam = BentPlaneFamily::new(std::f64::consts::FRAC_PI_4).unwrap();
    let s = bent_boundary(&fam, 4096).unwrap();
    let d = box_dimension(&s, &origin3()).unwrap();
    assert!((d.beta - 1.0).abs() < 0.05, "{d:?}");
    let flat = bent_boundary(&BentPlaneFamily::new(0.0).unwrap(), 64).unwrap();
    let circle = gen_round_circle(64, 3).unwrap();
    for (p, q) in flat.points.iter().zip(&circle.points) {
        assert!((0..4).all(|k| (p.c[k] - q.c[k]).abs() < 1e-12));
    }
}

#[test]
fn bent_unfold_inverts_embed_on_many_points() {
    let fam = BentPlaneFamily::new(std::f64::consts::FRAC_PI_4).unwrap();
    let s2 = SpaceConfig::h2();
    let mut rng = RandomStream::new(99);
    let pts = s2.sample_ball_uniform(&mut rng, &s2.origin(), 6.0, 1000).unwrap();
    let worst = pts
        .iter()
        .map(|x| s2.dist(x, &bent_unfold(&fam, &bent_embed(&fam, x).unwrap()).unwrap()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn bent_diameter_stays_near_its_geodesic() {
    // Morse-lemma instance: a diameter crossing the axis, compared with the
    // geodesic between the ideal endpoints of its image
    let fam = BentPlaneFamily::new(std::f64::consts::FRAC_PI_4).unwrap();
    let s2 = SpaceConfig::h2();
    let s3 = SpaceConfig::h3();
    let dir = [0.3f64, 1.0];
    // ideal endpoints of the bent diameter: one in each half-plane
    let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let (c, s) = (fam.theta.cos(), fam.theta.sin());
    let up = IdealPoint::from_direction(&[dir[0] / n, dir[1] / n, 0.0]).unwrap();
    let down = IdealPoint::from_direction(&[-dir[0] / n, -dir[1] / n * c, -dir[1] / n * s]).unwrap();
    let g = GeodesicLine::Line { from: down, to: up };
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let t = -8.0 + 16.0 * k as f64 / 99.0;
        let x = s2.point_at(&dir, t.abs()).unwrap();
        let x = if t < 0.0 { s2.point_at(&[-dir[0], -dir[1]], -t).unwrap() } else { x };
        let y = bent_embed(&fam, &x).unwrap();
        worst = worst.max(s3.dist_to_line(&y, &g).unwrap().0);
    }
    assert!(worst < 1.0, "Hausdorff excursion {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covering_is_monotone(e1 in 0.002f64..0.5, f in 1.0f64..4.0) {
        let s = gen_cantor(1.0 / 3.0, 8, 3).unwrap();
        let o = origin3();
        let e1 = e1.max(s.resolution * 1.01);
        let n1 = covering_number(&s, e1, &o).unwrap();
        let n2 = covering_number(&s, e1 * f, &o).unwrap();
        prop_assert!(n1 >= n2);
    }

    #[test]
    fn greedy_within_factor_two_of_interval_optimum(e in 0.003f64..0.3) {
        let s = gen_cantor(0.3, 9, 3).unwrap();
        let o = origin3();
        let e = e.max(s.resolution * 1.01);
        let g = covering_number(&s, e, &o).unwrap();
        let opt = interval_cover(angles_of(&s), cap_length(e));
        prop_assert!(g >= opt && g <= 2 * opt, "greedy {} optimum {}", g, opt);
    }
}
