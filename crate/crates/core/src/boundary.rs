//! Sampled subsets of the ideal boundary and their Minkowski dimensions.
//!
//! Visual distances are measured at the origin, where two ideal points at
//! angle `θ` are at visual distance `tan(θ/4)`. Other base points are handled
//! by moving the set with an isometry first.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::linear_fit;
use crate::geometry::{mink, GeodesicLine, IdealPoint, Isometry, SpaceConfig, SpacePoint};
use crate::index::KdTree;
use crate::rng::RandomStream;

/// Parameters of the generator that produced a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Pair { n: usize },
    RoundCircle { m: usize },
    Cantor { ratio: f64, depth: usize, n: usize },
    Snowflake { roughness: f64, depth: usize },
    BentPlane { theta: f64, m: usize },
    Union { parts: Vec<Generator> },
    Image { of: Box<Generator> },
    Custom,
}

/// A finite sample of a set `S` in the ideal boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub n: usize,
    pub points: Vec<IdealPoint>,
    /// Largest nearest-neighbour visual gap at the origin.
    pub resolution: f64,
    pub generator: Generator,
    /// Whether consecutive points trace a closed curve.
    pub cyclic: bool,
    /// Whether consecutive points are ordered along the set (curve or Cantor order).
    pub ordered: bool,
}

/// Visual distance at the origin between two unit directions.
pub fn visual_at_origin(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let chord = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt();
    let theta = 2.0 * (0.5 * chord).min(1.0).asin();
    (0.25 * theta).tan()
}

/// Chord length of the direction cap with visual radius `eps` at the origin.
fn chord_for_visual(eps: f64) -> f64 {
    let theta = (4.0 * eps.atan()).min(std::f64::consts::PI);
    2.0 * (0.5 * theta).sin()
}

impl BoundarySet {
    /// Build from points, computing the resolution by a nearest-neighbour audit.
    pub fn from_points(n: usize, points: Vec<IdealPoint>, generator: Generator, cyclic: bool, ordered: bool) -> Result<Self> {
        SpaceConfig::new(n, 1.0)?;
        if points.is_empty() {
            return Err(Error::DegenerateBoundary("empty sample".into()));
        }
        if let Some(p) = points.iter().find(|p| p.n as usize != n) {
            return Err(Error::DimensionMismatch { expected: n, got: p.n as usize });
        }
        let dirs: Vec<[f64; 3]> = points.iter().map(|p| p.direction()).collect();
        let tree = KdTree::new(dirs.clone());
        let mut res: f64 = 0.0;
        for (i, d) in dirs.iter().enumerate() {
            if let Some((_, c)) = tree.nearest(d, Some(i)) {
                if c < 1e-13 {
                    return Err(Error::DegenerateBoundary(format!("point {i} is duplicated")));
                }
                let theta = 2.0 * (0.5 * c).min(1.0).asin();
                res = res.max((0.25 * theta).tan());
            }
        }
        // two-point (or single-point) sets are exact, not samples of something larger
        if points.len() <= 2 {
            res = 1e-12;
        }
        Ok(Self { n, points, resolution: res, generator, cyclic, ordered })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn directions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.direction()).collect()
    }

    /// Image of the set under an isometry (resolution recomputed at the origin).
    pub fn transformed(&self, g: &Isometry) -> Result<Self> {
        let pts = self.points.iter().map(|p| g.apply_ideal(p)).collect();
        let gen = Generator::Image { of: Box::new(self.generator.clone()) };
        Self::from_points(self.n, pts, gen, self.cyclic, self.ordered)
    }

    /// Union of two samples in the same dimension.
    pub fn union(&self, other: &BoundarySet) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let mut pts = self.points.clone();
        let tree = KdTree::new(self.directions());
        for p in &other.points {
            if tree.nearest(&p.direction(), None).is_none_or(|(_, d)| d > 1e-12) {
                pts.push(*p);
            }
        }
        let gen = Generator::Union { parts: vec![self.generator.clone(), other.generator.clone()] };
        let mut u = Self::from_points(self.n, pts, gen, false, false)?;
        u.resolution = self.resolution.max(other.resolution);
        Ok(u)
    }

    /// Visual diameter at the origin (within a factor of two; exact for symmetric sets).
    pub fn visual_diameter_estimate(&self) -> f64 {
        let dirs = self.directions();
        let far = |q: &[f64; 3]| -> (usize, f64) {
            dirs.iter()
                .enumerate()
                .map(|(i, d)| (i, visual_at_origin(q, d)))
                .fold((0, 0.0), |b, x| if x.1 > b.1 { x } else { b })
        };
        // two sweeps of the farthest-point heuristic
        let (i1, _) = far(&dirs[0]);
        let (_, d2) = far(&dirs[i1]);
        d2
    }
}

/// Two ideal points at angle `angle` in the x1-x2 plane (antipodal for `angle = π`).
pub fn gen_pair(n: usize, angle: f64) -> Result<BoundarySet> {
    SpaceConfig::new(n, 1.0)?;
    if !(angle > 0.0 && angle <= std::f64::consts::PI) {
        return invalid("pair angle must lie in (0, π]");
    }
    let h = 0.5 * angle;
    let mk = |phi: f64| {
        let mut d = vec![0.0; n];
        d[0] = phi.cos();
        d[1] = phi.sin();
        IdealPoint::from_direction(&d)
    };
    BoundarySet::from_points(n, vec![mk(-h)?, mk(h)?], Generator::Pair { n }, false, true)
}

/// `m` equally spaced points on the equator of the sphere at infinity of H3.
pub fn gen_round_circle(m: usize, n: usize) -> Result<BoundarySet> {
    if n == 2 {
        return invalid("the round circle generator needs n = 3 (the boundary of H2 is a circle already)");
    }
    SpaceConfig::new(n, 1.0)?;
    if m < 3 {
        return invalid("round circle needs m >= 3");
    }
    let pts = (0..m)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            IdealPoint::from_direction(&[phi.cos(), phi.sin(), 0.0])
        })
        .collect::<Result<Vec<_>>>()?;
    BoundarySet::from_points(3, pts, Generator::RoundCircle { m }, true, true)
}

/// Endpoints of the level `depth - 1` intervals of the middle-interval Cantor
/// construction with ratio `ratio`, placed on the arc of angles `[-π/2, π/2]`
/// of the circle `x3 = 0`.
pub fn gen_cantor(ratio: f64, depth: usize, n: usize) -> Result<BoundarySet> {
    SpaceConfig::new(n, 1.0)?;
    if !(ratio > 0.0 && ratio < 0.5) {
        return invalid(format!("cantor ratio must lie in (0, 1/2), got {ratio}"));
    }
    if depth < 1 || depth > 24 {
        return invalid("cantor depth must lie in 1..=24");
    }
    let mut intervals = vec![(0.0f64, 1.0f64)];
    for _ in 1..depth {
        intervals = intervals
            .iter()
            .flat_map(|&(a, b)| {
                let l = (b - a) * ratio;
                [(a, a + l), (b - l, b)]
            })
            .collect();
    }
    let arc = std::f64::consts::PI;
    let pts = intervals
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .map(|t| {
            let phi = -0.5 * arc + arc * t;
            let mut d = vec![0.0; n];
            d[0] = phi.cos();
            d[1] = phi.sin();
            IdealPoint::from_direction(&d)
        })
        .collect::<Result<Vec<_>>>()?;
    BoundarySet::from_points(n, pts, Generator::Cantor { ratio, depth, n }, false, true)
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let s = dot(&a, &a).sqrt();
    [a[0] / s, a[1] / s, a[2] / s]
}

/// Whether the short great-circle arcs `ab` and `cd` cross at an interior point.
fn arcs_cross(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> bool {
    let n1 = cross(a, b);
    let n2 = cross(c, d);
    let (sc, sd) = (dot(&n1, c), dot(&n1, d));
    let (sa, sb) = (dot(&n2, a), dot(&n2, b));
    if sc * sd >= 0.0 || sa * sb >= 0.0 {
        return false;
    }
    // the two candidate intersections are ±(n1 x n2); require the one inside both arcs
    let x = cross(&n1, &n2);
    let s = if dot(&x, &[a[0] + b[0], a[1] + b[1], a[2] + b[2]]) >= 0.0 { 1.0 } else { -1.0 };
    let x = [s * x[0], s * x[1], s * x[2]];
    dot(&x, &[c[0] + d[0], c[1] + d[1], c[2] + d[2]]) > 0.0
}

/// Count crossings among the closed polygon's arcs (grid-accelerated).
fn polygon_crossings(p: &[[f64; 3]]) -> usize {
    let m = p.len();
    let maxlen = (0..m)
        .map(|i| {
            let j = (i + 1) % m;
            ((0..3).map(|k| (p[i][k] - p[j][k]).powi(2)).sum::<f64>()).sqrt()
        })
        .fold(0.0, f64::max);
    let mids: Vec<[f64; 3]> = (0..m)
        .map(|i| {
            let j = (i + 1) % m;
            [0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1]), 0.5 * (p[i][2] + p[j][2])]
        })
        .collect();
    let tree = KdTree::new(mids.clone());
    let mut count = 0;
    for i in 0..m {
        let i1 = (i + 1) % m;
        tree.for_each_within(&mids[i], maxlen * 1.01, |j, _| {
            let j1 = (j + 1) % m;
            if j <= i || j == i1 || j1 == i {
                return;
            }
            if arcs_cross(&p[i], &p[i1], &p[j], &p[j1]) {
                count += 1;
            }
        });
    }
    count
}

/// Midpoint-displacement quasicircle in the sphere at infinity of H3.
///
/// Each level inserts the spherical midpoint of every arc, pushed off the arc
/// by `roughness` times the chord, on alternating sides.
pub fn gen_snowflake(roughness: f64, depth: usize) -> Result<BoundarySet> {
    if !(0.0..0.5).contains(&roughness) {
        return invalid(format!("roughness must lie in [0, 0.5), got {roughness}"));
    }
    if depth > 16 {
        return invalid("snowflake depth must be at most 16");
    }
    let mut pts: Vec<[f64; 3]> = (0..4)
        .map(|k| {
            let phi = 0.5 * std::f64::consts::PI * k as f64;
            [phi.cos(), phi.sin(), 0.0]
        })
        .collect();
    for _ in 0..depth {
        let m = pts.len();
        let mut next = Vec::with_capacity(2 * m);
        for i in 0..m {
            let a = pts[i];
            let b = pts[(i + 1) % m];
            let gap = ((0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()).sqrt();
            let mid = normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            let off = normalize(cross(&a, &b));
            // alternate sides so the curve stays simple
            let s = if i % 2 == 0 { roughness * gap } else { -roughness * gap };
            next.push(a);
            next.push(normalize([mid[0] + s * off[0], mid[1] + s * off[1], mid[2] + s * off[2]]));
        }
        pts = next;
    }
    let crossings = polygon_crossings(&pts);
    if crossings > 0 {
        return Err(Error::DegenerateBoundary(format!(
            "snowflake with roughness {roughness} self-intersects at depth {depth} ({crossings} crossings)"
        )));
    }
    let ideal = pts.iter().map(|d| IdealPoint::from_direction(d)).collect::<Result<Vec<_>>>()?;
    BoundarySet::from_points(3, ideal, Generator::Snowflake { roughness, depth }, true, true)
}

/// Greedy cover of the sample by visual `eps`-balls seen from `base`.
pub fn covering_number(s: &BoundarySet, eps: f64, base: &SpacePoint) -> Result<usize> {
    if !(eps > s.resolution) {
        return Err(Error::Undersampled { eps, resolution: s.resolution });
    }
    let dirs = directions_from(s, base)?;
    Ok(greedy_cover(&dirs, eps))
}

fn directions_from(s: &BoundarySet, base: &SpacePoint) -> Result<Vec<[f64; 3]>> {
    if base.n as usize != s.n {
        return Err(Error::DimensionMismatch { expected: s.n, got: base.n as usize });
    }
    if base.c[0] == 1.0 {
        return Ok(s.directions());
    }
    let g = Isometry::boost_to(&base.c).inverse();
    Ok(s.points.iter().map(|p| g.apply_ideal(p).direction()).collect())
}

fn greedy_cover(dirs: &[[f64; 3]], eps: f64) -> usize {
    let tree = KdTree::new(dirs.to_vec());
    let chord = chord_for_visual(eps);
    let mut covered = vec![false; dirs.len()];
    let mut count = 0;
    for i in 0..dirs.len() {
        if covered[i] {
            continue;
        }
        count += 1;
        tree.for_each_within(&dirs[i], chord, |j, _| covered[j] = true);
    }
    count
}

/// Per-trial record of the invariant dimension search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTrial {
    pub trial: usize,
    pub translation: f64,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub beta: f64,
    pub fit_window: (f64, f64),
    pub residual: f64,
    pub scales: usize,
    pub per_gamma: Option<Vec<GammaTrial>>,
}

const MIN_SCALES: usize = 6;

/// Slope of `log N(eps)` against `log(1/eps)` over dyadic scales between
/// twice the resolution and an eighth of the diameter.
pub fn box_dimension(s: &BoundarySet, base: &SpacePoint) -> Result<DimensionEstimate> {
    let moved;
    let set = if base.c[0] == 1.0 {
        s
    } else {
        moved = s.transformed(&Isometry::boost_to(&base.c).inverse())?;
        &moved
    };
    let dirs = set.directions();
    let diam = set.visual_diameter_estimate();
    let eps_max = 0.125 * diam;
    let eps_min = 2.0 * set.resolution;
    let mut scales = Vec::new();
    let mut e = eps_max;
    while e >= eps_min && scales.len() < 40 {
        scales.push(e);
        e *= 0.5;
    }
    if scales.len() < MIN_SCALES {
        return Err(Error::InsufficientScales { usable: scales.len(), needed: MIN_SCALES });
    }
    let x: Vec<f64> = scales.iter().map(|e| -e.ln()).collect();
    let y: Vec<f64> = scales.iter().map(|&e| (greedy_cover(&dirs, e) as f64).ln()).collect();
    let (m, c, _) = linear_fit(&x, &y, None)?;
    let rms = (x.iter().zip(&y).map(|(xi, yi)| (yi - c - m * xi).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    Ok(DimensionEstimate {
        beta: m.max(0.0),
        fit_window: (*scales.last().unwrap_or(&eps_min), eps_max),
        residual: rms,
        scales: scales.len(),
        per_gamma: None,
    })
}

/// Largest fitted slope over the identity and `trials` random isometries with
/// translation length uniform in `[0, t_max]`. Trials whose image has too few
/// usable scales are recorded with a NaN slope and ignored.
pub fn invariant_dimension(
    s: &BoundarySet,
    rng: &RandomStream,
    trials: usize,
    t_max: f64,
) -> Result<DimensionEstimate> {
    if trials < 1 {
        return invalid("need at least one trial");
    }
    let space = SpaceConfig::new(s.n, 1.0)?;
    let mut best = box_dimension(s, &space.origin())?;
    let mut table = vec![GammaTrial { trial: 0, translation: 0.0, slope: best.beta }];
    for k in 0..trials {
        let mut r = rng.child(k as u64);
        let t = t_max * r.uniform();
        let g = space.random_far_isometry(&mut r, t);
        let est = s.transformed(&g).and_then(|img| box_dimension(&img, &space.origin()));
        let slope = match est {
            Ok(e) => {
                if e.beta > best.beta {
                    best = e.clone();
                }
                e.beta
            }
            Err(Error::InsufficientScales { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        table.push(GammaTrial { trial: k + 1, translation: t, slope });
    }
    best.per_gamma = Some(table);
    Ok(best)
}

/// H2 bent along the x1-axis geodesic into H3: the half-plane `x2 < 0` is
/// rotated by `theta` in the (x2, x3) plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BentPlaneFamily {
    pub theta: f64,
}

impl BentPlaneFamily {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
            return invalid(format!("bending angle must lie in [0, π/2), got {theta}"));
        }
        Ok(Self { theta })
    }

    pub fn axis(&self) -> GeodesicLine {
        GeodesicLine::Line {
            from: IdealPoint { c: [1.0, -1.0, 0.0, 0.0], n: 3 },
            to: IdealPoint { c: [1.0, 1.0, 0.0, 0.0], n: 3 },
        }
    }

    fn rotate(&self, c: &[f64; 4], sign: f64) -> [f64; 4] {
        let (s, co) = (sign * self.theta).sin_cos();
        [c[0], c[1], co * c[2] - s * c[3], s * c[2] + co * c[3]]
    }

    /// The rotation applied to the lower half-plane, as an isometry of H3.
    pub fn lower_rotation(&self) -> Isometry {
        let (s, c) = self.theta.sin_cos();
        Isometry::rotation(&[[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }
}

pub fn bent_embed(fam: &BentPlaneFamily, x: &SpacePoint) -> Result<SpacePoint> {
    if x.n != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.n as usize });
    }
    let c = [x.c[0], x.c[1], x.c[2], 0.0];
    let c = if c[2] < 0.0 { fam.rotate(&c, 1.0) } else { c };
    Ok(SpacePoint { c, n: 3 })
}

/// Ideal boundary of the bent plane: `m` equally spaced boundary angles.
pub fn bent_boundary(fam: &BentPlaneFamily, m: usize) -> Result<BoundarySet> {
    if m < 4 {
        return invalid("bent boundary needs m >= 4");
    }
    let pts = (0..m)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            let c = [1.0, phi.cos(), phi.sin(), 0.0];
            let c = if c[2] < 0.0 { fam.rotate(&c, 1.0) } else { c };
            IdealPoint::from_direction(&[c[1], c[2], c[3]])
        })
        .collect::<Result<Vec<_>>>()?;
    BoundarySet::from_points(3, pts, Generator::BentPlane { theta: fam.theta, m }, true, true)
}

/// Nearest point of the closed half-plane `{x3 = 0, x2 >= 0}` to `y`, with its distance (model units).
fn project_upper_half(y: &[f64; 4]) -> (f64, [f64; 4]) {
    if y[2] >= 0.0 {
        // orthogonal projection to the plane x3 = 0
        let d = y[3].asinh();
        let ch = d.cosh();
        return (d.abs(), [y[0] / ch, y[1] / ch, y[2] / ch, 0.0]);
    }
    // otherwise the nearest point lies on the axis {x2 = x3 = 0}
    let s2 = y[2] * y[2] + y[3] * y[3];
    let d = s2.sqrt().asinh();
    let ch = d.cosh();
    (d, [y[0] / ch, y[1] / ch, 0.0, 0.0])
}

/// Quasi-inverse of [`bent_embed`]: nearest-point projection to the bent
/// surface followed by the inverse of the half-plane isometry. Ties go to the
/// upper half-plane.
pub fn bent_unfold(fam: &BentPlaneFamily, y: &SpacePoint) -> Result<SpacePoint> {
    if y.n != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: y.n as usize });
    }
    let (d1, f1) = project_upper_half(&y.c);
    let z = fam.rotate(&y.c, -1.0);
    let zr = [z[0], z[1], -z[2], z[3]];
    let (d2, f2) = project_upper_half(&zr);
    let c = if d1 <= d2 { f1 } else { [f2[0], f2[1], -f2[2], 0.0] };
    Ok(SpacePoint { c: [c[0], c[1], c[2], 0.0], n: 2 }.renormalized())
}

/// Minkowski residual of an ideal point, for audits.
pub fn null_residual(p: &IdealPoint) -> f64 {
    mink(&p.c, &p.c).abs()
}
