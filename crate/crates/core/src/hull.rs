//! Unions of geodesics spanned by pairs of boundary samples, used as a
//! stand-in for the convex hull, together with the nearest-point retraction
//! and the geometric probes built on it.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::boundary::{visual_at_origin, BoundarySet};
use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay, DecayFit};
use crate::geometry::{line_foot, mink, Coords, GeodesicLine, IdealPoint, Isometry, SpaceConfig, SpacePoint};
use crate::index::KdTree;
use crate::rng::RandomStream;

/// How endpoint pairs are selected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairPolicy {
    /// All pairs when they fit in the budget, stratified sampling otherwise.
    Auto { budget: usize },
    All,
    /// 25% near-diameter pairs, 75% uniform pairs.
    Stratified { budget: usize },
    /// Pairs `(i, i + 2^k)` along the sample order, for every `k`.
    Multiscale,
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy::Auto { budget: 4096 }
    }
}

/// Serialized form of a hull.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HullData {
    pub n: usize,
    pub a: f64,
    pub pair_policy: PairPolicy,
    pub pad: f64,
    pub points: Vec<IdealPoint>,
    pub pairs: Vec<(u32, u32)>,
}

/// A finite union of geodesic lines with endpoints in a boundary sample.
///
/// Lines are stored sorted by their distance from the origin; "line index"
/// always refers to this order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "HullData", try_from = "HullData")]
pub struct GeodesicHull {
    pub space: SpaceConfig,
    pub pair_policy: PairPolicy,
    /// Measured slack between this hull and the true convex hull (diagnostic).
    pub pad: f64,
    points: Vec<IdealPoint>,
    dirs: Vec<[f64; 3]>,
    pairs: Vec<(u32, u32)>,
    // 1 / (-<y_i, y_j>)
    w: Vec<f64>,
    // model distance from the origin
    r_line: Vec<f64>,
    adj_start: Vec<u32>,
    adj: Vec<u32>,
    tree: KdTree,
}

impl From<GeodesicHull> for HullData {
    fn from(h: GeodesicHull) -> Self {
        HullData {
            n: h.space.n,
            a: h.space.a,
            pair_policy: h.pair_policy,
            pad: h.pad,
            points: h.points,
            pairs: h.pairs,
        }
    }
}

impl TryFrom<HullData> for GeodesicHull {
    type Error = Error;
    fn try_from(d: HullData) -> Result<Self> {
        let space = SpaceConfig::new(d.n, d.a)?;
        let mut h = GeodesicHull::from_pairs(space, d.points, d.pairs, d.pair_policy)?;
        h.pad = d.pad;
        Ok(h)
    }
}

/// Result of a hull distance query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HullHit {
    pub dist: f64,
    pub foot: SpacePoint,
    pub line: usize,
}

fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl GeodesicHull {
    /// Assemble a hull from explicit endpoint pairs.
    pub fn from_pairs(
        space: SpaceConfig,
        points: Vec<IdealPoint>,
        pairs: Vec<(u32, u32)>,
        pair_policy: PairPolicy,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("hull needs at least one line");
        }
        let dirs: Vec<[f64; 3]> = points.iter().map(|p| p.direction()).collect();
        let mut seen = HashSet::new();
        let mut lines: Vec<(u32, u32, f64, f64)> = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let (i, j) = (i.min(j), i.max(j));
            if i == j || j as usize >= points.len() {
                return invalid(format!("bad endpoint pair ({i}, {j})"));
            }
            if !seen.insert((i, j)) {
                continue;
            }
            let c2 = chord2(&dirs[i as usize], &dirs[j as usize]);
            if c2 < 1e-24 {
                return Err(Error::DegenerateGeodesic(format!("pair ({i}, {j}) has coincident endpoints")));
            }
            let w = 2.0 / c2;
            let r = (2.0 * w).sqrt().acosh();
            lines.push((i, j, w, r));
        }
        lines.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut deg = vec![0u32; points.len() + 1];
        for l in &lines {
            deg[l.0 as usize] += 1;
            deg[l.1 as usize] += 1;
        }
        let mut adj_start = vec![0u32; points.len() + 1];
        for i in 0..points.len() {
            adj_start[i + 1] = adj_start[i] + deg[i];
        }
        let mut fill = adj_start.clone();
        let mut adj = vec![0u32; adj_start[points.len()] as usize];
        for (k, l) in lines.iter().enumerate() {
            for e in [l.0, l.1] {
                adj[fill[e as usize] as usize] = k as u32;
                fill[e as usize] += 1;
            }
        }
        Ok(Self {
            space,
            pair_policy,
            pad: 0.0,
            tree: KdTree::new(dirs.clone()),
            points,
            dirs,
            pairs: lines.iter().map(|l| (l.0, l.1)).collect(),
            w: lines.iter().map(|l| l.2).collect(),
            r_line: lines.iter().map(|l| l.3).collect(),
            adj_start,
            adj,
        })
    }

    pub fn num_lines(&self) -> usize {
        self.pairs.len()
    }

    pub fn endpoints(&self, line: usize) -> (IdealPoint, IdealPoint) {
        let (i, j) = self.pairs[line];
        (self.points[i as usize], self.points[j as usize])
    }

    pub fn line(&self, k: usize) -> GeodesicLine {
        let (from, to) = self.endpoints(k);
        GeodesicLine::Line { from, to }
    }

    pub fn lines(&self) -> Vec<GeodesicLine> {
        (0..self.num_lines()).map(|k| self.line(k)).collect()
    }

    /// Riemannian distance from the origin to line `k`.
    pub fn line_radius(&self, k: usize) -> f64 {
        self.r_line[k] / self.space.a
    }

    pub fn sample_points(&self) -> &[IdealPoint] {
        &self.points
    }

    /// Lines restricted to the first `count` (in index order), for nesting tests.
    pub fn prefix(&self, count: usize) -> Result<Self> {
        let pairs = self.pairs[..count.min(self.pairs.len())].to_vec();
        Self::from_pairs(self.space, self.points.clone(), pairs, self.pair_policy)
    }

    #[inline]
    fn a_coeff(&self, i: usize, pn: f64, phat: &[f64; 3], base: f64) -> f64 {
        // -<p, y_i> = 1/(p0+|p|) + |p| |p^ - s_i|^2 / 2, stable far from the origin
        base + 0.5 * pn * chord2(phat, &self.dirs[i])
    }

    /// Nearest line within Riemannian distance `cap` (`None` if there is none).
    pub fn nearest_within(&self, p: &SpacePoint, cap: f64) -> Option<HullHit> {
        let pc = &p.c;
        let pn = (pc[1] * pc[1] + pc[2] * pc[2] + pc[3] * pc[3]).sqrt();
        let base = 1.0 / (pc[0] + pn);
        let phat = if pn > 0.0 { [pc[1] / pn, pc[2] / pn, pc[3] / pn] } else { [1.0, 0.0, 0.0] };
        let rho = pn.asinh();
        let cap_m = (cap * self.space.a).min(700.0);
        let cap_c2 = if cap.is_finite() { cap_m.cosh().powi(2) } else { f64::INFINITY };
        let mut best_c2 = cap_c2;
        let mut best: Option<usize> = None;
        let consider = |k: usize, ai: f64, aj: f64, best_c2: &mut f64, best: &mut Option<usize>| {
            let c2 = 2.0 * ai * aj * self.w[k];
            if c2 < *best_c2 || (c2 == *best_c2 && best.is_some_and(|b| k < b)) {
                *best_c2 = c2;
                *best = Some(k);
            }
        };
        let kappa = if pn > 0.0 { 2.0 * cap_m.cosh() / pn } else { f64::INFINITY };
        if kappa < 2.0 {
            self.tree.for_each_within(&phat, kappa, |i, _| {
                let ai = self.a_coeff(i, pn, &phat, base);
                let (s, e) = (self.adj_start[i] as usize, self.adj_start[i + 1] as usize);
                for &k in &self.adj[s..e] {
                    let k = k as usize;
                    if self.r_line[k] > rho + cap_m {
                        continue;
                    }
                    let (a, b) = self.pairs[k];
                    let j = if a as usize == i { b } else { a } as usize;
                    let aj = self.a_coeff(j, pn, &phat, base);
                    consider(k, ai, aj, &mut best_c2, &mut best);
                }
            });
        } else {
            for k in 0..self.pairs.len() {
                // dist(p, L) >= r_L - rho
                let gap = self.r_line[k] - rho;
                if gap > 0.0 && gap.cosh().powi(2) > best_c2 {
                    break;
                }
                let (a, b) = self.pairs[k];
                let ai = self.a_coeff(a as usize, pn, &phat, base);
                let aj = self.a_coeff(b as usize, pn, &phat, base);
                consider(k, ai, aj, &mut best_c2, &mut best);
            }
        }
        let k = best?;
        let (i, j) = self.pairs[k];
        let (yi, yj) = (&self.points[i as usize].c, &self.points[j as usize].c);
        let (_, foot) = line_foot(pc, yi, yj, self.w[k]);
        let foot = SpacePoint { c: foot, n: p.n }.renormalized();
        let d = SpaceConfig::model_distance(pc, &foot.c) / self.space.a;
        if d > cap {
            return None;
        }
        Some(HullHit { dist: d, foot, line: k })
    }

    /// Distance to the hull with the minimizing foot (smallest line index on ties).
    pub fn nearest(&self, p: &SpacePoint) -> HullHit {
        for cap in [1.5, 4.0] {
            if let Some(h) = self.nearest_within(p, cap) {
                return h;
            }
        }
        self.nearest_within(p, f64::INFINITY).expect("hull is nonempty")
    }

    /// Whether `p` lies in the closed `d`-neighbourhood of the hull.
    pub fn contains_within(&self, p: &SpacePoint, d: f64) -> bool {
        self.nearest_within(p, d).is_some()
    }
}

/// Select endpoint pairs from a boundary sample and build the hull.
pub fn build_hull(s: &BoundarySet, policy: PairPolicy, a: f64, rng: &RandomStream) -> Result<GeodesicHull> {
    let m = s.len();
    if m < 2 {
        return Err(Error::DegenerateBoundary("hull needs at least two boundary points".into()));
    }
    let space = SpaceConfig::new(s.n, a)?;
    let total = m * (m - 1) / 2;
    let all = || -> Vec<(u32, u32)> {
        (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i as u32, j as u32))).collect()
    };
    let pairs = match policy {
        PairPolicy::All => all(),
        PairPolicy::Auto { budget } if total <= budget => all(),
        PairPolicy::Auto { budget } | PairPolicy::Stratified { budget } => {
            if total <= budget {
                all()
            } else {
                stratified_pairs(s, budget, &mut rng.child(0))
            }
        }
        PairPolicy::Multiscale => {
            if !s.ordered {
                return invalid("multiscale pairing needs an ordered sample");
            }
            let mut pairs = Vec::new();
            let mut step = 1;
            while step < m {
                for i in 0..m {
                    let j = i + step;
                    if j < m {
                        pairs.push((i as u32, j as u32));
                    } else if s.cyclic && (j % m) != i {
                        pairs.push((i as u32, (j % m) as u32));
                    }
                }
                step *= 2;
            }
            if !s.cyclic {
                pairs.push((0, (m - 1) as u32));
            }
            pairs
        }
    };
    GeodesicHull::from_pairs(space, s.points.clone(), pairs, policy)
}

fn stratified_pairs(s: &BoundarySet, budget: usize, rng: &mut RandomStream) -> Vec<(u32, u32)> {
    let m = s.len();
    let dirs = s.directions();
    let diam = s.visual_diameter_estimate();
    let mut set: HashSet<(u32, u32)> = HashSet::new();
    let near = budget / 4;
    let mut tries = 0;
    while set.len() < near && tries < 200 * budget {
        tries += 1;
        let (i, j) = (rng.below(m), rng.below(m));
        if i != j && visual_at_origin(&dirs[i], &dirs[j]) >= 0.5 * diam {
            set.insert((i.min(j) as u32, i.max(j) as u32));
        }
    }
    while set.len() < budget {
        let (i, j) = (rng.below(m), rng.below(m));
        if i != j {
            set.insert((i.min(j) as u32, i.max(j) as u32));
        }
    }
    let mut v: Vec<(u32, u32)> = set.into_iter().collect();
    v.sort_unstable();
    v
}

pub fn dist_to_hull(p: &SpacePoint, k: &GeodesicHull) -> Result<(f64, SpacePoint)> {
    if p.n as usize != k.space.n {
        return Err(Error::DimensionMismatch { expected: k.space.n, got: p.n as usize });
    }
    let h = k.nearest(p);
    Ok((h.dist, h.foot))
}

pub fn retract(p: &SpacePoint, k: &GeodesicHull) -> Result<SpacePoint> {
    Ok(dist_to_hull(p, k)?.1)
}

/// Maximum retraction stretch per distance shell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzProfile {
    pub shells: Vec<f64>,
    pub ratios: Vec<f64>,
    pub pairs_used: Vec<usize>,
    /// Pairs whose feet landed on different lines (excluded from the ratios).
    pub seam_pairs: Vec<usize>,
    pub fit: DecayFit,
}

/// Random unit tangent vector at `x` orthogonal to the model vector `u` (if given).
///
/// Vectors are drawn at the origin and pushed forward by the boost to `x`,
/// which avoids cancellation far from the origin.
fn random_unit_tangent(space: &SpaceConfig, rng: &mut RandomStream, x: &SpacePoint, u: Option<&Coords>) -> Coords {
    let b = Isometry::boost_to(&x.c);
    let u0 = u.map(|u| {
        let w = b.inverse().apply_coords(u);
        let l = (w[1] * w[1] + w[2] * w[2] + w[3] * w[3]).sqrt();
        [0.0, w[1] / l, w[2] / l, w[3] / l]
    });
    loop {
        let mut v = [0.0; 4];
        for c in v.iter_mut().skip(1).take(space.n) {
            *c = rng.normal();
        }
        if let Some(u0) = u0 {
            let s: f64 = (1..4).map(|k| v[k] * u0[k]).sum();
            for k in 1..4 {
                v[k] -= s * u0[k];
            }
        }
        let l = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        if l > 1e-8 {
            let s = space.a / l;
            return b.apply_coords(&[0.0, v[1] * s, v[2] * s, v[3] * s]);
        }
    }
}

/// Sample a point at hull distance in `[s, s + width]` near the deep part of the hull.
fn sample_near_hull(
    k: &GeodesicHull,
    rng: &mut RandomStream,
    s: f64,
    width: f64,
    reach: f64,
) -> Option<(SpacePoint, HullHit)> {
    let space = &k.space;
    // lines passing within `reach` of the origin
    let limit = k.r_line.partition_point(|&r| r <= reach * space.a).max(1);
    let line = k.line(rng.below(limit));
    let t = rng.uniform_in(-reach, reach);
    let foot = space.geodesic_point(&line, t).ok()?;
    let (_, dir) = tangent_of(space, &line, &foot)?;
    let nu = random_unit_tangent(space, rng, &foot, Some(&dir));
    let dist = s + width * rng.uniform();
    let x = SpaceConfig::exp_raw(&foot, &[nu[0] * dist, nu[1] * dist, nu[2] * dist, nu[3] * dist]);
    let h = k.nearest_within(&x, s + width + 1.0)?;
    (h.dist >= s && h.dist <= s + width).then_some((x, h))
}

fn tangent_of(space: &SpaceConfig, g: &GeodesicLine, at: &SpacePoint) -> Option<(SpacePoint, Coords)> {
    let q = space.geodesic_point(g, 0.0).ok()?;
    let v = SpaceConfig::log_raw(at, &q);
    let l = mink(&v, &v).sqrt();
    if l < 1e-12 {
        // `at` is the parameter origin: use a nearby point instead
        let q = space.geodesic_point(g, 1.0).ok()?;
        let v = SpaceConfig::log_raw(at, &q);
        let l = mink(&v, &v).sqrt();
        return Some((q, [v[0] / l, v[1] / l, v[2] / l, v[3] / l]));
    }
    Some((q, [v[0] / l, v[1] / l, v[2] / l, v[3] / l]))
}

/// Per shell `s`, the largest observed `dist(r x, r y) / dist(x, y)` over
/// close pairs at hull distance in `[s, s + 0.5]`, and the fitted log-slope.
pub fn lipschitz_profile(
    k: &GeodesicHull,
    rng: &RandomStream,
    shells: &[f64],
    pairs_per_shell: usize,
    pair_gap: f64,
) -> Result<LipschitzProfile> {
    if shells.len() < 2 {
        return invalid("need at least two shells");
    }
    if !(pair_gap > 0.0 && pair_gap < 0.5) {
        return invalid("pair gap must lie in (0, 0.5)");
    }
    let space = k.space;
    let mut ratios = Vec::new();
    let mut used = Vec::new();
    let mut seams = Vec::new();
    for (si, &s) in shells.iter().enumerate() {
        let mut r = rng.child(si as u64);
        let mut best: f64 = 0.0;
        let (mut got, mut seam, mut attempts) = (0usize, 0usize, 0usize);
        while got < pairs_per_shell {
            attempts += 1;
            if attempts > 200 * pairs_per_shell + 1000 {
                return Err(Error::Numerical(format!("lipschitz sampling budget exhausted at shell {s}")));
            }
            let Some((x, hx)) = sample_near_hull(k, &mut r, s, 0.5, 2.0) else { continue };
            let v = random_unit_tangent(&space, &mut r, &x, None);
            let y = SpaceConfig::exp_raw(&x, &[v[0] * pair_gap, v[1] * pair_gap, v[2] * pair_gap, v[3] * pair_gap]);
            // the segment [x, y] must stay outside N_s
            let outside = (1..=4).all(|q| {
                let t = pair_gap * q as f64 / 4.0;
                let z = SpaceConfig::exp_raw(&x, &[v[0] * t, v[1] * t, v[2] * t, v[3] * t]);
                k.nearest_within(&z, s).is_none()
            });
            if !outside {
                continue;
            }
            let hy = k.nearest(&y);
            got += 1;
            if hy.line != hx.line {
                seam += 1;
                continue;
            }
            let ratio = space.dist(&hx.foot, &hy.foot) / space.dist(&x, &y);
            best = best.max(ratio);
        }
        if !(best > 0.0) {
            return Err(Error::Numerical(format!("no usable pairs at shell {s}")));
        }
        ratios.push(best);
        used.push(got - seam);
        seams.push(seam);
    }
    let fit = fit_decay(shells, &ratios, None)?;
    Ok(LipschitzProfile { shells: shells.to_vec(), ratios, pairs_used: used, seam_pairs: seams, fit })
}

/// Radial-projection gaps of the neighbourhood of the cone over `S`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeReport {
    pub radii: Vec<f64>,
    pub max_gap: Vec<f64>,
    pub fit: DecayFit,
}

/// For each `R`, sample points of `N_C(Cone(x, S))` outside `B(x, R)` and
/// record the largest visual distance (at `x`) from their radial projection
/// to `S`.
pub fn cone_inclusion_probe(
    s: &BoundarySet,
    space: &SpaceConfig,
    x: &SpacePoint,
    radii: &[f64],
    c: f64,
    samples: usize,
    rng: &RandomStream,
) -> Result<ConeReport> {
    if radii.iter().any(|&r| r < 1.0) {
        return invalid("cone probe radii must be at least 1");
    }
    if radii.len() < 2 {
        return invalid("need at least two radii");
    }
    let to_origin = Isometry::boost_to(&x.c).inverse();
    let dirs: Vec<[f64; 3]> = s.points.iter().map(|p| to_origin.apply_ideal(p).direction()).collect();
    let tree = KdTree::new(dirs.clone());
    let o = space.origin();
    let mut gaps = Vec::new();
    for (ri, &big_r) in radii.iter().enumerate() {
        let mut r = rng.child(ri as u64);
        let mut worst: f64 = 0.0;
        let mut got = 0;
        while got < samples {
            let d = dirs[r.below(dirs.len())];
            let t = big_r + c + 2.0 * r.uniform();
            let on_cone = space.point_at(&d[..space.n], t)?;
            let v = random_unit_tangent(space, &mut r, &on_cone, None);
            let off = c * r.uniform();
            let p = SpaceConfig::exp_raw(&on_cone, &[v[0] * off, v[1] * off, v[2] * off, v[3] * off]);
            if space.dist(&o, &p) < big_r {
                continue;
            }
            got += 1;
            let pn = (p.c[1] * p.c[1] + p.c[2] * p.c[2] + p.c[3] * p.c[3]).sqrt();
            let q = [p.c[1] / pn, p.c[2] / pn, p.c[3] / pn];
            let (_, chord) = tree.nearest(&q, None).expect("nonempty");
            let theta = 2.0 * (0.5 * chord).min(1.0).asin();
            worst = worst.max((0.25 * theta).tan());
        }
        gaps.push(worst.max(1e-300));
    }
    let fit = fit_decay(radii, &gaps, None)?;
    Ok(ConeReport { radii: radii.to_vec(), max_gap: gaps, fit })
}

/// How annulus points are drawn for neighbourhood volumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnulusSampler {
    /// Uniform in the annulus; weight = annulus volume.
    Uniform,
    /// Uniform radius, direction drawn from the caps of chord
    /// `2 cosh(d) / sinh(r0)` around the sample directions seen from the
    /// centre. Every point of `N_d(K)` in the annulus lies in one of these
    /// caps, so the weighted estimator is unbiased.
    #[default]
    ConeCaps,
}

/// One weighted annulus sample: distance from the centre, importance weight,
/// and whether it lies in the neighbourhood (with its hull distance if so).
#[derive(Clone, Copy, Debug)]
pub struct WeightedSample {
    pub rho: f64,
    pub weight: f64,
    pub hit: bool,
    pub point: SpacePoint,
    pub hull_dist: Option<f64>,
}

impl WeightedSample {
    fn new(hull: &GeodesicHull, y: SpacePoint, rho: f64, weight: f64, d: f64) -> Self {
        let hull_dist = hull.nearest_within(&y, d).map(|h| h.dist);
        Self { rho, weight, hit: hull_dist.is_some(), point: y, hull_dist }
    }
}

/// Importance sampler for `vol(An ∩ N_d(K))` around a centre `x`.
pub struct NearHullSampler<'a> {
    hull: &'a GeodesicHull,
    x: SpacePoint,
    boost: Isometry,
    dirs: Vec<[f64; 3]>,
    tree: KdTree,
    pub kind: AnnulusSampler,
}

/// Solid angle of the cap of chord radius `chord` on the unit sphere in R^n.
fn cap_measure(n: usize, chord: f64) -> f64 {
    let alpha = 2.0 * (0.5 * chord).min(1.0).asin();
    match n {
        2 => 2.0 * alpha,
        _ => 2.0 * std::f64::consts::PI * (1.0 - alpha.cos()),
    }
}

impl<'a> NearHullSampler<'a> {
    pub fn new(hull: &'a GeodesicHull, x: &SpacePoint, kind: AnnulusSampler) -> Self {
        let boost = Isometry::boost_to(&x.c);
        let inv = boost.inverse();
        let dirs: Vec<[f64; 3]> = hull.points.iter().map(|p| inv.apply_ideal(p).direction()).collect();
        let tree = KdTree::new(dirs.clone());
        Self { hull, x: *x, boost, dirs, tree, kind }
    }

    /// Samples of the annulus `[r0, r1)` for neighbourhood width `d`.
    /// `sum(weight * hit * f(rho)) / count` estimates the integral of `f` over `An ∩ N_d`.
    pub fn sample(&self, rng: &mut RandomStream, r0: f64, r1: f64, d: f64, count: usize) -> Result<Vec<WeightedSample>> {
        let space = self.hull.space;
        let n = space.n;
        let av = space.annulus_volume(r0, r1);
        let chord = if r0 > 0.0 { 2.0 * (d * space.a).cosh() / (space.a * r0).sinh() } else { f64::INFINITY };
        if self.kind == AnnulusSampler::Uniform || chord >= 1.0 {
            let o = space.origin();
            let pts = space.sample_annulus(rng, &o, r0, r1, count)?;
            return Ok(pts
                .iter()
                .map(|p| {
                    WeightedSample::new(self.hull, self.boost.apply(p), space.radius(p), av, d)
                })
                .collect());
        }
        let m = self.dirs.len() as f64;
        let cap = cap_measure(n, chord);
        let alpha = 2.0 * (0.5 * chord).asin();
        let mut out = Vec::with_capacity(count);
        let o = space.origin();
        for _ in 0..count {
            let c = self.dirs[rng.below(self.dirs.len())];
            let dir = random_in_cap(n, rng, &c, alpha);
            let radial = space.sample_annulus(rng, &o, r0, r1, 1)?[0];
            let rho = space.radius(&radial);
            let p = space.point_at(&dir[..n], rho)?;
            let mut k = 0usize;
            self.tree.for_each_within(&dir, chord * (1.0 + 1e-12), |_, _| k += 1);
            let weight = av * m * cap / (space.sphere_area() * k.max(1) as f64);
            out.push(WeightedSample::new(self.hull, self.boost.apply(&p), rho, weight, d));
        }
        Ok(out)
    }

    pub fn centre(&self) -> &SpacePoint {
        &self.x
    }
}

/// Uniform direction in the cap of angular radius `alpha` around unit `c`.
fn random_in_cap(n: usize, rng: &mut RandomStream, c: &[f64; 3], alpha: f64) -> [f64; 3] {
    if n == 2 {
        let phi = c[1].atan2(c[0]) + alpha * (2.0 * rng.uniform() - 1.0);
        return [phi.cos(), phi.sin(), 0.0];
    }
    // cos(angle) uniform on [cos alpha, 1] gives the uniform cap measure
    let z = 1.0 - rng.uniform() * (1.0 - alpha.cos());
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * rng.uniform();
    // orthonormal frame around c
    let e1 = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = e1[0] * c[0] + e1[1] * c[1] + e1[2] * c[2];
    let mut u = [e1[0] - d * c[0], e1[1] - d * c[1], e1[2] - d * c[2]];
    let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u = [u[0] / un, u[1] / un, u[2] / un];
    let v = [c[1] * u[2] - c[2] * u[1], c[2] * u[0] - c[0] * u[2], c[0] * u[1] - c[1] * u[0]];
    let (s, co) = phi.sin_cos();
    [
        z * c[0] + r * (co * u[0] + s * v[0]),
        z * c[1] + r * (co * u[1] + s * v[1]),
        z * c[2] + r * (co * u[2] + s * v[2]),
    ]
}

/// Monte Carlo volumes of `B(x, rho) ∩ N_d(K)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeProfile {
    /// Outer radius of each unit annulus.
    pub rho_grid: Vec<f64>,
    pub d: f64,
    pub hits: Vec<usize>,
    pub samples: Vec<usize>,
    pub annulus_volume: Vec<f64>,
    /// Cumulative volume of `B(x, rho) ∩ N_d` and its standard error.
    pub volume: Vec<f64>,
    pub volume_stderr: Vec<f64>,
    /// Annuli with no hits, excluded from the fit.
    pub empty_annuli: Vec<usize>,
    /// Growth rate of log volume over `rho in [2, rho_max]`.
    pub fit: DecayFit,
}

impl VolumeProfile {
    pub fn growth_rate(&self) -> f64 {
        -self.fit.rate
    }
    pub fn growth_stderr(&self) -> f64 {
        self.fit.rate_stderr
    }
}

pub fn volume_profile(
    k: &GeodesicHull,
    x: &SpacePoint,
    d: f64,
    rho_max: f64,
    samples_per_shell: usize,
    rng: &RandomStream,
) -> Result<VolumeProfile> {
    volume_profile_with(k, x, d, rho_max, samples_per_shell, rng, AnnulusSampler::default())
}

pub fn volume_profile_with(
    k: &GeodesicHull,
    x: &SpacePoint,
    d: f64,
    rho_max: f64,
    samples_per_shell: usize,
    rng: &RandomStream,
    sampler: AnnulusSampler,
) -> Result<VolumeProfile> {
    if !(d >= 0.0) || !(rho_max >= 2.0) {
        return invalid("volume profile needs d >= 0 and rho_max >= 2");
    }
    if samples_per_shell < 2 {
        return invalid("need at least two samples per annulus");
    }
    let space = k.space;
    let sm = NearHullSampler::new(k, x, sampler);
    let shells = rho_max.floor() as usize;
    let (mut grid, mut hits, mut nsamp, mut avol) = (vec![], vec![], vec![], vec![]);
    let (mut vol, mut err) = (vec![], vec![]);
    let mut empty = vec![];
    let (mut cum, mut var) = (0.0, 0.0);
    for sh in 0..shells {
        let (r0, r1) = (sh as f64, sh as f64 + 1.0);
        let mut r = rng.child(sh as u64);
        let samples = sm.sample(&mut r, r0, r1, d, samples_per_shell)?;
        let vals: Vec<f64> = samples.iter().map(|s| if s.hit { s.weight } else { 0.0 }).collect();
        let h = samples.iter().filter(|s| s.hit).count();
        let (mean, se) = mean_stderr(&vals);
        cum += mean;
        var += se * se;
        if h == 0 {
            empty.push(sh);
        }
        grid.push(r1);
        hits.push(h);
        nsamp.push(samples_per_shell);
        avol.push(space.annulus_volume(r0, r1));
        vol.push(cum);
        err.push(var.sqrt());
    }
    let (mut fx, mut fy, mut fe) = (vec![], vec![], vec![]);
    for i in 0..grid.len() {
        if grid[i] >= 2.0 && vol[i] > 0.0 && !empty.contains(&i) {
            fx.push(grid[i]);
            fy.push(vol[i]);
            fe.push(err[i].max(1e-12 * vol[i]));
        }
    }
    let fit = fit_decay(&fx, &fy, Some(&fe))?;
    Ok(VolumeProfile {
        rho_grid: grid,
        d,
        hits,
        samples: nsamp,
        annulus_volume: avol,
        volume: vol,
        volume_stderr: err,
        empty_annuli: empty,
        fit,
    })
}

/// Sample mean and its standard error.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{gen_pair, gen_round_circle};

    #[test]
    fn two_points_give_one_line() {
        let s = gen_pair(2, std::f64::consts::PI).unwrap();
        let k = build_hull(&s, PairPolicy::default(), 1.0, &RandomStream::new(0)).unwrap();
        assert_eq!(k.num_lines(), 1);
    }

    #[test]
    fn full_pairs_count() {
        let s = gen_round_circle(64, 3).unwrap();
        let k = build_hull(&s, PairPolicy::All, 1.0, &RandomStream::new(0)).unwrap();
        assert_eq!(k.num_lines(), 2016);
        let k = build_hull(&s, PairPolicy::default(), 1.0, &RandomStream::new(0)).unwrap();
        assert_eq!(k.num_lines(), 2016);
    }

    #[test]
    fn culled_query_matches_brute_force() {
        let s = gen_round_circle(256, 3).unwrap();
        let k = build_hull(&s, PairPolicy::Multiscale, 1.0, &RandomStream::new(0)).unwrap();
        let space = k.space;
        let mut rng = RandomStream::new(4);
        for p in space.sample_ball_uniform(&mut rng, &space.origin(), 7.0, 300).unwrap() {
            let fast = k.nearest(&p);
            let brute = (0..k.num_lines())
                .map(|l| space.dist_to_line(&p, &k.line(l)).unwrap().0)
                .fold(f64::INFINITY, f64::min);
            assert!((fast.dist - brute).abs() < 1e-8, "{} vs {}", fast.dist, brute);
        }
    }

    #[test]
    fn serde_roundtrip() {
        let s = gen_round_circle(16, 3).unwrap();
        let k = build_hull(&s, PairPolicy::All, 1.0, &RandomStream::new(0)).unwrap();
        let js = serde_json::to_string(&k).unwrap();
        let k2: GeodesicHull = serde_json::from_str(&js).unwrap();
        assert_eq!(k2.num_lines(), k.num_lines());
        let p = k.space.point_at(&[0.1, 0.2, 0.9], 2.0).unwrap();
        assert_eq!(k.nearest(&p).dist, k2.nearest(&p).dist);
    }
}
