//! Smoothing of Lipschitz maps between hyperbolic spaces at a fixed scale:
//! separated nets, colorings, chart-wise flattening and regularity probes.

use serde::{Deserialize, Serialize};

use crate::boundary::{bent_unfold, BentPlaneFamily};
use crate::error::{invalid, Error, Result};
use crate::fit::linear_fit;
use crate::geometry::{Coords, Isometry, SpaceConfig, SpacePoint};
use crate::hull::{retract, GeodesicHull};
use crate::index::PointIndex;

/// A map from one hyperbolic space to another, evaluable anywhere it is defined.
pub trait PointMap: Sync {
    fn target(&self) -> SpaceConfig;
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint>;
}

impl<M: PointMap + ?Sized> PointMap for &M {
    fn target(&self) -> SpaceConfig {
        (**self).target()
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        (**self).eval(z)
    }
}

/// Nearest-point retraction onto a hull.
pub struct Retraction<'a> {
    pub hull: &'a GeodesicHull,
}

impl PointMap for Retraction<'_> {
    fn target(&self) -> SpaceConfig {
        self.hull.space
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        retract(z, self.hull)
    }
}

/// Retraction onto a bent-plane hull followed by unfolding into H^2.
pub struct UnfoldedRetraction<'a> {
    pub hull: &'a GeodesicHull,
    pub family: BentPlaneFamily,
}

impl PointMap for UnfoldedRetraction<'_> {
    fn target(&self) -> SpaceConfig {
        SpaceConfig::new(2, self.hull.space.a).expect("valid curvature")
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        bent_unfold(&self.family, &retract(z, self.hull)?)
    }
}

/// Wraps a closure as a map.
pub struct FnMap<F> {
    pub target: SpaceConfig,
    pub f: F,
}

impl<F: Fn(&SpacePoint) -> Result<SpacePoint> + Sync> PointMap for FnMap<F> {
    fn target(&self) -> SpaceConfig {
        self.target
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        (self.f)(z)
    }
}

/// Cutoff profile: 0 on `[-1/2, 1/2]`, 1 outside `[-1, 1]`, quintic smoothstep
/// in between (C^2).
pub fn chi(s: f64) -> f64 {
    let u = (2.0 * s.abs() - 1.0).clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Derivative of [`chi`] in `|s|`.
pub fn chi_prime(s: f64) -> f64 {
    let u = 2.0 * s.abs() - 1.0;
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    2.0 * 30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// Point set covering a region, with its nominal spacing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionMesh {
    pub space: SpaceConfig,
    pub points: Vec<SpacePoint>,
    pub spacing: f64,
}

impl RegionMesh {
    pub fn from_points(space: SpaceConfig, points: Vec<SpacePoint>, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return invalid("mesh spacing must be positive");
        }
        Ok(Self { space, points, spacing })
    }

    /// Concentric shells of `B(center, radius)`: circles in H^2, Fibonacci
    /// spheres in H^3, with counts proportional to the shell area.
    pub fn ball(space: SpaceConfig, center: &SpacePoint, radius: f64, spacing: f64) -> Result<Self> {
        let points = shell_points(&space, center, radius, spacing)?.into_iter().map(|s| s.0).collect();
        Self::from_points(space, points, spacing)
    }

    /// Union of balls around several centers (duplicates are not removed).
    pub fn balls(space: SpaceConfig, centers: &[SpacePoint], radius: f64, spacing: f64) -> Result<Self> {
        let mut points = vec![];
        for c in centers {
            points.extend(shell_points(&space, c, radius, spacing)?.into_iter().map(|s| s.0));
        }
        Self::from_points(space, points, spacing)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Points of `B(center, radius)` in shells of width `spacing`, each tagged
/// with its shell index (0 is the centre). The outermost shell sits at
/// exactly `radius`.
pub fn shell_points(space: &SpaceConfig, center: &SpacePoint, radius: f64, spacing: f64) -> Result<Vec<(SpacePoint, usize)>> {
    if !(spacing > 0.0) || !(radius >= 0.0) {
        return invalid("shell points need spacing > 0 and radius >= 0");
    }
    let a = space.a;
    let shells = (radius / spacing).ceil() as usize;
    let b = crate::geometry::Isometry::boost_to(&center.c);
    let mut out = vec![(*center, 0)];
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for k in 1..=shells {
        let rho = if k == shells { radius } else { k as f64 * spacing };
        let s = (a * rho).sinh() / a;
        match space.n {
            2 => {
                let m = ((2.0 * std::f64::consts::PI * s / spacing).ceil() as usize).max(3);
                let off = k as f64 * golden;
                for j in 0..m {
                    let phi = off + 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    let p = space.point_at(&[phi.cos(), phi.sin()], rho)?;
                    out.push((b.apply(&p), k));
                }
            }
            _ => {
                let m = ((4.0 * std::f64::consts::PI * s * s / (spacing * spacing)).ceil() as usize).max(4);
                let twist = k as f64 * 0.7548776662;
                for j in 0..m {
                    let z = 1.0 - (2.0 * j as f64 + 1.0) / m as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * j as f64 + 2.0 * std::f64::consts::PI * twist;
                    let p = space.point_at(&[r * phi.cos(), r * phi.sin(), z], rho)?;
                    out.push((b.apply(&p), k));
                }
            }
        }
    }
    Ok(out)
}

/// Maximal `r/2`-separated subset of a region, optionally colored so that
/// each class is `2r`-separated.
#[derive(Clone, Debug)]
pub struct SeparatedNet {
    pub space: SpaceConfig,
    pub centers: Vec<SpacePoint>,
    pub r: f64,
    pub color: Vec<usize>,
    pub classes: usize,
    index: PointIndex,
}

impl SeparatedNet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Centers at distance `< d` from `z`.
    pub fn within(&self, z: &SpacePoint, d: f64) -> Vec<(usize, f64)> {
        self.index.within(z, d)
    }

    /// Smallest pairwise distance among centers and the largest distance from
    /// a region point to its nearest center.
    pub fn audit(&self, region: &RegionMesh) -> (f64, f64) {
        let mut sep = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            self.index.for_each_within(c, self.r, |j, d| {
                if j != i {
                    sep = sep.min(d);
                }
            });
        }
        let cover = region
            .points
            .iter()
            .map(|p| self.index.nearest(p).map_or(f64::INFINITY, |n| n.1))
            .fold(0.0, f64::max);
        (sep, cover)
    }

    /// Smallest distance between two centers of one class.
    pub fn class_separation(&self) -> f64 {
        let mut sep = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            self.index.for_each_within(c, 2.0 * self.r, |j, d| {
                if j != i && self.color[j] == self.color[i] {
                    sep = sep.min(d);
                }
            });
        }
        sep
    }
}

/// Greedy maximal `r/2`-separated net over the region points, in order.
pub fn build_net(region: &RegionMesh, r: f64) -> Result<SeparatedNet> {
    if region.is_empty() {
        return invalid("empty region");
    }
    if region.points.len() > 1 && !(r > 2.0 * region.spacing) {
        return Err(Error::InvalidParameter(format!(
            "net radius {r} must exceed twice the mesh spacing {}",
            region.spacing
        )));
    }
    let index = PointIndex::new(region.space, region.points.clone());
    let mut covered = vec![false; region.len()];
    let mut centers = vec![];
    for i in 0..region.len() {
        if covered[i] {
            continue;
        }
        let c = region.points[i];
        centers.push(c);
        index.for_each_within(&c, 0.5 * r, |j, _| covered[j] = true);
        covered[i] = true;
    }
    let n = centers.len();
    Ok(SeparatedNet {
        space: region.space,
        index: PointIndex::new(region.space, centers.clone()),
        centers,
        r,
        color: vec![0; n],
        classes: 1,
    })
}

/// Greedy colors of a graph in smallest-last order, ties broken by `order`.
fn smallest_last_colors(adj: &[Vec<usize>], order: &[usize]) -> Vec<usize> {
    // smallest-last: repeatedly remove a vertex of minimum remaining degree
    let n = adj.len();
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            r[i] = k;
        }
        r
    };
    let mut deg: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let maxd = deg.iter().copied().max().unwrap_or(0);
    let mut buckets: Vec<std::collections::BTreeSet<(usize, usize)>> = vec![Default::default(); maxd + 1];
    for i in 0..n {
        buckets[deg[i]].insert((rank[i], i));
    }
    let mut removed = vec![false; n];
    let mut stack = Vec::with_capacity(n);
    let mut lo = 0;
    for _ in 0..n {
        lo = lo.min(maxd);
        while buckets[lo].is_empty() {
            lo += 1;
        }
        let (_, i) = buckets[lo].pop_first().expect("nonempty bucket");
        removed[i] = true;
        stack.push(i);
        for &j in &adj[i] {
            if !removed[j] {
                buckets[deg[j]].remove(&(rank[j], j));
                deg[j] -= 1;
                buckets[deg[j]].insert((rank[j], j));
            }
        }
        lo = lo.saturating_sub(1);
    }
    let mut color = vec![usize::MAX; n];
    let mut used = vec![];
    for &i in stack.iter().rev() {
        used.clear();
        used.extend(adj[i].iter().map(|&j| color[j]).filter(|&c| c != usize::MAX));
        used.sort_unstable();
        used.dedup();
        let mut c = 0;
        for &u in &used {
            if u == c {
                c += 1;
            } else if u > c {
                break;
            }
        }
        color[i] = c;
    }
    color
}

/// Greedy coloring of the conflict graph (edge iff distance `< 2r`) in
/// smallest-last order; `order` (a permutation of the centers) breaks ties.
pub fn color_net_in_order(net: &SeparatedNet, order: &[usize]) -> Result<SeparatedNet> {
    let n = net.len();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return invalid("coloring order must be a permutation of the centers");
    }
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut v: Vec<usize> =
                net.index.within(&net.centers[i], 2.0 * net.r).into_iter().map(|p| p.0).filter(|&j| j != i).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let color = smallest_last_colors(&adj, order);
    let classes = color.iter().max().map_or(0, |m| m + 1);
    let out = SeparatedNet { color, classes, ..net.clone() };
    if out.class_separation() < 2.0 * net.r * (1.0 - 1e-12) {
        return Err(Error::Audit("color class not 2r-separated".into()));
    }
    Ok(out)
}

/// Colored net invariant under the powers of an isometry `shift`.
///
/// `strip` holds the region points of a fundamental domain of `shift`. The
/// net is built greedily and colored on the quotient, where distances to the
/// `shift^(+-1)` images count, and is then copied by `shift^k` for
/// `|k| <= copies`, keeping the copies accepted by `keep`. When the data are
/// invariant as well, the smoothed map commutes with `shift`.
pub fn periodic_net(
    strip: &RegionMesh,
    r: f64,
    shift: &Isometry,
    copies: usize,
    keep: impl Fn(&SpacePoint) -> bool,
) -> Result<SeparatedNet> {
    if strip.is_empty() {
        return invalid("empty fundamental domain");
    }
    if !(r > 2.0 * strip.spacing) {
        return invalid(format!("net radius {r} must exceed twice the mesh spacing {}", strip.spacing));
    }
    let space = strip.space;
    let back = shift.inverse();
    let tripled = |pts: &[SpacePoint]| {
        let mut all = pts.to_vec();
        all.extend(pts.iter().map(|p| shift.apply(p)));
        all.extend(pts.iter().map(|p| back.apply(p)));
        PointIndex::new(space, all)
    };
    let n = strip.len();
    let images = tripled(&strip.points);
    let mut covered = vec![false; n];
    let mut base = vec![];
    for i in 0..n {
        if covered[i] {
            continue;
        }
        base.push(strip.points[i]);
        images.for_each_within(&strip.points[i], 0.5 * r, |j, _| covered[j % n] = true);
        covered[i] = true;
    }
    let m = base.len();
    let centers = tripled(&base);
    let mut adj = vec![vec![]; m];
    for (i, c) in base.iter().enumerate() {
        let mut bad = false;
        centers.for_each_within(c, 2.0 * r, |j, _| {
            if j % m == i && j != i {
                bad = true;
            } else if j % m != i {
                adj[i].push(j % m);
            }
        });
        if bad {
            return invalid("shift moves a center by less than 2r");
        }
        adj[i].sort_unstable();
        adj[i].dedup();
    }
    let base_color = smallest_last_colors(&adj, &(0..m).collect::<Vec<_>>());
    let (mut pts, mut color) = (vec![], vec![]);
    let mut push = |g: &Isometry| {
        for (c, &k) in base.iter().zip(&base_color) {
            let q = g.apply(c);
            if keep(&q) {
                pts.push(q);
                color.push(k);
            }
        }
    };
    push(&Isometry::identity());
    let (mut up, mut down) = (Isometry::identity(), Isometry::identity());
    for _ in 0..copies {
        up = shift.compose(&up);
        down = back.compose(&down);
        push(&up);
        push(&down);
    }
    if pts.is_empty() {
        return invalid("no center accepted");
    }
    let classes = color.iter().max().map_or(0, |c| c + 1);
    let net = SeparatedNet { space, index: PointIndex::new(space, pts.clone()), centers: pts, r, color, classes };
    if net.class_separation() < 2.0 * r * (1.0 - 1e-9) {
        return Err(Error::Audit("color class not 2r-separated".into()));
    }
    Ok(net)
}

pub fn color_net(net: &SeparatedNet) -> Result<SeparatedNet> {
    let order: Vec<usize> = (0..net.len()).collect();
    color_net_in_order(net, &order)
}

/// `exp_p(s log_p(y))` in the target space.
fn shrink_toward(p: &SpacePoint, y: &SpacePoint, s: f64) -> SpacePoint {
    if s >= 1.0 {
        return *y;
    }
    let v = SpaceConfig::log_raw(p, y);
    let w: Coords = [s * v[0], s * v[1], s * v[2], s * v[3]];
    SpaceConfig::exp_raw(p, &w)
}

/// `f` flattened around a single center `x`: equal to `f(x)` on `B(x, r/2)`,
/// to `f` outside `B(x, r)`, and blended in normal coordinates at `f(x)` in
/// between.
pub struct Flattened<M> {
    pub inner: M,
    pub source: SpaceConfig,
    pub x: SpacePoint,
    pub r: f64,
    anchor: SpacePoint,
}

pub fn local_flatten<M: PointMap>(f: M, source: &SpaceConfig, x: &SpacePoint, r: f64) -> Result<Flattened<M>> {
    if !(r > 0.0) {
        return invalid("flattening radius must be positive");
    }
    let anchor = f.eval(x)?;
    Ok(Flattened { inner: f, source: *source, x: *x, r, anchor })
}

impl<M: PointMap> PointMap for Flattened<M> {
    fn target(&self) -> SpaceConfig {
        self.inner.target()
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        let y = self.inner.eval(z)?;
        let d = self.source.dist(&self.x, z);
        Ok(shrink_toward(&self.anchor, &y, chi(d / self.r)))
    }
}

/// The smoothed map: `inner` flattened around every net center, one color
/// class after another. Evaluation is lazy; anchors `f_{k-1}(c)` are stored.
pub struct SmoothMap<M> {
    pub inner: M,
    pub net: SeparatedNet,
    pub source: SpaceConfig,
    anchors: Vec<SpacePoint>,
}

impl<M: PointMap> SmoothMap<M> {
    /// Value after flattening all classes `< limit`.
    pub fn eval_upto(&self, z: &SpacePoint, limit: usize) -> Result<SpacePoint> {
        self.eval_with(&self.anchors, z, limit)
    }

    fn eval_with(&self, anchors: &[SpacePoint], z: &SpacePoint, limit: usize) -> Result<SpacePoint> {
        let mut y = self.inner.eval(z)?;
        let mut near = self.net.within(z, self.net.r);
        near.retain(|&(i, _)| self.net.color[i] < limit);
        near.sort_by_key(|&(i, _)| self.net.color[i]);
        for (i, d) in near {
            y = shrink_toward(&anchors[i], &y, chi(d / self.net.r));
        }
        Ok(y)
    }

    /// Largest displacement `dist(f(z), smoothed(z))` over the given points.
    pub fn sup_displacement(&self, points: &[SpacePoint]) -> Result<f64> {
        let t = self.inner.target();
        let mut m: f64 = 0.0;
        for p in points {
            m = m.max(t.dist(&self.inner.eval(p)?, &self.eval(p)?));
        }
        Ok(m)
    }

    pub fn anchors(&self) -> &[SpacePoint] {
        &self.anchors
    }
}

impl<M: PointMap> PointMap for SmoothMap<M> {
    fn target(&self) -> SpaceConfig {
        self.inner.target()
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        self.eval_upto(z, usize::MAX)
    }
}

/// Flattens `f` over each color class of `net` in turn.
pub fn smooth_map<M: PointMap>(f: M, net: &SeparatedNet) -> Result<SmoothMap<M>> {
    if net.is_empty() {
        return invalid("empty net");
    }
    let mut sm = SmoothMap { inner: f, net: net.clone(), source: net.space, anchors: vec![] };
    let mut order: Vec<usize> = (0..net.len()).collect();
    order.sort_by_key(|&i| net.color[i]);
    let mut anchors = vec![net.centers[0]; net.len()];
    for &i in &order {
        // classes below this one are already anchored
        anchors[i] = sm.eval_with(&anchors, &net.centers[i], net.color[i])?;
    }
    sm.anchors = anchors;
    Ok(sm)
}

/// Largest ratio `dist(f(u), f(v)) / dist(u, v)` over region pairs closer than `reach`.
pub fn lipschitz_estimate<M: PointMap>(f: &M, region: &RegionMesh, reach: f64) -> Result<f64> {
    let idx = PointIndex::new(region.space, region.points.clone());
    let vals: Vec<SpacePoint> = region.points.iter().map(|p| f.eval(p)).collect::<Result<_>>()?;
    let t = f.target();
    let mut best: f64 = 0.0;
    for (i, p) in region.points.iter().enumerate() {
        idx.for_each_within(p, reach, |j, d| {
            if j > i && d > 1e-9 {
                best = best.max(t.dist(&vals[i], &vals[j]) / d);
            }
        });
    }
    Ok(best)
}

/// A map sampled at vertices, interpolated by inverse-distance weighted
/// geodesic averaging of the nearest vertex values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteMap {
    pub source: SpaceConfig,
    pub target: SpaceConfig,
    pub vertices: Vec<SpacePoint>,
    pub values: Vec<SpacePoint>,
    #[serde(skip)]
    index: Option<PointIndex>,
}

impl DiscreteMap {
    pub fn new(source: SpaceConfig, target: SpaceConfig, vertices: Vec<SpacePoint>, values: Vec<SpacePoint>) -> Result<Self> {
        if vertices.len() != values.len() || vertices.is_empty() {
            return invalid("vertex and value counts differ or are zero");
        }
        let index = Some(PointIndex::new(source, vertices.clone()));
        Ok(Self { source, target, vertices, values, index })
    }

    pub fn materialize<M: PointMap>(f: &M, source: SpaceConfig, vertices: Vec<SpacePoint>) -> Result<Self> {
        let values = vertices.iter().map(|v| f.eval(v)).collect::<Result<Vec<_>>>()?;
        Self::new(source, f.target(), vertices, values)
    }

    fn index(&self) -> PointIndex {
        self.index.clone().unwrap_or_else(|| PointIndex::new(self.source, self.vertices.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DiscreteMap = serde_json::from_str(s)?;
        Self::new(m.source, m.target, m.vertices, m.values)
    }
}

impl PointMap for DiscreteMap {
    fn target(&self) -> SpaceConfig {
        self.target
    }
    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        let idx = match &self.index {
            Some(i) => i,
            None => return Err(Error::Numerical("discrete map without index".into())),
        };
        let (k, d0) = idx.nearest(z).expect("nonempty");
        if d0 < 1e-12 {
            return Ok(self.values[k]);
        }
        let near = idx.within(z, 2.0 * d0 + 1e-9);
        let base = self.values[k];
        let mut acc = [0.0; 4];
        let mut wsum = 0.0;
        for (i, d) in near {
            let w = 1.0 / (d * d);
            let v = SpaceConfig::log_raw(&base, &self.values[i]);
            for c in 0..4 {
                acc[c] += w * v[c];
            }
            wsum += w;
        }
        let v: Coords = [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum, acc[3] / wsum];
        Ok(SpaceConfig::exp_raw(&base, &v))
    }
}

impl DiscreteMap {
    /// Rebuilds the lookup index (after deserializing by hand).
    pub fn reindex(&mut self) {
        self.index = Some(self.index());
    }
}

/// Finite-difference derivative sizes of a map at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityRecord {
    pub dist_to_hull: f64,
    pub grad_norm: f64,
    pub hess_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub h: f64,
    pub records: Vec<RegularityRecord>,
}

impl RegularityReport {
    /// Slopes of `ln grad` and `ln hess` against hull distance over `[lo, hi]`.
    pub fn slopes(&self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let sel: Vec<&RegularityRecord> =
            self.records.iter().filter(|r| r.dist_to_hull >= lo && r.dist_to_hull <= hi).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.dist_to_hull).collect();
        let g: Vec<f64> = sel.iter().map(|r| r.grad_norm.max(1e-300).ln()).collect();
        let hs: Vec<f64> = sel.iter().map(|r| r.hess_norm.max(1e-300).ln()).collect();
        Ok((linear_fit(&x, &g, None)?.0, linear_fit(&x, &hs, None)?.0))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dist_to_hull,grad_norm,hess_norm\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e}\n", r.dist_to_hull, r.grad_norm, r.hess_norm));
        }
        s
    }
}

/// Gradient operator norm and Hessian quadratic-form size of `f` at `z`, from
/// central differences along frame vectors and their diagonal combinations.
pub fn derivative_norms<M: PointMap>(f: &M, source: &SpaceConfig, z: &SpacePoint, h: f64) -> Result<(f64, f64)> {
    let frame = source.frame(z);
    let mut dirs: Vec<Coords> = frame.clone();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..frame.len() {
        for j in i + 1..frame.len() {
            for sign in [1.0, -1.0] {
                let mut v = [0.0; 4];
                for c in 0..4 {
                    v[c] = s * (frame[i][c] + sign * frame[j][c]);
                }
                dirs.push(v);
            }
        }
    }
    let t = f.target();
    let y0 = f.eval(z)?;
    let (mut g, mut hs): (f64, f64) = (0.0, 0.0);
    for e in dirs {
        let v: Coords = [h * e[0], h * e[1], h * e[2], h * e[3]];
        let m: Coords = [-v[0], -v[1], -v[2], -v[3]];
        let yp = f.eval(&SpaceConfig::exp_raw(z, &v))?;
        let ym = f.eval(&SpaceConfig::exp_raw(z, &m))?;
        g = g.max(t.dist(&yp, &ym) / (2.0 * h));
        let lp = SpaceConfig::log_raw(&y0, &yp);
        let lm = SpaceConfig::log_raw(&y0, &ym);
        let w: Coords = [lp[0] + lm[0], lp[1] + lm[1], lp[2] + lm[2], lp[3] + lm[3]];
        let norm = crate::geometry::mink(&w, &w).max(0.0).sqrt() / t.a;
        hs = hs.max(norm / (h * h));
    }
    Ok((g, hs))
}

/// Norm of the tension field of `f` at `z` by central differences with
/// Riemannian step `h` along an orthonormal frame:
/// `|sum_i (log_{f(z)} f(z + h e_i) + log_{f(z)} f(z - h e_i))| / h^2`.
pub fn fd_tension<M: PointMap>(f: &M, source: &SpaceConfig, z: &SpacePoint, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return invalid("step must be positive");
    }
    let t = f.target();
    let y0 = f.eval(z)?;
    let step = source.a * h;
    let mut w = [0.0; 4];
    for e in source.frame(z) {
        for sign in [1.0, -1.0] {
            let v: Coords = [sign * step * e[0], sign * step * e[1], sign * step * e[2], sign * step * e[3]];
            let l = SpaceConfig::log_raw(&y0, &f.eval(&SpaceConfig::exp_raw(z, &v))?);
            for c in 0..4 {
                w[c] += l[c];
            }
        }
    }
    Ok(crate::geometry::mink(&w, &w).max(0.0).sqrt() / (t.a * h * h))
}

/// Derivative sizes of `f` at each probe, tagged with hull distance. With a
/// `domain` ball given, probes closer than `2h` to its boundary are refused.
pub fn regularity_probe<M: PointMap>(
    f: &M,
    source: &SpaceConfig,
    k: &GeodesicHull,
    probes: &[SpacePoint],
    h: f64,
    domain: Option<(&SpacePoint, f64)>,
) -> Result<RegularityReport> {
    if !(h > 0.0) {
        return invalid("probe step must be positive");
    }
    let mut records = vec![];
    for p in probes {
        if let Some((c, radius)) = domain {
            if source.dist(c, p) > radius - 2.0 * h {
                return Err(Error::InvalidParameter("probe within 2h of the mesh boundary".into()));
            }
        }
        let (dist, _) = crate::hull::dist_to_hull(p, k)?;
        let (g, hs) = derivative_norms(f, source, p, h)?;
        records.push(RegularityRecord { dist_to_hull: dist, grad_norm: g, hess_norm: hs });
    }
    Ok(RegularityReport { h, records })
}
