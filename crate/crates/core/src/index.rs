//! Static k-d tree over points of R^3 (lower-dimensional data zero padded).

#[derive(Clone, Debug)]
pub struct KdTree {
    pts: Vec<[f64; 3]>,
    // permutation of point indices; nodes are implicit ranges of this array
    idx: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: usize,
    hi: usize,
    axis: u8,
    split: f64,
    left: u32,
    right: u32,
    bmin: [f64; 3],
    bmax: [f64; 3],
}

const LEAF: usize = 16;
const NONE: u32 = u32::MAX;

impl KdTree {
    pub fn new(pts: Vec<[f64; 3]>) -> Self {
        let idx: Vec<usize> = (0..pts.len()).collect();
        let mut t = KdTree { pts, idx, nodes: Vec::new() };
        if !t.pts.is_empty() {
            t.build(0, t.pts.len());
        }
        t
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; 3] {
        &self.pts[i]
    }

    fn build(&mut self, lo: usize, hi: usize) -> u32 {
        let mut bmin = [f64::INFINITY; 3];
        let mut bmax = [f64::NEG_INFINITY; 3];
        for &i in &self.idx[lo..hi] {
            for k in 0..3 {
                bmin[k] = bmin[k].min(self.pts[i][k]);
                bmax[k] = bmax[k].max(self.pts[i][k]);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { lo, hi, axis: 0, split: 0.0, left: NONE, right: NONE, bmin, bmax });
        if hi - lo <= LEAF {
            return id;
        }
        let axis = (0..3).max_by(|&a, &b| (bmax[a] - bmin[a]).total_cmp(&(bmax[b] - bmin[b]))).unwrap_or(0);
        if bmax[axis] - bmin[axis] <= 0.0 {
            return id;
        }
        let mid = (lo + hi) / 2;
        let pts = &self.pts;
        self.idx[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let split = self.pts[self.idx[mid]][axis];
        let left = self.build(lo, mid);
        let right = self.build(mid, hi);
        let node = &mut self.nodes[id as usize];
        node.axis = axis as u8;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    fn box_dist2(n: &Node, q: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = if q[k] < n.bmin[k] {
                n.bmin[k] - q[k]
            } else if q[k] > n.bmax[k] {
                q[k] - n.bmax[k]
            } else {
                0.0
            };
            s += d * d;
        }
        s
    }

    /// Visit every point within Euclidean distance `r` of `q`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: &[f64; 3], r: f64, mut f: F) {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if Self::box_dist2(n, q) > r2 {
                continue;
            }
            if n.left == NONE {
                for &i in &self.idx[n.lo..n.hi] {
                    let p = &self.pts[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d2 <= r2 {
                        f(i, d2.sqrt());
                    }
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
    }

    pub fn within(&self, q: &[f64; 3], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, r, |i, _| out.push(i));
        out
    }

    /// Nearest point to `q` (index, distance); `skip` excludes one index.
    pub fn nearest(&self, q: &[f64; 3], skip: Option<usize>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if Self::box_dist2(n, q) >= best.1 {
                continue;
            }
            if n.left == NONE {
                for &i in &self.idx[n.lo..n.hi] {
                    if Some(i) == skip {
                        continue;
                    }
                    let p = &self.pts[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        best = (i, d2);
                    }
                }
            } else {
                let (near, far) = if q[n.axis as usize] < n.split { (n.left, n.right) } else { (n.right, n.left) };
                stack.push(far);
                stack.push(near);
            }
        }
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }
}

/// Radius queries in hyperbolic distance over points of one space.
///
/// Points are bucketed into slabs of distance from the origin, each with a
/// k-d tree on unit directions. For a query ball `B(q, D)` a point at radius
/// `r` can only be inside if the angle it makes with `q` at the origin obeys
/// `cos(angle) >= (cosh r_q cosh r - cosh D) / (sinh r_q sinh r)`; over a slab
/// the right side is smallest at the clamp of `acosh(cosh r_q / cosh D)`.
#[derive(Clone, Debug)]
pub struct PointIndex {
    space: crate::geometry::SpaceConfig,
    points: Vec<crate::geometry::SpacePoint>,
    slabs: Vec<Slab>,
}

#[derive(Clone, Debug)]
struct Slab {
    lo: f64,
    hi: f64,
    ids: Vec<usize>,
    tree: KdTree,
}

/// Slab width in model units.
const SLAB: f64 = 0.25;

fn unit_direction(p: &crate::geometry::SpacePoint) -> [f64; 3] {
    let s = p.spatial();
    let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    if n > 0.0 {
        [s[0] / n, s[1] / n, s[2] / n]
    } else {
        [1.0, 0.0, 0.0]
    }
}

/// Model-unit distance from the origin.
fn model_radius(p: &crate::geometry::SpacePoint) -> f64 {
    let s = p.spatial();
    (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt().asinh()
}

impl PointIndex {
    pub fn new(space: crate::geometry::SpaceConfig, points: Vec<crate::geometry::SpacePoint>) -> Self {
        let mut buckets: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, p) in points.iter().enumerate() {
            buckets.entry((model_radius(p) / SLAB) as usize).or_default().push(i);
        }
        let slabs = buckets
            .into_iter()
            .map(|(k, ids)| {
                let tree = KdTree::new(ids.iter().map(|&i| unit_direction(&points[i])).collect());
                let (lo, hi) = ids.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &i| {
                    let r = model_radius(&points[i]);
                    (lo.min(r), hi.max(r))
                });
                debug_assert!(lo >= k as f64 * SLAB - 1e-9);
                Slab { lo, hi, ids, tree }
            })
            .collect();
        Self { space, points, slabs }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[crate::geometry::SpacePoint] {
        &self.points
    }

    /// Chord between unit directions that covers every point of a slab
    /// `[lo, hi]` (model radii) within model distance `dm` of a point at
    /// model radius `rq`; 2 or more means no angular restriction.
    fn chord_bound(rq: f64, dm: f64, lo: f64, hi: f64) -> f64 {
        if rq <= dm {
            return 3.0;
        }
        let rt = (rq.cosh() / dm.cosh()).acosh();
        let r = rt.clamp(lo, hi);
        if !(r > 0.0) {
            return 3.0;
        }
        let c = (rq.cosh() * r.cosh() - dm.cosh()) / (rq.sinh() * r.sinh());
        if !c.is_finite() {
            return 3.0;
        }
        (2.0 - 2.0 * c.clamp(-1.0, 1.0)).max(0.0).sqrt() * (1.0 + 1e-9) + 1e-12
    }

    /// Calls `f(index, distance)` for every point with distance `< d` to `q`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: &crate::geometry::SpacePoint, d: f64, mut f: F) {
        let dm = self.space.a * d;
        let rq = model_radius(q);
        let dir = unit_direction(q);
        for slab in &self.slabs {
            if slab.hi < rq - dm || slab.lo > rq + dm {
                continue;
            }
            let chord = Self::chord_bound(rq, dm, slab.lo, slab.hi);
            let mut visit = |i: usize| {
                let id = slab.ids[i];
                let dist = self.space.dist(q, &self.points[id]);
                if dist < d {
                    f(id, dist);
                }
            };
            if chord >= 2.0 {
                (0..slab.ids.len()).for_each(&mut visit);
            } else {
                slab.tree.for_each_within(&dir, chord, |i, _| visit(i));
            }
        }
    }

    pub fn within(&self, q: &crate::geometry::SpacePoint, d: f64) -> Vec<(usize, f64)> {
        let mut out = vec![];
        self.for_each_within(q, d, |i, dist| out.push((i, dist)));
        out
    }

    /// Nearest point by hyperbolic distance, found by doubling the search radius.
    pub fn nearest(&self, q: &crate::geometry::SpacePoint) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut d = 0.05;
        loop {
            let mut best: Option<(usize, f64)> = None;
            self.for_each_within(q, d, |i, dist| {
                if best.map_or(true, |b| dist < b.1) {
                    best = Some((i, dist));
                }
            });
            if best.is_some() {
                return best;
            }
            d *= 2.0;
            if d > 1e3 {
                return self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, self.space.dist(q, p)))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
            }
        }
    }
}
