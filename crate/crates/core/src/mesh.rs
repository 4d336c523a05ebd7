//! Meshes of geodesic balls: concentric rings (H^2) or Fibonacci shells (H^3)
//! with symmetric Laplacian edge weights, either volume-weighted Gaussian
//! graph weights or, in H^2, cotangent weights of the ring triangulation.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Isometry, SpaceConfig, SpacePoint};
use crate::index::KdTree;

/// Discretized `B(center, radius)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallMesh {
    pub space: SpaceConfig,
    pub center: SpacePoint,
    pub radius: f64,
    pub h: f64,
    pub weighting: Weighting,
    pub vertices: Vec<SpacePoint>,
    /// Shell index per vertex (0 is the centre).
    pub shell: Vec<u32>,
    /// Vertices on the sphere of radius `radius`.
    pub boundary: Vec<bool>,
    /// Ghost vertices outside the ball, within the stencil reach of it. Like
    /// the boundary they carry Dirichlet data, so that every free vertex has
    /// a full (two-sided) stencil.
    pub collar: Vec<bool>,
    /// Laplacian mass per vertex.
    pub mass: Vec<f64>,
    /// Volume each vertex stands for (quadrature weight).
    pub volume: Vec<f64>,
    adj_start: Vec<usize>,
    adj: Vec<(u32, f64)>,
    pub triangles: Vec<[u32; 3]>,
}

/// Angular layout of one shell.
fn ring_angles(k: usize, m: usize) -> Vec<f64> {
    let off = (k as f64 * PI * (3.0 - 5f64.sqrt())).rem_euclid(TAU);
    (0..m).map(|j| (off + TAU * j as f64 / m as f64).rem_euclid(TAU)).collect()
}

/// Number of shells and their radii: `k * radius / K` with `K = ceil(radius / h)`
/// (rounded when `radius / h` is an integer up to rounding error).
fn shell_radii(radius: f64, h: f64) -> Vec<f64> {
    let q = radius / h;
    let k = if (q - q.round()).abs() < 1e-9 { q.round() as usize } else { q.ceil() as usize };
    (0..=k).map(|i| if i == k { radius } else { i as f64 * radius / k as f64 }).collect()
}

/// Triangles between two concentric rings given by their sorted-by-index
/// angle lists (indices are global vertex ids).
fn zip_rings(a: &[(f64, u32)], b: &[(f64, u32)], out: &mut Vec<[u32; 3]>) {
    let sort = |v: &[(f64, u32)]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| x.0.total_cmp(&y.0));
        s
    };
    let (a, b) = (sort(a), sort(b));
    let t0 = a[0].0;
    // unwrap both rings to start near t0
    let ua: Vec<f64> = a.iter().map(|p| p.0).collect();
    let j0 = (0..b.len())
        .min_by(|&i, &j| {
            let di = ((b[i].0 - t0 + PI).rem_euclid(TAU) - PI).abs();
            let dj = ((b[j].0 - t0 + PI).rem_euclid(TAU) - PI).abs();
            di.total_cmp(&dj)
        })
        .unwrap();
    let mut ub = vec![0.0; b.len()];
    let base = t0 + ((b[j0].0 - t0 + PI).rem_euclid(TAU) - PI);
    for s in 0..b.len() {
        let j = (j0 + s) % b.len();
        ub[s] = base + (b[j].0 - b[j0].0).rem_euclid(TAU);
    }
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut s) = (0usize, 0usize);
    while i < na || s < nb {
        let next_a = if i < na { ua.get(i + 1).copied().unwrap_or(t0 + TAU) } else { f64::INFINITY };
        let next_b = if s < nb { ub.get(s + 1).copied().unwrap_or(base + TAU) } else { f64::INFINITY };
        let va = a[i % na].1;
        let vb = b[(j0 + s) % nb].1;
        if next_a <= next_b {
            out.push([va, vb, a[(i + 1) % na].1]);
            i += 1;
        } else {
            out.push([va, vb, b[(j0 + s + 1) % nb].1]);
            s += 1;
        }
    }
}

/// Edge weights of a ball mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    /// Cotangent weights of the ring triangulation (n = 2 only), clamped at 0.
    Cotangent,
    /// Volume-weighted kernel `nu_u nu_v exp(-r^2 / (width h)^2) (1 - r^2 / R^2)^2`
    /// with `R = support * h`.
    Graph { width: f64, support: f64 },
}

impl Weighting {
    /// Graph weights used by [`mesh_ball`]. Ring sums in H^2 are accurate
    /// enough that width is set by the centre; Fibonacci shells in H^3 are
    /// quasi-random, where a narrower kernel does as well.
    pub fn default_for(space: &SpaceConfig) -> Self {
        if space.n == 2 {
            Weighting::Graph { width: 2.0, support: 4.4 }
        } else {
            Weighting::Graph { width: 1.5, support: 3.3 }
        }
    }

    /// Reach of the stencil in units of `h`.
    pub fn support(&self) -> f64 {
        match self {
            Weighting::Cotangent => 1.0,
            Weighting::Graph { support, .. } => *support,
        }
    }
}

pub fn mesh_ball(space: SpaceConfig, center: &SpacePoint, d: f64, h: f64) -> Result<BallMesh> {
    mesh_ball_with(space, center, d, h, Weighting::default_for(&space))
}

pub fn mesh_ball_with(space: SpaceConfig, center: &SpacePoint, d: f64, h: f64, weighting: Weighting) -> Result<BallMesh> {
    space.check(center)?;
    if !(h > 0.0 && h <= d / 4.0) {
        return invalid(format!("mesh step {h} must lie in (0, d/4] for d = {d}"));
    }
    let a = space.a;
    let mut radii = shell_radii(d, h);
    let nk = radii.len() - 1;
    let dr = d / nk as f64;
    if let Weighting::Graph { support, .. } = weighting {
        // free vertices sit at radius <= d - dr
        let extra = (support * h / dr - 1.0 + 1e-9).floor() as usize;
        radii.extend((1..=extra).map(|j| d + j as f64 * dr));
    }
    let b = Isometry::boost_to(&center.c);
    let mut vertices = vec![*center];
    let mut dirs = vec![[0.0; 3]];
    let mut shell = vec![0u32];
    let mut rings: Vec<Vec<(f64, u32)>> = vec![vec![]];
    let golden = PI * (3.0 - 5f64.sqrt());
    for (k, &rho) in radii.iter().enumerate().skip(1) {
        let s = (a * rho).sinh() / a;
        let mut ring = vec![];
        if space.n == 2 {
            let m = ((TAU * s / h).round() as usize).max(6);
            for phi in ring_angles(k, m) {
                ring.push((phi, dirs.len() as u32));
                dirs.push([phi.cos(), phi.sin(), 0.0]);
            }
        } else {
            let m = ((4.0 * PI * s * s / (h * h)).round() as usize).max(8);
            let twist = k as f64 * 0.754_877_666_2;
            for j in 0..m {
                let z = 1.0 - (2.0 * j as f64 + 1.0) / m as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * j as f64 + TAU * twist;
                dirs.push([r * phi.cos(), r * phi.sin(), z]);
            }
        }
        for dir in &dirs[vertices.len()..] {
            vertices.push(b.apply(&space.point_at(&dir[..space.n], rho)?));
            shell.push(k as u32);
        }
        rings.push(ring);
    }
    let boundary: Vec<bool> = shell.iter().map(|&k| k as usize == nk).collect();
    let collar: Vec<bool> = shell.iter().map(|&k| k as usize > nk).collect();
    let nv = vertices.len();
    let mut triangles = vec![];
    if space.n == 2 {
        // fan around the centre, then zip consecutive rings
        let mut r1 = rings[1].clone();
        r1.sort_by(|x, y| x.0.total_cmp(&y.0));
        for j in 0..r1.len() {
            triangles.push([0, r1[j].1, r1[(j + 1) % r1.len()].1]);
        }
        for k in 1..nk {
            zip_rings(&rings[k], &rings[k + 1], &mut triangles);
        }
    }
    let (mut edges, mass, volume) = match weighting {
        Weighting::Cotangent => {
            if space.n != 2 {
                return invalid("cotangent weights need a triangulated (n = 2) mesh");
            }
            let (e, m) = cotangent_weights(&space, &vertices, &triangles)?;
            (e, m.clone(), m)
        }
        Weighting::Graph { width, support } => {
            if !(width > 0.0 && support >= width) {
                return invalid("graph weights need 0 < width <= support");
            }
            let shells = ShellGeometry { space, radii: &radii, shell: &shell, dirs: &dirs };
            graph_weights(&shells, width * h, support * h)
        }
    };
    edges.sort_by_key(|e| (e.0, e.1));
    let mut deg = vec![0usize; nv];
    for &(i, j, _) in &edges {
        deg[i as usize] += 1;
        deg[j as usize] += 1;
    }
    let mut adj_start = vec![0usize; nv + 1];
    for v in 0..nv {
        adj_start[v + 1] = adj_start[v] + deg[v];
    }
    let mut fill = adj_start.clone();
    let mut adj = vec![(0u32, 0.0); adj_start[nv]];
    for &(i, j, w) in &edges {
        adj[fill[i as usize]] = (j, w);
        fill[i as usize] += 1;
        adj[fill[j as usize]] = (i, w);
        fill[j as usize] += 1;
    }
    let mesh =
        BallMesh { space, center: *center, radius: d, h, weighting, vertices, shell, boundary, collar, mass, volume, adj_start, adj, triangles };
    mesh.validate()?;
    Ok(mesh)
}

type Edges = Vec<(u32, u32, f64)>;

fn cotangent_weights(space: &SpaceConfig, vertices: &[SpacePoint], triangles: &[[u32; 3]]) -> Result<(Edges, Vec<f64>)> {
    let mut mass = vec![0.0; vertices.len()];
    let mut acc: std::collections::HashMap<(u32, u32), f64> = std::collections::HashMap::new();
    for t in triangles {
        let p: Vec<&SpacePoint> = t.iter().map(|&i| &vertices[i as usize]).collect();
        let l = [space.dist(p[1], p[2]), space.dist(p[0], p[2]), space.dist(p[0], p[1])];
        let sp = 0.5 * (l[0] + l[1] + l[2]);
        let area = (sp * (sp - l[0]) * (sp - l[1]) * (sp - l[2])).max(0.0).sqrt();
        if !(area > 0.0) {
            return Err(Error::Mesh("degenerate triangle".into()));
        }
        for c in 0..3 {
            mass[t[c] as usize] += area / 3.0;
            // edge opposite corner c; cot = cos / sin with 2 area = li lj sin
            let (i, j) = (t[(c + 1) % 3], t[(c + 2) % 3]);
            let (li, lj, lc) = (l[(c + 1) % 3], l[(c + 2) % 3], l[c]);
            let cot = (li * li + lj * lj - lc * lc) / (4.0 * area);
            *acc.entry((i.min(j), i.max(j))).or_insert(0.0) += 0.5 * cot;
        }
    }
    Ok((acc.into_iter().map(|((i, j), w)| (i, j, w.max(0.0))).collect(), mass))
}

/// Vertices as (shell radius, unit direction) in the frame of the centre.
/// Tapered Gaussian: a hard cut spoils the (otherwise very accurate) sums
/// along rings, so the kernel vanishes with zero slope at `reach`.
pub(crate) fn graph_kernel(r: f64, eps: f64, reach: f64) -> f64 {
    (-(r * r) / (eps * eps)).exp() * (1.0 - (r / reach).powi(2)).max(0.0).powi(2)
}

struct ShellGeometry<'a> {
    space: SpaceConfig,
    radii: &'a [f64],
    shell: &'a [u32],
    dirs: &'a [[f64; 3]],
}

/// Symmetric Gaussian weights `w = nu_u nu_v K(r)` with `nu` the volume each
/// vertex represents, and masses `m_v = nu_v sum_u nu_u K r^2 / (2n)` so that
/// `(1/m_v) sum_u w (f_u - f_v)` is a consistent Laplacian.
fn graph_weights(g: &ShellGeometry, eps: f64, reach: f64) -> (Edges, Vec<f64>, Vec<f64>) {
    let a = g.space.a;
    let nk = g.radii.len() - 1;
    let nv = g.shell.len();
    let mut members: Vec<Vec<usize>> = vec![vec![]; nk + 1];
    for (v, &k) in g.shell.iter().enumerate() {
        members[k as usize].push(v);
    }
    let dr = g.radii[1];
    let n = g.space.n as i32;
    let sphere = |r: f64| if n == 2 { TAU * (a * r).sinh() / a } else { 4.0 * PI * ((a * r).sinh() / a).powi(2) };
    // trapezoid weights in the radial direction; the centre carries the
    // Euler-Maclaurin endpoint term (the radial integrand is odd for n = 2,
    // even for n = 3, where a token weight keeps the centre connected)
    let shell_volume: Vec<f64> = (0..=nk)
        .map(|k| match k {
            0 if n == 2 => PI * dr * dr / 6.0,
            0 => 1e-3 * dr.powi(3),
            k if k == nk => 0.5 * dr * sphere(g.radii[k]),
            k => dr * sphere(g.radii[k]),
        })
        .collect();
    let nu: Vec<f64> = g.shell.iter().map(|&k| shell_volume[k as usize] / members[k as usize].len() as f64).collect();
    let trees: Vec<KdTree> = members.iter().map(|m| KdTree::new(m.iter().map(|&v| g.dirs[v]).collect())).collect();
    let kernel = |r: f64| graph_kernel(r, eps, reach);
    let mut edges = vec![];
    let mut second = vec![0.0; nv];
    let mut visit = |v: usize, u: usize, r: f64, edges: &mut Edges| {
        if u > v {
            edges.push((v as u32, u as u32, nu[u] * nu[v] * kernel(r)));
        }
        second[v] += nu[u] * kernel(r) * r * r;
    };
    for v in 0..nv {
        let kv = g.shell[v] as usize;
        let r1 = g.radii[kv];
        for k in 0..=nk {
            let r2 = g.radii[k];
            if (r2 - r1).abs() > reach {
                continue;
            }
            if k == 0 || kv == 0 {
                for &u in &members[k] {
                    if u != v && (r1 - r2).abs().max(r1.max(r2)) <= reach {
                        visit(v, u, r1.max(r2), &mut edges);
                    }
                }
                continue;
            }
            // law of cosines: cosh(a D) = cosh cosh - sinh sinh cos(angle)
            let (c1, s1, c2, s2) = ((a * r1).cosh(), (a * r1).sinh(), (a * r2).cosh(), (a * r2).sinh());
            let cos_min = (c1 * c2 - (a * reach).cosh()) / (s1 * s2);
            let chord = (2.0 - 2.0 * cos_min.clamp(-1.0, 1.0)).sqrt() + 1e-12;
            trees[k].for_each_within(&g.dirs[v], chord, |i, _| {
                let u = members[k][i];
                if u == v {
                    return;
                }
                let dv = &g.dirs[v];
                let du = &g.dirs[u];
                let cos = (dv[0] * du[0] + dv[1] * du[1] + dv[2] * du[2]).clamp(-1.0, 1.0);
                let r = (c1 * c2 - s1 * s2 * cos).max(1.0).acosh() / a;
                if r <= reach {
                    visit(v, u, r, &mut edges);
                }
            });
        }
    }
    let mass = (0..nv).map(|v| nu[v] * second[v] / (2.0 * n as f64)).collect();
    (edges, mass, nu)
}

impl BallMesh {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(u32, f64)] {
        &self.adj[self.adj_start[v]..self.adj_start[v + 1]]
    }

    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&v| !self.is_fixed(v))
    }

    pub fn num_edges(&self) -> usize {
        self.adj.len() / 2
    }

    /// Smallest edge weight (cotangent weights are clamped at zero).
    pub fn min_weight(&self) -> f64 {
        self.adj.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)
    }

    /// Boundary or collar vertex.
    pub fn is_fixed(&self, v: usize) -> bool {
        self.boundary[v] || self.collar[v]
    }

    /// Connected, boundary on the sphere, interior degree at least 3.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(u, w) in self.neighbors(v) {
                if w > 0.0 && !seen[u as usize] {
                    seen[u as usize] = true;
                    stack.push(u as usize);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Mesh("mesh is not connected".into()));
        }
        for v in 0..n {
            let r = self.space.dist(&self.center, &self.vertices[v]);
            if self.boundary[v] && (r < self.radius - self.h - 1e-9 || r > self.radius + 1e-9) {
                return Err(Error::Mesh(format!("boundary vertex at radius {r}")));
            }
            if self.collar[v] && !(r > self.radius && r <= self.radius + (self.weighting.support() + 1.0) * self.h) {
                return Err(Error::Mesh(format!("collar vertex at radius {r}")));
            }
            if !self.is_fixed(v) && self.neighbors(v).iter().filter(|e| e.1 > 0.0).count() < 3 {
                return Err(Error::Mesh(format!("interior vertex {v} has degree below 3")));
            }
        }
        Ok(())
    }

    /// `(1/m_v) sum_u w_uv (f_u - f_v)` at free vertices, 0 on boundary and collar.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|v| {
                if self.is_fixed(v) {
                    return 0.0;
                }
                self.neighbors(v).iter().map(|&(u, w)| w * (f[u as usize] - f[v])).sum::<f64>() / self.mass[v]
            })
            .collect()
    }

    /// Distance from the centre.
    pub fn radius_of(&self, v: usize) -> f64 {
        self.space.dist(&self.center, &self.vertices[v])
    }
}
