//! Discrete harmonic maps on ball meshes: tension fields, Dirichlet solves by
//! an accelerated centroid iteration, the distance-subharmonicity check and
//! nested ball sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{mink, Coords, SpaceConfig, SpacePoint};
use crate::index::PointIndex;
use crate::mesh::{graph_kernel, mesh_ball, BallMesh, Weighting};
use crate::mollify::{DiscreteMap, PointMap};

/// Edges with at least one free endpoint; the rest never move.
struct Stencil {
    edges: Vec<(u32, u32, f64)>,
    free: Vec<usize>,
}

impl Stencil {
    fn new(mesh: &BallMesh) -> Self {
        let mut edges = vec![];
        for v in 0..mesh.len() {
            for &(u, w) in mesh.neighbors(v) {
                if (u as usize) > v && w > 0.0 && !(mesh.is_fixed(v) && mesh.is_fixed(u as usize)) {
                    edges.push((v as u32, u, w));
                }
            }
        }
        Self { edges, free: mesh.interior().collect() }
    }

    /// `sum_u w_uv log_{f(v)} f(u)` (model coordinates) and `sum_u w_uv` for
    /// every vertex, with one distance evaluation per edge.
    fn pull(&self, f: &[SpacePoint]) -> (Vec<Coords>, Vec<f64>) {
        let mut s = vec![[0.0; 4]; f.len()];
        let mut sw = vec![0.0; f.len()];
        for &(i, j, w) in &self.edges {
            let (i, j) = (i as usize, j as usize);
            let (x, y) = (&f[i].c, &f[j].c);
            sw[i] += w;
            sw[j] += w;
            let d = SpaceConfig::model_distance(x, y);
            if d < 1e-300 {
                continue;
            }
            // log_x y = d / sinh(d) (y + <x,y> x)
            let ip = mink(x, y);
            let c = w * d / d.sinh();
            for k in 0..4 {
                s[i][k] += c * (y[k] + ip * x[k]);
                s[j][k] += c * (x[k] + ip * y[k]);
            }
        }
        (s, sw)
    }

    /// `sum w dist^2` over the stencil's edges.
    fn energy(&self, f: &[SpacePoint], target: &SpaceConfig) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j, w)| {
                let d = target.dist(&f[i as usize], &f[j as usize]);
                w * d * d
            })
            .sum()
    }

    fn tension(&self, mesh: &BallMesh, f: &[SpacePoint], target: &SpaceConfig) -> Vec<Coords> {
        let (mut s, _) = self.pull(f);
        for (v, t) in s.iter_mut().enumerate() {
            let c = if mesh.is_fixed(v) { 0.0 } else { 1.0 / (mesh.mass[v] * target.a) };
            t.iter_mut().for_each(|x| *x *= c);
        }
        s
    }

    fn max_residual(&self, mesh: &BallMesh, f: &[SpacePoint], target: &SpaceConfig) -> f64 {
        self.tension(mesh, f, target).iter().map(|t| mink(t, t).max(0.0).sqrt()).fold(0.0, f64::max)
    }

    /// One damped centroid step at every free vertex.
    fn centroid_step(&self, y: &[SpacePoint], eta: f64) -> Vec<SpacePoint> {
        let (s, sw) = self.pull(y);
        let mut out = y.to_vec();
        for &v in &self.free {
            if sw[v] > 0.0 {
                let c = eta / sw[v];
                out[v] = SpaceConfig::exp_raw(&y[v], &[s[v][0] * c, s[v][1] * c, s[v][2] * c, s[v][3] * c]);
            }
        }
        out
    }
}

/// Discrete tension `(1/m_v) sum_u w_uv log_{f(v)} f(u)` in model coordinates
/// divided by `a` (so its Minkowski norm is Riemannian); zero at boundary and
/// collar vertices.
pub fn tension(mesh: &BallMesh, values: &[SpacePoint], target: &SpaceConfig) -> Result<Vec<Coords>> {
    if values.len() != mesh.len() {
        return invalid(format!("map has {} values for {} vertices", values.len(), mesh.len()));
    }
    Ok(Stencil::new(mesh).tension(mesh, values, target))
}

pub fn tension_norms(mesh: &BallMesh, values: &[SpacePoint], target: &SpaceConfig) -> Result<Vec<f64>> {
    Ok(tension(mesh, values, target)?.iter().map(|t| mink(t, t).max(0.0).sqrt()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop once the largest interior tension norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial centroid step.
    pub eta: f64,
    /// Nesterov momentum with restart on energy increase.
    pub accelerate: bool,
    /// Accepted iterations between residual evaluations.
    pub check_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_iters: 20_000, eta: 0.9, accelerate: true, check_every: 5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub radius: f64,
    pub vertices: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Largest interior tension norm at the returned map.
    pub residual: f64,
    /// Largest `dist(h(v), f(v))` over interior vertices, `f` the boundary map.
    pub sup_dist: f64,
    /// Energy after each accepted iteration (nonincreasing).
    pub energy_trace: Vec<f64>,
    /// `(iteration, residual)` at each check.
    pub residual_trace: Vec<(usize, f64)>,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (i, r) in &self.residual_trace {
            s.push_str(&format!("{i},{r}\n"));
        }
        s
    }
}

/// `sum_{u<v} w_uv dist(f_u, f_v)^2` over edges with a free endpoint.
pub fn energy(mesh: &BallMesh, f: &[SpacePoint], target: &SpaceConfig) -> f64 {
    Stencil::new(mesh).energy(f, target)
}

/// Harmonic map on `mesh` equal to `boundary` on the boundary vertices.
pub fn dirichlet_solve<M: PointMap>(
    mesh: &BallMesh,
    boundary: &M,
    init: Option<&[SpacePoint]>,
    opts: &SolveOptions,
) -> Result<(DiscreteMap, SolveReport)> {
    if !(opts.tol > 0.0) || !(opts.eta > 0.0 && opts.eta <= 1.0) || opts.check_every == 0 {
        return invalid("solve needs tol > 0, eta in (0, 1] and check_every >= 1");
    }
    let target = boundary.target();
    let fixed: Vec<SpacePoint> = mesh.vertices.iter().map(|p| boundary.eval(p)).collect::<Result<_>>()?;
    let mut x = match init {
        Some(v) if v.len() == mesh.len() => v.to_vec(),
        Some(v) => return invalid(format!("initial map has {} values for {} vertices", v.len(), mesh.len())),
        None => fixed.clone(),
    };
    for v in 0..mesh.len() {
        if x[v].n as usize != target.n {
            return Err(Error::DimensionMismatch { expected: target.n, got: x[v].n as usize });
        }
        if mesh.is_fixed(v) {
            x[v] = fixed[v];
        }
    }
    let st = Stencil::new(mesh);
    let mut prev = x.clone();
    let mut e = st.energy(&x, &target);
    let mut rep = SolveReport {
        radius: mesh.radius,
        vertices: mesh.len(),
        iterations: 0,
        restarts: 0,
        converged: false,
        residual: st.max_residual(mesh, &x, &target),
        sup_dist: 0.0,
        energy_trace: vec![e],
        residual_trace: vec![],
    };
    rep.residual_trace.push((0, rep.residual));
    rep.converged = rep.residual <= opts.tol;
    let (mut eta, mut k, mut accepted) = (opts.eta, 0usize, 0usize);
    while !rep.converged && rep.iterations < opts.max_iters {
        rep.iterations += 1;
        let beta = if opts.accelerate { k as f64 / (k as f64 + 3.0) } else { 0.0 };
        let y = if beta > 0.0 {
            let mut y = x.clone();
            for &v in &st.free {
                let back = SpaceConfig::log_raw(&x[v], &prev[v]);
                y[v] = SpaceConfig::exp_raw(&x[v], &[-beta * back[0], -beta * back[1], -beta * back[2], -beta * back[3]]);
            }
            y
        } else {
            x.clone()
        };
        let xn = st.centroid_step(&y, eta);
        let en = st.energy(&xn, &target);
        if en <= e + 1e-14 * e.abs() {
            prev = std::mem::replace(&mut x, xn);
            e = en.min(e);
            k += 1;
            accepted += 1;
            rep.energy_trace.push(e);
            if accepted % opts.check_every == 0 {
                rep.residual = st.max_residual(mesh, &x, &target);
                rep.residual_trace.push((rep.iterations, rep.residual));
                rep.converged = rep.residual <= opts.tol;
            }
        } else if k > 0 {
            k = 0;
            prev = x.clone();
            rep.restarts += 1;
        } else {
            eta *= 0.5;
            if eta < 1e-10 {
                break;
            }
        }
    }
    rep.residual = st.max_residual(mesh, &x, &target);
    rep.converged = rep.residual <= opts.tol;
    rep.sup_dist = st.free.iter().map(|&v| target.dist(&x[v], &fixed[v])).fold(0.0, f64::max);
    let map = DiscreteMap::new(mesh.space, target, mesh.vertices.clone(), x)?;
    Ok((map, rep))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SchoenYauRecord {
    pub vertex: usize,
    pub radius: f64,
    pub distance: f64,
    pub laplacian: f64,
    /// `-(|tau(h)| + |tau(f)|) - slack`.
    pub bound: f64,
}

/// Discrete check of `Delta dist(h, f) >= -|tau(h)| - |tau(f)|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchoenYauReport {
    pub slack: f64,
    pub records: Vec<SchoenYauRecord>,
    pub violations: Vec<usize>,
    pub fraction_ok: f64,
    /// Smallest `laplacian + |tau(h)| + |tau(f)|` over the probes.
    pub worst_margin: f64,
}

/// Probes are interior vertices at least `2 h` inside the boundary.
pub fn schoen_yau_check(
    mesh: &BallMesh,
    h_values: &[SpacePoint],
    f_values: &[SpacePoint],
    target: &SpaceConfig,
    slack: f64,
) -> Result<SchoenYauReport> {
    if h_values.len() != mesh.len() || f_values.len() != mesh.len() {
        return invalid("maps must be given at every vertex");
    }
    let dist: Vec<f64> = h_values.iter().zip(f_values).map(|(a, b)| target.dist(a, b)).collect();
    let lap = mesh.laplacian(&dist);
    let th = tension_norms(mesh, h_values, target)?;
    let tf = tension_norms(mesh, f_values, target)?;
    let mut rep = SchoenYauReport { slack, records: vec![], violations: vec![], fraction_ok: 0.0, worst_margin: f64::INFINITY };
    for v in mesh.interior() {
        let r = mesh.radius_of(v);
        if r > mesh.radius - 2.0 * mesh.h {
            continue;
        }
        let margin = lap[v] + th[v] + tf[v];
        rep.worst_margin = rep.worst_margin.min(margin);
        let bound = -(th[v] + tf[v]) - slack;
        if lap[v] < bound {
            rep.violations.push(v);
        }
        rep.records.push(SchoenYauRecord { vertex: v, radius: r, distance: dist[v], laplacian: lap[v], bound });
    }
    if rep.records.is_empty() {
        return invalid("no interior probes");
    }
    rep.fraction_ok = 1.0 - rep.violations.len() as f64 / rep.records.len() as f64;
    Ok(rep)
}

/// Solves on nested balls, each warm-started from the previous solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub h: f64,
    pub radii: Vec<f64>,
    pub reports: Vec<SolveReport>,
    /// Some solve did not converge.
    pub flagged: bool,
}

impl SweepReport {
    pub fn sup_dists(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.sup_dist).collect()
    }

    /// `sup_dist` at the largest radius over that at the previous one.
    pub fn plateau_ratio(&self) -> f64 {
        let s = self.sup_dists();
        match s.len() {
            0 | 1 => f64::NAN,
            n if s[n - 2] == 0.0 => {
                if s[n - 1] == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            n => s[n - 1] / s[n - 2],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,vertices,iterations,converged,residual,sup_dist\n");
        for r in &self.reports {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.radius, r.vertices, r.iterations, r.converged, r.residual, r.sup_dist));
        }
        s
    }
}

/// Mesh, solution and boundary-map values of the last solve of a sweep.
pub struct SweepOutcome {
    pub report: SweepReport,
    pub mesh: BallMesh,
    pub solution: DiscreteMap,
}

pub fn ball_sweep<M: PointMap>(
    map: &M,
    source: SpaceConfig,
    center: &SpacePoint,
    radii: &[f64],
    h: f64,
    opts: &SolveOptions,
) -> Result<SweepOutcome> {
    ball_sweep_inspect(map, source, center, radii, h, opts, |_, _| Ok(()))
}

/// [`ball_sweep`], calling `inspect` on every intermediate mesh and solution.
pub fn ball_sweep_inspect<M: PointMap>(
    map: &M,
    source: SpaceConfig,
    center: &SpacePoint,
    radii: &[f64],
    h: f64,
    opts: &SolveOptions,
    mut inspect: impl FnMut(&BallMesh, &DiscreteMap) -> Result<()>,
) -> Result<SweepOutcome> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("radius grid must be nonempty and increasing");
    }
    let mut report = SweepReport { h, radii: radii.to_vec(), reports: vec![], flagged: false };
    let mut last: Option<(BallMesh, DiscreteMap)> = None;
    for &d in radii {
        let mesh = mesh_ball(source, center, d, h)?;
        let init = match &last {
            Some((old, sol)) => {
                let idx = PointIndex::new(source, old.vertices.clone());
                let mut init = Vec::with_capacity(mesh.len());
                for p in &mesh.vertices {
                    let inside = source.dist(center, p) < old.radius - 0.5 * h;
                    match idx.nearest(p) {
                        Some((i, _)) if inside => init.push(sol.values[i]),
                        _ => init.push(map.eval(p)?),
                    }
                }
                Some(init)
            }
            None => None,
        };
        let (sol, rep) = dirichlet_solve(&mesh, map, init.as_deref(), opts)?;
        report.flagged |= !rep.converged;
        report.reports.push(rep);
        inspect(&mesh, &sol)?;
        last = Some((mesh, sol));
    }
    let (mesh, solution) = last.expect("nonempty grid");
    Ok(SweepOutcome { report, mesh, solution })
}

/// Off-vertex values of a vertex map: the Riemannian centroid of the values
/// within the stencil reach of `z`, weighted by `volume_u K(dist(z, u))`. For
/// a discrete harmonic map this is the value the solver's own stencil would
/// assign to a vertex placed at `z`.
pub struct StencilInterpolant<'a> {
    mesh: &'a BallMesh,
    values: &'a [SpacePoint],
    target: SpaceConfig,
    index: PointIndex,
    eps: f64,
    reach: f64,
}

impl<'a> StencilInterpolant<'a> {
    pub fn new(mesh: &'a BallMesh, values: &'a [SpacePoint], target: SpaceConfig) -> Result<Self> {
        let Weighting::Graph { width, support } = mesh.weighting else {
            return invalid("stencil interpolation needs graph weights");
        };
        if values.len() != mesh.len() {
            return invalid("values must be given at every vertex");
        }
        let index = PointIndex::new(mesh.space, mesh.vertices.clone());
        Ok(Self { mesh, values, target, index, eps: width * mesh.h, reach: support * mesh.h })
    }
}

impl PointMap for StencilInterpolant<'_> {
    fn target(&self) -> SpaceConfig {
        self.target
    }

    fn eval(&self, z: &SpacePoint) -> Result<SpacePoint> {
        if self.mesh.space.dist(&self.mesh.center, z) > self.mesh.radius + 1e-9 {
            return Err(Error::Mesh("point outside the meshed ball".into()));
        }
        let near = self.index.within(z, self.reach);
        let w: Vec<(usize, f64)> =
            near.into_iter().map(|(u, d)| (u, self.mesh.volume[u] * graph_kernel(d, self.eps, self.reach))).filter(|e| e.1 > 0.0).collect();
        let Some(&(start, _)) = w.iter().max_by(|a, b| a.1.total_cmp(&b.1)) else {
            return Err(Error::Mesh("no vertex within the stencil reach".into()));
        };
        let total: f64 = w.iter().map(|e| e.1).sum();
        let mut x = self.values[start];
        for _ in 0..100 {
            let mut acc = [0.0; 4];
            for &(u, wu) in &w {
                let l = SpaceConfig::log_raw(&x, &self.values[u]);
                for c in 0..4 {
                    acc[c] += wu / total * l[c];
                }
            }
            let step = mink(&acc, &acc).max(0.0).sqrt();
            x = SpaceConfig::exp_raw(&x, &acc);
            if step < 1e-13 {
                break;
            }
        }
        Ok(x)
    }
}
