//! Barrier functions around a hull: the distance `delta` to a smoothed
//! retraction, the bump profile with its shell functions, and the assembled
//! bounded function `Phi` with `Delta Phi >= exp(-a dist)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::quantile;
use crate::geometry::{Isometry, SpaceConfig, SpacePoint};
use crate::hull::{dist_to_hull, AnnulusSampler, GeodesicHull, NearHullSampler};
use crate::kernel::{envelope_growth, shell_integrate, KernelFlavor, KernelModel, ShellOptions};
use crate::mollify::PointMap;
use crate::quad::gauss_legendre_on;
use crate::rng::RandomStream;

/// Probes closer than this to the hull are outside the validity range of `delta`.
pub const DELTA_MIN_RADIUS: f64 = 2.0;

/// Value, FD Laplacian and FD gradient norm of `f` at `x` from one stencil.
pub fn fd_stencil<F>(space: &SpaceConfig, mut f: F, x: &SpacePoint, h: f64) -> Result<(f64, f64, f64)>
where
    F: FnMut(&SpacePoint) -> Result<f64>,
{
    if !(h > 0.0) {
        return invalid("fd step must be positive");
    }
    let b = Isometry::boost_to(&x.c);
    let f0 = f(x)?;
    let (mut lap, mut g2) = (0.0, 0.0);
    for i in 1..=space.n {
        let mut e = [0.0; 4];
        e[i] = space.a * h;
        let v = b.apply_coords(&e);
        let p = SpaceConfig::exp_raw(x, &v);
        let q = SpaceConfig::exp_raw(x, &[-v[0], -v[1], -v[2], -v[3]]);
        let (fp, fq) = (f(&p)?, f(&q)?);
        lap += fp + fq - 2.0 * f0;
        g2 += ((fp - fq) / (2.0 * h)).powi(2);
    }
    Ok((f0, lap / (h * h), g2.sqrt()))
}

/// `delta(x) = dist(x, r(x))` for a self-map `r`.
pub struct DeltaField<M> {
    pub map: M,
    pub space: SpaceConfig,
}

pub fn delta_field<M: PointMap>(map: M, space: SpaceConfig) -> Result<DeltaField<M>> {
    if map.target() != space {
        return invalid("delta needs a self-map of the space");
    }
    Ok(DeltaField { map, space })
}

impl<M: PointMap> DeltaField<M> {
    pub fn value(&self, x: &SpacePoint) -> Result<f64> {
        Ok(self.space.dist(x, &self.map.eval(x)?))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub hull_distance: f64,
    pub value: f64,
    pub laplacian: f64,
    pub gradient: Option<f64>,
}

/// Per-probe FD data for `delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaReport {
    pub h: f64,
    pub records: Vec<ProbeRecord>,
    pub min_laplacian: f64,
    pub max_gradient: f64,
}

impl DeltaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("hull_distance,delta,laplacian,gradient\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.hull_distance, r.value, r.laplacian, r.gradient.unwrap_or(f64::NAN)));
        }
        s
    }
}

pub fn delta_probe<M: PointMap>(
    delta: &DeltaField<M>,
    k: &GeodesicHull,
    probes: &[SpacePoint],
    h: f64,
) -> Result<DeltaReport> {
    if probes.is_empty() {
        return invalid("no probes");
    }
    let mut rep = DeltaReport { h, records: vec![], min_laplacian: f64::INFINITY, max_gradient: 0.0 };
    for p in probes {
        let (dk, _) = dist_to_hull(p, k)?;
        if dk < DELTA_MIN_RADIUS {
            return Err(Error::Mesh(format!("probe at hull distance {dk:.3} is inside the margin {DELTA_MIN_RADIUS}")));
        }
        let (v, lap, g) = fd_stencil(&delta.space, |x| delta.value(x), p, h)?;
        rep.min_laplacian = rep.min_laplacian.min(lap);
        rep.max_gradient = rep.max_gradient.max(g);
        rep.records.push(ProbeRecord { hull_distance: dk, value: v, laplacian: lap, gradient: Some(g) });
    }
    Ok(rep)
}

/// Smallest radius `c` of `grid` (increasing, each at least
/// `DELTA_MIN_RADIUS`) such that `delta` has Laplacian at least `floor` at
/// every probe with hull distance `>= c`, with the report for those probes.
pub fn validity_radius<M: PointMap>(
    delta: &DeltaField<M>,
    k: &GeodesicHull,
    probes: &[SpacePoint],
    h: f64,
    grid: &[f64],
    floor: f64,
) -> Result<(f64, DeltaReport)> {
    if grid.iter().any(|&c| c < DELTA_MIN_RADIUS) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid(format!("radius grid must increase from at least {DELTA_MIN_RADIUS}"));
    }
    let dists: Vec<f64> = probes.iter().map(|p| dist_to_hull(p, k).map(|x| x.0)).collect::<Result<_>>()?;
    for &c in grid {
        let band: Vec<SpacePoint> = probes.iter().zip(&dists).filter(|(_, &d)| d >= c).map(|(p, _)| *p).collect();
        if band.is_empty() {
            break;
        }
        let rep = delta_probe(delta, k, &band, h)?;
        if rep.min_laplacian >= floor {
            return Ok((c, rep));
        }
    }
    Err(Error::Audit(format!("no radius in the grid gives Delta delta >= {floor} on the probes")))
}

/// The profile `u`: smoothstep ramp on `[-1/2, 0]`, equal to 1 on
/// `[0, 1 + sigma]`, a Hermite cubic on `[1 + sigma, 2 + sigma]` and
/// `exp(-eps (x - 1 - sigma))` beyond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub eps: f64,
    /// Lower bound on `Delta delta`.
    pub lap_lower: f64,
    /// Upper bound on `|grad delta|^2`.
    pub grad_upper: f64,
    pub sigma: f64,
}

impl BumpProfile {
    fn knot(&self) -> f64 {
        1.0 + self.sigma
    }

    /// `(u, u')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let k = self.knot();
        if x <= -0.5 {
            (0.0, 0.0)
        } else if x < 0.0 {
            let s = 2.0 * x + 1.0;
            (s * s * (3.0 - 2.0 * s), 12.0 * s * (1.0 - s))
        } else if x <= k {
            (1.0, 0.0)
        } else if x < k + 1.0 {
            let t = x - k;
            let q = (-self.eps).exp();
            let m1 = -self.eps * q;
            let h00 = 2.0 * t * t * t - 3.0 * t * t + 1.0;
            let h01 = -2.0 * t * t * t + 3.0 * t * t;
            let h11 = t * t * t - t * t;
            let d00 = 6.0 * t * t - 6.0 * t;
            let d11 = 3.0 * t * t - 2.0 * t;
            (h00 + h01 * q + h11 * m1, d00 - d00 * q + d11 * m1)
        } else {
            let u = (-self.eps * (x - k)).exp();
            (u, -self.eps * u)
        }
    }

    pub fn u(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// `int_{-1/2}^x u`.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let k = self.knot();
        if x <= -0.5 {
            return 0.0;
        }
        if x < 0.0 {
            let s = 2.0 * x + 1.0;
            return 0.5 * (s * s * s - 0.5 * s * s * s * s);
        }
        if x <= k {
            return 0.25 + x;
        }
        let q = (-self.eps).exp();
        let m1 = -self.eps * q;
        let blend = |t: f64| {
            let (t3, t4) = (t * t * t, t * t * t * t);
            (0.5 * t4 - t3 + t) + q * (-0.5 * t4 + t3) + m1 * (0.25 * t4 - t3 / 3.0)
        };
        let base = 0.25 + k;
        if x < k + 1.0 {
            return base + blend(x - k);
        }
        base + blend(1.0) + (q - (-self.eps * (x - k)).exp()) / self.eps
    }

    /// `int u` over the line.
    pub fn total(&self) -> f64 {
        let k = self.knot();
        self.antiderivative(k + 1.0) + (-self.eps).exp() / self.eps
    }

    /// Dense-grid audit of the profile's defining properties.
    pub fn audit(&self, points: usize) -> Result<()> {
        let tol = 1e-12;
        let k = self.knot();
        let fail = |m: String| Err(Error::Audit(format!("bump profile: {m}")));
        for &x in &[-0.5, 0.0, k, k + 1.0] {
            let (ul, dl) = self.eval(x - 1e-13);
            let (ur, dr) = self.eval(x + 1e-13);
            if (ul - ur).abs() > 1e-11 || (dl - dr).abs() > 1e-11 {
                return fail(format!("not C1 at {x}"));
            }
        }
        let (lo, hi) = (-1.0, k + 10.0);
        let mut prev = f64::NEG_INFINITY;
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        for i in 0..points {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let (u, du) = self.eval(x);
            if x <= -0.5 && u != 0.0 {
                return fail(format!("u({x}) = {u} on the zero range"));
            }
            if (0.0..=1.0).contains(&x) && (u - 1.0).abs() > tol {
                return fail(format!("u({x}) = {u} on the unit range"));
            }
            if x <= 1.0 && u < prev - tol {
                return fail(format!("u decreases at {x}"));
            }
            if x > k && u > prev + tol {
                return fail(format!("u increases at {x}"));
            }
            if self.lap_lower * u + self.grad_upper * du.min(0.0) < -tol {
                return fail(format!("A u + B min(u', 0) < 0 at {x}"));
            }
            if x >= 2.0 {
                let r = u * (self.eps * x).exp();
                rmin = rmin.min(r);
                rmax = rmax.max(r);
            }
            prev = u;
        }
        if !(rmin > 0.0) || rmax / rmin > (2.0 * self.eps).exp() * (1.0 + 1e-9) {
            return fail(format!("u exp(eps x) leaves [{rmin}, {rmax}]"));
        }
        Ok(())
    }
}

/// Profile for `Delta delta >= lap_lower`, `|grad delta|^2 <= grad_upper`
/// on a space of curvature `-a^2`.
pub fn bump_profile(lap_lower: f64, grad_upper: f64, a: f64) -> Result<BumpProfile> {
    if !(lap_lower > 0.0 && grad_upper > 0.0 && a > 0.0) {
        return invalid("bump profile needs A, B, a > 0");
    }
    let p = BumpProfile { eps: 0.5 * (lap_lower / grad_upper).min(a), lap_lower, grad_upper, sigma: 1.0 };
    p.audit(10_000)?;
    Ok(p)
}

/// `phi_d = f(delta) / A` with `f(s) = int_0^s u(t - d) dt`.
pub struct PhiShell<'a, M> {
    pub profile: BumpProfile,
    pub delta: &'a DeltaField<M>,
    pub d: f64,
}

pub fn phi_shell<'a, M: PointMap>(profile: BumpProfile, delta: &'a DeltaField<M>, d: f64, valid_from: f64) -> Result<PhiShell<'a, M>> {
    if d < valid_from {
        return invalid(format!("shell radius {d} is below the validity radius {valid_from}"));
    }
    Ok(PhiShell { profile, delta, d })
}

/// Shell function of the profile at a known `delta` value.
fn shell_of(profile: &BumpProfile, d: f64, delta: f64) -> f64 {
    (profile.antiderivative(delta - d) - profile.antiderivative(-d)) / profile.lap_lower
}

impl<M: PointMap> PhiShell<'_, M> {
    /// The rescale constant `1 / A`.
    pub fn scale(&self) -> f64 {
        1.0 / self.profile.lap_lower
    }

    pub fn value(&self, x: &SpacePoint) -> Result<f64> {
        Ok(shell_of(&self.profile, self.d, self.delta.value(x)?))
    }

    /// `sup phi_d`, attained as `delta -> infinity`.
    pub fn sup(&self) -> f64 {
        (self.profile.total() - self.profile.antiderivative(-self.d)) / self.profile.lap_lower
    }
}

/// Quadrature and sampling settings for `int chi(y) G(x, y) dy`.
///
/// The integral is split with a radial cutoff `psi` (1 below `inner_cut`, 0
/// beyond `outer_cut`): the `psi G` part is integrated on nodes centred at
/// `x`, the rest on fixed nodes around the probe centre out to `mid_radius`
/// and by Monte Carlo beyond, with samples shared by nearby evaluation points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenSpec {
    pub flavor: Option<KernelFlavor>,
    /// Replaces `G` by a constant (a synthetic kernel without decay).
    pub constant: Option<f64>,
    pub near_radial: usize,
    pub near_angular: usize,
    pub mid_radial: usize,
    pub mid_angular: usize,
    pub far_samples: usize,
    pub radius_max: f64,
    pub tail_fraction: f64,
    pub sampler: AnnulusSampler,
    pub inner_cut: f64,
    pub outer_cut: f64,
    pub mid_radius: f64,
    /// Samples per annulus for the boundedness check.
    pub check_samples: usize,
}

impl Default for GreenSpec {
    fn default() -> Self {
        Self {
            flavor: None,
            constant: None,
            near_radial: 6,
            near_angular: 8,
            mid_radial: 6,
            mid_angular: 10,
            far_samples: 300,
            radius_max: 20.0,
            tail_fraction: 0.01,
            sampler: AnnulusSampler::ConeCaps,
            inner_cut: 0.5,
            outer_cut: 1.0,
            mid_radius: 1.2,
            check_samples: 400,
        }
    }
}

/// Direction rule on the unit sphere of `R^n`: uniform angles on the circle,
/// Gauss–Legendre in `cos(theta)` times uniform azimuths on the 2-sphere.
fn sphere_rule(n: usize, k: usize) -> Vec<([f64; 3], f64)> {
    let tau = std::f64::consts::TAU;
    if n == 2 {
        let m = 4 * k;
        return (0..m)
            .map(|i| {
                let t = tau * (i as f64 + 0.5) / m as f64;
                ([t.cos(), t.sin(), 0.0], tau / m as f64)
            })
            .collect();
    }
    let mut out = vec![];
    for (z, wz) in gauss_legendre_on(k, -1.0, 1.0) {
        let s = (1.0 - z * z).sqrt();
        let m = 2 * k;
        for j in 0..m {
            let t = tau * (j as f64 + 0.5) / m as f64;
            out.push(([s * t.cos(), s * t.sin(), z], wz * tau / m as f64));
        }
    }
    out
}

/// C^2 step: 1 for `s <= 0`, 0 for `s >= 1`.
fn step_down(s: f64) -> f64 {
    let u = s.clamp(0.0, 1.0);
    1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Polar node of a rule: offset from the rule's centre and its weight
/// (volume element included).
#[derive(Clone, Copy, Debug)]
struct Node {
    p: SpacePoint,
    rho: f64,
    w: f64,
}

/// Product rule on `[r0, r1]`, with a Gauss–Legendre panel between
/// consecutive `breaks` inside the interval.
fn polar_nodes(space: &SpaceConfig, radial: usize, angular: usize, r0: f64, r1: f64, breaks: &[f64]) -> Result<Vec<Node>> {
    let dirs = sphere_rule(space.n, angular);
    let a = space.a;
    let mut cuts = vec![r0];
    cuts.extend(breaks.iter().copied().filter(|&b| b > r0 && b < r1));
    cuts.push(r1);
    let mut out = vec![];
    for w in cuts.windows(2) {
        for (rho, wr) in gauss_legendre_on(radial, w[0], w[1]) {
            let area = ((a * rho).sinh() / a).powi(space.n as i32 - 1);
            for (dir, wd) in &dirs {
                out.push(Node { p: space.point_at(&dir[..space.n], rho)?, rho, w: wr * wd * area });
            }
        }
    }
    Ok(out)
}

/// `Phi = sum_n exp(-a n) phi_n - int chi G`, with the evaluation machinery.
pub struct PhiAssembly<'a, M> {
    pub delta: &'a DeltaField<M>,
    pub hull: &'a GeodesicHull,
    pub profile: BumpProfile,
    pub c: f64,
    pub first_shell: usize,
    pub last_shell: usize,
    pub spec: GreenSpec,
    pub sup_bound: f64,
    pub green_stderr_max: f64,
    model: KernelModel,
    near: Vec<Node>,
    mid: Vec<Node>,
    rng: RandomStream,
}

/// Everything needed to evaluate `Phi` at points within `max_offset` of `x0`.
pub struct LocalPhi<'p, 'a, M> {
    phi: &'p PhiAssembly<'a, M>,
    pub x0: SpacePoint,
    mid: Vec<(SpacePoint, f64)>,
    far: Vec<(SpacePoint, f64)>,
    pub green_stderr: f64,
    pub truncated: bool,
}

pub fn assemble_phi<'a, M: PointMap>(
    profile: BumpProfile,
    delta: &'a DeltaField<M>,
    hull: &'a GeodesicHull,
    spec: &GreenSpec,
    c: f64,
    working: &[SpacePoint],
    rng: &RandomStream,
) -> Result<PhiAssembly<'a, M>> {
    let space = hull.space;
    if delta.space != space {
        return Err(Error::DimensionMismatch { expected: space.n, got: delta.space.n });
    }
    if c < DELTA_MIN_RADIUS {
        return invalid(format!("inner radius {c} is below {DELTA_MIN_RADIUS}"));
    }
    if !(0.0 < spec.inner_cut && spec.inner_cut < spec.outer_cut && spec.outer_cut < spec.mid_radius) {
        return invalid("green cutoffs must satisfy 0 < inner < outer < mid");
    }
    if working.is_empty() {
        return invalid("empty working region");
    }
    let model = match spec.flavor {
        Some(f) => KernelModel::new(space, f)?,
        None => KernelModel::exact(space),
    };
    let margin = spec.mid_radius - spec.outer_cut;
    let mut phi = PhiAssembly {
        delta,
        hull,
        profile,
        c,
        first_shell: c.ceil() as usize,
        last_shell: 0,
        spec: spec.clone(),
        sup_bound: 0.0,
        green_stderr_max: 0.0,
        model,
        near: vec![],
        mid: vec![],
        rng: rng.clone(),
    };
    // exp(-a N) < 1e-6 exp(-a n0)
    phi.last_shell = phi.first_shell + (1e6f64.ln() / space.a).floor() as usize + 1;
    let breaks = [spec.inner_cut, spec.outer_cut];
    phi.near = polar_nodes(&space, spec.near_radial, spec.near_angular, 0.0, spec.outer_cut, &breaks)?;
    let gw: Vec<f64> = phi.near.iter().map(|nd| cutoff(spec, nd.rho) * phi.green(nd.rho)).collect();
    for (nd, g) in phi.near.iter_mut().zip(gw) {
        nd.w *= g;
    }
    phi.mid = polar_nodes(&space, spec.mid_radial, spec.mid_angular, (spec.inner_cut - margin).max(0.0), spec.mid_radius, &breaks)?;

    // the Green mass of the chi support must be finite from the working region
    let opts = ShellOptions {
        samples: spec.check_samples,
        radius_max: spec.radius_max,
        tail_fraction: spec.tail_fraction,
        sampler: spec.sampler,
    };
    for (i, x) in working.iter().enumerate() {
        let profile = |rho: f64, _| phi.green(rho.max(1e-9));
        let (v, _, truncated) = shell_integrate(space, hull, x, c + 2.0, 1, profile, &rng.child(1 << 40 | i as u64), &opts)?;
        if truncated || !v[0].0.is_finite() {
            return invalid(format!(
                "Green integral over the {}-neighbourhood is unbounded from working point {i}; refusing to build Phi",
                c + 2.0
            ));
        }
    }
    let (mut sup, mut se) = (0.0f64, 0.0f64);
    for x in working {
        let local = phi.local(x)?;
        sup = sup.max(local.value(x)?.abs());
        se = se.max(local.green_stderr);
    }
    phi.sup_bound = sup;
    phi.green_stderr_max = se;
    Ok(phi)
}

/// Radial cutoff `psi`.
fn cutoff(spec: &GreenSpec, rho: f64) -> f64 {
    step_down((rho - spec.inner_cut) / (spec.outer_cut - spec.inner_cut))
}

/// Stable per-point stream index.
fn point_key(x: &SpacePoint) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for v in x.coords() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(31);
    }
    h
}

impl<'a, M: PointMap> PhiAssembly<'a, M> {
    pub fn space(&self) -> SpaceConfig {
        self.hull.space
    }

    fn green(&self, rho: f64) -> f64 {
        match self.spec.constant {
            Some(c) => c,
            None => self.model.green(rho),
        }
    }

    /// `chi` as a function of hull distance: 1 up to `C + 1`, 0 from `C + 2`.
    pub fn chi_of(&self, hull_distance: f64) -> f64 {
        step_down(hull_distance - self.c - 1.0)
    }

    fn chi_at(&self, y: &SpacePoint) -> f64 {
        match self.hull.nearest_within(y, self.c + 2.0) {
            Some(hit) => self.chi_of(hit.dist),
            None => 0.0,
        }
    }

    /// `chi` at `y` knowing `|dist(y) - center_dist| <= rho`.
    fn chi_bounded(&self, y: &SpacePoint, center_dist: f64, rho: f64) -> f64 {
        if center_dist + rho <= self.c + 1.0 {
            1.0
        } else if center_dist - rho >= self.c + 2.0 {
            0.0
        } else {
            self.chi_at(y)
        }
    }

    /// The truncated shell series at a known `delta` value.
    pub fn series_at(&self, delta: f64) -> f64 {
        let a = self.space().a;
        (self.first_shell..=self.last_shell)
            .map(|n| (-a * n as f64).exp() * shell_of(&self.profile, n as f64, delta))
            .sum()
    }

    /// Largest distance from `x0` at which a [`LocalPhi`] is valid.
    pub fn max_offset(&self) -> f64 {
        0.75 * (self.spec.mid_radius - self.spec.outer_cut)
    }

    /// Fixed nodes and Monte Carlo samples around `x0`.
    pub fn local(&self, x0: &SpacePoint) -> Result<LocalPhi<'_, 'a, M>> {
        let space = self.space();
        let (d0, _) = dist_to_hull(x0, self.hull)?;
        let b = Isometry::boost_to(&x0.c);
        let mut mid = vec![];
        for nd in &self.mid {
            let y = b.apply(&nd.p);
            let chi = self.chi_bounded(&y, d0, nd.rho);
            if chi > 0.0 {
                mid.push((y, nd.w * chi));
            }
        }
        let width = self.c + 2.0;
        let sampler = NearHullSampler::new(self.hull, x0, self.spec.sampler);
        let rng = self.rng.child(point_key(x0));
        let must_reach = (d0 - width).max(0.0) + 2.0;
        let cap = (space.n - 1) as f64 * space.a;
        let (mut far, mut vols) = (vec![], vec![]);
        let (mut sum, mut var) = (0.0, 0.0);
        let mut r0 = self.spec.mid_radius;
        let mut j = 0u64;
        let truncated = loop {
            let r1 = r0.floor() + 1.0;
            let mut r = rng.child(j);
            let samples = sampler.sample(&mut r, r0, r1, width, self.spec.far_samples)?;
            let n = samples.len() as f64;
            // s: the annulus estimate; s2: sum of squared per-sample terms
            let (mut s, mut s2, mut vol) = (0.0, 0.0, 0.0);
            for smp in &samples {
                if let Some(hd) = smp.hull_dist {
                    vol += smp.weight / n;
                    let w = smp.weight * self.chi_of(hd) / n;
                    if w > 0.0 {
                        let v = w * self.green(smp.rho);
                        s += v;
                        s2 += (v * n).powi(2);
                        far.push((smp.point, w));
                    }
                }
            }
            sum += s;
            var += ((s2 / n - s * s) / (n - 1.0)).max(0.0);
            vols.push(vol);
            j += 1;
            r0 = r1;
            if r0 >= must_reach && vols.len() >= 3 {
                let g = envelope_growth(&vols, cap);
                let v_last = vols.iter().rev().take(2).copied().fold(0.0, f64::max);
                let tail: f64 = (0..200).map(|i| self.green(r0 + i as f64) * v_last * (g * (i as f64 + 1.0)).exp()).sum();
                if tail <= self.spec.tail_fraction * sum {
                    break false;
                }
            }
            if r0 >= self.spec.radius_max {
                break true;
            }
        };
        Ok(LocalPhi { phi: self, x0: *x0, mid, far, green_stderr: var.sqrt(), truncated })
    }

    pub fn value(&self, x: &SpacePoint) -> Result<f64> {
        self.local(x)?.value(x)
    }
}

impl<M: PointMap> LocalPhi<'_, '_, M> {
    fn check(&self, x: &SpacePoint) -> Result<()> {
        let off = self.phi.space().dist(x, &self.x0);
        if off > self.phi.max_offset() {
            return invalid(format!("evaluation point is {off:.3} from the local centre"));
        }
        Ok(())
    }

    pub fn series(&self, x: &SpacePoint) -> Result<f64> {
        Ok(self.phi.series_at(self.phi.delta.value(x)?))
    }

    /// `int chi(y) G(x, y) dy`.
    pub fn green(&self, x: &SpacePoint) -> Result<f64> {
        self.check(x)?;
        let phi = self.phi;
        let space = phi.space();
        let (dx, _) = dist_to_hull(x, phi.hull)?;
        let b = Isometry::boost_to(&x.c);
        let mut near = 0.0;
        for nd in &phi.near {
            if nd.w != 0.0 {
                let chi = phi.chi_bounded(&b.apply(&nd.p), dx, nd.rho);
                near += nd.w * chi;
            }
        }
        let spec = &phi.spec;
        let mut mid = 0.0;
        for (y, w) in &self.mid {
            let r = space.dist(x, y);
            mid += w * (1.0 - cutoff(spec, r)) * phi.green(r);
        }
        let far: f64 = self.far.iter().map(|(y, w)| w * phi.green(space.dist(x, y))).sum();
        Ok(near + mid + far)
    }

    pub fn value(&self, x: &SpacePoint) -> Result<f64> {
        Ok(self.series(x)? - self.green(x)?)
    }
}

/// A scalar field that can report its value and FD Laplacian at a point.
pub trait ProbeField {
    fn space(&self) -> SpaceConfig;
    fn probe(&self, x: &SpacePoint, h: f64) -> Result<(f64, f64)>;
}

impl<M: PointMap> ProbeField for PhiAssembly<'_, M> {
    fn space(&self) -> SpaceConfig {
        self.hull.space
    }
    fn probe(&self, x: &SpacePoint, h: f64) -> Result<(f64, f64)> {
        let local = self.local(x)?;
        let (v, lap, _) = fd_stencil(&self.hull.space, |p| local.value(p), x, h)?;
        Ok((v, lap))
    }
}

/// A closure as a probe field.
pub struct FnField<F> {
    pub space: SpaceConfig,
    pub f: F,
}

impl<F: Fn(&SpacePoint) -> Result<f64>> ProbeField for FnField<F> {
    fn space(&self) -> SpaceConfig {
        self.space
    }
    fn probe(&self, x: &SpacePoint, h: f64) -> Result<(f64, f64)> {
        let (v, lap, _) = fd_stencil(&self.space, |p| (self.f)(p), x, h)?;
        Ok((v, lap))
    }
}

/// FD Laplacians of a field with the empirical constant `c` in
/// `Delta Phi >= c exp(-a dist)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubharmonicReport {
    pub h: f64,
    pub records: Vec<ProbeRecord>,
    /// Minimum of `laplacian * exp(a dist)` over the probes.
    pub c_min: f64,
    /// 5% quantile of the same ratio.
    pub c_q05: f64,
    pub sup_abs: f64,
}

impl SubharmonicReport {
    /// Fraction of probes with `laplacian >= factor * exp(-a dist)`.
    pub fn fraction_above(&self, a: f64, factor: f64) -> f64 {
        let ok = self.records.iter().filter(|r| r.laplacian >= factor * (-a * r.hull_distance).exp()).count();
        ok as f64 / self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hull_distance,value,laplacian\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.hull_distance, r.value, r.laplacian));
        }
        s
    }
}

pub fn subharmonicity_probe<F: ProbeField + ?Sized>(
    field: &F,
    k: &GeodesicHull,
    probes: &[SpacePoint],
    h: f64,
) -> Result<SubharmonicReport> {
    if probes.is_empty() {
        return invalid("no probes");
    }
    let a = field.space().a;
    let mut records = vec![];
    let mut ratios = vec![];
    let mut sup_abs: f64 = 0.0;
    for p in probes {
        let (dk, _) = dist_to_hull(p, k)?;
        let (v, lap) = field.probe(p, h)?;
        sup_abs = sup_abs.max(v.abs());
        ratios.push(lap * (a * dk).exp());
        records.push(ProbeRecord { hull_distance: dk, value: v, laplacian: lap, gradient: None });
    }
    let c_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SubharmonicReport { h, records, c_min, c_q05: quantile(&ratios, 0.05), sup_abs })
}
