//! Heat kernels and Green's functions of H^2 and H^3, their large-time
//! bounds, and integrals of both over neighbourhoods of a hull.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay, DecayFit};
use crate::geometry::{SpaceConfig, SpacePoint};
use crate::hull::{AnnulusSampler, GeodesicHull, NearHullSampler};
use crate::quad;
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFlavor {
    ExactH2,
    ExactH3,
    /// `(1+rho^n) exp(-rho^2/4t - (n-1)^2 a^2 t / 4)`.
    DaviesBound,
    /// `(1+rho^n) exp(-rho^2/4t - (n-1)^2 t / 4 - (n-1) rho / 2)`.
    HypBound,
}

impl KernelFlavor {
    pub fn is_exact(self) -> bool {
        matches!(self, KernelFlavor::ExactH2 | KernelFlavor::ExactH3)
    }
}

#[derive(Debug)]
pub struct KernelModel {
    pub cfg: SpaceConfig,
    pub flavor: KernelFlavor,
    envelope: OnceLock<f64>,
    green_table: OnceLock<Vec<(f64, f64)>>,
}

impl Clone for KernelModel {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg, flavor: self.flavor, envelope: self.envelope.clone(), green_table: self.green_table.clone() }
    }
}

impl KernelModel {
    pub fn new(cfg: SpaceConfig, flavor: KernelFlavor) -> Result<Self> {
        match (flavor, cfg.n) {
            (KernelFlavor::ExactH2, 2) | (KernelFlavor::ExactH3, 3) => {}
            (KernelFlavor::ExactH2, n) | (KernelFlavor::ExactH3, n) => {
                return invalid(format!("{flavor:?} does not match dimension {n}"))
            }
            _ => {}
        }
        Ok(Self { cfg, flavor, envelope: OnceLock::new(), green_table: OnceLock::new() })
    }

    /// The exact kernel of `cfg`'s dimension.
    pub fn exact(cfg: SpaceConfig) -> Self {
        let flavor = if cfg.n == 2 { KernelFlavor::ExactH2 } else { KernelFlavor::ExactH3 };
        Self::new(cfg, flavor).expect("matching flavor")
    }

    /// Bottom of the spectrum, `(n-1)^2 a^2 / 4`.
    pub fn lambda0(&self) -> f64 {
        let m = (self.cfg.n - 1) as f64 * self.cfg.a;
        0.25 * m * m
    }

    /// The kernel this model stands for: exact flavors for any `t > 0`,
    /// bound flavors for `t >= 1`.
    pub fn value(&self, rho: f64, t: f64) -> Result<f64> {
        if self.flavor.is_exact() {
            heat_kernel(self, rho, t)
        } else {
            heat_kernel_bound(self, rho, t)
        }
    }

    /// Constant `C` with `value <= C * item-(1) bound` for `t >= 1`, fitted on
    /// a grid with a 5% margin.
    pub fn envelope_constant(&self) -> f64 {
        *self.envelope.get_or_init(|| {
            let davies = KernelModel::new(self.cfg, KernelFlavor::DaviesBound).expect("bound flavor");
            let mut c: f64 = 0.0;
            for i in 0..=60 {
                let rho = 0.5 * i as f64;
                for &t in &[1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 32.0] {
                    let h = self.value(rho, t).unwrap_or(0.0);
                    let b = heat_kernel_bound(&davies, rho, t).unwrap_or(f64::INFINITY);
                    c = c.max(h / b);
                }
            }
            1.05 * c
        })
    }

    /// Green's function for use in inner loops: closed forms for the exact
    /// flavors, a tabulated time quadrature otherwise.
    pub fn green(&self, rho: f64) -> f64 {
        if self.flavor.is_exact() {
            return green_closed_form(self.cfg.n, self.cfg.a, rho);
        }
        let tab = self.green_table.get_or_init(|| {
            // geometric nodes up to 1, then uniform to 40
            let geo = (0..180).map(|i| 1e-3 * 10f64.powf(i as f64 / 60.0));
            let lin = (0..=156).map(|i| 1.0 + 0.25 * i as f64);
            geo.chain(lin)
                .map(|r| {
                    let g = greens_function(self, r, 1.0, 1e-6).unwrap_or(f64::MIN_POSITIVE);
                    (r, g.max(f64::MIN_POSITIVE).ln())
                })
                .collect()
        });
        interpolate_log(tab, rho)
    }
}

/// Piecewise-linear `ln G` in `rho`, extrapolated from the end segments.
fn interpolate_log(tab: &[(f64, f64)], rho: f64) -> f64 {
    let k = tab.partition_point(|p| p.0 < rho).clamp(1, tab.len() - 1);
    let (x0, y0) = tab[k - 1];
    let (x1, y1) = tab[k];
    (y0 + (y1 - y0) * (rho - x0) / (x1 - x0)).exp()
}

/// `ln(2 sinh x)` for `x > 0` without overflow.
fn ln_2sinh(x: f64) -> f64 {
    if x > 20.0 {
        x + (-(-2.0 * x).exp()).ln_1p()
    } else {
        (2.0 * x.sinh()).ln()
    }
}

/// Unit-curvature H^2 kernel in log form.
fn log_h2_unit(rho: f64, t: f64) -> Result<f64> {
    // s = rho + u^2 and cosh s - cosh rho = 2 sinh(rho + u^2/2) sinh(u^2/2)
    let g = |u: f64| -> f64 {
        if u <= 0.0 {
            return if rho > 0.0 { 2.0 * rho / rho.sinh().sqrt() } else { 0.0 };
        }
        let u2 = u * u;
        let b = 0.5 * u2;
        let lden = 0.5 * (ln_2sinh(rho + b) + b.sinh().ln());
        let e = (2.0 * u * (rho + u2)).ln() - (2.0 * rho * u2 + u2 * u2) / (4.0 * t) - lden;
        e.exp()
    };
    let mut upper = (240.0 * t).powf(0.25);
    if rho > 0.0 {
        upper = upper.min((120.0 * t / rho).sqrt());
    }
    let (v, _) = quad::integrate(g, 0.0, upper, 0.0, 1e-12)?;
    Ok(0.5 * 2f64.ln() - 0.25 * t - 1.5 * (4.0 * PI * t).ln() - rho * rho / (4.0 * t) + v.ln())
}

/// Unit-curvature H^3 kernel in log form.
fn log_h3_unit(rho: f64, t: f64) -> f64 {
    let shape = if rho < 1e-6 { -rho * rho / 6.0 } else { rho.ln() - rho - (-(-2.0 * rho).exp()).ln_1p() + 2f64.ln() };
    -1.5 * (4.0 * PI * t).ln() + shape - t - rho * rho / (4.0 * t)
}

/// Logarithm of the exact heat kernel; stays finite where the kernel underflows.
pub fn log_heat_kernel(model: &KernelModel, rho: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return invalid(format!("heat kernel needs t > 0, got {t}"));
    }
    if !(rho >= 0.0) {
        return invalid(format!("heat kernel needs rho >= 0, got {rho}"));
    }
    let a = model.cfg.a;
    let n = model.cfg.n as f64;
    let (r1, t1) = (a * rho, a * a * t);
    let base = match model.flavor {
        KernelFlavor::ExactH2 => log_h2_unit(r1, t1)?,
        KernelFlavor::ExactH3 => log_h3_unit(r1, t1),
        f => return invalid(format!("{f:?} is a bound, not a kernel")),
    };
    Ok(n * a.ln() + base)
}

/// Exact heat kernel at distance `rho` and time `t`.
pub fn heat_kernel(model: &KernelModel, rho: f64, t: f64) -> Result<f64> {
    Ok(log_heat_kernel(model, rho, t)?.exp())
}

/// Large-time upper bound with implicit constant one.
pub fn heat_kernel_bound(model: &KernelModel, rho: f64, t: f64) -> Result<f64> {
    if !(t >= 1.0) {
        return invalid(format!("kernel bounds hold for t >= 1, got {t}"));
    }
    if !(rho >= 0.0) {
        return invalid(format!("bound needs rho >= 0, got {rho}"));
    }
    let n = model.cfg.n as f64;
    let a = model.cfg.a;
    let poly = 1.0 + rho.powf(n);
    let e = match model.flavor {
        KernelFlavor::DaviesBound => -rho * rho / (4.0 * t) - (n - 1.0).powi(2) * a * a * t / 4.0,
        KernelFlavor::HypBound => -rho * rho / (4.0 * t) - (n - 1.0).powi(2) * t / 4.0 - 0.5 * (n - 1.0) * rho,
        f => return invalid(format!("{f:?} is not a bound flavor")),
    };
    Ok(poly * e.exp())
}

/// Closed-form Green's function: `e^-r / (4 pi sinh r)` on H^3 and
/// `log coth(r/2) / 2 pi` on H^2, with `r = a rho`, scaled by `a^(n-2)`.
pub fn green_closed_form(n: usize, a: f64, rho: f64) -> f64 {
    let r = a * rho;
    match n {
        2 => {
            // log coth(r/2) = log((1+e^-r)/(1-e^-r))
            let q = (-r).exp();
            (q.ln_1p() - (-q).ln_1p()) / (2.0 * PI)
        }
        _ => a * (-r).exp() / (4.0 * PI * r.sinh()),
    }
}

/// Green's function by time quadrature of the model's kernel.
///
/// `[0, t_split]` and `[t_split, T]` are integrated adaptively; `T` grows
/// until the item-(1) envelope bounds the remaining tail by half of
/// `tail_tol` relative. Bound flavors use a Gaussian profile matched at
/// `t = 1` for small times.
pub fn greens_function(model: &KernelModel, rho: f64, t_split: f64, tail_tol: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return invalid(format!("Green's function diverges on the diagonal (rho = {rho})"));
    }
    if !(t_split > 0.0) || !(tail_tol > 0.0) {
        return invalid("need t_split > 0 and tail_tol > 0");
    }
    let n = model.cfg.n as f64;
    let exact = model.flavor.is_exact();
    let b1 = if exact { 0.0 } else { heat_kernel_bound(model, rho, 1.0)? };
    let small = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if exact {
            heat_kernel(model, rho, t).unwrap_or(0.0)
        } else if t < 1.0 {
            b1 * t.powf(-0.5 * n) * (-rho * rho / (4.0 * t) + rho * rho / 4.0).exp()
        } else {
            heat_kernel_bound(model, rho, t).unwrap_or(0.0)
        }
    };
    let rel = 0.1 * tail_tol;
    let split = if exact { t_split } else { 1.0 };
    let (mut total, _) = quad::integrate(small, 0.0, split, 0.0, rel)?;
    let lam = model.lambda0();
    let c = model.envelope_constant();
    let mut lo = split;
    let mut hi = split.max(1.0) * 2.0;
    for _ in 0..60 {
        let (v, _) = quad::integrate(small, lo, hi, 0.0, rel)?;
        total += v;
        let tail = c * (1.0 + rho.powf(n)) * (-lam * hi).exp() / lam;
        if tail <= 0.5 * tail_tol * total {
            return Ok(total);
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(Error::Numerical(format!("Green's tail did not converge at rho = {rho}")))
}

/// One shell-integral value with its Monte Carlo error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellValue {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `t -> integral over N_d(K) of H(x, ., t)`, all times sharing one set of samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellSweep {
    pub d: f64,
    pub values: Vec<ShellValue>,
    /// Outer radius of the last annulus used.
    pub radius: f64,
    /// True when the tail could not be bounded below 1% by `radius_max`.
    pub truncated: bool,
}

impl ShellSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value,stderr\n");
        for v in &self.values {
            s.push_str(&format!("{},{:e},{:e}\n", v.t, v.value, v.stderr));
        }
        s
    }
}

/// Shell integration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellOptions {
    pub samples: usize,
    pub radius_max: f64,
    pub tail_fraction: f64,
    pub sampler: AnnulusSampler,
}

impl Default for ShellOptions {
    fn default() -> Self {
        Self { samples: 2000, radius_max: 24.0, tail_fraction: 0.01, sampler: AnnulusSampler::ConeCaps }
    }
}

/// Per-annulus weighted hits `(rho, weight)` plus the sample count.
struct Annulus {
    hits: Vec<(f64, f64)>,
    count: usize,
}

impl Annulus {
    fn integral(&self, f: impl Fn(f64) -> f64) -> (f64, f64) {
        let n = self.count as f64;
        let vals: Vec<f64> = self.hits.iter().map(|&(r, w)| w * f(r)).collect();
        let s: f64 = vals.iter().sum();
        let s2: f64 = vals.iter().map(|v| v * v).sum();
        let mean = s / n;
        let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }

    fn volume(&self) -> f64 {
        self.hits.iter().map(|h| h.1).sum::<f64>() / self.count as f64
    }
}

/// Growth rate of the last few annulus volumes, clamped to `[0, cap]`.
pub(crate) fn envelope_growth(vols: &[f64], cap: f64) -> f64 {
    let tail: Vec<(f64, f64)> =
        vols.iter().enumerate().rev().take(4).filter(|p| *p.1 > 0.0).map(|(i, v)| (i as f64, v.ln())).collect();
    if tail.len() < 3 {
        return cap;
    }
    let k = tail.len() as f64;
    let xm = tail.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = tail.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = tail.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - xm).powi(2)).sum();
    // a little slack over the fitted slope
    (sxy / sxx + 0.25).clamp(0.0, cap)
}

/// Integrates `profile(rho, j)` (one function per output column `j`) over
/// `N_d(K)` around `x`, annulus by annulus, stopping once an envelope tail
/// built from `profile` at the annulus inner radius and the recent volume
/// growth is below `tail_fraction` of every column.
pub(crate) fn shell_integrate<F>(
    space: SpaceConfig,
    k: &GeodesicHull,
    x: &SpacePoint,
    d: f64,
    columns: usize,
    profile: F,
    rng: &RandomStream,
    opts: &ShellOptions,
) -> Result<(Vec<(f64, f64)>, f64, bool)>
where
    F: Fn(f64, usize) -> f64,
{
    if opts.samples < 2 {
        return invalid("need at least two samples per annulus");
    }
    let sampler = NearHullSampler::new(k, x, opts.sampler);
    let (dist_x, _) = crate::hull::dist_to_hull(x, k)?;
    // nothing of N_d(K) lies inside radius dist_x - d
    let must_reach = (dist_x - d).max(0.0) + 2.0;
    let cap = (space.n - 1) as f64 * space.a;
    let mut sums = vec![0.0; columns];
    let mut vars = vec![0.0; columns];
    let mut vols = vec![];
    let mut j = 0usize;
    loop {
        let (r0, r1) = (j as f64, j as f64 + 1.0);
        let mut r = rng.child(j as u64);
        let samples = sampler.sample(&mut r, r0, r1, d, opts.samples)?;
        let ann = Annulus {
            hits: samples.iter().filter(|s| s.hit).map(|s| (s.rho, s.weight)).collect(),
            count: samples.len(),
        };
        for c in 0..columns {
            let (m, e) = ann.integral(|rho| profile(rho, c));
            sums[c] += m;
            vars[c] += e * e;
        }
        vols.push(ann.volume());
        j += 1;
        let radius = j as f64;
        if radius >= must_reach && j >= 3 {
            let g = envelope_growth(&vols, cap);
            let v_last = vols.iter().rev().take(2).copied().fold(0.0, f64::max);
            let ok = (0..columns).all(|c| {
                let mut tail = 0.0;
                for i in 0..200 {
                    let rho = radius + i as f64;
                    tail += profile(rho, c) * v_last * (g * (i as f64 + 1.0)).exp();
                }
                tail <= opts.tail_fraction * sums[c]
            });
            if ok {
                let out = sums.iter().zip(&vars).map(|(s, v)| (*s, v.sqrt())).collect();
                return Ok((out, radius, false));
            }
        }
        if radius >= opts.radius_max {
            let out = sums.iter().zip(&vars).map(|(s, v)| (*s, v.sqrt())).collect();
            return Ok((out, radius, true));
        }
    }
}

/// Shell heat integrals at every time in `ts` (all `>= 1`) from common samples.
pub fn shell_heat_sweep(
    model: &KernelModel,
    k: &GeodesicHull,
    x: &SpacePoint,
    d: f64,
    ts: &[f64],
    rng: &RandomStream,
    opts: &ShellOptions,
) -> Result<ShellSweep> {
    if ts.is_empty() || ts.iter().any(|&t| !(t >= 1.0)) {
        return invalid("shell integrals need times t >= 1");
    }
    if !(d >= 0.0) {
        return invalid("neighbourhood width must be nonnegative");
    }
    let profile = |rho: f64, c: usize| model.value(rho, ts[c]).unwrap_or(0.0);
    let (vals, radius, truncated) = shell_integrate(model.cfg, k, x, d, ts.len(), profile, rng, opts)?;
    Ok(ShellSweep {
        d,
        values: ts.iter().zip(vals).map(|(&t, (v, e))| ShellValue { t, value: v, stderr: e }).collect(),
        radius,
        truncated,
    })
}

/// Single-time shell heat integral.
pub fn shell_heat_integral(
    model: &KernelModel,
    k: &GeodesicHull,
    x: &SpacePoint,
    d: f64,
    t: f64,
    rng: &RandomStream,
    samples: usize,
) -> Result<(ShellValue, bool)> {
    let opts = ShellOptions { samples, ..Default::default() };
    let s = shell_heat_sweep(model, k, x, d, &[t], rng, &opts)?;
    Ok((s.values[0], s.truncated))
}

/// Weighted exponential-rate fit of `(t, value, stderr)` data.
pub fn decay_fit(series: &[ShellValue]) -> Result<DecayFit> {
    if series.len() < 5 {
        return invalid(format!("decay fit needs at least 5 points, got {}", series.len()));
    }
    let t: Vec<f64> = series.iter().map(|s| s.t).collect();
    let v: Vec<f64> = series.iter().map(|s| s.value).collect();
    let e: Vec<f64> = series.iter().map(|s| s.stderr.max(1e-12 * s.value.abs())).collect();
    fit_decay(&t, &v, Some(&e))
}

/// Ratio sweep of an exact kernel against a bound on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundSweep {
    pub rho: Vec<f64>,
    pub t: Vec<f64>,
    /// `ratio[i][j]` at `(t[i], rho[j])`.
    pub ratio: Vec<Vec<f64>>,
    pub max_ratio: f64,
    pub argmax: (f64, f64),
}

pub fn bound_ratio_sweep(exact: &KernelModel, bound: &KernelModel, rho: &[f64], t: &[f64]) -> Result<BoundSweep> {
    let mut ratio = vec![];
    let (mut best, mut arg) = (0.0, (0.0, 0.0));
    for &tt in t {
        let mut row = vec![];
        for &r in rho {
            let q = heat_kernel(exact, r, tt)? / heat_kernel_bound(bound, r, tt)?;
            if q > best {
                best = q;
                arg = (r, tt);
            }
            row.push(q);
        }
        ratio.push(row);
    }
    Ok(BoundSweep { rho: rho.to_vec(), t: t.to_vec(), ratio, max_ratio: best, argmax: arg })
}

/// Smallest grid radius beyond which the bound is nonincreasing at time `t`.
pub fn bound_monotone_from(bound: &KernelModel, t: f64, rho: &[f64]) -> Result<f64> {
    let v: Vec<f64> = rho.iter().map(|&r| heat_kernel_bound(bound, r, t)).collect::<Result<_>>()?;
    let mut star = rho[0];
    for i in 1..v.len() {
        if v[i] > v[i - 1] {
            star = rho[i];
        }
    }
    Ok(star)
}

/// Green's-function mass of `N_d(K)` seen from each point of an `x` grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenShellReport {
    pub x: Vec<SpacePoint>,
    pub hull_distance: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub truncated: Vec<bool>,
    pub max: f64,
    pub argmax: usize,
}

pub fn greens_shell_bound(
    model: &KernelModel,
    k: &GeodesicHull,
    d: f64,
    xs: &[SpacePoint],
    rng: &RandomStream,
    opts: &ShellOptions,
) -> Result<GreenShellReport> {
    if xs.is_empty() {
        return invalid("x grid is empty");
    }
    let mut rep = GreenShellReport {
        x: xs.to_vec(),
        hull_distance: vec![],
        value: vec![],
        stderr: vec![],
        truncated: vec![],
        max: 0.0,
        argmax: 0,
    };
    for (i, x) in xs.iter().enumerate() {
        let (dx, _) = crate::hull::dist_to_hull(x, k)?;
        let profile = |rho: f64, _| model.green(rho.max(1e-9));
        let (v, _, tr) = shell_integrate(model.cfg, k, x, d, 1, profile, &rng.child(i as u64), opts)?;
        rep.hull_distance.push(dx);
        rep.value.push(v[0].0);
        rep.stderr.push(v[0].1);
        rep.truncated.push(tr);
        if v[0].0 > rep.max {
            rep.max = v[0].0;
            rep.argmax = i;
        }
    }
    Ok(rep)
}
