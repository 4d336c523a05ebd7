//! The hyperboloid model of H^n (n = 2, 3) with curvature `-a^2`.
//!
//! Points live on `{x : <x,x> = -1, x0 > 0}` for the Minkowski form
//! `<u,v> = -u0 v0 + sum ui vi`; the metric is rescaled by `1/a`, so a model
//! displacement of length `L` has Riemannian length `L / a`. Tangent vectors
//! are stored in model coordinates. H2 sits inside H3 as the slice `x3 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::rng::RandomStream;

/// Homogeneous coordinate storage; unused trailing entries are zero.
pub type Coords = [f64; 4];

/// Minkowski form on full coordinate arrays.
#[inline]
pub fn mink(u: &Coords, v: &Coords) -> f64 {
    -u[0] * v[0] + u[1] * v[1] + u[2] * v[2] + u[3] * v[3]
}

/// Minkowski form on slices of equal length.
pub fn mink_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if u.is_empty() {
        return invalid("empty vector");
    }
    Ok(-u[0] * v[0] + u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>())
}

#[inline]
fn axpy(a: f64, x: &Coords, b: f64, y: &Coords) -> Coords {
    [a * x[0] + b * y[0], a * x[1] + b * y[1], a * x[2] + b * y[2], a * x[3] + b * y[3]]
}

#[inline]
fn scale(a: f64, x: &Coords) -> Coords {
    [a * x[0], a * x[1], a * x[2], a * x[3]]
}

#[inline]
fn sub(x: &Coords, y: &Coords) -> Coords {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]]
}

fn serialize_coords<S: serde::Serializer>(c: &Coords, n: u8, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(n as usize + 1))?;
    for x in &c[..=n as usize] {
        seq.serialize_element(x)?;
    }
    seq.end()
}

fn coords_from_slice(v: &[f64]) -> Result<(Coords, u8)> {
    if !(3..=4).contains(&v.len()) {
        return Err(Error::UnsupportedDimension(v.len().saturating_sub(1)));
    }
    let mut c = [0.0; 4];
    c[..v.len()].copy_from_slice(v);
    Ok((c, (v.len() - 1) as u8))
}

/// A point of H^n in hyperboloid coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpacePoint {
    pub c: Coords,
    pub n: u8,
}

impl SpacePoint {
    /// Build from `n+1` coordinates, checking the hyperboloid constraint.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let (c, n) = coords_from_slice(v)?;
        let r = mink(&c, &c) + 1.0;
        let tol = 1e-9 * (1.0 + c[0] * c[0]);
        if r.abs() > tol || c[0] <= 0.0 || c.iter().any(|x| !x.is_finite()) {
            return Err(Error::OffManifold(r));
        }
        Ok(Self { c, n })
    }

    pub fn coords(&self) -> &[f64] {
        &self.c[..=self.n as usize]
    }

    /// Spatial part `(x1, .., xn)`.
    pub fn spatial(&self) -> [f64; 3] {
        [self.c[1], self.c[2], self.c[3]]
    }

    /// Rescale onto the hyperboloid to remove accumulated rounding.
    pub fn renormalized(mut self) -> Self {
        let s = (self.c[1] * self.c[1] + self.c[2] * self.c[2] + self.c[3] * self.c[3]).sqrt();
        self.c[0] = (1.0 + s * s).sqrt();
        self
    }

    /// Embed an H2 point into H3 (the slice `x3 = 0`).
    pub fn lift(self) -> Self {
        Self { c: self.c, n: 3 }
    }
}

impl Serialize for SpacePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_coords(&self.c, self.n, s)
    }
}

impl<'de> Deserialize<'de> for SpacePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        SpacePoint::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// A point of the ideal boundary: a future null vector scaled to `x0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdealPoint {
    pub c: Coords,
    pub n: u8,
}

impl IdealPoint {
    /// Ideal point in the Euclidean direction `dir` (normalized internally).
    pub fn from_direction(dir: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dir.len()) {
            return Err(Error::UnsupportedDimension(dir.len()));
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return invalid("zero direction for ideal point");
        }
        let mut c = [1.0, 0.0, 0.0, 0.0];
        for (i, x) in dir.iter().enumerate() {
            c[i + 1] = x / norm;
        }
        Ok(Self { c, n: dir.len() as u8 })
    }

    /// Ideal point from a null vector in any positive scaling.
    pub fn from_null(v: &[f64]) -> Result<Self> {
        let (c, n) = coords_from_slice(v)?;
        if !(c[0] > 0.0) {
            return invalid("ideal point must be future pointing");
        }
        let q = mink(&c, &c) / (c[0] * c[0]);
        if q.abs() > 1e-9 {
            return invalid(format!("vector is not null (residual {q:e})"));
        }
        Self::from_direction(&[c[1], c[2], c[3]][..n as usize])
    }

    /// Unit Euclidean direction `(s1, .., sn)` (zero padded).
    pub fn direction(&self) -> [f64; 3] {
        [self.c[1], self.c[2], self.c[3]]
    }

    pub fn lift(self) -> Self {
        Self { c: self.c, n: 3 }
    }
}

impl Serialize for IdealPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_coords(&self.c, self.n, s)
    }
}

impl<'de> Deserialize<'de> for IdealPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        IdealPoint::from_null(&v).map_err(serde::de::Error::custom)
    }
}

/// Tangent vector at `base`, in model coordinates (`<base, v> = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: SpacePoint,
    pub v: Coords,
}

/// A geodesic segment, ray or bi-infinite line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeodesicLine {
    Segment { from: SpacePoint, to: SpacePoint },
    Ray { from: SpacePoint, toward: IdealPoint },
    Line { from: IdealPoint, to: IdealPoint },
}

/// An isometry of H^n, stored as a Lorentz matrix acting on coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    pub m: [[f64; 4]; 4],
}

impl Isometry {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { m }
    }

    #[inline]
    pub fn apply_coords(&self, x: &Coords) -> Coords {
        let mut y = [0.0; 4];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.m[i][0] * x[0] + self.m[i][1] * x[1] + self.m[i][2] * x[2] + self.m[i][3] * x[3];
        }
        y
    }

    pub fn apply(&self, p: &SpacePoint) -> SpacePoint {
        SpacePoint { c: self.apply_coords(&p.c), n: p.n }
    }

    pub fn apply_ideal(&self, y: &IdealPoint) -> IdealPoint {
        let c = self.apply_coords(&y.c);
        let s = 1.0 / c[0];
        IdealPoint { c: scale(s, &c), n: y.n }
    }

    pub fn apply_tangent(&self, t: &TangentVector) -> TangentVector {
        TangentVector { base: self.apply(&t.base), v: self.apply_coords(&t.v) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Isometry { m }
    }

    /// Inverse `J M^T J` with `J = diag(-1, 1, 1, 1)`.
    pub fn inverse(&self) -> Isometry {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let s = if (i == 0) ^ (j == 0) { -1.0 } else { 1.0 };
                m[i][j] = s * self.m[j][i];
            }
        }
        Isometry { m }
    }

    /// Rotation fixing the origin; `r` is a row-major `n x n` orthogonal matrix.
    pub fn rotation(r: &[[f64; 3]; 3]) -> Isometry {
        let mut iso = Isometry::identity();
        for i in 0..3 {
            for j in 0..3 {
                iso.m[i + 1][j + 1] = r[i][j];
            }
        }
        iso
    }

    /// Boost taking the origin to the point with coordinates `x` (model form).
    pub fn boost_to(x: &Coords) -> Isometry {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = x[0];
        for i in 1..4 {
            m[0][i] = x[i];
            m[i][0] = x[i];
            for j in 1..4 {
                m[i][j] = if i == j { 1.0 } else { 0.0 } + x[i] * x[j] / (1.0 + x[0]);
            }
        }
        Isometry { m }
    }

    /// Largest deviation of `M^T J M` from `J`.
    pub fn lorentz_defect(&self) -> f64 {
        let j = |i: usize| if i == 0 { -1.0 } else { 1.0 };
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let v: f64 = (0..4).map(|k| j(k) * self.m[k][a] * self.m[k][b]).sum();
                let target = if a == b { j(a) } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}

/// Dimension and curvature scale of the ambient space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub n: usize,
    pub a: f64,
}

impl SpaceConfig {
    pub fn new(n: usize, a: f64) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if !(a > 0.0) || !a.is_finite() {
            return invalid(format!("curvature scale must be positive, got {a}"));
        }
        Ok(Self { n, a })
    }

    pub fn h2() -> Self {
        Self { n: 2, a: 1.0 }
    }

    pub fn h3() -> Self {
        Self { n: 3, a: 1.0 }
    }

    pub fn origin(&self) -> SpacePoint {
        SpacePoint { c: [1.0, 0.0, 0.0, 0.0], n: self.n as u8 }
    }

    pub(crate) fn check(&self, p: &SpacePoint) -> Result<()> {
        if p.n as usize != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: p.n as usize });
        }
        Ok(())
    }

    /// Point `exp_o(r * dir)` for a Euclidean direction and Riemannian radius `r`.
    pub fn point_at(&self, dir: &[f64], r: f64) -> Result<SpacePoint> {
        if dir.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: dir.len() });
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return invalid("zero direction");
        }
        let l = self.a * r;
        let mut c = [l.cosh(), 0.0, 0.0, 0.0];
        for (i, d) in dir.iter().enumerate() {
            c[i + 1] = l.sinh() * d / norm;
        }
        Ok(SpacePoint { c, n: self.n as u8 })
    }

    /// Model (curvature -1) distance.
    #[inline]
    pub fn model_distance(x: &Coords, y: &Coords) -> f64 {
        let d = sub(x, y);
        let q = mink(&d, &d).max(0.0);
        2.0 * (0.5 * q.sqrt()).asinh()
    }

    /// Riemannian distance.
    #[inline]
    pub fn dist(&self, x: &SpacePoint, y: &SpacePoint) -> f64 {
        Self::model_distance(&x.c, &y.c) / self.a
    }

    /// Checked distance.
    pub fn distance(&self, x: &SpacePoint, y: &SpacePoint) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.dist(x, y))
    }

    /// Distance from the origin.
    #[inline]
    pub fn radius(&self, x: &SpacePoint) -> f64 {
        let s = (x.c[1] * x.c[1] + x.c[2] * x.c[2] + x.c[3] * x.c[3]).sqrt();
        s.asinh() / self.a
    }

    /// Riemannian norm of a tangent vector.
    pub fn norm(&self, t: &TangentVector) -> f64 {
        mink(&t.v, &t.v).max(0.0).sqrt() / self.a
    }

    /// Riemannian inner product of two vectors at the same base.
    pub fn inner(&self, u: &Coords, v: &Coords) -> f64 {
        mink(u, v) / (self.a * self.a)
    }

    /// Computed in the orthonormal frame at the base point, which keeps
    /// `exp_map(log_map(x, y)) = y` to about `1e-11` for points within
    /// distance 4 of the origin; [`SpaceConfig::exp_raw`] is the fast path.
    pub fn exp_map(&self, t: &TangentVector) -> Result<SpacePoint> {
        self.check(&t.base)?;
        let b = Isometry::boost_to(&t.base.c);
        let w = b.inverse().apply_coords(&t.v);
        let l = (w[1] * w[1] + w[2] * w[2] + w[3] * w[3]).sqrt();
        if l < 1e-300 {
            return Ok(t.base);
        }
        let f = l.sinh() / l;
        Ok(SpacePoint { c: b.apply_coords(&[l.cosh(), w[1] * f, w[2] * f, w[3] * f]), n: t.base.n }.renormalized())
    }

    /// Exponential map in model coordinates (no checks).
    #[inline]
    pub fn exp_raw(x: &SpacePoint, v: &Coords) -> SpacePoint {
        let l = mink(v, v).max(0.0).sqrt();
        if l < 1e-300 {
            return *x;
        }
        let c = axpy(l.cosh(), &x.c, l.sinh() / l, v);
        SpacePoint { c, n: x.n }.renormalized()
    }

    /// Frame-based like [`SpaceConfig::exp_map`]; the length of the result
    /// is `asinh` of the frame radius of `y`, without cancellation.
    pub fn log_map(&self, x: &SpacePoint, y: &SpacePoint) -> Result<TangentVector> {
        self.check(x)?;
        self.check(y)?;
        let b = Isometry::boost_to(&x.c);
        let yp = b.inverse().apply_coords(&y.c);
        let s = (yp[1] * yp[1] + yp[2] * yp[2] + yp[3] * yp[3]).sqrt();
        if s < 1e-300 {
            return Ok(TangentVector { base: *x, v: [0.0; 4] });
        }
        let f = s.asinh() / s;
        Ok(TangentVector { base: *x, v: b.apply_coords(&[0.0, yp[1] * f, yp[2] * f, yp[3] * f]) })
    }

    /// Logarithm in model coordinates (no checks).
    #[inline]
    pub fn log_raw(x: &SpacePoint, y: &SpacePoint) -> Coords {
        let d = Self::model_distance(&x.c, &y.c);
        if d < 1e-300 {
            return [0.0; 4];
        }
        let ip = mink(&x.c, &y.c);
        // u = y + <x,y> x is tangent with model norm sinh(d)
        let u = axpy(1.0, &y.c, ip, &x.c);
        let un = mink(&u, &u).max(0.0).sqrt();
        if un < 1e-300 {
            return [0.0; 4];
        }
        scale(d / un, &u)
    }

    /// Project an arbitrary vector onto the tangent space at `x`.
    #[inline]
    pub fn project_tangent(x: &SpacePoint, v: &Coords) -> Coords {
        axpy(1.0, v, mink(&x.c, v), &x.c)
    }

    /// Geodesic through `from` and `to`, extended to a full line.
    pub fn line_through(&self, from: &SpacePoint, to: &SpacePoint) -> Result<GeodesicLine> {
        let v = Self::log_raw(from, to);
        let l = mink(&v, &v).sqrt();
        if !(l > 1e-14) {
            return Err(Error::DegenerateGeodesic("coincident points".into()));
        }
        let u = scale(1.0 / l, &v);
        let p = axpy(1.0, &from.c, 1.0, &u);
        let q = axpy(1.0, &from.c, -1.0, &u);
        Ok(GeodesicLine::Line {
            from: IdealPoint { c: scale(1.0 / q[0], &q), n: from.n },
            to: IdealPoint { c: scale(1.0 / p[0], &p), n: from.n },
        })
    }

    /// Base point and unit model tangent (toward the "to" end) of a geodesic.
    fn anchor(&self, g: &GeodesicLine) -> Result<(SpacePoint, Coords)> {
        match g {
            GeodesicLine::Segment { from, to } => {
                self.check(from)?;
                self.check(to)?;
                let v = Self::log_raw(from, to);
                let l = mink(&v, &v).sqrt();
                if !(l > 1e-14) {
                    return Err(Error::DegenerateGeodesic("segment endpoints coincide".into()));
                }
                Ok((*from, scale(1.0 / l, &v)))
            }
            GeodesicLine::Ray { from, toward } => {
                self.check(from)?;
                let v = Self::project_tangent(from, &toward.c);
                let l = mink(&v, &v).sqrt();
                if !(l > 0.0) {
                    return Err(Error::DegenerateGeodesic("bad ray".into()));
                }
                Ok((*from, scale(1.0 / l, &v)))
            }
            GeodesicLine::Line { from, to } => {
                let w = -mink(&from.c, &to.c);
                if !(w > 1e-24) {
                    return Err(Error::DegenerateGeodesic("line endpoints coincide".into()));
                }
                let s = 1.0 / (2.0 * w).sqrt();
                let q = scale(s, &axpy(1.0, &from.c, 1.0, &to.c));
                let u = scale(s, &axpy(1.0, &to.c, -1.0, &from.c));
                Ok((SpacePoint { c: q, n: from.n }.renormalized(), u))
            }
        }
    }

    /// Point at Riemannian arclength `t` from the geodesic's parameter origin
    /// (segment/ray start, or the point of a line nearest the model origin).
    pub fn geodesic_point(&self, g: &GeodesicLine, t: f64) -> Result<SpacePoint> {
        let (x, u) = self.anchor(g)?;
        let l = self.a * t;
        Ok(SpacePoint { c: axpy(l.cosh(), &x.c, l.sinh(), &u), n: x.n }.renormalized())
    }

    /// Hyperbolic translation moving the geodesic by Riemannian length `t`
    /// along itself (toward its "to" end).
    pub fn translation(&self, g: &GeodesicLine, t: f64) -> Result<Isometry> {
        let (x, u) = self.anchor(g)?;
        let b = Isometry::boost_to(&x.c);
        let u0 = b.inverse().apply_coords(&u);
        let l = self.a * t;
        let shift = Isometry::boost_to(&[l.cosh(), l.sinh() * u0[1], l.sinh() * u0[2], l.sinh() * u0[3]]);
        Ok(b.compose(&shift).compose(&b.inverse()))
    }

    /// Distance from `p` to the geodesic and the nearest point on it.
    pub fn dist_to_line(&self, p: &SpacePoint, g: &GeodesicLine) -> Result<(f64, SpacePoint)> {
        self.check(p)?;
        if let GeodesicLine::Line { from, to } = g {
            let w = -mink(&from.c, &to.c);
            if !(w > 1e-24) {
                return Err(Error::DegenerateGeodesic("line endpoints coincide".into()));
            }
            let (d, foot) = line_foot(&p.c, &from.c, &to.c, 1.0 / w);
            return Ok((d / self.a, SpacePoint { c: foot, n: p.n }.renormalized()));
        }
        let (x, u) = self.anchor(g)?;
        let y = axpy(1.0, &x.c, -1.0, &u);
        let z = axpy(1.0, &x.c, 1.0, &u);
        let (_, foot) = line_foot(&p.c, &y, &z, 0.5);
        // signed model arclength of foot from x along u
        let mut t = (mink(&foot, &u)).asinh();
        let tmax = match g {
            GeodesicLine::Segment { from, to } => Self::model_distance(&from.c, &to.c),
            _ => f64::INFINITY,
        };
        t = t.clamp(0.0, tmax);
        let q = SpacePoint { c: axpy(t.cosh(), &x.c, t.sinh(), &u), n: p.n }.renormalized();
        Ok((self.dist(p, &q), q))
    }

    /// `exp(-a * dist(base, line(y, z)))`.
    pub fn visual_distance(&self, base: &SpacePoint, y: &IdealPoint, z: &IdealPoint) -> Result<f64> {
        self.check(base)?;
        let w = -mink(&y.c, &z.c);
        if !(w > 0.0) {
            return Ok(0.0);
        }
        let a = -mink(&base.c, &y.c);
        let b = -mink(&base.c, &z.c);
        let c = (2.0 * a * b / w).sqrt().max(1.0);
        Ok(1.0 / (c + (c * c - 1.0).max(0.0).sqrt()))
    }

    /// Visual (angular) measure of an ideal point as seen from the origin: its direction.
    pub fn ideal_angle(&self, y: &IdealPoint, z: &IdealPoint) -> f64 {
        let d = y.direction();
        let e = z.direction();
        let dot: f64 = (0..3).map(|i| d[i] * e[i]).sum();
        dot.clamp(-1.0, 1.0).acos()
    }

    /// Uniform random rotation fixing the origin.
    pub fn random_rotation(&self, rng: &mut RandomStream) -> Isometry {
        let n = self.n;
        let mut r = [[0.0; 3]; 3];
        loop {
            let mut rows: Vec<[f64; 3]> = Vec::with_capacity(n);
            let mut ok = true;
            for _ in 0..n {
                let mut v = [0.0; 3];
                for x in v.iter_mut().take(n) {
                    *x = rng.normal();
                }
                for q in &rows {
                    let d: f64 = (0..3).map(|k| v[k] * q[k]).sum();
                    for k in 0..3 {
                        v[k] -= d * q[k];
                    }
                }
                let nv = (0..3).map(|k| v[k] * v[k]).sum::<f64>().sqrt();
                if nv < 1e-8 {
                    ok = false;
                    break;
                }
                rows.push([v[0] / nv, v[1] / nv, v[2] / nv]);
            }
            if !ok {
                continue;
            }
            for i in 0..n {
                r[i] = rows[i];
            }
            break;
        }
        let det = if n == 2 {
            r[0][0] * r[1][1] - r[0][1] * r[1][0]
        } else {
            r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
        };
        if det < 0.0 {
            for k in 0..3 {
                r[0][k] = -r[0][k];
            }
        }
        if n == 2 {
            r[2][2] = 1.0;
        }
        Isometry::rotation(&r)
    }

    /// Uniform unit direction in R^n (zero padded).
    pub fn random_direction(&self, rng: &mut RandomStream) -> [f64; 3] {
        loop {
            let mut v = [0.0; 3];
            for x in v.iter_mut().take(self.n) {
                *x = rng.normal();
            }
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv > 1e-12 {
                return [v[0] / nv, v[1] / nv, v[2] / nv];
            }
        }
    }

    /// Random rotation followed by a translation of length `t` along a random axis.
    pub fn random_far_isometry(&self, rng: &mut RandomStream, t: f64) -> Isometry {
        let rot = self.random_rotation(rng);
        let dir = self.random_direction(rng);
        let p = self.point_at(&dir[..self.n], t).expect("valid direction");
        Isometry::boost_to(&p.c).compose(&rot)
    }

    /// Orthonormal tangent frame at `x` (model vectors of Riemannian length 1).
    pub fn frame(&self, x: &SpacePoint) -> Vec<Coords> {
        let b = Isometry::boost_to(&x.c);
        (1..=self.n)
            .map(|i| {
                let mut e = [0.0; 4];
                e[i] = self.a;
                b.apply_coords(&e)
            })
            .collect()
    }

    /// Volume of a metric ball of radius `r`.
    pub fn ball_volume(&self, r: f64) -> f64 {
        let a = self.a;
        let l = a * r;
        match self.n {
            2 => 2.0 * std::f64::consts::PI * (l.cosh() - 1.0) / (a * a),
            _ => std::f64::consts::PI * ((2.0 * l).sinh() - 2.0 * l) / (a * a * a),
        }
    }

    /// Volume of the annulus `r0 <= rho < r1`.
    pub fn annulus_volume(&self, r0: f64, r1: f64) -> f64 {
        self.ball_volume(r1) - self.ball_volume(r0)
    }

    /// Area of the unit sphere in R^n.
    pub fn sphere_area(&self) -> f64 {
        match self.n {
            2 => 2.0 * std::f64::consts::PI,
            _ => 4.0 * std::f64::consts::PI,
        }
    }

    /// Radius with ball volume fraction `u` of the annulus `[r0, r1]`.
    fn radial_inverse(&self, u: f64, r0: f64, r1: f64) -> f64 {
        let a = self.a;
        match self.n {
            2 => {
                let c0 = (a * r0).cosh();
                let c1 = (a * r1).cosh();
                (c0 + u * (c1 - c0)).acosh() / a
            }
            _ => {
                let v0 = self.ball_volume(r0);
                let target = v0 + u * (self.ball_volume(r1) - v0);
                let (mut lo, mut hi) = (r0, r1);
                let mut r = 0.5 * (lo + hi);
                for _ in 0..200 {
                    let f = self.ball_volume(r) - target;
                    if f.abs() <= 1e-14 * target.max(1e-300) {
                        break;
                    }
                    if f > 0.0 {
                        hi = r;
                    } else {
                        lo = r;
                    }
                    let dens = 4.0 * std::f64::consts::PI * ((a * r).sinh() / a).powi(2);
                    let newton = r - f / dens;
                    r = if dens > 0.0 && newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
                    if hi - lo < 1e-14 * (1.0 + hi) {
                        break;
                    }
                }
                r
            }
        }
    }

    /// Uniform samples from the annulus `r0 <= dist(center, .) < r1`.
    pub fn sample_annulus(
        &self,
        rng: &mut RandomStream,
        center: &SpacePoint,
        r0: f64,
        r1: f64,
        count: usize,
    ) -> Result<Vec<SpacePoint>> {
        self.check(center)?;
        if !(r0 >= 0.0 && r1 > r0) {
            return invalid(format!("bad annulus [{r0}, {r1}]"));
        }
        let b = Isometry::boost_to(&center.c);
        Ok((0..count)
            .map(|_| {
                let s = self.radial_inverse(rng.uniform(), r0, r1);
                let dir = self.random_direction(rng);
                let p = self.point_at(&dir[..self.n], s).expect("unit direction");
                b.apply(&p).renormalized()
            })
            .collect())
    }

    pub fn sample_ball_uniform(
        &self,
        rng: &mut RandomStream,
        center: &SpacePoint,
        r: f64,
        count: usize,
    ) -> Result<Vec<SpacePoint>> {
        self.sample_annulus(rng, center, 0.0, r, count)
    }

    /// Symmetric second-difference Laplacian of `f` at `x` with step `h`.
    pub fn fd_laplacian<F>(&self, f: F, x: &SpacePoint, h: f64) -> Result<f64>
    where
        F: FnMut(&SpacePoint) -> Result<f64>,
    {
        self.fd_laplacian_rotated(f, x, h, &Isometry::identity())
    }

    /// As [`fd_laplacian`](Self::fd_laplacian) with the frame rotated by `rot`
    /// (a rotation fixing the origin, transported to `x`).
    pub fn fd_laplacian_rotated<F>(&self, mut f: F, x: &SpacePoint, h: f64, rot: &Isometry) -> Result<f64>
    where
        F: FnMut(&SpacePoint) -> Result<f64>,
    {
        self.check(x)?;
        if !(h > 0.0) {
            return invalid("fd step must be positive");
        }
        let b = Isometry::boost_to(&x.c).compose(rot);
        let f0 = f(x)?;
        let mut acc = 0.0;
        for i in 1..=self.n {
            let mut e = [0.0; 4];
            e[i] = self.a * h;
            let v = b.apply_coords(&e);
            let p = Self::exp_raw(x, &v);
            let q = Self::exp_raw(x, &scale(-1.0, &v));
            acc += f(&p)? + f(&q)? - 2.0 * f0;
        }
        Ok(acc / (h * h))
    }

    /// Volume element check: integral of sinh^(n-1) over [0, r] by quadrature.
    pub fn ball_volume_quadrature(&self, r: f64) -> Result<f64> {
        let a = self.a;
        let k = self.n as i32 - 1;
        let (v, _) = quad::integrate(|s| ((a * s).sinh() / a).powi(k), 0.0, r, 1e-14, 1e-13)?;
        Ok(self.sphere_area() * v)
    }
}

/// Distance (model units) from `p` to the line with null endpoints `y`, `z`,
/// where `w = 1 / (-<y,z>)`; also returns the foot (unnormalized drift is tiny).
#[inline]
pub fn line_foot(p: &Coords, y: &Coords, z: &Coords, w: f64) -> (f64, Coords) {
    let a = -mink(p, y);
    let b = -mink(p, z);
    let r = (b / a).sqrt();
    let s = (0.5 * w).sqrt();
    let foot = axpy(r * s, y, s / r, z);
    // chordal form: acosh of the cosine loses half the digits near the line
    (SpaceConfig::model_distance(p, &foot), foot)
}
