//! Apollonius surfaces, geodesic sphere meshes, triangle-surface points and
//! the Nil ball convexity test.

pub mod isosurface;
pub mod mesh;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::geodesics::{check_sphere_radius, distance_value, exp_origin, nil_sphere_cross_section, GeodesicParams};
use crate::model_core::{check_proper, translate_from_origin, HPoint, SpaceId};
use crate::numerics::newton_fd;

pub use isosurface::{isosurface_mesh, IsoBox, Isosurface};
pub use mesh::TriMesh;

/// Slack allowed when clamping `ω` arguments onto their principal domain.
pub const CLAMP_SLACK: f64 = 1e-12;

fn require_product(space: SpaceId, what: &'static str) -> Result<()> {
    if space.is_product() {
        Ok(())
    } else {
        Err(GeomError::Unsupported(what, space))
    }
}

/// Points whose distances from `p1` and `p2` have ratio `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApolloniusSpec {
    pub space: SpaceId,
    pub p1: HPoint,
    pub p2: HPoint,
    /// `f64::INFINITY` selects the degenerate surface `{p2}`.
    pub lambda: f64,
}

impl ApolloniusSpec {
    pub fn new(space: SpaceId, p1: HPoint, p2: HPoint, lambda: f64) -> Result<Self> {
        require_product(space, "Apollonius surface")?;
        check_proper(space, &p1)?;
        check_proper(space, &p2)?;
        if p1.same_point(&p2, 1e-12) {
            return Err(GeomError::Degenerate("Apollonius foci coincide".into()));
        }
        if !(lambda >= 0.0) {
            return Err(GeomError::OutOfRange {
                what: "ratio",
                value: lambda,
                range: "[0, ∞]".into(),
            });
        }
        Ok(Self { space, p1, p2, lambda })
    }

    /// The same surface with foci exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
            lambda: 1.0 / self.lambda,
            ..*self
        }
    }
}

/// Signed quadratic form `x² ± y² ± z²` of the product model.
fn form(space: SpaceId, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    match space {
        SpaceId::S2xR => a.dot(b),
        _ => a.x * b.x - a.y * b.y - a.z * b.z,
    }
}

/// `4 ω²(cos of base angle) + ln²(n_p / n_x)`, i.e. four times the squared
/// product distance.
fn focal_term(space: SpaceId, p: &Vector3<f64>, x: &Vector3<f64>) -> Result<f64> {
    let np = form(space, p, p);
    let nx = form(space, x, x);
    let arg = form(space, p, x) / (np.sqrt() * nx.sqrt());
    let omega = match space {
        SpaceId::S2xR => {
            if arg.abs() > 1.0 + CLAMP_SLACK {
                return Err(GeomError::OutOfRange {
                    what: "arccos argument",
                    value: arg,
                    range: "[-1, 1]".into(),
                });
            }
            arg.clamp(-1.0, 1.0).acos()
        }
        _ => {
            if arg < 1.0 - CLAMP_SLACK {
                return Err(GeomError::OutOfRange {
                    what: "arccosh argument",
                    value: arg,
                    range: "[1, ∞)".into(),
                });
            }
            arg.max(1.0).acosh()
        }
    };
    let log = (np / nx).ln();
    Ok(4.0 * omega * omega + log * log)
}

/// Left side minus right side of the implicit surface equation at the
/// affine point `x`.
///
/// Positive where `d(p1, x) > λ d(x, p2)`. For `λ = ∞` the equation is
/// divided by `λ²`, leaving `−4 d(x, p2)²`.
pub fn apollonius_residual(spec: &ApolloniusSpec, x: &Vector3<f64>) -> Result<f64> {
    require_product(spec.space, "Apollonius surface")?;
    check_proper(spec.space, &HPoint::from_affine(x))?;
    let (a, b) = (spec.p1.to_affine().unwrap(), spec.p2.to_affine().unwrap());
    if spec.lambda.is_infinite() {
        return Ok(-focal_term(spec.space, &b, x)?);
    }
    let lhs = focal_term(spec.space, &a, x)?;
    let rhs = if spec.lambda == 0.0 {
        0.0
    } else {
        spec.lambda * spec.lambda * focal_term(spec.space, &b, x)?
    };
    Ok(lhs - rhs)
}

/// Marching-tetrahedra mesh of an Apollonius surface.
///
/// Interpolated vertices are then moved onto the surface by Newton steps
/// along the residual gradient; a vertex stays put if that would move it
/// more than one cell diagonal.
pub fn apollonius_mesh(spec: &ApolloniusSpec, bounds: &IsoBox, resolution: usize) -> Result<Isosurface> {
    require_product(spec.space, "Apollonius surface")?;
    let f = |x: &Vector3<f64>| apollonius_residual(spec, x).unwrap_or(f64::NAN);
    let mut iso = isosurface_mesh(f, bounds, resolution)?;
    let reach = iso.spacing.norm();
    iso.mesh.vertices.par_iter_mut().for_each(|v| {
        if let Some(y) = polish(&f, v, reach) {
            *v = y;
        }
    });
    Ok(iso)
}

fn polish<F: Fn(&Vector3<f64>) -> f64>(f: &F, start: &Vector3<f64>, reach: f64) -> Option<Vector3<f64>> {
    let mut x = *start;
    let h = 1e-7 * reach;
    for _ in 0..20 {
        let fx = f(&x);
        if !fx.is_finite() {
            return None;
        }
        if fx == 0.0 {
            break;
        }
        let g = Vector3::from_fn(|k, _| {
            let mut p = x;
            let mut m = x;
            p[k] += h;
            m[k] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        });
        let gg = g.norm_squared();
        if !(gg > 0.0) || !gg.is_finite() {
            return None;
        }
        let step = g * (fx / gg);
        x -= step;
        if (x - start).norm() > reach {
            return None;
        }
        if step.norm() <= 1e-14 * reach {
            break;
        }
    }
    f(&x).is_finite().then_some(x)
}

pub const MIN_SPHERE_DIRECTIONS: usize = 8;

/// Geodesic sphere of radius `r` about `center`.
///
/// Directions form an `n_dirs × n_dirs` grid in (azimuth, elevation); the two
/// elevation rows at ±π/2 collapse to single pole vertices joined by fans, so
/// the mesh has `n_dirs (n_dirs − 2) + 2` vertices. Faces are ordered
/// counter-clockwise seen from outside.
pub fn sphere_mesh(space: SpaceId, center: &HPoint, r: f64, n_dirs: usize) -> Result<TriMesh> {
    check_sphere_radius(space, r)?;
    if n_dirs < MIN_SPHERE_DIRECTIONS {
        return Err(GeomError::OutOfRange {
            what: "direction count",
            value: n_dirs as f64,
            range: format!("[{MIN_SPHERE_DIRECTIONS}, ∞)"),
        });
    }
    check_proper(space, center)?;
    let to_center = translate_from_origin(space, center)?;
    let n = n_dirs;
    let mut dirs = vec![(0.0, -FRAC_PI_2)];
    for j in 1..n - 1 {
        let elev = -FRAC_PI_2 + PI * j as f64 / (n - 1) as f64;
        dirs.extend((0..n).map(|i| (-PI + 2.0 * PI * i as f64 / n as f64, elev)));
    }
    dirs.push((0.0, FRAC_PI_2));
    let vertices = dirs
        .par_iter()
        .map(|&(d1, d2)| {
            let p = exp_origin(&GeodesicParams::new(space, d1, d2, r))?;
            to_center
                .apply(&p)
                .to_affine()
                .ok_or_else(|| GeomError::Degenerate("sphere vertex at infinity".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let ring = |j: usize, i: usize| 1 + (j - 1) * n + i % n;
    let top = dirs.len() - 1;
    let mut faces = Vec::with_capacity(2 * n * (n - 2));
    for i in 0..n {
        faces.push([0, ring(1, i + 1), ring(1, i)]);
        faces.push([top, ring(n - 2, i), ring(n - 2, i + 1)]);
    }
    for j in 1..n - 2 {
        for i in 0..n {
            let (a, b) = (ring(j, i), ring(j, i + 1));
            let (c, d) = (ring(j + 1, i + 1), ring(j + 1, i));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Ok(TriMesh { vertices, faces })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub radius: f64,
    pub convex: bool,
    /// Largest amount by which the profile falls short of the convexity
    /// threshold; zero when convex.
    pub max_violation: f64,
    /// Smallest profile curvature measure over all samples.
    pub min_measure: f64,
}

/// Profile measures at the top pole of a Nil ball of radius `r`.
pub fn nil_ball_pole_measure(r: f64) -> f64 {
    0.5 / (0.5 * r).tan()
}

/// Tests whether the Nil geodesic ball of radius `r` is convex in the model's
/// affine structure.
///
/// The ball is a body of revolution in the chart `z' = z − xy/2`; with upper
/// profile `z' = g(ρ)` the model top surface is `g(ρ) + xy/2`. Its concavity
/// holds iff both `−g''` and `−g'/ρ` are at least `1/2`, the largest
/// eigenvalue of the Hessian of `xy/2`. The profile comes from the sphere
/// cross-section sampled at `n` elevations.
pub fn nil_ball_convexity_check(r: f64, n: usize) -> Result<ConvexityReport> {
    if !(r > 0.0 && r <= 2.0 * PI) {
        return Err(GeomError::OutOfRange {
            what: "Nil ball radius",
            value: r,
            range: "(0, 2π]".into(),
        });
    }
    if n < 2 {
        return Err(GeomError::OutOfRange {
            what: "profile samples",
            value: n as f64,
            range: "[2, ∞)".into(),
        });
    }
    let profile = |t: f64| nil_sphere_cross_section(r, t.clamp(-FRAC_PI_2, FRAC_PI_2)).unwrap();
    let h: f64 = 1e-4;
    let mut min_measure = nil_ball_pole_measure(r);
    let mut folded = false;
    for k in 1..n {
        let t = FRAC_PI_2 * k as f64 / n as f64;
        let hk = h.min(0.5 * (FRAC_PI_2 - t)).min(0.5 * t);
        let (xm, zm) = profile(t - hk);
        let (x0, z0) = profile(t);
        let (xp, zp) = profile(t + hk);
        let (dx, dz) = ((xp - xm) / (2.0 * hk), (zp - zm) / (2.0 * hk));
        let (ddx, ddz) = ((xp - 2.0 * x0 + xm) / (hk * hk), (zp - 2.0 * z0 + zm) / (hk * hk));
        if !(dx < 0.0) || !(x0 > 0.0) {
            folded = true;
            continue;
        }
        let slope = dz / dx;
        let radial = -(ddz * dx - dz * ddx) / (dx * dx * dx);
        let tangential = -slope / x0;
        min_measure = min_measure.min(radial).min(tangential);
    }
    let threshold = 0.5;
    let max_violation = if folded {
        f64::INFINITY
    } else {
        (threshold - min_measure).max(0.0)
    };
    Ok(ConvexityReport {
        radius: r,
        convex: max_violation <= 1e-7,
        max_violation,
        min_measure,
    })
}

/// A minimizer of the distance to `A0` on the intersection of two Apollonius
/// surfaces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub point: HPoint,
    pub distance_to_a0: f64,
    /// Residuals of the two implicit surface equations.
    pub residuals: [f64; 2],
    /// A second candidate at the same distance from `A0`, when one was found.
    pub tie: Option<Vector3<f64>>,
}

const CURVE_TOL: f64 = 1e-11;
const TIE_TOL: f64 = 1e-6;

struct SurfaceProblem {
    space: SpaceId,
    a: [HPoint; 3],
    l1: f64,
    l2: f64,
}

impl SurfaceProblem {
    fn d(&self, i: usize, x: &[f64]) -> Option<f64> {
        let p = HPoint::affine(x[0], x[1], x[2]);
        distance_value(self.space, &self.a[i], &p).ok()
    }

    fn constraints(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (d0, d1, d2) = (self.d(0, x)?, self.d(1, x)?, self.d(2, x)?);
        Some(vec![d0 - self.l1 * d1, d2 - self.l2 * d0])
    }

    fn project(&self, x: &[f64]) -> Option<Vector3<f64>> {
        let (y, res) = newton_fd(|v| self.constraints(v), x, CURVE_TOL, 60, 1e-7);
        (res <= 1e-9).then(|| Vector3::from_column_slice(&y))
    }

    fn gradient<F: Fn(&[f64]) -> Option<f64>>(f: F, x: &Vector3<f64>) -> Option<Vector3<f64>> {
        let h = 1e-6 * x.amax().max(1.0);
        let mut g = Vector3::zeros();
        for k in 0..3 {
            let (mut p, mut m) = (*x, *x);
            p[k] += h;
            m[k] -= h;
            g[k] = (f(p.as_slice())? - f(m.as_slice())?) / (2.0 * h);
        }
        Some(g)
    }

    /// Descends `d(A0, ·)` along the curve, re-projecting after each step.
    fn descend(&self, start: Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
        let mut x = start;
        let mut fx = self.d(0, x.as_slice())?;
        let mut step = 0.1 * fx.max(1e-3);
        for _ in 0..400 {
            let g1 = Self::gradient(|v| Some(self.constraints(v)?[0]), &x)?;
            let g2 = Self::gradient(|v| Some(self.constraints(v)?[1]), &x)?;
            let t = g1.cross(&g2);
            if t.norm() < 1e-14 {
                break;
            }
            let t = t.normalize();
            let slope = Self::gradient(|v| self.d(0, v), &x)?.dot(&t);
            if slope.abs() < 1e-10 {
                break;
            }
            let mut accepted = false;
            while step > 1e-13 {
                let trial = x - t * (step * slope.signum());
                if let Some(y) = self.project(trial.as_slice()) {
                    if let Some(fy) = self.d(0, y.as_slice()) {
                        if fy < fx - 1e-4 * step * slope.abs() {
                            x = y;
                            fx = fy;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step *= 2.0;
        }
        Some((x, fx))
    }

    fn seeds(&self) -> Vec<Vector3<f64>> {
        let v: Vec<Vector3<f64>> = self.a.iter().map(|p| p.to_affine().unwrap()).collect();
        let (e1, e2) = (v[1] - v[0], v[2] - v[0]);
        let mut grid = Vec::new();
        // The Euclidean plane of the three vertices.
        let m = 40;
        for i in 0..=m {
            for j in 0..=m {
                let (s, t) = (-1.0 + 3.0 * i as f64 / m as f64, -1.0 + 3.0 * j as f64 / m as f64);
                grid.push(v[0] + e1 * s + e2 * t);
            }
        }
        // A box around the vertices, for curves that miss that plane.
        let lo = v.iter().fold(v[0], |a, b| a.inf(b));
        let hi = v.iter().fold(v[0], |a, b| a.sup(b));
        let pad = (hi - lo).map(|c| c.max(0.5));
        let k = 12;
        for i in 0..=k {
            for j in 0..=k {
                for l in 0..=k {
                    let f = Vector3::new(i as f64, j as f64, l as f64) / k as f64;
                    grid.push(lo - pad + (hi - lo + 2.0 * pad).component_mul(&f));
                }
            }
        }
        let mut scored: Vec<(f64, Vector3<f64>)> = grid
            .par_iter()
            .filter_map(|x| {
                let c = self.constraints(x.as_slice())?;
                let s = c[0].abs() + c[1].abs();
                s.is_finite().then_some((s, *x))
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spacing = 0.05 * (hi - lo + 2.0 * pad).norm();
        let mut picked: Vec<Vector3<f64>> = Vec::new();
        for (_, x) in scored {
            if picked.iter().all(|p| (p - x).norm() > spacing) {
                picked.push(x);
                if picked.len() == 16 {
                    break;
                }
            }
        }
        picked
    }
}

/// Point of the triangle surface with ratio parameters `(λ1, λ2)`: on both
/// `{d(A0,P) = λ1 d(P,A1)}` and `{d(A2,P) = λ2 d(P,A0)}`, and closest to
/// `A0` among such points.
pub fn triangle_surface_point(
    space: SpaceId,
    a0: &HPoint,
    a1: &HPoint,
    a2: &HPoint,
    lambda1: f64,
    lambda2: f64,
) -> Result<SurfacePoint> {
    require_product(space, "triangle surface")?;
    for p in [a0, a1, a2] {
        check_proper(space, p)?;
    }
    for (what, l) in [("λ1", lambda1), ("λ2", lambda2)] {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(GeomError::OutOfRange {
                what: if what == "λ1" { "ratio λ1" } else { "ratio λ2" },
                value: l,
                range: "[0, ∞)".into(),
            });
        }
    }
    if lambda1 == 0.0 && lambda2 == 0.0 {
        return Err(GeomError::Invalid("λ1 and λ2 cannot both vanish".into()));
    }
    let exact = |p: &HPoint| SurfacePoint {
        point: p.normalized().unwrap_or(*p),
        distance_to_a0: distance_value(space, a0, p).unwrap_or(0.0),
        residuals: [0.0, 0.0],
        tie: None,
    };
    if lambda1 == 0.0 {
        return Ok(exact(a0));
    }
    if lambda2 == 0.0 {
        return Ok(exact(a2));
    }
    let problem = SurfaceProblem {
        space,
        a: [*a0, *a1, *a2],
        l1: lambda1,
        l2: lambda2,
    };
    let mut found: Vec<(Vector3<f64>, f64)> = problem
        .seeds()
        .par_iter()
        .filter_map(|s| problem.project(s.as_slice()))
        .filter_map(|x| problem.descend(x))
        .collect();
    if found.is_empty() {
        return Err(GeomError::NoConvergence {
            what: "Apollonius surface intersection (empty or not detected)",
            residual: f64::NAN,
        });
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (best, dist) = found[0];
    let tie = found[1..]
        .iter()
        .find(|(x, d)| (d - dist).abs() <= TIE_TOL && (x - best).norm() > 1e3 * TIE_TOL)
        .map(|(x, _)| *x);
    let point = HPoint::from_affine(&best);
    let spec1 = ApolloniusSpec::new(space, *a0, *a1, lambda1)?;
    let spec2 = ApolloniusSpec::new(space, *a2, *a0, lambda2)?;
    Ok(SurfacePoint {
        point,
        distance_to_a0: dist,
        residuals: [apollonius_residual(&spec1, &best)?, apollonius_residual(&spec2, &best)?],
        tie,
    })
}

/// Triangle-surface points over every pair of ratios from `lambdas`.
pub fn triangle_surface_grid(
    space: SpaceId,
    vertices: &[HPoint; 3],
    lambdas: &[f64],
) -> Vec<(f64, f64, Result<SurfacePoint>)> {
    let pairs: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&a| lambdas.iter().map(move |&b| (a, b)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(l1, l2)| {
            let r = triangle_surface_point(space, &vertices[0], &vertices[1], &vertices[2], l1, l2);
            (l1, l2, r)
        })
        .collect()
}
