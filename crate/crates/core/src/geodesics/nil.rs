//! Nil geodesics: closed forms, fibre projections and the inverse problem.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::numerics::{brent_root, sinc, x_minus_sin_over_cube};

/// Below this |sin θ| the helix formulas are evaluated through their series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Point at arc length `s` on the geodesic from the origin with azimuth
/// `alpha` and elevation `theta`.
///
/// In the chart `z' = z − xy/2` the curve is a helix around a vertical
/// cylinder; `z` is recovered by adding back `xy/2`.
pub fn exp(alpha: f64, theta: f64, s: f64) -> Vector3<f64> {
    let (w, c) = theta.sin_cos();
    if w.abs() >= 1.0 {
        return Vector3::new(0.0, 0.0, w.signum() * s);
    }
    if w == 0.0 {
        let (x, y) = (c * s * alpha.cos(), c * s * alpha.sin());
        return Vector3::new(x, y, 0.5 * x * y);
    }
    let half = 0.5 * w * s;
    let amp = c * s * sinc(half);
    let (x, y) = (amp * (half + alpha).cos(), amp * (half + alpha).sin());
    let ws = w * s;
    let zp = if w.abs() < SERIES_THRESHOLD {
        ws + 0.5 * c * c * w * s * s * s / 6.0
    } else {
        ws + 0.5 * c * c * w * s * s * s * x_minus_sin_over_cube(ws)
    };
    Vector3::new(x, y, zp + 0.5 * x * y)
}

pub fn tangent(alpha: f64, theta: f64) -> Vector3<f64> {
    let (w, c) = theta.sin_cos();
    Vector3::new(c * alpha.cos(), c * alpha.sin(), w)
}

/// Fibre projection of a geodesic from the origin onto the `[x, y]` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NilProjection {
    Circle { center: [f64; 2], radius: f64 },
    Line { angle: f64 },
    Point,
}

impl NilProjection {
    /// Signed distance of `q` from the projected curve's supporting set.
    pub fn residual(&self, q: &Vector2<f64>) -> f64 {
        match *self {
            NilProjection::Circle { center, radius } => {
                (q - Vector2::from(center)).norm_squared() - radius * radius
            }
            NilProjection::Line { angle } => angle.cos() * q.y - angle.sin() * q.x,
            NilProjection::Point => q.norm(),
        }
    }
}

pub fn projection(alpha: f64, theta: f64) -> NilProjection {
    let (w, c) = theta.sin_cos();
    if w.abs() >= 1.0 {
        NilProjection::Point
    } else if w == 0.0 {
        NilProjection::Line { angle: alpha }
    } else {
        let k = c / w;
        NilProjection::Circle {
            center: [-k * alpha.sin(), k * alpha.cos()],
            radius: k.abs(),
        }
    }
}

/// Largest radius for which Nil geodesic spheres exist.
pub const SPHERE_RADIUS_MAX: f64 = 2.0 * PI;

/// Profile of the sphere of radius `r` in the plane `y = 0`.
pub fn sphere_cross_section(r: f64, theta: f64) -> Result<(f64, f64)> {
    if !(0.0..=SPHERE_RADIUS_MAX).contains(&r) {
        return Err(GeomError::OutOfRange {
            what: "Nil sphere radius",
            value: r,
            range: "[0, 2π]".into(),
        });
    }
    if !(-PI / 2.0..=PI / 2.0).contains(&theta) {
        return Err(GeomError::OutOfRange {
            what: "elevation",
            value: theta,
            range: "[-π/2, π/2]".into(),
        });
    }
    if theta == 0.0 {
        return Ok((r, 0.0));
    }
    let (w, c) = theta.sin_cos();
    let x = c * r * sinc(0.5 * w * r);
    let z = w * r + 0.5 * c * c * w * r * r * r * x_minus_sin_over_cube(w * r);
    Ok((x, z))
}

/// Recovers the radius from the cylinder radius `rho` of an endpoint with
/// elevation `theta`.
pub fn radius_from_cylinder(rho: f64, theta: f64) -> f64 {
    let (w, c) = theta.sin_cos();
    if w.abs() < 1e-12 {
        return rho / c;
    }
    2.0 * (rho * w.abs() / (2.0 * c)).min(1.0).asin() / w.abs()
}

/// `(α, θ, s)` of the shortest geodesic from the origin to `p`.
///
/// Points on the fibre axis above height 2π are reached by a whole circle of
/// minimizers; they are reported as ambiguous.
pub fn inverse(p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let rho = p.x.hypot(p.y);
    let zp = p.z - 0.5 * p.x * p.y;
    if rho < 1e-14 {
        if zp.abs() <= SPHERE_RADIUS_MAX {
            let theta = if zp == 0.0 { 0.0 } else { zp.signum() * PI / 2.0 };
            return Ok((0.0, theta, zp.abs()));
        }
        return Err(GeomError::Ambiguous(format!(
            "fibre point at height {zp} is joined to the origin by a circle of geodesics of length {}",
            (4.0 * PI * (zp.abs() - PI)).sqrt()
        )));
    }
    let psi = p.y.atan2(p.x);
    if zp == 0.0 {
        return Ok((psi, 0.0, rho));
    }
    // Height in the linear chart as a function of the half turning angle u.
    let height = |u: f64| -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let su = u.sin();
        2.0 * u + rho * rho * (2.0 * u).powi(3) * x_minus_sin_over_cube(2.0 * u) / (8.0 * su * su)
    };
    let lim = PI * (1.0 - 1e-15);
    let (lo, hi) = if zp > 0.0 { (0.0, lim) } else { (-lim, 0.0) };
    let u = brent_root(|u| height(u) - zp, lo, hi, 1e-16, 400).ok_or(
        GeomError::NoConvergence {
            what: "Nil geodesic inverse",
            residual: f64::NAN,
        },
    )?;
    let su = u.sin();
    let theta = (2.0 * su).atan2(rho);
    let s = (rho * rho + 4.0 * su * su).sqrt() / sinc(u);
    Ok((psi - u, theta, s))
}
