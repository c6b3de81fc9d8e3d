//! Sol geodesics by numerical integration and shooting.

use nalgebra::Vector3;

use crate::error::{GeomError, Result};
use crate::model_core::SpaceId;
use crate::numerics::newton_fd;

use super::ode::{integrate, DEFAULT_STEP};

pub fn tangent(alpha: f64, theta: f64) -> Vector3<f64> {
    let (w, c) = theta.sin_cos();
    Vector3::new(c * alpha.cos(), c * alpha.sin(), w)
}

/// Endpoint of the geodesic from the origin with initial velocity `v`,
/// followed for arc length `|v|`.
pub fn exp_velocity(v: &Vector3<f64>, step: f64) -> Result<Vector3<f64>> {
    let s = v.norm();
    if s == 0.0 {
        return Ok(Vector3::zeros());
    }
    integrate(SpaceId::Sol, &Vector3::zeros(), &(v / s), s, step, |_, _| {}).map(|(p, _)| p)
}

pub fn exp(alpha: f64, theta: f64, s: f64) -> Result<Vector3<f64>> {
    exp_velocity(&(tangent(alpha, theta) * s), DEFAULT_STEP)
}

fn to_angles(v: &Vector3<f64>) -> (f64, f64, f64) {
    let s = v.norm();
    let alpha = if v.x == 0.0 && v.y == 0.0 { 0.0 } else { v.y.atan2(v.x) };
    let theta = (v.z / s).clamp(-1.0, 1.0).asin();
    (alpha, theta, s)
}

/// Shortest geodesic found by shooting from several starts.
///
/// Sol has no closed-form inverse; the result is the shortest converged
/// candidate, which is the true minimizer only as far as the starts cover
/// the competing geodesics.
pub fn inverse(target: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let scale = target.norm();
    if scale < 1e-15 {
        return Ok((0.0, 0.0, 0.0));
    }
    let tol = 1e-11 * (1.0 + scale);
    let mut starts = vec![*target, target * 0.8, target * 1.25];
    // Geodesics bending through the z-direction are often shorter for
    // points far out in the x-y plane.
    for dz in [-0.5, 0.5, -1.0, 1.0] {
        starts.push(Vector3::new(target.x, target.y, target.z + dz * scale));
    }
    let mut best: Option<(Vector3<f64>, f64)> = None;
    let mut worst_residual = f64::INFINITY;
    for v0 in starts {
        let (v, res) = newton_fd(
            |x| {
                let v = Vector3::new(x[0], x[1], x[2]);
                let p = exp_velocity(&v, DEFAULT_STEP).ok()?;
                let d = p - target;
                Some(vec![d.x, d.y, d.z])
            },
            v0.as_slice(),
            tol,
            60,
            1e-7,
        );
        worst_residual = worst_residual.min(res);
        if res <= tol {
            let v = Vector3::new(v[0], v[1], v[2]);
            let s = v.norm();
            if best.is_none_or(|(_, b)| s < b - 1e-12) {
                best = Some((v, s));
            }
        }
    }
    match best {
        Some((v, _)) => Ok(to_angles(&v)),
        None => Err(GeomError::NoConvergence {
            what: "Sol shooting",
            residual: worst_residual,
        }),
    }
}
