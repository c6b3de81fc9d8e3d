//! Geodesics of the product spaces S²×R and H²×R.
//!
//! In the model the fibre coordinate is `t = ln |x|` (resp. `½ ln(x² − y² − z²)`)
//! and the base point is the radial projection onto the unit sphere
//! (resp. the unit hyperboloid).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{GeomError, Result};
use crate::model_core::SpaceId;

fn base_trig(space: SpaceId, b: f64) -> (f64, f64) {
    match space {
        SpaceId::S2xR => (b.cos(), b.sin()),
        _ => (b.cosh(), b.sinh()),
    }
}

/// Point at arc length `s` with azimuth `u` and elevation `v`.
pub fn exp(space: SpaceId, u: f64, v: f64, s: f64) -> Vector3<f64> {
    let b = s * v.cos();
    let (cb, sb) = base_trig(space, b);
    let scale = (s * v.sin()).exp();
    Vector3::new(cb, sb * u.cos(), sb * u.sin()) * scale
}

pub fn tangent(u: f64, v: f64) -> Vector3<f64> {
    Vector3::new(v.sin(), v.cos() * u.cos(), v.cos() * u.sin())
}

/// Fibre coordinate and base point of a model point.
pub fn split(space: SpaceId, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let n2 = match space {
        SpaceId::S2xR => p.norm_squared(),
        _ => p.x * p.x - p.y * p.y - p.z * p.z,
    };
    (0.5 * n2.ln(), p / n2.sqrt())
}

/// Base distance from `(1, 0, 0)` to a unit base point.
pub fn base_angle(space: SpaceId, b: &Vector3<f64>) -> f64 {
    let lateral = b.y.hypot(b.z);
    match space {
        SpaceId::S2xR => lateral.atan2(b.x),
        _ => lateral.asinh(),
    }
}

/// Inverse of [`exp`] for a point given in model coordinates.
pub fn inverse(space: SpaceId, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let (t, b) = split(space, p);
    let a = base_angle(space, &b);
    if space == SpaceId::S2xR && PI - a < 1e-12 {
        return Err(GeomError::Ambiguous(format!(
            "base point is antipodal to the start; every meridian has length π (fibre shift {t})"
        )));
    }
    let mut u = if b.y == 0.0 && b.z == 0.0 {
        0.0
    } else {
        b.z.atan2(b.y)
    };
    if u <= -PI {
        u = PI;
    }
    let v = t.atan2(a);
    Ok((u, v, a.hypot(t)))
}

/// Distance in the product metric without resolving the direction; defined
/// also for antipodal base points.
pub fn distance_value(space: SpaceId, p: &Vector3<f64>, q: &Vector3<f64>) -> f64 {
    let (tp, bp) = split(space, p);
    let (tq, bq) = split(space, q);
    let base = match space {
        SpaceId::S2xR => bp.cross(&bq).norm().atan2(bp.dot(&bq)),
        _ => {
            let ip = bp.x * bq.x - bp.y * bq.y - bp.z * bq.z;
            ip.max(1.0).acosh()
        }
    };
    base.hypot(tq - tp)
}

/// Model metric of S²×R: `|x|⁻² I`.
pub fn s2xr_metric(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() / p.norm_squared()
}

/// Model metric of H²×R.
pub fn h2xr_metric(p: &Vector3<f64>) -> Matrix3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let d = -x * x + y * y + z * z;
    Matrix3::new(
        x * x + y * y + z * z,
        -2.0 * x * y,
        -2.0 * x * z,
        -2.0 * x * y,
        x * x + y * y - z * z,
        2.0 * y * z,
        -2.0 * x * z,
        2.0 * y * z,
        x * x - y * y + z * z,
    ) / (d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{E, FRAC_PI_2};

    #[test]
    fn fibre_and_base_geodesics() {
        let p = exp(SpaceId::S2xR, 0.7, FRAC_PI_2, 1.0);
        assert_relative_eq!(p, Vector3::new(E, 0.0, 0.0), epsilon = 1e-15);
        let p = exp(SpaceId::H2xR, 0.0, 0.0, 1.0);
        assert_relative_eq!(p, Vector3::new(1f64.cosh(), 1f64.sinh(), 0.0), epsilon = 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        for space in [SpaceId::S2xR, SpaceId::H2xR] {
            for &(u, v, s) in &[(0.3, 0.2, 1.0), (-2.0, -1.1, 2.5), (PI, 0.4, 0.3), (1.0, 1.5, 3.0)] {
                let p = exp(space, u, v, s);
                let (u2, v2, s2) = inverse(space, &p).unwrap();
                assert_relative_eq!(s2, s, epsilon = 1e-12);
                assert_relative_eq!(v2, v, epsilon = 1e-12);
                assert_relative_eq!(u2, u, epsilon = 1e-12);
            }
        }
        assert!(matches!(
            inverse(SpaceId::S2xR, &Vector3::new(-2.0, 0.0, 0.0)),
            Err(GeomError::Ambiguous(_))
        ));
    }

    #[test]
    fn h2xr_metric_is_pullback_of_product_chart() {
        // Chart (t, r, a) ↦ e^t (cosh r, sinh r cos a, sinh r sin a) with metric diag(1, 1, sinh² r).
        let chart = |c: &Vector3<f64>| {
            Vector3::new(c.y.cosh(), c.y.sinh() * c.z.cos(), c.y.sinh() * c.z.sin()) * c.x.exp()
        };
        let c = Vector3::new(0.3, 0.8, 1.1);
        let h = 1e-6;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            jac.set_column(k, &((chart(&(c + e)) - chart(&(c - e))) / (2.0 * h)));
        }
        let g = jac.transpose() * h2xr_metric(&chart(&c)) * jac;
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, c.y.sinh().powi(2)));
        assert_relative_eq!(g, want, epsilon = 1e-8);
        assert_relative_eq!(h2xr_metric(&Vector3::x()), Matrix3::identity());
    }

    #[test]
    fn s2xr_metric_is_pullback_of_product_chart() {
        // Chart (t, φ, θ) ↦ e^t (cos θ cos φ, cos θ sin φ, sin θ) with metric diag(1, cos² θ, 1).
        let chart = |c: &Vector3<f64>| {
            Vector3::new(c.z.cos() * c.y.cos(), c.z.cos() * c.y.sin(), c.z.sin()) * c.x.exp()
        };
        let c = Vector3::new(-0.4, 0.8, 0.5);
        let h = 1e-6;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            jac.set_column(k, &((chart(&(c + e)) - chart(&(c - e))) / (2.0 * h)));
        }
        let g = jac.transpose() * s2xr_metric(&chart(&c)) * jac;
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, c.z.cos().powi(2), 1.0));
        assert_relative_eq!(g, want, epsilon = 1e-8);
    }
}
