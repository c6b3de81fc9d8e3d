//! SL̃₂R: hyperboloid coordinates, closed-form geodesics and their inverse.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::{GeomError, Result};
use crate::model_core::{check_proper, sl2r_form, HPoint, SpaceId};
use crate::numerics::{brent_root, wrap_angle};

/// Metric in `(r, θ, φ)`.
pub fn chart_metric(r: f64) -> Matrix3<f64> {
    let sh2 = r.sinh().powi(2);
    let ch2 = r.cosh().powi(2);
    Matrix3::new(
        1.0,
        0.0,
        0.0,
        0.0,
        sh2 * (sh2 + ch2),
        sh2,
        0.0,
        sh2,
        1.0,
    )
}

/// Geodesic equations in `(r, θ, φ)`.
pub fn acceleration(p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let r = p.x;
    let (dr, dth, dph) = (v.x, v.y, v.z);
    let s2 = (2.0 * r).sinh();
    let ddr = s2 * dth * dph + 0.5 * ((4.0 * r).sinh() - s2) * dth * dth;
    let ddph = 2.0 * dr * r.tanh() * (2.0 * r.sinh().powi(2) * dth + dph);
    let ddth = if r.abs() < 1e-12 {
        0.0
    } else {
        -2.0 * dr / s2 * ((3.0 * (2.0 * r).cosh() - 1.0) * dth + 2.0 * dph)
    };
    Vector3::new(ddr, ddth, ddph)
}

pub fn chart_to_point(r: f64, theta: f64, phi: f64) -> HPoint {
    let (ch, sh) = (r.cosh(), r.sinh());
    HPoint::new(
        ch * phi.cos(),
        ch * phi.sin(),
        sh * (theta - phi).cos(),
        sh * (theta - phi).sin(),
    )
}

/// `(r, θ, φ)` of a proper point with `r ≥ 0` and `φ ∈ (−π, π]`.
pub fn point_to_chart(p: &HPoint) -> Result<Vector3<f64>> {
    check_proper(SpaceId::SL2R, p)?;
    let k = 1.0 / (-sl2r_form(p)).sqrt();
    let [x0, x1, x2, x3] = p.coords.map(|c| c * k);
    let r = x2.hypot(x3).asinh();
    let phi = x1.atan2(x0);
    let theta = if x2 == 0.0 && x3 == 0.0 {
        phi
    } else {
        phi + x3.atan2(x2)
    };
    Ok(Vector3::new(r, theta, phi))
}

/// `sinh(ks)/k` and `tanh(ks)/k` for `k² = κ`, continued to `κ ≤ 0`.
fn s_and_theta(kappa: f64, alpha: f64, s: f64) -> (f64, f64) {
    let sa = alpha.sin();
    if kappa.abs() * s * s < 1e-4 {
        let s3 = s * s * s;
        let s5 = s3 * s * s;
        let big_s = s + kappa * s3 / 6.0 + kappa * kappa * s5 / 120.0;
        let big_t = s - kappa * s3 / 3.0 + 2.0 * kappa * kappa * s5 / 15.0;
        return (big_s, -(sa * big_t).atan());
    }
    if kappa > 0.0 {
        let k = kappa.sqrt();
        let big_s = (k * s).sinh() / k;
        (big_s, -(sa * (k * s).tanh() / k).atan())
    } else {
        let k = (-kappa).sqrt();
        let big_s = (k * s).sin() / k;
        // Continuous branch of atan(a·tan ψ) past ψ = π/2, odd in α.
        let psi = k * s;
        let a = sa.abs() / k;
        let n = (psi / PI).round();
        let f = n * PI + (a * (psi - n * PI).tan()).atan();
        (big_s, -sa.signum() * f)
    }
}

/// `(r, θ, φ)` at arc length `s` along the geodesic leaving the origin with
/// elevation `alpha` and azimuth 0.
pub fn table(alpha: f64, s: f64) -> Vector3<f64> {
    let kappa = (2.0 * alpha).cos();
    let (big_s, theta) = s_and_theta(kappa, alpha, s);
    let r = (alpha.cos() * big_s).asinh();
    let phi = 2.0 * alpha.sin() * s + theta;
    Vector3::new(r, theta, phi)
}

pub fn exp(lambda: f64, alpha: f64, s: f64) -> HPoint {
    let c = table(alpha, s);
    chart_to_point(c.x, c.y + lambda, c.z)
}

pub fn tangent(lambda: f64, alpha: f64) -> Vector3<f64> {
    Vector3::new(
        alpha.sin(),
        alpha.cos() * lambda.cos(),
        alpha.cos() * lambda.sin(),
    )
}

/// Initial ODE state at arc length `s0`, accurate to `O(s0²)`.
pub fn ode_start(alpha: f64, s0: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (sa, ca) = alpha.sin_cos();
    (
        Vector3::new(ca * s0, -sa * s0, sa * s0),
        Vector3::new(ca, -sa, sa),
    )
}

const S_MAX: f64 = 10.0;

/// Arc lengths at which the geodesic with elevation `alpha` reaches radius `r`.
fn arc_lengths(alpha: f64, sinh_r: f64) -> [Option<f64>; 2] {
    let ca = alpha.cos();
    if ca <= 0.0 {
        return [None, None];
    }
    let a = sinh_r / ca;
    let kappa = (2.0 * alpha).cos();
    if kappa.abs() * a * a < 1e-6 {
        let a3 = a * a * a;
        let s = a - kappa * a3 / 6.0 + 3.0 * kappa * kappa * a3 * a * a / 40.0;
        return [Some(s), None];
    }
    if kappa > 0.0 {
        let k = kappa.sqrt();
        [Some((k * a).asinh() / k), None]
    } else {
        let k = (-kappa).sqrt();
        if k * a > 1.0 {
            return [None, None];
        }
        let first = (k * a).asin() / k;
        let second = (PI - (k * a).asin()) / k;
        [Some(first), (second <= S_MAX).then_some(second)]
    }
}

/// Direction `(λ, α)` and length `s` of the shortest closed-form geodesic
/// from the origin to `p`.
pub fn inverse(p: &HPoint) -> Result<(f64, f64, f64)> {
    let c = point_to_chart(p)?;
    let (r, theta, phi) = (c.x, c.y, c.z);
    if r < 1e-13 {
        if phi.abs() < 1e-15 {
            return Ok((0.0, 0.0, 0.0));
        }
        return Ok((0.0, phi.signum() * FRAC_PI_2, phi.abs()));
    }
    let sh = r.sinh();
    let n = 2000;
    let grid: Vec<f64> = (0..n)
        .map(|i| (-FRAC_PI_2 + 1e-12) + i as f64 * (PI - 2e-12) / (n - 1) as f64)
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for branch in 0..2 {
        let f = |alpha: f64| -> f64 {
            match arc_lengths(alpha, sh)[branch] {
                Some(s) => table(alpha, s).z - phi,
                None => f64::NAN,
            }
        };
        let values: Vec<f64> = grid.iter().map(|&a| f(a)).collect();
        for i in 0..n - 1 {
            let (mut lo, mut hi) = (grid[i], grid[i + 1]);
            let (mut fa, mut fb) = (values[i], values[i + 1]);
            if fa.is_finite() != fb.is_finite() {
                // The branch ends inside this cell where the geodesic turns
                // back at radius r; shrink the cell to its defined part.
                let (mut good, mut bad) = if fa.is_finite() { (lo, hi) } else { (hi, lo) };
                for _ in 0..80 {
                    let mid = 0.5 * (good + bad);
                    if f(mid).is_finite() {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                }
                if fa.is_finite() {
                    (hi, fb) = (good, f(good));
                } else {
                    (lo, fa) = (good, f(good));
                }
            }
            if !fa.is_finite() || !fb.is_finite() || fa.signum() == fb.signum() {
                if fa == 0.0 {
                    consider(&mut best, lo, arc_lengths(lo, sh)[branch]);
                }
                continue;
            }
            if let Some(alpha) = brent_root(f, lo, hi, 1e-15, 200) {
                if f(alpha).abs() < 1e-9 {
                    consider(&mut best, alpha, arc_lengths(alpha, sh)[branch]);
                }
            }
        }
    }
    let (alpha, s) = best.ok_or(GeomError::NoConvergence {
        what: "SL2R geodesic inverse",
        residual: f64::NAN,
    })?;
    let lambda = wrap_angle(theta - table(alpha, s).y);
    Ok((lambda, alpha, s))
}

fn consider(best: &mut Option<(f64, f64)>, alpha: f64, s: Option<f64>) {
    if let Some(s) = s {
        if best.is_none_or(|(_, b)| s < b) {
            *best = Some((alpha, s));
        }
    }
}
