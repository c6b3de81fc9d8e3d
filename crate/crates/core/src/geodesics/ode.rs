//! Geodesic equations integrated with fixed-step RK4.
//!
//! The state lives in each space's integration chart: model affine
//! coordinates for S2xR, H2xR, Nil and Sol, hyperboloid coordinates
//! `(r, θ, φ)` for SL2R.

use nalgebra::{Matrix3, SVector, Vector3};

use crate::error::{GeomError, Result};
use crate::model_core::SpaceId;
use crate::numerics::{fd_christoffel, rk4_step};

use super::{model_metric_unchecked, sl2r, GeodesicArc};

pub type State = SVector<f64, 6>;

pub const DEFAULT_STEP: f64 = 1e-3;
const RENORMALIZE_EVERY: usize = 100;

fn split(y: &State) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(y[0], y[1], y[2]),
        Vector3::new(y[3], y[4], y[5]),
    )
}

fn join(p: &Vector3<f64>, v: &Vector3<f64>) -> State {
    State::from_column_slice(&[p.x, p.y, p.z, v.x, v.y, v.z])
}

/// Second derivative of a geodesic in the integration chart.
pub fn acceleration(space: SpaceId, p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    match space {
        SpaceId::S2xR => {
            // Conformal metric |x|⁻² I.
            let grad = -p / p.norm_squared();
            -(v * (2.0 * grad.dot(v)) - grad * v.norm_squared())
        }
        SpaceId::H2xR => {
            let gamma = fd_christoffel(|q| model_metric_unchecked(space, q), p, 1e-5);
            Vector3::from_fn(|k, _| -(v.transpose() * gamma[k] * v)[0])
        }
        SpaceId::Nil => {
            let w = v.z - p.x * v.y;
            Vector3::new(-v.y * w, v.x * w, v.x * v.y + p.x * w * v.x)
        }
        SpaceId::Sol => {
            let e = (2.0 * p.z).exp();
            Vector3::new(
                -2.0 * v.x * v.z,
                2.0 * v.y * v.z,
                e * v.x * v.x - v.y * v.y / e,
            )
        }
        SpaceId::SL2R => sl2r::acceleration(p, v),
    }
}

/// Metric of the integration chart.
pub fn chart_metric(space: SpaceId, p: &Vector3<f64>) -> Matrix3<f64> {
    match space {
        SpaceId::SL2R => sl2r::chart_metric(p.x),
        _ => model_metric_unchecked(space, p),
    }
}

fn speed(space: SpaceId, p: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    (v.transpose() * chart_metric(space, p) * v)[0].max(0.0).sqrt()
}

/// Integrates the geodesic equations from `(p, v)` over arc length `s_end`.
///
/// Calls `visit(s, position)` after every step, including the first point.
pub fn integrate<F>(
    space: SpaceId,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    s_end: f64,
    step: f64,
    mut visit: F,
) -> Result<(Vector3<f64>, Vector3<f64>)>
where
    F: FnMut(f64, &Vector3<f64>),
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(GeomError::OutOfRange {
            what: "step",
            value: step,
            range: "(0, ∞)".into(),
        });
    }
    if !(s_end >= 0.0) || !s_end.is_finite() {
        return Err(GeomError::OutOfRange {
            what: "arc length",
            value: s_end,
            range: "[0, ∞)".into(),
        });
    }
    let f = |y: &State| {
        let (p, v) = split(y);
        let a = acceleration(space, &p, &v);
        join(&v, &a)
    };
    let mut y = join(p, v);
    let mut s = 0.0;
    visit(s, p);
    let mut k = 0usize;
    while s < s_end {
        let mut h = (s_end - s).min(step);
        if space == SpaceId::SL2R {
            // The θ equation carries a 1/r term; keep RK4 inside its stability
            // region near the fibre axis.
            h = h.min((0.2 * y[0].abs()).max(1e-9));
        }
        y = rk4_step(&f, &y, h);
        s = if h == s_end - s { s_end } else { s + h };
        k += 1;
        if k % RENORMALIZE_EVERY == 0 {
            let (p, v) = split(&y);
            let sp = speed(space, &p, &v);
            if sp > 0.0 {
                y = join(&p, &(v / sp));
            }
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(GeomError::NoConvergence {
                what: "geodesic integration",
                residual: f64::NAN,
            });
        }
        let (p, _) = split(&y);
        visit(s, &p);
    }
    Ok(split(&y))
}

/// Integrates a geodesic and records every step as a sample.
pub fn geodesic_ode(
    space: SpaceId,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    s_end: f64,
    step: f64,
) -> Result<GeodesicArc> {
    if p.iter().chain(v.iter()).any(|c| !c.is_finite()) {
        return Err(GeomError::Invalid("non-finite initial state".into()));
    }
    let mut samples = Vec::with_capacity(((s_end / step).abs() as usize).min(1 << 20) + 2);
    integrate(space, p, v, s_end, step, |s, q| {
        samples.push((s, chart_point(space, q)));
    })?;
    Ok(GeodesicArc {
        start: chart_point(space, p),
        params: None,
        samples,
    })
}

/// Converts an integration-chart position to a projective point.
pub fn chart_point(space: SpaceId, p: &Vector3<f64>) -> crate::model_core::HPoint {
    match space {
        SpaceId::SL2R => sl2r::chart_to_point(p.x, p.y, p.z),
        _ => crate::model_core::HPoint::from_affine(p),
    }
}
