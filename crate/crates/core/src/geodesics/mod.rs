//! Exponential maps, metrics, angles, distances and volume elements.
//!
//! Every space has a distinguished origin (see [`crate::model_core::origin`])
//! at which the model metric is the identity. Geodesics start there with a
//! unit tangent described by two angles:
//!
//! | space | `dir1` | `dir2` | tangent at the origin |
//! |-------|--------|--------|-----------------------|
//! | S2xR, H2xR | `u` | `v` | `(sin v, cos v cos u, cos v sin u)` |
//! | Nil, Sol | `α` | `θ` | `(cos θ cos α, cos θ sin α, sin θ)` |
//! | SL2R | `λ` | `α` | `(sin α, cos α cos λ, cos α sin λ)` |
//!
//! In the product spaces and in SL2R the first model axis carries the fibre,
//! in Nil and Sol the third one does.

pub mod nil;
pub mod ode;
pub mod product;
pub mod sl2r;
pub mod sol;

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::model_core::{
    check_proper, origin, translate_from_origin, translate_to_origin, HPoint, SpaceId,
};

pub use nil::{sphere_cross_section as nil_sphere_cross_section, NilProjection};
pub use ode::geodesic_ode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicParams {
    pub space: SpaceId,
    pub dir1: f64,
    pub dir2: f64,
    pub s: f64,
}

impl GeodesicParams {
    pub fn new(space: SpaceId, dir1: f64, dir2: f64, s: f64) -> Self {
        Self {
            space,
            dir1,
            dir2,
            s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0) || !self.s.is_finite() {
            return Err(GeomError::OutOfRange {
                what: "arc length",
                value: self.s,
                range: "[0, ∞)".into(),
            });
        }
        if !(-PI - 1e-12..=PI + 1e-12).contains(&self.dir1) {
            return Err(GeomError::OutOfRange {
                what: "azimuth",
                value: self.dir1,
                range: "[-π, π]".into(),
            });
        }
        if !(-FRAC_PI_2 - 1e-12..=FRAC_PI_2 + 1e-12).contains(&self.dir2) {
            return Err(GeomError::OutOfRange {
                what: "elevation",
                value: self.dir2,
                range: "[-π/2, π/2]".into(),
            });
        }
        Ok(())
    }

    /// The same direction at another arc length.
    pub fn with_s(&self, s: f64) -> Self {
        Self { s, ..*self }
    }

    /// Unit tangent at the origin in model coordinates.
    pub fn tangent(&self) -> Vector3<f64> {
        match self.space {
            SpaceId::S2xR | SpaceId::H2xR => product::tangent(self.dir1, self.dir2),
            SpaceId::Nil => nil::tangent(self.dir1, self.dir2),
            SpaceId::Sol => sol::tangent(self.dir1, self.dir2),
            SpaceId::SL2R => sl2r::tangent(self.dir1, self.dir2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricAtPoint {
    pub g: Matrix3<f64>,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicArc {
    pub start: HPoint,
    pub params: Option<GeodesicParams>,
    /// Arc-length stations with their points.
    pub samples: Vec<(f64, HPoint)>,
}

impl GeodesicArc {
    /// `s,x,y,z` rows in affine model coordinates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x,y,z\n");
        for (s, p) in &self.samples {
            let a = p.to_affine().unwrap_or(Vector3::repeat(f64::NAN));
            let _ = writeln!(out, "{s:.11e},{:.11e},{:.11e},{:.11e}", a.x, a.y, a.z);
        }
        out
    }
}

/// Metric tensor in the customary chart of each space: `(t, φ, θ)` for S2xR,
/// `(t, r, α)` for H2xR, Cartesian model coordinates for Nil and Sol and
/// hyperboloid coordinates `(r, θ, φ)` for SL2R.
pub fn metric_tensor(space: SpaceId, p: &Vector3<f64>) -> Result<MetricAtPoint> {
    let g = match space {
        SpaceId::S2xR => {
            if p.z.abs() >= FRAC_PI_2 {
                return Err(GeomError::OutOfRange {
                    what: "latitude",
                    value: p.z,
                    range: "(-π/2, π/2)".into(),
                });
            }
            Matrix3::from_diagonal(&Vector3::new(1.0, p.z.cos().powi(2), 1.0))
        }
        SpaceId::H2xR => {
            if p.y <= 0.0 {
                return Err(GeomError::OutOfRange {
                    what: "base radius",
                    value: p.y,
                    range: "(0, ∞)".into(),
                });
            }
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, p.y.sinh().powi(2)))
        }
        SpaceId::Nil | SpaceId::Sol => model_metric_unchecked(space, p),
        SpaceId::SL2R => {
            if p.x < 0.0 {
                return Err(GeomError::OutOfRange {
                    what: "hyperboloid radius",
                    value: p.x,
                    range: "[0, ∞)".into(),
                });
            }
            sl2r::chart_metric(p.x)
        }
    };
    if g.iter().any(|c| !c.is_finite()) {
        return Err(GeomError::ImproperPoint {
            space,
            coords: [1.0, p.x, p.y, p.z],
        });
    }
    Ok(MetricAtPoint { g, point: *p })
}

/// `√det g` in the chart of [`metric_tensor`].
pub fn volume_element(space: SpaceId, coords: &Vector3<f64>) -> Result<f64> {
    metric_tensor(space, coords)?;
    Ok(match space {
        SpaceId::S2xR => coords.z.cos(),
        SpaceId::H2xR => coords.y.sinh(),
        SpaceId::Nil | SpaceId::Sol => 1.0,
        SpaceId::SL2R => 0.5 * (2.0 * coords.x).sinh(),
    })
}

/// Jacobian of a collineation at an affine point.
fn projective_jacobian(m: &Matrix4<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let mt = m.transpose();
    let h = mt * nalgebra::Vector4::new(1.0, v.x, v.y, v.z);
    Matrix3::from_fn(|i, j| (mt[(i + 1, j + 1)] * h[0] - h[i + 1] * mt[(0, j + 1)]) / (h[0] * h[0]))
}

pub(crate) fn model_metric_unchecked(space: SpaceId, p: &Vector3<f64>) -> Matrix3<f64> {
    match space {
        SpaceId::S2xR => product::s2xr_metric(p),
        SpaceId::H2xR => product::h2xr_metric(p),
        SpaceId::Nil => Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            1.0 + p.x * p.x,
            -p.x,
            0.0,
            -p.x,
            1.0,
        ),
        SpaceId::Sol => Matrix3::from_diagonal(&Vector3::new(
            (2.0 * p.z).exp(),
            (-2.0 * p.z).exp(),
            1.0,
        )),
        SpaceId::SL2R => match translate_to_origin(space, &HPoint::from_affine(p)) {
            // The translation is an isometry onto the origin, where the
            // metric is the identity.
            Ok(t) => {
                let j = projective_jacobian(t.matrix(), p);
                j.transpose() * j
            }
            Err(_) => Matrix3::repeat(f64::NAN),
        },
    }
}

/// Metric tensor in affine model coordinates.
pub fn model_metric(space: SpaceId, p: &HPoint) -> Result<MetricAtPoint> {
    check_proper(space, p)?;
    let v = p.to_affine().ok_or(GeomError::ImproperPoint {
        space,
        coords: p.coords,
    })?;
    Ok(MetricAtPoint {
        g: model_metric_unchecked(space, &v),
        point: v,
    })
}

/// Riemannian volume density in affine model coordinates.
pub fn model_volume_density(space: SpaceId, p: &Vector3<f64>) -> f64 {
    match space {
        SpaceId::S2xR => p.norm_squared().powf(-1.5),
        SpaceId::H2xR => (p.x * p.x - p.y * p.y - p.z * p.z).powf(-1.5),
        SpaceId::Nil | SpaceId::Sol => 1.0,
        SpaceId::SL2R => model_metric_unchecked(space, p).determinant().max(0.0).sqrt(),
    }
}

/// Angle between two tangent vectors at `p` measured with the metric.
pub fn angle(space: SpaceId, p: &HPoint, tu: &Vector3<f64>, tv: &Vector3<f64>) -> Result<f64> {
    let g = model_metric(space, p)?.g;
    angle_with(&g, tu, tv)
}

pub(crate) fn angle_with(g: &Matrix3<f64>, tu: &Vector3<f64>, tv: &Vector3<f64>) -> Result<f64> {
    let uu = (tu.transpose() * g * tu)[0];
    let vv = (tv.transpose() * g * tv)[0];
    if !(uu > 0.0) || !(vv > 0.0) {
        return Err(GeomError::Invalid("zero tangent vector".into()));
    }
    let uv = (tu.transpose() * g * tv)[0];
    Ok((uv / (uu * vv).sqrt()).clamp(-1.0, 1.0).acos())
}

/// Point reached from the origin along `params`.
pub fn exp_origin(params: &GeodesicParams) -> Result<HPoint> {
    params.validate()?;
    let GeodesicParams {
        space,
        dir1,
        dir2,
        s,
    } = *params;
    Ok(match space {
        SpaceId::S2xR | SpaceId::H2xR => HPoint::from_affine(&product::exp(space, dir1, dir2, s)),
        SpaceId::Nil => HPoint::from_affine(&nil::exp(dir1, dir2, s)),
        SpaceId::Sol => HPoint::from_affine(&sol::exp(dir1, dir2, s)?),
        SpaceId::SL2R => sl2r::exp(dir1, dir2, s),
    })
}

/// Point reached from `start` along `params`, the direction being taken in
/// the frame that [`translate_to_origin`] attaches to `start`.
pub fn exp_from(start: &HPoint, params: &GeodesicParams) -> Result<HPoint> {
    let t = translate_from_origin(params.space, start)?;
    Ok(t.apply(&exp_origin(params)?))
}

/// `n + 1` evenly spaced samples of the geodesic from `start`.
pub fn sample_geodesic(start: &HPoint, params: &GeodesicParams, n: usize) -> Result<GeodesicArc> {
    let n = n.max(1);
    let t = translate_from_origin(params.space, start)?;
    let samples = if params.space == SpaceId::Sol {
        let mut out = Vec::with_capacity(n + 1);
        let v = params.tangent();
        let every = params.s / n as f64;
        let mut next = 0.0;
        ode::integrate(
            SpaceId::Sol,
            &Vector3::zeros(),
            &v,
            params.s,
            (every / (every / ode::DEFAULT_STEP).ceil().max(1.0)).max(1e-12),
            |s, p| {
                if s + 1e-12 >= next && out.len() <= n {
                    out.push((s, t.apply(&HPoint::from_affine(p))));
                    next += every;
                }
            },
        )?;
        out
    } else {
        (0..=n)
            .map(|k| {
                let s = params.s * k as f64 / n as f64;
                exp_origin(&params.with_s(s)).map(|p| (s, t.apply(&p)))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(GeodesicArc {
        start: *start,
        params: Some(*params),
        samples,
    })
}

/// Direction and length of the shortest geodesic from the origin to `q`.
pub fn inverse_origin(space: SpaceId, q: &HPoint) -> Result<GeodesicParams> {
    check_proper(space, q)?;
    let (d1, d2, s) = match space {
        SpaceId::SL2R => sl2r::inverse(q)?,
        _ => {
            let v = q.to_affine().ok_or(GeomError::ImproperPoint {
                space,
                coords: q.coords,
            })?;
            match space {
                SpaceId::S2xR | SpaceId::H2xR => product::inverse(space, &v)?,
                SpaceId::Nil => nil::inverse(&v)?,
                _ => sol::inverse(&v)?,
            }
        }
    };
    Ok(GeodesicParams::new(space, crate::numerics::wrap_angle(d1), d2, s))
}

/// Geodesic distance from `p` to `q` with the direction of the minimizer in
/// the frame of `p` (see [`exp_from`]).
pub fn distance(space: SpaceId, p: &HPoint, q: &HPoint) -> Result<(f64, GeodesicParams)> {
    check_proper(space, q)?;
    let t = translate_to_origin(space, p)?;
    let params = inverse_origin(space, &t.apply(q))?;
    Ok((params.s, params))
}

/// Geodesic distance only; unlike [`distance`] this is defined where the
/// minimizer is not unique.
pub fn distance_value(space: SpaceId, p: &HPoint, q: &HPoint) -> Result<f64> {
    match space {
        SpaceId::S2xR | SpaceId::H2xR => {
            check_proper(space, p)?;
            check_proper(space, q)?;
            let (a, b) = (p.to_affine().unwrap(), q.to_affine().unwrap());
            Ok(product::distance_value(space, &a, &b))
        }
        SpaceId::Nil => match distance(space, p, q) {
            Ok((d, _)) => Ok(d),
            Err(GeomError::Ambiguous(_)) => {
                let t = translate_to_origin(space, p)?;
                let v = t.apply(q).to_affine().unwrap();
                Ok((4.0 * PI * (v.z.abs() - PI)).sqrt())
            }
            Err(e) => Err(e),
        },
        _ => distance(space, p, q).map(|(d, _)| d),
    }
}

/// Largest admissible geodesic sphere radius, `None` when unbounded.
pub fn sphere_radius_bound(space: SpaceId) -> Option<(f64, bool)> {
    match space {
        SpaceId::S2xR => Some((PI, true)),
        SpaceId::Nil => Some((nil::SPHERE_RADIUS_MAX, true)),
        SpaceId::SL2R => Some((FRAC_PI_2, false)),
        SpaceId::H2xR | SpaceId::Sol => None,
    }
}

/// Rejects radii outside the range where geodesic spheres exist.
pub fn check_sphere_radius(space: SpaceId, r: f64) -> Result<()> {
    let ok = r >= 0.0
        && r.is_finite()
        && match sphere_radius_bound(space) {
            Some((b, true)) => r <= b,
            Some((b, false)) => r < b,
            None => true,
        };
    if ok {
        return Ok(());
    }
    let range = match (space, sphere_radius_bound(space)) {
        (SpaceId::S2xR, _) => "[0, π]".to_string(),
        (SpaceId::Nil, _) => "[0, 2π]".to_string(),
        (SpaceId::SL2R, _) => "[0, π/2)".to_string(),
        _ => "[0, ∞)".to_string(),
    };
    Err(GeomError::OutOfRange {
        what: "sphere radius",
        value: r,
        range: format!("{range} for {space}"),
    })
}

/// Fibre projection of a Nil geodesic leaving the origin.
pub fn fibre_projection_nil(params: &GeodesicParams) -> Result<NilProjection> {
    if params.space != SpaceId::Nil {
        return Err(GeomError::Unsupported("fibre projection", params.space));
    }
    Ok(nil::projection(params.dir1, params.dir2))
}

/// Origin of `space` as an affine model point, where it has one.
pub fn origin_affine(space: SpaceId) -> Vector3<f64> {
    origin(space).to_affine().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn aff(x: f64, y: f64, z: f64) -> HPoint {
        HPoint::affine(x, y, z)
    }

    #[test]
    fn metric_examples() {
        let g = metric_tensor(SpaceId::Nil, &Vector3::zeros()).unwrap().g;
        assert_eq!(g, Matrix3::identity());
        let g = metric_tensor(SpaceId::Nil, &Vector3::new(1.0, 0.0, 0.0)).unwrap().g;
        assert_eq!(g, Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, -1.0, 0.0, -1.0, 1.0));
        let g = metric_tensor(SpaceId::Sol, &Vector3::new(0.3, 0.2, 0.0)).unwrap().g;
        assert_eq!(g, Matrix3::identity());
        assert!(metric_tensor(SpaceId::S2xR, &Vector3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn model_metric_is_identity_at_origin() {
        for space in SpaceId::ALL {
            let g = model_metric(space, &origin(space)).unwrap().g;
            assert_relative_eq!(g, Matrix3::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn translations_are_isometries_of_model_metric() {
        // Pull back the metric at T(p) through T and compare with the metric at p.
        let cases = [
            (SpaceId::S2xR, aff(-0.5, 1.2, 0.3), aff(0.2, -0.8, 1.5)),
            (SpaceId::H2xR, aff(2.0, 0.5, -1.0), aff(1.5, 0.4, 0.6)),
            (SpaceId::Nil, aff(-0.5, 1.2, 0.3), aff(0.2, -0.8, 1.5)),
            (SpaceId::Sol, aff(-0.5, 1.2, 0.3), aff(0.2, -0.8, 1.5)),
            (SpaceId::SL2R, aff(0.3, 0.2, -0.1), aff(-0.2, 0.4, 0.3)),
        ];
        for (space, a, p) in cases {
            let t = translate_to_origin(space, &a).unwrap();
            let v = p.to_affine().unwrap();
            let j = projective_jacobian(t.matrix(), &v);
            let moved = t.apply(&p).to_affine().unwrap();
            let pulled = j.transpose() * model_metric_unchecked(space, &moved) * j;
            assert_relative_eq!(pulled, model_metric_unchecked(space, &v), epsilon = 1e-10);
        }
    }

    #[test]
    fn sl2r_model_metric_matches_hyperboloid_chart() {
        let c = Vector3::new(0.5, 0.7, 0.3);
        let f = |c: &Vector3<f64>| sl2r::chart_to_point(c.x, c.y, c.z).to_affine().unwrap();
        let h = 1e-6;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            jac.set_column(k, &((f(&(c + e)) - f(&(c - e))) / (2.0 * h)));
        }
        let g = jac.transpose() * model_metric_unchecked(SpaceId::SL2R, &f(&c)) * jac;
        assert_relative_eq!(g, sl2r::chart_metric(c.x), epsilon = 1e-8);
    }

    #[test]
    fn volume_elements() {
        assert_eq!(volume_element(SpaceId::Nil, &Vector3::new(3.0, -1.0, 2.0)).unwrap(), 1.0);
        assert_relative_eq!(
            volume_element(SpaceId::SL2R, &Vector3::new(0.7, 0.0, 0.0)).unwrap(),
            0.5 * 1.4f64.sinh()
        );
        assert_eq!(volume_element(SpaceId::S2xR, &Vector3::zeros()).unwrap(), 1.0);
        assert_relative_eq!(
            volume_element(SpaceId::H2xR, &Vector3::new(0.0, 0.5, 0.0)).unwrap(),
            0.5f64.sinh()
        );
        let p = Vector3::new(0.4, -0.3, 0.2);
        for space in [SpaceId::Sol, SpaceId::Nil, SpaceId::S2xR] {
            let p = if space == SpaceId::S2xR { p + Vector3::x() } else { p };
            assert_relative_eq!(
                model_volume_density(space, &p),
                model_metric_unchecked(space, &p).determinant().sqrt(),
                epsilon = 1e-12
            );
        }
        let p = Vector3::new(2.0, 0.3, -0.5);
        assert_relative_eq!(
            model_volume_density(SpaceId::H2xR, &p),
            model_metric_unchecked(SpaceId::H2xR, &p).determinant().sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn exp_examples() {
        let p = exp_origin(&GeodesicParams::new(SpaceId::S2xR, 0.4, FRAC_PI_2, 1.0)).unwrap();
        assert_relative_eq!(p.vector(), HPoint::new(1.0, E, 0.0, 0.0).vector(), epsilon = 1e-14);
        let p = exp_origin(&GeodesicParams::new(SpaceId::Sol, 0.0, FRAC_PI_2, 1.3)).unwrap();
        assert_relative_eq!(p.vector(), HPoint::new(1.0, 0.0, 0.0, 1.3).vector(), epsilon = 1e-12);
        assert!(exp_origin(&GeodesicParams::new(SpaceId::Nil, 0.0, 2.0, 1.0)).is_err());
        assert!(exp_origin(&GeodesicParams::new(SpaceId::Nil, 0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn distance_examples() {
        let o = origin(SpaceId::S2xR);
        let (d, _) = distance(SpaceId::S2xR, &o, &HPoint::new(1.0, E, 0.0, 0.0)).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-14);
        let (d, _) = distance(SpaceId::S2xR, &o, &aff(0.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(d, FRAC_PI_2, epsilon = 1e-14);
        let (d, _) = distance(SpaceId::H2xR, &o, &aff(1f64.cosh(), 1f64.sinh(), 0.0)).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-14);
        let (d, _) = distance(SpaceId::Nil, &origin(SpaceId::Nil), &aff(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-14);
        let (d, _) = distance(SpaceId::Nil, &aff(0.3, 0.2, 0.1), &aff(0.3, 0.2, 0.1)).unwrap();
        assert_eq!(d, 0.0);
        assert!(matches!(
            distance(SpaceId::S2xR, &o, &aff(-1.0, 0.0, 0.0)),
            Err(GeomError::Ambiguous(_))
        ));
        assert_relative_eq!(
            distance_value(SpaceId::S2xR, &o, &aff(-E, 0.0, 0.0)).unwrap(),
            PI.hypot(1.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn angle_examples() {
        let o = origin(SpaceId::Nil);
        let (a, b) = (Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(angle(SpaceId::Nil, &o, &a, &b).unwrap(), FRAC_PI_2);
        assert_eq!(angle(SpaceId::Nil, &o, &a, &a).unwrap(), 0.0);
        let (u, v) = (Vector3::new(0.3, -1.0, 2.0), Vector3::new(1.0, 0.5, 0.5));
        let euclid: f64 = f64::acos(u.dot(&v) / (u.norm() * v.norm()));
        assert_relative_eq!(angle(SpaceId::Nil, &o, &u, &v).unwrap(), euclid, epsilon = 1e-14);
        assert!(angle(SpaceId::Nil, &o, &Vector3::zeros(), &v).is_err());
    }

    #[test]
    fn radius_ranges() {
        assert!(check_sphere_radius(SpaceId::S2xR, PI).is_ok());
        assert!(check_sphere_radius(SpaceId::S2xR, PI + 0.01).is_err());
        assert!(check_sphere_radius(SpaceId::Nil, 2.0 * PI).is_ok());
        assert!(check_sphere_radius(SpaceId::Nil, 2.0 * PI + 0.01).is_err());
        assert!(check_sphere_radius(SpaceId::SL2R, FRAC_PI_2).is_err());
        assert!(check_sphere_radius(SpaceId::Sol, 50.0).is_ok());
        assert!(check_sphere_radius(SpaceId::H2xR, -0.1).is_err());
    }

    #[test]
    fn arc_csv_has_header_and_rows() {
        let params = GeodesicParams::new(SpaceId::S2xR, 0.0, 0.5, 2.0);
        let arc = sample_geodesic(&origin(SpaceId::S2xR), &params, 100).unwrap();
        let csv = arc.to_csv();
        assert_eq!(csv.lines().count(), 102);
        assert!(csv.starts_with("s,x,y,z\n"));
        let arc = sample_geodesic(&origin(SpaceId::Sol), &GeodesicParams::new(SpaceId::Sol, 0.3, 0.2, 1.0), 10).unwrap();
        assert_eq!(arc.samples.len(), 11);
        let last = arc.samples.last().unwrap();
        assert_relative_eq!(last.0, 1.0, epsilon = 1e-9);
    }

    fn arb_params() -> impl Strategy<Value = GeodesicParams> {
        (0usize..5, -PI..PI, -FRAC_PI_2..FRAC_PI_2, 0.05..1.4f64).prop_map(|(k, a, b, s)| {
            GeodesicParams::new(SpaceId::ALL[k], a, b, s)
        })
    }

    fn arb_start(space: SpaceId) -> impl Strategy<Value = HPoint> {
        prop::array::uniform3(-0.4..0.4f64).prop_map(move |c| match space {
            SpaceId::S2xR | SpaceId::H2xR => HPoint::affine(1.5 + c[0], c[1], c[2]),
            SpaceId::SL2R => HPoint::new(1.0, c[0], c[1], c[2]),
            _ => HPoint::affine(2.0 * c[0], 2.0 * c[1], 2.0 * c[2]),
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exp_has_unit_speed(params in arb_params()) {
            prop_assume!(params.space != SpaceId::Sol);
            let h = 1e-5;
            let p0 = exp_origin(&params.with_s(params.s - h)).unwrap().to_affine().unwrap();
            let p1 = exp_origin(&params.with_s(params.s + h)).unwrap().to_affine().unwrap();
            let mid = exp_origin(&params).unwrap();
            let g = model_metric(params.space, &mid).unwrap().g;
            let v = (p1 - p0) / (2.0 * h);
            let speed = (v.transpose() * g * v)[0].sqrt();
            prop_assert!((speed - 1.0).abs() < 1e-6, "{params:?}: {speed}");
        }

        #[test]
        fn product_geodesics_are_planar(
            h2 in any::<bool>(), u in -PI..PI, v in -FRAC_PI_2..FRAC_PI_2, s in 0.05..3.0f64, k in 2usize..6,
        ) {
            let space = if h2 { SpaceId::H2xR } else { SpaceId::S2xR };
            let params = GeodesicParams::new(space, u, v, s);
            let pts: Vec<Vector3<f64>> = [1usize, k, 7]
                .iter()
                .map(|&j| exp_origin(&params.with_s(params.s * j as f64 / 7.0)).unwrap().to_affine().unwrap())
                .collect();
            let det = Matrix3::from_columns(&pts).determinant();
            prop_assert!(det.abs() <= 1e-10);
        }

        #[test]
        fn nil_endpoints_lie_on_cylinder(a in -PI..PI, th in -1.5..1.5f64, s in 0.0..6.0f64) {
            prop_assume!(th.abs() > 1e-3);
            let p = nil::exp(a, th, s);
            let (w, c) = th.sin_cos();
            let want = 4.0 * c * c / (w * w) * (w * s / 2.0).sin().powi(2);
            prop_assert!((p.x * p.x + p.y * p.y - want).abs() <= 1e-10 * (1.0 + want));
        }
    }

    fn arb_case() -> impl Strategy<Value = (GeodesicParams, HPoint, HPoint)> {
        arb_params().prop_flat_map(|p| (Just(p), arb_start(p.space), arb_start(p.space)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn exp_distance_round_trip((params, start, _other) in arb_case()) {
            let space = params.space;
            let params = if space == SpaceId::Sol { params.with_s(params.s.min(1.0)) } else { params };
            let q = exp_from(&start, &params).unwrap();
            let (d, back) = distance(space, &start, &q).unwrap();
            prop_assert!((d - params.s).abs() < 1e-8, "{params:?} -> {d}");
            let again = exp_from(&start, &back).unwrap();
            let (a, b) = (again.normalized().unwrap().vector(), q.normalized().unwrap().vector());
            prop_assert!((a - b).norm() < 1e-9);
        }

        #[test]
        fn distances_are_isometry_invariant((params, p, a) in arb_case()) {
            let space = params.space;
            prop_assume!(space != SpaceId::Sol);
            let q = exp_from(&p, &params).unwrap();
            let d = distance_value(space, &p, &q).unwrap();
            let t = translate_to_origin(space, &a).unwrap();
            let d2 = distance_value(space, &t.apply(&p), &t.apply(&q)).unwrap();
            prop_assert!((d - d2).abs() < 1e-8);
        }
    }

    #[test]
    fn nil_closed_form_matches_integration() {
        for &(a, th) in &[(0.3, 0.5), (-2.0, -1.1), (1.0, 0.0), (2.2, 1.4)] {
            let params = GeodesicParams::new(SpaceId::Nil, a, th, 2.5);
            let arc = geodesic_ode(SpaceId::Nil, &Vector3::zeros(), &params.tangent(), 2.5, 1e-3).unwrap();
            let end = arc.samples.last().unwrap().1;
            assert_relative_eq!(end.vector(), exp_origin(&params).unwrap().vector(), epsilon = 1e-9);
        }
    }

    #[test]
    fn sl2r_closed_form_matches_integration() {
        for &alpha in &[0.2, -0.5, std::f64::consts::FRAC_PI_4, 1.1, -1.4] {
            let s0 = 1e-6;
            let (p, v) = sl2r::ode_start(alpha, s0);
            let (q, _) = ode::integrate(SpaceId::SL2R, &p, &v, 1.5 - s0, 1e-3, |_, _| {}).unwrap();
            let want = sl2r::table(alpha, 1.5);
            assert_relative_eq!(q, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn sol_distance_is_stabilizer_invariant() {
        let p = aff(0.3, -0.2, 0.4);
        let q = aff(-0.5, 0.6, -0.1);
        let d = distance_value(SpaceId::Sol, &p, &q).unwrap();
        for g in crate::model_core::sol_stabilizer_generators() {
            let d2 = distance_value(SpaceId::Sol, &g.apply(&p), &g.apply(&q)).unwrap();
            assert_relative_eq!(d, d2, epsilon = 1e-8);
        }
    }
}
