//! Signed simple ratios of collinear triples and the Menelaus and Ceva
//! products built from them.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::geodesics::{distance, exp_from, fibre_projection_nil, GeodesicParams, NilProjection};
use crate::model_core::{check_proper, translate_to_origin, HPoint, SpaceId};
use crate::numerics::wrap_angle;

/// Which weight turns arc lengths into a simple ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioKind {
    /// Points on the base sphere or base hyperbolic plane: `sin` / `sinh` of
    /// the base distances.
    Base,
    /// Non-fibre-like product geodesic: `sin` / `sinh` of the base component
    /// `d cos v` of each distance.
    General,
    /// Plain distance ratio, for product geodesics in a flat fibre plane.
    Fibre,
    /// Plain distance ratio along a Nil geodesic.
    Nil,
}

impl RatioKind {
    fn check_space(self, space: SpaceId) -> Result<()> {
        let ok = match self {
            RatioKind::Nil => space == SpaceId::Nil,
            _ => space.is_product(),
        };
        if ok {
            Ok(())
        } else {
            Err(GeomError::Unsupported(
                match self {
                    RatioKind::Base => "base simple ratio",
                    RatioKind::General => "general simple ratio",
                    RatioKind::Fibre => "fibre simple ratio",
                    RatioKind::Nil => "Nil simple ratio",
                },
                space,
            ))
        }
    }
}

impl std::str::FromStr for RatioKind {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(RatioKind::Base),
            "general" => Ok(RatioKind::General),
            "fibre" | "fiber" => Ok(RatioKind::Fibre),
            "nil" => Ok(RatioKind::Nil),
            other => Err(GeomError::Invalid(format!(
                "unknown ratio kind `{other}` (expected base, general, fibre or nil)"
            ))),
        }
    }
}

/// Largest collinearity residual accepted, relative to the point's size.
pub const COLLINEAR_TOL: f64 = 1e-8;
const BASE_SURFACE_TOL: f64 = 1e-9;
const COINCIDENT_TOL: f64 = 1e-12;

/// A collinear triple located along the geodesic from `A` through `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineStations {
    pub params: GeodesicParams,
    /// Arc-length positions of `P` and `B`; `A` sits at 0.
    pub p: f64,
    pub b: f64,
    /// Model-coordinate miss of `P` from the geodesic.
    pub residual: f64,
}

impl LineStations {
    pub fn between(&self) -> bool {
        self.p > 0.0 && self.p < self.b
    }
}

/// Direction pointing back along `params`.
pub fn reversed(params: &GeodesicParams) -> GeodesicParams {
    GeodesicParams {
        dir1: wrap_angle(params.dir1 + PI),
        dir2: -params.dir2,
        ..*params
    }
}

/// Point at signed arc length `sigma` on the geodesic through `start`.
pub fn line_point(start: &HPoint, params: &GeodesicParams, sigma: f64) -> Result<HPoint> {
    if sigma >= 0.0 {
        exp_from(start, &params.with_s(sigma))
    } else {
        exp_from(start, &reversed(params).with_s(-sigma))
    }
}

fn miss(a: &HPoint, b: &HPoint) -> f64 {
    match (a.to_affine(), b.to_affine()) {
        (Some(x), Some(y)) => (x - y).norm() / (1.0 + y.norm()),
        _ => f64::INFINITY,
    }
}

/// Places `P` on the geodesic from `A` through `B` by arc length, checking
/// that it lies on that geodesic.
pub fn stations(space: SpaceId, a: &HPoint, p: &HPoint, b: &HPoint) -> Result<LineStations> {
    for q in [a, p, b] {
        check_proper(space, q)?;
    }
    if p.same_point(a, COINCIDENT_TOL) || p.same_point(b, COINCIDENT_TOL) {
        return Err(GeomError::Degenerate("the dividing point coincides with an endpoint".into()));
    }
    if a.same_point(b, COINCIDENT_TOL) {
        return Err(GeomError::Degenerate("the endpoints coincide".into()));
    }
    let (dab, params) = distance(space, a, b)?;
    let dap = distance(space, a, p)?.0;
    let dpb = distance(space, p, b)?.0;
    let mut best: Option<(f64, f64)> = None;
    for sigma in [dap, -dap, dab + dpb, dab - dpb] {
        let r = miss(&line_point(a, &params, sigma)?, p);
        if best.is_none_or(|(_, rb)| r < rb) {
            best = Some((sigma, r));
        }
    }
    let (sigma, residual) = best.unwrap();
    if residual > COLLINEAR_TOL {
        return Err(GeomError::NotCollinear(residual));
    }
    Ok(LineStations {
        params,
        p: sigma,
        b: dab,
        residual,
    })
}

fn weight(space: SpaceId, x: f64) -> f64 {
    match space {
        SpaceId::S2xR => x.sin(),
        _ => x.sinh(),
    }
}

fn on_base_surface(space: SpaceId, q: &HPoint) -> Result<()> {
    let v = q.to_affine().unwrap();
    let n = match space {
        SpaceId::S2xR => v.norm_squared(),
        _ => v.x * v.x - v.y * v.y - v.z * v.z,
    };
    if (n - 1.0).abs() > BASE_SURFACE_TOL {
        return Err(GeomError::Invalid(format!(
            "{v:?} is not on the base surface of {space}"
        )));
    }
    Ok(())
}

/// Signed simple ratio `s(A, P, B)`, negative when `P` lies outside the
/// segment `AB`.
pub fn simple_ratio(kind: RatioKind, space: SpaceId, a: &HPoint, p: &HPoint, b: &HPoint) -> Result<f64> {
    simple_ratio_detail(kind, space, a, p, b).map(|(s, _)| s)
}

/// [`simple_ratio`] together with the stations it was computed from.
pub fn simple_ratio_detail(
    kind: RatioKind,
    space: SpaceId,
    a: &HPoint,
    p: &HPoint,
    b: &HPoint,
) -> Result<(f64, LineStations)> {
    kind.check_space(space)?;
    if kind == RatioKind::Base {
        for q in [a, p, b] {
            on_base_surface(space, q)?;
        }
    }
    let st = stations(space, a, p, b)?;
    let (ap, pb) = (st.p.abs(), (st.b - st.p).abs());
    let magnitude = match kind {
        RatioKind::Base => weight(space, ap) / weight(space, pb),
        RatioKind::General => {
            let c = st.params.dir2.cos();
            if c < 1e-12 {
                return Err(GeomError::Degenerate(
                    "fibre-like geodesic has no base component; use the fibre ratio".into(),
                ));
            }
            weight(space, ap * c) / weight(space, pb * c)
        }
        RatioKind::Fibre | RatioKind::Nil => ap / pb,
    };
    Ok((if st.between() { magnitude } else { -magnitude }, st))
}

/// Three ratios along the sides of a triangle and their product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigurationReport {
    pub kind: RatioKind,
    pub space: SpaceId,
    pub vertices: [[f64; 3]; 3],
    /// Points on the sides `A0A1`, `A1A2`, `A2A0`, in that order.
    pub side_points: [[f64; 3]; 3],
    pub cevian_point: Option<[f64; 3]>,
    pub ratios: [f64; 3],
    pub product: f64,
    /// Collinearity residuals of the side points.
    pub residuals: [f64; 3],
}

fn coords(p: &HPoint) -> [f64; 3] {
    p.to_affine().map(|v| [v.x, v.y, v.z]).unwrap_or([f64::NAN; 3])
}

fn side_ratios(
    kind: RatioKind,
    space: SpaceId,
    tri: &[HPoint; 3],
    side_points: &[HPoint; 3],
) -> Result<([f64; 3], [f64; 3])> {
    let mut ratios = [0.0; 3];
    let mut residuals = [0.0; 3];
    for i in 0..3 {
        let (r, st) = simple_ratio_detail(kind, space, &tri[i], &side_points[i], &tri[(i + 1) % 3])
            .map_err(|e| GeomError::AtVertex {
                index: i,
                source: Box::new(e),
            })?;
        ratios[i] = r;
        residuals[i] = st.residual;
    }
    Ok((ratios, residuals))
}

/// `s(A0,P,A1) s(A1,Q,A2) s(A2,R,A0)` for transversal points `P, Q, R`.
pub fn menelaus_product(
    kind: RatioKind,
    space: SpaceId,
    tri: &[HPoint; 3],
    side_points: &[HPoint; 3],
) -> Result<ConfigurationReport> {
    let (ratios, residuals) = side_ratios(kind, space, tri, side_points)?;
    Ok(ConfigurationReport {
        kind,
        space,
        vertices: tri.map(|p| coords(&p)),
        side_points: side_points.map(|p| coords(&p)),
        cevian_point: None,
        ratios,
        product: ratios.iter().product(),
        residuals,
    })
}

/// The same product for cevian feet. When the cevian point `t` is given it
/// must differ from the vertices and lie on no side.
pub fn ceva_product(
    kind: RatioKind,
    space: SpaceId,
    tri: &[HPoint; 3],
    t: Option<&HPoint>,
    feet: &[HPoint; 3],
) -> Result<ConfigurationReport> {
    if let Some(t) = t {
        check_proper(space, t)?;
        for (i, v) in tri.iter().enumerate() {
            if t.same_point(v, COINCIDENT_TOL) {
                return Err(GeomError::Degenerate(format!("cevian point coincides with vertex {i}")));
            }
        }
        for i in 0..3 {
            let (a, b) = (&tri[i], &tri[(i + 1) % 3]);
            if stations(space, a, t, b).is_ok() {
                return Err(GeomError::Degenerate(format!(
                    "cevian point lies on side {i}{}",
                    (i + 1) % 3
                )));
            }
        }
    }
    let mut report = menelaus_product(kind, space, tri, feet)?;
    report.cevian_point = t.map(coords);
    Ok(report)
}

/// Arc-length data of a Nil triple after fibre projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectedRatio {
    /// Signed ratio of the projected arc lengths.
    pub ratio: f64,
    /// Euclidean lengths of the projected arcs `A*P*` and `P*B*`.
    pub arcs: [f64; 2],
    pub projection: NilProjection,
}

/// Ratio of the Euclidean lengths of the fibre-projected arcs `A*P*` and
/// `P*B*` of a non-fibre-like Nil geodesic.
///
/// The arc lengths are measured in the projection plane from the projected
/// points alone: as turning angle times radius on a circle, or as segment
/// length on a line.
pub fn projected_arc_ratio_nil(a: &HPoint, p: &HPoint, b: &HPoint) -> Result<ProjectedRatio> {
    let st = stations(SpaceId::Nil, a, p, b)?;
    let projection = fibre_projection_nil(&st.params)?;
    let to_origin = translate_to_origin(SpaceId::Nil, a)?;
    let flat = |q: &HPoint| -> Vector2<f64> {
        let v = to_origin.apply(q).to_affine().unwrap();
        Vector2::new(v.x, v.y)
    };
    let (pa, pp, pb) = (Vector2::zeros(), flat(p), flat(b));
    let (ap, pbl) = match projection {
        NilProjection::Point => {
            return Err(GeomError::Degenerate(
                "fibre-like geodesic projects to a point".into(),
            ))
        }
        NilProjection::Line { .. } => ((pp - pa).norm(), (pb - pp).norm()),
        NilProjection::Circle { center, radius } => {
            let c = Vector2::from(center);
            // The projection turns with the sign of sin θ.
            let turn = st.params.dir2.sin().signum();
            let arc = |from: &Vector2<f64>, to: &Vector2<f64>, forward: bool| {
                let (u, v) = (from - c, to - c);
                let ang = turn * (u.x * v.y - u.y * v.x).atan2(u.dot(&v));
                let ang = if forward { ang.rem_euclid(TAU) } else { (-ang).rem_euclid(TAU) };
                ang * radius
            };
            let fwd_p = st.p > 0.0;
            let fwd_b = st.b > st.p;
            (arc(&pa, &pp, fwd_p), arc(&pp, &pb, fwd_b))
        }
    };
    if !(pbl > 0.0) {
        return Err(GeomError::Degenerate("projected arc has zero length".into()));
    }
    let ratio = if st.between() { ap / pbl } else { -ap / pbl };
    Ok(ProjectedRatio {
        ratio,
        arcs: [ap, pbl],
        projection,
    })
}

/// Ceva product of a Nil triangle measured on the fibre-projected arcs.
pub fn projected_ceva_product_nil(tri: &[HPoint; 3], feet: &[HPoint; 3]) -> Result<f64> {
    (0..3)
        .map(|i| projected_arc_ratio_nil(&tri[i], &feet[i], &tri[(i + 1) % 3]).map(|r| r.ratio))
        .product()
}

/// Base-surface point of a product space from a unit base vector.
pub fn base_point(space: SpaceId, dir: &Vector3<f64>) -> HPoint {
    let n = match space {
        SpaceId::S2xR => dir.norm_squared(),
        _ => dir.x * dir.x - dir.y * dir.y - dir.z * dir.z,
    };
    HPoint::from_affine(&(dir / n.sqrt()))
}

/// A Nil triangle with a geodesic transversal meeting all three side lines.
/// The side points are returned in side order; their Menelaus product stays
/// away from −1.
pub fn nil_menelaus_counterexample() -> Result<([HPoint; 3], [HPoint; 3])> {
    let space = SpaceId::Nil;
    let tri = [
        HPoint::affine(0.0, 0.0, 0.0),
        HPoint::affine(2.5, 0.0, 1.0),
        HPoint::affine(0.5, 2.5, -1.0),
    ];
    let sides = (0..3)
        .map(|i| distance(space, &tri[i], &tri[(i + 1) % 3]))
        .collect::<Result<Vec<(f64, GeodesicParams)>>>()?;
    let side_point = |i: usize, f: f64| line_point(&tri[i], &sides[i].1, f * sides[i].0);
    let p = side_point(0, 0.4)?;
    // Unknowns: fraction on side 1, station along the geodesic PQ, fraction on side 2.
    let residual = |x: &[f64]| -> Option<Vec<f64>> {
        let q = side_point(1, x[0]).ok()?;
        let (_, pq) = distance(space, &p, &q).ok()?;
        let r_line = line_point(&p, &pq, x[1]).ok()?.to_affine()?;
        let r_side = side_point(2, x[2]).ok()?.to_affine()?;
        Some((r_line - r_side).iter().copied().collect())
    };
    // Coarse scan for a seed, then Newton.
    let mut seed = (f64::INFINITY, [0.0; 3]);
    for i in 0..=12 {
        for j in 0..=12 {
            for k in 0..=12 {
                let x = [-0.5 + 0.25 * i as f64, -4.0 + 0.5 * j as f64, 0.05 + 0.075 * k as f64];
                if let Some(r) = residual(&x) {
                    let n = r.iter().map(|c| c * c).sum::<f64>();
                    if n < seed.0 {
                        seed = (n, x);
                    }
                }
            }
        }
    }
    let (x, res) = crate::numerics::newton_fd(residual, &seed.1, 1e-13, 100, 1e-7);
    if !(res < 1e-11) {
        return Err(GeomError::NoConvergence {
            what: "Nil transversal",
            residual: res,
        });
    }
    Ok((tri, [p, side_point(1, x[0])?, side_point(2, x[2])?]))
}
