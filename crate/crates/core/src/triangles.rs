//! Geodesic triangles: interior angles, angle-sum scans, and circumscribed
//! spheres of tetrahedra.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::geodesics::{distance, distance_value};
use crate::model_core::{check_proper, origin, translate_to_origin, HPoint, SpaceId};
use crate::numerics::{brent_root, nelder_mead, newton_fd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleKind {
    /// One side lies on a fibre line.
    FibreLike,
    /// All vertices lie in the base plane of the model (Nil, SL2R).
    HyperbolicLike,
    /// The Euclidean plane of the vertices passes through the model centre
    /// (S2xR, H2xR).
    BasePlanar,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeodesicTriangle {
    pub space: SpaceId,
    pub vertices: [HPoint; 3],
    pub kind: TriangleKind,
}

const SAME_POINT_TOL: f64 = 1e-12;
const KIND_TOL: f64 = 1e-10;

impl GeodesicTriangle {
    /// Checks that the vertices are proper and pairwise distinct and
    /// classifies the triangle. Collinear vertices are detected by
    /// [`interior_angles`].
    pub fn new(space: SpaceId, vertices: [HPoint; 3]) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            check_proper(space, v).map_err(|e| GeomError::AtVertex {
                index: i,
                source: Box::new(e),
            })?;
        }
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            if vertices[i].same_point(&vertices[j], SAME_POINT_TOL) {
                return Err(GeomError::Degenerate(format!(
                    "vertices {i} and {j} coincide"
                )));
            }
        }
        let kind = classify(space, &vertices);
        Ok(Self {
            space,
            vertices,
            kind,
        })
    }

    pub fn from_affine(space: SpaceId, vertices: [Vector3<f64>; 3]) -> Result<Self> {
        Self::new(space, vertices.map(|v| HPoint::from_affine(&v)))
    }
}

/// True when `q`, moved by the translation taking `p` to the origin, lies on
/// the fibre through the origin.
fn on_common_fibre(space: SpaceId, p: &HPoint, q: &HPoint) -> bool {
    let Ok(t) = translate_to_origin(space, p) else {
        return false;
    };
    let Some(v) = t.apply(q).normalized() else {
        return false;
    };
    let [_, x1, x2, x3] = v.coords;
    let scale = v.coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    match space {
        SpaceId::S2xR | SpaceId::H2xR | SpaceId::SL2R => {
            x2.abs().max(x3.abs()) <= KIND_TOL * scale
        }
        SpaceId::Nil | SpaceId::Sol => x1.abs().max(x2.abs()) <= KIND_TOL * scale,
    }
}

fn classify(space: SpaceId, v: &[HPoint; 3]) -> TriangleKind {
    let aff: Vec<Vector3<f64>> = v.iter().filter_map(|p| p.to_affine()).collect();
    if space.is_product() && aff.len() == 3 {
        let m = Matrix3::from_columns(&aff);
        let scale = aff.iter().map(|a| a.norm()).product::<f64>();
        if m.determinant().abs() <= KIND_TOL * scale {
            return TriangleKind::BasePlanar;
        }
    }
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        if on_common_fibre(space, &v[i], &v[j]) {
            return TriangleKind::FibreLike;
        }
    }
    let base_axis = match space {
        SpaceId::Nil => Some(2),
        SpaceId::SL2R => Some(0),
        _ => None,
    };
    if let (Some(k), 3) = (base_axis, aff.len()) {
        if aff.iter().all(|a| a[k].abs() <= KIND_TOL * (1.0 + a.norm())) {
            return TriangleKind::HyperbolicLike;
        }
    }
    TriangleKind::General
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleReport {
    pub omegas: [f64; 3],
    pub sum: f64,
    pub defect: f64,
}

impl AngleReport {
    fn from_omegas(omegas: [f64; 3]) -> Self {
        let sum = omegas[0] + omegas[1] + omegas[2];
        Self {
            omegas,
            sum,
            defect: sum - PI,
        }
    }
}

/// Smallest interior angle accepted before a triangle counts as collinear.
pub const MIN_ANGLE: f64 = 1e-9;

/// Interior angle at vertex `i`, between the sides leaving it.
///
/// The vertex is moved to the origin, where the metric is Euclidean, and the
/// angle is taken between the initial tangents of the two minimizing
/// geodesics toward the other vertices.
pub fn vertex_angle(t: &GeodesicTriangle, i: usize) -> Result<f64> {
    let at = |e: GeomError| GeomError::AtVertex {
        index: i,
        source: Box::new(e),
    };
    let p = &t.vertices[i];
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let (_, dj) = distance(t.space, p, &t.vertices[j]).map_err(at)?;
    let (_, dk) = distance(t.space, p, &t.vertices[k]).map_err(at)?;
    let (u, v) = (dj.tangent(), dk.tangent());
    Ok((u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos())
}

pub fn interior_angles(t: &GeodesicTriangle) -> Result<AngleReport> {
    let mut omegas = [0.0; 3];
    for (i, w) in omegas.iter_mut().enumerate() {
        *w = vertex_angle(t, i)?;
        if *w < MIN_ANGLE || *w > PI - MIN_ANGLE {
            return Err(GeomError::Degenerate(format!(
                "vertices are collinear (angle {w:e} at vertex {i})"
            )));
        }
    }
    Ok(AngleReport::from_omegas(omegas))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub t: f64,
    pub sum: Option<f64>,
    pub note: Option<String>,
}

/// Angle sums along a one-parameter family of triangles. Members that fail
/// to build or are degenerate are kept with a note and no sum.
pub fn angle_sum_scan<F>(family: F, grid: &[f64]) -> Vec<ScanRow>
where
    F: Fn(f64) -> Result<GeodesicTriangle> + Sync,
{
    grid.par_iter()
        .map(|&t| match family(t).and_then(|tri| interior_angles(&tri)) {
            Ok(r) => ScanRow {
                t,
                sum: Some(r.sum),
                note: None,
            },
            Err(e) => ScanRow {
                t,
                sum: None,
                note: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn scan_to_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("t,sum,note\n");
    for r in rows {
        let sum = r.sum.map(|s| format!("{s:.11e}")).unwrap_or_default();
        let note = r.note.as_deref().unwrap_or("").replace(',', ";");
        let _ = writeln!(out, "{:.11e},{sum},{note}", r.t);
    }
    out
}

/// Triangle with one vertex at the origin and the others at arc length `t`
/// along two fixed directions.
pub fn radial_family(
    space: SpaceId,
    dir_b: (f64, f64),
    dir_c: (f64, f64),
) -> impl Fn(f64) -> Result<GeodesicTriangle> + Sync {
    use crate::geodesics::{exp_origin, GeodesicParams};
    move |t| {
        let b = exp_origin(&GeodesicParams::new(space, dir_b.0, dir_b.1, t))?;
        let c = exp_origin(&GeodesicParams::new(space, dir_c.0, dir_c.1, t))?;
        GeodesicTriangle::new(space, [origin(space), b, c])
    }
}

/// Product-space triangle with one vertex at the origin; the other two sit
/// at base distance `a·tanh t` in azimuth `u` and fibre height `h·t`. Small
/// `t` shrinks the triangle to a point, large `t` stretches it along the fibres.
pub fn stretched_family(
    space: SpaceId,
    b: (f64, f64, f64),
    c: (f64, f64, f64),
) -> impl Fn(f64) -> Result<GeodesicTriangle> + Sync {
    use crate::geodesics::{exp_origin, GeodesicParams};
    move |t| {
        let vertex = |(u, a, h): (f64, f64, f64)| {
            let (base, fibre) = (a * t.tanh(), h * t);
            exp_origin(&GeodesicParams::new(space, u, fibre.atan2(base), base.hypot(fibre)))
        };
        GeodesicTriangle::new(space, [origin(space), vertex(b)?, vertex(c)?])
    }
}

/// Right-angled fibre-like Nil triangle `(0,0,0), (0,0,z), (x,0,z)` as a
/// function of `x`.
pub fn nil_fibre_family(z: f64) -> impl Fn(f64) -> Result<GeodesicTriangle> + Sync {
    move |x| {
        GeodesicTriangle::from_affine(
            SpaceId::Nil,
            [Vector3::zeros(), Vector3::new(0.0, 0.0, z), Vector3::new(x, 0.0, z)],
        )
    }
}

/// Finds a member of the family with angle sum π by root bracketing on
/// `[lo, hi]`, whose ends must have sums on opposite sides of π.
pub fn bisect_angle_sum<F>(family: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, AngleReport)>
where
    F: Fn(f64) -> Result<GeodesicTriangle>,
{
    let defect = |t: f64| {
        family(t)
            .and_then(|tri| interior_angles(&tri))
            .map_or(f64::NAN, |r| r.defect)
    };
    let (da, db) = (defect(lo), defect(hi));
    if !(da * db < 0.0) {
        return Err(GeomError::Invalid(format!(
            "angle-sum defects at the bracket ends do not change sign ({da:e}, {db:e})"
        )));
    }
    let t = brent_root(defect, lo, hi, 1e-15, 300).ok_or(GeomError::NoConvergence {
        what: "angle-sum bisection",
        residual: f64::NAN,
    })?;
    let report = interior_angles(&family(t)?)?;
    if report.defect.abs() > tol {
        return Err(GeomError::NoConvergence {
            what: "angle-sum bisection",
            residual: report.defect.abs(),
        });
    }
    Ok((t, report))
}

/// Straight-line interpolation between the vertices of two triangles.
pub fn blend_family(
    space: SpaceId,
    from: [Vector3<f64>; 3],
    to: [Vector3<f64>; 3],
) -> impl Fn(f64) -> Result<GeodesicTriangle> + Sync {
    move |t| {
        let v = [0, 1, 2].map(|i| from[i] * (1.0 - t) + to[i] * t);
        GeodesicTriangle::from_affine(space, v)
    }
}

/// Affine sampling box used by [`random_triangle`].
fn sample_vertex<R: Rng>(space: SpaceId, rng: &mut R) -> HPoint {
    loop {
        let p = match space {
            SpaceId::S2xR => {
                let v = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
                if v.norm() < 0.2 {
                    continue;
                }
                v
            }
            SpaceId::H2xR => Vector3::new(
                rng.random_range(0.2..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
            SpaceId::SL2R => Vector3::from_fn(|_, _| rng.random_range(-0.6..0.6)),
            SpaceId::Nil | SpaceId::Sol => Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5)),
        };
        let h = HPoint::from_affine(&p);
        if check_proper(space, &h).is_ok() {
            return h;
        }
    }
}

/// Minimum pairwise distance for [`random_triangle`].
pub const RANDOM_MIN_SIDE: f64 = 1e-2;
/// Minimum interior angle for [`random_triangle`].
pub const RANDOM_MIN_ANGLE: f64 = 1e-2;

/// A random proper triangle with its angles, rejecting near-degenerate
/// triples and triples whose sides are not unique.
pub fn random_triangle<R: Rng>(space: SpaceId, rng: &mut R) -> Result<(GeodesicTriangle, AngleReport)> {
    for _ in 0..10_000 {
        let v = [0, 1, 2].map(|_| sample_vertex(space, rng));
        let sides_ok = [(0, 1), (1, 2), (0, 2)].iter().all(|&(i, j)| {
            distance_value(space, &v[i], &v[j]).is_ok_and(|d| d >= RANDOM_MIN_SIDE)
        });
        if !sides_ok {
            continue;
        }
        let Ok(tri) = GeodesicTriangle::new(space, v) else {
            continue;
        };
        match interior_angles(&tri) {
            Ok(r) if r.omegas.iter().all(|&w| w >= RANDOM_MIN_ANGLE && w <= PI - RANDOM_MIN_ANGLE) => {
                return Ok((tri, r))
            }
            _ => continue,
        }
    }
    Err(GeomError::NoConvergence {
        what: "random triangle sampling",
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Circumsphere {
    pub center: HPoint,
    pub radius: f64,
    /// `d(center, Aᵢ) − radius` per vertex.
    pub residuals: [f64; 4],
}

/// Tolerance on the circumsphere residuals.
pub const CIRCUMSPHERE_TOL: f64 = 1e-8;

/// Centre and radius of the geodesic sphere through four points.
///
/// The spread of the four distances is minimized from the affine centroid by
/// Nelder–Mead and then polished by Newton on the equal-distance equations.
pub fn circumsphere(space: SpaceId, vertices: &[HPoint; 4]) -> Result<Circumsphere> {
    let mut aff = [Vector3::zeros(); 4];
    for (i, v) in vertices.iter().enumerate() {
        check_proper(space, v).map_err(|e| GeomError::AtVertex {
            index: i,
            source: Box::new(e),
        })?;
        aff[i] = v.to_affine().unwrap();
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if vertices[i].same_point(&vertices[j], SAME_POINT_TOL) {
                return Err(GeomError::Degenerate(format!("vertices {i} and {j} coincide")));
            }
        }
    }
    let dists = |x: &[f64]| -> Option<[f64; 4]> {
        let c = HPoint::affine(x[0], x[1], x[2]);
        let mut d = [0.0; 4];
        for (k, v) in vertices.iter().enumerate() {
            d[k] = distance_value(space, &c, v).ok()?;
        }
        Some(d)
    };
    let spread = |x: &[f64]| -> f64 {
        match dists(x) {
            Some(d) => {
                let mean = d.iter().sum::<f64>() / 4.0;
                d.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
            }
            None => f64::INFINITY,
        }
    };
    let centroid = aff.iter().sum::<Vector3<f64>>() / 4.0;
    let size = aff
        .iter()
        .map(|a| (a - centroid).norm())
        .fold(0.0f64, f64::max)
        .max(1e-3);
    let step = [0.1 * size; 3];
    let mut x = centroid.as_slice().to_vec();
    for _ in 0..4 {
        let r = nelder_mead(&spread, &x, &step, 1e-16, 1e-12, 4000);
        let moved = x.iter().zip(&r.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = r.x;
        if moved < 1e-12 {
            break;
        }
    }
    let (x, _) = newton_fd(
        |x| {
            let d = dists(x)?;
            Some(vec![d[1] - d[0], d[2] - d[0], d[3] - d[0]])
        },
        &x,
        1e-14,
        50,
        1e-7,
    );
    let d = dists(&x).ok_or(GeomError::NoConvergence {
        what: "circumsphere",
        residual: f64::NAN,
    })?;
    let radius = d.iter().sum::<f64>() / 4.0;
    let residuals = d.map(|a| a - radius);
    let worst = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if worst > CIRCUMSPHERE_TOL {
        return Err(GeomError::NoConvergence {
            what: "circumsphere",
            residual: worst,
        });
    }
    if space == SpaceId::S2xR && radius > PI {
        return Err(GeomError::OutOfRange {
            what: "circumscribed radius (surface is not a geodesic sphere)",
            value: radius,
            range: "[0, π]".into(),
        });
    }
    Ok(Circumsphere {
        center: HPoint::affine(x[0], x[1], x[2]),
        radius,
        residuals,
    })
}
