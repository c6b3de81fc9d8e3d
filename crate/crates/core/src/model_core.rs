//! Homogeneous coordinates in the projective sphere model and the group
//! operations of the five geometries.
//!
//! Points are row vectors and collineations act from the right: `p' = p·M`.
//! Planes are column vectors transformed by the inverse, `u' = M⁻¹u`, which
//! keeps `p·u` invariant.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceId {
    S2xR,
    H2xR,
    Nil,
    SL2R,
    Sol,
}

impl SpaceId {
    pub const ALL: [SpaceId; 5] = [
        SpaceId::S2xR,
        SpaceId::H2xR,
        SpaceId::Nil,
        SpaceId::SL2R,
        SpaceId::Sol,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SpaceId::S2xR => "s2xr",
            SpaceId::H2xR => "h2xr",
            SpaceId::Nil => "nil",
            SpaceId::SL2R => "sl2r",
            SpaceId::Sol => "sol",
        }
    }

    /// True for the two product geometries.
    pub fn is_product(self) -> bool {
        matches!(self, SpaceId::S2xR | SpaceId::H2xR)
    }
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SpaceId::S2xR => "S2xR",
            SpaceId::H2xR => "H2xR",
            SpaceId::Nil => "Nil",
            SpaceId::SL2R => "SL2R",
            SpaceId::Sol => "Sol",
        };
        f.write_str(name)
    }
}

impl FromStr for SpaceId {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2xr" | "s2r" => Ok(SpaceId::S2xR),
            "h2xr" | "h2r" => Ok(SpaceId::H2xR),
            "nil" => Ok(SpaceId::Nil),
            "sl2r" => Ok(SpaceId::SL2R),
            "sol" => Ok(SpaceId::Sol),
            other => Err(GeomError::Invalid(format!("unknown space `{other}`"))),
        }
    }
}

/// A point of projective 3-space, defined up to a positive factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub coords: [f64; 4],
}

impl HPoint {
    pub fn new(x0: f64, x1: f64, x2: f64, x3: f64) -> Self {
        Self {
            coords: [x0, x1, x2, x3],
        }
    }

    /// The point `(1, x, y, z)`.
    pub fn affine(x: f64, y: f64, z: f64) -> Self {
        Self::new(1.0, x, y, z)
    }

    pub fn from_affine(v: &Vector3<f64>) -> Self {
        Self::affine(v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vector4<f64> {
        Vector4::from(self.coords)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            coords: [v[0], v[1], v[2], v[3]],
        }
    }

    /// Divides by `x⁰`; `None` for ideal points.
    pub fn normalized(&self) -> Option<Self> {
        let w = self.coords[0];
        if w.abs() < 1e-300 || !w.is_finite() {
            return None;
        }
        Some(Self::new(
            1.0,
            self.coords[1] / w,
            self.coords[2] / w,
            self.coords[3] / w,
        ))
    }

    /// Affine coordinates `(x¹, x², x³)/x⁰`.
    pub fn to_affine(&self) -> Option<Vector3<f64>> {
        self.normalized()
            .map(|p| Vector3::new(p.coords[1], p.coords[2], p.coords[3]))
    }

    /// Same projective point, i.e. positively proportional within `tol`.
    pub fn same_point(&self, other: &HPoint, tol: f64) -> bool {
        let a = self.vector();
        let b = other.vector();
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            return false;
        }
        (a / na - b / nb).norm() <= tol
    }
}

/// An oriented plane `u₀x⁰ + u₁x¹ + u₂x² + u₃x³ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPlane {
    pub coeffs: [f64; 4],
}

impl HPlane {
    pub fn new(u0: f64, u1: f64, u2: f64, u3: f64) -> Self {
        Self {
            coeffs: [u0, u1, u2, u3],
        }
    }

    pub fn vector(&self) -> Vector4<f64> {
        Vector4::from(self.coeffs)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            coeffs: [v[0], v[1], v[2], v[3]],
        }
    }
}

pub fn incidence(p: &HPoint, u: &HPlane) -> f64 {
    p.vector().dot(&u.vector())
}

/// A collineation with its cached inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjMap {
    matrix: Matrix4<f64>,
    inverse: Matrix4<f64>,
}

const MAX_CONDITION: f64 = 1e12;

impl ProjMap {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
            inverse: Matrix4::identity(),
        }
    }

    /// Builds a map from its matrix, rejecting singular or ill-conditioned input.
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let sv = matrix.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !smax.is_finite() || smin <= 0.0 || smax / smin > MAX_CONDITION {
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            return Err(GeomError::IllConditioned(cond));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or(GeomError::IllConditioned(f64::INFINITY))?;
        Ok(Self { matrix, inverse })
    }

    /// Builds a map from a matrix and a known exact inverse.
    pub(crate) fn from_pair(matrix: Matrix4<f64>, inverse: Matrix4<f64>) -> Self {
        Self { matrix, inverse }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn inverse_matrix(&self) -> &Matrix4<f64> {
        &self.inverse
    }

    pub fn inverse(&self) -> ProjMap {
        Self {
            matrix: self.inverse,
            inverse: self.matrix,
        }
    }

    /// Apply `self`, then `then`.
    pub fn then(&self, then: &ProjMap) -> ProjMap {
        Self {
            matrix: self.matrix * then.matrix,
            inverse: then.inverse * self.inverse,
        }
    }

    pub fn apply(&self, p: &HPoint) -> HPoint {
        HPoint::from_vector(&(self.matrix.transpose() * p.vector()))
    }

    pub fn apply_plane(&self, u: &HPlane) -> HPlane {
        HPlane::from_vector(&(self.inverse * u.vector()))
    }

    /// Applies the map to an affine point and renormalizes.
    pub fn apply_affine(&self, v: &Vector3<f64>) -> Option<Vector3<f64>> {
        self.apply(&HPoint::from_affine(v)).to_affine()
    }
}

/// Signature of the polarity; `None` for Nil, whose polarity is null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpaceSignature {
    pub space: SpaceId,
    pub diag: Option<[i8; 4]>,
}

pub fn signature(space: SpaceId) -> SpaceSignature {
    let diag = match space {
        SpaceId::S2xR => Some([0, 1, 1, 1]),
        SpaceId::H2xR | SpaceId::Sol => Some([0, -1, 1, 1]),
        SpaceId::SL2R => Some([-1, -1, 1, 1]),
        SpaceId::Nil => None,
    };
    SpaceSignature { space, diag }
}

/// The point from which every exponential map starts.
pub fn origin(space: SpaceId) -> HPoint {
    match space {
        SpaceId::S2xR | SpaceId::H2xR => HPoint::new(1.0, 1.0, 0.0, 0.0),
        _ => HPoint::new(1.0, 0.0, 0.0, 0.0),
    }
}

/// `−x⁰x⁰ − x¹x¹ + x²x² + x³x³`, negative inside the hyperboloid solid.
pub fn sl2r_form(p: &HPoint) -> f64 {
    let [x0, x1, x2, x3] = p.coords;
    -x0 * x0 - x1 * x1 + x2 * x2 + x3 * x3
}

pub fn is_proper(space: SpaceId, p: &HPoint) -> bool {
    if p.coords.iter().any(|c| !c.is_finite()) || p.coords.iter().all(|&c| c == 0.0) {
        return false;
    }
    let [x0, x1, x2, x3] = p.coords;
    match space {
        SpaceId::S2xR => x0 > 0.0 && (x1 * x1 + x2 * x2 + x3 * x3) > 0.0,
        SpaceId::H2xR => x0 > 0.0 && x1 > 0.0 && x1 * x1 - x2 * x2 - x3 * x3 > 0.0,
        SpaceId::Nil | SpaceId::Sol => x0 > 0.0,
        SpaceId::SL2R => sl2r_form(p) < 0.0,
    }
}

pub fn check_proper(space: SpaceId, p: &HPoint) -> Result<()> {
    if is_proper(space, p) {
        Ok(())
    } else {
        Err(GeomError::ImproperPoint {
            space,
            coords: p.coords,
        })
    }
}

// ---------------------------------------------------------------- Nil

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NilElement {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NilElement {
    pub const IDENTITY: NilElement = NilElement {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.x, -self.y, self.x * self.y - self.z)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Heisenberg product `(x,y,z)·(a,b,c) = (a+x, b+y, c+xb+z)`.
pub fn nil_mul(g: &NilElement, h: &NilElement) -> NilElement {
    NilElement::new(h.x + g.x, h.y + g.y, h.z + g.x * h.y + g.z)
}

/// The collineation `p ↦ g·p`; hence `T(g)·T(h) = T(h·g)` as matrices.
pub fn nil_translation(g: &NilElement) -> ProjMap {
    let m = |e: &NilElement| {
        Matrix4::new(
            1.0, e.x, e.y, e.z, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, e.x, //
            0.0, 0.0, 0.0, 1.0,
        )
    };
    ProjMap::from_pair(m(g), m(&g.inverse()))
}

/// Rotation by `omega` about the fibre through the origin.
pub fn nil_rotation(omega: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = omega.sin_cos();
    let (s2, c2) = (2.0 * omega).sin_cos();
    let (x, y, z) = (p.x, p.y, p.z);
    Vector3::new(
        x * c - y * s,
        x * s + y * c,
        z - 0.5 * x * y + 0.25 * (x * x - y * y) * s2 + 0.5 * x * y * c2,
    )
}

/// The quadratic chart change `(x, y, z) ↦ (x, y, z − xy/2)` that turns Nil
/// rotations into linear ones.
pub fn nil_linearize(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z - 0.5 * p.x * p.y)
}

pub fn nil_delinearize(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z + 0.5 * p.x * p.y)
}

// ---------------------------------------------------------------- Sol

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolElement {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SolElement {
    pub const IDENTITY: SolElement = SolElement {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.x * self.z.exp(), -self.y * (-self.z).exp(), -self.z)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// `(a,b,c)·(x,y,z) = (x + a e^{−z}, y + b e^{z}, z + c)`.
pub fn sol_mul(g: &SolElement, h: &SolElement) -> SolElement {
    SolElement::new(
        h.x + g.x * (-h.z).exp(),
        h.y + g.y * h.z.exp(),
        h.z + g.z,
    )
}

/// The collineation `p ↦ p·g`; hence `T(g)·T(h) = T(g·h)`.
pub fn sol_translation(g: &SolElement) -> ProjMap {
    let m = |e: &SolElement| {
        Matrix4::new(
            1.0,
            e.x,
            e.y,
            e.z,
            0.0,
            (-e.z).exp(),
            0.0,
            0.0,
            0.0,
            0.0,
            e.z.exp(),
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    };
    ProjMap::from_pair(m(g), m(&g.inverse()))
}

/// The two involutions generating the stabilizer of the origin, followed by
/// the remaining elements of their dihedral closure (eight in total).
pub fn sol_stabilizer_generators() -> Vec<ProjMap> {
    let g1 = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, -1.0, 1.0));
    let g2 = Matrix4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, -1.0,
    );
    let mut elems: Vec<Matrix4<f64>> = vec![g1, g2];
    let mut frontier = elems.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for a in &frontier {
            for g in [g1, g2] {
                let prod = a * g;
                if !elems.iter().any(|e| (e - prod).norm() < 1e-12) {
                    elems.push(prod);
                    next.push(prod);
                }
            }
        }
        frontier = next;
    }
    // Signed permutation matrices: the inverse is the transpose.
    elems
        .into_iter()
        .map(|m| ProjMap::from_pair(m, m.transpose()))
        .collect()
}

// ---------------------------------------------------------------- SL2R

/// Fibre translation `S(φ)`.
pub fn sl2r_fibre_translation(phi: f64) -> ProjMap {
    let m = |p: f64| {
        let (s, c) = p.sin_cos();
        Matrix4::new(
            c, s, 0.0, 0.0, //
            -s, c, 0.0, 0.0, //
            0.0, 0.0, c, -s, //
            0.0, 0.0, s, c,
        )
    };
    ProjMap::from_pair(m(phi), m(-phi))
}

/// Intersection of the fibre through `x` with the base plane `x¹ = 0`.
pub fn sl2r_foot_point(x: &HPoint) -> Result<HPoint> {
    check_proper(SpaceId::SL2R, x)?;
    let [x0, x1, x2, x3] = x.coords;
    Ok(HPoint::new(
        x0 * x0 + x1 * x1,
        0.0,
        x0 * x2 - x1 * x3,
        x0 * x3 + x1 * x2,
    ))
}

/// The 2×2 matrix `[[x⁰−x³, x¹+x²], [x²−x¹, x⁰+x³]]` of a point.
pub fn sl2r_matrix(p: &HPoint) -> Matrix2<f64> {
    let [x0, x1, x2, x3] = p.coords;
    Matrix2::new(x0 - x3, x1 + x2, x2 - x1, x0 + x3)
}

pub fn sl2r_point(m: &Matrix2<f64>) -> HPoint {
    let (d, b, c, a) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    HPoint::new(0.5 * (a + d), 0.5 * (b - c), 0.5 * (b + c), 0.5 * (a - d))
}

/// Right multiplication by `b` written as a collineation.
fn sl2r_right_mul(b: &Matrix2<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for i in 0..4 {
        let mut e = [0.0; 4];
        e[i] = 1.0;
        let row = sl2r_point(&(sl2r_matrix(&HPoint { coords: e }) * b)).vector();
        m.set_row(i, &row.transpose());
    }
    m
}

/// Rotation by `angle` about the coordinate axis through the origin that
/// carries the fibre (S2xR, H2xR) or about the fibre itself (SL2R).
pub fn origin_rotation(space: SpaceId, angle: f64) -> Result<ProjMap> {
    let (s, c) = angle.sin_cos();
    let m = |s: f64| {
        Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, c, s, //
            0.0, 0.0, -s, c,
        )
    };
    match space {
        SpaceId::S2xR | SpaceId::H2xR | SpaceId::SL2R => Ok(ProjMap::from_pair(m(s), m(-s))),
        _ => Err(GeomError::Unsupported("linear rotation about the origin", space)),
    }
}

// ---------------------------------------------------------------- all spaces

fn block(scale: f64, a: &Matrix3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&(a * scale));
    m
}

/// Lorentz boost taking `(1, 0, 0)` to the hyperboloid point `p`.
fn lorentz_boost(p: &Vector3<f64>) -> Matrix3<f64> {
    let (p0, a, b) = (p.x, p.y, p.z);
    let k = 1.0 / (1.0 + p0);
    Matrix3::new(
        p0,
        a,
        b,
        a,
        1.0 + k * a * a,
        k * a * b,
        b,
        k * a * b,
        1.0 + k * b * b,
    )
}

/// An isometry mapping `a` onto the origin of `space`.
pub fn translate_to_origin(space: SpaceId, a: &HPoint) -> Result<ProjMap> {
    check_proper(space, a)?;
    let p = a.to_affine().ok_or(GeomError::ImproperPoint {
        space,
        coords: a.coords,
    })?;
    match space {
        SpaceId::S2xR => {
            let n = p.norm();
            let dir = p / n;
            let q = Rotation3::rotation_between(&dir, &Vector3::x())
                .map(|r| *r.matrix())
                .unwrap_or_else(|| Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
            // Row action of the linear map v ↦ Q v / n.
            let fwd = block(1.0 / n, &q.transpose());
            let inv = block(n, &q);
            Ok(ProjMap::from_pair(fwd, inv))
        }
        SpaceId::H2xR => {
            let q = p.x * p.x - p.y * p.y - p.z * p.z;
            let n = q.sqrt();
            let hat = p / n;
            let back = lorentz_boost(&Vector3::new(hat.x, -hat.y, -hat.z));
            let fwd = lorentz_boost(&hat);
            Ok(ProjMap::from_pair(block(1.0 / n, &back), block(n, &fwd)))
        }
        SpaceId::Nil => Ok(nil_translation(&NilElement::new(p.x, p.y, p.z).inverse())),
        SpaceId::Sol => Ok(sol_translation(&SolElement::new(p.x, p.y, p.z).inverse())),
        SpaceId::SL2R => {
            let ma = sl2r_matrix(a);
            let adj = Matrix2::new(ma[(1, 1)], -ma[(0, 1)], -ma[(1, 0)], ma[(0, 0)]);
            let det = ma.determinant();
            let fwd = sl2r_right_mul(&(adj / det.sqrt()));
            let inv = sl2r_right_mul(&(ma / det.sqrt()));
            Ok(ProjMap::from_pair(fwd, inv))
        }
    }
}

/// An isometry mapping the origin onto `a`.
pub fn translate_from_origin(space: SpaceId, a: &HPoint) -> Result<ProjMap> {
    translate_to_origin(space, a).map(|t| t.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn assert_point(p: &HPoint, q: &HPoint, tol: f64) {
        let a = p.normalized().unwrap().vector();
        let b = q.normalized().unwrap().vector();
        assert!((a - b).norm() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn incidence_basics() {
        let p = HPoint::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(incidence(&p, &HPlane::new(0.0, 1.0, 0.0, 0.0)), 0.0);
        let p = HPoint::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(incidence(&p, &HPlane::new(1.0, 0.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn space_tags_round_trip() {
        for s in SpaceId::ALL {
            assert_eq!(s.tag().parse::<SpaceId>().unwrap(), s);
            assert_eq!(s.to_string().parse::<SpaceId>().unwrap(), s);
        }
        assert!("e3".parse::<SpaceId>().is_err());
    }

    #[test]
    fn signatures() {
        assert_eq!(signature(SpaceId::SL2R).diag, Some([-1, -1, 1, 1]));
        assert_eq!(signature(SpaceId::S2xR).diag, Some([0, 1, 1, 1]));
        assert_eq!(signature(SpaceId::H2xR).diag, Some([0, -1, 1, 1]));
        assert_eq!(signature(SpaceId::Nil).diag, None);
    }

    #[test]
    fn projmap_rejects_singular() {
        let mut m = Matrix4::identity();
        m[(3, 3)] = 0.0;
        assert!(matches!(ProjMap::new(m), Err(GeomError::IllConditioned(_))));
        m[(3, 3)] = 1e-14;
        assert!(ProjMap::new(m).is_err());
        assert!(ProjMap::new(Matrix4::identity() * 3.0).is_ok());
    }

    #[test]
    fn nil_products() {
        let e = NilElement::new(1.0, 0.0, 0.0);
        let f = NilElement::new(0.0, 1.0, 0.0);
        assert_eq!(nil_mul(&e, &f), NilElement::new(1.0, 1.0, 1.0));
        assert_eq!(nil_mul(&f, &e), NilElement::new(1.0, 1.0, 0.0));
        let g = NilElement::new(0.3, -1.2, 2.0);
        assert_eq!(nil_mul(&NilElement::IDENTITY, &g), g);
        let c = NilElement::new(0.0, 0.0, 0.7);
        assert_eq!(nil_mul(&g, &c), nil_mul(&c, &g));
        let id = nil_mul(&g, &g.inverse());
        assert_relative_eq!(id.vector().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nil_translation_moves_points() {
        assert_eq!(
            *nil_translation(&NilElement::IDENTITY).matrix(),
            Matrix4::identity()
        );
        let g = NilElement::new(0.4, -0.7, 1.1);
        let o = nil_translation(&g).apply(&HPoint::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(o, HPoint::new(1.0, 0.4, -0.7, 1.1));
        let (a, b, c) = (2.0, 0.5, -1.0);
        let q = nil_translation(&g).apply(&HPoint::affine(a, b, c));
        assert_point(
            &q,
            &HPoint::affine(g.x + a, g.y + b, g.z + b * g.x + c),
            1e-15,
        );
    }

    #[test]
    fn nil_rotation_cases() {
        let p = Vector3::new(0.3, -0.8, 1.7);
        assert_relative_eq!(nil_rotation(0.0, &p), p, epsilon = 1e-15);
        let r = nil_rotation(std::f64::consts::FRAC_PI_2, &Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        // In the linearized chart the rotation is a rotation of (x, y) fixing z.
        for omega in [0.3, 1.0, -2.2] {
            let lin = nil_linearize(&nil_rotation(omega, &nil_delinearize(&p)));
            let (s, c) = f64::sin_cos(omega);
            let expect = Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
            assert_relative_eq!(lin, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn sol_products() {
        let g = SolElement::new(0.5, -1.5, 0.0);
        let h = SolElement::new(0.0, 0.0, 0.8);
        let p = sol_mul(&g, &h);
        assert_relative_eq!(p.x, 0.5 * (-0.8f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(p.y, -1.5 * 0.8f64.exp(), epsilon = 1e-15);
        assert_eq!(p.z, 0.8);
        let k = SolElement::new(0.3, 2.0, -1.1);
        assert_relative_eq!(sol_mul(&k, &k.inverse()).vector().norm(), 0.0, epsilon = 1e-15);
        assert_eq!(sol_mul(&SolElement::IDENTITY, &k), k);
    }

    #[test]
    fn sol_translation_maps() {
        let g = SolElement::new(0.2, -0.4, 0.9);
        let o = sol_translation(&g).apply(&HPoint::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(o, HPoint::new(1.0, 0.2, -0.4, 0.9));
        let q = sol_translation(&g).apply(&HPoint::affine(1.0, 2.0, 3.0));
        let want = sol_mul(&SolElement::new(1.0, 2.0, 3.0), &g);
        assert_point(&q, &HPoint::affine(want.x, want.y, want.z), 1e-14);
    }

    #[test]
    fn sol_stabilizer_is_dihedral() {
        let gens = sol_stabilizer_generators();
        assert_eq!(gens.len(), 8);
        let g1 = gens[0].matrix();
        assert_eq!(g1 * g1, Matrix4::identity());
        let q = gens[1].apply(&HPoint::affine(0.5, -2.0, 1.5));
        assert_eq!(q, HPoint::affine(-2.0, 0.5, -1.5));
        let orders: Vec<usize> = gens
            .iter()
            .map(|g| {
                let mut m = *g.matrix();
                let mut k = 1;
                while (m - Matrix4::identity()).norm() > 1e-12 {
                    m *= g.matrix();
                    k += 1;
                }
                k
            })
            .collect();
        assert_eq!(orders.iter().filter(|&&k| k == 4).count(), 2);
    }

    #[test]
    fn sol_stabilizer_preserves_metric_at_origin() {
        for g in sol_stabilizer_generators() {
            let lin = g.matrix().fixed_view::<3, 3>(1, 1).into_owned();
            for v in [
                Vector3::new(1.0, 0.3, -0.2),
                Vector3::new(-0.4, 2.0, 0.7),
            ] {
                let w = lin.transpose() * v;
                assert_relative_eq!(w.norm_squared(), v.norm_squared(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sl2r_fibre_translation_cases() {
        assert_eq!(*sl2r_fibre_translation(0.0).matrix(), Matrix4::identity());
        let q = sl2r_fibre_translation(std::f64::consts::FRAC_PI_2)
            .apply(&HPoint::new(1.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(q.vector(), Vector4::new(0.0, 1.0, 0.0, 0.0), epsilon = 1e-15);
        let ab = sl2r_fibre_translation(0.4).then(&sl2r_fibre_translation(1.3));
        assert_relative_eq!(
            *ab.matrix(),
            *sl2r_fibre_translation(1.7).matrix(),
            epsilon = 1e-12
        );
        // Coordinate action written out.
        let (x0, x1, x2, x3) = (1.0, 0.2, 0.3, -0.1);
        let phi = 0.77f64;
        let (s, c) = phi.sin_cos();
        let q = sl2r_fibre_translation(phi).apply(&HPoint::new(x0, x1, x2, x3));
        let want = Vector4::new(
            x0 * c - x1 * s,
            x0 * s + x1 * c,
            x2 * c + x3 * s,
            -x2 * s + x3 * c,
        );
        assert_relative_eq!(q.vector(), want, epsilon = 1e-15);
    }

    #[test]
    fn sl2r_foot_points() {
        let p = HPoint::affine(0.0, 0.3, -0.2);
        assert_point(&sl2r_foot_point(&p).unwrap(), &p, 1e-15);
        let o = HPoint::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(sl2r_foot_point(&o).unwrap(), o);
        assert_eq!(
            sl2r_foot_point(&HPoint::new(1.0, 1.0, 0.0, 0.0)).unwrap(),
            HPoint::new(2.0, 0.0, 0.0, 0.0)
        );
        assert!(sl2r_foot_point(&HPoint::affine(0.0, 1.0, 0.5)).is_err());
    }

    #[test]
    fn sl2r_matrix_round_trip() {
        let p = HPoint::new(1.0, 0.3, -0.2, 0.4);
        assert_relative_eq!(sl2r_point(&sl2r_matrix(&p)).vector(), p.vector(), epsilon = 1e-15);
        assert_relative_eq!(
            sl2r_matrix(&p).determinant(),
            -sl2r_form(&p),
            epsilon = 1e-15
        );
    }

    #[test]
    fn sl2r_vertex_translation() {
        let (y, z) = (0.6, -0.45);
        let a2 = HPoint::affine(0.0, y, 0.0);
        let t = translate_to_origin(SpaceId::SL2R, &a2).unwrap();
        assert_point(&t.apply(&a2), &HPoint::new(1.0, 0.0, 0.0, 0.0), 1e-14);
        let a3 = HPoint::affine(0.0, 0.0, z);
        assert_point(&t.apply(&a3), &HPoint::affine(y * z, -y, z), 1e-14);
        let a1 = HPoint::new(1.0, 0.0, 0.0, 0.0);
        assert_point(&t.apply(&a1), &HPoint::affine(0.0, -y, 0.0), 1e-14);
    }

    #[test]
    fn translations_hit_origin() {
        let cases = [
            (SpaceId::S2xR, HPoint::affine(-2.0, -0.5, 3.0)),
            (SpaceId::S2xR, HPoint::affine(-0.3, 0.0, 0.0)),
            (SpaceId::H2xR, HPoint::affine(1.5, 1.0, -1.0)),
            (SpaceId::Nil, HPoint::affine(1.5, 1.0, -1.0)),
            (SpaceId::Sol, HPoint::affine(1.5, 1.0, -1.0)),
            (SpaceId::SL2R, HPoint::new(1.0, 0.4, 0.3, -0.6)),
        ];
        for (space, a) in cases {
            let t = translate_to_origin(space, &a).unwrap();
            assert_point(&t.apply(&a), &origin(space), 1e-13);
            let id = translate_to_origin(space, &origin(space)).unwrap();
            let m = id.matrix() / id.matrix()[(0, 0)];
            assert_relative_eq!(m, Matrix4::identity(), epsilon = 1e-14);
            let prod = t.matrix() * t.inverse_matrix();
            assert_relative_eq!(prod / prod[(0, 0)], Matrix4::identity(), epsilon = 1e-12);
        }
        assert!(translate_to_origin(SpaceId::H2xR, &HPoint::affine(0.5, 1.0, 0.0)).is_err());
        assert!(translate_to_origin(SpaceId::Nil, &HPoint::new(-1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn nil_translation_inverse_is_group_inverse() {
        let a = HPoint::affine(0.7, -0.2, 1.3);
        let t = translate_to_origin(SpaceId::Nil, &a).unwrap();
        let g = NilElement::new(0.7, -0.2, 1.3);
        assert_eq!(*t.matrix(), *nil_translation(&g.inverse()).matrix());
    }

    #[test]
    fn h2xr_translation_preserves_hyperboloid_form() {
        let a = HPoint::affine(2.0, 0.7, -1.1);
        let t = translate_to_origin(SpaceId::H2xR, &a).unwrap();
        let b = HPoint::affine(3.0, -1.0, 0.5);
        let qa = |p: &HPoint| {
            let v = p.to_affine().unwrap();
            v.x * v.x - v.y * v.y - v.z * v.z
        };
        let ratio = qa(&t.apply(&b)) / qa(&b);
        assert_relative_eq!(ratio, 1.0 / qa(&a), epsilon = 1e-12);
    }

    fn arb_nil() -> impl Strategy<Value = NilElement> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| NilElement::new(x, y, z))
    }

    fn arb_sol() -> impl Strategy<Value = SolElement> {
        (-3.0..3.0f64, -3.0..3.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| SolElement::new(x, y, z))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn nil_translation_is_homomorphism(g in arb_nil(), h in arb_nil()) {
            let lhs = nil_translation(&g).then(&nil_translation(&h));
            let rhs = nil_translation(&nil_mul(&h, &g));
            prop_assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-12);
            prop_assert!((lhs.inverse_matrix() - rhs.inverse_matrix()).norm() < 1e-11);
        }

        #[test]
        fn sol_translation_is_homomorphism(g in arb_sol(), h in arb_sol()) {
            let lhs = sol_translation(&g).then(&sol_translation(&h));
            let rhs = sol_translation(&sol_mul(&g, &h));
            let scale = 1.0 + rhs.matrix().norm();
            prop_assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-12 * scale);
        }

        #[test]
        fn incidence_is_preserved(
            p in prop::array::uniform4(-2.0..2.0f64),
            u in prop::array::uniform4(-2.0..2.0f64),
            a in prop::array::uniform3(-1.0..1.0f64),
            phi in -4.0..4.0f64,
        ) {
            let p = HPoint { coords: p };
            let u = HPlane { coeffs: u };
            let maps = [
                nil_translation(&NilElement::new(a[0], a[1], a[2])),
                sol_translation(&SolElement::new(a[0], a[1], a[2])),
                sl2r_fibre_translation(phi),
                translate_to_origin(SpaceId::S2xR, &HPoint::affine(a[0] + 2.0, a[1], a[2])).unwrap(),
                translate_to_origin(SpaceId::H2xR, &HPoint::affine(a[0] + 3.0, a[1], a[2])).unwrap(),
                translate_to_origin(SpaceId::SL2R, &HPoint::new(1.0, a[0], 0.5 * a[1], 0.5 * a[2])).unwrap(),
            ];
            let base = incidence(&p, &u);
            for t in maps {
                let moved = incidence(&t.apply(&p), &t.apply_plane(&u));
                let scale = p.vector().norm() * u.vector().norm()
                    * t.matrix().norm() * t.inverse_matrix().norm();
                prop_assert!((moved - base).abs() <= 1e-12 * scale.max(1.0));
            }
        }

        #[test]
        fn fibre_translation_preserves_form(p in prop::array::uniform4(-2.0..2.0f64), phi in -10.0..10.0f64) {
            let p = HPoint { coords: p };
            let q = sl2r_fibre_translation(phi).apply(&p);
            prop_assert!(rel_err(sl2r_form(&q), sl2r_form(&p)) < 1e-12);
        }

        #[test]
        fn nil_rotation_preserves_length(
            p in prop::array::uniform3(-2.0..2.0f64),
            d in prop::array::uniform3(-1.0..1.0f64),
            omega in -3.2..3.2f64,
        ) {
            // Length of a short straight chord, measured with the Nil metric by
            // midpoint quadrature, before and after the rotation.
            let metric = |x: &Vector3<f64>| Matrix3::new(
                1.0, 0.0, 0.0,
                0.0, 1.0 + x.x * x.x, -x.x,
                0.0, -x.x, 1.0,
            );
            let p = Vector3::from(p);
            let d = Vector3::from(d) * 1e-2;
            let length = |f: &dyn Fn(f64) -> Vector3<f64>| -> f64 {
                let n = 200;
                let h = 1.0 / n as f64;
                (0..n).map(|k| {
                    let t = (k as f64 + 0.5) * h;
                    let x = f(t);
                    let v = (f(t + 1e-6) - f(t - 1e-6)) / 2e-6;
                    (v.transpose() * metric(&x) * v)[0].sqrt() * h
                }).sum()
            };
            let before = length(&|t| p + d * t);
            let after = length(&|t| nil_rotation(omega, &(p + d * t)));
            prop_assert!((before - after).abs() < 1e-8);
        }
    }
}
