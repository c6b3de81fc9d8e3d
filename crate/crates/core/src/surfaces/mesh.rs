//! Triangle meshes with OBJ and CSV export.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{GeomError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn corners(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Largest distance of a vertex from `p`.
    pub fn radius_about(&self, p: &Vector3<f64>) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - p).norm())
            .fold(0.0, f64::max)
    }

    /// Checks index ranges and finiteness.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(GeomError::Invalid(format!("non-finite mesh vertex {v:?}")));
        }
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(GeomError::Invalid(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Faces with area at most `tol`.
    pub fn degenerate_faces(&self, tol: f64) -> Vec<usize> {
        (0..self.faces.len())
            .filter(|&f| self.face_area(f) <= tol)
            .collect()
    }

    /// Drops faces with area at most `tol`.
    pub fn without_degenerate_faces(mut self, tol: f64) -> Self {
        let keep: Vec<bool> = (0..self.faces.len()).map(|f| self.face_area(f) > tol).collect();
        let mut k = keep.iter();
        self.faces.retain(|_| *k.next().unwrap());
        self
    }

    /// Wavefront OBJ: `v x y z` lines followed by 1-based `f i j k` lines.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(40 * (self.vertices.len() + self.faces.len()));
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.11e} {:.11e} {:.11e}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn from_obj(text: &str) -> Result<Self> {
        let mut mesh = TriMesh::default();
        for (no, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = || GeomError::Invalid(format!("malformed OBJ line {}: `{line}`", no + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                    if c.len() < 3 {
                        return Err(bad());
                    }
                    mesh.vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(bad());
                    }
                    mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    /// Vertex dump with an `x,y,z` header.
    pub fn vertices_csv(&self) -> String {
        let mut out = String::from("x,y,z\n");
        for v in &self.vertices {
            let _ = writeln!(out, "{:.11e},{:.11e},{:.11e}", v.x, v.y, v.z);
        }
        out
    }
}

/// Whether the closed segment `p q` meets triangle `t`, by the
/// Möller–Trumbore test.
pub fn segment_hits_triangle(p: &Vector3<f64>, q: &Vector3<f64>, t: &[Vector3<f64>; 3]) -> bool {
    let d = q - p;
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let h = d.cross(&e2);
    let a = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * d.norm();
    if a.abs() <= 1e-14 * scale {
        return false;
    }
    let f = 1.0 / a;
    let s = p - t[0];
    let u = f * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = s.cross(&e1);
    let v = f * d.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    (0.0..=1.0).contains(&(f * e2.dot(&qv)))
}

/// Whether two triangles with no shared vertex intersect.
pub fn triangles_intersect(a: &[Vector3<f64>; 3], b: &[Vector3<f64>; 3]) -> bool {
    let edges = [(0, 1), (1, 2), (2, 0)];
    edges.iter().any(|&(i, j)| segment_hits_triangle(&a[i], &a[j], b))
        || edges.iter().any(|&(i, j)| segment_hits_triangle(&b[i], &b[j], a))
}
