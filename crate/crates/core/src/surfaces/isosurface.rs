//! Zero-set extraction by marching tetrahedra.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use super::mesh::TriMesh;
use crate::error::{GeomError, Result};

/// Axis-aligned sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsoBox {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl IsoBox {
    pub fn new(lo: Vector3<f64>, hi: Vector3<f64>) -> Result<Self> {
        if lo.iter().chain(hi.iter()).any(|c| !c.is_finite()) || (0..3).any(|k| hi[k] <= lo[k]) {
            return Err(GeomError::Invalid(format!(
                "box corners {lo:?} and {hi:?} do not span a box"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(half: f64) -> Self {
        Self {
            lo: Vector3::repeat(-half),
            hi: Vector3::repeat(half),
        }
    }
}

pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct Isosurface {
    pub mesh: TriMesh,
    /// Grid spacing along each axis.
    pub spacing: Vector3<f64>,
    /// Set when the residual never changes sign on the grid.
    pub notice: Option<String>,
}

// Kuhn triangulation of the unit cube around its main diagonal. Corner `c`
// sits at offset `(c & 1, (c >> 1) & 1, c >> 2)`; neighbouring cubes split
// their shared faces the same way.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

type EdgeKey = (usize, usize);

struct Slab {
    tris: Vec<[EdgeKey; 3]>,
    points: HashMap<EdgeKey, Vector3<f64>>,
}

/// Triangulates `{f = 0}` inside `bounds` on a `resolution³` cell grid.
///
/// Non-finite samples are treated as outside the domain and the tetrahedra
/// touching them are skipped. Faces are oriented with normals pointing
/// towards positive values.
pub fn isosurface_mesh<F>(f: F, bounds: &IsoBox, resolution: usize) -> Result<Isosurface>
where
    F: Fn(&Vector3<f64>) -> f64 + Sync,
{
    if resolution < MIN_RESOLUTION {
        return Err(GeomError::OutOfRange {
            what: "resolution",
            value: resolution as f64,
            range: format!("[{MIN_RESOLUTION}, ∞)"),
        });
    }
    let n = resolution;
    let m = n + 1;
    let h = (bounds.hi - bounds.lo) / n as f64;
    let node = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    let pos = |idx: usize| {
        let (i, j, k) = (idx % m, (idx / m) % m, idx / (m * m));
        bounds.lo + Vector3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z)
    };
    let values: Vec<f64> = (0..m * m * m).into_par_iter().map(|idx| f(&pos(idx))).collect();

    let finite = values.iter().filter(|v| v.is_finite());
    let has_pos = finite.clone().any(|&v| v > 0.0);
    let has_neg = finite.clone().any(|&v| v <= 0.0);
    if !(has_pos && has_neg) {
        return Ok(Isosurface {
            mesh: TriMesh::default(),
            spacing: h,
            notice: Some("residual does not change sign on the sampling grid".into()),
        });
    }

    let slabs: Vec<Slab> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut slab = Slab {
                tris: Vec::new(),
                points: HashMap::new(),
            };
            for j in 0..n {
                for i in 0..n {
                    let corners: [usize; 8] = std::array::from_fn(|c| {
                        node(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))
                    });
                    for tet in &TETS {
                        let ids = tet.map(|c| corners[c]);
                        march_tet(&ids, &values, &pos, &f, &mut slab);
                    }
                }
            }
            slab
        })
        .collect();

    let mut index: HashMap<EdgeKey, usize> = HashMap::new();
    let mut mesh = TriMesh::default();
    for slab in slabs {
        for tri in slab.tris {
            let face = tri.map(|key| {
                *index.entry(key).or_insert_with(|| {
                    mesh.vertices.push(slab.points[&key]);
                    mesh.vertices.len() - 1
                })
            });
            mesh.faces.push(face);
        }
    }
    let cell_face = h.x.min(h.y).min(h.z).powi(2);
    let mesh = mesh.without_degenerate_faces(1e-12 * cell_face);
    Ok(Isosurface {
        notice: mesh.is_empty().then(|| "no zero crossing produced a face".into()),
        mesh,
        spacing: h,
    })
}

/// Locates the zero of `f` on the segment `a`-`b`, given `fa` and `fb` of opposite sign.
fn edge_root<F>(f: &F, a: Vector3<f64>, b: Vector3<f64>, fa: f64, fb: f64) -> Vector3<f64>
where
    F: Fn(&Vector3<f64>) -> f64,
{
    let linear = a + (b - a) * (fa / (fa - fb));
    let (mut t0, mut t1, mut f0, mut f1) = (0.0, 1.0, fa, fb);
    let mut side = 0i8;
    for _ in 0..60 {
        let t = (t0 * f1 - t1 * f0) / (f1 - f0);
        let ft = f(&(a + (b - a) * t));
        if !ft.is_finite() {
            return linear;
        }
        if ft == 0.0 || (t1 - t0) < 1e-13 {
            return a + (b - a) * t;
        }
        if (ft > 0.0) == (f0 > 0.0) {
            t0 = t;
            f0 = ft;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        } else {
            t1 = t;
            f1 = ft;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
    }
    a + (b - a) * (t0 * f1 - t1 * f0) / (f1 - f0)
}

fn march_tet<P, F>(ids: &[usize; 4], values: &[f64], pos: &P, f: &F, slab: &mut Slab)
where
    P: Fn(usize) -> Vector3<f64>,
    F: Fn(&Vector3<f64>) -> f64,
{
    let v = ids.map(|i| values[i]);
    if v.iter().any(|x| !x.is_finite()) {
        return;
    }
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..4).partition(|&c| v[c] > 0.0);
    if inside.is_empty() || outside.is_empty() {
        return;
    }
    let mut edge = |a: usize, b: usize| -> EdgeKey {
        let key = (ids[a].min(ids[b]), ids[a].max(ids[b]));
        slab.points.entry(key).or_insert_with(|| {
            let (lo, hi) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
            edge_root(f, pos(ids[lo]), pos(ids[hi]), v[lo], v[hi])
        });
        key
    };
    let mut loops: Vec<[EdgeKey; 3]> = Vec::with_capacity(2);
    match (inside.len(), outside.len()) {
        (1, 3) => loops.push([edge(inside[0], outside[0]), edge(inside[0], outside[1]), edge(inside[0], outside[2])]),
        (3, 1) => loops.push([edge(outside[0], inside[0]), edge(outside[0], inside[1]), edge(outside[0], inside[2])]),
        _ => {
            let (p0, p1, n0, n1) = (inside[0], inside[1], outside[0], outside[1]);
            let quad = [edge(p0, n0), edge(p0, n1), edge(p1, n1), edge(p1, n0)];
            loops.push([quad[0], quad[1], quad[2]]);
            loops.push([quad[0], quad[2], quad[3]]);
        }
    }
    let centroid = |cs: &[usize]| cs.iter().map(|&c| pos(ids[c])).sum::<Vector3<f64>>() / cs.len() as f64;
    let uphill = centroid(&inside) - centroid(&outside);
    for mut tri in loops {
        let [a, b, c] = tri.map(|k| slab.points[&k]);
        if (b - a).cross(&(c - a)).dot(&uphill) < 0.0 {
            tri.swap(1, 2);
        }
        slab.tris.push(tri);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_sphere(p: &Vector3<f64>) -> f64 {
        p.norm_squared() - 1.0
    }

    #[test]
    fn sphere_area() {
        let iso = isosurface_mesh(unit_sphere, &IsoBox::cube(2.0), 64).unwrap();
        assert!(iso.notice.is_none());
        let area = iso.mesh.area();
        assert!((area / (4.0 * PI) - 1.0).abs() < 0.02, "area {area}");
        iso.mesh.validate().unwrap();
    }

    #[test]
    fn vertex_residuals_within_interpolation_bound() {
        let iso = isosurface_mesh(unit_sphere, &IsoBox::cube(2.0), 32).unwrap();
        // Linear interpolation along an edge of length h errs by at most
        // h² max|f''| / 8, and f'' = 2 along every axis and diagonal direction
        // of unit length; a Kuhn diagonal has length up to √3 h.
        let h = iso.spacing.max();
        let bound = 3.0 * h * h * 2.0 / 8.0;
        for v in &iso.mesh.vertices {
            assert!(unit_sphere(v).abs() <= 10.0 * bound);
        }
    }

    #[test]
    fn watertight_and_outward() {
        let iso = isosurface_mesh(unit_sphere, &IsoBox::cube(1.5), 16).unwrap();
        let mesh = &iso.mesh;
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for f in &mesh.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        // Every edge is traversed once in each direction.
        assert!(edges.values().all(|&c| c == 0));
        let signed_volume: f64 = mesh
            .faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| mesh.vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        // Normals point towards positive values, i.e. outwards here.
        let ball = 4.0 * PI / 3.0;
        assert!(signed_volume > 0.95 * ball && signed_volume < ball, "{signed_volume}");
    }

    #[test]
    fn constant_residual_gives_empty_mesh() {
        let iso = isosurface_mesh(|_| 1.0, &IsoBox::cube(1.0), 8).unwrap();
        assert!(iso.mesh.is_empty());
        assert!(iso.notice.is_some());
    }

    #[test]
    fn rejects_coarse_grid_and_bad_box() {
        assert!(isosurface_mesh(unit_sphere, &IsoBox::cube(1.0), 7).is_err());
        assert!(IsoBox::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn skips_undefined_samples() {
        let f = |p: &Vector3<f64>| if p.x < 0.0 { f64::NAN } else { unit_sphere(p) };
        let iso = isosurface_mesh(f, &IsoBox::cube(2.0), 32).unwrap();
        assert!(!iso.mesh.is_empty());
        assert!(iso.mesh.vertices.iter().all(|v| v.x >= -1e-12));
    }
}
