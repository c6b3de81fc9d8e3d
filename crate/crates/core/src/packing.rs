//! Lattice-like geodesic ball packings generated by discrete isometry groups.
//!
//! Groups act on S²×R through `(A × R, r)`: a linear part `A` on the unit base
//! sphere, a fibre sign `R = ±1` and a fibre translation `r`. Points are
//! written as `(P, p)` with `P` on the base sphere and `p` the fibre
//! coordinate; the model point is `e^p · P`.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::geodesics::{check_sphere_radius, exp_origin, model_volume_density, GeodesicParams};
use crate::model_core::{HPoint, SpaceId};
use crate::numerics::{gauss_legendre_on, golden_max, nelder_mead, wrap_angle};

/// Tolerance for identifying orbit points and stabilizing elements.
pub const POINT_TOL: f64 = 1e-9;
/// Tolerance for counting tangent balls.
pub const KISSING_TOL: f64 = 1e-6;
pub const DEFAULT_WORD_BUDGET: usize = 200_000;
pub const DEFAULT_BALL_RESOLUTION: usize = 24;
pub const DEFAULT_SAMPLES: usize = 1 << 20;

/// A point of S²×R split into base point and fibre coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductPoint {
    pub base: Vector3<f64>,
    pub fibre: f64,
}

impl ProductPoint {
    pub fn new(base: Vector3<f64>, fibre: f64) -> Result<Self> {
        let n = base.norm();
        if !(n > 0.0) || !n.is_finite() || !fibre.is_finite() {
            return Err(GeomError::Invalid(format!("no base point in direction {base:?}")));
        }
        Ok(Self { base: base / n, fibre })
    }

    pub fn from_hpoint(p: &HPoint) -> Result<Self> {
        let v = p.to_affine().filter(|v| v.norm() > 0.0).ok_or(GeomError::ImproperPoint {
            space: SpaceId::S2xR,
            coords: p.coords,
        })?;
        let n = v.norm();
        Self::new(v / n, n.ln())
    }

    pub fn to_hpoint(&self) -> HPoint {
        HPoint::from_affine(&(self.base * self.fibre.exp()))
    }

    /// Product-metric distance `√(ω² + Δt²)`.
    pub fn distance(&self, other: &Self) -> f64 {
        let omega = self.base.cross(&other.base).norm().atan2(self.base.dot(&other.base));
        omega.hypot(other.fibre - self.fibre)
    }

    fn same(&self, other: &Self) -> bool {
        (self.base - other.base).norm() <= POINT_TOL && (self.fibre - other.fibre).abs() <= POINT_TOL
    }
}

/// Isometry `(A × R, r)` of S²×R with an absolute fibre translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductIsometry {
    pub linear: Matrix3<f64>,
    pub fibre_sign: f64,
    pub shift: f64,
}

impl ProductIsometry {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            fibre_sign: 1.0,
            shift: 0.0,
        }
    }

    /// `self` followed by `next`: `(A₁A₂ × R₁R₂, r₁R₂ + r₂)`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            linear: self.linear * next.linear,
            fibre_sign: self.fibre_sign * next.fibre_sign,
            shift: self.shift * next.fibre_sign + next.shift,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            linear: self.linear.transpose(),
            fibre_sign: self.fibre_sign,
            shift: -self.shift * self.fibre_sign,
        }
    }

    pub fn apply(&self, p: &ProductPoint) -> ProductPoint {
        let b = (p.base.transpose() * self.linear).transpose();
        ProductPoint {
            base: b / b.norm(),
            fibre: p.fibre * self.fibre_sign + self.shift,
        }
    }

    fn key(&self, period: f64) -> (Vec<i64>, i8, i64) {
        let q = |x: f64| (x * 1e7).round() as i64;
        (
            self.linear.iter().map(|&x| q(x)).collect(),
            self.fibre_sign as i8,
            q(self.shift / period),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub name: String,
    /// Orthogonal action on the base sphere, applied to row vectors.
    pub linear: Matrix3<f64>,
    pub fibre_sign: f64,
    /// Translation as a fraction of the lattice period.
    pub translation: f64,
}

/// A space group of S²×R given by generators.
///
/// `lattice_period` is the generator of the pure fibre translations;
/// `relators` list words (generator indices) whose linear part is trivial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceGroupSpec {
    pub label: String,
    pub space: SpaceId,
    pub generators: Vec<Generator>,
    pub lattice_period: f64,
    pub relators: Vec<Vec<usize>>,
}

fn reflection(normal: Vector3<f64>) -> Matrix3<f64> {
    let n = normal.normalize();
    Matrix3::identity() - 2.0 * n * n.transpose()
}

/// Corners of the fundamental triangle of the `(2, 2, q)` reflection group:
/// `A₁`, `A₂` on the equator and the pole `A₃` where the angle is `π/q`.
pub fn triangle_corners_4q(q: u32) -> [Vector3<f64>; 3] {
    let a = PI / q as f64;
    [Vector3::new(a.cos(), a.sin(), 0.0), Vector3::x(), Vector3::z()]
}

/// The family 4q.I.2: reflections in the sides of the `(2, 2, q)` triangle,
/// the equatorial one combined with a half-period fibre glide.
///
/// `A₂` is the base point of the model origin.
#[allow(non_snake_case)]
pub fn s2xr_group_4q_I_2(q: u32, lattice_period: f64) -> Result<SpaceGroupSpec> {
    if q < 2 {
        return Err(GeomError::OutOfRange {
            what: "q",
            value: q as f64,
            range: "[2, ∞)".into(),
        });
    }
    check_period(lattice_period)?;
    let a = PI / q as f64;
    let gen = |name: &str, normal: Vector3<f64>, translation: f64| Generator {
        name: name.into(),
        linear: reflection(normal),
        fibre_sign: 1.0,
        translation,
    };
    Ok(SpaceGroupSpec {
        label: format!("4q.I.2 (q = {q})"),
        space: SpaceId::S2xR,
        generators: vec![
            gen("g1", Vector3::new(a.sin(), -a.cos(), 0.0), 0.0),
            gen("g2", Vector3::y(), 0.0),
            gen("g3", Vector3::z(), 0.5),
        ],
        lattice_period,
        relators: vec![
            vec![0, 0],
            vec![1, 1],
            vec![2, 2],
            vec![0, 2, 0, 2],
            vec![1, 2, 1, 2],
            [0, 1].repeat(q as usize),
        ],
    })
}

/// Pure fibre translations by multiples of `period`.
pub fn fibre_lattice(period: f64) -> Result<SpaceGroupSpec> {
    check_period(period)?;
    Ok(SpaceGroupSpec {
        label: "fibre lattice".into(),
        space: SpaceId::S2xR,
        generators: vec![Generator {
            name: "t".into(),
            linear: Matrix3::identity(),
            fibre_sign: 1.0,
            translation: 1.0,
        }],
        lattice_period: period,
        relators: vec![],
    })
}

/// The group with no generators.
pub fn trivial_group() -> SpaceGroupSpec {
    SpaceGroupSpec {
        label: "trivial".into(),
        space: SpaceId::S2xR,
        generators: vec![],
        lattice_period: 1.0,
        relators: vec![],
    }
}

fn check_period(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(GeomError::OutOfRange {
            what: "lattice period",
            value: tau,
            range: "(0, ∞)".into(),
        })
    }
}

impl SpaceGroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.space != SpaceId::S2xR {
            return Err(GeomError::Unsupported("space groups", self.space));
        }
        check_period(self.lattice_period)?;
        for g in &self.generators {
            let a = &g.linear;
            if (a * a.transpose() - Matrix3::identity()).amax() > 1e-9
                || g.fibre_sign.abs() != 1.0
                || !g.translation.is_finite()
            {
                return Err(GeomError::Invalid(format!("generator {} is not an isometry", g.name)));
            }
        }
        Ok(())
    }

    pub fn with_period(&self, lattice_period: f64) -> Self {
        Self {
            lattice_period,
            ..self.clone()
        }
    }

    pub fn isometry(&self, g: usize) -> ProductIsometry {
        let g = &self.generators[g];
        ProductIsometry {
            linear: g.linear,
            fibre_sign: g.fibre_sign,
            shift: g.translation * self.lattice_period,
        }
    }

    pub fn word(&self, word: &[usize]) -> ProductIsometry {
        word.iter()
            .fold(ProductIsometry::identity(), |acc, &g| acc.then(&self.isometry(g)))
    }

    /// Linear parts closed under multiplication.
    pub fn point_group(&self) -> Result<Vec<Matrix3<f64>>> {
        let key = |m: &Matrix3<f64>| m.iter().map(|&x| (x * 1e7).round() as i64).collect::<Vec<_>>();
        let mut seen = HashMap::new();
        let mut out = vec![Matrix3::identity()];
        seen.insert(key(&out[0]), ());
        let mut i = 0;
        while i < out.len() {
            for g in &self.generators {
                let m = out[i] * g.linear;
                if seen.insert(key(&m), ()).is_none() {
                    out.push(m);
                    if out.len() > 10_000 {
                        return Err(GeomError::Invalid("linear parts do not generate a finite group".into()));
                    }
                }
            }
            i += 1;
        }
        Ok(out)
    }

    /// Checks that each relator has trivial linear part and a translation
    /// that is a whole number of lattice periods.
    pub fn frobenius_consistent(&self) -> bool {
        self.relators.iter().all(|w| {
            let g = self.word(w);
            let k = g.shift / self.lattice_period;
            (g.linear - Matrix3::identity()).amax() < 1e-9
                && g.fibre_sign == 1.0
                && (k - k.round()).abs() < 1e-9
        })
    }

    /// Conjugates by the isometry `(Q × 1, c)`.
    pub fn conjugated(&self, rotation: &Matrix3<f64>, shift: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.generators {
            g.linear = rotation.transpose() * g.linear * rotation;
            g.translation += shift * (1.0 - g.fibre_sign) / self.lattice_period;
        }
        out.label = format!("{} (conjugated)", self.label);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitPoint {
    pub point: HPoint,
    pub product: ProductPoint,
    pub word: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Orbit {
    pub kernel: HPoint,
    /// Distinct images within `bound`, the kernel first.
    pub points: Vec<OrbitPoint>,
    pub bound: f64,
    /// Words of the group elements fixing the kernel.
    pub stabilizer: Vec<String>,
    /// False when the word budget ran out before the bound was covered.
    pub complete: bool,
}

impl Orbit {
    pub fn stabilizer_order(&self) -> usize {
        self.stabilizer.len()
    }

    /// Whether the kernel is fixed by a non-trivial element.
    pub fn multiply_transitive(&self) -> bool {
        self.stabilizer.len() > 1
    }
}

fn word_name(spec: &SpaceGroupSpec, word: &[(usize, bool)]) -> String {
    if word.is_empty() {
        return "e".into();
    }
    word.iter()
        .map(|&(g, inv)| {
            let n = &spec.generators[g].name;
            if inv { format!("{n}^-1") } else { n.clone() }
        })
        .collect::<Vec<_>>()
        .join("·")
}

/// Images of `kernel` within distance `bound`, by breadth-first search over
/// group words.
pub fn orbit(spec: &SpaceGroupSpec, kernel: &HPoint, bound: f64, budget: usize) -> Result<Orbit> {
    spec.validate()?;
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(GeomError::OutOfRange {
            what: "orbit bound",
            value: bound,
            range: "(0, ∞)".into(),
        });
    }
    let k = ProductPoint::from_hpoint(kernel)?;
    let steps: Vec<(ProductIsometry, (usize, bool))> = (0..spec.generators.len())
        .flat_map(|g| {
            let iso = spec.isometry(g);
            [(iso, (g, false)), (iso.inverse(), (g, true))]
        })
        .collect();
    let reach = steps.iter().map(|(s, _)| s.shift.abs()).fold(0.0, f64::max);
    let prune = bound + 2.0 * k.fibre.abs() + 2.0 * reach;

    let mut seen: HashMap<_, ()> = HashMap::new();
    let mut queue: VecDeque<(ProductIsometry, Vec<(usize, bool)>)> = VecDeque::new();
    let id = ProductIsometry::identity();
    seen.insert(id.key(spec.lattice_period), ());
    queue.push_back((id, vec![]));
    let mut points = vec![OrbitPoint {
        point: kernel.normalized().unwrap_or(*kernel),
        product: k,
        word: "e".into(),
        distance: 0.0,
    }];
    let mut stabilizer = Vec::new();
    let mut visited = 0;
    let mut complete = true;
    while let Some((g, word)) = queue.pop_front() {
        visited += 1;
        let img = g.apply(&k);
        if img.same(&k) {
            stabilizer.push(word_name(spec, &word));
        } else {
            let d = k.distance(&img);
            if d <= bound && !points.iter().any(|p| p.product.same(&img)) {
                points.push(OrbitPoint {
                    point: img.to_hpoint(),
                    product: img,
                    word: word_name(spec, &word),
                    distance: d,
                });
            }
        }
        if visited >= budget {
            complete = queue.is_empty();
            break;
        }
        for (step, letter) in &steps {
            let h = g.then(step);
            if h.shift.abs() > prune {
                continue;
            }
            if seen.insert(h.key(spec.lattice_period), ()).is_none() {
                let mut w = word.clone();
                w.push(*letter);
                queue.push_back((h, w));
            }
        }
    }
    Ok(Orbit {
        kernel: kernel.normalized().unwrap_or(*kernel),
        points,
        bound,
        stabilizer,
        complete,
    })
}

/// Half the smallest distance from the kernel to an image it does not
/// coincide with.
///
/// A pure lattice translation moves the kernel by one period, so an orbit
/// bound of one period always contains the minimum.
pub fn max_inradius(spec: &SpaceGroupSpec, kernel: &HPoint) -> Result<f64> {
    let o = orbit(spec, kernel, spec.lattice_period * (1.0 + 1e-9) + 1e-12, DEFAULT_WORD_BUDGET)?;
    inradius_of(&o)
}

fn inradius_of(o: &Orbit) -> Result<f64> {
    if !o.complete {
        return Err(GeomError::Invalid("orbit word budget exhausted".into()));
    }
    o.points[1..]
        .iter()
        .map(|p| p.distance)
        .min_by(f64::total_cmp)
        .map(|d| 0.5 * d)
        .ok_or_else(|| GeomError::Degenerate("the kernel has no images besides itself".into()))
}

/// Geodesic ball volume: the Riemannian density integrated over the
/// exponential image of the polar parameter box `[0, r] × S²`, with the
/// Jacobian of the exponential map taken by central differences.
///
/// Gauss–Legendre in arc length and elevation, periodic trapezoid in azimuth;
/// `resolution` is the number of nodes per unit axis.
pub fn ball_volume(space: SpaceId, r: f64, resolution: usize) -> Result<f64> {
    check_sphere_radius(space, r)?;
    if space == SpaceId::SL2R && r >= std::f64::consts::FRAC_PI_2 {
        return Err(GeomError::OutOfRange {
            what: "ball radius",
            value: r,
            range: "[0, π/2)".into(),
        });
    }
    if resolution < 4 {
        return Err(GeomError::OutOfRange {
            what: "quadrature resolution",
            value: resolution as f64,
            range: "[4, ∞)".into(),
        });
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let n = resolution;
    let s_nodes = gauss_legendre_on(n, 0.0, r);
    let v_nodes = gauss_legendre_on(n, -PI / 2.0, PI / 2.0);
    let nu = 2 * n;
    let du = TAU / nu as f64;
    let at = |u: f64, v: f64, s: f64| -> Result<Vector3<f64>> {
        let p = exp_origin(&GeodesicParams::new(space, wrap_angle(u), v, s))?;
        p.to_affine()
            .ok_or(GeomError::ImproperPoint { space, coords: p.coords })
    };
    let hs = 1e-6 * r;
    let ha = 1e-6;
    let cells: Vec<(usize, usize)> = (0..nu).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let parts: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let u = -PI + (i as f64 + 0.5) * du;
            let (v, wv) = v_nodes[j];
            let mut acc = 0.0;
            for &(s, ws) in &s_nodes {
                let ds = (at(u, v, s + hs)? - at(u, v, s - hs)?) / (2.0 * hs);
                let du_ = (at(u + ha, v, s)? - at(u - ha, v, s)?) / (2.0 * ha);
                let dv = (at(u, v + ha, s)? - at(u, v - ha, s)?) / (2.0 * ha);
                let jac = Matrix3::from_columns(&[ds, du_, dv]).determinant().abs();
                acc += ws * jac * model_volume_density(space, &at(u, v, s)?);
            }
            Ok(acc * wv * du)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// Volume of the S²×R ball `{ω² + t² ≤ r²}` as a one-dimensional integral
/// `2π ∫ (1 − cos min(√(r² − t²), π)) dt`; valid for every `r ≥ 0`.
pub fn s2xr_ball_volume(r: f64) -> f64 {
    if !(r > 0.0) {
        return 0.0;
    }
    let cap = |t: f64| 1.0 - (r * r - t * t).max(0.0).sqrt().min(PI).cos();
    let (full, lo) = if r > PI {
        let t0 = (r * r - PI * PI).sqrt();
        (2.0 * 2.0 * t0, t0)
    } else {
        (0.0, 0.0)
    };
    let tail: f64 = gauss_legendre_on(64, lo, r).iter().map(|&(t, w)| w * cap(t)).sum();
    TAU * (full + 2.0 * tail)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CellVolume {
    /// Monte Carlo estimate.
    pub volume: f64,
    pub stderr: f64,
    pub samples: usize,
    /// `4π τ |Γ_K| / |Γ₀|`: one fibre period of the base sphere shared by
    /// the images per period.
    pub exact: f64,
}

fn slab_radius(spec: &SpaceGroupSpec) -> f64 {
    PI.hypot(0.5 * spec.lattice_period)
}

/// Orbit bound that contains every image closer than the kernel to a point
/// of the sampling slab.
pub fn cell_orbit_bound(spec: &SpaceGroupSpec) -> f64 {
    2.0 * slab_radius(spec) + 1e-9
}

fn exact_cell_volume(spec: &SpaceGroupSpec, stabilizer_order: usize) -> Result<f64> {
    let order = spec.point_group()?.len();
    Ok(4.0 * PI * spec.lattice_period * stabilizer_order as f64 / order as f64)
}

/// Volume of the Dirichlet–Voronoi cell of the kernel by stratified Monte
/// Carlo.
///
/// Samples fill one fibre period `S² × [p − τ/2, p + τ/2)` around the kernel,
/// uniform for the product measure. A sample counts towards the cell when
/// its nearest orbit point is the kernel or one of its lattice translates;
/// the slab volume times that fraction is the cell volume.
pub fn dv_cell_volume(spec: &SpaceGroupSpec, kernel: &HPoint, samples: usize, seed: u64) -> Result<CellVolume> {
    spec.validate()?;
    if spec.generators.is_empty() || !spec.generators.iter().any(|g| g.translation != 0.0) {
        return Err(GeomError::Invalid(
            "the group has no fibre translations, so the cell is unbounded".into(),
        ));
    }
    let o = orbit(spec, kernel, cell_orbit_bound(spec), DEFAULT_WORD_BUDGET)?;
    if !o.complete {
        return Err(GeomError::Invalid("orbit bound not covered within the word budget".into()));
    }
    let exact = exact_cell_volume(spec, o.stabilizer_order())?;
    let tau = spec.lattice_period;
    let k = o.points[0].product;
    let own: Vec<bool> = o
        .points
        .iter()
        .map(|p| {
            let m = (p.product.fibre - k.fibre) / tau;
            (p.product.base - k.base).norm() <= POINT_TOL && (m - m.round()).abs() <= POINT_TOL
        })
        .collect();
    let m = ((samples.max(1) as f64).cbrt().round() as usize).max(2);
    let hits: usize = (0..m)
        .into_par_iter()
        .map(|layer| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut count = 0;
            for i in 0..m {
                for j in 0..m {
                    let x = sample_in_stratum(&mut rng, m, i, j, layer, &k, tau);
                    if nearest(&o, &x).map_or(false, |n| own[n]) {
                        count += 1;
                    }
                }
            }
            count
        })
        .sum();
    let n = m * m * m;
    let f = hits as f64 / n as f64;
    let slab = 4.0 * PI * tau;
    Ok(CellVolume {
        volume: slab * f,
        stderr: slab * (f * (1.0 - f) / n as f64).sqrt(),
        samples: n,
        exact,
    })
}

fn sample_in_stratum(rng: &mut ChaCha8Rng, m: usize, i: usize, j: usize, layer: usize, k: &ProductPoint, tau: f64) -> ProductPoint {
    let mf = m as f64;
    let c = 2.0 * (i as f64 + rng.random::<f64>()) / mf - 1.0;
    let phi = TAU * (j as f64 + rng.random::<f64>()) / mf;
    let t = k.fibre + tau * ((layer as f64 + rng.random::<f64>()) / mf - 0.5);
    let sc = (1.0 - c * c).max(0.0).sqrt();
    ProductPoint {
        base: Vector3::new(sc * phi.cos(), sc * phi.sin(), c),
        fibre: t,
    }
}

fn nearest(o: &Orbit, x: &ProductPoint) -> Option<usize> {
    o.points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.product.distance(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Sampled points of the cell with their distance to the kernel and the
/// smallest distance to another orbit point, for independent checks.
pub fn cell_sample_points(spec: &SpaceGroupSpec, kernel: &HPoint, count: usize, seed: u64) -> Result<Vec<HPoint>> {
    let o = orbit(spec, kernel, cell_orbit_bound(spec), DEFAULT_WORD_BUDGET)?;
    let k = o.points[0].product;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 1000 * count.max(1) {
        tries += 1;
        let x = sample_in_stratum(&mut rng, 1, 0, 0, 0, &k, spec.lattice_period);
        if nearest(&o, &x) == Some(0) {
            out.push(x.to_hpoint());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct PackingResult {
    pub group: String,
    pub kernel: HPoint,
    pub kernel_base: Vector3<f64>,
    pub kernel_fibre: f64,
    pub lattice_period: f64,
    pub rho: f64,
    pub ball_volume: f64,
    pub cell_volume: f64,
    pub cell_volume_stderr: f64,
    pub cell_volume_exact: f64,
    pub density: f64,
    pub density_exact: f64,
    pub kissing: usize,
    pub stabilizer_order: usize,
    pub samples: usize,
}

impl PackingResult {
    /// Smallest kernel-to-image distance among non-stabilizing elements
    /// within `bound`, recomputed from a fresh orbit.
    pub fn min_image_distance(&self, spec: &SpaceGroupSpec, bound: f64) -> Result<f64> {
        let o = orbit(spec, &self.kernel, bound, DEFAULT_WORD_BUDGET)?;
        Ok(o.points[1..].iter().map(|p| p.distance).fold(f64::INFINITY, f64::min))
    }
}

/// Packing of balls of the maximal radius centred on the orbit of `kernel`.
pub fn density(spec: &SpaceGroupSpec, kernel: &HPoint, samples: usize, seed: u64) -> Result<PackingResult> {
    let o = orbit(spec, kernel, spec.lattice_period * (1.0 + 1e-9) + 1e-12, DEFAULT_WORD_BUDGET)?;
    let rho = inradius_of(&o)?;
    let kissing = o.points[1..]
        .iter()
        .filter(|p| (p.distance - 2.0 * rho).abs() <= KISSING_TOL)
        .count();
    let ball = if rho <= PI {
        ball_volume(spec.space, rho, DEFAULT_BALL_RESOLUTION)?
    } else {
        s2xr_ball_volume(rho)
    };
    let cell = dv_cell_volume(spec, kernel, samples, seed)?;
    let k = ProductPoint::from_hpoint(kernel)?;
    Ok(PackingResult {
        group: spec.label.clone(),
        kernel: kernel.normalized().unwrap_or(*kernel),
        kernel_base: k.base,
        kernel_fibre: k.fibre,
        lattice_period: spec.lattice_period,
        rho,
        ball_volume: ball,
        cell_volume: cell.volume,
        cell_volume_stderr: cell.stderr,
        cell_volume_exact: cell.exact,
        density: ball / cell.volume,
        density_exact: ball / cell.exact,
        kissing,
        stabilizer_order: o.stabilizer_order(),
        samples: cell.samples,
    })
}

/// Inradius, stabilizer order and density from the exact cell volume and the
/// closed-form ball volume; cheap enough for optimization loops.
pub fn density_exact(spec: &SpaceGroupSpec, kernel: &HPoint) -> Result<(f64, usize, f64)> {
    let o = orbit(spec, kernel, spec.lattice_period * (1.0 + 1e-9) + 1e-12, DEFAULT_WORD_BUDGET)?;
    let rho = inradius_of(&o)?;
    let cell = exact_cell_volume(spec, o.stabilizer_order())?;
    Ok((rho, o.stabilizer_order(), s2xr_ball_volume(rho) / cell))
}

/// Search domain for the kernel: the simplex spanned by `corners`, mapped
/// to S²×R by normalizing the weighted base points and averaging fibres.
#[derive(Debug, Clone, Serialize)]
pub struct KernelRegion {
    pub corners: Vec<ProductPoint>,
}

impl KernelRegion {
    pub fn new(corners: Vec<ProductPoint>) -> Result<Self> {
        if corners.is_empty() || corners.len() > 4 {
            return Err(GeomError::Invalid(format!(
                "a kernel region needs 1 to 4 corners, got {}",
                corners.len()
            )));
        }
        Ok(Self { corners })
    }

    pub fn dimension(&self) -> usize {
        self.corners.len() - 1
    }

    /// Point for the free weights `w₁..w_d`; `w₀ = 1 − Σ wᵢ`.
    pub fn point(&self, w: &[f64]) -> Option<ProductPoint> {
        let w0 = 1.0 - w.iter().sum::<f64>();
        let weights: Vec<f64> = std::iter::once(w0).chain(w.iter().copied()).collect();
        if weights.iter().any(|&x| x < -1e-12) {
            return None;
        }
        let base: Vector3<f64> = self.corners.iter().zip(&weights).map(|(c, &x)| c.base * x).sum();
        let fibre = self.corners.iter().zip(&weights).map(|(c, &x)| c.fibre * x).sum();
        ProductPoint::new(base, fibre).ok()
    }

    fn grid(&self, res: usize) -> Vec<Vec<f64>> {
        let d = self.dimension();
        let mut out = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            if idx.iter().sum::<usize>() <= res {
                out.push(idx.iter().map(|&i| i as f64 / res as f64).collect());
            }
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] <= res {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Grid subdivisions per region edge.
    pub grid: usize,
    /// Search interval for the lattice period; `None` keeps it fixed.
    /// The default stops at 2π: for the pole kernel of 4q.I.2 longer periods
    /// open a second branch whose balls approach radius π.
    pub period_range: Option<(f64, f64)>,
    pub samples: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            grid: 16,
            period_range: Some((0.5, TAU)),
            samples: DEFAULT_SAMPLES,
            seed: 1,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub weights: Vec<f64>,
    pub lattice_period: f64,
    pub rho: f64,
    pub density: f64,
    /// False for points of a smaller stratum, which are skipped.
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Optimized {
    pub best: PackingResult,
    pub weights: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let d = trace.first().map_or(0, |r| r.weights.len());
    let mut out = String::new();
    for i in 0..d {
        let _ = write!(out, "w{},", i + 1);
    }
    out.push_str("lattice_period,rho,density,admissible\n");
    for r in trace {
        for w in &r.weights {
            let _ = write!(out, "{w:.11e},");
        }
        let _ = writeln!(out, "{:.11e},{:.11e},{:.11e},{}", r.lattice_period, r.rho, r.density, r.admissible);
    }
    out
}

/// Best lattice period for a fixed kernel: a coarse scan, then golden
/// section around the best sample.
fn best_period(spec: &SpaceGroupSpec, k: &HPoint, range: Option<(f64, f64)>) -> Option<(f64, f64, usize, f64)> {
    let eval = |tau: f64| density_exact(&spec.with_period(tau), k).ok();
    let Some((lo, hi)) = range else {
        let (rho, st, d) = eval(spec.lattice_period)?;
        return Some((spec.lattice_period, rho, st, d));
    };
    let n = 48;
    let taus: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = taus.iter().map(|&t| eval(t).map_or(f64::NEG_INFINITY, |r| r.2)).collect();
    let i = (0..=n).max_by(|&a, &b| vals[a].total_cmp(&vals[b]))?;
    let (a, b) = (taus[i.saturating_sub(1)], taus[(i + 1).min(n)]);
    let (tau, _) = golden_max(|t| eval(t).map_or(f64::NEG_INFINITY, |r| r.2), a, b, 1e-11);
    let (rho, st, d) = eval(tau)?;
    Some((tau, rho, st, d))
}

/// Maximizes the packing density over kernels in `region` and, when
/// requested, the lattice period.
///
/// Kernels whose stabilizer is larger than at the region's centre belong to
/// a lower-dimensional stratum and are skipped; search those separately with
/// a smaller region.
pub fn optimize_kernel(spec: &SpaceGroupSpec, region: &KernelRegion, opts: &OptimizeOptions) -> Result<Optimized> {
    spec.validate()?;
    let d = region.dimension();
    let centre = vec![1.0 / (d + 1) as f64; d];
    let centre_point = region
        .point(&centre)
        .ok_or_else(|| GeomError::Invalid("kernel region is degenerate".into()))?;
    let generic = orbit(spec, &centre_point.to_hpoint(), spec.lattice_period, DEFAULT_WORD_BUDGET)?.stabilizer_order();

    let evaluate = |w: &[f64]| -> TraceRow {
        let miss = TraceRow {
            weights: w.to_vec(),
            lattice_period: f64::NAN,
            rho: f64::NAN,
            density: f64::NEG_INFINITY,
            admissible: false,
        };
        let Some(p) = region.point(w) else { return miss };
        match best_period(spec, &p.to_hpoint(), opts.period_range) {
            Some((tau, rho, st, dens)) if st == generic => TraceRow {
                weights: w.to_vec(),
                lattice_period: tau,
                rho,
                density: dens,
                admissible: true,
            },
            _ => miss,
        }
    };

    let grid = if d == 0 { vec![vec![]] } else { region.grid(opts.grid.max(1)) };
    let mut trace: Vec<TraceRow> = grid.par_iter().map(|w| evaluate(w)).collect();
    let start = trace
        .iter()
        .filter(|r| r.admissible)
        .max_by(|a, b| a.density.total_cmp(&b.density))
        .cloned()
        .ok_or_else(|| GeomError::Invalid("no admissible kernel in the region".into()))?;

    let mut best = start.clone();
    if d > 0 {
        let step = vec![0.5 / opts.grid.max(1) as f64; d];
        let mut local = Vec::new();
        let nm = nelder_mead(
            |w| {
                let r = evaluate(w);
                let v = if r.admissible { -r.density } else { 1.0 };
                local.push(r);
                v
            },
            &start.weights,
            &step,
            1e-14,
            1e-10,
            opts.max_iter,
        );
        let r = evaluate(&nm.x);
        if r.admissible && r.density > best.density {
            best = r;
        }
        trace.extend(local);
    }

    let k = region.point(&best.weights).expect("admissible point").to_hpoint();
    let result = density(&spec.with_period(best.lattice_period), &k, opts.samples, opts.seed)?;
    Ok(Optimized {
        best: result,
        weights: best.weights,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CASE1_VOLUME: f64 = 13.74539472;
    const CASE2_VOLUME: f64 = 20.00238509;
    const CASE2_RADIUS: f64 = 1.81379936;

    fn case2_period() -> f64 {
        TAU / 3f64.sqrt()
    }

    fn pp(b: Vector3<f64>, t: f64) -> HPoint {
        ProductPoint::new(b, t).unwrap().to_hpoint()
    }

    // Independent oracle: the ball is {ω² + t² ≤ r²}, integrated by slices
    // of constant fibre height with the midpoint rule.
    fn sliced_ball_volume(r: f64, n: usize) -> f64 {
        let h = 2.0 * r / n as f64;
        (0..n)
            .map(|i| {
                let t = -r + (i as f64 + 0.5) * h;
                TAU * (1.0 - (r * r - t * t).sqrt().cos()) * h
            })
            .sum()
    }

    #[test]
    fn group_structure() {
        let g = s2xr_group_4q_I_2(2, 1.0).unwrap();
        assert_eq!(g.point_group().unwrap().len(), 8);
        assert_eq!(s2xr_group_4q_I_2(3, 1.0).unwrap().point_group().unwrap().len(), 12);
        assert_eq!(g.word(&[]).shift, 0.0);
        let sq = g.word(&[2, 2]);
        assert!((sq.linear - Matrix3::identity()).amax() < 1e-15);
        assert!((sq.shift - 1.0).abs() < 1e-15);
        assert!(g.frobenius_consistent());
        let mut bad = g.clone();
        bad.generators[2].translation = 0.3;
        assert!(!bad.frobenius_consistent());
        assert!(s2xr_group_4q_I_2(1, 1.0).is_err());
        assert!(s2xr_group_4q_I_2(2, -1.0).is_err());
    }

    #[test]
    fn composition_and_inverse() {
        let g = s2xr_group_4q_I_2(3, 2.0).unwrap();
        let a = g.word(&[0, 2, 1]);
        let p = ProductPoint::new(Vector3::new(0.3, -0.2, 0.9), 0.4).unwrap();
        let q = a.inverse().apply(&a.apply(&p));
        assert!(q.same(&p));
        let ab = g.isometry(0).then(&g.isometry(2));
        assert!(ab.apply(&p).same(&g.isometry(2).apply(&g.isometry(0).apply(&p))));
    }

    #[test]
    fn trivial_and_lattice_orbits() {
        let k = pp(Vector3::new(0.2, 0.5, 0.7), 0.3);
        let o = orbit(&trivial_group(), &k, 10.0, 1000).unwrap();
        assert_eq!(o.points.len(), 1);
        assert!(max_inradius(&trivial_group(), &k).is_err());
        let tau = 1.7;
        assert!((max_inradius(&fibre_lattice(tau).unwrap(), &k).unwrap() - tau / 2.0).abs() < 1e-12);
        let o = orbit(&fibre_lattice(tau).unwrap(), &k, 3.5, 1000).unwrap();
        assert_eq!(o.points.len(), 5);
        assert!(o.points.iter().all(|p| p.distance <= 3.5));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let g = s2xr_group_4q_I_2(2, 0.1).unwrap();
        let o = orbit(&g, &pp(Vector3::x(), 0.0), 50.0, 10).unwrap();
        assert!(!o.complete);
    }

    #[test]
    fn stabilizers() {
        let g = s2xr_group_4q_I_2(2, 1.0).unwrap();
        let [a1, a2, a3] = triangle_corners_4q(2);
        let generic = pp(Vector3::new(0.3, 0.4, 0.5), 0.0);
        assert_eq!(orbit(&g, &generic, 3.0, 10_000).unwrap().stabilizer_order(), 1);
        let mirror = pp(Vector3::new(0.3, 0.0, 0.5), 0.0);
        let o = orbit(&g, &mirror, 3.0, 10_000).unwrap();
        assert!(o.multiply_transitive());
        assert_eq!(o.stabilizer, vec!["e".to_string(), "g2".to_string()]);
        assert_eq!(orbit(&g, &pp(a2, 0.0), 3.0, 10_000).unwrap().stabilizer_order(), 2);
        assert_eq!(orbit(&g, &pp(a1, 0.0), 3.0, 10_000).unwrap().stabilizer_order(), 2);
        assert_eq!(orbit(&g, &pp(a3, 0.0), 3.0, 10_000).unwrap().stabilizer_order(), 4);
    }

    #[test]
    fn pole_orbit_is_on_the_axis() {
        let g = s2xr_group_4q_I_2(2, case2_period()).unwrap();
        let o = orbit(&g, &pp(Vector3::z(), 0.0), 12.0, 10_000).unwrap();
        assert!(o.points.len() > 5);
        for p in &o.points {
            let v = p.point.to_affine().unwrap();
            assert!(v.x.abs() < 1e-12 && v.y.abs() < 1e-12);
        }
        for (i, a) in o.points.iter().enumerate() {
            assert!(o.points[i + 1..].iter().all(|b| !a.product.same(&b.product)));
        }
    }

    #[test]
    fn orbit_distances_match_solver() {
        let g = s2xr_group_4q_I_2(3, 2.2).unwrap();
        let k = pp(Vector3::new(0.5, 0.1, 0.4), 0.2);
        let o = orbit(&g, &k, 4.0, 10_000).unwrap();
        for p in &o.points {
            let d = crate::geodesics::distance_value(SpaceId::S2xR, &k, &p.point).unwrap();
            assert!((d - p.distance).abs() < 1e-9);
            assert!(d <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn closed_form_ball_volume_matches_slices() {
        for r in [0.3, 1.0, FRAC_PI_2_, CASE2_RADIUS, 3.0] {
            let a = s2xr_ball_volume(r);
            let b = sliced_ball_volume(r, 200_000);
            assert!((a / b - 1.0).abs() < 1e-8, "{r}: {a} vs {b}");
        }
        // Beyond π the base disc covers the whole sphere.
        let r = 4.0;
        let t0 = (r * r - PI * PI).sqrt();
        assert!(s2xr_ball_volume(r) > 4.0 * PI * 2.0 * t0);
    }

    const FRAC_PI_2_: f64 = std::f64::consts::FRAC_PI_2;

    #[test]
    fn ball_volume_by_exponential_map() {
        let v1 = ball_volume(SpaceId::S2xR, FRAC_PI_2_, DEFAULT_BALL_RESOLUTION).unwrap();
        assert!((v1 / sliced_ball_volume(FRAC_PI_2_, 400_000) - 1.0).abs() < 1e-4);
        assert!((v1 / CASE1_VOLUME - 1.0).abs() < 1e-3);
        let v2 = ball_volume(SpaceId::S2xR, CASE2_RADIUS, DEFAULT_BALL_RESOLUTION).unwrap();
        assert!((v2 / CASE2_VOLUME - 1.0).abs() < 1e-3);
        // Euclidean fibre direction: H²×R balls are bigger than Euclidean ones.
        let h = ball_volume(SpaceId::H2xR, 1.0, 16).unwrap();
        assert!(h > 4.0 * PI / 3.0);
    }

    #[test]
    fn small_balls_are_euclidean() {
        let r = 1e-2;
        let euclid = 4.0 * PI / 3.0 * r * r * r;
        for space in [SpaceId::S2xR, SpaceId::H2xR, SpaceId::Nil, SpaceId::SL2R, SpaceId::Sol] {
            let v = ball_volume(space, r, 8).unwrap();
            assert!((v / euclid - 1.0).abs() < 1e-2, "{space:?}: {}", v / euclid);
        }
    }

    #[test]
    fn ball_volume_range() {
        assert!(ball_volume(SpaceId::S2xR, PI + 0.1, 8).is_err());
        assert!(ball_volume(SpaceId::S2xR, -1.0, 8).is_err());
        assert!(ball_volume(SpaceId::SL2R, 1.6, 8).is_err());
        assert!(ball_volume(SpaceId::S2xR, 1.0, 3).is_err());
        assert!(ball_volume(SpaceId::S2xR, 0.5, 8).unwrap() < ball_volume(SpaceId::S2xR, 1.0, 8).unwrap());
    }

    #[test]
    fn fibre_lattice_cell_is_a_slab() {
        let tau = 1.3;
        let c = dv_cell_volume(&fibre_lattice(tau).unwrap(), &pp(Vector3::x(), 0.0), 20_000, 3).unwrap();
        assert!((c.volume / (4.0 * PI * tau) - 1.0).abs() < 1e-2);
        assert!((c.exact - 4.0 * PI * tau).abs() < 1e-12);
        assert!(dv_cell_volume(&trivial_group(), &pp(Vector3::x(), 0.0), 100, 1).is_err());
    }

    #[test]
    fn case_one_packing() {
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let r = density(&g, &pp(Vector3::x(), 0.0), 1 << 18, 7).unwrap();
        assert!((r.rho - FRAC_PI_2_).abs() < 1e-12);
        assert!((r.ball_volume / CASE1_VOLUME - 1.0).abs() < 1e-3);
        assert!((r.density / 0.69634983 - 1.0).abs() < 1e-2);
        assert!((r.density_exact / 0.69634983 - 1.0).abs() < 1e-6);
        assert_eq!(r.stabilizer_order, 2);
    }

    #[test]
    fn case_two_packing() {
        let g = s2xr_group_4q_I_2(2, case2_period()).unwrap();
        let r = density(&g, &pp(Vector3::z(), 0.0), 1 << 18, 7).unwrap();
        assert!((r.rho - CASE2_RADIUS).abs() < 1e-4);
        assert!((r.ball_volume / CASE2_VOLUME - 1.0).abs() < 1e-3);
        assert!((r.density / 0.87757183 - 1.0).abs() < 1e-2);
        assert_eq!(r.kissing, 4);
        let cell = CASE2_VOLUME / 0.87757183;
        assert!((r.cell_volume / cell - 1.0).abs() < 1e-2);
        assert!((r.density - r.ball_volume / r.cell_volume).abs() < 1e-15);
        assert!(r.density > 0.0 && r.density <= 1.0);
        // Non-overlap certificate from a fresh, larger orbit.
        assert!(r.min_image_distance(&g, 4.0 * r.rho).unwrap() >= 2.0 * r.rho - 1e-9);
    }

    #[test]
    fn smaller_balls_are_sparser() {
        let v = |r: f64| ball_volume(SpaceId::S2xR, r, 12).unwrap();
        assert!(v(CASE2_RADIUS / 2.0) < v(CASE2_RADIUS));
    }

    #[test]
    fn monte_carlo_is_stable_under_doubling() {
        let g = s2xr_group_4q_I_2(2, 4.0).unwrap();
        let k = pp(Vector3::new(0.6, 0.2, 0.4), 0.1);
        let a = dv_cell_volume(&g, &k, 1 << 15, 11).unwrap();
        let b = dv_cell_volume(&g, &k, 1 << 16, 12).unwrap();
        let se = a.stderr.hypot(b.stderr);
        assert!((a.volume - b.volume).abs() <= 3.0 * se, "{} {} {se}", a.volume, b.volume);
        assert!((a.volume - a.exact).abs() <= 4.0 * a.stderr);
        // Same seed, same estimate.
        let c = dv_cell_volume(&g, &k, 1 << 15, 11).unwrap();
        assert_eq!(a.volume.to_bits(), c.volume.to_bits());
    }

    #[test]
    fn cell_points_are_nearest_to_the_kernel() {
        let g = s2xr_group_4q_I_2(2, 3.0).unwrap();
        let k = pp(Vector3::new(0.3, 0.5, 0.6), 0.2);
        let images = orbit(&g, &k, cell_orbit_bound(&g), DEFAULT_WORD_BUDGET).unwrap();
        for x in cell_sample_points(&g, &k, 30, 5).unwrap() {
            let dk = crate::geodesics::distance_value(SpaceId::S2xR, &x, &k).unwrap();
            for p in &images.points[1..] {
                let dp = crate::geodesics::distance_value(SpaceId::S2xR, &x, &p.point).unwrap();
                assert!(dk <= dp + 1e-9);
            }
        }
    }

    #[test]
    fn doubling_the_bound_keeps_the_inradius() {
        let g = s2xr_group_4q_I_2(3, 2.5).unwrap();
        let k = pp(Vector3::new(0.4, 0.3, 0.2), 0.0);
        let rho = max_inradius(&g, &k).unwrap();
        let o = orbit(&g, &k, 8.0 * rho, DEFAULT_WORD_BUDGET).unwrap();
        assert!((inradius_of(&o).unwrap() - rho).abs() < 1e-12);
    }

    #[test]
    fn optimum_on_a2_a3_is_a2() {
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let [_, a2, a3] = triangle_corners_4q(2);
        let region = KernelRegion::new(vec![
            ProductPoint::new(a2, 0.0).unwrap(),
            ProductPoint::new(a3, 0.0).unwrap(),
        ])
        .unwrap();
        let opts = OptimizeOptions {
            grid: 8,
            samples: 1 << 15,
            ..Default::default()
        };
        let r = optimize_kernel(&g, &region, &opts).unwrap();
        assert!(r.weights[0] < 1e-6, "{:?}", r.weights);
        assert!((r.best.kernel_base - a2).norm() < 1e-5);
        assert!((r.best.density_exact / 0.69634983 - 1.0).abs() < 1e-6);
        assert!((r.best.lattice_period - TAU).abs() < 1e-6);
        // The pole belongs to a smaller stratum and is skipped.
        assert!(r.trace.iter().any(|t| !t.admissible));
        let csv = trace_csv(&r.trace);
        assert!(csv.starts_with("w1,lattice_period,rho,density,admissible\n"));
    }

    #[test]
    fn pole_beats_the_edge() {
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let [_, a2, a3] = triangle_corners_4q(2);
        let opts = OptimizeOptions {
            grid: 6,
            samples: 1 << 15,
            ..Default::default()
        };
        let pole = KernelRegion::new(vec![ProductPoint::new(a3, 0.0).unwrap()]).unwrap();
        let edge = KernelRegion::new(vec![ProductPoint::new(a2, 0.0).unwrap(), ProductPoint::new(a3, 0.0).unwrap()])
            .unwrap();
        let p = optimize_kernel(&g, &pole, &opts).unwrap();
        let e = optimize_kernel(&g, &edge, &opts).unwrap();
        assert!((p.best.rho - CASE2_RADIUS).abs() < 1e-4, "{:?}", p.best);
        assert!((p.best.lattice_period - case2_period()).abs() < 1e-6);
        assert!((p.best.density_exact / 0.87757183 - 1.0).abs() < 1e-6);
        assert!(p.best.density_exact > e.best.density_exact);
    }

    #[test]
    fn long_periods_give_a_second_branch() {
        let pole = pp(Vector3::z(), 0.0);
        let d = |tau: f64| density_exact(&s2xr_group_4q_I_2(2, tau).unwrap(), &pole).unwrap().2;
        assert!(d(5.0) < d(case2_period()));
        let tau = 2.0 * 3f64.sqrt() * PI;
        let (rho, _, far) = density_exact(&s2xr_group_4q_I_2(2, tau).unwrap(), &pole).unwrap();
        assert!((rho - PI).abs() < 1e-9);
        assert!(far > 0.95);
    }

    #[test]
    fn symmetric_region_ties_its_mirror() {
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let [a1, a2, _] = triangle_corners_4q(2);
        let region =
            KernelRegion::new(vec![ProductPoint::new(a2, 0.3).unwrap(), ProductPoint::new(a1, 0.3).unwrap()]).unwrap();
        let opts = OptimizeOptions {
            grid: 10,
            period_range: None,
            samples: 1 << 12,
            ..Default::default()
        };
        let r = optimize_kernel(&g, &region, &opts).unwrap();
        let b = r.best.kernel_base;
        let mirror = pp(Vector3::new(b.y, b.x, b.z), r.best.kernel_fibre);
        let (_, _, dm) = density_exact(&g, &mirror).unwrap();
        assert!((dm - r.best.density_exact).abs() < 1e-6);
    }

    #[test]
    fn rejects_empty_regions() {
        assert!(KernelRegion::new(vec![]).is_err());
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let region = KernelRegion::new(vec![
            ProductPoint::new(Vector3::x(), 0.0).unwrap(),
            ProductPoint::new(-Vector3::x(), 0.0).unwrap(),
        ])
        .unwrap();
        assert!(optimize_kernel(&g, &region, &OptimizeOptions::default()).is_err());
    }

    #[test]
    fn serializes_to_json() {
        let g = s2xr_group_4q_I_2(2, TAU).unwrap();
        let r = density(&g, &pp(Vector3::x(), 0.0), 4096, 1).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kissing"], serde_json::json!(r.kissing));
        assert!(v["density"].as_f64().unwrap() > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn density_is_conjugation_invariant(
            x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..1.0f64, t in -1.0..1.0f64,
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.1..3.0f64, c in -2.0..2.0f64,
        ) {
            let g = s2xr_group_4q_I_2(2, 3.5).unwrap();
            let k = ProductPoint::new(Vector3::new(x, y, z), t).unwrap();
            let axis = nalgebra::Unit::new_normalize(Vector3::new(ax, ay, 0.7));
            let q = *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix();
            let h = ProductIsometry { linear: q, fibre_sign: 1.0, shift: c };
            let g2 = g.conjugated(&q, c);
            let k2 = h.apply(&k);
            let (r1, s1, d1) = density_exact(&g, &k.to_hpoint()).unwrap();
            let (r2, s2, d2) = density_exact(&g2, &k2.to_hpoint()).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
            prop_assert_eq!(s1, s2);
            prop_assert!((d1 - d2).abs() < 1e-9);
            let m1 = dv_cell_volume(&g, &k.to_hpoint(), 1 << 16, 2).unwrap();
            let m2 = dv_cell_volume(&g2, &k2.to_hpoint(), 1 << 16, 2).unwrap();
            prop_assert!((m1.volume - m2.volume).abs() <= 4.0 * m1.stderr.hypot(m2.stderr));
            prop_assert!((m1.exact - m2.exact).abs() < 1e-9);
        }
    }
}
