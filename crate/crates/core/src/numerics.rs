//! Small numerical kernels shared by the geometry modules.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};

/// One classical fourth-order Runge–Kutta step of an autonomous system.
pub fn rk4_step<const N: usize, F>(f: &F, y: &SVector<f64, N>, h: f64) -> SVector<f64, N>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    let k1 = f(y);
    let k2 = f(&(y + k1 * (0.5 * h)));
    let k3 = f(&(y + k2 * (0.5 * h)));
    let k4 = f(&(y + k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Brent's method on a sign-changing bracket `[a, b]`.
///
/// Returns `None` when the bracket does not change sign or the iteration budget runs out.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if !fa.is_finite() || !fb.is_finite() || fa.signum() == fb.signum() {
        return None;
    }
    let mut c = b;
    let mut fc = fb;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return None;
        }
    }
    None
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let mut best = (x, fx);
    for (xx, ff) in [(c, fc), (d, fd)] {
        if ff > best.1 {
            best = (xx, ff);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead minimization with the standard coefficients.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    ftol: f64,
    xtol: f64,
    max_iter: usize,
) -> NelderMeadResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= ftol * (values[0].abs() + values[n].abs()) + 1e-300 && size <= xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + t * (simplex[n][k] - centroid[k]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    for k in 0..n {
                        simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        converged,
    }
}

/// Damped Newton iteration with a forward-difference Jacobian.
///
/// `f` returns `None` outside its domain; such trial points are treated as
/// failed steps. Returns the final iterate and the Euclidean norm of its residual.
pub fn newton_fd<F>(mut f: F, x0: &[f64], tol: f64, max_iter: usize, h: f64) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = match f(&x) {
        Some(v) => v,
        None => return (x, f64::INFINITY),
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut res = norm(&fx);
    for _ in 0..max_iter {
        if res <= tol {
            break;
        }
        let m = fx.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut ok = true;
        for j in 0..n {
            let mut xp = x.clone();
            let hj = h * x[j].abs().max(1.0);
            xp[j] += hj;
            match f(&xp) {
                Some(fp) => {
                    for i in 0..m {
                        jac[(i, j)] = (fp[i] - fx[i]) / hj;
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let rhs = -DVector::from_column_slice(&fx);
        let delta = match jac.clone().svd(true, true).solve(&rhs, 1e-14) {
            Ok(d) => d,
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = (0..n).map(|k| x[k] + t * delta[k]).collect();
            if let Some(ft) = f(&trial) {
                let rt = norm(&ft);
                if rt < res {
                    x = trial;
                    fx = ft;
                    res = rt;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, res)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Christoffel symbols of the second kind by central differences of a metric field.
///
/// `gamma[k][(i, j)]` is Γᵏᵢⱼ.
pub fn fd_christoffel<F>(metric: F, p: &Vector3<f64>, h: f64) -> [Matrix3<f64>; 3]
where
    F: Fn(&Vector3<f64>) -> Matrix3<f64>,
{
    let mut dg = [Matrix3::zeros(); 3];
    for (l, d) in dg.iter_mut().enumerate() {
        let mut e = Vector3::zeros();
        e[l] = h;
        *d = (metric(&(p + e)) - metric(&(p - e))) / (2.0 * h);
    }
    let ginv = metric(p).try_inverse().unwrap_or_else(Matrix3::zeros);
    let mut gamma = [Matrix3::zeros(); 3];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for l in 0..3 {
                    acc += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                gk[(i, j)] = 0.5 * acc;
            }
        }
    }
    gamma
}

/// `sin(x)/x` with its series near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(x - sin x)/x³` with its series near zero.
pub fn x_minus_sin_over_cube(x: f64) -> f64 {
    if x.abs() < 2e-2 {
        let x2 = x * x;
        1.0 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0 - x2 * x2 * x2 / 362_880.0
    } else {
        (x - x.sin()) / (x * x * x)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}
