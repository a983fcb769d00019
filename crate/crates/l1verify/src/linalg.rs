//! Small dense helpers on top of nalgebra, plus grids and quadrature rules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Determinant as (sign, log|det|) from a QR factorisation of the
/// column-equilibrated matrix. The sign of the orthogonal factor is read off
/// its own LU factorisation, which is perfectly conditioned.
pub fn signed_log_det(a: &DMatrix<f64>) -> (f64, f64) {
    let mut scaled = a.clone();
    let mut log = 0.0;
    for mut col in scaled.column_iter_mut() {
        let m = col.amax();
        if m == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        col /= m;
        log += m.ln();
    }
    let qr = scaled.qr();
    let r = qr.r();
    let q = qr.q();
    let mut sign = q.lu().determinant().signum();
    for i in 0..r.nrows() {
        let d = r[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        sign *= d.signum();
        log += d.abs().ln();
    }
    (sign, log)
}

pub fn det_qr(a: &DMatrix<f64>) -> f64 {
    let (s, l) = signed_log_det(a);
    s * l.exp()
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("singular linear system".into()))
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .try_inverse()
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("singular matrix".into()))
}

/// Orthonormal basis of the orthogonal complement of `v` (n − 1 columns).
pub fn complement_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let u = v.normalize();
    // Householder reflector sending e_k to ±u; its other columns span u⊥.
    let k = u.iamax();
    let mut e = DVector::zeros(n);
    e[k] = if u[k] >= 0.0 { 1.0 } else { -1.0 };
    let w = &u - &e;
    let h = if w.norm() < 1e-300 {
        DMatrix::identity(n, n)
    } else {
        let w = w.normalize();
        DMatrix::identity(n, n) - 2.0 * &w * w.transpose()
    };
    let mut out = DMatrix::zeros(n, n - 1);
    let mut c = 0;
    for j in 0..n {
        if j != k {
            out.set_column(c, &h.column(j));
            c += 1;
        }
    }
    out
}

/// Chebyshev nodes of the first kind on (a, b), increasing.
pub fn chebyshev_nodes(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| {
            let th = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * count) as f64;
            a + (b - a) * (1.0 - th.cos()) / 2.0
        })
        .collect()
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; order];
    let mut w = vec![0.0; order];
    for i in 0..order {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..order {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            let pp = order as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let pp_final = pp;
                w[i] = 2.0 / ((1.0 - z * z) * pp_final * pp_final);
                break;
            }
        }
        x[i] = -z;
    }
    (x, w)
}

/// Composite Gauss–Legendre rule on [a, b]: nodes and weights.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * order);
    let mut ws = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(lo + 0.5 * h * (x + 1.0));
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
