//! Dense kernels for the small matrices used here (at most ~20×20).
//!
//! Matrices in hot loops are row-major `&[f64]` slices; certification code uses
//! `nalgebra::DMatrix`.

use nalgebra::DMatrix;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only the upper triangle is read. Sweeps stop once the off-diagonal mass
/// falls below `1e-30` relative to the Frobenius norm, or after 100 sweeps.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let frob2: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off <= 1e-30 * frob2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().expect("empty matrix")
}

pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Largest modulus among the (complex) eigenvalues.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral norm of a row-major `rows × cols` matrix via Jacobi on its Gram matrix.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(rows, cols, w);
    let gram = if rows <= cols { &m * m.transpose() } else { m.transpose() * &m };
    sym_max_eigenvalue(&gram).max(0.0).sqrt()
}

/// Power iteration on `WᵀW`, warm-started from `v` (length `cols`, updated in place).
///
/// Stops when the estimate changes by less than `tol` relative, or after `iters` steps.
/// The estimate approaches ‖W‖ from below.
pub fn spectral_norm_power(w: &[f64], rows: usize, cols: usize, v: &mut [f64], iters: usize, tol: f64) -> f64 {
    debug_assert_eq!(v.len(), cols);
    let mut wv = vec![0.0; rows];
    let mut prev = 0.0;
    if v.iter().all(|x| *x == 0.0) {
        v.iter_mut().enumerate().for_each(|(i, x)| *x = 1.0 + 0.1 * i as f64);
    }
    normalize(v);
    let mut sigma = 0.0;
    for _ in 0..iters {
        gemv(w, rows, cols, v, &mut wv);
        sigma = norm2(&wv);
        if sigma == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        gemv_t_acc(w, rows, cols, &wv, v);
        normalize(v);
        if (sigma - prev).abs() <= tol * sigma {
            break;
        }
        prev = sigma;
    }
    sigma
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = W x` for row-major `W`.
#[inline]
pub fn gemv(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        *yr = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `y += W x` for row-major `W`.
#[inline]
pub fn gemv_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        *yr += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `y += Wᵀ x` for row-major `W`.
#[inline]
pub fn gemv_t_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, &xr) in x.iter().enumerate().take(rows) {
        if xr == 0.0 {
            continue;
        }
        for (yc, wc) in y.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *yc += wc * xr;
        }
    }
}

/// `G += a bᵀ` for row-major `G` of shape `a.len() × b.len()`.
#[inline]
pub fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (gc, bc) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *gc += ar * bc;
        }
    }
}
