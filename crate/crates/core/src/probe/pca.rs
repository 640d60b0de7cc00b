//! First principal component of a small dense matrix.

use super::ProbeError;
use crate::retrieval::{dot, norm};

/// Above this size the eigenproblem falls back to power iteration.
const JACOBI_MAX_DIM: usize = 256;

/// Unit vector of maximal variance over the mean-centred rows, signed so that
/// its dot product with the (uncentred) row mean is non-negative.
pub fn pca_first_component(rows: &[Vec<f64>]) -> Result<Vec<f64>, ProbeError> {
    let n = rows.len();
    if n < 2 {
        return Err(ProbeError::TooFewRows(n));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(ProbeError::Shape("rows are empty".into()));
    }
    for r in rows {
        if r.len() != d {
            return Err(ProbeError::Shape(format!("ragged rows: {} vs {}", r.len(), d)));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(ProbeError::NonFinite);
        }
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let spread = centred
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()));
    if spread <= 1e-12 * scale {
        return Err(ProbeError::RankZero);
    }

    let mut v = if n < d {
        // Gram trick: top eigenvector u of X X^T gives X^T u.
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(&centred[i], &centred[j]);
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let u = top_eigenvector(&gram, n);
        let mut v = vec![0.0; d];
        for (ui, r) in u.iter().zip(&centred) {
            v.iter_mut().zip(r).for_each(|(a, x)| *a += ui * x);
        }
        v
    } else {
        let mut cov = vec![0.0; d * d];
        for r in &centred {
            for i in 0..d {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[i * d + j] += ri * r[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        top_eigenvector(&cov, d)
    };

    let nv = norm(&v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(ProbeError::RankZero);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    fix_sign(&mut v, &mean);
    Ok(v)
}

fn fix_sign(v: &mut [f64], reference: &[f64]) {
    let s = dot(v, reference);
    let flip = if s != 0.0 {
        s < 0.0
    } else {
        // No reference direction: make the largest entry positive.
        let mut k = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[k].abs() {
                k = i;
            }
        }
        v[k] < 0.0
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Unit eigenvector of the largest eigenvalue of a symmetric `n x n` matrix.
pub fn top_eigenvector(a: &[f64], n: usize) -> Vec<f64> {
    if n <= JACOBI_MAX_DIM {
        let (values, vectors) = jacobi_eigen(a, n);
        let mut k = 0;
        for i in 1..n {
            if values[i] > values[k] {
                k = i;
            }
        }
        (0..n).map(|r| vectors[r * n + k]).collect()
    } else {
        power_iteration(a, n, 10_000, 1e-14)
    }
}

/// Cyclic Jacobi rotations. Returns eigenvalues and the row-major matrix
/// whose columns are the matching eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// Dominant eigenvector by repeated multiplication. The input must be
/// positive semi-definite so the dominant eigenvalue is the largest one.
pub fn power_iteration(a: &[f64], n: usize, max_iter: usize, tol: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    for _ in 0..max_iter {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&a[i * n..(i + 1) * n], &x);
        }
        let ny = norm(&y);
        if ny == 0.0 {
            return x;
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let delta: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut y);
        if delta < tol {
            break;
        }
    }
    x
}
