//! One-sided Jacobi SVD.
//!
//! Rotations orthogonalize column pairs of the working matrix until every
//! off-diagonal inner product is below a relative threshold; column norms
//! are then the singular values. Accurate and simple at shift-matrix sizes
//! (tens of columns), which is all this crate needs.

use super::Mat;
use crate::error::{Result, UlxError};

/// Relative convergence threshold on off-diagonal column inner products.
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

/// Thin SVD: `a == u * diag(s) * v^T`, with `u` (m x p) and `v` (n x p)
/// having orthonormal columns and `s` (length p = min(m, n)) sorted
/// descending. Each left singular vector's sign is fixed so its
/// largest-magnitude component is positive.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

pub fn svd(a: &Mat) -> Result<Svd> {
    if !a.is_finite() {
        return Err(UlxError::Numeric("svd: non-finite input entry".into()));
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        // A = U S V^T  <=>  A^T = V S U^T
        let t = svd_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn svd_tall(a: &Mat) -> Result<Svd> {
    let m = a.rows();
    let n = a.cols();
    let mut work = a.clone();
    let mut v = Mat::identity(n);

    // Columns reduced to rounding noise are excluded from further rotations;
    // their direction is arbitrary and would never settle.
    let null_floor_sq = {
        let f = a.frobenius_norm() * 1e-13;
        f * f
    };

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (app, aqq, apq) = {
                    let cp = work.col(p);
                    let cq = work.col(q);
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..m {
                        app += cp[i] * cp[i];
                        aqq += cq[i] * cq[i];
                        apq += cp[i] * cq[i];
                    }
                    (app, aqq, apq)
                };
                if app <= null_floor_sq || aqq <= null_floor_sq {
                    continue;
                }
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut work, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(UlxError::Numeric(format!(
            "svd: Jacobi sweep limit {MAX_SWEEPS} exceeded for {m}x{n} input"
        )));
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| work.col(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let s_max = s.first().copied().unwrap_or(0.0);
    let rank_floor = (s_max * (m.max(n) as f64) * f64::EPSILON).max(null_floor_sq.sqrt());

    let mut u = Mat::zeros(m, n);
    let mut v_sorted = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.col_mut(dst).copy_from_slice(v.col(src));
        if s[dst] > rank_floor && s[dst] > 0.0 {
            let col = work.col(src);
            let inv = 1.0 / s[dst];
            let ucol = u.col_mut(dst);
            for i in 0..m {
                ucol[i] = col[i] * inv;
            }
        }
        // Zero-singular-value columns are filled in below.
    }
    fill_null_columns(&mut u, &s, rank_floor);
    fix_signs(&mut u, &mut v_sorted);

    Ok(Svd { u, s, v: v_sorted })
}

fn rotate_cols(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.rows();
    for i in 0..rows {
        let xp = m.get(i, p);
        let xq = m.get(i, q);
        m.set(i, p, c * xp - s * xq);
        m.set(i, q, s * xp + c * xq);
    }
}

/// Replace columns whose singular value is (numerically) zero with unit
/// vectors orthonormal to every other column, so U always has orthonormal
/// columns even for rank-deficient input.
#[allow(clippy::needless_range_loop)]
fn fill_null_columns(u: &mut Mat, s: &[f64], rank_floor: f64) {
    let m = u.rows();
    for j in 0..u.cols() {
        if s[j] > rank_floor && s[j] > 0.0 {
            continue;
        }
        // Pick the standard basis vector with the largest residual after
        // orthogonalizing against the columns already in place.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..m {
            let mut cand = vec![0.0; m];
            cand[k] = 1.0;
            for _pass in 0..2 {
                for other in 0..u.cols() {
                    if other == j {
                        continue;
                    }
                    let filled = other < j || s[other] > rank_floor;
                    if !filled {
                        continue;
                    }
                    let col = u.col(other);
                    let proj: f64 = col.iter().zip(&cand).map(|(a, b)| a * b).sum();
                    for (ci, ai) in cand.iter_mut().zip(col) {
                        *ci -= proj * ai;
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
            if norm > 0.9 {
                break; // plenty orthogonal already
            }
        }
        let (norm, cand) = best.expect("m >= 1");
        let ucol = u.col_mut(j);
        for (dst, x) in ucol.iter_mut().zip(&cand) {
            *dst = x / norm;
        }
    }
}

/// Deterministic sign convention: the largest-magnitude component of each
/// left singular vector is made positive; V flips with U so the product is
/// unchanged.
fn fix_signs(u: &mut Mat, v: &mut Mat) {
    for j in 0..u.cols() {
        let col = u.col(j);
        let mut arg = 0;
        let mut best = 0.0;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                arg = i;
            }
        }
        if u.get(arg, j) < 0.0 {
            for x in u.col_mut(j) {
                *x = -*x;
            }
            if j < v.cols() {
                for x in v.col_mut(j) {
                    *x = -*x;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(d: &Svd, rows: usize, cols: usize) -> Mat {
        let mut r = Mat::zeros(rows, cols);
        let p = d.s.len();
        for i in 0..rows {
            for j in 0..cols {
                let mut x = 0.0;
                for k in 0..p {
                    x += d.u.get(i, k) * d.s[k] * d.v.get(j, k);
                }
                r.set(i, j, x);
            }
        }
        r
    }

    fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_matrix() {
        let a = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 2.0).abs() < 1e-14);
        assert!((d.s[1] - 1.0).abs() < 1e-14);
        // Sign convention makes U exactly the standard basis here.
        assert!((d.u.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((d.u.get(1, 1) - 1.0).abs() < 1e-14);
        assert!(d.u.get(1, 0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_ones_matrix() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 2.0).abs() < 1e-14);
        assert!(d.s[1].abs() < 1e-14);
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert!((d.u.get(0, 0) - inv_sqrt2).abs() < 1e-12);
        assert!((d.u.get(1, 0) - inv_sqrt2).abs() < 1e-12);
        // Null column must still be orthonormal to the first.
        let dot = d.u.get(0, 0) * d.u.get(0, 1) + d.u.get(1, 0) * d.u.get(1, 1);
        assert!(dot.abs() < 1e-12);
        assert!(max_abs_diff(&reconstruct(&d, 2, 2), &a) < 1e-12);
    }

    #[test]
    fn wide_matrix_goes_through_transpose() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert_eq!(d.u.rows(), 2);
        assert_eq!(d.u.cols(), 2);
        assert_eq!(d.v.rows(), 3);
        assert!(max_abs_diff(&reconstruct(&d, 2, 3), &a) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Mat::from_rows(&[vec![1.0, f64::INFINITY]]).unwrap_or_else(|_| {
            let mut m = Mat::zeros(1, 2);
            m.set(0, 1, f64::INFINITY);
            m
        });
        assert!(matches!(svd(&a), Err(UlxError::Numeric(_))));
    }

    #[test]
    fn zero_matrix_gets_orthonormal_basis() {
        let a = Mat::zeros(3, 2);
        let d = svd(&a).unwrap();
        assert_eq!(d.s, vec![0.0, 0.0]);
        for j in 0..2 {
            let nj: f64 = d.u.col(j).iter().map(|x| x * x).sum();
            assert!((nj - 1.0).abs() < 1e-12);
        }
        let dot: f64 = d
            .u
            .col(0)
            .iter()
            .zip(d.u.col(1))
            .map(|(a, b)| a * b)
            .sum();
        assert!(dot.abs() < 1e-12);
    }
}
