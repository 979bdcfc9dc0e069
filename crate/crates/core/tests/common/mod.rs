//! Independent oracles for integration tests.
//!
//! Everything here deliberately avoids the library's computation paths:
//! finite differences for gradients, a Jacobi sweep eigensolver, naive
//! unstabilized loss evaluation, quadratic-loop kernel assembly, and a
//! pivoted Gaussian elimination for normal equations.

#![allow(dead_code)]

use snlab_core::data::Dataset;
use snlab_core::linalg::Mat;

/// Central finite differences of `f` at `x` with step `h`.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Entrywise relative comparison of two gradients. Entries far below the
/// gradient's own scale are compared at that scale instead.
pub fn assert_gradients_close(analytic: &[f64], numeric: &[f64], rtol: f64, label: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let gmax = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(b.abs()).max(1e-3 * gmax).max(1e-12);
        assert!(
            (a - b).abs() <= rtol * denom,
            "{label}: entry {k}: analytic {a:.12e} vs numeric {b:.12e} (denom {denom:.3e})"
        );
    }
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(a: &Mat, max_sweeps: usize) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.at(p, q) * m.at(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * m.frobenius_norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (m.at(q, q) - m.at(p, p)) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.at(k, p);
                    let akq = m.at(k, q);
                    *m.at_mut(k, p) = c * akp - s * akq;
                    *m.at_mut(k, q) = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m.at(p, k);
                    let aqk = m.at(q, k);
                    *m.at_mut(p, k) = c * apk - s * aqk;
                    *m.at_mut(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    vals
}

/// Unstabilized SimCLR loss by brute-force double loops over feature dot
/// products.
pub fn naive_simclr_loss(filters: &Mat, data: &Dataset, augmented: &Dataset, tau: f64) -> f64 {
    let n = data.len();
    if n == 0 {
        return 0.0;
    }
    let feat = |s: &snlab_core::data::SamplePair| -> Vec<f64> {
        let z = s.patch_sum();
        (0..filters.rows())
            .map(|r| filters.row(r).iter().zip(&z).map(|(w, zv)| w * zv).sum())
            .collect()
    };
    let f: Vec<Vec<f64>> = data.samples.iter().map(&feat).collect();
    let ft: Vec<Vec<f64>> = augmented.samples.iter().map(&feat).collect();
    let ip = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut loss = 0.0;
    for i in 0..n {
        let pos = (ip(&f[i], &ft[i]) / tau).exp();
        let mut den = pos;
        for j in 0..n {
            if j != i {
                den += (ip(&f[i], &f[j]) / tau).exp();
            }
        }
        loss -= (pos / den).ln();
    }
    loss / n as f64
}

/// Quadratic-loop contrast kernel: accumulate all four outer products per
/// ordered pair, then scale. O(n0^2 d^2).
pub fn brute_force_kernel(data: &Dataset, augmented: &Dataset, eta: f64, tau: f64) -> Mat {
    let n = data.len();
    let d = data.samples[0].d();
    let z: Vec<Vec<f64>> = data.samples.iter().map(|s| s.patch_sum()).collect();
    let zt: Vec<Vec<f64>> = augmented.samples.iter().map(|s| s.patch_sum()).collect();
    let mut a = Mat::zeros(d, d);
    for i in 0..n {
        for ip in 0..n {
            if ip == i {
                continue;
            }
            for r in 0..d {
                for c in 0..d {
                    *a.at_mut(r, c) += z[i][r] * zt[i][c] + zt[i][r] * z[i][c]
                        - z[i][r] * z[ip][c]
                        - z[ip][r] * z[i][c];
                }
            }
        }
    }
    a.scale(eta / ((n * n) as f64 * tau));
    a
}

/// Gaussian elimination with partial pivoting (independent of the library's
/// Cholesky path).
pub fn gauss_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m.at(r, col).abs() > m.at(piv, col).abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                let tmp = m.at(col, c);
                *m.at_mut(col, c) = m.at(piv, c);
                *m.at_mut(piv, c) = tmp;
            }
            rhs.swap(col, piv);
        }
        let diag = m.at(col, col);
        for r in (col + 1)..n {
            let factor = m.at(r, col) / diag;
            if factor != 0.0 {
                for c in col..n {
                    let v = m.at(col, c);
                    *m.at_mut(r, c) -= factor * v;
                }
                rhs[r] -= factor * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for c in (r + 1)..n {
            s -= m.at(r, c) * x[c];
        }
        x[r] = s / m.at(r, r);
    }
    x
}

/// Exact split-event probability by the hypergeometric inclusion-exclusion
/// formula (independent of the library's enumeration).
pub fn split_event_probability_closed_form(count: usize, s_plus: usize, s_minus: usize) -> f64 {
    let m = count / 2;
    let choose = |n: usize, k: usize| -> f64 {
        if k > n {
            return 0.0;
        }
        let mut v = 1.0f64;
        for i in 0..k {
            v *= (n - i) as f64 / (i + 1) as f64;
        }
        v
    };
    let total = choose(count, m);
    // P(I+ misses M+): M+ drawn entirely outside I+.
    let p_plus_missed = choose(count - s_plus, m) / total;
    // P(I- misses M-): all of I- inside M+.
    let p_minus_missed = choose(count - s_minus, m - s_minus) / total;
    let p_both = if s_plus + s_minus <= count {
        choose(count - s_plus - s_minus, m - s_minus) / total
    } else {
        0.0
    };
    1.0 - (p_plus_missed + p_minus_missed - p_both)
}
