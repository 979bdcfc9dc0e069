//! Spectral analysis of the contrastive dynamics.
//!
//! Builds the contrast kernel
//! `A = (eta/(n0^2 tau)) sum_i sum_{i'!=i} (z_i z~_i^T + z~_i z_i^T - z_i z_{i'}^T - z_{i'} z_i^T)`
//! and its rank-one surrogate `A0 = (2 eta/(n0^2 tau)) [n0^2 - (sum_i y_i)^2] mu mu^T`,
//! computes eigenpairs and the perturbation `Delta = A - A0`, reconstructs the
//! per-step residual matrices `Xi^(t)` of the update identity
//! `w^(t+1) = (I + A + Xi^(t)) w^(t)`, and runs the unnormalized power-method
//! surrogate `w <- (I + A) w`.

use std::io::Write;

use rand::Rng;

use crate::data::Dataset;
use crate::linalg::{axpy, dot, norm, normalize, Mat};
use crate::pretrain::{patch_sums, similarity_scores, PretrainState, SoftmaxWeights};
use crate::rng::stream;
use crate::{Error, Result};

/// Dense eigensolver cutoff; larger matrices go through power iteration.
const DENSE_EIGEN_MAX: usize = 1024;

/// Default eigensolver tolerance (residual relative to the Frobenius norm).
pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct ContrastKernel {
    /// Rows are the pre-training patch sums `z_i`.
    pub z: Mat,
    /// Rows are the augmented patch sums `z~_i`.
    pub z_tilde: Mat,
    pub a: Mat,
    pub a0: Mat,
    pub eta: f64,
    pub tau: f64,
    pub n0: usize,
    /// Diagnostic only; pre-training never reads labels.
    pub labels: Vec<i8>,
    pub mu: Vec<f64>,
}

/// Assemble `A` through the aggregate form
/// `A_raw = M + M^T - 2 s s^T` with `M = sum_i z_i ((n0-1) z~_i + z_i)^T`
/// and `s = sum_i z_i`, then symmetrize explicitly.
pub fn build_kernel(
    data: &Dataset,
    augmented: &Dataset,
    mu: &[f64],
    eta: f64,
    tau: f64,
) -> Result<ContrastKernel> {
    if data.len() != augmented.len() {
        return Err(Error::SizeMismatch(data.len(), augmented.len()));
    }
    let n0 = data.len();
    let z = patch_sums(data);
    let zt = patch_sums(augmented);
    let d = z.cols();
    let mut s = vec![0.0; d];
    for i in 0..n0 {
        axpy(1.0, z.row(i), &mut s);
    }
    let mut a = Mat::zeros(d, d);
    let mut u = vec![0.0; d];
    for i in 0..n0 {
        let zi = z.row(i);
        let zti = zt.row(i);
        for ((uv, &ztv), &zv) in u.iter_mut().zip(zti).zip(zi) {
            *uv = (n0 as f64 - 1.0) * ztv + zv;
        }
        a.add_outer(1.0, zi, &u);
    }
    let at = a.transpose();
    a.add_assign(&at);
    a.add_outer(-2.0, &s, &s);
    let scale = eta / ((n0 * n0) as f64 * tau);
    a.scale(scale);
    a.symmetrize();

    let labels = data.labels();
    let label_sum: f64 = labels.iter().map(|&y| y as f64).sum();
    let coeff = 2.0 * scale * ((n0 * n0) as f64 - label_sum * label_sum);
    let mut a0 = Mat::zeros(d, d);
    a0.add_outer(coeff, mu, mu);

    Ok(ContrastKernel { z, z_tilde: zt, a, a0, eta, tau, n0, labels, mu: mu.to_vec() })
}

// ---------------------------------------------------------------------------
// Symmetric eigensolvers.
// ---------------------------------------------------------------------------

/// Householder reduction of a symmetric matrix to tridiagonal form,
/// accumulating the transformations (EISPACK tred2).
fn tred2(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = v.rows();
    for j in 0..n {
        d[j] = v.at(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.at(i - 1, j);
                *v.at_mut(i, j) = 0.0;
                *v.at_mut(j, i) = 0.0;
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                f = d[j];
                *v.at_mut(j, i) = f;
                g = e[j] + v.at(j, j) * f;
                for k in (j + 1)..i {
                    g += v.at(k, j) * d[k];
                    e[k] += v.at(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    *v.at_mut(k, j) -= f * e[k] + g * d[k];
                }
                d[j] = v.at(i - 1, j);
                *v.at_mut(i, j) = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        *v.at_mut(n - 1, i) = v.at(i, i);
        *v.at_mut(i, i) = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.at(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v.at(k, i + 1) * v.at(k, j);
                }
                for k in 0..=i {
                    *v.at_mut(k, j) -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            *v.at_mut(k, i + 1) = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v.at(n - 1, j);
        *v.at_mut(n - 1, j) = 0.0;
    }
    *v.at_mut(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

/// Implicit QL with Wilkinson shifts on a tridiagonal matrix (EISPACK tql2).
fn tql2(v: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = v.rows();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 64 {
                    return Err(Error::NoConvergence { residual: e[l].abs(), iters: iter });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v.at(k, i + 1);
                        *v.at_mut(k, i + 1) = s * v.at(k, i) + c * h;
                        *v.at_mut(k, i) = c * v.at(k, i) - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Full symmetric eigendecomposition, eigenvalues in descending order.
pub fn sym_eigen_dense(a: &Mat) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let vecs: Vec<Vec<f64>> = order.iter().map(|&i| v.column(i)).collect();
    Ok((vals, vecs))
}

fn deterministic_unit_vector(d: usize, salt: u64) -> Vec<f64> {
    let mut rng = stream(0x5eed_0000_0000_0000 ^ salt ^ d as u64);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut v);
    v
}

/// Power iteration with Gram-Schmidt deflation for the k largest eigenvalues
/// of a symmetric matrix, run as a simultaneous block with a Rayleigh-Ritz
/// rotation each sweep. Iterates on `A + c I` (`c = ||A||_F`) so the dominant
/// eigenvalues of the shifted matrix are the algebraically largest ones; the
/// residual test runs against the original `A`.
pub fn power_eigenpairs(
    a: &Mat,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = a.rows();
    assert_eq!(d, a.cols());
    assert!(k >= 1 && k <= d, "k must lie in [1, d]");
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        let vecs = (0..k)
            .map(|j| {
                let mut v = vec![0.0; d];
                v[j] = 1.0;
                v
            })
            .collect();
        return Ok((vec![0.0; k], vecs));
    }
    let shift = fro;
    let mut block: Vec<Vec<f64>> = (0..k).map(|j| deterministic_unit_vector(d, j as u64)).collect();
    orthonormalize(&mut block);
    let mut best = f64::INFINITY;
    for _ in 0..max_iter {
        // One shifted power sweep per column.
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(k);
        for v in &block {
            let mut av = a.matvec(v);
            axpy(shift, v, &mut av);
            next.push(av);
        }
        orthonormalize(&mut next);
        // Rayleigh-Ritz on the block against the original matrix.
        let avs: Vec<Vec<f64>> = next.iter().map(|v| a.matvec(v)).collect();
        let mut h = Mat::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = dot(&next[i], &avs[j]);
                *h.at_mut(i, j) = v;
                *h.at_mut(j, i) = v;
            }
        }
        let (theta, u) = sym_eigen_dense(&h)?;
        let mut ritz: Vec<Vec<f64>> = Vec::with_capacity(k);
        for col in u.iter().take(k) {
            let mut v = vec![0.0; d];
            for (c, b) in col.iter().zip(&next) {
                axpy(*c, b, &mut v);
            }
            normalize(&mut v);
            ritz.push(v);
        }
        let mut worst = 0.0f64;
        for (lambda, v) in theta.iter().zip(&ritz) {
            let av = a.matvec(v);
            let resid: f64 = av
                .iter()
                .zip(v)
                .map(|(x, y)| (x - lambda * y) * (x - lambda * y))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(resid);
        }
        best = best.min(worst);
        if worst <= tol * fro {
            return Ok((theta, ritz));
        }
        block = ritz;
    }
    Err(Error::NoConvergence { residual: best, iters: max_iter })
}

/// Modified Gram-Schmidt, in place.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let (head, tail) = vs.split_at_mut(i);
            let c = dot(&head[j], &tail[0]);
            axpy(-c, &head[j], &mut tail[0]);
        }
        normalize(&mut vs[i]);
    }
}

/// Top-k eigenpairs in descending order. Dense solver for `d <= 1024`,
/// power iteration with deflation above that.
pub fn top_eigenpairs(a: &Mat, k: usize, tol: f64, max_iter: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = a.rows();
    assert!(k >= 1 && k <= d, "k must lie in [1, d]");
    let (vals, vecs) = if d <= DENSE_EIGEN_MAX {
        let (vals, vecs) = sym_eigen_dense(a)?;
        (vals[..k].to_vec(), vecs[..k].to_vec())
    } else {
        power_eigenpairs(a, k, tol, max_iter)?
    };
    let fro = a.frobenius_norm();
    for (lambda, v) in vals.iter().zip(&vecs) {
        let av = a.matvec(v);
        let resid: f64 = av
            .iter()
            .zip(v)
            .map(|(avi, vi)| {
                let r = avi - lambda * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        if resid > tol.max(1e-12) * fro.max(1.0) && resid > tol * fro {
            return Err(Error::NoConvergence { residual: resid, iters: max_iter });
        }
    }
    Ok((vals, vecs))
}

/// Spectral norm of a symmetric matrix via power iteration on `A^2`.
pub fn spectral_norm_sym(a: &Mat) -> f64 {
    let d = a.rows();
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        return 0.0;
    }
    let mut v = deterministic_unit_vector(d, 0x6e0f);
    let mut theta_old = 0.0;
    let mut stable = 0usize;
    for _ in 0..50_000 {
        let av = a.matvec(&v);
        let aav = a.matvec(&av);
        let theta = dot(&v, &aav).max(0.0);
        v = aav;
        let nv = normalize(&mut v);
        if nv == 0.0 {
            return 0.0;
        }
        if (theta - theta_old).abs() <= 1e-12 * theta.max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return theta.sqrt();
            }
        } else {
            stable = 0;
        }
        theta_old = theta;
    }
    theta_old.sqrt()
}

// ---------------------------------------------------------------------------
// Spectral report and the eigen-gap checks.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Descending eigenvalues `lambda_1 .. lambda_k`.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `||Delta||_2 = ||A - A0||_2`.
    pub delta_norm: f64,
    /// Empirical proxy `eps_hat = ||Delta||_2 / ((eta/tau) ||mu||^2)`.
    ///
    /// This is the tightest computable analogue of the analysis quantity,
    /// not the analysis quantity itself.
    pub eps_hat: f64,
    /// `|<v_1, mu>| / ||mu||`, in [0, 1].
    pub mu_alignment: f64,
    /// `||P_mu_perp v_1||_2`.
    pub perp_residual: f64,
}

/// Eigen-analysis of a contrast kernel: top-k eigenpairs of `A` plus the
/// perturbation diagnostics against `A0`.
pub fn analyze_kernel(kernel: &ContrastKernel, k: usize) -> Result<SpectralReport> {
    let (eigenvalues, eigenvectors) = top_eigenpairs(&kernel.a, k, EIGEN_TOL, EIGEN_MAX_ITER)?;
    let delta = kernel.a.sub(&kernel.a0);
    let delta_norm = spectral_norm_sym(&delta);
    let mu_norm = norm(&kernel.mu);
    let eps_hat = delta_norm / ((kernel.eta / kernel.tau) * mu_norm * mu_norm);
    let v1 = &eigenvectors[0];
    let align = dot(v1, &kernel.mu) / mu_norm;
    let mut perp = v1.clone();
    let mu_hat: Vec<f64> = kernel.mu.iter().map(|&x| x / mu_norm).collect();
    axpy(-align, &mu_hat, &mut perp);
    Ok(SpectralReport {
        eigenvalues,
        eigenvectors,
        delta_norm,
        eps_hat,
        mu_alignment: align.abs(),
        perp_residual: norm(&perp),
    })
}

#[derive(Debug, Clone)]
pub struct InequalityCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs <= rhs` for upper bounds, `lhs >= rhs` for lower bounds.
    pub pass: bool,
    /// Signed slack in units of `rhs` (positive = margin).
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct Lemma52Verdict {
    /// All labels equal makes `A0 = 0`; the checks are then meaningless.
    pub degenerate: bool,
    /// `n0 * SNR^2`; the eigen-gap regime needs this to be large.
    pub boundary_proxy: f64,
    pub checks: Vec<InequalityCheck>,
}

impl Lemma52Verdict {
    pub fn all_pass(&self) -> bool {
        !self.degenerate && self.checks.iter().all(|c| c.pass)
    }
}

/// Evaluate the eigen-gap and alignment inequalities with the measured proxy
/// `eps_hat`:
/// `(1-e)(2 eta/tau)||mu||^2 <= lambda_1 <= (1+e)(2 eta/tau)||mu||^2`,
/// `lambda_2 <= (eta/tau)||mu||^2 e`, `|<v1,mu>| >= (1-e^2)||mu||`,
/// `||P_mu_perp v1|| <= e`.
pub fn lemma52_check(
    kernel: &ContrastKernel,
    report: &SpectralReport,
    snr: f64,
    n0: usize,
) -> Lemma52Verdict {
    let label_sum: i64 = kernel.labels.iter().map(|&y| y as i64).sum();
    let degenerate = label_sum.unsigned_abs() as usize == n0;
    let mu_norm = norm(&kernel.mu);
    let base = (kernel.eta / kernel.tau) * mu_norm * mu_norm;
    let e = report.eps_hat;
    let lambda1 = report.eigenvalues[0];
    let lambda2 = report.eigenvalues.get(1).copied().unwrap_or(0.0);
    let mut checks = Vec::new();
    let lower = (1.0 - e) * 2.0 * base;
    checks.push(InequalityCheck {
        name: "lambda1_lower",
        lhs: lambda1,
        rhs: lower,
        pass: lambda1 >= lower,
        slack: (lambda1 - lower) / lower.abs().max(f64::MIN_POSITIVE),
    });
    let upper = (1.0 + e) * 2.0 * base;
    checks.push(InequalityCheck {
        name: "lambda1_upper",
        lhs: lambda1,
        rhs: upper,
        pass: lambda1 <= upper,
        slack: (upper - lambda1) / upper.abs().max(f64::MIN_POSITIVE),
    });
    let gap = e * base;
    checks.push(InequalityCheck {
        name: "lambda2_gap",
        lhs: lambda2,
        rhs: gap,
        pass: lambda2 <= gap,
        slack: (gap - lambda2) / gap.abs().max(f64::MIN_POSITIVE),
    });
    let align_floor = 1.0 - e * e;
    checks.push(InequalityCheck {
        name: "mu_alignment",
        lhs: report.mu_alignment,
        rhs: align_floor,
        pass: report.mu_alignment >= align_floor,
        slack: (report.mu_alignment - align_floor) / align_floor.abs().max(f64::MIN_POSITIVE),
    });
    checks.push(InequalityCheck {
        name: "perp_residual",
        lhs: report.perp_residual,
        rhs: e,
        pass: report.perp_residual <= e,
        slack: (e - report.perp_residual) / e.abs().max(f64::MIN_POSITIVE),
    });
    Lemma52Verdict { degenerate, boundary_proxy: n0 as f64 * snr * snr, checks }
}

// ---------------------------------------------------------------------------
// The per-step residual Xi and the power-method surrogate.
// ---------------------------------------------------------------------------

/// `Xi = -(eta/(n0^2 tau)) sum_i sum_{i'!=i} (n0 p_{i,i'} - 1)
///       (z_i z_{i'}^T + z_{i'} z_i^T - z_i z~_i^T - z~_i z_i^T)`
/// from cached softmax weights. Returns the matrix and its spectral norm.
pub fn residual_xi_from_weights(kernel: &ContrastKernel, weights: &SoftmaxWeights) -> (Mat, f64) {
    let n0 = kernel.n0;
    let d = kernel.z.cols();
    let mut s = vec![0.0; d];
    for i in 0..n0 {
        axpy(1.0, kernel.z.row(i), &mut s);
    }
    let mut xi = Mat::zeros(d, d);
    let mut u = vec![0.0; d];
    for i in 0..n0 {
        let zi = kernel.z.row(i);
        // u_i = sum_{i'!=i} (n0 p_{i,i'} - 1) z_{i'}
        //     = n0 * sum_{i'} p_{i,i'} z_{i'} - (s - z_i).
        for v in u.iter_mut() {
            *v = 0.0;
        }
        for ip in 0..n0 {
            if ip != i {
                let w = n0 as f64 * weights.pair.at(i, ip);
                if w != 0.0 {
                    axpy(w, kernel.z.row(ip), &mut u);
                }
            }
        }
        axpy(-1.0, &s, &mut u);
        axpy(1.0, zi, &mut u);
        xi.add_outer(1.0, zi, &u);
        xi.add_outer(1.0, &u, zi);
        // b_i = sum_{i'!=i} (n0 p_{i,i'} - 1) = n0 (1 - softmax_i) - (n0 - 1).
        let b = n0 as f64 * (1.0 - weights.pos[i]) - (n0 as f64 - 1.0);
        if b != 0.0 {
            let zti = kernel.z_tilde.row(i);
            xi.add_outer(-b, zi, zti);
            xi.add_outer(-b, zti, zi);
        }
    }
    xi.scale(-kernel.eta / ((n0 * n0) as f64 * kernel.tau));
    xi.symmetrize();
    let nrm = spectral_norm_sym(&xi);
    (xi, nrm)
}

/// Convenience wrapper: recompute the softmax weights for the given state.
pub fn residual_xi(
    kernel: &ContrastKernel,
    state: &PretrainState,
    data: &Dataset,
    augmented: &Dataset,
) -> Result<(Mat, f64)> {
    let scores = similarity_scores(state, data, augmented)?;
    let weights = SoftmaxWeights::from_scores(&scores, kernel.tau)?;
    Ok(residual_xi_from_weights(kernel, &weights))
}

/// Unnormalized power-method surrogate: each filter iterates `w <- (I + A) w`.
///
/// Returns the filter bank after each of the `t` steps. Renormalization is
/// deliberately not applied; entries beyond 1e300 abort.
pub fn power_surrogate(filters0: &Mat, a: &Mat, t: usize) -> Result<Vec<Mat>> {
    assert!(t >= 1, "t must be >= 1");
    let mut states = Vec::with_capacity(t);
    let mut current = filters0.clone();
    for step in 0..t {
        let mut next = current.clone();
        for r in 0..current.rows() {
            let aw = a.matvec(current.row(r));
            axpy(1.0, &aw, next.row_mut(r));
        }
        if next.max_abs() > 1e300 {
            return Err(Error::Overflow(step));
        }
        states.push(next.clone());
        current = next;
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Report output.
// ---------------------------------------------------------------------------

pub const SPECTRAL_METADATA_HEADER: &str = "key,value";
pub const SPECTRAL_EIGEN_HEADER: &str = "k,lambda_k";

/// CSV: a `key,value` metadata block followed by `k,lambda_k` rows.
pub fn write_spectral_report<W: Write>(report: &SpectralReport, mut w: W) -> Result<()> {
    writeln!(w, "{SPECTRAL_METADATA_HEADER}")?;
    writeln!(w, "delta_norm,{}", report.delta_norm)?;
    writeln!(w, "eps_hat,{}", report.eps_hat)?;
    writeln!(w, "mu_alignment,{}", report.mu_alignment)?;
    writeln!(w, "perp_residual,{}", report.perp_residual)?;
    writeln!(w, "{SPECTRAL_EIGEN_HEADER}")?;
    for (i, lambda) in report.eigenvalues.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, lambda)?;
    }
    Ok(())
}
