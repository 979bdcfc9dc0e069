//! Signal-noise decomposition of filters against the fine-tuning noise basis.
//!
//! Every filter decomposes uniquely as
//! `w = w_perp + gamma * mu / ||mu||^2 + sum_i rho_i * xi_i / ||xi_i||^2`
//! with `w_perp` orthogonal to `mu` and every `xi_i`. Because the data model
//! draws noise exactly orthogonal to `mu`, the signal coefficient is simply
//! `gamma = <w, mu>`, while the `rho_i` solve the noise-basis Gram system.

use std::io::Write;

use rand::Rng;

use crate::linalg::{axpy, cholesky, cholesky_solve, dot, norm, norm_sq, Mat};
use crate::{Error, Result};

/// Gram condition numbers above this are rejected.
pub const GRAM_CONDITION_CAP: f64 = 1e12;

/// Prepared fine-tuning noise basis: Gram factorization shared by all
/// decompositions against the same dataset.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    pub mu: Vec<f64>,
    /// `n x d`, row `i` is `xi_i`.
    pub xis: Mat,
    pub norms_sq: Vec<f64>,
    chol: Mat,
    pub condition: f64,
    /// Seed of the dataset the basis was taken from.
    pub basis_id: u64,
}

impl NoiseBasis {
    pub fn new(mu: Vec<f64>, xis: Mat, basis_id: u64) -> Result<Self> {
        let n = xis.rows();
        let mut gram = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let g = dot(xis.row(i), xis.row(j));
                *gram.at_mut(i, j) = g;
                *gram.at_mut(j, i) = g;
            }
        }
        let chol = cholesky(&gram).map_err(|_| Error::IllConditioned(f64::INFINITY))?;
        let condition = estimate_condition(&gram, &chol);
        if condition > GRAM_CONDITION_CAP {
            return Err(Error::IllConditioned(condition));
        }
        let norms_sq = (0..n).map(|i| gram.at(i, i)).collect();
        Ok(NoiseBasis { mu, xis, norms_sq, chol, condition, basis_id })
    }

    /// Build the basis from a labeled dataset's noise patches.
    pub fn from_dataset(mu: &[f64], data: &crate::data::Dataset) -> Result<Self> {
        let rows: Vec<Vec<f64>> = data.samples.iter().map(|s| s.noise_patch().to_vec()).collect();
        NoiseBasis::new(mu.to_vec(), Mat::from_rows(rows)?, data.seed)
    }

    pub fn n(&self) -> usize {
        self.xis.rows()
    }

    pub fn d(&self) -> usize {
        self.xis.cols()
    }

    pub fn solve_gram(&self, b: &[f64]) -> Vec<f64> {
        cholesky_solve(&self.chol, b)
    }
}

/// Condition number of the Gram matrix via power iteration on `G` and
/// inverse iteration through the Cholesky factor.
fn estimate_condition(gram: &Mat, chol: &Mat) -> f64 {
    let n = gram.rows();
    if n == 0 {
        return 1.0;
    }
    let mut v = vec![1.0; n];
    for (i, x) in v.iter_mut().enumerate() {
        *x += 1e-3 * (i as f64 % 7.0);
    }
    crate::linalg::normalize(&mut v);
    let mut hi = 0.0;
    for _ in 0..200 {
        let mut w = gram.matvec(&v);
        hi = dot(&v, &w);
        if crate::linalg::normalize(&mut w) == 0.0 {
            break;
        }
        v = w;
    }
    let mut u = v.clone();
    let mut lo = hi;
    for _ in 0..200 {
        let mut w = cholesky_solve(chol, &u);
        let growth = crate::linalg::normalize(&mut w);
        if growth == 0.0 {
            break;
        }
        lo = 1.0 / growth;
        u = w;
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Debug, Clone)]
pub struct SignalNoiseDecomposition {
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub w_perp: Vec<f64>,
    pub basis_id: u64,
}

impl SignalNoiseDecomposition {
    pub fn perp_norm(&self) -> f64 {
        norm(&self.w_perp)
    }

    /// Rebuild `w_perp + gamma mu/||mu||^2 + sum_i rho_i xi_i/||xi_i||^2`.
    pub fn reconstruct(&self, basis: &NoiseBasis) -> Vec<f64> {
        let mut w = self.w_perp.clone();
        axpy(self.gamma / norm_sq(&basis.mu), &basis.mu, &mut w);
        for i in 0..basis.n() {
            axpy(self.rho[i] / basis.norms_sq[i], basis.xis.row(i), &mut w);
        }
        w
    }
}

/// Exact decomposition of a filter against `{mu, xi_1..xi_n}`.
pub fn decompose(w: &[f64], basis: &NoiseBasis) -> Result<SignalNoiseDecomposition> {
    if w.len() != basis.d() {
        return Err(Error::DimensionMismatch { expected: basis.d(), got: w.len() });
    }
    let gamma = dot(w, &basis.mu);
    let n = basis.n();
    let rhs: Vec<f64> = (0..n).map(|i| dot(basis.xis.row(i), w)).collect();
    let coeffs = basis.solve_gram(&rhs);
    let rho: Vec<f64> = coeffs.iter().zip(&basis.norms_sq).map(|(c, nsq)| c * nsq).collect();
    let mut w_perp = w.to_vec();
    axpy(-gamma / norm_sq(&basis.mu), &basis.mu, &mut w_perp);
    for i in 0..n {
        axpy(-coeffs[i], basis.xis.row(i), &mut w_perp);
    }
    Ok(SignalNoiseDecomposition { gamma, rho, w_perp, basis_id: basis.basis_id })
}

/// Structural output of the pre-training guarantee: witness index sets,
/// signal-vs-noise strength ratios, and the boundedness diagnostics.
#[derive(Debug, Clone)]
pub struct Theorem53Report {
    pub i_plus: Vec<usize>,
    pub i_minus: Vec<usize>,
    /// `min_{r in I+} gamma_r^{q-2} / log(2/gamma_r)` over `max |rho|^{q-2}`.
    pub ratio_plus: f64,
    pub ratio_minus: f64,
    /// Threshold `M / (n SNR^2)` both ratios are checked against.
    pub ratio_threshold: f64,
    pub ratio_plus_pass: bool,
    pub ratio_minus_pass: bool,
    pub max_perp_norm: f64,
    pub perp_bound: f64,
    pub perp_pass: bool,
    pub max_abs_gamma: f64,
    pub max_abs_rho: f64,
    /// `SNR^{2/(q-2)} / (16 m^{2/(q-2)} n0)`; seed-dependent at desk scale,
    /// so violations are flags rather than failures.
    pub coeff_bound: f64,
    pub gamma_flag: bool,
    pub rho_flag: bool,
    /// Min of the best positive and best negative signal coefficients.
    pub gamma0: f64,
}

fn gamma_strength(gamma: f64, q: f64) -> f64 {
    // log(2/gamma) clamped so the denominator never drops below 1.
    if gamma <= 0.0 {
        0.0
    } else {
        gamma.powf(q - 2.0) / (2.0 / gamma).max(std::f64::consts::E).ln()
    }
}

/// Evaluate the Theorem-5.3-style structure of a decomposed filter bank.
///
/// `I+` and `I-` are chosen greedily (largest and most negative `gamma`);
/// the theorem only asserts existence, so the maximizing choice is the
/// canonical witness.
pub fn verify_theorem53(
    decomps: &[SignalNoiseDecomposition],
    n: usize,
    n0: usize,
    snr: f64,
    q: f64,
    big_m: f64,
) -> Result<Theorem53Report> {
    if q <= 2.0 {
        return Err(Error::InvalidParam(format!("q = {q} must be > 2")));
    }
    let two_m = decomps.len();
    let set_size = two_m / 5;
    if set_size == 0 {
        return Err(Error::InvalidParam(format!("2m = {two_m} too small for 2m/5 index sets")));
    }
    let m = two_m / 2;
    let mut order: Vec<usize> = (0..two_m).collect();
    order.sort_by(|&i, &j| decomps[j].gamma.partial_cmp(&decomps[i].gamma).unwrap());
    let mut i_plus: Vec<usize> = order[..set_size].to_vec();
    let mut i_minus: Vec<usize> = order[two_m - set_size..].to_vec();
    i_plus.sort_unstable();
    i_minus.sort_unstable();

    let max_abs_rho = decomps
        .iter()
        .flat_map(|d| d.rho.iter())
        .fold(0.0f64, |acc, &r| acc.max(r.abs()));
    let denom = max_abs_rho.powf(q - 2.0);
    let num_plus = i_plus
        .iter()
        .map(|&r| gamma_strength(decomps[r].gamma, q))
        .fold(f64::INFINITY, f64::min);
    let num_minus = i_minus
        .iter()
        .map(|&r| gamma_strength(-decomps[r].gamma, q))
        .fold(f64::INFINITY, f64::min);
    let ratio_plus = if denom == 0.0 { f64::INFINITY } else { num_plus / denom };
    let ratio_minus = if denom == 0.0 { f64::INFINITY } else { num_minus / denom };
    let ratio_threshold = big_m / (n as f64 * snr * snr);

    let max_perp_norm = decomps.iter().map(|d| d.perp_norm()).fold(0.0f64, f64::max);
    let perp_bound = 1.0 / n as f64;
    let max_abs_gamma = decomps.iter().map(|d| d.gamma.abs()).fold(0.0f64, f64::max);
    let coeff_bound = snr.powf(2.0 / (q - 2.0)) / (16.0 * (m as f64).powf(2.0 / (q - 2.0)) * n0 as f64);

    let best_pos = decomps.iter().map(|d| d.gamma).fold(f64::NEG_INFINITY, f64::max);
    let best_neg = decomps.iter().map(|d| -d.gamma).fold(f64::NEG_INFINITY, f64::max);
    let gamma0 = best_pos.min(best_neg);

    Ok(Theorem53Report {
        i_plus,
        i_minus,
        ratio_plus,
        ratio_minus,
        ratio_threshold,
        ratio_plus_pass: ratio_plus >= ratio_threshold,
        ratio_minus_pass: ratio_minus >= ratio_threshold,
        max_perp_norm,
        perp_bound,
        perp_pass: max_perp_norm <= perp_bound,
        max_abs_gamma,
        max_abs_rho,
        coeff_bound,
        gamma_flag: max_abs_gamma > coeff_bound,
        rho_flag: max_abs_rho > coeff_bound,
        gamma0,
    })
}

/// Uniform random partition of `[2m]` into two banks of `m` indices each,
/// returned in ascending order.
pub fn split_filters<R: Rng>(count: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if count % 2 != 0 {
        return Err(Error::OddFilterCount(count));
    }
    let m = count / 2;
    let mut indices: Vec<usize> = (0..count).collect();
    // Partial Fisher-Yates: the first m entries become the positive bank.
    for i in 0..m {
        let j = rng.gen_range(i..count);
        indices.swap(i, j);
    }
    let mut plus: Vec<usize> = indices[..m].to_vec();
    let mut minus: Vec<usize> = indices[m..].to_vec();
    plus.sort_unstable();
    minus.sort_unstable();
    Ok((plus, minus))
}

/// Exact probability, over all `C(2m, m)` equiprobable partitions, of the
/// event "some element of `i_plus` lands in the positive bank AND some
/// element of `i_minus` lands in the negative bank".
///
/// Enumerates every partition; supports `2m <= 30`.
pub fn exact_split_event_probability(count: usize, i_plus: &[usize], i_minus: &[usize]) -> Result<f64> {
    if count % 2 != 0 {
        return Err(Error::OddFilterCount(count));
    }
    if count > 30 {
        return Err(Error::InvalidParam(format!("enumeration limited to 2m <= 30, got {count}")));
    }
    let m = count / 2;
    let plus_mask: u32 = i_plus.iter().fold(0, |acc, &i| acc | (1 << i));
    let minus_mask: u32 = i_minus.iter().fold(0, |acc, &i| acc | (1 << i));
    let full: u32 = if count == 32 { u32::MAX } else { (1 << count) - 1 };
    let mut total = 0u64;
    let mut good = 0u64;
    // Gosper's hack over all m-subsets of [count].
    let mut subset: u32 = (1 << m) - 1;
    loop {
        total += 1;
        let pos = subset;
        let neg = full & !subset;
        if (pos & plus_mask) != 0 && (neg & minus_mask) != 0 {
            good += 1;
        }
        // Next combination.
        let c = subset & subset.wrapping_neg();
        let r = subset + c;
        let next = (((r ^ subset) >> 2) / c) | r;
        if next > full {
            break;
        }
        subset = next;
    }
    Ok(good as f64 / total as f64)
}

pub fn decomposition_csv_header(n: usize) -> String {
    let mut h = String::from("filter_index,gamma");
    for i in 1..=n {
        h.push_str(&format!(",rho_{i}"));
    }
    h.push_str(",perp_norm");
    h
}

/// CSV: `filter_index,gamma,rho_1..rho_n,perp_norm`.
pub fn write_decompositions<W: Write>(decomps: &[SignalNoiseDecomposition], mut w: W) -> Result<()> {
    let n = decomps.first().map_or(0, |d| d.rho.len());
    writeln!(w, "{}", decomposition_csv_header(n))?;
    for (idx, d) in decomps.iter().enumerate() {
        write!(w, "{idx},{}", d.gamma)?;
        for r in &d.rho {
            write!(w, ",{r}")?;
        }
        writeln!(w, ",{}", d.perp_norm())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DataModelParams, DatasetKind};
    use crate::rng::stream;

    fn small_basis(seed: u64) -> (DataModelParams, NoiseBasis) {
        let params = DataModelParams::axis_signal(20, 3.0, 1.0).unwrap();
        let data = generate_dataset(&params, 6, DatasetKind::FinetuneLabeled, seed);
        let basis = NoiseBasis::from_dataset(&params.mu, &data).unwrap();
        (params, basis)
    }

    #[test]
    fn pure_signal_decomposes_to_gamma_only() {
        let (params, basis) = small_basis(1);
        let d = decompose(&params.mu, &basis).unwrap();
        assert!((d.gamma - norm_sq(&params.mu)).abs() < 1e-9);
        assert!(d.rho.iter().all(|&r| r.abs() < 1e-9));
        assert!(d.perp_norm() < 1e-9);
    }

    #[test]
    fn orthogonal_vector_decomposes_to_perp_only() {
        let (_, basis) = small_basis(2);
        // Build a vector orthogonal to mu and every xi via projection.
        let mut w: Vec<f64> = (0..basis.d()).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let dcomp = decompose(&w, &basis).unwrap();
        w = dcomp.w_perp.clone();
        let d2 = decompose(&w, &basis).unwrap();
        assert!(d2.gamma.abs() < 1e-8 * norm(&w));
        assert!(d2.rho.iter().all(|&r| r.abs() < 1e-8 * norm(&w) * 10.0));
        let diff: f64 =
            d2.w_perp.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff < 1e-8 * norm(&w));
    }

    #[test]
    fn decomposition_is_deterministic() {
        let (_, basis) = small_basis(3);
        let w: Vec<f64> = (0..basis.d()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = decompose(&w, &basis).unwrap();
        let b = decompose(&w, &basis).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.w_perp, b.w_perp);
    }

    #[test]
    fn reconstruction_matches_input() {
        let (_, basis) = small_basis(4);
        let mut rng = stream(10);
        for _ in 0..20 {
            let w: Vec<f64> = (0..basis.d()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let d = decompose(&w, &basis).unwrap();
            let back = d.reconstruct(&basis);
            let err: f64 =
                back.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * norm(&w), "reconstruction error {err}");
        }
    }

    #[test]
    fn basis_scaling_leaves_reconstruction_invariant() {
        let (params, basis) = small_basis(5);
        let mut rng = stream(11);
        let w: Vec<f64> = (0..basis.d()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let d1 = decompose(&w, &basis).unwrap();
        let mut scaled = basis.xis.clone();
        for i in 0..scaled.rows() {
            let c = 1.0 + i as f64;
            for v in scaled.row_mut(i) {
                *v *= c;
            }
        }
        let basis2 = NoiseBasis::new(params.mu.clone(), scaled, 0).unwrap();
        let d2 = decompose(&w, &basis2).unwrap();
        let r1 = d1.reconstruct(&basis);
        let r2 = d2.reconstruct(&basis2);
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a - b).abs() <= 1e-8, "reconstructions differ: {a} vs {b}");
        }
    }

    #[test]
    fn manufactured_coefficients_give_infinite_ratios() {
        // gamma = +-1, rho = 0: sentinel pass with ratio = infinity.
        let n = 4;
        let mut decomps = Vec::new();
        for r in 0..10usize {
            let gamma = if r < 5 { 1.0 } else { -1.0 };
            decomps.push(SignalNoiseDecomposition {
                gamma,
                rho: vec![0.0; n],
                w_perp: vec![0.0; 8],
                basis_id: 0,
            });
        }
        let rep = verify_theorem53(&decomps, n, 16, 0.25, 3.0, 1.0).unwrap();
        assert!(rep.ratio_plus.is_infinite() && rep.ratio_minus.is_infinite());
        assert!(rep.ratio_plus_pass && rep.ratio_minus_pass);
        assert!(rep.perp_pass); // ||w_perp|| = 0 <= 1/n
        assert_eq!(rep.i_plus.len(), 2);
        assert_eq!(rep.i_minus.len(), 2);
        assert!(rep.i_plus.iter().all(|i| !rep.i_minus.contains(i)));
        assert_eq!(rep.gamma0, 1.0);
    }

    #[test]
    fn report_matches_hand_computation_on_ten_filters() {
        // 2m = 10, set size 2. gammas: 0.8, 0.6, 0.3, 0.1, 0.05, -0.04, -0.2, -0.5, -0.7, -0.9
        // max |rho| = 0.02.
        let gammas = [0.8, 0.6, 0.3, 0.1, 0.05, -0.04, -0.2, -0.5, -0.7, -0.9];
        let decomps: Vec<SignalNoiseDecomposition> = gammas
            .iter()
            .map(|&g| SignalNoiseDecomposition {
                gamma: g,
                rho: vec![0.02, -0.01],
                w_perp: vec![0.0; 4],
                basis_id: 0,
            })
            .collect();
        let q = 3.0;
        let rep = verify_theorem53(&decomps, 2, 100, 0.5, q, 1.0).unwrap();
        // I+ = {0.8, 0.6}; min strength at gamma = 0.6.
        let want_plus = 0.6f64 / (2.0f64 / 0.6).max(std::f64::consts::E).ln() / 0.02;
        assert!((rep.ratio_plus - want_plus).abs() <= 1e-12 * want_plus);
        // I- = {-0.9, -0.7}; min strength at |gamma| = 0.7.
        let want_minus = 0.7f64 / (2.0f64 / 0.7).max(std::f64::consts::E).ln() / 0.02;
        assert!((rep.ratio_minus - want_minus).abs() <= 1e-12 * want_minus);
        assert_eq!(rep.max_abs_gamma, 0.9);
        assert_eq!(rep.max_abs_rho, 0.02);
        assert_eq!(rep.gamma0, 0.8f64.min(0.9));
    }

    #[test]
    fn split_produces_disjoint_equal_banks() {
        let mut rng = stream(20);
        for _ in 0..50 {
            let (p, m) = split_filters(10, &mut rng).unwrap();
            assert_eq!(p.len(), 5);
            assert_eq!(m.len(), 5);
            let mut all: Vec<usize> = p.iter().chain(&m).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_rejects_odd_count() {
        assert!(split_filters(7, &mut stream(0)).is_err());
    }

    #[test]
    fn exact_probability_on_252_partitions() {
        // Size-4 witness sets in [10]: inclusion-exclusion gives
        // P(bad) = 2 C(6,5)/C(10,5) - 0 (both-empty impossible: would need
        // I+ inside the 5-slot negative bank and I- inside the positive one,
        // which is feasible; count it).
        let i_plus = [0usize, 1, 2, 3];
        let i_minus = [4usize, 5, 6, 7];
        let p = exact_split_event_probability(10, &i_plus, &i_minus).unwrap();
        // Independent closed form: P(no I+ in M+) = C(6,5)/C(10,5);
        // P(no I- in M-) = C(6,5)/C(10,5) by symmetry;
        // P(both) = #partitions with I+ subset M- and I- subset M+ = C(2,1)... = 2/252.
        let c10_5 = 252.0;
        let bad = 6.0 / c10_5 + 6.0 / c10_5 - 2.0 / c10_5;
        assert!((p - (1.0 - bad)).abs() < 1e-12, "p = {p}");
        assert!(p >= 1.0 - 2f64.powi(-3));
    }

    #[test]
    fn gram_rejects_dependent_basis() {
        let params = DataModelParams::axis_signal(6, 2.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut rng = stream(30);
        let base: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
        rows.push(base.clone());
        rows.push(base.iter().map(|v| v * 2.0).collect());
        let xis = Mat::from_rows(rows).unwrap();
        assert!(NoiseBasis::new(params.mu.clone(), xis, 0).is_err());
    }
}
