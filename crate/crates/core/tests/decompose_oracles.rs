//! Decomposition round-trips and Gram-solve checks against independent
//! constructions.

mod common;

use common::{gauss_solve, split_event_probability_closed_form};
use snlab_core::data::{generate_dataset, DataModelParams, DatasetKind};
use snlab_core::decompose::{
    decompose, exact_split_event_probability, NoiseBasis, SignalNoiseDecomposition,
};
use snlab_core::linalg::{axpy, dot, norm, Mat};
use snlab_core::rng::stream;

use rand::Rng;

/// Build a vector in the orthogonal complement of span{mu, xi_1..xi_n} by
/// modified Gram-Schmidt against an explicitly orthonormalized basis
/// (independent of the library's Gram solve).
fn complement_vector(mu: &[f64], xis: &Mat, rng: &mut impl Rng) -> Vec<f64> {
    let d = mu.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(xis.rows() + 1);
    let mut push = |v: Vec<f64>, basis: &mut Vec<Vec<f64>>| {
        let mut v = v;
        for b in basis.iter() {
            let c = dot(&v, b);
            axpy(-c, b, &mut v);
        }
        let n = norm(&v);
        if n > 1e-12 {
            for x in &mut v {
                *x /= n;
            }
            basis.push(v);
        }
    };
    push(mu.to_vec(), &mut basis);
    for i in 0..xis.rows() {
        push(xis.row(i).to_vec(), &mut basis);
    }
    let mut g: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
    for b in &basis {
        let c = dot(&g, b);
        axpy(-c, b, &mut g);
    }
    g
}

#[test]
fn synthesis_recovery_round_trip() {
    // Spot-check of the acceptance-scale contract at a reduced size.
    let params = DataModelParams::axis_signal(60, 3.0, 1.0).unwrap();
    let data = generate_dataset(&params, 10, DatasetKind::FinetuneLabeled, 31);
    let basis = NoiseBasis::from_dataset(&params.mu, &data).unwrap();
    let mut rng = stream(32);
    for trial in 0..25 {
        let gamma = 2.0 * (rng.gen::<f64>() - 0.5);
        let rho: Vec<f64> = (0..basis.n()).map(|_| 2.0 * (rng.gen::<f64>() - 0.5)).collect();
        let w_perp = complement_vector(&params.mu, &basis.xis, &mut rng);
        let target = SignalNoiseDecomposition {
            gamma,
            rho: rho.clone(),
            w_perp: w_perp.clone(),
            basis_id: basis.basis_id,
        };
        let w = target.reconstruct(&basis);
        let dec = decompose(&w, &basis).unwrap();
        let scale = norm(&w).max(1.0);
        assert!((dec.gamma - gamma).abs() <= 1e-8 * scale, "trial {trial}: gamma");
        for (a, b) in dec.rho.iter().zip(&rho) {
            assert!((a - b).abs() <= 1e-8 * scale.max(b.abs()), "trial {trial}: rho {a} vs {b}");
        }
        let perp_err: f64 = dec
            .w_perp
            .iter()
            .zip(&w_perp)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(perp_err <= 1e-8 * scale, "trial {trial}: w_perp error {perp_err:.3e}");
    }
}

#[test]
fn gram_solve_matches_normal_equations_oracle() {
    // n <= 12: coefficients from the library's Cholesky path vs pivoted
    // Gaussian elimination on the same normal equations.
    for (seed, n, d) in [(41u64, 4usize, 20usize), (42, 8, 30), (43, 12, 40)] {
        let params = DataModelParams::axis_signal(d, 2.5, 1.0).unwrap();
        let data = generate_dataset(&params, n, DatasetKind::FinetuneLabeled, seed);
        let basis = NoiseBasis::from_dataset(&params.mu, &data).unwrap();
        let mut rng = stream(seed ^ 0xa5);
        let w: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let dec = decompose(&w, &basis).unwrap();
        // Oracle: solve G c = E^T w by Gaussian elimination.
        let mut gram = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                *gram.at_mut(i, j) = dot(basis.xis.row(i), basis.xis.row(j));
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| dot(basis.xis.row(i), &w)).collect();
        let coeffs = gauss_solve(&gram, &rhs);
        for i in 0..n {
            let rho_oracle = coeffs[i] * basis.norms_sq[i];
            assert!(
                (dec.rho[i] - rho_oracle).abs() <= 1e-9 * rho_oracle.abs().max(1.0),
                "n={n}: rho_{i} {} vs oracle {rho_oracle}",
                dec.rho[i]
            );
        }
    }
}

#[test]
fn exact_split_probability_matches_closed_form() {
    for (count, s) in [(10usize, 4usize), (10, 2), (12, 4), (8, 3)] {
        let i_plus: Vec<usize> = (0..s).collect();
        let i_minus: Vec<usize> = (s..2 * s).collect();
        let enumerated = exact_split_event_probability(count, &i_plus, &i_minus).unwrap();
        let closed = split_event_probability_closed_form(count, s, s);
        assert!(
            (enumerated - closed).abs() <= 1e-12,
            "2m={count}, |I|={s}: enumerated {enumerated} vs closed form {closed}"
        );
    }
}
