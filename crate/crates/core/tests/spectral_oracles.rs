//! Kernel assembly, eigensolver, and update-identity checks against
//! independent oracles.

mod common;

use common::{brute_force_kernel, jacobi_eigenvalues};
use snlab_core::data::{augment_dataset, generate_dataset, DataModelParams, DatasetKind};
use snlab_core::linalg::Mat;
use snlab_core::pretrain::{init_filters, pretrain_run, PretrainConfig};
use snlab_core::spectral::{
    build_kernel, residual_xi_from_weights, top_eigenpairs, EIGEN_MAX_ITER, EIGEN_TOL,
};
use snlab_core::rng::stream;

use rand::Rng;

#[test]
fn fast_kernel_matches_quadratic_loop_small() {
    // n0 = 2, d = 3 first (the hand-checkable case), then a sweep of sizes.
    for (seed, n0, d) in [(1u64, 2usize, 3usize), (2, 5, 8), (3, 16, 32), (4, 9, 16)] {
        let params = DataModelParams::axis_signal(d, 2.0, 1.0).unwrap();
        let data = generate_dataset(&params, n0, DatasetKind::PretrainUnlabeled, seed);
        let aug = augment_dataset(&data, &params, seed ^ 0xff);
        let kernel = build_kernel(&data, &aug, &params.mu, 0.07, 0.5).unwrap();
        let brute = brute_force_kernel(&data, &aug, 0.07, 0.5);
        let diff = kernel.a.sub(&brute);
        let rel = diff.frobenius_norm() / brute.frobenius_norm().max(1e-300);
        let tol = if n0 == 2 { 1e-12 } else { 1e-10 };
        assert!(rel <= tol, "n0={n0} d={d}: relative Frobenius error {rel:.3e}");
    }
}

#[test]
fn eigenvalues_match_jacobi_oracle_on_random_8x8() {
    let mut rng = stream(42);
    for _ in 0..5 {
        let mut a = Mat::zeros(8, 8);
        for i in 0..8 {
            for j in i..8 {
                let v = rng.gen::<f64>() * 2.0 - 1.0;
                *a.at_mut(i, j) = v;
                *a.at_mut(j, i) = v;
            }
        }
        let (vals, _) = top_eigenpairs(&a, 8, EIGEN_TOL, EIGEN_MAX_ITER).unwrap();
        let oracle = jacobi_eigenvalues(&a, 100);
        for (x, y) in vals.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-9, "eigenvalue {x} vs jacobi {y}");
        }
    }
}

#[test]
fn eigen_residuals_meet_invariant() {
    let params = DataModelParams::axis_signal(24, 3.0, 1.0).unwrap();
    let data = generate_dataset(&params, 12, DatasetKind::PretrainUnlabeled, 5);
    let aug = augment_dataset(&data, &params, 6);
    let kernel = build_kernel(&data, &aug, &params.mu, 0.05, 0.5).unwrap();
    let (vals, vecs) = top_eigenpairs(&kernel.a, 6, EIGEN_TOL, EIGEN_MAX_ITER).unwrap();
    let fro = kernel.a.frobenius_norm();
    for (lambda, v) in vals.iter().zip(&vecs) {
        let av = kernel.a.matvec(v);
        let resid: f64 = av
            .iter()
            .zip(v)
            .map(|(x, y)| (x - lambda * y) * (x - lambda * y))
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 1e-8 * fro, "residual {resid:.3e} vs 1e-8 * {fro:.3e}");
    }
    // Pairwise orthogonality within 1e-8.
    for i in 0..vecs.len() {
        for j in (i + 1)..vecs.len() {
            let ip: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            assert!(ip.abs() <= 1e-8, "eigenvectors {i},{j} not orthogonal: {ip:.3e}");
        }
    }
}

#[test]
fn xi_reconstructs_every_gd_step_exactly() {
    // Small instance: the identity w^(t+1) = (I + A + Xi^(t)) w^(t) must hold
    // entrywise at every step.
    let params = DataModelParams::axis_signal(8, 2.0, 1.0).unwrap();
    let data = generate_dataset(&params, 6, DatasetKind::PretrainUnlabeled, 11);
    let aug = augment_dataset(&data, &params, 12);
    let config = PretrainConfig { m: 2, tau: 0.5, eta: 0.05, sigma0: 0.1, iterations: 8, seed: 13 };
    let state = init_filters(&config, 8, &mut stream(13));
    let kernel = build_kernel(&data, &aug, &params.mu, config.eta, config.tau).unwrap();
    let mut worst: f64 = 0.0;
    pretrain_run(state, &data, &aug, &config, |info| {
        let (xi, _) = residual_xi_from_weights(&kernel, info.weights);
        for r in 0..info.filters_before.rows() {
            let w = info.filters_before.row(r);
            let aw = kernel.a.matvec(w);
            let xw = xi.matvec(w);
            for (k, ((wv, av), xv)) in w.iter().zip(&aw).zip(&xw).enumerate() {
                let predicted = wv + av + xv;
                let actual = info.filters_after.at(r, k);
                worst = worst.max((predicted - actual).abs());
            }
        }
    })
    .unwrap();
    assert!(worst <= 1e-9, "worst one-step reconstruction error {worst:.3e}");
}

#[test]
fn xi_spectral_norm_small_at_tiny_sigma0() {
    // sigma0 = 1e-4 at a reduced scale: ||Xi^(0)||_2 <= sigma0 ||A||_2.
    let params = DataModelParams::axis_signal(50, 4.0, 1.0).unwrap();
    let data = generate_dataset(&params, 30, DatasetKind::PretrainUnlabeled, 21);
    let aug = augment_dataset(&data, &params, 22);
    let config = PretrainConfig { m: 4, tau: 0.5, eta: 0.01, sigma0: 1e-4, iterations: 1, seed: 23 };
    let state = init_filters(&config, 50, &mut stream(23));
    let kernel = build_kernel(&data, &aug, &params.mu, config.eta, config.tau).unwrap();
    let (_, xi_norm) = snlab_core::spectral::residual_xi(&kernel, &state, &data, &aug).unwrap();
    let a_norm = snlab_core::spectral::spectral_norm_sym(&kernel.a);
    assert!(
        xi_norm <= config.sigma0 * a_norm,
        "||Xi^(0)|| = {xi_norm:.3e} vs sigma0 ||A|| = {:.3e}",
        config.sigma0 * a_norm
    );
}
