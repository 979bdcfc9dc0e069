//! Seed/temperature scan of the step-0 residual-norm ratio.

use snlab_core::data::{augment_dataset, generate_dataset, DataModelParams, DatasetKind};
use snlab_core::pretrain::{default_pretrain_eta, init_filters, similarity_scores, PretrainConfig, SoftmaxWeights};
use snlab_core::rng::{derive_seed, stream};
use snlab_core::spectral::{build_kernel, residual_xi_from_weights, spectral_norm_sym};

fn main() {
    let params = DataModelParams::axis_signal(400, 10.0, 2.0).unwrap();
    let n0 = 250;
    for tau in [0.5f64, 1.0, 2.0] {
        for sigma0 in [1e-4f64, 3e-5] {
            let mut ratios = Vec::new();
            for seed in 0..20u64 {
                let data = generate_dataset(&params, n0, DatasetKind::PretrainUnlabeled, derive_seed(seed, "d", 0));
                let aug = augment_dataset(&data, &params, derive_seed(seed, "a", 0));
                let eta = default_pretrain_eta(&params);
                let config = PretrainConfig { m: 40, tau, eta, sigma0, iterations: 1, seed };
                let state = init_filters(&config, 400, &mut stream(derive_seed(seed, "i", 0)));
                let kernel = build_kernel(&data, &aug, &params.mu, eta, tau).unwrap();
                let norm_a = spectral_norm_sym(&kernel.a);
                let scores = similarity_scores(&state, &data, &aug).unwrap();
                let weights = SoftmaxWeights::from_scores(&scores, tau).unwrap();
                let (_, xin) = residual_xi_from_weights(&kernel, &weights);
                ratios.push(xin / (sigma0 * norm_a));
            }
            ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pass = ratios.iter().filter(|&&r| r <= 1.0).count();
            println!(
                "tau {tau} sigma0 {sigma0:.0e}: ratio min {:.3} med {:.3} max {:.3}, pass {}/20",
                ratios[0],
                ratios[10],
                ratios[19],
                pass
            );
        }
    }
}
