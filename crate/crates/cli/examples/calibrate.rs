//! Scratch calibration runs for the acceptance thresholds. Not part of the
//! test suite; run with `cargo run --release -p snlab-cli --example calibrate -- <what>`.

use std::time::Instant;

use snlab_core::data::{augment_dataset, generate_dataset, DataModelParams, DatasetKind};
use snlab_core::linalg::cosine;
use snlab_core::pretrain::{
    compute_t_simclr, default_pretrain_eta, init_filters, pretrain_run, PretrainConfig,
};
use snlab_core::rng::{derive_seed, stream};
use snlab_core::spectral::{
    analyze_kernel, build_kernel, power_surrogate, residual_xi_from_weights, spectral_norm_sym,
};

fn synthetic_params() -> DataModelParams {
    DataModelParams::axis_signal(400, 10.0, 2.0).unwrap()
}

fn spectral_scan() {
    let params = synthetic_params();
    let snr = params.snr().unwrap();
    for n0 in [50usize, 200, 800, 2000] {
        let mut l21 = Vec::new();
        let mut align = Vec::new();
        let mut perp = Vec::new();
        let mut eps = Vec::new();
        let t0 = Instant::now();
        for seed in 0..10u64 {
            let data = generate_dataset(&params, n0, DatasetKind::PretrainUnlabeled, derive_seed(seed, "d", 0));
            let aug = augment_dataset(&data, &params, derive_seed(seed, "a", 0));
            let eta = default_pretrain_eta(&params);
            let k = build_kernel(&data, &aug, &params.mu, eta, 0.5).unwrap();
            let rep = analyze_kernel(&k, 4).unwrap();
            l21.push(rep.eigenvalues[1] / rep.eigenvalues[0]);
            align.push(rep.mu_alignment);
            perp.push(rep.perp_residual);
            eps.push(rep.eps_hat);
        }
        let med = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        println!(
            "n0 {n0}: median l2/l1 {:.4}, align {:.4}, perp {:.4}, eps_hat {:.4}  ({:?})",
            med(&mut l21),
            med(&mut align),
            med(&mut perp),
            med(&mut eps),
            t0.elapsed()
        );
    }
    println!("snr = {snr}");
}

fn xi_scan() {
    let params = synthetic_params();
    let n0 = 250;
    for seed in [1u64, 2, 3] {
        let data = generate_dataset(&params, n0, DatasetKind::PretrainUnlabeled, derive_seed(seed, "d", 0));
        let aug = augment_dataset(&data, &params, derive_seed(seed, "a", 0));
        let eta = default_pretrain_eta(&params);
        let config = PretrainConfig { m: 40, tau: 0.5, eta, sigma0: 1e-4, iterations: 50, seed };
        let state = init_filters(&config, 400, &mut stream(derive_seed(seed, "i", 0)));
        let kernel = build_kernel(&data, &aug, &params.mu, eta, 0.5).unwrap();
        let norm_a = spectral_norm_sym(&kernel.a);
        let mut worst_recon: f64 = 0.0;
        let mut xi0: f64 = f64::NAN;
        let mut worst_ratio: f64 = 0.0;
        let t0 = Instant::now();
        pretrain_run(state, &data, &aug, &config, |info| {
            let (xi, xin) = residual_xi_from_weights(&kernel, info.weights);
            if info.step == 0 {
                xi0 = xin;
            }
            worst_ratio = worst_ratio.max(xin / (config.sigma0 * norm_a));
            for r in 0..info.filters_before.rows() {
                let w = info.filters_before.row(r);
                let aw = kernel.a.matvec(w);
                let xw = xi.matvec(w);
                for (c, ((wv, av), xv)) in w.iter().zip(&aw).zip(&xw).enumerate() {
                    worst_recon = worst_recon.max((wv + av + xv - info.filters_after.at(r, c)).abs());
                }
            }
        })
        .unwrap();
        println!(
            "seed {seed}: ||Xi0|| {:.4e} vs bound {:.4e} (ratio {:.3}), max recon err {:.3e}, max ratio over 50 steps {:.3}, ||A|| {:.4e}  ({:?})",
            xi0,
            config.sigma0 * norm_a,
            xi0 / (config.sigma0 * norm_a),
            worst_recon,
            worst_ratio,
            norm_a,
            t0.elapsed()
        );
    }
}

fn surrogate_scan() {
    let params = synthetic_params();
    let n0 = 250;
    let snr = params.snr().unwrap();
    for seed in [1u64, 2, 3] {
        let data = generate_dataset(&params, n0, DatasetKind::PretrainUnlabeled, derive_seed(seed, "d", 0));
        let aug = augment_dataset(&data, &params, derive_seed(seed, "a", 0));
        let eta = default_pretrain_eta(&params);
        let kernel = build_kernel(&data, &aug, &params.mu, eta, 0.5).unwrap();
        let rep = analyze_kernel(&kernel, 2).unwrap();
        let norm_a = spectral_norm_sym(&kernel.a);
        let t_simclr = compute_t_simclr(
            1.0,
            1e-4,
            40,
            snr,
            400,
            40,
            3.0,
            norm_a,
            rep.eps_hat.clamp(0.0, 0.9),
        )
        .unwrap();
        println!("seed {seed}: T_SimCLR = {t_simclr}, eps_hat {:.4}, ||A|| {:.4e}", rep.eps_hat, norm_a);
        let config = PretrainConfig { m: 40, tau: 0.5, eta, sigma0: 1e-4, iterations: t_simclr, seed };
        let state0 = init_filters(&config, 400, &mut stream(derive_seed(seed, "i", 0)));
        let surr = power_surrogate(&state0.filters, &kernel.a, t_simclr).unwrap();
        let mut min_cos_per_step = Vec::with_capacity(t_simclr);
        let t0 = Instant::now();
        pretrain_run(state0, &data, &aug, &config, |info| {
            let s = &surr[info.step];
            let mut min_cos = f64::INFINITY;
            for r in 0..s.rows() {
                min_cos = min_cos.min(cosine(s.row(r), info.filters_after.row(r)));
            }
            min_cos_per_step.push(min_cos);
        })
        .unwrap();
        let overall = min_cos_per_step.iter().cloned().fold(f64::INFINITY, f64::min);
        let first_below = min_cos_per_step.iter().position(|&c| c < 0.99);
        println!(
            "  min cosine over all filters/steps: {overall:.6}; first step below 0.99: {first_below:?}; elapsed {:?}",
            t0.elapsed()
        );
        // Where does the loss plateau?
        let idx = [0, t_simclr / 4, t_simclr / 2, 3 * t_simclr / 4, t_simclr];
        print!("  loss at steps");
        for &i in &idx {
            print!(" {i}");
        }
        println!();
    }
}

fn pipeline_scan() {
    use snlab_cli::config::ExperimentConfig;
    use snlab_cli::harness::{run_experiment, RunScope};
    let base = r#"
seed = 0
n0 = 250
n = 40
test_size = 400

[data]
kind = "synthetic"
d = 400
mu_norm = 10.0
sigma_p = 2.0

[pretrain]
m = 40
sigma0 = 1e-4

[finetune]
t_star_cap = 50000
record_every = 500
"#;
    for seed in 0..5u64 {
        let mut cfg = ExperimentConfig::from_toml_str(base).unwrap();
        cfg.seed = derive_seed(seed, "cal8", 0);
        let t0 = Instant::now();
        let outcome = run_experiment(&cfg, None, RunScope::Full).unwrap();
        let s = outcome.simclr.unwrap();
        let b = outcome.baseline.unwrap();
        println!(
            "seed {seed}: T_pre {} | simclr steps {} train {:.4} test_loss {:.4} err {:.4} | baseline steps {} train {:.4} test_loss {:.4} err {:.4} | gamma0 {:.4} | {:?}",
            outcome.pretrain_iterations,
            s.steps_run,
            s.final_train_loss,
            s.final_test_loss,
            s.final_test_error,
            b.steps_run,
            b.final_train_loss,
            b.final_test_loss,
            b.final_test_error,
            outcome.gamma0_split,
            t0.elapsed()
        );
    }
}

fn main() {
    let what = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    match what.as_str() {
        "spectral" => spectral_scan(),
        "xi" => xi_scan(),
        "surrogate" => surrogate_scan(),
        "pipeline" => pipeline_scan(),
        _ => {
            xi_scan();
            spectral_scan();
            surrogate_scan();
            pipeline_scan();
        }
    }
}
