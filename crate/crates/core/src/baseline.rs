//! Direct supervised learning baseline: Gaussian initialization plus the
//! exact same training loop as the fine-tuning stage. Only initialization
//! differs between the two pipelines.

use serde::Serialize;

use crate::data::{generate_dataset, DataModelParams, Dataset, DatasetKind};
use crate::finetune::{init_gaussian, train, FinetuneConfig, FinetuneState, TrackMode, TrainSummary};
use crate::rng::derive_seed;
use crate::rng::stream;
use crate::Result;

/// Sample-complexity condition values recorded with every baseline run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BaselineConditions {
    /// `n * SNR^q`; large values put direct supervision in the benign regime.
    pub n_snr_q: f64,
    /// `n^-1 * SNR^-q`; large values predict constant-order test loss.
    pub inv_n_snr_q: f64,
}

#[derive(Debug)]
pub struct BaselineOutput {
    pub state: FinetuneState,
    pub summary: TrainSummary,
    pub conditions: BaselineConditions,
}

/// Gaussian-initialize with `sigma0` and train on the given labeled data
/// with the shared fine-tuning loop.
pub fn run_baseline_on(
    params: &DataModelParams,
    data: &Dataset,
    sigma0: f64,
    config: &FinetuneConfig,
    record_every: usize,
) -> Result<BaselineOutput> {
    let snr = params.snr()?;
    let n = data.len();
    let mut state = init_gaussian(
        config.m,
        params.d(),
        sigma0,
        &mut stream(derive_seed(config.seed, "baseline-init", 0)),
    );
    let summary = train(
        &mut state,
        data,
        params,
        config,
        TrackMode::Off,
        None,
        record_every,
        |_| {},
    )?;
    let conditions = BaselineConditions {
        n_snr_q: n as f64 * snr.powf(config.q),
        inv_n_snr_q: 1.0 / (n as f64 * snr.powf(config.q)),
    };
    Ok(BaselineOutput { state, summary, conditions })
}

/// Generate `n` labeled samples and run the baseline on them.
pub fn run_baseline(
    params: &DataModelParams,
    n: usize,
    sigma0: f64,
    config: &FinetuneConfig,
    record_every: usize,
) -> Result<(BaselineOutput, Dataset)> {
    let data = generate_dataset(
        params,
        n,
        DatasetKind::FinetuneLabeled,
        derive_seed(config.seed, "baseline-data", 0),
    );
    let out = run_baseline_on(params, &data, sigma0, config, record_every)?;
    Ok((out, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_eta_gives_flat_history() {
        let params = DataModelParams::axis_signal(20, 3.0, 1.0).unwrap();
        let config = FinetuneConfig {
            m: 2,
            q: 3.0,
            eta: 0.0,
            iterations: 5,
            t_star_cap: 100,
            epsilon_target: 1e-12,
            test_size: 10,
            seed: 3,
        };
        let (out, _) = run_baseline(&params, 8, 0.05, &config, 1).unwrap();
        let first = out.state.history.first().unwrap().train_loss;
        for r in &out.state.history {
            assert_eq!(r.train_loss, first);
        }
    }

    #[test]
    fn condition_values_match_definition() {
        let params = DataModelParams::axis_signal(400, 10.0, 2.0).unwrap(); // SNR 0.25
        let config = FinetuneConfig {
            m: 2,
            q: 3.0,
            eta: 0.001,
            iterations: 1,
            t_star_cap: 10,
            epsilon_target: 0.05,
            test_size: 10,
            seed: 4,
        };
        let (out, _) = run_baseline(&params, 40, 1e-4, &config, 1).unwrap();
        assert!((out.conditions.n_snr_q - 40.0 * 0.015625).abs() < 1e-12);
        assert!((out.conditions.inv_n_snr_q - 1.6).abs() < 1e-12);
    }
}
