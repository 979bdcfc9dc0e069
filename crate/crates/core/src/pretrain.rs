//! SimCLR pre-training of a linear CNN.
//!
//! The linear CNN feature is `[F(W,x)]_r = <w_r, x^(1)> + <w_r, x^(2)>`, so
//! every similarity score is a function of the patch sums `z_i = y_i mu + xi_i`
//! and `z~_i = y_i mu + xi~_i`. The loss is the temperature-scaled softmax
//! over one positive pair and `n0 - 1` negatives per anchor, and the gradient
//! is implemented in closed form as scalar-weighted rank-one actions on each
//! filter (never materializing d x d matrices).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataModelParams, Dataset, SamplePair};
use crate::linalg::{axpy, dot, Mat};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCLR";
const CHECKPOINT_VERSION: u32 = 1;

/// Loss values above this abort the run as divergent.
pub const DIVERGENCE_LOSS_CAP: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Half the filter count; the bank holds `2m` filters.
    pub m: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// Gradient descent learning rate.
    pub eta: f64,
    /// Gaussian initialization scale.
    pub sigma0: f64,
    /// Number of gradient descent steps.
    pub iterations: usize,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParam("m must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParam(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParam(format!("eta = {} must be > 0", self.eta)));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(Error::InvalidParam(format!("sigma0 = {} must be >= 0", self.sigma0)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Default pre-training learning rate: `0.1 * min((sigma_p^2 d)^-1, ||mu||^-2)`.
pub fn default_pretrain_eta(params: &DataModelParams) -> f64 {
    let mu_sq = params.mu_norm() * params.mu_norm();
    let noise_sq = params.sigma_p * params.sigma_p * params.d() as f64;
    let cap = if noise_sq > 0.0 { (1.0 / noise_sq).min(1.0 / mu_sq) } else { 1.0 / mu_sq };
    0.1 * cap
}

#[derive(Debug, Clone)]
pub struct PretrainState {
    /// `2m x d` filter bank, one filter per row.
    pub filters: Mat,
    pub step: usize,
    pub loss_history: Vec<f64>,
}

impl PretrainState {
    pub fn num_filters(&self) -> usize {
        self.filters.rows()
    }

    pub fn d(&self) -> usize {
        self.filters.cols()
    }
}

/// Gaussian initialization: `2m` filters with i.i.d. `N(0, sigma0^2)` entries.
pub fn init_filters<R: Rng>(config: &PretrainConfig, d: usize, rng: &mut R) -> PretrainState {
    let mut filters = Mat::zeros(2 * config.m, d);
    for v in filters.as_mut_slice() {
        *v = config.sigma0 * rng.sample::<f64, _>(StandardNormal);
    }
    PretrainState { filters, step: 0, loss_history: Vec::new() }
}

/// `[F(W,x)]_r = <w_r, patch1> + <w_r, patch2>`.
pub fn feature(state: &PretrainState, sample: &SamplePair) -> Result<Vec<f64>> {
    if sample.d() != state.d() {
        return Err(Error::DimensionMismatch { expected: state.d(), got: sample.d() });
    }
    let z = sample.patch_sum();
    Ok((0..state.num_filters()).map(|r| dot(state.filters.row(r), &z)).collect())
}

/// Row `i` holds the patch sum `z_i` of sample `i`.
pub fn patch_sums(data: &Dataset) -> Mat {
    let n = data.len();
    let d = data.samples.first().map_or(0, |s| s.d());
    let mut z = Mat::zeros(n, d);
    for (i, s) in data.samples.iter().enumerate() {
        let row = z.row_mut(i);
        for (v, (a, b)) in row.iter_mut().zip(s.patch1.iter().zip(&s.patch2)) {
            *v = a + b;
        }
    }
    z
}

/// Feature matrix: `F[i][r] = <w_r, z_i>` for every sample.
fn features(filters: &Mat, z: &Mat) -> Mat {
    let n = z.rows();
    let k = filters.rows();
    let mut f = Mat::zeros(n, k);
    for i in 0..n {
        let zi = z.row(i);
        let row = f.row_mut(i);
        for r in 0..k {
            row[r] = dot(filters.row(r), zi);
        }
    }
    f
}

/// Similarity scores: positive pairs `sim_i` and the cross matrix
/// `sim_{i,i'}` (diagonal fixed to 0 by convention; symmetric).
#[derive(Debug, Clone)]
pub struct Scores {
    pub sim: Vec<f64>,
    pub sim_cross: Mat,
}

pub fn similarity_scores(state: &PretrainState, data: &Dataset, augmented: &Dataset) -> Result<Scores> {
    if data.len() != augmented.len() {
        return Err(Error::SizeMismatch(data.len(), augmented.len()));
    }
    let z = patch_sums(data);
    let zt = patch_sums(augmented);
    Ok(scores_from_patch_sums(&state.filters, &z, &zt))
}

fn scores_from_patch_sums(filters: &Mat, z: &Mat, zt: &Mat) -> Scores {
    let n = z.rows();
    let f = features(filters, z);
    let ft = features(filters, zt);
    let sim: Vec<f64> = (0..n).map(|i| dot(f.row(i), ft.row(i))).collect();
    let mut cross = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dot(f.row(i), f.row(j));
            *cross.at_mut(i, j) = v;
            *cross.at_mut(j, i) = v;
        }
    }
    Scores { sim, sim_cross: cross }
}

/// Per-anchor softmax bookkeeping at temperature `tau`, cached so the loss,
/// the gradient, and the residual matrix `Xi` all share one computation.
#[derive(Debug, Clone)]
pub struct SoftmaxWeights {
    pub tau: f64,
    /// `sim_i / tau`.
    pub s_pos: Vec<f64>,
    /// Per-anchor log-sum-exp over the positive and all negatives.
    pub lse: Vec<f64>,
    /// `softmax_i`: probability mass on the positive pair.
    pub pos: Vec<f64>,
    /// `pair[i][i'] = exp(sim_{i,i'} / tau) / denom_i`, diagonal 0.
    pub pair: Mat,
}

impl SoftmaxWeights {
    pub fn from_scores(scores: &Scores, tau: f64) -> Result<Self> {
        let n = scores.sim.len();
        let mut s_pos = Vec::with_capacity(n);
        let mut lse = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut pair = Mat::zeros(n, n);
        for i in 0..n {
            let sp = scores.sim[i] / tau;
            if !sp.is_finite() {
                return Err(Error::NonFinite("similarity score"));
            }
            let mut mx = sp;
            for j in 0..n {
                if j != i {
                    let s = scores.sim_cross.at(i, j) / tau;
                    if !s.is_finite() {
                        return Err(Error::NonFinite("similarity score"));
                    }
                    mx = mx.max(s);
                }
            }
            let mut sum = (sp - mx).exp();
            for j in 0..n {
                if j != i {
                    sum += ((scores.sim_cross.at(i, j) / tau) - mx).exp();
                }
            }
            let l = mx + sum.ln();
            for j in 0..n {
                if j != i {
                    *pair.at_mut(i, j) = ((scores.sim_cross.at(i, j) / tau) - l).exp();
                }
            }
            pos.push((sp - l).exp());
            s_pos.push(sp);
            lse.push(l);
        }
        Ok(SoftmaxWeights { tau, s_pos, lse, pos, pair })
    }

    /// `L = mean_i (lse_i - sim_i / tau)`.
    pub fn loss(&self) -> f64 {
        if self.s_pos.is_empty() {
            return 0.0;
        }
        let n = self.s_pos.len() as f64;
        self.lse.iter().zip(&self.s_pos).map(|(l, s)| l - s).sum::<f64>() / n
    }
}

/// SimCLR loss with log-sum-exp stabilization.
pub fn simclr_loss(state: &PretrainState, data: &Dataset, augmented: &Dataset, tau: f64) -> Result<f64> {
    let scores = similarity_scores(state, data, augmented)?;
    Ok(SoftmaxWeights::from_scores(&scores, tau)?.loss())
}

/// Closed-form SimCLR gradient,
/// `(1/(n0 tau)) sum_i sum_{i'!=i} p_{i,i'} (z_i z_{i'}^T + z_{i'} z_i^T - z_i z~_i^T - z~_i z_i^T) w_r`,
/// evaluated through per-filter scalar coefficients on the `z` vectors.
pub fn simclr_gradient(state: &PretrainState, data: &Dataset, augmented: &Dataset, tau: f64) -> Result<Mat> {
    if data.len() != augmented.len() {
        return Err(Error::SizeMismatch(data.len(), augmented.len()));
    }
    let z = patch_sums(data);
    let zt = patch_sums(augmented);
    let scores = scores_from_patch_sums(&state.filters, &z, &zt);
    let weights = SoftmaxWeights::from_scores(&scores, tau)?;
    gradient_from_weights(&state.filters, &z, &zt, &weights)
}

fn gradient_from_weights(filters: &Mat, z: &Mat, zt: &Mat, weights: &SoftmaxWeights) -> Result<Mat> {
    let n = z.rows();
    let d = z.cols();
    let k = filters.rows();
    let mut grad = Mat::zeros(k, d);
    if n == 0 {
        return Ok(grad);
    }
    let f = features(filters, z);
    let ft = features(filters, zt);
    // p_total_i = sum_{i'!=i} p_{i,i'} = 1 - softmax_i.
    let p_total: Vec<f64> = weights.pos.iter().map(|&s| 1.0 - s).collect();
    let inv = 1.0 / (n as f64 * weights.tau);
    for r in 0..k {
        let a: Vec<f64> = (0..n).map(|i| f.at(i, r)).collect();
        let at: Vec<f64> = (0..n).map(|i| ft.at(i, r)).collect();
        // q_i = sum_{i'} p_{i,i'} a_{i'};  s_i = sum_{i'} p_{i',i} a_{i'}.
        let q = weights.pair.matvec(&a);
        let s = weights.pair.matvec_t(&a);
        let row = grad.row_mut(r);
        for i in 0..n {
            let cz = inv * (q[i] + s[i] - p_total[i] * at[i]);
            if cz != 0.0 {
                axpy(cz, z.row(i), row);
            }
            let czt = -inv * p_total[i] * a[i];
            if czt != 0.0 {
                axpy(czt, zt.row(i), row);
            }
        }
    }
    Ok(grad)
}

/// What a per-step hook sees: the state *before* the update, the softmax
/// weights used for it, and the filters produced by it.
pub struct StepInfo<'a> {
    pub step: usize,
    pub loss: f64,
    pub filters_before: &'a Mat,
    pub weights: &'a SoftmaxWeights,
    pub filters_after: &'a Mat,
}

/// Run `config.iterations` gradient descent steps: `W <- W - eta * grad L`.
///
/// The hook fires once per step; the final state reports `step = iterations`
/// and a loss history with `iterations + 1` entries (initial loss included).
pub fn pretrain_run<F>(
    mut state: PretrainState,
    data: &Dataset,
    augmented: &Dataset,
    config: &PretrainConfig,
    mut hook: F,
) -> Result<PretrainState>
where
    F: FnMut(&StepInfo<'_>),
{
    if data.len() != augmented.len() {
        return Err(Error::SizeMismatch(data.len(), augmented.len()));
    }
    let z = patch_sums(data);
    let zt = patch_sums(augmented);
    for _ in 0..config.iterations {
        let scores = scores_from_patch_sums(&state.filters, &z, &zt);
        let weights = SoftmaxWeights::from_scores(&scores, config.tau)?;
        let loss = weights.loss();
        if !loss.is_finite() || loss > DIVERGENCE_LOSS_CAP {
            return Err(Error::Diverged { step: state.step, loss });
        }
        state.loss_history.push(loss);
        let grad = gradient_from_weights(&state.filters, &z, &zt, &weights)?;
        let mut next = state.filters.clone();
        for (w, g) in next.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *w -= config.eta * g;
        }
        hook(&StepInfo {
            step: state.step,
            loss,
            filters_before: &state.filters,
            weights: &weights,
            filters_after: &next,
        });
        state.filters = next;
        state.step += 1;
    }
    let scores = scores_from_patch_sums(&state.filters, &z, &zt);
    let final_loss = SoftmaxWeights::from_scores(&scores, config.tau)?.loss();
    if !final_loss.is_finite() || final_loss > DIVERGENCE_LOSS_CAP {
        return Err(Error::Diverged { step: state.step, loss: final_loss });
    }
    state.loss_history.push(final_loss);
    Ok(state)
}

pub fn no_hook(_: &StepInfo<'_>) {}

/// Pre-training horizon
/// `T = ceil((log[288 M^{1/(q-2)} log(1/sigma0)^{1/(q-2)} sqrt(log(dn) log(md))]
///            - log[n^{1/(q-2)} SNR^{q/(q-2)}]) / log(1 + (1 - eps) ||A||_2))`,
/// clamped to 1 when the numerator is nonpositive.
#[allow(clippy::too_many_arguments)]
pub fn compute_t_simclr(
    big_m: f64,
    sigma0: f64,
    n: usize,
    snr: f64,
    d: usize,
    m: usize,
    q: f64,
    norm_a: f64,
    eps_hat: f64,
) -> Result<usize> {
    if q <= 2.0 {
        return Err(Error::InvalidParam(format!("q = {q} must be > 2")));
    }
    if !(big_m > 0.0) || !(snr > 0.0) || !(norm_a > 0.0) {
        return Err(Error::InvalidParam("M, SNR and ||A|| must be positive".into()));
    }
    if !(sigma0 > 0.0 && sigma0 < 1.0) {
        return Err(Error::InvalidParam(format!("sigma0 = {sigma0} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&eps_hat) {
        return Err(Error::InvalidParam(format!("eps_hat = {eps_hat} must lie in [0, 1)")));
    }
    let e = 1.0 / (q - 2.0);
    let log_dn = ((d * n) as f64).ln();
    let log_md = ((m * d) as f64).ln();
    if log_dn <= 0.0 || log_md <= 0.0 {
        return Err(Error::InvalidParam("d*n and m*d must exceed 1".into()));
    }
    let numerator = (288.0 * big_m.powf(e) * (1.0 / sigma0).ln().powf(e) * (log_dn * log_md).sqrt())
        .ln()
        - ((n as f64).powf(e) * snr.powf(q * e)).ln();
    if numerator <= 0.0 {
        return Ok(1);
    }
    let denominator = (1.0 + (1.0 - eps_hat) * norm_a).ln();
    Ok((numerator / denominator).ceil().max(1.0) as usize)
}

// ---------------------------------------------------------------------------
// Persistence.
// ---------------------------------------------------------------------------

/// Checkpoint: magic "SCLR", version, 2m, d, step, then row-major f64 filters.
pub fn write_checkpoint<W: Write>(state: &PretrainState, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(state.num_filters() as u32)?;
    w.write_u32::<LittleEndian>(state.d() as u32)?;
    w.write_u64::<LittleEndian>(state.step as u64)?;
    for &v in state.filters.as_slice() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PretrainState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, want SCLR")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let step = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * d];
    for v in &mut data {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(PretrainState { filters: Mat::from_flat(rows, d, data)?, step, loss_history: Vec::new() })
}

pub fn save_checkpoint(state: &PretrainState, path: &Path) -> Result<()> {
    write_checkpoint(state, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<PretrainState> {
    read_checkpoint(BufReader::new(std::fs::File::open(path)?))
}

pub const LOSS_HISTORY_HEADER: &str = "step,loss";

pub fn write_loss_history<W: Write>(history: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "{LOSS_HISTORY_HEADER}")?;
    for (step, loss) in history.iter().enumerate() {
        writeln!(w, "{step},{loss}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, augment_dataset, DatasetKind};
    use crate::rng::stream;

    fn tiny_setup(n: usize, d: usize, m: usize, sigma0: f64, seed: u64) -> (DataModelParams, Dataset, Dataset, PretrainState) {
        let params = DataModelParams::axis_signal(d, 2.0, 1.0).unwrap();
        let data = generate_dataset(&params, n, DatasetKind::PretrainUnlabeled, seed);
        let aug = augment_dataset(&data, &params, seed ^ 0xabcd);
        let config = PretrainConfig { m, tau: 0.5, eta: 0.01, sigma0, iterations: 1, seed };
        let state = init_filters(&config, d, &mut stream(seed.wrapping_add(1)));
        (params, data, aug, state)
    }

    #[test]
    fn zero_sigma0_gives_zero_filters() {
        let config = PretrainConfig { m: 3, tau: 0.5, eta: 0.1, sigma0: 0.0, iterations: 1, seed: 0 };
        let state = init_filters(&config, 7, &mut stream(0));
        assert!(state.filters.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(state.step, 0);
        assert_eq!(state.num_filters(), 6);
    }

    #[test]
    fn init_variance_is_consistent() {
        let config = PretrainConfig { m: 250, tau: 0.5, eta: 0.1, sigma0: 0.3, iterations: 1, seed: 0 };
        let state = init_filters(&config, 200, &mut stream(5));
        let var: f64 = state.filters.as_slice().iter().map(|v| v * v).sum::<f64>()
            / state.filters.as_slice().len() as f64;
        assert!((var - 0.09).abs() <= 0.05 * 0.09, "var = {var}");
    }

    #[test]
    fn init_is_deterministic_for_fixed_seed() {
        let config = PretrainConfig { m: 4, tau: 0.5, eta: 0.1, sigma0: 0.2, iterations: 1, seed: 9 };
        let a = init_filters(&config, 11, &mut stream(9));
        let b = init_filters(&config, 11, &mut stream(9));
        assert_eq!(a.filters.as_slice(), b.filters.as_slice());
    }

    #[test]
    fn feature_of_zero_filters_is_zero() {
        let (_, data, _, mut state) = tiny_setup(3, 5, 2, 0.1, 1);
        state.filters.scale(0.0);
        let f = feature(&state, &data.samples[0]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_hand_arithmetic_single_filter() {
        // w = e1, patches (e1, 2 e1) -> feature = [3].
        let filters = Mat::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let state = PretrainState { filters, step: 0, loss_history: Vec::new() };
        let sample = SamplePair {
            patch1: vec![1.0, 0.0],
            patch2: vec![2.0, 0.0],
            label: 1,
            signal_position: 1,
        };
        assert_eq!(feature(&state, &sample).unwrap(), vec![3.0]);
    }

    #[test]
    fn feature_rejects_dimension_mismatch() {
        let (_, _, _, state) = tiny_setup(2, 5, 2, 0.1, 2);
        let bad = SamplePair { patch1: vec![0.0; 4], patch2: vec![0.0; 4], label: 1, signal_position: 1 };
        assert!(feature(&state, &bad).is_err());
    }

    #[test]
    fn zero_filters_give_zero_scores_and_log_n_loss() {
        let (_, data, aug, mut state) = tiny_setup(5, 6, 2, 0.1, 3);
        state.filters.scale(0.0);
        let scores = similarity_scores(&state, &data, &aug).unwrap();
        assert!(scores.sim.iter().all(|&v| v == 0.0));
        assert!(scores.sim_cross.as_slice().iter().all(|&v| v == 0.0));
        // Uniform softmax over n0 = 5 terms.
        let loss = simclr_loss(&state, &data, &aug, 0.5).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn single_sample_has_zero_loss_and_zero_gradient() {
        let (_, data, aug, state) = tiny_setup(1, 6, 2, 0.1, 4);
        let scores = similarity_scores(&state, &data, &aug).unwrap();
        assert_eq!(scores.sim.len(), 1);
        let loss = simclr_loss(&state, &data, &aug, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        let grad = simclr_gradient(&state, &data, &aug, 0.5).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_filters_give_zero_gradient() {
        let (_, data, aug, mut state) = tiny_setup(4, 6, 2, 0.1, 5);
        state.filters.scale(0.0);
        let grad = simclr_gradient(&state, &data, &aug, 0.5).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_scores_are_symmetric_with_zero_diagonal() {
        let (_, data, aug, state) = tiny_setup(6, 8, 3, 0.2, 6);
        let scores = similarity_scores(&state, &data, &aug).unwrap();
        assert_eq!(scores.sim_cross.max_asymmetry(), 0.0);
        for i in 0..6 {
            assert_eq!(scores.sim_cross.at(i, i), 0.0);
        }
    }

    #[test]
    fn zero_eta_keeps_filters_fixed() {
        let (_, data, aug, state) = tiny_setup(4, 6, 2, 0.1, 7);
        let before = state.filters.clone();
        let config = PretrainConfig { m: 2, tau: 0.5, eta: 0.0, sigma0: 0.1, iterations: 3, seed: 7 };
        let out = pretrain_run(state, &data, &aug, &config, no_hook).unwrap();
        assert_eq!(out.filters.as_slice(), before.as_slice());
        assert_eq!(out.step, 3);
        assert_eq!(out.loss_history.len(), 4);
    }

    #[test]
    fn one_step_equals_state_minus_eta_gradient() {
        let (_, data, aug, state) = tiny_setup(4, 6, 2, 0.1, 8);
        let grad = simclr_gradient(&state, &data, &aug, 0.5).unwrap();
        let config = PretrainConfig { m: 2, tau: 0.5, eta: 0.05, sigma0: 0.1, iterations: 1, seed: 8 };
        let out = pretrain_run(state.clone(), &data, &aug, &config, no_hook).unwrap();
        for i in 0..state.filters.rows() {
            for j in 0..state.filters.cols() {
                let want = state.filters.at(i, j) - 0.05 * grad.at(i, j);
                assert!((out.filters.at(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn t_simclr_clamps_nonpositive_numerator_to_one() {
        // Huge n * SNR makes the numerator negative.
        let t = compute_t_simclr(1.0, 0.01, 1_000_000, 10.0, 400, 40, 3.0, 0.5, 0.1).unwrap();
        assert_eq!(t, 1);
    }

    #[test]
    fn t_simclr_matches_independent_arithmetic() {
        // M=1, sigma0=0.01, n=40, SNR=0.25, d=400, m=40, q=3, ||A||=0.5, eps=0.1.
        let t = compute_t_simclr(1.0, 0.01, 40, 0.25, 400, 40, 3.0, 0.5, 0.1).unwrap();
        let e: f64 = 1.0;
        let num = (288.0_f64 * 1.0_f64.powf(e) * (1.0_f64 / 0.01).ln().powf(e)
            * ((400.0_f64 * 40.0).ln() * (40.0_f64 * 400.0).ln()).sqrt())
        .ln()
            - (40.0_f64.powf(e) * 0.25_f64.powf(3.0 * e)).ln();
        let den = (1.0_f64 + 0.9 * 0.5).ln();
        assert_eq!(t, (num / den).ceil() as usize);
    }

    #[test]
    fn t_simclr_is_monotone_in_norm_a() {
        let t1 = compute_t_simclr(1.0, 0.01, 40, 0.25, 400, 40, 3.0, 0.5, 0.1).unwrap();
        let t2 = compute_t_simclr(1.0, 0.01, 40, 0.25, 400, 40, 3.0, 1.0, 0.1).unwrap();
        assert!(t2 <= t1);
    }

    #[test]
    fn t_simclr_rejects_q_at_most_two() {
        assert!(compute_t_simclr(1.0, 0.01, 40, 0.25, 400, 40, 2.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, _, _, state) = tiny_setup(2, 5, 2, 0.1, 10);
        let mut buf = Vec::new();
        write_checkpoint(&state, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.filters.as_slice(), state.filters.as_slice());
        assert_eq!(back.step, state.step);
    }
}
