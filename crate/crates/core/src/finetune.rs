//! Supervised fine-tuning of the two-layer ReLU^q CNN
//! `f(W,x) = F_{+1}(W_{+1},x) - F_{-1}(W_{-1},x)` with
//! `F_j = (1/m) sum_r [sigma(<w_{j,r},x^(1)>) + sigma(<w_{j,r},x^(2)>)]`,
//! second-layer weights fixed at `+1/m` and `-1/m`.
//!
//! Training minimizes the logistic loss by full-batch gradient descent and
//! optionally tracks the signal coefficient `gamma_{j,r}` and the noise
//! coefficients `rho_{j,r,i}` both by integrating their update recurrences
//! and by decomposing the actual weights each step; the two modes are the
//! same object by uniqueness of the decomposition and are cross-checked.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataModelParams, Dataset, SamplePair, sample_datapoint};
use crate::decompose::{decompose, NoiseBasis};
use crate::linalg::{axpy, dot, norm_sq, Mat};
use crate::rng::derive_seed;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FTUN";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Filters per sign; the network holds `2m` filters total.
    pub m: usize,
    /// Activation exponent, `> 2`.
    pub q: f64,
    pub eta: f64,
    /// Gradient descent steps to run.
    pub iterations: usize,
    /// Maximum admissible iterations; `iterations` may not exceed it.
    pub t_star_cap: usize,
    /// Early-stop training loss target.
    pub epsilon_target: f64,
    pub test_size: usize,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParam("m must be >= 1".into()));
        }
        if !(self.q > 2.0) {
            return Err(Error::InvalidParam(format!("q = {} must be > 2", self.q)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParam(format!("eta = {} must be > 0", self.eta)));
        }
        if self.iterations > self.t_star_cap {
            return Err(Error::InvalidParam(format!(
                "iterations {} exceeds t_star_cap {}",
                self.iterations, self.t_star_cap
            )));
        }
        if self.test_size == 0 {
            return Err(Error::InvalidParam("test_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Default fine-tuning learning rate: `16 * min((sigma_p^2 d)^-1, ||mu||^-2)`.
///
/// The stability requirement fixes only the scale; the factor 16 keeps
/// desk-scale runs within reach of the iteration budgets.
pub fn default_finetune_eta(params: &DataModelParams) -> f64 {
    let mu_sq = params.mu_norm() * params.mu_norm();
    let noise_sq = params.sigma_p * params.sigma_p * params.d() as f64;
    let cap = if noise_sq > 0.0 { (1.0 / noise_sq).min(1.0 / mu_sq) } else { 1.0 / mu_sq };
    16.0 * cap
}

/// Iteration budget `m gamma0^{-(q-2)} / (eta ||mu||^2) + m^3 / (eta eps ||mu||^2)`
/// with constant 1, capped at `cap`.
pub fn default_finetune_iterations(
    m: usize,
    q: f64,
    eta: f64,
    mu_norm: f64,
    gamma0: f64,
    epsilon: f64,
    cap: usize,
) -> usize {
    let mu_sq = mu_norm * mu_norm;
    let g = gamma0.max(1e-12);
    let t1 = m as f64 * g.powf(-(q - 2.0)) / (eta * mu_sq);
    let t2 = (m as f64).powi(3) / (eta * epsilon * mu_sq);
    ((t1 + t2).ceil() as usize).clamp(1, cap)
}

/// `sigma(z) = max(0, z)^q`.
#[inline]
pub fn relu_q(z: f64, q: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if q == 3.0 {
        z * z * z
    } else {
        z.powf(q)
    }
}

/// `sigma'(z) = q max(0, z)^{q-1}`.
#[inline]
pub fn relu_q_prime(z: f64, q: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if q == 3.0 {
        3.0 * z * z
    } else {
        q * z.powf(q - 1.0)
    }
}

/// `l(z) = log(1 + exp(-z))`, evaluated on the numerically stable branch.
#[inline]
pub fn logistic_loss(z: f64) -> f64 {
    if z > 30.0 {
        (-z).exp()
    } else if z < -30.0 {
        -z
    } else {
        (-z).exp().ln_1p()
    }
}

/// `l'(z) = -1 / (1 + exp(z))`, always in `(-1, 0)`.
#[inline]
pub fn logistic_loss_prime(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone)]
pub struct HistoryRecord {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_error: f64,
    pub max_gamma_pos: f64,
    pub max_gamma_neg: f64,
    pub max_abs_rho: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneState {
    /// Filters of `F_{+1}`, one per row.
    pub w_pos: Mat,
    /// Filters of `F_{-1}`.
    pub w_neg: Mat,
    pub step: usize,
    pub history: Vec<HistoryRecord>,
}

impl FinetuneState {
    pub fn m(&self) -> usize {
        self.w_pos.rows()
    }

    pub fn d(&self) -> usize {
        self.w_pos.cols()
    }

    fn bank(&self, j: i8) -> &Mat {
        if j == 1 {
            &self.w_pos
        } else {
            &self.w_neg
        }
    }
}

/// Initialize from pre-trained filters: the `plus` indices become the
/// positive bank and the `minus` indices the negative bank, each in
/// ascending original order.
pub fn init_from_pretrain(filters: &Mat, plus: &[usize], minus: &[usize]) -> Result<FinetuneState> {
    if plus.len() != minus.len() || plus.len() + minus.len() != filters.rows() {
        return Err(Error::SizeMismatch(plus.len() + minus.len(), filters.rows()));
    }
    let take = |idx: &[usize]| -> Result<Mat> {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let rows: Vec<Vec<f64>> = sorted.iter().map(|&r| filters.row(r).to_vec()).collect();
        Mat::from_rows(rows)
    };
    Ok(FinetuneState { w_pos: take(plus)?, w_neg: take(minus)?, step: 0, history: Vec::new() })
}

/// Gaussian initialization for the direct supervised baseline.
pub fn init_gaussian<R: Rng>(m: usize, d: usize, sigma0: f64, rng: &mut R) -> FinetuneState {
    let mut sample = |rows: usize| {
        let mut mat = Mat::zeros(rows, d);
        for v in mat.as_mut_slice() {
            *v = sigma0 * rng.sample::<f64, _>(StandardNormal);
        }
        mat
    };
    FinetuneState { w_pos: sample(m), w_neg: sample(m), step: 0, history: Vec::new() }
}

/// `f(W, x)` for one sample.
pub fn cnn_forward(state: &FinetuneState, sample: &SamplePair, q: f64) -> f64 {
    let m = state.m() as f64;
    let mut f = 0.0;
    for r in 0..state.m() {
        f += relu_q(dot(state.w_pos.row(r), &sample.patch1), q)
            + relu_q(dot(state.w_pos.row(r), &sample.patch2), q);
        f -= relu_q(dot(state.w_neg.row(r), &sample.patch1), q)
            + relu_q(dot(state.w_neg.row(r), &sample.patch2), q);
    }
    f / m
}

/// Everything one GD step needs, computed in a single forward pass.
struct StepCache {
    /// `l'_i = l'(y_i f_i)`.
    lp: Vec<f64>,
    train_loss: f64,
    /// `sigma'` per (bank, filter, sample, patch): `[2][m][n][2]` flattened.
    sp: Vec<f64>,
}

impl StepCache {
    #[inline]
    fn sp_at(&self, bank: usize, m: usize, n: usize, r: usize, i: usize, patch: usize) -> f64 {
        self.sp[((bank * m + r) * n + i) * 2 + patch]
    }
}

fn forward_cache(state: &FinetuneState, data: &Dataset, q: f64) -> StepCache {
    let n = data.len();
    let m = state.m();
    let mut f = vec![0.0; n];
    let mut sp = vec![0.0; 2 * m * n * 2];
    for (bank, w) in [&state.w_pos, &state.w_neg].into_iter().enumerate() {
        let sign = if bank == 0 { 1.0 } else { -1.0 };
        for r in 0..m {
            let wr = w.row(r);
            for (i, s) in data.samples.iter().enumerate() {
                let z1 = dot(wr, &s.patch1);
                let z2 = dot(wr, &s.patch2);
                f[i] += sign * (relu_q(z1, q) + relu_q(z2, q));
                let base = ((bank * m + r) * n + i) * 2;
                sp[base] = relu_q_prime(z1, q);
                sp[base + 1] = relu_q_prime(z2, q);
            }
        }
    }
    for v in &mut f {
        *v /= m as f64;
    }
    let mut train_loss = 0.0;
    let mut lp = Vec::with_capacity(n);
    for (i, s) in data.samples.iter().enumerate() {
        let margin = s.label as f64 * f[i];
        train_loss += logistic_loss(margin);
        lp.push(logistic_loss_prime(margin));
    }
    train_loss /= n as f64;
    StepCache { lp, train_loss, sp }
}

/// Empirical logistic loss `L_S` over a labeled dataset.
pub fn train_loss(state: &FinetuneState, data: &Dataset, q: f64) -> f64 {
    forward_cache(state, data, q).train_loss
}

/// Per-sample `l'_i = l'(y_i f(W, x_i))`.
pub fn loss_derivatives(state: &FinetuneState, data: &Dataset, q: f64) -> Vec<f64> {
    forward_cache(state, data, q).lp
}

fn apply_gd(state: &mut FinetuneState, data: &Dataset, cache: &StepCache, eta: f64) {
    let n = data.len();
    let m = state.m();
    let scale = eta / (n as f64 * m as f64);
    for bank in 0..2usize {
        let j = if bank == 0 { 1.0 } else { -1.0 };
        for r in 0..m {
            let mut g = vec![0.0; state.d()];
            for (i, s) in data.samples.iter().enumerate() {
                let coef = cache.lp[i] * s.label as f64 * j;
                let s1 = cache.sp_at(bank, m, n, r, i, 0);
                if s1 != 0.0 {
                    axpy(coef * s1, &s.patch1, &mut g);
                }
                let s2 = cache.sp_at(bank, m, n, r, i, 1);
                if s2 != 0.0 {
                    axpy(coef * s2, &s.patch2, &mut g);
                }
            }
            let w = if bank == 0 { state.w_pos.row_mut(r) } else { state.w_neg.row_mut(r) };
            axpy(-scale, &g, w);
        }
    }
}

/// One full-batch gradient descent step; all `2m` filters update
/// simultaneously from the pre-step state.
pub fn gd_step(state: &mut FinetuneState, data: &Dataset, q: f64, eta: f64) -> Result<f64> {
    let cache = forward_cache(state, data, q);
    if !cache.train_loss.is_finite() {
        return Err(Error::Diverged { step: state.step, loss: cache.train_loss });
    }
    apply_gd(state, data, &cache, eta);
    state.step += 1;
    Ok(cache.train_loss)
}

// ---------------------------------------------------------------------------
// Coefficient tracking.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackMode {
    Off,
    /// Integrate the coefficient recurrences alongside GD (fast).
    Recurrence,
    /// Recurrences plus per-step direct decomposition with cross-checking.
    Both,
}

/// Tracked signal/noise coefficients, banks indexed `[+1, -1]`.
///
/// `rho_bar` and `rho_under` are the accumulated one-sided dynamics started
/// from zero, so `rho = rho_init + rho_bar + rho_under` exactly, `rho_bar`
/// is nonnegative-nondecreasing and supported on `y_i = j`, and `rho_under`
/// is nonpositive-nonincreasing and supported on `y_i = -j`.
#[derive(Debug, Clone)]
pub struct CoefficientTrack {
    pub m: usize,
    pub n: usize,
    /// `gamma_{j,r}`, flattened `[2][m]`.
    pub gamma: Vec<f64>,
    /// Initial noise coefficients from decomposing the initial filters.
    pub rho_init: Vec<f64>,
    /// Accumulated on-class updates, `[2][m][n]`.
    pub rho_bar: Vec<f64>,
    /// Accumulated off-class updates, `[2][m][n]`.
    pub rho_under: Vec<f64>,
    pub basis_id: u64,
}

impl CoefficientTrack {
    pub fn idx2(&self, bank: usize, r: usize) -> usize {
        bank * self.m + r
    }

    pub fn idx3(&self, bank: usize, r: usize, i: usize) -> usize {
        (bank * self.m + r) * self.n + i
    }

    /// Full noise coefficient `rho_{j,r,i}`.
    pub fn rho(&self, bank: usize, r: usize, i: usize) -> f64 {
        let k = self.idx3(bank, r, i);
        self.rho_init[k] + self.rho_bar[k] + self.rho_under[k]
    }

    pub fn max_abs_rho(&self) -> f64 {
        let mut worst = 0.0f64;
        for bank in 0..2 {
            for r in 0..self.m {
                for i in 0..self.n {
                    worst = worst.max(self.rho(bank, r, i).abs());
                }
            }
        }
        worst
    }

    /// Initialize from the direct decomposition of the initial filters.
    pub fn from_state(state: &FinetuneState, basis: &NoiseBasis) -> Result<Self> {
        let m = state.m();
        let n = basis.n();
        let mut gamma = vec![0.0; 2 * m];
        let mut rho_init = vec![0.0; 2 * m * n];
        for (bank, j) in [(0usize, 1.0f64), (1, -1.0)] {
            for r in 0..m {
                let w = state.bank(if bank == 0 { 1 } else { -1 }).row(r);
                let dec = decompose(w, basis)?;
                gamma[bank * m + r] = j * dec.gamma;
                rho_init[(bank * m + r) * n..(bank * m + r) * n + n].copy_from_slice(&dec.rho);
            }
        }
        Ok(CoefficientTrack {
            m,
            n,
            gamma,
            rho_init,
            rho_bar: vec![0.0; 2 * m * n],
            rho_under: vec![0.0; 2 * m * n],
            basis_id: basis.basis_id,
        })
    }
}

/// Advance the recurrences one step using the same inner products the GD
/// update consumed:
/// `gamma += -(eta/nm) sum_i l'_i sigma'(<w, y_i mu>) ||mu||^2`,
/// `rho_bar_i += -(eta/nm) l'_i sigma'(<w, xi_i>) ||xi_i||^2` on class,
/// `rho_under_i += +(eta/nm) l'_i sigma'(<w, xi_i>) ||xi_i||^2` off class.
fn advance_track(
    track: &mut CoefficientTrack,
    data: &Dataset,
    cache: &StepCache,
    mu_norm_sq: f64,
    xi_norms_sq: &[f64],
    eta: f64,
) {
    let (m, n) = (track.m, track.n);
    let scale = eta / (n as f64 * m as f64);
    for bank in 0..2usize {
        let j: i8 = if bank == 0 { 1 } else { -1 };
        for r in 0..m {
            let mut dgamma = 0.0;
            for (i, s) in data.samples.iter().enumerate() {
                let sig_patch = (s.signal_position - 1) as usize;
                let noise_patch = 1 - sig_patch;
                let sp_sig = cache.sp_at(bank, m, n, r, i, sig_patch);
                dgamma -= cache.lp[i] * sp_sig;
                let sp_noise = cache.sp_at(bank, m, n, r, i, noise_patch);
                let k = track.idx3(bank, r, i);
                if s.label == j {
                    track.rho_bar[k] -= scale * cache.lp[i] * sp_noise * xi_norms_sq[i];
                } else {
                    track.rho_under[k] += scale * cache.lp[i] * sp_noise * xi_norms_sq[i];
                }
            }
            let k2 = track.idx2(bank, r);
            track.gamma[k2] += scale * dgamma * mu_norm_sq;
        }
    }
}

/// Compare tracked coefficients against a direct decomposition of the
/// current weights; relative tolerance per the cross-mode contract.
pub fn cross_check_track(
    track: &CoefficientTrack,
    state: &FinetuneState,
    basis: &NoiseBasis,
    tol: f64,
) -> Result<()> {
    for (bank, j) in [(0usize, 1i8), (1, -1)] {
        for r in 0..track.m {
            let dec = decompose(state.bank(j).row(r), basis)?;
            let gamma_direct = j as f64 * dec.gamma;
            let gamma_rec = track.gamma[track.idx2(bank, r)];
            if (gamma_rec - gamma_direct).abs() > tol * (1.0 + gamma_direct.abs()) {
                return Err(Error::CoefficientMismatch {
                    step: state.step,
                    bank: j,
                    filter: r,
                    sample: usize::MAX,
                    recurrence: gamma_rec,
                    direct: gamma_direct,
                });
            }
            for i in 0..track.n {
                let rho_rec = track.rho(bank, r, i);
                let rho_direct = dec.rho[i];
                if (rho_rec - rho_direct).abs() > tol * (1.0 + rho_direct.abs()) {
                    return Err(Error::CoefficientMismatch {
                        step: state.step,
                        bank: j,
                        filter: r,
                        sample: i,
                        recurrence: rho_rec,
                        direct: rho_direct,
                    });
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Test metrics.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TestMetrics {
    pub test_loss: f64,
    pub test_error: f64,
    /// Standard error of the loss mean.
    pub loss_sem: f64,
}

/// Monte Carlo estimate of the population loss and classification error on
/// fresh samples. `sign(0)` ties count as half errors.
pub fn test_metrics<R: Rng>(
    state: &FinetuneState,
    params: &DataModelParams,
    q: f64,
    test_size: usize,
    rng: &mut R,
) -> TestMetrics {
    let mut losses = Vec::with_capacity(test_size);
    let mut errors = 0.0;
    for _ in 0..test_size {
        let s = sample_datapoint(params, rng);
        let f = cnn_forward(state, &s, q);
        losses.push(logistic_loss(s.label as f64 * f));
        if f == 0.0 {
            errors += 0.5;
        } else if (f > 0.0) != (s.label > 0) {
            errors += 1.0;
        }
    }
    let n = test_size as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n.max(2.0);
    TestMetrics { test_loss: mean, test_error: errors / n, loss_sem: (var / n).sqrt() }
}

fn metrics_on_dataset(state: &FinetuneState, data: &Dataset, q: f64) -> (f64, f64) {
    let mut loss = 0.0;
    let mut errors = 0.0;
    for s in &data.samples {
        let f = cnn_forward(state, s, q);
        loss += logistic_loss(s.label as f64 * f);
        if f == 0.0 {
            errors += 0.5;
        } else if (f > 0.0) != (s.label > 0) {
            errors += 1.0;
        }
    }
    let n = data.len() as f64;
    (loss / n, errors / n)
}

// ---------------------------------------------------------------------------
// The training loop.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_error: f64,
    /// First step whose training loss hit the epsilon target, if any.
    pub reached_epsilon: Option<usize>,
}

/// Per-step event handed to the hook after each update (and once at step 0
/// before any update, with `after_update = false`).
pub struct TrainEvent<'a> {
    pub step: usize,
    pub train_loss: f64,
    pub after_update: bool,
    pub state: &'a FinetuneState,
    pub track: Option<&'a CoefficientTrack>,
}

/// Full-batch GD training with history recording, early stopping, and
/// optional coefficient tracking.
///
/// Cross-mode disagreement beyond `1e-6` relative aborts with the first
/// divergent coordinate.
pub fn train<F>(
    state: &mut FinetuneState,
    data: &Dataset,
    params: &DataModelParams,
    config: &FinetuneConfig,
    track_mode: TrackMode,
    basis: Option<&NoiseBasis>,
    record_every: usize,
    mut hook: F,
) -> Result<TrainSummary>
where
    F: FnMut(&TrainEvent<'_>),
{
    let mut track = match track_mode {
        TrackMode::Off => None,
        TrackMode::Recurrence | TrackMode::Both => {
            let basis = basis.ok_or_else(|| {
                Error::InvalidParam("coefficient tracking requires a noise basis".into())
            })?;
            Some(CoefficientTrack::from_state(state, basis)?)
        }
    };
    let mu_norm_sq = norm_sq(&params.mu);
    let xi_norms_sq: Vec<f64> = data.samples.iter().map(|s| norm_sq(s.noise_patch())).collect();
    let test_data = crate::data::generate_dataset(
        params,
        config.test_size,
        crate::data::DatasetKind::Test,
        derive_seed(config.seed, "finetune-test", 0),
    );
    let record_every = record_every.max(1);
    let mut reached_epsilon = None;
    let mut last_loss;

    hook(&TrainEvent {
        step: 0,
        train_loss: f64::NAN,
        after_update: false,
        state,
        track: track.as_ref(),
    });

    let record = |state: &mut FinetuneState, loss: f64, track: Option<&CoefficientTrack>| {
        let (test_loss, test_error) = metrics_on_dataset(state, &test_data, config.q);
        let gamma_pos =
            (0..state.m()).map(|r| dot(state.w_pos.row(r), &params.mu)).fold(f64::NEG_INFINITY, f64::max);
        let gamma_neg =
            (0..state.m()).map(|r| -dot(state.w_neg.row(r), &params.mu)).fold(f64::NEG_INFINITY, f64::max);
        let max_abs_rho = track.map_or(f64::NAN, |t| t.max_abs_rho());
        state.history.push(HistoryRecord {
            step: state.step,
            train_loss: loss,
            test_loss,
            test_error,
            max_gamma_pos: gamma_pos,
            max_gamma_neg: gamma_neg,
            max_abs_rho,
        });
    };

    let mut t = 0;
    loop {
        let cache = forward_cache(state, data, config.q);
        last_loss = cache.train_loss;
        if !last_loss.is_finite() {
            return Err(Error::Diverged { step: state.step, loss: last_loss });
        }
        let stop_early = last_loss <= config.epsilon_target;
        if stop_early {
            reached_epsilon = Some(state.step);
        }
        if t % record_every == 0 || stop_early || t == config.iterations {
            record(state, last_loss, track.as_ref());
        }
        if stop_early || t == config.iterations {
            break;
        }
        if let Some(tr) = track.as_mut() {
            advance_track(tr, data, &cache, mu_norm_sq, &xi_norms_sq, config.eta);
        }
        apply_gd(state, data, &cache, config.eta);
        state.step += 1;
        t += 1;
        if track_mode == TrackMode::Both {
            if let (Some(tr), Some(b)) = (track.as_ref(), basis) {
                cross_check_track(tr, state, b, 1e-6)?;
            }
        }
        hook(&TrainEvent {
            step: state.step,
            train_loss: last_loss,
            after_update: true,
            state,
            track: track.as_ref(),
        });
    }

    let last = state.history.last().expect("history has at least one record");
    Ok(TrainSummary {
        steps_run: t,
        final_train_loss: last_loss,
        final_test_loss: last.test_loss,
        final_test_error: last.test_error,
        reached_epsilon,
    })
}

// ---------------------------------------------------------------------------
// Persistence.
// ---------------------------------------------------------------------------

pub const HISTORY_HEADER: &str =
    "pipeline,step,train_loss,test_loss,test_error,max_gamma_pos,max_gamma_neg,max_abs_rho";

/// Training history CSV with a pipeline tag column.
pub fn write_history<W: Write>(records: &[HistoryRecord], pipeline: &str, mut w: W) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            pipeline, r.step, r.train_loss, r.test_loss, r.test_error, r.max_gamma_pos,
            r.max_gamma_neg, r.max_abs_rho
        )?;
    }
    Ok(())
}

/// Checkpoint: magic "FTUN", version, m, d, q, step, both banks row-major.
pub fn write_checkpoint<W: Write>(state: &FinetuneState, q: f64, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(state.m() as u32)?;
    w.write_u32::<LittleEndian>(state.d() as u32)?;
    w.write_f64::<LittleEndian>(q)?;
    w.write_u64::<LittleEndian>(state.step as u64)?;
    for &v in state.w_pos.as_slice().iter().chain(state.w_neg.as_slice()) {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(FinetuneState, f64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, want FTUN")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let q = r.read_f64::<LittleEndian>()?;
    let step = r.read_u64::<LittleEndian>()? as usize;
    let mut read_bank = |rows: usize| -> Result<Mat> {
        let mut data = vec![0.0; rows * d];
        for v in &mut data {
            *v = r.read_f64::<LittleEndian>()?;
        }
        Mat::from_flat(rows, d, data)
    };
    let w_pos = read_bank(m)?;
    let w_neg = read_bank(m)?;
    Ok((FinetuneState { w_pos, w_neg, step, history: Vec::new() }, q))
}

pub fn save_checkpoint(state: &FinetuneState, q: f64, path: &Path) -> Result<()> {
    write_checkpoint(state, q, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(FinetuneState, f64)> {
    read_checkpoint(BufReader::new(std::fs::File::open(path)?))
}
