//! Orchestration: the full pipeline (pre-train, spectral checks,
//! decomposition, split, fine-tune, baseline), sweeps over the (n, n0, SNR,
//! q) grid, resource-condition warnings, and the output manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use snlab_core::baseline::{run_baseline_on, BaselineConditions};
use snlab_core::data::{
    augment_dataset, concentration_warnings, generate_dataset, DataModelParams, DatasetKind,
};
use snlab_core::decompose::{
    decompose, split_filters, verify_theorem53, NoiseBasis, SignalNoiseDecomposition,
    Theorem53Report,
};
use snlab_core::finetune::{
    default_finetune_eta, default_finetune_iterations, init_from_pretrain, train, FinetuneConfig,
    FinetuneState, TrackMode, TrainSummary,
};
use snlab_core::linalg::dot;
use snlab_core::pretrain::{
    compute_t_simclr, default_pretrain_eta, init_filters, pretrain_run, PretrainConfig,
    PretrainState,
};
use snlab_core::rng::{derive_seed, stream};
use snlab_core::spectral::{
    analyze_kernel, build_kernel, lemma52_check, residual_xi_from_weights, spectral_norm_sym,
    ContrastKernel, Lemma52Verdict, SpectralReport,
};

use crate::config::{DataSpec, ExperimentConfig};

/// Cap on the measured `eps_hat` when it feeds the T_SimCLR formula.
const EPS_HAT_FORMULA_CAP: f64 = 0.9;

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub eta: f64,
    pub iterations_budget: usize,
    pub steps_run: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_error: f64,
    pub reached_epsilon: Option<usize>,
}

impl PipelineSummary {
    fn new(eta: f64, budget: usize, s: &TrainSummary) -> Self {
        PipelineSummary {
            eta,
            iterations_budget: budget,
            steps_run: s.steps_run,
            final_train_loss: s.final_train_loss,
            final_test_loss: s.final_test_loss,
            final_test_error: s.final_test_error,
            reached_epsilon: s.reached_epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub delta_norm: f64,
    pub eps_hat: f64,
    pub mu_alignment: f64,
    pub perp_residual: f64,
    pub norm_a: f64,
    pub lemma52_degenerate: bool,
    pub lemma52_all_pass: bool,
    pub lemma52_boundary_proxy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem53Summary {
    pub ratio_plus: f64,
    pub ratio_minus: f64,
    pub ratio_threshold: f64,
    pub ratio_plus_pass: bool,
    pub ratio_minus_pass: bool,
    pub max_perp_norm: f64,
    pub perp_bound: f64,
    pub perp_pass: bool,
    pub max_abs_gamma: f64,
    pub max_abs_rho: f64,
    pub coeff_bound: f64,
    pub gamma0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct XiCheckRow {
    pub step: usize,
    pub max_reconstruction_error: f64,
    pub xi_norm: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Everything a single experiment produced, independent of file output.
#[derive(Debug, Serialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub snr: f64,
    pub data_provenance: String,
    pub pretrain_eta: f64,
    pub pretrain_iterations: usize,
    pub finetune_eta: f64,
    pub gamma0_split: f64,
    pub spectral: Option<SpectralSummary>,
    pub theorem53: Option<Theorem53Summary>,
    pub xi_checks: Vec<XiCheckRow>,
    pub split_plus: Vec<usize>,
    pub split_minus: Vec<usize>,
    pub simclr: Option<PipelineSummary>,
    pub baseline: Option<PipelineSummary>,
    pub baseline_conditions: Option<BaselineConditions>,
    pub concentration_warnings: Vec<String>,
    pub condition41_warnings: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    pub pretrain_state: Option<PretrainState>,
    #[serde(skip)]
    pub finetune_state: Option<FinetuneState>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    config_sha256: String,
    outcome: &'a ExperimentOutcome,
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct OutputSink<'a> {
    dir: Option<&'a Path>,
    written: Vec<String>,
}

impl<'a> OutputSink<'a> {
    fn new(dir: Option<&'a Path>) -> anyhow::Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(OutputSink { dir, written: Vec::new() })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    {
        if let Some(d) = self.dir {
            let mut buf = Vec::new();
            f(&mut buf)?;
            let path = d.join(name);
            fs::write(&path, &buf).with_context(|| format!("writing {}", path.display()))?;
            self.written.push(name.to_string());
        }
        Ok(())
    }
}

/// Measured gamma0 after the split: the weaker of the best-aligned positive
/// and negative bank filters.
fn measured_gamma0(state: &FinetuneState, mu: &[f64]) -> f64 {
    let best_pos =
        (0..state.m()).map(|r| dot(state.w_pos.row(r), mu)).fold(f64::NEG_INFINITY, f64::max);
    let best_neg =
        (0..state.m()).map(|r| -dot(state.w_neg.row(r), mu)).fold(f64::NEG_INFINITY, f64::max);
    best_pos.min(best_neg)
}

pub const XI_CHECK_HEADER: &str = "step,max_reconstruction_error,xi_norm,bound,within_bound";
pub const THEOREM53_HEADER: &str = "key,value";

fn write_theorem53_csv(rep: &Theorem53Report, w: &mut Vec<u8>) -> anyhow::Result<()> {
    writeln!(w, "{THEOREM53_HEADER}")?;
    writeln!(w, "i_plus,{}", rep.i_plus.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))?;
    writeln!(w, "i_minus,{}", rep.i_minus.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))?;
    writeln!(w, "ratio_plus,{}", rep.ratio_plus)?;
    writeln!(w, "ratio_minus,{}", rep.ratio_minus)?;
    writeln!(w, "ratio_threshold,{}", rep.ratio_threshold)?;
    writeln!(w, "ratio_plus_pass,{}", rep.ratio_plus_pass)?;
    writeln!(w, "ratio_minus_pass,{}", rep.ratio_minus_pass)?;
    writeln!(w, "max_perp_norm,{}", rep.max_perp_norm)?;
    writeln!(w, "perp_bound,{}", rep.perp_bound)?;
    writeln!(w, "perp_pass,{}", rep.perp_pass)?;
    writeln!(w, "max_abs_gamma,{}", rep.max_abs_gamma)?;
    writeln!(w, "max_abs_rho,{}", rep.max_abs_rho)?;
    writeln!(w, "coeff_bound,{}", rep.coeff_bound)?;
    writeln!(w, "gamma_flag,{}", rep.gamma_flag)?;
    writeln!(w, "rho_flag,{}", rep.rho_flag)?;
    writeln!(w, "gamma0,{}", rep.gamma0)?;
    Ok(())
}

impl From<&Theorem53Report> for Theorem53Summary {
    fn from(r: &Theorem53Report) -> Self {
        Theorem53Summary {
            ratio_plus: r.ratio_plus,
            ratio_minus: r.ratio_minus,
            ratio_threshold: r.ratio_threshold,
            ratio_plus_pass: r.ratio_plus_pass,
            ratio_minus_pass: r.ratio_minus_pass,
            max_perp_norm: r.max_perp_norm,
            perp_bound: r.perp_bound,
            perp_pass: r.perp_pass,
            max_abs_gamma: r.max_abs_gamma,
            max_abs_rho: r.max_abs_rho,
            coeff_bound: r.coeff_bound,
            gamma0: r.gamma0,
        }
    }
}

fn spectral_summary(
    report: &SpectralReport,
    verdict: &Lemma52Verdict,
    norm_a: f64,
) -> SpectralSummary {
    SpectralSummary {
        eigenvalues: report.eigenvalues.clone(),
        delta_norm: report.delta_norm,
        eps_hat: report.eps_hat,
        mu_alignment: report.mu_alignment,
        perp_residual: report.perp_residual,
        norm_a,
        lemma52_degenerate: verdict.degenerate,
        lemma52_all_pass: verdict.all_pass(),
        lemma52_boundary_proxy: verdict.boundary_proxy,
    }
}

/// How far the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunScope {
    PretrainOnly,
    SpectralOnly,
    DecomposeOnly,
    Full,
}

/// Execute the configured experiment. Every stage that fails aborts with the
/// stage name; files already written stay in place.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    scope: RunScope,
) -> anyhow::Result<ExperimentOutcome> {
    cfg.validate().context("stage config")?;
    let (params, data_provenance) = cfg.build_params().context("stage config")?;
    let snr = params.snr().context("stage config")?;
    let mut sink = OutputSink::new(out_dir)?;

    // -- data ---------------------------------------------------------------
    let pre_data = generate_dataset(
        &params,
        cfg.n0,
        DatasetKind::PretrainUnlabeled,
        derive_seed(cfg.seed, "pretrain-data", 0),
    );
    let pre_aug = augment_dataset(&pre_data, &params, derive_seed(cfg.seed, "pretrain-aug", 0));
    let ft_data = generate_dataset(
        &params,
        cfg.n,
        DatasetKind::FinetuneLabeled,
        derive_seed(cfg.seed, "finetune-data", 0),
    );
    let mut warnings = concentration_warnings(&pre_data, &params, cfg.delta);
    warnings.extend(concentration_warnings(&ft_data, &params, cfg.delta));
    let condition41_warnings = check_condition41(cfg, &params).context("stage config")?;

    // -- kernel + spectral ----------------------------------------------
    let pretrain_eta = cfg.pretrain.eta.unwrap_or_else(|| default_pretrain_eta(&params));
    let need_kernel =
        cfg.analyses.spectral || cfg.pretrain.iterations.is_none() || cfg.analyses.xi_check_steps > 0;
    let kernel: Option<ContrastKernel> = if need_kernel {
        Some(
            build_kernel(&pre_data, &pre_aug, &params.mu, pretrain_eta, cfg.pretrain.tau)
                .context("stage kernel")?,
        )
    } else {
        None
    };
    let mut spectral = None;
    let mut norm_a = 0.0;
    let mut eps_hat = 0.0;
    if let Some(k) = &kernel {
        let report = analyze_kernel(k, 4.min(params.d())).context("stage spectral")?;
        let verdict = lemma52_check(k, &report, snr, cfg.n0);
        norm_a = spectral_norm_sym(&k.a);
        eps_hat = report.eps_hat;
        sink.write_with("spectral_report.csv", |buf| {
            snlab_core::spectral::write_spectral_report(&report, buf)?;
            Ok(())
        })
        .context("stage spectral")?;
        spectral = Some(spectral_summary(&report, &verdict, norm_a));
    }

    // -- pre-training horizon --------------------------------------------
    let pretrain_iterations = match cfg.pretrain.iterations {
        Some(t) => t,
        None => {
            let t = compute_t_simclr(
                cfg.pretrain.big_m,
                cfg.pretrain.sigma0,
                cfg.n,
                snr,
                params.d(),
                cfg.pretrain.m,
                cfg.finetune.q,
                norm_a,
                eps_hat.clamp(0.0, EPS_HAT_FORMULA_CAP),
            )
            .context("stage pretrain")?;
            t.min(cfg.pretrain.max_iterations)
        }
    };

    if scope == RunScope::SpectralOnly {
        let outcome = ExperimentOutcome {
            seed: cfg.seed,
            snr,
            data_provenance,
            pretrain_eta,
            pretrain_iterations,
            finetune_eta: f64::NAN,
            gamma0_split: f64::NAN,
            spectral,
            theorem53: None,
            xi_checks: Vec::new(),
            split_plus: Vec::new(),
            split_minus: Vec::new(),
            simclr: None,
            baseline: None,
            baseline_conditions: None,
            concentration_warnings: warnings,
            condition41_warnings,
            outputs: sink.written.clone(),
            pretrain_state: None,
            finetune_state: None,
        };
        write_manifest(cfg, &outcome, &mut sink)?;
        return Ok(outcome);
    }

    // -- pre-training -----------------------------------------------------
    let pre_config = PretrainConfig {
        m: cfg.pretrain.m,
        tau: cfg.pretrain.tau,
        eta: pretrain_eta,
        sigma0: cfg.pretrain.sigma0,
        iterations: pretrain_iterations,
        seed: cfg.seed,
    };
    let init = init_filters(&pre_config, params.d(), &mut stream(derive_seed(cfg.seed, "pretrain-init", 0)));
    let mut xi_checks: Vec<XiCheckRow> = Vec::new();
    let xi_steps = cfg.analyses.xi_check_steps;
    let pre_state = {
        let kernel_ref = kernel.as_ref();
        pretrain_run(init, &pre_data, &pre_aug, &pre_config, |info| {
            if info.step < xi_steps {
                if let Some(k) = kernel_ref {
                    let (xi, xi_norm) = residual_xi_from_weights(k, info.weights);
                    let mut worst: f64 = 0.0;
                    for r in 0..info.filters_before.rows() {
                        let w = info.filters_before.row(r);
                        let aw = k.a.matvec(w);
                        let xw = xi.matvec(w);
                        for (c, ((wv, av), xv)) in w.iter().zip(&aw).zip(&xw).enumerate() {
                            worst = worst.max((wv + av + xv - info.filters_after.at(r, c)).abs());
                        }
                    }
                    let bound = cfg.pretrain.sigma0 * norm_a;
                    xi_checks.push(XiCheckRow {
                        step: info.step,
                        max_reconstruction_error: worst,
                        xi_norm,
                        bound,
                        within_bound: xi_norm <= bound,
                    });
                }
            }
        })
        .context("stage pretrain")?
    };
    sink.write_with("pretrain_loss.csv", |buf| {
        snlab_core::pretrain::write_loss_history(&pre_state.loss_history, buf)?;
        Ok(())
    })
    .context("stage pretrain")?;
    sink.write_with("pretrain_filters.sclr", |buf| {
        snlab_core::pretrain::write_checkpoint(&pre_state, buf)?;
        Ok(())
    })
    .context("stage pretrain")?;
    if !xi_checks.is_empty() {
        let rows = xi_checks.clone();
        sink.write_with("xi_check.csv", |buf| {
            writeln!(buf, "{XI_CHECK_HEADER}")?;
            for r in &rows {
                writeln!(
                    buf,
                    "{},{},{},{},{}",
                    r.step, r.max_reconstruction_error, r.xi_norm, r.bound, r.within_bound
                )?;
            }
            Ok(())
        })
        .context("stage pretrain")?;
    }

    // -- decomposition ------------------------------------------------------
    let basis = NoiseBasis::from_dataset(&params.mu, &ft_data).context("stage decomposition")?;
    let mut theorem53 = None;
    if cfg.analyses.decomposition || scope == RunScope::DecomposeOnly {
        let decomps: Vec<SignalNoiseDecomposition> = (0..pre_state.num_filters())
            .map(|r| decompose(pre_state.filters.row(r), &basis))
            .collect::<snlab_core::Result<_>>()
            .context("stage decomposition")?;
        sink.write_with("decomposition.csv", |buf| {
            snlab_core::decompose::write_decompositions(&decomps, buf)?;
            Ok(())
        })
        .context("stage decomposition")?;
        let report = verify_theorem53(
            &decomps,
            cfg.n,
            cfg.n0,
            snr,
            cfg.finetune.q,
            cfg.pretrain.big_m,
        )
        .context("stage decomposition")?;
        sink.write_with("theorem53.csv", |buf| write_theorem53_csv(&report, buf))
            .context("stage decomposition")?;
        theorem53 = Some(Theorem53Summary::from(&report));
    }

    // -- split ----------------------------------------------------------------
    let (split_plus, split_minus) = split_filters(
        pre_state.num_filters(),
        &mut stream(derive_seed(cfg.seed, "split", 0)),
    )
    .context("stage split")?;

    let finetune_eta = cfg.finetune.eta.unwrap_or_else(|| default_finetune_eta(&params));
    let mut simclr = None;
    let mut finetune_state_out = None;
    let mut gamma0_split = f64::NAN;
    let stop_after_decompose = scope == RunScope::PretrainOnly || scope == RunScope::DecomposeOnly;

    if !stop_after_decompose && cfg.pipeline.runs_simclr() {
        // -- fine-tuning -----------------------------------------------------
        let mut state = init_from_pretrain(&pre_state.filters, &split_plus, &split_minus)
            .context("stage finetune")?;
        gamma0_split = measured_gamma0(&state, &params.mu);
        let iterations = match cfg.finetune.iterations {
            Some(t) => t,
            None => default_finetune_iterations(
                cfg.finetune_m(),
                cfg.finetune.q,
                finetune_eta,
                params.mu_norm(),
                gamma0_split,
                cfg.finetune.epsilon_target,
                cfg.finetune.t_star_cap,
            ),
        };
        let ft_config = FinetuneConfig {
            m: cfg.finetune_m(),
            q: cfg.finetune.q,
            eta: finetune_eta,
            iterations,
            t_star_cap: cfg.finetune.t_star_cap,
            epsilon_target: cfg.finetune.epsilon_target,
            test_size: cfg.test_size,
            seed: cfg.seed,
        };
        ft_config.validate().context("stage finetune")?;
        let track = if cfg.analyses.coefficient_track { TrackMode::Both } else { TrackMode::Off };
        let summary = train(
            &mut state,
            &ft_data,
            &params,
            &ft_config,
            track,
            Some(&basis),
            cfg.finetune.record_every,
            |_| {},
        )
        .context("stage finetune")?;
        sink.write_with("finetune_history.csv", |buf| {
            snlab_core::finetune::write_history(&state.history, "simclr_finetune", buf)?;
            Ok(())
        })
        .context("stage finetune")?;
        sink.write_with("finetune_filters.ftun", |buf| {
            snlab_core::finetune::write_checkpoint(&state, ft_config.q, buf)?;
            Ok(())
        })
        .context("stage finetune")?;
        simclr = Some(PipelineSummary::new(finetune_eta, iterations, &summary));
        finetune_state_out = Some(state);
    }

    let mut baseline = None;
    let mut baseline_conditions = None;
    if !stop_after_decompose && cfg.pipeline.runs_baseline() {
        // -- baseline ---------------------------------------------------------
        // Same labeled data, same training loop; only the init differs.
        let gamma0_baseline = {
            let probe = snlab_core::finetune::init_gaussian(
                cfg.finetune_m(),
                params.d(),
                cfg.pretrain.sigma0,
                &mut stream(derive_seed(cfg.seed, "baseline-init", 0)),
            );
            measured_gamma0(&probe, &params.mu)
        };
        let iterations = match cfg.finetune.iterations {
            Some(t) => t,
            None => default_finetune_iterations(
                cfg.finetune_m(),
                cfg.finetune.q,
                finetune_eta,
                params.mu_norm(),
                gamma0_baseline,
                cfg.finetune.epsilon_target,
                cfg.finetune.t_star_cap,
            ),
        };
        let ft_config = FinetuneConfig {
            m: cfg.finetune_m(),
            q: cfg.finetune.q,
            eta: finetune_eta,
            iterations,
            t_star_cap: cfg.finetune.t_star_cap,
            epsilon_target: cfg.finetune.epsilon_target,
            test_size: cfg.test_size,
            seed: cfg.seed,
        };
        ft_config.validate().context("stage baseline")?;
        let out = run_baseline_on(&params, &ft_data, cfg.pretrain.sigma0, &ft_config, cfg.finetune.record_every)
            .context("stage baseline")?;
        sink.write_with("baseline_history.csv", |buf| {
            snlab_core::finetune::write_history(&out.state.history, "baseline", buf)?;
            Ok(())
        })
        .context("stage baseline")?;
        sink.write_with("baseline_filters.ftun", |buf| {
            snlab_core::finetune::write_checkpoint(&out.state, ft_config.q, buf)?;
            Ok(())
        })
        .context("stage baseline")?;
        baseline = Some(PipelineSummary::new(finetune_eta, iterations, &out.summary));
        baseline_conditions = Some(out.conditions);
    }

    let outcome = ExperimentOutcome {
        seed: cfg.seed,
        snr,
        data_provenance,
        pretrain_eta,
        pretrain_iterations,
        finetune_eta,
        gamma0_split,
        spectral,
        theorem53,
        xi_checks,
        split_plus,
        split_minus,
        simclr,
        baseline,
        baseline_conditions,
        concentration_warnings: warnings,
        condition41_warnings,
        outputs: sink.written.clone(),
        pretrain_state: Some(pre_state),
        finetune_state: finetune_state_out,
    };
    write_manifest(cfg, &outcome, &mut sink)?;
    Ok(outcome)
}

fn write_manifest(
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    sink: &mut OutputSink<'_>,
) -> anyhow::Result<()> {
    let config_echo = cfg.to_toml_string();
    let manifest = Manifest { config: cfg, config_sha256: sha256_hex(&config_echo), outcome };
    let json = serde_json::to_string_pretty(&manifest)?;
    sink.write_with("manifest.json", |buf| {
        buf.extend_from_slice(json.as_bytes());
        buf.push(b'\n');
        Ok(())
    })
    .context("stage manifest")?;
    Ok(())
}

/// Evaluate the six resource conditions with constant 1 and logarithm
/// factors dropped; returns warnings, never errors.
pub fn check_condition41(cfg: &ExperimentConfig, params: &DataModelParams) -> anyhow::Result<Vec<String>> {
    let snr = params.snr()?;
    let q = cfg.finetune.q;
    let d = params.d() as f64;
    let mu_sq = params.mu_norm() * params.mu_norm();
    let sp2d = params.sigma_p * params.sigma_p * d;
    let mut warnings = Vec::new();

    let n0_floor = (snr.powi(-2)).max(1.0);
    if (cfg.n0 as f64) < n0_floor {
        warnings.push(format!(
            "condition 1: n0 = {} below max(SNR^-2, 1) = {n0_floor:.3}",
            cfg.n0
        ));
    }
    if cfg.n < 1 {
        warnings.push("condition 2: n must be >= 1".to_string());
    }
    let e = 1.0 / (q - 2.0);
    let d_floor = (cfg.n as f64).powf(-6.0 * e) * snr.powf(-6.0 * q * e)
        * ((cfg.n0 as f64).recip()).max(snr.powi(-2))
        + (cfg.n0 as f64).powi(4);
    if d < d_floor {
        warnings.push(format!("condition 3: d = {d} below {d_floor:.3e}"));
    }
    let m_floor = (1.0 / cfg.delta).ln();
    if (cfg.pretrain.m as f64) < m_floor {
        warnings.push(format!(
            "condition 4: m = {} below log(1/delta) = {m_floor:.3}",
            cfg.pretrain.m
        ));
    }
    let sigma0_cap = (1.0f64)
        .min(d.recip() * (cfg.n as f64).powf(4.0 * e) * snr.powf(4.0 * q * e) / mu_sq)
        * (1.0f64).min(snr.recip()).min(snr.powi(-2));
    if cfg.pretrain.sigma0 > sigma0_cap {
        warnings.push(format!(
            "condition 5: sigma0 = {} above {sigma0_cap:.3e}",
            cfg.pretrain.sigma0
        ));
    }
    let eta = cfg.pretrain.eta.unwrap_or_else(|| default_pretrain_eta(params));
    let eta_cap = (1.0 / sp2d).min(1.0 / mu_sq);
    if eta > eta_cap {
        warnings.push(format!("condition 6: eta = {eta:.3e} above {eta_cap:.3e}"));
    }
    Ok(warnings)
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

pub const SWEEP_HEADER: &str = "cell,replicate,pipeline,n,n0,snr,q,seed,n_snr_q,n0_snr2,\
final_train_loss,final_test_loss,final_test_error,reached_epsilon,mu_alignment,error";

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub n: usize,
    pub n0: usize,
    pub snr: f64,
    pub q: f64,
}

fn apply_cell(base: &ExperimentConfig, cell: &SweepCell, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.n = cell.n;
    cfg.n0 = cell.n0;
    cfg.finetune.q = cell.q;
    cfg.seed = seed;
    cfg.output_dir = None;
    match &mut cfg.data {
        DataSpec::Synthetic { d, mu_norm, sigma_p } => {
            *mu_norm = cell.snr * *sigma_p * (*d as f64).sqrt();
        }
        DataSpec::Mnist { target_norm, sigma_p, .. } => {
            *target_norm = Some(cell.snr * *sigma_p * 28.0);
        }
    }
    cfg
}

/// One row per (cell, replicate, pipeline). Cells run in parallel; rows come
/// back in deterministic cell order, and per-cell failures become rows with
/// an error tag.
pub fn run_sweep(base: &ExperimentConfig) -> anyhow::Result<(Vec<String>, Vec<SweepCell>)> {
    use rayon::prelude::*;

    let spec = base
        .sweep
        .clone()
        .ok_or_else(|| anyhow::anyhow!("config has no [sweep] section"))?;
    let base_snr = match &base.data {
        DataSpec::Synthetic { d, mu_norm, sigma_p } => mu_norm / (sigma_p * (*d as f64).sqrt()),
        DataSpec::Mnist { target_norm, sigma_p, .. } => {
            target_norm.map(|t| t / (sigma_p * 28.0)).unwrap_or(1.0)
        }
    };
    let ns = if spec.n.is_empty() { vec![base.n] } else { spec.n.clone() };
    let n0s = if spec.n0.is_empty() { vec![base.n0] } else { spec.n0.clone() };
    let snrs = if spec.snr.is_empty() { vec![base_snr] } else { spec.snr.clone() };
    let qs = if spec.q.is_empty() { vec![base.finetune.q] } else { spec.q.clone() };
    let reps = spec.replicates.max(1);

    let mut cells = Vec::new();
    for &n in &ns {
        for &n0 in &n0s {
            for &snr in &snrs {
                for &q in &qs {
                    cells.push(SweepCell { n, n0, snr, q });
                }
            }
        }
    }
    anyhow::ensure!(!cells.is_empty(), "sweep grid is empty");

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let mut rows: Vec<(usize, usize, Vec<String>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = &cells[c];
            let seed = derive_seed(base.seed, "sweep", (c * reps + r) as u64);
            let cfg = apply_cell(base, cell, seed);
            let mut out = Vec::new();
            match run_experiment(&cfg, None, RunScope::Full) {
                Ok(outcome) => {
                    let n_snr_q = cell.n as f64 * cell.snr.powf(cell.q);
                    let n0_snr2 = cell.n0 as f64 * cell.snr * cell.snr;
                    let alignment =
                        outcome.spectral.as_ref().map_or(f64::NAN, |s| s.mu_alignment);
                    let mut push = |pipeline: &str, s: &PipelineSummary| {
                        out.push(format!(
                            "{c},{r},{pipeline},{},{},{},{},{seed},{n_snr_q},{n0_snr2},{},{},{},{},{alignment},",
                            cell.n,
                            cell.n0,
                            cell.snr,
                            cell.q,
                            s.final_train_loss,
                            s.final_test_loss,
                            s.final_test_error,
                            s.reached_epsilon.map_or(String::from(""), |v| v.to_string()),
                        ));
                    };
                    if let Some(s) = &outcome.simclr {
                        push("simclr_finetune", s);
                    }
                    if let Some(s) = &outcome.baseline {
                        push("baseline", s);
                    }
                }
                Err(e) => {
                    let msg = format!("{e:#}").replace(',', ";").replace('\n', " ");
                    out.push(format!(
                        "{c},{r},error,{},{},{},{},{seed},,,,,,,,{msg}",
                        cell.n, cell.n0, cell.snr, cell.q
                    ));
                }
            }
            (c, r, out)
        })
        .collect();
    rows.sort_by_key(|(c, r, _)| (*c, *r));
    let mut lines = vec![SWEEP_HEADER.to_string()];
    for (_, _, mut rs) in rows {
        lines.append(&mut rs);
    }
    Ok((lines, cells))
}

pub fn write_sweep_csv(lines: &[String], dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("sweep.csv");
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    fs::write(&path, buf)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
seed = 11
n0 = 24
n = 8
test_size = 40

[data]
kind = "synthetic"
d = 30
mu_norm = 4.0
sigma_p = 1.0

[pretrain]
m = 4
sigma0 = 1e-3
iterations = 5

[finetune]
iterations = 10
record_every = 5

[analyses]
xi_check_steps = 2
"#,
        )
        .unwrap()
    }

    #[test]
    fn full_pipeline_runs_in_memory() {
        let cfg = tiny_config();
        let outcome = run_experiment(&cfg, None, RunScope::Full).unwrap();
        assert!(outcome.simclr.is_some());
        assert!(outcome.baseline.is_some());
        assert!(outcome.spectral.is_some());
        assert!(outcome.theorem53.is_some());
        assert_eq!(outcome.xi_checks.len(), 2);
        assert_eq!(outcome.split_plus.len(), 4);
        // The step identity holds at every checked step.
        for row in &outcome.xi_checks {
            assert!(row.max_reconstruction_error <= 1e-9);
        }
    }

    #[test]
    fn condition41_flags_small_m_and_large_eta() {
        let mut cfg = tiny_config();
        cfg.pretrain.m = 2;
        let (params, _) = cfg.build_params().unwrap();
        let warnings = check_condition41(&cfg, &params).unwrap();
        assert!(warnings.iter().any(|w| w.starts_with("condition 4")), "{warnings:?}");

        cfg.pretrain.m = 40;
        cfg.pretrain.eta = Some(100.0 * default_pretrain_eta(&params));
        let warnings = check_condition41(&cfg, &params).unwrap();
        assert!(warnings.iter().any(|w| w.starts_with("condition 6")), "{warnings:?}");
    }

    #[test]
    fn condition41_passes_item1_on_appendix_values() {
        // n0 * SNR^2 = 250 * 0.0625 = 15.625 >= 1.
        let mut cfg = tiny_config();
        cfg.n0 = 250;
        cfg.data = DataSpec::Synthetic { d: 400, mu_norm: 10.0, sigma_p: 2.0 };
        let (params, _) = cfg.build_params().unwrap();
        let warnings = check_condition41(&cfg, &params).unwrap();
        assert!(!warnings.iter().any(|w| w.starts_with("condition 1")), "{warnings:?}");
    }

    #[test]
    fn single_cell_sweep_matches_run_experiment() {
        let mut cfg = tiny_config();
        cfg.sweep = Some(SweepSection {
            n: vec![8],
            n0: vec![24],
            snr: vec![],
            q: vec![],
            replicates: 1,
        });
        let (lines, cells) = run_sweep(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        // Header plus two pipelines of the single cell.
        assert_eq!(lines.len(), 3, "{lines:?}");
        // Replaying the cell directly gives the same numbers.
        let seed = derive_seed(cfg.seed, "sweep", 0);
        let base_snr = 4.0 / (1.0 * (30.0f64).sqrt());
        let cell = SweepCell { n: 8, n0: 24, snr: base_snr, q: 3.0 };
        let cfg2 = apply_cell(&cfg, &cell, seed);
        let outcome = run_experiment(&cfg2, None, RunScope::Full).unwrap();
        let s = outcome.simclr.unwrap();
        assert!(lines[1].contains(&format!("{}", s.final_train_loss)));
    }

    use crate::config::SweepSection;
}
