//! Experiment configuration: a single TOML file with nested sections, CLI
//! overrides, and a fully resolved echo in the output manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snlab_core::data::DataModelParams;

use crate::idx::load_mnist_signal;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        d: usize,
        mu_norm: f64,
        sigma_p: f64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        digit_class: u8,
        sample_index: usize,
        /// Rescale the [0,1]-scaled image to this norm when set.
        target_norm: Option<f64>,
        sigma_p: f64,
    },
}

fn default_tau() -> f64 {
    0.5
}

fn default_big_m() -> f64 {
    1.0
}

fn default_max_pretrain_iterations() -> usize {
    5000
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub m: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// `0.1 * min((sigma_p^2 d)^-1, ||mu||^-2)` when omitted.
    #[serde(default)]
    pub eta: Option<f64>,
    pub sigma0: f64,
    /// The T_SimCLR formula with measured `||A||_2` and `eps_hat` when omitted.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_max_pretrain_iterations")]
    pub max_iterations: usize,
    /// The free strength parameter `M` of the pre-training guarantee.
    #[serde(default = "default_big_m")]
    pub big_m: f64,
}

fn default_q() -> f64 {
    3.0
}

fn default_t_star_cap() -> usize {
    50_000
}

fn default_epsilon_target() -> f64 {
    0.05
}

fn default_record_every() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    /// Filters per sign; defaults to the pre-training `m`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_q")]
    pub q: f64,
    /// `16 * min((sigma_p^2 d)^-1, ||mu||^-2)` when omitted.
    #[serde(default)]
    pub eta: Option<f64>,
    /// The Theorem-5.5-order budget with measured gamma0 when omitted.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_t_star_cap")]
    pub t_star_cap: usize,
    #[serde(default = "default_epsilon_target")]
    pub epsilon_target: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalysesSection {
    #[serde(default = "default_true")]
    pub spectral: bool,
    #[serde(default = "default_true")]
    pub decomposition: bool,
    #[serde(default)]
    pub coefficient_track: bool,
    /// Record Xi reconstruction diagnostics for this many leading steps.
    #[serde(default)]
    pub xi_check_steps: usize,
}

impl Default for AnalysesSection {
    fn default() -> Self {
        AnalysesSection {
            spectral: true,
            decomposition: true,
            coefficient_track: false,
            xi_check_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    SimclrFinetune,
    Baseline,
    Both,
}

impl Pipeline {
    pub fn runs_simclr(self) -> bool {
        matches!(self, Pipeline::SimclrFinetune | Pipeline::Both)
    }

    pub fn runs_baseline(self) -> bool {
        matches!(self, Pipeline::Baseline | Pipeline::Both)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub n0: Vec<usize>,
    /// Realized by setting `mu_norm = snr * sigma_p * sqrt(d)`.
    #[serde(default)]
    pub snr: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_replicates() -> usize {
    1
}

fn default_delta() -> f64 {
    0.01
}

fn default_pipeline() -> Pipeline {
    Pipeline::Both
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_pipeline")]
    pub pipeline: Pipeline,
    pub n0: usize,
    pub n: usize,
    pub test_size: usize,
    /// Failure probability for concentration warnings.
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub data: DataSpec,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub analyses: AnalysesSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n0 == 0 || self.n == 0 || self.test_size == 0 {
            anyhow::bail!("n0, n and test_size must be >= 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            anyhow::bail!("delta must lie in (0, 1)");
        }
        if self.pretrain.m == 0 {
            anyhow::bail!("pretrain.m must be >= 1");
        }
        if !(self.pretrain.tau > 0.0) {
            anyhow::bail!("pretrain.tau must be > 0");
        }
        if !(self.pretrain.sigma0 >= 0.0) {
            anyhow::bail!("pretrain.sigma0 must be >= 0");
        }
        if let Some(eta) = self.pretrain.eta {
            if !(eta > 0.0) {
                anyhow::bail!("pretrain.eta must be > 0");
            }
        }
        if !(self.finetune.q > 2.0) {
            anyhow::bail!("finetune.q must be > 2");
        }
        if let Some(eta) = self.finetune.eta {
            if !(eta > 0.0) {
                anyhow::bail!("finetune.eta must be > 0");
            }
        }
        if let Some(iters) = self.finetune.iterations {
            if iters > self.finetune.t_star_cap {
                anyhow::bail!("finetune.iterations exceeds finetune.t_star_cap");
            }
        }
        match &self.data {
            DataSpec::Synthetic { d, mu_norm, sigma_p } => {
                if *d < 2 {
                    anyhow::bail!("data.d must be >= 2");
                }
                if !(*mu_norm > 0.0) {
                    anyhow::bail!("data.mu_norm must be > 0");
                }
                if !(*sigma_p >= 0.0) {
                    anyhow::bail!("data.sigma_p must be >= 0");
                }
            }
            DataSpec::Mnist { target_norm, sigma_p, .. } => {
                if let Some(t) = target_norm {
                    if !(*t > 0.0) {
                        anyhow::bail!("data.target_norm must be > 0");
                    }
                }
                if !(*sigma_p >= 0.0) {
                    anyhow::bail!("data.sigma_p must be >= 0");
                }
            }
        }
        Ok(())
    }

    /// Instantiate the data-model parameters (loads the MNIST signal if
    /// needed). Returns the params plus a provenance note for the manifest.
    pub fn build_params(&self) -> anyhow::Result<(DataModelParams, String)> {
        match &self.data {
            DataSpec::Synthetic { d, mu_norm, sigma_p } => {
                let params = DataModelParams::axis_signal(*d, *mu_norm, *sigma_p)?;
                Ok((params, format!("synthetic axis signal, d={d}, mu_norm={mu_norm}")))
            }
            DataSpec::Mnist { images, labels, digit_class, sample_index, target_norm, sigma_p } => {
                let (mu, prov) =
                    load_mnist_signal(images, labels, *digit_class, *sample_index, *target_norm)?;
                let params = DataModelParams::new(mu, *sigma_p)?;
                Ok((params, prov))
            }
        }
    }

    pub fn finetune_m(&self) -> usize {
        self.finetune.m.unwrap_or(self.pretrain.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
n0 = 20
n = 8
test_size = 50

[data]
kind = "synthetic"
d = 40
mu_norm = 5.0
sigma_p = 1.0

[pretrain]
m = 4
sigma0 = 1e-4

[finetune]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.pretrain.tau, 0.5);
        assert_eq!(cfg.finetune.q, 3.0);
        assert_eq!(cfg.pipeline, Pipeline::Both);
        assert!(cfg.analyses.spectral);
        assert_eq!(cfg.finetune_m(), 4);
        assert_eq!(cfg.delta, 0.01);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_q() {
        let bad = MINIMAL.replace("[finetune]", "[finetune]\nq = 2.0");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }
}
