//! Experiment configuration, read from TOML or JSON.

use std::path::Path;

use anyhow::{bail, Context, Result};
use drefc_core::control::ErrorReference;
use drefc_core::koopman::DictionarySpec;
use drefc_core::sfr::{DatasetSpec, Excitation, SfrParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: SfrParams,
    pub training: TrainingConfig,
    pub errors: ErrorModelConfig,
    pub control: ControlConfig,
    pub scenarios: ScenarioConfig,
    pub dc: DcConfig,
    pub icdf: IcdfConfig,
    pub timing: TimingConfig,
    pub cost: CostConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            plant: SfrParams {
                inertia_2h: 16.0,
                ..SfrParams::default()
            },
            training: TrainingConfig::default(),
            errors: ErrorModelConfig::default(),
            control: ControlConfig::default(),
            scenarios: ScenarioConfig::default(),
            dc: DcConfig::default(),
            icdf: IcdfConfig::default(),
            timing: TimingConfig::default(),
            cost: CostConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub dataset: DatasetSpec,
    pub dictionary: DictionarySpec,
    pub ridge: f64,
    /// Integration steps per predictor sample.
    pub stride: usize,
    /// Report each predictor sample as the mean of the raw measurements over
    /// its interval instead of the last one.
    pub averaged: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec {
                n_traj: 300,
                deficit_range: (0.04, 0.12),
                horizon: 20.0,
                seed: 1,
                onset_time: 0.0,
                excitation: Some(Excitation {
                    start_time: 0.5,
                    amplitude_range: (0.0, 0.1),
                }),
            },
            dictionary: DictionarySpec::with_grid(4, 10, (-0.03, 0.0), true).with_input_delays(3),
            ridge: 1e-10,
            stride: 10,
            averaged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModelConfig {
    /// Held-out events whose nadir prediction errors train the mixture.
    pub validation: DatasetSpec,
    pub k: usize,
    pub em_seed: u64,
    pub em_restarts: usize,
    /// Fixed ambiguity radius; when absent it is calibrated by bootstrap.
    pub gamma: Option<f64>,
    pub bootstrap: usize,
    pub gamma_quantile: f64,
    pub bootstrap_seed: u64,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        Self {
            validation: DatasetSpec {
                seed: 2,
                n_traj: 400,
                ..TrainingConfig::default().dataset
            },
            k: 3,
            em_seed: 5,
            em_restarts: 5,
            gamma: None,
            bootstrap: 40,
            gamma_quantile: 0.9,
            bootstrap_seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub alpha: f64,
    /// Confidence actually used for the margin when set (e.g. 0.955).
    pub alpha_guard: Option<f64>,
    pub f_min: f64,
    pub r_weight: f64,
    pub u_max: f64,
    /// Time at which emergency control acts, seconds after onset.
    pub efc_start: f64,
    /// Prediction horizon of the shedding decision, seconds.
    pub horizon: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            alpha_guard: None,
            f_min: -0.015,
            r_weight: 1.0,
            u_max: 0.3,
            efc_start: 0.5,
            horizon: 12.0,
        }
    }
}

impl ControlConfig {
    /// Significance level after the optional guard.
    pub fn effective_alpha(&self) -> f64 {
        match self.alpha_guard {
            Some(c) => self.alpha.min(1.0 - c),
            None => self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub count: usize,
    pub base_deficit: f64,
    pub seed: u64,
    pub economy_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            count: 700,
            base_deficit: 0.12,
            seed: 7,
            economy_threshold: -0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// QP horizon in predictor samples.
    pub horizon: usize,
    /// Control windows per run.
    pub windows: usize,
    pub count: usize,
    pub deficit_range: (f64, f64),
    pub u_max: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Keep every `sample_stride`-th error window when fitting the joint mixture.
    pub sample_stride: usize,
    pub error_reference: ErrorReference,
}

impl Default for DcConfig {
    fn default() -> Self {
        Self {
            m: 1,
            n: 1,
            k: 3,
            horizon: 20,
            windows: 80,
            count: 700,
            deficit_range: (0.08, 0.12),
            u_max: 0.1,
            gamma: 1e-10,
            seed: 11,
            sample_stride: 3,
            error_reference: ErrorReference::FromStart,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcdfConfig {
    pub n_gmms: usize,
    pub pairs: usize,
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// Each random mixture has a centre drawn from `center_range`, component
    /// means scattered around it with standard deviation `mean_spread`, and
    /// standard deviations drawn from `sigma_range`. Weights are Dirichlet(1).
    pub center_range: (f64, f64),
    pub mean_spread: f64,
    pub sigma_range: (f64, f64),
}

impl Default for IcdfConfig {
    fn default() -> Self {
        Self {
            n_gmms: 100,
            pairs: 10_000,
            ks: vec![3, 4, 5],
            alphas: vec![0.01, 0.02, 0.05, 0.1, 0.15, 0.2],
            seed: 17,
            center_range: (-10.0, 10.0),
            mean_spread: 0.2,
            sigma_range: (0.1, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub counts: Vec<usize>,
    pub repeats: usize,
    /// Solves per timed sample.
    pub batch: usize,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            counts: vec![100, 250, 500, 1000],
            repeats: 41,
            batch: 20,
            seed: 19,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub confidences: Vec<f64>,
    pub deficits: Vec<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            confidences: vec![0.95, 0.96, 0.97, 0.98, 0.99, 0.995, 0.999],
            deficits: vec![0.11, 0.12, 0.13],
        }
    }
}

impl Config {
    /// Reads `.toml` or `.json` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("config must be .toml or .json: {}", path.display()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.training.dictionary.validate()?;
        let c = &self.control;
        if !(c.alpha > 0.0 && c.alpha < 0.5) {
            bail!("control.alpha must lie in (0, 0.5)");
        }
        if let Some(g) = c.alpha_guard {
            if !(g > 0.5 && g < 1.0) {
                bail!("control.alpha_guard is a confidence level in (0.5, 1)");
            }
        }
        if self.training.stride == 0 {
            bail!("training.stride must be at least 1");
        }
        if self.errors.k == 0 || self.dc.k == 0 {
            bail!("mixture component counts must be at least 1");
        }
        if !(c.r_weight > 0.0) || !(c.u_max >= 0.0) {
            bail!("control.r_weight must be positive and u_max non-negative");
        }
        if !(0.0..1.0).contains(&self.errors.gamma_quantile) {
            bail!("errors.gamma_quantile must lie in [0, 1)");
        }
        if self.timing.counts.windows(2).any(|w| w[0] >= w[1]) {
            bail!("timing.counts must be strictly ascending");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn sample_dt(&self) -> f64 {
        self.plant.step_dt * self.training.stride as f64
    }

    /// Predictor sample index at which control acts.
    pub fn efc_sample(&self) -> usize {
        (self.control.efc_start / self.sample_dt()).round() as usize
    }

    pub fn horizon_samples(&self) -> usize {
        (self.control.horizon / self.sample_dt()).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml_and_json() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&json).unwrap(), cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: Config = toml::from_str("[control]\nalpha = 0.1\n").unwrap();
        assert_eq!(cfg.control.alpha, 0.1);
        assert_eq!(cfg.control.f_min, -0.015);
        assert_ne!(cfg.hash(), Config::default().hash());
        assert!(toml::from_str::<Config>("[control]\nalfa = 0.1\n").is_err());
    }

    #[test]
    fn guard_tightens_alpha() {
        let mut c = ControlConfig::default();
        assert_eq!(c.effective_alpha(), 0.05);
        c.alpha_guard = Some(0.955);
        assert!((c.effective_alpha() - 0.045).abs() < 1e-15);
    }
}
