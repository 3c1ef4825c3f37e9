use anyhow::{ensure, Result};
use drefc_core::ambiguity::{mw2, AmbiguitySet};
use drefc_core::control::{
    solve_drefc_u, ControlProblem, ControlSolution, Margin, Parametrization, Plant, SampledSfr,
};
use drefc_core::dro::{worst_case_margin, VarSpec, WorstCaseResult};
use drefc_core::gmm::{fit_em, EmConfig, FitReport, Gmm};
use drefc_core::koopman::{collect_errors, lift_history, train_edmd, ControlPolicy, KoopmanModel};
use drefc_core::rng::{self, derive_seed};
use drefc_core::sfr::{generate_dataset, Disturbance, SfrPlant, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::config::Config;

/// Trained predictor plus the nadir-error model built on held-out events.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: Config,
    pub model: KoopmanModel,
    /// Measured minus predicted nadir on the held-out events.
    pub nadir_errors: Vec<f64>,
    /// Mixture of the shortfall `-e`, the amount by which the real nadir
    /// falls below the predicted one.
    pub reference: Gmm,
    pub fit: FitReport,
    pub gamma: f64,
    pub bootstrap_distances: Vec<f64>,
}

/// Trajectories at the predictor interval, as the configured measurement reports them.
pub fn decimated(trajs: &[Trajectory], cfg: &Config) -> Vec<Trajectory> {
    let stride = cfg.training.stride;
    trajs
        .iter()
        .map(|t| {
            if cfg.training.averaged {
                t.decimate_mean(stride)
            } else {
                t.decimate(stride)
            }
        })
        .collect()
}

pub fn train_model(cfg: &Config) -> Result<KoopmanModel> {
    let ds = generate_dataset(&cfg.plant, &cfg.training.dataset)?;
    let trajs = decimated(&ds.trajectories, cfg);
    Ok(train_edmd(
        &trajs,
        &cfg.training.dictionary,
        cfg.training.ridge,
    )?)
}

pub fn em_config(cfg: &Config, k: usize, seed: u64) -> EmConfig {
    EmConfig {
        seed,
        restarts: cfg.errors.em_restarts,
        ..EmConfig::with_k(k)
    }
}

/// Linear-interpolated empirical quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Radius as the given quantile of MW2 distances between bootstrap refits
/// and the reference mixture.
pub fn bootstrap_gamma(samples: &[f64], reference: &Gmm, cfg: &Config) -> Result<(f64, Vec<f64>)> {
    let e = &cfg.errors;
    let mut distances = Vec::with_capacity(e.bootstrap);
    for b in 0..e.bootstrap {
        let mut r = rng::from_seed(derive_seed(e.bootstrap_seed, b as u64));
        let resample: Vec<f64> = (0..samples.len())
            .map(|_| samples[r.random_range(0..samples.len())])
            .collect();
        let (refit, _) = fit_em(
            &resample,
            &em_config(cfg, reference.k(), derive_seed(e.em_seed, b as u64 + 1)),
        )?;
        distances.push(mw2(&refit, reference)?.0);
    }
    Ok((quantile(&distances, e.gamma_quantile), distances))
}

impl Pipeline {
    pub fn build(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let model = train_model(cfg)?;
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: &Config, model: KoopmanModel) -> Result<Self> {
        ensure!(
            (model.sample_dt - cfg.sample_dt()).abs() < 1e-12,
            "model interval {} s does not match the configured {} s",
            model.sample_dt,
            cfg.sample_dt()
        );
        let val = generate_dataset(&cfg.plant, &cfg.errors.validation)?;
        let trajs = decimated(&val.trajectories, cfg);
        let errs = collect_errors(
            &model,
            &trajs,
            ControlPolicy::Recorded,
            cfg.efc_sample(),
            cfg.horizon_samples(),
        )?;
        let nadir_errors: Vec<f64> = errs.iter().map(|e| e.nadir_error).collect();
        let shortfalls: Vec<f64> = nadir_errors.iter().map(|e| -e).collect();
        let (reference, fit) = fit_em(
            &shortfalls,
            &em_config(cfg, cfg.errors.k, cfg.errors.em_seed),
        )?;
        let (gamma, bootstrap_distances) = match cfg.errors.gamma {
            Some(g) => (g, Vec::new()),
            None => bootstrap_gamma(&shortfalls, &reference, cfg)?,
        };
        Ok(Self {
            config: cfg.clone(),
            model,
            nadir_errors,
            reference,
            fit,
            gamma,
            bootstrap_distances,
        })
    }

    pub fn shortfalls(&self) -> Vec<f64> {
        self.nadir_errors.iter().map(|e| -e).collect()
    }

    pub fn var(&self) -> Result<VarSpec> {
        Ok(VarSpec::new(self.config.control.effective_alpha())?)
    }

    pub fn ambiguity(&self) -> Result<AmbiguitySet> {
        Ok(AmbiguitySet::new(self.reference.clone(), self.gamma)?)
    }

    pub fn worst_case(&self, var: &VarSpec) -> Result<WorstCaseResult> {
        Ok(worst_case_margin(&self.ambiguity()?, var)?)
    }

    /// Runs the plant uncontrolled until control starts.
    pub fn event(&self, deficit: f64, noise_seed: u64) -> Result<Event> {
        let cfg = &self.config;
        let dist = Disturbance {
            onset_time: 0.0,
            power_deficit: deficit,
        };
        let mut plant = SampledSfr {
            plant: SfrPlant::new(cfg.plant.clone(), dist, noise_seed)?,
            substeps: cfg.training.stride,
            averaged: cfg.training.averaged,
        };
        let efc = cfg.efc_sample();
        let mut history = vec![plant.true_freq()];
        for _ in 0..efc {
            history.push(plant.advance(0.0)?);
        }
        let g0 = lift_history(&self.model.dict, &history, &[], efc);
        Ok(Event {
            deficit,
            history,
            g0,
            plant,
        })
    }

    /// The held-shedding problem for an event lifted at `g0`; the margin is clamped at zero.
    pub fn shed_problem(&self, g0: &DVector<f64>, zeta: f64) -> ControlProblem<'_> {
        let c = &self.config.control;
        ControlProblem {
            model: &self.model,
            g0: g0.clone(),
            r: DMatrix::from_element(1, 1, c.r_weight),
            f_min: c.f_min,
            margin: Margin::Uniform(zeta.max(0.0)),
            horizon: self.config.horizon_samples(),
            u_bounds: (0.0, c.u_max),
            parametrization: Parametrization::Hold,
        }
    }

    pub fn shed(&self, g0: &DVector<f64>, zeta: f64) -> Result<ControlSolution> {
        Ok(solve_drefc_u(&self.shed_problem(g0, zeta))?)
    }
}

/// A disturbance observed up to the control start.
#[derive(Debug, Clone)]
pub struct Event {
    pub deficit: f64,
    /// Measured frequency at predictor samples `0..=efc`.
    pub history: Vec<f64>,
    pub g0: DVector<f64>,
    pub plant: SampledSfr,
}

impl Event {
    /// Applies a held input for `steps` predictor samples on a copy of the
    /// plant and returns the noise-free frequency at each.
    pub fn play(&self, u: f64, steps: usize) -> Result<Vec<f64>> {
        let mut plant = self.plant.clone();
        (0..steps)
            .map(|_| {
                plant.advance(u)?;
                Ok(plant.true_freq())
            })
            .collect()
    }
}
