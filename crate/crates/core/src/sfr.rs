//! Aggregated system-frequency-response plant.
//!
//! Two states: the frequency deviation `w` (swing equation) and the governor
//! mechanical power `pm` (first-order lag behind a deadband and a soft limiter):
//!
//! ```text
//! 2H dw/dt  = pm - dP(t) + u(t) - D w
//! Tg dpm/dt = sat(-Kg db(w)) - pm
//! ```
//!
//! Integrated with fixed-step RK4. Gaussian measurement noise is added to the
//! reported frequency only.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfrParams {
    /// Twice the aggregate inertia constant, seconds.
    pub inertia_2h: f64,
    /// Load damping, pu power per pu frequency.
    pub damping: f64,
    /// Inverse droop, pu power per pu frequency.
    pub governor_gain: f64,
    pub governor_time_const: f64,
    /// Governor deadband half-width, pu frequency.
    pub deadband: f64,
    pub step_dt: f64,
    /// Governor output limit in pu power. `None` disables the limiter.
    pub saturation: Option<f64>,
    /// Standard deviation of the additive measurement noise on the reported frequency.
    pub noise_std: f64,
}

impl Default for SfrParams {
    fn default() -> Self {
        Self {
            inertia_2h: 10.0,
            damping: 1.0,
            governor_gain: 20.0,
            governor_time_const: 5.0,
            deadband: 0.0,
            step_dt: 0.01,
            saturation: Some(0.15),
            noise_std: 1e-4,
        }
    }
}

impl SfrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inertia_2h > 0.0) {
            return Err(invalid("inertia_2h must be positive"));
        }
        if !(self.step_dt > 0.0) {
            return Err(invalid("step_dt must be positive"));
        }
        if !(self.governor_time_const > 0.0) {
            return Err(invalid("governor_time_const must be positive"));
        }
        if self.saturation.is_some_and(|s| !(s >= 0.0)) {
            return Err(invalid("saturation level must be non-negative"));
        }
        if !(self.deadband >= 0.0) || !(self.noise_std >= 0.0) || !(self.damping >= 0.0) {
            return Err(invalid(
                "deadband, damping and noise_std must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn noiseless(&self) -> Self {
        Self {
            noise_std: 0.0,
            ..self.clone()
        }
    }

    fn governor_target(&self, w: f64) -> f64 {
        let db = if w > self.deadband {
            w - self.deadband
        } else if w < -self.deadband {
            w + self.deadband
        } else {
            0.0
        };
        let raw = -self.governor_gain * db;
        match self.saturation {
            None => raw,
            Some(l) if l > 0.0 => l * libm::tanh(raw / l),
            Some(_) => 0.0,
        }
    }

    fn rhs(&self, state: [f64; 2], deficit: f64, u: f64) -> [f64; 2] {
        let [w, pm] = state;
        [
            (pm - deficit + u - self.damping * w) / self.inertia_2h,
            (self.governor_target(w) - pm) / self.governor_time_const,
        ]
    }
}

/// Step loss of generation starting at `onset_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub onset_time: f64,
    pub power_deficit: f64,
}

impl Disturbance {
    pub fn validate(&self) -> Result<()> {
        if !(self.onset_time >= 0.0) || !(self.power_deficit >= 0.0) {
            return Err(invalid(
                "disturbance onset and deficit must be non-negative",
            ));
        }
        Ok(())
    }

    fn deficit_at(&self, t: f64) -> f64 {
        // Small slack so an onset on the grid is seen by the first RK4 stage.
        if t + 1e-12 >= self.onset_time {
            self.power_deficit
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Measured frequency deviation (with noise).
    pub freq_dev: Vec<f64>,
    /// Control power applied from each sample time to the next.
    pub injected_power: Vec<f64>,
    pub noise_seed: u64,
    /// Noise-free plant frequency deviation.
    pub true_freq_dev: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Lowest noise-free frequency deviation.
    pub fn nadir(&self) -> f64 {
        self.true_freq_dev
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn measured_nadir(&self) -> f64 {
        self.freq_dev.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Every `stride`-th sample. The injected power of a kept sample is the
    /// mean over the interval it opens, so held controls survive decimation.
    pub fn decimate(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let n = self.len();
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let power = idx
            .iter()
            .map(|&i| {
                let end = (i + stride).min(n);
                let span = &self.injected_power[i..end];
                span.iter().sum::<f64>() / span.len() as f64
            })
            .collect();
        Trajectory {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            freq_dev: idx.iter().map(|&i| self.freq_dev[i]).collect(),
            injected_power: power,
            noise_seed: self.noise_seed,
            true_freq_dev: idx.iter().map(|&i| self.true_freq_dev[i]).collect(),
        }
    }

    /// As [`Trajectory::decimate`], but every kept measurement after the first
    /// is the mean of the raw measurements over the interval it closes.
    pub fn decimate_mean(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let mut out = self.decimate(stride);
        for (j, f) in out.freq_dev.iter_mut().enumerate().skip(1) {
            let span = &self.freq_dev[(j - 1) * stride + 1..=j * stride];
            *f = span.iter().sum::<f64>() / stride as f64;
        }
        out
    }
}

/// Stepping form of the plant, used by both [`simulate`] and the closed loop.
#[derive(Debug, Clone)]
pub struct SfrPlant {
    params: SfrParams,
    dist: Disturbance,
    state: [f64; 2],
    step: usize,
    rng: Rng,
}

impl SfrPlant {
    pub fn new(params: SfrParams, dist: Disturbance, noise_seed: u64) -> Result<Self> {
        params.validate()?;
        dist.validate()?;
        Ok(Self {
            params,
            dist,
            state: [0.0, 0.0],
            step: 0,
            rng: rng::from_seed(noise_seed),
        })
    }

    pub fn params(&self) -> &SfrParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.step_dt
    }

    pub fn true_freq(&self) -> f64 {
        self.state[0]
    }

    pub fn governor_power(&self) -> f64 {
        self.state[1]
    }

    /// One RK4 step with `u` held constant; returns the new noise-free frequency.
    pub fn advance(&mut self, u: f64) -> Result<f64> {
        let p = &self.params;
        let h = p.step_dt;
        let t = self.time();
        let x = self.state;
        let add = |a: [f64; 2], k: [f64; 2], s: f64| [a[0] + s * k[0], a[1] + s * k[1]];
        let k1 = p.rhs(x, self.dist.deficit_at(t), u);
        let k2 = p.rhs(add(x, k1, 0.5 * h), self.dist.deficit_at(t + 0.5 * h), u);
        let k3 = p.rhs(add(x, k2, 0.5 * h), self.dist.deficit_at(t + 0.5 * h), u);
        let k4 = p.rhs(add(x, k3, h), self.dist.deficit_at(t + h), u);
        let next = [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        self.step += 1;
        if !next[0].is_finite() || !next[1].is_finite() {
            return Err(Error::IntegrationFailure {
                step: self.step,
                time: self.time(),
            });
        }
        self.state = next;
        Ok(next[0])
    }

    /// Noisy reading of the current frequency deviation.
    pub fn measure(&mut self) -> f64 {
        if self.params.noise_std > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            self.state[0] + self.params.noise_std * z
        } else {
            self.state[0]
        }
    }
}

/// Integrate the plant over `horizon` seconds.
///
/// `control[k]` is held over step `k`; missing entries are zero.
pub fn simulate(
    params: &SfrParams,
    dist: &Disturbance,
    control: &[f64],
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(horizon > dist.onset_time) {
        return Err(invalid("horizon must exceed the disturbance onset time"));
    }
    let steps = libm::round(horizon / params.step_dt) as usize;
    let mut plant = SfrPlant::new(params.clone(), *dist, seed)?;
    let mut out = Trajectory {
        times: Vec::with_capacity(steps + 1),
        freq_dev: Vec::with_capacity(steps + 1),
        injected_power: Vec::with_capacity(steps + 1),
        noise_seed: seed,
        true_freq_dev: Vec::with_capacity(steps + 1),
    };
    let u_at = |k: usize| control.get(k).copied().unwrap_or(0.0);
    out.times.push(0.0);
    out.freq_dev.push(0.0);
    out.true_freq_dev.push(0.0);
    out.injected_power.push(u_at(0));
    for k in 0..steps {
        let w = plant.advance(u_at(k))?;
        out.times.push(plant.time());
        out.true_freq_dev.push(w);
        out.freq_dev.push(plant.measure());
        out.injected_power.push(u_at(k + 1));
    }
    Ok(out)
}

/// Optional control excitation in training data: a held step of random height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub start_time: f64,
    pub amplitude_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_traj: usize,
    pub deficit_range: (f64, f64),
    pub horizon: f64,
    pub seed: u64,
    pub onset_time: f64,
    pub excitation: Option<Excitation>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_traj: 300,
            deficit_range: (0.05, 0.2),
            horizon: 60.0,
            seed: 1,
            onset_time: 0.0,
            excitation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub params: SfrParams,
    pub spec: DatasetSpec,
    pub disturbances: Vec<Disturbance>,
    pub trajectories: Vec<Trajectory>,
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Seed-deterministic batch of disturbance trajectories. Trajectory `i` only
/// depends on `derive_seed(spec.seed, i)`.
pub fn generate_dataset(params: &SfrParams, spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    let (lo, hi) = spec.deficit_range;
    if !(lo <= hi) || lo < 0.0 {
        return Err(invalid("deficit range is empty or negative"));
    }
    if let Some(ex) = &spec.excitation {
        if !(ex.amplitude_range.0 <= ex.amplitude_range.1) {
            return Err(invalid("excitation amplitude range is empty"));
        }
    }
    let steps = libm::round(spec.horizon / params.step_dt) as usize;
    let mut disturbances = Vec::with_capacity(spec.n_traj);
    let mut trajectories = Vec::with_capacity(spec.n_traj);
    for i in 0..spec.n_traj {
        let traj_seed = derive_seed(spec.seed, i as u64);
        let mut rng = rng::from_seed(traj_seed);
        let dist = Disturbance {
            onset_time: spec.onset_time,
            power_deficit: uniform(&mut rng, spec.deficit_range),
        };
        let mut control = alloc::vec![0.0; steps + 1];
        if let Some(ex) = &spec.excitation {
            let amp = uniform(&mut rng, ex.amplitude_range);
            let start = libm::round(ex.start_time / params.step_dt) as usize;
            for u in control.iter_mut().skip(start) {
                *u = amp;
            }
        }
        let noise_seed = derive_seed(traj_seed, 0xA11CE);
        trajectories.push(simulate(params, &dist, &control, spec.horizon, noise_seed)?);
        disturbances.push(dist);
    }
    Ok(Dataset {
        params: params.clone(),
        spec: spec.clone(),
        disturbances,
        trajectories,
    })
}
