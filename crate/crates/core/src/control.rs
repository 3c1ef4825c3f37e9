//! Margin-shifted quadratic control on the Koopman predictor: the one-shot
//! load-shedding mode and the moving-horizon DC regulation loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguitySet;
use crate::dro::{worst_case_margin, VarSpec, WorstCaseResult};
use crate::error::{invalid, Error, Result};
use crate::gmm::{Block, Gmm, JointGmm, SIGMA_FLOOR};
use crate::koopman::{lift_history, KoopmanModel};
use crate::qp::{self, Qp};
use crate::sfr::SfrPlant;

/// How the decision vector maps onto the per-step inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// One decision per step.
    PerStep,
    /// A single decision held over the whole horizon.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Margin {
    Uniform(f64),
    /// One margin per predicted step `t = 1..=T`.
    PerStep(Vec<f64>),
}

impl Margin {
    fn at(&self, t: usize) -> f64 {
        match self {
            Margin::Uniform(z) => *z,
            Margin::PerStep(v) => v[t],
        }
    }

    fn max(&self) -> f64 {
        match self {
            Margin::Uniform(z) => *z,
            Margin::PerStep(v) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlProblem<'a> {
    pub model: &'a KoopmanModel,
    pub g0: DVector<f64>,
    /// Cost weight on the decision vector.
    pub r: DMatrix<f64>,
    pub f_min: f64,
    pub margin: Margin,
    pub horizon: usize,
    pub u_bounds: (f64, f64),
    pub parametrization: Parametrization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    pub decision: Vec<f64>,
    /// Input applied at each step of the horizon.
    pub u: Vec<f64>,
    pub cost: f64,
    /// Steps (0-based, step `t` predicts sample `t + 1`) whose frequency
    /// constraint carries a positive multiplier.
    pub active_steps: Vec<usize>,
    pub kkt_residual: f64,
    /// Predicted frequency deviation for `t = 1..=T` under `u`.
    pub predicted: Vec<f64>,
}

impl ControlProblem<'_> {
    pub fn decision_dim(&self) -> usize {
        match self.parametrization {
            Parametrization::PerStep => self.horizon,
            Parametrization::Hold => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.decision_dim();
        if self.horizon == 0 {
            return Err(invalid("control horizon must be at least 1"));
        }
        if self.model.input_dim() != 1 {
            return Err(invalid("control expects a single input channel"));
        }
        if self.g0.len() != self.model.lift_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.lift_dim(),
                got: self.g0.len(),
            });
        }
        if self.r.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.r.nrows(),
            });
        }
        if (&self.r - self.r.transpose()).amax() > 1e-12 * (1.0 + self.r.amax())
            || self.r.clone().cholesky().is_none()
        {
            return Err(invalid("cost matrix must be symmetric positive definite"));
        }
        let (lo, hi) = self.u_bounds;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(invalid("control bounds are empty"));
        }
        if !self.f_min.is_finite() {
            return Err(invalid("frequency limit must be finite"));
        }
        let ok = match &self.margin {
            Margin::Uniform(z) => z.is_finite() && *z >= 0.0,
            Margin::PerStep(v) => {
                v.len() == self.horizon && v.iter().all(|z| z.is_finite() && *z >= 0.0)
            }
        };
        if !ok {
            return Err(invalid(
                "margins must be finite, non-negative and one per step",
            ));
        }
        Ok(())
    }

    /// Affine prediction `f = free + gain * decision` over `t = 1..=T`.
    pub fn frequency_map(&self) -> (Vec<f64>, DMatrix<f64>) {
        let t_len = self.horizon;
        let free = self.model.free_response(&self.g0, t_len);
        let h: Vec<f64> = self
            .model
            .markov_parameters(t_len)
            .into_iter()
            .map(|r| r[0])
            .collect();
        let gain = match self.parametrization {
            Parametrization::PerStep => {
                DMatrix::from_fn(t_len, t_len, |t, j| if j <= t { h[t - j] } else { 0.0 })
            }
            Parametrization::Hold => {
                let mut col = DMatrix::zeros(t_len, 1);
                let mut acc = 0.0;
                for t in 0..t_len {
                    acc += h[t];
                    col[(t, 0)] = acc;
                }
                col
            }
        };
        (free, gain)
    }

    fn expand(&self, decision: &[f64]) -> Vec<f64> {
        match self.parametrization {
            Parametrization::PerStep => decision.to_vec(),
            Parametrization::Hold => vec![decision[0]; self.horizon],
        }
    }
}

/// Builds the QP for a set of margin profiles; every profile adds `T` rows.
fn build_qp(p: &ControlProblem, profiles: &[&dyn Fn(usize) -> f64]) -> (Qp, usize) {
    let (free, gain) = p.frequency_map();
    let d = p.decision_dim();
    let t_len = p.horizon;
    let (box_r, box_b) = qp::box_rows(d, p.u_bounds.0, p.u_bounds.1);
    let n_freq = profiles.len() * t_len;
    let m = n_freq + box_r.len();
    let mut c = DMatrix::zeros(m, d);
    let mut b = DVector::zeros(m);
    for (i, zeta) in profiles.iter().enumerate() {
        for t in 0..t_len {
            let row = i * t_len + t;
            c.row_mut(row).copy_from(&gain.row(t));
            b[row] = p.f_min + zeta(t) - free[t];
        }
    }
    for (i, (r, rhs)) in box_r.iter().zip(&box_b).enumerate() {
        for (j, v) in r.iter().enumerate() {
            c[(n_freq + i, j)] = *v;
        }
        b[n_freq + i] = *rhs;
    }
    (
        Qp {
            g: &p.r * 2.0,
            a: DVector::zeros(d),
            c,
            b,
        },
        n_freq,
    )
}

fn finish(p: &ControlProblem, sol: qp::QpSolution, n_freq: usize) -> ControlSolution {
    let decision: Vec<f64> = sol.x.iter().copied().collect();
    let (free, gain) = p.frequency_map();
    let f = gain * &sol.x;
    let mut active: Vec<usize> = (0..n_freq)
        .filter(|&i| sol.lambda[i] > 1e-8)
        .map(|i| i % p.horizon)
        .collect();
    active.sort_unstable();
    active.dedup();
    ControlSolution {
        cost: sol.x.dot(&(&p.r * &sol.x)),
        u: p.expand(&decision),
        decision,
        active_steps: active,
        kkt_residual: sol.kkt_residual,
        predicted: free.iter().zip(f.iter()).map(|(a, b)| a + b).collect(),
    }
}

fn solve_profiles(
    p: &ControlProblem,
    profiles: &[&dyn Fn(usize) -> f64],
) -> Result<Option<ControlSolution>> {
    let (qp, n_freq) = build_qp(p, profiles);
    Ok(qp::solve(&qp)?.map(|s| finish(p, s, n_freq)))
}

/// Minimum-cost control keeping every predicted step at least the margin
/// above `f_min`. Infeasibility reports the largest uniform margin the
/// bounds allow.
pub fn solve_drefc_u(p: &ControlProblem) -> Result<ControlSolution> {
    p.validate()?;
    let margin = |t: usize| p.margin.at(t);
    match solve_profiles(p, &[&margin])? {
        Some(s) => Ok(s),
        None => Err(Error::Infeasible {
            max_margin: max_margin(p)?,
        }),
    }
}

/// Scenario baseline: one block of constraints per sampled margin.
pub fn solve_scenarios(p: &ControlProblem, samples: &[f64]) -> Result<ControlSolution> {
    p.validate()?;
    if samples.is_empty() {
        return Err(invalid("scenario baseline needs at least one sample"));
    }
    let closures: Vec<_> = samples.iter().map(|&e| move |_t: usize| e).collect();
    let profiles: Vec<&dyn Fn(usize) -> f64> = closures
        .iter()
        .map(|c| c as &dyn Fn(usize) -> f64)
        .collect();
    match solve_profiles(p, &profiles)? {
        Some(s) => Ok(s),
        None => Err(Error::Infeasible {
            max_margin: max_margin(p)?,
        }),
    }
}

/// Largest uniform margin that some admissible control achieves, by
/// bisection on feasibility.
pub fn max_margin(p: &ControlProblem) -> Result<f64> {
    let (free, gain) = p.frequency_map();
    let d = p.decision_dim();
    let (lo_b, hi_b) = p.u_bounds;
    let worst_gap = |v: f64| {
        let x = DVector::from_element(d, v);
        let f = &gain * x;
        (0..p.horizon)
            .map(|t| free[t] + f[t] - p.f_min)
            .fold(f64::INFINITY, f64::min)
    };
    let mut lo = [0.0, lo_b, hi_b]
        .iter()
        .filter(|v| v.is_finite() && **v >= lo_b && **v <= hi_b)
        .map(|&v| worst_gap(v))
        .fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        lo = worst_gap(0.0);
    }
    let mut hi = p.margin.max();
    if hi <= lo {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let margin = |_t: usize| mid;
        let (qp, _) = build_qp(p, &[&margin]);
        if qp::solve(&qp)?.is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One shedding decision held from the current sample over the horizon,
/// against the worst-case margin of the ambiguity set.
#[allow(clippy::too_many_arguments)]
pub fn one_shot_load_shed(
    model: &KoopmanModel,
    g0: &DVector<f64>,
    set: &AmbiguitySet,
    var: &VarSpec,
    f_min: f64,
    r: f64,
    horizon: usize,
    u_max: f64,
) -> Result<(ControlSolution, WorstCaseResult)> {
    let worst = worst_case_margin(set, var)?;
    let problem = ControlProblem {
        model,
        g0: g0.clone(),
        r: DMatrix::from_element(1, 1, r),
        f_min,
        margin: Margin::Uniform(worst.zeta.max(0.0)),
        horizon,
        u_bounds: (0.0, u_max),
        parametrization: Parametrization::Hold,
    };
    Ok((solve_drefc_u(&problem)?, worst))
}

/// A plant sampled at the predictor interval.
pub trait Plant {
    /// Hold `u` for one interval; returns the measured frequency deviation at its end.
    fn advance(&mut self, u: f64) -> Result<f64>;
    /// Noise-free frequency deviation now.
    fn true_freq(&self) -> f64;
}

/// [`SfrPlant`] advanced `substeps` integration steps per interval.
///
/// With `averaged` the reading is the mean of one measurement per substep,
/// matching [`Trajectory::decimate_mean`](crate::sfr::Trajectory::decimate_mean).
#[derive(Debug, Clone)]
pub struct SampledSfr {
    pub plant: SfrPlant,
    pub substeps: usize,
    pub averaged: bool,
}

impl Plant for SampledSfr {
    fn advance(&mut self, u: f64) -> Result<f64> {
        let n = self.substeps.max(1);
        let mut sum = 0.0;
        for _ in 0..n {
            self.plant.advance(u)?;
            if self.averaged {
                sum += self.plant.measure();
            }
        }
        if self.averaged {
            Ok(sum / n as f64)
        } else {
            Ok(self.plant.measure())
        }
    }

    fn true_freq(&self) -> f64 {
        self.plant.true_freq()
    }
}

/// A plant that is the predictor itself, started from a lifted state.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub model: KoopmanModel,
    pub g: DVector<f64>,
}

impl Plant for LinearPlant {
    fn advance(&mut self, u: f64) -> Result<f64> {
        self.g = self.model.step(&self.g, &[u]);
        Ok(self.model.c.dot(&self.g))
    }

    fn true_freq(&self) -> f64 {
        self.model.c.dot(&self.g)
    }
}

/// What the realised errors of a regulation loop are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReference {
    /// The one-step prediction from the lift of the latest measurements.
    /// Every window plans from a fresh lift.
    OneStep,
    /// The prediction made at the control start, carried forward with the
    /// applied inputs. Every window plans from that prediction's state, so
    /// measurements reach the decision only through the error model.
    #[default]
    FromStart,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcLoopConfig {
    /// Past and future error counts of the joint mixture.
    pub m: usize,
    pub n: usize,
    /// Prediction horizon of each window's QP.
    pub horizon: usize,
    /// Sample index at which control starts.
    pub start: usize,
    pub windows: usize,
    pub f_min: f64,
    pub r_weight: f64,
    pub u_bounds: (f64, f64),
    pub var: VarSpec,
    pub radius: f64,
    pub k_budget: Option<usize>,
    /// Condition the error model on realised errors each window.
    pub online: bool,
    #[serde(default)]
    pub error_reference: ErrorReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WindowFlag {
    Conditioning { message: String },
    Margin { message: String },
    Infeasible { max_margin: f64 },
    Solver { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub window: usize,
    /// The most recent `m` realised errors, oldest first. Empty while fewer
    /// than `m` exist; the window then uses the unconditional mixture.
    pub x_p: Vec<f64>,
    /// Shortfall distribution fed to the worst-case margin.
    pub reference: Gmm,
    pub zeta: f64,
    pub control: f64,
    pub regularized: bool,
    pub flag: Option<WindowFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcRun {
    pub states: Vec<LoopState>,
    /// Applied input for every interval from sample 0.
    pub controls: Vec<f64>,
    pub measured: Vec<f64>,
    pub true_freq: Vec<f64>,
    /// Realised errors (measured minus predicted) from sample 1: one-step
    /// before the control start, then against the configured reference.
    pub errors: Vec<f64>,
    pub true_nadir: f64,
    pub cost: f64,
}

impl DcRun {
    pub fn failed_windows(&self) -> usize {
        self.states.iter().filter(|s| s.flag.is_some()).count()
    }
}

/// Scalar mixture of the first coordinate (the next-step error).
fn first_coordinate(g: &JointGmm) -> Result<Gmm> {
    Gmm::new(
        g.weights().to_vec(),
        g.means().iter().map(|m| m[0]).collect(),
        g.covs()
            .iter()
            .map(|c| libm::sqrt(c[(0, 0)]).max(SIGMA_FLOOR))
            .collect(),
    )
}

/// Moving-horizon regulation. Samples before `start` run with zero input.
/// Each window conditions the error model on the last `m` realised errors
/// (or uses the unconditional future marginal when `online` is off), takes
/// the worst-case margin of the shortfall, solves the QP and applies its
/// first step. Failed windows hold the previous input and are flagged.
pub fn closed_loop_dc<P: Plant>(
    plant: &mut P,
    model: &KoopmanModel,
    joint: &JointGmm,
    cfg: &DcLoopConfig,
) -> Result<DcRun> {
    if joint.past_dim() != cfg.m || joint.future_dim() != cfg.n || cfg.n == 0 {
        return Err(invalid("joint mixture dimensions do not match (m, n)"));
    }
    if cfg.start < cfg.m {
        return Err(invalid("control must start after m realised errors"));
    }
    if model.input_dim() != 1 {
        return Err(invalid("control expects a single input channel"));
    }
    let from_start = cfg.error_reference == ErrorReference::FromStart;
    let k_budget = |g: &Gmm| cfg.k_budget.unwrap_or(g.k());
    let static_ref = first_coordinate(&joint.marginal(Block::Future)?)?.negated();
    let static_margin = {
        let set = AmbiguitySet::with_budget(static_ref.clone(), cfg.radius, k_budget(&static_ref))?;
        worst_case_margin(&set, &cfg.var).map(|w| w.zeta)
    };

    let total = cfg.start + cfg.windows;
    let mut measured = vec![plant.true_freq()];
    let mut true_freq = vec![plant.true_freq()];
    let mut controls = Vec::with_capacity(total);
    let mut errors = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(cfg.windows);
    let ca = model.c.transpose() * &model.a;
    let cb = (model.c.transpose() * &model.b)[(0, 0)];
    let mut held = 0.0;
    // Model state of the prediction made at the control start.
    let mut g_hat: Option<DVector<f64>> = None;

    for k in 0..total {
        if from_start && k == cfg.start {
            g_hat = Some(lift_history(&model.dict, &measured, &controls, k));
        }
        let u = if k < cfg.start {
            0.0
        } else {
            let window = k - cfg.start;
            let realised = if from_start { window } else { errors.len() };
            let x_p = if realised >= cfg.m {
                errors[errors.len() - cfg.m..].to_vec()
            } else {
                Vec::new()
            };
            let mut state = LoopState {
                window,
                x_p: x_p.clone(),
                reference: static_ref.clone(),
                zeta: f64::NAN,
                control: held,
                regularized: false,
                flag: None,
            };
            let margin = if !cfg.online || realised < cfg.m {
                static_margin.clone()
            } else {
                match joint.condition(&x_p).and_then(|c| {
                    state.regularized = c.regularized;
                    first_coordinate(&c.gmm)
                }) {
                    Ok(g) => {
                        state.reference = g.negated();
                        let set = AmbiguitySet::with_budget(
                            state.reference.clone(),
                            cfg.radius,
                            k_budget(&state.reference),
                        )?;
                        worst_case_margin(&set, &cfg.var).map(|w| w.zeta)
                    }
                    Err(e) => {
                        state.flag = Some(WindowFlag::Conditioning {
                            message: alloc::format!("{e}"),
                        });
                        Err(e)
                    }
                }
            };
            match margin {
                Ok(zeta) => {
                    state.zeta = zeta;
                    let g0 = match &g_hat {
                        Some(g) => g.clone(),
                        None => lift_history(&model.dict, &measured, &controls, k),
                    };
                    let problem = ControlProblem {
                        model,
                        g0,
                        r: DMatrix::identity(cfg.horizon, cfg.horizon) * cfg.r_weight,
                        f_min: cfg.f_min,
                        margin: Margin::Uniform(zeta.max(0.0)),
                        horizon: cfg.horizon,
                        u_bounds: cfg.u_bounds,
                        parametrization: Parametrization::PerStep,
                    };
                    match solve_drefc_u(&problem) {
                        Ok(sol) => held = sol.u[0],
                        Err(Error::Infeasible { max_margin }) => {
                            state.flag = Some(WindowFlag::Infeasible { max_margin })
                        }
                        Err(e) => {
                            state.flag = Some(WindowFlag::Solver {
                                message: alloc::format!("{e}"),
                            })
                        }
                    }
                }
                Err(e) => {
                    if state.flag.is_none() {
                        state.flag = Some(WindowFlag::Margin {
                            message: alloc::format!("{e}"),
                        });
                    }
                }
            }
            state.control = held;
            states.push(state);
            held
        };
        let pred = match g_hat.as_mut() {
            Some(g) => {
                *g = model.step(g, &[u]);
                model.c.dot(g)
            }
            None => {
                let g = lift_history(&model.dict, &measured, &controls, k);
                ca.iter().zip(g.iter()).map(|(x, y)| x * y).sum::<f64>() + cb * u
            }
        };
        let y = plant.advance(u)?;
        errors.push(y - pred);
        measured.push(y);
        true_freq.push(plant.true_freq());
        controls.push(u);
    }
    let true_nadir = true_freq.iter().copied().fold(f64::INFINITY, f64::min);
    let cost = controls.iter().map(|u| cfg.r_weight * u * u).sum();
    Ok(DcRun {
        states,
        controls,
        measured,
        true_freq,
        errors,
        true_nadir,
        cost,
    })
}
