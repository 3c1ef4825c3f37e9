use std::time::Instant;

use anyhow::{ensure, Context, Result};
use drefc_core::control::ErrorReference;
use drefc_core::control::{closed_loop_dc, solve_drefc_u, DcLoopConfig, SampledSfr};
use drefc_core::dro::{approx_icdf, exact_icdf, worst_case_margin, VarSpec, WorstCaseResult};
use drefc_core::gmm::{fit_joint_em, FitReport, Gmm, JointGmm};
use drefc_core::koopman::{collect_errors, one_step_errors, ControlPolicy};
use drefc_core::rng::{self, derive_seed};
use drefc_core::sfr::{generate_dataset, Disturbance, SfrPlant};
use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{decimated, em_config, Pipeline};
use super::scenarios::{
    baseline_ro, baseline_so, economy_indicator, generate_scenarios, mean_cost, safety_indicator,
    ScenarioRun,
};
use crate::config::{Config, IcdfConfig, TimingConfig};

fn nadir(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub name: String,
    pub seed: u64,
    pub runs: Vec<ScenarioRun>,
    pub safety: f64,
    pub economy: f64,
    pub mean_cost: f64,
}

impl ScenarioSet {
    fn new(name: &str, seed: u64, runs: Vec<ScenarioRun>, threshold: f64) -> Self {
        Self {
            name: name.into(),
            seed,
            safety: safety_indicator(&runs),
            economy: economy_indicator(&runs, threshold),
            mean_cost: mean_cost(&runs),
            runs,
        }
    }
}

/// The base event, its shedding decision and the scenario sets drawn from
/// the reference and the worst-case mixtures.
#[derive(Debug, Clone)]
pub struct LoadShedOutcome {
    pub deficit: f64,
    pub noise_seed: u64,
    pub worst: WorstCaseResult,
    pub shed: f64,
    pub cost: f64,
    pub solve_time: f64,
    pub predicted: Vec<f64>,
    /// Noise-free nadir of the plant itself under the shed.
    pub plant_nadir: f64,
    pub reference: ScenarioSet,
    pub worst_case: ScenarioSet,
}

pub fn load_shed_experiment(p: &Pipeline) -> Result<LoadShedOutcome> {
    let cfg = &p.config;
    let sc = &cfg.scenarios;
    let noise_seed = derive_seed(sc.seed, 0);
    let event = p.event(sc.base_deficit, noise_seed)?;
    let var = p.var()?;
    let t0 = Instant::now();
    let worst = p.worst_case(&var)?;
    let sol = p
        .shed(&event.g0, worst.zeta)
        .context("shedding decision for the base event")?;
    let solve_time = t0.elapsed().as_secs_f64();
    let shed = sol.u[0];
    let plant_nadir =
        nadir(&event.play(shed, cfg.horizon_samples())?).min(nadir(&event.history[1..]));

    let set = |name: &str, shortfall: &Gmm| -> Result<ScenarioSet> {
        let inputs = generate_scenarios(&shortfall.negated(), sc.count, &sol.predicted, sc.seed)?;
        let runs = inputs
            .iter()
            .map(|s| {
                ScenarioRun::new(
                    s,
                    cfg.control.f_min,
                    sc.economy_threshold,
                    sol.cost,
                    solve_time,
                )
            })
            .collect();
        Ok(ScenarioSet::new(name, sc.seed, runs, sc.economy_threshold))
    };
    let reference = set("reference", &p.reference)?;
    let worst_case = set("worst", &worst.worst)?;
    Ok(LoadShedOutcome {
        deficit: sc.base_deficit,
        noise_seed,
        shed,
        cost: sol.cost,
        solve_time,
        predicted: sol.predicted,
        plant_nadir,
        reference,
        worst_case,
        worst,
    })
}

fn normal(r: &mut rng::Rng) -> f64 {
    StandardNormal.sample(r)
}

/// A random mixture of `k` components as configured in `cfg`.
pub fn random_gmm(k: usize, cfg: &IcdfConfig, r: &mut rng::Rng) -> Result<Gmm> {
    let raw: Vec<f64> = (0..k).map(|_| -> f64 { Exp1.sample(r) }).collect();
    let total: f64 = raw.iter().sum();
    let center = r.random_range(cfg.center_range.0..=cfg.center_range.1);
    let means = (0..k)
        .map(|_| center + cfg.mean_spread * normal(r))
        .collect();
    let sigmas = (0..k)
        .map(|_| r.random_range(cfg.sigma_range.0..=cfg.sigma_range.1))
        .collect();
    Ok(Gmm::new(
        raw.iter().map(|w| w / total).collect(),
        means,
        sigmas,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdfCell {
    pub k: usize,
    pub alpha: f64,
    pub pairs: usize,
    pub reversals: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdfCorrelation {
    pub k: usize,
    pub alpha: f64,
    pub n_gmms: usize,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdfReport {
    pub cells: Vec<IcdfCell>,
    pub correlations: Vec<IcdfCorrelation>,
}

/// Whether the approximate quantiles order a pair the other way round from the exact ones.
pub fn reversed(exact: (f64, f64), approx: (f64, f64)) -> bool {
    (exact.0 - exact.1) * (approx.0 - approx.1) < 0.0
}

/// Exact and approximate upper quantiles of one mixture at every alpha.
fn quantiles(g: &Gmm, alphas: &[f64]) -> Result<Vec<(f64, f64)>> {
    alphas
        .iter()
        .map(|a| Ok((exact_icdf(g, 1.0 - a)?, approx_icdf(g, 1.0 - a))))
        .collect()
}

pub fn icdf_study(cfg: &IcdfConfig) -> Result<IcdfReport> {
    ensure!(cfg.n_gmms >= 2, "the study needs at least two mixtures");
    let mut cells = Vec::new();
    let mut correlations = Vec::new();
    for &k in &cfg.ks {
        let seed = derive_seed(cfg.seed, k as u64);
        let pool: Vec<Vec<(f64, f64)>> = (0..cfg.n_gmms)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::from_seed(derive_seed(seed, i as u64));
                quantiles(&random_gmm(k, cfg, &mut r)?, &cfg.alphas)
            })
            .collect::<Result<_>>()?;
        for (j, &alpha) in cfg.alphas.iter().enumerate() {
            let (x, y): (Vec<f64>, Vec<f64>) = pool.iter().map(|q| q[j]).unzip();
            correlations.push(IcdfCorrelation {
                k,
                alpha,
                n_gmms: cfg.n_gmms,
                pearson: pearson(&x, &y),
            });
        }
        let pair_seed = derive_seed(seed, u64::MAX);
        let flags: Vec<Vec<bool>> = (0..cfg.pairs)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::from_seed(derive_seed(pair_seed, i as u64));
                let a = quantiles(&random_gmm(k, cfg, &mut r)?, &cfg.alphas)?;
                let b = quantiles(&random_gmm(k, cfg, &mut r)?, &cfg.alphas)?;
                Ok(a.iter()
                    .zip(&b)
                    .map(|(p, q)| reversed((p.0, q.0), (p.1, q.1)))
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (j, &alpha) in cfg.alphas.iter().enumerate() {
            let reversals = flags.iter().filter(|f| f[j]).count();
            cells.push(IcdfCell {
                k,
                alpha,
                pairs: cfg.pairs,
                reversals,
                rate: reversals as f64 / cfg.pairs.max(1) as f64,
            });
        }
    }
    Ok(IcdfReport {
        cells,
        correlations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub count: usize,
    /// Median seconds per solve.
    pub drefc: f64,
    pub so: f64,
}

/// Median solve time of the worst-case margin plus QP against the scenario
/// baseline with `count` sampled shortfalls. Runs on the calling thread only.
pub fn timing_study(p: &Pipeline, cfg: &TimingConfig) -> Result<Vec<TimingPoint>> {
    ensure!(
        cfg.repeats >= 1 && cfg.batch >= 1,
        "repeats and batch must be at least 1"
    );
    let event = p.event(
        p.config.scenarios.base_deficit,
        derive_seed(p.config.scenarios.seed, 0),
    )?;
    let var = p.var()?;
    let set = p.ambiguity()?;
    let base = p.shed_problem(&event.g0, 0.0);
    let drefc = || -> Result<()> {
        let w = worst_case_margin(&set, &var)?;
        std::hint::black_box(p.shed(&event.g0, w.zeta)?);
        Ok(())
    };
    for _ in 0..cfg.batch {
        drefc()?;
    }
    let samples: Vec<Vec<f64>> = cfg
        .counts
        .iter()
        .map(|&n| p.reference.sample(n, derive_seed(cfg.seed, n as u64)))
        .collect();
    let n = cfg.counts.len();
    let (mut a, mut b) = (
        vec![Vec::with_capacity(cfg.repeats); n],
        vec![Vec::with_capacity(cfg.repeats); n],
    );
    // Counts are interleaved within each repeat so drift in machine load
    // reaches every count alike.
    for _ in 0..cfg.repeats {
        for (i, s) in samples.iter().enumerate() {
            let t = Instant::now();
            for _ in 0..cfg.batch {
                drefc()?;
            }
            a[i].push(t.elapsed().as_secs_f64() / cfg.batch as f64);
            let t = Instant::now();
            for _ in 0..cfg.batch {
                std::hint::black_box(baseline_so(s, &base)?);
            }
            b[i].push(t.elapsed().as_secs_f64() / cfg.batch as f64);
        }
    }
    let out = (0..n)
        .map(|i| TimingPoint {
            count: cfg.counts[i],
            drefc: median(&mut a[i]),
            so: median(&mut b[i]),
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub confidence: f64,
    pub zeta: f64,
    pub ro_zeta: f64,
    /// Means over the cost events.
    pub drefc_cost: f64,
    pub ro_cost: f64,
    /// Mean of the per-event cost ratios; absent if some event has no RO solution or zero RO cost.
    pub ratio: Option<f64>,
}

/// DREFC against the robust baseline at each configured confidence.
pub fn cost_ratio_study(p: &Pipeline) -> Result<Vec<CostRow>> {
    let cfg = &p.config;
    let history = p.shortfalls();
    let events = cfg
        .cost
        .deficits
        .iter()
        .enumerate()
        .map(|(i, &d)| p.event(d, derive_seed(cfg.scenarios.seed, 100 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    cfg.cost
        .confidences
        .par_iter()
        .map(|&c| {
            let zeta = p.worst_case(&VarSpec::confidence(c)?)?.zeta;
            let mut ro_zeta = 0.0;
            let (mut a, mut b, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
            for ev in &events {
                let d = p.shed(&ev.g0, zeta)?.cost;
                let ro = baseline_ro(&history, &p.shed_problem(&ev.g0, 0.0));
                a.push(d);
                match ro {
                    Ok((z, sol)) => {
                        ro_zeta = z;
                        b.push(sol.cost);
                        ratios.push((sol.cost > 0.0).then(|| d / sol.cost));
                    }
                    Err(_) => {
                        b.push(f64::INFINITY);
                        ratios.push(None);
                    }
                }
            }
            let n = events.len() as f64;
            let ratio = ratios.iter().copied().sum::<Option<f64>>().map(|s| s / n);
            Ok(CostRow {
                confidence: c,
                zeta,
                ro_zeta,
                drefc_cost: a.iter().sum::<f64>() / n,
                ro_cost: b.iter().sum::<f64>() / n,
                ratio,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub zeta: f64,
    pub shed: Option<f64>,
    pub cost: Option<f64>,
    pub predicted_nadir: Option<f64>,
    /// Noise-free nadir of the plant under the decision.
    pub plant_nadir: Option<f64>,
    pub solve_time: f64,
}

/// DREFC, the scenario baseline on the historical shortfalls and the robust
/// baseline on the base event.
pub fn compare_baselines(p: &Pipeline) -> Result<Vec<BaselineRow>> {
    let cfg = &p.config;
    let event = p.event(
        cfg.scenarios.base_deficit,
        derive_seed(cfg.scenarios.seed, 0),
    )?;
    let history = p.shortfalls();
    let base = p.shed_problem(&event.g0, 0.0);
    let steps = cfg.horizon_samples();
    let row = |method: &str,
               zeta: f64,
               sol: Option<drefc_core::control::ControlSolution>,
               t: f64|
     -> Result<BaselineRow> {
        let plant_nadir = match &sol {
            Some(s) => Some(nadir(&event.play(s.u[0], steps)?).min(nadir(&event.history[1..]))),
            None => None,
        };
        Ok(BaselineRow {
            method: method.into(),
            zeta,
            shed: sol.as_ref().map(|s| s.u[0]),
            cost: sol.as_ref().map(|s| s.cost),
            predicted_nadir: sol.as_ref().map(|s| nadir(&s.predicted)),
            plant_nadir,
            solve_time: t,
        })
    };
    let t = Instant::now();
    let w = p.worst_case(&p.var()?)?;
    let d = p.shed(&event.g0, w.zeta).ok();
    let drefc = row("drefc", w.zeta, d, t.elapsed().as_secs_f64())?;
    let t = Instant::now();
    let so = baseline_so(&history, &base).ok();
    let so_zeta = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let so = row("so", so_zeta, so, t.elapsed().as_secs_f64())?;
    let t = Instant::now();
    let zeta = history
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let ro = baseline_ro(&history, &base).ok().map(|(_, s)| s);
    let ro = row("ro", zeta, ro, t.elapsed().as_secs_f64())?;
    Ok(vec![drefc, so, ro])
}

/// Windows of `m + n` consecutive one-step errors, every `stride`-th start.
pub fn error_windows(errors: &[f64], m: usize, n: usize, stride: usize) -> Vec<DVector<f64>> {
    let w = m + n;
    if errors.len() < w {
        return Vec::new();
    }
    (0..=errors.len() - w)
        .step_by(stride.max(1))
        .map(|i| DVector::from_column_slice(&errors[i..i + w]))
        .collect()
}

/// Error windows on validation events drawn with `seed`, measured against
/// the configured loop reference.
pub fn dc_windows(p: &Pipeline, seed: u64) -> Result<Vec<DVector<f64>>> {
    let cfg = &p.config;
    let dc = &cfg.dc;
    let spec = drefc_core::sfr::DatasetSpec {
        seed,
        ..cfg.errors.validation.clone()
    };
    let val = generate_dataset(&cfg.plant, &spec)?;
    let trajs = decimated(&val.trajectories, cfg);
    let series: Vec<Vec<f64>> = match dc.error_reference {
        ErrorReference::OneStep => trajs.iter().map(|t| one_step_errors(&p.model, t)).collect(),
        ErrorReference::FromStart => collect_errors(
            &p.model,
            &trajs,
            ControlPolicy::Recorded,
            cfg.efc_sample(),
            dc.windows,
        )?
        .into_iter()
        .map(|e| e.errors.iter().map(|s| s.error).collect())
        .collect(),
    };
    Ok(series
        .iter()
        .flat_map(|e| error_windows(e, dc.m, dc.n, dc.sample_stride))
        .collect())
}

pub fn fit_dc_mixture(p: &Pipeline) -> Result<(JointGmm, FitReport)> {
    let cfg = &p.config;
    let points = dc_windows(p, cfg.errors.validation.seed)?;
    let em = em_config(cfg, cfg.dc.k, derive_seed(cfg.errors.em_seed, 1000));
    Ok(fit_joint_em(&points, cfg.dc.m, cfg.dc.n, &em)?)
}

/// Mean log density of the next error on held-out windows, conditional on
/// the past block and under the future marginal alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCheck {
    pub windows: usize,
    pub conditional: f64,
    pub marginal: f64,
}

pub fn conditional_check(p: &Pipeline, joint: &JointGmm) -> Result<ConditionalCheck> {
    let m = joint.past_dim();
    let held_out = dc_windows(p, derive_seed(p.config.errors.validation.seed, 1))?;
    let future = joint.marginal(drefc_core::gmm::Block::Future)?;
    let (mut c, mut u) = (0.0, 0.0);
    for w in &held_out {
        let (past, next) = (&w.as_slice()[..m], &w.as_slice()[m..]);
        c += joint.condition(past)?.gmm.ln_pdf(next)?;
        u += future.ln_pdf(next)?;
    }
    let n = held_out.len() as f64;
    Ok(ConditionalCheck {
        windows: held_out.len(),
        conditional: c / n,
        marginal: u / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcRow {
    pub id: usize,
    pub online: bool,
    pub deficit: f64,
    pub noise_seed: u64,
    /// Noise-free nadir from the control start on.
    pub nadir: f64,
    pub safe: bool,
    pub cost: f64,
    pub failed_windows: usize,
    pub mean_zeta: f64,
}

pub fn dc_loop_config(cfg: &Config, var: VarSpec, online: bool) -> DcLoopConfig {
    DcLoopConfig {
        m: cfg.dc.m,
        n: cfg.dc.n,
        horizon: cfg.dc.horizon,
        start: cfg.efc_sample(),
        windows: cfg.dc.windows,
        f_min: cfg.control.f_min,
        r_weight: cfg.control.r_weight,
        u_bounds: (0.0, cfg.dc.u_max),
        var,
        radius: cfg.dc.gamma,
        k_budget: None,
        online,
        error_reference: cfg.dc.error_reference,
    }
}

/// Deficit and noise seed of DC event `i`.
pub fn dc_event(cfg: &Config, i: usize) -> (f64, u64) {
    let mut r = rng::from_seed(derive_seed(cfg.dc.seed, i as u64));
    let (lo, hi) = cfg.dc.deficit_range;
    (
        r.random_range(lo..=hi),
        derive_seed(cfg.dc.seed ^ 0xDC, i as u64),
    )
}

pub fn dc_run(
    p: &Pipeline,
    joint: &JointGmm,
    i: usize,
    online: bool,
) -> Result<(DcRow, drefc_core::control::DcRun)> {
    let cfg = &p.config;
    let (deficit, noise_seed) = dc_event(cfg, i);
    let dist = Disturbance {
        onset_time: 0.0,
        power_deficit: deficit,
    };
    let mut plant = SampledSfr {
        plant: SfrPlant::new(cfg.plant.clone(), dist, noise_seed)?,
        substeps: cfg.training.stride,
        averaged: cfg.training.averaged,
    };
    let lc = dc_loop_config(cfg, p.var()?, online);
    let run = closed_loop_dc(&mut plant, &p.model, joint, &lc)?;
    let after = nadir(&run.true_freq[lc.start..]);
    let zetas: Vec<f64> = run
        .states
        .iter()
        .map(|s| s.zeta)
        .filter(|z| z.is_finite())
        .collect();
    let row = DcRow {
        id: i,
        online,
        deficit,
        noise_seed,
        nadir: after,
        safe: after >= cfg.control.f_min,
        cost: run.cost,
        failed_windows: run.failed_windows(),
        mean_zeta: zetas.iter().sum::<f64>() / zetas.len().max(1) as f64,
    };
    Ok((row, run))
}

/// The same events under the static reference margin and with online conditioning.
pub fn dc_study(p: &Pipeline, joint: &JointGmm, count: usize) -> Result<Vec<DcRow>> {
    let mut rows: Vec<DcRow> = [false, true]
        .into_par_iter()
        .flat_map(|online| (0..count).into_par_iter().map(move |i| (online, i)))
        .map(|(online, i)| dc_run(p, joint, i, online).map(|r| r.0))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| (r.online, r.id));
    Ok(rows)
}

pub fn dc_safety(rows: &[DcRow], online: bool) -> f64 {
    let sel: Vec<&DcRow> = rows.iter().filter(|r| r.online == online).collect();
    sel.iter().filter(|r| r.safe).count() as f64 / sel.len().max(1) as f64
}

/// Solves the held shed for an event and returns it with the predicted trajectory.
pub fn single_shed(
    p: &Pipeline,
    deficit: f64,
    noise_seed: u64,
) -> Result<(f64, drefc_core::control::ControlSolution, Vec<f64>)> {
    let event = p.event(deficit, noise_seed)?;
    let w = p.worst_case(&p.var()?)?;
    let sol = solve_drefc_u(&p.shed_problem(&event.g0, w.zeta))?;
    let mut freq = event.history.clone();
    freq.extend(event.play(sol.u[0], p.config.horizon_samples())?);
    Ok((w.zeta, sol, freq))
}
