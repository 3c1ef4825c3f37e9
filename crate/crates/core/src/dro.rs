//! Value-at-risk margins for mixture-distributed errors: exact and
//! approximate quantiles, and the worst case over an ambiguity ball.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{mw2, AmbiguitySet, Coupling};
use crate::error::{invalid, Error, Result};
use crate::gmm::{Gmm, SIGMA_FLOOR};
use crate::special::normal_quantile;
use crate::transport;

const MAX_CYCLES: usize = 500;
const REL_TOL: f64 = 1e-10;

/// Significance level `alpha` with its cached quantile `z = Φ⁻¹(1 - alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VarRepr", into = "VarRepr")]
pub struct VarSpec {
    alpha: f64,
    z: f64,
}

#[derive(Serialize, Deserialize)]
struct VarRepr {
    alpha: f64,
}

impl TryFrom<VarRepr> for VarSpec {
    type Error = Error;
    fn try_from(r: VarRepr) -> Result<Self> {
        VarSpec::new(r.alpha)
    }
}

impl From<VarSpec> for VarRepr {
    fn from(v: VarSpec) -> Self {
        VarRepr { alpha: v.alpha }
    }
}

impl VarSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(invalid("alpha must lie in (0, 0.5)"));
        }
        Ok(VarSpec {
            alpha,
            z: normal_quantile(1.0 - alpha),
        })
    }

    /// Spec at confidence `c = 1 - alpha`.
    pub fn confidence(c: f64) -> Result<Self> {
        Self::new(1.0 - c)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn level(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Quantile of the mixture by bisection on its CDF.
pub fn exact_icdf(g: &Gmm, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("probability must lie in (0, 1)"));
    }
    let (mut lo, mut hi) = g.support();
    // Bisect to the resolution of f64 so flat tails still land in x-space.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(if (g.cdf(lo) - p).abs() <= (g.cdf(hi) - p).abs() {
                lo
            } else {
                hi
            });
        }
        if g.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Weighted sum of per-component quantiles.
pub fn approx_icdf(g: &Gmm, p: f64) -> f64 {
    quantile_sum(g.weights(), g.means(), g.stddevs(), normal_quantile(p))
}

fn quantile_sum(w: &[f64], m: &[f64], s: &[f64], z: f64) -> f64 {
    w.iter()
        .zip(m)
        .zip(s)
        .map(|((w, m), s)| w * (m + z * s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub zeta: f64,
    pub worst: Gmm,
    pub coupling: Coupling,
    pub objective_trace: Vec<f64>,
    pub active_distance: f64,
    /// The best start never rose above the reference quantile although the
    /// ball had room to.
    pub non_improving: bool,
    pub converged: bool,
    /// Index of the winning start and how many starts were feasible.
    pub start: usize,
    pub feasible_starts: usize,
}

struct Ascent {
    w: DMatrix<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
}

impl Ascent {
    fn objective(&self, z: f64) -> f64 {
        quantile_sum(&row_sums(&self.w), &self.means, &self.stds, z)
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn row_sums(w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.nrows()).map(|k| w.row(k).sum()).collect()
}

/// Largest `approx_icdf(candidate, 1 - alpha)` over mixtures in the ball,
/// by alternating ascent from several couplings.
pub fn worst_case_margin(set: &AmbiguitySet, var: &VarSpec) -> Result<WorstCaseResult> {
    let gamma = set.radius;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid("ambiguity radius must be finite and non-negative"));
    }
    if set.k_budget == 0 {
        return Err(invalid("component budget must be at least 1"));
    }
    let reference = set.reference.without_zero_weights();
    let z = var.z();
    let k = set.k_budget;

    let mut best: Option<(usize, Ascent, f64)> = None;
    let mut feasible = 0;
    for (idx, w0) in starts(&reference, k, z).into_iter().enumerate() {
        if dispersion(&w0, &reference) > gamma {
            continue;
        }
        feasible += 1;
        let run = ascend(w0, &reference, gamma, z)?;
        let obj = run.objective(z);
        let cost = run
            .w
            .component_mul(&cost_matrix_raw(&run.means, &run.stds, &reference))
            .sum();
        let replace = match &best {
            None => true,
            Some((_, b, bcost)) => {
                let bobj = b.objective(z);
                let tol = 1e-12 * obj.abs().max(bobj.abs()).max(1e-300);
                obj > bobj + tol || ((obj - bobj).abs() <= tol && cost < *bcost)
            }
        };
        if replace {
            best = Some((idx, run, cost));
        }
    }
    let Some((start, run, _)) = best else {
        return Err(Error::EmptyAmbiguitySet);
    };

    let weights = row_sums(&run.w);
    let stds: Vec<f64> = run.stds.iter().map(|s| s.max(SIGMA_FLOOR)).collect();
    let worst = Gmm::new(weights, run.means.clone(), stds)?;
    let zeta = run.objective(z);
    let (active_distance, coupling) = mw2(&worst, &set.reference)?;
    let baseline = quantile_sum(
        reference.weights(),
        reference.means(),
        reference.stddevs(),
        z,
    );
    Ok(WorstCaseResult {
        zeta,
        worst,
        coupling,
        non_improving: gamma > 0.0 && z > 0.0 && zeta <= baseline,
        converged: run.converged,
        objective_trace: run.trace,
        active_distance,
        start,
        feasible_starts: feasible,
    })
}

fn cost_matrix_raw(means: &[f64], stds: &[f64], reference: &Gmm) -> DMatrix<f64> {
    DMatrix::from_fn(means.len(), reference.k(), |k, l| {
        let dm = means[k] - reference.means()[l];
        let ds = stds[k] - reference.stddevs()[l];
        dm * dm + ds * ds
    })
}

/// Initial couplings: each reference component sent whole to one row.
fn starts(reference: &Gmm, k: usize, z: f64) -> Vec<DMatrix<f64>> {
    let l = reference.k();
    let pi = reference.weights();
    let assign = |rows: &[usize]| {
        let mut w = DMatrix::zeros(k, l);
        for (j, &r) in rows.iter().enumerate() {
            w[(r, j)] = pi[j];
        }
        w
    };
    let mut out = Vec::new();
    for s in 0..k {
        let rows: Vec<usize> = (0..l).map(|j| (j + s) % k).collect();
        out.push(assign(&rows));
    }
    // Contiguous groups of equal weight in quantile order.
    let mut order: Vec<usize> = (0..l).collect();
    let key = |j: usize| reference.means()[j] + z * reference.stddevs()[j];
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut rows = vec![0; l];
    let mut acc = 0.0;
    for &j in &order {
        rows[j] = ((acc * k as f64) as usize).min(k - 1);
        acc += pi[j];
    }
    out.push(assign(&rows));
    if k < l {
        out.push(assign(&weighted_kmeans(reference, k)));
    }
    out
}

/// Lloyd iterations on the (mean, stddev) points, weighted by mixture weight.
fn weighted_kmeans(reference: &Gmm, k: usize) -> Vec<usize> {
    let l = reference.k();
    let pts: Vec<(f64, f64)> = reference.components().map(|(_, m, s)| (m, s)).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0));
    let mut centres: Vec<(f64, f64)> = (0..k).map(|c| pts[order[c * l / k]]).collect();
    let mut rows = vec![0usize; l];
    for _ in 0..100 {
        let mut changed = false;
        for j in 0..l {
            let d = |c: &(f64, f64)| sq(c.0 - pts[j].0) + sq(c.1 - pts[j].1);
            let r = (0..k)
                .min_by(|&a, &b| d(&centres[a]).total_cmp(&d(&centres[b])))
                .unwrap();
            changed |= r != rows[j];
            rows[j] = r;
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let (mut sw, mut sm, mut ss) = (0.0, 0.0, 0.0);
            for j in (0..l).filter(|&j| rows[j] == c) {
                let w = reference.weights()[j];
                sw += w;
                sm += w * pts[j].0;
                ss += w * pts[j].1;
            }
            if sw > 0.0 {
                *centre = (sm / sw, ss / sw);
            }
        }
        if !changed {
            break;
        }
    }
    rows
}

/// Row barycentres of the reference under `w`; rows without mass get `None`.
fn barycentres(w: &DMatrix<f64>, reference: &Gmm) -> Vec<Option<(f64, f64)>> {
    (0..w.nrows())
        .map(|k| {
            let mass = w.row(k).sum();
            (mass > 0.0).then(|| {
                let (mut m, mut s) = (0.0, 0.0);
                for l in 0..w.ncols() {
                    let f = w[(k, l)] / mass;
                    m += f * reference.means()[l];
                    s += f * reference.stddevs()[l];
                }
                (m, s)
            })
        })
        .collect()
}

/// Cost of transporting the reference onto the row barycentres of `w`.
fn dispersion(w: &DMatrix<f64>, reference: &Gmm) -> f64 {
    let bary = barycentres(w, reference);
    let mut v = 0.0;
    for (k, b) in bary.iter().enumerate() {
        if let Some((m, s)) = b {
            for l in 0..w.ncols() {
                v += w[(k, l)] * (sq(reference.means()[l] - m) + sq(reference.stddevs()[l] - s));
            }
        }
    }
    v
}

/// With the coupling fixed, the best parameters shift every barycentre by
/// the same step along `(1, z)` until the budget is spent.
fn step_params(
    w: &DMatrix<f64>,
    reference: &Gmm,
    gamma: f64,
    z: f64,
    means: &mut [f64],
    stds: &mut [f64],
) {
    let slack = (gamma - dispersion(w, reference)).max(0.0);
    let t = libm::sqrt(slack / (1.0 + z * z));
    for (k, b) in barycentres(w, reference).into_iter().enumerate() {
        if let Some((m, s)) = b {
            means[k] = m + t;
            stds[k] = (s + t * z).max(SIGMA_FLOOR);
        }
    }
}

/// With the parameters fixed, the best coupling under the budget. Solved
/// through the one-dimensional Lagrangian dual: each column goes to the row
/// maximising `c_k - nu * cost_kl`, and the optimal `nu` sits at a breakpoint.
fn step_coupling(reference: &Gmm, gamma: f64, z: f64, means: &[f64], stds: &[f64]) -> DMatrix<f64> {
    let (k, l) = (means.len(), reference.k());
    let pi = reference.weights();
    let cost = cost_matrix_raw(means, stds, reference);
    let c: Vec<f64> = (0..k).map(|r| means[r] + z * stds[r]).collect();
    let dual = |nu: f64| -> f64 {
        let per_col: f64 = (0..l)
            .map(|j| {
                pi[j]
                    * (0..k)
                        .map(|r| c[r] - nu * cost[(r, j)])
                        .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        per_col + nu * gamma
    };
    let mut nus = vec![0.0];
    for j in 0..l {
        for a in 0..k {
            for b in a + 1..k {
                let dc = cost[(a, j)] - cost[(b, j)];
                if dc != 0.0 {
                    let nu = (c[a] - c[b]) / dc;
                    if nu > 0.0 && nu.is_finite() {
                        nus.push(nu);
                    }
                }
            }
        }
    }
    let nu = nus
        .iter()
        .copied()
        .min_by(|&a, &b| dual(a).total_cmp(&dual(b)).then(a.total_cmp(&b)))
        .unwrap_or(0.0);

    // Assignments just below and just above nu; mixing them spends the budget.
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())) + nu * cost.max() + 1e-300;
    let pick = |j: usize, prefer_costly: bool| -> usize {
        let vals: Vec<f64> = (0..k).map(|r| c[r] - nu * cost[(r, j)]).collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = (0..k).filter(|&r| top - vals[r] <= 1e-12 * scale);
        if prefer_costly {
            ties.max_by(|&a, &b| cost[(a, j)].total_cmp(&cost[(b, j)]).then(b.cmp(&a)))
                .unwrap()
        } else {
            ties.min_by(|&a, &b| cost[(a, j)].total_cmp(&cost[(b, j)]).then(a.cmp(&b)))
                .unwrap()
        }
    };
    let hi: Vec<usize> = (0..l).map(|j| pick(j, true)).collect();
    let lo: Vec<usize> = (0..l).map(|j| pick(j, false)).collect();
    let spend = |rows: &[usize]| -> f64 { (0..l).map(|j| pi[j] * cost[(rows[j], j)]).sum() };
    let (c_hi, c_lo) = (spend(&hi), spend(&lo));
    let theta = if c_hi <= gamma {
        1.0
    } else if c_lo >= gamma || c_hi - c_lo <= 0.0 {
        0.0
    } else {
        (gamma - c_lo) / (c_hi - c_lo)
    };
    let mut w = DMatrix::zeros(k, l);
    for j in 0..l {
        w[(hi[j], j)] += theta * pi[j];
        w[(lo[j], j)] += (1.0 - theta) * pi[j];
    }
    w
}

fn ascend(w0: DMatrix<f64>, reference: &Gmm, gamma: f64, z: f64) -> Result<Ascent> {
    let k = w0.nrows();
    let l = reference.k();
    let mut run = Ascent {
        means: (0..k).map(|r| reference.means()[r % l]).collect(),
        stds: (0..k).map(|r| reference.stddevs()[r % l]).collect(),
        w: w0,
        trace: Vec::new(),
        converged: false,
    };
    step_params(&run.w, reference, gamma, z, &mut run.means, &mut run.stds);
    run.trace.push(run.objective(z));

    let spread = libm::sqrt(gamma * (1.0 + z * z)) + reference.stddevs().iter().sum::<f64>();
    for _ in 0..MAX_CYCLES {
        let before = *run.trace.last().unwrap();

        // Same weights, cheapest plan: any slack it frees is spent again.
        let pi_hat = row_sums(&run.w);
        let keep: Vec<usize> = (0..k).filter(|&r| pi_hat[r] > 0.0).collect();
        let sub_means: Vec<f64> = keep.iter().map(|&r| run.means[r]).collect();
        let sub_stds: Vec<f64> = keep.iter().map(|&r| run.stds[r]).collect();
        let sub_pi: Vec<f64> = keep.iter().map(|&r| pi_hat[r]).collect();
        let plan = transport::solve(
            &sub_pi,
            reference.weights(),
            &cost_matrix_raw(&sub_means, &sub_stds, reference),
        )?;
        let mut cheap = DMatrix::zeros(k, l);
        for (i, &r) in keep.iter().enumerate() {
            cheap.row_mut(r).copy_from(&plan.flow.row(i));
        }
        try_accept(&mut run, cheap, reference, gamma, z);

        let w = step_coupling(reference, gamma, z, &run.means, &run.stds);
        try_accept(&mut run, w, reference, gamma, z);

        let after = *run.trace.last().unwrap();
        if (after - before).abs() <= REL_TOL * after.abs().max(spread) {
            run.converged = true;
            break;
        }
    }
    Ok(run)
}

/// Replace the coupling when re-optimising the parameters on it improves
/// the objective.
fn try_accept(run: &mut Ascent, w: DMatrix<f64>, reference: &Gmm, gamma: f64, z: f64) {
    if dispersion(&w, reference) > gamma {
        return;
    }
    let (mut means, mut stds) = (run.means.clone(), run.stds.clone());
    step_params(&w, reference, gamma, z, &mut means, &mut stds);
    let obj = quantile_sum(&row_sums(&w), &means, &stds, z);
    if obj > *run.trace.last().unwrap() {
        run.w = w;
        run.means = means;
        run.stds = stds;
        run.trace.push(obj);
    }
}

#[cfg(test)]
mod tests;
