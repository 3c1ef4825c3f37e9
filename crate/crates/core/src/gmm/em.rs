//! Maximum-likelihood mixture fitting by EM with k-means++ seeding and restarts.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{FitReport, Gmm, JointGmm, EIG_FLOOR, SIGMA_FLOOR};
use crate::error::{invalid, Result};
use crate::linalg::floor_eigenvalues;
use crate::rng::{self, derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k: usize,
    /// Stop when the log-likelihood changes by less than `tol * max(1, |ll|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tol: 1e-8,
            max_iter: 500,
            restarts: 5,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }
}

/// Mixture parameters over `d`-dimensional points; covariances row-major.
struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// Per-component quantities for fast density evaluation.
struct Prepared {
    ln_const: f64,
    mean: Vec<f64>,
    /// Inverse of the lower Cholesky factor, row-major.
    inv_l: Vec<f64>,
}

fn prepare(mean: &[f64], cov: &[f64], d: usize) -> Prepared {
    let m = DMatrix::from_row_slice(d, d, cov);
    let chol = m.cholesky().unwrap_or_else(|| {
        DMatrix::<f64>::identity(d, d)
            .scale(EIG_FLOOR)
            .cholesky()
            .unwrap()
    });
    let l = chol.l();
    let inv = l
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(d, d));
    let ln_det: f64 = l.diagonal().iter().map(|v| 2.0 * libm::log(*v)).sum();
    let mut inv_l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            inv_l[i * d + j] = inv[(i, j)];
        }
    }
    Prepared {
        ln_const: -0.5 * (ln_det + d as f64 * libm::log(2.0 * core::f64::consts::PI)),
        mean: mean.to_vec(),
        inv_l,
    }
}

impl Prepared {
    fn ln_pdf(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = x.len();
        for (s, (xi, mi)) in scratch.iter_mut().zip(x.iter().zip(&self.mean)) {
            *s = xi - mi;
        }
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.inv_l[i * d..i * d + i + 1];
            let z: f64 = row.iter().zip(&scratch[..=i]).map(|(a, b)| a * b).sum();
            q += z * z;
        }
        self.ln_const - 0.5 * q
    }
}

fn floor_cov(cov: &[f64], d: usize, floor: f64) -> Vec<f64> {
    if d == 1 {
        return vec![cov[0].max(floor)];
    }
    let m = DMatrix::from_row_slice(d, d, cov);
    let f = floor_eigenvalues(&m, floor).0;
    (0..d * d).map(|i| f[(i / d, i % d)]).collect()
}

fn sample_cov(data: &[f64], d: usize) -> Vec<f64> {
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for x in data.chunks(d) {
        for j in 0..d {
            mean[j] += x[j] / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for x in data.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n as f64;
            }
        }
    }
    cov
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, then proportional to squared distance.
fn kmeans_pp(data: &[f64], d: usize, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = data.len() / d;
    let point = |i: usize| &data[i * d..(i + 1) * d];
    let mut centers = vec![point(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, di) in dist.iter().enumerate() {
                acc += di;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = point(idx).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(point(i), &c));
        }
        centers.push(c);
    }
    centers
}

struct Run {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
}

fn e_step(data: &[f64], d: usize, p: &Params, resp: &mut [f64]) -> f64 {
    let k = p.weights.len();
    let prepared: Vec<Prepared> = (0..k)
        .map(|j| prepare(&p.means[j], &p.covs[j], d))
        .collect();
    let ln_w: Vec<f64> = p
        .weights
        .iter()
        .map(|&w| {
            if w > 0.0 {
                libm::log(w)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut scratch = vec![0.0; d];
    let mut ll = 0.0;
    for (x, r) in data.chunks(d).zip(resp.chunks_mut(k)) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            r[j] = ln_w[j] + prepared[j].ln_pdf(x, &mut scratch);
            max = max.max(r[j]);
        }
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = libm::exp(*v - max);
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
        ll += max + libm::log(s);
    }
    ll
}

fn m_step(data: &[f64], d: usize, resp: &[f64], p: &mut Params, floor: f64) {
    let k = p.weights.len();
    let n = data.len() / d;
    for j in 0..k {
        let nk: f64 = resp.chunks(k).map(|r| r[j]).sum();
        p.weights[j] = nk / n as f64;
        if nk <= 1e-300 {
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.chunks(d).zip(resp.chunks(k)) {
            for t in 0..d {
                mean[t] += r[j] * x[t];
            }
        }
        mean.iter_mut().for_each(|v| *v /= nk);
        let mut cov = vec![0.0; d * d];
        for (x, r) in data.chunks(d).zip(resp.chunks(k)) {
            for a in 0..d {
                let da = x[a] - mean[a];
                for b in a..d {
                    cov[a * d + b] += r[j] * da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] /= nk;
                cov[b * d + a] = cov[a * d + b];
            }
        }
        p.means[j] = mean;
        p.covs[j] = floor_cov(&cov, d, floor);
    }
    let total: f64 = p.weights.iter().sum();
    p.weights.iter_mut().for_each(|w| *w /= total);
}

fn run_once(data: &[f64], d: usize, cfg: &EmConfig, floor: f64, seed: u64) -> Run {
    let n = data.len() / d;
    let mut rng = rng::from_seed(seed);
    let centers = kmeans_pp(data, d, cfg.k, &mut rng);
    let global = floor_cov(&sample_cov(data, d), d, floor);
    let mut params = Params {
        weights: vec![1.0 / cfg.k as f64; cfg.k],
        means: centers,
        covs: vec![global; cfg.k],
    };
    let mut resp = vec![0.0; n * cfg.k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ll = e_step(data, d, &params, &mut resp);
    trace.push(ll);
    for _ in 0..cfg.max_iter {
        m_step(data, d, &resp, &mut params, floor);
        let next = e_step(data, d, &params, &mut resp);
        trace.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change <= cfg.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Run {
        params,
        trace,
        converged,
    }
}

/// Shared EM driver over row-major `d`-dimensional points.
fn fit_raw(data: &[f64], d: usize, cfg: &EmConfig, floor: f64) -> Result<(Params, FitReport)> {
    if cfg.k == 0 || d == 0 {
        return Err(invalid("component count and dimension must be positive"));
    }
    let n = data.len() / d;
    if data.len() % d != 0 {
        return Err(invalid("data length is not a multiple of the dimension"));
    }
    if n < 2 * cfg.k {
        return Err(invalid(alloc::format!(
            "need at least {} samples for {} components, got {n}",
            2 * cfg.k,
            cfg.k
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let first = &data[..d];
    if data.chunks(d).all(|x| x == first) {
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = floor;
        }
        let ll = e_step(
            data,
            d,
            &Params {
                weights: vec![1.0],
                means: vec![first.to_vec()],
                covs: vec![cov.clone()],
            },
            &mut vec![0.0; n],
        );
        return Ok((
            Params {
                weights: vec![1.0],
                means: vec![first.to_vec()],
                covs: vec![cov],
            },
            FitReport {
                log_likelihood: ll,
                iterations: 0,
                converged: true,
                trace: vec![ll],
                degenerate: true,
                restart: 0,
            },
        ));
    }

    let mut best: Option<(usize, Run)> = None;
    for r in 0..cfg.restarts.max(1) {
        let run = run_once(data, d, cfg, floor, derive_seed(cfg.seed, r as u64));
        let ll = *run.trace.last().unwrap();
        let better = match &best {
            None => true,
            Some((_, b)) => ll > *b.trace.last().unwrap(),
        };
        if better {
            best = Some((r, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");
    let report = FitReport {
        log_likelihood: *run.trace.last().unwrap(),
        iterations: run.trace.len() - 1,
        converged: run.converged,
        trace: run.trace,
        degenerate: false,
        restart,
    };
    Ok((run.params, report))
}

/// Fit a scalar mixture; standard deviations are floored at [`SIGMA_FLOOR`].
pub fn fit_em(samples: &[f64], cfg: &EmConfig) -> Result<(Gmm, FitReport)> {
    let (p, report) = fit_raw(samples, 1, cfg, SIGMA_FLOOR * SIGMA_FLOOR)?;
    let gmm = Gmm::new(
        p.weights,
        p.means.iter().map(|m| m[0]).collect(),
        p.covs
            .iter()
            .map(|c| libm::sqrt(c[0]).max(SIGMA_FLOOR))
            .collect(),
    )?;
    Ok((gmm, report))
}

/// Fit a joint mixture over `[past; future]` points with full covariances.
pub fn fit_joint_em(
    points: &[DVector<f64>],
    past_dim: usize,
    future_dim: usize,
    cfg: &EmConfig,
) -> Result<(JointGmm, FitReport)> {
    let d = past_dim + future_dim;
    if points.iter().any(|p| p.len() != d) {
        return Err(invalid(
            "point dimension does not match past_dim + future_dim",
        ));
    }
    let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    let (p, report) = fit_raw(&flat, d, cfg, EIG_FLOOR)?;
    let gmm = JointGmm::new_floored(
        p.weights,
        p.means.into_iter().map(DVector::from_vec).collect(),
        p.covs
            .iter()
            .map(|c| DMatrix::from_row_slice(d, d, c))
            .collect(),
        past_dim,
        future_dim,
    )?;
    Ok((gmm, report))
}
