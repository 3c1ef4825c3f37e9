//! Gaussian mixtures: scalar mixtures for margins and joint mixtures over
//! stacked past/future error vectors.

mod em;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use em::{fit_em, fit_joint_em, EmConfig};

use crate::error::{invalid, Error, Result};
use crate::linalg::{floor_eigenvalues, min_eigenvalue};
use crate::rng::{self, Rng};
use crate::special::{log_sum_exp, normal_cdf, normal_ln_pdf, CDF_CLAMP};

/// Smallest standard deviation a scalar mixture component may have.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Smallest covariance eigenvalue of a joint mixture component.
pub const EIG_FLOOR: f64 = 1e-10;
const REL_PIVOT_FLOOR: f64 = 1e-9;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl TryFrom<GmmRepr> for Gmm {
    type Error = Error;
    fn try_from(r: GmmRepr) -> Result<Self> {
        Gmm::new(r.weights, r.means, r.stddevs)
    }
}

impl From<Gmm> for GmmRepr {
    fn from(g: Gmm) -> Self {
        GmmRepr {
            weights: g.weights,
            means: g.means,
            stddevs: g.stddevs,
        }
    }
}

/// Check weights and rescale them to sum to one exactly (up to rounding).
fn normalize_weights(weights: &mut [f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("mixture weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if !((sum - 1.0).abs() < 1e-6) {
        return Err(invalid(alloc::format!(
            "mixture weights sum to {sum}, expected 1"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < WEIGHT_SUM_TOL);
    Ok(())
}

impl Gmm {
    /// Weights within 1e-6 of summing to one are renormalised; standard
    /// deviations below [`SIGMA_FLOOR`] are rejected.
    pub fn new(mut weights: Vec<f64>, means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        if means.len() != weights.len() || stddevs.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: means.len().min(stddevs.len()),
            });
        }
        normalize_weights(&mut weights)?;
        if means.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mixture means must be finite"));
        }
        if stddevs
            .iter()
            .any(|s| !(*s >= SIGMA_FLOOR * (1.0 - 1e-12)) || !s.is_finite())
        {
            return Err(invalid(
                "mixture standard deviations must be at least the floor",
            ));
        }
        Ok(Self {
            weights,
            means,
            stddevs,
        })
    }

    pub fn single(mean: f64, stddev: f64) -> Result<Self> {
        Self::new(alloc::vec![1.0], alloc::vec![mean], alloc::vec![stddev])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    /// `(weight, mean, stddev)` per component.
    pub fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + Clone + '_ {
        (0..self.k()).map(move |i| (self.weights[i], self.means[i], self.stddevs[i]))
    }

    pub fn mean(&self) -> f64 {
        self.components().map(|(w, m, _)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.components()
            .map(|(w, m, s)| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        log_sum_exp(
            self.components()
                .filter(|c| c.0 > 0.0)
                .map(|(w, m, s)| libm::log(w) + normal_ln_pdf((x - m) / s) - libm::log(s)),
        )
    }

    pub fn pdf(&self, x: f64) -> f64 {
        libm::exp(self.ln_pdf(x))
    }

    /// Mixture CDF; each component is clamped to 0 or 1 beyond 40 standard deviations.
    pub fn cdf(&self, x: f64) -> f64 {
        let c: f64 = self
            .components()
            .map(|(w, m, s)| w * normal_cdf((x - m) / s))
            .sum();
        c.clamp(0.0, 1.0)
    }

    /// Interval outside of which the CDF is exactly 0 or 1.
    pub fn support(&self) -> (f64, f64) {
        let lo = self
            .components()
            .map(|(_, m, s)| m - CDF_CLAMP * s)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components()
            .map(|(_, m, s)| m + CDF_CLAMP * s)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Distribution of `-X`.
    pub fn negated(&self) -> Gmm {
        Gmm {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| -m).collect(),
            stddevs: self.stddevs.clone(),
        }
    }

    /// Components with positive weight, renormalised.
    pub fn without_zero_weights(&self) -> Gmm {
        if self.weights.iter().all(|&w| w > 0.0) {
            return self.clone();
        }
        let keep: Vec<usize> = (0..self.k()).filter(|&i| self.weights[i] > 0.0).collect();
        let total: f64 = keep.iter().map(|&i| self.weights[i]).sum();
        Gmm {
            weights: keep.iter().map(|&i| self.weights[i] / total).collect(),
            means: keep.iter().map(|&i| self.means[i]).collect(),
            stddevs: keep.iter().map(|&i| self.stddevs[i]).collect(),
        }
    }

    fn pick(&self, rng: &mut Rng) -> usize {
        pick_component(&self.weights, rng)
    }

    /// `n` draws: categorical component choice, then a Gaussian draw.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::from_seed(seed);
        (0..n)
            .map(|_| {
                let i = self.pick(&mut rng);
                let z: f64 = rng.sample(StandardNormal);
                self.means[i] + self.stddevs[i] * z
            })
            .collect()
    }

    /// View as a one-dimensional joint mixture.
    pub fn to_joint(&self) -> JointGmm {
        JointGmm {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|&m| DVector::from_element(1, m))
                .collect(),
            covs: self
                .stddevs
                .iter()
                .map(|&s| DMatrix::from_element(1, 1, s * s))
                .collect(),
            past_dim: 1,
            future_dim: 0,
        }
    }
}

fn pick_component(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the last partial sum; take the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Past,
    Future,
}

/// Mixture over the stacked vector `[X_p; X_f]` with `past_dim + future_dim` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    past_dim: usize,
    future_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub gmm: JointGmm,
    /// Set when a past-block covariance had to be regularised before inversion.
    pub regularized: bool,
}

impl JointGmm {
    pub fn new(
        mut weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
        past_dim: usize,
        future_dim: usize,
    ) -> Result<Self> {
        let dim = past_dim + future_dim;
        if weights.is_empty() || dim == 0 {
            return Err(invalid(
                "joint mixture needs components and a positive dimension",
            ));
        }
        if means.len() != weights.len() || covs.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: means.len().min(covs.len()),
            });
        }
        normalize_weights(&mut weights)?;
        for (m, c) in means.iter().zip(&covs) {
            if m.len() != dim || c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.len(),
                });
            }
            if (c - c.transpose()).abs().max() > 1e-12 * (1.0 + c.abs().max()) {
                return Err(invalid("covariance must be symmetric"));
            }
            if min_eigenvalue(c) < EIG_FLOOR * (1.0 - 1e-6) {
                return Err(invalid("covariance eigenvalue below the floor"));
            }
        }
        Ok(Self {
            weights,
            means,
            covs,
            past_dim,
            future_dim,
        })
    }

    /// As [`JointGmm::new`] but symmetrises and floors covariance eigenvalues instead of failing.
    pub fn new_floored(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
        past_dim: usize,
        future_dim: usize,
    ) -> Result<Self> {
        let covs = covs
            .iter()
            .map(|c| floor_eigenvalues(c, EIG_FLOOR).0)
            .collect();
        Self::new(weights, means, covs, past_dim, future_dim)
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.past_dim + self.future_dim
    }

    pub fn past_dim(&self) -> usize {
        self.past_dim
    }

    pub fn future_dim(&self) -> usize {
        self.future_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn ln_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let terms: Vec<f64> = (0..self.g())
            .filter(|&i| self.weights[i] > 0.0)
            .map(|i| {
                libm::log(self.weights[i]) + gaussian_ln_pdf(&x, &self.means[i], &self.covs[i])
            })
            .collect();
        Ok(log_sum_exp(terms.iter().copied()))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.ln_pdf(x).map(libm::exp)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = rng::from_seed(seed);
        let factors: Vec<DMatrix<f64>> = self
            .covs
            .iter()
            .map(|c| {
                c.clone()
                    .cholesky()
                    .map(|ch| ch.l())
                    .unwrap_or_else(|| c.map(libm::sqrt))
            })
            .collect();
        (0..n)
            .map(|_| {
                let i = pick_component(&self.weights, &mut rng);
                let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.means[i] + &factors[i] * z
            })
            .collect()
    }

    fn block_range(&self, block: Block) -> (usize, usize) {
        match block {
            Block::Past => (0, self.past_dim),
            Block::Future => (self.past_dim, self.future_dim),
        }
    }

    /// Marginal over one block; the result has that block as its past part.
    pub fn marginal(&self, block: Block) -> Result<JointGmm> {
        let (start, len) = self.block_range(block);
        if len == 0 {
            return Err(invalid("selected block is empty"));
        }
        Ok(JointGmm {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.rows(start, len).into_owned())
                .collect(),
            covs: self
                .covs
                .iter()
                .map(|c| c.view((start, start), (len, len)).into_owned())
                .collect(),
            past_dim: len,
            future_dim: 0,
        })
    }

    /// Scalar mixture when the mixture is one-dimensional.
    pub fn to_scalar(&self) -> Result<Gmm> {
        if self.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.dim(),
            });
        }
        Gmm::new(
            self.weights.clone(),
            self.means.iter().map(|m| m[0]).collect(),
            self.covs
                .iter()
                .map(|c| libm::sqrt(c[(0, 0)]).max(SIGMA_FLOOR))
                .collect(),
        )
    }

    /// Mixture of `X_f` given `X_p = x_p`: likelihood-reweighted components with
    /// regression means and Schur-complement covariances.
    pub fn condition(&self, x_p: &[f64]) -> Result<Conditioned> {
        let (m, n) = (self.past_dim, self.future_dim);
        if x_p.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: x_p.len(),
            });
        }
        if n == 0 {
            return Err(invalid("mixture has no future block to condition"));
        }
        let xp = DVector::from_column_slice(x_p);
        let mut regularized = false;
        let mut log_w = Vec::with_capacity(self.g());
        let mut means = Vec::with_capacity(self.g());
        let mut covs = Vec::with_capacity(self.g());
        for i in 0..self.g() {
            let mu = &self.means[i];
            let c = &self.covs[i];
            let mu_p = mu.rows(0, m).into_owned();
            let mu_f = mu.rows(m, n).into_owned();
            let mut s_pp = c.view((0, 0), (m, m)).into_owned();
            let s_fp = c.view((m, 0), (n, m)).into_owned();
            let s_ff = c.view((m, m), (n, n)).into_owned();
            // Pivots tiny relative to the block scale mean the regression gain is
            // numerically meaningless, so lift the spectrum before solving.
            let floor = EIG_FLOOR.max(REL_PIVOT_FLOOR * s_pp.diagonal().max());
            let chol = match s_pp.clone().cholesky() {
                Some(ch) if ch.l_dirty().diagonal().iter().all(|d| d * d >= floor) => ch,
                _ => {
                    regularized = true;
                    s_pp = floor_eigenvalues(&s_pp, floor * 1.01).0;
                    s_pp.clone().cholesky().ok_or_else(|| {
                        invalid("past covariance not invertible after regularisation")
                    })?
                }
            };
            let diff = &xp - &mu_p;
            let solved = chol.solve(&diff);
            let ln_det: f64 = chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| 2.0 * libm::log(*d))
                .sum();
            let maha = diff.dot(&solved);
            let ln_n = -0.5 * (maha + ln_det + m as f64 * libm::log(2.0 * core::f64::consts::PI));
            log_w.push(if self.weights[i] > 0.0 {
                libm::log(self.weights[i]) + ln_n
            } else {
                f64::NEG_INFINITY
            });
            means.push(mu_f + &s_fp * solved);
            let gain = chol.solve(&s_fp.transpose());
            let schur = &s_ff - &s_fp * gain;
            let schur = (&schur + schur.transpose()) * 0.5;
            covs.push(floor_eigenvalues(&schur, EIG_FLOOR).0);
        }
        let norm = log_sum_exp(log_w.iter().copied());
        let weights: Vec<f64> = if norm.is_finite() {
            log_w.iter().map(|l| libm::exp(l - norm)).collect()
        } else {
            // x_p is far from every component; fall back to the prior weights.
            self.weights.clone()
        };
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Conditioned {
            gmm: JointGmm {
                weights,
                means,
                covs,
                past_dim: n,
                future_dim: 0,
            },
            regularized,
        })
    }
}

pub(crate) fn gaussian_ln_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let diff = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .unwrap_or_else(|| DVector::from_element(d, f64::INFINITY));
    let ln_det: f64 = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| 2.0 * libm::log(*v))
        .sum();
    -0.5 * (z.norm_squared() + ln_det + d as f64 * libm::log(2.0 * core::f64::consts::PI))
}

/// Log-likelihood trace and outcome of an EM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    /// All samples identical; the result is a single floor-width component.
    pub degenerate: bool,
    /// Index of the restart that won.
    pub restart: usize,
}

impl FitReport {
    /// Largest decrease between consecutive iterations, relative to `max(1, |ll|)`.
    pub fn worst_decrease(&self) -> f64 {
        self.trace
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.worst_decrease() <= 1e-9
    }
}
