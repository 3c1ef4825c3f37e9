//! Lifted linear frequency predictor trained by EDMD.
//!
//! The lift stacks the latest frequency deviation, its delayed samples, Gaussian
//! RBFs of the latest sample, optional auxiliary channels and an optional constant.
//! The predictor iterates `g[k+1] = A g[k] + B u[k]` and reads `f = C g`,
//! with `C` picking the first lift coordinate.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sfr::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    /// Number of delayed samples after the latest one.
    pub delay_count: usize,
    pub rbf_centers: Vec<f64>,
    pub rbf_bandwidth: f64,
    pub include_constant: bool,
    /// Past inputs `u[k-1..=k-input_delays]` carried in the lift.
    #[serde(default)]
    pub input_delays: usize,
    /// Extra per-sample channels appended verbatim (unused by the SFR plant).
    #[serde(default)]
    pub aux_count: usize,
}

impl DictionarySpec {
    pub fn delays_only(delay_count: usize) -> Self {
        Self {
            delay_count,
            rbf_centers: Vec::new(),
            rbf_bandwidth: 1.0,
            include_constant: false,
            input_delays: 0,
            aux_count: 0,
        }
    }

    /// `rbf_count` centres on an even grid over `[lo, hi]`, bandwidth equal to the grid spacing.
    pub fn with_grid(
        delay_count: usize,
        rbf_count: usize,
        (lo, hi): (f64, f64),
        include_constant: bool,
    ) -> Self {
        let (centers, bandwidth) = match rbf_count {
            0 => (Vec::new(), 1.0),
            1 => (vec![0.5 * (lo + hi)], (hi - lo).abs().max(1e-6)),
            n => {
                let h = (hi - lo) / (n - 1) as f64;
                (
                    (0..n).map(|i| lo + h * i as f64).collect(),
                    h.abs().max(1e-9),
                )
            }
        };
        Self {
            delay_count,
            rbf_centers: centers,
            rbf_bandwidth: bandwidth,
            include_constant,
            input_delays: 0,
            aux_count: 0,
        }
    }

    pub fn with_input_delays(self, input_delays: usize) -> Self {
        Self {
            input_delays,
            ..self
        }
    }

    pub fn rbf_count(&self) -> usize {
        self.rbf_centers.len()
    }

    pub fn lift_dim(&self) -> usize {
        1 + self.delay_count
            + self.rbf_count()
            + self.input_delays
            + self.aux_count
            + usize::from(self.include_constant)
    }

    pub fn window_len(&self) -> usize {
        self.delay_count + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.rbf_count() > 0 && !(self.rbf_bandwidth > 0.0) {
            return Err(invalid("rbf_bandwidth must be positive"));
        }
        Ok(())
    }

    fn rbf(&self, w: f64, c: f64) -> f64 {
        let z = (w - c) / self.rbf_bandwidth;
        libm::exp(-z * z)
    }

    /// Lift at sample `k` of `history`. Samples before the start equal the
    /// first one; inputs before the start (or missing) are zero.
    fn lift_at(&self, history: &[f64], inputs: &[f64], k: usize, aux: &[f64], out: &mut [f64]) {
        let w0 = history[k];
        out[0] = w0;
        for j in 1..=self.delay_count {
            out[j] = history[k.saturating_sub(j)];
        }
        let mut i = 1 + self.delay_count;
        for &c in &self.rbf_centers {
            out[i] = self.rbf(w0, c);
            i += 1;
        }
        for j in 1..=self.input_delays {
            out[i] = if k >= j {
                inputs.get(k - j).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            i += 1;
        }
        for a in 0..self.aux_count {
            out[i] = aux.get(a).copied().unwrap_or(0.0);
            i += 1;
        }
        if self.include_constant {
            out[i] = 1.0;
        }
    }
}

/// Lift a window of frequency samples ordered oldest to newest, with no past inputs.
pub fn lift(dict: &DictionarySpec, window: &[f64]) -> Result<DVector<f64>> {
    lift_with_aux(dict, window, &[])
}

pub fn lift_with_aux(dict: &DictionarySpec, window: &[f64], aux: &[f64]) -> Result<DVector<f64>> {
    dict.validate()?;
    if window.len() < dict.window_len() {
        return Err(invalid("window shorter than delay_count + 1"));
    }
    if aux.len() != dict.aux_count {
        return Err(Error::DimensionMismatch {
            expected: dict.aux_count,
            got: aux.len(),
        });
    }
    let mut g = vec![0.0; dict.lift_dim()];
    dict.lift_at(window, &[], window.len() - 1, aux, &mut g);
    Ok(DVector::from_vec(g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Output row; reads the first lift coordinate.
    pub c: DVector<f64>,
    pub dict: DictionarySpec,
    /// RMS one-step residual of the frequency coordinate over the training pairs.
    pub training_residual: f64,
    /// Predictor sampling interval in seconds.
    pub sample_dt: f64,
}

impl KoopmanModel {
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        dict: DictionarySpec,
        sample_dt: f64,
    ) -> Result<Self> {
        let n = dict.lift_dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.nrows(),
            });
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.nrows(),
            });
        }
        let mut c = DVector::zeros(n);
        c[0] = 1.0;
        Ok(Self {
            a,
            b,
            c,
            dict,
            training_residual: 0.0,
            sample_dt,
        })
    }

    pub fn lift_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn lift(&self, window: &[f64]) -> Result<DVector<f64>> {
        lift(&self.dict, window)
    }

    pub fn step(&self, g: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        let mut next = &self.a * g;
        for (j, &uj) in u.iter().enumerate().take(self.input_dim()) {
            next.axpy(uj, &self.b.column(j), 1.0);
        }
        next
    }

    /// `C A^j B` for `j = 0..horizon`, one row of length `input_dim` each.
    pub fn markov_parameters(&self, horizon: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(horizon);
        let mut ab = self.b.clone();
        for _ in 0..horizon {
            out.push((self.c.transpose() * &ab).iter().copied().collect());
            ab = &self.a * ab;
        }
        out
    }

    /// Unforced prediction `C A^t g0` for `t = 1..=horizon`.
    pub fn free_response(&self, g0: &DVector<f64>, horizon: usize) -> Vec<f64> {
        let mut g = g0.clone();
        (0..horizon)
            .map(|_| {
                g = &self.a * &g;
                self.c.dot(&g)
            })
            .collect()
    }
}

/// `f[t] = C g[t]` for `t = 1..=horizon` from `g[k+1] = A g[k] + B u[k]`.
/// `inputs[k]` is the input vector at step `k`; missing steps are zero.
pub fn predict(
    model: &KoopmanModel,
    g0: &DVector<f64>,
    inputs: &[Vec<f64>],
    horizon: usize,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(invalid("prediction horizon must be at least 1"));
    }
    if g0.len() != model.lift_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.lift_dim(),
            got: g0.len(),
        });
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != model.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: u.len(),
        });
    }
    let zero = vec![0.0; model.input_dim()];
    let mut g = g0.clone();
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let u = inputs.get(k).unwrap_or(&zero);
        g = model.step(&g, u);
        out.push(model.c.dot(&g));
    }
    Ok(out)
}

/// EDMD with ridge: minimise `sum |g[k+1] - A g[k] - B u[k]|^2 + ridge (|A|^2 + |B|^2)`.
///
/// Only pairs whose delay window lies inside the trajectory are used: a window
/// padded across the onset does not follow the same linear relation. `sample_dt` is the spacing of the
/// trajectories as given.
pub fn train_edmd(
    dataset: &[Trajectory],
    dict: &DictionarySpec,
    ridge: f64,
) -> Result<KoopmanModel> {
    dict.validate()?;
    if !(ridge >= 0.0) {
        return Err(invalid("ridge must be non-negative"));
    }
    let p = dict.lift_dim();
    let m = 1;
    let q = p + m;
    let first = dict.delay_count;
    let pairs: usize = dataset
        .iter()
        .map(|t| t.len().saturating_sub(first + 1))
        .sum();
    if pairs < q {
        return Err(invalid("not enough snapshot pairs for the lift dimension"));
    }

    // Gram accumulations: zz = Z Z^T (q x q), zy = Z Y^T (q x p).
    let mut zz = DMatrix::<f64>::zeros(q, q);
    let mut zy = DMatrix::<f64>::zeros(q, p);
    let mut z = vec![0.0; q];
    let mut y = vec![0.0; p];
    for traj in dataset {
        let w = &traj.freq_dev;
        for k in first..w.len().saturating_sub(1) {
            dict.lift_at(w, &traj.injected_power, k, &[], &mut z[..p]);
            z[p] = traj.injected_power[k];
            dict.lift_at(w, &traj.injected_power, k + 1, &[], &mut y);
            for i in 0..q {
                let zi = z[i];
                if zi == 0.0 {
                    continue;
                }
                for j in i..q {
                    zz[(i, j)] += zi * z[j];
                }
                for j in 0..p {
                    zy[(i, j)] += zi * y[j];
                }
            }
        }
    }
    for i in 0..q {
        for j in 0..i {
            zz[(i, j)] = zz[(j, i)];
        }
        zz[(i, i)] += ridge;
    }

    // Jacobi equilibration before the Cholesky solve.
    let scale: Vec<f64> = (0..q)
        .map(|i| {
            let d = zz[(i, i)];
            if d > 0.0 {
                1.0 / libm::sqrt(d)
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(q, q, |i, j| zz[(i, j)] * scale[i] * scale[j]);
    let singular = || {
        Error::Singular(alloc::format!(
            "regressor Gram matrix is rank deficient at ridge {ridge:e}"
        ))
    };
    if zz.diagonal().iter().any(|&d| d <= 0.0) {
        return Err(singular());
    }
    let chol = scaled.cholesky().ok_or_else(singular)?;
    let l_diag_min = chol
        .l_dirty()
        .diagonal()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if ridge == 0.0 && l_diag_min * l_diag_min < 1e-14 {
        return Err(singular());
    }
    let rhs = DMatrix::from_fn(q, p, |i, j| zy[(i, j)] * scale[i]);
    let sol = chol.solve(&rhs);
    // theta^T = D sol, rows indexed by regressor.
    let theta_t = DMatrix::from_fn(q, p, |i, j| sol[(i, j)] * scale[i]);
    let a = theta_t.rows(0, p).transpose();
    let b = theta_t.rows(p, m).transpose();

    let sample_dt = dataset
        .iter()
        .find(|t| t.len() > 1)
        .map(Trajectory::step)
        .unwrap_or(0.0);
    let mut model = KoopmanModel::from_parts(a, b, dict.clone(), sample_dt)?;
    model.training_residual = one_step_rmse(&model, dataset);
    Ok(model)
}

/// RMS of the one-step frequency prediction residual over all pairs.
pub fn one_step_rmse(model: &KoopmanModel, dataset: &[Trajectory]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for traj in dataset {
        for e in one_step_errors(model, traj) {
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        libm::sqrt(sum / count as f64)
    }
}

/// `w[k+1] - C (A g[k] + B u[k])` for every `k` with a full delay window.
pub fn one_step_errors(model: &KoopmanModel, traj: &Trajectory) -> Vec<f64> {
    let p = model.lift_dim();
    let w = &traj.freq_dev;
    let mut g = vec![0.0; p];
    let ca = model.c.transpose() * &model.a;
    let cb = (model.c.transpose() * &model.b)[(0, 0)];
    (model.dict.delay_count..w.len().saturating_sub(1))
        .map(|k| {
            model.dict.lift_at(w, &traj.injected_power, k, &[], &mut g);
            let pred: f64 =
                ca.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() + cb * traj.injected_power[k];
            w[k + 1] - pred
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorSample {
    pub horizon_index: usize,
    /// Measured minus predicted frequency deviation.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    pub errors: Vec<PredictionErrorSample>,
    /// Measured nadir minus predicted nadir over the horizon.
    pub nadir_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlPolicy {
    /// Predict with zero input.
    None,
    /// Predict with the injected power recorded in the trajectory.
    Recorded,
}

/// Multi-step prediction errors from the lift at sample `start` over `horizon` steps.
pub fn collect_errors(
    model: &KoopmanModel,
    dataset: &[Trajectory],
    policy: ControlPolicy,
    start: usize,
    horizon: usize,
) -> Result<Vec<TrajectoryErrors>> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let mut out = Vec::with_capacity(dataset.len());
    let mut g = vec![0.0; model.lift_dim()];
    for traj in dataset {
        if traj.len() < start + horizon + 1 {
            return Err(invalid("trajectory shorter than start + horizon"));
        }
        model
            .dict
            .lift_at(&traj.freq_dev, &traj.injected_power, start, &[], &mut g);
        let g0 = DVector::from_column_slice(&g);
        let inputs: Vec<Vec<f64>> = match policy {
            ControlPolicy::None => Vec::new(),
            ControlPolicy::Recorded => (0..horizon)
                .map(|k| vec![traj.injected_power[start + k]])
                .collect(),
        };
        let pred = predict(model, &g0, &inputs, horizon)?;
        let real = &traj.freq_dev[start + 1..start + 1 + horizon];
        let errors = pred
            .iter()
            .zip(real)
            .enumerate()
            .map(|(t, (p, r))| PredictionErrorSample {
                horizon_index: t + 1,
                error: r - p,
            })
            .collect();
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(TrajectoryErrors {
            errors,
            nadir_error: min(real) - min(&pred),
        });
    }
    Ok(out)
}

/// Lift at sample `k` of a measured history (earlier lags clamp to the first
/// sample). `inputs[i]` is the input held from sample `i` to `i + 1`.
pub fn lift_history(
    dict: &DictionarySpec,
    history: &[f64],
    inputs: &[f64],
    k: usize,
) -> DVector<f64> {
    let mut g = vec![0.0; dict.lift_dim()];
    dict.lift_at(history, inputs, k, &[], &mut g);
    DVector::from_vec(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sfr::{generate_dataset, DatasetSpec, Excitation, SfrParams};
    use rand::Rng as _;

    #[test]
    fn lift_examples() {
        let d = DictionarySpec::delays_only(2);
        assert_eq!(
            lift(&d, &[0.0, 0.0, 0.0]).unwrap().as_slice(),
            &[0.0, 0.0, 0.0]
        );
        let g = lift(&d, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 2.0, 1.0]);
        assert!(lift(&d, &[1.0, 2.0]).is_err());

        let mut d = DictionarySpec::delays_only(1);
        d.include_constant = true;
        let g = lift(&d, &[0.0, 0.0]).unwrap();
        assert_eq!(g[g.len() - 1], 1.0);

        let d = DictionarySpec {
            rbf_centers: vec![0.25, -0.5],
            rbf_bandwidth: 0.1,
            ..DictionarySpec::delays_only(0)
        };
        let g = lift(&d, &[0.25]).unwrap();
        assert_eq!(g[1], 1.0);
        assert!(g[2] < 1e-10);
        assert_eq!(d.lift_dim(), 3);
    }

    #[test]
    fn lift_aux_channel() {
        let d = DictionarySpec {
            aux_count: 2,
            ..DictionarySpec::delays_only(1)
        };
        let g = lift_with_aux(&d, &[0.1, 0.2], &[5.0, 6.0]).unwrap();
        assert_eq!(g.as_slice(), &[0.2, 0.1, 5.0, 6.0]);
        assert!(lift_with_aux(&d, &[0.1, 0.2], &[5.0]).is_err());
    }

    /// Data from a delay-coordinate system with known (A, B): the first row is an
    /// arbitrary stable recursion and the remaining rows shift.
    fn companion_system(coeffs: &[f64], b0: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = coeffs.len();
        let mut a = DMatrix::zeros(n, n);
        for (j, &c) in coeffs.iter().enumerate() {
            a[(0, j)] = c;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(0, 0)] = b0;
        (a, b)
    }

    fn companion_data(
        coeffs: &[f64],
        b0: f64,
        n_traj: usize,
        len: usize,
        seed: u64,
    ) -> Vec<Trajectory> {
        let mut r = rng::from_seed(seed);
        (0..n_traj)
            .map(|_| {
                let u: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
                let mut w = vec![0.0; len];
                for k in 0..len - 1 {
                    let mut next = b0 * u[k];
                    for (j, &c) in coeffs.iter().enumerate() {
                        next += c * if k >= j { w[k - j] } else { 0.0 };
                    }
                    w[k + 1] = next;
                }
                Trajectory {
                    times: (0..len).map(|k| k as f64 * 0.1).collect(),
                    freq_dev: w.clone(),
                    injected_power: u,
                    noise_seed: 0,
                    true_freq_dev: w,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_known_linear_pair() {
        let coeffs = [1.2, -0.5, 0.1];
        let (a_true, b_true) = companion_system(&coeffs, 0.7);
        let data = companion_data(&coeffs, 0.7, 5, 200, 9);
        let model = train_edmd(&data, &DictionarySpec::delays_only(2), 0.0).unwrap();
        assert!((&model.a - &a_true).abs().max() < 1e-8, "{}", model.a);
        assert!((&model.b - &b_true).abs().max() < 1e-8);
        assert!(model.training_residual < 1e-10);
        let errs = collect_errors(&model, &data, ControlPolicy::Recorded, 3, 20).unwrap();
        for t in &errs {
            assert!(t.errors.iter().all(|e| e.error.abs() < 1e-8));
            assert!(t.nadir_error.abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_without_ridge() {
        // Constant zero data gives a zero Gram matrix.
        let tr = Trajectory {
            times: (0..50).map(|k| k as f64).collect(),
            freq_dev: vec![0.0; 50],
            injected_power: vec![0.0; 50],
            noise_seed: 0,
            true_freq_dev: vec![0.0; 50],
        };
        let err = train_edmd(&[tr.clone()], &DictionarySpec::delays_only(2), 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(train_edmd(&[tr], &DictionarySpec::delays_only(2), 1e-8).is_ok());
    }

    #[test]
    fn no_excitation_gives_negligible_b() {
        let coeffs = [0.9, -0.2];
        let mut data = companion_data(&coeffs, 0.0, 3, 100, 4);
        for t in &mut data {
            t.injected_power.iter_mut().for_each(|u| *u = 0.0);
            t.freq_dev[0] = 1.0;
            // re-run recursion from a nonzero start
            let mut w = vec![0.0; 100];
            w[0] = 1.0;
            for k in 0..99 {
                w[k + 1] = 0.9 * w[k] - 0.2 * if k >= 1 { w[k - 1] } else { w[0] };
            }
            t.freq_dev = w.clone();
            t.true_freq_dev = w;
        }
        let model = train_edmd(&data, &DictionarySpec::delays_only(1), 1e-6).unwrap();
        assert!(model.b.abs().max() < 1e-6);
    }

    #[test]
    fn prediction_is_linear() {
        let coeffs = [1.1, -0.3];
        let (a, b) = companion_system(&coeffs, 0.5);
        let model = KoopmanModel::from_parts(a, b, DictionarySpec::delays_only(1), 0.1).unwrap();
        let g0 = DVector::from_vec(vec![0.3, -0.1]);
        let u: Vec<Vec<f64>> = (0..15).map(|k| vec![(k as f64 * 0.7).sin()]).collect();
        let zero_g = DVector::zeros(2);
        let full = predict(&model, &g0, &u, 15).unwrap();
        let free = predict(&model, &g0, &[], 15).unwrap();
        let forced = predict(&model, &zero_g, &u, 15).unwrap();
        for t in 0..15 {
            assert!((full[t] - free[t] - forced[t]).abs() < 1e-12);
        }
        assert!(predict(&model, &zero_g, &[], 5)
            .unwrap()
            .iter()
            .all(|&f| f == 0.0));
        // homogeneous response against explicit powers
        let mut ak = model.a.clone();
        for t in 0..15 {
            let direct = model.c.dot(&(&ak * &g0));
            assert!((direct - free[t]).abs() < 1e-12);
            ak = &model.a * ak;
        }
        assert_eq!(model.free_response(&g0, 15), free);
        // Markov parameters reproduce the forced response.
        let h = model.markov_parameters(15);
        for t in 0..15 {
            let conv: f64 = (0..=t).map(|k| h[t - k][0] * u[k][0]).sum();
            assert!((conv - forced[t]).abs() < 1e-12);
        }
        assert!(predict(&model, &DVector::zeros(3), &[], 3).is_err());
        assert!(predict(&model, &g0, &[], 0).is_err());
    }

    #[test]
    fn sfr_one_step_residual_near_noise_floor() {
        let params = SfrParams::default();
        let spec = DatasetSpec {
            n_traj: 40,
            horizon: 20.0,
            excitation: Some(Excitation {
                start_time: 0.3,
                amplitude_range: (0.0, 0.1),
            }),
            ..DatasetSpec::default()
        };
        let train = generate_dataset(&params, &spec).unwrap();
        let test = generate_dataset(
            &params,
            &DatasetSpec {
                seed: 99,
                n_traj: 10,
                ..spec
            },
        )
        .unwrap();
        let dec = |d: &crate::sfr::Dataset| {
            d.trajectories
                .iter()
                .map(|t| t.decimate(5))
                .collect::<Vec<_>>()
        };
        let (train, test) = (dec(&train), dec(&test));
        let dict = DictionarySpec::with_grid(10, 10, (-0.06, 0.0), true);
        let model = train_edmd(&train, &dict, 1e-8).unwrap();
        let held_out = one_step_rmse(&model, &test);
        assert!(
            held_out < params.noise_std * 10.0,
            "held-out residual {held_out}"
        );
    }

    #[test]
    fn residual_non_increasing_for_nested_dictionaries() {
        let params = SfrParams::default();
        let spec = DatasetSpec {
            n_traj: 10,
            horizon: 20.0,
            excitation: Some(Excitation {
                start_time: 0.3,
                amplitude_range: (0.0, 0.1),
            }),
            ..DatasetSpec::default()
        };
        let data: Vec<_> = generate_dataset(&params, &spec)
            .unwrap()
            .trajectories
            .iter()
            .map(|t| t.decimate(5))
            .collect();
        let dicts = [
            DictionarySpec::delays_only(1),
            DictionarySpec::delays_only(3),
            DictionarySpec::delays_only(6),
            DictionarySpec {
                rbf_centers: vec![-0.04, -0.02],
                rbf_bandwidth: 0.02,
                ..DictionarySpec::delays_only(6)
            },
        ];
        let mut prev = f64::INFINITY;
        for d in &dicts {
            let r = train_edmd(&data, d, 0.0).unwrap().training_residual;
            assert!(r <= prev * (1.0 + 1e-9), "{r} > {prev}");
            prev = r;
        }
    }
}
