//! Strictly convex quadratic programs by the Goldfarb-Idnani dual
//! active-set method.
//!
//! Minimises `0.5 x'Gx + a'x` subject to `C x >= b`, where row `i` of `C`
//! is one constraint. Starting from the unconstrained minimiser, the most
//! violated constraint is added each round and constraints whose
//! multiplier would turn negative are dropped.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct Qp {
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero when inactive.
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

const FEAS_TOL: f64 = 1e-12;
/// Relative size of `z'n` below which the entering normal counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

/// `Ok(None)` means the constraints admit no point.
pub fn solve(qp: &Qp) -> Result<Option<QpSolution>> {
    let n = qp.g.nrows();
    let m = qp.c.nrows();
    if qp.g.ncols() != n || qp.a.len() != n || qp.c.ncols() != n || qp.b.len() != m {
        return Err(invalid("QP dimensions do not agree"));
    }
    let chol = Cholesky::new(qp.g.clone())
        .ok_or_else(|| invalid("QP Hessian is not positive definite"))?;
    let mut x = -chol.solve(&qp.a);
    let l = chol.l();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let row_scale: Vec<f64> = (0..m)
        .map(|i| 1.0 + qp.c.row(i).amax() + qp.b[i].abs())
        .collect();
    let mut iterations = 0;
    let max_iter = 10 * (m + n) + 100;

    loop {
        // Most violated constraint, measured relative to its row scale.
        let slack = &qp.c * &x - &qp.b;
        let worst = (0..m)
            .filter(|i| !active.contains(i))
            .map(|i| (i, slack[i] / row_scale[i]))
            .filter(|&(_, s)| s < -FEAS_TOL)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((p, _)) = worst else { break };
        let np = qp.c.row(p).transpose();
        // `n' G^-1 n`, the scale against which a vanishing primal step is judged.
        let nn = chol.solve(&np).dot(&np);
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(crate::error::Error::Solver {
                    reason: "QP iteration limit reached".into(),
                    row_residual: f64::NAN,
                    col_residual: f64::NAN,
                });
            }
            let (z, r, zn) = directions(&l, &qp.c, &active, &np);
            // Largest dual step that keeps active multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 0.0 {
                    let t = u[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let sp = np.dot(&x) - qp.b[p];
            // A normal (numerically) in the span of the active ones gives no primal step.
            let t2 = if zn <= DEPENDENCE_TOL * nn {
                f64::INFINITY
            } else {
                -sp / zn
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Ok(None);
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &z * t;
            }
            for (uj, rj) in u.iter_mut().zip(r.iter()) {
                *uj -= t * rj;
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            active.remove(j);
            u.remove(j);
        }
    }

    let mut lambda = DVector::zeros(m);
    for (&i, &ui) in active.iter().zip(&u) {
        lambda[i] = ui.max(0.0);
    }
    let mut kkt_residual = kkt_residual(qp, &x, &lambda);
    if let Some((xr, lr)) = refine(qp, &active, &x, &lambda) {
        let res = self::kkt_residual(qp, &xr, &lr);
        if res < kkt_residual {
            x = xr;
            lambda = lr;
            kkt_residual = res;
        }
    }
    let mut order: Vec<usize> = active.clone();
    order.sort_unstable();
    Ok(Some(QpSolution {
        x,
        lambda,
        active: order,
        iterations,
        kkt_residual,
    }))
}

/// One Newton correction of the equality system on the active set, which
/// removes the drift the dual updates leave on ill-conditioned programs.
fn refine(
    qp: &Qp,
    active: &[usize],
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = x.len();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.g);
    let mut rhs = DVector::zeros(n + k);
    let grad = &qp.g * x + &qp.a - qp.c.transpose() * lambda;
    rhs.rows_mut(0, n).copy_from(&(-grad));
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(c, n + j)] = -qp.c[(i, c)];
            kkt[(n + j, c)] = qp.c[(i, c)];
        }
        rhs[n + j] = qp.b[i] - qp.c.row(i).dot(&x.transpose());
    }
    let d = kkt.lu().solve(&rhs)?;
    let xr = x + d.rows(0, n);
    let mut lr = lambda.clone();
    for (j, &i) in active.iter().enumerate() {
        lr[i] = (lr[i] + d[n + j]).max(0.0);
    }
    xr.iter()
        .chain(lr.iter())
        .all(|v| v.is_finite())
        .then_some((xr, lr))
}

/// Primal step `z`, dual step `r` and `z'n` for the entering normal `n`,
/// from a QR factorisation of `L^-1 N` where `G = L L'`. `z'n` is the squared
/// part of `L^-1 n` outside the active span, so it is exactly zero once the
/// active normals span the space.
fn directions(
    l: &DMatrix<f64>,
    c: &DMatrix<f64>,
    active: &[usize],
    np: &DVector<f64>,
) -> (DVector<f64>, Vec<f64>, f64) {
    let n = np.len();
    let k = active.len();
    let d = l
        .solve_lower_triangular(np)
        .expect("Cholesky factor is nonsingular");
    if k == 0 {
        let zn = d.norm_squared();
        let z = l
            .tr_solve_lower_triangular(&d)
            .expect("Cholesky factor is nonsingular");
        return (z, Vec::new(), zn);
    }
    let n_act = DMatrix::from_fn(n, k, |i, j| c[(active[j], i)]);
    let b = l
        .solve_lower_triangular(&n_act)
        .expect("Cholesky factor is nonsingular");
    let qr = b.qr();
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let w = &qt * &d;
    let rk = qr.r();
    let r = rk
        .rows(0, k.min(n))
        .columns(0, k.min(n))
        .solve_upper_triangular(&w.rows(0, k.min(n)))
        .map(|r| r.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; k]);
    let mut w2 = w;
    w2.rows_mut(0, k.min(n)).fill(0.0);
    let zn = w2.norm_squared();
    let z = l
        .tr_solve_lower_triangular(&(qt.transpose() * w2))
        .expect("Cholesky factor is nonsingular");
    (z, r, zn)
}

/// Largest violation among stationarity, primal and dual feasibility and
/// complementary slackness.
pub fn kkt_residual(qp: &Qp, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let grad = &qp.g * x + &qp.a - qp.c.transpose() * lambda;
    let slack = &qp.c * x - &qp.b;
    let mut res = grad.amax();
    for i in 0..slack.len() {
        res = res.max((-slack[i]).max(0.0));
        res = res.max((-lambda[i]).max(0.0));
        res = res.max((lambda[i] * slack[i]).abs());
    }
    res
}

/// Box rows `x_i >= lo` and `-x_i >= -hi`; infinite bounds give no row.
pub fn box_rows(n: usize, lo: f64, hi: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        if lo.is_finite() {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            rows.push(r);
            rhs.push(lo);
        }
        if hi.is_finite() {
            let mut r = vec![0.0; n];
            r[i] = -1.0;
            rows.push(r);
            rhs.push(-hi);
        }
    }
    (rows, rhs)
}
