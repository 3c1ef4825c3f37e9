//! Balanced transportation problem by the tree (MODI) simplex.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const REDUCED_TOL: f64 = 1e-12;
const MARGIN_TOL: f64 = 1e-10;

pub(crate) struct Plan {
    pub flow: DMatrix<f64>,
    pub cost: f64,
}

/// Minimises `sum c_ij x_ij` over `x >= 0` with row sums `supply` and column
/// sums `demand`. Both vectors must sum to the same total.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<Plan> {
    let (k, l) = (supply.len(), demand.len());
    if k == 0 || l == 0 || cost.shape() != (k, l) {
        return Err(crate::error::invalid(
            "transport problem has mismatched shapes",
        ));
    }
    let mut flow = DMatrix::zeros(k, l);
    let mut basis = northwest_corner(supply, demand, &mut flow);

    let max_iter = 50 * (k * l + 1);
    let mut optimal = false;
    for _ in 0..max_iter {
        let (u, v) = potentials(&basis, cost, k, l);
        // Bland: first improving cell in row-major order.
        let entering = (0..k * l)
            .map(|c| (c / l, c % l))
            .find(|&(i, j)| !basis.contains(&(i, j)) && cost[(i, j)] - u[i] - v[j] < -REDUCED_TOL);
        let Some((ei, ej)) = entering else {
            optimal = true;
            break;
        };
        let path = tree_path(&basis, k, l, ei, k + ej);
        // The path alternates: the first edge loses flow, the next gains, ...
        let mut leave_pos = 0;
        for p in (2..path.len()).step_by(2) {
            let (x, best) = (flow[path[p]], flow[path[leave_pos]]);
            if x < best || (x == best && path[p] < path[leave_pos]) {
                leave_pos = p;
            }
        }
        let theta = flow[path[leave_pos]];
        for (p, &(i, j)) in path.iter().enumerate() {
            if p % 2 == 0 {
                flow[(i, j)] -= theta;
            } else {
                flow[(i, j)] += theta;
            }
        }
        flow[(ei, ej)] += theta;
        let leaving = path[leave_pos];
        flow[leaving] = 0.0;
        let slot = basis
            .iter()
            .position(|&b| b == leaving)
            .expect("leaving cell is basic");
        basis[slot] = (ei, ej);
    }

    for x in flow.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let row_residual = (0..k)
        .map(|i| (flow.row(i).sum() - supply[i]).abs())
        .fold(0.0, f64::max);
    let col_residual = (0..l)
        .map(|j| (flow.column(j).sum() - demand[j]).abs())
        .fold(0.0, f64::max);
    if !optimal || row_residual > MARGIN_TOL || col_residual > MARGIN_TOL {
        return Err(Error::Solver {
            reason: if optimal {
                "marginals not reproduced".into()
            } else {
                "iteration limit reached".into()
            },
            row_residual,
            col_residual,
        });
    }
    let cost = flow.component_mul(cost).sum();
    Ok(Plan { flow, cost })
}

/// Initial spanning-tree basis with exactly `k + l - 1` cells.
fn northwest_corner(
    supply: &[f64],
    demand: &[f64],
    flow: &mut DMatrix<f64>,
) -> Vec<(usize, usize)> {
    let (k, l) = (supply.len(), demand.len());
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let mut basis = Vec::with_capacity(k + l - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        flow[(i, j)] = x;
        ra[i] -= x;
        rb[j] -= x;
        basis.push((i, j));
        if i == k - 1 && j == l - 1 {
            break;
        }
        if j == l - 1 || (i < k - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Round-off leftovers land in the final cell.
    flow[(k - 1, l - 1)] += ra[k - 1].max(rb[l - 1]).max(0.0);
    basis
}

fn potentials(
    basis: &[(usize, usize)],
    cost: &DMatrix<f64>,
    k: usize,
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; k];
    let mut v = vec![f64::NAN; l];
    u[0] = 0.0;
    let mut changed = true;
    while changed {
        changed = false;
        for &(i, j) in basis {
            if u[i].is_nan() && !v[j].is_nan() {
                u[i] = cost[(i, j)] - v[j];
                changed = true;
            } else if v[j].is_nan() && !u[i].is_nan() {
                v[j] = cost[(i, j)] - u[i];
                changed = true;
            }
        }
    }
    (u, v)
}

/// Basic cells on the tree path from node `from` to node `to`; rows are
/// nodes `0..k`, columns `k..k+l`.
fn tree_path(
    basis: &[(usize, usize)],
    k: usize,
    l: usize,
    from: usize,
    to: usize,
) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k + l];
    for (e, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((k + j, e));
        adj[k + j].push((i, e));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, e) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, e));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while let Some((prev, e)) = parent[node] {
        path.push(basis[e]);
        node = prev;
    }
    path.reverse();
    path
}
