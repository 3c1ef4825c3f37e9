//! Wasserstein-type distances between scalar Gaussian mixtures and the
//! ambiguity ball built on them.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gmm::Gmm;
use crate::transport;

/// A transport plan between two mixtures. Row `k` belongs to the first
/// mixture, column `l` to the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    #[serde(with = "row_major")]
    pub w: DMatrix<f64>,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
}

impl Coupling {
    /// Independent (product) coupling.
    pub fn product(rows: &[f64], cols: &[f64]) -> Self {
        Coupling {
            w: DMatrix::from_fn(rows.len(), cols.len(), |k, l| rows[k] * cols[l]),
            row_marginals: rows.to_vec(),
            col_marginals: cols.to_vec(),
        }
    }

    /// Largest deviation of the plan's marginals from the stored ones.
    pub fn marginal_residual(&self) -> f64 {
        let rows = (0..self.w.nrows()).map(|k| (self.w.row(k).sum() - self.row_marginals[k]).abs());
        let cols =
            (0..self.w.ncols()).map(|l| (self.w.column(l).sum() - self.col_marginals[l]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.w.nrows() == self.row_marginals.len()
            && self.w.ncols() == self.col_marginals.len()
            && self.w.iter().all(|&x| x >= 0.0)
            && self.marginal_residual() <= tol
    }

    /// `sum w_kl * cost_kl`.
    pub fn cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.w.component_mul(cost).sum()
    }
}

mod row_major {
    use alloc::vec::Vec;
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    pub reference: Gmm,
    pub radius: f64,
    pub k_budget: usize,
}

impl AmbiguitySet {
    /// Ball of squared radius `radius` whose candidates have as many
    /// components as the reference.
    pub fn new(reference: Gmm, radius: f64) -> Result<Self> {
        let k_budget = reference.k();
        Self::with_budget(reference, radius, k_budget)
    }

    pub fn with_budget(reference: Gmm, radius: f64, k_budget: usize) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(invalid("ambiguity radius must be finite and non-negative"));
        }
        if k_budget == 0 {
            return Err(invalid("component budget must be at least 1"));
        }
        Ok(AmbiguitySet {
            reference,
            radius,
            k_budget,
        })
    }
}

/// Squared W2 distance between two scalar Gaussians.
pub fn w2_gaussian(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2)
}

/// Pairwise squared W2 costs, rows from `a`, columns from `b`.
pub fn cost_matrix(a: &Gmm, b: &Gmm) -> DMatrix<f64> {
    DMatrix::from_fn(a.k(), b.k(), |k, l| {
        w2_gaussian(a.means()[k], a.stddevs()[k], b.means()[l], b.stddevs()[l])
    })
}

/// Squared mixture W2 distance and an optimal coupling.
///
/// Zero-weight components are left out of the transport problem and get
/// empty rows or columns in the returned plan.
pub fn mw2(a: &Gmm, b: &Gmm) -> Result<(f64, Coupling)> {
    let ka: Vec<usize> = (0..a.k()).filter(|&i| a.weights()[i] > 0.0).collect();
    let kb: Vec<usize> = (0..b.k()).filter(|&i| b.weights()[i] > 0.0).collect();
    let (sa, sb) = (a.without_zero_weights(), b.without_zero_weights());
    let plan = transport::solve(sa.weights(), sb.weights(), &cost_matrix(&sa, &sb))?;
    let mut w = DMatrix::zeros(a.k(), b.k());
    for (r, &i) in ka.iter().enumerate() {
        for (c, &j) in kb.iter().enumerate() {
            w[(i, j)] = plan.flow[(r, c)];
        }
    }
    Ok((
        plan.cost.max(0.0),
        Coupling {
            w,
            row_marginals: a.weights().to_vec(),
            col_marginals: b.weights().to_vec(),
        },
    ))
}

/// Whether `candidate` lies in the ball, with its distance to the reference.
pub fn membership(set: &AmbiguitySet, candidate: &Gmm) -> Result<(bool, f64)> {
    let (d, _) = mw2(candidate, &set.reference)?;
    Ok((d <= set.radius + 1e-12, d))
}

#[cfg(test)]
mod tests;
