use anyhow::{ensure, Result};
use drefc_core::control::{
    solve_drefc_u, solve_scenarios, ControlProblem, ControlSolution, Margin,
};
use drefc_core::gmm::Gmm;
use serde::{Deserialize, Serialize};

/// One sampled prediction error applied to a nominal prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInput {
    pub id: usize,
    /// Measured minus predicted nadir.
    pub error: f64,
    pub predicted_nadir: f64,
    pub realized_nadir: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub id: usize,
    pub error: f64,
    pub predicted_nadir: f64,
    pub realized_nadir: f64,
    pub safe: bool,
    pub economic: bool,
    pub cost: f64,
    pub solve_time: f64,
}

impl ScenarioRun {
    pub fn new(
        input: &ScenarioInput,
        f_min: f64,
        threshold: f64,
        cost: f64,
        solve_time: f64,
    ) -> Self {
        Self {
            id: input.id,
            error: input.error,
            predicted_nadir: input.predicted_nadir,
            realized_nadir: input.realized_nadir,
            safe: input.realized_nadir >= f_min,
            economic: input.realized_nadir > threshold,
            cost,
            solve_time,
        }
    }

    /// Whether the stored flags agree with the stored nadir.
    pub fn flags_consistent(&self, f_min: f64, threshold: f64) -> bool {
        self.safe == (self.realized_nadir >= f_min)
            && self.economic == (self.realized_nadir > threshold)
    }
}

/// Samples `n` nadir errors from `error_gmm` (measured minus predicted) and
/// shifts the predicted nadir of `prediction` by each.
pub fn generate_scenarios(
    error_gmm: &Gmm,
    n: usize,
    prediction: &[f64],
    seed: u64,
) -> Result<Vec<ScenarioInput>> {
    ensure!(n >= 1, "at least one scenario is needed");
    ensure!(!prediction.is_empty(), "empty prediction");
    let nadir = prediction.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(error_gmm
        .sample(n, seed)
        .into_iter()
        .enumerate()
        .map(|(id, error)| ScenarioInput {
            id,
            error,
            predicted_nadir: nadir,
            realized_nadir: nadir + error,
        })
        .collect())
}

fn fraction(runs: &[ScenarioRun], pred: impl Fn(&ScenarioRun) -> bool) -> f64 {
    runs.iter().filter(|r| pred(r)).count() as f64 / runs.len() as f64
}

pub fn safety_indicator(runs: &[ScenarioRun]) -> f64 {
    assert!(!runs.is_empty(), "no scenarios");
    fraction(runs, |r| r.safe)
}

/// Fraction of runs whose nadir stays above `threshold`.
pub fn economy_indicator(runs: &[ScenarioRun], threshold: f64) -> f64 {
    assert!(!runs.is_empty(), "no scenarios");
    fraction(runs, |r| r.realized_nadir > threshold)
}

pub fn mean_cost(runs: &[ScenarioRun]) -> f64 {
    runs.iter().map(|r| r.cost).sum::<f64>() / runs.len() as f64
}

/// Scenario baseline: one margin constraint block per sampled shortfall.
pub fn baseline_so(shortfalls: &[f64], p: &ControlProblem) -> Result<ControlSolution> {
    Ok(solve_scenarios(p, shortfalls)?)
}

/// Robust baseline: margin set to the largest historical shortfall.
pub fn baseline_ro(history: &[f64], p: &ControlProblem) -> Result<(f64, ControlSolution)> {
    ensure!(!history.is_empty(), "empty error history");
    let zeta = history
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let q = ControlProblem {
        margin: Margin::Uniform(zeta),
        ..p.clone()
    };
    Ok((zeta, solve_drefc_u(&q)?))
}
