use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use super::studies::{
    BaselineRow, ConditionalCheck, CostRow, DcRow, IcdfCell, IcdfCorrelation, IcdfReport,
    ScenarioSet, TimingPoint,
};
use crate::config::Config;
use crate::io::{read_csv, read_json, write_csv, write_json};

/// One row of the persisted per-scenario table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub set: String,
    pub id: usize,
    pub error: f64,
    pub predicted_nadir: f64,
    pub realized_nadir: f64,
    pub safe: bool,
    pub economic: bool,
    pub cost: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Values recomputed from the tables below by [`ExperimentReport::recompute`].
    pub indicators: BTreeMap<String, f64>,
    /// Thresholds, margins and other scalars carried for reference.
    pub parameters: BTreeMap<String, f64>,
    pub scenarios: Vec<ScenarioRow>,
    pub dc: Vec<DcRow>,
    pub timing: Vec<TimingPoint>,
    pub cost: Vec<CostRow>,
    pub icdf_cells: Vec<IcdfCell>,
    pub icdf_correlations: Vec<IcdfCorrelation>,
    pub baselines: Vec<BaselineRow>,
    pub conditional: Option<ConditionalCheck>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn fraction<T>(rows: &[&T], pred: impl Fn(&T) -> bool) -> f64 {
    rows.iter().filter(|r| pred(r)).count() as f64 / rows.len().max(1) as f64
}

impl ExperimentReport {
    pub fn new(experiment: &str, cfg: &Config) -> Self {
        let seeds = [
            ("training", cfg.training.dataset.seed),
            ("validation", cfg.errors.validation.seed),
            ("em", cfg.errors.em_seed),
            ("bootstrap", cfg.errors.bootstrap_seed),
            ("scenarios", cfg.scenarios.seed),
            ("dc", cfg.dc.seed),
            ("icdf", cfg.icdf.seed),
            ("timing", cfg.timing.seed),
        ];
        let parameters = [
            ("f_min", cfg.control.f_min),
            ("economy_threshold", cfg.scenarios.economy_threshold),
            ("alpha", cfg.control.effective_alpha()),
        ];
        Self {
            experiment: experiment.into(),
            config_hash: cfg.hash(),
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            indicators: BTreeMap::new(),
            parameters: parameters
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            scenarios: Vec::new(),
            dc: Vec::new(),
            timing: Vec::new(),
            cost: Vec::new(),
            icdf_cells: Vec::new(),
            icdf_correlations: Vec::new(),
            baselines: Vec::new(),
            conditional: None,
        }
    }

    pub fn param(&mut self, name: &str, value: f64) -> &mut Self {
        self.parameters.insert(name.into(), value);
        self
    }

    pub fn add_scenarios(&mut self, set: &ScenarioSet) -> &mut Self {
        self.scenarios.extend(set.runs.iter().map(|r| ScenarioRow {
            set: set.name.clone(),
            id: r.id,
            error: r.error,
            predicted_nadir: r.predicted_nadir,
            realized_nadir: r.realized_nadir,
            safe: r.safe,
            economic: r.economic,
            cost: r.cost,
            solve_time: r.solve_time,
        }));
        self
    }

    pub fn add_icdf(&mut self, r: &IcdfReport) -> &mut Self {
        self.icdf_cells.extend(r.cells.iter().cloned());
        self.icdf_correlations
            .extend(r.correlations.iter().cloned());
        self
    }

    /// Sets the indicators from the tables.
    pub fn finish(&mut self) -> &mut Self {
        self.indicators = self.recompute();
        self
    }

    fn scenario_sets(&self) -> Vec<String> {
        let mut sets: Vec<String> = self.scenarios.iter().map(|r| r.set.clone()).collect();
        sets.sort();
        sets.dedup();
        sets
    }

    /// Every indicator as a function of the stored tables only.
    pub fn recompute(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for set in self.scenario_sets() {
            let rows: Vec<&ScenarioRow> = self.scenarios.iter().filter(|r| r.set == set).collect();
            out.insert(format!("{set}.safety"), fraction(&rows, |r| r.safe));
            out.insert(format!("{set}.economy"), fraction(&rows, |r| r.economic));
            out.insert(
                format!("{set}.mean_cost"),
                mean(rows.iter().map(|r| r.cost)),
            );
        }
        let threshold = self
            .parameters
            .get("economy_threshold")
            .copied()
            .unwrap_or(f64::NAN);
        for (online, name) in [(false, "dc_static"), (true, "dc_online")] {
            let rows: Vec<&DcRow> = self.dc.iter().filter(|r| r.online == online).collect();
            if rows.is_empty() {
                continue;
            }
            out.insert(format!("{name}.safety"), fraction(&rows, |r| r.safe));
            out.insert(
                format!("{name}.economy"),
                fraction(&rows, |r| r.nadir > threshold),
            );
            out.insert(
                format!("{name}.mean_cost"),
                mean(rows.iter().map(|r| r.cost)),
            );
        }
        if !self.timing.is_empty() {
            let mut d: Vec<f64> = self.timing.iter().map(|t| t.drefc).collect();
            d.sort_by(f64::total_cmp);
            let med = if d.len() % 2 == 1 {
                d[d.len() / 2]
            } else {
                0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
            };
            let spread = d.iter().map(|x| (x - med).abs() / med).fold(0.0, f64::max);
            out.insert("timing.drefc_spread".into(), spread);
            let rising = self.timing.windows(2).all(|w| w[1].so > w[0].so);
            out.insert(
                "timing.so_increasing".into(),
                if rising { 1.0 } else { 0.0 },
            );
        }
        if !self.icdf_cells.is_empty() {
            let worst = self.icdf_cells.iter().map(|c| c.rate).fold(0.0, f64::max);
            out.insert("icdf.max_reversal_rate".into(), worst);
        }
        if !self.icdf_correlations.is_empty() {
            let min = |sel: &dyn Fn(&IcdfCorrelation) -> bool| {
                self.icdf_correlations
                    .iter()
                    .filter(|c| sel(c))
                    .map(|c| c.pearson)
                    .fold(f64::INFINITY, f64::min)
            };
            out.insert("icdf.min_pearson".into(), min(&|_| true));
            out.insert(
                "icdf.min_pearson_alpha_0.05".into(),
                min(&|c| (c.alpha - 0.05).abs() < 1e-12),
            );
        }
        if !self.cost.is_empty() {
            let max = self
                .cost
                .iter()
                .map(|c| c.ratio.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            out.insert("cost.max_ratio".into(), max);
            let monotone = self
                .cost
                .windows(2)
                .all(|w| matches!((w[0].ratio, w[1].ratio), (Some(a), Some(b)) if b >= a));
            out.insert(
                "cost.ratio_non_decreasing".into(),
                if monotone { 1.0 } else { 0.0 },
            );
        }
        if let Some(c) = &self.conditional {
            out.insert(
                "conditional.log_density_gain".into(),
                c.conditional - c.marginal,
            );
        }
        out
    }

    /// Indicators match the tables and every stored flag matches its nadir.
    pub fn audit(&self) -> bool {
        let f_min = self.parameters.get("f_min").copied().unwrap_or(f64::NAN);
        let threshold = self
            .parameters
            .get("economy_threshold")
            .copied()
            .unwrap_or(f64::NAN);
        let flags = self.scenarios.iter().all(|r| {
            r.safe == (r.realized_nadir >= f_min) && r.economic == (r.realized_nadir > threshold)
        });
        let dc = self.dc.iter().all(|r| r.safe == (r.nadir >= f_min));
        flags && dc && self.indicators == self.recompute()
    }

    /// Acceptance thresholds that the report's indicators violate.
    pub fn violations(&self) -> Vec<String> {
        let ind = &self.indicators;
        let get = |k: &str| ind.get(k).copied();
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        if let Some(s) = get("reference.safety") {
            need(
                (0.93..=0.99).contains(&s),
                format!("reference safety {s:.4} outside [0.93, 0.99]"),
            );
        }
        if let Some(s) = get("worst.safety") {
            need(
                (0.93..=0.97).contains(&s),
                format!("worst-case safety {s:.4} outside [0.93, 0.97]"),
            );
            if let Some(r) = get("reference.safety") {
                need(
                    s <= r,
                    format!("worst-case safety {s:.4} above reference {r:.4}"),
                );
            }
        }
        if let (Some(on), Some(st)) = (get("dc_online.safety"), get("dc_static.safety")) {
            need(
                on >= st,
                format!("online DC safety {on:.4} below static {st:.4}"),
            );
        }
        if let Some(s) = get("timing.drefc_spread") {
            need(
                s <= 0.10,
                format!(
                    "DREFC solve time varies by {:.1}% around its median",
                    100.0 * s
                ),
            );
        }
        if let Some(v) = get("timing.so_increasing") {
            need(
                v == 1.0,
                "scenario baseline time is not strictly increasing".into(),
            );
        }
        if let Some(v) = get("icdf.max_reversal_rate") {
            need(
                v <= 0.01,
                format!("quantile order reversal rate {v:.4} above 0.01"),
            );
        }
        if let Some(v) = get("icdf.min_pearson_alpha_0.05") {
            need(
                v >= 0.95,
                format!("Pearson correlation {v:.4} below 0.95 at alpha 0.05"),
            );
        }
        if let Some(v) = get("cost.max_ratio") {
            need(v < 1.0, format!("DREFC/RO cost ratio reaches {v:.4}"));
        }
        if let Some(v) = get("cost.ratio_non_decreasing") {
            need(
                v == 1.0,
                "DREFC/RO cost ratio is not non-decreasing in confidence".into(),
            );
        }
        if let Some(v) = get("conditional.log_density_gain") {
            need(
                v > 0.0,
                format!("conditional log density gain {v:.4} is not positive"),
            );
        }
        out
    }
}

/// Writes `report.json` and one CSV per non-empty table into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    fn table<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        write_csv(&dir.join(name), rows)
    }
    table(dir, "scenarios.csv", &report.scenarios)?;
    table(dir, "dc.csv", &report.dc)?;
    table(dir, "timing.csv", &report.timing)?;
    table(dir, "cost.csv", &report.cost)?;
    table(dir, "icdf_cells.csv", &report.icdf_cells)?;
    table(dir, "icdf_correlation.csv", &report.icdf_correlations)?;
    table(dir, "baselines.csv", &report.baselines)?;
    let indicators: Vec<(String, f64)> = report
        .indicators
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    table(dir, "indicators.csv", &indicators)
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    read_json(&dir.join("report.json"))
}

/// The per-scenario table as written to `scenarios.csv`.
pub fn load_scenarios_csv(dir: &Path) -> Result<Vec<ScenarioRow>> {
    read_csv(&dir.join("scenarios.csv"))
}
