use anyhow::Result;

use super::pipeline::Pipeline;
use super::report::ExperimentReport;
use super::studies::{
    compare_baselines, conditional_check, cost_ratio_study, dc_study, fit_dc_mixture, icdf_study,
    load_shed_experiment, timing_study, LoadShedOutcome,
};
use crate::config::Config;

/// Load-shedding scenarios under the reference and worst-case mixtures, and
/// optionally the DC loop with and without online updates.
pub fn scenario_report(p: &Pipeline, with_dc: bool) -> Result<(ExperimentReport, LoadShedOutcome)> {
    let o = load_shed_experiment(p)?;
    let mut r = ExperimentReport::new("run-scenarios", &p.config);
    r.add_scenarios(&o.reference).add_scenarios(&o.worst_case);
    r.param("gamma", p.gamma)
        .param("zeta", o.worst.zeta)
        .param("base_deficit", o.deficit)
        .param("shed", o.shed)
        .param("plant_nadir", o.plant_nadir)
        .param("reference_cdf_at_zeta", p.reference.cdf(o.worst.zeta))
        .param("worst_cdf_at_zeta", o.worst.worst.cdf(o.worst.zeta))
        .param("worst_distance", o.worst.active_distance);
    if with_dc {
        let (joint, fit) = fit_dc_mixture(p)?;
        r.conditional = Some(conditional_check(p, &joint)?);
        r.dc = dc_study(p, &joint, p.config.dc.count)?;
        r.param("dc_fit_log_likelihood", fit.log_likelihood);
    }
    r.finish();
    Ok((r, o))
}

pub fn timing_report(p: &Pipeline) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new("bench", &p.config);
    r.timing = timing_study(p, &p.config.timing)?;
    r.finish();
    Ok(r)
}

pub fn icdf_report(cfg: &Config) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new("icdf-study", cfg);
    r.add_icdf(&icdf_study(&cfg.icdf)?);
    r.finish();
    Ok(r)
}

/// The three methods on the base event and the DREFC/RO cost ratios.
pub fn baselines_report(p: &Pipeline) -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new("compare-baselines", &p.config);
    r.baselines = compare_baselines(p)?;
    r.cost = cost_ratio_study(p)?;
    r.param("gamma", p.gamma);
    r.finish();
    Ok(r)
}
