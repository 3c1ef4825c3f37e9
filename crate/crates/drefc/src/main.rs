use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drefc::config::Config;
use drefc::harness::experiments::{baselines_report, icdf_report, scenario_report, timing_report};
use drefc::harness::pipeline::{decimated, Pipeline};
use drefc::harness::report::{emit_report, ExperimentReport};
use drefc::harness::studies::{dc_run, fit_dc_mixture, single_shed};
use drefc::io::{
    read_dataset, read_json, read_model, read_samples, write_csv, write_dataset, write_json,
    write_model,
};
use drefc_core::ambiguity::AmbiguitySet;
use drefc_core::dro::{worst_case_margin, VarSpec};
use drefc_core::gmm::{fit_em, EmConfig, Gmm};
use drefc_core::koopman::{train_edmd, DictionarySpec};
use drefc_core::rng::derive_seed;
use drefc_core::sfr::generate_dataset;
use log::info;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "drefc",
    version,
    about = "Distributionally robust emergency frequency control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained model to use instead of training one from the configuration.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 if any acceptance threshold is violated.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Loadshed,
    Dc,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training (or validation) dataset.
    Sim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the validation events instead of the training events.
        #[arg(long)]
        validation: bool,
    },
    /// Train the lifted predictor on a simulated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Dictionary as JSON or TOML; the configured one when omitted.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Stride, ridge and measurement averaging come from here.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a scalar mixture to samples (JSON array or CSV column).
    FitGmm {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
    },
    /// Worst-case VaR margin over the ball around a mixture.
    WorstCase {
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        k_budget: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One controlled event.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        deficit: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// DC mode: use the static reference instead of online updates.
        #[arg(long)]
        offline: bool,
    },
    /// Load-shedding scenarios and the online/static DC comparison.
    RunScenarios {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_dc: bool,
    },
    /// Solve time against sample count.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Exact against approximate mixture quantiles on random mixtures.
    IcdfStudy {
        #[command(flatten)]
        common: Common,
    },
    /// DREFC against the scenario and robust baselines.
    CompareBaselines {
        #[command(flatten)]
        common: Common,
    },
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    let cfg = Config::load_or_default(c.config.as_deref())?;
    match &c.model {
        Some(m) => Pipeline::with_model(&cfg, read_model(m)?),
        None => Pipeline::build(&cfg),
    }
}

fn out_dir(c: &Common, name: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| Path::new("out").join(name))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Emits the report, prints its indicators and returns whether `--check` failed.
fn finish(report: &ExperimentReport, c: &Common, name: &str) -> Result<bool> {
    let dir = out_dir(c, name);
    emit_report(report, &dir)?;
    for (k, v) in &report.indicators {
        println!("{k} = {v:.6}");
    }
    println!("report written to {}", dir.display());
    if !c.check {
        return Ok(false);
    }
    let bad = report.violations();
    for v in &bad {
        eprintln!("threshold violated: {v}");
    }
    Ok(!bad.is_empty())
}

fn read_dict(path: &Path) -> Result<DictionarySpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let dict: DictionarySpec = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)?,
        Some("json") => serde_json::from_str(&text)?,
        _ => bail!("dictionary must be .toml or .json: {}", path.display()),
    };
    dict.validate()?;
    Ok(dict)
}

#[derive(Serialize)]
struct TraceRow {
    time: f64,
    measured: Option<f64>,
    true_freq: f64,
    control: f64,
}

#[derive(Serialize)]
struct ShedRun {
    config_hash: String,
    deficit: f64,
    noise_seed: u64,
    zeta: f64,
    shed: f64,
    cost: f64,
    predicted: Vec<f64>,
    predicted_nadir: f64,
    plant_nadir: f64,
}

fn run(
    mode: Mode,
    c: &Common,
    deficit: Option<f64>,
    seed: Option<u64>,
    offline: bool,
) -> Result<bool> {
    let p = pipeline(c)?;
    let cfg = &p.config;
    let dir = out_dir(c, "run");
    let dt = cfg.sample_dt();
    let efc = cfg.efc_sample();
    let nadir = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    match mode {
        Mode::Loadshed => {
            let deficit = deficit.unwrap_or(cfg.scenarios.base_deficit);
            let noise_seed = seed.unwrap_or_else(|| derive_seed(cfg.scenarios.seed, 0));
            let (zeta, sol, freq) = single_shed(&p, deficit, noise_seed)?;
            let plant_nadir = nadir(&freq[1..]);
            let rows: Vec<TraceRow> = freq
                .iter()
                .enumerate()
                .map(|(i, &f)| TraceRow {
                    time: i as f64 * dt,
                    measured: None,
                    true_freq: f,
                    control: if i > efc { sol.u[0] } else { 0.0 },
                })
                .collect();
            write_csv(&dir.join("trajectory.csv"), &rows)?;
            let run = ShedRun {
                config_hash: cfg.hash(),
                deficit,
                noise_seed,
                zeta,
                shed: sol.u[0],
                cost: sol.cost,
                predicted_nadir: nadir(&sol.predicted),
                predicted: sol.predicted,
                plant_nadir,
            };
            write_json(&dir.join("run.json"), &run)?;
            println!(
                "deficit {deficit} margin {zeta:.6} shed {:.6} predicted nadir {:.6} plant nadir {plant_nadir:.6}",
                run.shed, run.predicted_nadir
            );
            Ok(c.check && plant_nadir < cfg.control.f_min)
        }
        Mode::Dc => {
            let (joint, _) = fit_dc_mixture(&p)?;
            let i = seed.unwrap_or(0) as usize;
            let mut cfg2 = cfg.clone();
            if let Some(d) = deficit {
                cfg2.dc.deficit_range = (d, d);
            }
            let p2 = Pipeline {
                config: cfg2,
                ..p.clone()
            };
            let (row, run) = dc_run(&p2, &joint, i, !offline)?;
            let rows: Vec<TraceRow> = (0..run.measured.len())
                .map(|k| TraceRow {
                    time: k as f64 * dt,
                    measured: Some(run.measured[k]),
                    true_freq: run.true_freq[k],
                    control: run.controls.get(k).copied().unwrap_or(f64::NAN),
                })
                .collect();
            write_csv(&dir.join("trajectory.csv"), &rows)?;
            write_json(
                &dir.join("run.json"),
                &serde_json::json!({ "config_hash": cfg.hash(), "summary": row, "run": run }),
            )?;
            println!(
                "deficit {:.4} nadir {:.6} safe {} cost {:.3e} failed windows {}",
                row.deficit, row.nadir, row.safe, row.cost, row.failed_windows
            );
            Ok(c.check && !row.safe)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Command::Sim {
            config,
            out,
            validation,
        } => {
            let cfg = Config::load_or_default(config.as_deref())?;
            let spec = if validation {
                &cfg.errors.validation
            } else {
                &cfg.training.dataset
            };
            let ds = generate_dataset(&cfg.plant, spec)?;
            write_dataset(&out, &ds)?;
            info!(
                "wrote {} trajectories to {}",
                ds.trajectories.len(),
                out.display()
            );
            Ok(false)
        }
        Command::Train {
            data,
            dict,
            out,
            config,
        } => {
            let cfg = Config::load_or_default(config.as_deref())?;
            let ds = read_dataset(&data)?;
            let dict = match dict {
                Some(d) => read_dict(&d)?,
                None => cfg.training.dictionary.clone(),
            };
            let mut cfg = cfg;
            cfg.plant = ds.params.clone();
            let model = train_edmd(
                &decimated(&ds.trajectories, &cfg),
                &dict,
                cfg.training.ridge,
            )?;
            write_model(&out, &model)?;
            println!(
                "lift dimension {} training residual {:.3e}",
                model.lift_dim(),
                model.training_residual
            );
            Ok(false)
        }
        Command::FitGmm {
            samples,
            k,
            out,
            seed,
            restarts,
        } => {
            let xs = read_samples(&samples)?;
            let (g, report) = fit_em(
                &xs,
                &EmConfig {
                    seed,
                    restarts,
                    ..EmConfig::with_k(k)
                },
            )?;
            write_json(&out, &g)?;
            println!(
                "{} samples, log-likelihood {:.6}, {} iterations, converged {}",
                xs.len(),
                report.log_likelihood,
                report.iterations,
                report.converged
            );
            Ok(false)
        }
        Command::WorstCase {
            gmm,
            gamma,
            alpha,
            k_budget,
            out,
        } => {
            let g: Gmm = read_json(&gmm)?;
            let k = k_budget.unwrap_or(g.k());
            let set = AmbiguitySet::with_budget(g, gamma, k)?;
            let w = worst_case_margin(&set, &VarSpec::new(alpha)?)?;
            match out {
                Some(o) => write_json(&o, &w)?,
                None => print_json(&w)?,
            }
            Ok(false)
        }
        Command::Run {
            mode,
            common,
            deficit,
            seed,
            offline,
        } => run(mode, &common, deficit, seed, offline),
        Command::RunScenarios { common, no_dc } => {
            let p = pipeline(&common)?;
            let (r, _) = scenario_report(&p, !no_dc)?;
            finish(&r, &common, "scenarios")
        }
        Command::Bench { common } => {
            let p = pipeline(&common)?;
            finish(&timing_report(&p)?, &common, "bench")
        }
        Command::IcdfStudy { common } => {
            let cfg = Config::load_or_default(common.config.as_deref())?;
            finish(&icdf_report(&cfg)?, &common, "icdf")
        }
        Command::CompareBaselines { common } => {
            let p = pipeline(&common)?;
            finish(&baselines_report(&p)?, &common, "baselines")
        }
    }
}
