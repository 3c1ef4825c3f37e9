use std::fs;

use drefc::config::Config;
use drefc::harness::report::{
    emit_report, load_report, load_scenarios_csv, ExperimentReport, ScenarioRow,
};
use drefc::harness::studies::{ConditionalCheck, CostRow, DcRow, TimingPoint};
use drefc::io::{
    read_dataset, read_json, read_model, read_samples, write_dataset, write_json, write_model,
};
use drefc_core::ambiguity::AmbiguitySet;
use drefc_core::dro::{worst_case_margin, VarSpec, WorstCaseResult};
use drefc_core::gmm::Gmm;
use drefc_core::koopman::{train_edmd, DictionarySpec};
use drefc_core::sfr::{generate_dataset, DatasetSpec, SfrParams};
use tempfile::tempdir;

fn small_dataset() -> drefc_core::sfr::Dataset {
    let spec = DatasetSpec {
        n_traj: 4,
        horizon: 3.0,
        deficit_range: (0.05, 0.1),
        ..DatasetSpec::default()
    };
    generate_dataset(&SfrParams::default(), &spec).unwrap()
}

#[test]
fn config_files_load_by_extension() {
    let dir = tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.control.alpha = 0.1;
    cfg.scenarios.count = 123;
    let toml_path = dir.path().join("c.toml");
    fs::write(&toml_path, cfg.to_toml().unwrap()).unwrap();
    let json_path = dir.path().join("c.json");
    write_json(&json_path, &cfg).unwrap();
    assert_eq!(Config::load(&toml_path).unwrap(), cfg);
    assert_eq!(Config::load(&json_path).unwrap(), cfg);
    assert_eq!(Config::load(&json_path).unwrap().hash(), cfg.hash());
    assert_ne!(cfg.hash(), Config::default().hash());

    let bad = dir.path().join("c.yaml");
    fs::write(&bad, "").unwrap();
    assert!(Config::load(&bad).is_err());
    fs::write(&toml_path, "[control]\nalpha = 0.7\n").unwrap();
    assert!(Config::load(&toml_path).is_err());
}

#[test]
fn dataset_round_trips_exactly() {
    let dir = tempdir().unwrap();
    let ds = small_dataset();
    write_dataset(dir.path(), &ds).unwrap();
    assert!(dir.path().join("manifest.json").exists());
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn model_round_trips_exactly() {
    let dir = tempdir().unwrap();
    let ds = small_dataset();
    let trajs: Vec<_> = ds.trajectories.iter().map(|t| t.decimate(10)).collect();
    let model = train_edmd(&trajs, &DictionarySpec::delays_only(3), 1e-8).unwrap();
    let path = dir.path().join("model.json");
    write_model(&path, &model).unwrap();
    let back = read_model(&path).unwrap();
    assert_eq!(back, model);

    // Matrices are stored row-major.
    let raw: serde_json::Value = read_json(&path).unwrap();
    let a = raw["a"].as_array().unwrap();
    assert_eq!(a.len(), model.lift_dim());
    assert_eq!(a[0][1].as_f64().unwrap(), model.a[(0, 1)]);
}

#[test]
fn mixture_and_worst_case_round_trip() {
    let dir = tempdir().unwrap();
    let g = Gmm::new(vec![0.3, 0.7], vec![-1.0, 0.5], vec![0.2, 0.4]).unwrap();
    let path = dir.path().join("g.json");
    write_json(&path, &g).unwrap();
    let back: Gmm = read_json(&path).unwrap();
    assert_eq!(back, g);

    let w = worst_case_margin(
        &AmbiguitySet::new(g, 0.05).unwrap(),
        &VarSpec::new(0.05).unwrap(),
    )
    .unwrap();
    let path = dir.path().join("w.json");
    write_json(&path, &w).unwrap();
    let back: WorstCaseResult = read_json(&path).unwrap();
    assert_eq!(back, w);
}

#[test]
fn samples_read_from_json_and_csv() {
    let dir = tempdir().unwrap();
    let json = dir.path().join("s.json");
    fs::write(&json, "[1.5, -2, 3e-3]").unwrap();
    assert_eq!(read_samples(&json).unwrap(), vec![1.5, -2.0, 3e-3]);
    let csv = dir.path().join("s.csv");
    fs::write(&csv, "error,other\n1.5,x\n-2,y\n").unwrap();
    assert_eq!(read_samples(&csv).unwrap(), vec![1.5, -2.0]);
    fs::write(&csv, "1\nfoo\n").unwrap();
    assert!(read_samples(&csv).is_err());
}

fn scenario(set: &str, id: usize, realized: f64, f_min: f64, threshold: f64) -> ScenarioRow {
    ScenarioRow {
        set: set.into(),
        id,
        error: realized + 0.01,
        predicted_nadir: -0.01,
        realized_nadir: realized,
        safe: realized >= f_min,
        economic: realized > threshold,
        cost: 1e-4,
        solve_time: 1e-3,
    }
}

fn synthetic_report() -> ExperimentReport {
    let cfg = Config::default();
    let mut r = ExperimentReport::new("synthetic", &cfg);
    let (f_min, thr) = (cfg.control.f_min, cfg.scenarios.economy_threshold);
    for i in 0..100 {
        let realized = if i < 95 { -0.012 } else { -0.02 };
        r.scenarios
            .push(scenario("reference", i, realized, f_min, thr));
        let realized = if i < 94 { -0.012 } else { -0.02 };
        r.scenarios.push(scenario("worst", i, realized, f_min, thr));
    }
    for (id, online, nadir) in [
        (0, false, -0.02),
        (1, false, -0.01),
        (0, true, -0.01),
        (1, true, -0.01),
    ] {
        r.dc.push(DcRow {
            id,
            online,
            deficit: 0.1,
            noise_seed: id as u64,
            nadir,
            safe: nadir >= f_min,
            cost: 0.01,
            failed_windows: 0,
            mean_zeta: 1e-3,
        });
    }
    r.timing = [100, 250, 500, 1000]
        .iter()
        .enumerate()
        .map(|(i, &count)| TimingPoint {
            count,
            drefc: 1e-3 * (1.0 + 0.01 * i as f64),
            so: 1e-3 * count as f64,
        })
        .collect();
    r.cost = [0.95, 0.99]
        .iter()
        .zip([0.3, 0.5])
        .map(|(&confidence, ratio)| CostRow {
            confidence,
            zeta: 0.0,
            ro_zeta: 0.0,
            drefc_cost: ratio,
            ro_cost: 1.0,
            ratio: Some(ratio),
        })
        .collect();
    r.conditional = Some(ConditionalCheck {
        windows: 10,
        conditional: 2.0,
        marginal: 1.0,
    });
    r.finish();
    r
}

#[test]
fn report_indicators_follow_the_tables() {
    let r = synthetic_report();
    let ind = &r.indicators;
    assert_eq!(ind["reference.safety"], 0.95);
    assert_eq!(ind["worst.safety"], 0.94);
    assert_eq!(ind["dc_static.safety"], 0.5);
    assert_eq!(ind["dc_online.safety"], 1.0);
    assert_eq!(ind["timing.so_increasing"], 1.0);
    assert!((ind["timing.drefc_spread"] - 0.015 / 1.015).abs() < 1e-12);
    assert_eq!(ind["cost.max_ratio"], 0.5);
    assert_eq!(ind["conditional.log_density_gain"], 1.0);
    assert!(r.audit());
    assert!(r.violations().is_empty(), "{:?}", r.violations());
}

#[test]
fn report_round_trips_and_audits() {
    let dir = tempdir().unwrap();
    let r = synthetic_report();
    emit_report(&r, dir.path()).unwrap();
    for f in [
        "report.json",
        "scenarios.csv",
        "dc.csv",
        "timing.csv",
        "cost.csv",
        "indicators.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("baselines.csv").exists());
    let back = load_report(dir.path()).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.indicators, back.recompute());
    assert_eq!(load_scenarios_csv(dir.path()).unwrap(), r.scenarios);
    assert!(!back.seeds.is_empty());
    assert_eq!(back.config_hash, Config::default().hash());
}

#[test]
fn audit_catches_tampering() {
    let mut r = synthetic_report();
    r.scenarios[0].safe = !r.scenarios[0].safe;
    assert!(!r.audit());

    let mut r = synthetic_report();
    *r.indicators.get_mut("reference.safety").unwrap() = 0.99;
    assert!(!r.audit());
}

#[test]
fn violations_name_each_broken_threshold() {
    let mut r = synthetic_report();
    for row in r.scenarios.iter_mut().filter(|s| s.set == "worst") {
        row.realized_nadir = -0.012;
        row.safe = true;
    }
    r.dc.retain(|d| d.online || d.nadir > -0.015);
    r.dc.iter_mut().filter(|d| d.online).for_each(|d| {
        d.nadir = -0.02;
        d.safe = false;
    });
    r.timing[3].so = r.timing[2].so;
    r.cost[1].ratio = Some(1.2);
    r.finish();
    assert!(r.audit());
    let v = r.violations();
    assert_eq!(v.len(), 5, "{v:?}");
    for needle in [
        "worst-case safety 1.0000 outside",
        "above reference",
        "online DC safety",
        "strictly increasing",
        "cost ratio reaches",
    ] {
        assert!(v.iter().any(|m| m.contains(needle)), "{needle}: {v:?}");
    }
}
