use super::*;

fn sweep_config(n: usize) -> ExperimentConfig {
    parse_json(&format!(r#"{{"Nt": 2, "eta": [1.0], "E": [0.0, 0.3], "num_channels": {n}, "base_seed": 7}}"#)).unwrap()
}

fn csv_of(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_sweep_csv(rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn splitmix_matches_reference_output() {
    assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    assert_ne!(instance_seed(5, 0), instance_seed(5, 1));
}

#[test]
fn sweep_is_reproducible_byte_for_byte() {
    let cfg = sweep_config(1);
    let a = csv_of(&run_sweep(&cfg).unwrap());
    let b = csv_of(&run_sweep(&cfg).unwrap());
    assert_eq!(a, b);
    assert!(a.starts_with("scheme,eta,E1,E2,feas_rate,avg_rate,avg_rate_feasible,iters_mean,seconds\n"));
}

#[test]
fn sweep_rows_count_every_instance() {
    let cfg = sweep_config(4);
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * Scheme::ALL.len());
    for r in &rows {
        assert_eq!(r.feasible + r.infeasible + r.failed, 4);
        assert_eq!(r.feas_rate, r.feasible as f64 / 4.0);
        assert_eq!(r.seconds, 0.0);
        if r.energy == [0.0, 0.0] {
            assert_eq!(r.feas_rate, 1.0, "{:?}", r.scheme);
        }
    }
    let at = |s: Scheme| rows.iter().find(|r| r.scheme == s && r.energy[0] > 0.0).unwrap().feas_rate;
    assert_eq!(at(Scheme::Ideal), at(Scheme::Tdms));
    assert_eq!(at(Scheme::Ideal), at(Scheme::Ps));
}

#[test]
fn sweep_average_counts_infeasible_as_zero() {
    let mut cfg = sweep_config(3);
    cfg.energy = vec![EnergyPoint::Symmetric(1e3)];
    cfg.schemes = vec![Scheme::Ideal];
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows[0].avg_rate, 0.0);
    assert_eq!(rows[0].avg_rate_feasible, None);
    assert!(csv_of(&rows).contains("Ideal,1.0,1000.0,1000.0,0.0,0.0,,0.0,0.0"));
}

#[test]
fn parse_errors_name_the_field() {
    let e = parse_json::<ExperimentConfig>(r#"{"eta": "high", "E": [1]}"#).unwrap_err();
    assert!(e.to_string().contains("eta"), "{e}");
    let e = parse_json::<ExperimentConfig>(r#"{"eta": [1], "E": [1], "num_channel": 3}"#).unwrap_err();
    assert!(e.to_string().contains("num_channel"), "{e}");
    let e = parse_json::<ExperimentConfig>(r#"{"eta": [1], "E": [1], "schemes": ["FDMA"]}"#).unwrap_err();
    assert!(e.to_string().contains("schemes"), "{e}");
    assert!(e.is_config());
}

#[test]
fn validation_rejects_bad_grids() {
    let mut cfg = sweep_config(1);
    cfg.eta.clear();
    assert!(matches!(run_sweep(&cfg), Err(HarnessError::Config { field, .. }) if field == "eta"));
    let mut cfg = sweep_config(1);
    cfg.num_channels = 0;
    assert!(matches!(cfg.validate(), Err(HarnessError::Config { field, .. }) if field == "num_channels"));
    let mut cfg = sweep_config(1);
    cfg.energy = vec![EnergyPoint::PerUser(vec![0.1, 0.2, 0.3])];
    assert!(matches!(cfg.validate(), Err(HarnessError::Config { field, .. }) if field == "E[0]"));
    let mut cfg = sweep_config(1);
    cfg.num_users = 3;
    assert!(matches!(cfg.validate(), Err(HarnessError::Config { field, .. }) if field == "schemes"));
}

#[test]
fn per_scheme_options_override_defaults() {
    let cfg: ExperimentConfig =
        parse_json(r#"{"eta": [1], "E": [[0.1, 0.2]], "scheme_options": {"PS": {"multistarts": 1}}}"#).unwrap();
    assert_eq!(cfg.options_for(Scheme::Ps).multistarts, 1);
    assert_eq!(cfg.options_for(Scheme::Ideal).multistarts, 5);
    assert_eq!(cfg.energy[0].targets(2), vec![0.1, 0.2]);
}

fn region(sweep: &str) -> RegionConfig {
    parse_json(&format!(r#"{{"Nt": 2, "seed": 3, "sweep": {sweep}}}"#)).unwrap()
}

#[test]
fn energy_region_is_nonincreasing() {
    let cfg = region(r#"{"mode": "energy", "E": [0.0, 0.1, 0.05, 0.2, 0.3]}"#);
    let rows = rate_energy_region(&cfg).unwrap();
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.param.total_cmp(&b.param));
    assert!(sorted.windows(2).all(|w| w[1].sum <= w[0].sum + 1e-12), "{sorted:?}");
    assert!(rows.iter().all(|r| r.sum <= rows[0].sum));
    let mut buf = Vec::new();
    write_region_csv(&cfg, &rows, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("E,R1,R2,sum,feasible,method\n0,"));
}

#[test]
fn weight_region_corners_favor_one_user() {
    let cfg = region(r#"{"mode": "weights", "points": 5, "E": [0.05, 0.05]}"#);
    let rows = rate_energy_region(&cfg).unwrap();
    assert_eq!(rows.len(), 5);
    let (first, last) = (&rows[0], &rows[4]);
    assert!(rows.iter().all(|r| r.r1 <= first.r1 + 1e-3), "{rows:?}");
    assert!(rows.iter().all(|r| r.r2 <= last.r2 + 1e-3), "{rows:?}");
}

#[test]
fn region_config_is_validated() {
    let cfg = region(r#"{"mode": "weights", "points": 1, "E": [0.0, 0.0]}"#);
    assert!(matches!(rate_energy_region(&cfg), Err(HarnessError::Config { field, .. }) if field == "sweep.points"));
    let e = parse_json::<RegionConfig>(r#"{"sweep": {"mode": "spiral"}}"#).unwrap_err();
    assert!(e.to_string().contains("sweep"), "{e}");
}

#[test]
fn solve_reports_infeasibility_as_a_result() {
    let cfg: SolveConfig =
        parse_json(r#"{"generate": {"K": 2, "Nt": 2, "eta": 1.0, "snr_db": 10.0, "seed": 1}, "E": [100.0, 100.0]}"#).unwrap();
    let cs = cfg.channel_set().unwrap();
    let out = solve_all(&cs, &cfg.schemes, &cfg.options).unwrap();
    assert_eq!(out.len(), Scheme::ALL.len());
    for o in out {
        assert!(!o.evaluation.feasible);
        assert!(o.error.is_some());
    }
}

#[test]
fn solve_config_needs_one_source() {
    let cfg: SolveConfig = parse_json("{}").unwrap();
    assert!(matches!(cfg.channel_set(), Err(HarnessError::Config { field, .. }) if field == "instance"));
}

#[test]
fn small_verification_suite_passes() {
    let cfg = VerifyConfig { instances: 2, oracle_points: 32, probe_samples: 50, ..VerifyConfig::default() };
    let report = verify(&cfg).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{c}");
        assert!(c.cases > 0, "{c}");
    }
}
