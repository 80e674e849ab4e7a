use aris_core::experiment::{report_csv, run_experiment, run_replication, Estimator, EvidenceChoice, ExperimentConfig};

fn small(model_id: u8) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(model_id, 40, 3.0);
    cfg.replications = 6;
    cfg.test_size = 500;
    cfg.n_boot = 50;
    cfg.master_seed = 77;
    cfg
}

#[test]
fn single_replication_report_matches_its_records() {
    let mut cfg = small(1);
    cfg.replications = 1;
    let report = run_experiment(&cfg, 1, false, |_, _| {}).unwrap();
    let recs = run_replication(&cfg, 0).unwrap();
    for rec in recs {
        let row = report.row(&rec.estimator).unwrap();
        let res = rec.result.unwrap();
        assert_eq!(row.median_mse, res.mse);
        assert_eq!(row.boot_se, 0.0);
        assert_eq!(row.mean_c, res.c_count as f64);
        assert_eq!(row.cm, if res.correct_model { 1.0 } else { 0.0 });
    }
}

#[test]
fn worker_count_does_not_change_reports() {
    for cfg in [small(0), {
        let mut c = small(3);
        c.evidence_method = EvidenceChoice::Mc;
        c.k_sweep = vec![3.0, 100.0];
        c.mc_draws = 100;
        c.estimators.push(Estimator::Em);
        c.estimators.push(Estimator::ArisPath);
        c
    }] {
        let one = run_experiment(&cfg, 1, false, |_, _| {}).unwrap();
        let four = run_experiment(&cfg, 4, false, |_, _| {}).unwrap();
        assert_eq!(report_csv(&one), report_csv(&four));
        assert_eq!(one.per_replication, four.per_replication);
    }
}

#[test]
fn mc_sweep_adds_one_row_per_k() {
    let mut cfg = small(3);
    cfg.evidence_method = EvidenceChoice::Mc;
    cfg.k_sweep = vec![3.0, 100.0];
    cfg.mc_draws = 50;
    cfg.replications = 2;
    let report = run_experiment(&cfg, 2, false, |_, _| {}).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.estimator.as_str()).collect();
    assert_eq!(names, cfg.row_names());
    assert!(report.row("aris-eb-k3").is_some() && report.row("aris-eb-k100").is_some());
}

#[test]
fn config_text_round_trips() {
    let mut cfg = small(2);
    cfg.eta_grid = vec![-0.25, 0.0, 1.0];
    cfg.path_grid = vec![0.0, 2.0];
    cfg.estimators = vec![Estimator::Ols, Estimator::Em];
    cfg.em_eta = -1.25;
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn seeds_feed_the_provenance() {
    let cfg = small(0);
    let report = run_experiment(&cfg, 2, false, |_, _| {}).unwrap();
    assert_eq!(report.provenance.replication_seeds.len(), cfg.replications);
    assert_eq!(report.provenance.replication_seeds[3], cfg.replication_seed(3));
    assert_eq!(ExperimentConfig::parse(&report.provenance.config).unwrap(), cfg);
}
