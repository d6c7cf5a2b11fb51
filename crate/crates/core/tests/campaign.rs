use eoc_core::driver::{run_campaign, Algorithm, CampaignConfig, RunRecord};

fn without_time(records: &[RunRecord]) -> Vec<RunRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.time_s = 0.0;
            r
        })
        .collect()
}

#[test]
fn campaigns_are_deterministic() {
    let mut cfg = CampaignConfig::new(2, vec![2, 3, 4]);
    cfg.algorithms = vec![Algorithm::TwoPhase, Algorithm::Ladmm];
    let a = run_campaign(&cfg).unwrap();
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(without_time(&a), without_time(&b));
}

#[test]
fn square_errors_decrease_and_two_phase_meets_tolerance() {
    let cfg = CampaignConfig::new(2, vec![2, 3, 4, 5]);
    let records = run_campaign(&cfg).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.succeeded() && r.eta <= cfg.phase2_tol && r.eta1 < cfg.phase1_tol));
    let e2: Vec<f64> = records.iter().map(|r| r.e2.unwrap()).collect();
    assert!(e2.windows(2).all(|w| w[1] < w[0]), "{e2:?}");
    assert!(records[0].eoc.is_none());
    // pairwise orders oscillate on coarse meshes; the overall slope is stable
    assert!(records[1..].iter().all(|r| r.eoc.unwrap() > 0.0));
    let overall = (e2[0] / e2[3]).ln() / (records[0].h / records[3].h).ln();
    assert!(overall > 1.0, "{overall}");
}

#[test]
fn disk_campaign_measures_against_finest_level() {
    let dir = std::env::temp_dir().join(format!("eoc-core-campaign-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = CampaignConfig::new(1, vec![1, 2, 3, 4]);
    cfg.algorithms = vec![Algorithm::TwoPhase, Algorithm::Ihadmm, Algorithm::Pdas];
    cfg.out_dir = Some(dir.clone());
    let records = run_campaign(&cfg).unwrap();
    assert_eq!(records.len(), 12);
    for r in &records {
        assert!(r.succeeded(), "{r:?}");
        if r.level == 4 {
            assert!(r.e2.is_none() && r.eoc.is_none());
        } else {
            assert!(r.e2.unwrap() > 0.0);
        }
    }
    let two_phase: Vec<f64> = records
        .iter()
        .filter(|r| r.algorithm == Algorithm::TwoPhase && r.level < 4)
        .map(|r| r.e2.unwrap())
        .collect();
    assert!(two_phase.windows(2).all(|w| w[1] < w[0]), "{two_phase:?}");

    let csv = std::fs::read_to_string(dir.join("campaign.csv")).unwrap();
    assert!(csv.starts_with("level,h,dofs,algorithm,iterations,iterations2,E2,EOC,eta1,eta,time_s,status"));
    assert_eq!(csv.lines().count(), 13);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("campaign.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["example"], 1);
    for r in &records {
        assert!(!r.trace_files.is_empty());
        for f in &r.trace_files {
            assert!(dir.join(f).exists(), "{f}");
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_campaigns_are_rejected() {
    assert!(run_campaign(&CampaignConfig::new(2, vec![8])).is_err());
    assert!(run_campaign(&CampaignConfig::new(1, vec![6])).is_err());
    assert!(run_campaign(&CampaignConfig::new(2, vec![])).is_err());
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let mut cfg = CampaignConfig::new(2, vec![3]);
    cfg.algorithms = vec![Algorithm::Classical, Algorithm::TwoPhase];
    cfg.maxit = 2;
    let records = run_campaign(&cfg).unwrap();
    assert_eq!(records.len(), 2);
    assert!(!records[0].succeeded());
    assert!(records[0].status.contains("max iterations"));
}
