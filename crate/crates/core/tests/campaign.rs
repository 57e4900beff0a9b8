use std::fs;

use cfisac::harness::{
    empirical_cdf, run_campaign, run_realization, simulate_campaign, CampaignSpec, RunParams, SweepAxis,
};
use cfisac::model::NetworkConfig;
use cfisac::optimize::Scheme;

fn small_network() -> NetworkConfig {
    NetworkConfig { m: 8, n: 8, k: 2, l: 1, ..NetworkConfig::default() }
}

fn small_spec(workers: usize, dir: &std::path::Path) -> CampaignSpec {
    CampaignSpec {
        network: small_network(),
        realizations: 3,
        sweep: SweepAxis::KappaDb,
        values: vec![4.0, 10.0],
        seed: Some(42),
        out_dir: dir.to_path_buf(),
        workers: Some(workers),
        ..CampaignSpec::default()
    }
}

#[test]
fn csv_is_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_campaign(&small_spec(1, a.path())).unwrap();
    run_campaign(&small_spec(3, b.path())).unwrap();
    for f in ["summary.csv", "traces.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn aggregates_match_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(2, dir.path());
    let res = run_campaign(&spec).unwrap();

    let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 2 * 3);
    for s in &res.summaries {
        let cell: Vec<&csv::StringRecord> = rows
            .iter()
            .filter(|r| &r[0] == s.scheme.name() && r[1].parse::<f64>().unwrap() == s.sweep_value)
            .collect();
        assert_eq!(cell.len(), s.realizations);
        let succ = cell.iter().filter(|r| &r[4] == "1").count();
        assert_eq!(succ, s.successes);
        let mean: f64 = cell.iter().map(|r| r[5].parse::<f64>().unwrap()).sum::<f64>() / cell.len() as f64;
        assert!((mean - s.mean_min_se).abs() <= 1e-8 * (1.0 + mean.abs()));
        assert!((0.0..=1.0).contains(&s.success_rate));
        for r in &cell {
            // Unsuccessful realizations carry zero SE everywhere.
            if &r[4] == "0" {
                assert!((5..5 + 1 + 2).all(|i| r[i].parse::<f64>().unwrap() == 0.0));
            }
            assert_eq!(r[r.len() - 1].parse::<f64>().unwrap(), 0.0);
        }
    }
    for scheme in [Scheme::Jap, Scheme::Gap, Scheme::Rap] {
        let cdf = res.se_cdf(scheme, 4.0);
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }
}

#[test]
fn single_realization_aggregates_equal_the_row() {
    let spec = CampaignSpec {
        network: small_network(),
        realizations: 1,
        schemes: vec![Scheme::Gap],
        seed: Some(5),
        ..CampaignSpec::default()
    };
    let res = simulate_campaign(&spec).unwrap();
    let row = &res.records[0];
    let s = res.summary(Scheme::Gap, 0.0).unwrap();
    assert_eq!(s.success_rate, if row.sensing_success { 1.0 } else { 0.0 });
    assert_eq!(s.mean_min_se, row.min_se);
    assert_eq!(res.se_cdf(Scheme::Gap, 0.0), empirical_cdf(&row.per_ue_se));
}

#[test]
fn realization_is_reproducible() {
    let cfg = small_network();
    let params = RunParams::for_config(&cfg);
    for scheme in [Scheme::Jap, Scheme::Gap, Scheme::Rap] {
        let a = run_realization(&cfg, scheme, 99, &params).unwrap();
        let b = run_realization(&cfg, scheme, 99, &params).unwrap();
        assert_eq!(RunRecord::from(&a), RunRecord::from(&b));
    }
}

#[test]
fn rap_without_sensing_aps_fails_sensing() {
    let cfg = small_network();
    let params = RunParams { rap_sensing_aps: Some(0), ..RunParams::for_config(&cfg) };
    let r = run_realization(&cfg, Scheme::Rap, 1, &params).unwrap();
    assert!(!r.sensing_success);
    assert!(r.per_ue_se.iter().all(|&v| v == 0.0));
    assert_eq!(r.min_se, 0.0);
}

#[test]
fn default_jap_instance_senses() {
    let cfg = NetworkConfig::default();
    let r = run_realization(&cfg, Scheme::Jap, 2024, &RunParams::for_config(&cfg)).unwrap();
    assert!(r.sensing_success);
    assert!(r.min_se > 0.0);
}

/// Record fields without the wall time.
#[derive(Debug, PartialEq)]
struct RunRecord {
    success: bool,
    min_se: f64,
    se: Vec<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

impl From<&cfisac::harness::RealizationRecord> for RunRecord {
    fn from(r: &cfisac::harness::RealizationRecord) -> Self {
        Self {
            success: r.sensing_success,
            min_se: r.min_se,
            se: r.per_ue_se.clone(),
            iterations: r.iterations,
            trace: r.objective_trace.clone(),
        }
    }
}
