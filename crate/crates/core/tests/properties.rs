use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfisac::harness::empirical_cdf;
use cfisac::metrics::{evaluate, masr, se_from_sinr};
use cfisac::model::{db_to_linear, NetworkConfig, NetworkRealization};
use cfisac::optimize::{equal_power, greedy_ap_selection, pa_fixed_modes, rap_opa, solve_fixed_modes, PowerOptions};
use cfisac::precoding::{pzf_grouping, Grouping};

fn drop_of(cfg: &NetworkConfig, seed: u64) -> (NetworkRealization, Grouping) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = NetworkRealization::generate(cfg, &mut rng).unwrap();
    let grouping = pzf_grouping(&real.beta, cfg.varrho_percent, cfg.n);
    (real, grouping)
}

fn tiny() -> NetworkConfig {
    NetworkConfig { m: 4, n: 4, k: 2, l: 1, ..NetworkConfig::default() }
}

fn modes_from_mask(mask: u32, m: usize) -> Vec<bool> {
    (0..m).map(|i| mask >> i & 1 == 1).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn cdf_is_a_monotone_step_function(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let cdf = empirical_cdf(&values);
        prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        for &(x, p) in &cdf {
            let below = values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64;
            prop_assert!((p - below).abs() < 1e-12);
        }
    }

    #[test]
    fn se_is_prelog_times_log_rate(sinr in 0.0f64..1e6, tau in 2usize..400, frac in 0.0f64..1.0) {
        let tau_t = ((tau - 1) as f64 * frac) as usize;
        let se = se_from_sinr(sinr, tau, tau_t);
        let expect = (1.0 - tau_t as f64 / tau as f64) * (1.0 + sinr).log2();
        prop_assert!((se - expect).abs() <= 1e-12 * (1.0 + expect));
        prop_assert!(se_from_sinr(sinr * 2.0 + 1.0, tau, tau_t) >= se);
    }

    #[test]
    fn masr_ignores_a_common_power_scale(seed in 0u64..1000, mask in 1u32..15, scale in 1e-3f64..1.0) {
        let cfg = tiny();
        let (real, grouping) = drop_of(&cfg, seed);
        let modes = modes_from_mask(mask, cfg.m);
        let alloc = equal_power(&real, &modes);
        let mut scaled = alloc.clone();
        scaled.eta_c *= scale;
        scaled.eta_s *= scale;
        let (a, _) = masr(&real, &grouping, &alloc, 1.0).unwrap();
        let (b, _) = masr(&real, &grouping, &scaled, 1.0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{} vs {}", x, y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn greedy_values_strictly_increase(seed in 0u64..1000, kappa_db in 0.0f64..10.0) {
        let cfg = NetworkConfig { m: 6, n: 4, k: 2, l: 1, ..NetworkConfig::default() };
        let (real, grouping) = drop_of(&cfg, seed);
        let out = greedy_ap_selection(&real, &grouping, db_to_linear(kappa_db), 1e-3).unwrap();
        prop_assert!(out.steps.iter().all(|s| s.value > 0.0));
        prop_assert!(out.steps.windows(2).all(|w| w[1].value > w[0].value));
        prop_assert_eq!(out.modes.iter().filter(|&&c| c).count(), out.steps.len());
    }

    #[test]
    fn power_bisection_bracket_is_consistent(seed in 0u64..1000, mask in 1u32..15) {
        let cfg = tiny();
        let (real, grouping) = drop_of(&cfg, seed);
        let modes = modes_from_mask(mask, cfg.m);
        let kappa = cfg.kappa_linear();
        let opts = PowerOptions::default();
        let sol = solve_fixed_modes(&real, &grouping, &modes, kappa, &opts).unwrap();
        prop_assert!(sol.t_lo <= sol.t_hi);
        if sol.feasible {
            // Per-AP budgets hold in scaled units.
            for m in 0..cfg.m {
                let used = if modes[m] {
                    sol.x.row(m).iter().map(|v| v * v).sum::<f64>()
                } else {
                    sol.sigma.row(m).sum()
                };
                prop_assert!(used <= 1.0 + 1e-6, "AP {} uses {}", m, used);
            }
            let res = pa_fixed_modes(&real, &grouping, &modes, kappa, &opts).unwrap();
            prop_assert!(res.sensing_success);
            let rep = evaluate(&real, &grouping, &res.alloc, kappa).unwrap();
            prop_assert!(rep.sensing_ok());
            prop_assert!(rep.sinr.min() >= sol.t_lo * (1.0 - 1e-6));
        }
    }

    #[test]
    fn stricter_sensing_never_helps(seed in 0u64..1000, mask in 1u32..15, k_db in 0.0f64..12.0) {
        let cfg = tiny();
        let (real, grouping) = drop_of(&cfg, seed);
        let modes = modes_from_mask(mask, cfg.m);
        let opts = PowerOptions::default();
        let lo = solve_fixed_modes(&real, &grouping, &modes, db_to_linear(k_db), &opts).unwrap();
        let hi = solve_fixed_modes(&real, &grouping, &modes, db_to_linear(k_db + 3.0), &opts).unwrap();
        if hi.feasible {
            prop_assert!(lo.feasible);
            // Both brackets come from a bisection with relative tolerance.
            prop_assert!(hi.t_lo <= lo.t_hi * (1.0 + 2.0 * opts.tol));
        }
    }
}

#[test]
fn rap_with_every_ap_sensing_has_zero_se() {
    let cfg = tiny();
    let (real, grouping) = drop_of(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res = rap_opa(&real, &grouping, cfg.m, cfg.kappa_linear(), &PowerOptions::default(), &mut rng).unwrap();
    assert!(res.per_ue_se.iter().all(|&v| v == 0.0));
    assert_eq!(res.min_se, 0.0);
}

#[test]
fn rap_without_sensing_aps_is_infeasible() {
    let cfg = tiny();
    let (real, grouping) = drop_of(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res = rap_opa(&real, &grouping, 0, cfg.kappa_linear(), &PowerOptions::default(), &mut rng).unwrap();
    assert!(!res.sensing_success);
    assert!(!res.feasible);
}

#[test]
fn rap_with_unreachable_kappa_is_infeasible() {
    // With two zones the cross-zone leakage of the sensing beams caps MASR
    // regardless of communication power.
    let cfg = NetworkConfig { l: 2, ..tiny() };
    let (real, grouping) = drop_of(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res = rap_opa(&real, &grouping, 2, db_to_linear(200.0), &PowerOptions::default(), &mut rng).unwrap();
    assert!(!res.sensing_success);
    assert_eq!(res.min_se, 0.0);
}

#[test]
fn single_zone_masr_grows_as_communication_power_vanishes() {
    let cfg = tiny();
    let (real, grouping) = drop_of(&cfg, 3);
    let modes = [true, false, true, false];
    let mut alloc = equal_power(&real, &modes);
    let (base, _) = masr(&real, &grouping, &alloc, 1.0).unwrap();
    alloc.eta_c *= 1e-6;
    let (quiet, _) = masr(&real, &grouping, &alloc, 1.0).unwrap();
    assert!((quiet[0] / base[0] - 1e6).abs() < 1e-3 * 1e6);
}

#[test]
fn rap_rejects_too_many_sensing_aps() {
    let cfg = tiny();
    let (real, grouping) = drop_of(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(rap_opa(&real, &grouping, cfg.m + 1, 1.0, &PowerOptions::default(), &mut rng).is_err());
}
