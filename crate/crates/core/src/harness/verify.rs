//! Oracle suite: sampled ZF outer-product expectation, ZF orthogonality per
//! draw, and closed-form SINR and beampatterns against Monte-Carlo.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::channel::draw_channels;
use crate::metrics::{beampattern_com, beampattern_sen, mc_beampattern_oracle, mc_sinr_oracle, sinr_closed_form};
use crate::model::{child_seed, AllocationState, NetworkConfig, NetworkRealization};
use crate::optimize::equal_power;
use crate::precoding::{build_precoders, zf_outer_product_oracle, pzf_grouping, Grouping};

/// One measured error against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.measured <= self.tolerance
    }
}

/// Frobenius-relative error of the sampled `E{t t^H}` of a ZF precoder
/// against `gamma / (N (N - s)) I`.
pub fn zf_outer_product_check(n: usize, s: usize, gamma: f64, draws: usize, seed: u64) -> Result<f64, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = zf_outer_product_oracle(n, s, gamma, draws, &mut rng).map_err(crate::metrics::MetricsError::from)?;
    let target = DMatrix::<Complex64>::identity(n, n) * Complex64::from(gamma / (n * (n - s)) as f64);
    Ok((&sample - &target).norm() / target.norm())
}

fn instance_config() -> NetworkConfig {
    NetworkConfig { m: 8, n: 8, k: 4, l: 2, ..NetworkConfig::default() }
}

/// Largest `|ghat_mk'^H t_mk - gamma_mk [k = k']| / gamma_mk` over all APs
/// and strong pairs, across `realizations` drops with one fading draw each.
/// Every UE is strong at every AP (N = 8 > K = 4).
pub fn zf_exactness_check(realizations: usize, seed: u64) -> Result<f64, HarnessError> {
    let cfg = instance_config();
    let grouping = Grouping::all_strong(cfg.m, cfg.k, cfg.n).map_err(crate::metrics::MetricsError::from)?;
    let mut worst: f64 = 0.0;
    for r in 0..realizations as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, r));
        let real = NetworkRealization::generate(&cfg, &mut rng)?;
        let ch = draw_channels(&real, &mut rng);
        let prec = build_precoders(&ch.g_hat, &grouping, &real.gamma).map_err(crate::metrics::MetricsError::from)?;
        for m in 0..cfg.m {
            let inner = ch.g_hat[m].adjoint() * &prec.t[m];
            for &k in &grouping.strong[m] {
                let gam = real.gamma[(m, k)];
                for &kp in &grouping.strong[m] {
                    let target = if k == kp { gam } else { 0.0 };
                    worst = worst.max((inner[(kp, k)] - Complex64::from(target)).norm() / gam);
                }
            }
        }
    }
    Ok(worst)
}

/// Worst relative errors of the closed forms over random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormCheck {
    pub sinr: f64,
    pub beampattern: f64,
}

/// Random drop with M = 8, N = 8, K = 4, L = 2, at least one AP in each mode
/// and per-AP power scaled below the budget.
pub fn random_instance(seed: u64) -> Result<(NetworkRealization, Grouping, AllocationState), HarnessError> {
    let cfg = instance_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = NetworkRealization::generate(&cfg, &mut rng)?;
    let mut modes: Vec<bool> = (0..cfg.m).map(|_| rng.gen::<bool>()).collect();
    modes[0] = true;
    modes[1] = false;
    let mut alloc = equal_power(&real, &modes);
    for m in 0..cfg.m {
        let s: f64 = rng.gen_range(0.3..1.0);
        alloc.eta_c.row_mut(m).scale_mut(s);
        alloc.eta_s.row_mut(m).scale_mut(s);
    }
    let grouping = pzf_grouping(&real.beta, cfg.varrho_percent, cfg.n);
    Ok((real, grouping, alloc))
}

/// Closed-form SINR per UE and the total pattern toward each zone against
/// their Monte-Carlo oracles.
pub fn closed_form_check(instances: usize, draws: usize, seed: u64) -> Result<ClosedFormCheck, HarnessError> {
    let mut out = ClosedFormCheck { sinr: 0.0, beampattern: 0.0 };
    for i in 0..instances as u64 {
        let (real, grouping, alloc) = random_instance(child_seed(seed, i))?;
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed ^ 0x5EED, i));
        let cf = sinr_closed_form(&real, &grouping, &alloc)?;
        let mc = mc_sinr_oracle(&real, &grouping, &alloc, draws, &mut rng)?;
        for (c, m) in cf.iter().zip(mc.iter()) {
            out.sinr = out.sinr.max((c - m).abs() / m.abs());
        }
        let com = beampattern_com(&real, &grouping, &alloc)?;
        for l in 0..real.num_zones() {
            let (des, dst) = beampattern_sen(&real, &alloc, l);
            let theta: Vec<f64> = real.theta.column(l).iter().copied().collect();
            let mc = mc_beampattern_oracle(&real, &grouping, &alloc, &theta, 1.0, draws, &mut rng)?;
            out.beampattern = out.beampattern.max(((com + des + dst) - mc).abs() / mc);
        }
    }
    Ok(out)
}

/// Sizes of the oracle suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub draws: usize,
    pub instances: usize,
    pub zf_realizations: usize,
    pub seed: u64,
}

impl SuiteOptions {
    pub fn full() -> Self {
        Self { draws: 20_000, instances: 5, zf_realizations: 100, seed: 7 }
    }

    /// Reduced draws with tolerances widened to match the larger sampling
    /// error.
    pub fn quick() -> Self {
        Self { draws: 4_000, instances: 1, zf_realizations: 10, seed: 7 }
    }

    fn scale(&self) -> f64 {
        (20_000.0 / self.draws as f64).sqrt().max(1.0)
    }
}

/// Runs every oracle comparison. Sampling tolerances are 2% (ZF outer
/// product) and 3% (closed forms) at 2e4 draws, widened by
/// `sqrt(2e4 / draws)` for fewer draws.
pub fn oracle_suite(opts: &SuiteOptions) -> Result<Vec<OracleCheck>, HarnessError> {
    let scale = opts.scale();
    let mut checks = Vec::new();
    for (n, s) in [(4, 1), (8, 3), (16, 8)] {
        checks.push(OracleCheck {
            name: format!("zf outer product N={n} |S|={s}"),
            measured: zf_outer_product_check(n, s, 1.0, opts.draws, child_seed(opts.seed, n as u64))?,
            tolerance: 0.02 * scale,
        });
    }
    checks.push(OracleCheck {
        name: "zf orthogonality".into(),
        measured: zf_exactness_check(opts.zf_realizations, opts.seed)?,
        tolerance: 1e-9,
    });
    let cf = closed_form_check(opts.instances, opts.draws, opts.seed)?;
    checks.push(OracleCheck { name: "closed-form sinr".into(), measured: cf.sinr, tolerance: 0.03 * scale });
    checks.push(OracleCheck { name: "closed-form beampattern".into(), measured: cf.beampattern, tolerance: 0.03 * scale });
    Ok(checks)
}
