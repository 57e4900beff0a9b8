//! AP mode selection and power allocation: the joint SCA design (JAP-OPA),
//! greedy mode selection followed by power optimization (GAP-OPA), and
//! random mode selection followed by power optimization (RAP-OPA).
//!
//! The optimizers work in per-AP power fractions instead of raw power
//! coefficients: `p_mk = eta_c_mk gamma_mk nu_mk` and `sigma_ml = N eta_s_ml`.
//! In those units every power constraint reads `sum <= 1` and the SINR of
//! UE k becomes
//!
//! ```text
//! (sum_m sqrt(a_m p_mk) w_mk)^2 / (sum_m a_m sum_k' R_mkk' p_mk' + sum_m (1 - a_m) B_mk sum_l sigma_ml + 1)
//! ```

mod greedy;
mod jap;
mod power;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::ConicError;
use crate::metrics::{evaluate, DerivedCoefficients, MetricsError};
use crate::model::{AllocationState, NetworkRealization};
use crate::precoding::Grouping;

pub use greedy::{equal_power_value, greedy_ap_selection, GreedyOutcome, GreedyStep};
pub use jap::{jap_opa, JapOptions};
pub use power::{pa_fixed_modes, solve_fixed_modes, PowerOptions, PowerSolution};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "JAP-OPA")]
    Jap,
    #[serde(rename = "GAP-OPA")]
    Gap,
    #[serde(rename = "RAP-OPA")]
    Rap,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Jap => "JAP-OPA",
            Scheme::Gap => "GAP-OPA",
            Scheme::Rap => "RAP-OPA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "JAP-OPA" | "JAP" => Some(Scheme::Jap),
            "GAP-OPA" | "GAP" => Some(Scheme::Gap),
            "RAP-OPA" | "RAP" => Some(Scheme::Rap),
            _ => None,
        }
    }
}

/// Why the SCA loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The objective improved by less than the tolerance.
    Tolerance,
    /// The last subproblem did not improve the exact objective.
    NoAscent,
    /// The subproblem solver failed.
    SolverFailure,
    IterationLimit,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::Tolerance | StopReason::NoAscent)
    }
}

/// Outcome of one allocation scheme on one realization.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub alloc: AllocationState,
    pub min_se: f64,
    pub per_ue_se: DVector<f64>,
    pub sensing_success: bool,
    /// Whether the scheme's optimization problem was feasible.
    pub feasible: bool,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Objective value after each SCA iteration (JAP-OPA only).
    pub objective_trace: Vec<f64>,
    /// Mode vector before rounding (JAP-OPA only).
    pub relaxed_a: Option<DVector<f64>>,
    /// Why the SCA stopped (JAP-OPA only).
    pub stop: Option<StopReason>,
}

impl SchemeResult {
    pub(crate) fn infeasible(m: usize, k: usize, l: usize, iterations: usize, wall_time: Duration) -> Self {
        Self {
            alloc: AllocationState::zeros(m, k, l),
            min_se: 0.0,
            per_ue_se: DVector::zeros(k),
            sensing_success: false,
            feasible: false,
            iterations,
            wall_time,
            objective_trace: Vec::new(),
            relaxed_a: None,
            stop: None,
        }
    }

    /// Evaluates a feasible allocation with the closed forms. The SE is
    /// zeroed unless every MASR constraint holds.
    pub(crate) fn from_allocation(
        real: &NetworkRealization,
        grouping: &Grouping,
        alloc: AllocationState,
        kappa: f64,
        iterations: usize,
        wall_time: Duration,
    ) -> Result<Self, OptimizeError> {
        let report = evaluate(real, grouping, &alloc, kappa)?;
        let ok = report.sensing_ok();
        let per_ue_se = if ok { report.se.clone() } else { DVector::zeros(report.se.len()) };
        Ok(Self {
            alloc,
            min_se: per_ue_se.min(),
            per_ue_se,
            sensing_success: ok,
            feasible: ok,
            iterations,
            wall_time,
            objective_trace: Vec::new(),
            relaxed_a: None,
            stop: None,
        })
    }
}

/// Equal power on a fixed mode vector: `eta_c = 1/(N sum_k gamma_mk)` on
/// communication APs and `eta_s = 1/(N L)` on sensing APs.
pub fn equal_power(real: &NetworkRealization, modes: &[bool]) -> AllocationState {
    let (m_aps, k_ues, l_zones) = (real.num_aps(), real.num_ues(), real.num_zones());
    let nf = real.n as f64;
    let mut alloc = AllocationState::zeros(m_aps, k_ues, l_zones);
    for m in 0..m_aps {
        if modes[m] {
            alloc.a[m] = 1.0;
            let eta = 1.0 / (nf * real.gamma.row(m).sum());
            alloc.eta_c.row_mut(m).fill(eta);
        } else {
            alloc.eta_s.row_mut(m).fill(1.0 / (nf * l_zones as f64));
        }
    }
    alloc
}

/// Random AP selection: `m_s` uniformly chosen sensing APs, the rest
/// communicate, then power is optimized.
pub fn rap_opa<R: Rng + ?Sized>(
    real: &NetworkRealization,
    grouping: &Grouping,
    m_s: usize,
    kappa: f64,
    opts: &PowerOptions,
    rng: &mut R,
) -> Result<SchemeResult, OptimizeError> {
    let m_aps = real.num_aps();
    if m_s > m_aps {
        return Err(OptimizeError::InvalidArgument(format!("M_s = {m_s} exceeds M = {m_aps}")));
    }
    let mut modes = vec![true; m_aps];
    for i in sample(rng, m_aps, m_s).into_iter() {
        modes[i] = false;
    }
    pa_fixed_modes(real, grouping, &modes, kappa, opts)
}

/// Greedy mode selection followed by power optimization.
pub fn gap_opa(
    real: &NetworkRealization,
    grouping: &Grouping,
    kappa: f64,
    e_min: f64,
    opts: &PowerOptions,
) -> Result<SchemeResult, OptimizeError> {
    let start = std::time::Instant::now();
    let g = greedy_ap_selection(real, grouping, kappa, e_min)?;
    let mut res = pa_fixed_modes(real, grouping, &g.modes, kappa, opts)?;
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Realization data in per-AP power-fraction units.
#[derive(Debug, Clone)]
pub(crate) struct ScaledModel {
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub n: f64,
    /// Amplitude weight of `sqrt(a p)` in the useful signal.
    pub w: DMatrix<f64>,
    /// Interference weight per AP, `(k, k')` entry multiplies `p_mk'`.
    pub r: Vec<DMatrix<f64>>,
    /// Sensing interference weight `rho beta_mk`, multiplies `sum_l sigma_ml`.
    pub b: DMatrix<f64>,
    /// Steering cross gains per AP.
    pub x: Vec<DMatrix<f64>>,
    pub gamma: DMatrix<f64>,
    /// `gamma_mk nu_mk`, converts `eta_c` to `p`.
    pub gamma_nu: DMatrix<f64>,
}

impl ScaledModel {
    pub fn new(real: &NetworkRealization, grouping: &Grouping) -> Result<Self, OptimizeError> {
        let c = DerivedCoefficients::new(real, grouping)?;
        let (m, k, l) = (real.num_aps(), real.num_ues(), real.num_zones());
        let rho = real.rho;
        let w = DMatrix::from_fn(m, k, |i, j| {
            (rho * real.gamma[(i, j)] / c.nu[(i, j)]).sqrt() * c.f[(i, j)]
        });
        let r = (0..m)
            .map(|i| DMatrix::from_fn(k, k, |kk, kp| rho * c.interference[i][(kk, kp)] / c.nu[(i, kp)]))
            .collect();
        let b = real.beta.map(|v| rho * v);
        let gamma_nu = real.gamma.component_mul(&c.nu);
        Ok(Self { m, k, l, n: real.n as f64, w, r, b, x: c.cross_gain, gamma: real.gamma.clone(), gamma_nu })
    }

    pub fn to_alloc(&self, a: &[f64], p: &DMatrix<f64>, sigma: &DMatrix<f64>) -> AllocationState {
        AllocationState {
            a: DVector::from_column_slice(a),
            eta_c: DMatrix::from_fn(self.m, self.k, |i, j| p[(i, j)].max(0.0) / self.gamma_nu[(i, j)]),
            eta_s: sigma.map(|s| s.max(0.0) / self.n),
            t: 0.0,
        }
    }

    /// SINR of every UE in scaled units.
    pub fn sinr(&self, a: &[f64], p: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Vec<f64> {
        (0..self.k)
            .map(|k| {
                let mut amp = 0.0;
                let mut den = 1.0;
                for m in 0..self.m {
                    let am = a[m].clamp(0.0, 1.0);
                    amp += (am * p[(m, k)].max(0.0)).sqrt() * self.w[(m, k)];
                    let int: f64 = (0..self.k).map(|kp| self.r[m][(k, kp)] * p[(m, kp)].max(0.0)).sum();
                    let sen: f64 = sigma.row(m).iter().map(|s| s.max(0.0)).sum();
                    den += am * int + (1.0 - am) * self.b[(m, k)] * sen;
                }
                amp * amp / den
            })
            .collect()
    }

    /// `MASR_l / kappa - 1` style margins: `lhs - kappa * rhs` per zone
    /// with the ratio multiplied out, divided by N.
    pub fn masr_margins(&self, a: &[f64], p: &DMatrix<f64>, sigma: &DMatrix<f64>, kappa: f64) -> Vec<f64> {
        let com: f64 = (0..self.m).map(|m| a[m] * p.row(m).sum()).sum();
        (0..self.l)
            .map(|l| {
                let mut des = 0.0;
                let mut dst = 0.0;
                for m in 0..self.m {
                    let w = 1.0 - a[m];
                    des += w * sigma[(m, l)];
                    for lp in (0..self.l).filter(|&lp| lp != l) {
                        dst += w * sigma[(m, lp)] * self.x[m][(l, lp)];
                    }
                }
                des - kappa / self.n * com - kappa / (self.n * self.n) * dst
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::DerivedCoefficients;
    use crate::model::NetworkConfig;
    use crate::precoding::pzf_grouping;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_power_examples() {
        let cfg = NetworkConfig { m: 4, n: 16, ..Default::default() };
        let real = NetworkRealization::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let alloc = equal_power(&real, &[true, false, true, false]);
        assert!((alloc.eta_s[(1, 0)] - 1.0 / 32.0).abs() < 1e-15);
        assert!((alloc.eta_s.row(1).sum() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(alloc.eta_s.row(0).sum(), 0.0);
        let g = pzf_grouping(&real.beta, 85.0, 16);
        let c = DerivedCoefficients::new(&real, &g).unwrap();
        assert!(alloc.power_violation(&real.gamma, &c.nu, 16) <= 1e-12);
    }

    #[test]
    fn scaled_sinr_matches_closed_form() {
        let cfg = NetworkConfig { m: 6, n: 4, ..Default::default() };
        let real = NetworkRealization::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let g = pzf_grouping(&real.beta, 85.0, 4);
        let sm = ScaledModel::new(&real, &g).unwrap();
        let a = [1.0, 0.0, 0.7, 1.0, 0.2, 0.0];
        let p = DMatrix::from_fn(6, 4, |i, j| 0.05 + 0.01 * (i + j) as f64);
        let s = DMatrix::from_fn(6, 2, |i, j| 0.1 + 0.05 * (i * j) as f64);
        let alloc = sm.to_alloc(&a, &p, &s);
        let closed = crate::metrics::sinr_closed_form(&real, &g, &alloc).unwrap();
        for (x, y) in sm.sinr(&a, &p, &s).iter().zip(closed.iter()) {
            assert!((x / y - 1.0).abs() < 1e-12);
        }
    }
}
