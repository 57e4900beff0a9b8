//! Closed-form SINR/SE, beampattern and MASR expressions, and the
//! Monte-Carlo oracles that check them against the signal model.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{array_response, draw_channels};
use crate::model::{child_seed, AllocationState, NetworkRealization};
use crate::precoding::{build_precoders, Grouping, PrecodingError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AP {ap}: strong set of size {size} is not below N = {n}")]
    StrongSetTooLarge { ap: usize, size: usize, n: usize },
    #[error("allocation shape does not match the realization")]
    ShapeMismatch,
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
}

/// Per-(AP, UE) and per-(AP, zone) constants shared by the closed forms and
/// the optimizers.
#[derive(Debug, Clone)]
pub struct DerivedCoefficients {
    /// Precoder power normalization, `E||t||^2 / gamma`.
    pub nu: DMatrix<f64>,
    /// Self-interference coefficient of each UE's own group.
    pub varrho_c: DMatrix<f64>,
    /// Coherent gain factor, 1 for strong and N for weak.
    pub f: DMatrix<f64>,
    /// `|a(theta_ml)^H a(theta_ml')|^2`, one L x L matrix per AP.
    pub cross_gain: Vec<DMatrix<f64>>,
    /// `E|g_mk^H t_mk'|^2 / gamma_mk'`, one K x K matrix per AP indexed
    /// `(k, k')`; the diagonal holds the beamforming-uncertainty term.
    pub interference: Vec<DMatrix<f64>>,
}

impl DerivedCoefficients {
    pub fn new(real: &NetworkRealization, grouping: &Grouping) -> Result<Self, MetricsError> {
        let (m_aps, k_ues, l_zones, n) = (real.num_aps(), real.num_ues(), real.num_zones(), real.n);
        if grouping.num_aps() != m_aps || grouping.delta_s.ncols() != k_ues {
            return Err(MetricsError::ShapeMismatch);
        }
        let nf = n as f64;
        let mut nu = DMatrix::zeros(m_aps, k_ues);
        let mut varrho_c = DMatrix::zeros(m_aps, k_ues);
        let mut f = DMatrix::zeros(m_aps, k_ues);
        let mut interference = Vec::with_capacity(m_aps);
        for m in 0..m_aps {
            let s = grouping.strong_size(m);
            if s > 0 && s >= n {
                return Err(MetricsError::StrongSetTooLarge { ap: m, size: s, n });
            }
            let zf_norm = 1.0 / (nf - s as f64);
            let mut c = DMatrix::zeros(k_ues, k_ues);
            for k in 0..k_ues {
                let (b, g) = (real.beta[(m, k)], real.gamma[(m, k)]);
                let strong = grouping.is_strong(m, k);
                nu[(m, k)] = if strong { zf_norm } else { nf };
                f[(m, k)] = if strong { 1.0 } else { nf };
                varrho_c[(m, k)] = if strong { (b - g) * zf_norm } else { nf * b };
                for kp in 0..k_ues {
                    c[(k, kp)] = match (strong, grouping.is_strong(m, kp)) {
                        // ZF toward k' is orthogonal to the estimate of a strong k.
                        (true, true) => (b - g) * zf_norm,
                        (false, true) => b * zf_norm,
                        (_, false) => nf * b,
                    };
                }
            }
            interference.push(c);
        }
        let cross_gain = (0..m_aps)
            .map(|m| {
                let a: Vec<_> = (0..l_zones).map(|l| array_response(real.theta[(m, l)], n)).collect();
                DMatrix::from_fn(l_zones, l_zones, |l, lp| {
                    if l == lp {
                        nf * nf
                    } else {
                        a[l].dotc(&a[lp]).norm_sqr()
                    }
                })
            })
            .collect();
        Ok(Self { nu, varrho_c, f, cross_gain, interference })
    }

    /// Closed-form SINR of every UE.
    pub fn sinr(&self, real: &NetworkRealization, alloc: &AllocationState) -> DVector<f64> {
        let (m_aps, k_ues) = real.beta.shape();
        let nf = real.n as f64;
        let rho = real.rho;
        DVector::from_fn(k_ues, |k, _| {
            let mut amp = 0.0;
            let mut den = 0.0;
            for m in 0..m_aps {
                let a = alloc.a[m].clamp(0.0, 1.0);
                amp += (a * alloc.eta_c[(m, k)].max(0.0)).sqrt() * real.gamma[(m, k)] * self.f[(m, k)];
                let c = &self.interference[m];
                let com: f64 = (0..k_ues)
                    .map(|kp| alloc.eta_c[(m, kp)].max(0.0) * real.gamma[(m, kp)] * c[(k, kp)])
                    .sum();
                let sen = alloc.eta_s.row(m).iter().map(|e| e.max(0.0)).sum::<f64>();
                den += a * com + (1.0 - a) * sen * nf * real.beta[(m, k)];
            }
            rho * amp * amp / (rho * den + 1.0)
        })
    }

    /// SINR with every interferer weighted by the victim's own group
    /// coefficient `varrho_c`. Agrees with [`Self::sinr`] when all APs treat
    /// all UEs alike (all strong or all weak) and differs for mixed groups.
    pub fn sinr_victim_group(&self, real: &NetworkRealization, alloc: &AllocationState) -> DVector<f64> {
        let (m_aps, k_ues) = real.beta.shape();
        let nf = real.n as f64;
        let rho = real.rho;
        DVector::from_fn(k_ues, |k, _| {
            let mut amp = 0.0;
            let mut den = 0.0;
            for m in 0..m_aps {
                let a = alloc.a[m];
                amp += (a * alloc.eta_c[(m, k)]).sqrt() * real.gamma[(m, k)] * self.f[(m, k)];
                let pw: f64 = (0..k_ues).map(|kp| alloc.eta_c[(m, kp)] * real.gamma[(m, kp)]).sum();
                den += a * pw * self.varrho_c[(m, k)]
                    + (1.0 - a) * alloc.eta_s.row(m).sum() * nf * real.beta[(m, k)];
            }
            rho * amp * amp / (rho * den + 1.0)
        })
    }

    /// Average communication power pattern (angle independent).
    pub fn beampattern_com(&self, real: &NetworkRealization, alloc: &AllocationState) -> f64 {
        real.rho * self.com_power(real, alloc)
    }

    /// `sum_m sum_k a_m eta_mk gamma_mk nu_mk`, the communication pattern without rho.
    pub fn com_power(&self, real: &NetworkRealization, alloc: &AllocationState) -> f64 {
        let (m_aps, k_ues) = real.beta.shape();
        (0..m_aps)
            .map(|m| {
                alloc.a[m]
                    * (0..k_ues)
                        .map(|k| alloc.eta_c[(m, k)] * real.gamma[(m, k)] * self.nu[(m, k)])
                        .sum::<f64>()
            })
            .sum()
    }

    /// Desired and distortion sensing patterns toward zone `l`.
    pub fn beampattern_sen(&self, real: &NetworkRealization, alloc: &AllocationState, l: usize) -> (f64, f64) {
        let nf = real.n as f64;
        let mut desired = 0.0;
        let mut distortion = 0.0;
        for m in 0..real.num_aps() {
            let w = 1.0 - alloc.a[m];
            desired += w * alloc.eta_s[(m, l)];
            for lp in (0..real.num_zones()).filter(|&lp| lp != l) {
                distortion += w * alloc.eta_s[(m, lp)] * self.cross_gain[m][(l, lp)];
            }
        }
        (real.rho * nf * nf * desired, real.rho * distortion)
    }

    /// MASR per zone and the flags `MASR_l >= kappa`.
    pub fn masr(&self, real: &NetworkRealization, alloc: &AllocationState, kappa: f64) -> (DVector<f64>, Vec<bool>) {
        let com = self.beampattern_com(real, alloc);
        let values = DVector::from_fn(real.num_zones(), |l, _| {
            let (des, dst) = self.beampattern_sen(real, alloc, l);
            masr_ratio(des, com + dst)
        });
        let flags = values.iter().map(|&v| v >= kappa).collect();
        (values, flags)
    }
}

fn masr_ratio(desired: f64, denominator: f64) -> f64 {
    if desired <= 0.0 {
        0.0
    } else if denominator <= 0.0 {
        f64::INFINITY
    } else {
        desired / denominator
    }
}

/// SINR, SE and MASR for one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeReport {
    pub sinr: DVector<f64>,
    pub se: DVector<f64>,
    pub masr: DVector<f64>,
    pub masr_satisfied: Vec<bool>,
}

impl SeReport {
    pub fn min_se(&self) -> f64 {
        self.se.min()
    }

    pub fn sensing_ok(&self) -> bool {
        self.masr_satisfied.iter().all(|&f| f)
    }
}

pub fn sinr_closed_form(
    real: &NetworkRealization,
    grouping: &Grouping,
    alloc: &AllocationState,
) -> Result<DVector<f64>, MetricsError> {
    check_shapes(real, alloc)?;
    Ok(DerivedCoefficients::new(real, grouping)?.sinr(real, alloc))
}

/// `(1 - tau_t/tau) log2(1 + sinr)`.
pub fn se_from_sinr(sinr: f64, tau: usize, tau_t: usize) -> f64 {
    let pre = 1.0 - tau_t as f64 / tau as f64;
    if pre <= 0.0 {
        return 0.0;
    }
    pre * (1.0 + sinr.max(0.0)).log2()
}

pub fn beampattern_com(real: &NetworkRealization, grouping: &Grouping, alloc: &AllocationState) -> Result<f64, MetricsError> {
    check_shapes(real, alloc)?;
    Ok(DerivedCoefficients::new(real, grouping)?.beampattern_com(real, alloc))
}

pub fn beampattern_sen(real: &NetworkRealization, alloc: &AllocationState, l: usize) -> (f64, f64) {
    let nf = real.n as f64;
    let a: Vec<Vec<_>> = (0..real.num_aps())
        .map(|m| (0..real.num_zones()).map(|lz| array_response(real.theta[(m, lz)], real.n)).collect())
        .collect();
    let mut desired = 0.0;
    let mut distortion = 0.0;
    for m in 0..real.num_aps() {
        let w = 1.0 - alloc.a[m];
        desired += w * alloc.eta_s[(m, l)];
        for lp in (0..real.num_zones()).filter(|&lp| lp != l) {
            distortion += w * alloc.eta_s[(m, lp)] * a[m][l].dotc(&a[m][lp]).norm_sqr();
        }
    }
    (real.rho * nf * nf * desired, real.rho * distortion)
}

pub fn masr(
    real: &NetworkRealization,
    grouping: &Grouping,
    alloc: &AllocationState,
    kappa_linear: f64,
) -> Result<(DVector<f64>, Vec<bool>), MetricsError> {
    check_shapes(real, alloc)?;
    Ok(DerivedCoefficients::new(real, grouping)?.masr(real, alloc, kappa_linear))
}

pub fn evaluate(
    real: &NetworkRealization,
    grouping: &Grouping,
    alloc: &AllocationState,
    kappa_linear: f64,
) -> Result<SeReport, MetricsError> {
    check_shapes(real, alloc)?;
    let coeffs = DerivedCoefficients::new(real, grouping)?;
    let sinr = coeffs.sinr(real, alloc);
    let se = sinr.map(|s| se_from_sinr(s, real.tau, real.tau_t));
    let (masr, masr_satisfied) = coeffs.masr(real, alloc, kappa_linear);
    Ok(SeReport { sinr, se, masr, masr_satisfied })
}

fn check_shapes(real: &NetworkRealization, alloc: &AllocationState) -> Result<(), MetricsError> {
    let (m, k, l) = (real.num_aps(), real.num_ues(), real.num_zones());
    if alloc.a.len() != m || alloc.eta_c.shape() != (m, k) || alloc.eta_s.shape() != (m, l) {
        return Err(MetricsError::ShapeMismatch);
    }
    Ok(())
}

const DRAWS_PER_CHUNK: usize = 256;

/// Splits `num_draws` into fixed chunks with their own child RNG, runs them
/// in parallel and returns the per-chunk results in chunk order.
fn chunked<T, F>(num_draws: usize, base: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = num_draws.div_ceil(DRAWS_PER_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(base, c as u64));
            let n = DRAWS_PER_CHUNK.min(num_draws - c * DRAWS_PER_CHUNK);
            f(&mut rng, n)
        })
        .collect()
}

/// Monte-Carlo SINR from the received-signal decomposition: the mean
/// effective gain is the useful signal, its fluctuation, the inter-user
/// terms and the sensing interference are treated as noise.
pub fn mc_sinr_oracle<R: Rng + ?Sized>(
    real: &NetworkRealization,
    grouping: &Grouping,
    alloc: &AllocationState,
    num_draws: usize,
    rng: &mut R,
) -> Result<DVector<f64>, MetricsError> {
    check_shapes(real, alloc)?;
    let (m_aps, k_ues, l_zones, n) = (real.num_aps(), real.num_ues(), real.num_zones(), real.n);
    let steer: Vec<DMatrix<Complex64>> = (0..m_aps)
        .map(|m| DMatrix::from_fn(n, l_zones, |i, l| array_response(real.theta[(m, l)], n)[i]))
        .collect();
    let base = rng.gen::<u64>();

    #[derive(Clone)]
    struct Acc {
        ds: Vec<Complex64>,
        ds_sq: Vec<f64>,
        iui: Vec<f64>,
        ir: Vec<f64>,
    }
    let chunks = chunked(num_draws, base, |rng, draws| -> Result<Acc, MetricsError> {
        let mut acc = Acc {
            ds: vec![Complex64::new(0.0, 0.0); k_ues],
            ds_sq: vec![0.0; k_ues],
            iui: vec![0.0; k_ues],
            ir: vec![0.0; k_ues],
        };
        for _ in 0..draws {
            let ch = draw_channels(real, rng);
            let prec = build_precoders(&ch.g_hat, grouping, &real.gamma)?;
            let mut eff = DMatrix::<Complex64>::zeros(k_ues, k_ues);
            let mut ir = vec![0.0; k_ues];
            for m in 0..m_aps {
                let a = alloc.a[m];
                if a > 0.0 {
                    let mut gt = ch.g[m].adjoint() * &prec.t[m];
                    for kp in 0..k_ues {
                        let s = (real.rho * a * alloc.eta_c[(m, kp)]).sqrt();
                        gt.column_mut(kp).scale_mut(s);
                    }
                    eff += gt;
                }
                if a < 1.0 {
                    let ga = ch.g[m].adjoint() * &steer[m];
                    for k in 0..k_ues {
                        for l in 0..l_zones {
                            ir[k] += real.rho * (1.0 - a) * alloc.eta_s[(m, l)] * ga[(k, l)].norm_sqr();
                        }
                    }
                }
            }
            for k in 0..k_ues {
                acc.ds[k] += eff[(k, k)];
                acc.ds_sq[k] += eff[(k, k)].norm_sqr();
                acc.iui[k] += (0..k_ues).filter(|&kp| kp != k).map(|kp| eff[(k, kp)].norm_sqr()).sum::<f64>();
                acc.ir[k] += ir[k];
            }
        }
        Ok(acc)
    });
    let mut total = Acc {
        ds: vec![Complex64::new(0.0, 0.0); k_ues],
        ds_sq: vec![0.0; k_ues],
        iui: vec![0.0; k_ues],
        ir: vec![0.0; k_ues],
    };
    for c in chunks {
        let c = c?;
        for k in 0..k_ues {
            total.ds[k] += c.ds[k];
            total.ds_sq[k] += c.ds_sq[k];
            total.iui[k] += c.iui[k];
            total.ir[k] += c.ir[k];
        }
    }
    let d = num_draws as f64;
    Ok(DVector::from_fn(k_ues, |k, _| {
        let ds = total.ds[k] / d;
        let bu = (total.ds_sq[k] / d - ds.norm_sqr()).max(0.0);
        ds.norm_sqr() / (bu + total.iui[k] / d + total.ir[k] / d + 1.0)
    }))
}

/// Monte-Carlo `E|sum_m a(theta_m)^H x_m|^2` with QPSK symbols of power
/// `symbol_power`, averaged over fading and symbols.
pub fn mc_beampattern_oracle<R: Rng + ?Sized>(
    real: &NetworkRealization,
    grouping: &Grouping,
    alloc: &AllocationState,
    theta: &[f64],
    symbol_power: f64,
    num_draws: usize,
    rng: &mut R,
) -> Result<f64, MetricsError> {
    check_shapes(real, alloc)?;
    let (m_aps, k_ues, l_zones, n) = (real.num_aps(), real.num_ues(), real.num_zones(), real.n);
    let look: Vec<DVector<Complex64>> = theta.iter().map(|&th| array_response(th, n)).collect();
    // a(theta_m)^H a(theta_ml) for every AP and zone.
    let sen_gain: Vec<Vec<Complex64>> = (0..m_aps)
        .map(|m| (0..l_zones).map(|l| look[m].dotc(&array_response(real.theta[(m, l)], n))).collect())
        .collect();
    let amp = symbol_power.sqrt() / std::f64::consts::SQRT_2;
    let qpsk = move |rng: &mut ChaCha8Rng| {
        let re = if rng.gen::<bool>() { amp } else { -amp };
        let im = if rng.gen::<bool>() { amp } else { -amp };
        Complex64::new(re, im)
    };
    let base = rng.gen::<u64>();
    let chunks = chunked(num_draws, base, |rng, draws| -> Result<f64, MetricsError> {
        let mut sum = 0.0;
        for _ in 0..draws {
            let ch = draw_channels(real, rng);
            let prec = build_precoders(&ch.g_hat, grouping, &real.gamma)?;
            let xc: Vec<Complex64> = (0..k_ues).map(|_| qpsk(rng)).collect();
            let mut y = Complex64::new(0.0, 0.0);
            for m in 0..m_aps {
                let a = alloc.a[m];
                if a > 0.0 {
                    let proj = prec.t[m].adjoint() * &look[m];
                    for k in 0..k_ues {
                        let s = (real.rho * a * alloc.eta_c[(m, k)]).sqrt();
                        y += proj[k].conj() * s * xc[k];
                    }
                }
                if a < 1.0 {
                    for l in 0..l_zones {
                        let s = (real.rho * (1.0 - a) * alloc.eta_s[(m, l)]).sqrt();
                        y += sen_gain[m][l] * s * qpsk(rng);
                    }
                }
            }
            sum += y.norm_sqr();
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for c in chunks {
        total += c?;
    }
    Ok(total / num_draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precoding::pzf_grouping;

    fn toy(beta: &[f64], m: usize, k: usize, n: usize) -> NetworkRealization {
        let beta = DMatrix::from_row_slice(m, k, beta);
        let theta = DMatrix::from_fn(m, 2, |i, l| 0.3 * i as f64 - 0.7 * l as f64);
        NetworkRealization::from_coefficients(n, beta, theta, 5.0, 3.0, 200, 6)
    }

    #[test]
    fn se_examples() {
        assert!((se_from_sinr(3.0, 200, 6) - 1.94).abs() < 1e-12);
        assert_eq!(se_from_sinr(0.0, 200, 6), 0.0);
        assert_eq!(se_from_sinr(10.0, 200, 200), 0.0);
    }

    #[test]
    fn zero_power_gives_zero_sinr() {
        let real = toy(&[1.0, 0.5, 0.2, 0.8], 2, 2, 4);
        let g = pzf_grouping(&real.beta, 85.0, 4);
        let mut alloc = AllocationState::zeros(2, 2, 2);
        alloc.a.fill(1.0);
        let s = sinr_closed_form(&real, &g, &alloc).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_strong_ue_formula() {
        let real = toy(&[0.9], 1, 1, 4);
        let g = Grouping::all_strong(1, 1, 4).unwrap();
        let mut alloc = AllocationState::zeros(1, 1, 2);
        alloc.a[0] = 1.0;
        alloc.eta_c[(0, 0)] = 0.2;
        let (rho, b, gm, n) = (real.rho, 0.9, real.gamma[(0, 0)], 4.0);
        let expect = rho * 0.2 * gm * gm / (rho * 0.2 * gm * (b - gm) / (n - 1.0) + 1.0);
        let s = sinr_closed_form(&real, &g, &alloc).unwrap();
        assert!((s[0] / expect - 1.0).abs() < 1e-13);
    }

    #[test]
    fn masr_edge_cases() {
        let real = toy(&[1.0, 0.5], 2, 1, 4);
        let g = Grouping::all_weak(2, 1, 4);
        let mut alloc = AllocationState::zeros(2, 1, 2);
        alloc.eta_s.fill(0.1);
        let mut single = real.clone();
        single.theta = single.theta.columns(0, 1).into_owned();
        let mut a1 = AllocationState::zeros(2, 1, 1);
        a1.eta_s.fill(0.1);
        let (v, f) = masr(&single, &g, &a1, 5.0).unwrap();
        assert!(v[0].is_infinite() && f[0]);

        alloc.a.fill(1.0);
        alloc.eta_c.fill(0.1);
        let (v, f) = masr(&real, &g, &alloc, 2.0).unwrap();
        assert!(v.iter().all(|&x| x == 0.0) && f.iter().all(|&x| !x));
    }
}
