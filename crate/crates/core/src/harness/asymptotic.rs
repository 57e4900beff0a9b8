//! Interference-to-desired power ratio at a reference UE as the network
//! grows, under MR precoding and equal power with the transmit power scaled
//! down by the array gain.
//!
//! Large-scale gains are treated as known: within each drop the received
//! signal of UE 0 is split into its mean over fading, the desired part, and
//! everything else, the interference. Both powers are then averaged over
//! drops. Growing the AP count reuses nested prefixes
//! of one large drop, so every size sees the same geometry and the same
//! fading samples.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::channel::{array_response, draw_channels};
use crate::model::{child_seed, NetworkConfig, NetworkRealization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AsymptoticCase {
    /// More APs at fixed N, with `rho = E / M_c^2`.
    #[serde(rename = "I")]
    ApScaling,
    /// More antennas at fixed M, with `rho = E / N`.
    #[serde(rename = "II")]
    AntennaScaling,
}

impl AsymptoticCase {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Some(Self::ApScaling),
            "II" | "2" => Some(Self::AntennaScaling),
            _ => None,
        }
    }

    pub fn default_sizes(self) -> Vec<usize> {
        match self {
            Self::ApScaling => vec![16, 32, 64, 128],
            Self::AntennaScaling => vec![16, 64, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticOptions {
    /// Power budget `E` (normalized by the noise power).
    pub energy: f64,
    /// AP counts (case I) or antenna counts (case II), strictly increasing.
    pub sizes: Vec<usize>,
    /// Independent drops averaged over.
    pub geometries: usize,
    /// Small-scale fading draws per drop.
    pub draws: usize,
    /// Ratio `c = M_c / M_s` of communication to sensing APs.
    pub comm_ratio: f64,
    pub seed: u64,
}

impl AsymptoticOptions {
    pub fn new(case: AsymptoticCase, config: &NetworkConfig) -> Self {
        Self {
            energy: config.rho(),
            sizes: case.default_sizes(),
            geometries: 20,
            draws: 200,
            comm_ratio: 1.0,
            seed: config.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub size: usize,
    pub m_c: usize,
    pub m_s: usize,
    pub n: usize,
    /// `|E{DS}|^2` over fading, averaged over drops.
    pub desired: f64,
    /// Fluctuation of DS around its fading mean plus inter-user and sensing
    /// interference power, averaged over drops.
    pub interference: f64,
    pub ratio: f64,
    /// `desired / (interference + 1)`.
    pub sinr: f64,
}

/// AP `i` serves UEs when the running share of communication APs crosses an
/// integer, which interleaves the modes at ratio `c` along any prefix.
fn is_comm(i: usize, c: f64) -> bool {
    let f = c / (1.0 + c);
    ((i + 1) as f64 * f).floor() > (i as f64 * f).floor()
}

#[derive(Debug, Clone, Default)]
struct Moments {
    ds: Complex64,
    ds_sq: f64,
    iui: f64,
    ir: f64,
}

/// Per-AP terms of one fading draw for UE 0, before the `sqrt(rho)` scaling:
/// `g_m0^H ghat_mk' sqrt(eta_c)` for every k' and the sensing power
/// `sum_l eta_s |g_m0^H a_ml|^2`.
fn per_ap_terms(real: &NetworkRealization, rng: &mut ChaCha8Rng, steer: &[DMatrix<Complex64>]) -> (Vec<Vec<Complex64>>, Vec<f64>) {
    let (m_aps, k_ues, l_zones) = (real.num_aps(), real.num_ues(), real.num_zones());
    let nf = real.n as f64;
    let ch = draw_channels(real, rng);
    let mut com = Vec::with_capacity(m_aps);
    let mut sen = Vec::with_capacity(m_aps);
    for m in 0..m_aps {
        let g0 = ch.g[m].column(0);
        let eta_c = 1.0 / (nf * real.gamma.row(m).sum());
        com.push((0..k_ues).map(|k| g0.dotc(&ch.g_hat[m].column(k)) * eta_c.sqrt()).collect());
        let eta_s = 1.0 / (nf * l_zones as f64);
        sen.push((0..l_zones).map(|l| eta_s * g0.dotc(&steer[m].column(l)).norm_sqr()).sum());
    }
    (com, sen)
}

fn steering(real: &NetworkRealization) -> Vec<DMatrix<Complex64>> {
    (0..real.num_aps())
        .map(|m| {
            let cols: Vec<_> = (0..real.num_zones()).map(|l| array_response(real.theta[(m, l)], real.n)).collect();
            DMatrix::from_columns(&cols)
        })
        .collect()
}

/// Accumulates the moments of the received-signal terms over the first
/// `m_aps` APs at power `rho`.
fn accumulate(acc: &mut Moments, com: &[Vec<Complex64>], sen: &[f64], m_aps: usize, c: f64, rho: f64) {
    let k_ues = com.first().map_or(0, Vec::len);
    let mut eff = vec![Complex64::new(0.0, 0.0); k_ues];
    let mut ir = 0.0;
    for m in 0..m_aps {
        if is_comm(m, c) {
            for (e, v) in eff.iter_mut().zip(&com[m]) {
                *e += v;
            }
        } else {
            ir += sen[m];
        }
    }
    let s = rho.sqrt();
    acc.ds += eff[0] * s;
    acc.ds_sq += rho * eff[0].norm_sqr();
    acc.iui += rho * eff.iter().skip(1).map(|e| e.norm_sqr()).sum::<f64>();
    acc.ir += rho * ir;
}

/// Monte-Carlo interference-to-desired ratio at UE 0 for each size.
pub fn asymptotic_sweep(
    case: AsymptoticCase,
    config: &NetworkConfig,
    opts: &AsymptoticOptions,
) -> Result<Vec<AsymptoticRow>, HarnessError> {
    let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
    if opts.sizes.is_empty() || opts.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return bad("sizes must be non-empty and strictly increasing".into());
    }
    if opts.geometries == 0 || opts.draws == 0 {
        return bad("geometries and draws must be >= 1".into());
    }
    if !(opts.comm_ratio > 0.0 && opts.comm_ratio.is_finite()) || !(opts.energy > 0.0) {
        return bad("comm_ratio and energy must be positive".into());
    }
    let c = opts.comm_ratio;
    let count_comm = |m: usize| (0..m).filter(|&i| is_comm(i, c)).count();
    let (base_cfg, shapes): (NetworkConfig, Vec<(usize, usize)>) = match case {
        AsymptoticCase::ApScaling => {
            let cfg = NetworkConfig { m: *opts.sizes.last().unwrap(), ..config.clone() };
            (cfg, opts.sizes.iter().map(|&m| (m, config.n)).collect())
        }
        AsymptoticCase::AntennaScaling => (config.clone(), opts.sizes.iter().map(|&n| (config.m, n)).collect()),
    };
    base_cfg.validate()?;
    for &(m, _) in &shapes {
        if count_comm(m) == 0 || count_comm(m) == m {
            return bad(format!("M = {m} leaves no communication or no sensing AP at c = {c}"));
        }
    }
    let rho_at = |m: usize, n: usize| match case {
        AsymptoticCase::ApScaling => opts.energy / (count_comm(m) as f64).powi(2),
        AsymptoticCase::AntennaScaling => opts.energy / n as f64,
    };

    let per_geometry: Vec<Vec<Moments>> = (0..opts.geometries as u64)
        .into_par_iter()
        .map(|g| -> Result<Vec<Moments>, HarnessError> {
            let seed = child_seed(opts.seed, g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let real = NetworkRealization::generate(&base_cfg, &mut rng)?;
            let mut out = vec![Moments::default(); shapes.len()];
            match case {
                AsymptoticCase::ApScaling => {
                    let steer = steering(&real);
                    for _ in 0..opts.draws {
                        let (com, sen) = per_ap_terms(&real, &mut rng, &steer);
                        for (acc, &(m, n)) in out.iter_mut().zip(&shapes) {
                            accumulate(acc, &com, &sen, m, c, rho_at(m, n));
                        }
                    }
                }
                AsymptoticCase::AntennaScaling => {
                    for (acc, &(m, n)) in out.iter_mut().zip(&shapes) {
                        let sized = NetworkRealization { n, ..real.clone() };
                        let steer = steering(&sized);
                        for _ in 0..opts.draws {
                            let (com, sen) = per_ap_terms(&sized, &mut rng, &steer);
                            accumulate(acc, &com, &sen, m, c, rho_at(m, n));
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let d = opts.draws as f64;
    let gcount = opts.geometries as f64;
    Ok(shapes
        .iter()
        .enumerate()
        .map(|(i, &(m, n))| {
            let mut desired = 0.0;
            let mut interference = 0.0;
            for geo in &per_geometry {
                let mo = &geo[i];
                let ds = mo.ds / d;
                desired += ds.norm_sqr();
                interference += (mo.ds_sq / d - ds.norm_sqr()).max(0.0) + mo.iui / d + mo.ir / d;
            }
            desired /= gcount;
            interference /= gcount;
            let m_c = count_comm(m);
            AsymptoticRow {
                size: if case == AsymptoticCase::ApScaling { m } else { n },
                m_c,
                m_s: m - m_c,
                n,
                desired,
                interference,
                ratio: interference / desired,
                sinr: desired / (interference + 1.0),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_modes_keep_ratio() {
        let count = |m: usize, c: f64| (0..m).filter(|&i| is_comm(i, c)).count();
        assert_eq!(count(16, 1.0), 8);
        assert_eq!(count(128, 1.0), 64);
        assert_eq!(count(12, 2.0), 8);
        assert_eq!(count(12, 0.5), 4);
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = NetworkConfig::default();
        let mut o = AsymptoticOptions::new(AsymptoticCase::ApScaling, &cfg);
        o.sizes = vec![32, 16];
        assert!(asymptotic_sweep(AsymptoticCase::ApScaling, &cfg, &o).is_err());
    }
}
