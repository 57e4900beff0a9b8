//! Network configuration, geometry and large-scale propagation.
//!
//! Everything downstream consumes a [`NetworkRealization`]: one drop of APs,
//! UEs and sensing zones on a wrapped square, with the large-scale gains and
//! MMSE estimate variances that the closed-form analysis depends on.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::mmse_gamma;

/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.381e-23;
/// Noise temperature in kelvin.
pub const NOISE_TEMPERATURE_K: f64 = 290.0;
/// Floor on the horizontal AP-UE distance in meters.
pub const MIN_HORIZONTAL_DISTANCE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
}

/// Network and algorithm parameters for one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub area_side: f64,
    pub zone_height: f64,
    pub ap_height: f64,
    pub ue_height: f64,
    pub tau: usize,
    /// Training length; `None` means K + L.
    pub tau_t: Option<usize>,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub max_power_w: f64,
    pub pilot_power_w: f64,
    pub shadow_std_db: f64,
    pub varrho_percent: f64,
    pub kappa_db: f64,
    pub lambda_penalty: f64,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            m: 30,
            n: 16,
            k: 4,
            l: 2,
            area_side: 500.0,
            zone_height: 30.0,
            ap_height: 10.0,
            ue_height: 1.5,
            tau: 200,
            tau_t: None,
            bandwidth_hz: 50e6,
            noise_figure_db: 9.0,
            max_power_w: 1.0,
            pilot_power_w: 0.25,
            shadow_std_db: 4.0,
            varrho_percent: 85.0,
            kappa_db: 8.0,
            lambda_penalty: 10.0,
            rng_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn tau_t(&self) -> usize {
        self.tau_t.unwrap_or(self.k + self.l)
    }

    pub fn kappa_linear(&self) -> f64 {
        db_to_linear(self.kappa_db)
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(self.bandwidth_hz, self.noise_figure_db)
    }

    /// Maximum AP transmit power normalized by the noise power.
    pub fn rho(&self) -> f64 {
        self.max_power_w / self.noise_power()
    }

    /// Pilot power normalized by the noise power.
    pub fn rho_t(&self) -> f64 {
        self.pilot_power_w / self.noise_power()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.m == 0 || self.n == 0 || self.k == 0 || self.l == 0 {
            return bad(format!(
                "M, N, K, L must be >= 1 (got {}, {}, {}, {})",
                self.m, self.n, self.k, self.l
            ));
        }
        let tau_t = self.tau_t();
        if tau_t < self.k {
            return bad(format!("tau_t = {tau_t} must be >= K = {}", self.k));
        }
        if tau_t >= self.tau {
            return bad(format!("tau_t = {tau_t} must be < tau = {}", self.tau));
        }
        for (name, v) in [
            ("area_side", self.area_side),
            ("bandwidth_hz", self.bandwidth_hz),
            ("max_power_w", self.max_power_w),
            ("pilot_power_w", self.pilot_power_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite (got {v})"));
            }
        }
        if !(0.0..=100.0).contains(&self.varrho_percent) {
            return bad(format!("varrho_percent must lie in [0, 100] (got {})", self.varrho_percent));
        }
        if !(self.shadow_std_db >= 0.0) {
            return bad(format!("shadow_std_db must be >= 0 (got {})", self.shadow_std_db));
        }
        if !self.kappa_db.is_finite() || !self.noise_figure_db.is_finite() {
            return bad("kappa_db and noise_figure_db must be finite".into());
        }
        Ok(())
    }

    /// Reads the `[network]` table of a TOML file.
    pub fn from_toml_file(path: &Path) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            network: NetworkConfig,
        }
        let text = read_config_text(path)?;
        let file: File = toml::from_str(&text).map_err(|e| ModelError::Parse(e.to_string()))?;
        file.network.validate()?;
        Ok(file.network)
    }
}

pub(crate) fn read_config_text(path: &Path) -> Result<String, ModelError> {
    if !path.exists() {
        return Err(ModelError::FileNotFound(path.display().to_string()));
    }
    Ok(std::fs::read_to_string(path)?)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Seed of the `index`-th child stream of `base` (splitmix64 finalizer).
pub fn child_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A point in the deployment area; `z` is the height above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

fn wrap_delta(d: f64, side: f64) -> f64 {
    let d = d.rem_euclid(side);
    if d > side / 2.0 {
        d - side
    } else {
        d
    }
}

/// Horizontal displacement from `from` to `to` on the torus, each axis in
/// `(-side/2, side/2]`.
pub fn wrapped_displacement(from: Position, to: Position, area_side: f64) -> (f64, f64) {
    (
        wrap_delta(to.x - from.x, area_side),
        wrap_delta(to.y - from.y, area_side),
    )
}

pub fn wrap_horizontal_distance(p1: Position, p2: Position, area_side: f64) -> f64 {
    let (dx, dy) = wrapped_displacement(p1, p2, area_side);
    dx.hypot(dy)
}

/// Torus distance in the plane combined with the plain height difference.
pub fn wrap_distance(p1: Position, p2: Position, area_side: f64) -> f64 {
    wrap_horizontal_distance(p1, p2, area_side).hypot(p1.z - p2.z)
}

/// Large-scale gain `10^((-30.5 - 36.7 log10 d + shadow)/10)`.
pub fn pathloss_beta(distance: f64, shadow_db: f64) -> Result<f64, ModelError> {
    if !(distance > 0.0) {
        return Err(ModelError::DegenerateGeometry(format!(
            "path loss needs a positive distance, got {distance}"
        )));
    }
    Ok(db_to_linear(-30.5 - 36.7 * distance.log10() + shadow_db))
}

/// Azimuth of the wrapped displacement from the AP to the zone, in `(-pi, pi]`.
pub fn aod_angle(ap: Position, zone: Position, area_side: f64) -> Result<f64, ModelError> {
    let (dx, dy) = wrapped_displacement(ap, zone, area_side);
    if dx == 0.0 && dy == 0.0 {
        return Err(ModelError::DegenerateGeometry(
            "AP and zone share a horizontal position".into(),
        ));
    }
    let th = dy.atan2(dx);
    Ok(if th <= -PI { th + 2.0 * PI } else { th })
}

/// Thermal noise power `k_B T_0 B F` in watts.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    BOLTZMANN * NOISE_TEMPERATURE_K * bandwidth_hz * db_to_linear(noise_figure_db)
}

/// One network drop: geometry and every large-scale quantity derived from it.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub n: usize,
    pub tau: usize,
    pub tau_t: usize,
    pub ap_positions: Vec<Position>,
    pub ue_positions: Vec<Position>,
    pub zone_positions: Vec<Position>,
    /// M x K large-scale gains.
    pub beta: DMatrix<f64>,
    /// M x L sensing-path gains.
    pub zeta: DMatrix<f64>,
    /// M x L angles of departure.
    pub theta: DMatrix<f64>,
    /// M x K MMSE estimate variances.
    pub gamma: DMatrix<f64>,
    pub rho: f64,
    pub rho_t: f64,
}

impl NetworkRealization {
    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.beta.ncols()
    }

    pub fn num_zones(&self) -> usize {
        self.theta.ncols()
    }

    /// Draws positions uniformly on the square and evaluates all
    /// large-scale coefficients.
    pub fn generate<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let side = cfg.area_side;
        let place = |count: usize, z: f64, rng: &mut R| -> Vec<Position> {
            (0..count)
                .map(|_| Position::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side), z))
                .collect()
        };
        let aps = place(cfg.m, cfg.ap_height, rng);
        let ues = place(cfg.k, cfg.ue_height, rng);
        let zones = place(cfg.l, cfg.zone_height, rng);
        let shadow = Normal::new(0.0, cfg.shadow_std_db)
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;

        let beta = DMatrix::from_fn(cfg.m, cfg.k, |m, k| {
            let dh = wrap_horizontal_distance(aps[m], ues[k], side).max(MIN_HORIZONTAL_DISTANCE);
            let d = dh.hypot(aps[m].z - ues[k].z);
            pathloss_beta(d, shadow.sample(rng)).expect("distance floored above zero")
        });
        let mut zeta = DMatrix::zeros(cfg.m, cfg.l);
        let mut theta = DMatrix::zeros(cfg.m, cfg.l);
        for m in 0..cfg.m {
            for l in 0..cfg.l {
                zeta[(m, l)] = pathloss_beta(wrap_distance(aps[m], zones[l], side), 0.0)?;
                theta[(m, l)] = aod_angle(aps[m], zones[l], side)?;
            }
        }
        let rho_t = cfg.rho_t();
        let tau_t = cfg.tau_t();
        let gamma = beta.map(|b| mmse_gamma(b, tau_t, rho_t));
        Ok(Self {
            n: cfg.n,
            tau: cfg.tau,
            tau_t,
            ap_positions: aps,
            ue_positions: ues,
            zone_positions: zones,
            beta,
            zeta,
            theta,
            gamma,
            rho: cfg.rho(),
            rho_t,
        })
    }

    /// Builds a realization directly from large-scale coefficients, with
    /// `gamma` computed from `beta`. Positions are left empty.
    #[allow(clippy::too_many_arguments)]
    pub fn from_coefficients(
        n: usize,
        beta: DMatrix<f64>,
        theta: DMatrix<f64>,
        rho: f64,
        rho_t: f64,
        tau: usize,
        tau_t: usize,
    ) -> Self {
        let gamma = beta.map(|b| mmse_gamma(b, tau_t, rho_t));
        let zeta = DMatrix::from_element(theta.nrows(), theta.ncols(), 1.0);
        Self {
            n,
            tau,
            tau_t,
            ap_positions: Vec::new(),
            ue_positions: Vec::new(),
            zone_positions: Vec::new(),
            beta,
            zeta,
            theta,
            gamma,
            rho,
            rho_t,
        }
    }
}

/// AP modes and power-control coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    /// Mode per AP, 1 for communication and 0 for sensing.
    pub a: DVector<f64>,
    /// M x K communication power coefficients.
    pub eta_c: DMatrix<f64>,
    /// M x L sensing power coefficients.
    pub eta_s: DMatrix<f64>,
    /// Fairness value (minimum SINR) attached by the optimizer.
    pub t: f64,
}

impl AllocationState {
    pub fn zeros(m: usize, k: usize, l: usize) -> Self {
        Self {
            a: DVector::zeros(m),
            eta_c: DMatrix::zeros(m, k),
            eta_s: DMatrix::zeros(m, l),
            t: 0.0,
        }
    }

    /// Largest violation of the per-AP power constraints given `nu`.
    pub fn power_violation(&self, gamma: &DMatrix<f64>, nu: &DMatrix<f64>, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.a.len() {
            let com: f64 = (0..self.eta_c.ncols())
                .map(|k| self.eta_c[(m, k)] * gamma[(m, k)] * nu[(m, k)])
                .sum();
            let sen: f64 = self.eta_s.row(m).sum();
            worst = worst
                .max(com - self.a[m])
                .max(sen - (1.0 - self.a[m]) / n as f64);
        }
        worst
    }

    pub fn is_binary(&self, tol: f64) -> bool {
        self.a.iter().all(|&a| a.abs() <= tol || (a - 1.0).abs() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64) -> Position {
        Position::new(x, y, z)
    }

    #[test]
    fn wrap_distance_examples() {
        assert_eq!(wrap_distance(p(0., 0., 0.), p(0., 0., 0.), 500.), 0.0);
        assert!((wrap_distance(p(10., 0., 0.), p(490., 0., 0.), 500.) - 20.0).abs() < 1e-12);
        assert!((wrap_distance(p(0., 0., 0.), p(0., 0., 30.), 500.) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn pathloss_examples() {
        let b1 = pathloss_beta(1.0, 0.0).unwrap();
        assert!((b1 - 8.912509381337459e-4).abs() < 1e-15);
        let b10 = pathloss_beta(10.0, 0.0).unwrap();
        assert!((b10 / 10f64.powf(-6.72) - 1.0).abs() < 1e-12);
        let b10s = pathloss_beta(10.0, 36.7).unwrap();
        assert!((b10s / b1 - 1.0).abs() < 1e-12);
        assert!(pathloss_beta(0.0, 0.0).is_err());
    }

    #[test]
    fn aod_examples() {
        let o = p(0., 0., 10.);
        assert_eq!(aod_angle(o, p(1., 0., 30.), 500.).unwrap(), 0.0);
        assert!((aod_angle(o, p(0., 1., 30.), 500.).unwrap() - PI / 2.0).abs() < 1e-15);
        // (-1,-1) wraps to (499, 499) in coordinates but the displacement is (-1,-1).
        assert!((aod_angle(o, p(499., 499., 30.), 500.).unwrap() + 3.0 * PI / 4.0).abs() < 1e-12);
        assert!(aod_angle(o, p(0., 0., 30.), 500.).is_err());
        assert_eq!(aod_angle(o, p(-1., 0., 30.), 500.).unwrap(), PI);
    }

    #[test]
    fn noise_examples() {
        let n9 = noise_power(50e6, 9.0);
        let independent = 1.381e-23 * 290.0 * 50e6 * 10f64.powf(0.9);
        assert!((n9 - independent).abs() < 1e-25);
        assert!((n9 - 1.59e-12).abs() < 0.01e-12);
        assert!((noise_power(50e6, 0.0) - 2.0025e-13).abs() < 1e-17);
        assert!((noise_power(100e6, 9.0) / n9 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_short_training() {
        let cfg = NetworkConfig { tau_t: Some(2), ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig { tau_t: Some(200), ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(NetworkConfig::default().validate().is_ok());
        assert_eq!(NetworkConfig::default().tau_t(), 6);
    }

    #[test]
    fn generated_realization_invariants() {
        let cfg = NetworkConfig { m: 12, n: 4, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = NetworkRealization::generate(&cfg, &mut rng).unwrap();
        assert_eq!(r.beta.shape(), (12, 4));
        assert_eq!(r.theta.shape(), (12, 2));
        for (b, g) in r.beta.iter().zip(r.gamma.iter()) {
            assert!(*b > 0.0 && *g > 0.0 && g < b);
        }
        assert!(r.zeta.iter().all(|z| *z > 0.0));
        assert!(r.theta.iter().all(|t| *t > -PI && *t <= PI));
        assert!(r.rho > 0.0 && r.rho_t > 0.0);
    }
}
